//! Rotation algebra and skeletal forward kinematics.

mod quat;
mod skeleton;

pub use quat::{
    canonicalize, compose, conjugate, exp_map, log_map, quat_from_axis_angle, slerp, AxisAngle,
    Quaternion, Vec3,
};
pub use skeleton::{
    forward_kinematics, topological_order, Joint, Skeleton, SKELETON_FORMAT_VERSION,
};
