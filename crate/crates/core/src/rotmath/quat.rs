//! Unit quaternions, axis-angle vectors and the log/exp maps between them.
//!
//! Convention: Hamilton product, scalar part first (`w, x, y, z`), right-handed
//! frames. A quaternion `(cos θ, sin θ·n̂)` rotates by `2θ` about `n̂`, so the
//! magnitude of its log map is half the rotation angle.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this angle the trig ratios switch to their Taylor series.
const SERIES_ANGLE: f64 = 1e-4;

/// `w` above this value takes the series branch of the log map.
const LOG_SERIES_W: f64 = 1.0 - 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Rotation vector: unit axis scaled by the rotation angle in radians.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AxisAngle {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl AxisAngle {
    pub const fn new(rx: f64, ry: f64, rz: f64) -> Self {
        AxisAngle { rx, ry, rz }
    }

    pub fn angle(self) -> f64 {
        self.as_vec().norm()
    }

    pub fn as_vec(self) -> Vec3 {
        Vec3::new(self.rx, self.ry, self.rz)
    }
}

impl From<Vec3> for AxisAngle {
    fn from(v: Vec3) -> Self {
        AxisAngle::new(v.x, v.y, v.z)
    }
}

/// A unit quaternion. Every constructor normalizes, so `|q| = 1` within 1e-9.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes the given components. Fails on zero or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        if !(w.is_finite() && x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::validation(format!(
                "quaternion components must be finite, got ({w}, {x}, {y}, {z})"
            )));
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n == 0.0 {
            return Err(Error::validation("cannot normalize the zero quaternion"));
        }
        if (n - 1.0).abs() <= f64::EPSILON {
            return Ok(Quaternion { w, x, y, z });
        }
        Ok(Quaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self> {
        Quaternion::new(c[0], c[1], c[2], c[3])
    }

    /// Renormalizes components that are already close to unit length.
    pub(crate) fn renormalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Quaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    fn vector(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(self, o: Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// The same rotation with `w ≥ 0`.
    pub fn canonical(self) -> Quaternion {
        if self.w < 0.0 || (self.w == 0.0 && self.is_negative_half_turn()) {
            -self
        } else {
            self
        }
    }

    // For w == 0 both signs are valid; pick the one whose first nonzero
    // vector component is positive.
    fn is_negative_half_turn(self) -> bool {
        for c in [self.x, self.y, self.z] {
            if c != 0.0 {
                return c < 0.0;
            }
        }
        false
    }

    pub fn conjugate(self) -> Quaternion {
        Quaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self · other` (apply `other` first, then `self`).
    pub fn compose(self, o: Quaternion) -> Quaternion {
        let (a, b) = (self, o);
        Quaternion::renormalized(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            // paired so that q · q⁻¹ has an exactly zero vector part
            (a.w * b.x + a.x * b.w) + (a.y * b.z - a.z * b.y),
            (a.w * b.y + a.y * b.w) + (a.z * b.x - a.x * b.z),
            (a.w * b.z + a.z * b.w) + (a.x * b.y - a.y * b.x),
        )
    }

    /// `q v q⁻¹` for a pure vector `v`.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = self.vector();
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(t)
    }

    /// `θ·n̂` for `q = (cos θ, sin θ·n̂)`. Canonical input gives `θ ≤ π/2`.
    pub fn log_map(self) -> Vec3 {
        let v = self.vector();
        let s = v.norm();
        if s == 0.0 {
            // -1 has no unique axis; report a half turn about x
            return if self.w >= 0.0 {
                Vec3::ZERO
            } else {
                Vec3::new(std::f64::consts::PI, 0.0, 0.0)
            };
        }
        let theta = s.atan2(self.w);
        let factor = if self.w > LOG_SERIES_W {
            // θ / sin θ
            let t2 = theta * theta;
            1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0
        } else {
            theta / s
        };
        v * factor
    }

    /// Inverse of [`Quaternion::log_map`].
    pub fn exp_map(v: Vec3) -> Quaternion {
        let theta = v.norm();
        let sinc = if theta < SERIES_ANGLE {
            let t2 = theta * theta;
            1.0 - t2 / 6.0 + t2 * t2 / 120.0
        } else {
            theta.sin() / theta
        };
        let u = v * sinc;
        Quaternion::renormalized(theta.cos(), u.x, u.y, u.z)
    }

    /// Rotation angle in radians between two rotations, in `[0, π]`.
    pub fn angle_to(self, o: Quaternion) -> f64 {
        2.0 * self.conjugate().compose(o).canonical().log_map().norm()
    }

    /// Canonical rotation vector (magnitude ≤ π).
    pub fn to_axis_angle(self) -> AxisAngle {
        (self.canonical().log_map() * 2.0).into()
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        Quaternion {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

impl fmt::Display for Quaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.w, self.x, self.y, self.z)
    }
}

/// Unit canonical quaternion for a rotation vector.
pub fn quat_from_axis_angle(aa: AxisAngle) -> Result<Quaternion> {
    let v = aa.as_vec();
    if !v.is_finite() {
        return Err(Error::validation(format!(
            "axis-angle must be finite, got ({}, {}, {})",
            aa.rx, aa.ry, aa.rz
        )));
    }
    Ok(Quaternion::exp_map(v * 0.5).canonical())
}

/// Normalizes raw components to a unit quaternion with `w ≥ 0`.
pub fn canonicalize(components: [f64; 4]) -> Result<Quaternion> {
    Ok(Quaternion::from_array(components)?.canonical())
}

pub fn compose(a: Quaternion, b: Quaternion) -> Quaternion {
    a.compose(b)
}

pub fn conjugate(q: Quaternion) -> Quaternion {
    q.conjugate()
}

pub fn log_map(q: Quaternion) -> Vec3 {
    q.log_map()
}

pub fn exp_map(v: Vec3) -> Quaternion {
    Quaternion::exp_map(v)
}

/// Geodesic interpolation along the shorter arc.
///
/// `b` is sign-flipped onto `a`'s hemisphere first, so an antipodal pair
/// (`b = −a`) is the same rotation and every `t` returns `a`.
pub fn slerp(a: Quaternion, b: Quaternion, t: f64) -> Quaternion {
    let b = if a.dot(b) < 0.0 { -b } else { b };
    let rel = a.conjugate().compose(b);
    if t == 0.0 {
        return a;
    }
    a.compose(Quaternion::exp_map(rel.log_map() * t))
}
