#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signscore::synth::{generate_reference, GestureSpec};
use signscore::{MotionSequence, Quaternion, Skeleton};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform random unit quaternion (Shoemake).
pub fn random_quat(rng: &mut impl Rng) -> Quaternion {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    Quaternion::new(a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos()).unwrap()
}

pub fn random_vec(rng: &mut impl Rng, scale: f64) -> [f64; 3] {
    [
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    ]
}

pub fn gesture(skel: &Skeleton, seed: u64) -> MotionSequence {
    let spec = GestureSpec::random(skel, 4, (10, 16), 30.0, seed).unwrap();
    generate_reference(&spec).unwrap()
}

/// Row-major 3×3 rotation matrix of an axis-angle vector (Rodrigues).
pub fn rodrigues(v: [f64; 3]) -> [[f64; 3]; 3] {
    let th = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if th == 0.0 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = [v[0] / th, v[1] / th, v[2] / th];
    let (s, c) = th.sin_cos();
    let t = 1.0 - c;
    [
        [c + k[0] * k[0] * t, k[0] * k[1] * t - k[2] * s, k[0] * k[2] * t + k[1] * s],
        [k[1] * k[0] * t + k[2] * s, c + k[1] * k[1] * t, k[1] * k[2] * t - k[0] * s],
        [k[2] * k[0] * t - k[1] * s, k[2] * k[1] * t + k[0] * s, c + k[2] * k[2] * t],
    ]
}

/// Rotation matrix from quaternion components, written out longhand.
pub fn quat_matrix(q: Quaternion) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q.to_array();
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn mat_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(a: [[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

pub fn mat_diff(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Relative error between an analytic and a central-difference derivative.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst relative error over `indices` for a scalar function of a flat parameter vector.
pub fn fd_check(f: impl Fn(&[f64]) -> f64, params: &[f64], analytic: &[f64], indices: &[usize]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for &i in indices {
        let x = p[i];
        p[i] = x + FD_STEP;
        let up = f(&p);
        p[i] = x - FD_STEP;
        let down = f(&p);
        p[i] = x;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// `count` distinct indices below `n`, or all of them when `n ≤ count`.
pub fn sample_indices(rng: &mut impl Rng, n: usize, count: usize) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    rand::seq::index::sample(rng, n, count).into_vec()
}
