//! Small fixed-size helpers shared by the 2-D modules.

use nalgebra::{Matrix2, Vector2};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &Mat2) -> f64 {
    (m[(0, 1)] - m[(1, 0)]).abs()
}

pub fn symmetrize(m: &Mat2) -> Mat2 {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues `(major, minor)` of a symmetric 2x2 matrix and the angle of the
/// major eigenvector in `[0, pi)`. A tie (isotropic matrix) reports angle 0.
pub fn sym_eigen(m: &Mat2) -> (f64, f64, f64) {
    let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let radius = half_diff.hypot(b);
    let mut theta = if b == 0.0 && half_diff >= 0.0 {
        0.0
    } else {
        0.5 * (2.0 * b).atan2(a - c)
    };
    if theta < 0.0 {
        theta += std::f64::consts::PI;
    }
    if theta >= std::f64::consts::PI {
        theta -= std::f64::consts::PI;
    }
    (mean + radius, mean - radius, theta)
}

pub fn rotation(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// Symmetrize, then clamp eigenvalues from below at `floor`.
pub fn floor_eigenvalues(m: &Mat2, floor: f64) -> Mat2 {
    let s = symmetrize(m);
    let (major, minor, theta) = sym_eigen(&s);
    if minor >= floor {
        return s;
    }
    let r = rotation(theta);
    r * Mat2::new(major.max(floor), 0.0, 0.0, minor.max(floor)) * r.transpose()
}

pub fn is_spd(m: &Mat2) -> bool {
    let (_, minor, _) = sym_eigen(m);
    asymmetry(m) <= 1e-12 * (1.0 + m.abs().max()) && minor > 0.0
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_two_pi(theta: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = theta.rem_euclid(tau);
    if w >= tau {
        0.0
    } else {
        w
    }
}

/// Signed angular difference folded into `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    if d > pi {
        d - std::f64::consts::TAU
    } else {
        d
    }
}

/// Angular difference modulo pi, folded into `[0, pi/2]`.
pub fn axis_angle_diff(a: f64, b: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let d = (a - b).rem_euclid(pi);
    d.min(pi - d)
}
