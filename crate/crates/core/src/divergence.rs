//! Gaussian KL divergence and the agent-to-component assignment cost.
//!
//! A service agent with relative weight `omega` and footprint variances
//! `(sigma_x, sigma_y)` placed at pose `(x, theta)` provides the scaled density
//! `omega * N(x, R(theta) diag(sigma_x, sigma_y) R(theta)^T)`. Its cost against
//! a mixture component `pi * N(mu, Sigma)` is the divergence between the two
//! scaled densities,
//!
//! ```text
//! C(x, theta) = pi * (ln(pi / omega) + KL(N(mu, Sigma) || N(x, Sigma(theta))))
//! ```
//!
//! which is minimized by sitting on the component mean with the footprint's
//! major axis aligned with the component's major axis.
//!
//! All `sigma` values here are variances (eigenvalues of the covariance), not
//! standard deviations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::gmm::{GaussianComponent, Mixture};
use crate::linalg::{asymmetry, rotation, sym_eigen, wrap_two_pi, Mat2, Vec2};
use crate::{Error, Result};

/// Service footprint of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceProfile {
    /// Scale constant of the agent's QoS density.
    pub scale: f64,
    /// `scale / sum(scale)` over all service agents.
    pub rel_weight: f64,
    /// Variance along the footprint's major axis.
    pub sigma_x: f64,
    /// Variance along the minor axis.
    pub sigma_y: f64,
}

impl ServiceProfile {
    pub fn new(scale: f64, rel_weight: f64, sigma_x: f64, sigma_y: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!("service scale {scale} must be positive")));
        }
        if !(rel_weight > 0.0 && rel_weight <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "relative weight {rel_weight} outside (0, 1]"
            )));
        }
        if !(sigma_y > 0.0 && sigma_x >= sigma_y && sigma_x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "footprint variances need sigma_x >= sigma_y > 0, got ({sigma_x}, {sigma_y})"
            )));
        }
        Ok(ServiceProfile {
            scale,
            rel_weight,
            sigma_x,
            sigma_y,
        })
    }

    /// Builds profiles from `(scale, sigma_x, sigma_y)` triples, normalizing the
    /// scales into relative weights.
    pub fn from_scales(shapes: &[(f64, f64, f64)]) -> Result<Vec<Self>> {
        let total: f64 = shapes.iter().map(|s| s.0).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("service scales must sum to a positive value".into()));
        }
        shapes
            .iter()
            .map(|&(z, sx, sy)| ServiceProfile::new(z, z / total, sx, sy))
            .collect()
    }

    pub fn axes(&self, heading: f64) -> AxisForm {
        AxisForm {
            sigma_major: self.sigma_x,
            sigma_minor: self.sigma_y,
            theta: heading,
        }
    }

    /// Footprint covariance when the agent faces `heading`.
    pub fn covariance(&self, heading: f64) -> Mat2 {
        cov_from_axes(&self.axes(heading))
    }
}

/// Principal-axis form of a 2x2 covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisForm {
    pub sigma_major: f64,
    pub sigma_minor: f64,
    /// Angle of the major axis.
    pub theta: f64,
}

/// Planar pose; the heading is kept in `[0, 2pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Pose {
            position,
            heading: wrap_two_pi(heading),
        }
    }
}

/// `KL(N(mean0, cov0) || N(mean1, cov1))` in two dimensions.
pub fn kld_gaussian(mean0: &Vec2, cov0: &Mat2, mean1: &Vec2, cov1: &Mat2) -> Result<f64> {
    let det0 = cov0.determinant();
    let det1 = cov1.determinant();
    if !(det1 > 0.0) {
        return Err(Error::SingularCovariance { det: det1 });
    }
    if !(det0 > 0.0) {
        return Err(Error::SingularCovariance { det: det0 });
    }
    let inv1 = cov1.try_inverse().ok_or(Error::SingularCovariance { det: det1 })?;
    let d = mean0 - mean1;
    let maha = (d.transpose() * inv1 * d)[(0, 0)];
    let trace = (inv1 * cov0).trace();
    let kl = 0.5 * ((det1 / det0).ln() + maha + trace - 2.0);
    // Rounding can leave a tiny negative value for equal inputs.
    Ok(kl.max(0.0))
}

/// `R(theta) diag(major, minor) R(theta)^T`.
pub fn cov_from_axes(a: &AxisForm) -> Mat2 {
    let r = rotation(a.theta);
    let m = r * Mat2::new(a.sigma_major, 0.0, 0.0, a.sigma_minor) * r.transpose();
    // Exactly symmetric.
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Mat2::new(m[(0, 0)], off, off, m[(1, 1)])
}

/// Eigen-decomposition with `theta` the major-axis angle in `[0, pi)`; an
/// isotropic matrix reports `theta = 0`.
pub fn axes_from_cov(s: &Mat2) -> Result<AxisForm> {
    let asym = asymmetry(s);
    if asym > 1e-9 {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let (major, minor, theta) = sym_eigen(s);
    if !(minor > 0.0) {
        return Err(Error::SingularCovariance { det: s.determinant() });
    }
    Ok(AxisForm {
        sigma_major: major,
        sigma_minor: minor,
        theta,
    })
}

/// Divergence between a weighted mixture component and an agent's weighted
/// footprint at `pose`. Negative whenever the agent's weight exceeds the
/// component's by enough.
pub fn cost_at_pose(profile: &ServiceProfile, pose: &Pose, basis: &GaussianComponent) -> Result<f64> {
    let kl = kld_gaussian(
        &basis.mean,
        &basis.cov,
        &pose.position,
        &profile.covariance(pose.heading),
    )?;
    Ok(weighted(basis.weight, profile.rel_weight, kl))
}

fn weighted(pi: f64, omega: f64, kl: f64) -> f64 {
    if pi == 0.0 {
        // pi * ln(pi) -> 0
        return 0.0;
    }
    pi * ((pi / omega).ln() + kl)
}

/// Closed-form minimizer of [`cost_at_pose`] and the minimal cost.
///
/// The position is the component mean and the heading is the component's
/// major-axis angle (the representative in `[0, pi)`; `heading + pi` is
/// equally optimal).
pub fn optimal_pose(profile: &ServiceProfile, basis: &GaussianComponent) -> Result<(Pose, f64)> {
    let axes = axes_from_cov(&basis.cov)?;
    let (sx, sy) = (profile.sigma_x, profile.sigma_y);
    let (kx, ky) = (axes.sigma_major, axes.sigma_minor);
    let kl = 0.5 * ((sx * sy / (kx * ky)).ln() + (kx * sy + ky * sx) / (sx * sy) - 2.0);
    let pose = Pose::new(basis.mean, axes.theta);
    Ok((pose, weighted(basis.weight, profile.rel_weight, kl)))
}

/// Row `i` holds agent `i`'s minimal costs against the components of its own
/// estimate `estimates[i]`.
pub fn cost_matrix(profiles: &[ServiceProfile], estimates: &[&Mixture]) -> Result<Vec<Vec<f64>>> {
    if profiles.len() != estimates.len() {
        return Err(Error::DimensionMismatch {
            expected: profiles.len(),
            found: estimates.len(),
        });
    }
    profiles
        .iter()
        .zip(estimates)
        .map(|(p, m)| {
            m.components()
                .iter()
                .map(|c| optimal_pose(p, c).map(|(_, cost)| cost))
                .collect()
        })
        .collect()
}

/// Heading samples helper shared by tests and benches.
pub fn heading_grid(steps: usize) -> impl Iterator<Item = f64> {
    (0..steps).map(move |s| PI * s as f64 / steps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(omega: f64, sx: f64, sy: f64) -> ServiceProfile {
        ServiceProfile::new(1.0, omega, sx, sy).unwrap()
    }

    #[test]
    fn kld_identity_and_shift() {
        let i = Mat2::identity();
        let z = Vec2::zeros();
        assert_eq!(kld_gaussian(&z, &i, &z, &i).unwrap(), 0.0);
        let kl = kld_gaussian(&z, &i, &Vec2::new(1.0, 0.0), &i).unwrap();
        assert!((kl - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kld_rejects_singular() {
        let s = Mat2::new(1.0, 1.0, 1.0, 1.0);
        assert!(kld_gaussian(&Vec2::zeros(), &Mat2::identity(), &Vec2::zeros(), &s).is_err());
    }

    #[test]
    fn axes_to_cov_cases() {
        let c = cov_from_axes(&AxisForm { sigma_major: 4.0, sigma_minor: 1.0, theta: 0.0 });
        assert_eq!(c, Mat2::new(4.0, 0.0, 0.0, 1.0));
        let c = cov_from_axes(&AxisForm { sigma_major: 4.0, sigma_minor: 1.0, theta: PI / 2.0 });
        assert!((c - Mat2::new(1.0, 0.0, 0.0, 4.0)).abs().max() < 1e-15);
        let c = cov_from_axes(&AxisForm { sigma_major: 4.0, sigma_minor: 1.0, theta: PI / 4.0 });
        assert!((c - Mat2::new(2.5, 1.5, 1.5, 2.5)).abs().max() < 1e-15);
    }

    #[test]
    fn cov_to_axes_cases() {
        let a = axes_from_cov(&Mat2::new(4.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!((a.sigma_major, a.sigma_minor, a.theta), (4.0, 1.0, 0.0));
        let a = axes_from_cov(&(Mat2::identity() * 2.5)).unwrap();
        assert_eq!((a.sigma_major, a.sigma_minor, a.theta), (2.5, 2.5, 0.0));
        let a = axes_from_cov(&cov_from_axes(&AxisForm {
            sigma_major: 7.0,
            sigma_minor: 2.0,
            theta: 1.1,
        }))
        .unwrap();
        assert!((a.sigma_major - 7.0).abs() < 1e-10);
        assert!((a.sigma_minor - 2.0).abs() < 1e-10);
        assert!((a.theta - 1.1).abs() < 1e-10);
        assert!(matches!(
            axes_from_cov(&Mat2::new(1.0, 0.1, 0.2, 1.0)),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn matched_pair_costs_nothing() {
        let p = profile(0.25, 30.0, 30.0);
        let basis = GaussianComponent::new(0.25, Vec2::new(3.0, 4.0), Mat2::identity() * 30.0).unwrap();
        let (pose, c) = optimal_pose(&p, &basis).unwrap();
        assert_eq!(pose.position, basis.mean);
        assert_eq!(pose.heading, 0.0);
        assert!(c.abs() < 1e-15);
        assert!(cost_at_pose(&p, &pose, &basis).unwrap().abs() < 1e-15);
    }

    #[test]
    fn hand_case_closed_form() {
        // Agent (1, 1) vs basis (4, 1), pi = omega = 1: 1/2 (ln(1/4) + 5 - 2).
        let p = profile(1.0, 1.0, 1.0);
        let basis = GaussianComponent::new(1.0, Vec2::zeros(), Mat2::new(4.0, 0.0, 0.0, 1.0)).unwrap();
        let (_, c) = optimal_pose(&p, &basis).unwrap();
        assert!((c - 0.5 * (0.25_f64.ln() + 3.0)).abs() < 1e-15);
        assert!((c - 0.80685).abs() < 1e-5);
    }

    #[test]
    fn displacement_increases_cost() {
        let p = profile(0.2, 5.0, 2.0);
        let basis = GaussianComponent::new(0.3, Vec2::new(1.0, 1.0), Mat2::new(3.0, 1.0, 1.0, 2.0)).unwrap();
        let (pose, c) = optimal_pose(&p, &basis).unwrap();
        let moved = Pose::new(pose.position + Vec2::new(0.5, -0.2), pose.heading);
        assert!(cost_at_pose(&p, &moved, &basis).unwrap() > c);
    }

    #[test]
    fn composed_cost_matches_formula() {
        let p = profile(0.4, 6.0, 2.0);
        let basis = GaussianComponent::new(0.1, Vec2::new(-1.0, 2.0), Mat2::new(2.0, 0.5, 0.5, 1.0)).unwrap();
        let pose = Pose::new(Vec2::new(0.0, 1.0), 0.7);
        let kl = kld_gaussian(&basis.mean, &basis.cov, &pose.position, &p.covariance(0.7)).unwrap();
        let expected = 0.1 * ((0.1_f64 / 0.4).ln() + kl);
        assert!((cost_at_pose(&p, &pose, &basis).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn heading_half_turn_symmetry() {
        let p = profile(0.3, 8.0, 2.0);
        let basis = GaussianComponent::new(0.5, Vec2::new(0.0, 0.0), Mat2::new(3.0, -1.0, -1.0, 2.0)).unwrap();
        for h in heading_grid(12) {
            let a = cost_at_pose(&p, &Pose::new(Vec2::new(0.3, 0.1), h), &basis).unwrap();
            let b = cost_at_pose(&p, &Pose::new(Vec2::new(0.3, 0.1), h + PI), &basis).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_validation() {
        assert!(ServiceProfile::new(1.0, 0.5, 1.0, 2.0).is_err());
        assert!(ServiceProfile::new(1.0, 0.0, 2.0, 1.0).is_err());
        assert!(ServiceProfile::new(0.0, 0.5, 2.0, 1.0).is_err());
        let ps = ServiceProfile::from_scales(&[(1.0, 2.0, 1.0), (3.0, 2.0, 2.0)]).unwrap();
        assert_eq!(ps[0].rel_weight, 0.25);
        assert_eq!(ps[1].rel_weight, 0.75);
    }

    #[test]
    fn cost_matrix_uses_each_agents_estimate() {
        let ps = ServiceProfile::from_scales(&[(1.0, 2.0, 1.0), (1.0, 3.0, 3.0)]).unwrap();
        let a = Mixture::new(vec![
            GaussianComponent::new(0.5, Vec2::zeros(), Mat2::identity()).unwrap(),
            GaussianComponent::new(0.5, Vec2::zeros(), Mat2::identity() * 3.0).unwrap(),
        ])
        .unwrap();
        let b = Mixture::new(vec![
            GaussianComponent::new(0.6, Vec2::zeros(), Mat2::identity()).unwrap(),
            GaussianComponent::new(0.4, Vec2::zeros(), Mat2::identity() * 3.0).unwrap(),
        ])
        .unwrap();
        let c = cost_matrix(&ps, &[&a, &b]).unwrap();
        assert_eq!(c[0][0], optimal_pose(&ps[0], &a.components()[0]).unwrap().1);
        assert_eq!(c[1][0], optimal_pose(&ps[1], &b.components()[0]).unwrap().1);
        // Identical shapes: only the weight mismatch term remains.
        assert!((c[1][1] - 0.4 * (0.8_f64).ln()).abs() < 1e-15);
    }
}
