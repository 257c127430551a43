use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::{Pose, ServiceProfile};
use crate::gmm::{GaussianComponent, Mixture};
use crate::{Error, Result};

/// Lower bound applied to `ln q(x)` so that a sample far outside `q` still
/// contributes a finite amount.
pub const LOG_DENSITY_FLOOR: f64 = -700.0;

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    /// Samples whose `ln q` hit [`LOG_DENSITY_FLOOR`].
    pub floored: usize,
}

/// `KL(p || q)` estimated as the mean of `ln p(x) - ln q(x)` over draws
/// `x ~ p`.
pub fn mc_kld(p: &Mixture, q: &Mixture, samples: usize, rng: &mut impl Rng) -> Result<McEstimate> {
    if samples < 2 {
        return Err(Error::InvalidInput("Monte-Carlo KLD needs at least two samples".into()));
    }
    let mut floored = 0;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let x = p.sample(rng);
        let lp = p.log_pdf(&x)?;
        let mut lq = q.log_pdf(&x)?;
        if !(lq >= LOG_DENSITY_FLOOR) {
            lq = LOG_DENSITY_FLOOR;
            floored += 1;
        }
        let d = lp - lq;
        sum += d;
        sum_sq += d * d;
    }
    let s = samples as f64;
    let mean = sum / s;
    let var = ((sum_sq - s * mean * mean) / (s - 1.0)).max(0.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / s).sqrt(),
        samples,
        floored,
    })
}

/// Normalized collective QoS: component `i` has weight `omega_i`, mean at
/// agent `i`'s position and covariance of its footprint at its heading.
pub fn collective_qos(poses: &[Pose], profiles: &[ServiceProfile]) -> Result<Mixture> {
    if poses.len() != profiles.len() {
        return Err(Error::DimensionMismatch {
            expected: profiles.len(),
            found: poses.len(),
        });
    }
    let components = poses
        .iter()
        .zip(profiles)
        .map(|(pose, prof)| GaussianComponent::new(prof.rel_weight, pose.position, prof.covariance(pose.heading)))
        .collect::<Result<Vec<_>>>()?;
    Mixture::normalized(components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::kld_gaussian;
    use crate::linalg::{Mat2, Vec2};
    use crate::simulator::{substream, Stream};

    #[test]
    fn identical_mixtures_give_zero() {
        let p = Mixture::single(Vec2::new(1.0, 2.0), Mat2::new(2.0, 0.3, 0.3, 1.0)).unwrap();
        let est = mc_kld(&p, &p, 1000, &mut substream(1, Stream::McPre)).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.floored, 0);
    }

    #[test]
    fn single_gaussians_match_closed_form() {
        let (m0, s0) = (Vec2::new(0.0, 0.0), Mat2::new(2.0, 0.5, 0.5, 1.0));
        let (m1, s1) = (Vec2::new(1.0, -0.5), Mat2::new(1.5, -0.2, -0.2, 2.5));
        let exact = kld_gaussian(&m0, &s0, &m1, &s1).unwrap();
        let est = mc_kld(
            &Mixture::single(m0, s0).unwrap(),
            &Mixture::single(m1, s1).unwrap(),
            200_000,
            &mut substream(2, Stream::McPre),
        )
        .unwrap();
        assert!((est.value - exact).abs() < 3.0 * est.std_error, "{est:?} vs {exact}");
    }

    #[test]
    fn separation_increases_divergence() {
        let p = Mixture::single(Vec2::zeros(), Mat2::identity()).unwrap();
        let mut last = 0.0;
        for d in [0.5, 2.0, 5.0] {
            let q = Mixture::single(Vec2::new(d, 0.0), Mat2::identity()).unwrap();
            let est = mc_kld(&p, &q, 20_000, &mut substream(3, Stream::McPre)).unwrap();
            assert!(est.value > last);
            last = est.value;
        }
    }

    #[test]
    fn far_samples_hit_the_floor() {
        let p = Mixture::single(Vec2::zeros(), Mat2::identity()).unwrap();
        let q = Mixture::single(Vec2::new(1e4, 0.0), Mat2::identity() * 1e-2).unwrap();
        let est = mc_kld(&p, &q, 100, &mut substream(4, Stream::McPre)).unwrap();
        assert_eq!(est.floored, 100);
        assert!(est.value.is_finite());
    }

    #[test]
    fn qos_weights() {
        let profiles = ServiceProfile::from_scales(&[(2.0, 4.0, 1.0)]).unwrap();
        let q = collective_qos(&[Pose::new(Vec2::new(1.0, 1.0), 0.0)], &profiles).unwrap();
        assert_eq!(q.components()[0].weight, 1.0);

        let profiles = ServiceProfile::from_scales(&[(1.0, 2.0, 1.0); 4]).unwrap();
        let poses = vec![Pose::new(Vec2::zeros(), 0.0); 4];
        let q = collective_qos(&poses, &profiles).unwrap();
        assert!(q.components().iter().all(|c| (c.weight - 0.25).abs() < 1e-15));

        let shapes = [0.15, 0.15, 0.2, 0.1, 0.1, 0.3].map(|z| (z, 2.0, 1.0));
        let profiles = ServiceProfile::from_scales(&shapes).unwrap();
        let poses = vec![Pose::new(Vec2::zeros(), 1.0); 6];
        let total: f64 = collective_qos(&poses, &profiles)
            .unwrap()
            .components()
            .iter()
            .map(|c| c.weight)
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
