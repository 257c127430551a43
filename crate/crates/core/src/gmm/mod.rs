//! Gaussian mixtures over the plane, centralized EM, and consensus-based
//! distributed EM.

mod distributed;
mod em;

pub use distributed::{
    distributed_em, distributed_em_traced, DistributedEmConfig, DistributedEmOutcome, StreamRound,
};
pub use em::{
    centralized_em, e_step, local_stats, log_likelihood, m_step, EmConfig, EmOutcome, LocalStats,
};

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{is_spd, Mat2, Vec2};
use crate::{Error, Result};

/// Determinants below this are treated as singular.
pub const MIN_DETERMINANT: f64 = 1e-300;

/// One weighted bivariate normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComponentRecord", into = "ComponentRecord")]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec2,
    pub cov: Mat2,
}

#[derive(Serialize, Deserialize)]
struct ComponentRecord {
    weight: f64,
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
}

impl TryFrom<ComponentRecord> for GaussianComponent {
    type Error = Error;

    fn try_from(r: ComponentRecord) -> Result<Self> {
        GaussianComponent::new(
            r.weight,
            Vec2::new(r.mean[0], r.mean[1]),
            Mat2::new(r.cov[0][0], r.cov[0][1], r.cov[1][0], r.cov[1][1]),
        )
    }
}

impl From<GaussianComponent> for ComponentRecord {
    fn from(c: GaussianComponent) -> Self {
        ComponentRecord {
            weight: c.weight,
            mean: [c.mean.x, c.mean.y],
            cov: [
                [c.cov[(0, 0)], c.cov[(0, 1)]],
                [c.cov[(1, 0)], c.cov[(1, 1)]],
            ],
        }
    }
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Vec2, cov: Mat2) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidInput(format!(
                "component weight {weight} outside [0, 1]"
            )));
        }
        if !mean.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("component mean is not finite".into()));
        }
        if !is_spd(&cov) {
            return Err(Error::InvalidInput(format!(
                "component covariance is not symmetric positive-definite: {:?}",
                cov.as_slice()
            )));
        }
        Ok(GaussianComponent { weight, mean, cov })
    }

    pub fn density(&self, x: &Vec2) -> Result<f64> {
        gaussian_pdf(&self.mean, &self.cov, x)
    }
}

/// Bivariate normal density `N(x | mean, cov)`.
pub fn gaussian_pdf(mean: &Vec2, cov: &Mat2, x: &Vec2) -> Result<f64> {
    Ok(gaussian_log_pdf(mean, cov, x)?.exp())
}

pub fn gaussian_log_pdf(mean: &Vec2, cov: &Mat2, x: &Vec2) -> Result<f64> {
    let det = cov.determinant();
    if !(det >= MIN_DETERMINANT) {
        return Err(Error::SingularCovariance { det });
    }
    let d = x - mean;
    // Inverse of [[a, b], [c, e]] is [[e, -b], [-c, a]] / det.
    let maha = (cov[(1, 1)] * d.x * d.x - (cov[(0, 1)] + cov[(1, 0)]) * d.x * d.y
        + cov[(0, 0)] * d.y * d.y)
        / det;
    Ok(-0.5 * maha - (2.0 * PI).ln() - 0.5 * det.ln())
}

/// Finite mixture `sum_k weight_k N(x | mean_k, cov_k)` with weights summing
/// to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRecord", into = "MixtureRecord")]
pub struct Mixture {
    components: Vec<GaussianComponent>,
}

#[derive(Serialize, Deserialize)]
struct MixtureRecord {
    components: Vec<GaussianComponent>,
}

impl TryFrom<MixtureRecord> for Mixture {
    type Error = Error;

    fn try_from(r: MixtureRecord) -> Result<Self> {
        Mixture::new(r.components)
    }
}

impl From<Mixture> for MixtureRecord {
    fn from(m: Mixture) -> Self {
        MixtureRecord {
            components: m.components,
        }
    }
}

impl Mixture {
    pub const WEIGHT_TOLERANCE: f64 = 1e-9;

    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > Self::WEIGHT_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(Mixture { components })
    }

    /// Builds a mixture from possibly unnormalized nonnegative weights.
    pub fn normalized(mut components: Vec<GaussianComponent>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("mixture weights sum to zero".into()));
        }
        for c in &mut components {
            c.weight /= total;
        }
        Mixture::new(components)
    }

    pub fn single(mean: Vec2, cov: Mat2) -> Result<Self> {
        Mixture::new(vec![GaussianComponent::new(1.0, mean, cov)?])
    }

    /// Shared EM starting point: means uniform over the box, isotropic
    /// covariances of `(diag / 4)^2`, uniform weights.
    pub fn spread_init(lo: Vec2, hi: Vec2, n: usize, rng: &mut impl Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        let diag = (hi - lo).norm();
        let var = (diag / 4.0).powi(2);
        let components = (0..n)
            .map(|_| {
                let mean = Vec2::new(
                    rng.random_range(lo.x..=hi.x),
                    rng.random_range(lo.y..=hi.y),
                );
                GaussianComponent::new(1.0 / n as f64, mean, Mat2::identity() * var)
            })
            .collect::<Result<Vec<_>>>()?;
        Mixture::normalized(components)
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn pdf(&self, x: &Vec2) -> Result<f64> {
        mixture_pdf(self, x)
    }

    /// `ln p(x)` via log-sum-exp, finite even where `pdf` underflows.
    pub fn log_pdf(&self, x: &Vec2) -> Result<f64> {
        let logs = self
            .components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| Ok(c.weight.ln() + gaussian_log_pdf(&c.mean, &c.cov, x)?))
            .collect::<Result<Vec<f64>>>()?;
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Ok(max);
        }
        Ok(max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln())
    }

    /// Draws one point: categorical choice on the weights, then a normal draw.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec2 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = k;
                break;
            }
        }
        let c = &self.components[chosen];
        let chol = c
            .cov
            .cholesky()
            .map(|ch| ch.l())
            .unwrap_or_else(|| Mat2::from_diagonal(&c.cov.diagonal().map(f64::sqrt)));
        let z = Vec2::new(standard_normal(rng), standard_normal(rng));
        c.mean + chol * z
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// `sum_k pi_k N(x | mu_k, Sigma_k)`.
pub fn mixture_pdf(m: &Mixture, x: &Vec2) -> Result<f64> {
    m.components
        .iter()
        .map(|c| Ok(c.weight * gaussian_pdf(&c.mean, &c.cov, x)?))
        .sum()
}

/// Target positions and the active agent that detected each one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    points: Vec<Vec2>,
    owner: Vec<usize>,
}

impl TargetSet {
    pub fn new(points: Vec<Vec2>, owner: Vec<usize>) -> Result<Self> {
        if points.len() != owner.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: owner.len(),
            });
        }
        Ok(TargetSet { points, owner })
    }

    /// All targets owned by one agent.
    pub fn single_owner(points: Vec<Vec2>, agent: usize) -> Self {
        let owner = vec![agent; points.len()];
        TargetSet { points, owner }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn owners(&self) -> &[usize] {
        &self.owner
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points detected by `agent`, in input order.
    pub fn owned_by(&self, agent: usize) -> Vec<Vec2> {
        self.points
            .iter()
            .zip(&self.owner)
            .filter(|(_, &o)| o == agent)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn counts(&self, agents: usize) -> Vec<usize> {
        let mut counts = vec![0; agents];
        for &o in &self.owner {
            if o < agents {
                counts[o] += 1;
            }
        }
        counts
    }
}

/// Largest distance between the same component's mean at any two agents.
pub fn mean_spread(estimates: &[Mixture]) -> f64 {
    let mut spread = 0.0_f64;
    for a in estimates {
        for b in estimates {
            for (ca, cb) in a.components.iter().zip(&b.components) {
                spread = spread.max((ca.mean - cb.mean).norm());
            }
        }
    }
    spread
}
