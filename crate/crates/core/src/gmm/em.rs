use crate::consensus::ConsensusInput;
use crate::linalg::{floor_eigenvalues, Mat2, Vec2};
use crate::{Error, Result};

use super::{gaussian_pdf, GaussianComponent, Mixture};

/// Posterior membership probabilities, one row per target and one column per
/// component. Rows sum to one; a target so far away that every density
/// underflows gets the uniform row.
pub fn e_step(m: &Mixture, targets: &[Vec2]) -> Result<Vec<Vec<f64>>> {
    responsibilities(m.components(), targets)
}

pub(crate) fn responsibilities(
    components: &[GaussianComponent],
    targets: &[Vec2],
) -> Result<Vec<Vec<f64>>> {
    let n = components.len();
    targets
        .iter()
        .map(|x| {
            let mut row = components
                .iter()
                .map(|c| Ok(c.weight * gaussian_pdf(&c.mean, &c.cov, x)?))
                .collect::<Result<Vec<f64>>>()?;
            let total: f64 = row.iter().sum();
            if total > 0.0 && total.is_finite() {
                row.iter_mut().for_each(|g| *g /= total);
            } else {
                row.iter_mut().for_each(|g| *g = 1.0 / n as f64);
            }
            Ok(row)
        })
        .collect()
}

/// Weight/reference pairs one agent feeds into the three consensus streams of
/// a component.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStats {
    /// Dimension 1, converges to the component weight.
    pub pi: ConsensusInput,
    /// Dimension 2, converges to the component mean.
    pub mu: ConsensusInput,
    /// Dimension 4 (row-major), converges to the component covariance.
    pub sigma: ConsensusInput,
}

impl LocalStats {
    pub fn passive() -> Self {
        LocalStats {
            pi: ConsensusInput::passive(1),
            mu: ConsensusInput::passive(2),
            sigma: ConsensusInput::passive(4),
        }
    }
}

/// Local sufficient statistics of component `k` over an agent's own targets.
///
/// `current_mu` is the agent's present estimate of the component mean, used
/// to center the covariance reference. An agent without targets is passive on
/// all three streams; an agent whose responsibilities for `k` sum to zero is
/// passive on the mean and covariance streams.
pub fn local_stats(
    targets: &[Vec2],
    gamma: &[Vec<f64>],
    k: usize,
    current_mu: &Vec2,
) -> Result<LocalStats> {
    if targets.len() != gamma.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            found: gamma.len(),
        });
    }
    if targets.is_empty() {
        return Ok(LocalStats::passive());
    }
    if let Some(row) = gamma.iter().find(|row| row.len() <= k) {
        return Err(Error::DimensionMismatch {
            expected: k + 1,
            found: row.len(),
        });
    }

    let count = targets.len() as f64;
    let mass: f64 = gamma.iter().map(|row| row[k]).sum();
    let pi = ConsensusInput::new(count, vec![mass / count]);
    if !(mass > 0.0) {
        return Ok(LocalStats {
            pi,
            mu: ConsensusInput::passive(2),
            sigma: ConsensusInput::passive(4),
        });
    }

    let mut first = Vec2::zeros();
    let mut second = Mat2::zeros();
    for (x, row) in targets.iter().zip(gamma) {
        first += x * row[k];
        let d = x - current_mu;
        second += d * d.transpose() * row[k];
    }
    let mean = first / mass;
    let scatter = second / mass;
    Ok(LocalStats {
        pi,
        mu: ConsensusInput::new(mass, vec![mean.x, mean.y]),
        sigma: ConsensusInput::new(
            mass,
            vec![scatter[(0, 0)], scatter[(0, 1)], scatter[(1, 0)], scatter[(1, 1)]],
        ),
    })
}

/// Global M-step. Components whose total responsibility vanishes keep their
/// previous mean and covariance with weight zero.
pub fn m_step(
    targets: &[Vec2],
    gamma: &[Vec<f64>],
    previous: &[GaussianComponent],
    cov_floor: f64,
) -> Result<Vec<GaussianComponent>> {
    let m = targets.len() as f64;
    (0..previous.len())
        .map(|k| {
            let mass: f64 = gamma.iter().map(|row| row[k]).sum();
            if !(mass > 0.0) {
                return Ok(GaussianComponent {
                    weight: 0.0,
                    ..previous[k]
                });
            }
            let mean = targets
                .iter()
                .zip(gamma)
                .fold(Vec2::zeros(), |acc, (x, row)| acc + x * row[k])
                / mass;
            let cov = targets
                .iter()
                .zip(gamma)
                .fold(Mat2::zeros(), |acc, (x, row)| {
                    let d = x - mean;
                    acc + d * d.transpose() * row[k]
                })
                / mass;
            Ok(GaussianComponent {
                weight: mass / m,
                mean,
                cov: floor_eigenvalues(&cov, cov_floor),
            })
        })
        .collect()
}

pub fn log_likelihood(m: &Mixture, targets: &[Vec2]) -> Result<f64> {
    targets.iter().map(|x| m.log_pdf(x)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub iterations: usize,
    /// Lower bound on covariance eigenvalues.
    pub cov_floor: f64,
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub mixture: Mixture,
    /// Log-likelihood of the data under the initial model and after every
    /// iteration.
    pub log_likelihood: Vec<f64>,
}

/// Textbook EM over all targets at once.
pub fn centralized_em(targets: &[Vec2], init: &Mixture, config: &EmConfig) -> Result<EmOutcome> {
    if targets.len() < init.len() {
        return Err(Error::InvalidInput(format!(
            "{} targets cannot support {} components",
            targets.len(),
            init.len()
        )));
    }
    let mut mixture = init.clone();
    let mut history = vec![log_likelihood(&mixture, targets)?];
    for _ in 0..config.iterations {
        let gamma = e_step(&mixture, targets)?;
        let components = m_step(targets, &gamma, mixture.components(), config.cov_floor)?;
        mixture = Mixture::normalized(components)?;
        history.push(log_likelihood(&mixture, targets)?);
    }
    Ok(EmOutcome {
        mixture,
        log_likelihood: history,
    })
}
