use crate::consensus::{weighted_average, ConsensusInput, ConsensusNetwork, ConsensusParams};
use crate::linalg::{floor_eigenvalues, Mat2, Vec2};
use crate::network::Graph;
use crate::{Error, Result};

use super::em::{local_stats, responsibilities};
use super::{mean_spread, GaussianComponent, Mixture, TargetSet};

/// Smallest weight an agent uses for its own E-step, so a component whose
/// consensus estimate dips to or below zero can still recover.
const E_STEP_WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributedEmConfig {
    /// Outer EM loops.
    pub iterations: usize,
    /// Inner consensus rounds, step size and weight scale per stream.
    pub consensus: ConsensusParams,
    /// Lower bound on covariance eigenvalues.
    pub cov_floor: f64,
}

#[derive(Debug, Clone)]
pub struct DistributedEmOutcome {
    /// Each agent's local mixture, weights renormalized to one.
    pub estimates: Vec<Mixture>,
    /// Largest disagreement between two agents' raw component weights after
    /// the last loop.
    pub weight_spread: f64,
    /// Largest distance between two agents' means of the same component.
    pub mean_spread: f64,
    /// Largest gap, over the streams of the last loop, between a node's
    /// consensus output and the exact weighted average of that loop's inputs.
    pub consensus_residual: f64,
}

/// One consensus round of one stream, as seen by the trace hook.
#[derive(Debug, Clone, Copy)]
pub struct StreamRound<'a> {
    pub iteration: usize,
    pub component: usize,
    /// `"pi"`, `"mu"` or `"sigma"`.
    pub stream: &'static str,
    pub round: usize,
    /// Every node's output after this round.
    pub outputs: &'a [Vec<f64>],
}

/// Consensus-based EM. Every agent keeps a local copy of the mixture; active
/// agents compute responsibilities for the targets they own, and all agents
/// run three warm-started consensus streams per component (weight, mean,
/// covariance) to approximate the global M-step.
pub fn distributed_em(
    g: &Graph,
    targets: &TargetSet,
    init: &[Mixture],
    config: &DistributedEmConfig,
) -> Result<DistributedEmOutcome> {
    distributed_em_traced(g, targets, init, config, |_| {})
}

/// [`distributed_em`] with a hook called after every consensus round.
pub fn distributed_em_traced(
    g: &Graph,
    targets: &TargetSet,
    init: &[Mixture],
    config: &DistributedEmConfig,
    mut on_round: impl FnMut(&StreamRound),
) -> Result<DistributedEmOutcome> {
    g.ensure_connected()?;
    let agents = g.node_count();
    if init.len() != agents {
        return Err(Error::DimensionMismatch {
            expected: agents,
            found: init.len(),
        });
    }
    let n = init.first().map_or(0, Mixture::len);
    if n == 0 || init.iter().any(|m| m.len() != n) {
        return Err(Error::InvalidInput(
            "every agent needs an initial mixture with the same component count".into(),
        ));
    }
    if config.iterations == 0 {
        return Err(Error::InvalidInput("distributed EM needs at least one loop".into()));
    }
    if let Some(&bad) = targets.owners().iter().find(|&&o| o >= agents) {
        return Err(Error::NodeOutOfRange { node: bad, n: agents });
    }
    if targets.is_empty() {
        return Err(Error::AllPassive);
    }

    let owned: Vec<Vec<Vec2>> = (0..agents).map(|i| targets.owned_by(i)).collect();
    let mut local: Vec<Vec<GaussianComponent>> =
        init.iter().map(|m| m.components().to_vec()).collect();

    let mut pi_streams: Vec<ConsensusNetwork> = (0..n).map(|_| ConsensusNetwork::new(g, 1)).collect();
    let mut mu_streams: Vec<ConsensusNetwork> = (0..n).map(|_| ConsensusNetwork::new(g, 2)).collect();
    let mut sigma_streams: Vec<ConsensusNetwork> =
        (0..n).map(|_| ConsensusNetwork::new(g, 4)).collect();

    let mut consensus_residual = 0.0_f64;
    let mut track = |last: bool, inputs: &[ConsensusInput], outputs: &[Vec<f64>]| {
        if !last {
            return;
        }
        // A component nobody claims has no average to track.
        if let Ok(exact) = weighted_average(inputs) {
            for y in outputs {
                for (a, b) in y.iter().zip(&exact) {
                    consensus_residual = consensus_residual.max((a - b).abs());
                }
            }
        }
    };

    for iteration in 0..config.iterations {
        let last = iteration + 1 == config.iterations;
        let gammas = (0..agents)
            .map(|i| {
                if owned[i].is_empty() {
                    return Ok(Vec::new());
                }
                let floored: Vec<GaussianComponent> = local[i]
                    .iter()
                    .map(|c| GaussianComponent {
                        weight: c.weight.max(E_STEP_WEIGHT_FLOOR),
                        ..*c
                    })
                    .collect();
                responsibilities(&floored, &owned[i])
            })
            .collect::<Result<Vec<_>>>()?;

        for k in 0..n {
            let stats = (0..agents)
                .map(|i| local_stats(&owned[i], &gammas[i], k, &local[i][k].mean))
                .collect::<Result<Vec<_>>>()?;

            let pi_in: Vec<ConsensusInput> = stats.iter().map(|s| s.pi.clone()).collect();
            let mu_in: Vec<ConsensusInput> = stats.iter().map(|s| s.mu.clone()).collect();
            if iteration == 0 {
                // Outputs start at each agent's initial estimate instead of 0.
                let start_pi: Vec<Vec<f64>> = local.iter().map(|c| vec![c[k].weight]).collect();
                let start_mu: Vec<Vec<f64>> = local.iter().map(|c| c[k].mean.as_slice().to_vec()).collect();
                pi_streams[k].anchor(&pi_in, &start_pi, &config.consensus)?;
                mu_streams[k].anchor(&mu_in, &start_mu, &config.consensus)?;
            }
            let pi = pi_streams[k].advance_with(&pi_in, &config.consensus, |round, outputs| {
                on_round(&StreamRound {
                    iteration,
                    component: k,
                    stream: "pi",
                    round,
                    outputs,
                })
            })?;
            let mu = mu_streams[k].advance_with(&mu_in, &config.consensus, |round, outputs| {
                on_round(&StreamRound {
                    iteration,
                    component: k,
                    stream: "mu",
                    round,
                    outputs,
                })
            })?;
            track(last, &pi_in, &pi);
            track(last, &mu_in, &mu);
            for i in 0..agents {
                local[i][k].weight = pi[i][0];
                local[i][k].mean = Vec2::new(mu[i][0], mu[i][1]);
            }

            // The covariance reference is centered on each agent's fresh mean.
            let sigma_in = (0..agents)
                .map(|i| {
                    local_stats(&owned[i], &gammas[i], k, &local[i][k].mean).map(|s| s.sigma)
                })
                .collect::<Result<Vec<_>>>()?;
            if iteration == 0 {
                let start: Vec<Vec<f64>> = init.iter().map(|m| m.components()[k].cov.as_slice().to_vec()).collect();
                sigma_streams[k].anchor(&sigma_in, &start, &config.consensus)?;
            }
            let sigma = sigma_streams[k].advance_with(&sigma_in, &config.consensus, |round, outputs| {
                on_round(&StreamRound {
                    iteration,
                    component: k,
                    stream: "sigma",
                    round,
                    outputs,
                })
            })?;
            track(last, &sigma_in, &sigma);
            for i in 0..agents {
                let s = &sigma[i];
                local[i][k].cov = floor_eigenvalues(&Mat2::new(s[0], s[1], s[2], s[3]), config.cov_floor);
            }
        }
    }

    let mut weight_spread = 0.0_f64;
    for k in 0..n {
        let (lo, hi) = local
            .iter()
            .map(|c| c[k].weight)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| (lo.min(w), hi.max(w)));
        weight_spread = weight_spread.max(hi - lo);
    }

    let estimates = local
        .into_iter()
        .map(|components| {
            let clamped = components
                .into_iter()
                .map(|c| GaussianComponent {
                    weight: c.weight.clamp(0.0, 1.0),
                    ..c
                })
                .collect::<Vec<_>>();
            Mixture::normalized(clamped)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_spread = mean_spread(&estimates);
    Ok(DistributedEmOutcome {
        estimates,
        weight_spread,
        mean_spread,
        consensus_residual,
    })
}
