//! End-to-end runs: scenario files, target generation, the two-stage
//! pipeline, metrics and artifacts.

mod metrics;
mod pipeline;
mod render;

pub use metrics::{collective_qos, mc_kld, McEstimate, LOG_DENSITY_FLOOR};
pub use pipeline::{
    run_assignment, run_id, run_pipeline, run_stage1, run_transport, AssignmentStage, Metrics, RunOptions,
    RunReport, Stage1, TraceRow, TransportStage,
};
pub use render::{
    render_estimate_svg, render_qos_svg, write_artifacts, write_costs_csv, write_estimates,
    write_plan, write_trace_csv, write_trajectories_csv,
};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusParams, DEFAULT_PEAK_GAIN};
use crate::control::{UnicycleState, V_MIN};
use crate::divergence::ServiceProfile;
use crate::gmm::{Mixture, TargetSet};
use crate::linalg::Vec2;
use crate::network::Graph;
use crate::{Error, Result};

/// Labels of the independent random substreams of a run. Each stage draws
/// only from its own stream, so changing one stage leaves the others intact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Targets = 1,
    Partition = 2,
    Init = 3,
    McPre = 4,
    McPost = 5,
    McTruthPre = 6,
    McTruthPost = 7,
}

/// Generator for one labeled substream of `seed`.
pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Arena {
    pub fn lo(&self) -> Vec2 {
        Vec2::new(self.min[0], self.min[1])
    }

    pub fn hi(&self) -> Vec2 {
        Vec2::new(self.max[0], self.max[1])
    }

    /// Length of the diagonal.
    pub fn scale(&self) -> f64 {
        (self.hi() - self.lo()).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    /// Scale constant `z` of the QoS density.
    pub scale: f64,
    /// Major-axis variance.
    pub sigma_x: f64,
    /// Minor-axis variance.
    pub sigma_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub position: [f64; 2],
    /// Radians.
    pub heading: f64,
    pub speed: f64,
    pub profile: ProfileSpec,
    /// Detects targets.
    #[serde(default)]
    pub active: bool,
    /// Number of targets this agent detects; all active agents give one or
    /// none do.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quota: Option<usize>,
}

impl AgentSpec {
    pub fn initial_state(&self) -> UnicycleState {
        UnicycleState::new(Vec2::new(self.position[0], self.position[1]), self.heading, self.speed)
    }
}

fn default_delta_c() -> f64 {
    crate::consensus::DEFAULT_DELTA_C
}

fn default_v_star() -> f64 {
    1.0
}

fn default_mc_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Consensus rounds per EM loop.
    pub consensus_rounds: usize,
    /// Outer EM loops.
    pub em_iterations: usize,
    #[serde(default = "default_delta_c")]
    pub delta_c: f64,
    /// Divisor for consensus weights; by default the heaviest agent gets a
    /// consensus gain of 1.5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_scale: Option<f64>,
    /// Covariance eigenvalue floor; defaults to `1e-6 * arena_scale^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_floor: Option<f64>,
    /// Transport horizon in seconds.
    pub tau: f64,
    /// Integration step; at most `tau / 100`.
    pub dt: f64,
    /// Arrival speed.
    #[serde(default = "default_v_star")]
    pub v_star: f64,
    /// Monte-Carlo samples per KLD estimate.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub arena: Arena,
    /// Ground-truth target density.
    pub truth: Mixture,
    /// Target count `M`.
    pub targets: usize,
    /// Every agent is a service agent; one mixture component per agent.
    pub agents: Vec<AgentSpec>,
    pub graph: Graph,
    pub params: Params,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Scenario(msg.into())
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| bad(format!("invalid scenario JSON: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn active_agents(&self) -> Vec<usize> {
        (0..self.agents.len()).filter(|&i| self.agents[i].active).collect()
    }

    pub fn profiles(&self) -> Result<Vec<ServiceProfile>> {
        let shapes: Vec<(f64, f64, f64)> = self
            .agents
            .iter()
            .map(|a| (a.profile.scale, a.profile.sigma_x, a.profile.sigma_y))
            .collect();
        ServiceProfile::from_scales(&shapes).map_err(|e| bad(format!("service profiles: {e}")))
    }

    pub fn initial_states(&self) -> Vec<UnicycleState> {
        self.agents.iter().map(AgentSpec::initial_state).collect()
    }

    /// Consensus parameters given the largest local target count.
    pub fn consensus_params(&self, max_local_targets: usize) -> ConsensusParams {
        let p = ConsensusParams::new(self.params.consensus_rounds, self.params.delta_c);
        match self.params.weight_scale {
            Some(scale) => p.with_weight_scale(scale),
            None => p.with_peak_gain(max_local_targets.max(1) as f64, DEFAULT_PEAK_GAIN),
        }
    }

    pub fn cov_floor(&self) -> f64 {
        self.params.cov_floor.unwrap_or(1e-6 * self.arena.scale().powi(2))
    }

    /// Target quotas of the active agents, in [`Scenario::active_agents`]
    /// order, when the scenario fixes them.
    pub fn quotas(&self) -> Option<Vec<usize>> {
        let active = self.active_agents();
        if active.iter().all(|&i| self.agents[i].quota.is_some()) {
            Some(active.iter().map(|&i| self.agents[i].quota.unwrap_or(0)).collect())
        } else {
            None
        }
    }

    /// Checks every invariant a run relies on.
    pub fn validate(&self) -> Result<()> {
        let n = self.agents.len();
        if n == 0 {
            return Err(bad("scenario has no agents"));
        }
        if self.graph.node_count() != n {
            return Err(bad(format!(
                "graph has {} nodes but the scenario lists {n} agents",
                self.graph.node_count()
            )));
        }
        if !self.graph.is_connected() {
            return Err(bad("communication graph is not connected"));
        }
        let active = self.active_agents();
        if active.is_empty() {
            return Err(bad("no agent is active; at least one must detect targets"));
        }

        let a = &self.arena;
        if !(a.min.iter().chain(&a.max).all(|x| x.is_finite()) && a.min[0] < a.max[0] && a.min[1] < a.max[1]) {
            return Err(bad(format!("arena {:?}..{:?} is empty or not finite", a.min, a.max)));
        }
        if self.targets < n {
            return Err(bad(format!(
                "{} targets cannot support a {n}-component mixture",
                self.targets
            )));
        }

        let with_quota = self.agents.iter().filter(|a| a.quota.is_some()).count();
        if with_quota > 0 {
            for (i, agent) in self.agents.iter().enumerate() {
                match (agent.active, agent.quota) {
                    (true, None) => {
                        return Err(bad(format!(
                            "agent {i} is active but has no quota; give every active agent a quota or none"
                        )))
                    }
                    (false, Some(q)) if q > 0 => {
                        return Err(bad(format!("agent {i} is passive but has quota {q}")))
                    }
                    _ => {}
                }
            }
            let total: usize = self.agents.iter().filter_map(|a| a.quota).sum();
            if total != self.targets {
                return Err(bad(format!(
                    "quotas sum to {total}, expected the target count {}",
                    self.targets
                )));
            }
        }

        self.profiles()?;
        for (i, agent) in self.agents.iter().enumerate() {
            if !(agent.position.iter().all(|x| x.is_finite()) && agent.heading.is_finite()) {
                return Err(bad(format!("agent {i} has a non-finite pose")));
            }
            if !(agent.speed.abs() >= V_MIN) {
                return Err(bad(format!(
                    "agent {i} starts at speed {}; the compensator needs |speed| >= {V_MIN}",
                    agent.speed
                )));
            }
        }

        let p = &self.params;
        if p.consensus_rounds == 0 || p.em_iterations == 0 {
            return Err(bad("consensus_rounds and em_iterations must be positive"));
        }
        if !(p.delta_c > 0.0 && p.delta_c.is_finite()) {
            return Err(bad(format!("delta_c must be positive, got {}", p.delta_c)));
        }
        if let Some(w) = p.weight_scale {
            if !(w > 0.0 && w.is_finite()) {
                return Err(bad(format!("weight_scale must be positive, got {w}")));
            }
        }
        if let Some(f) = p.cov_floor {
            if !(f > 0.0 && f.is_finite()) {
                return Err(bad(format!("cov_floor must be positive, got {f}")));
            }
        }
        if !(p.tau > 0.0 && p.tau.is_finite()) {
            return Err(bad(format!("tau must be positive, got {}", p.tau)));
        }
        if !(p.dt > 0.0 && p.dt <= p.tau / 100.0 * (1.0 + 1e-12)) {
            return Err(bad(format!("dt must lie in (0, tau/100], got {}", p.dt)));
        }
        if !(p.v_star > 0.0 && p.v_star.is_finite()) {
            return Err(bad(format!("v_star must be positive, got {}", p.v_star)));
        }
        if p.mc_samples < 2 {
            return Err(bad("mc_samples must be at least 2"));
        }
        Ok(())
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scenario::from_json(&text).map_err(|e| match e {
        Error::Scenario(msg) => bad(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// The bundled six-agent demo scenario.
pub fn demo_scenario() -> Scenario {
    Scenario::from_json(include_str!("../../scenarios/demo.json")).expect("bundled demo scenario is valid")
}

/// `m` i.i.d. draws from `truth`.
pub fn generate_targets(truth: &Mixture, m: usize, rng: &mut impl Rng) -> Vec<Vec2> {
    (0..m).map(|_| truth.sample(rng)).collect()
}

/// Assigns every target to exactly one active agent.
///
/// With quotas, the targets are shuffled and handed out in consecutive
/// blocks, `quotas[j]` to `active[j].0`. Without, each target goes to the
/// nearest active agent, ties to the lower index.
pub fn partition_targets(
    targets: Vec<Vec2>,
    active: &[(usize, Vec2)],
    quotas: Option<&[usize]>,
    rng: &mut impl Rng,
) -> Result<TargetSet> {
    if active.is_empty() {
        return Err(Error::AllPassive);
    }
    let m = targets.len();
    let owner = match quotas {
        Some(q) => {
            if q.len() != active.len() {
                return Err(Error::DimensionMismatch {
                    expected: active.len(),
                    found: q.len(),
                });
            }
            let total: usize = q.iter().sum();
            if total != m {
                return Err(Error::InvalidInput(format!(
                    "quotas sum to {total} but there are {m} targets"
                )));
            }
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(rng);
            let mut owner = vec![0; m];
            let mut next = order.into_iter();
            for (&(agent, _), &count) in active.iter().zip(q) {
                for idx in next.by_ref().take(count) {
                    owner[idx] = agent;
                }
            }
            owner
        }
        None => targets
            .iter()
            .map(|x| {
                let mut best = active[0];
                for &cand in &active[1..] {
                    let (d_best, d_cand) = ((x - best.1).norm_squared(), (x - cand.1).norm_squared());
                    if d_cand < d_best || (d_cand == d_best && cand.0 < best.0) {
                        best = cand;
                    }
                }
                best.0
            })
            .collect(),
    };
    TargetSet::new(targets, owner)
}

/// FNV-1a of the given bytes, as 16 hex digits.
pub(crate) fn fingerprint(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
