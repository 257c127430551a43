//! Dynamic active weighted-average consensus.
//!
//! Every node `i` holds an integrator state `z` and an auxiliary state `v`.
//! Active nodes inject a reference `r` with weight `eta > 0`; passive nodes
//! use `eta = 0`. Each round a node outputs `y = z + eta * r`, exchanges
//! `(y, v)` with its neighbors and updates
//!
//! ```text
//! z <- z - dc * eta * (y - r) - dc * sum_j (y - y_j) - dc * sum_j (v - v_j)
//! v <- v + dc * sum_j (y - y_j)
//! ```
//!
//! For static inputs on a connected graph every `y` converges to
//! `sum(eta * r) / sum(eta)`.
//!
//! The discrete iteration is only stable when `dc * eta` stays well below one.
//! Raw target counts make poor weights for that reason; callers pass a common
//! `weight_scale` that divides every `eta`, which leaves the weighted average
//! unchanged.

use serde::{Deserialize, Serialize};

use crate::network::{sync_round, Graph};
use crate::{Error, Result};

/// Magnitude past which a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

pub const DEFAULT_DELTA_C: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
}

impl ConsensusState {
    pub fn zeros(dim: usize) -> Self {
        ConsensusState {
            y: vec![0.0; dim],
            z: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    /// Seeds a node from carried-over `(z, v)`; `y` is filled on the next step.
    pub fn warm(z: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if z.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: z.len(),
                found: v.len(),
            });
        }
        Ok(ConsensusState {
            y: z.clone(),
            z,
            v,
        })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusInput {
    pub eta: f64,
    pub r: Vec<f64>,
}

impl ConsensusInput {
    pub fn new(eta: f64, r: Vec<f64>) -> Self {
        ConsensusInput { eta, r }
    }

    pub fn passive(dim: usize) -> Self {
        ConsensusInput {
            eta: 0.0,
            r: vec![0.0; dim],
        }
    }

    pub fn is_active(&self) -> bool {
        self.eta > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusParams {
    pub delta_c: f64,
    pub rounds: usize,
    /// Common positive divisor applied to every weight before it enters the
    /// update.
    pub weight_scale: f64,
}

impl ConsensusParams {
    pub fn new(rounds: usize, delta_c: f64) -> Self {
        ConsensusParams {
            delta_c,
            rounds,
            weight_scale: 1.0,
        }
    }

    pub fn with_weight_scale(mut self, scale: f64) -> Self {
        self.weight_scale = scale;
        self
    }

    /// Picks the scale so that the heaviest node's gain `delta_c * eta / scale`
    /// equals `gain`. Above roughly 2 the update oscillates and diverges.
    pub fn with_peak_gain(self, max_eta: f64, gain: f64) -> Self {
        let scale = (self.delta_c * max_eta / gain).max(f64::MIN_POSITIVE);
        self.with_weight_scale(scale)
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta_c > 0.0 && self.delta_c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "delta_c must be positive, got {}",
                self.delta_c
            )));
        }
        if !(self.weight_scale > 0.0 && self.weight_scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "weight_scale must be positive, got {}",
                self.weight_scale
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidInput("consensus needs at least one round".into()));
        }
        Ok(())
    }
}

/// Peak gain used when no explicit weight scale is given.
pub const DEFAULT_PEAK_GAIN: f64 = 1.5;

impl Default for ConsensusParams {
    fn default() -> Self {
        ConsensusParams::new(20, DEFAULT_DELTA_C)
    }
}

/// Local output `y = z + eta * r` that a node broadcasts at the start of a round.
pub fn node_output(state: &ConsensusState, input: &ConsensusInput) -> Vec<f64> {
    state
        .z
        .iter()
        .zip(&input.r)
        .map(|(z, r)| z + input.eta * r)
        .collect()
}

/// One update of a single node. `neighbor_y` and `neighbor_v` carry the
/// round-`l` outputs and auxiliary states of the node's neighbors.
///
/// Returns the node's `y(l)` together with `z(l+1)` and `v(l+1)`.
pub fn consensus_step(
    state: &ConsensusState,
    input: &ConsensusInput,
    neighbor_y: &[Vec<f64>],
    neighbor_v: &[Vec<f64>],
    delta_c: f64,
) -> Result<ConsensusState> {
    let d = state.dim();
    let check = |len: usize| {
        if len == d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: d,
                found: len,
            })
        }
    };
    check(state.v.len())?;
    check(input.r.len())?;
    if neighbor_y.len() != neighbor_v.len() {
        return Err(Error::DimensionMismatch {
            expected: neighbor_y.len(),
            found: neighbor_v.len(),
        });
    }
    for (ny, nv) in neighbor_y.iter().zip(neighbor_v) {
        check(ny.len())?;
        check(nv.len())?;
    }
    if !(delta_c > 0.0) {
        return Err(Error::InvalidInput(format!(
            "delta_c must be positive, got {delta_c}"
        )));
    }

    let y = node_output(state, input);
    let mut z = state.z.clone();
    let mut v = state.v.clone();
    for c in 0..d {
        let y_disagreement: f64 = neighbor_y.iter().map(|ny| y[c] - ny[c]).sum();
        let v_disagreement: f64 = neighbor_v.iter().map(|nv| state.v[c] - nv[c]).sum();
        z[c] = state.z[c]
            - delta_c * input.eta * (y[c] - input.r[c])
            - delta_c * y_disagreement
            - delta_c * v_disagreement;
        v[c] = state.v[c] + delta_c * y_disagreement;
    }
    Ok(ConsensusState { y, z, v })
}

/// Final per-node outputs and carry-over states of a consensus run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome {
    pub y: Vec<Vec<f64>>,
    pub states: Vec<ConsensusState>,
}

/// One consensus instance over a fixed graph. States persist between calls to
/// [`ConsensusNetwork::advance`], which is how the distributed EM warm-starts
/// its streams from one outer iteration to the next.
#[derive(Debug, Clone)]
pub struct ConsensusNetwork<'g> {
    graph: &'g Graph,
    states: Vec<ConsensusState>,
}

impl<'g> ConsensusNetwork<'g> {
    pub fn new(graph: &'g Graph, dim: usize) -> Self {
        ConsensusNetwork {
            graph,
            states: vec![ConsensusState::zeros(dim); graph.node_count()],
        }
    }

    pub fn with_states(graph: &'g Graph, states: Vec<ConsensusState>) -> Result<Self> {
        if states.len() != graph.node_count() {
            return Err(Error::DimensionMismatch {
                expected: graph.node_count(),
                found: states.len(),
            });
        }
        if let Some(first) = states.first() {
            let d = first.dim();
            for s in &states {
                if s.z.len() != d || s.v.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: s.z.len().max(s.v.len()),
                    });
                }
            }
        }
        Ok(ConsensusNetwork { graph, states })
    }

    pub fn states(&self) -> &[ConsensusState] {
        &self.states
    }

    /// Resets every node so that, under `inputs`, its output equals
    /// `start[i]`: `z = start - eta r / weight_scale`, `v = 0`. The fixed
    /// point does not depend on `(z, v)`, only the transient does.
    pub fn anchor(&mut self, inputs: &[ConsensusInput], start: &[Vec<f64>], params: &ConsensusParams) -> Result<()> {
        let n = self.graph.node_count();
        if inputs.len() != n || start.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if inputs.len() != n { inputs.len() } else { start.len() },
            });
        }
        let dim = self.states.first().map_or(0, ConsensusState::dim);
        for ((state, input), y0) in self.states.iter_mut().zip(inputs).zip(start) {
            if y0.len() != dim || input.r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: if y0.len() != dim { y0.len() } else { input.r.len() },
                });
            }
            let w = input.eta / params.weight_scale;
            let z: Vec<f64> = y0.iter().zip(&input.r).map(|(y, r)| y - w * r).collect();
            *state = ConsensusState {
                y: y0.clone(),
                z,
                v: vec![0.0; dim],
            };
        }
        Ok(())
    }

    pub fn into_states(self) -> Vec<ConsensusState> {
        self.states
    }

    /// Runs `params.rounds` lockstep rounds with static inputs and returns the
    /// last `y` of every node. `on_round` sees each round's outputs.
    pub fn advance_with(
        &mut self,
        inputs: &[ConsensusInput],
        params: &ConsensusParams,
        mut on_round: impl FnMut(usize, &[Vec<f64>]),
    ) -> Result<Vec<Vec<f64>>> {
        params.validate()?;
        let n = self.graph.node_count();
        if inputs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: inputs.len(),
            });
        }
        let scaled: Vec<ConsensusInput> = inputs
            .iter()
            .map(|inp| {
                if !(inp.eta >= 0.0) || !inp.eta.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "consensus weight must be finite and nonnegative, got {}",
                        inp.eta
                    )));
                }
                Ok(ConsensusInput::new(inp.eta / params.weight_scale, inp.r.clone()))
            })
            .collect::<Result<_>>()?;

        let mut outputs = Vec::new();
        for round in 0..params.rounds {
            let broadcast: Vec<(Vec<f64>, Vec<f64>)> = self
                .states
                .iter()
                .zip(&scaled)
                .map(|(s, inp)| (node_output(s, inp), s.v.clone()))
                .collect();
            let mailbox = sync_round(self.graph, &broadcast)?;

            let mut next = Vec::with_capacity(n);
            for (i, (state, input)) in self.states.iter().zip(&scaled).enumerate() {
                let (ny, nv): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
                    mailbox.payloads(i).cloned().unzip();
                next.push(consensus_step(state, input, &ny, &nv, params.delta_c)?);
            }
            outputs = next.iter().map(|s| s.y.clone()).collect::<Vec<_>>();
            let magnitude = outputs
                .iter()
                .flatten()
                .fold(0.0_f64, |m, x| m.max(x.abs()));
            if !(magnitude <= DIVERGENCE_LIMIT) {
                return Err(Error::Diverged { round, magnitude });
            }
            on_round(round, &outputs);
            self.states = next;
        }
        Ok(outputs)
    }

    pub fn advance(
        &mut self,
        inputs: &[ConsensusInput],
        params: &ConsensusParams,
    ) -> Result<Vec<Vec<f64>>> {
        self.advance_with(inputs, params, |_, _| {})
    }
}

/// Runs a full consensus from the given `(z, v)` initial states.
///
/// Fails on a disconnected graph or when no node is active.
pub fn run_consensus(
    g: &Graph,
    inputs: &[ConsensusInput],
    init: Vec<ConsensusState>,
    params: &ConsensusParams,
) -> Result<ConsensusOutcome> {
    run_consensus_traced(g, inputs, init, params, |_, _| {})
}

pub fn run_consensus_traced(
    g: &Graph,
    inputs: &[ConsensusInput],
    init: Vec<ConsensusState>,
    params: &ConsensusParams,
    on_round: impl FnMut(usize, &[Vec<f64>]),
) -> Result<ConsensusOutcome> {
    g.ensure_connected()?;
    if !inputs.iter().any(ConsensusInput::is_active) {
        return Err(Error::AllPassive);
    }
    let mut net = ConsensusNetwork::with_states(g, init)?;
    let y = net.advance_with(inputs, params, on_round)?;
    Ok(ConsensusOutcome {
        y,
        states: net.into_states(),
    })
}

/// Closed-form target of a static run.
pub fn weighted_average(inputs: &[ConsensusInput]) -> Result<Vec<f64>> {
    let total: f64 = inputs.iter().map(|i| i.eta).sum();
    if !(total > 0.0) {
        return Err(Error::AllPassive);
    }
    let d = inputs.first().map_or(0, |i| i.r.len());
    let mut avg = vec![0.0; d];
    for inp in inputs {
        for (a, r) in avg.iter_mut().zip(&inp.r) {
            *a += inp.eta * r / total;
        }
    }
    Ok(avg)
}
