use serde::{Deserialize, Serialize};

use crate::assignment::{build_problem, distributed_simplex, AssignmentPlan};
use crate::control::{plan_transport, TransportPlan, UnicycleState};
use crate::divergence::{cost_matrix, optimal_pose, Pose, ServiceProfile};
use crate::gmm::{distributed_em_traced, DistributedEmConfig, Mixture, TargetSet};
use crate::linalg::angle_diff;
use crate::{Error, Result};

use super::metrics::{collective_qos, mc_kld, McEstimate};
use super::{fingerprint, generate_targets, partition_targets, substream, Arena, Scenario, Stream};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Every agent plans with agent 0's estimate instead of its own.
    pub shared_estimate: bool,
    /// Overrides the scenario's Monte-Carlo sample count.
    pub mc_samples: Option<usize>,
    /// Record every consensus round of stage one.
    pub trace: bool,
}

/// One node's consensus output in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub component: usize,
    pub stream: String,
    pub round: usize,
    pub node: usize,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1 {
    pub targets: TargetSet,
    pub init: Mixture,
    pub estimates: Vec<Mixture>,
    pub weight_spread: f64,
    pub mean_spread: f64,
    pub consensus_residual: f64,
    pub trace: Vec<TraceRow>,
}

/// Target generation, partition and distributed EM.
pub fn run_stage1(s: &Scenario, opts: &RunOptions) -> Result<Stage1> {
    let points = generate_targets(&s.truth, s.targets, &mut substream(s.seed, Stream::Targets));
    let active: Vec<_> = s
        .active_agents()
        .into_iter()
        .map(|i| (i, s.agents[i].initial_state().position))
        .collect();
    let quotas = s.quotas();
    let targets = partition_targets(points, &active, quotas.as_deref(), &mut substream(s.seed, Stream::Partition))
        .map_err(|e| e.in_stage("target partition"))?;

    let n = s.agent_count();
    let init = Mixture::spread_init(s.arena.lo(), s.arena.hi(), n, &mut substream(s.seed, Stream::Init))?;
    let config = DistributedEmConfig {
        iterations: s.params.em_iterations,
        consensus: s.consensus_params(targets.counts(n).into_iter().max().unwrap_or(0)),
        cov_floor: s.cov_floor(),
    };
    let mut trace = Vec::new();
    let out = distributed_em_traced(&s.graph, &targets, &vec![init.clone(); n], &config, |r| {
        if opts.trace {
            for (node, y) in r.outputs.iter().enumerate() {
                trace.push(TraceRow {
                    iteration: r.iteration,
                    component: r.component,
                    stream: r.stream.to_string(),
                    round: r.round,
                    node,
                    y: y.clone(),
                });
            }
        }
    })
    .map_err(|e| e.in_stage("distributed EM"))?;
    Ok(Stage1 {
        targets,
        init,
        estimates: out.estimates,
        weight_spread: out.weight_spread,
        mean_spread: out.mean_spread,
        consensus_residual: out.consensus_residual,
        trace,
    })
}

fn planning_estimates<'a>(stage1: &'a Stage1, opts: &RunOptions) -> Vec<&'a Mixture> {
    stage1
        .estimates
        .iter()
        .map(|own| if opts.shared_estimate { &stage1.estimates[0] } else { own })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentStage {
    /// `costs[agent][region]`.
    pub costs: Vec<Vec<f64>>,
    pub plan: AssignmentPlan,
    pub value: f64,
    pub rounds: usize,
}

/// Cost matrix from each agent's estimate, then the distributed simplex.
pub fn run_assignment(s: &Scenario, stage1: &Stage1, opts: &RunOptions) -> Result<AssignmentStage> {
    let profiles = s.profiles()?;
    let estimates = planning_estimates(stage1, opts);
    let costs = cost_matrix(&profiles, &estimates).map_err(|e| e.in_stage("assignment costs"))?;
    let (problem, columns) = build_problem(costs.clone())?;
    let out = distributed_simplex(&s.graph, &columns, problem.big_m()).map_err(|e| e.in_stage("distributed simplex"))?;
    if !out.agreed() {
        return Err(Error::InvalidInput("agents finished with different bases".into()).in_stage("distributed simplex"));
    }
    let plan = out
        .plans()
        .map_err(|e| e.in_stage("distributed simplex"))?
        .swap_remove(0);
    Ok(AssignmentStage {
        value: problem.value(&plan),
        costs,
        plan,
        rounds: out.rounds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportStage {
    /// Optimal pose of each agent in its assigned component.
    pub destinations: Vec<Pose>,
    pub plans: Vec<TransportPlan>,
}

impl TransportStage {
    /// Where each agent actually ends up.
    pub fn final_poses(&self) -> Vec<Pose> {
        self.plans
            .iter()
            .map(|p| {
                let s = p.trajectory.last().state;
                Pose::new(s.position, s.heading)
            })
            .collect()
    }
}

/// Drives every agent to the optimal pose in its assigned component.
pub fn run_transport(
    s: &Scenario,
    stage1: &Stage1,
    assignment: &AssignmentStage,
    opts: &RunOptions,
) -> Result<TransportStage> {
    let profiles = s.profiles()?;
    let estimates = planning_estimates(stage1, opts);
    let mut destinations = Vec::new();
    let mut plans = Vec::new();
    for (i, agent) in s.agents.iter().enumerate() {
        let component = &estimates[i].components()[assignment.plan.region_of(i)];
        let (pose, _) = optimal_pose(&profiles[i], component)?;
        let plan = plan_transport(&agent.initial_state(), &pose, s.params.v_star, s.params.tau, s.params.dt)
            .map_err(|e| e.in_stage("transport"))?;
        destinations.push(pose);
        plans.push(plan);
    }
    Ok(TransportStage { destinations, plans })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub run_id: String,
    pub seed: u64,
    /// `KL(agent 0's estimate || QoS at the initial poses)`.
    pub mc_kld_pre: McEstimate,
    /// `KL(agent 0's estimate || QoS at the final poses)`.
    pub mc_kld_post: McEstimate,
    /// The same two divergences measured from the ground truth.
    pub mc_kld_truth_pre: McEstimate,
    pub mc_kld_truth_post: McEstimate,
    /// `(pre - post)` in units of the combined standard error.
    pub improvement_sigmas: f64,
    /// Largest gap between a node's consensus output and the exact weighted
    /// average, over the last EM loop.
    pub consensus_residual: f64,
    /// Largest distance between two agents' means of one component.
    pub agreement_spread: f64,
    /// Largest difference between two agents' raw weights of one component.
    pub weight_spread: f64,
    pub assignment_value: f64,
    pub simplex_rounds: usize,
    pub min_speed: f64,
    pub max_terminal_position_error: f64,
    pub max_terminal_heading_error: f64,
    pub shared_estimate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    pub name: String,
    pub arena: Arena,
    pub profiles: Vec<ServiceProfile>,
    pub initial: Vec<UnicycleState>,
    pub targets: TargetSet,
    pub estimates: Vec<Mixture>,
    pub costs: Vec<Vec<f64>>,
    pub plan: AssignmentPlan,
    pub destinations: Vec<Pose>,
    pub final_poses: Vec<Pose>,
    pub transports: Vec<TransportPlan>,
    pub metrics: Metrics,
    pub trace: Vec<TraceRow>,
}

impl RunReport {
    /// Collective QoS at the final poses.
    pub fn final_qos(&self) -> Result<Mixture> {
        collective_qos(&self.final_poses, &self.profiles)
    }
}

/// Fingerprint of the scenario and the options that change the results.
pub fn run_id(s: &Scenario, opts: &RunOptions) -> String {
    let key = format!(
        "{}|shared={}|mc={:?}",
        serde_json::to_string(s).expect("scenario serializes"),
        opts.shared_estimate,
        opts.mc_samples
    );
    fingerprint(key.as_bytes())
}

/// Runs both stages and measures the result.
pub fn run_pipeline(s: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    s.validate()?;
    let stage1 = run_stage1(s, opts)?;
    let assignment = run_assignment(s, &stage1, opts)?;
    let transport = run_transport(s, &stage1, &assignment, opts)?;

    let profiles = s.profiles()?;
    let initial = s.initial_states();
    let initial_poses: Vec<Pose> = initial.iter().map(|u| Pose::new(u.position, u.heading)).collect();
    let final_poses = transport.final_poses();
    let q_pre = collective_qos(&initial_poses, &profiles)?;
    let q_post = collective_qos(&final_poses, &profiles)?;
    let samples = opts.mc_samples.unwrap_or(s.params.mc_samples);
    let reference = &stage1.estimates[0];
    let kld = |p: &Mixture, q: &Mixture, stream| {
        mc_kld(p, q, samples, &mut substream(s.seed, stream)).map_err(|e| e.in_stage("metrics"))
    };
    let pre = kld(reference, &q_pre, Stream::McPre)?;
    let post = kld(reference, &q_post, Stream::McPost)?;
    let truth_pre = kld(&s.truth, &q_pre, Stream::McTruthPre)?;
    let truth_post = kld(&s.truth, &q_post, Stream::McTruthPost)?;

    let mut max_pos = 0.0_f64;
    let mut max_heading = 0.0_f64;
    for (want, got) in transport.destinations.iter().zip(&final_poses) {
        max_pos = max_pos.max((want.position - got.position).norm());
        max_heading = max_heading.max(angle_diff(got.heading, want.heading).abs());
    }
    let id = run_id(s, opts);
    let metrics = Metrics {
        run_id: id.clone(),
        seed: s.seed,
        improvement_sigmas: (pre.value - post.value) / pre.std_error.hypot(post.std_error),
        mc_kld_pre: pre,
        mc_kld_post: post,
        mc_kld_truth_pre: truth_pre,
        mc_kld_truth_post: truth_post,
        consensus_residual: stage1.consensus_residual,
        agreement_spread: stage1.mean_spread,
        weight_spread: stage1.weight_spread,
        assignment_value: assignment.value,
        simplex_rounds: assignment.rounds,
        min_speed: transport.plans.iter().map(|p| p.min_speed).fold(f64::INFINITY, f64::min),
        max_terminal_position_error: max_pos,
        max_terminal_heading_error: max_heading,
        shared_estimate: opts.shared_estimate,
    };
    Ok(RunReport {
        run_id: id,
        seed: s.seed,
        name: s.name.clone(),
        arena: s.arena,
        profiles,
        initial,
        targets: stage1.targets,
        estimates: stage1.estimates,
        costs: assignment.costs,
        plan: assignment.plan,
        destinations: transport.destinations,
        final_poses,
        transports: transport.plans,
        metrics,
        trace: stage1.trace,
    })
}
