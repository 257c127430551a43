//! `deploy`: run the two-stage deployment pipeline on a scenario file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deploy_core::simulator::{
    load_scenario, run_assignment, run_id, run_pipeline, run_stage1, run_transport, write_artifacts, write_costs_csv,
    write_estimates, write_plan, write_trace_csv, write_trajectories_csv, RunOptions, Scenario,
};
use deploy_core::{Error, Result};

#[derive(Parser)]
#[command(name = "deploy", version, about = "Distributed GMM estimation, assignment and transport of service agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: estimation, assignment, transport, metrics and plots.
    Run(Common),
    /// Stage one only: targets and distributed EM.
    Stage1(Common),
    /// Stage one plus costs and the distributed simplex.
    Assign(Common),
    /// Everything up to the trajectories, without metrics or plots.
    Transport(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write every consensus round of stage one to trace.csv.
    #[arg(long)]
    trace: bool,
    /// Plan every agent with agent 0's estimate.
    #[arg(long)]
    shared_estimate: bool,
    /// Monte-Carlo samples per KLD estimate.
    #[arg(long, value_name = "N")]
    mc_samples: Option<usize>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            shared_estimate: self.shared_estimate,
            mc_samples: self.mc_samples,
            trace: self.trace,
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn staged(s: &Scenario, args: &Common, upto: &str) -> Result<()> {
    let opts = args.options();
    create_dir(&args.out)?;
    let stage1 = run_stage1(s, &opts)?;
    write_estimates(&args.out, &run_id(s, &opts), s.seed, &stage1.estimates)?;
    if args.trace {
        write_trace_csv(&args.out.join("trace.csv"), &stage1.trace)?;
    }
    println!(
        "stage 1: {} targets, mean spread {:.3e}, consensus residual {:.3e}",
        stage1.targets.len(),
        stage1.mean_spread,
        stage1.consensus_residual
    );
    if upto == "stage1" {
        return Ok(());
    }
    let assignment = run_assignment(s, &stage1, &opts)?;
    write_costs_csv(&args.out.join("costs.csv"), &assignment.costs)?;
    write_plan(&args.out.join("plan.json"), &assignment.plan)?;
    println!(
        "assignment: plan {:?}, value {:.6}, {} rounds",
        assignment.plan.as_slice(),
        assignment.value,
        assignment.rounds
    );
    if upto == "assign" {
        return Ok(());
    }
    let transport = run_transport(s, &stage1, &assignment, &opts)?;
    write_trajectories_csv(&args.out.join("trajectories.csv"), &transport.plans)?;
    let min_speed = transport.plans.iter().map(|p| p.min_speed).fold(f64::INFINITY, f64::min);
    println!("transport: {} trajectories, min speed {min_speed:.3}", transport.plans.len());
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let (args, verb) = match &cli.command {
        Command::Run(a) => (a, "run"),
        Command::Stage1(a) => (a, "stage1"),
        Command::Assign(a) => (a, "assign"),
        Command::Transport(a) => (a, "transport"),
    };
    let scenario = load_scenario(&args.scenario)?;
    if verb != "run" {
        return staged(&scenario, args, verb);
    }
    let report = run_pipeline(&scenario, &args.options())?;
    let files = write_artifacts(&report, &args.out)?;
    let m = &report.metrics;
    println!("run {} (seed {})", m.run_id, m.seed);
    println!("plan {:?}, value {:.6}", report.plan.as_slice(), m.assignment_value);
    println!(
        "mc_kld pre {:.4} +/- {:.4}, post {:.4} +/- {:.4} ({:.1} standard errors)",
        m.mc_kld_pre.value, m.mc_kld_pre.std_error, m.mc_kld_post.value, m.mc_kld_post.std_error, m.improvement_sigmas
    );
    println!("wrote {} files to {}", files.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
