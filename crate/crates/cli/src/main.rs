//! Experiment driver: composes the pipeline (graph -> cubes -> Whitney ->
//! corona -> regularized distance -> lifts -> oscillation checks -> heat
//! solve -> Carleson/packing tables) from a JSON config and emits JSON
//! reports plus CSV tables.
//!
//! Exit codes: 0 all checks passed, 1 at least one hard inequality failed,
//! 2 usage or config error.

mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "parcme", version, about)]
struct Cli {
    /// Worker-thread cap for the parallel sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for randomized sweeps (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Dyadic cube tree on the graph: build, verify, export.
    Cubes(StageArgs),
    /// Whitney decomposition of the graph complement.
    Whitney(StageArgs),
    /// Corona input validation, coherency, bilateral approximation.
    Corona(StageArgs),
    /// Whitney family of the h-field and the regularized distance bounds.
    Regdist(StageArgs),
    /// Graph lifts, the smoothed pair, and the domain verification sweeps.
    Lift(StageArgs),
    /// Half-derivative cross-checks, BMO norms, flatness functionals.
    Bmo(StageArgs),
    /// Heat solve with scheme-exactness checks.
    Solve(StageArgs),
    /// Carleson functional table over boundary balls.
    Cme(StageArgs),
    /// Region-energy packing sums.
    Pack(StageArgs),
    /// Every stage in order on the shared fixtures.
    All(StageArgs),
    /// Run one stage by name (same as the subcommand of that name).
    Run {
        #[arg(long)]
        stage: String,
        #[command(flatten)]
        args: StageArgs,
    },
    /// Refinement-drift summary between two stage reports.
    Compare {
        report_a: PathBuf,
        report_b: PathBuf,
        /// Output path for the drift table (stdout summary either way).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args, Clone)]
struct StageArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for reports and tables.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .is_err()
        {
            eprintln!("warning: thread pool already initialized");
        }
    }
    let run_stage = |name: &str, args: &StageArgs| -> ExitCode {
        match stages::run_stage(name, &args.config, &args.out, cli.seed) {
            Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
            Ok(failures) => {
                for f in &failures {
                    eprintln!("FAIL: {f}");
                }
                ExitCode::from(1)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        }
    };
    match &cli.cmd {
        Cmd::Cubes(a) => run_stage("cubes", a),
        Cmd::Whitney(a) => run_stage("whitney", a),
        Cmd::Corona(a) => run_stage("corona", a),
        Cmd::Regdist(a) => run_stage("regdist", a),
        Cmd::Lift(a) => run_stage("lift", a),
        Cmd::Bmo(a) => run_stage("bmo", a),
        Cmd::Solve(a) => run_stage("solve", a),
        Cmd::Cme(a) => run_stage("cme", a),
        Cmd::Pack(a) => run_stage("pack", a),
        Cmd::All(a) => run_stage("all", a),
        Cmd::Run { stage, args } => run_stage(stage, args),
        Cmd::Compare {
            report_a,
            report_b,
            out,
        } => match stages::compare(report_a, report_b, out.as_deref()) {
            Ok(max) => {
                println!("max relative drift: {max}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
