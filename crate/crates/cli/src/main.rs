use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use monxxz::analysis::CollapseBounds;
use monxxz::config::ExperimentConfig;
use monxxz::experiment::{self, AnalysisOptions, ExperimentError, ExperimentResult};
use monxxz::io;
use monxxz::trajectory::TrajectoryError;

#[derive(Parser)]
#[command(name = "monxxz", version, about = "Monitored XXZ chain trajectories and spreading analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides run.master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides run.n_traj.
    #[arg(long)]
    traj: Option<usize>,
    /// Overrides run.chi_max.
    #[arg(long)]
    chi: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Derivatives,
    Exponent,
    Collapse,
    EntropyCollapse,
}

#[derive(Subcommand)]
enum Command {
    /// Single trajectories with measurement records.
    Evolve(RunArgs),
    /// Trajectory-averaged profiles and entropies for every grid point.
    Ensemble(RunArgs),
    /// Like `ensemble`, but keeps grid points whose outputs are already
    /// recorded in the manifest.
    Sweep(RunArgs),
    /// Analysis of ensemble outputs.
    Analyze {
        /// Directory holding an ensemble manifest.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = monxxz::analysis::exponent::DEFAULT_T_MIN)]
        t_min: f64,
        #[arg(long)]
        t_max: Option<f64>,
        /// Restrict to one system size.
        #[arg(long)]
        sites: Option<usize>,
        /// Restrict to one measurement rate.
        #[arg(long)]
        p: Option<f64>,
        /// Threads for the collapse search.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Compares MPS and dense trajectories on the configured grid.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
        /// Also write `oracle_check.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn default_workers() -> usize { std::thread::available_parallelism().map_or(1, |n| n.get()) }

fn load(args: &RunArgs) -> ExperimentResult<ExperimentConfig> {
    let config = ExperimentConfig::load(&args.config)?.with_overrides(args.seed, args.traj, args.chi);
    config.validate()?;
    Ok(config)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> ExperimentResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or_else(default_workers).max(1))
        .build()
        .map_err(|e| ExperimentError::from(TrajectoryError::Pool(e.to_string())))?;
    Ok(pool.install(f))
}

fn run(cli: Cli) -> ExperimentResult<ExitCode> {
    match cli.command {
        Command::Evolve(args) => {
            let config = load(&args)?;
            let m = experiment::run_evolve(&config, Some(&args.config), &args.out, args.workers.unwrap_or_else(default_workers))?;
            eprintln!("wrote {} trajectory files to {}", m.runs.iter().map(|r| r.outputs.len()).sum::<usize>(), args.out.display());
        }
        Command::Ensemble(args) => sweep(&args, false)?,
        Command::Sweep(args) => sweep(&args, true)?,
        Command::Analyze { input, out, mode, t_min, t_max, sites, p, workers } => {
            let opts = AnalysisOptions { t_min, t_max, sites, p_unit: p, ..Default::default() };
            analyze(&input, &out, mode, &opts, workers)?;
        }
        Command::OracleCheck { config, out, seed } => {
            let c = ExperimentConfig::load(&config)?.with_overrides(seed, None, None);
            let report = experiment::run_oracle_check(&c)?;
            if let Some(dir) = out {
                io::write_json(&dir.join("oracle_check.json"), &report)?;
            }
            for chk in &report.checks {
                println!(
                    "L={} p={} steps={} measurements={} max|dZ|={:e} max|dS|={:e} {}",
                    chk.sites,
                    chk.p_unit,
                    chk.steps,
                    chk.measurements,
                    chk.max_dev_z,
                    chk.max_dev_entropy,
                    if chk.pass { "PASS" } else { "FAIL" }
                );
            }
            for l in &report.skipped_sites {
                println!("L={l} skipped (beyond dense limit)");
            }
            println!("{}", if report.pass { "PASS" } else { "FAIL" });
            if !report.pass {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: &RunArgs, resume: bool) -> ExperimentResult<()> {
    let config = load(args)?;
    let workers = args.workers.unwrap_or_else(default_workers);
    let report = experiment::run_sweep(&config, Some(&args.config), &args.out, workers, resume)?;
    for run in &report.manifest.runs {
        let stem = experiment::run_stem(run.sites, run.p_unit);
        let status = if report.skipped.contains(&stem) { "kept" } else { "ran" };
        eprintln!(
            "{stem}: {status}, {} trajectories, {} aborted, max chi {}",
            run.completed, run.aborted, run.max_bond_dim
        );
    }
    Ok(())
}

fn analyze(input: &Path, out: &Path, mode: Mode, opts: &AnalysisOptions, workers: Option<usize>) -> ExperimentResult<()> {
    match mode {
        Mode::Derivatives => print_json(&experiment::analyze_derivatives(input, out, opts)?),
        Mode::Exponent => print_json(&experiment::analyze_exponent(input, out, opts)?),
        Mode::Collapse => {
            let r = with_pool(workers, || experiment::analyze_collapse(input, out, opts, &CollapseBounds::default()))??;
            print_json(&serde_json::json!({ "params": r.params, "cost": r.cost, "ci": r.ci, "window": r.window }));
        }
        Mode::EntropyCollapse => {
            let r = with_pool(workers, || experiment::analyze_entropy_collapse(input, out, opts, None))??;
            print_json(&serde_json::json!({ "params": r.params, "cost": r.cost, "ci": r.ci, "window": r.window }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &ExperimentError) -> u8 { e.exit_code() as u8 }
