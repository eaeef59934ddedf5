use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};

use formtrack::io;
use formtrack::optimality::verify;
use formtrack::scenario::{load_scenario, Scenario};
use formtrack::sim::{reference_for, run_distributed, run_pronto, RunOptions};
use formtrack::Result;

#[derive(Parser)]
#[command(
    name = "formtrack",
    version,
    about = "Formation tracking for double-integrator agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Distributed,
    Pronto,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectory, metrics and summary files.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario step (s).
        #[arg(long)]
        dt: Option<f64>,
        /// Also write the costate samples.
        #[arg(long)]
        log_costate: bool,
        /// Evaluate agents on the thread pool; output is identical to a serial run.
        #[arg(long)]
        parallel: bool,
    },
    /// Check first-order and curvature conditions along a trajectory.
    Verify {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output file; defaults to verify.csv next to the trajectory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics and summary for a trajectory.
    Metrics {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the trajectory's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn sibling_dir(traj: &Path) -> PathBuf {
    traj.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_with_traj(
    config: &Path,
    traj: &Path,
) -> Result<(Scenario, formtrack::dynamics::Trajectory)> {
    let scn = load_scenario(config)?;
    let trajectory = io::read_trajectory(traj, scn.spec.n(), scn.spec.dim())?;
    Ok((scn, trajectory))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            mode,
            out,
            dt,
            log_costate,
            parallel,
        } => {
            let mut scn = load_scenario(&config)?;
            if let Some(dt) = dt {
                scn = scn.with_dt(dt)?;
            }
            let opts = RunOptions {
                parallel,
                log_costate,
            };
            let record = match mode {
                Mode::Distributed => run_distributed(&scn, opts)?,
                Mode::Pronto => {
                    let (record, report) = run_pronto(&scn, opts)?;
                    std::fs::create_dir_all(&out)?;
                    io::write_iterations(out.join(io::ITERATIONS_FILE), &report.history)?;
                    info!(
                        "optimizer: {} iterations, {:?}, cost {}",
                        report.iterations,
                        report.termination,
                        report.final_cost()
                    );
                    record
                }
            };
            let (grid, reference) = reference_for(&scn, &record.trajectory)?;
            let obj = grid.objective(&reference)?;
            let summary = io::save_record(&out, &record, &obj)?;
            for s in &summary.settling_times {
                info!("settling time at {}: {:?}", s.delta, s.time);
            }
            Ok(())
        }
        Command::Verify { traj, config, out } => {
            let (scn, trajectory) = load_with_traj(&config, &traj)?;
            let (grid, reference) = reference_for(&scn, &trajectory)?;
            let obj = grid.objective(&reference)?;
            let rows = verify(&trajectory, &obj);
            let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
            let insufficient = rows.iter().filter(|r| !r.sufficient).count();
            info!(
                "max stationarity residual {worst}, {insufficient} samples with negative curvature"
            );
            let path = out.unwrap_or_else(|| sibling_dir(&traj).join(io::VERIFY_FILE));
            io::write_verify(path, &rows)
        }
        Command::Metrics { traj, config, out } => {
            let (scn, trajectory) = load_with_traj(&config, &traj)?;
            let (grid, reference) = reference_for(&scn, &trajectory)?;
            let obj = grid.objective(&reference)?;
            let (series, summary) = io::evaluate(&trajectory, &obj, &grid.spec)?;
            let dir = out.unwrap_or_else(|| sibling_dir(&traj));
            std::fs::create_dir_all(&dir)?;
            io::write_metrics(dir.join(io::METRICS_FILE), &series)?;
            io::write_summary(dir.join(io::SUMMARY_FILE), &summary)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
