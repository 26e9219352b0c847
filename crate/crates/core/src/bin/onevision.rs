use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;

use clap::{Args, Parser, Subcommand};

use onevision::frameworks::FrameworkKind;
use onevision::lti_verify::{verify_all, VerifyOptions};
use onevision::serve::{serve, ServeOptions};
use onevision::sim::{
    format_float, load_config, run_simulation, run_sweep, RunConfig, SweepAxis, TaskKind,
};
use onevision::Error;

/// Delay-compensating distributed fleet control: simulations, sweeps,
/// verification and a live teleoperation server.
#[derive(Parser)]
#[command(name = "onevision", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its metrics and run log.
    Run(RunArgs),
    /// Sweep one parameter over values, frameworks and seeds.
    Sweep(SweepArgs),
    /// Run the linear-system verification suite.
    VerifyLti(VerifyArgs),
    /// Serve a live formation fleet over a websocket.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    framework: Option<String>,
    /// Run-config file; absent keys take the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; files land in <out>/<task>/<framework>/seed<k>/.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Also write the per-tick trajectory as trajectory.csv.
    #[arg(long)]
    trajectory: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// One of noise, delay, model_error, horizon, disturbance.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    values: Vec<f64>,
    /// Seeds 1..=n per cell.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long)]
    task: Option<String>,
    /// Comma-separated framework ids; all by default.
    #[arg(long, value_delimiter = ',')]
    frameworks: Vec<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Directory for report.csv and summary.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random systems in the anchor-exactness check.
    #[arg(long, default_value_t = 50)]
    systems: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "formation-switching")]
    task: String,
    #[arg(long)]
    framework: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Wall-clock multiplier; 0.5 is slow motion.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Stop after this many ticks.
    #[arg(long)]
    ticks: Option<u64>,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownId { .. } | Error::Config { .. } => Failure::Usage(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn base_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => load_config(p).map_err(|e| match e {
            Error::Io(io) => Failure::Usage(format!("{}: {io}", p.display())),
            other => Failure::from(other),
        }),
        None => Ok(RunConfig::default()),
    }
}

fn metrics_csv(seed: u64, m: &onevision::sim::Metrics) -> String {
    let cell = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    format!(
        "seed,avg_regret,log_loss,avg_distance,avg_deviation\n{seed},{},{},{},{}\n",
        format_float(m.avg_regret),
        format_float(m.log_loss),
        cell(m.avg_distance),
        cell(m.avg_deviation)
    )
}

fn missing(flag: &str, registered: &[&str]) -> Failure {
    Failure::Usage(format!(
        "missing {flag} (registered: {})",
        registered.join(", ")
    ))
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = base_config(args.config.as_deref())?;
    let task = args
        .task
        .ok_or_else(|| missing("--task", &TaskKind::ALL.map(|k| k.id())))?;
    let framework = args
        .framework
        .ok_or_else(|| missing("--framework", &FrameworkKind::ALL.map(|k| k.id())))?;
    cfg.task = TaskKind::from_id(&task)?;
    cfg.framework = FrameworkKind::from_id(&framework)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let log = run_simulation(&cfg)?;
    let dir = args
        .out
        .join(cfg.task.id())
        .join(cfg.framework.id())
        .join(format!("seed{}", cfg.seed));
    fs::create_dir_all(&dir)?;
    let csv = metrics_csv(cfg.seed, &log.metrics);
    fs::write(dir.join("metrics.csv"), &csv)?;
    log.write_to(BufWriter::new(File::create(dir.join("run.ovlog"))?))?;
    if args.trajectory {
        log.write_trajectory_csv(BufWriter::new(File::create(dir.join("trajectory.csv"))?))?;
    }
    if log.stats.causality_violations > 0 {
        return Err(Failure::Run(format!(
            "{} causality violations",
            log.stats.causality_violations
        )));
    }
    print!("{csv}");
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let mut cfg = base_config(args.config.as_deref())?;
    let axis = SweepAxis::from_id(&args.axis)?;
    if let Some(task) = &args.task {
        cfg.task = TaskKind::from_id(task)?;
    }
    let frameworks = if args.frameworks.is_empty() {
        FrameworkKind::ALL.to_vec()
    } else {
        args.frameworks
            .iter()
            .map(|f| FrameworkKind::from_id(f))
            .collect::<Result<_, _>>()?
    };
    if args.seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    for &v in &args.values {
        axis.check(v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let table = run_sweep(&cfg, axis, &args.values, &frameworks, args.seeds)?;
    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            table.write_csv(BufWriter::new(File::create(path)?))?;
        }
        None => table.write_csv(io::stdout().lock())?,
    }
    let failed = table.data_rows().filter(|r| r.failed > 0).count();
    if failed > 0 {
        log::warn!("{failed} sweep runs failed");
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<(), Failure> {
    let opts = VerifyOptions {
        anchor_systems: args.systems,
        seed: args.seed,
        ..Default::default()
    };
    let report = verify_all(&opts)?;
    let summary = report.summary();
    print!("{summary}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        report.write_csv(BufWriter::new(File::create(dir.join("report.csv"))?))?;
        fs::write(dir.join("summary.txt"), &summary)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Run("verification checks failed".into()))
    }
}

fn serve_cmd(args: ServeArgs) -> Result<(), Failure> {
    let mut cfg = base_config(args.config.as_deref())?;
    cfg.task = TaskKind::from_id(&args.task)?;
    if !cfg.task.is_formation() {
        return Err(Failure::Usage(format!(
            "serve needs a formation task, got {}",
            cfg.task
        )));
    }
    if let Some(f) = &args.framework {
        cfg.framework = FrameworkKind::from_id(f)?;
    }
    if !(args.speed > 0.0 && args.speed.is_finite()) {
        return Err(Failure::Usage(format!(
            "--speed must be positive, got {}",
            args.speed
        )));
    }
    let listener = TcpListener::bind(("0.0.0.0", args.port))
        .map_err(|e| Failure::Run(format!("cannot listen on port {}: {e}", args.port)))?;
    log::info!("serving {} on ws://{}", cfg.task, listener.local_addr()?);
    eprintln!("listening on ws://{}", listener.local_addr()?);
    let stop = AtomicBool::new(false);
    let opts = ServeOptions {
        speed: args.speed,
        max_ticks: args.ticks,
    };
    serve(listener, &cfg, opts, &stop)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ONEVISION_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::VerifyLti(a) => verify(a),
        Command::Serve(a) => serve_cmd(a),
    };
    let _ = io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
