//! `formnet`: simulate, certify and sweep formation scenarios.
//!
//! Data and output paths go to stdout, diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 the subcommand's predicate failed (certificate
//! or sweep did not pass), 2 usage or configuration error, 3 a simulation
//! aborted.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use formnet_core::controller::{certify_contractivity, EPSILON_GRID, SPECTRAL_TOL};
use formnet_core::pde::{build_pde_coefficients, certify_temporal_stability, sas_sweep};
use formnet_core::scenario::{load_scenario, Scenario};
use formnet_core::sim::{self, AccelMode};
use formnet_core::Error;

const CONVERGENCE_THRESHOLD: f64 = 1e-3;

#[derive(Parser, Debug)]
#[command(
    name = "formnet",
    version,
    about = "Distributed formation tracking for port-Hamiltonian agent networks"
)]
struct Cli {
    /// Scenario file (TOML). Defaults to the built-in spacecraft preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Print the fully populated scenario and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the closed loop and write trajectory, error and summary files.
    Simulate(RunArgs),
    /// Check the contractivity and temporal-stability certificates.
    Certify(RunArgs),
    /// Simulate a range of mesh sizes and test for size-independent errors.
    Sweep(SweepArgs),
    /// Print the fully populated scenario.
    PrintConfig(RunArgs),
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Scenario file; same as --config.
    scenario: Option<PathBuf>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    #[arg(long)]
    dt: Option<f64>,

    #[arg(long)]
    t_end: Option<f64>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long, value_enum)]
    accel_mode: Option<AccelArg>,
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,

    /// Chain lengths `2,5,10` or extent lists `3x2;4x4`.
    #[arg(long, default_value = "2,5,10,25,50")]
    sizes: String,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum AccelArg {
    Exact,
    #[value(alias = "fd-accel")]
    Fd,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } | Error::NonFiniteRate { .. } | Error::Sweep { .. } => {
                Failure::Run(e.to_string())
            }
            Error::Io(e) => Failure::Run(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn scenario_for(cli: &Cli, args: &RunArgs) -> Result<Scenario, Failure> {
    let path = match (&args.scenario, &cli.config) {
        (Some(a), Some(b)) if a != b => {
            return Err(Failure::Usage(format!(
                "two scenario files given: {} and {}",
                a.display(),
                b.display()
            )))
        }
        (Some(p), _) | (None, Some(p)) => Some(p),
        (None, None) => None,
    };
    let mut s = match path {
        Some(p) => load_scenario(p)?,
        None => Scenario::sff_meo(),
    };
    if let Some(dt) = args.dt {
        s.sim.dt = dt;
    }
    if let Some(t) = args.t_end {
        s.sim.t_end = t;
    }
    if let Some(seed) = args.seed {
        s.sim.seed = seed;
    }
    if let Some(m) = args.accel_mode {
        s.sim.accel_mode = match m {
            AccelArg::Exact => AccelMode::Exact,
            AccelArg::Fd => AccelMode::FdAccel,
        };
    }
    s.build()?;
    Ok(s)
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), Failure> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let f = File::create(&path)?;
    Ok((path, BufWriter::new(f)))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<PathBuf, Failure> {
    let (path, mut w) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Run(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(path)
}

fn simulate(s: &Scenario, args: &RunArgs) -> Result<(), Failure> {
    let b = s.build()?;
    if b.network.identical_gains() {
        let r = certify_contractivity(&b.gains, &b.plant, &EPSILON_GRID, SPECTRAL_TOL)?;
        if !r.certified {
            eprintln!("warning: contractivity certificate failed for these gains");
        }
    } else {
        eprintln!("warning: per-agent gains; no network certificate available");
    }
    let log = sim::simulate(&b.network, &b.sim)?.with_scenario_hash(s.hash());

    let (traj, mut w) = create(&args.out, "trajectory.csv")?;
    log.write_csv(&mut w)?;
    w.flush()?;
    let (errs, mut w) = create(&args.out, "errors.csv")?;
    log.write_error_csv(&mut w)?;
    w.flush()?;
    let summary = log.summary();
    let json = write_json(&args.out, "summary.json", &summary)?;

    let mut out = io::stdout().lock();
    writeln!(out, "{}", traj.display())?;
    writeln!(out, "{}", errs.display())?;
    writeln!(out, "{}", json.display())?;
    eprintln!("final max position error: {:.6e}", summary.max_final_error);
    Ok(())
}

fn certify(s: &Scenario) -> Result<bool, Failure> {
    if !s.identical_gains() {
        return Err(Failure::Usage(
            "certification needs identical gains; remove gains.overrides".into(),
        ));
    }
    let b = s.build()?;
    let contractivity = certify_contractivity(&b.gains, &b.plant, &EPSILON_GRID, SPECTRAL_TOL)?;
    let coeffs = build_pde_coefficients(&b.gains, &b.plant, &[])?;
    let temporal = certify_temporal_stability(&coeffs, &b.gains, &b.plant)?;
    let ok = contractivity.certified && temporal.certified;
    let report = json!({
        "scenario_hash": s.hash(),
        "certified": ok,
        "contractivity": contractivity,
        "temporal": temporal,
    });
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| Failure::Run(e.to_string()))?;
    writeln!(out)?;
    if !contractivity.certified {
        eprintln!("contractivity certificate failed: {}", contractivity.note);
    }
    if !temporal.certified {
        eprintln!(
            "temporal certificate failed (B Hurwitz: {}, Lyapunov decrescent: {})",
            temporal.b_hurwitz, temporal.lyapunov_decrescent
        );
    }
    Ok(ok)
}

fn parse_sizes(text: &str) -> Result<Vec<Vec<usize>>, Failure> {
    let bad = |t: &str| Failure::Usage(format!("invalid size '{t}' in --sizes"));
    let items: Vec<&str> = if text.contains('x') || text.contains(';') {
        text.split(';').collect()
    } else {
        text.split(',').collect()
    };
    let sizes = items
        .into_iter()
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.split('x')
                .map(|r| {
                    r.trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|&r| r > 0)
                        .ok_or_else(|| bad(t))
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    if sizes.is_empty() {
        return Err(Failure::Usage("--sizes must list at least one size".into()));
    }
    Ok(sizes)
}

fn thread_pool() -> Result<rayon::ThreadPool, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("FORMNET_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Failure::Usage(format!(
                "FORMNET_THREADS must be a positive integer, got '{v}'"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Failure::Run(e.to_string()))
}

fn sweep(s: &Scenario, args: &SweepArgs) -> Result<bool, Failure> {
    let sizes = parse_sizes(&args.sizes)?;
    if !s.identical_gains() {
        return Err(Failure::Usage(
            "a sweep needs identical gains; remove gains.overrides".into(),
        ));
    }
    let b = s.build()?;
    let template = b.sweep_template();
    let result =
        thread_pool()?.install(|| sas_sweep(&template, &sizes, &b.sim, CONVERGENCE_THRESHOLD))?;

    let (csv, mut w) = create(&args.run.out, "sweep.csv")?;
    result.write_csv(&mut w)?;
    w.flush()?;
    let json = write_json(
        &args.run.out,
        "sweep.json",
        &json!({ "scenario_hash": s.hash(), "result": result }),
    )?;
    let mut out = io::stdout().lock();
    writeln!(out, "{}", csv.display())?;
    writeln!(out, "{}", json.display())?;
    for reason in &result.reasons {
        eprintln!("sweep: {reason}");
    }
    eprintln!(
        "sweep {}: slope {:.3e}, max peak {:.4}, bound {:.4}",
        if result.sas_pass { "passed" } else { "failed" },
        result.slope,
        result.peak_errors().iter().copied().fold(0.0, f64::max),
        result.uniform_bound
    );
    Ok(result.sas_pass)
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    let run_args = match &cli.command {
        Command::Simulate(a) | Command::Certify(a) | Command::PrintConfig(a) => a,
        Command::Sweep(a) => &a.run,
    };
    let s = scenario_for(cli, run_args)?;
    if cli.print_config || matches!(cli.command, Command::PrintConfig(_)) {
        print!("{}", s.echo());
        return Ok(true);
    }
    match &cli.command {
        Command::Simulate(a) => simulate(&s, a).map(|_| true),
        Command::Certify(_) => certify(&s),
        Command::Sweep(a) => sweep(&s, a),
        Command::PrintConfig(_) => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
