//! Command line front end for closed-loop scenario simulation.
//!
//! Exit codes: 0 success, 1 the run collided, 2 configuration error,
//! 3 solver breakdown (a step hit the iteration limit).
//! Log verbosity comes from the FASM_LOG_LEVEL environment variable
//! (error, info, debug).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use fasm_core::harness::{compute_metrics, max_state_deviation, run_scenario, write_csv, RunMetrics};
use fasm_core::observer::{build_phi, lyapunov_certificate, spectral_radius};
use fasm_core::scenario::{apply_override, scenario_from_value, Scenario};

#[derive(Parser)]
#[command(
    name = "fasm",
    about = "Simulate a manipulator tracking poses among moving obstacles \
             under flexible safety constraints"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and print run metrics as JSON.
    Run(RunArgs),
    /// Run a scenario in both controller modes and print both metrics.
    Compare(CompareArgs),
    /// Run a scenario once per value of one overridden key.
    Sweep(SweepArgs),
    /// Load and validate a scenario without running it.
    Validate(CommonArgs),
    /// Print the observer error certificate for a scenario or explicit
    /// parameters.
    Certificate(CertArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Override a scenario field, e.g. --set controller.horizon=7.
    /// Repeatable; applied in order before validation.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Write the trajectory table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Controller mode shorthand (fasm or baseline).
    #[arg(long)]
    mode: Option<String>,
    /// Seed shorthand.
    #[arg(long)]
    seed: Option<u64>,
    /// Log real solve times in the trajectory table (makes it
    /// non-reproducible byte for byte).
    #[arg(long)]
    timing: bool,
    /// Run twice and report the max joint-angle deviation between the two
    /// runs (a determinism audit).
    #[arg(long)]
    twin: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Write trajectory tables to this directory (one file per mode).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dotted path of the swept key, e.g. controller.p_gamma.
    #[arg(long)]
    key: String,
    /// Comma-separated values for the swept key.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

#[derive(Args)]
struct CertArgs {
    /// Take observer parameters from this scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Observer gains, comma separated (implies --t-s and --eta).
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long)]
    t_s: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Measurement noise bound used to report the inflation radius.
    #[arg(long)]
    delta: Option<f64>,
}

const EXIT_OK: i32 = 0;
const EXIT_COLLISION: i32 = 1;
const EXIT_CONFIG: i32 = 2;
const EXIT_SOLVER: i32 = 3;

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("FASM_LOG_LEVEL", "error"),
    )
    .init();
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Compare(args) => cmd_compare(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Validate(args) => cmd_validate(args),
        Cmd::Certificate(args) => cmd_certificate(args),
    };
    std::process::exit(code);
}

fn config_err(msg: impl std::fmt::Display) -> i32 {
    eprintln!("configuration error: {msg}");
    EXIT_CONFIG
}

/// Loads a scenario applying --set overrides plus any extra assignments.
fn load(common: &CommonArgs, extra: &[String]) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(&common.scenario)
        .map_err(|e| format!("{}: {e}", common.scenario.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", common.scenario.display()))?;
    for assignment in common.set.iter().chain(extra.iter()) {
        apply_override(&mut value, assignment).map_err(|e| e.to_string())?;
    }
    let base = common.scenario.parent().unwrap_or_else(|| Path::new("."));
    scenario_from_value(&value, base).map_err(|e| e.to_string())
}

/// Exit code implied by a finished run.
fn verdict(metrics: &RunMetrics) -> i32 {
    if metrics.collision {
        EXIT_COLLISION
    } else if metrics.status_counts.contains_key("max_iter") {
        EXIT_SOLVER
    } else {
        EXIT_OK
    }
}

fn cmd_run(args: RunArgs) -> i32 {
    let mut extra = Vec::new();
    if let Some(mode) = &args.mode {
        extra.push(format!("controller.mode={mode}"));
    }
    if let Some(seed) = args.seed {
        extra.push(format!("seed={seed}"));
    }
    if args.timing {
        extra.push("log_timing=true".to_string());
    }
    let scenario = match load(&args.common, &extra) {
        Ok(s) => s,
        Err(e) => return config_err(e),
    };
    let log = match run_scenario(&scenario) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("run failed: {e}");
            return EXIT_SOLVER;
        }
    };
    if let Some(out) = &args.out {
        let file = match std::fs::File::create(out) {
            Ok(f) => f,
            Err(e) => return config_err(format!("{}: {e}", out.display())),
        };
        if let Err(e) = write_csv(&log, std::io::BufWriter::new(file)) {
            eprintln!("writing {}: {e}", out.display());
            return EXIT_SOLVER;
        }
    }
    let metrics = compute_metrics(&log, &scenario);
    let mut doc = serde_json::to_value(&metrics).expect("metrics serialise");
    if args.twin {
        match run_scenario(&scenario) {
            Ok(second) => {
                doc["twin_max_deviation"] =
                    serde_json::json!(max_state_deviation(&log, &second));
            }
            Err(e) => {
                eprintln!("twin run failed: {e}");
                return EXIT_SOLVER;
            }
        }
    }
    println!("{}", serde_json::to_string_pretty(&doc).expect("metrics serialise"));
    verdict(&metrics)
}

fn cmd_compare(args: CompareArgs) -> i32 {
    let mut results = serde_json::Map::new();
    let mut fasm_metrics: Option<RunMetrics> = None;
    for mode in ["fasm", "baseline"] {
        let extra = vec![format!("controller.mode={mode}")];
        let scenario = match load(&args.common, &extra) {
            Ok(s) => s,
            Err(e) => return config_err(e),
        };
        let log = match run_scenario(&scenario) {
            Ok(l) => l,
            Err(e) => {
                eprintln!("{mode} run failed: {e}");
                return EXIT_SOLVER;
            }
        };
        if let Some(dir) = &args.out_dir {
            if let Err(e) = std::fs::create_dir_all(dir) {
                return config_err(format!("{}: {e}", dir.display()));
            }
            let path = dir.join(format!("{}_{mode}.csv", log.scenario_name));
            match std::fs::File::create(&path) {
                Ok(f) => {
                    if let Err(e) = write_csv(&log, std::io::BufWriter::new(f)) {
                        eprintln!("writing {}: {e}", path.display());
                        return EXIT_SOLVER;
                    }
                }
                Err(e) => return config_err(format!("{}: {e}", path.display())),
            }
        }
        let metrics = compute_metrics(&log, &scenario);
        results.insert(
            mode.to_string(),
            serde_json::to_value(&metrics).expect("metrics serialise"),
        );
        if mode == "fasm" {
            fasm_metrics = Some(metrics);
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::Value::Object(results))
            .expect("metrics serialise")
    );
    verdict(&fasm_metrics.expect("fasm mode always runs"))
}

fn cmd_sweep(args: SweepArgs) -> i32 {
    if args.values.is_empty() {
        return config_err("sweep needs at least one value");
    }
    let mut rows = Vec::new();
    let mut worst = EXIT_OK;
    for v in &args.values {
        let extra = vec![format!("{}={v}", args.key)];
        let scenario = match load(&args.common, &extra) {
            Ok(s) => s,
            Err(e) => return config_err(e),
        };
        let log = match run_scenario(&scenario) {
            Ok(l) => l,
            Err(e) => {
                eprintln!("run with {}={v} failed: {e}", args.key);
                return EXIT_SOLVER;
            }
        };
        let metrics = compute_metrics(&log, &scenario);
        if metrics.status_counts.contains_key("max_iter") {
            worst = worst.max(EXIT_SOLVER);
        }
        rows.push(serde_json::json!({
            "value": v,
            "metrics": serde_json::to_value(&metrics).expect("metrics serialise"),
        }));
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::Value::Array(rows)).expect("rows serialise")
    );
    worst
}

fn cmd_validate(args: CommonArgs) -> i32 {
    match load(&args, &[]) {
        Ok(scenario) => {
            let cfg = &scenario.config;
            let steps = ((cfg.duration / cfg.t_s).round() as usize).max(1);
            let doc = serde_json::json!({
                "ok": true,
                "name": cfg.name,
                "joints": scenario.chain.n(),
                "critical_points": scenario.chain.critical_points().len(),
                "obstacles": cfg.safety.obstacles.len(),
                "steps": steps,
                "horizon": cfg.controller.horizon,
                "mode": match cfg.controller.mode {
                    fasm_core::scenario::ModeConfig::Fasm => "fasm",
                    fasm_core::scenario::ModeConfig::Baseline => "baseline",
                },
            });
            println!("{}", serde_json::to_string_pretty(&doc).expect("serialise"));
            EXIT_OK
        }
        Err(e) => config_err(e),
    }
}

fn cmd_certificate(args: CertArgs) -> i32 {
    let (alphas, t_s, eta, delta) = if let Some(path) = &args.scenario {
        let common = CommonArgs { scenario: path.clone(), set: Vec::new() };
        match load(&common, &[]) {
            Ok(s) => (
                s.config.observer.alphas.clone(),
                s.config.t_s,
                s.config.observer.eta,
                args.delta.unwrap_or(s.config.observer.delta),
            ),
            Err(e) => return config_err(e),
        }
    } else {
        if args.alphas.is_empty() || args.t_s.is_none() || args.eta.is_none() {
            return config_err("certificate needs --scenario or --alphas, --t-s and --eta");
        }
        (
            args.alphas.clone(),
            args.t_s.unwrap(),
            args.eta.unwrap(),
            args.delta.unwrap_or(0.0),
        )
    };
    let phi = build_phi(&alphas, t_s);
    let rho = spectral_radius(&phi);
    match lyapunov_certificate(&phi, eta) {
        Ok(cert) => {
            let doc = serde_json::json!({
                "alphas": alphas,
                "t_s": t_s,
                "eta": eta,
                "spectral_radius": rho,
                "c1": cert.c1,
                "c2": cert.c2,
                "phi0": cert.phi0(),
                "delta": delta,
                "r_d": delta * cert.phi0(),
            });
            println!("{}", serde_json::to_string_pretty(&doc).expect("serialise"));
            EXIT_OK
        }
        Err(e) => config_err(format!("{e} (spectral radius {rho}, eta {eta})")),
    }
}
