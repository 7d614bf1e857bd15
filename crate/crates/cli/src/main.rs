//! Command-line driver: run single experiments, compare the four protocols
//! on one scenario, sweep a parameter grid, or calibrate the drift detector.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use clap::{Parser, Subcommand};
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use fedcond_core::config::RunConfig;
use fedcond_core::drift::{detect, DeltaMode, EvalQueue};
use fedcond_core::model::{EvalScore, Metric};
use fedcond_core::report::{self, mode_label, ModeSummary, RoundRecord, RunSummary};
use fedcond_core::rng::{tag, Xoshiro256};
use fedcond_core::sim::{self, AlgorithmMode};
use fedcond_core::Error;

#[derive(Parser)]
#[command(name = "fedcond", version, about = "Asynchronous federated learning simulator with drift detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment.
    Run {
        /// TOML config file; omitted means all defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Mode override: fedcond | async-broadcast | fedavg | fedprox.
        #[arg(long)]
        mode: Option<String>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run all four modes on one scenario with shared seeds.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run fedcond over a grid of one parameter (gamma or drift_fraction).
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Parameter to sweep: gamma | drift_fraction.
        #[arg(long)]
        param: String,
        /// Comma-separated grid values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detector false-positive and power study.
    Calibrate {
        /// Trials for the power study.
        #[arg(long, default_value_t = 200)]
        trials: u64,
        /// Stationary evaluations for the false-positive study.
        #[arg(long, default_value_t = 10_000)]
        evaluations: u64,
        #[arg(long, default_value_t = 0.05)]
        significance: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>, mode: Option<&str>) -> Result<RunConfig, Error> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_path(p)?,
        None => {
            let mut c = RunConfig::default();
            c.resolve()?;
            c
        }
    };
    if let Some(s) = seed {
        cfg.seed = Some(s);
    }
    if let Some(m) = mode {
        cfg.mode = parse_mode(m)?;
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn parse_mode(s: &str) -> Result<AlgorithmMode, Error> {
    match s {
        "fedcond" => Ok(AlgorithmMode::Fedcond),
        "async-broadcast" => Ok(AlgorithmMode::AsyncBroadcast),
        "fedavg" => Ok(AlgorithmMode::Fedavg),
        "fedprox" => Ok(AlgorithmMode::Fedprox),
        other => Err(Error::Config(format!(
            "unknown mode '{other}' (expected fedcond, async-broadcast, fedavg, fedprox)"
        ))),
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, seed, mode, out } => {
            let mut cfg = load_config(&config, seed, mode.as_deref())?;
            if let Some(o) = out {
                cfg.out = o.display().to_string();
            }
            run_single(&cfg)
        }
        Command::Compare { config, seed, out } => {
            let mut cfg = load_config(&config, seed, None)?;
            if let Some(o) = out {
                cfg.out = o.display().to_string();
            }
            run_compare(&cfg)
        }
        Command::Sweep { config, seed, param, values, out } => {
            let mut cfg = load_config(&config, seed, None)?;
            if let Some(o) = out {
                cfg.out = o.display().to_string();
            }
            run_sweep(&cfg, &param, &values)
        }
        Command::Calibrate { trials, evaluations, significance, seed } => {
            run_calibrate(trials, evaluations, significance, seed.unwrap_or(0))
        }
    }
}

fn summarize(cfg: &RunConfig, outcome: &sim::RunOutcome) -> Option<ModeSummary> {
    report::mode_summary(cfg.mode, cfg.metric, &outcome.records, &outcome.drift_devices)
}

fn run_single(cfg: &RunConfig) -> Result<(), Error> {
    let outcome = sim::run(cfg)?;
    let summary = RunSummary {
        master_seed: cfg.master_seed(),
        drift_devices: outcome.drift_devices.iter().copied().collect(),
        modes: summarize(cfg, &outcome).into_iter().collect(),
    };
    let dir = PathBuf::from(&cfg.out);
    let paths = report::emit(&outcome.records, &summary, &dir)?;
    println!(
        "{}: {} records, final mean score {:.4}, uplink {} B, downlink {} B",
        mode_label(cfg.mode),
        outcome.records.len(),
        outcome.records.last().map_or(f64::NAN, |r| r.mean_score),
        outcome.records.last().map_or(0, |r| r.uplink_bytes),
        outcome.records.last().map_or(0, |r| r.downlink_bytes),
    );
    println!("wrote {}", paths.records.display());
    Ok(())
}

fn run_compare(cfg: &RunConfig) -> Result<(), Error> {
    let modes = [
        AlgorithmMode::Fedcond,
        AlgorithmMode::AsyncBroadcast,
        AlgorithmMode::Fedavg,
        AlgorithmMode::Fedprox,
    ];
    let mut all_records: Vec<RoundRecord> = Vec::new();
    let mut summaries = Vec::new();
    let mut drift_union: BTreeSet<usize> = BTreeSet::new();
    for mode in modes {
        let mut mode_cfg = cfg.clone();
        mode_cfg.mode = mode;
        mode_cfg.resolve()?;
        let outcome = sim::run(&mode_cfg)?;
        println!(
            "{:<16} records {:>6}  final mean score {:.4}",
            mode_label(mode),
            outcome.records.len(),
            outcome.records.last().map_or(f64::NAN, |r| r.mean_score)
        );
        if let Some(s) = summarize(&mode_cfg, &outcome) {
            summaries.push(s);
        }
        drift_union.extend(outcome.drift_devices.iter().copied());
        all_records.extend(outcome.records);
    }
    let summary = RunSummary {
        master_seed: cfg.master_seed(),
        drift_devices: drift_union.into_iter().collect(),
        modes: summaries,
    };
    let dir = PathBuf::from(&cfg.out);
    let paths = report::emit(&all_records, &summary, &dir)?;
    println!("wrote {}", paths.curves.display());
    Ok(())
}

fn run_sweep(base: &RunConfig, param: &str, values: &str) -> Result<(), Error> {
    let parsed: Vec<f64> = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("sweep value '{v}' is not a number")))
        })
        .collect::<Result<_, _>>()?;
    if parsed.is_empty() {
        return Err(Error::Config("sweep needs at least one value".to_string()));
    }
    for value in parsed {
        let mut cfg = base.clone();
        match param {
            "gamma" => cfg.gamma = value,
            "drift_fraction" => cfg.drift_fraction = value,
            other => {
                return Err(Error::Config(format!(
                    "unknown sweep parameter '{other}' (expected gamma or drift_fraction)"
                )))
            }
        }
        cfg.out = format!("{}/{}-{}", base.out, param, value);
        cfg.resolve()?;
        let outcome = sim::run(&cfg)?;
        let summary = RunSummary {
            master_seed: cfg.master_seed(),
            drift_devices: outcome.drift_devices.iter().copied().collect(),
            modes: summarize(&cfg, &outcome).into_iter().collect(),
        };
        let dir = PathBuf::from(&cfg.out);
        report::emit(&outcome.records, &summary, &dir)?;
        println!(
            "{param} = {value:<6} final mean score {:.4} ({} records)",
            outcome.records.last().map_or(f64::NAN, |r| r.mean_score),
            outcome.records.len()
        );
    }
    Ok(())
}

/// Stationary false-positive rate and shift-detection power of the drift
/// test, mirroring how the simulator scores devices (per-batch error rates).
fn run_calibrate(trials: u64, evaluations: u64, significance: f64, seed: u64) -> Result<(), Error> {
    let batch = 50;
    let draw_rate = |rng: &mut Xoshiro256, p: f64| -> f64 {
        let mut wrong = 0u32;
        for _ in 0..batch {
            if rng.next_f64() < p {
                wrong += 1;
            }
        }
        wrong as f64 / batch as f64
    };

    // false positives on a stationary mean-0.3 stream
    let mut rng = Xoshiro256::substream(seed, &[tag::SAMPLING, 1]);
    let mut queue = EvalQueue::new(20, Metric::ErrorRate);
    let mut fired = 0u64;
    let mut tested = 0u64;
    for _ in 0..evaluations {
        let score = EvalScore { value: draw_rate(&mut rng, 0.3), metric: Metric::ErrorRate };
        let verdict = detect(&queue, score, significance, DeltaMode::InverseTotal, 5)?;
        if queue.len() >= 5 {
            tested += 1;
            if verdict.drifted {
                fired += 1;
            }
        }
        queue.push(score)?;
    }
    let fp_rate = fired as f64 / tested.max(1) as f64;

    // power: queue full of 0.1-rate scores, shift to 0.6, flag within 2
    let mut detected = 0u64;
    for t in 0..trials {
        let mut rng = Xoshiro256::substream(seed, &[tag::SAMPLING, 2, t]);
        let mut queue = EvalQueue::new(20, Metric::ErrorRate);
        for _ in 0..20 {
            queue.push(EvalScore { value: draw_rate(&mut rng, 0.1), metric: Metric::ErrorRate })?;
        }
        for _ in 0..2 {
            let score = EvalScore { value: draw_rate(&mut rng, 0.6), metric: Metric::ErrorRate };
            let verdict = detect(&queue, score, significance, DeltaMode::InverseTotal, 5)?;
            if verdict.drifted {
                detected += 1;
                break;
            }
            queue.push(score)?;
        }
    }
    let power = detected as f64 / trials.max(1) as f64;

    println!("detector calibration (significance {significance}, batch size {batch})");
    println!("  stationary mean-0.3 stream: fired {fired}/{tested} tests ({:.3}%)", fp_rate * 100.0);
    println!("  0.1 -> 0.6 shift, flag within 2 evaluations: {detected}/{trials} trials ({:.1}%)", power * 100.0);
    Ok(())
}
