//! Round records, fairness statistics, bytes-to-target and file emission.
//!
//! Outputs are `records.jsonl` (one JSON object per round record),
//! `summary.json` and `curves.csv` with the header
//! `time,mode,mean_score,variance,uplink_bytes,downlink_bytes`. Field order
//! is struct order, floats go through the standard formatter, and files are
//! written to a temporary name and renamed, so a rerun with the same seed
//! reproduces every byte.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::Metric;
use crate::sim::AlgorithmMode;
use crate::stream::DeviceId;

/// One line of metrics output: an aggregation (async modes) or a global
/// round (sync modes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub simulated_time: f64,
    pub event_index: u64,
    pub mode: AlgorithmMode,
    /// The uploading device for async aggregations; absent for sync rounds.
    pub device_id: Option<DeviceId>,
    /// Test score of the current global model on each device's held-out
    /// split, larger-is-worse orientation.
    pub per_device_scores: Vec<f64>,
    pub mean_score: f64,
    /// Population variance of the per-device scores.
    pub variance: f64,
    /// Devices whose drift test fired during this record's round.
    pub drifted_devices: Vec<DeviceId>,
    /// Per-device completed-update counts.
    pub ledger: Vec<u64>,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    /// Per-device proximal weight at record time.
    pub lambdas: Vec<f64>,
}

/// Fairness statistics over the final per-device scores. Top/bottom fields
/// are absent when the cohort has fewer than 5 devices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSummary {
    pub top20_avg: Option<f64>,
    pub top20_var: Option<f64>,
    pub bottom20_avg: Option<f64>,
    pub bottom20_var: Option<f64>,
    pub all_avg: f64,
    pub all_var: f64,
    /// Variance across devices that had drift injected; absent when none.
    pub drift_devices_var: Option<f64>,
}

/// Rank devices by final test score (better first; scores are
/// larger-is-worse) and summarize the best and worst 20% cohorts.
pub fn fairness_summary(per_device_scores: &[f64], drift_devices: &BTreeSet<DeviceId>) -> FairnessSummary {
    let k = per_device_scores.len();
    let all_avg = crate::stats::mean(per_device_scores);
    let all_var = crate::stats::population_variance(per_device_scores);
    let drift_scores: Vec<f64> = drift_devices
        .iter()
        .filter_map(|&d| per_device_scores.get(d).copied())
        .collect();
    let drift_devices_var = if drift_scores.is_empty() {
        None
    } else {
        Some(crate::stats::population_variance(&drift_scores))
    };
    if k < 5 {
        return FairnessSummary {
            top20_avg: None,
            top20_var: None,
            bottom20_avg: None,
            bottom20_var: None,
            all_avg,
            all_var,
            drift_devices_var,
        };
    }
    let mut sorted = per_device_scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let cohort = (0.2 * k as f64).ceil() as usize;
    let top = &sorted[..cohort];
    let bottom = &sorted[k - cohort..];
    FairnessSummary {
        top20_avg: Some(crate::stats::mean(top)),
        top20_var: Some(crate::stats::population_variance(top)),
        bottom20_avg: Some(crate::stats::mean(bottom)),
        bottom20_var: Some(crate::stats::population_variance(bottom)),
        all_avg,
        all_var,
        drift_devices_var,
    }
}

/// Byte counters at the first record whose mean score is at least as good
/// as the target (scores are larger-is-worse, so "as good" means `<=`).
/// `None` when the target is never reached.
pub fn bytes_to_target(records: &[RoundRecord], target_score: f64) -> Option<(u64, u64)> {
    records
        .iter()
        .find(|r| r.mean_score <= target_score)
        .map(|r| (r.uplink_bytes, r.downlink_bytes))
}

/// Per-mode roll-up for `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: AlgorithmMode,
    pub metric: Metric,
    pub records: u64,
    pub final_time: f64,
    /// Final mean score, larger-is-worse orientation.
    pub final_mean_score: f64,
    /// The same score in its natural orientation (accuracy, F1, SMAPE).
    pub final_mean_natural: f64,
    pub final_variance: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub ledger_spread: u64,
    pub fairness: FairnessSummary,
}

/// Natural-orientation value of a larger-is-worse score.
pub fn natural_orientation(metric: Metric, score: f64) -> f64 {
    match metric {
        Metric::ErrorRate => 1.0 - score,  // accuracy
        Metric::OneMinusF1 => 1.0 - score, // F1
        Metric::Smape => score,            // already reported as SMAPE
    }
}

pub fn mode_summary(
    mode: AlgorithmMode,
    metric: Metric,
    records: &[RoundRecord],
    drift_devices: &BTreeSet<DeviceId>,
) -> Option<ModeSummary> {
    let last = records.last()?;
    Some(ModeSummary {
        mode,
        metric,
        records: records.len() as u64,
        final_time: last.simulated_time,
        final_mean_score: last.mean_score,
        final_mean_natural: natural_orientation(metric, last.mean_score),
        final_variance: last.variance,
        uplink_bytes: last.uplink_bytes,
        downlink_bytes: last.downlink_bytes,
        ledger_spread: last.ledger.iter().max().copied().unwrap_or(0)
            - last.ledger.iter().min().copied().unwrap_or(0),
        fairness: fairness_summary(&last.per_device_scores, drift_devices),
    })
}

/// Top-level content of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub master_seed: u64,
    pub drift_devices: Vec<DeviceId>,
    pub modes: Vec<ModeSummary>,
}

/// Paths produced by [`emit`].
#[derive(Debug, Clone)]
pub struct EmitPaths {
    pub records: PathBuf,
    pub summary: PathBuf,
    pub curves: PathBuf,
}

/// Write `records.jsonl`, `summary.json` and `curves.csv` into `dir`,
/// overwriting atomically (write to a temp name, then rename).
pub fn emit(records: &[RoundRecord], summary: &RunSummary, dir: &Path) -> Result<EmitPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let records_path = dir.join("records.jsonl");
    let summary_path = dir.join("summary.json");
    let curves_path = dir.join("curves.csv");

    let mut jsonl = String::new();
    for r in records {
        jsonl.push_str(&serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?);
        jsonl.push('\n');
    }
    write_atomic(&records_path, jsonl.as_bytes())?;

    let mut summary_text =
        serde_json::to_string_pretty(summary).map_err(|e| Error::Config(e.to_string()))?;
    summary_text.push('\n');
    write_atomic(&summary_path, summary_text.as_bytes())?;

    let mut csv = String::from("time,mode,mean_score,variance,uplink_bytes,downlink_bytes\n");
    for r in records {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.simulated_time,
            mode_label(r.mode),
            r.mean_score,
            r.variance,
            r.uplink_bytes,
            r.downlink_bytes
        ));
    }
    write_atomic(&curves_path, csv.as_bytes())?;

    Ok(EmitPaths { records: records_path, summary: summary_path, curves: curves_path })
}

pub fn mode_label(mode: AlgorithmMode) -> &'static str {
    match mode {
        AlgorithmMode::Fedcond => "fedcond",
        AlgorithmMode::AsyncBroadcast => "async-broadcast",
        AlgorithmMode::Fedavg => "fedavg",
        AlgorithmMode::Fedprox => "fedprox",
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        f.write_all(bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        f.sync_all().map_err(|e| Error::io(tmp.display().to_string(), e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Re-parse a `records.jsonl` file (round-trip checks and tooling).
pub fn read_records_jsonl(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?);
    }
    Ok(out)
}
