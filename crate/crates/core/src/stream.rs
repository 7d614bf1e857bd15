//! Per-device streaming data sources with injectable concept drift.
//!
//! A batch is fully determined by `(StreamSpec, DriftPlan, round_index)`:
//! generation first draws the clean batch (features + labels) from one
//! substream, then decides per sample from an independent substream whether
//! to overwrite the features with corruption draws. Labels are produced in
//! the clean phase and never touched by drift injection, so the label
//! sequence at any round is identical with and without a drift plan.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::FeatureMatrix;
use crate::rng::{tag, Xoshiro256};

pub type DeviceId = usize;

/// One timestamped batch of samples from a device stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBatch {
    pub features: FeatureMatrix,
    /// Class index (as f64) for classification, real value for regression.
    pub labels: Vec<f64>,
    pub round_index: usize,
}

/// What generates a device's samples.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamSource {
    /// Binary labels from the sign of a rotating boundary vector over
    /// standard-normal features. Rotation rate 0 gives a stationary stream.
    RotatingHyperplane {
        input_dim: usize,
        /// Radians the boundary rotates per round.
        rotation_rate: f64,
        /// Fraction of labels flipped at generation time (irreducible error).
        label_noise: f64,
    },
    /// One Gaussian cluster per class; label = cluster index.
    GaussianClusters {
        input_dim: usize,
        num_classes: usize,
        /// Standard deviation of samples around their cluster center.
        spread: f64,
    },
    /// Pre-chunked batches loaded from a CSV file (see [`crate::ingest`]).
    Csv { rounds: Arc<Vec<StreamBatch>> },
}

impl StreamSource {
    pub fn input_dim(&self) -> usize {
        match self {
            StreamSource::RotatingHyperplane { input_dim, .. } => *input_dim,
            StreamSource::GaussianClusters { input_dim, .. } => *input_dim,
            StreamSource::Csv { rounds } => rounds.first().map_or(0, |b| b.features.cols()),
        }
    }
}

/// Deterministic stream description: `(spec, round_index)` fully determines
/// the clean batch.
#[derive(Debug, Clone)]
pub struct StreamSpec {
    pub source: StreamSource,
    pub samples_per_round: usize,
    pub total_rounds: usize,
    /// Per-device seed for sample draws.
    pub seed: u64,
    /// Seed that fixes the underlying concept (boundary vector, cluster
    /// centers); shared across devices so they stream the same task.
    pub concept_seed: u64,
    /// Fractional per-round growth of the arrival rate; 0 = constant arrival.
    pub growth_per_round: f64,
}

impl StreamSpec {
    /// Samples arriving at a given round (constant unless growth is set).
    pub fn samples_at(&self, round_index: usize) -> usize {
        if let StreamSource::Csv { rounds } = &self.source {
            return rounds.get(round_index).map_or(0, |b| b.features.rows());
        }
        let grown = self.samples_per_round as f64 * (1.0 + self.growth_per_round * round_index as f64);
        (grown.floor() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftKind {
    None,
    Sudden,
    Gradual,
}

/// Drift injection plan for one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftPlan {
    pub kind: DriftKind,
    /// Fraction of the stream at which drift begins; the first affected
    /// round is `floor(start_fraction * total_rounds)`.
    pub start_fraction: f64,
    /// Transition length for gradual drift. For sudden drift `None` means
    /// the corruption lasts until the end of the stream.
    pub duration_rounds: Option<usize>,
    pub corrupt_low: f64,
    pub corrupt_high: f64,
}

impl DriftPlan {
    pub fn none() -> Self {
        DriftPlan {
            kind: DriftKind::None,
            start_fraction: 0.0,
            duration_rounds: None,
            corrupt_low: 10.0,
            corrupt_high: 1000.0,
        }
    }

    pub fn start_round(&self, total_rounds: usize) -> usize {
        (self.start_fraction * total_rounds as f64).floor() as usize
    }

    /// Probability that a sample at `round_index` comes from the corrupted
    /// concept. Sudden drift switches to 1 at the start round; gradual drift
    /// ramps linearly so the midpoint of the transition mixes 50/50.
    pub fn corrupt_probability(&self, round_index: usize, total_rounds: usize) -> f64 {
        let start = self.start_round(total_rounds);
        match self.kind {
            DriftKind::None => 0.0,
            DriftKind::Sudden => {
                if round_index < start {
                    0.0
                } else {
                    match self.duration_rounds {
                        Some(d) if round_index >= start + d => 0.0,
                        _ => 1.0,
                    }
                }
            }
            DriftKind::Gradual => {
                if round_index < start {
                    return 0.0;
                }
                let d = self.duration_rounds.unwrap_or(1).max(1);
                let elapsed = round_index - start;
                if elapsed >= d {
                    1.0
                } else {
                    (elapsed + 1) as f64 / (d + 1) as f64
                }
            }
        }
    }
}

/// Boundary vector of the rotating hyperplane at a given round: the seed
/// fixes an initial unit vector `a0` and an orthogonal unit vector `b`;
/// the boundary is `a(r) = cos(rate*r) a0 + sin(rate*r) b`.
pub fn hyperplane_boundary(seed: u64, input_dim: usize, rotation_rate: f64, round_index: usize) -> Vec<f64> {
    let mut rng = Xoshiro256::substream(seed, &[tag::CONCEPT]);
    let mut a0: Vec<f64> = (0..input_dim).map(|_| rng.next_normal()).collect();
    normalize(&mut a0);
    let mut b: Vec<f64> = (0..input_dim).map(|_| rng.next_normal()).collect();
    // Gram-Schmidt b against a0
    let dot: f64 = a0.iter().zip(&b).map(|(x, y)| x * y).sum();
    for (bi, ai) in b.iter_mut().zip(&a0) {
        *bi -= dot * ai;
    }
    normalize(&mut b);
    let angle = rotation_rate * round_index as f64;
    let (sin, cos) = angle.sin_cos();
    a0.iter().zip(&b).map(|(ai, bi)| cos * ai + sin * bi).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    } else {
        // degenerate draw; fall back to a basis vector
        v[0] = 1.0;
    }
}

/// Generate a clean batch of `n` samples (no drift applied); the caller
/// provides the draw and label-noise substreams.
fn clean_batch(
    spec: &StreamSpec,
    round_index: usize,
    n: usize,
    rng: &mut Xoshiro256,
    noise_rng: &mut Xoshiro256,
) -> Result<StreamBatch> {
    match &spec.source {
        StreamSource::RotatingHyperplane { input_dim, rotation_rate, label_noise } => {
            let d = *input_dim;
            let boundary = hyperplane_boundary(spec.concept_seed, d, *rotation_rate, round_index);
            let mut data = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let start = data.len();
                for _ in 0..d {
                    data.push(rng.next_normal());
                }
                let dot: f64 = boundary.iter().zip(&data[start..]).map(|(a, x)| a * x).sum();
                let mut y = if dot > 0.0 { 1.0 } else { 0.0 };
                if *label_noise > 0.0 && noise_rng.next_f64() < *label_noise {
                    y = 1.0 - y;
                }
                labels.push(y);
            }
            Ok(StreamBatch { features: FeatureMatrix::new(n, d, data), labels, round_index })
        }
        StreamSource::GaussianClusters { input_dim, num_classes, spread } => {
            let d = *input_dim;
            let c = *num_classes;
            // class centers are a per-seed constant
            let mut center_rng = Xoshiro256::substream(spec.concept_seed, &[tag::CONCEPT]);
            let centers: Vec<Vec<f64>> = (0..c)
                .map(|_| (0..d).map(|_| 2.0 * center_rng.next_normal()).collect())
                .collect();
            let mut data = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let class = rng.next_bounded(c as u64) as usize;
                for j in 0..d {
                    data.push(centers[class][j] + spread * rng.next_normal());
                }
                labels.push(class as f64);
            }
            Ok(StreamBatch { features: FeatureMatrix::new(n, d, data), labels, round_index })
        }
        StreamSource::Csv { rounds } => rounds
            .get(round_index)
            .cloned()
            .ok_or_else(|| Error::invalid_input(format!("csv stream has no round {round_index}"))),
    }
}

/// Draw the batch for a round, applying the drift plan. Corruption replaces
/// feature values with uniform draws in `[corrupt_low, corrupt_high]` and
/// keeps the clean labels.
pub fn next_batch(spec: &StreamSpec, plan: &DriftPlan, round_index: usize) -> Result<StreamBatch> {
    if round_index >= spec.total_rounds {
        return Err(Error::invalid_input(format!(
            "round_index {round_index} out of range (total_rounds {})",
            spec.total_rounds
        )));
    }
    let mut rng = Xoshiro256::substream(spec.seed, &[tag::STREAM, round_index as u64]);
    let mut noise_rng = Xoshiro256::substream(spec.seed, &[tag::LABEL_NOISE, round_index as u64]);
    let n = spec.samples_at(round_index);
    let mut batch = clean_batch(spec, round_index, n, &mut rng, &mut noise_rng)?;
    let p_corrupt = plan.corrupt_probability(round_index, spec.total_rounds);
    if p_corrupt > 0.0 {
        let mut corrupt_rng = Xoshiro256::substream(spec.seed, &[tag::CORRUPT, round_index as u64]);
        let mut mix_rng = Xoshiro256::substream(spec.seed, &[tag::MIX, round_index as u64]);
        let d = batch.features.cols();
        for i in 0..batch.features.rows() {
            if p_corrupt >= 1.0 || mix_rng.next_f64() < p_corrupt {
                let row = batch.features.row_mut(i);
                for v in row.iter_mut().take(d) {
                    *v = corrupt_rng.uniform(plan.corrupt_low, plan.corrupt_high);
                }
            }
        }
    }
    Ok(batch)
}

/// Fixed held-out evaluation batch for a synthetic stream, drawn from the
/// clean round-0 concept on a reserved substream. Drift injection never
/// touches it: the split measures how well the global model serves the
/// device's reference task. CSV streams carry their own test split instead.
pub fn test_batch(spec: &StreamSpec, samples: usize) -> Result<StreamBatch> {
    match &spec.source {
        StreamSource::Csv { .. } => Err(Error::invalid_input(
            "csv streams carry an explicit test split".to_string(),
        )),
        _ => {
            let mut rng = Xoshiro256::substream(spec.seed, &[tag::TEST_SPLIT]);
            let mut noise_rng = Xoshiro256::substream(spec.seed, &[tag::TEST_SPLIT, tag::LABEL_NOISE]);
            clean_batch(spec, 0, samples, &mut rng, &mut noise_rng)
        }
    }
}

/// Choose which devices get a drift plan: exactly `round(C*K)` of them,
/// uniformly without replacement, deterministic per seed.
pub fn assign_drift_devices(num_devices: usize, drift_fraction: f64, seed: u64) -> Result<BTreeSet<DeviceId>> {
    if !(0.0..=1.0).contains(&drift_fraction) {
        return Err(Error::config(format!("drift fraction {drift_fraction} outside [0, 1]")));
    }
    let count = (drift_fraction * num_devices as f64).round() as usize;
    let mut rng = Xoshiro256::substream(seed, &[tag::DRIFT_ASSIGN]);
    Ok(rng.sample_without_replacement(num_devices, count).into_iter().collect())
}
