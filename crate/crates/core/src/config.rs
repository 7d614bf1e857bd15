//! Run configuration: a flat TOML schema with paper-derived defaults,
//! strict validation, and unknown-key rejection.
//!
//! Every key is optional; omitted keys take the documented defaults
//! (gamma 0.2, drift fraction 0.1, significance 0.05, queue capacity 20,
//! local epochs 2, sync participation 0.2). Unknown keys are rejected with
//! an error naming the key and its line.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::client::ClientSettings;
use crate::drift::{AdaptDirection, AdaptationPolicy, DeltaMode};
use crate::error::{Error, Result};
use crate::model::{LossKind, Metric, ModelKind, ModelSpec};
use crate::rng::derive_seed;
use crate::sim::AlgorithmMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamSourceKind {
    RotatingHyperplane,
    GaussianClusters,
    Csv,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: AlgorithmMode,
    /// Number of devices K (ignored for CSV sources, which define their own).
    pub devices: usize,
    /// Fraction of devices allowed to train concurrently.
    pub gamma: f64,
    pub lambda_initial: f64,
    /// Escalation factor rho applied to lambda on detected drift.
    pub rho: f64,
    pub lambda_max: f64,
    /// Multiplier applied to lambda on calm rounds; 1 = no decay.
    pub lambda_decay: f64,
    /// `increase` tightens lambda on drift; `decrease` is the ablation arm.
    pub adapt_direction: AdaptDirection,
    pub significance: f64,
    pub queue_capacity: usize,
    /// Minimum queue length before the drift test may fire.
    pub warmup: usize,
    pub delta_mode: DeltaMode,
    /// Accepted for compatibility with the protocol's parameter list; no
    /// equation or step consumes it, so it has no effect.
    pub delta_threshold: f64,
    pub exclude_drifted_scores: bool,
    /// Fraction C of devices that get drift injected.
    pub drift_fraction: f64,
    pub drift_kind: crate::stream::DriftKind,
    pub drift_start_fraction: f64,
    /// Transition length for gradual drift; 0 means "until end of stream"
    /// and is only valid for sudden drift.
    pub drift_duration_rounds: usize,
    pub corrupt_low: f64,
    pub corrupt_high: f64,
    pub stream_source: StreamSourceKind,
    pub input_dim: usize,
    /// Classes for classification sources/models.
    pub num_classes: usize,
    pub samples_per_round: usize,
    pub total_rounds: usize,
    /// Held-out test batch size per device (synthetic sources).
    pub test_samples: usize,
    /// Radians per round the hyperplane boundary rotates; 0 = stationary.
    pub rotation_rate: f64,
    /// Fraction of labels flipped at generation time.
    pub label_noise: f64,
    pub cluster_spread: f64,
    /// Fractional per-round growth of arrivals; 0 = constant.
    pub sample_growth: f64,
    pub csv_path: String,
    pub model: ModelKind,
    pub hidden_dim: usize,
    pub loss: LossKind,
    pub metric: Metric,
    pub learning_rate: f64,
    /// Local epochs E.
    pub local_epochs: usize,
    /// Gradient-step chunk size; 0 = one full-batch step per epoch.
    pub minibatch: usize,
    /// Sliding window over the training buffer in rounds; 0 = unbounded.
    pub buffer_window_rounds: usize,
    /// FedProx proximal weight; defaulted with a notice when the mode needs it.
    pub mu: Option<f64>,
    /// Participation fraction per round for the sync baselines.
    pub participation: f64,
    pub latency_median: f64,
    pub latency_sigma: f64,
    /// Device whose compute is scaled by `slow_factor` (latency studies).
    pub slow_device: Option<usize>,
    pub slow_factor: f64,
    pub uplink_delay: f64,
    pub downlink_delay: f64,
    pub delay_sigma: f64,
    /// Master seed; `FEDCOND_SEED` supplies it when unset here.
    pub seed: Option<u64>,
    pub data_seed: Option<u64>,
    pub latency_seed: Option<u64>,
    pub sampling_seed: Option<u64>,
    pub sim_duration: f64,
    pub scalar_bytes: u64,
    /// Freeze N to the planned total instead of tracking reported counts.
    pub fixed_total_samples: bool,
    /// Per-unit-staleness weight multiplier; 1 = off.
    pub staleness_discount: f64,
    /// Allowed ledger lead over the global minimum when dispatching.
    pub fairness_max_lead: u64,
    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: AlgorithmMode::Fedcond,
            devices: 20,
            gamma: 0.2,
            lambda_initial: 1.0,
            rho: 2.0,
            lambda_max: 1000.0,
            lambda_decay: 1.0,
            adapt_direction: AdaptDirection::Increase,
            significance: 0.05,
            queue_capacity: 20,
            warmup: 5,
            delta_mode: DeltaMode::InverseTotal,
            delta_threshold: 0.2,
            exclude_drifted_scores: false,
            drift_fraction: 0.1,
            drift_kind: crate::stream::DriftKind::None,
            drift_start_fraction: 0.4,
            drift_duration_rounds: 0,
            corrupt_low: 10.0,
            corrupt_high: 1000.0,
            stream_source: StreamSourceKind::RotatingHyperplane,
            input_dim: 8,
            num_classes: 2,
            samples_per_round: 20,
            total_rounds: 60,
            test_samples: 256,
            rotation_rate: 0.0,
            label_noise: 0.0,
            cluster_spread: 1.0,
            sample_growth: 0.0,
            csv_path: String::new(),
            model: ModelKind::LogisticClassification,
            hidden_dim: 0,
            loss: LossKind::CrossEntropy,
            metric: Metric::ErrorRate,
            learning_rate: 0.05,
            local_epochs: 2,
            minibatch: 0,
            buffer_window_rounds: 0,
            mu: None,
            participation: 0.2,
            latency_median: 1.0,
            latency_sigma: 0.25,
            slow_device: None,
            slow_factor: 10.0,
            uplink_delay: 0.1,
            downlink_delay: 0.1,
            delay_sigma: 0.0,
            seed: None,
            data_seed: None,
            latency_seed: None,
            sampling_seed: None,
            sim_duration: 2000.0,
            scalar_bytes: 4,
            fixed_total_samples: false,
            staleness_discount: 1.0,
            fairness_max_lead: 1,
            out: "out".to_string(),
        }
    }
}

fn check_range(name: &str, value: f64, low: f64, high: f64, low_open: bool) -> Result<()> {
    let ok = if low_open { value > low && value <= high } else { value >= low && value <= high };
    if !ok {
        let bracket = if low_open { "(" } else { "[" };
        return Err(Error::config(format!("{name} = {value} outside {bracket}{low}, {high}]")));
    }
    Ok(())
}

impl RunConfig {
    /// Parse a TOML config file, fill defaults and validate.
    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_str(&text)
    }

    /// Parse config text, fill defaults and validate.
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Fill derived defaults (mu notice, seed from environment) and validate.
    pub fn resolve(&mut self) -> Result<()> {
        if self.mode == AlgorithmMode::Fedprox && self.mu.is_none() {
            log::info!("mode = fedprox without mu; defaulting mu = 0.1");
            self.mu = Some(0.1);
        }
        if self.seed.is_none() {
            if let Ok(env_seed) = std::env::var("FEDCOND_SEED") {
                let parsed: u64 = env_seed
                    .parse()
                    .map_err(|_| Error::config(format!("FEDCOND_SEED '{env_seed}' is not a u64")))?;
                self.seed = Some(parsed);
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        check_range("gamma", self.gamma, 0.0, 1.0, true)?;
        check_range("significance", self.significance, 0.0, 1.0, true)?;
        check_range("drift_fraction", self.drift_fraction, 0.0, 1.0, false)?;
        check_range("drift_start_fraction", self.drift_start_fraction, 0.0, 1.0, false)?;
        check_range("participation", self.participation, 0.0, 1.0, true)?;
        check_range("lambda_decay", self.lambda_decay, 0.0, 1.0, true)?;
        check_range("label_noise", self.label_noise, 0.0, 0.5, false)?;
        if self.devices == 0 {
            return Err(Error::config("devices must be positive"));
        }
        if self.lambda_initial < 0.0 {
            return Err(Error::config(format!("lambda_initial = {} must be >= 0", self.lambda_initial)));
        }
        if self.rho <= 1.0 {
            return Err(Error::config(format!("rho = {} must be > 1", self.rho)));
        }
        if self.lambda_max < self.lambda_initial {
            return Err(Error::config(format!(
                "lambda_max = {} below lambda_initial = {}",
                self.lambda_max, self.lambda_initial
            )));
        }
        if self.queue_capacity == 0 {
            return Err(Error::config("queue_capacity must be positive"));
        }
        if self.samples_per_round == 0 {
            return Err(Error::config("samples_per_round must be positive"));
        }
        if self.test_samples == 0 {
            return Err(Error::config("test_samples must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config(format!("learning_rate = {} must be > 0", self.learning_rate)));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs must be positive"));
        }
        if self.latency_median <= 0.0 {
            return Err(Error::config(format!("latency_median = {} must be > 0", self.latency_median)));
        }
        if self.slow_factor <= 0.0 {
            return Err(Error::config(format!("slow_factor = {} must be > 0", self.slow_factor)));
        }
        if self.uplink_delay < 0.0 || self.downlink_delay < 0.0 {
            return Err(Error::config("uplink_delay/downlink_delay must be >= 0"));
        }
        if self.sim_duration < 0.0 {
            return Err(Error::config(format!("sim_duration = {} must be >= 0", self.sim_duration)));
        }
        if self.scalar_bytes == 0 {
            return Err(Error::config("scalar_bytes must be positive"));
        }
        if !(0.0 < self.staleness_discount && self.staleness_discount <= 1.0) {
            return Err(Error::config(format!(
                "staleness_discount = {} outside (0, 1]",
                self.staleness_discount
            )));
        }
        if self.corrupt_low >= self.corrupt_high {
            return Err(Error::config(format!(
                "corrupt_low = {} must be below corrupt_high = {}",
                self.corrupt_low, self.corrupt_high
            )));
        }
        if self.drift_kind == crate::stream::DriftKind::Gradual && self.drift_duration_rounds == 0 {
            return Err(Error::config(
                "drift_kind = gradual requires drift_duration_rounds > 0".to_string(),
            ));
        }
        if self.stream_source == StreamSourceKind::Csv && self.csv_path.is_empty() {
            return Err(Error::config("stream_source = csv requires csv_path".to_string()));
        }
        if let Some(d) = self.slow_device {
            if d >= self.devices {
                return Err(Error::config(format!(
                    "slow_device = {d} out of range for {} devices",
                    self.devices
                )));
            }
        }
        self.model_spec().validate()?;
        self.loss.validate_for(&self.model_spec())?;
        if self.mode == AlgorithmMode::Fedprox {
            if let Some(mu) = self.mu {
                if mu < 0.0 {
                    return Err(Error::config(format!("mu = {mu} must be >= 0")));
                }
            }
        }
        Ok(())
    }

    /// Master seed after resolution (0 when nothing set it).
    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or_else(|| derive_seed(self.master_seed(), &[0x11]))
    }

    pub fn latency_seed(&self) -> u64 {
        self.latency_seed.unwrap_or_else(|| derive_seed(self.master_seed(), &[0x22]))
    }

    pub fn sampling_seed(&self) -> u64 {
        self.sampling_seed.unwrap_or_else(|| derive_seed(self.master_seed(), &[0x33]))
    }

    pub fn model_spec(&self) -> ModelSpec {
        let output_dim = match self.model {
            ModelKind::LinearRegression => 1,
            _ => self.num_classes,
        };
        ModelSpec {
            kind: self.model,
            input_dim: self.input_dim,
            output_dim,
            hidden_dim: self.hidden_dim,
        }
    }

    pub fn adaptation_policy(&self) -> AdaptationPolicy {
        AdaptationPolicy {
            lambda_initial: self.lambda_initial,
            escalation_factor: self.rho,
            lambda_max: self.lambda_max,
            decay_factor: self.lambda_decay,
            direction: self.adapt_direction,
            lambda_min: 1e-6,
        }
    }

    /// Client settings for the configured mode. Detection is only live in
    /// fedcond; async-broadcast runs fixed-lambda, sync baselines use plain
    /// SGD (fedavg) or a fixed proximal weight mu (fedprox).
    pub fn client_settings(&self) -> ClientSettings {
        ClientSettings {
            model_spec: self.model_spec(),
            loss: self.loss,
            metric: self.metric,
            significance: self.significance,
            delta_mode: self.delta_mode,
            min_warmup: self.warmup,
            queue_capacity: self.queue_capacity,
            adaptation: self.adaptation_policy(),
            detection_enabled: self.mode == AlgorithmMode::Fedcond,
            exclude_drifted_scores: self.exclude_drifted_scores,
            learning_rate: self.learning_rate,
            local_epochs: self.local_epochs,
            minibatch: if self.minibatch == 0 { None } else { Some(self.minibatch) },
            buffer_window_rounds: if self.buffer_window_rounds == 0 {
                None
            } else {
                Some(self.buffer_window_rounds)
            },
        }
    }

    /// Serialize back to TOML (round-trips through [`RunConfig::from_str`]).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
