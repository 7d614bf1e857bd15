//! Drift detection from a bounded history of evaluation scores, plus the
//! lambda adaptation policy it triggers.
//!
//! The detector compares the newest score against the mean of the history
//! queue with a Yates-corrected two-proportion statistic
//!
//! ```text
//! gamma = (|mean(history) - new| - 0.5 * delta) / sqrt(pooled (1 - pooled) * delta)
//! ```
//!
//! and declares drift when the one-sided p-value `1 - Phi(gamma)` falls
//! below the significance level **and** the new score is worse than the
//! history mean (all scores are oriented larger-is-worse, so improvements
//! never flag).
//!
//! `delta` is ambiguous in the source formulation: read literally it is
//! `1/a + 1`, which makes the continuity correction at least 0.5 and leaves
//! the test essentially unusable (it can only reject in a thin corner where
//! the whole history sits at one extreme and the new score at the other).
//! [`DeltaMode::InverseTotal`] therefore defaults to `1/(a+1)`, the pooled
//! two-sample spacing, which yields a workable test;
//! [`DeltaMode::Literal`] keeps the literal reading for comparison.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::{EvalScore, Metric};
use crate::stats::normal_sf;

/// Minimum history length before the test is allowed to fire.
pub const DEFAULT_WARMUP: usize = 5;
pub const DEFAULT_QUEUE_CAPACITY: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaMode {
    /// `delta = 1 / (a + 1)` — the usable default.
    InverseTotal,
    /// `delta = 1/a + 1` — the literal reading.
    Literal,
}

impl DeltaMode {
    pub fn delta(&self, history_len: usize) -> f64 {
        let a = history_len as f64;
        match self {
            DeltaMode::InverseTotal => 1.0 / (a + 1.0),
            DeltaMode::Literal => 1.0 / a + 1.0,
        }
    }
}

/// Bounded FIFO of evaluation scores for one device.
#[derive(Debug, Clone)]
pub struct EvalQueue {
    scores: VecDeque<f64>,
    capacity: usize,
    metric: Metric,
}

impl EvalQueue {
    pub fn new(capacity: usize, metric: Metric) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        EvalQueue { scores: VecDeque::with_capacity(capacity + 1), capacity, metric }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().copied()
    }

    pub fn mean(&self) -> f64 {
        if self.scores.is_empty() {
            return 0.0;
        }
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    /// Append a score, evicting the oldest entry when full.
    pub fn push(&mut self, score: EvalScore) -> Result<()> {
        if !score.value.is_finite() {
            return Err(Error::invalid_input(format!("non-finite evaluation score {}", score.value)));
        }
        if score.metric != self.metric {
            return Err(Error::invalid_input(format!(
                "score metric {:?} does not match queue metric {:?}",
                score.metric, self.metric
            )));
        }
        if !(0.0..=self.metric.upper()).contains(&score.value) {
            return Err(Error::invalid_input(format!(
                "score {} outside [0, {}] for {:?}",
                score.value,
                self.metric.upper(),
                self.metric
            )));
        }
        self.scores.push_back(score.value);
        if self.scores.len() > self.capacity {
            self.scores.pop_front();
        }
        Ok(())
    }
}

/// Outcome of one drift test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftVerdict {
    pub drifted: bool,
    /// The test statistic gamma.
    pub statistic: f64,
    /// One-sided p-value, `1 - Phi(statistic)`.
    pub p_value: f64,
    /// Mean of the history queue.
    pub mean_history: f64,
    /// Mean of history plus the new score.
    pub pooled_mean: f64,
}

impl DriftVerdict {
    fn no_drift(statistic: f64, p_value: f64, mean_history: f64, pooled_mean: f64) -> Self {
        DriftVerdict { drifted: false, statistic, p_value, mean_history, pooled_mean }
    }
}

/// Run the drift test for a new score against the queue.
///
/// While the queue holds fewer than `min_warmup` scores the verdict is
/// always no-drift (the statistic is still reported when computable). A
/// degenerate pooled variance (pooled mean at 0 or 1, or outside [0, 1] for
/// metrics with range above 1) returns no-drift with p = 1: a constant
/// pooled proportion carries no evidence of change.
pub fn detect(
    queue: &EvalQueue,
    new_score: EvalScore,
    significance: f64,
    delta_mode: DeltaMode,
    min_warmup: usize,
) -> Result<DriftVerdict> {
    if new_score.metric != queue.metric() {
        return Err(Error::invalid_input(format!(
            "score metric {:?} does not match queue metric {:?}",
            new_score.metric,
            queue.metric()
        )));
    }
    if !new_score.value.is_finite() {
        return Err(Error::invalid_input("non-finite evaluation score".to_string()));
    }
    let a = queue.len();
    if a == 0 {
        let s = new_score.value;
        return Ok(DriftVerdict::no_drift(0.0, 1.0, s, s));
    }
    let mean_history = queue.mean();
    let pooled = (mean_history * a as f64 + new_score.value) / (a as f64 + 1.0);
    let delta = delta_mode.delta(a);
    let variance_term = pooled * (1.0 - pooled) * delta;
    if variance_term <= 0.0 {
        return Ok(DriftVerdict::no_drift(0.0, 1.0, mean_history, pooled));
    }
    let statistic = ((mean_history - new_score.value).abs() - 0.5 * delta) / variance_term.sqrt();
    let p_value = normal_sf(statistic);
    let worsened = new_score.value > mean_history;
    let drifted = a >= min_warmup && worsened && p_value < significance;
    Ok(DriftVerdict { drifted, statistic, p_value, mean_history, pooled_mean: pooled })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptDirection {
    /// Tighten the proximal pull on drift (the protocol's behavior).
    Increase,
    /// Loosen it instead — ablation arm only.
    Decrease,
}

/// How lambda reacts to drift verdicts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationPolicy {
    pub lambda_initial: f64,
    /// rho > 1; lambda is multiplied (or divided, in the ablation arm) by
    /// this factor on every detected drift.
    pub escalation_factor: f64,
    pub lambda_max: f64,
    /// Multiplier applied on non-drift rounds; 1 = no decay.
    pub decay_factor: f64,
    pub direction: AdaptDirection,
    /// Floor for the ablation arm that shrinks lambda on drift.
    pub lambda_min: f64,
}

impl Default for AdaptationPolicy {
    fn default() -> Self {
        AdaptationPolicy {
            lambda_initial: 1.0,
            escalation_factor: 2.0,
            lambda_max: 1000.0,
            decay_factor: 1.0,
            direction: AdaptDirection::Increase,
            lambda_min: 1e-6,
        }
    }
}

/// Apply the adaptation policy to the current lambda.
pub fn adapt_lambda(current: f64, verdict: &DriftVerdict, policy: &AdaptationPolicy) -> f64 {
    match policy.direction {
        AdaptDirection::Increase => {
            if verdict.drifted {
                (current * policy.escalation_factor).min(policy.lambda_max)
            } else {
                (current * policy.decay_factor).max(policy.lambda_initial)
            }
        }
        AdaptDirection::Decrease => {
            if verdict.drifted {
                (current / policy.escalation_factor).max(policy.lambda_min)
            } else {
                (current * policy.decay_factor).max(policy.lambda_min)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn queue_of(values: &[f64]) -> EvalQueue {
        let mut q = EvalQueue::new(DEFAULT_QUEUE_CAPACITY, Metric::ErrorRate);
        for &v in values {
            q.push(EvalScore { value: v, metric: Metric::ErrorRate }).unwrap();
        }
        q
    }

    fn score(v: f64) -> EvalScore {
        EvalScore { value: v, metric: Metric::ErrorRate }
    }

    #[test]
    fn identical_score_never_drifts() {
        let q = queue_of(&[0.5; 20]);
        let v = detect(&q, score(0.5), 0.05, DeltaMode::InverseTotal, DEFAULT_WARMUP).unwrap();
        assert!(!v.drifted);
    }

    #[test]
    fn frozen_fixture_big_jump() {
        // queue of twenty 0.10 scores, new 0.60, delta = 1/21
        let q = queue_of(&[0.10; 20]);
        let v = detect(&q, score(0.60), 0.05, DeltaMode::InverseTotal, DEFAULT_WARMUP).unwrap();
        assert!(v.drifted);
        assert!((v.pooled_mean - 0.123_809_523_81).abs() < 1e-9, "pooled {}", v.pooled_mean);
        assert!((v.statistic - 6.625_429_878_15).abs() < 1e-9, "gamma {}", v.statistic);
        assert!((v.p_value / 1.731_195_3e-11 - 1.0).abs() < 1e-6, "p {}", v.p_value);
    }

    #[test]
    fn frozen_fixture_small_jump() {
        // queue of ten 0.20 scores, new 0.30, delta = 1/11
        let q = queue_of(&[0.20; 10]);
        let v = detect(&q, score(0.30), 0.05, DeltaMode::InverseTotal, DEFAULT_WARMUP).unwrap();
        assert!(!v.drifted);
        assert!((v.statistic - 0.444_860_707_947).abs() < 1e-9, "gamma {}", v.statistic);
        assert!((v.p_value - 0.328_210_21).abs() < 1e-7, "p {}", v.p_value);
    }

    #[test]
    fn p_value_matches_statrs() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let n = Normal::new(0.0, 1.0).unwrap();
        for (hist, new) in [(0.1, 0.6), (0.2, 0.3), (0.3, 0.35), (0.05, 0.9)] {
            let q = queue_of(&[hist; 20]);
            let v = detect(&q, score(new), 0.05, DeltaMode::InverseTotal, DEFAULT_WARMUP).unwrap();
            let reference = 1.0 - n.cdf(v.statistic);
            assert!((v.p_value - reference).abs() < 1e-10, "p {} vs statrs {}", v.p_value, reference);
        }
    }

    #[test]
    fn warmup_suppresses_drift() {
        let q = queue_of(&[0.1, 0.1, 0.1]); // below warm-up of 5
        let v = detect(&q, score(0.9), 0.05, DeltaMode::InverseTotal, DEFAULT_WARMUP).unwrap();
        assert!(!v.drifted);
        // the same jump fires once warm-up is met
        let q = queue_of(&[0.1; 5]);
        let v = detect(&q, score(0.9), 0.05, DeltaMode::InverseTotal, DEFAULT_WARMUP).unwrap();
        assert!(v.drifted);
    }

    #[test]
    fn empty_queue_no_drift() {
        let q = EvalQueue::new(20, Metric::ErrorRate);
        let v = detect(&q, score(0.7), 0.05, DeltaMode::InverseTotal, DEFAULT_WARMUP).unwrap();
        assert!(!v.drifted);
        assert_eq!(v.p_value, 1.0);
    }

    #[test]
    fn degenerate_pooled_mean_no_drift() {
        // all-zero history and a zero new score: pooled mean 0
        let q = queue_of(&[0.0; 10]);
        let v = detect(&q, score(0.0), 0.05, DeltaMode::InverseTotal, DEFAULT_WARMUP).unwrap();
        assert!(!v.drifted);
        assert_eq!(v.p_value, 1.0);
        // pooled mean exactly 1
        let q = queue_of(&[1.0; 10]);
        let v = detect(&q, score(1.0), 0.05, DeltaMode::InverseTotal, DEFAULT_WARMUP).unwrap();
        assert!(!v.drifted);
        assert_eq!(v.p_value, 1.0);
    }

    #[test]
    fn improvement_never_flags() {
        let q = queue_of(&[0.8; 20]);
        let v = detect(&q, score(0.05), 0.05, DeltaMode::InverseTotal, DEFAULT_WARMUP).unwrap();
        assert!(!v.drifted, "improvement flagged as drift");
    }

    #[test]
    fn push_evicts_oldest_at_capacity() {
        let mut q = EvalQueue::new(20, Metric::ErrorRate);
        for i in 0..20 {
            q.push(score(i as f64 / 100.0)).unwrap();
        }
        assert_eq!(q.len(), 20);
        q.push(score(0.99)).unwrap();
        assert_eq!(q.len(), 20);
        let first = q.scores().next().unwrap();
        assert!((first - 0.01).abs() < 1e-15, "oldest not evicted: {first}");
    }

    #[test]
    fn push_sequence_keeps_fifo_order() {
        let mut q = EvalQueue::new(20, Metric::ErrorRate);
        for i in 1..=25 {
            q.push(score(i as f64 / 100.0)).unwrap();
        }
        let held: Vec<f64> = q.scores().collect();
        let expected: Vec<f64> = (6..=25).map(|i| i as f64 / 100.0).collect();
        assert_eq!(held, expected);
    }

    #[test]
    fn push_to_empty() {
        let mut q = EvalQueue::new(20, Metric::ErrorRate);
        q.push(score(0.3)).unwrap();
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn push_rejects_non_finite_and_out_of_range() {
        let mut q = EvalQueue::new(20, Metric::ErrorRate);
        assert!(q.push(score(f64::NAN)).is_err());
        assert!(q.push(score(1.5)).is_err());
        assert!(q.push(score(-0.1)).is_err());
    }

    #[test]
    fn adapt_lambda_examples() {
        let policy = AdaptationPolicy {
            lambda_initial: 0.1,
            escalation_factor: 2.0,
            lambda_max: 10.0,
            decay_factor: 1.0,
            ..AdaptationPolicy::default()
        };
        let drifted = DriftVerdict { drifted: true, statistic: 3.0, p_value: 0.001, mean_history: 0.1, pooled_mean: 0.12 };
        let calm = DriftVerdict { drifted: false, statistic: 0.0, p_value: 0.9, mean_history: 0.1, pooled_mean: 0.1 };
        assert!((adapt_lambda(0.1, &drifted, &policy) - 0.2).abs() < 1e-15);
        assert_eq!(adapt_lambda(8.0, &drifted, &policy), 10.0);
        assert_eq!(adapt_lambda(0.2, &calm, &policy), 0.2);
    }

    #[test]
    fn adapt_lambda_never_leaves_bounds() {
        let policy = AdaptationPolicy {
            lambda_initial: 0.5,
            escalation_factor: 3.0,
            lambda_max: 20.0,
            decay_factor: 0.9,
            ..AdaptationPolicy::default()
        };
        let drifted = DriftVerdict { drifted: true, statistic: 3.0, p_value: 0.001, mean_history: 0.1, pooled_mean: 0.12 };
        let calm = DriftVerdict { drifted: false, statistic: 0.0, p_value: 0.9, mean_history: 0.1, pooled_mean: 0.1 };
        let mut lambda = policy.lambda_initial;
        let mut rng = crate::rng::Xoshiro256::seed_from_u64(4);
        for _ in 0..1000 {
            let v = if rng.next_f64() < 0.3 { &drifted } else { &calm };
            lambda = adapt_lambda(lambda, v, &policy);
            assert!(lambda >= policy.lambda_initial - 1e-15 && lambda <= policy.lambda_max + 1e-15);
        }
    }

    #[test]
    fn decrease_direction_shrinks_on_drift() {
        let policy = AdaptationPolicy {
            lambda_initial: 1.0,
            direction: AdaptDirection::Decrease,
            ..AdaptationPolicy::default()
        };
        let drifted = DriftVerdict { drifted: true, statistic: 3.0, p_value: 0.001, mean_history: 0.1, pooled_mean: 0.12 };
        assert!((adapt_lambda(1.0, &drifted, &policy) - 0.5).abs() < 1e-15);
        let mut lambda = 1.0;
        for _ in 0..100 {
            lambda = adapt_lambda(lambda, &drifted, &policy);
        }
        assert!(lambda >= policy.lambda_min);
    }

    #[test]
    fn statistic_monotone_once_firing() {
        // sweep the new score upward; once the verdict turns drifted it must
        // stay drifted for every larger score
        for hist in [0.05, 0.1, 0.3, 0.5] {
            for a in [5usize, 10, 20] {
                let q = queue_of(&vec![hist; a]);
                let mut fired = false;
                let mut s = hist + 0.001;
                while s <= 1.0 {
                    let v = detect(&q, score(s), 0.05, DeltaMode::InverseTotal, DEFAULT_WARMUP).unwrap();
                    if fired {
                        assert!(v.drifted, "drift flipped off at score {s} (hist {hist}, a {a})");
                    }
                    fired |= v.drifted;
                    s += 0.001;
                }
            }
        }
    }

    #[test]
    fn metric_mismatch_rejected() {
        let q = queue_of(&[0.2; 10]);
        let bad = EvalScore { value: 0.5, metric: Metric::Smape };
        assert!(detect(&q, bad, 0.05, DeltaMode::InverseTotal, DEFAULT_WARMUP).is_err());
    }
}
