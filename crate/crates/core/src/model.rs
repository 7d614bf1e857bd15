//! Small differentiable models, losses and evaluation metrics.
//!
//! Three architectures are supported, all stored as a flat [`ParamVector`]:
//!
//! * `linear-regression` — x·W + b, scalar output, trained with MAE;
//! * `logistic-classification` — softmax(x·W + b) over `output_dim` classes;
//! * `mlp-1-hidden` — softmax(tanh(x·W1 + b1)·W2 + b2); tanh keeps the
//!   model smooth everywhere so gradient checks against central finite
//!   differences are clean.
//!
//! Evaluation scores are uniformly oriented **larger = worse** (error rate,
//! SMAPE, 1 − macro-F1) so the drift test downstream is metric-agnostic.
//! Reporting layers convert back to natural orientation at output time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tag, Xoshiro256};

/// Flat model parameter vector: the unit of all communication.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector { values: vec![0.0; dim] }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn squared_distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.squared_distance(other).sqrt()
    }
}

/// Dense row-major matrix of feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape mismatch");
        FeatureMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearRegression,
    LogisticClassification,
    MlpOneHidden,
}

/// Model architecture; identical across all devices and the server, so the
/// parameter count is derivable from the spec alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// 0 unless `mlp-1-hidden`.
    pub hidden_dim: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        match self.kind {
            ModelKind::LinearRegression => {
                if self.output_dim != 1 {
                    return Err(Error::config("linear-regression requires output_dim = 1"));
                }
                if self.hidden_dim != 0 {
                    return Err(Error::config("hidden_dim must be 0 for linear-regression"));
                }
            }
            ModelKind::LogisticClassification => {
                if self.output_dim < 2 {
                    return Err(Error::config(
                        "logistic-classification requires output_dim >= 2 classes",
                    ));
                }
                if self.hidden_dim != 0 {
                    return Err(Error::config("hidden_dim must be 0 for logistic-classification"));
                }
            }
            ModelKind::MlpOneHidden => {
                if self.output_dim < 2 {
                    return Err(Error::config("mlp-1-hidden requires output_dim >= 2 classes"));
                }
                if self.hidden_dim == 0 {
                    return Err(Error::config("mlp-1-hidden requires hidden_dim > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.kind, ModelKind::LogisticClassification | ModelKind::MlpOneHidden)
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticClassification => {
                self.input_dim * self.output_dim + self.output_dim
            }
            ModelKind::MlpOneHidden => {
                self.input_dim * self.hidden_dim
                    + self.hidden_dim
                    + self.hidden_dim * self.output_dim
                    + self.output_dim
            }
        }
    }
}

/// Initial global model. Linear heads start at zero; the MLP needs symmetry
/// breaking, so its weights are drawn uniformly in +-1/sqrt(input_dim) from a
/// dedicated substream.
pub fn init_model(spec: &ModelSpec, seed: u64) -> ParamVector {
    match spec.kind {
        ModelKind::LinearRegression | ModelKind::LogisticClassification => {
            ParamVector::zeros(spec.param_count())
        }
        ModelKind::MlpOneHidden => {
            let mut rng = Xoshiro256::substream(seed, &[tag::INIT_MODEL]);
            let r = 1.0 / (spec.input_dim as f64).sqrt();
            let values = (0..spec.param_count()).map(|_| rng.uniform(-r, r)).collect();
            ParamVector::from_vec(values)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Classification only.
    CrossEntropy,
    /// Regression only.
    MeanAbsoluteError,
}

impl LossKind {
    pub fn validate_for(&self, spec: &ModelSpec) -> Result<()> {
        match (self, spec.is_classification()) {
            (LossKind::CrossEntropy, true) | (LossKind::MeanAbsoluteError, false) => Ok(()),
            (LossKind::CrossEntropy, false) => {
                Err(Error::config("cross-entropy requires a classification model"))
            }
            (LossKind::MeanAbsoluteError, true) => {
                Err(Error::config("mean-absolute-error requires a regression model"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    ErrorRate,
    Smape,
    OneMinusF1,
}

impl Metric {
    /// Upper bound of the metric's range (all metrics start at 0).
    pub fn upper(&self) -> f64 {
        match self {
            Metric::ErrorRate | Metric::OneMinusF1 => 1.0,
            Metric::Smape => 2.0,
        }
    }
}

/// One evaluation value, oriented larger-is-worse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScore {
    pub value: f64,
    pub metric: Metric,
}

const PROB_FLOOR: f64 = 1e-12;

fn softmax_row(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

fn check_dims(spec: &ModelSpec, w: &ParamVector, x: &FeatureMatrix) -> Result<()> {
    if x.cols() != spec.input_dim {
        return Err(Error::config(format!(
            "feature matrix has {} columns, model expects {}",
            x.cols(),
            spec.input_dim
        )));
    }
    if w.dim() != spec.param_count() {
        return Err(Error::config(format!(
            "parameter vector has dim {}, model expects {}",
            w.dim(),
            spec.param_count()
        )));
    }
    Ok(())
}

/// Forward pass. Classification rows are softmax probabilities (summing to 1);
/// regression rows are raw predictions.
pub fn predict(spec: &ModelSpec, w: &ParamVector, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    check_dims(spec, w, x)?;
    let n = x.rows();
    let out_dim = spec.output_dim;
    let p = w.as_slice();
    let mut out = FeatureMatrix::new(n, out_dim, vec![0.0; n * out_dim]);
    match spec.kind {
        ModelKind::LinearRegression | ModelKind::LogisticClassification => {
            let d = spec.input_dim;
            let (weights, bias) = p.split_at(d * out_dim);
            for i in 0..n {
                let xi = x.row(i);
                let row = out.row_mut(i);
                for o in 0..out_dim {
                    let mut z = bias[o];
                    for (j, &xj) in xi.iter().enumerate() {
                        z += xj * weights[j * out_dim + o];
                    }
                    row[o] = z;
                }
                if spec.kind == ModelKind::LogisticClassification {
                    softmax_row(row);
                }
            }
        }
        ModelKind::MlpOneHidden => {
            let d = spec.input_dim;
            let h = spec.hidden_dim;
            let (w1, rest) = p.split_at(d * h);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h * out_dim);
            let mut hidden = vec![0.0; h];
            for i in 0..n {
                let xi = x.row(i);
                for (k, hk) in hidden.iter_mut().enumerate() {
                    let mut z = b1[k];
                    for (j, &xj) in xi.iter().enumerate() {
                        z += xj * w1[j * h + k];
                    }
                    *hk = z.tanh();
                }
                let row = out.row_mut(i);
                for o in 0..out_dim {
                    let mut z = b2[o];
                    for (k, &hk) in hidden.iter().enumerate() {
                        z += hk * w2[k * out_dim + o];
                    }
                    row[o] = z;
                }
                softmax_row(row);
            }
        }
    }
    Ok(out)
}

/// Mean per-sample loss and its gradient with respect to `w`.
pub fn loss_and_gradient(
    spec: &ModelSpec,
    loss: LossKind,
    w: &ParamVector,
    x: &FeatureMatrix,
    y: &[f64],
) -> Result<(f64, ParamVector)> {
    check_dims(spec, w, x)?;
    loss.validate_for(spec)?;
    let n = x.rows();
    if n == 0 || y.len() != n {
        return Err(Error::invalid_input(format!(
            "batch must be non-empty and labels must match rows (rows {}, labels {})",
            n,
            y.len()
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = ParamVector::zeros(w.dim());
    let g = grad.as_mut_slice();
    let p = w.as_slice();
    let d = spec.input_dim;
    let out_dim = spec.output_dim;
    let mut total = 0.0;

    match spec.kind {
        ModelKind::LinearRegression => {
            // loss_i = |yhat_i - y_i|; subgradient sign(yhat - y)
            let (weights, bias) = p.split_at(d);
            let (gw, gb) = g.split_at_mut(d);
            for i in 0..n {
                let xi = x.row(i);
                let mut yhat = bias[0];
                for (j, &xj) in xi.iter().enumerate() {
                    yhat += xj * weights[j];
                }
                let r = yhat - y[i];
                total += r.abs();
                let s = if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                for (j, &xj) in xi.iter().enumerate() {
                    gw[j] += s * xj * inv_n;
                }
                gb[0] += s * inv_n;
            }
        }
        ModelKind::LogisticClassification => {
            let probs = predict(spec, w, x)?;
            let (gw, gb) = g.split_at_mut(d * out_dim);
            for i in 0..n {
                let label = class_label(y[i], out_dim, i)?;
                let pr = probs.row(i);
                total += -(pr[label].max(PROB_FLOOR)).ln();
                let xi = x.row(i);
                for o in 0..out_dim {
                    let delta = (pr[o] - if o == label { 1.0 } else { 0.0 }) * inv_n;
                    for (j, &xj) in xi.iter().enumerate() {
                        gw[j * out_dim + o] += delta * xj;
                    }
                    gb[o] += delta;
                }
            }
        }
        ModelKind::MlpOneHidden => {
            let h = spec.hidden_dim;
            let (w1, rest) = p.split_at(d * h);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h * out_dim);
            let (gw1, grest) = g.split_at_mut(d * h);
            let (gb1, grest) = grest.split_at_mut(h);
            let (gw2, gb2) = grest.split_at_mut(h * out_dim);
            let mut hidden = vec![0.0; h];
            let mut logits = vec![0.0; out_dim];
            let mut dhidden = vec![0.0; h];
            for i in 0..n {
                let label = class_label(y[i], out_dim, i)?;
                let xi = x.row(i);
                for (k, hk) in hidden.iter_mut().enumerate() {
                    let mut z = b1[k];
                    for (j, &xj) in xi.iter().enumerate() {
                        z += xj * w1[j * h + k];
                    }
                    *hk = z.tanh();
                }
                for (o, lo) in logits.iter_mut().enumerate() {
                    let mut z = b2[o];
                    for (k, &hk) in hidden.iter().enumerate() {
                        z += hk * w2[k * out_dim + o];
                    }
                    *lo = z;
                }
                softmax_row(&mut logits);
                total += -(logits[label].max(PROB_FLOOR)).ln();
                // backprop: dL/dlogit = p - onehot (per sample)
                dhidden.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..out_dim {
                    let delta = logits[o] - if o == label { 1.0 } else { 0.0 };
                    for (k, &hk) in hidden.iter().enumerate() {
                        gw2[k * out_dim + o] += delta * hk * inv_n;
                        dhidden[k] += delta * w2[k * out_dim + o];
                    }
                    gb2[o] += delta * inv_n;
                }
                for (k, &hk) in hidden.iter().enumerate() {
                    let dz = dhidden[k] * (1.0 - hk * hk) * inv_n;
                    for (j, &xj) in xi.iter().enumerate() {
                        gw1[j * h + k] += dz * xj;
                    }
                    gb1[k] += dz;
                }
            }
        }
    }
    Ok((total * inv_n, grad))
}

fn class_label(y: f64, classes: usize, row: usize) -> Result<usize> {
    if !y.is_finite() || y.fract() != 0.0 || y < 0.0 || y as usize >= classes {
        return Err(Error::invalid_input(format!(
            "row {row}: label {y} is not a class index in 0..{classes}"
        )));
    }
    Ok(y as usize)
}

/// Evaluate a model on a batch; the score is oriented larger-is-worse.
pub fn evaluate(
    spec: &ModelSpec,
    w: &ParamVector,
    x: &FeatureMatrix,
    y: &[f64],
    metric: Metric,
) -> Result<EvalScore> {
    if x.rows() == 0 || y.len() != x.rows() {
        return Err(Error::invalid_input("evaluation batch must be non-empty".to_string()));
    }
    let preds = predict(spec, w, x)?;
    let n = x.rows();
    let value = match metric {
        Metric::ErrorRate => {
            if !spec.is_classification() {
                return Err(Error::config("error-rate requires a classification model"));
            }
            let mut wrong = 0usize;
            for i in 0..n {
                if argmax(preds.row(i)) != class_label(y[i], spec.output_dim, i)? {
                    wrong += 1;
                }
            }
            wrong as f64 / n as f64
        }
        Metric::Smape => {
            if spec.is_classification() {
                return Err(Error::config("smape requires a regression model"));
            }
            let mut total = 0.0;
            for i in 0..n {
                let yhat = preds.row(i)[0];
                let denom = yhat.abs() + y[i].abs();
                if denom > 0.0 {
                    total += 2.0 * (yhat - y[i]).abs() / denom;
                }
                // 0/0 counts as 0 by convention
            }
            total / n as f64
        }
        Metric::OneMinusF1 => {
            if !spec.is_classification() {
                return Err(Error::config("one-minus-f1 requires a classification model"));
            }
            let c = spec.output_dim;
            let mut tp = vec![0usize; c];
            let mut fp = vec![0usize; c];
            let mut fneg = vec![0usize; c];
            for i in 0..n {
                let truth = class_label(y[i], c, i)?;
                let pred = argmax(preds.row(i));
                if pred == truth {
                    tp[truth] += 1;
                } else {
                    fp[pred] += 1;
                    fneg[truth] += 1;
                }
            }
            // macro-F1 over all classes; empty precision/recall counts as 0
            let mut f1_sum = 0.0;
            for k in 0..c {
                let prec_den = tp[k] + fp[k];
                let rec_den = tp[k] + fneg[k];
                let prec = if prec_den > 0 { tp[k] as f64 / prec_den as f64 } else { 0.0 };
                let rec = if rec_den > 0 { tp[k] as f64 / rec_den as f64 } else { 0.0 };
                if prec + rec > 0.0 {
                    f1_sum += 2.0 * prec * rec / (prec + rec);
                }
            }
            1.0 - f1_sum / c as f64
        }
    };
    Ok(EvalScore { value, metric })
}

/// Index of the row maximum, ties broken toward the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: usize, cols: usize, vals: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(rows, cols, vals.to_vec())
    }

    #[test]
    fn zero_weights_linear_predicts_zero() {
        let spec = ModelSpec {
            kind: ModelKind::LinearRegression,
            input_dim: 3,
            output_dim: 1,
            hidden_dim: 0,
        };
        let w = ParamVector::zeros(spec.param_count());
        let x = matrix(2, 3, &[1.0, -2.0, 0.5, 4.0, 0.0, 1.0]);
        let out = predict(&spec, &w, &x).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_weights_logistic_is_uniform() {
        let spec = ModelSpec {
            kind: ModelKind::LogisticClassification,
            input_dim: 4,
            output_dim: 2,
            hidden_dim: 0,
        };
        let w = ParamVector::zeros(spec.param_count());
        let x = matrix(3, 4, &[0.3; 12]);
        let out = predict(&spec, &w, &x).unwrap();
        for i in 0..3 {
            assert!((out.row(i)[0] - 0.5).abs() < 1e-15);
            assert!((out.row(i)[1] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_probabilities_normalized() {
        let spec = ModelSpec {
            kind: ModelKind::MlpOneHidden,
            input_dim: 5,
            output_dim: 3,
            hidden_dim: 7,
        };
        let mut rng = Xoshiro256::seed_from_u64(21);
        let w = ParamVector::from_vec(
            (0..spec.param_count()).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        );
        let xv: Vec<f64> = (0..20 * 5).map(|_| rng.next_normal()).collect();
        let x = matrix(20, 5, &xv);
        let out = predict(&spec, &w, &x).unwrap();
        for i in 0..20 {
            let sum: f64 = out.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row {i} sums to {sum}");
            assert!(out.row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn predict_is_pure() {
        let spec = ModelSpec {
            kind: ModelKind::LogisticClassification,
            input_dim: 3,
            output_dim: 2,
            hidden_dim: 0,
        };
        let w = ParamVector::from_vec(vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.05, -0.05]);
        let x = matrix(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let a = predict(&spec, &w, &x).unwrap();
        let b = predict(&spec, &w, &x).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn mae_zero_weights_zero_labels() {
        let spec = ModelSpec {
            kind: ModelKind::LinearRegression,
            input_dim: 2,
            output_dim: 1,
            hidden_dim: 0,
        };
        let w = ParamVector::zeros(3);
        let x = matrix(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (loss, grad) = loss_and_gradient(&spec, LossKind::MeanAbsoluteError, &w, &x, &[0.0, 0.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cross_entropy_zero_weights_is_ln2() {
        let spec = ModelSpec {
            kind: ModelKind::LogisticClassification,
            input_dim: 3,
            output_dim: 2,
            hidden_dim: 0,
        };
        let w = ParamVector::zeros(spec.param_count());
        let x = matrix(4, 3, &[0.5; 12]);
        let y = [0.0, 1.0, 0.0, 1.0];
        let (loss, _) = loss_and_gradient(&spec, LossKind::CrossEntropy, &w, &x, &y).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn empty_batch_rejected() {
        let spec = ModelSpec {
            kind: ModelKind::LogisticClassification,
            input_dim: 2,
            output_dim: 2,
            hidden_dim: 0,
        };
        let w = ParamVector::zeros(spec.param_count());
        let x = matrix(0, 2, &[]);
        assert!(loss_and_gradient(&spec, LossKind::CrossEntropy, &w, &x, &[]).is_err());
        assert!(evaluate(&spec, &w, &x, &[], Metric::ErrorRate).is_err());
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let spec = ModelSpec {
            kind: ModelKind::LogisticClassification,
            input_dim: 3,
            output_dim: 2,
            hidden_dim: 0,
        };
        let w = ParamVector::zeros(spec.param_count());
        let x = matrix(1, 2, &[1.0, 2.0]);
        assert!(matches!(predict(&spec, &w, &x), Err(Error::Config(_))));
    }

    #[test]
    fn error_rate_extremes() {
        let spec = ModelSpec {
            kind: ModelKind::LogisticClassification,
            input_dim: 1,
            output_dim: 2,
            hidden_dim: 0,
        };
        // w chosen so x>0 -> class 1
        let w = ParamVector::from_vec(vec![-5.0, 5.0, 0.0, 0.0]);
        let x = matrix(4, 1, &[1.0, 1.0, -1.0, -1.0]);
        let perfect = evaluate(&spec, &w, &x, &[1.0, 1.0, 0.0, 0.0], Metric::ErrorRate).unwrap();
        assert_eq!(perfect.value, 0.0);
        let all_wrong = evaluate(&spec, &w, &x, &[0.0, 0.0, 1.0, 1.0], Metric::ErrorRate).unwrap();
        assert_eq!(all_wrong.value, 1.0);
    }

    #[test]
    fn smape_zero_conventions() {
        let spec = ModelSpec {
            kind: ModelKind::LinearRegression,
            input_dim: 1,
            output_dim: 1,
            hidden_dim: 0,
        };
        // yhat = 2x with weight 2, bias 0
        let w = ParamVector::from_vec(vec![2.0, 0.0]);
        let x = matrix(1, 1, &[1.0]);
        let s = evaluate(&spec, &w, &x, &[2.0], Metric::Smape).unwrap();
        assert_eq!(s.value, 0.0);
        // 0/0 convention: yhat = 0, y = 0
        let w0 = ParamVector::zeros(2);
        let s0 = evaluate(&spec, &w0, &x, &[0.0], Metric::Smape).unwrap();
        assert_eq!(s0.value, 0.0);
    }

    #[test]
    fn evaluate_invariant_to_row_permutation() {
        let spec = ModelSpec {
            kind: ModelKind::LogisticClassification,
            input_dim: 2,
            output_dim: 2,
            hidden_dim: 0,
        };
        let mut rng = Xoshiro256::seed_from_u64(5);
        let w = ParamVector::from_vec((0..spec.param_count()).map(|_| rng.next_normal()).collect());
        let n = 9;
        let xv: Vec<f64> = (0..n * 2).map(|_| rng.next_normal()).collect();
        let y: Vec<f64> = (0..n).map(|_| (rng.next_u64() % 2) as f64).collect();
        let x = matrix(n, 2, &xv);
        let base = evaluate(&spec, &w, &x, &y, Metric::ErrorRate).unwrap();
        // reverse the rows
        let mut xr = Vec::new();
        let mut yr = Vec::new();
        for i in (0..n).rev() {
            xr.extend_from_slice(x.row(i));
            yr.push(y[i]);
        }
        let rev = evaluate(&spec, &ParamVector::from_vec(w.as_slice().to_vec()), &matrix(n, 2, &xr), &yr, Metric::ErrorRate).unwrap();
        assert_eq!(base.value, rev.value);
    }

    #[test]
    fn loss_non_negative() {
        let mut rng = Xoshiro256::seed_from_u64(8);
        let spec = ModelSpec {
            kind: ModelKind::LogisticClassification,
            input_dim: 3,
            output_dim: 3,
            hidden_dim: 0,
        };
        for _ in 0..20 {
            let w = ParamVector::from_vec(
                (0..spec.param_count()).map(|_| rng.uniform(-3.0, 3.0)).collect(),
            );
            let xv: Vec<f64> = (0..6 * 3).map(|_| rng.next_normal()).collect();
            let y: Vec<f64> = (0..6).map(|_| (rng.next_u64() % 3) as f64).collect();
            let (loss, _) =
                loss_and_gradient(&spec, LossKind::CrossEntropy, &w, &FeatureMatrix::new(6, 3, xv), &y).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn param_count_fixtures() {
        let linear = ModelSpec {
            kind: ModelKind::LinearRegression,
            input_dim: 10,
            output_dim: 1,
            hidden_dim: 0,
        };
        assert_eq!(linear.param_count(), 11);
        let mlp = ModelSpec {
            kind: ModelKind::MlpOneHidden,
            input_dim: 10,
            output_dim: 2,
            hidden_dim: 16,
        };
        assert_eq!(mlp.param_count(), 210);
    }

    #[test]
    fn macro_f1_all_correct_is_zero() {
        let spec = ModelSpec {
            kind: ModelKind::LogisticClassification,
            input_dim: 1,
            output_dim: 2,
            hidden_dim: 0,
        };
        let w = ParamVector::from_vec(vec![-5.0, 5.0, 0.0, 0.0]);
        let x = matrix(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let s = evaluate(&spec, &w, &x, &[1.0, 0.0, 1.0, 0.0], Metric::OneMinusF1).unwrap();
        assert!(s.value.abs() < 1e-15);
    }
}
