//! The per-device learning loop: receive the global model, score it on the
//! newly arrived batch, test for drift, adapt lambda, train with the
//! proximal objective and emit the upload.
//!
//! Ordering matters: the new batch scores the received global model
//! *before* it joins the training buffer, so the drift test always sees
//! out-of-sample evidence.

use serde::{Deserialize, Serialize};

use crate::drift::{
    adapt_lambda, detect, AdaptationPolicy, DeltaMode, DriftVerdict, EvalQueue,
};
use crate::error::Result;
use crate::model::{
    evaluate, loss_and_gradient, LossKind, Metric, ModelSpec, ParamVector,
};
use crate::stream::{next_batch, DeviceId, DriftPlan, StreamBatch, StreamSpec};

/// Loss ceiling for the divergence guard in [`local_train`].
pub const DIVERGENCE_LOSS_LIMIT: f64 = 1e6;

/// Knobs shared by every device in a run.
#[derive(Debug, Clone)]
pub struct ClientSettings {
    pub model_spec: ModelSpec,
    pub loss: LossKind,
    pub metric: Metric,
    pub significance: f64,
    pub delta_mode: DeltaMode,
    pub min_warmup: usize,
    pub queue_capacity: usize,
    pub adaptation: AdaptationPolicy,
    /// Drift detection + lambda adaptation on/off (off for the baselines).
    pub detection_enabled: bool,
    /// When set, scores from rounds that flagged drift stay out of the queue.
    pub exclude_drifted_scores: bool,
    pub learning_rate: f64,
    pub local_epochs: usize,
    /// Gradient-step chunk size; `None` = one full-batch step per epoch.
    pub minibatch: Option<usize>,
    /// Keep only the most recent batches in the training buffer.
    pub buffer_window_rounds: Option<usize>,
}

/// All state owned by one logical device.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub device_id: DeviceId,
    pub settings: ClientSettings,
    pub stream: StreamSpec,
    pub drift_plan: DriftPlan,
    pub local_model: ParamVector,
    pub received_global: ParamVector,
    pub lambda: f64,
    pub eval_queue: EvalQueue,
    pub train_buffer: Vec<StreamBatch>,
    /// Total training samples consumed so far (n_k).
    pub sample_count: u64,
    /// Completed uploads.
    pub update_count: u64,
    /// Next stream round to draw.
    pub next_round: usize,
}

impl DeviceState {
    pub fn new(
        device_id: DeviceId,
        settings: ClientSettings,
        stream: StreamSpec,
        drift_plan: DriftPlan,
        initial_model: ParamVector,
    ) -> Self {
        let eval_queue = EvalQueue::new(settings.queue_capacity, settings.metric);
        let lambda = settings.adaptation.lambda_initial;
        DeviceState {
            device_id,
            settings,
            stream,
            drift_plan,
            local_model: initial_model.clone(),
            received_global: initial_model,
            lambda,
            eval_queue,
            train_buffer: Vec::new(),
            sample_count: 0,
            update_count: 0,
            next_round: 0,
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.next_round >= self.stream.total_rounds
    }
}

/// Upload produced by one device round.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub device_id: DeviceId,
    pub trained_model: ParamVector,
    /// The global model this round of training started from.
    pub base_model: ParamVector,
    pub sample_count: u64,
    /// Simulated time at which the device finished training.
    pub round_stamp: f64,
}

/// What a device round produced.
#[derive(Debug, Clone)]
pub enum ClientRoundOutcome {
    Update(Box<LocalUpdate>, DriftVerdict),
    /// The stream has no rounds left; no update is emitted.
    Exhausted,
}

/// Run one full device round against the received global model.
///
/// In order: draw the round's batch, score the global model on it, run the
/// drift test, adapt lambda, push the score, append the batch to the
/// training buffer, train, and emit the upload.
pub fn client_round(
    state: &mut DeviceState,
    global_model: &ParamVector,
    now: f64,
) -> Result<ClientRoundOutcome> {
    if state.is_exhausted() {
        return Ok(ClientRoundOutcome::Exhausted);
    }
    let round = state.next_round;
    let batch = next_batch(&state.stream, &state.drift_plan, round)?;

    // (1) prediction/evaluation on the incoming samples precedes training
    let score = evaluate(
        &state.settings.model_spec,
        global_model,
        &batch.features,
        &batch.labels,
        state.settings.metric,
    )?;

    // (2) drift test against the score history
    let verdict = if state.settings.detection_enabled {
        detect(
            &state.eval_queue,
            score,
            state.settings.significance,
            state.settings.delta_mode,
            state.settings.min_warmup,
        )?
    } else {
        DriftVerdict {
            drifted: false,
            statistic: 0.0,
            p_value: 1.0,
            mean_history: state.eval_queue.mean(),
            pooled_mean: state.eval_queue.mean(),
        }
    };

    // (3) lambda adaptation (fixed lambda when detection is off)
    if state.settings.detection_enabled {
        state.lambda = adapt_lambda(state.lambda, &verdict, &state.settings.adaptation);
    }

    // (4) score enters the history (unless configured to drop drifted ones)
    if !(state.settings.exclude_drifted_scores && verdict.drifted) {
        state.eval_queue.push(score)?;
    }

    // (5) the batch joins the training buffer
    state.sample_count += batch.features.rows() as u64;
    state.train_buffer.push(batch);
    if let Some(window) = state.settings.buffer_window_rounds {
        while state.train_buffer.len() > window.max(1) {
            state.train_buffer.remove(0);
        }
    }

    // (6) local training from the received global model
    let trained = local_train(
        &state.settings.model_spec,
        state.settings.loss,
        global_model,
        global_model,
        state.lambda,
        &state.train_buffer,
        state.settings.learning_rate,
        state.settings.local_epochs,
        state.settings.minibatch,
    )?;

    state.local_model = trained.clone();
    state.received_global = global_model.clone();
    state.update_count += 1;
    state.next_round += 1;

    let update = LocalUpdate {
        device_id: state.device_id,
        trained_model: trained,
        base_model: global_model.clone(),
        sample_count: state.sample_count,
        round_stamp: now,
    };
    Ok(ClientRoundOutcome::Update(Box::new(update), verdict))
}

/// Combined mean loss and gradient over every sample in the buffer.
fn buffer_loss_and_gradient(
    spec: &ModelSpec,
    loss: LossKind,
    w: &ParamVector,
    buffer: &[StreamBatch],
) -> Result<(f64, ParamVector)> {
    let total_rows: usize = buffer.iter().map(|b| b.features.rows()).sum();
    let mut grad = ParamVector::zeros(w.dim());
    let mut total_loss = 0.0;
    for batch in buffer {
        let rows = batch.features.rows();
        if rows == 0 {
            continue;
        }
        let (l, g) = loss_and_gradient(spec, loss, w, &batch.features, &batch.labels)?;
        let weight = rows as f64 / total_rows as f64;
        total_loss += weight * l;
        grad.axpy(weight, &g);
    }
    Ok((total_loss, grad))
}

/// Loss and gradient of the proximal objective
/// `h(w_k) = f(w_k) + lambda/2 ||w_k - w||^2`.
pub fn proximal_loss_and_gradient(
    spec: &ModelSpec,
    loss: LossKind,
    w: &ParamVector,
    global: &ParamVector,
    lambda: f64,
    x: &crate::model::FeatureMatrix,
    y: &[f64],
) -> Result<(f64, ParamVector)> {
    let (data_loss, mut grad) = loss_and_gradient(spec, loss, w, x, y)?;
    let mut penalty = 0.0;
    for ((g, wi), gi) in grad.as_mut_slice().iter_mut().zip(w.as_slice()).zip(global.as_slice()) {
        let d = wi - gi;
        penalty += d * d;
        *g += lambda * d;
    }
    Ok((data_loss + 0.5 * lambda * penalty, grad))
}

/// One proximal-gradient step: forward step on the data gradient, exact
/// backward step on the quadratic penalty,
///
/// ```text
/// w  <-  (w - eta * grad_f(w) + eta * lambda * w_global) / (1 + eta * lambda)
/// ```
///
/// First-order identical to stepping along `grad f + lambda (w - w_global)`
/// but stable for any lambda, so escalating the penalty pins the iterate to
/// the global model instead of amplifying oscillations once
/// `eta * lambda` crosses 2. At `lambda = 0` this is exactly a plain SGD step.
fn proximal_step(w: &mut ParamVector, grad: &ParamVector, global: &ParamVector, eta: f64, lambda: f64) {
    let pull = eta * lambda;
    let denom = 1.0 + pull;
    for ((wi, gi), glob) in w
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(global.as_slice())
    {
        *wi = (*wi - eta * gi + pull * glob) / denom;
    }
}

/// Minimize the proximal objective over the buffer for `epochs` passes
/// (one full-batch step per epoch unless a minibatch size is set).
///
/// Divergence guard: if the data loss exceeds [`DIVERGENCE_LOSS_LIMIT`] or
/// any parameter turns non-finite, the round is abandoned and `w_start` is
/// returned unchanged (with a warning logged).
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    spec: &ModelSpec,
    loss: LossKind,
    w_start: &ParamVector,
    global: &ParamVector,
    lambda: f64,
    buffer: &[StreamBatch],
    learning_rate: f64,
    epochs: usize,
    minibatch: Option<usize>,
) -> Result<ParamVector> {
    if buffer.iter().all(|b| b.features.rows() == 0) || buffer.is_empty() {
        return Err(crate::error::Error::invalid_input("training buffer is empty".to_string()));
    }
    if learning_rate <= 0.0 {
        return Err(crate::error::Error::config("learning rate must be positive".to_string()));
    }
    let mut w = w_start.clone();
    for _epoch in 0..epochs {
        match minibatch {
            None => {
                let (data_loss, grad) = buffer_loss_and_gradient(spec, loss, &w, buffer)?;
                if data_loss > DIVERGENCE_LOSS_LIMIT || !w.is_finite() {
                    log::warn!("local training diverged (loss {data_loss:.3e}); reverting round");
                    return Ok(w_start.clone());
                }
                proximal_step(&mut w, &grad, global, learning_rate, lambda);
            }
            Some(chunk_rows) => {
                for batch in buffer {
                    let rows = batch.features.rows();
                    let mut start = 0;
                    while start < rows {
                        let end = (start + chunk_rows.max(1)).min(rows);
                        let slice_rows = end - start;
                        let data: Vec<f64> = (start..end)
                            .flat_map(|i| batch.features.row(i).iter().copied())
                            .collect();
                        let x = crate::model::FeatureMatrix::new(slice_rows, batch.features.cols(), data);
                        let y = &batch.labels[start..end];
                        let (data_loss, grad) = loss_and_gradient(spec, loss, &w, &x, y)?;
                        if data_loss > DIVERGENCE_LOSS_LIMIT || !w.is_finite() {
                            log::warn!("local training diverged (loss {data_loss:.3e}); reverting round");
                            return Ok(w_start.clone());
                        }
                        proximal_step(&mut w, &grad, global, learning_rate, lambda);
                        start = end;
                    }
                }
            }
        }
    }
    if !w.is_finite() {
        log::warn!("local training produced non-finite parameters; reverting round");
        return Ok(w_start.clone());
    }
    Ok(w)
}

/// Serializable per-device summary used in round records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceSnapshot {
    pub device_id: DeviceId,
    pub lambda: f64,
    pub update_count: u64,
    pub sample_count: u64,
}
