//! Server side: per-update aggregation, the update-frequency ledger,
//! fewest-updates dispatch under the concurrency cap, and byte accounting.
//!
//! Aggregation applies each upload on arrival:
//!
//! ```text
//! w  <-  w - (n_k / N) * (base_model - trained_model)
//! ```
//!
//! where `n_k` is the uploading device's current sample count and `N` the
//! sum of the latest counts reported by every device (a fixed-N mode is
//! config-exposed). Dispatch picks the idle device with the fewest completed
//! updates, ties broken by lowest id. A fairness lead bound keeps any
//! device's count within `max_lead + 1` of the global minimum: without it a
//! single slow device lets the fast ones run away by tens of updates while
//! it finishes one round, which defeats the balanced-ledger goal the
//! fewest-updates rule exists for.

use crate::client::LocalUpdate;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};
use crate::stream::DeviceId;

/// Bytes needed to ship one model at the given scalar width.
pub fn model_bytes(spec: &ModelSpec, scalar_bytes: u64) -> u64 {
    spec.param_count() as u64 * scalar_bytes
}

/// Concurrency cap: `ceil(gamma * K)` with guard digits so exact products
/// like 0.2 * 20 do not round up spuriously.
pub fn concurrency_cap(gamma: f64, num_devices: usize) -> usize {
    let raw = gamma * num_devices as f64;
    let nearest = raw.round();
    if (raw - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        raw.ceil() as usize
    }
}

/// Result of applying one upload.
#[derive(Debug, Clone)]
pub struct AggregationResult {
    pub new_global: ParamVector,
    /// `n_k / N` at application time (after any staleness discount).
    pub applied_weight: f64,
    pub source_device: DeviceId,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    global_model: ParamVector,
    /// Completed update count per device.
    ledger: Vec<u64>,
    /// Latest reported sample count per device.
    latest_samples: Vec<u64>,
    active: Vec<bool>,
    active_count: usize,
    /// Devices whose streams are exhausted; excluded from scheduling and
    /// from the fairness minimum.
    completed: Vec<bool>,
    gamma: f64,
    cap: usize,
    fixed_total: Option<u64>,
    model_bytes: u64,
    /// Allowed ledger lead over the global minimum when dispatching.
    max_lead: Option<u64>,
    /// Per-unit-staleness multiplicative weight discount; 1.0 = off.
    staleness_discount: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    /// Count of applied aggregations.
    pub round_counter: u64,
    pub dispatch_count: u64,
}

impl ServerState {
    pub fn new(
        initial_model: ParamVector,
        num_devices: usize,
        gamma: f64,
        model_bytes: u64,
        max_lead: Option<u64>,
        fixed_total: Option<u64>,
        staleness_discount: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::config(format!("gamma {gamma} outside (0, 1]")));
        }
        if num_devices == 0 {
            return Err(Error::config("need at least one device"));
        }
        Ok(ServerState {
            global_model: initial_model,
            ledger: vec![0; num_devices],
            latest_samples: vec![0; num_devices],
            active: vec![false; num_devices],
            active_count: 0,
            completed: vec![false; num_devices],
            gamma,
            cap: concurrency_cap(gamma, num_devices).max(1),
            fixed_total,
            model_bytes,
            max_lead,
            staleness_discount,
            uplink_bytes: 0,
            downlink_bytes: 0,
            round_counter: 0,
            dispatch_count: 0,
        })
    }

    pub fn global_model(&self) -> &ParamVector {
        &self.global_model
    }

    pub fn ledger(&self) -> &[u64] {
        &self.ledger
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn active_count(&self) -> usize {
        self.active_count
    }

    pub fn is_active(&self, device: DeviceId) -> bool {
        self.active[device]
    }

    /// Total samples N as used by the next aggregation.
    pub fn total_samples(&self) -> u64 {
        self.fixed_total.unwrap_or_else(|| self.latest_samples.iter().sum())
    }

    /// Mark a device's stream exhausted.
    pub fn mark_completed(&mut self, device: DeviceId) {
        self.completed[device] = true;
    }

    /// A device's upload arrived (or it finished unusable work): free its
    /// training slot before aggregation.
    pub fn release(&mut self, device: DeviceId) {
        if self.active[device] {
            self.active[device] = false;
            self.active_count -= 1;
        }
    }

    /// Charge downlink for a broadcast to `sends` devices without going
    /// through dispatch bookkeeping (async-broadcast baseline).
    pub fn charge_broadcast(&mut self, sends: u64) {
        self.downlink_bytes += sends * self.model_bytes;
    }

    /// Apply one upload. Returns `None` (state untouched apart from the
    /// already-released slot) when the update is non-finite.
    pub fn aggregate(&mut self, update: &LocalUpdate, staleness: u64) -> Result<Option<AggregationResult>> {
        if update.trained_model.dim() != self.global_model.dim()
            || update.base_model.dim() != self.global_model.dim()
        {
            return Err(Error::protocol(format!(
                "update from device {} has dim {}, global model has dim {}",
                update.device_id,
                update.trained_model.dim(),
                self.global_model.dim()
            )));
        }
        if update.sample_count == 0 {
            return Err(Error::protocol(format!(
                "update from device {} carries no samples",
                update.device_id
            )));
        }
        if !update.trained_model.is_finite() || !update.base_model.is_finite() {
            log::warn!("rejecting non-finite update from device {}", update.device_id);
            return Ok(None);
        }
        let k = update.device_id;
        self.latest_samples[k] = update.sample_count;
        let total = self.total_samples();
        let mut weight = update.sample_count as f64 / total as f64;
        if self.staleness_discount < 1.0 && staleness > 0 {
            weight *= self.staleness_discount.powi(staleness as i32);
        }
        let mut new_global = self.global_model.clone();
        for ((g, base), trained) in new_global
            .as_mut_slice()
            .iter_mut()
            .zip(update.base_model.as_slice())
            .zip(update.trained_model.as_slice())
        {
            *g -= weight * (base - trained);
        }
        debug_assert!(new_global.is_finite());
        self.global_model = new_global.clone();
        self.ledger[k] += 1;
        self.round_counter += 1;
        self.uplink_bytes += self.model_bytes;
        Ok(Some(AggregationResult { new_global, applied_weight: weight, source_device: k }))
    }

    /// Ledger minimum over devices still in the cohort.
    fn global_min(&self) -> Option<u64> {
        self.ledger
            .iter()
            .zip(&self.completed)
            .filter(|(_, done)| !**done)
            .map(|(c, _)| *c)
            .min()
    }

    /// Pick the next device to dispatch to from the idle set, or `None`
    /// when the cap is reached, no candidate exists, or every candidate is
    /// already `max_lead` updates ahead of the global minimum.
    ///
    /// On selection the device joins the active set and downlink is charged.
    pub fn select_next_device(&mut self, idle: &[DeviceId]) -> Option<DeviceId> {
        if self.active_count >= self.cap {
            return None;
        }
        let candidate = idle
            .iter()
            .copied()
            .filter(|&d| !self.completed[d] && !self.active[d])
            .min_by_key(|&d| (self.ledger[d], d))?;
        if let Some(lead) = self.max_lead {
            let gmin = self.global_min()?;
            if self.ledger[candidate] > gmin + lead {
                return None;
            }
        }
        self.active[candidate] = true;
        self.active_count += 1;
        self.dispatch_count += 1;
        self.downlink_bytes += self.model_bytes;
        Some(candidate)
    }

    /// Initial dispatch on a fresh server: fill the cap. With an all-zero
    /// ledger the tie-break selects the lowest ids.
    pub fn init_dispatch(&mut self, num_devices: usize) -> Result<Vec<DeviceId>> {
        if self.round_counter != 0 || self.ledger.iter().any(|&c| c != 0) {
            return Err(Error::protocol("init_dispatch on a non-fresh server".to_string()));
        }
        let all: Vec<DeviceId> = (0..num_devices).collect();
        let mut out = Vec::new();
        while let Some(d) = self.select_next_device(&all) {
            out.push(d);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, ModelSpec};

    fn update(device: DeviceId, base: Vec<f64>, trained: Vec<f64>, n: u64) -> LocalUpdate {
        LocalUpdate {
            device_id: device,
            trained_model: ParamVector::from_vec(trained),
            base_model: ParamVector::from_vec(base),
            sample_count: n,
            round_stamp: 0.0,
        }
    }

    fn server(dim: usize, k: usize, gamma: f64) -> ServerState {
        ServerState::new(ParamVector::zeros(dim), k, gamma, 4 * dim as u64, Some(1), None, 1.0).unwrap()
    }

    #[test]
    fn model_bytes_fixtures() {
        let linear = ModelSpec { kind: ModelKind::LinearRegression, input_dim: 10, output_dim: 1, hidden_dim: 0 };
        assert_eq!(model_bytes(&linear, 4), 44);
        assert_eq!(model_bytes(&linear, 8), 88);
        let mlp = ModelSpec { kind: ModelKind::MlpOneHidden, input_dim: 10, output_dim: 2, hidden_dim: 16 };
        assert_eq!(model_bytes(&mlp, 4), 840);
    }

    #[test]
    fn aggregate_hand_fixture() {
        let mut s = server(2, 4, 1.0);
        s.global_model = ParamVector::from_vec(vec![1.0, 2.0]);
        // make other devices account for 150 samples so N lands on 200
        s.latest_samples = vec![0, 150, 0, 0];
        let result = s
            .aggregate(&update(0, vec![1.0, 2.0], vec![0.8, 2.2], 50), 0)
            .unwrap()
            .unwrap();
        assert!((result.applied_weight - 0.25).abs() < 1e-12);
        assert!((result.new_global.as_slice()[0] - 0.95).abs() < 1e-12);
        assert!((result.new_global.as_slice()[1] - 2.05).abs() < 1e-12);
        assert_eq!(s.ledger()[0], 1);
        assert_eq!(s.round_counter, 1);
    }

    #[test]
    fn noop_update_keeps_global() {
        let mut s = server(3, 2, 1.0);
        s.global_model = ParamVector::from_vec(vec![0.5, -0.5, 1.0]);
        let before = s.global_model().clone();
        s.aggregate(&update(1, vec![9.0, 9.0, 9.0], vec![9.0, 9.0, 9.0], 10), 0)
            .unwrap()
            .unwrap();
        assert_eq!(s.global_model(), &before);
    }

    #[test]
    fn non_finite_update_rejected_without_state_change() {
        let mut s = server(2, 2, 1.0);
        let before_model = s.global_model().clone();
        let out = s
            .aggregate(&update(0, vec![0.0, 0.0], vec![f64::NAN, 0.0], 10), 0)
            .unwrap();
        assert!(out.is_none());
        assert_eq!(s.global_model(), &before_model);
        assert_eq!(s.ledger()[0], 0);
        assert_eq!(s.round_counter, 0);
        assert_eq!(s.uplink_bytes, 0);
    }

    #[test]
    fn dimension_mismatch_is_protocol_error() {
        let mut s = server(2, 2, 1.0);
        let bad = update(0, vec![0.0; 3], vec![0.0; 3], 10);
        assert!(matches!(s.aggregate(&bad, 0), Err(Error::Protocol(_))));
    }

    #[test]
    fn n_monotone_across_aggregations() {
        let mut s = server(1, 3, 1.0);
        let mut last_n = 0;
        for (dev, n) in [(0, 5u64), (1, 7), (0, 9), (2, 3), (1, 11)] {
            s.aggregate(&update(dev, vec![0.0], vec![0.1], n), 0).unwrap().unwrap();
            let now = s.total_samples();
            assert!(now >= last_n, "N decreased from {last_n} to {now}");
            last_n = now;
        }
    }

    #[test]
    fn select_prefers_fewest_updates() {
        let mut s = server(1, 3, 1.0);
        s.ledger = vec![3, 1, 2];
        let picked = s.select_next_device(&[0, 1, 2]).unwrap();
        assert_eq!(picked, 1);
    }

    #[test]
    fn select_tie_breaks_lowest_id() {
        let mut s = server(1, 2, 1.0);
        s.ledger = vec![2, 2];
        // equalize the fairness floor so both are dispatchable
        let picked = s.select_next_device(&[0, 1]).unwrap();
        assert_eq!(picked, 0);
    }

    #[test]
    fn select_none_when_cap_reached() {
        let mut s = server(1, 4, 0.5); // cap = 2
        assert_eq!(s.cap(), 2);
        assert!(s.select_next_device(&[0, 1, 2, 3]).is_some());
        assert!(s.select_next_device(&[1, 2, 3]).is_some());
        assert!(s.select_next_device(&[2, 3]).is_none());
    }

    #[test]
    fn select_respects_fairness_lead() {
        let mut s = server(1, 3, 1.0);
        // device 0 is far behind but busy; others may lead by at most 1
        s.ledger = vec![0, 2, 2];
        s.active[0] = true;
        s.active_count = 1;
        assert_eq!(s.select_next_device(&[1, 2]), None);
        s.ledger = vec![0, 1, 1];
        assert_eq!(s.select_next_device(&[1, 2]), Some(1));
    }

    #[test]
    fn completed_devices_leave_the_fairness_floor() {
        let mut s = server(1, 3, 1.0);
        s.ledger = vec![0, 5, 5];
        s.mark_completed(0);
        assert_eq!(s.select_next_device(&[1, 2]), Some(1));
    }

    #[test]
    fn init_dispatch_fills_cap_with_lowest_ids() {
        let mut s = server(1, 20, 0.2);
        let picked = s.init_dispatch(20).unwrap();
        assert_eq!(picked, vec![0, 1, 2, 3]);
        assert_eq!(s.downlink_bytes, 4 * 4); // 4 dispatches x 4 bytes/model (dim 1)

        let mut all = server(1, 5, 1.0);
        assert_eq!(all.init_dispatch(5).unwrap().len(), 5);

        let mut tiny = server(1, 20, 0.05);
        assert_eq!(tiny.init_dispatch(20).unwrap().len(), 1);
    }

    #[test]
    fn invalid_gamma_rejected() {
        assert!(ServerState::new(ParamVector::zeros(1), 2, 0.0, 4, None, None, 1.0).is_err());
        assert!(ServerState::new(ParamVector::zeros(1), 2, 1.5, 4, None, None, 1.0).is_err());
    }

    #[test]
    fn concurrency_cap_rounding() {
        assert_eq!(concurrency_cap(0.2, 20), 4);
        assert_eq!(concurrency_cap(0.05, 20), 1);
        assert_eq!(concurrency_cap(1.0, 20), 20);
        assert_eq!(concurrency_cap(0.17, 20), 4); // 3.4 -> ceil
    }

    #[test]
    fn replayed_sequence_matches_recurrence() {
        // independent re-implementation of the update recurrence
        let mut s = server(2, 3, 1.0);
        let mut reference = vec![0.0f64, 0.0];
        let mut latest = [0u64; 3];
        let mut rng = crate::rng::Xoshiro256::seed_from_u64(77);
        for step in 0..50 {
            let dev = (step % 3) as usize;
            let n = 5 + rng.next_bounded(20);
            let base: Vec<f64> = reference.clone();
            let trained: Vec<f64> = base.iter().map(|b| b + rng.uniform(-0.2, 0.2)).collect();
            s.aggregate(&update(dev, base.clone(), trained.clone(), n), 0).unwrap().unwrap();
            latest[dev] = n;
            let total: u64 = latest.iter().sum();
            let w = n as f64 / total as f64;
            for i in 0..2 {
                reference[i] -= w * (base[i] - trained[i]);
            }
            for i in 0..2 {
                assert!((s.global_model().as_slice()[i] - reference[i]).abs() < 1e-12);
            }
        }
    }
}
