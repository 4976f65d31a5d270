//! Per-MI features and the observation vectors fed to the policy.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::sim::MonitorReport;

/// Number of monitor intervals in the observation history.
pub const HISTORY_LEN: usize = 10;
pub const FEATURES_PER_MI: usize = 3;
pub const OBS_DIM_BASE: usize = HISTORY_LEN * FEATURES_PER_MI;
pub const OBS_DIM_AUGMENTED: usize = OBS_DIM_BASE + 2;
pub const FEATURE_CLIP: f64 = 10.0;

/// Window used by the competition estimators.
pub const ESTIMATOR_WINDOW: usize = 10;
pub const COMPETITOR_CV_COEF: f64 = 4.0;
pub const COMPETITOR_LOSS_COEF: f64 = 20.0;
pub const MAX_COMPETITORS: f64 = 8.0;
const CAPACITY_FLOOR_PPS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiFeatures {
    pub lat_grad: f64,
    pub lat_ratio: f64,
    pub send_ratio: f64,
}

impl MiFeatures {
    /// Fill value for empty or muted intervals.
    pub const NEUTRAL: Self = Self { lat_grad: 0.0, lat_ratio: 1.0, send_ratio: 1.0 };
}

/// Latency gradient, latency ratio, and delivered/sent ratio for one MI.
///
/// Degenerate intervals (nothing sent or nothing delivered) produce the
/// neutral values of [`MiFeatures::NEUTRAL`] for the affected entries.
pub fn compute_mi_features(
    report: &MonitorReport,
    prev_report: Option<&MonitorReport>,
    min_latency: Option<f64>,
) -> MiFeatures {
    let has_latency = report.delivered_pkts > 0;
    let lat_grad = match prev_report {
        Some(prev) if has_latency && prev.delivered_pkts > 0 && report.duration_s > 0.0 => {
            (report.mean_latency_s - prev.mean_latency_s) / report.duration_s
        }
        _ => 0.0,
    };
    let lat_ratio = match min_latency {
        Some(min) if has_latency && min > 0.0 => report.mean_latency_s / min,
        _ => 1.0,
    };
    let send_ratio = if report.sent_pkts == 0 {
        1.0
    } else {
        report.delivered_pkts as f64 / report.sent_pkts as f64
    };
    MiFeatures { lat_grad, lat_ratio, send_ratio }
}

/// Goodput-style capacity estimate `send_rate * send_ratio`.
pub fn estimate_capacity(send_rate: f64, send_ratio: f64) -> f64 {
    send_rate * send_ratio
}

/// Competitor count from the coefficient of variation of throughput and mean loss.
pub fn competitors_from_signals(cv: f64, mean_loss: f64) -> f64 {
    (1.0 + COMPETITOR_CV_COEF * cv + COMPETITOR_LOSS_COEF * mean_loss).clamp(1.0, MAX_COMPETITORS)
}

/// Estimated number of flows sharing the bottleneck, in `[1, 8]`.
pub fn estimate_competitors(throughputs: &[f64], losses: &[f64]) -> f64 {
    let cv = if throughputs.is_empty() {
        0.0
    } else {
        let n = throughputs.len() as f64;
        let mean = throughputs.iter().sum::<f64>() / n;
        if mean > 0.0 {
            let var = throughputs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            var.sqrt() / mean
        } else {
            0.0
        }
    };
    let mean_loss = if losses.is_empty() {
        0.0
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    };
    competitors_from_signals(cv, mean_loss)
}

pub fn tput_fraction(ego_tput: f64, capacity_estimate: f64) -> f64 {
    (ego_tput / capacity_estimate.max(CAPACITY_FLOOR_PPS)).clamp(0.0, 1.0)
}

/// Flat policy input: `HISTORY_LEN` feature triples, oldest first, optionally
/// followed by `(competitor_estimate, tput_fraction)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Rolling per-flow state: the last `HISTORY_LEN` features plus the windows
/// the augmentation estimators need.
#[derive(Clone, Debug, Default)]
pub struct FeatureHistory {
    features: VecDeque<MiFeatures>,
    prev_report: Option<MonitorReport>,
    min_latency: Option<f64>,
    tput_window: VecDeque<f64>,
    loss_window: VecDeque<f64>,
    capacity_estimate: f64,
    last_tput: f64,
}

impl FeatureHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn latest(&self) -> Option<&MiFeatures> {
        self.features.back()
    }

    pub fn min_latency(&self) -> Option<f64> {
        self.min_latency
    }

    /// Folds one report into the history and returns its features.
    pub fn push(&mut self, report: &MonitorReport) -> MiFeatures {
        if let Some(seen) = report.min_latency_s_seen_so_far {
            self.min_latency = Some(self.min_latency.map_or(seen, |m| m.min(seen)));
        }
        let features = compute_mi_features(report, self.prev_report.as_ref(), self.min_latency);
        if self.features.len() == HISTORY_LEN {
            self.features.pop_front();
        }
        self.features.push_back(features);

        if self.tput_window.len() == ESTIMATOR_WINDOW {
            self.tput_window.pop_front();
            self.loss_window.pop_front();
        }
        self.tput_window.push_back(report.throughput_pps);
        self.loss_window.push_back(report.loss_fraction());
        let capacity = estimate_capacity(report.send_rate_pps(), features.send_ratio);
        self.capacity_estimate = self.capacity_estimate.max(capacity);
        self.last_tput = report.throughput_pps;

        if report.delivered_pkts > 0 || self.prev_report.is_none() {
            self.prev_report = Some(report.clone());
        }
        features
    }

    pub fn competitor_estimate(&self) -> f64 {
        let tputs: Vec<f64> = self.tput_window.iter().copied().collect();
        let losses: Vec<f64> = self.loss_window.iter().copied().collect();
        estimate_competitors(&tputs, &losses)
    }

    /// Latest throughput as a fraction of the largest capacity estimate seen.
    pub fn tput_fraction(&self) -> f64 {
        if self.tput_window.is_empty() {
            return 1.0;
        }
        tput_fraction(self.last_tput, self.capacity_estimate)
    }
}

pub fn build_observation(hist: &FeatureHistory, augmented: bool) -> Observation {
    let dim = if augmented { OBS_DIM_AUGMENTED } else { OBS_DIM_BASE };
    let mut out = Vec::with_capacity(dim);
    for _ in hist.features.len()..HISTORY_LEN {
        let n = MiFeatures::NEUTRAL;
        out.extend_from_slice(&[n.lat_grad, n.lat_ratio, n.send_ratio]);
    }
    for f in &hist.features {
        out.extend_from_slice(&[f.lat_grad, f.lat_ratio, f.send_ratio]);
    }
    if augmented {
        out.push(hist.competitor_estimate());
        out.push(hist.tput_fraction());
    }
    for v in &mut out {
        *v = if v.is_nan() { 0.0 } else { v.clamp(-FEATURE_CLIP, FEATURE_CLIP) };
    }
    Observation(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(sent: u64, delivered: u64, mean_latency: f64, duration: f64) -> MonitorReport {
        MonitorReport {
            flow_id: 0,
            mi_index: 0,
            duration_s: duration,
            sent_pkts: sent,
            delivered_pkts: delivered,
            lost_pkts: sent - delivered,
            mean_latency_s: mean_latency,
            min_latency_s_seen_so_far: (delivered > 0).then_some(mean_latency),
            throughput_pps: delivered as f64 / duration,
            delivered_empty: delivered == 0,
        }
    }

    #[test]
    fn steady_state_features_are_neutral() {
        let prev = report(20, 20, 0.1, 0.2);
        let cur = report(20, 20, 0.1, 0.2);
        let f = compute_mi_features(&cur, Some(&prev), Some(0.1));
        assert_eq!(f, MiFeatures { lat_grad: 0.0, lat_ratio: 1.0, send_ratio: 1.0 });
    }

    #[test]
    fn substituted_features() {
        let prev = report(100, 100, 0.11, 0.2);
        let cur = report(100, 90, 0.12, 0.2);
        let f = compute_mi_features(&cur, Some(&prev), Some(0.10));
        assert!((f.lat_grad - 0.05).abs() < 1e-12);
        assert!((f.lat_ratio - 1.2).abs() < 1e-12);
        assert!((f.send_ratio - 0.9).abs() < 1e-12);
    }

    #[test]
    fn muted_interval_is_neutral() {
        let cur = MonitorReport::empty(0, 3, 0.2, Some(0.1));
        assert_eq!(compute_mi_features(&cur, None, Some(0.1)), MiFeatures::NEUTRAL);
    }

    #[test]
    fn cold_start_observations() {
        let hist = FeatureHistory::new();
        let base = build_observation(&hist, false);
        assert_eq!(base.len(), OBS_DIM_BASE);
        for triple in base.as_slice().chunks(3) {
            assert_eq!(triple, &[0.0, 1.0, 1.0]);
        }
        assert_eq!(build_observation(&hist, true).len(), OBS_DIM_AUGMENTED);
    }

    #[test]
    fn capacity_and_fraction_examples() {
        assert_eq!(estimate_capacity(300.0, 1.0), 300.0);
        assert_eq!(estimate_capacity(400.0, 0.75), 300.0);
        assert_eq!(estimate_capacity(100.0, 0.0), 0.0);
        assert_eq!(tput_fraction(150.0, 300.0), 0.5);
        assert_eq!(tput_fraction(300.0, 300.0), 1.0);
        assert_eq!(tput_fraction(10.0, 0.0), 1.0);
    }

    #[test]
    fn competitor_examples() {
        assert_eq!(estimate_competitors(&[50.0; 10], &[0.0; 10]), 1.0);
        assert!((competitors_from_signals(0.25, 0.05) - 3.0).abs() < 1e-12);
        assert_eq!(competitors_from_signals(5.0, 0.5), 8.0);
        // cv = 0.25 from samples {75, 125}; mean loss 0.05
        assert!((estimate_competitors(&[75.0, 125.0], &[0.05, 0.05]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn newest_features_land_last() {
        let mut hist = FeatureHistory::new();
        hist.push(&report(10, 10, 0.1, 0.2));
        hist.push(&report(10, 5, 0.1, 0.2));
        let obs = build_observation(&hist, false);
        let s = obs.as_slice();
        assert_eq!(s[OBS_DIM_BASE - 1], 0.5);
        assert_eq!(s[OBS_DIM_BASE - 4], 1.0);
    }

    proptest! {
        #[test]
        fn observations_have_fixed_shape_and_range(
            steps in proptest::collection::vec((0u64..400, 0.0f64..1.0, 0.01f64..40.0), 0..30),
            augmented in any::<bool>(),
        ) {
            let mut hist = FeatureHistory::new();
            for (sent, frac, lat) in steps {
                let delivered = (sent as f64 * frac).floor() as u64;
                let r = report(sent, delivered, lat, 0.1);
                let f = hist.push(&r);
                prop_assert!((0.0..=1.0).contains(&f.send_ratio));
                if delivered > 0 {
                    prop_assert!(f.lat_ratio >= 1.0);
                }
                let obs = build_observation(&hist, augmented);
                prop_assert_eq!(obs.len(), if augmented { OBS_DIM_AUGMENTED } else { OBS_DIM_BASE });
                prop_assert!(obs.as_slice().iter().all(|v| v.abs() <= FEATURE_CLIP));
            }
        }

        #[test]
        fn competitor_estimate_is_monotone(cv in 0.0f64..3.0, loss in 0.0f64..0.5, dcv in 0.0f64..1.0, dl in 0.0f64..0.1) {
            let base = competitors_from_signals(cv, loss);
            prop_assert!(competitors_from_signals(cv + dcv, loss) >= base);
            prop_assert!(competitors_from_signals(cv, loss + dl) >= base);
            prop_assert!((1.0..=MAX_COMPETITORS).contains(&base));
        }
    }
}
