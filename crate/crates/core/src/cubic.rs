//! Fluid TCP CUBIC.
//!
//! The window follows `W(t) = C (t - K)^3 + W_max` with
//! `K = cbrt(W_max (1 - beta) / C)`, where `t` is the time since the last loss
//! event. The controller reacts at monitor-interval granularity: at most one
//! loss event per MI, no slow start, no ACK clocking. The sending rate is the
//! window divided by the most recently observed round-trip time.

use serde::{Deserialize, Serialize};

use crate::sim::MonitorReport;

pub const CUBIC_C: f64 = 0.4;
pub const CUBIC_BETA: f64 = 0.7;
pub const MIN_WINDOW: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicState {
    pub w: f64,
    pub w_max: f64,
    pub t_since_loss: f64,
    pub rtt: f64,
    pub c: f64,
    pub beta: f64,
}

impl CubicState {
    /// Starts at the plateau of the curve (`W = W_max = initial_window`), probing upward.
    pub fn new(initial_window: f64, rtt: f64) -> Self {
        let w = initial_window.max(MIN_WINDOW);
        let mut state = Self { w, w_max: w, t_since_loss: 0.0, rtt, c: CUBIC_C, beta: CUBIC_BETA };
        state.t_since_loss = state.k();
        state
    }

    /// Time from a loss event until the window regains `w_max`.
    pub fn k(&self) -> f64 {
        (self.w_max * (1.0 - self.beta) / self.c).cbrt()
    }

    pub fn cubic_window(&self, t: f64) -> f64 {
        (self.c * (t - self.k()).powi(3) + self.w_max).max(MIN_WINDOW)
    }

    pub fn on_loss(&self) -> Self {
        Self {
            w_max: self.w,
            w: (self.beta * self.w).max(MIN_WINDOW),
            t_since_loss: 0.0,
            ..self.clone()
        }
    }

    pub fn rate(&self) -> f64 {
        self.w / self.rtt
    }

    /// Advances the clock by one MI or registers a loss event.
    pub fn advance(&mut self, elapsed: f64, loss_event: bool) {
        if loss_event {
            *self = self.on_loss();
        } else {
            self.t_since_loss += elapsed;
            self.w = self.cubic_window(self.t_since_loss);
        }
    }
}

/// Per-flow CUBIC sender driven by monitor reports.
#[derive(Clone, Debug)]
pub struct CubicFlow {
    state: CubicState,
    one_way_latency: f64,
}

impl CubicFlow {
    /// `initial_rate` is converted to a window at the base round-trip time.
    pub fn new(initial_rate_pps: f64, one_way_latency_s: f64) -> Self {
        let rtt = 2.0 * one_way_latency_s;
        Self { state: CubicState::new(initial_rate_pps * rtt, rtt), one_way_latency: one_way_latency_s }
    }

    pub fn state(&self) -> &CubicState {
        &self.state
    }

    pub fn rate(&self) -> f64 {
        self.state.rate()
    }

    pub fn on_report(&mut self, report: &MonitorReport) {
        if report.delivered_pkts > 0 {
            self.state.rtt = report.mean_latency_s + self.one_way_latency;
        }
        self.state.advance(report.duration_s, report.lost_pkts > 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(w: f64, w_max: f64) -> CubicState {
        CubicState { w, w_max, t_since_loss: 0.0, rtt: 0.2, c: CUBIC_C, beta: CUBIC_BETA }
    }

    #[test]
    fn inflection_and_k() {
        let s = state(70.0, 100.0);
        assert!((s.k() - 75f64.cbrt()).abs() < 1e-12);
        assert!((s.k() - 4.217).abs() < 1e-3);
        assert!((s.cubic_window(s.k()) - 100.0).abs() < 1e-9);
        assert!((s.cubic_window(0.0) - 70.0).abs() < 1e-9);
    }

    #[test]
    fn loss_decreases_window() {
        let s = state(100.0, 100.0).on_loss();
        assert!((s.w - 70.0).abs() < 1e-12);
        assert_eq!(s.w_max, 100.0);
        assert_eq!(s.t_since_loss, 0.0);
        let s2 = s.on_loss();
        assert!((s2.w - 49.0).abs() < 1e-12);
        assert!((s2.w_max - 70.0).abs() < 1e-12);
        let floor = state(2.0, 10.0).on_loss();
        assert_eq!(floor.w, 2.0);
    }

    #[test]
    fn rate_is_window_over_rtt() {
        let mut s = state(30.0, 30.0);
        assert!((s.rate() - 150.0).abs() < 1e-9);
        s.w = 2.0;
        s.rtt = 1.0;
        assert_eq!(s.rate(), 2.0);
        s.rtt = 0.2;
        s.w = 60.0;
        assert!((s.rate() - 300.0).abs() < 1e-9);
    }

    #[test]
    fn window_nondecreasing_past_k() {
        let s = state(70.0, 100.0);
        let k = s.k();
        let mut prev = s.cubic_window(k);
        for i in 1..200 {
            let w = s.cubic_window(k + i as f64 * 0.05);
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn advance_tracks_curve() {
        let mut s = state(100.0, 100.0).on_loss();
        for _ in 0..10 {
            s.advance(0.2, false);
        }
        assert!((s.t_since_loss - 2.0).abs() < 1e-9);
        assert!((s.w - s.cubic_window(2.0)).abs() < 1e-12);
        let before = s.w;
        s.advance(0.2, true);
        assert!(s.w < before);
        assert_eq!(s.t_since_loss, 0.0);
    }
}
