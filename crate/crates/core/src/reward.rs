//! Per-MI reward: the base throughput/latency/loss trade-off and the
//! fair-share shaping penalty.
//!
//! Units: throughput in Mbps, latency in seconds, loss as a fraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BASE_LOSS_COEF: f64 = 2000.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub tput_coef: f64,
    pub lat_coef: f64,
    pub loss_coef: f64,
    /// Fair-share penalty weight; zero disables shaping.
    pub lambda: f64,
    pub n_flows: u32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { tput_coef: 10.0, lat_coef: 1000.0, loss_coef: BASE_LOSS_COEF, lambda: 0.0, n_flows: 2 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let coefs = [self.tput_coef, self.lat_coef, self.loss_coef, self.lambda];
        if coefs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Config(format!("reward coefficients must be finite and >= 0: {self:?}")));
        }
        if self.n_flows < 1 {
            return Err(Error::Config("n_flows must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn base_reward(tput_mbps: f64, mean_latency_s: f64, loss_fraction: f64, cfg: &RewardConfig) -> f64 {
    cfg.tput_coef * tput_mbps - cfg.lat_coef * mean_latency_s - cfg.loss_coef * loss_fraction
}

/// Subtracts `lambda * max(0, ego - capacity / N)` from `reward`.
pub fn shaped_reward_a(reward: f64, ego_tput_mbps: f64, capacity_estimate_mbps: f64, cfg: &RewardConfig) -> f64 {
    if cfg.lambda == 0.0 {
        return reward;
    }
    let fair_share = capacity_estimate_mbps / f64::from(cfg.n_flows.max(1));
    reward - cfg.lambda * (ego_tput_mbps - fair_share).max(0.0)
}
