//! Training environments: one ego flow on a sampled link, optionally sharing
//! the bottleneck with a frozen background policy that starts first.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MlpParams;
use crate::error::Result;
use crate::features::{build_observation, estimate_capacity, FeatureHistory, Observation};
use crate::reward::{base_reward, shaped_reward_a, RewardConfig};
use crate::sim::{apply_rate_action, sample_training_link, LinkConfig, MonitorReport, Network, RateActionConfig};

/// Initial send rates are drawn from this multiple of the link bandwidth.
pub const INITIAL_RATE_FRACTION: (f64, f64) = (0.3, 1.0);

/// Default latency noise seen by the learner, as a fraction of the one-way
/// latency. A lone flow below capacity never queues, so without noise any
/// latency above the floor means congestion; competing flows collide in the
/// queue and would read that as a reason to back off.
pub const LATENCY_NOISE: f64 = 0.02;

pub fn sample_initial_rate<R: Rng + ?Sized>(link: &LinkConfig, rng: &mut R) -> f64 {
    let (lo, hi) = INITIAL_RATE_FRACTION;
    link.bandwidth_pps * rng.random_range(lo..hi)
}

/// Latency and loss carried over intervals that have nothing to measure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LastSignals {
    pub latency_s: f64,
    pub loss_fraction: f64,
}

impl LastSignals {
    pub fn new(link: &LinkConfig) -> Self {
        Self { latency_s: link.one_way_latency_s, loss_fraction: 0.0 }
    }

    pub fn update(&mut self, report: &MonitorReport) {
        if report.delivered_pkts > 0 {
            self.latency_s = report.mean_latency_s;
        }
        if report.sent_pkts > 0 {
            self.loss_fraction = report.loss_fraction();
        }
    }
}

/// Reward inputs for one report: `(tput_mbps, latency_s, loss_fraction)`.
///
/// An interval with no deliveries reuses the last latency, and one with
/// nothing sent reuses the last loss fraction. Otherwise a flow could
/// dodge the random-loss penalty by going silent.
pub fn reward_inputs(link: &LinkConfig, report: &MonitorReport, last: &LastSignals) -> (f64, f64, f64) {
    let latency = if report.delivered_pkts > 0 { report.mean_latency_s } else { last.latency_s };
    let loss = if report.sent_pkts > 0 { report.loss_fraction() } else { last.loss_fraction };
    (link.pps_to_mbps(report.throughput_pps), latency, loss)
}

/// Full per-MI reward, including fair-share shaping when `cfg.lambda > 0`.
pub fn interval_reward(cfg: &RewardConfig, link: &LinkConfig, report: &MonitorReport, last: &LastSignals) -> f64 {
    let (tput, lat, loss) = reward_inputs(link, report, last);
    let r = base_reward(tput, lat, loss, cfg);
    if cfg.lambda > 0.0 {
        let send_ratio = if report.sent_pkts == 0 {
            1.0
        } else {
            report.delivered_pkts as f64 / report.sent_pkts as f64
        };
        let capacity = link.pps_to_mbps(estimate_capacity(report.send_rate_pps(), send_ratio));
        shaped_reward_a(r, tput, capacity, cfg)
    } else {
        r
    }
}

/// A flow driven by the deterministic mean of a fixed policy.
#[derive(Clone, Debug)]
pub struct PolicyDriver {
    params: Arc<MlpParams>,
    augmented: bool,
    history: FeatureHistory,
    rate_cfg: RateActionConfig,
}

impl PolicyDriver {
    pub fn new(params: Arc<MlpParams>, augmented: bool) -> Self {
        Self { params, augmented, history: FeatureHistory::new(), rate_cfg: RateActionConfig::default() }
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    pub fn observation(&self) -> Observation {
        build_observation(&self.history, self.augmented)
    }

    pub fn next_rate(&self, rate: f64) -> f64 {
        let action = self.params.action_mean(self.observation().as_slice());
        apply_rate_action(rate, action, self.rate_cfg)
    }

    pub fn observe(&mut self, report: &MonitorReport) {
        self.history.push(report);
    }
}

pub struct EnvStep {
    pub obs: Observation,
    pub reward: f64,
    /// `reward` plus the episode's [`link_penalty`], the learning signal.
    pub centered_reward: f64,
    pub done: bool,
}

/// Expected per-MI penalty from the link alone: base latency and random loss.
///
/// It is fixed for an episode and no action changes it, so removing it from
/// the learning signal leaves the policy gradient unbiased. Neither term is
/// observable, so without this the critic cannot explain most of the
/// return variance across episodes.
pub fn link_penalty(cfg: &RewardConfig, link: &LinkConfig) -> f64 {
    cfg.lat_coef * link.one_way_latency_s + cfg.loss_coef * link.random_loss_rate
}

/// Ego flow is slot 1 when a background exists, slot 0 otherwise.
pub struct TrainEnv {
    reward: RewardConfig,
    augmented: bool,
    episode_len: usize,
    max_stagger: usize,
    rate_cfg: RateActionConfig,
    background: Option<PolicyDriver>,
    rng: ChaCha8Rng,
    net: Option<Network>,
    history: FeatureHistory,
    ego_steps_left: usize,
    last: LastSignals,
    offset: f64,
    latency_noise: f64,
    pub episode_reward: f64,
}

impl TrainEnv {
    pub fn new(
        reward: RewardConfig,
        augmented: bool,
        episode_len: usize,
        max_stagger: usize,
        background: Option<PolicyDriver>,
        seed: u64,
    ) -> Self {
        Self {
            reward,
            augmented,
            episode_len,
            max_stagger,
            rate_cfg: RateActionConfig::default(),
            background,
            rng: ChaCha8Rng::seed_from_u64(seed),
            net: None,
            history: FeatureHistory::new(),
            ego_steps_left: 0,
            last: LastSignals { latency_s: 0.0, loss_fraction: 0.0 },
            offset: 0.0,
            latency_noise: 0.0,
            episode_reward: 0.0,
        }
    }

    /// Adds uniform noise in `[0, noise * one_way)` to the observed mean
    /// latency. Rewards use the true latency.
    pub fn with_latency_noise(mut self, noise: f64) -> Self {
        self.latency_noise = noise;
        self
    }

    fn ego(&self) -> usize {
        usize::from(self.background.is_some())
    }

    pub fn reset(&mut self) -> Result<Observation> {
        let link = sample_training_link(&mut self.rng);
        let ego_rate = sample_initial_rate(&link, &mut self.rng);
        let net_seed = self.rng.next_u64();
        self.history.clear();
        self.last = LastSignals::new(&link);
        self.offset = link_penalty(&self.reward, &link);
        self.episode_reward = 0.0;
        let mi = link.mi_duration_s();
        match self.background.as_mut() {
            None => {
                self.net = Some(Network::new(link, &[ego_rate], net_seed)?);
                self.ego_steps_left = self.episode_len;
            }
            Some(bg) => {
                let bg_rate = sample_initial_rate(&link, &mut self.rng);
                let stagger = self.rng.random_range(0..=self.max_stagger.min(self.episode_len - 1));
                bg.reset();
                let mut net = Network::new(link, &[bg_rate, ego_rate], net_seed)?;
                for _ in 0..stagger {
                    net.set_rate(0, bg.next_rate(net.rate(0)));
                    let reports = net.step(&[true, false], mi)?;
                    bg.observe(&reports[0]);
                }
                self.net = Some(net);
                self.ego_steps_left = self.episode_len - stagger;
            }
        }
        Ok(build_observation(&self.history, self.augmented))
    }

    pub fn step(&mut self, action: f64) -> Result<EnvStep> {
        let ego = self.ego();
        let net = self.net.as_mut().expect("reset before step");
        let link = net.link().clone();
        net.set_rate(ego, apply_rate_action(net.rate(ego), action, self.rate_cfg));
        if let Some(bg) = &self.background {
            net.set_rate(0, bg.next_rate(net.rate(0)));
        }
        let reports = net.step_all(link.mi_duration_s())?;
        if let Some(bg) = self.background.as_mut() {
            bg.observe(&reports[0]);
        }
        let report = &reports[ego];
        let reward = interval_reward(&self.reward, &link, report, &self.last);
        self.last.update(report);
        if self.latency_noise > 0.0 && report.delivered_pkts > 0 {
            let mut seen = report.clone();
            seen.mean_latency_s += link.one_way_latency_s * self.latency_noise * self.rng.random::<f64>();
            self.history.push(&seen);
        } else {
            self.history.push(report);
        }
        self.episode_reward += reward;
        self.ego_steps_left -= 1;
        Ok(EnvStep {
            obs: build_observation(&self.history, self.augmented),
            reward,
            centered_reward: reward + self.offset,
            done: self.ego_steps_left == 0,
        })
    }
}
