//! Synchronous PPO training over parallel environments.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{CheckpointMetadata, PolicyCheckpoint};
use super::env::{PolicyDriver, TrainEnv, LATENCY_NOISE};
use super::ppo::{ppo_update, Adam, PpoConfig, RolloutBatch, UpdateDiagnostics};
use super::normalize::ObsNormalizer;
use super::MlpParams;
use crate::error::{Error, Result};
use crate::features::{Observation, OBS_DIM_AUGMENTED, OBS_DIM_BASE};
use crate::reward::{RewardConfig, BASE_LOSS_COEF};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Unmodified single-flow training.
    Base,
    /// Fair-share reward shaping against a frozen background.
    A,
    /// Competition-aware observation against a frozen background.
    B,
    /// Single-flow training with a larger loss coefficient.
    C,
}

impl Strategy {
    pub fn augmented(self) -> bool {
        self == Strategy::B
    }

    pub fn needs_background(self) -> bool {
        matches!(self, Strategy::A | Strategy::B)
    }

    pub fn obs_dim(self) -> usize {
        if self.augmented() {
            OBS_DIM_AUGMENTED
        } else {
            OBS_DIM_BASE
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Base => "base",
            Strategy::A => "a",
            Strategy::B => "b",
            Strategy::C => "c",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Strategy::Base),
            "a" => Ok(Strategy::A),
            "b" => Ok(Strategy::B),
            "c" => Ok(Strategy::C),
            other => Err(Error::Config(format!("unknown strategy {other:?} (expected base, a, b or c)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub n_envs: usize,
    pub total_steps: u64,
    pub episode_len: usize,
    pub strategy: Strategy,
    pub lambda: f64,
    pub loss_coef: f64,
    pub seed: u64,
    /// Steps collected per environment between updates.
    pub horizon: usize,
    /// Upper bound of the background head start for strategies A and B.
    pub max_stagger: usize,
    /// Multiplier applied to rewards before advantage estimation.
    pub reward_scale: f64,
    /// Observed latency noise as a fraction of the one-way latency.
    pub latency_noise: f64,
    pub ppo: PpoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 3e-4,
            n_envs: 4,
            total_steps: 1_600_000,
            episode_len: 400,
            strategy: Strategy::Base,
            lambda: 0.0,
            loss_coef: BASE_LOSS_COEF,
            seed: 42,
            horizon: 1024,
            max_stagger: 100,
            reward_scale: 0.3,
            latency_noise: LATENCY_NOISE,
            ppo: PpoConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn for_strategy(strategy: Strategy) -> Self {
        let mut cfg = Self { strategy, ..Default::default() };
        match strategy {
            Strategy::A => cfg.lambda = 2.0,
            Strategy::C => cfg.loss_coef = 8000.0,
            _ => {}
        }
        cfg
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            loss_coef: self.loss_coef,
            lambda: if self.strategy == Strategy::A { self.lambda } else { 0.0 },
            n_flows: 2,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.total_steps == 0 || self.n_envs == 0 || self.horizon == 0 || self.episode_len == 0 {
            return Err(Error::Config("total_steps, n_envs, horizon and episode_len must be positive".into()));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(Error::Config(format!("reward_scale must be positive, got {}", self.reward_scale)));
        }
        if !(0.0..1.0).contains(&self.latency_noise) {
            return Err(Error::Config(format!("latency_noise must lie in [0, 1), got {}", self.latency_noise)));
        }
        if self.max_stagger >= self.episode_len {
            return Err(Error::Config("max_stagger must be shorter than the episode".into()));
        }
        self.reward_config().validate()
    }

    /// Number of PPO updates; the last rollout is not truncated.
    pub fn updates(&self) -> u64 {
        self.total_steps.div_ceil((self.n_envs * self.horizon) as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean_episode_reward: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PolicyCheckpoint,
    pub curve: Vec<CurvePoint>,
    pub diagnostics: Vec<UpdateDiagnostics>,
}

impl TrainOutcome {
    /// `step,mean_episode_reward`
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("step,mean_episode_reward\n");
        for p in &self.curve {
            out.push_str(&format!("{},{}\n", p.step, p.mean_episode_reward));
        }
        out
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Worker {
    env: TrainEnv,
    rng: ChaCha8Rng,
    obs: Observation,
    finished_episodes: Vec<f64>,
}

impl Worker {
    /// One rollout on normalized observations; also returns the raw observations.
    fn collect(
        &mut self,
        params: &MlpParams,
        norm: &ObsNormalizer,
        horizon: usize,
        cfg: &TrainConfig,
    ) -> Result<(RolloutBatch, Vec<f64>)> {
        let mut batch = RolloutBatch::new(params.obs_dim());
        let mut raw = Vec::with_capacity(horizon * params.obs_dim());
        for _ in 0..horizon {
            let obs = norm.normalize(self.obs.as_slice());
            raw.extend_from_slice(self.obs.as_slice());
            let (action, logp, value) = params.sample(&obs, &mut self.rng);
            let step = self.env.step(action.clamp(-1.0, 1.0))?;
            batch.push(&obs, action, step.centered_reward * cfg.reward_scale, value, logp, step.done);
            if step.done {
                self.finished_episodes.push(self.env.episode_reward);
                self.obs = self.env.reset()?;
            } else {
                self.obs = step.obs;
            }
        }
        let bootstrap = params.value.forward(&norm.normalize(self.obs.as_slice()));
        batch.finish(bootstrap, cfg.gamma, cfg.ppo.gae_lambda);
        Ok((batch, raw))
    }
}

/// Trains a policy. Strategies A and B need a frozen `baseline`.
pub fn train(cfg: &TrainConfig, baseline: Option<&PolicyCheckpoint>) -> Result<TrainOutcome> {
    train_with_progress(cfg, baseline, |_, _| {})
}

/// Like [`train`], calling `progress(update, point)` after every update.
pub fn train_with_progress(
    cfg: &TrainConfig,
    baseline: Option<&PolicyCheckpoint>,
    mut progress: impl FnMut(u64, &CurvePoint),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let background = if cfg.strategy.needs_background() {
        let ck = baseline.ok_or_else(|| Error::MissingBaseline(cfg.strategy.to_string()))?;
        Some(Arc::new(ck.params()?))
    } else {
        None
    };
    let reward = cfg.reward_config();
    let mut master = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0));
    let mut params = MlpParams::init(cfg.strategy.obs_dim(), &mut master)?;
    let mut adam = Adam::new(&params);
    let mut norm = ObsNormalizer::new(params.obs_dim());
    let ppo = PpoConfig { learning_rate: cfg.learning_rate, ..cfg.ppo };

    let mut workers = (0..cfg.n_envs)
        .map(|i| {
            let bg = background.as_ref().map(|p| PolicyDriver::new(Arc::clone(p), false));
            let mut env = TrainEnv::new(
                reward,
                cfg.strategy.augmented(),
                cfg.episode_len,
                cfg.max_stagger,
                bg,
                derive_seed(cfg.seed, 1000 + i as u64),
            )
            .with_latency_noise(cfg.latency_noise);
            let obs = env.reset()?;
            Ok(Worker {
                env,
                rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2000 + i as u64)),
                obs,
                finished_episodes: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut curve = Vec::new();
    let mut diagnostics = Vec::new();
    let mut steps = 0u64;
    for update in 0..cfg.updates() {
        let batches = workers
            .par_iter_mut()
            .map(|w| w.collect(&params, &norm, cfg.horizon, cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut batch = RolloutBatch::new(params.obs_dim());
        for (b, raw) in batches {
            batch.extend(b);
            norm.update(&raw);
        }
        steps += batch.len() as u64;
        diagnostics.push(ppo_update(&mut params, &mut adam, &batch, &ppo, &mut master)?);

        let finished: Vec<f64> = workers.iter_mut().flat_map(|w| w.finished_episodes.drain(..)).collect();
        if !finished.is_empty() {
            let point = CurvePoint {
                step: steps,
                mean_episode_reward: finished.iter().sum::<f64>() / finished.len() as f64,
            };
            progress(update, &point);
            curve.push(point);
        }
    }

    let metadata = CheckpointMetadata {
        strategy: cfg.strategy,
        lambda: reward.lambda,
        loss_coef: cfg.loss_coef,
        seed: cfg.seed,
        steps_trained: steps,
    };
    let folded = norm.fold_params(&params)?;
    Ok(TrainOutcome { checkpoint: PolicyCheckpoint::from_params(&folded, metadata), curve, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(strategy: Strategy) -> TrainConfig {
        TrainConfig { total_steps: 4096, episode_len: 100, max_stagger: 20, ..TrainConfig::for_strategy(strategy) }
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let cfg = small(Strategy::Base);
        let a = train(&cfg, None).unwrap();
        let b = train(&cfg, None).unwrap();
        assert_eq!(a.checkpoint.to_json().unwrap(), b.checkpoint.to_json().unwrap());
        assert_eq!(a.curve_csv(), b.curve_csv());
        assert_eq!(a.checkpoint.metadata.steps_trained, 4096);
        assert!(a.curve_csv().starts_with("step,mean_episode_reward\n"));
    }

    #[test]
    fn background_strategies_need_baseline() {
        assert!(matches!(train(&small(Strategy::A), None), Err(Error::MissingBaseline(_))));
        assert!(matches!(train(&small(Strategy::B), None), Err(Error::MissingBaseline(_))));
    }

    #[test]
    fn augmented_strategy_trains_32_dim_policy() {
        let base = train(&small(Strategy::Base), None).unwrap().checkpoint;
        let b = train(&small(Strategy::B), Some(&base)).unwrap().checkpoint;
        assert_eq!(b.obs_dim, 32);
        assert_eq!(b.metadata.strategy, Strategy::B);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("A".parse::<Strategy>().unwrap(), Strategy::A);
        assert_eq!("base".parse::<Strategy>().unwrap(), Strategy::Base);
        assert!("d".parse::<Strategy>().is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(TrainConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { total_steps: 0, ..Default::default() }.validate().is_err());
        assert_eq!(TrainConfig::default().updates(), 391);
    }
}
