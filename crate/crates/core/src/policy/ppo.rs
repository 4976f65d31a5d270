//! Generalized advantage estimation and the clipped-surrogate PPO update.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gaussian_entropy, gaussian_log_prob, Grads, MlpParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch_size: 256,
            learning_rate: 3e-4,
            vf_coef: 0.5,
            ent_coef: 0.0,
            max_grad_norm: 0.5,
        }
    }
}

/// GAE over one trajectory segment.
///
/// `dones[t]` marks that the episode ended after step `t`, which stops both
/// bootstrapping and advantage accumulation. `bootstrap_value` is the value of
/// the state following the last step. Returns `(advantages, returns)` with
/// `returns = advantages + values`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    gae_lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), dones.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * gae_lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Flat on-policy samples. `obs` holds `obs_dim` floats per step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBatch {
    pub obs_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn new(obs_dim: usize) -> Self {
        Self { obs_dim, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn push(&mut self, obs: &[f64], action: f64, reward: f64, value: f64, log_prob: f64, done: bool) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        self.obs.extend_from_slice(obs);
        self.actions.push(action);
        self.rewards.push(reward);
        self.values.push(value);
        self.log_probs.push(log_prob);
        self.dones.push(done);
    }

    /// Fills `advantages` and `returns` for this segment.
    pub fn finish(&mut self, bootstrap_value: f64, gamma: f64, gae_lambda: f64) {
        let (adv, ret) = gae_advantages(&self.rewards, &self.values, &self.dones, bootstrap_value, gamma, gae_lambda);
        self.advantages = adv;
        self.returns = ret;
    }

    pub fn extend(&mut self, other: RolloutBatch) {
        assert_eq!(self.obs_dim, other.obs_dim);
        self.obs.extend(other.obs);
        self.actions.extend(other.actions);
        self.rewards.extend(other.rewards);
        self.values.extend(other.values);
        self.log_probs.extend(other.log_probs);
        self.dones.extend(other.dones);
        self.advantages.extend(other.advantages);
        self.returns.extend(other.returns);
    }
}

/// Mean and std of the batch loss terms over the last epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clipped: usize,
    pub approx_kl: f64,
}

/// PPO loss to minimize over the samples `idx`, accumulating its gradient.
///
/// Per sample: `-min(r A, clip(r, 1-eps, 1+eps) A) + vf_coef (V - R)^2`,
/// averaged over the minibatch, minus `ent_coef * entropy`. `advantages`
/// are the (already normalized) advantages indexed like the batch.
pub fn ppo_loss(
    params: &MlpParams,
    batch: &RolloutBatch,
    advantages: &[f64],
    idx: &[usize],
    cfg: &PpoConfig,
    grads: Option<&mut Grads>,
) -> LossTerms {
    let n = idx.len() as f64;
    let sigma = params.log_std.exp();
    let mut terms = LossTerms::default();
    let mut grads = grads;
    for &i in idx {
        let obs = batch.observation(i);
        let adv = advantages[i];
        let action = batch.actions[i];
        let pcache = params.policy.forward_cached(obs);
        let vcache = params.value.forward_cached(obs);
        let mean = pcache.output();
        let value = vcache.output();
        let logp = gaussian_log_prob(action, mean, params.log_std);
        let log_ratio = logp - batch.log_probs[i];
        let ratio = log_ratio.exp();
        let clipped_ratio = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        let surr1 = ratio * adv;
        let surr2 = clipped_ratio * adv;
        let unclipped_active = surr1 <= surr2;
        if !unclipped_active {
            terms.clipped += 1;
        }
        let value_err = value - batch.returns[i];
        terms.policy += -surr1.min(surr2) / n;
        terms.value += value_err * value_err / n;
        terms.approx_kl += ((ratio - 1.0) - log_ratio) / n;

        if let Some(g) = grads.as_deref_mut() {
            let d_logp = if unclipped_active { -adv * ratio / n } else { 0.0 };
            if d_logp != 0.0 {
                let z = (action - mean) / sigma;
                params.policy.backward(&pcache, d_logp * z / sigma, &mut g.policy);
                g.log_std += d_logp * (z * z - 1.0);
            }
            params.value.backward(&vcache, cfg.vf_coef * 2.0 * value_err / n, &mut g.value);
        }
    }
    terms.entropy = gaussian_entropy(params.log_std);
    if let Some(g) = grads {
        g.log_std -= cfg.ent_coef;
    }
    terms.total = terms.policy + cfg.vf_coef * terms.value - cfg.ent_coef * terms.entropy;
    terms
}

/// Adam over the flat parameter groups of [`MlpParams`].
#[derive(Clone, Debug)]
pub struct Adam {
    m: Grads,
    v: Grads,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &MlpParams) -> Self {
        Self { m: Grads::zeros_like(params), v: Grads::zeros_like(params), t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-5 }
    }

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut MlpParams, grads: &Grads, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let eps = self.eps;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for ((p, g), (m, v)) in params
            .policy
            .params_mut()
            .iter_mut()
            .zip(&grads.policy)
            .zip(self.m.policy.iter_mut().zip(self.v.policy.iter_mut()))
        {
            update(p, *g, m, v);
        }
        for ((p, g), (m, v)) in params
            .value
            .params_mut()
            .iter_mut()
            .zip(&grads.value)
            .zip(self.m.value.iter_mut().zip(self.v.value.iter_mut()))
        {
            update(p, *g, m, v);
        }
        update(&mut params.log_std, grads.log_std, &mut self.m.log_std, &mut self.v.log_std);
    }
}

pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Runs `cfg.epochs` passes of shuffled minibatch updates over `batch`.
///
/// On a non-finite loss the parameters and optimizer are restored to their
/// state before the call and the offending minibatch index is reported.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut MlpParams,
    adam: &mut Adam,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateDiagnostics> {
    if batch.is_empty() {
        return Err(Error::Config("empty rollout batch".into()));
    }
    let advantages = normalize_advantages(&batch.advantages);
    let snapshot = (params.clone(), adam.clone());
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut diag = UpdateDiagnostics::default();
    let mut minibatch_index = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_terms = Vec::new();
        for idx in order.chunks(cfg.minibatch_size.max(1)) {
            let mut grads = Grads::zeros_like(params);
            let terms = ppo_loss(params, batch, &advantages, idx, cfg, Some(&mut grads));
            if !terms.total.is_finite() || !grads.norm().is_finite() {
                *params = snapshot.0;
                *adam = snapshot.1;
                return Err(Error::NonFiniteLoss { batch: minibatch_index });
            }
            let norm = grads.norm();
            if norm > cfg.max_grad_norm {
                grads.scale(cfg.max_grad_norm / norm);
            }
            adam.step(params, &grads, cfg.learning_rate);
            epoch_terms.push((terms, idx.len()));
            minibatch_index += 1;
        }
        if epoch + 1 == cfg.epochs {
            let total: usize = epoch_terms.iter().map(|(_, n)| n).sum();
            let w = |f: &dyn Fn(&LossTerms) -> f64| {
                epoch_terms.iter().map(|(t, n)| f(t) * *n as f64).sum::<f64>() / total as f64
            };
            diag = UpdateDiagnostics {
                policy_loss: w(&|t| t.policy),
                value_loss: w(&|t| t.value),
                entropy: gaussian_entropy(params.log_std),
                clip_fraction: epoch_terms.iter().map(|(t, _)| t.clipped).sum::<usize>() as f64 / total as f64,
                approx_kl: w(&|t| t.approx_kl),
            };
        }
    }
    Ok(diag)
}
