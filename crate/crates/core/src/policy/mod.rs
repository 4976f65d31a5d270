//! Policy and value networks, PPO, training, and checkpoints.

pub mod checkpoint;
pub mod env;
pub mod mlp;
pub mod normalize;
pub mod ppo;
pub mod train;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{OBS_DIM_AUGMENTED, OBS_DIM_BASE};
use mlp::{Mlp, OutputActivation, HIDDEN_SIZES};

pub const INITIAL_LOG_STD: f64 = -0.5;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn layer_sizes(obs_dim: usize) -> Vec<usize> {
    let mut sizes = vec![obs_dim];
    sizes.extend_from_slice(&HIDDEN_SIZES);
    sizes.push(1);
    sizes
}

/// Gaussian actor (tanh-squashed mean, state-independent log std) plus a
/// separate value network with the same layer sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub policy: Mlp,
    pub value: Mlp,
    pub log_std: f64,
}

/// Gradient buffers shaped like [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub policy: Vec<f64>,
    pub value: Vec<f64>,
    pub log_std: f64,
}

impl Grads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Self { policy: vec![0.0; p.policy.params().len()], value: vec![0.0; p.value.params().len()], log_std: 0.0 }
    }

    pub fn scale(&mut self, k: f64) {
        self.policy.iter_mut().chain(self.value.iter_mut()).for_each(|g| *g *= k);
        self.log_std *= k;
    }

    pub fn norm(&self) -> f64 {
        let sq: f64 = self.policy.iter().chain(&self.value).map(|g| g * g).sum();
        (sq + self.log_std * self.log_std).sqrt()
    }
}

/// Log-density of `action` under `N(mean, exp(log_std)^2)`.
pub fn gaussian_log_prob(action: f64, mean: f64, log_std: f64) -> f64 {
    let z = (action - mean) / log_std.exp();
    -0.5 * z * z - log_std - 0.5 * LN_2PI
}

pub fn gaussian_entropy(log_std: f64) -> f64 {
    log_std + 0.5 * (1.0 + LN_2PI)
}

impl MlpParams {
    pub fn zeros(obs_dim: usize) -> Result<Self> {
        check_obs_dim(obs_dim)?;
        let sizes = layer_sizes(obs_dim);
        Ok(Self {
            policy: Mlp::zeros(&sizes, OutputActivation::Tanh)?,
            value: Mlp::zeros(&sizes, OutputActivation::Linear)?,
            log_std: INITIAL_LOG_STD,
        })
    }

    pub fn init<R: Rng + ?Sized>(obs_dim: usize, rng: &mut R) -> Result<Self> {
        check_obs_dim(obs_dim)?;
        let sizes = layer_sizes(obs_dim);
        Ok(Self {
            policy: Mlp::init(&sizes, OutputActivation::Tanh, 0.01, rng)?,
            value: Mlp::init(&sizes, OutputActivation::Linear, 1.0, rng)?,
            log_std: INITIAL_LOG_STD,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim()
    }

    /// `(action_mean, value)`; the mean lies in `[-1, 1]`.
    pub fn forward(&self, obs: &[f64]) -> (f64, f64) {
        (self.policy.forward(obs), self.value.forward(obs))
    }

    pub fn action_mean(&self, obs: &[f64]) -> f64 {
        self.policy.forward(obs)
    }

    /// Samples an unclamped action; callers clamp to `[-1, 1]` before acting.
    /// Returns `(action, log_prob, value)`.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> (f64, f64, f64) {
        let (mean, value) = self.forward(obs);
        let noise: f64 = StandardNormal.sample(rng);
        let action = mean + self.log_std.exp() * noise;
        (action, gaussian_log_prob(action, mean, self.log_std), value)
    }

    pub fn apply(&mut self, delta: &Grads) {
        for (p, d) in self.policy.params_mut().iter_mut().zip(&delta.policy) {
            *p += d;
        }
        for (p, d) in self.value.params_mut().iter_mut().zip(&delta.value) {
            *p += d;
        }
        self.log_std += delta.log_std;
    }

    pub fn is_finite(&self) -> bool {
        self.policy.params().iter().chain(self.value.params()).all(|p| p.is_finite()) && self.log_std.is_finite()
    }
}

fn check_obs_dim(obs_dim: usize) -> Result<()> {
    if obs_dim == OBS_DIM_BASE || obs_dim == OBS_DIM_AUGMENTED {
        Ok(())
    } else {
        Err(Error::InvalidShape(format!("obs_dim must be {OBS_DIM_BASE} or {OBS_DIM_AUGMENTED}, got {obs_dim}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_forward() {
        let p = MlpParams::zeros(30).unwrap();
        assert_eq!(p.forward(&[1.0; 30]), (0.0, 0.0));
        assert!(MlpParams::zeros(31).is_err());
    }

    #[test]
    fn action_mean_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = MlpParams::init(32, &mut rng).unwrap();
        p.policy.params_mut().iter_mut().for_each(|w| *w *= 50.0);
        for i in 0..100 {
            let obs: Vec<f64> = (0..32).map(|k| ((i * 31 + k) as f64).sin() * 10.0).collect();
            let m = p.action_mean(&obs);
            assert!((-1.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn log_prob_matches_density() {
        let lp = gaussian_log_prob(0.3, 0.1, -0.5);
        let sigma = (-0.5f64).exp();
        let density = (-(0.2f64 / sigma).powi(2) / 2.0).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        assert!((lp - density.ln()).abs() < 1e-12);
    }
}
