//! Running observation statistics used during training.
//!
//! The networks are trained on standardized inputs. When training ends the
//! statistics are folded into the first layer of each network, so saved
//! checkpoints consume raw observations and carry no extra state.

use super::mlp::Mlp;
use super::MlpParams;
use crate::error::Result;

/// Smallest standard deviation used for scaling. Keeps near-constant inputs
/// from being blown up by orders of magnitude.
pub const MIN_STD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct ObsNormalizer {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Scale per input; 1 before any data has been seen.
    pub fn std(&self) -> Vec<f64> {
        if self.count < 2.0 {
            return vec![1.0; self.dim()];
        }
        self.m2.iter().map(|m| (m / self.count).sqrt().max(MIN_STD)).collect()
    }

    /// Merges a batch of row-major observations (Chan et al. parallel update).
    pub fn update(&mut self, rows: &[f64]) {
        let dim = self.dim();
        let n = (rows.len() / dim) as f64;
        if n == 0.0 {
            return;
        }
        let mut b_mean = vec![0.0; dim];
        for row in rows.chunks(dim) {
            for (m, x) in b_mean.iter_mut().zip(row) {
                *m += x / n;
            }
        }
        let mut b_m2 = vec![0.0; dim];
        for row in rows.chunks(dim) {
            for ((s, x), m) in b_m2.iter_mut().zip(row).zip(&b_mean) {
                *s += (x - m) * (x - m);
            }
        }
        let total = self.count + n;
        for i in 0..dim {
            let delta = b_mean[i] - self.mean[i];
            self.mean[i] += delta * n / total;
            self.m2[i] += b_m2[i] + delta * delta * self.count * n / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        let std = self.std();
        obs.iter().zip(&self.mean).zip(&std).map(|((x, m), s)| (x - m) / s).collect()
    }

    /// A network on raw inputs equal to `net` applied to normalized inputs.
    pub fn fold(&self, net: &Mlp) -> Result<Mlp> {
        let std = self.std();
        let (mut weights, mut biases) = net.to_layers();
        for (row, b) in weights[0].iter_mut().zip(biases[0].iter_mut()) {
            for ((w, m), s) in row.iter_mut().zip(&self.mean).zip(&std) {
                *w /= s;
                *b -= *w * m;
            }
        }
        Mlp::from_layers(&weights, &biases, net.output_activation())
    }

    pub fn fold_params(&self, params: &MlpParams) -> Result<MlpParams> {
        Ok(MlpParams { policy: self.fold(&params.policy)?, value: self.fold(&params.value)?, log_std: params.log_std })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batched_updates_match_direct_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<f64> = (0..3 * 50).map(|_| rng.random_range(-2.0..5.0)).collect();
        let mut n = ObsNormalizer::new(3);
        n.update(&rows[..3 * 20]);
        n.update(&rows[3 * 20..]);
        for i in 0..3 {
            let col: Vec<f64> = rows.chunks(3).map(|r| r[i]).collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0;
            assert!((n.mean()[i] - mean).abs() < 1e-12);
            assert!((n.std()[i] - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn folding_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = MlpParams::init(30, &mut rng).unwrap();
        let mut n = ObsNormalizer::new(30);
        let rows: Vec<f64> = (0..30 * 64).map(|i| rng.random_range(-1.0..1.0) * (1 + i % 7) as f64 + 0.5).collect();
        n.update(&rows);
        let folded = n.fold_params(&params).unwrap();
        for row in rows.chunks(30).take(20) {
            let (a, v) = params.forward(&n.normalize(row));
            let (b, w) = folded.forward(row);
            assert!((a - b).abs() < 1e-12 && (v - w).abs() < 1e-10, "{a} {b} {v} {w}");
        }
    }

    #[test]
    fn tiny_variance_is_floored() {
        let mut n = ObsNormalizer::new(1);
        n.update(&[1.0, 1.0, 1.0 + 1e-9]);
        assert_eq!(n.std(), vec![MIN_STD]);
        assert_eq!(ObsNormalizer::new(2).std(), vec![1.0, 1.0]);
    }
}
