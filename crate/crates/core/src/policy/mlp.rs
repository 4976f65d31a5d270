//! Dense tanh networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector so the optimizer and gradient clipping
//! can treat a network as a single slice. Layer `l` stores its weight matrix
//! (`out x in`, row-major) followed by its bias vector.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden layer widths shared by the policy and value networks.
pub const HIDDEN_SIZES: [usize; 2] = [32, 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Tanh,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    output: OutputActivation,
}

/// Post-activation values of every layer, input first.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> f64 {
        self.activations.last().map_or(0.0, |a| a[0])
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidShape(format!("layer sizes {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)], output })
    }

    /// Scaled-normal init (`std = gain / sqrt(fan_in)`) with zero biases.
    /// `output_gain` scales the final layer.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], output: OutputActivation, output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        let n_layers = sizes.len() - 1;
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == n_layers { output_gain } else { 1.0 };
            let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("finite std");
            for w in &mut net.params[offset..offset + fan_in * fan_out] {
                *w = normal.sample(rng);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    /// Builds a network from per-layer row-major weight matrices and bias vectors.
    pub fn from_layers(weights: &[Vec<Vec<f64>>], biases: &[Vec<f64>], output: OutputActivation) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidShape("weights and biases must have one entry per layer".into()));
        }
        let mut sizes = vec![weights[0].first().map_or(0, |r| r.len())];
        let mut params = Vec::new();
        for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
            let fan_in = *sizes.last().expect("nonempty");
            if w.len() != b.len() || w.iter().any(|row| row.len() != fan_in) {
                return Err(Error::InvalidShape(format!("layer {l} has inconsistent dimensions")));
            }
            for row in w {
                params.extend_from_slice(row);
            }
            params.extend_from_slice(b);
            sizes.push(b.len());
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidShape("non-finite parameter".into()));
        }
        let net = Self { sizes, params, output };
        if net.sizes.contains(&0) {
            return Err(Error::InvalidShape(format!("layer sizes {:?}", net.sizes)));
        }
        Ok(net)
    }

    /// Per-layer `(weights, biases)` in row-major nested form.
    pub fn to_layers(&self) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mat = self.params[offset..offset + fan_in * fan_out]
                .chunks(fan_in)
                .map(|r| r.to_vec())
                .collect();
            offset += fan_in * fan_out;
            weights.push(mat);
            biases.push(self.params[offset..offset + fan_out].to_vec());
            offset += fan_out;
        }
        (weights, biases)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Output of the first unit of the final layer.
    pub fn forward(&self, input: &[f64]) -> f64 {
        let mut buf = input.to_vec();
        let mut next = Vec::new();
        let n_layers = self.sizes.len() - 1;
        let mut offset = 0;
        for l in 0..n_layers {
            self.layer(l, &mut offset, &buf, &mut next, l + 1 == n_layers);
            std::mem::swap(&mut buf, &mut next);
        }
        buf[0]
    }

    pub fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        let n_layers = self.sizes.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        let mut offset = 0;
        for l in 0..n_layers {
            let mut out = Vec::new();
            self.layer(l, &mut offset, &activations[l], &mut out, l + 1 == n_layers);
            activations.push(out);
        }
        ForwardCache { activations }
    }

    fn layer(&self, l: usize, offset: &mut usize, input: &[f64], out: &mut Vec<f64>, last: bool) {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[*offset..*offset + fan_in * fan_out];
        let b = &self.params[*offset + fan_in * fan_out..*offset + fan_in * fan_out + fan_out];
        out.clear();
        out.extend(w.chunks_exact(fan_in).zip(b).map(|(row, bias)| {
            let z = row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>() + bias;
            if last && self.output == OutputActivation::Linear {
                z
            } else {
                z.tanh()
            }
        }));
        *offset += fan_in * fan_out + fan_out;
    }

    /// Accumulates `d_output * d(output)/d(params)` into `grads`.
    pub fn backward(&self, cache: &ForwardCache, d_output: f64, grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let acts = &cache.activations;
        let out = acts[n_layers][0];
        let mut delta = vec![match self.output {
            OutputActivation::Tanh => d_output * (1.0 - out * out),
            OutputActivation::Linear => d_output,
        }];
        // only the first output unit feeds the loss
        delta.resize(self.sizes[n_layers], 0.0);

        let mut offset = self.params.len();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= fan_in * fan_out + fan_out;
            let input = &acts[l];
            let (gw, gb) = grads[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for (j, d) in delta.iter().enumerate() {
                gb[j] += d;
                for (g, x) in gw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[offset..offset + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (j, d) in delta.iter().enumerate() {
                for (p, wj) in prev.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                    *p += wj * d;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[30, 32, 16, 1], OutputActivation::Tanh).unwrap();
        assert_eq!(net.forward(&[0.7; 30]), 0.0);
        let v = Mlp::zeros(&[30, 32, 16, 1], OutputActivation::Linear).unwrap();
        assert_eq!(v.forward(&[0.7; 30]), 0.0);
    }

    #[test]
    fn hand_evaluated_toy_net() {
        // 1 -> 1 -> 1, unit weights: tanh(tanh(0.5))
        let net = Mlp::from_layers(&[vec![vec![1.0]], vec![vec![1.0]]], &[vec![0.0], vec![0.0]], OutputActivation::Tanh)
            .unwrap();
        assert_eq!(net.forward(&[0.5]), 0.5f64.tanh().tanh());
    }

    #[test]
    fn layer_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::init(&[4, 5, 3, 1], OutputActivation::Tanh, 0.01, &mut rng).unwrap();
        let (w, b) = net.to_layers();
        assert_eq!(Mlp::from_layers(&w, &b, OutputActivation::Tanh).unwrap(), net);
        assert_eq!(w[0].len(), 5);
        assert_eq!(w[0][0].len(), 4);
    }

    #[test]
    fn rejects_ragged_layers() {
        let err = Mlp::from_layers(&[vec![vec![1.0, 2.0], vec![1.0]]], &[vec![0.0, 0.0]], OutputActivation::Tanh);
        assert!(err.is_err());
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for output in [OutputActivation::Tanh, OutputActivation::Linear] {
            let net = Mlp::init(&[3, 4, 2, 1], output, 1.0, &mut rng).unwrap();
            let x = [0.3, -0.8, 1.2];
            let mut grads = vec![0.0; net.params().len()];
            net.backward(&net.forward_cached(&x), 1.0, &mut grads);
            let h = 1e-6;
            for (k, &analytic) in grads.iter().enumerate() {
                let mut plus = net.clone();
                plus.params_mut()[k] += h;
                let mut minus = net.clone();
                minus.params_mut()[k] -= h;
                let fd = (plus.forward(&x) - minus.forward(&x)) / (2.0 * h);
                assert!((fd - analytic).abs() < 1e-7, "param {k}: fd {fd} vs {analytic}");
            }
        }
    }
}
