//! Portable JSON checkpoints.
//!
//! Weights are stored as row-major nested arrays of decimal floats. Floats
//! are written in shortest round-trip form, so save followed by load
//! reproduces forward outputs bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, OutputActivation};
use super::{layer_sizes, MlpParams};
use crate::error::{Error, Result};
use crate::features::{OBS_DIM_AUGMENTED, OBS_DIM_BASE};
use crate::metrics::write_atomic;
use crate::policy::train::Strategy;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub strategy: Strategy,
    pub lambda: f64,
    pub loss_coef: f64,
    pub seed: u64,
    pub steps_trained: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format_version: u32,
    pub obs_dim: usize,
    pub layer_sizes: Vec<usize>,
    pub policy: NetworkWeights,
    pub value: NetworkWeights,
    pub log_std: f64,
    pub metadata: CheckpointMetadata,
}

fn weights_of(net: &Mlp) -> NetworkWeights {
    let (weights, biases) = net.to_layers();
    NetworkWeights { weights, biases }
}

impl PolicyCheckpoint {
    pub fn from_params(params: &MlpParams, metadata: CheckpointMetadata) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            obs_dim: params.obs_dim(),
            layer_sizes: params.policy.sizes().to_vec(),
            policy: weights_of(&params.policy),
            value: weights_of(&params.value),
            log_std: params.log_std,
            metadata,
        }
    }

    /// Rebuilds the networks, checking every dimension against the header.
    pub fn params(&self) -> Result<MlpParams> {
        let bad = |reason: String| Error::InvalidShape(reason);
        let policy = Mlp::from_layers(&self.policy.weights, &self.policy.biases, OutputActivation::Tanh)?;
        let value = Mlp::from_layers(&self.value.weights, &self.value.biases, OutputActivation::Linear)?;
        if policy.sizes() != self.layer_sizes.as_slice() || value.sizes() != self.layer_sizes.as_slice() {
            return Err(bad(format!(
                "weights have sizes {:?}/{:?}, header says {:?}",
                policy.sizes(),
                value.sizes(),
                self.layer_sizes
            )));
        }
        if self.layer_sizes != layer_sizes(self.obs_dim) {
            return Err(bad(format!("layer sizes {:?} do not match obs_dim {}", self.layer_sizes, self.obs_dim)));
        }
        if !self.log_std.is_finite() {
            return Err(bad("log_std is not finite".into()));
        }
        Ok(MlpParams { policy, value, log_std: self.log_std })
    }

    pub fn augmented(&self) -> bool {
        self.obs_dim == OBS_DIM_AUGMENTED
    }

    /// Rejects a checkpoint whose input width differs from what a scenario feeds it.
    pub fn expect_obs_dim(&self, scenario_dim: usize) -> Result<()> {
        if self.obs_dim == scenario_dim {
            Ok(())
        } else {
            Err(Error::ObsDimMismatch { checkpoint: self.obs_dim, scenario: scenario_dim })
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::MalformedCheckpoint { reason, .. } => {
                Error::MalformedCheckpoint { path: path.to_path_buf(), reason }
            }
            other => other,
        })
    }

    /// Parses and validates: format version first, then observation width,
    /// then the weight shapes.
    pub fn parse(text: &str) -> Result<Self> {
        let malformed = |reason: String| Error::MalformedCheckpoint { path: Default::default(), reason };
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let version = raw
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| malformed("missing format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::CheckpointVersion { expected: FORMAT_VERSION, found: version as u32 });
        }
        let ckpt: Self = serde_json::from_value(raw).map_err(|e| malformed(e.to_string()))?;
        if ckpt.obs_dim != OBS_DIM_BASE && ckpt.obs_dim != OBS_DIM_AUGMENTED {
            return Err(Error::ObsDimMismatch { checkpoint: ckpt.obs_dim, scenario: OBS_DIM_BASE });
        }
        ckpt.params().map_err(|e| malformed(e.to_string()))?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta() -> CheckpointMetadata {
        CheckpointMetadata { strategy: Strategy::Base, lambda: 0.0, loss_coef: 2000.0, seed: 42, steps_trained: 0 }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = MlpParams::init(30, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        PolicyCheckpoint::from_params(&params, meta()).save(&path).unwrap();
        let loaded = PolicyCheckpoint::load(&path).unwrap().params().unwrap();
        for _ in 0..100 {
            let obs: Vec<f64> = (0..30).map(|_| rng.random_range(-10.0..10.0)).collect();
            let (a, v) = params.forward(&obs);
            let (b, w) = loaded.forward(&obs);
            assert_eq!(a.to_bits(), b.to_bits());
            assert_eq!(v.to_bits(), w.to_bits());
        }
    }

    #[test]
    fn truncated_file_is_malformed() {
        let params = MlpParams::zeros(30).unwrap();
        let json = PolicyCheckpoint::from_params(&params, meta()).to_json().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        std::fs::write(&path, &json[..json.len() / 2]).unwrap();
        assert!(matches!(PolicyCheckpoint::load(&path), Err(Error::MalformedCheckpoint { .. })));
    }

    #[test]
    fn version_mismatch() {
        let params = MlpParams::zeros(30).unwrap();
        let mut ck = PolicyCheckpoint::from_params(&params, meta());
        ck.format_version = 7;
        let err = PolicyCheckpoint::parse(&ck.to_json().unwrap()).unwrap_err();
        assert!(matches!(err, Error::CheckpointVersion { found: 7, .. }));
    }

    #[test]
    fn dimension_mismatch_names_both_dims() {
        let params = MlpParams::zeros(32).unwrap();
        let ck = PolicyCheckpoint::from_params(&params, meta());
        let err = ck.expect_obs_dim(30).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("32") && msg.contains("30"), "{msg}");
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let params = MlpParams::zeros(30).unwrap();
        let mut ck = PolicyCheckpoint::from_params(&params, meta());
        ck.policy.weights[1].pop();
        assert!(matches!(
            PolicyCheckpoint::parse(&ck.to_json().unwrap()),
            Err(Error::MalformedCheckpoint { .. })
        ));
    }
}
