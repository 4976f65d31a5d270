//! Checkpoint cache, strategy sweeps and run manifests.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::write_atomic;
use crate::policy::checkpoint::PolicyCheckpoint;
use crate::policy::train::{train, CurvePoint, Strategy, TrainConfig, TrainOutcome};
use crate::scenarios::{run_staggered_duel, Controller, ScenarioConfig};

pub const CACHE_ENV: &str = "FAIRFLOW_CACHE";

/// `$FAIRFLOW_CACHE`, or `fallback` when unset.
pub fn cache_dir_or(fallback: impl Into<PathBuf>) -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| fallback.into())
}

/// Trained checkpoints stored by a hash of everything that shapes training.
#[derive(Clone, Debug)]
pub struct CheckpointCache {
    dir: PathBuf,
}

#[derive(Clone, Debug)]
pub struct CachedRun {
    pub checkpoint: PolicyCheckpoint,
    pub checkpoint_path: PathBuf,
    pub curve_path: PathBuf,
    pub from_cache: bool,
}

impl CheckpointCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(cfg: &TrainConfig, baseline: Option<&PolicyCheckpoint>) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(cfg)?);
        if let Some(b) = baseline {
            h.update(b"|baseline|");
            h.update(b.to_json()?.as_bytes());
        }
        Ok(hex::encode(&h.finalize()[..16]))
    }

    fn paths(&self, cfg: &TrainConfig, key: &str) -> (PathBuf, PathBuf) {
        let stem = format!("{}-{key}", cfg.strategy);
        (self.dir.join(format!("{stem}.json")), self.dir.join(format!("{stem}.curve.csv")))
    }

    pub fn get_or_train(&self, cfg: &TrainConfig, baseline: Option<&PolicyCheckpoint>) -> Result<CachedRun> {
        self.get_or_train_with(cfg, baseline, train)
    }

    /// Like [`get_or_train`](Self::get_or_train) with a caller-supplied trainer.
    pub fn get_or_train_with<F>(&self, cfg: &TrainConfig, baseline: Option<&PolicyCheckpoint>, trainer: F) -> Result<CachedRun>
    where
        F: FnOnce(&TrainConfig, Option<&PolicyCheckpoint>) -> Result<TrainOutcome>,
    {
        let key = Self::key(cfg, baseline)?;
        let (checkpoint_path, curve_path) = self.paths(cfg, &key);
        if checkpoint_path.exists() {
            if let Ok(checkpoint) = PolicyCheckpoint::load(&checkpoint_path) {
                return Ok(CachedRun { checkpoint, checkpoint_path, curve_path, from_cache: true });
            }
        }
        std::fs::create_dir_all(&self.dir)?;
        let outcome = trainer(cfg, baseline)?;
        write_atomic(&curve_path, outcome.curve_csv().as_bytes())?;
        outcome.checkpoint.save(&checkpoint_path)?;
        Ok(CachedRun { checkpoint: outcome.checkpoint, checkpoint_path, curve_path, from_cache: false })
    }
}

/// One configuration in a strategy sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub strategy: Strategy,
    pub lambda: f64,
    pub loss_coef: f64,
}

impl SweepEntry {
    pub fn new(strategy: Strategy) -> Self {
        let d = TrainConfig::for_strategy(strategy);
        Self { strategy, lambda: d.lambda, loss_coef: d.loss_coef }
    }

    pub fn a(lambda: f64) -> Self {
        Self { lambda, ..Self::new(Strategy::A) }
    }

    pub fn c(loss_coef: f64) -> Self {
        Self { loss_coef, ..Self::new(Strategy::C) }
    }

    pub fn label(&self) -> String {
        match self.strategy {
            Strategy::Base => "base".into(),
            Strategy::A => format!("lambda={}", self.lambda),
            Strategy::B => "augmented".into(),
            Strategy::C => format!("loss={}", self.loss_coef),
        }
    }

    pub fn train_config(&self, template: &TrainConfig) -> TrainConfig {
        TrainConfig { strategy: self.strategy, lambda: self.lambda, loss_coef: self.loss_coef, ..template.clone() }
    }

    /// Strategy A over `{0.5, 1, 2, 5}`.
    pub fn a_grid() -> Vec<Self> {
        [0.5, 1.0, 2.0, 5.0].into_iter().map(Self::a).collect()
    }

    pub fn b_grid() -> Vec<Self> {
        vec![Self::new(Strategy::B)]
    }

    /// Strategy C over `{4000, 8000, 16000}`.
    pub fn c_grid() -> Vec<Self> {
        [4000.0, 8000.0, 16000.0].into_iter().map(Self::c).collect()
    }
}

pub const ORDERING_FLAG: &str = "over_penalization_order_violated";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub config: String,
    pub mean_j: Option<f64>,
    pub std_j: Option<f64>,
    pub ego_mbps: Option<f64>,
    pub bg_mbps: Option<f64>,
    pub aggregate_mbps: Option<f64>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
    /// Empty, or [`ORDERING_FLAG`] on Strategy A rows when the λ ordering does not hold.
    pub flag: String,
    #[serde(skip)]
    pub lambda: f64,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Checks J(λ=2) > J(λ=0.5) and J(λ=5) < J(λ=2) among Strategy A rows.
/// `None` when any of the three is missing.
pub fn over_penalization_holds(rows: &[SweepRow]) -> Option<bool> {
    let j = |lambda: f64| {
        rows.iter().find(|r| r.strategy == Strategy::A && r.lambda == lambda && r.is_ok()).and_then(|r| r.mean_j)
    };
    let (lo, mid, hi) = (j(0.5)?, j(2.0)?, j(5.0)?);
    Some(mid > lo && hi < mid)
}

/// Marks every Strategy A row when the ordering fails; returns the check result.
pub fn flag_ordering(rows: &mut [SweepRow]) -> Option<bool> {
    let holds = over_penalization_holds(rows);
    if holds == Some(false) {
        for r in rows.iter_mut().filter(|r| r.strategy == Strategy::A) {
            r.flag = ORDERING_FLAG.into();
        }
    }
    holds
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["strategy", "config", "mean_J", "std_J", "ego_mbps", "bg_mbps", "aggregate_mbps", "status", "flag"])?;
    for r in rows {
        w.write_record([
            r.strategy.as_str().to_string(),
            r.config.clone(),
            fmt_opt(r.mean_j),
            fmt_opt(r.std_j),
            fmt_opt(r.ego_mbps),
            fmt_opt(r.bg_mbps),
            fmt_opt(r.aggregate_mbps),
            r.status.clone(),
            r.flag.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Trains (or loads) each entry against `baseline` and evaluates it in the
/// staggered duel with `baseline` as background. Failed entries become
/// `failed` rows; the rest still run. Rows keep the input order.
pub fn run_sweep(
    entries: &[SweepEntry],
    template: &TrainConfig,
    baseline: &PolicyCheckpoint,
    scenario: &ScenarioConfig,
    cache: &CheckpointCache,
) -> Result<Vec<SweepRow>> {
    let background = Controller::from_checkpoint(baseline)?;
    let mut rows: Vec<SweepRow> = entries
        .par_iter()
        .map(|entry| {
            let base_row = SweepRow {
                strategy: entry.strategy,
                config: entry.label(),
                mean_j: None,
                std_j: None,
                ego_mbps: None,
                bg_mbps: None,
                aggregate_mbps: None,
                status: "ok".into(),
                flag: String::new(),
                lambda: entry.lambda,
            };
            let outcome = (|| {
                let cfg = entry.train_config(template);
                let bl = entry.strategy.needs_background().then_some(baseline);
                let run = cache.get_or_train(&cfg, bl)?;
                let ego = Controller::from_checkpoint(&run.checkpoint)?;
                run_staggered_duel(&ego, &background, scenario)
            })();
            match outcome {
                Ok(rep) => SweepRow {
                    mean_j: Some(rep.mean_j),
                    std_j: Some(rep.std_j),
                    ego_mbps: Some(rep.ego_mbps),
                    bg_mbps: Some(rep.background_mbps),
                    aggregate_mbps: Some(rep.aggregate_mbps),
                    ..base_row
                },
                Err(e) => SweepRow { status: format!("failed: {e}"), ..base_row },
            }
        })
        .collect();
    flag_ordering(&mut rows);
    Ok(rows)
}

/// Written next to every output so the run can be repeated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub checkpoints: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub tool_version: String,
}

impl ExperimentManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn write(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(Self::FILE_NAME);
        write_atomic(&path, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(path)
    }
}

/// Learning curve points from a saved curve CSV.
pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
