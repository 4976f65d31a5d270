//! Subcommand bodies. Each writes its artifacts plus a manifest under the
//! output directory and returns a JSON summary for stdout.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fairflow_core::experiment::{
    cache_dir_or, over_penalization_holds, run_sweep, sweep_csv, CheckpointCache, ExperimentManifest,
};
use fairflow_core::metrics::write_atomic;
use fairflow_core::policy::train::train_with_progress;
use fairflow_core::scenarios::{
    cubic_solo_baseline, duel_episode_series, run_dynamic, run_mixed_cubic, run_single_flow_trace,
    run_staggered_duel, series_csv, BackgroundKind, CapacityTrace, ScenarioKind,
};
use fairflow_core::{Controller, DynamicTrace, LinkConfig, PolicyCheckpoint, ScenarioConfig, Strategy, TrainConfig};
use serde_json::{json, Value};

use crate::args::{ControllerSpec, EvalPlan, Globals, ReportPlan, SweepPlan, TrainPlan};

fn load_checkpoint(path: &Path) -> Result<PolicyCheckpoint> {
    PolicyCheckpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn controller(spec: &ControllerSpec) -> Result<Controller> {
    match spec {
        ControllerSpec::Cubic => Ok(Controller::Cubic),
        ControllerSpec::Checkpoint(path) => Ok(Controller::from_checkpoint(&load_checkpoint(path)?)?),
    }
}

fn checkpoint_paths(specs: &[&ControllerSpec]) -> Vec<PathBuf> {
    specs
        .iter()
        .filter_map(|s| match s {
            ControllerSpec::Checkpoint(p) => Some(p.clone()),
            ControllerSpec::Cubic => None,
        })
        .collect()
}

fn manifest(globals: &Globals, config: Value, checkpoints: Vec<PathBuf>) -> ExperimentManifest {
    ExperimentManifest {
        command: std::env::args().collect(),
        config,
        seed: globals.seed,
        checkpoints,
        out_dir: globals.out.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    Ok(write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())?)
}

pub fn train(plan: &TrainPlan, globals: &Globals) -> Result<Value> {
    let baseline = plan.baseline.as_deref().map(load_checkpoint).transpose()?;
    let cfg = &plan.config;
    let updates = cfg.updates();
    let every = (updates / 10).max(1);
    let outcome = train_with_progress(cfg, baseline.as_ref(), |u, p| {
        if (u + 1) % every == 0 {
            eprintln!("update {}/{updates}  step {}  mean episode reward {:.1}", u + 1, p.step, p.mean_episode_reward);
        }
    })?;
    let stem = plan.stem();
    let ck_path = globals.out.join(format!("{stem}.json"));
    let curve_path = globals.out.join(format!("{stem}.curve.csv"));
    outcome.checkpoint.save(&ck_path)?;
    write_atomic(&curve_path, outcome.curve_csv().as_bytes())?;
    let mut used = vec![ck_path.clone()];
    used.extend(plan.baseline.clone());
    let config = json!({ "train": cfg, "baseline": plan.baseline });
    let manifest_path = manifest(globals, config, used).write()?;
    Ok(json!({
        "command": "train",
        "strategy": cfg.strategy,
        "checkpoint": ck_path,
        "curve": curve_path,
        "manifest": manifest_path,
        "steps_trained": outcome.checkpoint.metadata.steps_trained,
        "final_mean_episode_reward": outcome.curve.last().map(|p| p.mean_episode_reward),
    }))
}

fn scenario_config(plan: &EvalPlan, seed: u64) -> ScenarioConfig {
    let background = match (&plan.scenario, &plan.bg) {
        (ScenarioKind::Cubic, _) | (_, Some(ControllerSpec::Cubic)) => Some(BackgroundKind::Cubic),
        (_, Some(ControllerSpec::Checkpoint(p))) => Some(BackgroundKind::Checkpoint(p.clone())),
        _ => None,
    };
    ScenarioConfig {
        kind: plan.scenario,
        link: LinkConfig::duel(),
        episodes: plan.episodes,
        stagger_mis: plan.stagger,
        episode_len: plan.episode_len,
        seed,
        ego: match &plan.ego {
            ControllerSpec::Checkpoint(p) => Some(p.clone()),
            ControllerSpec::Cubic => None,
        },
        background,
    }
}

pub fn eval(plan: &EvalPlan, globals: &Globals) -> Result<Value> {
    let ego = controller(&plan.ego)?;
    let cfg = scenario_config(plan, globals.seed);
    let out = &globals.out;
    let mut specs = vec![&plan.ego];
    specs.extend(plan.bg.as_ref());
    let summary = match plan.scenario {
        ScenarioKind::Single => {
            let trace = CapacityTrace::switching_20_40();
            let r = run_single_flow_trace(&ego, &trace)?;
            write_json(&out.join("trace.json"), &r)?;
            write_atomic(&out.join("trace.csv"), r.to_csv().as_bytes())?;
            json!({
                "scenario": "single",
                "utilization": r.utilization,
                "mean_abs_gap_mbps": r.mean_abs_gap_mbps,
                "mean_tput_mbps": r.mean_tput_mbps,
            })
        }
        ScenarioKind::Duel => {
            let bg = controller(plan.bg.as_ref().expect("duel plans carry a background"))?;
            let r = run_staggered_duel(&ego, &bg, &cfg)?;
            r.write_json(&out.join("report.json"))?;
            r.write_csv(&out.join("report.csv"))?;
            json!({
                "scenario": "duel",
                "mean_j": r.mean_j,
                "std_j": r.std_j,
                "min_j": r.min_j,
                "ego_mbps": r.ego_mbps,
                "bg_mbps": r.background_mbps,
                "aggregate_mbps": r.aggregate_mbps,
            })
        }
        ScenarioKind::Cubic => {
            let solo = cubic_solo_baseline(&cfg.link, cfg.episode_len)?;
            let r = run_mixed_cubic(&ego, &cfg, solo)?;
            r.write_json(&out.join("report.json"))?;
            r.write_csv(&out.join("report.csv"))?;
            json!({
                "scenario": "cubic",
                "mean_j": r.mean_j,
                "std_j": r.std_j,
                "ego_mbps": r.ego_mbps,
                "cubic_mbps": r.background_mbps,
                "ratio": r.ego_ratio(),
                "cubic_solo_mbps": solo,
                "harm_mean": r.harm_mean,
                "harm_std": r.harm_std,
            })
        }
        ScenarioKind::Dynamic => {
            let r = run_dynamic(&ego, &DynamicTrace::default(), &cfg.link, cfg.episode_len, globals.seed)?;
            write_json(&out.join("dynamic.json"), &r)?;
            write_atomic(&out.join("dynamic.csv"), r.series_csv().as_bytes())?;
            json!({ "scenario": "dynamic", "phase_j": r.phase_j() })
        }
    };
    let manifest_path = manifest(globals, json!({ "scenario": cfg }), checkpoint_paths(&specs)).write()?;
    let mut summary = summary;
    summary["command"] = json!("eval");
    summary["out_dir"] = json!(out);
    summary["manifest"] = json!(manifest_path);
    Ok(summary)
}

/// Rows that failed, as `config: reason`.
pub struct SweepOutcome {
    pub summary: Value,
    pub failures: Vec<String>,
}

pub fn sweep(plan: &SweepPlan, globals: &Globals) -> Result<SweepOutcome> {
    let cache = CheckpointCache::new(cache_dir_or(globals.out.join("cache")));
    let baseline_path = match &plan.baseline {
        Some(p) => p.clone(),
        None => {
            let base_cfg = TrainConfig { strategy: Strategy::Base, ..plan.template.clone() };
            eprintln!("training base policy (cached under {})", cache.dir().display());
            cache.get_or_train(&base_cfg, None)?.checkpoint_path
        }
    };
    let baseline = load_checkpoint(&baseline_path)?;
    let scenario = ScenarioConfig {
        episodes: plan.episodes,
        stagger_mis: plan.stagger,
        seed: globals.seed,
        background: Some(BackgroundKind::Checkpoint(baseline_path.clone())),
        ..ScenarioConfig::default()
    };
    let rows = run_sweep(&plan.entries, &plan.template, &baseline, &scenario, &cache)?;
    let csv_path = globals.out.join("sweep.csv");
    write_atomic(&csv_path, sweep_csv(&rows)?.as_bytes())?;
    write_json(&globals.out.join("sweep.json"), &rows)?;
    let config = json!({ "entries": plan.entries, "template": plan.template, "scenario": scenario });
    let manifest_path = manifest(globals, config, vec![baseline_path]).write()?;
    let failures: Vec<String> =
        rows.iter().filter(|r| !r.is_ok()).map(|r| format!("{} {}: {}", r.strategy, r.config, r.status)).collect();
    let summary = json!({
        "command": "sweep",
        "csv": csv_path,
        "manifest": manifest_path,
        "cache_dir": cache.dir(),
        "rows": rows.len(),
        "failed_rows": failures.len(),
        "over_penalization_ordering_holds": over_penalization_holds(&rows),
    });
    Ok(SweepOutcome { summary, failures })
}

pub fn report(plan: &ReportPlan, globals: &Globals) -> Result<Value> {
    let ego = controller(&plan.ego)?;
    let link = LinkConfig::duel();
    let (name, csv) = match plan.scenario {
        ScenarioKind::Single => ("trace_series.csv", run_single_flow_trace(&ego, &CapacityTrace::switching_20_40())?.to_csv()),
        ScenarioKind::Duel => {
            let bg = controller(plan.bg.as_ref().expect("duel plans carry a background"))?;
            let cfg = ScenarioConfig {
                stagger_mis: plan.stagger,
                episode_len: plan.episode_len,
                seed: globals.seed,
                ..ScenarioConfig::default()
            };
            ("duel_series.csv", series_csv(&duel_episode_series(&ego, &bg, &cfg, plan.episode)?))
        }
        ScenarioKind::Dynamic => {
            let r = run_dynamic(&ego, &DynamicTrace::default(), &link, plan.episode_len, globals.seed)?;
            ("dynamic_series.csv", r.series_csv())
        }
        ScenarioKind::Cubic => unreachable!("rejected while resolving flags"),
    };
    let path = globals.out.join(name);
    write_atomic(&path, csv.as_bytes())?;
    let mut specs = vec![&plan.ego];
    specs.extend(plan.bg.as_ref());
    let config = json!({
        "scenario": format!("{:?}", plan.scenario).to_lowercase(),
        "ego": plan.ego,
        "bg": plan.bg,
        "episode": plan.episode,
        "stagger": plan.stagger,
        "episode_len": plan.episode_len,
    });
    let manifest_path = manifest(globals, config, checkpoint_paths(&specs)).write()?;
    Ok(json!({ "command": "report", "series": path, "manifest": manifest_path }))
}
