//! Evaluation protocols: single-flow capacity trace, staggered two-flow duel,
//! ego versus one CUBIC flow, and dynamic flow entry/exit.

use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cubic::CubicFlow;
use crate::error::{Error, Result};
use crate::metrics::{harm, jain_index, mean, steady_state_j, EpisodeResult, FairnessReport, PhaseJ, TraceResult};
use crate::policy::checkpoint::PolicyCheckpoint;
use crate::policy::env::{sample_initial_rate, PolicyDriver};
use crate::policy::train::derive_seed;
use crate::policy::MlpParams;
use crate::sim::{LinkConfig, MonitorReport, Network, DEFAULT_PACKET_SIZE_BITS};

/// How a flow picks its sending rate.
#[derive(Clone, Debug)]
pub enum Controller {
    /// Deterministic mean action of a trained policy.
    Policy { params: Arc<MlpParams>, augmented: bool },
    Cubic,
    /// Constant rate, ignoring feedback.
    Pinned { rate_pps: f64 },
    /// Always sends at the current link bandwidth.
    CapacityOracle,
}

impl Controller {
    /// Wires the observation width from checkpoint metadata, rejecting
    /// checkpoints whose width disagrees with their strategy.
    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        ck.expect_obs_dim(ck.metadata.strategy.obs_dim())?;
        Ok(Self::Policy { params: Arc::new(ck.params()?), augmented: ck.augmented() })
    }

    fn start(&self, link: &LinkConfig, initial_rate: f64) -> (Driver, f64) {
        match self {
            Controller::Policy { params, augmented } => {
                (Driver::Policy(PolicyDriver::new(Arc::clone(params), *augmented)), initial_rate)
            }
            Controller::Cubic => (Driver::Cubic(CubicFlow::new(initial_rate, link.one_way_latency_s)), initial_rate),
            Controller::Pinned { rate_pps } => (Driver::Pinned(*rate_pps), *rate_pps),
            Controller::CapacityOracle => (Driver::Oracle, link.bandwidth_pps),
        }
    }
}

#[derive(Clone, Debug)]
enum Driver {
    Policy(PolicyDriver),
    Cubic(CubicFlow),
    Pinned(f64),
    Oracle,
}

impl Driver {
    fn next_rate(&self, current: f64, bandwidth_pps: f64) -> f64 {
        match self {
            Driver::Policy(p) => p.next_rate(current),
            Driver::Cubic(c) => c.rate(),
            Driver::Pinned(r) => *r,
            Driver::Oracle => bandwidth_pps,
        }
    }

    fn observe(&mut self, report: &MonitorReport) {
        match self {
            Driver::Policy(p) => p.observe(report),
            Driver::Cubic(c) => c.on_report(report),
            Driver::Pinned(_) | Driver::Oracle => {}
        }
    }
}

/// Flow slots on one network, each with an optional running driver.
struct Harness {
    net: Network,
    drivers: Vec<Option<Driver>>,
}

impl Harness {
    fn new(link: &LinkConfig, n_flows: usize, seed: u64) -> Result<Self> {
        Ok(Self { net: Network::new(link.clone(), &vec![1.0; n_flows], seed)?, drivers: vec![None; n_flows] })
    }

    /// Activates or deactivates slots; newly active slots start fresh at `initial_rate`.
    fn set_active(&mut self, slot: usize, active: bool, ctrl: &Controller, initial_rate: f64) {
        match (active, self.drivers[slot].is_some()) {
            (true, false) => {
                let link = self.net.link().clone();
                let (driver, rate) = ctrl.start(&link, initial_rate);
                self.drivers[slot] = Some(driver);
                self.net.set_rate(slot, rate);
                self.net.reset_flow_history(slot);
            }
            (false, true) => self.drivers[slot] = None,
            _ => {}
        }
    }

    /// One MI; returns per-slot throughput in Mbps (zero for inactive slots).
    fn step(&mut self) -> Result<Vec<MonitorReport>> {
        let bw = self.net.link().bandwidth_pps;
        for (slot, driver) in self.drivers.iter().enumerate() {
            if let Some(d) = driver {
                let rate = d.next_rate(self.net.rate(slot), bw);
                self.net.set_rate(slot, rate);
            }
        }
        let mask: Vec<bool> = self.drivers.iter().map(Option::is_some).collect();
        let mi = self.net.link().mi_duration_s();
        let reports = self.net.step(&mask, mi)?;
        for (driver, report) in self.drivers.iter_mut().zip(&reports) {
            if let Some(d) = driver {
                d.observe(report);
            }
        }
        Ok(reports)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Single,
    Duel,
    Cubic,
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    Checkpoint(PathBuf),
    Cubic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub link: LinkConfig,
    pub episodes: usize,
    pub stagger_mis: usize,
    pub episode_len: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<BackgroundKind>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Duel,
            link: LinkConfig::duel(),
            episodes: 50,
            stagger_mis: 50,
            episode_len: 400,
            seed: 42,
            ego: None,
            background: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        if self.episodes < 1 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.stagger_mis >= self.episode_len {
            return Err(Error::Config(format!(
                "stagger ({}) must be shorter than the episode ({})",
                self.stagger_mis, self.episode_len
            )));
        }
        Ok(())
    }
}

/// Piecewise-constant bottleneck capacity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityTrace {
    /// `(start_s, capacity_mbps)`, sorted by start time, first at 0.
    pub segments: Vec<(f64, f64)>,
    pub duration_s: f64,
    pub one_way_latency_s: f64,
    pub queue_capacity_pkts: usize,
    /// Initial send rate as a fraction of the starting capacity.
    pub initial_rate_fraction: f64,
}

impl CapacityTrace {
    /// 25 s alternating 20/40 Mbps in 5 s segments, starting at 20 (mean 28 Mbps),
    /// over a 20 ms one-way path with a 10 packet buffer.
    pub fn switching_20_40() -> Self {
        Self {
            segments: (0..5).map(|i| (5.0 * i as f64, if i % 2 == 0 { 20.0 } else { 40.0 })).collect(),
            duration_s: 25.0,
            one_way_latency_s: 0.02,
            queue_capacity_pkts: 10,
            initial_rate_fraction: 0.5,
        }
    }

    pub fn capacity_at(&self, t: f64) -> f64 {
        self.segments.iter().take_while(|(start, _)| *start <= t + 1e-9).last().map_or(self.segments[0].1, |s| s.1)
    }

    pub fn link_at(&self, t: f64) -> LinkConfig {
        LinkConfig {
            bandwidth_pps: self.capacity_at(t) * 1e6 / DEFAULT_PACKET_SIZE_BITS,
            one_way_latency_s: self.one_way_latency_s,
            queue_capacity_pkts: self.queue_capacity_pkts,
            random_loss_rate: 0.0,
            packet_size_bits: DEFAULT_PACKET_SIZE_BITS,
        }
    }
}

/// Runs one controller alone over a capacity trace.
pub fn run_single_flow_trace(controller: &Controller, trace: &CapacityTrace) -> Result<TraceResult> {
    if trace.segments.is_empty() {
        return Err(Error::EmptySeries);
    }
    let link = trace.link_at(0.0);
    let mi = link.mi_duration_s();
    let n_mis = (trace.duration_s / mi).round() as usize;
    let mut h = Harness::new(&link, 1, 0)?;
    h.set_active(0, true, controller, link.bandwidth_pps * trace.initial_rate_fraction);
    let (mut time, mut tput, mut cap) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n_mis {
        let t = h.net.now();
        let capacity = trace.capacity_at(t);
        h.net.set_bandwidth(link.mbps_to_pps(capacity))?;
        let reports = h.step()?;
        time.push(t);
        tput.push(link.pps_to_mbps(reports[0].throughput_pps));
        cap.push(capacity);
    }
    TraceResult::from_series(time, tput, cap)
}

/// Per-step throughput (Mbps) of each slot and whether it was active.
struct EpisodeTrace {
    tput: Vec<Vec<f64>>,
    active: Vec<Vec<bool>>,
}

impl EpisodeTrace {
    /// Mean throughput of `slot` over its active steps.
    fn active_mean(&self, slot: usize) -> f64 {
        let xs: Vec<f64> = self.tput.iter().zip(&self.active).filter(|(_, a)| a[slot]).map(|(t, _)| t[slot]).collect();
        mean(&xs)
    }
}

/// Two flows; slot 0 (background, incumbent) runs alone for `stagger` MIs, then slot 1 (ego) joins.
fn run_two_flow_episode(
    ego: &Controller,
    background: &Controller,
    link: &LinkConfig,
    stagger: usize,
    episode_len: usize,
    seed: u64,
) -> Result<EpisodeTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_rate = sample_initial_rate(link, &mut rng);
    let mut h = Harness::new(link, 2, derive_seed(seed, 1))?;
    h.set_active(0, true, background, initial_rate);
    let mut trace = EpisodeTrace { tput: Vec::with_capacity(episode_len), active: Vec::with_capacity(episode_len) };
    for t in 0..episode_len {
        h.set_active(1, t >= stagger, ego, initial_rate);
        let reports = h.step()?;
        trace.tput.push(reports.iter().map(|r| link.pps_to_mbps(r.throughput_pps)).collect());
        trace.active.push(vec![true, t >= stagger]);
    }
    Ok(trace)
}

fn episode_seed(cfg: &ScenarioConfig, episode: usize) -> u64 {
    derive_seed(cfg.seed, 10_000 + episode as u64)
}

/// Staggered duel: the background is the incumbent, the ego the newcomer.
/// Per-episode J uses each flow's mean over its own active period.
pub fn run_staggered_duel(ego: &Controller, background: &Controller, cfg: &ScenarioConfig) -> Result<FairnessReport> {
    cfg.validate()?;
    let episodes = (0..cfg.episodes)
        .into_par_iter()
        .map(|e| {
            let trace =
                run_two_flow_episode(ego, background, &cfg.link, cfg.stagger_mis, cfg.episode_len, episode_seed(cfg, e))?;
            let flow_mbps = vec![trace.active_mean(0), trace.active_mean(1)];
            Ok(EpisodeResult { episode: e, jain: jain_index(&flow_mbps)?, flow_mbps, harm: None })
        })
        .collect::<Result<Vec<_>>>()?;
    FairnessReport::from_episodes(episodes, 1)
}

/// Per-MI throughput `[background, ego]` of one duel episode, zero before
/// the ego joins. Uses the same seed as episode `episode` of the duel.
pub fn duel_episode_series(
    ego: &Controller,
    background: &Controller,
    cfg: &ScenarioConfig,
    episode: usize,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let trace =
        run_two_flow_episode(ego, background, &cfg.link, cfg.stagger_mis, cfg.episode_len, episode_seed(cfg, episode))?;
    Ok(trace.tput)
}

/// `mi,flow_1_mbps,...` from per-step rows.
pub fn series_csv(per_step_mbps: &[Vec<f64>]) -> String {
    let n = per_step_mbps.first().map_or(0, Vec::len);
    let mut out = String::from("mi");
    for f in 1..=n {
        out.push_str(&format!(",flow_{f}_mbps"));
    }
    out.push('\n');
    for (t, row) in per_step_mbps.iter().enumerate() {
        out.push_str(&t.to_string());
        for x in row {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    out
}

/// CUBIC's mean throughput running alone for one episode on `link`.
pub fn cubic_solo_baseline(link: &LinkConfig, episode_len: usize) -> Result<f64> {
    let mut h = Harness::new(link, 1, 0)?;
    h.set_active(0, true, &Controller::Cubic, link.bandwidth_pps * 0.9);
    let mut tput = Vec::with_capacity(episode_len);
    for _ in 0..episode_len {
        tput.push(link.pps_to_mbps(h.step()?[0].throughput_pps));
    }
    Ok(mean(&tput))
}

/// Ego (slot 1) against one CUBIC flow (slot 0), with Harm against CUBIC's solo baseline.
pub fn run_mixed_cubic(ego: &Controller, cfg: &ScenarioConfig, solo_baseline_mbps: f64) -> Result<FairnessReport> {
    cfg.validate()?;
    if solo_baseline_mbps.is_nan() || solo_baseline_mbps <= 0.0 {
        return Err(Error::MissingSoloBaseline(solo_baseline_mbps));
    }
    let episodes = (0..cfg.episodes)
        .into_par_iter()
        .map(|e| {
            let trace = run_two_flow_episode(
                ego,
                &Controller::Cubic,
                &cfg.link,
                cfg.stagger_mis,
                cfg.episode_len,
                episode_seed(cfg, e),
            )?;
            let flow_mbps = vec![trace.active_mean(0), trace.active_mean(1)];
            Ok(EpisodeResult {
                episode: e,
                jain: jain_index(&flow_mbps)?,
                harm: Some(harm(solo_baseline_mbps, flow_mbps[0])?),
                flow_mbps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FairnessReport::from_episodes(episodes, 1)
}

/// Active-set schedule with 1-indexed flow ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicTrace {
    pub events: Vec<(usize, Vec<usize>)>,
}

impl Default for DynamicTrace {
    /// `{1} -> {1,2} -> {1,2,3} -> {1,2,3,4} -> {1,3,4}` in 80-MI phases.
    fn default() -> Self {
        Self {
            events: vec![
                (0, vec![1]),
                (80, vec![1, 2]),
                (160, vec![1, 2, 3]),
                (240, vec![1, 2, 3, 4]),
                (320, vec![1, 3, 4]),
            ],
        }
    }
}

impl DynamicTrace {
    pub fn validate(&self, episode_len: usize) -> Result<()> {
        let first = self.events.first().ok_or_else(|| Error::InvalidTrace("no events".into()))?;
        if first.0 != 0 {
            return Err(Error::InvalidTrace("first event must start at MI 0".into()));
        }
        for w in self.events.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidTrace(format!("event MIs must increase strictly ({} then {})", w[0].0, w[1].0)));
            }
        }
        for (mi, set) in &self.events {
            if set.is_empty() {
                return Err(Error::InvalidTrace(format!("empty active set at MI {mi}")));
            }
            if set.contains(&0) {
                return Err(Error::InvalidTrace("flow ids are 1-indexed".into()));
            }
            if *mi >= episode_len {
                return Err(Error::InvalidTrace(format!("event at MI {mi} is past the episode end")));
            }
        }
        Ok(())
    }

    pub fn n_slots(&self) -> usize {
        self.events.iter().flat_map(|(_, s)| s.iter().copied()).max().unwrap_or(0)
    }

    fn zero_indexed(&self) -> Vec<(usize, Vec<usize>)> {
        self.events.iter().map(|(mi, s)| (*mi, s.iter().map(|f| f - 1).collect())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicResult {
    pub phases: Vec<PhaseJ>,
    /// `per_step_mbps[t][slot]`.
    pub per_step_mbps: Vec<Vec<f64>>,
}

impl DynamicResult {
    pub fn phase_j(&self) -> Vec<f64> {
        self.phases.iter().map(|p| p.jain).collect()
    }

    /// `mi,flow_1_mbps,...` for plotting.
    pub fn series_csv(&self) -> String {
        series_csv(&self.per_step_mbps)
    }
}

pub const STEADY_STATE_WINDOW: usize = 20;

/// One deterministic episode where every slot runs a copy of `controller`.
pub fn run_dynamic(
    controller: &Controller,
    trace: &DynamicTrace,
    link: &LinkConfig,
    episode_len: usize,
    seed: u64,
) -> Result<DynamicResult> {
    trace.validate(episode_len)?;
    let events = trace.zero_indexed();
    let n_slots = trace.n_slots();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = Harness::new(link, n_slots, derive_seed(seed, 1))?;
    let mut per_step = Vec::with_capacity(episode_len);
    let mut phase = 0;
    for t in 0..episode_len {
        if phase < events.len() && events[phase].0 == t {
            for slot in 0..n_slots {
                let on = events[phase].1.contains(&slot);
                let rate = sample_initial_rate(link, &mut rng);
                h.set_active(slot, on, controller, rate);
            }
            phase += 1;
        }
        let reports = h.step()?;
        per_step.push(reports.iter().map(|r| link.pps_to_mbps(r.throughput_pps)).collect());
    }
    Ok(DynamicResult { phases: steady_state_j(&per_step, &events, STEADY_STATE_WINDOW)?, per_step_mbps: per_step })
}

/// Mixed-scenario summary of an ego/CUBIC report.
pub fn ego_cubic_ratio(report: &FairnessReport) -> f64 {
    report.ego_ratio()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(episodes: usize, stagger: usize) -> ScenarioConfig {
        ScenarioConfig { episodes, stagger_mis: stagger, episode_len: 200, ..Default::default() }
    }

    #[test]
    fn capacity_oracle_tracks_trace() {
        let r = run_single_flow_trace(&Controller::CapacityOracle, &CapacityTrace::switching_20_40()).unwrap();
        assert!((r.utilization - 1.0).abs() < 0.01, "{}", r.utilization);
        assert!(r.mean_abs_gap_mbps < 0.3, "{}", r.mean_abs_gap_mbps);
        assert_eq!(r.tput_mbps.len(), 625);
        assert!((mean(&r.capacity_mbps) - 28.0).abs() < 1e-9);
    }

    #[test]
    fn pinned_equal_rates_are_perfectly_fair() {
        let dummy = Controller::Pinned { rate_pps: 100.0 };
        let r = run_staggered_duel(&dummy, &dummy, &quick(3, 50)).unwrap();
        for e in &r.episodes {
            assert!(e.jain > 0.999, "{}", e.jain);
        }
    }

    #[test]
    fn newcomer_silent_during_stagger() {
        let t = run_two_flow_episode(
            &Controller::Pinned { rate_pps: 50.0 },
            &Controller::Cubic,
            &LinkConfig::duel(),
            30,
            60,
            7,
        )
        .unwrap();
        assert!(t.tput[..30].iter().all(|row| row[1] == 0.0));
        assert!(t.tput[30..].iter().map(|row| row[1]).sum::<f64>() > 0.0);
    }

    #[test]
    fn duel_is_deterministic() {
        let cfg = quick(4, 20);
        let a = run_staggered_duel(&Controller::Cubic, &Controller::Cubic, &cfg).unwrap();
        let b = run_staggered_duel(&Controller::Cubic, &Controller::Cubic, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixed_requires_solo_baseline() {
        let cfg = quick(1, 0);
        assert!(matches!(
            run_mixed_cubic(&Controller::Cubic, &cfg, 0.0),
            Err(Error::MissingSoloBaseline(_))
        ));
    }

    #[test]
    fn dynamic_trace_validation() {
        assert!(DynamicTrace::default().validate(400).is_ok());
        assert_eq!(DynamicTrace::default().n_slots(), 4);
        let bad = DynamicTrace { events: vec![(0, vec![1]), (0, vec![1, 2])] };
        assert!(bad.validate(400).is_err());
        let empty = DynamicTrace { events: vec![(0, vec![])] };
        assert!(empty.validate(400).is_err());
        let late = DynamicTrace { events: vec![(5, vec![1])] };
        assert!(late.validate(400).is_err());
    }

    #[test]
    fn dynamic_pinned_dummies_are_fair_in_every_phase() {
        let dummy = Controller::Pinned { rate_pps: 60.0 };
        let r = run_dynamic(&dummy, &DynamicTrace::default(), &LinkConfig::duel(), 400, 1).unwrap();
        assert_eq!(r.phases.len(), 5);
        assert_eq!(r.phases[0].jain, 1.0);
        for p in &r.phases {
            assert!(p.jain > 0.999, "{p:?}");
        }
    }

    #[test]
    fn stagger_must_fit_episode() {
        let cfg = ScenarioConfig { stagger_mis: 400, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
