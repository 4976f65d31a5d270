//! Fairness and efficiency metrics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jain's fairness index `(Σx)² / (N Σx²)`, in `[1/N, 1]`.
pub fn jain_index(throughputs: &[f64]) -> Result<f64> {
    if throughputs.is_empty() {
        return Err(Error::EmptySeries);
    }
    if let Some(&bad) = throughputs.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::InvalidThroughput(bad));
    }
    let sum: f64 = throughputs.iter().sum();
    let sum_sq: f64 = throughputs.iter().map(|x| x * x).sum();
    if sum_sq == 0.0 {
        return Err(Error::JainUndefined);
    }
    let n = throughputs.len() as f64;
    // rounding can push the ratio a hair outside its bounds
    Ok((sum * sum / (n * sum_sq)).clamp(1.0 / n, 1.0))
}

/// Fractional throughput a victim loses relative to running alone.
pub fn harm(solo_tput: f64, mixed_tput: f64) -> Result<f64> {
    if !(solo_tput.is_finite() && solo_tput > 0.0) {
        return Err(Error::MissingSoloBaseline(solo_tput));
    }
    Ok(((solo_tput - mixed_tput) / solo_tput).max(0.0))
}

/// `(mean(tput) / mean(capacity), mean(|tput - capacity|))`.
pub fn utilization_and_gap(tput: &[f64], capacity: &[f64]) -> Result<(f64, f64)> {
    if tput.len() != capacity.len() {
        return Err(Error::SeriesLength(tput.len(), capacity.len()));
    }
    if tput.is_empty() {
        return Err(Error::EmptySeries);
    }
    let n = tput.len() as f64;
    let mean_cap = capacity.iter().sum::<f64>() / n;
    if mean_cap <= 0.0 {
        return Err(Error::InvalidThroughput(mean_cap));
    }
    let utilization = tput.iter().sum::<f64>() / n / mean_cap;
    let gap = tput.iter().zip(capacity).map(|(t, c)| (t - c).abs()).sum::<f64>() / n;
    Ok((utilization, gap))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseJ {
    pub start_mi: usize,
    pub end_mi: usize,
    pub active: Vec<usize>,
    pub jain: f64,
    /// Set when the phase was shorter than the window and the whole phase was used.
    pub short_phase: bool,
}

/// Steady-state J per phase: Jain's index over each active flow's mean
/// throughput in the last `window` steps before the next event.
///
/// `per_step[t][f]` is flow `f`'s throughput at step `t`; `events` holds
/// `(start_step, active_flows)` sorted by start step.
pub fn steady_state_j(per_step: &[Vec<f64>], events: &[(usize, Vec<usize>)], window: usize) -> Result<Vec<PhaseJ>> {
    if per_step.is_empty() || events.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut phases = Vec::with_capacity(events.len());
    for (k, (start, active)) in events.iter().enumerate() {
        let end = events.get(k + 1).map_or(per_step.len(), |e| e.0).min(per_step.len());
        if end <= *start {
            return Err(Error::InvalidTrace(format!("phase {k} is empty")));
        }
        let short_phase = end - start < window;
        let from = if short_phase { *start } else { end - window };
        let rates: Vec<f64> = active
            .iter()
            .map(|&f| mean(&per_step[from..end].iter().map(|row| row[f]).collect::<Vec<_>>()))
            .collect();
        phases.push(PhaseJ {
            start_mi: *start,
            end_mi: end,
            active: active.clone(),
            jain: jain_index(&rates)?,
            short_phase,
        });
    }
    Ok(phases)
}

/// One evaluated episode: per-flow mean throughput over each flow's active period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub flow_mbps: Vec<f64>,
    pub jain: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub harm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub episodes: Vec<EpisodeResult>,
    pub mean_j: f64,
    pub std_j: f64,
    pub min_j: f64,
    /// Mean throughput of each flow slot across episodes.
    pub flow_mean_mbps: Vec<f64>,
    pub ego_index: usize,
    pub ego_mbps: f64,
    pub background_mbps: f64,
    pub aggregate_mbps: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub harm_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub harm_std: Option<f64>,
}

impl FairnessReport {
    pub fn from_episodes(mut episodes: Vec<EpisodeResult>, ego_index: usize) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::EmptySeries);
        }
        episodes.sort_by_key(|e| e.episode);
        let n_flows = episodes[0].flow_mbps.len();
        let js: Vec<f64> = episodes.iter().map(|e| e.jain).collect();
        let flow_mean_mbps: Vec<f64> = (0..n_flows)
            .map(|f| mean(&episodes.iter().map(|e| e.flow_mbps[f]).collect::<Vec<_>>()))
            .collect();
        let ego_mbps = flow_mean_mbps[ego_index];
        let background_mbps = flow_mean_mbps
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ego_index)
            .map(|(_, x)| x)
            .sum();
        let aggregate_mbps = flow_mean_mbps.iter().sum();
        let harms: Vec<f64> = episodes.iter().filter_map(|e| e.harm).collect();
        let (harm_mean, harm_std) = if harms.is_empty() {
            (None, None)
        } else {
            (Some(mean(&harms)), Some(std_dev(&harms)))
        };
        Ok(Self {
            mean_j: mean(&js),
            std_j: std_dev(&js),
            min_j: js.iter().copied().fold(f64::INFINITY, f64::min),
            flow_mean_mbps,
            ego_index,
            ego_mbps,
            background_mbps,
            aggregate_mbps,
            harm_mean,
            harm_std,
            episodes,
        })
    }

    /// Ego throughput divided by the background's.
    pub fn ego_ratio(&self) -> f64 {
        self.ego_mbps / self.background_mbps
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// One row per episode: `episode,J,flow_0_mbps,...,harm`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let n_flows = self.flow_mean_mbps.len();
        let mut header = vec!["episode".to_string(), "J".to_string()];
        header.extend((0..n_flows).map(|f| format!("flow_{f}_mbps")));
        header.push("harm".into());
        w.write_record(&header)?;
        for e in &self.episodes {
            let mut row = vec![e.episode.to_string(), e.jain.to_string()];
            row.extend(e.flow_mbps.iter().map(|x| x.to_string()));
            row.push(e.harm.map(|h| h.to_string()).unwrap_or_default());
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }
}

/// Result of running one controller alone over a capacity trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    pub time_s: Vec<f64>,
    pub tput_mbps: Vec<f64>,
    pub capacity_mbps: Vec<f64>,
    pub mean_tput_mbps: f64,
    pub utilization: f64,
    pub mean_abs_gap_mbps: f64,
}

impl TraceResult {
    pub fn from_series(time_s: Vec<f64>, tput_mbps: Vec<f64>, capacity_mbps: Vec<f64>) -> Result<Self> {
        let (utilization, mean_abs_gap_mbps) = utilization_and_gap(&tput_mbps, &capacity_mbps)?;
        Ok(Self {
            mean_tput_mbps: mean(&tput_mbps),
            utilization,
            mean_abs_gap_mbps,
            time_s,
            tput_mbps,
            capacity_mbps,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,tput_mbps,capacity_mbps\n");
        for ((t, x), c) in self.time_s.iter().zip(&self.tput_mbps).zip(&self.capacity_mbps) {
            out.push_str(&format!("{t},{x},{c}\n"));
        }
        out
    }
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jain_examples() {
        assert_eq!(jain_index(&[3.0; 4]).unwrap(), 1.0);
        assert_eq!(jain_index(&[1.0, 0.0]).unwrap(), 0.5);
        let j = jain_index(&[2.3, 1.3]).unwrap();
        assert!((j - 12.96 / 13.96).abs() < 1e-12);
        assert!((j - 0.9284).abs() < 1e-4);
    }

    #[test]
    fn jain_errors() {
        assert!(matches!(jain_index(&[0.0, 0.0]), Err(Error::JainUndefined)));
        assert!(matches!(jain_index(&[]), Err(Error::EmptySeries)));
        assert!(matches!(jain_index(&[1.0, -1.0]), Err(Error::InvalidThroughput(_))));
    }

    #[test]
    fn harm_examples() {
        assert_eq!(harm(4.0, 5.0).unwrap(), 0.0);
        assert_eq!(harm(4.0, 3.0).unwrap(), 0.25);
        assert!(matches!(harm(0.0, 1.0), Err(Error::MissingSoloBaseline(_))));
    }

    #[test]
    fn utilization_examples() {
        let cap = [20.0, 40.0, 20.0];
        assert_eq!(utilization_and_gap(&cap, &cap).unwrap(), (1.0, 0.0));
        let (u, g) = utilization_and_gap(&[0.0; 3], &cap).unwrap();
        assert_eq!(u, 0.0);
        assert!((g - 80.0 / 3.0).abs() < 1e-12);
        // constant 18.4 Mbps against a trace whose mean capacity is 28.04
        let cap = [28.04; 5];
        let (u, _) = utilization_and_gap(&[18.4; 5], &cap).unwrap();
        assert!((u - 0.656).abs() < 1e-3);
        assert!(utilization_and_gap(&[], &[]).is_err());
        assert!(utilization_and_gap(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn steady_state_phases() {
        // flow 0 alone, then flows 0 and 1 at 3:1
        let mut steps = vec![vec![5.0, 0.0]; 30];
        steps.extend(vec![vec![3.0, 1.0]; 30]);
        let phases = steady_state_j(&steps, &[(0, vec![0]), (30, vec![0, 1])], 20).unwrap();
        assert_eq!(phases[0].jain, 1.0);
        assert!((phases[1].jain - 0.8).abs() < 1e-12);
        assert!(!phases[1].short_phase);
        let short = steady_state_j(&steps, &[(0, vec![0]), (50, vec![0, 1])], 20).unwrap();
        assert!(short[1].short_phase);
    }

    #[test]
    fn report_aggregate_is_sum_of_flow_means() {
        let eps = (0..5)
            .map(|i| EpisodeResult {
                episode: 4 - i,
                flow_mbps: vec![1.0 + i as f64 * 0.1, 2.0 - i as f64 * 0.2],
                jain: 0.9,
                harm: None,
            })
            .collect();
        let r = FairnessReport::from_episodes(eps, 1).unwrap();
        assert_eq!(r.aggregate_mbps, r.flow_mean_mbps.iter().sum::<f64>());
        assert_eq!(r.episodes[0].episode, 0);
        let csv = r.to_csv().unwrap();
        assert!(csv.starts_with("episode,J,flow_0_mbps,flow_1_mbps,harm\n"));
        assert_eq!(csv.lines().count(), 6);
    }

    proptest! {
        #[test]
        fn jain_bounds_and_scale(xs in proptest::collection::vec(0.0f64..100.0, 1..9), k in 0.01f64..100.0) {
            prop_assume!(xs.iter().any(|x| *x > 0.0));
            let n = xs.len() as f64;
            let j = jain_index(&xs).unwrap();
            prop_assert!(j >= 1.0 / n && j <= 1.0);
            let scaled: Vec<f64> = xs.iter().map(|x| x * k).collect();
            prop_assert!((jain_index(&scaled).unwrap() - j).abs() < 1e-12);
        }

        #[test]
        fn harm_in_unit_interval(solo in 0.001f64..100.0, mixed in 0.0f64..200.0) {
            let h = harm(solo, mixed).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
        }
    }
}
