//! Shared-bottleneck simulator.
//!
//! A packet is a `(send_time, flow)` pair. All active flows emit evenly spaced
//! packets at their current send rate; arrivals are merged in time order into
//! a single drop-tail FIFO served at a deterministic `1 / bandwidth` per
//! packet. Statistics are accounted per monitor interval (MI) by send time:
//! every packet sent in an MI is either lost (tail drop or random loss) or
//! delivered with a known queueing delay, so `sent == delivered + lost` holds
//! exactly for every report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1500-byte packets.
pub const DEFAULT_PACKET_SIZE_BITS: f64 = 12_000.0;

/// Send rates never fall below this, so multiplicative decrease cannot freeze a flow.
pub const MIN_RATE_PPS: f64 = 1.0;

/// Offsets each flow's first emission within its packet gap so that equal-rate
/// flows interleave instead of colliding on identical timestamps.
const PHASE_STEP: f64 = 0.618_033_988_749_894_9;

const TIME_EPS: f64 = 1e-9;

/// Bottleneck link parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub bandwidth_pps: f64,
    pub one_way_latency_s: f64,
    pub queue_capacity_pkts: usize,
    pub random_loss_rate: f64,
    #[serde(default = "default_packet_size_bits")]
    pub packet_size_bits: f64,
}

fn default_packet_size_bits() -> f64 {
    DEFAULT_PACKET_SIZE_BITS
}

/// Training-link ranges: bandwidth 100..500 pps, latency 50..500 ms,
/// queue 2..2981 packets (log-uniform), random loss 0..5%.
pub const TRAIN_BANDWIDTH_PPS: (f64, f64) = (100.0, 500.0);
pub const TRAIN_LATENCY_S: (f64, f64) = (0.05, 0.5);
pub const TRAIN_QUEUE_PKTS: (f64, f64) = (2.0, 2981.0);
pub const TRAIN_LOSS: (f64, f64) = (0.0, 0.05);

impl LinkConfig {
    pub fn new(
        bandwidth_pps: f64,
        one_way_latency_s: f64,
        queue_capacity_pkts: usize,
        random_loss_rate: f64,
    ) -> Result<Self> {
        let link = Self {
            bandwidth_pps,
            one_way_latency_s,
            queue_capacity_pkts,
            random_loss_rate,
            packet_size_bits: DEFAULT_PACKET_SIZE_BITS,
        };
        link.validate()?;
        Ok(link)
    }

    /// The two-flow evaluation link: 300 pps (3.6 Mbps), 100 ms, 100-packet queue, no random loss.
    pub fn duel() -> Self {
        Self {
            bandwidth_pps: 300.0,
            one_way_latency_s: 0.1,
            queue_capacity_pkts: 100,
            random_loss_rate: 0.0,
            packet_size_bits: DEFAULT_PACKET_SIZE_BITS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_pps.is_finite() && self.bandwidth_pps > 0.0) {
            return Err(Error::InvalidLink(format!(
                "bandwidth_pps must be positive, got {}",
                self.bandwidth_pps
            )));
        }
        if !(self.one_way_latency_s.is_finite() && self.one_way_latency_s > 0.0) {
            return Err(Error::InvalidLink(format!(
                "one_way_latency_s must be positive, got {}",
                self.one_way_latency_s
            )));
        }
        if self.queue_capacity_pkts < 1 {
            return Err(Error::InvalidLink("queue_capacity_pkts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.random_loss_rate) {
            return Err(Error::InvalidLink(format!(
                "random_loss_rate must lie in [0, 1], got {}",
                self.random_loss_rate
            )));
        }
        if !(self.packet_size_bits.is_finite() && self.packet_size_bits > 0.0) {
            return Err(Error::InvalidLink("packet_size_bits must be positive".into()));
        }
        Ok(())
    }

    /// One monitor interval lasts one base round-trip time.
    pub fn mi_duration_s(&self) -> f64 {
        2.0 * self.one_way_latency_s
    }

    pub fn pps_to_mbps(&self, pps: f64) -> f64 {
        pps * self.packet_size_bits / 1e6
    }

    pub fn mbps_to_pps(&self, mbps: f64) -> f64 {
        mbps * 1e6 / self.packet_size_bits
    }

    pub fn bandwidth_mbps(&self) -> f64 {
        self.pps_to_mbps(self.bandwidth_pps)
    }
}

/// Maps four unit-interval draws onto the training-link ranges.
///
/// Order: bandwidth, latency, queue (log scale), loss.
pub fn link_from_unit_draws(u: [f64; 4]) -> LinkConfig {
    let lerp = |(lo, hi): (f64, f64), t: f64| lo + (hi - lo) * t;
    let (qlo, qhi) = TRAIN_QUEUE_PKTS;
    let queue = lerp((qlo.ln(), qhi.ln()), u[2]).exp().round();
    LinkConfig {
        bandwidth_pps: lerp(TRAIN_BANDWIDTH_PPS, u[0]),
        one_way_latency_s: lerp(TRAIN_LATENCY_S, u[1]),
        queue_capacity_pkts: queue.clamp(qlo, qhi) as usize,
        random_loss_rate: lerp(TRAIN_LOSS, u[3]),
        packet_size_bits: DEFAULT_PACKET_SIZE_BITS,
    }
}

pub fn sample_training_link<R: Rng + ?Sized>(rng: &mut R) -> LinkConfig {
    let u = [
        rng.random::<f64>(),
        rng.random::<f64>(),
        rng.random::<f64>(),
        rng.random::<f64>(),
    ];
    link_from_unit_draws(u)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateActionConfig {
    pub alpha: f64,
}

impl Default for RateActionConfig {
    fn default() -> Self {
        Self { alpha: 0.025 }
    }
}

/// Multiplicative rate update: `x(1 + αa)` for `a >= 0`, `x / (1 - αa)` otherwise.
pub fn apply_rate_action(prev_rate: f64, action: f64, cfg: RateActionConfig) -> f64 {
    let a = if action.is_nan() { 0.0 } else { action.clamp(-1.0, 1.0) };
    let next = if a >= 0.0 {
        prev_rate * (1.0 + cfg.alpha * a)
    } else {
        prev_rate / (1.0 - cfg.alpha * a)
    };
    next.max(MIN_RATE_PPS)
}

/// Per-flow state held by the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub flow_id: usize,
    pub send_rate_pps: f64,
    pub active: bool,
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
}

/// Raw statistics for one flow over one monitor interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub flow_id: usize,
    pub mi_index: u64,
    pub duration_s: f64,
    pub sent_pkts: u64,
    pub delivered_pkts: u64,
    pub lost_pkts: u64,
    /// Zero when nothing was delivered; see `delivered_empty`.
    pub mean_latency_s: f64,
    pub min_latency_s_seen_so_far: Option<f64>,
    pub throughput_pps: f64,
    pub delivered_empty: bool,
}

impl MonitorReport {
    pub fn empty(flow_id: usize, mi_index: u64, duration_s: f64, min_latency: Option<f64>) -> Self {
        Self {
            flow_id,
            mi_index,
            duration_s,
            sent_pkts: 0,
            delivered_pkts: 0,
            lost_pkts: 0,
            mean_latency_s: 0.0,
            min_latency_s_seen_so_far: min_latency,
            throughput_pps: 0.0,
            delivered_empty: true,
        }
    }

    pub fn loss_fraction(&self) -> f64 {
        if self.sent_pkts == 0 {
            0.0
        } else {
            self.lost_pkts as f64 / self.sent_pkts as f64
        }
    }

    /// Rate at which packets were put on the wire during the MI.
    pub fn send_rate_pps(&self) -> f64 {
        self.sent_pkts as f64 / self.duration_s
    }
}

#[derive(Clone, Debug, Default)]
struct Emitter {
    /// Absolute time of the next packet; `None` until the flow is (re)activated.
    next_send: Option<f64>,
    rate_at_schedule: f64,
    min_latency: Option<f64>,
}

/// Single-bottleneck network owning its flows, queue, clock, and RNG.
#[derive(Clone, Debug)]
pub struct Network {
    link: LinkConfig,
    flows: Vec<FlowState>,
    emitters: Vec<Emitter>,
    now: f64,
    /// Time at which the server finishes everything currently queued.
    busy_until: f64,
    mi_index: u64,
    rng: ChaCha8Rng,
    arrivals: Vec<(f64, usize)>,
}

impl Network {
    pub fn new(link: LinkConfig, initial_rates: &[f64], seed: u64) -> Result<Self> {
        link.validate()?;
        let flows = initial_rates
            .iter()
            .enumerate()
            .map(|(flow_id, &rate)| FlowState {
                flow_id,
                send_rate_pps: rate.max(MIN_RATE_PPS),
                active: true,
                sent: 0,
                delivered: 0,
                lost: 0,
            })
            .collect::<Vec<_>>();
        let emitters = vec![Emitter::default(); flows.len()];
        Ok(Self {
            link,
            flows,
            emitters,
            now: 0.0,
            busy_until: 0.0,
            mi_index: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            arrivals: Vec::new(),
        })
    }

    pub fn link(&self) -> &LinkConfig {
        &self.link
    }

    pub fn flows(&self) -> &[FlowState] {
        &self.flows
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn mi_index(&self) -> u64 {
        self.mi_index
    }

    pub fn set_rate(&mut self, flow: usize, rate_pps: f64) {
        self.flows[flow].send_rate_pps = rate_pps.max(MIN_RATE_PPS);
    }

    pub fn rate(&self, flow: usize) -> f64 {
        self.flows[flow].send_rate_pps
    }

    /// Changes the service rate from now on, preserving the queued packet count.
    pub fn set_bandwidth(&mut self, bandwidth_pps: f64) -> Result<()> {
        let mut link = self.link.clone();
        link.bandwidth_pps = bandwidth_pps;
        link.validate()?;
        let backlog = (self.busy_until - self.now).max(0.0) * self.link.bandwidth_pps;
        self.busy_until = self.now + backlog / bandwidth_pps;
        self.link = link;
        Ok(())
    }

    /// Packets in the system (queued plus in service) at time `t >= now`.
    fn occupancy_at(&self, t: f64) -> usize {
        let backlog = (self.busy_until - t) * self.link.bandwidth_pps;
        if backlog <= TIME_EPS {
            0
        } else {
            (backlog - TIME_EPS).ceil() as usize
        }
    }

    pub fn queue_len(&self) -> usize {
        self.occupancy_at(self.now)
    }

    /// Forgets a flow's latency floor, as for a brand-new connection.
    pub fn reset_flow_history(&mut self, flow: usize) {
        self.emitters[flow].min_latency = None;
        self.emitters[flow].next_send = None;
    }

    /// Advances the network by one monitor interval with every flow active.
    pub fn step_all(&mut self, duration_s: f64) -> Result<Vec<MonitorReport>> {
        let mask = vec![true; self.flows.len()];
        self.step(&mask, duration_s)
    }

    /// Advances the network by one monitor interval.
    ///
    /// Muted flows emit nothing and get an all-zero report. Packets they had
    /// already queued are still served, so the backlog carries over.
    pub fn step(&mut self, active: &[bool], duration_s: f64) -> Result<Vec<MonitorReport>> {
        if active.len() != self.flows.len() {
            return Err(Error::MaskLength { expected: self.flows.len(), got: active.len() });
        }
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(Error::NonPositiveDuration(duration_s));
        }
        let start = self.now;
        let end = start + duration_s;

        self.arrivals.clear();
        for (i, flow) in self.flows.iter_mut().enumerate() {
            flow.active = active[i];
            let emitter = &mut self.emitters[i];
            if !active[i] {
                emitter.next_send = None;
                continue;
            }
            let rate = flow.send_rate_pps;
            let gap = 1.0 / rate;
            let mut next = match emitter.next_send {
                None => {
                    let phase = ((flow.flow_id as f64 + 1.0) * PHASE_STEP).fract();
                    start + phase * gap
                }
                // Rescale the remaining wait to the new rate.
                Some(t) => start + (t - start).max(0.0) * emitter.rate_at_schedule / rate,
            };
            while next < end {
                self.arrivals.push((next, i));
                next += gap;
            }
            emitter.next_send = Some(next);
            emitter.rate_at_schedule = rate;
        }
        self.arrivals
            .sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let n = self.flows.len();
        let mut sent = vec![0u64; n];
        let mut delivered = vec![0u64; n];
        let mut lost = vec![0u64; n];
        let mut queueing_sum = vec![0.0f64; n];
        let service = 1.0 / self.link.bandwidth_pps;
        let capacity = self.link.queue_capacity_pkts;
        let loss_rate = self.link.random_loss_rate;
        let one_way = self.link.one_way_latency_s;

        for k in 0..self.arrivals.len() {
            let (t, i) = self.arrivals[k];
            sent[i] += 1;
            if self.occupancy_at(t) >= capacity {
                lost[i] += 1;
                continue;
            }
            if loss_rate > 0.0 && self.rng.random::<f64>() < loss_rate {
                lost[i] += 1;
                continue;
            }
            let service_start = self.busy_until.max(t);
            self.busy_until = service_start + service;
            let wait = service_start - t;
            let latency = one_way + wait;
            delivered[i] += 1;
            queueing_sum[i] += wait;
            let min = &mut self.emitters[i].min_latency;
            *min = Some(min.map_or(latency, |m: f64| m.min(latency)));
        }

        let mi_index = self.mi_index;
        let reports = (0..n)
            .map(|i| {
                let flow = &mut self.flows[i];
                let min_latency = self.emitters[i].min_latency;
                if !active[i] {
                    return MonitorReport::empty(flow.flow_id, mi_index, duration_s, min_latency);
                }
                flow.sent += sent[i];
                flow.delivered += delivered[i];
                flow.lost += lost[i];
                let mean_latency = if delivered[i] > 0 {
                    one_way + queueing_sum[i] / delivered[i] as f64
                } else {
                    0.0
                };
                MonitorReport {
                    flow_id: flow.flow_id,
                    mi_index,
                    duration_s,
                    sent_pkts: sent[i],
                    delivered_pkts: delivered[i],
                    lost_pkts: lost[i],
                    mean_latency_s: mean_latency,
                    min_latency_s_seen_so_far: min_latency,
                    throughput_pps: delivered[i] as f64 / duration_s,
                    delivered_empty: delivered[i] == 0,
                }
            })
            .collect();

        self.now = end;
        self.mi_index += 1;
        Ok(reports)
    }
}
