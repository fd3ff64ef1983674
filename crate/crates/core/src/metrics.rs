//! URLLC availability timelines, the iteration training-delay order
//! statistic, and per-window observation statistics.
//!
//! The network-layer state X of a device/direction is piecewise-constant 0/1:
//! it drops to 0 at the deadline instant of a late or lost packet and returns
//! to 1 at the next on-time delivery. The application-layer state Y is 0
//! exactly when X has been continuously 0 for the whole trailing survival
//! time. Availability estimates are time averages of Y over a window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::Direction;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("events must arrive in nondecreasing time order (got {got} after {last})")]
    OutOfOrder { last: f64, got: f64 },
    #[error("empty or inverted window [{start}, {end}]")]
    EmptyWindow { start: f64, end: f64 },
    #[error("training delay needs at least n={n} totals, got {got}")]
    NotEnoughTotals { n: usize, got: usize },
    #[error("training delay totals must be finite")]
    NonFiniteTotal,
    #[error("requirement check needs at least one sample per device")]
    NoSamples,
}

/// Outcome of one tracked packet, fed to the availability records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PacketOutcome {
    /// Delivered within its delay bound at the given instant.
    OnTime { at: f64 },
    /// Lost or past its bound; the network state drops at the deadline.
    Failed { deadline: f64 },
}

impl PacketOutcome {
    fn instant(&self) -> f64 {
        match self {
            PacketOutcome::OnTime { at } => *at,
            PacketOutcome::Failed { deadline } => *deadline,
        }
    }
}

/// Network/application state timeline of one URLLC device in one direction.
#[derive(Debug, Clone)]
pub struct AvailabilityRecord {
    pub device: usize,
    pub direction: Direction,
    pub survival_time_s: f64,
    /// Closed X=0 bursts as [start, end).
    bursts: Vec<(f64, f64)>,
    /// Start of the currently open X=0 burst, if the state is down.
    open_burst: Option<f64>,
    last_event: f64,
}

impl AvailabilityRecord {
    pub fn new(device: usize, direction: Direction, survival_time_s: f64) -> Self {
        // X = 1 before the first packet: no spurious startup downtime.
        AvailabilityRecord {
            device,
            direction,
            survival_time_s,
            bursts: Vec::new(),
            open_burst: None,
            last_event: f64::NEG_INFINITY,
        }
    }

    pub fn network_state_up(&self) -> bool {
        self.open_burst.is_none()
    }

    /// Instant of the most recent applied event.
    pub fn last_event_s(&self) -> f64 {
        self.last_event
    }

    /// Applies one packet outcome. Events must be time-ordered.
    pub fn update(&mut self, outcome: PacketOutcome) -> Result<(), MetricsError> {
        let t = outcome.instant();
        if t < self.last_event {
            return Err(MetricsError::OutOfOrder { last: self.last_event, got: t });
        }
        self.last_event = t;
        match outcome {
            PacketOutcome::Failed { deadline } => {
                if self.open_burst.is_none() {
                    self.open_burst = Some(deadline);
                }
            }
            PacketOutcome::OnTime { at } => {
                if let Some(start) = self.open_burst.take() {
                    if at > start {
                        self.bursts.push((start, at));
                    }
                }
            }
        }
        Ok(())
    }

    /// X=0 bursts clipped to `[t0, t1]`, including the open one.
    fn bursts_in(&self, t0: f64, t1: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.bursts
            .iter()
            .copied()
            .chain(self.open_burst.map(|s| (s, f64::INFINITY)))
            .map(move |(s, e)| (s.max(t0), e.min(t1)))
            .filter(|(s, e)| e > s)
    }

    /// Y=0 intervals over the whole history: each X=0 burst minus the
    /// survival time at its head.
    pub fn application_downtime_intervals(&self, t0: f64, t1: f64) -> Vec<(f64, f64)> {
        let sv = self.survival_time_s;
        self.bursts
            .iter()
            .copied()
            .chain(self.open_burst.map(|s| (s, f64::INFINITY)))
            .filter_map(|(s, e)| {
                let y_start = s + sv;
                let y_end = e;
                let clipped = (y_start.max(t0), y_end.min(t1));
                (clipped.1 > clipped.0).then_some(clipped)
            })
            .collect()
    }

    /// Total Y=0 time within `[t0, t1]`.
    pub fn application_downtime(&self, t0: f64, t1: f64) -> f64 {
        self.application_downtime_intervals(t0, t1).iter().map(|(s, e)| e - s).sum()
    }

    /// Total X=0 time within `[t0, t1]`.
    pub fn network_downtime(&self, t0: f64, t1: f64) -> f64 {
        self.bursts_in(t0, t1).map(|(s, e)| e - s).sum()
    }

    /// Mean duration of Y=0 intervals that complete inside the window;
    /// zero when none completes.
    pub fn mean_downtime(&self, t0: f64, t1: f64) -> f64 {
        let sv = self.survival_time_s;
        let completed: Vec<f64> = self
            .bursts
            .iter()
            .filter(|(s, e)| e - s > sv && *e > t0 && *e <= t1)
            .map(|(s, e)| e - s - sv)
            .collect();
        if completed.is_empty() {
            0.0
        } else {
            completed.iter().sum::<f64>() / completed.len() as f64
        }
    }
}

/// Time-average of the application state Y over `[start, start + len]`.
pub fn availability_estimate(
    record: &AvailabilityRecord,
    start: f64,
    len: f64,
) -> Result<f64, MetricsError> {
    if !(len > 0.0) {
        return Err(MetricsError::EmptyWindow { start, end: start + len });
    }
    let downtime = record.application_downtime(start, start + len);
    Ok(((len - downtime) / len).clamp(0.0, 1.0))
}

/// Per-device verdicts plus the fleet conjunction for the availability
/// requirement: empirical Pr{alpha <= alpha_req} <= gamma.
pub fn requirement_satisfied(
    samples_per_device: &[Vec<f64>],
    alpha_req: f64,
    gamma: f64,
) -> Result<(Vec<bool>, bool), MetricsError> {
    let mut verdicts = Vec::with_capacity(samples_per_device.len());
    for samples in samples_per_device {
        if samples.is_empty() {
            return Err(MetricsError::NoSamples);
        }
        let violations = samples.iter().filter(|&&a| a <= alpha_req).count();
        verdicts.push(violations as f64 / samples.len() as f64 <= gamma);
    }
    let fleet = verdicts.iter().all(|&v| v);
    Ok((verdicts, fleet))
}

/// Iteration training delay: the n-th smallest per-device total plus the
/// server processing delay, capped at `t_max`.
///
/// Equivalent to minimizing, over all n-subsets of the participants, the
/// slowest member of the subset.
pub fn training_delay(
    totals: &[f64],
    d_pr_server: f64,
    n: usize,
    t_max: f64,
) -> Result<f64, MetricsError> {
    if n == 0 || totals.len() < n {
        return Err(MetricsError::NotEnoughTotals { n, got: totals.len() });
    }
    if totals.iter().any(|t| !t.is_finite()) {
        return Err(MetricsError::NonFiniteTotal);
    }
    let mut sorted = totals.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite totals"));
    Ok((sorted[n - 1] + d_pr_server).min(t_max))
}

/// Nearest-rank percentile of a sorted slice: the ceil(p*n)-th sample.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// SINR distribution summary (dB): low / median / high percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub lo: f64,
    pub mid: f64,
    pub hi: f64,
}

fn triple(samples: &mut Vec<f64>, p_lo: f64, p_mid: f64, p_hi: f64) -> Option<Triple> {
    if samples.is_empty() {
        return None;
    }
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    Some(Triple {
        lo: nearest_rank(samples, p_lo)?,
        mid: nearest_rank(samples, p_mid)?,
        hi: nearest_rank(samples, p_hi)?,
    })
}

/// Window observations of one URLLC device in one direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UrllcDirWindow {
    /// Packet error ratio over outcomes in the window; absent without traffic.
    pub per: Option<f64>,
    /// Mean completed application downtime in the window, seconds.
    pub mean_downtime_s: f64,
    /// Availability estimate over the window.
    pub availability: f64,
    /// Queued bytes at window end.
    pub buffer_bytes: u64,
    /// SINR p1 / p5 / median over transport blocks in the window.
    pub sinr_db: Option<Triple>,
    /// Delivery delay median / p95 / p99 over on-time-tracked deliveries.
    pub delay_s: Option<Triple>,
}

/// Window observations of one learning device.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AiDeviceWindow {
    pub selected: bool,
    /// Downlink model delivery delay; absent when not measured this window.
    pub dl_delay_s: Option<f64>,
    /// Uplink update delivery delay; absent when not measured this window.
    pub ul_delay_s: Option<f64>,
    pub ul_buffer_bytes: u64,
    pub dl_buffer_bytes: u64,
    /// Per-direction SINR p5 / median / p95.
    pub sinr_db: [Option<Triple>; 2],
}

/// Window observations of one gNB: mean allocated resource blocks per TTI,
/// indexed `[flow][direction]` with flow 0 = URLLC, 1 = AI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GnbWindow {
    pub mean_rbs: [[f64; 2]; 2],
}

/// All observations gathered over one iteration window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowStats {
    pub start_s: f64,
    pub end_s: f64,
    pub urllc: Vec<[UrllcDirWindow; 2]>,
    pub ai: Vec<AiDeviceWindow>,
    pub gnb: Vec<GnbWindow>,
}

/// Accumulates raw per-TTI observations and closes them into [`WindowStats`].
#[derive(Debug, Clone)]
pub struct WindowCollector {
    start_s: f64,
    urllc_outcomes: Vec<[(u64, u64); 2]>,
    urllc_delays: Vec<[Vec<f64>; 2]>,
    urllc_sinr: Vec<[Vec<f64>; 2]>,
    ai_sinr: Vec<[Vec<f64>; 2]>,
    ai_dl_delay: Vec<Option<f64>>,
    ai_ul_delay: Vec<Option<f64>>,
    gnb_rb_sums: Vec<[[f64; 2]; 2]>,
    ttis: u64,
}

impl WindowCollector {
    pub fn new(urllc_count: usize, ai_count: usize, gnb_count: usize, start_s: f64) -> Self {
        WindowCollector {
            start_s,
            urllc_outcomes: vec![[(0, 0); 2]; urllc_count],
            urllc_delays: vec![Default::default(); urllc_count],
            urllc_sinr: vec![Default::default(); urllc_count],
            ai_sinr: vec![Default::default(); ai_count],
            ai_dl_delay: vec![None; ai_count],
            ai_ul_delay: vec![None; ai_count],
            gnb_rb_sums: vec![[[0.0; 2]; 2]; gnb_count],
            ttis: 0,
        }
    }

    pub fn start_s(&self) -> f64 {
        self.start_s
    }

    pub fn record_urllc_outcome(&mut self, device: usize, dir: Direction, ok: bool, delay_s: Option<f64>) {
        let slot = &mut self.urllc_outcomes[device][dir.index()];
        slot.0 += 1;
        if !ok {
            slot.1 += 1;
        }
        if let Some(d) = delay_s {
            self.urllc_delays[device][dir.index()].push(d);
        }
    }

    pub fn record_urllc_sinr(&mut self, device: usize, dir: Direction, sinr_db: f64) {
        self.urllc_sinr[device][dir.index()].push(sinr_db);
    }

    pub fn record_ai_sinr(&mut self, device: usize, dir: Direction, sinr_db: f64) {
        self.ai_sinr[device][dir.index()].push(sinr_db);
    }

    pub fn record_ai_delay(&mut self, device: usize, dir: Direction, delay_s: f64) {
        match dir {
            Direction::Dl => self.ai_dl_delay[device] = Some(delay_s),
            Direction::Ul => self.ai_ul_delay[device] = Some(delay_s),
        }
    }

    /// Adds one TTI's allocation counts: `rbs[gnb][flow][dir]`.
    pub fn record_tti_allocation(&mut self, rbs: &[[[u32; 2]; 2]]) {
        for (sum, add) in self.gnb_rb_sums.iter_mut().zip(rbs) {
            for f in 0..2 {
                for d in 0..2 {
                    sum[f][d] += add[f][d] as f64;
                }
            }
        }
        self.ttis += 1;
    }

    /// Closes the window. Buffer snapshots and availability come from the
    /// caller since they are owned by the engine and the tracker.
    #[allow(clippy::too_many_arguments)]
    pub fn close(
        mut self,
        end_s: f64,
        records: &[[AvailabilityRecord; 2]],
        urllc_buffers: &[[u64; 2]],
        ai_buffers: &[[u64; 2]],
        selected: &[bool],
    ) -> WindowStats {
        let window_len = end_s - self.start_s;
        let urllc = records
            .iter()
            .enumerate()
            .map(|(i, recs)| {
                [Direction::Ul, Direction::Dl].map(|dir| {
                    let d = dir.index();
                    let rec = &recs[d];
                    let (total, failed) = self.urllc_outcomes[i][d];
                    UrllcDirWindow {
                        per: (total > 0).then(|| failed as f64 / total as f64),
                        mean_downtime_s: rec.mean_downtime(self.start_s, end_s),
                        availability: if window_len > 0.0 {
                            availability_estimate(rec, self.start_s, window_len).unwrap_or(1.0)
                        } else {
                            1.0
                        },
                        buffer_bytes: urllc_buffers[i][d],
                        sinr_db: triple(&mut self.urllc_sinr[i][d], 0.01, 0.05, 0.50),
                        delay_s: triple(&mut self.urllc_delays[i][d], 0.50, 0.95, 0.99),
                    }
                })
            })
            .collect();
        let ai = (0..self.ai_sinr.len())
            .map(|i| AiDeviceWindow {
                selected: selected[i],
                dl_delay_s: self.ai_dl_delay[i],
                ul_delay_s: self.ai_ul_delay[i],
                ul_buffer_bytes: ai_buffers[i][Direction::Ul.index()],
                dl_buffer_bytes: ai_buffers[i][Direction::Dl.index()],
                sinr_db: [
                    triple(&mut self.ai_sinr[i][0], 0.05, 0.50, 0.95),
                    triple(&mut self.ai_sinr[i][1], 0.05, 0.50, 0.95),
                ],
            })
            .collect();
        let ttis = self.ttis.max(1) as f64;
        let gnb = self
            .gnb_rb_sums
            .iter()
            .map(|sums| GnbWindow {
                mean_rbs: [
                    [sums[0][0] / ttis, sums[0][1] / ttis],
                    [sums[1][0] / ttis, sums[1][1] / ttis],
                ],
            })
            .collect();
        WindowStats { start_s: self.start_s, end_s, urllc, ai, gnb }
    }
}

/// Realized delays of one device that completed an iteration in time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DeviceCompletion {
    pub device: usize,
    /// Downlink model delivery delay, seconds.
    pub dl_s: f64,
    /// Local training time, seconds.
    pub compute_s: f64,
    /// Uplink update delivery delay, seconds.
    pub ul_s: f64,
    /// dl + compute + ul, seconds.
    pub total_s: f64,
}

/// Outcome of one distributed-learning iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationOutcome {
    pub iteration: usize,
    /// Devices requested this iteration.
    pub selected: Vec<usize>,
    /// Per-device delay breakdown for updates that arrived within the budget.
    pub completions: Vec<DeviceCompletion>,
    /// Devices whose updates formed the global step, in completion order.
    pub first_n: Vec<usize>,
    pub server_processing_s: f64,
    /// Iteration training delay, capped at the iteration budget.
    pub training_delay_s: f64,
    pub timed_out: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn record_with(
        sv: f64,
        outcomes: &[PacketOutcome],
    ) -> AvailabilityRecord {
        let mut rec = AvailabilityRecord::new(0, Direction::Dl, sv);
        for o in outcomes {
            rec.update(*o).unwrap();
        }
        rec
    }

    #[test]
    fn all_on_time_keeps_full_availability() {
        let outcomes: Vec<_> = (0..17)
            .map(|i| PacketOutcome::OnTime { at: i as f64 * 0.006 })
            .collect();
        let rec = record_with(0.006, &outcomes);
        assert_eq!(rec.network_downtime(0.0, 0.1), 0.0);
        assert_abs_diff_eq!(availability_estimate(&rec, 0.0, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn short_burst_within_survival_time_is_invisible() {
        // X=0 for 4 ms, survival time 6 ms: Y stays 1 throughout.
        let rec = record_with(
            0.006,
            &[
                PacketOutcome::Failed { deadline: 0.010 },
                PacketOutcome::OnTime { at: 0.014 },
            ],
        );
        assert_abs_diff_eq!(rec.network_downtime(0.0, 0.1), 0.004, epsilon = 1e-12);
        assert_eq!(rec.application_downtime(0.0, 0.1), 0.0);
        assert_abs_diff_eq!(availability_estimate(&rec, 0.0, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn ten_ms_burst_yields_096_over_100ms() {
        // Hand-traced timeline: X=0 on [t0, t0+10ms), T_sv = 6 ms, so Y=0
        // exactly on [t0+6ms, t0+10ms); availability over 100 ms is 0.96.
        let t0 = 0.020;
        let rec = record_with(
            0.006,
            &[
                PacketOutcome::Failed { deadline: t0 },
                PacketOutcome::OnTime { at: t0 + 0.010 },
            ],
        );
        let intervals = rec.application_downtime_intervals(0.0, 0.1);
        assert_eq!(intervals.len(), 1);
        assert_abs_diff_eq!(intervals[0].0, t0 + 0.006, epsilon = 1e-12);
        assert_abs_diff_eq!(intervals[0].1, t0 + 0.010, epsilon = 1e-12);
        assert_abs_diff_eq!(availability_estimate(&rec, 0.0, 0.1).unwrap(), 0.96, epsilon = 1e-12);
    }

    #[test]
    fn open_burst_extends_to_window_end() {
        let rec = record_with(0.006, &[PacketOutcome::Failed { deadline: 0.050 }]);
        // Y=0 from 56 ms onward; over [0, 100 ms] downtime is 44 ms.
        assert_abs_diff_eq!(rec.application_downtime(0.0, 0.1), 0.044, epsilon = 1e-12);
    }

    #[test]
    fn out_of_order_events_rejected() {
        let mut rec = AvailabilityRecord::new(0, Direction::Ul, 0.006);
        rec.update(PacketOutcome::OnTime { at: 0.010 }).unwrap();
        let err = rec.update(PacketOutcome::Failed { deadline: 0.005 }).unwrap_err();
        assert!(matches!(err, MetricsError::OutOfOrder { .. }));
    }

    #[test]
    fn empty_window_is_an_error() {
        let rec = AvailabilityRecord::new(0, Direction::Ul, 0.006);
        assert!(availability_estimate(&rec, 0.0, 0.0).is_err());
    }

    #[test]
    fn availability_is_pure_proportion() {
        let rec = record_with(
            0.0,
            &[
                PacketOutcome::Failed { deadline: 0.010 },
                PacketOutcome::OnTime { at: 0.011 },
            ],
        );
        // With zero survival time, Y mirrors X: 1 ms down over 100 ms.
        assert_abs_diff_eq!(availability_estimate(&rec, 0.0, 0.1).unwrap(), 0.99, epsilon = 1e-12);
    }

    #[test]
    fn requirement_counting_examples() {
        let all_good = vec![vec![1.0; 10]];
        assert!(requirement_satisfied(&all_good, 0.99, 0.1).unwrap().1);

        let mut twenty_bad = vec![1.0; 80];
        twenty_bad.extend(vec![0.98; 20]);
        let (_, fleet) = requirement_satisfied(&[twenty_bad], 0.99, 0.1).unwrap();
        assert!(!fleet, "0.2 > 0.1 must violate");

        let mut one_bad = vec![1.0; 99];
        one_bad.push(0.98);
        let (verdicts, fleet) = requirement_satisfied(&[one_bad], 0.99, 0.012).unwrap();
        assert!(verdicts[0] && fleet, "0.01 <= 0.012 is satisfied");
    }

    #[test]
    fn requirement_needs_samples() {
        assert!(requirement_satisfied(&[vec![]], 0.99, 0.1).is_err());
    }

    /// Brute force over all n-subsets of Eq.-(8) style min-over-max.
    fn subset_oracle(totals: &[f64], d_pr: f64, n: usize, t_max: f64) -> f64 {
        let m = totals.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << m) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let worst = (0..m)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| totals[i])
                .fold(f64::NEG_INFINITY, f64::max);
            best = best.min(worst);
        }
        (best + d_pr).min(t_max)
    }

    #[test]
    fn training_delay_matches_subset_oracle_on_examples() {
        let totals = [3.0, 1.0, 5.0];
        assert_abs_diff_eq!(subset_oracle(&totals, 0.5, 2, 100.0), 3.5);
        assert_abs_diff_eq!(training_delay(&totals, 0.5, 2, 100.0).unwrap(), 3.5);

        assert_abs_diff_eq!(training_delay(&[4.0], 0.0, 1, 100.0).unwrap(), 4.0);

        let slow = [9.0, 9.8, 9.9];
        assert_abs_diff_eq!(subset_oracle(&slow, 0.5, 2, 10.0), 10.0);
        assert_abs_diff_eq!(training_delay(&slow, 0.5, 2, 10.0).unwrap(), 10.0);
    }

    #[test]
    fn training_delay_rejects_short_lists() {
        assert!(matches!(
            training_delay(&[1.0], 0.0, 2, 10.0),
            Err(MetricsError::NotEnoughTotals { .. })
        ));
    }

    #[test]
    fn nearest_rank_definition() {
        let sorted: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(nearest_rank(&sorted, 0.01), Some(1.0));
        assert_eq!(nearest_rank(&sorted, 0.05), Some(5.0));
        assert_eq!(nearest_rank(&sorted, 0.50), Some(50.0));
        assert_eq!(nearest_rank(&sorted, 0.99), Some(99.0));
        assert_eq!(nearest_rank(&sorted, 1.0), Some(100.0));
    }

    #[test]
    fn degenerate_distribution_collapses_percentiles() {
        let mut samples = vec![0.25; 40];
        let t = triple(&mut samples, 0.5, 0.95, 0.99).unwrap();
        assert_eq!((t.lo, t.mid, t.hi), (0.25, 0.25, 0.25));
    }

    #[test]
    fn collector_emits_sentinels_for_silent_devices() {
        let records =
            [[AvailabilityRecord::new(0, Direction::Ul, 0.006), AvailabilityRecord::new(0, Direction::Dl, 0.006)]];
        let collector = WindowCollector::new(1, 2, 1, 0.0);
        let stats = collector.close(1.0, &records, &[[0, 0]], &[[0, 0], [0, 0]], &[false, true]);
        assert!(stats.ai[0].dl_delay_s.is_none());
        assert!(stats.ai[0].ul_delay_s.is_none());
        assert!(stats.ai[0].sinr_db[0].is_none());
        assert!(!stats.ai[0].selected && stats.ai[1].selected);
        assert!(stats.urllc[0][0].per.is_none());
    }

    proptest! {
        /// Y-downtime equals the summed positive parts of (burst - T_sv) and
        /// never exceeds the X-downtime.
        #[test]
        fn downtime_relation(
            sv in 0.0f64..0.02,
            gaps in proptest::collection::vec((1e-4f64..0.05, 1e-4f64..0.05), 1..12)
        ) {
            let mut rec = AvailabilityRecord::new(0, Direction::Ul, sv);
            let mut t = 0.0;
            let mut expected = 0.0;
            for (down, up) in &gaps {
                rec.update(PacketOutcome::Failed { deadline: t }).unwrap();
                t += down;
                rec.update(PacketOutcome::OnTime { at: t }).unwrap();
                expected += (down - sv).max(0.0);
                t += up;
            }
            let horizon = t + 1.0;
            let x_down = rec.network_downtime(0.0, horizon);
            let y_down = rec.application_downtime(0.0, horizon);
            prop_assert!(y_down <= x_down + 1e-12);
            prop_assert!((y_down - expected).abs() < 1e-9);
        }

        /// The order-statistic implementation equals subset brute force.
        #[test]
        fn training_delay_equals_subset_brute_force(
            totals in proptest::collection::vec(0.0f64..20.0, 1..8),
            n_raw in 1usize..8,
            d_pr in 0.0f64..1.0,
        ) {
            let n = n_raw.min(totals.len());
            let fast = training_delay(&totals, d_pr, n, 10.0).unwrap();
            let slow = subset_oracle(&totals, d_pr, n, 10.0);
            prop_assert!((fast - slow).abs() < 1e-12);
        }

        /// Raising any total never lowers the delay.
        #[test]
        fn training_delay_monotone_in_totals(
            totals in proptest::collection::vec(0.0f64..20.0, 2..8),
            idx in 0usize..8,
            bump in 0.0f64..5.0,
        ) {
            let idx = idx % totals.len();
            let n = 2.min(totals.len());
            let base = training_delay(&totals, 0.1, n, 30.0).unwrap();
            let mut bumped = totals.clone();
            bumped[idx] += bump;
            let after = training_delay(&bumped, 0.1, n, 30.0).unwrap();
            prop_assert!(after + 1e-12 >= base);
        }

        /// Appending candidates never increases the n-th order statistic.
        #[test]
        fn training_delay_never_grows_with_extra_candidates(
            totals in proptest::collection::vec(0.0f64..20.0, 2..8),
            extra in 0.0f64..20.0,
        ) {
            let n = 2.min(totals.len());
            let base = training_delay(&totals, 0.1, n, 30.0).unwrap();
            let mut more = totals.clone();
            more.push(extra);
            let after = training_delay(&more, 0.1, n, 30.0).unwrap();
            prop_assert!(after <= base + 1e-12);
        }
    }
}
