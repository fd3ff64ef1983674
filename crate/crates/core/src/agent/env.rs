//! The radio-backed selection environment: wires the engine, the n-sync
//! protocol, the availability tracker, and the window collector into the
//! MDP the learner sees.
//!
//! One episode is one fresh deployment draw: topology, channels, traffic
//! phases, and task offsets all derive from the episode's seed. Each step
//! runs one learning iteration, closes the observation window at the
//! iteration boundary, computes the reward from the window's worst
//! availability gap and the realized training delay, and assembles the next
//! normalized state vector.

use rand::seq::index::sample as index_sample;
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{compute_reward, SelectionEnv, StepResult};
use crate::distlearn::{LearningTask, ModelState, ProtocolDriver};
use crate::metrics::{
    AvailabilityRecord, PacketOutcome, WindowCollector, WindowStats,
};
use crate::ransim::{DeliveryEvent, DeliveryOutcome, Engine, Flow, TtiReport};
use crate::scenario::{derive_stream, Direction, ScenarioConfig};

/// Normalization constants of the state encoding; recorded in run manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateNorm {
    pub sinr_lo_db: f64,
    pub sinr_hi_db: f64,
    pub t_max_s: f64,
    /// Per-direction URLLC delay scale (twice the delay bound).
    pub urllc_delay_scale_s: [f64; 2],
    pub downtime_scale_s: f64,
    pub urllc_buffer_scale_bytes: f64,
    pub ai_buffer_scale_bytes: f64,
    pub rb_budget: f64,
}

impl StateNorm {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        let max_urllc_packet = cfg
            .urllc_devices
            .iter()
            .map(|d| d.ul_bytes.max(d.dl_bytes) as f64)
            .fold(64.0, f64::max);
        StateNorm {
            sinr_lo_db: -20.0,
            sinr_hi_db: 60.0,
            t_max_s: cfg.t_max_seconds,
            urllc_delay_scale_s: [
                2.0 * cfg.delay_bounds_s.ul,
                2.0 * cfg.delay_bounds_s.dl,
            ],
            downtime_scale_s: cfg.t_max_seconds,
            urllc_buffer_scale_bytes: 8.0 * max_urllc_packet,
            ai_buffer_scale_bytes: 2.0 * cfg.ai_message_bytes as f64,
            rb_budget: 1.0,
        }
    }

    fn unit(&self, value: f64, scale: f64) -> f64 {
        (value / scale).clamp(0.0, 1.0)
    }

    fn sinr_unit(&self, db: f64) -> f64 {
        ((db - self.sinr_lo_db) / (self.sinr_hi_db - self.sinr_lo_db)).clamp(0.0, 1.0)
    }
}

/// State dimensionality for a deployment shape.
pub fn state_dim(urllc_count: usize, ai_count: usize, gnb_count: usize) -> usize {
    urllc_count * (24 + gnb_count) + ai_count * 15 + gnb_count * 4
}

/// Flattens one window into the normalized state vector: per-URLLC-device
/// blocks (with cell one-hot), per-AI-device blocks, then per-gNB blocks.
/// Missing measurements encode as 0 with their presence bit cleared.
pub fn assemble_state(
    stats: &WindowStats,
    urllc_cells: &[usize],
    gnb_count: usize,
    norm: &StateNorm,
    rb_budget: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(state_dim(stats.urllc.len(), stats.ai.len(), gnb_count));
    for (device, dirs) in stats.urllc.iter().enumerate() {
        for (d, w) in dirs.iter().enumerate() {
            out.push(w.per.unwrap_or(0.0));
            out.push(if w.per.is_some() { 1.0 } else { 0.0 });
            out.push(norm.unit(w.mean_downtime_s, norm.downtime_scale_s));
            out.push(norm.unit(w.buffer_bytes as f64, norm.urllc_buffer_scale_bytes));
            match &w.sinr_db {
                Some(t) => {
                    out.push(norm.sinr_unit(t.lo));
                    out.push(norm.sinr_unit(t.mid));
                    out.push(norm.sinr_unit(t.hi));
                    out.push(1.0);
                }
                None => out.extend_from_slice(&[0.0; 4]),
            }
            match &w.delay_s {
                Some(t) => {
                    let scale = norm.urllc_delay_scale_s[d];
                    out.push(norm.unit(t.lo, scale));
                    out.push(norm.unit(t.mid, scale));
                    out.push(norm.unit(t.hi, scale));
                    out.push(1.0);
                }
                None => out.extend_from_slice(&[0.0; 4]),
            }
        }
        for g in 0..gnb_count {
            out.push(if urllc_cells[device] == g { 1.0 } else { 0.0 });
        }
    }
    for w in &stats.ai {
        out.push(if w.selected { 1.0 } else { 0.0 });
        out.push(w.dl_delay_s.map(|d| norm.unit(d, norm.t_max_s)).unwrap_or(0.0));
        out.push(if w.dl_delay_s.is_some() { 1.0 } else { 0.0 });
        out.push(w.ul_delay_s.map(|d| norm.unit(d, norm.t_max_s)).unwrap_or(0.0));
        out.push(if w.ul_delay_s.is_some() { 1.0 } else { 0.0 });
        out.push(norm.unit(w.ul_buffer_bytes as f64, norm.ai_buffer_scale_bytes));
        out.push(norm.unit(w.dl_buffer_bytes as f64, norm.ai_buffer_scale_bytes));
        for t in &w.sinr_db {
            match t {
                Some(t) => {
                    out.push(norm.sinr_unit(t.lo));
                    out.push(norm.sinr_unit(t.mid));
                    out.push(norm.sinr_unit(t.hi));
                    out.push(1.0);
                }
                None => out.extend_from_slice(&[0.0; 4]),
            }
        }
    }
    for g in &stats.gnb {
        for f in 0..2 {
            for d in 0..2 {
                out.push((g.mean_rbs[f][d] / rb_budget).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Worst (availability - requirement) gap across devices and directions.
pub fn worst_availability_gap(stats: &WindowStats, alpha_req: f64) -> f64 {
    stats
        .urllc
        .iter()
        .flat_map(|dirs| dirs.iter())
        .map(|w| w.availability - alpha_req)
        .fold(f64::INFINITY, f64::min)
}

/// Reward per the configured weights from a closed window.
pub fn reward_from_window(
    stats: &WindowStats,
    training_delay_s: f64,
    cfg: &ScenarioConfig,
) -> f64 {
    let gap = worst_availability_gap(stats, cfg.availability_req);
    compute_reward(gap, training_delay_s, cfg.t_max_seconds, &cfg.reward_weights)
}

/// Sorts a batch of URLLC terminal events by their timeline instant and
/// feeds them into the availability records. Instants that would step
/// backwards across a batch boundary (a post-dated delivery racing a
/// back-dated expiry) clamp forward to the record's last event; the
/// distortion is bounded by the processing offset plus one TTI.
pub fn feed_availability_events(
    records: &mut [[AvailabilityRecord; 2]],
    events: &[DeliveryEvent],
) {
    let mut batch: Vec<(f64, usize, Direction, PacketOutcome)> = events
        .iter()
        .filter(|ev| ev.flow == Flow::Urllc)
        .filter_map(|ev| {
            let outcome = match ev.outcome {
                DeliveryOutcome::Delivered { at_s, late: false } => {
                    PacketOutcome::OnTime { at: at_s }
                }
                DeliveryOutcome::Delivered { late: true, .. } => PacketOutcome::Failed {
                    deadline: ev.created_at_s,
                },
                DeliveryOutcome::Lost { deadline_s } | DeliveryOutcome::Expired { deadline_s } => {
                    PacketOutcome::Failed { deadline: deadline_s }
                }
                DeliveryOutcome::Dropped => return None,
            };
            Some((instant_of(&outcome), ev.device, ev.direction, outcome))
        })
        .collect();
    batch.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (_, device, dir, outcome) in batch {
        let rec = &mut records[device][dir.index()];
        let clamped = clamp_forward(outcome, rec.last_event_s());
        rec.update(clamped).expect("events sorted and clamped");
    }
}

fn instant_of(outcome: &PacketOutcome) -> f64 {
    match outcome {
        PacketOutcome::OnTime { at } => *at,
        PacketOutcome::Failed { deadline } => *deadline,
    }
}

fn clamp_forward(outcome: PacketOutcome, floor: f64) -> PacketOutcome {
    match outcome {
        PacketOutcome::OnTime { at } => PacketOutcome::OnTime { at: at.max(floor) },
        PacketOutcome::Failed { deadline } => {
            PacketOutcome::Failed { deadline: deadline.max(floor) }
        }
    }
}

/// Feeds URLLC outcome counts and delivered delays into a window collector.
pub fn feed_collector_outcomes(collector: &mut WindowCollector, events: &[DeliveryEvent]) {
    for ev in events {
        if ev.flow != Flow::Urllc {
            continue;
        }
        match ev.outcome {
            DeliveryOutcome::Delivered { at_s, late } => collector.record_urllc_outcome(
                ev.device,
                ev.direction,
                !late,
                Some(at_s - ev.created_at_s),
            ),
            DeliveryOutcome::Lost { .. } | DeliveryOutcome::Expired { .. } => {
                collector.record_urllc_outcome(ev.device, ev.direction, false, None)
            }
            DeliveryOutcome::Dropped => {}
        }
    }
}

/// The full radio-backed environment.
pub struct RadioEnv {
    cfg: ScenarioConfig,
    run_seed: u64,
    episode_index: u64,
    norm: StateNorm,
    engine: Engine,
    driver: ProtocolDriver,
    task: LearningTask,
    model: ModelState,
    records: Vec<[AvailabilityRecord; 2]>,
    last_selection: Vec<bool>,
    first_action_time_s: f64,
    last_window_end_s: f64,
    last_outcome_timed_out: bool,
}

impl RadioEnv {
    /// Builds the environment; call [`SelectionEnv::reset`] before stepping.
    pub fn new(cfg: &ScenarioConfig, run_seed: u64) -> Self {
        let mut env = RadioEnv {
            cfg: cfg.clone(),
            run_seed,
            episode_index: 0,
            norm: StateNorm::from_config(cfg),
            engine: Engine::new(cfg, run_seed),
            driver: ProtocolDriver::new(cfg, run_seed),
            task: LearningTask::from_params(&cfg.learning, cfg.ai_device_count, cfg.rng_seed),
            model: ModelState::new(cfg.learning.dim),
            records: Vec::new(),
            last_selection: vec![false; cfg.ai_device_count],
            first_action_time_s: 0.0,
            last_window_end_s: 0.0,
            last_outcome_timed_out: false,
        };
        env.rebuild(run_seed);
        env
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn norm(&self) -> &StateNorm {
        &self.norm
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn last_iteration_timed_out(&self) -> bool {
        self.last_outcome_timed_out
    }

    /// Seed of episode `index` for this run, derived through the stream
    /// hierarchy so episodes are independent but reproducible.
    pub fn episode_seed(run_seed: u64, index: u64) -> u64 {
        derive_stream(run_seed, &format!("episode-{index}")).next_u64()
    }

    fn rebuild(&mut self, seed: u64) {
        self.engine = Engine::new(&self.cfg, seed);
        self.driver = ProtocolDriver::new(&self.cfg, seed);
        self.task =
            LearningTask::from_params(&self.cfg.learning, self.cfg.ai_device_count, self.cfg.rng_seed);
        self.model = ModelState::new(self.cfg.learning.dim);
        self.records = (0..self.cfg.urllc_devices.len())
            .map(|i| {
                [
                    AvailabilityRecord::new(i, Direction::Ul, self.cfg.survival_time_s.ul),
                    AvailabilityRecord::new(i, Direction::Dl, self.cfg.survival_time_s.dl),
                ]
            })
            .collect();
        self.last_selection = vec![false; self.cfg.ai_device_count];
        self.first_action_time_s = 0.0;
        self.last_window_end_s = 0.0;
        self.last_outcome_timed_out = false;
    }

    /// Runs one protocol iteration with full observation plumbing and closes
    /// the window at the iteration boundary.
    fn run_observed_iteration(&mut self, selection: &[bool]) -> (WindowStats, crate::metrics::IterationOutcome) {
        let RadioEnv { cfg, engine, driver, task, model, records, .. } = self;
        let start_s = engine.now_s();
        let mut collector = WindowCollector::new(
            cfg.urllc_devices.len(),
            cfg.ai_device_count,
            cfg.gnb_positions.len(),
            start_s,
        );
        // SINR samples of learning devices stay buffered until the first-n
        // set is known; only devices whose updates reached the central node
        // contribute measurements.
        let mut ai_sinr: Vec<[Vec<f64>; 2]> = vec![Default::default(); cfg.ai_device_count];
        let outcome = driver
            .run_iteration(engine, selection, model, task, |report: &TtiReport| {
                feed_availability_events(records, &report.events);
                feed_collector_outcomes(&mut collector, &report.events);
                for s in &report.sinr_samples {
                    match s.flow {
                        Flow::Urllc => collector.record_urllc_sinr(s.device, s.direction, s.sinr_db),
                        Flow::Ai => ai_sinr[s.device][s.direction.index()].push(s.sinr_db),
                    }
                }
                collector.record_tti_allocation(&report.rb_allocated);
            })
            .expect("selection size validated by map_action");
        for c in &outcome.completions {
            if outcome.first_n.contains(&c.device) {
                collector.record_ai_delay(c.device, Direction::Dl, c.dl_s);
                collector.record_ai_delay(c.device, Direction::Ul, c.ul_s);
                for dir in Direction::BOTH {
                    for &s in &ai_sinr[c.device][dir.index()] {
                        collector.record_ai_sinr(c.device, dir, s);
                    }
                }
            }
        }
        let end_s = start_s + outcome.training_delay_s;
        let urllc_buffers: Vec<[u64; 2]> =
            (0..cfg.urllc_devices.len()).map(|d| engine.urllc_buffer_bytes(d)).collect();
        let ai_buffers: Vec<[u64; 2]> =
            (0..cfg.ai_device_count).map(|d| engine.ai_buffer_bytes(d)).collect();
        let stats = collector.close(end_s, records, &urllc_buffers, &ai_buffers, selection);
        self.last_window_end_s = end_s;
        self.last_outcome_timed_out = outcome.timed_out;
        (stats, outcome)
    }

    fn state_from(&self, stats: &WindowStats) -> Vec<f64> {
        let cells: Vec<usize> =
            (0..self.cfg.urllc_devices.len()).map(|d| self.engine.urllc_cell_of(d)).collect();
        assemble_state(
            stats,
            &cells,
            self.cfg.gnb_positions.len(),
            &self.norm,
            self.engine.rb_budget() as f64,
        )
    }

    /// Availability of every device/direction over the whole episode, from
    /// the first agent action to the last closed window.
    pub fn episode_availability(&self) -> Vec<[f64; 2]> {
        let t0 = self.first_action_time_s;
        let len = (self.last_window_end_s - t0).max(1e-9);
        self.records
            .iter()
            .map(|recs| {
                [
                    crate::metrics::availability_estimate(&recs[0], t0, len).unwrap_or(1.0),
                    crate::metrics::availability_estimate(&recs[1], t0, len).unwrap_or(1.0),
                ]
            })
            .collect()
    }
}

impl SelectionEnv for RadioEnv {
    fn state_dim(&self) -> usize {
        state_dim(
            self.cfg.urllc_devices.len(),
            self.cfg.ai_device_count,
            self.cfg.gnb_positions.len(),
        )
    }

    fn action_dim(&self) -> usize {
        self.cfg.ai_device_count
    }

    fn required_updates(&self) -> usize {
        self.cfg.required_updates
    }

    fn episode_len(&self) -> usize {
        self.cfg.episode_length
    }

    /// Rebuilds the deployment for a fresh episode and runs the warmup
    /// iteration with a random minimal selection to produce s_1.
    fn reset(&mut self) -> Vec<f64> {
        let seed = Self::episode_seed(self.run_seed, self.episode_index);
        self.episode_index += 1;
        self.rebuild(seed);
        let mut rng: ChaCha12Rng = derive_stream(seed, "episode-init");
        let n = self.cfg.required_updates;
        let devices = self.cfg.ai_device_count;
        let chosen = index_sample(&mut rng, devices, n);
        let mut selection = vec![false; devices];
        for i in chosen {
            selection[i] = true;
        }
        let (stats, _) = self.run_observed_iteration(&selection);
        self.last_selection = selection;
        self.first_action_time_s = self.last_window_end_s;
        self.state_from(&stats)
    }

    fn step(&mut self, selection: &[bool]) -> StepResult {
        let (stats, outcome) = self.run_observed_iteration(selection);
        self.last_selection = selection.to_vec();
        let reward = reward_from_window(&stats, outcome.training_delay_s, &self.cfg);
        StepResult {
            state: self.state_from(&stats),
            reward,
            converged: self.model.converged,
            training_delay_s: outcome.training_delay_s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::desk_scenario;

    fn small_cfg(seed: u64) -> ScenarioConfig {
        let mut cfg = desk_scenario(seed);
        cfg.urllc_devices.truncate(4);
        cfg.ai_device_count = 5;
        cfg.required_updates = 2;
        cfg.ai_message_bytes = 60_000;
        cfg.t_max_seconds = 3.0;
        cfg.episode_length = 4;
        cfg
    }

    #[test]
    fn state_vector_has_documented_dimension_and_unit_range() {
        let cfg = small_cfg(2);
        let mut env = RadioEnv::new(&cfg, 2);
        let s1 = env.reset();
        assert_eq!(s1.len(), state_dim(4, 5, 4));
        assert_eq!(s1.len(), env.state_dim());
        assert!(s1.iter().all(|&x| (0.0..=1.0).contains(&x)), "entries outside [0,1]");
        let sel = vec![true, true, false, false, false];
        let result = env.step(&sel);
        assert_eq!(result.state.len(), env.state_dim());
        assert!(result.state.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(result.reward > 0.0 && result.reward <= 1.0);
    }

    #[test]
    fn unselected_devices_have_cleared_presence_bits() {
        let cfg = small_cfg(3);
        let mut env = RadioEnv::new(&cfg, 3);
        env.reset();
        let sel = vec![true, true, false, false, false];
        let result = env.step(&sel);
        // AI block of device 4 (never selected): selected flag and both
        // delay presence bits must be zero.
        let urllc_block = 4 * (24 + 4);
        let dev4 = urllc_block + 4 * 15;
        assert_eq!(result.state[dev4], 0.0, "selected flag");
        assert_eq!(result.state[dev4 + 2], 0.0, "dl presence");
        assert_eq!(result.state[dev4 + 4], 0.0, "ul presence");
    }

    #[test]
    fn availability_feeding_tolerates_boundary_reorders() {
        let mut records = vec![[
            AvailabilityRecord::new(0, Direction::Ul, 0.006),
            AvailabilityRecord::new(0, Direction::Dl, 0.006),
        ]];
        let mk = |outcome| DeliveryEvent {
            packet_id: 0,
            flow: Flow::Urllc,
            device: 0,
            direction: Direction::Dl,
            created_at_s: 0.0,
            size_bytes: 80,
            iteration_tag: None,
            outcome,
        };
        feed_availability_events(
            &mut records,
            &[mk(DeliveryOutcome::Delivered { at_s: 0.0060, late: false })],
        );
        // A back-dated expiry arriving in the next batch clamps forward.
        feed_availability_events(
            &mut records,
            &[mk(DeliveryOutcome::Expired { deadline_s: 0.0055 })],
        );
        assert!(!records[0][1].network_state_up());
    }

    #[test]
    fn episode_availability_reports_every_device_direction() {
        let cfg = small_cfg(5);
        let mut env = RadioEnv::new(&cfg, 5);
        env.reset();
        env.step(&[true, true, true, false, false]);
        let avail = env.episode_availability();
        assert_eq!(avail.len(), 4);
        for dirs in avail {
            for a in dirs {
                assert!((0.0..=1.0).contains(&a));
            }
        }
    }
}
