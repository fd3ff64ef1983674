//! TTI-resolution radio engine: periodic URLLC traffic, RLC buffers,
//! strict-priority scheduling, proportional-fair AI allocation, transmission
//! outcomes from SINR, and HARQ/RLC retransmission bookkeeping.
//!
//! One engine instance is single-threaded and fully deterministic for a given
//! scenario and run seed. Scheduling runs per cell and per direction with
//! independent UL/DL resource pools; URLLC is always allocated before AI
//! within a TTI. Cross-cell interference is resolved from the global
//! allocation map of the TTI using resource-block index overlap.
//!
//! Abstractions relative to a full stack: ACKs are available at TTI
//! resolution (only retransmissions pay the one-TTI feedback delay), at most
//! one transport block is in flight per buffer, and receive combining gain
//! applies to the desired signal only.

pub mod mcs;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::channel::{self, LinkGeometry, LinkState};
use crate::scenario::{derive_stream, Direction, Point3, ScenarioConfig};
use mcs::{McsIndex, McsTable};

/// Bandwidth of one resource block, Hz.
pub const RB_BANDWIDTH_HZ: f64 = 360.0e3;

/// Service class of a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flow {
    Urllc,
    Ai,
}

impl Flow {
    pub fn index(self) -> usize {
        match self {
            Flow::Urllc => 0,
            Flow::Ai => 1,
        }
    }
}

/// One queued packet (URLLC datagram or AI model message).
#[derive(Debug, Clone)]
pub struct Packet {
    pub id: u64,
    pub flow: Flow,
    pub direction: Direction,
    pub device: usize,
    pub size_bytes: u64,
    pub created_at_s: f64,
    /// Absolute delivery deadline; URLLC only.
    pub deadline_s: Option<f64>,
    pub remaining_bytes: u64,
    /// RLC retransmission rounds consumed (AM only).
    pub rlc_retx: u32,
    /// Learning iteration that produced this message (AI only).
    pub iteration_tag: Option<usize>,
    schedulable_from_tti: u64,
}

/// RLC operating mode of a buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlcMode {
    /// Unacknowledged: no RLC retransmissions (URLLC).
    Um,
    /// Acknowledged: up to `max_retx` RLC rounds per packet (AI).
    Am { max_retx: u32 },
}

/// A transport block in flight or awaiting retransmission.
#[derive(Debug, Clone)]
struct TransportBlock {
    packet_id: u64,
    bytes: u64,
    rb_len: u32,
    mcs: McsIndex,
    attempts: u32,
    not_before_tti: u64,
}

/// FIFO transmit queue of one (device, direction) pair.
#[derive(Debug, Clone)]
pub struct RlcBuffer {
    pub mode: RlcMode,
    queue: Vec<Packet>,
    pending_retx: Option<TransportBlock>,
}

impl RlcBuffer {
    fn new(mode: RlcMode) -> Self {
        RlcBuffer { mode, queue: Vec::new(), pending_retx: None }
    }

    pub fn queued_bytes(&self) -> u64 {
        self.queue.iter().map(|p| p.remaining_bytes).sum()
    }

    fn head_schedulable(&self, tti: u64) -> Option<&Packet> {
        if self.pending_retx.is_some() {
            return None;
        }
        self.queue.first().filter(|p| p.schedulable_from_tti <= tti)
    }

    fn retx_ready(&self, tti: u64) -> bool {
        self.pending_retx.as_ref().is_some_and(|tb| tb.not_before_tti <= tti)
    }

    fn has_work(&self, tti: u64) -> bool {
        self.retx_ready(tti) || self.head_schedulable(tti).is_some()
    }
}

/// Terminal outcome of one packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeliveryOutcome {
    /// Fully received; `late` marks URLLC deliveries past their bound.
    Delivered { at_s: f64, late: bool },
    /// URLLC transport block exhausted its MAC attempts.
    Lost { deadline_s: f64 },
    /// URLLC packet aged past its deadline while queued.
    Expired { deadline_s: f64 },
    /// AI packet exhausted its RLC retransmission budget.
    Dropped,
}

/// Emitted whenever a packet leaves the system.
#[derive(Debug, Clone)]
pub struct DeliveryEvent {
    pub packet_id: u64,
    pub flow: Flow,
    pub device: usize,
    pub direction: Direction,
    pub created_at_s: f64,
    pub size_bytes: u64,
    pub iteration_tag: Option<usize>,
    pub outcome: DeliveryOutcome,
}

/// One measured transport-block SINR.
#[derive(Debug, Clone, Copy)]
pub struct SinrSample {
    pub flow: Flow,
    pub device: usize,
    pub direction: Direction,
    pub sinr_db: f64,
}

/// Everything observable about one stepped TTI.
#[derive(Debug, Clone)]
pub struct TtiReport {
    pub tti: u64,
    pub start_s: f64,
    pub end_s: f64,
    pub events: Vec<DeliveryEvent>,
    pub sinr_samples: Vec<SinrSample>,
    /// Allocated resource blocks, indexed `[gnb][flow][direction]`.
    pub rb_allocated: Vec<[[u32; 2]; 2]>,
}

/// Byte ledger per flow, for conservation checks and summaries.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlowLedger {
    pub generated_bytes: u64,
    pub delivered_bytes: u64,
    pub lost_bytes: u64,
    pub expired_bytes: u64,
    pub dropped_bytes: u64,
}

/// Per-cell scheduler state that persists across TTIs.
#[derive(Debug, Clone, Default)]
pub struct CellScheduleState {
    /// Round-robin cursor over the cell's URLLC devices (uplink).
    rr_cursor: usize,
}

#[derive(Debug, Clone, Copy)]
struct PlannedTx {
    flow: Flow,
    device: usize,
    direction: Direction,
    cell: usize,
    rb_start: u32,
    rb_len: u32,
    bytes: u64,
    mcs: McsIndex,
    attempts: u32,
    packet_id: u64,
    /// Transmit power spectral density, W per resource block.
    psd_w_per_rb: f64,
}

/// The deterministic discrete-event radio engine.
pub struct Engine {
    cfg: ScenarioConfig,
    table: McsTable,
    rb_budget: u32,
    /// URLLC slice size in RBs; equals the full budget without slicing.
    urllc_rb_cap: u32,
    tti: u64,
    next_packet_id: u64,

    urllc_home: Vec<Point3>,
    urllc_axis: Vec<[f64; 2]>,
    urllc_cell: Vec<usize>,
    urllc_links: Vec<Vec<LinkState>>,
    urllc_phase: Vec<[f64; 2]>,
    urllc_next_seq: Vec<[u64; 2]>,
    urllc_buf: Vec<[RlcBuffer; 2]>,

    ai_pos: Vec<Point3>,
    ai_cell: Vec<usize>,
    ai_links: Vec<Vec<LinkState>>,
    ai_buf: Vec<[RlcBuffer; 2]>,
    /// Exponentially smoothed served bits per TTI, `[device][direction]`.
    pf_avg_bits: Vec<[f64; 2]>,

    cells: Vec<CellScheduleState>,
    /// Starting resource-block index of each cell's allocations on the ring;
    /// staggering cells reduces pathological inter-cell overlap.
    cell_rb_offset: Vec<u32>,
    urllc_by_cell: Vec<Vec<usize>>,
    ai_by_cell: Vec<Vec<usize>>,

    rng_fading: ChaCha12Rng,
    rng_per: ChaCha12Rng,

    ledgers: [FlowLedger; 2],
}

impl Engine {
    pub fn new(cfg: &ScenarioConfig, run_seed: u64) -> Self {
        let cfg = cfg.clone();
        // Deployment identity (device placement) is a property of the
        // scenario and survives across runs; channels, traffic phases, and
        // movement directions are redrawn per run seed.
        let mut rng_deployment = derive_stream(cfg.rng_seed, "deployment");
        let mut rng_topology = derive_stream(run_seed, "topology");
        let mut rng_channel = derive_stream(run_seed, "channel");
        let mut rng_traffic = derive_stream(run_seed, "traffic");

        let gnbs = &cfg.gnb_positions;
        let h_dev = cfg.radio.device_height_m;

        let urllc_home: Vec<Point3> =
            cfg.urllc_devices.iter().map(|d| d.initial_position).collect();
        let urllc_axis: Vec<[f64; 2]> = cfg
            .urllc_devices
            .iter()
            .map(|d| match d.mobility.direction {
                crate::scenario::DirectionPolicy::Fixed { angle_rad } => {
                    [angle_rad.cos(), angle_rad.sin()]
                }
                crate::scenario::DirectionPolicy::RandomPerSeed => {
                    let angle: f64 = rng_topology.gen::<f64>() * std::f64::consts::TAU;
                    [angle.cos(), angle.sin()]
                }
            })
            .collect();
        let ai_pos: Vec<Point3> = (0..cfg.ai_device_count)
            .map(|_| {
                [
                    rng_deployment.gen::<f64>() * cfg.hall.x_m,
                    rng_deployment.gen::<f64>() * cfg.hall.y_m,
                    h_dev,
                ]
            })
            .collect();

        let draw_links = |positions: &[Point3], rng: &mut ChaCha12Rng| -> Vec<Vec<LinkState>> {
            positions
                .iter()
                .map(|&p| {
                    gnbs.iter()
                        .map(|&g| {
                            let geom = LinkGeometry::between(p, g, &cfg.radio);
                            LinkState::draw(&geom, &cfg.radio.shadowing_sigma_db, rng)
                                .expect("valid link geometry")
                        })
                        .collect()
                })
                .collect()
        };
        let urllc_links = draw_links(&urllc_home, &mut rng_channel);
        let ai_links = draw_links(&ai_pos, &mut rng_channel);

        // Strongest average received power at start, fixed thereafter.
        let associate = |links: &[Vec<LinkState>]| -> Vec<usize> {
            links
                .iter()
                .map(|per_gnb| {
                    per_gnb
                        .iter()
                        .enumerate()
                        .min_by(|(_, a), (_, b)| {
                            a.total_loss_db().partial_cmp(&b.total_loss_db()).unwrap()
                        })
                        .map(|(g, _)| g)
                        .unwrap()
                })
                .collect()
        };
        let urllc_cell = associate(&urllc_links);
        let ai_cell = associate(&ai_links);

        let urllc_phase: Vec<[f64; 2]> = cfg
            .urllc_devices
            .iter()
            .map(|d| {
                [
                    rng_traffic.gen::<f64>() * d.packet_period_s,
                    rng_traffic.gen::<f64>() * d.packet_period_s,
                ]
            })
            .collect();

        let max_rlc = cfg.radio.max_rlc_retx_ai;
        let urllc_buf =
            (0..urllc_home.len()).map(|_| [RlcBuffer::new(RlcMode::Um), RlcBuffer::new(RlcMode::Um)]).collect();
        let ai_buf = (0..cfg.ai_device_count)
            .map(|_| {
                [
                    RlcBuffer::new(RlcMode::Am { max_retx: max_rlc }),
                    RlcBuffer::new(RlcMode::Am { max_retx: max_rlc }),
                ]
            })
            .collect();

        let rb_budget = cfg.radio.resource_blocks(cfg.bandwidth_hz);
        let urllc_rb_cap = if cfg.slicing_fraction > 0.0 {
            ((cfg.slicing_fraction * rb_budget as f64).floor() as u32).max(1)
        } else {
            rb_budget
        };

        let mut urllc_by_cell = vec![Vec::new(); gnbs.len()];
        for (i, &c) in urllc_cell.iter().enumerate() {
            urllc_by_cell[c].push(i);
        }
        let mut ai_by_cell = vec![Vec::new(); gnbs.len()];
        for (i, &c) in ai_cell.iter().enumerate() {
            ai_by_cell[c].push(i);
        }

        Engine {
            table: McsTable::default(),
            rb_budget,
            urllc_rb_cap,
            tti: 0,
            next_packet_id: 0,
            urllc_home,
            urllc_axis,
            urllc_cell,
            urllc_links,
            urllc_phase,
            urllc_next_seq: vec![[0; 2]; cfg.urllc_devices.len()],
            urllc_buf,
            ai_pos,
            ai_cell,
            ai_links,
            ai_buf,
            pf_avg_bits: vec![[1.0; 2]; cfg.ai_device_count],
            cells: vec![CellScheduleState::default(); gnbs.len()],
            cell_rb_offset: (0..gnbs.len())
                .map(|c| (c as u32 * rb_budget) / gnbs.len().max(1) as u32)
                .collect(),
            urllc_by_cell,
            ai_by_cell,
            rng_fading: derive_stream(run_seed, "fading"),
            rng_per: derive_stream(run_seed, "per"),
            ledgers: [FlowLedger::default(); 2],
            cfg,
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn rb_budget(&self) -> u32 {
        self.rb_budget
    }

    pub fn gnb_count(&self) -> usize {
        self.cfg.gnb_positions.len()
    }

    pub fn urllc_count(&self) -> usize {
        self.urllc_home.len()
    }

    pub fn ai_count(&self) -> usize {
        self.ai_pos.len()
    }

    pub fn urllc_cell_of(&self, device: usize) -> usize {
        self.urllc_cell[device]
    }

    pub fn ai_cell_of(&self, device: usize) -> usize {
        self.ai_cell[device]
    }

    pub fn ledger(&self, flow: Flow) -> FlowLedger {
        self.ledgers[flow.index()]
    }

    /// Start time of the next TTI to be stepped.
    pub fn now_s(&self) -> f64 {
        self.tti as f64 * self.cfg.tti_seconds
    }

    pub fn urllc_buffer_bytes(&self, device: usize) -> [u64; 2] {
        [self.urllc_buf[device][0].queued_bytes(), self.urllc_buf[device][1].queued_bytes()]
    }

    pub fn ai_buffer_bytes(&self, device: usize) -> [u64; 2] {
        [self.ai_buf[device][0].queued_bytes(), self.ai_buf[device][1].queued_bytes()]
    }

    /// Original sizes of every packet still queued for a flow; closes the
    /// byte-conservation ledger.
    pub fn queued_original_bytes(&self, flow: Flow) -> u64 {
        let bufs: &Vec<[RlcBuffer; 2]> = match flow {
            Flow::Urllc => &self.urllc_buf,
            Flow::Ai => &self.ai_buf,
        };
        bufs.iter()
            .flat_map(|pair| pair.iter())
            .flat_map(|b| b.queue.iter())
            .map(|p| p.size_bytes)
            .sum()
    }

    /// Enqueues one AI model message. Creation times in the future are
    /// honored: the packet becomes schedulable in the TTI containing them.
    pub fn enqueue_ai(&mut self, device: usize, dir: Direction, created_at_s: f64, tag: usize) {
        let bytes = self.cfg.ai_message_bytes;
        let id = self.alloc_packet_id();
        let packet = Packet {
            id,
            flow: Flow::Ai,
            direction: dir,
            device,
            size_bytes: bytes,
            created_at_s,
            deadline_s: None,
            remaining_bytes: bytes,
            rlc_retx: 0,
            iteration_tag: Some(tag),
            schedulable_from_tti: schedulable_tti(created_at_s, self.cfg.tti_seconds),
        };
        self.ledgers[Flow::Ai.index()].generated_bytes += bytes;
        self.ai_buf[device][dir.index()].queue.push(packet);
    }

    fn alloc_packet_id(&mut self) -> u64 {
        let id = self.next_packet_id;
        self.next_packet_id += 1;
        id
    }

    fn urllc_position(&self, device: usize, t: f64) -> Point3 {
        let profile = &self.cfg.urllc_devices[device];
        let span = profile.mobility.span_m;
        let speed = profile.mobility.speed_mps;
        if span <= 0.0 || speed <= 0.0 {
            return self.urllc_home[device];
        }
        // Triangle oscillation in [-span/2, span/2] along the movement axis.
        let cycle = 2.0 * span / speed;
        let phase = (t % cycle) / cycle;
        let offset = if phase < 0.5 { phase * 2.0 * span - span / 2.0 } else { (1.0 - phase) * 2.0 * span - span / 2.0 };
        let axis = self.urllc_axis[device];
        let home = self.urllc_home[device];
        let hall = &self.cfg.hall;
        [
            (home[0] + axis[0] * offset).clamp(0.0, hall.x_m),
            (home[1] + axis[1] * offset).clamp(0.0, hall.y_m),
            home[2],
        ]
    }

    /// Large-scale loss of a link right now, using the cached LOS branch and
    /// shadowing but the current geometry.
    fn effective_loss_db(&self, flow: Flow, device: usize, gnb: usize, t: f64) -> f64 {
        let (link, pos) = match flow {
            Flow::Urllc => (&self.urllc_links[device][gnb], self.urllc_position(device, t)),
            Flow::Ai => (&self.ai_links[device][gnb], self.ai_pos[device]),
        };
        let geom = LinkGeometry::between(pos, self.cfg.gnb_positions[gnb], &self.cfg.radio);
        let pl = if link.los {
            channel::path_loss_los(&geom)
        } else {
            channel::path_loss_nlos(&geom)
        }
        .unwrap_or(link.path_loss_db);
        pl + link.shadowing_db
    }

    fn sinr_estimate(&self, flow: Flow, device: usize, dir: Direction) -> f64 {
        let cell = match flow {
            Flow::Urllc => self.urllc_cell[device],
            Flow::Ai => self.ai_cell[device],
        };
        let link = match flow {
            Flow::Urllc => &self.urllc_links[device][cell],
            Flow::Ai => &self.ai_links[device][cell],
        };
        // Conservative ramp-up: without a measurement the scheduler starts
        // at the lowest rate; the adapted estimate takes over afterwards.
        link.adapted_estimate_db(dir).unwrap_or(f64::NEG_INFINITY)
    }

    fn max_mac_attempts(&self, flow: Flow, dir: Direction) -> u32 {
        let m = &self.cfg.radio.max_mac_tx;
        match (flow, dir) {
            (Flow::Urllc, Direction::Ul) => m.urllc_ul,
            (Flow::Urllc, Direction::Dl) => m.urllc_dl,
            (Flow::Ai, Direction::Ul) => m.ai_ul,
            (Flow::Ai, Direction::Dl) => m.ai_dl,
        }
    }

    fn generate_urllc_traffic(&mut self, t0: f64, t1: f64) {
        for device in 0..self.urllc_home.len() {
            let profile = self.cfg.urllc_devices[device].clone();
            for dir in Direction::BOTH {
                let d = dir.index();
                let phase = self.urllc_phase[device][d];
                loop {
                    let seq = self.urllc_next_seq[device][d];
                    let arrival = phase + seq as f64 * profile.packet_period_s;
                    if arrival >= t1 {
                        break;
                    }
                    self.urllc_next_seq[device][d] = seq + 1;
                    if arrival < t0 {
                        continue;
                    }
                    let bytes = match dir {
                        Direction::Ul => profile.ul_bytes,
                        Direction::Dl => profile.dl_bytes,
                    } as u64;
                    let bound = self.cfg.delay_bounds_s.get(dir);
                    let id = self.alloc_packet_id();
                    let packet = Packet {
                        id,
                        flow: Flow::Urllc,
                        direction: dir,
                        device,
                        size_bytes: bytes,
                        created_at_s: arrival,
                        deadline_s: Some(arrival + bound),
                        remaining_bytes: bytes,
                        rlc_retx: 0,
                        iteration_tag: None,
                        schedulable_from_tti: schedulable_tti(arrival, self.cfg.tti_seconds),
                    };
                    self.ledgers[Flow::Urllc.index()].generated_bytes += bytes;
                    self.urllc_buf[device][d].queue.push(packet);
                }
            }
        }
    }

    fn expire_urllc(&mut self, t0: f64, events: &mut Vec<DeliveryEvent>) {
        for device in 0..self.urllc_buf.len() {
            for d in 0..2 {
                let buf = &mut self.urllc_buf[device][d];
                let mut kept = Vec::with_capacity(buf.queue.len());
                for packet in buf.queue.drain(..) {
                    let deadline = packet.deadline_s.expect("urllc packets carry deadlines");
                    if deadline <= t0 {
                        if buf
                            .pending_retx
                            .as_ref()
                            .is_some_and(|tb| tb.packet_id == packet.id)
                        {
                            buf.pending_retx = None;
                        }
                        self.ledgers[Flow::Urllc.index()].expired_bytes += packet.size_bytes;
                        events.push(DeliveryEvent {
                            packet_id: packet.id,
                            flow: Flow::Urllc,
                            device,
                            direction: packet.direction,
                            created_at_s: packet.created_at_s,
                            size_bytes: packet.size_bytes,
                            iteration_tag: None,
                            outcome: DeliveryOutcome::Expired { deadline_s: deadline },
                        });
                    } else {
                        kept.push(packet);
                    }
                }
                buf.queue = kept;
            }
        }
    }

    /// Advances one TTI and returns everything that happened in it.
    pub fn step_tti(&mut self) -> TtiReport {
        let tti = self.tti;
        let t0 = self.now_s();
        let t1 = t0 + self.cfg.tti_seconds;
        let mut events = Vec::new();

        self.generate_urllc_traffic(t0, t1);
        self.expire_urllc(t0, &mut events);

        let mut rb_allocated = vec![[[0u32; 2]; 2]; self.gnb_count()];
        let mut planned: Vec<PlannedTx> = Vec::new();
        for cell in 0..self.gnb_count() {
            self.plan_cell(cell, tti, &mut planned, &mut rb_allocated);
        }

        let sinr_samples = self.resolve(&planned, t0, t1, &mut events);

        // Proportional-fair smoothed rate update, every TTI for every device.
        let served: Vec<[f64; 2]> = {
            let mut served = vec![[0.0f64; 2]; self.ai_count()];
            for p in &planned {
                if p.flow == Flow::Ai {
                    served[p.device][p.direction.index()] += (p.bytes * 8) as f64;
                }
            }
            served
        };
        let w = self.cfg.radio.pf_smoothing;
        for (avg, add) in self.pf_avg_bits.iter_mut().zip(&served) {
            for d in 0..2 {
                avg[d] = (1.0 - w) * avg[d] + w * add[d];
            }
        }

        self.tti += 1;
        TtiReport { tti, start_s: t0, end_s: t1, events, sinr_samples, rb_allocated }
    }

    /// Builds the TTI allocation for one cell: URLLC strictly first in each
    /// direction, then proportional-fair AI on the remaining blocks.
    fn plan_cell(
        &mut self,
        cell: usize,
        tti: u64,
        planned: &mut Vec<PlannedTx>,
        rb_allocated: &mut [[[u32; 2]; 2]],
    ) {
        let sliced = self.cfg.slicing_fraction > 0.0;
        let urllc_cap = self.urllc_rb_cap;
        let offset = self.cell_rb_offset[cell];
        for dir in Direction::BOTH {
            // URLLC phase.
            let mut urllc_used = 0u32;
            let members: Vec<usize> = self.urllc_by_cell[cell].clone();
            if !members.is_empty() {
                match dir {
                    Direction::Ul => {
                        // Round robin with a persistent cursor; one block per
                        // device per TTI.
                        let start = self.cells[cell].rr_cursor % members.len();
                        let mut scheduled_any = false;
                        for step in 0..members.len() {
                            let device = members[(start + step) % members.len()];
                            if urllc_used >= urllc_cap {
                                break;
                            }
                            if let Some(tx) = self.plan_urllc_tx(
                                device,
                                dir,
                                cell,
                                tti,
                                offset + urllc_used,
                                urllc_cap - urllc_used,
                            ) {
                                urllc_used += tx.rb_len;
                                planned.push(tx);
                                scheduled_any = true;
                                self.cells[cell].rr_cursor = (start + step + 1) % members.len();
                            }
                        }
                        if !scheduled_any {
                            self.cells[cell].rr_cursor = start;
                        }
                    }
                    Direction::Dl => {
                        // Longest head-of-line wait first, device id breaking
                        // ties; one block per device per TTI.
                        let mut order: Vec<(f64, usize)> = members
                            .iter()
                            .filter_map(|&device| {
                                let buf = &self.urllc_buf[device][dir.index()];
                                if buf.retx_ready(tti) {
                                    Some((f64::NEG_INFINITY, device))
                                } else {
                                    buf.head_schedulable(tti).map(|p| (p.created_at_s, device))
                                }
                            })
                            .collect();
                        order.sort_by(|a, b| {
                            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
                        });
                        for (_, device) in order {
                            if urllc_used >= urllc_cap {
                                break;
                            }
                            if let Some(tx) = self.plan_urllc_tx(
                                device,
                                dir,
                                cell,
                                tti,
                                offset + urllc_used,
                                urllc_cap - urllc_used,
                            ) {
                                urllc_used += tx.rb_len;
                                planned.push(tx);
                            }
                        }
                    }
                }
            }
            rb_allocated[cell][Flow::Urllc.index()][dir.index()] = urllc_used;

            // AI phase on the remaining blocks (or the AI slice).
            let (ai_base, ai_cap) = if sliced {
                (offset + urllc_cap, self.rb_budget - urllc_cap)
            } else {
                (offset + urllc_used, self.rb_budget - urllc_used)
            };
            let mut ai_used = 0u32;
            let mut candidates: Vec<usize> = self.ai_by_cell[cell]
                .iter()
                .copied()
                .filter(|&dev| self.ai_buf[dev][dir.index()].has_work(tti))
                .collect();
            while ai_used < ai_cap && !candidates.is_empty() {
                // Proportional fair: achievable per-RB rate over the
                // smoothed served rate, ties by device id.
                let best = candidates
                    .iter()
                    .copied()
                    .max_by(|&a, &b| {
                        let ma = self.pf_metric(a, dir);
                        let mb = self.pf_metric(b, dir);
                        ma.partial_cmp(&mb).unwrap().then(b.cmp(&a))
                    })
                    .unwrap();
                candidates.retain(|&d| d != best);
                if let Some(tx) = self.plan_ai_tx(
                    best,
                    dir,
                    cell,
                    tti,
                    ai_base + ai_used,
                    ai_cap - ai_used,
                ) {
                    ai_used += tx.rb_len;
                    planned.push(tx);
                }
            }
            rb_allocated[cell][Flow::Ai.index()][dir.index()] = ai_used;
        }
    }

    fn plan_urllc_tx(
        &mut self,
        device: usize,
        dir: Direction,
        cell: usize,
        tti: u64,
        rb_base: u32,
        rb_left: u32,
    ) -> Option<PlannedTx> {
        self.plan_tx(Flow::Urllc, device, dir, cell, tti, rb_base, rb_left)
    }

    fn plan_ai_tx(
        &mut self,
        device: usize,
        dir: Direction,
        cell: usize,
        tti: u64,
        rb_base: u32,
        rb_left: u32,
    ) -> Option<PlannedTx> {
        self.plan_tx(Flow::Ai, device, dir, cell, tti, rb_base, rb_left)
    }

    #[allow(clippy::too_many_arguments)]
    fn plan_tx(
        &mut self,
        flow: Flow,
        device: usize,
        dir: Direction,
        cell: usize,
        tti: u64,
        rb_base: u32,
        rb_left: u32,
    ) -> Option<PlannedTx> {
        let estimate = self.sinr_estimate(flow, device, dir);
        let target_bler = self.cfg.radio.target_bler;
        let dl_psd = self.dl_psd(flow);
        let ul_power = self.cfg.ul_tx_power_w;
        let buf = match flow {
            Flow::Urllc => &mut self.urllc_buf[device][dir.index()],
            Flow::Ai => &mut self.ai_buf[device][dir.index()],
        };
        let tb = Self::next_block(buf, &self.table, tti, rb_left, estimate, target_bler)?;
        let psd = match dir {
            Direction::Ul => ul_power / tb.rb_len as f64,
            Direction::Dl => dl_psd,
        };
        Some(PlannedTx {
            flow,
            device,
            direction: dir,
            cell,
            rb_start: rb_base,
            rb_len: tb.rb_len,
            bytes: tb.bytes,
            mcs: tb.mcs,
            attempts: tb.attempts,
            packet_id: tb.packet_id,
            psd_w_per_rb: psd,
        })
    }

    /// Downlink power spectral density per RB. With slicing, each flow's
    /// share of the gNB power spreads over its slice; otherwise the full
    /// power spreads over the full budget.
    fn dl_psd(&self, flow: Flow) -> f64 {
        let p = self.cfg.dl_tx_power_w;
        let f = self.cfg.slicing_fraction;
        if f > 0.0 {
            match flow {
                Flow::Urllc => p * f / self.urllc_rb_cap as f64,
                Flow::Ai => p * (1.0 - f) / (self.rb_budget - self.urllc_rb_cap).max(1) as f64,
            }
        } else {
            p / self.rb_budget as f64
        }
    }

    /// Pops the next transport block of a buffer: a due retransmission, or a
    /// fresh block built from the head packet at the link-adapted rate.
    fn next_block(
        buf: &mut RlcBuffer,
        table: &McsTable,
        tti: u64,
        rb_left: u32,
        sinr_estimate_db: f64,
        target_bler: f64,
    ) -> Option<BlockPlan> {
        if rb_left == 0 {
            return None;
        }
        if buf.retx_ready(tti) {
            let tb = buf.pending_retx.as_ref().unwrap();
            if tb.rb_len > rb_left {
                return None; // retransmission needs its original allocation
            }
            let tb = buf.pending_retx.take().unwrap();
            return Some(BlockPlan {
                packet_id: tb.packet_id,
                bytes: tb.bytes,
                rb_len: tb.rb_len,
                mcs: tb.mcs,
                attempts: tb.attempts,
            });
        }
        if buf.pending_retx.is_some() {
            return None; // stop-and-wait until the retransmission clears
        }
        let head = buf.head_schedulable(tti)?;
        let mcs = table.select_mcs(sinr_estimate_db, target_bler);
        let bits_per_rb = table.entry(mcs).bits_per_rb() as u64;
        let needed = ((head.remaining_bytes * 8).div_ceil(bits_per_rb)) as u32;
        let rb_len = needed.min(rb_left);
        let bytes = head.remaining_bytes.min(rb_len as u64 * bits_per_rb / 8);
        if bytes == 0 {
            return None;
        }
        Some(BlockPlan { packet_id: head.id, bytes, rb_len, mcs, attempts: 0 })
    }

    /// Resolves every planned transmission of the TTI against interference.
    fn resolve(
        &mut self,
        planned: &[PlannedTx],
        t0: f64,
        t1: f64,
        events: &mut Vec<DeliveryEvent>,
    ) -> Vec<SinrSample> {
        let nf = self.cfg.radio.noise_figure_db;
        let combining = self.cfg.radio.combining_gain_db;
        let noise_per_rb = channel::noise_power_w(RB_BANDWIDTH_HZ, nf);
        let mut samples = Vec::with_capacity(planned.len());

        for p in planned {
            let serving = p.cell;
            let own_loss = self.effective_loss_db(p.flow, p.device, serving, t0);
            let fading = channel::fading_gain(&mut self.rng_fading);
            let signal = p.psd_w_per_rb
                * p.rb_len as f64
                * channel::db_to_linear(combining - own_loss)
                * fading;

            let mut interference = 0.0;
            for q in planned {
                if q.cell == p.cell || q.direction != p.direction {
                    continue;
                }
                let overlap =
                    ring_overlap(p.rb_start, p.rb_len, q.rb_start, q.rb_len, self.rb_budget);
                if overlap == 0 {
                    continue;
                }
                let gain = match p.direction {
                    // Interfering gNB towards the victim device.
                    Direction::Dl => {
                        channel::db_to_linear(-self.effective_loss_db(p.flow, p.device, q.cell, t0))
                    }
                    // Interfering device towards the victim's serving gNB.
                    Direction::Ul => {
                        channel::db_to_linear(-self.effective_loss_db(q.flow, q.device, p.cell, t0))
                    }
                };
                interference += q.psd_w_per_rb * overlap as f64 * gain;
            }

            let noise = noise_per_rb * p.rb_len as f64;
            let sinr_db = channel::linear_to_db(signal / (noise + interference));
            samples.push(SinrSample {
                flow: p.flow,
                device: p.device,
                direction: p.direction,
                sinr_db,
            });
            let per = mcs::per_from_sinr(sinr_db, &self.table, p.mcs, p.bytes);
            let success = self.rng_per.gen::<f64>() >= per;
            let target = self.cfg.radio.target_bler;
            let link = match p.flow {
                Flow::Urllc => &mut self.urllc_links[p.device][serving],
                Flow::Ai => &mut self.ai_links[p.device][serving],
            };
            link.record_sinr(p.direction, sinr_db);
            link.link_adapt_feedback(p.direction, success, target);
            self.apply_outcome(p, success, t1, events);
        }
        samples
    }

    fn apply_outcome(
        &mut self,
        p: &PlannedTx,
        success: bool,
        tti_end_s: f64,
        events: &mut Vec<DeliveryEvent>,
    ) {
        let proc_s = self.cfg.radio.processing_offset_ttis as f64 * self.cfg.tti_seconds;
        let max_attempts = self.max_mac_attempts(p.flow, p.direction);
        let tti_seconds = self.cfg.tti_seconds;
        let ledger = &mut self.ledgers[p.flow.index()];
        let buf = match p.flow {
            Flow::Urllc => &mut self.urllc_buf[p.device][p.direction.index()],
            Flow::Ai => &mut self.ai_buf[p.device][p.direction.index()],
        };
        let idx = buf.queue.iter().position(|pk| pk.id == p.packet_id);
        let Some(idx) = idx else { return };

        if success {
            let packet = &mut buf.queue[idx];
            packet.remaining_bytes = packet.remaining_bytes.saturating_sub(p.bytes);
            if packet.remaining_bytes == 0 {
                let packet = buf.queue.remove(idx);
                let delivered_at = tti_end_s + proc_s;
                let late = packet.deadline_s.is_some_and(|d| delivered_at > d);
                ledger.delivered_bytes += packet.size_bytes;
                events.push(DeliveryEvent {
                    packet_id: packet.id,
                    flow: p.flow,
                    device: p.device,
                    direction: p.direction,
                    created_at_s: packet.created_at_s,
                    size_bytes: packet.size_bytes,
                    iteration_tag: packet.iteration_tag,
                    outcome: DeliveryOutcome::Delivered { at_s: delivered_at, late },
                });
            }
            return;
        }

        let attempts = p.attempts + 1;
        if attempts < max_attempts {
            // Retransmit after the one-TTI feedback delay.
            let current_tti = (tti_end_s / tti_seconds).round() as u64;
            buf.pending_retx = Some(TransportBlock {
                packet_id: p.packet_id,
                bytes: p.bytes,
                rb_len: p.rb_len,
                mcs: p.mcs,
                attempts,
                not_before_tti: current_tti + 1,
            });
            return;
        }

        // MAC budget exhausted.
        match buf.mode {
            RlcMode::Um => {
                let packet = buf.queue.remove(idx);
                ledger.lost_bytes += packet.size_bytes;
                events.push(DeliveryEvent {
                    packet_id: packet.id,
                    flow: p.flow,
                    device: p.device,
                    direction: p.direction,
                    created_at_s: packet.created_at_s,
                    size_bytes: packet.size_bytes,
                    iteration_tag: packet.iteration_tag,
                    outcome: DeliveryOutcome::Lost {
                        deadline_s: packet.deadline_s.unwrap_or(packet.created_at_s),
                    },
                });
            }
            RlcMode::Am { max_retx } => {
                let packet = &mut buf.queue[idx];
                packet.rlc_retx += 1;
                if packet.rlc_retx > max_retx {
                    let packet = buf.queue.remove(idx);
                    ledger.dropped_bytes += packet.size_bytes;
                    events.push(DeliveryEvent {
                        packet_id: packet.id,
                        flow: p.flow,
                        device: p.device,
                        direction: p.direction,
                        created_at_s: packet.created_at_s,
                        size_bytes: packet.size_bytes,
                        iteration_tag: packet.iteration_tag,
                        outcome: DeliveryOutcome::Dropped,
                    });
                }
                // Otherwise the packet stays; a fresh block is built next
                // opportunity with a reset MAC attempt counter.
            }
        }
    }

    fn pf_metric(&self, device: usize, dir: Direction) -> f64 {
        let mcs = self.table.select_mcs(
            self.sinr_estimate(Flow::Ai, device, dir),
            self.cfg.radio.target_bler,
        );
        let rate = self.table.entry(mcs).bits_per_rb() as f64;
        rate / self.pf_avg_bits[device][dir.index()].max(1e-9)
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockPlan {
    packet_id: u64,
    bytes: u64,
    rb_len: u32,
    mcs: McsIndex,
    attempts: u32,
}

fn schedulable_tti(created_at_s: f64, tti_s: f64) -> u64 {
    ((created_at_s / tti_s) - 1e-9).ceil().max(0.0) as u64
}

/// Splits a ring allocation into at most two linear segments.
fn ring_segments(start: u32, len: u32, ring: u32) -> [(u32, u32); 2] {
    let start = start % ring;
    if start + len <= ring {
        [(start, len), (0, 0)]
    } else {
        [(start, ring - start), (0, len - (ring - start))]
    }
}

/// Overlap of two allocations on a ring of `ring` resource blocks.
fn ring_overlap(a_start: u32, a_len: u32, b_start: u32, b_len: u32, ring: u32) -> u32 {
    let mut total = 0;
    for (s1, l1) in ring_segments(a_start, a_len, ring) {
        if l1 == 0 {
            continue;
        }
        for (s2, l2) in ring_segments(b_start, b_len, ring) {
            if l2 == 0 {
                continue;
            }
            let lo = s1.max(s2);
            let hi = (s1 + l1).min(s2 + l2);
            total += hi.saturating_sub(lo);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::desk_scenario;

    fn single_urllc_cfg(seed: u64) -> ScenarioConfig {
        let mut cfg = desk_scenario(seed);
        cfg.urllc_devices.truncate(1);
        cfg.urllc_devices[0].initial_position = [10.0, 12.0, 1.5];
        cfg.ai_device_count = 1;
        cfg.required_updates = 1;
        cfg
    }

    #[test]
    fn clean_dl_packet_arrives_one_tti_plus_processing_after_scheduling() {
        let cfg = single_urllc_cfg(11);
        let mut engine = Engine::new(&cfg, 11);
        let tti = cfg.tti_seconds;
        let proc = cfg.radio.processing_offset_ttis as f64 * tti;
        let mut checked = 0;
        for _ in 0..100 {
            for ev in engine.step_tti().events {
                if ev.direction == Direction::Dl && ev.flow == Flow::Urllc {
                    let DeliveryOutcome::Delivered { at_s, late } = ev.outcome else {
                        panic!("clean channel must deliver, got {:?}", ev.outcome);
                    };
                    assert!(!late);
                    // Hand trace: schedulable TTI ends one TTI after its
                    // start, plus the fixed processing offset.
                    let sched = schedulable_tti(ev.created_at_s, tti);
                    let expected = (sched + 1) as f64 * tti + proc;
                    assert!((at_s - expected).abs() < 1e-9, "at {} expected {}", at_s, expected);
                    checked += 1;
                }
            }
        }
        assert!(checked > 5, "expected several DL deliveries, saw {checked}");
    }

    #[test]
    fn urllc_scheduled_before_ai_in_contended_tti() {
        let mut cfg = desk_scenario(3);
        cfg.ai_device_count = 4;
        let mut engine = Engine::new(&cfg, 3);
        // Saturate every cell's DL with AI traffic.
        for dev in 0..engine.ai_count() {
            engine.enqueue_ai(dev, Direction::Dl, 0.0, 0);
        }
        let mut saw_contention = false;
        for _ in 0..40 {
            let report = engine.step_tti();
            for (gnb, per_flow) in report.rb_allocated.iter().enumerate() {
                let urllc = per_flow[Flow::Urllc.index()][Direction::Dl.index()];
                let ai = per_flow[Flow::Ai.index()][Direction::Dl.index()];
                assert!(
                    urllc + ai <= engine.rb_budget(),
                    "cell {gnb} over budget: {urllc}+{ai}"
                );
                if urllc > 0 && ai > 0 {
                    // AI only ever gets what URLLC left over.
                    assert_eq!(urllc + ai, engine.rb_budget());
                    saw_contention = true;
                }
            }
        }
        assert!(saw_contention, "test never exercised a contended TTI");
    }

    #[test]
    fn hopeless_channel_loses_or_expires_urllc_packets() {
        let mut cfg = single_urllc_cfg(5);
        cfg.ul_tx_power_w = 1e-15;
        cfg.dl_tx_power_w = 1e-15;
        let mut engine = Engine::new(&cfg, 5);
        let mut terminal = 0;
        for _ in 0..200 {
            for ev in engine.step_tti().events {
                match ev.outcome {
                    DeliveryOutcome::Lost { deadline_s } | DeliveryOutcome::Expired { deadline_s } => {
                        assert!(deadline_s > ev.created_at_s);
                        terminal += 1;
                    }
                    DeliveryOutcome::Delivered { .. } => panic!("nothing should get through"),
                    DeliveryOutcome::Dropped => {}
                }
            }
        }
        assert!(terminal > 10, "expected losses, saw {terminal}");
    }

    #[test]
    fn slicing_caps_urllc_and_ai_shares_every_tti() {
        let mut cfg = desk_scenario(9);
        cfg.slicing_fraction = 0.25;
        let mut engine = Engine::new(&cfg, 9);
        for dev in 0..engine.ai_count() {
            engine.enqueue_ai(dev, Direction::Dl, 0.0, 0);
            engine.enqueue_ai(dev, Direction::Ul, 0.0, 0);
        }
        let budget = engine.rb_budget();
        let urllc_cap = (0.25 * budget as f64).floor() as u32;
        for _ in 0..60 {
            let report = engine.step_tti();
            for per_flow in &report.rb_allocated {
                for d in 0..2 {
                    assert!(per_flow[Flow::Urllc.index()][d] <= urllc_cap);
                    assert!(per_flow[Flow::Ai.index()][d] <= budget - urllc_cap);
                }
            }
        }
    }

    #[test]
    fn bytes_are_conserved_per_flow() {
        let mut cfg = desk_scenario(17);
        cfg.ai_device_count = 3;
        cfg.ai_message_bytes = 40_000;
        let mut engine = Engine::new(&cfg, 17);
        for dev in 0..3 {
            engine.enqueue_ai(dev, Direction::Dl, 0.0, 0);
            engine.enqueue_ai(dev, Direction::Ul, 0.002, 0);
        }
        for _ in 0..600 {
            engine.step_tti();
        }
        for flow in [Flow::Urllc, Flow::Ai] {
            let ledger = engine.ledger(flow);
            let queued = engine.queued_original_bytes(flow);
            // Every generated packet is delivered, lost, expired, dropped,
            // or still sitting in a queue.
            let accounted = ledger.delivered_bytes
                + ledger.lost_bytes
                + ledger.expired_bytes
                + ledger.dropped_bytes
                + queued;
            assert_eq!(
                accounted, ledger.generated_bytes,
                "{flow:?}: accounted {accounted} != generated {}",
                ledger.generated_bytes
            );
        }
    }

    #[test]
    fn identical_seeds_replay_identical_traces() {
        let cfg = desk_scenario(23);
        let run = |seed| {
            let mut engine = Engine::new(&cfg, seed);
            engine.enqueue_ai(0, Direction::Dl, 0.0, 0);
            let mut log = Vec::new();
            for _ in 0..120 {
                let r = engine.step_tti();
                for s in r.sinr_samples {
                    log.push((s.device, s.direction.index(), s.sinr_db.to_bits()));
                }
                for e in r.events {
                    log.push((e.device, e.packet_id as usize, 0));
                }
            }
            log
        };
        assert_eq!(run(23), run(23));
        assert_ne!(run(23), run(24));
    }
}
