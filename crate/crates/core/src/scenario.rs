//! Experiment configuration: parsing, validation, and the deterministic RNG
//! hierarchy.
//!
//! A [`ScenarioConfig`] fully describes one experiment: deployment geometry,
//! traffic profiles, radio numerology, the learning task, and the agent
//! hyperparameters. It is immutable after [`load_scenario`] and can be shared
//! freely across concurrent runs. All randomness is derived from a single
//! root seed through labeled child streams (see [`derive_rng`]) so that a
//! change in one subsystem's draw count does not perturb any other.

use std::fmt;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Errors produced while loading or validating a scenario file.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: field `{field}`: {message}")]
    Validation { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field, message: message.into() }
}

/// A point in hall coordinates, meters.
pub type Point3 = [f64; 3];

/// Transmission direction of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "ul")]
    Ul,
    #[serde(rename = "dl")]
    Dl,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Ul, Direction::Dl];

    pub fn index(self) -> usize {
        match self {
            Direction::Ul => 0,
            Direction::Dl => 1,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Ul => write!(f, "ul"),
            Direction::Dl => write!(f, "dl"),
        }
    }
}

/// A per-direction pair of values, e.g. delay bounds or survival times.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerDirection<T> {
    pub ul: T,
    pub dl: T,
}

impl<T: Copy> PerDirection<T> {
    pub fn get(&self, dir: Direction) -> T {
        match dir {
            Direction::Ul => self.ul,
            Direction::Dl => self.dl,
        }
    }
}

/// Hall bounding box; devices and gNBs must sit inside it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hall {
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
}

impl Default for Hall {
    fn default() -> Self {
        // Small factory hall, four ceiling-mounted gNBs.
        Hall { x_m: 40.0, y_m: 40.0, z_m: 10.0 }
    }
}

impl Hall {
    pub fn contains(&self, p: Point3) -> bool {
        (0.0..=self.x_m).contains(&p[0])
            && (0.0..=self.y_m).contains(&p[1])
            && (0.0..=self.z_m).contains(&p[2])
    }
}

fn default_gnb_positions() -> Vec<Point3> {
    // 20 m inter-site distance at 8 m height.
    vec![[10.0, 10.0, 8.0], [10.0, 30.0, 8.0], [30.0, 10.0, 8.0], [30.0, 30.0, 8.0]]
}

/// Movement policy for URLLC devices: 1D oscillation within a short span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mobility {
    /// Speed along the movement axis, m/s.
    pub speed_mps: f64,
    /// Direction policy for the movement axis.
    pub direction: DirectionPolicy,
    /// Total span of the oscillation, meters.
    #[serde(default = "default_span")]
    pub span_m: f64,
}

fn default_span() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionPolicy {
    /// Fixed azimuth in radians.
    Fixed { angle_rad: f64 },
    /// Azimuth drawn once per run from the topology stream.
    RandomPerSeed,
}

/// Traffic profile of one URLLC device.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UrllcProfile {
    pub initial_position: Point3,
    pub mobility: Mobility,
    pub packet_period_s: f64,
    pub ul_bytes: u32,
    pub dl_bytes: u32,
}

/// Reward weighting of Eq.-style availability vs. training-delay terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    /// Relative weight of the URLLC term, in [0, 1].
    pub upsilon: f64,
    /// Exponential sharpness of the availability-gap penalty, > 0.
    pub zeta: f64,
}

/// Maximum MAC-layer transmission attempts per transport block.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxMacTx {
    pub urllc_ul: u32,
    pub urllc_dl: u32,
    pub ai_ul: u32,
    pub ai_dl: u32,
}

impl Default for MaxMacTx {
    fn default() -> Self {
        MaxMacTx { urllc_ul: 3, urllc_dl: 2, ai_ul: 10, ai_dl: 10 }
    }
}

/// Clutter geometry of the dense-clutter indoor factory model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clutter {
    /// Clutter density, fraction in (0, 1).
    pub r: f64,
    /// Typical clutter height, meters.
    pub h_m: f64,
    /// Typical clutter size, meters.
    pub d_m: f64,
}

impl Default for Clutter {
    fn default() -> Self {
        Clutter { r: 0.6, h_m: 6.0, d_m: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowingSigma {
    pub los: f64,
    pub nlos: f64,
}

impl Default for ShadowingSigma {
    fn default() -> Self {
        ShadowingSigma { los: 4.3, nlos: 4.0 }
    }
}

/// Radio-layer knobs that rarely change between experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    pub carrier_ghz: f64,
    pub noise_figure_db: f64,
    /// Fixed combining gain standing in for the 2x2 antenna arrays, dB.
    pub combining_gain_db: f64,
    /// Resource blocks per TTI; `None` derives it from the bandwidth.
    pub rb_count: Option<u32>,
    /// Tx/rx processing offset added to each delivered transport block, TTIs.
    pub processing_offset_ttis: u32,
    /// Target block error rate for MCS selection.
    pub target_bler: f64,
    /// Smoothing factor of the proportional-fair served-rate average.
    pub pf_smoothing: f64,
    pub max_mac_tx: MaxMacTx,
    /// RLC AM retransmission budget for AI packets.
    pub max_rlc_retx_ai: u32,
    pub clutter: Clutter,
    pub device_height_m: f64,
    pub shadowing_sigma_db: ShadowingSigma,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            carrier_ghz: 2.6,
            noise_figure_db: 9.0,
            combining_gain_db: 3.0,
            rb_count: None,
            processing_offset_ttis: 1,
            target_bler: 0.1,
            pf_smoothing: 0.05,
            max_mac_tx: MaxMacTx::default(),
            max_rlc_retx_ai: 8,
            clutter: Clutter::default(),
            device_height_m: 1.5,
            shadowing_sigma_db: ShadowingSigma::default(),
        }
    }
}

impl RadioParams {
    /// Resource blocks per TTI. 40 MHz at 30 kHz subcarrier spacing maps to
    /// the standard 106 blocks; other bandwidths fall back to 360 kHz blocks.
    pub fn resource_blocks(&self, bandwidth_hz: f64) -> u32 {
        if let Some(n) = self.rb_count {
            return n;
        }
        if (bandwidth_hz - 40.0e6).abs() < 1.0 {
            106
        } else {
            ((bandwidth_hz / 360.0e3).floor() as u32).max(1)
        }
    }
}

/// Compute-delay model for the learning devices and the central node.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComputeParams {
    /// Median of the per-device lognormal local-training delay, seconds.
    pub device_median_s: f64,
    /// Lognormal sigma of the per-device delay.
    pub device_sigma_ln: f64,
    /// Constant server-side processing delay per iteration, seconds.
    pub server_s: f64,
}

impl Default for ComputeParams {
    fn default() -> Self {
        ComputeParams { device_median_s: 0.05, device_sigma_ln: 0.5, server_s: 0.01 }
    }
}

/// Synthetic learning task run by the distributed protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningParams {
    pub kind: TaskKind,
    pub dim: usize,
    /// Per-device gradient-noise variance bound.
    pub noise_sigma2: f64,
    pub learning_rate: f64,
    /// Convergence threshold on the objective gap.
    pub epsilon: f64,
    /// Scale of the per-device local-minimizer offsets.
    pub offset_scale: f64,
    /// Local epochs per iteration (federated averaging only).
    pub local_epochs: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Quadratic,
    NonConvex,
    FlAveraging,
}

impl Default for LearningParams {
    fn default() -> Self {
        LearningParams {
            kind: TaskKind::Quadratic,
            dim: 8,
            noise_sigma2: 1.0,
            learning_rate: 0.1,
            epsilon: 1e-3,
            offset_scale: 1.0,
            local_epochs: 1,
        }
    }
}

/// Temperature handling of the SAC learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemperatureMode {
    Fixed { psi: f64 },
    Auto,
}

/// Replay sampling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayMode {
    Prioritized,
    Uniform,
}

/// Hyperparameters of the SAC device-selection agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentHyperparams {
    /// Discount factor.
    pub discount: f64,
    /// Minibatch size; training fires every this many environment iterations.
    pub minibatch: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    /// Prioritized-replay exponent applied to TD-error priorities.
    pub priority_alpha: f64,
    /// Importance-correction exponent for prioritized sampling.
    pub priority_beta: f64,
    pub learning_rate: f64,
    /// Soft-update rate of the target networks.
    pub soft_update: f64,
    pub temperature: TemperatureMode,
    /// Minimum buffer fill before any training step.
    pub min_buffer: usize,
    pub replay_mode: ReplayMode,
}

impl Default for AgentHyperparams {
    fn default() -> Self {
        AgentHyperparams {
            discount: 0.1,
            minibatch: 32,
            replay_capacity: 20_000,
            hidden: vec![128, 128],
            priority_alpha: 0.6,
            priority_beta: 0.4,
            learning_rate: 3e-4,
            soft_update: 0.002,
            temperature: TemperatureMode::Auto,
            min_buffer: 1_000,
            replay_mode: ReplayMode::Prioritized,
        }
    }
}

/// Complete description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub rng_seed: u64,
    #[serde(default)]
    pub hall: Hall,
    #[serde(default = "default_gnb_positions")]
    pub gnb_positions: Vec<Point3>,
    pub urllc_devices: Vec<UrllcProfile>,
    /// Total number of learning devices, N.
    pub ai_device_count: usize,
    /// Local updates the central node waits for per iteration, n.
    pub required_updates: usize,
    pub bandwidth_hz: f64,
    pub tti_seconds: f64,
    pub ul_tx_power_w: f64,
    pub dl_tx_power_w: f64,
    /// Maximum permissible delay of one learning iteration, seconds.
    pub t_max_seconds: f64,
    /// Iterations per episode, K.
    pub episode_length: usize,
    pub reward_weights: RewardWeights,
    /// Availability requirement shared by every URLLC device.
    pub availability_req: f64,
    /// Sensitivity of the availability requirement.
    pub sensitivity: f64,
    pub survival_time_s: PerDirection<f64>,
    pub delay_bounds_s: PerDirection<f64>,
    /// Size of one global/local model message.
    pub ai_message_bytes: u64,
    /// Fraction of resources reserved for URLLC; 0 means a shared pool.
    #[serde(default)]
    pub slicing_fraction: f64,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub compute: ComputeParams,
    #[serde(default)]
    pub learning: LearningParams,
    #[serde(default)]
    pub agent: AgentHyperparams,
}

impl ScenarioConfig {
    /// Checks every structural invariant, naming the offending field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.gnb_positions.is_empty() {
            return Err(invalid("gnb_positions", "at least one gNB required"));
        }
        for (i, p) in self.gnb_positions.iter().enumerate() {
            if !self.hall.contains(*p) {
                return Err(invalid("gnb_positions", format!("gNB {i} outside hall bounds")));
            }
        }
        for (i, d) in self.urllc_devices.iter().enumerate() {
            if !self.hall.contains(d.initial_position) {
                return Err(invalid("urllc_devices", format!("device {i} outside hall bounds")));
            }
            if d.packet_period_s <= 0.0 {
                return Err(invalid("urllc_devices", format!("device {i}: period must be > 0")));
            }
            if d.ul_bytes == 0 || d.dl_bytes == 0 {
                return Err(invalid("urllc_devices", format!("device {i}: byte sizes must be > 0")));
            }
            if d.mobility.speed_mps < 0.0 || d.mobility.span_m < 0.0 {
                return Err(invalid("urllc_devices", format!("device {i}: negative mobility")));
            }
        }
        if self.ai_device_count == 0 {
            return Err(invalid("ai_device_count", "N must be >= 1"));
        }
        if self.required_updates == 0 {
            return Err(invalid("required_updates", "n must be >= 1"));
        }
        if self.required_updates > self.ai_device_count {
            return Err(invalid("required_updates", "n <= N violated"));
        }
        if self.bandwidth_hz <= 0.0 {
            return Err(invalid("bandwidth_hz", "must be > 0"));
        }
        if self.tti_seconds <= 0.0 {
            return Err(invalid("tti_seconds", "must be > 0"));
        }
        if self.ul_tx_power_w <= 0.0 || self.dl_tx_power_w <= 0.0 {
            return Err(invalid("ul_tx_power_w", "tx powers must be > 0"));
        }
        if self.t_max_seconds <= 0.0 {
            return Err(invalid("t_max_seconds", "must be > 0"));
        }
        if self.episode_length == 0 {
            return Err(invalid("episode_length", "K must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.reward_weights.upsilon) {
            return Err(invalid("reward_weights", "upsilon must be in [0, 1]"));
        }
        if self.reward_weights.zeta <= 0.0 {
            return Err(invalid("reward_weights", "zeta must be > 0"));
        }
        if !(self.availability_req > 0.0 && self.availability_req <= 1.0) {
            return Err(invalid("availability_req", "must be in (0, 1]"));
        }
        if !(self.sensitivity > 0.0 && self.sensitivity < 1.0) {
            return Err(invalid("sensitivity", "must be in (0, 1)"));
        }
        for dir in Direction::BOTH {
            if self.survival_time_s.get(dir) < 0.0 {
                return Err(invalid("survival_time_s", "must be >= 0"));
            }
            if self.delay_bounds_s.get(dir) <= 0.0 {
                return Err(invalid("delay_bounds_s", "per-direction delay bound must be > 0"));
            }
        }
        if self.ai_message_bytes == 0 {
            return Err(invalid("ai_message_bytes", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.slicing_fraction) {
            return Err(invalid("slicing_fraction", "must be in [0, 1]"));
        }
        if !(self.radio.clutter.r > 0.0 && self.radio.clutter.r < 1.0) {
            return Err(invalid("radio", "clutter density must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.agent.discount) {
            return Err(invalid("agent", "discount must be in [0, 1]"));
        }
        if !(self.agent.soft_update > 0.0 && self.agent.soft_update <= 1.0) {
            return Err(invalid("agent", "soft_update must be in (0, 1]"));
        }
        if self.agent.replay_capacity == 0 || self.agent.minibatch == 0 {
            return Err(invalid("agent", "capacities must be positive"));
        }
        if let TemperatureMode::Fixed { psi } = self.agent.temperature {
            if psi <= 0.0 {
                return Err(invalid("agent", "fixed temperature must be > 0"));
            }
        }
        match self.learning.kind {
            TaskKind::Quadratic | TaskKind::NonConvex | TaskKind::FlAveraging => {}
        }
        if self.learning.dim == 0 {
            return Err(invalid("learning", "dim must be >= 1"));
        }
        if self.learning.local_epochs == 0 {
            return Err(invalid("learning", "local_epochs must be >= 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Loads and validates a scenario file (JSON).
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    ScenarioConfig::from_json(&text)
}

/// Derives a deterministic, label-separated child stream from a root seed.
///
/// The same `(seed, label)` pair always yields the identical stream; distinct
/// labels (or seeds) yield unrelated streams. Labels in use include
/// `"topology"`, `"channel"`, `"fading"`, `"traffic"`, `"per"`, `"compute"`,
/// `"agent-init"`, `"exploration"`, `"replay-sampling"`, and
/// `"baseline-selection"`.
pub fn derive_stream(seed: u64, label: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}

/// Derives the labeled RNG stream for a loaded scenario.
pub fn derive_rng(config: &ScenarioConfig, label: &str) -> ChaCha12Rng {
    derive_stream(config.rng_seed, label)
}

/// Desk-scale default scenario: 4 gNBs, 10 URLLC devices at preset positions,
/// 12 learning devices with n = 4.
pub fn desk_scenario(seed: u64) -> ScenarioConfig {
    let urllc_positions: [[f64; 2]; 10] = [
        [6.0, 6.0],
        [6.0, 34.0],
        [34.0, 6.0],
        [34.0, 34.0],
        [20.0, 6.0],
        [20.0, 34.0],
        [6.0, 20.0],
        [34.0, 20.0],
        [14.0, 20.0],
        [26.0, 20.0],
    ];
    let urllc_devices = urllc_positions
        .iter()
        .map(|&[x, y]| UrllcProfile {
            initial_position: [x, y, 1.5],
            mobility: Mobility {
                speed_mps: 30.0 / 3.6,
                direction: DirectionPolicy::RandomPerSeed,
                span_m: 2.0,
            },
            packet_period_s: 0.006,
            ul_bytes: 64,
            dl_bytes: 80,
        })
        .collect();
    ScenarioConfig {
        rng_seed: seed,
        hall: Hall::default(),
        gnb_positions: default_gnb_positions(),
        urllc_devices,
        ai_device_count: 12,
        required_updates: 4,
        bandwidth_hz: 40.0e6,
        tti_seconds: 0.5e-3,
        ul_tx_power_w: 0.2,
        dl_tx_power_w: 0.5,
        t_max_seconds: 10.0,
        episode_length: 20,
        reward_weights: RewardWeights { upsilon: 0.5, zeta: 100.0 },
        availability_req: 0.99,
        sensitivity: 0.1,
        survival_time_s: PerDirection { ul: 0.006, dl: 0.006 },
        delay_bounds_s: PerDirection { ul: 0.006, dl: 0.004 },
        ai_message_bytes: 2_000_000,
        slicing_fraction: 0.0,
        radio: RadioParams::default(),
        compute: ComputeParams::default(),
        learning: LearningParams::default(),
        agent: AgentHyperparams::default(),
    }
}
