//! Experiment orchestration: baseline modes, multi-seed execution, result
//! aggregation, and plot-ready CSV emission.
//!
//! A plan runs one mode across seeds. Baseline modes drive the radio
//! environment with fixed random selections; the agent modes train or
//! evaluate the SAC learner. Every run is an episode of the configured
//! length; the bootstrap warmup iteration that produces the first
//! observation is excluded from all reported statistics, and availability is
//! measured from the first action to the episode end.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as index_sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::env::{feed_availability_events, RadioEnv, StateNorm};
use crate::agent::sac::{Checkpoint, SacLearner};
use crate::agent::{map_action, EpisodeMode, SelectionEnv};
use crate::distlearn::bounds::{
    kmin_fl_proportional, kmin_nonconvex, kmin_strongly_convex, BoundsError,
    FlProportionalParams, NonConvexParams, StronglyConvexParams,
};
use crate::metrics::{nearest_rank, AvailabilityRecord};
use crate::ransim::{Engine, Flow};
use crate::scenario::{derive_stream, Direction, ScenarioConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("plan/config mismatch: {0}")]
    Plan(String),
    #[error("bounds error: {0}")]
    Bounds(#[from] BoundsError),
}

/// What to run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ExperimentMode {
    /// URLLC alone on the full band for a fixed duration (no AI traffic).
    SingleUrllc { duration_s: f64 },
    /// Random fixed-size selection of m devices every iteration.
    MixedServ { m: usize },
    /// Same as MixedServ with the resource split active (default 25%).
    Slicing { m: usize },
    /// Evaluate a trained policy greedily.
    AgentEval,
}

/// One experiment: a mode, the seeds to run it over, and where to write.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub mode: ExperimentMode,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentPlan {
    pub fn validate(&self, cfg: &ScenarioConfig) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Plan("at least one seed required".into()));
        }
        match self.mode {
            ExperimentMode::MixedServ { m } | ExperimentMode::Slicing { m } => {
                if m < cfg.required_updates || m > cfg.ai_device_count {
                    return Err(HarnessError::Plan(format!(
                        "m={m} outside [n={}, N={}]",
                        cfg.required_updates, cfg.ai_device_count
                    )));
                }
            }
            ExperimentMode::SingleUrllc { duration_s } => {
                if duration_s <= 0.0 {
                    return Err(HarnessError::Plan("duration must be > 0".into()));
                }
            }
            ExperimentMode::AgentEval => {}
        }
        Ok(())
    }
}

/// One availability sample: a device/direction over one run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AvailabilitySample {
    pub seed: u64,
    pub device: usize,
    pub direction: Direction,
    pub availability: f64,
}

/// One iteration's training delay.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DelaySample {
    pub seed: u64,
    pub iteration: usize,
    pub training_delay_s: f64,
    pub timed_out: bool,
}

/// One iteration's reward (agent and baseline modes).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RewardSample {
    pub seed: u64,
    pub iteration: usize,
    pub reward: f64,
}

/// Aggregated outputs of a plan.
#[derive(Debug, Clone, Default)]
pub struct ResultSet {
    pub availability: Vec<AvailabilitySample>,
    pub delays: Vec<DelaySample>,
    pub rewards: Vec<RewardSample>,
    /// Times each device was selected, across all recorded iterations.
    pub selection_counts: Vec<u64>,
    pub iterations_recorded: u64,
    /// Histogram of the number of selected devices per iteration.
    pub m_histogram: BTreeMap<usize, u64>,
}

impl ResultSet {
    fn merge(mut sets: Vec<ResultSet>) -> ResultSet {
        let mut out = ResultSet::default();
        for set in sets.iter_mut() {
            out.availability.append(&mut set.availability);
            out.delays.append(&mut set.delays);
            out.rewards.append(&mut set.rewards);
            if out.selection_counts.is_empty() {
                out.selection_counts = vec![0; set.selection_counts.len()];
            }
            for (a, b) in out.selection_counts.iter_mut().zip(&set.selection_counts) {
                *a += b;
            }
            out.iterations_recorded += set.iterations_recorded;
            for (&m, &c) in &set.m_histogram {
                *out.m_histogram.entry(m).or_insert(0) += c;
            }
        }
        out
    }

    pub fn delay_values(&self) -> Vec<f64> {
        self.delays.iter().map(|d| d.training_delay_s).collect()
    }

    pub fn availability_values(&self) -> Vec<f64> {
        self.availability.iter().map(|a| a.availability).collect()
    }
}

/// Runs the plan across its seeds and aggregates the results.
///
/// The agent-eval mode needs the trained learner; use [`run_agent_eval`]
/// directly or load a checkpoint through [`run_plan_with_checkpoint`].
pub fn run_plan(plan: &ExperimentPlan, cfg: &ScenarioConfig) -> Result<ResultSet, HarnessError> {
    plan.validate(cfg)?;
    match &plan.mode {
        ExperimentMode::SingleUrllc { duration_s } => {
            let sets: Vec<ResultSet> = plan
                .seeds
                .par_iter()
                .map(|&seed| run_single_urllc(cfg, seed, *duration_s))
                .collect();
            Ok(ResultSet::merge(sets))
        }
        ExperimentMode::MixedServ { m } => {
            let cfg = shared_pool_config(cfg);
            let m = *m;
            let sets: Vec<ResultSet> = plan
                .seeds
                .par_iter()
                .map(|&seed| run_baseline_episode(&cfg, seed, m))
                .collect();
            Ok(ResultSet::merge(sets))
        }
        ExperimentMode::Slicing { m } => {
            let cfg = slicing_config(cfg);
            let m = *m;
            let sets: Vec<ResultSet> = plan
                .seeds
                .par_iter()
                .map(|&seed| run_baseline_episode(&cfg, seed, m))
                .collect();
            Ok(ResultSet::merge(sets))
        }
        ExperimentMode::AgentEval => Err(HarnessError::Plan(
            "agent evaluation needs a checkpoint; use run_plan_with_checkpoint".into(),
        )),
    }
}

/// Runs the agent-eval mode from a checkpoint file.
pub fn run_plan_with_checkpoint(
    plan: &ExperimentPlan,
    cfg: &ScenarioConfig,
    checkpoint: &Path,
) -> Result<ResultSet, HarnessError> {
    plan.validate(cfg)?;
    let text = std::fs::read_to_string(checkpoint)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    Ok(run_agent_eval(cfg, &ckpt, &plan.seeds))
}

fn shared_pool_config(cfg: &ScenarioConfig) -> ScenarioConfig {
    let mut cfg = cfg.clone();
    cfg.slicing_fraction = 0.0;
    cfg
}

fn slicing_config(cfg: &ScenarioConfig) -> ScenarioConfig {
    let mut cfg = cfg.clone();
    if cfg.slicing_fraction <= 0.0 {
        cfg.slicing_fraction = 0.25;
    }
    cfg
}

/// URLLC alone: no AI traffic is ever generated; availability is estimated
/// over the full duration.
fn run_single_urllc(cfg: &ScenarioConfig, seed: u64, duration_s: f64) -> ResultSet {
    let mut cfg = cfg.clone();
    cfg.ai_device_count = cfg.ai_device_count.max(1);
    let mut engine = Engine::new(&cfg, seed);
    let mut records: Vec<[AvailabilityRecord; 2]> = (0..cfg.urllc_devices.len())
        .map(|i| {
            [
                AvailabilityRecord::new(i, Direction::Ul, cfg.survival_time_s.ul),
                AvailabilityRecord::new(i, Direction::Dl, cfg.survival_time_s.dl),
            ]
        })
        .collect();
    while engine.now_s() < duration_s {
        let report = engine.step_tti();
        feed_availability_events(&mut records, &report.events);
    }
    debug_assert_eq!(engine.ledger(Flow::Ai).generated_bytes, 0);
    let availability = records
        .iter()
        .enumerate()
        .flat_map(|(device, recs)| {
            [Direction::Ul, Direction::Dl].map(|dir| AvailabilitySample {
                seed,
                device,
                direction: dir,
                availability: crate::metrics::availability_estimate(
                    &recs[dir.index()],
                    0.0,
                    duration_s,
                )
                .unwrap_or(1.0),
            })
        })
        .collect();
    ResultSet {
        availability,
        selection_counts: vec![0; cfg.ai_device_count],
        ..ResultSet::default()
    }
}

/// One baseline episode: a fresh deployment, random m-subsets per iteration.
fn run_baseline_episode(cfg: &ScenarioConfig, seed: u64, m: usize) -> ResultSet {
    let mut env = RadioEnv::new(cfg, seed);
    let mut rng = derive_stream(seed, "baseline-selection");
    env.reset();
    let mut set = ResultSet {
        selection_counts: vec![0; cfg.ai_device_count],
        ..ResultSet::default()
    };
    for iteration in 0..cfg.episode_length {
        let chosen = index_sample(&mut rng, cfg.ai_device_count, m);
        let mut selection = vec![false; cfg.ai_device_count];
        for i in chosen {
            selection[i] = true;
        }
        let result = env.step(&selection);
        record_iteration(&mut set, seed, iteration, &selection, &result);
        if result.converged {
            break;
        }
    }
    finish_episode(&mut set, seed, &env);
    set
}

fn record_iteration(
    set: &mut ResultSet,
    seed: u64,
    iteration: usize,
    selection: &[bool],
    result: &crate::agent::StepResult,
) {
    let m_k = selection.iter().filter(|&&s| s).count();
    set.delays.push(DelaySample {
        seed,
        iteration,
        training_delay_s: result.training_delay_s,
        timed_out: false,
    });
    set.rewards.push(RewardSample { seed, iteration, reward: result.reward });
    for (count, &sel) in set.selection_counts.iter_mut().zip(selection) {
        if sel {
            *count += 1;
        }
    }
    *set.m_histogram.entry(m_k).or_insert(0) += 1;
    set.iterations_recorded += 1;
}

fn finish_episode(set: &mut ResultSet, seed: u64, env: &RadioEnv) {
    for (device, dirs) in env.episode_availability().iter().enumerate() {
        for dir in Direction::BOTH {
            set.availability.push(AvailabilitySample {
                seed,
                device,
                direction: dir,
                availability: dirs[dir.index()],
            });
        }
    }
}

/// Evaluates a trained policy greedily: one episode per seed.
pub fn run_agent_eval(cfg: &ScenarioConfig, ckpt: &Checkpoint, seeds: &[u64]) -> ResultSet {
    let sets: Vec<ResultSet> = seeds
        .par_iter()
        .map(|&seed| {
            let mut learner = SacLearner::from_checkpoint(ckpt.clone(), &cfg.agent, seed);
            let mut env = RadioEnv::new(cfg, seed);
            let mut set = ResultSet {
                selection_counts: vec![0; cfg.ai_device_count],
                ..ResultSet::default()
            };
            let mut state = env.reset();
            for iteration in 0..cfg.episode_length {
                let action = learner.act(&state, true);
                let selection = map_action(&action, cfg.required_updates);
                let result = env.step(&selection);
                record_iteration(&mut set, seed, iteration, &selection, &result);
                state = result.state;
                if result.converged {
                    break;
                }
            }
            finish_episode(&mut set, seed, &env);
            set
        })
        .collect();
    ResultSet::merge(sets)
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurveRow {
    pub episode: usize,
    pub env_iterations: u64,
    pub mean_reward: f64,
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
    pub psi: f64,
}

/// Trains the device-selection agent on the radio environment.
pub fn train_agent(
    cfg: &ScenarioConfig,
    train_seed: u64,
    episodes: usize,
) -> (SacLearner, Vec<CurveRow>) {
    let mut env = RadioEnv::new(cfg, train_seed);
    let mut learner = SacLearner::new(
        env.state_dim(),
        cfg.ai_device_count,
        &cfg.agent,
        train_seed,
    );
    let mut curve = Vec::with_capacity(episodes);
    let mut last = (0.0, 0.0, 0.0, 0.0, learner.psi());
    for episode in 0..episodes {
        let trace = crate::agent::run_episode(&mut env, &mut learner, EpisodeMode::Train);
        if let Some((_, report)) = trace.train_reports.last() {
            last = (
                report.critic1_loss,
                report.critic2_loss,
                report.actor_loss,
                report.entropy,
                report.psi,
            );
        }
        let mean_reward = if trace.rewards.is_empty() {
            0.0
        } else {
            trace.rewards.iter().sum::<f64>() / trace.rewards.len() as f64
        };
        curve.push(CurveRow {
            episode,
            env_iterations: learner.env_iterations(),
            mean_reward,
            critic1_loss: last.0,
            critic2_loss: last.1,
            actor_loss: last.2,
            entropy: last.3,
            psi: last.4,
        });
    }
    (learner, curve)
}

/// Five-number summary (min, q1, median, q3, max) by nearest rank.
pub fn five_number_summary(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    Some([
        sorted[0],
        nearest_rank(&sorted, 0.25)?,
        nearest_rank(&sorted, 0.50)?,
        nearest_rank(&sorted, 0.75)?,
        *sorted.last()?,
    ])
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    nearest_rank(&sorted, 0.50)
}

/// Empirical CDF points (x, F(x)) over the sorted samples.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len() as f64;
    sorted.iter().enumerate().map(|(i, &x)| (x, (i + 1) as f64 / n)).collect()
}

/// First-order stochastic dominance of `a` over `b`: F_a(x) <= F_b(x) at
/// every point of the union support.
pub fn stochastically_dominates(a: &[f64], b: &[f64]) -> bool {
    let cdf = |samples: &[f64], x: f64| {
        samples.iter().filter(|&&v| v <= x).count() as f64 / samples.len() as f64
    };
    a.iter().chain(b.iter()).all(|&x| cdf(a, x) <= cdf(b, x) + 1e-12)
}

/// Summary tables: CDF points, delay five-number summary, selection ratios,
/// and the m-histogram normalized to a PMF.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryTables {
    pub availability_cdf: Vec<(f64, f64)>,
    pub delay_five_number: Option<[f64; 5]>,
    pub selection_ratio: Vec<f64>,
    pub m_pmf: Vec<(usize, f64)>,
}

pub fn summarize(results: &ResultSet) -> SummaryTables {
    let total = results.iterations_recorded.max(1) as f64;
    SummaryTables {
        availability_cdf: empirical_cdf(&results.availability_values()),
        delay_five_number: five_number_summary(&results.delay_values()),
        selection_ratio: results
            .selection_counts
            .iter()
            .map(|&c| c as f64 / total)
            .collect(),
        m_pmf: results
            .m_histogram
            .iter()
            .map(|(&m, &c)| (m, c as f64 / results.iterations_recorded.max(1) as f64))
            .collect(),
    }
}

/// Run manifest: resolved config, seeds, and normalization constants.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub tool_version: &'static str,
    pub mode: &'a ExperimentMode,
    pub seeds: &'a [u64],
    pub config: &'a ScenarioConfig,
    pub state_norm: StateNorm,
}

/// Writes the full result layout into the plan's output directory.
pub fn write_results(
    plan: &ExperimentPlan,
    cfg: &ScenarioConfig,
    results: &ResultSet,
) -> Result<(), HarnessError> {
    let Some(dir) = &plan.out_dir else { return Ok(()) };
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        mode: &plan.mode,
        seeds: &plan.seeds,
        config: cfg,
        state_norm: StateNorm::from_config(cfg),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    let mut avail = String::from("seed,device,direction,availability\n");
    for s in &results.availability {
        avail.push_str(&format!("{},{},{},{}\n", s.seed, s.device, s.direction, s.availability));
    }
    std::fs::write(dir.join("availability.csv"), avail)?;

    let mut delays = String::from("seed,iteration,training_delay_s,timed_out\n");
    for d in &results.delays {
        delays.push_str(&format!(
            "{},{},{},{}\n",
            d.seed, d.iteration, d.training_delay_s, d.timed_out
        ));
    }
    std::fs::write(dir.join("delays.csv"), delays)?;

    let mut rewards = String::from("seed,iteration,reward\n");
    for r in &results.rewards {
        rewards.push_str(&format!("{},{},{}\n", r.seed, r.iteration, r.reward));
    }
    std::fs::write(dir.join("rewards.csv"), rewards)?;

    let summary = summarize(results);
    let mut ratio = String::from("device,selection_ratio\n");
    for (device, r) in summary.selection_ratio.iter().enumerate() {
        ratio.push_str(&format!("{device},{r}\n"));
    }
    std::fs::write(dir.join("selection_ratio.csv"), ratio)?;

    let mut pmf = String::from("m,probability\n");
    for (m, p) in &summary.m_pmf {
        pmf.push_str(&format!("{m},{p}\n"));
    }
    std::fs::write(dir.join("m_pmf.csv"), pmf)?;

    let mut cdf = String::from("availability,cumulative_probability\n");
    for (x, p) in &summary.availability_cdf {
        cdf.push_str(&format!("{x},{p}\n"));
    }
    std::fs::write(dir.join("availability_cdf.csv"), cdf)?;

    let mut file = std::fs::File::create(dir.join("summary.csv"))?;
    writeln!(file, "metric,min,q1,median,q3,max")?;
    if let Some([min, q1, med, q3, max]) = summary.delay_five_number {
        writeln!(file, "training_delay_s,{min},{q1},{med},{q3},{max}")?;
    }
    Ok(())
}

/// Writes the training curve CSV.
pub fn write_training_curve(path: &Path, curve: &[CurveRow]) -> Result<(), HarnessError> {
    let mut text = String::from(
        "episode,env_iterations,mean_reward,critic1_loss,critic2_loss,actor_loss,entropy,psi\n",
    );
    for row in curve {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.episode,
            row.env_iterations,
            row.mean_reward,
            row.critic1_loss,
            row.critic2_loss,
            row.actor_loss,
            row.entropy,
            row.psi
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Saves a learner checkpoint as versioned JSON.
pub fn save_checkpoint(path: &Path, learner: &SacLearner) -> Result<(), HarnessError> {
    std::fs::write(path, serde_json::to_string(&learner.checkpoint())?)?;
    Ok(())
}

/// Which analytic regime a bounds sweep addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundRegime {
    StronglyConvex,
    NonConvex,
    FlProportional,
}

/// Parameter sweep specification: name plus inclusive lo..hi by step.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub param: String,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Sweep {
    pub fn parse(text: &str) -> Result<Sweep, HarnessError> {
        let (param, range) = text
            .split_once('=')
            .ok_or_else(|| HarnessError::Plan(format!("sweep `{text}` is not param=lo:hi:step")))?;
        let parts: Vec<&str> = range.split(':').collect();
        if parts.len() != 3 {
            return Err(HarnessError::Plan(format!("sweep `{text}` is not param=lo:hi:step")));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| HarnessError::Plan(format!("bad number `{s}` in sweep")))
        };
        let sweep = Sweep {
            param: param.to_string(),
            lo: parse(parts[0])?,
            hi: parse(parts[1])?,
            step: parse(parts[2])?,
        };
        if sweep.step <= 0.0 || sweep.hi < sweep.lo {
            return Err(HarnessError::Plan("sweep needs lo <= hi and step > 0".into()));
        }
        Ok(sweep)
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut v = self.lo;
        while v <= self.hi + 1e-12 {
            out.push(v);
            v += self.step;
        }
        out
    }
}

/// Default bound parameters, overridable per sweep point.
#[derive(Debug, Clone)]
pub struct BoundDefaults {
    pub n: f64,
    pub epsilon: f64,
    pub w_a: f64,
    pub z_a: f64,
    pub base: f64,
    pub w_b: f64,
    pub z_b: f64,
    pub local_epochs: f64,
    pub g2: f64,
    pub sigma2: f64,
    pub device_count: f64,
}

impl Default for BoundDefaults {
    fn default() -> Self {
        BoundDefaults {
            n: 15.0,
            epsilon: 0.1,
            w_a: 1.0,
            z_a: 0.05,
            base: 2.0,
            w_b: 10.0,
            z_b: 0.05,
            local_epochs: 1.0,
            g2: 1.0,
            sigma2: 1.0,
            device_count: 50.0,
        }
    }
}

/// Sweeps one parameter of the selected regime; returns (value, bound) rows.
pub fn bounds_sweep(
    regime: BoundRegime,
    defaults: &BoundDefaults,
    sweep: &Sweep,
) -> Result<Vec<(f64, f64)>, HarnessError> {
    let mut rows = Vec::new();
    for v in sweep.values() {
        let mut d = defaults.clone();
        match sweep.param.as_str() {
            "n" => d.n = v,
            "epsilon" => d.epsilon = v,
            "w_a" => d.w_a = v,
            "z_a" => d.z_a = v,
            "b" | "base" => d.base = v,
            "w_b" => d.w_b = v,
            "z_b" => d.z_b = v,
            "e" | "local_epochs" => d.local_epochs = v,
            "g2" => d.g2 = v,
            "sigma2" => d.sigma2 = v,
            "device_count" => d.device_count = v,
            other => {
                return Err(HarnessError::Plan(format!("unknown sweep parameter `{other}`")))
            }
        }
        let value = match regime {
            BoundRegime::StronglyConvex => kmin_strongly_convex(&StronglyConvexParams {
                w_a: d.w_a,
                z_a: d.z_a,
                base: d.base,
                n: d.n,
                epsilon: d.epsilon,
            })?,
            BoundRegime::NonConvex => kmin_nonconvex(&NonConvexParams {
                w_b: d.w_b,
                z_b: d.z_b,
                n: d.n,
                epsilon: d.epsilon,
            })?,
            BoundRegime::FlProportional => kmin_fl_proportional(&FlProportionalParams {
                epsilon: d.epsilon,
                local_epochs: d.local_epochs,
                g2: d.g2,
                sigma2: d.sigma2,
                device_count: d.device_count,
                n: d.n,
            })?,
        };
        rows.push((v, value));
    }
    Ok(rows)
}

/// Quick oracle suite behind the `selftest` CLI command: evaluates a
/// handful of closed-form reference values and cross-checks against brute
/// force. Returns one (name, result) row per check.
pub fn selftest() -> Vec<(&'static str, Result<(), String>)> {
    use crate::agent::compute_reward;
    use crate::channel::{self, LinkGeometry};
    use crate::metrics::{self, PacketOutcome};
    use crate::scenario::RewardWeights;
    use rand::Rng;

    let mut checks: Vec<(&'static str, Result<(), String>)> = Vec::new();
    let expect = |name: &'static str, got: f64, want: f64, tol: f64| {
        if (got - want).abs() <= tol {
            (name, Ok(()))
        } else {
            (name, Err(format!("got {got}, want {want} (tol {tol})")))
        }
    };

    let geom = LinkGeometry {
        d_2d: 10.0,
        d_3d: 10.0,
        f_c: 2.6,
        h_gnb: 8.0,
        h_device: 1.5,
        h_clut: 6.0,
        d_clut: 2.0,
        r_clut: 0.6,
    };
    checks.push(expect(
        "path_loss_los(10 m, 2.6 GHz) = 61.22 dB",
        channel::path_loss_los(&geom).unwrap_or(f64::NAN),
        61.22,
        0.01,
    ));
    checks.push(expect(
        "path_loss_nlos(10 m, 2.6 GHz) = 63.83 dB",
        channel::path_loss_nlos(&geom).unwrap_or(f64::NAN),
        63.83,
        0.01,
    ));
    checks.push(expect(
        "los_probability(10 m) = 0.0419",
        channel::los_probability(&geom).unwrap_or(f64::NAN),
        0.0419,
        1e-3,
    ));

    // Ten-millisecond outage with a six-millisecond survival time.
    let mut rec = AvailabilityRecord::new(0, Direction::Dl, 0.006);
    let hand = (|| -> Result<f64, String> {
        rec.update(PacketOutcome::Failed { deadline: 0.020 }).map_err(|e| e.to_string())?;
        rec.update(PacketOutcome::OnTime { at: 0.030 }).map_err(|e| e.to_string())?;
        metrics::availability_estimate(&rec, 0.0, 0.1).map_err(|e| e.to_string())
    })();
    checks.push(match hand {
        Ok(v) => expect("availability hand case = 0.96", v, 0.96, 1e-12),
        Err(e) => ("availability hand case = 0.96", Err(e)),
    });

    // Order-statistic training delay equals subset brute force.
    let mut rng = derive_stream(424_242, "selftest");
    let mut delay_ok = Ok(());
    'outer: for _ in 0..200 {
        let m = rng.gen_range(1..=8usize);
        let n = rng.gen_range(1..=m);
        let totals: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() * 10.0).collect();
        let fast = metrics::training_delay(&totals, 0.5, n, 10.0).unwrap();
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
        let slow = (best + 0.5).min(10.0);
        if (fast - slow).abs() > 1e-12 {
            delay_ok = Err(format!("order statistic {fast} != brute force {slow}"));
            break 'outer;
        }
    }
    checks.push(("training delay equals subset brute force (200 random cases)", delay_ok));

    // Selection mapping always returns at least n devices.
    let mut map_ok = Ok(());
    for _ in 0..2000 {
        let len = rng.gen_range(1..=16usize);
        let n = rng.gen_range(1..=len);
        let action: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let count = map_action(&action, n).iter().filter(|&&s| s).count();
        if count < n {
            map_ok = Err(format!("selected {count} < n={n}"));
            break;
        }
    }
    checks.push(("action mapping selects at least n (2000 random cases)", map_ok));

    let w = RewardWeights { upsilon: 0.5, zeta: 100.0 };
    checks.push(expect(
        "reward(gap=-0.01, d=5 s) = 0.4339",
        compute_reward(-0.01, 5.0, 10.0, &w),
        0.4339,
        1e-4,
    ));
    checks.push(expect("reward(ok, d=T_max) = 0.5", compute_reward(0.0, 10.0, 10.0, &w), 0.5, 1e-12));
    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::desk_scenario;

    fn tiny_cfg(seed: u64) -> ScenarioConfig {
        let mut cfg = desk_scenario(seed);
        cfg.urllc_devices.truncate(3);
        cfg.ai_device_count = 5;
        cfg.required_updates = 2;
        cfg.ai_message_bytes = 50_000;
        cfg.t_max_seconds = 2.0;
        cfg.episode_length = 3;
        cfg
    }

    #[test]
    fn single_urllc_generates_no_ai_traffic() {
        let cfg = tiny_cfg(1);
        let plan = ExperimentPlan {
            mode: ExperimentMode::SingleUrllc { duration_s: 0.5 },
            seeds: vec![1, 2],
            out_dir: None,
        };
        let results = run_plan(&plan, &cfg).unwrap();
        assert_eq!(results.availability.len(), 2 * 3 * 2);
        assert!(results.delays.is_empty());
    }

    #[test]
    fn mixed_serv_selects_exactly_m_every_iteration() {
        let cfg = tiny_cfg(2);
        let plan = ExperimentPlan {
            mode: ExperimentMode::MixedServ { m: 3 },
            seeds: vec![5],
            out_dir: None,
        };
        let results = run_plan(&plan, &cfg).unwrap();
        assert!(results.iterations_recorded > 0);
        assert_eq!(results.m_histogram.len(), 1);
        assert_eq!(*results.m_histogram.get(&3).unwrap(), results.iterations_recorded);
    }

    #[test]
    fn plan_rejects_m_outside_range() {
        let cfg = tiny_cfg(3);
        let plan = ExperimentPlan {
            mode: ExperimentMode::MixedServ { m: 6 },
            seeds: vec![1],
            out_dir: None,
        };
        assert!(matches!(run_plan(&plan, &cfg), Err(HarnessError::Plan(_))));
        let plan = ExperimentPlan {
            mode: ExperimentMode::MixedServ { m: 1 },
            seeds: vec![1],
            out_dir: None,
        };
        assert!(matches!(run_plan(&plan, &cfg), Err(HarnessError::Plan(_))));
    }

    #[test]
    fn five_number_summary_of_small_sample() {
        let summary = five_number_summary(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(summary, [1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn pmf_sums_to_one() {
        let cfg = tiny_cfg(4);
        let plan = ExperimentPlan {
            mode: ExperimentMode::MixedServ { m: 2 },
            seeds: vec![1, 2, 3],
            out_dir: None,
        };
        let results = run_plan(&plan, &cfg).unwrap();
        let total: f64 = summarize(&results).m_pmf.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn always_selected_device_has_unit_ratio() {
        let mut set = ResultSet {
            selection_counts: vec![4, 0],
            iterations_recorded: 4,
            ..ResultSet::default()
        };
        set.m_histogram.insert(1, 4);
        let summary = summarize(&set);
        assert_eq!(summary.selection_ratio, vec![1.0, 0.0]);
    }

    #[test]
    fn dominance_check_agrees_with_hand_cases() {
        assert!(stochastically_dominates(&[0.9, 1.0, 1.0], &[0.5, 0.9, 1.0]));
        assert!(!stochastically_dominates(&[0.5, 0.9], &[0.9, 1.0]));
        // Equal distributions dominate weakly in both directions.
        assert!(stochastically_dominates(&[0.7, 0.8], &[0.7, 0.8]));
    }

    #[test]
    fn sweep_parser_round_trips() {
        let sweep = Sweep::parse("n=1:5:2").unwrap();
        assert_eq!(sweep.values(), vec![1.0, 3.0, 5.0]);
        assert!(Sweep::parse("oops").is_err());
        assert!(Sweep::parse("n=5:1:1").is_err());
    }

    #[test]
    fn bounds_sweep_regime_three_matches_formula() {
        let rows = bounds_sweep(
            BoundRegime::FlProportional,
            &BoundDefaults { epsilon: 0.1, g2: 1.0, sigma2: 0.0, ..BoundDefaults::default() },
            &Sweep::parse("n=1:2:1").unwrap(),
        )
        .unwrap();
        // (1/0.1)[(1+1/n)·1·1 + (0/N + 1)/1 + 1]
        assert!((rows[0].1 - 40.0).abs() < 1e-9);
        assert!((rows[1].1 - 35.0).abs() < 1e-9);
    }

    #[test]
    fn selftest_is_green() {
        for (name, result) in selftest() {
            assert!(result.is_ok(), "{name}: {result:?}");
        }
    }

    #[test]
    fn slicing_plan_runs_and_records_availability() {
        let cfg = tiny_cfg(6);
        let plan = ExperimentPlan {
            mode: ExperimentMode::Slicing { m: 2 },
            seeds: vec![9],
            out_dir: None,
        };
        let results = run_plan(&plan, &cfg).unwrap();
        assert_eq!(results.availability.len(), 3 * 2);
        assert!(results.iterations_recorded > 0);
    }
}
