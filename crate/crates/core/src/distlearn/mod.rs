//! The n-sync distributed-learning protocol over the simulated radio, plus
//! the synthetic tasks it trains.
//!
//! Per iteration the central node pushes the global model to the requested
//! devices, each device trains locally after its download completes, uploads
//! its message, and the first n uploads trigger the global update. If fewer
//! than n arrive within the iteration budget the model is left unchanged and
//! the iteration is flagged as timed out. Straggler traffic stays in the
//! buffers and keeps loading the network into later iterations.

pub mod bounds;

use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::metrics::{DeviceCompletion, IterationOutcome};
use crate::ransim::{DeliveryOutcome, Engine, Flow, TtiReport};
use crate::scenario::{derive_stream, Direction, LearningParams, ScenarioConfig, TaskKind};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("selection provides {got} devices but the protocol needs at least n={n}")]
    SelectionTooSmall { n: usize, got: usize },
    #[error("global update expects exactly {expected} messages, got {got}")]
    WrongMessageCount { expected: usize, got: usize },
    #[error("device index {0} out of range")]
    BadDevice(usize),
}

/// Synthetic objective shared by the learning devices.
///
/// Every task is a mean of per-device objectives with local minimizer
/// offsets `b_i`; the non-convex variant adds a cosine ripple per coordinate.
#[derive(Debug, Clone)]
pub struct LearningTask {
    pub kind: TaskKind,
    pub dim: usize,
    /// Per-device offsets, one `dim`-vector per device.
    pub offsets: Vec<Vec<f64>>,
    /// Bound on the per-device gradient-noise second moment.
    pub noise_sigma2: f64,
    pub learning_rate: f64,
    /// Convergence threshold on the objective gap.
    pub epsilon: f64,
    /// Local steps per iteration (federated averaging).
    pub local_epochs: u32,
    /// Cosine ripple amplitude of the non-convex task.
    pub ripple: f64,
}

/// Default ripple amplitude; > 1 makes the per-coordinate profile non-convex.
pub const DEFAULT_RIPPLE: f64 = 2.0;

impl LearningTask {
    /// Builds the task from scenario parameters. Per-device data (the local
    /// minimizer offsets) is deployment identity, so it draws from the
    /// scenario seed, not the run seed.
    pub fn from_params(params: &LearningParams, devices: usize, scenario_seed: u64) -> Self {
        let mut rng = derive_stream(scenario_seed, "task");
        let offsets = (0..devices)
            .map(|_| {
                (0..params.dim)
                    .map(|_| {
                        params.offset_scale
                            * <StandardNormal as Distribution<f64>>::sample(
                                &StandardNormal,
                                &mut rng,
                            )
                    })
                    .collect()
            })
            .collect();
        LearningTask {
            kind: params.kind,
            dim: params.dim,
            offsets,
            noise_sigma2: params.noise_sigma2,
            learning_rate: params.learning_rate,
            epsilon: params.epsilon,
            local_epochs: params.local_epochs,
            ripple: DEFAULT_RIPPLE,
        }
    }

    /// Homogeneous task: every device shares the same offset.
    pub fn homogeneous(
        kind: TaskKind,
        dim: usize,
        devices: usize,
        offset: f64,
        noise_sigma2: f64,
        learning_rate: f64,
        epsilon: f64,
    ) -> Self {
        LearningTask {
            kind,
            dim,
            offsets: vec![vec![offset; dim]; devices],
            noise_sigma2,
            learning_rate,
            epsilon,
            local_epochs: 1,
            ripple: DEFAULT_RIPPLE,
        }
    }

    pub fn device_count(&self) -> usize {
        self.offsets.len()
    }

    /// Gradient of device `i`'s objective at `w`.
    pub fn local_gradient(&self, w: &[f64], device: usize) -> Vec<f64> {
        let b = &self.offsets[device];
        match self.kind {
            TaskKind::Quadratic | TaskKind::FlAveraging => {
                w.iter().zip(b).map(|(wj, bj)| wj - bj).collect()
            }
            TaskKind::NonConvex => w
                .iter()
                .zip(b)
                .map(|(wj, bj)| {
                    let x = wj - bj;
                    x - self.ripple * x.sin()
                })
                .collect(),
        }
    }

    /// Global objective value at `w` (mean of the per-device objectives).
    pub fn objective(&self, w: &[f64]) -> f64 {
        let n = self.device_count() as f64;
        self.offsets
            .iter()
            .map(|b| match self.kind {
                TaskKind::Quadratic | TaskKind::FlAveraging => {
                    0.5 * w.iter().zip(b).map(|(wj, bj)| (wj - bj) * (wj - bj)).sum::<f64>()
                }
                TaskKind::NonConvex => w
                    .iter()
                    .zip(b)
                    .map(|(wj, bj)| {
                        let x = wj - bj;
                        0.5 * x * x + self.ripple * x.cos()
                    })
                    .sum::<f64>(),
            })
            .sum::<f64>()
            / n
    }

    /// Gradient of the global objective at `w`.
    pub fn global_gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for device in 0..self.device_count() {
            for (gj, lj) in g.iter_mut().zip(self.local_gradient(w, device)) {
                *gj += lj;
            }
        }
        let n = self.device_count() as f64;
        g.iter_mut().for_each(|gj| *gj /= n);
        g
    }

    /// Smoothness constant of the global objective.
    pub fn smoothness(&self) -> f64 {
        match self.kind {
            TaskKind::Quadratic | TaskKind::FlAveraging => 1.0,
            TaskKind::NonConvex => 1.0 + self.ripple,
        }
    }

    /// Known optimal value, when the task admits one.
    pub fn optimal_value(&self) -> Option<f64> {
        match self.kind {
            TaskKind::Quadratic | TaskKind::FlAveraging => {
                // f(w) = 0.5||w - mean b||^2 + 0.5(mean ||b||^2 - ||mean b||^2)
                let n = self.device_count() as f64;
                let mut mean_b = vec![0.0; self.dim];
                let mut mean_norm2 = 0.0;
                for b in &self.offsets {
                    mean_norm2 += b.iter().map(|x| x * x).sum::<f64>() / n;
                    for (mj, bj) in mean_b.iter_mut().zip(b) {
                        *mj += bj / n;
                    }
                }
                let mean_b_norm2: f64 = mean_b.iter().map(|x| x * x).sum();
                Some(0.5 * (mean_norm2 - mean_b_norm2))
            }
            TaskKind::NonConvex => {
                let first = &self.offsets[0];
                let homogeneous =
                    self.offsets.iter().all(|b| b.iter().zip(first).all(|(x, y)| x == y));
                homogeneous.then(|| self.dim as f64 * per_coordinate_ripple_min(self.ripple))
            }
        }
    }

    /// Global lower bound of the objective.
    pub fn lower_bound(&self) -> f64 {
        match self.kind {
            TaskKind::Quadratic | TaskKind::FlAveraging => self.optimal_value().unwrap(),
            TaskKind::NonConvex => self.dim as f64 * per_coordinate_ripple_min(self.ripple),
        }
    }

    /// Minimizer of quadratic tasks (the offset mean).
    pub fn quadratic_minimizer(&self) -> Option<Vec<f64>> {
        match self.kind {
            TaskKind::Quadratic | TaskKind::FlAveraging => {
                let n = self.device_count() as f64;
                let mut mean_b = vec![0.0; self.dim];
                for b in &self.offsets {
                    for (mj, bj) in mean_b.iter_mut().zip(b) {
                        *mj += bj / n;
                    }
                }
                Some(mean_b)
            }
            TaskKind::NonConvex => None,
        }
    }
}

/// Minimum of x^2/2 + c cos(x) over x, by bisection on the derivative.
pub fn per_coordinate_ripple_min(c: f64) -> f64 {
    if c <= 1.0 {
        return c;
    }
    let g = |x: f64| x - c * x.sin();
    let mut lo = 1e-9;
    let mut hi = std::f64::consts::PI;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    0.5 * x * x + c * x.cos()
}

/// Draws one isotropic gradient-noise vector with E||e||^2 = sigma2.
pub fn gradient_noise(dim: usize, sigma2: f64, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let per_coord = (sigma2 / dim as f64).sqrt();
    (0..dim)
        .map(|_| per_coord * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Global model parameters plus iteration bookkeeping.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub weights: Vec<f64>,
    pub iteration: usize,
    pub converged: bool,
}

impl ModelState {
    pub fn new(dim: usize) -> Self {
        ModelState { weights: vec![0.0; dim], iteration: 0, converged: false }
    }

    pub fn with_weights(weights: Vec<f64>) -> Self {
        ModelState { weights, iteration: 0, converged: false }
    }
}

/// Local computation of one device: a noisy gradient (gradient-descent
/// tasks) or the model after `local_epochs` local steps (federated mode).
pub fn local_update(
    task: &LearningTask,
    w: &[f64],
    device: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>, ProtocolError> {
    if device >= task.device_count() {
        return Err(ProtocolError::BadDevice(device));
    }
    match task.kind {
        TaskKind::Quadratic | TaskKind::NonConvex => {
            let mut g = task.local_gradient(w, device);
            if task.noise_sigma2 > 0.0 {
                for (gj, ej) in g.iter_mut().zip(gradient_noise(task.dim, task.noise_sigma2, rng))
                {
                    *gj += ej;
                }
            }
            Ok(g)
        }
        TaskKind::FlAveraging => {
            let mut local = w.to_vec();
            for _ in 0..task.local_epochs {
                let mut g = task.local_gradient(&local, device);
                if task.noise_sigma2 > 0.0 {
                    for (gj, ej) in
                        g.iter_mut().zip(gradient_noise(task.dim, task.noise_sigma2, rng))
                    {
                        *gj += ej;
                    }
                }
                for (lj, gj) in local.iter_mut().zip(&g) {
                    *lj -= task.learning_rate * gj;
                }
            }
            Ok(local)
        }
    }
}

/// Central-node update from exactly n messages: averaged gradient step, or
/// model averaging in federated mode.
pub fn global_update(
    task: &LearningTask,
    w: &[f64],
    messages: &[Vec<f64>],
    n: usize,
) -> Result<Vec<f64>, ProtocolError> {
    if messages.len() != n {
        return Err(ProtocolError::WrongMessageCount { expected: n, got: messages.len() });
    }
    match task.kind {
        TaskKind::Quadratic | TaskKind::NonConvex => {
            let mut next = w.to_vec();
            for msg in messages {
                for (wj, gj) in next.iter_mut().zip(msg) {
                    *wj -= task.learning_rate * gj / n as f64;
                }
            }
            Ok(next)
        }
        TaskKind::FlAveraging => {
            let mut avg = vec![0.0; task.dim];
            for msg in messages {
                for (aj, mj) in avg.iter_mut().zip(msg) {
                    *aj += mj / n as f64;
                }
            }
            Ok(avg)
        }
    }
}

struct InFlightUpload {
    device: usize,
    tag: usize,
    message: Option<Vec<f64>>,
}

/// Iteration-to-iteration jitter of the per-device compute time, lognormal
/// sigma.
const COMPUTE_JITTER_SIGMA: f64 = 0.25;

/// Drives n-sync iterations over the engine; owns the compute-delay and
/// gradient-noise streams and the cross-iteration straggler pipeline.
pub struct ProtocolDriver {
    rng_compute: ChaCha12Rng,
    rng_gradient: ChaCha12Rng,
    /// Persistent per-device compute medians: some devices are genuine
    /// stragglers, fixed per deployment.
    device_median_s: Vec<f64>,
    server_s: f64,
    t_max_s: f64,
    required: usize,
    /// Uploads enqueued but not yet delivered, across iterations.
    in_flight: Vec<InFlightUpload>,
}

impl ProtocolDriver {
    pub fn new(cfg: &ScenarioConfig, run_seed: u64) -> Self {
        let mut rng_profile = derive_stream(cfg.rng_seed, "compute-profile");
        let device_median_s = (0..cfg.ai_device_count)
            .map(|_| {
                let z: f64 = <StandardNormal as Distribution<f64>>::sample(
                    &StandardNormal,
                    &mut rng_profile,
                );
                cfg.compute.device_median_s * (cfg.compute.device_sigma_ln * z).exp()
            })
            .collect();
        ProtocolDriver {
            rng_compute: derive_stream(run_seed, "compute"),
            rng_gradient: derive_stream(run_seed, "gradient"),
            device_median_s,
            server_s: cfg.compute.server_s,
            t_max_s: cfg.t_max_seconds,
            required: cfg.required_updates,
            in_flight: Vec::new(),
        }
    }

    pub fn required_updates(&self) -> usize {
        self.required
    }

    fn draw_compute_delay(&mut self, device: usize) -> f64 {
        let z: f64 =
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng_compute);
        self.device_median_s[device] * (COMPUTE_JITTER_SIGMA * z).exp()
    }

    /// Runs one n-sync iteration: requests the selected devices, waits for
    /// the first n uploads or the budget, applies the global update, and
    /// reports realized delays. `on_tti` observes every stepped TTI.
    pub fn run_iteration(
        &mut self,
        engine: &mut Engine,
        selection: &[bool],
        model: &mut ModelState,
        task: &LearningTask,
        mut on_tti: impl FnMut(&TtiReport),
    ) -> Result<IterationOutcome, ProtocolError> {
        let selected: Vec<usize> =
            selection.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect();
        if selected.len() < self.required {
            return Err(ProtocolError::SelectionTooSmall { n: self.required, got: selected.len() });
        }
        let k = model.iteration;
        let t_start = engine.now_s();
        let deadline = t_start + self.t_max_s;
        for &device in &selected {
            engine.enqueue_ai(device, Direction::Dl, t_start, k);
        }

        let mut dl_delay: Vec<Option<f64>> = vec![None; engine.ai_count()];
        let mut compute_delay: Vec<Option<f64>> = vec![None; engine.ai_count()];
        let mut completions: Vec<DeviceCompletion> = Vec::new();
        let mut arrived: Vec<(usize, Vec<f64>)> = Vec::new();

        while engine.now_s() < deadline && completions.len() < self.required {
            let report = engine.step_tti();
            for ev in &report.events {
                if ev.flow != Flow::Ai {
                    continue;
                }
                let DeliveryOutcome::Delivered { at_s, .. } = ev.outcome else { continue };
                let tag = ev.iteration_tag.expect("ai packets carry iteration tags");
                match ev.direction {
                    Direction::Dl => {
                        // Local training starts when the model lands; the
                        // upload goes out when it finishes. Stale downloads
                        // still produce (ignored) uploads that load the air.
                        let d_compute = self.draw_compute_delay(ev.device);
                        let message = if tag == k {
                            dl_delay[ev.device] = Some(at_s - t_start);
                            compute_delay[ev.device] = Some(d_compute);
                            Some(local_update(
                                task,
                                &model.weights,
                                ev.device,
                                &mut self.rng_gradient,
                            )?)
                        } else {
                            None
                        };
                        self.in_flight.push(InFlightUpload { device: ev.device, tag, message });
                        engine.enqueue_ai(ev.device, Direction::Ul, at_s + d_compute, tag);
                    }
                    Direction::Ul => {
                        let slot = self
                            .in_flight
                            .iter()
                            .position(|m| m.device == ev.device && m.tag == tag);
                        let Some(slot) = slot else { continue };
                        let upload = self.in_flight.swap_remove(slot);
                        if tag != k || at_s > deadline || completions.len() >= self.required {
                            continue;
                        }
                        let dl = dl_delay[ev.device].unwrap_or(0.0);
                        let compute = compute_delay[ev.device].unwrap_or(0.0);
                        let total = at_s - t_start;
                        completions.push(DeviceCompletion {
                            device: ev.device,
                            dl_s: dl,
                            compute_s: compute,
                            ul_s: total - dl - compute,
                            total_s: total,
                        });
                        if let Some(msg) = upload.message {
                            arrived.push((ev.device, msg));
                        }
                    }
                }
            }
            on_tti(&report);
        }

        let nth_total = completions.get(self.required - 1).map(|c| c.total_s);
        let (training_delay_s, timed_out) = match nth_total {
            Some(total) if total + self.server_s < self.t_max_s => (total + self.server_s, false),
            _ => (self.t_max_s, true),
        };

        let first_n: Vec<usize> =
            completions.iter().take(self.required).map(|c| c.device).collect();
        if !timed_out {
            let msgs: Vec<Vec<f64>> = first_n
                .iter()
                .filter_map(|&d| {
                    arrived.iter().find(|(dev, _)| *dev == d).map(|(_, m)| m.clone())
                })
                .collect();
            model.weights = global_update(task, &model.weights, &msgs, self.required)?;
            if let Some(fstar) = task.optimal_value() {
                if task.objective(&model.weights) - fstar <= task.epsilon {
                    model.converged = true;
                }
            }
        }
        model.iteration += 1;

        Ok(IterationOutcome {
            iteration: k,
            selected,
            completions,
            first_n,
            server_processing_s: self.server_s,
            training_delay_s,
            timed_out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::training_delay;
    use crate::scenario::desk_scenario;
    use approx::assert_abs_diff_eq;

    fn quadratic(devices: usize, offset: f64, sigma2: f64) -> LearningTask {
        LearningTask::homogeneous(TaskKind::Quadratic, 4, devices, offset, sigma2, 0.1, 1e-6)
    }

    #[test]
    fn noiseless_quadratic_gradient_is_exact() {
        let task = quadratic(3, 2.0, 0.0);
        let w = vec![1.0, -0.5, 0.0, 3.0];
        let mut rng = derive_stream(0, "gradient");
        let msg = local_update(&task, &w, 1, &mut rng).unwrap();
        for (m, wj) in msg.iter().zip(&w) {
            assert_abs_diff_eq!(*m, wj - 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn gradient_noise_variance_within_bound() {
        // Monte Carlo oracle for the second-moment bound.
        let mut rng = derive_stream(5, "gradient");
        let sigma2 = 1.7;
        let dim = 4;
        let draws = 10_000;
        let mean_sq: f64 = (0..draws)
            .map(|_| gradient_noise(dim, sigma2, &mut rng).iter().map(|e| e * e).sum::<f64>())
            .sum::<f64>()
            / draws as f64;
        assert!(mean_sq <= sigma2 * 1.05, "empirical {mean_sq} vs bound {sigma2}");
        assert!(mean_sq >= sigma2 * 0.95);
    }

    #[test]
    fn fl_single_epoch_message_equals_one_local_gradient_step() {
        let mut task = quadratic(2, 1.0, 0.0);
        task.kind = TaskKind::FlAveraging;
        task.local_epochs = 1;
        let w = vec![0.5, 0.5, 0.5, 0.5];
        let mut rng = derive_stream(0, "gradient");
        let msg = local_update(&task, &w, 0, &mut rng).unwrap();
        for (m, wj) in msg.iter().zip(&w) {
            let grad = wj - 1.0;
            assert_abs_diff_eq!(*m, wj - 0.1 * grad, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_message_gradient_step() {
        let task = quadratic(1, 0.0, 0.0);
        let w = vec![1.0, 1.0, 1.0, 1.0];
        let g = vec![2.0, 0.0, -2.0, 1.0];
        let next = global_update(&task, &w, &[g.clone()], 1).unwrap();
        for ((nj, wj), gj) in next.iter().zip(&w).zip(&g) {
            assert_abs_diff_eq!(*nj, wj - 0.1 * gj, epsilon = 1e-15);
        }
    }

    #[test]
    fn fl_averaging_identical_models_is_idempotent() {
        let mut task = quadratic(3, 0.0, 0.0);
        task.kind = TaskKind::FlAveraging;
        let m = vec![0.3, -0.7, 0.1, 0.9];
        let next = global_update(&task, &[0.0; 4], &[m.clone(), m.clone(), m.clone()], 3).unwrap();
        for (nj, mj) in next.iter().zip(&m) {
            assert_abs_diff_eq!(*nj, *mj, epsilon = 1e-15);
        }
    }

    #[test]
    fn wrong_message_count_is_a_protocol_error() {
        let task = quadratic(3, 0.0, 0.0);
        let err = global_update(&task, &[0.0; 4], &[vec![0.0; 4]], 2).unwrap_err();
        assert!(matches!(err, ProtocolError::WrongMessageCount { expected: 2, got: 1 }));
    }

    #[test]
    fn noiseless_common_minimizer_contracts_strictly() {
        let task = quadratic(4, 3.0, 0.0);
        let mut w = vec![0.0; 4];
        let dist = |w: &[f64]| {
            w.iter().map(|wj| (wj - 3.0) * (wj - 3.0)).sum::<f64>().sqrt()
        };
        let mut last = dist(&w);
        for _ in 0..30 {
            let msgs: Vec<Vec<f64>> = (0..4).map(|d| task.local_gradient(&w, d)).collect();
            w = global_update(&task, &w, &msgs, 4).unwrap();
            let now = dist(&w);
            assert!(now < last, "distance must strictly decrease");
            last = now;
        }
    }

    #[test]
    fn fl_with_one_epoch_full_participation_matches_dgd() {
        let dim = 3;
        let devices = 4;
        let mut offsets = Vec::new();
        for i in 0..devices {
            offsets.push(vec![i as f64 * 0.5 - 0.75; dim]);
        }
        let dgd = LearningTask {
            kind: TaskKind::Quadratic,
            dim,
            offsets: offsets.clone(),
            noise_sigma2: 0.0,
            learning_rate: 0.2,
            epsilon: 1e-9,
            local_epochs: 1,
            ripple: DEFAULT_RIPPLE,
        };
        let mut fl = dgd.clone();
        fl.kind = TaskKind::FlAveraging;

        let mut w_dgd = vec![1.0, -1.0, 0.5];
        let mut w_fl = w_dgd.clone();
        let mut rng = derive_stream(0, "gradient");
        for _ in 0..20 {
            let g: Vec<Vec<f64>> =
                (0..devices).map(|d| local_update(&dgd, &w_dgd, d, &mut rng).unwrap()).collect();
            w_dgd = global_update(&dgd, &w_dgd, &g, devices).unwrap();
            let m: Vec<Vec<f64>> =
                (0..devices).map(|d| local_update(&fl, &w_fl, d, &mut rng).unwrap()).collect();
            w_fl = global_update(&fl, &w_fl, &m, devices).unwrap();
            for (a, b) in w_dgd.iter().zip(&w_fl) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ripple_minimum_is_consistent_with_grid_search() {
        let c = DEFAULT_RIPPLE;
        let analytic = per_coordinate_ripple_min(c);
        let mut best = f64::INFINITY;
        let mut x: f64 = -6.0;
        while x <= 6.0 {
            best = best.min(0.5 * x * x + c * x.cos());
            x += 1e-4;
        }
        assert_abs_diff_eq!(analytic, best, epsilon = 1e-6);
    }

    fn protocol_fixture(extra: usize) -> (ScenarioConfig, Engine, ProtocolDriver, LearningTask) {
        let mut cfg = desk_scenario(41);
        cfg.urllc_devices.truncate(2);
        cfg.ai_device_count = 2 + extra;
        cfg.required_updates = 2;
        cfg.ai_message_bytes = 30_000;
        cfg.t_max_seconds = 4.0;
        let engine = Engine::new(&cfg, 41);
        let driver = ProtocolDriver::new(&cfg, 41);
        let task = LearningTask::from_params(&cfg.learning, cfg.ai_device_count, 41);
        (cfg, engine, driver, task)
    }

    #[test]
    fn unreachable_device_forces_timeout_and_unchanged_model() {
        let mut cfg = desk_scenario(43);
        cfg.urllc_devices.truncate(1);
        cfg.ai_device_count = 2;
        cfg.required_updates = 2;
        cfg.ai_message_bytes = 30_000;
        cfg.t_max_seconds = 0.5;
        // Downlink can never complete: no power, nothing ever decodes.
        cfg.dl_tx_power_w = 1e-18;
        let mut engine = Engine::new(&cfg, 43);
        let mut driver = ProtocolDriver::new(&cfg, 43);
        let task = LearningTask::from_params(&cfg.learning, 2, 43);
        let mut model = ModelState::new(task.dim);
        let before = model.weights.clone();
        let outcome = driver
            .run_iteration(&mut engine, &[true, true], &mut model, &task, |_| {})
            .unwrap();
        assert!(outcome.timed_out);
        assert_abs_diff_eq!(outcome.training_delay_s, 0.5, epsilon = 1e-12);
        assert_eq!(model.weights, before);
        assert!(outcome.first_n.len() < 2);
    }

    #[test]
    fn training_delay_matches_metrics_on_realized_totals() {
        let (_, mut engine, mut driver, task) = protocol_fixture(2);
        let mut model = ModelState::new(task.dim);
        let selection = vec![true; 4];
        let outcome = driver
            .run_iteration(&mut engine, &selection, &mut model, &task, |_| {})
            .unwrap();
        assert!(!outcome.timed_out, "desk channel should complete");
        let totals: Vec<f64> = outcome.completions.iter().map(|c| c.total_s).collect();
        let expect = training_delay(&totals, outcome.server_processing_s, 2, 4.0).unwrap();
        assert_abs_diff_eq!(outcome.training_delay_s, expect, epsilon = 1e-12);
        // Totals decompose exactly.
        for c in &outcome.completions {
            assert_abs_diff_eq!(c.dl_s + c.compute_s + c.ul_s, c.total_s, epsilon = 1e-9);
        }
    }

    #[test]
    fn selection_smaller_than_n_is_rejected() {
        let (_, mut engine, mut driver, task) = protocol_fixture(0);
        let mut model = ModelState::new(task.dim);
        let err = driver
            .run_iteration(&mut engine, &[true, false], &mut model, &task, |_| {})
            .unwrap_err();
        assert!(matches!(err, ProtocolError::SelectionTooSmall { n: 2, got: 1 }));
    }

    #[test]
    fn iterations_are_deterministic_for_equal_seeds() {
        let run = || {
            let (_, mut engine, mut driver, task) = protocol_fixture(2);
            let mut model = ModelState::new(task.dim);
            let outcome = driver
                .run_iteration(&mut engine, &[true; 4], &mut model, &task, |_| {})
                .unwrap();
            (outcome.first_n.clone(), outcome.training_delay_s.to_bits(), model.weights)
        };
        assert_eq!(run(), run());
    }
}
