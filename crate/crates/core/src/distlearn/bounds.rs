//! Analytic convergence-rate calculators for the three n-sync regimes, plus
//! Monte Carlo validators that check the strongly convex and non-convex
//! inequalities against simulated gradient-descent runs.
//!
//! The validators build their own in-memory tasks (no radio involved): all
//! devices share one objective, gradient noise is isotropic and unbiased, and
//! the averaged direction of n devices has second moment sigma^2/n. With
//! unbiased noise the aggregate direction satisfies the half-space condition
//! with coefficient 1, so the strongly convex bound is evaluated at an
//! effective beta1 of 1 while the non-convex bound uses beta1 = 0; both
//! coefficients stay explicit inputs here.

use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use super::{gradient_noise, LearningTask};
use crate::scenario::derive_stream;

#[derive(Debug, Error, PartialEq)]
pub enum BoundsError {
    #[error("accuracy must exceed the noise floor: epsilon {epsilon} <= z/n {floor}")]
    UndefinedRegime { epsilon: f64, floor: f64 },
    #[error("contraction base must exceed 1, got {0}")]
    BadBase(f64),
    #[error("invalid parameter: {0}")]
    BadParameter(&'static str),
    #[error("learning rate {eta} violates the regime bound {max_eta}")]
    UnstableLearningRate { eta: f64, max_eta: f64 },
}

/// Inputs of the strongly convex iteration-count bound.
#[derive(Debug, Clone, Copy)]
pub struct StronglyConvexParams {
    /// Initial-gap constant W^A.
    pub w_a: f64,
    /// Noise-floor constant z^A (for a single participant).
    pub z_a: f64,
    /// Contraction base b > 1.
    pub base: f64,
    /// Participants in the global step.
    pub n: f64,
    /// Target accuracy on the objective gap.
    pub epsilon: f64,
}

/// Minimum iterations to epsilon-accuracy, strongly convex regime:
/// `log_b(W^A / (epsilon - z^A/n)) + 1`.
pub fn kmin_strongly_convex(p: &StronglyConvexParams) -> Result<f64, BoundsError> {
    if p.base <= 1.0 {
        return Err(BoundsError::BadBase(p.base));
    }
    if p.w_a <= 0.0 {
        return Err(BoundsError::BadParameter("w_a must be > 0"));
    }
    let floor = p.z_a / p.n;
    if p.epsilon <= floor {
        return Err(BoundsError::UndefinedRegime { epsilon: p.epsilon, floor });
    }
    Ok((p.w_a / (p.epsilon - floor)).log(p.base) + 1.0)
}

/// Inputs of the non-convex iteration-count bound.
#[derive(Debug, Clone, Copy)]
pub struct NonConvexParams {
    /// Initial-gap constant W^B.
    pub w_b: f64,
    /// Noise-floor constant z^B (for a single participant).
    pub z_b: f64,
    pub n: f64,
    /// Target accuracy on the mean squared gradient norm.
    pub epsilon: f64,
}

/// Minimum iterations to epsilon-accuracy at a critical point:
/// `W^B / (epsilon - z^B/n)`.
pub fn kmin_nonconvex(p: &NonConvexParams) -> Result<f64, BoundsError> {
    if p.w_b <= 0.0 {
        return Err(BoundsError::BadParameter("w_b must be > 0"));
    }
    let floor = p.z_b / p.n;
    if p.epsilon <= floor {
        return Err(BoundsError::UndefinedRegime { epsilon: p.epsilon, floor });
    }
    Ok(p.w_b / (p.epsilon - floor))
}

/// Inputs of the federated-averaging proportionality value.
#[derive(Debug, Clone, Copy)]
pub struct FlProportionalParams {
    pub epsilon: f64,
    /// Local epochs per round, E >= 1.
    pub local_epochs: f64,
    /// Second-moment bound on gradient estimates, G^2.
    pub g2: f64,
    /// Gradient-noise variance bound, sigma^2.
    pub sigma2: f64,
    /// Total devices N.
    pub device_count: f64,
    /// Participants n <= N.
    pub n: f64,
}

/// Proportionality value the federated iteration count scales with:
/// `(1/eps) * [(1 + 1/n) E G^2 + (sigma^2/N + G^2)/E + G^2]`.
///
/// This is the bracketed scaling value, not an iteration count.
pub fn kmin_fl_proportional(p: &FlProportionalParams) -> Result<f64, BoundsError> {
    if p.local_epochs < 1.0 {
        return Err(BoundsError::BadParameter("local_epochs must be >= 1"));
    }
    if p.n > p.device_count {
        return Err(BoundsError::BadParameter("n must not exceed device_count"));
    }
    if p.epsilon <= 0.0 {
        return Err(BoundsError::BadParameter("epsilon must be > 0"));
    }
    let e = p.local_epochs;
    Ok((1.0 / p.epsilon)
        * ((1.0 + 1.0 / p.n) * e * p.g2 + (p.sigma2 / p.device_count + p.g2) / e + p.g2))
}

/// Hypothesis parameters shared by both empirical validators.
#[derive(Debug, Clone, Copy)]
pub struct RegimeAssumptions {
    /// Half-space coefficient of the aggregate direction.
    pub beta1: f64,
    /// Upper coefficient; must satisfy beta2 >= (beta1 + 1)^2.
    pub beta2: f64,
}

impl RegimeAssumptions {
    fn check(&self) -> Result<(), BoundsError> {
        if self.beta2 < (self.beta1 + 1.0) * (self.beta1 + 1.0) {
            return Err(BoundsError::BadParameter("beta2 must be >= (beta1+1)^2"));
        }
        Ok(())
    }

    fn max_learning_rate(&self, smoothness: f64) -> f64 {
        (self.beta1 + 1.0) / ((2.0 * self.beta2 + 1.0) * smoothness)
    }
}

/// One validated point: the seed-averaged empirical value against the
/// analytic right-hand side.
#[derive(Debug, Clone, Copy)]
pub struct BoundPoint {
    pub k: usize,
    pub empirical: f64,
    pub bound: f64,
}

/// Result of an empirical bound check.
#[derive(Debug, Clone)]
pub struct BoundCheckReport {
    pub points: Vec<BoundPoint>,
    /// Largest empirical/bound ratio observed.
    pub worst_ratio: f64,
    /// Allowed ratio (1 + margin).
    pub allowed_ratio: f64,
    pub pass: bool,
}

impl BoundCheckReport {
    fn from_points(points: Vec<BoundPoint>, margin: f64) -> Self {
        let worst_ratio = points
            .iter()
            .map(|p| p.empirical / p.bound)
            .fold(f64::NEG_INFINITY, f64::max);
        let allowed_ratio = 1.0 + margin;
        BoundCheckReport { points, worst_ratio, allowed_ratio, pass: worst_ratio <= allowed_ratio }
    }
}

/// Simulates n-sync gradient descent on a common-minimizer strongly convex
/// quadratic and checks the seed-averaged objective gap against the
/// strongly convex inequality at every iteration.
///
/// The analytic right-hand side is
/// `plateau + (1 - eta*beta1*mu)^(k-1) * (gap_1 - plateau)` with
/// `plateau = eta*L*sigma^2 / (2 n beta1 mu)`.
pub fn validate_strongly_convex_bound(
    task: &LearningTask,
    n: usize,
    seeds: u64,
    k_max: usize,
    assumptions: RegimeAssumptions,
    margin: f64,
    seed_base: u64,
) -> Result<BoundCheckReport, BoundsError> {
    assumptions.check()?;
    let mu = 1.0;
    let smoothness = task.smoothness();
    let eta = task.learning_rate;
    let max_eta = assumptions.max_learning_rate(smoothness);
    if eta > max_eta {
        return Err(BoundsError::UnstableLearningRate { eta, max_eta });
    }
    if assumptions.beta1 <= 0.0 {
        return Err(BoundsError::BadParameter("beta1 must be > 0 in the strongly convex regime"));
    }
    let fstar = task.optimal_value().ok_or(BoundsError::BadParameter("task needs a known optimum"))?;
    let w1 = vec![task.offsets[0][0] + 3.0; task.dim];
    let gap1 = task.objective(&w1) - fstar;

    let mut mean_gap = vec![0.0f64; k_max];
    for seed in 0..seeds {
        let mut rng = derive_stream(seed_base.wrapping_add(seed), "bound-check");
        let mut w = w1.clone();
        for gap in mean_gap.iter_mut() {
            *gap += (task.objective(&w) - fstar) / seeds as f64;
            step_dgd(task, &mut w, n, &mut rng);
        }
    }

    let plateau = eta * smoothness * task.noise_sigma2
        / (2.0 * n as f64 * assumptions.beta1 * mu);
    let contraction = 1.0 - eta * assumptions.beta1 * mu;
    let points = mean_gap
        .iter()
        .enumerate()
        .map(|(i, &empirical)| {
            let k = i + 1;
            let bound = plateau + contraction.powi(i as i32) * (gap1 - plateau);
            BoundPoint { k, empirical, bound }
        })
        .collect();
    Ok(BoundCheckReport::from_points(points, margin))
}

/// Checks that the noiseless objective gap decays geometrically at rate
/// `(1 - eta*mu)` in the iterates, i.e. the gap shrinks by the squared
/// factor each step. Returns the largest relative mismatch.
pub fn noiseless_geometric_decay_error(task: &LearningTask, k_max: usize) -> f64 {
    let fstar = task.optimal_value().expect("known optimum");
    let mu = 1.0;
    let eta = task.learning_rate;
    let w1 = vec![task.offsets[0][0] + 3.0; task.dim];
    let gap1 = task.objective(&w1) - fstar;
    let mut w = w1;
    let mut worst: f64 = 0.0;
    let mut rng = derive_stream(0, "unused");
    for i in 0..k_max {
        let expected = gap1 * (1.0 - eta * mu).powi(2 * i as i32);
        let actual = task.objective(&w) - fstar;
        worst = worst.max(((actual - expected) / expected).abs());
        step_dgd(task, &mut w, 1, &mut rng);
    }
    worst
}

/// Simulates n-sync gradient descent on the non-convex task and checks the
/// seed-averaged running mean of squared gradient norms against
/// `eta*L*sigma^2 / (n (beta1+1)) + 2 (f(w1) - f_inf) / (eta (beta1+1) K)`.
pub fn validate_nonconvex_bound(
    task: &LearningTask,
    n: usize,
    seeds: u64,
    k_max: usize,
    assumptions: RegimeAssumptions,
    margin: f64,
    seed_base: u64,
) -> Result<BoundCheckReport, BoundsError> {
    assumptions.check()?;
    let smoothness = task.smoothness();
    let eta = task.learning_rate;
    let max_eta = assumptions.max_learning_rate(smoothness);
    if eta > max_eta {
        return Err(BoundsError::UnstableLearningRate { eta, max_eta });
    }
    let w1 = vec![task.offsets[0][0] + 2.5; task.dim];
    let f1 = task.objective(&w1);
    let f_inf = task.lower_bound();

    let mut mean_running = vec![0.0f64; k_max];
    for seed in 0..seeds {
        let mut rng = derive_stream(seed_base.wrapping_add(seed), "bound-check");
        let mut w = w1.clone();
        let mut sum_sq = 0.0;
        for (i, slot) in mean_running.iter_mut().enumerate() {
            let g = task.global_gradient(&w);
            sum_sq += g.iter().map(|x| x * x).sum::<f64>();
            *slot += sum_sq / (i + 1) as f64 / seeds as f64;
            step_dgd(task, &mut w, n, &mut rng);
        }
    }

    let noise_term = eta * smoothness * task.noise_sigma2
        / (n as f64 * (assumptions.beta1 + 1.0));
    let points = mean_running
        .iter()
        .enumerate()
        .map(|(i, &empirical)| {
            let k = i + 1;
            let bound =
                noise_term + 2.0 * (f1 - f_inf) / (eta * (assumptions.beta1 + 1.0) * k as f64);
            BoundPoint { k, empirical, bound }
        })
        .collect();
    Ok(BoundCheckReport::from_points(points, margin))
}

/// One in-memory n-sync step: average n fresh noisy local gradients and
/// descend. All devices share the objective, so any n are statistically
/// interchangeable.
fn step_dgd(task: &LearningTask, w: &mut [f64], n: usize, rng: &mut ChaCha12Rng) {
    let grad = task.global_gradient(w);
    let mut avg_noise = vec![0.0; task.dim];
    if task.noise_sigma2 > 0.0 {
        for _ in 0..n {
            for (a, e) in avg_noise.iter_mut().zip(gradient_noise(task.dim, task.noise_sigma2, rng)) {
                *a += e / n as f64;
            }
        }
    }
    for ((wj, gj), ej) in w.iter_mut().zip(&grad).zip(&avg_noise) {
        *wj -= task.learning_rate * (gj + ej);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::TaskKind;
    use approx::assert_abs_diff_eq;

    #[test]
    fn strongly_convex_log_of_one_gives_one() {
        let p = StronglyConvexParams { w_a: 0.05, z_a: 0.0, base: 2.0, n: 1.0, epsilon: 0.05 };
        assert_abs_diff_eq!(kmin_strongly_convex(&p).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn strongly_convex_reference_value() {
        // log2(1 / (0.1 - 0.05)) + 1 = log2(20) + 1
        let p = StronglyConvexParams { w_a: 1.0, z_a: 0.05, base: 2.0, n: 1.0, epsilon: 0.1 };
        let expect = (20.0f64).log2() + 1.0;
        assert_abs_diff_eq!(kmin_strongly_convex(&p).unwrap(), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(expect, 5.3219, epsilon = 1e-4);
    }

    #[test]
    fn strongly_convex_undefined_below_noise_floor() {
        let p = StronglyConvexParams { w_a: 1.0, z_a: 0.2, base: 2.0, n: 1.0, epsilon: 0.1 };
        assert!(matches!(
            kmin_strongly_convex(&p),
            Err(BoundsError::UndefinedRegime { .. })
        ));
    }

    #[test]
    fn nonconvex_reference_value() {
        let p = NonConvexParams { w_b: 10.0, z_b: 0.05, n: 1.0, epsilon: 0.1 };
        assert_abs_diff_eq!(kmin_nonconvex(&p).unwrap(), 200.0, epsilon = 1e-9);
    }

    #[test]
    fn nonconvex_pole_as_epsilon_approaches_floor() {
        let near = NonConvexParams { w_b: 10.0, z_b: 0.05, n: 1.0, epsilon: 0.05 + 1e-12 };
        assert!(kmin_nonconvex(&near).unwrap() > 1e10);
        let at = NonConvexParams { epsilon: 0.05, ..near };
        assert!(kmin_nonconvex(&at).is_err());
    }

    #[test]
    fn fl_ratio_between_one_and_infinite_participants() {
        // E=1, G^2=1, sigma^2/N = 0: value(1)/value(inf) = 4/3 exactly.
        let base = FlProportionalParams {
            epsilon: 0.1,
            local_epochs: 1.0,
            g2: 1.0,
            sigma2: 0.0,
            device_count: 1e12,
            n: 1.0,
        };
        let at_one = kmin_fl_proportional(&base).unwrap();
        let at_inf = kmin_fl_proportional(&FlProportionalParams { n: 1e12, ..base }).unwrap();
        assert_abs_diff_eq!(at_one / at_inf, 4.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn all_three_bounds_are_nonincreasing_in_n() {
        let mut last_a = f64::INFINITY;
        let mut last_b = f64::INFINITY;
        let mut last_fl = f64::INFINITY;
        for n in 1..=64 {
            let n = n as f64;
            let a = kmin_strongly_convex(&StronglyConvexParams {
                w_a: 2.0,
                z_a: 0.4,
                base: 1.25,
                n,
                epsilon: 0.5,
            })
            .unwrap();
            let b =
                kmin_nonconvex(&NonConvexParams { w_b: 5.0, z_b: 0.4, n, epsilon: 0.5 }).unwrap();
            let fl = kmin_fl_proportional(&FlProportionalParams {
                epsilon: 0.5,
                local_epochs: 3.0,
                g2: 1.3,
                sigma2: 0.7,
                device_count: 64.0,
                n,
            })
            .unwrap();
            assert!(a <= last_a + 1e-12);
            assert!(b <= last_b + 1e-12);
            assert!(fl <= last_fl + 1e-12);
            last_a = a;
            last_b = b;
            last_fl = fl;
        }
    }

    #[test]
    fn noiseless_decay_matches_geometric_rate() {
        let task =
            LearningTask::homogeneous(TaskKind::Quadratic, 4, 4, 1.0, 0.0, 0.1, 1e-9);
        let err = noiseless_geometric_decay_error(&task, 100);
        assert!(err < 1e-9, "relative mismatch {err}");
    }

    #[test]
    fn strongly_convex_bound_holds_on_noisy_quadratic() {
        let task = LearningTask::homogeneous(TaskKind::Quadratic, 4, 4, 0.0, 1.0, 0.1, 1e-9);
        let assumptions = RegimeAssumptions { beta1: 1.0, beta2: 4.0 };
        for n in [1, 4] {
            let report =
                validate_strongly_convex_bound(&task, n, 50, 60, assumptions, 0.05, 900).unwrap();
            assert!(report.pass, "n={n} worst ratio {}", report.worst_ratio);
        }
    }

    #[test]
    fn nonconvex_bound_holds_on_ripple_task() {
        let task = LearningTask::homogeneous(TaskKind::NonConvex, 2, 4, 0.0, 1.0, 0.1, 1e-9);
        let assumptions = RegimeAssumptions { beta1: 0.0, beta2: 1.0 };
        let report = validate_nonconvex_bound(&task, 2, 50, 100, assumptions, 0.05, 901).unwrap();
        assert!(report.pass, "worst ratio {}", report.worst_ratio);
    }

    #[test]
    fn unstable_learning_rate_is_rejected() {
        let task = LearningTask::homogeneous(TaskKind::Quadratic, 4, 4, 0.0, 1.0, 0.9, 1e-9);
        let assumptions = RegimeAssumptions { beta1: 1.0, beta2: 4.0 };
        assert!(matches!(
            validate_strongly_convex_bound(&task, 1, 5, 5, assumptions, 0.05, 0),
            Err(BoundsError::UnstableLearningRate { .. })
        ));
    }
}
