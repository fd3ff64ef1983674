//! The device-selection MDP and its soft actor-critic solver: action
//! mapping, reward, state assembly, the episode loop, and the learner.

pub mod env;
pub mod nn;
pub mod replay;
pub mod sac;
pub mod toy;

use crate::scenario::RewardWeights;
use sac::{SacLearner, TrainOutcome, TrainReport};

/// Maps a continuous action in [-1, 1]^N to a device-selection indicator
/// with at least `n` devices.
///
/// If at least n entries are nonnegative, every nonnegative entry selects its
/// device; otherwise the threshold drops to the n-th largest entry. Exact
/// duplicates of the threshold may select more than n devices, which the
/// one-sided constraint permits.
pub fn map_action(action: &[f64], n: usize) -> Vec<bool> {
    assert!(n >= 1 && n <= action.len(), "need 1 <= n <= N");
    let nonneg = action.iter().filter(|&&a| a >= 0.0).count();
    if nonneg >= n {
        action.iter().map(|&a| a >= 0.0).collect()
    } else {
        let mut sorted = action.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite actions"));
        let threshold = sorted[n - 1];
        action.iter().map(|&a| a >= threshold).collect()
    }
}

/// Reward of one iteration: an exponential penalty on the worst availability
/// shortfall plus a linear bonus for finishing the iteration early.
///
/// `worst_gap` is the minimum of (estimated availability - requirement) over
/// all URLLC devices and directions.
pub fn compute_reward(
    worst_gap: f64,
    training_delay_s: f64,
    t_max_s: f64,
    weights: &RewardWeights,
) -> f64 {
    let urllc = weights.upsilon * (weights.zeta * worst_gap.min(0.0)).exp();
    let ai = (1.0 - weights.upsilon) * (t_max_s - training_delay_s) / t_max_s;
    urllc + ai
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub reward: f64,
    pub converged: bool,
    pub training_delay_s: f64,
}

/// A device-selection environment the episode loop (and the baselines) can
/// drive: one step is one distributed-learning iteration.
pub trait SelectionEnv {
    fn state_dim(&self) -> usize;
    /// Number of selectable devices, N.
    fn action_dim(&self) -> usize;
    /// Minimum devices per iteration, n.
    fn required_updates(&self) -> usize;
    /// Iteration budget per episode, K.
    fn episode_len(&self) -> usize;
    /// Starts a fresh episode (including any warmup) and returns s_1.
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, selection: &[bool]) -> StepResult;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeMode {
    /// Store transitions and train on the configured cadence.
    Train,
    /// Deterministic policy, no replay writes, no training.
    Eval,
}

/// Everything observed over one episode.
#[derive(Debug, Clone, Default)]
pub struct EpisodeTrace {
    pub rewards: Vec<f64>,
    pub training_delays_s: Vec<f64>,
    pub selection_sizes: Vec<usize>,
    pub selections: Vec<Vec<bool>>,
    pub converged: bool,
    pub transitions_stored: usize,
    pub train_reports: Vec<(u64, TrainReport)>,
}

/// Runs one episode: observe, act, map, step, store, and train on cadence.
pub fn run_episode(
    env: &mut impl SelectionEnv,
    learner: &mut SacLearner,
    mode: EpisodeMode,
) -> EpisodeTrace {
    let mut trace = EpisodeTrace::default();
    let mut state = env.reset();
    for _ in 0..env.episode_len() {
        let action = learner.act(&state, mode == EpisodeMode::Eval);
        let selection = map_action(&action, env.required_updates());
        let result = env.step(&selection);
        trace.rewards.push(result.reward);
        trace.training_delays_s.push(result.training_delay_s);
        trace.selection_sizes.push(selection.iter().filter(|&&s| s).count());
        trace.selections.push(selection);
        if mode == EpisodeMode::Train {
            learner.push_transition(
                &state,
                &action,
                result.reward,
                &result.state,
                !result.converged,
            );
            trace.transitions_stored += 1;
            if learner.should_train() {
                if let TrainOutcome::Trained(report) = learner.train_step() {
                    trace.train_reports.push((learner.env_iterations(), report));
                }
            }
        }
        state = result.state;
        if result.converged {
            trace.converged = true;
            break;
        }
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::AgentHyperparams;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn map_action_first_branch() {
        let sel = map_action(&[0.5, -0.2, 0.1, -0.9], 2);
        assert_eq!(sel, vec![true, false, true, false]);
    }

    #[test]
    fn map_action_second_branch_top_n() {
        let sel = map_action(&[-0.1, -0.2, -0.3, -0.4], 2);
        assert_eq!(sel, vec![true, true, false, false]);
    }

    #[test]
    fn map_action_zero_counts_as_selected() {
        let sel = map_action(&[0.0, 0.0, 0.0], 2);
        assert_eq!(sel, vec![true, true, true]);
    }

    #[test]
    fn reward_worked_examples() {
        let w = RewardWeights { upsilon: 0.5, zeta: 100.0 };
        // All requirements met, slowest possible iteration.
        assert_abs_diff_eq!(compute_reward(0.0, 10.0, 10.0, &w), 0.5, epsilon = 1e-12);
        // All requirements met, instant iteration.
        assert_abs_diff_eq!(compute_reward(0.02, 0.0, 10.0, &w), 1.0, epsilon = 1e-12);
        // Worst gap -0.01 with zeta=100 decays the URLLC half by e^-1.
        let r = compute_reward(-0.01, 5.0, 10.0, &w);
        assert_abs_diff_eq!(r, 0.5 * (-1.0f64).exp() + 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(r, 0.4339, epsilon = 1e-4);
    }

    proptest! {
        /// At least n devices always come back selected, over both branches.
        #[test]
        fn map_action_selects_at_least_n(
            action in proptest::collection::vec(-1.0f64..=1.0, 1..24),
            n_raw in 1usize..24,
        ) {
            let n = n_raw.min(action.len());
            let sel = map_action(&action, n);
            prop_assert!(sel.iter().filter(|&&s| s).count() >= n);
        }

        /// Reward stays bounded with the URLLC and AI parts in their bands.
        #[test]
        fn reward_bounds(
            gap in -1.0f64..=1.0,
            delay_frac in 0.0f64..=1.0,
            upsilon in 0.0f64..=1.0,
            zeta in 0.1f64..200.0,
        ) {
            let w = RewardWeights { upsilon, zeta };
            let t_max = 10.0;
            let r = compute_reward(gap, delay_frac * t_max, t_max, &w);
            prop_assert!(r <= 1.0 + 1e-12);
            prop_assert!(r >= 0.0);
            let urllc = w.upsilon * (w.zeta * gap.min(0.0)).exp();
            prop_assert!(urllc >= 0.0 && urllc <= upsilon + 1e-12);
            let ai = (1.0 - upsilon) * (1.0 - delay_frac);
            prop_assert!(ai >= -1e-12 && ai <= 1.0 - upsilon + 1e-12);
        }

        /// Nonincreasing in delay, nondecreasing in the availability gap.
        #[test]
        fn reward_monotonicity(
            gap in -0.5f64..=0.5,
            bump in 0.0f64..0.5,
            delay in 0.0f64..=9.0,
            extra in 0.0f64..1.0,
        ) {
            let w = RewardWeights { upsilon: 0.5, zeta: 100.0 };
            let base = compute_reward(gap, delay, 10.0, &w);
            prop_assert!(compute_reward(gap, delay + extra, 10.0, &w) <= base + 1e-12);
            prop_assert!(compute_reward(gap + bump, delay, 10.0, &w) + 1e-12 >= base);
        }
    }

    /// Minimal deterministic environment for the episode-loop contracts.
    struct CountingEnv {
        steps: usize,
        converge_at: Option<usize>,
    }

    impl SelectionEnv for CountingEnv {
        fn state_dim(&self) -> usize {
            3
        }
        fn action_dim(&self) -> usize {
            4
        }
        fn required_updates(&self) -> usize {
            2
        }
        fn episode_len(&self) -> usize {
            6
        }
        fn reset(&mut self) -> Vec<f64> {
            self.steps = 0;
            vec![0.0; 3]
        }
        fn step(&mut self, selection: &[bool]) -> StepResult {
            assert!(selection.iter().filter(|&&s| s).count() >= 2);
            self.steps += 1;
            StepResult {
                state: vec![self.steps as f64 * 0.1; 3],
                reward: 0.5,
                converged: self.converge_at == Some(self.steps),
                training_delay_s: 1.0,
            }
        }
    }

    fn tiny_hyper() -> AgentHyperparams {
        AgentHyperparams {
            hidden: vec![8],
            minibatch: 4,
            min_buffer: 2,
            replay_capacity: 64,
            ..AgentHyperparams::default()
        }
    }

    #[test]
    fn eval_mode_never_writes_replay() {
        let mut env = CountingEnv { steps: 0, converge_at: None };
        let mut learner = SacLearner::new(3, 4, &tiny_hyper(), 5);
        let trace = run_episode(&mut env, &mut learner, EpisodeMode::Eval);
        assert_eq!(learner.replay_len(), 0);
        assert_eq!(trace.transitions_stored, 0);
        assert_eq!(trace.rewards.len(), 6);
    }

    #[test]
    fn immediate_convergence_gives_single_transition() {
        let mut env = CountingEnv { steps: 0, converge_at: Some(1) };
        let mut learner = SacLearner::new(3, 4, &tiny_hyper(), 6);
        let trace = run_episode(&mut env, &mut learner, EpisodeMode::Train);
        assert!(trace.converged);
        assert_eq!(trace.transitions_stored, 1);
        assert_eq!(learner.replay_len(), 1);
    }

    #[test]
    fn stored_transitions_match_iterations() {
        let mut env = CountingEnv { steps: 0, converge_at: None };
        let mut learner = SacLearner::new(3, 4, &tiny_hyper(), 7);
        let trace = run_episode(&mut env, &mut learner, EpisodeMode::Train);
        assert_eq!(trace.transitions_stored, trace.rewards.len());
        assert_eq!(learner.replay_len(), trace.rewards.len());
    }
}
