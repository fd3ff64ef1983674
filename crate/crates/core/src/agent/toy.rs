//! A deterministic miniature coexistence environment for learning sanity
//! checks: six selectable devices, two of them fast but sitting behind a
//! high-interference cell that drags the URLLC availability down whenever
//! they participate.
//!
//! Rewards follow the same availability/delay trade-off as the radio
//! environment, but every quantity is a closed-form function of the
//! selection, so the optimal fixed selection is computable by enumeration.

use super::{compute_reward, SelectionEnv, StepResult};
use crate::scenario::RewardWeights;

pub const TOY_DEVICES: usize = 6;
pub const TOY_REQUIRED: usize = 2;

/// Base upload-path delay of each device, seconds. The two noisy-cell
/// devices are the fastest, which makes them tempting.
const BASE_DELAY_S: [f64; TOY_DEVICES] = [0.8, 0.9, 1.0, 1.1, 0.3, 0.35];
/// Devices served by the high-interference cell.
const NOISY: [bool; TOY_DEVICES] = [false, false, false, false, true, true];
/// Availability shortfall each selected noisy-cell device inflicts.
const GAP_PER_NOISY: f64 = 0.01;
/// Queueing inflation per extra device beyond the minimum.
const LOAD_INFLATION: f64 = 0.05;
const SERVER_DELAY_S: f64 = 0.05;
const T_MAX_S: f64 = 10.0;

/// Deterministic toy coexistence scenario (N = 6, n = 2).
pub struct ToyCoexEnv {
    episode_len: usize,
    last_selection: Vec<bool>,
    last_delays: Vec<f64>,
    weights: RewardWeights,
}

impl ToyCoexEnv {
    pub fn new(episode_len: usize) -> Self {
        ToyCoexEnv {
            episode_len,
            last_selection: vec![false; TOY_DEVICES],
            last_delays: vec![0.0; TOY_DEVICES],
            weights: RewardWeights { upsilon: 0.5, zeta: 100.0 },
        }
    }

    /// Effective per-device delays under a selection of size m.
    fn effective_delays(selection: &[bool]) -> Vec<f64> {
        let m = selection.iter().filter(|&&s| s).count();
        let inflation = 1.0 + LOAD_INFLATION * (m.saturating_sub(TOY_REQUIRED)) as f64;
        (0..TOY_DEVICES).map(|i| BASE_DELAY_S[i] * inflation).collect()
    }

    /// Training delay of one iteration under the selection.
    pub fn training_delay(selection: &[bool]) -> f64 {
        let delays = Self::effective_delays(selection);
        let mut selected: Vec<f64> = (0..TOY_DEVICES)
            .filter(|&i| selection[i])
            .map(|i| delays[i])
            .collect();
        selected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (selected[TOY_REQUIRED - 1] + SERVER_DELAY_S).min(T_MAX_S)
    }

    /// Worst availability gap under the selection.
    pub fn availability_gap(selection: &[bool]) -> f64 {
        let noisy_selected = (0..TOY_DEVICES).filter(|&i| selection[i] && NOISY[i]).count();
        -GAP_PER_NOISY * noisy_selected as f64
    }

    /// Per-iteration reward of a selection; the environment is stationary,
    /// so a fixed selection earns this every step.
    pub fn selection_reward(&self, selection: &[bool]) -> f64 {
        compute_reward(
            Self::availability_gap(selection),
            Self::training_delay(selection),
            T_MAX_S,
            &self.weights,
        )
    }

    /// All feasible selections (at least n of the N devices).
    pub fn feasible_selections() -> Vec<Vec<bool>> {
        let mut all = Vec::new();
        for mask in 0u32..(1 << TOY_DEVICES) {
            if mask.count_ones() as usize >= TOY_REQUIRED {
                all.push((0..TOY_DEVICES).map(|i| mask & (1 << i) != 0).collect());
            }
        }
        all
    }

    /// Best fixed selection and its per-iteration reward, by enumeration.
    pub fn best_fixed_selection(&self) -> (Vec<bool>, f64) {
        Self::feasible_selections()
            .into_iter()
            .map(|sel| {
                let r = self.selection_reward(&sel);
                (sel, r)
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
    }
}

impl SelectionEnv for ToyCoexEnv {
    fn state_dim(&self) -> usize {
        3 * TOY_DEVICES
    }

    fn action_dim(&self) -> usize {
        TOY_DEVICES
    }

    fn required_updates(&self) -> usize {
        TOY_REQUIRED
    }

    fn episode_len(&self) -> usize {
        self.episode_len
    }

    fn reset(&mut self) -> Vec<f64> {
        self.last_selection = vec![false; TOY_DEVICES];
        self.last_delays = vec![0.0; TOY_DEVICES];
        self.observe()
    }

    fn step(&mut self, selection: &[bool]) -> StepResult {
        let reward = self.selection_reward(selection);
        let delay = Self::training_delay(selection);
        self.last_selection = selection.to_vec();
        self.last_delays = Self::effective_delays(selection)
            .iter()
            .zip(selection)
            .map(|(&d, &s)| if s { d } else { 0.0 })
            .collect();
        StepResult {
            state: self.observe(),
            reward,
            converged: false,
            training_delay_s: delay,
        }
    }
}

impl ToyCoexEnv {
    fn observe(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(3 * TOY_DEVICES);
        for i in 0..TOY_DEVICES {
            s.push(if self.last_selection[i] { 1.0 } else { 0.0 });
            s.push((self.last_delays[i] / T_MAX_S).clamp(0.0, 1.0));
            s.push(if NOISY[i] { 1.0 } else { 0.0 });
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exactly_57_feasible_selections() {
        assert_eq!(ToyCoexEnv::feasible_selections().len(), 57);
    }

    #[test]
    fn best_selection_avoids_the_noisy_cell() {
        let env = ToyCoexEnv::new(8);
        let (best, reward) = env.best_fixed_selection();
        assert!(!best[4] && !best[5], "noisy devices must not be worth it: {best:?}");
        // Two clean fast devices: delay 0.9 + 0.05 server.
        assert_eq!(best, vec![true, true, false, false, false, false]);
        let expect = 0.5 + 0.5 * (10.0 - 0.95) / 10.0;
        assert_abs_diff_eq!(reward, expect, epsilon = 1e-12);
    }

    #[test]
    fn environment_is_deterministic() {
        let mut env = ToyCoexEnv::new(4);
        env.reset();
        let sel = vec![true, false, true, false, true, false];
        let a = env.step(&sel);
        let mut env2 = ToyCoexEnv::new(4);
        env2.reset();
        let b = env2.step(&sel);
        assert_eq!(a.reward.to_bits(), b.reward.to_bits());
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn noisy_selections_pay_the_availability_penalty() {
        let env = ToyCoexEnv::new(4);
        let clean = vec![true, true, false, false, false, false];
        let mut one_noisy = clean.clone();
        one_noisy[4] = true;
        assert!(env.selection_reward(&one_noisy) < env.selection_reward(&clean));
        assert_abs_diff_eq!(ToyCoexEnv::availability_gap(&one_noisy), -0.01, epsilon = 1e-15);
    }
}
