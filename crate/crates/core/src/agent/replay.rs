//! Replay storage with proportional prioritized sampling over a sum tree,
//! plus a plain uniform mode.
//!
//! Priorities are |TD error| + epsilon raised to the priority exponent; new
//! transitions enter at the current maximum so everything is replayed at
//! least once. Sampling bias is corrected by importance weights
//! `(len * P(i))^-beta`, normalized by the batch maximum.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::scenario::ReplayMode;

const PRIORITY_EPS: f64 = 1e-6;

/// One stored interaction: (s, a, r, s', I).
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f64,
    pub next_state: Vec<f32>,
    /// Continuation flag I: false only at converged terminal states.
    pub nonterminal: bool,
}

/// Flat-array sum tree over `capacity` leaves.
#[derive(Debug, Clone)]
struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        SumTree { capacity, nodes: vec![0.0; 2 * capacity] }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn set(&mut self, leaf: usize, value: f64) {
        let mut idx = leaf + self.capacity;
        let delta = value - self.nodes[idx];
        while idx >= 1 {
            self.nodes[idx] += delta;
            idx /= 2;
        }
    }

    fn get(&self, leaf: usize) -> f64 {
        self.nodes[leaf + self.capacity]
    }

    /// Leaf whose prefix-sum interval contains `mass`.
    fn find(&self, mut mass: f64) -> usize {
        let mut idx = 1;
        while idx < self.capacity {
            let left = 2 * idx;
            if mass <= self.nodes[left] || self.nodes[left + 1] <= 0.0 {
                idx = left;
            } else {
                mass -= self.nodes[left];
                idx = left + 1;
            }
        }
        idx - self.capacity
    }
}

/// A sampled minibatch: indices into the buffer and importance weights.
#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Ring-buffer replay memory with optional prioritization.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    mode: ReplayMode,
    capacity: usize,
    alpha: f64,
    storage: Vec<Transition>,
    next_slot: usize,
    tree: SumTree,
    max_priority: f64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, alpha: f64, mode: ReplayMode) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            mode,
            capacity,
            alpha,
            storage: Vec::with_capacity(capacity.min(1 << 20)),
            next_slot: 0,
            tree: SumTree::new(capacity),
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.storage[index]
    }

    pub fn push(&mut self, transition: Transition) {
        let priority = self.max_priority.powf(self.alpha);
        if self.storage.len() < self.capacity {
            self.storage.push(transition);
            self.tree.set(self.storage.len() - 1, priority);
        } else {
            self.storage[self.next_slot] = transition;
            self.tree.set(self.next_slot, priority);
            self.next_slot = (self.next_slot + 1) % self.capacity;
        }
    }

    /// Draws `batch` indices. Prioritized mode samples proportionally to the
    /// stored priorities and returns max-normalized importance weights;
    /// uniform mode returns unit weights.
    pub fn sample(&self, batch: usize, beta: f64, rng: &mut ChaCha12Rng) -> SampledBatch {
        assert!(!self.is_empty());
        match self.mode {
            ReplayMode::Uniform => {
                let indices =
                    (0..batch).map(|_| rng.gen_range(0..self.storage.len())).collect();
                SampledBatch { indices, weights: vec![1.0; batch] }
            }
            ReplayMode::Prioritized => {
                let total = self.tree.total();
                let n = self.storage.len() as f64;
                let mut indices = Vec::with_capacity(batch);
                let mut weights = Vec::with_capacity(batch);
                for _ in 0..batch {
                    let mass = rng.gen::<f64>() * total;
                    let idx = self.tree.find(mass).min(self.storage.len() - 1);
                    let prob = self.tree.get(idx) / total;
                    indices.push(idx);
                    weights.push((n * prob).powf(-beta));
                }
                let max_w = weights.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
                weights.iter_mut().for_each(|w| *w /= max_w);
                SampledBatch { indices, weights }
            }
        }
    }

    /// Re-prioritizes sampled transitions from their fresh TD errors.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        if self.mode == ReplayMode::Uniform {
            return;
        }
        for (&idx, &td) in indices.iter().zip(td_errors) {
            let priority = td.abs() + PRIORITY_EPS;
            self.max_priority = self.max_priority.max(priority);
            self.tree.set(idx, priority.powf(self.alpha));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::derive_stream;

    fn transition(tag: f64) -> Transition {
        Transition {
            state: vec![tag as f32],
            action: vec![0.0],
            reward: tag,
            next_state: vec![0.0],
            nonterminal: true,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3, 0.6, ReplayMode::Prioritized);
        for i in 0..5 {
            buf.push(transition(i as f64));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| buf.get(i).reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn sampling_tracks_priorities_to_the_alpha() {
        // Empirical frequencies over 1e5 draws follow p^alpha.
        let alpha = 0.6;
        let mut buf = ReplayBuffer::new(8, alpha, ReplayMode::Prioritized);
        for i in 0..4 {
            buf.push(transition(i as f64));
        }
        let priorities = [0.5, 1.0, 2.0, 4.0];
        buf.update_priorities(&[0, 1, 2, 3], &priorities);
        let mut rng = derive_stream(11, "replay-sampling");
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            let s = buf.sample(1, 0.4, &mut rng);
            counts[s.indices[0]] += 1;
        }
        let weighted: Vec<f64> =
            priorities.iter().map(|p| (p + PRIORITY_EPS).powf(alpha)).collect();
        let total: f64 = weighted.iter().sum();
        for (i, &c) in counts.iter().enumerate() {
            let expect = weighted[i] / total;
            let got = c as f64 / draws as f64;
            assert!(
                (got - expect).abs() < 0.01,
                "index {i}: got {got}, expected {expect}"
            );
        }
    }

    #[test]
    fn importance_weights_penalize_frequent_samples() {
        let mut buf = ReplayBuffer::new(4, 1.0, ReplayMode::Prioritized);
        for i in 0..2 {
            buf.push(transition(i as f64));
        }
        buf.update_priorities(&[0, 1], &[9.0, 1.0]);
        let mut rng = derive_stream(3, "replay-sampling");
        // Weights are normalized by the batch maximum, so compare within
        // one batch that contains both transitions.
        let mut w_hot = f64::NAN;
        let mut w_cold = f64::NAN;
        for _ in 0..50 {
            let s = buf.sample(64, 1.0, &mut rng);
            for (&idx, &w) in s.indices.iter().zip(&s.weights) {
                if idx == 0 {
                    w_hot = w;
                } else {
                    w_cold = w;
                }
            }
            if w_hot.is_finite() && w_cold.is_finite() {
                break;
            }
        }
        assert!(w_hot < w_cold, "hot {w_hot} cold {w_cold}");
        assert!(w_hot <= 1.0 + 1e-12 && w_cold <= 1.0 + 1e-12);
    }

    #[test]
    fn uniform_mode_gives_unit_weights() {
        let mut buf = ReplayBuffer::new(4, 0.6, ReplayMode::Uniform);
        for i in 0..4 {
            buf.push(transition(i as f64));
        }
        let mut rng = derive_stream(5, "replay-sampling");
        let s = buf.sample(16, 0.4, &mut rng);
        assert!(s.weights.iter().all(|&w| w == 1.0));
    }
}
