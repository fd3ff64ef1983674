//! Soft actor-critic learner: twin critics with target networks, a squashed
//! Gaussian actor with a target copy, clipped double-Q targets, prioritized
//! replay with importance-weight correction, and optional temperature
//! auto-tuning toward a target entropy of minus the action dimension.
//!
//! All gradients are computed analytically through the hand-rolled networks,
//! including the tanh log-probability correction of the reparameterized
//! actor samples.

use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::nn::{clip_global_norm, Adam, Mlp};
use super::replay::{ReplayBuffer, SampledBatch, Transition};
use crate::scenario::{derive_stream, AgentHyperparams, TemperatureMode};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const GRAD_CLIP_NORM: f64 = 10.0;
const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Squashed-Gaussian head decoded from raw actor outputs.
#[derive(Debug, Clone)]
pub struct PolicyHead {
    pub mean: Vec<f64>,
    /// Clamped log standard deviations.
    pub log_std: Vec<f64>,
    /// Clamp-active mask (gradient blocked where true).
    clamped: Vec<bool>,
}

pub fn decode_policy_head(raw: &[f64], action_dim: usize) -> PolicyHead {
    assert_eq!(raw.len(), 2 * action_dim);
    let mean = raw[..action_dim].to_vec();
    let mut log_std = Vec::with_capacity(action_dim);
    let mut clamped = Vec::with_capacity(action_dim);
    for &v in &raw[action_dim..] {
        let c = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        clamped.push(v != c);
        log_std.push(c);
    }
    PolicyHead { mean, log_std, clamped }
}

/// A reparameterized action with its log-probability.
#[derive(Debug, Clone)]
pub struct SampledAction {
    pub action: Vec<f64>,
    pub log_prob: f64,
    /// Pre-squash values u = mean + std * noise.
    pub pre_squash: Vec<f64>,
}

/// Applies the squashing and the tanh-corrected log-density for one noise
/// draw: a = tanh(mean + std * noise).
pub fn squash(head: &PolicyHead, noise: &[f64]) -> SampledAction {
    let mut action = Vec::with_capacity(head.mean.len());
    let mut pre_squash = Vec::with_capacity(head.mean.len());
    let mut log_prob = 0.0;
    for i in 0..head.mean.len() {
        let std = head.log_std[i].exp();
        let u = head.mean[i] + std * noise[i];
        let a = u.tanh();
        log_prob += -0.5 * noise[i] * noise[i]
            - HALF_LN_TWO_PI
            - head.log_std[i]
            - 2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u));
        action.push(a);
        pre_squash.push(u);
    }
    SampledAction { action, log_prob, pre_squash }
}

/// Log-density of a given squashed action under the head.
pub fn log_prob_of(head: &PolicyHead, action: &[f64]) -> f64 {
    let mut log_prob = 0.0;
    for i in 0..head.mean.len() {
        let a = action[i].clamp(-1.0 + 1e-12, 1.0 - 1e-12);
        let u = a.atanh();
        let std = head.log_std[i].exp();
        let chi = (u - head.mean[i]) / std;
        log_prob += -0.5 * chi * chi
            - HALF_LN_TWO_PI
            - head.log_std[i]
            - 2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u));
    }
    log_prob
}

/// One critic training sample: concatenated (state, action), frozen target,
/// and importance weight.
#[derive(Debug, Clone)]
pub struct CriticSample {
    pub state_action: Vec<f64>,
    pub target: f64,
    pub weight: f64,
}

/// Mean of 0.5 * w * (Q(s,a) - target)^2 over the batch.
pub fn critic_batch_loss(critic: &Mlp, samples: &[CriticSample]) -> f64 {
    let inv = 1.0 / samples.len() as f64;
    samples
        .iter()
        .map(|s| {
            let q = critic.forward(&s.state_action)[0];
            0.5 * s.weight * (q - s.target) * (q - s.target)
        })
        .sum::<f64>()
        * inv
}

/// Loss, flat parameter gradient, and per-sample TD errors.
pub fn critic_batch_grads(critic: &Mlp, samples: &[CriticSample]) -> (f64, Vec<f64>, Vec<f64>) {
    let inv = 1.0 / samples.len() as f64;
    let mut grads = vec![0.0; critic.param_count()];
    let mut loss = 0.0;
    let mut tds = Vec::with_capacity(samples.len());
    for s in samples {
        let (out, trace) = critic.forward_traced(&s.state_action);
        let err = out[0] - s.target;
        tds.push(err);
        loss += 0.5 * s.weight * err * err * inv;
        critic.backward(&trace, &[s.weight * err * inv], &mut grads);
    }
    (loss, grads, tds)
}

/// One actor training sample: the state, a frozen standard-normal draw, and
/// an importance weight.
#[derive(Debug, Clone)]
pub struct ActorSample {
    pub state: Vec<f64>,
    pub noise: Vec<f64>,
    pub weight: f64,
}

/// Mean of w * (psi * log pi(a|s) - min_i Q_i(s, a)) with reparameterized a.
pub fn actor_batch_loss(
    actor: &Mlp,
    critics: (&Mlp, &Mlp),
    psi: f64,
    action_dim: usize,
    samples: &[ActorSample],
) -> f64 {
    let inv = 1.0 / samples.len() as f64;
    samples
        .iter()
        .map(|s| {
            let head = decode_policy_head(&actor.forward(&s.state), action_dim);
            let sampled = squash(&head, &s.noise);
            let mut sa = s.state.clone();
            sa.extend_from_slice(&sampled.action);
            let q1 = critics.0.forward(&sa)[0];
            let q2 = critics.1.forward(&sa)[0];
            s.weight * (psi * sampled.log_prob - q1.min(q2))
        })
        .sum::<f64>()
        * inv
}

/// Summary statistics of an actor gradient pass.
#[derive(Debug, Clone, Copy)]
pub struct ActorPassStats {
    pub loss: f64,
    /// Mean log-probability of the fresh samples (entropy estimate is its
    /// negation).
    pub mean_log_prob: f64,
}

/// Loss and flat actor-parameter gradient; critics are held fixed.
pub fn actor_batch_grads(
    actor: &Mlp,
    critics: (&Mlp, &Mlp),
    psi: f64,
    action_dim: usize,
    samples: &[ActorSample],
) -> (ActorPassStats, Vec<f64>) {
    let inv = 1.0 / samples.len() as f64;
    let mut grads = vec![0.0; actor.param_count()];
    let mut loss = 0.0;
    let mut sum_log_prob = 0.0;
    for s in samples {
        let (raw, trace) = actor.forward_traced(&s.state);
        let head = decode_policy_head(&raw, action_dim);
        let sampled = squash(&head, &s.noise);
        sum_log_prob += sampled.log_prob;

        let mut sa = s.state.clone();
        sa.extend_from_slice(&sampled.action);
        let (q1, trace1) = critics.0.forward_traced(&sa);
        let (q2, trace2) = critics.1.forward_traced(&sa);
        let use_first = q1[0] <= q2[0];
        loss += s.weight * (psi * sampled.log_prob - q1[0].min(q2[0])) * inv;

        // dLoss/da through the minimum critic's input gradient.
        let mut scratch = vec![0.0; critics.0.param_count()];
        let din = if use_first {
            critics.0.backward(&trace1, &[1.0], &mut scratch)
        } else {
            critics.1.backward(&trace2, &[1.0], &mut scratch)
        };
        let dq_da = &din[s.state.len()..];

        let coeff = s.weight * inv;
        let mut grad_raw = vec![0.0; 2 * action_dim];
        for i in 0..action_dim {
            let a = sampled.action[i];
            let std = head.log_std[i].exp();
            // d logp / du includes the tanh correction; d a / du = 1 - a^2.
            let dlogp_du = 2.0 * a;
            let du_dls = std * s.noise[i];
            let dl_du = coeff * (psi * dlogp_du - dq_da[i] * (1.0 - a * a));
            let dl_dls = dl_du * du_dls - coeff * psi; // -psi from the -log_std term
            grad_raw[i] = dl_du;
            grad_raw[action_dim + i] = if head.clamped[i] { 0.0 } else { dl_dls };
        }
        actor.backward(&trace, &grad_raw, &mut grads);
    }
    (ActorPassStats { loss, mean_log_prob: sum_log_prob * inv }, grads)
}

/// Clipped double-Q target: r + I * lambda * (min_i Q~_i(s', a~) - psi ln pi(a~|s')).
pub fn critic_target(
    reward: f64,
    nonterminal: bool,
    discount: f64,
    psi: f64,
    next_min_q: f64,
    next_log_prob: f64,
) -> f64 {
    if nonterminal {
        reward + discount * (next_min_q - psi * next_log_prob)
    } else {
        reward
    }
}

/// Everything the learner owns: online and target networks plus temperature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacParams {
    pub actor: Mlp,
    pub target_actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target_critic1: Mlp,
    pub target_critic2: Mlp,
    pub log_psi: f64,
}

/// Versioned checkpoint payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub state_dim: usize,
    pub action_dim: usize,
    pub params: SacParams,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Report of one training step.
#[derive(Debug, Clone, Copy)]
pub struct TrainReport {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
    /// Estimated policy entropy (negated mean log-probability).
    pub entropy: f64,
    pub psi: f64,
}

/// Outcome of a training request.
#[derive(Debug, Clone, Copy)]
pub enum TrainOutcome {
    /// Buffer below the minimum fill; nothing happened.
    Skipped { buffered: usize, minimum: usize },
    Trained(TrainReport),
}

/// The SAC learner: owns parameters, optimizers, replay, and RNG streams.
pub struct SacLearner {
    state_dim: usize,
    action_dim: usize,
    hyper: AgentHyperparams,
    params: SacParams,
    opt_actor: Adam,
    opt_critic1: Adam,
    opt_critic2: Adam,
    opt_psi: Adam,
    target_entropy: f64,
    replay: ReplayBuffer,
    rng_explore: ChaCha12Rng,
    rng_train: ChaCha12Rng,
    rng_replay: ChaCha12Rng,
    env_iterations: u64,
}

impl SacLearner {
    pub fn new(state_dim: usize, action_dim: usize, hyper: &AgentHyperparams, seed: u64) -> Self {
        let mut rng_init = derive_stream(seed, "agent-init");
        let mut actor_dims = vec![state_dim];
        actor_dims.extend(&hyper.hidden);
        actor_dims.push(2 * action_dim);
        let mut critic_dims = vec![state_dim + action_dim];
        critic_dims.extend(&hyper.hidden);
        critic_dims.push(1);

        let actor = Mlp::new(&actor_dims, &mut rng_init);
        let critic1 = Mlp::new(&critic_dims, &mut rng_init);
        let critic2 = Mlp::new(&critic_dims, &mut rng_init);
        let params = SacParams {
            target_actor: actor.clone(),
            target_critic1: critic1.clone(),
            target_critic2: critic2.clone(),
            actor,
            critic1,
            critic2,
            log_psi: match hyper.temperature {
                TemperatureMode::Fixed { psi } => psi.ln(),
                TemperatureMode::Auto => 0.0,
            },
        };
        let lr = hyper.learning_rate;
        SacLearner {
            state_dim,
            action_dim,
            opt_actor: Adam::new(lr, params.actor.param_count()),
            opt_critic1: Adam::new(lr, params.critic1.param_count()),
            opt_critic2: Adam::new(lr, params.critic2.param_count()),
            opt_psi: Adam::new(lr, 1),
            target_entropy: -(action_dim as f64),
            replay: ReplayBuffer::new(hyper.replay_capacity, hyper.priority_alpha, hyper.replay_mode),
            rng_explore: derive_stream(seed, "exploration"),
            rng_train: derive_stream(seed, "train-noise"),
            rng_replay: derive_stream(seed, "replay-sampling"),
            env_iterations: 0,
            params,
            hyper: hyper.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint, hyper: &AgentHyperparams, seed: u64) -> Self {
        let mut learner = Self::new(ckpt.state_dim, ckpt.action_dim, hyper, seed);
        learner.params = ckpt.params;
        learner
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            params: self.params.clone(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn psi(&self) -> f64 {
        self.params.log_psi.exp()
    }

    pub fn params(&self) -> &SacParams {
        &self.params
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn env_iterations(&self) -> u64 {
        self.env_iterations
    }

    /// Samples an action for the given state. Deterministic mode returns the
    /// squashed mean (evaluation); stochastic mode draws through the
    /// exploration stream.
    pub fn act(&mut self, state: &[f64], deterministic: bool) -> Vec<f64> {
        let head = decode_policy_head(&self.params.actor.forward(state), self.action_dim);
        if deterministic {
            head.mean.iter().map(|m| m.tanh()).collect()
        } else {
            let noise: Vec<f64> = (0..self.action_dim)
                .map(|_| {
                    <StandardNormal as Distribution<f64>>::sample(
                        &StandardNormal,
                        &mut self.rng_explore,
                    )
                })
                .collect();
            squash(&head, &noise).action
        }
    }

    /// Stores one environment transition and counts the iteration for the
    /// training cadence.
    pub fn push_transition(
        &mut self,
        state: &[f64],
        action: &[f64],
        reward: f64,
        next_state: &[f64],
        nonterminal: bool,
    ) {
        self.env_iterations += 1;
        self.replay.push(Transition {
            state: state.iter().map(|&x| x as f32).collect(),
            action: action.iter().map(|&x| x as f32).collect(),
            reward,
            next_state: next_state.iter().map(|&x| x as f32).collect(),
            nonterminal,
        });
    }

    /// True whenever the algorithm's cadence calls for a training step: one
    /// minibatch every `minibatch` environment iterations once the buffer
    /// holds the minimum fill.
    pub fn should_train(&self) -> bool {
        self.replay.len() >= self.hyper.min_buffer
            && self.env_iterations % self.hyper.minibatch as u64 == 0
    }

    /// One gradient step on both critics, the actor, and (in auto mode) the
    /// temperature, followed by soft target updates.
    pub fn train_step(&mut self) -> TrainOutcome {
        if self.replay.len() < self.hyper.min_buffer {
            return TrainOutcome::Skipped {
                buffered: self.replay.len(),
                minimum: self.hyper.min_buffer,
            };
        }
        let batch: SampledBatch = self.replay.sample(
            self.hyper.minibatch,
            self.hyper.priority_beta,
            &mut self.rng_replay,
        );
        let psi = self.psi();
        let discount = self.hyper.discount;

        // Frozen clipped double-Q targets from the target networks.
        let mut critic_samples1 = Vec::with_capacity(batch.indices.len());
        let mut critic_samples2 = Vec::with_capacity(batch.indices.len());
        let mut actor_samples = Vec::with_capacity(batch.indices.len());
        for (&idx, &weight) in batch.indices.iter().zip(&batch.weights) {
            let tr = self.replay.get(idx);
            let state: Vec<f64> = tr.state.iter().map(|&x| x as f64).collect();
            let action: Vec<f64> = tr.action.iter().map(|&x| x as f64).collect();
            let next_state: Vec<f64> = tr.next_state.iter().map(|&x| x as f64).collect();

            let next_head = decode_policy_head(
                &self.params.target_actor.forward(&next_state),
                self.action_dim,
            );
            let noise: Vec<f64> = (0..self.action_dim)
                .map(|_| {
                    <StandardNormal as Distribution<f64>>::sample(
                        &StandardNormal,
                        &mut self.rng_train,
                    )
                })
                .collect();
            let next_action = squash(&next_head, &noise);
            let mut next_sa = next_state.clone();
            next_sa.extend_from_slice(&next_action.action);
            let q1 = self.params.target_critic1.forward(&next_sa)[0];
            let q2 = self.params.target_critic2.forward(&next_sa)[0];
            let target = critic_target(
                tr.reward,
                tr.nonterminal,
                discount,
                psi,
                q1.min(q2),
                next_action.log_prob,
            );

            let mut sa = state.clone();
            sa.extend_from_slice(&action);
            critic_samples1.push(CriticSample { state_action: sa.clone(), target, weight });
            critic_samples2.push(CriticSample { state_action: sa, target, weight });

            let actor_noise: Vec<f64> = (0..self.action_dim)
                .map(|_| {
                    <StandardNormal as Distribution<f64>>::sample(
                        &StandardNormal,
                        &mut self.rng_train,
                    )
                })
                .collect();
            actor_samples.push(ActorSample { state, noise: actor_noise, weight });
        }

        let (loss1, mut grads1, td1) = critic_batch_grads(&self.params.critic1, &critic_samples1);
        clip_global_norm(&mut grads1, GRAD_CLIP_NORM);
        self.opt_critic1.apply(self.params.critic1.params_mut(), &grads1);

        let (loss2, mut grads2, td2) = critic_batch_grads(&self.params.critic2, &critic_samples2);
        clip_global_norm(&mut grads2, GRAD_CLIP_NORM);
        self.opt_critic2.apply(self.params.critic2.params_mut(), &grads2);

        let (stats, mut actor_grads) = actor_batch_grads(
            &self.params.actor,
            (&self.params.critic1, &self.params.critic2),
            psi,
            self.action_dim,
            &actor_samples,
        );
        clip_global_norm(&mut actor_grads, GRAD_CLIP_NORM);
        self.opt_actor.apply(self.params.actor.params_mut(), &actor_grads);

        if matches!(self.hyper.temperature, TemperatureMode::Auto) {
            // J(psi) = E[-psi (log pi + target_entropy)]
            let grad_log_psi = -psi * (stats.mean_log_prob + self.target_entropy);
            let mut slot = [self.params.log_psi];
            self.opt_psi.apply(&mut slot, &[grad_log_psi]);
            self.params.log_psi = slot[0].clamp(-20.0, 5.0);
        }

        // Gradual target updates keep the temporal-difference error low.
        let nu = self.hyper.soft_update;
        self.params.target_critic1.soft_update_from(&self.params.critic1, nu);
        self.params.target_critic2.soft_update_from(&self.params.critic2, nu);
        self.params.target_actor.soft_update_from(&self.params.actor, nu);

        let tds: Vec<f64> =
            td1.iter().zip(&td2).map(|(a, b)| 0.5 * (a.abs() + b.abs())).collect();
        self.replay.update_priorities(&batch.indices, &tds);

        TrainOutcome::Trained(TrainReport {
            critic1_loss: loss1,
            critic2_loss: loss2,
            actor_loss: stats.loss,
            entropy: -stats.mean_log_prob,
            psi: self.psi(),
        })
    }
}
