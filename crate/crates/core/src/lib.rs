//! Discrete-event simulation of a small indoor cellular deployment where
//! periodic URLLC traffic and an n-sync distributed-learning workload share
//! the radio, plus a soft actor-critic agent that picks which learning
//! devices participate in each iteration.
//!
//! The crate is organized around the pipeline:
//!
//! * [`scenario`] — experiment configuration, validation, and the seeded RNG
//!   hierarchy every stochastic subsystem draws from.
//! * [`channel`] — InF-DH path loss, LOS probability, shadowing, and the
//!   SINR-with-interference computation.
//! * [`ransim`] — the TTI-resolution engine: traffic, RLC buffers,
//!   strict-priority scheduling, HARQ/RLC retransmissions, deliveries.
//! * [`metrics`] — availability timelines (network/application state),
//!   training-delay order statistics, and per-window observation stats.
//! * [`distlearn`] — the n-sync learning protocol on synthetic tasks and the
//!   analytic convergence-bound calculators.
//! * [`agent`] — MDP state/action/reward plus the from-scratch SAC learner
//!   (feed-forward nets, reverse-mode gradients, prioritized replay).
//! * [`harness`] — baselines, experiment plans, CSV emission.

pub mod agent;
pub mod channel;
pub mod distlearn;
pub mod harness;
pub mod metrics;
pub mod ransim;
pub mod scenario;
