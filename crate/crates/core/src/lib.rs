//! Checkpoint selection and weight averaging over SGD trajectories.
//!
//! The crate trains a small dense network with plain SGD, captures a window
//! of trailing checkpoints, and then builds an averaged model from that
//! window in one of several ways:
//!
//! - classic baselines: uniform last-k, SWA tail averaging, EMA, LAWA
//!   equal-interval selection, and random selection ([`averagers`]);
//! - SeWA: learn per-checkpoint selection probabilities by relaxing the
//!   discrete subset-selection objective with Gumbel-softmax sampling and
//!   running projected gradient descent on the probabilities ([`sewa`]).
//!
//! A companion stability lab ([`stability`]) evaluates the closed-form
//! generalization bounds associated with these averaging schemes and probes
//! their assumptions (gradient-map expansiveness, coupled-trajectory
//! divergence) numerically. [`bench`] wires everything into reproducible
//! desk-scale experiments.
//!
//! Everything is deterministic: all randomness flows through the
//! counter-based generator in [`rng`], keyed by explicit seeds, so identical
//! inputs produce bit-identical outputs across runs and thread counts.

pub mod averagers;
pub mod bench;
pub mod error;
pub mod nn;
pub mod rng;
pub mod sewa;
pub mod stability;
pub mod trajectory;

pub use error::{Error, Result};
pub use nn::{Activation, DatasetSplit, Labels, LossKind, MlpSpec, WeightVector};
pub use trajectory::{Checkpoint, LrSchedule, SgdConfig, TrajectoryWindow};
