//! Weakly-supervised target-speaker extraction trained on speaker-aware
//! mixtures of mixtures, with supervised, PIT and MixIT baselines.

pub mod cli;
pub mod corpus;
pub mod engine;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod signal;
