//! Exact, desk-scale reward learning from demonstrations.
//!
//! This crate implements supervised fine-tuning, explicit reward-learning
//! fine-tuning (a sampled minimax loop over a reward table), and implicit
//! reward-learning fine-tuning (self-generation contrasts through the
//! policy's own log-ratios) over problem sizes small enough to enumerate.
//! Everything a trainer estimates by sampling has an exact counterpart
//! here — enumerated objectives, closed-form optima, and a brute-force
//! stationary-point search — so the stochastic paths can be held to
//! numerical tolerances instead of eyeballed learning curves.
//!
//! Layout:
//!
//! - [`domain`]: vocabularies, prompts, continuations, datasets, JSONL IO.
//! - [`tabular`]: the enumerated (prompt, continuation) index.
//! - [`policy`] / [`reward`]: the two model families of each kind.
//! - [`gradients`]: the per-sample update kernels and exact objectives.
//! - [`trainers`]: the three seeded training loops with traces.
//! - [`oracle`]: finite differences, closed forms, the check battery.
//! - [`evaluation`]: log-probability gaps, win rates, pairwise diagnostics.
//! - [`data_synth`]: seeded synthetic worlds and datasets.
//! - [`checkpoint`]: plain-text model snapshots.

pub mod checkpoint;
pub mod data_synth;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod gradients;
pub mod instances;
pub mod numerics;
pub mod oracle;
pub mod params;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod tabular;
pub mod trainers;

pub use error::{CoreError, Result};
pub use params::ParamVector;
pub use rng::Rng;
