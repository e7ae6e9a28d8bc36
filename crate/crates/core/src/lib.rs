//! Membership inference for language models from next-token traces.
//!
//! Scores are oriented so that a higher value means "more likely a training
//! member". The temperature-based scores compare a sample's token
//! probabilities under temperature-scaled softmax against the unscaled ones;
//! the remaining scores are the usual loss-based baselines.

pub mod acmia;
pub mod attack;
pub mod baselines;
pub mod calibrate;
pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod toylm;
pub mod trace;
pub mod tsp;

pub use attack::{score_sample, score_traces, Attack, AttackConfig, Auxiliary};
pub use error::{Error, Result};
pub use metrics::{auroc, roc_report, ScoreSet};
pub use trace::{Fidelity, Label, SampleTrace, TokenStep};
