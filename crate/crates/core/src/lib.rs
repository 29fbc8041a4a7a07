//! Self-supervised finetuning and parameter-free clustering of face tracks at
//! the embedding level.
//!
//! A dataset is a set of [`data::Track`]s, each an ordered list of crop feature
//! vectors. The pipeline alternates student/teacher self-distillation
//! ([`ssl`]) with dropout-based quality filtering ([`quality`]) and Gaussian
//! coarse matching ([`coarse`]), then groups the surviving tracks with the
//! learned loss metric ([`clustering`]). [`eval`] scores assignments against
//! ground truth.

pub mod cli;
pub mod clustering;
pub mod coarse;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod quality;
pub mod rng;
pub mod ssl;
pub mod synthetic;

pub use error::{Error, Result};
