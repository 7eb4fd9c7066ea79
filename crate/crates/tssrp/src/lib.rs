//! Sampling-controlled multi-stream change-point detection.
//!
//! A monitoring problem with a hard observation budget: `K` independent data
//! streams may change distribution at an unknown time, but only `q < K` of
//! them can be measured per round. This crate implements a Thompson-style
//! randomized allocation rule layered on Shiryaev–Roberts evidence
//! statistics — each round every stream draws a fresh weight from a prior,
//! scores itself by accumulated evidence plus weighted unexplored mass, and
//! the top-`q` scores are observed next — together with a
//! compensated-CUSUM baseline, Monte-Carlo threshold calibration, synthetic
//! experiment scenarios, and a line-oriented live monitoring protocol.
//!
//! Entry points:
//! - [`detector::TssrpDetector`] — the randomized detector, stepped one
//!   panel at a time.
//! - [`baselines::TrasDetector`] — the deterministic compensation baseline.
//! - [`calibration::calibrate_threshold`] — Monte-Carlo search for the
//!   alarm threshold matching a false-alarm budget.
//! - [`sim`] — synthetic panels, a correlated production-line scenario, and
//!   replicated delay experiments.
//! - [`config`] — the TOML configuration surface shared with the CLI.
//! - [`live`] — the pull-based record/layout protocol for real data feeds.
//!
//! Everything randomized is reproducible: one master seed determines every
//! draw through documented per-purpose derivation (see [`seeding`]).

pub mod baselines;
pub mod bayes_oracle;
pub mod calibration;
pub mod config;
pub mod detector;
pub mod error;
pub mod live;
pub mod math;
pub mod models;
pub mod priors;
pub mod report;
pub mod seeding;
pub mod sim;
pub mod verify;

pub use error::{Result, TssrpError};
