//! Two-phase Bloom-filter missing tag detection for RFID systems.
//!
//! A reader monitoring a set of expected tags must report, with probability
//! at least `alpha`, whenever `M` or more of them are gone, even while an
//! unknown number of unexpected tags share the channel. Phase 1 broadcasts
//! filters over the expected IDs so unexpected tags silence themselves;
//! Phase 2 has the remaining tags form a Bloom filter in the air and checks
//! every expected ID against it.
//!
//! - [`bloom`]: seeded filters, air-formed frames, bit-exact encoding.
//! - [`optimizer`]: closed-form tuning of both phases.
//! - [`protocol`]: reader and tag state machines.
//! - [`estimator`]: unexpected-population estimation front-end.
//! - [`sim`]: Monte Carlo experiments.
//! - [`config`]: TOML run configuration.

pub mod bloom;
pub mod config;
pub mod error;
pub mod estimator;
pub mod optimizer;
pub mod protocol;
pub mod seed;
pub mod sim;
pub mod tag;

pub use bloom::{build_filter, fpr_theoretical, BitArray, BloomVector, HashFamily};
pub use error::{Error, Result};
pub use optimizer::{tune, OptimizerReport, ProtocolParams, Scenario, Strategy, TimeModel};
pub use protocol::{DetectionOutcome, RoundLog};
pub use sim::{run_experiment, run_trial, ExperimentConfig, ExperimentResult, TrialResult};
pub use tag::TagId;
