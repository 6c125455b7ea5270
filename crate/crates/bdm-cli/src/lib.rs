//! Experiment harness for the bias detecting and mitigating filter
//! benchmark: configuration handling, seeded Monte-Carlo campaigns,
//! error/timing aggregation, bound computation, and plot emission.
//!
//! The binary front-end lives in `main.rs`; everything it does is exposed
//! here as library functions so campaigns can be driven from tests or
//! other programs.

pub mod campaign;
pub mod config;
pub mod error;
pub mod metrics;
pub mod plots;

pub use campaign::{run_campaign, write_campaign_csvs, write_pcrb_csvs, CampaignOutput};
pub use config::{CaseKind, ExperimentConfig, FilterKind};
pub use error::{CliError, Result};
