//! Configuration-driven simulation batches for MLME process tomography:
//! TOML experiment descriptions, Monte Carlo runs over input-selection
//! schemes, and CSV/JSON result files.

pub mod config;
pub mod error;
pub mod run;
pub mod validate;

pub use config::{ExperimentConfig, Overrides};
pub use error::{HarnessError, Result};
pub use run::{run_experiment, Outcome, SummaryRow};
