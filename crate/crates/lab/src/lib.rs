//! Experiment orchestration for the vform controllers.

pub mod commands;
pub mod config;
pub mod error;
pub mod table;

pub use commands::Lab;
pub use config::{ExperimentConfig, Scale};
pub use error::{LabError, Result};
pub use table::ResultsTable;

/// Environment variable that sets the number of worker threads.
pub const WORKERS_ENV: &str = "VFORM_WORKERS";

/// Sizes the global worker pool from [`WORKERS_ENV`], if set. Results do not
/// depend on it.
pub fn init_workers() -> Result<()> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| LabError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| LabError::Config(format!("cannot size worker pool: {e}")))
}
