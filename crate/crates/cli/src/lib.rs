//! Batch front end for the viscoelastic filament toolkit: configuration,
//! presets and the executors behind each subcommand.

pub mod config;
pub mod run;

pub use config::{preset, resolve, ConfigError, Mode, RunConfig, PRESETS};
pub use run::{run, Summary};
