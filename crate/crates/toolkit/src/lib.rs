//! File formats, runtime executor and command implementations for
//! confidence-gated classifier cascades. The algorithms themselves live in
//! [`cascade_core`].

pub mod commands;
pub mod error;
pub mod executor;
pub mod formats;
pub mod protocol;
pub mod runner;

pub use error::{Error, Result};
pub use executor::{execute, execute_with, ExecutionReport, MemoryPolicy, SampleOutcome};
pub use formats::{load_profile, load_record_set, Manifest};
pub use runner::{Runner, RunnerError, RunnerSpec, Sample};
