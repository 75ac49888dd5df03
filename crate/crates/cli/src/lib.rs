//! Command implementations behind the `egoscene` binary.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{cmd_eval, cmd_fixture, cmd_generate, cmd_inpaint, cmd_optimize, cmd_run};
pub use config::RunConfig;
pub use report::{FrameReport, Report};
