//! Command-line front end: run configuration, checkpoint files, training
//! orchestration, reports, and the subcommand implementations the `lowbit`
//! binary dispatches to.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod report;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{parse_bits, RunConfig};
pub use train::{train_student, train_teacher, EpochRow};
