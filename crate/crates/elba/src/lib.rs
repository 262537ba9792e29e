//! Files, configuration and commands around `elba-core`: dataset generation,
//! training, evaluation, ablations and report merging.

pub mod config;
pub mod dataset;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod report;
pub mod trajlog;

pub use config::RunConfig;
pub use pipeline::Layout;
