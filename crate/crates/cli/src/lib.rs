//! Command-line pipeline: graph projection, heat diffusion, network
//! embedding, base KGE training, retrofitting, relation relearning and
//! filtered evaluation, each stage persisting its artifacts in one output
//! directory.

pub mod config;
pub mod error;
pub mod stages;

pub use config::PipelineConfig;
pub use error::CliError;
pub use stages::{run_pipeline, Context, Report};
