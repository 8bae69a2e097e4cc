pub mod align;
pub mod config;
pub mod cv;
pub mod detect;
pub mod error;
pub mod evaluate;
pub mod fixtures;
pub mod metrics;
pub mod midi;
pub(crate) mod par;
pub mod pipeline;
pub mod preprocess;
pub mod project;
pub mod score;
pub mod smf;

pub use error::{Error, Result};
pub use par::enabled as parallel_enabled;
