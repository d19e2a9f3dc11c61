//! File formats, the `.hacz` container, reports and the `hac` command line
//! built on [`hac_core`].

pub mod bitmap;
pub mod bytes;
pub mod checkpoint;
pub mod cli;
pub mod container;
pub mod error;
pub mod report;
pub mod sceneio;

pub use checkpoint::Checkpoint;
pub use error::{HacError, Result};
