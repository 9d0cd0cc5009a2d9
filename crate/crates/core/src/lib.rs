pub mod al;
pub mod bp;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod suites;
pub mod train;

pub use error::{Error, Result};
