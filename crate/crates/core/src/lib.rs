pub mod analysis;
pub mod cli;
pub mod datasets;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod netgraph;
pub mod reduction;

pub use error::{Error, Result};
