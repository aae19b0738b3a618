pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod ewc;
pub mod harness;
pub mod linalg;
pub mod lwf;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod ratt;
pub mod splitter;
pub mod vocab;

pub use error::{Error, Result};
