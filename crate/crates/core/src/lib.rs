pub mod dataset;
pub mod detect;
pub mod error;
pub mod instrument;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod report;
pub mod runner;

pub use error::{Error, Result};
