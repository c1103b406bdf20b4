pub mod chaos;
pub mod config;
pub mod diagnostics;
pub mod disorder;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod fastmath;
pub mod io;
pub mod lattice;
pub mod oracle;
pub mod quadrature;
pub mod report;
pub mod stats;
pub mod testfn;
pub mod walk;

pub use error::{Error, Result};
