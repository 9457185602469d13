pub mod bound;
pub mod data_eval;
pub mod error;
pub mod kernels;
pub mod multioutput;
pub mod numerics;
pub mod psi_stats;
pub mod trainer;
pub mod variational;

pub use error::{Error, Result};
