//! Exact and variational inference for two-level noisy-OR belief networks.

pub mod error;
pub mod exact;
pub mod expansion;
pub mod network;
pub mod numeric;
pub mod optimizer;
pub mod posterior;
pub mod sampler;
pub mod scheduler;
pub mod transforms;

pub use error::{Error, Result};
