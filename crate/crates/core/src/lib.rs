pub mod copula;
pub mod error;
pub mod marginals;
pub mod metrics;
pub mod numeric;
mod par;
pub mod persist;
pub mod regression;
pub mod select;
pub mod simgen;
pub mod special;
pub mod stats;
pub mod vine;

pub use error::{Result, VineError};
pub use par::set_thread_limit;
