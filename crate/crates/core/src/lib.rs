//! Multivariate curve resolution of time-resolved T2-weighted image series.

pub mod analysis;
pub mod cube;
pub mod error;
pub mod ilt;
pub mod mcr;
pub mod numkit;
pub mod phantom;
pub mod pipeline;
pub mod results;
pub mod simplisma;

pub use error::{Error, Result};
