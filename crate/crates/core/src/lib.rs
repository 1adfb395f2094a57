//! Link-level simulation of zero-padded OTFS with SIC-MMSE detection.

pub mod error;
pub mod channel;
pub mod analysis;
pub mod detect;
pub mod frame;
pub mod harness;
pub mod turbo;
pub mod numeric;

pub use error::{Error, Result};
