//! Covariant spatio-temporal receptive fields, an event-camera dataset
//! simulator, and a scale-channel network with a BPTT trainer.

pub mod cli;
pub mod covariance;
pub mod engine;
pub mod events;
pub mod net;
pub mod error;
pub mod rng;
pub mod spatial;
pub mod stats;
pub mod temporal;
pub mod train;

pub use error::{Result, StrfError};
