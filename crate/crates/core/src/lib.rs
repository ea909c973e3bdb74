//! Uplink power and resource allocation for massive machine-type traffic in a
//! single cell: random access (CDMA and FDMA), scheduled access (TDMA, FDMA,
//! SIC), and Monte Carlo sweeps over the arrival rate.

pub mod channel;
pub mod config;
pub mod coordinated;
pub mod error;
pub mod montecarlo;
pub mod optsolve;
pub mod seeds;
pub mod uncoordinated;

pub use channel::{Device, Fading, Scenario};
pub use error::{Error, Result};
