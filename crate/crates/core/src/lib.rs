//! Transient occupancy prediction for single-server queues with
//! time-varying renewal arrivals.
//!
//! The pipeline: draw scenarios ([`scenario`]), label them by simulation
//! ([`simkernel`]), turn them into log-moment sequences ([`features`]), train
//! a stacked LSTM with a softmax head ([`mbrnn`]), and score it
//! ([`metrics`], [`evalharness`]) against simulation and the fluid
//! baseline ([`baseline`]). [`apps`] holds capacity optimization and
//! event-log input estimation.

pub mod apps;
pub mod baseline;
pub mod dataset;
pub mod distlib;
pub mod error;
pub mod evalharness;
pub mod features;
pub mod mbrnn;
pub mod metrics;
pub mod scenario;
pub mod seeding;
pub mod simkernel;

pub use error::{Error, Result};
