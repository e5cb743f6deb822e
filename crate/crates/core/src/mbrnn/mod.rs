//! Moment-based recurrent predictor: stacked LSTM layers over per-period
//! feature rows, with a softmax head over occupancy bins.

pub mod checkpoint;
mod net;
mod params;
mod search;
mod train;

pub use net::{forward, grad, gradient_check, loss, loss_terms};
pub use params::{tensor_slots, Arch, ModelParams, Real, TensorSlot};
pub use search::{draw_configs, hp_search, HpSpace, SearchResult, Trial};
pub use train::{mean_sae, train, EpochStats, Example, History, TrainConfig, TrainOutcome};
