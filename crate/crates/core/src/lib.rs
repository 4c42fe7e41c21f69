//! District-level hourly traffic forecasting.
//!
//! Raw municipal traffic and weather CSVs are reduced to one row per
//! (hour, district) ([`pipeline`]), windowed into supervised samples
//! ([`dataset`]) and used to train one of three model families:
//! a conv + LSTM network ([`lstm`]), a conv + transformer encoder network
//! ([`transformer`]) and a gradient-boosted tree ensemble ([`gbdt`]).
//! Trained models are persisted as checksummed JSON artifacts and used for
//! recursive multi-hour forecasts ([`training`]).

pub mod dataset;
pub mod error;
pub mod gbdt;
pub mod lstm;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod tensor;
pub mod time;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
pub use tensor::Tensor;
