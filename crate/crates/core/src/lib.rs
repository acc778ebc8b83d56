pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod planner;
pub mod scalar;
pub mod signal;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Spectrogram32 = signal::features::SpectrogramTensor<f32>;
pub type Spectrogram64 = signal::features::SpectrogramTensor<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type TrainOutcome32 = train::TrainOutcome<f32>;
