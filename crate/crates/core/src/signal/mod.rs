//! Preprocessing pipeline: resampling, trimming, STFT, noise subtraction,
//! chunking and feature tensor assembly.

pub mod db;
pub mod features;
pub mod noise;
pub mod recording;
pub mod resample;
pub mod stft;

pub use db::{energy_fraction_below, magnitude_db_normalized};
pub use features::{
    build_features, build_stroke_features, chunk_stroke, resample_recording, spectrogram, trim_window,
    PipelineConfig, SpectrogramTensor, StrokeChunk,
};
pub use noise::{estimate_noise, subtract_noise, NoiseProfile};
pub use recording::{
    Contact, ContactLabel, Material, Recording, Region, Scenario, TrajectoryPoint, View, NUM_CHANNELS,
};
pub use resample::{resample, Resampler};
pub use stft::{stft, Spectrum, Stft, StftParams, WindowKind};
