//! Synthetic vibration simulator standing in for the physical rig.

pub mod dataset;
pub mod drawing;
pub mod impulse;
pub mod noise;
pub mod scene;
pub mod stroke;

pub use dataset::{
    generate_impulse_dataset, generate_stroke_dataset, simulate_impulses, ImpulseDatasetConfig, Sample,
    StrokeDatasetConfig,
};
pub use scene::{MaterialProfile, SceneModel};
