//! Model-ready samples: standardized feature tensors with their targets and
//! the metadata evaluation groups by.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::ManifestEntry;
use crate::signal::features::{build_features, build_stroke_features, PipelineConfig, SpectrogramTensor};
use crate::signal::recording::{Contact, Material, Recording, Region, Scenario, View};
use crate::sim::dataset::{impulse_sample, stroke_jobs, stroke_sample, ImpulseDatasetConfig, Sample, StrokeDatasetConfig};
use crate::sim::drawing::Drawing;
use crate::sim::scene::{Point3, SceneModel};

/// Stroke recordings are cut into chunks of this length.
pub const DEFAULT_CHUNK_MS: f64 = 200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    /// Recording id, suffixed with `#<chunk>` for stroke chunks.
    pub id: String,
    /// Recording the sample came from.
    pub source: String,
    pub material: Material,
    pub view: View,
    pub region: Region,
    pub scenario: Scenario,
    pub category: Option<String>,
    pub chunk: Option<usize>,
    /// Chunk start relative to the recording, ms (0 for impulses).
    pub t_ms: f64,
    pub target_mm: Point3,
    /// Standardized spectrogram.
    pub input: SpectrogramTensor<f32>,
}

/// Builds features for one recording: a single sample for an impulse, one
/// per chunk for a stroke.
pub fn recording_features(
    id: &str,
    category: Option<&str>,
    rec: &Recording,
    cfg: &PipelineConfig,
    chunk_ms: f64,
) -> Result<Vec<FeatureSample>> {
    let l = &rec.label;
    let base = |input: SpectrogramTensor<f32>, target_mm: Point3, chunk: Option<usize>, t_ms: f64| FeatureSample {
        id: match chunk {
            Some(c) => format!("{id}#{c:03}"),
            None => id.to_string(),
        },
        source: id.to_string(),
        material: l.material,
        view: l.view,
        region: l.region,
        scenario: l.scenario,
        category: category.map(str::to_string),
        chunk,
        t_ms,
        target_mm,
        input: input.standardized(),
    };
    match &l.contact {
        Contact::Impulse { position } => Ok(vec![base(build_features(rec, cfg)?, *position, None, 0.0)]),
        Contact::Stroke { .. } => Ok(build_stroke_features::<f32>(rec, cfg, chunk_ms)?
            .into_iter()
            .enumerate()
            .map(|(i, (x, ch))| base(x, ch.target, Some(i), ch.start_ms))
            .collect()),
    }
}

pub fn sample_features(s: &Sample, cfg: &PipelineConfig, chunk_ms: f64) -> Result<Vec<FeatureSample>> {
    recording_features(&s.id, s.category.as_deref(), &s.recording, cfg, chunk_ms)
}

/// Features for every manifest entry, in manifest order.
pub fn manifest_features(
    entries: &[ManifestEntry],
    manifest_dir: &Path,
    cfg: &PipelineConfig,
    chunk_ms: f64,
) -> Result<Vec<FeatureSample>> {
    let parts: Vec<Vec<FeatureSample>> = entries
        .par_iter()
        .map(|e| {
            let rec = e.load(manifest_dir)?;
            recording_features(&e.id, e.category.as_deref(), &rec, cfg, chunk_ms)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Simulates an impulse dataset straight to features without keeping the
/// recordings, in dataset order.
pub fn impulse_dataset_features(
    scene: &SceneModel,
    cfg: &ImpulseDatasetConfig,
    pipeline: &PipelineConfig,
) -> Result<Vec<FeatureSample>> {
    cfg.validate()?;
    scene.validate()?;
    let parts: Vec<Vec<FeatureSample>> = (0..cfg.len())
        .into_par_iter()
        .map(|i| sample_features(&impulse_sample(scene, cfg, i)?, pipeline, DEFAULT_CHUNK_MS))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Stroke counterpart of [`impulse_dataset_features`]; chunks in job order.
pub fn stroke_dataset_features(
    scene: &SceneModel,
    cfg: &StrokeDatasetConfig,
    drawings: Option<&[Drawing]>,
    pipeline: &PipelineConfig,
    chunk_ms: f64,
) -> Result<Vec<FeatureSample>> {
    scene.validate()?;
    let jobs = stroke_jobs(scene, cfg, drawings)?;
    let parts: Vec<Vec<FeatureSample>> = jobs
        .par_iter()
        .map(|j| sample_features(&stroke_sample(scene, j)?, pipeline, chunk_ms))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Checks that every sample has the same tensor shape and returns it.
pub fn common_shape(samples: &[FeatureSample]) -> Result<(usize, usize, usize)> {
    let first = samples.first().ok_or_else(|| Error::Invalid("no samples".into()))?.input.shape();
    if let Some(s) = samples.iter().find(|s| s.input.shape() != first) {
        return Err(Error::Shape(format!("{} has shape {:?}, expected {first:?}", s.id, s.input.shape())));
    }
    Ok(first)
}
