//! Labeled dataset generation. Every sample derives its own RNG stream from
//! `(seed, sample index)`, so output is independent of worker scheduling.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{save_recording, write_manifest, ManifestEntry};
use crate::planner::{plan_strokes, GtspInstance};
use crate::signal::recording::{Material, Recording, Scenario, TrajectoryPoint, View};
use crate::sim::drawing::{synth_drawing, time_stroke, Drawing};
use crate::sim::impulse::simulate_impulse;
use crate::sim::noise::{derived_rng, stream};
use crate::sim::scene::{Point3, SceneModel, Workspace};
use crate::sim::stroke::simulate_stroke;

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// A simulated recording with its manifest id.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub category: Option<String>,
    pub recording: Recording,
}

/// Uniform point on the four lateral faces, area weighted.
pub fn sample_surface_point<R: Rng>(ws: &Workspace, rng: &mut R) -> (Point3, View) {
    let (dx, dy, dz) = (ws.max[0] - ws.min[0], ws.max[1] - ws.min[1], ws.max[2] - ws.min[2]);
    let total = 2.0 * (dx + dy) * dz;
    let pick = rng.gen_range(0.0..total);
    let u: f64 = rng.gen();
    let z = ws.min[2] + rng.gen::<f64>() * dz;
    let x = ws.min[0] + u * dx;
    let y = ws.min[1] + u * dy;
    if pick < dx * dz {
        ([x, ws.max[1], z], View::Back)
    } else if pick < 2.0 * dx * dz {
        ([x, ws.min[1], z], View::Front)
    } else if pick < 2.0 * dx * dz + dy * dz {
        ([ws.max[0], y, z], View::Right)
    } else {
        ([ws.min[0], y, z], View::Left)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseDatasetConfig {
    /// Samples per material, generated in this order.
    pub counts: Vec<(Material, usize)>,
    pub noise_level: f64,
    pub seed: u64,
}

impl ImpulseDatasetConfig {
    pub fn uniform(count_per_material: usize, noise_level: f64, seed: u64) -> Self {
        ImpulseDatasetConfig {
            counts: Material::ALL.iter().map(|&m| (m, count_per_material)).collect(),
            noise_level,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.iter().map(|c| c.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() || self.counts.iter().any(|c| c.1 == 0) {
            return Err(Error::Invalid("impulse counts must be > 0".into()));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::Invalid("noise_level must be >= 0".into()));
        }
        Ok(())
    }

    /// Material and per-material index of global sample `i`.
    fn locate(&self, mut i: usize) -> (Material, usize) {
        for &(m, n) in &self.counts {
            if i < n {
                return (m, i);
            }
            i -= n;
        }
        panic!("sample index out of range")
    }
}

/// Sample `i` of an impulse dataset.
pub fn impulse_sample(scene: &SceneModel, cfg: &ImpulseDatasetConfig, i: usize) -> Result<Sample> {
    let (material, k) = cfg.locate(i);
    let mut rng = derived_rng(cfg.seed, &[stream::CONTACT, i as u64]);
    let (p, _) = sample_surface_point(&scene.workspace, &mut rng);
    let recording = simulate_impulse(scene, p, material, cfg.noise_level, rng.gen())?;
    Ok(Sample {
        id: format!("imp_{}_{k:05}", material.as_str()),
        category: None,
        recording,
    })
}

/// All samples in memory, in dataset order.
pub fn simulate_impulses(scene: &SceneModel, cfg: &ImpulseDatasetConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    scene.validate()?;
    (0..cfg.len()).into_par_iter().map(|i| impulse_sample(scene, cfg, i)).collect()
}

fn write_samples<F>(out_dir: &Path, count: usize, make: F) -> Result<Vec<ManifestEntry>>
where
    F: Fn(usize) -> Result<Sample> + Sync,
{
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries: Vec<ManifestEntry> = (0..count)
        .into_par_iter()
        .map(|i| {
            let s = make(i)?;
            let mut e = save_recording(out_dir, &s.id, &format!("wav/{}.wav", s.id), &s.recording)?;
            e.category = s.category;
            Ok(e)
        })
        .collect::<Result<_>>()?;
    write_manifest(&out_dir.join(MANIFEST_NAME), &entries)?;
    Ok(entries)
}

/// Writes `wav/<id>.wav` files and `manifest.jsonl` under `out_dir`.
pub fn generate_impulse_dataset(
    scene: &SceneModel,
    cfg: &ImpulseDatasetConfig,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    scene.validate()?;
    write_samples(out_dir, cfg.len(), |i| impulse_sample(scene, cfg, i))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrokeDatasetConfig {
    pub materials: Vec<Material>,
    pub scenarios: Vec<Scenario>,
    /// Drawings per (material, scenario) cell; drawing `d` is shared by all cells.
    pub drawings: usize,
    pub strokes_per_drawing: usize,
    /// Synthetic drawings are assigned to `cat_{d % categories}`.
    pub categories: usize,
    pub seed: u64,
}

impl Default for StrokeDatasetConfig {
    fn default() -> Self {
        StrokeDatasetConfig {
            materials: Material::ALL.to_vec(),
            scenarios: vec![Scenario::Fixed, Scenario::Moving],
            drawings: 10,
            strokes_per_drawing: 3,
            categories: 10,
            seed: 0,
        }
    }
}

/// One stroke to simulate, already ordered and oriented by the planner.
#[derive(Debug, Clone, PartialEq)]
pub struct StrokeJob {
    pub id: String,
    pub category: String,
    pub material: Material,
    pub scenario: Scenario,
    pub trajectory: Vec<TrajectoryPoint>,
    pub seed: u64,
}

fn drawing_for(scene: &SceneModel, cfg: &StrokeDatasetConfig, real: Option<&[Drawing]>, d: usize) -> Result<Drawing> {
    match real {
        Some(list) if !list.is_empty() => Ok(list[d % list.len()].clone()),
        Some(_) => Err(Error::Invalid("no drawings supplied".into())),
        None => {
            let seed = derived_rng(cfg.seed, &[stream::DRAWING, d as u64]).gen();
            let mut dr = synth_drawing(seed, cfg.strokes_per_drawing, scene.drawing_area.size_mm)?;
            dr.category = format!("cat_{:03}", d % cfg.categories);
            Ok(dr)
        }
    }
}

/// Expands drawings into planner-ordered, timed strokes for every cell.
pub fn stroke_jobs(
    scene: &SceneModel,
    cfg: &StrokeDatasetConfig,
    drawings: Option<&[Drawing]>,
) -> Result<Vec<StrokeJob>> {
    if cfg.materials.is_empty() || cfg.scenarios.is_empty() || cfg.drawings == 0 {
        return Err(Error::Invalid("stroke dataset needs materials, scenarios and drawings".into()));
    }
    if cfg.strokes_per_drawing == 0 || cfg.categories == 0 {
        return Err(Error::Invalid("strokes_per_drawing and categories must be > 0".into()));
    }
    let area = &scene.drawing_area;
    let home = [area.size_mm / 2.0, area.size_mm / 2.0];
    let mut planned = Vec::with_capacity(cfg.drawings);
    for d in 0..cfg.drawings {
        let drawing = drawing_for(scene, cfg, drawings, d)?;
        let inst = GtspInstance::new(drawing.strokes.clone(), home)?;
        let plan = plan_strokes(&inst);
        let strokes: Vec<Vec<TrajectoryPoint>> = plan
            .steps
            .iter()
            .map(|s| time_stroke(&inst.oriented(s.stroke, s.orientation), area, scene.pen_speed_mm_s))
            .collect();
        planned.push((drawing.category, strokes));
    }
    let mut jobs = Vec::new();
    for (mi, &material) in cfg.materials.iter().enumerate() {
        for (si, &scenario) in cfg.scenarios.iter().enumerate() {
            for (d, (category, strokes)) in planned.iter().enumerate() {
                for (k, traj) in strokes.iter().enumerate() {
                    let tags = [stream::EVENT, mi as u64, si as u64, d as u64, k as u64];
                    jobs.push(StrokeJob {
                        id: format!("stk_{}_{}_{d:04}_{k:02}", material.as_str(), scenario.as_str()),
                        category: category.clone(),
                        material,
                        scenario,
                        trajectory: traj.clone(),
                        seed: derived_rng(cfg.seed, &tags).gen(),
                    });
                }
            }
        }
    }
    Ok(jobs)
}

pub fn stroke_sample(scene: &SceneModel, job: &StrokeJob) -> Result<Sample> {
    Ok(Sample {
        id: job.id.clone(),
        category: Some(job.category.clone()),
        recording: simulate_stroke(scene, &job.trajectory, job.material, job.scenario, job.seed)?,
    })
}

pub fn generate_stroke_dataset(
    scene: &SceneModel,
    cfg: &StrokeDatasetConfig,
    drawings: Option<&[Drawing]>,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    scene.validate()?;
    let jobs = stroke_jobs(scene, cfg, drawings)?;
    write_samples(out_dir, jobs.len(), |i| stroke_sample(scene, &jobs[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::read_manifest;
    use crate::signal::recording::Contact;

    #[test]
    fn face_counts_are_multinomial() {
        let ws = SceneModel::default().workspace;
        let mut rng = derived_rng(42, &[]);
        let n = 4000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let (p, v) = sample_surface_point(&ws, &mut rng);
            assert_eq!(ws.face_of(&p), Some(v));
            counts[View::ALL.iter().position(|&x| x == v).unwrap()] += 1;
        }
        // equal face areas in the default box: p = 1/4 each
        let (mean, sd) = (n as f64 / 4.0, (n as f64 * 0.25 * 0.75).sqrt());
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn impulse_dataset_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let scene = SceneModel::default();
        let cfg = ImpulseDatasetConfig::uniform(10, 0.001, 7);
        let entries = generate_impulse_dataset(&scene, &cfg, dir.path()).unwrap();
        assert_eq!(entries.len(), 40);
        let back = read_manifest(&dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(back, entries);
        for m in Material::ALL {
            assert_eq!(back.iter().filter(|e| e.material == m).count(), 10);
        }
        for e in &back {
            let p = e.position_mm.unwrap();
            assert_eq!(scene.workspace.face_of(&p), Some(e.view));
            assert_eq!(e.region, scene.region_of(&p));
        }
        let rec = back[3].load(dir.path()).unwrap();
        assert_eq!(rec, simulate_impulses(&scene, &cfg).unwrap()[3].recording);
    }

    #[test]
    fn zero_count_rejected() {
        let cfg = ImpulseDatasetConfig::uniform(0, 0.0, 1);
        assert!(simulate_impulses(&SceneModel::default(), &cfg).is_err());
    }

    #[test]
    fn stroke_jobs_follow_plan_and_stay_on_patch() {
        let scene = SceneModel::default();
        let cfg = StrokeDatasetConfig {
            materials: vec![Material::Wood, Material::Metal],
            scenarios: vec![Scenario::Fixed],
            drawings: 3,
            strokes_per_drawing: 2,
            categories: 2,
            seed: 5,
        };
        let jobs = stroke_jobs(&scene, &cfg, None).unwrap();
        assert_eq!(jobs.len(), 2 * 3 * 2);
        // same drawings for every material
        assert_eq!(jobs[0].trajectory, jobs[6].trajectory);
        assert_ne!(jobs[0].seed, jobs[6].seed);
        assert_eq!(jobs[4].category, "cat_000");
        let s = stroke_sample(&scene, &jobs[1]).unwrap();
        match &s.recording.label.contact {
            Contact::Stroke { trajectory } => {
                assert_eq!(trajectory[0].t_ms, scene.stroke_lead_in_ms);
                for p in trajectory {
                    assert!((p.pos[1] - scene.drawing_area.center[1]).abs() < 1e-9);
                }
            }
            _ => panic!("expected stroke"),
        }
        assert_eq!(s.recording.label.view, View::Back);
    }
}
