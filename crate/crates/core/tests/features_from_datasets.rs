use vibroloc::data::{common_shape, manifest_features, sample_features, DEFAULT_CHUNK_MS};
use vibroloc::signal::features::{trajectory_mean, PipelineConfig};
use vibroloc::signal::recording::{Contact, Material, Scenario};
use vibroloc::sim::dataset::{stroke_jobs, stroke_sample};
use vibroloc::sim::{generate_impulse_dataset, simulate_impulses, ImpulseDatasetConfig, SceneModel, StrokeDatasetConfig};

#[test]
fn impulse_gives_one_standardized_tensor() {
    let scene = SceneModel::default();
    let cfg = ImpulseDatasetConfig { counts: vec![(Material::Metal, 2)], noise_level: 0.001, seed: 3 };
    let samples = simulate_impulses(&scene, &cfg).unwrap();
    let pc = PipelineConfig::default();
    let f = sample_features(&samples[0], &pc, DEFAULT_CHUNK_MS).unwrap();
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].input.shape(), (7, 61, 65));
    assert_eq!(f[0].chunk, None);
    assert_eq!(f[0].id, samples[0].id);
    let Contact::Impulse { position } = samples[0].recording.label.contact else { panic!() };
    assert_eq!(f[0].target_mm, position);

    let d = &f[0].input.data;
    let n = d.len() as f64;
    let mean = d.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-4);
    assert!((var.sqrt() - 1.0).abs() < 1e-3);
}

#[test]
fn stroke_chunks_carry_time_mean_targets() {
    let scene = SceneModel::default();
    let cfg = StrokeDatasetConfig {
        materials: vec![Material::Wood],
        scenarios: vec![Scenario::Fixed],
        drawings: 1,
        strokes_per_drawing: 1,
        categories: 1,
        seed: 11,
    };
    let job = &stroke_jobs(&scene, &cfg, None).unwrap()[0];
    let s = stroke_sample(&scene, job).unwrap();
    let Contact::Stroke { trajectory } = &s.recording.label.contact else { panic!() };
    let t0 = trajectory[0].t_ms;
    let dur = trajectory.last().unwrap().t_ms - t0;
    let f = sample_features(&s, &PipelineConfig::default(), DEFAULT_CHUNK_MS).unwrap();
    assert_eq!(f.len(), (dur / DEFAULT_CHUNK_MS).floor() as usize);
    assert_eq!(common_shape(&f).unwrap(), (7, 61, 65));
    for (i, c) in f.iter().enumerate() {
        assert_eq!(c.chunk, Some(i));
        assert_eq!(c.id, format!("{}#{i:03}", s.id));
        assert_eq!(c.source, s.id);
        assert_eq!(c.category.as_deref(), Some("cat_000"));
        let start = t0 + i as f64 * DEFAULT_CHUNK_MS;
        assert!((c.t_ms - start).abs() < 1e-9);
        let want = trajectory_mean(trajectory, start, start + DEFAULT_CHUNK_MS);
        assert_eq!(c.target_mm, want);
    }
}

#[test]
fn manifest_features_match_in_memory() {
    let scene = SceneModel::default();
    let cfg = ImpulseDatasetConfig { counts: vec![(Material::Wood, 2), (Material::SoftPlastic, 1)], noise_level: 0.001, seed: 8 };
    let dir = tempfile::tempdir().unwrap();
    let entries = generate_impulse_dataset(&scene, &cfg, dir.path()).unwrap();
    let pc = PipelineConfig::default();
    let from_disk = manifest_features(&entries, dir.path(), &pc, DEFAULT_CHUNK_MS).unwrap();
    let mem: Vec<_> = simulate_impulses(&scene, &cfg)
        .unwrap()
        .iter()
        .flat_map(|s| sample_features(s, &pc, DEFAULT_CHUNK_MS).unwrap())
        .collect();
    // WAV stores f32, exactly what the simulator emits
    assert_eq!(from_disk, mem);
}

#[test]
fn streaming_builders_match_sample_features() {
    use vibroloc::data::{impulse_dataset_features, stroke_dataset_features};
    let scene = SceneModel::default();
    let pc = PipelineConfig::default();
    let cfg = ImpulseDatasetConfig { counts: vec![(Material::HardPlastic, 2)], noise_level: 0.0003, seed: 2 };
    let want: Vec<_> = simulate_impulses(&scene, &cfg)
        .unwrap()
        .iter()
        .flat_map(|s| sample_features(s, &pc, DEFAULT_CHUNK_MS).unwrap())
        .collect();
    assert_eq!(impulse_dataset_features(&scene, &cfg, &pc).unwrap(), want);

    let scfg = StrokeDatasetConfig {
        materials: vec![Material::Metal],
        scenarios: vec![Scenario::Moving],
        drawings: 1,
        strokes_per_drawing: 2,
        categories: 1,
        seed: 4,
    };
    let want: Vec<_> = stroke_jobs(&scene, &scfg, None)
        .unwrap()
        .iter()
        .flat_map(|j| sample_features(&stroke_sample(&scene, j).unwrap(), &pc, DEFAULT_CHUNK_MS).unwrap())
        .collect();
    assert_eq!(stroke_dataset_features(&scene, &scfg, None, &pc, DEFAULT_CHUNK_MS).unwrap(), want);
}
