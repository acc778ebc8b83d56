use super::*;
use crate::model::ModelConfig;
use crate::sim::scene::SceneModel;

fn sample(id: &str, material: Material, scenario: Scenario, category: Option<&str>, target: Point3) -> FeatureSample {
    FeatureSample {
        id: id.into(),
        source: id.split('#').next().unwrap().into(),
        material,
        view: View::Back,
        region: Region::Forearm,
        scenario,
        category: category.map(str::to_string),
        chunk: None,
        t_ms: 0.0,
        target_mm: target,
        input: SpectrogramTensor::new(7, 16, 16, vec![0.0; 7 * 256], 1.0, 1.0).unwrap(),
    }
}

fn forty() -> Vec<FeatureSample> {
    (0..40)
        .map(|i| {
            let m = Material::ALL[i % 4];
            let sc = Scenario::ALL[i % 2];
            sample(&format!("s{i:02}"), m, sc, Some(&format!("cat_{:03}", i % 10)), [i as f64, 0.0, 100.0])
        })
        .collect()
}

fn ids(v: &[FeatureSample]) -> BTreeSet<String> {
    v.iter().map(|s| s.id.clone()).collect()
}

fn norm() -> TargetNorm {
    TargetNorm::from_workspace(&SceneModel::default().workspace)
}

#[test]
fn lomo_split_partitions() {
    let all = forty();
    let (train, test) = split_leave_one_material_out(&all, Material::Wood);
    assert_eq!((train.len(), test.len()), (30, 10));
    assert!(test.iter().all(|s| s.material == Material::Wood));
    assert!(ids(&train).is_disjoint(&ids(&test)));
    let mut covered = Vec::new();
    for m in Material::ALL {
        let (tr, te) = split_leave_one_material_out(&all, m);
        assert_eq!(ids(&tr).union(&ids(&te)).count(), 40);
        covered.extend(te.into_iter().map(|s| s.id));
    }
    covered.sort();
    assert_eq!(covered, ids(&all).into_iter().collect::<Vec<_>>());
}

#[test]
fn category_split_sizes() {
    let cats: Vec<String> = (0..345).map(|i| format!("c{i}")).collect();
    let s = split_categories(&cats, CATEGORY_COUNTS, 0).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (276, 35, 34));
    s.validate().unwrap();

    let ten: Vec<String> = (0..10).map(|i| format!("cat_{i:03}")).collect();
    let s = split_categories(&ten, CATEGORY_COUNTS, 3).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
    assert_eq!(s, split_categories(&ten, CATEGORY_COUNTS, 3).unwrap());
    let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
    all.sort();
    assert_eq!(all, ten);
    // duplicates collapse before splitting
    let dup: Vec<String> = ten.iter().chain(&ten).cloned().collect();
    assert_eq!(split_categories(&dup, CATEGORY_COUNTS, 3).unwrap(), s);
}

#[test]
fn category_split_seed_changes_assignment() {
    let cats: Vec<String> = (0..345).map(|i| format!("c{i}")).collect();
    let a = split_categories(&cats, CATEGORY_COUNTS, 0).unwrap();
    let b = split_categories(&cats, CATEGORY_COUNTS, 1).unwrap();
    assert_ne!(a.test, b.test);
}

#[test]
fn overlapping_category_lists_rejected() {
    let spec = SplitSpec {
        categories: Some(CategorySplit { train: vec!["a".into()], val: vec![], test: vec!["a".into()] }),
        ..Default::default()
    };
    assert!(apply_split(&forty(), &spec).is_err());
}

#[test]
fn spec_with_scenario_and_categories() {
    let all = forty();
    let cats: Vec<String> = (0..10).map(|i| format!("cat_{i:03}")).collect();
    let split = split_categories(&cats, CATEGORY_COUNTS, 9).unwrap();
    let spec = SplitSpec { held_out_material: None, scenario: ScenarioFilter::Fixed, categories: Some(split.clone()) };
    let (tr, va, te) = apply_split(&all, &spec).unwrap();
    assert_eq!(tr.len() + va.len() + te.len(), 20);
    assert!(tr.iter().chain(&va).chain(&te).all(|s| s.scenario == Scenario::Fixed));
    assert!(te.iter().all(|s| split.test.contains(s.category.as_ref().unwrap())));
    assert!(va.iter().all(|s| split.val.contains(s.category.as_ref().unwrap())));

    let spec = SplitSpec { held_out_material: Some(Material::Metal), scenario: ScenarioFilter::Both, categories: Some(split.clone()) };
    let (tr, va, te) = apply_split(&all, &spec).unwrap();
    assert!(te.iter().all(|s| s.material == Material::Metal && split.test.contains(s.category.as_ref().unwrap())));
    assert!(tr.iter().chain(&va).all(|s| s.material != Material::Metal));
    assert!(ids(&tr).is_disjoint(&ids(&te)) && ids(&va).is_disjoint(&ids(&te)));

    let spec = SplitSpec { held_out_material: Some(Material::Metal), ..Default::default() };
    let (tr, va, te) = apply_split(&all, &spec).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (30, 0, 10));
}

#[test]
fn perfect_predictor_has_zero_error() {
    let all = forty();
    let recs = evaluate(&PerfectPredictor, &all, &norm()).unwrap();
    assert_eq!(recs.len(), all.len());
    assert!(recs.iter().all(|r| r.error_mm == 0.0 && r.mse_norm == 0.0));
}

#[test]
fn constant_center_matches_label_oracle() {
    use crate::sim::dataset::sample_surface_point;
    let scene = SceneModel::default();
    let mut rng = derived_rng(4, &[]);
    let samples: Vec<FeatureSample> = (0..500)
        .map(|i| {
            let (p, _) = sample_surface_point(&scene.workspace, &mut rng);
            sample(&format!("p{i}"), Material::Metal, Scenario::Fixed, None, p)
        })
        .collect();
    let c = scene.workspace.center();
    let oracle: f64 = samples
        .iter()
        .map(|s| ((s.target_mm[0] - c[0]).powi(2) + (s.target_mm[1] - c[1]).powi(2) + (s.target_mm[2] - c[2]).powi(2)).sqrt())
        .sum::<f64>()
        / 500.0;
    let recs = evaluate(&ConstantPredictor(c), &samples, &norm()).unwrap();
    let stats = aggregate(&recs, &[]);
    assert_eq!(stats.len(), 1);
    assert!((stats[0].mean_mm - oracle).abs() < 1e-9);
}

#[test]
fn model_predictor_is_deterministic() {
    let cfg = ModelConfig::tiny();
    let p = ModelParams::<f32>::init(cfg, norm(), 3).unwrap();
    let mut rng = derived_rng(8, &[]);
    let samples: Vec<FeatureSample> = (0..5)
        .map(|i| {
            use rand::Rng;
            let mut s = sample(&format!("m{i}"), Material::Wood, Scenario::Fixed, None, [0.0, 0.0, 100.0]);
            let data = (0..7 * 26 * 26).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            s.input = SpectrogramTensor::new(7, 26, 26, data, 1.0, 1.0).unwrap();
            s
        })
        .collect();
    let a = evaluate(&p, &samples, &norm()).unwrap();
    assert_eq!(a, evaluate(&p, &samples, &norm()).unwrap());
    assert_eq!(a.len(), 5);
    for r in &a {
        assert!((r.error_mm - distance(&r.predicted_mm, &r.target_mm)).abs() < 1e-12);
    }
}

fn rec(id: &str, material: Material, err: f64, seed: Option<u64>) -> ErrorRecord {
    ErrorRecord {
        id: id.into(),
        source: id.into(),
        material,
        view: View::Front,
        region: Region::Hand,
        scenario: Scenario::Fixed,
        category: None,
        chunk: None,
        t_ms: 0.0,
        seed,
        error_mm: err,
        mse_norm: err * 1e-4,
        predicted_mm: [err, 0.0, 0.0],
        target_mm: [0.0; 3],
    }
}

#[test]
fn aggregate_examples() {
    let one = aggregate(&[rec("a", Material::Wood, 3.5, None)], &[GroupKey::Material]);
    assert_eq!(one[0].mean_mm, 3.5);
    assert_eq!(one[0].std_mm, 0.0);
    assert_eq!(one[0].count, 1);

    let recs = vec![
        rec("a", Material::Wood, 1.0, None),
        rec("b", Material::Wood, 3.0, None),
        rec("c", Material::Metal, 10.0, None),
        rec("d", Material::Metal, 20.0, None),
        rec("e", Material::Metal, 30.0, None),
    ];
    let s = aggregate(&recs, &[GroupKey::Material]);
    assert_eq!(s[0].key, vec!["metal"]);
    assert_eq!((s[0].mean_mm, s[0].std_mm), (20.0, 10.0));
    assert_eq!(s[1].key, vec!["wood"]);
    assert_eq!(s[1].mean_mm, 2.0);
    assert!((s[1].std_mm - 2f64.sqrt()).abs() < 1e-12);

    let mut rev = recs.clone();
    rev.reverse();
    assert_eq!(aggregate(&rev, &[GroupKey::Material]), s);
    assert_eq!(aggregate(&recs, &[GroupKey::Material, GroupKey::View])[0].key, vec!["metal", "Front"]);
}

#[test]
fn identical_seed_runs_have_zero_spread() {
    let mut recs = Vec::new();
    for seed in 0..3 {
        recs.push(rec(&format!("a{seed}"), Material::Wood, 4.0, Some(seed)));
        recs.push(rec(&format!("b{seed}"), Material::Wood, 6.0, Some(seed)));
    }
    assert_eq!(across_seeds(&recs), (5.0, 0.0));
    assert_eq!(aggregate(&recs, &[GroupKey::Seed]).len(), 3);
}

#[test]
fn group_key_names_round_trip() {
    for k in [GroupKey::Material, GroupKey::View, GroupKey::Region, GroupKey::Scenario, GroupKey::Seed] {
        assert_eq!(k.name().parse::<GroupKey>().unwrap(), k);
    }
    assert!("colour".parse::<GroupKey>().is_err());
}

fn chunk_records(n: usize) -> Vec<ErrorRecord> {
    (0..n)
        .map(|i| {
            let mut r = rec(&format!("stk#{i:03}"), Material::Wood, 0.0, None);
            r.source = "stk".into();
            r.chunk = Some(i);
            r.t_ms = 200.0 * i as f64;
            r.target_mm = [i as f64 * 10.0, 0.0, 100.0];
            r.predicted_mm = [i as f64 * 10.0 + if i % 2 == 0 { 3.0 } else { -3.0 }, 0.0, 100.0];
            r.error_mm = 3.0;
            r
        })
        .collect()
}

#[test]
fn trajectory_orders_chunks() {
    let mut recs = chunk_records(5);
    recs.reverse();
    let t = reconstruct_trajectory(&recs, None).unwrap();
    assert_eq!(t.len(), 5);
    assert_eq!(t.iter().map(|p| p.chunk).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    let mean = t.iter().map(|p| p.error_mm).sum::<f64>() / 5.0;
    let eval_mean = aggregate(&recs, &[])[0].mean_mm;
    assert!((mean - eval_mean).abs() < 1e-12);
}

#[test]
fn trajectory_perfect_and_smoothed() {
    let mut recs = chunk_records(5);
    for r in &mut recs {
        r.predicted_mm = r.target_mm;
    }
    let t = reconstruct_trajectory(&recs, None).unwrap();
    assert!(t.iter().all(|p| p.predicted_mm == p.target_mm));

    // offsets -3, +3, -3 around chunk 2 average to -1
    let t = reconstruct_trajectory(&chunk_records(5), Some(3)).unwrap();
    assert!((t[2].predicted_mm[0] - 19.0).abs() < 1e-12);
    assert!((t[0].predicted_mm[0] - 5.0).abs() < 1e-12);
    assert!(reconstruct_trajectory(&[], None).is_err());
    let mut mixed = chunk_records(2);
    mixed[1].source = "other".into();
    assert!(reconstruct_trajectory(&mixed, None).is_err());
}

#[test]
fn group_by_source_keeps_order() {
    let mut recs = chunk_records(2);
    let mut r = rec("z", Material::Metal, 1.0, None);
    r.source = "a".into();
    recs.insert(1, r);
    let g = group_by_source(&recs);
    assert_eq!(g.iter().map(|(s, v)| (s.as_str(), v.len())).collect::<Vec<_>>(), vec![("stk", 2), ("a", 1)]);
}

#[test]
fn csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let recs = chunk_records(3);
    let p = dir.path().join("records.csv");
    write_records_csv(&p, &["config=abc".into()], &recs).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# config=abc");
    assert!(lines[1].starts_with("id,source,material"));
    assert_eq!(lines.len(), 5);
    let cols = lines[1].split(',').count();
    assert!(lines[2..].iter().all(|l| l.split(',').count() == cols));

    let keys = [GroupKey::Material];
    let p = dir.path().join("stats.csv");
    write_stats_csv(&p, &[], &keys, &aggregate(&recs, &keys)).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().next().unwrap(), "material,count,mean_mm,std_mm,mse_norm");
    assert!(text.lines().nth(1).unwrap().starts_with("wood,3,3.0000,0.0000,"));

    let p = dir.path().join("traj.csv");
    write_trajectory_csv(&p, &[], &reconstruct_trajectory(&recs, None).unwrap()).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 4);
}

#[test]
fn source_split_keeps_chunks_together() {
    let mut items = Vec::new();
    for r in 0..10 {
        for c in 0..3 {
            let mut s = sample(&format!("r{r}#{c:03}"), Material::Wood, Scenario::Fixed, None, [0.0; 3]);
            s.chunk = Some(c);
            items.push(s);
        }
    }
    let (tr, te) = split_by_source(&items, 0.2, 5).unwrap();
    assert_eq!((tr.len(), te.len()), (24, 6));
    let trs: BTreeSet<_> = tr.iter().map(|s| s.source.clone()).collect();
    assert!(te.iter().all(|s| !trs.contains(&s.source)));
    let (tr2, te2) = split_by_source(&items, 0.2, 5).unwrap();
    assert_eq!((ids(&tr2), ids(&te2)), (ids(&tr), ids(&te)));
    assert_eq!(split_by_source(&items, 0.01, 5).unwrap().1.len(), 3);
    assert!(split_by_source(&items, 1.0, 5).is_err());
}
