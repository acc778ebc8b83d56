use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use vibroloc::config::FlatConfig;
use vibroloc::data::{manifest_features, recording_features, FeatureSample};
use vibroloc::eval::{
    across_seeds, aggregate, evaluate, group_by_source, reconstruct_trajectory, write_records_csv,
    write_stats_csv, write_trajectory_csv, ConstantPredictor, ErrorRecord, GroupKey, PerfectPredictor,
    Predictor, ScenarioFilter,
};
use vibroloc::io::{read_manifest, ManifestEntry};
use vibroloc::model::{load_checkpoint, save_checkpoint, TargetNorm};
use vibroloc::planner::{nearest_neighbor_plan, plan_strokes, GtspInstance};
use vibroloc::signal::features::PipelineConfig;
use vibroloc::signal::recording::{Material, Scenario};
use vibroloc::signal::stft::{Stft, StftParams, WindowKind};
use vibroloc::signal::{energy_fraction_below, magnitude_db_normalized};
use vibroloc::sim::dataset::MANIFEST_NAME;
use vibroloc::sim::drawing::{load_quickdraw_simplified, synth_drawing, Drawing};
use vibroloc::sim::{generate_impulse_dataset, generate_stroke_dataset, ImpulseDatasetConfig, SceneModel, StrokeDatasetConfig};
use vibroloc::train::write_log_csv;

use crate::args::{Cli, Command, Common, DataKind, EvalArgs, InspectArgs, PlanArgs, SimulateArgs, StubPredictor, SweepArgs, TrainArgs};
use crate::protocol::{make_splits, run_seeds, run_sweep, seed_list, sweep_csv, SplitOptions};
use crate::settings::{parse_override, Settings};
use crate::UsageError;

pub const MSE_NOTE: &str = "mse_norm is the squared error in normalized target space (workspace half-extent = 1); error_mm is Euclidean distance in mm";

/// Files and directories written by a command; removed again unless the
/// command commits, so a failed run leaves no half-written outputs.
struct Outputs {
    paths: Vec<PathBuf>,
    done: bool,
}

impl Outputs {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        let mut o = Outputs { paths: Vec::new(), done: false };
        o.dir(dir)?;
        Ok(o)
    }

    /// Creates `dir`; it is only cleaned up if this run created it.
    fn dir(&mut self, dir: &Path) -> anyhow::Result<()> {
        if !dir.exists() {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            self.paths.push(dir.to_path_buf());
        }
        Ok(())
    }

    fn file(&mut self, path: PathBuf) -> PathBuf {
        self.paths.push(path.clone());
        path
    }

    fn commit(mut self) {
        self.done = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for p in self.paths.iter().rev() {
            let _ = if p.is_dir() { std::fs::remove_dir_all(p) } else { std::fs::remove_file(p) };
        }
    }
}

fn load_settings(c: &Common) -> anyhow::Result<Settings> {
    let file = match &c.config {
        Some(p) => Some(FlatConfig::load(p)?),
        None => None,
    };
    let overrides = c.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    Ok(Settings::build(file.as_ref(), &overrides)?)
}

fn load_scene(c: &Common) -> anyhow::Result<SceneModel> {
    match &c.scene {
        Some(p) => Ok(SceneModel::load(p).with_context(|| format!("cannot load scene {}", p.display()))?),
        None => Ok(SceneModel::default()),
    }
}

fn manifest_path(c: &Common) -> anyhow::Result<&Path> {
    c.manifest.as_deref().ok_or_else(|| UsageError("--manifest is required".into()).into())
}

fn load_manifest(c: &Common) -> anyhow::Result<(Vec<ManifestEntry>, PathBuf)> {
    let path = manifest_path(c)?;
    let entries = read_manifest(path)?;
    if entries.is_empty() {
        return Err(anyhow!("manifest {} has no entries", path.display()));
    }
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((entries, dir))
}

fn header(c: &Common, s: &Settings, seed: u64) -> Vec<String> {
    vec![
        format!("seed={seed}"),
        format!("seeds={}", c.seeds),
        format!("config_hash={}", s.hash()),
        MSE_NOTE.to_string(),
    ]
}

fn scenarios(f: ScenarioFilter) -> Vec<Scenario> {
    Scenario::ALL.into_iter().filter(|&s| f.accepts(s)).collect()
}

pub fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    if c.seeds == 0 {
        return Err(UsageError("--seeds must be at least 1".into()).into());
    }
    let s = load_settings(c)?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(c, &s, a),
        Command::Sweep(a) => cmd_sweep(c, &s, a),
        Command::Plan(a) => cmd_plan(c, &s, a),
        Command::Train(a) => cmd_train(c, &s, a),
        Command::Eval(a) => cmd_eval(c, &s, a),
        Command::Inspect(a) => cmd_inspect(c, &s, a),
    }
}

fn quickdraw(path: &Path, scene: &SceneModel) -> anyhow::Result<Vec<Drawing>> {
    let file = load_quickdraw_simplified(path, &scene.drawing_area)?;
    for e in &file.malformed {
        log::warn!("skipping malformed record: {e}");
    }
    if file.drawings.is_empty() {
        return Err(anyhow!("{} contains no usable drawings", path.display()));
    }
    Ok(file.drawings)
}

pub fn cmd_simulate(c: &Common, s: &Settings, a: &SimulateArgs) -> anyhow::Result<()> {
    let scene = load_scene(c)?;
    let materials = if a.materials.is_empty() { Material::ALL.to_vec() } else { a.materials.clone() };
    let mut out = Outputs::new(&c.out)?;
    out.file(c.out.join(MANIFEST_NAME));
    if !c.out.join("wav").exists() {
        out.file(c.out.join("wav"));
    }
    let entries = match a.kind {
        DataKind::Impulse => {
            let cfg = ImpulseDatasetConfig {
                counts: materials.iter().map(|&m| (m, a.count)).collect(),
                noise_level: a.noise_level.unwrap_or(scene.white_noise_level),
                seed: c.seed,
            };
            generate_impulse_dataset(&scene, &cfg, &c.out)?
        }
        DataKind::Stroke => {
            let drawings = a.quickdraw.as_deref().map(|p| quickdraw(p, &scene)).transpose()?;
            let cfg = StrokeDatasetConfig {
                materials,
                scenarios: scenarios(c.scenario),
                drawings: a.drawings,
                strokes_per_drawing: a.strokes_per_drawing,
                categories: a.categories.unwrap_or(a.drawings),
                seed: c.seed,
            };
            generate_stroke_dataset(&scene, &cfg, drawings.as_deref(), &c.out)?
        }
    };
    let mut counts: BTreeMap<(Material, Scenario), usize> = BTreeMap::new();
    for e in &entries {
        *counts.entry((e.material, e.scenario)).or_default() += 1;
    }
    let info = out.file(c.out.join("simulate.txt"));
    let mut text = header(c, s, c.seed)[..3].iter().map(|h| format!("# {h}\n")).collect::<String>();
    text.push_str("material,scenario,recordings\n");
    for ((m, sc), n) in &counts {
        text.push_str(&format!("{m},{sc},{n}\n"));
    }
    std::fs::write(&info, &text).with_context(|| format!("cannot write {}", info.display()))?;
    println!("wrote {} recordings to {} (seed {})", entries.len(), c.out.display(), c.seed);
    for ((m, sc), n) in &counts {
        println!("  {m:<13} {sc:<7} {n}");
    }
    out.commit();
    Ok(())
}

pub fn cmd_plan(c: &Common, _s: &Settings, a: &PlanArgs) -> anyhow::Result<()> {
    let scene = load_scene(c)?;
    let size = scene.drawing_area.size_mm;
    let drawings = match &a.quickdraw {
        Some(p) => quickdraw(p, &scene)?,
        None => (0..a.drawings as u64)
            .map(|i| synth_drawing(c.seed.wrapping_add(i), a.strokes, size))
            .collect::<Result<_, _>>()?,
    };
    let home = [size / 2.0, size / 2.0];
    let mut out = Outputs::new(&c.out)?;
    let path = out.file(c.out.join("plans.jsonl"));
    let mut text = String::new();
    let (mut total, mut total_nn) = (0.0, 0.0);
    for (i, d) in drawings.iter().enumerate() {
        let inst = GtspInstance::new(d.strokes.clone(), home)?;
        let plan = plan_strokes(&inst);
        let nn = nearest_neighbor_plan(&inst);
        let mut v: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&plan.to_json())?;
        v.insert("drawing".into(), i.into());
        v.insert("category".into(), d.category.clone().into());
        v.insert("seed".into(), c.seed.into());
        v.insert("nearest_neighbor_cost_mm".into(), nn.cost_mm.into());
        text.push_str(&serde_json::to_string(&v)?);
        text.push('\n');
        total += plan.cost_mm;
        total_nn += nn.cost_mm;
    }
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    println!(
        "planned {} drawings: pen-up travel {total:.1} mm (nearest neighbor {total_nn:.1} mm) -> {}",
        drawings.len(),
        path.display()
    );
    out.commit();
    Ok(())
}

fn split_options(c: &Common, test_frac: f64, val_frac: f64) -> SplitOptions {
    SplitOptions { held_out: c.hold_out, scenario: c.scenario, test_frac, val_frac, seed: c.seed }
}

pub fn cmd_train(c: &Common, s: &Settings, a: &TrainArgs) -> anyhow::Result<()> {
    let scene = load_scene(c)?;
    let (entries, dir) = load_manifest(c)?;
    let samples = manifest_features(&entries, &dir, &s.pipeline, s.chunk_ms)?;
    let norm = TargetNorm::from_workspace(&scene.workspace);
    let splits = make_splits(&samples, &split_options(c, a.test_frac, a.val_frac))?;
    let mut out = Outputs::new(&c.out)?;
    let runs = run_seeds(&splits, s, norm, &seed_list(c.seed, c.seeds))?;

    let mut records = Vec::new();
    for run in &runs {
        let mut meta = BTreeMap::new();
        meta.insert("pipeline".to_string(), s.pipeline.to_config().to_text());
        meta.insert("chunk_ms".to_string(), format!("{:?}", s.chunk_ms));
        meta.insert("seed".to_string(), run.seed.to_string());
        meta.insert("config_hash".to_string(), s.hash());
        meta.insert("best_step".to_string(), run.outcome.best_step.to_string());
        let ckpt = out.file(c.out.join(format!("ckpt_seed{}.bin", run.seed)));
        save_checkpoint(run.model(), &meta, &ckpt)?;
        let log = out.file(c.out.join(format!("log_seed{}.csv", run.seed)));
        write_log_csv(&log, &header(c, s, run.seed), &run.outcome.log)?;
        records.extend(run.records.iter().cloned());
    }
    let comments = header(c, s, c.seed);
    write_records_csv(&out.file(c.out.join("records.csv")), &comments, &records)?;
    let keys = [GroupKey::Material, GroupKey::Scenario, GroupKey::Seed];
    write_stats_csv(&out.file(c.out.join("stats.csv")), &comments, &keys, &aggregate(&records, &keys))?;

    let (mean, std) = across_seeds(&records);
    let center = ConstantPredictor(scene.workspace.center());
    let baseline = aggregate(&evaluate(&center, &splits.test, &norm)?, &[])[0].mean_mm;
    let summary = out.file(c.out.join("summary.csv"));
    let mut text: String = comments.iter().map(|h| format!("# {h}\n")).collect();
    text.push_str("seeds,train,val,test,mean_mm,std_mm,center_baseline_mm\n");
    text.push_str(&format!(
        "{},{},{},{},{mean:.4},{std:.4},{baseline:.4}\n",
        runs.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    ));
    std::fs::write(&summary, text).with_context(|| format!("cannot write {}", summary.display()))?;
    println!(
        "{} seed(s): test error {mean:.2} ± {std:.2} mm (center baseline {baseline:.2} mm) -> {}",
        runs.len(),
        c.out.display()
    );
    out.commit();
    Ok(())
}

fn checkpoint_pipeline(meta: &BTreeMap<String, String>, fallback: &Settings) -> anyhow::Result<(PipelineConfig, f64)> {
    let mut pipeline = fallback.pipeline;
    if let Some(text) = meta.get("pipeline") {
        pipeline.apply(&FlatConfig::parse(text, "checkpoint pipeline")?)?;
    }
    let chunk_ms = match meta.get("chunk_ms") {
        Some(v) => v.parse().map_err(|_| anyhow!("bad chunk_ms '{v}' in checkpoint"))?,
        None => fallback.chunk_ms,
    };
    Ok((pipeline, chunk_ms))
}

pub fn cmd_eval(c: &Common, s: &Settings, a: &EvalArgs) -> anyhow::Result<()> {
    if a.checkpoint.is_empty() && a.predictor.is_none() {
        return Err(UsageError("eval needs --checkpoint or --predictor".into()).into());
    }
    let scene = load_scene(c)?;
    let (entries, dir) = load_manifest(c)?;
    let entries: Vec<ManifestEntry> = entries
        .into_iter()
        .filter(|e| c.scenario.accepts(e.scenario) && c.hold_out.is_none_or(|m| e.material == m))
        .collect();
    if entries.is_empty() {
        return Err(anyhow!("no manifest entries match the scenario / material filter"));
    }
    let mut cache: HashMap<String, Vec<FeatureSample>> = HashMap::new();
    let mut features = |pipeline: &PipelineConfig, chunk_ms: f64| -> anyhow::Result<Vec<FeatureSample>> {
        let key = format!("{}chunk_ms={chunk_ms:?}", pipeline.to_config().to_text());
        if !cache.contains_key(&key) {
            cache.insert(key.clone(), manifest_features(&entries, &dir, pipeline, chunk_ms)?);
        }
        Ok(cache[&key].clone())
    };

    let mut records: Vec<ErrorRecord> = Vec::new();
    if let Some(stub) = a.predictor {
        let norm = TargetNorm::from_workspace(&scene.workspace);
        let samples = features(&s.pipeline, s.chunk_ms)?;
        let pred: Box<dyn Predictor> = match stub {
            StubPredictor::Perfect => Box::new(PerfectPredictor),
            StubPredictor::Center => Box::new(ConstantPredictor(scene.workspace.center())),
        };
        records = evaluate(pred.as_ref(), &samples, &norm)?;
    }
    for path in &a.checkpoint {
        let ckpt = load_checkpoint::<f32>(path).with_context(|| format!("cannot load {}", path.display()))?;
        let (pipeline, chunk_ms) = checkpoint_pipeline(&ckpt.meta, s)?;
        let samples = features(&pipeline, chunk_ms)?;
        let seed = ckpt.meta.get("seed").and_then(|v| v.parse().ok());
        let mut recs = evaluate(&ckpt.params, &samples, &ckpt.params.target_norm)?;
        for r in &mut recs {
            r.seed = seed;
        }
        records.extend(recs);
    }

    let mut out = Outputs::new(&c.out)?;
    let comments = header(c, s, c.seed);
    write_records_csv(&out.file(c.out.join("records.csv")), &comments, &records)?;
    let mut keys = a.group_by.clone();
    if a.checkpoint.len() > 1 && !keys.contains(&GroupKey::Seed) {
        keys.push(GroupKey::Seed);
    }
    let stats = aggregate(&records, &keys);
    write_stats_csv(&out.file(c.out.join("stats.csv")), &comments, &keys, &stats)?;
    if a.trajectories {
        out.dir(&c.out.join("trajectories"))?;
        let strokes: Vec<ErrorRecord> = records.iter().filter(|r| r.chunk.is_some()).cloned().collect();
        for (source, recs) in group_by_source(&strokes) {
            let mut by_seed: BTreeMap<Option<u64>, Vec<ErrorRecord>> = BTreeMap::new();
            for r in recs {
                by_seed.entry(r.seed).or_default().push(r);
            }
            for (seed, recs) in by_seed {
                let name = match seed {
                    Some(sd) => format!("{source}_seed{sd}.csv"),
                    None => format!("{source}.csv"),
                };
                let points = reconstruct_trajectory(&recs, a.smooth)?;
                write_trajectory_csv(&out.file(c.out.join("trajectories").join(name)), &comments, &points)?;
            }
        }
    }
    for g in &stats {
        let key = if g.key.is_empty() { "all".to_string() } else { g.key.join(" ") };
        println!("{key:<28} n={:<6} {:.3} ± {:.3} mm  mse_norm {:.3e}", g.count, g.mean_mm, g.std_mm, g.mse_norm);
    }
    out.commit();
    Ok(())
}

pub fn cmd_sweep(c: &Common, s: &Settings, a: &SweepArgs) -> anyhow::Result<()> {
    let scene = load_scene(c)?;
    let (entries, dir) = load_manifest(c)?;
    let norm = TargetNorm::from_workspace(&scene.workspace);
    let split = split_options(c, a.test_frac, 0.0);
    let cells = run_sweep(
        |p: &PipelineConfig| manifest_features(&entries, &dir, p, s.chunk_ms),
        &a.rates,
        &a.n_ffts,
        s,
        &split,
        norm,
        &seed_list(c.seed, c.seeds),
    )?;
    let mut out = Outputs::new(&c.out)?;
    let path = out.file(c.out.join("sweep.csv"));
    std::fs::write(&path, sweep_csv(&header(c, s, c.seed), &cells))
        .with_context(|| format!("cannot write {}", path.display()))?;
    for cell in &cells {
        println!(
            "{:>6} Hz  n_fft {:<5} hop {:<4} {:.2} ± {:.2} mm ({} seeds)",
            cell.rate_hz, cell.n_fft, cell.hop, cell.mean_mm, cell.std_mm, cell.seeds
        );
    }
    out.commit();
    Ok(())
}

/// Per-channel magnitude spectra of the analysis window at the raw rate,
/// and the fraction of their summed power below `cutoff_hz`.
pub struct ChannelSpectra {
    pub bin_hz: f64,
    pub magnitudes: Vec<Vec<f64>>,
    pub fraction_below: f64,
}

pub fn channel_spectra(
    rec: &vibroloc::signal::recording::Recording,
    start_ms: f64,
    end_ms: f64,
    cutoff_hz: f64,
) -> vibroloc::Result<ChannelSpectra> {
    let a = rec.index_at(start_ms).min(rec.len());
    let b = rec.index_at(end_ms).min(rec.len());
    let n = b.saturating_sub(a) & !1;
    let stft = Stft::<f64>::new(StftParams { n_fft: n, hop: n.max(1), window: WindowKind::Hann })?;
    let mut magnitudes = Vec::with_capacity(rec.channels.len());
    for ch in &rec.channels {
        let x: Vec<f64> = ch[a..a + n].iter().map(|&v| v as f64).collect();
        magnitudes.push(stft.process(&x)?.magnitude());
    }
    let bin_hz = rec.sample_rate as f64 / n as f64;
    let pooled: Vec<f64> = (0..n / 2 + 1)
        .map(|k| magnitudes.iter().map(|m| m[k] * m[k]).sum::<f64>().sqrt())
        .collect();
    let fraction_below = energy_fraction_below(&pooled, bin_hz, cutoff_hz);
    Ok(ChannelSpectra { bin_hz, magnitudes, fraction_below })
}

pub fn cmd_inspect(c: &Common, s: &Settings, a: &InspectArgs) -> anyhow::Result<()> {
    let (entries, dir) = load_manifest(c)?;
    let entry = match &a.id {
        Some(id) => entries.iter().find(|e| &e.id == id).ok_or_else(|| anyhow!("no entry with id '{id}'"))?,
        None => &entries[0],
    };
    let rec = entry.load(&dir)?;
    println!("id            {}", entry.id);
    println!("kind          {}", rec.label.kind_str());
    println!("material      {}", rec.label.material);
    println!("view/region   {} / {}", rec.label.view.as_str(), rec.label.region);
    println!("scenario      {}", rec.label.scenario);
    if let Some(p) = entry.position_mm {
        println!("position mm   {:.2} {:.2} {:.2}", p[0], p[1], p[2]);
    }
    println!("channels      {} x {} samples @ {} Hz ({:.1} ms)", rec.channels.len(), rec.len(), rec.sample_rate, rec.duration_ms());
    println!("trigger       {:.1} ms", rec.trigger_offset_ms);
    let feats = recording_features(&entry.id, entry.category.as_deref(), &rec, &s.pipeline, s.chunk_ms)?;
    let (ch, t, f) = feats[0].input.shape();
    println!("features      {} tensor(s) of {ch} x {t} x {f}", feats.len());

    let spectra = channel_spectra(&rec, s.pipeline.trim_start_ms, s.pipeline.trim_end_ms, a.cutoff_hz)?;
    let db: Vec<Vec<f64>> = spectra.magnitudes.iter().map(|m| magnitude_db_normalized(m)).collect::<Result<_, _>>()?;
    println!("energy below {:.0} Hz: {:.4}%", a.cutoff_hz, 100.0 * spectra.fraction_below);

    let mut out = Outputs::new(&c.out)?;
    let path = out.file(c.out.join(format!("spectra_{}.csv", entry.id)));
    let mut text: String = header(c, s, c.seed)[..3].iter().map(|h| format!("# {h}\n")).collect();
    text.push_str(&format!("# id={} window_ms={}..{}\n", entry.id, s.pipeline.trim_start_ms, s.pipeline.trim_end_ms));
    text.push_str(&format!("# energy_fraction_below_{:.0}_hz={:.6}\n", a.cutoff_hz, spectra.fraction_below));
    text.push_str("freq_hz");
    for k in 0..db.len() {
        text.push_str(&format!(",ch{k}_db"));
    }
    text.push('\n');
    for bin in 0..db[0].len() {
        text.push_str(&format!("{:.2}", bin as f64 * spectra.bin_hz));
        for chan in &db {
            text.push_str(&format!(",{:.3}", chan[bin]));
        }
        text.push('\n');
    }
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    println!("spectra       {}", path.display());
    out.commit();
    Ok(())
}
