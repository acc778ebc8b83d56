//! Splitting, the multi-seed train/evaluate protocol and the
//! rate/window sweep.

use std::collections::BTreeSet;

use vibroloc::data::{common_shape, FeatureSample};
use vibroloc::eval::{
    across_seeds, apply_split, evaluate, split_by_source, split_categories, ErrorRecord, ScenarioFilter,
    SplitSpec, CATEGORY_COUNTS,
};
use vibroloc::model::TargetNorm;
use vibroloc::signal::features::PipelineConfig;
use vibroloc::signal::recording::Material;
use vibroloc::train::{train, TrainOutcome};
use vibroloc::{Error, Result};

use crate::settings::Settings;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    pub held_out: Option<Material>,
    pub scenario: ScenarioFilter,
    /// Fraction of sources sent to test when no material is held out and
    /// the data has no drawing categories.
    pub test_frac: f64,
    /// Fraction of training sources kept for validation (impulse data).
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions { held_out: None, scenario: ScenarioFilter::Both, test_frac: 0.2, val_frac: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<FeatureSample>,
    pub val: Vec<FeatureSample>,
    pub test: Vec<FeatureSample>,
}

/// Stroke data (which carries drawing categories) uses the category split;
/// impulse data uses the held-out material or a random split by source.
pub fn make_splits(samples: &[FeatureSample], opts: &SplitOptions) -> Result<Splits> {
    let cats: BTreeSet<&str> = samples.iter().filter_map(|s| s.category.as_deref()).collect();
    let (train, mut val, test) = if !cats.is_empty() {
        let cats: Vec<String> = cats.into_iter().map(str::to_string).collect();
        let spec = SplitSpec {
            held_out_material: opts.held_out,
            scenario: opts.scenario,
            categories: Some(split_categories(&cats, CATEGORY_COUNTS, opts.seed)?),
        };
        apply_split(samples, &spec)?
    } else {
        let spec = SplitSpec { held_out_material: opts.held_out, scenario: opts.scenario, categories: None };
        let (rest, _, held) = apply_split(samples, &spec)?;
        if opts.held_out.is_some() {
            (rest, Vec::new(), held)
        } else {
            let (train, test) = split_by_source(&rest, opts.test_frac, opts.seed)?;
            (train, Vec::new(), test)
        }
    };
    let mut train = train;
    if val.is_empty() && opts.val_frac > 0.0 {
        let (t, v) = split_by_source(&train, opts.val_frac, opts.seed.wrapping_add(1))?;
        train = t;
        val = v;
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Invalid(format!(
            "split left {} training and {} test samples; both must be non-empty",
            train.len(),
            test.len()
        )));
    }
    Ok(Splits { train, val, test })
}

pub struct SeedRun {
    pub seed: u64,
    pub outcome: TrainOutcome<f32>,
    /// Test records of the evaluated model, tagged with `seed`.
    pub records: Vec<ErrorRecord>,
}

impl SeedRun {
    /// Best-on-validation when validation data existed, else the last step.
    pub fn model(&self) -> &vibroloc::ModelParams32 {
        match self.outcome.best_val_mm {
            Some(_) => &self.outcome.best,
            None => &self.outcome.last,
        }
    }
}

/// Trains one desk model per seed and evaluates each on the test split.
pub fn run_seeds(splits: &Splits, settings: &Settings, norm: TargetNorm, seeds: &[u64]) -> Result<Vec<SeedRun>> {
    let (_, t, f) = common_shape(&splits.train)?;
    let model = settings.model_config(t, f)?;
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = vibroloc::train::TrainConfig { seed, ..settings.train };
        log::info!("seed {seed}: {} train / {} val / {} test", splits.train.len(), splits.val.len(), splits.test.len());
        let outcome = train::<f32>(model, norm, &splits.train, &splits.val, &cfg)?;
        let mut run = SeedRun { seed, outcome, records: Vec::new() };
        let mut records = evaluate(run.model(), &splits.test, &norm)?;
        for r in &mut records {
            r.seed = Some(seed);
        }
        run.records = records;
        runs.push(run);
    }
    Ok(runs)
}

/// `seed, seed + 1, ..`
pub fn seed_list(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| seed.wrapping_add(i)).collect()
}

/// Hop for a sweep cell: keeps the 3.2 ms frame period of 64 samples at
/// 20 kHz, capped at half the window.
pub fn sweep_hop(rate_hz: u32, n_fft: usize) -> usize {
    ((0.0032 * rate_hz as f64).round() as usize).clamp(1, (n_fft / 2).max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub rate_hz: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub seeds: usize,
    /// Mean and std across seeds of the per-seed mean test error.
    pub mean_mm: f64,
    pub std_mm: f64,
}

/// Trains `seeds` models for every `(rate, n_fft)` cell. `features` builds
/// the samples for a given pipeline; the split depends only on sample
/// sources, so every cell sees the same recordings in each split.
pub fn run_sweep<F>(
    features: F,
    rates: &[u32],
    n_ffts: &[usize],
    settings: &Settings,
    split: &SplitOptions,
    norm: TargetNorm,
    seeds: &[u64],
) -> Result<Vec<SweepCell>>
where
    F: Fn(&PipelineConfig) -> Result<Vec<FeatureSample>>,
{
    if rates.is_empty() || n_ffts.is_empty() || seeds.is_empty() {
        return Err(Error::Invalid("sweep needs at least one rate, one n_fft and one seed".into()));
    }
    let mut cells = Vec::with_capacity(rates.len() * n_ffts.len());
    for &rate_hz in rates {
        for &n_fft in n_ffts {
            let hop = sweep_hop(rate_hz, n_fft);
            let pipeline = PipelineConfig { target_rate_hz: rate_hz, n_fft, hop, ..settings.pipeline };
            pipeline.validate()?;
            let samples = features(&pipeline)?;
            let splits = make_splits(&samples, split)?;
            let cell_settings = Settings { pipeline, ..settings.clone() };
            let runs = run_seeds(&splits, &cell_settings, norm, seeds)?;
            let records: Vec<ErrorRecord> = runs.into_iter().flat_map(|r| r.records).collect();
            let (mean_mm, std_mm) = across_seeds(&records);
            log::info!("sweep {rate_hz} Hz, n_fft {n_fft}, hop {hop}: {mean_mm:.2} ± {std_mm:.2} mm");
            cells.push(SweepCell { rate_hz, n_fft, hop, seeds: seeds.len(), mean_mm, std_mm });
        }
    }
    Ok(cells)
}

pub fn sweep_csv(comments: &[String], cells: &[SweepCell]) -> String {
    let mut s: String = comments.iter().map(|c| format!("# {c}\n")).collect();
    s.push_str("target_rate_hz,n_fft,hop,seeds,mean_mm,std_mm\n");
    for c in cells {
        s.push_str(&format!("{},{},{},{},{:.4},{:.4}\n", c.rate_hz, c.n_fft, c.hop, c.seeds, c.mean_mm, c.std_mm));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hop_rule() {
        assert_eq!(sweep_hop(20_000, 128), 64);
        assert_eq!(sweep_hop(4_000, 128), 13);
        assert_eq!(sweep_hop(20_000, 64), 32);
        assert_eq!(sweep_hop(50, 8), 1);
    }

    #[test]
    fn seeds_are_consecutive() {
        assert_eq!(seed_list(7, 3), vec![7, 8, 9]);
    }
}
