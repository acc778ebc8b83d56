//! Splits, per-sample errors, grouped statistics and trajectory export.
//!
//! Errors are Euclidean distances in mm. MSE is reported in normalized
//! target space, where the workspace maps to `[-1, 1]` per axis.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSample;
use crate::error::{Error, Result};
use crate::io::ManifestEntry;
use crate::model::{forward, ModelParams, TargetNorm};
use crate::signal::features::SpectrogramTensor;
use crate::signal::recording::{Material, Region, Scenario, View};
use crate::sim::noise::{derived_rng, stream};
use crate::sim::scene::{distance, Point3};
use crate::Scalar;

/// Category counts for train, validation and test at full scale.
pub const CATEGORY_COUNTS: [usize; 3] = [276, 35, 34];

/// Metadata the splitters need.
pub trait SplitKey {
    fn material(&self) -> Material;
    fn scenario(&self) -> Scenario;
    fn category(&self) -> Option<&str>;
}

impl SplitKey for ManifestEntry {
    fn material(&self) -> Material {
        self.material
    }
    fn scenario(&self) -> Scenario {
        self.scenario
    }
    fn category(&self) -> Option<&str> {
        self.category.as_deref()
    }
}

impl SplitKey for FeatureSample {
    fn material(&self) -> Material {
        self.material
    }
    fn scenario(&self) -> Scenario {
        self.scenario
    }
    fn category(&self) -> Option<&str> {
        self.category.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFilter {
    Fixed,
    Moving,
    #[default]
    Both,
}

impl ScenarioFilter {
    pub fn accepts(self, s: Scenario) -> bool {
        match self {
            ScenarioFilter::Both => true,
            ScenarioFilter::Fixed => s == Scenario::Fixed,
            ScenarioFilter::Moving => s == Scenario::Moving,
        }
    }
}

impl std::str::FromStr for ScenarioFilter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(ScenarioFilter::Fixed),
            "moving" => Ok(ScenarioFilter::Moving),
            "both" => Ok(ScenarioFilter::Both),
            _ => Err(Error::Invalid(format!("unknown scenario filter '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategorySplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl CategorySplit {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(c) {
                return Err(Error::Invalid(format!("category '{c}' appears in more than one list")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitSpec {
    pub held_out_material: Option<Material>,
    pub scenario: ScenarioFilter,
    pub categories: Option<CategorySplit>,
}

/// `(train, test)`: test holds every item of `material`.
pub fn split_leave_one_material_out<S: SplitKey + Clone>(items: &[S], material: Material) -> (Vec<S>, Vec<S>) {
    items.iter().cloned().partition(|s| s.material() != material)
}

/// Shuffles the distinct categories with `seed` and cuts them into train,
/// validation and test lists. With fewer categories than `counts` sums to,
/// validation and test sizes scale proportionally (rounded) and train takes
/// the remainder.
pub fn split_categories(categories: &[String], counts: [usize; 3], seed: u64) -> Result<CategorySplit> {
    let mut cats: Vec<String> = categories.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let n = cats.len();
    let full: usize = counts.iter().sum();
    if full == 0 {
        return Err(Error::Invalid("category counts sum to zero".into()));
    }
    let (val, test) = if n >= full {
        (counts[1], counts[2])
    } else {
        let scale = |c: usize| (c as f64 * n as f64 / full as f64).round() as usize;
        (scale(counts[1]), scale(counts[2]))
    };
    if val + test > n {
        return Err(Error::Invalid(format!("{n} categories cannot hold {val} validation + {test} test")));
    }
    cats.shuffle(&mut derived_rng(seed, &[stream::SPLIT]));
    let test_list = cats.split_off(n - test);
    let val_list = cats.split_off(cats.len() - val);
    Ok(CategorySplit { train: cats, val: val_list, test: test_list })
}

/// Random `(train, test)` split by source recording, so chunks of one
/// recording never straddle the split. Test gets `round(test_frac * n)`
/// sources, at least one when there are two or more.
pub fn split_by_source(items: &[FeatureSample], test_frac: f64, seed: u64) -> Result<(Vec<FeatureSample>, Vec<FeatureSample>)> {
    if !(0.0..1.0).contains(&test_frac) {
        return Err(Error::Invalid(format!("test fraction {test_frac} not in [0, 1)")));
    }
    let mut sources: Vec<&str> = items.iter().map(|s| s.source.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    sources.shuffle(&mut derived_rng(seed, &[stream::SPLIT, 1]));
    let n = sources.len();
    let mut k = (test_frac * n as f64).round() as usize;
    if test_frac > 0.0 && n >= 2 {
        k = k.clamp(1, n - 1);
    }
    let test: BTreeSet<&str> = sources[..k].iter().copied().collect();
    Ok(items.iter().cloned().partition(|s| !test.contains(s.source.as_str())))
}

/// Applies `spec`: `(train, val, test)`. Without a held-out material the
/// category split decides test membership; without categories validation
/// is empty.
pub fn apply_split<S: SplitKey + Clone>(items: &[S], spec: &SplitSpec) -> Result<(Vec<S>, Vec<S>, Vec<S>)> {
    if let Some(c) = &spec.categories {
        c.validate()?;
    }
    let list_of = |s: &S| -> Option<usize> {
        let c = spec.categories.as_ref()?;
        let cat = s.category()?;
        [&c.train, &c.val, &c.test].iter().position(|l| l.iter().any(|x| x == cat))
    };
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in items.iter().filter(|s| spec.scenario.accepts(s.scenario())) {
        let held = spec.held_out_material.map(|m| s.material() == m);
        // 0 train, 1 val, 2 test
        let dest = match (spec.categories.is_some(), held) {
            (false, Some(true)) => Some(2),
            (false, _) => Some(0),
            // held-out material only counts on test categories, the rest
            // only on train and validation categories
            (true, Some(true)) => list_of(s).filter(|&l| l == 2),
            (true, Some(false)) => list_of(s).filter(|&l| l < 2),
            (true, None) => list_of(s),
        };
        match dest {
            Some(0) => train.push(s.clone()),
            Some(1) => val.push(s.clone()),
            Some(_) => test.push(s.clone()),
            None => {}
        }
    }
    Ok((train, val, test))
}

/// Anything that maps feature samples to positions in mm.
pub trait Predictor {
    fn predict_mm(&self, samples: &[FeatureSample]) -> Result<Vec<Point3>>;
}

const PREDICT_BATCH: usize = 256;

impl<T: Scalar> Predictor for ModelParams<T> {
    fn predict_mm(&self, samples: &[FeatureSample]) -> Result<Vec<Point3>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(PREDICT_BATCH) {
            let inputs: Vec<SpectrogramTensor<T>> = chunk.iter().map(|s| s.input.cast()).collect();
            let refs: Vec<&SpectrogramTensor<T>> = inputs.iter().collect();
            for p in forward(self, &refs)? {
                out.push(self.target_norm.denormalize(&p.map(|v| v.to_f64().unwrap())));
            }
        }
        Ok(out)
    }
}

/// Returns the labels themselves.
pub struct PerfectPredictor;

impl Predictor for PerfectPredictor {
    fn predict_mm(&self, samples: &[FeatureSample]) -> Result<Vec<Point3>> {
        Ok(samples.iter().map(|s| s.target_mm).collect())
    }
}

/// Always predicts the same point, e.g. the workspace center.
pub struct ConstantPredictor(pub Point3);

impl Predictor for ConstantPredictor {
    fn predict_mm(&self, samples: &[FeatureSample]) -> Result<Vec<Point3>> {
        Ok(vec![self.0; samples.len()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub id: String,
    pub source: String,
    pub material: Material,
    pub view: View,
    pub region: Region,
    pub scenario: Scenario,
    pub category: Option<String>,
    pub chunk: Option<usize>,
    pub t_ms: f64,
    pub seed: Option<u64>,
    pub error_mm: f64,
    /// Squared error in normalized target space, averaged over axes.
    pub mse_norm: f64,
    pub predicted_mm: Point3,
    pub target_mm: Point3,
}

/// One record per sample (stroke chunks count individually).
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    samples: &[FeatureSample],
    norm: &TargetNorm,
) -> Result<Vec<ErrorRecord>> {
    let preds = predictor.predict_mm(samples)?;
    if preds.len() != samples.len() {
        return Err(Error::Shape(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    Ok(samples
        .iter()
        .zip(preds)
        .map(|(s, p)| {
            let (a, b) = (norm.normalize(&p), norm.normalize(&s.target_mm));
            let mse_norm = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>() / 3.0;
            ErrorRecord {
                id: s.id.clone(),
                source: s.source.clone(),
                material: s.material,
                view: s.view,
                region: s.region,
                scenario: s.scenario,
                category: s.category.clone(),
                chunk: s.chunk,
                t_ms: s.t_ms,
                seed: None,
                error_mm: distance(&p, &s.target_mm),
                mse_norm,
                predicted_mm: p,
                target_mm: s.target_mm,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Material,
    View,
    Region,
    Scenario,
    Seed,
}

impl GroupKey {
    pub fn name(self) -> &'static str {
        match self {
            GroupKey::Material => "material",
            GroupKey::View => "view",
            GroupKey::Region => "region",
            GroupKey::Scenario => "scenario",
            GroupKey::Seed => "seed",
        }
    }

    fn value(self, r: &ErrorRecord) -> String {
        match self {
            GroupKey::Material => r.material.to_string(),
            GroupKey::View => r.view.as_str().to_string(),
            GroupKey::Region => r.region.to_string(),
            GroupKey::Scenario => r.scenario.to_string(),
            GroupKey::Seed => r.seed.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
        }
    }
}

impl std::str::FromStr for GroupKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [GroupKey::Material, GroupKey::View, GroupKey::Region, GroupKey::Scenario, GroupKey::Seed]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown group key '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    /// One value per requested key; empty for the overall row.
    pub key: Vec<String>,
    pub count: usize,
    pub mean_mm: f64,
    /// Sample standard deviation; 0 for a single record.
    pub std_mm: f64,
    pub mse_norm: f64,
}

/// Mean and sample standard deviation; std is 0 below two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Stats per distinct key combination, sorted by key.
pub fn aggregate(records: &[ErrorRecord], keys: &[GroupKey]) -> Vec<GroupStats> {
    let mut groups: BTreeMap<Vec<String>, (Vec<f64>, f64)> = BTreeMap::new();
    for r in records {
        let k = keys.iter().map(|g| g.value(r)).collect();
        let e = groups.entry(k).or_default();
        e.0.push(r.error_mm);
        e.1 += r.mse_norm;
    }
    groups
        .into_iter()
        .map(|(key, (mut errs, mse))| {
            // sorting makes the sums independent of record order
            errs.sort_by(f64::total_cmp);
            let (mean_mm, std_mm) = mean_std(&errs);
            GroupStats { key, count: errs.len(), mean_mm, std_mm, mse_norm: mse / errs.len() as f64 }
        })
        .collect()
}

/// Mean and std across seeds of each seed's mean error.
pub fn across_seeds(records: &[ErrorRecord]) -> (f64, f64) {
    let means: Vec<f64> = aggregate(records, &[GroupKey::Seed]).iter().map(|g| g.mean_mm).collect();
    mean_std(&means)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub chunk: usize,
    pub t_ms: f64,
    pub target_mm: Point3,
    pub predicted_mm: Point3,
    pub error_mm: f64,
}

/// Chunk predictions of one recording in time order. With `smooth` > 1 the
/// predicted polyline is a centered moving average over that many chunks
/// (shrinking at the ends) and errors refer to the smoothed points.
pub fn reconstruct_trajectory(records: &[ErrorRecord], smooth: Option<usize>) -> Result<Vec<TrajectoryPoint>> {
    let Some(first) = records.first() else {
        return Err(Error::Invalid("no chunk records".into()));
    };
    if let Some(r) = records.iter().find(|r| r.source != first.source) {
        return Err(Error::Invalid(format!("records from {} and {}", first.source, r.source)));
    }
    let mut rs: Vec<&ErrorRecord> = records.iter().collect();
    rs.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms).then(a.chunk.cmp(&b.chunk)));
    let raw: Vec<Point3> = rs.iter().map(|r| r.predicted_mm).collect();
    let half = smooth.filter(|&w| w > 1).map(|w| w / 2);
    Ok(rs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let predicted_mm = match half {
                None => raw[i],
                Some(h) => {
                    let (lo, hi) = (i.saturating_sub(h), (i + h).min(raw.len() - 1));
                    let n = (hi - lo + 1) as f64;
                    std::array::from_fn(|k| raw[lo..=hi].iter().map(|p| p[k]).sum::<f64>() / n)
                }
            };
            TrajectoryPoint {
                chunk: r.chunk.unwrap_or(i),
                t_ms: r.t_ms,
                target_mm: r.target_mm,
                predicted_mm,
                error_mm: distance(&predicted_mm, &r.target_mm),
            }
        })
        .collect())
}

/// Records grouped by source recording, in first-appearance order.
pub fn group_by_source(records: &[ErrorRecord]) -> Vec<(String, Vec<ErrorRecord>)> {
    let mut order: Vec<(String, Vec<ErrorRecord>)> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        let i = *index.entry(r.source.clone()).or_insert_with(|| {
            order.push((r.source.clone(), Vec::new()));
            order.len() - 1
        });
        order[i].1.push(r.clone());
    }
    order
}

fn write_csv(path: &Path, comments: &[String], body: Vec<u8>) -> Result<()> {
    let mut out = Vec::new();
    for c in comments {
        writeln!(out, "# {c}").unwrap();
    }
    out.extend(body);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn xyz(p: &Point3) -> String {
    format!("{:.4},{:.4},{:.4}", p[0], p[1], p[2])
}

pub fn write_records_csv(path: &Path, comments: &[String], records: &[ErrorRecord]) -> Result<()> {
    let mut b = Vec::new();
    writeln!(
        b,
        "id,source,material,view,region,scenario,category,chunk,t_ms,seed,error_mm,mse_norm,pred_x,pred_y,pred_z,target_x,target_y,target_z"
    )
    .unwrap();
    for r in records {
        writeln!(
            b,
            "{},{},{},{},{},{},{},{},{:.3},{},{:.4},{:.6e},{},{}",
            r.id,
            r.source,
            r.material,
            r.view.as_str(),
            r.region,
            r.scenario,
            r.category.as_deref().unwrap_or(""),
            r.chunk.map(|c| c.to_string()).unwrap_or_default(),
            r.t_ms,
            r.seed.map(|c| c.to_string()).unwrap_or_default(),
            r.error_mm,
            r.mse_norm,
            xyz(&r.predicted_mm),
            xyz(&r.target_mm)
        )
        .unwrap();
    }
    write_csv(path, comments, b)
}

pub fn write_stats_csv(path: &Path, comments: &[String], keys: &[GroupKey], stats: &[GroupStats]) -> Result<()> {
    let mut b = Vec::new();
    let names: Vec<&str> = keys.iter().map(|k| k.name()).collect();
    let prefix = if names.is_empty() { String::new() } else { format!("{},", names.join(",")) };
    writeln!(b, "{prefix}count,mean_mm,std_mm,mse_norm").unwrap();
    for s in stats {
        let key = if s.key.is_empty() { String::new() } else { format!("{},", s.key.join(",")) };
        writeln!(b, "{key}{},{:.4},{:.4},{:.6e}", s.count, s.mean_mm, s.std_mm, s.mse_norm).unwrap();
    }
    write_csv(path, comments, b)
}

pub fn write_trajectory_csv(path: &Path, comments: &[String], points: &[TrajectoryPoint]) -> Result<()> {
    let mut b = Vec::new();
    writeln!(b, "chunk,t_ms,target_x,target_y,target_z,pred_x,pred_y,pred_z,error_mm").unwrap();
    for p in points {
        writeln!(b, "{},{:.3},{},{},{:.4}", p.chunk, p.t_ms, xyz(&p.target_mm), xyz(&p.predicted_mm), p.error_mm).unwrap();
    }
    write_csv(path, comments, b)
}

#[cfg(test)]
mod tests;
