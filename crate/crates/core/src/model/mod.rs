//! Multi-channel spectrogram transformer regressing a 3D contact position.
//!
//! Parameters live in one flat buffer addressed through a [`Layout`] of
//! named tensors; gradients and optimizer moments reuse the same layout.

mod checkpoint;
mod net;

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::signal::features::SpectrogramTensor;
use crate::signal::recording::NUM_CHANNELS;
use crate::sim::noise::{derived_rng, stream};
use crate::sim::scene::{Point3, Workspace};
use crate::Scalar;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint};
pub use net::{attention_maps, forward, loss_and_grad, mse_loss, patch_embed, predict, GRAD_CHUNK};

pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Input frames.
    pub input_t: usize,
    /// Input frequency bins.
    pub input_f: usize,
    pub head_out: usize,
}

impl ModelConfig {
    /// D=64, depth 2, 4 heads.
    pub fn desk(input_t: usize, input_f: usize) -> Self {
        ModelConfig {
            channels: NUM_CHANNELS,
            kernel: 16,
            stride: 10,
            embed_dim: 64,
            depth: 2,
            heads: 4,
            mlp_ratio: 4,
            input_t,
            input_f,
            head_out: 3,
        }
    }

    /// Small enough for finite-difference checks.
    pub fn tiny() -> Self {
        ModelConfig {
            embed_dim: 16,
            heads: 2,
            ..Self::desk(26, 26)
        }
    }

    /// Twelve blocks, base-size width.
    pub fn base(input_t: usize, input_f: usize) -> Self {
        ModelConfig {
            embed_dim: 768,
            depth: 12,
            heads: 12,
            ..Self::desk(input_t, input_f)
        }
    }

    pub const KEYS: [&'static str; 6] = ["embed_dim", "depth", "heads", "kernel", "stride", "mlp_ratio"];

    /// Overrides from `model.*` keys.
    pub fn apply(&mut self, cfg: &FlatConfig) -> Result<()> {
        for (key, slot) in [
            ("model.embed_dim", &mut self.embed_dim),
            ("model.depth", &mut self.depth),
            ("model.heads", &mut self.heads),
            ("model.kernel", &mut self.kernel),
            ("model.stride", &mut self.stride),
            ("model.mlp_ratio", &mut self.mlp_ratio),
        ] {
            if let Some(v) = cfg.get_parsed::<usize>(key)? {
                *slot = v;
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
        }
        if self.depth == 0 || self.kernel == 0 || self.stride == 0 || self.mlp_ratio == 0 {
            return bad("depth, kernel, stride and mlp_ratio must be >= 1".into());
        }
        if self.channels == 0 || self.head_out != 3 {
            return bad("channels must be >= 1 and head_out must be 3".into());
        }
        if self.input_t < self.kernel || self.input_f < self.kernel {
            return Err(Error::Shape(format!(
                "input {}x{} smaller than kernel {}",
                self.input_t, self.input_f, self.kernel
            )));
        }
        Ok(())
    }

    /// Patch grid `(n_t, n_f)`.
    pub fn grid(&self) -> (usize, usize) {
        (
            (self.input_t - self.kernel) / self.stride + 1,
            (self.input_f - self.kernel) / self.stride + 1,
        )
    }

    pub fn num_patches(&self) -> usize {
        let (a, b) = self.grid();
        a * b
    }

    /// Patches plus the class token.
    pub fn tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn hidden(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub qkv_w: Range<usize>,
    pub qkv_b: Range<usize>,
    pub proj_w: Range<usize>,
    pub proj_b: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub fc1_w: Range<usize>,
    pub fc1_b: Range<usize>,
    pub fc2_w: Range<usize>,
    pub fc2_b: Range<usize>,
}

/// Named tensors in a flat buffer. Weights are `[out, in]`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub specs: Vec<TensorSpec>,
    pub(crate) patch_w: Range<usize>,
    pub(crate) patch_b: Range<usize>,
    pub(crate) cls: Range<usize>,
    pub(crate) pos: Range<usize>,
    pub(crate) blocks: Vec<BlockLayout>,
    pub(crate) lnf_g: Range<usize>,
    pub(crate) lnf_b: Range<usize>,
    pub(crate) head_w: Range<usize>,
    pub(crate) head_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut specs = Vec::new();
        let mut add = |name: String, shape: Vec<usize>| {
            let offset = specs.last().map_or(0, |s: &TensorSpec| s.offset + s.len());
            let spec = TensorSpec { name, shape, offset };
            let r = spec.range();
            specs.push(spec);
            r
        };
        let (d, h, p) = (cfg.embed_dim, cfg.hidden(), cfg.patch_dim());
        let patch_w = add("patch.w".into(), vec![d, p]);
        let patch_b = add("patch.b".into(), vec![d]);
        let cls = add("cls".into(), vec![d]);
        let pos = add("pos".into(), vec![cfg.tokens(), d]);
        let blocks = (0..cfg.depth)
            .map(|l| {
                let mut t = |n: &str, shape: Vec<usize>| add(format!("blocks.{l}.{n}"), shape);
                BlockLayout {
                    ln1_g: t("ln1.g", vec![d]),
                    ln1_b: t("ln1.b", vec![d]),
                    qkv_w: t("attn.qkv.w", vec![3 * d, d]),
                    qkv_b: t("attn.qkv.b", vec![3 * d]),
                    proj_w: t("attn.proj.w", vec![d, d]),
                    proj_b: t("attn.proj.b", vec![d]),
                    ln2_g: t("ln2.g", vec![d]),
                    ln2_b: t("ln2.b", vec![d]),
                    fc1_w: t("mlp.fc1.w", vec![h, d]),
                    fc1_b: t("mlp.fc1.b", vec![h]),
                    fc2_w: t("mlp.fc2.w", vec![d, h]),
                    fc2_b: t("mlp.fc2.b", vec![d]),
                }
            })
            .collect();
        let lnf_g = add("lnf.g".into(), vec![d]);
        let lnf_b = add("lnf.b".into(), vec![d]);
        let head_w = add("head.w".into(), vec![cfg.head_out, d]);
        let head_b = add("head.b".into(), vec![cfg.head_out]);
        let total = head_b.end;
        Layout { specs, patch_w, patch_b, cls, pos, blocks, lnf_g, lnf_b, head_w, head_b, total }
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }
}

/// Affine map between the workspace box (mm) and `[-1, 1]^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetNorm {
    pub center: Point3,
    pub half_extent: Point3,
}

impl TargetNorm {
    pub fn from_workspace(ws: &Workspace) -> Self {
        TargetNorm { center: ws.center(), half_extent: ws.half_extent() }
    }

    pub fn normalize(&self, p: &Point3) -> [f64; 3] {
        std::array::from_fn(|k| (p[k] - self.center[k]) / self.half_extent[k])
    }

    pub fn denormalize(&self, n: &[f64; 3]) -> Point3 {
        std::array::from_fn(|k| self.center[k] + n[k] * self.half_extent[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub normalized: [f64; 3],
    pub position_mm: Point3,
}

/// Model weights (or gradients, or optimizer moments: same layout).
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub target_norm: TargetNorm,
    pub data: Vec<T>,
    layout: Layout,
}

impl<T: PartialEq> PartialEq for ModelParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.target_norm == other.target_norm && self.data == other.data
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: ModelConfig, target_norm: TargetNorm) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(ModelParams { config, target_norm, data: vec![T::zero(); layout.total], layout })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config,
            target_norm: self.target_norm,
            data: vec![T::zero(); self.data.len()],
            layout: self.layout.clone(),
        }
    }

    /// Truncated normal (sigma 0.02, cut at 2 sigma) for projections, class
    /// token and positional embeddings; zero biases; unit layer-norm scales.
    pub fn init(config: ModelConfig, target_norm: TargetNorm, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config, target_norm)?;
        let mut rng = derived_rng(seed, &[stream::INIT]);
        for spec in p.layout.specs.clone() {
            let last = spec.name.rsplit('.').next().unwrap_or("");
            let fill: Option<f64> = match last {
                "b" => Some(0.0),
                "g" => Some(1.0),
                _ => None,
            };
            for v in &mut p.data[spec.range()] {
                *v = T::lit(match fill {
                    Some(c) => c,
                    None => trunc_normal(&mut rng) * INIT_STD,
                });
            }
        }
        Ok(p)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.spec(name).map(|s| &self.data[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let r = self.layout.spec(name)?.range();
        Some(&mut self.data[r])
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&TensorSpec, &[T])> {
        self.layout.specs.iter().map(move |s| (s, &self.data[s.range()]))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            target_norm: self.target_norm,
            data: self.data.iter().map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN))).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn trunc_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Per-sample standardization `(x - mean) / (std + 1e-6)` and cast to the
/// model's precision.
pub fn prepare_input<T: Scalar>(x: &SpectrogramTensor<f32>) -> SpectrogramTensor<T> {
    x.standardized().cast()
}

#[cfg(test)]
mod tests;
