//! Layered run settings: built-in defaults, then a config file, then
//! `--set key=value` overrides, then dedicated flags.

use sha2::{Digest, Sha256};
use vibroloc::config::FlatConfig;
use vibroloc::model::ModelConfig;
use vibroloc::signal::features::PipelineConfig;
use vibroloc::train::TrainConfig;
use vibroloc::data::DEFAULT_CHUNK_MS;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    /// Only the `model.*` keys; applied once the input shape is known.
    pub model: FlatConfig,
    pub train: TrainConfig,
    pub chunk_ms: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            pipeline: PipelineConfig::default(),
            model: FlatConfig::default(),
            train: TrainConfig::default(),
            chunk_ms: DEFAULT_CHUNK_MS,
        }
    }
}

fn known_key(key: &str) -> bool {
    if key == "chunk_ms" || PipelineConfig::KEYS.contains(&key) {
        return true;
    }
    match key.split_once('.') {
        Some(("model", k)) => ModelConfig::KEYS.contains(&k),
        // the seed comes from --seed / --seeds
        Some(("train", k)) => k != "seed" && TrainConfig::KEYS.contains(&k),
        _ => false,
    }
}

/// Parses `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), UsageError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(UsageError(format!("override '{s}' is not key=value"))),
    }
}

impl Settings {
    /// `file` is overlaid by `overrides`; unknown keys and bad values are
    /// usage errors.
    pub fn build(file: Option<&FlatConfig>, overrides: &[(String, String)]) -> Result<Self, UsageError> {
        let mut cfg = file.cloned().unwrap_or_default();
        for (k, v) in overrides {
            cfg.set(k, v.clone());
        }
        if let Some(bad) = cfg.keys().find(|k| !known_key(k)) {
            return Err(UsageError(format!("unknown config key '{bad}'")));
        }
        let mut s = Settings::default();
        let usage = |e: vibroloc::Error| UsageError(e.to_string());
        s.pipeline.apply(&cfg).map_err(usage)?;
        s.train.apply(&cfg).map_err(usage)?;
        if let Some(v) = cfg.get_parsed::<f64>("chunk_ms").map_err(usage)? {
            if !(v > 0.0) {
                return Err(UsageError(format!("chunk_ms must be positive, got {v}")));
            }
            s.chunk_ms = v;
        }
        for k in ModelConfig::KEYS {
            let key = format!("model.{k}");
            if let Some(v) = cfg.get(&key) {
                s.model.set(&key, v);
            }
        }
        // catches bad model values before any data is touched
        s.model_config(61, 65).map_err(|e| UsageError(e.to_string()))?;
        Ok(s)
    }

    /// Desk model for `input_t x input_f` tensors with the `model.*` overrides.
    pub fn model_config(&self, input_t: usize, input_f: usize) -> vibroloc::Result<ModelConfig> {
        let mut m = ModelConfig::desk(input_t, input_f);
        m.apply(&self.model)?;
        Ok(m)
    }

    /// Every setting spelled out, defaults included.
    pub fn effective(&self) -> FlatConfig {
        let mut c = self.pipeline.to_config();
        c.set("chunk_ms", format!("{:?}", self.chunk_ms));
        let m = ModelConfig::desk(61, 65);
        let mut model = FlatConfig::default();
        for (k, v) in [
            ("embed_dim", m.embed_dim),
            ("depth", m.depth),
            ("heads", m.heads),
            ("kernel", m.kernel),
            ("stride", m.stride),
            ("mlp_ratio", m.mlp_ratio),
        ] {
            model.set(&format!("model.{k}"), v.to_string());
        }
        model.merge(&self.model);
        c.merge(&model);
        let t = &self.train;
        c.set("train.batch_size", t.batch_size.to_string());
        c.set("train.total_steps", t.total_steps.to_string());
        c.set("train.freq_shift", t.freq_shift.to_string());
        for (k, v) in [
            ("peak_lr", t.peak_lr),
            ("warmup_frac", t.warmup_frac),
            ("beta1", t.beta1),
            ("beta2", t.beta2),
            ("eps", t.eps),
        ] {
            c.set(&format!("train.{k}"), format!("{v:?}"));
        }
        c
    }

    /// First 16 hex digits of the SHA-256 of the effective config text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.effective().to_text().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}
