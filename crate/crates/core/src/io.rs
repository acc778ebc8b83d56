//! Recording container: 7-channel 32-bit float WAV files plus one JSONL
//! manifest line per file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::recording::{
    Contact, ContactLabel, Material, Recording, Region, Scenario, TrajectoryPoint, View, NUM_CHANNELS,
};

/// Writes interleaved IEEE float samples.
pub fn write_wav(path: &Path, channels: &[Vec<f32>], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    let len = channels.first().map_or(0, Vec::len);
    for i in 0..len {
        for ch in channels {
            w.write_sample(ch[i]).map_err(wav_err)?;
        }
    }
    w.finalize().map_err(wav_err)
}

/// Reads a float WAV back into per-channel buffers.
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f32>>, u32)> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut r = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = r.spec();
    if spec.sample_format != hound::SampleFormat::Float || spec.bits_per_sample != 32 {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!(
                "expected 32-bit float samples, found {:?} {}-bit",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    let n_ch = spec.channels as usize;
    let mut channels = vec![Vec::with_capacity(r.duration() as usize); n_ch];
    for (i, s) in r.samples::<f32>().enumerate() {
        channels[i % n_ch].push(s.map_err(wav_err)?);
    }
    Ok((channels, spec.sample_rate))
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// WAV path, relative to the manifest's directory unless absolute.
    pub path: String,
    pub sample_rate: u32,
    pub trigger_offset_ms: f64,
    pub kind: String,
    pub material: Material,
    pub view: View,
    pub region: Region,
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_mm: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_mm: Option<Vec<[f64; 4]>>,
    /// Drawing category for stroke data (used for category splits).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl ManifestEntry {
    pub fn from_label(id: &str, path: &str, rec: &Recording) -> Self {
        let l = &rec.label;
        let (kind, position_mm, trajectory_mm) = match &l.contact {
            Contact::Impulse { position } => ("impulse", Some(*position), None),
            Contact::Stroke { trajectory } => (
                "stroke",
                None,
                Some(
                    trajectory
                        .iter()
                        .map(|p| [p.t_ms, p.pos[0], p.pos[1], p.pos[2]])
                        .collect(),
                ),
            ),
        };
        ManifestEntry {
            id: id.to_string(),
            path: path.to_string(),
            sample_rate: rec.sample_rate,
            trigger_offset_ms: rec.trigger_offset_ms,
            kind: kind.to_string(),
            material: l.material,
            view: l.view,
            region: l.region,
            scenario: l.scenario,
            position_mm,
            trajectory_mm,
            category: None,
        }
    }

    pub fn label(&self) -> Result<ContactLabel> {
        let contact = match (self.kind.as_str(), &self.position_mm, &self.trajectory_mm) {
            ("impulse", Some(p), None) => Contact::Impulse { position: *p },
            ("stroke", None, Some(t)) => Contact::Stroke {
                trajectory: t
                    .iter()
                    .map(|r| TrajectoryPoint {
                        t_ms: r[0],
                        pos: [r[1], r[2], r[3]],
                    })
                    .collect(),
            },
            ("impulse", _, _) => {
                return Err(Error::Invalid(
                    "impulse entries need position_mm and no trajectory_mm".into(),
                ))
            }
            ("stroke", _, _) => {
                return Err(Error::Invalid(
                    "stroke entries need trajectory_mm and no position_mm".into(),
                ))
            }
            (k, _, _) => return Err(Error::Invalid(format!("unknown kind '{k}'"))),
        };
        let label = ContactLabel {
            contact,
            material: self.material,
            view: self.view,
            region: self.region,
            scenario: self.scenario,
        };
        label.validate()?;
        Ok(label)
    }

    pub fn wav_path(&self, manifest_dir: &Path) -> PathBuf {
        let p = Path::new(&self.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_dir.join(p)
        }
    }

    /// Reads the referenced WAV and checks it against the manifest fields.
    pub fn load(&self, manifest_dir: &Path) -> Result<Recording> {
        let path = self.wav_path(manifest_dir);
        let (channels, rate) = read_wav(&path)?;
        if rate != self.sample_rate {
            return Err(Error::Corrupt {
                path,
                msg: format!("wav rate {rate} Hz but manifest says {}", self.sample_rate),
            });
        }
        if channels.len() != NUM_CHANNELS {
            return Err(Error::Corrupt {
                path,
                msg: format!("expected {NUM_CHANNELS} channels, found {}", channels.len()),
            });
        }
        Recording::new(channels, rate, self.trigger_offset_ms, self.label()?)
    }
}

/// Parses a JSONL manifest; errors carry 1-based line numbers.
pub fn parse_manifest(text: &str, origin: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        entry.label().map_err(|e| err(e.to_string()))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(f).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_manifest(&text, &path.display().to_string())
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for e in entries {
        let line = serde_json::to_string(e).expect("manifest entries serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `rec` to `<dir>/<rel_path>` and returns its manifest entry.
pub fn save_recording(dir: &Path, id: &str, rel_path: &str, rec: &Recording) -> Result<ManifestEntry> {
    let path = dir.join(rel_path);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_wav(&path, &rec.channels, rec.sample_rate)?;
    Ok(ManifestEntry::from_label(id, rel_path, rec))
}
