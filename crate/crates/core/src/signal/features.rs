//! Feature tensor assembly: resample, trim, STFT, noise subtraction.

use serde::{Deserialize, Serialize};

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::noise::{estimate_noise, subtract_noise, NoiseProfile};
use crate::signal::recording::{Contact, Recording, TrajectoryPoint};
use crate::signal::resample::Resampler;
use crate::signal::stft::{Stft, StftParams, WindowKind};

/// Nonnegative `channels x frames x bins` magnitudes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramTensor<T> {
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<T>,
    /// Frames per second.
    pub frame_rate: f64,
    /// Hz per bin.
    pub bin_width: f64,
}

impl<T: Scalar> SpectrogramTensor<T> {
    pub fn new(
        channels: usize,
        frames: usize,
        bins: usize,
        data: Vec<T>,
        frame_rate: f64,
        bin_width: f64,
    ) -> Result<Self> {
        if data.len() != channels * frames * bins {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{frames}x{bins} tensor",
                data.len()
            )));
        }
        Ok(SpectrogramTensor {
            channels,
            frames,
            bins,
            data,
            frame_rate,
            bin_width,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.frames, self.bins)
    }

    pub fn at(&self, c: usize, t: usize, f: usize) -> T {
        self.data[(c * self.frames + t) * self.bins + f]
    }

    /// Per-sample standardization: `(x - mean) / (std + 1e-6)` over the whole tensor.
    pub fn standardized(&self) -> Self {
        let n = T::from_usize(self.data.len().max(1)).unwrap();
        let mean = self.data.iter().copied().sum::<T>() / n;
        let var = self
            .data
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<T>()
            / n;
        let scale = T::one() / (var.sqrt() + T::lit(1e-6));
        SpectrogramTensor {
            data: self.data.iter().map(|&v| (v - mean) * scale).collect(),
            ..self.clone()
        }
    }

    /// Circular shift along the bin axis: bin `f` moves to `f + shift`.
    pub fn roll_bins(&self, shift: isize) -> Self {
        let f = self.bins;
        let k = shift.rem_euclid(f.max(1) as isize) as usize;
        let mut data = self.data.clone();
        if k != 0 {
            for row in data.chunks_exact_mut(f) {
                row.rotate_right(k);
            }
        }
        SpectrogramTensor { data, ..self.clone() }
    }

    pub fn cast<U: Scalar>(&self) -> SpectrogramTensor<U> {
        SpectrogramTensor {
            channels: self.channels,
            frames: self.frames,
            bins: self.bins,
            data: self.data.iter().map(|v| U::from(*v).unwrap()).collect(),
            frame_rate: self.frame_rate,
            bin_width: self.bin_width,
        }
    }
}

/// Preprocessing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub target_rate_hz: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub trim_start_ms: f64,
    pub trim_end_ms: f64,
    pub noise_ms: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            target_rate_hz: 20_000,
            n_fft: 128,
            hop: 64,
            window: WindowKind::Hann,
            trim_start_ms: 125.0,
            trim_end_ms: 325.0,
            noise_ms: 100.0,
        }
    }
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 7] = [
        "target_rate_hz",
        "n_fft",
        "hop",
        "window",
        "trim_start_ms",
        "trim_end_ms",
        "noise_ms",
    ];

    pub fn stft_params(&self) -> StftParams {
        StftParams {
            n_fft: self.n_fft,
            hop: self.hop,
            window: self.window,
        }
    }

    /// Applies whichever pipeline keys are present in `cfg`.
    pub fn apply(&mut self, cfg: &FlatConfig) -> Result<()> {
        if let Some(v) = cfg.get_parsed("target_rate_hz")? {
            self.target_rate_hz = v;
        }
        if let Some(v) = cfg.get_parsed("n_fft")? {
            self.n_fft = v;
        }
        if let Some(v) = cfg.get_parsed("hop")? {
            self.hop = v;
        }
        if let Some(v) = cfg.get("window") {
            self.window = v.parse()?;
        }
        if let Some(v) = cfg.get_parsed("trim_start_ms")? {
            self.trim_start_ms = v;
        }
        if let Some(v) = cfg.get_parsed("trim_end_ms")? {
            self.trim_end_ms = v;
        }
        if let Some(v) = cfg.get_parsed("noise_ms")? {
            self.noise_ms = v;
        }
        self.validate()
    }

    pub fn to_config(&self) -> FlatConfig {
        let mut c = FlatConfig::default();
        c.set("target_rate_hz", self.target_rate_hz.to_string());
        c.set("n_fft", self.n_fft.to_string());
        c.set("hop", self.hop.to_string());
        c.set("window", self.window.to_string());
        c.set("trim_start_ms", format!("{:?}", self.trim_start_ms));
        c.set("trim_end_ms", format!("{:?}", self.trim_end_ms));
        c.set("noise_ms", format!("{:?}", self.noise_ms));
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.stft_params().validate()?;
        if self.target_rate_hz == 0 {
            return Err(Error::Invalid("target_rate_hz must be positive".into()));
        }
        if !(self.trim_start_ms >= 0.0 && self.trim_end_ms > self.trim_start_ms) {
            return Err(Error::Invalid(format!(
                "trim window ({}, {}) is empty",
                self.trim_start_ms, self.trim_end_ms
            )));
        }
        if self.noise_ms > self.trim_start_ms {
            return Err(Error::Invalid(format!(
                "noise segment ({} ms) overlaps the analysis window starting at {} ms",
                self.noise_ms, self.trim_start_ms
            )));
        }
        Ok(())
    }

    /// `(frames, bins)` of the tensor produced for a window of `window_ms`.
    pub fn output_shape(&self, window_ms: f64) -> (usize, usize) {
        let len = (window_ms * self.target_rate_hz as f64 / 1000.0).round() as usize;
        let p = self.stft_params();
        (p.num_frames(len), p.num_bins())
    }
}

/// Resamples every channel of a recording.
pub fn resample_recording(rec: &Recording, to_rate: u32) -> Result<Recording> {
    if rec.sample_rate == to_rate {
        return Ok(rec.clone());
    }
    let rs = Resampler::<f64>::new(rec.sample_rate, to_rate)?;
    let channels = rec
        .channels
        .iter()
        .map(|ch| {
            let x: Vec<f64> = ch.iter().map(|&s| s as f64).collect();
            rs.process(&x)
                .into_iter()
                .map(|v| v.clamp(-1.0, 1.0) as f32)
                .collect()
        })
        .collect();
    Ok(Recording {
        channels,
        sample_rate: to_rate,
        trigger_offset_ms: rec.trigger_offset_ms,
        label: rec.label.clone(),
    })
}

fn shift_trajectory(traj: &[TrajectoryPoint], dt: f64) -> Vec<TrajectoryPoint> {
    traj.iter()
        .map(|p| TrajectoryPoint {
            t_ms: p.t_ms + dt,
            pos: p.pos,
        })
        .collect()
}

/// Slices all channels to `[start_ms, end_ms)`. Times in the label are
/// shifted so they stay relative to the new start.
pub fn trim_window(rec: &Recording, start_ms: f64, end_ms: f64) -> Result<Recording> {
    let dur = rec.duration_ms();
    if !(start_ms >= 0.0 && start_ms < end_ms && end_ms <= dur + 1e-9) {
        return Err(Error::Range(format!(
            "window ({start_ms}, {end_ms}) ms outside recording of {dur} ms"
        )));
    }
    let a = rec.index_at(start_ms);
    let b = rec.index_at(end_ms).min(rec.len());
    let mut label = rec.label.clone();
    if let Contact::Stroke { trajectory } = &mut label.contact {
        *trajectory = shift_trajectory(trajectory, -start_ms);
    }
    Ok(Recording {
        channels: rec.channels.iter().map(|c| c[a..b].to_vec()).collect(),
        sample_rate: rec.sample_rate,
        trigger_offset_ms: rec.trigger_offset_ms - start_ms,
        label,
    })
}

/// Per-channel STFT magnitudes stacked into a tensor, without noise removal.
pub fn spectrogram<T: Scalar>(rec: &Recording, params: StftParams) -> Result<SpectrogramTensor<T>> {
    let stft = Stft::<T>::new(params)?;
    let bins = params.num_bins();
    let frames = params.num_frames(rec.len());
    if frames == 0 {
        return Err(Error::TooShort {
            needed: params.n_fft,
            got: rec.len(),
        });
    }
    let mut data = Vec::with_capacity(rec.channels.len() * frames * bins);
    for ch in &rec.channels {
        let x: Vec<T> = ch.iter().map(|&s| T::lit(s as f64)).collect();
        let (_, mag) = stft.magnitude(&x)?;
        data.extend(mag);
    }
    SpectrogramTensor::new(
        rec.channels.len(),
        frames,
        bins,
        data,
        rec.sample_rate as f64 / params.hop as f64,
        rec.sample_rate as f64 / params.n_fft as f64,
    )
}

/// Full impulse pipeline: resample, noise estimate on the leading segment,
/// trim, STFT magnitude, spectral subtraction.
pub fn build_features<T: Scalar>(rec: &Recording, cfg: &PipelineConfig) -> Result<SpectrogramTensor<T>> {
    cfg.validate()?;
    let rec = resample_recording(rec, cfg.target_rate_hz)?;
    let noise = estimate_noise::<T>(&rec, cfg.noise_ms, cfg.stft_params())?;
    let window = trim_window(&rec, cfg.trim_start_ms, cfg.trim_end_ms)?;
    let spec = spectrogram::<T>(&window, cfg.stft_params())?;
    subtract_noise(&spec, &noise)
}

/// A fixed-length slice of a stroke recording with its regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct StrokeChunk {
    pub recording: Recording,
    pub start_ms: f64,
    pub end_ms: f64,
    /// Time-averaged contact position over the chunk, mm.
    pub target: [f64; 3],
}

/// Position on the piecewise-linear trajectory at `t`, held constant outside it.
pub fn trajectory_position(traj: &[TrajectoryPoint], t: f64) -> [f64; 3] {
    let first = traj[0];
    let last = traj[traj.len() - 1];
    if t <= first.t_ms {
        return first.pos;
    }
    if t >= last.t_ms {
        return last.pos;
    }
    let i = traj.partition_point(|p| p.t_ms <= t) - 1;
    let (p0, p1) = (traj[i], traj[i + 1]);
    let u = (t - p0.t_ms) / (p1.t_ms - p0.t_ms);
    std::array::from_fn(|k| p0.pos[k] + u * (p1.pos[k] - p0.pos[k]))
}

/// Exact time average of the trajectory over `[a, b]`.
pub fn trajectory_mean(traj: &[TrajectoryPoint], a: f64, b: f64) -> [f64; 3] {
    debug_assert!(b > a);
    // breakpoints inside (a, b), then integrate each linear piece by its midpoint
    let mut knots = vec![a];
    knots.extend(traj.iter().map(|p| p.t_ms).filter(|&t| t > a && t < b));
    knots.push(b);
    let mut acc = [0.0; 3];
    for w in knots.windows(2) {
        let mid = trajectory_position(traj, 0.5 * (w[0] + w[1]));
        for k in 0..3 {
            acc[k] += (w[1] - w[0]) * mid[k];
        }
    }
    acc.map(|v| v / (b - a))
}

/// Splits a stroke recording into consecutive non-overlapping chunks
/// starting at the first trajectory timestamp; a trailing partial chunk is
/// dropped.
pub fn chunk_stroke(rec: &Recording, chunk_ms: f64) -> Result<Vec<StrokeChunk>> {
    let Contact::Stroke { trajectory } = &rec.label.contact else {
        return Err(Error::Invalid("chunk_stroke needs a stroke label".into()));
    };
    if !(chunk_ms > 0.0) {
        return Err(Error::Invalid("chunk_ms must be positive".into()));
    }
    let t0 = trajectory[0].t_ms.max(0.0);
    let t_end = trajectory[trajectory.len() - 1].t_ms.min(rec.duration_ms());
    if t_end <= t0 {
        return Ok(Vec::new());
    }
    let count = ((t_end - t0) / chunk_ms + 1e-9).floor() as usize;
    let chunk_len = rec.index_at(chunk_ms);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start_ms = t0 + i as f64 * chunk_ms;
        let end_ms = start_ms + chunk_ms;
        let a = rec.index_at(start_ms);
        let b = a + chunk_len;
        if b > rec.len() {
            break;
        }
        let mut label = rec.label.clone();
        let mut sub = vec![TrajectoryPoint {
            t_ms: start_ms,
            pos: trajectory_position(trajectory, start_ms),
        }];
        sub.extend(
            trajectory
                .iter()
                .filter(|p| p.t_ms > start_ms && p.t_ms < end_ms)
                .copied(),
        );
        sub.push(TrajectoryPoint {
            t_ms: end_ms,
            pos: trajectory_position(trajectory, end_ms),
        });
        label.contact = Contact::Stroke {
            trajectory: shift_trajectory(&sub, -start_ms),
        };
        out.push(StrokeChunk {
            recording: Recording {
                channels: rec.channels.iter().map(|c| c[a..b].to_vec()).collect(),
                sample_rate: rec.sample_rate,
                trigger_offset_ms: rec.trigger_offset_ms - start_ms,
                label,
            },
            start_ms,
            end_ms,
            target: trajectory_mean(trajectory, start_ms, end_ms),
        });
    }
    Ok(out)
}

/// Stroke pipeline: resample, noise profile from the leading segment, then
/// one noise-subtracted tensor per chunk.
pub fn build_stroke_features<T: Scalar>(
    rec: &Recording,
    cfg: &PipelineConfig,
    chunk_ms: f64,
) -> Result<Vec<(SpectrogramTensor<T>, StrokeChunk)>> {
    cfg.stft_params().validate()?;
    let rec = resample_recording(rec, cfg.target_rate_hz)?;
    let noise: NoiseProfile<T> = estimate_noise(&rec, cfg.noise_ms, cfg.stft_params())?;
    chunk_stroke(&rec, chunk_ms)?
        .into_iter()
        .map(|chunk| {
            let spec = spectrogram::<T>(&chunk.recording, cfg.stft_params())?;
            Ok((subtract_noise(&spec, &noise)?, chunk))
        })
        .collect()
}
