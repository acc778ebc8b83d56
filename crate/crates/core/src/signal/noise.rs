//! Stationary background-noise estimation and magnitude spectral subtraction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::features::SpectrogramTensor;
use crate::signal::recording::Recording;
use crate::signal::stft::{Stft, StftParams};

/// Mean STFT magnitude per channel and bin, `channels x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProfile<T> {
    pub channels: usize,
    pub bins: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> NoiseProfile<T> {
    pub fn zeros(channels: usize, bins: usize) -> Self {
        NoiseProfile {
            channels,
            bins,
            data: vec![T::zero(); channels * bins],
        }
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.bins..(c + 1) * self.bins]
    }
}

/// Averages the STFT magnitude of the first `noise_ms` of every channel.
///
/// The segment must lie before the contact (`noise_ms <= trigger_offset_ms`).
pub fn estimate_noise<T: Scalar>(
    rec: &Recording,
    noise_ms: f64,
    params: StftParams,
) -> Result<NoiseProfile<T>> {
    if !(noise_ms > 0.0) {
        return Err(Error::Range(format!("noise_ms must be positive, got {noise_ms}")));
    }
    if noise_ms > rec.trigger_offset_ms + 1e-9 || noise_ms > rec.duration_ms() + 1e-9 {
        return Err(Error::Range(format!(
            "noise segment of {noise_ms} ms exceeds the {} ms of pre-trigger signal",
            rec.trigger_offset_ms.min(rec.duration_ms())
        )));
    }
    let n = rec.index_at(noise_ms);
    let stft = Stft::<T>::new(params)?;
    let bins = params.num_bins();
    let mut profile = NoiseProfile::zeros(rec.channels.len(), bins);
    for (c, ch) in rec.channels.iter().enumerate() {
        let seg: Vec<T> = ch[..n].iter().map(|&s| T::lit(s as f64)).collect();
        let (frames, mag) = stft.magnitude(&seg).map_err(|e| match e {
            Error::TooShort { needed, got } => Error::Range(format!(
                "noise segment has {got} samples, STFT needs {needed}"
            )),
            other => other,
        })?;
        let inv = T::one() / T::from_usize(frames).unwrap();
        let dst = &mut profile.data[c * bins..(c + 1) * bins];
        for frame in mag.chunks_exact(bins) {
            for (d, &m) in dst.iter_mut().zip(frame) {
                *d += m;
            }
        }
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    Ok(profile)
}

/// `max(spec - profile, 0)` broadcast over time frames.
pub fn subtract_noise<T: Scalar>(
    spec: &SpectrogramTensor<T>,
    profile: &NoiseProfile<T>,
) -> Result<SpectrogramTensor<T>> {
    if spec.channels != profile.channels || spec.bins != profile.bins {
        return Err(Error::Shape(format!(
            "spectrogram is {}x_x{} but noise profile is {}x{}",
            spec.channels, spec.bins, profile.channels, profile.bins
        )));
    }
    let mut out = spec.clone();
    let plane = spec.frames * spec.bins;
    for c in 0..spec.channels {
        let prof = profile.channel(c);
        for frame in out.data[c * plane..(c + 1) * plane].chunks_exact_mut(spec.bins) {
            for (v, &p) in frame.iter_mut().zip(prof) {
                *v = (*v - p).max(T::zero());
            }
        }
    }
    Ok(out)
}
