use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients<T: Scalar>(self, n: usize) -> Vec<T> {
        match self {
            WindowKind::Rectangular => vec![T::one(); n],
            WindowKind::Hann => (0..n)
                .map(|i| T::lit(0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()))
                .collect(),
        }
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowKind::Hann => "hann",
            WindowKind::Rectangular => "rectangular",
        })
    }
}

impl FromStr for WindowKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(WindowKind::Hann),
            "rectangular" | "rect" => Ok(WindowKind::Rectangular),
            _ => Err(Error::Invalid(format!("unknown window '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub n_fft: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams {
            n_fft: 128,
            hop: 64,
            window: WindowKind::Hann,
        }
    }
}

impl StftParams {
    pub fn num_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for a signal of `len` samples (no padding).
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            1 + (len - self.n_fft) / self.hop
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.n_fft % 2 != 0 {
            return Err(Error::Invalid(format!(
                "n_fft must be even and >= 2, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 {
            return Err(Error::Invalid("hop must be >= 1".into()));
        }
        Ok(())
    }
}

/// Complex short-time spectrum, `frames x bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn at(&self, frame: usize, bin: usize) -> Complex<T> {
        self.data[frame * self.bins + bin]
    }

    pub fn magnitude(&self) -> Vec<T> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Reusable STFT plan: FFT plan plus window coefficients.
#[derive(Clone)]
pub struct Stft<T: Scalar> {
    params: StftParams,
    window: Vec<T>,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Scalar> fmt::Debug for Stft<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft").field("params", &self.params).finish()
    }
}

impl<T: Scalar> Stft<T> {
    pub fn new(params: StftParams) -> Result<Self> {
        params.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(params.n_fft);
        Ok(Stft {
            params,
            window: params.window.coefficients(params.n_fft),
            fft,
        })
    }

    pub fn params(&self) -> &StftParams {
        &self.params
    }

    /// Frame `t`, bin `k` is the DFT of the windowed segment starting at
    /// `t * hop`; bins `0..=n_fft/2` are kept.
    pub fn process(&self, signal: &[T]) -> Result<Spectrum<T>> {
        let n = self.params.n_fft;
        if signal.len() < n {
            return Err(Error::TooShort {
                needed: n,
                got: signal.len(),
            });
        }
        let frames = self.params.num_frames(signal.len());
        let bins = self.params.num_bins();
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.fft.get_inplace_scratch_len()];
        let mut data = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            let seg = &signal[t * self.params.hop..t * self.params.hop + n];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new(s * w, T::zero());
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            data.extend_from_slice(&buf[..bins]);
        }
        Ok(Spectrum { frames, bins, data })
    }

    /// Magnitude spectrogram, `frames x bins`.
    pub fn magnitude(&self, signal: &[T]) -> Result<(usize, Vec<T>)> {
        let spec = self.process(signal)?;
        Ok((spec.frames, spec.magnitude()))
    }
}

/// One-shot STFT of a single channel.
pub fn stft<T: Scalar>(channel: &[T], params: StftParams) -> Result<Spectrum<T>> {
    Stft::new(params)?.process(channel)
}
