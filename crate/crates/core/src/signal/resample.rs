//! Rational polyphase downsampling with a Kaiser-windowed sinc anti-alias filter.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Passband edge as a fraction of the output rate.
pub const PASSBAND_EDGE: f64 = 0.40;
/// Filter cutoff as a fraction of the output rate.
pub const CUTOFF: f64 = 0.45;
/// Design target for stopband attenuation, dB.
pub const STOPBAND_DB: f64 = 70.0;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

/// Designs a linear-phase lowpass FIR with `taps` (odd) coefficients.
///
/// `cutoff` and `transition` are normalized to the sampling rate (cycles/sample).
pub fn kaiser_lowpass(cutoff: f64, transition: f64, atten_db: f64) -> Vec<f64> {
    let dw = 2.0 * PI * transition;
    let mut taps = ((atten_db - 7.95) / (2.285 * dw)).ceil() as usize + 1;
    if taps % 2 == 0 {
        taps += 1;
    }
    let beta = kaiser_beta(atten_db);
    let mid = (taps - 1) as f64 / 2.0;
    let i0_beta = bessel_i0(beta);
    (0..taps)
        .map(|n| {
            let x = n as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * x).sin() / (PI * x)
            };
            let r = x / mid;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            sinc * w
        })
        .collect()
}

/// Downsampler from `from_rate` to `to_rate` by the reduced ratio `up / down`.
#[derive(Debug, Clone)]
pub struct Resampler<T> {
    from_rate: u32,
    to_rate: u32,
    up: usize,
    down: usize,
    /// Prototype filter at `from_rate * up`, scaled by `up`.
    taps: Vec<T>,
}

impl<T: Scalar> Resampler<T> {
    pub fn new(from_rate: u32, to_rate: u32) -> Result<Self> {
        if from_rate == 0 || to_rate == 0 {
            return Err(Error::UnsupportedRate {
                from: from_rate,
                to: to_rate,
                reason: "rates must be positive".into(),
            });
        }
        if to_rate > from_rate {
            return Err(Error::UnsupportedRate {
                from: from_rate,
                to: to_rate,
                reason: "upsampling is not supported".into(),
            });
        }
        let g = gcd(from_rate as u64, to_rate as u64);
        let up = (to_rate as u64 / g) as usize;
        let down = (from_rate as u64 / g) as usize;
        let taps = if up == down {
            vec![T::one()]
        } else {
            let hi_rate = from_rate as f64 * up as f64;
            let cutoff = CUTOFF * to_rate as f64 / hi_rate;
            let transition = 2.0 * (CUTOFF - PASSBAND_EDGE) * to_rate as f64 / hi_rate;
            let proto = kaiser_lowpass(cutoff, transition, STOPBAND_DB);
            let sum: f64 = proto.iter().sum();
            proto
                .iter()
                .map(|h| T::lit(h * up as f64 / sum))
                .collect()
        };
        Ok(Resampler {
            from_rate,
            to_rate,
            up,
            down,
            taps,
        })
    }

    pub fn ratio(&self) -> (usize, usize) {
        (self.up, self.down)
    }

    pub fn num_taps(&self) -> usize {
        self.taps.len()
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    /// Filters and decimates. Output is time aligned with the input (the
    /// filter's group delay is compensated); samples beyond the input edges
    /// are treated as zero.
    pub fn process(&self, input: &[T]) -> Vec<T> {
        if self.up == self.down {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        let delay = (self.taps.len() - 1) / 2;
        let up = self.up as isize;
        let len = input.len() as isize;
        let mut out = Vec::with_capacity(n_out);
        for n in 0..n_out {
            // position on the upsampled grid, shifted by the group delay
            let j0 = (n * self.down + delay) as isize;
            // smallest k >= 0 with (j0 - k) divisible by up
            let mut k = j0.rem_euclid(up);
            let mut acc = T::zero();
            while (k as usize) < self.taps.len() {
                let idx = (j0 - k) / up;
                if idx < 0 {
                    break;
                }
                if idx < len {
                    acc += self.taps[k as usize] * input[idx as usize];
                }
                k += up;
            }
            out.push(acc);
        }
        out
    }

    pub fn rates(&self) -> (u32, u32) {
        (self.from_rate, self.to_rate)
    }
}

/// Resamples one channel from `from_rate` to `to_rate` (downsampling only).
pub fn resample<T: Scalar>(signal: &[T], from_rate: u32, to_rate: u32) -> Result<Vec<T>> {
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("non-finite sample in resampler input".into()));
    }
    Ok(Resampler::new(from_rate, to_rate)?.process(signal))
}
