//! Background noise sources and seeded random streams.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::sim::scene::{distance, FanNoise, MotorNoise, SceneModel};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream for `(seed, tags...)`.
pub fn derived_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let stream = tags
        .iter()
        .fold(0x5EED_u64, |h, &t| splitmix64(h ^ splitmix64(t)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream identifiers, so that e.g. the noise of a recording does not
/// depend on how many random numbers the contact model consumed.
pub mod stream {
    pub const CONTACT: u64 = 1;
    pub const EVENT: u64 = 2;
    pub const WHITE: u64 = 3;
    pub const FAN: u64 = 4;
    pub const MOTOR: u64 = 5;
    pub const EXCITATION: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const INIT: u64 = 8;
    pub const DRAWING: u64 = 9;
    pub const SPLIT: u64 = 10;
    pub const AUGMENT: u64 = 11;
}

/// Adds `N(0, level^2)` white noise to every channel.
pub fn add_white(channels: &mut [Vec<f64>], level: f64, rng: &mut ChaCha8Rng) {
    if level <= 0.0 {
        return;
    }
    for ch in channels.iter_mut() {
        for s in ch.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *s += level * z;
        }
    }
}

/// Adds the fan's harmonic stack (random phase per channel and harmonic)
/// plus one-pole low-passed rumble.
pub fn add_fan(channels: &mut [Vec<f64>], fan: &FanNoise, rate: f64, rng: &mut ChaCha8Rng) {
    let nyquist = rate / 2.0;
    let a = (-2.0 * PI * fan.rumble_cutoff_hz / rate).exp();
    // stationary output variance of y = a y + (1 - a) x for unit-variance x
    let gain = ((1.0 - a) / (1.0 + a)).sqrt();
    for ch in channels.iter_mut() {
        if fan.amplitude > 0.0 {
            for h in 1..=fan.harmonics {
                let f = fan.fundamental_hz * h as f64;
                if f >= nyquist {
                    break;
                }
                let phase: f64 = rng.gen_range(0.0..2.0 * PI);
                let step = Complex64::from_polar(1.0, 2.0 * PI * f / rate);
                let mut z = Complex64::from_polar(fan.amplitude, phase);
                for s in ch.iter_mut() {
                    *s += z.im;
                    z *= step;
                }
            }
        }
        if fan.rumble_rms > 0.0 {
            let mut y = 0.0;
            // start from the stationary distribution
            let z0: f64 = StandardNormal.sample(rng);
            y += z0 * gain;
            for s in ch.iter_mut() {
                let x: f64 = StandardNormal.sample(rng);
                y = a * y + (1.0 - a) * x;
                *s += fan.rumble_rms * y / gain;
            }
        }
    }
}

/// Adds linear-chirp bursts at Poisson arrival times. Each burst starts at a
/// random point, sweeps the motor band and has a Hann envelope.
pub fn add_motor(
    channels: &mut [Vec<f64>],
    motor: &MotorNoise,
    scene: &SceneModel,
    rate: f64,
    rng: &mut ChaCha8Rng,
) {
    if motor.amplitude <= 0.0 || motor.burst_rate_hz <= 0.0 {
        return;
    }
    let len = channels.first().map_or(0, Vec::len);
    let duration = len as f64 / rate;
    let gaps = Exp::new(motor.burst_rate_hz).expect("positive rate");
    let d0 = scene.attenuation_offset_mm;
    let levels: Vec<f64> = scene
        .mic_positions
        .iter()
        .map(|m| motor.amplitude * d0 / (distance(m, &motor.position) + d0))
        .collect();
    let burst_len = (motor.burst_ms * rate / 1000.0).round() as usize;
    // first burst may already be under way at t = 0
    let mut t = -motor.burst_ms / 1000.0 + gaps.sample(rng);
    while t < duration {
        let (f0, f1) = if rng.gen_bool(0.5) {
            (motor.band_hz[0], motor.band_hz[1])
        } else {
            (motor.band_hz[1], motor.band_hz[0])
        };
        let phase0: f64 = rng.gen_range(0.0..2.0 * PI);
        let start = (t * rate).round() as isize;
        let sweep = (f1 - f0) / (burst_len as f64 / rate);
        for k in 0..burst_len {
            let idx = start + k as isize;
            if idx < 0 || idx as usize >= len {
                continue;
            }
            let tau = k as f64 / rate;
            let env = 0.5 - 0.5 * (2.0 * PI * k as f64 / burst_len as f64).cos();
            let v = env * (phase0 + 2.0 * PI * (f0 * tau + 0.5 * sweep * tau * tau)).sin();
            for (ch, lvl) in channels.iter_mut().zip(&levels) {
                ch[idx as usize] += lvl * v;
            }
        }
        t += gaps.sample(rng);
    }
}
