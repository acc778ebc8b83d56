//! Impulse (tap) responses: damped modal ringing arriving at each mic after
//! the propagation delay, attenuated with distance.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::signal::recording::{
    Contact, ContactLabel, Material, Recording, Scenario, View, NUM_CHANNELS, RAW_RATE_HZ,
};
use crate::sim::noise::{add_fan, add_white, derived_rng, stream};
use crate::sim::scene::{Point3, SceneModel};

pub const IMPULSE_DURATION_MS: f64 = 500.0;
/// Contact time relative to recording start.
pub const IMPULSE_TRIGGER_MS: f64 = 200.0;

/// Arrival time (s) of a contact at `p` on each mic.
pub fn arrival_times(scene: &SceneModel, p: &Point3) -> [f64; NUM_CHANNELS] {
    scene
        .mic_distances(p)
        .map(|d| IMPULSE_TRIGGER_MS / 1000.0 + d / scene.wave_speed_mm_s)
}

/// Lateral face closest to `p`.
pub fn nearest_view(scene: &SceneModel, p: &Point3) -> View {
    let ws = &scene.workspace;
    let candidates = [
        (ws.max[1] - p[1], View::Back),
        (p[1] - ws.min[1], View::Front),
        (ws.max[0] - p[0], View::Right),
        (p[0] - ws.min[0], View::Left),
    ];
    candidates
        .into_iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .unwrap()
        .1
}

/// Noise-free modal response of every channel, 50 kHz, 500 ms.
pub fn impulse_response(
    scene: &SceneModel,
    contact: &Point3,
    material: Material,
    mode_freqs: &[f64],
    phases: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let profile = scene.material(material)?;
    let rate = RAW_RATE_HZ as f64;
    let len = (IMPULSE_DURATION_MS * rate / 1000.0).round() as usize;
    let dists = scene.mic_distances(contact);
    let arrivals = arrival_times(scene, contact);
    let mut channels = vec![vec![0.0; len]; NUM_CHANNELS];
    for (i, ch) in channels.iter_mut().enumerate() {
        let amp = scene.source_gain * profile.impact_gain / (dists[i] + scene.attenuation_offset_mm);
        let tau = arrivals[i];
        let first = (tau * rate).ceil() as usize;
        for ((&f, &lambda), &phi) in mode_freqs.iter().zip(&profile.damping).zip(phases) {
            let s = Complex64::new(-lambda, 2.0 * PI * f);
            let step = (s / rate).exp();
            // exact value at the first sample on or after the arrival
            let mut z = amp * (s * (first as f64 / rate - tau)).exp() * Complex64::from_polar(1.0, phi);
            for v in ch.iter_mut().skip(first) {
                *v += z.im;
                z *= step;
                if z.norm_sqr() < 1e-24 {
                    break;
                }
            }
        }
    }
    Ok(channels)
}

/// Simulates one tap at `contact` (mm) with the given indenter material.
///
/// Mode frequencies are jittered per event, phases are random; fan noise and
/// white noise of standard deviation `noise_level` run throughout.
pub fn simulate_impulse(
    scene: &SceneModel,
    contact: Point3,
    material: Material,
    noise_level: f64,
    seed: u64,
) -> Result<Recording> {
    if !scene.workspace.contains(&contact) {
        return Err(Error::Range(format!(
            "contact {contact:?} lies outside the workspace"
        )));
    }
    let profile = scene.material(material)?;
    let mut rng = derived_rng(seed, &[stream::EVENT]);
    let freqs: Vec<f64> = profile
        .mode_freqs_hz
        .iter()
        .map(|&f| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (f * (1.0 + profile.heterogeneity_jitter * z)).clamp(1.0, 10_000.0)
        })
        .collect();
    let phases: Vec<f64> = freqs.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();

    let mut channels = impulse_response(scene, &contact, material, &freqs, &phases)?;
    let rate = RAW_RATE_HZ as f64;
    add_fan(&mut channels, &scene.fan, rate, &mut derived_rng(seed, &[stream::FAN]));
    add_white(&mut channels, noise_level, &mut derived_rng(seed, &[stream::WHITE]));

    let label = ContactLabel {
        contact: Contact::Impulse { position: contact },
        material,
        view: nearest_view(scene, &contact),
        region: scene.region_of(&contact),
        scenario: Scenario::Fixed,
    };
    Recording::new(
        channels
            .into_iter()
            .map(|c| c.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect())
            .collect(),
        RAW_RATE_HZ,
        IMPULSE_TRIGGER_MS,
        label,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{distance, FanNoise};

    fn quiet_scene() -> SceneModel {
        let mut s = SceneModel::default();
        s.fan = FanNoise {
            amplitude: 0.0,
            rumble_rms: 0.0,
            ..s.fan
        };
        s
    }

    fn first_arrival(ch: &[f32]) -> usize {
        ch.iter().position(|v| v.abs() > 1e-7).unwrap()
    }

    fn peak(ch: &[f32]) -> f32 {
        ch.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    #[test]
    fn contact_at_mic_arrives_first() {
        let scene = SceneModel::default();
        let p = scene.mic_positions[3];
        let t = arrival_times(&scene, &p);
        assert_eq!(t[3], 0.2);
        for j in (0..7).filter(|&j| j != 3) {
            assert!(t[j] > t[3]);
        }
    }

    #[test]
    fn equidistant_mics_get_identical_channels() {
        let mut scene = quiet_scene();
        // mics 1 and 2 mirrored about the plane x = y
        scene.mic_positions[1] = [100.0, 40.0, 70.0];
        scene.mic_positions[2] = [40.0, 100.0, 70.0];
        let p = [100.0, 100.0, 150.0];
        let d = scene.mic_distances(&p);
        assert!((d[1] - d[2]).abs() < 1e-12);
        let t = arrival_times(&scene, &p);
        assert_eq!(t[1], t[2]);
        let rec = simulate_impulse(&scene, p, Material::Metal, 0.0, 3).unwrap();
        assert!((peak(&rec.channels[1]) - peak(&rec.channels[2])).abs() < 1e-6);
    }

    #[test]
    fn delay_arithmetic_100_vs_300_mm() {
        let mut scene = quiet_scene();
        let p = [-100.0, -100.0, 0.0];
        scene.mic_positions[0] = [-100.0, 0.0, 0.0];
        scene.mic_positions[1] = [100.0, 100.0, 100.0];
        assert_eq!(distance(&scene.mic_positions[0], &p), 100.0);
        assert_eq!(distance(&scene.mic_positions[1], &p), 300.0);
        let t = arrival_times(&scene, &p);
        let dt = t[1] - t[0];
        assert!((dt - 0.0002).abs() < 1e-12);
        assert!((dt * 50_000.0 - 10.0).abs() < 1e-6);
        let rec = simulate_impulse(&scene, p, Material::Metal, 0.0, 1).unwrap();
        let a0 = first_arrival(&rec.channels[0]) as isize;
        let a1 = first_arrival(&rec.channels[1]) as isize;
        assert!((a1 - a0 - 10).abs() <= 1, "{a0} {a1}");
    }

    #[test]
    fn measured_delays_match_geometry() {
        let scene = quiet_scene();
        let p = [-100.0, 20.0, 60.0];
        let rec = simulate_impulse(&scene, p, Material::HardPlastic, 0.0, 9).unwrap();
        let d = scene.mic_distances(&p);
        let arrivals: Vec<isize> = rec.channels.iter().map(|c| first_arrival(c) as isize).collect();
        for i in 0..7 {
            for j in 0..7 {
                let want = (d[i] - d[j]) / scene.wave_speed_mm_s * 50_000.0;
                assert!(((arrivals[i] - arrivals[j]) as f64 - want).abs() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn peak_envelope_decreases_with_distance() {
        let scene = quiet_scene();
        let p = [100.0, -20.0, 120.0];
        let rec = simulate_impulse(&scene, p, Material::Metal, 0.0, 4).unwrap();
        let d = scene.mic_distances(&p);
        // analytic envelope amplitude is gain / (d + d0); measured peaks follow it
        let mut order: Vec<usize> = (0..7).collect();
        order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap());
        let peaks: Vec<f32> = order.iter().map(|&i| peak(&rec.channels[i])).collect();
        for w in peaks.windows(2) {
            assert!(w[0] >= w[1] * 0.98, "{peaks:?}");
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let scene = SceneModel::default();
        let p = [0.0, 100.0, 200.0];
        let a = simulate_impulse(&scene, p, Material::Wood, 0.001, 5).unwrap();
        let b = simulate_impulse(&scene, p, Material::Wood, 0.001, 5).unwrap();
        let c = simulate_impulse(&scene, p, Material::Wood, 0.001, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 25_000);
        assert_eq!(a.label.view, View::Back);
    }

    #[test]
    fn outside_workspace_is_range_error() {
        let scene = SceneModel::default();
        assert!(matches!(
            simulate_impulse(&scene, [0.0, 150.0, 100.0], Material::Metal, 0.0, 1),
            Err(Error::Range(_))
        ));
    }
}
