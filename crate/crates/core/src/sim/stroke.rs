//! Sliding-contact (stroke) recordings: speed-dependent friction noise
//! radiated from a moving contact point.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::signal::features::trajectory_position;
use crate::signal::recording::{
    Contact, ContactLabel, Material, Recording, Scenario, TrajectoryPoint, FEATURE_RATE_HZ,
    MAX_STROKE_MS, MIN_STROKE_MS, NUM_CHANNELS,
};
use crate::sim::impulse::nearest_view;
use crate::sim::noise::{add_fan, add_motor, add_white, derived_rng, stream};
use crate::sim::scene::{distance, MaterialProfile, SceneModel};

/// Unit-RMS friction excitation for a material: low-passed noise whose
/// bandwidth grows with roughness, mixed with noise-driven resonances at the
/// material's modes.
pub fn friction_excitation(profile: &MaterialProfile, len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = derived_rng(seed, &[stream::EXCITATION]);
    let white: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    // independent drive for the resonances keeps the two parts uncorrelated
    let drive: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();

    let fc = 800.0 + 7200.0 * profile.roughness;
    let a = (-2.0 * PI * fc / rate).exp();
    let bb_gain = ((1.0 - a) / (1.0 + a)).sqrt();
    let mut y = 0.0;
    let broadband: Vec<f64> = white
        .iter()
        .map(|&x| {
            y = a * y + (1.0 - a) * x;
            y / bb_gain
        })
        .collect();

    let mut resonant = vec![0.0; len];
    let n_modes = profile.mode_freqs_hz.len() as f64;
    for (&f, &lambda) in profile.mode_freqs_hz.iter().zip(&profile.damping) {
        let r = (-lambda / rate).exp();
        let theta = 2.0 * PI * f / rate;
        let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
        let var = (1.0 + r * r) / ((1.0 - r * r) * (1.0 - 2.0 * r * r * (2.0 * theta).cos() + r.powi(4)));
        let g = 1.0 / (var * n_modes).sqrt();
        let (mut y1, mut y2) = (0.0, 0.0);
        for (out, &x) in resonant.iter_mut().zip(&drive) {
            let y0 = a1 * y1 + a2 * y2 + x;
            *out += g * y0;
            (y2, y1) = (y1, y0);
        }
    }
    let (wb, wr) = (profile.roughness.sqrt(), (1.0 - profile.roughness).sqrt());
    broadband
        .iter()
        .zip(&resonant)
        .map(|(b, r)| wb * b + wr * r)
        .collect()
}

fn validate_trajectory(scene: &SceneModel, traj: &[TrajectoryPoint]) -> Result<()> {
    if traj.len() < 2 {
        return Err(Error::Invalid("trajectory needs at least 2 points".into()));
    }
    if traj.windows(2).any(|w| !(w[1].t_ms > w[0].t_ms)) {
        return Err(Error::Invalid("trajectory timestamps must strictly increase".into()));
    }
    let dur = traj[traj.len() - 1].t_ms - traj[0].t_ms;
    if !(MIN_STROKE_MS - 1e-9..=MAX_STROKE_MS + 1e-9).contains(&dur) {
        return Err(Error::Range(format!(
            "stroke duration {dur} ms outside [{MIN_STROKE_MS}, {MAX_STROKE_MS}] ms"
        )));
    }
    if let Some(p) = traj.iter().find(|p| !scene.workspace.contains(&p.pos)) {
        return Err(Error::Range(format!("trajectory point {:?} outside workspace", p.pos)));
    }
    Ok(())
}

/// Simulates a 20 kHz recording of a stroke.
///
/// The recording starts `scene.stroke_lead_in_ms` before the stroke (which
/// is also the trigger offset) and ends `scene.stroke_tail_ms` after it.
/// Trajectory timestamps in the label are relative to recording start.
pub fn simulate_stroke(
    scene: &SceneModel,
    trajectory: &[TrajectoryPoint],
    material: Material,
    scenario: Scenario,
    seed: u64,
) -> Result<Recording> {
    validate_trajectory(scene, trajectory)?;
    let profile = scene.material(material)?;
    let rate = FEATURE_RATE_HZ as f64;
    let shift = scene.stroke_lead_in_ms - trajectory[0].t_ms;
    let traj: Vec<TrajectoryPoint> = trajectory
        .iter()
        .map(|p| TrajectoryPoint { t_ms: p.t_ms + shift, pos: p.pos })
        .collect();
    let end_ms = traj[traj.len() - 1].t_ms + scene.stroke_tail_ms;
    let len = (end_ms * rate / 1000.0).round() as usize;

    // per-segment speeds, mm/s
    let speeds: Vec<f64> = traj
        .windows(2)
        .map(|w| distance(&w[0].pos, &w[1].pos) / ((w[1].t_ms - w[0].t_ms) / 1000.0))
        .collect();
    let level = scene.friction_gain * (0.2 + 0.8 * profile.roughness);
    let amp_exp = scene.friction_exponent / 2.0;

    let max_delay = scene
        .mic_positions
        .iter()
        .flat_map(|m| traj.iter().map(move |p| distance(m, &p.pos)))
        .fold(0.0, f64::max)
        / scene.wave_speed_mm_s
        * rate;
    let pad = max_delay.ceil() as usize + 1;
    let excitation = friction_excitation(profile, len + pad, rate, seed);

    let mut channels = vec![vec![0.0; len]; NUM_CHANNELS];
    let (t_first, t_last) = (traj[0].t_ms, traj[traj.len() - 1].t_ms);
    for n in 0..len {
        let t_ms = n as f64 * 1000.0 / rate;
        if t_ms < t_first || t_ms >= t_last {
            continue;
        }
        let seg = traj.partition_point(|p| p.t_ms <= t_ms) - 1;
        let speed = speeds[seg.min(speeds.len() - 1)];
        if speed <= 0.0 {
            continue;
        }
        let a = level * (speed / scene.reference_speed_mm_s).powf(amp_exp);
        let pos = trajectory_position(&traj, t_ms);
        for (ch, mic) in channels.iter_mut().zip(&scene.mic_positions) {
            let d = distance(mic, &pos);
            let delay = (d / scene.wave_speed_mm_s * rate).round() as usize;
            // excitation index is offset by `pad` so the source leads every mic
            let src = excitation[n + pad - delay];
            ch[n] += a * src * scene.source_gain / (d + scene.attenuation_offset_mm);
        }
    }

    add_fan(&mut channels, &scene.fan, rate, &mut derived_rng(seed, &[stream::FAN]));
    add_white(&mut channels, scene.white_noise_level, &mut derived_rng(seed, &[stream::WHITE]));
    if scenario == Scenario::Moving {
        add_motor(&mut channels, &scene.motor, scene, rate, &mut derived_rng(seed, &[stream::MOTOR]));
    }

    let mean_pos = {
        let mut acc = [0.0; 3];
        for p in &traj {
            for k in 0..3 {
                acc[k] += p.pos[k] / traj.len() as f64;
            }
        }
        acc
    };
    let label = ContactLabel {
        contact: Contact::Stroke { trajectory: traj },
        material,
        view: nearest_view(scene, &mean_pos),
        region: scene.region_of(&mean_pos),
        scenario,
    };
    Recording::new(
        channels
            .into_iter()
            .map(|c| c.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect())
            .collect(),
        FEATURE_RATE_HZ,
        scene.stroke_lead_in_ms,
        label,
    )
}
