use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::recording::{Material, Region, View, NUM_CHANNELS};

pub type Point3 = [f64; 3];

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Axis-aligned box, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: Point3,
    pub max: Point3,
}

impl Workspace {
    pub fn contains(&self, p: &Point3) -> bool {
        const TOL: f64 = 1e-9;
        (0..3).all(|k| p[k] >= self.min[k] - TOL && p[k] <= self.max[k] + TOL)
    }

    pub fn center(&self) -> Point3 {
        std::array::from_fn(|k| 0.5 * (self.min[k] + self.max[k]))
    }

    pub fn half_extent(&self) -> Point3 {
        std::array::from_fn(|k| 0.5 * (self.max[k] - self.min[k]))
    }

    /// The lateral face a surface point lies on. `Back`/`Front` are the
    /// `+y`/`-y` faces, `Right`/`Left` the `+x`/`-x` faces.
    pub fn face_of(&self, p: &Point3) -> Option<View> {
        const TOL: f64 = 1e-6;
        if (p[1] - self.max[1]).abs() < TOL {
            Some(View::Back)
        } else if (p[1] - self.min[1]).abs() < TOL {
            Some(View::Front)
        } else if (p[0] - self.max[0]).abs() < TOL {
            Some(View::Right)
        } else if (p[0] - self.min[0]).abs() < TOL {
            Some(View::Left)
        } else {
            None
        }
    }
}

/// Resonant signature of an indenter material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialProfile {
    pub mode_freqs_hz: Vec<f64>,
    /// Decay rates, 1/s, one per mode.
    pub damping: Vec<f64>,
    pub impact_gain: f64,
    /// Friction-noise spectral richness in `[0, 1]`.
    pub roughness: f64,
    /// Relative per-event standard deviation of the mode frequencies.
    pub heterogeneity_jitter: f64,
}

impl MaterialProfile {
    pub fn default_for(m: Material) -> Self {
        let (f, d, gain, rough, jitter) = match m {
            Material::Metal => (vec![6000.0, 9000.0], vec![200.0, 300.0], 1.0, 0.1, 0.01),
            Material::HardPlastic => (vec![3500.0], vec![600.0], 0.8, 0.3, 0.02),
            Material::SoftPlastic => (vec![1500.0], vec![1200.0], 0.5, 0.4, 0.02),
            Material::Wood => (vec![2500.0], vec![800.0], 0.7, 0.9, 0.08),
        };
        MaterialProfile {
            mode_freqs_hz: f,
            damping: d,
            impact_gain: gain,
            roughness: rough,
            heterogeneity_jitter: jitter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode_freqs_hz.len() != self.damping.len() || self.mode_freqs_hz.is_empty() {
            return Err(Error::Invalid("material needs one damping value per mode".into()));
        }
        if self.mode_freqs_hz.iter().any(|&f| !(f > 0.0 && f <= 10_000.0)) {
            return Err(Error::Invalid("mode frequencies must lie in (0, 10000] Hz".into()));
        }
        if self.damping.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Invalid("damping must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.roughness) {
            return Err(Error::Invalid("roughness must lie in [0, 1]".into()));
        }
        if !(self.heterogeneity_jitter >= 0.0) || !(self.impact_gain >= 0.0) {
            return Err(Error::Invalid("jitter and gain must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Stationary self-noise of the hand (cooling fan).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanNoise {
    pub fundamental_hz: f64,
    pub harmonics: usize,
    /// Amplitude of each harmonic.
    pub amplitude: f64,
    /// RMS of the low-frequency (one-pole filtered) noise component.
    pub rumble_rms: f64,
    pub rumble_cutoff_hz: f64,
}

/// Transient actuator noise present when the hand moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorNoise {
    /// Mean bursts per second (Poisson).
    pub burst_rate_hz: f64,
    pub band_hz: [f64; 2],
    pub burst_ms: f64,
    pub amplitude: f64,
    /// Motor location; the level at a mic is `amplitude * d0 / (d + d0)` with
    /// `d0 = attenuation_offset_mm`.
    pub position: Point3,
}

/// Where drawings are placed: a square patch on a lateral face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawingArea {
    /// Patch center on the face, mm.
    pub center: Point3,
    pub size_mm: f64,
    pub face: View,
}

impl DrawingArea {
    /// Maps patch coordinates (`u` right, `v` down, mm from the top-left corner)
    /// onto the face.
    pub fn to_world(&self, uv: [f64; 2]) -> Point3 {
        let h = self.size_mm / 2.0;
        let (du, dz) = (uv[0] - h, h - uv[1]);
        let c = self.center;
        match self.face {
            View::Back => [c[0] + du, c[1], c[2] + dz],
            View::Front => [c[0] - du, c[1], c[2] + dz],
            View::Right => [c[0], c[1] - du, c[2] + dz],
            View::Left => [c[0], c[1] + du, c[2] + dz],
        }
    }
}

/// Simulator description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub mic_positions: Vec<Point3>,
    pub wave_speed_mm_s: f64,
    pub attenuation_offset_mm: f64,
    /// Overall source scale; a contact at distance `d` reaches a mic with
    /// amplitude `source_gain * impact_gain / (d + attenuation_offset_mm)`.
    pub source_gain: f64,
    /// Friction excitation amplitude at the reference pen speed.
    pub friction_gain: f64,
    pub reference_speed_mm_s: f64,
    /// Friction power grows as `speed^friction_exponent`.
    pub friction_exponent: f64,
    pub workspace: Workspace,
    /// Points with `z >= hand_z_min` belong to the hand, the rest to the forearm.
    pub hand_z_min: f64,
    /// Standard deviation of sensor white noise in stroke recordings.
    pub white_noise_level: f64,
    pub fan: FanNoise,
    pub motor: MotorNoise,
    pub drawing_area: DrawingArea,
    pub pen_speed_mm_s: f64,
    pub stroke_lead_in_ms: f64,
    pub stroke_tail_ms: f64,
    pub materials: BTreeMap<Material, MaterialProfile>,
}

impl Default for SceneModel {
    fn default() -> Self {
        SceneModel {
            mic_positions: vec![
                // forearm
                [-100.0, -30.0, 40.0],
                [100.0, 40.0, 70.0],
                [20.0, 100.0, 110.0],
                [-40.0, -100.0, 150.0],
                // hand
                [60.0, 100.0, 210.0],
                [-100.0, 50.0, 250.0],
                [30.0, -100.0, 285.0],
            ],
            wave_speed_mm_s: 1.0e6,
            attenuation_offset_mm: 20.0,
            source_gain: 8.0,
            friction_gain: 0.5,
            reference_speed_mm_s: 40.0,
            friction_exponent: 1.5,
            workspace: Workspace {
                min: [-100.0, -100.0, 0.0],
                max: [100.0, 100.0, 300.0],
            },
            hand_z_min: 180.0,
            white_noise_level: 0.0003,
            fan: FanNoise {
                fundamental_hz: 120.0,
                harmonics: 6,
                amplitude: 0.004,
                rumble_rms: 0.0005,
                rumble_cutoff_hz: 300.0,
            },
            motor: MotorNoise {
                burst_rate_hz: 3.0,
                band_hz: [300.0, 6000.0],
                burst_ms: 80.0,
                amplitude: 0.25,
                position: [0.0, 0.0, 200.0],
            },
            drawing_area: DrawingArea {
                center: [0.0, 100.0, 90.0],
                size_mm: 80.0,
                face: View::Back,
            },
            pen_speed_mm_s: 40.0,
            stroke_lead_in_ms: 200.0,
            stroke_tail_ms: 100.0,
            materials: Material::ALL
                .into_iter()
                .map(|m| (m, MaterialProfile::default_for(m)))
                .collect(),
        }
    }
}

impl SceneModel {
    pub fn validate(&self) -> Result<()> {
        if self.mic_positions.len() != NUM_CHANNELS {
            return Err(Error::Invalid(format!(
                "scene needs {NUM_CHANNELS} microphones, got {}",
                self.mic_positions.len()
            )));
        }
        for (i, a) in self.mic_positions.iter().enumerate() {
            if !self.workspace.contains(a) {
                return Err(Error::Invalid(format!("mic {i} lies outside the workspace")));
            }
            if self.mic_positions[..i].iter().any(|b| distance(a, b) < 1e-9) {
                return Err(Error::Invalid(format!("mic {i} duplicates another mic")));
            }
        }
        if !(self.wave_speed_mm_s > 0.0) {
            return Err(Error::Invalid("wave speed must be positive".into()));
        }
        if !(self.attenuation_offset_mm > 0.0) {
            return Err(Error::Invalid("attenuation offset must be positive".into()));
        }
        for m in Material::ALL {
            self.material(m)?.validate()?;
        }
        Ok(())
    }

    pub fn material(&self, m: Material) -> Result<&MaterialProfile> {
        self.materials
            .get(&m)
            .ok_or_else(|| Error::Invalid(format!("scene has no profile for {m}")))
    }

    pub fn region_of(&self, p: &Point3) -> Region {
        if p[2] >= self.hand_z_min {
            Region::Hand
        } else {
            Region::Forearm
        }
    }

    pub fn mic_distances(&self, p: &Point3) -> [f64; NUM_CHANNELS] {
        std::array::from_fn(|i| distance(&self.mic_positions[i], p))
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let scene: SceneModel = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                path: origin.to_string(),
                line,
                msg: e.message().to_string(),
            }
        })?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }
}
