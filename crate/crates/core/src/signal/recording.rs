use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of contact microphones on the rig.
pub const NUM_CHANNELS: usize = 7;

/// Sample rate of raw impulse captures.
pub const RAW_RATE_HZ: u32 = 50_000;
/// Sample rate the pipeline works at.
pub const FEATURE_RATE_HZ: u32 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Metal,
    SoftPlastic,
    HardPlastic,
    Wood,
}

impl Material {
    pub const ALL: [Material; 4] = [
        Material::Metal,
        Material::SoftPlastic,
        Material::HardPlastic,
        Material::Wood,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Material::Metal => "metal",
            Material::SoftPlastic => "soft_plastic",
            Material::HardPlastic => "hard_plastic",
            Material::Wood => "wood",
        }
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Material {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Material::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown material '{s}'")))
    }
}

/// Side of the hand a contact faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    Back,
    Front,
    Right,
    Left,
}

impl View {
    pub const ALL: [View; 4] = [View::Back, View::Front, View::Right, View::Left];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Back => "Back",
            View::Front => "Front",
            View::Right => "Right",
            View::Left => "Left",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Hand,
    Forearm,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Hand => "hand",
            Region::Forearm => "forearm",
        })
    }
}

/// Whether the robot hand was idle (`Fixed`) or moving during capture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Fixed,
    Moving,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::Fixed, Scenario::Moving];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Fixed => "fixed",
            Scenario::Moving => "moving",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Scenario::Fixed),
            "moving" => Ok(Scenario::Moving),
            _ => Err(Error::Invalid(format!("unknown scenario '{s}'"))),
        }
    }
}

/// One timestamped trajectory sample: time in ms, position in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t_ms: f64,
    pub pos: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Contact {
    Impulse { position: [f64; 3] },
    Stroke { trajectory: Vec<TrajectoryPoint> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactLabel {
    pub contact: Contact,
    pub material: Material,
    pub view: View,
    pub region: Region,
    pub scenario: Scenario,
}

pub const MIN_STROKE_MS: f64 = 1000.0;
pub const MAX_STROKE_MS: f64 = 10_000.0;

impl ContactLabel {
    /// Checks the structural label invariants. Stroke duration outside
    /// `[1, 10] s` is only logged here; the simulator enforces it.
    pub fn validate(&self) -> Result<()> {
        match &self.contact {
            Contact::Impulse { position } => {
                if position.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("non-finite impulse position".into()));
                }
            }
            Contact::Stroke { trajectory } => {
                if trajectory.len() < 2 {
                    return Err(Error::Invalid(
                        "stroke trajectory needs at least 2 points".into(),
                    ));
                }
                for w in trajectory.windows(2) {
                    if !(w[1].t_ms > w[0].t_ms) {
                        return Err(Error::Invalid(
                            "stroke trajectory timestamps must strictly increase".into(),
                        ));
                    }
                }
                let dur = trajectory.last().unwrap().t_ms - trajectory[0].t_ms;
                if !(MIN_STROKE_MS..=MAX_STROKE_MS).contains(&dur) {
                    log::warn!("stroke duration {dur:.1} ms outside [1000, 10000] ms");
                }
            }
        }
        Ok(())
    }

    pub fn kind_str(&self) -> &'static str {
        match self.contact {
            Contact::Impulse { .. } => "impulse",
            Contact::Stroke { .. } => "stroke",
        }
    }
}

/// A synchronized 7-channel capture.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub channels: Vec<Vec<f32>>,
    pub sample_rate: u32,
    /// Time of contact relative to recording start, in ms.
    pub trigger_offset_ms: f64,
    pub label: ContactLabel,
}

impl Recording {
    /// Builds a recording, clamping samples to `[-1, 1]` and checking the
    /// channel/rate invariants.
    pub fn new(
        mut channels: Vec<Vec<f32>>,
        sample_rate: u32,
        trigger_offset_ms: f64,
        label: ContactLabel,
    ) -> Result<Self> {
        for ch in channels.iter_mut() {
            for s in ch.iter_mut() {
                if !s.is_finite() {
                    return Err(Error::Invalid("non-finite sample".into()));
                }
                *s = s.clamp(-1.0, 1.0);
            }
        }
        let rec = Recording {
            channels,
            sample_rate,
            trigger_offset_ms,
            label,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != NUM_CHANNELS {
            return Err(Error::Shape(format!(
                "expected {NUM_CHANNELS} channels, got {}",
                self.channels.len()
            )));
        }
        let len = self.channels[0].len();
        if self.channels.iter().any(|c| c.len() != len) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        if self.sample_rate != RAW_RATE_HZ && self.sample_rate != FEATURE_RATE_HZ {
            return Err(Error::Invalid(format!(
                "sample rate {} not in {{50000, 20000}}",
                self.sample_rate
            )));
        }
        if self
            .channels
            .iter()
            .flatten()
            .any(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::Invalid("samples must be finite and within ±1".into()));
        }
        self.label.validate()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_ms(&self) -> f64 {
        self.len() as f64 * 1000.0 / self.sample_rate as f64
    }

    /// Sample index for a time in ms, rounded to nearest.
    pub fn index_at(&self, ms: f64) -> usize {
        (ms * self.sample_rate as f64 / 1000.0).round() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn impulse_label() -> ContactLabel {
        ContactLabel {
            contact: Contact::Impulse {
                position: [0.0, 0.0, 0.0],
            },
            material: Material::Metal,
            view: View::Back,
            region: Region::Hand,
            scenario: Scenario::Fixed,
        }
    }

    #[test]
    fn clamps_and_validates() {
        let mut chans = vec![vec![0.0f32; 10]; NUM_CHANNELS];
        chans[0][3] = 1.7;
        chans[2][1] = -3.0;
        let rec = Recording::new(chans, 20_000, 0.0, impulse_label()).unwrap();
        assert_eq!(rec.channels[0][3], 1.0);
        assert_eq!(rec.channels[2][1], -1.0);
    }

    #[test]
    fn rejects_bad_shapes_and_rates() {
        let chans = vec![vec![0.0f32; 10]; 6];
        assert!(matches!(
            Recording::new(chans, 20_000, 0.0, impulse_label()),
            Err(Error::Shape(_))
        ));
        let mut chans = vec![vec![0.0f32; 10]; NUM_CHANNELS];
        chans[4].pop();
        assert!(Recording::new(chans, 20_000, 0.0, impulse_label()).is_err());
        let chans = vec![vec![0.0f32; 10]; NUM_CHANNELS];
        assert!(Recording::new(chans, 44_100, 0.0, impulse_label()).is_err());
        let mut chans = vec![vec![0.0f32; 10]; NUM_CHANNELS];
        chans[1][1] = f32::NAN;
        assert!(Recording::new(chans, 20_000, 0.0, impulse_label()).is_err());
    }

    #[test]
    fn stroke_timestamps_must_increase() {
        let mut label = impulse_label();
        label.contact = Contact::Stroke {
            trajectory: vec![
                TrajectoryPoint { t_ms: 0.0, pos: [0.0; 3] },
                TrajectoryPoint { t_ms: 0.0, pos: [1.0; 3] },
            ],
        };
        assert!(label.validate().is_err());
        label.contact = Contact::Stroke {
            trajectory: vec![TrajectoryPoint { t_ms: 0.0, pos: [0.0; 3] }],
        };
        assert!(label.validate().is_err());
    }

    #[test]
    fn material_names_round_trip() {
        for m in Material::ALL {
            assert_eq!(m.as_str().parse::<Material>().unwrap(), m);
        }
        assert!("granite".parse::<Material>().is_err());
    }
}
