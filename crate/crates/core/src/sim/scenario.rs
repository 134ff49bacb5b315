use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SimError};
use crate::gait::VelocityCommand;
use crate::model::Terrain;

/// Names of the built-in scenarios.
pub const SCENARIO_NAMES: [&str; 6] = ["stand", "drive_1ms", "lateral_drift", "reversal", "mixed_velocity", "disturbed_drive"];

/// Velocity command at a given time. Between keyframes the profile blends
/// with the smoothstep `3s^2 - 2s^3`, so commanded accelerations are
/// continuous; the ends are held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub time: f64,
    #[serde(default)]
    pub forward: f64,
    #[serde(default)]
    pub lateral: f64,
    #[serde(default)]
    pub yaw_rate: f64,
}

impl Keyframe {
    pub fn new(time: f64, forward: f64, lateral: f64, yaw_rate: f64) -> Self {
        Keyframe { time, forward, lateral, yaw_rate }
    }

    fn command(&self) -> VelocityCommand {
        VelocityCommand::new(self.forward, self.lateral, self.yaw_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainSpec {
    pub normal: [f64; 3],
    pub mu: f64,
    #[serde(default)]
    pub offset: f64,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        TerrainSpec { normal: [0.0, 0.0, 1.0], mu: 0.7, offset: 0.0 }
    }
}

impl TerrainSpec {
    pub fn terrain(&self) -> Result<Terrain, SimError> {
        Ok(Terrain::new(Vector3::from(self.normal), self.mu, self.offset)?)
    }
}

/// External force on the torso COM (world frame, N), active on
/// `[start, end)`. With a pulse period it is only on for the first
/// `pulse_on` seconds of every period; `random_direction` gives each pulse a
/// random horizontal direction drawn from the scenario seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub force: [f64; 3],
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub pulse_on: Option<f64>,
    #[serde(default)]
    pub pulse_period: Option<f64>,
    #[serde(default)]
    pub random_direction: bool,
}

impl Disturbance {
    pub fn force_at(&self, t: f64, seed: u64) -> Vector3<f64> {
        if t < self.start || t >= self.end {
            return Vector3::zeros();
        }
        let f = Vector3::from(self.force);
        let index = match (self.pulse_on, self.pulse_period) {
            (Some(on), Some(period)) => {
                let k = ((t - self.start) / period).floor();
                if t - self.start - k * period >= on {
                    return Vector3::zeros();
                }
                k as u64
            }
            _ => 0,
        };
        if !self.random_direction {
            return f;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index));
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let horizontal = (f.x * f.x + f.y * f.y).sqrt();
        Vector3::new(horizontal * angle.cos(), horizontal * angle.sin(), f.z)
    }
}

/// How the plant uses the policy between MPC updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    /// Feedforward plus state feedback through the policy gains.
    #[default]
    Affine,
    /// Feedforward held at the policy nodes, no feedback.
    Feedforward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub profile: Vec<Keyframe>,
    #[serde(default)]
    pub terrain: TerrainSpec,
    #[serde(default)]
    pub disturbance: Option<Disturbance>,
    pub duration: f64,
    #[serde(default = "default_mpc_period")]
    pub mpc_period: f64,
    #[serde(default = "default_plant_step")]
    pub plant_step: f64,
    #[serde(default)]
    pub mode: ExecutionMode,
    #[serde(default)]
    pub seed: u64,
    /// Plant mass relative to the controller model.
    #[serde(default = "one")]
    pub mass_scale: f64,
}

fn default_mpc_period() -> f64 {
    0.03
}

fn default_plant_step() -> f64 {
    0.0025
}

fn one() -> f64 {
    1.0
}

impl Scenario {
    fn base(name: &str, profile: Vec<Keyframe>, duration: f64) -> Self {
        Scenario {
            name: name.into(),
            profile,
            terrain: TerrainSpec::default(),
            disturbance: None,
            duration,
            mpc_period: default_mpc_period(),
            plant_step: default_plant_step(),
            mode: ExecutionMode::Affine,
            seed: 0,
            mass_scale: 1.0,
        }
    }

    /// Built-in scenario by name.
    pub fn builtin(name: &str) -> Result<Scenario, ConfigError> {
        let k = Keyframe::new;
        let s = match name {
            "stand" => Scenario::base(name, vec![k(0.0, 0.0, 0.0, 0.0)], 5.0),
            "drive_1ms" => Scenario::base(name, vec![k(0.0, 0.0, 0.0, 0.0), k(0.5, 1.0, 0.0, 0.0)], 5.0),
            "lateral_drift" => Scenario::base(name, vec![k(0.0, 0.0, 0.0, 0.0), k(0.3, 0.0, 0.3, 0.0)], 5.0),
            "reversal" => Scenario::base(
                name,
                vec![k(0.0, 0.0, 0.0, 0.0), k(1.0, 2.0, 0.0, 0.0), k(2.0, 2.0, 0.0, 0.0), k(3.0, -2.0, 0.0, 0.0)],
                5.0,
            ),
            "mixed_velocity" => Scenario::base(
                name,
                vec![
                    k(0.0, 0.0, 0.0, 0.0),
                    k(0.5, 0.2, 0.0, 0.0),
                    k(4.0, 0.2, 0.0, 0.0),
                    k(4.5, 0.2, 0.05, 0.2),
                    k(12.0, 0.2, 0.05, 0.2),
                    k(12.5, 0.2, 0.0, 1.0),
                ],
                18.0,
            ),
            "disturbed_drive" => Scenario {
                disturbance: Some(Disturbance {
                    force: [0.0, 50.0, 0.0],
                    start: 1.0,
                    end: 5.0,
                    pulse_on: Some(0.5),
                    pulse_period: Some(1.0),
                    random_direction: false,
                }),
                ..Scenario::base(name, vec![k(0.0, 0.0, 0.0, 0.0), k(0.5, 1.0, 0.0, 0.0)], 5.0)
            },
            other => return Err(ConfigError::UnknownScenario(other.into())),
        };
        Ok(s)
    }

    pub fn validate(&self, horizon: f64) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.profile.is_empty() {
            return bad("velocity profile needs at least one keyframe".into());
        }
        if self.profile.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return bad("keyframe times must be strictly increasing".into());
        }
        if !(self.plant_step > 0.0) {
            return bad(format!("plant step must be positive, got {}", self.plant_step));
        }
        if self.mpc_period < self.plant_step {
            return bad("MPC period must not be shorter than the plant step".into());
        }
        let ratio = self.mpc_period / self.plant_step;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad("MPC period must be a whole number of plant steps".into());
        }
        if !(self.duration > horizon) {
            return bad(format!("duration {} s must exceed the horizon {} s", self.duration, horizon));
        }
        if !(self.mass_scale > 0.0) {
            return bad("mass scale must be positive".into());
        }
        if let Some(d) = &self.disturbance {
            if let (Some(on), Some(period)) = (d.pulse_on, d.pulse_period) {
                if !(on > 0.0 && period >= on) {
                    return bad("pulse needs 0 < pulse_on <= pulse_period".into());
                }
            }
        }
        self.terrain.terrain()?;
        Ok(())
    }

    pub fn command(&self, t: f64) -> VelocityCommand {
        let p = &self.profile;
        if t <= p[0].time {
            return p[0].command();
        }
        let j = p.partition_point(|k| k.time <= t);
        if j >= p.len() {
            return p[p.len() - 1].command();
        }
        let (a, b) = (&p[j - 1], &p[j]);
        let s = (t - a.time) / (b.time - a.time);
        let w = s * s * (3.0 - 2.0 * s);
        let lerp = |x: f64, y: f64| x + (y - x) * w;
        VelocityCommand::new(lerp(a.forward, b.forward), lerp(a.lateral, b.lateral), lerp(a.yaw_rate, b.yaw_rate))
    }

    /// Intervals `[start, end)` on which the command is constant, clipped
    /// to the duration.
    pub fn constant_segments(&self) -> Vec<(f64, f64)> {
        let mut bounds: Vec<f64> = self.profile.iter().map(|k| k.time.clamp(0.0, self.duration)).collect();
        bounds.insert(0, 0.0);
        bounds.push(self.duration);
        bounds.dedup();
        bounds
            .windows(2)
            .filter(|w| w[1] > w[0] && self.command(w[0]) == self.command(w[1]) && self.command(0.5 * (w[0] + w[1])) == self.command(w[0]))
            .map(|w| (w[0], w[1]))
            .collect()
    }

    pub fn disturbance_at(&self, t: f64) -> Vector3<f64> {
        self.disturbance.as_ref().map_or_else(Vector3::zeros, |d| d.force_at(t, self.seed))
    }
}
