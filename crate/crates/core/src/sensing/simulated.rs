use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{Capability, ImuSample, ImuSource, ImuSourceDescriptor, SensingError, SourceKind, GRAVITY};
use crate::time::TimeSource;

/// A span of constant body-frame angular velocity and constant world-frame
/// acceleration (gravity excluded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuSegment {
    /// Seconds.
    pub duration: f64,
    #[serde(default)]
    pub angular_velocity: [f64; 3],
    #[serde(default)]
    pub linear_acceleration: [f64; 3],
}

/// Piecewise motion profile for a simulated IMU. After the last segment the
/// sensor stays still in its final orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuTrajectory {
    pub rate_hz: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Initial orientation as [w, x, y, z].
    #[serde(default = "identity")]
    pub initial_orientation: [f64; 4],
    /// Reports orientation when true.
    #[serde(default)]
    pub orientation_output: bool,
    /// World-frame field; its presence enables the magnetometer.
    #[serde(default)]
    pub magnetic_field: Option<[f64; 3]>,
    #[serde(default, rename = "segment")]
    pub segments: Vec<ImuSegment>,
}

fn default_temperature() -> f64 {
    25.0
}

fn identity() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl ImuTrajectory {
    pub fn at_rest(rate_hz: f64) -> Self {
        ImuTrajectory {
            rate_hz,
            temperature: default_temperature(),
            initial_orientation: identity(),
            orientation_output: false,
            magnetic_field: None,
            segments: Vec::new(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SensingError> {
        let t: ImuTrajectory = toml::from_str(s).map_err(|e| SensingError::InvalidTrajectory(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, SensingError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| SensingError::InvalidTrajectory(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("trajectory serializes")
    }

    pub fn validate(&self) -> Result<(), SensingError> {
        let bad = |s: String| Err(SensingError::InvalidTrajectory(s));
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return bad(format!("rate_hz must be positive, got {}", self.rate_hz));
        }
        if !self.temperature.is_finite() {
            return bad("temperature is not finite".into());
        }
        let q = self.initial_orientation;
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return bad(format!("initial_orientation norm {n} is not 1"));
        }
        if let Some(m) = self.magnetic_field {
            if m.iter().any(|v| !v.is_finite()) {
                return bad("magnetic_field is not finite".into());
            }
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration > 0.0 && s.duration.is_finite()) {
                return bad(format!("segment {i}: duration must be positive"));
            }
            if s.angular_velocity
                .iter()
                .chain(&s.linear_acceleration)
                .any(|v| !v.is_finite())
            {
                return bad(format!("segment {i}: non-finite value"));
            }
        }
        Ok(())
    }

    fn descriptor(&self) -> ImuSourceDescriptor {
        let mut caps = BTreeSet::new();
        if self.orientation_output {
            caps.insert(Capability::Orientation);
        }
        if self.magnetic_field.is_some() {
            caps.insert(Capability::Magnetometer);
        }
        ImuSourceDescriptor {
            source_kind: SourceKind::Simulated,
            capabilities: caps,
            sample_rate_hint: self.rate_hz,
        }
    }

    fn q0(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.initial_orientation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    }

    /// Orientation, body angular velocity and world acceleration at `t`.
    pub fn state_at(&self, t: f64) -> (UnitQuaternion<f64>, Vector3<f64>, Vector3<f64>) {
        let mut q = self.q0();
        let mut start = 0.0;
        for s in &self.segments {
            let w = Vector3::from(s.angular_velocity);
            let a = Vector3::from(s.linear_acceleration);
            let end = start + s.duration;
            if t < end {
                let dt = (t - start).max(0.0);
                return (q * UnitQuaternion::from_scaled_axis(w * dt), w, a);
            }
            q *= UnitQuaternion::from_scaled_axis(w * s.duration);
            start = end;
        }
        (q, Vector3::zeros(), Vector3::zeros())
    }

    /// The k-th sample of the stream, at `k / rate_hz` seconds.
    pub fn sample(&self, k: u64) -> ImuSample {
        let t = k as f64 / self.rate_hz;
        let (q, w, a) = self.state_at(t);
        let specific_force = q.inverse_transform_vector(&(a + Vector3::new(0.0, 0.0, GRAVITY)));
        let mut s = ImuSample::new(t, specific_force, w, self.temperature);
        if let Some(m) = self.magnetic_field {
            s = s.with_magnetic_field(q.inverse_transform_vector(&Vector3::from(m)));
        }
        if self.orientation_output {
            s = s.with_orientation(q);
        }
        s
    }

    /// Endless stream of samples with strictly increasing timestamps.
    pub fn samples(&self) -> impl Iterator<Item = ImuSample> + '_ {
        (0..).map(move |k| self.sample(k))
    }
}

/// Deterministic IMU driven by an [`ImuTrajectory`] and a session clock.
pub struct SimulatedImu {
    trajectory: ImuTrajectory,
    descriptor: ImuSourceDescriptor,
    time: TimeSource,
    open: bool,
}

impl SimulatedImu {
    pub fn open(trajectory: ImuTrajectory, time: TimeSource) -> Result<Self, SensingError> {
        trajectory.validate()?;
        let descriptor = trajectory.descriptor();
        Ok(SimulatedImu {
            trajectory,
            descriptor,
            time,
            open: true,
        })
    }

    pub fn trajectory(&self) -> &ImuTrajectory {
        &self.trajectory
    }
}

impl ImuSource for SimulatedImu {
    fn descriptor(&self) -> &ImuSourceDescriptor {
        &self.descriptor
    }

    fn query(&mut self) -> Result<ImuSample, SensingError> {
        if !self.open {
            return Err(SensingError::Closed);
        }
        let k = (self.time.now_secs() * self.trajectory.rate_hz + 1e-9).floor() as u64;
        Ok(self.trajectory.sample(k))
    }

    fn close(&mut self) {
        self.open = false;
    }
}
