//! IMU sampling behind one interface, with a deterministic simulated source
//! and an externally fed source for real drivers.
//!
//! Conventions: right-handed body frame, z up. The accelerometer reports
//! specific force, so a level sensor at rest reads (0, 0, +9.81) m/s².

mod external;
mod simulated;

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use external::{external_source, ExternalImu, ImuFeeder};
pub use simulated::{ImuSegment, ImuTrajectory, SimulatedImu};

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;
/// Allowed deviation of a reported orientation from unit norm.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Capability {
    Orientation,
    Magnetometer,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Orientation => "orientation",
            Capability::Magnetometer => "magnetometer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Simulated,
    ExternalDriver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuSourceDescriptor {
    pub source_kind: SourceKind,
    pub capabilities: BTreeSet<Capability>,
    /// Hz
    pub sample_rate_hint: f64,
}

impl ImuSourceDescriptor {
    pub fn supports(&self, c: Capability) -> bool {
        self.capabilities.contains(&c)
    }

    /// Column names for logging samples from this source; unsupported
    /// capabilities get no columns.
    pub fn field_names(&self, prefix: &str) -> Vec<String> {
        let mut names = vec![format!("{prefix}t")];
        for axis in ["x", "y", "z"] {
            names.push(format!("{prefix}acc_{axis}"));
        }
        for axis in ["x", "y", "z"] {
            names.push(format!("{prefix}gyro_{axis}"));
        }
        if self.supports(Capability::Magnetometer) {
            for axis in ["x", "y", "z"] {
                names.push(format!("{prefix}mag_{axis}"));
            }
        }
        names.push(format!("{prefix}temperature"));
        if self.supports(Capability::Orientation) {
            for c in ["w", "x", "y", "z"] {
                names.push(format!("{prefix}q{c}"));
            }
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensingError {
    #[error("source does not provide {0}")]
    Unsupported(Capability),
    #[error("source is closed")]
    Closed,
    #[error("source failed: {0}")]
    Failed(String),
    #[error("no sample available yet")]
    NoData,
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
}

/// One IMU reading. Optional fields are absent exactly when the source
/// lacks the capability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Specific force, m/s², body frame.
    pub linear_acceleration: Vector3<f64>,
    /// rad/s, body frame.
    pub angular_velocity: Vector3<f64>,
    magnetic_field: Option<Vector3<f64>>,
    /// °C
    pub temperature: f64,
    orientation: Option<UnitQuaternion<f64>>,
    /// Seconds.
    pub timestamp: f64,
}

impl ImuSample {
    pub fn new(
        timestamp: f64,
        linear_acceleration: Vector3<f64>,
        angular_velocity: Vector3<f64>,
        temperature: f64,
    ) -> Self {
        ImuSample {
            linear_acceleration,
            angular_velocity,
            magnetic_field: None,
            temperature,
            orientation: None,
            timestamp,
        }
    }

    pub fn with_magnetic_field(mut self, m: Vector3<f64>) -> Self {
        self.magnetic_field = Some(m);
        self
    }

    pub fn with_orientation(mut self, q: UnitQuaternion<f64>) -> Self {
        self.orientation = Some(q);
        self
    }

    pub fn orientation(&self) -> Result<UnitQuaternion<f64>, SensingError> {
        self.orientation
            .ok_or(SensingError::Unsupported(Capability::Orientation))
    }

    pub fn magnetic_field(&self) -> Result<Vector3<f64>, SensingError> {
        self.magnetic_field
            .ok_or(SensingError::Unsupported(Capability::Magnetometer))
    }

    pub fn has(&self, c: Capability) -> bool {
        match c {
            Capability::Orientation => self.orientation.is_some(),
            Capability::Magnetometer => self.magnetic_field.is_some(),
        }
    }

    /// Checks finiteness, unit orientation and agreement with `desc`.
    pub fn validate(&self, desc: &ImuSourceDescriptor) -> Result<(), SensingError> {
        let bad = |s: String| Err(SensingError::InvalidSample(s));
        let mut all = vec![self.timestamp, self.temperature];
        all.extend(self.linear_acceleration.iter());
        all.extend(self.angular_velocity.iter());
        if let Some(m) = self.magnetic_field {
            all.extend(m.iter());
        }
        if let Some(q) = self.orientation {
            all.extend(q.coords.iter());
        }
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        if let Some(q) = self.orientation {
            let n = q.coords.norm();
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return bad(format!("orientation norm {n}"));
            }
        }
        for c in [Capability::Orientation, Capability::Magnetometer] {
            if self.has(c) != desc.supports(c) {
                return bad(format!(
                    "{c} {} but the source {} it",
                    if self.has(c) { "present" } else { "missing" },
                    if desc.supports(c) {
                        "declares"
                    } else {
                        "does not declare"
                    }
                ));
            }
        }
        Ok(())
    }

    /// Values in the column order of [`ImuSourceDescriptor::field_names`].
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.timestamp];
        v.extend(self.linear_acceleration.iter());
        v.extend(self.angular_velocity.iter());
        if let Some(m) = self.magnetic_field {
            v.extend(m.iter());
        }
        v.push(self.temperature);
        if let Some(q) = self.orientation {
            v.extend([q.w, q.i, q.j, q.k]);
        }
        v
    }
}

/// Uniform query interface over IMU types.
pub trait ImuSource: Send {
    fn descriptor(&self) -> &ImuSourceDescriptor;

    /// Most recent sample.
    fn query(&mut self) -> Result<ImuSample, SensingError>;

    fn close(&mut self);

    fn orientation(&mut self) -> Result<UnitQuaternion<f64>, SensingError> {
        if !self.descriptor().supports(Capability::Orientation) {
            return Err(SensingError::Unsupported(Capability::Orientation));
        }
        self.query()?.orientation()
    }

    fn magnetic_field(&mut self) -> Result<Vector3<f64>, SensingError> {
        if !self.descriptor().supports(Capability::Magnetometer) {
            return Err(SensingError::Unsupported(Capability::Magnetometer));
        }
        self.query()?.magnetic_field()
    }
}

/// Pass-through hook for downstream filtering.
pub struct Filtered<S, F> {
    inner: S,
    filter: F,
}

impl<S: ImuSource, F: FnMut(ImuSample) -> ImuSample + Send> Filtered<S, F> {
    pub fn new(inner: S, filter: F) -> Self {
        Filtered { inner, filter }
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: ImuSource, F: FnMut(ImuSample) -> ImuSample + Send> ImuSource for Filtered<S, F> {
    fn descriptor(&self) -> &ImuSourceDescriptor {
        self.inner.descriptor()
    }

    fn query(&mut self) -> Result<ImuSample, SensingError> {
        self.inner.query().map(&mut self.filter)
    }

    fn close(&mut self) {
        self.inner.close()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(caps: &[Capability]) -> ImuSourceDescriptor {
        ImuSourceDescriptor {
            source_kind: SourceKind::ExternalDriver,
            capabilities: caps.iter().copied().collect(),
            sample_rate_hint: 100.0,
        }
    }

    #[test]
    fn absent_capabilities_are_unsupported_not_zero() {
        let s = ImuSample::new(0.0, Vector3::new(0.0, 0.0, GRAVITY), Vector3::zeros(), 25.0);
        assert_eq!(s.orientation(), Err(SensingError::Unsupported(Capability::Orientation)));
        assert_eq!(
            s.magnetic_field(),
            Err(SensingError::Unsupported(Capability::Magnetometer))
        );
        assert_eq!(s.values().len(), desc(&[]).field_names("").len());
    }

    #[test]
    fn validation() {
        let base = ImuSample::new(0.0, Vector3::zeros(), Vector3::zeros(), 25.0);
        assert!(base.validate(&desc(&[])).is_ok());
        assert!(base.validate(&desc(&[Capability::Orientation])).is_err());
        let q = base.with_orientation(UnitQuaternion::identity());
        assert!(q.validate(&desc(&[])).is_err());
        assert!(q.validate(&desc(&[Capability::Orientation])).is_ok());
        let mut nan = base;
        nan.temperature = f64::NAN;
        assert!(nan.validate(&desc(&[])).is_err());
        let skew = base.with_orientation(UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(
            1.0, 0.01, 0.0, 0.0,
        )));
        assert!(skew.validate(&desc(&[Capability::Orientation])).is_err());
    }

    #[test]
    fn field_names_follow_capabilities() {
        let d = desc(&[Capability::Orientation, Capability::Magnetometer]);
        let names = d.field_names("imu.");
        assert_eq!(names.len(), 1 + 3 + 3 + 3 + 1 + 4);
        assert_eq!(names[0], "imu.t");
        let s = ImuSample::new(0.0, Vector3::zeros(), Vector3::zeros(), 25.0)
            .with_magnetic_field(Vector3::x())
            .with_orientation(UnitQuaternion::identity());
        assert_eq!(s.values().len(), names.len());
    }
}
