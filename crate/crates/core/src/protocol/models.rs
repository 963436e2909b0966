//! Shipped actuator model table.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::layout::{Family, Field};
use super::{CodecError, QuantizationSpec};

/// Per-model quantization ranges and torque limits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActuatorModelSpec {
    pub model_name: String,
    pub family: Family,
    pub position_spec: QuantizationSpec,
    pub velocity_spec: QuantizationSpec,
    pub torque_spec: QuantizationSpec,
    pub kp_spec: QuantizationSpec,
    pub kd_spec: QuantizationSpec,
    pub rated_torque: f64,
    pub peak_torque: f64,
    pub max_temperature: f64,
}

impl ActuatorModelSpec {
    pub fn spec_for(&self, field: Field) -> Option<&QuantizationSpec> {
        match field {
            Field::Position => Some(&self.position_spec),
            Field::Velocity => Some(&self.velocity_spec),
            Field::Torque => Some(&self.torque_spec),
            Field::Kp => Some(&self.kp_spec),
            Field::Kd => Some(&self.kd_spec),
            Field::Temperature => Some(&self.family.layout().feedback.temperature),
            Field::CanId | Field::FaultCode => None,
        }
    }

    /// All five command quantization specs, in wire order of the command.
    pub fn command_specs(&self) -> [(&'static str, &QuantizationSpec); 5] {
        [
            ("position", &self.position_spec),
            ("velocity", &self.velocity_spec),
            ("kp", &self.kp_spec),
            ("kd", &self.kd_spec),
            ("torque", &self.torque_spec),
        ]
    }

    fn validate(&self) -> Result<(), CodecError> {
        let bad = |why: String| CodecError::InvalidSpec(format!("{}: {why}", self.model_name));
        for (name, spec) in self.command_specs() {
            spec.validate().map_err(|e| bad(format!("{name}: {e}")))?;
        }
        if self.torque_spec.min != -self.torque_spec.max {
            return Err(bad("torque range is not symmetric".into()));
        }
        if !(self.rated_torque > 0.0 && self.rated_torque <= self.peak_torque) {
            return Err(bad(format!(
                "rated {} Nm must be positive and not above peak {} Nm",
                self.rated_torque, self.peak_torque
            )));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ModelRecord {
    name: String,
    family: Family,
    position: [f64; 2],
    velocity: [f64; 2],
    torque: [f64; 2],
    kp: [f64; 2],
    kd: [f64; 2],
    rated_torque: f64,
    peak_torque: f64,
    max_temperature: f64,
}

#[derive(Deserialize)]
struct ModelFile {
    model: Vec<ModelRecord>,
}

/// Name-indexed set of model specs.
#[derive(Debug, Clone, Default)]
pub struct ModelTable {
    models: BTreeMap<String, ActuatorModelSpec>,
}

impl ModelTable {
    /// Parses a model table. Field widths are taken from each family's
    /// command layout so the table cannot disagree with the packing code.
    pub fn from_toml_str(text: &str) -> Result<Self, CodecError> {
        let file: ModelFile = toml::from_str(text).map_err(|e| CodecError::InvalidSpec(e.to_string()))?;
        let mut models = BTreeMap::new();
        for rec in file.model {
            let layout = rec.family.layout();
            let width = |f: Field| {
                layout
                    .command_width(f)
                    .ok_or_else(|| CodecError::InvalidSpec(format!("{} layout lacks {f:?}", rec.family)))
            };
            let q = |r: [f64; 2], f: Field| -> Result<QuantizationSpec, CodecError> {
                Ok(QuantizationSpec {
                    min: r[0],
                    max: r[1],
                    bits: width(f)?,
                })
            };
            let spec = ActuatorModelSpec {
                model_name: rec.name.clone(),
                family: rec.family,
                position_spec: q(rec.position, Field::Position)?,
                velocity_spec: q(rec.velocity, Field::Velocity)?,
                torque_spec: q(rec.torque, Field::Torque)?,
                kp_spec: q(rec.kp, Field::Kp)?,
                kd_spec: q(rec.kd, Field::Kd)?,
                rated_torque: rec.rated_torque,
                peak_torque: rec.peak_torque,
                max_temperature: rec.max_temperature,
            };
            spec.validate()?;
            if models.insert(rec.name.clone(), spec).is_some() {
                return Err(CodecError::InvalidSpec(format!("model {} listed twice", rec.name)));
            }
        }
        Ok(ModelTable { models })
    }

    pub fn shipped() -> &'static ModelTable {
        &SHIPPED
    }

    pub fn get(&self, name: &str) -> Result<&ActuatorModelSpec, CodecError> {
        self.models.get(name).ok_or_else(|| CodecError::UnknownModel {
            name: name.to_string(),
            known: self.names().map(str::to_string).collect(),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ActuatorModelSpec> {
        self.models.values()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

static SHIPPED: LazyLock<ModelTable> = LazyLock::new(|| {
    ModelTable::from_toml_str(include_str!("../../data/models.toml")).expect("shipped model table is valid")
});

/// Looks a model up in the shipped table.
pub fn lookup_model(name: &str) -> Result<&'static ActuatorModelSpec, CodecError> {
    SHIPPED.get(name)
}
