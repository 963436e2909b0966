//! Linear quantization between physical quantities and unsigned wire codes.

use serde::{Deserialize, Serialize};

use super::CodecError;

/// Physical range `[min, max]` mapped linearly onto `[0, 2^bits - 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizationSpec {
    pub min: f64,
    pub max: f64,
    pub bits: u8,
}

impl QuantizationSpec {
    pub fn new(min: f64, max: f64, bits: u8) -> Result<Self, CodecError> {
        let spec = QuantizationSpec { min, max, bits };
        spec.validate()?;
        Ok(spec)
    }

    /// Symmetric range `[-limit, limit]`.
    pub fn symmetric(limit: f64, bits: u8) -> Result<Self, CodecError> {
        Self::new(-limit, limit, bits)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min >= self.max {
            return Err(CodecError::InvalidSpec(format!(
                "range [{}, {}] is empty or non-finite",
                self.min, self.max
            )));
        }
        if !(1..=16).contains(&self.bits) {
            return Err(CodecError::InvalidSpec(format!(
                "width {} outside 1..=16 bits",
                self.bits
            )));
        }
        Ok(())
    }

    /// Largest representable code, `2^bits - 1`.
    #[inline]
    pub fn max_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Physical size of one code step.
    #[inline]
    pub fn lsb(&self) -> f64 {
        (self.max - self.min) / f64::from(self.max_code())
    }

    #[inline]
    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }
}

/// Clamps `value` into the spec's range and maps it to the nearest code.
/// Ties round away from zero.
pub fn float_to_uint(value: f64, spec: &QuantizationSpec) -> Result<u32, CodecError> {
    if !value.is_finite() {
        return Err(CodecError::NonFinite(value));
    }
    let x = spec.clamp(value);
    let scaled = (x - spec.min) / (spec.max - spec.min) * f64::from(spec.max_code());
    // f64::round is ties-away-from-zero; scaled is never negative here.
    let code = scaled.round() as u32;
    Ok(code.min(spec.max_code()))
}

/// Maps a code back to its physical value. When the range straddles zero,
/// the code that zero encodes to decodes to exactly zero, so an all-zero
/// command stays inert after a round trip.
pub fn uint_to_float(code: u32, spec: &QuantizationSpec) -> Result<f64, CodecError> {
    if code > spec.max_code() {
        return Err(CodecError::CodeOutOfRange { code, bits: spec.bits });
    }
    if code == spec.max_code() {
        return Ok(spec.max);
    }
    if spec.min < 0.0 && spec.max > 0.0 && code > 0 && code == zero_code(spec) {
        return Ok(0.0);
    }
    Ok(spec.min + f64::from(code) * (spec.max - spec.min) / f64::from(spec.max_code()))
}

fn zero_code(spec: &QuantizationSpec) -> u32 {
    (-spec.min / (spec.max - spec.min) * f64::from(spec.max_code())).round() as u32
}
