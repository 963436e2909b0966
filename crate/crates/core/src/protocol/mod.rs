//! Actuator wire protocol: quantization, model table and frame codecs.

mod codec;
pub mod layout;
mod models;
mod quant;

pub use codec::{
    decode_feedback, decode_inbound, describe_fault, encode_feedback, encode_mit_command, encode_special,
    feedback_source, FaultKind, InboundFrame, MitCommand, MitFeedback, SpecialFrameKind, WireFrame,
};
pub use layout::Family;
pub use models::{lookup_model, ActuatorModelSpec, ModelTable};
pub use quant::{float_to_uint, uint_to_float, QuantizationSpec};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("cannot quantize non-finite value {0}")]
    NonFinite(f64),
    #[error("code {code} does not fit in {bits} bits")]
    CodeOutOfRange { code: u32, bits: u8 },
    #[error("invalid quantization spec: {0}")]
    InvalidSpec(String),
    #[error("payload is {got} bytes, layout needs {expected}")]
    Framing { expected: usize, got: usize },
    #[error("unknown actuator model {name:?}; known models: {}", known.join(", "))]
    UnknownModel { name: String, known: Vec<String> },
    #[error("CAN ID {can_id} is not addressable on a {family} bus")]
    InvalidCanId { can_id: u32, family: Family },
    #[error("field {0:?} has no quantization spec")]
    UnsupportedField(layout::Field),
}
