//! Per-family frame layouts, expressed as data.
//!
//! A layout says where each quantized field lives: in the 8-byte payload or in
//! the arbitration ID, at which bit offset and with which width. The packing
//! code in [`super::codec`] is generic over these tables, so supporting a new
//! family (or correcting a vendor layout) is a table edit. `docs/frame-layouts.md`
//! spells out every table bit by bit.

use serde::{Deserialize, Serialize};

use super::QuantizationSpec;

/// Actuator vendor family. Each family has exactly one layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    CubeMars,
    RobStride,
    CyberGear,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::CubeMars, Family::RobStride, Family::CyberGear];

    pub fn layout(self) -> &'static FamilyLayout {
        match self {
            Family::CubeMars => &CUBEMARS,
            Family::RobStride => &ROBSTRIDE,
            Family::CyberGear => &CYBERGEAR,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::CubeMars => "CubeMars",
            Family::RobStride => "RobStride",
            Family::CyberGear => "CyberGear",
        };
        f.write_str(s)
    }
}

/// Logical field carried by a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Position,
    Velocity,
    Kp,
    Kd,
    Torque,
    Temperature,
    /// Echo of the actuator's bus ID inside a feedback frame.
    CanId,
    FaultCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Payload,
    ArbitrationId,
}

/// How payload bit offsets are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitOrder {
    /// Offset 0 is the most significant bit of byte 0; multi-byte fields are
    /// big-endian.
    MsbFirst,
    /// Offset 0 is the least significant bit of byte 0; multi-byte fields are
    /// little-endian.
    LsbFirst,
}

/// Placement of one field. For the arbitration ID, `offset` is the right
/// shift of the field's least significant bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub field: Field,
    pub region: Region,
    pub offset: u8,
    pub width: u8,
}

const fn payload(field: Field, offset: u8, width: u8) -> Slot {
    Slot {
        field,
        region: Region::Payload,
        offset,
        width,
    }
}

const fn in_id(field: Field, offset: u8, width: u8) -> Slot {
    Slot {
        field,
        region: Region::ArbitrationId,
        offset,
        width,
    }
}

/// Arbitration-ID construction for frames the host sends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdTemplate {
    pub extended: bool,
    /// Constant bits (command type, etc).
    pub fixed: u32,
    /// Shift at which the target actuator's ID is inserted.
    pub can_id_shift: u8,
    /// Shift at which the host ID is inserted, if the family carries one.
    pub host_id_shift: Option<u8>,
}

impl IdTemplate {
    pub fn build(&self, can_id: u32, host_id: u32) -> u32 {
        let mut id = self.fixed | (can_id << self.can_id_shift);
        if let Some(shift) = self.host_id_shift {
            id |= host_id << shift;
        }
        id
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CommandLayout {
    pub id: IdTemplate,
    pub slots: &'static [Slot],
}

/// Recognition and field placement for actuator-to-host feedback frames.
#[derive(Debug, Clone, Copy)]
pub struct FeedbackLayout {
    pub extended: bool,
    /// A frame is feedback iff `(arbitration_id & match_mask) == match_value`.
    pub match_mask: u32,
    pub match_value: u32,
    /// Fixed bits the actuator sets when it builds a feedback ID.
    pub id_fixed: u32,
    pub host_id_shift: Option<u8>,
    pub slots: &'static [Slot],
    /// Temperature decode map. Decoded values are clamped to
    /// [`TEMPERATURE_ENVELOPE`].
    pub temperature: QuantizationSpec,
}

/// Control-plane frame: fixed ID type bits plus a fixed payload.
#[derive(Debug, Clone, Copy)]
pub struct SpecialLayout {
    pub id: IdTemplate,
    pub payload: [u8; 8],
}

#[derive(Debug, Clone, Copy)]
pub struct FamilyLayout {
    pub family: Family,
    pub bit_order: BitOrder,
    /// Bus ID the host uses where the family embeds one.
    pub host_id: u32,
    /// Highest valid actuator ID.
    pub max_can_id: u32,
    pub command: CommandLayout,
    pub feedback: FeedbackLayout,
    pub enable: SpecialLayout,
    pub disable: SpecialLayout,
    pub zero_position: SpecialLayout,
}

impl FamilyLayout {
    /// Width of a field in the command frame, if the family carries it there.
    pub fn command_width(&self, field: Field) -> Option<u8> {
        self.command.slots.iter().find(|s| s.field == field).map(|s| s.width)
    }

    pub fn feedback_width(&self, field: Field) -> Option<u8> {
        self.feedback.slots.iter().find(|s| s.field == field).map(|s| s.width)
    }
}

/// Physical envelope every decoded temperature is clamped into, in °C.
pub const TEMPERATURE_ENVELOPE: (f64, f64) = (-40.0, 215.0);

// Mini-cheetah style packing. Commands go to the actuator's 11-bit ID; replies
// come back on the host ID with the actuator ID echoed in byte 0.
const CUBEMARS_COMMAND: [Slot; 5] = [
    payload(Field::Position, 0, 16),
    payload(Field::Velocity, 16, 12),
    payload(Field::Kp, 28, 12),
    payload(Field::Kd, 40, 12),
    payload(Field::Torque, 52, 12),
];

const CUBEMARS_FEEDBACK: [Slot; 6] = [
    payload(Field::CanId, 0, 8),
    payload(Field::Position, 8, 16),
    payload(Field::Velocity, 24, 12),
    payload(Field::Torque, 36, 12),
    payload(Field::Temperature, 48, 8),
    payload(Field::FaultCode, 56, 8),
];

const fn cubemars_special(last: u8) -> SpecialLayout {
    SpecialLayout {
        id: IdTemplate {
            extended: false,
            fixed: 0,
            can_id_shift: 0,
            host_id_shift: None,
        },
        payload: [0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, last],
    }
}

pub static CUBEMARS: FamilyLayout = FamilyLayout {
    family: Family::CubeMars,
    bit_order: BitOrder::MsbFirst,
    host_id: 0,
    max_can_id: 0x7F,
    command: CommandLayout {
        id: IdTemplate {
            extended: false,
            fixed: 0,
            can_id_shift: 0,
            host_id_shift: None,
        },
        slots: &CUBEMARS_COMMAND,
    },
    feedback: FeedbackLayout {
        extended: false,
        match_mask: 0x7FF,
        match_value: 0,
        id_fixed: 0,
        host_id_shift: Some(0),
        slots: &CUBEMARS_FEEDBACK,
        // raw byte = °C + 40
        temperature: QuantizationSpec {
            min: -40.0,
            max: 215.0,
            bits: 8,
        },
    },
    enable: cubemars_special(0xFC),
    disable: cubemars_special(0xFD),
    zero_position: cubemars_special(0xFE),
};

// Extended 29-bit IDs: bits 24..29 carry the command type, bits 0..8 the
// target ID. Type 1 (MIT control) puts the feed-forward torque in bits 8..24;
// type 2 (feedback) carries the actuator ID in 8..16 and fault bits in 16..22.
const XIAOMI_COMMAND: [Slot; 5] = [
    in_id(Field::Torque, 8, 16),
    payload(Field::Position, 0, 16),
    payload(Field::Velocity, 16, 16),
    payload(Field::Kp, 32, 16),
    payload(Field::Kd, 48, 16),
];

const XIAOMI_FEEDBACK: [Slot; 6] = [
    in_id(Field::CanId, 8, 8),
    in_id(Field::FaultCode, 16, 6),
    payload(Field::Position, 0, 16),
    payload(Field::Velocity, 16, 16),
    payload(Field::Torque, 32, 16),
    payload(Field::Temperature, 48, 16),
];

const XIAOMI_HOST_ID: u32 = 0xFD;

const fn xiaomi_special(kind: u32, payload: [u8; 8]) -> SpecialLayout {
    SpecialLayout {
        id: IdTemplate {
            extended: true,
            fixed: kind << 24,
            can_id_shift: 0,
            host_id_shift: Some(8),
        },
        payload,
    }
}

const fn xiaomi_layout(family: Family) -> FamilyLayout {
    FamilyLayout {
        family,
        bit_order: BitOrder::MsbFirst,
        host_id: XIAOMI_HOST_ID,
        max_can_id: 0x7F,
        command: CommandLayout {
            id: IdTemplate {
                extended: true,
                fixed: 1 << 24,
                can_id_shift: 0,
                host_id_shift: None,
            },
            slots: &XIAOMI_COMMAND,
        },
        feedback: FeedbackLayout {
            extended: true,
            match_mask: 0x1F00_00FF,
            match_value: (2 << 24) | XIAOMI_HOST_ID,
            id_fixed: 2 << 24,
            host_id_shift: Some(0),
            slots: &XIAOMI_FEEDBACK,
            // raw = °C × 10
            temperature: QuantizationSpec {
                min: 0.0,
                max: 6553.5,
                bits: 16,
            },
        },
        enable: xiaomi_special(3, [0; 8]),
        disable: xiaomi_special(4, [0; 8]),
        zero_position: xiaomi_special(6, [1, 0, 0, 0, 0, 0, 0, 0]),
    }
}

pub static ROBSTRIDE: FamilyLayout = xiaomi_layout(Family::RobStride);
pub static CYBERGEAR: FamilyLayout = xiaomi_layout(Family::CyberGear);
