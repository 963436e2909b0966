//! Layout-driven packing of MIT commands, feedback and control-plane frames.

use serde::{Deserialize, Serialize};

use super::layout::{BitOrder, Family, FamilyLayout, Field, Region, Slot, TEMPERATURE_ENVELOPE};
use super::{float_to_uint, uint_to_float, ActuatorModelSpec, CodecError};

/// Five-field impedance command in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MitCommand {
    pub position: f64,
    pub velocity: f64,
    pub kp: f64,
    pub kd: f64,
    pub torque_ff: f64,
}

impl MitCommand {
    pub const ZERO: MitCommand = MitCommand {
        position: 0.0,
        velocity: 0.0,
        kp: 0.0,
        kd: 0.0,
        torque_ff: 0.0,
    };

    pub fn torque(torque_ff: f64) -> Self {
        MitCommand {
            torque_ff,
            ..Self::ZERO
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.position, self.velocity, self.kp, self.kd, self.torque_ff]
            .iter()
            .all(|v| v.is_finite())
    }

    fn get(&self, field: Field) -> f64 {
        match field {
            Field::Position => self.position,
            Field::Velocity => self.velocity,
            Field::Kp => self.kp,
            Field::Kd => self.kd,
            Field::Torque => self.torque_ff,
            _ => 0.0,
        }
    }

    fn set(&mut self, field: Field, v: f64) {
        match field {
            Field::Position => self.position = v,
            Field::Velocity => self.velocity = v,
            Field::Kp => self.kp = v,
            Field::Kd => self.kd = v,
            Field::Torque => self.torque_ff = v,
            _ => {}
        }
    }
}

/// Decoded actuator state report.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MitFeedback {
    pub can_id: u32,
    pub position: f64,
    pub velocity: f64,
    pub torque: f64,
    pub temperature: f64,
    pub fault_code: u8,
}

/// Control-plane frame kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpecialFrameKind {
    Enable,
    Disable,
    ZeroPosition,
}

impl SpecialFrameKind {
    pub const ALL: [SpecialFrameKind; 3] = [
        SpecialFrameKind::Enable,
        SpecialFrameKind::Disable,
        SpecialFrameKind::ZeroPosition,
    ];
}

/// Known fault values. Codes outside this list pass through as `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    None,
    MotorOverTemperature,
    OverCurrent,
    OverVoltage,
    UnderVoltage,
    EncoderFault,
    DriverOverTemperature,
    HallFault,
    Uncalibrated,
    Other(u8),
}

/// Interprets a raw fault code. CubeMars reports an enumerated byte; the
/// RobStride/CyberGear ID carries a bit field, of which the lowest set bit is
/// reported.
pub fn describe_fault(family: Family, code: u8) -> FaultKind {
    match family {
        Family::CubeMars => match code {
            0 => FaultKind::None,
            1 => FaultKind::MotorOverTemperature,
            2 => FaultKind::OverCurrent,
            3 => FaultKind::OverVoltage,
            4 => FaultKind::UnderVoltage,
            5 => FaultKind::EncoderFault,
            6 => FaultKind::DriverOverTemperature,
            c => FaultKind::Other(c),
        },
        Family::RobStride | Family::CyberGear => {
            if code == 0 {
                return FaultKind::None;
            }
            match code.trailing_zeros() {
                0 => FaultKind::UnderVoltage,
                1 => FaultKind::OverCurrent,
                2 => FaultKind::MotorOverTemperature,
                3 => FaultKind::EncoderFault,
                4 => FaultKind::HallFault,
                5 => FaultKind::Uncalibrated,
                _ => FaultKind::Other(code),
            }
        }
    }
}

/// Arbitration ID plus a full 8-byte payload, as produced by the encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WireFrame {
    pub arbitration_id: u32,
    pub extended: bool,
    pub data: [u8; 8],
}

/// What an actuator-side decoder sees in a host frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InboundFrame {
    Special(SpecialFrameKind),
    Command(MitCommand),
}

fn field_mask(width: u8) -> u64 {
    (1u64 << width) - 1
}

fn put_payload(data: &mut [u8; 8], order: BitOrder, slot: &Slot, code: u64) {
    let mut word = match order {
        BitOrder::MsbFirst => u64::from_be_bytes(*data),
        BitOrder::LsbFirst => u64::from_le_bytes(*data),
    };
    let shift = match order {
        BitOrder::MsbFirst => 64 - u32::from(slot.offset) - u32::from(slot.width),
        BitOrder::LsbFirst => u32::from(slot.offset),
    };
    let mask = field_mask(slot.width) << shift;
    word = (word & !mask) | ((code << shift) & mask);
    *data = match order {
        BitOrder::MsbFirst => word.to_be_bytes(),
        BitOrder::LsbFirst => word.to_le_bytes(),
    };
}

fn get_payload(data: &[u8; 8], order: BitOrder, slot: &Slot) -> u64 {
    let (word, shift) = match order {
        BitOrder::MsbFirst => (
            u64::from_be_bytes(*data),
            64 - u32::from(slot.offset) - u32::from(slot.width),
        ),
        BitOrder::LsbFirst => (u64::from_le_bytes(*data), u32::from(slot.offset)),
    };
    (word >> shift) & field_mask(slot.width)
}

fn get_id(id: u32, slot: &Slot) -> u64 {
    (u64::from(id) >> slot.offset) & field_mask(slot.width)
}

fn put_id(id: &mut u32, slot: &Slot, code: u64) {
    let mask = field_mask(slot.width) << slot.offset;
    let cur = u64::from(*id);
    *id = ((cur & !mask) | ((code << slot.offset) & mask)) as u32;
}

fn read_slot(layout: &FamilyLayout, slot: &Slot, id: u32, data: &[u8; 8]) -> u64 {
    match slot.region {
        Region::Payload => get_payload(data, layout.bit_order, slot),
        Region::ArbitrationId => get_id(id, slot),
    }
}

fn write_slot(layout: &FamilyLayout, slot: &Slot, id: &mut u32, data: &mut [u8; 8], code: u64) {
    match slot.region {
        Region::Payload => put_payload(data, layout.bit_order, slot, code),
        Region::ArbitrationId => put_id(id, slot, code),
    }
}

fn payload8(payload: &[u8]) -> Result<[u8; 8], CodecError> {
    payload.try_into().map_err(|_| CodecError::Framing {
        expected: 8,
        got: payload.len(),
    })
}

fn check_can_id(layout: &FamilyLayout, can_id: u32) -> Result<(), CodecError> {
    if can_id == 0 || can_id > layout.max_can_id || can_id == layout.host_id {
        return Err(CodecError::InvalidCanId {
            can_id,
            family: layout.family,
        });
    }
    Ok(())
}

/// Packs a full MIT command for actuator `can_id`. Every field is clamped to
/// the model's range before quantization.
pub fn encode_mit_command(cmd: &MitCommand, model: &ActuatorModelSpec, can_id: u32) -> Result<WireFrame, CodecError> {
    let layout = model.family.layout();
    check_can_id(layout, can_id)?;
    let mut id = layout.command.id.build(can_id, layout.host_id);
    let mut data = [0u8; 8];
    for slot in layout.command.slots {
        let spec = model
            .spec_for(slot.field)
            .ok_or(CodecError::UnsupportedField(slot.field))?;
        let code = float_to_uint(cmd.get(slot.field), spec)?;
        write_slot(layout, slot, &mut id, &mut data, u64::from(code));
    }
    Ok(WireFrame {
        arbitration_id: id,
        extended: layout.command.id.extended,
        data,
    })
}

/// Actuator-side decode of a host frame addressed to `can_id`. Returns
/// `Ok(None)` for frames addressed elsewhere or not recognised.
pub fn decode_inbound(
    arbitration_id: u32,
    extended: bool,
    payload: &[u8],
    model: &ActuatorModelSpec,
    can_id: u32,
) -> Result<Option<InboundFrame>, CodecError> {
    let layout = model.family.layout();
    for kind in SpecialFrameKind::ALL {
        let s = special_layout(layout, kind);
        if s.id.extended == extended && s.id.build(can_id, layout.host_id) == arbitration_id && payload == s.payload {
            return Ok(Some(InboundFrame::Special(kind)));
        }
    }
    let cmd_id = &layout.command.id;
    if cmd_id.extended != extended {
        return Ok(None);
    }
    // Mask out bits that carry fields so only addressing bits are compared.
    let mut field_bits = 0u32;
    for slot in layout.command.slots {
        if slot.region == Region::ArbitrationId {
            field_bits |= (field_mask(slot.width) << slot.offset) as u32;
        }
    }
    if arbitration_id & !field_bits != cmd_id.build(can_id, layout.host_id) {
        return Ok(None);
    }
    let data = payload8(payload)?;
    let mut cmd = MitCommand::ZERO;
    for slot in layout.command.slots {
        let spec = model
            .spec_for(slot.field)
            .ok_or(CodecError::UnsupportedField(slot.field))?;
        let code = read_slot(layout, slot, arbitration_id, &data) as u32;
        cmd.set(slot.field, uint_to_float(code, spec)?);
    }
    Ok(Some(InboundFrame::Command(cmd)))
}

/// Actuator-side packing of a state report.
pub fn encode_feedback(fb: &MitFeedback, model: &ActuatorModelSpec) -> Result<WireFrame, CodecError> {
    let layout = model.family.layout();
    let fl = &layout.feedback;
    let mut id = fl.id_fixed;
    if let Some(shift) = fl.host_id_shift {
        id |= layout.host_id << shift;
    }
    let mut data = [0u8; 8];
    for slot in fl.slots {
        let code = match slot.field {
            Field::CanId => u64::from(fb.can_id) & field_mask(slot.width),
            Field::FaultCode => u64::from(fb.fault_code) & field_mask(slot.width),
            f => {
                let spec = model.spec_for(f).ok_or(CodecError::UnsupportedField(f))?;
                let v = match f {
                    Field::Position => fb.position,
                    Field::Velocity => fb.velocity,
                    Field::Torque => fb.torque,
                    Field::Temperature => fb.temperature,
                    _ => 0.0,
                };
                u64::from(float_to_uint(v, spec)?)
            }
        };
        write_slot(layout, slot, &mut id, &mut data, code);
    }
    Ok(WireFrame {
        arbitration_id: id,
        extended: fl.extended,
        data,
    })
}

/// Returns the reporting actuator's ID if the frame is a feedback frame of
/// this family.
pub fn feedback_source(arbitration_id: u32, extended: bool, payload: &[u8], family: Family) -> Option<u32> {
    let layout = family.layout();
    let fl = &layout.feedback;
    if fl.extended != extended || arbitration_id & fl.match_mask != fl.match_value {
        return None;
    }
    let data: [u8; 8] = payload.try_into().ok()?;
    let slot = fl.slots.iter().find(|s| s.field == Field::CanId)?;
    Some(read_slot(layout, slot, arbitration_id, &data) as u32)
}

/// Unpacks a feedback frame. Payloads must be exactly 8 bytes.
pub fn decode_feedback(
    arbitration_id: u32,
    payload: &[u8],
    model: &ActuatorModelSpec,
) -> Result<MitFeedback, CodecError> {
    let layout = model.family.layout();
    let data = payload8(payload)?;
    let mut fb = MitFeedback::default();
    for slot in layout.feedback.slots {
        let code = read_slot(layout, slot, arbitration_id, &data);
        match slot.field {
            Field::CanId => fb.can_id = code as u32,
            Field::FaultCode => fb.fault_code = code as u8,
            f => {
                let spec = model.spec_for(f).ok_or(CodecError::UnsupportedField(f))?;
                let v = uint_to_float(code as u32, spec)?;
                match f {
                    Field::Position => fb.position = v,
                    Field::Velocity => fb.velocity = v,
                    Field::Torque => fb.torque = v,
                    Field::Temperature => fb.temperature = v.clamp(TEMPERATURE_ENVELOPE.0, TEMPERATURE_ENVELOPE.1),
                    _ => {}
                }
            }
        }
    }
    Ok(fb)
}

fn special_layout(layout: &FamilyLayout, kind: SpecialFrameKind) -> &super::layout::SpecialLayout {
    match kind {
        SpecialFrameKind::Enable => &layout.enable,
        SpecialFrameKind::Disable => &layout.disable,
        SpecialFrameKind::ZeroPosition => &layout.zero_position,
    }
}

/// The family's control-plane frame for actuator `can_id`.
pub fn encode_special(kind: SpecialFrameKind, family: Family, can_id: u32) -> WireFrame {
    let layout = family.layout();
    let s = special_layout(layout, kind);
    WireFrame {
        arbitration_id: s.id.build(can_id, layout.host_id),
        extended: s.id.extended,
        data: s.payload,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{lookup_model, ModelTable};
    use proptest::prelude::*;

    fn ak80() -> &'static ActuatorModelSpec {
        lookup_model("AK80-9").unwrap()
    }

    #[test]
    fn minimum_command_packs_all_zero_codes() {
        for m in ModelTable::shipped().iter() {
            let cmd = MitCommand {
                position: m.position_spec.min,
                velocity: m.velocity_spec.min,
                kp: m.kp_spec.min,
                kd: m.kd_spec.min,
                torque_ff: m.torque_spec.min,
            };
            let f = encode_mit_command(&cmd, m, 3).unwrap();
            assert_eq!(f.data, [0; 8], "{}", m.model_name);
            let base = m.family.layout().command.id.build(3, m.family.layout().host_id);
            assert_eq!(f.arbitration_id, base, "{}", m.model_name);
        }
    }

    #[test]
    fn cubemars_zero_command_bytes() {
        // pos 0x8000, vel 0x800, kp 0, kd 0, torque 0x800
        let f = encode_mit_command(&MitCommand::ZERO, ak80(), 1).unwrap();
        assert_eq!(f.data, [0x80, 0x00, 0x80, 0x00, 0x00, 0x00, 0x08, 0x00]);
        assert_eq!(f.arbitration_id, 1);
        assert!(!f.extended);
    }

    #[test]
    fn zero_command_torque_is_mid_code() {
        for m in ModelTable::shipped().iter() {
            let f = encode_mit_command(&MitCommand::ZERO, m, 1).unwrap();
            let l = m.family.layout();
            let slot = l.command.slots.iter().find(|s| s.field == Field::Torque).unwrap();
            let code = read_slot(l, slot, f.arbitration_id, &f.data);
            assert_eq!(code, 1 << (m.torque_spec.bits - 1), "{}", m.model_name);
        }
    }

    #[test]
    fn robstride_torque_rides_in_the_id() {
        let m = lookup_model("RobStride 01").unwrap();
        let f = encode_mit_command(&MitCommand::torque(m.torque_spec.max), m, 0x7F).unwrap();
        assert!(f.extended);
        assert_eq!(f.arbitration_id, (1 << 24) | (0xFFFF << 8) | 0x7F);
    }

    #[test]
    fn all_zero_feedback_decodes_to_minimums() {
        let m = ak80();
        let fb = decode_feedback(0, &[0; 8], m).unwrap();
        assert_eq!(fb.position, m.position_spec.min);
        assert_eq!(fb.velocity, m.velocity_spec.min);
        assert_eq!(fb.torque, m.torque_spec.min);
        assert_eq!(fb.temperature, -40.0);
    }

    #[test]
    fn max_temperature_code_hits_envelope_top() {
        let m = ak80();
        let data = [0, 0, 0, 0, 0, 0, 0xFF, 0];
        assert_eq!(decode_feedback(0, &data, m).unwrap().temperature, 215.0);
        let r = lookup_model("CyberGear").unwrap();
        let data = [0, 0, 0, 0, 0, 0, 0xFF, 0xFF];
        let id = (2 << 24) | (1 << 8) | 0xFD;
        assert_eq!(decode_feedback(id, &data, r).unwrap().temperature, 215.0);
    }

    #[test]
    fn truncated_feedback_is_framing_error() {
        assert!(matches!(
            decode_feedback(0, &[0; 7], ak80()),
            Err(CodecError::Framing { expected: 8, got: 7 })
        ));
    }

    #[test]
    fn specials_are_distinct_and_deterministic() {
        for fam in Family::ALL {
            let frames: Vec<_> = SpecialFrameKind::ALL
                .iter()
                .map(|k| encode_special(*k, fam, 5))
                .collect();
            for i in 0..frames.len() {
                for j in i + 1..frames.len() {
                    assert_ne!(frames[i], frames[j], "{fam}");
                }
            }
            assert_eq!(
                encode_special(SpecialFrameKind::Enable, fam, 5),
                encode_special(SpecialFrameKind::Enable, fam, 5)
            );
        }
        let en = encode_special(SpecialFrameKind::Enable, Family::CubeMars, 2);
        assert_eq!(en.data, [0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFC]);
        assert_eq!(en.arbitration_id, 2);
    }

    #[test]
    fn inbound_recognises_specials_and_ignores_other_ids() {
        for m in ModelTable::shipped().iter() {
            for kind in SpecialFrameKind::ALL {
                let f = encode_special(kind, m.family, 4);
                assert_eq!(
                    decode_inbound(f.arbitration_id, f.extended, &f.data, m, 4).unwrap(),
                    Some(InboundFrame::Special(kind))
                );
                assert_eq!(
                    decode_inbound(f.arbitration_id, f.extended, &f.data, m, 5).unwrap(),
                    None
                );
            }
            let f = encode_mit_command(&MitCommand::torque(1.0), m, 4).unwrap();
            assert!(matches!(
                decode_inbound(f.arbitration_id, f.extended, &f.data, m, 4).unwrap(),
                Some(InboundFrame::Command(_))
            ));
            assert_eq!(
                decode_inbound(f.arbitration_id, f.extended, &f.data, m, 6).unwrap(),
                None
            );
        }
    }

    #[test]
    fn feedback_is_not_mistaken_for_commands() {
        for m in ModelTable::shipped().iter() {
            let fb = MitFeedback {
                can_id: 9,
                ..Default::default()
            };
            let f = encode_feedback(&fb, m).unwrap();
            assert_eq!(
                feedback_source(f.arbitration_id, f.extended, &f.data, m.family),
                Some(9)
            );
            let c = encode_mit_command(&MitCommand::ZERO, m, 9).unwrap();
            assert_eq!(feedback_source(c.arbitration_id, c.extended, &c.data, m.family), None);
            for kind in SpecialFrameKind::ALL {
                let s = encode_special(kind, m.family, 9);
                assert_eq!(feedback_source(s.arbitration_id, s.extended, &s.data, m.family), None);
            }
        }
    }

    #[test]
    fn invalid_can_ids_rejected() {
        assert!(encode_mit_command(&MitCommand::ZERO, ak80(), 0).is_err());
        assert!(encode_mit_command(&MitCommand::ZERO, ak80(), 0x80).is_err());
    }

    #[test]
    fn fault_descriptions() {
        assert_eq!(describe_fault(Family::CubeMars, 0), FaultKind::None);
        assert_eq!(describe_fault(Family::CubeMars, 1), FaultKind::MotorOverTemperature);
        assert_eq!(describe_fault(Family::CubeMars, 42), FaultKind::Other(42));
        assert_eq!(
            describe_fault(Family::RobStride, 0b100),
            FaultKind::MotorOverTemperature
        );
        assert_eq!(describe_fault(Family::CyberGear, 0), FaultKind::None);
    }

    fn command_strategy() -> impl Strategy<Value = MitCommand> {
        (
            -15.0f64..15.0,
            -60.0f64..60.0,
            -10.0f64..600.0,
            -1.0f64..6.0,
            -130.0f64..130.0,
        )
            .prop_map(|(position, velocity, kp, kd, torque_ff)| MitCommand {
                position,
                velocity,
                kp,
                kd,
                torque_ff,
            })
    }

    proptest! {
        #[test]
        fn command_round_trip_within_one_lsb(cmd in command_strategy(), idx in 0usize..10) {
            let m = ModelTable::shipped().iter().nth(idx % ModelTable::shipped().len()).unwrap();
            let f = encode_mit_command(&cmd, m, 7).unwrap();
            let back = match decode_inbound(f.arbitration_id, f.extended, &f.data, m, 7).unwrap() {
                Some(InboundFrame::Command(c)) => c,
                other => panic!("{other:?}"),
            };
            for (name, spec) in m.command_specs() {
                let (a, b) = match name {
                    "position" => (cmd.position, back.position),
                    "velocity" => (cmd.velocity, back.velocity),
                    "kp" => (cmd.kp, back.kp),
                    "kd" => (cmd.kd, back.kd),
                    _ => (cmd.torque_ff, back.torque_ff),
                };
                prop_assert!((spec.clamp(a) - b).abs() <= spec.lsb(), "{name}: {a} vs {b}");
            }
        }

        #[test]
        fn feedback_round_trip(pos in -12.0f64..12.0, vel in -10.0f64..10.0, tq in -10.0f64..10.0,
                               temp in 20.0f64..90.0, id in 1u32..0x7F, fault in 0u8..4) {
            for m in ModelTable::shipped().iter() {
                let fb = MitFeedback { can_id: id, position: pos, velocity: vel, torque: tq, temperature: temp, fault_code: fault };
                let f = encode_feedback(&fb, m).unwrap();
                let d = decode_feedback(f.arbitration_id, &f.data, m).unwrap();
                prop_assert_eq!(d.can_id, id);
                prop_assert_eq!(d.fault_code, fault);
                prop_assert!((d.position - pos).abs() <= m.position_spec.lsb());
                prop_assert!((d.velocity - vel).abs() <= m.velocity_spec.lsb());
                prop_assert!((d.torque - tq).abs() <= m.torque_spec.lsb());
                prop_assert!((d.temperature - temp).abs() <= m.family.layout().feedback.temperature.lsb());
            }
        }

        #[test]
        fn encoding_is_deterministic(cmd in command_strategy()) {
            let m = lookup_model("AK10-9 V2").unwrap();
            prop_assert_eq!(encode_mit_command(&cmd, m, 2).unwrap(), encode_mit_command(&cmd, m, 2).unwrap());
        }
    }
}
