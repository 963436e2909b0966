#![allow(dead_code)]

use std::collections::BTreeMap;

use qddrive::bus::{FrameOrigin, LoggedFrame};
use qddrive::protocol::{decode_inbound, ActuatorModelSpec, InboundFrame, MitCommand, SpecialFrameKind};

/// Host frames addressed to each actuator, in bus order.
pub fn per_actuator(log: &[LoggedFrame], roster: &[(ActuatorModelSpec, u32)]) -> BTreeMap<u32, Vec<InboundFrame>> {
    let mut out: BTreeMap<u32, Vec<InboundFrame>> = roster.iter().map(|(_, id)| (*id, Vec::new())).collect();
    let mut sorted: Vec<&LoggedFrame> = log.iter().collect();
    sorted.sort_by_key(|l| l.sequence);
    for l in sorted {
        if !matches!(l.origin, FrameOrigin::Handle(_)) {
            continue;
        }
        for (model, id) in roster {
            let f = &l.frame;
            if let Ok(Some(inb)) = decode_inbound(f.arbitration_id, f.is_extended, f.payload(), model, *id) {
                out.get_mut(id).unwrap().push(inb);
            }
        }
    }
    out
}

/// Disable frames sent to an actuator that had been sent Enable, where the
/// actuator's previous frame was not an all-zero command.
pub fn disable_violations(log: &[LoggedFrame], roster: &[(ActuatorModelSpec, u32)]) -> Vec<String> {
    let mut bad = Vec::new();
    for (id, frames) in per_actuator(log, roster) {
        let mut enabled = false;
        for (k, f) in frames.iter().enumerate() {
            match f {
                InboundFrame::Special(SpecialFrameKind::Enable) => enabled = true,
                InboundFrame::Special(SpecialFrameKind::Disable) => {
                    let prev = k.checked_sub(1).map(|j| frames[j]);
                    if enabled && prev != Some(InboundFrame::Command(MitCommand::ZERO)) {
                        bad.push(format!("actuator {id}: frame {k} Disable preceded by {prev:?}"));
                    }
                    enabled = false;
                }
                _ => {}
            }
        }
    }
    bad
}

/// Actuators whose last Enable/Disable frame was Enable.
pub fn left_enabled(log: &[LoggedFrame], roster: &[(ActuatorModelSpec, u32)]) -> Vec<u32> {
    per_actuator(log, roster)
        .into_iter()
        .filter(|(_, frames)| {
            frames
                .iter()
                .rev()
                .find_map(|f| match f {
                    InboundFrame::Special(SpecialFrameKind::Enable) => Some(true),
                    InboundFrame::Special(SpecialFrameKind::Disable) => Some(false),
                    _ => None,
                })
                .unwrap_or(false)
        })
        .map(|(id, _)| id)
        .collect()
}

/// Frame log ends with zero command then Disable for every actuator.
pub fn ends_with_zero_then_disable(log: &[LoggedFrame], roster: &[(ActuatorModelSpec, u32)]) -> bool {
    per_actuator(log, roster).values().all(|frames| {
        frames.len() >= 2
            && frames[frames.len() - 2] == InboundFrame::Command(MitCommand::ZERO)
            && frames[frames.len() - 1] == InboundFrame::Special(SpecialFrameKind::Disable)
    })
}
