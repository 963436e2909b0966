use std::sync::Arc;
use std::time::Duration;

use super::*;
use crate::bus::{FrameOrigin, LoggedFrame, VirtualBus, VirtualOptions};
use crate::protocol::{decode_inbound, lookup_model, InboundFrame};
use crate::simulation::{ActuatorParams, ReplyMode, VirtualFleet};

struct Rig {
    group: ActuatorGroup,
    fleet: VirtualFleet,
    bus: Arc<VirtualBus>,
    time: TimeSource,
}

fn rig_with(roster: &[(&str, u32)], safety: SafetyConfig) -> Rig {
    let time = TimeSource::virtual_time();
    let opts = VirtualOptions {
        log_frames: true,
        ..Default::default()
    };
    let bus = Arc::new(VirtualBus::open(&VirtualBus::unique_name("group"), opts, time.clone()).unwrap());
    let fleet = VirtualFleet::from_roster(roster, ActuatorParams::fixture(), 0.001, ReplyMode::PerCommand).unwrap();
    fleet.attach(&bus);
    let group = ActuatorGroup::with_bus(roster, bus.clone(), safety).unwrap();
    Rig {
        group,
        fleet,
        bus,
        time,
    }
}

fn rig(n: u32) -> Rig {
    let roster: Vec<(&str, u32)> = (1..=n).map(|id| ("AK80-9", id)).collect();
    rig_with(&roster, SafetyConfig::default())
}

fn enabled_rig(n: u32) -> Rig {
    let mut r = rig(n);
    assert!(r.group.enable_all().iter().all(|(_, res)| res.is_ok()));
    r
}

fn tick(r: &Rig) {
    r.time.advance(Duration::from_millis(5));
}

/// Host-originated frames in the log, decoded from the point of view of
/// actuator `can_id`.
fn host_frames_for(log: &[LoggedFrame], r: &Rig, can_id: u32) -> Vec<InboundFrame> {
    let model = r.group.model(can_id).unwrap().clone();
    log.iter()
        .filter(|l| matches!(l.origin, FrameOrigin::Handle(_)))
        .filter_map(|l| {
            decode_inbound(
                l.frame.arbitration_id,
                l.frame.is_extended,
                l.frame.payload(),
                &model,
                can_id,
            )
            .ok()
            .flatten()
        })
        .collect()
}

#[test]
fn construction() {
    let r = rig(2);
    assert_eq!(r.group.can_ids(), vec![1, 2]);
    assert!(!r.group.is_enabled(1).unwrap());

    let bus: Arc<dyn CanBus> = r.bus.clone();
    let dup = ActuatorGroup::with_bus(&[("AK80-9", 1), ("AK10-9 V2", 1)], bus.clone(), SafetyConfig::default());
    assert!(matches!(dup, Err(GroupError::DuplicateCanId(1))));
    let unknown = ActuatorGroup::with_bus(&[("AK99-1", 1)], bus.clone(), SafetyConfig::default());
    assert!(matches!(
        unknown,
        Err(GroupError::Codec(CodecError::UnknownModel { .. }))
    ));
    let bad_id = ActuatorGroup::with_bus(&[("AK80-9", 0)], bus.clone(), SafetyConfig::default());
    assert!(matches!(
        bad_id,
        Err(GroupError::Codec(CodecError::InvalidCanId { .. }))
    ));
    let bad_cfg = SafetyConfig {
        rms_window: 0.0,
        ..Default::default()
    };
    assert!(ActuatorGroup::with_bus(&[("AK80-9", 1)], bus, bad_cfg).is_err());
}

#[test]
fn empty_group_ops_are_noops() {
    let time = TimeSource::virtual_time();
    let bus = Arc::new(
        VirtualBus::open(
            &VirtualBus::unique_name("empty"),
            VirtualOptions {
                log_frames: true,
                ..Default::default()
            },
            time,
        )
        .unwrap(),
    );
    let mut g = ActuatorGroup::with_bus::<&str>(&[], bus.clone(), SafetyConfig::default()).unwrap();
    assert!(g.enable_all().is_empty());
    assert!(g.disable_all().is_empty());
    assert!(g.check_connection().is_empty());
    assert!(bus.frame_log().is_empty());
}

#[test]
fn enable_all_reports_missing_actuators() {
    let mut r = rig(2);
    let res = r.group.enable_all();
    assert!(res.iter().all(|(_, x)| x.is_ok()));
    assert!(r.group.is_enabled(1).unwrap() && r.group.is_enabled(2).unwrap());
    assert!(!r.group.query_state(1).unwrap().stale);

    let mut r = rig(2);
    r.fleet.set_connected(2, false).unwrap();
    let res = r.group.enable_all();
    assert!(res[0].1.is_ok());
    assert!(matches!(res[1].1, Err(GroupError::NotConnected(2))));
    assert!(r.group.is_enabled(1).unwrap());
    assert!(!r.group.is_enabled(2).unwrap());
}

#[test]
fn check_connection_matches_attachment() {
    let mut r = rig(3);
    assert_eq!(r.group.check_connection(), vec![(1, true), (2, true), (3, true)]);
    r.fleet.set_connected(2, false).unwrap();
    assert_eq!(r.group.check_connection(), vec![(1, true), (2, false), (3, true)]);
    for id in [1, 3] {
        r.fleet.set_connected(id, false).unwrap();
    }
    assert_eq!(r.group.check_connection(), vec![(1, false), (2, false), (3, false)]);
    // pinging a disabled actuator does not enable it
    r.fleet.set_connected(1, true).unwrap();
    r.group.check_connection();
    assert!(!r.fleet.snapshot(1).unwrap().enabled);
    assert!(!r.group.is_enabled(1).unwrap());
}

#[test]
fn disable_sends_zero_command_first() {
    let mut r = enabled_rig(2);
    for _ in 0..100 {
        r.group.command_torque(1, 3.0).unwrap();
        r.group.command_torque(2, -2.0).unwrap();
        tick(&r);
    }
    assert!(r.fleet.snapshot(1).unwrap().velocity > 0.0);
    r.bus.clear_log();
    let res = r.group.disable_all();
    assert!(res.iter().all(|(_, x)| x.is_ok()));
    let log = r.bus.frame_log();
    for id in [1, 2] {
        let frames = host_frames_for(&log, &r, id);
        assert_eq!(
            frames,
            vec![
                InboundFrame::Command(MitCommand::ZERO),
                InboundFrame::Special(SpecialFrameKind::Disable)
            ]
        );
        assert!(!r.group.is_enabled(id).unwrap());
        assert_eq!(r.fleet.snapshot(id).unwrap().applied_torque, 0.0);
    }

    r.bus.clear_log();
    assert!(r.group.disable_all().iter().all(|(_, x)| x.is_ok()));
    assert!(r.bus.frame_log().is_empty());
}

#[test]
fn disable_with_failing_bus_reports_each_actuator() {
    let mut r = enabled_rig(3);
    r.bus.set_send_failure(true);
    let res = r.group.disable_all();
    assert_eq!(res.len(), 3);
    assert!(res
        .iter()
        .all(|(_, x)| matches!(x, Err(GroupError::Bus(BusError::Io(_))))));
}

#[test]
fn torque_commands_and_safety() {
    let mut r = enabled_rig(1);
    let echo = r.group.command_torque(1, 0.0).unwrap();
    assert_eq!(echo.applied_torque(), 0.0);
    assert!(echo.events.is_empty());

    // rated 9, peak 18
    let echo = r.group.command_torque(1, 12.0).unwrap();
    assert_eq!(echo.applied_torque(), 12.0);
    assert_eq!(echo.events.len(), 1);
    assert_eq!(echo.events[0].kind, SafetyEventKind::RatedExceededWarning);

    let echo = r.group.command_torque(1, 54.0).unwrap();
    assert_eq!(echo.applied_torque(), 18.0);

    let mut r = rig_with(
        &[("AK80-9", 1)],
        SafetyConfig {
            saturate_to_rated: true,
            ..Default::default()
        },
    );
    r.group.enable_all();
    let rx = r.group.subscribe();
    let echo = r.group.command_torque(1, 18.0).unwrap();
    assert_eq!(echo.applied_torque(), 9.0);
    assert_eq!(rx.try_recv().unwrap().kind, SafetyEventKind::RatedExceededWarning);
}

#[test]
fn commands_to_disabled_or_unknown_never_reach_the_bus() {
    let mut r = rig(1);
    r.bus.clear_log();
    assert!(matches!(r.group.command_torque(1, 1.0), Err(GroupError::Disabled(1))));
    assert!(matches!(
        r.group.command_torque(7, 1.0),
        Err(GroupError::UnknownCanId(7))
    ));
    r.group.enable_all();
    r.bus.clear_log();
    let kp_max = r.group.model(1).unwrap().kp_spec.max;
    assert!(matches!(
        r.group.command_position(1, 0.0, kp_max + 1.0, 0.0),
        Err(GroupError::GainOutOfRange { gain: "kp", .. })
    ));
    assert!(matches!(
        r.group.command_velocity(1, 0.0, -0.5),
        Err(GroupError::GainOutOfRange { gain: "kd", .. })
    ));
    assert!(matches!(
        r.group.command_torque(1, f64::NAN),
        Err(GroupError::NonFinite { .. })
    ));
    assert!(r.bus.frame_log().is_empty());
}

/// Semi-implicit Euler oracle of the on-board PD law over the fixture rotor,
/// with the command held for each 5 ms control period.
fn pd_oracle(target: f64, kp: f64, kd: f64, vel_target: f64, secs: f64) -> (f64, f64) {
    let p = ActuatorParams::fixture();
    let (mut th, mut om) = (0.0f64, 0.0f64);
    let h = 0.001;
    for _ in 0..(secs / h).round() as usize {
        let tau = (kp * (target - th) + kd * (vel_target - om)).clamp(-18.0, 18.0);
        om += (tau - p.damping * om) / p.inertia * h;
        th += om * h;
    }
    (th, om)
}

#[test]
fn position_command_settles() {
    let mut r = enabled_rig(1);
    for _ in 0..400 {
        r.group.command_position(1, 1.0, 10.0, 1.0).unwrap();
        tick(&r);
    }
    let s = r.group.query_state(1).unwrap();
    let (oracle, _) = pd_oracle(1.0, 10.0, 1.0, 0.0, 2.0);
    assert!((s.position - 1.0).abs() < 0.05, "{}", s.position);
    assert!((s.position - oracle).abs() < 0.01, "{} vs {oracle}", s.position);
}

#[test]
fn position_hold_at_current_position() {
    let mut r = enabled_rig(1);
    r.fleet.set_state(1, 0.0, 0.0).unwrap();
    let echo = r.group.command_position(1, 0.0, 50.0, 0.0).unwrap();
    assert_eq!(echo.command.torque_ff, 0.0);
    tick(&r);
    r.group.command_position(1, 0.0, 50.0, 0.0).unwrap();
    assert!(r.fleet.snapshot(1).unwrap().applied_torque.abs() < 1e-9);
}

#[test]
fn velocity_command_reaches_balance() {
    let mut r = enabled_rig(1);
    for _ in 0..600 {
        r.group.command_velocity(1, 2.0, 1.0).unwrap();
        tick(&r);
    }
    let b = ActuatorParams::fixture().damping;
    let expected = 1.0 * 2.0 / (1.0 + b);
    let got = r.group.query_state(1).unwrap().velocity;
    assert!((got - expected).abs() < 0.1 * expected, "{got} vs {expected}");
    let (_, oracle) = pd_oracle(0.0, 0.0, 1.0, 2.0, 3.0);
    // the 12-bit velocity setpoint is off by up to half an LSB
    let lsb = r.group.model(1).unwrap().velocity_spec.lsb();
    assert!((got - oracle).abs() < lsb, "{got} vs {oracle}");
}

#[test]
fn velocity_damping_slows_spin() {
    let mut r = enabled_rig(1);
    r.fleet.set_state(1, 0.0, 10.0).unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..50 {
        r.group.command_velocity(1, 0.0, 0.5).unwrap();
        tick(&r);
        let w = r.fleet.snapshot(1).unwrap().velocity.abs();
        assert!(w < last);
        last = w;
    }

    let mut r = enabled_rig(1);
    let echo = r.group.command_velocity(1, 3.0, 0.0).unwrap();
    assert_eq!(
        echo.command,
        MitCommand {
            velocity: 3.0,
            ..MitCommand::ZERO
        }
    );
    assert_eq!(r.fleet.snapshot(1).unwrap().applied_torque, 0.0);
}

#[test]
fn impedance_reduces_to_specialised_ops() {
    fn wire(r: &Rig) -> Vec<CanFrame> {
        r.bus.frame_log().iter().map(|l| l.frame).collect()
    }
    let mut a = enabled_rig(1);
    let mut b = enabled_rig(1);
    a.bus.clear_log();
    b.bus.clear_log();
    a.group.command_torque(1, 2.5).unwrap();
    b.group.command_impedance(1, MitCommand::torque(2.5)).unwrap();
    a.group.command_position(1, 0.3, 20.0, 0.5).unwrap();
    b.group
        .command_impedance(
            1,
            MitCommand {
                position: 0.3,
                kp: 20.0,
                kd: 0.5,
                ..MitCommand::ZERO
            },
        )
        .unwrap();
    assert_eq!(wire(&a), wire(&b));
    assert_eq!(a.group.rms_torque(1).unwrap(), b.group.rms_torque(1).unwrap());

    let mut r = enabled_rig(1);
    r.bus.clear_log();
    r.group.command_impedance(1, MitCommand::ZERO).unwrap();
    let log = r.bus.frame_log();
    assert_eq!(
        log[0].frame.payload(),
        &[0x80, 0x00, 0x80, 0x00, 0x00, 0x00, 0x08, 0x00]
    );
    assert_eq!(r.fleet.snapshot(1).unwrap().velocity, 0.0);
}

#[test]
fn staleness_after_detach() {
    let mut r = enabled_rig(1);
    let rx = r.group.subscribe();
    r.group.command_torque(1, 0.0).unwrap();
    assert!(!r.group.query_state(1).unwrap().stale);
    r.fleet.set_connected(1, false).unwrap();
    for _ in 0..10 {
        tick(&r);
        r.group.command_torque(1, 0.0).unwrap();
        r.group.query_state(1).unwrap();
    }
    assert!(r.group.query_state(1).unwrap().stale);
    let stale: Vec<_> = rx
        .try_iter()
        .filter(|e| e.kind == SafetyEventKind::StaleFeedback)
        .collect();
    assert_eq!(stale.len(), 1);
    assert!(stale[0].value > r.group.safety_config().staleness_window);

    r.fleet.set_connected(1, true).unwrap();
    r.group.command_torque(1, 0.0).unwrap();
    assert!(!r.group.query_state(1).unwrap().stale);
}

#[test]
fn state_timestamps_are_monotone() {
    let mut r = enabled_rig(2);
    let mut last = [0.0f64; 2];
    for k in 0..10_000u32 {
        if k % 3 == 0 {
            r.time.advance(Duration::from_micros(700));
        }
        let id = 1 + k % 2;
        if k % 5 != 0 {
            r.group.command_torque(id, 0.1).unwrap();
        }
        let s = r.group.query_state(id).unwrap();
        assert!(s.timestamp >= last[(id - 1) as usize]);
        last[(id - 1) as usize] = s.timestamp;
    }
}

#[test]
fn rms_of_constant_and_autolimit() {
    let mut r = enabled_rig(1);
    assert_eq!(r.group.rms_torque(1).unwrap(), 0.0);
    for _ in 0..5000 {
        r.group.command_torque(1, 5.0).unwrap();
        tick(&r);
    }
    assert!((r.group.rms_torque(1).unwrap() - 5.0).abs() <= 1e-9);

    let mut r = rig_with(
        &[("AK80-9", 1)],
        SafetyConfig {
            thermal_autolimit: true,
            ..Default::default()
        },
    );
    r.group.enable_all();
    let rated = r.group.model(1).unwrap().rated_torque;
    let mut applied = Vec::new();
    for _ in 0..6000 {
        applied.push(r.group.command_torque(1, 1.5 * rated).unwrap().applied_torque());
        tick(&r);
    }
    assert_eq!(r.group.event_count(SafetyEventKind::ThermalLimitEngaged), 1);
    assert_eq!(r.group.event_count(SafetyEventKind::ThermalLimitReleased), 0);
    let first_clamped = applied.iter().position(|&t| t == rated).unwrap();
    assert!(applied[first_clamped..].iter().all(|&t| t == rated));
}

#[test]
fn event_stream_is_reproducible() {
    fn run() -> Vec<SafetyEvent> {
        let mut r = rig_with(
            &[("AK80-9", 1), ("AK60-6", 2)],
            SafetyConfig {
                thermal_autolimit: true,
                rms_window: 1.0,
                ..Default::default()
            },
        );
        let rx = r.group.subscribe();
        r.group.enable_all();
        for k in 0..1000 {
            let tau = 14.0 * ((k as f64) * 0.01).sin();
            r.group.command_torque(1, tau).unwrap();
            r.group.command_torque(2, tau * 0.5).unwrap();
            if k == 500 {
                r.fleet.set_connected(2, false).unwrap();
            }
            r.group.query_state(2).unwrap();
            tick(&r);
        }
        rx.try_iter().collect()
    }
    let a = run();
    assert!(!a.is_empty());
    assert_eq!(a, run());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn applied_torque_bounded(reqs in prop::collection::vec(-100.0f64..100.0, 1..60), sat: bool, auto: bool) {
            let mut r = rig_with(&[("AK80-9", 1)], SafetyConfig { saturate_to_rated: sat, thermal_autolimit: auto, ..Default::default() });
            r.group.enable_all();
            for q in reqs {
                let echo = r.group.command_torque(1, q).unwrap();
                let t = echo.applied_torque();
                prop_assert!(t.abs() <= 18.0);
                if sat || r.group.thermal_limit_engaged(1).unwrap() {
                    prop_assert!(t.abs() <= 9.0);
                }
                prop_assert!(r.fleet.snapshot(1).unwrap().applied_torque.abs() <= 18.0);
                tick(&r);
            }
        }
    }
}

#[test]
fn unanswered_enable_still_gets_disabled() {
    let mut r = rig(2);
    r.fleet.set_connected(2, false).unwrap();
    r.group.enable_all();
    assert!(!r.group.is_enabled(2).unwrap());
    r.bus.clear_log();
    r.group.disable_all();
    let to_two: Vec<_> = r
        .bus
        .frame_log()
        .into_iter()
        .filter(|l| matches!(l.origin, FrameOrigin::Handle(_)))
        .filter_map(|l| {
            let m = lookup_model("AK80-9").unwrap();
            decode_inbound(l.frame.arbitration_id, l.frame.is_extended, l.frame.payload(), m, 2).unwrap()
        })
        .collect();
    assert_eq!(
        to_two,
        vec![
            InboundFrame::Command(MitCommand::ZERO),
            InboundFrame::Special(SpecialFrameKind::Disable)
        ]
    );
}
