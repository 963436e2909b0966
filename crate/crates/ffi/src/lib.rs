//! C ABI over the actuator runtime.
//!
//! Every function returns a [`QddStatus`]. On failure the message is kept
//! per thread and can be read with [`qdd_last_error`]. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use qddrive::actuation::{ActuatorGroup, GroupError, SafetyConfig};
use qddrive::bus::{self, Backend, BusConfig, ResponderId, VirtualBus};
use qddrive::cli::RosterEntry;
use qddrive::protocol::{decode_inbound, encode_mit_command, lookup_model, InboundFrame, MitCommand};
use qddrive::simulation::{ActuatorParams, ReplyMode, VirtualFleet};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QddStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    UnknownActuator = 3,
    Disabled = 4,
    NotConnected = 5,
    LimitViolation = 6,
    Codec = 7,
    Bus = 8,
    Panic = 9,
}

/// MIT-mode command fields in physical units.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QddMitCommand {
    pub position: f64,
    pub velocity: f64,
    pub kp: f64,
    pub kd: f64,
    pub torque_ff: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QddState {
    pub position: f64,
    pub velocity: f64,
    pub torque: f64,
    pub temperature: f64,
    /// Bus time of the feedback, seconds.
    pub timestamp: f64,
    pub fault_code: u8,
    pub stale: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QddFrame {
    pub arbitration_id: u32,
    pub extended: bool,
    pub data: [u8; 8],
}

/// Actuators sharing one bus.
pub struct QddGroup {
    group: ActuatorGroup,
}

/// Simulated actuators answering on a virtual channel.
pub struct QddFleet {
    fleet: VirtualFleet,
    bus: VirtualBus,
    responder: Option<ResponderId>,
}

impl Drop for QddFleet {
    fn drop(&mut self) {
        if let Some(id) = self.responder.take() {
            self.bus.detach_responder(id);
        }
    }
}

struct Failure(QddStatus, String);

impl From<GroupError> for Failure {
    fn from(e: GroupError) -> Self {
        let status = match e {
            GroupError::DuplicateCanId(_) | GroupError::InvalidConfig(_) => QddStatus::InvalidArgument,
            GroupError::UnknownCanId(_) => QddStatus::UnknownActuator,
            GroupError::Disabled(_) => QddStatus::Disabled,
            GroupError::NotConnected(_) => QddStatus::NotConnected,
            GroupError::GainOutOfRange { .. } | GroupError::NonFinite { .. } => QddStatus::LimitViolation,
            GroupError::Codec(_) => QddStatus::Codec,
            GroupError::Bus(_) => QddStatus::Bus,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(QddStatus::InvalidArgument, msg.into())
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QddStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (QddStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(p) => {
            let m = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (QddStatus::Panic, m)
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(QddStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(QddStatus::NullArgument, format!("{what} is null")))
}

unsafe fn group<'a>(g: *mut QddGroup) -> Result<&'a mut ActuatorGroup, Failure> {
    Ok(&mut out(g, "group")?.group)
}

fn roster(text: &str) -> Result<Vec<(String, u32)>, Failure> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<RosterEntry>()
                .map(|e| (e.model, e.can_id))
                .map_err(invalid)
        })
        .collect()
}

impl From<QddMitCommand> for MitCommand {
    fn from(c: QddMitCommand) -> Self {
        MitCommand {
            position: c.position,
            velocity: c.velocity,
            kp: c.kp,
            kd: c.kd,
            torque_ff: c.torque_ff,
        }
    }
}

impl From<MitCommand> for QddMitCommand {
    fn from(c: MitCommand) -> Self {
        QddMitCommand {
            position: c.position,
            velocity: c.velocity,
            kp: c.kp,
            kd: c.kd,
            torque_ff: c.torque_ff,
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qdd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// without the terminator; 0 after a successful call.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn qdd_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Opens a group on `bus` (`virtual:NAME` or `can:IFACE`) for a roster such
/// as `"AK80-9:1,AK80-9:2"`. Default safety settings.
///
/// # Safety
/// `bus_spec` and `roster_spec` must be NUL-terminated strings; `out_group`
/// must be valid. On success `*out_group` owns a handle for [`qdd_group_free`].
#[no_mangle]
pub unsafe extern "C" fn qdd_group_open(
    bus_spec: *const c_char,
    roster_spec: *const c_char,
    out_group: *mut *mut QddGroup,
) -> QddStatus {
    guard(|| {
        let slot = out(out_group, "out")?;
        *slot = ptr::null_mut();
        let cfg: BusConfig = string(bus_spec, "bus")?
            .parse()
            .map_err(|e: bus::BusError| invalid(e.to_string()))?;
        let roster = roster(string(roster_spec, "roster")?)?;
        let handle = bus::open(&cfg).map_err(|e| Failure(QddStatus::Bus, e.to_string()))?;
        let group = ActuatorGroup::with_bus(&roster_refs(&roster), Arc::from(handle), SafetyConfig::default())?;
        *slot = Box::into_raw(Box::new(QddGroup { group }));
        Ok(())
    })
}

fn roster_refs(r: &[(String, u32)]) -> Vec<(&str, u32)> {
    r.iter().map(|(m, id)| (m.as_str(), *id)).collect()
}

/// Sends zero torque then Disable to every enabled actuator and releases the
/// handle. Null is ignored.
///
/// # Safety
/// `g` must be null or a handle from [`qdd_group_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qdd_group_free(g: *mut QddGroup) {
    if g.is_null() {
        return;
    }
    let mut g = Box::from_raw(g);
    let _ = catch_unwind(AssertUnwindSafe(|| g.group.disable_all()));
}

fn first_failure(results: Vec<(u32, Result<(), GroupError>)>) -> Result<(), Failure> {
    match results.into_iter().find_map(|(_, r)| r.err()) {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

/// Enables every actuator. Fails with the first actuator's error; the others
/// are still attempted.
///
/// # Safety
/// `g` must be a live group handle.
#[no_mangle]
pub unsafe extern "C" fn qdd_group_enable_all(g: *mut QddGroup) -> QddStatus {
    guard(|| first_failure(group(g)?.enable_all()))
}

/// # Safety
/// `g` must be a live group handle.
#[no_mangle]
pub unsafe extern "C" fn qdd_group_disable_all(g: *mut QddGroup) -> QddStatus {
    guard(|| first_failure(group(g)?.disable_all()))
}

/// Pure torque command. `applied` (may be null) receives the torque after
/// the safety layer.
///
/// # Safety
/// `g` must be a live group handle; `applied` null or writable.
#[no_mangle]
pub unsafe extern "C" fn qdd_group_command_torque(
    g: *mut QddGroup,
    can_id: u32,
    torque: f64,
    applied: *mut f64,
) -> QddStatus {
    guard(|| {
        let echo = group(g)?.command_torque(can_id, torque)?;
        if let Some(a) = applied.as_mut() {
            *a = echo.applied_torque();
        }
        Ok(())
    })
}

/// # Safety
/// `g` must be a live group handle.
#[no_mangle]
pub unsafe extern "C" fn qdd_group_command_position(
    g: *mut QddGroup,
    can_id: u32,
    position: f64,
    kp: f64,
    kd: f64,
) -> QddStatus {
    guard(|| {
        group(g)?
            .command_position(can_id, position, kp, kd)
            .map(drop)
            .map_err(Into::into)
    })
}

/// # Safety
/// `g` must be a live group handle.
#[no_mangle]
pub unsafe extern "C" fn qdd_group_command_velocity(
    g: *mut QddGroup,
    can_id: u32,
    velocity: f64,
    kd: f64,
) -> QddStatus {
    guard(|| {
        group(g)?
            .command_velocity(can_id, velocity, kd)
            .map(drop)
            .map_err(Into::into)
    })
}

/// Full MIT command. `sent` (may be null) receives the command as it went out.
///
/// # Safety
/// `g` must be a live group handle; `cmd` readable; `sent` null or writable.
#[no_mangle]
pub unsafe extern "C" fn qdd_group_command_impedance(
    g: *mut QddGroup,
    can_id: u32,
    cmd: *const QddMitCommand,
    sent: *mut QddMitCommand,
) -> QddStatus {
    guard(|| {
        let cmd = *cmd
            .as_ref()
            .ok_or(Failure(QddStatus::NullArgument, "cmd is null".into()))?;
        let echo = group(g)?.command_impedance(can_id, cmd.into())?;
        if let Some(s) = sent.as_mut() {
            *s = echo.command.into();
        }
        Ok(())
    })
}

/// Latest cached state, after draining pending feedback.
///
/// # Safety
/// `g` must be a live group handle; `state` writable.
#[no_mangle]
pub unsafe extern "C" fn qdd_group_query_state(g: *mut QddGroup, can_id: u32, state: *mut QddState) -> QddStatus {
    guard(|| {
        let dst = out(state, "state")?;
        let s = group(g)?.query_state(can_id)?;
        *dst = QddState {
            position: s.position,
            velocity: s.velocity,
            torque: s.torque,
            temperature: s.temperature,
            timestamp: s.timestamp,
            fault_code: s.fault_code,
            stale: s.stale,
        };
        Ok(())
    })
}

/// Trailing-window RMS of the commanded torque, Nm.
///
/// # Safety
/// `g` must be a live group handle; `rms` writable.
#[no_mangle]
pub unsafe extern "C" fn qdd_group_rms_torque(g: *mut QddGroup, can_id: u32, rms: *mut f64) -> QddStatus {
    guard(|| {
        let dst = out(rms, "rms")?;
        *dst = group(g)?.rms_torque(can_id)?;
        Ok(())
    })
}

/// Starts simulated actuators for `roster_spec` on the virtual channel named
/// by `bus_spec`. They answer until [`qdd_fleet_free`].
///
/// # Safety
/// String arguments must be NUL-terminated; `out_fleet` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qdd_fleet_open(
    bus_spec: *const c_char,
    roster_spec: *const c_char,
    out_fleet: *mut *mut QddFleet,
) -> QddStatus {
    guard(|| {
        let slot = out(out_fleet, "out")?;
        *slot = ptr::null_mut();
        let cfg: BusConfig = string(bus_spec, "bus")?
            .parse()
            .map_err(|e: bus::BusError| invalid(e.to_string()))?;
        if cfg.backend != Backend::Virtual {
            return Err(invalid(format!("{cfg}: simulated actuators need a virtual channel")));
        }
        let roster = roster(string(roster_spec, "roster")?)?;
        let fleet = VirtualFleet::from_roster(
            &roster_refs(&roster),
            ActuatorParams::fixture(),
            0.001,
            ReplyMode::PerCommand,
        )
        .map_err(|e| invalid(e.to_string()))?;
        let vb = VirtualBus::open(
            &cfg.interface_name,
            cfg.virtual_options.clone(),
            qddrive::time::TimeSource::real(),
        )
        .map_err(|e| Failure(QddStatus::Bus, e.to_string()))?;
        let responder = Some(fleet.attach(&vb));
        *slot = Box::into_raw(Box::new(QddFleet {
            fleet,
            bus: vb,
            responder,
        }));
        Ok(())
    })
}

/// Simulated actuator state: position, velocity, applied torque.
///
/// # Safety
/// `f` must be a live fleet handle; `state` writable.
#[no_mangle]
pub unsafe extern "C" fn qdd_fleet_state(f: *mut QddFleet, can_id: u32, state: *mut QddState) -> QddStatus {
    guard(|| {
        let dst = out(state, "state")?;
        let fl = &out(f, "fleet")?.fleet;
        let s = fl
            .snapshot(can_id)
            .ok_or_else(|| Failure(QddStatus::UnknownActuator, format!("no simulated actuator {can_id}")))?;
        *dst = QddState {
            position: s.position,
            velocity: s.velocity,
            torque: s.applied_torque,
            temperature: s.temperature,
            timestamp: fl.sim_time(),
            fault_code: 0,
            stale: !s.enabled,
        };
        Ok(())
    })
}

/// # Safety
/// `f` must be null or a handle from [`qdd_fleet_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qdd_fleet_free(f: *mut QddFleet) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Packs a command for actuator `can_id` of `model`.
///
/// # Safety
/// `model` NUL-terminated; `cmd` readable; `frame` writable.
#[no_mangle]
pub unsafe extern "C" fn qdd_encode_command(
    model: *const c_char,
    can_id: u32,
    cmd: *const QddMitCommand,
    frame: *mut QddFrame,
) -> QddStatus {
    guard(|| {
        let dst = out(frame, "frame")?;
        let m = lookup_model(string(model, "model")?).map_err(|e| invalid(e.to_string()))?;
        let cmd = *cmd
            .as_ref()
            .ok_or(Failure(QddStatus::NullArgument, "cmd is null".into()))?;
        let w = encode_mit_command(&cmd.into(), m, can_id).map_err(|e| Failure(QddStatus::Codec, e.to_string()))?;
        *dst = QddFrame {
            arbitration_id: w.arbitration_id,
            extended: w.extended,
            data: w.data,
        };
        Ok(())
    })
}

/// Actuator-side decode of a command frame. Fails with `InvalidArgument` if
/// the frame is not a command addressed to `can_id`.
///
/// # Safety
/// `model` NUL-terminated; `frame` readable; `cmd` writable.
#[no_mangle]
pub unsafe extern "C" fn qdd_decode_command(
    model: *const c_char,
    can_id: u32,
    frame: *const QddFrame,
    cmd: *mut QddMitCommand,
) -> QddStatus {
    guard(|| {
        let dst = out(cmd, "cmd")?;
        let m = lookup_model(string(model, "model")?).map_err(|e| invalid(e.to_string()))?;
        let f = *frame
            .as_ref()
            .ok_or(Failure(QddStatus::NullArgument, "frame is null".into()))?;
        match decode_inbound(f.arbitration_id, f.extended, &f.data, m, can_id) {
            Ok(Some(InboundFrame::Command(c))) => {
                *dst = c.into();
                Ok(())
            }
            Ok(_) => Err(invalid(format!("not a command frame for actuator {can_id}"))),
            Err(e) => Err(Failure(QddStatus::Codec, e.to_string())),
        }
    })
}

/// Rated and peak torque of a shipped model, Nm.
///
/// # Safety
/// `model` NUL-terminated; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn qdd_model_torque_limits(model: *const c_char, rated: *mut f64, peak: *mut f64) -> QddStatus {
    guard(|| {
        let m = lookup_model(string(model, "model")?).map_err(|e| invalid(e.to_string()))?;
        *out(rated, "rated")? = m.rated_torque;
        *out(peak, "peak")? = m.peak_torque;
        Ok(())
    })
}
