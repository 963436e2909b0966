//! CAN bus access behind one trait, with an in-memory virtual backend and an
//! optional native SocketCAN backend.

#[cfg(all(feature = "socketcan", target_os = "linux"))]
mod socket;
mod virtual_bus;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::WireFrame;
use crate::time::TimeSource;

pub use virtual_bus::{FrameOrigin, FrameResponder, LoggedFrame, ResponderId, VirtualBus, VirtualOptions};

pub const STANDARD_ID_MAX: u32 = 0x7FF;
pub const EXTENDED_ID_MAX: u32 = 0x1FFF_FFFF;

/// One classic CAN frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanFrame {
    pub arbitration_id: u32,
    pub is_extended: bool,
    len: u8,
    data: [u8; 8],
    /// Seconds since session start, stamped by the bus on send/receive.
    pub timestamp: f64,
}

impl CanFrame {
    pub fn new(arbitration_id: u32, payload: &[u8], is_extended: bool) -> Result<Self, BusError> {
        if payload.len() > 8 {
            return Err(BusError::InvalidFrame(format!(
                "payload of {} bytes exceeds 8",
                payload.len()
            )));
        }
        let max = if is_extended { EXTENDED_ID_MAX } else { STANDARD_ID_MAX };
        if arbitration_id > max {
            return Err(BusError::InvalidFrame(format!(
                "ID {arbitration_id:#x} exceeds {} range",
                if is_extended { "29-bit" } else { "11-bit" }
            )));
        }
        let mut data = [0u8; 8];
        data[..payload.len()].copy_from_slice(payload);
        Ok(CanFrame {
            arbitration_id,
            is_extended,
            len: payload.len() as u8,
            data,
            timestamp: 0.0,
        })
    }

    pub fn payload(&self) -> &[u8] {
        &self.data[..usize::from(self.len)]
    }

    pub fn with_timestamp(mut self, t: f64) -> Self {
        self.timestamp = t;
        self
    }
}

impl From<WireFrame> for CanFrame {
    fn from(w: WireFrame) -> Self {
        CanFrame {
            arbitration_id: w.arbitration_id,
            is_extended: w.extended,
            len: 8,
            data: w.data,
            timestamp: 0.0,
        }
    }
}

impl fmt::Display for CanFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_extended {
            write!(f, "{:08X}#", self.arbitration_id)?;
        } else {
            write!(f, "{:03X}#", self.arbitration_id)?;
        }
        for b in self.payload() {
            write!(f, "{b:02X}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("cannot open {interface}: {reason}")]
    Open { interface: String, reason: String },
    #[error("channel {0} is held exclusively")]
    Exclusive(String),
    #[error("bus handle is closed")]
    Closed,
    #[error("bus transmit buffer full")]
    Backpressure,
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid bus config: {0}")]
    Config(String),
    #[error("bus I/O error: {0}")]
    Io(String),
}

/// A bus handle. One sending context and one receiving context may use a
/// handle concurrently.
pub trait CanBus: Send + Sync {
    /// Writes a frame and returns it with its send timestamp.
    fn send(&self, frame: &CanFrame) -> Result<CanFrame, BusError>;

    /// Oldest pending frame, or `None` once `timeout` elapses.
    fn recv(&self, timeout: Duration) -> Result<Option<CanFrame>, BusError>;

    /// Non-blocking receive.
    fn try_recv(&self) -> Result<Option<CanFrame>, BusError>;

    fn close(&self);

    fn is_open(&self) -> bool;

    fn time(&self) -> &TimeSource;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    OsSocket,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BusConfig {
    pub backend: Backend,
    pub interface_name: String,
    /// Seconds.
    pub receive_timeout: f64,
    /// Informational; the OS interface's bitrate is set outside this process.
    pub bitrate: Option<u32>,
    #[serde(rename = "virtual")]
    pub virtual_options: VirtualOptions,
}

impl Default for BusConfig {
    fn default() -> Self {
        BusConfig {
            backend: Backend::Virtual,
            interface_name: "vbus0".into(),
            receive_timeout: 0.1,
            bitrate: None,
            virtual_options: VirtualOptions::default(),
        }
    }
}

impl BusConfig {
    pub fn virtual_channel(name: &str) -> Self {
        BusConfig {
            interface_name: name.to_string(),
            ..Default::default()
        }
    }

    pub fn os_socket(iface: &str) -> Self {
        BusConfig {
            backend: Backend::OsSocket,
            interface_name: iface.to_string(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), BusError> {
        if !(self.receive_timeout > 0.0 && self.receive_timeout.is_finite()) {
            return Err(BusError::Config(format!(
                "receive_timeout must be positive, got {}",
                self.receive_timeout
            )));
        }
        if self.interface_name.is_empty() {
            return Err(BusError::Config("empty interface name".into()));
        }
        self.virtual_options.validate()
    }

    pub fn receive_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.receive_timeout)
    }
}

/// `virtual:NAME` or `can:IFACE`.
impl FromStr for BusConfig {
    type Err = BusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, name) = s
            .split_once(':')
            .ok_or_else(|| BusError::Config(format!("expected virtual:NAME or can:IFACE, got {s:?}")))?;
        if name.is_empty() {
            return Err(BusError::Config(format!("missing interface name in {s:?}")));
        }
        match kind {
            "virtual" => Ok(BusConfig::virtual_channel(name)),
            "can" => Ok(BusConfig::os_socket(name)),
            other => Err(BusError::Config(format!("unknown bus kind {other:?}"))),
        }
    }
}

impl fmt::Display for BusConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.backend {
            Backend::Virtual => write!(f, "virtual:{}", self.interface_name),
            Backend::OsSocket => write!(f, "can:{}", self.interface_name),
        }
    }
}

/// Opens a handle on the real session clock.
pub fn open(config: &BusConfig) -> Result<Box<dyn CanBus>, BusError> {
    open_with_time(config, TimeSource::real())
}

/// Opens a handle. For virtual channels, the first opener's time source and
/// options define the shared domain.
pub fn open_with_time(config: &BusConfig, time: TimeSource) -> Result<Box<dyn CanBus>, BusError> {
    config.validate()?;
    match config.backend {
        Backend::Virtual => Ok(Box::new(VirtualBus::open(
            &config.interface_name,
            config.virtual_options.clone(),
            time,
        )?)),
        Backend::OsSocket => open_os(config, time),
    }
}

#[cfg(all(feature = "socketcan", target_os = "linux"))]
fn open_os(config: &BusConfig, time: TimeSource) -> Result<Box<dyn CanBus>, BusError> {
    Ok(Box::new(socket::SocketCan::open(&config.interface_name, time)?))
}

#[cfg(not(all(feature = "socketcan", target_os = "linux")))]
fn open_os(config: &BusConfig, _time: TimeSource) -> Result<Box<dyn CanBus>, BusError> {
    Err(BusError::Open {
        interface: config.interface_name.clone(),
        reason: "native CAN support not compiled in; rebuild with `--features socketcan` on Linux".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_limits() {
        assert!(CanFrame::new(0x7FF, &[0; 8], false).is_ok());
        assert!(CanFrame::new(0x800, &[], false).is_err());
        assert!(CanFrame::new(0x800, &[], true).is_ok());
        assert!(CanFrame::new(0x2000_0000, &[], true).is_err());
        assert!(CanFrame::new(1, &[0; 9], false).is_err());
        assert_eq!(CanFrame::new(1, &[1, 2, 3], false).unwrap().payload(), &[1, 2, 3]);
    }

    #[test]
    fn display_is_candump_style() {
        let f = CanFrame::new(0x12, &[0xAB, 0x01], false).unwrap();
        assert_eq!(f.to_string(), "012#AB01");
        let f = CanFrame::new(0x0300_FD01, &[], true).unwrap();
        assert_eq!(f.to_string(), "0300FD01#");
    }

    #[test]
    fn parse_bus_spec() {
        let c: BusConfig = "virtual:chA".parse().unwrap();
        assert_eq!(c.backend, Backend::Virtual);
        assert_eq!(c.interface_name, "chA");
        let c: BusConfig = "can:can0".parse().unwrap();
        assert_eq!(c.backend, Backend::OsSocket);
        assert_eq!(c.to_string(), "can:can0");
        assert!("usb:x".parse::<BusConfig>().is_err());
        assert!("virtual:".parse::<BusConfig>().is_err());
        assert!("can0".parse::<BusConfig>().is_err());
    }

    #[test]
    fn config_rejects_nonpositive_timeout() {
        let c = BusConfig {
            receive_timeout: 0.0,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(BusError::Config(_))));
    }

    #[test]
    fn missing_os_interface_is_open_error() {
        match open(&BusConfig::os_socket("does-not-exist")) {
            Err(BusError::Open { interface, .. }) => assert_eq!(interface, "does-not-exist"),
            Err(e) => panic!("unexpected {e}"),
            Ok(_) => panic!("opened a non-existent interface"),
        }
    }
}
