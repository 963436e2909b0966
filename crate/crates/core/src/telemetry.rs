//! Per-loop JSON telemetry over UDP.
//!
//! Each publish sends one datagram holding a single JSON object: the
//! reserved `timestamp` key plus the record's values, keys in lexicographic
//! order, numbers in shortest round-trip form, no trailing newline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Top-level key carrying the record time; usable as a plot x-axis.
pub const TIMESTAMP_KEY: &str = "timestamp";
/// Hard cap on a datagram payload.
pub const MAX_PAYLOAD: usize = 60 * 1024;
/// Payload size that crosses typical networks without fragmentation.
pub const RECOMMENDED_PAYLOAD: usize = 1400;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TelemetryError {
    #[error("invalid telemetry destination {0:?}: {1}")]
    Config(String, String),
    #[error("value at {path} is not finite")]
    NonFinite { path: String },
    #[error("key {0:?} is reserved")]
    ReservedKey(String),
    #[error("flattened key {0:?} collides with another entry")]
    KeyCollision(String),
    #[error("payload of {size} bytes exceeds the {limit}-byte limit")]
    Oversize { size: usize, limit: usize },
    #[error("socket: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TelemetryValue {
    Number(f64),
    Map(BTreeMap<String, TelemetryValue>),
}

impl From<f64> for TelemetryValue {
    fn from(v: f64) -> Self {
        TelemetryValue::Number(v)
    }
}

impl From<BTreeMap<String, TelemetryValue>> for TelemetryValue {
    fn from(m: BTreeMap<String, TelemetryValue>) -> Self {
        TelemetryValue::Map(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub timestamp: f64,
    pub values: BTreeMap<String, TelemetryValue>,
}

impl TelemetryRecord {
    pub fn new(timestamp: f64) -> Self {
        TelemetryRecord {
            timestamp,
            values: BTreeMap::new(),
        }
    }

    /// Sets a top-level number.
    pub fn with(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.to_string(), TelemetryValue::Number(v));
        self
    }

    /// Sets a number under nested maps, creating them as needed. An existing
    /// number on the path is replaced by a map.
    pub fn insert_path(&mut self, path: &[&str], v: f64) {
        let Some((last, parents)) = path.split_last() else {
            return;
        };
        let mut map = &mut self.values;
        for p in parents {
            let entry = map
                .entry(p.to_string())
                .or_insert_with(|| TelemetryValue::Map(BTreeMap::new()));
            if let TelemetryValue::Number(_) = entry {
                *entry = TelemetryValue::Map(BTreeMap::new());
            }
            let TelemetryValue::Map(m) = entry else { unreachable!() };
            map = m;
        }
        map.insert(last.to_string(), TelemetryValue::Number(v));
    }

    pub fn validate(&self) -> Result<(), TelemetryError> {
        if !self.timestamp.is_finite() {
            return Err(TelemetryError::NonFinite {
                path: TIMESTAMP_KEY.into(),
            });
        }
        if self.values.contains_key(TIMESTAMP_KEY) {
            return Err(TelemetryError::ReservedKey(TIMESTAMP_KEY.into()));
        }
        fn walk(prefix: &str, m: &BTreeMap<String, TelemetryValue>) -> Result<(), TelemetryError> {
            for (k, v) in m {
                match v {
                    TelemetryValue::Number(x) if !x.is_finite() => {
                        return Err(TelemetryError::NonFinite {
                            path: format!("{prefix}{k}"),
                        })
                    }
                    TelemetryValue::Number(_) => {}
                    TelemetryValue::Map(sub) => walk(&format!("{prefix}{k}."), sub)?,
                }
            }
            Ok(())
        }
        walk("", &self.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyMode {
    /// Sub-maps become nested JSON objects.
    #[default]
    Nested,
    /// Sub-maps are flattened into dotted keys.
    Flat,
}

fn write_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

fn write_number(out: &mut String, v: f64) {
    // Debug formatting is the shortest representation that round-trips and
    // is always valid JSON for finite values ("1.0", "1e-7", "-0.0").
    let _ = write!(out, "{v:?}");
}

fn write_object(out: &mut String, entries: &BTreeMap<String, TelemetryValue>) {
    out.push('{');
    for (i, (k, v)) in entries.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_string(out, k);
        out.push(':');
        match v {
            TelemetryValue::Number(x) => write_number(out, *x),
            TelemetryValue::Map(m) => write_object(out, m),
        }
    }
    out.push('}');
}

fn flatten(
    prefix: &str,
    m: &BTreeMap<String, TelemetryValue>,
    out: &mut BTreeMap<String, TelemetryValue>,
) -> Result<(), TelemetryError> {
    for (k, v) in m {
        let key = format!("{prefix}{k}");
        match v {
            TelemetryValue::Number(_) => {
                if out.insert(key.clone(), v.clone()).is_some() {
                    return Err(TelemetryError::KeyCollision(key));
                }
            }
            TelemetryValue::Map(sub) => flatten(&format!("{key}."), sub, out)?,
        }
    }
    Ok(())
}

/// Serializes a record to its wire JSON.
pub fn to_json(record: &TelemetryRecord, mode: KeyMode) -> Result<String, TelemetryError> {
    record.validate()?;
    let mut top = match mode {
        KeyMode::Nested => record.values.clone(),
        KeyMode::Flat => {
            let mut flat = BTreeMap::new();
            flatten("", &record.values, &mut flat)?;
            flat
        }
    };
    if top
        .insert(TIMESTAMP_KEY.to_string(), TelemetryValue::Number(record.timestamp))
        .is_some()
    {
        return Err(TelemetryError::ReservedKey(TIMESTAMP_KEY.into()));
    }
    let mut out = String::with_capacity(256);
    write_object(&mut out, &top);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Sent(usize),
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TelemetryStats {
    pub sent: u64,
    pub dropped: u64,
    pub bytes: u64,
}

#[derive(Debug, Default)]
struct Counters {
    sent: AtomicU64,
    dropped: AtomicU64,
    bytes: AtomicU64,
}

/// Cloneable read-only view of a publisher's counters.
#[derive(Debug, Clone)]
pub struct StatsHandle(Arc<Counters>);

impl StatsHandle {
    pub fn get(&self) -> TelemetryStats {
        TelemetryStats {
            sent: self.0.sent.load(Ordering::Relaxed),
            dropped: self.0.dropped.load(Ordering::Relaxed),
            bytes: self.0.bytes.load(Ordering::Relaxed),
        }
    }
}

/// Best-effort, non-blocking UDP publisher.
#[derive(Debug)]
pub struct TelemetryPublisher {
    socket: UdpSocket,
    destination: SocketAddr,
    mode: KeyMode,
    counters: Arc<Counters>,
}

impl TelemetryPublisher {
    /// Parses `HOST:PORT` and binds an ephemeral local socket. No handshake.
    pub fn open(destination: &str) -> Result<Self, TelemetryError> {
        Self::open_with_mode(destination, KeyMode::Nested)
    }

    pub fn open_with_mode(destination: &str, mode: KeyMode) -> Result<Self, TelemetryError> {
        let cfg = |why: String| TelemetryError::Config(destination.to_string(), why);
        let addr = destination
            .to_socket_addrs()
            .map_err(|e| cfg(e.to_string()))?
            .next()
            .ok_or_else(|| cfg("resolves to no address".into()))?;
        let bind: SocketAddr = if addr.is_ipv4() {
            "0.0.0.0:0".parse().expect("literal")
        } else {
            "[::]:0".parse().expect("literal")
        };
        let socket = UdpSocket::bind(bind).map_err(|e| TelemetryError::Io(e.to_string()))?;
        socket
            .set_nonblocking(true)
            .map_err(|e| TelemetryError::Io(e.to_string()))?;
        Ok(TelemetryPublisher {
            socket,
            destination: addr,
            mode,
            counters: Arc::default(),
        })
    }

    pub fn destination(&self) -> SocketAddr {
        self.destination
    }

    /// Sends one datagram. Invalid or oversize records are errors and send
    /// nothing; socket failures are counted as drops.
    pub fn publish(&self, record: &TelemetryRecord) -> Result<SendOutcome, TelemetryError> {
        let payload = to_json(record, self.mode)?;
        self.publish_raw(payload.as_bytes())
    }

    fn publish_raw(&self, payload: &[u8]) -> Result<SendOutcome, TelemetryError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(TelemetryError::Oversize {
                size: payload.len(),
                limit: MAX_PAYLOAD,
            });
        }
        match self.socket.send_to(payload, self.destination) {
            Ok(n) => {
                self.counters.sent.fetch_add(1, Ordering::Relaxed);
                self.counters.bytes.fetch_add(n as u64, Ordering::Relaxed);
                Ok(SendOutcome::Sent(n))
            }
            Err(e) => {
                if e.kind() != io::ErrorKind::WouldBlock {
                    log::debug!("telemetry send to {} failed: {e}", self.destination);
                }
                self.counters.dropped.fetch_add(1, Ordering::Relaxed);
                Ok(SendOutcome::Dropped)
            }
        }
    }

    pub fn stats(&self) -> TelemetryStats {
        self.stats_handle().get()
    }

    pub fn stats_handle(&self) -> StatsHandle {
        StatsHandle(self.counters.clone())
    }
}
