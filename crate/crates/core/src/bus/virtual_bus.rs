//! In-memory broadcast CAN domains.
//!
//! Handles opened on the same channel name share one domain. A frame sent on
//! one handle is delivered to every other handle and to every attached
//! responder; responder replies are delivered to all handles. Delivery order
//! is the order in which the domain lock was taken, so each sender's frames
//! arrive in FIFO order.
//!
//! The optional transmit capacity is a leaky bucket over handle sends: the
//! bucket drains at `capacity_fps` frames per second and holds at most
//! `queue_frames`; a send that would overflow it fails with
//! [`BusError::Backpressure`]. Responder replies model the actuators' own
//! transmissions and are not charged to the bucket.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, LazyLock, Mutex, MutexGuard, Weak};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BusError, CanBus, CanFrame};
use crate::time::TimeSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VirtualOptions {
    /// Maximum sustained handle sends per second; `None` is unlimited.
    pub capacity_fps: Option<f64>,
    /// Leaky-bucket depth in frames.
    pub queue_frames: usize,
    /// Refuse further opens of this channel while it exists.
    pub exclusive: bool,
    /// Per-handle receive queue bound; the oldest frame is dropped beyond it.
    pub rx_queue_limit: usize,
    /// Keep a log of every frame crossing the domain.
    pub log_frames: bool,
}

impl Default for VirtualOptions {
    fn default() -> Self {
        VirtualOptions {
            capacity_fps: None,
            queue_frames: 32,
            exclusive: false,
            rx_queue_limit: 65_536,
            log_frames: false,
        }
    }
}

impl VirtualOptions {
    pub fn validate(&self) -> Result<(), BusError> {
        if let Some(c) = self.capacity_fps {
            if !(c > 0.0 && c.is_finite()) {
                return Err(BusError::Config(format!("capacity must be positive, got {c}")));
            }
        }
        if self.queue_frames == 0 || self.rx_queue_limit == 0 {
            return Err(BusError::Config("queue sizes must be non-zero".into()));
        }
        Ok(())
    }
}

/// Actuator-side participant invoked synchronously for every handle send.
pub trait FrameResponder: Send {
    /// Frames returned here are broadcast as replies, stamped with the
    /// triggering frame's timestamp.
    fn on_frame(&mut self, frame: &CanFrame) -> Vec<CanFrame>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ResponderId(u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameOrigin {
    Handle(u64),
    Responder(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedFrame {
    pub sequence: u64,
    pub origin: FrameOrigin,
    pub frame: CanFrame,
}

struct State {
    rx: HashMap<u64, VecDeque<CanFrame>>,
    responders: Vec<(u64, Box<dyn FrameResponder>)>,
    options: VirtualOptions,
    bucket_level: f64,
    bucket_last: Duration,
    log: Vec<LoggedFrame>,
    sequence: u64,
    fail_sends: bool,
    dropped: u64,
}

struct Domain {
    name: String,
    time: TimeSource,
    state: Mutex<State>,
    arrived: Condvar,
}

static REGISTRY: LazyLock<Mutex<HashMap<String, Weak<Domain>>>> = LazyLock::new(|| Mutex::new(HashMap::new()));
static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

impl Domain {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl State {
    fn deliver(&mut self, origin: FrameOrigin, frame: CanFrame) {
        self.sequence += 1;
        if self.options.log_frames {
            self.log.push(LoggedFrame {
                sequence: self.sequence,
                origin,
                frame,
            });
        }
        let limit = self.options.rx_queue_limit;
        for (id, q) in self.rx.iter_mut() {
            if origin == FrameOrigin::Handle(*id) {
                continue;
            }
            if q.len() >= limit {
                q.pop_front();
                self.dropped += 1;
            }
            q.push_back(frame);
        }
    }

    fn charge_bucket(&mut self, now: Duration) -> Result<(), BusError> {
        let Some(cap) = self.options.capacity_fps else {
            return Ok(());
        };
        let dt = now.saturating_sub(self.bucket_last).as_secs_f64();
        self.bucket_level = (self.bucket_level - dt * cap).max(0.0);
        self.bucket_last = now;
        if self.bucket_level + 1.0 > self.options.queue_frames as f64 {
            return Err(BusError::Backpressure);
        }
        self.bucket_level += 1.0;
        Ok(())
    }
}

/// Handle on a virtual channel.
pub struct VirtualBus {
    domain: Arc<Domain>,
    id: u64,
    open: AtomicBool,
}

impl VirtualBus {
    pub fn open(name: &str, options: VirtualOptions, time: TimeSource) -> Result<Self, BusError> {
        options.validate()?;
        let mut reg = REGISTRY.lock().unwrap_or_else(|p| p.into_inner());
        reg.retain(|_, w| w.strong_count() > 0);
        let domain = match reg.get(name).and_then(Weak::upgrade) {
            Some(d) => {
                if options.exclusive || d.lock().options.exclusive {
                    return Err(BusError::Exclusive(name.to_string()));
                }
                d
            }
            None => {
                let d = Arc::new(Domain {
                    name: name.to_string(),
                    time,
                    state: Mutex::new(State {
                        rx: HashMap::new(),
                        responders: Vec::new(),
                        options,
                        bucket_level: 0.0,
                        bucket_last: Duration::ZERO,
                        log: Vec::new(),
                        sequence: 0,
                        fail_sends: false,
                        dropped: 0,
                    }),
                    arrived: Condvar::new(),
                });
                reg.insert(name.to_string(), Arc::downgrade(&d));
                d
            }
        };
        let id = next_id();
        domain.lock().rx.insert(id, VecDeque::new());
        Ok(VirtualBus {
            domain,
            id,
            open: AtomicBool::new(true),
        })
    }

    /// A channel name no other caller has used.
    pub fn unique_name(prefix: &str) -> String {
        format!("{prefix}-{}", next_id())
    }

    pub fn name(&self) -> &str {
        &self.domain.name
    }

    /// Attaches a responder that sees every frame sent by a handle.
    pub fn attach_responder(&self, responder: Box<dyn FrameResponder>) -> ResponderId {
        let id = next_id();
        self.domain.lock().responders.push((id, responder));
        ResponderId(id)
    }

    /// Removes a responder, returning it.
    pub fn detach_responder(&self, id: ResponderId) -> Option<Box<dyn FrameResponder>> {
        let mut st = self.domain.lock();
        let pos = st.responders.iter().position(|(r, _)| *r == id.0)?;
        Some(st.responders.remove(pos).1)
    }

    pub fn set_logging(&self, on: bool) {
        self.domain.lock().options.log_frames = on;
    }

    pub fn frame_log(&self) -> Vec<LoggedFrame> {
        self.domain.lock().log.clone()
    }

    pub fn clear_log(&self) {
        self.domain.lock().log.clear();
    }

    /// Makes every subsequent handle send fail with an I/O error.
    pub fn set_send_failure(&self, fail: bool) {
        self.domain.lock().fail_sends = fail;
    }

    /// Frames dropped from full receive queues.
    pub fn dropped_frames(&self) -> u64 {
        self.domain.lock().dropped
    }

    pub fn pending(&self) -> usize {
        self.domain.lock().rx.get(&self.id).map_or(0, VecDeque::len)
    }

    pub fn handle_id(&self) -> u64 {
        self.id
    }

    fn check_open(&self) -> Result<(), BusError> {
        if self.open.load(Ordering::Acquire) {
            Ok(())
        } else {
            Err(BusError::Closed)
        }
    }
}

impl CanBus for VirtualBus {
    fn send(&self, frame: &CanFrame) -> Result<CanFrame, BusError> {
        self.check_open()?;
        let now = self.domain.time.now();
        let stamped = frame.with_timestamp(now.as_secs_f64());
        let mut st = self.domain.lock();
        if st.fail_sends {
            return Err(BusError::Io(format!("injected failure on {}", self.domain.name)));
        }
        st.charge_bucket(now)?;
        st.deliver(FrameOrigin::Handle(self.id), stamped);
        let mut responders = std::mem::take(&mut st.responders);
        for (rid, r) in responders.iter_mut() {
            for reply in r.on_frame(&stamped) {
                st.deliver(FrameOrigin::Responder(*rid), reply.with_timestamp(stamped.timestamp));
            }
        }
        // Responders attached during the callbacks cannot exist (the lock is
        // held), so restoring the vector is exact.
        st.responders = responders;
        drop(st);
        self.domain.arrived.notify_all();
        Ok(stamped)
    }

    fn recv(&self, timeout: Duration) -> Result<Option<CanFrame>, BusError> {
        self.check_open()?;
        let deadline = Instant::now() + timeout;
        let mut st = self.domain.lock();
        loop {
            if let Some(f) = st.rx.get_mut(&self.id).and_then(VecDeque::pop_front) {
                return Ok(Some(f));
            }
            if self.domain.time.is_virtual() {
                drop(st);
                self.domain.time.advance(timeout);
                return Ok(self.domain.lock().rx.get_mut(&self.id).and_then(VecDeque::pop_front));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            st = self
                .domain
                .arrived
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
            self.check_open()?;
        }
    }

    fn try_recv(&self) -> Result<Option<CanFrame>, BusError> {
        self.check_open()?;
        Ok(self.domain.lock().rx.get_mut(&self.id).and_then(VecDeque::pop_front))
    }

    fn close(&self) {
        if self.open.swap(false, Ordering::AcqRel) {
            self.domain.lock().rx.remove(&self.id);
            self.domain.arrived.notify_all();
        }
    }

    fn is_open(&self) -> bool {
        self.open.load(Ordering::Acquire)
    }

    fn time(&self) -> &TimeSource {
        &self.domain.time
    }
}

impl Drop for VirtualBus {
    fn drop(&mut self) {
        self.close();
    }
}
