use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ActuatorParams, SimError, VirtualActuator};
use crate::bus::{BusError, CanBus, CanFrame, FrameResponder, ResponderId, VirtualBus};
use crate::protocol::{decode_inbound, encode_feedback, lookup_model};

/// When simulated actuators transmit feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplyMode {
    /// One feedback frame per accepted command or control-plane frame.
    #[default]
    PerCommand,
    /// Control-plane frames are answered; state goes out only via
    /// [`VirtualFleet::broadcast`].
    Periodic,
}

struct Slot {
    actuator: VirtualActuator,
    connected: bool,
}

struct FleetState {
    slots: BTreeMap<u32, Slot>,
    step: f64,
    reply_mode: ReplyMode,
    /// Simulation time the physics has been integrated to, in seconds.
    sim_time: f64,
}

impl FleetState {
    fn advance_to(&mut self, t: f64) {
        if t <= self.sim_time {
            return;
        }
        let span = t - self.sim_time;
        for slot in self.slots.values_mut() {
            slot.actuator.integrate(span, self.step);
        }
        self.sim_time = t;
    }

    fn respond(&mut self, frame: &CanFrame) -> Vec<CanFrame> {
        self.advance_to(frame.timestamp);
        let mut replies = Vec::new();
        for slot in self.slots.values_mut().filter(|s| s.connected) {
            let a = &mut slot.actuator;
            let inbound = match decode_inbound(
                frame.arbitration_id,
                frame.is_extended,
                frame.payload(),
                a.model(),
                a.can_id(),
            ) {
                Ok(Some(f)) => f,
                Ok(None) => continue,
                Err(e) => {
                    log::debug!("actuator {} ignored malformed frame {frame}: {e}", a.can_id());
                    continue;
                }
            };
            let is_command = matches!(inbound, crate::protocol::InboundFrame::Command(_));
            let answers = a.handle(inbound);
            if !answers || (is_command && self.reply_mode == ReplyMode::Periodic) {
                continue;
            }
            match encode_feedback(&a.feedback(), a.model()) {
                Ok(w) => replies.push(CanFrame::from(w)),
                Err(e) => log::warn!("actuator {} cannot encode feedback: {e}", a.can_id()),
            }
        }
        replies
    }
}

/// A set of simulated actuators sharing one bus attachment.
///
/// Physics is integrated lazily: each incoming frame first advances every
/// actuator to the frame's timestamp, so the fleet runs equally well on a
/// real or a virtual session clock.
#[derive(Clone)]
pub struct VirtualFleet {
    state: Arc<Mutex<FleetState>>,
}

/// Immutable view of one actuator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorSnapshot {
    pub can_id: u32,
    pub position: f64,
    pub velocity: f64,
    pub applied_torque: f64,
    pub temperature: f64,
    pub enabled: bool,
    pub connected: bool,
}

impl VirtualFleet {
    pub fn new(step: f64, reply_mode: ReplyMode) -> Result<Self, SimError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(SimError::InvalidParams(format!("integration step {step}")));
        }
        Ok(VirtualFleet {
            state: Arc::new(Mutex::new(FleetState {
                slots: BTreeMap::new(),
                step,
                reply_mode,
                sim_time: 0.0,
            })),
        })
    }

    /// A fleet with one actuator per `(model, can_id)` roster entry.
    pub fn from_roster<S: AsRef<str>>(
        roster: &[(S, u32)],
        params: ActuatorParams,
        step: f64,
        reply_mode: ReplyMode,
    ) -> Result<Self, SimError> {
        let fleet = VirtualFleet::new(step, reply_mode)?;
        for (name, id) in roster {
            let model = lookup_model(name.as_ref()).map_err(|e| SimError::InvalidParams(e.to_string()))?;
            fleet.add(VirtualActuator::new(model.clone(), *id, params)?)?;
        }
        Ok(fleet)
    }

    fn lock(&self) -> MutexGuard<'_, FleetState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn add(&self, actuator: VirtualActuator) -> Result<(), SimError> {
        let mut st = self.lock();
        let id = actuator.can_id();
        if st.slots.contains_key(&id) {
            return Err(SimError::DuplicateCanId(id));
        }
        st.slots.insert(
            id,
            Slot {
                actuator,
                connected: true,
            },
        );
        Ok(())
    }

    pub fn can_ids(&self) -> Vec<u32> {
        self.lock().slots.keys().copied().collect()
    }

    /// Registers the fleet as a responder on a virtual channel.
    pub fn attach(&self, bus: &VirtualBus) -> ResponderId {
        bus.attach_responder(Box::new(self.responder()))
    }

    pub fn responder(&self) -> FleetResponder {
        FleetResponder(self.clone())
    }

    /// Simulates unplugging an actuator: it stops seeing and answering frames.
    pub fn set_connected(&self, can_id: u32, connected: bool) -> Result<(), SimError> {
        let mut st = self.lock();
        let slot = st.slots.get_mut(&can_id).ok_or(SimError::UnknownCanId(can_id))?;
        slot.connected = connected;
        Ok(())
    }

    pub fn advance_to(&self, t: f64) {
        self.lock().advance_to(t);
    }

    pub fn sim_time(&self) -> f64 {
        self.lock().sim_time
    }

    pub fn snapshot(&self, can_id: u32) -> Option<ActuatorSnapshot> {
        let st = self.lock();
        let s = st.slots.get(&can_id)?;
        let a = &s.actuator;
        Some(ActuatorSnapshot {
            can_id,
            position: a.position(),
            velocity: a.velocity(),
            applied_torque: a.applied_torque(),
            temperature: a.temperature(),
            enabled: a.is_enabled(),
            connected: s.connected,
        })
    }

    pub fn set_state(&self, can_id: u32, position: f64, velocity: f64) -> Result<(), SimError> {
        let mut st = self.lock();
        let slot = st.slots.get_mut(&can_id).ok_or(SimError::UnknownCanId(can_id))?;
        slot.actuator.set_state(position, velocity);
        Ok(())
    }

    /// Feedback frames from every enabled, connected actuator at time `t`.
    pub fn broadcast(&self, t: f64) -> Vec<CanFrame> {
        let mut st = self.lock();
        st.advance_to(t);
        st.slots
            .values()
            .filter(|s| s.connected && s.actuator.is_enabled())
            .filter_map(|s| encode_feedback(&s.actuator.feedback(), s.actuator.model()).ok())
            .map(|w| CanFrame::from(w).with_timestamp(t))
            .collect()
    }

    /// Serves the fleet on any bus handle until `stop` is set. Used for OS
    /// sockets, where no in-process responder hook exists.
    pub fn serve(
        &self,
        bus: &dyn CanBus,
        stop: &AtomicBool,
        broadcast_period: Option<Duration>,
    ) -> Result<(), BusError> {
        let poll = Duration::from_millis(5);
        let mut next_broadcast = broadcast_period.map(|p| bus.time().now() + p);
        let mut responder = self.responder();
        while !stop.load(Ordering::Acquire) {
            if let Some(frame) = bus.recv(poll)? {
                for reply in responder.on_frame(&frame) {
                    bus.send(&reply)?;
                }
            }
            if let (Some(next), Some(period)) = (next_broadcast, broadcast_period) {
                let now = bus.time().now();
                if now >= next {
                    for f in self.broadcast(now.as_secs_f64()) {
                        bus.send(&f)?;
                    }
                    next_broadcast = Some(next + period);
                }
            }
        }
        Ok(())
    }
}

/// [`FrameResponder`] adapter for a [`VirtualFleet`].
pub struct FleetResponder(VirtualFleet);

impl FrameResponder for FleetResponder {
    fn on_frame(&mut self, frame: &CanFrame) -> Vec<CanFrame> {
        self.0.lock().respond(frame)
    }
}
