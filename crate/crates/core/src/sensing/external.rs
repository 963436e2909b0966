use std::sync::{Arc, Mutex, MutexGuard};

use super::{ImuSample, ImuSource, ImuSourceDescriptor, SensingError, SourceKind};

#[derive(Debug)]
enum Slot {
    Empty,
    Ready(ImuSample),
    Failed(String),
    Closed,
}

#[derive(Debug)]
struct Shared {
    slot: Slot,
    last_timestamp: f64,
}

fn lock(m: &Mutex<Shared>) -> MutexGuard<'_, Shared> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// Query side of an externally fed IMU.
#[derive(Debug)]
pub struct ExternalImu {
    descriptor: ImuSourceDescriptor,
    shared: Arc<Mutex<Shared>>,
}

/// Push side, held by a vendor driver thread.
#[derive(Debug, Clone)]
pub struct ImuFeeder {
    descriptor: ImuSourceDescriptor,
    shared: Arc<Mutex<Shared>>,
}

/// Creates a connected source/feeder pair. The descriptor's kind is forced
/// to [`SourceKind::ExternalDriver`].
pub fn external_source(mut descriptor: ImuSourceDescriptor) -> (ExternalImu, ImuFeeder) {
    descriptor.source_kind = SourceKind::ExternalDriver;
    let shared = Arc::new(Mutex::new(Shared {
        slot: Slot::Empty,
        last_timestamp: f64::NEG_INFINITY,
    }));
    (
        ExternalImu {
            descriptor: descriptor.clone(),
            shared: shared.clone(),
        },
        ImuFeeder { descriptor, shared },
    )
}

impl ImuFeeder {
    /// Publishes a sample. Samples must match the declared capabilities and
    /// arrive with strictly increasing timestamps.
    pub fn push(&self, sample: ImuSample) -> Result<(), SensingError> {
        sample.validate(&self.descriptor)?;
        let mut sh = lock(&self.shared);
        match sh.slot {
            Slot::Closed => return Err(SensingError::Closed),
            Slot::Failed(ref r) => return Err(SensingError::Failed(r.clone())),
            _ => {}
        }
        if sample.timestamp <= sh.last_timestamp {
            return Err(SensingError::InvalidSample(format!(
                "timestamp {} does not follow {}",
                sample.timestamp, sh.last_timestamp
            )));
        }
        sh.last_timestamp = sample.timestamp;
        sh.slot = Slot::Ready(sample);
        Ok(())
    }

    /// Marks the source failed; queries report the reason from now on.
    pub fn fail(&self, reason: impl Into<String>) {
        let mut sh = lock(&self.shared);
        if !matches!(sh.slot, Slot::Closed) {
            sh.slot = Slot::Failed(reason.into());
        }
    }
}

impl ImuSource for ExternalImu {
    fn descriptor(&self) -> &ImuSourceDescriptor {
        &self.descriptor
    }

    fn query(&mut self) -> Result<ImuSample, SensingError> {
        match &lock(&self.shared).slot {
            Slot::Empty => Err(SensingError::NoData),
            Slot::Ready(s) => Ok(*s),
            Slot::Failed(r) => Err(SensingError::Failed(r.clone())),
            Slot::Closed => Err(SensingError::Closed),
        }
    }

    fn close(&mut self) {
        lock(&self.shared).slot = Slot::Closed;
    }
}
