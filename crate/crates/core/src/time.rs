//! Monotonic session clocks.
//!
//! Everything timing-related in the crate (bus timestamps, feedback staleness,
//! RMS windows, loop scheduling) reads time through a [`TimeSource`]. The real
//! source wraps [`Instant`]; the virtual source is a shared counter that only
//! moves when someone sleeps on it or advances it explicitly, which makes every
//! timing path testable without real sleeping.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

/// A cloneable handle to a monotonic clock measured from session start.
#[derive(Clone, Debug)]
pub enum TimeSource {
    Real(Arc<Instant>),
    Virtual(Arc<AtomicU64>),
}

impl TimeSource {
    /// Wall-clock backed source; session starts now.
    pub fn real() -> Self {
        TimeSource::Real(Arc::new(Instant::now()))
    }

    /// Test-controlled source starting at zero.
    pub fn virtual_time() -> Self {
        TimeSource::Virtual(Arc::new(AtomicU64::new(0)))
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, TimeSource::Virtual(_))
    }

    /// Elapsed time since session start.
    pub fn now(&self) -> Duration {
        match self {
            TimeSource::Real(start) => start.elapsed(),
            TimeSource::Virtual(nanos) => Duration::from_nanos(nanos.load(Ordering::Acquire)),
        }
    }

    pub fn now_secs(&self) -> f64 {
        self.now().as_secs_f64()
    }

    /// Blocks until `deadline`. Virtual sources jump forward instead of
    /// blocking; they never move backwards.
    pub fn sleep_until(&self, deadline: Duration) {
        match self {
            TimeSource::Real(start) => {
                let elapsed = start.elapsed();
                if deadline > elapsed {
                    std::thread::sleep(deadline - elapsed);
                }
            }
            TimeSource::Virtual(nanos) => {
                nanos.fetch_max(saturating_nanos(deadline), Ordering::AcqRel);
            }
        }
    }

    pub fn sleep(&self, d: Duration) {
        self.sleep_until(self.now() + d);
    }

    /// Moves a virtual clock forward by `d`. No effect on a real clock.
    pub fn advance(&self, d: Duration) {
        if let TimeSource::Virtual(nanos) = self {
            nanos.fetch_add(saturating_nanos(d), Ordering::AcqRel);
        }
    }

    /// Sets a virtual clock to `t` if that is later than the current reading.
    pub fn advance_to(&self, t: Duration) {
        if let TimeSource::Virtual(nanos) = self {
            nanos.fetch_max(saturating_nanos(t), Ordering::AcqRel);
        }
    }
}

impl Default for TimeSource {
    fn default() -> Self {
        TimeSource::real()
    }
}

fn saturating_nanos(d: Duration) -> u64 {
    u64::try_from(d.as_nanos()).unwrap_or(u64::MAX)
}
