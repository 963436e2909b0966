//! Fixed-rate loop scheduling and the maximum-rate benchmark.

mod bench;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::TimeSource;

pub use bench::{
    find_max_rate, probe_group, run_bench, BenchError, BenchParams, BenchTable, MaxRateReport, ProbeOutcome, RateProbe,
    VirtualProbe,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClockError {
    #[error("loop frequency must be positive and finite, got {0} Hz")]
    InvalidFrequency(f64),
    #[error("spin threshold {0:?} is not shorter than the period")]
    InvalidSpinThreshold(Duration),
}

pub const DEFAULT_SPIN_THRESHOLD: Duration = Duration::from_micros(200);
/// Lateness, in periods, beyond which the schedule re-anchors to now.
pub const CATCH_UP_PERIODS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub loop_index: u64,
    /// Time between this wake-up and the previous one, seconds.
    pub actual_period: f64,
    /// Wake-up time minus deadline, seconds.
    pub lateness: f64,
    /// Time spent waiting in this tick, seconds.
    pub slept: f64,
    /// The loop body ran past its deadline.
    pub overrun: bool,
    /// The schedule was re-anchored after falling too far behind.
    pub reanchored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateStats {
    pub mean_period: f64,
    pub period_stddev: f64,
    pub max_lateness: f64,
    pub overrun_count: u64,
    pub tick_count: u64,
    pub skipped_deadlines: u64,
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    ticks: u64,
    sum: f64,
    sum_sq: f64,
    max_lateness: f64,
    overruns: u64,
    skipped: u64,
}

/// Absolute-deadline loop clock. Deadlines advance by exactly one period per
/// tick, so short and long iterations average out to the target rate.
#[derive(Debug, Clone)]
pub struct RateClock {
    time: TimeSource,
    period: Duration,
    spin_threshold: Duration,
    next_deadline: Duration,
    last_wake: Duration,
    loop_index: u64,
    acc: Accumulator,
}

impl RateClock {
    pub fn new(frequency: f64, time: TimeSource) -> Result<Self, ClockError> {
        Self::with_spin_threshold(frequency, time, DEFAULT_SPIN_THRESHOLD)
    }

    pub fn with_spin_threshold(frequency: f64, time: TimeSource, spin_threshold: Duration) -> Result<Self, ClockError> {
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(ClockError::InvalidFrequency(frequency));
        }
        let period = Duration::from_secs_f64(1.0 / frequency);
        if period.is_zero() {
            return Err(ClockError::InvalidFrequency(frequency));
        }
        let now = time.now();
        Ok(RateClock {
            time,
            period,
            spin_threshold,
            next_deadline: now + period,
            last_wake: now,
            loop_index: 0,
            acc: Accumulator::default(),
        })
    }

    pub fn period(&self) -> Duration {
        self.period
    }

    pub fn frequency(&self) -> f64 {
        1.0 / self.period.as_secs_f64()
    }

    pub fn next_deadline(&self) -> Duration {
        self.next_deadline
    }

    pub fn time(&self) -> &TimeSource {
        &self.time
    }

    /// Waits for the next deadline and schedules the one after it.
    pub fn tick(&mut self) -> TickReport {
        let entry = self.time.now();
        let mut deadline = self.next_deadline;
        let overrun = entry > deadline;
        let mut reanchored = false;
        if entry > deadline + self.period * CATCH_UP_PERIODS {
            let missed = (entry - deadline).as_nanos() / self.period.as_nanos();
            self.acc.skipped += missed as u64;
            deadline = entry;
            reanchored = true;
        }
        self.wait_until(deadline);
        let wake = self.time.now();
        let report = TickReport {
            loop_index: self.loop_index,
            actual_period: (wake - self.last_wake).as_secs_f64(),
            lateness: wake.as_secs_f64() - deadline.as_secs_f64(),
            slept: (wake.saturating_sub(entry)).as_secs_f64(),
            overrun,
            reanchored,
        };
        self.next_deadline = deadline + self.period;
        self.last_wake = wake;
        self.loop_index += 1;
        self.record(&report);
        report
    }

    fn wait_until(&self, deadline: Duration) {
        match &self.time {
            TimeSource::Virtual(_) => self.time.sleep_until(deadline),
            TimeSource::Real(_) => {
                let coarse = deadline.saturating_sub(self.spin_threshold);
                if self.time.now() < coarse {
                    self.time.sleep_until(coarse);
                }
                while self.time.now() < deadline {
                    std::hint::spin_loop();
                }
            }
        }
    }

    fn record(&mut self, r: &TickReport) {
        let a = &mut self.acc;
        a.ticks += 1;
        a.sum += r.actual_period;
        a.sum_sq += r.actual_period * r.actual_period;
        a.max_lateness = a.max_lateness.max(r.lateness);
        if r.overrun {
            a.overruns += 1;
        }
    }

    /// Aggregates since construction or the last reset; `None` before the
    /// first tick.
    pub fn stats(&self) -> Option<RateStats> {
        let a = &self.acc;
        if a.ticks == 0 {
            return None;
        }
        let n = a.ticks as f64;
        let mean = a.sum / n;
        let var = (a.sum_sq / n - mean * mean).max(0.0);
        Some(RateStats {
            mean_period: mean,
            period_stddev: var.sqrt(),
            max_lateness: a.max_lateness,
            overrun_count: a.overruns,
            tick_count: a.ticks,
            skipped_deadlines: a.skipped,
        })
    }

    pub fn reset_stats(&mut self) {
        self.acc = Accumulator::default();
    }
}

impl std::fmt::Display for RateStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ticks, mean period {:.4} ms ({:.2} Hz), stddev {:.4} ms, max lateness {:.4} ms, {} overruns",
            self.tick_count,
            self.mean_period * 1e3,
            1.0 / self.mean_period,
            self.period_stddev * 1e3,
            self.max_lateness * 1e3,
            self.overrun_count
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vclock(hz: f64) -> RateClock {
        RateClock::new(hz, TimeSource::virtual_time()).unwrap()
    }

    #[test]
    fn construction() {
        assert_eq!(vclock(200.0).period(), Duration::from_millis(5));
        assert_eq!(vclock(100.0).period(), Duration::from_millis(10));
        for bad in [0.0, -5.0, f64::NAN, f64::INFINITY] {
            assert!(RateClock::new(bad, TimeSource::virtual_time()).is_err());
        }
        assert!(vclock(200.0).stats().is_none());
    }

    #[test]
    fn deadlines_do_not_drift() {
        let mut c = vclock(200.0);
        let start = c.time().now();
        for k in 1..=1000u32 {
            let r = c.tick();
            assert!(!r.overrun);
            assert_eq!(c.time().now(), start + Duration::from_millis(5) * k);
        }
        let s = c.stats().unwrap();
        assert_eq!(s.tick_count, 1000);
        assert!((s.mean_period - 0.005).abs() < 1e-12);
    }

    #[test]
    fn stall_shortens_next_sleep() {
        let mut c = vclock(200.0);
        for _ in 0..10 {
            c.tick();
        }
        c.time().advance(Duration::from_millis(3));
        let r = c.tick();
        assert!((r.slept - 0.002).abs() < 1e-12);
        assert!((r.actual_period - 0.005).abs() < 1e-12);

        // a stall longer than the period overruns, then the schedule catches up
        c.time().advance(Duration::from_millis(7));
        let r = c.tick();
        assert!(r.overrun);
        assert!((r.actual_period - 0.007).abs() < 1e-12);
        assert!((r.lateness - 0.002).abs() < 1e-12);
        let next = c.tick();
        assert!((next.actual_period - 0.003).abs() < 1e-12);
        c.reset_stats();
        for _ in 0..10 {
            c.tick();
        }
        let s = c.stats().unwrap();
        assert!((s.mean_period - 0.005).abs() <= 0.001 * 0.005);
    }

    #[test]
    fn long_stall_reanchors() {
        let mut c = vclock(200.0);
        c.tick();
        c.time().advance(Duration::from_millis(100));
        let r = c.tick();
        assert!(r.overrun && r.reanchored);
        assert_eq!(r.lateness, 0.0);
        let r = c.tick();
        assert!(!r.overrun);
        assert!((r.actual_period - 0.005).abs() < 1e-12);
        let s = c.stats().unwrap();
        assert_eq!(s.overrun_count, 1);
        assert!(s.skipped_deadlines >= 19);
    }

    #[test]
    fn persistent_overrun_is_flagged_every_tick() {
        let mut c = vclock(200.0);
        for _ in 0..50 {
            c.time().advance(Duration::from_millis(6));
            assert!(c.tick().overrun);
        }
        let s = c.stats().unwrap();
        assert_eq!(s.overrun_count, 50);
        assert!(s.tick_count >= s.overrun_count);
    }

    #[test]
    fn mean_is_sum_over_count() {
        let mut c = vclock(300.0);
        let mut sum = 0.0;
        for k in 0..100u64 {
            c.time().advance(Duration::from_micros(k * 37 % 5000));
            sum += c.tick().actual_period;
        }
        assert_eq!(c.stats().unwrap().mean_period, sum / 100.0);
    }

    #[test]
    fn real_clock_never_wakes_early() {
        let mut c = RateClock::new(1000.0, TimeSource::real()).unwrap();
        for _ in 0..50 {
            let deadline = c.next_deadline();
            let r = c.tick();
            assert!(c.time().now() >= deadline);
            assert!(r.lateness >= 0.0);
            assert!(r.actual_period > 0.0);
        }
    }
}
