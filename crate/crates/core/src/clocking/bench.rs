use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ClockError, RateClock};
use crate::actuation::{ActuatorGroup, GroupError, SafetyConfig};
use crate::bus::{BusError, CanBus, VirtualBus, VirtualOptions};
use crate::simulation::{ActuatorParams, ReplyMode, VirtualFleet};
use crate::time::TimeSource;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("simulation: {0}")]
    Sim(String),
}

/// Search space and dwell times for [`find_max_rate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchParams {
    pub lo: f64,
    pub hi: f64,
    pub resolution: f64,
    /// Seconds each candidate must be sustained.
    pub dwell: f64,
    /// Seconds the winner is re-run for.
    pub validation_dwell: f64,
    /// Fraction of overrunning loops that fails a candidate.
    pub max_overrun_fraction: f64,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            lo: 50.0,
            hi: 9000.0,
            resolution: 100.0,
            dwell: 2.0,
            validation_dwell: 30.0,
            max_overrun_fraction: 0.01,
        }
    }
}

impl BenchParams {
    /// Long-run settings: 60 s per probe, five-minute validation.
    pub fn full_scale() -> Self {
        BenchParams {
            dwell: 60.0,
            validation_dwell: 300.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let finite = [self.lo, self.hi, self.resolution, self.dwell, self.validation_dwell]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lo <= 0.0 || self.lo >= self.hi {
            return Err(BenchError::Params(format!(
                "need 0 < lo < hi, got {} and {}",
                self.lo, self.hi
            )));
        }
        if self.resolution <= 0.0 || self.dwell <= 0.0 || self.validation_dwell < 0.0 {
            return Err(BenchError::Params("resolution and dwell must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.max_overrun_fraction) {
            return Err(BenchError::Params(format!(
                "overrun fraction {} outside [0, 1)",
                self.max_overrun_fraction
            )));
        }
        Ok(())
    }

    /// Upper bound on search rounds, counting the initial probe of `lo`.
    pub fn max_rounds(&self) -> u32 {
        ((self.hi - self.lo) / self.resolution).log2().ceil().max(0.0) as u32 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub frequency: f64,
    pub loops: u64,
    pub overruns: u64,
    pub backpressure: bool,
    pub passed: bool,
}

/// Runs one candidate frequency for a dwell and reports whether it held.
pub trait RateProbe {
    fn probe(&mut self, frequency: f64, dwell: f64, max_overrun_fraction: f64) -> Result<ProbeOutcome, BenchError>;
}

/// Command-all-actuators loop on an actuator group at `frequency`.
pub fn probe_group(
    group: &mut ActuatorGroup,
    frequency: f64,
    dwell: f64,
    max_overrun_fraction: f64,
) -> Result<ProbeOutcome, BenchError> {
    let mut clock = RateClock::new(frequency, group.time().clone())?;
    let loops = (dwell * frequency).ceil().max(1.0) as u64;
    let ids = group.can_ids();
    let mut backpressure = false;
    'run: for _ in 0..loops {
        for &id in &ids {
            match group.command_torque(id, 0.0) {
                Ok(_) => {}
                Err(GroupError::Bus(BusError::Backpressure)) => {
                    backpressure = true;
                    break 'run;
                }
                Err(e) => return Err(e.into()),
            }
        }
        clock.tick();
    }
    let stats = clock.stats();
    let done = stats.map_or(0, |s| s.tick_count);
    let overruns = stats.map_or(0, |s| s.overrun_count);
    let passed = !backpressure && (overruns as f64) <= max_overrun_fraction * loops as f64;
    Ok(ProbeOutcome {
        frequency,
        loops: done,
        overruns,
        backpressure,
        passed,
    })
}

/// Probes against a fresh virtual channel per candidate, with a simulated
/// fleet and the virtual session clock, so results are deterministic.
#[derive(Debug, Clone)]
pub struct VirtualProbe {
    pub options: VirtualOptions,
    pub n_actuators: u32,
    pub model: String,
}

impl VirtualProbe {
    pub fn new(capacity_fps: f64, n_actuators: u32) -> Self {
        VirtualProbe {
            options: VirtualOptions {
                capacity_fps: Some(capacity_fps),
                ..Default::default()
            },
            n_actuators,
            model: "AK80-9".into(),
        }
    }
}

impl RateProbe for VirtualProbe {
    fn probe(&mut self, frequency: f64, dwell: f64, max_overrun_fraction: f64) -> Result<ProbeOutcome, BenchError> {
        let time = TimeSource::virtual_time();
        let opts = VirtualOptions {
            exclusive: false,
            log_frames: false,
            ..self.options.clone()
        };
        let bus = Arc::new(VirtualBus::open(&VirtualBus::unique_name("bench"), opts, time.clone())?);
        let roster: Vec<(&str, u32)> = (1..=self.n_actuators).map(|id| (self.model.as_str(), id)).collect();
        let fleet = VirtualFleet::from_roster(&roster, ActuatorParams::fixture(), 0.001, ReplyMode::PerCommand)
            .map_err(|e| BenchError::Sim(e.to_string()))?;
        fleet.attach(&bus);
        let safety = SafetyConfig {
            warn_on_rated_exceeded: false,
            ..SafetyConfig::for_frequency(frequency)
        };
        let handle: Arc<dyn CanBus> = bus;
        let mut group = ActuatorGroup::with_bus(&roster, handle, safety)?;
        if let Some((id, Err(e))) = group.enable_all().into_iter().find(|(_, r)| r.is_err()) {
            return Err(BenchError::Params(format!("actuator {id} failed to enable: {e}")));
        }
        // let the enable burst drain from the transmit budget
        time.advance(Duration::from_secs(1));
        probe_group(&mut group, frequency, dwell, max_overrun_fraction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxRateReport {
    pub n_actuators: u32,
    /// Highest passing frequency; `None` when even `lo` failed.
    pub max_hz: Option<f64>,
    pub rounds: u32,
    pub validated: bool,
    pub probes: Vec<ProbeOutcome>,
}

/// Binary search for the highest sustainable loop rate.
///
/// `lo` is probed first; after that the interval is bisected until it is
/// narrower than the resolution. The winner is re-run for the validation
/// dwell.
pub fn find_max_rate(
    probe: &mut dyn RateProbe,
    n_actuators: u32,
    params: &BenchParams,
) -> Result<MaxRateReport, BenchError> {
    params.validate()?;
    if n_actuators == 0 {
        return Err(BenchError::Params("need at least one actuator".into()));
    }
    let mut probes = Vec::new();
    let mut run = |f: f64, dwell: f64, probes: &mut Vec<ProbeOutcome>| -> Result<bool, BenchError> {
        let out = probe.probe(f, dwell, params.max_overrun_fraction)?;
        log::info!(
            "{n_actuators} actuator(s) @ {f:.1} Hz: {} ({} loops, {} overruns{})",
            if out.passed { "pass" } else { "fail" },
            out.loops,
            out.overruns,
            if out.backpressure { ", backpressure" } else { "" }
        );
        probes.push(out);
        Ok(out.passed)
    };

    let mut rounds = 1;
    if !run(params.lo, params.dwell, &mut probes)? {
        return Ok(MaxRateReport {
            n_actuators,
            max_hz: None,
            rounds,
            validated: false,
            probes,
        });
    }
    let (mut lo, mut hi) = (params.lo, params.hi);
    while hi - lo >= params.resolution {
        let mid = 0.5 * (lo + hi);
        rounds += 1;
        if run(mid, params.dwell, &mut probes)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let validated = params.validation_dwell == 0.0 || run(lo, params.validation_dwell, &mut probes)?;
    Ok(MaxRateReport {
        n_actuators,
        max_hz: Some(lo),
        rounds,
        validated,
        probes,
    })
}

/// One row per actuator count, in the order given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<MaxRateReport>,
}

impl BenchTable {
    pub fn is_monotone_non_increasing(&self) -> bool {
        let mut rows: Vec<_> = self.rows.iter().collect();
        rows.sort_by_key(|r| r.n_actuators);
        rows.windows(2)
            .all(|w| w[1].max_hz.unwrap_or(0.0) <= w[0].max_hz.unwrap_or(0.0))
    }
}

impl fmt::Display for BenchTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>10}  {:>10}  {:>6}  {:>9}",
            "actuators", "max_hz", "rounds", "validated"
        )?;
        for r in &self.rows {
            let hz = r.max_hz.map_or_else(|| "<lo".to_string(), |h| format!("{h:.1}"));
            writeln!(
                f,
                "{:>10}  {:>10}  {:>6}  {:>9}",
                r.n_actuators, hz, r.rounds, r.validated
            )?;
        }
        Ok(())
    }
}

/// Runs [`find_max_rate`] for each actuator count with probes from `make`.
pub fn run_bench<P: RateProbe>(
    counts: &[u32],
    params: &BenchParams,
    mut make: impl FnMut(u32) -> P,
) -> Result<BenchTable, BenchError> {
    let mut rows = Vec::with_capacity(counts.len());
    for &n in counts {
        let mut probe = make(n);
        rows.push(find_max_rate(&mut probe, n, params)?);
    }
    Ok(BenchTable { rows })
}
