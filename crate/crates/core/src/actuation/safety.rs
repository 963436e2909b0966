use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::mpsc::{channel, Receiver, Sender};

use serde::{Deserialize, Serialize};

use super::GroupError;

/// Torque limiting and monitoring options for an actuator group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyConfig {
    pub saturate_to_rated: bool,
    pub thermal_autolimit: bool,
    /// Seconds.
    pub rms_window: f64,
    pub warn_on_rated_exceeded: bool,
    /// Maximum feedback age before state is flagged stale, seconds.
    pub staleness_window: f64,
    /// Autolimit releases once RMS drops below `threshold × release_hysteresis`.
    pub release_hysteresis: f64,
    /// RMS level that engages the autolimit; the model's rated torque when unset.
    pub thermal_threshold: Option<f64>,
}

pub const DEFAULT_RMS_WINDOW: f64 = 20.0;
pub const DEFAULT_RELEASE_HYSTERESIS: f64 = 0.95;
/// Staleness window expressed in control periods.
pub const STALENESS_PERIODS: f64 = 5.0;

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig {
            saturate_to_rated: false,
            thermal_autolimit: false,
            rms_window: DEFAULT_RMS_WINDOW,
            warn_on_rated_exceeded: true,
            staleness_window: STALENESS_PERIODS / 200.0,
            release_hysteresis: DEFAULT_RELEASE_HYSTERESIS,
            thermal_threshold: None,
        }
    }
}

impl SafetyConfig {
    /// Defaults with the staleness window sized for a loop at `frequency` Hz.
    pub fn for_frequency(frequency: f64) -> Self {
        SafetyConfig {
            staleness_window: STALENESS_PERIODS / frequency,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GroupError> {
        let bad = |what: String| Err(GroupError::InvalidConfig(what));
        if !(self.rms_window > 0.0 && self.rms_window.is_finite()) {
            return bad(format!("rms_window must be positive, got {}", self.rms_window));
        }
        if !(self.staleness_window > 0.0 && self.staleness_window.is_finite()) {
            return bad(format!(
                "staleness_window must be positive, got {}",
                self.staleness_window
            ));
        }
        if !(self.release_hysteresis > 0.0 && self.release_hysteresis <= 1.0) {
            return bad(format!(
                "release_hysteresis must lie in (0, 1], got {}",
                self.release_hysteresis
            ));
        }
        if let Some(t) = self.thermal_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("thermal_threshold must be positive, got {t}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SafetyEventKind {
    RatedExceededWarning,
    ThermalLimitEngaged,
    ThermalLimitReleased,
    StaleFeedback,
}

impl fmt::Display for SafetyEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SafetyEventKind::RatedExceededWarning => "rated-exceeded",
            SafetyEventKind::ThermalLimitEngaged => "thermal-limit-engaged",
            SafetyEventKind::ThermalLimitReleased => "thermal-limit-released",
            SafetyEventKind::StaleFeedback => "stale-feedback",
        };
        f.write_str(s)
    }
}

/// A safety notification. `value` is the requested torque for warnings, the
/// RMS torque for thermal transitions and the feedback age for staleness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyEvent {
    pub kind: SafetyEventKind,
    pub can_id: u32,
    pub value: f64,
    pub timestamp: f64,
}

impl fmt::Display for SafetyEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={:.3}s actuator {}: {} ({:.3})",
            self.timestamp, self.can_id, self.kind, self.value
        )
    }
}

/// Fans events out to subscribers and writes rate-limited log lines.
#[derive(Debug, Default)]
pub(crate) struct EventHub {
    subscribers: Vec<Sender<SafetyEvent>>,
    last_logged: HashMap<(u32, SafetyEventKind), f64>,
    counts: HashMap<SafetyEventKind, u64>,
}

const LOG_INTERVAL: f64 = 1.0;

impl EventHub {
    pub fn subscribe(&mut self) -> Receiver<SafetyEvent> {
        let (tx, rx) = channel();
        self.subscribers.push(tx);
        rx
    }

    pub fn emit(&mut self, ev: SafetyEvent) {
        self.subscribers.retain(|s| s.send(ev).is_ok());
        *self.counts.entry(ev.kind).or_default() += 1;
        let key = (ev.can_id, ev.kind);
        let due = self
            .last_logged
            .get(&key)
            .is_none_or(|&t| ev.timestamp - t >= LOG_INTERVAL);
        if due {
            self.last_logged.insert(key, ev.timestamp);
            log::warn!("{ev}");
        }
    }

    pub fn count(&self, kind: SafetyEventKind) -> u64 {
        self.counts.get(&kind).copied().unwrap_or(0)
    }
}

/// Trailing-window, time-weighted RMS of a piecewise-constant torque signal.
///
/// Each sample holds until the next one. Until the window has first filled,
/// the mean is taken over the time elapsed since the first sample.
#[derive(Debug, Clone)]
pub struct RmsMonitor {
    window: f64,
    /// (sequence, time, τ²)
    samples: VecDeque<(u64, f64, f64)>,
    /// ∫τ² over the closed segments between consecutive samples.
    closed: f64,
    /// Decreasing τ² values for the window maximum.
    peaks: VecDeque<(u64, f64)>,
    first: Option<f64>,
    sequence: u64,
}

const RESUM_EVERY: u64 = 1024;

impl RmsMonitor {
    pub fn new(window: f64) -> Self {
        assert!(window > 0.0, "RMS window must be positive");
        RmsMonitor {
            window,
            samples: VecDeque::new(),
            closed: 0.0,
            peaks: VecDeque::new(),
            first: None,
            sequence: 0,
        }
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Records torque `tau` starting at time `t`. Times earlier than the last
    /// sample are treated as simultaneous with it.
    pub fn push(&mut self, t: f64, tau: f64) {
        let v = tau * tau;
        let t = match self.samples.back() {
            Some(&(_, last_t, last_v)) => {
                let t = t.max(last_t);
                self.closed += last_v * (t - last_t);
                t
            }
            None => t,
        };
        self.first.get_or_insert(t);
        self.sequence += 1;
        self.samples.push_back((self.sequence, t, v));
        while self.peaks.back().is_some_and(|&(_, p)| p <= v) {
            self.peaks.pop_back();
        }
        self.peaks.push_back((self.sequence, v));
        self.evict(t);
        if self.sequence.is_multiple_of(RESUM_EVERY) {
            self.closed = self
                .samples
                .iter()
                .zip(self.samples.iter().skip(1))
                .map(|(a, b)| a.2 * (b.1 - a.1))
                .sum();
        }
    }

    fn evict(&mut self, now: f64) {
        let start = now - self.window;
        while self.samples.len() >= 2 && self.samples[1].1 <= start {
            let (_, t0, v0) = self.samples.pop_front().expect("len checked");
            self.closed -= v0 * (self.samples[0].1 - t0);
        }
        if let Some(&(front, _, _)) = self.samples.front() {
            while self.peaks.front().is_some_and(|&(s, _)| s < front) {
                self.peaks.pop_front();
            }
        }
    }

    /// RMS torque over the window ending at `now`, in Nm. Zero before any
    /// sample.
    pub fn rms(&mut self, now: f64) -> f64 {
        let (Some(first), Some(&(_, t_last, v_last))) = (self.first, self.samples.back()) else {
            return 0.0;
        };
        let now = now.max(t_last);
        self.evict(now);
        let start = now - self.window;
        let (_, t0, v0) = self.samples[0];
        let integral = self.closed + v_last * (now - t_last) - v0 * (start - t0).max(0.0);
        let span = self.window.min(now - first);
        let peak = self.peaks.front().map_or(0.0, |p| p.1).sqrt();
        if span <= 0.0 {
            return v_last.sqrt();
        }
        (integral.max(0.0) / span).sqrt().min(peak)
    }

    /// Largest |τ| among samples still inside the window.
    pub fn max_abs(&self) -> f64 {
        self.peaks.front().map_or(0.0, |p| p.1).sqrt()
    }

    pub fn reset(&mut self) {
        *self = RmsMonitor::new(self.window);
    }
}

/// Per-actuator safety state: the RMS monitor and thermal latch.
#[derive(Debug, Clone)]
pub(crate) struct ActuatorSafety {
    pub monitor: RmsMonitor,
    pub engaged: bool,
}

impl ActuatorSafety {
    pub fn new(window: f64) -> Self {
        ActuatorSafety {
            monitor: RmsMonitor::new(window),
            engaged: false,
        }
    }

    /// Runs the limiting pipeline without recording a monitor sample.
    pub fn filter(
        &mut self,
        cfg: &SafetyConfig,
        rated: f64,
        peak: f64,
        can_id: u32,
        requested: f64,
        now: f64,
    ) -> (f64, Vec<SafetyEvent>) {
        let mut events = Vec::new();
        let mut event = |kind, value| {
            events.push(SafetyEvent {
                kind,
                can_id,
                value,
                timestamp: now,
            })
        };
        let req = if requested.is_nan() { 0.0 } else { requested };
        let mut tau = req.clamp(-peak, peak);
        if cfg.saturate_to_rated {
            tau = tau.clamp(-rated, rated);
        }
        if cfg.thermal_autolimit {
            let threshold = cfg.thermal_threshold.unwrap_or(rated);
            let rms = self.monitor.rms(now);
            if !self.engaged && rms >= threshold {
                self.engaged = true;
                event(SafetyEventKind::ThermalLimitEngaged, rms);
            } else if self.engaged && rms < threshold * cfg.release_hysteresis {
                self.engaged = false;
                event(SafetyEventKind::ThermalLimitReleased, rms);
            }
            if self.engaged {
                tau = tau.clamp(-rated, rated);
            }
        } else if self.engaged {
            self.engaged = false;
        }
        if cfg.warn_on_rated_exceeded && req.abs() > rated {
            event(SafetyEventKind::RatedExceededWarning, req);
        }
        (tau, events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Left-Riemann oracle over the same sample times, independent of the
    /// running-sum bookkeeping.
    fn oracle(samples: &[(f64, f64)], now: f64, window: f64) -> f64 {
        let start = (now - window).max(samples[0].0);
        let mut acc = 0.0;
        for (i, &(t, tau)) in samples.iter().enumerate() {
            let end = samples.get(i + 1).map_or(now, |s| s.0).min(now);
            let begin = t.max(start);
            if end > begin {
                acc += tau * tau * (end - begin);
            }
        }
        (acc / (now - start)).sqrt()
    }

    #[test]
    fn empty_monitor_reads_zero() {
        assert_eq!(RmsMonitor::new(20.0).rms(5.0), 0.0);
    }

    #[test]
    fn constant_torque_is_exact() {
        let mut m = RmsMonitor::new(20.0);
        for k in 0..5000 {
            m.push(k as f64 * 0.005, 5.0);
        }
        assert!((m.rms(25.0) - 5.0).abs() <= 1e-9);
    }

    #[test]
    fn square_wave() {
        let mut m = RmsMonitor::new(20.0);
        for k in 0..5000 {
            m.push(k as f64 * 0.005, if (k / 10) % 2 == 0 { 5.0 } else { -5.0 });
        }
        assert!((m.rms(25.0) - 5.0).abs() <= 1e-9);
    }

    #[test]
    fn sine_matches_oracle() {
        let mut m = RmsMonitor::new(20.0);
        let mut samples = Vec::new();
        for k in 0..6000 {
            let t = k as f64 * 0.005;
            let tau = 6.0 * (2.0 * std::f64::consts::PI * t).sin();
            m.push(t, tau);
            samples.push((t, tau));
        }
        let got = m.rms(30.0);
        let want = oracle(&samples, 30.0, 20.0);
        assert!((got - want).abs() < 1e-9 * want, "{got} vs {want}");
        assert!((got - 6.0 / 2f64.sqrt()).abs() < 0.01 * 4.243);
    }

    #[test]
    fn warm_up_uses_elapsed_time() {
        let mut m = RmsMonitor::new(20.0);
        m.push(0.0, 4.0);
        m.push(1.0, 0.0);
        // 16 Nm²·s over 2 s elapsed
        assert!((m.rms(2.0) - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn old_samples_leave_the_window() {
        let mut m = RmsMonitor::new(1.0);
        m.push(0.0, 10.0);
        m.push(0.5, 1.0);
        assert_eq!(m.rms(5.0), 1.0);
        assert_eq!(m.max_abs(), 1.0);
    }

    #[test]
    fn pipeline_clamps_and_warns() {
        let cfg = SafetyConfig {
            saturate_to_rated: true,
            ..Default::default()
        };
        let mut s = ActuatorSafety::new(20.0);
        let (tau, ev) = s.filter(&cfg, 9.0, 18.0, 1, 18.0, 0.0);
        assert_eq!(tau, 9.0);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, SafetyEventKind::RatedExceededWarning);

        let (tau, ev) = s.filter(&SafetyConfig::default(), 9.0, 18.0, 1, 54.0, 0.0);
        assert_eq!(tau, 18.0);
        assert_eq!(ev[0].value, 54.0);

        let (tau, ev) = s.filter(&SafetyConfig::default(), 9.0, 18.0, 1, f64::NAN, 0.0);
        assert_eq!(tau, 0.0);
        assert!(ev.is_empty());
    }

    #[test]
    fn autolimit_hysteresis() {
        let cfg = SafetyConfig {
            thermal_autolimit: true,
            rms_window: 1.0,
            warn_on_rated_exceeded: false,
            ..Default::default()
        };
        let mut s = ActuatorSafety::new(1.0);
        let mut engaged = 0;
        let mut released = 0;
        let mut t = 0.0;
        let mut run = |s: &mut ActuatorSafety, req: f64, secs: f64, t: &mut f64| {
            let mut out = 0.0;
            for _ in 0..(secs / 0.01) as usize {
                let (tau, ev) = s.filter(&cfg, 10.0, 20.0, 1, req, *t);
                s.monitor.push(*t, tau);
                for e in ev {
                    match e.kind {
                        SafetyEventKind::ThermalLimitEngaged => engaged += 1,
                        SafetyEventKind::ThermalLimitReleased => released += 1,
                        _ => {}
                    }
                }
                out = tau;
                *t += 0.01;
            }
            out
        };
        assert_eq!(run(&mut s, 15.0, 3.0, &mut t), 10.0);
        // 9.7 Nm sits inside the hysteresis band, so the latch holds
        assert_eq!(run(&mut s, 9.7, 3.0, &mut t), 9.7);
        assert!(s.engaged);
        run(&mut s, 5.0, 3.0, &mut t);
        assert!(!s.engaged);
        assert_eq!((engaged, released), (1, 1));
    }

    #[test]
    fn config_validation() {
        assert!(SafetyConfig::default().validate().is_ok());
        let c = SafetyConfig {
            rms_window: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = SafetyConfig {
            staleness_window: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!((SafetyConfig::for_frequency(200.0).staleness_window - 0.025).abs() < 1e-15);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rms_bounded_by_window_max(
                steps in prop::collection::vec((0.001f64..0.5, -50.0f64..50.0), 1..200),
                window in 0.1f64..5.0,
                tail in 0.0f64..2.0,
            ) {
                let mut m = RmsMonitor::new(window);
                let mut t = 0.0;
                for &(dt, tau) in &steps {
                    m.push(t, tau);
                    t += dt;
                }
                let now = t + tail;
                let r = m.rms(now);
                prop_assert!(r >= 0.0);
                prop_assert!(r <= m.max_abs());
            }

            #[test]
            fn applied_never_exceeds_peak(req in -1e6f64..1e6, sat: bool, auto: bool) {
                let cfg = SafetyConfig { saturate_to_rated: sat, thermal_autolimit: auto, ..Default::default() };
                let mut s = ActuatorSafety::new(20.0);
                let (tau, _) = s.filter(&cfg, 9.0, 18.0, 1, req, 0.0);
                prop_assert!(tau.abs() <= 18.0);
                if sat { prop_assert!(tau.abs() <= 9.0); }
            }
        }
    }
}
