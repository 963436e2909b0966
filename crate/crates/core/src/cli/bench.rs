use std::io::Write;
use std::sync::Arc;

use super::CliError;
use crate::actuation::{ActuatorGroup, SafetyConfig};
use crate::bus::{self, Backend, BusConfig, CanBus};
use crate::clocking::{
    probe_group, run_bench, BenchError, BenchParams, BenchTable, ProbeOutcome, RateProbe, VirtualProbe,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub bus: BusConfig,
    pub counts: Vec<u32>,
    pub params: BenchParams,
    pub model: String,
}

/// Probes a real interface with a group of `n` actuators at IDs 1..=n.
pub struct GroupProbe {
    pub bus: BusConfig,
    pub model: String,
    pub n_actuators: u32,
}

impl RateProbe for GroupProbe {
    fn probe(&mut self, frequency: f64, dwell: f64, max_overrun_fraction: f64) -> Result<ProbeOutcome, BenchError> {
        let roster: Vec<(&str, u32)> = (1..=self.n_actuators).map(|id| (self.model.as_str(), id)).collect();
        let handle: Arc<dyn CanBus> = Arc::from(bus::open(&self.bus)?);
        let safety = SafetyConfig {
            warn_on_rated_exceeded: false,
            ..SafetyConfig::for_frequency(frequency)
        };
        let mut group = ActuatorGroup::with_bus(&roster, handle, safety)?;
        if let Some((id, Err(e))) = group.enable_all().into_iter().find(|(_, r)| r.is_err()) {
            group.disable_all();
            return Err(BenchError::Params(format!("actuator {id} failed to enable: {e}")));
        }
        let r = probe_group(&mut group, frequency, dwell, max_overrun_fraction);
        group.disable_all();
        r
    }
}

pub fn cmd_bench(cfg: &BenchConfig, out: &mut dyn Write) -> Result<BenchTable, CliError> {
    let err = |e: BenchError| match e {
        BenchError::Params(m) => CliError::Config(m),
        e => CliError::Runtime(e.to_string()),
    };
    cfg.params.validate().map_err(err)?;
    cfg.bus.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.counts.is_empty() || cfg.counts.contains(&0) {
        return Err(CliError::Config("actuator counts must be positive".into()));
    }
    crate::protocol::lookup_model(&cfg.model).map_err(|e| CliError::Config(e.to_string()))?;
    let table = match cfg.bus.backend {
        Backend::Virtual => {
            if cfg.bus.virtual_options.capacity_fps.is_none() {
                log::warn!("virtual bus has no capacity limit; every probe up to hi will pass");
            }
            run_bench(&cfg.counts, &cfg.params, |n| VirtualProbe {
                options: cfg.bus.virtual_options.clone(),
                n_actuators: n,
                model: cfg.model.clone(),
            })
        }
        Backend::OsSocket => run_bench(&cfg.counts, &cfg.params, |n| GroupProbe {
            bus: cfg.bus.clone(),
            model: cfg.model.clone(),
            n_actuators: n,
        }),
    }
    .map_err(err)?;
    let _ = write!(out, "{table}");
    Ok(table)
}
