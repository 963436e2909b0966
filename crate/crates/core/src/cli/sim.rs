use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use super::config::{anchor, validate_roster, RosterEntry};
use super::CliError;
use crate::bus::{self, Backend, BusConfig, VirtualBus};
use crate::simulation::{ReplyMode, SimConfig, VirtualFleet};
use crate::time::TimeSource;

pub fn load_sim_config(path: &Path) -> Result<SimConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_sim_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_sim_config(text: &str) -> Result<SimConfig, CliError> {
    let cfg: SimConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let roster: Vec<RosterEntry> = cfg
        .actuators
        .iter()
        .map(|a| RosterEntry {
            model: a.model.clone(),
            can_id: a.can_id,
        })
        .collect();
    validate_roster(&roster).map_err(|e| anchor(text, e))?;
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn build_fleet(cfg: &SimConfig) -> Result<VirtualFleet, CliError> {
    let fleet = VirtualFleet::new(cfg.step, ReplyMode::PerCommand).map_err(|e| CliError::Config(e.to_string()))?;
    for a in cfg.build_actuators().map_err(|e| CliError::Config(e.to_string()))? {
        fleet.add(a).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(fleet)
}

/// Serves a simulated fleet on `bus` until `stop` is set or `duration`
/// elapses. On a virtual channel the fleet answers in-process; other
/// contexts reach it by opening the same channel name.
pub fn cmd_sim(
    cfg: &SimConfig,
    bus_cfg: &BusConfig,
    stop: &AtomicBool,
    duration: Option<f64>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let fleet = build_fleet(cfg)?;
    let print_roster = |out: &mut dyn Write| {
        let _ = writeln!(out, "serving {} simulated actuators on {bus_cfg}", cfg.actuators.len());
        for a in &cfg.actuators {
            let _ = writeln!(out, "  can_id {:>4}  {}", a.can_id, a.model);
        }
        let _ = out.flush();
    };
    let started = Instant::now();
    let done = || stop.load(Ordering::Acquire) || duration.is_some_and(|d| started.elapsed().as_secs_f64() >= d);
    match bus_cfg.backend {
        Backend::Virtual => {
            let vb = VirtualBus::open(
                &bus_cfg.interface_name,
                bus_cfg.virtual_options.clone(),
                TimeSource::real(),
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            let rid = fleet.attach(&vb);
            print_roster(out);
            while !done() {
                std::thread::sleep(Duration::from_millis(10));
            }
            vb.detach_responder(rid);
        }
        Backend::OsSocket => {
            let handle = bus::open(bus_cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
            print_roster(out);
            let until = AtomicBool::new(false);
            std::thread::scope(|s| {
                s.spawn(|| {
                    while !done() {
                        std::thread::sleep(Duration::from_millis(10));
                    }
                    until.store(true, Ordering::Release);
                });
                fleet.serve(handle.as_ref(), &until, None)
            })
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    let _ = writeln!(out, "simulation stopped after {:.3} s", started.elapsed().as_secs_f64());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors() {
        let dup = "[[actuators]]\nmodel = \"AK80-9\"\ncan_id = 1\n\n[[actuators]]\nmodel = \"AK80-9\"\ncan_id = 1\n";
        let e = parse_sim_config(dup).unwrap_err();
        assert!(e.to_string().starts_with("line 7: duplicate can_id 1"), "{e}");
        assert_eq!(e.exit_code(), 2);
        let e = parse_sim_config("actuators = []\n").unwrap_err();
        assert!(e.to_string().contains("empty"));
        assert!(parse_sim_config("actuators = [\n")
            .unwrap_err()
            .to_string()
            .contains("line"));
    }
}
