use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::controllers::ControllerKind;
use super::CliError;
use crate::actuation::SafetyConfig;
use crate::bus::{Backend, BusConfig};
use crate::protocol::lookup_model;
use crate::recorder::RecorderOptions;
use crate::simulation::{default_step, ActuatorParams};

/// One `(model, can_id)` pair. Parses from `MODEL:ID`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub model: String,
    pub can_id: u32,
}

impl FromStr for RosterEntry {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (model, id) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("expected MODEL:ID, got {s:?}"))?;
        let can_id = parse_id(id.trim()).ok_or_else(|| format!("bad CAN id {id:?}"))?;
        if model.is_empty() {
            return Err(format!("missing model in {s:?}"));
        }
        Ok(RosterEntry {
            model: model.to_string(),
            can_id,
        })
    }
}

impl fmt::Display for RosterEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.model, self.can_id)
    }
}

fn parse_id(s: &str) -> Option<u32> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

/// Physics of the in-process fleet spawned on virtual buses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetSettings {
    pub step: f64,
    pub params: ActuatorParams,
}

impl Default for FleetSettings {
    fn default() -> Self {
        FleetSettings {
            step: default_step(),
            params: ActuatorParams::fixture(),
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub bus: BusConfig,
    /// Drive the loop from the virtual clock instead of the wall clock.
    /// Virtual buses only.
    #[serde(default)]
    pub virtual_time: bool,
    /// On a virtual bus, attach a simulated fleet built from the roster.
    #[serde(default = "yes")]
    pub spawn_fleet: bool,
    #[serde(default)]
    pub fleet: FleetSettings,
    /// Hz
    pub frequency: f64,
    /// Seconds.
    pub duration: f64,
    /// `HOST:PORT`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telemetry: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<PathBuf>,
    #[serde(default)]
    pub recorder: RecorderOptions,
    #[serde(default)]
    pub safety: SafetyConfig,
    pub controller: ControllerKind,
    pub actuators: Vec<RosterEntry>,
}

impl RunConfig {
    pub fn new(actuators: Vec<RosterEntry>, controller: ControllerKind, frequency: f64, duration: f64) -> Self {
        RunConfig {
            bus: BusConfig::default(),
            virtual_time: false,
            spawn_fleet: true,
            fleet: FleetSettings::default(),
            frequency,
            duration,
            telemetry: None,
            record: None,
            recorder: RecorderOptions::default(),
            safety: SafetyConfig::for_frequency(frequency),
            controller,
            actuators,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate().map_err(|e| anchor(text, e))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return bad(format!("frequency must be positive, got {}", self.frequency));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be non-negative, got {}", self.duration));
        }
        validate_roster(&self.actuators)?;
        for a in &self.actuators {
            let model = lookup_model(&a.model).map_err(|e| CliError::Config(e.to_string()))?;
            self.controller
                .validate_for(model)
                .map_err(|m| CliError::Config(format!("actuator {}: {m}", a.can_id)))?;
        }
        self.bus.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.virtual_time && self.bus.backend != Backend::Virtual {
            return bad("virtual_time requires a virtual bus".into());
        }
        if let Some(dest) = &self.telemetry {
            check_destination(dest).map_err(CliError::Config)?;
        }
        self.recorder.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.safety.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.fleet.step > 0.0 && self.fleet.step.is_finite()) {
            return bad(format!("fleet.step must be positive, got {}", self.fleet.step));
        }
        self.fleet
            .params
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }
}

pub(crate) fn validate_roster(roster: &[RosterEntry]) -> Result<(), CliError> {
    if roster.is_empty() {
        return Err(CliError::Config("actuator roster is empty".into()));
    }
    let mut seen = BTreeSet::new();
    for a in roster {
        if !seen.insert(a.can_id) {
            return Err(CliError::Config(format!("duplicate can_id {}", a.can_id)));
        }
        lookup_model(&a.model).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

pub(crate) fn check_destination(dest: &str) -> Result<(), String> {
    match dest.rsplit_once(':') {
        Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(()),
        _ => Err(format!("telemetry destination must be HOST:PORT, got {dest:?}")),
    }
}

/// Prefixes a validation message with the line of the offending entry when
/// one can be found in the source text.
pub(crate) fn anchor(text: &str, err: CliError) -> CliError {
    let CliError::Config(msg) = err else {
        return err;
    };
    let line = if let Some(id) = msg.strip_prefix("duplicate can_id ") {
        let hits: Vec<usize> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| {
                l.split_once('=')
                    .is_some_and(|(k, v)| k.trim() == "can_id" && parse_id(v.trim()) == id.parse().ok())
            })
            .map(|(i, _)| i + 1)
            .collect();
        hits.get(1).copied()
    } else {
        let key = msg.split_whitespace().next().unwrap_or("");
        text.lines()
            .position(|l| {
                l.split_once('=')
                    .is_some_and(|(k, _)| !key.is_empty() && k.trim() == key)
            })
            .map(|i| i + 1)
    };
    match line {
        Some(n) => CliError::Config(format!("line {n}: {msg}")),
        None => CliError::Config(msg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::controllers::SineParams;

    fn sample() -> RunConfig {
        let mut c = RunConfig::new(
            vec!["AK80-9:1".parse().unwrap(), "AK80-9 V2:0x02".parse().unwrap()],
            ControllerKind::SinePosition(SineParams::default()),
            200.0,
            10.0,
        );
        c.telemetry = Some("127.0.0.1:9870".into());
        c.record = Some("run.csv".into());
        c.bus.virtual_options.capacity_fps = Some(8000.0);
        c.safety.thermal_threshold = Some(7.5);
        c
    }

    #[test]
    fn roster_entries_parse() {
        let e: RosterEntry = "AK80-9 V2:0x10".parse().unwrap();
        assert_eq!(e.model, "AK80-9 V2");
        assert_eq!(e.can_id, 16);
        assert!("AK80-9".parse::<RosterEntry>().is_err());
        assert!(":3".parse::<RosterEntry>().is_err());
        assert_eq!(e.to_string().parse::<RosterEntry>().unwrap(), e);
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let text = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        c.save(&p).unwrap();
        assert_eq!(RunConfig::load(&p).unwrap(), c);
    }

    #[test]
    fn minimal_file() {
        let c = RunConfig::from_toml_str(
            r#"
frequency = 100.0
duration = 2.0

[controller]
kind = "torque-step"
torque = 1.5

[[actuators]]
model = "AK80-9"
can_id = 1
"#,
        )
        .unwrap();
        assert!(c.spawn_fleet);
        assert_eq!(c.bus.to_string(), "virtual:vbus0");
    }

    #[test]
    fn errors_name_the_line() {
        let dup = r#"
frequency = 100.0
duration = 2.0
controller = { kind = "impedance-hold" }

[[actuators]]
model = "AK80-9"
can_id = 1

[[actuators]]
model = "AK80-9"
can_id = 1
"#;
        let e = RunConfig::from_toml_str(dup).unwrap_err().to_string();
        assert!(e.contains("line 12") && e.contains("duplicate can_id 1"), "{e}");

        let unknown = dup.replace("impedance-hold", "wobble");
        let e = RunConfig::from_toml_str(&unknown).unwrap_err().to_string();
        assert!(e.contains("line 4") && e.contains("sine-position"), "{e}");

        let empty = "frequency = 100.0\nduration = 1.0\ncontroller = { kind = \"torque-step\" }\nactuators = []\n";
        assert!(RunConfig::from_toml_str(empty)
            .unwrap_err()
            .to_string()
            .contains("empty"));

        let freq = "frequency = -1.0\nduration = 1.0\ncontroller = { kind = \"torque-step\" }\nactuators = []\n";
        let e = RunConfig::from_toml_str(freq).unwrap_err().to_string();
        assert!(e.starts_with("line 1: frequency"), "{e}");
    }

    #[test]
    fn gains_checked_against_each_model() {
        let mut c = sample();
        c.controller = ControllerKind::SinePosition(SineParams {
            kp: 600.0,
            ..Default::default()
        });
        assert!(c.validate().unwrap_err().to_string().contains("kp"));
    }

    #[test]
    fn other_checks() {
        let mut c = sample();
        c.telemetry = Some("nowhere".into());
        assert!(c.validate().is_err());
        let mut c = sample();
        c.bus = BusConfig::os_socket("can0");
        c.virtual_time = true;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.actuators[1].model = "NoSuch".into();
        assert!(c.validate().is_err());
    }
}
