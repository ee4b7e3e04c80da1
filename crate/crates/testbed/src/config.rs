//! TOML scenario files.
//!
//! A file overrides fields of the chosen preset; nested tables map to the module
//! configs (`[transport]`, `[pouch]`, `[hss]`, `[autoscaler]`, `[failure]`).
//! Two keys are handled outside the scenario struct:
//!
//! * `max_concurrent = "none"` removes the concurrency cap;
//! * `provisioning_file = "subs.tsv"` loads the subscriber population, resolved
//!   relative to the config file.

use std::fs;
use std::path::Path;

use msims_core::scenario::parse_provisioning;
use msims_core::{ConfigError, Scenario, ScenarioKind};
use toml::{Table, Value};

use crate::HarnessError;

pub fn load_scenario(kind: ScenarioKind, path: Option<&Path>) -> Result<Scenario, HarnessError> {
    let Some(path) = path else {
        let s = Scenario::preset(kind);
        s.validate()?;
        return Ok(s);
    };
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    scenario_from_toml(kind, &text, path.parent().unwrap_or(Path::new(".")))
}

pub fn scenario_from_toml(kind: ScenarioKind, text: &str, base_dir: &Path) -> Result<Scenario, HarnessError> {
    let preset = Scenario::preset(kind);
    let mut file: Table = text.parse()?;

    if let Some(name) = file.remove("name") {
        let named = name.as_str().and_then(ScenarioKind::parse);
        if named != Some(kind) {
            return Err(invalid(format!("config names scenario {name} but {} was requested", kind.as_str())));
        }
    }
    let max_concurrent = match file.remove("max_concurrent") {
        None => preset.max_concurrent,
        Some(Value::String(s)) if s == "none" => None,
        Some(Value::Integer(n)) => Some(u32::try_from(n).map_err(|_| invalid("max_concurrent out of range"))?),
        Some(other) => return Err(invalid(format!("max_concurrent must be an integer or \"none\", got {other}"))),
    };
    let provisioning = match file.remove("provisioning_file") {
        None => None,
        Some(Value::String(p)) => Some(base_dir.join(p)),
        Some(_) => return Err(invalid("provisioning_file must be a path string")),
    };

    let mut merged = match Value::try_from(&preset)? {
        Value::Table(t) => t,
        _ => unreachable!("a struct encodes as a table"),
    };
    merge(&mut merged, file);
    let mut scenario: Scenario = Value::Table(merged).try_into()?;
    scenario.name = kind;
    scenario.max_concurrent = max_concurrent;
    if let Some(path) = provisioning {
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        scenario.subscribers = parse_provisioning(&text)?;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    ConfigError::ConfigInvalid(msg.into()).into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_override_keeps_siblings() {
        let s = scenario_from_toml(ScenarioKind::Baseline, "[pouch]\ncapacity_sessions = 7\n", Path::new(".")).unwrap();
        assert_eq!(s.pouch.capacity_sessions, 7);
        assert_eq!(s.pouch.initial_pouch_count, 8);
        assert_eq!(s.max_concurrent, Some(80));
    }

    #[test]
    fn uncapped_preset_stays_uncapped() {
        let s = scenario_from_toml(ScenarioKind::Tradeoff, "hold_ms = 60000\n", Path::new(".")).unwrap();
        assert_eq!(s.max_concurrent, None);
        assert_eq!(s.hold_ms, 60_000);
    }
}
