use std::fs;
use std::path::Path;

use msims_core::hss::SubscriberProfile;
use msims_core::session::PlacementPolicy;
use msims_core::{ConfigError, ScenarioKind};
use msims_testbed::{load_scenario, scenario_from_toml, HarnessError};

const FULL: &str = r#"
name = "custom"
rate_per_min = 12
max_concurrent = "none"
hold_ms = 20000
duration_ms = 120000
placement = "spread"

[transport]
base_hop_latency_ms = 5
jitter_ms = 0

[pouch]
capacity_sessions = 12
media_slots = 6
base_service_ms = 100
provisioning_delay_ms = 5000
initial_pouch_count = 3

[autoscaler]
busy_scaling = true
n_extra = 2

[failure]
at_ms = 60000
"#;

#[test]
fn every_section_reaches_the_scenario() {
    let s = scenario_from_toml(ScenarioKind::Custom, FULL, Path::new(".")).unwrap();
    assert_eq!(s.name, ScenarioKind::Custom);
    assert_eq!(s.rate_per_min, 12.0);
    assert_eq!(s.max_concurrent, None);
    assert_eq!((s.hold_ms, s.duration_ms), (20_000, 120_000));
    assert_eq!(s.placement, PlacementPolicy::Spread);
    assert_eq!((s.transport.base_hop_latency_ms, s.transport.jitter_ms), (5, 0));
    assert_eq!(s.transport.local_latency_ms, 0);
    assert_eq!((s.pouch.capacity_sessions, s.pouch.media_slots, s.pouch.base_service_ms), (12, 6, 100));
    assert_eq!((s.pouch.provisioning_delay_ms, s.pouch.initial_pouch_count), (5_000, 3));
    assert!(s.autoscaler.busy_scaling);
    assert_eq!(s.autoscaler.n_extra, 2);
    assert_eq!(s.failure.as_ref().map(|f| (f.at_ms, f.pouch.clone())), Some((60_000, None)));
}

#[test]
fn no_file_means_the_preset() {
    for kind in [ScenarioKind::Baseline, ScenarioKind::Autoscale, ScenarioKind::Failure, ScenarioKind::Tradeoff] {
        assert_eq!(load_scenario(kind, None).unwrap(), msims_core::Scenario::preset(kind));
    }
}

#[test]
fn empty_file_means_the_preset() {
    let s = scenario_from_toml(ScenarioKind::Failure, "", Path::new(".")).unwrap();
    assert_eq!(s, msims_core::Scenario::failure());
}

#[test]
fn unknown_keys_are_rejected() {
    let err = scenario_from_toml(ScenarioKind::Baseline, "[pouch]\ncapacity = 3\n", Path::new(".")).unwrap_err();
    assert!(matches!(err, HarnessError::Toml(_)), "{err}");
    assert!(scenario_from_toml(ScenarioKind::Baseline, "colour = 1\n", Path::new(".")).is_err());
}

#[test]
fn invalid_values_are_config_errors() {
    let err = scenario_from_toml(ScenarioKind::Baseline, "rate_per_min = 0\n", Path::new(".")).unwrap_err();
    assert!(matches!(err, HarnessError::Config(ConfigError::ConfigInvalid(_))), "{err}");
    let err = scenario_from_toml(ScenarioKind::Baseline, "duration_ms = 1000\n", Path::new(".")).unwrap_err();
    assert!(err.to_string().contains("hold"), "{err}");
    assert!(scenario_from_toml(ScenarioKind::Baseline, "max_concurrent = \"lots\"\n", Path::new(".")).is_err());
    assert!(scenario_from_toml(ScenarioKind::Baseline, "max_concurrent = -4\n", Path::new(".")).is_err());
}

#[test]
fn name_must_agree_with_the_requested_scenario() {
    assert!(scenario_from_toml(ScenarioKind::Baseline, "name = \"tradeoff\"\n", Path::new(".")).is_err());
    assert!(scenario_from_toml(ScenarioKind::Tradeoff, "name = \"tradeoff\"\n", Path::new(".")).is_ok());
}

#[test]
fn provisioning_file_is_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("subs.tsv"),
        "# uri\tname\tmax calls\nsip:ann@ims.test\tAnn\t2\nsip:ben@ims.test\tBen\t1\nsip:cy@ims.test\tCy\t3\nsip:di@ims.test\tDi\t3\n",
    )
    .unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "provisioning_file = \"subs.tsv\"\n").unwrap();
    let s = load_scenario(ScenarioKind::Baseline, Some(&cfg)).unwrap();
    let users: Vec<&str> = s.subscribers.iter().map(|p: &SubscriberProfile| p.uri.user()).collect();
    assert_eq!(users, ["ann", "ben", "cy", "di"]);
    assert_eq!(s.subscribers[1].max_concurrent_calls, 1);
}

#[test]
fn missing_files_are_io_errors() {
    let err = load_scenario(ScenarioKind::Baseline, Some(Path::new("/nonexistent/run.toml"))).unwrap_err();
    assert!(matches!(err, HarnessError::Io { .. }));
    assert!(err.one_line().contains("/nonexistent/run.toml"));
    assert!(!err.one_line().contains('\n'));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let uncapped = load_scenario(ScenarioKind::Baseline, Some(&dir.join("uncapped.toml"))).unwrap();
    assert_eq!((uncapped.max_concurrent, uncapped.pouch.capacity_sessions), (None, 40));
    let spread = load_scenario(ScenarioKind::Custom, Some(&dir.join("spread.toml"))).unwrap();
    assert_eq!(spread.placement, PlacementPolicy::Spread);
    assert_eq!(spread.failure.unwrap().at_ms, 600_000);
}
