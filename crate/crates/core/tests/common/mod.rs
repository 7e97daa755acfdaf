#![allow(dead_code)]

use evade::cli_io::parse_scenario;
use evade::simulator::{RunResult, ScenarioSpec};

/// Absolute path of a bundled scenario file.
pub fn fixture_path(name: &str) -> String {
    format!("{}/fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"))
}

/// Loads and validates a bundled scenario.
pub fn fixture(name: &str) -> ScenarioSpec {
    let path = fixture_path(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    parse_scenario(&text).unwrap_or_else(|errs| panic!("{path}: {errs:?}"))
}

/// Mode tokens of the timeline, in order.
pub fn tokens(result: &RunResult) -> Vec<&'static str> {
    result.mode_timeline.iter().map(|(_, m)| *m).collect()
}

/// Timeline with times rounded to centiseconds for stable comparison.
pub fn timeline_2dp(result: &RunResult) -> Vec<(f64, &'static str)> {
    result
        .mode_timeline
        .iter()
        .map(|&(t, m)| ((t * 100.0).round() / 100.0, m))
        .collect()
}
