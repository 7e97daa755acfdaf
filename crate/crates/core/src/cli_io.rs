//! Scenario parsing and report emission.
//!
//! Parsing goes through three gates: a key pre-pass that names missing
//! required fields by path, strict deserialization that rejects unknown
//! fields, and the scenario's own invariant checks. All emitted numbers
//! carry six significant digits and files end every line with `\n`.

use crate::simulator::{PlanRecord, RunResult, ScenarioSpec};
use serde_json::{json, Value};
use std::fmt::Write as _;

/// Parses and validates a scenario, collecting every problem found.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, Vec<String>> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| vec![format!("invalid JSON: {e}")])?;
    let missing = missing_required(&value);
    if !missing.is_empty() {
        return Err(missing);
    }
    let spec: ScenarioSpec =
        serde_json::from_value(value).map_err(|e| vec![e.to_string()])?;
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(problems);
    }
    Ok(spec)
}

fn missing_required(value: &Value) -> Vec<String> {
    let mut errs = Vec::new();
    let Some(obj) = value.as_object() else {
        return vec!["scenario: must be a JSON object".into()];
    };
    for key in ["name", "ego", "obstacles"] {
        if !obj.contains_key(key) {
            errs.push(format!("{key}: missing"));
        }
    }
    if let Some(ego) = obj.get("ego").and_then(Value::as_object) {
        if !ego.contains_key("speed") {
            errs.push("ego.speed: missing".into());
        }
    }
    if let Some(list) = obj.get("obstacles").and_then(Value::as_array) {
        for (i, o) in list.iter().enumerate() {
            let Some(o) = o.as_object() else {
                errs.push(format!("obstacles[{i}]: must be a JSON object"));
                continue;
            };
            for key in ["footprint", "gap"] {
                if !o.contains_key(key) {
                    errs.push(format!("obstacles[{i}].{key}: missing"));
                }
            }
            if let Some(fp) = o.get("footprint").and_then(Value::as_object) {
                for key in ["length", "width"] {
                    if !fp.contains_key(key) {
                        errs.push(format!("obstacles[{i}].footprint.{key}: missing"));
                    }
                }
            }
        }
    }
    errs
}

/// Formats with six significant digits in plain decimal notation.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(mag - 5);
    let rounded = (x / scale).round() * scale;
    let decimals = (5 - mag).max(0) as usize;
    format!("{rounded:.decimals$}")
}

/// Rounds to six significant digits; used before JSON serialization.
fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(mag - 5);
    (x / scale).round() * scale
}

/// Per-tick log with one row per physics step.
pub fn timeseries_csv(result: &RunResult) -> String {
    let n_obs = result.rows.first().map_or(0, |r| r.obstacles.len());
    let mut out = String::from("t,x,y,v,a,mode,L,L_w,L_b,L_s,ttc_inv,y_plan,vy_plan,ay_plan,jy_plan");
    for i in 0..n_obs {
        let _ = write!(out, ",obs{i}_x,obs{i}_y,obs{i}_v");
    }
    out.push('\n');
    for r in &result.rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_sig(r.t),
            fmt_sig(r.x),
            fmt_sig(r.y),
            fmt_sig(r.v),
            fmt_sig(r.a),
            r.mode,
            fmt_sig(r.gap),
            fmt_sig(r.l_w),
            fmt_sig(r.l_b),
            fmt_sig(r.l_s),
            fmt_sig(r.ttc_inv),
            fmt_sig(r.y_plan),
            fmt_sig(r.vy_plan),
            fmt_sig(r.ay_plan),
            fmt_sig(r.jy_plan),
        );
        for &(x, y, v) in &r.obstacles {
            let _ = write!(out, ",{},{},{}", fmt_sig(x), fmt_sig(y), fmt_sig(v));
        }
        out.push('\n');
    }
    out
}

/// The lateral corridor actually used by the plan, one row per plan step.
pub fn envelope_csv(plan: &PlanRecord, step_s: f64) -> String {
    let mut out = String::from("step,t,y_min,y_max\n");
    for (k, (lo, hi)) in plan.envelope.y_min.iter().zip(&plan.envelope.y_max).enumerate() {
        let t = plan.t0 + k as f64 * step_s;
        let _ = writeln!(out, "{k},{},{},{}", fmt_sig(t), fmt_sig(*lo), fmt_sig(*hi));
    }
    out
}

/// Headline result as JSON.
pub fn summary_json(result: &RunResult) -> String {
    let timeline: Vec<Value> = result
        .mode_timeline
        .iter()
        .map(|(t, m)| json!([sig6(*t), m]))
        .collect();
    let value = json!({
        "name": result.name,
        "collision": result.collision,
        "min_gap": sig6(result.min_gap),
        "final_gap": sig6(result.final_gap),
        "max_abs_ay": sig6(result.max_abs_ay),
        "rel_impact_speed": result.rel_impact_speed.map(sig6),
        "mode_timeline": timeline,
        "end_time": sig6(result.end_time),
    });
    let mut text = serde_json::to_string_pretty(&value).expect("plain data serializes");
    text.push('\n');
    text
}
