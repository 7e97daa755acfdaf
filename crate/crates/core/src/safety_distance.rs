//! Staged safe-distance computation for same-direction obstacles.
//!
//! For each obstacle motion class this produces three distances that define
//! the risk zones: `l_w` (warn the driver), `l_b` (start emergency braking)
//! and `l_s` (minimum distance; below it braking alone is too late and the
//! system considers an evasive maneuver).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Residual gap that must remain at standstill, regardless of speed [m].
pub const STANDSTILL_FLOOR_M: f64 = 3.6;

/// Ego speed below which the vehicle counts as stopped [m/s].
pub const STANDSTILL_EPS: f64 = 1e-9;

/// Brake-system and driver timing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrakingParams {
    /// Actuation dead time before any deceleration builds up [s].
    pub tau1: f64,
    /// Ramp-up time from zero to the commanded deceleration [s].
    pub tau2: f64,
    /// Driver reaction margin added on top of the braking distance [s].
    pub t_driver: f64,
    /// First-stage emergency deceleration, paired with `min(·, μg)` [m/s²].
    pub a_trigger: f64,
    /// Full emergency deceleration cap, paired with `max(·, μg)` [m/s²].
    pub a_max_cap: f64,
    /// Road adhesion coefficient.
    pub mu: f64,
    /// Gravitational acceleration [m/s²].
    pub g: f64,
    /// Cap the full-emergency level at μg instead of allowing the fixed
    /// floor to exceed what the road can transmit.
    pub clamp_to_adhesion: bool,
}

impl Default for BrakingParams {
    fn default() -> Self {
        Self {
            tau1: 0.3,
            tau2: 0.6,
            t_driver: 1.0,
            a_trigger: 4.0,
            a_max_cap: 7.0,
            mu: 0.7,
            g: 9.81,
            clamp_to_adhesion: false,
        }
    }
}

impl BrakingParams {
    /// Checks the parameter ranges; returns a message naming the bad field.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau1.is_finite() && self.tau1 >= 0.0) {
            return Err(format!("tau1: must be finite and >= 0, got {}", self.tau1));
        }
        if !(self.tau2.is_finite() && self.tau2 > 0.0) {
            return Err(format!("tau2: must be finite and > 0, got {}", self.tau2));
        }
        if !(self.t_driver.is_finite() && self.t_driver >= 0.0) {
            return Err(format!("t_driver: must be finite and >= 0, got {}", self.t_driver));
        }
        if !(self.a_trigger.is_finite() && self.a_trigger > 0.0) {
            return Err(format!("a_trigger: must be > 0, got {}", self.a_trigger));
        }
        if !(self.a_max_cap.is_finite() && self.a_max_cap >= self.a_trigger) {
            return Err(format!("a_max_cap: must be >= a_trigger, got {}", self.a_max_cap));
        }
        if !(self.mu.is_finite() && self.mu > 0.0 && self.mu <= 1.2) {
            return Err(format!("mu: must be in (0, 1.2], got {}", self.mu));
        }
        if !(self.g.is_finite() && self.g > 0.0) {
            return Err(format!("g: must be > 0, got {}", self.g));
        }
        Ok(())
    }
}

/// How the obstacle ahead is moving.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionClass {
    /// Not moving at all.
    Stationary,
    /// Driving at constant speed or accelerating; the distance rows treat
    /// both conservatively as constant-speed (`a_obj` is informational).
    UniformOrAccelerating { v_obj: f64, a_obj: f64 },
    /// Braking hard with the given deceleration magnitude until standstill.
    EmergencyBraking { v_obj: f64, decel: f64 },
}

/// The three staged distances for one obstacle [m].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyTriple {
    /// Warn the driver at or below this gap.
    pub l_w: f64,
    /// Start emergency braking at or below this gap.
    pub l_b: f64,
    /// Below this gap braking alone no longer resolves the conflict.
    pub l_s: f64,
    /// Set when the gap is opening (obstacle at least as fast as ego); all
    /// three distances are zero then and no risk staging applies.
    pub no_conflict: bool,
}

impl SafetyTriple {
    /// Sentinel for an opening gap: zeros, flagged `no_conflict`.
    pub fn none() -> Self {
        Self { l_w: 0.0, l_b: 0.0, l_s: 0.0, no_conflict: true }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SafetyError {
    #[error("ego speed must be finite and >= 0, got {0}")]
    BadEgoSpeed(f64),
    #[error("obstacle speed must be finite and >= 0, got {0}")]
    BadObstacleSpeed(f64),
    #[error("deceleration must be finite and > 0, got {0}")]
    BadDecel(f64),
    #[error("end speed must be finite, >= 0 and <= start speed, got {0}")]
    BadEndSpeed(f64),
    #[error("braking params invalid: {0}")]
    BadParams(String),
}

/// Speed-dependent residual margin kept at standstill [m].
///
/// Grows linearly with speed and never drops below the fixed floor; at or
/// below zero speed it is exactly the floor.
pub fn standstill_margin(v_ego: f64) -> f64 {
    if v_ego <= 0.0 {
        STANDSTILL_FLOOR_M
    } else {
        (0.2364 * v_ego + 1.6109).max(STANDSTILL_FLOOR_M)
    }
}

/// First-stage and full emergency deceleration levels `(a_min, a_max)` [m/s²].
pub fn decel_bounds(p: &BrakingParams) -> (f64, f64) {
    let mu_g = p.mu * p.g;
    let a_min = p.a_trigger.min(mu_g);
    let mut a_max = p.a_max_cap.max(mu_g);
    if p.clamp_to_adhesion {
        a_max = a_max.min(mu_g);
    }
    (a_min, a_max)
}

/// Distance covered from `v_ego` down to `v_end` at deceleration `decel`,
/// including the brake dead time and half the ramp-up time at initial speed.
pub fn braking_distance(
    v_ego: f64,
    v_end: f64,
    decel: f64,
    p: &BrakingParams,
) -> Result<f64, SafetyError> {
    p.validate().map_err(SafetyError::BadParams)?;
    if !(v_ego.is_finite() && v_ego >= 0.0) {
        return Err(SafetyError::BadEgoSpeed(v_ego));
    }
    if !(v_end.is_finite() && v_end >= 0.0 && v_end <= v_ego) {
        return Err(SafetyError::BadEndSpeed(v_end));
    }
    if !(decel.is_finite() && decel > 0.0) {
        return Err(SafetyError::BadDecel(decel));
    }
    Ok((p.tau1 + 0.5 * p.tau2) * v_ego + (v_ego * v_ego - v_end * v_end) / (2.0 * decel))
}

/// Computes the staged distance triple for one obstacle.
///
/// Returns the no-conflict sentinel when the gap is opening (`v_obj >= v_ego`
/// for the moving classes). All speeds are SI [m/s].
pub fn safety_triple(
    v_ego: f64,
    class: &MotionClass,
    p: &BrakingParams,
) -> Result<SafetyTriple, SafetyError> {
    p.validate().map_err(SafetyError::BadParams)?;
    if !(v_ego.is_finite() && v_ego >= 0.0) {
        return Err(SafetyError::BadEgoSpeed(v_ego));
    }
    let (a_min, a_max) = decel_bounds(p);
    let d_safe = standstill_margin(v_ego);
    let lead = p.tau1 + 0.5 * p.tau2;

    let (l_b, l_s) = match *class {
        MotionClass::Stationary => {
            let l_b = lead * v_ego + v_ego * v_ego / (2.0 * a_min) + d_safe;
            let l_s = lead * v_ego + v_ego * v_ego / (2.0 * a_max) + d_safe;
            (l_b, l_s)
        }
        MotionClass::UniformOrAccelerating { v_obj, a_obj: _ } => {
            if !(v_obj.is_finite() && v_obj >= 0.0) {
                return Err(SafetyError::BadObstacleSpeed(v_obj));
            }
            if v_ego < v_obj {
                return Ok(SafetyTriple::none());
            }
            // During the actuation delay the gap closes at the speed
            // difference; afterwards only the kinetic-energy difference
            // must be shed.
            let delay_closure = lead * (v_ego - v_obj);
            let rel = v_ego * v_ego - v_obj * v_obj;
            let l_b = delay_closure + rel / (2.0 * a_min) + d_safe;
            let l_s = delay_closure + rel / (2.0 * a_max) + d_safe;
            (l_b, l_s)
        }
        MotionClass::EmergencyBraking { v_obj, decel } => {
            if !(v_obj.is_finite() && v_obj >= 0.0) {
                return Err(SafetyError::BadObstacleSpeed(v_obj));
            }
            if !(decel.is_finite() && decel > 0.0) {
                return Err(SafetyError::BadDecel(decel));
            }
            if v_ego < v_obj {
                return Ok(SafetyTriple::none());
            }
            let common = p.tau1 * v_ego + 0.5 * p.tau2 * (v_ego - v_obj)
                - v_obj * v_obj / (2.0 * decel)
                + d_safe;
            let l_b = common + v_ego * v_ego / (2.0 * a_min);
            let l_s = common + v_ego * v_ego / (2.0 * a_max);
            (l_b, l_s)
        }
    };

    // A gently braking obstacle can drive the row negative; no staged
    // distance is ever allowed below the standstill margin.
    let l_b = l_b.max(d_safe);
    let l_s = l_s.max(d_safe);
    Ok(SafetyTriple { l_w: l_b + p.t_driver * v_ego, l_b, l_s, no_conflict: false })
}
