//! Longitudinal braking model: phased brake response and forward integration.
//!
//! A brake command passes through a dead time, ramps linearly to the target
//! deceleration, holds it, and finally ramps back down near standstill so the
//! vehicle does not stop with a step in deceleration. With the ramp-down, the
//! integrated stopping distance matches the closed form
//! `(τ₁ + τ₂/2)·v + v²/(2a)` exactly: the ramp-up deficit and the ramp-down
//! surplus cancel.

use crate::safety_distance::BrakingParams;

/// Longitudinal kinematic state of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongState {
    /// Position along the lane [m].
    pub x: f64,
    /// Speed, never negative [m/s].
    pub v: f64,
    /// Acceleration actually applied over the last step, signed [m/s²].
    pub a: f64,
}

impl LongState {
    pub fn new(x: f64, v: f64) -> Self {
        Self { x, v, a: 0.0 }
    }
}

/// Pure time profile of the brake response to a single command issued at
/// t = 0: zero during the dead time, linear ramp over `tau2`, then the
/// target deceleration held [m/s², magnitude].
pub fn command_response(t_since_cmd: f64, a_target: f64, p: &BrakingParams) -> f64 {
    if t_since_cmd < p.tau1 {
        0.0
    } else if t_since_cmd < p.tau1 + p.tau2 {
        a_target * (t_since_cmd - p.tau1) / p.tau2
    } else {
        a_target
    }
}

/// Stateful brake actuator tracking the phased response across commands.
///
/// The first command incurs the dead time; a higher target re-ramps from
/// the level achieved right now at the new target's slope, with no second
/// dead time, so the achieved deceleration stays continuous. Commands at or
/// below the current target are ignored: within one emergency engagement
/// the commanded level only escalates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrakeActuator {
    tau1: f64,
    tau2: f64,
    t_cmd: Option<f64>,
    target: f64,
    base: f64,
    dead: f64,
}

impl BrakeActuator {
    /// `tau1` is the dead time on first engagement (zero for pre-charged or
    /// scripted brakes), `tau2` the ramp time.
    pub fn new(tau1: f64, tau2: f64) -> Self {
        Self { tau1, tau2, t_cmd: None, target: 0.0, base: 0.0, dead: 0.0 }
    }

    pub fn engaged(&self) -> bool {
        self.t_cmd.is_some()
    }

    /// Current commanded deceleration magnitude [m/s²].
    pub fn target(&self) -> f64 {
        self.target
    }

    /// Commands a deceleration magnitude at time `now`. Only a positive
    /// magnitude engages; afterwards only a strictly higher one changes
    /// anything.
    pub fn command(&mut self, now: f64, target: f64) {
        if self.t_cmd.is_none() {
            if target <= 0.0 {
                return;
            }
            self.t_cmd = Some(now);
            self.target = target;
            self.base = 0.0;
            self.dead = self.tau1;
        } else if target > self.target {
            self.base = self.profile(now);
            self.t_cmd = Some(now);
            self.target = target;
            self.dead = 0.0;
        }
    }

    /// Time-only response: dead time, then ramp from the re-base level up to
    /// the target, then hold [m/s², magnitude].
    pub fn profile(&self, now: f64) -> f64 {
        let Some(t_cmd) = self.t_cmd else {
            return 0.0;
        };
        let te = now - t_cmd;
        if te < self.dead {
            return 0.0;
        }
        (self.base + self.target / self.tau2 * (te - self.dead)).min(self.target)
    }

    /// Achieved deceleration at time `now` and speed `v`: the time profile
    /// capped by `√(2·a_target·v/τ₂)`, which ramps the deceleration down at
    /// slope `a_target/τ₂` so it reaches zero exactly when the speed does.
    pub fn achieved(&self, now: f64, v: f64) -> f64 {
        let r = self.profile(now);
        if self.target <= 0.0 {
            return r;
        }
        let cap = (2.0 * self.target * v / self.tau2).max(0.0).sqrt();
        r.min(cap)
    }
}

/// Advances the longitudinal state by `dt` under a signed acceleration.
/// Speed clamps at zero (no reversing under braking); position uses the
/// trapezoid rule over the step.
pub fn step(s: &LongState, accel: f64, dt: f64) -> LongState {
    let v_new = (s.v + accel * dt).max(0.0);
    let x_new = s.x + 0.5 * (s.v + v_new) * dt;
    LongState { x: x_new, v: v_new, a: if v_new > 0.0 { accel } else { 0.0 } }
}
