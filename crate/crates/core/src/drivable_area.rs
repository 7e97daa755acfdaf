//! Drivable-area construction: collision hazard moments and the per-step
//! lateral envelope bounding the evasive trajectory.
//!
//! The hazard moment is when the ego nose would reach the obstacle's near
//! face at constant ego speed; the far moment adds the obstacle length and
//! both ego overhangs so the whole body clears. Between those step indices
//! the lateral floor is the predicted obstacle occupancy plus a clearance
//! margin; the horizon ends in the target-lane band `W ± Δy`.

use thiserror::Error;

/// Safety factor widening the geometric lateral clearance.
pub const CLEARANCE_FACTOR: f64 = 1.1;

/// Ego body geometry relative to the rear-axle midpoint reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoGeometry {
    /// Body width [m].
    pub width: f64,
    /// Rear-axle midpoint to front end [m].
    pub to_front: f64,
    /// Rear-axle midpoint to rear end [m].
    pub to_rear: f64,
    /// Lateral speed cap during evasion [m/s].
    pub v_y_max: f64,
}

impl Default for EgoGeometry {
    fn default() -> Self {
        Self { width: 1.9, to_front: 3.8, to_rear: 1.0, v_y_max: 2.0 }
    }
}

impl EgoGeometry {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(format!("width: must be > 0, got {}", self.width));
        }
        if !(self.to_front.is_finite() && self.to_front > 0.0) {
            return Err(format!("to_front: must be > 0, got {}", self.to_front));
        }
        if !(self.to_rear.is_finite() && self.to_rear >= 0.0) {
            return Err(format!("to_rear: must be >= 0, got {}", self.to_rear));
        }
        if !(self.v_y_max.is_finite() && self.v_y_max > 0.0) {
            return Err(format!("v_y_max: must be > 0, got {}", self.v_y_max));
        }
        Ok(())
    }
}

/// Envelope discretization and road parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeConfig {
    /// Lane width W; the evasion targets the band `W ± Δy` [m].
    pub lane_width: f64,
    /// Terminal relaxation Δy around the target lane offset [m].
    pub delta_y: f64,
    /// Planner step T_s [s].
    pub step_s: f64,
    /// Settling horizon appended after the far hazard index [s].
    pub merge_margin_s: f64,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self { lane_width: 3.5, delta_y: 0.2, step_s: 0.05, merge_margin_s: 1.5 }
    }
}

impl EnvelopeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lane_width.is_finite() && self.lane_width > 0.0) {
            return Err(format!("lane_width: must be > 0, got {}", self.lane_width));
        }
        if !(self.delta_y.is_finite() && self.delta_y >= 0.0 && self.delta_y < self.lane_width) {
            return Err(format!("delta_y: must be in [0, lane_width), got {}", self.delta_y));
        }
        if !(self.step_s.is_finite() && self.step_s > 0.0) {
            return Err(format!("step_s: must be > 0, got {}", self.step_s));
        }
        if !(self.merge_margin_s.is_finite() && self.merge_margin_s >= 0.0) {
            return Err(format!("merge_margin_s: must be >= 0, got {}", self.merge_margin_s));
        }
        Ok(())
    }
}

/// Obstacle snapshot at planning time, in the ego road frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleView {
    /// Ego nose to obstacle near face [m].
    pub gap: f64,
    /// Footprint length along the lane [m].
    pub length: f64,
    /// Footprint width across the lane [m].
    pub width: f64,
    /// Current lateral center position [m].
    pub lateral_center: f64,
    /// Lateral speed (constant-velocity prediction) [m/s].
    pub lateral_v: f64,
    /// Longitudinal speed, signed (negative = oncoming) [m/s].
    pub v_long: f64,
    /// Longitudinal acceleration, signed [m/s²].
    pub a_long: f64,
}

/// Hazard window expressed both in seconds and planner steps.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardTiming {
    /// Ego nose reaches the obstacle near face [s].
    pub t_haz_near: f64,
    /// Ego body fully clears the obstacle far face [s].
    pub t_haz_far: f64,
    /// First planner step inside the hazard window.
    pub n_obj1: usize,
    /// First planner step past the hazard window.
    pub n_obj2: usize,
    /// Planning horizon length in steps.
    pub n_end: usize,
}

/// Per-step lateral bounds for the planner.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyEnvelope {
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
    pub lane_width: f64,
    pub delta_y: f64,
    /// Predicted obstacle occupancy edge at the near hazard moment [m].
    pub w_obj: f64,
    /// Lateral clearance added beyond the occupancy edge [m].
    pub d_lat: f64,
}

impl SafetyEnvelope {
    /// Floor enforced during the hazard window [m].
    pub fn window_floor(&self) -> f64 {
        self.w_obj + self.d_lat
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvelopeError {
    #[error("no closing conflict: the hazard never occurs")]
    NoConflict,
    #[error("hazard too imminent for a lateral plan: first constrained step {n_obj1} < 2")]
    TooImminent { n_obj1: usize },
    #[error("no lateral room: need {needed_m:.3} m of offset, reachable {available_m:.3} m")]
    NoLateralRoom { needed_m: f64, available_m: f64 },
    #[error("planning horizon too long: {n_end} steps")]
    HorizonTooLong { n_end: usize },
    #[error("bad input: {0}")]
    BadInput(String),
}

/// Time until the ego nose (constant speed) reaches a face `gap` metres
/// ahead, given the obstacle's scripted longitudinal motion.
///
/// A braking obstacle (`a_obj < 0`, decelerating to standstill) is caught
/// either while still moving — the quadratic-root branch — or after it has
/// stopped, in which case the ego simply covers `gap` plus the obstacle's
/// stopping distance.
pub fn collision_hazard_time(
    v_ego: f64,
    v_obj: f64,
    a_obj: f64,
    gap: f64,
) -> Result<f64, EnvelopeError> {
    if !(v_ego.is_finite() && v_ego > 0.0) {
        return Err(EnvelopeError::BadInput(format!("v_ego: must be > 0, got {v_ego}")));
    }
    if !(gap.is_finite() && gap > 0.0) {
        return Err(EnvelopeError::BadInput(format!("gap: must be > 0, got {gap}")));
    }
    if !v_obj.is_finite() || !a_obj.is_finite() {
        return Err(EnvelopeError::BadInput("v_obj/a_obj: must be finite".into()));
    }
    if a_obj >= 0.0 {
        let closing = v_ego - v_obj;
        if closing <= 0.0 {
            return Err(EnvelopeError::NoConflict);
        }
        return Ok(gap / closing);
    }
    if v_obj < 0.0 {
        return Err(EnvelopeError::BadInput(
            "an oncoming obstacle cannot carry a braking deceleration script".into(),
        ));
    }
    let a = -a_obj;
    let t_brake = v_obj / a;
    let x_brake = v_obj * v_obj / (2.0 * a);
    if v_ego * t_brake >= gap + x_brake {
        // Caught while the obstacle still brakes.
        let disc = (v_obj - v_ego) * (v_obj - v_ego) + 2.0 * a * gap;
        if disc < 0.0 {
            return Err(EnvelopeError::NoConflict);
        }
        Ok(((v_obj - v_ego) + disc.sqrt()) / a)
    } else {
        // The obstacle stops first; the ego covers gap + its stop distance.
        Ok((v_obj * v_obj + 2.0 * a * gap) / (2.0 * a * v_ego))
    }
}

/// Lateral clearance to keep beyond the obstacle occupancy edge [m].
///
/// At the maximum heading `θ = atan(v_y_max/v_x)` the body's half-width
/// projects to `B/(2 cos θ)`; a safety factor widens it.
pub fn lateral_clearance(geom: &EgoGeometry, v_x: f64) -> Result<f64, EnvelopeError> {
    geom.validate().map_err(EnvelopeError::BadInput)?;
    if !(v_x.is_finite() && v_x > 0.0) {
        return Err(EnvelopeError::BadInput(format!("v_x: must be > 0, got {v_x}")));
    }
    let theta_max = (geom.v_y_max / v_x).atan();
    Ok(CLEARANCE_FACTOR * geom.width / (2.0 * theta_max.cos()))
}

/// Builds the per-step lateral envelope for one obstacle.
///
/// The returned envelope always admits at least one trajectory at the
/// lateral speed cap (piecewise-linear witness); otherwise an error
/// explains which budget failed.
pub fn build_envelope(
    obs: &ObstacleView,
    v_ego: f64,
    geom: &EgoGeometry,
    cfg: &EnvelopeConfig,
) -> Result<(SafetyEnvelope, HazardTiming), EnvelopeError> {
    geom.validate().map_err(EnvelopeError::BadInput)?;
    cfg.validate().map_err(EnvelopeError::BadInput)?;
    if !(obs.length.is_finite() && obs.length > 0.0 && obs.width.is_finite() && obs.width > 0.0)
    {
        return Err(EnvelopeError::BadInput("obstacle footprint: must be > 0".into()));
    }

    let t_near = collision_hazard_time(v_ego, obs.v_long, obs.a_long, obs.gap)?;
    let far_gap = obs.gap + obs.length + geom.to_front + geom.to_rear;
    let t_far = collision_hazard_time(v_ego, obs.v_long, obs.a_long, far_gap)?;

    let n_obj1 = (t_near / cfg.step_s).ceil() as usize;
    let n_obj2 = ((t_far / cfg.step_s).ceil() as usize).max(n_obj1);
    let merge_steps = ((cfg.merge_margin_s / cfg.step_s).ceil() as usize).max(1);
    let n_end = n_obj2 + merge_steps;

    if n_obj1 < 2 {
        return Err(EnvelopeError::TooImminent { n_obj1 });
    }
    if n_end > 4000 {
        return Err(EnvelopeError::HorizonTooLong { n_end });
    }

    let d_lat = lateral_clearance(geom, v_ego)?;
    let predicted_center = obs.lateral_center + obs.lateral_v * t_near;
    let w_obj = predicted_center + obs.width / 2.0;
    let floor = w_obj + d_lat;
    let ceiling = cfg.lane_width + cfg.delta_y;
    let terminal = cfg.lane_width - cfg.delta_y;

    // Monotone-climb witness at the lateral speed cap: a single climb that
    // clears the floor by the window start and the terminal offset by the
    // final step certifies the envelope admits some path.
    let climb_budget = n_obj1 as f64 * cfg.step_s * geom.v_y_max;
    if floor > climb_budget || floor > ceiling {
        return Err(EnvelopeError::NoLateralRoom {
            needed_m: floor,
            available_m: climb_budget.min(ceiling),
        });
    }
    let terminal_budget = (n_end - 1) as f64 * cfg.step_s * geom.v_y_max;
    if terminal > terminal_budget {
        return Err(EnvelopeError::NoLateralRoom {
            needed_m: terminal,
            available_m: terminal_budget,
        });
    }

    let mut y_min = vec![0.0; n_end];
    for slot in y_min.iter_mut().take(n_obj2).skip(n_obj1) {
        *slot = floor;
    }
    y_min[n_end - 1] = terminal;
    let y_max = vec![ceiling; n_end];

    Ok((
        SafetyEnvelope {
            y_min,
            y_max,
            lane_width: cfg.lane_width,
            delta_y: cfg.delta_y,
            w_obj,
            d_lat,
        },
        HazardTiming { t_haz_near: t_near, t_haz_far: t_far, n_obj1, n_obj2, n_end },
    ))
}
