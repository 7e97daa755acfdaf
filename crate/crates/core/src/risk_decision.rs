//! Risk staging and intervention-mode state machine.
//!
//! Same-direction obstacles are staged by gap against the safe-distance
//! triple (ties escalate by default); oncoming obstacles by inverse
//! time-to-collision (strict comparisons). Active braking holds until the
//! gap clears the warning distance, escalating from the first stage to
//! full deceleration once the gap reaches the minimum distance; outside
//! that the ladder re-evaluates freely each tick. A committed steering
//! maneuver runs to completion; a driver takeover is absorbing.

use crate::safety_distance::SafetyTriple;
use thiserror::Error;

/// Intervention level, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// No conflict; no intervention.
    Normal,
    /// Conflict developing; alert the driver.
    Warning,
    /// Autonomous braking at the first-stage or full emergency level.
    EmergencyBrake { stage: BrakeStage },
    /// Committed evasive lateral maneuver.
    EmergencySteer,
    /// Braking alone cannot resolve the conflict and no evasive path
    /// exists: full braking to mitigate the impact.
    PreCrashBrake,
    /// Driver has taken over; the system only observes.
    DriverOverride,
}

/// Which emergency-braking level is commanded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrakeStage {
    /// First stage, `a_min` from the deceleration bounds.
    Min,
    /// Full stage, `a_max`.
    Max,
}

impl Mode {
    /// Severity rank; higher never yields to lower within one assessment.
    pub fn severity(&self) -> u8 {
        match self {
            Mode::Normal => 0,
            Mode::Warning => 1,
            Mode::EmergencyBrake { .. } => 2,
            Mode::EmergencySteer => 3,
            Mode::PreCrashBrake => 4,
            Mode::DriverOverride => 5,
        }
    }

    /// Stable lower-case token used in logs and emitted files.
    pub fn token(&self) -> &'static str {
        match self {
            Mode::Normal => "normal",
            Mode::Warning => "warning",
            Mode::EmergencyBrake { stage: BrakeStage::Min } => "brake_min",
            Mode::EmergencyBrake { stage: BrakeStage::Max } => "brake_max",
            Mode::EmergencySteer => "steer",
            Mode::PreCrashBrake => "precrash",
            Mode::DriverOverride => "override",
        }
    }

    pub fn is_braking(&self) -> bool {
        matches!(self, Mode::EmergencyBrake { .. } | Mode::PreCrashBrake)
    }
}

/// What caused the most recent mode transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    /// Initial state, no transition yet.
    Initial,
    /// A gap crossed one of the staged distances.
    Distance,
    /// Inverse TTC crossed a threshold.
    Ttc,
    /// The lateral planner reported the evasion infeasible.
    PlannerInfeasible,
    /// Driver input took over.
    DriverInput,
    /// The obstacle no longer closes in.
    ConflictCleared,
    /// The committed steering maneuver finished.
    ManeuverComplete,
}

/// Thresholds for the two risk ladders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskThresholds {
    /// Inverse-TTC level that raises a warning [1/s].
    pub ttc_warn_inv: f64,
    /// Inverse-TTC level above which evasion is attempted [1/s].
    pub ttc_steer_inv: f64,
    /// Distance-ladder tie handling: a gap exactly on a staged distance
    /// takes the more severe zone. TTC comparisons stay strict regardless.
    pub distance_ties_escalate: bool,
}

impl Default for RiskThresholds {
    fn default() -> Self {
        Self { ttc_warn_inv: 0.3, ttc_steer_inv: 0.5, distance_ties_escalate: true }
    }
}

/// Per-obstacle snapshot feeding one assessment tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskInput {
    /// Ego nose to obstacle near face [m].
    pub gap: f64,
    /// Staged distances for this obstacle (sentinel zeros when oncoming).
    pub triple: SafetyTriple,
    /// Inverse TTC, present only for oncoming obstacles [1/s].
    pub ttc_inv: Option<f64>,
    pub oncoming: bool,
    /// Driver is actively taking over.
    pub driver_active: bool,
    /// Latest lateral-plan attempt succeeded (true when never attempted).
    pub planner_feasible: bool,
    /// No committed steering maneuver is still running.
    pub maneuver_complete: bool,
}

/// Current mode with bookkeeping for the decision trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionState {
    pub mode: Mode,
    pub trigger: Trigger,
    /// Time the current mode was entered [s].
    pub entered_at: f64,
}

impl DecisionState {
    pub fn initial() -> Self {
        Self { mode: Mode::Normal, trigger: Trigger::Initial, entered_at: 0.0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("gap must be finite and > 0, got {0}")]
    BadGap(f64),
    #[error("speed must be finite, got {0}")]
    BadSpeed(f64),
}

/// Inverse time-to-collision `(v_ego − v_obj)/gap` [1/s]; `v_obj` is signed
/// along the ego driving direction, so an oncoming obstacle has `v_obj < 0`.
/// Negative results mean the gap is opening.
pub fn ttc_inverse(v_ego: f64, v_obj: f64, gap: f64) -> Result<f64, RiskError> {
    if !v_ego.is_finite() {
        return Err(RiskError::BadSpeed(v_ego));
    }
    if !v_obj.is_finite() {
        return Err(RiskError::BadSpeed(v_obj));
    }
    if !(gap.is_finite() && gap > 0.0) {
        return Err(RiskError::BadGap(gap));
    }
    Ok((v_ego - v_obj) / gap)
}

/// Advances the state machine by one assessment for a single obstacle.
///
/// Pure: the result depends only on the arguments. `now` stamps
/// `entered_at` when the mode changes; an unchanged mode keeps the previous
/// trigger and entry time.
pub fn decide(
    input: &RiskInput,
    prev: &DecisionState,
    thr: &RiskThresholds,
    now: f64,
) -> DecisionState {
    let keep_or = |mode: Mode, trigger: Trigger| -> DecisionState {
        if mode == prev.mode {
            *prev
        } else {
            DecisionState { mode, trigger, entered_at: now }
        }
    };

    // Driver takeover is absorbing.
    if input.driver_active || prev.mode == Mode::DriverOverride {
        return keep_or(Mode::DriverOverride, Trigger::DriverInput);
    }

    // A committed steering maneuver runs to completion.
    if prev.mode == Mode::EmergencySteer {
        if !input.maneuver_complete {
            return *prev;
        }
        return keep_or(Mode::Normal, Trigger::ManeuverComplete);
    }

    if input.oncoming {
        let k = match input.ttc_inv {
            Some(k) if k.is_finite() => k,
            _ => return keep_or(Mode::Normal, Trigger::ConflictCleared),
        };
        // Pre-crash braking holds until the closing rate leaves the
        // warning band entirely.
        if prev.mode == Mode::PreCrashBrake {
            return if k > thr.ttc_warn_inv {
                *prev
            } else {
                keep_or(Mode::Normal, Trigger::Ttc)
            };
        }
        if k > thr.ttc_steer_inv {
            return if input.planner_feasible {
                keep_or(Mode::EmergencySteer, Trigger::Ttc)
            } else {
                keep_or(Mode::PreCrashBrake, Trigger::PlannerInfeasible)
            };
        }
        if k > thr.ttc_warn_inv {
            return keep_or(Mode::Warning, Trigger::Ttc);
        }
        return keep_or(Mode::Normal, Trigger::Ttc);
    }

    if input.triple.no_conflict {
        return keep_or(Mode::Normal, Trigger::ConflictCleared);
    }
    let ties = thr.distance_ties_escalate;

    // Active braking de-escalates only when the gap clears the warning
    // distance (recomputed with the current speed); until then the first
    // stage escalates to full deceleration at the minimum distance and
    // everything else holds.
    if prev.mode.is_braking() {
        if !below(input.gap, input.triple.l_w, ties) {
            return keep_or(Mode::Normal, Trigger::Distance);
        }
        if prev.mode == (Mode::EmergencyBrake { stage: BrakeStage::Min })
            && below(input.gap, input.triple.l_s, ties)
        {
            return keep_or(Mode::EmergencyBrake { stage: BrakeStage::Max }, Trigger::Distance);
        }
        return *prev;
    }

    if below(input.gap, input.triple.l_s, ties) {
        return if input.planner_feasible {
            keep_or(Mode::EmergencySteer, Trigger::Distance)
        } else {
            keep_or(Mode::PreCrashBrake, Trigger::PlannerInfeasible)
        };
    }
    if below(input.gap, input.triple.l_b, ties) {
        return keep_or(Mode::EmergencyBrake { stage: BrakeStage::Min }, Trigger::Distance);
    }
    if below(input.gap, input.triple.l_w, ties) {
        return keep_or(Mode::Warning, Trigger::Distance);
    }
    keep_or(Mode::Normal, Trigger::Distance)
}

fn below(gap: f64, threshold: f64, ties_escalate: bool) -> bool {
    if ties_escalate {
        gap <= threshold
    } else {
        gap < threshold
    }
}

/// Merges per-obstacle assessments: the most severe wins, first obstacle
/// wins ties (callers pass obstacles in stable order).
pub fn severest<I: IntoIterator<Item = DecisionState>>(candidates: I) -> Option<DecisionState> {
    let mut best: Option<DecisionState> = None;
    for c in candidates {
        match &best {
            Some(b) if c.mode.severity() <= b.mode.severity() => {}
            _ => best = Some(c),
        }
    }
    best
}
