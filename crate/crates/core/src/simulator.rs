//! Closed-loop scenario simulator.
//!
//! Replays a scripted scenario at a fixed physics step: every tick each
//! obstacle is assessed (staged distances for same-direction traffic, TTC
//! for oncoming), the most severe assessment advances the decision state
//! machine, and the selected mode drives the brake actuator or the lateral
//! plan playback. A steering plan is attempted exactly once, at the moment
//! the ladder first calls for it; if the envelope or the QP rejects it the
//! run degrades to pre-crash braking. Collision is checked geometrically
//! every tick with oriented rectangles.

use crate::collision::{rects_collide, OrientedRect};
use crate::drivable_area::{
    build_envelope, EgoGeometry, EnvelopeConfig, HazardTiming, ObstacleView, SafetyEnvelope,
};
use crate::lateral_qp::{self, LateralState, LateralTrajectory, Limits, Weights};
use crate::longitudinal::BrakeActuator;
use crate::risk_decision::{
    decide, severest, ttc_inverse, DecisionState, Mode, RiskInput, RiskThresholds, Trigger,
};
use crate::safety_distance::{decel_bounds, safety_triple, BrakingParams, MotionClass, SafetyTriple};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scenario description; the JSON on disk deserializes into this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub ego: EgoSpec,
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub driver: DriverSpec,
    #[serde(default)]
    pub braking: BrakingParams,
    #[serde(default)]
    pub road: RoadSpec,
    #[serde(default)]
    pub risk: RiskSpec,
    #[serde(default)]
    pub planner: PlannerSpec,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSpec {
    /// Initial longitudinal speed [m/s].
    pub speed: f64,
    #[serde(default)]
    pub geometry: GeometrySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySpec {
    pub width: f64,
    pub to_front: f64,
    pub to_rear: f64,
    pub v_y_max: f64,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        let g = EgoGeometry::default();
        Self { width: g.width, to_front: g.to_front, to_rear: g.to_rear, v_y_max: g.v_y_max }
    }
}

impl GeometrySpec {
    fn as_geometry(&self) -> EgoGeometry {
        EgoGeometry {
            width: self.width,
            to_front: self.to_front,
            to_rear: self.to_rear,
            v_y_max: self.v_y_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub footprint: FootprintSpec,
    /// Initial ego-nose-to-near-face gap [m].
    pub gap: f64,
    /// Lateral center position [m].
    #[serde(default)]
    pub lateral: f64,
    /// Longitudinal speed, signed (negative = oncoming) [m/s].
    #[serde(default)]
    pub speed: f64,
    /// Scripted braking deceleration (non-positive) [m/s²].
    #[serde(default)]
    pub accel: f64,
    /// Lateral speed [m/s].
    #[serde(default)]
    pub lateral_speed: f64,
    /// When the perception stack first reports the obstacle; absent means
    /// visible from the start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_from: Option<TriggerSpec>,
    /// When the scripted braking starts; absent means from the start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel_from: Option<TriggerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootprintSpec {
    pub length: f64,
    pub width: f64,
}

/// Event trigger: by remaining gap or by wall-clock time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, untagged)]
pub enum TriggerSpec {
    Gap { gap: f64 },
    Time { time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DriverSpec {
    /// Driver takeover time; the system stands down from then on.
    pub active_from: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadSpec {
    pub lane_width: f64,
    pub delta_y: f64,
    pub merge_margin_s: f64,
}

impl Default for RoadSpec {
    fn default() -> Self {
        let c = EnvelopeConfig::default();
        Self { lane_width: c.lane_width, delta_y: c.delta_y, merge_margin_s: c.merge_margin_s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskSpec {
    pub ttc_warn_inv: f64,
    pub ttc_steer_inv: f64,
}

impl Default for RiskSpec {
    fn default() -> Self {
        let t = RiskThresholds::default();
        Self { ttc_warn_inv: t.ttc_warn_inv, ttc_steer_inv: t.ttc_steer_inv }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSpec {
    /// Planner step T_s [s].
    pub step_s: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    /// Lateral acceleration cap; absent means 0.4 μ g [m/s²].
    pub a_y_cap: Option<f64>,
    pub j_y_max: f64,
}

impl Default for PlannerSpec {
    fn default() -> Self {
        let w = Weights::default();
        Self { step_s: 0.05, p: w.p, q: w.q, r: w.r, a_y_cap: None, j_y_max: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Physics step [s].
    pub dt: f64,
    /// Hard simulation cutoff [s].
    pub t_max: f64,
    /// Extra time simulated after the evasion completes [s].
    pub settle_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { dt: 0.01, t_max: 30.0, settle_s: 1.0 }
    }
}

impl ScenarioSpec {
    /// All violated invariants, each prefixed with the offending path.
    pub fn validate(&self) -> Vec<String> {
        fn check(errs: &mut Vec<String>, cond: bool, msg: String) {
            if !cond {
                errs.push(msg);
            }
        }
        let mut errs = Vec::new();
        let e = &mut errs;
        check(e, !self.name.is_empty(), "name: must not be empty".into());
        check(
            e,
            self.ego.speed.is_finite() && self.ego.speed >= 0.0,
            format!("ego.speed: must be >= 0, got {}", self.ego.speed),
        );
        if let Err(msg) = self.ego.geometry.as_geometry().validate() {
            e.push(format!("ego.geometry.{msg}"));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            check(
                e,
                o.footprint.length.is_finite() && o.footprint.length > 0.0,
                format!(
                    "obstacles[{i}].footprint.length: must be > 0, got {}",
                    o.footprint.length
                ),
            );
            check(
                e,
                o.footprint.width.is_finite() && o.footprint.width > 0.0,
                format!("obstacles[{i}].footprint.width: must be > 0, got {}", o.footprint.width),
            );
            check(
                e,
                o.gap.is_finite() && o.gap > 0.0,
                format!("obstacles[{i}].gap: must be > 0, got {}", o.gap),
            );
            check(e, o.lateral.is_finite(), format!("obstacles[{i}].lateral: must be finite"));
            check(e, o.speed.is_finite(), format!("obstacles[{i}].speed: must be finite"));
            check(
                e,
                o.accel.is_finite() && o.accel <= 0.0,
                format!("obstacles[{i}].accel: must be <= 0 (braking script), got {}", o.accel),
            );
            check(
                e,
                o.lateral_speed.is_finite(),
                format!("obstacles[{i}].lateral_speed: must be finite"),
            );
            check(
                e,
                !(o.speed < 0.0 && o.accel < 0.0),
                format!("obstacles[{i}].accel: braking scripts need a forward-moving obstacle"),
            );
            for (field, trig) in [("visible_from", &o.visible_from), ("accel_from", &o.accel_from)]
            {
                match trig {
                    Some(TriggerSpec::Gap { gap }) => check(
                        e,
                        gap.is_finite() && *gap > 0.0,
                        format!("obstacles[{i}].{field}.gap: must be > 0, got {gap}"),
                    ),
                    Some(TriggerSpec::Time { time }) => check(
                        e,
                        time.is_finite() && *time >= 0.0,
                        format!("obstacles[{i}].{field}.time: must be >= 0, got {time}"),
                    ),
                    None => {}
                }
            }
        }
        if let Some(t) = self.driver.active_from {
            check(
                e,
                t.is_finite() && t >= 0.0,
                format!("driver.active_from: must be >= 0, got {t}"),
            );
        }
        if let Err(msg) = self.braking.validate() {
            e.push(format!("braking.{msg}"));
        }
        check(
            e,
            self.road.lane_width.is_finite() && self.road.lane_width > 0.0,
            format!("road.lane_width: must be > 0, got {}", self.road.lane_width),
        );
        check(
            e,
            self.road.delta_y.is_finite()
                && self.road.delta_y >= 0.0
                && self.road.delta_y < self.road.lane_width,
            format!("road.delta_y: must be in [0, lane_width), got {}", self.road.delta_y),
        );
        check(
            e,
            self.road.merge_margin_s.is_finite() && self.road.merge_margin_s >= 0.0,
            format!("road.merge_margin_s: must be >= 0, got {}", self.road.merge_margin_s),
        );
        check(
            e,
            self.risk.ttc_warn_inv.is_finite() && self.risk.ttc_warn_inv > 0.0,
            format!("risk.ttc_warn_inv: must be > 0, got {}", self.risk.ttc_warn_inv),
        );
        check(
            e,
            self.risk.ttc_steer_inv.is_finite()
                && self.risk.ttc_steer_inv >= self.risk.ttc_warn_inv,
            format!(
                "risk.ttc_steer_inv: must be >= ttc_warn_inv, got {}",
                self.risk.ttc_steer_inv
            ),
        );
        check(
            e,
            self.planner.step_s.is_finite() && self.planner.step_s > 0.0,
            format!("planner.step_s: must be > 0, got {}", self.planner.step_s),
        );
        for (name, w) in [("p", self.planner.p), ("q", self.planner.q), ("r", self.planner.r)] {
            check(e, w.is_finite() && w >= 0.0, format!("planner.{name}: must be >= 0, got {w}"));
        }
        if let Some(cap) = self.planner.a_y_cap {
            check(e, cap.is_finite() && cap > 0.0, format!("planner.a_y_cap: must be > 0, got {cap}"));
        }
        check(
            e,
            self.planner.j_y_max.is_finite() && self.planner.j_y_max > 0.0,
            format!("planner.j_y_max: must be > 0, got {}", self.planner.j_y_max),
        );
        check(
            e,
            self.run.dt.is_finite() && self.run.dt > 0.0,
            format!("run.dt: must be > 0, got {}", self.run.dt),
        );
        check(
            e,
            self.run.t_max.is_finite() && self.run.t_max > 0.0,
            format!("run.t_max: must be > 0, got {}", self.run.t_max),
        );
        check(
            e,
            self.run.settle_s.is_finite() && self.run.settle_s >= 0.0,
            format!("run.settle_s: must be >= 0, got {}", self.run.settle_s),
        );
        if self.run.dt > 0.0 && self.planner.step_s > 0.0 {
            let ratio = self.planner.step_s / self.run.dt;
            check(
                e,
                (ratio - ratio.round()).abs() <= 1e-9 && ratio >= 1.0,
                format!("run.dt: must divide planner.step_s, got ratio {ratio}"),
            );
        }
        errs
    }

    fn a_y_cap(&self) -> f64 {
        self.planner
            .a_y_cap
            .unwrap_or(0.4 * self.braking.mu * self.braking.g)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// One emitted sample per physics tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub a: f64,
    pub mode: &'static str,
    pub gap: f64,
    pub l_w: f64,
    pub l_b: f64,
    pub l_s: f64,
    pub ttc_inv: f64,
    pub y_plan: f64,
    pub vy_plan: f64,
    pub ay_plan: f64,
    pub jy_plan: f64,
    /// Per obstacle: center x, center y, longitudinal speed.
    pub obstacles: Vec<(f64, f64, f64)>,
}

/// The single steering plan of a run, with its envelope for re-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub trajectory: LateralTrajectory,
    pub envelope: SafetyEnvelope,
    pub timing: HazardTiming,
    pub t0: f64,
    pub trigger_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub name: String,
    pub collision: bool,
    /// Smallest positive gap seen to any obstacle [m].
    pub min_gap: f64,
    /// Gap to the first obstacle when the run ended [m].
    pub final_gap: f64,
    /// Peak |lateral acceleration| commanded by the plan [m/s²].
    pub max_abs_ay: f64,
    /// |ego - obstacle| closing speed at impact, if any [m/s].
    pub rel_impact_speed: Option<f64>,
    pub mode_timeline: Vec<(f64, &'static str)>,
    pub plan: Option<PlanRecord>,
    pub rows: Vec<TickRow>,
    pub end_time: f64,
}

struct ObstacleState {
    center_x: f64,
    center_y: f64,
    v: f64,
    brake: BrakeActuator,
    visible: bool,
    accel_on: bool,
}

enum PlanState {
    NotTried,
    Feasible,
    Infeasible,
}

/// Runs one scenario to completion.
pub fn run(spec: &ScenarioSpec) -> Result<RunResult, SimError> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(SimError::Invalid(problems));
    }

    let geom = spec.ego.geometry.as_geometry();
    let params = &spec.braking;
    let (a_min, a_max) = decel_bounds(params);
    let thresholds = RiskThresholds {
        ttc_warn_inv: spec.risk.ttc_warn_inv,
        ttc_steer_inv: spec.risk.ttc_steer_inv,
        ..RiskThresholds::default()
    };
    let env_cfg = EnvelopeConfig {
        lane_width: spec.road.lane_width,
        delta_y: spec.road.delta_y,
        step_s: spec.planner.step_s,
        merge_margin_s: spec.road.merge_margin_s,
    };
    let weights = Weights { p: spec.planner.p, q: spec.planner.q, r: spec.planner.r };
    let dt = spec.run.dt;

    let mut ego_x = 0.0f64;
    let mut ego_y = 0.0f64;
    let mut ego_v = spec.ego.speed;
    let mut brake = BrakeActuator::new(params.tau1, params.tau2);
    let mut obstacles: Vec<ObstacleState> = spec
        .obstacles
        .iter()
        .map(|o| ObstacleState {
            center_x: geom.to_front + o.gap + o.footprint.length / 2.0,
            center_y: o.lateral,
            v: o.speed,
            brake: BrakeActuator::new(params.tau1, params.tau2),
            visible: o.visible_from.is_none(),
            accel_on: o.accel_from.is_none(),
        })
        .collect();

    let mut state = DecisionState::initial();
    let mut timeline: Vec<(f64, &'static str)> = Vec::new();
    let mut plan_state = PlanState::NotTried;
    let mut plan: Option<PlanRecord> = None;
    let mut rows: Vec<TickRow> = Vec::new();
    let mut collision = false;
    let mut rel_impact = None;
    let mut min_gap = f64::INFINITY;
    let mut settle_until: Option<f64> = None;
    let mut t = 0.0f64;

    let n_ticks = (spec.run.t_max / dt) as usize + 1;
    for k in 0..n_ticks {
        let nose = ego_x + geom.to_front;
        let gaps: Vec<f64> = obstacles
            .iter()
            .zip(&spec.obstacles)
            .map(|(s, o)| (s.center_x - o.footprint.length / 2.0) - nose)
            .collect();

        // Perception and script triggers.
        for ((s, o), &gap) in obstacles.iter_mut().zip(&spec.obstacles).zip(&gaps) {
            match o.visible_from {
                Some(TriggerSpec::Gap { gap: g }) if gap <= g => s.visible = true,
                Some(TriggerSpec::Time { time }) if t >= time => s.visible = true,
                _ => {}
            }
            if !s.accel_on {
                let fire = match o.accel_from {
                    Some(TriggerSpec::Gap { gap: g }) => gap <= g,
                    Some(TriggerSpec::Time { time }) => t >= time,
                    None => false,
                };
                if fire {
                    s.accel_on = true;
                    if o.accel < 0.0 {
                        s.brake.command(t, -o.accel);
                    }
                }
            }
        }

        // Risk assessment per obstacle, most severe wins.
        let driver = spec.driver.active_from.map_or(false, |from| t >= from);
        let maneuver_complete = plan
            .as_ref()
            .map(|p| t - p.t0 >= (p.trajectory.y.len() - 1) as f64 * spec.planner.step_s)
            .unwrap_or(false);
        // A successful plan is good for exactly one maneuver; a failed
        // attempt stays failed. Either way a later steer request while no
        // fresh plan exists degrades to pre-crash braking.
        let planner_feasible = matches!(plan_state, PlanState::NotTried)
            || (matches!(plan_state, PlanState::Feasible) && !maneuver_complete);

        let mut candidate_inputs: Vec<(usize, RiskInput)> = Vec::new();
        for (i, (s, o)) in obstacles.iter().zip(&spec.obstacles).enumerate() {
            if !s.visible || gaps[i] <= 0.0 {
                continue;
            }
            let oncoming = s.v < -1e-9;
            let (triple, ttc_inv) = if oncoming {
                let k_inv = ttc_inverse(ego_v, s.v, gaps[i])
                    .map_err(|e| SimError::Numeric(e.to_string()))?;
                (SafetyTriple::none(), Some(k_inv))
            } else {
                let o_speed = s.v.max(0.0);
                let class = if s.accel_on && o.accel < 0.0 && o_speed > 1e-9 {
                    MotionClass::EmergencyBraking { v_obj: o_speed, decel: -o.accel }
                } else if o_speed <= 1e-9 {
                    MotionClass::Stationary
                } else {
                    MotionClass::UniformOrAccelerating { v_obj: o_speed, a_obj: 0.0 }
                };
                let triple = safety_triple(ego_v, &class, params)
                    .map_err(|e| SimError::Numeric(e.to_string()))?;
                (triple, None)
            };
            candidate_inputs.push((
                i,
                RiskInput {
                    gap: gaps[i],
                    triple,
                    ttc_inv,
                    oncoming,
                    driver_active: driver,
                    planner_feasible,
                    maneuver_complete,
                },
            ));
        }

        let decide_all = |feasible: bool, state: &DecisionState| -> (DecisionState, Option<usize>) {
            if candidate_inputs.is_empty() {
                let clear = RiskInput {
                    gap: f64::INFINITY,
                    triple: SafetyTriple::none(),
                    ttc_inv: None,
                    oncoming: false,
                    driver_active: driver,
                    planner_feasible: feasible,
                    maneuver_complete,
                };
                return (decide(&clear, state, &thresholds, t), None);
            }
            let decisions: Vec<(usize, DecisionState)> = candidate_inputs
                .iter()
                .map(|(i, input)| {
                    let input = RiskInput { planner_feasible: feasible, ..*input };
                    (*i, decide(&input, state, &thresholds, t))
                })
                .collect();
            let best = severest(decisions.iter().map(|(_, d)| *d)).expect("non-empty");
            let which = decisions
                .iter()
                .find(|(_, d)| d.mode == best.mode)
                .map(|(i, _)| *i);
            (best, which)
        };

        let (mut next, steer_obstacle) = decide_all(planner_feasible, &state);

        // First call for steering: attempt the one-shot plan now and
        // re-decide within the same tick if it fails.
        if next.mode == Mode::EmergencySteer && matches!(plan_state, PlanState::NotTried) {
            let idx = steer_obstacle.expect("steer decision implies a candidate");
            let s = &obstacles[idx];
            let o = &spec.obstacles[idx];
            let view = ObstacleView {
                gap: gaps[idx],
                length: o.footprint.length,
                width: o.footprint.width,
                lateral_center: s.center_y,
                lateral_v: o.lateral_speed,
                v_long: s.v,
                a_long: if s.accel_on && s.v >= 0.0 { o.accel } else { 0.0 },
            };
            let attempt = build_envelope(&view, ego_v, &geom, &env_cfg).and_then(|(env, timing)| {
                let limits = Limits::uniform(
                    timing.n_end,
                    geom.v_y_max,
                    spec.a_y_cap(),
                    spec.planner.j_y_max,
                );
                lateral_qp::plan(&env, &LateralState::default(), &weights, &limits, spec.planner.step_s)
                    .map(|traj| PlanRecord {
                        trajectory: traj,
                        envelope: env,
                        timing,
                        t0: t,
                        trigger_gap: gaps[idx],
                    })
                    .map_err(|e| crate::drivable_area::EnvelopeError::BadInput(e.to_string()))
            });
            match attempt {
                Ok(record) => {
                    plan = Some(record);
                    plan_state = PlanState::Feasible;
                }
                Err(_) => {
                    plan_state = PlanState::Infeasible;
                    next = decide_all(false, &state).0;
                }
            }
        }

        let mode_changed = next.mode != state.mode;
        if mode_changed && next.mode == Mode::Normal && state.mode == Mode::EmergencySteer {
            if let Trigger::ManeuverComplete = next.trigger {
                if settle_until.is_none() {
                    settle_until = Some(t + spec.run.settle_s);
                }
            }
        }
        state = next;
        if timeline.last().map(|(_, m)| *m) != Some(state.mode.token()) {
            timeline.push((t, state.mode.token()));
        }

        // Actuation.
        match state.mode {
            Mode::EmergencyBrake { stage } => {
                let target = match stage {
                    crate::risk_decision::BrakeStage::Min => a_min,
                    crate::risk_decision::BrakeStage::Max => a_max,
                };
                brake.command(t, target);
            }
            Mode::PreCrashBrake => brake.command(t, a_max),
            _ => {}
        }

        // Ego integration.
        let v_before = ego_v;
        let mut theta = 0.0f64;
        let mut plan_sample = (0.0, 0.0, 0.0, 0.0);
        if state.mode == Mode::EmergencySteer {
            let p = plan.as_ref().expect("steer mode implies a plan");
            let traj = &p.trajectory;
            let n = traj.y.len();
            let idx = (t - p.t0) / spec.planner.step_s;
            let i0 = (idx as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let fr = idx - i0 as f64;
            let lerp = |a: &[f64]| a[i0] * (1.0 - fr) + a[i1] * fr;
            ego_y = lerp(&traj.y);
            plan_sample = (ego_y, lerp(&traj.v), lerp(&traj.a), lerp(&traj.j));
            theta = plan_sample.1.atan2(ego_v);
            ego_x += ego_v * dt;
        } else if state.mode.is_braking() {
            let acc = brake.achieved(t, ego_v);
            let vn = (ego_v - acc * dt).max(0.0);
            ego_x += (ego_v + vn) / 2.0 * dt;
            ego_v = vn;
        } else {
            ego_x += ego_v * dt;
        }
        let realized_a = (ego_v - v_before) / dt;

        // Obstacle integration.
        for (s, o) in obstacles.iter_mut().zip(&spec.obstacles) {
            if s.accel_on && o.accel < 0.0 {
                let oa = s.brake.achieved(t, s.v.max(0.0));
                let vn = (s.v - oa * dt).max(0.0);
                s.center_x += (s.v + vn) / 2.0 * dt;
                s.v = vn;
            } else {
                s.center_x += s.v * dt;
            }
            s.center_y += o.lateral_speed * dt;
        }

        // Geometric collision check.
        let half_span = (geom.to_front + geom.to_rear) / 2.0;
        let offset = (geom.to_front - geom.to_rear) / 2.0;
        let ego_rect = OrientedRect::new(
            ego_x + offset * theta.cos(),
            ego_y + offset * theta.sin(),
            half_span,
            geom.width / 2.0,
            theta,
        );
        let mut hit = None;
        for (s, o) in obstacles.iter().zip(&spec.obstacles) {
            let rect = OrientedRect::new(
                s.center_x,
                s.center_y,
                o.footprint.length / 2.0,
                o.footprint.width / 2.0,
                0.0,
            );
            if rects_collide(&ego_rect, &rect) {
                hit = Some((ego_v - s.v).abs());
                break;
            }
        }

        if hit.is_none() {
            for &gap in &gaps {
                if gap > 0.0 {
                    min_gap = min_gap.min(gap);
                }
            }
        }

        let triple_row = candidate_inputs
            .first()
            .map(|(_, i)| i.triple)
            .unwrap_or_else(SafetyTriple::none);
        let ttc_row = candidate_inputs
            .iter()
            .find_map(|(_, i)| i.ttc_inv)
            .unwrap_or(0.0);
        rows.push(TickRow {
            t,
            x: ego_x,
            y: ego_y,
            v: ego_v,
            a: realized_a,
            mode: state.mode.token(),
            gap: gaps.first().copied().unwrap_or(f64::INFINITY),
            l_w: triple_row.l_w,
            l_b: triple_row.l_b,
            l_s: triple_row.l_s,
            ttc_inv: ttc_row,
            y_plan: plan_sample.0,
            vy_plan: plan_sample.1,
            ay_plan: plan_sample.2,
            jy_plan: plan_sample.3,
            obstacles: obstacles.iter().map(|s| (s.center_x, s.center_y, s.v)).collect(),
        });

        if let Some(speed) = hit {
            collision = true;
            rel_impact = Some(speed);
            t += dt;
            break;
        }

        t += dt;

        let resting_mode = matches!(
            state.mode,
            Mode::Normal | Mode::Warning | Mode::EmergencyBrake { .. } | Mode::PreCrashBrake
        );
        if ego_v <= 0.0 && resting_mode && k > 10 && brake.engaged() {
            break;
        }
        if let Some(until) = settle_until {
            if t >= until {
                break;
            }
        }
    }

    let nose = ego_x + geom.to_front;
    let final_gap = obstacles
        .first()
        .zip(spec.obstacles.first())
        .map(|(s, o)| (s.center_x - o.footprint.length / 2.0) - nose)
        .unwrap_or(f64::INFINITY);
    let max_abs_ay = plan
        .as_ref()
        .map(|p| p.trajectory.a.iter().fold(0.0f64, |m, a| m.max(a.abs())))
        .unwrap_or(0.0);

    Ok(RunResult {
        name: spec.name.clone(),
        collision,
        min_gap,
        final_gap,
        max_abs_ay,
        rel_impact_speed: rel_impact,
        mode_timeline: timeline,
        plan,
        rows,
        end_time: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crossing_pedestrian() -> ScenarioSpec {
        ScenarioSpec {
            name: "unit-pedestrian".into(),
            ego: EgoSpec { speed: 22.2, geometry: GeometrySpec::default() },
            obstacles: vec![ObstacleSpec {
                footprint: FootprintSpec { length: 0.4, width: 0.6 },
                gap: 51.9,
                lateral: -3.4,
                speed: 0.0,
                accel: 0.0,
                lateral_speed: 1.4,
                visible_from: Some(TriggerSpec::Gap { gap: 29.7 }),
                accel_from: None,
            }],
            driver: DriverSpec::default(),
            braking: BrakingParams::default(),
            road: RoadSpec::default(),
            risk: RiskSpec::default(),
            planner: PlannerSpec::default(),
            run: RunConfig { t_max: 10.0, ..RunConfig::default() },
        }
    }

    fn stationary_far() -> ScenarioSpec {
        ScenarioSpec {
            name: "unit-stationary".into(),
            ego: EgoSpec { speed: 25.0, geometry: GeometrySpec::default() },
            obstacles: vec![ObstacleSpec {
                footprint: FootprintSpec { length: 4.5, width: 1.9 },
                gap: 120.0,
                lateral: 0.0,
                speed: 0.0,
                accel: 0.0,
                lateral_speed: 0.0,
                visible_from: None,
                accel_from: None,
            }],
            driver: DriverSpec::default(),
            braking: BrakingParams::default(),
            road: RoadSpec::default(),
            risk: RiskSpec::default(),
            planner: PlannerSpec::default(),
            run: RunConfig::default(),
        }
    }

    #[test]
    fn late_pedestrian_forces_an_immediate_steer() {
        let result = run(&crossing_pedestrian()).unwrap();
        assert!(!result.collision, "timeline: {:?}", result.mode_timeline);
        let plan = result.plan.as_ref().expect("a plan was made");
        // Detected two car-lengths out, exactly one second in.
        assert!((plan.t0 - 1.0).abs() < 0.02, "plan at t={}", plan.t0);
        assert!((plan.trigger_gap - 29.7).abs() < 0.1);
        assert_eq!(plan.timing.n_obj1, 27);
        assert_eq!(plan.timing.n_end, 62);
        let tokens: Vec<&str> = result.mode_timeline.iter().map(|(_, m)| *m).collect();
        assert_eq!(tokens, vec!["normal", "steer", "normal"]);
        // Ends up in the adjacent lane.
        let last = result.rows.last().unwrap();
        assert!(last.y > 3.0, "final lateral offset {}", last.y);
        assert!(result.max_abs_ay <= 2.75);
        // Envelope respected at every plan step.
        for (k, &y) in plan.trajectory.y.iter().enumerate() {
            assert!(y >= plan.envelope.y_min[k] - 1e-6);
            assert!(y <= plan.envelope.y_max[k] + 1e-6);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run(&crossing_pedestrian()).unwrap();
        let b = run(&crossing_pedestrian()).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra, rb);
        }
        assert_eq!(a.mode_timeline, b.mode_timeline);
    }

    #[test]
    fn motion_is_continuous() {
        let result = run(&crossing_pedestrian()).unwrap();
        let dt = 0.01;
        let vx_max = 22.2;
        let vy_bound = (2.0 + 2.75 * 0.05) * dt + 1e-9;
        for w in result.rows.windows(2) {
            assert!(w[1].x - w[0].x <= vx_max * dt + 1e-9);
            assert!(w[1].x >= w[0].x);
            assert!((w[1].y - w[0].y).abs() <= vy_bound);
        }
    }

    #[test]
    fn driver_override_disables_the_system() {
        let mut spec = crossing_pedestrian();
        spec.driver.active_from = Some(0.0);
        let result = run(&spec).unwrap();
        assert!(result.collision, "override run must end in the scripted collision");
        assert!(result.mode_timeline.iter().all(|(_, m)| *m == "override"));
        assert!((result.rel_impact_speed.unwrap() - 22.2).abs() < 1e-9);
    }

    #[test]
    fn early_detection_creeps_down_to_the_standing_gap() {
        let result = run(&stationary_far()).unwrap();
        assert!(!result.collision);
        let tokens: Vec<&str> = result.mode_timeline.iter().map(|(_, m)| *m).collect();
        assert_eq!(&tokens[..2], ["warning", "brake_min"]);
        // As the ego slows the staged distances shrink below the gap and
        // the brake releases; the release/re-brake cycle repeats until the
        // run ends at standstill holding the minimum standing gap.
        assert!(tokens[2..].iter().any(|m| *m == "normal"), "no release in {tokens:?}");
        let last = result.rows.last().unwrap();
        assert_eq!(last.v, 0.0);
        assert!(
            result.final_gap > 3.0 && result.final_gap < 4.5,
            "final gap {}",
            result.final_gap
        );
        assert!(result.end_time < stationary_far().run.t_max);
        assert!(result.plan.is_none());
    }

    #[test]
    fn scenario_spec_roundtrips_through_json() {
        let mut spec = crossing_pedestrian();
        spec.obstacles[0].accel_from = Some(TriggerSpec::Time { time: 1.5 });
        let text = serde_json::to_string_pretty(&spec).unwrap();
        let back: ScenarioSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn validation_pinpoints_bad_fields() {
        let mut spec = crossing_pedestrian();
        spec.obstacles[0].footprint.width = 0.0;
        spec.run.dt = 0.03;
        let errs = spec.validate();
        assert!(errs.iter().any(|e| e.starts_with("obstacles[0].footprint.width: must be > 0")));
        assert!(errs.iter().any(|e| e.starts_with("run.dt: must divide planner.step_s")));
        assert!(run(&spec).is_err());
    }
}
