//! Built-in cross-validation of the planner stack.
//!
//! Random planner instances are solved twice — by the operator-splitting
//! solver and by the independent active-set enumeration — and must agree
//! to tight tolerances while both passing the KKT validator. A handful of
//! closed-form spot checks cover the staged-distance and hazard-time
//! formulas. The `selftest` CLI subcommand and the test suite share this
//! module so they exercise identical code paths.

use crate::drivable_area::{self, SafetyEnvelope};
use crate::lateral_qp::{self, oracle, solver, LateralState, Limits, Weights};
use crate::safety_distance::{self, BrakingParams, MotionClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of the randomized solver-vs-reference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheckReport {
    /// Instances where both methods produced a verified optimum.
    pub instances: usize,
    /// Instances whose optimum had at least one bound active.
    pub with_active_bounds: usize,
    /// Generator attempts consumed (reach-infeasible and reference
    /// give-ups are resampled).
    pub attempts: usize,
    pub max_rel_objective_err: f64,
    pub max_abs_solution_err: f64,
}

/// Compares solver and reference on `target` random instances.
///
/// Fails loudly if the solver errors on an instance the reference proved
/// solvable, if either answer flunks the KKT validator, or if the two
/// optima disagree beyond `1e-6` (relative objective, scaled solution).
pub fn run_qp_cross_check(target: usize, seed: u64) -> Result<CrossCheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CrossCheckReport {
        instances: 0,
        with_active_bounds: 0,
        attempts: 0,
        max_rel_objective_err: 0.0,
        max_abs_solution_err: 0.0,
    };
    let max_attempts = target * 80;

    while report.instances < target {
        report.attempts += 1;
        if report.attempts > max_attempts {
            return Err(format!(
                "generator stalled: {} verified instances after {} attempts",
                report.instances, report.attempts
            ));
        }

        let n = rng.gen_range(5..=9usize);
        let step = rng.gen_range(0.1..0.6);
        let weights = Weights {
            p: rng.gen_range(0.0..2.0),
            q: rng.gen_range(0.1..20.0),
            r: rng.gen_range(1.0..200.0),
        };
        let init = LateralState {
            y: rng.gen_range(-0.5..0.5),
            v: rng.gen_range(-1.0..1.0),
            a: rng.gen_range(-1.0..1.0),
            j: rng.gen_range(-3.0..3.0),
        };
        let limits = Limits::uniform(
            n,
            rng.gen_range(1.5..3.0),
            rng.gen_range(2.0..4.0),
            rng.gen_range(6.0..15.0),
        );
        let corridor = rng.gen_range(1.0..4.0);
        let mut y_min = vec![-corridor; n];
        let y_max = vec![corridor; n];
        if rng.gen_bool(0.7) {
            let floor = rng.gen_range(0.1..1.5f64.min(corridor - 0.2));
            let from = rng.gen_range(n.saturating_sub(4).max(2)..n);
            for slot in y_min.iter_mut().skip(from) {
                *slot = floor;
            }
        }
        let env = SafetyEnvelope {
            y_min,
            y_max,
            lane_width: 3.5,
            delta_y: 0.2,
            w_obj: 0.0,
            d_lat: 1.0,
        };

        let problem = match lateral_qp::assemble(&env, &init, &weights, &limits, step) {
            Ok(p) => p,
            Err(e) => return Err(format!("assemble failed on a generated instance: {e}")),
        };
        if lateral_qp::reachable(&problem).is_err() {
            continue;
        }
        let Some(reference) = oracle::solve_by_enumeration(&problem, 12) else {
            continue;
        };
        let solved = solver::solve(&problem).map_err(|e| {
            format!("solver failed on an instance the reference solved: {e} (attempt {})",
                report.attempts)
        })?;

        lateral_qp::validate(&problem, &solved)
            .map_err(|e| format!("solver answer failed validation: {e}"))?;
        lateral_qp::validate(&problem, &reference)
            .map_err(|e| format!("reference answer failed validation: {e}"))?;

        let obj_s = lateral_qp::objective(&problem, &solved);
        let obj_r = lateral_qp::objective(&problem, &reference);
        let rel = (obj_s - obj_r).abs() / (1.0 + obj_r.abs());
        if rel > 1e-6 {
            return Err(format!(
                "objectives diverge: solver {obj_s} vs reference {obj_r} (rel {rel:.3e})"
            ));
        }
        let scale = 1.0 + reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sol_err = solved
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if sol_err > 1e-6 * scale {
            return Err(format!("solutions diverge by {sol_err:.3e} (scale {scale:.3e})"));
        }

        let dim = 4 * problem.n;
        let active = (0..dim).any(|i| {
            let pinned = problem.hi[i] - problem.lo[i] <= 1e-12;
            !pinned
                && ((reference[i] - problem.lo[i]).abs() <= 1e-7
                    || (problem.hi[i] - reference[i]).abs() <= 1e-7)
        });
        if active {
            report.with_active_bounds += 1;
        }
        report.max_rel_objective_err = report.max_rel_objective_err.max(rel);
        report.max_abs_solution_err = report.max_abs_solution_err.max(sol_err);
        report.instances += 1;
    }
    Ok(report)
}

/// Closed-form anchors for the distance, hazard, and braking formulas.
pub fn run_spot_checks() -> Result<(), String> {
    let close = |name: &str, got: f64, want: f64, tol: f64| {
        if (got - want).abs() <= tol {
            Ok(())
        } else {
            Err(format!("{name}: got {got}, want {want} (tol {tol})"))
        }
    };

    close("standstill margin at 25 m/s", safety_distance::standstill_margin(25.0), 7.5209, 1e-9)?;

    let params = BrakingParams::default();
    let braking = MotionClass::EmergencyBraking { v_obj: 16.7, decel: 7.0 };
    let triple = safety_distance::safety_triple(25.0, &braking, &params)
        .map_err(|e| format!("safety triple: {e}"))?;
    close("braking-obstacle warning distance", triple.l_w, 100.71518571428571, 1e-9)?;
    close("braking-obstacle brake distance", triple.l_b, 75.71518571428571, 1e-9)?;
    close("braking-obstacle stage distance", triple.l_s, 42.23304285714286, 1e-9)?;

    let t = drivable_area::collision_hazard_time(25.0, 16.7, -7.0, 26.0)
        .map_err(|e| format!("hazard time: {e}"))?;
    close("hazard time while braking", t, 1.7865727, 1e-6)?;
    let t2 = drivable_area::collision_hazard_time(10.0, 5.0, -4.0, 50.0)
        .map_err(|e| format!("hazard time: {e}"))?;
    close("hazard time after stop", t2, 5.3125, 1e-12)?;

    let d = safety_distance::braking_distance(25.0, 0.0, 4.0, &params)
        .map_err(|e| format!("braking distance: {e}"))?;
    close("braking distance 25 m/s at 4 m/s²", d, 93.125, 1e-9)?;

    let obs = drivable_area::ObstacleView {
        gap: 26.0,
        length: 4.5,
        width: 1.9,
        lateral_center: 0.0,
        lateral_v: 0.0,
        v_long: 16.7,
        a_long: -7.0,
    };
    let (_, timing) = drivable_area::build_envelope(
        &obs,
        25.0,
        &drivable_area::EgoGeometry::default(),
        &drivable_area::EnvelopeConfig::default(),
    )
    .map_err(|e| format!("envelope: {e}"))?;
    if (timing.n_obj1, timing.n_obj2, timing.n_end) != (36, 45, 75) {
        return Err(format!(
            "envelope indices: got ({}, {}, {}), want (36, 45, 75)",
            timing.n_obj1, timing.n_obj2, timing.n_end
        ));
    }
    Ok(())
}
