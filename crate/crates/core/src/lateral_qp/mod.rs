//! Jerk-bounded lateral trajectory planning as a box-constrained QP.
//!
//! Each planner step carries a state block `(y, v, a, j)`; consecutive
//! blocks are tied by triple-integrator dynamics with the jerk as input.
//! The cost penalizes lateral speed, acceleration, and jerk energy, so the
//! planner returns the most comfortable trajectory that stays inside the
//! drivable envelope. `solver` hosts the operator-splitting solver and
//! `oracle` an independent active-set enumerator used to cross-check it.

pub mod oracle;
pub mod solver;

use crate::drivable_area::SafetyEnvelope;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Comfort weights on squared lateral speed, acceleration, and jerk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { p: 1.0, q: 10.0, r: 100.0 }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in [("p", self.p), ("q", self.q), ("r", self.r)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(format!("{name}: must be >= 0, got {w}"));
            }
        }
        Ok(())
    }
}

/// Symmetric per-step caps on lateral speed, acceleration, and jerk.
#[derive(Debug, Clone, PartialEq)]
pub struct Limits {
    pub v_max: Vec<f64>,
    pub a_max: Vec<f64>,
    pub j_max: Vec<f64>,
}

impl Limits {
    /// Same caps at every one of `n` steps.
    pub fn uniform(n: usize, v_max: f64, a_max: f64, j_max: f64) -> Self {
        Self { v_max: vec![v_max; n], a_max: vec![a_max; n], j_max: vec![j_max; n] }
    }

    pub fn validate(&self, n: usize) -> Result<(), String> {
        for (name, caps) in [("v_max", &self.v_max), ("a_max", &self.a_max), ("j_max", &self.j_max)]
        {
            if caps.len() != n {
                return Err(format!("{name}: expected {n} entries, got {}", caps.len()));
            }
            if let Some(bad) = caps.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
                return Err(format!("{name}: caps must be >= 0, got {bad}"));
            }
        }
        Ok(())
    }
}

/// One lateral kinematic state sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LateralState {
    pub y: f64,
    pub v: f64,
    pub a: f64,
    pub j: f64,
}

/// Solved lateral plan, one sample per planner step.
#[derive(Debug, Clone, PartialEq)]
pub struct LateralTrajectory {
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    pub j: Vec<f64>,
    pub objective: f64,
}

impl LateralTrajectory {
    pub fn from_flat(x: &[f64], objective: f64) -> Self {
        let n = x.len() / 4;
        let mut t = Self {
            y: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            a: Vec::with_capacity(n),
            j: Vec::with_capacity(n),
            objective,
        };
        for k in 0..n {
            t.y.push(x[4 * k]);
            t.v.push(x[4 * k + 1]);
            t.a.push(x[4 * k + 2]);
            t.j.push(x[4 * k + 3]);
        }
        t
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("infeasible at step {step}")]
    Infeasible { step: usize },
    #[error("iteration limit reached without convergence")]
    IterationLimit,
    #[error("bad input: {0}")]
    BadInput(String),
}

/// Assembled box-constrained QP: minimize `½ xᵀ diag(h) x + fᵀx` subject
/// to `A x = b` and `lo ≤ x ≤ hi`, with `x` the flattened state stack.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Number of planner steps.
    pub n: usize,
    pub step_s: f64,
    pub h_diag: Vec<f64>,
    pub f: Vec<f64>,
    pub a_mat: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Builds the QP for an envelope, an initial state (pinned via equal
/// bounds on the first block), comfort weights, and per-step caps.
pub fn assemble(
    env: &SafetyEnvelope,
    init: &LateralState,
    weights: &Weights,
    limits: &Limits,
    step_s: f64,
) -> Result<QpProblem, QpError> {
    let n = env.y_min.len();
    if n < 2 {
        return Err(QpError::BadInput(format!("horizon: need >= 2 steps, got {n}")));
    }
    if env.y_max.len() != n {
        return Err(QpError::BadInput("envelope: y_min/y_max length mismatch".into()));
    }
    if !(step_s.is_finite() && step_s > 0.0) {
        return Err(QpError::BadInput(format!("step_s: must be > 0, got {step_s}")));
    }
    weights.validate().map_err(QpError::BadInput)?;
    limits.validate(n).map_err(QpError::BadInput)?;

    let dim = 4 * n;
    let mut h_diag = vec![0.0; dim];
    let mut lo = vec![0.0; dim];
    let mut hi = vec![0.0; dim];
    for k in 0..n {
        h_diag[4 * k] = 0.0;
        h_diag[4 * k + 1] = 2.0 * weights.p;
        h_diag[4 * k + 2] = 2.0 * weights.q;
        h_diag[4 * k + 3] = 2.0 * weights.r;
        lo[4 * k] = env.y_min[k];
        hi[4 * k] = env.y_max[k];
        lo[4 * k + 1] = -limits.v_max[k];
        hi[4 * k + 1] = limits.v_max[k];
        lo[4 * k + 2] = -limits.a_max[k];
        hi[4 * k + 2] = limits.a_max[k];
        lo[4 * k + 3] = -limits.j_max[k];
        hi[4 * k + 3] = limits.j_max[k];
    }
    for (slot, pin) in [(0, init.y), (1, init.v), (2, init.a), (3, init.j)] {
        lo[slot] = pin;
        hi[slot] = pin;
    }

    // Block rows: propagated state k minus state k+1 equals zero.
    let t = step_s;
    let rows = 3 * (n - 1);
    let mut a_mat = DMatrix::zeros(rows, dim);
    for k in 0..n - 1 {
        let r0 = 3 * k;
        let c0 = 4 * k;
        // y_{k+1} = y_k + T v_k + T²/2 a_k
        a_mat[(r0, c0)] = 1.0;
        a_mat[(r0, c0 + 1)] = t;
        a_mat[(r0, c0 + 2)] = t * t / 2.0;
        a_mat[(r0, c0 + 4)] = -1.0;
        // v_{k+1} = v_k + T a_k
        a_mat[(r0 + 1, c0 + 1)] = 1.0;
        a_mat[(r0 + 1, c0 + 2)] = t;
        a_mat[(r0 + 1, c0 + 5)] = -1.0;
        // a_{k+1} = a_k + T j_k
        a_mat[(r0 + 2, c0 + 2)] = 1.0;
        a_mat[(r0 + 2, c0 + 3)] = t;
        a_mat[(r0 + 2, c0 + 6)] = -1.0;
    }

    Ok(QpProblem {
        n,
        step_s,
        h_diag,
        f: vec![0.0; dim],
        a_mat,
        b: DVector::zeros(rows),
        lo,
        hi,
    })
}

/// Interval-propagation feasibility precheck.
///
/// Propagates axis-aligned boxes over `(y, v, a)` forward through the
/// dynamics, intersecting with the step bounds; an empty intersection
/// proves infeasibility at that step. Passing is necessary, not
/// sufficient, for QP feasibility.
pub fn reachable(p: &QpProblem) -> Result<(), QpError> {
    let t = p.step_s;
    let idx = |k: usize, slot: usize| 4 * k + slot;
    let mut y = (p.lo[idx(0, 0)], p.hi[idx(0, 0)]);
    let mut v = (p.lo[idx(0, 1)], p.hi[idx(0, 1)]);
    let mut a = (p.lo[idx(0, 2)], p.hi[idx(0, 2)]);
    if y.0 > y.1 + 1e-12 || v.0 > v.1 + 1e-12 || a.0 > a.1 + 1e-12 {
        return Err(QpError::Infeasible { step: 0 });
    }
    for k in 0..p.n - 1 {
        let j = (p.lo[idx(k, 3)], p.hi[idx(k, 3)]);
        let y_next = (
            y.0 + t * v.0 + t * t / 2.0 * a.0,
            y.1 + t * v.1 + t * t / 2.0 * a.1,
        );
        let v_next = (v.0 + t * a.0, v.1 + t * a.1);
        let a_next = (a.0 + t * j.0, a.1 + t * j.1);
        y = (y_next.0.max(p.lo[idx(k + 1, 0)]), y_next.1.min(p.hi[idx(k + 1, 0)]));
        v = (v_next.0.max(p.lo[idx(k + 1, 1)]), v_next.1.min(p.hi[idx(k + 1, 1)]));
        a = (a_next.0.max(p.lo[idx(k + 1, 2)]), a_next.1.min(p.hi[idx(k + 1, 2)]));
        if y.0 > y.1 + 1e-12 || v.0 > v.1 + 1e-12 || a.0 > a.1 + 1e-12 {
            return Err(QpError::Infeasible { step: k + 1 });
        }
    }
    Ok(())
}

/// Cost `½ xᵀ diag(h) x + fᵀ x` of a flattened trajectory.
pub fn objective(p: &QpProblem, x: &[f64]) -> f64 {
    x.iter()
        .zip(&p.h_diag)
        .zip(&p.f)
        .map(|((xi, hi), fi)| 0.5 * hi * xi * xi + fi * xi)
        .sum()
}

/// Checks that `x` satisfies the KKT conditions of `p`.
///
/// Primal: dynamics residual and box bounds within `1e-8`. Dual:
/// multipliers are reconstructed by least squares over the dynamics rows
/// and the active-bound coordinate directions, wrong-signed bound
/// multipliers are clipped, and the remaining stationarity residual must
/// stay under `1e-6` (relative to the gradient scale).
pub fn validate(p: &QpProblem, x: &[f64]) -> Result<(), String> {
    let dim = 4 * p.n;
    if x.len() != dim {
        return Err(format!("solution: expected {dim} entries, got {}", x.len()));
    }
    let xv = DVector::from_column_slice(x);

    let eq_res = (&p.a_mat * &xv - &p.b).amax();
    if eq_res > 1e-8 {
        return Err(format!("dynamics residual {eq_res:.3e} exceeds 1e-8"));
    }
    for i in 0..dim {
        if x[i] < p.lo[i] - 1e-8 || x[i] > p.hi[i] + 1e-8 {
            return Err(format!(
                "bound violated at index {i}: {} outside [{}, {}]",
                x[i], p.lo[i], p.hi[i]
            ));
        }
    }

    // Gradient of the objective.
    let mut grad = DVector::zeros(dim);
    for i in 0..dim {
        grad[i] = p.h_diag[i] * x[i] + p.f[i];
    }
    let scale = 1.0 + grad.amax();

    // Columns: dynamics rows (free-signed ν), then -e_i per active lower
    // bound and +e_i per active upper bound (both multipliers >= 0).
    let atol = 1e-7;
    let mut bound_cols = Vec::new();
    for i in 0..dim {
        let pinned = p.hi[i] - p.lo[i] <= 2.0 * atol;
        if pinned {
            bound_cols.push((i, 0.0));
            continue;
        }
        if x[i] - p.lo[i] <= atol {
            bound_cols.push((i, -1.0));
        } else if p.hi[i] - x[i] <= atol {
            bound_cols.push((i, 1.0));
        }
    }

    let solve_ls = |cols: &[(usize, f64)]| -> (DVector<f64>, DVector<f64>) {
        let ncols = p.a_mat.nrows() + cols.len();
        let mut mat = DMatrix::zeros(dim, ncols);
        mat.view_mut((0, 0), (dim, p.a_mat.nrows()))
            .copy_from(&p.a_mat.transpose());
        for (c, (i, sgn)) in cols.iter().enumerate() {
            mat[(*i, p.a_mat.nrows() + c)] = if *sgn == 0.0 { 1.0 } else { *sgn };
        }
        let svd = mat.clone().svd(true, true);
        let mu = svd.solve(&(-&grad), 1e-12).expect("svd solve");
        let res = &grad + &mat * &mu;
        (mu, res)
    };

    let (mu, _) = solve_ls(&bound_cols);
    // Clip wrong-signed bound multipliers (pins are free-signed) and
    // re-solve over the surviving columns.
    let kept: Vec<(usize, f64)> = bound_cols
        .iter()
        .enumerate()
        .filter(|(c, (_, sgn))| *sgn == 0.0 || mu[p.a_mat.nrows() + c] >= -1e-9 * scale)
        .map(|(_, col)| *col)
        .collect();
    let (mu2, res2) = solve_ls(&kept);
    for (c, (_, sgn)) in kept.iter().enumerate() {
        if *sgn != 0.0 && mu2[p.a_mat.nrows() + c] < -1e-6 * scale {
            return Err(format!(
                "bound multiplier has the wrong sign: {:.3e}",
                mu2[p.a_mat.nrows() + c]
            ));
        }
    }
    let st_res = res2.amax();
    if st_res > 1e-6 * scale {
        return Err(format!("stationarity residual {st_res:.3e} exceeds {:.3e}", 1e-6 * scale));
    }
    Ok(())
}

/// Assembles, prechecks, and solves a lateral plan in one call.
pub fn plan(
    env: &SafetyEnvelope,
    init: &LateralState,
    weights: &Weights,
    limits: &Limits,
    step_s: f64,
) -> Result<LateralTrajectory, QpError> {
    let problem = assemble(env, init, weights, limits, step_s)?;
    reachable(&problem)?;
    let x = solver::solve(&problem)?;
    let obj = objective(&problem, &x);
    Ok(LateralTrajectory::from_flat(&x, obj))
}

/// Forward-propagates an initial state under a jerk sequence; used by the
/// solver's reduced parameterization and by tests as an independent model.
pub fn propagate(init: &LateralState, jerks: &[f64], step_s: f64) -> Vec<f64> {
    let n = jerks.len();
    let t = step_s;
    let mut x = Vec::with_capacity(4 * n);
    let (mut y, mut v, mut a) = (init.y, init.v, init.a);
    for (k, &j) in jerks.iter().enumerate() {
        x.extend_from_slice(&[y, v, a, j]);
        if k + 1 < n {
            let y_next = y + t * v + t * t / 2.0 * a;
            let v_next = v + t * a;
            let a_next = a + t * j;
            y = y_next;
            v = v_next;
            a = a_next;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn plain_envelope(n: usize) -> SafetyEnvelope {
        SafetyEnvelope {
            y_min: vec![-5.0; n],
            y_max: vec![5.0; n],
            lane_width: 3.5,
            delta_y: 0.2,
            w_obj: 0.0,
            d_lat: 1.0,
        }
    }

    #[test]
    fn assemble_shapes_and_dynamics_block() {
        let env = plain_envelope(2);
        let p = assemble(
            &env,
            &LateralState::default(),
            &Weights::default(),
            &Limits::uniform(2, 2.0, 3.0, 10.0),
            0.05,
        )
        .unwrap();
        assert_eq!(p.a_mat.nrows(), 3);
        assert_eq!(p.a_mat.ncols(), 8);
        // Jerk-to-acceleration coupling carries the step length.
        assert_eq!(p.a_mat[(2, 3)], 0.05);
        assert_eq!(p.a_mat[(0, 1)], 0.05);
        assert_eq!(p.a_mat[(0, 2)], 0.05 * 0.05 / 2.0);
        assert_eq!(p.a_mat[(0, 4)], -1.0);
        assert_eq!(p.b.amax(), 0.0);
        // First block pinned to the initial state.
        assert_eq!(&p.lo[0..4], &[0.0; 4]);
        assert_eq!(&p.hi[0..4], &[0.0; 4]);
        assert_eq!(p.h_diag[5], 2.0);
        assert_eq!(p.h_diag[6], 20.0);
        assert_eq!(p.h_diag[7], 200.0);
    }

    #[test]
    fn dynamics_rows_annihilate_propagated_trajectories() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let env = plain_envelope(8);
        let p = assemble(
            &env,
            &LateralState { y: 0.3, v: -0.2, a: 0.5, j: 1.0 },
            &Weights::default(),
            &Limits::uniform(8, 10.0, 10.0, 10.0),
            0.05,
        )
        .unwrap();
        for _ in 0..20 {
            let init = LateralState {
                y: rng.gen_range(-1.0..1.0),
                v: rng.gen_range(-2.0..2.0),
                a: rng.gen_range(-3.0..3.0),
                j: rng.gen_range(-10.0..10.0),
            };
            let mut jerks: Vec<f64> = (0..8).map(|_| rng.gen_range(-10.0..10.0)).collect();
            jerks[0] = init.j;
            let x = propagate(&init, &jerks, 0.05);
            let res = (&p.a_mat * DVector::from_column_slice(&x)).amax();
            assert!(res < 1e-12, "dynamics residual {res}");
        }
    }

    #[test]
    fn objective_matches_weighted_energy() {
        let env = plain_envelope(3);
        let p = assemble(
            &env,
            &LateralState::default(),
            &Weights { p: 1.0, q: 10.0, r: 100.0 },
            &Limits::uniform(3, 2.0, 3.0, 10.0),
            0.05,
        )
        .unwrap();
        let x = [0.0, 0.5, 1.0, 2.0, 0.1, -0.5, 0.2, 0.0, 0.3, 0.0, 0.0, 1.0];
        let expect = (0.25 + 0.25) + 10.0 * (1.0 + 0.04) + 100.0 * (4.0 + 1.0);
        assert_relative_eq!(objective(&p, &x), expect, max_relative = 1e-12);

        let zero = assemble(
            &env,
            &LateralState::default(),
            &Weights { p: 0.0, q: 0.0, r: 0.0 },
            &Limits::uniform(3, 2.0, 3.0, 10.0),
            0.05,
        )
        .unwrap();
        assert_eq!(objective(&zero, &x), 0.0);
    }

    #[test]
    fn reach_rejects_over_ambitious_floor() {
        // A floor of 3 m by step 2 cannot be met at 2 m/s and 0.05 s steps.
        let mut env = plain_envelope(4);
        env.y_min = vec![-5.0, -5.0, 3.0, 3.0];
        let p = assemble(
            &env,
            &LateralState::default(),
            &Weights::default(),
            &Limits::uniform(4, 2.0, 3.0, 10.0),
            0.05,
        )
        .unwrap();
        assert_eq!(reachable(&p), Err(QpError::Infeasible { step: 2 }));
    }

    #[test]
    fn reach_separates_tight_from_gentle_floors() {
        // From rest with the first jerk pinned, the box tops out near
        // 0.90 m by step 20 — a 1.0 m floor there is out of reach, the
        // same floor from step 26 is not.
        let mut tight = plain_envelope(40);
        for k in 20..40 {
            tight.y_min[k] = 1.0;
        }
        let limits = Limits::uniform(40, 2.0, 3.0, 10.0);
        let p = assemble(&tight, &LateralState::default(), &Weights::default(), &limits, 0.05)
            .unwrap();
        assert_eq!(reachable(&p), Err(QpError::Infeasible { step: 20 }));

        let mut gentle = plain_envelope(40);
        for k in 26..40 {
            gentle.y_min[k] = 1.0;
        }
        let p = assemble(&gentle, &LateralState::default(), &Weights::default(), &limits, 0.05)
            .unwrap();
        assert_eq!(reachable(&p), Ok(()));
    }

    #[test]
    fn validate_rejects_broken_dynamics() {
        let env = plain_envelope(6);
        let init = LateralState::default();
        let limits = Limits::uniform(6, 2.0, 3.0, 10.0);
        let p = assemble(&env, &init, &Weights::default(), &limits, 0.05).unwrap();
        let x = propagate(&init, &[0.0; 6], 0.05);
        assert!(validate(&p, &x).is_ok());

        let mut broken = x.clone();
        broken[12] += 0.1; // y at step 3 no longer matches the dynamics
        let err = validate(&p, &broken).unwrap_err();
        assert!(err.contains("dynamics residual"), "{err}");
    }

    #[test]
    fn validate_rejects_non_stationary_interior_point() {
        // A trajectory wiggling strictly inside the box cannot be optimal:
        // all multipliers vanish, leaving a nonzero gradient.
        let env = plain_envelope(6);
        let init = LateralState { y: 0.0, v: 0.0, a: 0.0, j: 2.0 };
        let limits = Limits::uniform(6, 8.0, 8.0, 8.0);
        let p = assemble(&env, &init, &Weights::default(), &limits, 0.05).unwrap();
        let x = propagate(&init, &[2.0, 1.0, -1.0, 0.5, 0.0, 0.0], 0.05);
        let err = validate(&p, &x).unwrap_err();
        assert!(err.contains("stationarity"), "{err}");
    }

    #[test]
    fn propagate_matches_manual_recursion() {
        let init = LateralState { y: 1.0, v: -0.5, a: 0.2, j: 3.0 };
        let x = propagate(&init, &[3.0, -2.0, 0.0], 0.1);
        assert_eq!(x.len(), 12);
        assert_eq!(&x[0..4], &[1.0, -0.5, 0.2, 3.0]);
        // Step 1: y = 1 - 0.05 + 0.001, v = -0.5 + 0.02, a = 0.2 + 0.3.
        assert_relative_eq!(x[4], 1.0 + 0.1 * -0.5 + 0.005 * 0.2, max_relative = 1e-12);
        assert_relative_eq!(x[5], -0.5 + 0.1 * 0.2, max_relative = 1e-12);
        assert_relative_eq!(x[6], 0.2 + 0.1 * 3.0, max_relative = 1e-12);
        assert_eq!(x[7], -2.0);
    }
}
