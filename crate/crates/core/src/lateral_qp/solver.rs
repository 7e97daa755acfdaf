//! Operator-splitting QP solver in the reduced jerk space.
//!
//! With the first block pinned, every state is an affine function of the
//! jerk sequence, so the box QP over `4N` stacked states reduces to `N`
//! jerk variables with box constraints mapped through the forward model.
//! An ADMM loop drives the iterate toward the optimum and a periodic
//! active-set polish solves the equality-constrained KKT system exactly,
//! returning as soon as the polished point is primal-dual consistent.

use super::{propagate, LateralState, QpError, QpProblem};
use nalgebra::{DMatrix, DVector};

const SIGMA: f64 = 1e-6;
const ALPHA: f64 = 1.6;
const MAX_ITER: usize = 50_000;
const POLISH_EVERY: usize = 50;
const EPS_CONV: f64 = 1e-9;

/// Solves the assembled QP, returning the flattened state stack.
pub fn solve(p: &QpProblem) -> Result<Vec<f64>, QpError> {
    let n = p.n;
    let dim = 4 * n;

    // Reduced parameterization: x = base + M w, w = jerk sequence.
    let init = LateralState { y: p.lo[0], v: p.lo[1], a: p.lo[2], j: 0.0 };
    let base_vec = propagate(&init, &vec![0.0; n], p.step_s);
    let base = DVector::from_column_slice(&base_vec);
    let mut m = DMatrix::zeros(dim, n);
    let zero_init = LateralState::default();
    let mut unit = vec![0.0; n];
    for c in 0..n {
        unit[c] = 1.0;
        let col = propagate(&zero_init, &unit, p.step_s);
        unit[c] = 0.0;
        m.set_column(c, &DVector::from_column_slice(&col));
    }

    let h = DMatrix::from_diagonal(&DVector::from_column_slice(&p.h_diag));
    let g_mat = m.transpose() * &h * &m;
    let f = DVector::from_column_slice(&p.f);
    let g_lin = m.transpose() * (&h * &base + &f);

    let lo: Vec<f64> = p.lo.iter().zip(base.iter()).map(|(l, b)| l - b).collect();
    let hi: Vec<f64> = p.hi.iter().zip(base.iter()).map(|(u, b)| u - b).collect();

    // Per-row step sizes: equality rows (pins) get a stiff multiplier.
    let rho_of = |rho: f64, i: usize| {
        if hi[i] - lo[i] <= 1e-12 {
            rho * 1e3
        } else {
            rho
        }
    };

    let factor = |rho: f64| {
        let mut k = DMatrix::zeros(n + dim, n + dim);
        for i in 0..n {
            for jj in 0..n {
                k[(i, jj)] = g_mat[(i, jj)];
            }
            k[(i, i)] += SIGMA;
        }
        for r in 0..dim {
            for c in 0..n {
                k[(n + r, c)] = m[(r, c)];
                k[(c, n + r)] = m[(r, c)];
            }
            k[(n + r, n + r)] = -1.0 / rho_of(rho, r);
        }
        k.lu()
    };

    let mut rho = 1.0;
    let mut kkt = factor(rho);

    let mut w = DVector::zeros(n);
    let mut z = DVector::from_fn(dim, |i, _| 0.0f64.clamp(lo[i], hi[i]));
    let mut lam = DVector::<f64>::zeros(dim);
    let mut rhs = DVector::zeros(n + dim);

    for iter in 0..MAX_ITER {
        if iter % POLISH_EVERY == 0 {
            if let Some(x) = try_polish(p, &g_mat, &g_lin, &m, &base, &lo, &hi, &z, &lam) {
                return Ok(x);
            }
        }

        for i in 0..n {
            rhs[i] = SIGMA * w[i] - g_lin[i];
        }
        for r in 0..dim {
            rhs[n + r] = z[r] - lam[r] / rho_of(rho, r);
        }
        let sol = kkt.solve(&rhs).ok_or(QpError::IterationLimit)?;
        let w_tilde = sol.rows(0, n).into_owned();
        let nu = sol.rows(n, dim).into_owned();

        let mut prim_res: f64 = 0.0;
        let mut z_new = DVector::zeros(dim);
        for r in 0..dim {
            let rr = rho_of(rho, r);
            let z_tilde = z[r] + (nu[r] - lam[r]) / rr;
            let relaxed = ALPHA * z_tilde + (1.0 - ALPHA) * z[r];
            let cand = relaxed + lam[r] / rr;
            z_new[r] = cand.clamp(lo[r], hi[r]);
            lam[r] += rr * (relaxed - z_new[r]);
        }
        for i in 0..n {
            w[i] = ALPHA * w_tilde[i] + (1.0 - ALPHA) * w[i];
        }
        z = z_new;

        let mw = &m * &w;
        for r in 0..dim {
            prim_res = prim_res.max((mw[r] - z[r]).abs());
        }
        let dual_vec = &g_mat * &w + &g_lin + m.transpose() * &lam;
        let dual_res = dual_vec.amax();
        let prim_scale = 1.0f64.max(mw.amax()).max(z.amax());
        let dual_scale = 1.0f64
            .max((&g_mat * &w).amax())
            .max(g_lin.amax())
            .max((m.transpose() * &lam).amax());

        if prim_res <= EPS_CONV * prim_scale && dual_res <= EPS_CONV * dual_scale {
            if let Some(x) = try_polish(p, &g_mat, &g_lin, &m, &base, &lo, &hi, &z, &lam) {
                return Ok(x);
            }
            let x = &base + &m * &w;
            return Ok(x.iter().copied().collect());
        }

        // Rebalance the step size when the residuals drift apart.
        if iter > 0 && iter % 200 == 0 {
            let ratio = (prim_res / prim_scale) / (dual_res / dual_scale).max(1e-300);
            if ratio > 100.0 || ratio < 0.01 {
                rho = (rho * ratio.sqrt()).clamp(1e-6, 1e6);
                kkt = factor(rho);
            }
        }
    }
    Err(QpError::IterationLimit)
}

/// Attempts an exact equality-constrained solve on the guessed active set.
///
/// Returns the full-space solution when it is feasible and the active-set
/// multipliers carry consistent signs; otherwise `None` and the ADMM loop
/// continues.
#[allow(clippy::too_many_arguments)]
fn try_polish(
    p: &QpProblem,
    g_mat: &DMatrix<f64>,
    g_lin: &DVector<f64>,
    m: &DMatrix<f64>,
    base: &DVector<f64>,
    lo: &[f64],
    hi: &[f64],
    z: &DVector<f64>,
    lam: &DVector<f64>,
) -> Option<Vec<f64>> {
    let n = g_mat.nrows();
    let dim = lo.len();
    let atol = 1e-6;

    // Guess: pins always active; inequality rows by proximity to a bound.
    // side: -1 lower, +1 upper, 0 pinned.
    let mut guess: Vec<(usize, i8)> = Vec::new();
    for r in 0..dim {
        if hi[r] - lo[r] <= 1e-12 {
            guess.push((r, 0));
        } else if z[r] - lo[r] <= atol && lam[r] <= atol {
            guess.push((r, -1));
        } else if hi[r] - z[r] <= atol && lam[r] >= -atol {
            guess.push((r, 1));
        }
    }

    // Keep linearly independent, nonzero rows of M (echelon filter).
    let mut kept: Vec<(usize, i8)> = Vec::new();
    let mut echelon: Vec<DVector<f64>> = Vec::new();
    for &(r, side) in &guess {
        let mut row = m.row(r).transpose().into_owned();
        if row.amax() <= 1e-12 {
            continue;
        }
        for e in &echelon {
            let proj = row.dot(e);
            row -= e * proj;
        }
        if row.norm() > 1e-9 {
            let normalized = &row / row.norm();
            echelon.push(normalized);
            kept.push((r, side));
        }
    }

    let na = kept.len();
    let mut kkt = DMatrix::zeros(n + na, n + na);
    let mut rhs = DVector::zeros(n + na);
    for i in 0..n {
        for jj in 0..n {
            kkt[(i, jj)] = g_mat[(i, jj)];
        }
        rhs[i] = -g_lin[i];
    }
    for (c, &(r, side)) in kept.iter().enumerate() {
        for i in 0..n {
            kkt[(n + c, i)] = m[(r, i)];
            kkt[(i, n + c)] = m[(r, i)];
        }
        rhs[n + c] = if side <= 0 { lo[r] } else { hi[r] };
    }

    let sol = match kkt.clone().full_piv_lu().solve(&rhs) {
        Some(s) => s,
        None => {
            for i in 0..n {
                kkt[(i, i)] += 1e-11;
            }
            for c in 0..na {
                kkt[(n + c, n + c)] -= 1e-11;
            }
            kkt.full_piv_lu().solve(&rhs)?
        }
    };
    let w = sol.rows(0, n).into_owned();
    let nu = sol.rows(n, na).into_owned();

    let mw = m * &w;
    for r in 0..dim {
        if mw[r] < lo[r] - 1e-9 || mw[r] > hi[r] + 1e-9 {
            return None;
        }
    }
    let scale = 1.0 + g_lin.amax();
    for (c, &(_, side)) in kept.iter().enumerate() {
        // Lower-active rows need nu <= 0, upper-active nu >= 0.
        if (side < 0 && nu[c] > 1e-8 * scale) || (side > 0 && nu[c] < -1e-8 * scale) {
            return None;
        }
    }
    let grad_res = (g_mat * &w + g_lin
        + DVector::from_fn(n, |i, _| {
            kept.iter().enumerate().map(|(c, &(r, _))| m[(r, i)] * nu[c]).sum::<f64>()
        }))
    .amax();
    if grad_res > 1e-8 * scale {
        return None;
    }

    let x = base + &mw;
    let mut flat: Vec<f64> = x.iter().copied().collect();
    // Snap the pinned first block exactly.
    flat[0] = p.lo[0];
    flat[1] = p.lo[1];
    flat[2] = p.lo[2];
    flat[3] = p.lo[3];
    Some(flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivable_area::SafetyEnvelope;
    use crate::lateral_qp::{assemble, objective, validate, Limits, Weights};
    use approx::assert_relative_eq;

    fn envelope(y_min: Vec<f64>, y_max: Vec<f64>) -> SafetyEnvelope {
        SafetyEnvelope {
            y_min,
            y_max,
            lane_width: 3.5,
            delta_y: 0.2,
            w_obj: 0.0,
            d_lat: 1.0,
        }
    }

    #[test]
    fn at_rest_stays_at_rest() {
        let env = envelope(vec![-1.0; 5], vec![1.0; 5]);
        let p = assemble(
            &env,
            &LateralState::default(),
            &Weights::default(),
            &Limits::uniform(5, 2.0, 3.0, 10.0),
            0.05,
        )
        .unwrap();
        let x = solve(&p).unwrap();
        assert!(x.iter().all(|v| v.abs() < 1e-9), "{x:?}");
        assert!(objective(&p, &x) < 1e-15);
        assert!(validate(&p, &x).is_ok());
    }

    #[test]
    fn terminal_floor_forces_motion() {
        // Half-second steps leave room to climb 1 m by the last step.
        let n = 8;
        let mut y_min = vec![-5.0; n];
        y_min[n - 1] = 1.0;
        let env = envelope(y_min, vec![5.0; n]);
        let p = assemble(
            &env,
            &LateralState::default(),
            &Weights::default(),
            &Limits::uniform(n, 2.0, 3.0, 10.0),
            0.5,
        )
        .unwrap();
        let x = solve(&p).unwrap();
        assert!(validate(&p, &x).is_ok(), "{:?}", validate(&p, &x));
        assert_relative_eq!(x[4 * (n - 1)], 1.0, epsilon = 1e-6);
        assert!(objective(&p, &x) > 0.0);
    }

    #[test]
    fn weight_scaling_preserves_the_minimizer() {
        let n = 8;
        let mut y_min = vec![-5.0; n];
        y_min[n - 1] = 1.0;
        let env = envelope(y_min, vec![5.0; n]);
        let limits = Limits::uniform(n, 2.0, 3.0, 10.0);
        let init = LateralState::default();
        let p1 = assemble(&env, &init, &Weights { p: 1.0, q: 10.0, r: 100.0 }, &limits, 0.5)
            .unwrap();
        let p2 = assemble(&env, &init, &Weights { p: 3.0, q: 30.0, r: 300.0 }, &limits, 0.5)
            .unwrap();
        let x1 = solve(&p1).unwrap();
        let x2 = solve(&p2).unwrap();
        for (a, b) in x1.iter().zip(&x2) {
            assert!((a - b).abs() < 1e-6, "minimizer moved: {a} vs {b}");
        }
        assert_relative_eq!(
            3.0 * objective(&p1, &x1),
            objective(&p2, &x2),
            max_relative = 1e-7
        );
    }

    #[test]
    fn heavier_jerk_weight_never_increases_jerk_energy() {
        let n = 8;
        let mut y_min = vec![-5.0; n];
        y_min[n - 1] = 1.0;
        let env = envelope(y_min, vec![5.0; n]);
        let limits = Limits::uniform(n, 2.0, 3.0, 10.0);
        let init = LateralState::default();
        let soft = assemble(&env, &init, &Weights { p: 1.0, q: 10.0, r: 50.0 }, &limits, 0.5)
            .unwrap();
        let stiff = assemble(&env, &init, &Weights { p: 1.0, q: 10.0, r: 100.0 }, &limits, 0.5)
            .unwrap();
        let js: f64 = solve(&soft)
            .unwrap()
            .chunks(4)
            .map(|s| s[3] * s[3])
            .sum();
        let jh: f64 = solve(&stiff)
            .unwrap()
            .chunks(4)
            .map(|s| s[3] * s[3])
            .sum();
        assert!(jh <= js + 1e-9, "jerk energy rose from {js} to {jh}");
    }

    #[test]
    fn nonzero_init_is_reproduced_exactly() {
        let n = 6;
        let env = envelope(vec![-5.0; n], vec![5.0; n]);
        let init = LateralState { y: 0.4, v: -0.3, a: 0.6, j: 2.0 };
        let p = assemble(
            &env,
            &init,
            &Weights::default(),
            &Limits::uniform(n, 3.0, 3.0, 10.0),
            0.1,
        )
        .unwrap();
        let x = solve(&p).unwrap();
        assert_eq!(&x[0..4], &[0.4, -0.3, 0.6, 2.0]);
        assert!(validate(&p, &x).is_ok(), "{:?}", validate(&p, &x));
    }
}
