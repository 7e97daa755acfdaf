//! Independent QP reference: exhaustive active-set enumeration.
//!
//! Works directly on the full stacked-state problem, never touching the
//! solver's reduced parameterization. Starting from the equality-only
//! optimum, bounds it violates seed a candidate pool; subsets of the pool
//! are tried in increasing size, each solved as an equality-constrained
//! KKT system and accepted only when primal-feasible with sign-consistent
//! multipliers. Any accepted point is a global optimum of the convex QP,
//! so the first hit wins. Returns `None` when the pool grows beyond
//! `max_pool` — callers treat that as "resample", keeping the reference
//! honest rather than heuristic.

use super::QpProblem;
use nalgebra::{DMatrix, DVector};

/// Solves `p` by active-set enumeration, or gives up with `None`.
pub fn solve_by_enumeration(p: &QpProblem, max_pool: usize) -> Option<Vec<f64>> {
    let dim = 4 * p.n;
    let mut pins: Vec<usize> = Vec::new();
    for i in 0..dim {
        if p.hi[i] - p.lo[i] <= 1e-12 {
            pins.push(i);
        }
    }

    // side: -1 lower, +1 upper.
    let mut pool: Vec<(usize, i8)> = Vec::new();
    for _round in 0..8 {
        if pool.len() > max_pool {
            return None;
        }
        let masks = masks_by_popcount(pool.len());
        let mut worst_new: Option<(usize, i8, f64)> = None;
        for mask in masks {
            let subset: Vec<(usize, i8)> = pool
                .iter()
                .enumerate()
                .filter(|(b, _)| mask >> b & 1 == 1)
                .map(|(_, c)| *c)
                .collect();
            if has_conflicting_sides(&subset) {
                continue;
            }
            let Some((x, nu_bounds)) = solve_active(p, &pins, &subset) else {
                continue;
            };
            match check_point(p, &x, &subset, &nu_bounds) {
                Ok(()) => return Some(x),
                Err(violated) => {
                    if let Some((i, side, amount)) = violated {
                        let fresh = !pool.iter().any(|&(pi, ps)| pi == i && ps == side);
                        if fresh
                            && worst_new.map(|(_, _, a)| amount > a).unwrap_or(true)
                        {
                            worst_new = Some((i, side, amount));
                        }
                    }
                }
            }
        }
        let (i, side, _) = worst_new?;
        pool.push((i, side));
    }
    None
}

fn masks_by_popcount(n_bits: usize) -> Vec<u32> {
    let mut masks: Vec<u32> = (0..(1u32 << n_bits)).collect();
    masks.sort_by_key(|m| m.count_ones());
    masks
}

fn has_conflicting_sides(subset: &[(usize, i8)]) -> bool {
    for (k, &(i, s)) in subset.iter().enumerate() {
        for &(i2, s2) in &subset[k + 1..] {
            if i == i2 && s != s2 {
                return true;
            }
        }
    }
    false
}

/// Equality-constrained KKT solve with the given active bounds.
///
/// Returns the primal point and the multipliers of the active bounds
/// (pins and dynamics multipliers are free-signed and not reported).
fn solve_active(
    p: &QpProblem,
    pins: &[usize],
    subset: &[(usize, i8)],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let dim = 4 * p.n;
    let n_dyn = p.a_mat.nrows();

    // Stack rows: dynamics, pins, active bounds; echelon-filter to an
    // independent subset, remembering which stacked row each kept row was.
    let total = n_dyn + pins.len() + subset.len();
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(total);
    for r in 0..n_dyn {
        rows.push((p.a_mat.row(r).transpose().into_owned(), p.b[r]));
    }
    for &i in pins {
        let mut e = DVector::zeros(dim);
        e[i] = 1.0;
        rows.push((e, p.lo[i]));
    }
    for &(i, side) in subset {
        let mut e = DVector::zeros(dim);
        e[i] = 1.0;
        rows.push((e, if side < 0 { p.lo[i] } else { p.hi[i] }));
    }

    let mut echelon: Vec<DVector<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for (ridx, (row, _)) in rows.iter().enumerate() {
        let mut w = row.clone();
        for e in &echelon {
            let proj = w.dot(e);
            w -= e * proj;
        }
        if w.norm() > 1e-9 {
            echelon.push(&w / w.norm());
            kept.push(ridx);
        }
    }

    let na = kept.len();
    let mut kkt = DMatrix::zeros(dim + na, dim + na);
    let mut rhs = DVector::zeros(dim + na);
    for i in 0..dim {
        kkt[(i, i)] = p.h_diag[i];
        rhs[i] = -p.f[i];
    }
    for (c, &ridx) in kept.iter().enumerate() {
        let (row, d) = &rows[ridx];
        for i in 0..dim {
            kkt[(dim + c, i)] = row[i];
            kkt[(i, dim + c)] = row[i];
        }
        rhs[dim + c] = *d;
    }
    let sol = kkt.full_piv_lu().solve(&rhs)?;
    let x: Vec<f64> = sol.rows(0, dim).iter().copied().collect();

    // A dropped (dependent) row must still be satisfied, else the subset
    // is contradictory.
    for (row, d) in &rows {
        if (row.dot(&sol.rows(0, dim).into_owned()) - d).abs() > 1e-8 {
            return None;
        }
    }

    // Multipliers for active bounds (zero for rows dropped as dependent).
    let mut nu_bounds = vec![0.0; subset.len()];
    for (c, &ridx) in kept.iter().enumerate() {
        if ridx >= n_dyn + pins.len() {
            nu_bounds[ridx - n_dyn - pins.len()] = sol[dim + c];
        }
    }
    Some((x, nu_bounds))
}

/// Accepts a KKT point or reports the most violated bound for expansion.
type Violation = Option<(usize, i8, f64)>;

fn check_point(
    p: &QpProblem,
    x: &[f64],
    subset: &[(usize, i8)],
    nu_bounds: &[f64],
) -> Result<(), Violation> {
    let dim = 4 * p.n;
    let mut worst: Violation = None;
    for i in 0..dim {
        let below = p.lo[i] - x[i];
        let above = x[i] - p.hi[i];
        if below > 1e-9 && worst.map(|(_, _, a)| below > a).unwrap_or(true) {
            worst = Some((i, -1, below));
        }
        if above > 1e-9 && worst.map(|(_, _, a)| above > a).unwrap_or(true) {
            worst = Some((i, 1, above));
        }
    }
    if worst.is_some() {
        return Err(worst);
    }
    let scale = 1.0
        + x.iter()
            .zip(&p.h_diag)
            .zip(&p.f)
            .map(|((xi, h), f)| (h * xi + f).abs())
            .fold(0.0f64, f64::max);
    for (c, &(_, side)) in subset.iter().enumerate() {
        // Lower-active rows need nu <= 0, upper-active nu >= 0.
        if (side < 0 && nu_bounds[c] > 1e-9 * scale)
            || (side > 0 && nu_bounds[c] < -1e-9 * scale)
        {
            return Err(None);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivable_area::SafetyEnvelope;
    use crate::lateral_qp::{assemble, objective, solver, validate, LateralState, Limits, Weights};
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
    fn interior_optimum_needs_no_active_bounds() {
        let env = envelope(vec![-1.0; 5], vec![1.0; 5]);
        let p = assemble(
            &env,
            &LateralState::default(),
            &Weights::default(),
            &Limits::uniform(5, 2.0, 3.0, 10.0),
            0.05,
        )
        .unwrap();
        let x = solve_by_enumeration(&p, 12).unwrap();
        assert!(x.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn forced_lower_bound_is_reported_with_consistent_signs() {
        // Pin the first block to rest, then force the second jerk >= 2.
        let env = envelope(vec![-5.0; 2], vec![5.0; 2]);
        let mut p = assemble(
            &env,
            &LateralState::default(),
            &Weights { p: 1.0, q: 10.0, r: 100.0 },
            &Limits::uniform(2, 3.0, 3.0, 10.0),
            0.05,
        )
        .unwrap();
        p.lo[7] = 2.0;
        let x = solve_by_enumeration(&p, 12).unwrap();
        assert_relative_eq!(x[7], 2.0, epsilon = 1e-9);
        // j0 = 0 pinned, j1 = 2 forced: objective is r * 4.
        assert_relative_eq!(objective(&p, &x), 400.0, max_relative = 1e-9);
        assert!(validate(&p, &x).is_ok());
    }

    #[test]
    fn agrees_with_the_solver_on_a_binding_instance() {
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
        let by_enum = solve_by_enumeration(&p, 12).unwrap();
        let by_admm = solver::solve(&p).unwrap();
        for (a, b) in by_enum.iter().zip(&by_admm) {
            assert!((a - b).abs() < 1e-6, "solutions diverge: {a} vs {b}");
        }
        assert_relative_eq!(
            objective(&p, &by_enum),
            objective(&p, &by_admm),
            max_relative = 1e-8
        );
    }
}
