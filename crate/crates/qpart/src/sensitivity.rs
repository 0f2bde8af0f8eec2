//! The partition value function: evaluation, interval-assignment uniqueness,
//! and generalized gradients from the fixed-assignment LP's primal-dual pair,
//! plus a finite-difference oracle.

use thiserror::Error;

use crate::linsolve::{self, LpStatus, VarStatus};
use crate::milp::{self, MilpSolution, MilpStatus};
use crate::model::Qcqp;
use crate::relax::{self, OaConfig, PartitionMatrix, PmrModel, RelaxError};

#[derive(Debug, Error)]
pub enum SensError {
    #[error("relaxation infeasible: original problem is infeasible")]
    InfeasibleRelaxation,
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error(transparent)]
    Milp(#[from] milp::MilpError),
    #[error(transparent)]
    Lp(#[from] linsolve::LinsolveError),
}

#[derive(Debug, Clone)]
pub struct ValueFunctionResult {
    pub value: f64,
    /// Selected interval per nonconvex variable.
    pub y_star: Vec<usize>,
    /// True when no other interval assignment attains the same value.
    /// When false, the subgradient is one element of the gradient hull,
    /// not guaranteed to be a Clarke subgradient.
    pub unique_y: bool,
    /// Primal or dual degeneracy detected in the fixed-assignment LP.
    pub degenerate: bool,
    /// Per nonconvex variable, derivative w.r.t. each interior partition
    /// point (columns 1..=d of the partition row).
    pub subgradient: Vec<Vec<f64>>,
    pub duality_residual: f64,
    /// Objective slack of the best interval assignment distinct from y_star.
    pub second_best_gap: Option<f64>,
}

pub fn solve_relaxation(
    q: &Qcqp,
    p: &PartitionMatrix,
    oa: &OaConfig,
) -> Result<(PmrModel, MilpSolution), SensError> {
    let m = relax::build_pmr_oa(q, p, oa)?;
    let sol = milp::solve_milp(&m.milp, 1e-6, 1e-9)?;
    if sol.status == MilpStatus::Infeasible {
        return Err(SensError::InfeasibleRelaxation);
    }
    Ok((m, sol))
}

/// Optimal value of the outer-approximated piecewise relaxation.
pub fn value(q: &Qcqp, p: &PartitionMatrix, oa: &OaConfig) -> Result<(f64, Vec<usize>), SensError> {
    let (m, sol) = solve_relaxation(q, p, oa)?;
    Ok((m.objective_value(&sol), sol.y_choice))
}

fn default_tol(v: f64) -> f64 {
    1e-7 * v.abs().max(1.0)
}

/// True iff every other interval assignment is strictly worse: re-solve with
/// the optimal assignment excluded and compare.
pub fn check_unique_y(
    q: &Qcqp,
    p: &PartitionMatrix,
    oa: &OaConfig,
    tol: Option<f64>,
) -> Result<bool, SensError> {
    let (m, sol) = solve_relaxation(q, p, oa)?;
    let v = m.objective_value(&sol);
    let cut = milp::add_no_good_cut(&m.milp, &sol.y_choice);
    let alt = milp::solve_milp(&cut, 1e-6, 1e-9)?;
    let tol = tol.unwrap_or_else(|| default_tol(v));
    Ok(match alt.status {
        MilpStatus::Infeasible => true,
        _ => m.objective_value(&alt) > v + tol,
    })
}

/// Evaluates the value function and one (sub)gradient at P.
pub fn generalized_gradient(
    q: &Qcqp,
    p: &PartitionMatrix,
    oa: &OaConfig,
) -> Result<ValueFunctionResult, SensError> {
    let (m, sol) = solve_relaxation(q, p, oa)?;
    let v = m.objective_value(&sol);

    let lp = relax::fix_y(&m, &sol.y_choice);
    let ls = linsolve::solve_lp(&lp)?;
    if ls.status != LpStatus::Optimal {
        return Err(SensError::InfeasibleRelaxation);
    }

    // degeneracy among the columns that enter the gradient formula (slack
    // columns have partition-independent coefficients and are ignored):
    // a basic variable at its bound, or a nonbasic one with vanishing
    // reduced cost
    let gradient_relevant =
        |j: usize| -> bool { !matches!(m.columns[j], relax::ColumnRole::Slack(_)) };
    let mut degenerate = false;
    for &j in &ls.basis.basic {
        if j >= lp.ncols || !gradient_relevant(j) {
            continue;
        }
        let x = ls.primal[j];
        if (x - lp.col_lower[j]).abs() < 1e-9 || (x - lp.col_upper[j]).abs() < 1e-9 {
            degenerate = true;
        }
    }
    for j in 0..lp.ncols {
        if ls.basis.statuses[j] == VarStatus::Basic
            || lp.col_lower[j] == lp.col_upper[j]
            || !gradient_relevant(j)
        {
            continue;
        }
        let mut d = lp.cost[j];
        for &(r, a) in &lp.cols[j] {
            d -= ls.dual[r] * a;
        }
        if d.abs() < 1e-9 {
            degenerate = true;
        }
    }

    // g_ij = y'(∂rhs) − y'(∂A) z*
    let d = p.d;
    let mut subgradient = vec![vec![0.0; d]; m.nc_vars.len()];
    for i in 0..m.nc_vars.len() {
        for j in 1..=d {
            let jac = relax::partition_jacobian(&m, i, j);
            let mut g = 0.0;
            for &(r, dv) in &jac.rhs {
                g += ls.dual[r] * dv;
            }
            for &(r, c, da) in &jac.coeff {
                g -= ls.dual[r] * da * ls.primal[c];
            }
            subgradient[i][j - 1] = g;
        }
    }

    // uniqueness via no-good re-solve
    let cut = milp::add_no_good_cut(&m.milp, &sol.y_choice);
    let alt = milp::solve_milp(&cut, 1e-6, 1e-9)?;
    let (unique_y, second_best_gap) = match alt.status {
        MilpStatus::Infeasible => (true, None),
        _ => {
            let gap = m.objective_value(&alt) - v;
            (gap > default_tol(v), Some(gap))
        }
    };

    Ok(ValueFunctionResult {
        value: v,
        y_star: sol.y_choice,
        unique_y,
        degenerate,
        subgradient,
        duality_residual: ls.duality_residual,
        second_best_gap,
    })
}

/// Central differences of `value` per interior partition entry; falls back to
/// a one-sided difference when a perturbation would leave the partition set.
pub fn finite_difference_gradient(
    q: &Qcqp,
    p: &PartitionMatrix,
    oa: &OaConfig,
    h: f64,
) -> Result<Vec<Vec<f64>>, SensError> {
    let d = p.d;
    let base = value(q, p, oa)?.0;
    let mut out = vec![vec![0.0; d]; p.rows.len()];
    for i in 0..p.rows.len() {
        for j in 1..=d {
            let shift = |delta: f64| -> Option<PartitionMatrix> {
                let mut rows = p.rows.clone();
                rows[i][j] += delta;
                let m = PartitionMatrix { d, rows };
                m.validate().ok().map(|_| m)
            };
            let plus = shift(h).map(|m| value(q, &m, oa)).transpose()?;
            let minus = shift(-h).map(|m| value(q, &m, oa)).transpose()?;
            out[i][j - 1] = match (plus, minus) {
                (Some((vp, _)), Some((vm, _))) => (vp - vm) / (2.0 * h),
                (Some((vp, _)), None) => (vp - base) / h,
                (None, Some((vm, _))) => (base - vm) / h,
                (None, None) => 0.0,
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example1, Qcqp, QuadFunc, SparseSym};
    use crate::rng::CounterRng;

    fn part1(p: f64) -> PartitionMatrix {
        PartitionMatrix { d: 1, rows: vec![vec![0.0, p, 1.0]] }
    }

    #[test]
    fn value_examples() {
        let q = example1();
        let oa = OaConfig::default();
        let (v, _) = value(&q, &part1(0.4), &oa).unwrap();
        assert!((v - 0.4).abs() < 1e-7);
        let (v, _) = value(&q, &part1(0.7), &oa).unwrap();
        assert!((v - 0.16 / 0.7).abs() < 1e-7);
        let (v, _) = value(&q, &part1(0.0), &oa).unwrap();
        assert!((v - 0.16).abs() < 1e-7);
    }

    #[test]
    fn uniqueness_examples() {
        let q = example1();
        let oa = OaConfig::default();
        assert!(check_unique_y(&q, &part1(0.2), &oa, None).unwrap());

        // symmetric product instance: min W12 attains 0 in several cells
        let prod = SparseSym::from_triplets(&[(0, 1, 0.5)]);
        let sym = Qcqp {
            n: 2,
            objective: QuadFunc { q: prod, r: vec![0.0, 0.0], constant: 0.0 },
            constraints: vec![],
            bilinear_pairs: vec![(0, 1)],
            quadratic_indices: vec![],
            lower: vec![0.0; 2],
            upper: vec![1.0; 2],
        };
        let p = PartitionMatrix { d: 1, rows: vec![vec![0.0, 0.5, 1.0]; 2] };
        assert!(!check_unique_y(&sym, &p, &oa, None).unwrap());
    }

    #[test]
    fn gradient_on_smooth_pieces() {
        let q = example1();
        let oa = OaConfig::default();
        // closed form (0.16+p)/(1+p): derivative 0.84/(1+p)^2
        let r = generalized_gradient(&q, &part1(0.2), &oa).unwrap();
        assert!((r.value - 0.3).abs() < 1e-7);
        assert!(r.unique_y);
        assert!((r.subgradient[0][0] - 0.84 / 1.44).abs() < 1e-5, "g = {}", r.subgradient[0][0]);
        // closed form 0.16/p: derivative −0.16/p², at 0.7
        let r = generalized_gradient(&q, &part1(0.7), &oa).unwrap();
        assert!((r.subgradient[0][0] + 0.16 / 0.49).abs() < 1e-5, "g = {}", r.subgradient[0][0]);
    }

    #[test]
    fn finite_differences_match_closed_form() {
        let q = example1();
        let oa = OaConfig::default();
        let g = finite_difference_gradient(&q, &part1(0.2), &oa, 1e-5).unwrap();
        assert!((g[0][0] - 0.84 / 1.44).abs() < 1e-4, "fd = {}", g[0][0]);
    }

    #[test]
    fn kink_has_one_sided_slopes() {
        let q = example1();
        let oa = OaConfig::default();
        let h = 1e-6;
        let (v0, _) = value(&q, &part1(0.4), &oa).unwrap();
        let (vl, _) = value(&q, &part1(0.4 - h), &oa).unwrap();
        let (vr, _) = value(&q, &part1(0.4 + h), &oa).unwrap();
        let left = (v0 - vl) / h;
        let right = (vr - v0) / h;
        assert!((left - 0.84 / 1.96).abs() < 1e-3, "left slope {left}");
        assert!((right + 1.0).abs() < 1e-3, "right slope {right}");
    }

    #[test]
    fn gradient_matches_fd_when_unique_and_nondegenerate() {
        let mut rng = CounterRng::new(301, &[9]);
        let oa = OaConfig::default();
        let q = example1();
        let mut checked = 0;
        for _ in 0..20 {
            let p = part1(rng.uniform(0.05, 0.95));
            let r = generalized_gradient(&q, &p, &oa).unwrap();
            if !r.unique_y || r.degenerate {
                continue;
            }
            let fd = finite_difference_gradient(&q, &p, &oa, 1e-5).unwrap();
            let gmax = r.subgradient[0][0].abs();
            let tol = (1e-3 * gmax).max(1e-5);
            assert!(
                (r.subgradient[0][0] - fd[0][0]).abs() <= tol.max(1e-4),
                "p={:?}: analytic {} vs fd {}",
                p.rows[0][1],
                r.subgradient[0][0],
                fd[0][0]
            );
            checked += 1;
        }
        assert!(checked >= 10, "only {checked} nondegenerate samples");
    }

    /// Almost-everywhere dichotomy: at sampled P, either the interval
    /// assignment is unique or the relaxation already attains the optimum.
    #[test]
    fn dichotomy_over_sampled_partitions() {
        let mut rng = CounterRng::new(404, &[2]);
        let oa = OaConfig::default();
        let q = example1();
        let vstar = 0.4;
        for _ in 0..100 {
            let p = part1(rng.unit());
            let r = generalized_gradient(&q, &p, &oa).unwrap();
            assert!(
                r.unique_y || r.value >= vstar - 1e-6,
                "p={}: non-unique with value {}",
                p.rows[0][1],
                r.value
            );
        }
    }

    #[test]
    fn value_invariant_under_duplicate_points() {
        let q = example1();
        let oa = OaConfig::default();
        let p1 = PartitionMatrix { d: 2, rows: vec![vec![0.0, 0.3, 0.3, 1.0]] };
        let p2 = part1(0.3);
        let (v1, _) = value(&q, &p1, &oa).unwrap();
        let (v2, _) = value(&q, &p2, &oa).unwrap();
        assert!((v1 - v2).abs() < 1e-9);
    }
}
