//! The global-optimization loop: presolve local search for an upper bound,
//! a termwise-envelope root bound, then iterative partition refinement with
//! piecewise-relaxation lower bounds until the relative gap closes. Also the
//! benchmark metrics.

use std::time::{Duration, Instant};

use crate::milp::MilpStatus;
use crate::model::{self, Qcqp};
use crate::nsmax::AscentConfig;
use crate::policies::{self, RefinementState};
use crate::relax::{self, OaConfig, PartitionMatrix};
use crate::rng::CounterRng;
use crate::sensitivity::SensError;

pub const DEFAULT_EPS_REL: f64 = 1e-4;
pub const DEFAULT_EPS_ABS: f64 = 1e-9;
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub eps_rel: f64,
    pub eps_abs: f64,
    pub time_limit: Option<Duration>,
    /// Cell-width scaling for refinement insertions.
    pub delta: f64,
    pub max_iterations: usize,
    pub oa: OaConfig,
    pub local_starts: usize,
    pub milp_rel_gap: f64,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            eps_rel: DEFAULT_EPS_REL,
            eps_abs: DEFAULT_EPS_ABS,
            time_limit: Some(Duration::from_secs(7200)),
            delta: 10.0,
            max_iterations: 100,
            oa: OaConfig::default(),
            local_starts: 5,
            milp_rel_gap: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Policy {
    /// Adaptive refinement around the incumbent from iteration 1 on.
    Default,
    /// Strong partitioning at iteration 1, refinement afterwards.
    StrongPartition { d: usize, ascent: AscentConfig },
    /// Externally supplied first-iteration matrix (e.g. a learned one),
    /// refinement afterwards.
    Provided { p1: PartitionMatrix },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Default => "default",
            Policy::StrongPartition { .. } => "sp",
            Policy::Provided { .. } => "ml",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    TimeLimit,
    IterationLimit,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct IterLog {
    pub iteration: usize,
    pub lbd: f64,
    pub ubd: f64,
    pub wall_s: f64,
    /// Interior points per partition row at this iteration.
    pub partition_d: usize,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub x: Option<Vec<f64>>,
    pub ubd: f64,
    pub lbd: f64,
    /// Lower bound right after the first refinement iteration.
    pub lbd_iter1: Option<f64>,
    pub iterations: usize,
    pub time_s: f64,
    pub log: Vec<IterLog>,
}

#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub instance_id: String,
    pub policy: String,
    pub status: SolveStatus,
    pub time_s: f64,
    pub iterations: usize,
    pub lbd: f64,
    pub ubd: f64,
    pub eff_gap_iter1: Option<f64>,
    pub tle_gap: f64,
}

impl MetricsRecord {
    pub fn from_outcome(
        outcome: &SolveOutcome,
        instance_id: &str,
        policy: &str,
        v_star: Option<f64>,
    ) -> Self {
        MetricsRecord {
            instance_id: instance_id.to_string(),
            policy: policy.to_string(),
            status: outcome.status,
            time_s: outcome.time_s,
            iterations: outcome.iterations,
            lbd: outcome.lbd,
            ubd: outcome.ubd,
            eff_gap_iter1: match (v_star, outcome.lbd_iter1) {
                (Some(v), Some(l)) => Some(effective_gap(v, l)),
                _ => None,
            },
            tle_gap: tle_gap(outcome.ubd, outcome.lbd),
        }
    }

    pub const CSV_HEADER: &'static str =
        "instance_id,policy,status,time_s,iterations,lbd,ubd,eff_gap_iter1,tle_gap";

    pub fn csv_row(&self) -> String {
        let status = match self.status {
            SolveStatus::Optimal => "optimal",
            SolveStatus::TimeLimit => "time_limit",
            SolveStatus::IterationLimit => "iteration_limit",
            SolveStatus::Infeasible => "infeasible",
        };
        format!(
            "{},{},{},{:.6},{},{:.10},{:.10},{},{:.10}",
            self.instance_id,
            self.policy,
            status,
            self.time_s,
            self.iterations,
            self.lbd,
            self.ubd,
            self.eff_gap_iter1.map_or(String::new(), |g| format!("{g:.10}")),
            self.tle_gap
        )
    }
}

/// `exp(mean(ln(t + 10))) − 10` over nonnegative times.
pub fn shifted_geometric_mean(times: &[f64]) -> Option<f64> {
    if times.is_empty() {
        return None;
    }
    let s: f64 = times.iter().map(|&t| (t + 10.0).ln()).sum();
    Some((s / times.len() as f64).exp() - 10.0)
}

/// Floored relative gap of a lower bound against the known optimum.
pub fn effective_gap(v_star: f64, v_lbd: f64) -> f64 {
    ((v_star - v_lbd) / (1e-6 + v_star.abs())).max(1e-4)
}

/// Residual relative gap of an unfinished solve.
pub fn tle_gap(ub: f64, lb: f64) -> f64 {
    (ub - lb) / (1e-6 + ub.abs())
}

fn penalty_value(q: &Qcqp, x: &[f64], mu: f64) -> f64 {
    let mut v = q.objective.value(x);
    for c in &q.constraints {
        let r = c.violation(x);
        v += mu * r * r;
    }
    v
}

fn penalty_gradient(q: &Qcqp, x: &[f64], mu: f64) -> Vec<f64> {
    let mut g = q.objective.gradient(x);
    for c in &q.constraints {
        let r = c.violation(x);
        if r > 0.0 {
            let cg = c.f.gradient(x);
            let sign = match c.sense {
                crate::model::Sense::Le => 1.0,
                crate::model::Sense::Eq => (c.f.value(x) - c.rhs).signum(),
            };
            for (gi, ci) in g.iter_mut().zip(cg) {
                *gi += 2.0 * mu * r * sign * ci;
            }
        }
    }
    g
}

fn project_box(q: &Qcqp, x: &mut [f64]) {
    for (xi, (&l, &u)) in x.iter_mut().zip(q.lower.iter().zip(&q.upper)) {
        *xi = xi.clamp(l, u);
    }
}

fn descend(q: &Qcqp, x0: &[f64], mu: f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut step = 1.0;
    let mut fx = penalty_value(q, &x, mu);
    for _ in 0..300 {
        let g = penalty_gradient(q, &x, mu);
        let gnorm = g.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if gnorm < 1e-12 {
            break;
        }
        // backtracking projected step
        let mut improved = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> =
                x.iter().zip(&g).map(|(&xi, &gi)| xi - step * gi).collect();
            project_box(q, &mut cand);
            let fc = penalty_value(q, &cand, mu);
            if fc < fx - 1e-14 {
                let moved = cand
                    .iter()
                    .zip(&x)
                    .fold(0.0f64, |a, (&c, &o)| a.max((c - o).abs()));
                x = cand;
                fx = fc;
                step *= 1.5;
                improved = true;
                if moved < 1e-12 {
                    return x;
                }
                break;
            }
            step *= 0.5;
            if step < 1e-15 {
                return x;
            }
        }
        if !improved {
            break;
        }
    }
    x
}

/// Multistart penalty descent. Returns the best point meeting the
/// feasibility tolerance, or None when no start reaches feasibility.
pub fn local_search(q: &Qcqp, starts: &[Vec<f64>]) -> Option<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    let total_viol = |x: &[f64]| -> f64 { q.constraints.iter().map(|c| c.violation(x)).sum() };
    for s in starts {
        let mut x0 = s.clone();
        project_box(q, &mut x0);
        let mut warm = x0.clone();
        let mut mu = 10.0;
        loop {
            // penalty minimizers can have spurious infeasible stationary
            // points; re-descending from the original start at each weight
            // escapes them once the penalty dominates
            let xw = descend(q, &warm, mu);
            let xc = descend(q, &x0, mu);
            let mut accepted = false;
            for x in [&xw, &xc] {
                if model::check_feasible(q, x, FEASIBILITY_TOL).0 {
                    let v = q.objective.value(x);
                    match &best {
                        Some((_, b)) if v >= *b => {}
                        _ => best = Some((x.clone(), v)),
                    }
                    accepted = true;
                }
            }
            if accepted || mu > 1e12 {
                break;
            }
            warm = if total_viol(&xw) <= total_viol(&xc) { xw } else { xc };
            mu *= 2.0;
        }
    }
    best
}

fn default_starts(q: &Qcqp, count: usize, seed: u64, stream: u64) -> Vec<Vec<f64>> {
    let mut starts = vec![vec![1.0; q.n], vec![0.5; q.n], vec![0.0; q.n]];
    let mut rng = CounterRng::new(seed, &[0x10c, stream]);
    starts.truncate(count.max(1));
    while starts.len() < count {
        starts.push((0..q.n).map(|_| rng.unit()).collect());
    }
    starts
}

/// The main loop: presolve, root bound, then refine / lower-bound / upper-
/// bound until the relative gap closes.
pub fn solve_global(q: &Qcqp, policy: &Policy, cfg: &SolveConfig) -> Result<SolveOutcome, SensError> {
    if !q.is_unit_box() {
        let (unit, map) = model::normalize_to_unit_box(q)
            .map_err(crate::relax::RelaxError::from)?;
        let mut out = solve_global(&unit, policy, cfg)?;
        out.x = out.x.map(|x| map.to_original(&x));
        return Ok(out);
    }
    let start = Instant::now();
    let nc = q.nc_vars();

    // presolve upper bound
    let starts = default_starts(q, cfg.local_starts, cfg.seed, 1);
    let mut incumbent = local_search(q, &starts);
    let mut ubd = incumbent.as_ref().map_or(f64::INFINITY, |(_, v)| *v);

    // root bound from the termwise envelopes
    let mc = relax::build_mccormick(q, &cfg.oa)?;
    let mc_sol = crate::milp::solve_milp(&mc.milp, cfg.milp_rel_gap, cfg.eps_abs)?;
    if mc_sol.status == MilpStatus::Infeasible {
        return Ok(SolveOutcome {
            status: SolveStatus::Infeasible,
            x: None,
            ubd: f64::INFINITY,
            lbd: f64::INFINITY,
            lbd_iter1: None,
            iterations: 0,
            time_s: start.elapsed().as_secs_f64(),
            log: Vec::new(),
        });
    }
    let mut lbd = mc.objective_value(&mc_sol);
    let mut x_ref_full = match &incumbent {
        Some((x, _)) => x.clone(),
        None => mc_sol.primal[..q.n].to_vec(),
    };
    let mut log = Vec::new();
    let mut lbd_iter1 = None;

    let gap_closed = |ubd: f64, lbd: f64| {
        ubd.is_finite() && (ubd - lbd) <= cfg.eps_rel * (ubd.abs() + 1e-6) + cfg.eps_abs
    };

    if gap_closed(ubd, lbd) {
        return Ok(SolveOutcome {
            status: SolveStatus::Optimal,
            x: incumbent.map(|(x, _)| x),
            ubd,
            lbd,
            lbd_iter1: None,
            iterations: 0,
            time_s: start.elapsed().as_secs_f64(),
            log,
        });
    }

    let mut p = PartitionMatrix::degenerate(nc.len(), 0);
    let mut status = SolveStatus::IterationLimit;
    let mut iterations = 0;

    for l in 1..=cfg.max_iterations {
        if let Some(tl) = cfg.time_limit {
            if start.elapsed() >= tl {
                status = SolveStatus::TimeLimit;
                break;
            }
        }
        iterations = l;

        // refinement step (policy decides iteration 1)
        p = match (l, policy) {
            (1, Policy::StrongPartition { d, ascent }) => {
                policies::strong_partition(q, *d, &cfg.oa, ascent)?.p
            }
            (1, Policy::Provided { p1 }) => p1.clone(),
            _ => {
                let x_nc: Vec<f64> = nc.iter().map(|&v| x_ref_full[v]).collect();
                let state = RefinementState::locate(&p, x_nc, cfg.delta);
                policies::alpine_refine(&state)
            }
        };

        // lower bound from the piecewise relaxation
        let mut pm = relax::build_pmr(q, &p)?;
        let sol = relax::solve_pmr(&mut pm, cfg.milp_rel_gap, cfg.eps_abs)?;
        if sol.status == MilpStatus::Infeasible {
            status = SolveStatus::Infeasible;
            break;
        }
        lbd = lbd.max(pm.objective_value(&sol));
        let x_rel = sol.primal[..q.n].to_vec();

        // upper bound refresh from the relaxation point
        let mut ls_starts = vec![x_rel.clone()];
        if let Some((x, _)) = &incumbent {
            ls_starts.push(x.clone());
        }
        if let Some((x, v)) = local_search(q, &ls_starts) {
            if v < ubd {
                ubd = v;
                incumbent = Some((x, v));
            }
        }
        x_ref_full = x_rel;

        if l == 1 {
            lbd_iter1 = Some(lbd);
        }
        if std::env::var_os("QPART_TRACE").is_some() {
            eprintln!(
                "iter {l}: d={} lbd={lbd:.8} ubd={ubd:.8} nodes={} t={:.2}s",
                p.d,
                sol.nodes,
                start.elapsed().as_secs_f64()
            );
        }
        log.push(IterLog {
            iteration: l,
            lbd,
            ubd,
            wall_s: start.elapsed().as_secs_f64(),
            partition_d: p.d,
        });

        if gap_closed(ubd, lbd) {
            status = SolveStatus::Optimal;
            break;
        }
    }

    Ok(SolveOutcome {
        status,
        x: incumbent.as_ref().map(|(x, _)| x.clone()),
        ubd,
        lbd,
        lbd_iter1,
        iterations,
        time_s: start.elapsed().as_secs_f64(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example1, Constraint, Qcqp, QuadFunc, Sense, SparseSym};

    #[test]
    fn metric_values() {
        assert!(shifted_geometric_mean(&[]).is_none());
        assert!(shifted_geometric_mean(&[0.0]).unwrap().abs() < 1e-12);
        assert!((shifted_geometric_mean(&[90.0, 90.0]).unwrap() - 90.0).abs() < 1e-9);
        let gm = shifted_geometric_mean(&[0.0, 90.0]).unwrap();
        assert!((gm - (1000.0f64.sqrt() - 10.0)).abs() < 1e-9);

        assert!((effective_gap(1.0, 1.0) - 1e-4).abs() < 1e-18);
        assert!((effective_gap(1.0, 0.5) - 0.4999995).abs() < 1e-7);
        assert!((tle_gap(1.0, 0.9) - 0.0999999).abs() < 1e-9);
    }

    #[test]
    fn local_search_square_instance() {
        let q = example1();
        let (x, v) = local_search(&q, &[vec![1.0]]).unwrap();
        assert!((x[0] - 0.4).abs() < 1e-4, "x = {}", x[0]);
        assert!((v - 0.4).abs() < 1e-4);
    }

    #[test]
    fn local_search_convex_instance() {
        // min x² − 0.6x on [0,1]: minimizer 0.3
        let q = Qcqp {
            n: 1,
            objective: QuadFunc {
                q: SparseSym::from_triplets(&[(0, 0, 1.0)]),
                r: vec![-0.6],
                constant: 0.0,
            },
            constraints: vec![],
            bilinear_pairs: vec![],
            quadratic_indices: vec![0],
            lower: vec![0.0],
            upper: vec![1.0],
        };
        let (x, _) = local_search(&q, &[vec![1.0], vec![0.0]]).unwrap();
        assert!((x[0] - 0.3).abs() < 1e-6, "x = {}", x[0]);
    }

    #[test]
    fn local_search_infeasible_returns_none() {
        let q = Qcqp {
            n: 1,
            objective: QuadFunc { q: SparseSym::from_triplets(&[]), r: vec![1.0], constant: 0.0 },
            constraints: vec![Constraint {
                f: QuadFunc { q: SparseSym::from_triplets(&[]), r: vec![1.0], constant: 0.0 },
                sense: Sense::Le,
                rhs: -0.5,
            }],
            bilinear_pairs: vec![],
            quadratic_indices: vec![],
            lower: vec![0.0],
            upper: vec![1.0],
        };
        assert!(local_search(&q, &[vec![0.0], vec![1.0]]).is_none());
    }

    #[test]
    fn strong_partition_closes_in_one_iteration() {
        let q = example1();
        let policy = Policy::StrongPartition { d: 1, ascent: AscentConfig::default() };
        let out = solve_global(&q, &policy, &SolveConfig::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert_eq!(out.iterations, 1);
        assert!((out.ubd - 0.4).abs() < 1e-3);
        assert!((out.lbd - 0.4).abs() < 1e-3);
    }

    #[test]
    fn default_policy_converges() {
        let q = example1();
        let out = solve_global(&q, &Policy::Default, &SolveConfig::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(out.iterations >= 1);
        assert!((out.ubd - 0.4).abs() < 1e-3, "ubd {}", out.ubd);
        // bound monotonicity over the log
        for w in out.log.windows(2) {
            assert!(w[1].lbd >= w[0].lbd - 1e-12);
            assert!(w[1].ubd <= w[0].ubd + 1e-12);
        }
        // converged gap honored
        assert!(out.ubd - out.lbd <= 1e-4 * (out.ubd.abs() + 1e-6) + 1e-9);
    }

    #[test]
    fn bilinear_toy_matches_grid_oracle() {
        // min −x0 x1 + 0.3 x0 + 0.2 x1 on the unit square
        let q = Qcqp {
            n: 2,
            objective: QuadFunc {
                q: SparseSym::from_triplets(&[(0, 1, -0.5)]),
                r: vec![0.3, 0.2],
                constant: 0.0,
            },
            constraints: vec![],
            bilinear_pairs: vec![(0, 1)],
            quadratic_indices: vec![],
            lower: vec![0.0; 2],
            upper: vec![1.0; 2],
        };
        let out = solve_global(&q, &Policy::Default, &SolveConfig::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        let grid = crate::model::brute_force_optimum(&q, 101).unwrap();
        assert!(
            (out.ubd - grid.value).abs() <= grid.resolution_error + 1e-6,
            "ubd {} vs grid {}",
            out.ubd,
            grid.value
        );
    }

    #[test]
    fn csv_row_shape() {
        let rec = MetricsRecord {
            instance_id: "bilinear_10/inst_000".into(),
            policy: "sp".into(),
            status: SolveStatus::Optimal,
            time_s: 1.25,
            iterations: 3,
            lbd: 0.5,
            ubd: 0.5,
            eff_gap_iter1: Some(1e-4),
            tle_gap: 0.0,
        };
        let row = rec.csv_row();
        assert_eq!(row.split(',').count(), MetricsRecord::CSV_HEADER.split(',').count());
    }
}

