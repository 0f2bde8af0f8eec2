//! Projected ascent for maximizing the (nonsmooth, nonconvex) partition
//! value function over the partition set. A light aggregate-subgradient
//! scheme: average the subgradients collected since the last accepted step,
//! expand the step on improvement, shrink it on null steps. Guarantees
//! monotone best-value ascent, not stationarity certification.

use std::time::{Duration, Instant};

use crate::model::Qcqp;
use crate::relax::{OaConfig, PartitionMatrix};
use crate::sensitivity::{self, SensError};

#[derive(Debug, Clone)]
pub struct AscentConfig {
    pub max_iterations: usize,
    pub max_subgradient_evals: usize,
    pub stationarity_eps: f64,
    pub bundle_size: usize,
    /// Defaults to `0.1 / (1 + ‖g₀‖∞)` when unset.
    pub initial_step: Option<f64>,
    pub shrink: f64,
    pub expand: f64,
    pub time_limit: Option<Duration>,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            max_iterations: 500,
            max_subgradient_evals: 500,
            stationarity_eps: 1e-9,
            bundle_size: 20,
            initial_step: None,
            shrink: 0.5,
            expand: 2.0,
            time_limit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Stationary,
    IterationLimit,
    NoImprovement,
    TimeLimit,
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub best_p: PartitionMatrix,
    pub best_value: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Best value after each iteration (monotone nondecreasing).
    pub trajectory: Vec<f64>,
}

/// Projects interior entries row-wise, leaving masked entries untouched:
/// clip plus pool-adjacent-violators on the free suffix of each row.
fn project_free(p: &mut PartitionMatrix, mask: &[Vec<bool>]) {
    let d = p.d;
    for (row, fixed) in p.rows.iter_mut().zip(mask) {
        // free entries form a suffix in practice, but handle any mask by
        // projecting the free entries against their fixed neighbors
        let mut free_vals: Vec<f64> = Vec::new();
        let mut free_idx: Vec<usize> = Vec::new();
        for j in 1..=d {
            if !fixed[j - 1] {
                free_vals.push(row[j]);
                free_idx.push(j);
            }
        }
        if free_idx.is_empty() {
            continue;
        }
        let projected = crate::relax::project_to_partition_set(&[{
            let mut r = vec![0.0];
            r.extend(&free_vals);
            r.push(1.0);
            r
        }]);
        for (slot, &j) in free_idx.iter().enumerate() {
            row[j] = projected.rows[0][slot + 1];
        }
        // keep ordering against fixed entries (fixed prefix is 0 in practice)
        for j in 2..=d {
            if row[j] < row[j - 1] {
                row[j] = row[j - 1];
            }
        }
    }
}

fn masked_inf_norm(g: &[Vec<f64>], mask: &[Vec<bool>]) -> f64 {
    let mut m = 0.0f64;
    for (gr, mr) in g.iter().zip(mask) {
        for (v, &fixed) in gr.iter().zip(mr) {
            if !fixed {
                m = m.max(v.abs());
            }
        }
    }
    m
}

/// Maximizes an oracle `P -> (value, subgradient)` over the partition set.
/// The mask has one flag per interior entry (true = pinned).
pub fn maximize_with_oracle<F>(
    p0: &PartitionMatrix,
    cfg: &AscentConfig,
    fixed_mask: &[Vec<bool>],
    mut oracle: F,
) -> Result<AscentResult, SensError>
where
    F: FnMut(&PartitionMatrix) -> Result<(f64, Vec<Vec<f64>>), SensError>,
{
    let start = Instant::now();
    let d = p0.d;
    assert_eq!(fixed_mask.len(), p0.rows.len());
    assert!(fixed_mask.iter().all(|m| m.len() == d));

    let mut evals = 0usize;
    let (v0, g0) = {
        evals += 1;
        oracle(p0)?
    };
    let mut best_p = p0.clone();
    let mut best_value = v0;
    let mut trajectory = vec![v0];
    let mut bundle: Vec<Vec<Vec<f64>>> = vec![g0.clone()];
    let mut step = cfg
        .initial_step
        .unwrap_or_else(|| 0.1 / (1.0 + masked_inf_norm(&g0, fixed_mask)));
    let mut failures = 0usize;

    for it in 0..cfg.max_iterations {
        if let Some(tl) = cfg.time_limit {
            if start.elapsed() >= tl {
                return Ok(done(best_p, best_value, it, Termination::TimeLimit, trajectory));
            }
        }
        if evals >= cfg.max_subgradient_evals {
            return Ok(done(best_p, best_value, it, Termination::IterationLimit, trajectory));
        }

        // aggregate direction: average of the bundle, masked entries zeroed
        let mut dir = vec![vec![0.0; d]; p0.rows.len()];
        for g in &bundle {
            for (dr, gr) in dir.iter_mut().zip(g) {
                for (dv, gv) in dr.iter_mut().zip(gr) {
                    *dv += gv / bundle.len() as f64;
                }
            }
        }
        for (dr, mr) in dir.iter_mut().zip(fixed_mask) {
            for (dv, &fixed) in dr.iter_mut().zip(mr) {
                if fixed {
                    *dv = 0.0;
                }
            }
        }
        let norm = masked_inf_norm(&dir, fixed_mask);
        if norm <= cfg.stationarity_eps {
            return Ok(done(best_p, best_value, it, Termination::Stationary, trajectory));
        }

        let mut cand = best_p.clone();
        for (row, dr) in cand.rows.iter_mut().zip(&dir) {
            for j in 1..=d {
                row[j] += step * dr[j - 1];
            }
        }
        project_free(&mut cand, fixed_mask);

        if cand.rows == best_p.rows {
            step *= cfg.shrink;
            if step < 1e-13 {
                return Ok(done(best_p, best_value, it, Termination::NoImprovement, trajectory));
            }
            trajectory.push(best_value);
            continue;
        }

        evals += 1;
        match oracle(&cand) {
            Ok((v, g)) => {
                failures = 0;
                if v > best_value {
                    best_value = v;
                    best_p = cand;
                    step *= cfg.expand;
                    bundle.clear();
                } else {
                    step *= cfg.shrink;
                    if step < 1e-13 {
                        trajectory.push(best_value);
                        return Ok(done(
                            best_p,
                            best_value,
                            it + 1,
                            Termination::NoImprovement,
                            trajectory,
                        ));
                    }
                }
                bundle.push(g);
                if bundle.len() > cfg.bundle_size {
                    bundle.remove(0);
                }
            }
            Err(_) => {
                failures += 1;
                step *= cfg.shrink;
                if failures >= 5 {
                    return Ok(done(
                        best_p,
                        best_value,
                        it + 1,
                        Termination::NoImprovement,
                        trajectory,
                    ));
                }
            }
        }
        trajectory.push(best_value);
    }
    let iterations = cfg.max_iterations;
    Ok(done(best_p, best_value, iterations, Termination::IterationLimit, trajectory))
}

fn done(
    best_p: PartitionMatrix,
    best_value: f64,
    iterations: usize,
    termination: Termination,
    trajectory: Vec<f64>,
) -> AscentResult {
    AscentResult { best_p, best_value, iterations, termination, trajectory }
}

/// Ascent on the partition value function of the given problem.
pub fn maximize(
    q: &Qcqp,
    p0: &PartitionMatrix,
    oa: &OaConfig,
    cfg: &AscentConfig,
    fixed_mask: &[Vec<bool>],
) -> Result<AscentResult, SensError> {
    maximize_with_oracle(p0, cfg, fixed_mask, |p| {
        let r = sensitivity::generalized_gradient(q, p, oa)?;
        Ok((r.value, r.subgradient))
    })
}
