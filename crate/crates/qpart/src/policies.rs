//! Partition-point policies: adaptive refinement around the incumbent
//! (inserting two points per variable scaled by the active cell width),
//! and strong partitioning (preprocess to a warm start, ascend the value
//! function, then sparsify the result).

use std::time::Instant;

use crate::model::Qcqp;
use crate::nsmax::{self, AscentConfig};
use crate::relax::{OaConfig, PartitionMatrix};
use crate::sensitivity::{self, SensError};

/// Points closer than this to an existing partition point are not inserted.
pub const INSERT_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct RefinementState {
    pub p_prev: PartitionMatrix,
    /// Active interval per nonconvex variable (contains the reference point).
    pub active: Vec<usize>,
    /// Reference solution components per nonconvex variable, on [0,1].
    pub x_ref: Vec<f64>,
    /// Cell-width scaling factor for inserted points.
    pub delta: f64,
}

impl RefinementState {
    /// Locates the cell of each reference component in `p`.
    pub fn locate(p: &PartitionMatrix, x_ref: Vec<f64>, delta: f64) -> Self {
        let active = p
            .rows
            .iter()
            .zip(&x_ref)
            .map(|(row, &x)| {
                let mut a = 0;
                for (l, w) in row.windows(2).enumerate() {
                    if x >= w[0] - 1e-9 && (x <= w[1] + 1e-9 || l == row.len() - 2) {
                        a = l;
                        if x <= w[1] + 1e-9 {
                            break;
                        }
                    }
                }
                a
            })
            .collect();
        RefinementState { p_prev: p.clone(), active, x_ref, delta }
    }
}

/// Inserts up to two points per variable around the reference solution,
/// each a cell-width/Δ offset, skipping offsets that leave the active cell.
pub fn alpine_refine(s: &RefinementState) -> PartitionMatrix {
    let mut rows = Vec::with_capacity(s.p_prev.rows.len());
    for ((row, &a), &x) in s.p_prev.rows.iter().zip(&s.active).zip(&s.x_ref) {
        let (lo, hi) = (row[a], row[a + 1]);
        let width = hi - lo;
        let mut new_row: Vec<f64> = row.clone();
        let lower = x - width / s.delta;
        let upper = x + width / s.delta;
        if lower > lo + 1e-12 {
            new_row.push(lower);
        }
        if upper < hi - 1e-12 {
            new_row.push(upper);
        }
        new_row.sort_by(|p, q| p.partial_cmp(q).unwrap());
        rows.push(new_row);
    }
    PartitionMatrix::from_rows(rows).expect("refined rows stay sorted in [0,1]")
}

/// Warm-start construction: repeatedly solve the relaxation and insert every
/// solution component that is not already (approximately) a partition point.
/// Rows are then zero-padded to a common width `d`; the padding entries are
/// reported as pinned in the mask.
pub fn sp_preprocess(
    q: &Qcqp,
    d: usize,
    oa: &OaConfig,
) -> Result<(PartitionMatrix, Vec<Vec<bool>>), SensError> {
    assert!(d >= 1);
    let nc = q.nc_vars();
    let mut points: Vec<Vec<f64>> = vec![vec![0.0, 1.0]; nc.len()];
    for _ in 0..d {
        let p = PartitionMatrix::from_rows(points.clone())?;
        let (_, sol) = sensitivity::solve_relaxation(q, &p, oa)?;
        for (r, &var) in nc.iter().enumerate() {
            let x = sol.primal[var];
            if points[r].iter().all(|&pt| (pt - x).abs() > INSERT_TOL) {
                let pos = points[r].partition_point(|&pt| pt < x);
                points[r].insert(pos, x);
            }
        }
    }
    // zero-pad to uniform width and mask the padding
    let width = d + 2;
    let mut mask = Vec::with_capacity(nc.len());
    for row in &mut points {
        let inserted = row.len() - 2;
        let pad = width - row.len();
        for _ in 0..pad {
            row.insert(0, 0.0);
        }
        let mut m = vec![true; d];
        for j in d - inserted..d {
            m[j] = false;
        }
        mask.push(m);
    }
    Ok((PartitionMatrix { d, rows: points }, mask))
}

/// Sparsification: try zeroing each interior entry (outer loop over columns,
/// inner over variables); keep a zeroing when the relaxation value survives
/// within relative tolerance of the reference value.
pub fn sp_postprocess(
    q: &Qcqp,
    p1: &PartitionMatrix,
    v_bar: f64,
    oa: &OaConfig,
) -> Result<PartitionMatrix, SensError> {
    let mut p = p1.clone();
    let keep_tol = v_bar - 1e-6 * v_bar.abs() - 1e-9;
    for j in 1..=p.d {
        for i in 0..p.rows.len() {
            if p.rows[i][j] == 0.0 {
                continue;
            }
            let mut trial = p.clone();
            trial.rows[i][j] = 0.0;
            trial.rows[i].sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (v, _) = sensitivity::value(q, &trial, oa)?;
            if v >= keep_tol {
                p = trial;
            }
        }
    }
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct SpOutcome {
    pub p: PartitionMatrix,
    /// Relaxation value at the returned matrix.
    pub value: f64,
    /// Ascent iterations spent.
    pub evals: usize,
    pub wall_s: f64,
}

/// The full strong-partitioning pipeline for the first iteration:
/// preprocess, ascend the value function, sparsify.
pub fn strong_partition(
    q: &Qcqp,
    d: usize,
    oa: &OaConfig,
    cfg: &AscentConfig,
) -> Result<SpOutcome, SensError> {
    let start = Instant::now();
    let (p0, mask) = sp_preprocess(q, d, oa)?;
    let ascent = nsmax::maximize(q, &p0, oa, cfg, &mask)?;
    let p = sp_postprocess(q, &ascent.best_p, ascent.best_value, oa)?;
    let (value, _) = sensitivity::value(q, &p, oa)?;
    Ok(SpOutcome { p, value, evals: ascent.iterations, wall_s: start.elapsed().as_secs_f64() })
}
