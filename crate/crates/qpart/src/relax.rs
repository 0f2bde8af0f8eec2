//! Relaxation builders for box-constrained QCQPs.
//!
//! Every product term x_i x_j (and square x_k^2) gets a lifted variable
//! W_ij. `build_mccormick` bounds W by the termwise convex envelope;
//! `build_pmr` / `build_pmr_oa` use the piecewise ("lambda") formulation
//! driven by a matrix of partition points, with binary interval selectors Y.
//! Squares are handled by secant upper bounds plus tangent lower cuts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linsolve::StandardFormLp;
use crate::milp::{self, MilpModel, MilpSolution};
use crate::model::Qcqp;

pub const SEPARATION_TOL: f64 = 1e-8;
pub const SEPARATION_ROUNDS: usize = 50;
const POINT_MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RelaxError {
    #[error("partition matrix invalid: {0}")]
    InvalidPartition(String),
    #[error("model is not on the unit box")]
    NotUnitBox,
    #[error("product term ({0},{1}) not declared in the model's term sets")]
    UndeclaredTerm(usize, usize),
    #[error(transparent)]
    Milp(#[from] milp::MilpError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Partition points per nonconvex variable, endpoints included:
/// row i is `0 = P_i1 <= ... <= P_i(d+2) = 1` with `d` interior points.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PartitionMatrix {
    pub d: usize,
    pub rows: Vec<Vec<f64>>,
}

impl PartitionMatrix {
    /// All-zero interior points: behaves like no partitioning at all.
    pub fn degenerate(nvars: usize, d: usize) -> Self {
        let mut row = vec![0.0; d + 1];
        row.push(1.0);
        PartitionMatrix { d, rows: vec![row; nvars] }
    }

    /// Builds from per-variable point lists (endpoints included), left-padding
    /// shorter rows with zeros so every row has the same length.
    pub fn from_rows(mut rows: Vec<Vec<f64>>) -> Result<Self, RelaxError> {
        let width = rows.iter().map(Vec::len).max().unwrap_or(2).max(2);
        for row in &mut rows {
            while row.len() < width {
                row.insert(0, 0.0);
            }
        }
        let p = PartitionMatrix { d: width - 2, rows };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), RelaxError> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.d + 2 {
                return Err(RelaxError::InvalidPartition(format!(
                    "row {i} has {} entries, expected {}",
                    row.len(),
                    self.d + 2
                )));
            }
            if row[0] != 0.0 || *row.last().unwrap() != 1.0 {
                return Err(RelaxError::InvalidPartition(format!(
                    "row {i} endpoints must be 0 and 1"
                )));
            }
            for w in row.windows(2) {
                if w[1] < w[0] - 1e-12 {
                    return Err(RelaxError::InvalidPartition(format!("row {i} not sorted")));
                }
            }
        }
        Ok(())
    }

    /// True when every row is strictly increasing (relative interior of the
    /// partition set).
    pub fn is_strictly_interior(&self) -> bool {
        self.rows
            .iter()
            .all(|row| row.windows(2).all(|w| w[1] > w[0] + POINT_MERGE_TOL))
    }
}

/// Weighted pool-adjacent-violators: least-squares nondecreasing fit.
fn pava(values: &[f64]) -> Vec<f64> {
    let mut level: Vec<f64> = Vec::with_capacity(values.len());
    let mut weight: Vec<f64> = Vec::with_capacity(values.len());
    let mut count: Vec<usize> = Vec::with_capacity(values.len());
    for &v in values {
        level.push(v);
        weight.push(1.0);
        count.push(1);
        while level.len() > 1 {
            let k = level.len();
            if level[k - 2] <= level[k - 1] + 1e-15 {
                break;
            }
            let w = weight[k - 2] + weight[k - 1];
            let lv = (level[k - 2] * weight[k - 2] + level[k - 1] * weight[k - 1]) / w;
            level.truncate(k - 1);
            weight.truncate(k - 1);
            let c = count.pop().unwrap();
            level[k - 2] = lv;
            weight[k - 2] = w;
            count[k - 2] += c;
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (lv, c) in level.iter().zip(&count) {
        for _ in 0..*c {
            out.push(*lv);
        }
    }
    out
}

/// Euclidean projection of each row's interior entries onto
/// `{0 <= p_2 <= ... <= p_(d+1) <= 1}`: isotonic regression then clipping.
pub fn project_to_partition_set(raw_rows: &[Vec<f64>]) -> PartitionMatrix {
    let mut rows = Vec::with_capacity(raw_rows.len());
    for raw in raw_rows {
        let d = raw.len().saturating_sub(2);
        let mut interior = pava(&raw[1..1 + d]);
        for v in &mut interior {
            *v = v.clamp(0.0, 1.0);
        }
        let mut row = Vec::with_capacity(d + 2);
        row.push(0.0);
        row.extend(interior);
        row.push(1.0);
        rows.push(row);
    }
    let d = rows.iter().map(|r| r.len()).max().unwrap_or(2) - 2;
    let _ = d;
    PartitionMatrix::from_rows(rows).expect("projection output is always valid")
}

/// Tangent-point configuration for the square terms: partition points plus
/// `grid` uniformly spaced interior points on [0,1].
#[derive(Debug, Clone, Copy)]
pub struct OaConfig {
    pub grid: usize,
}

impl Default for OaConfig {
    fn default() -> Self {
        OaConfig { grid: 8 }
    }
}

/// Convex-envelope coefficients for W = x_i x_j on a box: W >= each `under`
/// and W <= each `over` row, rows being (a, b, c) for a·x_i + b·x_j + c.
pub fn mccormick_bounds(xi_range: (f64, f64), xj_range: (f64, f64)) -> ([(f64, f64, f64); 2], [(f64, f64, f64); 2]) {
    let (li, ui) = xi_range;
    let (lj, uj) = xj_range;
    let under = [(lj, li, -li * lj), (uj, ui, -ui * uj)];
    let over = [(uj, li, -li * uj), (lj, ui, -ui * lj)];
    (under, over)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// The lower-indexed variable of the pair (its points index l).
    First,
    /// The higher-indexed variable (its points index k).
    Second,
}

/// Row classification. The partition-dependent block is assembled first so
/// its rows form a prefix of the LP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// `x = Σ Λ P` for one side of a bilinear pair.
    BilinX { pair: usize, side: Side },
    /// `W = Σ Λ P_il P_jk` for a bilinear pair.
    BilinW { pair: usize },
    /// `x = Σ Λ P` for a squared variable (index into `lambda_q`).
    QuadX { q: usize },
    /// Secant upper bound `W <= Σ Λ P²`.
    QuadSecant { q: usize },
    /// Tangent cut `W >= 2αx − α²` with α a partition point (emitted index).
    OaPartition { q: usize, point: usize },
    /// Tangent cut with a constant α (no partition dependence).
    OaGrid,
    Static,
    Sos1,
    Bracket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    X(usize),
    W(usize, usize),
    LambdaB { pair: usize, k: usize, l: usize },
    LambdaQ { q: usize, l: usize },
    Y { nc: usize, interval: usize },
    Slack(usize),
}

/// Distinct partition points of one variable after merging duplicates; each
/// emitted point remembers which original columns it stands for.
#[derive(Debug, Clone)]
pub struct EmitRow {
    pub points: Vec<f64>,
    pub orig: Vec<Vec<usize>>,
}

impl EmitRow {
    /// Intervals an emitted point touches; a merged point unions the
    /// neighborhoods of the original columns it stands for.
    pub fn adjacent_intervals(&self, c: usize, d: usize) -> Vec<usize> {
        let mut ts: Vec<usize> = Vec::new();
        for &p0 in &self.orig[c] {
            if p0 >= 1 && !ts.contains(&(p0 - 1)) {
                ts.push(p0 - 1);
            }
            if p0 <= d && !ts.contains(&p0) {
                ts.push(p0);
            }
        }
        ts.sort_unstable();
        ts
    }
}

fn emit_points(row: &[f64]) -> EmitRow {
    let mut points = Vec::new();
    let mut orig: Vec<Vec<usize>> = Vec::new();
    for (idx, &v) in row.iter().enumerate() {
        match points.last() {
            Some(&last) if (v - last) as f64 <= POINT_MERGE_TOL => {
                orig.last_mut().unwrap().push(idx)
            }
            _ => {
                points.push(v);
                orig.push(vec![idx]);
            }
        }
    }
    EmitRow { points, orig }
}

#[derive(Debug, Clone)]
pub struct PmrModel {
    pub milp: MilpModel,
    pub obj_constant: f64,
    pub rows: Vec<RowKind>,
    pub columns: Vec<ColumnRole>,
    /// Number of leading rows whose coefficients depend on the partition.
    pub partition_rows: usize,
    pub n: usize,
    /// `(pair, W column)` for every lifted product, diagonal included.
    pub w_cols: Vec<((usize, usize), usize)>,
    /// Nonconvex variables in partition-row order.
    pub nc_vars: Vec<usize>,
    /// Binary selector columns per nonconvex variable (d+1 intervals).
    pub y_cols: Vec<Vec<usize>>,
    /// Emitted (deduplicated) points per nonconvex variable.
    pub emit: Vec<EmitRow>,
    /// Λ columns per bilinear pair, indexed `[k][l]` (second var, first var).
    pub lambda_b: Vec<Vec<Vec<usize>>>,
    /// Squared variables: (variable, Λ column per emitted point).
    pub lambda_q: Vec<(usize, Vec<usize>)>,
    pub partition: PartitionMatrix,
    /// True when square terms exist and exact feasibility of `W >= x²`
    /// requires the tangent-separation loop.
    pub needs_separation: bool,
}

impl PmrModel {
    pub fn objective_value(&self, sol: &MilpSolution) -> f64 {
        sol.objective + self.obj_constant
    }
}

struct Builder {
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    columns: Vec<ColumnRole>,
    rows: Vec<(Vec<(usize, f64)>, f64, RowKind)>,
}

enum Slacked {
    Eq,
    /// lhs <= rhs: nonnegative slack added with +1.
    Le,
    /// lhs >= rhs: nonnegative slack added with −1.
    Ge,
}

impl Builder {
    fn new() -> Self {
        Builder { cost: Vec::new(), lower: Vec::new(), upper: Vec::new(), columns: Vec::new(), rows: Vec::new() }
    }

    fn add_col(&mut self, role: ColumnRole, lb: f64, ub: f64) -> usize {
        self.cost.push(0.0);
        self.lower.push(lb);
        self.upper.push(ub);
        self.columns.push(role);
        self.columns.len() - 1
    }

    fn add_row(&mut self, entries: Vec<(usize, f64)>, rhs: f64, kind: RowKind, sense: Slacked) -> usize {
        let row = self.rows.len();
        let mut entries = entries;
        match sense {
            Slacked::Eq => {}
            Slacked::Le => {
                let s = self.add_col(ColumnRole::Slack(row), 0.0, f64::INFINITY);
                entries.push((s, 1.0));
            }
            Slacked::Ge => {
                let s = self.add_col(ColumnRole::Slack(row), 0.0, f64::INFINITY);
                entries.push((s, -1.0));
            }
        }
        self.rows.push((entries, rhs, kind));
        row
    }

    fn finish(self, partition_rows: usize, groups: Vec<Vec<usize>>) -> (MilpModel, Vec<RowKind>, Vec<ColumnRole>) {
        let ncols = self.cost.len();
        let nrows = self.rows.len();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols];
        let mut rhs = Vec::with_capacity(nrows);
        let mut kinds = Vec::with_capacity(nrows);
        for (i, (entries, b, kind)) in self.rows.into_iter().enumerate() {
            for (j, v) in entries {
                if v != 0.0 {
                    cols[j].push((i, v));
                }
            }
            rhs.push(b);
            kinds.push(kind);
        }
        let lp = StandardFormLp {
            ncols,
            nrows,
            cost: self.cost,
            col_lower: self.lower,
            col_upper: self.upper,
            cols,
            rhs,
            partition_rows,
        };
        (MilpModel { lp, sos1_groups: groups }, kinds, self.columns)
    }
}

/// Shared scaffolding: x and W columns plus the original constraint rows
/// (products replaced by W). Returns the builder and the W column lookup.
fn lift_problem(q: &Qcqp, b: &mut Builder) -> Result<Vec<((usize, usize), usize)>, RelaxError> {
    if !q.is_unit_box() {
        return Err(RelaxError::NotUnitBox);
    }
    for i in 0..q.n {
        b.add_col(ColumnRole::X(i), 0.0, 1.0);
    }
    let mut w_cols: Vec<((usize, usize), usize)> = Vec::new();
    for &(i, j) in &q.bilinear_pairs {
        let c = b.add_col(ColumnRole::W(i, j), 0.0, 1.0);
        w_cols.push(((i, j), c));
    }
    for &k in &q.quadratic_indices {
        let c = b.add_col(ColumnRole::W(k, k), 0.0, 1.0);
        w_cols.push(((k, k), c));
    }
    let lookup = |i: usize, j: usize| -> Result<usize, RelaxError> {
        let key = (i.min(j), i.max(j));
        w_cols
            .iter()
            .find(|(p, _)| *p == key)
            .map(|&(_, c)| c)
            .ok_or(RelaxError::UndeclaredTerm(key.0, key.1))
    };

    // objective: r'x + <Q, W>
    for (i, &r) in q.objective.r.iter().enumerate() {
        b.cost[i] = r;
    }
    for &t in q.objective.q.entries() {
        let c = lookup(t.0, t.1)?;
        b.cost[c] += q.objective.q.product_coeff(t.0, t.1);
    }

    // constraints
    for con in &q.constraints {
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for (i, &r) in con.f.r.iter().enumerate() {
            if r != 0.0 {
                entries.push((i, r));
            }
        }
        for &t in con.f.q.entries() {
            let c = lookup(t.0, t.1)?;
            entries.push((c, con.f.q.product_coeff(t.0, t.1)));
        }
        let rhs = con.rhs - con.f.constant;
        let sense = match con.sense {
            crate::model::Sense::Eq => Slacked::Eq,
            crate::model::Sense::Le => Slacked::Le,
        };
        b.add_row(entries, rhs, RowKind::Static, sense);
    }
    Ok(w_cols)
}

fn oa_alphas(emit: &EmitRow, oa: &OaConfig) -> Vec<(Option<usize>, f64)> {
    let mut out: Vec<(Option<usize>, f64)> = emit
        .points
        .iter()
        .enumerate()
        .map(|(c, &p)| (Some(c), p))
        .collect();
    for t in 0..oa.grid {
        let a = (t + 1) as f64 / (oa.grid + 1) as f64;
        if emit.points.iter().all(|&p| (p - a).abs() > POINT_MERGE_TOL) {
            out.push((None, a));
        }
    }
    out
}

/// Termwise convex-envelope relaxation: no partitioning, empty Y.
pub fn build_mccormick(q: &Qcqp, oa: &OaConfig) -> Result<PmrModel, RelaxError> {
    let p = PartitionMatrix::degenerate(q.nc_vars().len(), 0);
    assemble(q, &p, oa, false)
}

/// Piecewise relaxation keeping `W >= x²` (enforced by tangent separation
/// at solve time when square terms are present).
pub fn build_pmr(q: &Qcqp, p: &PartitionMatrix) -> Result<PmrModel, RelaxError> {
    let mut m = assemble(q, p, &OaConfig::default(), true)?;
    m.needs_separation = !q.quadratic_indices.is_empty();
    Ok(m)
}

/// Pure-MILP outer approximation: square lower bounds only via the fixed
/// tangent set. Its optimal value is the partition value function.
pub fn build_pmr_oa(q: &Qcqp, p: &PartitionMatrix, oa: &OaConfig) -> Result<PmrModel, RelaxError> {
    assemble(q, p, oa, true)
}

fn assemble(q: &Qcqp, p: &PartitionMatrix, oa: &OaConfig, partitioned: bool) -> Result<PmrModel, RelaxError> {
    p.validate()?;
    let nc = q.nc_vars();
    if p.rows.len() != nc.len() {
        return Err(RelaxError::InvalidPartition(format!(
            "{} rows for {} nonconvex variables",
            p.rows.len(),
            nc.len()
        )));
    }
    let nc_row = |v: usize| nc.iter().position(|&u| u == v).unwrap();
    let emit: Vec<EmitRow> = p.rows.iter().map(|r| emit_points(r)).collect();
    let _ = partitioned;

    let mut b = Builder::new();
    let w_cols = lift_problem(q, &mut b)?;
    let w_of = |i: usize, j: usize| {
        let key = (i.min(j), i.max(j));
        w_cols.iter().find(|(pr, _)| *pr == key).map(|&(_, c)| c).unwrap()
    };

    // Λ columns
    let mut lambda_b: Vec<Vec<Vec<usize>>> = Vec::new();
    for (t, &(i, j)) in q.bilinear_pairs.iter().enumerate() {
        let (ei, ej) = (&emit[nc_row(i)], &emit[nc_row(j)]);
        let mut grid = Vec::with_capacity(ej.points.len());
        for k in 0..ej.points.len() {
            let mut rowcols = Vec::with_capacity(ei.points.len());
            for l in 0..ei.points.len() {
                rowcols.push(b.add_col(ColumnRole::LambdaB { pair: t, k, l }, 0.0, 1.0));
            }
            grid.push(rowcols);
        }
        lambda_b.push(grid);
    }
    let mut lambda_q: Vec<(usize, Vec<usize>)> = Vec::new();
    for (qi, &k) in q.quadratic_indices.iter().enumerate() {
        let ek = &emit[nc_row(k)];
        let cols: Vec<usize> = (0..ek.points.len())
            .map(|l| b.add_col(ColumnRole::LambdaQ { q: qi, l }, 0.0, 1.0))
            .collect();
        lambda_q.push((k, cols));
    }

    // Y columns, one interval selector set per nonconvex variable
    let y_cols: Vec<Vec<usize>> = nc
        .iter()
        .enumerate()
        .map(|(r, _)| {
            (0..p.d + 1)
                .map(|interval| b.add_col(ColumnRole::Y { nc: r, interval }, 0.0, 1.0))
                .collect()
        })
        .collect();

    // ---- partition-dependent block (assembled as a prefix) ----
    // constraint rows added by lift_problem sit before this block; move the
    // partition rows first by assembling them into a fresh row list
    let static_rows = std::mem::take(&mut b.rows);

    for (t, &(i, j)) in q.bilinear_pairs.iter().enumerate() {
        let (ri, rj) = (nc_row(i), nc_row(j));
        let (ei, ej) = (emit[ri].clone(), emit[rj].clone());
        let grid = &lambda_b[t];
        let mut xi_row = vec![(i, 1.0)];
        let mut xj_row = vec![(j, 1.0)];
        let mut w_row = vec![(w_of(i, j), 1.0)];
        for (k, kc) in grid.iter().enumerate() {
            for (l, &c) in kc.iter().enumerate() {
                xi_row.push((c, -ei.points[l]));
                xj_row.push((c, -ej.points[k]));
                w_row.push((c, -ei.points[l] * ej.points[k]));
            }
        }
        b.add_row(xi_row, 0.0, RowKind::BilinX { pair: t, side: Side::First }, Slacked::Eq);
        b.add_row(xj_row, 0.0, RowKind::BilinX { pair: t, side: Side::Second }, Slacked::Eq);
        b.add_row(w_row, 0.0, RowKind::BilinW { pair: t }, Slacked::Eq);
    }
    for (qi, (k, cols)) in lambda_q.iter().enumerate() {
        let ek = &emit[nc_row(*k)];
        let w = w_of(*k, *k);
        let mut x_row = vec![(*k, 1.0)];
        let mut sec_row = vec![(w, 1.0)];
        for (l, &c) in cols.iter().enumerate() {
            x_row.push((c, -ek.points[l]));
            sec_row.push((c, -ek.points[l] * ek.points[l]));
        }
        b.add_row(x_row, 0.0, RowKind::QuadX { q: qi }, Slacked::Eq);
        b.add_row(sec_row, 0.0, RowKind::QuadSecant { q: qi }, Slacked::Le);
        for (src, alpha) in oa_alphas(ek, oa) {
            let kind = match src {
                Some(point) => RowKind::OaPartition { q: qi, point },
                None => RowKind::OaGrid,
            };
            // W >= 2αx − α²  ⇔  2αx − W <= α²
            b.add_row(vec![(*k, 2.0 * alpha), (w, -1.0)], alpha * alpha, kind, Slacked::Le);
        }
    }
    let partition_rows = b.rows.len();

    // ---- static block ----
    b.rows.extend(static_rows);
    for grid in &lambda_b {
        let entries: Vec<(usize, f64)> =
            grid.iter().flatten().map(|&c| (c, 1.0)).collect();
        b.add_row(entries, 1.0, RowKind::Static, Slacked::Eq);
    }
    for (_, cols) in &lambda_q {
        let entries: Vec<(usize, f64)> = cols.iter().map(|&c| (c, 1.0)).collect();
        b.add_row(entries, 1.0, RowKind::Static, Slacked::Eq);
    }
    // adjacency: Λ mass at an emitted point only when a neighboring interval
    // is active; a merged point unions the neighborhoods of its originals
    let adjacent = |e: &EmitRow, c: usize| -> Vec<usize> { e.adjacent_intervals(c, p.d) };
    for (t, &(i, j)) in q.bilinear_pairs.iter().enumerate() {
        let (ri, rj) = (nc_row(i), nc_row(j));
        let grid = lambda_b[t].clone();
        for l in 0..emit[ri].points.len() {
            let mut entries: Vec<(usize, f64)> =
                grid.iter().map(|kc| (kc[l], 1.0)).collect();
            for tt in adjacent(&emit[ri], l) {
                entries.push((y_cols[ri][tt], -1.0));
            }
            b.add_row(entries, 0.0, RowKind::Static, Slacked::Le);
        }
        for (k, kc) in grid.iter().enumerate() {
            let mut entries: Vec<(usize, f64)> = kc.iter().map(|&c| (c, 1.0)).collect();
            for tt in adjacent(&emit[rj], k) {
                entries.push((y_cols[rj][tt], -1.0));
            }
            b.add_row(entries, 0.0, RowKind::Static, Slacked::Le);
        }
    }
    for (k, cols) in &lambda_q {
        let rk = nc_row(*k);
        for (l, &c) in cols.iter().enumerate() {
            let mut entries = vec![(c, 1.0)];
            for tt in adjacent(&emit[rk], l) {
                entries.push((y_cols[rk][tt], -1.0));
            }
            b.add_row(entries, 0.0, RowKind::Static, Slacked::Le);
        }
    }

    // ---- tail block (dropped when Y is fixed) ----
    for cols in &y_cols {
        let entries: Vec<(usize, f64)> = cols.iter().map(|&c| (c, 1.0)).collect();
        b.add_row(entries, 1.0, RowKind::Sos1, Slacked::Eq);
    }
    for (k, _) in &lambda_q {
        let rk = nc_row(*k);
        let row = &p.rows[rk];
        // interval brackets: Σ Y_l P_l <= x <= Σ Y_l P_(l+1)
        let mut lo: Vec<(usize, f64)> = vec![(*k, 1.0)];
        let mut hi: Vec<(usize, f64)> = vec![(*k, -1.0)];
        for interval in 0..p.d + 1 {
            lo.push((y_cols[rk][interval], -row[interval]));
            hi.push((y_cols[rk][interval], row[interval + 1]));
        }
        b.add_row(lo, 0.0, RowKind::Bracket, Slacked::Ge);
        b.add_row(hi, 0.0, RowKind::Bracket, Slacked::Ge);
    }

    let groups: Vec<Vec<usize>> = if nc.is_empty() { Vec::new() } else { y_cols.clone() };
    let obj_constant = q.objective.constant;
    let n = q.n;
    let (mut milp, rows, columns) = b.finish(partition_rows, groups);
    milp.lp.partition_rows = partition_rows;
    Ok(PmrModel {
        milp,
        obj_constant,
        rows,
        columns,
        partition_rows,
        n,
        w_cols,
        nc_vars: nc,
        y_cols,
        emit,
        lambda_b,
        lambda_q,
        partition: p.clone(),
        needs_separation: false,
    })
}

/// Solves the model's MILP, optionally running the tangent-separation loop
/// that restores `W_kk >= x_k²` to the stated tolerance.
pub fn solve_pmr(m: &mut PmrModel, rel_gap: f64, abs_gap: f64) -> Result<MilpSolution, RelaxError> {
    let mut sol = milp::solve_milp(&m.milp, rel_gap, abs_gap)?;
    if !m.needs_separation {
        return Ok(sol);
    }
    for _ in 0..SEPARATION_ROUNDS {
        if sol.status != milp::MilpStatus::Optimal {
            return Ok(sol);
        }
        let mut added = false;
        for (k, _) in &m.lambda_q {
            let x = sol.primal[*k];
            let w = sol.primal[m.w_cols.iter().find(|(p, _)| *p == (*k, *k)).unwrap().1];
            if x * x - w > SEPARATION_TOL {
                let lp = &mut m.milp.lp;
                let row = lp.nrows;
                lp.nrows += 1;
                lp.rhs.push(x * x);
                let wcol = m.w_cols.iter().find(|(p, _)| *p == (*k, *k)).unwrap().1;
                lp.cols[*k].push((row, 2.0 * x));
                lp.cols[wcol].push((row, -1.0));
                lp.ncols += 1;
                lp.cost.push(0.0);
                lp.col_lower.push(0.0);
                lp.col_upper.push(f64::INFINITY);
                lp.cols.push(vec![(row, 1.0)]);
                m.rows.push(RowKind::OaGrid);
                m.columns.push(ColumnRole::Slack(row));
                added = true;
            }
        }
        if !added {
            return Ok(sol);
        }
        sol = milp::solve_milp(&m.milp, rel_gap, abs_gap)?;
    }
    Ok(sol)
}

/// Restriction to one interval assignment: selector columns pinned to the
/// one-hot values, SOS1 and bracket rows dropped. The partition-dependent
/// prefix keeps its row indices.
pub fn fix_y(m: &PmrModel, y_star: &[usize]) -> StandardFormLp {
    assert_eq!(y_star.len(), m.y_cols.len());
    let keep: Vec<bool> = m
        .rows
        .iter()
        .map(|k| !matches!(k, RowKind::Sos1 | RowKind::Bracket))
        .collect();
    let mut new_index = vec![usize::MAX; m.rows.len()];
    let mut nrows = 0;
    for (i, &kp) in keep.iter().enumerate() {
        if kp {
            new_index[i] = nrows;
            nrows += 1;
        }
    }
    // prefix invariant: partition rows never dropped
    debug_assert!(keep.iter().take(m.partition_rows).all(|&k| k));

    let src = &m.milp.lp;
    let mut lp = src.clone();
    lp.nrows = nrows;
    lp.rhs = src
        .rhs
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&r, _)| r)
        .collect();
    for col in lp.cols.iter_mut() {
        col.retain(|&(r, _)| keep[r]);
        for e in col.iter_mut() {
            e.0 = new_index[e.0];
        }
    }
    // orphaned slack columns (their only row was dropped) get pinned
    for (j, col) in lp.cols.iter().enumerate() {
        if col.is_empty() && matches!(m.columns[j], ColumnRole::Slack(_)) {
            lp.col_lower[j] = 0.0;
            lp.col_upper[j] = 0.0;
        }
    }
    for (r, cols) in m.y_cols.iter().enumerate() {
        for (interval, &c) in cols.iter().enumerate() {
            let v = if interval == y_star[r] { 1.0 } else { 0.0 };
            lp.col_lower[c] = v;
            lp.col_upper[c] = v;
        }
    }
    // Λ columns whose point touches no active interval are forced to zero by
    // the adjacency rows; pin them so the LP (and its degeneracy structure)
    // doesn't carry them around
    let nc_pos = |v: usize| m.nc_vars.iter().position(|&u| u == v).unwrap();
    let active = |r: usize, c: usize| -> bool {
        m.emit[r].adjacent_intervals(c, m.partition.d).contains(&y_star[r])
    };
    for (t, grid) in m.lambda_b.iter().enumerate() {
        let (a, bvar) = m.w_cols[t].0;
        let (ra, rb) = (nc_pos(a), nc_pos(bvar));
        for (k, kc) in grid.iter().enumerate() {
            for (l, &c) in kc.iter().enumerate() {
                if !(active(ra, l) && active(rb, k)) {
                    lp.col_lower[c] = 0.0;
                    lp.col_upper[c] = 0.0;
                }
            }
        }
    }
    for (k, cols) in &m.lambda_q {
        let rk = nc_pos(*k);
        for (l, &c) in cols.iter().enumerate() {
            if !active(rk, l) {
                lp.col_lower[c] = 0.0;
                lp.col_upper[c] = 0.0;
            }
        }
    }
    lp.partition_rows = m.partition_rows;
    lp
}

/// Sparse derivative of the equality system w.r.t. one partition entry.
#[derive(Debug, Clone, Default)]
pub struct JacobianBlock {
    /// `(row, column, ∂coefficient)` over the partition-row prefix.
    pub coeff: Vec<(usize, usize, f64)>,
    /// `(row, ∂rhs)` entries.
    pub rhs: Vec<(usize, f64)>,
}

/// Derivative of the partition-dependent block w.r.t. `P[i][j]`, where `i`
/// is the nonconvex-variable row and `j` an interior column (1 ..= d).
pub fn partition_jacobian(m: &PmrModel, i: usize, j: usize) -> JacobianBlock {
    assert!(i < m.nc_vars.len(), "partition row out of range");
    assert!(j >= 1 && j <= m.partition.d, "interior column out of range");
    let var = m.nc_vars[i];
    // emitted point standing for original column j
    let c_i = m.emit[i]
        .orig
        .iter()
        .position(|s| s.contains(&j))
        .expect("every original column maps to an emitted point");
    let mut out = JacobianBlock::default();

    for (row_idx, kind) in m.rows.iter().enumerate().take(m.partition_rows) {
        match *kind {
            RowKind::BilinX { pair, side } => {
                let (a, bvar) = m.milp_pair(pair);
                let grid = &m.lambda_b[pair];
                match side {
                    Side::First if a == var => {
                        for kc in grid {
                            out.coeff.push((row_idx, kc[c_i], -1.0));
                        }
                    }
                    Side::Second if bvar == var => {
                        for &c in &grid[c_i] {
                            out.coeff.push((row_idx, c, -1.0));
                        }
                    }
                    _ => {}
                }
            }
            RowKind::BilinW { pair } => {
                let (a, bvar) = m.milp_pair(pair);
                let grid = &m.lambda_b[pair];
                if a == var {
                    let rb = m.nc_vars.iter().position(|&u| u == bvar).unwrap();
                    for (k, kc) in grid.iter().enumerate() {
                        out.coeff.push((row_idx, kc[c_i], -m.emit[rb].points[k]));
                    }
                }
                if bvar == var {
                    let ra = m.nc_vars.iter().position(|&u| u == a).unwrap();
                    for (l, &c) in grid[c_i].iter().enumerate() {
                        out.coeff.push((row_idx, c, -m.emit[ra].points[l]));
                    }
                }
            }
            RowKind::QuadX { q } => {
                if m.lambda_q[q].0 == var {
                    out.coeff.push((row_idx, m.lambda_q[q].1[c_i], -1.0));
                }
            }
            RowKind::QuadSecant { q } => {
                if m.lambda_q[q].0 == var {
                    let p = m.emit[i].points[c_i];
                    out.coeff.push((row_idx, m.lambda_q[q].1[c_i], -2.0 * p));
                }
            }
            RowKind::OaPartition { q, point } => {
                if m.lambda_q[q].0 == var && point == c_i {
                    let p = m.emit[i].points[c_i];
                    out.coeff.push((row_idx, m.lambda_q[q].0, 2.0));
                    out.rhs.push((row_idx, 2.0 * p));
                }
            }
            _ => {}
        }
    }
    out
}

impl PmrModel {
    fn milp_pair(&self, pair: usize) -> (usize, usize) {
        // recover the variable pair from the W column map: bilinear pairs
        // come first in w_cols, in pair order
        self.w_cols[pair].0
    }
}
