//! QCQP data model: sparse quadratic forms over a box, feasibility checks,
//! normalization to the unit box, and a grid oracle for tiny instances.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const DEFAULT_FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid index {0} for problem with {1} variables")]
    IndexOutOfRange(usize, usize),
    #[error("bilinear pair ({0}, {1}) must satisfy i < j")]
    BadPair(usize, usize),
    #[error("box for variable {0} is invalid: [{1}, {2}]")]
    BadBox(usize, f64, f64),
    #[error("box for variable {0} is unbounded")]
    UnboundedBox(usize),
    #[error("no feasible grid point at resolution {0}")]
    InfeasibleAtResolution(usize),
    #[error("grid oracle limited to n <= {0}")]
    TooManyVariables(usize),
}

/// Sparse symmetric matrix stored as upper-triangular triplets `(i, j, v)`
/// with `i <= j`; an off-diagonal entry `v` represents `Q_ij = Q_ji = v`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseSym {
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    /// Builds from triplets given on either side of the diagonal. A triplet
    /// `(i, j, v)` with `i != j` sets `Q_ij = Q_ji = v`; when a position is
    /// supplied more than once (e.g. both `(i,j)` and `(j,i)`), symmetry is
    /// enforced by averaging the supplied values.
    pub fn from_triplets(triplets: &[(usize, usize, f64)]) -> Self {
        let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
        for &(i, j, v) in triplets {
            let key = if i <= j { (i, j) } else { (j, i) };
            let e = acc.entry(key).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        let entries = acc
            .into_iter()
            .filter_map(|((i, j), (sum, count))| {
                let v = sum / count as f64;
                (v != 0.0).then_some((i, j, v))
            })
            .collect();
        SparseSym { entries }
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.iter().map(|&(_, j, _)| j).max()
    }

    /// Evaluates `x' Q x`.
    pub fn quad_value(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for &(i, j, q) in &self.entries {
            if i == j {
                v += q * x[i] * x[i];
            } else {
                v += 2.0 * q * x[i] * x[j];
            }
        }
        v
    }

    /// Accumulates `(Q + Q') x` into `grad`.
    pub fn add_grad(&self, x: &[f64], grad: &mut [f64]) {
        for &(i, j, q) in &self.entries {
            if i == j {
                grad[i] += 2.0 * q * x[i];
            } else {
                grad[i] += 2.0 * q * x[j];
                grad[j] += 2.0 * q * x[i];
            }
        }
    }

    /// Coefficient of the product term `x_i x_j` (`2 Q_ij` off-diagonal,
    /// `Q_kk` on the diagonal) — the coefficient a `W` column carries in the
    /// linearized model.
    pub fn product_coeff(&self, i: usize, j: usize) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        for &(a, b, v) in &self.entries {
            if (a, b) == key {
                return if a == b { v } else { 2.0 * v };
            }
        }
        0.0
    }

    pub fn scale_rows_cols(&self, s: &[f64]) -> SparseSym {
        SparseSym {
            entries: self
                .entries
                .iter()
                .map(|&(i, j, v)| (i, j, v * s[i] * s[j]))
                .collect(),
        }
    }
}

/// A quadratic function `x' Q x + r' x + c`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QuadFunc {
    pub q: SparseSym,
    pub r: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub constant: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl QuadFunc {
    pub fn value(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.r.iter().zip(x).map(|(r, x)| r * x).sum();
        self.q.quad_value(x) + lin + self.constant
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.r.clone();
        self.q.add_grad(x, &mut g);
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Le,
    Eq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constraint {
    pub f: QuadFunc,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    /// Violation of the constraint at `x` (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.f.value(x);
        match self.sense {
            Sense::Le => (v - self.rhs).max(0.0),
            Sense::Eq => (v - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Bilinear,
    Qcqp,
    Pooling,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub family: Family,
    pub theta: Vec<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_star: Option<f64>,
    /// Where `v_star` came from: "oracle", "solve", or absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_star_source: Option<String>,
    /// Instance index within its family batch.
    #[serde(default)]
    pub index: u64,
}

/// Nonconvex QCQP over a box, with explicit bilinear-pair and
/// univariate-quadratic index sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Qcqp {
    pub n: usize,
    pub objective: QuadFunc,
    pub constraints: Vec<Constraint>,
    /// Ordered pairs `(i, j)`, `i < j`, of variables in bilinear terms.
    pub bilinear_pairs: Vec<(usize, usize)>,
    /// Variables with univariate quadratic terms.
    pub quadratic_indices: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Qcqp {
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n;
        let check_len = |len: usize| -> Result<(), ModelError> {
            if len != n {
                Err(ModelError::DimensionMismatch { expected: n, got: len })
            } else {
                Ok(())
            }
        };
        check_len(self.lower.len())?;
        check_len(self.upper.len())?;
        check_len(self.objective.r.len())?;
        for c in &self.constraints {
            check_len(c.f.r.len())?;
        }
        for &(i, j) in &self.bilinear_pairs {
            if i >= j {
                return Err(ModelError::BadPair(i, j));
            }
            if j >= n {
                return Err(ModelError::IndexOutOfRange(j, n));
            }
        }
        for &k in &self.quadratic_indices {
            if k >= n {
                return Err(ModelError::IndexOutOfRange(k, n));
            }
        }
        for i in 0..n {
            if !(self.lower[i] <= self.upper[i])
                || !self.lower[i].is_finite()
                || !self.upper[i].is_finite()
            {
                return Err(ModelError::BadBox(i, self.lower[i], self.upper[i]));
            }
        }
        Ok(())
    }

    /// Variables participating in nonconvex terms, sorted ascending.
    pub fn nc_vars(&self) -> Vec<usize> {
        let mut set: Vec<usize> = Vec::new();
        for &(i, j) in &self.bilinear_pairs {
            set.push(i);
            set.push(j);
        }
        set.extend(self.quadratic_indices.iter().copied());
        set.sort_unstable();
        set.dedup();
        set
    }

    pub fn is_unit_box(&self) -> bool {
        self.lower.iter().all(|&l| l == 0.0) && self.upper.iter().all(|&u| u == 1.0)
    }
}

/// Affine map `x_orig = offset + scale .* x_unit` sending unit-box points
/// back to original coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    /// Original indices of variables that survived substitution; empty means
    /// the identity index map.
    pub kept: Vec<usize>,
    /// Values of substituted (fixed) variables in original coordinates,
    /// keyed by original index.
    pub fixed: Vec<(usize, f64)>,
    /// Original problem dimension.
    pub n_orig: usize,
}

impl AffineMap {
    /// Maps a unit-box point of the normalized problem to a full point of
    /// the original problem.
    pub fn to_original(&self, x_unit: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_orig];
        for &(i, v) in &self.fixed {
            x[i] = v;
        }
        for (k, &orig) in self.kept.iter().enumerate() {
            x[orig] = self.offset[k] + self.scale[k] * x_unit[k];
        }
        x
    }

    /// Maps an original point into unit-box coordinates of the normalized
    /// problem (fixed variables dropped).
    pub fn to_unit(&self, x_orig: &[f64]) -> Vec<f64> {
        self.kept
            .iter()
            .enumerate()
            .map(|(k, &orig)| (x_orig[orig] - self.offset[k]) / self.scale[k])
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        self.fixed.is_empty()
            && self.scale.iter().all(|&s| s == 1.0)
            && self.offset.iter().all(|&o| o == 0.0)
    }
}

pub fn evaluate_objective(q: &Qcqp, x: &[f64]) -> Result<f64, ModelError> {
    if x.len() != q.n {
        return Err(ModelError::DimensionMismatch { expected: q.n, got: x.len() });
    }
    Ok(q.objective.value(x))
}

/// Returns `(feasible, max_violation)` over all constraints and box bounds.
pub fn check_feasible(q: &Qcqp, x: &[f64], tol: f64) -> (bool, f64) {
    let mut worst: f64 = 0.0;
    for i in 0..q.n {
        worst = worst.max(q.lower[i] - x[i]).max(x[i] - q.upper[i]);
    }
    for c in &q.constraints {
        worst = worst.max(c.violation(x));
    }
    (worst <= tol, worst)
}

fn substitute_fixed(q: &Qcqp, fixed: &[(usize, f64)]) -> (Qcqp, Vec<usize>) {
    let is_fixed: Vec<Option<f64>> = {
        let mut v = vec![None; q.n];
        for &(i, val) in fixed {
            v[i] = Some(val);
        }
        v
    };
    let kept: Vec<usize> = (0..q.n).filter(|&i| is_fixed[i].is_none()).collect();
    let new_idx: Vec<Option<usize>> = {
        let mut v = vec![None; q.n];
        for (k, &orig) in kept.iter().enumerate() {
            v[orig] = Some(k);
        }
        v
    };
    let sub_func = |f: &QuadFunc| -> QuadFunc {
        let mut r = vec![0.0; kept.len()];
        let mut constant = f.constant;
        for (k, &orig) in kept.iter().enumerate() {
            r[k] = f.r[orig];
        }
        for &(i, v) in fixed {
            constant += f.r[i] * v;
        }
        let mut trips = Vec::new();
        for &(i, j, v) in f.q.entries() {
            let c = if i == j { v } else { 2.0 * v };
            match (is_fixed[i], is_fixed[j]) {
                (None, None) => {
                    let (a, b) = (new_idx[i].unwrap(), new_idx[j].unwrap());
                    trips.push((a, b, v));
                }
                (Some(xi), None) => r[new_idx[j].unwrap()] += c * xi,
                (None, Some(xj)) => r[new_idx[i].unwrap()] += c * xj,
                (Some(xi), Some(xj)) => constant += c * xi * xj,
            }
        }
        QuadFunc { q: SparseSym::from_triplets(&trips), r, constant }
    };
    let mut pairs = Vec::new();
    for &(i, j) in &q.bilinear_pairs {
        if let (Some(a), Some(b)) = (new_idx[i], new_idx[j]) {
            pairs.push((a.min(b), a.max(b)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut quads = Vec::new();
    for &k in &q.quadratic_indices {
        if let Some(a) = new_idx[k] {
            quads.push(a);
        }
    }
    let out = Qcqp {
        n: kept.len(),
        objective: sub_func(&q.objective),
        constraints: q
            .constraints
            .iter()
            .map(|c| Constraint { f: sub_func(&c.f), sense: c.sense, rhs: c.rhs })
            .collect(),
        bilinear_pairs: pairs,
        quadratic_indices: quads,
        lower: kept.iter().map(|&i| q.lower[i]).collect(),
        upper: kept.iter().map(|&i| q.upper[i]).collect(),
    };
    (out, kept)
}

/// Rescales all variable boxes to `[0, 1]`; variables with degenerate boxes
/// (`lower == upper`) are substituted out. Objective and constraint values
/// are preserved under the returned map.
pub fn normalize_to_unit_box(q: &Qcqp) -> Result<(Qcqp, AffineMap), ModelError> {
    q.validate()?;
    let fixed: Vec<(usize, f64)> = (0..q.n)
        .filter(|&i| q.lower[i] == q.upper[i])
        .map(|i| (i, q.lower[i]))
        .collect();
    let (reduced, kept) = substitute_fixed(q, &fixed);

    let scale: Vec<f64> = (0..reduced.n).map(|i| reduced.upper[i] - reduced.lower[i]).collect();
    let offset: Vec<f64> = reduced.lower.clone();
    let map_func = |f: &QuadFunc| -> QuadFunc {
        // x = o + s u  =>  x'Qx + r'x + c
        //   = u'(SQS)u + (2 o'QS + r'S) u + (o'Qo + r'o + c)
        let q_new = f.q.scale_rows_cols(&scale);
        let mut r_new = vec![0.0; reduced.n];
        for i in 0..reduced.n {
            r_new[i] = f.r[i] * scale[i];
        }
        for &(i, j, v) in f.q.entries() {
            if i == j {
                r_new[i] += 2.0 * v * offset[i] * scale[i];
            } else {
                r_new[i] += 2.0 * v * offset[j] * scale[i];
                r_new[j] += 2.0 * v * offset[i] * scale[j];
            }
        }
        let mut constant = f.constant;
        constant += f.q.quad_value(&offset);
        constant += f.r.iter().zip(&offset).map(|(r, o)| r * o).sum::<f64>();
        QuadFunc { q: q_new, r: r_new, constant }
    };
    let unit = Qcqp {
        n: reduced.n,
        objective: map_func(&reduced.objective),
        constraints: reduced
            .constraints
            .iter()
            .map(|c| Constraint { f: map_func(&c.f), sense: c.sense, rhs: c.rhs })
            .collect(),
        bilinear_pairs: reduced.bilinear_pairs.clone(),
        quadratic_indices: reduced.quadratic_indices.clone(),
        lower: vec![0.0; reduced.n],
        upper: vec![1.0; reduced.n],
    };
    let map = AffineMap { scale, offset, kept, fixed, n_orig: q.n };
    Ok((unit, map))
}

#[derive(Debug, Clone)]
pub struct GridOptimum {
    pub value: f64,
    pub point: Vec<f64>,
    /// Lipschitz-based bound on how far the grid optimum can sit above the
    /// true optimum: `L_inf * spacing / 2 * n`.
    pub resolution_error: f64,
}

/// Exhaustive grid search over the box; reference oracle for `v*` on tiny
/// instances.
pub fn brute_force_optimum(q: &Qcqp, grid_points_per_dim: usize) -> Result<GridOptimum, ModelError> {
    q.validate()?;
    if q.n > 6 {
        return Err(ModelError::TooManyVariables(6));
    }
    let g = grid_points_per_dim.max(2);
    let mut idx = vec![0usize; q.n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut x = vec![0.0; q.n];
    loop {
        for i in 0..q.n {
            let t = idx[i] as f64 / (g - 1) as f64;
            x[i] = q.lower[i] + t * (q.upper[i] - q.lower[i]);
        }
        let (feas, _) = check_feasible(q, &x, DEFAULT_FEAS_TOL);
        if feas {
            let v = q.objective.value(&x);
            if best.as_ref().map_or(true, |(bv, _)| v < *bv) {
                best = Some((v, x.clone()));
            }
        }
        // odometer
        let mut carry = true;
        for i in 0..q.n {
            if carry {
                idx[i] += 1;
                if idx[i] == g {
                    idx[i] = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break;
        }
    }
    match best {
        Some((value, point)) => {
            let lip = objective_lipschitz_inf(q);
            let spacing = q
                .lower
                .iter()
                .zip(&q.upper)
                .map(|(l, u)| (u - l) / (g - 1) as f64)
                .fold(0.0f64, f64::max);
            Ok(GridOptimum {
                value,
                point,
                resolution_error: lip * spacing / 2.0 * q.n as f64,
            })
        }
        None => Err(ModelError::InfeasibleAtResolution(g)),
    }
}

/// Bound on `||grad f||_inf` of the objective over the box.
fn objective_lipschitz_inf(q: &Qcqp) -> f64 {
    let big: Vec<f64> = q.lower.iter().zip(&q.upper).map(|(l, u)| l.abs().max(u.abs())).collect();
    let mut g = vec![0.0; q.n];
    for i in 0..q.n {
        g[i] = q.objective.r[i].abs();
    }
    for &(i, j, v) in q.objective.q.entries() {
        if i == j {
            g[i] += 2.0 * v.abs() * big[i];
        } else {
            g[i] += 2.0 * v.abs() * big[j];
            g[j] += 2.0 * v.abs() * big[i];
        }
    }
    g.into_iter().fold(0.0, f64::max)
}

/// The one-variable instance `min x  s.t.  x^2 >= 0.16` on `[0, 1]`, used
/// throughout the test suites; its optimum is `x* = 0.4`.
pub fn example1() -> Qcqp {
    Qcqp {
        n: 1,
        objective: QuadFunc { q: SparseSym::default(), r: vec![1.0], constant: 0.0 },
        constraints: vec![Constraint {
            // -x^2 <= -0.16
            f: QuadFunc { q: SparseSym::from_triplets(&[(0, 0, -1.0)]), r: vec![0.0], constant: 0.0 },
            sense: Sense::Le,
            rhs: -0.16,
        }],
        bilinear_pairs: vec![],
        quadratic_indices: vec![0],
        lower: vec![0.0],
        upper: vec![1.0],
    }
}
