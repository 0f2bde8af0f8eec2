//! Bounded-variable revised simplex over equality rows.
//!
//! Produces primal solutions, row duals, and an optimal basis. Duals follow
//! the convention `y = c_B' B^{-1}`, so for a minimization problem
//! `c'z = y'rhs + sum_j d_j z_j` over nonbasic `j` with reduced costs
//! `d_j = c_j - y'A_j`.

use thiserror::Error;

const PIVOT_TOL: f64 = 1e-9;
const RCOST_TOL: f64 = 1e-9;

const REFACTOR_EVERY: usize = 100;
const DEGEN_TRIP: usize = 60;

#[derive(Debug, Error)]
pub enum LinsolveError {
    #[error("numerical instability: residual {0:.3e} after refactorization retry")]
    NumericalInstability(f64),
    #[error("iteration limit reached")]
    IterationLimit,
    #[error("singular basis")]
    SingularBasis,
    #[error("basis repaired; feasibility restoration required")]
    Repaired,
}

/// Equality-form LP: `min c'z  s.t.  A z = rhs,  l <= z <= u`.
///
/// Rows `0..partition_rows` form the partition-dependent block `M(P)`;
/// the remainder is the partition-independent block.
#[derive(Debug, Clone)]
pub struct StandardFormLp {
    pub ncols: usize,
    pub nrows: usize,
    pub cost: Vec<f64>,
    pub col_lower: Vec<f64>,
    pub col_upper: Vec<f64>,
    /// Column-wise sparse entries `(row, coefficient)`.
    pub cols: Vec<Vec<(usize, f64)>>,
    pub rhs: Vec<f64>,
    pub partition_rows: usize,
}

impl StandardFormLp {
    pub fn debug_dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "c: {:?}", self.cost).unwrap();
        writeln!(s, "Aeq:").unwrap();
        for r in 0..self.nrows {
            let mut row = vec![0.0; self.ncols];
            for (j, col) in self.cols.iter().enumerate() {
                for &(i, v) in col {
                    if i == r {
                        row[j] = v;
                    }
                }
            }
            writeln!(s, "  {:?}", row).unwrap();
        }
        writeln!(s, "rhs: {:?}", self.rhs).unwrap();
        writeln!(s, "lb: {:?}", self.col_lower).unwrap();
        writeln!(s, "ub: {:?}", self.col_upper).unwrap();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
}

#[derive(Debug, Clone)]
pub struct Basis {
    /// Status per structural column.
    pub statuses: Vec<VarStatus>,
    /// Basic column per row position; entries `>= ncols` are artificials.
    pub basic: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    /// One multiplier per row, `y = c_B' B^{-1}`.
    pub dual: Vec<f64>,
    pub objective: f64,
    pub basis: Basis,
    pub duality_residual: f64,
    pub pivots: usize,
}

/// LU factorization with partial pivoting. Elimination is dense; the
/// triangular factors are stored sparsely since basis matrices from these
/// models keep most of their zeros through the elimination.
struct Lu {
    m: usize,
    perm: Vec<usize>,
    diag: Vec<f64>,
    /// Strictly-lower entries of unit L, by row: `(col, value)`.
    l_rows: Vec<Vec<(usize, f64)>>,
    /// Strictly-upper entries of U, by row.
    u_rows: Vec<Vec<(usize, f64)>>,
    /// Strictly-lower entries of unit L, by column.
    l_cols: Vec<Vec<(usize, f64)>>,
    /// Strictly-upper entries of U, by column.
    u_cols: Vec<Vec<(usize, f64)>>,
}

impl Lu {
    /// On failure reports `(pos, rows)`: the basis position whose column is
    /// dependent and the original indices of the uneliminated rows.
    fn factor(m: usize, a: &mut [f64]) -> Result<Lu, (usize, Vec<usize>)> {
        let mut perm: Vec<usize> = (0..m).collect();
        for k in 0..m {
            let mut p = k;
            let mut best = a[k * m + k].abs();
            for r in k + 1..m {
                let v = a[r * m + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < 1e-12 {
                return Err((k, perm[k..].to_vec()));
            }
            if p != k {
                for c in 0..m {
                    a.swap(k * m + c, p * m + c);
                }
                perm.swap(k, p);
            }
            let piv = a[k * m + k];
            for r in k + 1..m {
                let l = a[r * m + k] / piv;
                a[r * m + k] = l;
                if l != 0.0 {
                    for c in k + 1..m {
                        a[r * m + c] -= l * a[k * m + c];
                    }
                }
            }
        }
        let mut diag = vec![0.0; m];
        let mut l_rows = vec![Vec::new(); m];
        let mut u_rows = vec![Vec::new(); m];
        let mut l_cols = vec![Vec::new(); m];
        let mut u_cols = vec![Vec::new(); m];
        for i in 0..m {
            diag[i] = a[i * m + i];
            for k in 0..i {
                let v = a[i * m + k];
                if v != 0.0 {
                    l_rows[i].push((k, v));
                    l_cols[k].push((i, v));
                }
            }
            for k in i + 1..m {
                let v = a[i * m + k];
                if v != 0.0 {
                    u_rows[i].push((k, v));
                    u_cols[k].push((i, v));
                }
            }
        }
        Ok(Lu { m, perm, diag, l_rows, u_rows, l_cols, u_cols })
    }

    /// Solves `B x = b` in place.
    fn solve(&self, b: &mut [f64]) {
        let m = self.m;
        let mut x = vec![0.0; m];
        for i in 0..m {
            x[i] = b[self.perm[i]];
        }
        for i in 0..m {
            let mut s = x[i];
            for &(k, v) in &self.l_rows[i] {
                s -= v * x[k];
            }
            x[i] = s;
        }
        for i in (0..m).rev() {
            let mut s = x[i];
            for &(k, v) in &self.u_rows[i] {
                s -= v * x[k];
            }
            x[i] = s / self.diag[i];
        }
        b.copy_from_slice(&x);
    }

    /// Solves `B' y = c` in place.
    fn solve_transpose(&self, c: &mut [f64]) {
        let m = self.m;
        let mut x = c.to_vec();
        // U' w = c (forward)
        for i in 0..m {
            let mut s = x[i];
            for &(k, v) in &self.u_cols[i] {
                s -= v * x[k];
            }
            x[i] = s / self.diag[i];
        }
        // L' v = w (backward)
        for i in (0..m).rev() {
            let mut s = x[i];
            for &(k, v) in &self.l_cols[i] {
                s -= v * x[k];
            }
            x[i] = s;
        }
        for i in 0..m {
            c[self.perm[i]] = x[i];
        }
    }
}

struct Eta {
    row: usize,
    col: Vec<f64>,
}

struct Factorization {
    lu: Lu,
    etas: Vec<Eta>,
}

impl Factorization {
    fn ftran(&self, b: &mut [f64]) {
        self.lu.solve(b);
        for e in &self.etas {
            let t = b[e.row] / e.col[e.row];
            if t != 0.0 {
                for (i, &v) in e.col.iter().enumerate() {
                    if i == e.row {
                        continue;
                    }
                    if v != 0.0 {
                        b[i] -= v * t;
                    }
                }
            }
            b[e.row] = t;
        }
    }

    fn btran(&self, c: &mut [f64]) {
        for e in self.etas.iter().rev() {
            let mut s = c[e.row];
            for (i, &v) in e.col.iter().enumerate() {
                if i != e.row && v != 0.0 {
                    s -= v * c[i];
                }
            }
            c[e.row] = s / e.col[e.row];
        }
        self.lu.solve_transpose(c);
    }
}

enum ColEntries<'b> {
    Structural(std::slice::Iter<'b, (usize, f64)>),
    Artificial(Option<(usize, f64)>),
}

impl Iterator for ColEntries<'_> {
    type Item = (usize, f64);
    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            ColEntries::Structural(it) => it.next().copied(),
            ColEntries::Artificial(o) => o.take(),
        }
    }
}

struct Simplex<'a> {
    lp: &'a StandardFormLp,
    m: usize,
    n: usize,
    /// Column values for structural + artificial columns.
    status: Vec<VarStatus>,
    value: Vec<f64>,
    basic: Vec<usize>,
    basic_pos: Vec<Option<usize>>,
    /// Artificial metadata: sign of the identity coefficient per row.
    art_sign: Vec<f64>,
    art_upper: Vec<f64>,
    fact: Option<Factorization>,
    pivots_since_refactor: usize,
    pivots: usize,
    degen_pivots: usize,
    degen_streak: usize,
    bland: bool,
    pivot_tol: f64,
    refactor_every: usize,
    bland_locked: bool,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a StandardFormLp) -> Self {
        let m = lp.nrows;
        let n = lp.ncols;
        Simplex {
            lp,
            m,
            n,
            status: vec![VarStatus::AtLower; n + m],
            value: vec![0.0; n + m],
            basic: Vec::new(),
            basic_pos: vec![None; n + m],
            art_sign: vec![1.0; m],
            art_upper: vec![f64::INFINITY; m],
            fact: None,
            pivots_since_refactor: 0,
            pivots: 0,
            degen_pivots: 0,
            degen_streak: 0,
            bland: false,
            pivot_tol: PIVOT_TOL,
            refactor_every: REFACTOR_EVERY,
            bland_locked: false,
        }
    }

    /// Slower but numerically conservative settings used when the default
    /// configuration loses the basis or the duality check.
    fn stable_mode(&mut self) {
        self.bland = true;
        self.bland_locked = true;
        self.pivot_tol = 1e-7;
        self.refactor_every = 25;
    }

    fn col_entries(&self, j: usize) -> ColEntries<'_> {
        if j < self.n {
            ColEntries::Structural(self.lp.cols[j].iter())
        } else {
            ColEntries::Artificial(Some((j - self.n, self.art_sign[j - self.n])))
        }
    }

    fn bounds(&self, j: usize) -> (f64, f64) {
        if j < self.n {
            (self.lp.col_lower[j], self.lp.col_upper[j])
        } else {
            (0.0, self.art_upper[j - self.n])
        }
    }

    fn refactorize(&mut self) -> Result<(), LinsolveError> {
        let m = self.m;
        let mut bmat = vec![0.0; m * m];
        for (pos, &j) in self.basic.iter().enumerate() {
            for (i, v) in self.col_entries(j) {
                bmat[i * m + pos] = v;
            }
        }
        let lu = Lu::factor(m, &mut bmat).map_err(|_| LinsolveError::SingularBasis)?;
        self.fact = Some(Factorization { lu, etas: Vec::new() });
        self.pivots_since_refactor = 0;
        Ok(())
    }

    /// Refactorization with basis repair: a dependent basic column is kicked
    /// to its nearest bound and the uncovered row is patched with its
    /// artificial. If a patched artificial ends up materially nonzero the
    /// point has left the feasible region and the caller must restore
    /// feasibility (`Repaired`); during phase 1 the artificials are free, so
    /// the phase continues unhindered.
    fn refactor_with_repair(&mut self, in_phase1: bool) -> Result<(), LinsolveError> {
        let m = self.m;
        let mut repaired: Vec<usize> = Vec::new();
        for _ in 0..2 * m + 2 {
            let mut bmat = vec![0.0; m * m];
            for (pos, &j) in self.basic.iter().enumerate() {
                for (i, v) in self.col_entries(j) {
                    bmat[i * m + pos] = v;
                }
            }
            match Lu::factor(m, &mut bmat) {
                Ok(lu) => {
                    self.fact = Some(Factorization { lu, etas: Vec::new() });
                    self.pivots_since_refactor = 0;
                    self.recompute_basics();
                    // a patched artificial can come out negative; its column
                    // only scales that one component, so flip and refactor
                    let mut flipped = false;
                    for pos in 0..m {
                        let j = self.basic[pos];
                        if j >= self.n
                            && self.value[j] < -1e-9
                            && self.art_upper[j - self.n].is_infinite()
                        {
                            self.art_sign[j - self.n] = -self.art_sign[j - self.n];
                            flipped = true;
                        }
                    }
                    if flipped {
                        if std::env::var_os("QPART_REPAIRTRACE").is_some() {
                            eprintln!("repair: flipped negative artificials");
                        }
                        continue;
                    }
                    if repaired.is_empty() {
                        return Ok(());
                    }
                    let worst = repaired
                        .iter()
                        .map(|&i| self.value[self.n + i].abs())
                        .fold(0.0f64, f64::max);
                    if in_phase1 {
                        return Ok(());
                    }
                    if worst <= 1e-7 {
                        for &i in &repaired {
                            self.art_upper[i] = 0.0;
                        }
                        return Ok(());
                    }
                    return Err(LinsolveError::Repaired);
                }
                Err((pos, rows)) => {
                    if std::env::var_os("QPART_REPAIRTRACE").is_some() {
                        eprintln!("repair: factor fail pos={pos} out={}", self.basic[pos]);
                    }
                    let out = self.basic[pos];
                    let (l, u) = self.bounds(out);
                    let (st, v) = if l.is_finite() {
                        (VarStatus::AtLower, l)
                    } else if u.is_finite() {
                        (VarStatus::AtUpper, u)
                    } else {
                        if std::env::var_os("QPART_LPSTATS").is_some() {
                            eprintln!("repair: free basic column, giving up");
                        }
                        return Err(LinsolveError::SingularBasis);
                    };
                    self.basic_pos[out] = None;
                    self.status[out] = st;
                    self.value[out] = v;
                    // only an uneliminated row's artificial restores rank
                    let aj = match rows
                        .iter()
                        .map(|&r| self.n + r)
                        .find(|&a| self.basic_pos[a].is_none())
                    {
                        Some(a) => a,
                        None => {
                            if std::env::var_os("QPART_LPSTATS").is_some() {
                                eprintln!("repair: no free artificial among open rows");
                            }
                            return Err(LinsolveError::SingularBasis);
                        }
                    };
                    self.basic[pos] = aj;
                    self.basic_pos[aj] = Some(pos);
                    self.status[aj] = VarStatus::Basic;
                    self.art_upper[aj - self.n] = f64::INFINITY;
                    repaired.push(aj - self.n);
                }
            }
        }
        if std::env::var_os("QPART_LPSTATS").is_some() {
            eprintln!("repair: round cap exhausted");
        }
        Err(LinsolveError::SingularBasis)
    }

    /// Recomputes basic values from nonbasic bound values.
    fn recompute_basics(&mut self) {
        let mut resid = self.lp.rhs.clone();
        for j in 0..self.n + self.m {
            if self.basic_pos[j].is_none() {
                let (l, u) = self.bounds(j);
                let v = match self.status[j] {
                    VarStatus::AtLower => l,
                    VarStatus::AtUpper => u,
                    VarStatus::Basic => unreachable!(),
                };
                self.value[j] = v;
                if v != 0.0 {
                    for (i, a) in self.col_entries(j) {
                        resid[i] -= a * v;
                    }
                }
            }
        }
        self.fact.as_ref().unwrap().ftran(&mut resid);
        for (pos, &j) in self.basic.iter().enumerate() {
            self.value[j] = resid[pos];
        }
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.m];
        for (pos, &j) in self.basic.iter().enumerate() {
            y[pos] = if j < self.n { cost[j] } else { 0.0 };
        }
        self.fact.as_ref().unwrap().btran(&mut y);
        y
    }

    fn reduced_cost(&self, j: usize, cost: &[f64], y: &[f64]) -> f64 {
        let c = if j < self.n { cost[j] } else { 0.0 };
        let mut d = c;
        for (i, v) in self.col_entries(j) {
            d -= y[i] * v;
        }
        d
    }

    /// One phase of the primal simplex with the given structural costs
    /// (artificials priced separately in phase 1).
    fn optimize(
        &mut self,
        cost: &[f64],
        art_cost: f64,
        max_pivots: usize,
    ) -> Result<LpStatus, LinsolveError> {
        // tiny per-row jitter on artificial costs breaks phase-1 dual ties
        let full_cost = |slf: &Self, j: usize| -> f64 {
            if j < slf.n {
                cost[j]
            } else {
                art_cost * (1.0 + 1e-7 * pseudo_unit(j - slf.n))
            }
        };
        loop {
            if self.pivots >= max_pivots {
                return Err(LinsolveError::IterationLimit);
            }
            // duals for the current (possibly mixed) cost
            let mut y = vec![0.0; self.m];
            for (pos, &j) in self.basic.iter().enumerate() {
                y[pos] = full_cost(self, j);
            }
            self.fact.as_ref().unwrap().btran(&mut y);

            // pricing
            let mut entering: Option<(usize, f64, bool)> = None; // (col, |d|, from_lower)
            let ncols = self.n + self.m;
            for j in 0..ncols {
                if self.basic_pos[j].is_some() {
                    continue;
                }
                let (l, u) = self.bounds(j);
                if l == u {
                    continue;
                }
                let c = full_cost(self, j);
                let mut d = c;
                for (i, v) in self.col_entries(j) {
                    d -= y[i] * v;
                }
                let (violating, from_lower) = match self.status[j] {
                    VarStatus::AtLower => (d < -RCOST_TOL, true),
                    VarStatus::AtUpper => (d > RCOST_TOL, false),
                    VarStatus::Basic => (false, true),
                };
                if violating {
                    if self.bland {
                        entering = Some((j, d.abs(), from_lower));
                        break;
                    }
                    match entering {
                        Some((_, best, _)) if d.abs() <= best => {}
                        _ => entering = Some((j, d.abs(), from_lower)),
                    }
                }
            }
            let Some((q, _, from_lower)) = entering else {
                return Ok(LpStatus::Optimal);
            };

            // direction
            let mut w = vec![0.0; self.m];
            for (i, v) in self.col_entries(q) {
                w[i] = v;
            }
            self.fact.as_ref().unwrap().ftran(&mut w);
            let dir = if from_lower { 1.0 } else { -1.0 };

            // ratio test, two passes: the minimum blocking ratio first,
            // then the most stable (largest) pivot among near-ties
            let (lq, uq) = self.bounds(q);
            let flip = uq - lq; // bound flip distance
            let mut cand_min = f64::INFINITY;
            let mut cands: Vec<(usize, bool, f64, f64)> = Vec::new();
            for (pos, &jb) in self.basic.iter().enumerate() {
                let delta = dir * w[pos];
                if delta > self.pivot_tol {
                    let (lb, _) = self.bounds(jb);
                    let t = ((self.value[jb] - lb) / delta).max(0.0);
                    cands.push((pos, false, t, delta));
                    cand_min = cand_min.min(t);
                } else if delta < -self.pivot_tol {
                    let (_, ub) = self.bounds(jb);
                    if ub.is_finite() {
                        let t = ((ub - self.value[jb]) / (-delta)).max(0.0);
                        cands.push((pos, true, t, -delta));
                        cand_min = cand_min.min(t);
                    }
                }
            }
            if flip.is_infinite() && cand_min.is_infinite() {
                return Ok(LpStatus::Unbounded);
            }
            let mut leaving: Option<(usize, bool)> = None;
            let t_max;
            if flip <= cand_min {
                t_max = flip;
            } else {
                t_max = cand_min;
                let mut best_mag = 0.0;
                let mut best_idx = usize::MAX;
                for &(pos, to_upper, t, mag) in &cands {
                    if t > cand_min + 1e-9 {
                        continue;
                    }
                    let pick = if self.bland {
                        self.basic[pos] < best_idx
                    } else {
                        mag > best_mag
                    };
                    if pick {
                        best_mag = mag;
                        best_idx = self.basic[pos];
                        leaving = Some((pos, to_upper));
                    }
                }
            }

            // degeneracy tracking
            if t_max <= 1e-12 {
                self.degen_pivots += 1;
                self.degen_streak += 1;
                if self.degen_streak > DEGEN_TRIP {
                    self.bland = true;
                }
            } else {
                self.degen_streak = 0;
                self.bland = self.bland_locked;
            }

            // apply step
            let step = dir * t_max;
            self.value[q] += step;
            for (pos, &jb) in self.basic.iter().enumerate() {
                self.value[jb] -= step * w[pos];
            }

            match leaving {
                None => {
                    // bound flip
                    self.status[q] =
                        if from_lower { VarStatus::AtUpper } else { VarStatus::AtLower };
                }
                Some((r, to_upper)) => {
                    let out = self.basic[r];
                    self.status[out] = if to_upper { VarStatus::AtUpper } else { VarStatus::AtLower };
                    let (lo, uo) = self.bounds(out);
                    self.value[out] = if to_upper { uo } else { lo };
                    self.basic_pos[out] = None;
                    self.basic[r] = q;
                    self.basic_pos[q] = Some(r);
                    self.status[q] = VarStatus::Basic;
                    self.fact.as_mut().unwrap().etas.push(Eta { row: r, col: w });
                    self.pivots_since_refactor += 1;
                    self.pivots += 1;
                    if self.pivots_since_refactor >= self.refactor_every {
                        self.refactor_with_repair(art_cost > 0.0)?;
                    }
                }
            }
        }
    }

    fn primal_residual(&self) -> f64 {
        let mut resid = self.lp.rhs.clone();
        for j in 0..self.n + self.m {
            let v = self.value[j];
            if v != 0.0 {
                for (i, a) in self.col_entries(j) {
                    resid[i] -= a * v;
                }
            }
        }
        resid.iter().fold(0.0f64, |acc, r| acc.max(r.abs()))
    }
}

/// Deterministic hash-based value in [0, 1) used for degeneracy-breaking
/// cost perturbations.
fn pseudo_unit(j: usize) -> f64 {
    let h = (j as u64).wrapping_mul(0x9e3779b97f4a7c15).rotate_left(31);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Phase 2 with degeneracy-breaking cost perturbation followed by a cleanup
/// reoptimization under the exact costs.
fn optimize_phase2(s: &mut Simplex, limit: usize) -> Result<LpStatus, LinsolveError> {
    let lp = s.lp;
    let pcost: Vec<f64> = lp
        .cost
        .iter()
        .enumerate()
        .map(|(j, &c)| c + 1e-8 * (1.0 + pseudo_unit(j)) * c.abs().max(1.0))
        .collect();
    let st = s.optimize(&pcost, 0.0, limit)?;
    if st == LpStatus::Unbounded {
        return Ok(st);
    }
    s.optimize(&lp.cost, 0.0, limit)
}

fn finish(simplex: &mut Simplex, status: LpStatus) -> Result<LpSolution, LinsolveError> {
    if std::env::var_os("QPART_LPSTATS").is_some() {
        eprintln!("  finish pivots={} degen={}", simplex.pivots, simplex.degen_pivots);
    }
    let lp = simplex.lp;
    let y = simplex.duals(&lp.cost);
    let primal: Vec<f64> = simplex.value[..lp.ncols].to_vec();
    let objective: f64 = lp.cost.iter().zip(&primal).map(|(c, x)| c * x).sum();

    // strong-duality residual: c'z = y'rhs + sum of nonbasic d_j z_j
    let mut dual_side: f64 = y.iter().zip(&lp.rhs).map(|(a, b)| a * b).sum();
    for j in 0..lp.ncols {
        if simplex.basic_pos[j].is_none() {
            let d = simplex.reduced_cost(j, &lp.cost, &y);
            dual_side += d * primal[j];
        }
    }
    let residual = (objective - dual_side).abs();
    let basis = Basis { statuses: simplex.status[..lp.ncols].to_vec(), basic: simplex.basic.clone() };
    Ok(LpSolution {
        status,
        primal,
        dual: y,
        objective,
        basis,
        duality_residual: residual,
        pivots: simplex.pivots,
    })
}

fn max_pivots(lp: &StandardFormLp) -> usize {
    5000 + 40 * (lp.nrows + lp.ncols)
}

/// Cold solve: two-phase bounded-variable simplex. Retries once under
/// conservative pivoting when the default run loses numerical control.
pub fn solve_lp(lp: &StandardFormLp) -> Result<LpSolution, LinsolveError> {
    let t0 = std::time::Instant::now();
    let r = solve_lp_inner(lp);
    if std::env::var_os("QPART_LPSTATS").is_some() {
        let p = match &r {
            Ok(s) => s.pivots as i64,
            Err(_) => -1,
        };
        eprintln!("lp cold {}x{} pivots={} ms={:.1}", lp.nrows, lp.ncols, p, t0.elapsed().as_secs_f64() * 1e3);
    }
    r
}

fn solve_lp_inner(lp: &StandardFormLp) -> Result<LpSolution, LinsolveError> {
    match solve_lp_attempt(lp, false) {
        Ok(sol) => Ok(sol),
        Err(_) => match solve_lp_attempt(lp, true) {
            Err(LinsolveError::Repaired) => Err(LinsolveError::SingularBasis),
            r => r,
        },
    }
}

fn solve_lp_attempt(lp: &StandardFormLp, stable: bool) -> Result<LpSolution, LinsolveError> {
    let mut s = Simplex::new(lp);
    if stable {
        s.stable_mode();
    }
    // phase 1 setup: nonbasic structurals at the nearest finite bound,
    // artificials basic matching the residual sign
    for j in 0..lp.ncols {
        let (l, u) = (lp.col_lower[j], lp.col_upper[j]);
        s.status[j] = if l.is_finite() {
            VarStatus::AtLower
        } else if u.is_finite() {
            VarStatus::AtUpper
        } else {
            VarStatus::AtLower
        };
        s.value[j] = match s.status[j] {
            VarStatus::AtLower => l,
            VarStatus::AtUpper => u,
            VarStatus::Basic => unreachable!(),
        };
    }
    let mut resid = lp.rhs.clone();
    for j in 0..lp.ncols {
        let v = s.value[j];
        if v != 0.0 {
            for &(i, a) in &lp.cols[j] {
                resid[i] -= a * v;
            }
        }
    }
    for i in 0..lp.nrows {
        s.art_sign[i] = if resid[i] < 0.0 { -1.0 } else { 1.0 };
        let aj = lp.ncols + i;
        s.basic.push(aj);
        s.basic_pos[aj] = Some(s.basic.len() - 1);
        s.status[aj] = VarStatus::Basic;
        s.value[aj] = resid[i].abs();
    }
    s.refactorize()?;
    run_two_phase(&mut s)
}

/// Phase 1 then phase 2 from the current basis, with bounded restarts when a
/// mid-phase basis repair leaves the point infeasible.
fn run_two_phase(s: &mut Simplex) -> Result<LpSolution, LinsolveError> {
    let lp = s.lp;
    let zero_cost = vec![0.0; lp.ncols];
    let limit = max_pivots(lp);
    let mut restarts = 0;
    let st = loop {
        // phase 1: artificials free, drive their sum to zero
        for i in 0..lp.nrows {
            s.art_upper[i] = f64::INFINITY;
            let aj = lp.ncols + i;
            if s.basic_pos[aj].is_none() {
                s.status[aj] = VarStatus::AtLower;
                s.value[aj] = 0.0;
            }
        }
        let st = s.optimize(&zero_cost, 1.0, limit)?;
        debug_assert!(st != LpStatus::Unbounded);
        let art_sum: f64 = (0..lp.nrows).map(|i| s.value[lp.ncols + i].max(0.0)).sum();
        if art_sum > 1e-7 {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                primal: s.value[..lp.ncols].to_vec(),
                dual: vec![0.0; lp.nrows],
                objective: f64::INFINITY,
                basis: Basis { statuses: s.status[..lp.ncols].to_vec(), basic: s.basic.clone() },
                duality_residual: 0.0,
                pivots: s.pivots,
            });
        }

        // phase 2: pin artificials to zero
        for i in 0..lp.nrows {
            s.art_upper[i] = 0.0;
            let aj = lp.ncols + i;
            if s.basic_pos[aj].is_none() {
                s.status[aj] = VarStatus::AtLower;
                s.value[aj] = 0.0;
            }
        }
        match optimize_phase2(s, limit) {
            Ok(st) => break st,
            // basis repair left the point infeasible: restore with phase 1
            Err(LinsolveError::Repaired) if restarts < 5 => restarts += 1,
            Err(LinsolveError::Repaired) => return Err(LinsolveError::SingularBasis),
            Err(e) => return Err(e),
        }
    };
    if st == LpStatus::Unbounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            primal: s.value[..lp.ncols].to_vec(),
            dual: vec![0.0; lp.nrows],
            objective: f64::NEG_INFINITY,
            basis: Basis { statuses: s.status[..lp.ncols].to_vec(), basic: s.basic.clone() },
            duality_residual: 0.0,
            pivots: s.pivots,
        });
    }
    let mut sol = finish(s, LpStatus::Optimal)?;
    if sol.duality_residual > 1e-6 || s.primal_residual() > 1e-6 {
        // refactorization retry
        s.refactorize()?;
        s.recompute_basics();
        let st = s.optimize(&lp.cost, 0.0, limit)?;
        if st == LpStatus::Optimal {
            sol = finish(s, LpStatus::Optimal)?;
        }
        if sol.duality_residual > 1e-6 {
            return Err(LinsolveError::NumericalInstability(sol.duality_residual));
        }
    }
    Ok(sol)
}

/// Warm solve from a supplied basis. Falls back to a cold solve when the
/// basis is singular, dimensionally incompatible, or primal-infeasible for
/// the (possibly modified) bounds.
pub fn warm_solve(lp: &StandardFormLp, basis: &Basis) -> Result<LpSolution, LinsolveError> {
    let t0 = std::time::Instant::now();
    let r = warm_solve_inner(lp, basis);
    if std::env::var_os("QPART_LPSTATS").is_some() {
        let p = match &r {
            Ok(s) => s.pivots as i64,
            Err(_) => -1,
        };
        eprintln!("lp warm {}x{} pivots={} ms={:.1}", lp.nrows, lp.ncols, p, t0.elapsed().as_secs_f64() * 1e3);
    }
    r
}

fn warm_solve_inner(lp: &StandardFormLp, basis: &Basis) -> Result<LpSolution, LinsolveError> {
    if basis.statuses.len() != lp.ncols || basis.basic.len() != lp.nrows {
        return solve_lp(lp);
    }
    let mut s = Simplex::new(lp);
    for (j, &st) in basis.statuses.iter().enumerate() {
        s.status[j] = st;
    }
    for (pos, &j) in basis.basic.iter().enumerate() {
        if j >= lp.ncols {
            // artificial in the supplied basis: keep it pinned at zero
            let i = j - lp.ncols;
            s.art_upper[i] = 0.0;
        }
        s.basic.push(j);
        s.basic_pos[j] = Some(pos);
        if j < lp.ncols + lp.nrows {
            s.status[j] = VarStatus::Basic;
        }
    }
    for i in 0..lp.nrows {
        s.art_upper[i] = 0.0;
    }
    // snap nonbasic statuses onto valid bounds
    for j in 0..lp.ncols {
        if s.basic_pos[j].is_some() {
            continue;
        }
        let (l, u) = (lp.col_lower[j], lp.col_upper[j]);
        match s.status[j] {
            VarStatus::AtUpper if u.is_finite() => {}
            VarStatus::AtUpper => s.status[j] = VarStatus::AtLower,
            VarStatus::AtLower if l.is_finite() => {}
            VarStatus::AtLower if u.is_finite() => s.status[j] = VarStatus::AtUpper,
            _ => {}
        }
        if l == u {
            s.status[j] = VarStatus::AtLower;
        }
    }
    if s.refactorize().is_err() {
        return solve_lp(lp);
    }
    s.recompute_basics();
    // primal feasibility of the warm point; bound changes (branching pins)
    // typically violate a few basics, which we swap out for artificials and
    // restore with a short phase 1 instead of discarding the whole basis
    let mut kicked = false;
    // swapping in artificials moves the other basic values, which can push
    // new ones out of bounds, so repeat until the point is bound-feasible
    for round in 0..=lp.nrows {
        let mut free_rows: Vec<usize> =
            (0..lp.nrows).rev().filter(|&i| s.basic_pos[lp.ncols + i].is_none()).collect();
        let mut round_kick = false;
        for pos in 0..lp.nrows {
            let j = s.basic[pos];
            let (l, u) = s.bounds(j);
            let v = s.value[j];
            if v >= l - 1e-7 && v <= u + 1e-7 {
                continue;
            }
            let (st, nv) = if v < l { (VarStatus::AtLower, l) } else { (VarStatus::AtUpper, u) };
            let Some(row) = free_rows.pop() else {
                if std::env::var_os("QPART_LPSTATS").is_some() {
                    eprintln!("restore: out of free rows");
                }
                return solve_lp(lp);
            };
            s.basic_pos[j] = None;
            s.status[j] = st;
            s.value[j] = nv;
            let aj = lp.ncols + row;
            s.basic[pos] = aj;
            s.basic_pos[aj] = Some(pos);
            s.status[aj] = VarStatus::Basic;
            s.art_upper[row] = f64::INFINITY;
            round_kick = true;
        }
        if !round_kick {
            break;
        }
        kicked = true;
        if round == lp.nrows || s.refactor_with_repair(true).is_err() {
            if std::env::var_os("QPART_LPSTATS").is_some() {
                eprintln!("restore: refactor failed (round {round})");
            }
            return solve_lp(lp);
        }
    }
    if kicked {
        return match run_two_phase(&mut s) {
            Ok(sol) => {
                if std::env::var_os("QPART_CHECKRESTORE").is_some() {
                    let cold = solve_lp(lp)?;
                    if cold.status != sol.status
                        || (cold.objective - sol.objective).abs() > 1e-6
                    {
                        let mut bviol = 0.0f64;
                        for j in 0..lp.ncols {
                            bviol = bviol
                                .max(lp.col_lower[j] - sol.primal[j])
                                .max(sol.primal[j] - lp.col_upper[j]);
                        }
                        let mut resid = lp.rhs.clone();
                        for j in 0..lp.ncols {
                            for &(i, a) in &lp.cols[j] {
                                resid[i] -= a * sol.primal[j];
                            }
                        }
                        let rmax = resid.iter().fold(0.0f64, |m, r| m.max(r.abs()));
                        eprintln!(
                            "restore mismatch: restored {:?} {} vs cold {:?} {} bviol={:.3e} resid={:.3e}",
                            sol.status, sol.objective, cold.status, cold.objective, bviol, rmax
                        );
                    }
                }
                Ok(sol)
            }
            Err(e) => {
                if std::env::var_os("QPART_LPSTATS").is_some() {
                    eprintln!("restore: two-phase failed: {e}");
                }
                solve_lp(lp)
            }
        };
    }
    let limit = max_pivots(lp);
    let st = match optimize_phase2(&mut s, limit) {
        Ok(st) => st,
        Err(_) => return solve_lp(lp),
    };
    if st == LpStatus::Unbounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            primal: s.value[..lp.ncols].to_vec(),
            dual: vec![0.0; lp.nrows],
            objective: f64::NEG_INFINITY,
            basis: Basis { statuses: s.status[..lp.ncols].to_vec(), basic: s.basic.clone() },
            duality_residual: 0.0,
            pivots: s.pivots,
        });
    }
    let sol = finish(&mut s, LpStatus::Optimal)?;
    if sol.duality_residual > 1e-6 || s.primal_residual() > 1e-6 {
        return solve_lp(lp);
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min c'x s.t. rows (with senses folded by caller into slacks).
    fn lp(cost: Vec<f64>, lb: Vec<f64>, ub: Vec<f64>, rows: Vec<(Vec<(usize, f64)>, f64)>) -> StandardFormLp {
        let ncols = cost.len();
        let nrows = rows.len();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols];
        let mut rhs = Vec::new();
        for (i, (entries, b)) in rows.into_iter().enumerate() {
            for (j, v) in entries {
                cols[j].push((i, v));
            }
            rhs.push(b);
        }
        StandardFormLp { ncols, nrows, cost, col_lower: lb, col_upper: ub, cols, rhs, partition_rows: 0 }
    }

    #[test]
    fn min_x_with_lower_row() {
        // min x s.t. x - s = 0.4, s in [0, inf), x in [0,1]
        // (i.e. x >= 0.4); dual of the row should be 1.
        let p = lp(
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, f64::INFINITY],
            vec![(vec![(0, 1.0), (1, -1.0)], 0.4)],
        );
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 0.4).abs() < 1e-9);
        assert!((s.dual[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn max_x_on_box() {
        // min -x, x in [0,1], no rows -> needs at least one row for basis;
        // add a vacuous row x + s = 2 with s in [0,2].
        let p = lp(
            vec![-1.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 2.0],
            vec![(vec![(0, 1.0), (1, 1.0)], 2.0)],
        );
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.primal[0] - 1.0).abs() < 1e-9);
        assert!((s.objective + 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        // x + y = 3 with x,y in [0,1]
        let p = lp(
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![(vec![(0, 1.0), (1, 1.0)], 3.0)],
        );
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        // min -x, x in [0, inf), row x - s = 0, s in [0, inf)
        let p = lp(
            vec![-1.0, 0.0],
            vec![0.0, 0.0],
            vec![f64::INFINITY, f64::INFINITY],
            vec![(vec![(0, 1.0), (1, -1.0)], 0.0)],
        );
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Unbounded);
    }

    #[test]
    fn warm_restart_is_fixed_point() {
        let p = lp(
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, f64::INFINITY],
            vec![(vec![(0, 1.0), (1, -1.0)], 0.4)],
        );
        let s = solve_lp(&p).unwrap();
        let w = warm_solve(&p, &s.basis).unwrap();
        assert_eq!(w.status, LpStatus::Optimal);
        assert!((w.objective - s.objective).abs() < 1e-12);
        assert_eq!(w.pivots, 0);
    }

    #[test]
    fn warm_with_singular_basis_falls_back() {
        let p = lp(
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, f64::INFINITY],
            vec![(vec![(0, 1.0), (1, -1.0)], 0.4)],
        );
        // a bogus basis with no basic columns for the row span
        let basis = Basis { statuses: vec![VarStatus::AtLower, VarStatus::AtLower], basic: vec![0] };
        // column 0 is declared both basic and nonbasic; refactorization or
        // feasibility checks must reject and fall back
        let w = warm_solve(&p, &basis).unwrap();
        assert!((w.objective - 0.4).abs() < 1e-9);
    }

    /// Random small LPs: compare against a brute-force over basis subsets is
    /// overkill; instead verify duals against finite differences of the
    /// optimal value w.r.t. rhs perturbation.
    #[test]
    fn duals_match_finite_differences() {
        use crate::rng::CounterRng;
        let mut rng = CounterRng::new(11, &[42]);
        let mut checked = 0;
        for trial in 0..40 {
            let ncols = 6;
            let nrows = 3;
            let cost: Vec<f64> = (0..ncols).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut rows = Vec::new();
            for _ in 0..nrows {
                let entries: Vec<(usize, f64)> =
                    (0..ncols).map(|j| (j, rng.uniform(-1.0, 1.0))).collect();
                rows.push((entries, rng.uniform(0.2, 1.0)));
            }
            let p = lp(cost, vec![0.0; ncols], vec![2.0; ncols], rows);
            let s = solve_lp(&p).unwrap();
            if s.status != LpStatus::Optimal {
                continue;
            }
            let _ = trial;
            let h = 1e-6;
            for r in 0..nrows {
                let mut pp = p.clone();
                pp.rhs[r] += h;
                let mut pm = p.clone();
                pm.rhs[r] -= h;
                let (sp, sm) = (solve_lp(&pp).unwrap(), solve_lp(&pm).unwrap());
                if sp.status != LpStatus::Optimal || sm.status != LpStatus::Optimal {
                    continue;
                }
                let fd = (sp.objective - sm.objective) / (2.0 * h);
                // only check nondegenerate rows (two-sided derivative agrees)
                let one_sided_p = (sp.objective - s.objective) / h;
                let one_sided_m = (s.objective - sm.objective) / h;
                if (one_sided_p - one_sided_m).abs() > 1e-4 {
                    continue;
                }
                let rel = (s.dual[r] - fd).abs() / fd.abs().max(1.0);
                assert!(rel < 1e-4, "dual {} vs fd {}", s.dual[r], fd);
                checked += 1;
            }
        }
        assert!(checked > 20, "too few nondegenerate dual checks: {checked}");
    }

    #[test]
    fn complementary_slackness() {
        use crate::rng::CounterRng;
        let mut rng = CounterRng::new(5, &[7]);
        for _ in 0..20 {
            let ncols = 8;
            let nrows = 4;
            let cost: Vec<f64> = (0..ncols).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut rows = Vec::new();
            for _ in 0..nrows {
                let entries: Vec<(usize, f64)> =
                    (0..ncols).map(|j| (j, rng.uniform(-1.0, 1.0))).collect();
                rows.push((entries, rng.uniform(0.1, 0.8)));
            }
            let p = lp(cost, vec![0.0; ncols], vec![1.5; ncols], rows);
            let s = solve_lp(&p).unwrap();
            if s.status != LpStatus::Optimal {
                continue;
            }
            assert!(s.duality_residual <= 1e-8, "residual {}", s.duality_residual);
            // reduced-cost signs at bounds
            for j in 0..ncols {
                let mut d = p.cost[j];
                for &(i, v) in &p.cols[j] {
                    d -= s.dual[i] * v;
                }
                match s.basis.statuses[j] {
                    VarStatus::AtLower => assert!(d >= -1e-7, "col {j}: d={d}"),
                    VarStatus::AtUpper => assert!(d <= 1e-7, "col {j}: d={d}"),
                    VarStatus::Basic => assert!(d.abs() <= 1e-7, "col {j}: d={d}"),
                }
            }
        }
    }
}
