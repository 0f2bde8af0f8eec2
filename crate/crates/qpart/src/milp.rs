//! Branch-and-bound over the partition-indicator binaries.
//!
//! The binaries come in SOS1 groups (one per partitioned variable): each
//! group's columns sum to 1 and exactly one must be active. Branching splits
//! a group's allowed index set in half; node selection is best bound with
//! lowest node id breaking ties.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::linsolve::{self, Basis, LpSolution, LpStatus, StandardFormLp};

const INT_TOL: f64 = 1e-6;
const MAX_NODES: usize = 200_000;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("combinatorial limit exceeded: {0} assignments")]
    EnumerationLimit(usize),
    #[error(transparent)]
    Lp(#[from] linsolve::LinsolveError),
}

#[derive(Debug, Clone)]
pub struct MilpModel {
    pub lp: StandardFormLp,
    /// Column indices of the binary selectors, one inner vec per group.
    pub sos1_groups: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    NodeLimit,
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub objective: f64,
    /// Proven lower bound; equals the objective within gap at optimality.
    pub bound: f64,
    pub primal: Vec<f64>,
    /// Selected index per SOS1 group.
    pub y_choice: Vec<usize>,
    pub nodes: usize,
    pub second_best_objective: Option<f64>,
    pub basis: Option<Basis>,
}

struct Node {
    id: usize,
    bound: f64,
    allowed: Vec<Vec<usize>>,
    basis: Option<Basis>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for Node {}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we want lowest bound first
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Applies the node's allowed sets by zeroing upper bounds of excluded
/// selector columns, runs the solver, then restores the bounds.
fn solve_node(
    lp: &mut StandardFormLp,
    groups: &[Vec<usize>],
    allowed: &[Vec<usize>],
    basis: Option<&Basis>,
) -> Result<LpSolution, MilpError> {
    let mut saved: Vec<(usize, f64)> = Vec::new();
    for (g, cols) in groups.iter().enumerate() {
        for &c in cols {
            if !allowed[g].contains(&c) {
                saved.push((c, lp.col_upper[c]));
                lp.col_upper[c] = 0.0;
            }
        }
    }
    let result = match basis {
        Some(b) => linsolve::warm_solve(lp, b),
        None => linsolve::solve_lp(lp),
    };
    for (c, u) in saved {
        lp.col_upper[c] = u;
    }
    Ok(result?)
}

/// Returns the group with the largest fractional mass, or None when every
/// group is integral at the current point.
fn most_fractional(groups: &[Vec<usize>], primal: &[f64]) -> Option<usize> {
    let mut pick: Option<(usize, f64)> = None;
    for (g, cols) in groups.iter().enumerate() {
        let vmax = cols.iter().map(|&c| primal[c]).fold(0.0f64, f64::max);
        let frac = 1.0 - vmax;
        if frac > INT_TOL {
            match pick {
                Some((_, best)) if frac <= best => {}
                _ => pick = Some((g, frac)),
            }
        }
    }
    pick.map(|(g, _)| g)
}

fn y_choice(groups: &[Vec<usize>], primal: &[f64]) -> Vec<usize> {
    groups
        .iter()
        .map(|cols| {
            let mut best = 0;
            for (k, &c) in cols.iter().enumerate() {
                if primal[c] > primal[cols[best]] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn solve_milp(m: &MilpModel, rel_gap: f64, abs_gap: f64) -> Result<MilpSolution, MilpError> {
    assert!(rel_gap > 0.0 && abs_gap > 0.0);
    let mut lp = m.lp.clone();
    let groups = &m.sos1_groups;
    let root_allowed: Vec<Vec<usize>> = groups.to_vec();

    let root = solve_node(&mut lp, groups, &root_allowed, None)?;
    if root.status == LpStatus::Infeasible {
        return Ok(MilpSolution {
            status: MilpStatus::Infeasible,
            objective: f64::INFINITY,
            bound: f64::INFINITY,
            primal: Vec::new(),
            y_choice: Vec::new(),
            nodes: 1,
            second_best_objective: None,
            basis: None,
        });
    }

    let mut incumbent: Option<LpSolution> = None;
    let mut incumbent_obj = f64::INFINITY;
    let mut nodes = 0usize;
    let mut next_id = 0usize;
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        id: next_id,
        bound: root.objective,
        allowed: root_allowed,
        basis: Some(root.basis.clone()),
    });
    next_id += 1;
    let mut proven = root.objective;

    while let Some(node) = heap.pop() {
        proven = proven.max(node.bound.min(incumbent_obj));
        if node.bound >= incumbent_obj - abs_gap
            || node.bound >= incumbent_obj - rel_gap * incumbent_obj.abs()
        {
            continue;
        }
        if nodes >= MAX_NODES {
            return Ok(MilpSolution {
                status: MilpStatus::NodeLimit,
                objective: incumbent_obj,
                bound: node.bound,
                primal: incumbent.as_ref().map(|s| s.primal.clone()).unwrap_or_default(),
                y_choice: incumbent
                    .as_ref()
                    .map(|s| y_choice(groups, &s.primal))
                    .unwrap_or_default(),
                nodes,
                second_best_objective: None,
                basis: incumbent.map(|s| s.basis),
            });
        }
        nodes += 1;
        let sol = solve_node(&mut lp, groups, &node.allowed, node.basis.as_ref())?;
        if sol.status != LpStatus::Optimal {
            continue;
        }
        if sol.objective >= incumbent_obj - abs_gap {
            continue;
        }
        match most_fractional(groups, &sol.primal) {
            None => {
                if sol.objective < incumbent_obj {
                    incumbent_obj = sol.objective;
                    incumbent = Some(sol);
                }
            }
            Some(g) => {
                let cols = &node.allowed[g];
                if cols.len() <= 1 {
                    // fractional mass with one allowed column means the SOS1
                    // row is not satisfiable in this subtree
                    continue;
                }
                let mid = cols.len() / 2 + cols.len() % 2;
                for half in [&cols[..mid], &cols[mid..]] {
                    let mut allowed = node.allowed.clone();
                    allowed[g] = half.to_vec();
                    heap.push(Node {
                        id: next_id,
                        bound: sol.objective,
                        allowed,
                        basis: Some(sol.basis.clone()),
                    });
                    next_id += 1;
                }
            }
        }
    }

    match incumbent {
        None => Ok(MilpSolution {
            status: MilpStatus::Infeasible,
            objective: f64::INFINITY,
            bound: f64::INFINITY,
            primal: Vec::new(),
            y_choice: Vec::new(),
            nodes,
            second_best_objective: None,
            basis: None,
        }),
        Some(sol) => Ok(MilpSolution {
            status: MilpStatus::Optimal,
            objective: sol.objective,
            bound: proven.min(sol.objective),
            y_choice: y_choice(groups, &sol.primal),
            primal: sol.primal,
            nodes,
            second_best_objective: None,
            basis: Some(sol.basis),
        }),
    }
}

/// Exhaustive oracle: solves the LP for every one-hot Y assignment.
/// Also reports the best objective over assignments distinct from the winner.
pub fn enumerate_solve(m: &MilpModel) -> Result<MilpSolution, MilpError> {
    let groups = &m.sos1_groups;
    let total: usize = groups.iter().try_fold(1usize, |acc, g| {
        acc.checked_mul(g.len()).filter(|&t| t <= 100_000)
    }).ok_or(MilpError::EnumerationLimit(usize::MAX))?;
    let _ = total;

    let mut lp = m.lp.clone();
    let mut choice = vec![0usize; groups.len()];
    let mut best: Option<(f64, Vec<usize>, LpSolution)> = None;
    let mut second: Option<f64> = None;
    let mut warm: Option<Basis> = None;
    let mut nodes = 0usize;
    loop {
        let allowed: Vec<Vec<usize>> =
            groups.iter().zip(&choice).map(|(cols, &k)| vec![cols[k]]).collect();
        let sol = solve_node(&mut lp, groups, &allowed, warm.as_ref())?;
        nodes += 1;
        if sol.status == LpStatus::Optimal {
            warm = Some(sol.basis.clone());
            let obj = sol.objective;
            match &best {
                Some((b, _, _)) if obj >= *b => {
                    second = Some(second.map_or(obj, |s: f64| s.min(obj)));
                }
                Some((b, _, _)) => {
                    second = Some(second.map_or(*b, |s: f64| s.min(*b)));
                    best = Some((obj, choice.clone(), sol));
                }
                None => best = Some((obj, choice.clone(), sol)),
            }
        }
        // odometer
        let mut g = 0;
        loop {
            if g == groups.len() {
                match best {
                    None => {
                        return Ok(MilpSolution {
                            status: MilpStatus::Infeasible,
                            objective: f64::INFINITY,
                            bound: f64::INFINITY,
                            primal: Vec::new(),
                            y_choice: Vec::new(),
                            nodes,
                            second_best_objective: None,
                            basis: None,
                        })
                    }
                    Some((obj, yc, sol)) => {
                        return Ok(MilpSolution {
                            status: MilpStatus::Optimal,
                            objective: obj,
                            bound: obj,
                            primal: sol.primal,
                            y_choice: yc,
                            nodes,
                            second_best_objective: second,
                            basis: Some(sol.basis),
                        })
                    }
                }
            }
            choice[g] += 1;
            if choice[g] < groups[g].len() {
                break;
            }
            choice[g] = 0;
            g += 1;
        }
    }
}

/// Excludes one one-hot assignment via `Σ_{(i,l): Y*_il = 1} Y_il ≤ |NC| − 1`.
pub fn add_no_good_cut(m: &MilpModel, y_star: &[usize]) -> MilpModel {
    assert_eq!(y_star.len(), m.sos1_groups.len());
    let mut out = m.clone();
    let row = out.lp.nrows;
    out.lp.nrows += 1;
    // slack turns the ≤ into an equality
    out.lp.ncols += 1;
    out.lp.cost.push(0.0);
    out.lp.col_lower.push(0.0);
    out.lp.col_upper.push(f64::INFINITY);
    out.lp.cols.push(vec![(row, 1.0)]);
    for (g, cols) in m.sos1_groups.iter().enumerate() {
        out.lp.cols[cols[y_star[g]]].push((row, 1.0));
    }
    out.lp.rhs.push(m.sos1_groups.len() as f64 - 1.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    /// Columns: Y_0, Y_1 selectors, then x. Rows: Y_0 + Y_1 = 1 and
    /// x - a·Y_0 - b·Y_1 = 0 with min x, so the value equals a or b.
    fn two_leaf(a: f64, b: f64) -> MilpModel {
        let lp = StandardFormLp {
            ncols: 3,
            nrows: 2,
            cost: vec![0.0, 0.0, 1.0],
            col_lower: vec![0.0; 3],
            col_upper: vec![1.0, 1.0, f64::INFINITY],
            cols: vec![
                vec![(0, 1.0), (1, -a)],
                vec![(0, 1.0), (1, -b)],
                vec![(1, 1.0)],
            ],
            rhs: vec![1.0, 0.0],
            partition_rows: 0,
        };
        MilpModel { lp, sos1_groups: vec![vec![0, 1]] }
    }

    #[test]
    fn two_leaf_picks_smaller() {
        let m = two_leaf(0.3, 0.7);
        let s = solve_milp(&m, 1e-6, 1e-9).unwrap();
        assert_eq!(s.status, MilpStatus::Optimal);
        assert!((s.objective - 0.3).abs() < 1e-9);
        assert_eq!(s.y_choice, vec![0]);
        assert!(s.bound <= s.objective + 1e-8);
        let e = enumerate_solve(&m).unwrap();
        assert!((e.objective - 0.3).abs() < 1e-9);
        assert!((e.second_best_objective.unwrap() - 0.7).abs() < 1e-9);
    }

    #[test]
    fn no_good_cut_forces_second_best() {
        let m = two_leaf(0.3, 0.7);
        let cut = add_no_good_cut(&m, &[0]);
        let s = solve_milp(&cut, 1e-6, 1e-9).unwrap();
        assert_eq!(s.status, MilpStatus::Optimal);
        assert!((s.objective - 0.7).abs() < 1e-9);
        assert_eq!(s.y_choice, vec![1]);
        assert!(s.objective >= 0.3 - 1e-12);
    }

    #[test]
    fn infeasible_branch_skipped() {
        // one branch forces x >= 2 with x in [0,1]
        let lp = StandardFormLp {
            ncols: 4, // Y0, Y1, x, s
            nrows: 2,
            cost: vec![0.0, 0.0, 1.0, 0.0],
            col_lower: vec![0.0; 4],
            col_upper: vec![1.0, 1.0, 1.0, f64::INFINITY],
            // x - 2 Y1 - s' ... use: x - 0.5 Y0 - 2 Y1 + s = 0 with s>=0 means
            // x >= 0.5 on branch 0, x >= 2 (infeasible) on branch 1
            cols: vec![
                vec![(0, 1.0), (1, -0.5)],
                vec![(0, 1.0), (1, -2.0)],
                vec![(1, 1.0)],
                vec![(1, -1.0)],
            ],
            rhs: vec![1.0, 0.0],
            partition_rows: 0,
        };
        let m = MilpModel { lp, sos1_groups: vec![vec![0, 1]] };
        let e = enumerate_solve(&m).unwrap();
        assert_eq!(e.status, MilpStatus::Optimal);
        assert!((e.objective - 0.5).abs() < 1e-9);
        assert!(e.second_best_objective.is_none());
        let s = solve_milp(&m, 1e-6, 1e-9).unwrap();
        assert!((s.objective - 0.5).abs() < 1e-9);
    }

    #[test]
    fn all_branches_infeasible() {
        let lp = StandardFormLp {
            ncols: 2,
            nrows: 2,
            cost: vec![0.0, 0.0],
            col_lower: vec![0.0, 0.0],
            col_upper: vec![1.0, 1.0],
            cols: vec![vec![(0, 1.0), (1, 5.0)], vec![(0, 1.0), (1, 5.0)]],
            rhs: vec![1.0, 2.0], // sum Y = 1 but 5 sum Y = 2: contradiction
            partition_rows: 0,
        };
        let m = MilpModel { lp, sos1_groups: vec![vec![0, 1]] };
        assert_eq!(enumerate_solve(&m).unwrap().status, MilpStatus::Infeasible);
        assert_eq!(solve_milp(&m, 1e-6, 1e-9).unwrap().status, MilpStatus::Infeasible);
    }

    /// Random coupled models: two SOS1 groups of three, two continuous
    /// variables, random linking rows with slacks so every assignment stays
    /// feasible. Branch-and-bound must match exhaustive enumeration.
    #[test]
    fn random_models_match_enumeration() {
        let mut rng = CounterRng::new(23, &[1]);
        for _ in 0..30 {
            let ny = 6; // 2 groups x 3
            let nx = 2;
            let nslack = 2;
            let ncols = ny + nx + nslack;
            let mut cost = vec![0.0; ncols];
            for c in cost.iter_mut().take(ny + nx) {
                *c = rng.uniform(-1.0, 1.0);
            }
            let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols];
            // SOS1 rows
            for g in 0..2 {
                for k in 0..3 {
                    cols[3 * g + k].push((g, 1.0));
                }
            }
            // linking rows: a'x + b'Y + slack = rhs
            for r in 0..2 {
                for j in 0..nx {
                    cols[ny + j].push((2 + r, rng.uniform(-1.0, 1.0)));
                }
                for j in 0..ny {
                    cols[j].push((2 + r, rng.uniform(-1.0, 1.0)));
                }
                cols[ny + nx + r].push((2 + r, 1.0));
            }
            let rhs = vec![1.0, 1.0, rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0)];
            let mut ub = vec![1.0; ncols];
            for u in ub.iter_mut().skip(ny + nx) {
                *u = f64::INFINITY;
            }
            let lp = StandardFormLp {
                ncols,
                nrows: 4,
                cost,
                col_lower: vec![0.0; ncols],
                col_upper: ub,
                cols,
                rhs,
                partition_rows: 0,
            };
            let m = MilpModel { lp, sos1_groups: vec![vec![0, 1, 2], vec![3, 4, 5]] };
            let e = enumerate_solve(&m).unwrap();
            let s = solve_milp(&m, 1e-6, 1e-9).unwrap();
            assert_eq!(e.status, s.status);
            if e.status == MilpStatus::Optimal {
                assert!(
                    (e.objective - s.objective).abs() < 1e-8,
                    "bb {} vs oracle {}",
                    s.objective,
                    e.objective
                );
                assert!(s.bound <= s.objective + 1e-8);
            }
        }
    }
}
