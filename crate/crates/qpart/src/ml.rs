//! Imitation of the expensive partition-point search: cheap per-instance
//! features, depth-limited regression trees, AdaBoost.R2 ensembles, and a
//! K-fold out-of-sample prediction driver that emits partition matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver;
use crate::milp::{self, MilpStatus};
use crate::model::{InstanceMeta, Qcqp};
use crate::relax::{self, OaConfig, PartitionMatrix};
use crate::rng::CounterRng;
use crate::sensitivity::SensError;

#[derive(Debug, Error)]
pub enum MlError {
    #[error("root relaxation infeasible; instance rejected")]
    InfeasibleRoot,
    #[error("fold count {0} invalid for {1} samples")]
    BadFolds(usize, usize),
    #[error("inconsistent partition shapes in dataset")]
    ShapeMismatch,
    #[error(transparent)]
    Sens(#[from] SensError),
}

/// θ, presolve solution + objective, root-relaxation solution + bound, and
/// a trailing flag for whether presolve found a feasible point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

pub fn feature_dim(d_theta: usize, n: usize) -> usize {
    d_theta + 2 * n + 3
}

pub fn extract_features(q: &Qcqp, meta: &InstanceMeta) -> Result<FeatureVector, MlError> {
    let mc = relax::build_mccormick(q, &OaConfig::default())
        .map_err(SensError::from)?;
    let sol = milp::solve_milp(&mc.milp, 1e-6, 1e-9).map_err(SensError::from)?;
    if sol.status == MilpStatus::Infeasible {
        return Err(MlError::InfeasibleRoot);
    }
    let bound = mc.objective_value(&sol);
    let x_mc = &sol.primal[..q.n];

    let starts = vec![vec![1.0; q.n], vec![0.5; q.n], vec![0.0; q.n]];
    let presolve = driver::local_search(q, &starts);

    let mut values = meta.theta.clone();
    match &presolve {
        Some((x, v)) => {
            values.extend_from_slice(x);
            values.push(*v);
        }
        None => {
            values.extend_from_slice(x_mc);
            values.push(bound);
        }
    }
    values.extend_from_slice(x_mc);
    values.push(bound);
    values.push(if presolve.is_some() { 1.0 } else { 0.0 });
    Ok(FeatureVector { values })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MlConfig {
    pub k_folds: usize,
    pub n_weak_learners: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for MlConfig {
    fn default() -> Self {
        MlConfig { k_folds: 10, n_weak_learners: 1000, max_depth: 25, seed: 0 }
    }
}

// ---------------------------------------------------------------------------
// regression tree

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn weighted_mean(idx: &[usize], y: &[f64], w: &[f64]) -> f64 {
    let (mut sw, mut swy) = (0.0, 0.0);
    for &i in idx {
        sw += w[i];
        swy += w[i] * y[i];
    }
    if sw > 0.0 {
        swy / sw
    } else {
        idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
    }
}

fn best_split(x: &[Vec<f64>], y: &[f64], w: &[f64], idx: &[usize]) -> Option<SplitChoice> {
    let nf = x[idx[0]].len();
    let mut best: Option<SplitChoice> = None;
    let mut order = idx.to_vec();
    for f in 0..nf {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        // prefix sums over the sorted order; candidate cuts at midpoints of
        // distinct consecutive values
        let (mut sw, mut swy, mut swy2) = (0.0, 0.0, 0.0);
        let (tw, twy, twy2) = order.iter().fold((0.0, 0.0, 0.0), |(a, b, c), &i| {
            (a + w[i], b + w[i] * y[i], c + w[i] * y[i] * y[i])
        });
        for k in 0..order.len() - 1 {
            let i = order[k];
            sw += w[i];
            swy += w[i] * y[i];
            swy2 += w[i] * y[i] * y[i];
            let (va, vb) = (x[i][f], x[order[k + 1]][f]);
            if vb <= va {
                continue;
            }
            if sw <= 0.0 || tw - sw <= 0.0 {
                continue;
            }
            // total weighted squared error after the split
            let left = swy2 - swy * swy / sw;
            let rw = tw - sw;
            let right = (twy2 - swy2) - (twy - swy) * (twy - swy) / rw;
            let score = left + right;
            let threshold = 0.5 * (va + vb);
            let better = match &best {
                None => true,
                Some(b) => {
                    score < b.score - 1e-15
                        || (score <= b.score + 1e-15
                            && (f, threshold) < (b.feature, b.threshold))
                }
            };
            if better {
                best = Some(SplitChoice { feature: f, threshold, score });
            }
        }
    }
    best
}

pub fn fit_tree(x: &[Vec<f64>], y: &[f64], w: &[f64], max_depth: usize) -> RegressionTree {
    assert!(!x.is_empty() && x.len() == y.len() && y.len() == w.len());
    let mut nodes = Vec::new();
    // worklist of (node slot, sample indices, depth)
    let all: Vec<usize> = (0..x.len()).collect();
    nodes.push(TreeNode::Leaf(0.0));
    let mut stack = vec![(0usize, all, 0usize)];
    while let Some((slot, idx, depth)) = stack.pop() {
        let mean = weighted_mean(&idx, y, w);
        let pure = idx.iter().all(|&i| (y[i] - y[idx[0]]).abs() < 1e-15);
        if depth >= max_depth || idx.len() < 2 || pure {
            nodes[slot] = TreeNode::Leaf(mean);
            continue;
        }
        match best_split(x, y, w, &idx) {
            None => nodes[slot] = TreeNode::Leaf(mean),
            Some(s) => {
                let (li, ri): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| x[i][s.feature] <= s.threshold);
                let left = nodes.len();
                nodes.push(TreeNode::Leaf(0.0));
                let right = nodes.len();
                nodes.push(TreeNode::Leaf(0.0));
                nodes[slot] =
                    TreeNode::Split { feature: s.feature, threshold: s.threshold, left, right };
                stack.push((left, li, depth + 1));
                stack.push((right, ri, depth + 1));
            }
        }
    }
    RegressionTree { nodes }
}

// ---------------------------------------------------------------------------
// AdaBoost.R2

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub trees: Vec<(RegressionTree, f64)>,
    pub loss_trajectory: Vec<f64>,
}

impl AdaBoostModel {
    /// Weighted median of the tree outputs.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut preds: Vec<(f64, f64)> =
            self.trees.iter().map(|(t, wt)| (t.predict(x), *wt)).collect();
        preds.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = preds.iter().map(|p| p.1).sum();
        let mut acc = 0.0;
        for (v, wt) in &preds {
            acc += wt;
            if acc >= 0.5 * total {
                return *v;
            }
        }
        preds.last().map_or(0.0, |p| p.0)
    }
}

fn bootstrap(weights: &[f64], rng: &mut CounterRng) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cum.push(acc);
    }
    (0..weights.len())
        .map(|_| {
            let u = rng.unit() * total;
            cum.partition_point(|&c| c < u).min(weights.len() - 1)
        })
        .collect()
}

pub fn fit_adaboost(x: &[Vec<f64>], y: &[f64], cfg: &MlConfig, stream: &[u64]) -> AdaBoostModel {
    assert!(!x.is_empty() && x.len() == y.len());
    let n = x.len();
    let mut rng = CounterRng::new(cfg.seed, stream);
    let mut weights = vec![1.0 / n as f64; n];
    let mut trees = Vec::new();
    let mut loss_trajectory = Vec::new();
    for _ in 0..cfg.n_weak_learners {
        let sample = bootstrap(&weights, &mut rng);
        let sx: Vec<Vec<f64>> = sample.iter().map(|&i| x[i].clone()).collect();
        let sy: Vec<f64> = sample.iter().map(|&i| y[i]).collect();
        let sw = vec![1.0 / n as f64; n];
        let tree = fit_tree(&sx, &sy, &sw, cfg.max_depth);

        let errs: Vec<f64> = (0..n).map(|i| (tree.predict(&x[i]) - y[i]).abs()).collect();
        let emax = errs.iter().fold(0.0f64, |a, &e| a.max(e));
        if emax <= 1e-15 {
            trees.push((tree, (1e12f64).ln()));
            loss_trajectory.push(0.0);
            break;
        }
        let wsum: f64 = weights.iter().sum();
        let lbar: f64 =
            weights.iter().zip(&errs).map(|(&w, &e)| w / wsum * e / emax).sum();
        loss_trajectory.push(lbar);
        if lbar >= 0.5 {
            if trees.is_empty() {
                trees.push((tree, 1e-6));
            }
            break;
        }
        let beta = lbar / (1.0 - lbar);
        trees.push((tree, (1.0 / beta).ln()));
        for (w, &e) in weights.iter_mut().zip(&errs) {
            *w *= beta.powf(1.0 - e / emax);
        }
    }
    if trees.is_empty() {
        // never reached with n_weak_learners >= 1, but keep total
        trees.push((fit_tree(x, y, &vec![1.0 / n as f64; n], 0), 1.0));
    }
    AdaBoostModel { trees, loss_trajectory }
}

// ---------------------------------------------------------------------------
// K-fold out-of-sample prediction

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaeRecord {
    pub var: usize,
    pub point_index: usize,
    pub scaled_mae: f64,
}

pub struct KfoldOutcome {
    pub predictions: Vec<PartitionMatrix>,
    /// Mean absolute prediction error per (variable, interior point),
    /// averaged over instances; targets live on the unit box so the scale
    /// is one.
    pub maes: Vec<MaeRecord>,
}

/// Per-(variable, interior point) boosted ensembles fit on a whole dataset,
/// for predicting first-iteration matrices on unseen instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyModel {
    pub n_vars: usize,
    pub d: usize,
    /// Row-major over (var, point).
    pub models: Vec<AdaBoostModel>,
}

impl PolicyModel {
    pub fn predict(&self, features: &FeatureVector) -> PartitionMatrix {
        let rows: Vec<Vec<f64>> = (0..self.n_vars)
            .map(|var| {
                let mut r: Vec<f64> = (0..self.d)
                    .map(|j| {
                        self.models[var * self.d + j].predict(&features.values).clamp(0.0, 1.0)
                    })
                    .collect();
                r.sort_by(f64::total_cmp);
                r.insert(0, 0.0);
                r.push(1.0);
                r
            })
            .collect();
        relax::project_to_partition_set(&rows)
    }
}

pub fn fit_policy(
    dataset: &[(FeatureVector, PartitionMatrix)],
    cfg: &MlConfig,
) -> Result<PolicyModel, MlError> {
    if dataset.is_empty() {
        return Err(MlError::ShapeMismatch);
    }
    let shape = (dataset[0].1.rows.len(), dataset[0].1.d);
    if dataset.iter().any(|(_, p)| (p.rows.len(), p.d) != shape) {
        return Err(MlError::ShapeMismatch);
    }
    let (n_vars, d) = shape;
    let x: Vec<Vec<f64>> = dataset.iter().map(|(f, _)| f.values.clone()).collect();
    let mut models = Vec::with_capacity(n_vars * d);
    for var in 0..n_vars {
        for j in 0..d {
            let y: Vec<f64> = dataset.iter().map(|(_, p)| p.rows[var][j + 1]).collect();
            models.push(fit_adaboost(&x, &y, cfg, &[0xada, var as u64, j as u64, u64::MAX]));
        }
    }
    Ok(PolicyModel { n_vars, d, models })
}

pub fn kfold_policy(
    dataset: &[(FeatureVector, PartitionMatrix)],
    cfg: &MlConfig,
) -> Result<KfoldOutcome, MlError> {
    let n = dataset.len();
    if cfg.k_folds < 2 || cfg.k_folds > n {
        return Err(MlError::BadFolds(cfg.k_folds, n));
    }
    let shape = (dataset[0].1.rows.len(), dataset[0].1.d);
    if dataset.iter().any(|(_, p)| (p.rows.len(), p.d) != shape) {
        return Err(MlError::ShapeMismatch);
    }
    let (n_vars, d) = shape;
    let fold_of: Vec<usize> = (0..n).map(|i| i % cfg.k_folds).collect();

    let mut pred_rows: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n_vars]; n];
    let mut maes = Vec::new();
    for var in 0..n_vars {
        for j in 0..d {
            let mut abs_err_sum = 0.0;
            for fold in 0..cfg.k_folds {
                let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
                let x: Vec<Vec<f64>> =
                    train.iter().map(|&i| dataset[i].0.values.clone()).collect();
                let y: Vec<f64> =
                    train.iter().map(|&i| dataset[i].1.rows[var][j + 1]).collect();
                let model = fit_adaboost(
                    &x,
                    &y,
                    cfg,
                    &[0xada, var as u64, j as u64, fold as u64],
                );
                for i in (0..n).filter(|&i| fold_of[i] == fold) {
                    let p = model.predict(&dataset[i].0.values).clamp(0.0, 1.0);
                    abs_err_sum += (p - dataset[i].1.rows[var][j + 1]).abs();
                    pred_rows[i][var].push(p);
                }
            }
            maes.push(MaeRecord {
                var,
                point_index: j,
                scaled_mae: abs_err_sum / n as f64,
            });
        }
    }

    let mut predictions = Vec::with_capacity(n);
    for rows in pred_rows {
        let sorted: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|mut r| {
                r.sort_by(f64::total_cmp);
                r.insert(0, 0.0);
                r.push(1.0);
                r
            })
            .collect();
        predictions.push(relax::project_to_partition_set(&sorted));
    }
    Ok(KfoldOutcome { predictions, maes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::example1;

    #[test]
    fn features_for_square_instance() {
        let q = example1();
        let meta = InstanceMeta {
            family: crate::model::Family::Bilinear,
            theta: vec![0.25, -0.5],
            seed: 1,
            v_star: None,
            v_star_source: None,
            index: 0,
        };
        let f = extract_features(&q, &meta).unwrap();
        assert_eq!(f.values.len(), feature_dim(2, 1));
        assert_eq!(&f.values[0..2], &[0.25, -0.5]);
        assert!((f.values[2] - 0.4).abs() < 1e-4); // presolve x
        assert!((f.values[3] - 0.4).abs() < 1e-4); // presolve objective
        assert!((f.values[4] - 0.16).abs() < 1e-6); // root x
        assert!((f.values[5] - 0.16).abs() < 1e-6); // root bound
        assert_eq!(f.values[6], 1.0);

        let g = extract_features(&q, &meta).unwrap();
        assert_eq!(f.values, g.values);
    }

    #[test]
    fn tree_constant_targets() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let y = vec![0.7; 3];
        let w = vec![1.0 / 3.0; 3];
        let t = fit_tree(&x, &y, &w, 5);
        assert_eq!(t.nodes.len(), 1);
        assert!((t.predict(&[9.0]) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn tree_fits_step_function() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 4 { 0.1 } else { 0.9 }).collect();
        let w = vec![0.1; 10];
        let t = fit_tree(&x, &y, &w, 1);
        assert!((t.predict(&[2.0, 0.0]) - 0.1).abs() < 1e-12);
        assert!((t.predict(&[7.0, 0.0]) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn tree_smooth_target_low_training_error() {
        let mut rng = CounterRng::new(5, &[1]);
        let x: Vec<Vec<f64>> = (0..1000).map(|_| vec![rng.unit()]).collect();
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v[0]).sin() * 0.5 + 0.5).collect();
        let w = vec![1e-3; 1000];
        let t = fit_tree(&x, &y, &w, 25);
        let mae: f64 = x
            .iter()
            .zip(&y)
            .map(|(xi, &yi)| (t.predict(xi) - yi).abs())
            .sum::<f64>()
            / 1000.0;
        assert!(mae < 0.01, "training MAE {mae}");
    }

    #[test]
    fn adaboost_constant_targets_stop_immediately() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let y = vec![0.5; 3];
        let m = fit_adaboost(&x, &y, &MlConfig::default(), &[1]);
        assert_eq!(m.trees.len(), 1);
        assert!((m.predict(&[5.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn adaboost_single_sample() {
        let m = fit_adaboost(&[vec![0.3]], &[0.8], &MlConfig::default(), &[2]);
        assert!((m.predict(&[0.3]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn adaboost_training_error_improves() {
        let mut rng = CounterRng::new(9, &[3]);
        let x: Vec<Vec<f64>> = (0..80).map(|_| vec![rng.unit(), rng.unit()]).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v[0] + 0.3 * v[1] * v[1]).collect();
        let cfg = MlConfig { n_weak_learners: 30, max_depth: 3, ..MlConfig::default() };
        let mae = |m: &AdaBoostModel| {
            x.iter().zip(&y).map(|(xi, &yi)| (m.predict(xi) - yi).abs()).sum::<f64>() / 80.0
        };
        let short = fit_adaboost(&x, &y, &MlConfig { n_weak_learners: 1, ..cfg }, &[4]);
        let long = fit_adaboost(&x, &y, &cfg, &[4]);
        assert!(mae(&long) <= mae(&short) + 1e-12);
        // boosting weights are positive
        assert!(long.trees.iter().all(|(_, w)| *w > 0.0));
    }

    #[test]
    fn prediction_stays_in_target_range() {
        let mut rng = CounterRng::new(11, &[7]);
        let x: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.unit()]).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.2 + 0.6 * v[0]).collect();
        let cfg = MlConfig { n_weak_learners: 10, max_depth: 4, ..MlConfig::default() };
        let m = fit_adaboost(&x, &y, &cfg, &[8]);
        for _ in 0..50 {
            let p = m.predict(&[rng.unit() * 2.0 - 0.5]);
            assert!((0.2..=0.8).contains(&p));
        }
    }

    fn toy_dataset(n: usize) -> Vec<(FeatureVector, PartitionMatrix)> {
        let mut rng = CounterRng::new(3, &[0xd5]);
        (0..n)
            .map(|_| {
                let t = rng.unit();
                let p = PartitionMatrix::from_rows(vec![vec![
                    0.0,
                    0.2 + 0.3 * t,
                    0.5 + 0.3 * t,
                    1.0,
                ]])
                .unwrap();
                (FeatureVector { values: vec![t, 1.0 - t] }, p)
            })
            .collect()
    }

    #[test]
    fn leave_one_out_identical_targets() {
        let p = PartitionMatrix::from_rows(vec![vec![0.0, 0.3, 0.6, 1.0]]).unwrap();
        let data: Vec<_> = (0..3)
            .map(|i| (FeatureVector { values: vec![i as f64 * 0.0] }, p.clone()))
            .collect();
        let cfg = MlConfig { k_folds: 3, n_weak_learners: 5, max_depth: 3, seed: 0 };
        let out = kfold_policy(&data, &cfg).unwrap();
        for pred in &out.predictions {
            assert_eq!(pred, &p);
        }
    }

    #[test]
    fn predictions_are_sorted_and_valid() {
        let data = toy_dataset(24);
        let cfg = MlConfig { k_folds: 4, n_weak_learners: 10, max_depth: 4, seed: 1 };
        let out = kfold_policy(&data, &cfg).unwrap();
        assert_eq!(out.predictions.len(), 24);
        for p in &out.predictions {
            p.validate().unwrap();
            for row in &p.rows {
                for w in row.windows(2) {
                    assert!(w[1] >= w[0] - 1e-12);
                }
            }
        }
        // learnable toy target → small errors
        assert_eq!(out.maes.len(), 2);
        for m in &out.maes {
            assert!(m.scaled_mae < 0.1, "mae {}", m.scaled_mae);
        }
    }

    #[test]
    fn kfold_deterministic() {
        let data = toy_dataset(12);
        let cfg = MlConfig { k_folds: 3, n_weak_learners: 8, max_depth: 3, seed: 5 };
        let a = kfold_policy(&data, &cfg).unwrap();
        let b = kfold_policy(&data, &cfg).unwrap();
        for (pa, pb) in a.predictions.iter().zip(&b.predictions) {
            assert_eq!(pa, pb);
        }
    }
}
