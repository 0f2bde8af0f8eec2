//! End-to-end acceptance gate. Each test prints one PASS/FAIL line
//! (run with `--nocapture` to see the lines for passing tests).
//!
//! The batch criteria share fixtures: a 20-instance evaluation set with
//! reference optima and offline partition-search results, and a
//! 200-instance training set with imitation labels. Those are expensive
//! (the label set alone is 200 relaxation-ascent runs), so the full gate
//! takes a couple of hours on one core.

use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use qpart::driver::{self, effective_gap, shifted_geometric_mean, tle_gap, Policy, SolveConfig, SolveStatus};
use qpart::instances::{self, FamilySpec};
use qpart::milp;
use qpart::ml::{self, FeatureVector, MlConfig};
use qpart::model::{self, example1, Family, Qcqp, QuadFunc, SparseSym};
use qpart::nsmax::AscentConfig;
use qpart::policies;
use qpart::relax::{self, OaConfig, PartitionMatrix};
use qpart::rng::CounterRng;
use qpart::sensitivity;

fn check(ok: bool, name: &str, detail: String) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] {name}: {detail}");
    assert!(ok, "{name}: {detail}");
}

/// Dense random box-constrained instance with every product term and one
/// square term, used by the small-scale oracle criteria.
fn random_tiny(rng: &mut CounterRng, n: usize) -> Qcqp {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j));
        }
    }
    let quads: Vec<usize> = (0..n.min(1)).collect();
    let mut trips = Vec::new();
    for &(i, j) in &pairs {
        trips.push((i, j, rng.uniform(-1.0, 1.0)));
    }
    for &k in &quads {
        trips.push((k, k, rng.uniform(-1.0, 1.0)));
    }
    let obj = QuadFunc {
        q: SparseSym::from_triplets(&trips),
        r: (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        constant: 0.0,
    };
    Qcqp {
        n,
        objective: obj,
        constraints: vec![],
        bilinear_pairs: pairs,
        quadratic_indices: quads,
        lower: vec![0.0; n],
        upper: vec![1.0; n],
    }
}

fn sorted_interior(rng: &mut CounterRng, d: usize) -> Vec<f64> {
    loop {
        let mut pts: Vec<f64> = (0..d).map(|_| rng.uniform(0.1, 0.9)).collect();
        pts.sort_by(f64::total_cmp);
        if pts.windows(2).all(|w| w[1] - w[0] > 0.05) {
            let mut row = vec![0.0];
            row.extend(pts);
            row.push(1.0);
            return row;
        }
    }
}

// ---------------------------------------------------------------------------
// shared fixtures

const EVAL_SEED: u64 = 1000;
const TRAIN_SEED: u64 = 42;
/// Ascent budget for the 20-instance evaluation set.
const SP_EVALS_EVAL: usize = 60;
/// Reduced ascent budget for the 200 training labels; at this size the
/// ascent value is within ~1e-7 of the converged one at a third of the cost.
const SP_EVALS_LABEL: usize = 12;

fn eval20() -> &'static Vec<Qcqp> {
    static V: OnceLock<Vec<Qcqp>> = OnceLock::new();
    V.get_or_init(|| {
        instances::generate(&FamilySpec { family: Family::Bilinear, n: 10, count: 20, seed: EVAL_SEED })
            .unwrap()
            .into_iter()
            .map(|(q, _)| q)
            .collect()
    })
}

struct Batch20 {
    /// Best bound-certified objective seen per instance.
    vstar: Vec<f64>,
    gap1_default: Vec<f64>,
    gap1_sp: Vec<f64>,
}

fn solve_cfg(limit_s: u64) -> SolveConfig {
    SolveConfig { time_limit: Some(Duration::from_secs(limit_s)), ..Default::default() }
}

fn batch20() -> &'static Batch20 {
    static V: OnceLock<Batch20> = OnceLock::new();
    V.get_or_init(|| {
        let qs = eval20();
        let oa = OaConfig::default();
        let ascent = AscentConfig { max_subgradient_evals: SP_EVALS_EVAL, ..Default::default() };
        let mut vstar = Vec::new();
        let mut lbd1_default = Vec::new();
        let mut lbd1_sp = Vec::new();
        for q in qs {
            let out = driver::solve_global(q, &Policy::Default, &solve_cfg(600)).unwrap();
            let sp = policies::strong_partition(q, 2, &oa, &ascent).unwrap();
            let out_sp =
                driver::solve_global(q, &Policy::Provided { p1: sp.p.clone() }, &solve_cfg(600)).unwrap();
            vstar.push(out.ubd.min(out_sp.ubd));
            lbd1_default.push(out.lbd_iter1.unwrap());
            lbd1_sp.push(out_sp.lbd_iter1.unwrap());
        }
        let gap = |lbds: &[f64]| -> Vec<f64> {
            lbds.iter().zip(&vstar).map(|(&l, &v)| effective_gap(v, l)).collect()
        };
        Batch20 { gap1_default: gap(&lbd1_default), gap1_sp: gap(&lbd1_sp), vstar }
    })
}

/// (features, ascent-chosen matrix) for the 200-instance training set.
fn train200() -> &'static Vec<(FeatureVector, PartitionMatrix)> {
    static V: OnceLock<Vec<(FeatureVector, PartitionMatrix)>> = OnceLock::new();
    V.get_or_init(|| {
        let batch =
            instances::generate(&FamilySpec { family: Family::Bilinear, n: 10, count: 200, seed: TRAIN_SEED })
                .unwrap();
        let oa = OaConfig::default();
        let ascent = AscentConfig { max_subgradient_evals: SP_EVALS_LABEL, ..Default::default() };
        batch
            .iter()
            .map(|(q, meta)| {
                let f = ml::extract_features(q, meta).unwrap();
                let sp = policies::strong_partition(q, 2, &oa, &ascent).unwrap();
                (f, sp.p)
            })
            .collect()
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 { s[k / 2] } else { 0.5 * (s[k / 2 - 1] + s[k / 2]) }
}

// ---------------------------------------------------------------------------
// criteria

#[test]
fn c01_example_value_curve_matches_closed_form() {
    let t0 = Instant::now();
    let q = example1();
    let oa = OaConfig::default();
    let mut worst = 0.0f64;
    for j in 0..=20 {
        let p = 0.05 * j as f64;
        let pm = PartitionMatrix { d: 1, rows: vec![vec![0.0, p, 1.0]] };
        let (v, _) = sensitivity::value(&q, &pm, &oa).unwrap();
        let closed = if p <= 0.4 { (0.16 + p) / (1.0 + p) } else { 0.16 / p };
        worst = worst.max((v - closed).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && secs < 5.0,
        "c01 value curve",
        format!("max |v - closed form| = {worst:.3e} over 21 points in {secs:.2}s"),
    );
}

#[test]
fn c02_offline_search_closes_example() {
    let q = example1();
    let sp = policies::strong_partition(&q, 1, &OaConfig::default(), &AscentConfig::default()).unwrap();
    let pstar = sp.p.rows[0][1];
    let out = driver::solve_global(
        &q,
        &Policy::StrongPartition { d: 1, ascent: AscentConfig::default() },
        &solve_cfg(60),
    )
    .unwrap();
    check(
        (pstar - 0.4).abs() <= 1e-3 && out.status == SolveStatus::Optimal && out.iterations == 1,
        "c02 search closes example",
        format!("p* = {pstar:.6}, iterations = {}", out.iterations),
    );
}

/// Like `random_tiny` but with strongly convex separable terms pulling the
/// optimum into cell interiors, where the fixed-assignment LP is
/// generically nondegenerate.
fn random_interior(rng: &mut CounterRng, n: usize) -> Qcqp {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j));
        }
    }
    let quads: Vec<usize> = (0..n).collect();
    let mut trips = Vec::new();
    for &(i, j) in &pairs {
        trips.push((i, j, rng.uniform(-0.3, 0.3)));
    }
    for &k in &quads {
        trips.push((k, k, rng.uniform(0.8, 1.5)));
    }
    let obj = QuadFunc {
        q: SparseSym::from_triplets(&trips),
        r: (0..n).map(|_| rng.uniform(-1.6, -0.4)).collect(),
        constant: 0.0,
    };
    Qcqp {
        n,
        objective: obj,
        constraints: vec![],
        bilinear_pairs: pairs,
        quadratic_indices: quads,
        lower: vec![0.0; n],
        upper: vec![1.0; n],
    }
}

#[test]
fn c03_gradient_matches_finite_differences() {
    let mut rng = CounterRng::new(3, &[0xacc]);
    let oa = OaConfig::default();
    let mut accepted = 0;
    let mut worst_ratio = 0.0f64;
    let mut attempts = 0;
    while accepted < 20 && attempts < 400 {
        attempts += 1;
        let q = random_interior(&mut rng, 2);
        let ncn = q.nc_vars().len();
        let rows: Vec<Vec<f64>> = (0..ncn).map(|_| sorted_interior(&mut rng, 2)).collect();
        let p = PartitionMatrix { d: 2, rows };
        let r = sensitivity::generalized_gradient(&q, &p, &oa).unwrap();
        if !r.unique_y || r.degenerate {
            continue;
        }
        let fd = sensitivity::finite_difference_gradient(&q, &p, &oa, 1e-4).unwrap();
        let gmax = r
            .subgradient
            .iter()
            .flatten()
            .fold(0.0f64, |a, &g| a.max(g.abs()));
        let err = r
            .subgradient
            .iter()
            .flatten()
            .zip(fd.iter().flatten())
            .fold(0.0f64, |a, (&g, &f)| a.max((g - f).abs()));
        let tol = 1e-5f64.max(1e-3 * gmax);
        worst_ratio = worst_ratio.max(err / tol);
        accepted += 1;
    }
    check(
        accepted == 20 && worst_ratio <= 1.0,
        "c03 gradient fidelity",
        format!("{accepted} nondegenerate samples in {attempts} draws, worst err/tol = {worst_ratio:.3}"),
    );
}

#[test]
fn c04_branch_and_bound_matches_enumeration() {
    let mut rng = CounterRng::new(4, &[0xacc]);
    let oa = OaConfig::default();
    let mut worst = 0.0f64;
    for trial in 0..30 {
        let n = 2 + trial % 2;
        let q = random_tiny(&mut rng, n);
        let ncn = q.nc_vars().len();
        let rows: Vec<Vec<f64>> = (0..ncn).map(|_| sorted_interior(&mut rng, 2)).collect();
        let m = relax::build_pmr_oa(&q, &PartitionMatrix { d: 2, rows }, &oa).unwrap();
        let bb = milp::solve_milp(&m.milp, 1e-9, 1e-12).unwrap();
        let en = milp::enumerate_solve(&m.milp).unwrap();
        worst = worst.max((bb.objective - en.objective).abs());
    }
    check(worst <= 1e-8, "c04 relaxation oracle equivalence", format!("max |bb - enum| = {worst:.3e} over 30 models"));
}

#[test]
fn c05_bound_sandwich_and_refinement_monotonicity() {
    let mut rng = CounterRng::new(5, &[0xacc]);
    let oa = OaConfig::default();
    let solve = |m: &qpart::relax::PmrModel| -> f64 {
        let s = milp::solve_milp(&m.milp, 1e-8, 1e-11).unwrap();
        m.objective_value(&s)
    };
    let mut worst_drop = 0.0f64;
    for trial in 0..50 {
        let n = 2 + trial % 2;
        let q = random_tiny(&mut rng, n);
        let ncn = q.nc_vars().len();
        let rows: Vec<Vec<f64>> = (0..ncn).map(|_| sorted_interior(&mut rng, 2)).collect();
        let p = PartitionMatrix { d: 2, rows: rows.clone() };

        let mc = solve(&relax::build_mccormick(&q, &oa).unwrap());
        let under_v = solve(&relax::build_pmr_oa(&q, &p, &oa).unwrap());
        let mut pmr = relax::build_pmr(&q, &p).unwrap();
        let ps = relax::solve_pmr(&mut pmr, 1e-8, 1e-11).unwrap();
        let pmr_val = pmr.objective_value(&ps);
        let grid = model::brute_force_optimum(&q, 41).unwrap();

        assert!(mc <= under_v + 1e-7, "trial {trial}: mccormick {mc} > oa {under_v}");
        assert!(under_v <= pmr_val + 1e-7, "trial {trial}: oa {under_v} > pmr {pmr_val}");
        assert!(
            pmr_val <= grid.value + grid.resolution_error + 1e-7,
            "trial {trial}: pmr {pmr_val} > grid {} + {}",
            grid.value,
            grid.resolution_error
        );

        // insert the midpoint of a random cell in every row
        let rows2: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let c = rng.next_u64() as usize % (r.len() - 1);
                let mut r2 = r.clone();
                r2.insert(c + 1, 0.5 * (r[c] + r[c + 1]));
                r2
            })
            .collect();
        let p2 = PartitionMatrix { d: 3, rows: rows2 };
        let refined = solve(&relax::build_pmr_oa(&q, &p2, &oa).unwrap());
        worst_drop = worst_drop.max(under_v - refined);
    }
    check(
        worst_drop <= 1e-9,
        "c05 bound sandwich",
        format!("sandwich held on 50 instances; worst refinement drop = {worst_drop:.3e}"),
    );
}

#[test]
fn c06_default_policy_solves_batch() {
    let batch =
        instances::generate(&FamilySpec { family: Family::Bilinear, n: 10, count: 50, seed: 7 }).unwrap();
    let mut solved = 0;
    let mut slowest = 0.0f64;
    for (q, _) in &batch {
        let out = driver::solve_global(q, &Policy::Default, &solve_cfg(120)).unwrap();
        if out.status == SolveStatus::Optimal && out.time_s <= 120.0 {
            solved += 1;
        }
        slowest = slowest.max(out.time_s);
    }
    check(
        solved * 10 >= batch.len() * 9,
        "c06 end-to-end convergence",
        format!("{solved}/{} solved within 120s (slowest {slowest:.1}s)", batch.len()),
    );
}

#[test]
fn c07_search_gap_closure_first_iteration() {
    let b = batch20();
    let closed = b.gap1_sp.iter().filter(|&&g| g <= 1e-4 + 1e-12).count();
    check(
        closed * 10 >= b.gap1_sp.len() * 8,
        "c07 first-iteration gap closure",
        format!("{closed}/{} instances at the 1e-4 gap floor after iteration 1", b.gap1_sp.len()),
    );
}

#[test]
fn c08_policy_first_iteration_ordering() {
    let b = batch20();
    let data = train200();
    let model = ml::fit_policy(data, &MlConfig::default()).unwrap();
    let qs = eval20();
    let metas =
        instances::generate(&FamilySpec { family: Family::Bilinear, n: 10, count: 20, seed: EVAL_SEED })
            .unwrap();
    let mut gap1_ml = Vec::new();
    for (i, q) in qs.iter().enumerate() {
        let f = ml::extract_features(q, &metas[i].1).unwrap();
        let p1 = model.predict(&f);
        let out = driver::solve_global(q, &Policy::Provided { p1 }, &solve_cfg(600)).unwrap();
        gap1_ml.push(effective_gap(b.vstar[i], out.lbd_iter1.unwrap()));
    }
    let (m_sp, m_ml, m_def) = (median(&b.gap1_sp), median(&gap1_ml), median(&b.gap1_default));
    check(
        m_sp <= m_ml && m_ml <= m_def,
        "c08 policy ordering",
        format!("median iteration-1 gaps: search {m_sp:.3e} <= learned {m_ml:.3e} <= default {m_def:.3e}"),
    );
}

#[test]
fn c09_imitation_out_of_sample_error() {
    let data = train200();
    let out = ml::kfold_policy(data, &MlConfig::default()).unwrap();
    let good = out.maes.iter().filter(|m| m.scaled_mae < 0.2).count();
    let total = out.maes.len();
    let worst = out.maes.iter().map(|m| m.scaled_mae).fold(0.0f64, f64::max);
    check(
        good * 10 >= total * 8,
        "c09 imitation quality",
        format!("{good}/{total} partition points with scaled MAE < 0.2 (worst {worst:.3})"),
    );
}

#[test]
fn c10_metric_unit_values() {
    let a = shifted_geometric_mean(&[0.0]).unwrap();
    let b = shifted_geometric_mean(&[90.0, 90.0]).unwrap();
    let e = effective_gap(1.0, 1.0);
    let t = tle_gap(1.0, 0.9);
    check(
        a.abs() <= 1e-12
            && (b - 90.0).abs() <= 1e-9
            && e == 1e-4
            && (t - 0.0999999).abs() <= 1e-9,
        "c10 metric units",
        format!("sgm([0]) = {a:.1e}, sgm([90,90]) = {b}, eff = {e}, tle = {t:.7}"),
    );
}

#[test]
fn c11_reruns_are_byte_identical() {
    let bin = env!("CARGO_BIN_EXE_qpart");
    let base = std::env::temp_dir().join(format!("qpart_accept_{}", std::process::id()));
    let run = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let dir = base.join(tag);
        std::fs::create_dir_all(&dir).unwrap();
        let st = Command::new(bin)
            .args(["generate", "--family", "bilinear", "--n", "10", "--count", "2", "--seed", "5"])
            .arg("--out")
            .arg(&dir)
            .status()
            .unwrap();
        assert!(st.success());
        let inst = dir.join("bilinear_10/inst_000.json");
        let csv = dir.join("run.csv");
        let st = Command::new(bin)
            .args(["solve", "--policy", "default"])
            .arg("--instance")
            .arg(&inst)
            .arg("--csv")
            .arg(&csv)
            .status()
            .unwrap();
        assert!(st.success());
        let spp = dir.join("sp.json");
        let st = Command::new(bin)
            .args(["sp", "--points", "2", "--evals", "3"])
            .arg("--instance")
            .arg(&inst)
            .arg("--out")
            .arg(&spp)
            .status()
            .unwrap();
        assert!(st.success());
        let mut bytes = std::fs::read(&inst).unwrap();
        bytes.extend(std::fs::read(&spp).unwrap());
        (bytes, std::fs::read(&csv).unwrap())
    };
    let (i1, c1) = run("a");
    let (i2, c2) = run("b");
    // the CSV carries wall-clock columns; compare every other field
    let strip = |b: &[u8]| -> String {
        String::from_utf8_lossy(b)
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() > 3 {
                    let mut f = f.clone();
                    f[3] = "-";
                    f.join(",")
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let ok = i1 == i2 && strip(&c1) == strip(&c2);
    std::fs::remove_dir_all(&base).ok();
    check(ok, "c11 determinism", format!("instance bytes equal: {}, csv rows equal up to timing: {}", i1 == i2, strip(&c1) == strip(&c2)));
}

#[test]
fn c12_pooling_smoke_default_policy() {
    let batch =
        instances::generate(&FamilySpec { family: Family::Pooling, n: 10, count: 1, seed: 11 }).unwrap();
    let q = &batch[0].0;
    let q = if q.is_unit_box() {
        q.clone()
    } else {
        model::normalize_to_unit_box(q).unwrap().0
    };
    let out = driver::solve_global(&q, &Policy::Default, &solve_cfg(600)).unwrap();
    check(
        out.status == SolveStatus::Optimal && out.time_s < 600.0,
        "c12 pooling smoke",
        format!("status {:?} in {:.1}s, {} iterations", out.status, out.time_s, out.iterations),
    );
}
