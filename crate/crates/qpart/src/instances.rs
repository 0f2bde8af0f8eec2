//! Deterministic instance generators for three QCQP families: random
//! bilinear programs, random QCQPs with added univariate quadratic terms,
//! and a desk-scale pooling composite. Within a family only the parameter
//! vector θ varies across instances; the structural data is shared.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Constraint, Family, InstanceMeta, Qcqp, QuadFunc, Sense, SparseSym};
use crate::rng::CounterRng;

const STREAM_BASE: u64 = 0xba5e;
const STREAM_THETA: u64 = 0x7e7a;
const STREAM_NET: u64 = 0x0e7;

fn family_tag(f: Family) -> u64 {
    match f {
        Family::Bilinear => 1,
        Family::Qcqp => 2,
        Family::Pooling => 3,
    }
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Bilinear => "bilinear",
        Family::Qcqp => "qcqp",
        Family::Pooling => "pooling",
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub n: usize,
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("unsupported size n = {0} for family {1}")]
    BadSize(usize, String),
    #[error("could not build a connected pooling network after {0} attempts")]
    DisconnectedNetwork(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Instance {
    pub qcqp: Qcqp,
    pub meta: InstanceMeta,
}

// ---------------------------------------------------------------------------
// random bilinear / qcqp families

/// Coefficient block for one quadratic function: sparse matrix positions
/// with a nominal value and three perturbation directions, plus the same for
/// the linear part.
struct ParamBlock {
    pos: Vec<(usize, usize)>,
    base: Vec<f64>,
    tilde: [Vec<f64>; 3],
    r_base: Vec<f64>,
    r_tilde: [Vec<f64>; 3],
}

impl ParamBlock {
    fn scale(&mut self, s: f64) {
        for v in &mut self.base {
            *v *= s;
        }
        for t in &mut self.tilde {
            for v in t {
                *v *= s;
            }
        }
        for v in &mut self.r_base {
            *v *= s;
        }
        for t in &mut self.r_tilde {
            for v in t {
                *v *= s;
            }
        }
    }

    fn at(&self, theta3: &[f64]) -> QuadFunc {
        let triplets: Vec<(usize, usize, f64)> = self
            .pos
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| {
                let mut v = self.base[e];
                for l in 0..3 {
                    v += theta3[l] * self.tilde[l][e];
                }
                (i, j, v)
            })
            .collect();
        let r = (0..self.r_base.len())
            .map(|i| {
                let mut v = self.r_base[i];
                for l in 0..3 {
                    v += theta3[l] * self.r_tilde[l][i];
                }
                v
            })
            .collect();
        QuadFunc { q: SparseSym::from_triplets(&triplets), r, constant: 0.0 }
    }
}

struct FixedBlock {
    triplets: Vec<(usize, usize, f64)>,
    r: Vec<f64>,
}

struct RandomBase {
    pairs: Vec<(usize, usize)>,
    quads: Vec<usize>,
    /// Objective (index 0) and the first 0.2·m_I inequality constraints.
    param: Vec<ParamBlock>,
    /// Remaining inequality constraints, identical across the family.
    fixed: Vec<FixedBlock>,
    /// Equality rows a'x = rhs (rescaled toward rhs = 1 when possible).
    eq: Vec<(Vec<f64>, f64)>,
    d_theta: usize,
}

fn draw_param_block(rng: &mut CounterRng, pos: &[(usize, usize)], n: usize) -> ParamBlock {
    let base: Vec<f64> = pos.iter().map(|_| rng.uniform(-0.5, 0.5)).collect();
    let tilde = std::array::from_fn(|_| {
        base.iter().map(|&v| rng.uniform(0.0, 0.5) * v).collect::<Vec<f64>>()
    });
    let r_base: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let r_tilde = std::array::from_fn(|_| {
        r_base.iter().map(|&v| rng.uniform(0.0, 0.5) * v).collect::<Vec<f64>>()
    });
    ParamBlock { pos: pos.to_vec(), base, tilde, r_base, r_tilde }
}

fn random_base(spec: &FamilySpec) -> RandomBase {
    let n = spec.n;
    let tag = family_tag(spec.family);
    let mut rng = CounterRng::new(spec.seed, &[tag, n as u64, STREAM_BASE]);

    // shared bilinear / quadratic term sets
    let mut all_pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    rng.shuffle(&mut all_pairs);
    let nb = (5 * n).min(n * (n - 1) / 2);
    let mut pairs: Vec<(usize, usize)> = all_pairs.into_iter().take(nb).collect();
    pairs.sort_unstable();
    let quads: Vec<usize> = if spec.family == Family::Qcqp {
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        let mut q: Vec<usize> = idx.into_iter().take(n / 4).collect();
        q.sort_unstable();
        q
    } else {
        Vec::new()
    };

    let mut pos: Vec<(usize, usize)> = pairs.clone();
    pos.extend(quads.iter().map(|&k| (k, k)));

    let m_i = n;
    let m_e = n / 5;
    let n_param = m_i / 5;
    let d_theta = 3 * (n_param + 1);

    let mut param: Vec<ParamBlock> =
        (0..=n_param).map(|_| draw_param_block(&mut rng, &pos, n)).collect();
    let mut fixed: Vec<FixedBlock> = (n_param + 1..=m_i)
        .map(|_| FixedBlock {
            triplets: pos.iter().map(|&(i, j)| (i, j, rng.uniform(-0.5, 0.5))).collect(),
            r: (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        })
        .collect();

    let a: Vec<Vec<f64>> =
        (0..m_e).map(|_| (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
    let d: Vec<f64> = (0..m_e).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let b: Vec<f64> = (0..m_i).map(|_| rng.uniform(0.0, 100.0)).collect();

    // rescale every constraint toward unit right-hand side; rows with a
    // near-zero rhs stay as drawn
    for (k, &bk) in b.iter().enumerate() {
        let s = 1.0 / bk;
        if k < n_param {
            param[k + 1].scale(s);
        } else {
            let f = &mut fixed[k - n_param];
            for t in &mut f.triplets {
                t.2 *= s;
            }
            for v in &mut f.r {
                *v *= s;
            }
        }
    }
    let eq = a
        .into_iter()
        .zip(d)
        .map(|(row, dj)| {
            if dj.abs() > 1e-9 {
                (row.iter().map(|&v| v / dj).collect(), 1.0)
            } else {
                (row, dj)
            }
        })
        .collect();

    RandomBase { pairs, quads, param, fixed, eq, d_theta }
}

fn random_instance(spec: &FamilySpec, base: &RandomBase, index: u64) -> (Qcqp, InstanceMeta) {
    let tag = family_tag(spec.family);
    let mut rng = CounterRng::new(spec.seed, &[tag, spec.n as u64, STREAM_THETA, index]);
    let theta: Vec<f64> = (0..base.d_theta).map(|_| rng.uniform(-1.0, 1.0)).collect();

    let objective = base.param[0].at(&theta[0..3]);
    let mut constraints: Vec<Constraint> = Vec::new();
    for (k, block) in base.param.iter().enumerate().skip(1) {
        constraints.push(Constraint {
            f: block.at(&theta[3 * k..3 * k + 3]),
            sense: Sense::Le,
            rhs: 1.0,
        });
    }
    for f in &base.fixed {
        constraints.push(Constraint {
            f: QuadFunc {
                q: SparseSym::from_triplets(&f.triplets),
                r: f.r.clone(),
                constant: 0.0,
            },
            sense: Sense::Le,
            rhs: 1.0,
        });
    }
    for (row, rhs) in &base.eq {
        constraints.push(Constraint {
            f: QuadFunc { q: SparseSym::default(), r: row.clone(), constant: 0.0 },
            sense: Sense::Eq,
            rhs: *rhs,
        });
    }

    let q = Qcqp {
        n: spec.n,
        objective,
        constraints,
        bilinear_pairs: base.pairs.clone(),
        quadratic_indices: base.quads.clone(),
        lower: vec![0.0; spec.n],
        upper: vec![1.0; spec.n],
    };
    let meta = InstanceMeta {
        family: spec.family,
        theta,
        seed: spec.seed,
        v_star: None,
        v_star_source: None,
        index,
    };
    (q, meta)
}

pub fn gen_bilinear(spec: &FamilySpec) -> Vec<(Qcqp, InstanceMeta)> {
    assert_eq!(spec.family, Family::Bilinear);
    let base = random_base(spec);
    (0..spec.count as u64).map(|i| random_instance(spec, &base, i)).collect()
}

pub fn gen_qcqp(spec: &FamilySpec) -> Vec<(Qcqp, InstanceMeta)> {
    assert_eq!(spec.family, Family::Qcqp);
    let base = random_base(spec);
    (0..spec.count as u64).map(|i| random_instance(spec, &base, i)).collect()
}

// ---------------------------------------------------------------------------
// pooling

#[derive(Debug, Clone)]
pub struct PoolingNetwork {
    pub n_inputs: usize,
    pub n_pools: usize,
    pub n_outputs: usize,
    pub input_cost: Vec<f64>,
    pub input_quality: Vec<f64>,
    pub input_cap: Vec<f64>,
    pub pool_cap: Vec<f64>,
    pub output_cap: Vec<f64>,
    pub output_price: Vec<f64>,
    /// Quality window per output as fractions of the reachable-input range.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub ip_arcs: Vec<(usize, usize)>,
    pub po_arcs: Vec<(usize, usize)>,
    pub io_arcs: Vec<(usize, usize)>,
}

/// Inputs with a path to each output, directly or through a pool.
fn reachable_inputs(net: &PoolingNetwork) -> Vec<Vec<usize>> {
    let mut reach = vec![Vec::new(); net.n_outputs];
    for o in 0..net.n_outputs {
        let mut seen = vec![false; net.n_inputs];
        for &(i, oo) in &net.io_arcs {
            if oo == o {
                seen[i] = true;
            }
        }
        for &(p, oo) in &net.po_arcs {
            if oo == o {
                for &(i, pp) in &net.ip_arcs {
                    if pp == p {
                        seen[i] = true;
                    }
                }
            }
        }
        reach[o] = (0..net.n_inputs).filter(|&i| seen[i]).collect();
    }
    reach
}

/// Composite of `blocks` perturbed three-input blending blocks plus
/// `extra_edges` random arcs, rescaled to O(1) capacities and costs.
pub fn pooling_network(
    seed: u64,
    blocks: usize,
    extra_edges: usize,
) -> Result<PoolingNetwork, GenError> {
    const ATTEMPTS: usize = 10;
    for attempt in 0..ATTEMPTS {
        let mut rng = CounterRng::new(seed, &[family_tag(Family::Pooling), STREAM_NET, attempt as u64]);
        let mut net = PoolingNetwork {
            n_inputs: 3 * blocks,
            n_pools: blocks,
            n_outputs: 2 * blocks,
            input_cost: Vec::new(),
            input_quality: Vec::new(),
            input_cap: Vec::new(),
            pool_cap: Vec::new(),
            output_cap: Vec::new(),
            output_price: Vec::new(),
            alpha: Vec::new(),
            beta: Vec::new(),
            ip_arcs: Vec::new(),
            po_arcs: Vec::new(),
            io_arcs: Vec::new(),
        };
        for b in 0..blocks {
            let jig = |rng: &mut CounterRng| rng.uniform(0.9, 1.1);
            // two pooled inputs + one direct input per block
            net.input_cost.push(6.0 * jig(&mut rng));
            net.input_cost.push(16.0 * jig(&mut rng));
            net.input_cost.push(10.0 * jig(&mut rng));
            net.input_quality.push(3.0 * jig(&mut rng));
            net.input_quality.push(1.0 * jig(&mut rng));
            net.input_quality.push(2.0 * jig(&mut rng));
            for _ in 0..3 {
                net.input_cap.push(300.0 * jig(&mut rng));
            }
            net.pool_cap.push(300.0 * jig(&mut rng));
            net.output_cap.push(100.0 * jig(&mut rng));
            net.output_cap.push(200.0 * jig(&mut rng));
            net.output_price.push(9.0 * jig(&mut rng));
            net.output_price.push(15.0 * jig(&mut rng));
            net.ip_arcs.push((3 * b, b));
            net.ip_arcs.push((3 * b + 1, b));
            net.po_arcs.push((b, 2 * b));
            net.po_arcs.push((b, 2 * b + 1));
            net.io_arcs.push((3 * b + 2, 2 * b));
            net.io_arcs.push((3 * b + 2, 2 * b + 1));
        }
        for _ in 0..extra_edges {
            match rng.below(3) {
                0 => {
                    let e = (rng.below(net.n_inputs), rng.below(net.n_pools));
                    if !net.ip_arcs.contains(&e) {
                        net.ip_arcs.push(e);
                    }
                }
                1 => {
                    let e = (rng.below(net.n_pools), rng.below(net.n_outputs));
                    if !net.po_arcs.contains(&e) {
                        net.po_arcs.push(e);
                    }
                }
                _ => {
                    let e = (rng.below(net.n_inputs), rng.below(net.n_outputs));
                    if !net.io_arcs.contains(&e) {
                        net.io_arcs.push(e);
                    }
                }
            }
        }
        net.ip_arcs.sort_unstable();
        net.po_arcs.sort_unstable();
        net.io_arcs.sort_unstable();
        if reachable_inputs(&net).iter().any(|r| r.is_empty()) {
            continue;
        }
        net.alpha = (0..net.n_outputs).map(|_| rng.uniform(0.2, 0.4)).collect();
        net.beta = (0..net.n_outputs).map(|_| rng.uniform(0.6, 0.8)).collect();

        // rescale capacities and prices to O(1)
        let cap_scale = net
            .input_cap
            .iter()
            .chain(&net.pool_cap)
            .chain(&net.output_cap)
            .fold(0.0f64, |a, &c| a.max(c));
        for c in net
            .input_cap
            .iter_mut()
            .chain(&mut net.pool_cap)
            .chain(&mut net.output_cap)
        {
            *c /= cap_scale;
        }
        let cost_scale = net
            .input_cost
            .iter()
            .chain(&net.output_price)
            .fold(0.0f64, |a, &c| a.max(c.abs()));
        for c in net.input_cost.iter_mut().chain(&mut net.output_price) {
            *c /= cost_scale;
        }
        return Ok(net);
    }
    Err(GenError::DisconnectedNetwork(ATTEMPTS))
}

/// Builds the proportion-based formulation for one quality vector: variables
/// are pool feed proportions, pool-output flows, direct flows, and the
/// linearized proportion × flow products.
pub fn pooling_qcqp(net: &PoolingNetwork, quality: &[f64]) -> Qcqp {
    assert_eq!(quality.len(), net.n_inputs);
    let nq = net.ip_arcs.len();
    let ny = net.po_arcs.len();
    let nz = net.io_arcs.len();
    // product variables exist per (input-pool arc, pool-output arc) sharing
    // the pool
    let mut prod: Vec<(usize, usize)> = Vec::new(); // (ip index, po index)
    for (ai, &(_, p)) in net.ip_arcs.iter().enumerate() {
        for (ao, &(pp, _)) in net.po_arcs.iter().enumerate() {
            if pp == p {
                prod.push((ai, ao));
            }
        }
    }
    let q_of = |ai: usize| ai;
    let y_of = |ao: usize| nq + ao;
    let z_of = |az: usize| nq + ny + az;
    let v_of = |k: usize| nq + ny + nz + k;
    let n = nq + ny + nz + prod.len();

    let lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for ai in 0..nq {
        upper[q_of(ai)] = 1.0;
    }
    for (ao, &(p, o)) in net.po_arcs.iter().enumerate() {
        upper[y_of(ao)] = net.pool_cap[p].min(net.output_cap[o]);
    }
    for (az, &(i, o)) in net.io_arcs.iter().enumerate() {
        upper[z_of(az)] = net.input_cap[i].min(net.output_cap[o]);
    }
    for (k, &(_, ao)) in prod.iter().enumerate() {
        upper[v_of(k)] = upper[y_of(ao)];
    }

    // objective: input costs on flows minus output revenue
    let mut r_obj = vec![0.0; n];
    for (k, &(ai, _)) in prod.iter().enumerate() {
        let (i, _) = net.ip_arcs[ai];
        r_obj[v_of(k)] += net.input_cost[i];
    }
    for (az, &(i, o)) in net.io_arcs.iter().enumerate() {
        r_obj[z_of(az)] += net.input_cost[i] - net.output_price[o];
    }
    for (ao, &(_, o)) in net.po_arcs.iter().enumerate() {
        r_obj[y_of(ao)] -= net.output_price[o];
    }

    let mut constraints = Vec::new();
    let lin = |r: Vec<f64>, sense: Sense, rhs: f64| Constraint {
        f: QuadFunc { q: SparseSym::default(), r, constant: 0.0 },
        sense,
        rhs,
    };

    // proportions at each pool sum to one
    for p in 0..net.n_pools {
        let mut r = vec![0.0; n];
        for (ai, &(_, pp)) in net.ip_arcs.iter().enumerate() {
            if pp == p {
                r[q_of(ai)] = 1.0;
            }
        }
        constraints.push(lin(r, Sense::Eq, 1.0));
    }
    // products on each pool-output arc sum to its flow
    for ao in 0..ny {
        let mut r = vec![0.0; n];
        for (k, &(_, aoo)) in prod.iter().enumerate() {
            if aoo == ao {
                r[v_of(k)] = 1.0;
            }
        }
        r[y_of(ao)] = -1.0;
        constraints.push(lin(r, Sense::Eq, 0.0));
    }
    // product definitions (the bilinear rows)
    let mut pairs = Vec::new();
    for (k, &(ai, ao)) in prod.iter().enumerate() {
        let mut r = vec![0.0; n];
        r[v_of(k)] = -1.0;
        let (a, b) = (q_of(ai), y_of(ao));
        pairs.push((a, b));
        constraints.push(Constraint {
            f: QuadFunc {
                q: SparseSym::from_triplets(&[(a, b, 0.5)]),
                r,
                constant: 0.0,
            },
            sense: Sense::Eq,
            rhs: 0.0,
        });
    }
    // capacities
    for i in 0..net.n_inputs {
        let mut r = vec![0.0; n];
        for (k, &(ai, _)) in prod.iter().enumerate() {
            if net.ip_arcs[ai].0 == i {
                r[v_of(k)] = 1.0;
            }
        }
        for (az, &(ii, _)) in net.io_arcs.iter().enumerate() {
            if ii == i {
                r[z_of(az)] = 1.0;
            }
        }
        constraints.push(lin(r, Sense::Le, net.input_cap[i]));
    }
    for p in 0..net.n_pools {
        let mut r = vec![0.0; n];
        for (ao, &(pp, _)) in net.po_arcs.iter().enumerate() {
            if pp == p {
                r[y_of(ao)] = 1.0;
            }
        }
        constraints.push(lin(r, Sense::Le, net.pool_cap[p]));
    }
    for o in 0..net.n_outputs {
        let mut r = vec![0.0; n];
        for (ao, &(_, oo)) in net.po_arcs.iter().enumerate() {
            if oo == o {
                r[y_of(ao)] = 1.0;
            }
        }
        for (az, &(_, oo)) in net.io_arcs.iter().enumerate() {
            if oo == o {
                r[z_of(az)] = 1.0;
            }
        }
        constraints.push(lin(r, Sense::Le, net.output_cap[o]));
    }
    // quality windows interpolated over the reachable-input range
    let reach = reachable_inputs(net);
    for o in 0..net.n_outputs {
        let (cmin, cmax) = reach[o].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(quality[i]), hi.max(quality[i]))
        });
        let lam_l = cmin + net.alpha[o] * (cmax - cmin);
        let lam_u = cmin + net.beta[o] * (cmax - cmin);
        for (lam, sign) in [(lam_u, 1.0), (lam_l, -1.0)] {
            let mut r = vec![0.0; n];
            for (k, &(ai, ao)) in prod.iter().enumerate() {
                if net.po_arcs[ao].1 == o {
                    r[v_of(k)] = sign * (quality[net.ip_arcs[ai].0] - lam);
                }
            }
            for (az, &(i, oo)) in net.io_arcs.iter().enumerate() {
                if oo == o {
                    r[z_of(az)] = sign * (quality[i] - lam);
                }
            }
            constraints.push(lin(r, Sense::Le, 0.0));
        }
    }

    pairs.sort_unstable();
    Qcqp {
        n,
        objective: QuadFunc { q: SparseSym::default(), r: r_obj, constant: 0.0 },
        constraints,
        bilinear_pairs: pairs,
        quadratic_indices: Vec::new(),
        lower,
        upper,
    }
}

pub const POOLING_BLOCKS: usize = 3;
pub const POOLING_EXTRA_EDGES: usize = 10;

pub fn gen_pooling(spec: &FamilySpec) -> Result<Vec<(Qcqp, InstanceMeta)>, GenError> {
    assert_eq!(spec.family, Family::Pooling);
    let net = pooling_network(spec.seed, POOLING_BLOCKS, POOLING_EXTRA_EDGES)?;
    let mut out = Vec::with_capacity(spec.count);
    for index in 0..spec.count as u64 {
        let mut rng =
            CounterRng::new(spec.seed, &[family_tag(Family::Pooling), STREAM_THETA, index]);
        // the per-instance parameter is the input quality vector, each
        // coordinate perturbed by up to 20%
        let theta: Vec<f64> = net
            .input_quality
            .iter()
            .map(|&c| c * (1.0 + 0.2 * rng.uniform(-1.0, 1.0)))
            .collect();
        let q = pooling_qcqp(&net, &theta);
        out.push((
            q,
            InstanceMeta {
                family: Family::Pooling,
                theta,
                seed: spec.seed,
                v_star: None,
                v_star_source: None,
                index,
            },
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// batch generation and IO

pub fn generate(spec: &FamilySpec) -> Result<Vec<(Qcqp, InstanceMeta)>, GenError> {
    match spec.family {
        Family::Bilinear => Ok(gen_bilinear(spec)),
        Family::Qcqp => Ok(gen_qcqp(spec)),
        Family::Pooling => gen_pooling(spec),
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: FamilySpec,
    pub d_theta: usize,
    pub base_hash: String,
    pub files: Vec<String>,
}

pub fn family_dir(out: &Path, spec: &FamilySpec) -> PathBuf {
    out.join(format!("{}_{}", family_name(spec.family), spec.n))
}

/// Writes `inst_%03d.json` files plus a `manifest.json` into
/// `out/{family}_{n}/`. Returns the written instance paths.
pub fn write_batch(out: &Path, spec: &FamilySpec) -> Result<Vec<PathBuf>, GenError> {
    let dir = family_dir(out, spec);
    fs::create_dir_all(&dir)?;
    let batch = generate(spec)?;
    let d_theta = batch.first().map_or(0, |(_, m)| m.theta.len());
    let mut files = Vec::new();
    let mut paths = Vec::new();
    let mut hash: u64 = 0;
    for (qcqp, meta) in batch {
        let name = format!("inst_{:03}.json", meta.index);
        let path = dir.join(&name);
        let body = serde_json::to_string(&Instance { qcqp, meta })?;
        hash ^= fnv1a(body.as_bytes());
        let mut f = fs::File::create(&path)?;
        f.write_all(body.as_bytes())?;
        f.write_all(b"\n")?;
        files.push(name);
        paths.push(path);
    }
    let manifest = Manifest { spec: *spec, d_theta, base_hash: format!("{hash:016x}"), files };
    let mut f = fs::File::create(dir.join("manifest.json"))?;
    f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(paths)
}

pub fn load_instance(path: &Path) -> Result<Instance, GenError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
