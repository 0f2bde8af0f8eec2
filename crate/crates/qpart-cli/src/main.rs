//! Command-line surface: instance generation, single solves, offline
//! partition-point search, imitation training, batch benchmarking, and
//! report summaries. All commands are deterministic under a fixed config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qpart::driver::{self, MetricsRecord, Policy, SolveConfig, SolveStatus};
use qpart::instances::{self, FamilySpec, Instance};
use qpart::ml::{self, MlConfig};
use qpart::model::Family;
use qpart::nsmax::AscentConfig;
use qpart::relax::PartitionMatrix;

#[derive(Parser)]
#[command(name = "qpart", version, about = "Global QCQP solver experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Bilinear,
    Qcqp,
    Pooling,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::Bilinear => Family::Bilinear,
            FamilyArg::Qcqp => Family::Qcqp,
            FamilyArg::Pooling => Family::Pooling,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Default,
    Sp,
    Ml,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an instance family into a directory.
    Generate {
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one instance and emit a metrics CSV row.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "default")]
        policy: PolicyArg,
        /// Interior partition points per variable for the sp/ml policies.
        #[arg(long, default_value_t = 2)]
        points: usize,
        /// Learned first-iteration partition matrix (ml policy).
        #[arg(long)]
        p1: Option<PathBuf>,
        #[arg(long, default_value_t = 7200.0)]
        time_limit: f64,
        #[arg(long, default_value_t = 1e-4)]
        eps_rel: f64,
        /// Append the row to this CSV instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the offline partition-point search and save its matrix.
    Sp {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 2)]
        points: usize,
        /// Budget on relaxation solves during the ascent.
        #[arg(long, default_value_t = 500)]
        evals: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// K-fold imitation training over a generated directory with saved
    /// search matrices; writes out-of-sample predictions.
    TrainMl {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 1000)]
        n_weak: usize,
        #[arg(long, default_value_t = 25)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve every instance in a directory under one or more policies.
    Bench {
        #[arg(long)]
        dir: PathBuf,
        /// Comma-separated subset of default,sp,ml.
        #[arg(long, default_value = "default")]
        policies: String,
        #[arg(long, default_value_t = 2)]
        points: usize,
        #[arg(long, default_value_t = 7200.0)]
        time_limit: f64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Summarize a metrics CSV.
    Report {
        #[arg(long)]
        csv: PathBuf,
    },
}

#[derive(Serialize)]
struct ErrorJson {
    kind: &'static str,
    error: String,
}

fn fail(kind: &'static str, error: String, code: u8) -> ExitCode {
    eprintln!(
        "{}",
        serde_json::to_string(&ErrorJson { kind, error }).unwrap_or_default()
    );
    ExitCode::from(code)
}

fn solve_config(time_limit: f64, eps_rel: f64) -> SolveConfig {
    SolveConfig {
        eps_rel,
        time_limit: Some(Duration::from_secs_f64(time_limit)),
        ..SolveConfig::default()
    }
}

fn build_policy(
    policy: PolicyArg,
    points: usize,
    p1: &Option<PathBuf>,
) -> Result<Policy, String> {
    match policy {
        PolicyArg::Default => Ok(Policy::Default),
        PolicyArg::Sp => Ok(Policy::StrongPartition { d: points, ascent: AscentConfig::default() }),
        PolicyArg::Ml => {
            let path = p1.as_ref().ok_or("ml policy requires --p1")?;
            let body = fs::read_to_string(path).map_err(|e| e.to_string())?;
            let p1: PartitionMatrix = serde_json::from_str(&body).map_err(|e| e.to_string())?;
            Ok(Policy::Provided { p1 })
        }
    }
}

fn instance_id(path: &Path) -> String {
    let file = path.file_stem().and_then(|s| s.to_str()).unwrap_or("instance");
    match path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
        Some(dir) => format!("{dir}/{file}"),
        None => file.to_string(),
    }
}

fn run_solve(
    path: &Path,
    policy: &Policy,
    cfg: &SolveConfig,
) -> Result<MetricsRecord, String> {
    let inst = instances::load_instance(path).map_err(|e| e.to_string())?;
    let out = driver::solve_global(&inst.qcqp, policy, cfg).map_err(|e| e.to_string())?;
    Ok(MetricsRecord::from_outcome(
        &out,
        &instance_id(path),
        policy.name(),
        inst.meta.v_star,
    ))
}

fn append_csv(path: &Path, rows: &[String]) -> std::io::Result<()> {
    let mut body = String::new();
    if !path.exists() {
        body.push_str(MetricsRecord::CSV_HEADER);
        body.push('\n');
    }
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    use std::io::Write;
    fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?
        .write_all(body.as_bytes())
}

fn status_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Infeasible => 3,
        SolveStatus::TimeLimit => 4,
        _ => 0,
    }
}

fn instance_paths(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|s| s.to_str())
                .is_some_and(|s| s.starts_with("inst_") && s.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format!("no inst_*.json files in {}", dir.display()));
    }
    Ok(paths)
}

fn cmd_generate(family: Family, n: usize, count: usize, seed: u64, out: &Path) -> ExitCode {
    let spec = FamilySpec { family, n, count, seed };
    match instances::write_batch(out, &spec) {
        Ok(paths) => {
            println!("wrote {} instances under {}", paths.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail("config", e.to_string(), 2),
    }
}

fn cmd_sp(path: &Path, points: usize, evals: usize, out: &Path) -> ExitCode {
    let inst = match instances::load_instance(path) {
        Ok(i) => i,
        Err(e) => return fail("config", e.to_string(), 2),
    };
    let q = if inst.qcqp.is_unit_box() {
        inst.qcqp.clone()
    } else {
        match qpart::model::normalize_to_unit_box(&inst.qcqp) {
            Ok((u, _)) => u,
            Err(e) => return fail("config", e.to_string(), 2),
        }
    };
    match qpart::policies::strong_partition(
        &q,
        points,
        &qpart::relax::OaConfig::default(),
        &AscentConfig { max_subgradient_evals: evals, ..Default::default() },
    ) {
        Ok(sp) => {
            #[derive(Serialize)]
            struct Sidecar {
                value: f64,
                evals: usize,
                wall_s: f64,
                points: usize,
            }
            if let Err(e) = fs::write(
                out,
                serde_json::to_string(&sp.p).unwrap() + "\n",
            ) {
                return fail("config", e.to_string(), 2);
            }
            let side = out.with_extension("meta.json");
            let meta = Sidecar { value: sp.value, evals: sp.evals, wall_s: sp.wall_s, points };
            if let Err(e) = fs::write(&side, serde_json::to_string_pretty(&meta).unwrap() + "\n") {
                return fail("config", e.to_string(), 2);
            }
            println!("value {:.10} -> {}", sp.value, out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail("infeasible", e.to_string(), 3),
    }
}

fn cmd_train_ml(dir: &Path, cfg: &MlConfig) -> ExitCode {
    let paths = match instance_paths(dir) {
        Ok(p) => p,
        Err(e) => return fail("config", e, 2),
    };
    let mut dataset = Vec::new();
    let mut ids = Vec::new();
    for p in &paths {
        let inst: Instance = match instances::load_instance(p) {
            Ok(i) => i,
            Err(e) => return fail("config", e.to_string(), 2),
        };
        let sp_path = dir.join(
            p.file_name()
                .and_then(|s| s.to_str())
                .unwrap()
                .replace("inst_", "sp_"),
        );
        let target: PartitionMatrix = match fs::read_to_string(&sp_path)
            .map_err(|e| e.to_string())
            .and_then(|s| serde_json::from_str(&s).map_err(|e| e.to_string()))
        {
            Ok(t) => t,
            Err(e) => return fail("config", format!("{}: {e}", sp_path.display()), 2),
        };
        let features = match ml::extract_features(&inst.qcqp, &inst.meta) {
            Ok(f) => f,
            Err(e) => return fail("infeasible", e.to_string(), 3),
        };
        dataset.push((features, target));
        ids.push(
            p.file_name().and_then(|s| s.to_str()).unwrap().replace("inst_", "").replace(".json", ""),
        );
    }
    match ml::kfold_policy(&dataset, cfg) {
        Ok(out) => {
            for (id, pred) in ids.iter().zip(&out.predictions) {
                let path = dir.join(format!("pred_{id}.json"));
                if let Err(e) = fs::write(&path, serde_json::to_string(pred).unwrap() + "\n") {
                    return fail("config", e.to_string(), 2);
                }
            }
            let mut csv = String::from("var,point_index,scaled_mae\n");
            for m in &out.maes {
                csv.push_str(&format!("{},{},{:.10}\n", m.var, m.point_index, m.scaled_mae));
            }
            if let Err(e) = fs::write(dir.join("maes.csv"), csv) {
                return fail("config", e.to_string(), 2);
            }
            println!("trained on {} instances; predictions written", ids.len());
            ExitCode::SUCCESS
        }
        Err(e) => fail("config", e.to_string(), 2),
    }
}

fn cmd_bench(
    dir: &Path,
    policies: &str,
    points: usize,
    time_limit: f64,
    workers: usize,
    csv: &Path,
) -> ExitCode {
    let paths = match instance_paths(dir) {
        Ok(p) => p,
        Err(e) => return fail("config", e, 2),
    };
    let mut jobs: Vec<(PathBuf, String)> = Vec::new();
    for p in &paths {
        for pol in policies.split(',') {
            let pol = pol.trim();
            if !matches!(pol, "default" | "sp" | "ml") {
                return fail("config", format!("unknown policy {pol}"), 2);
            }
            jobs.push((p.clone(), pol.to_string()));
        }
    }
    let cfg = solve_config(time_limit, 1e-4);
    let results: Vec<Result<MetricsRecord, String>> = if workers <= 1 {
        jobs.iter().map(|(p, pol)| bench_one(p, pol, points, &cfg)).collect()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let jobs = &jobs;
                    let cfg = &cfg;
                    s.spawn(move || {
                        jobs.iter()
                            .enumerate()
                            .filter(|(i, _)| i % workers == w)
                            .map(|(i, (p, pol))| (i, bench_one(p, pol, points, cfg)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            let mut merged: Vec<(usize, Result<MetricsRecord, String>)> =
                handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
            merged.sort_by_key(|(i, _)| *i);
            merged.into_iter().map(|(_, r)| r).collect()
        })
    };
    let mut rows = Vec::new();
    for r in results {
        match r {
            Ok(rec) => rows.push(rec.csv_row()),
            Err(e) => return fail("config", e, 2),
        }
    }
    if let Err(e) = append_csv(csv, &rows) {
        return fail("config", e.to_string(), 2);
    }
    println!("{} rows -> {}", rows.len(), csv.display());
    ExitCode::SUCCESS
}

fn bench_one(
    path: &Path,
    policy: &str,
    points: usize,
    cfg: &SolveConfig,
) -> Result<MetricsRecord, String> {
    let policy = match policy {
        "default" => Policy::Default,
        "sp" => Policy::StrongPartition { d: points, ascent: AscentConfig::default() },
        "ml" => {
            let pred = path
                .parent()
                .unwrap()
                .join(
                    path.file_name()
                        .and_then(|s| s.to_str())
                        .unwrap()
                        .replace("inst_", "pred_"),
                );
            let p1: PartitionMatrix = serde_json::from_str(
                &fs::read_to_string(&pred).map_err(|e| format!("{}: {e}", pred.display()))?,
            )
            .map_err(|e| e.to_string())?;
            Policy::Provided { p1 }
        }
        other => return Err(format!("unknown policy {other}")),
    };
    run_solve(path, &policy, cfg)
}

fn cmd_report(csv: &Path) -> ExitCode {
    let body = match fs::read_to_string(csv) {
        Ok(b) => b,
        Err(e) => return fail("config", e.to_string(), 2),
    };
    let mut by_policy: std::collections::BTreeMap<String, Vec<Vec<String>>> = Default::default();
    for line in body.lines().skip(1) {
        let cols: Vec<String> = line.split(',').map(str::to_string).collect();
        if cols.len() < 9 {
            continue;
        }
        by_policy.entry(cols[1].clone()).or_default().push(cols);
    }
    if by_policy.is_empty() {
        return fail("config", "no data rows".into(), 2);
    }
    println!(
        "{:<10} {:>5} {:>10} {:>10} {:>10} {:>10} {:>12} {:>10}",
        "policy", "count", "gm_time", "med_time", "min_time", "max_time", "gap1_closed%", "tle%"
    );
    for (policy, rows) in &by_policy {
        let mut times: Vec<f64> =
            rows.iter().filter_map(|r| r[3].parse().ok()).collect();
        times.sort_by(f64::total_cmp);
        let gm = driver::shifted_geometric_mean(&times).unwrap_or(0.0);
        let med = times[times.len() / 2];
        let gap1: Vec<f64> = rows.iter().filter_map(|r| r[7].parse().ok()).collect();
        let closed = gap1.iter().filter(|&&g| g <= 1e-4 + 1e-12).count();
        let closed_pct = if gap1.is_empty() {
            f64::NAN
        } else {
            100.0 * closed as f64 / gap1.len() as f64
        };
        let tle = rows.iter().filter(|r| r[2] == "time_limit").count();
        println!(
            "{:<10} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>12.1} {:>10.1}",
            policy,
            rows.len(),
            gm,
            med,
            times.first().copied().unwrap_or(0.0),
            times.last().copied().unwrap_or(0.0),
            closed_pct,
            100.0 * tle as f64 / rows.len() as f64
        );
    }
    // gap-ratio histogram data (effective gap after first refinement)
    println!("\npolicy,gap_bucket,count");
    for (policy, rows) in &by_policy {
        let mut buckets = [0usize; 5];
        for r in rows {
            if let Ok(g) = r[7].parse::<f64>() {
                let b = if g <= 1e-4 + 1e-12 {
                    0
                } else if g < 1e-3 {
                    1
                } else if g < 1e-2 {
                    2
                } else if g < 1e-1 {
                    3
                } else {
                    4
                };
                buckets[b] += 1;
            }
        }
        let labels = ["closed", "<1e-3", "<1e-2", "<1e-1", ">=1e-1"];
        for (label, count) in labels.iter().zip(buckets) {
            println!("{policy},{label},{count}");
        }
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Generate { family, n, count, seed, out } => {
            cmd_generate(family.into(), n, count, seed, &out)
        }
        Cmd::Solve { instance, policy, points, p1, time_limit, eps_rel, csv } => {
            let policy = match build_policy(policy, points, &p1) {
                Ok(p) => p,
                Err(e) => return fail("config", e, 2),
            };
            let cfg = solve_config(time_limit, eps_rel);
            match run_solve(&instance, &policy, &cfg) {
                Ok(rec) => {
                    let row = rec.csv_row();
                    match csv {
                        Some(path) => {
                            if let Err(e) = append_csv(&path, &[row]) {
                                return fail("config", e.to_string(), 2);
                            }
                        }
                        None => {
                            println!("{}", MetricsRecord::CSV_HEADER);
                            println!("{row}");
                        }
                    }
                    ExitCode::from(status_code(rec.status))
                }
                Err(e) => fail("internal", e, 2),
            }
        }
        Cmd::Sp { instance, points, evals, out } => cmd_sp(&instance, points, evals, &out),
        Cmd::TrainMl { dir, folds, n_weak, depth, seed } => cmd_train_ml(
            &dir,
            &MlConfig { k_folds: folds, n_weak_learners: n_weak, max_depth: depth, seed },
        ),
        Cmd::Bench { dir, policies, points, time_limit, workers, csv } => {
            cmd_bench(&dir, &policies, points, time_limit, workers.max(1), &csv)
        }
        Cmd::Report { csv } => cmd_report(&csv),
    }
}
