//! Command implementations. Each writes its CSV tables plus a JSON record
//! into the output directory and returns whether the numerics converged.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use aopt::aoptimal::VARIANCE_LIMIT;
use aopt::io::{fmt_f64, write_json, write_table_csv};
use aopt::optimality::{verify_global, Classification, OptimalityReport};
use aopt::oracle::{enumerate_binary, random_designs, BaselineStats, ENUMERATION_LIMIT};
use aopt::pipeline::{build_model, build_problem, ExperimentConfig};
use aopt::solve::{p_continuation, solve_convex, ContinuationStep, IterRecord, SolverConfig};
use aopt::{Design, Execution};

use crate::bundle::{self, Bundle};
use crate::fail::{config_err, CliResult};

/// Seeds that determine every number in a record.
#[derive(Clone, Debug, Serialize)]
pub struct Seeds {
    pub build: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelHashes {
    pub q_sha256: String,
    pub r_sha256: String,
    pub n: usize,
    pub m: usize,
    pub m_obs: usize,
    pub rank: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BaselineSummary {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// Fraction of random designs with a strictly larger objective.
    pub beaten_fraction: f64,
}

/// Everything one budget produced.
#[derive(Clone, Debug, Default, Serialize)]
pub struct M0Result {
    pub m0: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_star: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fw_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub is_global: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<Classification>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_binary: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_binary: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub convex_trace: Vec<IterRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub continuation: Vec<ContinuationStep>,
}

/// Replaying `config` with `seeds` reproduces every `J` value in `results`.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentRecord {
    pub command: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub model: ModelHashes,
    pub results: Vec<M0Result>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

/// Config hash and seed appended to every CSV row.
struct Stamp {
    hash: String,
    seed: u64,
}

impl Stamp {
    fn header<'a>(&self, cols: &[&'a str]) -> Vec<&'a str> {
        let mut h = cols.to_vec();
        h.extend(["config_hash", "seed"]);
        h
    }

    fn row(&self, mut cells: Vec<String>) -> Vec<String> {
        cells.push(self.hash.clone());
        cells.push(self.seed.to_string());
        cells
    }

    fn table(&self, path: &Path, cols: &[&str], rows: Vec<Vec<String>>) -> CliResult<()> {
        let rows: Vec<Vec<String>> = rows.into_iter().map(|r| self.row(r)).collect();
        write_table_csv(path, &self.header(cols), &rows)?;
        Ok(())
    }
}

fn stamp(b: &Bundle) -> Stamp {
    Stamp {
        hash: b.header.config_hash.clone(),
        seed: b.header.seed,
    }
}

fn model_hashes(b: &Bundle) -> ModelHashes {
    ModelHashes {
        q_sha256: b.header.q_sha256.clone(),
        r_sha256: b.header.r_sha256.clone(),
        n: b.header.n,
        m: b.header.m,
        m_obs: b.header.m_obs,
        rank: b.header.rank,
    }
}

fn record(b: &Bundle, command: &str, baseline_seed: Option<u64>, results: Vec<M0Result>, timings: BTreeMap<String, f64>) -> ExperimentRecord {
    ExperimentRecord {
        command: command.to_string(),
        config_hash: b.header.config_hash.clone(),
        config: b.config.clone(),
        seeds: Seeds {
            build: b.header.seed,
            baseline: baseline_seed,
        },
        model: model_hashes(b),
        results,
        timings,
    }
}

fn solver_config(b: &Bundle, tol: Option<f64>) -> CliResult<SolverConfig> {
    let mut cfg = b.config.solver.clone();
    if let Some(t) = tol {
        cfg.gap_tol = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_m0(b: &Bundle, m0: usize) -> CliResult<()> {
    if m0 > b.header.m {
        return Err(config_err(format!("--m0 {m0} exceeds the {} candidate sensors", b.header.m)));
    }
    Ok(())
}

fn weights_rows(w: &[f64]) -> Vec<Vec<String>> {
    w.iter().enumerate().map(|(k, &v)| vec![k.to_string(), fmt_f64(v)]).collect()
}

fn support_string(s: &[usize]) -> String {
    s.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ")
}

fn summarize(stats: &BaselineStats, value: f64) -> BaselineSummary {
    BaselineSummary {
        count: stats.count,
        min: stats.min,
        mean: stats.mean,
        median: stats.quantiles.iter().find(|q| q.0 == 0.5).map_or(f64::NAN, |q| q.1),
        max: stats.max,
        beaten_fraction: stats.fraction_beaten_by(value),
    }
}

/// Reads a `sensor,weight` CSV. Unlisted sensors get weight zero; other
/// columns are ignored.
pub fn read_design(path: &Path, m: usize) -> CliResult<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| config_err(format!("cannot read design {}: {e}", path.display())))?;
    let headers = r.headers().map_err(aopt::Error::from)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| config_err(format!("{}: missing column `{name}`", path.display())))
    };
    let (ks, ws) = (col("sensor")?, col("weight")?);
    let mut w = vec![0.0; m];
    let mut seen = vec![false; m];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(aopt::Error::from)?;
        let bad = || config_err(format!("{}:{}: malformed row", path.display(), line + 2));
        let k: usize = rec.get(ks).and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let v: f64 = rec.get(ws).and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        if k >= m {
            return Err(config_err(format!("{}: sensor {k} out of range (m = {m})", path.display())));
        }
        if std::mem::replace(&mut seen[k], true) {
            return Err(config_err(format!("{}: sensor {k} listed twice", path.display())));
        }
        w[k] = v;
    }
    Ok(w)
}

pub struct Outcome {
    pub converged: bool,
    pub summary: String,
}

pub fn build(config_path: &Path, out: &Path, seed: Option<u64>, exec: Execution) -> CliResult<Outcome> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", config_path.display())))?;
    let mut config = ExperimentConfig::from_json(&text).map_err(|e| config_err(format!("{}: {e}", config_path.display())))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let problem = build_problem(&config, exec)?;
    let header = bundle::save(out, &problem)?;
    let t = &header.timings;
    Ok(Outcome {
        converged: true,
        summary: format!(
            "built bundle {} (n = {}, m = {}, m_obs = {}, rank = {}) in {:.2}s, config {}",
            out.display(),
            header.n,
            header.m,
            header.m_obs,
            header.rank,
            t.model + t.noise + t.qr + t.assemble,
            &header.config_hash[..12]
        ),
    })
}

pub fn solve(b: &Bundle, m0: usize, tol: Option<f64>, out: &Path) -> CliResult<Outcome> {
    check_m0(b, m0)?;
    let cfg = solver_config(b, tol)?;
    let t = Instant::now();
    let sol = solve_convex(&b.objective, m0, &cfg)?;
    let elapsed = t.elapsed().as_secs_f64();
    let st = stamp(b);
    st.table(&out.join(format!("wstar_m0_{m0}.csv")), &["sensor", "weight"], weights_rows(&sol.design.w))?;
    let cl = &sol.report.classification;
    let label = |k: usize| {
        if cl.dominant.contains(&k) {
            "dominant"
        } else if cl.redundant.contains(&k) {
            "redundant"
        } else {
            "free"
        }
    };
    let rows = cl
        .order
        .iter()
        .enumerate()
        .map(|(pos, &k)| {
            let (x, y) = b.sensors.as_ref().map_or((String::new(), String::new()), |s| (fmt_f64(s[k].0), fmt_f64(s[k].1)));
            vec![pos.to_string(), k.to_string(), fmt_f64(sol.gradient[k]), fmt_f64(sol.design.w[k]), label(k).into(), x, y]
        })
        .collect();
    st.table(
        &out.join(format!("gradient_m0_{m0}.csv")),
        &["position", "sensor", "gradient", "weight", "label", "x", "y"],
        rows,
    )?;
    let result = M0Result {
        m0,
        w_star: Some(sol.design.w.clone()),
        j_star: Some(sol.objective),
        fw_gap: Some(sol.report.fw_gap),
        is_global: Some(sol.report.is_global),
        classification: Some(cl.clone()),
        convex_trace: sol.trace.clone(),
        ..Default::default()
    };
    let rec = record(b, "solve", None, vec![result], BTreeMap::from([("solve".to_string(), elapsed)]));
    write_json(&out.join(format!("solve_m0_{m0}.json")), &rec)?;
    Ok(Outcome {
        converged: sol.converged,
        summary: format!(
            "m0 = {m0}: J(w*) = {:.10e}, gap = {:.3e}, global = {}, dominant/free/redundant = {}/{}/{}",
            sol.objective,
            sol.report.fw_gap,
            sol.report.is_global,
            cl.dominant.len(),
            cl.free.len(),
            cl.redundant.len()
        ),
    })
}

pub fn continuation(b: &Bundle, m0: usize, delta: f64, tol: Option<f64>, out: &Path) -> CliResult<Outcome> {
    check_m0(b, m0)?;
    let cfg = solver_config(b, tol)?;
    let t = Instant::now();
    let res = p_continuation(&b.objective, m0, delta, &cfg)?;
    let elapsed = t.elapsed().as_secs_f64();
    let st = stamp(b);
    st.table(&out.join(format!("design_m0_{m0}.csv")), &["sensor", "weight"], weights_rows(&res.design.w))?;
    let m = b.header.m;
    let names: Vec<String> = (0..m).map(|k| format!("w{k}")).collect();
    let mut cols = vec!["step", "p", "objective", "n_binary"];
    cols.extend(names.iter().map(String::as_str));
    let rows = res
        .steps
        .iter()
        .map(|s| {
            let mut r = vec![s.outer.to_string(), fmt_f64(s.p), fmt_f64(s.objective), s.n_binary.to_string()];
            r.extend(s.w.iter().map(|&v| fmt_f64(v)));
            r
        })
        .collect();
    st.table(&out.join(format!("pseq_m0_{m0}.csv")), &cols, rows)?;
    let result = M0Result {
        m0,
        w_star: Some(res.convex.design.w.clone()),
        j_star: Some(res.convex.objective),
        fw_gap: Some(res.convex.report.fw_gap),
        is_global: Some(res.convex.report.is_global),
        classification: Some(res.classification.clone()),
        w_binary: Some(res.design.w.clone()),
        j_binary: Some(res.objective),
        convex_trace: res.convex.trace.clone(),
        continuation: res.steps.clone(),
        ..Default::default()
    };
    let rec = record(b, "continue", None, vec![result], BTreeMap::from([("continue".to_string(), elapsed)]));
    write_json(&out.join(format!("continue_m0_{m0}.json")), &rec)?;
    Ok(Outcome {
        converged: res.convex.converged && res.binary_converged,
        summary: format!(
            "m0 = {m0}: J(w_bin) = {:.10e} vs J(w*) = {:.10e}, support {:?}, {} steps{}",
            res.objective,
            res.convex.objective,
            res.design.support(),
            res.steps.len() - 1,
            if res.filled.is_empty() { String::new() } else { format!(", filled {:?}", res.filled) }
        ),
    })
}

#[derive(Serialize)]
struct VerifyRecord<'a> {
    config_hash: &'a str,
    seed: u64,
    design: PathBuf,
    m0: usize,
    objective: f64,
    report: OptimalityReport,
}

pub fn verify(b: &Bundle, design: &Path, m0: usize, tol: Option<f64>, out: &Path) -> CliResult<Outcome> {
    check_m0(b, m0)?;
    let w = read_design(design, b.header.m)?;
    let tol = tol.unwrap_or(b.config.solver.verify_tol);
    Design::new(w.clone(), m0).check_feasible(tol)?;
    let ws = b.objective.workspace(&w);
    let grad = ws.gradient();
    let report = verify_global(&w, &grad, m0, tol, None)?;
    let rec = VerifyRecord {
        config_hash: &b.header.config_hash,
        seed: b.header.seed,
        design: design.to_path_buf(),
        m0,
        objective: ws.objective(),
        report: report.clone(),
    };
    write_json(&out.join("verify.json"), &rec)?;
    let violated: Vec<&str> = report.violations.iter().map(|v| v.condition.as_str()).collect();
    Ok(Outcome {
        converged: true,
        summary: format!(
            "is_global = {}, gap = {:.3e}, J = {:.10e}{}",
            report.is_global,
            report.fw_gap,
            rec.objective,
            if violated.is_empty() { String::new() } else { format!(", violated: {}", violated.join("; ")) }
        ),
    })
}

pub fn oracle(b: &Bundle, m0: usize, out: &Path, exec: Execution) -> CliResult<Outcome> {
    check_m0(b, m0)?;
    let obj = &b.objective;
    let t = Instant::now();
    let table = enumerate_binary(|w| obj.objective(w), b.header.m, m0, exec)?;
    let elapsed = t.elapsed().as_secs_f64();
    let rows = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| vec![(i + 1).to_string(), support_string(&r.support), fmt_f64(r.objective)])
        .collect();
    stamp(b).table(&out.join(format!("enumeration_m0_{m0}.csv")), &["rank", "support", "objective"], rows)?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        config_hash: &'a str,
        seed: u64,
        m: usize,
        m0: usize,
        count: usize,
        limit: usize,
        best: &'a aopt::oracle::EnumeratedDesign,
        best_at_most: &'a aopt::oracle::EnumeratedDesign,
        seconds: f64,
    }
    write_json(
        &out.join(format!("enumeration_m0_{m0}.json")),
        &Sidecar {
            config_hash: &b.header.config_hash,
            seed: b.header.seed,
            m: table.m,
            m0,
            count: table.rows.len(),
            limit: ENUMERATION_LIMIT,
            best: table.best(),
            best_at_most: &table.best_at_most,
            seconds: elapsed,
        },
    )?;
    Ok(Outcome {
        converged: true,
        summary: format!(
            "{} designs; best {:?} with J = {:.10e}",
            table.rows.len(),
            table.best().support,
            table.best().objective
        ),
    })
}

pub fn baseline(b: &Bundle, m0: usize, count: usize, seed: u64, out: &Path, exec: Execution) -> CliResult<Outcome> {
    check_m0(b, m0)?;
    let obj = &b.objective;
    let stats = random_designs(|w| obj.objective(w), b.header.m, m0, count, seed, exec)?;
    let st = Stamp {
        hash: b.header.config_hash.clone(),
        seed,
    };
    let rows = stats
        .supports
        .iter()
        .zip(&stats.values)
        .enumerate()
        .map(|(i, (s, &v))| vec![i.to_string(), support_string(s), fmt_f64(v)])
        .collect();
    st.table(&out.join(format!("baseline_m0_{m0}.csv")), &["sample", "support", "objective"], rows)?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        config_hash: &'a str,
        seed: u64,
        m: usize,
        m0: usize,
        count: usize,
        min: f64,
        max: f64,
        mean: f64,
        quantiles: &'a [(f64, f64)],
    }
    write_json(
        &out.join(format!("baseline_m0_{m0}.json")),
        &Sidecar {
            config_hash: &b.header.config_hash,
            seed,
            m: b.header.m,
            m0,
            count,
            min: stats.min,
            max: stats.max,
            mean: stats.mean,
            quantiles: &stats.quantiles,
        },
    )?;
    Ok(Outcome {
        converged: true,
        summary: format!(
            "{count} random designs with m0 = {m0}: min {:.6e}, mean {:.6e}, max {:.6e}",
            stats.min, stats.mean, stats.max
        ),
    })
}

pub fn variance(b: &Bundle, design: &Path, out: &Path, exec: Execution) -> CliResult<Outcome> {
    let w = read_design(design, b.header.m)?;
    aopt::aoptimal::Design::new(w.clone(), b.header.m).check_feasible(b.config.solver.verify_tol)?;
    let (_, prior, _) = build_model(&b.config)?;
    if prior.dim() != b.qr.n() {
        return Err(config_err(format!(
            "bundle QR has {} rows but the configured prior has dimension {}",
            b.qr.n(),
            prior.dim()
        )));
    }
    let ws = b.objective.workspace(&w);
    let var = ws.posterior_pointwise_variance(&b.qr, &prior, VARIANCE_LIMIT, exec)?;
    let coords = bundle::node_coords(b)?;
    let rows = var
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (x, y) = coords.as_ref().map_or((String::new(), String::new()), |c| (fmt_f64(c[i].0), fmt_f64(c[i].1)));
            vec![i.to_string(), x, y, fmt_f64(v)]
        })
        .collect();
    stamp(b).table(&out.join("variance.csv"), &["node", "x", "y", "variance"], rows)?;
    let weighted: f64 = var.iter().zip(prior.mass_diag().iter()).map(|(v, m)| v * m).sum();
    let j = ws.objective();
    #[derive(Serialize)]
    struct Sidecar<'a> {
        config_hash: &'a str,
        seed: u64,
        design: &'a Path,
        objective: f64,
        mass_weighted_variance: f64,
        relative_difference: f64,
    }
    let rel = (weighted - j).abs() / j.abs().max(f64::MIN_POSITIVE);
    write_json(
        &out.join("variance.json"),
        &Sidecar {
            config_hash: &b.header.config_hash,
            seed: b.header.seed,
            design,
            objective: j,
            mass_weighted_variance: weighted,
            relative_difference: rel,
        },
    )?;
    Ok(Outcome {
        converged: true,
        summary: format!("{} nodes; mass-weighted variance {weighted:.10e} vs J {j:.10e}", var.len()),
    })
}

/// Parses `4`, `1-12`, `1..12` or comma-separated mixtures, inclusive.
pub fn parse_m0_list(spec: &str) -> CliResult<Vec<usize>> {
    let bad = || config_err(format!("cannot parse --m0 `{spec}` (use e.g. 8, 1-12 or 2,4,6)"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let range = part.split_once("..").or_else(|| part.split_once('-'));
        match range {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub struct SweepArgs {
    pub m0s: Vec<usize>,
    pub delta: f64,
    pub count: usize,
    pub seed: u64,
    pub tol: Option<f64>,
}

pub fn sweep(b: &Bundle, args: &SweepArgs, out: &Path, exec: Execution) -> CliResult<Outcome> {
    for &m0 in &args.m0s {
        check_m0(b, m0)?;
    }
    let cfg = solver_config(b, args.tol)?;
    let obj = &b.objective;
    let t = Instant::now();
    let runs = exec.try_map(args.m0s.len(), |i| -> Result<_, aopt::Error> {
        let m0 = args.m0s[i];
        let res = p_continuation(obj, m0, args.delta, &cfg)?;
        let stats = random_designs(|w| obj.objective(w), b.header.m, m0, args.count, args.seed.wrapping_add(m0 as u64), exec)?;
        Ok((res, stats))
    })?;
    let elapsed = t.elapsed().as_secs_f64();
    let mut rows = Vec::new();
    let mut results = Vec::new();
    let mut converged = true;
    for (&m0, (res, stats)) in args.m0s.iter().zip(&runs) {
        let cl = &res.classification;
        let base = summarize(stats, res.objective);
        converged &= res.convex.converged && res.binary_converged;
        rows.push(vec![
            m0.to_string(),
            fmt_f64(res.convex.objective),
            fmt_f64(res.objective),
            fmt_f64(res.convex.report.fw_gap),
            res.convex.report.is_global.to_string(),
            cl.dominant.len().to_string(),
            cl.redundant.len().to_string(),
            cl.free.len().to_string(),
            res.binary_converged.to_string(),
            fmt_f64(base.min),
            fmt_f64(base.median),
            fmt_f64(base.mean),
            fmt_f64(base.max),
            fmt_f64(base.beaten_fraction),
            support_string(&res.design.support()),
        ]);
        results.push(M0Result {
            m0,
            w_star: Some(res.convex.design.w.clone()),
            j_star: Some(res.convex.objective),
            fw_gap: Some(res.convex.report.fw_gap),
            is_global: Some(res.convex.report.is_global),
            classification: Some(cl.clone()),
            w_binary: Some(res.design.w.clone()),
            j_binary: Some(res.objective),
            baseline: Some(base),
            continuation: res.steps.clone(),
            ..Default::default()
        });
    }
    let st = Stamp {
        hash: b.header.config_hash.clone(),
        seed: args.seed,
    };
    st.table(
        &out.join("comparison.csv"),
        &[
            "m0",
            "j_star",
            "j_binary",
            "fw_gap",
            "is_global",
            "n_dominant",
            "n_redundant",
            "n_free",
            "binary_converged",
            "random_min",
            "random_median",
            "random_mean",
            "random_max",
            "beaten_fraction",
            "support",
        ],
        rows,
    )?;
    let rec = record(b, "sweep", Some(args.seed), results, BTreeMap::from([("sweep".to_string(), elapsed)]));
    write_json(&out.join("sweep_record.json"), &rec)?;
    Ok(Outcome {
        converged,
        summary: format!("{} budgets swept in {elapsed:.2}s", args.m0s.len()),
    })
}
