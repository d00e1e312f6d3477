//! On-disk model bundle: the frozen QR factors, the compressed prior, the
//! configuration that produced them and a header tying everything together.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use aopt::io::{read_json, read_matrix_csv, write_json, write_matrix_csv, write_table_csv};
use aopt::pipeline::{BuildTimings, ExperimentConfig, Problem};
use aopt::{LowRankObjective, QRModel};

use crate::fail::{config_err, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleHeader {
    pub format: u32,
    pub config_hash: String,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub m_obs: usize,
    pub rank: usize,
    pub trace_c0: f64,
    pub noise_sigma: f64,
    pub residual_estimate: f64,
    /// SHA-256 of `Q.csv` and `R.csv` as written.
    pub q_sha256: String,
    pub r_sha256: String,
    pub timings: BuildTimings,
}

pub struct Bundle {
    pub dir: PathBuf,
    pub header: BundleHeader,
    pub config: ExperimentConfig,
    pub qr: QRModel,
    pub objective: LowRankObjective,
    pub sensors: Option<Vec<(f64, f64)>>,
}

/// SHA-256 of the canonical JSON form (defaults filled in, fixed key order).
pub fn config_hash(config: &ExperimentConfig) -> String {
    let text = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn file_hash(path: &Path) -> CliResult<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn coords_rows(coords: &[(f64, f64)]) -> Vec<Vec<String>> {
    coords
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| vec![i.to_string(), aopt::io::fmt_f64(x), aopt::io::fmt_f64(y)])
        .collect()
}

pub fn save(dir: &Path, problem: &Problem) -> CliResult<BundleHeader> {
    std::fs::create_dir_all(dir)?;
    problem.qr.save(dir)?;
    write_matrix_csv(&dir.join("chat.csv"), problem.objective.chat())?;
    write_json(&dir.join("config.json"), &problem.config)?;
    if let Some(s) = problem.sensor_coords() {
        write_table_csv(&dir.join("sensors.csv"), &["sensor", "x", "y"], &coords_rows(&s))?;
    }
    if let Some(s) = problem.source_coords() {
        write_table_csv(&dir.join("nodes.csv"), &["node", "x", "y"], &coords_rows(&s))?;
    }
    let header = BundleHeader {
        format: FORMAT_VERSION,
        config_hash: config_hash(&problem.config),
        seed: problem.config.seed,
        n: problem.n(),
        m: problem.m(),
        m_obs: problem.objective.m_obs(),
        rank: problem.qr.rank(),
        trace_c0: problem.objective.trace_c0(),
        noise_sigma: problem.noise.sigma().first().copied().unwrap_or(0.0),
        residual_estimate: problem.qr.residual_estimate,
        q_sha256: file_hash(&dir.join("Q.csv"))?,
        r_sha256: file_hash(&dir.join("R.csv"))?,
        timings: problem.timings.clone(),
    };
    write_json(&dir.join("bundle.json"), &header)?;
    Ok(header)
}

fn read_coords(path: &Path) -> CliResult<Option<Vec<(f64, f64)>>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path).map_err(aopt::Error::from)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(aopt::Error::from)?;
        let num = |i: usize| -> CliResult<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| config_err(format!("{}: malformed coordinate row", path.display())))
        };
        out.push((num(1)?, num(2)?));
    }
    Ok(Some(out))
}

pub fn load(dir: &Path) -> CliResult<Bundle> {
    let head_path = dir.join("bundle.json");
    if !head_path.exists() {
        return Err(config_err(format!("no model bundle at {} (run `aopt build` first)", dir.display())));
    }
    let header: BundleHeader = read_json(&head_path)?;
    if header.format != FORMAT_VERSION {
        return Err(config_err(format!("bundle format {} is not supported", header.format)));
    }
    let config: ExperimentConfig = read_json(&dir.join("config.json"))?;
    if config_hash(&config) != header.config_hash {
        return Err(config_err("config.json does not match the bundle header hash".to_string()));
    }
    if file_hash(&dir.join("R.csv"))? != header.r_sha256 || file_hash(&dir.join("Q.csv"))? != header.q_sha256 {
        return Err(config_err("Q.csv or R.csv changed since the bundle was built".to_string()));
    }
    let qr = QRModel::load(dir)?;
    let chat: DMatrix<f64> = if qr.rank() == 0 {
        DMatrix::zeros(0, 0)
    } else {
        read_matrix_csv(&dir.join("chat.csv"), qr.rank())?
    };
    let objective = LowRankObjective::from_parts(qr.r.clone(), chat, header.trace_c0, header.m_obs)?;
    let sensors = read_coords(&dir.join("sensors.csv"))?;
    Ok(Bundle {
        dir: dir.to_path_buf(),
        header,
        config,
        qr,
        objective,
        sensors,
    })
}

/// Node coordinates of the parameter grid, when the model has one.
pub fn node_coords(bundle: &Bundle) -> CliResult<Option<Vec<(f64, f64)>>> {
    read_coords(&bundle.dir.join("nodes.csv"))
}
