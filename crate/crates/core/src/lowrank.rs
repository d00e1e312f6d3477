//! Frozen thin QR factorization `F^T ~ QR` of the whitened operator.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::io::{read_json, read_matrix_csv, write_json, write_matrix_csv};
use crate::model::linear_map::{apply_adjoint_columns, apply_columns, LinearMap};

/// How a [`QRModel`] was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum QrProvenance {
    Exact,
    Randomized {
        seed: u64,
        power_iters: usize,
        target_rank: usize,
        drop_tol: f64,
    },
    Concatenated {
        blocks: usize,
    },
}

/// `Q` (`n x l`, orthonormal columns) and `R` (`l x m*m_obs`).
#[derive(Clone, Debug)]
pub struct QRModel {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Observations per sensor; `r.ncols() = m * m_obs`.
    pub m_obs: usize,
    /// Estimated relative Frobenius residual of the factorization.
    pub residual_estimate: f64,
    pub provenance: QrProvenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct QrHeader {
    n: usize,
    m: usize,
    m_obs: usize,
    rank: usize,
    residual_estimate: f64,
    provenance: QrProvenance,
}

impl QRModel {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, m_obs: usize, residual_estimate: f64, provenance: QrProvenance) -> Result<Self> {
        if q.ncols() != r.nrows() {
            return Err(Error::Dimension {
                context: "QR inner dimension",
                expected: q.ncols(),
                actual: r.nrows(),
            });
        }
        if m_obs == 0 || r.ncols() % m_obs != 0 {
            return Err(Error::InvalidModel(format!(
                "R has {} columns, not a multiple of m_obs = {m_obs}",
                r.ncols()
            )));
        }
        Ok(Self {
            q,
            r,
            m_obs,
            residual_estimate,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    /// Number of sensors.
    pub fn m(&self) -> usize {
        self.r.ncols() / self.m_obs
    }

    /// `max |Q^T Q - I|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let g = self.q.transpose() * &self.q;
        let l = self.rank();
        (g - DMatrix::<f64>::identity(l, l)).abs().max()
    }

    /// `|A - QR|_F / |A|_F` for an explicit `A`.
    pub fn relative_residual(&self, a: &DMatrix<f64>) -> f64 {
        relative_frobenius(a, &(&self.q * &self.r))
    }

    /// Writes `Q.csv`, `R.csv` and `qr.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_matrix_csv(&dir.join("Q.csv"), &self.q)?;
        write_matrix_csv(&dir.join("R.csv"), &self.r)?;
        let header = QrHeader {
            n: self.n(),
            m: self.m(),
            m_obs: self.m_obs,
            rank: self.rank(),
            residual_estimate: self.residual_estimate,
            provenance: self.provenance.clone(),
        };
        write_json(&dir.join("qr.json"), &header)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: QrHeader = read_json(&dir.join("qr.json"))?;
        let mut q = read_matrix_csv(&dir.join("Q.csv"), header.rank)?;
        let mut r = read_matrix_csv(&dir.join("R.csv"), header.m * header.m_obs)?;
        if header.rank == 0 {
            q = DMatrix::zeros(header.n, 0);
            r = DMatrix::zeros(0, header.m * header.m_obs);
        }
        if q.nrows() != header.n || r.nrows() != header.rank {
            return Err(Error::Parse("QR bundle shape disagrees with qr.json".into()));
        }
        Self::new(q, r, header.m_obs, header.residual_estimate, header.provenance)
    }
}

fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.norm();
    if scale == 0.0 {
        return (a - b).norm();
    }
    (a - b).norm() / scale
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Orthonormal basis of the range of `b` (thin Householder QR, `b` tall or square).
fn orthonormalize(b: DMatrix<f64>) -> DMatrix<f64> {
    let k = b.ncols().min(b.nrows());
    let q = b.qr().q();
    q.columns(0, k).into_owned()
}

/// Options for [`randomized_qr`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizedQrConfig {
    /// Target rank `l` (number of Gaussian probes).
    pub rank: usize,
    #[serde(default = "default_power_iters")]
    pub power_iters: usize,
    /// Singular values below `drop_tol * sigma_max` are discarded.
    #[serde(default = "default_drop_tol")]
    pub drop_tol: f64,
}

fn default_power_iters() -> usize {
    2
}

fn default_drop_tol() -> f64 {
    1e-6
}

const RESIDUAL_PROBES: usize = 8;

/// Randomized subspace iteration for `A = F^T` (`n x m*m_obs`), given as a
/// map from `R^{m*m_obs}` to `R^n`.
///
/// `B0 = A O`, then `q` rounds of `A^T`/`A` re-orthonormalization, `B = Q_q^T A`,
/// `B = U S V^T` truncated at `drop_tol`, `S V^T = Q~ R`, `Q = Q_q U Q~`.
pub fn randomized_qr<M: LinearMap + ?Sized>(
    op: &M,
    m_obs: usize,
    config: &RandomizedQrConfig,
    seed: u64,
    exec: Execution,
) -> Result<QRModel> {
    let (n, cols) = (op.n_out(), op.n_in());
    let l = config.rank;
    if l == 0 || l > n.min(cols) {
        return Err(Error::InvalidArgument(format!(
            "target rank {l} must lie in 1..={} for a {n} x {cols} operator",
            n.min(cols)
        )));
    }
    if !(config.drop_tol >= 0.0 && config.drop_tol < 1.0) {
        return Err(Error::InvalidArgument(format!("drop_tol must lie in [0, 1), got {}", config.drop_tol)));
    }
    let omega = gaussian_matrix(cols, l, seed, 0);
    let mut qj = orthonormalize(apply_columns(op, &omega, exec));
    for _ in 0..config.power_iters {
        let qt = orthonormalize(apply_adjoint_columns(op, &qj, exec));
        qj = orthonormalize(apply_columns(op, &qt, exec));
    }
    // B = Q_q^T A, formed as (A^T Q_q)^T
    let b = apply_adjoint_columns(op, &qj, exec).transpose();
    let provenance = QrProvenance::Randomized {
        seed,
        power_iters: config.power_iters,
        target_rank: l,
        drop_tol: config.drop_tol,
    };
    let svd = b.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let sigma_max = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| sigma_max > 0.0 && svd.singular_values[i] > config.drop_tol * sigma_max)
        .collect();
    if keep.is_empty() {
        log::warn!("randomized QR: operator is numerically zero, returning an empty factorization");
        return QRModel::new(DMatrix::zeros(n, 0), DMatrix::zeros(0, cols), m_obs, 0.0, provenance);
    }
    let u_kept = u.select_columns(&keep);
    let s_vt = DMatrix::from_fn(keep.len(), cols, |i, j| svd.singular_values[keep[i]] * vt[(keep[i], j)]);
    // thin QR of the wide r x cols factor: Householder on its transpose
    let (q_tilde, r) = wide_qr(&s_vt);
    let q = &qj * u_kept * q_tilde;
    let mut model = QRModel::new(q, r, m_obs, 0.0, provenance)?;
    model.residual_estimate = estimate_residual(op, &model, seed, exec);
    Ok(model)
}

/// `W = Q R` for a wide `W` (`r x c`, `r <= c`) with square orthogonal `Q`.
fn wide_qr(w: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = w.nrows();
    let qr = w.columns(0, k).into_owned().qr();
    let q = qr.q();
    let r = q.transpose() * w;
    (q, r)
}

/// Relative Frobenius residual `|A - QR|_F / |A|_F` from Gaussian probes.
fn estimate_residual<M: LinearMap + ?Sized>(op: &M, model: &QRModel, seed: u64, exec: Execution) -> f64 {
    let probes = gaussian_matrix(op.n_in(), RESIDUAL_PROBES, seed, 1);
    let ax = apply_columns(op, &probes, exec);
    let qrx = &model.q * (&model.r * &probes);
    relative_frobenius(&ax, &qrx)
}

/// Full-accuracy thin QR of an explicit `A` with rank detection at `1e-12`
/// relative to the leading pivot.
pub fn exact_qr(a: &DMatrix<f64>, m_obs: usize) -> Result<QRModel> {
    exact_qr_with(a, m_obs, QrProvenance::Exact)
}

fn exact_qr_with(a: &DMatrix<f64>, m_obs: usize, provenance: QrProvenance) -> Result<QRModel> {
    let (n, cols) = a.shape();
    let k = n.min(cols);
    if k == 0 {
        return QRModel::new(DMatrix::zeros(n, 0), DMatrix::zeros(0, cols), m_obs, 0.0, provenance);
    }
    let qr = a.clone().col_piv_qr();
    let rr = qr.r();
    let lead = rr[(0, 0)].abs();
    let rank = (0..k).take_while(|&i| lead > 0.0 && rr[(i, i)].abs() > 1e-12 * lead).count();
    let q = qr.q().columns(0, rank).into_owned();
    let r = q.transpose() * a;
    let mut model = QRModel::new(q, r, m_obs, 0.0, provenance)?;
    model.residual_estimate = model.relative_residual(a);
    Ok(model)
}

/// Joins per-observation factorizations `F_k^T = Q_k R_k` into one for the
/// stacked operator `[F_1^T ... F_K^T]`, then recompresses so that the result
/// is again orthonormal with minimal rank.
pub fn block_concat(models: &[QRModel]) -> Result<QRModel> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("block_concat needs at least one block".into()))?;
    let (n, m) = (first.n(), first.m());
    for b in models {
        if b.n() != n {
            return Err(Error::Dimension {
                context: "block_concat parameter dimension",
                expected: n,
                actual: b.n(),
            });
        }
        if b.m() != m {
            return Err(Error::Dimension {
                context: "block_concat sensor count",
                expected: m,
                actual: b.m(),
            });
        }
    }
    let total_rank: usize = models.iter().map(QRModel::rank).sum();
    let total_cols: usize = models.iter().map(|b| b.r.ncols()).sum();
    let m_obs: usize = models.iter().map(|b| b.m_obs).sum();
    let mut stacked_q = DMatrix::zeros(n, total_rank);
    let mut block_r = DMatrix::zeros(total_rank, total_cols);
    let (mut row, mut col) = (0, 0);
    for b in models {
        stacked_q.columns_mut(row, b.rank()).copy_from(&b.q);
        block_r.view_mut((row, col), (b.rank(), b.r.ncols())).copy_from(&b.r);
        row += b.rank();
        col += b.r.ncols();
    }
    let inner = exact_qr_with(&stacked_q, 1, QrProvenance::Exact)?;
    let r = &inner.r * block_r;
    let residual = models
        .iter()
        .map(|b| b.residual_estimate)
        .fold(inner.residual_estimate, f64::max);
    QRModel::new(inner.q, r, m_obs, residual, QrProvenance::Concatenated { blocks: models.len() })
}

/// Dense `F^T` from a map given as `F`, used for exact factorizations.
pub fn materialize_transpose<M: LinearMap + ?Sized>(f: &M, exec: Execution) -> DMatrix<f64> {
    let n_out = f.n_out();
    let cols = exec.map(n_out, |j| {
        let mut e = vec![0.0; n_out];
        e[j] = 1.0;
        f.apply_adjoint(&e)
    });
    DMatrix::from_fn(f.n_in(), n_out, |i, j| cols[j][i])
}

/// Column norms, used to spot sensors that carry no information.
pub fn column_norms(r: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(r.ncols(), r.column_iter().map(|c| c.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::linear_map::DenseMap;
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        gaussian_matrix(rows, cols, seed, 7)
    }

    #[test]
    fn exact_rank_recovery() {
        let a = random(60, 8, 1) * random(8, 40, 2);
        let cfg = RandomizedQrConfig {
            rank: 12,
            power_iters: 2,
            drop_tol: 1e-6,
        };
        let qr = randomized_qr(&DenseMap::new(a.clone()), 1, &cfg, 9, Execution::default()).unwrap();
        assert_eq!(qr.rank(), 8);
        assert!(qr.relative_residual(&a) < 1e-8);
        assert!(qr.orthogonality_defect() < 1e-10);
        assert!(qr.residual_estimate < 1e-8);
    }

    #[test]
    fn zero_operator_gives_empty_model() {
        let a = DMatrix::zeros(10, 6);
        let cfg = RandomizedQrConfig {
            rank: 3,
            power_iters: 2,
            drop_tol: 1e-6,
        };
        let qr = randomized_qr(&DenseMap::new(a), 2, &cfg, 1, Execution::Sequential).unwrap();
        assert_eq!(qr.rank(), 0);
        assert_eq!(qr.residual_estimate, 0.0);
        assert_eq!(qr.m(), 3);
    }

    #[test]
    fn rank_above_dimensions_is_rejected() {
        let cfg = RandomizedQrConfig {
            rank: 7,
            power_iters: 0,
            drop_tol: 0.0,
        };
        let r = randomized_qr(&DenseMap::new(random(10, 6, 1)), 1, &cfg, 1, Execution::Sequential);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn randomized_build_is_deterministic() {
        let a = random(30, 20, 4);
        let cfg = RandomizedQrConfig {
            rank: 10,
            power_iters: 1,
            drop_tol: 1e-6,
        };
        let x = randomized_qr(&DenseMap::new(a.clone()), 1, &cfg, 3, Execution::Sequential).unwrap();
        let y = randomized_qr(&DenseMap::new(a), 1, &cfg, 3, Execution::Parallel).unwrap();
        assert_eq!(x.r, y.r);
        assert_eq!(x.q, y.q);
    }

    #[test]
    fn exact_qr_of_identity() {
        let qr = exact_qr(&DMatrix::identity(5, 5), 1).unwrap();
        assert_eq!(qr.rank(), 5);
        let prod = &qr.q * &qr.r;
        assert!((prod - DMatrix::<f64>::identity(5, 5)).abs().max() < 1e-14);
        for i in 0..5 {
            assert!((qr.q[(i, i)].abs() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_qr_random_full_rank() {
        let a = random(50, 30, 5);
        let qr = exact_qr(&a, 1).unwrap();
        assert_eq!(qr.rank(), 30);
        assert!(qr.relative_residual(&a) <= 1e-12);
    }

    #[test]
    fn exact_qr_detects_duplicated_columns() {
        let base = random(20, 6, 6);
        let a = DMatrix::from_fn(20, 10, |i, j| base[(i, j % 6)]);
        let qr = exact_qr(&a, 2).unwrap();
        assert_eq!(qr.rank(), 6);
        assert!(qr.relative_residual(&a) < 1e-12);
    }

    #[test]
    fn concat_of_identical_blocks_keeps_rank() {
        let a = random(25, 5, 1) * random(5, 9, 2);
        let block = exact_qr(&a, 1).unwrap();
        let joined = block_concat(&[block.clone(), block.clone()]).unwrap();
        assert_eq!(joined.rank(), block.rank());
        assert_eq!(joined.m_obs, 2);
        let stacked = DMatrix::from_fn(25, 18, |i, j| a[(i, j % 9)]);
        assert!(joined.relative_residual(&stacked) < 1e-10);
    }

    #[test]
    fn concat_of_orthogonal_blocks_adds_ranks() {
        let basis = orthonormalize(random(30, 9, 3));
        let a1 = basis.columns(0, 4) * random(4, 6, 4);
        let a2 = basis.columns(4, 5) * random(5, 6, 5);
        let b1 = exact_qr(&a1, 1).unwrap();
        let b2 = exact_qr(&a2, 1).unwrap();
        let joined = block_concat(&[b1, b2]).unwrap();
        assert_eq!(joined.rank(), 9);
        let mut stacked = DMatrix::zeros(30, 12);
        stacked.columns_mut(0, 6).copy_from(&a1);
        stacked.columns_mut(6, 6).copy_from(&a2);
        assert!(joined.relative_residual(&stacked) < 1e-10);
        assert!(joined.orthogonality_defect() < 1e-10);
    }

    #[test]
    fn concat_rejects_inconsistent_n() {
        let b1 = exact_qr(&random(10, 4, 1), 1).unwrap();
        let b2 = exact_qr(&random(11, 4, 1), 1).unwrap();
        assert!(matches!(block_concat(&[b1, b2]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let qr = exact_qr(&random(12, 8, 2), 2).unwrap();
        qr.save(dir.path()).unwrap();
        let back = QRModel::load(dir.path()).unwrap();
        assert_eq!(back.q, qr.q);
        assert_eq!(back.r, qr.r);
        assert_eq!(back.m_obs, 2);
        assert_eq!(back.provenance, QrProvenance::Exact);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn exact_qr_is_orthonormal_and_reconstructs(rows in 2usize..25, cols in 1usize..25, seed in 0u64..1000) {
            let a = random(rows, cols, seed);
            let qr = exact_qr(&a, 1).unwrap();
            prop_assert!(qr.rank() <= rows.min(cols));
            prop_assert!(qr.orthogonality_defect() <= 1e-10);
            prop_assert!(qr.relative_residual(&a) <= 1e-10);
        }
    }
}
