//! Symmetric linear algebra on latent-dimension matrices.
//!
//! Everything here operates on small dense matrices (network output
//! dimensions, not raw feature dimensions), so the eigensolver is a cyclic
//! Jacobi iteration: bit-deterministic, no external BLAS/LAPACK, and accurate
//! to near machine precision at these sizes.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabels;
use crate::error::{DeepIdaError, Result};

/// Absolute symmetry tolerance accepted by [`SymMatrix::new`].
pub const SYM_TOL: f64 = 1e-12;
/// Smallest ridged eigenvalue [`inv_sqrt`] accepts before reporting a
/// singular matrix.
pub const SINGULAR_FLOOR: f64 = 1e-12;

const MAX_JACOBI_SWEEPS: usize = 64;

/// Square symmetric matrix. Construction validates symmetry within
/// [`SYM_TOL`] and stores the exactly symmetrized average, so downstream code
/// can rely on `m[(i,j)] == m[(j,i)]` bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix(Array2<f64>);

impl SymMatrix {
    pub fn new(m: Array2<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(DeepIdaError::ShapeMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(DeepIdaError::InvalidInput("empty matrix".into()));
        }
        if !m.iter().all(|x| x.is_finite()) {
            return Err(DeepIdaError::InvalidInput("matrix contains a non-finite value".into()));
        }
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (m[[i, j]] - m[[j, i]]).abs() > SYM_TOL {
                    return Err(DeepIdaError::InvalidInput(format!(
                        "matrix is not symmetric at ({i},{j}): {} vs {}",
                        m[[i, j]],
                        m[[j, i]]
                    )));
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes `(m + m')/2` without the tolerance check. For products that
    /// are symmetric by construction up to round-off.
    pub(crate) fn symmetrized(m: Array2<f64>) -> Self {
        let mut m = m;
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m[[i, j]] + m[[j, i]]);
                m[[i, j]] = v;
                m[[j, i]] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.diag().sum()
    }
}

/// Eigendecomposition of a symmetric matrix: `values` descending, `vectors`
/// orthonormal columns aligned with `values`, each column's first component
/// above 1e-12 in magnitude made positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPairs {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

fn off_diag_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += 2.0 * a[[i, j]] * a[[i, j]];
        }
    }
    s.sqrt()
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cyclic Jacobi eigendecomposition with deterministic ordering and sign
/// convention.
pub fn sym_eig(a: &SymMatrix) -> Result<EigenPairs> {
    let n = a.dim();
    let mut m = a.as_array().clone();
    let mut v: Array2<f64> = Array2::eye(n);
    let scale = frobenius(&m).max(f64::MIN_POSITIVE);
    let tol = scale * 1e-15;

    if n > 1 {
        let mut converged = false;
        for sweep in 0..MAX_JACOBI_SWEEPS {
            let mut off_sum = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off_sum += m[[i, j]].abs();
                }
            }
            if off_sum == 0.0 {
                converged = true;
                break;
            }
            // Small-rotation threshold for the first sweeps (classic Jacobi
            // scheduling); afterwards rotate on every nonzero off-diagonal.
            let tresh = if sweep < 3 { 0.2 * off_sum / (n * n) as f64 } else { 0.0 };
            for p in 0..n - 1 {
                for q in (p + 1)..n {
                    let apq = m[[p, q]];
                    let g = 100.0 * apq.abs();
                    if sweep > 3
                        && m[[p, p]].abs() + g == m[[p, p]].abs()
                        && m[[q, q]].abs() + g == m[[q, q]].abs()
                    {
                        m[[p, q]] = 0.0;
                        m[[q, p]] = 0.0;
                        continue;
                    }
                    if apq.abs() <= tresh || apq == 0.0 {
                        continue;
                    }
                    let h = m[[q, q]] - m[[p, p]];
                    let t = if h.abs() + g == h.abs() {
                        apq / h
                    } else {
                        let theta = 0.5 * h / apq;
                        let mut t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                        if theta < 0.0 {
                            t = -t;
                        }
                        t
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let tau = s / (1.0 + c);
                    let hh = t * apq;
                    m[[p, p]] -= hh;
                    m[[q, q]] += hh;
                    m[[p, q]] = 0.0;
                    m[[q, p]] = 0.0;
                    for i in 0..n {
                        if i != p && i != q {
                            let aip = m[[i, p]];
                            let aiq = m[[i, q]];
                            let nip = aip - s * (aiq + aip * tau);
                            let niq = aiq + s * (aip - aiq * tau);
                            m[[i, p]] = nip;
                            m[[p, i]] = nip;
                            m[[i, q]] = niq;
                            m[[q, i]] = niq;
                        }
                    }
                    for i in 0..n {
                        let vip = v[[i, p]];
                        let viq = v[[i, q]];
                        v[[i, p]] = vip - s * (viq + vip * tau);
                        v[[i, q]] = viq + s * (vip - viq * tau);
                    }
                }
            }
        }
        if !converged && off_diag_norm(&m) > tol.max(scale * 1e-13) {
            return Err(DeepIdaError::NumericalFailure(format!(
                "Jacobi iteration failed to converge in {MAX_JACOBI_SWEEPS} sweeps \
                 (off-diagonal norm {:.3e})",
                off_diag_norm(&m)
            )));
        }
    }

    // Deterministic descending order; equal values keep original column order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap().then(i.cmp(&j)));

    let mut values = Array1::zeros(n);
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = m[[src, src]];
        let mut col = v.column(src).to_owned();
        if let Some(&lead) = col.iter().find(|x| x.abs() > 1e-12) {
            if lead < 0.0 {
                col.mapv_inplace(|x| -x);
            }
        }
        vectors.column_mut(dst).assign(&col);
    }
    Ok(EigenPairs { values, vectors })
}

/// Eigendecomposition of `a + ridge * I`.
pub fn ridged_eig(a: &SymMatrix, ridge: f64) -> Result<EigenPairs> {
    if !ridge.is_finite() || ridge < 0.0 {
        return Err(DeepIdaError::InvalidInput(format!(
            "ridge must be a nonnegative finite value, got {ridge}"
        )));
    }
    let mut m = a.as_array().clone();
    for i in 0..m.nrows() {
        m[[i, i]] += ridge;
    }
    sym_eig(&SymMatrix::symmetrized(m))
}

/// Inverse square root from an existing eigendecomposition of the ridged
/// matrix. Fails when the smallest eigenvalue sits below [`SINGULAR_FLOOR`].
pub fn inv_sqrt_from_eig(eig: &EigenPairs) -> Result<SymMatrix> {
    let n = eig.values.len();
    let min = eig.values[n - 1];
    if min < SINGULAR_FLOOR {
        return Err(DeepIdaError::SingularMatrix(format!(
            "smallest ridged eigenvalue {min:.3e} is below {SINGULAR_FLOOR:.0e}; \
             increase the ridge"
        )));
    }
    let mut scaled = eig.vectors.clone();
    for (j, mut col) in scaled.axis_iter_mut(Axis(1)).enumerate() {
        let w = 1.0 / eig.values[j].sqrt();
        col.mapv_inplace(|x| x * w);
    }
    Ok(SymMatrix::symmetrized(scaled.dot(&eig.vectors.t())))
}

/// `(a + ridge * I)^{-1/2}` via the spectral map.
pub fn inv_sqrt(a: &SymMatrix, ridge: f64) -> Result<SymMatrix> {
    inv_sqrt_from_eig(&ridged_eig(a, ridge)?)
}

fn check_sample_matrix(h: &ArrayView2<f64>, what: &str) -> Result<()> {
    if h.nrows() < 2 {
        return Err(DeepIdaError::InvalidInput(format!(
            "{what} needs at least 2 samples, got {}",
            h.nrows()
        )));
    }
    if h.ncols() == 0 {
        return Err(DeepIdaError::InvalidInput(format!("{what} has zero columns")));
    }
    if !h.iter().all(|x| x.is_finite()) {
        return Err(DeepIdaError::InvalidInput(format!("{what} contains a non-finite value")));
    }
    Ok(())
}

/// Per-class means, one row per class index (ascending class id order).
pub fn class_means(h: &ArrayView2<f64>, labels: &ClassLabels) -> Result<Array2<f64>> {
    if h.nrows() != labels.len() {
        return Err(DeepIdaError::ShapeMismatch(format!(
            "{} rows vs {} labels",
            h.nrows(),
            labels.len()
        )));
    }
    check_sample_matrix(h, "class mean input")?;
    let k = labels.n_classes();
    let mut means = Array2::zeros((k, h.ncols()));
    for (i, row) in h.rows().into_iter().enumerate() {
        let c = labels.class_index(i);
        means.row_mut(c).scaled_add(1.0, &row);
    }
    for (c, mut row) in means.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|x| x / labels.counts()[c] as f64);
    }
    Ok(means)
}

/// Between-class covariance with n-1 divisor, centered at the weighted
/// sample grand mean: `sum_k n_k (mu_k - mu)(mu_k - mu)' / (n - 1)`.
pub fn between_class_cov(h: &ArrayView2<f64>, labels: &ClassLabels) -> Result<SymMatrix> {
    let means = class_means(h, labels)?;
    let n = h.nrows() as f64;
    let mu = h.mean_axis(Axis(0)).expect("nonempty");
    let o = h.ncols();
    let mut s = Array2::zeros((o, o));
    for (k, count) in labels.counts().iter().enumerate() {
        let dev = &means.row(k) - &mu;
        let w = *count as f64 / (n - 1.0);
        for i in 0..o {
            if dev[i] == 0.0 {
                continue;
            }
            for j in 0..o {
                s[[i, j]] += w * dev[i] * dev[j];
            }
        }
    }
    Ok(SymMatrix::symmetrized(s))
}

/// Total covariance with n-1 divisor.
pub fn total_cov(h: &ArrayView2<f64>) -> Result<SymMatrix> {
    check_sample_matrix(h, "total covariance input")?;
    let mu = h.mean_axis(Axis(0)).expect("nonempty");
    let hc = h.to_owned() - &mu;
    let s = hc.t().dot(&hc) / (h.nrows() as f64 - 1.0);
    Ok(SymMatrix::symmetrized(s))
}

/// Cross-covariance between two row-aligned sample matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCov(Array2<f64>);

impl CrossCov {
    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.0.nrows(), self.0.ncols())
    }
}

/// `centered(hd)' centered(hj) / (n - 1)`, each side centered at its own
/// column means.
pub fn cross_cov(hd: &ArrayView2<f64>, hj: &ArrayView2<f64>) -> Result<CrossCov> {
    if hd.nrows() != hj.nrows() {
        return Err(DeepIdaError::ShapeMismatch(format!(
            "cross covariance needs row-aligned inputs, got {} vs {} rows",
            hd.nrows(),
            hj.nrows()
        )));
    }
    check_sample_matrix(hd, "cross covariance left input")?;
    check_sample_matrix(hj, "cross covariance right input")?;
    let mud = hd.mean_axis(Axis(0)).expect("nonempty");
    let muj = hj.mean_axis(Axis(0)).expect("nonempty");
    let hdc = hd.to_owned() - &mud;
    let hjc = hj.to_owned() - &muj;
    Ok(CrossCov(hdc.t().dot(&hjc) / (hd.nrows() as f64 - 1.0)))
}

/// How the whitening ridge is chosen per view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgePolicy {
    /// `kappa * trace(S_t) / dim`, scale-free in the data.
    TraceScaled(f64),
    /// Fixed value, 0 allowed when S_t is well conditioned.
    Absolute(f64),
}

impl Default for RidgePolicy {
    fn default() -> Self {
        RidgePolicy::TraceScaled(1e-4)
    }
}

impl RidgePolicy {
    pub fn ridge_for(&self, st: &SymMatrix) -> Result<f64> {
        let v = match *self {
            RidgePolicy::TraceScaled(kappa) => {
                if !kappa.is_finite() || kappa < 0.0 {
                    return Err(DeepIdaError::InvalidInput(format!(
                        "trace-scaled ridge factor must be nonnegative, got {kappa}"
                    )));
                }
                kappa * st.trace() / st.dim() as f64
            }
            RidgePolicy::Absolute(r) => r,
        };
        if !v.is_finite() || v < 0.0 {
            return Err(DeepIdaError::InvalidInput(format!("ridge resolved to invalid value {v}")));
        }
        Ok(v)
    }
}

/// Whitened between-class and cross-view operators for a set of row-aligned
/// views: `M_d = T_d S_b^d T_d` and `N_dj = T_d S_dj T_j` with
/// `T_d = (S_t^d + ridge_d I)^{-1/2}`.
#[derive(Debug, Clone)]
pub struct WhitenedViews {
    pub m_list: Vec<SymMatrix>,
    pub n_table: CrossTable,
    /// Whitening transforms `T_d`.
    pub whiteners: Vec<SymMatrix>,
}

/// Table of whitened cross operators; `get(d, j)` is `N_dj` for `d != j`,
/// with `N_jd` stored as the exact transpose of `N_dj`.
#[derive(Debug, Clone)]
pub struct CrossTable {
    n_views: usize,
    mats: Vec<Option<Array2<f64>>>,
}

impl CrossTable {
    pub fn from_upper_pairs(n_views: usize, upper: Vec<((usize, usize), Array2<f64>)>) -> Self {
        let mut mats = vec![None; n_views * n_views];
        for ((d, j), m) in upper {
            debug_assert!(d < j && j < n_views);
            mats[j * n_views + d] = Some(m.t().to_owned());
            mats[d * n_views + j] = Some(m);
        }
        CrossTable { n_views, mats }
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn get(&self, d: usize, j: usize) -> &Array2<f64> {
        self.mats[d * self.n_views + j]
            .as_ref()
            .expect("cross table queried on the diagonal or out of range")
    }
}

pub fn whiten_views(
    h_list: &[Array2<f64>],
    labels: &ClassLabels,
    ridge: RidgePolicy,
) -> Result<WhitenedViews> {
    if h_list.is_empty() {
        return Err(DeepIdaError::InvalidInput("no views given".into()));
    }
    let n = h_list[0].nrows();
    for (d, h) in h_list.iter().enumerate() {
        if h.nrows() != n {
            return Err(DeepIdaError::ShapeMismatch(format!(
                "view {} has {} rows, expected {n}",
                d + 1,
                h.nrows()
            )));
        }
    }
    let mut m_list = Vec::with_capacity(h_list.len());
    let mut whiteners = Vec::with_capacity(h_list.len());
    for h in h_list {
        let st = total_cov(&h.view())?;
        let t = inv_sqrt(&st, ridge.ridge_for(&st)?)?;
        let sb = between_class_cov(&h.view(), labels)?;
        let m = t.as_array().dot(sb.as_array()).dot(t.as_array());
        m_list.push(SymMatrix::symmetrized(m));
        whiteners.push(t);
    }
    let mut upper = Vec::new();
    for d in 0..h_list.len() {
        for j in (d + 1)..h_list.len() {
            let sdj = cross_cov(&h_list[d].view(), &h_list[j].view())?;
            let n_dj =
                whiteners[d].as_array().dot(sdj.as_array()).dot(whiteners[j].as_array());
            upper.push(((d, j), n_dj));
        }
    }
    Ok(WhitenedViews {
        m_list,
        n_table: CrossTable::from_upper_pairs(h_list.len(), upper),
        whiteners,
    })
}

/// Lower-triangular Cholesky factor of a positive definite matrix.
pub fn cholesky(a: &SymMatrix) -> Result<Array2<f64>> {
    let n = a.dim();
    let m = a.as_array();
    let mut l: Array2<f64> = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(DeepIdaError::SingularMatrix(format!(
                        "Cholesky pivot {s:.3e} at index {i} is not positive"
                    )));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Modified Gram-Schmidt orthonormalization of the columns of `m`.
pub fn orthonormalize_columns(m: &Array2<f64>) -> Result<Array2<f64>> {
    let mut q = m.clone();
    let cols = q.ncols();
    for j in 0..cols {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let qi = q.column(i).to_owned();
            q.column_mut(j).scaled_add(-proj, &qi);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if norm < 1e-12 {
            return Err(DeepIdaError::NumericalFailure(format!(
                "column {j} became numerically dependent during orthonormalization"
            )));
        }
        q.column_mut(j).mapv_inplace(|x| x / norm);
    }
    Ok(q)
}
