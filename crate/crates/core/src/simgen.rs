//! Synthetic multi-view generators with known signal structure, plus a
//! stratified train/validation/test splitter.
//!
//! Two designs are built in. The linear design draws joint Gaussians whose
//! first twenty features per view form two compound-symmetric blocks, linked
//! across views through a rank-two cross-covariance, with class means pushed
//! along two discriminant directions. The nonlinear design places two classes
//! on an exponentially growing sine/cosine curve and derives a noisy second
//! view from the first. Both return ground-truth signal masks so ranking
//! studies can score recovery.

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dataset::{default_feature_names, ClassLabels, MultiViewDataset};
use crate::error::{DeepIdaError, Result};
use crate::linalg::{cholesky, sym_eig, SymMatrix};
use crate::seeding::{rng, tags};

/// Signal features per view in the linear design: two blocks of ten.
pub const SIGNAL_FEATURES: usize = 20;
const BLOCK_SIZE: usize = 10;
const N_BLOCKS: usize = 2;
const BLOCK_RHO: f64 = 0.8;
/// Cross-view association strengths along the two shared directions.
const CROSS_ASSOC: [f64; 2] = [0.4, 0.2];
/// Relative tolerance below which a negative eigenvalue counts as round-off.
const PSD_TOL: f64 = 1e-8;

const THETA_MAX: f64 = 3.0 * PI;
/// Leading signal columns on the sine curve; the rest use the cosine curve.
const SIN_COLUMNS: usize = 5;

/// Linear Gaussian design: `D` views, three classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSimSpec {
    /// Features per view; each must fit the 20-feature signal block.
    pub p: Vec<usize>,
    /// Samples per class.
    pub n_per_class: [usize; 3],
    /// Mean separation scale per view.
    pub mean_scale: Vec<f64>,
    pub seed: u64,
}

fn default_mean_scale(n_views: usize) -> Vec<f64> {
    [0.2, 0.1, 0.05][..n_views].to_vec()
}

impl LinearSimSpec {
    /// Spec with the default per-view mean scales (0.2, 0.1, 0.05).
    pub fn new(p: Vec<usize>, n_per_class: [usize; 3], seed: u64) -> Result<Self> {
        let spec = Self {
            mean_scale: default_mean_scale(p.len().min(3)),
            p,
            n_per_class,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_views(&self) -> usize {
        self.p.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.p.len();
        if !(2..=3).contains(&d) {
            return Err(DeepIdaError::InvalidSpec(format!(
                "linear design needs 2 or 3 views, got {d}"
            )));
        }
        if let Some(&p) = self.p.iter().find(|&&p| p < SIGNAL_FEATURES) {
            return Err(DeepIdaError::InvalidSpec(format!(
                "every view needs at least {SIGNAL_FEATURES} features to hold the signal block, got {p}"
            )));
        }
        if let Some(&n) = self.n_per_class.iter().find(|&&n| n < 2) {
            return Err(DeepIdaError::InvalidSpec(format!(
                "every class needs at least 2 samples, got {n}"
            )));
        }
        if self.mean_scale.len() != d {
            return Err(DeepIdaError::InvalidSpec(format!(
                "{} mean scales for {d} views",
                self.mean_scale.len()
            )));
        }
        if self.mean_scale.iter().any(|c| !c.is_finite()) {
            return Err(DeepIdaError::InvalidSpec("mean scales must be finite".into()));
        }
        Ok(())
    }
}

/// Nonlinear curve design: two views of equal width, two classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearSimSpec {
    /// Features per view (view 2 is derived from view 1 column by column).
    pub p: usize,
    /// Samples per class.
    pub n_per_class: [usize; 2],
    /// Fraction of view-1 columns carrying the curve signal.
    #[serde(default = "default_signal_fraction")]
    pub signal_fraction: f64,
    /// Scale of the additive Gaussian noise on view 1.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    pub seed: u64,
}

fn default_signal_fraction() -> f64 {
    0.1
}

fn default_noise_scale() -> f64 {
    0.2
}

impl NonlinearSimSpec {
    pub fn new(p: usize, n_per_class: [usize; 2], seed: u64) -> Result<Self> {
        let spec = Self {
            p,
            n_per_class,
            signal_fraction: default_signal_fraction(),
            noise_scale: default_noise_scale(),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Number of signal columns in view 1.
    pub fn signal_count(&self) -> usize {
        (self.signal_fraction * self.p as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_fraction > 0.0 && self.signal_fraction < 1.0) {
            return Err(DeepIdaError::InvalidSpec(format!(
                "signal fraction must lie in (0, 1), got {}",
                self.signal_fraction
            )));
        }
        let s = self.signal_count();
        if s < SIN_COLUMNS {
            return Err(DeepIdaError::InvalidSpec(format!(
                "signal fraction {} of {} features yields {s} signal columns; need at least {SIN_COLUMNS}",
                self.signal_fraction, self.p
            )));
        }
        if s > self.p {
            return Err(DeepIdaError::InvalidSpec(format!(
                "{s} signal columns exceed {} features",
                self.p
            )));
        }
        if let Some(&n) = self.n_per_class.iter().find(|&&n| n < 2) {
            return Err(DeepIdaError::InvalidSpec(format!(
                "every class needs at least 2 samples, got {n}"
            )));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return Err(DeepIdaError::InvalidSpec(format!(
                "noise scale must be positive and finite, got {}",
                self.noise_scale
            )));
        }
        Ok(())
    }
}

/// Two compound-symmetric blocks of size ten on the diagonal.
fn signal_sigma() -> Array2<f64> {
    let m = N_BLOCKS * BLOCK_SIZE;
    let mut sig = Array2::eye(m);
    for b in 0..N_BLOCKS {
        let o = b * BLOCK_SIZE;
        for i in 0..BLOCK_SIZE {
            for j in 0..BLOCK_SIZE {
                if i != j {
                    sig[[o + i, o + j]] = BLOCK_RHO;
                }
            }
        }
    }
    sig
}

/// Gram-Schmidt in the `metric` inner product, so `v^T metric v = I` after.
fn metric_orthonormalize(v: &mut Array2<f64>, metric: &Array2<f64>) -> Result<()> {
    for j in 0..v.ncols() {
        for i in 0..j {
            let c = v.column(j).dot(&metric.dot(&v.column(i)));
            let vi = v.column(i).to_owned();
            v.column_mut(j).scaled_add(-c, &vi);
        }
        let q = v.column(j).dot(&metric.dot(&v.column(j)));
        if q <= 1e-12 {
            return Err(DeepIdaError::NumericalFailure(format!(
                "direction {j} degenerated during metric orthonormalization"
            )));
        }
        let inv = q.sqrt().recip();
        v.column_mut(j).mapv_inplace(|x| x * inv);
    }
    Ok(())
}

/// Factor `F` with `F F^T = sigma`. Cholesky when positive definite; otherwise
/// eigenvalues within round-off of zero are clipped (logged) and anything more
/// negative is rejected.
fn covariance_factor(sigma: SymMatrix) -> Result<Array2<f64>> {
    match cholesky(&sigma) {
        Ok(l) => Ok(l),
        Err(_) => {
            let eig = sym_eig(&sigma)?;
            let n = eig.values.len();
            let min = eig.values[n - 1];
            let scale = eig.values[0].abs().max(1.0);
            if min < -PSD_TOL * scale {
                return Err(DeepIdaError::InvalidSpec(format!(
                    "joint covariance is not positive semidefinite (smallest eigenvalue {min:.3e})"
                )));
            }
            log::warn!(
                "joint covariance needed eigenvalue clipping at zero (smallest eigenvalue {min:.3e})"
            );
            let roots = eig.values.mapv(|x| x.max(0.0).sqrt());
            Ok(&eig.vectors * &roots)
        }
    }
}

/// Draw the linear Gaussian design.
///
/// Per view, the covariance is the signal block plus an identity noise block.
/// Cross-view blocks are `sigma_d V_d diag(0.4, 0.2) V_j^T sigma_j` with each
/// `V` supported on the signal rows, entries from U(0.5, 1), and columns
/// orthonormalized in the view's covariance metric. Class means are the
/// columns of `[sigma A, 0]`, where `A` stacks per-view blocks whose first
/// column puts `+c_d` on the first block and whose second puts `-c_d` on the
/// second. The mask marks the first twenty features of every view.
pub fn gen_linear(spec: &LinearSimSpec) -> Result<MultiViewDataset> {
    spec.validate()?;
    let d_views = spec.n_views();
    let p_tot: usize = spec.p.iter().sum();
    let offsets: Vec<usize> = spec
        .p
        .iter()
        .scan(0, |acc, &p| {
            let o = *acc;
            *acc += p;
            Some(o)
        })
        .collect();

    let mut r = rng(spec.seed, &[tags::SIM]);
    let sig = signal_sigma();

    let mut joint = Array2::zeros((p_tot, p_tot));
    for (d, &o) in offsets.iter().enumerate() {
        let p = spec.p[d];
        joint
            .slice_mut(s![o..o + SIGNAL_FEATURES, o..o + SIGNAL_FEATURES])
            .assign(&sig);
        for i in SIGNAL_FEATURES..p {
            joint[[o + i, o + i]] = 1.0;
        }
    }

    // Shared directions: V per view on the signal rows, then sigma V for the
    // cross blocks (rank two, supported on the signal corner).
    let mut sigma_v = Vec::with_capacity(d_views);
    for _ in 0..d_views {
        let mut v = Array2::zeros((SIGNAL_FEATURES, 2));
        for i in 0..SIGNAL_FEATURES {
            for j in 0..2 {
                v[[i, j]] = r.random_range(0.5..1.0);
            }
        }
        metric_orthonormalize(&mut v, &sig)?;
        sigma_v.push(sig.dot(&v));
    }
    let assoc = Array2::from_diag(&Array1::from(CROSS_ASSOC.to_vec()));
    for d in 0..d_views {
        for j in d + 1..d_views {
            let corner = sigma_v[d].dot(&assoc).dot(&sigma_v[j].t());
            let (od, oj) = (offsets[d], offsets[j]);
            joint
                .slice_mut(s![od..od + SIGNAL_FEATURES, oj..oj + SIGNAL_FEATURES])
                .assign(&corner);
            joint
                .slice_mut(s![oj..oj + SIGNAL_FEATURES, od..od + SIGNAL_FEATURES])
                .assign(&corner.t());
        }
    }

    // Class means flow through the full joint covariance.
    let mut a = Array2::zeros((p_tot, 2));
    for (d, &o) in offsets.iter().enumerate() {
        let c = spec.mean_scale[d];
        for i in 0..BLOCK_SIZE {
            a[[o + i, 0]] = c;
            a[[o + BLOCK_SIZE + i, 1]] = -c;
        }
    }
    let mu = joint.dot(&a);
    let mut means = Array2::zeros((p_tot, 3));
    means.slice_mut(s![.., ..2]).assign(&mu);

    let factor = covariance_factor(SymMatrix::symmetrized(joint))?;
    let n_total: usize = spec.n_per_class.iter().sum();
    let mut rows = Array2::zeros((n_total, p_tot));
    let mut ids = Vec::with_capacity(n_total);
    let mut row = 0;
    for (k, &n_k) in spec.n_per_class.iter().enumerate() {
        let mean = means.column(k);
        for _ in 0..n_k {
            let z = Array1::from_shape_fn(p_tot, |_| r.sample::<f64, _>(StandardNormal));
            let x = &mean + &factor.dot(&z);
            rows.row_mut(row).assign(&x);
            ids.push(k as u32 + 1);
            row += 1;
        }
    }

    let views: Vec<Array2<f64>> = offsets
        .iter()
        .zip(&spec.p)
        .map(|(&o, &p)| rows.slice(s![.., o..o + p]).to_owned())
        .collect();
    let mask = spec
        .p
        .iter()
        .map(|&p| (0..p).map(|j| j < SIGNAL_FEATURES).collect())
        .collect();
    MultiViewDataset::with_metadata(
        views,
        ClassLabels::new(ids)?,
        default_feature_names(&spec.p),
        Some(mask),
    )
}

/// Underlying curve positions: each class gets its points evenly spaced over
/// its own half of `[0, 3*pi)`, so the class rule (first half of the range is
/// class 1) and the requested class sizes hold simultaneously.
fn theta_grid(n_per_class: [usize; 2]) -> Vec<f64> {
    let half = THETA_MAX / 2.0;
    let mut grid = Vec::with_capacity(n_per_class[0] + n_per_class[1]);
    for (k, &n_k) in n_per_class.iter().enumerate() {
        let start = k as f64 * half;
        for i in 0..n_k {
            grid.push(start + half * i as f64 / n_k as f64);
        }
    }
    grid
}

/// Curve signal columns before noise: one jitter of up to 0.5 per sample is
/// added to the grid and shared by every column, then the first
/// [`SIN_COLUMNS`] columns follow `exp(0.15 theta) sin(1.5 theta)` and the
/// rest the cosine counterpart.
fn curve_columns<R: Rng>(grid: &[f64], n_cols: usize, r: &mut R) -> Array2<f64> {
    let n = grid.len();
    let theta: Vec<f64> = grid.iter().map(|g| g + 0.5 * r.random::<f64>()).collect();
    let mut x = Array2::zeros((n, n_cols));
    for j in 0..n_cols {
        for (i, &t) in theta.iter().enumerate() {
            let wave = if j < SIN_COLUMNS {
                (1.5 * t).sin()
            } else {
                (1.5 * t).cos()
            };
            x[[i, j]] = (0.15 * t).exp() * wave;
        }
    }
    x
}

/// Draw the nonlinear curve design.
///
/// View 1 carries the curve in its first `signal_count` columns plus additive
/// Gaussian noise scaled by `noise_scale` everywhere; the remaining columns
/// are pure noise (the underlying standard-normal filler is masked off, so it
/// is never drawn). View 2 clamps view 1's negatives to zero, normalizes each
/// column to unit norm (zero columns stay zero), and adds a fresh U(0, 1)
/// value per entry. Classes split the theta grid at its midpoint; the
/// per-sample jitter can carry a sample's curve position slightly across,
/// which is the intended class overlap. The mask marks only view 1's signal
/// columns.
pub fn gen_nonlinear(spec: &NonlinearSimSpec) -> Result<MultiViewDataset> {
    spec.validate()?;
    let s_cols = spec.signal_count();
    let n = spec.n_per_class.iter().sum();
    let p = spec.p;

    let mut r = rng(spec.seed, &[tags::SIM]);
    let grid = theta_grid(spec.n_per_class);

    let mut x1 = Array2::zeros((n, p));
    x1.slice_mut(s![.., ..s_cols])
        .assign(&curve_columns(&grid, s_cols, &mut r));
    for i in 0..n {
        for j in 0..p {
            x1[[i, j]] += spec.noise_scale * r.sample::<f64, _>(StandardNormal);
        }
    }

    let mut x2 = Array2::zeros((n, p));
    for j in 0..p {
        let mut c = x1.column(j).mapv(|v| v.max(0.0));
        let norm = c.dot(&c).sqrt();
        if norm > 0.0 {
            c.mapv_inplace(|v| v / norm);
        }
        x2.column_mut(j).assign(&c);
    }
    for i in 0..n {
        for j in 0..p {
            x2[[i, j]] += r.random::<f64>();
        }
    }

    let mut ids = vec![1u32; spec.n_per_class[0]];
    ids.extend(vec![2u32; spec.n_per_class[1]]);
    let mask = vec![
        (0..p).map(|j| j < s_cols).collect(),
        vec![false; p],
    ];
    MultiViewDataset::with_metadata(
        vec![x1, x2],
        ClassLabels::new(ids)?,
        default_feature_names(&[p, p]),
        Some(mask),
    )
}

/// Result of [`train_valid_test_split`]; splits requested with a zero
/// fraction come back as `None`.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: MultiViewDataset,
    pub valid: Option<MultiViewDataset>,
    pub test: Option<MultiViewDataset>,
}

/// Largest-remainder apportionment of `n` rows across the three fractions.
fn apportion(n: usize, f: &[f64; 3]) -> [usize; 3] {
    let total: f64 = f.iter().sum();
    let target = ((n as f64 * total).round() as usize).min(n);
    let quotas: Vec<f64> = f.iter().map(|fi| fi * n as f64).collect();
    let mut out = [0usize; 3];
    for (o, q) in out.iter_mut().zip(&quotas) {
        *o = q.floor() as usize;
    }
    let mut assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut i = 0;
    while assigned < target {
        out[order[i % 3]] += 1;
        assigned += 1;
        i += 1;
    }
    out
}

/// Stratified split into train/validation/test by the given fractions.
///
/// Fractions must be non-negative with a positive train share and sum at most
/// one; rows left over when the sum is below one are dropped. Each class is
/// shuffled once (seeded) and dealt by largest-remainder apportionment, and
/// every split with a positive fraction must receive at least one row of
/// every class. Row order within each split follows the original dataset.
pub fn train_valid_test_split(
    data: &MultiViewDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitData> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(DeepIdaError::InvalidInput(format!(
            "fractions must be non-negative and finite, got {f:?}"
        )));
    }
    let sum: f64 = f.iter().sum();
    if sum > 1.0 + 1e-9 {
        return Err(DeepIdaError::InvalidInput(format!(
            "fractions sum to {sum}, which exceeds 1"
        )));
    }
    if f[0] <= 0.0 {
        return Err(DeepIdaError::InvalidInput(
            "train fraction must be positive".into(),
        ));
    }

    const SPLIT_NAMES: [&str; 3] = ["train", "validation", "test"];
    let labels = &data.labels;
    let mut buckets: [Vec<usize>; 3] = Default::default();
    let mut r = rng(seed, &[tags::SPLIT]);
    for k in 0..labels.n_classes() {
        let mut members = labels.members(k).to_vec();
        members.shuffle(&mut r);
        let quota = apportion(members.len(), &f);
        let mut taken = 0;
        for (si, &q) in quota.iter().enumerate() {
            if f[si] > 0.0 && q == 0 {
                return Err(DeepIdaError::StratificationFailure(format!(
                    "class {} has no rows left for the {} split",
                    labels.class_ids()[k],
                    SPLIT_NAMES[si]
                )));
            }
            buckets[si].extend(&members[taken..taken + q]);
            taken += q;
        }
    }
    for b in &mut buckets {
        b.sort_unstable();
    }

    let part = |rows: &Vec<usize>| -> Result<Option<MultiViewDataset>> {
        if rows.is_empty() {
            Ok(None)
        } else {
            data.select_rows(rows).map(Some)
        }
    };
    Ok(SplitData {
        train: data.select_rows(&buckets[0])?,
        valid: part(&buckets[1])?,
        test: part(&buckets[2])?,
    })
}
