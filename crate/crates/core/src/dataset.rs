//! Multi-view datasets and class label bookkeeping.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DeepIdaError, Result};

/// Class labels for one sample set. Arbitrary positive ids are accepted;
/// internally each sample maps to an index into the ascending distinct ids,
/// so "lowest class id" tie-breaks are index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLabels {
    ids: Vec<u32>,
    class_ids: Vec<u32>,
    index: Vec<usize>,
    counts: Vec<usize>,
}

impl ClassLabels {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(DeepIdaError::InvalidLabels("label vector is empty".into()));
        }
        let mut class_ids: Vec<u32> = ids.clone();
        class_ids.sort_unstable();
        class_ids.dedup();
        let index = ids
            .iter()
            .map(|id| class_ids.binary_search(id).expect("id present"))
            .collect();
        let mut counts = vec![0usize; class_ids.len()];
        for id in &ids {
            counts[class_ids.binary_search(id).unwrap()] += 1;
        }
        Ok(Self { ids, class_ids, index, counts })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_ids.len()
    }

    /// Ascending distinct class ids.
    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Class index (position in `class_ids`) of sample `i`.
    pub fn class_index(&self, i: usize) -> usize {
        self.index[i]
    }

    pub fn class_indices(&self) -> &[usize] {
        &self.index
    }

    /// Sample positions belonging to class index `k`.
    pub fn members(&self, k: usize) -> Vec<usize> {
        self.index
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c == k).then_some(i))
            .collect()
    }

    /// Labels of the rows in `rows` (duplicates allowed). Classes absent from
    /// the subset disappear; callers needing the full class set must check.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let ids = rows
            .iter()
            .map(|&r| {
                self.ids
                    .get(r)
                    .copied()
                    .ok_or_else(|| DeepIdaError::InvalidInput(format!("row {r} out of range")))
            })
            .collect::<Result<Vec<u32>>>()?;
        Self::new(ids)
    }
}

/// Row-aligned views over one sample set, plus label and naming metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewDataset {
    pub views: Vec<Array2<f64>>,
    pub labels: ClassLabels,
    /// Per-view feature names, aligned with view columns.
    pub feature_names: Vec<Vec<String>>,
    /// Per-view signal indicator (generators only).
    pub signal_mask: Option<Vec<Vec<bool>>>,
}

pub fn default_feature_names(dims: &[usize]) -> Vec<Vec<String>> {
    dims.iter()
        .map(|&p| (1..=p).map(|j| format!("f{j}")).collect())
        .collect()
}

impl MultiViewDataset {
    pub fn new(views: Vec<Array2<f64>>, labels: ClassLabels) -> Result<Self> {
        let names = default_feature_names(&views.iter().map(|v| v.ncols()).collect::<Vec<_>>());
        Self::with_metadata(views, labels, names, None)
    }

    pub fn with_metadata(
        views: Vec<Array2<f64>>,
        labels: ClassLabels,
        feature_names: Vec<Vec<String>>,
        signal_mask: Option<Vec<Vec<bool>>>,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(DeepIdaError::InvalidInput("dataset needs at least one view".into()));
        }
        let n = labels.len();
        for (d, v) in views.iter().enumerate() {
            if v.nrows() != n {
                return Err(DeepIdaError::ShapeMismatch(format!(
                    "view {} has {} rows but labels cover {} samples",
                    d + 1,
                    v.nrows(),
                    n
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(DeepIdaError::InvalidInput(format!(
                    "view {} contains a non-finite value",
                    d + 1
                )));
            }
        }
        if feature_names.len() != views.len() {
            return Err(DeepIdaError::ShapeMismatch("feature name list per view required".into()));
        }
        for (d, (v, names)) in views.iter().zip(&feature_names).enumerate() {
            if v.ncols() != names.len() {
                return Err(DeepIdaError::ShapeMismatch(format!(
                    "view {} has {} columns but {} feature names",
                    d + 1,
                    v.ncols(),
                    names.len()
                )));
            }
        }
        if let Some(mask) = &signal_mask {
            if mask.len() != views.len()
                || mask.iter().zip(&views).any(|(m, v)| m.len() != v.ncols())
            {
                return Err(DeepIdaError::ShapeMismatch("signal mask shape mismatch".into()));
            }
        }
        Ok(Self { views, labels, feature_names, signal_mask })
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.ncols()).collect()
    }

    /// New dataset holding `rows` in order; duplicates allowed (bootstrap).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let labels = self.labels.subset(rows)?;
        let views = self
            .views
            .iter()
            .map(|v| {
                let mut out = Array2::zeros((rows.len(), v.ncols()));
                for (i, &r) in rows.iter().enumerate() {
                    out.row_mut(i).assign(&v.row(r));
                }
                out
            })
            .collect();
        let mask = self.signal_mask.clone();
        Self::with_metadata(views, labels, self.feature_names.clone(), mask)
    }

    /// New dataset keeping, per view, only the columns in `kept` (ascending
    /// order expected). Metadata is sliced along.
    pub fn select_features(&self, kept: &[Vec<usize>]) -> Result<Self> {
        if kept.len() != self.n_views() {
            return Err(DeepIdaError::ShapeMismatch("feature set per view required".into()));
        }
        let mut views = Vec::with_capacity(kept.len());
        let mut names = Vec::with_capacity(kept.len());
        let mut mask = self.signal_mask.as_ref().map(|_| Vec::with_capacity(kept.len()));
        for (d, cols) in kept.iter().enumerate() {
            let v = &self.views[d];
            for &c in cols {
                if c >= v.ncols() {
                    return Err(DeepIdaError::InvalidSelection(format!(
                        "feature {} out of range for view {} ({} columns)",
                        c,
                        d + 1,
                        v.ncols()
                    )));
                }
            }
            let mut out = Array2::zeros((v.nrows(), cols.len()));
            for (j, &c) in cols.iter().enumerate() {
                out.column_mut(j).assign(&v.column(c));
            }
            views.push(out);
            names.push(cols.iter().map(|&c| self.feature_names[d][c].clone()).collect());
            if let (Some(acc), Some(sm)) = (mask.as_mut(), self.signal_mask.as_ref()) {
                acc.push(cols.iter().map(|&c| sm[d][c]).collect());
            }
        }
        Self::with_metadata(views, self.labels.clone(), names, mask)
    }
}
