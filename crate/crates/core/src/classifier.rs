//! Nearest-centroid classification in the projected score space.
//!
//! Scores arrive as one `n x l` matrix per view. A [`CentroidSet`] lives
//! either in the pooled space (views concatenated in order, dimension
//! `sum l_d`) or in a single view's space, and classifies by minimum
//! Euclidean distance with ties broken toward the lowest class id.

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabels;
use crate::error::{DeepIdaError, Result};
use crate::linalg::class_means;

/// Which score space a centroid set is defined in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSpace {
    /// All views concatenated in view order.
    Pooled,
    /// A single view's scores.
    View(usize),
}

/// Per-class mean scores, one row per class in ascending class-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    space: ScoreSpace,
    centroids: Array2<f64>,
    class_ids: Vec<u32>,
}

/// Assemble the matrix a space works in: pooled concatenation or one view.
fn assemble(scores: &[Array2<f64>], space: ScoreSpace) -> Result<Array2<f64>> {
    if scores.is_empty() {
        return Err(DeepIdaError::InvalidInput("no score matrices given".into()));
    }
    let n = scores[0].nrows();
    for (d, s) in scores.iter().enumerate() {
        if s.nrows() != n {
            return Err(DeepIdaError::ShapeMismatch(format!(
                "view {d} has {} rows, view 0 has {n}",
                s.nrows()
            )));
        }
    }
    match space {
        ScoreSpace::View(d) => scores.get(d).cloned().ok_or_else(|| {
            DeepIdaError::InvalidInput(format!(
                "view index {d} out of range for {} views",
                scores.len()
            ))
        }),
        ScoreSpace::Pooled => {
            let views: Vec<_> = scores.iter().map(|s| s.view()).collect();
            concatenate(Axis(1), &views)
                .map_err(|e| DeepIdaError::ShapeMismatch(format!("pooling scores: {e}")))
        }
    }
}

/// Per-class mean of the scores in `space`.
pub fn fit_centroids(
    scores: &[Array2<f64>],
    labels: &ClassLabels,
    space: ScoreSpace,
) -> Result<CentroidSet> {
    let assembled = assemble(scores, space)?;
    if assembled.nrows() != labels.len() {
        return Err(DeepIdaError::ShapeMismatch(format!(
            "{} score rows vs {} labels",
            assembled.nrows(),
            labels.len()
        )));
    }
    let centroids = class_means(&assembled.view(), labels)?;
    Ok(CentroidSet { space, centroids, class_ids: labels.class_ids().to_vec() })
}

impl CentroidSet {
    pub fn space(&self) -> ScoreSpace {
        self.space
    }

    /// `n_classes x dim` matrix, rows aligned with [`Self::class_ids`].
    pub fn centroids(&self) -> &Array2<f64> {
        &self.centroids
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    /// Classify each row of the assembled scores by nearest centroid.
    /// Exact distance ties go to the earliest (lowest) class id.
    pub fn predict(&self, scores: &[Array2<f64>]) -> Result<Vec<u32>> {
        let assembled = assemble(scores, self.space)?;
        if assembled.ncols() != self.dim() {
            return Err(DeepIdaError::ShapeMismatch(format!(
                "scores have dimension {}, centroids have {}",
                assembled.ncols(),
                self.dim()
            )));
        }
        let mut out = Vec::with_capacity(assembled.nrows());
        for row in assembled.rows() {
            let mut best = 0usize;
            let mut best_dist = f64::INFINITY;
            for (k, centroid) in self.centroids.rows().into_iter().enumerate() {
                let dist: f64 = row
                    .iter()
                    .zip(centroid.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best_dist {
                    best = k;
                    best_dist = dist;
                }
            }
            out.push(self.class_ids[best]);
        }
        Ok(out)
    }
}

/// Fraction of positions where `predicted` equals `actual`.
pub fn accuracy(predicted: &[u32], actual: &[u32]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(DeepIdaError::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(DeepIdaError::InvalidInput("no predictions to score".into()));
    }
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(hits as f64 / predicted.len() as f64)
}
