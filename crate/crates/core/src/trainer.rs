//! Outer training loop: per-view networks driven by the eigenvalue-sum
//! objective, full-batch by default, with optional best-epoch selection
//! against a validation set. The result bundles everything prediction
//! needs — networks, projection, centroids — in one serializable artifact.

use ndarray::Array2;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::classifier::{fit_centroids, CentroidSet, ScoreSpace};
use crate::dataset::{ClassLabels, MultiViewDataset};
use crate::error::{DeepIdaError, Result};
use crate::net::{adam_step, backward, AdamParams, AdamState, LayerSpec, MlpModel, Mode};
use crate::objective::{loss_gradient, loss_value, IdaConfig, IdaProjection};
use crate::seeding::{derive, rng, tags};

/// Bumped whenever the serialized model layout changes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Full-batch training, or stratified minibatches of roughly fixed size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchPolicy {
    Full,
    Size(usize),
}

// Serialized as the string "full" or a positive integer, which is what the
// config file format promises.
impl Serialize for BatchPolicy {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchPolicy::Full => ser.serialize_str("full"),
            BatchPolicy::Size(n) => ser.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchPolicy {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct BatchVisitor;
        impl Visitor<'_> for BatchVisitor {
            type Value = BatchPolicy;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "\"full\" or a positive integer")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<BatchPolicy, E> {
                if v == "full" {
                    Ok(BatchPolicy::Full)
                } else {
                    Err(E::custom(format!("unknown batch size {v:?}; use \"full\" or an integer")))
                }
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<BatchPolicy, E> {
                if v == 0 {
                    Err(E::custom("batch size must be positive"))
                } else {
                    Ok(BatchPolicy::Size(v as usize))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<BatchPolicy, E> {
                if v <= 0 {
                    Err(E::custom("batch size must be positive"))
                } else {
                    Ok(BatchPolicy::Size(v as usize))
                }
            }
        }
        de.deserialize_any(BatchVisitor)
    }
}

/// Keep the last epoch, or snapshot the epoch with the lowest validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationPolicy {
    None,
    BestEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: BatchPolicy,
    pub adam: AdamParams,
    pub ida: IdaConfig,
    pub seed: u64,
    pub validation: ValidationPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: BatchPolicy::Full,
            adam: AdamParams::default(),
            ida: IdaConfig::default(),
            seed: 0,
            validation: ValidationPolicy::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(DeepIdaError::InvalidInput("epochs must be at least 1".into()));
        }
        if self.batch_size == BatchPolicy::Size(0) {
            return Err(DeepIdaError::InvalidInput("batch size must be positive".into()));
        }
        self.adam.validate()?;
        self.ida.validate()
    }
}

/// A trained model set: eval-mode networks, the converged projection, and
/// nearest-centroid classifiers in the pooled and per-view score spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedDeepIda {
    format_version: u32,
    models: Vec<MlpModel>,
    projection: IdaProjection,
    pooled_centroids: CentroidSet,
    view_centroids: Vec<CentroidSet>,
    loss_history: Vec<f64>,
    validation_history: Option<Vec<f64>>,
    best_epoch: Option<usize>,
    config: TrainConfig,
    input_dims: Vec<usize>,
    /// When the model was retrained on a feature subset: per view, the kept
    /// column indices in the original feature space.
    kept_features: Option<Vec<Vec<usize>>>,
    train_scores: Vec<Array2<f64>>,
    class_ids: Vec<u32>,
}

/// Scores per view: `H^d T_d Gamma_d`. One shared code path so the cached
/// training scores and later projections agree bit for bit.
fn score_views(projection: &IdaProjection, h_list: &[Array2<f64>]) -> Vec<Array2<f64>> {
    h_list
        .iter()
        .enumerate()
        .map(|(d, h)| {
            let a = projection.whiteners[d].as_array().dot(&projection.gammas[d]);
            h.dot(&a)
        })
        .collect()
}

/// Eval-mode forward of every view (on clones, so callers keep their state).
fn eval_forward(models: &[MlpModel], data: &MultiViewDataset) -> Result<Vec<Array2<f64>>> {
    models
        .iter()
        .zip(&data.views)
        .map(|(m, x)| {
            let mut m = m.clone();
            m.set_mode(Mode::Eval);
            Ok(m.forward(x)?.0)
        })
        .collect()
}

/// Row indices for each batch of one epoch. Full-batch returns everything in
/// natural order; minibatches deal each class's shuffled members evenly so
/// every class appears at least twice per batch.
fn epoch_batches(
    labels: &ClassLabels,
    batch: BatchPolicy,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    let size = match batch {
        BatchPolicy::Full => return Ok(vec![(0..n).collect()]),
        BatchPolicy::Size(b) => b,
    };
    let n_batches = (n / size).max(1);
    if n_batches == 1 {
        return Ok(vec![(0..n).collect()]);
    }
    let mut r = rng(seed, &[tags::BATCH_SHUFFLE, epoch as u64]);
    let mut batches = vec![Vec::new(); n_batches];
    for k in 0..labels.n_classes() {
        let mut members = labels.members(k);
        if members.len() / n_batches < 2 {
            return Err(DeepIdaError::InvalidBatch(format!(
                "class {} has {} samples across {} batches; every batch needs at least 2 \
                 per class — increase the batch size",
                labels.class_ids()[k],
                members.len(),
                n_batches
            )));
        }
        members.shuffle(&mut r);
        let base = members.len() / n_batches;
        let rem = members.len() % n_batches;
        let mut start = 0;
        for (i, slot) in batches.iter_mut().enumerate() {
            let take = base + usize::from(i < rem);
            slot.extend_from_slice(&members[start..start + take]);
            start += take;
        }
    }
    Ok(batches)
}

/// Trains one network per view against the shared objective.
///
/// Per epoch and batch: forward all views in train mode, solve the coupled
/// eigenproblem, backpropagate the analytic gradient, absorb batch-norm
/// statistics, and take one Adam step per view. With
/// [`ValidationPolicy::BestEpoch`] the epoch with the lowest validation loss
/// is snapshotted; otherwise the final epoch wins. Everything downstream
/// (projection, centroids, cached scores) is computed once afterwards in
/// eval mode.
pub fn fit(
    data: &MultiViewDataset,
    specs: &[Vec<LayerSpec>],
    cfg: &TrainConfig,
    validation: Option<&MultiViewDataset>,
) -> Result<TrainedDeepIda> {
    cfg.validate()?;
    let n = data.n_samples();
    let n_views = data.n_views();
    if specs.len() != n_views {
        return Err(DeepIdaError::ShapeMismatch(format!(
            "{} layer chains for {} views",
            specs.len(),
            n_views
        )));
    }
    for (d, (chain, &p)) in specs.iter().zip(&data.dims()).enumerate() {
        let first = chain.first().ok_or_else(|| {
            DeepIdaError::InvalidSpec(format!("view {} has an empty layer chain", d + 1))
        })?;
        if first.in_dim != p {
            return Err(DeepIdaError::ShapeMismatch(format!(
                "view {} has {} features but its first layer expects {}",
                d + 1,
                p,
                first.in_dim
            )));
        }
        let out = chain.last().expect("nonempty").out_dim;
        if out < cfg.ida.l {
            return Err(DeepIdaError::InvalidInput(format!(
                "view {} network ends at dimension {out}, below l = {}",
                d + 1,
                cfg.ida.l
            )));
        }
    }
    if cfg.ida.l + 1 > data.labels.n_classes() {
        return Err(DeepIdaError::InvalidInput(format!(
            "l = {} needs at least {} classes, found {}",
            cfg.ida.l,
            cfg.ida.l + 1,
            data.labels.n_classes()
        )));
    }
    if let Some(&(mut smallest)) = data.labels.counts().iter().min() {
        smallest = smallest.min(usize::MAX);
        if smallest < 2 {
            return Err(DeepIdaError::InvalidLabels(
                "every class needs at least 2 training samples".into(),
            ));
        }
    }
    if let BatchPolicy::Size(b) = cfg.batch_size {
        if b > n {
            return Err(DeepIdaError::InvalidInput(format!(
                "batch size {b} exceeds the {n} training samples"
            )));
        }
    }
    if cfg.validation == ValidationPolicy::BestEpoch && validation.is_none() {
        return Err(DeepIdaError::InvalidInput(
            "best-epoch selection needs a validation dataset".into(),
        ));
    }
    if let Some(v) = validation {
        if v.dims() != data.dims() {
            return Err(DeepIdaError::ShapeMismatch(
                "validation feature counts differ from training".into(),
            ));
        }
        if v.labels.class_ids() != data.labels.class_ids() {
            return Err(DeepIdaError::InvalidLabels(
                "validation classes differ from training classes".into(),
            ));
        }
    }

    let mut models = (0..n_views)
        .map(|d| MlpModel::init(&specs[d], derive(cfg.seed, &[tags::NET_INIT, d as u64])))
        .collect::<Result<Vec<_>>>()?;
    let mut states: Vec<AdamState> = models.iter().map(AdamState::new).collect();

    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut validation_history =
        (cfg.validation == ValidationPolicy::BestEpoch).then(Vec::new);
    let mut best: Option<(f64, usize, Vec<MlpModel>)> = None;

    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(&data.labels, cfg.batch_size, cfg.seed, epoch)?;
        let mut weighted = 0.0;
        for (bi, rows) in batches.iter().enumerate() {
            let whole;
            let batch: &MultiViewDataset = if rows.len() == n {
                data
            } else {
                whole = data.select_rows(rows)?;
                &whole
            };
            let mut hs = Vec::with_capacity(n_views);
            let mut tapes = Vec::with_capacity(n_views);
            for (m, x) in models.iter().zip(&batch.views) {
                let (h, tape) = m.forward(x)?;
                hs.push(h);
                tapes.push(tape);
            }
            let (loss, proj) =
                loss_value(&hs, &batch.labels, &cfg.ida, cfg.seed).map_err(|e| {
                    DeepIdaError::NumericalFailure(format!(
                        "epoch {epoch}, batch {bi}: {e}"
                    ))
                })?;
            weighted += loss * rows.len() as f64;
            let grads = loss_gradient(&hs, &batch.labels, &cfg.ida, &proj)?;
            for d in 0..n_views {
                let pg = backward(&models[d], &tapes[d], &grads[d])?;
                models[d].absorb_batch_stats(&tapes[d])?;
                adam_step(&mut models[d], &pg, &mut states[d], &cfg.adam)?;
            }
        }
        loss_history.push(weighted / n as f64);

        if let (Some(history), Some(vdata)) = (validation_history.as_mut(), validation) {
            let hs = eval_forward(&models, vdata)?;
            let (vloss, _) = loss_value(&hs, &vdata.labels, &cfg.ida, cfg.seed)?;
            history.push(vloss);
            if best.as_ref().is_none_or(|(b, _, _)| vloss < *b) {
                best = Some((vloss, epoch, models.clone()));
            }
        }
    }

    let (mut final_models, best_epoch) = match best {
        Some((_, epoch, snapshot)) => (snapshot, Some(epoch)),
        None => (models, None),
    };
    for m in &mut final_models {
        m.set_mode(Mode::Eval);
    }

    let hs = eval_forward(&final_models, data)?;
    let (_, projection) = loss_value(&hs, &data.labels, &cfg.ida, cfg.seed)?;
    let train_scores = score_views(&projection, &hs);
    let pooled_centroids = fit_centroids(&train_scores, &data.labels, ScoreSpace::Pooled)?;
    let view_centroids = (0..n_views)
        .map(|d| fit_centroids(&train_scores, &data.labels, ScoreSpace::View(d)))
        .collect::<Result<Vec<_>>>()?;

    Ok(TrainedDeepIda {
        format_version: MODEL_FORMAT_VERSION,
        input_dims: data.dims(),
        models: final_models,
        projection,
        pooled_centroids,
        view_centroids,
        loss_history,
        validation_history,
        best_epoch,
        config: cfg.clone(),
        kept_features: None,
        train_scores,
        class_ids: data.labels.class_ids().to_vec(),
    })
}

impl TrainedDeepIda {
    pub fn n_views(&self) -> usize {
        self.models.len()
    }

    pub fn models(&self) -> &[MlpModel] {
        &self.models
    }

    pub fn projection(&self) -> &IdaProjection {
        &self.projection
    }

    pub fn pooled_centroids(&self) -> &CentroidSet {
        &self.pooled_centroids
    }

    pub fn view_centroids(&self) -> &[CentroidSet] {
        &self.view_centroids
    }

    /// Sample-weighted mean training loss per epoch.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn validation_history(&self) -> Option<&[f64]> {
        self.validation_history.as_deref()
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn kept_features(&self) -> Option<&[Vec<usize>]> {
        self.kept_features.as_deref()
    }

    /// Records the original-space feature indices this model was trained on.
    /// `kept[d]` must be sorted, unique, and as long as the view's input.
    pub fn set_kept_features(&mut self, kept: Vec<Vec<usize>>) -> Result<()> {
        if kept.len() != self.n_views() {
            return Err(DeepIdaError::ShapeMismatch(format!(
                "{} feature lists for {} views",
                kept.len(),
                self.n_views()
            )));
        }
        for (d, (cols, &dim)) in kept.iter().zip(&self.input_dims).enumerate() {
            if cols.len() != dim {
                return Err(DeepIdaError::InvalidSelection(format!(
                    "view {} keeps {} features but the network takes {}",
                    d + 1,
                    cols.len(),
                    dim
                )));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(DeepIdaError::InvalidSelection(format!(
                    "view {} kept-feature indices must be strictly increasing",
                    d + 1
                )));
            }
        }
        self.kept_features = Some(kept);
        Ok(())
    }

    pub fn train_scores(&self) -> &[Array2<f64>] {
        &self.train_scores
    }

    /// Ascending class ids the centroids are aligned with.
    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    /// Eval-mode forward of every view followed by the stored projection.
    /// Data wider than the network is narrowed through the recorded
    /// kept-feature indices when present.
    pub fn project(&self, data: &MultiViewDataset) -> Result<Vec<Array2<f64>>> {
        let narrowed;
        let data = if data.dims() == self.input_dims {
            data
        } else if let Some(kept) = &self.kept_features {
            narrowed = data.select_features(kept)?;
            if narrowed.dims() != self.input_dims {
                return Err(DeepIdaError::ShapeMismatch(
                    "data does not match the model's kept features".into(),
                ));
            }
            &narrowed
        } else {
            let (d, (&have, &want)) = data
                .dims()
                .iter()
                .zip(&self.input_dims)
                .enumerate()
                .find(|(_, (a, b))| a != b)
                .map(|(d, (a, b))| (d, (a, b)))
                .unwrap_or((0, (&0, &0)));
            return Err(DeepIdaError::ShapeMismatch(format!(
                "view {} has {have} features, the model expects {want}",
                d + 1
            )));
        };
        if data.n_views() != self.n_views() {
            return Err(DeepIdaError::ShapeMismatch(format!(
                "{} views given, model has {}",
                data.n_views(),
                self.n_views()
            )));
        }
        let mut hs = Vec::with_capacity(self.n_views());
        for (m, x) in self.models.iter().zip(&data.views) {
            hs.push(m.forward(x)?.0);
        }
        Ok(score_views(&self.projection, &hs))
    }

    /// Nearest-centroid prediction in the chosen score space.
    pub fn predict(&self, data: &MultiViewDataset, space: ScoreSpace) -> Result<Vec<u32>> {
        let scores = self.project(data)?;
        match space {
            ScoreSpace::Pooled => self.pooled_centroids.predict(&scores),
            ScoreSpace::View(d) => self
                .view_centroids
                .get(d)
                .ok_or_else(|| {
                    DeepIdaError::InvalidInput(format!(
                        "view index {d} out of range for {} views",
                        self.n_views()
                    ))
                })?
                .predict(&scores),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self)
            .map_err(|e| DeepIdaError::ParseError(format!("serializing model: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)
            .map_err(|e| DeepIdaError::ParseError(format!("reading model: {e}")))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(DeepIdaError::InvalidInput(format!(
                "model format version {} is not supported (expected {})",
                model.format_version, MODEL_FORMAT_VERSION
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
