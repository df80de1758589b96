//! Bootstrap permutation feature ranking.
//!
//! M stratified resamples each train their own model on a random feature
//! subset; every drawn feature is permuted in the out-of-bag rows and a
//! feature scores a hit when that strictly lowers out-of-bag accuracy.
//! Features are ranked by hit proportion across the ensemble, and the top
//! block can be fed back into a final retrain.
//!
//! All randomness is keyed by (master seed, purpose tag, pair index, ...),
//! never by scheduling order, so reports are identical for any worker count.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{accuracy, ScoreSpace};
use crate::dataset::MultiViewDataset;
use crate::error::{DeepIdaError, Result};
use crate::net::NetworkPlan;
use crate::seeding::{derive, rng, tags};
use crate::trainer::{fit, TrainConfig, TrainedDeepIda, ValidationPolicy};

const MAX_DRAW_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    /// Number of bootstrap pairs M.
    pub n_pairs: usize,
    /// Fraction of each view's features drawn per pair.
    pub feature_fraction: f64,
    /// Permutations per (pair, view, feature); a feature is flagged when a
    /// strict majority of them lower the out-of-bag accuracy.
    pub permutations_per_feature: usize,
    /// Training settings for the per-pair models. The seed inside is
    /// ignored here: each pair trains under a seed derived from `seed` and
    /// the pair index.
    pub train: TrainConfig,
    /// Master seed for draws, pair training, and permutations.
    pub seed: u64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            n_pairs: 50,
            feature_fraction: 0.8,
            permutations_per_feature: 1,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl RankingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(DeepIdaError::InvalidInput("need at least one bootstrap pair".into()));
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return Err(DeepIdaError::InvalidInput(format!(
                "feature fraction {} is outside (0, 1]",
                self.feature_fraction
            )));
        }
        if self.permutations_per_feature == 0 {
            return Err(DeepIdaError::InvalidInput(
                "permutations per feature must be at least 1".into(),
            ));
        }
        self.train.validate()
    }
}

/// One resample: in-bag row multiset, its out-of-bag complement, and the
/// feature subset drawn for every view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPair {
    pub index: usize,
    /// Size-n draw with replacement, stratified so per-class counts equal
    /// the originals exactly.
    pub sample_in: Vec<usize>,
    /// Ascending complement of the distinct in-bag rows; never empty.
    pub sample_oob: Vec<usize>,
    /// Per view: ascending unique feature indices, `round(fraction * p_d)`
    /// of them.
    pub feature_sets: Vec<Vec<usize>>,
}

/// Outcome of one pair's train-and-permute job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub index: usize,
    /// Pooled nearest-centroid accuracy on the unpermuted out-of-bag rows.
    pub baseline_accuracy: f64,
    /// The pair's feature sets (so results stand alone).
    pub features: Vec<Vec<usize>>,
    /// Aligned with `features`: did permuting this feature lower accuracy?
    pub flagged: Vec<Vec<bool>>,
}

/// Per-feature tally: `hits` pairs saw an accuracy drop out of `draws`
/// pairs that included the feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub feature: usize,
    pub hits: usize,
    pub draws: usize,
    /// hits / draws; 0 when the feature was never drawn.
    pub proportion: f64,
    /// 1-based position after sorting by proportion (ties: lower feature
    /// index first). `None` when the feature was never drawn.
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    /// Per view: stats in rank order, never-drawn features at the tail.
    pub per_view: Vec<Vec<FeatureStat>>,
    /// (pair index, baseline accuracy) for every successful pair.
    pub baselines: Vec<(usize, f64)>,
}

/// A ranking run with its per-pair failure log (failed pairs are excluded
/// from the report).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRun {
    pub report: RankingReport,
    pub failures: Vec<(usize, String)>,
}

/// How many top-ranked features to keep per view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    Count(usize),
    /// Fraction of the view's width, rounded up: 10% of 66 keeps 7.
    Fraction(f64),
}

impl Selection {
    pub fn resolve(&self, view_width: usize) -> Result<usize> {
        let r = match *self {
            Selection::Count(r) => r,
            Selection::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(DeepIdaError::InvalidSelection(format!(
                        "selection fraction {f} is outside (0, 1]"
                    )));
                }
                (f * view_width as f64).ceil() as usize
            }
        };
        if r == 0 {
            return Err(DeepIdaError::InvalidSelection("cannot keep zero features".into()));
        }
        Ok(r)
    }
}

/// Draws `n_pairs` stratified bootstrap pairs. In-bag draws keep every
/// class's count exactly; a draw whose out-of-bag set comes up empty is
/// retried (up to 100 attempts, then [`DeepIdaError::StratificationFailure`]).
pub fn draw_pairs(
    data: &MultiViewDataset,
    n_pairs: usize,
    feature_fraction: f64,
    seed: u64,
) -> Result<Vec<BootstrapPair>> {
    if n_pairs == 0 {
        return Err(DeepIdaError::InvalidInput("need at least one bootstrap pair".into()));
    }
    if !(feature_fraction > 0.0 && feature_fraction <= 1.0) {
        return Err(DeepIdaError::InvalidInput(format!(
            "feature fraction {feature_fraction} is outside (0, 1]"
        )));
    }
    let labels = &data.labels;
    if labels.counts().iter().any(|&c| c < 2) {
        return Err(DeepIdaError::InvalidLabels(
            "every class needs at least 2 samples to resample".into(),
        ));
    }
    let dims = data.dims();
    let keep: Vec<usize> = dims
        .iter()
        .map(|&p| (feature_fraction * p as f64).round() as usize)
        .collect();
    for (d, (&k, &p)) in keep.iter().zip(&dims).enumerate() {
        if k == 0 {
            return Err(DeepIdaError::InvalidInput(format!(
                "feature fraction {feature_fraction} keeps no features of view {} ({p} columns)",
                d + 1
            )));
        }
    }

    let n = labels.len();
    let members: Vec<Vec<usize>> = (0..labels.n_classes()).map(|k| labels.members(k)).collect();
    (0..n_pairs)
        .map(|m| {
            for attempt in 0..MAX_DRAW_ATTEMPTS {
                let mut r = rng(seed, &[tags::PAIR_DRAW, m as u64, attempt as u64]);
                let mut sample_in = Vec::with_capacity(n);
                for rows in &members {
                    for _ in 0..rows.len() {
                        sample_in.push(rows[r.random_range(0..rows.len())]);
                    }
                }
                let mut in_bag = vec![false; n];
                for &i in &sample_in {
                    in_bag[i] = true;
                }
                let sample_oob: Vec<usize> =
                    (0..n).filter(|&i| !in_bag[i]).collect();
                if sample_oob.is_empty() {
                    continue;
                }
                let feature_sets = keep
                    .iter()
                    .zip(&dims)
                    .map(|(&k, &p)| {
                        let mut cols = index::sample(&mut r, p, k).into_vec();
                        cols.sort_unstable();
                        cols
                    })
                    .collect();
                return Ok(BootstrapPair { index: m, sample_in, sample_oob, feature_sets });
            }
            Err(DeepIdaError::StratificationFailure(format!(
                "pair {m}: no non-empty out-of-bag draw in {MAX_DRAW_ATTEMPTS} attempts"
            )))
        })
        .collect()
}

/// Trains on the pair's in-bag rows and feature subset, then permutes each
/// drawn feature in the out-of-bag rows — one seeded permutation per
/// (pair, view, feature, repeat), predictions from the single trained
/// model — and flags features whose permutations lower pooled accuracy in
/// a strict majority of repeats.
pub fn run_pair(
    pair: &BootstrapPair,
    data: &MultiViewDataset,
    plans: &[NetworkPlan],
    cfg: &RankingConfig,
) -> Result<PairResult> {
    cfg.validate()?;
    if plans.len() != data.n_views() {
        return Err(DeepIdaError::ShapeMismatch(format!(
            "{} network plans for {} views",
            plans.len(),
            data.n_views()
        )));
    }
    let in_data = data.select_rows(&pair.sample_in)?.select_features(&pair.feature_sets)?;
    let oob_data = data.select_rows(&pair.sample_oob)?.select_features(&pair.feature_sets)?;

    let specs = plans
        .iter()
        .zip(&in_data.dims())
        .map(|(plan, &p)| plan.layer_specs(p))
        .collect::<Result<Vec<_>>>()?;
    let train_cfg = TrainConfig {
        seed: derive(cfg.seed, &[tags::PAIR_TRAIN, pair.index as u64]),
        validation: ValidationPolicy::None,
        ..cfg.train.clone()
    };
    let model = fit(&in_data, &specs, &train_cfg, None)?;

    let truth = oob_data.labels.ids();
    let baseline = accuracy(&model.predict(&oob_data, ScoreSpace::Pooled)?, truth)?;

    let n_oob = oob_data.n_samples();
    let mut flagged = Vec::with_capacity(pair.feature_sets.len());
    for (d, cols) in pair.feature_sets.iter().enumerate() {
        let mut view_flags = Vec::with_capacity(cols.len());
        for (j, &k) in cols.iter().enumerate() {
            let mut drops = 0usize;
            for rep in 0..cfg.permutations_per_feature {
                let mut order: Vec<usize> = (0..n_oob).collect();
                let mut r = rng(
                    cfg.seed,
                    &[tags::PERMUTE, pair.index as u64, d as u64, k as u64, rep as u64],
                );
                order.shuffle(&mut r);
                let mut permuted = oob_data.clone();
                let col = permuted.views[d].column(j).to_owned();
                for (i, &src) in order.iter().enumerate() {
                    permuted.views[d][(i, j)] = col[src];
                }
                let acc = accuracy(&model.predict(&permuted, ScoreSpace::Pooled)?, truth)?;
                if acc < baseline {
                    drops += 1;
                }
            }
            view_flags.push(2 * drops > cfg.permutations_per_feature);
        }
        flagged.push(view_flags);
    }
    Ok(PairResult {
        index: pair.index,
        baseline_accuracy: baseline,
        features: pair.feature_sets.clone(),
        flagged,
    })
}

/// Tallies hit and draw counts per feature and ranks by proportion.
/// `dims` gives each view's width so never-drawn features appear (unranked)
/// too.
pub fn aggregate(results: &[PairResult], dims: &[usize]) -> Result<RankingReport> {
    if results.is_empty() {
        return Err(DeepIdaError::NoResults("no successful bootstrap pairs".into()));
    }
    let mut hits: Vec<Vec<usize>> = dims.iter().map(|&p| vec![0; p]).collect();
    let mut draws: Vec<Vec<usize>> = dims.iter().map(|&p| vec![0; p]).collect();
    let mut baselines: Vec<(usize, f64)> =
        results.iter().map(|r| (r.index, r.baseline_accuracy)).collect();
    baselines.sort_by_key(|&(m, _)| m);

    for res in results {
        if res.features.len() != dims.len() || res.flagged.len() != dims.len() {
            return Err(DeepIdaError::ShapeMismatch(format!(
                "pair {} covers {} views, expected {}",
                res.index,
                res.features.len(),
                dims.len()
            )));
        }
        for (d, (cols, flags)) in res.features.iter().zip(&res.flagged).enumerate() {
            if cols.len() != flags.len() {
                return Err(DeepIdaError::ShapeMismatch(format!(
                    "pair {} view {}: {} features but {} flags",
                    res.index,
                    d + 1,
                    cols.len(),
                    flags.len()
                )));
            }
            for (&k, &hit) in cols.iter().zip(flags) {
                if k >= dims[d] {
                    return Err(DeepIdaError::ShapeMismatch(format!(
                        "pair {} flags feature {k} beyond view {}'s {} columns",
                        res.index,
                        d + 1,
                        dims[d]
                    )));
                }
                draws[d][k] += 1;
                hits[d][k] += usize::from(hit);
            }
        }
    }

    let per_view = dims
        .iter()
        .enumerate()
        .map(|(d, &p)| {
            let mut ranked: Vec<FeatureStat> = (0..p)
                .filter(|&k| draws[d][k] > 0)
                .map(|k| FeatureStat {
                    feature: k,
                    hits: hits[d][k],
                    draws: draws[d][k],
                    proportion: hits[d][k] as f64 / draws[d][k] as f64,
                    rank: None,
                })
                .collect();
            ranked.sort_by(|a, b| {
                b.proportion
                    .partial_cmp(&a.proportion)
                    .expect("proportions are finite")
                    .then(a.feature.cmp(&b.feature))
            });
            for (pos, stat) in ranked.iter_mut().enumerate() {
                stat.rank = Some(pos + 1);
            }
            ranked.extend((0..p).filter(|&k| draws[d][k] == 0).map(|k| FeatureStat {
                feature: k,
                hits: 0,
                draws: 0,
                proportion: 0.0,
                rank: None,
            }));
            ranked
        })
        .collect();
    Ok(RankingReport { per_view, baselines })
}

impl RankingReport {
    pub fn n_views(&self) -> usize {
        self.per_view.len()
    }

    /// The view's top `r` ranked feature indices, ascending. Errors when
    /// fewer than `r` features were ever drawn.
    pub fn top_features(&self, view: usize, r: usize) -> Result<Vec<usize>> {
        if r == 0 {
            return Err(DeepIdaError::InvalidSelection("cannot keep zero features".into()));
        }
        let stats = self.per_view.get(view).ok_or_else(|| {
            DeepIdaError::InvalidInput(format!(
                "view index {view} out of range for {} views",
                self.n_views()
            ))
        })?;
        let ranked = stats.iter().filter(|s| s.rank.is_some()).count();
        if r > ranked {
            return Err(DeepIdaError::InvalidSelection(format!(
                "view {}: asked for {r} features but only {ranked} were ever drawn",
                view + 1
            )));
        }
        let mut top: Vec<usize> = stats[..r].iter().map(|s| s.feature).collect();
        top.sort_unstable();
        Ok(top)
    }

    /// Delimited table: view, feature index (1-based, matching the default
    /// `f{j}` names), name, hits, draws, proportion, rank (empty when never
    /// drawn).
    pub fn export_table(&self, names: &[Vec<String>]) -> Result<String> {
        if names.len() != self.n_views() {
            return Err(DeepIdaError::ShapeMismatch(format!(
                "{} name lists for {} views",
                names.len(),
                self.n_views()
            )));
        }
        let mut out = String::from("view,feature,name,hits,draws,proportion,rank\n");
        for (d, stats) in self.per_view.iter().enumerate() {
            for s in stats {
                let name = names[d].get(s.feature).ok_or_else(|| {
                    DeepIdaError::ShapeMismatch(format!(
                        "no name for view {} feature {}",
                        d + 1,
                        s.feature
                    ))
                })?;
                let rank = s.rank.map(|r| r.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    d + 1,
                    s.feature + 1,
                    name,
                    s.hits,
                    s.draws,
                    s.proportion,
                    rank
                ));
            }
        }
        Ok(out)
    }
}

/// The full ensemble: draw pairs, run them across the current rayon pool,
/// aggregate the survivors. Fails with [`DeepIdaError::NoResults`] only if
/// every pair failed.
pub fn rank_features(
    data: &MultiViewDataset,
    plans: &[NetworkPlan],
    cfg: &RankingConfig,
) -> Result<RankingRun> {
    cfg.validate()?;
    let pairs = draw_pairs(data, cfg.n_pairs, cfg.feature_fraction, cfg.seed)?;
    let outcomes: Vec<(usize, Result<PairResult>)> = pairs
        .par_iter()
        .map(|pair| (pair.index, run_pair(pair, data, plans, cfg)))
        .collect();

    let mut results = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (m, outcome) in outcomes {
        match outcome {
            Ok(res) => results.push(res),
            Err(e) => {
                log::warn!("bootstrap pair {m} failed: {e}");
                failures.push((m, e.to_string()));
            }
        }
    }
    if results.is_empty() {
        let (m, first) = failures.first().expect("at least one pair ran");
        return Err(DeepIdaError::NoResults(format!(
            "all {} bootstrap pairs failed; pair {m}: {first}",
            cfg.n_pairs
        )));
    }
    let report = aggregate(&results, &data.dims())?;
    Ok(RankingRun { report, failures })
}

/// Keeps each view's top-ranked features and retrains on the full sample
/// set. The returned model records the kept indices and narrows matching
/// full-width data by itself at prediction time.
pub fn select_and_retrain(
    data: &MultiViewDataset,
    report: &RankingReport,
    selection: Selection,
    plans: &[NetworkPlan],
    train_cfg: &TrainConfig,
) -> Result<TrainedDeepIda> {
    if report.n_views() != data.n_views() {
        return Err(DeepIdaError::ShapeMismatch(format!(
            "report covers {} views, data has {}",
            report.n_views(),
            data.n_views()
        )));
    }
    let kept = data
        .dims()
        .iter()
        .enumerate()
        .map(|(d, &p)| report.top_features(d, selection.resolve(p)?))
        .collect::<Result<Vec<_>>>()?;
    let reduced = data.select_features(&kept)?;
    let specs = plans
        .iter()
        .zip(&reduced.dims())
        .map(|(plan, &p)| plan.layer_specs(p))
        .collect::<Result<Vec<_>>>()?;
    let mut model = fit(&reduced, &specs, train_cfg, None)?;
    model.set_kept_features(kept)?;
    Ok(model)
}
