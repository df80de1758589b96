//! The five commands: simulate, train, rank, predict, evaluate.

use std::path::{Path, PathBuf};

use clap::Args;
use ndarray::Array2;
use serde::Serialize;

use deep_ida::classifier::{accuracy, ScoreSpace};
use deep_ida::dataset::{ClassLabels, MultiViewDataset};
use deep_ida::error::{DeepIdaError, Result};
use deep_ida::ranking::{rank_features, select_and_retrain, Selection};
use deep_ida::simgen::{gen_linear, gen_nonlinear, LinearSimSpec, NonlinearSimSpec};
use deep_ida::trainer::{fit, TrainedDeepIda};

use crate::config::{resolve, ConfigFlags, EffectiveConfig, Resolved, RunConfig};
use crate::io;

// ---------------------------------------------------------------- simulate

#[derive(Debug, Args)]
pub struct SimulateLinearArgs {
    /// Number of views (defaults to the length of --p).
    #[arg(long)]
    pub d: Option<usize>,
    /// Features per view, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<usize>,
    /// Samples per class: one shared value or three comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub nk: Vec<usize>,
    /// Mean separation scale per view (default 0.2,0.1,0.05 truncated).
    #[arg(long, value_delimiter = ',')]
    pub mean_scale: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateNonlinearArgs {
    /// Features per view: one value, or two equal comma-separated values
    /// (view 2 is derived from view 1 column by column).
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<usize>,
    /// Samples per class: one shared value or two comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long)]
    pub signal_fraction: Option<f64>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a, S: Serialize> {
    version: &'static str,
    design: &'a str,
    spec: &'a S,
    files: ManifestFiles,
}

#[derive(Serialize)]
struct ManifestFiles {
    views: Vec<String>,
    labels: String,
    mask: String,
}

fn write_sim_output<S: Serialize>(
    out: &Path,
    data: &MultiViewDataset,
    design: &str,
    spec: &S,
) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| {
        DeepIdaError::Io(std::io::Error::new(
            e.kind(),
            format!("output directory {}: {e}", out.display()),
        ))
    })?;
    let view_files: Vec<String> = (1..=data.n_views()).map(|d| format!("view{d}.csv")).collect();
    for (d, file) in view_files.iter().enumerate() {
        io::write_view(&out.join(file), &data.feature_names[d], &data.views[d])?;
    }
    io::write_labels(&out.join("labels.csv"), data.labels.ids())?;
    io::write_mask(&out.join("mask.csv"), data)?;
    io::write_json(
        &out.join("manifest.json"),
        &Manifest {
            version: io::VERSION,
            design,
            spec,
            files: ManifestFiles {
                views: view_files,
                labels: "labels.csv".into(),
                mask: "mask.csv".into(),
            },
        },
    )?;
    println!(
        "wrote {} samples, {} views {:?} to {}",
        data.n_samples(),
        data.n_views(),
        data.dims(),
        out.display()
    );
    Ok(())
}

pub fn simulate_linear(args: &SimulateLinearArgs) -> Result<()> {
    if let Some(d) = args.d {
        if d != args.p.len() {
            return Err(DeepIdaError::InvalidInput(format!(
                "--d {d} disagrees with {} entries in --p",
                args.p.len()
            )));
        }
    }
    let n_per_class: [usize; 3] = match args.nk.as_slice() {
        [n] => [*n; 3],
        [a, b, c] => [*a, *b, *c],
        other => {
            return Err(DeepIdaError::InvalidInput(format!(
                "--nk takes 1 or 3 values, got {}",
                other.len()
            )))
        }
    };
    let mut spec = LinearSimSpec::new(args.p.clone(), n_per_class, args.seed)?;
    if let Some(scale) = &args.mean_scale {
        spec.mean_scale = scale.clone();
        spec.validate()?;
    }
    let data = gen_linear(&spec)?;
    write_sim_output(&args.out, &data, "linear", &spec)
}

pub fn simulate_nonlinear(args: &SimulateNonlinearArgs) -> Result<()> {
    let p = match args.p.as_slice() {
        [p] => *p,
        [a, b] if a == b => *a,
        [a, b] => {
            return Err(DeepIdaError::InvalidSpec(format!(
                "view 2 is derived from view 1, so widths must match; got {a},{b}"
            )))
        }
        other => {
            return Err(DeepIdaError::InvalidInput(format!(
                "--p takes 1 or 2 values, got {}",
                other.len()
            )))
        }
    };
    let n_per_class: [usize; 2] = match args.n.as_slice() {
        [n] => [*n; 2],
        [a, b] => [*a, *b],
        other => {
            return Err(DeepIdaError::InvalidInput(format!(
                "--n takes 1 or 2 values, got {}",
                other.len()
            )))
        }
    };
    let mut spec = NonlinearSimSpec::new(p, n_per_class, args.seed)?;
    if let Some(f) = args.signal_fraction {
        spec.signal_fraction = f;
    }
    if let Some(s) = args.noise_scale {
        spec.noise_scale = s;
    }
    spec.validate()?;
    let data = gen_nonlinear(&spec)?;
    write_sim_output(&args.out, &data, "nonlinear", &spec)
}

// ------------------------------------------------------------------- train

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// View CSVs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub views: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Validation view CSVs (enables --best-epoch).
    #[arg(long, value_delimiter = ',')]
    pub valid_views: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub valid_labels: Option<PathBuf>,
    /// Held-out test view CSVs for the metrics report.
    #[arg(long, value_delimiter = ',')]
    pub test_views: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long, default_value = "model.json")]
    pub model_out: PathBuf,
    #[arg(long, default_value = "metrics.json")]
    pub metrics_out: PathBuf,
    #[command(flatten)]
    pub overrides: ConfigFlags,
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Flags override config paths; both may name the training files.
fn required_data(
    flag_views: &Option<Vec<PathBuf>>,
    flag_labels: &Option<PathBuf>,
    cfg: &RunConfig,
) -> Result<(Vec<PathBuf>, PathBuf)> {
    let views = flag_views
        .clone()
        .or_else(|| cfg.views.clone())
        .ok_or_else(|| {
            DeepIdaError::InvalidInput(
                "no view files given; pass --views or set \"views\" in the config".into(),
            )
        })?;
    let labels = flag_labels
        .clone()
        .or_else(|| cfg.labels.clone())
        .ok_or_else(|| {
            DeepIdaError::InvalidInput(
                "no labels file given; pass --labels or set \"labels\" in the config".into(),
            )
        })?;
    Ok((views, labels))
}

fn optional_data(
    flag_views: &Option<Vec<PathBuf>>,
    flag_labels: &Option<PathBuf>,
    cfg_views: &Option<Vec<PathBuf>>,
    cfg_labels: &Option<PathBuf>,
    what: &str,
) -> Result<Option<MultiViewDataset>> {
    let views = flag_views.clone().or_else(|| cfg_views.clone());
    let labels = flag_labels.clone().or_else(|| cfg_labels.clone());
    match (views, labels) {
        (Some(v), Some(l)) => Ok(Some(io::load_dataset(&v, &l)?)),
        (None, None) => Ok(None),
        _ => Err(DeepIdaError::InvalidInput(format!(
            "{what} needs both view files and a labels file"
        ))),
    }
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    version: &'static str,
    config: &'a EffectiveConfig,
    n_train: usize,
    n_classes: usize,
    class_ids: &'a [u32],
    final_loss: f64,
    loss_history: &'a [f64],
    best_epoch: Option<usize>,
    validation_history: Option<&'a [f64]>,
    train_accuracy: f64,
    per_view_train_accuracy: Vec<f64>,
    validation_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
}

fn pooled_accuracy(model: &TrainedDeepIda, data: &MultiViewDataset) -> Result<f64> {
    let predicted = model.predict(data, ScoreSpace::Pooled)?;
    accuracy(&predicted, data.labels.ids())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let (view_paths, labels_path) = required_data(&args.views, &args.labels, &cfg)?;
    let data = io::load_dataset(&view_paths, &labels_path)?;
    let valid = optional_data(
        &args.valid_views,
        &args.valid_labels,
        &cfg.valid_views,
        &cfg.valid_labels,
        "validation set",
    )?;
    let test = optional_data(
        &args.test_views,
        &args.test_labels,
        &cfg.test_views,
        &cfg.test_labels,
        "test set",
    )?;

    let resolved = resolve(&cfg, &args.overrides, &data.dims(), data.labels.n_classes())?;
    let specs = layer_specs(&resolved, &data.dims())?;
    let model = fit(&data, &specs, &resolved.train_config(), valid.as_ref())?;

    let train_accuracy = pooled_accuracy(&model, &data)?;
    let per_view_train_accuracy = (0..data.n_views())
        .map(|d| {
            let predicted = model.predict(&data, ScoreSpace::View(d))?;
            accuracy(&predicted, data.labels.ids())
        })
        .collect::<Result<Vec<_>>>()?;
    let validation_accuracy = valid
        .as_ref()
        .map(|v| pooled_accuracy(&model, v))
        .transpose()?;
    let test_accuracy = test
        .as_ref()
        .map(|t| pooled_accuracy(&model, t))
        .transpose()?;

    model.save(&args.model_out)?;
    let final_loss = *model.loss_history().last().expect("at least one epoch");
    io::write_json(
        &args.metrics_out,
        &TrainMetrics {
            version: io::VERSION,
            config: &resolved.effective,
            n_train: data.n_samples(),
            n_classes: data.labels.n_classes(),
            class_ids: model.class_ids(),
            final_loss,
            loss_history: model.loss_history(),
            best_epoch: model.best_epoch(),
            validation_history: model.validation_history(),
            train_accuracy,
            per_view_train_accuracy,
            validation_accuracy,
            test_accuracy,
        },
    )?;
    println!(
        "trained {} epochs, final loss {final_loss}, pooled train accuracy {train_accuracy}; model -> {}, metrics -> {}",
        model.loss_history().len(),
        args.model_out.display(),
        args.metrics_out.display()
    );
    Ok(())
}

fn layer_specs(
    resolved: &Resolved,
    dims: &[usize],
) -> Result<Vec<Vec<deep_ida::net::LayerSpec>>> {
    resolved
        .plans
        .iter()
        .zip(dims)
        .map(|(plan, &p)| plan.layer_specs(p))
        .collect()
}

// -------------------------------------------------------------------- rank

#[derive(Debug, Args)]
pub struct RankArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// View CSVs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub views: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Held-out test views for post-selection accuracy.
    #[arg(long, value_delimiter = ',')]
    pub test_views: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    /// Bootstrap pairs to draw.
    #[arg(long = "m")]
    pub n_pairs: Option<usize>,
    /// Fraction of features drawn per pair.
    #[arg(long)]
    pub feature_fraction: Option<f64>,
    /// Permutation repeats per drawn feature.
    #[arg(long = "permutations")]
    pub permutations_per_feature: Option<usize>,
    /// List this many top features per view in the summary.
    #[arg(long = "top")]
    pub top_r: Option<usize>,
    /// Retrain on the top R features per view and report accuracy.
    #[arg(long)]
    pub retrain_top: Option<usize>,
    /// Where to save the retrained model (only with --retrain-top).
    #[arg(long)]
    pub retrain_model_out: Option<PathBuf>,
    #[arg(long, default_value = "ranking.csv")]
    pub rank_out: PathBuf,
    #[arg(long, default_value = "ranking_summary.json")]
    pub summary_out: PathBuf,
    #[command(flatten)]
    pub overrides: ConfigFlags,
}

#[derive(Serialize)]
struct TopFeature {
    feature: usize,
    name: String,
    hits: usize,
    draws: usize,
    proportion: f64,
}

#[derive(Serialize)]
struct PostSelection {
    kept_features: Vec<Vec<String>>,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct RankSummary<'a> {
    version: &'static str,
    config: &'a EffectiveConfig,
    n_pairs_completed: usize,
    baselines: &'a [(usize, f64)],
    failures: &'a [(usize, String)],
    top_features: Option<Vec<Vec<TopFeature>>>,
    post_selection: Option<PostSelection>,
}

pub fn rank(args: &RankArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let (view_paths, labels_path) = required_data(&args.views, &args.labels, &cfg)?;
    let data = io::load_dataset(&view_paths, &labels_path)?;
    let test = optional_data(
        &args.test_views,
        &args.test_labels,
        &cfg.test_views,
        &cfg.test_labels,
        "test set",
    )?;

    let mut resolved = resolve(&cfg, &args.overrides, &data.dims(), data.labels.n_classes())?;
    if let Some(m) = args.n_pairs {
        resolved.effective.n_pairs = m;
    }
    if let Some(f) = args.feature_fraction {
        resolved.effective.feature_fraction = f;
    }
    if let Some(r) = args.permutations_per_feature {
        resolved.effective.permutations_per_feature = r;
    }
    if let Some(t) = args.top_r {
        resolved.effective.top_r = Some(t);
    }

    let run = rank_features(&data, &resolved.plans, &resolved.ranking_config())?;
    io::write_table(&args.rank_out, &run.report.export_table(&data.feature_names)?)?;

    let top_features = resolved
        .effective
        .top_r
        .map(|r| {
            run.report
                .per_view
                .iter()
                .enumerate()
                .map(|(d, stats)| {
                    let ranked = stats.iter().filter(|s| s.rank.is_some()).count();
                    let take = r.min(ranked);
                    let mut rows = Vec::with_capacity(take);
                    for s in stats.iter().take(take) {
                        rows.push(TopFeature {
                            feature: s.feature + 1,
                            name: data.feature_names[d][s.feature].clone(),
                            hits: s.hits,
                            draws: s.draws,
                            proportion: s.proportion,
                        });
                    }
                    rows
                })
                .collect::<Vec<_>>()
        });

    let post_selection = match args.retrain_top {
        Some(r) => {
            let model = select_and_retrain(
                &data,
                &run.report,
                Selection::Count(r),
                &resolved.plans,
                &resolved.train_config(),
            )?;
            let kept_features = model
                .kept_features()
                .map(|kept| {
                    kept.iter()
                        .enumerate()
                        .map(|(d, cols)| {
                            cols.iter()
                                .map(|&j| data.feature_names[d][j].clone())
                                .collect()
                        })
                        .collect()
                })
                .unwrap_or_default();
            let train_accuracy = pooled_accuracy(&model, &data)?;
            let test_accuracy = test
                .as_ref()
                .map(|t| pooled_accuracy(&model, t))
                .transpose()?;
            if let Some(path) = &args.retrain_model_out {
                model.save(path)?;
            }
            Some(PostSelection {
                kept_features,
                train_accuracy,
                test_accuracy,
            })
        }
        None => None,
    };

    io::write_json(
        &args.summary_out,
        &RankSummary {
            version: io::VERSION,
            config: &resolved.effective,
            n_pairs_completed: run.report.baselines.len(),
            baselines: &run.report.baselines,
            failures: &run.failures,
            top_features,
            post_selection,
        },
    )?;
    println!(
        "ranked {} views over {} pairs ({} failed); table -> {}, summary -> {}",
        data.n_views(),
        resolved.effective.n_pairs,
        run.failures.len(),
        args.rank_out.display(),
        args.summary_out.display()
    );
    Ok(())
}

// ----------------------------------------------------------------- predict

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// View CSVs, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub views: Vec<PathBuf>,
    #[arg(long, default_value = "predictions.csv")]
    pub out: PathBuf,
}

/// Views without labels: projection and centroid scoring never read them,
/// so a constant placeholder label vector carries the rows.
fn unlabeled_dataset(view_paths: &[PathBuf]) -> Result<MultiViewDataset> {
    let mut names = Vec::with_capacity(view_paths.len());
    let mut matrices = Vec::with_capacity(view_paths.len());
    for (d, path) in view_paths.iter().enumerate() {
        let (view_names, matrix) = io::read_view(path, d)?;
        names.push(view_names);
        matrices.push(matrix);
    }
    let n = matrices.first().map_or(0, Array2::nrows);
    MultiViewDataset::with_metadata(matrices, ClassLabels::new(vec![1; n])?, names, None)
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let model = TrainedDeepIda::load(&args.model)?;
    let data = unlabeled_dataset(&args.views)?;
    let scores = model.project(&data)?;
    let predicted = model.predict(&data, ScoreSpace::Pooled)?;

    let centroids = model.pooled_centroids();
    let class_ids = centroids.class_ids().to_vec();
    let n = data.n_samples();
    let l = scores[0].ncols();

    let mut header: Vec<String> = vec!["row".into(), "predicted".into()];
    for d in 1..=scores.len() {
        for r in 1..=l {
            header.push(format!("v{d}_s{r}"));
        }
    }
    for id in &class_ids {
        header.push(format!("pooled_dist_{id}"));
    }

    let pooled_dim: usize = scores.iter().map(Array2::ncols).sum();
    let mut pooled = Array2::zeros((n, pooled_dim));
    let mut offset = 0;
    for s in &scores {
        pooled
            .slice_mut(ndarray::s![.., offset..offset + s.ncols()])
            .assign(s);
        offset += s.ncols();
    }

    let centroid_matrix = centroids.centroids();
    let rows = (0..n).map(|i| {
        let mut row = vec![format!("{}", i + 1), format!("{}", predicted[i])];
        for s in &scores {
            for r in 0..l {
                row.push(format!("{}", s[[i, r]]));
            }
        }
        for k in 0..class_ids.len() {
            let mut dist2 = 0.0;
            for c in 0..pooled_dim {
                let diff = pooled[[i, c]] - centroid_matrix[[k, c]];
                dist2 += diff * diff;
            }
            row.push(format!("{}", dist2.sqrt()));
        }
        row
    });
    io::write_csv(&args.out, &header, rows)?;
    println!("predicted {n} rows -> {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// View CSVs, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub views: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub labels: PathBuf,
    #[arg(long, default_value = "evaluation.json")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    version: &'static str,
    n_samples: usize,
    n_classes: usize,
    class_ids: &'a [u32],
    pooled_accuracy: f64,
    per_view_accuracy: Vec<f64>,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let model = TrainedDeepIda::load(&args.model)?;
    let data = io::load_dataset(&args.views, &args.labels)?;
    let pooled = pooled_accuracy(&model, &data)?;
    let per_view = (0..data.n_views())
        .map(|d| {
            let predicted = model.predict(&data, ScoreSpace::View(d))?;
            accuracy(&predicted, data.labels.ids())
        })
        .collect::<Result<Vec<_>>>()?;
    io::write_json(
        &args.out,
        &EvaluationReport {
            version: io::VERSION,
            n_samples: data.n_samples(),
            n_classes: data.labels.n_classes(),
            class_ids: model.class_ids(),
            pooled_accuracy: pooled,
            per_view_accuracy: per_view.clone(),
        },
    )?;
    println!(
        "pooled accuracy {pooled}, per view {per_view:?} -> {}",
        args.out.display()
    );
    Ok(())
}
