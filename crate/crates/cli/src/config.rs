//! Run configuration: file document, flag overrides, and the fully
//! materialized effective config echoed into every report.
//!
//! Precedence is defaults < config file < command-line flags. The effective
//! config deliberately excludes paths and worker counts so that artifacts
//! from the same seed are byte-identical regardless of where files live or
//! how many threads ran.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use deep_ida::error::{DeepIdaError, Result};
use deep_ida::net::{Activation, NetworkPlan};
use deep_ida::objective::IdaConfig;
use deep_ida::linalg::RidgePolicy;
use deep_ida::net::AdamParams;
use deep_ida::ranking::RankingConfig;
use deep_ida::trainer::{BatchPolicy, TrainConfig, ValidationPolicy};

/// Config file document. Every field is optional; omitted fields fall back
/// to defaults. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // objective
    pub rho: Option<f64>,
    pub latent_dim: Option<usize>,
    pub ridge: Option<f64>,
    pub eps_gamma: Option<f64>,
    pub max_gamma_iters: Option<usize>,
    // training
    pub epochs: Option<usize>,
    pub batch_size: Option<BatchPolicy>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub best_epoch: Option<bool>,
    // architecture: hidden widths, one list per view or a single shared list
    pub layers: Option<Vec<Vec<usize>>>,
    pub output_dim: Option<usize>,
    // ranking
    pub n_pairs: Option<usize>,
    pub feature_fraction: Option<f64>,
    pub permutations_per_feature: Option<usize>,
    pub top_r: Option<usize>,
    // run
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    // paths (flags override)
    pub views: Option<Vec<PathBuf>>,
    pub labels: Option<PathBuf>,
    pub valid_views: Option<Vec<PathBuf>>,
    pub valid_labels: Option<PathBuf>,
    pub test_views: Option<Vec<PathBuf>>,
    pub test_labels: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            DeepIdaError::Io(std::io::Error::new(
                e.kind(),
                format!("config file {}: {e}", path.display()),
            ))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| DeepIdaError::ParseError(format!("config file {}: {e}", path.display())))
    }
}

/// Flag-level overrides shared by `train` and `rank`.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// Weight on separation vs association, in [0, 1].
    #[arg(long)]
    pub rho: Option<f64>,
    /// Discriminant directions per view (default: classes - 1).
    #[arg(long = "l")]
    pub latent_dim: Option<usize>,
    /// Trace-scaled ridge coefficient for the whitener.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// "full" or a positive minibatch size.
    #[arg(long)]
    pub batch_size: Option<String>,
    /// Adam step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Hidden widths, e.g. "512-256-64" shared or "256-64;128-32" per view.
    #[arg(long)]
    pub layers: Option<String>,
    /// Final network layer width.
    #[arg(long)]
    pub output_dim: Option<usize>,
    /// Keep the epoch with the best validation loss (needs a validation set).
    #[arg(long)]
    pub best_epoch: bool,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Materialized configuration echoed into metrics and summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub rho: f64,
    pub latent_dim: usize,
    pub ridge: f64,
    pub eps_gamma: f64,
    pub max_gamma_iters: usize,
    pub epochs: usize,
    pub batch_size: BatchPolicy,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub best_epoch: bool,
    /// Hidden widths as configured, one list per view.
    pub hidden_layers: Vec<Vec<usize>>,
    /// Realized per-view widths (input through output) after scale-down.
    pub effective_layers: Vec<Vec<usize>>,
    pub output_dim: usize,
    pub n_pairs: usize,
    pub feature_fraction: f64,
    pub permutations_per_feature: usize,
    pub top_r: Option<usize>,
    pub seed: u64,
}

fn parse_batch_size(text: &str) -> Result<BatchPolicy> {
    if text.eq_ignore_ascii_case("full") {
        return Ok(BatchPolicy::Full);
    }
    match text.parse::<usize>() {
        Ok(b) if b > 0 => Ok(BatchPolicy::Size(b)),
        _ => Err(DeepIdaError::InvalidInput(format!(
            "batch size must be \"full\" or a positive integer, got '{text}'"
        ))),
    }
}

fn parse_layers(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split(';')
        .map(|view| {
            view.split('-')
                .map(|w| {
                    w.trim().parse::<usize>().map_err(|_| {
                        DeepIdaError::InvalidInput(format!("bad layer width '{w}' in '{text}'"))
                    })
                })
                .collect()
        })
        .collect()
}

/// Fully resolved run settings plus the derived library configs.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub effective: EffectiveConfig,
    pub plans: Vec<NetworkPlan>,
}

impl Resolved {
    pub fn train_config(&self) -> TrainConfig {
        let e = &self.effective;
        TrainConfig {
            epochs: e.epochs,
            batch_size: e.batch_size,
            adam: AdamParams {
                alpha: e.learning_rate,
                beta1: e.beta1,
                beta2: e.beta2,
                eps: e.adam_eps,
            },
            ida: IdaConfig {
                rho: e.rho,
                l: e.latent_dim,
                ridge: RidgePolicy::TraceScaled(e.ridge),
                eps_gamma: e.eps_gamma,
                max_gamma_iters: e.max_gamma_iters,
            },
            seed: e.seed,
            validation: if e.best_epoch {
                ValidationPolicy::BestEpoch
            } else {
                ValidationPolicy::None
            },
        }
    }

    pub fn ranking_config(&self) -> RankingConfig {
        let e = &self.effective;
        RankingConfig {
            n_pairs: e.n_pairs,
            feature_fraction: e.feature_fraction,
            permutations_per_feature: e.permutations_per_feature,
            train: self.train_config(),
            seed: e.seed,
        }
    }
}

/// Merge file and flags over defaults and materialize everything.
///
/// `input_dims` and `n_classes` come from the loaded data: the default latent
/// dimension is `n_classes - 1` and the realized layer widths depend on each
/// view's input dimension.
pub fn resolve(
    file: &RunConfig,
    flags: &ConfigFlags,
    input_dims: &[usize],
    n_classes: usize,
) -> Result<Resolved> {
    let d_views = input_dims.len();
    let train_defaults = TrainConfig::default();
    let ida_defaults = IdaConfig::default();
    let adam_defaults = AdamParams::default();
    let plan_defaults = NetworkPlan::default();
    let rank_defaults = RankingConfig::default();

    let batch_size = match &flags.batch_size {
        Some(text) => parse_batch_size(text)?,
        None => file.batch_size.unwrap_or(train_defaults.batch_size),
    };
    let layers_cfg: Vec<Vec<usize>> = match &flags.layers {
        Some(text) => parse_layers(text)?,
        None => file.layers.clone().unwrap_or_else(|| vec![plan_defaults.hidden.clone()]),
    };
    let hidden_layers: Vec<Vec<usize>> = if layers_cfg.len() == 1 {
        vec![layers_cfg[0].clone(); d_views]
    } else if layers_cfg.len() == d_views {
        layers_cfg
    } else {
        return Err(DeepIdaError::InvalidInput(format!(
            "{} layer lists for {d_views} views",
            layers_cfg.len()
        )));
    };

    let output_dim = flags
        .output_dim
        .or(file.output_dim)
        .unwrap_or(plan_defaults.output_dim);
    let default_l = (n_classes.saturating_sub(1)).clamp(1, output_dim);
    let ridge_default = match ida_defaults.ridge {
        RidgePolicy::TraceScaled(k) => k,
        RidgePolicy::Absolute(a) => a,
    };

    let effective = EffectiveConfig {
        rho: flags.rho.or(file.rho).unwrap_or(ida_defaults.rho),
        latent_dim: flags.latent_dim.or(file.latent_dim).unwrap_or(default_l),
        ridge: flags.ridge.or(file.ridge).unwrap_or(ridge_default),
        eps_gamma: file.eps_gamma.unwrap_or(ida_defaults.eps_gamma),
        max_gamma_iters: file.max_gamma_iters.unwrap_or(ida_defaults.max_gamma_iters),
        epochs: flags.epochs.or(file.epochs).unwrap_or(train_defaults.epochs),
        batch_size,
        learning_rate: flags
            .learning_rate
            .or(file.learning_rate)
            .unwrap_or(adam_defaults.alpha),
        beta1: file.beta1.unwrap_or(adam_defaults.beta1),
        beta2: file.beta2.unwrap_or(adam_defaults.beta2),
        adam_eps: file.adam_eps.unwrap_or(adam_defaults.eps),
        best_epoch: flags.best_epoch || file.best_epoch.unwrap_or(false),
        hidden_layers,
        effective_layers: Vec::new(),
        output_dim,
        n_pairs: file.n_pairs.unwrap_or(rank_defaults.n_pairs),
        feature_fraction: file.feature_fraction.unwrap_or(rank_defaults.feature_fraction),
        permutations_per_feature: file
            .permutations_per_feature
            .unwrap_or(rank_defaults.permutations_per_feature),
        top_r: file.top_r,
        seed: flags.seed.or(file.seed).unwrap_or(train_defaults.seed),
    };

    let plans: Vec<NetworkPlan> = effective
        .hidden_layers
        .iter()
        .map(|hidden| NetworkPlan {
            hidden: hidden.clone(),
            output_dim: effective.output_dim,
            activation: Activation::LeakyRelu { slope: 0.1 },
            batch_norm: true,
        })
        .collect();
    let mut effective = effective;
    effective.effective_layers = plans
        .iter()
        .zip(input_dims)
        .map(|(plan, &p)| {
            let specs = plan.layer_specs(p)?;
            let mut widths = vec![p];
            widths.extend(specs.iter().map(|s| s.out_dim));
            Ok(widths)
        })
        .collect::<Result<_>>()?;

    Ok(Resolved { effective, plans })
}
