//! Cross-module flows through the public API: simulate, split, train, rank,
//! select, predict, persist.

use deep_ida::classifier::{accuracy, ScoreSpace};
use deep_ida::dataset::ClassLabels;
use deep_ida::net::NetworkPlan;
use deep_ida::objective::{loss_value, IdaConfig};
use deep_ida::ranking::{rank_features, select_and_retrain, RankingConfig, Selection};
use deep_ida::simgen::{gen_linear, train_valid_test_split, LinearSimSpec};
use deep_ida::trainer::{fit, TrainConfig, TrainedDeepIda};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small_plans() -> Vec<NetworkPlan> {
    vec![
        NetworkPlan { hidden: vec![16], output_dim: 8, ..Default::default() };
        2
    ]
}

fn fit_plans(
    data: &deep_ida::MultiViewDataset,
    plans: &[NetworkPlan],
    cfg: &TrainConfig,
) -> TrainedDeepIda {
    let specs: Vec<_> = plans
        .iter()
        .zip(&data.dims())
        .map(|(plan, &p)| plan.layer_specs(p).unwrap())
        .collect();
    fit(data, &specs, cfg, None).unwrap()
}

#[test]
fn simulated_data_trains_ranks_and_retrains_end_to_end() {
    let data = gen_linear(&LinearSimSpec::new(vec![30, 30], [30, 30, 30], 17).unwrap()).unwrap();
    let split = train_valid_test_split(&data, (0.6, 0.0, 0.4), 3).unwrap();
    let (train, test) = (split.train, split.test.unwrap());

    let plans = small_plans();
    let cfg = TrainConfig { epochs: 40, ..Default::default() };
    let model = fit_plans(&train, &plans, &cfg);
    let pooled = accuracy(
        &model.predict(&test, ScoreSpace::Pooled).unwrap(),
        test.labels.ids(),
    )
    .unwrap();
    assert!(
        pooled > 0.5,
        "pooled accuracy {pooled} not above chance on planted-signal data"
    );

    let rank_cfg = RankingConfig {
        n_pairs: 6,
        train: cfg.clone(),
        seed: 5,
        ..Default::default()
    };
    let run = rank_features(&train, &plans, &rank_cfg).unwrap();
    assert!(run.failures.is_empty());
    assert_eq!(run.report.baselines.len(), 6);

    let retrained =
        select_and_retrain(&train, &run.report, Selection::Count(12), &plans, &cfg).unwrap();
    let kept = retrained.kept_features().unwrap();
    assert_eq!(kept.len(), 2);
    assert!(kept.iter().all(|k| k.len() == 12));
    // The reduced model accepts full-width data and narrows it itself.
    let narrowed = retrained.predict(&test, ScoreSpace::Pooled).unwrap();
    assert_eq!(narrowed.len(), test.n_samples());
}

#[test]
fn training_is_reproducible_for_a_fixed_seed() {
    let data = gen_linear(&LinearSimSpec::new(vec![25, 25], [10, 10, 10], 9).unwrap()).unwrap();
    let plans = small_plans();
    let cfg = TrainConfig { epochs: 15, seed: 42, ..Default::default() };
    let a = fit_plans(&data, &plans, &cfg);
    let b = fit_plans(&data, &plans, &cfg);
    for (ma, mb) in a.models().iter().zip(b.models()) {
        let (va, vb) = (ma.param_vector(), mb.param_vector());
        assert_eq!(va.len(), vb.len());
        assert!(
            va.iter().zip(&vb).all(|(x, y)| x.to_bits() == y.to_bits()),
            "identical fits diverged"
        );
    }
    assert_eq!(a.loss_history(), b.loss_history());
}

#[test]
fn saved_model_reloads_from_disk_and_predicts_identically() {
    let data = gen_linear(&LinearSimSpec::new(vec![22, 20], [8, 8, 8], 2).unwrap()).unwrap();
    let model = fit_plans(&data, &small_plans(), &TrainConfig { epochs: 10, ..Default::default() });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let reloaded = TrainedDeepIda::load(&path).unwrap();
    assert_eq!(
        model.predict(&data, ScoreSpace::Pooled).unwrap(),
        reloaded.predict(&data, ScoreSpace::Pooled).unwrap()
    );
}

/// The objective reads only covariances, so shifting every sample of one view
/// by the same offset must not move the loss.
#[test]
fn loss_is_invariant_to_translating_a_view() {
    proptest!(ProptestConfig::with_cases(16), |(
        seed in 0u64..1000,
        shift in -50.0f64..50.0,
        view in 0usize..2,
    )| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 24;
        let labels = ClassLabels::new((0..n).map(|s| (s % 3 + 1) as u32).collect()).unwrap();
        let h: Vec<Array2<f64>> = (0..2)
            .map(|_| Array2::from_shape_fn((n, 5), |_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let config = IdaConfig {
            l: 2,
            eps_gamma: 1e-12,
            max_gamma_iters: 500,
            ..Default::default()
        };
        let (base, _) = loss_value(&h, &labels, &config, seed).unwrap();

        let mut shifted = h.clone();
        shifted[view] += shift;
        let (moved, _) = loss_value(&shifted, &labels, &config, seed).unwrap();
        // The covariances are identical in exact arithmetic; centering in
        // floating point leaves crumbs proportional to the shift.
        prop_assert!(
            (base - moved).abs() < 1e-6 * (1.0 + shift.abs()),
            "loss moved from {base} to {moved} under a translation of {shift}"
        );
    });
}

/// Class labels are nominal: permuting the class ids permutes centroids but
/// must not change which samples land together.
#[test]
fn relabeling_classes_relabels_predictions_consistently() {
    let data = gen_linear(&LinearSimSpec::new(vec![25, 25], [12, 12, 12], 21).unwrap()).unwrap();
    let cfg = TrainConfig { epochs: 20, ..Default::default() };
    let model = fit_plans(&data, &small_plans(), &cfg);

    // Swap classes 1 and 2 in the training labels and refit.
    let swapped_ids: Vec<u32> = data
        .labels
        .ids()
        .iter()
        .map(|&c| match c {
            1 => 2,
            2 => 1,
            other => other,
        })
        .collect();
    let swapped = deep_ida::MultiViewDataset::new(
        data.views.clone(),
        ClassLabels::new(swapped_ids).unwrap(),
    )
    .unwrap();
    let swapped_model = fit_plans(&swapped, &small_plans(), &cfg);

    let base = model.predict(&data, ScoreSpace::Pooled).unwrap();
    let renamed = swapped_model.predict(&data, ScoreSpace::Pooled).unwrap();
    let mapped: Vec<u32> = base
        .iter()
        .map(|&c| match c {
            1 => 2,
            2 => 1,
            other => other,
        })
        .collect();
    assert_eq!(mapped, renamed, "relabeled training changed the partition");
}
