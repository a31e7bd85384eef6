mod common;

use common::{intercept, normal, random_frame, threshold_data};
use mrf_core::analysis::{surrogate_beta_tree, variable_importance, ViMode, ViOptions};
use mrf_core::forest::fit_forest;
use mrf_core::tree::HyperParams;
use mrf_core::Frame;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Threshold data with an extra constant column and a column of pure noise
/// the target never depends on.
fn with_dead_columns(seed: u64, t_len: usize) -> (Vec<f64>, Frame, Frame) {
    let (y, s) = threshold_data(seed, t_len, 3);
    let mut v = DMatrix::zeros(t_len, 4);
    v.columns_mut(0, 3).copy_from(&s.values);
    v.column_mut(3).fill(2.5);
    let s = Frame::new(v, vec!["S1".into(), "S2".into(), "S3".into(), "flat".into()]).unwrap();
    let x = intercept(t_len);
    (y, x, s)
}

fn hp(seed: u64) -> HyperParams {
    HyperParams {
        n_trees: 40,
        seed,
        ..HyperParams::default()
    }
}

#[test]
fn constant_feature_scores_exactly_zero_in_every_mode() {
    let (y, x, s) = with_dead_columns(2, 160);
    let f = fit_forest(&y[..120], &x.slice_rows(0..120), &s.slice_rows(0..120), None, &hp(2)).unwrap();
    let opts = ViOptions::default();
    for mode in [ViMode::Oob, ViMode::Beta { k: 0 }] {
        let r = variable_importance(&f, &s.slice_rows(0..120), &x.slice_rows(0..120), &y[..120], &mode, &opts).unwrap();
        assert_eq!(r.scores[3], 0.0, "{}", mode.label());
        assert_eq!(r.ranking()[0], 0, "{}", mode.label());
    }
    let r = variable_importance(&f, &s.slice_rows(120..160), &x.slice_rows(120..160), &y[120..], &ViMode::Oos, &opts).unwrap();
    assert_eq!(r.scores[3], 0.0);
}

#[test]
fn unused_feature_scores_zero() {
    let (y, x, s) = with_dead_columns(3, 120);
    // the root is below the split size, so no tree ever splits
    let hp = HyperParams {
        n_trees: 10,
        mtry_frac: 0.25,
        min_node_size: 200,
        ..hp(3)
    };
    let f = fit_forest(&y, &x, &s, None, &hp).unwrap();
    let r = variable_importance(&f, &s, &x, &y, &ViMode::Oob, &ViOptions::default()).unwrap();
    assert!(r.scores.iter().all(|&v| v == 0.0), "{:?}", r.scores);
}

#[test]
fn renaming_features_keeps_the_scores() {
    let (y, x, s) = with_dead_columns(4, 120);
    let renamed = Frame::new(s.values.clone(), vec!["a".into(), "b".into(), "c".into(), "d".into()]).unwrap();
    let f1 = fit_forest(&y, &x, &s, None, &hp(4)).unwrap();
    let f2 = fit_forest(&y, &x, &renamed, None, &hp(4)).unwrap();
    let opts = ViOptions::default();
    let r1 = variable_importance(&f1, &s, &x, &y, &ViMode::Oob, &opts).unwrap();
    let r2 = variable_importance(&f2, &renamed, &x, &y, &ViMode::Oob, &opts).unwrap();
    assert_eq!(r1.scores, r2.scores);
    assert_eq!(r2.features, vec!["a", "b", "c", "d"]);
}

#[test]
fn wrong_schema_and_bad_coefficient_are_errors() {
    let (y, x, s) = with_dead_columns(5, 80);
    let f = fit_forest(&y, &x, &s, None, &hp(5)).unwrap();
    let other = Frame::with_prefix(s.values.clone(), "Z");
    assert!(variable_importance(&f, &other, &x, &y, &ViMode::Oob, &ViOptions::default()).is_err());
    assert!(variable_importance(&f, &s, &x, &y, &ViMode::Beta { k: 3 }, &ViOptions::default()).is_err());
}

#[test]
fn surrogate_finds_the_regime_variable() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = random_frame(&mut rng, 200, 3, "S");
    let path: Vec<f64> = (0..200)
        .map(|t| if s.values[(t, 2)] > 0.3 { 1.0 } else { -1.0 } + 0.05 * normal(&mut rng))
        .collect();
    let tree = surrogate_beta_tree(&path, &s, &[0, 1, 2], 0.01, 5).unwrap();
    let splits = tree.splits();
    assert_eq!(splits[0].0, 2);
    assert!((splits[0].1 - 0.3).abs() < 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn larger_cp_never_adds_leaves(seed in any::<u64>(), lo in 0.0f64..0.2, gap in 0.0f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_frame(&mut rng, 120, 3, "S");
        let path: Vec<f64> = (0..120)
            .map(|t| s.values[(t, 0)].signum() + 0.5 * s.values[(t, 1)] + 0.3 * normal(&mut rng))
            .collect();
        let small = surrogate_beta_tree(&path, &s, &[0, 1, 2], lo, 5).unwrap();
        let big = surrogate_beta_tree(&path, &s, &[0, 1, 2], lo + gap, 5).unwrap();
        prop_assert!(big.n_leaves() <= small.n_leaves());
    }
}
