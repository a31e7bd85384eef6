mod common;

use common::{intercept, normal, plain_forest_oracle, random_frame, threshold_data};
use mrf_core::forest::{fit_forest, MrfForest};
use mrf_core::tree::{tree_apply, HyperParams};
use mrf_core::Frame;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn linear_part(rng: &mut ChaCha8Rng, t_len: usize) -> Frame {
    let v = DMatrix::from_fn(t_len, 2, |_, j| if j == 0 { 1.0 } else { normal(rng) });
    Frame::new(v, vec!["const".into(), "x".into()]).unwrap()
}

/// Two-regime linear model switching on `S1`.
fn switching_sample(seed: u64, t_len: usize) -> (Vec<f64>, Frame, Frame) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = random_frame(&mut rng, t_len, 4, "S");
    let x = linear_part(&mut rng, t_len);
    let y = (0..t_len)
        .map(|t| {
            let b = if s.values[(t, 0)] > 0.0 { 1.5 } else { -0.5 };
            0.2 + b * x.values[(t, 1)] + 0.3 * normal(&mut rng)
        })
        .collect();
    (y, x, s)
}

fn row(m: &DMatrix<f64>, t: usize) -> Vec<f64> {
    m.row(t).iter().copied().collect()
}

#[test]
fn single_plain_tree_equals_cart_oracle() {
    for seed in 0..5 {
        let (y, s) = threshold_data(seed, 90, 5);
        let hp = HyperParams {
            n_trees: 1,
            seed,
            ..HyperParams::plain_forest()
        };
        let f = fit_forest(&y, &intercept(y.len()), &s, None, &hp).unwrap();
        let got = f.predict(&s, &intercept(y.len())).unwrap();
        let want = plain_forest_oracle(&y, &s.values, &hp, &s.values);
        assert_eq!(got, want, "seed {seed}");
    }
}

#[test]
fn forecast_is_the_dot_product_with_the_mean_coefficients() {
    let (y, x, s) = switching_sample(3, 160);
    let hp = HyperParams {
        n_trees: 40,
        ..HyperParams::default()
    };
    let f = fit_forest(&y, &x, &s, None, &hp).unwrap();
    let pred = f.predict(&s, &x).unwrap();
    for t in 0..y.len() {
        let beta = f.beta_at(&row(&s.values, t));
        let dot: f64 = row(&x.values, t).iter().zip(&beta).map(|(a, b)| a * b).sum();
        assert!((pred[t] - dot).abs() <= 1e-12 * (1.0 + dot.abs()), "row {t}");
    }
}

#[test]
fn kernel_weights_match_naive_traversal() {
    let (y, x, s) = switching_sample(5, 120);
    let hp = HyperParams {
        n_trees: 25,
        ..HyperParams::default()
    };
    let f = fit_forest(&y, &x, &s, None, &hp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let s0: Vec<f64> = (0..4).map(|_| normal(&mut rng)).collect();
        let alpha = f.kernel_weights(&s0);
        let total: f64 = alpha.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);

        let mut naive = vec![0.0; y.len()];
        let mut co_leaf = vec![false; y.len()];
        for tree in &f.trees {
            let (leaf, _) = tree.leaf_of(&s0);
            for t in 0..y.len() {
                if tree.leaf_members(leaf).contains(&t) {
                    naive[t] += 1.0 / (f.n_trees() as f64 * tree.leaf_members(leaf).len() as f64);
                    co_leaf[t] = true;
                }
            }
        }
        assert_eq!(alpha, naive);
        for t in 0..y.len() {
            assert!(alpha[t] >= 0.0);
            if !co_leaf[t] {
                assert_eq!(alpha[t], 0.0);
            }
        }
    }
}

#[test]
fn one_full_sample_tree_is_the_forest() {
    let (y, x, s) = switching_sample(8, 100);
    let hp = HyperParams {
        n_trees: 1,
        subsample_rate: 1.0,
        ..HyperParams::default()
    };
    let f = fit_forest(&y, &x, &s, None, &hp).unwrap();
    assert!(f.inbag[0].iter().all(|&b| b));
    let pred = f.predict(&s, &x).unwrap();
    for t in 0..y.len() {
        let r = tree_apply(&f.trees[0], &row(&s.values, t), &row(&x.values, t));
        assert_eq!(pred[t], r.prediction);
    }
    // kernel weights of a single tree: 1/m on the m co-leaf members
    let s0 = row(&s.values, 10);
    let (leaf, _) = f.trees[0].leaf_of(&s0);
    let m = f.trees[0].leaf_members(leaf).len() as f64;
    let alpha = f.kernel_weights(&s0);
    for &t in f.trees[0].leaf_members(leaf) {
        assert_eq!(alpha[t], 1.0 / m);
    }
}

#[test]
fn identical_trees_give_the_single_tree_prediction() {
    let (y, x, s) = switching_sample(11, 100);
    // full sample and every column at every node: trees differ only by RNG
    // streams that are never consulted
    let hp = HyperParams {
        n_trees: 6,
        subsample_rate: 1.0,
        mtry_frac: 1.0,
        ..HyperParams::default()
    };
    let f = fit_forest(&y, &x, &s, None, &hp).unwrap();
    assert!(f.trees.iter().all(|t| t.nodes == f.trees[0].nodes));
    let pred = f.predict(&s, &x).unwrap();
    for t in 0..y.len() {
        let single = tree_apply(&f.trees[0], &row(&s.values, t), &row(&x.values, t)).prediction;
        assert!((pred[t] - single).abs() <= 1e-14 * (1.0 + single.abs()));
    }
}

#[test]
fn in_bag_rows_are_whole_blocks_and_hold_every_leaf_member() {
    let (y, x, s) = switching_sample(13, 150);
    let hp = HyperParams {
        n_trees: 30,
        ..HyperParams::default()
    };
    let f = fit_forest(&y, &x, &s, None, &hp).unwrap();
    let target = (0.75f64 * 150.0).round() as usize;
    for (tree, mask) in f.trees.iter().zip(&f.inbag) {
        for block in mask.chunks(hp.block_size) {
            assert!(block.iter().all(|&b| b == block[0]), "partial block drawn");
        }
        let drawn = mask.iter().filter(|&&b| b).count();
        assert!(drawn >= target && drawn < target + hp.block_size);
        let mut members: Vec<usize> = tree
            .leaves()
            .iter()
            .flat_map(|&l| tree.leaf_members(l).to_vec())
            .collect();
        members.sort_unstable();
        let in_bag: Vec<usize> = (0..150).filter(|&t| mask[t]).collect();
        assert_eq!(members, in_bag, "leaves must partition the in-bag rows");
    }
}

#[test]
fn out_of_bag_paths_count_and_nest() {
    let (y, x, s) = switching_sample(17, 200);
    let hp = HyperParams {
        n_trees: 300,
        ..HyperParams::default()
    };
    let f = fit_forest(&y, &x, &s, None, &hp).unwrap();
    let g = f.gtvp_paths(&s, 0, false).unwrap();
    let mean_oob = g.n_oob.iter().sum::<usize>() as f64 / g.n_oob.len() as f64;
    assert!((mean_oob - 75.0).abs() < 7.5, "mean n_oob {mean_oob}");
    let (lo68, hi68) = g.credible_bands(0.68).unwrap();
    let (lo90, hi90) = g.credible_bands(0.90).unwrap();
    for t in 0..200 {
        for k in 0..2 {
            assert!(lo90[(t, k)] <= lo68[(t, k)] && hi68[(t, k)] <= hi90[(t, k)]);
        }
    }
    // wider exclusion windows leave fewer qualifying trees
    let g4 = f.gtvp_paths(&s, 4, false).unwrap();
    assert!(g4.n_oob.iter().zip(&g.n_oob).all(|(a, b)| a <= b));
    // level 0 collapses onto the median
    let kept = f.gtvp_paths(&s, 0, true).unwrap();
    let (a, b) = kept.credible_bands(0.0).unwrap();
    assert_eq!(a, b);
    assert!(g.credible_bands(0.5).is_err(), "unstored level must be reported");
}

#[test]
fn projection_reuses_in_sample_routing() {
    let (y, x, s) = switching_sample(19, 120);
    let hp = HyperParams {
        n_trees: 30,
        ..HyperParams::default()
    };
    let f = fit_forest(&y, &x, &s, None, &hp).unwrap();
    let (betas, preds) = f.project_gtvp(&s, &x).unwrap();
    let fitted = f.predict(&s, &x).unwrap();
    for t in 0..120 {
        assert_eq!(betas.row(t).iter().copied().collect::<Vec<_>>(), f.beta_at(&row(&s.values, t)));
        assert!((preds[t] - fitted[t]).abs() < 1e-12 * (1.0 + fitted[t].abs()));
    }

    let s_const = Frame::new(
        DMatrix::from_fn(10, 4, |_, j| s.values[(7, j)]),
        s.names.clone(),
    )
    .unwrap();
    let x_new = x.slice_rows(0..10);
    let (b_const, _) = f.project_gtvp(&s_const, &x_new).unwrap();
    for t in 1..10 {
        assert_eq!(b_const.row(t), b_const.row(0));
    }
}

#[test]
fn serialization_round_trips() {
    let (y, x, s) = switching_sample(23, 100);
    let hp = HyperParams {
        n_trees: 10,
        ..HyperParams::default()
    };
    let f = fit_forest(&y, &x, &s, None, &hp).unwrap();
    let json = f.to_json().unwrap();
    let back = MrfForest::load(json.as_bytes()).unwrap();
    assert_eq!(back, f);
    assert_eq!(back.predict(&s, &x).unwrap(), f.predict(&s, &x).unwrap());
}

#[test]
fn schema_mismatch_is_an_error() {
    let (y, x, s) = switching_sample(29, 100);
    let hp = HyperParams {
        n_trees: 5,
        ..HyperParams::default()
    };
    let f = fit_forest(&y, &x, &s, None, &hp).unwrap();
    let renamed = Frame::with_prefix(s.values.clone(), "Z");
    let err = f.predict(&renamed, &x).unwrap_err().to_string();
    assert!(err.contains("S1"), "{err}");
}

#[test]
fn thread_count_does_not_change_the_forest() {
    let (y, x, s) = switching_sample(31, 150);
    let hp = HyperParams {
        n_trees: 24,
        ..HyperParams::default()
    };
    let fit = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| fit_forest(&y, &x, &s, None, &hp).unwrap().to_json().unwrap())
    };
    let one = fit(1);
    assert_eq!(one, fit(4));
    assert_eq!(one, fit(8));
}

#[test]
fn white_noise_forecasts_shrink() {
    let mut worse = 0;
    for sim in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + sim);
        let s = random_frame(&mut rng, 120, 3, "S");
        let y: Vec<f64> = (0..120).map(|_| normal(&mut rng)).collect();
        let hp = HyperParams {
            n_trees: 20,
            seed: sim,
            ..HyperParams::plain_forest()
        };
        let f = fit_forest(&y[..80], &intercept(80), &s.slice_rows(0..80), None, &hp).unwrap();
        let p = f.predict(&s.slice_rows(80..120), &intercept(40)).unwrap();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        if var(&p) > var(&y) {
            worse += 1;
        }
    }
    assert_eq!(worse, 0);
}

#[test]
fn flat_coefficients_stay_near_ols() {
    use mrf_core::bench::dgp::{DgpId, DgpSpec};
    use mrf_core::bench::study::run_rich_study;
    let hp = HyperParams {
        n_trees: 300,
        ..HyperParams::default()
    };
    let r = run_rich_study(&DgpSpec::new(DgpId::Dr6, 1000, 1), &hp).unwrap();
    let n = r.train_len;
    // OLS on the training rows and its standard errors
    let x = r.sim.x.rows(0, n).into_owned();
    let y = nalgebra::DVector::from_column_slice(&r.sim.y[..n]);
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let b = &xtx_inv * x.transpose() * &y;
    let resid = &y - &x * &b;
    let s2 = resid.dot(&resid) / (n - 3) as f64;
    for k in 0..3 {
        let se = (s2 * xtx_inv[(k, k)]).sqrt();
        let rows: Vec<usize> = (0..n).filter(|&t| r.gtvp.mean[(t, k)].is_finite()).collect();
        let inside = rows
            .iter()
            .filter(|&&t| (r.gtvp.mean[(t, k)] - b[k]).abs() <= se)
            .count();
        let share = inside as f64 / rows.len() as f64;
        assert!(share >= 0.8, "coefficient {k}: {share:.2} of the path inside OLS ± 1 s.e.");
    }
}

fn split_sequence(f: &MrfForest) -> Vec<Vec<Vec<usize>>> {
    f.trees
        .iter()
        .map(|t| t.leaves().iter().map(|&l| t.leaf_members(l).to_vec()).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn increasing_transform_of_a_state_column_keeps_every_partition(
        seed in 0u64..1000,
        col in 0usize..4,
    ) {
        let (y, x, s) = switching_sample(seed, 110);
        let hp = HyperParams { n_trees: 8, seed, ..HyperParams::default() };
        let mut st = s.clone();
        for t in 0..110 {
            st.values[(t, col)] = (st.values[(t, col)] * 0.7).exp();
        }
        let a = fit_forest(&y, &x, &s, None, &hp).unwrap();
        let b = fit_forest(&y, &x, &st, None, &hp).unwrap();
        prop_assert_eq!(split_sequence(&a), split_sequence(&b));
        for (ta, tb) in a.trees.iter().zip(&b.trees) {
            prop_assert_eq!(ta.split_features(), tb.split_features());
        }
    }

    #[test]
    fn leaves_respect_the_member_floor(
        seed in 0u64..1000,
        mlf in 1.0f64..3.0,
        lambda in 0.0f64..2.0,
    ) {
        let (y, x, s) = switching_sample(seed, 120);
        let hp = HyperParams { n_trees: 4, seed, mlf: Some(mlf), lambda, ..HyperParams::default() };
        let f = fit_forest(&y, &x, &s, None, &hp).unwrap();
        let floor = hp.min_leaf(2);
        for tree in &f.trees {
            for l in tree.leaves() {
                prop_assert!(tree.leaf_members(l).len() >= floor);
            }
        }
    }
}
