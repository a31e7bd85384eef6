use mrf_core::dataio::{
    apply_tcode, build_direct_target, build_lag_panel, invert_tcode, ForecastSpec, SeriesPanel,
    TargetMode, TransformCode,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn series() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-50.0f64..50.0, 3..60)
}

fn positive_series() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.1f64..500.0, 3..60)
}

proptest! {
    #[test]
    fn lag_panel_matches_index_arithmetic(y in series(), p in 1usize..6) {
        let m = build_lag_panel(&y, p).unwrap();
        prop_assert_eq!(m.shape(), (y.len(), p));
        for t in 0..y.len() {
            for lag in 1..=p {
                let v = m[(t, lag - 1)];
                if t < lag {
                    prop_assert!(v.is_nan());
                } else {
                    prop_assert_eq!(v, y[t - lag]);
                }
            }
        }
    }

    #[test]
    fn direct_targets_match_brute_force(y in series(), h in 1usize..5) {
        prop_assume!(h < y.len());
        let point = build_direct_target(&y, ForecastSpec::point(h)).unwrap();
        let avg = build_direct_target(&y, ForecastSpec::new(h, TargetMode::Average).unwrap()).unwrap();
        for t in 0..y.len() {
            if t + h >= y.len() {
                prop_assert!(point[t].is_nan() && avg[t].is_nan());
                continue;
            }
            prop_assert_eq!(point[t], y[t + h]);
            let mut s = 0.0;
            for k in 1..=h {
                s += y[t + k];
            }
            prop_assert!((avg[t] - s / h as f64).abs() <= 1e-12 * (1.0 + s.abs()));
        }
        if h == 1 {
            prop_assert_eq!(&point[..y.len() - 1], &avg[..y.len() - 1]);
        }
    }

    #[test]
    fn invertible_codes_round_trip(y in positive_series(), code in prop::sample::select(vec![1u8, 2, 4, 5])) {
        let c = TransformCode::new(code).unwrap();
        let fwd = apply_tcode(&y, c).unwrap();
        prop_assert_eq!(fwd.iter().take_while(|v| v.is_nan()).count(), c.leading_nans());
        let back = invert_tcode(&fwd, c, y[0]).unwrap();
        for (a, b) in back.iter().zip(&y) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn csv_round_trip_is_lossless(
        cells in proptest::collection::vec(proptest::option::of(-1e6f64..1e6), 12),
        codes in proptest::collection::vec(1u8..=7, 3),
    ) {
        let values = DMatrix::from_fn(4, 3, |t, j| cells[t * 3 + j].unwrap_or(f64::NAN));
        let dates: Vec<String> = (1..=4).map(|q| format!("2001Q{q}")).collect();
        let tcodes = codes.iter().map(|&c| TransformCode::new(c).unwrap()).collect();
        let panel = SeriesPanel::new(
            values,
            vec!["A".into(), "B".into(), "C".into()],
            dates,
            Some(tcodes),
        )
        .unwrap();
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let back = SeriesPanel::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(&back.names, &panel.names);
        prop_assert_eq!(&back.dates, &panel.dates);
        prop_assert_eq!(&back.tcodes, &panel.tcodes);
        for (a, b) in back.values.iter().zip(panel.values.iter()) {
            prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }
}

#[test]
fn second_differences_of_a_quadratic_are_constant() {
    let y: Vec<f64> = (0..20).map(|t| 3.0 * (t * t) as f64 + t as f64).collect();
    let d2 = apply_tcode(&y, TransformCode::DIFF2).unwrap();
    assert!(d2[..2].iter().all(|v| v.is_nan()));
    assert!(d2[2..].iter().all(|&v| v == 6.0));
}

#[test]
fn malformed_cell_reports_its_line() {
    let text = "date,A,B\ntransform,1,2\n2000Q1,1,2\n2000Q2,x,3\n";
    let err = SeriesPanel::read_csv(text.as_bytes()).unwrap_err().to_string();
    assert!(err.contains("line 4"), "{err}");
    assert!(err.contains('x'), "{err}");
}

#[test]
fn bad_code_and_bad_horizon_are_rejected() {
    assert!(TransformCode::new(0).is_err());
    assert!(TransformCode::new(8).is_err());
    assert!(ForecastSpec::new(0, TargetMode::Point).is_err());
    assert!(build_direct_target(&[1.0, 2.0], ForecastSpec::point(2)).is_err());
    assert!(invert_tcode(&[0.0, 1.0], TransformCode::DIFF2, 1.0).is_err());
}
