use pmekf::evaluation::{
    bonferroni, loso_harness, midranks, nrmse, r_squared, subtract_rmr, violation_rate, wilcoxon_signed_rank,
    LinearModel,
};
use pmekf::{TimeSeries, Unit};
use proptest::prelude::*;

fn gas(values: Vec<f64>) -> TimeSeries {
    TimeSeries::new(0.0, 1.0, values, Unit::LitersPerSecond).unwrap()
}

#[test]
fn r_squared_and_nrmse_examples() {
    let y = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
    assert_eq!(r_squared(&y, &[2.5; 4]).unwrap(), 0.0);
    assert!((nrmse(&y, &[2.0, 3.0, 4.0, 5.0]).unwrap() - 1.0 / 2.5).abs() < 1e-15);
    assert!(r_squared(&[2.0; 4], &y).is_err());
    assert!(nrmse(&[1.0, -1.0], &[0.0, 0.0]).is_err());
    assert!(r_squared(&y, &y[..3]).is_err());
}

#[test]
fn wilcoxon_examples() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let w = wilcoxon_signed_rank(&a, &[0.0; 5]).unwrap();
    assert_eq!(w.statistic, 0.0);
    assert!((w.p_value - 0.0625).abs() < 1e-15);
    assert!(w.exact);
    let sym = wilcoxon_signed_rank(&[1.0, -1.0, 2.0, -2.0], &[0.0; 4]).unwrap();
    assert_eq!(sym.p_value, 1.0);
    assert!(wilcoxon_signed_rank(&a, &a).is_err());
}

#[test]
fn large_samples_use_the_normal_approximation() {
    let a: Vec<f64> = (1..=40).map(|i| i as f64).collect();
    let w = wilcoxon_signed_rank(&a, &vec![0.0; 40]).unwrap();
    assert!(!w.exact);
    assert!(w.p_value < 1e-6);
}

#[test]
fn midranks_average_ties() {
    assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
}

#[test]
fn least_squares_recovers_a_plane() {
    let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
    let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] - r[1] + 5.0).collect();
    let m = LinearModel::fit(&rows, &y).unwrap();
    assert!(!m.rank_deficient);
    assert!((m.coef[0] - 3.0).abs() < 1e-9 && (m.coef[1] + 1.0).abs() < 1e-9);
    assert!((m.intercept - 5.0).abs() < 1e-9);
}

#[test]
fn collinear_features_fall_back_to_minimum_norm() {
    let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
    let y: Vec<f64> = rows.iter().map(|r| r[0] + 1.0).collect();
    let m = LinearModel::fit(&rows, &y).unwrap();
    assert!(m.rank_deficient);
    // minimum-norm split of the slope along the (1, 2) direction
    assert!((m.coef[0] - 0.2).abs() < 1e-9 && (m.coef[1] - 0.4).abs() < 1e-9);
    for (r, t) in rows.iter().zip(&y) {
        assert!((m.predict(r) - t).abs() < 1e-9);
    }
}

#[test]
fn held_out_labels_never_reach_the_model() {
    // subject = (features, labels); each fold predicts the test features
    let subjects: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..4)
        .map(|s| {
            let x: Vec<Vec<f64>> = (0..12).map(|i| vec![(i + s) as f64, ((i * s) % 3) as f64]).collect();
            let y = x.iter().map(|r| 2.0 * r[0] + 0.5 * r[1] + s as f64).collect();
            (x, y)
        })
        .collect();
    let run = |subjects: &[(Vec<Vec<f64>>, Vec<f64>)]| {
        loso_harness(subjects, |train, test| {
            let rows: Vec<Vec<f64>> = train.iter().flat_map(|s| s.0.clone()).collect();
            let y: Vec<f64> = train.iter().flat_map(|s| s.1.clone()).collect();
            let m = LinearModel::fit(&rows, &y)?;
            Ok(test.0.iter().map(|r| m.predict(r)).collect::<Vec<f64>>())
        })
        .unwrap()
    };
    let base = run(&subjects);
    assert_eq!(base.len(), 4);
    for k in 0..4 {
        let mut perturbed = subjects.clone();
        perturbed[k].1.iter_mut().for_each(|v| *v = *v * 7.0 - 100.0);
        assert_eq!(run(&perturbed)[k], base[k]);
    }
    assert!(loso_harness(&subjects[..1], |_, _| Ok(())).is_err());
}

#[test]
fn resting_rate_is_subtracted_after_the_discard_window() {
    // resting rate 0.5 for the first five minutes, 0.3 afterwards
    let rest: Vec<f64> = (0..400).map(|i| if i < 300 { 0.5 } else { 0.3 }).collect();
    let adl = gas(vec![1.0; 120]);
    let (o2, co2) = subtract_rmr((&adl, &adl), (&gas(rest.clone()), &gas(rest))).unwrap();
    assert!(o2.values.iter().all(|v| (v - 0.7).abs() < 1e-12));
    assert_eq!(o2.values, co2.values);
    let short = gas(vec![0.3; 300]);
    assert!(subtract_rmr((&adl, &adl), (&short, &short)).is_err());
}

proptest! {
    #[test]
    fn r_squared_ignores_common_affine_maps(
        pairs in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0), 3..50),
        scale in 0.1f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let yhat: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-3));
        let map = |v: &[f64]| v.iter().map(|x| scale * x + shift).collect::<Vec<f64>>();
        let a = r_squared(&y, &yhat).unwrap();
        let b = r_squared(&map(&y), &map(&yhat)).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()));
        prop_assert!(a <= 1.0);
    }

    #[test]
    fn nrmse_ignores_common_scaling(
        pairs in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0), 1..50),
        scale in 0.1f64..100.0,
    ) {
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let yhat: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let s = |v: &[f64]| v.iter().map(|x| scale * x).collect::<Vec<f64>>();
        let a = nrmse(&y, &yhat).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - nrmse(&s(&y), &s(&yhat)).unwrap()).abs() <= 1e-10 * (1.0 + a));
    }

    #[test]
    fn bonferroni_inflates_and_caps(p in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let adj = bonferroni(&p);
        for (a, q) in adj.iter().zip(&p) {
            prop_assert!(*a >= *q && *a <= 1.0);
            prop_assert!((*a - (q * p.len() as f64).min(1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn wilcoxon_is_symmetric_and_bounded(d in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        prop_assume!(d.iter().any(|v| *v != 0.0));
        let zeros = vec![0.0; d.len()];
        let a = wilcoxon_signed_rank(&d, &zeros).unwrap();
        let b = wilcoxon_signed_rank(&zeros, &d).unwrap();
        prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
        prop_assert!(a.p_value > 0.0 && a.p_value <= 1.0);
        prop_assert_eq!(a.statistic, b.statistic);
    }

    #[test]
    fn violation_rate_is_a_fraction(v in prop::collection::vec(-1.0f64..1.0, 1..100)) {
        let r = violation_rate(&v, 0.0).unwrap();
        let expected = v.iter().filter(|x| **x < 0.0).count() as f64 / v.len() as f64;
        prop_assert_eq!(r, expected);
    }
}
