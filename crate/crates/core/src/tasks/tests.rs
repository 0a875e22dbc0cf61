use std::vec;
use std::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::arch::{forward_batch, init_params};
use crate::gnn::{forward_metanet, GnnConfig, GnnModel};
use crate::math::sin;
use crate::tensor::Tensor;

#[test]
fn perfect_prediction_scores_one() {
    let t = [0.3, 0.1, 0.9, 0.5];
    assert_eq!(eval_r2(&t, &t).unwrap(), 1.0);
    assert_eq!(eval_kendall_tau(&t, &t).unwrap(), 1.0);
}

#[test]
fn reversed_order_scores_minus_one() {
    let t = [1.0, 2.0, 3.0, 4.0, 5.0];
    let p = [5.0, 4.0, 3.0, 2.0, 1.0];
    assert_eq!(eval_kendall_tau(&p, &t).unwrap(), -1.0);
}

#[test]
fn predicting_the_mean_scores_zero_r2() {
    let t = [1.0, 2.0, 4.0, 7.0];
    let p = [3.5; 4];
    assert!(eval_r2(&p, &t).unwrap().abs() < 1e-15);
    assert_eq!(eval_kendall_tau(&p, &t).unwrap(), 0.0);
}

#[test]
fn tau_b_with_ties_matches_published_value() {
    // Reference value from the SciPy documentation of `kendalltau`.
    let x = [12.0, 2.0, 1.0, 12.0, 2.0];
    let y = [1.0, 4.0, 7.0, 1.0, 0.0];
    assert!((eval_kendall_tau(&x, &y).unwrap() - (-0.471_404_520_791_031_7)).abs() < 1e-12);
}

#[test]
fn degenerate_inputs_are_rejected() {
    assert!(matches!(eval_r2(&[1.0, 2.0], &[3.0, 3.0]), Err(TaskError::DegenerateTarget)));
    assert!(matches!(eval_kendall_tau(&[1.0, 2.0], &[3.0, 3.0]), Err(TaskError::DegenerateTarget)));
    assert!(matches!(eval_r2(&[1.0], &[1.0]), Err(TaskError::TooFew { .. })));
    assert!(matches!(eval_r2(&[1.0, 2.0], &[1.0]), Err(TaskError::LengthMismatch { .. })));
}

#[test]
fn unit_sine_is_fit_within_tolerance() {
    let fit = fit_sinusoid_inr(1.0, 1.0, &DEFAULT_INR_WIDTHS, 3).unwrap();
    assert!(fit.converged);
    let xs = inr_grid(100);
    let grid = Tensor::new(vec![100, 1], xs.clone()).unwrap();
    let y = forward_batch(&fit.spec, &fit.params, &grid).unwrap();
    let target: Vec<f64> = xs.iter().map(|&x| sin(x)).collect();
    assert!(eval_mse(y.data(), &target).unwrap() < 1e-3);
    let at_zero = forward_batch(&fit.spec, &fit.params, &Tensor::new(vec![1, 1], vec![0.0]).unwrap()).unwrap();
    assert!(at_zero.data()[0].abs() < 0.1);
}

#[test]
fn inr_dataset_is_reproducible_and_in_range() {
    let a = gen_sinusoid_inrs(12, 5, &[1, 8, 1]).unwrap();
    let b = gen_sinusoid_inrs(12, 5, &[1, 8, 1]).unwrap();
    assert_eq!(a, b);
    a.validate().unwrap();
    for it in &a.items {
        assert!((0.5..=2.0).contains(&it.target[0]));
        assert!((1.0..=3.0).contains(&it.target[1]));
    }
    assert_ne!(a.items[0].params, gen_sinusoid_inrs(12, 6, &[1, 8, 1]).unwrap().items[0].params);
    assert!(matches!(gen_sinusoid_inrs(9, 0, &[1, 8, 1]), Err(TaskError::TooFew { min: 10, got: 9 })));
}

#[test]
fn edit_targets_double_the_source() {
    let (ds, desc) = gen_edit_dataset(10, 2).unwrap();
    assert_eq!(desc.scale, 2.0);
    let grid = Tensor::new(vec![desc.grid.len(), 1], desc.grid.clone()).unwrap();
    for it in &ds.items {
        let y = forward_batch(&it.spec, &it.params, &grid).unwrap();
        for (t, v) in it.target.iter().zip(y.data()) {
            assert_eq!(*t, 2.0 * v);
        }
    }
    let items = ds.edit_items(&ds.split.train, &desc.grid, GraphView::ParamUndirected).unwrap();
    assert_eq!(items.len(), ds.usable(&ds.split.train).count());
}

#[test]
fn untrained_classifiers_sit_near_chance_on_average() {
    let data = ClassifierData::generate(1);
    let pool = ArchPool::default();
    let mut accs = Vec::new();
    for (i, fam) in pool.families.iter().enumerate() {
        for seed in 0..10 {
            let spec = fam.spec(4, 1);
            accs.push(data.accuracy(&spec, &init_params(&spec, 100 * i as u64 + seed)).unwrap());
        }
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() < 0.1, "{mean}");
}

#[test]
fn classifier_accuracies_spread_and_share_one_metanet() {
    let ds = gen_tiny_classifiers(40, 3, &ArchPool::default()).unwrap();
    ds.validate().unwrap();
    let accs: Vec<f64> = ds.items.iter().map(|it| it.target[0]).collect();
    let lo = accs.iter().cloned().fold(1.0, f64::min);
    let hi = accs.iter().cloned().fold(0.0, f64::max);
    assert!(lo < 0.65 && hi > 0.9, "range {lo}..{hi}");
    let families: std::collections::BTreeSet<_> = ds.items.iter().map(|it| it.family.clone()).collect();
    assert_eq!(families.len(), 3);
    let m = GnnModel::random(&GnnConfig::default(), 0);
    let all: Vec<usize> = (0..ds.len()).collect();
    for (g, _) in ds.graph_items(&all, GraphView::Param).unwrap() {
        assert!(forward_metanet(&m, &g).unwrap().values()[0].is_finite());
    }
}

#[test]
fn held_out_pool_uses_unseen_widths() {
    let seen = ArchPool::default();
    let ood = ArchPool::held_out_widths();
    assert!(ood.widths.iter().all(|w| !seen.widths.contains(w)));
    let ds = gen_tiny_classifiers(6, 1, &ood).unwrap();
    let max_seen = seen.families.iter().flat_map(|f| seen.depths.iter().map(move |&d| crate::arch::count_params(&f.spec(6, d)))).max().unwrap();
    assert!(ds.items.iter().any(|it| it.params.scalar_count() > max_seen));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_bounds_and_monotone_invariance(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..30)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(r2) = eval_r2(&p, &t) {
            prop_assert!(r2 <= 1.0);
        }
        if let Ok(tau) = eval_kendall_tau(&p, &t) {
            prop_assert!((-1.0..=1.0).contains(&tau));
            let squashed: Vec<f64> = p.iter().map(|x| crate::math::exp(0.3 * x) + 2.0).collect();
            prop_assert!((eval_kendall_tau(&squashed, &t).unwrap() - tau).abs() < 1e-12);
        }
    }

    #[test]
    fn random_splits_partition(n in 0usize..200, a in 0.0f64..1.0, b in 0.0f64..1.0, seed in any::<u64>()) {
        let (tf, vf) = (a.min(1.0 - b.min(a)), b.min(1.0 - a.min(1.0)));
        let s = Split::random(n, tf, vf, seed);
        prop_assert!(s.validate(n).is_ok());
    }
}
