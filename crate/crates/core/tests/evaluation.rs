use approx::assert_abs_diff_eq;
use copsel::copula::CorrelationModel;
use copsel::evaluation::{
    accuracy, copula_marginal_check, ks_uniform, kolmogorov_survival, subset_tv_distance, text_report, top_m_indices,
    tpr_fdr, verify_theorem1, verify_theorem2,
};
use copsel::samplers::DEFAULT_DELTA;
use copsel::Error;
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mask(d: usize, on: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for &i in on {
        m[i] = 1.0;
    }
    m
}

#[test]
fn tpr_fdr_examples() {
    let masks = Array2::from_shape_vec((3, 4), [mask(4, &[0, 1]), mask(4, &[0, 1, 2]), mask(4, &[])].concat()).unwrap();
    let truth = vec![vec![0, 1]; 3];
    let m = tpr_fdr(&masks, &truth).unwrap();
    assert_abs_diff_eq!(m.tpr, 200.0 / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(m.fdr, 100.0 / 9.0, epsilon = 1e-12);
    assert_abs_diff_eq!(m.mean_selected, 5.0 / 3.0, epsilon = 1e-12);

    let one = |on: &[usize]| tpr_fdr(&Array2::from_shape_vec((1, 4), mask(4, on)).unwrap(), &[vec![0, 1]]).unwrap();
    assert_eq!((one(&[0, 1]).tpr, one(&[0, 1]).fdr), (100.0, 0.0));
    assert_eq!(one(&[0, 1, 2]).tpr, 100.0);
    assert_abs_diff_eq!(one(&[0, 1, 2]).fdr, 100.0 / 3.0, epsilon = 1e-12);
    assert_eq!((one(&[]).tpr, one(&[]).fdr), (0.0, 0.0));
    assert!(tpr_fdr(&masks, &truth[..2]).is_err());
}

#[test]
fn tpr_fdr_macro_averages_over_samples() {
    // Truth sets of different sizes: micro averaging would give 3/5.
    let masks = Array2::from_shape_vec((2, 6), [mask(6, &[0]), mask(6, &[1])].concat()).unwrap();
    let m = tpr_fdr(&masks, &[vec![0], vec![1, 2, 3, 4]]).unwrap();
    assert_abs_diff_eq!(m.tpr, 100.0 * (1.0 + 0.25) / 2.0, epsilon = 1e-12);
}

proptest! {
    #[test]
    fn tpr_fdr_is_permutation_invariant(
        bits in proptest::collection::vec(any::<bool>(), 24),
        truth_bits in proptest::collection::vec(any::<bool>(), 24),
        perm_seed in any::<u64>(),
    ) {
        let d = 6;
        let masks = Array2::from_shape_fn((4, d), |(i, j)| f64::from(u8::from(bits[i * d + j])));
        let truth: Vec<Vec<usize>> = (0..4).map(|i| (0..d).filter(|&j| truth_bits[i * d + j]).collect()).collect();
        let mut perm: Vec<usize> = (0..d).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..d).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pm = Array2::from_shape_fn((4, d), |(i, j)| masks[[i, perm[j]]]);
        let inv: Vec<usize> = (0..d).map(|j| perm.iter().position(|&p| p == j).unwrap()).collect();
        let pt: Vec<Vec<usize>> = truth.iter().map(|t| t.iter().map(|&j| inv[j]).collect()).collect();
        let a = tpr_fdr(&masks, &truth).unwrap();
        let b = tpr_fdr(&pm, &pt).unwrap();
        prop_assert!((a.tpr - b.tpr).abs() < 1e-9 && (a.fdr - b.fdr).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&a.tpr) && (0.0..=100.0).contains(&a.fdr));
    }
}

#[test]
fn accuracy_examples() {
    let onehot = Array2::from_shape_fn((10, 3), |(i, j)| f64::from(u8::from(i % 3 == j)));
    let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
    assert_eq!(accuracy(&onehot, &labels).unwrap(), 100.0);
    let mut wrong = labels.clone();
    wrong[4] = (wrong[4] + 1) % 3;
    assert_eq!(accuracy(&onehot, &wrong).unwrap(), 90.0);
    // Uniform rows resolve to class 0, so accuracy is the class-0 rate.
    let uniform = Array2::from_elem((8, 2), 0.5);
    assert_eq!(accuracy(&uniform, &[0, 1, 0, 1, 0, 1, 1, 1]).unwrap(), 37.5);
    assert!(accuracy(&uniform, &[0]).is_err());
}

#[test]
fn theorem1_tv_is_small_at_low_temperature() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let r = verify_theorem1(&[1.0, 2.0, 3.0, 4.0], 2, 0.01, DEFAULT_DELTA, 100_000, 0.02, &mut rng).unwrap();
    assert!(r.passed, "tv = {:?}", r.tv_distance);
    assert!(r.match_rate < 1.0);
}

#[test]
fn theorem1_degenerate_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let r = verify_theorem1(&[1.0, 2.0, 3.0], 3, 0.01, DEFAULT_DELTA, 1000, 0.0, &mut rng).unwrap();
    assert_eq!(r.tv_distance, Some(0.0));
    let r = verify_theorem1(&[2.0; 5], 1, 0.01, DEFAULT_DELTA, 50_000, 0.02, &mut rng).unwrap();
    assert!(r.passed, "{:?}", r.tv_distance);
    let big = vec![1.0; 9];
    assert!(matches!(
        verify_theorem1(&big, 2, 0.01, DEFAULT_DELTA, 10, 0.02, &mut rng),
        Err(Error::OracleTooLarge { d: 9, .. })
    ));
    assert!(verify_theorem1(&[1.0, -1.0], 1, 0.01, DEFAULT_DELTA, 10, 0.02, &mut rng).is_err());
}

#[test]
fn theorem1_tv_shrinks_with_temperature() {
    let alpha = [1.0, 2.0, 3.0, 4.0];
    let warm = verify_theorem1(&alpha, 2, 0.1, 0.0, 100_000, 1.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let cold = verify_theorem1(&alpha, 2, 0.01, DEFAULT_DELTA, 100_000, 1.0, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert!(cold.tv_distance.unwrap() <= warm.tv_distance.unwrap() + 0.01);
}

#[test]
fn theorem2_collapses_onto_the_largest_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let r = verify_theorem2(&[1.0, 2.0, 3.0, 4.0], 2, 0.01, DEFAULT_DELTA, 1e4, 10_000, 0.999, &mut rng).unwrap();
    assert!(r.passed, "match rate {}", r.match_rate);
    let r = verify_theorem2(&[1.0, 2.0, 3.0, 4.0], 2, 0.01, DEFAULT_DELTA, 0.0, 10_000, 0.999, &mut rng).unwrap();
    assert!(r.match_rate < 1.0);
    let r = verify_theorem2(&[1.0, 1.0, 1e5], 1, 0.01, DEFAULT_DELTA, 0.0, 10_000, 0.999, &mut rng).unwrap();
    assert!(r.passed, "{}", r.match_rate);
}

#[test]
fn tv_distance_against_hand_distribution() {
    // α = (1, 2, 3), k = 2: P{0,1} = 3/20, P{0,2} = 4/15, P{1,2} = 7/12.
    let subsets = vec![vec![0, 1], vec![1, 2], vec![1, 2], vec![1, 2]];
    let tv = subset_tv_distance(&subsets, &[1.0, 2.0, 3.0], 2).unwrap();
    let expected = 0.5 * ((0.25f64 - 0.15).abs() + 4.0 / 15.0 + (0.75f64 - 7.0 / 12.0).abs());
    assert_abs_diff_eq!(tv, expected, epsilon = 1e-12);
}

#[test]
fn kolmogorov_distribution_reference_values() {
    // Tabulated quantiles of the Kolmogorov distribution.
    assert_abs_diff_eq!(kolmogorov_survival(1.3581), 0.05, epsilon = 1e-4);
    assert_abs_diff_eq!(kolmogorov_survival(1.6276), 0.01, epsilon = 1e-4);
    assert_abs_diff_eq!(kolmogorov_survival(1.2238), 0.10, epsilon = 1e-4);
    assert_eq!(kolmogorov_survival(0.0), 1.0);
}

#[test]
fn ks_statistic_by_hand() {
    let r = ks_uniform(Array1::from(vec![0.1, 0.4, 0.7]).view());
    // The largest gap is 1 − 0.7 at the last order statistic.
    assert_abs_diff_eq!(r.statistic, 0.3, epsilon = 1e-12);
    let skewed = ks_uniform(Array1::from_shape_fn(1000, |i| (i as f64 / 1000.0).powi(2)).view());
    assert!(skewed.p_value < 1e-6);
}

#[test]
fn copula_check_with_identity_correlation() {
    let model = CorrelationModel::scaled(Array2::ones((4, 1)), 0.0);
    let r = copula_marginal_check(&model, 100_000, 0.01, 0.02, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert!(r.passed, "min p {} err {}", r.min_p_value, r.max_correlation_error);
    let one = CorrelationModel::scaled(Array2::ones((1, 1)), 0.0);
    let r = copula_marginal_check(&one, 50_000, 0.01, 0.02, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert!(r.ks[0].p_value >= 0.01);
}

#[test]
fn copula_check_recovers_strong_correlation() {
    // I + L Lᵀ with L = (2, 2, 0, 0, 0) normalises to R₁₂ = 4/5.
    let factor = array![[2.0], [2.0], [0.0], [0.0], [0.0]];
    let model = CorrelationModel::scaled(factor, 1.0);
    let r = copula_marginal_check(&model, 100_000, 0.01, 0.02, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_abs_diff_eq!(r.target[0][1], 0.8, epsilon = 1e-12);
    assert!((r.empirical[0][1] - 0.8).abs() <= 0.02);
    assert!(r.passed);
}

#[test]
fn top_m_indices_are_ordered() {
    let scores = array![[0.1, 0.9, 0.5, 0.9], [3.0, 2.0, 1.0, 0.0]];
    let idx = top_m_indices(&scores, 3).unwrap();
    assert_eq!(idx, vec![vec![1, 3, 2], vec![0, 1, 2]]);
}

#[test]
fn text_report_aligns_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = verify_theorem1(&[1.0, 2.0], 1, 0.01, DEFAULT_DELTA, 100, 0.5, &mut rng).unwrap();
    let text = text_report("theorem 1", &r).unwrap();
    assert!(text.starts_with("theorem 1\n"));
    assert!(text.contains("  tv_distance  "));
    let json = serde_json::to_string(&r).unwrap();
    let back: copsel::evaluation::TheoremCheckReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
}
