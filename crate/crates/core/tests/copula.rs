use approx::assert_abs_diff_eq;
use ndarray::{array, Array2, Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use copsel::copula::*;
use copsel::tensor::{gradcheck, Tape, TensorError};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn covariance_reference_values() {
    let zero = CorrelationModel::noise_level(Array2::<f64>::zeros((3, 2)), 1.0);
    assert_eq!(zero.covariance().unwrap(), Array2::<f64>::eye(3));

    let ones = CorrelationModel::noise_level(array![[1.0], [1.0]], 1.0);
    assert_eq!(ones.covariance().unwrap(), array![[2.0, 1.0], [1.0, 2.0]]);

    let scaled = CorrelationModel::scaled(array![[1.0], [1.0]], 3.0);
    assert_eq!(scaled.covariance().unwrap(), array![[4.0, 3.0], [3.0, 4.0]]);
}

#[test]
fn normalize_reference_values() {
    let tape = Tape::<f64>::new();
    let eye = tape.constant(Array2::<f64>::eye(3).into_dyn());
    assert_eq!(*normalize(eye).unwrap().value(), Array2::<f64>::eye(3).into_dyn());

    let s = tape.constant(array![[4.0, 1.0], [1.0, 1.0]].into_dyn());
    assert_eq!(*normalize(s).unwrap().value(), array![[1.0, 0.5], [0.5, 1.0]].into_dyn());

    let bad = tape.constant(array![[0.0, 0.0], [0.0, 1.0]].into_dyn());
    assert!(matches!(normalize(bad), Err(TensorError::Domain { op: "normalize", .. })));
}

#[test]
fn normalize_is_scale_invariant_and_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0f64..1.0));
    let model = CorrelationModel::noise_level(l, 0.7);
    let sigma = model.covariance().unwrap();
    let tape = Tape::<f64>::new();
    let r = normalize(tape.constant(sigma.clone().into_dyn())).unwrap();
    let r_scaled = normalize(tape.constant((sigma * 3.5).into_dyn())).unwrap();
    let r_twice = normalize(r).unwrap();
    for ((a, b), c) in r.value().iter().zip(r_scaled.value().iter()).zip(r_twice.value().iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        assert_abs_diff_eq!(a, c, epsilon = 1e-12);
    }
    let rv = r.array();
    
    for i in 0..5 {
        assert_abs_diff_eq!(rv[[i, i]], 1.0, epsilon = 1e-15);
    }
    assert!(rv.iter().all(|v| v.abs() <= 1.0 + 1e-15));
}

#[test]
fn factor_reconstructs_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (d, p) in [(4, 1), (6, 3), (8, 8)] {
        let l = Array2::from_shape_fn((d, p), |_| rng.random_range(-2.0f64..2.0));
        let model = CorrelationModel::noise_level(l, 0.3);
        let r = model.correlation().unwrap();
        let v = model.correlation_factor().unwrap();
        let back = v.dot(&v.t());
        let target = &r + &(Array2::<f64>::eye(d) * JITTER);
        let err = (&back - &target).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(err <= 1e-12, "{err}");
    }
}

#[test]
fn tiny_noise_level_still_factorises() {
    // rank-1 R is only semidefinite; the jitter keeps it factorisable
    let model = CorrelationModel::noise_level(Array2::from_elem((6, 1), 1.0), 1e-6);
    assert!(model.sample(&mut ChaCha8Rng::seed_from_u64(1)).is_ok());
}

#[test]
fn uniform_draws_stay_inside_the_open_interval() {
    let model = CorrelationModel::scaled(Array2::from_elem((3, 1), 1.0), 1e4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, u) = model.sample_many(10_000, &mut rng).unwrap();
    assert!(u.iter().all(|&v| v >= UNIFORM_CLAMP && v <= 1.0 - UNIFORM_CLAMP));
}

#[test]
fn independent_latents_are_uncorrelated() {
    let model = CorrelationModel::noise_level(Array2::<f64>::zeros((3, 1)), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (q, _) = model.sample_many(100_000, &mut rng).unwrap();
    let c = pearson(&q.column(0).to_vec(), &q.column(1).to_vec());
    assert!(c.abs() <= 0.02, "{c}");
}

#[test]
fn latent_correlation_matches_target() {
    // L = (a, a, 0)ᵀ with σ = 1 gives R_12 = a² / (a² + 1) = 0.8 at a = 2
    let model = CorrelationModel::noise_level(array![[2.0], [2.0], [0.0]], 1.0);
    assert_abs_diff_eq!(model.correlation().unwrap()[[0, 1]], 0.8, epsilon = 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (q, _) = model.sample_many(100_000, &mut rng).unwrap();
    let c = pearson(&q.column(0).to_vec(), &q.column(1).to_vec());
    assert!((c - 0.8).abs() <= 0.02, "{c}");
}

#[test]
fn single_draw_agrees_with_batched_tensor_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let l = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
    let model = CorrelationModel::noise_level(l.clone(), 0.5);
    let draw = model.sample(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();

    let tape = Tape::<f64>::new();
    let factor = tape.constant(l.into_dyn()).reshape(&[1, 4, 2]).unwrap();
    let sigma = tape.constant(array![0.5].into_dyn());
    let r = normalize(covariance_noise_level(factor, sigma).unwrap()).unwrap();
    let zeta = tape.constant(draw.zeta.clone().into_shape_with_order((1, 4)).unwrap().into_dyn());
    let (q, u) = correlated_uniform(r, zeta).unwrap();
    for (a, b) in q.value().iter().zip(draw.q.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    for (a, b) in u.value().iter().zip(draw.u.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn noise_is_differentiable_in_factor_and_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (b, d, p) = (2, 4, 2);
    let l = Array3::from_shape_fn((b, d, p), |_| rng.random_range(-1.0..1.0)).into_dyn();
    let sigma = array![0.6, 0.9].into_dyn();
    let zeta = ArrayD::from_shape_fn(IxDyn(&[b, d]), |_| rng.sample::<f64, _>(StandardNormal));
    let w = ArrayD::from_shape_fn(IxDyn(&[b, d]), |_| rng.random_range(-1.0..1.0));

    let check_l = gradcheck::check(
        |tape, factor| {
            let s = tape.constant(sigma.clone());
            let r = normalize(covariance_noise_level(factor, s)?)?;
            let (_, u) = correlated_uniform(r, tape.constant(zeta.clone()))?;
            u.mul(tape.constant(w.clone()))?.sum()
        },
        &l,
        1e-5,
    )
    .unwrap();
    assert!(check_l.relative_error <= 1e-4, "{}", check_l.relative_error);

    let check_sigma = gradcheck::check(
        |tape, s| {
            let factor = tape.constant(l.clone());
            let r = normalize(covariance_noise_level(factor, s)?)?;
            let (_, u) = correlated_uniform(r, tape.constant(zeta.clone()))?;
            u.mul(tape.constant(w.clone()))?.sum()
        },
        &sigma,
        1e-5,
    )
    .unwrap();
    assert!(check_sigma.relative_error <= 1e-4, "{}", check_sigma.relative_error);
}

fn normal_rows(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(&[n, m]), |_| rng.sample::<f64, _>(StandardNormal))
}

#[test]
fn factor_construction_has_the_target_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let tape = Tape::<f64>::new();
    // Shared [1, d, p] factor: L = (2, 2, 0), σ = 1 gives R₁₂ = 0.8.
    let factor = tape.constant(array![[[2.0], [2.0], [0.0]]].into_dyn());
    let sigma = tape.constant(array![1.0].into_dyn());
    let zeta = tape.constant(normal_rows(&mut rng, n, 4));
    let (q, u) = factor_uniform(factor, Some(sigma), 0.0, zeta).unwrap();
    let q = q.array().into_dimensionality::<ndarray::Ix2>().unwrap();
    let col = |j: usize| q.column(j).to_vec();
    assert!((pearson(&col(0), &col(1)) - 0.8).abs() <= 0.02);
    assert!(pearson(&col(0), &col(2)).abs() <= 0.02);
    for j in 0..3 {
        let var = q.column(j).iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() <= 0.02, "{var}");
    }
    assert!(u.value().iter().all(|&v| v > 0.0 && v < 1.0));

    // Scaled form: I + τ L Lᵀ with L = (1, 1), τ = 4 gives R₁₂ = 4/5 as well.
    let tape = Tape::<f64>::new();
    let factor = tape.constant(array![[[1.0], [1.0]]].into_dyn());
    let zeta = tape.constant(normal_rows(&mut rng, n, 3));
    let (q, _) = factor_uniform(factor, None, 4.0, zeta).unwrap();
    let q = q.array().into_dimensionality::<ndarray::Ix2>().unwrap();
    assert!((pearson(&q.column(0).to_vec(), &q.column(1).to_vec()) - 0.8).abs() <= 0.02);
}

#[test]
fn factor_construction_checks_shapes() {
    let tape = Tape::<f64>::new();
    let factor = tape.constant(ArrayD::zeros(IxDyn(&[2, 3, 1])));
    let zeta = tape.constant(ArrayD::zeros(IxDyn(&[2, 3])));
    assert!(matches!(
        factor_uniform(factor, None, 1.0, zeta),
        Err(TensorError::ShapeMismatch { .. })
    ));
    let zeta = tape.constant(ArrayD::zeros(IxDyn(&[3, 4])));
    assert!(factor_uniform(factor, None, 1.0, zeta).is_err());
}

#[test]
fn factor_construction_is_differentiable() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (b, d, p) = (3, 4, 2);
    let l = Array3::from_shape_fn((b, d, p), |_| rng.random_range(-1.0..1.0)).into_dyn();
    let sigma = array![0.6, 0.9, 0.3].into_dyn();
    let zeta = normal_rows(&mut rng, b, p + d);
    let w = ArrayD::from_shape_fn(IxDyn(&[b, d]), |_| rng.random_range(-1.0..1.0));
    let check_l = gradcheck::check(
        |tape, factor| {
            let s = tape.constant(sigma.clone());
            let (_, u) = factor_uniform(factor, Some(s), 0.0, tape.constant(zeta.clone()))?;
            u.mul(tape.constant(w.clone()))?.sum()
        },
        &l,
        1e-5,
    )
    .unwrap();
    assert!(check_l.relative_error <= 1e-4, "{}", check_l.relative_error);
    let check_sigma = gradcheck::check(
        |tape, s| {
            let factor = tape.constant(l.clone());
            let (_, u) = factor_uniform(factor, Some(s), 0.0, tape.constant(zeta.clone()))?;
            u.mul(tape.constant(w.clone()))?.sum()
        },
        &sigma,
        1e-5,
    )
    .unwrap();
    assert!(check_sigma.relative_error <= 1e-4, "{}", check_sigma.relative_error);
    let shared = l.slice(ndarray::s![0..1, .., ..]).to_owned().into_dyn();
    let check_scaled = gradcheck::check(
        |tape, factor| {
            let (_, u) = factor_uniform(factor, None, 2.0, tape.constant(zeta.clone()))?;
            u.mul(tape.constant(w.clone()))?.sum()
        },
        &shared,
        1e-5,
    )
    .unwrap();
    assert!(check_scaled.relative_error <= 1e-4, "{}", check_scaled.relative_error);
}

#[test]
fn exported_matrix_has_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sigma.csv");
    write_matrix_csv(&path, &array![[2.0, 1.0], [1.0, 2.0]]).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text, "1,2\n2,1\n1,2\n");
}
