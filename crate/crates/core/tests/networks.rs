use approx::assert_abs_diff_eq;
use copsel::copula::{NoiseConstruction, RankMode};
use copsel::dataset::Dataset;
use copsel::networks::{
    self, cross_entropy, infer_masks, load_checkpoint, loss_binary, noise_for_batch, predict_proba, save_checkpoint,
    scores, train, Adam, AdamConfig, CorrelationScope, Model, Params, TrainingConfig, WeightDecay,
};
use copsel::samplers::MaskMode;
use copsel::tensor::gradcheck::{central_difference, relative_error};
use copsel::tensor::Tape;
use copsel::Error;
use ndarray::{array, Array2, ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(mode: MaskMode) -> TrainingConfig {
    let mut c = TrainingConfig {
        mode,
        hidden_choice: 5,
        hidden_predict: 6,
        batch_size: 8,
        epochs: 3,
        learning_rate: 1e-2,
        ..TrainingConfig::default()
    };
    c.sampler.t = 0.5;
    if mode == MaskMode::Topk {
        c.sampler.k = 2;
        c.sampler.delta = 0.5;
    }
    c
}

fn toy_data(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let y = x.axis_iter(Axis(0)).map(|r| usize::from(r[0] > 0.0)).collect();
    Dataset::new(x, y, 2, None).unwrap()
}

fn ln(a: Array2<f64>) -> ArrayD<f64> {
    a.mapv(f64::ln).into_dyn()
}

#[test]
fn cross_entropy_matches_hand_value() {
    let tape = Tape::new();
    let lp = tape.constant(ln(array![[0.7, 0.2, 0.1], [0.25, 0.5, 0.25]]));
    let l = cross_entropy(lp, &[0, 1]).unwrap().item();
    assert_abs_diff_eq!(l, -(0.7f64.ln() + 0.5f64.ln()) / 2.0, epsilon = 1e-14);
}

#[test]
fn cross_entropy_rejects_bad_labels() {
    let tape = Tape::new();
    let lp = tape.constant(ln(array![[0.5, 0.5]]));
    assert!(cross_entropy(lp, &[2]).is_err());
    assert!(cross_entropy(lp, &[0, 1]).is_err());
}

#[test]
fn binary_loss_adds_mask_penalty() {
    let tape = Tape::new();
    let lp = tape.constant(ln(array![[0.5, 0.5], [0.9, 0.1]]));
    let soft = tape.constant(array![[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]].into_dyn());
    let l = loss_binary(lp, &[0, 0], soft, 0.5).unwrap().item();
    let ce = -(0.5f64.ln() + 0.9f64.ln()) / 2.0;
    assert_abs_diff_eq!(l, ce + 0.5 * 2.0 / 2.0, epsilon = 1e-14);
}

fn one_param(value: ArrayD<f64>) -> Params<f64> {
    let mut p = Params::new();
    p.push("w", value);
    p
}

#[test]
fn adam_zero_gradient_only_decays() {
    let mut p = one_param(array![1.0, -2.0].into_dyn());
    let mut adam = Adam::new(AdamConfig::new(0.1, 0.5), &p);
    adam.update(&mut p, &[ArrayD::zeros(IxDyn(&[2]))]).unwrap();
    let w = p.values()[0].clone();
    assert_abs_diff_eq!(w[[0]], 0.95, epsilon = 1e-15);
    assert_abs_diff_eq!(w[[1]], -1.9, epsilon = 1e-15);

    let mut p = one_param(array![1.0, -2.0].into_dyn());
    let mut adam = Adam::new(AdamConfig::new(0.1, 0.0), &p);
    adam.update(&mut p, &[ArrayD::zeros(IxDyn(&[2]))]).unwrap();
    assert_eq!(p.values()[0], array![1.0, -2.0].into_dyn());
}

#[test]
fn adam_coupled_decay_enters_the_moments() {
    // With zero loss gradient the L2 term alone is wd·p; the first Adam step
    // then moves each coordinate by lr·sign(p).
    let mut p = one_param(array![2.0, -3.0].into_dyn());
    let config = AdamConfig {
        decay_mode: WeightDecay::Coupled,
        ..AdamConfig::new(0.1, 0.1)
    };
    let mut adam = Adam::new(config, &p);
    adam.update(&mut p, &[ArrayD::zeros(IxDyn(&[2]))]).unwrap();
    let w = p.values()[0].clone();
    assert_abs_diff_eq!(w[[0]], 1.9, epsilon = 1e-8);
    assert_abs_diff_eq!(w[[1]], -2.9, epsilon = 1e-8);
    let (m, _) = adam.moments();
    assert_abs_diff_eq!(m[0][[0]], 0.1 * 0.2, epsilon = 1e-15);
}

#[test]
fn adam_first_step_is_lr_times_sign() {
    let mut p = one_param(array![0.0, 0.0, 0.0].into_dyn());
    let mut adam = Adam::new(AdamConfig::new(1e-3, 0.0), &p);
    adam.update(&mut p, &[array![3.0, -0.01, 250.0].into_dyn()]).unwrap();
    let w = &p.values()[0];
    // m̂ = g and v̂ = g², so the step is lr·g/(|g| + eps).
    for (wi, g) in w.iter().zip([3.0f64, -0.01, 250.0]) {
        assert_abs_diff_eq!(*wi, -1e-3 * g / (g.abs() + 1e-8), epsilon = 1e-15);
    }
}

#[test]
fn adam_minimises_a_quadratic_bowl() {
    let target = array![1.5, -0.5, 2.0];
    let mut p = one_param(ArrayD::zeros(IxDyn(&[3])));
    let mut adam = Adam::new(AdamConfig::new(0.05, 0.0), &p);
    for _ in 0..2000 {
        let g = (&p.values()[0] - &target.view().into_dyn()) * 2.0;
        adam.update(&mut p, &[g]).unwrap();
    }
    for (w, t) in p.values()[0].iter().zip(target.iter()) {
        assert_abs_diff_eq!(*w, *t, epsilon = 1e-3);
    }
}

#[test]
fn adam_rejects_mismatched_gradients() {
    let mut p = one_param(ArrayD::zeros(IxDyn(&[3])));
    let mut adam = Adam::new(AdamConfig::new(0.1, 0.0), &p);
    assert!(adam.update(&mut p, &[ArrayD::zeros(IxDyn(&[2]))]).is_err());
    assert!(adam.update(&mut p, &[]).is_err());
}

fn zero_choice(model: &mut Model<f64>) {
    for (name, v) in model.params.names().to_vec().iter().zip(model.params.values_mut()) {
        if name.starts_with("choice.") {
            v.fill(0.0);
        }
    }
}

#[test]
fn zero_choice_weights_give_constant_scores() {
    let data = toy_data(7, 4, 1);
    let mut m = Model::<f64>::new(&small_config(MaskMode::Binary), 4, 2).unwrap();
    zero_choice(&mut m);
    let a = scores(&m, &data.x).unwrap();
    assert!(a.iter().all(|&v| v == 0.0));

    let mut m = Model::<f64>::new(&small_config(MaskMode::Topk), 4, 2).unwrap();
    zero_choice(&mut m);
    let a = scores(&m, &data.x).unwrap();
    for v in a.iter() {
        assert_abs_diff_eq!(*v, 2f64.ln() + networks::SCORE_FLOOR, epsilon = 1e-15);
    }
}

fn analytic_gradients(model: &Model<f64>, data: &Dataset, zeta: &ArrayD<f64>) -> Vec<ArrayD<f64>> {
    let mut m = model.clone();
    let tape = Tape::new();
    let bound = m.params.bind(&tape, true);
    let out = m
        .forward_loss(&bound, tape.constant(data.x.clone().into_dyn()), &data.y, tape.constant(zeta.clone()))
        .unwrap();
    let mut g = tape.backward(out.loss).unwrap();
    bound.gradients(&mut g)
}

fn loss_with(model: &Model<f64>, data: &Dataset, zeta: &ArrayD<f64>, index: usize, value: &ArrayD<f64>) -> f64 {
    let mut m = model.clone();
    m.params.values_mut()[index] = value.clone();
    let tape = Tape::new();
    let bound = m.params.bind(&tape, false);
    m.forward_loss(&bound, tape.constant(data.x.clone().into_dyn()), &data.y, tape.constant(zeta.clone()))
        .unwrap()
        .loss
        .item()
}

#[test]
fn nola_cuts_the_factor_heads_out_of_the_graph() {
    let data = toy_data(6, 4, 2);
    let mut cfg = small_config(MaskMode::Binary);
    cfg.nola = true;
    let m = Model::<f64>::new(&cfg, 4, 2).unwrap();
    let zeta = noise_for_batch::<f64, _>(&mut ChaCha8Rng::seed_from_u64(3), 6, 4);
    let grads = analytic_gradients(&m, &data, &zeta);
    for (name, g) in m.params.names().iter().zip(&grads) {
        let zero = g.iter().all(|&v| v == 0.0);
        if name.starts_with("choice.factor") || name.starts_with("choice.sigma") {
            assert!(zero, "{name} should get no gradient");
        } else if name == "choice.score.weight" {
            assert!(!zero);
        }
    }
}

fn end_to_end_gradcheck(cfg: &TrainingConfig, n_classes: usize) {
    let d = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Array2::from_shape_fn((6, d), |_| rng.random_range(-1.0..1.0));
    let y: Vec<usize> = (0..6).map(|i| i % n_classes).collect();
    let data = Dataset::new(x, y, n_classes, None).unwrap();
    let mut m = Model::<f64>::new(cfg, d, n_classes).unwrap();
    // Push the factor head away from the ReLU kink.
    let fid = m.params.find("choice.factor.weight").unwrap();
    m.params.get_mut(fid).mapv_inplace(|v| v.abs() + 0.05);
    let zeta = noise_for_batch::<f64, _>(&mut rng, 6, cfg.noise_dim(d));
    let grads = analytic_gradients(&m, &data, &zeta);
    for (i, name) in m.params.names().iter().enumerate() {
        let numeric = central_difference(|v| loss_with(&m, &data, &zeta, i, v), &m.params.values()[i], 1e-6);
        let err = relative_error(&grads[i], &numeric);
        // Batch norm makes some bias gradients exactly zero; the difference
        // quotient is then pure roundoff.
        let abs = (&grads[i] - &numeric).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-4 || abs < 1e-7, "{name}: relative error {err}, max abs {abs}");
    }
}

#[test]
fn binary_model_gradients_match_finite_differences() {
    let mut cfg = small_config(MaskMode::Binary);
    cfg.rank_mode = RankMode::Low;
    cfg.factor_rank = 2;
    end_to_end_gradcheck(&cfg, 2);
}

#[test]
fn topk_model_gradients_match_finite_differences() {
    let mut cfg = small_config(MaskMode::Topk);
    cfg.activation = networks::Activation::Selu;
    end_to_end_gradcheck(&cfg, 3);
}

#[test]
fn batch_scope_gradients_match_finite_differences() {
    let mut cfg = small_config(MaskMode::Binary);
    cfg.correlation_scope = CorrelationScope::Batch;
    end_to_end_gradcheck(&cfg, 2);
}

#[test]
fn factor_noise_gradients_match_finite_differences() {
    let mut cfg = small_config(MaskMode::Binary);
    cfg.noise_construction = NoiseConstruction::Factor;
    cfg.rank_mode = RankMode::Low;
    cfg.factor_rank = 2;
    assert_eq!(cfg.noise_dim(4), 6);
    end_to_end_gradcheck(&cfg, 2);
    let mut cfg = small_config(MaskMode::Topk);
    cfg.noise_construction = NoiseConstruction::Factor;
    cfg.correlation_scope = CorrelationScope::Batch;
    end_to_end_gradcheck(&cfg, 3);
}

#[test]
fn factor_noise_training_runs_and_repeats() {
    let data = toy_data(64, 5, 4);
    let mut cfg = small_config(MaskMode::Binary);
    cfg.noise_construction = NoiseConstruction::Factor;
    cfg.epochs = 3;
    let a = train::<f64, _>(&cfg, &data, |_, _| Ok(())).unwrap();
    let b = train::<f64, _>(&cfg, &data, |_, _| Ok(())).unwrap();
    assert_eq!(a.model.params.values(), b.model.params.values());
    assert!(a.log.iter().all(|e| e.loss.is_finite()));
    cfg.nola = true;
    assert_eq!(cfg.noise_dim(5), 5);
    train::<f64, _>(&cfg, &data, |_, _| Ok(())).unwrap();
}

#[test]
fn predicted_probabilities_are_distributions() {
    let data = toy_data(20, 4, 5);
    let m = Model::<f64>::new(&small_config(MaskMode::Binary), 4, 2).unwrap();
    let masks = infer_masks(&m, &data.x, None).unwrap();
    let p = predict_proba(&m, &data.x, &masks.hard).unwrap();
    for row in p.axis_iter(Axis(0)) {
        assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        assert!(row.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn predictor_with_all_ones_mask_fits_separable_data() {
    let data = toy_data(200, 3, 6);
    let cfg = TrainingConfig {
        hidden_predict: 16,
        hidden_choice: 4,
        ..TrainingConfig::default()
    };
    let mut m = Model::<f64>::new(&cfg, 3, 2).unwrap();
    let mut adam = Adam::new(AdamConfig::new(1e-2, 0.0), &m.params);
    let mut last = f64::INFINITY;
    for _ in 0..200 {
        let tape = Tape::new();
        let bound = m.params.bind(&tape, true);
        let lp = m.predict.forward(&bound, tape.constant(data.x.clone().into_dyn()), true).unwrap();
        let loss = cross_entropy(lp, &data.y).unwrap();
        last = loss.item();
        let mut g = tape.backward(loss).unwrap();
        let g = bound.gradients(&mut g);
        adam.update(&mut m.params, &g).unwrap();
    }
    assert!(last <= 0.05, "final loss {last}");
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = toy_data(40, 4, 7);
    let cfg = small_config(MaskMode::Binary);
    let a = train::<f64, _>(&cfg, &data, |_, _| Ok(())).unwrap();
    let b = train::<f64, _>(&cfg, &data, |_, _| Ok(())).unwrap();
    assert_eq!(a.model.params.values(), b.model.params.values());
    assert_eq!(a.log.iter().map(|e| e.loss).collect::<Vec<_>>(), b.log.iter().map(|e| e.loss).collect::<Vec<_>>());
    let c = train::<f64, _>(&TrainingConfig { seed: 1, ..cfg }, &data, |_, _| Ok(())).unwrap();
    assert_ne!(a.model.params.values(), c.model.params.values());
}

#[test]
fn training_reports_every_epoch_and_can_abort() {
    let data = toy_data(17, 4, 8);
    let cfg = small_config(MaskMode::Topk);
    let mut seen = Vec::new();
    let out = train::<f64, _>(&cfg, &data, |e, _| {
        seen.push(e.epoch);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![0, 1, 2]);
    assert!(out.log.iter().all(|e| e.loss.is_finite()));
    // k = 2 relaxed mask rows sum to k.
    assert!(out.log.iter().all(|e| (e.mean_soft_mass - 2.0).abs() < 1e-9));

    let err = train::<f64, _>(&cfg, &data, |e, _| {
        if e.epoch == 1 {
            Err(Error::InvalidParameter {
                name: "stop",
                detail: String::new(),
            })
        } else {
            Ok(())
        }
    });
    assert!(err.is_err());
}

#[test]
fn heavy_sparsity_penalty_switches_features_off() {
    let data = toy_data(64, 5, 9);
    let mut cfg = small_config(MaskMode::Binary);
    cfg.sampler.lambda = 20.0;
    cfg.epochs = 60;
    cfg.batch_size = 32;
    cfg.learning_rate = 1e-2;
    let out = train::<f64, _>(&cfg, &data, |_, _| Ok(())).unwrap();
    let masks = infer_masks(&out.model, &data.x, None).unwrap();
    let rate = masks.hard.mean().unwrap();
    assert!(rate < 0.05, "selection rate {rate}");
}

#[test]
fn binary_inference_rounds_logistic_scores() {
    let data = toy_data(10, 4, 10);
    let m = Model::<f64>::new(&small_config(MaskMode::Binary), 4, 2).unwrap();
    let a = scores(&m, &data.x).unwrap();
    let masks = infer_masks(&m, &data.x, None).unwrap();
    for ((&a, &s), &h) in a.iter().zip(masks.soft.iter()).zip(masks.hard.iter()) {
        assert_abs_diff_eq!(s, 1.0 / (1.0 + (-a).exp()), epsilon = 1e-14);
        assert_eq!(h, if a > 0.0 { 1.0 } else { 0.0 });
    }
}

#[test]
fn bernoulli_inference_uses_the_rng() {
    let data = toy_data(200, 4, 12);
    let mut cfg = small_config(MaskMode::Binary);
    cfg.binary_inference = networks::BinaryInference::Bernoulli;
    let m = Model::<f64>::new(&cfg, 4, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let masks = infer_masks(&m, &data.x, Some(&mut rng)).unwrap();
    assert!(masks.hard.iter().all(|&v| v == 0.0 || v == 1.0));
    let diff = (masks.hard.mean().unwrap() - masks.soft.mean().unwrap()).abs();
    assert!(diff < 0.06, "{diff}");
}

#[test]
fn topk_inference_keeps_exactly_k_features() {
    let data = toy_data(30, 5, 13);
    let m = Model::<f64>::new(&small_config(MaskMode::Topk), 5, 2).unwrap();
    let masks = infer_masks(&m, &data.x, None).unwrap();
    for (soft, hard) in masks.soft.axis_iter(Axis(0)).zip(masks.hard.axis_iter(Axis(0))) {
        assert_abs_diff_eq!(soft.sum(), 2.0, epsilon = 1e-9);
        assert_eq!(hard.sum(), 2.0);
        let min_kept = soft.iter().zip(hard.iter()).filter(|(_, &h)| h == 1.0).map(|(s, _)| *s).fold(f64::INFINITY, f64::min);
        let max_dropped = soft.iter().zip(hard.iter()).filter(|(_, &h)| h == 0.0).map(|(s, _)| *s).fold(0.0, f64::max);
        assert!(min_kept >= max_dropped);
    }
}

#[test]
fn checkpoint_round_trip_preserves_the_model() {
    let data = toy_data(24, 4, 14);
    let out = train::<f64, _>(&small_config(MaskMode::Binary), &data, |_, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&out.model, &path).unwrap();
    assert!(dir.path().join("model.bin").exists());
    let back = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(back.params.values(), out.model.params.values());
    assert_eq!(back.config, out.model.config);
    for (a, b) in back.predict.norm_state.iter().zip(&out.model.predict.norm_state) {
        assert_eq!(a.running_mean, b.running_mean);
        assert_eq!(a.running_var, b.running_var);
    }
    let m1 = infer_masks(&out.model, &data.x, None).unwrap();
    let p1 = predict_proba(&out.model, &data.x, &m1.hard).unwrap();
    let p2 = predict_proba(&back, &data.x, &m1.hard).unwrap();
    assert_eq!(p1, p2);
}

#[test]
fn checkpoint_rejects_tampered_config() {
    let m = Model::<f64>::new(&small_config(MaskMode::Binary), 4, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&m, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap().replace("\"epochs\": 3", "\"epochs\": 4");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::Format { .. })));
}

#[test]
fn checkpoint_rejects_truncated_data() {
    let m = Model::<f64>::new(&small_config(MaskMode::Topk), 4, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&m, &path).unwrap();
    let bin = dir.path().join("m.bin");
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() - 16]).unwrap();
    assert!(load_checkpoint::<f64>(&path).is_err());
}

#[test]
fn config_json_round_trips_and_rejects_unknown_keys() {
    let cfg = small_config(MaskMode::Topk);
    let json = serde_json::to_string(&cfg).unwrap();
    assert!(json.contains("\"k\":2"));
    let back: TrainingConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
    let bad = json.replacen('{', "{\"bogus\":1,", 1);
    assert!(serde_json::from_str::<TrainingConfig>(&bad).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let base = small_config(MaskMode::Topk);
    assert!(Model::<f64>::new(&base, 1, 2).is_err());
    assert!(Model::<f64>::new(&base, 4, 1).is_err());
    let low = TrainingConfig {
        rank_mode: RankMode::Low,
        factor_rank: 5,
        ..base.clone()
    };
    assert!(Model::<f64>::new(&low, 4, 2).is_err());
    let tiny = TrainingConfig { batch_size: 1, ..base };
    assert!(Model::<f64>::new(&tiny, 4, 2).is_err());
}

#[test]
fn f32_model_trains() {
    let data = toy_data(16, 4, 15);
    let out = train::<f32, _>(&small_config(MaskMode::Binary), &data, |_, _| Ok(())).unwrap();
    assert!(out.log.iter().all(|e| e.loss.is_finite()));
}
