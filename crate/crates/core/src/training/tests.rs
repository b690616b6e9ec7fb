use super::*;
use crate::score_model::{oracle_predict, DenoiserArch};
use crate::sde::{standard_normal, ScheduleConfig};
use ndarray::{array, Array2};
use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
use rand_distr::StandardNormal;

fn sched() -> NoiseSchedule {
    ScheduleConfig::default().build().unwrap()
}

fn small_sched(steps: usize) -> NoiseSchedule {
    ScheduleConfig {
        steps,
        theta_bar_total: 2.0,
        lambda: 0.5,
        ..Default::default()
    }
    .build()
    .unwrap()
}

fn pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> TrainSample {
    let x0 = Array2::from_shape_simple_fn((h, w), || if rng.random_bool(0.3) { rng.random_range(0.1..1.0) } else { 0.0 });
    let mu = Array2::from_shape_simple_fn((h, w), || if rng.random_bool(0.1) { rng.random_range(0.1..1.0) } else { 0.0 });
    TrainSample::new(mu, x0).unwrap()
}

fn tiny_arch() -> DenoiserArch {
    DenoiserArch {
        widths: vec![3, 4],
        temb_dim: 4,
        ..Default::default()
    }
}

#[test]
fn ideal_at_first_step_is_clean_state() {
    let s = sched();
    let x0 = array![[0.2, 0.9], [0.0, 0.4]];
    let mu = array![[0.5, 0.1], [0.3, 0.3]];
    let xi = array![[1.0, -1.0], [0.7, 0.0]];
    let out = ideal_prev_state(&x0, &xi, &mu, &s, 1).unwrap();
    for (a, b) in out.iter().zip(&x0) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn ideal_at_stationary_point_is_mean() {
    let s = sched();
    let mu = array![[0.5, 0.1], [0.3, 0.8]];
    for i in [1, 2, 50, 100] {
        let out = ideal_prev_state(&mu, &mu, &mu, &s, i).unwrap();
        for (a, b) in out.iter().zip(&mu) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn ideal_rejects_bad_steps_and_shapes() {
    let s = small_sched(4);
    let a = Array2::zeros((2, 2));
    assert!(ideal_prev_state(&a, &a, &a, &s, 0).is_err());
    assert!(ideal_prev_state(&a, &a, &a, &s, 5).is_err());
    assert!(matches!(
        ideal_prev_state(&a, &Array2::zeros((2, 3)), &a, &s, 1),
        Err(Error::ShapeMismatch { .. })
    ));
}

/// Conditional Monte Carlo over exact scalar chains, smaller than the
/// integration-test version.
#[test]
fn ideal_matches_conditional_sampling() {
    let s = small_sched(4);
    let (x0, mu) = (1.0, 0.0);
    let i = 3;
    let target = mu + (x0 - mu) * s.decay(i);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut sum, mut n) = (0.0, 0usize);
    for _ in 0..200_000 {
        let mut x = x0;
        let mut prev = x;
        for k in 1..=i {
            prev = x;
            let z: f64 = rng.sample(StandardNormal);
            x = mu + (x - mu) * s.step_decay(k) + s.step_variance(k).sqrt() * z;
        }
        if (x - target).abs() <= 0.01 {
            sum += prev;
            n += 1;
        }
    }
    let mc = sum / n as f64;
    let closed = ideal_prev_state(&array![[x0]], &array![[target]], &array![[mu]], &s, i).unwrap()[[0, 0]];
    assert!(n > 1000, "{n}");
    assert!((mc - closed).abs() / closed.abs() < 0.02, "mc {mc} closed {closed}");
}

#[test]
fn reversed_with_zero_drift_and_prediction_is_identity() {
    let s = NoiseSchedule::from_thetas(0.2, 1.0, vec![0.0; 4]);
    let x = array![[0.3, 0.6]];
    let mu = array![[0.9, 0.1]];
    let out = reversed_prev_state(&x, &mu, &s, 2, &Array2::zeros((1, 2))).unwrap();
    assert_eq!(out, x);
}

#[test]
fn reversed_is_affine_in_prediction() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = standard_normal((4, 4), &mut rng);
    let mu = standard_normal((4, 4), &mut rng);
    let e1 = standard_normal((4, 4), &mut rng);
    let e2 = standard_normal((4, 4), &mut rng);
    let f = |e: &Array2<f64>| reversed_prev_state(&x, &mu, &s, 30, e).unwrap();
    let (a, b) = (0.3, 0.7);
    let mixed = f(&(&e1 * a + &e2 * b));
    let expect = f(&e1) * a + f(&e2) * b;
    for (p, q) in mixed.iter().zip(&expect) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn oracle_reversed_state_is_close_to_ideal() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sample = pair(&mut rng, 16, 16);
    let mut worst: f64 = 0.0;
    for i in 1..=s.steps() {
        let (xi, _) = forward_sample(&sample.x0, &sample.mu, &s, i, &mut rng).unwrap();
        let eps = oracle_predict(&sample.x0, &xi, &sample.mu, &s, i).unwrap();
        let rev = reversed_prev_state(&xi, &sample.mu, &s, i, &eps).unwrap();
        let ideal = ideal_prev_state(&sample.x0, &xi, &sample.mu, &s, i).unwrap();
        let dev = (&rev - &ideal).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        worst = worst.max(dev / (s.theta(i) * s.dt()));
    }
    // Deviation is a fraction of θ·dt times the pixel scale.
    assert!(worst < 1.0, "{worst}");
}

#[test]
fn residual_loss_hand_case() {
    let masks = mask_of(&array![[1.0, 0.0], [0.0, 0.0]]);
    let rev = array![[0.5, 0.2], [-0.4, 0.0]];
    let ideal = Array2::zeros((2, 2));
    let (t, g) = residual_loss(&rev, &ideal, &masks, 2.0, 1.0).unwrap();
    assert!((t.j_target - 0.5).abs() < 1e-15);
    assert!((t.j_blank - 0.2).abs() < 1e-15);
    assert!((t.loss - 0.9).abs() < 1e-15);
    assert_eq!(g, array![[1.0, 2.0 / 3.0], [-2.0 / 3.0, 0.0]]);
}

#[test]
fn empty_region_contributes_nothing() {
    let masks = mask_of(&Array2::zeros((2, 2)));
    let (t, _) = residual_loss(&Array2::ones((2, 2)), &Array2::zeros((2, 2)), &masks, 2.0, 1.0).unwrap();
    assert_eq!(t.j_target, 0.0);
    assert_eq!(t.loss, 2.0);
}

#[test]
fn zero_weight_ignores_blank_perturbations() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sample = pair(&mut rng, 8, 8);
    let cfg = TrainConfig { w: 0.0, ..Default::default() };
    let (xi, _) = forward_sample(&sample.x0, &sample.mu, &s, 20, &mut rng).unwrap();
    let eps = standard_normal((8, 8), &mut rng);
    let (base, _) = masked_loss_for_prediction(&sample, &s, &xi, 20, &eps, &cfg).unwrap();
    let mut perturbed = eps.clone();
    Zip::from(&mut perturbed).and(&sample.masks.blank).for_each(|e, &b| {
        if b > 0.0 {
            *e += 3.0;
        }
    });
    let (after, _) = masked_loss_for_prediction(&sample, &s, &xi, 20, &perturbed, &cfg).unwrap();
    assert_eq!(base.loss, after.loss);
    assert_ne!(base.j_blank, after.j_blank);
}

#[test]
fn all_ones_mask_is_the_plain_weighted_loss() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = pair(&mut rng, 8, 8);
    let masks = Masks {
        target: Array2::ones((8, 8)),
        blank: Array2::zeros((8, 8)),
    };
    let sample = TrainSample::with_masks(base.mu, base.x0, masks).unwrap();
    let mut gamma = vec![1.0; s.steps()];
    gamma[9] = 2.5;
    let cfg = TrainConfig { gamma, ..Default::default() };
    let (xi, _) = forward_sample(&sample.x0, &sample.mu, &s, 10, &mut rng).unwrap();
    let eps = standard_normal((8, 8), &mut rng);
    let (t, _) = masked_loss_for_prediction(&sample, &s, &xi, 10, &eps, &cfg).unwrap();
    let ideal = ideal_prev_state(&sample.x0, &xi, &sample.mu, &s, 10).unwrap();
    let rev = reversed_prev_state(&xi, &sample.mu, &s, 10, &eps).unwrap();
    let plain = 2.5 * (&rev - &ideal).mapv(f64::abs).mean().unwrap();
    assert!((t.loss - plain).abs() < 1e-14);
}

#[test]
fn unit_weight_split_equals_unsplit_mean() {
    // With w = 1 and masks of equal size the split terms average to the
    // full-image mean.
    let masks = Masks {
        target: array![[1.0, 1.0], [0.0, 0.0]],
        blank: array![[0.0, 0.0], [1.0, 1.0]],
    };
    let rev = array![[0.3, -0.1], [0.2, 0.6]];
    let (t, _) = residual_loss(&rev, &Array2::zeros((2, 2)), &masks, 1.0, 1.0).unwrap();
    let plain = rev.mapv(f64::abs).mean().unwrap();
    assert!((t.loss / 2.0 - plain).abs() < 1e-15);
}

#[test]
fn oracle_loss_is_below_floor() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = TrainConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let sample = pair(&mut rng, 16, 16);
        for i in [1, 2, 10, 50, 100] {
            let (xi, _) = forward_sample(&sample.x0, &sample.mu, &s, i, &mut rng).unwrap();
            let eps = oracle_predict(&sample.x0, &xi, &sample.mu, &s, i).unwrap();
            let (t, _) = masked_loss_for_prediction(&sample, &s, &xi, i, &eps, &cfg).unwrap();
            worst = worst.max(t.loss);
        }
    }
    assert!(worst < ORACLE_LOSS_FLOOR, "{worst}");
}

/// Largest oracle loss seen on random pairs at the default schedule.
const ORACLE_LOSS_FLOOR: f64 = 5e-3;

#[test]
fn loss_gradient_matches_finite_differences() {
    let s = small_sched(6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sample = pair(&mut rng, 4, 4);
    let cfg = TrainConfig { arch: tiny_arch(), ..Default::default() };
    let mut model = DenoiserModel::new(tiny_arch(), 1).unwrap().with_schedule(&s);
    // Nonzero output layer so every parameter influences the loss.
    for p in model.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    let (xi, _) = forward_sample(&sample.x0, &sample.mu, &s, 3, &mut rng).unwrap();
    let (_, grad) = masked_loss_at(&sample, &s, &model, &xi, 3, &cfg).unwrap();
    let h = 1e-6;
    let mut checked = 0;
    for k in 0..model.param_count() {
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.params_mut()[k] += delta;
            masked_loss_at(&sample, &s, &m, &xi, 3, &cfg).unwrap().0.loss
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        // The L1 kink makes the loss nonsmooth; skip parameters whose
        // perturbation flips a residual sign.
        let fd2 = (eval(h / 4.0) - eval(-h / 4.0)) / (h / 2.0);
        if (fd - fd2).abs() > 1e-6 * fd.abs().max(1e-6) {
            continue;
        }
        // 1e-10 absolute slack covers round-off in the difference quotient.
        let tol = 1e-4 * fd.abs().max(grad[k].abs()) + 1e-10;
        assert!((fd - grad[k]).abs() < tol, "param {k}: fd {fd} analytic {}", grad[k]);
        checked += 1;
    }
    assert!(checked * 4 > model.param_count() * 3, "{checked} of {}", model.param_count());
}

fn quick_cfg(iterations: usize) -> TrainConfig {
    TrainConfig {
        arch: DenoiserArch {
            widths: vec![4, 8],
            temb_dim: 8,
            ..Default::default()
        },
        iterations,
        batch_size: 2,
        ..Default::default()
    }
}

#[test]
fn training_is_reproducible() {
    let s = small_sched(10);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data: Vec<_> = (0..4).map(|_| pair(&mut rng, 8, 8)).collect();
    let a = train(&data, &s, &quick_cfg(5)).unwrap();
    let b = train(&data, &s, &quick_cfg(5)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.model, b.model);
    assert_eq!(a.trace.rows.len(), 5);
    let c = train(&data, &s, &TrainConfig { seed: 1, ..quick_cfg(5) }).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn training_rejects_bad_inputs() {
    let s = small_sched(10);
    let cfg = quick_cfg(1);
    assert!(matches!(train(&[], &s, &cfg), Err(Error::InvalidConfig(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let odd = pair(&mut rng, 6, 6);
    assert!(train(&[odd], &s, &cfg).is_err());
    let ok = pair(&mut rng, 8, 8);
    for bad in [
        TrainConfig { w: -1.0, ..quick_cfg(1) },
        TrainConfig { gamma: vec![1.0; 3], ..quick_cfg(1) },
        TrainConfig { gamma: vec![0.0; 10], ..quick_cfg(1) },
        TrainConfig { batch_size: 0, ..quick_cfg(1) },
        TrainConfig { learning_rate: 0.0, ..quick_cfg(1) },
    ] {
        assert!(matches!(train(std::slice::from_ref(&ok), &s, &bad), Err(Error::InvalidConfig(_))));
    }
}

#[test]
fn divergence_is_reported() {
    let s = small_sched(10);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data: Vec<_> = (0..2).map(|_| pair(&mut rng, 8, 8)).collect();
    // Adam's normalized steps stay finite even here, so use plain SGD.
    let cfg = TrainConfig {
        learning_rate: 1e300,
        optimizer: Optimizer::Sgd,
        ..quick_cfg(50)
    };
    match train(&data, &s, &cfg) {
        Err(Error::Divergence { iteration, .. }) => assert!(iteration >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn trace_and_config_round_trip() {
    let s = small_sched(10);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data = vec![pair(&mut rng, 8, 8)];
    let out = train(&data, &s, &quick_cfg(3)).unwrap();
    let csv = out.trace.to_csv();
    assert!(csv.starts_with("iteration,loss,j_target,j_blank\n"));
    assert_eq!(LossTrace::from_csv(&csv).unwrap(), out.trace);
    let cfg = TrainConfig { gamma: vec![1.5; 10], ..quick_cfg(3) };
    assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert!(TrainConfig::from_toml("w = \"x\"").is_err());
}

#[test]
fn smoothed_decrease_uses_window_means() {
    let trace = LossTrace {
        rows: [4.0, 2.0, 1.0, 1.0]
            .iter()
            .enumerate()
            .map(|(k, &l)| TraceRow { iteration: k + 1, terms: LossTerms { loss: l, ..Default::default() } })
            .collect(),
    };
    assert_eq!(trace.smoothed_endpoints(2), Some((3.0, 1.0)));
    assert!((trace.smoothed_decrease(2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(trace.smoothed_endpoints(5), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn loss_is_non_negative_and_zero_on_agreement(seed in any::<u64>(), w in 0.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = pair(&mut rng, 4, 4);
        let rev = standard_normal((4, 4), &mut rng);
        let ideal = standard_normal((4, 4), &mut rng);
        let (t, _) = residual_loss(&rev, &ideal, &sample.masks, w, 1.0).unwrap();
        prop_assert!(t.loss >= 0.0);
        let (z, g) = residual_loss(&ideal, &ideal, &sample.masks, w, 1.0).unwrap();
        prop_assert_eq!(z.loss, 0.0);
        prop_assert!(g.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn learning_rate_schedule() {
    let cfg = TrainConfig {
        learning_rate: 2.0,
        iterations: 11,
        warmup: 1,
        ..Default::default()
    };
    assert_eq!(cfg.lr_at(1), 2.0);
    assert_eq!(cfg.lr_at(2), 2.0);
    assert!((cfg.lr_at(7) - 1.0).abs() < 1e-12);
    assert!(cfg.lr_at(11) < 0.05);
    let warm = TrainConfig { warmup: 4, ..cfg.clone() };
    assert_eq!(warm.lr_at(1), 0.5);
    assert_eq!(warm.lr_at(4), 2.0);
    let flat = TrainConfig { lr_schedule: LrSchedule::Constant, ..cfg };
    assert!((2..=11).all(|i| flat.lr_at(i) == 2.0));
}

#[test]
fn every_optimizer_reduces_the_loss_on_one_sample() {
    let s = small_sched(4);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data = vec![pair(&mut rng, 8, 8)];
    for (optimizer, lr) in [(Optimizer::Adam, 1e-2), (Optimizer::Lion, 1e-3), (Optimizer::Sgd, 0.5)] {
        let cfg = TrainConfig {
            optimizer,
            learning_rate: lr,
            lr_schedule: LrSchedule::Constant,
            warmup: 0,
            ..quick_cfg(300)
        };
        let trace = train(&data, &s, &cfg).unwrap().trace;
        let drop = trace.smoothed_decrease(50).unwrap();
        assert!(drop > 0.1, "{optimizer:?}: {drop}");
    }
}
