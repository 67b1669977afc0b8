mod common;

use noisedesign::diffusion::*;
use noisedesign::nn::{init_params, init_params_with, ArchSpec, InitOptions, MlpSpec, UnetSpec};
use noisedesign::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mlp() -> ArchSpec {
    ArchSpec::Mlp(MlpSpec {
        hidden: 16,
        emb_dim: 8,
        ..Default::default()
    })
}

fn trained_like_mlp(seed: u64) -> noisedesign::nn::DenoiserParams {
    init_params_with(&mlp(), seed, InitOptions { zero_head: false }).unwrap()
}

/// Mean and sample variance.
fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var)
}

/// Mean within 3 standard errors and variance within 3 standard errors of
/// the variance estimator (Gaussian: sd(s²) ≈ σ²√(2/(n−1))).
fn assert_gaussian_moments(v: &[f64], mean: f64, var: f64) {
    let n = v.len() as f64;
    let (m, s2) = moments(v);
    assert!((m - mean).abs() < 3.0 * (var / n).sqrt(), "mean {m} vs {mean}");
    assert!((s2 - var).abs() < 3.0 * var * (2.0 / (n - 1.0)).sqrt(), "var {s2} vs {var}");
}

#[test]
fn paper_schedule_endpoints() {
    let s = NoiseSchedule::default();
    assert_eq!(s.steps(), 1000);
    assert!((s.beta(1) - 1e-4).abs() < 1e-18);
    assert!((s.beta(1000) - 0.02).abs() < 1e-16);
    let direct: f64 = (1..=1000).map(|t| 1.0 - s.beta(t)).product();
    assert!((s.alpha_bar(1000) - direct).abs() < 1e-12);
    assert!((s.alpha_bar_logsum(1000) - direct).abs() < 1e-12);
    let one = NoiseSchedule::linear(1, 3e-3, 3e-3).unwrap();
    assert!((one.alpha_bar(1) - (1.0 - 3e-3)).abs() < 1e-15);
}

#[test]
fn forward_marginal_statistics_at_500() {
    let s = NoiseSchedule::default();
    let n = 100_000;
    let x0 = Tensor::full(&[n], 0.8);
    let eps = standard_normal(&mut ChaCha8Rng::seed_from_u64(11), &[n]);
    let xt = forward_sample(&s, &x0, 500, &eps).unwrap();
    let ab = s.alpha_bar(500);
    assert_gaussian_moments(xt.data(), ab.sqrt() * 0.8, 1.0 - ab);
}

#[test]
fn composed_single_steps_match_the_closed_form() {
    let s = NoiseSchedule::default();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x0 = -1.3;
    let mut x = Tensor::full(&[n], x0);
    for t in 1..=100 {
        let eps = standard_normal(&mut rng, &[n]);
        x = forward_step(&s, &x, t, &eps).unwrap();
        if t == 10 || t == 100 {
            let ab = s.alpha_bar(t);
            assert_gaussian_moments(x.data(), ab.sqrt() * x0, 1.0 - ab);
        }
    }
}

#[test]
fn zero_head_loss_is_the_data_dimension() {
    let s = NoiseSchedule::default();
    let params = init_params(&mlp(), 1).unwrap();
    let data = Tensor::from_vec(&[4096, 1], common::uniform(4096, -1.0, 1.0, 3));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tape = noisedesign::autodiff::Tape::new();
    let bound = params.bind(&tape, false);
    let loss = tape.item(training_loss(&tape, &bound, &params.arch, &s, &data, &mut rng).unwrap());
    // E‖ε‖² = 1 with sd √(2/n)
    assert!((loss - 1.0).abs() < 4.0 * (2.0f64 / 4096.0).sqrt(), "{loss}");
}

#[test]
fn ddpm_with_zero_predictor() {
    let s = NoiseSchedule::default();
    let params = init_params(&mlp(), 1).unwrap();
    let x = Tensor::from_vec(&[3, 1], vec![0.5, -1.0, 2.0]);
    let z = Tensor::from_vec(&[3, 1], vec![0.1, 0.2, -0.3]);
    let t = 400;
    let next = ddpm_step(&params, &s, &x, t, &z).unwrap();
    let sigma = s.beta_tilde(t).sqrt();
    for i in 0..3 {
        let want = x.data()[i] / s.alpha(t).sqrt() + sigma * z.data()[i];
        assert!((next.data()[i] - want).abs() < 1e-14);
    }
    // t = 1 ignores z
    let a = ddpm_step(&params, &s, &x, 1, &z).unwrap();
    let b = ddpm_step(&params, &s, &x, 1, &Tensor::zeros(&[3, 1])).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn eta_one_consecutive_ddim_is_ddpm() {
    let s = NoiseSchedule::default();
    let plan = DdimPlan::new(&s, 1000, 1.0, Spacing::Uniform).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in [0usize, 1, 10, 500, 998, 999] {
        let t = plan.taus()[i];
        assert_eq!(plan.prev(i), t - 1);
        let x = standard_normal(&mut rng, &[8]);
        let eps = standard_normal(&mut rng, &[8]);
        let z = standard_normal(&mut rng, &[8]);
        let a = ddim_update(&s, &plan, i, &x, &eps, Some(&z));
        let b = ddpm_update(&s, &x, t, &eps, &z).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-10, "step {t}: {p} vs {q}");
        }
    }
}

#[test]
fn eta_zero_sampling_is_bitwise_deterministic() {
    let s = NoiseSchedule::default();
    let params = trained_like_mlp(2);
    let plan = DdimPlan::new(&s, 50, 0.0, Spacing::Uniform).unwrap();
    assert!(plan.sigmas().iter().all(|&v| v == 0.0));
    let xt = standard_normal(&mut ChaCha8Rng::seed_from_u64(6), &[64, 1]);
    let a = generate(&params, &s, &plan, &xt).unwrap();
    let b = generate(&params, &s, &plan, &xt).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(generate(&params, &s, &DdimPlan::new(&s, 50, 0.5, Spacing::Uniform).unwrap(), &xt).is_err());
}

#[test]
fn single_step_plan_collapses_to_the_x0_estimate() {
    let s = NoiseSchedule::default();
    let params = trained_like_mlp(3);
    let plan = DdimPlan::from_taus(&s, vec![1000], 0.0).unwrap();
    let xt = Tensor::from_vec(&[2, 1], vec![0.7, -1.4]);
    let x0 = generate(&params, &s, &plan, &xt).unwrap();
    let eps = predict_eps(&params, &s, &xt, &[1000, 1000]).unwrap();
    let ab = s.alpha_bar(1000);
    for i in 0..2 {
        let want = (xt.data()[i] - (1.0 - ab).sqrt() * eps.data()[i]) / ab.sqrt();
        assert!((x0.data()[i] - want).abs() < 1e-9 * want.abs().max(1.0));
    }
}

#[test]
fn zero_head_generator_is_a_fixed_scaling() {
    let s = NoiseSchedule::default();
    let params = init_params(&mlp(), 1).unwrap();
    let plan = DdimPlan::new(&s, 10, 0.0, Spacing::Uniform).unwrap();
    let taus = plan.taus().to_vec();
    let mut factor = 1.0;
    for i in (0..taus.len()).rev() {
        let prev = if i == 0 { 1.0 } else { s.alpha_bar(taus[i - 1]) };
        factor *= (prev / s.alpha_bar(taus[i])).sqrt();
    }
    let w = Tensor::from_vec(&[1, 1], vec![0.37]);
    let x0 = generate(&params, &s, &plan, &w).unwrap();
    assert!((x0.item() - 0.37 * factor).abs() < 1e-12 * factor);
    let v = generator_vjp(&params, &s, &plan, &w, &Tensor::from_vec(&[1, 1], vec![1.0])).unwrap();
    assert!((v.item() - factor).abs() < 1e-12 * factor);
}

#[test]
fn generator_vjp_matches_differences_and_is_linear() {
    let s = NoiseSchedule::default();
    let arch = ArchSpec::Unet(UnetSpec {
        side: 8,
        levels: 2,
        base_channels: 4,
        channel_mult: vec![1, 2],
        attention_level: Some(1),
        emb_dim: 16,
        ..UnetSpec::default()
    });
    let params = init_params_with(&arch, 9, InitOptions { zero_head: false }).unwrap();
    let plan = DdimPlan::new(&s, 5, 0.0, Spacing::Uniform).unwrap();
    let w = standard_normal(&mut ChaCha8Rng::seed_from_u64(7), &[1, 1, 8, 8]);
    let c = Tensor::from_vec(&[1, 1, 8, 8], common::uniform(64, -1.0, 1.0, 8));
    let v = generator_vjp(&params, &s, &plan, &w, &c).unwrap();
    let v2 = generator_vjp(&params, &s, &plan, &w, &c.scale(2.0)).unwrap();
    for (a, b) in v.data().iter().zip(v2.data()) {
        assert!((b - 2.0 * a).abs() < 1e-12 * (1.0 + a.abs()));
    }
    let f = |wv: &[f64]| {
        let x0 = generate(&params, &s, &plan, &Tensor::from_vec(&[1, 1, 8, 8], wv.to_vec())).unwrap();
        x0.dot(&c)
    };
    let coords = common::pick(64, 5, 10);
    let e = common::fd_max_rel_error(f, w.data(), v.data(), &coords, 1e-6, 0.0);
    assert!(e < 1e-5, "{e}");
}

#[test]
fn training_is_seed_deterministic_and_reduces_loss() {
    let s = NoiseSchedule::default();
    let data = Tensor::from_vec(&[512, 1], noisedesign::data::GmmSpec::two_mode().sample(512, 1));
    let opts = TrainOptions {
        epochs: 20,
        batch: 64,
        lr: 3e-3,
        seed: 4,
        ..Default::default()
    };
    let a = train(&data, &mlp(), &s, &opts).unwrap();
    let b = train(&data, &mlp(), &s, &opts).unwrap();
    for (p, q) in a.params.tensors().iter().zip(b.params.tensors()) {
        assert!(p.data().iter().zip(q.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let first = a.epoch_loss[0];
    let last = *a.epoch_loss.last().unwrap();
    assert!(last < 0.7 * first, "{first} → {last}");
}

#[test]
fn one_sample_dataset_is_memorized() {
    let s = NoiseSchedule::default();
    let data = Tensor::from_vec(&[1, 1], vec![0.6]);
    let opts = TrainOptions {
        epochs: 3000,
        batch: 1,
        lr: 3e-3,
        seed: 1,
        ..Default::default()
    };
    let params = train(&data, &mlp(), &s, &opts).unwrap().params;
    let plan = DdimPlan::new(&s, 50, 0.0, Spacing::Uniform).unwrap();
    let w = standard_normal(&mut ChaCha8Rng::seed_from_u64(2), &[16, 1]);
    let x0 = generate(&params, &s, &plan, &w).unwrap();
    for v in x0.data() {
        assert!((v - 0.6).abs() < 0.2, "{v}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linear_schedules_are_well_formed(t_max in 1usize..400, b0 in 1e-5f64..1e-2, span in 0.0f64..0.05) {
        let s = NoiseSchedule::linear(t_max, b0, b0 + span).unwrap();
        prop_assert_eq!(s.beta_tilde(1), 0.0);
        let mut prev = 1.0;
        for t in 1..=t_max {
            let b = s.beta(t);
            prop_assert!(b > 0.0 && b < 1.0);
            prop_assert!(s.alpha_bar(t) < prev);
            prev = s.alpha_bar(t);
            let bt = s.beta_tilde(t);
            prop_assert!((0.0..=b).contains(&bt));
        }
    }

    #[test]
    fn ddim_plans_end_at_t(steps in 1usize..100, eta in 0.0f64..1.0) {
        let s = NoiseSchedule::default();
        let plan = DdimPlan::new(&s, steps, eta, Spacing::Uniform).unwrap();
        prop_assert_eq!(plan.len(), steps);
        prop_assert_eq!(*plan.taus().last().unwrap(), 1000);
        prop_assert!(plan.taus().windows(2).all(|w| w[0] < w[1]));
    }
}
