mod common;

use std::rc::Rc;

use noisedesign::adjoint::Physics;
use noisedesign::design::*;
use noisedesign::diffusion::NoiseSchedule;
use noisedesign::fem::{Homogenization, PlaneModel};
use noisedesign::nn::{init_params_with, ArchSpec, InitOptions, MlpSpec, UnetSpec};
use noisedesign::Tensor;
use proptest::prelude::*;

fn tiny_unet_generator(steps: usize) -> Generator {
    let arch = ArchSpec::Unet(UnetSpec {
        side: 8,
        levels: 2,
        base_channels: 4,
        channel_mult: vec![1, 2],
        attention_level: None,
        emb_dim: 16,
        ..UnetSpec::default()
    });
    let params = init_params_with(&arch, 5, InitOptions { zero_head: false }).unwrap();
    Generator::new(Rc::new(params), NoiseSchedule::default(), steps).unwrap()
}

fn homogenization_problem() -> DesignProblem {
    let generator = tiny_unet_generator(3);
    let physics = DesignPhysics::Mechanics {
        physics: Physics::Homogenization(Rc::new(Homogenization::new(8, 8, 0.3, PlaneModel::Stress).unwrap())),
        orientation: Orientation::Direct,
        blends: vec![MaterialBlend::new(1.0, 100.0)],
    };
    // a target the generator can reach: the tensor of another noise draw
    let probe = DesignProblem::new(generator.clone(), physics.clone(), LossSpec::Homogenization { target: [[0.0; 3]; 3] }).unwrap();
    let w_t = common::uniform(64, -1.5, 1.5, 99);
    let out = probe.fields(&w_t, 5.0).unwrap().output;
    let target = [[out[0], out[1], out[2]], [out[3], out[4], out[5]], [out[6], out[7], out[8]]];
    DesignProblem::new(generator, physics, LossSpec::Homogenization { target }).unwrap()
}

#[test]
fn projection_examples() {
    let p = project(&Tensor::vector(vec![0.0, 1.0]), 5.0).unwrap();
    assert_eq!(p.data()[0], 0.5);
    assert!((p.data()[1] - 0.5 * (5.0f64.tanh() + 1.0)).abs() < 1e-16);
    assert!((p.data()[1] - 0.9999546).abs() < 1e-7);
}

#[test]
fn material_interpolation_examples() {
    let e = MaterialBlend::new(1.0, 100.0);
    assert_eq!(e.at(0.0), 1.0);
    assert_eq!(e.at(1.0), 100.0);
    assert_eq!(e.at(0.5), 50.5);
    let rho = [0.0, 1.0, 0.5];
    let theta = interpolate_material(&[&rho, &rho], &[e, MaterialBlend::new(100.0, 300.0)]).unwrap();
    assert_eq!(theta, vec![1.0, 100.0, 50.5, 100.0, 300.0, 200.0]);
}

#[test]
fn binarization_examples() {
    assert_eq!(binarization_metric(&[0.0, 1.0, 1.0, 0.0], 1e-3), 1.0);
    assert_eq!(binarization_metric(&[0.5; 7], 1e-3), 0.0);
    assert_eq!(binarization_metric(&[0.0, 1.0, 0.5, 0.0005], 1e-3), 0.75);
}

#[test]
fn homogenization_loss_counts_symmetric_pairs_twice() {
    let c = named_target("biclinic").unwrap();
    assert_eq!(c, [[50.0, 12.0, 0.0], [12.0, 60.0, -3.0], [0.0, -3.0, 15.0]]);
    assert_eq!(loss_homogenization(&c, &c), 0.0);
    let mut d = c;
    d[1][1] += 1.0;
    assert_eq!(loss_homogenization(&d, &c), 1.0);
    let mut d = c;
    d[0][1] += 1.0;
    d[1][0] += 1.0;
    assert_eq!(loss_homogenization(&d, &c), 2.0);
}

#[test]
fn strain_energy_target_mix() {
    let want = 0.7 * energy_curve_stiff(0.5) + 0.3 * energy_curve_soft(0.5);
    assert!((energy_target(0.3, 0.5) - want).abs() < 1e-14);
    assert!((energy_target(0.3, 0.5) - 7.425).abs() < 2e-3);
    let loads = [0.1, 0.2, 0.3];
    let on_soft: Vec<f64> = loads.iter().map(|&x| energy_curve_soft(x)).collect();
    assert_eq!(loss_strain_energy(&on_soft, &loads, 1.0).unwrap(), 0.0);
}

#[test]
fn stress_curve_examples() {
    let p = CurveParams::reference_group(1).unwrap();
    assert!((p.sigma0() - 129.6).abs() < 1e-12);
    let ey = 2.7e-3;
    assert!((target_piecewise_curve(&p, ey) - p.sigma0()).abs() < 1e-12);
    assert!((target_piecewise_curve(&p, ey * (1.0 + 1e-14)) - p.sigma0()).abs() < 1e-9);
    assert!((target_piecewise_curve(&p, ey + 20.0 / 88.0) - 220.0).abs() < 1e-6);
    assert_eq!(loss_stress_curve(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert!((loss_stress_curve(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]).unwrap() - 0.25).abs() < 1e-15);
    assert_eq!(loss_stress_curve(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
}

#[test]
fn stage_schedules() {
    let h = StageSchedule::homogenization();
    assert_eq!(h.stages.iter().map(|s| s.gamma).collect::<Vec<_>>(), vec![5.0, 10.0, 20.0, 80.0]);
    assert!(h.stages.iter().all(|s| s.loss_tol == 1e-2 && s.max_iter == 100));
    let e = StageSchedule::hyperelastic();
    assert_eq!(e.stages.iter().map(|s| s.gamma).collect::<Vec<_>>(), vec![2.0, 5.0, 10.0, 20.0, 100.0]);
    assert!(StageSchedule::uniform(&[5.0, 5.0], 1e-3, 10).is_err());
    assert!(StageSchedule::uniform(&[], 1e-3, 10).is_err());
}

#[test]
fn mismatched_loss_and_physics_are_rejected() {
    let g = tiny_unet_generator(2);
    assert!(DesignProblem::new(g.clone(), DesignPhysics::Identity, LossSpec::StrainEnergy { alpha: 0.5 }).is_err());
    let physics = DesignPhysics::Mechanics {
        physics: Physics::Homogenization(Rc::new(Homogenization::new(4, 4, 0.3, PlaneModel::Stress).unwrap())),
        orientation: Orientation::Direct,
        blends: vec![MaterialBlend::new(1.0, 100.0)],
    };
    // 4×4 mesh against an 8×8 image
    assert!(DesignProblem::new(g, physics, LossSpec::Homogenization { target: [[0.0; 3]; 3] }).is_err());
}

#[test]
fn end_to_end_gradient_matches_differences() {
    let problem = homogenization_problem();
    let w = common::uniform(64, -1.0, 1.0, 3);
    let (_, g) = problem.loss_and_grad(&w, 5.0).unwrap();
    let coords = common::pick(64, 5, 4);
    let e = common::fd_max_rel_error(|x| problem.loss(x, 5.0).unwrap(), &w, &g, &coords, 1e-6, 0.0);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn stages_warm_start_and_never_increase() {
    let problem = homogenization_problem();
    let w0 = common::uniform(64, -1.0, 1.0, 8);
    let s0 = Stage {
        gamma: 2.0,
        loss_tol: 0.0,
        max_iter: 4,
    };
    let s1 = Stage {
        gamma: 5.0,
        loss_tol: 0.0,
        max_iter: 4,
    };
    let base = BfgsOptions::default();
    let first = multistage_optimize(&problem, &w0, &StageSchedule::new(vec![s0.clone()]).unwrap(), &base).unwrap();
    let both = multistage_optimize(&problem, &w0, &StageSchedule::new(vec![s0, s1]).unwrap(), &base).unwrap();
    let l = problem.loss(&first.w, 5.0).unwrap();
    assert_eq!(both.stages[1].trace.losses[0].to_bits(), l.to_bits());
    for st in &both.stages {
        assert!(st.trace.losses.windows(2).all(|p| p[1] <= p[0]), "{:?}", st.trace.losses);
    }
    assert!(both.final_loss < both.initial_loss());
    assert_eq!(both.fields.density.len(), 64);
}

#[test]
fn optimal_start_stops_without_iterating() {
    let arch = ArchSpec::Mlp(MlpSpec {
        hidden: 8,
        emb_dim: 8,
        ..Default::default()
    });
    let params = init_params_with(&arch, 2, InitOptions { zero_head: false }).unwrap();
    let generator = Generator::new(Rc::new(params), NoiseSchedule::default(), 5).unwrap();
    let x = generator.generate(&[0.4]).unwrap().item();
    let problem = DesignProblem::new(generator, DesignPhysics::Identity, LossSpec::Sample { target: x }).unwrap();
    let r = multistage_optimize(&problem, &[0.4], &StageSchedule::uniform(&[1.0], 1e-12, 20).unwrap(), &BfgsOptions::default()).unwrap();
    assert_eq!(r.stages[0].trace.iterations(), 0);
    assert_eq!(r.w, vec![0.4]);
}

#[test]
fn bfgs_reaches_quadratic_minimum() {
    let a = [1.0, -2.0, 3.0, 0.5];
    let f = |w: &[f64]| {
        let g: Vec<f64> = w.iter().zip(a).map(|(x, ai)| x - ai).collect();
        Ok((0.5 * g.iter().map(|v| v * v).sum::<f64>(), g))
    };
    let (w, trace) = bfgs_minimize(f, &[0.0; 4], &BfgsOptions::default()).unwrap();
    assert!(trace.iterations() <= 6);
    assert!(w.iter().zip(a).all(|(x, ai)| (x - ai).abs() < 1e-8));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_antisymmetric(xs in prop::collection::vec(-3.0f64..3.0, 1..40), gamma in 0.1f64..100.0) {
        let x = Tensor::vector(xs.clone());
        let p = project(&x, gamma).unwrap();
        let q = project(&x.map(|v| -v), gamma).unwrap();
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a + b - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn binarization_grows_with_gamma(
        xs in prop::collection::vec(prop_oneof![-2.0f64..-1e-6, 1e-6f64..2.0], 1..64),
        g1 in 0.5f64..50.0,
        dg in 0.0f64..200.0,
        tau in 1e-4f64..0.2,
    ) {
        let x = Tensor::vector(xs);
        let b1 = binarization_metric(project(&x, g1).unwrap().data(), tau);
        let b2 = binarization_metric(project(&x, g1 + dg).unwrap().data(), tau);
        prop_assert!(b2 >= b1 - 1e-12);
    }

    #[test]
    fn losses_are_nonnegative(a in prop::collection::vec(-5.0f64..5.0, 9), b in prop::collection::vec(-5.0f64..5.0, 9)) {
        let m = |v: &[f64]| [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]];
        prop_assert!(loss_homogenization(&m(&a), &m(&b)) >= 0.0);
        prop_assert!(loss_stress_curve(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn bfgs_losses_never_increase(seed in 0u64..500, dim in 2usize..6) {
        // random convex quadratic plus a quartic term
        let m = common::uniform(dim * dim, -1.0, 1.0, seed);
        let f = |w: &[f64]| {
            let mut g = vec![0.0; dim];
            let mut l = 0.0;
            for i in 0..dim {
                let r: f64 = (0..dim).map(|j| m[i * dim + j] * w[j]).sum::<f64>() - 1.0;
                l += 0.5 * r * r;
                for j in 0..dim {
                    g[j] += r * m[i * dim + j];
                }
            }
            for j in 0..dim {
                l += 0.25 * w[j].powi(4) + 0.05 * w[j] * w[j];
                g[j] += w[j].powi(3) + 0.1 * w[j];
            }
            Ok((l, g))
        };
        let opts = BfgsOptions { max_iter: 50, ..Default::default() };
        let (_, trace) = bfgs_minimize(f, &vec![1.5; dim], &opts).unwrap();
        prop_assert!(trace.losses.windows(2).all(|p| p[1] <= p[0]));
    }
}
