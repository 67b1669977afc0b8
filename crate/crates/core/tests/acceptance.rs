//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one line, pass or fail; exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use noisedesign::cli::{prepare_run_dir, run_design, run_gmm_demo, run_gradcheck, ExperimentConfig};
use noisedesign::design::{binarization_metric, project, target_piecewise_curve, CurveParams, LossSpec};
use noisedesign::diffusion::*;
use noisedesign::fem::{elastic_matrix, Homogenization, PlaneModel, PlasticOptions, Plasticity};
use noisedesign::nn::{init_params_with, ArchSpec, InitOptions, MlpSpec};
use noisedesign::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Gmm {
    final_loss: f64,
    iterations: usize,
    near: f64,
    weights: Vec<f64>,
    seconds: f64,
}

fn gmm_run(dir: &Path) -> Result<Gmm, String> {
    let cfg = config("gmm_demo.toml");
    prepare_run_dir(&cfg, dir).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let s = run_gmm_demo(&cfg, dir).map_err(|e| e.to_string())?;
    Ok(Gmm {
        final_loss: s.result.final_loss,
        iterations: s.result.stages.iter().map(|st| st.trace.iterations()).sum(),
        near: s.modes.near_fraction,
        weights: s.modes.weights,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

fn gmm_end_to_end(g: &Result<Gmm, String>) -> Outcome {
    let g = g.as_ref().map_err(Clone::clone)?;
    check(
        g.final_loss < 1e-3 && g.iterations <= 20 && g.seconds <= 900.0,
        format!("loss {:.3e} after {} iterations, {:.0}s", g.final_loss, g.iterations, g.seconds),
    )
}

fn mode_fidelity(g: &Result<Gmm, String>) -> Outcome {
    let g = g.as_ref().map_err(Clone::clone)?;
    let weights_ok = g.weights.len() == 2 && g.weights.iter().all(|w| (w - 0.5).abs() <= 0.03);
    check(
        g.near >= 0.95 && weights_ok,
        format!("{:.2}% within 4σ, weights {:.4} / {:.4}", 100.0 * g.near, g.weights[0], g.weights[1]),
    )
}

fn gradient_checks() -> Outcome {
    let rows = run_gradcheck(&config("gradcheck.toml")).map_err(|e| e.to_string())?;
    let detail = rows
        .iter()
        .map(|r| format!("{} {:.1e}", r.name, r.max_rel_error))
        .collect::<Vec<_>>()
        .join(", ");
    check(rows.len() == 4 && rows.iter().all(|r| r.passed() && r.seconds <= 120.0), detail)
}

fn homogenization_oracles() -> Outcome {
    let nu = 0.3;
    let h = Homogenization::new(8, 8, nu, PlaneModel::Stress).map_err(|e| e.to_string())?;
    let base = elastic_matrix(37.0, nu, PlaneModel::Stress);
    let c = h.homogenize(&[37.0; 64]).map_err(|e| e.to_string())?.c_hom;
    let mut uniform = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            uniform = uniform.max((c[i][j] - base[i][j]).abs());
        }
    }

    // layers normal to y
    let theta: Vec<f64> = (0..64).map(|e| if (e / 8) % 2 == 0 { 1.0 } else { 100.0 }).collect();
    let c = h.homogenize(&theta).map_err(|e| e.to_string())?.c_hom;
    let phases = [elastic_matrix(1.0, nu, PlaneModel::Stress), elastic_matrix(100.0, nu, PlaneModel::Stress)];
    let mean = |f: &dyn Fn(&[[f64; 3]; 3]) -> f64| phases.iter().map(|p| f(p)).sum::<f64>() / 2.0;
    let inv = mean(&|p| 1.0 / p[1][1]);
    let b = mean(&|p| p[0][1] / p[1][1]);
    let want = [
        (c[0][0], mean(&|p| p[0][0] - p[0][1] * p[0][1] / p[1][1]) + b * b / inv),
        (c[1][1], 1.0 / inv),
        (c[0][1], b / inv),
        (c[2][2], 1.0 / mean(&|p| 1.0 / p[2][2])),
    ];
    let laminate = want.iter().map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random: Vec<f64> = (0..64).map(|_| rng.gen_range(1.0..100.0)).collect();
    let c = h.homogenize(&random).map_err(|e| e.to_string())?.c_hom;
    let mut asym = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            asym = asym.max((c[i][j] - c[j][i]).abs());
        }
    }
    check(
        uniform <= 1e-10 && laminate <= 1e-6 && asym <= 1e-8,
        format!("uniform {uniform:.1e}, laminate {laminate:.1e}, asymmetry {asym:.1e}"),
    )
}

fn plasticity_oracle() -> Outcome {
    let p = Plasticity::new(1, 1, PlasticOptions::default()).map_err(|e| e.to_string())?;
    let (e, s0) = (1e5, 300.0);
    let loads = Plasticity::load_schedule(5e-4, 1e-2, 20);
    let h = p.incremental_solve(&[e, s0], &loads).map_err(|e| e.to_string())?;
    let bilinear = h.sbar.iter().zip(&loads).map(|(s, l)| (s - (e * l).min(s0)).abs()).fold(0.0, f64::max);
    let mut excess = p.max_yield_excess(&[e, s0], &h);

    let p = Plasticity::new(4, 4, PlasticOptions::default()).map_err(|e| e.to_string())?;
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..16).map(|_| rng.gen()).collect();
        let theta: Vec<f64> = x.iter().map(|t| 1e3 + 99e3 * t).chain(x.iter().map(|t| 30.0 + 270.0 * t)).collect();
        let h = p.incremental_solve(&theta, &loads).map_err(|e| e.to_string())?;
        excess = excess.max(p.max_yield_excess(&theta, &h));
    }
    check(
        bilinear <= 1e-8 && excess <= 1e-9,
        format!("bilinear error {bilinear:.1e}, max von Mises excess {excess:.1e}"),
    )
}

fn ddim_properties() -> Outcome {
    let s = NoiseSchedule::default();
    let arch = ArchSpec::Mlp(MlpSpec::default());
    let params = init_params_with(&arch, 4, InitOptions { zero_head: false }).map_err(|e| e.to_string())?;
    let plan = DdimPlan::new(&s, 50, 0.0, Spacing::Uniform).map_err(|e| e.to_string())?;
    let xt = standard_normal(&mut ChaCha8Rng::seed_from_u64(8), &[256, 1]);
    let a = generate(&params, &s, &plan, &xt).map_err(|e| e.to_string())?;
    let b = generate(&params, &s, &plan, &xt).map_err(|e| e.to_string())?;
    let bitwise = a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits());

    let full = DdimPlan::new(&s, 1000, 1.0, Spacing::Uniform).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for i in (0..1000).step_by(37).chain([999]) {
        let t = full.taus()[i];
        let x = standard_normal(&mut rng, &[16]);
        let eps = standard_normal(&mut rng, &[16]);
        let z = standard_normal(&mut rng, &[16]);
        let p = ddim_update(&s, &full, i, &x, &eps, Some(&z));
        let q = ddpm_update(&s, &x, t, &eps, &z).map_err(|e| e.to_string())?;
        worst = p.data().iter().zip(q.data()).map(|(u, v)| (u - v).abs()).fold(worst, f64::max);
    }
    check(bitwise && worst <= 1e-10, format!("bitwise {bitwise}, η=1 vs DDPM {worst:.1e}"))
}

struct Desk {
    initial: f64,
    final_loss: f64,
    scale: f64,
    binarization: f64,
    seconds: f64,
}

fn desk_design(dir: &Path) -> Outcome {
    let cfg = config("design_desk16.toml");
    prepare_run_dir(&cfg, dir).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let s = run_design(&cfg, dir).map_err(|e| e.to_string())?;
    let scale = match &s.loss {
        LossSpec::Homogenization { target } => target.iter().flatten().map(|v| v * v).sum::<f64>(),
        _ => f64::NAN,
    };
    let d = Desk {
        initial: s.result.initial_loss(),
        final_loss: s.result.final_loss,
        scale,
        binarization: s.result.binarization,
        seconds: t0.elapsed().as_secs_f64(),
    };
    let reduction = 1.0 - d.final_loss / d.initial;
    let loss_ok = d.final_loss <= 1e-2 * d.scale || reduction >= 0.9;
    check(
        loss_ok && d.binarization >= 0.95 && d.seconds <= 1800.0,
        format!(
            "loss {:.3e} → {:.3e} ({:.2}% reduction, ‖C_obj‖² {:.3e}), B {:.4}, {:.0}s",
            d.initial,
            d.final_loss,
            100.0 * reduction,
            d.scale,
            d.binarization,
            d.seconds
        ),
    )
}

fn projection_properties() -> Outcome {
    let xs: Vec<f64> = (-300..=300).map(|i| i as f64 / 100.0).collect();
    let x = Tensor::vector(xs.clone());
    let neg = x.map(|v| -v);
    let mut anti = 0.0f64;
    let mut monotone = true;
    let mut prev_b = -1.0;
    for gamma in [0.5, 1.0, 5.0, 10.0, 20.0, 80.0, 320.0] {
        let p = project(&x, gamma).map_err(|e| e.to_string())?;
        let q = project(&neg, gamma).map_err(|e| e.to_string())?;
        anti = p.data().iter().zip(q.data()).map(|(a, b)| (a + b - 1.0).abs()).fold(anti, f64::max);
        let b = binarization_metric(p.data(), 1e-3);
        monotone &= b >= prev_b;
        prev_b = b;
    }
    let half = project(&Tensor::vector(vec![0.0]), 5.0).map_err(|e| e.to_string())?.data()[0];
    let examples = binarization_metric(&[0.0, 1.0, 1.0, 0.0], 1e-3) == 1.0
        && binarization_metric(&[0.5; 7], 1e-3) == 0.0
        && binarization_metric(&[0.0, 1.0, 0.5, 0.0005], 1e-3) == 0.75;
    check(
        half == 0.5 && anti <= 1e-15 && monotone && examples,
        format!("P(0) = {half}, antisymmetry {anti:.1e}, B monotone {monotone}, examples {examples}"),
    )
}

fn forward_statistics() -> Outcome {
    let s = NoiseSchedule::default();
    let n = 100_000;
    let x0 = Tensor::full(&[n], -0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut notes = Vec::new();
    let mut ok = true;
    for t in [10, 500] {
        let eps = standard_normal(&mut rng, &[n]);
        let xt = forward_sample(&s, &x0, t, &eps).map_err(|e| e.to_string())?;
        let ab = s.alpha_bar(t);
        let (mean, var) = (ab.sqrt() * -0.6, 1.0 - ab);
        let m = xt.data().iter().sum::<f64>() / n as f64;
        let v = xt.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let zm = (m - mean).abs() / (var / n as f64).sqrt();
        let zv = (v - var).abs() / (var * (2.0 / (n as f64 - 1.0)).sqrt());
        ok &= zm < 3.0 && zv < 3.0;
        notes.push(format!("t={t}: mean {zm:.2} se, var {zv:.2} se"));
    }
    check(ok, notes.join("; "))
}

fn target_curve() -> Outcome {
    let p = CurveParams::reference_group(1).map_err(|e| e.to_string())?;
    let s0 = p.sigma0();
    let sum_a: f64 = p.a.iter().sum();
    let below = target_piecewise_curve(&p, p.eps_y * (1.0 - 1e-15));
    let above = target_piecewise_curve(&p, p.eps_y * (1.0 + 1e-15));
    let jump = (below - s0).abs().max((above - s0).abs());
    check(
        (s0 - 129.6).abs() < 1e-9 && (sum_a - 90.4).abs() < 1e-9 && (p.sigma_inf - s0 - sum_a).abs() < 1e-9 && jump < 1e-12,
        format!("σ₀ {s0:.6}, ΣA {sum_a:.6}, jump at ε_y {jump:.1e}"),
    )
}

fn main() {
    // libtest-style flags (e.g. from `cargo test -- --nocapture`) are ignored
    let work: PathBuf = std::env::temp_dir().join(format!("noisedesign-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&work).unwrap();
    let gmm = gmm_run(&work.join("gmm"));
    let results: Vec<(&str, Outcome)> = vec![
        ("GMM end-to-end", gmm_end_to_end(&gmm)),
        ("mode fidelity", mode_fidelity(&gmm)),
        ("gradient checks", gradient_checks()),
        ("homogenization oracles", homogenization_oracles()),
        ("plasticity oracle", plasticity_oracle()),
        ("DDIM properties", ddim_properties()),
        ("desk-scale design", desk_design(&work.join("desk"))),
        ("projection and binarization", projection_properties()),
        ("forward statistics", forward_statistics()),
        ("target curve", target_curve()),
    ];
    let _ = std::fs::remove_dir_all(&work);
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d}", i + 1)
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
