use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::adjoint::{solve_on_tape, Physics};
use crate::autodiff::{grad_check, GradCheckOptions, ProbeMode, Tape};
use crate::data::{grayscale_preprocess, load_idx_images, rescale_resize, synth_toy_dataset, GmmSpec};
use crate::design::{
    multistage_optimize, BfgsOptions, CurveParams, DesignPhysics, DesignProblem, DesignResult,
    Generator, LossSpec, MaterialBlend, Matrix3, Orientation,
};
use crate::diffusion::{ddim_sample, standard_normal, train, DdimPlan, NoiseSchedule, TrainReport};
use crate::error::{Error, Result};
use crate::export::{export_curve, export_image, fmt_f64, version_string, write_design_bundle, write_text};
use crate::fem::{Homogenization, Hyperelastic, PlasticOptions, Plasticity};
use crate::nn::{init_params_with, ArchSpec, DenoiserParams, InitOptions, UnetSpec};
use crate::tensor::Tensor;

/// Creates `dir` and writes the resolved config and version string into it.
pub fn prepare_run_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("config.toml"), &cfg.to_toml_string())?;
    write_text(&dir.join("VERSION"), &format!("{}\n", version_string()))?;
    Ok(dir.to_path_buf())
}

/// Training data scaled to [−1, 1] with a leading batch axis.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Tensor> {
    let d = &cfg.data;
    match d.kind.as_str() {
        "gmm" => Ok(Tensor::from_vec(&[d.n_samples, 1], GmmSpec::two_mode().sample(d.n_samples, cfg.seed))),
        "toy" => Ok(synth_toy_dataset(d.n_samples, d.side, cfg.seed)?.as_channels()),
        _ => {
            let mut raw = load_idx_images(Path::new(&d.idx_path))?;
            if d.max_images > 0 && raw.shape()[0] > d.max_images {
                let (h, w) = (raw.shape()[1], raw.shape()[2]);
                raw = Tensor::from_vec(&[d.max_images, h, w], raw.data()[..d.max_images * h * w].to_vec());
            }
            let gray = grayscale_preprocess(&raw, d.noise_std, d.filter_std, cfg.seed)?;
            Ok(rescale_resize(&gray, d.side)?.as_channels())
        }
    }
}

/// Loads the configured checkpoint, or trains a model and stores it (plus
/// the per-epoch loss) in `dir`.
pub fn obtain_model(cfg: &ExperimentConfig, dir: &Path) -> Result<(DenoiserParams, Option<TrainReport>)> {
    if !cfg.model.checkpoint.is_empty() {
        let p = DenoiserParams::load(Path::new(&cfg.model.checkpoint))?;
        if p.arch != cfg.arch()? {
            log::warn!("checkpoint architecture differs from the configured model; using the checkpoint's");
        }
        return Ok((p, None));
    }
    let data = load_dataset(cfg)?;
    let arch = cfg.arch()?;
    let t0 = Instant::now();
    let report = train(&data, &arch, &cfg.noise_schedule()?, &cfg.train_options())?;
    log::info!("trained in {:.1}s", t0.elapsed().as_secs_f64());
    report.params.save(&dir.join("model.ckpt"))?;
    let epochs: Vec<f64> = (0..report.epoch_loss.len()).map(|i| i as f64).collect();
    export_curve(&dir.join("train_loss.csv"), &["epoch", "loss"], &[&epochs, &report.epoch_loss])?;
    Ok((report.params.clone(), Some(report)))
}

pub fn cmd_train(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let mut c = cfg.clone();
    c.model.checkpoint.clear();
    let (_, report) = obtain_model(&c, dir)?;
    let last = report.and_then(|r| r.epoch_loss.last().copied()).unwrap_or(f64::NAN);
    Ok(format!("final_epoch_loss={}\n", fmt_f64(last)))
}

/// Mode statistics of 1D samples against the two-mode mixture.
#[derive(Clone, Debug)]
pub struct ModeStats {
    /// Fraction within 4σ of some mode mean.
    pub near_fraction: f64,
    /// Fraction assigned to each mode by nearest mean.
    pub weights: Vec<f64>,
}

pub fn mode_stats(samples: &[f64], gmm: &GmmSpec) -> ModeStats {
    let n = samples.len().max(1) as f64;
    let near = samples
        .iter()
        .filter(|&&x| gmm.means.iter().zip(&gmm.stds).any(|(m, s)| (x - m).abs() <= 4.0 * s))
        .count();
    let mut counts = vec![0usize; gmm.means.len()];
    samples.iter().for_each(|&x| counts[gmm.nearest_mode(x)] += 1);
    ModeStats {
        near_fraction: near as f64 / n,
        weights: counts.iter().map(|&c| c as f64 / n).collect(),
    }
}

pub fn draw_samples(cfg: &ExperimentConfig, params: &DenoiserParams, n: usize) -> Result<Tensor> {
    let s = cfg.noise_schedule()?;
    let plan = DdimPlan::new(&s, cfg.sampler.ddim_steps, cfg.sampler.eta, cfg.spacing())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a3e_1e5);
    let mut shape = vec![n];
    shape.extend(params.arch.sample_shape());
    let x_t = standard_normal(&mut rng, &shape);
    Ok(ddim_sample(params, &s, &plan, &x_t, Some(&mut rng))?.final_state().clone())
}

pub fn cmd_sample(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let (params, _) = obtain_model(cfg, dir)?;
    let x = draw_samples(cfg, &params, cfg.sampler.n_samples)?;
    let mut summary = String::new();
    match &params.arch {
        ArchSpec::Mlp(_) => {
            export_curve(&dir.join("samples.csv"), &["x"], &[x.data()])?;
            let st = mode_stats(x.data(), &GmmSpec::two_mode());
            let _ = writeln!(summary, "near_mode_fraction={}", fmt_f64(st.near_fraction));
            for (i, w) in st.weights.iter().enumerate() {
                let _ = writeln!(summary, "mode_{i}_weight={}", fmt_f64(*w));
            }
        }
        ArchSpec::Unet(u) => {
            let per = u.side * u.side;
            for i in 0..x.shape()[0].min(64) {
                let unit: Vec<f64> = x.data()[i * per..(i + 1) * per].iter().map(|v| 0.5 * (v + 1.0)).collect();
                export_image(&dir.join(format!("sample_{i:03}.pgm")), &unit, u.side, u.side)?;
            }
            let _ = writeln!(summary, "images={}", x.shape()[0]);
        }
    }
    Ok(summary)
}

/// Scans scalar noise values for the one whose sample lands closest to `target`.
pub fn search_scalar_noise(generator: &Generator, target: f64) -> Result<(f64, f64)> {
    let mut best = (0.0, f64::INFINITY);
    for k in 0..=240 {
        let w = -3.0 + 6.0 * k as f64 / 240.0;
        let x = generator.generate(&[w])?.item();
        if (x - target).abs() < (best.1 - target).abs() {
            best = (w, x);
        }
    }
    Ok(best)
}

fn bfgs_options(cfg: &ExperimentConfig) -> BfgsOptions {
    BfgsOptions {
        grad_tol: cfg.stages.grad_tol,
        memory: (cfg.stages.lbfgs_memory > 0).then_some(cfg.stages.lbfgs_memory),
        ..Default::default()
    }
}

#[derive(Clone, Debug)]
pub struct GmmDemoSummary {
    pub final_epoch_loss: f64,
    pub modes: ModeStats,
    pub w0: f64,
    pub x0_initial: f64,
    pub result: DesignResult,
}

pub fn run_gmm_demo(cfg: &ExperimentConfig, dir: &Path) -> Result<GmmDemoSummary> {
    let t0 = Instant::now();
    let (params, report) = obtain_model(cfg, dir)?;
    if !matches!(params.arch, ArchSpec::Mlp(_)) {
        return Err(Error::contract("gmm-demo needs a 1D (mlp) model"));
    }
    let samples = draw_samples(cfg, &params, cfg.sampler.n_samples)?;
    export_curve(&dir.join("samples.csv"), &["x"], &[samples.data()])?;
    let modes = mode_stats(samples.data(), &GmmSpec::two_mode());
    let schedule = cfg.noise_schedule()?;
    let generator = Generator::new(Rc::new(params), schedule, cfg.sampler.ddim_steps)?;
    let (w0, x0_initial) = if cfg.loss.initial == "search" {
        search_scalar_noise(&generator, cfg.loss.initial_target)?
    } else {
        let w: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
        (w, generator.generate(&[w])?.item())
    };
    let problem = DesignProblem::new(
        generator.clone(),
        DesignPhysics::Identity,
        LossSpec::Sample {
            target: cfg.loss.target_value,
        },
    )?;
    let result = multistage_optimize(&problem, &[w0], &cfg.stage_schedule()?, &bfgs_options(cfg))?;
    // the sampling path from the optimized noise
    let traj = ddim_sample::<ChaCha8Rng>(
        &generator.params,
        &generator.schedule,
        &generator.plan,
        &generator.w_tensor(&result.w)?,
        None,
    )?;
    traj.write_csv(&dir.join("trajectory.csv"))?;
    write_design_bundle(&dir.join("design"), &result, None, t0.elapsed().as_secs_f64())?;
    Ok(GmmDemoSummary {
        final_epoch_loss: report.and_then(|r| r.epoch_loss.last().copied()).unwrap_or(f64::NAN),
        modes,
        w0,
        x0_initial,
        result,
    })
}

fn cmd_gmm_demo(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let s = run_gmm_demo(cfg, dir)?;
    let mut out = String::new();
    let _ = writeln!(out, "final_epoch_loss={}", fmt_f64(s.final_epoch_loss));
    let _ = writeln!(out, "near_mode_fraction={}", fmt_f64(s.modes.near_fraction));
    for (i, w) in s.modes.weights.iter().enumerate() {
        let _ = writeln!(out, "mode_{i}_weight={}", fmt_f64(*w));
    }
    let _ = writeln!(out, "w0={} x0_initial={}", fmt_f64(s.w0), fmt_f64(s.x0_initial));
    let _ = writeln!(out, "w_opt={}", fmt_f64(s.result.w[0]));
    let _ = writeln!(out, "x0_final={}", fmt_f64(s.result.fields.x0.item()));
    let _ = writeln!(out, "iterations={}", s.result.stages.iter().map(|st| st.trace.iterations()).sum::<usize>());
    let _ = writeln!(out, "final_loss={}", fmt_f64(s.result.final_loss));
    Ok(out)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![b],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Solver and material blends for a mesh of `side × side` elements.
pub fn build_physics(cfg: &ExperimentConfig, side: usize) -> Result<(Physics, Vec<MaterialBlend>)> {
    let p = &cfg.physics;
    let e = MaterialBlend::new(p.e_soft, p.e_stiff);
    Ok(match p.kind.as_str() {
        "homogenization" => (
            Physics::Homogenization(Rc::new(Homogenization::new(side, side, p.nu, cfg.plane_model())?)),
            vec![e],
        ),
        "hyperelastic" => (
            Physics::Hyperelastic {
                solid: Rc::new(Hyperelastic::new(side, side, p.nu, cfg.stretch_bc())?),
                loads: linspace(p.load_first, p.load_last, p.load_steps),
            },
            vec![e],
        ),
        "plasticity" => {
            let s0 = MaterialBlend::new(p.sigma0_soft, p.sigma0_stiff);
            let blends = match p.fields.as_str() {
                "e" => vec![e, MaterialBlend::new(p.sigma0_stiff, p.sigma0_stiff)],
                "sigma0" => vec![MaterialBlend::new(p.e_stiff, p.e_stiff), s0],
                _ => vec![e, s0],
            };
            let opts = PlasticOptions {
                nu: p.nu,
                ..Default::default()
            };
            (
                Physics::Plasticity {
                    solid: Rc::new(Plasticity::new(side, side, opts)?),
                    loads: Plasticity::load_schedule(p.load_first, p.load_last, p.load_steps),
                },
                blends,
            )
        }
        other => return Err(Error::contract(format!("physics `{other}` has no mesh"))),
    })
}

/// The mechanics design problem of `cfg`. A self-consistent target is
/// produced by evaluating the physics on a sample from an independent noise
/// draw at the final γ.
pub fn build_design_problem(cfg: &ExperimentConfig, params: DenoiserParams) -> Result<DesignProblem> {
    let side = match &params.arch {
        ArchSpec::Unet(u) => u.side,
        ArchSpec::Mlp(_) => return Err(Error::contract("mechanics design needs an image (unet) model")),
    };
    let (physics, blends) = build_physics(cfg, side)?;
    let generator = Generator::new(Rc::new(params), cfg.noise_schedule()?, cfg.sampler.ddim_steps)?;
    let orientation = Orientation::parse(&cfg.physics.orientation)?;
    let design_physics = DesignPhysics::Mechanics {
        physics: physics.clone(),
        orientation,
        blends,
    };
    let placeholder = match &physics {
        Physics::Homogenization(_) => LossSpec::Homogenization { target: [[0.0; 3]; 3] },
        Physics::Hyperelastic { .. } => LossSpec::StrainEnergy { alpha: cfg.loss.alpha },
        Physics::Plasticity { loads, .. } => LossSpec::StressCurve {
            target: vec![0.0; loads.len()],
        },
    };
    let probe = DesignProblem::new(generator.clone(), design_physics.clone(), placeholder.clone())?;
    let sampled_target = || -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.loss.target_seed);
        let w = standard_normal(&mut rng, &[generator.dim()]);
        let gamma = *cfg.stages.gammas.last().expect("validated stages");
        Ok(probe.fields(w.data(), gamma)?.output)
    };
    let loss = match placeholder {
        LossSpec::Homogenization { .. } => {
            let target = match (cfg.loss.target_from_sample, cfg.target_tensor()?) {
                (false, Some(t)) => t,
                _ => {
                    let o = sampled_target()?;
                    [[o[0], o[1], o[2]], [o[3], o[4], o[5]], [o[6], o[7], o[8]]]
                }
            };
            LossSpec::Homogenization { target }
        }
        LossSpec::StressCurve { .. } if cfg.loss.target_from_sample => LossSpec::StressCurve { target: sampled_target()? },
        LossSpec::StressCurve { .. } => {
            let curve = CurveParams::reference_group(cfg.loss.curve_group)?;
            let Physics::Plasticity { loads, .. } = &physics else { unreachable!() };
            LossSpec::StressCurve {
                target: loads.iter().map(|&x| curve.eval(x)).collect(),
            }
        }
        other => other,
    };
    DesignProblem::new(generator, design_physics, loss)
}

#[derive(Clone, Debug)]
pub struct DesignRunSummary {
    pub loss: LossSpec,
    pub result: DesignResult,
    pub wall_seconds: f64,
}

pub fn run_design(cfg: &ExperimentConfig, dir: &Path) -> Result<DesignRunSummary> {
    let t0 = Instant::now();
    let (params, _) = obtain_model(cfg, dir)?;
    let side = match &params.arch {
        ArchSpec::Unet(u) => Some(u.side),
        ArchSpec::Mlp(_) => None,
    };
    let problem = build_design_problem(cfg, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd35_16e);
    let w0 = standard_normal(&mut rng, &[problem.dim()]);
    let result = multistage_optimize(&problem, w0.data(), &cfg.stage_schedule()?, &bfgs_options(cfg))?;
    let wall = t0.elapsed().as_secs_f64();
    write_design_bundle(dir, &result, side, wall)?;
    Ok(DesignRunSummary {
        loss: problem.loss.clone(),
        result,
        wall_seconds: wall,
    })
}

fn cmd_design(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let s = run_design(cfg, dir)?;
    let mut out = String::new();
    let _ = writeln!(out, "initial_loss={}", fmt_f64(s.result.initial_loss()));
    let _ = writeln!(out, "final_loss={}", fmt_f64(s.result.final_loss));
    let _ = writeln!(out, "binarization={}", fmt_f64(s.result.binarization));
    Ok(out)
}

/// One row of the gradient-check table.
#[derive(Clone, Debug)]
pub struct GradcheckRow {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl GradcheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn random_c(rng: &mut impl Rng) -> Matrix3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            c[i][j] = rng.gen_range(0.0..40.0);
            c[j][i] = c[i][j];
        }
    }
    c
}

fn check_theta(
    name: &'static str,
    physics: Physics,
    theta: Vec<f64>,
    loss: impl Fn(&Tape, crate::autodiff::Var) -> Result<crate::autodiff::Var>,
    opts: GradCheckOptions,
    tolerance: f64,
) -> Result<GradcheckRow> {
    let t0 = Instant::now();
    let r = grad_check(
        |tape, th| {
            let out = solve_on_tape(tape, &physics, th)?;
            loss(tape, out)
        },
        &Tensor::vector(theta),
        opts,
    )?;
    Ok(GradcheckRow {
        name,
        max_rel_error: r.max_rel_error,
        tolerance,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

fn sq_loss(tape: &Tape, out: crate::autodiff::Var, target: Tensor, mean: bool) -> Result<crate::autodiff::Var> {
    let r = tape.square(tape.sub(out, tape.constant(target))?)?;
    if mean {
        tape.mean(r)
    } else {
        tape.sum(r)
    }
}

/// Adjoint and end-to-end gradients against central differences.
pub fn run_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<GradcheckRow>> {
    let g = &cfg.gradcheck;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let base = GradCheckOptions {
        step: g.step,
        relative: true,
        mode: ProbeMode::Full,
        floor_abs: 1e-12,
        floor_rel: 1e-6,
    };

    // homogenization, all coordinates
    let n = g.homogenization_side;
    let cell = Rc::new(Homogenization::new(n, n, cfg.physics.nu, cfg.plane_model())?);
    let theta: Vec<f64> = (0..n * n).map(|_| rng.gen_range(1.0..100.0)).collect();
    let target = Tensor::from_vec(&[3, 3], random_c(&mut rng).iter().flatten().copied().collect());
    rows.push(check_theta(
        "homogenization",
        Physics::Homogenization(cell.clone()),
        theta,
        |t, out| sq_loss(t, out, target.clone(), false),
        base,
        1e-5,
    )?);

    // Neo-Hookean strain energy
    let m = g.mechanics_side;
    let loads = linspace(0.1, 0.5, 5);
    let solid = Rc::new(Hyperelastic::new(m, m, cfg.physics.nu, cfg.stretch_bc())?);
    let theta: Vec<f64> = (0..m * m).map(|_| rng.gen_range(1.0..100.0)).collect();
    let target = Tensor::vector(loads.iter().map(|&x| crate::design::energy_target(0.4, x)).collect());
    rows.push(check_theta(
        "hyperelastic",
        Physics::Hyperelastic {
            solid,
            loads: loads.clone(),
        },
        theta,
        |t, out| sq_loss(t, out, target.clone(), true),
        base,
        1e-5,
    )?);

    // plasticity through yield
    let loads = Plasticity::load_schedule(5e-4, 1e-2, 6);
    let solid = Rc::new(Plasticity::new(m, m, PlasticOptions::default())?);
    let x: Vec<f64> = (0..m * m).map(|_| rng.gen::<f64>()).collect();
    let theta: Vec<f64> = x
        .iter()
        .map(|t| 1e3 + (1e5 - 1e3) * t)
        .chain(x.iter().map(|t| 30.0 + 270.0 * t))
        .collect();
    let curve = CurveParams::reference_group(1)?;
    let target = Tensor::vector(loads.iter().map(|&x| curve.eval(x)).collect());
    rows.push(check_theta(
        "plasticity",
        Physics::Plasticity { solid, loads },
        theta,
        |t, out| sq_loss(t, out, target.clone(), true),
        GradCheckOptions { floor_rel: 1e-4, ..base },
        1e-4,
    )?);

    // w → U-Net DDIM → projection → homogenization
    let t0 = Instant::now();
    let arch = ArchSpec::Unet(UnetSpec {
        side: n,
        levels: 3,
        base_channels: 4,
        channel_mult: vec![1, 2, 2],
        attention_level: Some(1),
        emb_dim: 16,
        ..UnetSpec::default()
    });
    let params = if cfg.model.checkpoint.is_empty() {
        init_params_with(&arch, cfg.seed, InitOptions { zero_head: false })?
    } else {
        DenoiserParams::load(Path::new(&cfg.model.checkpoint))?
    };
    let generator = Generator::new(Rc::new(params), NoiseSchedule::default(), g.ddim_steps)?;
    let problem = DesignProblem::new(
        generator.clone(),
        DesignPhysics::Mechanics {
            physics: Physics::Homogenization(cell),
            orientation: Orientation::Direct,
            blends: vec![MaterialBlend::new(1.0, 100.0)],
        },
        LossSpec::Homogenization {
            target: random_c(&mut rng),
        },
    )?;
    let w = standard_normal(&mut rng, &generator.input_shape());
    let r = grad_check(
        |tape, wv| problem.loss_on_tape(tape, wv, 5.0),
        &w,
        GradCheckOptions {
            mode: ProbeMode::Random {
                count: g.coords,
                seed: cfg.seed,
            },
            ..base
        },
    )?;
    rows.push(GradcheckRow {
        name: "end_to_end",
        max_rel_error: r.max_rel_error,
        tolerance: 1e-4,
        seconds: t0.elapsed().as_secs_f64(),
    });
    Ok(rows)
}

fn cmd_gradcheck(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let rows = run_gradcheck(cfg)?;
    let mut csv = String::from("check,max_rel_error,tolerance,seconds,passed\n");
    let mut out = String::new();
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{:.3},{}",
            r.name,
            fmt_f64(r.max_rel_error),
            fmt_f64(r.tolerance),
            r.seconds,
            r.passed()
        );
        let _ = writeln!(out, "{:<16} max rel error {:.3e} (tol {:.0e}) {}", r.name, r.max_rel_error, r.tolerance, if r.passed() { "ok" } else { "FAIL" });
    }
    write_text(&dir.join("gradcheck.csv"), &csv)?;
    if rows.iter().all(GradcheckRow::passed) {
        Ok(out)
    } else {
        Err(Error::contract(format!("gradient check failed:\n{out}")))
    }
}

/// Runs `command` with the resolved config in `dir`; returns the summary
/// text, which is also written to `dir/summary.txt` for non-design commands.
pub fn execute(command: &str, cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    prepare_run_dir(cfg, dir)?;
    let summary = match command {
        "train" => cmd_train(cfg, dir)?,
        "sample" => cmd_sample(cfg, dir)?,
        "gradcheck" => cmd_gradcheck(cfg, dir)?,
        "design" => return cmd_design(cfg, dir),
        "gmm-demo" => cmd_gmm_demo(cfg, dir)?,
        other => return Err(Error::contract(format!("unknown command `{other}`"))),
    };
    write_text(&dir.join("summary.txt"), &format!("version={}\n{summary}", version_string()))?;
    Ok(summary)
}
