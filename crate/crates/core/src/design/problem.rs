use std::rc::Rc;

use crate::adjoint::{solve_on_tape, Physics};
use crate::autodiff::{Tape, Var};
use crate::diffusion::{ddim_generate, generate, DdimPlan, NoiseSchedule, Spacing};
use crate::error::{Error, Result};
use crate::nn::DenoiserParams;
use crate::tensor::Tensor;

use super::bfgs::{bfgs_minimize, BfgsOptions, BfgsTrace, StopReason};
use super::loss::{energy_target, Matrix3};
use super::projection::{binarization_metric, interpolate_material, interpolate_var, project, project_var, MaterialBlend, Orientation};

/// Below this `‖g‖∞` at the start of a stage the stage is abandoned.
pub const GRADIENT_FLOOR: f64 = 1e-14;

/// The frozen η = 0 sampler `w ↦ x₀`.
#[derive(Clone, Debug)]
pub struct Generator {
    pub params: Rc<DenoiserParams>,
    pub schedule: NoiseSchedule,
    pub plan: DdimPlan,
}

impl Generator {
    pub fn new(params: Rc<DenoiserParams>, schedule: NoiseSchedule, steps: usize) -> Result<Self> {
        let plan = DdimPlan::new(&schedule, steps, 0.0, Spacing::Uniform)?;
        Ok(Self { params, schedule, plan })
    }

    /// Shape of `w` including the unit batch axis.
    pub fn input_shape(&self) -> Vec<usize> {
        let mut s = vec![1];
        s.extend(self.params.arch.sample_shape());
        s
    }

    pub fn dim(&self) -> usize {
        self.input_shape().iter().product()
    }

    pub fn generate(&self, w: &[f64]) -> Result<Tensor> {
        generate(&self.params, &self.schedule, &self.plan, &self.w_tensor(w)?)
    }

    pub fn w_tensor(&self, w: &[f64]) -> Result<Tensor> {
        Tensor::new(&self.input_shape(), w.to_vec())
    }

    fn record(&self, tape: &Tape, w: Var) -> Result<Var> {
        let bound = self.params.bind(tape, false);
        ddim_generate(tape, &bound, &self.params.arch, &self.schedule, &self.plan, w)
    }
}

/// What sits between the generated sample and the loss.
#[derive(Clone, Debug)]
pub enum DesignPhysics {
    /// The loss acts on `x₀` directly.
    Identity,
    /// `x₀` is projected, blended into Θ and passed through a solve. One
    /// blend per parameter component, all driven by the same density
    /// (a blend with equal endpoints holds that component fixed).
    Mechanics {
        physics: Physics,
        orientation: Orientation,
        blends: Vec<MaterialBlend>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum LossSpec {
    /// `mean((x₀ − target)²)`.
    Sample { target: f64 },
    Homogenization { target: Matrix3 },
    StrainEnergy { alpha: f64 },
    StressCurve { target: Vec<f64> },
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Sample { .. } => "sample",
            LossSpec::Homogenization { .. } => "homogenization",
            LossSpec::StrainEnergy { .. } => "strain_energy",
            LossSpec::StressCurve { .. } => "stress_curve",
        }
    }
}

#[derive(Clone, Debug)]
pub struct DesignProblem {
    pub generator: Generator,
    pub physics: DesignPhysics,
    pub loss: LossSpec,
}

/// Everything downstream of `w` for one evaluation.
#[derive(Clone, Debug)]
pub struct DesignFields {
    pub x0: Tensor,
    /// Projected density in image (row-major, top row first) order.
    pub density: Vec<f64>,
    /// Material parameters in element order.
    pub theta: Vec<f64>,
    /// Solver output (C_hom row-major, energies or averaged stresses).
    pub output: Vec<f64>,
}

/// Element `(ny − 1 − row) · nx + col` holds pixel `(row, col)`: image rows
/// run top to bottom, element rows bottom to top.
pub fn element_of_pixel(row: usize, col: usize, nx: usize, ny: usize) -> usize {
    (ny - 1 - row) * nx + col
}

fn mesh_dims(p: &Physics) -> (usize, usize) {
    let m = match p {
        Physics::Homogenization(c) => &c.mesh,
        Physics::Hyperelastic { solid, .. } => &solid.mesh,
        Physics::Plasticity { solid, .. } => &solid.mesh,
    };
    (m.nx, m.ny)
}

impl DesignProblem {
    pub fn new(generator: Generator, physics: DesignPhysics, loss: LossSpec) -> Result<Self> {
        let p = Self { generator, physics, loss };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let sample = self.generator.params.arch.sample_shape();
        match (&self.physics, &self.loss) {
            (DesignPhysics::Identity, LossSpec::Sample { target }) => {
                if !target.is_finite() {
                    return Err(Error::contract("sample target must be finite"));
                }
                Ok(())
            }
            (DesignPhysics::Identity, l) => Err(Error::contract(format!("loss `{}` needs a mechanics solve", l.name()))),
            (DesignPhysics::Mechanics { physics, blends, .. }, loss) => {
                let (nx, ny) = mesh_dims(physics);
                if sample.len() != 3 || sample[0] != 1 || sample[1] != ny || sample[2] != nx {
                    return Err(Error::contract(format!(
                        "generator samples of shape {sample:?} do not map one pixel per element of a {nx}×{ny} mesh"
                    )));
                }
                if blends.len() * physics.n_elems() != physics.n_params() {
                    return Err(Error::contract(format!(
                        "{} material blends for `{}`, which takes {} fields",
                        blends.len(),
                        physics.rule_name(),
                        physics.n_params() / physics.n_elems()
                    )));
                }
                match (physics, loss) {
                    (Physics::Homogenization(_), LossSpec::Homogenization { .. }) => Ok(()),
                    (Physics::Hyperelastic { .. }, LossSpec::StrainEnergy { alpha }) => {
                        if !(0.0..=1.0).contains(alpha) {
                            return Err(Error::contract(format!("blend factor {alpha} outside [0, 1]")));
                        }
                        Ok(())
                    }
                    (Physics::Plasticity { loads, .. }, LossSpec::StressCurve { target }) => {
                        if target.len() != loads.len() {
                            return Err(Error::contract(format!(
                                "stress target has {} points for {} load steps",
                                target.len(),
                                loads.len()
                            )));
                        }
                        Ok(())
                    }
                    (p, l) => Err(Error::contract(format!(
                        "loss `{}` does not match physics `{}`",
                        l.name(),
                        p.rule_name()
                    ))),
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    /// Density in element order, on the tape.
    fn density_var(&self, tape: &Tape, x0: Var, gamma: f64, orientation: Orientation, nx: usize, ny: usize) -> Result<Var> {
        let p = orientation.apply_var(tape, project_var(tape, x0, gamma)?)?;
        let img = tape.reshape(p, &[ny, nx])?;
        // row flip as an exact permutation product
        let mut flip = Tensor::zeros(&[ny, ny]);
        (0..ny).for_each(|r| flip.data_mut()[r * ny + (ny - 1 - r)] = 1.0);
        let flipped = tape.matmul(tape.constant(flip), img)?;
        tape.reshape(flipped, &[nx * ny])
    }

    fn loss_var(&self, tape: &Tape, x0: Var, gamma: f64) -> Result<Var> {
        match (&self.physics, &self.loss) {
            (DesignPhysics::Identity, LossSpec::Sample { target }) => tape.mean(tape.square(tape.add_scalar(x0, -target)?)?),
            (
                DesignPhysics::Mechanics {
                    physics,
                    orientation,
                    blends,
                },
                loss,
            ) => {
                let (nx, ny) = mesh_dims(physics);
                let d = self.density_var(tape, x0, gamma, *orientation, nx, ny)?;
                let theta = interpolate_var(tape, &vec![d; blends.len()], blends)?;
                let out = solve_on_tape(tape, physics, theta)?;
                let target = match (physics, loss) {
                    (_, LossSpec::Homogenization { target }) => Tensor::from_vec(&[3, 3], target.iter().flatten().copied().collect()),
                    (Physics::Hyperelastic { loads, .. }, LossSpec::StrainEnergy { alpha }) => {
                        Tensor::vector(loads.iter().map(|&x| energy_target(*alpha, x)).collect())
                    }
                    (_, LossSpec::StressCurve { target }) => Tensor::vector(target.clone()),
                    _ => unreachable!("validated at construction"),
                };
                let r = tape.square(tape.sub(out, tape.constant(target))?)?;
                match loss {
                    LossSpec::Homogenization { .. } => tape.sum(r),
                    _ => tape.mean(r),
                }
            }
            _ => unreachable!("validated at construction"),
        }
    }

    /// Records `L(w)` on `tape`; `w` has the generator's input shape.
    pub fn loss_on_tape(&self, tape: &Tape, w: Var, gamma: f64) -> Result<Var> {
        let x0 = self.generator.record(tape, w)?;
        self.loss_var(tape, x0, gamma)
    }

    /// Fused forward and backward pass: `(L(w), ∂L/∂w)`.
    pub fn loss_and_grad(&self, w: &[f64], gamma: f64) -> Result<(f64, Vec<f64>)> {
        let tape = Tape::new();
        let wv = tape.leaf(self.generator.w_tensor(w)?);
        let l = self.loss_on_tape(&tape, wv, gamma)?;
        let loss = tape.item(l);
        let g = tape.backward(l)?.wrt(wv, &self.generator.input_shape());
        Ok((loss, g.into_data()))
    }

    pub fn loss(&self, w: &[f64], gamma: f64) -> Result<f64> {
        let tape = Tape::new();
        let wv = tape.constant(self.generator.w_tensor(w)?);
        Ok(tape.item(self.loss_on_tape(&tape, wv, gamma)?))
    }

    /// Generated sample, density, Θ and solver output at `w`.
    pub fn fields(&self, w: &[f64], gamma: f64) -> Result<DesignFields> {
        let x0 = self.generator.generate(w)?;
        match &self.physics {
            DesignPhysics::Identity => Ok(DesignFields {
                output: x0.data().to_vec(),
                x0,
                density: vec![],
                theta: vec![],
            }),
            DesignPhysics::Mechanics {
                physics,
                orientation,
                blends,
            } => {
                let (nx, ny) = mesh_dims(physics);
                let mut density = project(&x0, gamma)?.into_data();
                if *orientation == Orientation::Inverted {
                    density.iter_mut().for_each(|v| *v = 1.0 - *v);
                }
                let mut elem = vec![0.0; nx * ny];
                for r in 0..ny {
                    for c in 0..nx {
                        elem[element_of_pixel(r, c, nx, ny)] = density[r * nx + c];
                    }
                }
                let theta = interpolate_material(&vec![&elem[..]; blends.len()], blends)?;
                let output = physics.evaluate(&theta)?.into_data();
                Ok(DesignFields {
                    x0,
                    density,
                    theta,
                    output,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub gamma: f64,
    pub loss_tol: f64,
    pub max_iter: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSchedule {
    pub stages: Vec<Stage>,
}

impl StageSchedule {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::contract("stage schedule is empty"));
        }
        if stages.iter().any(|s| !(s.gamma > 0.0 && s.gamma.is_finite())) {
            return Err(Error::contract("stage sharpness values must be positive"));
        }
        if stages.windows(2).any(|p| p[1].gamma <= p[0].gamma) {
            return Err(Error::contract("stage sharpness values must be strictly increasing"));
        }
        Ok(Self { stages })
    }

    /// Same tolerance and iteration cap for every γ.
    pub fn uniform(gammas: &[f64], loss_tol: f64, max_iter: usize) -> Result<Self> {
        Self::new(
            gammas
                .iter()
                .map(|&gamma| Stage {
                    gamma,
                    loss_tol,
                    max_iter,
                })
                .collect(),
        )
    }

    pub fn homogenization() -> Self {
        Self::uniform(&[5.0, 10.0, 20.0, 80.0], 1e-2, 100).expect("valid schedule")
    }

    pub fn hyperelastic() -> Self {
        Self::uniform(&[2.0, 5.0, 10.0, 20.0, 100.0], 1e-3, 30).expect("valid schedule")
    }
}

/// First four sample moments of `w`, summarized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseHealth {
    /// `‖w‖² / dim`; near 1 for a standard normal draw.
    pub norm2_per_dim: f64,
    /// `m₄ / m₂² − 3`; near 0 for a standard normal draw.
    pub excess_kurtosis: f64,
}

impl NoiseHealth {
    pub fn of(w: &[f64]) -> Self {
        let n = w.len().max(1) as f64;
        let mean = w.iter().sum::<f64>() / n;
        let m2 = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m4 = w.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        Self {
            norm2_per_dim: w.iter().map(|v| v * v).sum::<f64>() / n,
            excess_kurtosis: if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { f64::NAN },
        }
    }
}

#[derive(Clone, Debug)]
pub struct StageReport {
    pub gamma: f64,
    pub trace: BfgsTrace,
    pub health: NoiseHealth,
    /// Set when the stage gave up because the gradient vanished.
    pub aborted: Option<String>,
}

#[derive(Clone, Debug)]
pub struct DesignResult {
    pub w: Vec<f64>,
    pub stages: Vec<StageReport>,
    pub fields: DesignFields,
    /// `B(10⁻³)` of the final density.
    pub binarization: f64,
    pub final_loss: f64,
}

impl DesignResult {
    pub fn initial_loss(&self) -> f64 {
        self.stages[0].trace.losses[0]
    }

    pub fn grad_norms(&self) -> Vec<f64> {
        self.stages.iter().flat_map(|s| s.trace.grad_norms.iter().copied()).collect()
    }
}

/// γ-continuation: one quasi-Newton run per stage, each warm-started from
/// the previous optimum. `base` supplies line-search and memory settings;
/// tolerance and iteration cap come from the stage.
pub fn multistage_optimize(problem: &DesignProblem, w0: &[f64], schedule: &StageSchedule, base: &BfgsOptions) -> Result<DesignResult> {
    if w0.len() != problem.dim() {
        return Err(Error::Shape {
            op: "multistage_optimize".into(),
            expected: vec![problem.dim()],
            got: vec![w0.len()],
        });
    }
    let mut w = w0.to_vec();
    let mut stages = Vec::with_capacity(schedule.stages.len());
    for (k, st) in schedule.stages.iter().enumerate() {
        let opts = BfgsOptions {
            max_iter: st.max_iter,
            loss_tol: st.loss_tol,
            grad_tol: base.grad_tol.max(GRADIENT_FLOOR),
            ..base.clone()
        };
        let (w_next, trace) = bfgs_minimize(|x| problem.loss_and_grad(x, st.gamma), &w, &opts)
            .map_err(|e| Error::Stage { stage: k, source: Box::new(e) })?;
        let aborted = (trace.stop == StopReason::GradientTolerance && trace.iterations() == 0 && trace.losses[0] > st.loss_tol)
            .then(|| format!("gradient vanished at γ = {} (‖g‖∞ = {:e})", st.gamma, trace.grad_norms[0]));
        if let Some(msg) = &aborted {
            log::warn!("stage {k}: {msg}");
        }
        log::info!(
            "stage {k} (γ = {}): loss {:e} → {:e} in {} iterations ({})",
            st.gamma,
            trace.losses[0],
            trace.final_loss(),
            trace.iterations(),
            trace.stop.name()
        );
        w = w_next;
        stages.push(StageReport {
            gamma: st.gamma,
            health: NoiseHealth::of(&w),
            trace,
            aborted,
        });
    }
    let gamma = schedule.stages.last().expect("nonempty").gamma;
    let fields = problem.fields(&w, gamma).map_err(|e| Error::Stage {
        stage: schedule.stages.len() - 1,
        source: Box::new(e),
    })?;
    let binarization = binarization_metric(&fields.density, 1e-3);
    let final_loss = stages.last().expect("nonempty").trace.final_loss();
    Ok(DesignResult {
        w,
        stages,
        fields,
        binarization,
        final_loss,
    })
}
