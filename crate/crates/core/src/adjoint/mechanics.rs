use std::any::Any;
use std::rc::Rc;

use crate::autodiff::{CustomVjpRule, Tape, Var};
use crate::error::{Error, Result};
use crate::fem::{HomogenizationResult, HyperPath, Hyperelastic, Homogenization, PlasticHistory, Plasticity};
use crate::tensor::Tensor;

/// A mechanics solve that can be placed on a tape as a single primitive.
#[derive(Clone, Debug)]
pub enum Physics {
    /// Θ = E per element ↦ C_hom `[3, 3]`.
    Homogenization(Rc<Homogenization>),
    /// Θ = E per element ↦ strain energy per load level `[N]`.
    Hyperelastic { solid: Rc<Hyperelastic>, loads: Vec<f64> },
    /// Θ = `[E…, σ₀…]` ↦ averaged `σ_yy` per load level `[N]`.
    Plasticity { solid: Rc<Plasticity>, loads: Vec<f64> },
}

impl Physics {
    pub fn rule_name(&self) -> &'static str {
        match self {
            Physics::Homogenization(_) => "homogenize",
            Physics::Hyperelastic { .. } => "hyperelastic_energy",
            Physics::Plasticity { .. } => "plastic_response",
        }
    }

    pub fn n_elems(&self) -> usize {
        match self {
            Physics::Homogenization(c) => c.n_elems(),
            Physics::Hyperelastic { solid, .. } => solid.n_elems(),
            Physics::Plasticity { solid, .. } => solid.n_elems(),
        }
    }

    /// Length of Θ.
    pub fn n_params(&self) -> usize {
        match self {
            Physics::Plasticity { solid, .. } => solid.n_params(),
            _ => self.n_elems(),
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        match self {
            Physics::Homogenization(_) => vec![3, 3],
            Physics::Hyperelastic { loads, .. } | Physics::Plasticity { loads, .. } => vec![loads.len()],
        }
    }

    fn rule(&self) -> Rc<dyn CustomVjpRule> {
        Rc::new(MechanicsRule { physics: self.clone() })
    }

    /// Runs the solve outside any tape.
    pub fn evaluate(&self, theta: &[f64]) -> Result<Tensor> {
        Ok(self.rule().forward(&[&Tensor::vector(theta.to_vec())])?.0)
    }
}

struct MechanicsRule {
    physics: Physics,
}

enum Saved {
    Homogenization(HomogenizationResult),
    Hyperelastic(HyperPath),
    Plasticity(PlasticHistory),
}

impl CustomVjpRule for MechanicsRule {
    fn name(&self) -> &str {
        self.physics.rule_name()
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Box<dyn Any>)> {
        let [theta] = inputs else {
            return Err(Error::contract(format!("{} takes one input", self.name())));
        };
        if theta.len() != self.physics.n_params() {
            return Err(Error::Shape {
                op: self.name().into(),
                expected: vec![self.physics.n_params()],
                got: theta.shape().to_vec(),
            });
        }
        let t = theta.data();
        Ok(match &self.physics {
            Physics::Homogenization(cell) => {
                let r = cell.homogenize(t)?;
                let c = Tensor::from_vec(&[3, 3], r.c_hom.iter().flatten().copied().collect());
                (c, Box::new(Saved::Homogenization(r)))
            }
            Physics::Hyperelastic { solid, loads } => {
                let p = solid.solve_path(t, loads)?;
                (Tensor::vector(p.energy.clone()), Box::new(Saved::Hyperelastic(p)))
            }
            Physics::Plasticity { solid, loads } => {
                let h = solid.incremental_solve(t, loads)?;
                (Tensor::vector(h.sbar.clone()), Box::new(Saved::Plasticity(h)))
            }
        })
    }

    fn backward(&self, ctx: &dyn Any, inputs: &[Rc<Tensor>], cot: &Tensor) -> Result<Vec<Tensor>> {
        let saved = ctx
            .downcast_ref::<Saved>()
            .ok_or_else(|| Error::contract("mechanics rule lost its saved state"))?;
        let theta = inputs[0].data();
        let c = cot.data();
        let g = match (&self.physics, saved) {
            (Physics::Homogenization(cell), Saved::Homogenization(r)) => {
                let m = [[c[0], c[1], c[2]], [c[3], c[4], c[5]], [c[6], c[7], c[8]]];
                cell.homogenize_vjp(theta, r, &m)?
            }
            (Physics::Hyperelastic { solid, .. }, Saved::Hyperelastic(p)) => solid.energy_vjp(theta, p, c)?,
            (Physics::Plasticity { solid, .. }, Saved::Plasticity(h)) => solid.path_adjoint(theta, h, c)?,
            _ => return Err(Error::contract("mechanics rule state does not match its physics")),
        };
        Ok(vec![Tensor::from_vec(inputs[0].shape(), g)])
    }
}

/// Registers `physics` as a tape primitive under [`Physics::rule_name`].
/// Registering a second time is a no-op and returns false.
pub fn register_mechanics_vjps(tape: &Tape, physics: &Physics) -> bool {
    tape.register_rule(physics.rule())
}

/// Registers (if needed) and applies the solve to `theta` on `tape`.
pub fn solve_on_tape(tape: &Tape, physics: &Physics, theta: Var) -> Result<Var> {
    register_mechanics_vjps(tape, physics);
    tape.call(physics.rule_name(), &[theta])
}
