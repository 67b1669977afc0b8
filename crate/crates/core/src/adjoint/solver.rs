use crate::error::{Error, Result};
use crate::fem::{SparseLu, Triplets};

/// An equilibrium `R(u, Θ) = 0` over reduced unknowns `u`.
pub trait ResidualProblem {
    fn n_free(&self) -> usize;

    fn n_params(&self) -> usize;

    fn residual(&self, u: &[f64], theta: &[f64]) -> Result<Vec<f64>>;

    /// `∂R/∂u` at `(u, Θ)`.
    fn tangent(&self, u: &[f64], theta: &[f64]) -> Result<Triplets>;

    /// `λᵀ ∂R/∂Θ`, assembled element by element.
    fn residual_theta_vjp(&self, u: &[f64], theta: &[f64], lambda: &[f64]) -> Result<Vec<f64>>;

    /// Relative residual level accepted as converged.
    fn residual_tolerance(&self) -> f64 {
        1e-6
    }

    /// Force scale the tolerance is measured against.
    fn residual_scale(&self, _theta: &[f64]) -> f64 {
        1.0
    }
}

/// Factorized transposed tangent at a converged state.
pub struct AdjointWorkspace<'a, P: ResidualProblem + ?Sized> {
    problem: &'a P,
    u: &'a [f64],
    theta: &'a [f64],
    lu: SparseLu,
}

impl<'a, P: ResidualProblem + ?Sized> AdjointWorkspace<'a, P> {
    pub fn new(problem: &'a P, u: &'a [f64], theta: &'a [f64]) -> Result<Self> {
        if u.len() != problem.n_free() || theta.len() != problem.n_params() {
            return Err(Error::contract(format!(
                "adjoint state sizes {}/{} do not match problem {}/{}",
                u.len(),
                theta.len(),
                problem.n_free(),
                problem.n_params()
            )));
        }
        let r = problem.residual(u, theta)?;
        let rn = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = problem.residual_tolerance() * problem.residual_scale(theta).max(f64::MIN_POSITIVE);
        if !(rn <= tol) {
            return Err(Error::contract(format!(
                "adjoint requested at a non-converged state (|R|inf = {rn:e}, tolerance {tol:e})"
            )));
        }
        let lu = SparseLu::factor(&problem.tangent(u, theta)?)?;
        Ok(Self { problem, u, theta, lu })
    }

    /// Solves `(∂R/∂u)ᵀ λ = −v_u`.
    pub fn adjoint(&self, v_u: &[f64]) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = v_u.iter().map(|v| -v).collect();
        self.lu.solve_transpose(&rhs)
    }

    /// `v_uᵀ ∂u/∂Θ = λᵀ ∂R/∂Θ`.
    pub fn vjp(&self, v_u: &[f64]) -> Result<Vec<f64>> {
        if v_u.len() != self.problem.n_free() {
            return Err(Error::Shape {
                op: "solver_vjp".into(),
                expected: vec![self.problem.n_free()],
                got: vec![v_u.len()],
            });
        }
        if v_u.iter().all(|&v| v == 0.0) {
            return Ok(vec![0.0; self.problem.n_params()]);
        }
        let lambda = self.adjoint(v_u)?;
        self.problem.residual_theta_vjp(self.u, self.theta, &lambda)
    }
}

/// Pulls a cotangent on the equilibrium solution `u*` back to `Θ`.
pub fn solver_vjp<P: ResidualProblem + ?Sized>(problem: &P, u: &[f64], theta: &[f64], v_u: &[f64]) -> Result<Vec<f64>> {
    AdjointWorkspace::new(problem, u, theta)?.vjp(v_u)
}
