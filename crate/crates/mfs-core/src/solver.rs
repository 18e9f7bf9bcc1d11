//! Newton trainer, KKT solver for the constrained quadratic surrogate, and
//! the one-step Newton leave-one-out update.
//!
//! The counterfactual constraint is a single linear half-space (the logistic
//! log-odds is exactly linear in θ), so each surrogate minimization is an
//! exact QP with a closed-form solution: take the unconstrained Newton point
//! if feasible, otherwise project onto the constraint boundary through the
//! Hessian metric.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::{self, Claim, Dataset, Instance, ModelParams};

/// Step-norm threshold that ends the constrained inner loop early.
const INNER_STEP_TOL: f64 = 1e-8;
/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;

/// Second-order Taylor expansion of the training loss at `center`.
#[derive(Debug, Clone)]
pub struct QuadraticSurrogate {
    pub center: ModelParams,
    pub loss_at_center: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl QuadraticSurrogate {
    /// Surrogate value at `theta`.
    pub fn eval(&self, theta: &DVector<f64>) -> f64 {
        let dx = theta - &self.center.theta;
        self.loss_at_center + self.grad.dot(&dx) + 0.5 * (&self.hess * &dx).dot(&dx)
    }

    /// Surrogate gradient at `theta`.
    pub fn grad_at(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.grad + &self.hess * (theta - &self.center.theta)
    }
}

/// Outcome of one constrained surrogate solve.
#[derive(Debug, Clone)]
pub struct KktSolution {
    pub theta_prime: DVector<f64>,
    pub multiplier: f64,
    pub constraint_active: bool,
}

/// KKT condition residuals for a half-space solve; all should be small.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub stationarity: f64,
    /// Positive part of the constraint violation b − aᵀθ′.
    pub primal: f64,
    /// Positive part of −λ.
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

fn cholesky(hess: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(hess.clone()).ok_or(Error::SingularSystem)
}

/// Train the L2-regularized logistic model by damped Newton iterations with
/// Armijo backtracking, starting from θ = 0. Deterministic given inputs.
pub fn train(dataset: &Dataset, alpha: f64, tol: f64, max_iter: usize) -> Result<ModelParams> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParam(format!("tol must be > 0, got {tol}")));
    }
    let mut params = ModelParams::zeros(dataset.dim(), alpha)?;
    for _ in 0..max_iter {
        let grad = model::gradient_total(dataset, &params)?;
        if grad.norm() <= tol {
            return Ok(params);
        }
        let hess = model::hessian(dataset, &params)?;
        let chol = cholesky(&hess)?;
        let mut dir = -grad.clone();
        chol.solve_mut(&mut dir);
        let slope = grad.dot(&dir);
        if !slope.is_finite() {
            return Err(Error::NumericalFailure(
                "non-finite Newton direction".into(),
            ));
        }
        let f0 = model::total_loss(dataset, &params)?;
        // Decreases below the rounding level of f0 are accepted as-is so the
        // final Newton steps are not rejected on floating-point noise.
        let noise = 4.0 * f64::EPSILON * f0.abs().max(1.0);
        let mut t = 1.0;
        loop {
            let trial = ModelParams {
                theta: &params.theta + t * &dir,
                alpha,
            };
            if model::total_loss(dataset, &trial)? <= f0 + ARMIJO_C * t * slope + noise {
                params = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-15 {
                return Err(Error::NumericalFailure(
                    "line search failed to find a decrease".into(),
                ));
            }
        }
    }
    let grad_norm = model::gradient_total(dataset, &params)?.norm();
    if grad_norm <= tol {
        Ok(params)
    } else {
        Err(Error::TrainingDidNotConverge {
            grad_norm,
            iters: max_iter,
        })
    }
}

/// Package loss, gradient, and Hessian at the given expansion point.
pub fn build_surrogate(dataset: &Dataset, params: &ModelParams) -> Result<QuadraticSurrogate> {
    Ok(QuadraticSurrogate {
        center: params.clone(),
        loss_at_center: model::total_loss(dataset, params)?,
        grad: model::gradient_total(dataset, params)?,
        hess: model::hessian(dataset, params)?,
    })
}

/// Minimize ½(θ−c)ᵀH(θ−c) + gᵀ(θ−c) subject to aᵀθ ≥ b, in closed form.
///
/// If the unconstrained Newton point is feasible it is returned with a zero
/// multiplier; otherwise the solution sits on the boundary with
/// λ = (b − aᵀθᵤ)/(aᵀH⁻¹a) > 0.
pub fn solve_halfspace(
    hess: &DMatrix<f64>,
    grad: &DVector<f64>,
    center: &DVector<f64>,
    a: &DVector<f64>,
    b: f64,
) -> Result<KktSolution> {
    let chol = cholesky(hess)?;
    let theta_u = center - chol.solve(grad);
    if theta_u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("unconstrained Newton point".into()));
    }
    let slack = a.dot(&theta_u) - b;
    if slack >= 0.0 {
        return Ok(KktSolution {
            theta_prime: theta_u,
            multiplier: 0.0,
            constraint_active: false,
        });
    }
    let hinv_a = chol.solve(a);
    let denom = a.dot(&hinv_a);
    if !(denom > 1e-14) {
        return Err(Error::DegenerateConstraint { value: denom });
    }
    let multiplier = -slack / denom;
    let theta_prime = theta_u + multiplier * hinv_a;
    if theta_prime.iter().any(|v| !v.is_finite()) || !multiplier.is_finite() {
        return Err(Error::NumericalFailure("constrained KKT solve".into()));
    }
    Ok(KktSolution {
        theta_prime,
        multiplier,
        constraint_active: true,
    })
}

/// Constraint vector and bound for a claim: aᵀθ ≥ b encodes
/// log-odds toward the counterfactual class ≥ ε.
fn constraint_of(claim: &Claim, dim: usize) -> Result<(DVector<f64>, f64)> {
    if claim.x_star.len() != dim {
        return Err(Error::Shape {
            expected: dim,
            got: claim.x_star.len(),
        });
    }
    let s = if claim.counter_class() == 1 {
        1.0
    } else {
        -1.0
    };
    let mut a = DVector::zeros(dim + 1);
    for j in 0..dim {
        a[j] = s * claim.x_star[j];
    }
    a[dim] = s;
    Ok((a, claim.epsilon))
}

/// Solve the surrogate QP under the claim's counterfactual constraint.
pub fn solve_constrained(surrogate: &QuadraticSurrogate, claim: &Claim) -> Result<KktSolution> {
    let (a, b) = constraint_of(claim, surrogate.center.dim())?;
    solve_halfspace(
        &surrogate.hess,
        &surrogate.grad,
        &surrogate.center.theta,
        &a,
        b,
    )
}

/// Residuals of the four KKT conditions for a half-space solve; diagnostic.
pub fn verify_kkt(
    hess: &DMatrix<f64>,
    grad: &DVector<f64>,
    center: &DVector<f64>,
    a: &DVector<f64>,
    b: f64,
    sol: &KktSolution,
) -> KktResiduals {
    let g_at = grad + hess * (&sol.theta_prime - center);
    let stationarity = (&g_at - sol.multiplier * a).norm();
    let slack = a.dot(&sol.theta_prime) - b;
    KktResiduals {
        stationarity,
        primal: (-slack).max(0.0),
        dual: (-sol.multiplier).max(0.0),
        complementarity: (sol.multiplier * slack).abs(),
    }
}

/// Iterated surrogate solve for the constrained counterfactual optimum.
///
/// Re-centers the surrogate at each round; stops after `inner_iters` rounds
/// or when the step norm drops below 1e-8. The returned parameters satisfy
/// the claim constraint to within 1e-6.
pub fn counterfactual_params(
    dataset: &Dataset,
    params: &ModelParams,
    claim: &Claim,
    inner_iters: usize,
) -> Result<ModelParams> {
    if inner_iters == 0 {
        return Err(Error::InvalidParam("inner_iters must be >= 1".into()));
    }
    let mut current = params.clone();
    for _ in 0..inner_iters {
        let surrogate = build_surrogate(dataset, &current)?;
        let sol = solve_constrained(&surrogate, claim)?;
        let step = (&sol.theta_prime - &current.theta).norm();
        current = ModelParams::new(sol.theta_prime, params.alpha)?;
        if step <= INNER_STEP_TOL {
            break;
        }
    }
    let (lo, _) = model::log_odds(&current, &claim.x_star, claim.counter_class())?;
    if lo < claim.epsilon - 1e-6 {
        return Err(Error::NumericalFailure(format!(
            "counterfactual constraint not met: log-odds {lo:.3e} < epsilon {:.3e}",
            claim.epsilon
        )));
    }
    Ok(current)
}

/// Leave-one-out estimate θ̂ + (1/n′)·H⁻¹·∇l(z, θ̂) for removing one active
/// instance, where n′ and the mean Hessian are taken on the current active
/// set (the removed instance still included). The caller deactivates the
/// instance afterwards.
pub fn one_step_newton_remove(
    dataset: &Dataset,
    params: &ModelParams,
    removed: &Instance,
) -> Result<ModelParams> {
    if !dataset.is_active(removed.id) {
        return Err(Error::InactiveInstance(removed.id));
    }
    let hess = model::hessian(dataset, params)?;
    let chol = cholesky(&hess)?;
    let g = model::gradient_instance(removed, params)?;
    let n_prime = dataset.active_count() as f64;
    let theta = &params.theta + chol.solve(&g) / n_prime;
    ModelParams::new(theta, params.alpha)
}
