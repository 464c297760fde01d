use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::KernelError;

/// Default stopping tolerance on the projected first-order residual.
pub const TOL_FOC: f64 = 1e-10;

/// A concave perturbation `Ω(q)` on the open unit simplex whose gradient
/// norm diverges towards the boundary.
pub trait Perturbation: Send + Sync {
    fn value(&self, q: &[f64]) -> f64;

    fn gradient(&self, q: &[f64], out: &mut [f64]);

    /// Initial mirror-ascent step; the solver adapts it.
    fn step_hint(&self) -> f64 {
        1.0
    }
}

/// `Ω(q) = −c Σ q_j ln q_j`.
#[derive(Clone, Copy, Debug)]
pub struct Entropy {
    pub scale: f64,
}

impl Perturbation for Entropy {
    fn value(&self, q: &[f64]) -> f64 {
        -self.scale * q.iter().map(|v| v * v.ln()).sum::<f64>()
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(q) {
            *o = -self.scale * (v.ln() + 1.0);
        }
    }

    fn step_hint(&self) -> f64 {
        1.0 / self.scale
    }
}

/// `Ω(q) = c Σ ln q_j`.
#[derive(Clone, Copy, Debug)]
pub struct LogBarrier {
    pub scale: f64,
}

impl Perturbation for LogBarrier {
    fn value(&self, q: &[f64]) -> f64 {
        self.scale * q.iter().map(|v| v.ln()).sum::<f64>()
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(q) {
            *o = self.scale / v;
        }
    }

    fn step_hint(&self) -> f64 {
        1.0 / self.scale
    }
}

#[derive(Clone)]
pub enum PerturbationSpec {
    Entropy(Entropy),
    Custom(Arc<dyn Perturbation>),
}

impl PerturbationSpec {
    pub fn entropy(scale: f64) -> Self {
        PerturbationSpec::Entropy(Entropy { scale })
    }

    pub fn custom(omega: Arc<dyn Perturbation>) -> Self {
        PerturbationSpec::Custom(omega)
    }

    fn omega(&self) -> &dyn Perturbation {
        match self {
            PerturbationSpec::Entropy(e) => e,
            PerturbationSpec::Custom(c) => c.as_ref(),
        }
    }
}

impl fmt::Debug for PerturbationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PerturbationSpec::Entropy(e) => write!(f, "Entropy(c={})", e.scale),
            PerturbationSpec::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tol_foc: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol_foc: TOL_FOC, max_iter: 100_000 }
    }
}

fn objective(a: &[f64], q: &[f64], omega: &dyn Perturbation) -> f64 {
    a.iter().zip(q).map(|(x, y)| x * y).sum::<f64>() + omega.value(q)
}

fn projected_residual(a: &[f64], grad_omega: &[f64]) -> f64 {
    let base = a[0] + grad_omega[0];
    a.iter()
        .zip(grad_omega)
        .skip(1)
        .fold(0.0, |m, (x, g)| m.max((x + g - base).abs()))
}

/// `‖M(a + ∇Ω(q))‖∞` with `Mx = x − x₀ι`; zero exactly at the interior
/// first-order condition `a + ∇Ω(q) = λι`.
pub fn foc_residual(a: &[f64], q: &[f64], pert: &PerturbationSpec) -> Result<f64, KernelError> {
    if a.len() != q.len() {
        return Err(KernelError::Dimension { expected: a.len(), got: q.len() });
    }
    if q.iter().any(|v| !(*v > 0.0)) {
        return Err(KernelError::Boundary(q.to_vec()));
    }
    let mut grad = vec![0.0; q.len()];
    pert.omega().gradient(q, &mut grad);
    Ok(projected_residual(a, &grad))
}

/// `argmax_{q ∈ Δ} a·q + Ω(q)` by entropic mirror ascent.
///
/// `a` includes the outside option as coordinate 0. Iterates are
/// multiplicative updates of a strictly positive vector, so they stay in
/// the open simplex; the step adapts by backtracking.
pub fn perturbed_solve(
    a: &[f64],
    pert: &PerturbationSpec,
    opts: &SolverOptions,
) -> Result<Vec<f64>, KernelError> {
    if a.is_empty() {
        return Err(KernelError::Dimension { expected: 1, got: 0 });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::NonFinite(a.to_vec()));
    }
    let omega = pert.omega();
    let n = a.len();
    let mut q = vec![1.0 / n as f64; n];
    let mut grad = vec![0.0; n];
    let mut step = omega.step_hint();
    let mut candidate = vec![0.0; n];
    let mut cand_grad = vec![0.0; n];

    omega.gradient(&q, &mut grad);
    let mut residual = projected_residual(a, &grad);
    let mut value = objective(a, &q, omega);

    for _ in 0..opts.max_iter {
        if residual <= opts.tol_foc {
            return Ok(q);
        }
        let direction: Vec<f64> = a.iter().zip(&grad).map(|(x, g)| x + g).collect();
        let top = direction.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut accepted = false;
        for _ in 0..60 {
            let mut total = 0.0;
            for k in 0..n {
                candidate[k] = q[k] * (step * (direction[k] - top)).exp();
                total += candidate[k];
            }
            candidate.iter_mut().for_each(|v| *v /= total);
            if candidate.iter().all(|v| *v > 0.0) {
                let cand_value = objective(a, &candidate, omega);
                if cand_value.is_finite() {
                    omega.gradient(&candidate, &mut cand_grad);
                    let cand_residual = projected_residual(a, &cand_grad);
                    if cand_value > value || cand_residual < residual {
                        q.copy_from_slice(&candidate);
                        grad.copy_from_slice(&cand_grad);
                        residual = cand_residual;
                        value = cand_value;
                        accepted = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (step * 2.0).min(1e8);
    }
    if residual <= opts.tol_foc {
        return Ok(q);
    }
    residual = newton_polish(a, omega, &mut q, residual);
    if residual <= opts.tol_foc {
        return Ok(q);
    }
    Err(KernelError::NonConvergence { iterations: opts.max_iter, residual })
}

/// Newton on `a + ∇Ω(q) = μι, Σq = 1` with a finite-difference Hessian.
/// Mirror ascent stalls when the curvature of `Ω` differs by orders of
/// magnitude across coordinates, as for a log barrier near a face.
fn newton_polish(a: &[f64], omega: &dyn Perturbation, q: &mut [f64], mut residual: f64) -> f64 {
    let n = q.len();
    let mut grad = vec![0.0; n];
    let mut shifted = vec![0.0; n];
    let mut grad_step = vec![0.0; n];
    for _ in 0..30 {
        omega.gradient(q, &mut grad);
        let mu = a.iter().zip(&grad).map(|(x, g)| x + g).sum::<f64>() / n as f64;
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        let mut rhs = DVector::zeros(n + 1);
        for k in 0..n {
            let step = 1e-7 * q[k];
            shifted.copy_from_slice(q);
            shifted[k] += step;
            omega.gradient(&shifted, &mut grad_step);
            for r in 0..n {
                jac[(r, k)] = (grad_step[r] - grad[r]) / step;
            }
            jac[(k, n)] = -1.0;
            jac[(n, k)] = 1.0;
            rhs[k] = -(a[k] + grad[k] - mu);
        }
        rhs[n] = 1.0 - q.iter().sum::<f64>();
        let Some(d) = jac.lu().solve(&rhs) else { break };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand: Vec<f64> = q.iter().zip(d.iter()).map(|(v, dv)| v + t * dv).collect();
            if cand.iter().all(|v| *v > 0.0) {
                let total: f64 = cand.iter().sum();
                let cand: Vec<f64> = cand.iter().map(|v| v / total).collect();
                omega.gradient(&cand, &mut grad_step);
                let r = projected_residual(a, &grad_step);
                if r < residual {
                    q.copy_from_slice(&cand);
                    residual = r;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    residual
}
