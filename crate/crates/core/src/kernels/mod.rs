//! The maps `Λ(a, z)` and the diagnostics around them.
//!
//! Every kernel takes the `J` inside indices `a` (the outside option is
//! normalized to zero where the model has one) and returns a vector in
//! `R^J`. Kernels are pure; Monte Carlo kernels own their error draws and
//! reuse them for every query at the same control (common random numbers),
//! so each is a deterministic function of `a`.

mod arum;
mod competing;
mod mc;
mod perturbed;
mod probe;
pub mod selftest;

pub use arum::arum_lambda_gumbel;
pub use competing::{competing_risks_lambda_gumbel, competing_risks_parts};
pub use mc::{
    ccp_mc, competing_risks_mc, surplus_mc, wdz_gradient_check, ArumMc, CcpEstimate,
    CompetingRisksMc, ErrorDraws, GradientCheck, McStream, SurplusEstimate, SurplusPath,
};
pub use perturbed::{
    foc_residual, perturbed_solve, Entropy, LogBarrier, Perturbation, PerturbationSpec,
    SolverOptions, TOL_FOC,
};
pub use probe::{injectivity_probe, Collision, InjectivityReport, ProbeOptions};

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{KernelKind, LambdaKernelSpec, ModelError, ZId, ZKernelParams};
use crate::numerics::exact_sum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("expected an index of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite index {0:?}")]
    NonFinite(Vec<f64>),
    #[error("perturbed solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("point is on the simplex boundary: {0:?}")]
    Boundary(Vec<f64>),
    #[error("configuration error: {0}")]
    Config(String),
}

/// One `a ↦ Λ(a)` map at a fixed control value.
pub trait Lambda: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, a: &[f64]) -> Result<Vec<f64>, KernelError>;

    /// Upper bound on the Monte Carlo standard error of each output
    /// coordinate; zero for closed-form kernels.
    fn stderr_bound(&self) -> f64 {
        0.0
    }
}

fn check_index(a: &[f64], dim: usize) -> Result<(), KernelError> {
    if a.len() != dim {
        return Err(KernelError::Dimension { expected: dim, got: a.len() });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::NonFinite(a.to_vec()));
    }
    Ok(())
}

/// Logit CCPs with error scale `scale`: `Λ(a) = softmax(a/scale)` inside.
pub struct ArumGumbel {
    pub dim: usize,
    pub scale: f64,
}

impl Lambda for ArumGumbel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, a: &[f64]) -> Result<Vec<f64>, KernelError> {
        check_index(a, self.dim)?;
        let scaled: Vec<f64> = a.iter().map(|v| v / self.scale).collect();
        Ok(arum_lambda_gumbel(&scaled))
    }
}

/// Competing risks with `ln T_j = a_j − scale·ε_j`, ε i.i.d. standard Gumbel.
pub struct CompetingRisksGumbel {
    pub dim: usize,
    pub scale: f64,
}

impl Lambda for CompetingRisksGumbel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, a: &[f64]) -> Result<Vec<f64>, KernelError> {
        check_index(a, self.dim)?;
        let scaled: Vec<f64> = a.iter().map(|v| v / self.scale).collect();
        Ok(competing_risks_lambda_gumbel(&scaled).into_iter().map(|v| v * self.scale).collect())
    }
}

/// Perturbed-utility demand for the inside options, `a₀ = 0`.
pub struct PerturbedDemand {
    pub dim: usize,
    pub pert: PerturbationSpec,
    pub opts: SolverOptions,
}

impl Lambda for PerturbedDemand {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, a: &[f64]) -> Result<Vec<f64>, KernelError> {
        check_index(a, self.dim)?;
        let mut full = Vec::with_capacity(a.len() + 1);
        full.push(0.0);
        full.extend_from_slice(a);
        let q = perturbed_solve(&full, &self.pert, &self.opts)?;
        Ok(q[1..].to_vec())
    }
}

/// Logit CCPs that ignore index coordinate `dropped`.
pub struct NoninjectiveLogit {
    pub dim: usize,
    pub scale: f64,
    pub dropped: Option<usize>,
}

impl Lambda for NoninjectiveLogit {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, a: &[f64]) -> Result<Vec<f64>, KernelError> {
        check_index(a, self.dim)?;
        let mut scaled: Vec<f64> = a.iter().map(|v| v / self.scale).collect();
        if let Some(k) = self.dropped {
            scaled[k] = 0.0;
        }
        Ok(arum_lambda_gumbel(&scaled))
    }
}

/// Per-control kernels of a scenario, plus the index shift `c`.
pub struct ScenarioKernel {
    shift: Vec<f64>,
    per_z: BTreeMap<ZId, Arc<dyn Lambda>>,
}

impl ScenarioKernel {
    pub fn build(spec: &LambdaKernelSpec, j: usize) -> Result<Self, ModelError> {
        let mut per_z: BTreeMap<ZId, Arc<dyn Lambda>> = BTreeMap::new();
        for p in &spec.per_z {
            per_z.insert(p.z, build_one(spec, p, j)?);
        }
        if spec.shift.len() != j {
            return Err(ModelError::Invalid(format!("kernel shift must have length {j}")));
        }
        Ok(ScenarioKernel { shift: spec.shift.clone(), per_z })
    }

    pub fn at(&self, z: ZId) -> Result<&Arc<dyn Lambda>, ModelError> {
        self.per_z.get(&z).ok_or(ModelError::UnknownZ(z))
    }

    /// `Λ(a, z)`, i.e. the base map at `a + c`.
    pub fn eval(&self, a: &[f64], z: ZId) -> Result<Vec<f64>, ModelError> {
        let shifted: Vec<f64> = a.iter().zip(&self.shift).map(|(v, c)| v + c).collect();
        Ok(self.at(z)?.eval(&shifted)?)
    }

    /// `Λ(g + h, z)` with the index `g + h + c` summed with a single rounding,
    /// so a scenario and its normalization-shifted twin agree bit for bit.
    pub fn eval_parts(&self, g: &[f64], h: &[f64], z: ZId) -> Result<Vec<f64>, ModelError> {
        let index: Vec<f64> = g
            .iter()
            .zip(h)
            .zip(&self.shift)
            .map(|((gv, hv), c)| exact_sum(&[*gv, *hv, *c]))
            .collect();
        Ok(self.at(z)?.eval(&index)?)
    }

    pub fn stderr_bound(&self, z: ZId) -> f64 {
        self.per_z.get(&z).map_or(0.0, |k| k.stderr_bound())
    }

    /// The kernel at `z` as a standalone map `a ↦ Λ(a, z)` (shift included).
    pub fn map_at(&self, z: ZId) -> Result<ShiftedLambda, ModelError> {
        Ok(ShiftedLambda { inner: self.at(z)?.clone(), shift: self.shift.clone() })
    }
}

pub struct ShiftedLambda {
    inner: Arc<dyn Lambda>,
    shift: Vec<f64>,
}

impl Lambda for ShiftedLambda {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, a: &[f64]) -> Result<Vec<f64>, KernelError> {
        let shifted: Vec<f64> = a.iter().zip(&self.shift).map(|(v, c)| v + c).collect();
        self.inner.eval(&shifted)
    }

    fn stderr_bound(&self) -> f64 {
        self.inner.stderr_bound()
    }
}

fn build_one(spec: &LambdaKernelSpec, p: &ZKernelParams, j: usize) -> Result<Arc<dyn Lambda>, ModelError> {
    let stream = McStream { seed: spec.mc_seed, stream: p.z.0 as u64 };
    let kernel: Arc<dyn Lambda> = match spec.kind {
        KernelKind::ArumGumbel => Arc::new(ArumGumbel { dim: j, scale: p.scale }),
        KernelKind::CompetingRisksGumbel => Arc::new(CompetingRisksGumbel { dim: j, scale: p.scale }),
        KernelKind::PerturbedEntropy => Arc::new(PerturbedDemand {
            dim: j,
            pert: PerturbationSpec::entropy(p.scale),
            opts: SolverOptions::default(),
        }),
        KernelKind::PerturbedCustom => Arc::new(PerturbedDemand {
            dim: j,
            pert: PerturbationSpec::custom(Arc::new(LogBarrier { scale: p.scale })),
            opts: SolverOptions::default(),
        }),
        KernelKind::NoninjectiveTest => {
            Arc::new(NoninjectiveLogit { dim: j, scale: p.scale, dropped: p.dropped_coordinate })
        }
        KernelKind::ArumMc => Arc::new(ArumMc::new(j, p.family, p.scale, spec.draws, stream)),
        KernelKind::CompetingRisksMc => {
            Arc::new(CompetingRisksMc::new(j, p.family, p.scale, spec.draws, stream))
        }
    };
    Ok(kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ErrorFamily;

    fn spec(kind: KernelKind) -> LambdaKernelSpec {
        LambdaKernelSpec {
            kind,
            draws: 1000,
            mc_seed: 3,
            shift: vec![0.0, 0.0],
            per_z: vec![ZKernelParams { z: ZId(0), scale: 1.0, family: ErrorFamily::Gumbel, dropped_coordinate: Some(0) }],
        }
    }

    #[test]
    fn shift_wrapper_translates_argument() {
        let mut s = spec(KernelKind::ArumGumbel);
        s.shift = vec![0.25, -0.5];
        let k = ScenarioKernel::build(&s, 2).unwrap();
        let direct = arum_lambda_gumbel(&[0.25 + 0.1, -0.5 + 0.2]);
        assert_eq!(k.eval(&[0.1, 0.2], ZId(0)).unwrap(), direct);
    }

    #[test]
    fn noninjective_kernel_ignores_dropped_coordinate() {
        let k = ScenarioKernel::build(&spec(KernelKind::NoninjectiveTest), 2).unwrap();
        assert_eq!(k.eval(&[0.3, 0.1], ZId(0)).unwrap(), k.eval(&[-2.0, 0.1], ZId(0)).unwrap());
    }

    #[test]
    fn unknown_control_is_an_error() {
        let k = ScenarioKernel::build(&spec(KernelKind::ArumGumbel), 2).unwrap();
        assert!(k.eval(&[0.0, 0.0], ZId(9)).is_err());
    }

    #[test]
    fn wrong_index_length_is_an_error() {
        let k = ArumGumbel { dim: 2, scale: 1.0 };
        assert!(matches!(k.eval(&[0.0]), Err(KernelError::Dimension { .. })));
    }
}
