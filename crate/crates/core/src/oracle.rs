//! The only channel through which the identification engine sees a model.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::kernels::ScenarioKernel;
use crate::model::{eval_pi_with, ModelError, Scenario, XId, ZId};

/// Relative slack of the support-membership test on `g(w)`, so that a `w`
/// obtained by inverting `g` at a box face is still accepted.
const SUPPORT_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("g(w) = {u:?} is outside the support G({x},{z})")]
    OutsideSupport { u: Vec<f64>, x: XId, z: ZId },
    #[error("query budget of {budget} exhausted")]
    BudgetExhausted { budget: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Black-box access to `Π(w,x,z)`.
pub trait PiOracle: Send + Sync {
    fn dim(&self) -> usize;

    fn query(&self, w: &[f64], x: XId, z: ZId) -> Result<Vec<f64>, OracleError>;

    /// Queries answered so far.
    fn queries(&self) -> u64;

    /// Accuracy of the answers at `z`: the Monte Carlo standard error of the
    /// underlying kernel, zero when `Π` is exact.
    fn stderr_bound(&self, z: ZId) -> f64;
}

/// Oracle backed by a ground-truth scenario. Answers only on the support,
/// `g(w) ∈ G(x,z)`, and never exposes `h` or `Λ` directly.
pub struct CcpOracle {
    scenario: Scenario,
    kernel: ScenarioKernel,
    count: AtomicU64,
    budget: Option<u64>,
}

pub fn make_oracle(scenario: &Scenario) -> Result<CcpOracle, ModelError> {
    scenario.validate()?;
    let kernel = ScenarioKernel::build(&scenario.lambda, scenario.dims.j)?;
    Ok(CcpOracle { scenario: scenario.clone(), kernel, count: AtomicU64::new(0), budget: None })
}

impl CcpOracle {
    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    fn take_ticket(&self) -> Result<(), OracleError> {
        match self.budget {
            None => {
                self.count.fetch_add(1, Ordering::SeqCst);
                Ok(())
            }
            Some(budget) => self
                .count
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |c| (c < budget).then_some(c + 1))
                .map(|_| ())
                .map_err(|_| OracleError::BudgetExhausted { budget }),
        }
    }
}

impl PiOracle for CcpOracle {
    fn dim(&self) -> usize {
        self.scenario.dims.j
    }

    fn query(&self, w: &[f64], x: XId, z: ZId) -> Result<Vec<f64>, OracleError> {
        let u = self.scenario.g.apply(w)?;
        if !self.scenario.supports.get(x, z).contains_closed(&u, SUPPORT_SLACK) {
            return Err(OracleError::OutsideSupport { u, x, z });
        }
        self.take_ticket()?;
        Ok(eval_pi_with(&self.kernel, &self.scenario, w, x, z)?)
    }

    fn queries(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }

    fn stderr_bound(&self, z: ZId) -> f64 {
        self.kernel.stderr_bound(z)
    }
}
