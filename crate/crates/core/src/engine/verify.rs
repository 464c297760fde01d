use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{EngineError, IdentResult};
use crate::kernels::ScenarioKernel;
use crate::model::{Scenario, XId, ZId};
use crate::numerics::sup_dist;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub h_tol: f64,
    pub lambda_tol: f64,
    /// For Monte Carlo kernels: allowed multiple of the propagated standard error.
    pub mc_factor: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { h_tol: 1e-8, lambda_tol: 1e-8, mc_factor: 5.0 }
    }
}

/// Nodes `(z,x)` reachable from the normalization node with the true `h`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthReach {
    pub nodes: BTreeSet<(ZId, XId)>,
    pub x: BTreeSet<XId>,
    pub z: BTreeSet<ZId>,
}

/// Breadth-first closure over the nodes `(z,x)`: inside a control two x's are
/// adjacent when their true index supports overlap, across controls the same
/// x is adjacent to itself when its supports at the two controls overlap.
pub fn reachable_truth(scenario: &Scenario, admissible_z: &[ZId]) -> Result<TruthReach, EngineError> {
    let s = &scenario.seed_triple;
    let mut out = TruthReach::default();
    if !admissible_z.contains(&s.z0) {
        return Ok(out);
    }
    let sup = &scenario.supports;
    let a_of = |x: XId, z: ZId| -> Result<_, EngineError> {
        Ok(crate::topology::translate(sup.get(x, z), scenario.h.get(x)?).expect("finite shift"))
    };
    let mut queue = VecDeque::from([(s.z0, s.x0)]);
    out.nodes.insert((s.z0, s.x0));
    while let Some((z, x)) = queue.pop_front() {
        let ax = a_of(x, z)?;
        for y in sup.x_in(z) {
            if !out.nodes.contains(&(z, y)) && ax.overlaps(&a_of(y, z)?) {
                out.nodes.insert((z, y));
                queue.push_back((z, y));
            }
        }
        for &other in admissible_z {
            if !out.nodes.contains(&(other, x)) && sup.get(x, z).overlaps(sup.get(x, other)) {
                out.nodes.insert((other, x));
                queue.push_back((other, x));
            }
        }
    }
    out.x = out.nodes.iter().map(|(_, x)| *x).collect();
    out.z = out.nodes.iter().map(|(z, _)| *z).collect();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub h_max_error: f64,
    pub lambda_max_error: f64,
    pub lambda_samples: usize,
    /// Largest propagated standard error over the identified x's; zero for
    /// exact kernels.
    pub stderr_bound: f64,
    pub missing_nodes: Vec<(ZId, XId)>,
    pub extra_nodes: Vec<(ZId, XId)>,
    pub pass: bool,
}

/// Compares an identification result with the ground truth that generated
/// its oracle. `h` is compared after normalizing the truth at `x₀`.
pub fn verify_against_truth(
    result: &IdentResult,
    scenario: &Scenario,
    opts: &VerifyOptions,
) -> Result<VerifyReport, EngineError> {
    let kernel = ScenarioKernel::build(&scenario.lambda, scenario.dims.j)?;
    let h0 = scenario.h.get(result.x0)?.to_vec();
    let monte_carlo = scenario.lambda.kind.is_monte_carlo();

    let mut h_max_error: f64 = 0.0;
    let mut stderr_bound: f64 = 0.0;
    let mut h_ok = true;
    for e in &result.h_hat {
        let truth: Vec<f64> = scenario.h.get(e.x)?.iter().zip(&h0).map(|(h, c)| h - c).collect();
        let err = sup_dist(&e.h, &truth);
        let bound: f64 = e
            .provenance
            .iter()
            .map(|c| c.sensitivity * kernel.stderr_bound(c.z).max(c.residual))
            .sum();
        h_max_error = h_max_error.max(err);
        stderr_bound = stderr_bound.max(bound);
        h_ok &= if monte_carlo { err <= opts.mc_factor * bound + 1e-12 } else { err <= opts.h_tol };
    }

    let mut lambda_max_error: f64 = 0.0;
    let mut lambda_ok = true;
    for s in &result.lambda_samples {
        let truth = kernel.eval(&s.a, s.z)?;
        let err = sup_dist(&truth, &s.value);
        lambda_max_error = lambda_max_error.max(err);
        lambda_ok &= if monte_carlo {
            err <= opts.mc_factor * (kernel.stderr_bound(s.z) + stderr_bound) + 1e-12
        } else {
            err <= opts.lambda_tol
        };
    }

    let truth = reachable_truth(scenario, &result.admissible_z)?;
    let found: BTreeSet<(ZId, XId)> =
        result.h_hat.iter().flat_map(|e| e.reached_z.iter().map(move |z| (*z, e.x))).collect();
    let found = if result.identified_z.is_empty() { BTreeSet::new() } else { found };
    let missing_nodes: Vec<_> = truth.nodes.difference(&found).copied().collect();
    let extra_nodes: Vec<_> = found.difference(&truth.nodes).copied().collect();

    let pass = h_ok && lambda_ok && missing_nodes.is_empty() && extra_nodes.is_empty();
    Ok(VerifyReport {
        h_max_error,
        lambda_max_error,
        lambda_samples: result.lambda_samples.len(),
        stderr_bound,
        missing_nodes,
        extra_nodes,
        pass,
    })
}
