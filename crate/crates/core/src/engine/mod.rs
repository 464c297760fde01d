//! Constructive identification.
//!
//! The engine sees the model only through a [`PiOracle`] and the [`Design`]
//! (known `g`, supports `G(x,z)`, normalization triple). It works in
//! `u = g(w)` coordinates: a matching equation `Π(w*,x*,z) = Π(w,x,z)` with
//! `h(x*)` known gives `h(x) = h(x*) + g(w*) − g(w)`. Matches are propagated
//! over the nodes `(x,z)`: inside one control by solving matching
//! equations, across controls through an x whose supports at the two
//! controls overlap.

mod lambda;
mod matching;
mod propagate;
mod replay;
mod verify;

pub use lambda::{recover_lambda, sample_lambda_queries};
pub use matching::match_solve;
pub use propagate::{identify_global, identify_within_z, WithinZResult};
pub use replay::{replay, ReplayReport};
pub use verify::{reachable_truth, verify_against_truth, TruthReach, VerifyOptions, VerifyReport};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Design, ModelError, XId, ZId};
use crate::oracle::{OracleError, PiOracle};
use crate::topology::HValues;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("inconsistent h for {x} at {z}: {existing:?} vs {implied:?} (difference {difference:e})")]
    Inconsistent { x: XId, z: ZId, existing: Vec<f64>, implied: Vec<f64>, difference: f64 },
    #[error("index {a:?} at {z} is not covered by any identified support")]
    Coverage { a: Vec<f64>, z: ZId },
    #[error("invalid normalization point: {0}")]
    InvalidSeed(String),
    #[error("document version {found} is incompatible with {expected}")]
    Version { found: u32, expected: u32 },
    #[error("invalid engine options: {0}")]
    Options(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    /// Matching tolerance; derived from the oracle's accuracy when absent.
    pub tol_match: Option<f64>,
    pub workers: usize,
    /// Maximum number of oracle queries.
    pub budget: Option<u64>,
    /// Source-point relocations per box pair.
    pub max_rounds: usize,
    pub newton_iters: usize,
    /// Extra low-discrepancy starts tried once after every lattice start failed.
    pub refine_starts: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions { tol_match: None, workers: 1, budget: None, max_rounds: 12, newton_iters: 40, refine_starts: 16 }
    }
}

impl EngineOptions {
    fn validate(&self) -> Result<(), EngineError> {
        if self.workers == 0 {
            return Err(EngineError::Options("worker count must be at least 1".into()));
        }
        if let Some(t) = self.tol_match {
            if !(t > 0.0 && t.is_finite()) {
                return Err(EngineError::Options(format!("tol_match must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol_match: f64,
    pub tol_h: f64,
    pub tol_conflict: f64,
}

impl Tolerances {
    pub fn from_match(tol_match: f64) -> Self {
        Tolerances { tol_match, tol_h: 10.0 * tol_match, tol_conflict: 100.0 * tol_match }
    }

    /// `max(1e-9, 4·stderr)` over the given controls unless overridden.
    pub fn for_oracle(oracle: &dyn PiOracle, z_ids: &[ZId], tol_match: Option<f64>) -> Self {
        let stderr = z_ids.iter().map(|z| oracle.stderr_bound(*z)).fold(0.0, f64::max);
        Tolerances::from_match(tol_match.unwrap_or_else(|| (4.0 * stderr).max(1e-9)))
    }
}

/// A solved matching equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchCertificate {
    pub source_x: XId,
    pub source_w: Vec<f64>,
    pub source_h: Vec<f64>,
    pub target_x: XId,
    pub target_w: Vec<f64>,
    pub z: ZId,
    /// `‖Π(w*,x*,z) − Π(w,x,z)‖∞`.
    pub residual: f64,
    /// `source_h + g(w*) − g(w)`.
    pub implied_h: Vec<f64>,
    /// `‖J⁻¹‖∞` of the target map's Jacobian in `g(w)` at the solution.
    pub sensitivity: f64,
}

pub(crate) fn implied_h(source_h: &[f64], g_source: &[f64], g_target: &[f64]) -> Vec<f64> {
    source_h
        .iter()
        .zip(g_source)
        .zip(g_target)
        .map(|((h, s), t)| h + (s - t))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReasonCode {
    /// None of the x's controls was reached.
    NoZOverlap,
    /// Every matching attempt concluded that the index supports do not meet.
    NoAOverlap,
    /// Some attempt ran out of starts without a verdict.
    SolverExhausted,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedX {
    pub x: XId,
    pub h: Vec<f64>,
    /// Certificates from `x₀` to `x`; empty for `x₀`.
    pub provenance: Vec<MatchCertificate>,
    pub reached_z: Vec<ZId>,
    /// Further matches of the same x that passed the conflict check.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternates: Vec<MatchCertificate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unidentified {
    pub x: XId,
    pub reason: ReasonCode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSample {
    pub a: Vec<f64>,
    pub z: ZId,
    pub value: Vec<f64>,
    pub via_x: XId,
    pub w: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentResult {
    pub spec_version: u32,
    pub design_fingerprint: String,
    pub x0: XId,
    pub z0: ZId,
    pub h_hat: Vec<IdentifiedX>,
    pub identified_z: Vec<ZId>,
    pub admissible_z: Vec<ZId>,
    pub unidentified: Vec<Unidentified>,
    pub lambda_samples: Vec<LambdaSample>,
    pub oracle_queries: u64,
    pub tolerances: Tolerances,
}

impl IdentResult {
    pub fn entry(&self, x: XId) -> Option<&IdentifiedX> {
        self.h_hat.iter().find(|e| e.x == x)
    }

    pub fn identified_x(&self) -> Vec<XId> {
        self.h_hat.iter().map(|e| e.x).collect()
    }
}

impl HValues for IdentResult {
    fn h_value(&self, x: XId) -> Option<&[f64]> {
        self.entry(x).map(|e| e.h.as_slice())
    }
}

/// Counts the engine's own queries and enforces its budget.
pub(crate) struct Counted<'a> {
    inner: &'a dyn PiOracle,
    used: AtomicU64,
    budget: Option<u64>,
}

impl<'a> Counted<'a> {
    pub(crate) fn new(inner: &'a dyn PiOracle, budget: Option<u64>) -> Self {
        Counted { inner, used: AtomicU64::new(0), budget }
    }

    pub(crate) fn query(&self, w: &[f64], x: XId, z: ZId) -> Result<Vec<f64>, OracleError> {
        if let Some(budget) = self.budget {
            self.used
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |c| (c < budget).then_some(c + 1))
                .map_err(|_| OracleError::BudgetExhausted { budget })?;
        } else {
            self.used.fetch_add(1, Ordering::SeqCst);
        }
        self.inner.query(w, x, z)
    }

    pub(crate) fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }
}

/// The normalization point must map into the interior of `G(x₀,z₀)`.
pub(crate) fn check_seed(design: &Design) -> Result<Vec<f64>, EngineError> {
    let s = &design.seed;
    let u = design.g.apply(&s.w0)?;
    if !design.supports.get(s.x0, s.z0).contains_interior(&u) {
        return Err(EngineError::InvalidSeed(format!("g(w0) = {u:?} is not interior to G({},{})", s.x0, s.z0)));
    }
    Ok(u)
}
