use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::matching::{PairOutcome, Solver};
use super::{
    check_seed, Counted, EngineError, EngineOptions, IdentResult, IdentifiedX, MatchCertificate, ReasonCode,
    Tolerances, Unidentified,
};
use crate::model::{Design, XId, ZId, SPEC_VERSION};
use crate::numerics::sup_dist;
use crate::oracle::{OracleError, PiOracle};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Verdict {
    Matched,
    NoOverlap,
    SolverExhausted,
}

struct Node {
    h: Vec<f64>,
    chain: Vec<MatchCertificate>,
    alternates: Vec<MatchCertificate>,
}

struct Propagator<'a> {
    design: &'a Design,
    solver: Solver<'a>,
    pool: Option<rayon::ThreadPool>,
    known: BTreeMap<XId, Node>,
    reached: BTreeSet<(ZId, XId)>,
    /// Nodes seeded from another control whose `h` has not yet been
    /// cross-checked by a match inside this control.
    unchecked: BTreeSet<(ZId, XId)>,
    attempted: BTreeMap<(ZId, XId, XId), Verdict>,
    budget_hit: bool,
}

impl<'a> Propagator<'a> {
    fn new(
        design: &'a Design,
        counted: &'a Counted<'a>,
        tol: Tolerances,
        monte_carlo: bool,
        opts: &'a EngineOptions,
    ) -> Result<Self, EngineError> {
        let pool = if opts.workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(opts.workers)
                .build()
                .map_err(|e| EngineError::Options(format!("cannot start {} workers: {e}", opts.workers)))?;
            Some(pool)
        } else {
            None
        };
        Ok(Propagator {
            design,
            solver: Solver { oracle: counted, g: &design.g, tol, monte_carlo, opts },
            pool,
            known: BTreeMap::new(),
            reached: BTreeSet::new(),
            unchecked: BTreeSet::new(),
            attempted: BTreeMap::new(),
            budget_hit: false,
        })
    }

    fn seed(&mut self, x: XId, h: Vec<f64>, z: ZId) {
        self.known.entry(x).or_insert(Node { h, chain: Vec::new(), alternates: Vec::new() });
        self.reached.insert((z, x));
    }

    fn is_reached(&self, z: ZId, x: XId) -> bool {
        self.reached.contains(&(z, x))
    }

    fn evaluate(&self, z: ZId, pairs: &[(XId, XId)]) -> Vec<Result<PairOutcome, OracleError>> {
        let supports = &self.design.supports;
        let run = |&(s, t): &(XId, XId)| {
            let source_h = &self.known[&s].h;
            self.solver.match_pair(z, s, source_h, supports.get(s, z), t, supports.get(t, z))
        };
        match &self.pool {
            Some(pool) => pool.install(|| pairs.par_iter().map(run).collect()),
            None => pairs.iter().map(run).collect(),
        }
    }

    fn check_conflict(&self, cert: &MatchCertificate, existing: &[f64]) -> Result<(), EngineError> {
        let difference = sup_dist(existing, &cert.implied_h);
        if difference > self.solver.tol.tol_conflict {
            return Err(EngineError::Inconsistent {
                x: cert.target_x,
                z: cert.z,
                existing: existing.to_vec(),
                implied: cert.implied_h.clone(),
                difference,
            });
        }
        Ok(())
    }

    fn commit(&mut self, cert: MatchCertificate) -> Result<(), EngineError> {
        let (z, t) = (cert.z, cert.target_x);
        if let Some(node) = self.known.get(&t) {
            self.check_conflict(&cert, &node.h)?;
            self.reached.insert((z, t));
            self.unchecked.remove(&(z, t));
            self.known.get_mut(&t).expect("present").alternates.push(cert);
            return Ok(());
        }
        let mut chain = self.known[&cert.source_x].chain.clone();
        let h = cert.implied_h.clone();
        chain.push(cert);
        self.known.insert(t, Node { h, chain, alternates: Vec::new() });
        self.reached.insert((z, t));
        Ok(())
    }

    /// Propagates inside one control until no new x is reached.
    fn run_z(&mut self, z: ZId) -> Result<(), EngineError> {
        let members = self.design.supports.x_in(z);
        loop {
            if self.budget_hit {
                return Ok(());
            }
            let sources: Vec<XId> = members.iter().copied().filter(|x| self.is_reached(z, *x)).collect();
            let mut pairs = Vec::new();
            let targets = members
                .iter()
                .copied()
                .filter(|t| !self.is_reached(z, *t) || self.unchecked.contains(&(z, *t)));
            for t in targets {
                for &s in &sources {
                    if s != t && !self.attempted.contains_key(&(z, s, t)) {
                        pairs.push((s, t));
                    }
                }
            }
            if pairs.is_empty() {
                return Ok(());
            }
            let outcomes = self.evaluate(z, &pairs);
            let mut progress = false;
            for (&(s, t), outcome) in pairs.iter().zip(outcomes) {
                let verdict = match outcome {
                    Ok(PairOutcome::Matched(cert)) => {
                        progress |= !self.is_reached(z, t);
                        self.commit(cert)?;
                        Verdict::Matched
                    }
                    Ok(PairOutcome::NoOverlap) => Verdict::NoOverlap,
                    Ok(PairOutcome::SolverExhausted) => Verdict::SolverExhausted,
                    Err(OracleError::BudgetExhausted { .. }) => {
                        self.budget_hit = true;
                        return Ok(());
                    }
                    Err(e) => return Err(e.into()),
                };
                self.attempted.insert((z, s, t), verdict);
            }
            if !progress {
                return Ok(());
            }
        }
    }

    fn reason(&self, x: XId, admissible: &[ZId]) -> ReasonCode {
        if self.budget_hit {
            return ReasonCode::BudgetExhausted;
        }
        let active: BTreeSet<ZId> = self.reached.iter().map(|(z, _)| *z).collect();
        let zs: Vec<ZId> = self.design.supports.z_of(x).into_iter().filter(|z| admissible.contains(z)).collect();
        if !zs.iter().any(|z| active.contains(z)) {
            return ReasonCode::NoZOverlap;
        }
        let exhausted = self
            .attempted
            .iter()
            .any(|((_, _, t), v)| *t == x && *v == Verdict::SolverExhausted);
        if exhausted {
            ReasonCode::SolverExhausted
        } else {
            ReasonCode::NoAOverlap
        }
    }

    fn unidentified(&self, candidates: &[XId], admissible: &[ZId]) -> Vec<Unidentified> {
        candidates
            .iter()
            .filter(|x| !self.known.contains_key(x))
            .map(|&x| Unidentified { x, reason: self.reason(x, admissible) })
            .collect()
    }
}

fn is_monte_carlo(oracle: &dyn PiOracle, z_ids: &[ZId]) -> bool {
    z_ids.iter().any(|z| oracle.stderr_bound(*z) > 0.0)
}

/// Outcome of propagation inside a single control.
#[derive(Clone, Debug, PartialEq)]
pub struct WithinZResult {
    pub h: BTreeMap<XId, Vec<f64>>,
    /// Every accepted match, ordered by target x.
    pub certificates: Vec<MatchCertificate>,
    pub unidentified: Vec<Unidentified>,
    pub oracle_queries: u64,
}

/// Identifies `h` on the x's reachable inside control `z` from the x's whose
/// `h` is already known.
pub fn identify_within_z(
    oracle: &dyn PiOracle,
    design: &Design,
    z: ZId,
    known: &BTreeMap<XId, Vec<f64>>,
    opts: &EngineOptions,
) -> Result<WithinZResult, EngineError> {
    opts.validate()?;
    let counted = Counted::new(oracle, opts.budget);
    let tol = Tolerances::for_oracle(oracle, &[z], opts.tol_match);
    let mut p = Propagator::new(design, &counted, tol, is_monte_carlo(oracle, &[z]), opts)?;
    let members = design.supports.x_in(z);
    for (x, h) in known {
        if members.contains(x) {
            p.seed(*x, h.clone(), z);
        }
    }
    p.run_z(z)?;
    let mut certificates = Vec::new();
    let mut h = BTreeMap::new();
    for (x, node) in &p.known {
        h.insert(*x, node.h.clone());
        if !known.contains_key(x) {
            certificates.extend(node.chain.last().cloned());
        }
        certificates.extend(node.alternates.iter().cloned());
    }
    Ok(WithinZResult {
        h,
        certificates,
        unidentified: p.unidentified(&members, &[z]),
        oracle_queries: counted.used(),
    })
}

/// Identifies `h` on every x reachable from the normalization point, within
/// controls by matching and across the controls in `admissible_z` through
/// x's whose supports at two controls overlap. Every x carried into a
/// control is cross-checked there by one match from another reached x when
/// such a match exists.
pub fn identify_global(
    oracle: &dyn PiOracle,
    design: &Design,
    admissible_z: &[ZId],
    opts: &EngineOptions,
) -> Result<IdentResult, EngineError> {
    opts.validate()?;
    check_seed(design)?;
    let seed = &design.seed;
    let mut admissible: Vec<ZId> = admissible_z.iter().copied().filter(|z| design.z_ids.contains(z)).collect();
    admissible.sort();
    admissible.dedup();
    let counted = Counted::new(oracle, opts.budget);
    let tol = Tolerances::for_oracle(oracle, &admissible, opts.tol_match);
    let mut p = Propagator::new(design, &counted, tol, is_monte_carlo(oracle, &admissible), opts)?;
    p.seed(seed.x0, vec![0.0; design.j], seed.z0);

    if admissible.contains(&seed.z0) {
        let mut pending: BTreeSet<ZId> = BTreeSet::from([seed.z0]);
        while let Some(z) = pending.pop_first() {
            p.run_z(z)?;
            if p.budget_hit {
                break;
            }
            let here: Vec<XId> = p.reached.iter().filter(|(rz, _)| *rz == z).map(|(_, x)| *x).collect();
            for x in here {
                let gz = design.supports.get(x, z);
                for &other in admissible.iter().filter(|o| **o != z) {
                    if !p.is_reached(other, x) && gz.overlaps(design.supports.get(x, other)) {
                        p.reached.insert((other, x));
                        p.unchecked.insert((other, x));
                        pending.insert(other);
                    }
                }
            }
        }
    }

    let identified_z: Vec<ZId> = if admissible.contains(&seed.z0) {
        p.reached.iter().map(|(z, _)| *z).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        Vec::new()
    };
    let h_hat = p
        .known
        .iter()
        .map(|(x, node)| IdentifiedX {
            x: *x,
            h: node.h.clone(),
            provenance: node.chain.clone(),
            reached_z: p.reached.iter().filter(|(_, rx)| rx == x).map(|(z, _)| *z).collect(),
            alternates: node.alternates.clone(),
        })
        .collect();
    Ok(IdentResult {
        spec_version: SPEC_VERSION,
        design_fingerprint: design.fingerprint(),
        x0: seed.x0,
        z0: seed.z0,
        h_hat,
        identified_z,
        admissible_z: admissible.clone(),
        unidentified: p.unidentified(&design.x_ids, &admissible),
        lambda_samples: Vec::new(),
        oracle_queries: counted.used(),
        tolerances: tol,
    })
}
