use nalgebra::{DMatrix, DVector};

use super::{implied_h, Counted, EngineError, EngineOptions, MatchCertificate, Tolerances};
use crate::model::{Design, GSpec, XId, ZId};
use crate::numerics::{halton, sup_dist};
use crate::oracle::{OracleError, PiOracle};
use crate::topology::{AaBox, BoxUnion};

/// Relative margin keeping Newton iterates off the box faces.
const FACE_MARGIN: f64 = 1e-9;
/// Finite-difference step for Monte Carlo answers, which are step functions
/// of the index and need a step far above their jump size.
const MC_FD_STEP: f64 = 0.02;
const LINE_SEARCH_HALVINGS: usize = 10;

pub(crate) enum Newton {
    Solved { w: Vec<f64>, residual: f64, sensitivity: f64 },
    /// The linearized solution left the box and the iterate stalled on it.
    Pinned { estimate: Vec<f64> },
    Failed,
}

pub(crate) enum PairOutcome {
    Matched(MatchCertificate),
    NoOverlap,
    SolverExhausted,
}

pub(crate) struct Solver<'a> {
    pub oracle: &'a Counted<'a>,
    pub g: &'a GSpec,
    pub tol: Tolerances,
    pub monte_carlo: bool,
    pub opts: &'a EngineOptions,
}

impl Solver<'_> {
    fn eval(&self, u: &[f64], x: XId, z: ZId) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
        let w = self.g.invert(u)?;
        let p = self.oracle.query(&w, x, z)?;
        Ok((w, p))
    }

    fn fd_step(&self, u: f64) -> f64 {
        if self.monte_carlo {
            MC_FD_STEP
        } else {
            1.5e-8 * u.abs().max(1.0)
        }
    }

    /// Forward-difference Jacobian of `u ↦ Π(g⁻¹(u),x,z)`, stepping
    /// backwards where the box face is closer than the step.
    fn jacobian(&self, u: &[f64], p: &[f64], x: XId, z: ZId, b: &AaBox) -> Result<DMatrix<f64>, OracleError> {
        let j = u.len();
        let mut jac = DMatrix::zeros(p.len(), j);
        for k in 0..j {
            let mut step = self.fd_step(u[k]);
            if u[k] + step > b.hi[k] {
                step = -step;
            }
            let mut v = u.to_vec();
            v[k] += step;
            let (_, pk) = self.eval(&v, x, z)?;
            let actual = v[k] - u[k];
            for r in 0..p.len() {
                jac[(r, k)] = (pk[r] - p[r]) / actual;
            }
        }
        Ok(jac)
    }

    /// Damped Newton on `Π(g⁻¹(u),x,z) = target` over the closed box `b`.
    pub(crate) fn newton(&self, x: XId, z: ZId, target: &[f64], b: &AaBox, start: &[f64]) -> Result<Newton, OracleError> {
        let inner = b.shrink(FACE_MARGIN);
        let mut u = inner.clip(start);
        let (mut w, mut p) = self.eval(&u, x, z)?;
        let mut r = sup_dist(&p, target);
        let mut inverse_norm = f64::INFINITY;
        let mut escaped: Option<Vec<f64>> = None;

        for _ in 0..self.opts.newton_iters {
            if r == 0.0 && inverse_norm.is_finite() {
                break;
            }
            let jac = self.jacobian(&u, &p, x, z, &inner)?;
            let Some(inv) = jac.clone().try_inverse() else { break };
            inverse_norm = inv.row_iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
            if r == 0.0 {
                break;
            }
            let f = DVector::from_iterator(p.len(), p.iter().zip(target).map(|(a, t)| a - t));
            let d = -(&inv * f);
            let full: Vec<f64> = u.iter().zip(d.iter()).map(|(a, b)| a + b).collect();
            escaped = (!inner.contains_closed(&full, 0.0)).then(|| full.clone());

            let halvings = if r <= self.tol.tol_match { 1 } else { LINE_SEARCH_HALVINGS };
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..halvings {
                let cand = inner.clip(&u.iter().zip(d.iter()).map(|(a, b)| a + t * b).collect::<Vec<_>>());
                let (cw, cp) = self.eval(&cand, x, z)?;
                let cr = sup_dist(&cp, target);
                if cr < r {
                    u = cand;
                    w = cw;
                    p = cp;
                    r = cr;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if r <= self.tol.tol_match {
            if !inverse_norm.is_finite() {
                let jac = self.jacobian(&u, &p, x, z, &inner)?;
                inverse_norm = jac
                    .try_inverse()
                    .map(|inv| inv.row_iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max))
                    .unwrap_or(f64::INFINITY);
            }
            return Ok(Newton::Solved { w, residual: r, sensitivity: inverse_norm });
        }
        Ok(match escaped {
            Some(estimate) => Newton::Pinned { estimate },
            None => Newton::Failed,
        })
    }

    /// Newton from a deterministic set of starts in `b`: the `{1/6, 1/2, 5/6}`
    /// lattice (centre first), or low-discrepancy points when refining.
    /// Stops at the first start that solves or gets pinned.
    pub(crate) fn solve_in_box(&self, x: XId, z: ZId, target: &[f64], b: &AaBox, refine: bool) -> Result<Newton, OracleError> {
        let starts = if refine {
            let inner = b.shrink(0.05);
            (0..self.opts.refine_starts as u64).map(|i| inner.lerp(&halton(i, b.dim()))).collect()
        } else {
            lattice_starts(b)
        };
        for s in starts {
            match self.newton(x, z, target, b, &s)? {
                Newton::Failed => continue,
                other => return Ok(other),
            }
        }
        Ok(Newton::Failed)
    }

    fn solve_with_refinement(&self, x: XId, z: ZId, target: &[f64], b: &AaBox) -> Result<Newton, OracleError> {
        match self.solve_in_box(x, z, target, b, false)? {
            Newton::Failed => self.solve_in_box(x, z, target, b, true),
            other => Ok(other),
        }
    }

    fn certificate(
        &self,
        z: ZId,
        source: (XId, &[f64], &[f64]),
        target_x: XId,
        solved: (Vec<f64>, f64, f64),
    ) -> Result<MatchCertificate, OracleError> {
        let (source_x, source_w, source_h) = source;
        let (target_w, residual, sensitivity) = solved;
        let gs = self.g.apply(source_w)?;
        let gt = self.g.apply(&target_w)?;
        Ok(MatchCertificate {
            source_x,
            source_w: source_w.to_vec(),
            source_h: source_h.to_vec(),
            target_x,
            target_w,
            z,
            residual,
            implied_h: implied_h(source_h, &gs, &gt),
            sensitivity,
        })
    }

    /// Searches every (source box, target box) pair for a solution of the
    /// matching equation, relocating the source point between rounds.
    ///
    /// A solution with target `u` satisfies `u = u* + h(x*) − h(x)`, one
    /// common shift `s` for every source point. A pinned Newton estimate
    /// gives an estimate of `s`; the next source point is the centre of
    /// `B* ∩ (B − s)`, or the point of `B*` closest to `B − s` when that is
    /// empty. A source point that stops moving without the target boxes
    /// meeting is the no-overlap verdict.
    pub(crate) fn match_pair(
        &self,
        z: ZId,
        source_x: XId,
        source_h: &[f64],
        source: &BoxUnion,
        target_x: XId,
        target: &BoxUnion,
    ) -> Result<PairOutcome, OracleError> {
        let mut shift: Option<Vec<f64>> = None;
        let mut exhausted = false;
        for bs in &source.boxes {
            for bt in &target.boxes {
                let mut u_star = match &shift {
                    Some(s) => propose(bs, bt, s).0,
                    None => bs.center(),
                };
                let mut meets = true;
                let mut verdict = None;
                for _ in 0..self.opts.max_rounds {
                    let (w_star, p_star) = self.eval(&u_star, source_x, z)?;
                    match self.solve_with_refinement(target_x, z, &p_star, bt)? {
                        Newton::Solved { w, residual, sensitivity } => {
                            let cert = self.certificate(z, (source_x, &w_star, source_h), target_x, (w, residual, sensitivity))?;
                            return Ok(PairOutcome::Matched(cert));
                        }
                        Newton::Pinned { estimate } => {
                            let s: Vec<f64> = estimate.iter().zip(&u_star).map(|(e, u)| e - u).collect();
                            let (next, inside) = propose(bs, bt, &s);
                            shift = Some(s);
                            let still = sup_dist(&next, &u_star) <= 1e-12 * (1.0 + crate::numerics::sup_norm(&u_star));
                            meets = inside;
                            if still {
                                verdict = Some(!inside);
                                break;
                            }
                            u_star = next;
                        }
                        Newton::Failed => {
                            verdict = Some(false);
                            break;
                        }
                    }
                }
                match verdict {
                    Some(true) => {}
                    Some(false) => exhausted = true,
                    None if !meets => {}
                    None => exhausted = true,
                }
            }
        }
        Ok(if exhausted { PairOutcome::SolverExhausted } else { PairOutcome::NoOverlap })
    }
}

fn lattice_starts(b: &AaBox) -> Vec<Vec<f64>> {
    let j = b.dim();
    const LEVELS: [f64; 3] = [0.5, 1.0 / 6.0, 5.0 / 6.0];
    let mut codes: Vec<Vec<usize>> = if j <= 4 {
        (0..3usize.pow(j as u32))
            .map(|mut n| {
                (0..j)
                    .map(|_| {
                        let d = n % 3;
                        n /= 3;
                        d
                    })
                    .collect()
            })
            .collect()
    } else {
        let mut c = vec![vec![0; j]];
        for k in 0..j {
            for level in 1..3 {
                let mut v = vec![0; j];
                v[k] = level;
                c.push(v);
            }
        }
        c
    };
    codes.sort_by_key(|c| (c.iter().filter(|d| **d != 0).count(), c.clone()));
    codes
        .into_iter()
        .map(|c| b.lerp(&c.iter().map(|d| LEVELS[*d]).collect::<Vec<_>>()))
        .collect()
}

/// Next source point for shift estimate `s`, and whether `B* ∩ (B − s)` is
/// nonempty.
fn propose(source: &AaBox, target: &AaBox, s: &[f64]) -> (Vec<f64>, bool) {
    let neg: Vec<f64> = s.iter().map(|v| -v).collect();
    let moved = target.translate(&neg);
    if let Some(i) = source.interior_intersection(&moved) {
        return (i.center(), true);
    }
    let p: Vec<f64> = (0..source.dim())
        .map(|k| {
            let lo = source.lo[k].max(moved.lo[k]);
            let hi = source.hi[k].min(moved.hi[k]);
            if lo < hi {
                0.5 * (lo + hi)
            } else if moved.hi[k] <= source.lo[k] {
                source.lo[k]
            } else {
                source.hi[k]
            }
        })
        .collect();
    (source.shrink(1e-6).clip(&p), false)
}

/// Solves `Π(w*,x*,z) = Π(w,x,z)` for `w` with `g(w) ∈ G(x,z)` from a fixed
/// source point, by multistart Newton over each target box. `None` means no
/// solution was found, which is not a proof that none exists.
#[allow(clippy::too_many_arguments)]
pub fn match_solve(
    oracle: &dyn PiOracle,
    design: &Design,
    z: ZId,
    source_x: XId,
    source_w: &[f64],
    source_h: &[f64],
    target_x: XId,
    opts: &EngineOptions,
) -> Result<Option<MatchCertificate>, EngineError> {
    opts.validate()?;
    let counted = Counted::new(oracle, opts.budget);
    let tol = Tolerances::for_oracle(oracle, &[z], opts.tol_match);
    let solver = Solver { oracle: &counted, g: &design.g, tol, monte_carlo: oracle.stderr_bound(z) > 0.0, opts };
    let p_star = counted.query(source_w, source_x, z)?;
    for b in &design.supports.get(target_x, z).boxes {
        if let Newton::Solved { w, residual, sensitivity } = solver.solve_with_refinement(target_x, z, &p_star, b)? {
            return Ok(Some(solver.certificate(z, (source_x, source_w, source_h), target_x, (w, residual, sensitivity))?));
        }
    }
    Ok(None)
}
