use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{KernelError, Lambda};
use crate::numerics::{sup_dist, sup_norm};
use crate::topology::{AaBox, BoxUnion};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    /// Relative output separation at or below which a pair is a collision.
    pub collision_tol: f64,
    /// Minimum input distance `‖a₁ − a₂‖∞` of a tested pair.
    pub separation_floor: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { collision_tol: 1e-10, separation_floor: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub tested_pairs: usize,
    /// Smallest `‖Λ(a₁) − Λ(a₂)‖∞ / max(1, ‖Λ(a₁)‖∞)` seen; infinite when no
    /// pair was tested.
    #[serde(with = "infinite_as_null")]
    pub worst_separation: f64,
    pub collision: Option<Collision>,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn pick_box<'a, R: Rng>(domain: &'a BoxUnion, rng: &mut R) -> &'a AaBox {
    let total = domain.volume();
    let mut t = rng.random_range(0.0..total);
    for b in &domain.boxes {
        if t < b.volume() {
            return b;
        }
        t -= b.volume();
    }
    domain.boxes.last().expect("nonempty domain")
}

/// Looks for `a₁ ≠ a₂` in `domain` with (numerically) equal `Λ`.
///
/// Draws `samples` points as `⌊samples/2⌋` pairs. Even pairs are independent
/// uniform draws; odd pairs differ in a single coordinate (cycling through
/// the coordinates), which is where a kernel that ignores part of its index
/// collides. A second point closer than the separation floor is redrawn a
/// few times and the pair skipped if that keeps failing. A pass is evidence
/// of injectivity, not a proof.
pub fn injectivity_probe(
    kernel: &dyn Lambda,
    domain: &BoxUnion,
    samples: usize,
    seed: u64,
    opts: &ProbeOptions,
) -> Result<InjectivityReport, KernelError> {
    if domain.is_empty() {
        return Err(KernelError::Config("injectivity probe needs a nonempty domain".into()));
    }
    let j = kernel.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = InjectivityReport { tested_pairs: 0, worst_separation: f64::INFINITY, collision: None };
    for pair in 0..samples / 2 {
        let b = pick_box(domain, &mut rng);
        let a1 = b.sample(&mut rng);
        let mut a2 = None;
        for _ in 0..8 {
            let cand = if pair % 2 == 0 {
                pick_box(domain, &mut rng).sample(&mut rng)
            } else {
                let k = (pair / 2) % j;
                let mut v = a1.clone();
                v[k] = rng.random_range(b.lo[k]..b.hi[k]);
                v
            };
            if sup_dist(&a1, &cand) >= opts.separation_floor {
                a2 = Some(cand);
                break;
            }
        }
        let Some(a2) = a2 else { continue };
        let l1 = kernel.eval(&a1)?;
        let l2 = kernel.eval(&a2)?;
        let sep = sup_dist(&l1, &l2) / sup_norm(&l1).max(sup_norm(&l2)).max(1.0);
        report.tested_pairs += 1;
        if sep < report.worst_separation {
            report.worst_separation = sep;
            if sep <= opts.collision_tol {
                report.collision = Some(Collision { a1, a2, value: l1 });
            }
        }
    }
    Ok(report)
}
