use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Counted, EngineError, IdentResult, LambdaSample};
use crate::model::{Design, XId, ZId};
use crate::oracle::PiOracle;

/// Some identified x whose shifted support contains `a` in its interior.
fn cover(design: &Design, result: &IdentResult, a: &[f64], z: ZId) -> Option<(XId, Vec<f64>)> {
    if !result.identified_z.contains(&z) {
        return None;
    }
    result.h_hat.iter().filter(|e| e.reached_z.contains(&z)).find_map(|e| {
        let u: Vec<f64> = a.iter().zip(&e.h).map(|(a, h)| a - h).collect();
        design.supports.get(e.x, z).contains_interior(&u).then_some((e.x, u))
    })
}

/// `Λ(a,z) = Π(g⁻¹(a − ĥ(x)), x, z)` for an identified x covering `a`.
/// Every query is checked for coverage before the oracle is asked anything.
pub fn recover_lambda(
    oracle: &dyn PiOracle,
    design: &Design,
    result: &IdentResult,
    queries: &[(Vec<f64>, ZId)],
) -> Result<Vec<LambdaSample>, EngineError> {
    let mut plan = Vec::with_capacity(queries.len());
    for (a, z) in queries {
        let (x, u) = cover(design, result, a, *z).ok_or_else(|| EngineError::Coverage { a: a.clone(), z: *z })?;
        plan.push((x, design.g.invert(&u)?));
    }
    let counted = Counted::new(oracle, None);
    queries
        .iter()
        .zip(plan)
        .map(|((a, z), (x, w))| {
            let value = counted.query(&w, x, *z)?;
            Ok(LambdaSample { a: a.clone(), z: *z, value, via_x: x, w })
        })
        .collect()
}

/// `count` indices drawn from the identified supports `Â(z)`, cycling over
/// the identified controls. Points stay 5% away from every box face.
pub fn sample_lambda_queries(design: &Design, result: &IdentResult, count: usize, seed: u64) -> Vec<(Vec<f64>, ZId)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_z = Vec::new();
    for &z in &result.identified_z {
        let owners: Vec<_> = result
            .h_hat
            .iter()
            .filter(|e| e.reached_z.contains(&z) && !design.supports.get(e.x, z).is_empty())
            .collect();
        if !owners.is_empty() {
            per_z.push((z, owners));
        }
    }
    if per_z.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|i| {
            let (z, owners) = &per_z[i % per_z.len()];
            let e = owners[rng.random_range(0..owners.len())];
            let boxes = &design.supports.get(e.x, *z).boxes;
            let b = boxes[rng.random_range(0..boxes.len())].shrink(0.05);
            let u = b.sample(&mut rng);
            (u.iter().zip(&e.h).map(|(u, h)| u + h).collect(), *z)
        })
        .collect()
}
