//! Reproducible synthetic scenarios.
//!
//! Supports are laid out in index space first. Every control gets a tree of
//! boxes (each new box overlaps an earlier one), so `A(z)` is connected by
//! construction; `G(x,z) = A(x,z) − h(x)` is what the scenario stores.
//! Consecutive controls share a bridge x whose box is copied, which gives the
//! control overlap graph a spanning path. Disconnected modes move part of
//! the layout to a second "lane" separated from the first by a gap in
//! coordinate 0.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::*;
use crate::numerics::{dyadic_round, mix_keys};
use crate::topology::{a_support_z, is_connected, mz_overlap_graph, AaBox};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenMode {
    Connected,
    DisconnectedWithinZ,
    DisconnectedAcrossZ,
    Noninjective,
}

impl GenMode {
    pub const ALL: [GenMode; 4] = [
        GenMode::Connected,
        GenMode::DisconnectedWithinZ,
        GenMode::DisconnectedAcrossZ,
        GenMode::Noninjective,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GenMode::Connected => "connected",
            GenMode::DisconnectedWithinZ => "disconnected-within-z",
            GenMode::DisconnectedAcrossZ => "disconnected-across-z",
            GenMode::Noninjective => "noninjective",
        }
    }
}

impl FromStr for GenMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        GenMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown generator mode '{s}'"))
    }
}

/// Which family of `g` the generator uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GKind {
    Identity,
    NegativeLog,
    Affine,
}

impl FromStr for GKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "identity" => Ok(GKind::Identity),
            "negative-log" => Ok(GKind::NegativeLog),
            "affine" => Ok(GKind::Affine),
            _ => Err(format!("unknown g family '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    /// Ignored in noninjective mode, which always uses the test kernel.
    pub kernel: KernelKind,
    pub g: GKind,
    pub draws: u64,
    pub family: ErrorFamily,
    /// `h` is drawn from `[-h_range, h_range]^J`.
    pub h_range: f64,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            kernel: KernelKind::ArumGumbel,
            g: GKind::Identity,
            draws: 1_000_000,
            family: ErrorFamily::Gumbel,
            h_range: 1.0,
        }
    }
}

/// Minimum overlap of attached boxes is `2·CLEARANCE`; any two boxes of one
/// control either overlap by at least `CLEARANCE` in every coordinate or are
/// at least `CLEARANCE` apart in some coordinate.
const CLEARANCE: f64 = 0.05;
const EXTRA_BOX_PROB: f64 = 0.3;
const MEMBERSHIP_PROB: f64 = 0.5;
const MAX_ATTEMPTS: u64 = 100;

#[derive(Clone, Debug)]
struct Lane {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// The two index regions. Competing-risks layouts stay where every index
/// coordinate is at most −0.7, so the expected log failure time is bounded
/// away from zero.
fn lanes(kind: KernelKind, j: usize) -> (Lane, Lane) {
    let (base, second) = if kind.is_competing_risks() {
        ((-4.2, -0.7), (-8.2, -4.7))
    } else {
        ((-2.0, 2.0), (2.5, 5.5))
    };
    let lane0 = Lane { lo: vec![base.0; j], hi: vec![base.1; j] };
    let mut lane1 = lane0.clone();
    lane1.lo[0] = second.0;
    lane1.hi[0] = second.1;
    (lane0, lane1)
}

struct Placed {
    x: XId,
    lane: usize,
    b: AaBox,
}

fn compatible(a: &AaBox, b: &AaBox) -> bool {
    let overlaps: Vec<f64> = (0..a.dim()).map(|k| a.hi[k].min(b.hi[k]) - a.lo[k].max(b.lo[k])).collect();
    if overlaps.iter().all(|o| *o > 0.0) {
        overlaps.iter().all(|o| *o >= CLEARANCE)
    } else {
        overlaps.iter().any(|o| *o <= -CLEARANCE)
    }
}

fn widths<R: Rng>(rng: &mut R, j: usize) -> Vec<f64> {
    (0..j).map(|_| rng.random_range(0.7..1.3)).collect()
}

fn place_root<R: Rng>(rng: &mut R, lane: &Lane, placed: &[Placed]) -> Option<AaBox> {
    for _ in 0..50 {
        let w = widths(rng, lane.lo.len());
        let lo: Vec<f64> = (0..w.len()).map(|k| rng.random_range(lane.lo[k]..lane.hi[k] - w[k])).collect();
        let hi: Vec<f64> = lo.iter().zip(&w).map(|(l, w)| l + w).collect();
        let b = AaBox { lo, hi };
        if placed.iter().all(|p| compatible(&p.b, &b)) {
            return Some(b);
        }
    }
    None
}

fn place_attached<R: Rng>(rng: &mut R, lane_id: usize, lane: &Lane, placed: &[Placed]) -> Option<AaBox> {
    let anchors: Vec<&Placed> = placed.iter().filter(|p| p.lane == lane_id).collect();
    for _ in 0..50 {
        let anchor = &anchors.choose(rng)?.b;
        let w = widths(rng, lane.lo.len());
        let mut lo = Vec::with_capacity(w.len());
        for k in 0..w.len() {
            let min = (anchor.lo[k] - w[k] + 2.0 * CLEARANCE).max(lane.lo[k]);
            let max = (anchor.hi[k] - 2.0 * CLEARANCE).min(lane.hi[k] - w[k]);
            if min >= max {
                break;
            }
            lo.push(rng.random_range(min..max));
        }
        if lo.len() < w.len() {
            continue;
        }
        let hi: Vec<f64> = lo.iter().zip(&w).map(|(l, w)| l + w).collect();
        let b = AaBox { lo, hi };
        if placed.iter().all(|p| compatible(&p.b, &b)) {
            return Some(b);
        }
    }
    None
}

/// `gen_scenario_with` under default options (logit kernel, identity `g`).
pub fn gen_scenario(seed: u64, dims: Dimensions, mode: GenMode) -> Result<Scenario, ModelError> {
    gen_scenario_with(seed, dims, mode, &GenOptions::default())
}

pub fn gen_scenario_with(seed: u64, dims: Dimensions, mode: GenMode, opts: &GenOptions) -> Result<Scenario, ModelError> {
    dims.validate()?;
    match mode {
        GenMode::DisconnectedWithinZ if dims.nx < 2 => {
            return Err(ModelError::Generation("disconnected-within-z needs nX ≥ 2".into()))
        }
        GenMode::DisconnectedAcrossZ if dims.nx < 2 || dims.nz < 2 => {
            return Err(ModelError::Generation("disconnected-across-z needs nX ≥ 2 and nZ ≥ 2".into()))
        }
        _ => {}
    }
    if opts.kernel.is_monte_carlo() && opts.draws < 2 {
        return Err(ModelError::Generation("MC kernels need at least 2 draws".into()));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_keys(&[seed, attempt]));
        if let Some(s) = attempt_layout(&mut rng, seed, dims, mode, opts)? {
            if mode_holds(&s, mode)? {
                return Ok(s);
            }
        }
    }
    Err(ModelError::Generation(format!("no valid layout after {MAX_ATTEMPTS} attempts")))
}

fn attempt_layout(
    rng: &mut ChaCha8Rng,
    seed: u64,
    dims: Dimensions,
    mode: GenMode,
    opts: &GenOptions,
) -> Result<Option<Scenario>, ModelError> {
    let Dimensions { j, dx, nx, nz } = dims;
    let kind = if mode == GenMode::Noninjective { KernelKind::NoninjectiveTest } else { opts.kernel };
    let (lane0, lane1) = lanes(kind, j);
    let lane_of = [&lane0, &lane1];
    let x0 = XId(0);
    let z0 = ZId(0);
    let xs: Vec<XId> = (0..nx as u32).map(XId).collect();
    let zs: Vec<ZId> = (0..nz as u32).map(ZId).collect();

    let mut h = BTreeMap::new();
    for &x in &xs {
        let v = if x == x0 {
            vec![0.0; j]
        } else {
            (0..j).map(|_| dyadic_round(rng.random_range(-opts.h_range..opts.h_range))).collect()
        };
        h.insert(x, v);
    }

    let split = if mode == GenMode::DisconnectedAcrossZ { rng.random_range(1..nz) } else { nz };
    let group = |z: ZId| usize::from(z.0 as usize >= split);

    let islands: BTreeSet<XId> = if mode == GenMode::DisconnectedWithinZ {
        let count = ((nx - 1) / 3).max(1);
        xs[1..].choose_multiple(rng, count).copied().collect()
    } else {
        BTreeSet::new()
    };
    let mainland: Vec<XId> = xs.iter().copied().filter(|x| !islands.contains(x)).collect();

    let mut members: Vec<BTreeSet<XId>> = zs
        .iter()
        .map(|_| mainland.iter().copied().filter(|_| rng.random_bool(MEMBERSHIP_PROB)).collect())
        .collect();
    members[0].insert(x0);
    members[0].extend(islands.iter().copied());
    for &x in &mainland {
        if !members.iter().any(|m| m.contains(&x)) {
            members[rng.random_range(0..nz)].insert(x);
        }
    }
    for m in members.iter_mut() {
        if m.is_empty() {
            m.insert(*mainland.choose(rng).expect("x0 is on the mainland"));
        }
    }
    let mut bridge: Vec<Option<XId>> = vec![None; nz];
    for k in 1..nz {
        if group(zs[k]) != group(zs[k - 1]) {
            continue;
        }
        let candidates: Vec<XId> = members[k - 1].iter().copied().filter(|x| !islands.contains(x)).collect();
        let b = *candidates.choose(rng).expect("every control has a mainland x");
        members[k].insert(b);
        bridge[k] = Some(b);
    }

    let mut supports = Supports::new();
    let mut previous: Vec<Placed> = Vec::new();
    for (k, &z) in zs.iter().enumerate() {
        let main_lane = group(z);
        let mut placed: Vec<Placed> = Vec::new();
        let root_x = match bridge[k] {
            Some(b) => {
                let copy = previous.iter().find(|p| p.x == b).expect("bridge placed before").b.clone();
                placed.push(Placed { x: b, lane: main_lane, b: copy });
                b
            }
            None => {
                let x = if k == 0 { x0 } else { *members[k].iter().next().expect("nonempty") };
                let Some(b) = place_root(rng, lane_of[main_lane], &placed) else { return Ok(None) };
                placed.push(Placed { x, lane: main_lane, b });
                x
            }
        };
        let mut first_island = true;
        for &x in members[k].iter().filter(|x| **x != root_x) {
            let (lane_id, b) = if islands.contains(&x) {
                let b = if first_island {
                    first_island = false;
                    place_root(rng, lane_of[1], &placed)
                } else {
                    place_attached(rng, 1, lane_of[1], &placed)
                };
                (1, b)
            } else {
                (main_lane, place_attached(rng, main_lane, lane_of[main_lane], &placed))
            };
            let Some(b) = b else { return Ok(None) };
            placed.push(Placed { x, lane: lane_id, b });
        }
        for &x in &members[k] {
            if rng.random_bool(EXTRA_BOX_PROB) {
                let lane_id = if islands.contains(&x) { 1 } else { main_lane };
                let Some(b) = place_attached(rng, lane_id, lane_of[lane_id], &placed) else { return Ok(None) };
                placed.push(Placed { x, lane: lane_id, b });
            }
        }
        for &x in &members[k] {
            let hx = &h[&x];
            let boxes: Vec<AaBox> = placed
                .iter()
                .filter(|p| p.x == x)
                .map(|p| AaBox {
                    lo: p.b.lo.iter().zip(hx).map(|(a, hv)| a - hv).collect(),
                    hi: p.b.hi.iter().zip(hx).map(|(a, hv)| a - hv).collect(),
                })
                .collect();
            supports.insert(x, z, BoxUnion { boxes });
        }
        previous = placed;
    }

    let g = match opts.g {
        GKind::Identity => GSpec::Identity,
        GKind::NegativeLog => GSpec::NegativeLog,
        GKind::Affine => {
            let spread = 0.3 / j as f64;
            let matrix = (0..j)
                .map(|r| {
                    (0..j)
                        .map(|c| if r == c { 1.0 } else { dyadic_round(rng.random_range(-spread..spread)) })
                        .collect()
                })
                .collect();
            let offset = (0..j).map(|_| dyadic_round(rng.random_range(-0.5..0.5))).collect();
            GSpec::Affine { matrix, offset }
        }
    };

    let z_bad = if nz == 1 { z0 } else { zs[rng.random_range(1..nz)] };
    let per_z = zs
        .iter()
        .map(|&z| ZKernelParams {
            z,
            scale: rng.random_range(0.7..1.5),
            family: opts.family,
            dropped_coordinate: (kind == KernelKind::NoninjectiveTest && z == z_bad).then_some(0),
        })
        .collect();
    let lambda = LambdaKernelSpec {
        kind,
        draws: if kind.is_monte_carlo() { opts.draws } else { 0 },
        mc_seed: if kind.is_monte_carlo() { mix_keys(&[seed, 0x4d43]) } else { 0 },
        shift: vec![0.0; j],
        per_z,
    };

    let x_points = xs
        .iter()
        .map(|&id| XPoint { id, coords: (0..dx).map(|_| rng.random_range(0.0..1.0)).collect() })
        .collect();
    let u0 = supports.get(x0, z0).boxes[0].center();
    let w0 = g.invert(&u0)?;

    let scenario = Scenario {
        spec_version: SPEC_VERSION,
        seed,
        mode: Some(mode),
        dims,
        x_points,
        z_points: zs,
        g,
        h: HTable { x0, entries: h },
        lambda,
        supports,
        seed_triple: SeedTriple { z0, w0, x0 },
    };
    scenario.validate()?;
    Ok(Some(scenario))
}

/// Checks the topological promise of each mode on the finished scenario.
fn mode_holds(s: &Scenario, mode: GenMode) -> Result<bool, ModelError> {
    let components = |z: ZId| {
        let (a, _) = a_support_z(&s.supports, &s.h, z);
        is_connected(&a).components
    };
    let graph = mz_overlap_graph(&s.supports, &s.z_points);
    let z_components = graph.components().len();
    let everyone_placed = s.x_ids().iter().all(|x| !s.supports.z_of(*x).is_empty());
    let u0 = s.g.apply(&s.seed_triple.w0)?;
    let seed_ok = s.supports.get(s.seed_triple.x0, s.seed_triple.z0).contains_interior(&u0);
    let shape = match mode {
        GenMode::Connected | GenMode::Noninjective => {
            s.z_points.iter().all(|z| components(*z) == 1) && z_components == 1
        }
        GenMode::DisconnectedWithinZ => {
            components(s.seed_triple.z0) >= 2
                && s.z_points.iter().skip(1).all(|z| components(*z) == 1)
                && z_components == 1
        }
        GenMode::DisconnectedAcrossZ => s.z_points.iter().all(|z| components(*z) == 1) && z_components >= 2,
    };
    Ok(shape && everyone_placed && seed_ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_reproducible() {
        let d = Dimensions::new(2, 2, 6, 3);
        for mode in GenMode::ALL {
            let a = io::to_string(&gen_scenario(17, d, mode).unwrap()).unwrap();
            let b = io::to_string(&gen_scenario(17, d, mode).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn infeasible_dimensions_are_rejected() {
        assert!(matches!(
            gen_scenario(1, Dimensions::new(2, 1, 1, 2), GenMode::DisconnectedWithinZ),
            Err(ModelError::Generation(_))
        ));
        assert!(matches!(
            gen_scenario(1, Dimensions::new(2, 1, 4, 1), GenMode::DisconnectedAcrossZ),
            Err(ModelError::Generation(_))
        ));
    }

    #[test]
    fn noninjective_mode_uses_the_test_kernel() {
        let s = gen_scenario(3, Dimensions::new(2, 1, 4, 2), GenMode::Noninjective).unwrap();
        assert_eq!(s.lambda.kind, KernelKind::NoninjectiveTest);
        assert_eq!(s.lambda.per_z.iter().filter(|p| p.dropped_coordinate.is_some()).count(), 1);
    }

    #[test]
    fn seed_point_maps_into_its_support() {
        for g in [GKind::Identity, GKind::NegativeLog, GKind::Affine] {
            let opts = GenOptions { g, ..GenOptions::default() };
            let s = gen_scenario_with(5, Dimensions::new(3, 1, 5, 2), GenMode::Connected, &opts).unwrap();
            let u = s.g.apply(&s.seed_triple.w0).unwrap();
            assert!(s.supports.get(s.h.x0, s.seed_triple.z0).contains_interior(&u));
        }
    }

    #[test]
    fn competing_risks_layout_stays_below_threshold() {
        let opts = GenOptions { kernel: KernelKind::CompetingRisksGumbel, ..GenOptions::default() };
        let s = gen_scenario_with(8, Dimensions::new(2, 1, 6, 3), GenMode::DisconnectedWithinZ, &opts).unwrap();
        for z in &s.z_points {
            let (a, _) = a_support_z(&s.supports, &s.h, *z);
            assert!(a.boxes.iter().all(|b| b.hi.iter().all(|v| *v <= -0.7 + 1e-12)));
        }
    }

    #[test]
    fn h_values_are_dyadic() {
        let s = gen_scenario(2, Dimensions::new(2, 1, 5, 1), GenMode::Connected).unwrap();
        for h in s.h.entries.values() {
            assert!(h.iter().all(|v| dyadic_round(*v) == *v));
        }
    }
}
