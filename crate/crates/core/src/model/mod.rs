//! Domain types for the index model `Π(w,x,z) = Λ(g(w) + h(x), z)`.
//!
//! A [`Scenario`] is the full ground truth: dimensions, the known map `g`,
//! the hidden table `h`, the hidden kernel `Λ`, the supports `G(x,z)` in
//! `g`-space and the normalization triple. [`Design`] is the part an
//! econometrician is allowed to see (everything except `h` and `Λ`).

mod generate;
mod index;
pub mod io;

pub use generate::{gen_scenario, gen_scenario_with, GKind, GenMode, GenOptions};
pub use index::{eval_index, eval_pi, eval_pi_with};

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::topology::{BoxUnion, TopologyError};

pub const SPEC_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct XId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ZId(pub u32);

impl fmt::Display for XId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

impl fmt::Display for ZId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "z{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown identifier {0}")]
    UnknownX(XId),
    #[error("unknown identifier {0}")]
    UnknownZ(ZId),
    #[error("w = {w:?} is outside the domain of g: {reason}")]
    Domain { w: Vec<f64>, reason: String },
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("invalid g specification: {0}")]
    GSpec(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Kernel(#[from] crate::kernels::KernelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// Inside alternatives / competing risks.
    pub j: usize,
    pub dx: usize,
    pub nx: usize,
    pub nz: usize,
}

impl Dimensions {
    pub fn new(j: usize, dx: usize, nx: usize, nz: usize) -> Self {
        Dimensions { j, dx, nx, nz }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.j == 0 || self.nx == 0 || self.nz == 0 {
            return Err(ModelError::Dimensions(format!(
                "J, nX and nZ must be at least 1 (got J={}, nX={}, nZ={})",
                self.j, self.nx, self.nz
            )));
        }
        if self.j > 12 {
            return Err(ModelError::Dimensions(format!("J={} exceeds the supported maximum of 12", self.j)));
        }
        Ok(())
    }
}

/// The known map `g : R^{dW} → R^J`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GSpec {
    Identity,
    /// `g_j(w) = −ln w_j`.
    NegativeLog,
    /// `g(w) = A w + b` with `A` of full row rank `J`.
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
}

impl GSpec {
    pub fn input_dim(&self, j: usize) -> usize {
        match self {
            GSpec::Identity | GSpec::NegativeLog => j,
            GSpec::Affine { matrix, .. } => matrix.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self, j: usize) -> Result<(), ModelError> {
        if let GSpec::Affine { matrix, offset } = self {
            if matrix.len() != j || offset.len() != j {
                return Err(ModelError::GSpec(format!(
                    "affine g needs {j} rows and a length-{j} offset"
                )));
            }
            let cols = matrix[0].len();
            if cols < j || matrix.iter().any(|r| r.len() != cols) {
                return Err(ModelError::GSpec("affine rows must have equal length ≥ J".into()));
            }
            let a = self.affine_matrix().expect("affine");
            let gram = &a * a.transpose();
            let sv = gram.clone().svd(false, false).singular_values;
            let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
            let max = sv.iter().copied().fold(0.0, f64::max);
            if !(min > 1e-12 * max.max(1.0)) {
                return Err(ModelError::GSpec("affine matrix is not of full row rank".into()));
            }
        }
        Ok(())
    }

    fn affine_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            GSpec::Affine { matrix, .. } => {
                let rows = matrix.len();
                let cols = matrix[0].len();
                Some(DMatrix::from_fn(rows, cols, |r, c| matrix[r][c]))
            }
            _ => None,
        }
    }

    pub fn apply(&self, w: &[f64]) -> Result<Vec<f64>, ModelError> {
        match self {
            GSpec::Identity => Ok(w.to_vec()),
            GSpec::NegativeLog => {
                if let Some(bad) = w.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                    return Err(ModelError::Domain {
                        w: w.to_vec(),
                        reason: format!("negative-log g needs positive components, found {bad}"),
                    });
                }
                Ok(w.iter().map(|v| -v.ln()).collect())
            }
            GSpec::Affine { matrix, offset } => {
                if matrix[0].len() != w.len() {
                    return Err(ModelError::Domain {
                        w: w.to_vec(),
                        reason: format!("affine g expects {} inputs", matrix[0].len()),
                    });
                }
                Ok(matrix
                    .iter()
                    .zip(offset)
                    .map(|(row, b)| row.iter().zip(w).map(|(r, x)| r * x).sum::<f64>() + b)
                    .collect())
            }
        }
    }

    /// A preimage of `u` (the minimum-norm one for affine maps).
    pub fn invert(&self, u: &[f64]) -> Result<Vec<f64>, ModelError> {
        match self {
            GSpec::Identity => Ok(u.to_vec()),
            GSpec::NegativeLog => Ok(u.iter().map(|v| (-v).exp()).collect()),
            GSpec::Affine { offset, .. } => {
                let a = self.affine_matrix().expect("affine");
                let rhs = DVector::from_iterator(u.len(), u.iter().zip(offset).map(|(x, b)| x - b));
                let gram = &a * a.transpose();
                let y = gram
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| ModelError::GSpec("affine matrix is singular".into()))?;
                Ok((a.transpose() * y).iter().copied().collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XPoint {
    pub id: XId,
    pub coords: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct HEntry {
    x: XId,
    h: Vec<f64>,
}

/// The hidden index component `h`, as a finite table normalized at `x0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HTable {
    pub x0: XId,
    #[serde(with = "h_entries")]
    pub entries: BTreeMap<XId, Vec<f64>>,
}

mod h_entries {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<XId, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<HEntry> = map.iter().map(|(x, h)| HEntry { x: *x, h: h.clone() }).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<XId, Vec<f64>>, D::Error> {
        let v = Vec::<HEntry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| (e.x, e.h)).collect())
    }
}

impl HTable {
    pub fn get(&self, x: XId) -> Result<&[f64], ModelError> {
        self.entries.get(&x).map(Vec::as_slice).ok_or(ModelError::UnknownX(x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    ArumGumbel,
    ArumMc,
    PerturbedEntropy,
    PerturbedCustom,
    CompetingRisksGumbel,
    CompetingRisksMc,
    NoninjectiveTest,
}

impl KernelKind {
    pub fn is_monte_carlo(self) -> bool {
        matches!(self, KernelKind::ArumMc | KernelKind::CompetingRisksMc)
    }

    pub fn is_competing_risks(self) -> bool {
        matches!(self, KernelKind::CompetingRisksGumbel | KernelKind::CompetingRisksMc)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::ArumGumbel => "arum-gumbel",
            KernelKind::ArumMc => "arum-mc",
            KernelKind::PerturbedEntropy => "perturbed-entropy",
            KernelKind::PerturbedCustom => "perturbed-custom",
            KernelKind::CompetingRisksGumbel => "competing-risks-gumbel",
            KernelKind::CompetingRisksMc => "competing-risks-mc",
            KernelKind::NoninjectiveTest => "noninjective-test",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            KernelKind::ArumGumbel,
            KernelKind::ArumMc,
            KernelKind::PerturbedEntropy,
            KernelKind::PerturbedCustom,
            KernelKind::CompetingRisksGumbel,
            KernelKind::CompetingRisksMc,
            KernelKind::NoninjectiveTest,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown kernel kind '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorFamily {
    Gumbel,
    Gaussian,
    /// Degenerate errors, identically zero.
    PointMass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZKernelParams {
    pub z: ZId,
    /// Error scale for ARUM / competing risks, or the perturbation scale `c(z)`.
    pub scale: f64,
    pub family: ErrorFamily,
    /// For the noninjective test kernel: index coordinate the kernel ignores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped_coordinate: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaKernelSpec {
    pub kind: KernelKind,
    /// Monte Carlo draw count (MC kinds only).
    #[serde(default)]
    pub draws: u64,
    /// Seed of the per-control error streams of MC kinds.
    #[serde(default)]
    pub mc_seed: u64,
    /// Index shift `c`: the kernel evaluates `Λ_base(a + c, z)`.
    pub shift: Vec<f64>,
    pub per_z: Vec<ZKernelParams>,
}

impl LambdaKernelSpec {
    pub fn params(&self, z: ZId) -> Result<&ZKernelParams, ModelError> {
        self.per_z.iter().find(|p| p.z == z).ok_or(ModelError::UnknownZ(z))
    }

    pub fn validate(&self, j: usize, z_ids: &[ZId]) -> Result<(), ModelError> {
        if self.shift.len() != j {
            return Err(ModelError::Invalid(format!("kernel shift must have length {j}")));
        }
        for z in z_ids {
            let p = self.params(*z)?;
            if !(p.scale > 0.0 && p.scale.is_finite()) {
                return Err(ModelError::Invalid(format!("kernel scale at {z} must be positive")));
            }
            if let Some(k) = p.dropped_coordinate {
                if k >= j {
                    return Err(ModelError::Invalid(format!("dropped coordinate {k} out of range")));
                }
            }
        }
        if self.kind.is_monte_carlo() && self.draws < 1 {
            return Err(ModelError::Invalid("MC kernels need at least one draw".into()));
        }
        Ok(())
    }
}

/// Serialized form of one `G(x,z)` entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub x: XId,
    pub z: ZId,
    pub boxes: BoxUnion,
}

/// `G(x,z)` for every (x,z) pair; missing pairs are empty supports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<SupportEntry>", from = "Vec<SupportEntry>")]
pub struct Supports {
    map: BTreeMap<(XId, ZId), BoxUnion>,
}

impl From<Supports> for Vec<SupportEntry> {
    fn from(s: Supports) -> Self {
        s.map
            .into_iter()
            .map(|((x, z), boxes)| SupportEntry { x, z, boxes })
            .collect()
    }
}

impl From<Vec<SupportEntry>> for Supports {
    fn from(v: Vec<SupportEntry>) -> Self {
        Supports { map: v.into_iter().map(|e| ((e.x, e.z), e.boxes)).collect() }
    }
}

static EMPTY_UNION: BoxUnion = BoxUnion { boxes: Vec::new() };

impl Supports {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, x: XId, z: ZId, u: BoxUnion) {
        if u.is_empty() {
            self.map.remove(&(x, z));
        } else {
            self.map.insert((x, z), u);
        }
    }

    pub fn get(&self, x: XId, z: ZId) -> &BoxUnion {
        self.map.get(&(x, z)).unwrap_or(&EMPTY_UNION)
    }

    pub fn get_mut(&mut self, x: XId, z: ZId) -> Option<&mut BoxUnion> {
        self.map.get_mut(&(x, z))
    }

    /// `X(z)`: x-identifiers with nonempty `G(x,z)`, ascending.
    pub fn x_in(&self, z: ZId) -> Vec<XId> {
        self.map.keys().filter(|(_, zz)| *zz == z).map(|(x, _)| *x).collect()
    }

    /// Controls at which x has nonempty support, ascending.
    pub fn z_of(&self, x: XId) -> Vec<ZId> {
        self.map.keys().filter(|(xx, _)| *xx == x).map(|(_, z)| *z).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (XId, ZId, &BoxUnion)> {
        self.map.iter().map(|((x, z), u)| (*x, *z, u))
    }
}

/// `(z₀, w₀, x₀)` with `h(x₀) = 0` and `g(w₀) ∈ G(x₀,z₀)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedTriple {
    pub z0: ZId,
    pub w0: Vec<f64>,
    pub x0: XId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub spec_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<GenMode>,
    pub dims: Dimensions,
    pub x_points: Vec<XPoint>,
    pub z_points: Vec<ZId>,
    pub g: GSpec,
    pub h: HTable,
    pub lambda: LambdaKernelSpec,
    pub supports: Supports,
    pub seed_triple: SeedTriple,
}

impl Scenario {
    pub fn x_ids(&self) -> Vec<XId> {
        self.x_points.iter().map(|p| p.id).collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.spec_version != SPEC_VERSION {
            return Err(ModelError::Invalid(format!(
                "spec_version {} is not supported (expected {SPEC_VERSION})",
                self.spec_version
            )));
        }
        self.dims.validate()?;
        let j = self.dims.j;
        self.g.validate(j)?;
        if self.x_points.len() != self.dims.nx || self.z_points.len() != self.dims.nz {
            return Err(ModelError::Invalid("x/z point counts disagree with dims".into()));
        }
        for p in &self.x_points {
            if p.coords.len() != self.dims.dx {
                return Err(ModelError::Invalid(format!("{} has wrong dimension", p.id)));
            }
            let h = self.h.get(p.id)?;
            if h.len() != j {
                return Err(ModelError::Invalid(format!("h({}) must have length {j}", p.id)));
            }
        }
        if self.h.entries.len() != self.x_points.len() {
            return Err(ModelError::Invalid("h table has entries for unknown x".into()));
        }
        self.lambda.validate(j, &self.z_points)?;
        let xs = self.x_ids();
        for (x, z, u) in self.supports.iter() {
            if !xs.contains(&x) {
                return Err(ModelError::UnknownX(x));
            }
            if !self.z_points.contains(&z) {
                return Err(ModelError::UnknownZ(z));
            }
            u.validate()?;
            if u.dim() != Some(j) {
                return Err(ModelError::Invalid(format!("G({x},{z}) must live in R^{j}")));
            }
        }
        let s = &self.seed_triple;
        if s.x0 != self.h.x0 {
            return Err(ModelError::Invalid("seed x0 differs from the h normalization point".into()));
        }
        if !self.z_points.contains(&s.z0) {
            return Err(ModelError::UnknownZ(s.z0));
        }
        Ok(())
    }

    pub fn design(&self) -> Design {
        Design {
            j: self.dims.j,
            x_ids: self.x_ids(),
            z_ids: self.z_points.clone(),
            g: self.g.clone(),
            supports: self.supports.clone(),
            seed: self.seed_triple.clone(),
        }
    }

    /// The same observable model with `h' = h − c` and `Λ'(a) = Λ(a + c)`.
    pub fn shifted(&self, c: &[f64]) -> Scenario {
        let mut s = self.clone();
        for h in s.h.entries.values_mut() {
            for (v, ck) in h.iter_mut().zip(c) {
                *v -= ck;
            }
        }
        for (v, ck) in s.lambda.shift.iter_mut().zip(c) {
            *v += ck;
        }
        s
    }
}

/// What an econometrician observes besides Π: the known `g`, the supports
/// and the normalization triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub j: usize,
    pub x_ids: Vec<XId>,
    pub z_ids: Vec<ZId>,
    pub g: GSpec,
    pub supports: Supports,
    pub seed: SeedTriple,
}

impl Design {
    /// SHA-256 of the canonical serialized design.
    pub fn fingerprint(&self) -> String {
        let text = io::to_canonical_string(self).expect("design serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_log_rejects_nonpositive() {
        let g = GSpec::NegativeLog;
        assert!(matches!(g.apply(&[1.0, 0.0]), Err(ModelError::Domain { .. })));
        assert!(g.apply(&[1.0, -2.0]).is_err());
    }

    #[test]
    fn affine_inverse_is_a_right_inverse() {
        let g = GSpec::Affine {
            matrix: vec![vec![1.0, 0.5, -0.25], vec![0.0, 2.0, 1.0]],
            offset: vec![0.1, -0.3],
        };
        g.validate(2).unwrap();
        let u = [0.7, -1.1];
        let w = g.invert(&u).unwrap();
        let back = g.apply(&w).unwrap();
        assert!((back[0] - u[0]).abs() < 1e-12 && (back[1] - u[1]).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_affine_is_rejected() {
        let g = GSpec::Affine { matrix: vec![vec![1.0, 2.0], vec![2.0, 4.0]], offset: vec![0.0, 0.0] };
        assert!(g.validate(2).is_err());
    }

    #[test]
    fn dimensions_reject_zero_counts() {
        assert!(Dimensions::new(0, 1, 2, 2).validate().is_err());
        assert!(Dimensions::new(2, 1, 0, 2).validate().is_err());
        assert!(Dimensions::new(2, 1, 2, 0).validate().is_err());
        assert!(Dimensions::new(2, 1, 2, 2).validate().is_ok());
    }
}
