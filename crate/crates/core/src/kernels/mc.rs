use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gumbel, StandardNormal};
use rayon::prelude::*;

use super::{arum_lambda_gumbel, check_index, KernelError, Lambda};
use crate::model::ErrorFamily;
use crate::numerics::{log_sum_exp, EULER_GAMMA};

/// Rows per parallel chunk. Chunk partial sums are combined in chunk order,
/// so estimates do not depend on the thread count.
const CHUNK_ROWS: usize = 4096;

/// Identifies one reproducible error stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct McStream {
    pub seed: u64,
    pub stream: u64,
}

impl McStream {
    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurplusEstimate {
    pub value: f64,
    pub stderr: f64,
    pub draws: u64,
}

/// Per-coordinate Monte Carlo means with their standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct CcpEstimate {
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub draws: u64,
}

impl CcpEstimate {
    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().copied().fold(0.0, f64::max)
    }
}

/// A fixed table of `draws × width` i.i.d. errors, generated on first use.
pub struct ErrorDraws {
    family: ErrorFamily,
    width: usize,
    draws: usize,
    stream: McStream,
    cache: OnceLock<Vec<f64>>,
}

impl ErrorDraws {
    pub fn new(family: ErrorFamily, width: usize, draws: u64, stream: McStream) -> Self {
        ErrorDraws { family, width, draws: draws as usize, stream, cache: OnceLock::new() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.draws
    }

    pub fn is_empty(&self) -> bool {
        self.draws == 0
    }

    /// Row-major table; row `r` is `rows()[r*width .. (r+1)*width]`.
    pub fn rows(&self) -> &[f64] {
        self.cache.get_or_init(|| {
            let n = self.draws * self.width;
            let mut rng = self.stream.rng();
            match self.family {
                ErrorFamily::PointMass => vec![0.0; n],
                ErrorFamily::Gaussian => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                ErrorFamily::Gumbel => {
                    let d = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
                    (0..n).map(|_| rng.sample(d)).collect()
                }
            }
        })
    }

    fn chunk_sums<F>(&self, outputs: usize, per_row: F) -> Vec<f64>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let width = self.width;
        let partial: Vec<Vec<f64>> = self
            .rows()
            .par_chunks(CHUNK_ROWS * width)
            .map(|chunk| {
                let mut acc = vec![0.0; outputs];
                for row in chunk.chunks_exact(width) {
                    per_row(row, &mut acc);
                }
                acc
            })
            .collect();
        let mut total = vec![0.0; outputs];
        for p in partial {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total
    }

    /// `E[max_k (ε_k + a_k)]` with `a₀ = 0`; needs `width = J + 1`.
    pub fn surplus(&self, a: &[f64]) -> Result<SurplusEstimate, KernelError> {
        self.expect_width(a.len() + 1)?;
        let sums = self.chunk_sums(2, |row, acc| {
            let m = row_max(row, a);
            acc[0] += m;
            acc[1] += m * m;
        });
        let (mean, stderr) = mean_stderr(sums[0], sums[1], self.draws);
        Ok(SurplusEstimate { value: mean, stderr, draws: self.draws as u64 })
    }

    /// Choice frequencies of the inside alternatives for utilities
    /// `a_k/scale + ε_k`, `a₀ = 0`; ties go to the lowest index.
    pub fn ccp(&self, a: &[f64], scale: f64) -> Result<CcpEstimate, KernelError> {
        let counts = self.choice_counts(a, scale)?;
        let n = self.draws as f64;
        let values: Vec<f64> = counts.iter().map(|c| *c as f64 / n).collect();
        let stderr = values.iter().map(|p| binomial_stderr(*p, self.draws)).collect();
        Ok(CcpEstimate { values, stderr, draws: self.draws as u64 })
    }

    fn choice_counts(&self, a: &[f64], scale: f64) -> Result<Vec<u64>, KernelError> {
        self.expect_width(a.len() + 1)?;
        let scaled: Vec<f64> = a.iter().map(|v| v / scale).collect();
        let j = a.len();
        let width = self.width;
        let partial: Vec<Vec<u64>> = self
            .rows()
            .par_chunks(CHUNK_ROWS * width)
            .map(|chunk| {
                let mut acc = vec![0u64; j];
                for row in chunk.chunks_exact(width) {
                    let k = row_argmax(row, &scaled);
                    if k > 0 {
                        acc[k - 1] += 1;
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0u64; j];
        for p in partial {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        Ok(total)
    }

    /// `E[ln Y · 1{D = j}]` for `ln T_j = a_j − scale·ε_j`, `Y = min T`,
    /// `D = argmin`; needs `width = J`. Ties go to the lowest index.
    pub fn competing_risks(&self, a: &[f64], scale: f64) -> Result<CcpEstimate, KernelError> {
        self.expect_width(a.len())?;
        let j = a.len();
        let sums = self.chunk_sums(2 * j, |row, acc| {
            let mut best = 0;
            let mut best_t = a[0] - scale * row[0];
            for k in 1..j {
                let t = a[k] - scale * row[k];
                if t < best_t {
                    best = k;
                    best_t = t;
                }
            }
            acc[best] += best_t;
            acc[j + best] += best_t * best_t;
        });
        let mut values = Vec::with_capacity(j);
        let mut stderr = Vec::with_capacity(j);
        for k in 0..j {
            let (m, s) = mean_stderr(sums[k], sums[j + k], self.draws);
            values.push(m);
            stderr.push(s);
        }
        Ok(CcpEstimate { values, stderr, draws: self.draws as u64 })
    }

    fn expect_width(&self, width: usize) -> Result<(), KernelError> {
        if self.width != width {
            return Err(KernelError::Dimension { expected: self.width, got: width });
        }
        if self.draws < 2 {
            return Err(KernelError::Config(format!("need at least 2 draws, got {}", self.draws)));
        }
        Ok(())
    }
}

fn row_max(row: &[f64], a: &[f64]) -> f64 {
    a.iter().zip(&row[1..]).fold(row[0], |m, (ak, e)| m.max(ak + e))
}

fn row_argmax(row: &[f64], a: &[f64]) -> usize {
    let mut best = 0;
    let mut best_u = row[0];
    for (k, (ak, e)) in a.iter().zip(&row[1..]).enumerate() {
        let u = ak + e;
        if u > best_u {
            best = k + 1;
            best_u = u;
        }
    }
    best
}

fn mean_stderr(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - sum * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

fn binomial_stderr(p: f64, n: usize) -> f64 {
    let nf = n as f64;
    (p * (1.0 - p) * nf / (nf - 1.0) / nf).sqrt()
}

fn check_draws(draws: u64) -> Result<(), KernelError> {
    if draws < 2 {
        return Err(KernelError::Config(format!("need at least 2 draws, got {draws}")));
    }
    Ok(())
}

/// Sample mean of `max_k (ε_k + a_k)` with the outside option `a₀ = 0`.
pub fn surplus_mc(a: &[f64], family: ErrorFamily, draws: u64, stream: McStream) -> Result<SurplusEstimate, KernelError> {
    check_index(a, a.len())?;
    check_draws(draws)?;
    ErrorDraws::new(family, a.len() + 1, draws, stream).surplus(a)
}

/// Simulated choice probabilities of the inside alternatives.
pub fn ccp_mc(a: &[f64], family: ErrorFamily, draws: u64, stream: McStream) -> Result<CcpEstimate, KernelError> {
    check_index(a, a.len())?;
    check_draws(draws)?;
    ErrorDraws::new(family, a.len() + 1, draws, stream).ccp(a, 1.0)
}

/// Simulated competing-risks map `E[ln Y · 1{D=j}]` with unit scale.
pub fn competing_risks_mc(a: &[f64], family: ErrorFamily, draws: u64, stream: McStream) -> Result<CcpEstimate, KernelError> {
    check_index(a, a.len())?;
    check_draws(draws)?;
    ErrorDraws::new(family, a.len(), draws, stream).competing_risks(a, 1.0)
}

/// Simulated ARUM choice probabilities at a fixed control. The same draws
/// serve every query, so `eval` is a deterministic step function of `a`.
pub struct ArumMc {
    dim: usize,
    scale: f64,
    draws: ErrorDraws,
}

impl ArumMc {
    pub fn new(dim: usize, family: ErrorFamily, scale: f64, draws: u64, stream: McStream) -> Self {
        ArumMc { dim, scale, draws: ErrorDraws::new(family, dim + 1, draws, stream) }
    }
}

impl Lambda for ArumMc {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, a: &[f64]) -> Result<Vec<f64>, KernelError> {
        check_index(a, self.dim)?;
        Ok(self.draws.ccp(a, self.scale)?.values)
    }

    fn stderr_bound(&self) -> f64 {
        0.5 / (self.draws.len() as f64).sqrt()
    }
}

/// Simulated competing-risks map at a fixed control.
pub struct CompetingRisksMc {
    dim: usize,
    scale: f64,
    draws: ErrorDraws,
    reference_stderr: OnceLock<f64>,
}

impl CompetingRisksMc {
    pub fn new(dim: usize, family: ErrorFamily, scale: f64, draws: u64, stream: McStream) -> Self {
        CompetingRisksMc {
            dim,
            scale,
            draws: ErrorDraws::new(family, dim, draws, stream),
            reference_stderr: OnceLock::new(),
        }
    }
}

impl Lambda for CompetingRisksMc {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, a: &[f64]) -> Result<Vec<f64>, KernelError> {
        check_index(a, self.dim)?;
        Ok(self.draws.competing_risks(a, self.scale)?.values)
    }

    /// Measured at `a = 0`; the spread of `ln Y` does not depend on a common
    /// shift of `a`, only its level does.
    fn stderr_bound(&self) -> f64 {
        *self.reference_stderr.get_or_init(|| {
            let zero = vec![0.0; self.dim];
            self.draws.competing_risks(&zero, self.scale).map_or(f64::INFINITY, |e| e.max_stderr())
        })
    }
}

/// Which surplus function the gradient check differentiates.
#[derive(Clone, Copy, Debug)]
pub enum SurplusPath {
    /// `G(a) = ln(1 + Σ exp a_k) + γ` against the logit CCPs.
    ClosedFormGumbel,
    /// Simulated surplus and CCPs on one set of draws.
    MonteCarlo { family: ErrorFamily, draws: u64, stream: McStream },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    /// `max_j |∂̂G/∂a_j − Λ̂_j|` with central differences.
    pub deviation: f64,
    /// Largest CCP standard error (zero on the closed-form path).
    pub ccp_stderr: f64,
}

/// Compares central finite differences of the surplus with the CCPs.
pub fn wdz_gradient_check(a: &[f64], path: &SurplusPath, fd_step: f64) -> Result<GradientCheck, KernelError> {
    check_index(a, a.len())?;
    if !(fd_step > 0.0) {
        return Err(KernelError::Config(format!("fd step must be positive, got {fd_step}")));
    }
    let j = a.len();
    let bumped = |k: usize, sign: f64| {
        let mut v = a.to_vec();
        v[k] += sign * fd_step;
        v
    };
    match *path {
        SurplusPath::ClosedFormGumbel => {
            let surplus = |v: &[f64]| {
                let mut full = vec![0.0];
                full.extend_from_slice(v);
                log_sum_exp(&full) + EULER_GAMMA
            };
            let ccp = arum_lambda_gumbel(a);
            let deviation = (0..j)
                .map(|k| {
                    let d = (surplus(&bumped(k, 1.0)) - surplus(&bumped(k, -1.0))) / (2.0 * fd_step);
                    (d - ccp[k]).abs()
                })
                .fold(0.0, f64::max);
            Ok(GradientCheck { deviation, ccp_stderr: 0.0 })
        }
        SurplusPath::MonteCarlo { family, draws, stream } => {
            check_draws(draws)?;
            let table = ErrorDraws::new(family, j + 1, draws, stream);
            let ccp = table.ccp(a, 1.0)?;
            let mut deviation: f64 = 0.0;
            for k in 0..j {
                let up = table.surplus(&bumped(k, 1.0))?.value;
                let down = table.surplus(&bumped(k, -1.0))?.value;
                deviation = deviation.max(((up - down) / (2.0 * fd_step) - ccp.values[k]).abs());
            }
            Ok(GradientCheck { deviation, ccp_stderr: ccp.max_stderr() })
        }
    }
}
