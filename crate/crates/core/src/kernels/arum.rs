use crate::numerics::outside_softmax;

/// CCPs of an ARUM with i.i.d. standard Gumbel errors and the outside
/// option normalized to `a₀ = 0`: `Λ_j = exp(a_j) / (1 + Σ_k exp(a_k))`.
///
/// This is the gradient of the surplus `ln(1 + Σ exp a_k) + γ`.
pub fn arum_lambda_gumbel(a: &[f64]) -> Vec<f64> {
    outside_softmax(a)
}
