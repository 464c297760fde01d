use crate::numerics::{log_sum_exp, EULER_GAMMA};

/// Expected log failure time `G(a) = −(ln Σ_k exp(−a_k) + γ)` and the cause
/// probabilities `P_j(a) = exp(−a_j) / Σ_k exp(−a_k)` for
/// `ln T_j = a_j − ε_j` with ε i.i.d. standard Gumbel.
pub fn competing_risks_parts(a: &[f64]) -> (f64, Vec<f64>) {
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    let lse = log_sum_exp(&neg);
    let g = -(lse + EULER_GAMMA);
    let p = neg.iter().map(|v| (v - lse).exp()).collect();
    (g, p)
}

/// `Λ_j(a) = G(a)·P_j(a) = E[ln Y]·P(D = j)`.
pub fn competing_risks_lambda_gumbel(a: &[f64]) -> Vec<f64> {
    let (g, p) = competing_risks_parts(a);
    p.into_iter().map(|pj| g * pj).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_symmetric_risks() {
        let l = competing_risks_lambda_gumbel(&[0.0, 0.0]);
        let expected = -(2.0_f64.ln() + EULER_GAMMA) / 2.0;
        assert!((expected + 0.635_181_5).abs() < 1e-6);
        for v in l {
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn single_risk_is_shifted_mean() {
        for a in [-2.0, 0.0, 0.7, 3.5] {
            let l = competing_risks_lambda_gumbel(&[a]);
            assert!((l[0] - (a - EULER_GAMMA)).abs() < 1e-14);
        }
    }

    #[test]
    fn large_indices_do_not_overflow() {
        let l = competing_risks_lambda_gumbel(&[-800.0, 900.0]);
        assert!(l.iter().all(|v| v.is_finite()));
    }

    proptest! {
        #[test]
        fn common_shift_moves_level_only(a in proptest::collection::vec(-4.0f64..4.0, 1..5), c in -3.0f64..3.0) {
            let (g0, p0) = competing_risks_parts(&a);
            let moved: Vec<f64> = a.iter().map(|v| v + c).collect();
            let (g1, p1) = competing_risks_parts(&moved);
            prop_assert!((g1 - g0 - c).abs() < 1e-12);
            for (x, y) in p0.iter().zip(&p1) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn lambda_factorizes_and_sums_to_level(a in proptest::collection::vec(-4.0f64..4.0, 1..5)) {
            let (g, p) = competing_risks_parts(&a);
            let l = competing_risks_lambda_gumbel(&a);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((l.iter().sum::<f64>() - g).abs() < 1e-12);
            for (lj, pj) in l.iter().zip(&p) {
                prop_assert!((lj - g * pj).abs() < 1e-15);
            }
        }
    }
}
