//! Small numeric helpers shared by the kernels, the engine and the generator.

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Correctly rounded sum of `values` (Shewchuk's partials with a
/// round-half-even correction on the final step).
///
/// Inputs must be finite. The result is the double nearest to the exact real
/// sum, so `exact_sum(&[a, b])` equals `a + b` and rearranging terms whose
/// exact sum is unchanged cannot change the result.
pub fn exact_sum(values: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        let mut x = v;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

/// `ln Σ exp(v_i)` with the max shifted out.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

/// Softmax over the `J+1` vector `(0, a_1, ..., a_J)`, returning only the
/// inside coordinates.
pub fn outside_softmax(a: &[f64]) -> Vec<f64> {
    let max = a.iter().copied().fold(0.0_f64, f64::max);
    let outside = (-max).exp();
    let weights: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
    let total = outside + weights.iter().sum::<f64>();
    weights.into_iter().map(|w| w / total).collect()
}

/// Full softmax of `v`.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

const HALTON_BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Point `index` of the Halton sequence in `[0,1)^dim` (index 0 is skipped
/// so the origin never appears).
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= HALTON_BASES.len(), "halton: dimension {dim} too large");
    HALTON_BASES[..dim]
        .iter()
        .map(|&base| radical_inverse(index + 1, base))
        .collect()
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// SplitMix64 finalizer; used to derive independent seeds from structured keys.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix_keys(keys: &[u64]) -> u64 {
    keys.iter().fold(0x5EED_u64, |acc, &k| mix64(acc ^ mix64(k)))
}

/// Round to the nearest multiple of 2^-32.
pub fn dyadic_round(v: f64) -> f64 {
    const SCALE: f64 = 4_294_967_296.0;
    (v * SCALE).round() / SCALE
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Values on the 2^-60 grid with |v| < 8 have exact i128 sums; `as f64`
    /// on i128 rounds to nearest-even, and dividing by 2^60 is exact.
    fn fixed_point_sum(values: &[i64]) -> f64 {
        let total: i128 = values.iter().map(|&v| v as i128).sum();
        (total as f64) / (2.0_f64).powi(60)
    }

    proptest! {
        #[test]
        fn exact_sum_matches_fixed_point_oracle(raw in proptest::collection::vec(-(1i64 << 62)..(1i64 << 62), 1..6)) {
            let values: Vec<f64> = raw.iter().map(|&v| v as f64 / (2.0_f64).powi(60)).collect();
            // Only grid points that are exactly representable participate.
            let exact: Vec<i64> = values.iter().map(|v| (v * (2.0_f64).powi(60)) as i64).collect();
            prop_assert_eq!(exact_sum(&values), fixed_point_sum(&exact));
        }

        #[test]
        fn shift_roundtrip_is_exact(g in -10.0f64..10.0, h in -1.0f64..1.0, c in -3.0f64..3.0) {
            let h = dyadic_round(h);
            let c = dyadic_round(c);
            let shifted = h - c;
            prop_assert_eq!(shifted + c, h);
            prop_assert_eq!(exact_sum(&[g, shifted, c]), g + h);
        }
    }

    #[test]
    fn exact_sum_handles_cancellation() {
        assert_eq!(exact_sum(&[1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum(&[0.1, 0.2]), 0.1 + 0.2);
        assert_eq!(exact_sum(&[]), 0.0);
    }

    #[test]
    fn outside_softmax_saturates_without_overflow() {
        let p = outside_softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1] >= 0.0 && p[1] < 1e-12);
        let p = outside_softmax(&[-1000.0]);
        assert!(p[0] >= 0.0 && p[0] < 1e-12);
    }

    #[test]
    fn halton_points_stay_in_unit_cube() {
        for i in 0..100 {
            for v in halton(i, 3) {
                assert!((0.0..1.0).contains(&v));
            }
        }
        assert_eq!(halton(0, 2), vec![0.5, 1.0 / 3.0]);
    }
}
