use super::{ModelError, Scenario, XId, ZId};
use crate::kernels::ScenarioKernel;

/// `a(w,x) = g(w) + h(x)`.
pub fn eval_index(scenario: &Scenario, w: &[f64], x: XId) -> Result<Vec<f64>, ModelError> {
    let h = scenario.h.get(x)?;
    let g = scenario.g.apply(w)?;
    if g.len() != h.len() {
        return Err(ModelError::Domain { w: w.to_vec(), reason: format!("g(w) must have length {}", h.len()) });
    }
    Ok(g.iter().zip(h).map(|(a, b)| a + b).collect())
}

/// `Π(w,x,z) = Λ(g(w) + h(x), z)`. Builds the kernel on every call; the
/// oracle keeps one instead (see [`eval_pi_with`]).
pub fn eval_pi(scenario: &Scenario, w: &[f64], x: XId, z: ZId) -> Result<Vec<f64>, ModelError> {
    let kernel = ScenarioKernel::build(&scenario.lambda, scenario.dims.j)?;
    eval_pi_with(&kernel, scenario, w, x, z)
}

pub fn eval_pi_with(
    kernel: &ScenarioKernel,
    scenario: &Scenario,
    w: &[f64],
    x: XId,
    z: ZId,
) -> Result<Vec<f64>, ModelError> {
    if !scenario.z_points.contains(&z) {
        return Err(ModelError::UnknownZ(z));
    }
    let h = scenario.h.get(x)?;
    let g = scenario.g.apply(w)?;
    if g.len() != h.len() {
        return Err(ModelError::Domain { w: w.to_vec(), reason: format!("g(w) must have length {}", h.len()) });
    }
    kernel.eval_parts(&g, h, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_scenario, Dimensions, GSpec, GenMode};

    fn scenario(g: GSpec, h: Vec<f64>) -> Scenario {
        let mut s = gen_scenario(1, Dimensions::new(2, 1, 2, 1), GenMode::Connected).unwrap();
        s.g = g;
        let x1 = s.x_ids()[1];
        s.h.entries.insert(x1, h);
        s
    }

    #[test]
    fn identity_index_at_normalization_point() {
        let s = scenario(GSpec::Identity, vec![0.0, 0.0]);
        let a = eval_index(&s, &[0.3, -1.2], s.h.x0).unwrap();
        assert_eq!(a, vec![0.3, -1.2]);
    }

    #[test]
    fn negative_log_at_one() {
        let s = scenario(GSpec::NegativeLog, vec![0.5, 0.25]);
        let a = eval_index(&s, &[1.0, 1.0], s.x_ids()[1]).unwrap();
        assert_eq!(a, vec![0.5, 0.25]);
    }

    /// `−ln w` by bisection on `exp`, independent of `f64::ln`.
    fn neg_log_bisect(w: f64) -> f64 {
        let (mut lo, mut hi) = (-50.0_f64, 50.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (-mid).exp() > w {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn negative_log_matches_scalar_brute_force() {
        let s = scenario(GSpec::NegativeLog, vec![0.0, 0.0]);
        let a = eval_index(&s, &[2.0, 0.5], s.x_ids()[1]).unwrap();
        assert!((a[0] - neg_log_bisect(2.0)).abs() < 1e-14);
        assert!((a[1] - neg_log_bisect(0.5)).abs() < 1e-14);
        assert!((a[0] + std::f64::consts::LN_2).abs() < 1e-12 && (a[1] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn errors_for_unknown_x_and_bad_domain() {
        let s = scenario(GSpec::NegativeLog, vec![0.0, 0.0]);
        assert!(matches!(eval_index(&s, &[1.0, 1.0], XId(99)), Err(ModelError::UnknownX(_))));
        assert!(matches!(eval_index(&s, &[0.0, 1.0], s.h.x0), Err(ModelError::Domain { .. })));
    }

    #[test]
    fn index_differences_do_not_depend_on_w() {
        let s = gen_scenario(4, Dimensions::new(2, 1, 4, 1), GenMode::Connected).unwrap();
        let xs = s.x_ids();
        let d = |w: &[f64]| {
            let a = eval_index(&s, w, xs[2]).unwrap();
            let b = eval_index(&s, w, xs[3]).unwrap();
            [a[0] - b[0], a[1] - b[1]]
        };
        let (d1, d2) = (d(&[0.1, 0.2]), d(&[-3.0, 2.0]));
        assert!((d1[0] - d2[0]).abs() < 1e-12 && (d1[1] - d2[1]).abs() < 1e-12);
    }

    #[test]
    fn logit_at_zero_index_is_uniform() {
        let s = scenario(GSpec::Identity, vec![0.0, 0.0]);
        let mut s = s;
        s.lambda.per_z.iter_mut().for_each(|p| p.scale = 1.0);
        let p = eval_pi(&s, &[0.0, 0.0], s.h.x0, s.z_points[0]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }
}
