//! The kernel example and property suite behind the `kernel-test` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::*;
use crate::model::ErrorFamily;
use crate::numerics::{sup_dist, EULER_GAMMA};
use crate::topology::{AaBox, BoxUnion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfTestRow {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn row(name: &str, pass: bool, detail: String) -> SelfTestRow {
    SelfTestRow { name: name.to_string(), pass, detail }
}

fn failed(name: &str, e: KernelError) -> SelfTestRow {
    row(name, false, format!("error: {e}"))
}

macro_rules! attempt {
    ($rows:expr, $name:expr, $body:expr) => {{
        let r: Result<SelfTestRow, KernelError> = (|| $body)();
        $rows.push(r.unwrap_or_else(|e| failed($name, e)));
    }};
}

/// Runs every check; MC streams and random points derive from `seed`.
pub fn run_suite(seed: u64) -> Vec<SelfTestRow> {
    let mut rows = Vec::new();
    let stream = McStream { seed, stream: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ln2 = 2.0_f64.ln();

    let p = arum_lambda_gumbel(&[0.0, 0.0]);
    rows.push(row(
        "arum-symmetric",
        p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15),
        format!("{p:?}"),
    ));

    attempt!(rows, "arum-ln2-vs-mc", {
        let exact = arum_lambda_gumbel(&[ln2])[0];
        let mc = ccp_mc(&[ln2], ErrorFamily::Gumbel, 1_000_000, stream)?;
        let dev = (mc.values[0] - exact).abs();
        Ok(row(
            "arum-ln2-vs-mc",
            (exact - 2.0 / 3.0).abs() < 1e-15 && dev <= 3.0 * mc.stderr[0],
            format!("closed {exact:.12}, mc {:.6} ± {:.2e}", mc.values[0], mc.stderr[0]),
        ))
    });

    let p = arum_lambda_gumbel(&[1000.0, 0.0]);
    rows.push(row(
        "arum-saturation",
        (p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-12 && p.iter().all(|v| (0.0..=1.0).contains(v)),
        format!("{p:?}"),
    ));

    attempt!(rows, "surplus-gumbel-zero", {
        let e = surplus_mc(&[0.0], ErrorFamily::Gumbel, 1_000_000, stream)?;
        let exact = ln2 + EULER_GAMMA;
        Ok(row(
            "surplus-gumbel-zero",
            (e.value - exact).abs() <= 3.0 * e.stderr,
            format!("mc {:.6} ± {:.2e}, exact {exact:.6}", e.value, e.stderr),
        ))
    });

    attempt!(rows, "surplus-point-mass", {
        let e = surplus_mc(&[2.0, 1.0], ErrorFamily::PointMass, 16, stream)?;
        Ok(row("surplus-point-mass", e.value == 2.0, format!("{}", e.value)))
    });

    attempt!(rows, "surplus-stderr-scaling", {
        let s1 = surplus_mc(&[0.0], ErrorFamily::Gumbel, 100_000, stream)?.stderr;
        let s4 = surplus_mc(&[0.0], ErrorFamily::Gumbel, 400_000, stream)?.stderr;
        let r = s4 / s1;
        Ok(row("surplus-stderr-scaling", (r - 0.5).abs() <= 0.1, format!("4x draws ratio {r:.4}")))
    });

    attempt!(rows, "surplus-monotone", {
        let table = ErrorDraws::new(ErrorFamily::Gumbel, 3, 50_000, stream);
        let mut prev = f64::NEG_INFINITY;
        let mut ok = true;
        for step in 0..25 {
            let v = table.surplus(&[-1.0 + 0.1 * step as f64, 0.0])?.value;
            ok &= v >= prev;
            prev = v;
        }
        Ok(row("surplus-monotone", ok, "25 increasing a_1 on common draws".into()))
    });

    attempt!(rows, "wdz-closed-form", {
        let d = wdz_gradient_check(&[0.0, 0.0], &SurplusPath::ClosedFormGumbel, 1e-3)?.deviation;
        Ok(row("wdz-closed-form", d <= 1e-6, format!("deviation {d:.3e} at step 1e-3")))
    });

    attempt!(rows, "wdz-second-order", {
        let a = [0.3, -0.2];
        let c = wdz_gradient_check(&a, &SurplusPath::ClosedFormGumbel, 1e-2)?.deviation;
        let f = wdz_gradient_check(&a, &SurplusPath::ClosedFormGumbel, 1e-3)?.deviation;
        let r = c / f;
        Ok(row("wdz-second-order", (90.0..=110.0).contains(&r), format!("ratio {r:.2}")))
    });

    attempt!(rows, "wdz-point-mass", {
        let path = SurplusPath::MonteCarlo { family: ErrorFamily::PointMass, draws: 8, stream };
        let d = wdz_gradient_check(&[1.0, 0.5], &path, 1e-3)?.deviation;
        Ok(row("wdz-point-mass", d < 1e-9, format!("deviation {d:.3e}")))
    });

    attempt!(rows, "wdz-monte-carlo", {
        let path = SurplusPath::MonteCarlo { family: ErrorFamily::Gumbel, draws: 1_000_000, stream };
        let g = wdz_gradient_check(&[0.0, 0.0], &path, 1e-3)?;
        Ok(row(
            "wdz-monte-carlo",
            g.deviation <= 4.0 * g.ccp_stderr,
            format!("deviation {:.3e}, 4·stderr {:.3e}", g.deviation, 4.0 * g.ccp_stderr),
        ))
    });

    attempt!(rows, "perturbed-examples", {
        let opts = SolverOptions::default();
        let q0 = perturbed_solve(&[0.0, 0.0, 0.0], &PerturbationSpec::entropy(1.0), &opts)?;
        let q1 = perturbed_solve(&[0.0, ln2, 0.0], &PerturbationSpec::entropy(1.0), &opts)?;
        let q2 = perturbed_solve(&[0.0, 2.0 * ln2, 0.0], &PerturbationSpec::entropy(2.0), &opts)?;
        let ok = sup_dist(&q0, &[1.0 / 3.0; 3]) < 1e-12
            && sup_dist(&q1, &[0.25, 0.5, 0.25]) < 1e-12
            && sup_dist(&q1, &q2) < 1e-12;
        Ok(row("perturbed-examples", ok, format!("{q1:?}")))
    });

    attempt!(rows, "perturbed-entropy-is-logit", {
        let opts = SolverOptions::default();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let j = rng.random_range(1..=4);
            let full: Vec<f64> = (0..=j).map(|_| rng.random_range(-4.0..4.0)).collect();
            let c = rng.random_range(0.2..3.0);
            let q = perturbed_solve(&full, &PerturbationSpec::entropy(c), &opts)?;
            let inside: Vec<f64> = full[1..].iter().map(|v| (v - full[0]) / c).collect();
            worst = worst.max(sup_dist(&q[1..], &arum_lambda_gumbel(&inside)));
        }
        Ok(row("perturbed-entropy-is-logit", worst <= 1e-8, format!("1000 draws, worst {worst:.3e}")))
    });

    attempt!(rows, "foc-residual-uniform", {
        let r = foc_residual(&[0.3, 1.0, -0.5], &[1.0 / 3.0; 3], &PerturbationSpec::entropy(1.0))?;
        Ok(row("foc-residual-uniform", (r - 0.8).abs() < 1e-12, format!("{r}")))
    });

    attempt!(rows, "competing-risks-vs-mc", {
        let table = ErrorDraws::new(ErrorFamily::Gumbel, 2, 1_000_000, stream);
        let mut breaches = 0;
        let points = 100;
        for _ in 0..points {
            let a = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let exact = competing_risks_lambda_gumbel(&a);
            let mc = table.competing_risks(&a, 1.0)?;
            if (0..2).any(|k| (mc.values[k] - exact[k]).abs() > 3.0 * mc.stderr[k]) {
                breaches += 1;
            }
        }
        let sym = competing_risks_lambda_gumbel(&[0.0, 0.0]);
        let sym_ok = (sym[0] + (ln2 + EULER_GAMMA) / 2.0).abs() < 1e-15;
        Ok(row(
            "competing-risks-vs-mc",
            sym_ok && breaches == 0,
            format!("{breaches} of {points} points outside 3 standard errors"),
        ))
    });

    let single = competing_risks_lambda_gumbel(&[0.7])[0];
    rows.push(row(
        "competing-risks-single",
        (single - (0.7 - EULER_GAMMA)).abs() < 1e-14,
        format!("{single}"),
    ));

    let (g0, p0) = competing_risks_parts(&[0.2, -0.4]);
    let (g1, p1) = competing_risks_parts(&[1.7, 1.1]);
    rows.push(row(
        "competing-risks-shift",
        (g1 - g0 - 1.5).abs() < 1e-12 && sup_dist(&p0, &p1) < 1e-12,
        format!("ΔG = {}", g1 - g0),
    ));

    let square = BoxUnion::single(AaBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]).expect("box"));
    let popts = ProbeOptions::default();
    attempt!(rows, "probe-logit", {
        let r = injectivity_probe(&ArumGumbel { dim: 2, scale: 1.0 }, &square, 512, seed, &popts)?;
        Ok(row("probe-logit", r.collision.is_none(), format!("worst {:.3e}", r.worst_separation)))
    });
    attempt!(rows, "probe-noninjective", {
        let k = NoninjectiveLogit { dim: 2, scale: 1.0, dropped: Some(1) };
        let r = injectivity_probe(&k, &square, 64, seed, &popts)?;
        let ok = r.collision.as_ref().is_some_and(|c| c.a1[0] == c.a2[0] && c.a1[1] != c.a2[1]);
        Ok(row("probe-noninjective", ok, format!("worst {:.3e}", r.worst_separation)))
    });
    attempt!(rows, "probe-two-samples", {
        let r = injectivity_probe(&ArumGumbel { dim: 2, scale: 1.0 }, &square, 2, seed, &popts)?;
        Ok(row("probe-two-samples", r.tested_pairs == 1, format!("{} pairs", r.tested_pairs)))
    });

    rows
}
