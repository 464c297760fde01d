//! One PASS/FAIL line per acceptance criterion. Exits nonzero when any
//! criterion fails.

use std::collections::BTreeSet;
use std::time::Instant;

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use indexid::engine::*;
use indexid::kernels::{
    competing_risks_lambda_gumbel, perturbed_solve, wdz_gradient_check, ErrorDraws, McStream, PerturbationSpec,
    ScenarioKernel, SolverOptions, SurplusPath,
};
use indexid::model::*;
use indexid::numerics::dyadic_round;
use indexid::oracle::make_oracle;
use indexid::topology::{assumption_audit, AuditOptions, AuditReport, BoxUnion};
use indexid_cli::{execute, Cli, RunConfig};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

struct Line {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn audit(s: &Scenario) -> AuditReport {
    assumption_audit(s, &AuditOptions::default()).unwrap()
}

/// Inside shares of the logit with the outside option at zero, on `a / c`.
fn logit(a: &[f64], c: f64) -> Vec<f64> {
    let m = a.iter().fold(0.0_f64, |m, v| m.max(v / c));
    let e: Vec<f64> = a.iter().map(|v| (v / c - m).exp()).collect();
    let total = (-m).exp() + e.iter().sum::<f64>();
    e.iter().map(|v| v / total).collect()
}

/// `c·Λ₁(a/c)` with `Λ₁ = −(ln Σ e^{−a_k} + γ)·softmax(−a)`.
fn competing(a: &[f64], c: f64) -> Vec<f64> {
    let b: Vec<f64> = a.iter().map(|v| -v / c).collect();
    let m = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = b.iter().map(|v| (v - m).exp()).sum();
    let level = -(m + s.ln() + EULER_GAMMA);
    b.iter().map(|v| c * level * (v - m).exp() / s).collect()
}

fn truth_lambda(s: &Scenario, a: &[f64], z: ZId) -> Vec<f64> {
    let p = s.lambda.params(z).unwrap();
    let shifted: Vec<f64> = a.iter().zip(&s.lambda.shift).map(|(a, c)| a + c).collect();
    match s.lambda.kind {
        KernelKind::ArumGumbel => logit(&shifted, p.scale),
        KernelKind::CompetingRisksGumbel => competing(&shifted, p.scale),
        k => panic!("no closed form for {k:?}"),
    }
}

struct RoundTrip {
    h_err: f64,
    lambda_err: f64,
    samples: usize,
    all_identified: bool,
    audit_pass: bool,
    secs: f64,
}

fn round_trip(s: &Scenario) -> RoundTrip {
    let t = Instant::now();
    let rep = audit(s);
    let o = make_oracle(s).unwrap();
    let d = s.design();
    let r = identify_global(&o, &d, &rep.admissible_z, &EngineOptions::default()).unwrap();
    let queries = sample_lambda_queries(&d, &r, 120, s.seed);
    let samples = recover_lambda(&o, &d, &r, &queries).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let h0 = s.h.get(r.x0).unwrap();
    let h_err = r
        .h_hat
        .iter()
        .map(|e| {
            let truth: Vec<f64> = s.h.get(e.x).unwrap().iter().zip(h0).map(|(a, b)| a - b).collect();
            sup(&e.h, &truth)
        })
        .fold(0.0, f64::max);
    let lambda_err = samples.iter().map(|x| sup(&x.value, &truth_lambda(s, &x.a, x.z))).fold(0.0, f64::max);
    RoundTrip {
        h_err,
        lambda_err,
        samples: samples.len(),
        all_identified: r.h_hat.len() == s.dims.nx,
        audit_pass: rep.all_pass,
        secs,
    }
}

fn round_trip_criterion(id: &'static str, kernel: KernelKind) -> Line {
    let opts = GenOptions { kernel, ..GenOptions::default() };
    let (mut h, mut l, mut slow, mut fewest) = (0.0_f64, 0.0_f64, 0.0_f64, usize::MAX);
    let mut bad = Vec::new();
    for seed in 0..20u64 {
        let j = 1 + (seed % 3) as usize;
        let nx = 4 + (seed % 5) as usize;
        let nz = 1 + (seed % 4) as usize;
        let s = gen_scenario_with(seed, Dimensions::new(j, 1, nx, nz), GenMode::Connected, &opts).unwrap();
        let rt = round_trip(&s);
        h = h.max(rt.h_err);
        l = l.max(rt.lambda_err);
        slow = slow.max(rt.secs);
        fewest = fewest.min(rt.samples);
        if !(rt.h_err <= 1e-8 && rt.lambda_err <= 1e-8 && rt.samples >= 100 && rt.all_identified && rt.audit_pass && rt.secs <= 60.0) {
            bad.push(seed);
        }
    }
    Line {
        id,
        pass: bad.is_empty(),
        detail: format!(
            "{} round trip over 20 seeds: max h error {h:.2e}, max Λ error {l:.2e}, ≥{fewest} Λ queries per seed, slowest {slow:.2} s, failing seeds {bad:?}",
            kernel.name()
        ),
    }
}

type Boxes = Vec<(Vec<f64>, Vec<f64>)>;

fn raw(u: &BoxUnion, shift: &[f64]) -> Boxes {
    u.boxes
        .iter()
        .map(|b| {
            (b.lo.iter().zip(shift).map(|(l, s)| l + s).collect(), b.hi.iter().zip(shift).map(|(h, s)| h + s).collect())
        })
        .collect()
}

fn meet(u: &Boxes, v: &Boxes) -> bool {
    u.iter().any(|(a, b)| v.iter().any(|(c, d)| (0..a.len()).all(|k| a[k].max(c[k]) < b[k].min(d[k]))))
}

/// Sweep-to-fixed-point closure of the true overlap relation on `(z, x)`.
fn brute_force(s: &Scenario, admissible: &[ZId]) -> BTreeSet<(ZId, XId)> {
    let t = &s.seed_triple;
    let mut nodes = BTreeSet::new();
    if !admissible.contains(&t.z0) {
        return nodes;
    }
    nodes.insert((t.z0, t.x0));
    let zero = vec![0.0; s.dims.j];
    let xs = s.x_ids();
    loop {
        let n = nodes.len();
        for &z in admissible {
            for &x in &xs {
                if !nodes.contains(&(z, x)) {
                    continue;
                }
                let ax = raw(s.supports.get(x, z), s.h.get(x).unwrap());
                for &y in &xs {
                    if meet(&ax, &raw(s.supports.get(y, z), s.h.get(y).unwrap())) {
                        nodes.insert((z, y));
                    }
                }
                for &o in admissible {
                    if meet(&raw(s.supports.get(x, z), &zero), &raw(s.supports.get(x, o), &zero)) {
                        nodes.insert((o, x));
                    }
                }
            }
        }
        if nodes.len() == n {
            return nodes;
        }
    }
}

fn engine_nodes(r: &IdentResult) -> BTreeSet<(ZId, XId)> {
    if r.identified_z.is_empty() {
        return BTreeSet::new();
    }
    r.h_hat.iter().flat_map(|e| e.reached_z.iter().map(move |z| (*z, e.x))).collect()
}

fn small_dims(seed: u64) -> Dimensions {
    Dimensions::new(1 + (seed % 3) as usize, 1 + (seed % 2) as usize, 2 + (seed % 7) as usize, 1 + (seed / 7 % 4) as usize)
}

fn ac3() -> Line {
    let (mut runs, mut skipped) = (0, 0);
    let mut bad = Vec::new();
    for mode in GenMode::ALL {
        for seed in 0..50u64 {
            let kernel = if seed % 2 == 0 { KernelKind::ArumGumbel } else { KernelKind::CompetingRisksGumbel };
            let opts = GenOptions { kernel, ..GenOptions::default() };
            let Ok(s) = gen_scenario_with(seed, small_dims(seed), mode, &opts) else {
                skipped += 1;
                continue;
            };
            runs += 1;
            let adm = audit(&s).admissible_z;
            let r = identify_global(&make_oracle(&s).unwrap(), &s.design(), &adm, &EngineOptions::default()).unwrap();
            let (got, want) = (engine_nodes(&r), brute_force(&s, &adm));
            let want_x: BTreeSet<XId> = want.iter().map(|(_, x)| *x).collect();
            let got_x: BTreeSet<XId> = r.identified_x().into_iter().collect();
            let expect_x = if want.is_empty() { BTreeSet::from([s.seed_triple.x0]) } else { want_x };
            if got != want || got_x != expect_x {
                bad.push(format!("{}:{seed}", mode.name()));
            }
        }
    }
    Line {
        id: "AC3",
        pass: bad.is_empty() && runs >= 150,
        detail: format!(
            "identified (z,x) nodes equal brute-force closure in {}/{runs} scenarios over 4 modes x 50 seeds ({skipped} infeasible dims skipped), mismatches {bad:?}",
            runs - bad.len()
        ),
    }
}

fn z_component(s: &Scenario, admissible: &[ZId]) -> BTreeSet<ZId> {
    let mut comp = BTreeSet::from([s.seed_triple.z0]);
    let zero = vec![0.0; s.dims.j];
    loop {
        let n = comp.len();
        for &a in admissible {
            for &b in admissible {
                if comp.contains(&a) {
                    let linked = s.x_ids().into_iter().any(|x| {
                        meet(&raw(s.supports.get(x, a), &zero), &raw(s.supports.get(x, b), &zero))
                    });
                    if linked {
                        comp.insert(b);
                    }
                }
            }
        }
        if comp.len() == n {
            return comp;
        }
    }
}

fn ac4() -> Line {
    let mut notes = Vec::new();
    let mut ok = true;

    let mut within = 0;
    for seed in 0..10u64 {
        let s = gen_scenario(seed, Dimensions::new(1 + (seed % 3) as usize, 1, 5 + (seed % 4) as usize, 1 + (seed % 3) as usize), GenMode::DisconnectedWithinZ).unwrap();
        let rep = audit(&s);
        let r = identify_global(&make_oracle(&s).unwrap(), &s.design(), &rep.admissible_z, &EngineOptions::default()).unwrap();
        let partial = !r.unidentified.is_empty() && !rep.connectedness_pass();
        let exact = engine_nodes(&r) == brute_force(&s, &rep.admissible_z);
        let h_ok = r.h_hat.iter().all(|e| sup(&e.h, s.h.get(e.x).unwrap()) <= 1e-8);
        if partial && exact && h_ok {
            within += 1;
        } else {
            ok = false;
        }
    }
    notes.push(format!("within-z {within}/10 strictly partial with the x0 component exact"));

    let mut across = 0;
    for seed in 0..10u64 {
        let s = gen_scenario(seed, Dimensions::new(1 + (seed % 3) as usize, 1, 4 + (seed % 5) as usize, 2 + (seed % 3) as usize), GenMode::DisconnectedAcrossZ).unwrap();
        let rep = audit(&s);
        let r = identify_global(&make_oracle(&s).unwrap(), &s.design(), &rep.admissible_z, &EngineOptions::default()).unwrap();
        let got: BTreeSet<ZId> = r.identified_z.iter().copied().collect();
        if got == z_component(&s, &rep.admissible_z) && !rep.overlap.pass && got.len() < s.dims.nz {
            across += 1;
        } else {
            ok = false;
        }
    }
    notes.push(format!("across-z {across}/10 identify exactly the z0 component"));

    let mut rejected = 0;
    for seed in 0..10u64 {
        let s = gen_scenario(seed, Dimensions::new(1 + (seed % 3) as usize, 1, 4, 1 + (seed % 3) as usize), GenMode::Noninjective).unwrap();
        let rep = audit(&s);
        let kernel = ScenarioKernel::build(&s.lambda, s.dims.j).unwrap();
        let witnessed = rep.injectivity.iter().any(|c| {
            c.report.collision.as_ref().is_some_and(|w| {
                let (v1, v2) = (kernel.eval(&w.a1, c.z).unwrap(), kernel.eval(&w.a2, c.z).unwrap());
                sup(&w.a1, &w.a2) >= 1e-6 && sup(&v1, &v2) <= 1e-10
            })
        });
        if !rep.all_pass && !rep.injectivity_pass() && witnessed {
            rejected += 1;
        } else {
            ok = false;
        }
    }
    notes.push(format!("noninjective {rejected}/10 rejected at audit with a verified collision witness"));
    Line { id: "AC4", pass: ok, detail: notes.join("; ") }
}

fn ac5() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = SolverOptions::default();
    let mut worst: f64 = 0.0;
    let mut solver_errors = 0;
    for _ in 0..1000 {
        let j = rng.random_range(1..=4);
        let a: Vec<f64> = (0..=j).map(|_| rng.random_range(-4.0..4.0)).collect();
        let c = rng.random_range(0.2..3.0);
        match perturbed_solve(&a, &PerturbationSpec::entropy(c), &opts) {
            Ok(q) => {
                let m = a.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v / c));
                let e: Vec<f64> = a.iter().map(|v| (v / c - m).exp()).collect();
                let total: f64 = e.iter().sum();
                let softmax: Vec<f64> = e.iter().map(|v| v / total).collect();
                worst = worst.max(sup(&q, &softmax));
            }
            Err(_) => solver_errors += 1,
        }
    }
    let entropy_ok = worst <= 1e-8 && solver_errors == 0;

    let table = ErrorDraws::new(ErrorFamily::Gumbel, 2, 1_000_000, McStream { seed: 77, stream: 0 });
    let mut outside = 0;
    let mut closed_vs_test: f64 = 0.0;
    for _ in 0..100 {
        let a = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let exact = competing_risks_lambda_gumbel(&a);
        closed_vs_test = closed_vs_test.max(sup(&exact, &competing(&a, 1.0)));
        let mc = table.competing_risks(&a, 1.0).unwrap();
        if (0..2).any(|k| (mc.values[k] - exact[k]).abs() > 3.0 * mc.stderr[k]) {
            outside += 1;
        }
    }
    let cr_ok = outside == 0 && closed_vs_test <= 1e-12;

    let d3 = wdz_gradient_check(&[0.0, 0.0], &SurplusPath::ClosedFormGumbel, 1e-3).unwrap().deviation;
    let b = [0.3, -0.2];
    let r = wdz_gradient_check(&b, &SurplusPath::ClosedFormGumbel, 1e-2).unwrap().deviation
        / wdz_gradient_check(&b, &SurplusPath::ClosedFormGumbel, 1e-3).unwrap().deviation;
    let wdz_ok = d3 <= 1e-6 && (90.0..=110.0).contains(&r);
    Line {
        id: "AC5",
        pass: entropy_ok && cr_ok && wdz_ok,
        detail: format!(
            "entropy vs softmax max error {worst:.2e} on 1000 (a,c) ({solver_errors} solver errors); competing risks vs 10^6-draw MC: {outside}/100 points outside 3 stderr; WDZ deviation {d3:.2e} at step 1e-3, step ratio 1e-2/1e-3 gives {r:.1}"
        ),
    }
}

fn ac6() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut same, mut total) = (0, 0);
    let cases = [
        (3, GenMode::Connected, KernelKind::ArumGumbel),
        (4, GenMode::Connected, KernelKind::CompetingRisksGumbel),
        (5, GenMode::DisconnectedWithinZ, KernelKind::ArumGumbel),
        (6, GenMode::DisconnectedAcrossZ, KernelKind::PerturbedEntropy),
    ];
    for (seed, mode, kernel) in cases {
        let s = gen_scenario_with(seed, Dimensions::new(2, 1, 6, 3), mode, &GenOptions { kernel, ..GenOptions::default() }).unwrap();
        let adm = audit(&s).admissible_z;
        let doc = |t: &Scenario| {
            let o = make_oracle(t).unwrap();
            let d = t.design();
            let mut r = identify_global(&o, &d, &adm, &EngineOptions::default()).unwrap();
            r.lambda_samples = recover_lambda(&o, &d, &r, &sample_lambda_queries(&d, &r, 50, 1)).unwrap();
            io::to_string(&r).unwrap()
        };
        let base = doc(&s);
        for _ in 0..10 {
            let c: Vec<f64> = (0..2).map(|_| dyadic_round(rng.random_range(-3.0..3.0))).collect();
            total += 1;
            if doc(&s.shifted(&c)) == base {
                same += 1;
            }
        }
    }
    Line {
        id: "AC6",
        pass: same == total,
        detail: format!("{same}/{total} shifted oracles (Λ(a+c), h−c; 10 dyadic c per scenario) gave byte-identical results"),
    }
}

fn identify_document(scenario: &str, workers: usize) -> String {
    let cli = Cli::try_parse_from(["indexid", "identify", "--scenario", scenario, "--workers", &workers.to_string()]).unwrap();
    execute(&RunConfig::resolve(cli).unwrap()).unwrap().document
}

fn tamper_all(r: &IdentResult, s: &Scenario) -> (usize, usize) {
    let (mut tried, mut caught) = (0, 0);
    for (ei, e) in r.h_hat.iter().enumerate() {
        for ci in 0..e.provenance.len() + e.alternates.len() {
            for field in 0..4 {
                for k in 0..s.dims.j {
                    let mut t = r.clone();
                    let entry = &mut t.h_hat[ei];
                    let cert = if ci < entry.provenance.len() {
                        &mut entry.provenance[ci]
                    } else {
                        &mut entry.alternates[ci - e.provenance.len()]
                    };
                    let v = match field {
                        0 => &mut cert.implied_h[k],
                        1 => &mut cert.target_w[k],
                        2 => &mut cert.source_w[k],
                        _ => &mut cert.source_h[k],
                    };
                    *v += 1e-6;
                    tried += 1;
                    if !replay(&t, s).unwrap().ok {
                        caught += 1;
                    }
                }
            }
        }
    }
    (tried, caught)
}

fn ac7() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let (mut identical, mut replayed, mut runs) = (0, 0, 0);
    let (mut tried, mut caught) = (0, 0);
    for seed in 0..5u64 {
        let mode = GenMode::ALL[(seed % 3) as usize];
        let s = gen_scenario(seed, Dimensions::new(1 + (seed % 3) as usize, 1, 7, 3), mode).unwrap();
        let path = dir.path().join(format!("s{seed}.json"));
        std::fs::write(&path, io::to_string(&s).unwrap()).unwrap();
        let p = path.to_str().unwrap();
        let serial = identify_document(p, 1);
        let parallel = identify_document(p, 8);
        runs += 1;
        identical += (serial == parallel) as usize;
        let r: IdentResult = io::from_str(&serial).unwrap();
        replayed += replay(&r, &s).unwrap().ok as usize;
        let (t, c) = tamper_all(&r, &s);
        tried += t;
        caught += c;
    }
    Line {
        id: "AC7",
        pass: identical == runs && replayed == runs && caught == tried && tried > 0,
        detail: format!(
            "serial vs 8 workers identical {identical}/{runs}; clean replay {replayed}/{runs}; single-certificate 1e-6 tampering detected {caught}/{tried}"
        ),
    }
}

fn ac8() -> Line {
    let opts = GenOptions { kernel: KernelKind::ArumMc, draws: 1_000_000, ..GenOptions::default() };
    let mut worst_ratio: f64 = 0.0;
    let mut ok = 0;
    let mut slow: f64 = 0.0;
    for seed in 0..5u64 {
        let t = Instant::now();
        let s = gen_scenario_with(seed, Dimensions::new(2, 1, 4, 1 + (seed % 2) as usize), GenMode::Connected, &opts).unwrap();
        let adm = audit(&s).admissible_z;
        let kernel = ScenarioKernel::build(&s.lambda, 2).unwrap();
        let r = identify_global(&make_oracle(&s).unwrap(), &s.design(), &adm, &EngineOptions::default()).unwrap();
        let mut pass = r.h_hat.len() == s.dims.nx;
        for e in &r.h_hat {
            let err = sup(&e.h, s.h.get(e.x).unwrap());
            let bound: f64 =
                e.provenance.iter().map(|c| c.sensitivity * kernel.stderr_bound(c.z).max(c.residual)).sum();
            if bound > 0.0 {
                worst_ratio = worst_ratio.max(err / bound);
            }
            pass &= err <= 5.0 * bound + 1e-12;
        }
        ok += pass as usize;
        slow = slow.max(t.elapsed().as_secs_f64());
    }
    Line {
        id: "AC8",
        pass: ok == 5,
        detail: format!(
            "arum-mc with 10^6 draws: {ok}/5 seeds with every h error within 5x the propagated stderr bound (worst error/bound {worst_ratio:.2}), slowest seed {slow:.1} s"
        ),
    }
}

fn main() {
    // Let `cargo test -- --list` and filters pass through harmlessly.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [fn() -> Line; 8] = [
        || round_trip_criterion("AC1", KernelKind::ArumGumbel),
        || round_trip_criterion("AC2", KernelKind::CompetingRisksGumbel),
        ac3,
        ac4,
        ac5,
        ac6,
        ac7,
        ac8,
    ];
    let mut failed = 0;
    for f in criteria {
        let t = Instant::now();
        let line = f();
        println!("{} {} {} [{:.1} s]", line.id, if line.pass { "PASS" } else { "FAIL" }, line.detail, t.elapsed().as_secs_f64());
        failed += (!line.pass) as usize;
    }
    println!("acceptance: {} of 8 criteria pass", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
