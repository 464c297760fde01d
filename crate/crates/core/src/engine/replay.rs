use serde::{Deserialize, Serialize};

use super::{EngineError, IdentResult, MatchCertificate};
use crate::model::{Scenario, SPEC_VERSION};
use crate::numerics::sup_dist;
use crate::oracle::{make_oracle, PiOracle};

/// Slack when recomputing `source_h + g(w*) − g(w)` from a certificate.
const IMPLIED_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub ok: bool,
    pub certificates: usize,
    pub failures: Vec<String>,
}

fn check_certificate(
    scenario: &Scenario,
    oracle: &dyn PiOracle,
    cert: &MatchCertificate,
    tol_match: f64,
) -> Result<(), String> {
    let g = &scenario.g;
    let gs = g.apply(&cert.source_w).map_err(|e| e.to_string())?;
    let gt = g.apply(&cert.target_w).map_err(|e| e.to_string())?;
    let implied = super::implied_h(&cert.source_h, &gs, &gt);
    let d = sup_dist(&implied, &cert.implied_h);
    if !(d <= IMPLIED_SLACK) || implied.len() != cert.implied_h.len() {
        return Err(format!("implied h does not follow from the stored points (off by {d:e})"));
    }
    let ps = oracle.query(&cert.source_w, cert.source_x, cert.z).map_err(|e| e.to_string())?;
    let pt = oracle.query(&cert.target_w, cert.target_x, cert.z).map_err(|e| e.to_string())?;
    let r = sup_dist(&ps, &pt);
    if !(r <= tol_match) {
        return Err(format!("residual {r:e} exceeds tol_match {tol_match:e}"));
    }
    Ok(())
}

/// Re-checks every certificate of `result` against a fresh oracle built from
/// `scenario`: chain continuity, the implied `h`, and the matching residual.
pub fn replay(result: &IdentResult, scenario: &Scenario) -> Result<ReplayReport, EngineError> {
    if result.spec_version != SPEC_VERSION {
        return Err(EngineError::Version { found: result.spec_version, expected: SPEC_VERSION });
    }
    let mut failures = Vec::new();
    let design = scenario.design();
    if design.fingerprint() != result.design_fingerprint {
        failures.push("design fingerprint does not match the scenario".to_string());
        return Ok(ReplayReport { ok: false, certificates: 0, failures });
    }
    let oracle = make_oracle(scenario)?;
    let tol = result.tolerances;
    let zero = vec![0.0; scenario.dims.j];
    let mut checked = 0;
    for e in &result.h_hat {
        let mut prev_x = result.x0;
        let mut prev_h = zero.as_slice();
        for (i, cert) in e.provenance.iter().enumerate() {
            let name = format!("certificate {}#{i} ({} -> {} at {})", e.x, cert.source_x, cert.target_x, cert.z);
            checked += 1;
            if cert.source_x != prev_x || cert.source_h.as_slice() != prev_h {
                failures.push(format!("{name}: chain is broken"));
            }
            if let Err(m) = check_certificate(scenario, &oracle, cert, tol.tol_match) {
                failures.push(format!("{name}: {m}"));
            }
            prev_x = cert.target_x;
            prev_h = &cert.implied_h;
        }
        if prev_x != e.x || e.h.as_slice() != prev_h {
            failures.push(format!("{}: h does not equal the end of its chain", e.x));
        }
        for (i, cert) in e.alternates.iter().enumerate() {
            let name = format!("alternate {}#{i} ({} -> {} at {})", e.x, cert.source_x, cert.target_x, cert.z);
            checked += 1;
            if cert.target_x != e.x {
                failures.push(format!("{name}: targets another x"));
            }
            if let Err(m) = check_certificate(scenario, &oracle, cert, tol.tol_match) {
                failures.push(format!("{name}: {m}"));
            }
            let d = sup_dist(&cert.implied_h, &e.h);
            if !(d <= tol.tol_conflict) {
                failures.push(format!("{name}: conflicts with h by {d:e}"));
            }
        }
    }
    Ok(ReplayReport { ok: failures.is_empty(), certificates: checked, failures })
}
