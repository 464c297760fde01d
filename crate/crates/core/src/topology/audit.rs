use serde::{Deserialize, Serialize};

use super::graph::{a_support_z, is_connected, mz_overlap_graph, OverlapGraph};
use crate::kernels::{injectivity_probe, InjectivityReport, ProbeOptions, ScenarioKernel};
use crate::model::{ModelError, Scenario, XId, ZId, SPEC_VERSION};
use crate::numerics::mix_keys;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    /// Points drawn per control by the injectivity probe.
    pub probe_samples: usize,
    pub seed: u64,
    pub probe: ProbeOptions,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { probe_samples: 256, seed: 0, probe: ProbeOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectivityCheck {
    pub z: ZId,
    pub pass: bool,
    pub report: InjectivityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectednessCheck {
    pub z: ZId,
    pub pass: bool,
    pub components: usize,
    /// x's of each component of the true `A(z)`.
    pub x_components: Vec<Vec<XId>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapCheck {
    pub pass: bool,
    /// Controls the graph is checked over (those passing injectivity).
    pub over: Vec<ZId>,
    pub components: Vec<Vec<ZId>>,
    pub graph: OverlapGraph<ZId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCheck {
    pub pass: bool,
    pub g_w0: Option<Vec<f64>>,
    pub in_support: bool,
    pub h_x0_zero: bool,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub spec_version: u32,
    pub seed: u64,
    pub injectivity: Vec<InjectivityCheck>,
    pub connectedness: Vec<ConnectednessCheck>,
    pub overlap: OverlapCheck,
    pub seed_check: SeedCheck,
    /// `Z₀`: controls at which the injectivity probe found no collision.
    pub admissible_z: Vec<ZId>,
    pub all_pass: bool,
}

impl AuditReport {
    pub fn injectivity_pass(&self) -> bool {
        self.injectivity.iter().all(|c| c.pass)
    }

    pub fn connectedness_pass(&self) -> bool {
        self.connectedness.iter().all(|c| c.pass)
    }

    /// Short names of the failing assumptions.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.injectivity_pass() {
            out.push("injectivity");
        }
        if !self.connectedness_pass() {
            out.push("connectedness");
        }
        if !self.overlap.pass {
            out.push("overlap");
        }
        if !self.seed_check.pass {
            out.push("normalization");
        }
        out
    }
}

/// Checks injectivity (probe on each true `A(z)`), connectedness of each
/// `A(z)`, connectivity of the control overlap graph over `Z₀`, and the
/// normalization triple.
pub fn assumption_audit(scenario: &Scenario, opts: &AuditOptions) -> Result<AuditReport, ModelError> {
    scenario.validate()?;
    let kernel = ScenarioKernel::build(&scenario.lambda, scenario.dims.j)?;
    let supports = &scenario.supports;

    let mut injectivity = Vec::new();
    let mut connectedness = Vec::new();
    for &z in &scenario.z_points {
        let (a_z, owners) = a_support_z(supports, &scenario.h, z);

        let report = if a_z.is_empty() {
            InjectivityReport { tested_pairs: 0, worst_separation: f64::INFINITY, collision: None }
        } else {
            let map = kernel.map_at(z)?;
            let seed = mix_keys(&[opts.seed, z.0 as u64]);
            injectivity_probe(&map, &a_z, opts.probe_samples, seed, &opts.probe)?
        };
        injectivity.push(InjectivityCheck { z, pass: report.collision.is_none(), report });

        let conn = is_connected(&a_z);
        let mut x_components: Vec<Vec<XId>> = vec![Vec::new(); conn.components];
        for (label, x) in conn.labels.iter().zip(&owners) {
            if !x_components[*label].contains(x) {
                x_components[*label].push(*x);
            }
        }
        x_components.iter_mut().for_each(|c| c.sort());
        connectedness.push(ConnectednessCheck {
            z,
            pass: conn.connected,
            components: conn.components,
            x_components,
        });
    }

    let admissible_z: Vec<ZId> = injectivity.iter().filter(|c| c.pass).map(|c| c.z).collect();
    let graph = mz_overlap_graph(supports, &scenario.z_points);
    let components = graph.components_within(&admissible_z);
    let overlap = OverlapCheck { pass: components.len() == 1, over: admissible_z.clone(), components, graph };

    let seed_check = check_seed(scenario);
    let all_pass = injectivity.iter().all(|c| c.pass)
        && connectedness.iter().all(|c| c.pass)
        && overlap.pass
        && seed_check.pass;

    Ok(AuditReport {
        spec_version: SPEC_VERSION,
        seed: opts.seed,
        injectivity,
        connectedness,
        overlap,
        seed_check,
        admissible_z,
        all_pass,
    })
}

fn check_seed(scenario: &Scenario) -> SeedCheck {
    let s = &scenario.seed_triple;
    let h_x0_zero = scenario.h.get(s.x0).is_ok_and(|h| h.iter().all(|v| *v == 0.0));
    match scenario.g.apply(&s.w0) {
        Err(e) => SeedCheck { pass: false, g_w0: None, in_support: false, h_x0_zero, message: e.to_string() },
        Ok(u) => {
            let in_support = scenario.supports.get(s.x0, s.z0).contains_interior(&u);
            let message = if !in_support {
                format!("g(w0) is not interior to G({},{})", s.x0, s.z0)
            } else if !h_x0_zero {
                format!("h({}) is not zero", s.x0)
            } else {
                "ok".to_string()
            };
            SeedCheck { pass: in_support && h_x0_zero, g_w0: Some(u), in_support, h_x0_zero, message }
        }
    }
}
