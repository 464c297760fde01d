//! Batch front end: `gen`, `audit`, `identify`, `verify`, `kernel-test` and
//! `replay`, each reading and writing versioned JSON documents.
//!
//! Settings resolve as flag, then `INDEXID_*` environment variable, then the
//! `--config` file (JSON, or TOML by extension), then the built-in default.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use indexid::engine::{
    identify_global, recover_lambda, replay, sample_lambda_queries, verify_against_truth, EngineError,
    EngineOptions, IdentResult, VerifyOptions,
};
use indexid::kernels::selftest::run_suite;
use indexid::model::{gen_scenario_with, io, Dimensions, GKind, GenMode, GenOptions, KernelKind, Scenario, SPEC_VERSION};
use indexid::oracle::{make_oracle, PiOracle};
use indexid::topology::{assumption_audit, AuditOptions};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_ASSUMPTION: u8 = 3;
pub const EXIT_TOLERANCE: u8 = 4;
pub const EXIT_REPLAY: u8 = 5;
pub const EXIT_VERSION: u8 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Gen,
    Audit,
    Identify,
    Verify,
    KernelTest,
    Replay,
}

#[derive(Debug, Parser)]
#[command(name = "indexid", version, about = "Identification of additive index models from oracle access")]
pub struct Cli {
    pub command: Command,

    /// JSON or TOML file with any of the settings below.
    #[arg(long, env = "INDEXID_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "INDEXID_SEED")]
    pub seed: Option<u64>,
    /// Output document; stdout when absent.
    #[arg(long, env = "INDEXID_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "INDEXID_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, env = "INDEXID_TOL_MATCH")]
    pub tol_match: Option<f64>,
    /// Maximum number of oracle queries during identification.
    #[arg(long, env = "INDEXID_BUDGET")]
    pub budget: Option<u64>,
    #[arg(long, env = "INDEXID_SCENARIO")]
    pub scenario: Option<PathBuf>,
    /// Identification result, for `verify` and `replay`.
    #[arg(long, env = "INDEXID_RESULT")]
    pub result: Option<PathBuf>,

    #[arg(long, env = "INDEXID_MODE")]
    pub mode: Option<String>,
    #[arg(long, env = "INDEXID_J")]
    pub j: Option<usize>,
    #[arg(long, env = "INDEXID_DX")]
    pub dx: Option<usize>,
    #[arg(long, env = "INDEXID_NX")]
    pub nx: Option<usize>,
    #[arg(long, env = "INDEXID_NZ")]
    pub nz: Option<usize>,
    #[arg(long, env = "INDEXID_KERNEL")]
    pub kernel: Option<String>,
    #[arg(long, env = "INDEXID_G")]
    pub g: Option<String>,
    #[arg(long, env = "INDEXID_DRAWS")]
    pub draws: Option<u64>,
    /// Number of Λ queries recorded by `identify`.
    #[arg(long, env = "INDEXID_LAMBDA_QUERIES")]
    pub lambda_queries: Option<usize>,
}

/// The config file: every field optional, same names as the flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    #[serde(alias = "tol_match")]
    pub tol_match: Option<f64>,
    pub budget: Option<u64>,
    pub scenario: Option<PathBuf>,
    pub result: Option<PathBuf>,
    pub mode: Option<String>,
    pub j: Option<usize>,
    pub dx: Option<usize>,
    pub nx: Option<usize>,
    pub nz: Option<usize>,
    pub kernel: Option<String>,
    pub g: Option<String>,
    pub draws: Option<u64>,
    #[serde(alias = "lambda_queries")]
    pub lambda_queries: Option<usize>,
    #[serde(alias = "format_version")]
    pub format_version: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub result: Option<PathBuf>,
    pub engine: EngineOptions,
    pub mode: GenMode,
    pub dims: Dimensions,
    pub kernel: KernelKind,
    pub g: GKind,
    pub draws: u64,
    pub lambda_queries: usize,
    pub format_version: u32,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Assumption(String),
    #[error("{0}")]
    Tolerance(String),
    #[error("{0}")]
    Replay(String),
    #[error("{0}")]
    Version(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) | CliError::Parse(_) | CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Assumption(_) => EXIT_ASSUMPTION,
            CliError::Tolerance(_) => EXIT_TOLERANCE,
            CliError::Replay(_) => EXIT_REPLAY,
            CliError::Version(_) => EXIT_VERSION,
        }
    }

    pub fn reason(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Parse(_) => "parse",
            CliError::Runtime(_) => "runtime",
            CliError::Assumption(_) => "assumption-failure",
            CliError::Tolerance(_) => "tolerance-breach",
            CliError::Replay(_) => "replay-failure",
            CliError::Version(_) => "incompatible-version",
        }
    }

    /// The machine-readable line written to stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "status": "error", "reason": self.reason(), "message": self.to_string() }).to_string()
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::InvalidSeed(_) => CliError::Assumption(e.to_string()),
            EngineError::Version { .. } => CliError::Version(e.to_string()),
            EngineError::Options(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn parse_named<T: std::str::FromStr<Err = String>>(what: &str, v: Option<String>, default: T) -> Result<T, CliError> {
    match v {
        None => Ok(default),
        Some(s) => s.parse().map_err(|e| CliError::Usage(format!("--{what}: {e}"))),
    }
}

fn read_config_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

impl RunConfig {
    pub fn resolve(cli: Cli) -> Result<RunConfig, CliError> {
        let file = match &cli.config {
            Some(p) => read_config_file(p)?,
            None => FileConfig::default(),
        };
        let defaults = EngineOptions::default();
        let engine = EngineOptions {
            tol_match: cli.tol_match.or(file.tol_match),
            workers: cli.workers.or(file.workers).unwrap_or(defaults.workers),
            budget: cli.budget.or(file.budget),
            ..defaults
        };
        let format_version = file.format_version.unwrap_or(SPEC_VERSION);
        let config = RunConfig {
            command: cli.command,
            seed: cli.seed.or(file.seed).unwrap_or(0),
            out: cli.out.or(file.out),
            scenario: cli.scenario.or(file.scenario),
            result: cli.result.or(file.result),
            engine,
            mode: parse_named("mode", cli.mode.or(file.mode), GenMode::Connected)?,
            dims: Dimensions::new(
                cli.j.or(file.j).unwrap_or(2),
                cli.dx.or(file.dx).unwrap_or(1),
                cli.nx.or(file.nx).unwrap_or(5),
                cli.nz.or(file.nz).unwrap_or(2),
            ),
            kernel: parse_named("kernel", cli.kernel.or(file.kernel), KernelKind::ArumGumbel)?,
            g: parse_named("g", cli.g.or(file.g), GKind::Identity)?,
            draws: cli.draws.or(file.draws).unwrap_or(GenOptions::default().draws),
            lambda_queries: cli.lambda_queries.or(file.lambda_queries).unwrap_or(120),
            format_version,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.engine.workers == 0 {
            return Err(CliError::Usage("worker count must be at least 1".into()));
        }
        if let Some(t) = self.engine.tol_match {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CliError::Usage(format!("tol-match must be positive, got {t}")));
            }
        }
        if self.format_version != SPEC_VERSION {
            return Err(CliError::Version(format!(
                "report format version {} is not supported (this build writes {SPEC_VERSION})",
                self.format_version
            )));
        }
        let need = |p: &Option<PathBuf>, flag: &str| {
            if p.is_none() {
                Err(CliError::Usage(format!("{:?} needs --{flag}", self.command).to_lowercase()))
            } else {
                Ok(())
            }
        };
        match self.command {
            Command::Gen | Command::KernelTest => Ok(()),
            Command::Audit | Command::Identify => need(&self.scenario, "scenario"),
            Command::Verify | Command::Replay => {
                need(&self.scenario, "scenario")?;
                need(&self.result, "result")
            }
        }
    }
}

/// Wrapper for every report other than the scenario and result documents.
#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub spec_version: u32,
    pub kind: String,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub timestamp: u64,
    pub body: T,
}

fn envelope<T: Serialize>(kind: &str, body: T) -> Result<String, CliError> {
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let env = Envelope { spec_version: SPEC_VERSION, kind: kind.to_string(), timestamp, body };
    io::to_string(&env).map_err(|e| CliError::Runtime(e.to_string()))
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run never leaves a partial document.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io_err = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(text.as_bytes()).map_err(io_err)?;
    tmp.write_all(b"\n").map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Reads a versioned document, checking `spec_version` before the full
/// parse so that a document from another version is reported as such.
pub fn read_document<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{what} {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{what} {}: {e}", path.display())))?;
    match value.get("spec_version").and_then(Value::as_u64) {
        Some(v) if v == SPEC_VERSION as u64 => {}
        Some(v) => {
            return Err(CliError::Version(format!(
                "{what} {} has spec_version {v}, expected {SPEC_VERSION}",
                path.display()
            )))
        }
        None => return Err(CliError::Parse(format!("{what} {} has no spec_version", path.display()))),
    }
    io::from_str(&text).map_err(|e| CliError::Parse(format!("{what} {}: {e}", path.display())))
}

/// What a successful command produced.
#[derive(Debug)]
pub struct Outcome {
    pub document: String,
    /// Set when the command ran but its verdict is a failure.
    pub verdict: Option<CliError>,
}

fn ok(document: String) -> Outcome {
    Outcome { document, verdict: None }
}

#[derive(Serialize)]
struct VerifyBody<'a> {
    #[serde(flatten)]
    report: &'a indexid::engine::VerifyReport,
    oracle_queries: u64,
    worst_offender: Option<String>,
}

fn load_scenario(config: &RunConfig) -> Result<Scenario, CliError> {
    let s: Scenario = read_document(config.scenario.as_deref().expect("validated"), "scenario")?;
    s.validate().map_err(|e| CliError::Parse(e.to_string()))?;
    Ok(s)
}

fn audit_options(config: &RunConfig) -> AuditOptions {
    AuditOptions { seed: config.seed, ..AuditOptions::default() }
}

pub fn execute(config: &RunConfig) -> Result<Outcome, CliError> {
    match config.command {
        Command::Gen => {
            let opts = GenOptions { kernel: config.kernel, g: config.g, draws: config.draws, ..GenOptions::default() };
            let s = gen_scenario_with(config.seed, config.dims, config.mode, &opts)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(ok(io::to_string(&s).map_err(|e| CliError::Runtime(e.to_string()))?))
        }
        Command::Audit => {
            let s = load_scenario(config)?;
            let report = assumption_audit(&s, &audit_options(config)).map_err(|e| CliError::Runtime(e.to_string()))?;
            let verdict = (!report.all_pass)
                .then(|| CliError::Assumption(format!("assumptions failed: {}", report.failures().join(", "))));
            Ok(Outcome { document: envelope("audit", &report)?, verdict })
        }
        Command::Identify => {
            let s = load_scenario(config)?;
            let audit = assumption_audit(&s, &audit_options(config)).map_err(|e| CliError::Runtime(e.to_string()))?;
            let oracle = make_oracle(&s).map_err(|e| CliError::Runtime(e.to_string()))?;
            let design = s.design();
            let mut result = identify_global(&oracle, &design, &audit.admissible_z, &config.engine)?;
            let queries = sample_lambda_queries(&design, &result, config.lambda_queries, config.seed);
            result.lambda_samples = recover_lambda(&oracle, &design, &result, &queries)?;
            result.oracle_queries = oracle.queries();
            Ok(ok(io::to_string(&result).map_err(|e| CliError::Runtime(e.to_string()))?))
        }
        Command::Verify => {
            let s = load_scenario(config)?;
            let result: IdentResult = read_document(config.result.as_deref().expect("validated"), "result")?;
            let report = verify_against_truth(&result, &s, &VerifyOptions::default())?;
            let worst = worst_offender(&result, &s, &report);
            let verdict = (!report.pass).then(|| {
                CliError::Tolerance(format!("verification failed: {}", worst.clone().unwrap_or_default()))
            });
            let body = VerifyBody { report: &report, oracle_queries: result.oracle_queries, worst_offender: worst };
            Ok(Outcome { document: envelope("verify", &body)?, verdict })
        }
        Command::KernelTest => {
            let rows = run_suite(config.seed);
            let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
            let verdict =
                (!failed.is_empty()).then(|| CliError::Tolerance(format!("kernel rows failed: {}", failed.join(", "))));
            Ok(Outcome { document: envelope("kernel-test", &rows)?, verdict })
        }
        Command::Replay => {
            let s = load_scenario(config)?;
            let result: IdentResult = read_document(config.result.as_deref().expect("validated"), "result")?;
            let report = replay(&result, &s)?;
            let verdict = (!report.ok).then(|| CliError::Replay(report.failures.join("; ")));
            Ok(Outcome { document: envelope("replay", &report)?, verdict })
        }
    }
}

fn worst_offender(result: &IdentResult, s: &Scenario, report: &indexid::engine::VerifyReport) -> Option<String> {
    if let Some((z, x)) = report.missing_nodes.first() {
        return Some(format!("({x},{z}) is identifiable but was not identified"));
    }
    if let Some((z, x)) = report.extra_nodes.first() {
        return Some(format!("({x},{z}) was identified but is not identifiable"));
    }
    let h0 = s.h.get(result.x0).ok()?;
    let worst = result
        .h_hat
        .iter()
        .filter_map(|e| {
            let truth = s.h.get(e.x).ok()?;
            let err = e.h.iter().zip(truth).zip(h0).fold(0.0_f64, |m, ((a, b), c)| m.max((a - (b - c)).abs()));
            Some((err, e.x))
        })
        .max_by(|a, b| a.0.total_cmp(&b.0));
    worst.map(|(err, x)| format!("h({x}) error {err:e}; largest Λ error {:e}", report.lambda_max_error))
}

/// Parses arguments, runs the command, writes the output and returns the
/// exit code. Errors go to stderr as one JSON line.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            eprintln!("{}", CliError::Usage(e.to_string().trim().to_string()).to_json());
            return EXIT_USAGE;
        }
    };
    match RunConfig::resolve(cli).and_then(|c| run(&c)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn run(config: &RunConfig) -> Result<u8, CliError> {
    let outcome = execute(config)?;
    match &config.out {
        Some(path) => write_atomic(path, &outcome.document)?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{}", outcome.document).map_err(|e| CliError::Io(format!("stdout: {e}")))?;
        }
    }
    match outcome.verdict {
        None => Ok(EXIT_OK),
        Some(e) => {
            eprintln!("{}", e.to_json());
            Ok(e.exit_code())
        }
    }
}
