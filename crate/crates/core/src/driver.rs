//! Run configuration, orchestration and machine-readable outputs for the
//! command-line front end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::linear::{
    self, apply_constant_halfline, assemble_truncated, fredholm_index, right_inverse_apply,
    WindowSeq,
};
use crate::mesh::{ParameterMesh, ParameterPoint};
use crate::models::{self, ModelSpec, TabulatedFamily};
use crate::nonlinear::{certify_bifurcation, BifurcationReport, SweepRecord, Tolerances};
use crate::spectral::{hyperbolic_splitting, spectral_projector_contour};
use nalgebra::DVector;

/// Mesh part of a run configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshConfig {
    #[serde(default = "default_mesh_k")]
    pub k: usize,
    #[serde(rename = "M", default = "default_mesh_m")]
    pub m: usize,
    /// Number of extra dyadic refinements applied to every generator loop.
    #[serde(default)]
    pub refinements: usize,
}

fn default_mesh_k() -> usize {
    1
}

fn default_mesh_m() -> usize {
    128
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            k: 1,
            m: 128,
            refinements: 0,
        }
    }
}

/// Output locations; missing paths mean "do not write".
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub sweep_csv: Option<PathBuf>,
}

/// Complete description of a certification or sweep run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub model: ModelSpec,
    #[serde(default)]
    pub mesh: MeshConfig,
    /// Half-length of the lattice window.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub outputs: OutputConfig,
    /// Matrix data for the tabulated model.
    #[serde(default)]
    pub tabulated: Option<TabulatedFamily>,
}

fn default_schema_version() -> u32 {
    1
}

fn default_window() -> usize {
    50
}

impl RunConfig {
    pub fn for_model(model: ModelSpec) -> Self {
        let k = model.k;
        Self {
            schema_version: 1,
            model,
            mesh: MeshConfig {
                k,
                ..MeshConfig::default()
            },
            window: default_window(),
            tolerances: Tolerances::default(),
            outputs: OutputConfig::default(),
            tabulated: None,
        }
    }
}

/// Parses a JSON run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
    if cfg.schema_version != 1 {
        return Err(Error::Parse(format!(
            "unsupported config schema_version {}",
            cfg.schema_version
        )));
    }
    if cfg.mesh.k != cfg.model.k {
        return Err(Error::Parse(format!(
            "mesh.k = {} does not match model.k = {}",
            cfg.mesh.k, cfg.model.k
        )));
    }
    Ok(cfg)
}

/// Builds the parameter mesh a config describes.
pub fn build_mesh(cfg: &RunConfig) -> Result<ParameterMesh> {
    let mut mesh = ParameterMesh::torus(cfg.mesh.k, cfg.mesh.m)?;
    for _ in 0..cfg.mesh.refinements {
        for loop_index in 0..mesh.loop_count() {
            mesh = mesh.refine_loop(loop_index, 2)?;
        }
    }
    Ok(mesh)
}

/// Runs the full certification pipeline for a config.
pub fn run_certify(cfg: &RunConfig) -> Result<BifurcationReport> {
    let fam = models::instantiate(&cfg.model, cfg.tabulated.as_ref())?;
    let mesh = build_mesh(cfg)?;
    certify_bifurcation(&fam, &mesh, cfg.window, &cfg.tolerances)
}

/// Runs only the singular-value sweep for a config.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRecord>> {
    let fam = models::instantiate(&cfg.model, cfg.tabulated.as_ref())?;
    let mesh = build_mesh(cfg)?;
    let outcome = crate::nonlinear::sweep(&fam, &mesh, cfg.window, &cfg.tolerances)?;
    Ok(outcome.records)
}

/// Renders sweep records as CSV with 17 significant digits, so repeated runs
/// are byte-identical.
pub fn sweep_to_csv(k: usize, records: &[SweepRecord]) -> String {
    let mut out = String::from("vertex_index");
    for j in 0..k {
        let _ = write!(out, ",theta_{j}");
    }
    out.push_str(",sigma_min,kernel_dim\n");
    for record in records {
        let _ = write!(out, "{}", record.vertex_index);
        for theta in &record.theta {
            let _ = write!(out, ",{theta:.16e}");
        }
        let _ = writeln!(out, ",{:.16e},{}", record.sigma_min, record.kernel_dim);
    }
    out
}

/// Parses a matrix from text: rows separated by `;` or newlines, entries by
/// whitespace or commas.
pub fn parse_matrix_text(text: &str) -> Result<nalgebra::DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .split([';', '\n'])
        .map(str::trim)
        .filter(|row| !row.is_empty())
        .map(|row| {
            row.split([' ', '\t', ','])
                .filter(|tok| !tok.is_empty())
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad matrix entry '{tok}'")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix".into()));
    }
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Parse(format!(
            "expected a square matrix, got rows of lengths {:?}",
            rows.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(nalgebra::DMatrix::from_row_slice(n, n, &flat))
}

/// Named oracle suites runnable from the CLI and the acceptance tests.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum VerifySuite {
    Index,
    RightInverse,
    Splice,
    Adjoint,
    Contour,
    All,
}

impl std::str::FromStr for VerifySuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "index" => Ok(Self::Index),
            "right_inverse" => Ok(Self::RightInverse),
            "splice" => Ok(Self::Splice),
            "adjoint" => Ok(Self::Adjoint),
            "contour" => Ok(Self::Contour),
            "all" => Ok(Self::All),
            other => Err(Error::Parse(format!("unknown verify suite '{other}'"))),
        }
    }
}

/// Result of one verification suite.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Seeds of failing cases, for reproduction.
    pub failures: Vec<u64>,
    pub detail: String,
}

/// Runs the requested oracle suites on a seeded random corpus.
pub fn run_verify(suite: VerifySuite, seed: u64) -> Vec<SuiteReport> {
    let mut reports = Vec::new();
    let all = suite == VerifySuite::All;
    if all || suite == VerifySuite::Contour {
        reports.push(contour_suite(seed));
    }
    if all || suite == VerifySuite::Index {
        reports.push(index_suite(seed));
    }
    if all || suite == VerifySuite::RightInverse {
        reports.push(right_inverse_suite(seed));
    }
    if all || suite == VerifySuite::Splice {
        reports.push(splice_suite(seed));
    }
    if all || suite == VerifySuite::Adjoint {
        reports.push(adjoint_suite(seed));
    }
    reports
}

fn suite_report(
    name: &'static str,
    cases: usize,
    failures: Vec<u64>,
    worst: f64,
    bound: f64,
) -> SuiteReport {
    SuiteReport {
        name,
        passed: failures.is_empty(),
        cases,
        detail: format!("worst defect {worst:.3e} (bound {bound:.0e})"),
        failures,
    }
}

/// Ordered-Schur projector against the contour quadrature, 200 matrices.
fn contour_suite(seed: u64) -> SuiteReport {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for case in 0..200u64 {
        let case_seed = seed.wrapping_add(case);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let n = 1 + (case as usize % 4);
        let (a, _) = models::corpus::random_hyperbolic_matrix(&mut rng, n, 0.05);
        let defect = match (hyperbolic_splitting(&a, 1e-8), spectral_projector_contour(&a, 256)) {
            (Ok(split), Ok(contour)) => (&split.ps - &contour.map(|z| z.re)).norm(),
            _ => f64::INFINITY,
        };
        worst = worst.max(defect);
        if defect.is_nan() || defect > 1e-8 {
            failures.push(case_seed);
        }
    }
    suite_report("contour", 200, failures, worst, 1e-8)
}

/// Structural identity `cols - rows = index` on 200 random families.
fn index_suite(seed: u64) -> SuiteReport {
    let mut failures = Vec::new();
    for case in 0..200u64 {
        let case_seed = seed.wrapping_add(case);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let n = 1 + (case as usize % 4);
        let k_plus = rng.random_range(0..=n);
        let k_minus = rng.random_range(0..=n);
        let lambda = ParameterPoint::circle(0.0).expect("valid angle");
        let ok = models::build_random(case_seed, n, k_plus, k_minus, 0.5)
            .and_then(|fam| {
                let op = assemble_truncated(&fam, &lambda, fam.decay_probe())?;
                let idx = fredholm_index(&fam, &lambda)?;
                Ok(op.structural_index() == idx && idx == k_plus as i64 - k_minus as i64)
            })
            .unwrap_or(false);
        if !ok {
            failures.push(case_seed);
        }
    }
    suite_report("index", 200, failures, 0.0, 0.0)
}

/// `L (M x) = x` on the interior for the explicit right inverse, 100 pairs.
fn right_inverse_suite(seed: u64) -> SuiteReport {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let case_seed = seed.wrapping_add(case);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let n = 1 + (case as usize % 4);
        let (a, _) = models::corpus::random_hyperbolic_matrix(&mut rng, n, 0.1);
        let x: Vec<DVector<f64>> = (0..=40)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let defect = match right_inverse_apply(&a, &x) {
            Ok(mx) => {
                let lmx = apply_constant_halfline(&a, &mx);
                (0..=30)
                    .map(|k| (&lmx[k] - &x[k]).amax())
                    .fold(0.0, f64::max)
            }
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(defect);
        if defect.is_nan() || defect > 1e-8 {
            failures.push(case_seed);
        }
    }
    suite_report("right_inverse", 100, failures, worst, 1e-8)
}

/// Direct application versus split-and-recombine on piecewise families.
fn splice_suite(seed: u64) -> SuiteReport {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let case_seed = seed.wrapping_add(case);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let n = 1 + (case as usize % 4);
        let fam = match models::build_random(case_seed, n, rng.random_range(0..=n), rng.random_range(0..=n), 0.5)
        {
            Ok(fam) => fam.piecewise(),
            Err(_) => {
                failures.push(case_seed);
                continue;
            }
        };
        let lambda = ParameterPoint::circle(rng.random_range(-3.0..3.0)).expect("valid angle");
        let mut x = WindowSeq::symmetric(30, n);
        for idx in -30i64..=30 {
            *x.state_mut(idx) = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        }
        let defect = linear::splice_check(&fam, &lambda, &x);
        worst = worst.max(defect);
        if defect.is_nan() || defect > 1e-12 {
            failures.push(case_seed);
        }
    }
    suite_report("splice", 100, failures, worst, 1e-12)
}

/// Summation-by-parts pairing of the operator with its dual.
fn adjoint_suite(seed: u64) -> SuiteReport {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let case_seed = seed.wrapping_add(case);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let n = 1 + (case as usize % 4);
        let fam = match models::build_random(case_seed, n, 1.min(n), 1.min(n), 0.5) {
            Ok(fam) => fam,
            Err(_) => {
                failures.push(case_seed);
                continue;
            }
        };
        let lambda = ParameterPoint::circle(rng.random_range(-3.0..3.0)).expect("valid angle");
        let mut x = WindowSeq::symmetric(20, n);
        let mut y = WindowSeq::symmetric(20, n);
        for idx in -18i64..=18 {
            *x.state_mut(idx) = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            *y.state_mut(idx) = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        }
        let defect = linear::pairing_defect(&fam, &lambda, &x, &y);
        worst = worst.max(defect);
        if defect.is_nan() || defect > 1e-10 {
            failures.push(case_seed);
        }
    }
    suite_report("adjoint", 100, failures, worst, 1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_with_defaults() {
        let text = r#"{
            "model": {"name": "torus_example", "k": 1, "params": {"c": 0.05}},
            "mesh": {"k": 1, "M": 64}
        }"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.window, 50);
        assert_eq!(cfg.mesh.m, 64);
        assert_eq!(cfg.tolerances.rank, 1e-8);
        let mesh = build_mesh(&cfg).unwrap();
        assert_eq!(mesh.vertices().len(), 64);
    }

    #[test]
    fn config_rejects_mismatched_k() {
        let text = r#"{
            "model": {"name": "torus_example", "k": 2},
            "mesh": {"k": 1, "M": 64}
        }"#;
        assert!(matches!(parse_config(text), Err(Error::Parse(_))));
    }

    #[test]
    fn csv_format_is_stable() {
        let records = vec![SweepRecord {
            vertex_index: 3,
            theta: vec![std::f64::consts::PI],
            sigma_min: 0.125,
            kernel_dim: 1,
        }];
        let csv = sweep_to_csv(1, &records);
        let expected = "vertex_index,theta_0,sigma_min,kernel_dim\n3,3.1415926535897931e0,1.2500000000000000e-1,1\n";
        assert_eq!(csv, expected);
    }

    #[test]
    fn matrix_text_parsing() {
        let m = parse_matrix_text("0.5 0; 0 2").unwrap();
        assert_eq!(m[(0, 0)], 0.5);
        assert_eq!(m[(1, 1)], 2.0);
        assert!(parse_matrix_text("1 2; 3").is_err());
        assert!(parse_matrix_text("").is_err());
        assert!(parse_matrix_text("a b; c d").is_err());
    }

    #[test]
    fn verify_suites_pass_on_default_seed() {
        for report in run_verify(VerifySuite::All, 0xd1c0) {
            assert!(
                report.passed,
                "suite {} failed: {:?} ({})",
                report.name, report.failures, report.detail
            );
        }
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!("bogus".parse::<VerifySuite>().is_err());
        assert_eq!("splice".parse::<VerifySuite>().unwrap(), VerifySuite::Splice);
    }
}
