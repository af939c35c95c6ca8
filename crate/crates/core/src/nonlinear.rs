//! Window residual/Jacobian of the nonlinear lattice map, Newton search for
//! homoclinic solutions, parameter sweeps and end-to-end certification.
//!
//! The map under study is `(F x)_n = x_{n+1} - f_n(lambda, x_n)` on a window
//! `[-M, M]`, closed with the same asymptotic-projector boundary rows as the
//! linear finite section. Its Jacobian at the trivial branch equals the
//! truncated linearization by construction (shared assembly path), so the
//! singular values monitored during sweeps are exactly the linear kernel
//! indicators.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use std::sync::Arc;

use crate::bundle::{self, BifurcationCertificate, BundleKind, End};
use crate::error::{Error, Result};
use crate::linear::{
    self, assemble_truncated, kernel_diagnostics, KernelDiagnostics, LinearFamily, WindowSeq,
};
use crate::mesh::{ParameterMesh, ParameterPoint};

/// Evaluator of the lattice map `f_n(lambda, x)`.
pub type StateFn = Arc<dyn Fn(i64, &ParameterPoint, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Evaluator of the state derivative `Df_n(lambda, x)`.
pub type StateJacFn = Arc<dyn Fn(i64, &ParameterPoint, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Nonlinear family together with its linearization along the trivial branch.
#[derive(Clone)]
pub struct NonlinearFamily {
    n_dim: usize,
    k: usize,
    f_n: StateFn,
    df_n: StateJacFn,
    linearization: LinearFamily,
}

impl NonlinearFamily {
    /// Builds a family from its evaluators and asymptotic limits. The
    /// linearization's coefficient sequence is defined as `Df_n(lambda, 0)`
    /// through the same evaluator used by the Jacobian assembly, so the two
    /// agree bit for bit.
    pub fn new(
        n_dim: usize,
        k: usize,
        f_n: StateFn,
        df_n: StateJacFn,
        a_plus: linear::LimitFn,
        a_minus: linear::LimitFn,
        decay_probe: usize,
    ) -> Self {
        let origin = DVector::<f64>::zeros(n_dim);
        let coeff: linear::CoefficientFn = Arc::new({
            let df_n = df_n.clone();
            move |n, lambda: &ParameterPoint| df_n(n, lambda, &origin)
        });
        let linearization = LinearFamily::new(n_dim, k, coeff, a_plus, a_minus, decay_probe);
        Self {
            n_dim,
            k,
            f_n,
            df_n,
            linearization,
        }
    }

    /// Wraps a linear family as the nonlinear map `f_n(lambda, x) = a_n x`.
    pub fn from_linear(lin: LinearFamily) -> Self {
        let f: StateFn = Arc::new({
            let lin = lin.clone();
            move |n, lambda: &ParameterPoint, x: &DVector<f64>| lin.coefficient(n, lambda) * x
        });
        let df: StateJacFn = Arc::new({
            let lin = lin.clone();
            move |n, lambda: &ParameterPoint, _: &DVector<f64>| lin.coefficient(n, lambda)
        });
        Self {
            n_dim: lin.n_dim(),
            k: lin.k(),
            f_n: f,
            df_n: df,
            linearization: lin,
        }
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn linearization(&self) -> &LinearFamily {
        &self.linearization
    }

    pub fn f(&self, n: i64, lambda: &ParameterPoint, x: &DVector<f64>) -> DVector<f64> {
        (self.f_n)(n, lambda, x)
    }

    pub fn df(&self, n: i64, lambda: &ParameterPoint, x: &DVector<f64>) -> DMatrix<f64> {
        (self.df_n)(n, lambda, x)
    }
}

/// Residual of the window map at `x`: dynamic rows `x_{n+1} - f_n(lambda, x_n)`
/// for `n = -M..M-1`, followed by the asymptotic boundary rows, flattened in
/// the same order the Jacobian uses.
pub fn residual(
    fam: &NonlinearFamily,
    lambda: &ParameterPoint,
    x: &WindowSeq,
) -> Result<DVector<f64>> {
    let n_dim = fam.n_dim;
    let m = window_half_length(x, n_dim)?;
    let (bc_plus, bc_minus) = linear::boundary_rows(&fam.linearization, lambda)?;
    let rows = 2 * m * n_dim + bc_plus.nrows() + bc_minus.nrows();
    let mut out = DVector::<f64>::zeros(rows);
    for (r, n) in (-(m as i64)..m as i64).enumerate() {
        let fx = fam.f(n, lambda, x.state(n));
        if fx.len() != n_dim || fx.iter().any(|v| !v.is_finite()) {
            return Err(Error::EvaluatorFailure(format!(
                "f_{n} returned an invalid state"
            )));
        }
        out.rows_mut(r * n_dim, n_dim)
            .copy_from(&(x.state(n + 1) - fx));
    }
    let dyn_rows = 2 * m * n_dim;
    out.rows_mut(dyn_rows, bc_plus.nrows())
        .copy_from(&(&bc_plus * x.state(m as i64)));
    out.rows_mut(dyn_rows + bc_plus.nrows(), bc_minus.nrows())
        .copy_from(&(&bc_minus * x.state(-(m as i64))));
    Ok(out)
}

/// Jacobian of [`residual`] at `x`: block bidiagonal with `-Df_n(lambda, x_n)`
/// sub-blocks plus the boundary rows. At `x = 0` this is the truncated
/// linearization, assembled through the identical code path.
pub fn jacobian(
    fam: &NonlinearFamily,
    lambda: &ParameterPoint,
    x: &WindowSeq,
) -> Result<DMatrix<f64>> {
    let n_dim = fam.n_dim;
    let m = window_half_length(x, n_dim)?;
    let (bc_plus, bc_minus) = linear::boundary_rows(&fam.linearization, lambda)?;
    Ok(linear::assemble_window_operator(
        n_dim,
        m,
        |n| fam.df(n, lambda, x.state(n)),
        &bc_plus,
        &bc_minus,
    ))
}

fn window_half_length(x: &WindowSeq, n_dim: usize) -> Result<usize> {
    if x.n_dim() != n_dim {
        return Err(Error::EvaluatorFailure(format!(
            "window state dimension {} does not match the family dimension {n_dim}",
            x.n_dim()
        )));
    }
    if x.len().is_multiple_of(2) || x.start() != -((x.len() as i64 - 1) / 2) {
        return Err(Error::InvalidInput(
            "expected a symmetric window [-M, M]".into(),
        ));
    }
    Ok((x.len() - 1) / 2)
}

/// Newton iteration controls.
#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Convergence threshold on the sup norm of the residual; at least 1e-13.
    pub tol: f64,
    /// Maximum number of step halvings per iteration (0 disables damping).
    pub damping: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-10,
            damping: 8,
        }
    }
}

/// How a converged window solution is classified.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionClass {
    Trivial,
    Nontrivial,
}

/// A converged Newton result on a window.
#[derive(Clone, Debug)]
pub struct WindowSolution {
    pub lambda: ParameterPoint,
    pub window: usize,
    pub x: WindowSeq,
    pub residual_norm: f64,
    /// `max_n ||x_n||`.
    pub amplitude: f64,
    pub class: SolutionClass,
    /// Set when the amplitude sits near the trivial/nontrivial threshold, in
    /// `[2.5, 40] * tol`; such results should not be over-interpreted.
    pub borderline: bool,
    /// Whether the boundary states decay to at most `1e-4` of the amplitude,
    /// as a genuine homoclinic window must.
    pub boundary_ok: bool,
}

impl Serialize for WindowSolution {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("WindowSolution", 8)?;
        s.serialize_field("lambda", &self.lambda)?;
        s.serialize_field("window", &self.window)?;
        let states: Vec<Vec<f64>> = self
            .x
            .states()
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect();
        s.serialize_field("x", &states)?;
        s.serialize_field("residual_norm", &self.residual_norm)?;
        s.serialize_field("amplitude", &self.amplitude)?;
        s.serialize_field("class", &self.class)?;
        s.serialize_field("borderline", &self.borderline)?;
        s.serialize_field("boundary_ok", &self.boundary_ok)?;
        s.end()
    }
}

/// Damped Newton iteration on the window residual.
///
/// Steps are halved (up to `opts.damping` times) until the residual sup norm
/// decreases; an iteration where no damped step decreases the residual, or an
/// exhausted budget, reports [`Error::NoConvergence`] unless the residual is
/// already below tolerance. A Jacobian the LU factorization cannot solve
/// reports [`Error::SingularJacobian`].
///
/// Convergence demands a stagnant step on top of a small residual: along a
/// degenerate kernel direction with a quadratic nonlinearity the residual
/// falls below `tol` while the amplitude is still of order `sqrt(tol)`, and
/// the iteration keeps halving it; stopping at the first small residual would
/// misreport such near-kernel vectors as nontrivial solutions.
pub fn newton_solve(
    fam: &NonlinearFamily,
    lambda: &ParameterPoint,
    x0: &WindowSeq,
    opts: &NewtonOptions,
) -> Result<WindowSolution> {
    if opts.tol < 1e-13 {
        return Err(Error::InvalidInput(format!(
            "newton tolerance {} below 1e-13",
            opts.tol
        )));
    }
    let n_dim = fam.n_dim;
    let m = window_half_length(x0, n_dim)?;
    let mut x = x0.clone();
    let mut r = residual(fam, lambda, &x)?;
    let mut r_norm = r.amax();
    let mut last_step = f64::INFINITY;
    for iter in 0..opts.max_iter {
        if r_norm <= opts.tol && (iter == 0 || last_step <= opts.tol) {
            return Ok(finish_solution(lambda, x, m, r_norm, opts.tol));
        }
        let jac = jacobian(fam, lambda, &x)?;
        let delta = match jac.clone().lu().solve(&(-&r)) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => {
                if r_norm <= opts.tol {
                    return Ok(finish_solution(lambda, x, m, r_norm, opts.tol));
                }
                let sigma_min = jac
                    .svd(false, false)
                    .singular_values
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                return Err(Error::SingularJacobian { sigma_min });
            }
        };
        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..=opts.damping {
            let trial_flat = x.flatten() + scale * &delta;
            let trial = WindowSeq::from_flat(x.start(), n_dim, &trial_flat);
            let trial_r = residual(fam, lambda, &trial)?;
            let trial_norm = trial_r.amax();
            if trial_norm < r_norm {
                last_step = (scale * &delta).amax();
                x = trial;
                r = trial_r;
                r_norm = trial_norm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No damped step improves the residual; the iterate is as good as
            // it gets.
            if r_norm <= opts.tol {
                return Ok(finish_solution(lambda, x, m, r_norm, opts.tol));
            }
            return Err(Error::NoConvergence {
                max_iter: opts.max_iter,
                residual: r_norm,
            });
        }
    }
    if r_norm <= opts.tol {
        return Ok(finish_solution(lambda, x, m, r_norm, opts.tol));
    }
    Err(Error::NoConvergence {
        max_iter: opts.max_iter,
        residual: r_norm,
    })
}

fn finish_solution(
    lambda: &ParameterPoint,
    x: WindowSeq,
    m: usize,
    residual_norm: f64,
    tol: f64,
) -> WindowSolution {
    let amplitude = x.amplitude();
    let threshold = 10.0 * tol;
    let class = if amplitude <= threshold {
        SolutionClass::Trivial
    } else {
        SolutionClass::Nontrivial
    };
    let borderline = amplitude > threshold / 4.0 && amplitude < threshold * 4.0;
    let edge = x.state(-(m as i64)).norm().max(x.state(m as i64).norm());
    let boundary_ok = edge <= 1e-4 * amplitude.max(f64::MIN_POSITIVE);
    WindowSolution {
        lambda: lambda.clone(),
        window: m,
        x,
        residual_norm,
        amplitude,
        class,
        borderline,
        boundary_ok,
    }
}

/// Seed for branch hunting: the first kernel basis column reshaped to the
/// window and rescaled so its amplitude (`max_n ||x_n||`) equals `amplitude`.
pub fn branch_seed(
    diag: &KernelDiagnostics,
    n_dim: usize,
    amplitude: f64,
) -> Result<WindowSeq> {
    if diag.kernel_dim == 0 || diag.kernel_basis.ncols() == 0 {
        return Err(Error::EmptyKernel);
    }
    let flat = diag.kernel_basis.column(0).into_owned();
    if !flat.len().is_multiple_of(n_dim) || (flat.len() / n_dim).is_multiple_of(2) {
        return Err(Error::InvalidInput(
            "kernel basis does not match a symmetric window".into(),
        ));
    }
    let m = (flat.len() / n_dim - 1) / 2;
    let seq = WindowSeq::from_flat(-(m as i64), n_dim, &flat);
    let current = seq.amplitude();
    if current == 0.0 {
        return Err(Error::EmptyKernel);
    }
    let scaled = flat * (amplitude / current);
    Ok(WindowSeq::from_flat(-(m as i64), n_dim, &scaled))
}

/// Tolerance bundle used by sweeps and certification.
#[derive(Clone, Copy, Debug, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Margin requirement and limit-deviation bound for hyperbolicity checks.
    pub hyperbolicity: f64,
    /// Relative singular-value threshold for rank decisions.
    pub rank: f64,
    /// Newton residual tolerance.
    pub newton: f64,
    /// A vertex is a bifurcation candidate when its `sigma_min` falls below
    /// `trigger * median(sigma_min)`.
    pub trigger: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hyperbolicity: 1e-8,
            rank: 1e-8,
            newton: 1e-10,
            trigger: 1e-3,
        }
    }
}

/// Amplitude given to kernel-direction Newton seeds during sweeps.
pub const SEED_AMPLITUDE: f64 = 0.05;

/// One row of sweep data.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRecord {
    pub vertex_index: usize,
    pub theta: Vec<f64>,
    pub sigma_min: f64,
    pub kernel_dim: usize,
}

/// Outcome of a singular-value sweep over the mesh.
#[derive(Clone, Debug, Serialize)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    /// Vertices whose `sigma_min` dips below `trigger * median`.
    pub candidates: Vec<usize>,
    /// Converged nontrivial solutions with decaying boundaries found near the
    /// candidates.
    pub solutions: Vec<WindowSolution>,
}

/// Sweeps the linearized window operator over all mesh vertices, recording
/// `sigma_min` and kernel dimension, then attempts Newton runs seeded along
/// the kernel direction at both loop neighbours of every candidate vertex.
pub fn sweep(
    fam: &NonlinearFamily,
    mesh: &ParameterMesh,
    m: usize,
    tols: &Tolerances,
) -> Result<SweepOutcome> {
    let lin = &fam.linearization;
    let per_vertex: Vec<(KernelDiagnostics, SweepRecord)> = mesh
        .vertices()
        .par_iter()
        .enumerate()
        .map(|(vertex_index, lambda)| {
            let op = assemble_truncated(lin, lambda, m)?;
            let diag = kernel_diagnostics(&op, tols.rank)?;
            let record = SweepRecord {
                vertex_index,
                theta: lambda.theta().to_vec(),
                sigma_min: diag.sigma_min,
                kernel_dim: diag.kernel_dim,
            };
            Ok((diag, record))
        })
        .collect::<Result<_>>()?;

    let mut sigmas: Vec<f64> = per_vertex.iter().map(|(_, r)| r.sigma_min).collect();
    sigmas.sort_by(|a, b| a.total_cmp(b));
    let median = sigmas[sigmas.len() / 2];
    let candidates: Vec<usize> = per_vertex
        .iter()
        .filter(|(_, r)| r.sigma_min < tols.trigger * median)
        .map(|(_, r)| r.vertex_index)
        .collect();

    let newton_opts = NewtonOptions {
        tol: tols.newton,
        ..NewtonOptions::default()
    };
    let mut solutions = Vec::new();
    for &candidate in &candidates {
        let (diag, _) = &per_vertex[candidate];
        let Ok(seed) = branch_seed(diag, fam.n_dim, SEED_AMPLITUDE) else {
            continue;
        };
        for neighbour in loop_neighbours(mesh, candidate) {
            let lambda = mesh.vertex(neighbour);
            if let Ok(sol) = newton_solve(fam, lambda, &seed, &newton_opts) {
                if sol.class == SolutionClass::Nontrivial && sol.boundary_ok {
                    solutions.push(sol);
                }
            }
        }
    }
    Ok(SweepOutcome {
        records: per_vertex.into_iter().map(|(_, r)| r).collect(),
        candidates,
        solutions,
    })
}

fn loop_neighbours(mesh: &ParameterMesh, vertex: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for j in 0..mesh.loop_count() {
        let cycle = mesh.loop_indices(j);
        for (pos, &v) in cycle.iter().enumerate() {
            if v == vertex {
                let prev = cycle[(pos + cycle.len() - 1) % cycle.len()];
                let next = cycle[(pos + 1) % cycle.len()];
                for candidate in [prev, next] {
                    if candidate != vertex && !out.contains(&candidate) {
                        out.push(candidate);
                    }
                }
            }
        }
    }
    out
}

/// Verdict of one assumption check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(detail: impl Into<String>) -> Self {
        Self {
            passed: true,
            detail: detail.into(),
        }
    }

    fn fail(detail: impl Into<String>) -> Self {
        Self {
            passed: false,
            detail: detail.into(),
        }
    }
}

/// Pass/fail record for the five standing assumptions.
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionStatus {
    /// Trivial branch: `f_n(lambda, 0) = 0` on the probe grid.
    pub a1: CheckResult,
    /// Differentiability/equicontinuity probe: finite-difference agreement of
    /// the Jacobian evaluator and a uniform derivative bound.
    pub a2: CheckResult,
    /// Asymptotic hyperbolicity: limit deviation and margins at all vertices.
    pub a3: CheckResult,
    /// Equal stable dimensions at both ends (and along the mesh).
    pub a4: CheckResult,
    /// Some vertex where the linearization has only the trivial decaying
    /// solution.
    pub a5: CheckResult,
}

impl AssumptionStatus {
    pub fn all_passed(&self) -> bool {
        self.a1.passed && self.a2.passed && self.a3.passed && self.a4.passed && self.a5.passed
    }
}

/// Final verdict of a certification run.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Conclusion {
    CertifiedBifurcation,
    NoCertificate,
    AssumptionsViolated,
}

/// Complete machine-readable result of a certification run.
#[derive(Clone, Debug, Serialize)]
pub struct BifurcationReport {
    pub schema_version: u32,
    pub assumption_status: AssumptionStatus,
    pub certificate: Option<BifurcationCertificate>,
    pub sweep: Vec<SweepRecord>,
    pub candidates: Vec<usize>,
    pub solutions: Vec<WindowSolution>,
    pub conclusion: Conclusion,
    pub notes: Vec<String>,
}

/// Report schema version written by this crate.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

impl BifurcationReport {
    /// Soundness invariant: a certified conclusion demands that every
    /// assumption passed and the classes mismatch.
    pub fn is_sound(&self) -> bool {
        match self.conclusion {
            Conclusion::CertifiedBifurcation => {
                self.assumption_status.all_passed()
                    && self
                        .certificate
                        .as_ref()
                        .is_some_and(|c| c.any_mismatch)
            }
            Conclusion::AssumptionsViolated => !self.assumption_status.all_passed(),
            Conclusion::NoCertificate => true,
        }
    }
}

/// Runs the full pipeline: assumption checks, stable-bundle comparison,
/// singular-value sweep and candidate hunting. Assumption failures are
/// recorded in the report rather than raised; only structural misuse (window
/// too small, broken evaluators) produces an error.
pub fn certify_bifurcation(
    fam: &NonlinearFamily,
    mesh: &ParameterMesh,
    m: usize,
    tols: &Tolerances,
) -> Result<BifurcationReport> {
    let lin = fam.linearization();
    if m < lin.decay_probe() {
        return Err(Error::WindowTooSmall {
            m,
            decay_probe: lin.decay_probe(),
        });
    }
    if mesh.k() != fam.k() {
        return Err(Error::InvalidInput(format!(
            "mesh over T^{} but family has k = {}",
            mesh.k(),
            fam.k()
        )));
    }
    let mut notes = Vec::new();

    let a1 = check_a1(fam, mesh, m)?;
    let a2 = check_a2(fam, mesh)?;
    let a3 = check_a3_all(fam, mesh, m, tols);

    // Bundles and certificate; failures here are (A3)/(A4) violations.
    let (a4, certificate) = match build_certificate(fam, mesh, tols) {
        Ok(cert) => {
            let detail = format!(
                "stable rank {} at both ends across all vertices",
                cert_rank_detail(fam, mesh, tols)
            );
            (CheckResult::pass(detail), Some(cert))
        }
        Err(Error::RankMismatch { plus, minus }) => (
            CheckResult::fail(format!(
                "stable dimensions differ between the ends: {plus} vs {minus}"
            )),
            None,
        ),
        Err(Error::RankDiscontinuity {
            expected,
            found,
            vertex,
        }) => (
            CheckResult::fail(format!(
                "stable dimension jumps from {expected} to {found} at vertex {vertex}"
            )),
            None,
        ),
        Err(Error::HyperbolicityViolation { modulus, tol }) => (
            CheckResult::fail(format!(
                "limit matrix has eigenvalue modulus {modulus} within {tol} of the circle"
            )),
            None,
        ),
        Err(other) => return Err(other),
    };

    let a5 = match linear::check_a5(lin, mesh, m, tols.rank) {
        Ok(Some(lambda)) => CheckResult::pass(format!(
            "trivial-kernel vertex found at theta = {:?}",
            lambda.theta()
        )),
        Ok(None) => CheckResult::fail(
            "the linearization has a nontrivial decaying kernel at every vertex",
        ),
        Err(Error::HyperbolicityViolation { modulus, tol }) => CheckResult::fail(format!(
            "kernel scan impossible: eigenvalue modulus {modulus} within {tol} of the circle"
        )),
        Err(other) => return Err(other),
    };

    // Sweep data is collected whenever the linearization is well posed.
    let sweep_outcome = if a3.passed && a4.passed {
        sweep(fam, mesh, m, tols)?
    } else {
        SweepOutcome {
            records: Vec::new(),
            candidates: Vec::new(),
            solutions: Vec::new(),
        }
    };

    let assumption_status = AssumptionStatus { a1, a2, a3, a4, a5 };
    let any_mismatch = certificate.as_ref().is_some_and(|c| c.any_mismatch);
    let conclusion = if !assumption_status.all_passed() {
        Conclusion::AssumptionsViolated
    } else if any_mismatch {
        Conclusion::CertifiedBifurcation
    } else {
        Conclusion::NoCertificate
    };

    if conclusion == Conclusion::CertifiedBifurcation {
        if let Some(bound) = certificate.as_ref().and_then(|c| c.dimension_bound) {
            notes.push(format!(
                "the bifurcation set has covering dimension at least {bound} and is not contractible"
            ));
        }
    }
    if let Some(cert) = &certificate {
        if cert.any_mismatch && !assumption_status.all_passed() {
            notes.push(
                "class mismatch present, but assumption failures void the certificate".into(),
            );
        }
    }

    let report = BifurcationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        assumption_status,
        certificate,
        sweep: sweep_outcome.records,
        candidates: sweep_outcome.candidates,
        solutions: sweep_outcome.solutions,
        conclusion,
        notes,
    };
    debug_assert!(report.is_sound());
    Ok(report)
}

fn probe_positions(m: usize) -> Vec<i64> {
    let m = m as i64;
    let mut out = vec![-m, -7, -2, -1, 0, 1, 2, 7, m];
    out.retain(|n| n.abs() <= m);
    out.dedup();
    out
}

fn check_a1(fam: &NonlinearFamily, mesh: &ParameterMesh, m: usize) -> Result<CheckResult> {
    let origin = DVector::<f64>::zeros(fam.n_dim);
    let mut worst: f64 = 0.0;
    for lambda in mesh.vertices() {
        for n in probe_positions(m) {
            let fx = fam.f(n, lambda, &origin);
            if fx.len() != fam.n_dim {
                return Err(Error::EvaluatorFailure(format!(
                    "f_{n} returned a state of dimension {}",
                    fx.len()
                )));
            }
            worst = worst.max(fx.amax());
        }
    }
    Ok(if worst == 0.0 {
        CheckResult::pass("f_n(lambda, 0) = 0 exactly on the probe grid")
    } else {
        CheckResult::fail(format!(
            "trivial branch violated: max |f_n(lambda, 0)| = {worst:.3e}"
        ))
    })
}

fn check_a2(fam: &NonlinearFamily, mesh: &ParameterMesh) -> Result<CheckResult> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xa2);
    let n_dim = fam.n_dim;
    let eps = 1e-6;
    let mut worst_rel: f64 = 0.0;
    let mut derivative_bound: f64 = 0.0;
    let stride = (mesh.vertices().len() / 8).max(1);
    for lambda in mesh.vertices().iter().step_by(stride) {
        for n in [-5i64, 0, 5] {
            for _ in 0..3 {
                let x = DVector::from_fn(n_dim, |_, _| rng.random_range(-0.5..0.5));
                let v = DVector::from_fn(n_dim, |_, _| rng.random_range(-1.0..1.0));
                let jac = fam.df(n, lambda, &x);
                if jac.iter().any(|e| !e.is_finite()) {
                    return Err(Error::EvaluatorFailure(format!(
                        "Df_{n} returned a non-finite entry"
                    )));
                }
                derivative_bound = derivative_bound.max(jac.amax());
                let plus = fam.f(n, lambda, &(&x + eps * &v));
                let minus = fam.f(n, lambda, &(&x - eps * &v));
                let fd = (plus - minus) / (2.0 * eps);
                let rel = (&fd - &jac * &v).amax() / (1.0 + jac.amax() * v.amax());
                worst_rel = worst_rel.max(rel);
            }
        }
    }
    Ok(if worst_rel <= 1e-5 {
        CheckResult::pass(format!(
            "derivative probe consistent (max rel err {worst_rel:.2e}, sup |Df| = {derivative_bound:.3})"
        ))
    } else {
        CheckResult::fail(format!(
            "finite differences disagree with Df (max rel err {worst_rel:.2e})"
        ))
    })
}

fn check_a3_all(
    fam: &NonlinearFamily,
    mesh: &ParameterMesh,
    m: usize,
    tols: &Tolerances,
) -> CheckResult {
    let lin = fam.linearization();
    let horizon = m.max(lin.decay_probe());
    let mut worst_dev: f64 = 0.0;
    let mut min_margin = f64::INFINITY;
    for lambda in mesh.vertices() {
        match linear::check_a3(lin, lambda, horizon, tols.hyperbolicity) {
            Ok(profile) => {
                worst_dev = worst_dev.max(profile.deviation);
                min_margin = min_margin
                    .min(profile.margin_plus)
                    .min(profile.margin_minus);
            }
            Err(err) => {
                return CheckResult::fail(format!("asymptotic hyperbolicity fails: {err}"));
            }
        }
    }
    if worst_dev <= tols.hyperbolicity {
        CheckResult::pass(format!(
            "max limit deviation {worst_dev:.3e}, min margin {min_margin:.3}"
        ))
    } else {
        CheckResult::fail(format!(
            "coefficients deviate from their limits by {worst_dev:.3e} beyond n0 = {}",
            lin.decay_probe()
        ))
    }
}

fn build_certificate(
    fam: &NonlinearFamily,
    mesh: &ParameterMesh,
    tols: &Tolerances,
) -> Result<BifurcationCertificate> {
    let lin = fam.linearization().clone();
    let plus_family: bundle::LimitFamilyFn = Arc::new({
        let lin = lin.clone();
        move |lambda: &ParameterPoint| lin.limit_plus(lambda)
    });
    let minus_family: bundle::LimitFamilyFn = Arc::new({
        let lin = lin.clone();
        move |lambda: &ParameterPoint| lin.limit_minus(lambda)
    });
    let plus = bundle::sample_subbundle(
        plus_family,
        mesh,
        BundleKind::Stable,
        End::PlusInfinity,
        tols.hyperbolicity,
    )?;
    let minus = bundle::sample_subbundle(
        minus_family,
        mesh,
        BundleKind::Stable,
        End::MinusInfinity,
        tols.hyperbolicity,
    )?;
    bundle::certify(&plus, &minus)
}

fn cert_rank_detail(fam: &NonlinearFamily, mesh: &ParameterMesh, tols: &Tolerances) -> usize {
    // Rank of the stable bundle at the base vertex; callers only reach this
    // after a successful certificate build.
    crate::spectral::hyperbolic_splitting(
        &fam.linearization().limit_plus(mesh.vertex(0)),
        tols.hyperbolicity,
    )
    .map(|s| s.k_s)
    .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn circle_point(theta: f64) -> ParameterPoint {
        ParameterPoint::circle(theta).unwrap()
    }

    #[test]
    fn residual_vanishes_on_trivial_branch() {
        for fam in [models::build_torus_example(1, 0.05), models::build_counterexample(1)] {
            let x = WindowSeq::symmetric(30, fam.n_dim());
            let r = residual(&fam, &circle_point(0.4), &x).unwrap();
            assert_eq!(r.amax(), 0.0);
        }
    }

    #[test]
    fn jacobian_at_origin_equals_truncated_linearization() {
        let fam = models::build_torus_example(1, 0.05);
        let lambda = circle_point(-1.3);
        let x = WindowSeq::symmetric(40, 2);
        let jac = jacobian(&fam, &lambda, &x).unwrap();
        let op = assemble_truncated(fam.linearization(), &lambda, 40).unwrap();
        assert_eq!(jac, op.matrix);
    }

    #[test]
    fn finite_difference_jacobian_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let m = 12;
        for fam in [
            models::build_torus_example(1, 0.08),
            models::build_counterexample(1),
        ] {
            let n_dim = fam.n_dim();
            for trial in 0..20 {
                let lambda = circle_point(rng.random_range(-3.0..3.0));
                let mut x = WindowSeq::symmetric(m, n_dim);
                for n in -(m as i64)..=m as i64 {
                    *x.state_mut(n) = DVector::from_fn(n_dim, |_, _| rng.random_range(-0.3..0.3));
                }
                let jac = jacobian(&fam, &lambda, &x).unwrap();
                let r0 = residual(&fam, &lambda, &x).unwrap();
                let eps = 1e-6;
                let v = DVector::from_fn(x.len() * n_dim, |_, _| rng.random_range(-1.0..1.0));
                let xp = WindowSeq::from_flat(x.start(), n_dim, &(x.flatten() + eps * &v));
                let rp = residual(&fam, &lambda, &xp).unwrap();
                let fd = (rp - &r0) / eps;
                let err = (&fd - &jac * &v).amax();
                assert!(err <= 10.0 * eps, "trial {trial}: err {err:.3e}");
            }
        }
    }

    #[test]
    fn quadratic_residual_scaling_along_kernel() {
        // With h quadratic, the residual of a scaled kernel vector is O(eps^2).
        let fam = models::build_torus_example(1, 0.1);
        let lambda = circle_point(PI);
        let op = assemble_truncated(fam.linearization(), &lambda, 40).unwrap();
        let diag = kernel_diagnostics(&op, 1e-8).unwrap();
        assert_eq!(diag.kernel_dim, 1);
        let mut norms = Vec::new();
        for eps in [1e-2, 1e-3] {
            let seed = branch_seed(&diag, 2, eps).unwrap();
            let r = residual(&fam, &lambda, &seed).unwrap();
            norms.push(r.amax());
        }
        // Shrinking the amplitude by 10 must shrink the residual by ~100.
        assert!(norms[1] <= norms[0] * 1e-1_f64.powi(2) * 10.0);
    }

    #[test]
    fn newton_from_origin_stays_trivial() {
        let fam = models::build_torus_example(1, 0.05);
        let x0 = WindowSeq::symmetric(30, 2);
        let sol = newton_solve(&fam, &circle_point(0.7), &x0, &NewtonOptions::default()).unwrap();
        assert_eq!(sol.class, SolutionClass::Trivial);
        assert_eq!(sol.residual_norm, 0.0);
    }

    #[test]
    fn newton_near_regular_points_returns_trivial_solution() {
        // Away from the kernel angle the implicit function theorem region
        // attracts every small seed to the trivial solution.
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let fam = models::build_torus_example(1, 0.05);
        let lambda = circle_point(1.0);
        for _ in 0..16 {
            let mut x0 = WindowSeq::symmetric(30, 2);
            for n in -30i64..=30 {
                *x0.state_mut(n) = DVector::from_fn(2, |_, _| rng.random_range(-0.01..0.01));
            }
            let sol = newton_solve(&fam, &lambda, &x0, &NewtonOptions::default()).unwrap();
            assert_eq!(sol.class, SolutionClass::Trivial);
        }
    }

    #[test]
    fn branch_seed_scaling_and_errors() {
        let fam = models::build_torus_example(1, 0.0);
        let op = assemble_truncated(fam.linearization(), &circle_point(PI), 50).unwrap();
        let diag = kernel_diagnostics(&op, 1e-8).unwrap();
        let seed = branch_seed(&diag, 2, 0.05).unwrap();
        assert!((seed.amplitude() - 0.05).abs() <= 1e-14);

        let regular = kernel_diagnostics(
            &assemble_truncated(fam.linearization(), &circle_point(0.0), 50).unwrap(),
            1e-8,
        )
        .unwrap();
        assert!(matches!(
            branch_seed(&regular, 2, 0.05),
            Err(Error::EmptyKernel)
        ));
    }

    #[test]
    fn counterexample_seed_lives_in_third_coordinate() {
        let fam = models::build_counterexample(1);
        let op = assemble_truncated(fam.linearization(), &circle_point(0.4), 40).unwrap();
        let diag = kernel_diagnostics(&op, 1e-8).unwrap();
        let seed = branch_seed(&diag, 4, 0.05).unwrap();
        assert!((seed.amplitude() - 0.05).abs() <= 1e-14);
        for n in -40i64..=40 {
            let s = seed.state(n);
            for coord in [0usize, 1, 3] {
                assert!(s[coord].abs() <= 1e-8, "n {n}, coord {coord}");
            }
        }
    }

    #[test]
    fn sweep_locates_the_linear_bifurcation_point() {
        let fam = models::build_torus_example(1, 0.0);
        let mesh = ParameterMesh::circle(128).unwrap();
        let outcome = sweep(&fam, &mesh, 50, &Tolerances::default()).unwrap();
        assert_eq!(outcome.records.len(), 128);
        assert_eq!(outcome.candidates.len(), 1);
        let candidate = outcome.candidates[0];
        let theta = mesh.vertex(candidate).theta()[0];
        assert!((theta - PI).abs() <= 2.0 * PI / 128.0 + 1e-12);
        for record in &outcome.records {
            let expected = usize::from(record.vertex_index == candidate);
            assert_eq!(record.kernel_dim, expected, "vertex {}", record.vertex_index);
        }
    }

    #[test]
    fn sweep_of_constant_invertible_family_has_no_candidates() {
        let fam = NonlinearFamily::from_linear(
            models::build_random(5, 2, 1, 1, 0.5).unwrap(),
        );
        let mesh = ParameterMesh::circle(16).unwrap();
        let m = fam.linearization().decay_probe().max(30);
        let outcome = sweep(&fam, &mesh, m, &Tolerances::default()).unwrap();
        assert!(outcome.candidates.is_empty());
        assert!(outcome.records.iter().all(|r| r.kernel_dim == 0));
    }

    #[test]
    fn certify_torus_model_end_to_end() {
        let fam = models::build_torus_example(1, 0.05);
        let mesh = ParameterMesh::circle(128).unwrap();
        let report = certify_bifurcation(&fam, &mesh, 50, &Tolerances::default()).unwrap();
        assert!(report.is_sound());
        assert_eq!(report.conclusion, Conclusion::CertifiedBifurcation);
        assert_eq!(report.candidates.len(), 1);
        let theta = mesh.vertex(report.candidates[0]).theta()[0];
        assert!((theta - PI).abs() <= 2.0 * PI / 128.0 + 1e-12);
    }

    #[test]
    fn certify_torus_model_with_three_parameters() {
        let fam = models::build_torus_example(3, 0.05);
        let mesh = ParameterMesh::torus(3, 32).unwrap();
        let report = certify_bifurcation(&fam, &mesh, 40, &Tolerances::default()).unwrap();
        assert_eq!(report.conclusion, Conclusion::CertifiedBifurcation);
        let cert = report.certificate.unwrap();
        assert_eq!(cert.dimension_bound, Some(2));
        assert!(report.notes.iter().any(|n| n.contains("dimension")));
    }

    #[test]
    fn certify_counterexample_reports_assumption_violation() {
        let fam = models::build_counterexample(1);
        let mesh = ParameterMesh::circle(32).unwrap();
        let report = certify_bifurcation(&fam, &mesh, 40, &Tolerances::default()).unwrap();
        assert!(report.is_sound());
        assert_eq!(report.conclusion, Conclusion::AssumptionsViolated);
        assert!(!report.assumption_status.a5.passed);
        assert!(report.assumption_status.a1.passed);
        assert!(report.assumption_status.a3.passed);
        assert!(report.assumption_status.a4.passed);
        let cert = report.certificate.unwrap();
        assert!(cert.any_mismatch);
        assert!(report.sweep.iter().all(|r| r.kernel_dim >= 1));
    }

    #[test]
    fn certify_trivial_equal_limits_yields_no_certificate() {
        let fam = NonlinearFamily::from_linear(
            models::build_random(77, 3, 1, 1, 0.5).unwrap(),
        );
        let mesh = ParameterMesh::circle(16).unwrap();
        let m = fam.linearization().decay_probe().max(40);
        let report = certify_bifurcation(&fam, &mesh, m, &Tolerances::default()).unwrap();
        assert_eq!(report.conclusion, Conclusion::NoCertificate);
        assert!(report.is_sound());
    }

    #[test]
    fn window_too_small_is_a_hard_error() {
        let fam = models::build_torus_example(1, 0.0);
        let mesh = ParameterMesh::circle(16).unwrap();
        // decay_probe is 1 for the worked families, so M = 0 is the only
        // too-small window; the structural check still must fire.
        match certify_bifurcation(&fam, &mesh, 0, &Tolerances::default()) {
            Err(Error::WindowTooSmall { .. }) => {}
            other => panic!("expected WindowTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn counterexample_obstruction_annihilates_iterates() {
        // The positive dual-kernel weights pair the quadratic part of the
        // residual with the squared state norms: the two evaluation routes
        // must agree, and no Newton run may produce a nontrivial solution.
        let fam = models::build_counterexample(1);
        let lin = fam.linearization();
        let lambda = circle_point(0.9);
        let m = 30usize;
        let anchor = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        let y = linear::adjoint_kernel_element(lin, &lambda, &anchor, m).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(616);
        for trial in 0..10 {
            let mut u = WindowSeq::symmetric(m, 4);
            for n in -(m as i64)..=m as i64 {
                *u.state_mut(n) = DVector::from_fn(4, |_, _| rng.random_range(-0.05..0.05));
            }
            // Route one: weighted squared norms.
            let direct: f64 = (-(m as i64)..=m as i64)
                .map(|n| y.state(n)[3] * u.state(n).norm_squared())
                .sum();
            // Route two: pair y with the quadratic part extracted as the
            // difference between the linear image and the nonlinear residual.
            let mut paired = 0.0;
            for n in -(m as i64)..m as i64 {
                let linear_row = u.state(n + 1) - lin.coefficient(n, &lambda) * u.state(n);
                let nonlinear_row = u.state(n + 1) - fam.f(n, &lambda, u.state(n));
                paired += y.state(n).dot(&(linear_row - nonlinear_row));
            }
            // The quadratic part at n = m is not visible to rows; add it.
            paired += y.state(m as i64)[3] * u.state(m as i64).norm_squared();
            assert!((direct - paired).abs() <= 1e-10, "trial {trial}");
        }
    }
}
