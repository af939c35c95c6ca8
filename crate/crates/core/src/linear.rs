//! Finite-section analysis of the linearized difference operators
//! `(L x)_n = x_{n+1} - a_n(lambda) x_n` acting on decaying sequences.
//!
//! The infinite-lattice operator is replaced by its restriction to a window
//! `[-M, M]` with projector boundary conditions that forbid the growing modes:
//! at `+M` the state must be orthogonal to the unstable subspace of the `+`
//! limit matrix, at `-M` orthogonal to the stable subspace of the `-` limit.
//! With that closure, `cols - rows` of the finite section reproduces the
//! Fredholm index `dim E^s(+inf) - dim E^s(-inf)` of the full operator, and
//! kernels of the finite section approximate the decaying solutions at a
//! geometric rate in `M`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{ParameterMesh, ParameterPoint};
use crate::spectral::{self, hyperbolic_splitting, is_hyperbolic};

/// Evaluator for the coefficient sequence `a_n(lambda)`.
pub type CoefficientFn = Arc<dyn Fn(i64, &ParameterPoint) -> DMatrix<f64> + Send + Sync>;
/// Evaluator for an asymptotic limit `a(lambda, +/-inf)`.
pub type LimitFn = Arc<dyn Fn(&ParameterPoint) -> DMatrix<f64> + Send + Sync>;

/// Asymptotically hyperbolic family of linear difference equations.
#[derive(Clone)]
pub struct LinearFamily {
    n_dim: usize,
    k: usize,
    a_n: CoefficientFn,
    a_plus: LimitFn,
    a_minus: LimitFn,
    /// Index beyond which `||a_n - a_{+/-}||` is measured (and assumed
    /// negligible for windowing purposes).
    decay_probe: usize,
}

impl LinearFamily {
    pub fn new(
        n_dim: usize,
        k: usize,
        a_n: CoefficientFn,
        a_plus: LimitFn,
        a_minus: LimitFn,
        decay_probe: usize,
    ) -> Self {
        Self {
            n_dim,
            k,
            a_n,
            a_plus,
            a_minus,
            decay_probe: decay_probe.max(1),
        }
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn decay_probe(&self) -> usize {
        self.decay_probe
    }

    pub fn coefficient(&self, n: i64, lambda: &ParameterPoint) -> DMatrix<f64> {
        (self.a_n)(n, lambda)
    }

    pub fn limit_plus(&self, lambda: &ParameterPoint) -> DMatrix<f64> {
        (self.a_plus)(lambda)
    }

    pub fn limit_minus(&self, lambda: &ParameterPoint) -> DMatrix<f64> {
        (self.a_minus)(lambda)
    }

    /// The piecewise-constant comparison family that freezes `a_n` to its
    /// limits: `a(+inf)` for `n >= 0` and `a(-inf)` for `n < 0`. Replacing a
    /// family by this one is a compact perturbation, so index data must not
    /// change.
    pub fn piecewise(&self) -> LinearFamily {
        let plus = self.a_plus.clone();
        let minus = self.a_minus.clone();
        LinearFamily {
            n_dim: self.n_dim,
            k: self.k,
            a_n: Arc::new({
                let plus = plus.clone();
                let minus = minus.clone();
                move |n, lambda| {
                    if n >= 0 {
                        plus(lambda)
                    } else {
                        minus(lambda)
                    }
                }
            }),
            a_plus: plus,
            a_minus: minus,
            decay_probe: 1,
        }
    }
}

/// Finite sequence of states indexed by absolute lattice positions
/// `[start, start + len)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSeq {
    start: i64,
    states: Vec<DVector<f64>>,
}

impl WindowSeq {
    pub fn new(start: i64, states: Vec<DVector<f64>>) -> Self {
        assert!(!states.is_empty());
        Self { start, states }
    }

    pub fn zeros(start: i64, len: usize, n_dim: usize) -> Self {
        Self {
            start,
            states: vec![DVector::zeros(n_dim); len],
        }
    }

    /// Symmetric window `[-m, m]` of zero states.
    pub fn symmetric(m: usize, n_dim: usize) -> Self {
        Self::zeros(-(m as i64), 2 * m + 1, n_dim)
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    /// One past the last index.
    pub fn end(&self) -> i64 {
        self.start + self.states.len() as i64
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn state(&self, n: i64) -> &DVector<f64> {
        &self.states[(n - self.start) as usize]
    }

    pub fn state_mut(&mut self, n: i64) -> &mut DVector<f64> {
        &mut self.states[(n - self.start) as usize]
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    /// State at `n`, or zero outside the window.
    pub fn get_or_zero(&self, n: i64) -> DVector<f64> {
        if n < self.start || n >= self.end() {
            DVector::zeros(self.n_dim())
        } else {
            self.state(n).clone()
        }
    }

    /// Max over positions of the Euclidean state norm.
    pub fn amplitude(&self) -> f64 {
        self.states.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    /// Flattens to a single vector, windows ordered by position.
    pub fn flatten(&self) -> DVector<f64> {
        let n_dim = self.n_dim();
        let mut out = DVector::zeros(self.states.len() * n_dim);
        for (i, s) in self.states.iter().enumerate() {
            out.rows_mut(i * n_dim, n_dim).copy_from(s);
        }
        out
    }

    /// Inverse of [`WindowSeq::flatten`].
    pub fn from_flat(start: i64, n_dim: usize, flat: &DVector<f64>) -> Self {
        assert_eq!(flat.len() % n_dim, 0);
        let states = (0..flat.len() / n_dim)
            .map(|i| flat.rows(i * n_dim, n_dim).into_owned())
            .collect();
        Self { start, states }
    }
}

/// Result of the asymptotic-hyperbolicity check at one parameter value.
#[derive(Clone, Debug)]
pub struct A3Profile {
    /// `max ||a_n - a_{+/-}||_F` over `|n|` in `[decay_probe, horizon]`.
    pub deviation: f64,
    pub margin_plus: f64,
    pub margin_minus: f64,
    pub tol: f64,
}

impl A3Profile {
    pub fn passes(&self) -> bool {
        self.deviation <= self.tol && self.margin_plus >= self.tol && self.margin_minus >= self.tol
    }
}

/// Measures how far the coefficients are from their asymptotic limits and
/// whether both limits are hyperbolic with margin at least `tol`.
pub fn check_a3(
    fam: &LinearFamily,
    lambda: &ParameterPoint,
    horizon: usize,
    tol: f64,
) -> Result<A3Profile> {
    if horizon < fam.decay_probe {
        return Err(Error::InvalidInput(format!(
            "horizon {horizon} below decay probe {}",
            fam.decay_probe
        )));
    }
    let plus = fam.limit_plus(lambda);
    let minus = fam.limit_minus(lambda);
    let margin_plus = is_hyperbolic(&plus, tol)?;
    let margin_minus = is_hyperbolic(&minus, tol)?;
    let mut deviation: f64 = 0.0;
    for n in fam.decay_probe as i64..=horizon as i64 {
        deviation = deviation.max((fam.coefficient(n, lambda) - &plus).norm());
        deviation = deviation.max((fam.coefficient(-n, lambda) - &minus).norm());
    }
    Ok(A3Profile {
        deviation,
        margin_plus,
        margin_minus,
        tol,
    })
}

/// Pointwise Fredholm index of the lattice operator at `lambda`:
/// `dim E^s(lambda, +inf) - dim E^s(lambda, -inf)`.
pub fn fredholm_index(fam: &LinearFamily, lambda: &ParameterPoint) -> Result<i64> {
    let plus = hyperbolic_splitting(&fam.limit_plus(lambda), spectral::DEFAULT_TOL)?;
    let minus = hyperbolic_splitting(&fam.limit_minus(lambda), spectral::DEFAULT_TOL)?;
    Ok(plus.k_s as i64 - minus.k_s as i64)
}

/// Finite-section matrix of the lattice operator on the window `[-M, M]`.
#[derive(Clone, Debug)]
pub struct TruncatedOperator {
    /// Window half-length M; unknowns are the states at `-M, ..., M`.
    pub window: usize,
    pub rows: usize,
    pub cols: usize,
    pub matrix: DMatrix<f64>,
    /// Number of boundary rows at `+M` (codimension of the stable subspace).
    pub bc_plus_rank: usize,
    /// Number of boundary rows at `-M` (dimension of the stable subspace).
    pub bc_minus_rank: usize,
    pub lambda: ParameterPoint,
}

impl TruncatedOperator {
    /// `cols - rows`, which matches the Fredholm index by construction.
    pub fn structural_index(&self) -> i64 {
        self.cols as i64 - self.rows as i64
    }
}

/// Dense assembly shared by the linear finite section and the nonlinear
/// Jacobian: block rows `x_{n+1} - B_n x_n` for `n = -M..M-1` followed by the
/// two boundary-projector row blocks.
pub(crate) fn assemble_window_operator(
    n_dim: usize,
    m: usize,
    mut block: impl FnMut(i64) -> DMatrix<f64>,
    bc_plus: &DMatrix<f64>,
    bc_minus: &DMatrix<f64>,
) -> DMatrix<f64> {
    let window_len = 2 * m + 1;
    let cols = window_len * n_dim;
    let dyn_rows = 2 * m * n_dim;
    let rows = dyn_rows + bc_plus.nrows() + bc_minus.nrows();
    let mut matrix = DMatrix::<f64>::zeros(rows, cols);
    for (r, n) in (-(m as i64)..m as i64).enumerate() {
        let row = r * n_dim;
        let col_n = r * n_dim;
        let col_next = (r + 1) * n_dim;
        let b = block(n);
        debug_assert_eq!(b.nrows(), n_dim);
        matrix
            .view_mut((row, col_n), (n_dim, n_dim))
            .copy_from(&(-b));
        matrix
            .view_mut((row, col_next), (n_dim, n_dim))
            .fill_with_identity();
    }
    matrix
        .view_mut((dyn_rows, cols - n_dim), (bc_plus.nrows(), n_dim))
        .copy_from(bc_plus);
    matrix
        .view_mut((dyn_rows + bc_plus.nrows(), 0), (bc_minus.nrows(), n_dim))
        .copy_from(bc_minus);
    matrix
}

/// Boundary-condition row blocks for a window: transposed unstable basis of
/// the `+` limit (applied to `x_M`) and transposed stable basis of the `-`
/// limit (applied to `x_{-M}`).
pub(crate) fn boundary_rows(
    fam: &LinearFamily,
    lambda: &ParameterPoint,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let plus = hyperbolic_splitting(&fam.limit_plus(lambda), spectral::DEFAULT_TOL)?;
    let minus = hyperbolic_splitting(&fam.limit_minus(lambda), spectral::DEFAULT_TOL)?;
    Ok((plus.vu.transpose(), minus.vs.transpose()))
}

/// Assembles the finite section of the operator at `lambda` on `[-M, M]`.
pub fn assemble_truncated(
    fam: &LinearFamily,
    lambda: &ParameterPoint,
    m: usize,
) -> Result<TruncatedOperator> {
    if m < fam.decay_probe {
        return Err(Error::WindowTooSmall {
            m,
            decay_probe: fam.decay_probe,
        });
    }
    let (bc_plus, bc_minus) = boundary_rows(fam, lambda)?;
    let matrix = assemble_window_operator(
        fam.n_dim,
        m,
        |n| fam.coefficient(n, lambda),
        &bc_plus,
        &bc_minus,
    );
    Ok(TruncatedOperator {
        window: m,
        rows: matrix.nrows(),
        cols: matrix.ncols(),
        bc_plus_rank: bc_plus.nrows(),
        bc_minus_rank: bc_minus.nrows(),
        matrix,
        lambda: lambda.clone(),
    })
}

/// Kernel data of a truncated operator obtained from a full SVD.
#[derive(Clone, Debug)]
pub struct KernelDiagnostics {
    pub kernel_dim: usize,
    /// Smallest singular value (0 when the matrix is wider than tall).
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Ratio of the smallest kept to the largest dropped singular value at
    /// the rank cut; infinite for a clean trivial kernel.
    pub gap_ratio: f64,
    /// Orthonormal kernel basis, `cols x kernel_dim`, most singular first.
    pub kernel_basis: DMatrix<f64>,
}

/// Rank decision by SVD: `kernel_dim` counts singular values below
/// `rank_tol * sigma_max` (plus the structural null directions of a wide
/// matrix). SVD is used instead of a pivoted factorization because the smooth
/// `sigma_min` along parameter sweeps doubles as the bifurcation indicator.
pub fn kernel_diagnostics(op: &TruncatedOperator, rank_tol: f64) -> Result<KernelDiagnostics> {
    if !(rank_tol > 0.0 && rank_tol <= 1e-2) {
        return Err(Error::InvalidInput(format!(
            "rank_tol {rank_tol} outside (0, 1e-2]"
        )));
    }
    let svd = op.matrix.clone().svd(false, true);
    let v_t = svd.v_t.expect("svd with v requested");
    let min_dim = op.rows.min(op.cols);
    // nalgebra returns singular values in descending order.
    let sigma = &svd.singular_values;
    let sigma_max = if min_dim == 0 { 0.0 } else { sigma[0] };
    let threshold = rank_tol * sigma_max;
    let small = (0..min_dim).filter(|&i| sigma[i] < threshold).count();
    let structural = op.cols - min_dim;
    let kernel_dim = small + structural;

    let sigma_min = if structural > 0 { 0.0 } else { sigma[min_dim - 1] };
    let largest_dropped = if small > 0 {
        sigma[min_dim - small]
    } else if structural > 0 {
        0.0
    } else {
        f64::NAN // no cut
    };
    let smallest_kept = if kernel_dim < op.cols {
        sigma[min_dim - small - 1]
    } else {
        f64::INFINITY
    };
    let gap_ratio = if kernel_dim == 0 || largest_dropped == 0.0 {
        f64::INFINITY
    } else {
        smallest_kept / largest_dropped
    };

    // Kernel basis: structural complement first (exact zeros), then right
    // singular vectors in ascending order of their singular values.
    let v = v_t.transpose();
    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(kernel_dim);
    if structural > 0 {
        let full = crate::spectral::complete_to_orthogonal_basis(&v);
        for j in 0..structural {
            columns.push(full.column(min_dim + j).into_owned());
        }
    }
    for j in 0..small {
        columns.push(v.column(min_dim - 1 - j).into_owned());
    }
    let kernel_basis = if columns.is_empty() {
        DMatrix::zeros(op.cols, 0)
    } else {
        DMatrix::from_columns(&columns)
    };
    Ok(KernelDiagnostics {
        kernel_dim,
        sigma_min,
        sigma_max,
        gap_ratio,
        kernel_basis,
    })
}

/// Searches the mesh for a parameter value where the linearization has only
/// the trivial decaying solution: the first vertex with a clean empty kernel
/// (`sigma_min >= 10 * rank_tol * sigma_max`). Returns `None` when every
/// vertex fails, as happens for families with a persistent kernel.
pub fn check_a5(
    fam: &LinearFamily,
    mesh: &ParameterMesh,
    m: usize,
    rank_tol: f64,
) -> Result<Option<ParameterPoint>> {
    let verdicts: Vec<Result<bool>> = mesh
        .vertices()
        .par_iter()
        .map(|lambda| {
            let op = assemble_truncated(fam, lambda, m)?;
            let diag = kernel_diagnostics(&op, rank_tol)?;
            Ok(diag.kernel_dim == 0 && diag.sigma_min >= 10.0 * rank_tol * diag.sigma_max)
        })
        .collect();
    for (i, verdict) in verdicts.into_iter().enumerate() {
        if verdict? {
            return Ok(Some(mesh.vertex(i).clone()));
        }
    }
    Ok(None)
}

/// Applies the autonomous half-line operator `(L x)_n = x_{n+1} - a x_n` to a
/// finite sequence on `[0, K]`; the result lives on `[0, K-1]`.
pub fn apply_constant_halfline(a: &DMatrix<f64>, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
    (0..x.len().saturating_sub(1))
        .map(|n| &x[n + 1] - a * &x[n])
        .collect()
}

/// Explicit right inverse of the autonomous half-line operator for a
/// hyperbolic matrix: stable part summed forward, unstable part summed
/// backward through the inverse restricted to the unstable subspace, so no
/// growing power of `a` is ever formed.
pub fn right_inverse_apply(a: &DMatrix<f64>, x: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let split = hyperbolic_splitting(a, spectral::DEFAULT_TOL)?;
    let len = x.len();
    let n_dim = a.nrows();
    let mut out = vec![DVector::<f64>::zeros(n_dim); len];

    if split.k_u > 0 {
        let a_u = split.vu.transpose() * a * &split.vu;
        let w_u = split.vu.transpose() * &split.pu;
        let lu = a_u.lu();
        // u_n = a_u^{-1} (w_u x_n + u_{n+1}), backward from u_K.
        let mut u = DVector::<f64>::zeros(split.k_u);
        let mut unstable = vec![DVector::<f64>::zeros(split.k_u); len];
        for n in (0..len).rev() {
            let rhs = &w_u * &x[n] + &u;
            u = lu.solve(&rhs).ok_or(Error::NotInvertible {
                sigma_min: 0.0,
                tol: spectral::DEFAULT_TOL,
            })?;
            unstable[n] = u.clone();
        }
        for n in 0..len {
            out[n] -= &split.vu * &unstable[n];
        }
    }

    if split.k_s > 0 {
        let a_s = split.vs.transpose() * a * &split.vs;
        let w_s = split.vs.transpose() * &split.ps;
        // s_{n+1} = a_s s_n + w_s x_n, with s_0 = 0.
        let mut s = DVector::<f64>::zeros(split.k_s);
        for n in 0..len {
            out[n] += &split.vs * &s;
            s = &a_s * s + &w_s * &x[n];
        }
    }
    Ok(out)
}

/// Applies `(L x)_n = x_{n+1} - a_n(lambda) x_n` on the interior of a window;
/// the result is one position shorter than the input.
pub fn apply_linear(fam: &LinearFamily, lambda: &ParameterPoint, x: &WindowSeq) -> WindowSeq {
    let start = x.start();
    let states = (start..x.end() - 1)
        .map(|n| x.state(n + 1) - fam.coefficient(n, lambda) * x.state(n))
        .collect();
    WindowSeq::new(start, states)
}

/// Verifies the splice identity for a piecewise-constant family: applying the
/// operator directly must agree with splitting the sequence at 0, applying
/// the two autonomous half-line operators, and recombining. Returns the max
/// discrepancy over the window interior.
pub fn splice_check(fam: &LinearFamily, lambda: &ParameterPoint, x: &WindowSeq) -> f64 {
    let lhs = apply_linear(&fam.piecewise(), lambda, x);

    let a_plus = fam.limit_plus(lambda);
    let a_minus = fam.limit_minus(lambda);
    // J: duplicate the state at 0 into a forward and a backward half.
    let forward: Vec<DVector<f64>> = (0..x.end()).map(|n| x.state(n).clone()).collect();
    let backward: Vec<DVector<f64>> = (x.start()..=0).map(|n| x.state(n).clone()).collect();
    // L+ on [0, end-1); L- on [start, -1); I recombines by support.
    let plus_rows = apply_constant_halfline(&a_plus, &forward);
    let minus_rows = apply_constant_halfline(&a_minus, &backward);

    let mut worst: f64 = 0.0;
    for n in x.start()..x.end() - 1 {
        let rhs = if n >= 0 {
            &plus_rows[n as usize]
        } else {
            &minus_rows[(n - x.start()) as usize]
        };
        worst = worst.max((lhs.state(n) - rhs).amax());
    }
    worst
}

/// Applies the dual operator `(L' y)_n = y_n - a_{n+1}^T(lambda) y_{n+1}` on
/// the interior of a window.
pub fn adjoint_apply(fam: &LinearFamily, lambda: &ParameterPoint, y: &WindowSeq) -> WindowSeq {
    let start = y.start();
    let states = (start..y.end() - 1)
        .map(|n| y.state(n) - fam.coefficient(n + 1, lambda).transpose() * y.state(n + 1))
        .collect();
    WindowSeq::new(start, states)
}

/// Solves the dual recurrence `y_n = a_{n+1}^T y_{n+1}` on `[-m, m]`, anchored
/// at `y_0 = anchor`: forward positions come from transpose-inverse solves,
/// backward positions from direct multiplication. Whether the element decays
/// (and is therefore a genuine annihilator of the range) depends on the
/// anchor; callers must check.
pub fn adjoint_kernel_element(
    fam: &LinearFamily,
    lambda: &ParameterPoint,
    anchor: &DVector<f64>,
    m: usize,
) -> Result<WindowSeq> {
    let mut y = WindowSeq::zeros(-(m as i64), 2 * m + 1, fam.n_dim);
    *y.state_mut(0) = anchor.clone();
    for n in 0..m as i64 {
        let a_next = fam.coefficient(n + 1, lambda).transpose();
        let next = a_next.lu().solve(y.state(n)).ok_or(Error::NotInvertible {
            sigma_min: 0.0,
            tol: spectral::DEFAULT_TOL,
        })?;
        *y.state_mut(n + 1) = next;
    }
    for n in (-(m as i64)..0).rev() {
        let prev = fam.coefficient(n + 1, lambda).transpose() * y.state(n + 1);
        *y.state_mut(n) = prev;
    }
    Ok(y)
}

/// Summation-by-parts defect `|<Lx, y> - <x, L'y>|` for sequences supported
/// inside a common window. `x` pairs with `y` at equal positions on the left;
/// on the right, position `n` of the dual pairs with `x_{n+1}`.
pub fn pairing_defect(
    fam: &LinearFamily,
    lambda: &ParameterPoint,
    x: &WindowSeq,
    y: &WindowSeq,
) -> f64 {
    debug_assert_eq!(x.start(), y.start());
    debug_assert_eq!(x.len(), y.len());
    debug_assert!(
        x.state(x.start()).amax() == 0.0
            && x.state(x.end() - 1).amax() == 0.0
            && y.state(y.start()).amax() == 0.0
            && y.state(y.end() - 1).amax() == 0.0,
        "pairing requires sequences supported inside the window"
    );
    let lx = apply_linear(fam, lambda, x);
    let ly = adjoint_apply(fam, lambda, y);
    let mut left = 0.0;
    let mut right = 0.0;
    for n in x.start()..x.end() - 1 {
        left += lx.state(n).dot(y.state(n));
        right += x.get_or_zero(n + 1).dot(ly.state(n));
    }
    (left - right).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn circle_point(theta: f64) -> ParameterPoint {
        ParameterPoint::circle(theta).unwrap()
    }

    fn random_window(rng: &mut impl Rng, start: i64, len: usize, n_dim: usize) -> WindowSeq {
        let states = (0..len)
            .map(|_| DVector::from_fn(n_dim, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        WindowSeq::new(start, states)
    }

    #[test]
    fn torus_family_has_zero_deviation() {
        let fam = models::build_torus_example(1, 0.0).linearization().clone();
        let profile = check_a3(&fam, &circle_point(0.7), 40, 1e-10).unwrap();
        assert_eq!(profile.deviation, 0.0);
        assert!(profile.passes());
        assert!((profile.margin_plus - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn geometric_decay_profile() {
        // a_n = a_+ + 2^{-|n|} E with ||E||_F = 1; deviation from n0 on is 2^{-n0}.
        let limit = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
        let limit_fn: LimitFn = {
            let limit = limit.clone();
            Arc::new(move |_: &ParameterPoint| limit.clone())
        };
        let coeff: CoefficientFn = {
            let limit = limit.clone();
            Arc::new(move |n, _| {
                let mut a = limit.clone();
                a[(0, 0)] += 2f64.powi(-(n.unsigned_abs() as i32));
                a
            })
        };
        let n0 = 10;
        let fam = LinearFamily::new(2, 1, coeff, limit_fn.clone(), limit_fn, n0);
        let profile = check_a3(&fam, &circle_point(0.0), 60, 1e-12).unwrap();
        assert!((profile.deviation - 2f64.powi(-(n0 as i32))).abs() <= 1e-15);
        assert!(!profile.passes());
    }

    #[test]
    fn rotation_limit_fails_a3() {
        let c = std::f64::consts::FRAC_PI_3.cos();
        let s = std::f64::consts::FRAC_PI_3.sin();
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let limit_fn: LimitFn = Arc::new(move |_: &ParameterPoint| rot.clone());
        let coeff: CoefficientFn = {
            let limit_fn = limit_fn.clone();
            Arc::new(move |_, lambda: &ParameterPoint| limit_fn(lambda))
        };
        let fam = LinearFamily::new(2, 1, coeff, limit_fn.clone(), limit_fn, 1);
        assert!(matches!(
            check_a3(&fam, &circle_point(0.0), 10, 1e-8),
            Err(Error::HyperbolicityViolation { .. })
        ));
    }

    #[test]
    fn fredholm_index_of_worked_families() {
        let torus = models::build_torus_example(1, 0.0);
        assert_eq!(fredholm_index(torus.linearization(), &circle_point(1.0)).unwrap(), 0);
        let counter = models::build_counterexample(1);
        assert_eq!(fredholm_index(counter.linearization(), &circle_point(1.0)).unwrap(), 0);
    }

    #[test]
    fn truncated_operator_shape_for_torus() {
        let fam = models::build_torus_example(1, 0.0).linearization().clone();
        let op = assemble_truncated(&fam, &circle_point(0.3), 50).unwrap();
        assert_eq!(op.cols, 101 * 2);
        assert_eq!(op.rows, op.cols);
        assert_eq!(op.structural_index(), 0);
    }

    #[test]
    fn truncated_operator_shape_for_counterexample() {
        let fam = models::build_counterexample(1).linearization().clone();
        let op = assemble_truncated(&fam, &circle_point(-2.0), 50).unwrap();
        assert_eq!(op.cols, 101 * 4);
        assert_eq!(op.rows, op.cols);
    }

    #[test]
    fn window_too_small_is_rejected() {
        let fam = models::build_random(11, 3, 1, 1, 0.5).unwrap();
        let m = fam.decay_probe() - 1;
        assert!(matches!(
            assemble_truncated(&fam, &circle_point(0.0), m),
            Err(Error::WindowTooSmall { .. })
        ));
    }

    #[test]
    fn structural_index_matches_fredholm_index_on_random_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..200 {
            let n = 1 + (trial % 4) as usize;
            let k_plus = rng.random_range(0..=n);
            let k_minus = rng.random_range(0..=n);
            let fam = models::build_random(3000 + trial, n, k_plus, k_minus, 0.5).unwrap();
            let lambda = circle_point(0.0);
            let idx = fredholm_index(&fam, &lambda).unwrap();
            assert_eq!(idx, k_plus as i64 - k_minus as i64, "trial {trial}");
            let op = assemble_truncated(&fam, &lambda, fam.decay_probe()).unwrap();
            assert_eq!(op.structural_index(), idx, "trial {trial}");
            // Square exactly when the stable dimensions agree at both ends.
            assert_eq!(op.rows == op.cols, k_plus == k_minus, "trial {trial}");
            // Freezing the coefficients to their limits is a compact
            // perturbation: all counts must be unchanged.
            let frozen = assemble_truncated(&fam.piecewise(), &lambda, fam.decay_probe()).unwrap();
            assert_eq!(frozen.rows, op.rows);
            assert_eq!(frozen.cols, op.cols);
        }
    }

    #[test]
    fn torus_kernel_appears_exactly_at_half_turn() {
        let fam = models::build_torus_example(1, 0.0).linearization().clone();
        let kernel_at = |theta: f64| {
            let op = assemble_truncated(&fam, &circle_point(theta), 50).unwrap();
            kernel_diagnostics(&op, 1e-8).unwrap()
        };
        let at_pi = kernel_at(std::f64::consts::PI);
        assert_eq!(at_pi.kernel_dim, 1);
        // The reported kernel vector decays into the window edges.
        let x = WindowSeq::from_flat(-50, 2, &at_pi.kernel_basis.column(0).into_owned());
        let edge = x.state(-50).norm().max(x.state(50).norm());
        assert!(edge <= 1e-6 * x.amplitude());
        let at_zero = kernel_at(0.0);
        assert_eq!(at_zero.kernel_dim, 0);
        assert!(at_zero.gap_ratio.is_infinite());
    }

    #[test]
    fn counterexample_kernel_is_everywhere_and_has_known_shape() {
        let fam = models::build_counterexample(1).linearization().clone();
        for theta in [0.0, 1.0, -2.5] {
            let op = assemble_truncated(&fam, &circle_point(theta), 50).unwrap();
            let diag = kernel_diagnostics(&op, 1e-8).unwrap();
            assert!(diag.kernel_dim >= 1, "theta {theta}");
            // The kernel direction is supported on the third coordinate with
            // geometric profile 2^{-|n|}.
            let col = diag.kernel_basis.column(0);
            let x = WindowSeq::from_flat(-50, 4, &col.into_owned());
            let scale = x.state(0)[2];
            assert!(scale.abs() > 0.1, "theta {theta}");
            for n in [-20i64, -7, -1, 0, 1, 7, 20] {
                let expected = scale * 2f64.powi(-(n.unsigned_abs() as i32));
                let s = x.state(n);
                assert!((s[2] - expected).abs() <= 1e-8, "theta {theta}, n {n}");
                for coord in [0, 1, 3] {
                    assert!(s[coord].abs() <= 1e-8, "theta {theta}, n {n}");
                }
            }
            // Reported kernel vectors decay into the window edges.
            let edge = x.state(-50).norm().max(x.state(50).norm());
            assert!(edge <= 1e-6 * x.amplitude());
        }
    }

    #[test]
    fn kernel_dimension_is_window_stable() {
        let torus = models::build_torus_example(1, 0.0).linearization().clone();
        let counter = models::build_counterexample(1).linearization().clone();
        for (fam, theta, expect) in [
            (&torus, std::f64::consts::PI, 1usize),
            (&torus, 0.9, 0),
            (&counter, 0.9, 1),
        ] {
            for m in [30, 60] {
                let op = assemble_truncated(fam, &circle_point(theta), m).unwrap();
                let diag = kernel_diagnostics(&op, 1e-8).unwrap();
                assert_eq!(diag.kernel_dim, expect, "m {m}, theta {theta}");
            }
        }
    }

    #[test]
    fn check_a5_finds_vertex_for_torus_but_not_counterexample() {
        let mesh = ParameterMesh::circle(16).unwrap();
        let torus = models::build_torus_example(1, 0.0).linearization().clone();
        let found = check_a5(&torus, &mesh, 40, 1e-8).unwrap();
        let lambda = found.expect("regular vertex exists");
        assert!((lambda.theta()[0] - std::f64::consts::PI).abs() > 1e-6);

        let counter = models::build_counterexample(1).linearization().clone();
        assert!(check_a5(&counter, &mesh, 40, 1e-8).unwrap().is_none());
    }

    #[test]
    fn check_a5_on_constant_transversal_family() {
        // Constant hyperbolic family whose stable(+) and unstable(-) spaces
        // intersect trivially: the first vertex qualifies.
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
        let limit_fn: LimitFn = Arc::new(move |_: &ParameterPoint| a.clone());
        let coeff: CoefficientFn = {
            let limit_fn = limit_fn.clone();
            Arc::new(move |_, lambda: &ParameterPoint| limit_fn(lambda))
        };
        let fam = LinearFamily::new(2, 1, coeff, limit_fn.clone(), limit_fn, 1);
        let mesh = ParameterMesh::circle(8).unwrap();
        let found = check_a5(&fam, &mesh, 30, 1e-8).unwrap().unwrap();
        assert_eq!(found, mesh.vertex(0).clone());
    }

    #[test]
    fn right_inverse_closed_form() {
        // For a = diag(1/2, 2) and x = ((1,1), 0, 0, ...):
        // (Mx)_0 = (0, -1/2) and (Mx)_n = (2^{-(n-1)}, 0) for n >= 1.
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
        let mut x = vec![DVector::zeros(2); 20];
        x[0] = DVector::from_vec(vec![1.0, 1.0]);
        let mx = right_inverse_apply(&a, &x).unwrap();
        assert!((&mx[0] - DVector::from_vec(vec![0.0, -0.5])).amax() <= 1e-14);
        for (n, value) in mx.iter().enumerate().skip(1) {
            let expected = DVector::from_vec(vec![2f64.powi(-(n as i32 - 1)), 0.0]);
            assert!((value - expected).amax() <= 1e-14, "n = {n}");
        }
    }

    #[test]
    fn right_inverse_of_zero_is_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
        let x = vec![DVector::zeros(2); 10];
        let mx = right_inverse_apply(&a, &x).unwrap();
        assert!(mx.iter().all(|v| v.amax() == 0.0));
    }

    #[test]
    fn right_inverse_is_right_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for trial in 0..100 {
            let n = 1 + (trial % 4);
            let (a, _) = models::corpus::random_hyperbolic_matrix(&mut rng, n, 0.1);
            let x: Vec<DVector<f64>> = (0..=40)
                .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let mx = right_inverse_apply(&a, &x).unwrap();
            let lmx = apply_constant_halfline(&a, &mx);
            let mut worst: f64 = 0.0;
            for k in 0..=30 {
                worst = worst.max((&lmx[k] - &x[k]).amax());
            }
            assert!(worst <= 1e-8, "trial {trial}: residual {worst:.3e}");
        }
    }

    #[test]
    fn splice_identity_on_worked_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(777);
        let torus = models::build_torus_example(1, 0.0).linearization().clone();
        let counter = models::build_counterexample(1).linearization().clone();
        for (fam, n_dim) in [(&torus, 2usize), (&counter, 4usize)] {
            for _ in 0..20 {
                let x = random_window(&mut rng, -30, 61, n_dim);
                let lambda = circle_point(rng.random_range(-3.0..3.0));
                assert!(splice_check(fam, &lambda, &x) <= 1e-12);
            }
        }
        let zero = WindowSeq::symmetric(30, 2);
        assert_eq!(splice_check(&torus, &circle_point(0.1), &zero), 0.0);
    }

    #[test]
    fn adjoint_kernel_recurrence_for_counterexample() {
        let fam = models::build_counterexample(1).linearization().clone();
        let lambda = circle_point(0.8);
        let anchor = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        let y = adjoint_kernel_element(&fam, &lambda, &anchor, 30).unwrap();
        // Fourth components follow 2^{-n} forward and 2^{n+2} backward; all
        // positive and summable.
        for n in -30i64..=30 {
            let expected = if n >= 0 {
                2f64.powi(-(n as i32))
            } else {
                2f64.powi(n as i32 + 2)
            };
            let s = y.state(n);
            assert!((s[3] - expected).abs() <= 1e-12, "n {n}");
            assert!(s[3] > 0.0);
            for coord in 0..3 {
                assert!(s[coord].abs() <= 1e-14);
            }
        }
        // And the element satisfies the dual recurrence on the interior.
        let res = adjoint_apply(&fam, &lambda, &y);
        let worst = (res.start()..res.end() - 1)
            .map(|n| res.state(n).amax())
            .fold(0.0_f64, f64::max);
        assert!(worst <= 1e-12);
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let fam = models::build_counterexample(1).linearization().clone();
        let y = WindowSeq::symmetric(10, 4);
        let res = adjoint_apply(&fam, &circle_point(0.0), &y);
        assert!(res.states().iter().all(|s| s.amax() == 0.0));
    }

    #[test]
    fn summation_by_parts_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let counter = models::build_counterexample(1).linearization().clone();
        let torus = models::build_torus_example(1, 0.0).linearization().clone();
        for (fam, n_dim) in [(&counter, 4usize), (&torus, 2usize)] {
            for trial in 0..50 {
                let lambda = circle_point(rng.random_range(-3.0..3.0));
                let mut x = random_window(&mut rng, -20, 41, n_dim);
                let mut y = random_window(&mut rng, -20, 41, n_dim);
                // Compact support: clear a two-slot margin at both ends.
                for n in [-20i64, -19, 19, 20] {
                    x.state_mut(n).fill(0.0);
                    y.state_mut(n).fill(0.0);
                }
                let defect = pairing_defect(fam, &lambda, &x, &y);
                assert!(defect <= 1e-10, "trial {trial}: defect {defect:.3e}");
            }
        }
    }
}
