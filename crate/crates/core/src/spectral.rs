//! Hyperbolicity tests and stable/unstable splittings of a single real matrix.
//!
//! A real invertible matrix is hyperbolic when no eigenvalue has modulus 1.
//! Its state space then splits into the stable subspace (spanned by generalized
//! eigenvectors with eigenvalues inside the unit circle) and the unstable
//! subspace (eigenvalues outside). The splitting is computed from an ordered
//! real Schur decomposition; a contour-quadrature spectral projector is kept
//! alongside as an independent cross-check.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};

/// Largest supported matrix dimension. Dense O(N^3) algorithms are used
/// throughout, so the cap keeps every operation interactive.
pub const MAX_DIM: usize = 32;

/// Default tolerance on `||mu| - 1|` below which a matrix is treated as
/// failing hyperbolicity.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Stable/unstable splitting of a hyperbolic matrix.
///
/// `ps` and `pu` are the (generally oblique) spectral projectors onto the
/// stable and unstable subspaces; `vs` and `vu` carry orthonormal bases of
/// those subspaces with deterministic column signs, so that repeated runs
/// produce identical frames.
#[derive(Debug, Clone)]
pub struct HyperbolicSplitting {
    pub ps: DMatrix<f64>,
    pub pu: DMatrix<f64>,
    pub vs: DMatrix<f64>,
    pub vu: DMatrix<f64>,
    pub k_s: usize,
    pub k_u: usize,
    /// Min distance of eigenvalue moduli to the unit circle.
    pub margin: f64,
}

pub(crate) fn validate_matrix(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::InvalidInput(format!(
            "expected a nonempty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() > MAX_DIM {
        return Err(Error::DimensionTooLarge {
            n: a.nrows(),
            max: MAX_DIM,
        });
    }
    for row in 0..a.nrows() {
        for col in 0..a.ncols() {
            if !a[(row, col)].is_finite() {
                return Err(Error::NonFiniteEntry { row, col });
            }
        }
    }
    Ok(())
}

/// Checks invertibility and hyperbolicity of `a`.
///
/// Returns the hyperbolicity margin `min_i ||mu_i| - 1|`; fails with
/// [`Error::NotInvertible`] when the smallest singular value is at most `tol`
/// and with [`Error::HyperbolicityViolation`] when some eigenvalue modulus is
/// within `tol` of 1.
pub fn is_hyperbolic(a: &DMatrix<f64>, tol: f64) -> Result<f64> {
    validate_matrix(a)?;
    let sigma_min = a
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if sigma_min.is_nan() || sigma_min <= tol {
        return Err(Error::NotInvertible { sigma_min, tol });
    }
    let (_, t) = schur_decompose(a)?;
    let mut margin = f64::INFINITY;
    let mut worst = 1.0;
    for block in diagonal_blocks(&t) {
        let dist = (block.modulus - 1.0).abs();
        if dist < margin {
            margin = dist;
            worst = block.modulus;
        }
    }
    if margin < tol {
        return Err(Error::HyperbolicityViolation {
            modulus: worst,
            tol,
        });
    }
    Ok(margin)
}

/// Real Schur decomposition with a bounded iteration budget, so that a
/// pathological input surfaces as an error instead of hanging the caller.
fn schur_decompose(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let max_iter = 200 + 30 * n * n;
    nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, max_iter)
        .map(|schur| schur.unpack())
        .ok_or_else(|| Error::Numerical(format!("Schur iteration did not converge in {max_iter} steps")))
}

/// Trapezoid approximation of the unit-circle spectral projector,
/// `P = (1/nodes) * sum_j z_j (z_j I - a)^{-1}` with `z_j = exp(2 pi i j / nodes)`.
///
/// The quadrature converges geometrically in `nodes` while the margin stays
/// away from 0, which makes it a useful independent oracle for
/// [`hyperbolic_splitting`]; it is not used on the primary path because its
/// accuracy degrades as eigenvalues approach the circle.
pub fn spectral_projector_contour(a: &DMatrix<f64>, nodes: usize) -> Result<DMatrix<Complex<f64>>> {
    if nodes < 16 {
        return Err(Error::InvalidInput(format!(
            "contour quadrature needs at least 16 nodes, got {nodes}"
        )));
    }
    is_hyperbolic(a, DEFAULT_TOL)?;
    let n = a.nrows();
    let ac = a.map(|x| Complex::new(x, 0.0));
    let eye = DMatrix::<Complex<f64>>::identity(n, n);
    let mut acc = DMatrix::<Complex<f64>>::zeros(n, n);
    for j in 0..nodes {
        let angle = 2.0 * std::f64::consts::PI * (j as f64) / (nodes as f64);
        let z = Complex::from_polar(1.0, angle);
        let resolvent = (&eye * z - &ac)
            .lu()
            .try_inverse()
            .ok_or(Error::HyperbolicityViolation {
                modulus: 1.0,
                tol: DEFAULT_TOL,
            })?;
        acc += resolvent * z;
    }
    Ok(acc / Complex::new(nodes as f64, 0.0))
}

/// Computes the stable/unstable splitting of a hyperbolic matrix.
///
/// Bases come from real Schur decompositions reordered so that the stable
/// (resp. unstable) eigenvalue cluster leads; the projectors are reconstructed
/// as the projection onto `span(vs)` along `span(vu)`, which realizes the real
/// part of the contour projector without evaluating it.
pub fn hyperbolic_splitting(a: &DMatrix<f64>, tol: f64) -> Result<HyperbolicSplitting> {
    let margin = is_hyperbolic(a, tol)?;
    let n = a.nrows();

    let (q_s, k_s) = ordered_schur(a, true)?;
    let (q_u, k_u) = ordered_schur(a, false)?;
    debug_assert_eq!(k_s + k_u, n);

    let vs = orthonormal_frame(q_s.columns(0, k_s).into_owned());
    let vu = orthonormal_frame(q_u.columns(0, k_u).into_owned());

    // Oblique projector onto span(vs) along span(vu): with W = [vs vu],
    // ps = vs * (first k_s rows of W^{-1}).
    let mut w = DMatrix::<f64>::zeros(n, n);
    w.view_mut((0, 0), (n, k_s)).copy_from(&vs);
    w.view_mut((0, k_s), (n, k_u)).copy_from(&vu);
    let w_inv = w.lu().try_inverse().ok_or(Error::HyperbolicityViolation {
        modulus: 1.0,
        tol,
    })?;
    let ps = if k_s == 0 {
        DMatrix::zeros(n, n)
    } else {
        &vs * w_inv.rows(0, k_s)
    };
    let pu = DMatrix::identity(n, n) - &ps;

    Ok(HyperbolicSplitting {
        ps,
        pu,
        vs,
        vu,
        k_s,
        k_u,
        margin,
    })
}

/// Dynamical cross-check of a splitting: every stable basis vector must decay
/// below `1e-6` of its norm under forward iteration within `n_max` steps, and
/// every unstable one under backward iteration.
pub fn decay_check(split: &HyperbolicSplitting, a: &DMatrix<f64>, n_max: usize) -> bool {
    const DECAY_FACTOR: f64 = 1e-6;
    for col in split.vs.column_iter() {
        let target = DECAY_FACTOR * col.norm();
        let mut v: DVector<f64> = col.into_owned();
        let mut ok = false;
        for _ in 0..n_max {
            v = a * v;
            if v.norm() < target {
                ok = true;
                break;
            }
        }
        if !ok {
            return false;
        }
    }
    if split.k_u > 0 {
        let lu = a.clone().lu();
        for col in split.vu.column_iter() {
            let target = DECAY_FACTOR * col.norm();
            let mut v: DVector<f64> = col.into_owned();
            let mut ok = false;
            for _ in 0..n_max {
                v = match lu.solve(&v) {
                    Some(next) => next,
                    None => return false,
                };
                if v.norm() < target {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Ordered real Schur decomposition
// ---------------------------------------------------------------------------

/// Real Schur form of `a` with the diagonal blocks reordered so that the
/// stable cluster (`stable_first = true`) or the unstable cluster leads.
///
/// Returns the accumulated orthogonal factor `Q` and the size of the leading
/// cluster; the leading columns of `Q` span the corresponding invariant
/// subspace.
fn ordered_schur(a: &DMatrix<f64>, stable_first: bool) -> Result<(DMatrix<f64>, usize)> {
    let (mut q, mut t) = schur_decompose(a)?;
    split_real_pair_blocks(&mut q, &mut t);

    let selected = |modulus: f64| {
        if stable_first {
            modulus < 1.0
        } else {
            modulus > 1.0
        }
    };

    // Bubble selected blocks to the front with adjacent swaps; each swap is an
    // orthogonal similarity, so Q stays orthogonal throughout.
    loop {
        let blocks = diagonal_blocks(&t);
        let mut swapped = false;
        for pair in blocks.windows(2) {
            let (first, second) = (&pair[0], &pair[1]);
            if !selected(first.modulus) && selected(second.modulus) {
                swap_adjacent_blocks(&mut q, &mut t, first.start, first.size, second.size);
                swapped = true;
                break;
            }
        }
        if !swapped {
            break;
        }
    }

    let count = diagonal_blocks(&t)
        .iter()
        .filter(|b| selected(b.modulus))
        .map(|b| b.size)
        .sum();
    Ok((q, count))
}

struct SchurBlock {
    start: usize,
    size: usize,
    modulus: f64,
}

fn diagonal_blocks(t: &DMatrix<f64>) -> Vec<SchurBlock> {
    let n = t.nrows();
    let scale = t.amax().max(1.0);
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > f64::EPSILON * scale {
            // Complex-conjugate pair: |mu|^2 equals the block determinant.
            let det = t[(i, i)] * t[(i + 1, i + 1)] - t[(i, i + 1)] * t[(i + 1, i)];
            blocks.push(SchurBlock {
                start: i,
                size: 2,
                modulus: det.abs().sqrt(),
            });
            i += 2;
        } else {
            blocks.push(SchurBlock {
                start: i,
                size: 1,
                modulus: t[(i, i)].abs(),
            });
            i += 1;
        }
    }
    blocks
}

/// Splits 2x2 diagonal blocks that carry two real eigenvalues into 1x1 blocks
/// via a Givens rotation, so that every remaining 2x2 block is a genuine
/// complex-conjugate pair (whose two eigenvalues share one modulus and hence
/// never straddle the unit circle).
fn split_real_pair_blocks(q: &mut DMatrix<f64>, t: &mut DMatrix<f64>) {
    let n = t.nrows();
    let scale = t.amax().max(1.0);
    let mut i = 0;
    while i + 1 < n {
        if t[(i + 1, i)].abs() <= f64::EPSILON * scale {
            i += 1;
            continue;
        }
        let (t00, t01, t10, t11) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
        let half_diff = 0.5 * (t00 - t11);
        let disc = half_diff * half_diff + t01 * t10;
        if disc < 0.0 {
            i += 2;
            continue;
        }
        // Real eigenvalues: rotate an eigenvector of the better-separated root
        // into the first coordinate.
        let mid = 0.5 * (t00 + t11);
        let root = disc.sqrt();
        let mu = if mid >= 0.0 { mid + root } else { mid - root };
        let cand_a = (t01, mu - t00);
        let cand_b = (mu - t11, t10);
        let (vx, vy) = if cand_a.0.abs() + cand_a.1.abs() >= cand_b.0.abs() + cand_b.1.abs() {
            cand_a
        } else {
            cand_b
        };
        let norm = (vx * vx + vy * vy).sqrt();
        if norm > 0.0 {
            let (c, s) = (vx / norm, vy / norm);
            let g = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            apply_block_similarity(q, t, i, &g);
        }
        t[(i + 1, i)] = 0.0;
        i += 1;
    }
}

/// Swaps two adjacent diagonal blocks of sizes `p` and `qs` starting at row
/// `i`, using the Sylvester-equation construction: the invariant subspace of
/// the trailing block is rotated to the front by an exact QR factor.
fn swap_adjacent_blocks(q: &mut DMatrix<f64>, t: &mut DMatrix<f64>, i: usize, p: usize, qs: usize) {
    let a11 = t.view((i, i), (p, p)).into_owned();
    let a12 = t.view((i, i + p), (p, qs)).into_owned();
    let a22 = t.view((i + p, i + p), (qs, qs)).into_owned();

    // Solve a11 * x - x * a22 = a12 through its Kronecker form (size <= 4).
    let dim = p * qs;
    let mut sys = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for j in 0..qs {
        for r in 0..p {
            let row = j * p + r;
            rhs[row] = a12[(r, j)];
            for m in 0..p {
                sys[(row, j * p + m)] += a11[(r, m)];
            }
            for m in 0..qs {
                sys[(row, m * p + r)] -= a22[(m, j)];
            }
        }
    }
    // The two blocks lie on opposite sides of the unit circle, so their
    // spectra are disjoint and the system is solvable.
    let x = sys
        .lu()
        .solve(&rhs)
        .expect("adjacent Schur blocks share an eigenvalue");

    let mut stacked = DMatrix::<f64>::zeros(p + qs, qs);
    for j in 0..qs {
        for r in 0..p {
            stacked[(r, j)] = -x[j * p + r];
        }
        stacked[(p + j, j)] = 1.0;
    }
    let g = complete_to_orthogonal_basis(&stacked);
    apply_block_similarity(q, t, i, &g);

    // Enforce the block-triangular structure the swap produces.
    for r in i + qs..i + p + qs {
        for c in i..(i + qs).min(r) {
            t[(r, c)] = 0.0;
        }
    }
}

/// Applies the orthogonal similarity `g` acting on the index window
/// `[i, i + g.nrows())` to `t` and accumulates it into `q`.
fn apply_block_similarity(q: &mut DMatrix<f64>, t: &mut DMatrix<f64>, i: usize, g: &DMatrix<f64>) {
    let n = t.nrows();
    let w = g.nrows();
    let rows = t.view((i, 0), (w, n)).into_owned();
    t.view_mut((i, 0), (w, n)).copy_from(&(g.transpose() * rows));
    let cols = t.view((0, i), (n, w)).into_owned();
    t.view_mut((0, i), (n, w)).copy_from(&(cols * g));
    let qcols = q.view((0, i), (n, w)).into_owned();
    q.view_mut((0, i), (n, w)).copy_from(&(qcols * g));
}

/// Completes the orthonormalized columns of `m` to a full orthogonal matrix,
/// deterministically, by greedily appending the least-represented coordinate
/// directions.
pub(crate) fn complete_to_orthogonal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let k = m.ncols();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for j in 0..k {
        let mut v: DVector<f64> = m.column(j).into_owned();
        for u in &cols {
            let coeff = u.dot(&v);
            v -= u * coeff;
        }
        let norm = v.norm();
        assert!(norm > 1e-12, "degenerate column set in orthogonal completion");
        cols.push(v / norm);
    }
    while cols.len() < n {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for idx in 0..n {
            let mut v = DVector::<f64>::zeros(n);
            v[idx] = 1.0;
            for u in &cols {
                let coeff = u.dot(&v);
                v -= u * coeff;
            }
            let norm = v.norm();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, v));
            }
        }
        let (norm, v) = best.unwrap();
        cols.push(v / norm);
    }
    DMatrix::from_columns(&cols)
}

/// Re-orthonormalizes a frame by QR and fixes each column's sign so the
/// largest-magnitude entry (lowest index on ties) is positive.
pub(crate) fn orthonormal_frame(m: DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return m;
    }
    let mut frame = m.qr().q();
    fix_column_signs(&mut frame);
    frame
}

pub(crate) fn fix_column_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let mut best = 0;
        let mut best_abs = m[(0, j)].abs();
        for i in 1..m.nrows() {
            let a = m[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if m[(best, j)] < 0.0 {
            for i in 0..m.nrows() {
                m[(i, j)] = -m[(i, j)];
            }
        }
    }
}
