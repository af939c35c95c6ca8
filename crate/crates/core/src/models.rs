//! Built-in families and randomized generators for property tests.
//!
//! `build_torus_example` is the 2-dimensional family over T^k whose stable
//! bundle at `+inf` twists like a Moebius band, `build_counterexample` the
//! 4-dimensional family whose linearization keeps a decaying kernel at every
//! parameter (so no certificate may be issued despite the class mismatch),
//! and `build_random` produces asymptotically hyperbolic linear families with
//! prescribed stable dimensions for index-structure tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linear::{CoefficientFn, LimitFn, LinearFamily};
use crate::mesh::ParameterPoint;
use crate::nonlinear::{NonlinearFamily, StateFn, StateJacFn};
use crate::spectral::MAX_DIM;

/// The 2x2 coefficient matrix of the torus example at angle sum `theta`:
/// symmetric, with eigenvalues 1/2 and 2 for every angle, and stable
/// eigenvector `(cos(theta/2), sin(theta/2))`.
pub fn torus_matrix(theta_sum: f64) -> DMatrix<f64> {
    let half = 0.5 * theta_sum;
    let s2 = half.sin() * half.sin();
    let c2 = half.cos() * half.cos();
    let off = -0.75 * theta_sum.sin();
    DMatrix::from_row_slice(2, 2, &[0.5 + 1.5 * s2, off, off, 0.5 + 1.5 * c2])
}

/// The 4x4 `+inf` limit of the kernel-obstruction example: the torus block
/// extended by the fixed hyperbolic pair diag(1/2, 2).
pub fn counterexample_matrix(theta_sum: f64) -> DMatrix<f64> {
    let block = torus_matrix(theta_sum);
    let mut a = DMatrix::<f64>::zeros(4, 4);
    a.view_mut((0, 0), (2, 2)).copy_from(&block);
    a[(2, 2)] = 0.5;
    a[(3, 3)] = 2.0;
    a
}

/// The constant `-inf` limit of the kernel-obstruction example.
pub fn counterexample_matrix_minus() -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0, 2.0, 0.5]))
}

/// Torus family over T^k with quadratic coupling `h(x) = c (x_2^2, x_1^2)`.
///
/// `c = 0` is the purely linear case, whose only bifurcation point on the
/// circle is the angle sum pi. The quadratic term vanishes to second order at
/// the origin, so the linearization is independent of `c`.
pub fn build_torus_example(k: usize, c: f64) -> NonlinearFamily {
    assert!(k >= 1, "torus dimension must be >= 1");
    assert!(c.abs() <= 1.0, "coupling must satisfy |c| <= 1");
    let coefficient = |n: i64, lambda: &ParameterPoint| {
        if n >= 0 {
            torus_matrix(lambda.angle_sum())
        } else {
            torus_matrix(0.0)
        }
    };
    let f: StateFn = Arc::new(move |n, lambda, x: &DVector<f64>| {
        let mut out = coefficient(n, lambda) * x;
        out[0] += c * x[1] * x[1];
        out[1] += c * x[0] * x[0];
        out
    });
    let df: StateJacFn = Arc::new(move |n, lambda, x: &DVector<f64>| {
        let mut jac = coefficient(n, lambda);
        jac[(0, 1)] += 2.0 * c * x[1];
        jac[(1, 0)] += 2.0 * c * x[0];
        jac
    });
    let a_plus: LimitFn = Arc::new(|lambda: &ParameterPoint| torus_matrix(lambda.angle_sum()));
    let a_minus: LimitFn = Arc::new(|_: &ParameterPoint| torus_matrix(0.0));
    NonlinearFamily::new(2, k, f, df, a_plus, a_minus, 1)
}

/// 4-dimensional family over T^k with `h(x) = (0, 0, 0, ||x||^2)`.
///
/// Its linearization admits the decaying kernel `(0, 0, 2^{-|n|}, 0)` at every
/// parameter, and the positive dual-kernel weights force every solution of
/// the full equation to vanish, so the family has no bifurcation points.
pub fn build_counterexample(k: usize) -> NonlinearFamily {
    assert!(k >= 1, "torus dimension must be >= 1");
    let coefficient = |n: i64, lambda: &ParameterPoint| {
        if n >= 0 {
            counterexample_matrix(lambda.angle_sum())
        } else {
            counterexample_matrix_minus()
        }
    };
    let f: StateFn = Arc::new(move |n, lambda, x: &DVector<f64>| {
        let mut out = coefficient(n, lambda) * x;
        out[3] += x.norm_squared();
        out
    });
    let df: StateJacFn = Arc::new(move |n, lambda, x: &DVector<f64>| {
        let mut jac = coefficient(n, lambda);
        for col in 0..4 {
            jac[(3, col)] += 2.0 * x[col];
        }
        jac
    });
    let a_plus: LimitFn =
        Arc::new(|lambda: &ParameterPoint| counterexample_matrix(lambda.angle_sum()));
    let a_minus: LimitFn = Arc::new(|_: &ParameterPoint| counterexample_matrix_minus());
    NonlinearFamily::new(4, k, f, df, a_plus, a_minus, 1)
}

/// Seeded random asymptotically hyperbolic linear family, constant in the
/// parameter, with `k_plus`/`k_minus` stable eigenvalues in `(0.2, 0.8)` at
/// the two ends (the rest in `(1.25, 5)`) and coefficients approaching the
/// limits at rate `decay^|n|`.
pub fn build_random(
    seed: u64,
    n: usize,
    k_plus: usize,
    k_minus: usize,
    decay: f64,
) -> Result<LinearFamily> {
    if n == 0 || n > MAX_DIM {
        return Err(Error::InvalidInput(format!("dimension {n} out of range")));
    }
    if k_plus > n || k_minus > n {
        return Err(Error::BadRanks { k_plus, k_minus, n });
    }
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::InvalidInput(format!(
            "decay rate {decay} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plus = conjugated_split_diag(&mut rng, n, k_plus);
    let minus = conjugated_split_diag(&mut rng, n, k_minus);

    const PERTURBATION_SCALE: f64 = 0.05;
    // Window index beyond which the perturbation's Frobenius norm is < 1e-10.
    let bound = PERTURBATION_SCALE * n as f64;
    let decay_probe = ((1e-10 / bound).ln() / decay.ln()).ceil().max(1.0) as usize;
    let decay_probe = decay_probe.min(100);

    let a_plus_mat = plus.clone();
    let a_minus_mat = minus.clone();
    let coeff: CoefficientFn = Arc::new(move |n_idx, _lambda: &ParameterPoint| {
        let base = if n_idx >= 0 { &plus } else { &minus };
        let mut e_rng = ChaCha8Rng::seed_from_u64(
            seed ^ (n_idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let scale = PERTURBATION_SCALE * decay.powi(n_idx.unsigned_abs().min(1_000) as i32);
        let mut a = base.clone();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                a[(i, j)] += scale * e_rng.random_range(-1.0..1.0);
            }
        }
        a
    });
    let a_plus: LimitFn = Arc::new(move |_: &ParameterPoint| a_plus_mat.clone());
    let a_minus: LimitFn = Arc::new(move |_: &ParameterPoint| a_minus_mat.clone());
    Ok(LinearFamily::new(n, 1, coeff, a_plus, a_minus, decay_probe))
}

fn conjugated_split_diag(rng: &mut impl Rng, n: usize, k_stable: usize) -> DMatrix<f64> {
    let mut eigenvalues = DVector::<f64>::zeros(n);
    for i in 0..n {
        eigenvalues[i] = if i < k_stable {
            rng.random_range(0.2..0.8)
        } else {
            rng.random_range(1.25..5.0)
        };
    }
    let q = corpus::random_orthogonal(rng, n);
    &q * DMatrix::from_diagonal(&eigenvalues) * q.transpose()
}

/// Linear family given by explicit matrices: two limits plus finitely many
/// per-position overrides. This is the only way to feed user data through the
/// CLI without recompiling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabulatedFamily {
    pub n_dim: usize,
    /// Row-major N x N limit at +inf.
    pub a_plus: Vec<Vec<f64>>,
    /// Row-major N x N limit at -inf.
    pub a_minus: Vec<Vec<f64>>,
    /// Positions where `a_n` differs from the limits.
    #[serde(default)]
    pub coefficients: Vec<TabulatedCoefficient>,
    #[serde(default)]
    pub decay_probe: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabulatedCoefficient {
    pub n: i64,
    pub matrix: Vec<Vec<f64>>,
}

fn parse_matrix(rows: &[Vec<f64>], n_dim: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n_dim || rows.iter().any(|r| r.len() != n_dim) {
        return Err(Error::Parse(format!(
            "{what}: expected a {n_dim}x{n_dim} matrix"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n_dim, n_dim, &flat))
}

/// Instantiates a [`TabulatedFamily`] as a parameter-independent linear
/// family over the circle.
pub fn build_tabulated(tab: &TabulatedFamily) -> Result<LinearFamily> {
    let n_dim = tab.n_dim;
    if n_dim == 0 || n_dim > MAX_DIM {
        return Err(Error::Parse(format!("tabulated dimension {n_dim} out of range")));
    }
    let plus = parse_matrix(&tab.a_plus, n_dim, "a_plus")?;
    let minus = parse_matrix(&tab.a_minus, n_dim, "a_minus")?;
    let mut overrides: BTreeMap<i64, DMatrix<f64>> = BTreeMap::new();
    let mut farthest = 0usize;
    for entry in &tab.coefficients {
        overrides.insert(entry.n, parse_matrix(&entry.matrix, n_dim, "coefficient")?);
        farthest = farthest.max(entry.n.unsigned_abs() as usize);
    }
    let decay_probe = tab.decay_probe.unwrap_or(0).max(farthest + 1);
    let a_plus_mat = plus.clone();
    let a_minus_mat = minus.clone();
    let coeff: CoefficientFn = Arc::new(move |n, _: &ParameterPoint| {
        overrides
            .get(&n)
            .cloned()
            .unwrap_or_else(|| if n >= 0 { plus.clone() } else { minus.clone() })
    });
    let a_plus: LimitFn = Arc::new(move |_: &ParameterPoint| a_plus_mat.clone());
    let a_minus: LimitFn = Arc::new(move |_: &ParameterPoint| a_minus_mat.clone());
    Ok(LinearFamily::new(n_dim, 1, coeff, a_plus, a_minus, decay_probe))
}

/// Names of the built-in models.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    TorusExample,
    CounterexampleA5,
    RandomAsymptotic,
    Tabulated,
}

impl std::str::FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "torus_example" => Ok(Self::TorusExample),
            "counterexample_a5" | "counterexample_A5" => Ok(Self::CounterexampleA5),
            "random_asymptotic" => Ok(Self::RandomAsymptotic),
            "tabulated" => Ok(Self::Tabulated),
            other => Err(Error::Parse(format!("unknown model '{other}'"))),
        }
    }
}

/// Serializable description of a model instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: ModelName,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Scalar parameters: `c` for the torus coupling; `seed`, `dim`,
    /// `k_plus`, `k_minus`, `decay` for the random generator.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

fn default_k() -> usize {
    1
}

impl ModelSpec {
    pub fn named(name: ModelName) -> Self {
        Self {
            name,
            k: 1,
            params: BTreeMap::new(),
        }
    }

    fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }
}

/// Builds the family a [`ModelSpec`] describes. Tabulated specs need the
/// accompanying table.
pub fn instantiate(spec: &ModelSpec, tabulated: Option<&TabulatedFamily>) -> Result<NonlinearFamily> {
    if spec.k == 0 {
        return Err(Error::InvalidInput("model needs k >= 1".into()));
    }
    match spec.name {
        ModelName::TorusExample => {
            let c = spec.param("c", 0.0);
            if !(c.is_finite() && c.abs() <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "torus coupling c = {c} outside [-1, 1]"
                )));
            }
            Ok(build_torus_example(spec.k, c))
        }
        ModelName::CounterexampleA5 => Ok(build_counterexample(spec.k)),
        ModelName::RandomAsymptotic => {
            let seed = spec.param("seed", 1.0) as u64;
            let dim = spec.param("dim", 3.0) as usize;
            let k_plus = spec.param("k_plus", 1.0) as usize;
            let k_minus = spec.param("k_minus", 1.0) as usize;
            let decay = spec.param("decay", 0.5);
            Ok(NonlinearFamily::from_linear(build_random(
                seed, dim, k_plus, k_minus, decay,
            )?))
        }
        ModelName::Tabulated => {
            let tab = tabulated.ok_or_else(|| {
                Error::InvalidInput("tabulated model requires a 'tabulated' section".into())
            })?;
            Ok(NonlinearFamily::from_linear(build_tabulated(tab)?))
        }
    }
}

pub mod corpus {
    //! Seeded random matrices and frames used by the verification suites.

    use nalgebra::DMatrix;
    use rand::Rng;

    /// Random hyperbolic matrix with a prescribed margin, together with its
    /// stable dimension. The spectrum mixes real eigenvalues and complex
    /// pairs, and the similarity is non-orthogonal (bounded condition number)
    /// so that oblique projectors are exercised.
    pub fn random_hyperbolic_matrix(
        rng: &mut impl Rng,
        n: usize,
        min_margin: f64,
    ) -> (DMatrix<f64>, usize) {
        let k_s = rng.random_range(0..=n);
        random_hyperbolic_with_ranks(rng, n, k_s, min_margin)
    }

    /// Same as [`random_hyperbolic_matrix`] with the stable dimension fixed.
    pub fn random_hyperbolic_with_ranks(
        rng: &mut impl Rng,
        n: usize,
        k_s: usize,
        min_margin: f64,
    ) -> (DMatrix<f64>, usize) {
        assert!(k_s <= n);
        let stable_max = 1.0 - min_margin - 0.02;
        let unstable_min = 1.0 + min_margin + 0.02;
        let mut d = DMatrix::<f64>::zeros(n, n);
        let mut filled = 0;
        let mut stable_left = k_s;
        while filled < n {
            let remaining_here = if stable_left > 0 { stable_left } else { n - filled };
            let radius = if stable_left > 0 {
                rng.random_range(0.2..stable_max)
            } else {
                rng.random_range(unstable_min..5.0)
            };
            let pair = remaining_here >= 2 && rng.random_bool(0.5);
            if pair {
                let phi = rng.random_range(0.1..std::f64::consts::PI - 0.1);
                let (c, s) = (phi.cos(), phi.sin());
                d[(filled, filled)] = radius * c;
                d[(filled, filled + 1)] = -radius * s;
                d[(filled + 1, filled)] = radius * s;
                d[(filled + 1, filled + 1)] = radius * c;
                filled += 2;
                stable_left = stable_left.saturating_sub(2);
            } else {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                d[(filled, filled)] = sign * radius;
                filled += 1;
                stable_left = stable_left.saturating_sub(1);
            }
        }
        // Well-conditioned non-orthogonal similarity.
        let v = loop {
            let mut v = DMatrix::<f64>::identity(n, n);
            for i in 0..n {
                for j in 0..n {
                    v[(i, j)] += 0.3 * rng.random_range(-1.0..1.0);
                }
            }
            let sigma_min = v
                .clone()
                .svd(false, false)
                .singular_values
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if sigma_min > 0.3 {
                break v;
            }
        };
        let v_inv = v.clone().lu().try_inverse().expect("conditioned similarity");
        (&v * d * v_inv, k_s)
    }

    /// Random orthogonal matrix (QR of a uniform random matrix).
    pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
        loop {
            let mut g = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] = rng.random_range(-1.0..1.0);
                }
            }
            let q = g.qr().q();
            if q.ncols() == n {
                return q;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::fredholm_index;
    use std::f64::consts::PI;

    fn circle_point(theta: f64) -> ParameterPoint {
        ParameterPoint::circle(theta).unwrap()
    }

    #[test]
    fn torus_matrix_worked_values() {
        let at_zero = torus_matrix(0.0);
        assert_eq!(at_zero[(0, 0)], 0.5);
        assert_eq!(at_zero[(1, 1)], 2.0);
        assert_eq!(at_zero[(0, 1)], 0.0);

        let at_pi = torus_matrix(PI);
        assert!((at_pi[(0, 0)] - 2.0).abs() <= 1e-15);
        assert!((at_pi[(1, 1)] - 0.5).abs() <= 1e-15);
        assert!(at_pi[(0, 1)].abs() <= 1e-15);

        let quarter = torus_matrix(PI / 2.0);
        let expected = DMatrix::from_row_slice(2, 2, &[1.25, -0.75, -0.75, 1.25]);
        assert!((&quarter - &expected).amax() <= 1e-15);
    }

    #[test]
    fn torus_family_coefficients() {
        let fam = build_torus_example(1, 0.0);
        let lin = fam.linearization();
        let lambda = circle_point(PI);
        let a0 = lin.coefficient(0, &lambda);
        assert!((a0[(0, 0)] - 2.0).abs() <= 1e-15);
        assert!((a0[(1, 1)] - 0.5).abs() <= 1e-15);
        // Negative positions use the base-point matrix regardless of lambda.
        let back = lin.coefficient(-5, &circle_point(2.3));
        assert_eq!(back[(0, 0)], 0.5);
        assert_eq!(back[(1, 1)], 2.0);
    }

    #[test]
    fn torus_trivial_branch_and_quadratic_coupling() {
        let fam = build_torus_example(1, 0.3);
        let zero = DVector::zeros(2);
        for n in [-9i64, -1, 0, 1, 9] {
            for theta in [-2.0, 0.0, 1.5] {
                assert_eq!(fam.f(n, &circle_point(theta), &zero).amax(), 0.0);
            }
        }
        let x = DVector::from_vec(vec![2.0, 3.0]);
        let fx = fam.f(0, &circle_point(0.0), &x);
        let linear = torus_matrix(0.0) * &x;
        assert!((fx[0] - linear[0] - 0.3 * 9.0).abs() <= 1e-12);
        assert!((fx[1] - linear[1] - 0.3 * 4.0).abs() <= 1e-12);
    }

    #[test]
    fn counterexample_structure() {
        let fam = build_counterexample(1);
        let lin = fam.linearization();
        let minus = lin.limit_minus(&circle_point(0.0));
        assert_eq!(minus, counterexample_matrix_minus());
        let ones = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let fx = fam.f(0, &circle_point(0.4), &ones);
        let linear = counterexample_matrix(0.4) * &ones;
        assert_eq!(fx[3] - linear[3], 4.0);
        for coord in 0..3 {
            assert_eq!(fx[coord], linear[coord]);
        }
    }

    #[test]
    fn random_family_index_formula() {
        let fam = build_random(17, 3, 1, 2, 0.5).unwrap();
        assert_eq!(fredholm_index(&fam, &circle_point(0.0)).unwrap(), -1);
    }

    #[test]
    fn random_family_is_deterministic() {
        let a = build_random(99, 4, 2, 1, 0.4).unwrap();
        let b = build_random(99, 4, 2, 1, 0.4).unwrap();
        let lambda = circle_point(0.3);
        for n in [-17i64, -3, 0, 5, 23] {
            assert_eq!(a.coefficient(n, &lambda), b.coefficient(n, &lambda), "n = {n}");
        }
        assert_eq!(a.limit_plus(&lambda), b.limit_plus(&lambda));
        assert_eq!(a.decay_probe(), b.decay_probe());
    }

    #[test]
    fn random_family_rejects_bad_ranks() {
        assert!(matches!(
            build_random(1, 2, 3, 0, 0.5),
            Err(Error::BadRanks { .. })
        ));
        assert!(matches!(
            build_random(1, 2, 1, 1, 1.5),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn random_family_generic_seed_has_trivial_kernel_vertex() {
        use crate::linear::check_a5;
        use crate::mesh::ParameterMesh;
        let fam = build_random(7, 3, 1, 1, 0.5).unwrap();
        let mesh = ParameterMesh::circle(8).unwrap();
        let m = fam.decay_probe().max(40);
        assert!(check_a5(&fam, &mesh, m, 1e-8).unwrap().is_some());
    }

    #[test]
    fn tabulated_family_round_trip() {
        let tab = TabulatedFamily {
            n_dim: 2,
            a_plus: vec![vec![0.5, 0.0], vec![0.0, 2.0]],
            a_minus: vec![vec![2.0, 0.0], vec![0.0, 0.5]],
            coefficients: vec![TabulatedCoefficient {
                n: 0,
                matrix: vec![vec![0.4, 0.1], vec![0.0, 2.1]],
            }],
            decay_probe: None,
        };
        let fam = build_tabulated(&tab).unwrap();
        let lambda = circle_point(0.0);
        assert_eq!(fam.coefficient(0, &lambda)[(0, 0)], 0.4);
        assert_eq!(fam.coefficient(3, &lambda)[(1, 1)], 2.0);
        assert_eq!(fam.coefficient(-2, &lambda)[(0, 0)], 2.0);
        assert_eq!(fam.decay_probe(), 1);
        assert_eq!(fredholm_index(&fam, &lambda).unwrap(), 0);
    }

    #[test]
    fn model_spec_instantiation() {
        let mut spec = ModelSpec::named(ModelName::TorusExample);
        spec.params.insert("c".into(), 0.05);
        let fam = instantiate(&spec, None).unwrap();
        assert_eq!(fam.n_dim(), 2);

        let spec = ModelSpec::named(ModelName::CounterexampleA5);
        assert_eq!(instantiate(&spec, None).unwrap().n_dim(), 4);

        let spec = ModelSpec::named(ModelName::Tabulated);
        assert!(matches!(
            instantiate(&spec, None),
            Err(Error::InvalidInput(_))
        ));

        assert_eq!("torus_example".parse::<ModelName>().unwrap(), ModelName::TorusExample);
        assert!("nope".parse::<ModelName>().is_err());
    }
}
