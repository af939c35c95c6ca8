//! Property tests for the structural invariants that hold for every input,
//! not just the worked examples.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dichotomy::bundle::transition_sign;
use dichotomy::linear::WindowSeq;
use dichotomy::mesh::{wrap_angle, ParameterMesh};
use dichotomy::models::corpus;
use dichotomy::spectral::hyperbolic_splitting;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Projector identities of the splitting hold over the whole corpus.
    #[test]
    fn splitting_projector_identities(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, k_s) = corpus::random_hyperbolic_matrix(&mut rng, n, 0.05);
        let split = hyperbolic_splitting(&a, 1e-8).unwrap();
        prop_assert_eq!(split.k_s, k_s);
        prop_assert_eq!(split.k_s + split.k_u, n);
        let eye = DMatrix::<f64>::identity(n, n);
        prop_assert!((&split.ps + &split.pu - eye).norm() <= 1e-12);
        prop_assert!((&split.ps * &split.ps - &split.ps).norm() <= 1e-10);
        prop_assert!((&a * &split.ps - &split.ps * &a).norm() <= 1e-10 * a.norm().max(1.0));
    }

    /// A gauge change multiplies the overlap sign by the gauge determinant
    /// and cannot change its magnitude.
    #[test]
    fn transition_sign_gauge_covariance(seed in any::<u64>(), n in 2usize..5, r in 1usize..3) {
        let r = r.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = corpus::random_orthogonal(&mut rng, n).columns(0, r).into_owned();
        let gauge = corpus::random_orthogonal(&mut rng, r);
        let gauged = &frame * &gauge;
        let (sign, quality) = transition_sign(&frame, &gauged).unwrap();
        let det = gauge.determinant();
        prop_assert_eq!(sign as f64, det.signum());
        prop_assert!((quality - 1.0).abs() <= 1e-10);
    }

    /// Every generator loop walks its coordinate around the full circle, and
    /// refinement keeps the original vertices in place.
    #[test]
    fn mesh_loops_close_up(k in 1usize..4, m in 8usize..40, factor_pow in 1u32..3) {
        let mesh = ParameterMesh::torus(k, m).unwrap();
        let factor = 2usize.pow(factor_pow);
        let refined = mesh.refine_loop(0, factor).unwrap();
        for (i, v) in mesh.vertices().iter().enumerate() {
            prop_assert_eq!(refined.vertex(i), v);
        }
        for mesh in [&mesh, &refined] {
            for j in 0..mesh.loop_count() {
                let cycle = mesh.loop_indices(j);
                let mut total = 0.0;
                for e in 0..cycle.len() {
                    let a = mesh.vertex(cycle[e]).theta()[j];
                    let b = mesh.vertex(cycle[(e + 1) % cycle.len()]).theta()[j];
                    total += wrap_angle(b - a);
                }
                prop_assert!((total.abs() - 2.0 * std::f64::consts::PI).abs() <= 1e-12);
            }
        }
    }

    /// Window flattening round-trips.
    #[test]
    fn window_flatten_round_trip(m in 1usize..20, n_dim in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = WindowSeq::symmetric(m, n_dim);
        for n in -(m as i64)..=m as i64 {
            *x.state_mut(n) = nalgebra::DVector::from_fn(n_dim, |_, _| {
                rand::Rng::random_range(&mut rng, -1.0..1.0)
            });
        }
        let back = WindowSeq::from_flat(x.start(), n_dim, &x.flatten());
        prop_assert_eq!(back, x);
    }
}
