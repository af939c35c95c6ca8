//! Asymptotic stable/unstable subbundles over a parameter mesh and their
//! first Stiefel-Whitney classes.
//!
//! `w1` is computed as orientation holonomy: the product over a generator
//! loop of the signs of the frame-overlap determinants. The product is
//! invariant under per-vertex gauge changes (each vertex's sign enters twice)
//! and equals 1 exactly when the bundle restricted to the loop is
//! non-orientable, i.e. has nontrivial `w1`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{ParameterMesh, ParameterPoint};
use crate::spectral::hyperbolic_splitting;

/// Which asymptotic limit the bundle belongs to.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum End {
    PlusInfinity,
    MinusInfinity,
}

/// Stable or unstable subspaces.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    Stable,
    Unstable,
}

/// Evaluator of the limit family `lambda -> a(lambda, +/-inf)`.
pub type LimitFamilyFn = Arc<dyn Fn(&ParameterPoint) -> DMatrix<f64> + Send + Sync>;

/// Per-vertex orthonormal frames of one asymptotic subbundle.
///
/// The sampling closure is retained so holonomy computations can resample the
/// family on refined loops when the mesh turns out to be too coarse.
#[derive(Clone)]
pub struct SubbundleFrames {
    mesh: ParameterMesh,
    rank: usize,
    frames: Vec<DMatrix<f64>>,
    end: End,
    kind: BundleKind,
    family: LimitFamilyFn,
    tol: f64,
}

/// Samples the stable or unstable subbundle of a limit family over all mesh
/// vertices. Fails with [`Error::HyperbolicityViolation`] when some vertex
/// matrix has an eigenvalue too close to the unit circle and with
/// [`Error::RankDiscontinuity`] when the stable dimension varies across
/// vertices (the mesh then crosses a non-hyperbolic region).
pub fn sample_subbundle(
    family: LimitFamilyFn,
    mesh: &ParameterMesh,
    kind: BundleKind,
    end: End,
    tol: f64,
) -> Result<SubbundleFrames> {
    let frames: Vec<DMatrix<f64>> = mesh
        .vertices()
        .par_iter()
        .map(|lambda| {
            let split = hyperbolic_splitting(&family(lambda), tol)?;
            Ok(match kind {
                BundleKind::Stable => split.vs,
                BundleKind::Unstable => split.vu,
            })
        })
        .collect::<Result<_>>()?;
    let rank = frames[0].ncols();
    for (vertex, frame) in frames.iter().enumerate() {
        if frame.ncols() != rank {
            return Err(Error::RankDiscontinuity {
                expected: rank,
                found: frame.ncols(),
                vertex,
            });
        }
    }
    Ok(SubbundleFrames {
        mesh: mesh.clone(),
        rank,
        frames,
        end,
        kind,
        family,
        tol,
    })
}

/// Overlap sign of two orthonormal frames of equal rank, together with the
/// overlap quality `q = |det(F_i^T F_j)|`. A quality below 0.5 means the two
/// subspaces sit at a principal angle beyond 60 degrees, where the sign is no
/// longer trustworthy; callers must refine the mesh.
pub fn transition_sign(f_i: &DMatrix<f64>, f_j: &DMatrix<f64>) -> Result<(i8, f64)> {
    debug_assert_eq!(f_i.shape(), f_j.shape());
    if f_i.ncols() == 0 {
        return Ok((1, 1.0));
    }
    let det = (f_i.transpose() * f_j).determinant();
    let quality = det.abs();
    if quality < 0.5 {
        return Err(Error::FramesNotAdjacent { quality });
    }
    Ok((if det < 0.0 { -1 } else { 1 }, quality))
}

/// First Stiefel-Whitney class as one bit per generator loop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct W1Vector {
    pub bits: Vec<u8>,
}

/// Outcome of comparing the two asymptotic stable bundles.
#[derive(Clone, Debug, Serialize)]
pub struct BifurcationCertificate {
    pub w1_plus: W1Vector,
    pub w1_minus: W1Vector,
    pub mismatch: Vec<bool>,
    pub any_mismatch: bool,
    /// Lower bound `k - 1` for the covering dimension of the bifurcation set,
    /// available when `k >= 2` and the classes differ.
    pub dimension_bound: Option<usize>,
}

impl SubbundleFrames {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn mesh(&self) -> &ParameterMesh {
        &self.mesh
    }

    pub fn end(&self) -> End {
        self.end
    }

    pub fn kind(&self) -> BundleKind {
        self.kind
    }

    pub fn frame(&self, vertex: usize) -> &DMatrix<f64> {
        &self.frames[vertex]
    }

    /// Holonomy bit of one generator loop: 1 when the bundle restricted to
    /// the loop is nonorientable. On poor frame overlap the loop is refined
    /// dyadically (resampling the family) up to 16x before giving up.
    pub fn w1_along_loop(&self, loop_index: usize) -> Result<u8> {
        if loop_index >= self.mesh.loop_count() {
            return Err(Error::BadLoopIndex {
                index: loop_index,
                count: self.mesh.loop_count(),
            });
        }
        for factor in [1usize, 2, 4, 8, 16] {
            let attempt = if factor == 1 {
                let cycle = self.mesh.loop_indices(loop_index);
                let frames: Vec<&DMatrix<f64>> = cycle.iter().map(|&i| &self.frames[i]).collect();
                loop_holonomy(&frames)
            } else {
                let refined = self.mesh.refine_loop(loop_index, factor)?;
                let cycle = refined.loop_indices(loop_index);
                let sampled: Vec<DMatrix<f64>> = cycle
                    .par_iter()
                    .map(|&i| {
                        let split = hyperbolic_splitting(&(self.family)(refined.vertex(i)), self.tol)?;
                        let frame = match self.kind {
                            BundleKind::Stable => split.vs,
                            BundleKind::Unstable => split.vu,
                        };
                        if frame.ncols() != self.rank {
                            return Err(Error::RankDiscontinuity {
                                expected: self.rank,
                                found: frame.ncols(),
                                vertex: i,
                            });
                        }
                        Ok(frame)
                    })
                    .collect::<Result<_>>()?;
                let frames: Vec<&DMatrix<f64>> = sampled.iter().collect();
                loop_holonomy(&frames)
            };
            match attempt {
                Ok(bit) => return Ok(bit),
                Err(Error::FramesNotAdjacent { .. }) => continue,
                Err(other) => return Err(other),
            }
        }
        Err(Error::MeshUnresolvable {
            loop_index,
            max_factor: 16,
        })
    }

    /// All generator bits of `w1`.
    pub fn w1_vector(&self) -> Result<W1Vector> {
        let bits = (0..self.mesh.loop_count())
            .map(|j| self.w1_along_loop(j))
            .collect::<Result<_>>()?;
        Ok(W1Vector { bits })
    }

    #[cfg(test)]
    fn gauge(&mut self, vertex: usize, g: &DMatrix<f64>) {
        self.frames[vertex] = &self.frames[vertex] * g;
    }
}

fn loop_holonomy(frames: &[&DMatrix<f64>]) -> Result<u8> {
    let mut product: i8 = 1;
    for i in 0..frames.len() {
        let j = (i + 1) % frames.len();
        let (sign, _) = transition_sign(frames[i], frames[j])?;
        product *= sign;
    }
    Ok(if product < 0 { 1 } else { 0 })
}

/// Compares the stable bundles at the two ends and issues the bifurcation
/// certificate: a `w1` mismatch on any generator guarantees a bifurcation
/// point once the family assumptions hold, and for `k >= 2` the bifurcation
/// set has covering dimension at least `k - 1`.
pub fn certify(
    plus: &SubbundleFrames,
    minus: &SubbundleFrames,
) -> Result<BifurcationCertificate> {
    if plus.kind != BundleKind::Stable || minus.kind != BundleKind::Stable {
        return Err(Error::BundleMismatch(
            "certificates compare the stable bundles".into(),
        ));
    }
    if plus.mesh != minus.mesh {
        return Err(Error::BundleMismatch(
            "bundles live on different meshes".into(),
        ));
    }
    if plus.rank != minus.rank {
        return Err(Error::RankMismatch {
            plus: plus.rank,
            minus: minus.rank,
        });
    }
    let w1_plus = plus.w1_vector()?;
    let w1_minus = minus.w1_vector()?;
    let mismatch: Vec<bool> = w1_plus
        .bits
        .iter()
        .zip(&w1_minus.bits)
        .map(|(a, b)| a != b)
        .collect();
    let any_mismatch = mismatch.iter().any(|&m| m);
    let k = plus.mesh.k();
    let dimension_bound = if k >= 2 && any_mismatch { Some(k - 1) } else { None };
    Ok(BifurcationCertificate {
        w1_plus,
        w1_minus,
        mismatch,
        any_mismatch,
        dimension_bound,
    })
}
