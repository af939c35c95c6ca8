//! Discretizations of the parameter spaces S^1 and T^k.
//!
//! A mesh stores vertices in angle coordinates together with one generator
//! loop per torus factor. First Stiefel-Whitney classes are determined by
//! restriction to generator circles, so the torus is represented by its
//! 1-skeleton only.

use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Minimum number of vertices per generator loop.
pub const MIN_RESOLUTION: usize = 8;

const TWO_PI: f64 = 2.0 * PI;

/// A point on T^k in angle coordinates, each component in (-pi, pi].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParameterPoint {
    theta: Vec<f64>,
}

impl ParameterPoint {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidInput(
                "parameter point needs at least one angle".into(),
            ));
        }
        for (i, &t) in theta.iter().enumerate() {
            if !t.is_finite() || t <= -PI || t > PI {
                return Err(Error::InvalidInput(format!(
                    "angle component {i} = {t} outside (-pi, pi]"
                )));
            }
        }
        Ok(Self { theta })
    }

    /// Point on the circle (k = 1).
    pub fn circle(theta: f64) -> Result<Self> {
        Self::new(vec![theta])
    }

    /// The base point (0, ..., 0) of T^k.
    pub fn base(k: usize) -> Self {
        Self { theta: vec![0.0; k] }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    /// Sum of the angle coordinates; the worked examples depend on the
    /// parameter only through this combination.
    pub fn angle_sum(&self) -> f64 {
        self.theta.iter().sum()
    }

    fn bit_key(&self) -> Vec<u64> {
        self.theta.iter().map(|t| t.to_bits()).collect()
    }
}

/// Angle of vertex `i` on an `m`-point circle, bit-deterministic across
/// refinements: the fraction i/m is reduced before evaluation so that shared
/// points of nested grids compare exactly equal.
fn circle_angle(i: usize, m: usize) -> f64 {
    let g = gcd(i, m);
    let (p, q) = (i / g, m / g);
    let angle = -PI + TWO_PI * (p as f64) / (q as f64);
    if angle == -PI {
        PI
    } else {
        angle
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a.max(1)
}

/// 1-skeleton mesh of S^1 or T^k with explicit generator loops.
///
/// Loops are stored as cyclic vertex-index sequences; the edge closing the
/// loop (last index back to first) is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterMesh {
    k: usize,
    vertices: Vec<ParameterPoint>,
    loops: Vec<Vec<usize>>,
    resolution: Vec<usize>,
}

impl ParameterMesh {
    /// Uniform mesh of the circle with `m` vertices at angles -pi + 2 pi i / m.
    pub fn circle(m: usize) -> Result<Self> {
        Self::torus(1, m)
    }

    /// Union of the k generator circles of T^k through the base point, each
    /// discretized with `m` vertices.
    pub fn torus(k: usize, m: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("torus dimension must be >= 1".into()));
        }
        if m < MIN_RESOLUTION {
            return Err(Error::MeshTooCoarse {
                m,
                min: MIN_RESOLUTION,
            });
        }
        let mut mesh = Self {
            k,
            vertices: Vec::new(),
            loops: Vec::new(),
            resolution: Vec::new(),
        };
        let mut index: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        for coord in 0..k {
            let mut cycle = Vec::with_capacity(m);
            for i in 0..m {
                let mut theta = vec![0.0; k];
                theta[coord] = circle_angle(i, m);
                let point = ParameterPoint::new(theta)?;
                let idx = *index.entry(point.bit_key()).or_insert_with(|| {
                    mesh.vertices.push(point);
                    mesh.vertices.len() - 1
                });
                cycle.push(idx);
            }
            mesh.loops.push(cycle);
            mesh.resolution.push(m);
        }
        Ok(mesh)
    }

    /// Returns a copy with generator loop `loop_index` subdivided uniformly by
    /// `factor` (one of 2, 4, 8, 16). Existing vertices are preserved with
    /// their indices, so frames sampled on the original mesh remain valid.
    pub fn refine_loop(&self, loop_index: usize, factor: usize) -> Result<Self> {
        if !matches!(factor, 2 | 4 | 8 | 16) {
            return Err(Error::BadRefineFactor(factor));
        }
        if loop_index >= self.loops.len() {
            return Err(Error::BadLoopIndex {
                index: loop_index,
                count: self.loops.len(),
            });
        }
        let mut mesh = self.clone();
        let m_new = self.resolution[loop_index] * factor;
        let mut index: BTreeMap<Vec<u64>, usize> = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, p)| (p.bit_key(), i))
            .collect();
        let mut cycle = Vec::with_capacity(m_new);
        for i in 0..m_new {
            let mut theta = vec![0.0; self.k];
            theta[loop_index] = circle_angle(i, m_new);
            let point = ParameterPoint::new(theta)?;
            let idx = *index.entry(point.bit_key()).or_insert_with(|| {
                mesh.vertices.push(point);
                mesh.vertices.len() - 1
            });
            cycle.push(idx);
        }
        mesh.loops[loop_index] = cycle;
        mesh.resolution[loop_index] = m_new;
        Ok(mesh)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vertices(&self) -> &[ParameterPoint] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> &ParameterPoint {
        &self.vertices[i]
    }

    pub fn loop_count(&self) -> usize {
        self.loops.len()
    }

    pub fn loop_indices(&self, loop_index: usize) -> &[usize] {
        &self.loops[loop_index]
    }

    pub fn resolution(&self, loop_index: usize) -> usize {
        self.resolution[loop_index]
    }

    /// Index of the vertex closest to `target` in the max-norm on angles
    /// (wrap-aware).
    pub fn nearest_vertex(&self, target: &ParameterPoint) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, v) in self.vertices.iter().enumerate() {
            let dist = v
                .theta()
                .iter()
                .zip(target.theta())
                .map(|(a, b)| wrap_angle(a - b).abs())
                .fold(0.0_f64, f64::max);
            if dist < best_dist {
                best_dist = dist;
                best = i;
            }
        }
        best
    }
}

/// Maps an angle difference into (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x % TWO_PI;
    if y <= -PI {
        y += TWO_PI;
    } else if y > PI {
        y -= TWO_PI;
    }
    y
}
