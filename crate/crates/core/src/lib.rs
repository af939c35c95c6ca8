//! Analysis of families of discrete non-autonomous dynamical systems
//! `x_{n+1} = f_n(lambda, x_n)` over compact parameter spaces.
//!
//! The library computes stable/unstable splittings of the asymptotic limit
//! matrices, builds the associated subbundles over a parameter mesh, detects
//! their first Stiefel-Whitney classes by frame holonomy, verifies the index
//! structure of the linearized difference operators on finite windows, and
//! searches for homoclinic solutions with a damped Newton iteration. The
//! results are combined into a machine-readable bifurcation certificate.

pub mod bundle;
pub mod driver;
pub mod error;
pub mod linear;
pub mod mesh;
pub mod models;
pub mod nonlinear;
pub mod spectral;

pub use error::{Error, Result};
