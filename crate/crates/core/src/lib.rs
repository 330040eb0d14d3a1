//! Coefficient reconstruction for elliptic and parabolic diffusion
//! problems from noisy interior observations.
//!
//! The forward solver is a P1 Galerkin method; the unknown diffusion
//! coefficient is parametrized either by a tanh network (hybrid scheme)
//! or by a nodal finite element function (baseline). Reconstruction
//! minimizes a regularized output least-squares functional with exact
//! discrete adjoint gradients.

pub mod config;
pub mod error;
pub mod fem;
pub mod forward;
pub mod harness;
pub mod inverse;
pub mod linalg;
pub mod mesh;
pub mod neural;
pub mod quad;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete `f64` aliases for the main types.
pub type Mesh64 = mesh::Mesh<f64>;
pub type Point64 = mesh::Point<f64>;
pub type SparseMatrix64 = linalg::SparseMatrix<f64>;
pub type FeFunction64 = fem::FeFunction<f64>;
pub type Mlp64 = neural::MlpParams<f64>;
pub type BoxBounds64 = neural::BoxBounds<f64>;
pub type QuadratureRule64 = quad::QuadratureRule<f64>;
