//! Graded parametric cut finite elements for the Poisson problem on polygonal
//! domains with nonconvex corners.
//!
//! The solver works entirely in a reference domain inside `[-1,1]^2`. A radial
//! grading map `r = r̂^γ` pushes the uniform reference mesh forward onto a mesh
//! that is graded toward the singular corner; all forms are evaluated in the
//! reference coordinates where the pulled-back diffusion tensor stays bounded.
//!
//! Module map:
//!
//! * [`geometry`]: background grid, polygon domains, cut-cell decomposition and quadrature
//! * [`mapping`]: the grading map, its Jacobians and the reference diffusion matrix
//! * [`spaces`]: tensor-product B-spline spaces and the disjoint-support DOF split
//! * [`assembly`]: Nitsche, ghost-penalty, load and interface forms
//! * [`solver`]: sparse Cholesky and Jacobi-preconditioned CG
//! * [`problems`]: the manufactured corner-singularity problems and weighted norms
//! * [`analysis`]: error norms, rate fitting and mesh-position studies
//! * [`multipatch`]: several graded patches coupled weakly across straight interfaces
//! * [`cli`]: configuration and the `gradedfem` command-line driver

pub mod analysis;
pub mod assembly;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod mapping;
pub mod multipatch;
pub mod par;
pub mod problems;
pub mod solver;
pub mod sparse;
pub mod spaces;

pub use error::{Error, Result};

/// 2D point or vector.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 2×2 matrix.
pub type Mat2 = nalgebra::Matrix2<f64>;
