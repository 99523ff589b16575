//! Finite-difference solver for the isotropic bending energy
//! `W(v) = int |D2 v|^2` under the pointwise Monge-Ampere constraint
//! `det D2 v = k`, with multiplier recovery and a verification harness.
//!
//! Modules, bottom up:
//!
//! * [`grid`]: grids, nodal fields and the discrete Hessian family;
//! * [`functional`]: energy, constraint map, closed forms, normalization;
//! * [`linsolve`]: strictly elliptic Dirichlet solves;
//! * [`solver`]: feasibility restoration, multiplier recovery, minimization;
//! * [`verify`]: residuals, analytic comparison, refinement studies;
//! * [`cli`] and [`io`]: the batch front-end and CSV fields.

pub mod cli;
pub mod error;
pub mod functional;
pub mod grid;
pub mod io;
pub mod linsolve;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use functional::{Branch, ConstraintData, KSpec};
pub use grid::{GridDomain, ScalarField, Sym2, SymMatrixField};
pub use solver::{minimize, SolveReport, SolverConfig};
