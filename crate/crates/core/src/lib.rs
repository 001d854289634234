//! Two-scale homogenization of elliptic systems whose leading coefficient may
//! degenerate on part of the periodicity cell.
//!
//! The fine-scale problem is
//! `-div(a_eps grad u) + lambda rho(x/eps) u = f` on a box with homogeneous
//! Dirichlet data, where `a_eps = a1(x/eps) + eps^2 a0(x/eps)` and `a1` is only
//! nonnegative. The crate computes the cell kernel
//! `V = { v periodic : a1 grad v = 0 }`, solves the degenerate cell problems
//! on its complement, assembles the two-scale limit problem and compares it
//! against direct fine-scale solves.

// NaN-rejecting `!(x > 0.0)` guards are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cell;
pub mod coefficients;
pub mod element;
pub mod error;
pub mod fine;
pub mod harness;
pub mod kernel;
pub mod limit;
pub mod linalg;
pub mod mesh;

pub use cell::{CellSolver, CorrectorBank, CorrectorField, WFlux};
pub use coefficients::{
    geometry_hash, preset_geometry, CoefficientTensor, DensityField, ForcingSpec,
    InnerProductChoice, Preset, ProblemConfig,
};
pub use error::{Error, Result};
pub use fine::{FineSolution, FineSolver};
pub use harness::{ExperimentReport, Harness, Stage, Verdict};
pub use kernel::{
    compute_kernel_basis, estimate_key_constant, Gram, KernelBasis, KeyConstantEstimate,
};
pub use limit::{LimitSystem, MacroMesh, TwoScaleField};
pub use mesh::{build_periodic_mesh, DiscreteGradientMap, PeriodicCellMesh, StiffnessPart};
