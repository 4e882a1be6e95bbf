//! Finite element solvers for the time-dependent Poisson–Nernst–Planck
//! system on the unit square.
//!
//! The coupled backward-Euler scheme is solved with a Gummel iteration at
//! every time level. Two two-grid variants run that iteration only on a
//! coarse mesh and finish each step with a fixed number of linear solves on a
//! nested fine mesh.

// NaN must fail the range checks, so they are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fem;
pub mod mesh;
pub mod norms;
pub mod problem;
pub mod solvers;
pub mod sparse;
pub mod study;

pub use error::{PnpError, Result};
pub use fem::{FeFunction, QuadratureRule};
pub use mesh::{Diagonal, Mesh};
pub use norms::{convergence_order, h1_error, l2_error, ErrorRecord, FieldErrors};
pub use problem::{
    manufactured_benchmark, manufactured_benchmark_with_rate, ExactField, ProblemSpec, Species,
};
pub use solvers::{
    gummel_solve, gummel_step, march, march_on, Discretization, GummelNorm, MarchResult, Method,
    PnpState, StepStats, TimeGrid, Tolerances, TwoGrid,
};
pub use sparse::{SolveReport, SparseMatrix};
pub use study::{run_study, write_csv, Pairing, RunConfig, StudyReport, StudyRow, TauRule};
