//! Finite-difference solvers for quasilinear elliptic boundary value
//! problems `-div[a(x,u) grad u] = f(x,u,grad u)` with gradient-dependent
//! right-hand sides, on intervals and axis-aligned rectangles.
//!
//! Two boundary conditions are supported: constant Dirichlet data, solved
//! by a damped frozen-coefficient iteration that truncates the iterate
//! into a user-declared bracket and radially cuts off the gradient fed to
//! the right-hand side; and the no-flux condition (unspecified constant
//! trace with vanishing weighted outward flux), solved by bisection over
//! the homotopy of boundary constants between the bracket traces. The
//! boundary functional is pluggable; the built-in choices are the
//! conservative outward flux and a mean-value target. A shooting-method
//! solver for the 1D periodic problem serves as an independent oracle.

pub mod dirichlet;
pub mod discretize;
pub mod expr;
pub mod model;
pub mod noflux;
pub mod oracle1d;

pub use dirichlet::{
    energy_certificate, gradient_cutoff, pick_cutoff_level, solve_dirichlet, truncate,
    verify_sub_super, EnergyCertificate, Side, SolveError, SolveReport, VerificationReport,
    VerifyFlavor,
};
pub use discretize::{
    assemble_frozen, boundary_flux_conservative, flux_interior, gradient, h1_seminorm,
    interior_integral, solve_linear, DiscretizeError, FrozenOperator, VectorField,
};
pub use expr::{parse, Bindings, ExprError, Expression, Var};
pub use model::{
    bracket_ordered, build_grid, estimate_bn, validate_weight, Bracket, Domain, FieldSpec, Grid,
    ModelError, ProblemSpec, ScalarField, SolverOptions, StartMode, WeightReport,
};
pub use noflux::{
    default_phi_tol, evaluate_phi, homotopy_value, solve_generalized, solve_noflux, sweep_flux,
    CustomFunctional, FluxProfile, MonotoneFunctional, NoFluxError, NoFluxResult, PhiSample,
};
pub use oracle1d::{
    integrate_ivp, periodic_shoot, verify_1d_subsuper, IvpResult, OracleError, PeriodicSolution,
};

use thiserror::Error;

/// Umbrella error for callers that drive several layers at once.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    NoFlux(#[from] NoFluxError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}
