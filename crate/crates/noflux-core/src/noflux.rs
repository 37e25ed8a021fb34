//! No-flux and generalized boundary-functional solves by bisection over
//! the homotopy of boundary constants `c_t = t*beta + (1-t)*alpha` between
//! the bracket traces.
//!
//! Sign conventions. Functionals are antitone in the solution at fixed
//! trace (larger solutions give smaller values). Two orientations occur:
//!
//! * flux orientation (the built-in [`MonotoneFunctional::NoFlux`]): a
//!   usable lower member drives the functional nonpositive at `t = 0` and
//!   a usable upper member drives it nonnegative at `t = 1`;
//! * target orientation ([`MonotoneFunctional::MeanTarget`] and custom
//!   functionals flagged as such): the signs at the endpoints are
//!   mirrored.
//!
//! One bisection routine serves both: target-oriented values are negated
//! internally, user-facing values are never negated. Determinism collapses
//! possible multi-valuedness of the solution family into a function of
//! `t`; when the sampled functional jumps across zero without attaining
//! it, the failure report carries the sampled profile together with
//! extremal-start re-solves on both sides of the jump.

use crate::dirichlet::{solve_dirichlet, SolveError, SolveReport, SolverOptions, StartMode};
use crate::discretize::{boundary_flux_conservative, flux_interior, interior_integral};
use crate::model::{ProblemSpec, ScalarField};
use rayon::prelude::*;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Default tolerance on the interval of homotopy parameters.
pub const DEFAULT_T_TOL: f64 = 1e-12;

/// Default tolerance on the boundary functional, scaled with the load
/// integral: `1e-8 * (1 + |domain| * a2_const)`.
pub fn default_phi_tol(problem: &ProblemSpec) -> f64 {
    1e-8 * (1.0 + problem.grid().measure() * problem.a2_const())
}

/// A boundary-data functional, antitone in the solution at fixed trace.
#[derive(Clone)]
pub enum MonotoneFunctional {
    /// The conservative outward flux, evaluated through the interior load
    /// and cross-checked against the face-flux sum.
    NoFlux,
    /// `gamma - integral(u)`: drives the solution mean to `gamma`.
    MeanTarget { gamma: f64 },
    Custom(CustomFunctional),
}

/// User-supplied functional of the converged solution.
#[derive(Clone)]
pub struct CustomFunctional {
    pub label: String,
    /// Target orientation: the functional follows the convention in which
    /// a usable lower bracket member yields a nonnegative value; its
    /// output is negated internally so one bisection serves both
    /// orientations.
    pub target_oriented: bool,
    pub eval: Arc<dyn Fn(&ProblemSpec, &SolveReport) -> f64 + Send + Sync>,
}

impl MonotoneFunctional {
    fn target_oriented(&self) -> bool {
        match self {
            MonotoneFunctional::NoFlux => false,
            MonotoneFunctional::MeanTarget { .. } => true,
            MonotoneFunctional::Custom(c) => c.target_oriented,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            MonotoneFunctional::NoFlux => "noflux",
            MonotoneFunctional::MeanTarget { .. } => "mean_target",
            MonotoneFunctional::Custom(c) => &c.label,
        }
    }
}

impl fmt::Debug for MonotoneFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonotoneFunctional::NoFlux => write!(f, "NoFlux"),
            MonotoneFunctional::MeanTarget { gamma } => {
                write!(f, "MeanTarget {{ gamma: {gamma} }}")
            }
            MonotoneFunctional::Custom(c) => write!(f, "Custom({})", c.label),
        }
    }
}

/// One evaluation of the functional along the homotopy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiSample {
    pub t: f64,
    pub c: f64,
    pub phi: f64,
    pub converged: bool,
}

/// Samples of the functional along the homotopy, strictly increasing in
/// `t`.
#[derive(Debug, Clone, Default)]
pub struct FluxProfile {
    samples: Vec<PhiSample>,
}

impl FluxProfile {
    fn push(&mut self, sample: PhiSample) {
        self.samples.push(sample);
    }

    fn finalize(mut self) -> Self {
        self.samples.sort_by(|a, b| a.t.total_cmp(&b.t));
        self.samples.dedup_by(|a, b| a.t == b.t);
        self
    }

    pub fn samples(&self) -> &[PhiSample] {
        &self.samples
    }
}

/// Result of a successful no-flux (or generalized) solve.
#[derive(Debug, Clone)]
pub struct NoFluxResult {
    pub solution: ScalarField,
    pub c_star: f64,
    pub t_star: f64,
    /// Functional value at the returned solution (user-facing sign).
    pub phi_residual: f64,
    pub bisection_steps: usize,
    pub dirichlet_report: SolveReport,
    /// For the flux functional: difference between the interior-load and
    /// face-sum flux evaluations at the returned solution.
    pub flux_discrepancy: Option<f64>,
    /// Every functional evaluation performed, endpoints included.
    pub profile: FluxProfile,
}

#[derive(Debug, Error)]
pub enum NoFluxError {
    #[error("homotopy parameter {0} outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("bracket {which} trace is not constant (spread {spread:e})")]
    TraceNotConstant { which: &'static str, spread: f64 },
    #[error(
        "endpoint sign condition violated: phi = {phi_at_t0} at t=0, {phi_at_t1} at t=1 \
         (expected the lower endpoint on or below zero and the upper on or above, \
         up to phi_tol, in the functional's orientation)"
    )]
    EndpointSignViolation { phi_at_t0: f64, phi_at_t1: f64 },
    #[error(
        "bisection interval shrank below {t_tol:e} at t = {t} with |phi| = {phi:e} > tolerance; \
         the functional jumps across zero"
    )]
    BisectionExhausted {
        t: f64,
        phi: f64,
        t_tol: f64,
        profile: FluxProfile,
        /// Extremal-start re-solve just below the jump.
        lower_solution: Box<SolveReport>,
        /// Extremal-start re-solve just above the jump.
        upper_solution: Box<SolveReport>,
    },
    #[error("Dirichlet solve did not converge at t = {t} (c = {c}), final step {final_step:e}")]
    NonConvergedSolve { t: f64, c: f64, final_step: f64 },
    #[error("sweep needs at least 2 points, got {0}")]
    TooFewSweepPoints(usize),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// The boundary constant at homotopy parameter `t`.
pub fn homotopy_value(t: f64, alpha: f64, beta: f64) -> Result<f64, NoFluxError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(NoFluxError::ParameterOutOfRange(t));
    }
    Ok(t * beta + (1.0 - t) * alpha)
}

/// One functional evaluation: a Dirichlet solve at `c` plus the functional
/// of the solution.
#[derive(Debug, Clone)]
pub struct PhiEvaluation {
    pub phi: f64,
    pub report: SolveReport,
    /// Face-sum flux (flux functional only).
    pub flux_conservative: Option<f64>,
    /// |interior-load flux - face-sum flux| (flux functional only).
    pub discrepancy: Option<f64>,
}

/// Solves the Dirichlet problem at boundary constant `c` and evaluates the
/// functional on the solution. A non-converged solve yields `phi = NaN`
/// with the report attached; callers decide whether that is fatal.
pub fn evaluate_phi(
    problem: &ProblemSpec,
    functional: &MonotoneFunctional,
    c: f64,
    options: &SolverOptions,
) -> Result<PhiEvaluation, SolveError> {
    let report = solve_dirichlet(problem, c, options)?;
    if !report.converged {
        return Ok(PhiEvaluation {
            phi: f64::NAN,
            report,
            flux_conservative: None,
            discrepancy: None,
        });
    }
    let (phi, flux_conservative, discrepancy) = match functional {
        MonotoneFunctional::NoFlux => {
            let phi = flux_interior(problem, &report.solution)?;
            let a_vals = weight_at(problem, &report.solution)?;
            let cons = boundary_flux_conservative(&report.solution, &a_vals)?;
            (phi, Some(cons), Some((phi - cons).abs()))
        }
        MonotoneFunctional::MeanTarget { gamma } => {
            (gamma - interior_integral(&report.solution), None, None)
        }
        MonotoneFunctional::Custom(custom) => ((custom.eval)(problem, &report), None, None),
    };
    Ok(PhiEvaluation {
        phi,
        report,
        flux_conservative,
        discrepancy,
    })
}

fn weight_at(problem: &ProblemSpec, u: &ScalarField) -> Result<ScalarField, SolveError> {
    use crate::expr::Var;
    let grid = problem.grid();
    let mut values = Vec::with_capacity(grid.node_count());
    for idx in 0..grid.node_count() {
        let mut b = grid.point_bindings(idx);
        b.set(Var::S, u.get(idx));
        values.push(problem.weight().eval(&b)?);
    }
    Ok(ScalarField::new(Arc::clone(grid), values))
}

fn constant_trace(field: &ScalarField, which: &'static str) -> Result<f64, NoFluxError> {
    let grid = field.grid();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for idx in grid.boundary_indices() {
        lo = lo.min(field.get(idx));
        hi = hi.max(field.get(idx));
    }
    let spread = hi - lo;
    if spread > 1e-10 * (1.0 + lo.abs().max(hi.abs())) {
        return Err(NoFluxError::TraceNotConstant { which, spread });
    }
    Ok(0.5 * (lo + hi))
}

/// Solves the no-flux problem: locates a boundary constant in
/// `[alpha, beta]` at which the weighted outward flux vanishes to
/// `phi_tol`.
pub fn solve_noflux(
    problem: &ProblemSpec,
    options: &SolverOptions,
    phi_tol: f64,
    t_tol: f64,
) -> Result<NoFluxResult, NoFluxError> {
    solve_generalized(problem, &MonotoneFunctional::NoFlux, options, phi_tol, t_tol)
}

fn eval_along_homotopy(
    problem: &ProblemSpec,
    functional: &MonotoneFunctional,
    options: &SolverOptions,
    alpha: f64,
    beta: f64,
    t: f64,
    profile: &mut FluxProfile,
) -> Result<PhiEvaluation, NoFluxError> {
    let c = homotopy_value(t, alpha, beta)?;
    let evaluation = evaluate_phi(problem, functional, c, options)?;
    profile.push(PhiSample {
        t,
        c,
        phi: evaluation.phi,
        converged: evaluation.report.converged,
    });
    if !evaluation.report.converged {
        return Err(NoFluxError::NonConvergedSolve {
            t,
            c,
            final_step: evaluation.report.final_step,
        });
    }
    Ok(evaluation)
}

/// Solves the generalized problem `Phi(u) = 0` over the same homotopy; the
/// no-flux solve is the flux-functional instance of this routine.
pub fn solve_generalized(
    problem: &ProblemSpec,
    functional: &MonotoneFunctional,
    options: &SolverOptions,
    phi_tol: f64,
    t_tol: f64,
) -> Result<NoFluxResult, NoFluxError> {
    let alpha = constant_trace(problem.lower(), "lower")?;
    let beta = constant_trace(problem.upper(), "upper")?;
    let sign = if functional.target_oriented() { -1.0 } else { 1.0 };
    let mut profile = FluxProfile::default();

    let finish = |t: f64, steps: usize, e: PhiEvaluation, profile: FluxProfile| NoFluxResult {
        c_star: e.report.boundary_value,
        t_star: t,
        phi_residual: e.phi,
        bisection_steps: steps,
        flux_discrepancy: e.discrepancy,
        solution: e.report.solution.clone(),
        dirichlet_report: e.report,
        profile: profile.finalize(),
    };

    let e0 = eval_along_homotopy(problem, functional, options, alpha, beta, 0.0, &mut profile)?;
    let e1 = if alpha == beta {
        e0.clone()
    } else {
        eval_along_homotopy(problem, functional, options, alpha, beta, 1.0, &mut profile)?
    };
    let oriented0 = sign * e0.phi;
    let oriented1 = sign * e1.phi;

    if oriented0 > phi_tol || oriented1 < -phi_tol {
        return Err(NoFluxError::EndpointSignViolation {
            phi_at_t0: e0.phi,
            phi_at_t1: e1.phi,
        });
    }
    if oriented0.abs() <= phi_tol {
        return Ok(finish(0.0, 0, e0, profile));
    }
    if oriented1.abs() <= phi_tol {
        return Ok(finish(1.0, 0, e1, profile));
    }

    let mut t_lo = 0.0f64;
    let mut t_hi = 1.0f64;
    let mut steps = 0;
    loop {
        if t_hi - t_lo < t_tol {
            let phi_mid = sign * profile.samples.last().map_or(f64::NAN, |s| s.phi);
            let lower_solution = solve_dirichlet(
                problem,
                homotopy_value(t_lo, alpha, beta)?,
                &SolverOptions {
                    start: StartMode::Lower,
                    ..*options
                },
            )?;
            let upper_solution = solve_dirichlet(
                problem,
                homotopy_value(t_hi, alpha, beta)?,
                &SolverOptions {
                    start: StartMode::Upper,
                    ..*options
                },
            )?;
            return Err(NoFluxError::BisectionExhausted {
                t: 0.5 * (t_lo + t_hi),
                phi: phi_mid,
                t_tol,
                profile: profile.finalize(),
                lower_solution: Box::new(lower_solution),
                upper_solution: Box::new(upper_solution),
            });
        }
        let t_mid = 0.5 * (t_lo + t_hi);
        let e_mid =
            eval_along_homotopy(problem, functional, options, alpha, beta, t_mid, &mut profile)?;
        steps += 1;
        let oriented = sign * e_mid.phi;
        if oriented.abs() <= phi_tol {
            return Ok(finish(t_mid, steps, e_mid, profile));
        }
        if oriented < 0.0 {
            t_lo = t_mid;
        } else {
            t_hi = t_mid;
        }
    }
}

/// Evaluates the functional at `k` equispaced homotopy parameters.
/// Evaluations are independent and run in parallel; non-converged solves
/// are marked in the profile rather than failing the sweep.
pub fn sweep_flux(
    problem: &ProblemSpec,
    functional: &MonotoneFunctional,
    k: usize,
    options: &SolverOptions,
) -> Result<FluxProfile, NoFluxError> {
    if k < 2 {
        return Err(NoFluxError::TooFewSweepPoints(k));
    }
    let alpha = constant_trace(problem.lower(), "lower")?;
    let beta = constant_trace(problem.upper(), "upper")?;

    let samples: Result<Vec<PhiSample>, SolveError> = (0..k)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 / (k - 1) as f64;
            let c = t * beta + (1.0 - t) * alpha;
            let evaluation = evaluate_phi(problem, functional, c, options)?;
            Ok(PhiSample {
                t,
                c,
                phi: evaluation.phi,
                converged: evaluation.report.converged,
            })
        })
        .collect();

    Ok(FluxProfile { samples: samples? }.finalize())
}
