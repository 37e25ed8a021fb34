//! Constant-boundary Dirichlet solves by damped frozen-coefficient
//! iteration.
//!
//! Each step truncates the current iterate into the bracket, freezes the
//! weight at the truncated values, evaluates the right-hand side with a
//! radially cut-off gradient, and solves the resulting linear system with
//! the prescribed boundary constant. The cutoff level exceeds the bracket's
//! own gradient bound, so it is expected to be inactive at convergence;
//! the report records whether it fired. Bracket membership is checked a
//! posteriori rather than enforced, and an exponential-weight energy
//! inequality is evaluated on every solve as an a-priori-bound
//! certificate.

use crate::discretize::{
    assemble_frozen, boundary_flux_conservative, gradient, h1_seminorm, interior_integral,
    solve_linear_from, DiscretizeError, FrozenOperator, VectorField,
};
use crate::expr::{ExprError, Var};
use crate::model::{Bracket, FieldSpec, Grid, ModelError, ProblemSpec, ScalarField};
pub use crate::model::{SolverOptions, StartMode};
use std::sync::Arc;
use thiserror::Error;

/// A converged solve whose iterate leaves the bracket by more than this is
/// reported as non-certified.
pub const BRACKET_CERT_TOL: f64 = 1e-8;

/// Default residual tolerance for sub/supersolution verification.
pub const DEFAULT_VERIFY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("gradient cutoff level must be positive, got {0}")]
    CutoffNotPositive(f64),
    #[error("boundary value {c} leaves the bracket traces [{lo}, {hi}]")]
    BoundaryValueOutsideBracket { c: f64, lo: f64, hi: f64 },
    #[error("iterate became non-finite at iteration {iteration}")]
    NonFiniteIterate { iteration: usize },
}

/// Diagnostics of one Dirichlet solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: ScalarField,
    /// Outer iterations performed (one linear solve each).
    pub iterations: usize,
    /// Sup-norm distance between the last iterate and the last linear
    /// solution.
    pub final_step: f64,
    /// Interior residual of the returned field in the last assembled
    /// system.
    pub residual_inf: f64,
    /// Sup of the last right-hand side (scales the residual bound).
    pub rhs_inf: f64,
    /// max(max(lower - u, 0), max(u - upper, 0)) over nodes.
    pub bracket_violation: f64,
    pub cutoff_level: f64,
    /// Whether the gradient cutoff fired on the rhs evaluation that
    /// produced the returned field.
    pub cutoff_active: bool,
    /// Gradient L2 norm of u - c (the shifted, zero-trace field).
    pub h1_seminorm: f64,
    pub energy_lhs: f64,
    pub energy_rhs: f64,
    pub converged: bool,
    pub boundary_value: f64,
}

impl SolveReport {
    pub fn bracket_certified(&self) -> bool {
        self.bracket_violation <= BRACKET_CERT_TOL
    }
}

/// Nodewise clamp of `u` into `[lower, upper]`.
pub fn truncate(u: &ScalarField, lower: &ScalarField, upper: &ScalarField) -> ScalarField {
    let values = u
        .values()
        .iter()
        .zip(lower.values())
        .zip(upper.values())
        .map(|((&v, &lo), &hi)| v.min(hi).max(lo))
        .collect();
    ScalarField::new(Arc::clone(u.grid()), values)
}

/// Radial clamp: returns `p` when `|p| <= level`, otherwise the rescaled
/// vector of norm `level`.
pub fn gradient_cutoff(p: (f64, f64), level: f64) -> (f64, f64) {
    let norm = (p.0 * p.0 + p.1 * p.1).sqrt();
    if norm <= level {
        p
    } else {
        let scale = level / norm;
        (p.0 * scale, p.1 * scale)
    }
}

/// Cutoff level: the largest discrete gradient norm of either bracket
/// member, plus a safety margin. Must end up positive to be usable.
pub fn pick_cutoff_level(
    bracket: &Bracket,
    grid: &Arc<Grid>,
    safety: f64,
) -> Result<f64, ModelError> {
    let lower = bracket.lower_field(grid)?;
    let upper = bracket.upper_field(grid)?;
    let mut bound = 0.0f64;
    for field in [&lower, &upper] {
        let grads = gradient(field);
        for idx in 0..grid.node_count() {
            bound = bound.max(grads.norm_at(idx));
        }
    }
    Ok(bound + safety)
}

/// Weight values `a(x, w)` frozen at the given field.
fn weight_values(problem: &ProblemSpec, w: &ScalarField) -> Result<ScalarField, SolveError> {
    let grid = problem.grid();
    let mut values = Vec::with_capacity(grid.node_count());
    for idx in 0..grid.node_count() {
        let mut b = grid.point_bindings(idx);
        b.set(Var::S, w.get(idx));
        let v = problem.weight().eval(&b)?;
        if !v.is_finite() {
            let (x, y) = grid.coords(idx);
            return Err(ModelError::NonFiniteSample {
                context: "weight a",
                x,
                y,
                s: w.get(idx),
                p: 0.0,
            }
            .into());
        }
        values.push(v);
    }
    Ok(ScalarField::new(Arc::clone(grid), values))
}

/// Right-hand side at interior nodes with the cut-off gradient; returns the
/// field (zero at boundary nodes, never read there) and whether the cutoff
/// fired anywhere.
fn rhs_values(
    problem: &ProblemSpec,
    w: &ScalarField,
    grads: &VectorField,
    cutoff: f64,
) -> Result<(ScalarField, bool), SolveError> {
    let grid = problem.grid();
    let mut values = vec![0.0; grid.node_count()];
    let mut active = false;
    for idx in grid.interior_indices() {
        let raw = grads.components(idx);
        let clipped = gradient_cutoff(raw, cutoff);
        if clipped != raw {
            active = true;
        }
        let mut b = grid.point_bindings(idx);
        b.set(Var::S, w.get(idx));
        b.set(Var::P1, clipped.0);
        if grid.dim() == 2 {
            b.set(Var::P2, clipped.1);
        }
        let v = problem.rhs().eval(&b)?;
        if !v.is_finite() {
            return Err(DiscretizeError::NonFiniteRhs { at: idx }.into());
        }
        values[idx] = v;
    }
    Ok((ScalarField::new(Arc::clone(grid), values), active))
}

/// Solves the Dirichlet problem with constant boundary value `c`.
///
/// The iteration starts from `c` clamped into the bracket (or from a
/// bracket member under the extremal start modes), assembles the operator
/// at the truncated iterate, and accepts the linear solution once it is
/// within `picard_tol` of the iterate. Running out of iterations yields a
/// non-converged report, not an error.
pub fn solve_dirichlet(
    problem: &ProblemSpec,
    c: f64,
    options: &SolverOptions,
) -> Result<SolveReport, SolveError> {
    options.validate()?;
    let grid = problem.grid();
    let lower = problem.lower();
    let upper = problem.upper();

    for idx in grid.boundary_indices() {
        if !(lower.get(idx) <= c && c <= upper.get(idx)) {
            return Err(SolveError::BoundaryValueOutsideBracket {
                c,
                lo: lower.get(idx),
                hi: upper.get(idx),
            });
        }
    }

    let cutoff = pick_cutoff_level(problem.bracket(), grid, options.cutoff_safety)?;
    if !(cutoff > 0.0) {
        return Err(SolveError::CutoffNotPositive(cutoff));
    }

    let mut u = match options.start {
        StartMode::BoundaryConstant => {
            truncate(&ScalarField::constant(Arc::clone(grid), c), lower, upper)
        }
        StartMode::Lower => lower.clone(),
        StartMode::Upper => upper.clone(),
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut final_step = f64::INFINITY;
    let mut cutoff_active = false;
    let mut last_op: Option<FrozenOperator> = None;
    let mut last_rhs: Option<ScalarField> = None;
    let mut rhs_inf = 0.0;

    while iterations < options.max_picard {
        iterations += 1;
        let w = truncate(&u, lower, upper);
        let a_vals = weight_values(problem, &w)?;
        let op = assemble_frozen(&a_vals)?;
        let grads = gradient(&w);
        let (rhs, active) = rhs_values(problem, &w, &grads, cutoff)?;
        let (v, stats) =
            solve_linear_from(&op, &rhs, c, &u, options.lin_tol, options.max_linear)?;
        if !v.is_finite() {
            return Err(SolveError::NonFiniteIterate { iteration: iterations });
        }

        final_step = u.max_abs_diff(&v);
        cutoff_active = active;
        rhs_inf = stats.rhs_inf;
        last_op = Some(op);
        last_rhs = Some(rhs);

        if final_step <= options.picard_tol {
            // accept the undamped linear solution: it solves the frozen
            // system at the converged coefficients to lin_tol
            u = v;
            converged = true;
            break;
        }
        let theta = options.damping;
        for idx in 0..u.len() {
            let step = v.get(idx) - u.get(idx);
            u.set(idx, u.get(idx) + theta * step);
        }
    }

    let op = last_op.expect("at least one iteration");
    let rhs = last_rhs.expect("at least one iteration");
    let residual_inf = grid.interior_indices().fold(0.0f64, |m, idx| {
        m.max((op.apply_at(u.values(), idx) - rhs.get(idx)).abs())
    });

    let bracket_violation = (0..grid.node_count()).fold(0.0f64, |m, idx| {
        m.max(lower.get(idx) - u.get(idx))
            .max(u.get(idx) - upper.get(idx))
    });

    let shifted = u.shifted(c);
    let h1 = h1_seminorm(&shifted);
    let energy = certificate_for_field(&u, problem, c);

    Ok(SolveReport {
        solution: u,
        iterations,
        final_step,
        residual_inf,
        rhs_inf,
        bracket_violation,
        cutoff_level: cutoff,
        cutoff_active,
        h1_seminorm: h1,
        energy_lhs: energy.lhs,
        energy_rhs: energy.rhs,
        converged,
        boundary_value: c,
    })
}

/// Numerical check of the a-priori energy inequality on a computed
/// solution, using the shifted field `v = u - c` and the test-function
/// weight `exp(t v^2) (2 t v^2 + 1 - b2 |v|)`.
#[derive(Debug, Clone, Copy)]
pub struct EnergyCertificate {
    /// Integral of the weighted gradient square.
    pub lhs: f64,
    /// `M exp(t M^2) a2_const |domain|` with `M` the sup distance of the
    /// bracket from `c`.
    pub rhs: f64,
    pub t: f64,
    pub m: f64,
    pub a2_const: f64,
    pub passes: bool,
    /// Derived bound on the squared gradient L2 norm of `u - c`.
    pub seminorm_sq_bound: f64,
    /// The derived bound is valid when the weight stays >= 1/2, i.e.
    /// `t >= b2^2 / 4`.
    pub seminorm_bound_valid: bool,
}

/// Evaluates the energy certificate for a finished solve. The weight
/// parameter defaults to `max(b2^2/4, 1)`, the smallest value keeping the
/// integrand weight at or above one half.
pub fn energy_certificate(
    report: &SolveReport,
    problem: &ProblemSpec,
    c: f64,
) -> EnergyCertificate {
    certificate_for_field(&report.solution, problem, c)
}

fn certificate_for_field(u: &ScalarField, problem: &ProblemSpec, c: f64) -> EnergyCertificate {
    let grid = problem.grid();
    let b2 = problem.bracket().b2();
    let t = problem
        .options()
        .energy_t_override
        .unwrap_or_else(|| (b2 * b2 / 4.0).max(1.0));
    let m = (0..grid.node_count()).fold(0.0f64, |acc, idx| {
        acc.max((problem.lower().get(idx) - c).abs())
            .max((problem.upper().get(idx) - c).abs())
    });
    let a2_const = problem.a2_const();

    let v = u.shifted(c);
    let grads = gradient(&v);
    let integrand: Vec<f64> = (0..grid.node_count())
        .map(|idx| {
            let vi = v.get(idx);
            let (gx, gy) = grads.components(idx);
            let grad_sq = gx * gx + gy * gy;
            (t * vi * vi).exp() * (2.0 * t * vi * vi + 1.0 - b2 * vi.abs()) * grad_sq
        })
        .collect();
    let lhs = interior_integral(&ScalarField::new(Arc::clone(grid), integrand));
    let rhs = m * (t * m * m).exp() * a2_const * grid.measure();

    EnergyCertificate {
        lhs,
        rhs,
        t,
        m,
        a2_const,
        passes: lhs <= rhs * (1.0 + 1e-6),
        seminorm_sq_bound: 2.0 * rhs,
        seminorm_bound_valid: t >= b2 * b2 / 4.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Sub,
    Super,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VerifyFlavor {
    Dirichlet { c: f64 },
    NoFlux,
}

/// Outcome of checking a candidate sub- or supersolution in the discrete
/// classical sense.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub side: Side,
    pub flavor: VerifyFlavor,
    /// For a subsolution the max (for a supersolution the min) of the
    /// interior residual `-div[a grad u] - f`.
    pub residual_worst: f64,
    pub interior_ok: bool,
    pub boundary_ok: bool,
    /// Max minus min of the boundary trace (no-flux flavor).
    pub trace_spread: f64,
    /// Conservative outward flux of the candidate (no-flux flavor with a
    /// constant trace).
    pub flux: Option<f64>,
    pub passes: bool,
}

/// Checks the one-sided interior inequality and the boundary condition of
/// the given flavor at tolerance `tol`: a subsolution needs residual
/// `<= tol` everywhere plus trace below the boundary constant (Dirichlet)
/// or a constant trace with flux `<= tol` (no-flux); supersolutions are
/// symmetric with flipped signs.
pub fn verify_sub_super(
    candidate: &FieldSpec,
    problem: &ProblemSpec,
    flavor: VerifyFlavor,
    side: Side,
    tol: f64,
) -> Result<VerificationReport, SolveError> {
    let grid = problem.grid();
    let u = candidate.on_grid(grid)?;
    let a_vals = weight_values(problem, &u)?;
    let op = assemble_frozen(&a_vals)?;
    let grads = gradient(&u);

    let mut residual_worst = match side {
        Side::Sub => f64::NEG_INFINITY,
        Side::Super => f64::INFINITY,
    };
    for idx in grid.interior_indices() {
        let mut b = grid.point_bindings(idx);
        b.set(Var::S, u.get(idx));
        let (p1, p2) = grads.components(idx);
        b.set(Var::P1, p1);
        if grid.dim() == 2 {
            b.set(Var::P2, p2);
        }
        let f = problem.rhs().eval(&b)?;
        if !f.is_finite() {
            return Err(DiscretizeError::NonFiniteRhs { at: idx }.into());
        }
        let r = op.apply_at(u.values(), idx) - f;
        residual_worst = match side {
            Side::Sub => residual_worst.max(r),
            Side::Super => residual_worst.min(r),
        };
    }
    let interior_ok = match side {
        Side::Sub => residual_worst <= tol,
        Side::Super => residual_worst >= -tol,
    };

    let trace: Vec<f64> = grid.boundary_indices().map(|idx| u.get(idx)).collect();
    let trace_min = trace.iter().copied().fold(f64::INFINITY, f64::min);
    let trace_max = trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let trace_spread = trace_max - trace_min;

    let (boundary_ok, flux) = match flavor {
        VerifyFlavor::Dirichlet { c } => {
            let ok = match side {
                Side::Sub => trace_max <= c + tol,
                Side::Super => trace_min >= c - tol,
            };
            (ok, None)
        }
        VerifyFlavor::NoFlux => {
            if trace_spread > tol.max(1e-12) {
                (false, None)
            } else {
                let flux = boundary_flux_conservative(&u, &a_vals)?;
                let ok = match side {
                    Side::Sub => flux <= tol,
                    Side::Super => flux >= -tol,
                };
                (ok, Some(flux))
            }
        }
    };

    Ok(VerificationReport {
        side,
        flavor,
        residual_worst,
        interior_ok,
        boundary_ok,
        trace_spread,
        flux,
        passes: interior_ok && boundary_ok,
    })
}
