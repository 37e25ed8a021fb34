//! Domains, structured grids, nodal fields, brackets, and numerical
//! validation of the structural hypotheses (coercive weight, growth
//! envelope, quadratic-gradient bound on the right-hand side).
//!
//! Domains are intervals and axis-aligned rectangles; grids are uniform
//! per axis with outward normals and surface quadrature weights on the
//! boundary nodes (halved at corners). All types are immutable after
//! construction.

use crate::expr::{Bindings, ExprError, Expression, Var};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("grid needs at least 3 nodes per axis, got {0}")]
    TooFewNodes(usize),
    #[error("bracket is not well-ordered: lower {lower} > upper {upper} at ({x}, {y})")]
    NotWellOrdered { lower: f64, upper: f64, x: f64, y: f64 },
    #[error("{context} evaluated to a non-finite value at x={x}, y={y}, s={s}, |p|={p}")]
    NonFiniteSample {
        context: &'static str,
        x: f64,
        y: f64,
        s: f64,
        p: f64,
    },
    #[error("variable `{var}` is not available in {dim}D problems ({context})")]
    VariableNotAllowed {
        var: Var,
        dim: usize,
        context: &'static str,
    },
    #[error("invalid solver option: {0}")]
    InvalidOption(String),
    #[error("b2 must be finite and nonnegative, got {0}")]
    InvalidB2(f64),
    #[error("a2 must be nonnegative on the grid, got {value} at ({x}, {y})")]
    NegativeA2 { value: f64, x: f64, y: f64 },
    #[error("empty s-range: [{0}, {1}]")]
    EmptySRange(f64, f64),
    #[error("p_max must be positive, got {0}")]
    InvalidPMax(f64),
    #[error("need at least {need} sample(s), got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("field does not live on the expected grid")]
    GridMismatch,
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Spatial domain: an interval or an axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Interval { x0: f64, x1: f64 },
    Rectangle { x0: f64, x1: f64, y0: f64, y1: f64 },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rectangle { .. } => 2,
        }
    }

    /// Length in 1D, area in 2D.
    pub fn measure(&self) -> f64 {
        match *self {
            Domain::Interval { x0, x1 } => x1 - x0,
            Domain::Rectangle { x0, x1, y0, y1 } => (x1 - x0) * (y1 - y0),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let ok = match *self {
            Domain::Interval { x0, x1 } => x0.is_finite() && x1.is_finite() && x0 < x1,
            Domain::Rectangle { x0, x1, y0, y1 } => {
                [x0, x1, y0, y1].iter().all(|v| v.is_finite()) && x0 < x1 && y0 < y1
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::DegenerateDomain(format!("{self:?}")))
        }
    }
}

/// Uniform tensor-product grid over a [`Domain`], `n` nodes per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    domain: Domain,
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
}

/// Builds a uniform grid with `n >= 3` nodes per axis.
pub fn build_grid(domain: Domain, n: usize) -> Result<Grid, ModelError> {
    domain.validate()?;
    if n < 3 {
        return Err(ModelError::TooFewNodes(n));
    }
    let grid = match domain {
        Domain::Interval { x0, x1 } => Grid {
            domain,
            nx: n,
            ny: 1,
            hx: (x1 - x0) / (n - 1) as f64,
            hy: 0.0,
        },
        Domain::Rectangle { x0, x1, y0, y1 } => Grid {
            domain,
            nx: n,
            ny: n,
            hx: (x1 - x0) / (n - 1) as f64,
            hy: (y1 - y0) / (n - 1) as f64,
        },
    };
    Ok(grid)
}

impl Grid {
    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nx
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn measure(&self) -> f64 {
        self.domain.measure()
    }

    /// Row-major node index for axis indices `(i, j)`; `j = 0` in 1D.
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn axis_indices(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    /// Node coordinates; `y = 0` in 1D (never bound to expressions there).
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.axis_indices(idx);
        match self.domain {
            Domain::Interval { x0, .. } => (x0 + i as f64 * self.hx, 0.0),
            Domain::Rectangle { x0, y0, .. } => {
                (x0 + i as f64 * self.hx, y0 + j as f64 * self.hy)
            }
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let (i, j) = self.axis_indices(idx);
        match self.dim() {
            1 => i == 0 || i == self.nx - 1,
            _ => i == 0 || i == self.nx - 1 || j == 0 || j == self.ny - 1,
        }
    }

    pub fn interior_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&idx| !self.is_boundary(idx))
    }

    pub fn boundary_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&idx| self.is_boundary(idx))
    }

    /// Outward unit normal at a boundary node; `None` at interior nodes.
    /// At rectangle corners the normal is the normalized diagonal.
    pub fn outward_normal(&self, idx: usize) -> Option<(f64, f64)> {
        if !self.is_boundary(idx) {
            return None;
        }
        let (i, j) = self.axis_indices(idx);
        let mut nx = 0.0f64;
        let mut ny = 0.0f64;
        if i == 0 {
            nx = -1.0;
        } else if i == self.nx - 1 {
            nx = 1.0;
        }
        if self.dim() == 2 {
            if j == 0 {
                ny = -1.0;
            } else if j == self.ny - 1 {
                ny = 1.0;
            }
        }
        let norm = (nx * nx + ny * ny).sqrt();
        Some((nx / norm, ny / norm))
    }

    /// Surface quadrature weight at a boundary node: 1 in 1D; the transverse
    /// spacing in 2D, halved at corners. Zero at interior nodes. The weights
    /// sum to the measure of the boundary.
    pub fn surface_weight(&self, idx: usize) -> f64 {
        if !self.is_boundary(idx) {
            return 0.0;
        }
        if self.dim() == 1 {
            return 1.0;
        }
        let (i, j) = self.axis_indices(idx);
        let on_x = i == 0 || i == self.nx - 1;
        let on_y = j == 0 || j == self.ny - 1;
        match (on_x, on_y) {
            (true, true) => 0.5 * (self.hx + self.hy),
            (true, false) => self.hy,
            (false, true) => self.hx,
            (false, false) => unreachable!(),
        }
    }

    /// Trapezoid-rule volume weight: the cell volume, halved per extremal
    /// axis index (so corners in 2D carry a quarter cell).
    pub fn volume_weight(&self, idx: usize) -> f64 {
        let (i, j) = self.axis_indices(idx);
        let wx = if i == 0 || i == self.nx - 1 {
            0.5 * self.hx
        } else {
            self.hx
        };
        if self.dim() == 1 {
            return wx;
        }
        let wy = if j == 0 || j == self.ny - 1 {
            0.5 * self.hy
        } else {
            self.hy
        };
        wx * wy
    }

    pub fn boundary_measure(&self) -> f64 {
        self.boundary_indices()
            .map(|idx| self.surface_weight(idx))
            .sum()
    }

    /// Spatial bindings for one node: `x` (and `y` in 2D); in 1D the axis
    /// coordinate is also bound to `t`.
    pub fn point_bindings(&self, idx: usize) -> Bindings {
        let (x, y) = self.coords(idx);
        let mut b = Bindings::new();
        b.set(Var::X, x);
        if self.dim() == 2 {
            b.set(Var::Y, y);
        } else {
            b.set(Var::T, x);
        }
        b
    }

    pub fn same_layout(&self, other: &Grid) -> bool {
        self == other
    }
}

/// Nodal real values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    /// Wraps raw nodal values; panics if the length does not match the grid.
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.node_count(), "field length mismatch");
        Self { grid, values }
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.node_count();
        Self::new(grid, vec![value; n])
    }

    /// Evaluates a spatial expression at every node; rejects non-finite
    /// values.
    pub fn from_expr(grid: &Arc<Grid>, expr: &Expression) -> Result<Self, ModelError> {
        let mut values = Vec::with_capacity(grid.node_count());
        for idx in 0..grid.node_count() {
            let v = expr.eval(&grid.point_bindings(idx))?;
            if !v.is_finite() {
                let (x, y) = grid.coords(idx);
                return Err(ModelError::NonFiniteSample {
                    context: "field expression",
                    x,
                    y,
                    s: f64::NAN,
                    p: 0.0,
                });
            }
            values.push(v);
        }
        Ok(Self::new(Arc::clone(grid), values))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn set(&mut self, idx: usize, v: f64) {
        self.values[idx] = v;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `self - c` as a new field.
    pub fn shifted(&self, c: f64) -> ScalarField {
        ScalarField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| v - c).collect(),
        }
    }
}

/// Either a closed-form spatial expression or an explicit grid field.
#[derive(Debug, Clone)]
pub enum FieldSpec {
    Expr(Expression),
    Field(ScalarField),
}

impl FieldSpec {
    pub fn on_grid(&self, grid: &Arc<Grid>) -> Result<ScalarField, ModelError> {
        match self {
            FieldSpec::Expr(e) => ScalarField::from_expr(grid, e),
            FieldSpec::Field(f) => {
                if f.grid().same_layout(grid) {
                    Ok(f.clone())
                } else {
                    Err(ModelError::GridMismatch)
                }
            }
        }
    }

    pub fn as_expr(&self) -> Option<&Expression> {
        match self {
            FieldSpec::Expr(e) => Some(e),
            FieldSpec::Field(_) => None,
        }
    }
}

/// Ordered pair of candidate lower/upper solutions together with the
/// quadratic-growth constants (`a2`, `b2`) declared for the right-hand side
/// between them.
#[derive(Debug, Clone)]
pub struct Bracket {
    lower: FieldSpec,
    upper: FieldSpec,
    a2: Expression,
    b2: f64,
}

impl Bracket {
    pub fn new(
        lower: FieldSpec,
        upper: FieldSpec,
        a2: Expression,
        b2: f64,
    ) -> Result<Self, ModelError> {
        if !b2.is_finite() || b2 < 0.0 {
            return Err(ModelError::InvalidB2(b2));
        }
        Ok(Self {
            lower,
            upper,
            a2,
            b2,
        })
    }

    pub fn lower(&self) -> &FieldSpec {
        &self.lower
    }

    pub fn upper(&self) -> &FieldSpec {
        &self.upper
    }

    pub fn a2(&self) -> &Expression {
        &self.a2
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    pub fn lower_field(&self, grid: &Arc<Grid>) -> Result<ScalarField, ModelError> {
        self.lower.on_grid(grid)
    }

    pub fn upper_field(&self, grid: &Arc<Grid>) -> Result<ScalarField, ModelError> {
        self.upper.on_grid(grid)
    }

    /// Constant majorant of `a2` over the grid nodes.
    pub fn a2_const(&self, grid: &Arc<Grid>) -> Result<f64, ModelError> {
        let mut sup = f64::NEG_INFINITY;
        for idx in 0..grid.node_count() {
            let v = self.a2.eval(&grid.point_bindings(idx))?;
            let (x, y) = grid.coords(idx);
            if !v.is_finite() {
                return Err(ModelError::NonFiniteSample {
                    context: "a2",
                    x,
                    y,
                    s: f64::NAN,
                    p: 0.0,
                });
            }
            if v < 0.0 {
                return Err(ModelError::NegativeA2 { value: v, x, y });
            }
            sup = sup.max(v);
        }
        Ok(sup)
    }
}

/// True iff lower <= upper at every grid node.
pub fn bracket_ordered(bracket: &Bracket, grid: &Arc<Grid>) -> Result<bool, ModelError> {
    let lo = bracket.lower_field(grid)?;
    let hi = bracket.upper_field(grid)?;
    Ok(lo
        .values()
        .iter()
        .zip(hi.values())
        .all(|(l, u)| l <= u))
}

/// How the iteration is seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartMode {
    /// Boundary constant clamped into the bracket (the deterministic
    /// default).
    #[default]
    BoundaryConstant,
    /// Start from the lower bracket member to probe minimal solutions.
    Lower,
    /// Start from the upper bracket member to probe maximal solutions.
    Upper,
}

/// Tolerances, damping, and iteration caps for one solve.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Sup-norm fixed-point tolerance for the outer iteration.
    pub picard_tol: f64,
    pub max_picard: usize,
    /// Damping factor in (0, 1] applied to each outer update.
    pub damping: f64,
    /// Relative tolerance of the inner linear solves.
    pub lin_tol: f64,
    pub max_linear: usize,
    /// Margin added to the bracket gradient bound when choosing the
    /// gradient cutoff level.
    pub cutoff_safety: f64,
    /// Overrides the exponential weight parameter of the energy
    /// certificate.
    pub energy_t_override: Option<f64>,
    pub start: StartMode,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            picard_tol: 1e-10,
            max_picard: 500,
            damping: 0.7,
            lin_tol: 1e-12,
            max_linear: 100_000,
            cutoff_safety: 10.0,
            energy_t_override: None,
            start: StartMode::BoundaryConstant,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.picard_tol > 0.0 && self.picard_tol.is_finite()) {
            return Err(ModelError::InvalidOption(format!(
                "picard_tol must be positive, got {}",
                self.picard_tol
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(ModelError::InvalidOption(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.lin_tol > 0.0 && self.lin_tol.is_finite()) {
            return Err(ModelError::InvalidOption(format!(
                "lin_tol must be positive, got {}",
                self.lin_tol
            )));
        }
        if self.max_picard == 0 || self.max_linear == 0 {
            return Err(ModelError::InvalidOption(
                "iteration caps must be positive".into(),
            ));
        }
        if !(self.cutoff_safety >= 0.0 && self.cutoff_safety.is_finite()) {
            return Err(ModelError::InvalidOption(format!(
                "cutoff_safety must be nonnegative, got {}",
                self.cutoff_safety
            )));
        }
        Ok(())
    }
}

/// Full declaration of one boundary value problem
/// `-div[a(x,u) grad u] = f(x,u,grad u)` on a grid, with its bracket and
/// solver options. Construction validates expression variable usage per
/// dimension, well-ordering of the bracket, and the sign of `a2`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    grid: Arc<Grid>,
    weight: Expression,
    rhs: Expression,
    bracket: Bracket,
    options: SolverOptions,
    lower: ScalarField,
    upper: ScalarField,
    a2_const: f64,
}

impl ProblemSpec {
    pub fn new(
        domain: Domain,
        n: usize,
        weight: Expression,
        rhs: Expression,
        bracket: Bracket,
        options: SolverOptions,
    ) -> Result<Self, ModelError> {
        options.validate()?;
        let grid = Arc::new(build_grid(domain, n)?);
        let dim = grid.dim();

        check_vars(&weight, dim, &[Var::X, Var::Y, Var::T, Var::S], "weight a")?;
        check_vars(
            &rhs,
            dim,
            &[Var::X, Var::Y, Var::T, Var::S, Var::P1, Var::P2],
            "right-hand side f",
        )?;
        for (spec, context) in [
            (&bracket.lower, "bracket lower"),
            (&bracket.upper, "bracket upper"),
        ] {
            if let FieldSpec::Expr(e) = spec {
                check_vars(e, dim, &[Var::X, Var::Y, Var::T], context)?;
            }
        }
        check_vars(&bracket.a2, dim, &[Var::X, Var::Y, Var::T], "a2")?;

        let lower = bracket.lower_field(&grid)?;
        let upper = bracket.upper_field(&grid)?;
        for idx in 0..grid.node_count() {
            if lower.get(idx) > upper.get(idx) {
                let (x, y) = grid.coords(idx);
                return Err(ModelError::NotWellOrdered {
                    lower: lower.get(idx),
                    upper: upper.get(idx),
                    x,
                    y,
                });
            }
        }
        let a2_const = bracket.a2_const(&grid)?;

        Ok(Self {
            grid,
            weight,
            rhs,
            bracket,
            options,
            lower,
            upper,
            a2_const,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn weight(&self) -> &Expression {
        &self.weight
    }

    pub fn rhs(&self) -> &Expression {
        &self.rhs
    }

    pub fn bracket(&self) -> &Bracket {
        &self.bracket
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn lower(&self) -> &ScalarField {
        &self.lower
    }

    pub fn upper(&self) -> &ScalarField {
        &self.upper
    }

    pub fn a2_const(&self) -> f64 {
        self.a2_const
    }
}

fn check_vars(
    expr: &Expression,
    dim: usize,
    allowed: &[Var],
    context: &'static str,
) -> Result<(), ModelError> {
    for var in expr.variables().iter() {
        let usable = match var {
            Var::Y | Var::P2 => dim == 2,
            Var::T => dim == 1,
            _ => true,
        };
        if !usable || !allowed.contains(&var) {
            return Err(ModelError::VariableNotAllowed { var, dim, context });
        }
    }
    Ok(())
}

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![a];
    }
    let step = (b - a) / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|i| a + i as f64 * step).collect();
    out[n - 1] = b;
    out
}

/// Outcome of sampling the weight `a(x, s)` over nodes and an s-range.
#[derive(Debug, Clone)]
pub struct WeightReport {
    pub min_value: f64,
    /// (x, y, s) realizing the minimum.
    pub min_at: (f64, f64, f64),
    /// Coercivity holds on the sample cloud: min >= 1.
    pub passes: bool,
    /// Empirical affine-in-|s| envelope slope: a <= a1 |s| + b1 over the
    /// samples used in the fit.
    pub a1: f64,
    /// Empirical envelope intercept (the weight at the smallest sampled
    /// |s|, maximized over nodes).
    pub b1: f64,
}

/// Samples `a(x, s)` over every node and `samples` values of s and reports
/// the minimum (coercivity requires min >= 1) together with an empirical
/// affine envelope in |s|. The envelope is a two-pass fit: the intercept is
/// the sup of the weight at the sampled s closest to zero, the slope the
/// sup of `(a - b1)/|s|` over samples with `|s|` in the upper half range.
pub fn validate_weight(
    a: &Expression,
    grid: &Arc<Grid>,
    s_range: (f64, f64),
    samples: usize,
) -> Result<WeightReport, ModelError> {
    let (s_min, s_max) = s_range;
    if !(s_min <= s_max) {
        return Err(ModelError::EmptySRange(s_min, s_max));
    }
    if samples == 0 {
        return Err(ModelError::TooFewSamples { need: 1, got: 0 });
    }
    let s_values = linspace(s_min, s_max, samples);
    let s_absmax = s_min.abs().max(s_max.abs());
    let s_near_zero = s_values
        .iter()
        .copied()
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .expect("nonempty");

    let mut min_value = f64::INFINITY;
    let mut min_at = (f64::NAN, f64::NAN, f64::NAN);
    let mut b1 = f64::NEG_INFINITY;
    for idx in 0..grid.node_count() {
        let (x, y) = grid.coords(idx);
        let mut bindings = grid.point_bindings(idx);
        for &s in &s_values {
            bindings.set(Var::S, s);
            let v = a.eval(&bindings)?;
            if !v.is_finite() {
                return Err(ModelError::NonFiniteSample {
                    context: "weight a",
                    x,
                    y,
                    s,
                    p: 0.0,
                });
            }
            if v < min_value {
                min_value = v;
                min_at = (x, y, s);
            }
            if s == s_near_zero {
                b1 = b1.max(v);
            }
        }
    }

    let mut a1: f64 = 0.0;
    if s_absmax > 0.0 {
        for idx in 0..grid.node_count() {
            let mut bindings = grid.point_bindings(idx);
            for &s in &s_values {
                if s.abs() < 0.5 * s_absmax {
                    continue;
                }
                bindings.set(Var::S, s);
                let v = a.eval(&bindings)?;
                a1 = a1.max((v - b1) / s.abs());
            }
        }
    }

    Ok(WeightReport {
        min_value,
        min_at,
        passes: min_value >= 1.0,
        a1,
        b1,
    })
}

/// Fits the minimal constants of the envelope `|f| <= a2 + b2 |p|^2` over
/// the sample cloud {(node, s in [lower, upper], |p| <= p_max)}. Two-pass:
/// `a2` is the sup of |f| at p = 0; `b2` the sup of `(|f| - a2)/|p|^2` over
/// samples with `|p| >= p_max/2`, clamped at zero.
pub fn estimate_bn(
    f: &Expression,
    grid: &Arc<Grid>,
    bracket: &Bracket,
    p_max: f64,
    samples: usize,
) -> Result<(f64, f64), ModelError> {
    if !(p_max > 0.0 && p_max.is_finite()) {
        return Err(ModelError::InvalidPMax(p_max));
    }
    if samples < 2 {
        return Err(ModelError::TooFewSamples {
            need: 2,
            got: samples,
        });
    }
    let lower = bracket.lower_field(grid)?;
    let upper = bracket.upper_field(grid)?;
    let dim = grid.dim();
    let directions: Vec<(f64, f64)> = if dim == 1 {
        vec![(-1.0, 0.0), (1.0, 0.0)]
    } else {
        (0..8)
            .map(|k| {
                let angle = k as f64 * std::f64::consts::FRAC_PI_4;
                (angle.cos(), angle.sin())
            })
            .collect()
    };
    let magnitudes = linspace(0.0, p_max, samples);

    let eval_at = |idx: usize, s: f64, p1: f64, p2: f64| -> Result<f64, ModelError> {
        let mut b = grid.point_bindings(idx);
        b.set(Var::S, s);
        b.set(Var::P1, p1);
        if dim == 2 {
            b.set(Var::P2, p2);
        }
        let v = f.eval(&b)?;
        if !v.is_finite() {
            let (x, y) = grid.coords(idx);
            return Err(ModelError::NonFiniteSample {
                context: "right-hand side f",
                x,
                y,
                s,
                p: (p1 * p1 + p2 * p2).sqrt(),
            });
        }
        Ok(v)
    };

    // Pass 1: baseline at p = 0.
    let mut a2 = 0.0f64;
    for idx in 0..grid.node_count() {
        for &s in &linspace(lower.get(idx), upper.get(idx), samples) {
            a2 = a2.max(eval_at(idx, s, 0.0, 0.0)?.abs());
        }
    }

    // Pass 2: quadratic coefficient over the outer half of the p-range.
    let mut b2 = 0.0f64;
    for idx in 0..grid.node_count() {
        for &s in &linspace(lower.get(idx), upper.get(idx), samples) {
            for &(dx, dy) in &directions {
                for &r in &magnitudes {
                    if r < 0.5 * p_max {
                        continue;
                    }
                    let v = eval_at(idx, s, r * dx, r * dy)?.abs();
                    b2 = b2.max((v - a2) / (r * r));
                }
            }
        }
    }

    Ok((a2, b2))
}

/// Worst-case margin of the declared envelope `|f| <= a2(x) + b2 |p|^2`
/// over the same sample cloud as [`estimate_bn`].
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeReport {
    /// max over samples of `|f| - (a2 + b2 |p|^2)`; nonpositive means the
    /// declared constants majorize the right-hand side on the cloud.
    pub worst_margin: f64,
    pub passes: bool,
}

/// Checks the bracket's declared growth constants against the right-hand
/// side on the sample cloud.
pub fn check_bn_envelope(
    f: &Expression,
    grid: &Arc<Grid>,
    bracket: &Bracket,
    p_max: f64,
    samples: usize,
) -> Result<EnvelopeReport, ModelError> {
    if !(p_max > 0.0 && p_max.is_finite()) {
        return Err(ModelError::InvalidPMax(p_max));
    }
    if samples < 2 {
        return Err(ModelError::TooFewSamples {
            need: 2,
            got: samples,
        });
    }
    let lower = bracket.lower_field(grid)?;
    let upper = bracket.upper_field(grid)?;
    let b2 = bracket.b2();
    let dim = grid.dim();
    let directions: Vec<(f64, f64)> = if dim == 1 {
        vec![(-1.0, 0.0), (1.0, 0.0)]
    } else {
        (0..8)
            .map(|k| {
                let angle = k as f64 * std::f64::consts::FRAC_PI_4;
                (angle.cos(), angle.sin())
            })
            .collect()
    };
    let magnitudes = linspace(0.0, p_max, samples);

    let mut worst = f64::NEG_INFINITY;
    for idx in 0..grid.node_count() {
        let a2_here = {
            let b = grid.point_bindings(idx);
            bracket.a2().eval(&b)?
        };
        for &s in &linspace(lower.get(idx), upper.get(idx), samples) {
            for &(dx, dy) in &directions {
                for &r in &magnitudes {
                    let mut b = grid.point_bindings(idx);
                    b.set(Var::S, s);
                    b.set(Var::P1, r * dx);
                    if dim == 2 {
                        b.set(Var::P2, r * dy);
                    }
                    let v = f.eval(&b)?;
                    if !v.is_finite() {
                        let (x, y) = grid.coords(idx);
                        return Err(ModelError::NonFiniteSample {
                            context: "right-hand side f",
                            x,
                            y,
                            s,
                            p: r,
                        });
                    }
                    worst = worst.max(v.abs() - (a2_here + b2 * r * r));
                }
            }
        }
    }
    Ok(EnvelopeReport {
        worst_margin: worst,
        passes: worst <= 1e-12 * (1.0 + p_max * p_max),
    })
}
