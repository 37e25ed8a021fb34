//! Conservative flux-form discretization on structured grids.
//!
//! The frozen-coefficient operator applies, at each interior node, the sum
//! of face fluxes `a_face (u_i - u_nb) / h^2` with `a_face` the arithmetic
//! mean of the nodal coefficient values (3-point stencil in 1D, 5-point in
//! 2D). [`boundary_flux_conservative`] sums the same face fluxes across the
//! boundary, so the discrete divergence identity
//!
//! ```text
//! flux(u) + sum_interior (A u)_i * volume_weight_i = 0
//! ```
//!
//! holds exactly (summation by parts), mirroring at the discrete level the
//! identity that equates the weighted outward boundary flux with minus the
//! interior load integral.

use crate::expr::Var;
use crate::model::{Grid, ModelError, ProblemSpec, ScalarField};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiscretizeError {
    #[error("nonpositive face coefficient {value} at face {face} (axis {axis})")]
    NonpositiveFace {
        face: usize,
        axis: usize,
        value: f64,
    },
    #[error(
        "linear solve did not reach tolerance {tol:e} after {iterations} iterations (residual {residual:e})"
    )]
    LinearSolveFailed {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("boundary trace is not constant (spread {spread:e})")]
    NonConstantTrace { spread: f64 },
    #[error("right-hand side evaluated to a non-finite value at node {at}")]
    NonFiniteRhs { at: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-node gradient components (one in 1D, two in 2D).
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Arc<Grid>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl VectorField {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn components(&self, idx: usize) -> (f64, f64) {
        let gy = if self.gy.is_empty() { 0.0 } else { self.gy[idx] };
        (self.gx[idx], gy)
    }

    pub fn norm_at(&self, idx: usize) -> f64 {
        let (gx, gy) = self.components(idx);
        (gx * gx + gy * gy).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.gx.iter().chain(self.gy.iter()).all(|v| v.is_finite())
    }
}

/// Discrete gradient: central differences at interior nodes, one-sided
/// second-order differences at boundary nodes (exact for affine fields).
pub fn gradient(u: &ScalarField) -> VectorField {
    let grid = Arc::clone(u.grid());
    let v = u.values();
    let nx = grid.nx();
    let ny = grid.ny();

    // one-sided stencils written as differences so constants cancel exactly
    let axis_derivative = |stride: usize, count: usize, pos: usize, idx: usize, h: f64| {
        if pos == 0 {
            (4.0 * (v[idx + stride] - v[idx]) - (v[idx + 2 * stride] - v[idx])) / (2.0 * h)
        } else if pos == count - 1 {
            (4.0 * (v[idx] - v[idx - stride]) - (v[idx] - v[idx - 2 * stride])) / (2.0 * h)
        } else {
            (v[idx + stride] - v[idx - stride]) / (2.0 * h)
        }
    };

    let mut gx = vec![0.0; v.len()];
    let mut gy = Vec::new();
    for idx in 0..v.len() {
        let (i, _) = grid.axis_indices(idx);
        gx[idx] = axis_derivative(1, nx, i, idx, grid.hx());
    }
    if grid.dim() == 2 {
        gy = vec![0.0; v.len()];
        for idx in 0..v.len() {
            let (_, j) = grid.axis_indices(idx);
            gy[idx] = axis_derivative(nx, ny, j, idx, grid.hy());
        }
    }
    VectorField { grid, gx, gy }
}

/// Frozen-coefficient weighted Laplacian in conservative flux form: the
/// coefficient is fixed at the nodal values it was assembled from, and each
/// face carries the arithmetic mean of its two adjacent nodes.
#[derive(Debug, Clone)]
pub struct FrozenOperator {
    grid: Arc<Grid>,
    /// x-faces, (nx-1) per row: face between (i, j) and (i+1, j).
    face_x: Vec<f64>,
    /// y-faces (2D only), nx per row: face between (i, j) and (i, j+1).
    face_y: Vec<f64>,
}

/// Assembles the operator from nodal coefficient values; every face mean
/// must be positive.
pub fn assemble_frozen(a_values: &ScalarField) -> Result<FrozenOperator, DiscretizeError> {
    let grid = Arc::clone(a_values.grid());
    let a = a_values.values();
    let nx = grid.nx();
    let ny = grid.ny();

    let mut face_x = Vec::with_capacity((nx - 1) * ny);
    for j in 0..ny {
        for i in 0..nx - 1 {
            let mean = 0.5 * (a[grid.index(i, j)] + a[grid.index(i + 1, j)]);
            if !(mean > 0.0) {
                return Err(DiscretizeError::NonpositiveFace {
                    face: face_x.len(),
                    axis: 0,
                    value: mean,
                });
            }
            face_x.push(mean);
        }
    }

    let mut face_y = Vec::new();
    if grid.dim() == 2 {
        face_y.reserve((ny - 1) * nx);
        for j in 0..ny - 1 {
            for i in 0..nx {
                let mean = 0.5 * (a[grid.index(i, j)] + a[grid.index(i, j + 1)]);
                if !(mean > 0.0) {
                    return Err(DiscretizeError::NonpositiveFace {
                        face: face_y.len(),
                        axis: 1,
                        value: mean,
                    });
                }
                face_y.push(mean);
            }
        }
    }

    Ok(FrozenOperator {
        grid,
        face_x,
        face_y,
    })
}

impl FrozenOperator {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Coefficient of the face between `(i, j)` and `(i+1, j)`.
    pub fn face_x(&self, i: usize, j: usize) -> f64 {
        self.face_x[j * (self.grid.nx() - 1) + i]
    }

    /// Coefficient of the face between `(i, j)` and `(i, j+1)` (2D only).
    pub fn face_y(&self, i: usize, j: usize) -> f64 {
        self.face_y[j * self.grid.nx() + i]
    }

    /// Applies the stencil row of an interior node to full-length nodal
    /// values.
    pub fn apply_at(&self, u: &[f64], idx: usize) -> f64 {
        let grid = &self.grid;
        let (i, j) = grid.axis_indices(idx);
        let ihx2 = 1.0 / (grid.hx() * grid.hx());
        let mut sum = (self.face_x(i - 1, j) * (u[idx] - u[idx - 1])
            + self.face_x(i, j) * (u[idx] - u[idx + 1]))
            * ihx2;
        if grid.dim() == 2 {
            let nx = grid.nx();
            let ihy2 = 1.0 / (grid.hy() * grid.hy());
            sum += (self.face_y(i, j - 1) * (u[idx] - u[idx - nx])
                + self.face_y(i, j) * (u[idx] - u[idx + nx]))
                * ihy2;
        }
        sum
    }

    /// Diagonal entry of an interior row (used for Jacobi preconditioning).
    pub fn diagonal_at(&self, idx: usize) -> f64 {
        let grid = &self.grid;
        let (i, j) = grid.axis_indices(idx);
        let ihx2 = 1.0 / (grid.hx() * grid.hx());
        let mut d = (self.face_x(i - 1, j) + self.face_x(i, j)) * ihx2;
        if grid.dim() == 2 {
            let ihy2 = 1.0 / (grid.hy() * grid.hy());
            d += (self.face_y(i, j - 1) + self.face_y(i, j)) * ihy2;
        }
        d
    }

    /// Row-sum norm of the interior block; the absolute off-diagonal
    /// entries of each row sum to the diagonal, so this is twice the
    /// largest diagonal.
    pub fn inf_norm(&self) -> f64 {
        2.0 * self
            .grid
            .interior_indices()
            .fold(0.0f64, |m, idx| m.max(self.diagonal_at(idx)))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearStats {
    pub iterations: usize,
    pub residual_inf: f64,
    pub rhs_inf: f64,
}

/// Solves the interior system with the given constant boundary value:
/// direct tridiagonal elimination in 1D, Jacobi-preconditioned conjugate
/// gradients in 2D. The returned field equals `boundary_value` on every
/// boundary node and satisfies the interior residual bound
/// `max |A u - rhs| <= lin_tol (1 + max |rhs|)`.
pub fn solve_linear(
    op: &FrozenOperator,
    rhs: &ScalarField,
    boundary_value: f64,
    lin_tol: f64,
    max_iter: usize,
) -> Result<ScalarField, DiscretizeError> {
    let guess = ScalarField::constant(Arc::clone(op.grid()), boundary_value);
    solve_linear_from(op, rhs, boundary_value, &guess, lin_tol, max_iter).map(|(u, _)| u)
}

/// As [`solve_linear`] but warm-started from `guess` (its boundary entries
/// are overwritten by `boundary_value`).
///
/// The effective residual tolerance is `lin_tol (1 + max |rhs|)` plus the
/// f64 representation floor `16 eps ||A|| (1 + |bc| + ||guess||)`: no
/// storable iterate can beat that floor once the stencil weights reach
/// `1/h^2` scale.
pub fn solve_linear_from(
    op: &FrozenOperator,
    rhs: &ScalarField,
    boundary_value: f64,
    guess: &ScalarField,
    lin_tol: f64,
    max_iter: usize,
) -> Result<(ScalarField, LinearStats), DiscretizeError> {
    let grid = op.grid();
    if !rhs.grid().same_layout(grid) || !guess.grid().same_layout(grid) {
        return Err(DiscretizeError::GridMismatch);
    }
    for idx in grid.interior_indices() {
        if !rhs.get(idx).is_finite() {
            return Err(DiscretizeError::NonFiniteRhs { at: idx });
        }
    }
    let rhs_inf = grid
        .interior_indices()
        .fold(0.0f64, |m, idx| m.max(rhs.get(idx).abs()));
    let floor = 16.0
        * f64::EPSILON
        * op.inf_norm()
        * (1.0 + boundary_value.abs() + guess.inf_norm());
    let tol_abs = lin_tol * (1.0 + rhs_inf) + floor;

    let mut u = guess.clone();
    for idx in grid.boundary_indices() {
        u.set(idx, boundary_value);
    }

    let warm_residual = residual_inf(op, &u, rhs);
    let mut stats = if warm_residual <= tol_abs {
        LinearStats {
            iterations: 0,
            residual_inf: warm_residual,
            rhs_inf,
        }
    } else if grid.dim() == 1 {
        solve_tridiagonal(op, rhs, &mut u);
        LinearStats {
            iterations: 1,
            residual_inf: residual_inf(op, &u, rhs),
            rhs_inf,
        }
    } else {
        conjugate_gradient(op, rhs, &mut u, tol_abs, max_iter)
    };
    stats.rhs_inf = rhs_inf;

    if stats.residual_inf > tol_abs {
        return Err(DiscretizeError::LinearSolveFailed {
            iterations: stats.iterations,
            residual: stats.residual_inf,
            tol: tol_abs,
        });
    }
    Ok((u, stats))
}

fn residual_inf(op: &FrozenOperator, u: &ScalarField, rhs: &ScalarField) -> f64 {
    op.grid()
        .interior_indices()
        .fold(0.0f64, |m, idx| {
            m.max((op.apply_at(u.values(), idx) - rhs.get(idx)).abs())
        })
}

/// Thomas elimination on the interior tridiagonal system; boundary values
/// of `u` must already be set and are folded into the right-hand side.
fn solve_tridiagonal(op: &FrozenOperator, rhs: &ScalarField, u: &mut ScalarField) {
    let grid = op.grid();
    let nx = grid.nx();
    let m = nx - 2;
    let ih2 = 1.0 / (grid.hx() * grid.hx());

    let mut diag = vec![0.0; m];
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut b = vec![0.0; m];
    for k in 0..m {
        let i = k + 1;
        let left = op.face_x(i - 1, 0) * ih2;
        let right = op.face_x(i, 0) * ih2;
        diag[k] = left + right;
        lower[k] = -left;
        upper[k] = -right;
        b[k] = rhs.get(i);
        if k == 0 {
            b[k] += left * u.get(0);
        }
        if k == m - 1 {
            b[k] += right * u.get(nx - 1);
        }
    }

    // forward sweep
    for k in 1..m {
        let w = lower[k] / diag[k - 1];
        diag[k] -= w * upper[k - 1];
        b[k] -= w * b[k - 1];
    }
    // back substitution
    let mut x = vec![0.0; m];
    x[m - 1] = b[m - 1] / diag[m - 1];
    for k in (0..m - 1).rev() {
        x[k] = (b[k] - upper[k] * x[k + 1]) / diag[k];
    }
    for k in 0..m {
        u.set(k + 1, x[k]);
    }
}

/// Jacobi-preconditioned conjugate gradients over the interior unknowns,
/// run on full-length vectors with boundary entries pinned (zero for the
/// Krylov vectors, the Dirichlet value for the iterate). Whenever the
/// recursive residual claims convergence the true residual is recomputed
/// and the iteration restarts from it if the claim was optimistic, so the
/// returned iterate meets the tolerance in the true residual.
fn conjugate_gradient(
    op: &FrozenOperator,
    rhs: &ScalarField,
    u: &mut ScalarField,
    tol_abs: f64,
    max_iter: usize,
) -> LinearStats {
    let grid = op.grid();
    let n = grid.node_count();
    let interior: Vec<usize> = grid.interior_indices().collect();

    let mut inv_diag = vec![0.0; n];
    for &idx in &interior {
        inv_diag[idx] = 1.0 / op.diagonal_at(idx);
    }

    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;

    'restart: loop {
        let mut res_inf = 0.0f64;
        for &idx in &interior {
            r[idx] = rhs.get(idx) - op.apply_at(u.values(), idx);
            z[idx] = inv_diag[idx] * r[idx];
            p[idx] = z[idx];
            res_inf = res_inf.max(r[idx].abs());
        }
        if res_inf <= tol_abs || iterations >= max_iter {
            break;
        }
        let mut rz: f64 = interior.iter().map(|&i| r[i] * z[i]).sum();

        while iterations < max_iter {
            for &idx in &interior {
                ap[idx] = op.apply_at(&p, idx);
            }
            let pap: f64 = interior.iter().map(|&i| p[i] * ap[i]).sum();
            if !(pap > 0.0) {
                break 'restart; // lost definiteness; report the residual as-is
            }
            let alpha = rz / pap;
            res_inf = 0.0;
            for &idx in &interior {
                u.values_mut()[idx] += alpha * p[idx];
                r[idx] -= alpha * ap[idx];
                z[idx] = inv_diag[idx] * r[idx];
                res_inf = res_inf.max(r[idx].abs());
            }
            iterations += 1;
            if res_inf <= tol_abs {
                continue 'restart; // verify against the true residual
            }
            let rz_next: f64 = interior.iter().map(|&i| r[i] * z[i]).sum();
            let beta = rz_next / rz;
            rz = rz_next;
            for &idx in &interior {
                p[idx] = z[idx] + beta * p[idx];
            }
        }
        break;
    }

    LinearStats {
        iterations,
        residual_inf: residual_inf(op, u, rhs),
        rhs_inf: 0.0,
    }
}

/// Trapezoid-rule integral over the domain (tensor-product weights,
/// boundary nodes carry half weights).
pub fn interior_integral(g: &ScalarField) -> f64 {
    let grid = g.grid();
    (0..grid.node_count())
        .map(|idx| g.get(idx) * grid.volume_weight(idx))
        .sum()
}

/// Discrete outward normal flux of a constant-boundary field, summed over
/// the faces that connect interior nodes to boundary nodes with the same
/// face coefficients as [`assemble_frozen`]. Exactly the negative of the
/// volume-weighted interior stencil sum (summation by parts).
pub fn boundary_flux_conservative(
    u: &ScalarField,
    a_values: &ScalarField,
) -> Result<f64, DiscretizeError> {
    let grid = u.grid();
    if !a_values.grid().same_layout(grid) {
        return Err(DiscretizeError::GridMismatch);
    }
    let trace: Vec<f64> = grid.boundary_indices().map(|idx| u.get(idx)).collect();
    let lo = trace.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    if spread > 1e-9 * (1.0 + lo.abs().max(hi.abs())) {
        return Err(DiscretizeError::NonConstantTrace { spread });
    }

    let a = a_values.values();
    let v = u.values();
    let face = |p: usize, q: usize| 0.5 * (a[p] + a[q]);
    let nx = grid.nx();
    let ny = grid.ny();
    let mut flux = 0.0;
    if grid.dim() == 1 {
        flux -= face(0, 1) * (v[1] - v[0]) / grid.hx();
        flux -= face(nx - 1, nx - 2) * (v[nx - 2] - v[nx - 1]) / grid.hx();
    } else {
        for j in 1..ny - 1 {
            let (b, i) = (grid.index(0, j), grid.index(1, j));
            flux -= face(b, i) * (v[i] - v[b]) / grid.hx() * grid.hy();
            let (b, i) = (grid.index(nx - 1, j), grid.index(nx - 2, j));
            flux -= face(b, i) * (v[i] - v[b]) / grid.hx() * grid.hy();
        }
        for i in 1..nx - 1 {
            let (b, q) = (grid.index(i, 0), grid.index(i, 1));
            flux -= face(b, q) * (v[q] - v[b]) / grid.hy() * grid.hx();
            let (b, q) = (grid.index(i, ny - 1), grid.index(i, ny - 2));
            flux -= face(b, q) * (v[q] - v[b]) / grid.hy() * grid.hx();
        }
    }
    Ok(flux)
}

/// Weighted boundary flux of a solution field computed through the interior:
/// minus the trapezoid integral of `f(x, u, grad u)` evaluated nodewise
/// (one-sided gradients at the boundary).
pub fn flux_interior(problem: &ProblemSpec, u: &ScalarField) -> Result<f64, DiscretizeError> {
    let grid = problem.grid();
    if !u.grid().same_layout(grid) {
        return Err(DiscretizeError::GridMismatch);
    }
    let grads = gradient(u);
    let mut load = Vec::with_capacity(grid.node_count());
    for idx in 0..grid.node_count() {
        let mut b = grid.point_bindings(idx);
        b.set(Var::S, u.get(idx));
        let (p1, p2) = grads.components(idx);
        b.set(Var::P1, p1);
        if grid.dim() == 2 {
            b.set(Var::P2, p2);
        }
        let v = problem.rhs().eval(&b).map_err(ModelError::from)?;
        if !v.is_finite() {
            return Err(DiscretizeError::NonFiniteRhs { at: idx });
        }
        load.push(v);
    }
    let load = ScalarField::new(Arc::clone(grid), load);
    Ok(-interior_integral(&load))
}

/// L2 norm of the discrete gradient: sqrt of the trapezoid integral of
/// `|grad u|^2`.
pub fn h1_seminorm(u: &ScalarField) -> f64 {
    let grads = gradient(u);
    let grid = u.grid();
    let sq: Vec<f64> = (0..grid.node_count())
        .map(|idx| {
            let (gx, gy) = grads.components(idx);
            gx * gx + gy * gy
        })
        .collect();
    interior_integral(&ScalarField::new(Arc::clone(grid), sq)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::model::{build_grid, Domain};

    fn unit_interval(n: usize) -> Arc<Grid> {
        Arc::new(build_grid(Domain::Interval { x0: 0.0, x1: 1.0 }, n).unwrap())
    }

    fn unit_square(n: usize) -> Arc<Grid> {
        Arc::new(
            build_grid(
                Domain::Rectangle {
                    x0: 0.0,
                    x1: 1.0,
                    y0: 0.0,
                    y1: 1.0,
                },
                n,
            )
            .unwrap(),
        )
    }

    fn field_from(grid: &Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let values = (0..grid.node_count())
            .map(|idx| {
                let (x, y) = grid.coords(idx);
                f(x, y)
            })
            .collect();
        ScalarField::new(Arc::clone(grid), values)
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = unit_square(5);
        let u = ScalarField::constant(Arc::clone(&g), 3.7);
        let grads = gradient(&u);
        for idx in 0..g.node_count() {
            assert_eq!(grads.components(idx), (0.0, 0.0));
        }
    }

    #[test]
    fn gradient_exact_for_affine() {
        let g = unit_interval(9);
        let u = field_from(&g, |x, _| x);
        let grads = gradient(&u);
        for idx in 0..g.node_count() {
            assert!((grads.components(idx).0 - 1.0).abs() < 1e-12);
        }
        let g2 = unit_square(7);
        let u2 = field_from(&g2, |x, y| 2.0 * x - 3.0 * y + 1.0);
        let grads2 = gradient(&u2);
        for idx in 0..g2.node_count() {
            let (gx, gy) = grads2.components(idx);
            assert!((gx - 2.0).abs() < 1e-12);
            assert!((gy + 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn central_difference_exact_for_quadratic() {
        let g = unit_interval(5); // h = 0.25
        let u = field_from(&g, |x, _| x * x);
        let grads = gradient(&u);
        // interior node x = 0.5
        assert_eq!(grads.components(2).0, 1.0);
    }

    #[test]
    fn unit_coefficient_gives_standard_stencil() {
        let g = unit_interval(5);
        let a = ScalarField::constant(Arc::clone(&g), 1.0);
        let op = assemble_frozen(&a).unwrap();
        let h2 = 0.25 * 0.25;
        // probe the row through basis vectors
        let mut e = vec![0.0; 5];
        e[2] = 1.0;
        assert!((op.apply_at(&e, 2) - 2.0 / h2).abs() < 1e-12);
        e[2] = 0.0;
        e[1] = 1.0;
        assert!((op.apply_at(&e, 2) + 1.0 / h2).abs() < 1e-12);

        let a2 = ScalarField::constant(Arc::clone(&g), 2.0);
        let op2 = assemble_frozen(&a2).unwrap();
        let mut e2 = vec![0.0; 5];
        e2[2] = 1.0;
        assert!((op2.apply_at(&e2, 2) - 4.0 / h2).abs() < 1e-12);
    }

    #[test]
    fn face_coefficients_are_arithmetic_means() {
        let g = unit_interval(5); // nodes 0, .25, .5, .75, 1
        let a = ScalarField::from_expr(&g, &parse("1 + x").unwrap()).unwrap();
        let op = assemble_frozen(&a).unwrap();
        assert_eq!(op.face_x(1, 0), (1.25 + 1.5) / 2.0);
        assert_eq!(op.face_x(2, 0), (1.5 + 1.75) / 2.0);
    }

    #[test]
    fn nonpositive_face_rejected() {
        let g = unit_interval(5);
        let mut values = vec![1.0; 5];
        values[2] = -3.0;
        let a = ScalarField::new(Arc::clone(&g), values);
        assert!(matches!(
            assemble_frozen(&a),
            Err(DiscretizeError::NonpositiveFace { .. })
        ));
    }

    #[test]
    fn zero_load_returns_boundary_constant() {
        let g = unit_interval(17);
        let a = ScalarField::constant(Arc::clone(&g), 1.5);
        let op = assemble_frozen(&a).unwrap();
        let rhs = ScalarField::constant(Arc::clone(&g), 0.0);
        let u = solve_linear(&op, &rhs, 0.3, 1e-12, 1000).unwrap();
        for idx in 0..g.node_count() {
            assert!((u.get(idx) - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_load_matches_parabola() {
        let g = unit_interval(33);
        let a = ScalarField::constant(Arc::clone(&g), 1.0);
        let op = assemble_frozen(&a).unwrap();
        let rhs = ScalarField::constant(Arc::clone(&g), 1.0);
        let u = solve_linear(&op, &rhs, 0.0, 1e-12, 1000).unwrap();
        for idx in 0..g.node_count() {
            let (x, _) = g.coords(idx);
            assert!((u.get(idx) - 0.5 * x * (1.0 - x)).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_agrees_with_dense_elimination_in_2d() {
        let g = unit_square(5);
        let a = ScalarField::from_expr(&g, &parse("1 + x + y/2").unwrap()).unwrap();
        let op = assemble_frozen(&a).unwrap();
        let rhs = field_from(&g, |x, y| (3.0 * x - y).sin() + 0.5);
        let bc = 0.3;
        let u = solve_linear(&op, &rhs, bc, 1e-13, 10_000).unwrap();

        // dense Gaussian elimination over the interior unknowns as oracle
        let interior: Vec<usize> = g.interior_indices().collect();
        let m = interior.len();
        let mut matrix = vec![vec![0.0f64; m]; m];
        let mut b = vec![0.0f64; m];
        for (row, &ri) in interior.iter().enumerate() {
            let mut probe = vec![0.0; g.node_count()];
            for (col, &ci) in interior.iter().enumerate() {
                probe[ci] = 1.0;
                matrix[row][col] = op.apply_at(&probe, ri);
                probe[ci] = 0.0;
            }
            let mut lift = vec![0.0; g.node_count()];
            for idx in g.boundary_indices() {
                lift[idx] = bc;
            }
            b[row] = rhs.get(ri) - op.apply_at(&lift, ri);
        }
        for k in 0..m {
            let pivot = (k..m)
                .max_by(|&p, &q| matrix[p][k].abs().total_cmp(&matrix[q][k].abs()))
                .unwrap();
            matrix.swap(k, pivot);
            b.swap(k, pivot);
            for r in k + 1..m {
                let w = matrix[r][k] / matrix[k][k];
                for c in k..m {
                    matrix[r][c] -= w * matrix[k][c];
                }
                b[r] -= w * b[k];
            }
        }
        let mut x = vec![0.0f64; m];
        for k in (0..m).rev() {
            let mut acc = b[k];
            for c in k + 1..m {
                acc -= matrix[k][c] * x[c];
            }
            x[k] = acc / matrix[k][k];
        }

        for (col, &idx) in interior.iter().enumerate() {
            assert!(
                (u.get(idx) - x[col]).abs() < 1e-10,
                "node {idx}: cg {} vs dense {}",
                u.get(idx),
                x[col]
            );
        }
    }

    #[test]
    fn trapezoid_integral_basics() {
        let g = unit_interval(13);
        assert!((interior_integral(&ScalarField::constant(Arc::clone(&g), 1.0)) - 1.0).abs() < 1e-15);
        let linear = field_from(&g, |x, _| x);
        assert!((interior_integral(&linear) - 0.5).abs() < 1e-12);
        let g65 = unit_interval(65);
        let wave = field_from(&g65, |x, _| (2.0 * std::f64::consts::PI * x).sin());
        assert!(interior_integral(&wave).abs() < 1e-12);
    }

    #[test]
    fn flux_of_constant_field_vanishes() {
        let g = unit_square(5);
        let u = ScalarField::constant(Arc::clone(&g), 2.0);
        let a = ScalarField::constant(Arc::clone(&g), 1.3);
        assert_eq!(boundary_flux_conservative(&u, &a).unwrap(), 0.0);
    }

    #[test]
    fn flux_of_parabola_matches_interior_load() {
        // u = x(1-x)/2 with unit coefficient: every interior stencil row
        // evaluates to exactly 1, so the face-flux sum is -(1 - h) and the
        // divergence identity is exact at any resolution.
        let g = unit_interval(5);
        let a = ScalarField::constant(Arc::clone(&g), 1.0);
        let u = field_from(&g, |x, _| 0.5 * x * (1.0 - x));
        let flux = boundary_flux_conservative(&u, &a).unwrap();
        assert!((flux + 0.75).abs() < 1e-13);

        let g = unit_interval(1025);
        let a = ScalarField::constant(Arc::clone(&g), 1.0);
        let u = field_from(&g, |x, _| 0.5 * x * (1.0 - x));
        let flux = boundary_flux_conservative(&u, &a).unwrap();
        assert!((flux + 1.0).abs() < 1.1e-3);
    }

    #[test]
    fn summation_by_parts_identity_2d() {
        let g = unit_square(9);
        let a = ScalarField::from_expr(&g, &parse("1 + x + y/2").unwrap()).unwrap();
        let op = assemble_frozen(&a).unwrap();
        let u = field_from(&g, |x, y| {
            0.7 + (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
        });
        let flux = boundary_flux_conservative(&u, &a).unwrap();
        let mut interior_sum = 0.0;
        for idx in g.interior_indices() {
            interior_sum += op.apply_at(u.values(), idx) * g.volume_weight(idx);
        }
        assert!(
            (flux + interior_sum).abs() <= 1e-10 * (1.0 + flux.abs()),
            "flux {flux} vs interior sum {interior_sum}"
        );
    }

    #[test]
    fn nonconstant_trace_rejected() {
        let g = unit_interval(5);
        let a = ScalarField::constant(Arc::clone(&g), 1.0);
        let u = field_from(&g, |x, _| x);
        assert!(matches!(
            boundary_flux_conservative(&u, &a),
            Err(DiscretizeError::NonConstantTrace { .. })
        ));
    }

    #[test]
    fn seminorm_values() {
        let g = unit_interval(9);
        assert_eq!(h1_seminorm(&ScalarField::constant(Arc::clone(&g), 4.0)), 0.0);
        let linear = field_from(&g, |x, _| x);
        assert!((h1_seminorm(&linear) - 1.0).abs() < 1e-12);
        let g129 = unit_interval(129);
        let sine = field_from(&g129, |x, _| (std::f64::consts::PI * x).sin());
        let exact = std::f64::consts::PI / 2.0f64.sqrt();
        assert!((h1_seminorm(&sine) - exact).abs() < 1e-3);
    }
}
