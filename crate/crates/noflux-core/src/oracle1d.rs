//! Independent shooting-method solver for the 1D periodic problem
//! `-u'' = f(t, u, u')`, `u(0) = u(1)`, `u'(0) = u'(1)`.
//!
//! With a unit weight the outward boundary flux of a constant-trace field
//! on [0, 1] is `u'(1) - u'(0)`, so zero flux is exactly the periodic
//! slope condition; a fixed point of the period map `(c, s) -> (u(1),
//! u'(1))` is therefore an independent check on the no-flux pipeline. The
//! integrator is classical fourth-order with a fixed step (reproducibility
//! over speed), and sign-change cells of the defect map on a lattice of
//! initial values are refined by a damped finite-difference secant
//! iteration, so `f` never needs derivatives.

use crate::expr::{Bindings, ExprError, Expression, Var};
use thiserror::Error;

/// Defect below which a refined fixed point counts as periodic.
pub const SHOOT_TOL: f64 = 1e-9;

/// Separation below which two fixed points are considered the same.
pub const DEDUP_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("integrator needs at least 16 steps, got {0}")]
    TooFewSteps(usize),
    #[error("trajectory became non-finite at step {step} (t = {t})")]
    BlowUp { step: usize, t: f64 },
    #[error("empty initial-value box: [{0}, {1}]")]
    EmptyBox(f64, f64),
    #[error("lattice needs at least 2 points per axis, got {0}")]
    LatticeTooCoarse(usize),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Outcome of one initial value integration over [0, 1].
#[derive(Debug, Clone)]
pub struct IvpResult {
    pub u1: f64,
    pub up1: f64,
    /// Sampled (t, u, u') at every step, endpoints included.
    pub trajectory: Vec<(f64, f64, f64)>,
}

/// One periodic solution found by shooting.
#[derive(Debug, Clone)]
pub struct PeriodicSolution {
    /// u(0)
    pub initial_value: f64,
    /// u'(0)
    pub initial_slope: f64,
    pub trajectory: Vec<(f64, f64, f64)>,
    /// (u(1) - u(0), u'(1) - u'(0))
    pub period_defect: (f64, f64),
    pub valid: bool,
}

fn rhs_system(
    f: &Expression,
    t: f64,
    u: f64,
    v: f64,
    bindings: &mut Bindings,
) -> Result<(f64, f64), ExprError> {
    bindings.set(Var::T, t);
    bindings.set(Var::X, t);
    bindings.set(Var::S, u);
    bindings.set(Var::P1, v);
    Ok((v, -f.eval(bindings)?))
}

/// Integrates `u' = v`, `v' = -f(t, u, v)` over [0, 1] with the classical
/// fourth-order scheme at fixed step `1/steps`.
pub fn integrate_ivp(
    f: &Expression,
    u0: f64,
    s0: f64,
    steps: usize,
) -> Result<IvpResult, OracleError> {
    if steps < 16 {
        return Err(OracleError::TooFewSteps(steps));
    }
    let h = 1.0 / steps as f64;
    let mut bindings = Bindings::new();
    let mut u = u0;
    let mut v = s0;
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push((0.0, u, v));
    for step in 0..steps {
        let t = step as f64 * h;
        let (k1u, k1v) = rhs_system(f, t, u, v, &mut bindings)?;
        let (k2u, k2v) = rhs_system(f, t + 0.5 * h, u + 0.5 * h * k1u, v + 0.5 * h * k1v, &mut bindings)?;
        let (k3u, k3v) = rhs_system(f, t + 0.5 * h, u + 0.5 * h * k2u, v + 0.5 * h * k2v, &mut bindings)?;
        let (k4u, k4v) = rhs_system(f, t + h, u + h * k3u, v + h * k3v, &mut bindings)?;
        u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        if !(u.is_finite() && v.is_finite()) {
            return Err(OracleError::BlowUp {
                step: step + 1,
                t: t + h,
            });
        }
        trajectory.push(((step + 1) as f64 * h, u, v));
    }
    Ok(IvpResult {
        u1: u,
        up1: v,
        trajectory,
    })
}

fn defect(f: &Expression, c: f64, s: f64, steps: usize) -> Result<(f64, f64), OracleError> {
    match integrate_ivp(f, c, s, steps) {
        Ok(r) => Ok((r.u1 - c, r.up1 - s)),
        // treat blow-up as an unusable sample rather than a fatal error
        Err(OracleError::BlowUp { .. }) => Ok((f64::NAN, f64::NAN)),
        Err(e) => Err(e),
    }
}

/// Least-squares solve of a 2x2 system, regularized so rank-deficient
/// defect maps (e.g. a component identically zero) still yield the
/// minimal-norm step.
fn solve_2x2_lsq(j: [[f64; 2]; 2], rhs: [f64; 2]) -> [f64; 2] {
    let jtj = [
        [
            j[0][0] * j[0][0] + j[1][0] * j[1][0],
            j[0][0] * j[0][1] + j[1][0] * j[1][1],
        ],
        [
            j[0][0] * j[0][1] + j[1][0] * j[1][1],
            j[0][1] * j[0][1] + j[1][1] * j[1][1],
        ],
    ];
    let jtr = [
        j[0][0] * rhs[0] + j[1][0] * rhs[1],
        j[0][1] * rhs[0] + j[1][1] * rhs[1],
    ];
    let mu = 1e-12 * (jtj[0][0] + jtj[1][1]) + 1e-300;
    let a = jtj[0][0] + mu;
    let b = jtj[0][1];
    let d = jtj[1][1] + mu;
    let det = a * d - b * b;
    [(d * jtr[0] - b * jtr[1]) / det, (a * jtr[1] - b * jtr[0]) / det]
}

/// Scans a lattice of initial values `(c, s)` over the given boxes for
/// cells where both defect components straddle zero, then refines each
/// such cell by a damped finite-difference secant iteration. Returns all
/// distinct fixed points of the period map (deduplicated at
/// [`DEDUP_TOL`]); an empty list means no periodic solution was found.
pub fn periodic_shoot(
    f: &Expression,
    c_box: (f64, f64),
    s_box: (f64, f64),
    grid: usize,
    refine: usize,
    steps: usize,
) -> Result<Vec<PeriodicSolution>, OracleError> {
    if !(c_box.0 <= c_box.1) || !(c_box.0.is_finite() && c_box.1.is_finite()) {
        return Err(OracleError::EmptyBox(c_box.0, c_box.1));
    }
    if !(s_box.0 <= s_box.1) || !(s_box.0.is_finite() && s_box.1.is_finite()) {
        return Err(OracleError::EmptyBox(s_box.0, s_box.1));
    }
    if grid < 2 {
        return Err(OracleError::LatticeTooCoarse(grid));
    }

    let cs = crate::model::linspace(c_box.0, c_box.1, grid);
    let ss = crate::model::linspace(s_box.0, s_box.1, grid);
    let mut lattice = vec![(f64::NAN, f64::NAN); grid * grid];
    for (i, &c) in cs.iter().enumerate() {
        for (j, &s) in ss.iter().enumerate() {
            lattice[j * grid + i] = defect(f, c, s, steps)?;
        }
    }

    let straddles = |values: [f64; 4]| {
        if values.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        min <= 0.0 && max >= 0.0
    };

    let mut found: Vec<PeriodicSolution> = Vec::new();
    for j in 0..grid - 1 {
        for i in 0..grid - 1 {
            let corners = [
                lattice[j * grid + i],
                lattice[j * grid + i + 1],
                lattice[(j + 1) * grid + i],
                lattice[(j + 1) * grid + i + 1],
            ];
            let d1 = [corners[0].0, corners[1].0, corners[2].0, corners[3].0];
            let d2 = [corners[0].1, corners[1].1, corners[2].1, corners[3].1];
            if !(straddles(d1) && straddles(d2)) {
                continue;
            }
            let start = (
                0.5 * (cs[i] + cs[i + 1]),
                0.5 * (ss[j] + ss[j + 1]),
            );
            if let Some((c, s)) = refine_cell(f, start, refine, steps)? {
                let is_new = found.iter().all(|sol| {
                    (sol.initial_value - c).abs() > DEDUP_TOL
                        || (sol.initial_slope - s).abs() > DEDUP_TOL
                });
                if is_new {
                    let result = integrate_ivp(f, c, s, steps)?;
                    let period_defect = (result.u1 - c, result.up1 - s);
                    let valid = period_defect.0.abs() <= SHOOT_TOL
                        && period_defect.1.abs() <= SHOOT_TOL;
                    found.push(PeriodicSolution {
                        initial_value: c,
                        initial_slope: s,
                        trajectory: result.trajectory,
                        period_defect,
                        valid,
                    });
                }
            }
        }
    }
    Ok(found)
}

fn refine_cell(
    f: &Expression,
    start: (f64, f64),
    refine: usize,
    steps: usize,
) -> Result<Option<(f64, f64)>, OracleError> {
    let (mut c, mut s) = start;
    let mut d = defect(f, c, s, steps)?;
    if !(d.0.is_finite() && d.1.is_finite()) {
        return Ok(None);
    }
    let mut norm = d.0.abs().max(d.1.abs());
    for _ in 0..refine {
        if norm <= SHOOT_TOL {
            return Ok(Some((c, s)));
        }
        let delta_c = 1e-6 * (1.0 + c.abs());
        let delta_s = 1e-6 * (1.0 + s.abs());
        let dc = defect(f, c + delta_c, s, steps)?;
        let ds = defect(f, c, s + delta_s, steps)?;
        if ![dc.0, dc.1, ds.0, ds.1].iter().all(|v| v.is_finite()) {
            return Ok(None);
        }
        let jac = [
            [(dc.0 - d.0) / delta_c, (ds.0 - d.0) / delta_s],
            [(dc.1 - d.1) / delta_c, (ds.1 - d.1) / delta_s],
        ];
        let step = solve_2x2_lsq(jac, [-d.0, -d.1]);

        // damp by halving until the defect norm decreases
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let trial = (c + lambda * step[0], s + lambda * step[1]);
            let d_trial = defect(f, trial.0, trial.1, steps)?;
            let n_trial = d_trial.0.abs().max(d_trial.1.abs());
            if n_trial.is_finite() && n_trial < norm {
                c = trial.0;
                s = trial.1;
                d = d_trial;
                norm = n_trial;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(if norm <= SHOOT_TOL { Some((c, s)) } else { None })
}

/// Checks the periodic differential inequality for a candidate sub- or
/// supersolution at `samples` points of [0, 1], with the boundary
/// conditions `u(0) = u(1)` and the one-sided slope inequality. All
/// derivatives are central finite differences of the candidate expression.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicVerification {
    /// Worst signed violation of the differential inequality (positive
    /// means violated for a subsolution).
    pub worst_residual: f64,
    /// |u(1) - u(0)|
    pub value_gap: f64,
    /// Signed slope-condition margin (negative means violated).
    pub slope_margin: f64,
    pub passes: bool,
}

/// Verification tolerance matched to the accuracy of the central
/// finite-difference second derivative.
pub const VERIFY_1D_TOL: f64 = 1e-6;

pub fn verify_1d_subsuper(
    candidate: &Expression,
    f: &Expression,
    side: crate::dirichlet::Side,
    samples: usize,
) -> Result<PeriodicVerification, OracleError> {
    use crate::dirichlet::Side;
    let delta = 1e-4;
    let eval = |t: f64| -> Result<f64, ExprError> {
        candidate.eval(&Bindings::new().with(Var::T, t).with(Var::X, t))
    };
    let derivative = |t: f64| -> Result<f64, ExprError> {
        Ok((eval(t + delta)? - eval(t - delta)?) / (2.0 * delta))
    };
    let second = |t: f64| -> Result<f64, ExprError> {
        Ok((eval(t + delta)? - 2.0 * eval(t)? + eval(t - delta)?) / (delta * delta))
    };

    let mut worst = f64::NEG_INFINITY;
    for &t in &crate::model::linspace(0.0, 1.0, samples.max(2)) {
        let u = eval(t)?;
        let up = derivative(t)?;
        let fval = f.eval(
            &Bindings::new()
                .with(Var::T, t)
                .with(Var::X, t)
                .with(Var::S, u)
                .with(Var::P1, up),
        )?;
        // subsolution: -u'' <= f; supersolution: -u'' >= f
        let violation = match side {
            Side::Sub => -second(t)? - fval,
            Side::Super => fval - (-second(t)?),
        };
        worst = worst.max(violation);
    }

    let value_gap = (eval(1.0)? - eval(0.0)?).abs();
    let slope_margin = match side {
        Side::Sub => derivative(0.0)? - derivative(1.0)?,
        Side::Super => derivative(1.0)? - derivative(0.0)?,
    };
    let passes =
        worst <= VERIFY_1D_TOL && value_gap <= VERIFY_1D_TOL && slope_margin >= -VERIFY_1D_TOL;
    Ok(PeriodicVerification {
        worst_residual: worst,
        value_gap,
        slope_margin,
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet::Side;
    use crate::expr::parse;

    #[test]
    fn zero_rhs_is_a_straight_line() {
        let f = parse("0").unwrap();
        let r = integrate_ivp(&f, 1.0, 2.0, 64).unwrap();
        assert_eq!(r.u1, 3.0);
        assert_eq!(r.up1, 2.0);
    }

    #[test]
    fn hyperbolic_cosine_growth() {
        // -u'' = -u gives u'' = u; from (1, 0) the solution is cosh(t)
        let f = parse("-s").unwrap();
        let r = integrate_ivp(&f, 1.0, 0.0, 256).unwrap();
        assert!((r.u1 - 1.0f64.cosh()).abs() < 1e-8);
        assert!((r.up1 - 1.0f64.sinh()).abs() < 1e-8);
    }

    #[test]
    fn integrator_is_fourth_order() {
        let f = parse("-s").unwrap();
        let exact = 1.0f64.cosh();
        let coarse = (integrate_ivp(&f, 1.0, 0.0, 32).unwrap().u1 - exact).abs();
        let fine = (integrate_ivp(&f, 1.0, 0.0, 64).unwrap().u1 - exact).abs();
        assert!(coarse / fine >= 14.0, "ratio {}", coarse / fine);
    }

    #[test]
    fn forced_oscillation_matches_antiderivative() {
        // -u'' = sin(2 pi t) with u(0) = 0, u'(0) = 1/(2 pi) integrates to
        // u = sin(2 pi t)/(4 pi^2)
        let f = parse("sin(2*pi*t)").unwrap();
        let s0 = 1.0 / (2.0 * std::f64::consts::PI);
        let r = integrate_ivp(&f, 0.0, s0, 512).unwrap();
        assert!(r.u1.abs() < 1e-10);
        assert!((r.up1 - s0).abs() < 1e-10);
    }

    #[test]
    fn time_reversal_returns_initial_state() {
        let f = parse("0").unwrap();
        let fwd = integrate_ivp(&f, 0.3, -0.7, 64).unwrap();
        let back = integrate_ivp(&f, fwd.u1, -fwd.up1, 64).unwrap();
        assert!((back.u1 - 0.3).abs() < 1e-12);
        assert!((-back.up1 + 0.7).abs() < 1e-12);
    }

    #[test]
    fn too_few_steps_rejected() {
        let f = parse("0").unwrap();
        assert!(matches!(
            integrate_ivp(&f, 0.0, 0.0, 8),
            Err(OracleError::TooFewSteps(8))
        ));
    }

    #[test]
    fn blow_up_reported() {
        let f = parse("-1000*(1 + s^2)").unwrap();
        assert!(matches!(
            integrate_ivp(&f, 0.0, 0.0, 64),
            Err(OracleError::BlowUp { .. })
        ));
    }

    #[test]
    fn flagship_period_map_fixed_point() {
        let f = parse("sin(2*pi*t) - s").unwrap();
        let found = periodic_shoot(&f, (-1.0, 1.0), (-1.0, 1.0), 11, 30, 512).unwrap();
        assert!(!found.is_empty());
        let two_pi = 2.0 * std::f64::consts::PI;
        let exact_slope = two_pi / (1.0 + two_pi * two_pi);
        let best = found
            .iter()
            .min_by(|a, b| {
                a.initial_value
                    .abs()
                    .total_cmp(&b.initial_value.abs())
            })
            .unwrap();
        assert!(best.valid);
        assert!(best.initial_value.abs() < 1e-6);
        assert!((best.initial_slope - exact_slope).abs() < 1e-6);
    }

    #[test]
    fn constant_load_has_no_periodic_solution() {
        let f = parse("1").unwrap();
        let found = periodic_shoot(&f, (-1.0, 1.0), (-1.0, 1.0), 9, 20, 128).unwrap();
        assert!(found.is_empty());
    }

    #[test]
    fn zero_rhs_yields_constant_representatives() {
        let f = parse("0").unwrap();
        let found = periodic_shoot(&f, (-1.0, 1.0), (-0.5, 0.5), 7, 20, 64).unwrap();
        assert!(!found.is_empty());
        for sol in &found {
            assert!(sol.valid);
            assert!(sol.initial_slope.abs() <= 1e-9);
        }
    }

    #[test]
    fn constant_bounds_verify_for_flagship() {
        let f = parse("sin(2*pi*t) - s").unwrap();
        let lower = parse("-1").unwrap();
        let upper = parse("1").unwrap();
        assert!(verify_1d_subsuper(&lower, &f, Side::Sub, 101).unwrap().passes);
        assert!(verify_1d_subsuper(&upper, &f, Side::Super, 101)
            .unwrap()
            .passes);
    }

    #[test]
    fn wrong_side_fails_inequality() {
        // -alpha'' = 0 against f(1) = -2 violates 0 <= -2
        let f = parse("-1 - s").unwrap();
        let candidate = parse("1").unwrap();
        let report = verify_1d_subsuper(&candidate, &f, Side::Sub, 33).unwrap();
        assert!(!report.passes);
        assert!(report.worst_residual > 1.0);
    }
}
