//! Standard Moore-Penrose predictor-corrector continuation.
//!
//! One continuation step from a converged point `x` with unit tangent `v`:
//! predict `X0 = x + h v`, then iterate two bordered solves per corrector
//! pass (one for the point correction, one for the tangent correction),
//! normalizing the tangent after each pass. Step length adapts on the
//! corrector iteration count. [`trace_standard`] deliberately applies no
//! safeguards, so it can reproduce the known failure modes near severe
//! critical points.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::bordered::{nullspace_tangent, solve_bordered};
use crate::problems::{PointX, Problem, Tangent};
use crate::trace::{CurvePoint, EventKind, StopRule, Termination, Trace, TraceRecord};
use crate::{Error, Result};

/// Step-length control and corrector tolerances.
#[derive(Debug, Clone)]
pub struct StepControl {
    /// Current prediction step length.
    pub h: f64,
    pub h_min: f64,
    pub h_inc: f64,
    pub h_dec: f64,
    /// Converging in fewer iterations than this grows the step (K_min).
    pub fast_iters: usize,
    /// Converging in more iterations than this shrinks the step (K_max).
    pub slow_iters: usize,
    /// Corrector iteration cap (k_max).
    pub max_iters: usize,
    /// Residual tolerance.
    pub tol_f: f64,
    /// Correction-size tolerance.
    pub tol_x: f64,
}

impl StepControl {
    /// Reference parameter set used by all scalar benchmark runs.
    pub fn reference(h0: f64) -> Self {
        StepControl {
            h: h0,
            h_min: 1e-4,
            h_inc: 1.5,
            h_dec: 0.5,
            fast_iters: 5,
            slow_iters: 10,
            max_iters: 20,
            tol_f: 1e-7,
            tol_x: 1e-7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.h_min > 0.0 && self.h >= self.h_min) {
            problems.push("require 0 < h_min <= h".to_string());
        }
        if !(self.h_dec > 0.0 && self.h_dec < 1.0 && self.h_inc > 1.0) {
            problems.push("require 0 < h_dec < 1 < h_inc".to_string());
        }
        if !(self.fast_iters < self.slow_iters && self.slow_iters < self.max_iters) {
            problems.push("require fast_iters < slow_iters < max_iters".to_string());
        }
        if !(self.tol_f > 0.0 && self.tol_x > 0.0) {
            problems.push("tolerances must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Result of one corrector run.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    Converged { point: PointX, tangent: Tangent, iterations: usize },
    MaxIters { iterations: usize },
    SolverFailure { iterations: usize },
}

impl StepOutcome {
    pub fn iterations(&self) -> usize {
        match self {
            StepOutcome::Converged { iterations, .. }
            | StepOutcome::MaxIters { iterations }
            | StepOutcome::SolverFailure { iterations } => *iterations,
        }
    }
}

/// Prediction step `x + h v`.
pub fn predict(x: &PointX, v: &Tangent, h: f64) -> PointX {
    x.add_scaled(v, h)
}

fn stack_tangent(v: &Tangent) -> DVector<f64> {
    let n = v.v_u.len();
    let mut s = DVector::zeros(n + 1);
    s.rows_mut(0, n).copy_from(&v.v_u);
    s[n] = v.v_lambda;
    s
}

fn apply_jacobian(a: &DMatrix<f64>, v: &Tangent) -> DVector<f64> {
    a * stack_tangent(v)
}

/// Moore-Penrose corrector loop from the prediction point `x0` with tangent
/// `v0`.
///
/// Each pass solves the point-correction system and the tangent-correction
/// system with the same stacked matrix, updates `X` and the normalized
/// tangent, and declares convergence once the residual at the pre-update
/// iterate and the correction size both pass their tolerances. The returned
/// point is the post-update iterate with its residual re-validated; the
/// returned tangent is re-centered on that point with one extra tangent
/// correction so it spans the nullspace of `A` there.
pub fn mp_correct(p: &dyn Problem, x0: &PointX, v0: &Tangent, ctl: &StepControl) -> StepOutcome {
    let mut x = x0.clone();
    let mut v = v0.clone();
    for k in 0..ctl.max_iters {
        let f = match p.residual(&x.u, x.lambda) {
            Ok(f) => f,
            Err(_) => return StepOutcome::SolverFailure { iterations: k },
        };
        let a = match p.jacobian(&x.u, x.lambda) {
            Ok(a) => a,
            Err(_) => return StepOutcome::SolverFailure { iterations: k },
        };
        let border = stack_tangent(&v);

        let delta = match solve_bordered(&a, &border, &f, 0.0) {
            Ok(d) => d,
            Err(_) => return StepOutcome::SolverFailure { iterations: k },
        };
        let av = apply_jacobian(&a, &v);
        let t_corr = match solve_bordered(&a, &border, &av, 0.0) {
            Ok(t) => t,
            Err(_) => return StepOutcome::SolverFailure { iterations: k },
        };

        let n = p.dim_u();
        let x_next = PointX::new(&x.u - delta.rows(0, n), x.lambda - delta[n]);
        if !x_next.is_finite() {
            return StepOutcome::SolverFailure { iterations: k };
        }
        let z = Tangent::new(&v.v_u - t_corr.rows(0, n), v.v_lambda - t_corr[n]);
        let v_next = z.normalized();
        if !v_next.is_finite() {
            return StepOutcome::SolverFailure { iterations: k };
        }

        if f.norm() <= ctl.tol_f && delta.norm() <= ctl.tol_x {
            // Validate the point actually returned; keep iterating if the
            // update drifted the residual back out of tolerance.
            match p.residual(&x_next.u, x_next.lambda) {
                Ok(f_next) if f_next.norm() <= ctl.tol_f => {
                    let tangent = refresh_tangent(p, &x_next, &v_next).unwrap_or(v_next);
                    return StepOutcome::Converged {
                        point: x_next,
                        tangent,
                        iterations: k + 1,
                    };
                }
                Ok(_) => {}
                Err(_) => return StepOutcome::SolverFailure { iterations: k + 1 },
            }
        }
        x = x_next;
        v = v_next;
    }
    StepOutcome::MaxIters { iterations: ctl.max_iters }
}

/// One tangent-correction pass at the converged point itself, so the stored
/// tangent spans the nullspace of `A` where it is stored.
fn refresh_tangent(p: &dyn Problem, x: &PointX, v: &Tangent) -> Result<Tangent> {
    let a = p.jacobian(&x.u, x.lambda)?;
    let border = stack_tangent(v);
    let av = apply_jacobian(&a, v);
    let t_corr = solve_bordered(&a, &border, &av, 0.0)?;
    let n = p.dim_u();
    let z = Tangent::new(&v.v_u - t_corr.rows(0, n), v.v_lambda - t_corr[n]);
    let z = z.normalized();
    if z.is_finite() {
        Ok(z)
    } else {
        Err(Error::RankDeficient)
    }
}

/// Step-length adaptation on the outcome of one continuation step.
///
/// Fast convergence grows the step by `h_inc`; slow convergence or failure
/// shrinks it by `h_dec`, clamped at `h_min`.
pub fn adapt_h(ctl: &StepControl, iterations: usize, succeeded: bool) -> StepControl {
    let mut out = ctl.clone();
    if succeeded {
        if iterations < ctl.fast_iters {
            out.h = ctl.h * ctl.h_inc;
        } else if iterations > ctl.slow_iters {
            out.h = (ctl.h * ctl.h_dec).max(ctl.h_min);
        }
    } else {
        out.h = (ctl.h * ctl.h_dec).max(ctl.h_min);
    }
    out
}

/// Basic Newton iteration on the square system `F(u, lambda) = 0` at frozen
/// lambda. Returns the solution and the number of iterations used.
pub fn newton_fixed_lambda(
    p: &dyn Problem,
    u0: &DVector<f64>,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(DVector<f64>, usize)> {
    let n = p.dim_u();
    let mut u = u0.clone();
    for k in 0..=max_iters {
        let f = p.residual(&u, lambda)?;
        if !f.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { what: "residual", index: 0 });
        }
        if f.norm() <= tol {
            return Ok((u, k));
        }
        if k == max_iters {
            break;
        }
        let a = p.jacobian(&u, lambda)?;
        let j_u = a.view((0, 0), (n, n)).into_owned();
        let delta = j_u.lu().solve(&f).ok_or(Error::SingularSystem)?;
        u -= &delta;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "newton iterate", index: 0 });
        }
    }
    Err(Error::NewtonDidNotConverge { iterations: max_iters })
}

/// Traces the curve with the plain Moore-Penrose method and no safeguards.
///
/// Runs predict / correct / adapt until a stop rule fires or the step length
/// is exhausted at `h_min`. Every failure mode of the plain method (stalling
/// at a severe limit point, backtracking, skipping a cusp region) is left
/// observable in the returned trace.
pub fn trace_standard(
    p: &dyn Problem,
    start: &CurvePoint,
    ctl: &StepControl,
    stop: &StopRule,
) -> Trace {
    let mut trace = Trace::new(start);
    let mut ctl = ctl.clone();
    let mut cur = start.clone();

    loop {
        if trace.records.len() >= stop.max_points {
            trace.termination = Termination::MaxPoints;
            return trace;
        }
        let x0 = predict(&cur.point, &cur.tangent, ctl.h);
        match mp_correct(p, &x0, &cur.tangent, &ctl) {
            StepOutcome::Converged { point, tangent, iterations } => {
                if tangent.dot(&cur.tangent) < 0.0 {
                    trace.push_event(EventKind::DirectionReversal {
                        dot: tangent.dot(&cur.tangent),
                    });
                }
                trace.records.push(TraceRecord {
                    point: point.clone(),
                    tangent: tangent.clone(),
                    h: ctl.h,
                    iterations,
                });
                ctl = adapt_h(&ctl, iterations, true);
                cur = CurvePoint { point, tangent };
                if stop.lambda_out_of_range(cur.point.lambda) {
                    trace.termination = Termination::LambdaOutOfRange;
                    return trace;
                }
            }
            outcome => {
                if ctl.h <= ctl.h_min {
                    trace.push_event(EventKind::HExhausted);
                    trace.termination = Termination::HExhausted;
                    return trace;
                }
                ctl = adapt_h(&ctl, outcome.iterations(), false);
            }
        }
    }
}

/// Initial tangent at a converged starting point, oriented so the lambda
/// component has the requested sign.
pub fn initial_tangent<R: Rng + ?Sized>(
    p: &dyn Problem,
    x: &PointX,
    lambda_sign: f64,
    rng: &mut R,
) -> Result<Tangent> {
    let a = p.jacobian(&x.u, x.lambda)?;
    let mut t = nullspace_tangent(&a, None, rng)?;
    if lambda_sign < 0.0 && t.v_lambda > 0.0 {
        t = t.negated();
    }
    Ok(t)
}
