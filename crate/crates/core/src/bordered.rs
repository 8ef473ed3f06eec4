//! Dense bordered solves used by the Moore-Penrose corrector.
//!
//! Both corrector systems stack the rectangular Jacobian `A` (N x (N+1))
//! with one extra row (the current tangent) into a square matrix. The same
//! bordering trick with the right-hand side `[0; 1]` extracts nullspace
//! tangents.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::problems::Tangent;
use crate::{Error, Result};

/// Ratio of the smallest to largest |pivot| below which the stacked matrix
/// is treated as numerically singular (condition estimate above
/// `1 / (100 eps)`).
const RCOND_FLOOR: f64 = 100.0 * f64::EPSILON;

/// Relative residual bound the returned solution must satisfy.
const RESIDUAL_TOL: f64 = 1e-10;

/// The square system `[A; border^T] y = [rhs_top; rhs_bottom]`.
pub struct BorderedSystem<'a> {
    /// Rectangular Jacobian block, N x (N+1).
    pub a: &'a DMatrix<f64>,
    /// Border row of length N+1.
    pub border: &'a DVector<f64>,
    pub rhs_top: &'a DVector<f64>,
    pub rhs_bottom: f64,
}

impl BorderedSystem<'_> {
    pub fn solve(&self) -> Result<DVector<f64>> {
        solve_bordered(self.a, self.border, self.rhs_top, self.rhs_bottom)
    }
}

fn stack(a: &DMatrix<f64>, border: &DVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = a.ncols();
    debug_assert_eq!(m, n + 1);
    debug_assert_eq!(border.len(), m);
    let mut stacked = DMatrix::zeros(m, m);
    stacked.view_mut((0, 0), (n, m)).copy_from(a);
    for j in 0..m {
        stacked[(n, j)] = border[j];
    }
    stacked
}

/// Solves the stacked system by LU with partial pivoting and verifies the
/// result. An ill-conditioned stack or an untrustworthy solve is reported as
/// an error; callers treat it as a step failure, never as a fatal condition.
pub fn solve_bordered(
    a: &DMatrix<f64>,
    border: &DVector<f64>,
    rhs_top: &DVector<f64>,
    rhs_bottom: f64,
) -> Result<DVector<f64>> {
    let n = a.nrows();
    let m = n + 1;
    let stacked = stack(a, border);

    let mut rhs = DVector::zeros(m);
    rhs.rows_mut(0, n).copy_from(rhs_top);
    rhs[n] = rhs_bottom;

    let lu = stacked.clone().lu();
    let diag = lu.u().diagonal();
    let max_piv = diag.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    let min_piv = diag.iter().fold(f64::INFINITY, |acc, d| acc.min(d.abs()));
    if max_piv == 0.0 || min_piv / max_piv < RCOND_FLOOR {
        return Err(Error::SingularSystem);
    }

    let mut y = lu.solve(&rhs).ok_or(Error::SingularSystem)?;

    // One step of iterative refinement if the residual is out of contract.
    let bound = |r: &DVector<f64>| RESIDUAL_TOL * (1.0 + r.norm());
    let mut res = &rhs - &stacked * &y;
    if res.norm() > bound(&rhs) {
        if let Some(corr) = lu.solve(&res) {
            y += corr;
            res = &rhs - &stacked * &y;
        }
        if res.norm() > bound(&rhs) {
            return Err(Error::SingularSystem);
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(y)
}

/// Unit nullspace vector of the rectangular Jacobian `A`.
///
/// Solves `[A; r^T] t = [0; 1]` with border row `r` taken from `hint` when
/// given, otherwise a random unit row; a singular stack is retried with fresh
/// random rows. The sign is chosen so `hint . t > 0`, or, without a hint, so
/// the lambda component is non-negative.
pub fn nullspace_tangent<R: Rng + ?Sized>(
    a: &DMatrix<f64>,
    hint: Option<&Tangent>,
    rng: &mut R,
) -> Result<Tangent> {
    let n = a.nrows();
    let m = n + 1;
    let zero_rhs = DVector::zeros(n);

    let max_random_retries = 8;
    let mut attempt = 0;
    loop {
        let border = match (hint, attempt) {
            (Some(h), 0) => {
                let mut b = DVector::zeros(m);
                b.rows_mut(0, n).copy_from(&h.v_u);
                b[n] = h.v_lambda;
                b
            }
            _ => {
                let mut b = DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                let norm = b.norm();
                if norm == 0.0 {
                    attempt += 1;
                    continue;
                }
                b /= norm;
                b
            }
        };
        match solve_bordered(a, &border, &zero_rhs, 1.0) {
            Ok(t) => {
                let norm = (t.rows(0, n).norm_squared() + t[n] * t[n]).sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::RankDeficient);
                }
                let mut tangent =
                    Tangent::new(t.rows(0, n).into_owned() / norm, t[n] / norm);
                let flip = match hint {
                    Some(h) => h.dot(&tangent) < 0.0,
                    None => tangent.v_lambda < 0.0,
                };
                if flip {
                    tangent = tangent.negated();
                }
                return Ok(tangent);
            }
            Err(_) if attempt < max_random_retries => {
                attempt += 1;
            }
            Err(_) => return Err(Error::RankDeficient),
        }
    }
}
