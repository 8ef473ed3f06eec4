//! Parameterized problems `F(u, lambda) = 0` and the scalar benchmark set.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// A smooth residual `F : R^(N+1) -> R^N` in the unknowns `u` (dimension `N`)
/// and the scalar parameter `lambda`.
///
/// Implementations must be pure: the same inputs give bitwise-identical
/// outputs, and evaluations are safe to run from multiple threads.
pub trait Problem: Sync {
    /// Dimension `N` of the unknown vector `u`.
    fn dim_u(&self) -> usize;

    fn label(&self) -> &str;

    /// Residual `F(u, lambda)`, length `N`.
    fn residual(&self, u: &DVector<f64>, lambda: f64) -> Result<DVector<f64>>;

    /// Jacobian `A(x) = [dF/du | dF/dlambda]`, shape `N x (N+1)` with the
    /// lambda column last.
    fn jacobian(&self, u: &DVector<f64>, lambda: f64) -> Result<DMatrix<f64>>;
}

/// A point `x = (u, lambda)` of the augmented space.
#[derive(Debug, Clone, PartialEq)]
pub struct PointX {
    pub u: DVector<f64>,
    pub lambda: f64,
}

impl PointX {
    pub fn new(u: DVector<f64>, lambda: f64) -> Self {
        PointX { u, lambda }
    }

    pub fn dim(&self) -> usize {
        self.u.len() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.lambda.is_finite() && self.u.iter().all(|x| x.is_finite())
    }

    /// Euclidean distance in the augmented space.
    pub fn dist(&self, other: &PointX) -> f64 {
        let du2 = (&self.u - &other.u).norm_squared();
        let dl = self.lambda - other.lambda;
        (du2 + dl * dl).sqrt()
    }

    /// `self + h * v`.
    pub fn add_scaled(&self, v: &Tangent, h: f64) -> PointX {
        PointX { u: &self.u + h * &v.v_u, lambda: self.lambda + h * v.v_lambda }
    }
}

/// A unit tangent vector `v = (v_u, v_lambda)` of the solution curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub v_u: DVector<f64>,
    pub v_lambda: f64,
}

impl Tangent {
    pub fn new(v_u: DVector<f64>, v_lambda: f64) -> Self {
        Tangent { v_u, v_lambda }
    }

    pub fn norm(&self) -> f64 {
        (self.v_u.norm_squared() + self.v_lambda * self.v_lambda).sqrt()
    }

    pub fn dot(&self, other: &Tangent) -> f64 {
        self.v_u.dot(&other.v_u) + self.v_lambda * other.v_lambda
    }

    pub fn normalized(&self) -> Tangent {
        let n = self.norm();
        Tangent { v_u: &self.v_u / n, v_lambda: self.v_lambda / n }
    }

    pub fn negated(&self) -> Tangent {
        Tangent { v_u: -&self.v_u, v_lambda: -self.v_lambda }
    }

    pub fn is_finite(&self) -> bool {
        self.v_lambda.is_finite() && self.v_u.iter().all(|x| x.is_finite())
    }
}

/// The scalar benchmark functions. Each has one unknown, one parameter and a
/// known solution curve with a severe critical point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticKind {
    /// `-u^2 l^3 - l/3 + 100`: horizontal limit point at lambda = 300.
    Fa,
    /// `2000 l^2 - u^3 + 6 l^5`: vertical cusp at the origin.
    Fb,
    /// `-u^3 l^2 - u + 50`: vertical limit region near lambda = 0.
    Fc,
    /// `-500 u^2 - 10 l^3 + u^5/10`: horizontal cusp at the origin.
    Fd,
    /// `-500 s^2 - 10 (u-20)^3 + 0.1 s^5` with `s = l - u - 5`: cusp at an angle.
    Fe,
    /// `Fe` with the roles of `u` and `lambda` exchanged.
    FeInv,
}

impl AnalyticKind {
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "fa" => AnalyticKind::Fa,
            "fb" => AnalyticKind::Fb,
            "fc" => AnalyticKind::Fc,
            "fd" => AnalyticKind::Fd,
            "fe" => AnalyticKind::Fe,
            "fe_inv" => AnalyticKind::FeInv,
            other => return Err(Error::UnknownProblem(other.to_string())),
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            AnalyticKind::Fa => "fa",
            AnalyticKind::Fb => "fb",
            AnalyticKind::Fc => "fc",
            AnalyticKind::Fd => "fd",
            AnalyticKind::Fe => "fe",
            AnalyticKind::FeInv => "fe_inv",
        }
    }

    pub fn all() -> [AnalyticKind; 6] {
        [
            AnalyticKind::Fa,
            AnalyticKind::Fb,
            AnalyticKind::Fc,
            AnalyticKind::Fd,
            AnalyticKind::Fe,
            AnalyticKind::FeInv,
        ]
    }

    fn eval(&self, u: f64, l: f64) -> f64 {
        match self {
            AnalyticKind::Fa => -u * u * l.powi(3) - l / 3.0 + 100.0,
            AnalyticKind::Fb => 2000.0 * l * l - u.powi(3) + 6.0 * l.powi(5),
            AnalyticKind::Fc => -u.powi(3) * l * l - u + 50.0,
            AnalyticKind::Fd => -500.0 * u * u - 10.0 * l.powi(3) + u.powi(5) / 10.0,
            AnalyticKind::Fe => {
                let s = l - u - 5.0;
                -500.0 * s * s - 10.0 * (u - 20.0).powi(3) + 0.1 * s.powi(5)
            }
            AnalyticKind::FeInv => AnalyticKind::Fe.eval(l, u),
        }
    }

    /// Hand-derived row `[dF/du, dF/dlambda]`.
    fn grad(&self, u: f64, l: f64) -> (f64, f64) {
        match self {
            AnalyticKind::Fa => (-2.0 * u * l.powi(3), -3.0 * u * u * l * l - 1.0 / 3.0),
            AnalyticKind::Fb => (-3.0 * u * u, 4000.0 * l + 30.0 * l.powi(4)),
            AnalyticKind::Fc => (-3.0 * u * u * l * l - 1.0, -2.0 * u.powi(3) * l),
            AnalyticKind::Fd => (-1000.0 * u + 0.5 * u.powi(4), -30.0 * l * l),
            AnalyticKind::Fe => {
                let s = l - u - 5.0;
                // dF/ds = -1000 s + 0.5 s^4, with ds/du = -1 and ds/dl = +1
                let dfds = -1000.0 * s + 0.5 * s.powi(4);
                (-dfds - 30.0 * (u - 20.0) * (u - 20.0), dfds)
            }
            AnalyticKind::FeInv => {
                let (du, dl) = AnalyticKind::Fe.grad(l, u);
                (dl, du)
            }
        }
    }
}

/// One of the scalar benchmark problems as a [`Problem`].
#[derive(Debug, Clone)]
pub struct AnalyticProblem {
    kind: AnalyticKind,
}

impl AnalyticProblem {
    pub fn new(kind: AnalyticKind) -> Self {
        AnalyticProblem { kind }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Ok(AnalyticProblem { kind: AnalyticKind::from_id(id)? })
    }

    pub fn kind(&self) -> AnalyticKind {
        self.kind
    }
}

impl Problem for AnalyticProblem {
    fn dim_u(&self) -> usize {
        1
    }

    fn label(&self) -> &str {
        self.kind.id()
    }

    fn residual(&self, u: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        let val = self.kind.eval(u[0], lambda);
        if !val.is_finite() {
            return Err(Error::NonFinite { what: "residual", index: 0 });
        }
        Ok(DVector::from_element(1, val))
    }

    fn jacobian(&self, u: &DVector<f64>, lambda: f64) -> Result<DMatrix<f64>> {
        let (du, dl) = self.kind.grad(u[0], lambda);
        if !du.is_finite() || !dl.is_finite() {
            return Err(Error::NonFinite { what: "jacobian", index: 0 });
        }
        Ok(DMatrix::from_row_slice(1, 2, &[du, dl]))
    }
}

/// Evaluates one of the scalar benchmark residuals by problem id.
pub fn eval_analytic(id: &str, u: f64, lambda: f64) -> Result<f64> {
    Ok(AnalyticKind::from_id(id)?.eval(u, lambda))
}

/// Central-difference approximation of `A(x)`, used as a verification oracle
/// for hand-coded Jacobians and as a fallback for user-defined problems.
///
/// The step for each coordinate is `rel_step * (1 + |coordinate|)`.
pub fn jacobian_fd(p: &dyn Problem, x: &PointX, rel_step: f64) -> Result<DMatrix<f64>> {
    let n = p.dim_u();
    let mut jac = DMatrix::zeros(n, n + 1);
    for col in 0..=n {
        let base = if col < n { x.u[col] } else { x.lambda };
        let h = rel_step * (1.0 + base.abs());
        let mut up = x.clone();
        let mut down = x.clone();
        if col < n {
            up.u[col] = base + h;
            down.u[col] = base - h;
        } else {
            up.lambda = base + h;
            down.lambda = base - h;
        }
        let f_up = p.residual(&up.u, up.lambda)?;
        let f_down = p.residual(&down.u, down.lambda)?;
        for row in 0..n {
            let d = (f_up[row] - f_down[row]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::NonFinite { what: "finite difference", index: col });
            }
            jac[(row, col)] = d;
        }
    }
    Ok(jac)
}
