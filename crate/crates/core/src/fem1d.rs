//! 1-D Galerkin finite elements with quadratic Lagrange basis functions on
//! [0, 1], homogeneous Dirichlet conditions eliminated from the system.
//!
//! Two problems are discretized: the modified Bratu problem
//! `gamma u_xx + lambda e^(gamma u) = 0` and a manufactured-solution problem
//! `u^2 - u_xx = r(x, lambda)` whose source term is generated from the exact
//! field `u(x) = zeta lambda^eta (1 - lambda^eta) (1 - x) x`.

use nalgebra::{DMatrix, DVector};

use crate::problems::Problem;
use crate::{Error, Result};

/// 3-point Gauss rule on [-1, 1], exact for polynomials of degree 5.
const GAUSS_XI: [f64; 3] = [-0.774596669241483377, 0.0, 0.774596669241483377];
const GAUSS_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Largest exponent fed to `exp` before the Bratu assembly reports overflow.
const EXP_OVERFLOW: f64 = 700.0;

/// Quadratic Lagrange shape values at reference coordinate `xi`.
fn shape(xi: f64) -> [f64; 3] {
    [0.5 * xi * (xi - 1.0), 1.0 - xi * xi, 0.5 * xi * (xi + 1.0)]
}

/// Reference-coordinate derivatives of the shape functions.
fn shape_deriv(xi: f64) -> [f64; 3] {
    [xi - 0.5, -2.0 * xi, xi + 0.5]
}

/// Uniform mesh of quadratic elements on [0, 1]; element `e` owns global
/// nodes `2e`, `2e+1`, `2e+2`.
#[derive(Debug, Clone)]
pub struct Mesh1D {
    nodes: Vec<f64>,
    n_elems: usize,
}

impl Mesh1D {
    pub fn uniform(n_elems: usize) -> Result<Self> {
        if n_elems == 0 {
            return Err(Error::InvalidConfig("mesh needs at least one element".into()));
        }
        let n_nodes = 2 * n_elems + 1;
        let nodes =
            (0..n_nodes).map(|g| g as f64 / (n_nodes - 1) as f64).collect::<Vec<_>>();
        Ok(Mesh1D { nodes, n_elems })
    }

    pub fn n_elems(&self) -> usize {
        self.n_elems
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of interior degrees of freedom.
    pub fn n_dofs(&self) -> usize {
        2 * self.n_elems - 1
    }

    /// Interior-dof index of the node at x = 0.5, the curve diagnostic used
    /// in traces.
    pub fn midpoint_dof(&self) -> usize {
        self.n_elems - 1
    }

    /// Interior node coordinates, matching the dof ordering.
    pub fn interior_nodes(&self) -> &[f64] {
        &self.nodes[1..self.nodes.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FemKind {
    BratuModified,
    Manufactured,
}

/// Parameters of the two finite-element problems. `alpha` of the
/// manufactured problem is fixed at 2 and the diffusivity at 1.
#[derive(Debug, Clone)]
pub struct FemProblemSpec {
    pub kind: FemKind,
    /// Bratu compression factor.
    pub gamma: f64,
    /// Height factor of the manufactured limit point.
    pub zeta: f64,
    /// Width exponent of the manufactured limit point.
    pub eta: f64,
}

impl FemProblemSpec {
    pub fn bratu(gamma: f64) -> Self {
        FemProblemSpec { kind: FemKind::BratuModified, gamma, zeta: 20.0, eta: 50.0 }
    }

    pub fn manufactured(zeta: f64, eta: f64) -> Self {
        FemProblemSpec { kind: FemKind::Manufactured, gamma: 100.0, zeta, eta }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma <= 0.0 {
            return Err(Error::InvalidConfig("gamma must be positive".into()));
        }
        if self.eta < 1.0 {
            return Err(Error::InvalidConfig("eta must be at least 1".into()));
        }
        Ok(())
    }
}

/// `lambda^e`, defined for negative lambda only when `e` is an integer.
fn pow_param(lambda: f64, e: f64) -> Result<f64> {
    if lambda >= 0.0 {
        Ok(lambda.powf(e))
    } else if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
        Ok(lambda.powi(e as i32))
    } else {
        Err(Error::Domain(format!("lambda^eta undefined for lambda = {lambda}, eta = {e}")))
    }
}

/// `g(lambda) = zeta lambda^eta (1 - lambda^eta)` and its lambda derivative.
fn load_factor(spec: &FemProblemSpec, lambda: f64) -> Result<(f64, f64)> {
    let le = pow_param(lambda, spec.eta)?;
    let le1 = pow_param(lambda, spec.eta - 1.0)?;
    let g = spec.zeta * le * (1.0 - le);
    let dg = spec.zeta * spec.eta * le1 * (1.0 - 2.0 * le);
    Ok((g, dg))
}

struct Assembly {
    residual: DVector<f64>,
    jacobian: DMatrix<f64>,
}

fn assemble(
    spec: &FemProblemSpec,
    mesh: &Mesh1D,
    u: &DVector<f64>,
    lambda: f64,
) -> Result<Assembly> {
    let n = mesh.n_dofs();
    if u.len() != n {
        return Err(Error::InvalidConfig(format!(
            "expected {n} interior dofs, got {}",
            u.len()
        )));
    }
    // Manufactured load factor is element-independent; evaluate it once so a
    // domain error surfaces before any quadrature work.
    let load = match spec.kind {
        FemKind::Manufactured => Some(load_factor(spec, lambda)?),
        FemKind::BratuModified => None,
    };

    // Full nodal field with the Dirichlet zeros re-attached.
    let n_nodes = mesh.nodes.len();
    let mut w = vec![0.0; n_nodes];
    w[1..n_nodes - 1].copy_from_slice(u.as_slice());

    let mut residual = DVector::zeros(n);
    let mut jacobian = DMatrix::zeros(n, n + 1);

    let dof_of = |g: usize| -> Option<usize> {
        if g == 0 || g == n_nodes - 1 {
            None
        } else {
            Some(g - 1)
        }
    };

    for e in 0..mesh.n_elems {
        let g0 = 2 * e;
        let xl = mesh.nodes[g0];
        let xr = mesh.nodes[g0 + 2];
        let jac_geo = 0.5 * (xr - xl);
        for (q, &xi) in GAUSS_XI.iter().enumerate() {
            let wq = GAUSS_W[q] * jac_geo;
            let phi = shape(xi);
            let dn = shape_deriv(xi);
            let dphi = [dn[0] / jac_geo, dn[1] / jac_geo, dn[2] / jac_geo];
            let x = xl + (xi + 1.0) * jac_geo;

            let mut uh = 0.0;
            let mut duh = 0.0;
            for a in 0..3 {
                uh += w[g0 + a] * phi[a];
                duh += w[g0 + a] * dphi[a];
            }

            match spec.kind {
                FemKind::BratuModified => {
                    let arg = spec.gamma * uh;
                    if arg > EXP_OVERFLOW {
                        return Err(Error::Domain(format!(
                            "exp overflow in Bratu assembly: gamma*u = {arg}"
                        )));
                    }
                    let expv = arg.exp();
                    for a in 0..3 {
                        let Some(i) = dof_of(g0 + a) else { continue };
                        residual[i] +=
                            wq * (spec.gamma * duh * dphi[a] - lambda * expv * phi[a]);
                        jacobian[(i, n)] += -wq * expv * phi[a];
                        for b in 0..3 {
                            let Some(j) = dof_of(g0 + b) else { continue };
                            jacobian[(i, j)] += wq
                                * (spec.gamma * dphi[b] * dphi[a]
                                    - lambda * spec.gamma * expv * phi[b] * phi[a]);
                        }
                    }
                }
                FemKind::Manufactured => {
                    let (g, dg) = load.expect("precomputed above");
                    let bump = (1.0 - x) * x;
                    let r = g * g * bump * bump + 2.0 * g;
                    let dr = 2.0 * g * dg * bump * bump + 2.0 * dg;
                    for a in 0..3 {
                        let Some(i) = dof_of(g0 + a) else { continue };
                        residual[i] += wq * (uh * uh * phi[a] + duh * dphi[a] - r * phi[a]);
                        jacobian[(i, n)] += -wq * dr * phi[a];
                        for b in 0..3 {
                            let Some(j) = dof_of(g0 + b) else { continue };
                            jacobian[(i, j)] +=
                                wq * (2.0 * uh * phi[b] * phi[a] + dphi[b] * dphi[a]);
                        }
                    }
                }
            }
        }
    }

    if let Some(idx) = residual.iter().position(|v: &f64| !v.is_finite()) {
        return Err(Error::NonFinite { what: "assembled residual", index: idx });
    }
    Ok(Assembly { residual, jacobian })
}

/// Weak-form residual and Jacobian of the modified Bratu problem.
pub fn assemble_bratu(
    spec: &FemProblemSpec,
    mesh: &Mesh1D,
    u: &DVector<f64>,
    lambda: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    debug_assert_eq!(spec.kind, FemKind::BratuModified);
    let a = assemble(spec, mesh, u, lambda)?;
    Ok((a.residual, a.jacobian))
}

/// Weak-form residual and Jacobian of the manufactured-solution problem.
pub fn assemble_manufactured(
    spec: &FemProblemSpec,
    mesh: &Mesh1D,
    u: &DVector<f64>,
    lambda: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    debug_assert_eq!(spec.kind, FemKind::Manufactured);
    let a = assemble(spec, mesh, u, lambda)?;
    Ok((a.residual, a.jacobian))
}

/// Nodal interpolant of the manufactured exact solution at `lambda`.
pub fn interpolate_exact(
    spec: &FemProblemSpec,
    mesh: &Mesh1D,
    lambda: f64,
) -> Result<DVector<f64>> {
    let (g, _) = load_factor(spec, lambda)?;
    Ok(DVector::from_iterator(
        mesh.n_dofs(),
        mesh.interior_nodes().iter().map(|&x| g * (1.0 - x) * x),
    ))
}

/// A finite-element problem bound to a mesh, usable by the continuation
/// drivers.
#[derive(Debug, Clone)]
pub struct FemProblem {
    spec: FemProblemSpec,
    mesh: Mesh1D,
}

impl FemProblem {
    pub fn new(spec: FemProblemSpec, mesh: Mesh1D) -> Result<Self> {
        spec.validate()?;
        Ok(FemProblem { spec, mesh })
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    pub fn spec(&self) -> &FemProblemSpec {
        &self.spec
    }
}

impl Problem for FemProblem {
    fn dim_u(&self) -> usize {
        self.mesh.n_dofs()
    }

    fn label(&self) -> &str {
        match self.spec.kind {
            FemKind::BratuModified => "bratu",
            FemKind::Manufactured => "manufactured",
        }
    }

    fn residual(&self, u: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        Ok(assemble(&self.spec, &self.mesh, u, lambda)?.residual)
    }

    fn jacobian(&self, u: &DVector<f64>, lambda: f64) -> Result<DMatrix<f64>> {
        Ok(assemble(&self.spec, &self.mesh, u, lambda)?.jacobian)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{jacobian_fd, PointX};
    use crate::stepper::newton_fixed_lambda;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bratu_problem(gamma: f64, elems: usize) -> FemProblem {
        FemProblem::new(FemProblemSpec::bratu(gamma), Mesh1D::uniform(elems).unwrap()).unwrap()
    }

    fn manufactured_problem(elems: usize) -> FemProblem {
        FemProblem::new(FemProblemSpec::manufactured(20.0, 50.0), Mesh1D::uniform(elems).unwrap())
            .unwrap()
    }

    #[test]
    fn mesh_node_layout() {
        let mesh = Mesh1D::uniform(20).unwrap();
        assert_eq!(mesh.nodes().len(), 41);
        assert_eq!(mesh.n_dofs(), 39);
        assert_eq!(mesh.nodes()[0], 0.0);
        assert_eq!(*mesh.nodes().last().unwrap(), 1.0);
        assert!(mesh.nodes().windows(2).all(|w| w[1] > w[0]));
        assert_relative_eq!(mesh.interior_nodes()[mesh.midpoint_dof()], 0.5);
    }

    #[test]
    fn bratu_zero_state_zero_load_is_exact_root() {
        let p = bratu_problem(100.0, 8);
        let u = DVector::zeros(p.dim_u());
        let r = p.residual(&u, 0.0).unwrap();
        assert_eq!(r.norm(), 0.0);
    }

    #[test]
    fn bratu_zero_state_positive_load_is_negative() {
        // With u = 0 the residual reduces to -lambda * integral of phi_i,
        // and every quadratic basis integral on a uniform mesh is positive.
        let p = bratu_problem(100.0, 8);
        let u = DVector::zeros(p.dim_u());
        let r = p.residual(&u, 0.7).unwrap();
        assert!(r.iter().all(|&v| v < 0.0));

        // Oracle for the same integrals: with gamma*u = 0 the residual is
        // -lambda * M * 1 where M is the mass matrix; check one entry by
        // integrating the midside basis function exactly: 4/3 * h/2.
        let h = 1.0 / 8.0;
        let midside_integral = 2.0 / 3.0 * h;
        assert_relative_eq!(r[0], -0.7 * midside_integral, max_relative = 1e-12);
    }

    #[test]
    fn bratu_overflow_is_domain_error() {
        let p = bratu_problem(100.0, 4);
        let u = DVector::from_element(p.dim_u(), 10.0);
        assert!(matches!(p.residual(&u, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn manufactured_residual_vanishes_at_zero_and_one() {
        let p = manufactured_problem(10);
        let u = DVector::zeros(p.dim_u());
        assert_eq!(p.residual(&u, 0.0).unwrap().norm(), 0.0);
        // lambda = 1 kills the load factor: r = 0 and u_ex = 0.
        assert_eq!(p.residual(&u, 1.0).unwrap().norm(), 0.0);
    }

    #[test]
    fn manufactured_negative_lambda_needs_integer_eta() {
        let spec = FemProblemSpec::manufactured(20.0, 50.5);
        let mesh = Mesh1D::uniform(4).unwrap();
        let u = DVector::zeros(mesh.n_dofs());
        assert!(matches!(
            assemble_manufactured(&spec, &mesh, &u, -0.25),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn interpolant_known_values() {
        let spec = FemProblemSpec::manufactured(20.0, 50.0);
        let mesh = Mesh1D::uniform(20).unwrap();
        assert_eq!(interpolate_exact(&spec, &mesh, 0.0).unwrap().norm(), 0.0);
        assert_eq!(interpolate_exact(&spec, &mesh, 1.0).unwrap().norm(), 0.0);
        let peak_lambda = 2f64.powf(-1.0 / 50.0);
        let vals = interpolate_exact(&spec, &mesh, peak_lambda).unwrap();
        assert_relative_eq!(vals[mesh.midpoint_dof()], 1.25, epsilon = 1e-12);
    }

    #[test]
    fn assembled_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bratu = bratu_problem(100.0, 5);
        let manuf = manufactured_problem(5);
        // Manufactured lambda capped at 1: beyond it the lambda^(2 eta)
        // source terms are too stiff for any central-difference step to
        // resolve the lambda column to 1e-5.
        for (p, lo, hi) in [(&bratu, 0.0, 3.0), (&manuf, 0.1, 1.0)] {
            for _ in 0..100 {
                let u = DVector::from_fn(p.dim_u(), |_, _| rng.random_range(-0.02..0.02));
                let lambda = rng.random_range(lo..hi);
                let x = PointX::new(u, lambda);
                let exact = p.jacobian(&x.u, x.lambda).unwrap();
                let fd = jacobian_fd(p, &x, f64::EPSILON.sqrt()).unwrap();
                for (a, b) in exact.iter().zip(fd.iter()) {
                    assert!(
                        (a - b).abs() <= 1e-5 * (1.0 + a.abs()),
                        "{}: {a} vs {b}",
                        p.label()
                    );
                }
            }
        }
    }

    /// Compressing the Bratu problem by gamma is the substitution u = w/gamma:
    /// the assembled residuals coincide.
    #[test]
    fn bratu_compression_consistency() {
        let mesh = Mesh1D::uniform(10).unwrap();
        let plain = FemProblemSpec::bratu(1.0);
        let squeezed = FemProblemSpec::bratu(100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let w = DVector::from_fn(mesh.n_dofs(), |_, _| rng.random_range(-0.5..2.0));
            let lambda = rng.random_range(0.0..3.0);
            let r1 = assemble_bratu(&plain, &mesh, &w, lambda).unwrap().0;
            let r100 = assemble_bratu(&squeezed, &mesh, &(&w / 100.0), lambda).unwrap().0;
            for (a, b) in r1.iter().zip(r100.iter()) {
                assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-14);
            }
        }
    }

    /// Transcendental oracle for the Bratu fold: lambda(theta) =
    /// theta^2 / (2 cosh^2(theta/4)) is maximal where
    /// cosh(theta/4) = (theta/4) sinh(theta/4); bisect that condition.
    pub(crate) fn bratu_fold_oracle() -> f64 {
        let fold_fn = |theta: f64| (theta / 4.0).cosh() - (theta / 4.0) * (theta / 4.0).sinh();
        let (mut lo, mut hi) = (1.0f64, 10.0f64);
        assert!(fold_fn(lo) > 0.0 && fold_fn(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if fold_fn(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta = 0.5 * (lo + hi);
        theta * theta / (2.0 * (theta / 4.0).cosh().powi(2))
    }

    #[test]
    fn discrete_bratu_fold_matches_transcendental_oracle() {
        let lambda_star = bratu_fold_oracle();
        assert_relative_eq!(lambda_star, 3.5138, max_relative = 2e-4);

        // Bracket the discrete fold by marching Newton with warm starts
        // until it stops converging, then bisecting the failure boundary.
        let p = bratu_problem(1.0, 20);
        let mut u = DVector::zeros(p.dim_u());
        let mut lo = 0.0;
        let mut step = 0.5;
        while step > 1e-5 {
            match newton_fixed_lambda(&p, &u, lo + step, 1e-10, 12) {
                Ok((sol, _)) => {
                    u = sol;
                    lo += step;
                }
                Err(_) => step *= 0.5,
            }
        }
        assert!(
            (lo - lambda_star).abs() <= 0.01 * lambda_star,
            "discrete fold {lo} vs oracle {lambda_star}"
        );
    }

    /// Newton from the exact interpolant converges fast, and the converged
    /// discrete solution stays within a frozen C * h^3 of the interpolant.
    #[test]
    fn manufactured_newton_from_interpolant() {
        let p = manufactured_problem(20);
        let h: f64 = 1.0 / 20.0;
        // C fitted once from the measured max-norm gaps (about 6e-7 at
        // lambda = 0.9 on this mesh) with a factor-of-several margin.
        let c = 0.02;
        for lambda in [0.2, 0.5, 0.9] {
            let guess = interpolate_exact(p.spec(), p.mesh(), lambda).unwrap();
            let (sol, iters) = newton_fixed_lambda(&p, &guess, lambda, 1e-10, 10).unwrap();
            assert!(iters <= 3, "lambda {lambda}: {iters} iterations");
            let gap = (&sol - &guess).amax();
            assert!(gap <= c * h.powi(3), "lambda {lambda}: gap {gap}");
        }
    }
}
