//! Shifted deflation and the every-N branch scanner.
//!
//! Deflation multiplies the fixed-lambda residual `f(u)` by
//! `m(u) = prod_j (1/||u - u_j||^p + sigma)` over the solutions found so
//! far, which preserves the remaining roots while repelling Newton from the
//! found ones. The scanner reruns the deflated search at a converged curve
//! point to count nearby branches and track the distance to the closest one.

use nalgebra::{DMatrix, DVector};

use crate::problems::Problem;
use crate::trace::CurvePoint;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct DeflationParams {
    /// Deflation power p.
    pub power: f64,
    /// Deflation shift sigma.
    pub shift: f64,
    /// Scan period in accepted continuation steps.
    pub scan_period: usize,
    /// Relative factor of the distinctness radius
    /// `eps = distinct_rel * (1 + ||u||)`.
    pub distinct_rel: f64,
    /// Cap on additional solutions sought per scan.
    pub max_extra: usize,
    /// Iteration cap of the deflated Newton solves.
    pub newton_max_iters: usize,
}

impl Default for DeflationParams {
    fn default() -> Self {
        DeflationParams {
            power: 2.0,
            shift: 1.0,
            scan_period: 5,
            distinct_rel: 1e-5,
            max_extra: 4,
            newton_max_iters: 30,
        }
    }
}

impl DeflationParams {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.power <= 0.0 {
            bad.push("deflation power must be positive");
        }
        if self.shift < 0.0 {
            bad.push("deflation shift must be non-negative");
        }
        if self.scan_period == 0 {
            bad.push("scan period must be at least 1");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad.join("; ")))
        }
    }

    pub fn distinct_radius(&self, u: &DVector<f64>) -> f64 {
        self.distinct_rel * (1.0 + u.norm())
    }
}

/// Whether the closest-branch distance is shrinking across scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Increasing,
    Decreasing,
    Unknown,
}

impl Trend {
    pub fn name(&self) -> &'static str {
        match self {
            Trend::Increasing => "increasing",
            Trend::Decreasing => "decreasing",
            Trend::Unknown => "unknown",
        }
    }
}

/// Distinct solutions found at one fixed lambda. The first entry, when the
/// scan succeeded, is the re-converged current-branch solution.
#[derive(Debug, Clone)]
pub struct BranchScan {
    pub lambda: f64,
    pub solutions: Vec<DVector<f64>>,
    /// Distance from the current solution to the nearest other one.
    pub delta: Option<f64>,
    pub trend: Trend,
}

/// Applies the accumulated deflation factors to a residual/Jacobian pair.
///
/// Returns `(m f, m J + f (grad m)^T)` with
/// `m = prod_j (||u - u_j||^-p + sigma)`.
pub fn deflated_residual(
    f_val: &DVector<f64>,
    j_val: &DMatrix<f64>,
    u: &DVector<f64>,
    found: &[DVector<f64>],
    params: &DeflationParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if found.is_empty() {
        return Ok((f_val.clone(), j_val.clone()));
    }
    let n = u.len();
    let mut m = 1.0;
    let mut grad_m_over_m = DVector::zeros(n);
    for star in found {
        let d = u - star;
        let dist = d.norm();
        if dist <= 1e-14 * (1.0 + star.norm()) {
            return Err(Error::SingularDeflation);
        }
        let factor = dist.powf(-params.power) + params.shift;
        m *= factor;
        // grad of ||d||^-p is -p ||d||^(-p-2) d; divide by the factor so the
        // product rule accumulates as a plain sum.
        let coeff = -params.power * dist.powf(-params.power - 2.0) / factor;
        grad_m_over_m += coeff * d;
    }
    // m J + f (grad m)^T, written as m J + (m f) (grad m / m)^T so the
    // per-factor gradients accumulate additively.
    let deflated_f = m * f_val;
    let deflated_j = m * j_val + &deflated_f * grad_m_over_m.transpose();
    debug_assert_eq!(deflated_j.shape(), (n, n));
    Ok((deflated_f, deflated_j))
}

/// Newton on the deflated square system at fixed lambda. Convergence is
/// declared on the *undeflated* residual; the returned solution is also
/// required to clear the distinctness radius around every found solution.
fn deflated_newton(
    p: &dyn Problem,
    lambda: f64,
    u0: &DVector<f64>,
    found: &[DVector<f64>],
    params: &DeflationParams,
    tol: f64,
) -> Option<DVector<f64>> {
    let n = p.dim_u();
    let mut u = u0.clone();
    for _ in 0..params.newton_max_iters {
        let f = p.residual(&u, lambda).ok()?;
        if f.norm() <= tol {
            let u = polish(p, u, lambda);
            let distinct = found
                .iter()
                .all(|star| (&u - star).norm() > params.distinct_radius(&u));
            return if distinct { Some(u) } else { None };
        }
        let a = p.jacobian(&u, lambda).ok()?;
        let j_u = a.view((0, 0), (n, n)).into_owned();
        let (df, dj) = deflated_residual(&f, &j_u, &u, found, params).ok()?;
        let delta = dj.lu().solve(&df)?;
        u -= &delta;
        if u.iter().any(|x| !x.is_finite()) {
            return None;
        }
    }
    None
}

/// Plain Newton steps driving the residual as far down as it will go.
///
/// Where the Jacobian is nearly singular (at a cusp), the residual-tolerance
/// ball around a root is much wider than the distinctness radius, and two
/// converged iterates on the same branch would otherwise pass as distinct
/// solutions. Polishing collapses such duplicates onto the root itself.
fn polish(p: &dyn Problem, mut u: DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = p.dim_u();
    let mut best_norm = match p.residual(&u, lambda) {
        Ok(f) => f.norm(),
        Err(_) => return u,
    };
    for _ in 0..5 {
        let Ok(f) = p.residual(&u, lambda) else { break };
        let Ok(a) = p.jacobian(&u, lambda) else { break };
        let j_u = a.view((0, 0), (n, n)).into_owned();
        let Some(delta) = j_u.lu().solve(&f) else { break };
        let candidate = &u - &delta;
        if candidate.iter().any(|x| !x.is_finite()) {
            break;
        }
        let Ok(f_next) = p.residual(&candidate, lambda) else { break };
        if f_next.norm() >= best_norm {
            break;
        }
        best_norm = f_next.norm();
        u = candidate;
    }
    u
}

/// Deterministic perturbations tried when a guess sits on a found solution:
/// a step along the normalized all-ones direction, both signs.
fn perturbations(g: &DVector<f64>) -> [DVector<f64>; 2] {
    let n = g.len();
    let eps = 1e-4 * (1.0 + g.norm()) / (n as f64).sqrt();
    let ones = DVector::from_element(n, eps);
    [g + &ones, g - &ones]
}

/// Accumulates distinct solutions of `F(., lambda) = 0` by repeatedly
/// deflating every solution found so far and re-running Newton from each
/// guess, then from small two-sided perturbations of each found solution
/// (a start sitting exactly on a deflated root is undefined, and the
/// deflation funnel repels Newton only once the start is nudged off it).
/// Deterministic: starts are tried in a fixed order.
pub fn find_distinct_solutions(
    p: &dyn Problem,
    lambda: f64,
    guesses: &[DVector<f64>],
    params: &DeflationParams,
    tol: f64,
) -> Vec<DVector<f64>> {
    let mut found: Vec<DVector<f64>> = Vec::new();
    loop {
        if found.len() >= 1 + params.max_extra {
            return found;
        }
        let mut starts: Vec<DVector<f64>> = Vec::new();
        for g in guesses {
            if !found.iter().any(|star| (g - star).norm() <= params.distinct_radius(g)) {
                starts.push(g.clone());
            }
        }
        for star in &found {
            starts.extend(perturbations(star));
        }
        let mut discovered = false;
        for start in starts {
            if let Some(sol) = deflated_newton(p, lambda, &start, &found, params, tol) {
                found.push(sol);
                discovered = true;
                break;
            }
        }
        if !discovered {
            return found;
        }
    }
}

/// One deflation scan at a converged curve point.
///
/// Guesses are the current solution followed by every solution of the
/// previous scan; `delta` is the distance from the re-converged current
/// solution to the nearest other one, and the trend compares `delta`
/// against the previous scan.
pub fn scan_branches(
    p: &dyn Problem,
    at: &CurvePoint,
    prev: Option<&BranchScan>,
    params: &DeflationParams,
    tol: f64,
) -> BranchScan {
    let lambda = at.point.lambda;
    let mut guesses: Vec<DVector<f64>> = vec![at.point.u.clone()];
    if let Some(prev) = prev {
        guesses.extend(prev.solutions.iter().cloned());
    }
    let solutions = find_distinct_solutions(p, lambda, &guesses, params, tol);

    // The scan is only meaningful if the first recovered solution is the
    // current branch; otherwise record an empty scan.
    let current_ok = solutions
        .first()
        .is_some_and(|s| (s - &at.point.u).norm() <= 1e-3 * (1.0 + at.point.u.norm()));
    if !current_ok {
        return BranchScan { lambda, solutions: Vec::new(), delta: None, trend: Trend::Unknown };
    }

    let delta = solutions[1..]
        .iter()
        .map(|s| (s - &solutions[0]).norm())
        .min_by(|a, b| a.total_cmp(b));
    let trend = match (prev.and_then(|p| p.delta), delta) {
        (Some(before), Some(now)) if now < before => Trend::Decreasing,
        (Some(before), Some(now)) if now > before => Trend::Increasing,
        _ => Trend::Unknown,
    };
    BranchScan { lambda, solutions, delta, trend }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{AnalyticProblem, PointX, Tangent};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> DeflationParams {
        DeflationParams::default()
    }

    fn vec1(u: f64) -> DVector<f64> {
        DVector::from_element(1, u)
    }

    #[test]
    fn empty_found_set_is_identity() {
        let f = DVector::from_vec(vec![1.0, -2.0]);
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let u = DVector::from_vec(vec![0.5, 0.5]);
        let (df, dj) = deflated_residual(&f, &j, &u, &[], &params()).unwrap();
        assert_eq!(df, f);
        assert_eq!(dj, j);
    }

    #[test]
    fn unit_distance_doubles_residual() {
        let f = DVector::from_vec(vec![3.0]);
        let j = DMatrix::from_element(1, 1, 2.0);
        let u = vec1(1.0);
        let star = vec1(0.0);
        let (df, _) = deflated_residual(&f, &j, &u, &[star], &params()).unwrap();
        assert_relative_eq!(df[0], 6.0, epsilon = 1e-14);
    }

    #[test]
    fn deflating_at_found_root_is_singular() {
        let f = DVector::from_vec(vec![0.0]);
        let j = DMatrix::from_element(1, 1, 1.0);
        let u = vec1(1.0);
        let star = vec1(1.0);
        assert!(matches!(
            deflated_residual(&f, &j, &u, &[star], &params()),
            Err(Error::SingularDeflation)
        ));
    }

    #[test]
    fn deflated_jacobian_matches_finite_differences() {
        struct Cubic;
        impl Problem for Cubic {
            fn dim_u(&self) -> usize {
                2
            }
            fn label(&self) -> &str {
                "cubic"
            }
            fn residual(&self, u: &DVector<f64>, lambda: f64) -> crate::Result<DVector<f64>> {
                Ok(DVector::from_vec(vec![
                    u[0] * u[0] * u[0] - u[1] + lambda,
                    u[0] + u[1] * u[1] - 2.0 * lambda,
                ]))
            }
            fn jacobian(&self, u: &DVector<f64>, _l: f64) -> crate::Result<DMatrix<f64>> {
                Ok(DMatrix::from_row_slice(
                    2,
                    3,
                    &[3.0 * u[0] * u[0], -1.0, 1.0, 1.0, 2.0 * u[1], -2.0],
                ))
            }
        }
        let p = Cubic;
        let lambda = 0.3;
        let found = vec![
            DVector::from_vec(vec![1.3, -0.2]),
            DVector::from_vec(vec![-0.4, 0.9]),
        ];
        let prm = params();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let u = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            if found.iter().any(|s| (&u - s).norm() < 0.2) {
                continue;
            }
            let f = p.residual(&u, lambda).unwrap();
            let a = p.jacobian(&u, lambda).unwrap();
            let j_u = a.view((0, 0), (2, 2)).into_owned();
            let (_, dj) = deflated_residual(&f, &j_u, &u, &found, &prm).unwrap();

            // Central differences of the deflated residual itself.
            let h = 1e-6;
            for c in 0..2 {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[c] += h * (1.0 + u[c].abs());
                dn[c] -= h * (1.0 + u[c].abs());
                let fu = p.residual(&up, lambda).unwrap();
                let fd_ = p.residual(&dn, lambda).unwrap();
                let (gu, _) = deflated_residual(
                    &fu,
                    &j_u,
                    &up,
                    &found,
                    &prm,
                )
                .unwrap();
                let (gd, _) = deflated_residual(&fd_, &j_u, &dn, &found, &prm).unwrap();
                for r in 0..2 {
                    let fd_val = (gu[r] - gd[r]) / (2.0 * h * (1.0 + u[c].abs()));
                    assert!(
                        (dj[(r, c)] - fd_val).abs() <= 1e-4 * (1.0 + dj[(r, c)].abs()),
                        "entry ({r},{c}): {} vs {}",
                        dj[(r, c)],
                        fd_val
                    );
                }
            }
        }
    }

    #[test]
    fn scalar_toy_finds_both_roots() {
        struct Parabola;
        impl Problem for Parabola {
            fn dim_u(&self) -> usize {
                1
            }
            fn label(&self) -> &str {
                "u^2-1"
            }
            fn residual(&self, u: &DVector<f64>, _l: f64) -> crate::Result<DVector<f64>> {
                Ok(DVector::from_element(1, u[0] * u[0] - 1.0))
            }
            fn jacobian(&self, u: &DVector<f64>, _l: f64) -> crate::Result<DMatrix<f64>> {
                Ok(DMatrix::from_row_slice(1, 2, &[2.0 * u[0], 0.0]))
            }
        }
        let sols = find_distinct_solutions(&Parabola, 0.0, &[vec1(0.9)], &params(), 1e-10);
        assert_eq!(sols.len(), 2);
        assert_relative_eq!(sols[0][0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(sols[1][0], -1.0, epsilon = 1e-8);
    }

    #[test]
    fn fa_finds_mirrored_root() {
        let p = AnalyticProblem::from_id("fa").unwrap();
        let root = ((100.0 - 100.0 / 3.0) / 100.0f64.powi(3)).sqrt();
        assert_relative_eq!(root, 8.1650e-3, max_relative = 1e-4);
        let sols = find_distinct_solutions(&p, 100.0, &[vec1(root * 1.05)], &params(), 1e-10);
        assert_eq!(sols.len(), 2, "expected both mirror branches");
        assert_relative_eq!(sols[0][0], root, max_relative = 1e-6);
        assert_relative_eq!(sols[1][0], -root, max_relative = 1e-6);
        // Every returned solution satisfies the *undeflated* residual.
        for s in &sols {
            assert!(p.residual(s, 100.0).unwrap().norm() <= 1e-10);
        }
    }

    #[test]
    fn fc_has_single_branch() {
        let p = AnalyticProblem::from_id("fc").unwrap();
        // u^3 + u - 50 at lambda = 1 has a single real root near 3.57.
        let sols =
            find_distinct_solutions(&p, 1.0, &[vec1(3.5), vec1(-20.0)], &params(), 1e-10);
        assert_eq!(sols.len(), 1);
    }

    #[test]
    fn deflation_never_returns_found_roots() {
        let p = AnalyticProblem::from_id("fa").unwrap();
        let prm = params();
        let root = ((100.0 - 50.0 / 3.0) / 50.0f64.powi(3)).sqrt();
        let sols = find_distinct_solutions(&p, 50.0, &[vec1(root)], &prm, 1e-10);
        for (i, a) in sols.iter().enumerate() {
            for b in sols.iter().skip(i + 1) {
                assert!((a - b).norm() > prm.distinct_radius(a));
            }
        }
    }

    fn curve_point_fa(lambda: f64) -> CurvePoint {
        let u = ((100.0 - lambda / 3.0) / lambda.powi(3)).sqrt();
        CurvePoint {
            point: PointX::new(vec1(u), lambda),
            tangent: Tangent::new(vec1(-1.0), 0.0).normalized(),
        }
    }

    #[test]
    fn scan_outside_problem_domain_is_recorded_empty() {
        use crate::fem1d::{FemProblem, FemProblemSpec, Mesh1D};
        // Fractional eta makes lambda < 0 a domain error; the scan records
        // itself as empty instead of failing.
        let p = FemProblem::new(FemProblemSpec::manufactured(20.0, 50.5), Mesh1D::uniform(3).unwrap())
            .unwrap();
        let at = CurvePoint {
            point: PointX::new(DVector::zeros(p.dim_u()), -0.25),
            tangent: Tangent::new(DVector::zeros(p.dim_u()), 1.0),
        };
        let scan = scan_branches(&p, &at, None, &params(), 1e-7);
        assert!(scan.solutions.is_empty());
        assert!(scan.delta.is_none());
        assert_eq!(scan.trend, Trend::Unknown);
    }

    #[test]
    fn scan_tracks_delta_and_trend_on_fa() {
        let p = AnalyticProblem::from_id("fa").unwrap();
        let prm = params();
        let first = scan_branches(&p, &curve_point_fa(250.0), None, &prm, 1e-8);
        assert_eq!(first.trend, Trend::Unknown);
        let delta_250 = first.delta.expect("mirror branch at lambda = 250");
        let expected_250 = 2.0 * ((100.0 - 250.0 / 3.0) / 250.0f64.powi(3)).sqrt();
        assert!((delta_250 - expected_250).abs() <= 1e-6);

        let second = scan_branches(&p, &curve_point_fa(290.0), Some(&first), &prm, 1e-8);
        let delta_290 = second.delta.expect("mirror branch at lambda = 290");
        let expected_290 = 2.0 * ((100.0 - 290.0 / 3.0) / 290.0f64.powi(3)).sqrt();
        assert!((delta_290 - expected_290).abs() <= 1e-6);
        assert_eq!(second.trend, Trend::Decreasing);
    }

    #[test]
    fn scan_single_branch_has_no_delta() {
        let p = AnalyticProblem::from_id("fc").unwrap();
        let (u, _) =
            crate::stepper::newton_fixed_lambda(&p, &vec1(3.6), 1.0, 1e-12, 30).unwrap();
        let at = CurvePoint {
            point: PointX::new(u, 1.0),
            tangent: Tangent::new(vec1(-1.0), 0.0).normalized(),
        };
        let scan = scan_branches(&p, &at, None, &params(), 1e-7);
        assert_eq!(scan.solutions.len(), 1);
        assert!(scan.delta.is_none());
        assert_eq!(scan.trend, Trend::Unknown);
    }
}
