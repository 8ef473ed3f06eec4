//! Run orchestration: build the problem, converge the starting point, trace
//! the curve and write the outputs.

use std::path::Path;

use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pathtrace_core::fem1d::{FemProblem, FemProblemSpec, Mesh1D};
use pathtrace_core::problems::AnalyticProblem;
use pathtrace_core::robust::trace_improved;
use pathtrace_core::stepper::{initial_tangent, newton_fixed_lambda, trace_standard};
use pathtrace_core::{CurvePoint, Problem, Trace};

use crate::config::{Mode, RunConfig};
use crate::output::{write_trace, OutputPaths};

/// Exit status of a run: 0 when a stop rule ended the trace, 2 when the
/// trace terminated early (reason recorded in the summary).
pub const EXIT_COMPLETED: i32 = 0;
pub const EXIT_CONFIG_ERROR: i32 = 1;
pub const EXIT_EARLY_TERMINATION: i32 = 2;

pub fn build_problem(cfg: &RunConfig) -> Result<Box<dyn Problem>, String> {
    match cfg.problem.as_str() {
        "bratu" => {
            let mesh = Mesh1D::uniform(cfg.mesh_elems).map_err(|e| e.to_string())?;
            let spec = FemProblemSpec::bratu(cfg.gamma);
            Ok(Box::new(FemProblem::new(spec, mesh).map_err(|e| e.to_string())?))
        }
        "manufactured" => {
            let mesh = Mesh1D::uniform(cfg.mesh_elems).map_err(|e| e.to_string())?;
            let spec = FemProblemSpec::manufactured(cfg.zeta, cfg.eta);
            Ok(Box::new(FemProblem::new(spec, mesh).map_err(|e| e.to_string())?))
        }
        id => Ok(Box::new(AnalyticProblem::from_id(id).map_err(|e| e.to_string())?)),
    }
}

/// Converges the starting point and traces the curve with the configured
/// driver.
pub fn trace_with_config(cfg: &RunConfig) -> Result<Trace, String> {
    let problem = build_problem(cfg)?;
    let p: &dyn Problem = problem.as_ref();

    let u_guess = DVector::from_element(p.dim_u(), cfg.u0);
    let (u_start, _) = newton_fixed_lambda(p, &u_guess, cfg.lambda0, cfg.step.tol_f, 50)
        .map_err(|e| format!("starting point did not converge: {e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = pathtrace_core::PointX::new(u_start, cfg.lambda0);
    let tangent = initial_tangent(p, &x, cfg.direction, &mut rng)
        .map_err(|e| format!("no tangent at the starting point: {e}"))?;
    let start = CurvePoint { point: x, tangent };

    let trace = match cfg.mode {
        Mode::Standard => trace_standard(p, &start, &cfg.step, &cfg.stop),
        Mode::Improved => trace_improved(
            p,
            &start,
            &cfg.step,
            &cfg.safeguards,
            &cfg.deflation,
            &cfg.stop,
            &mut rng,
        ),
    };
    Ok(trace)
}

/// Full run: trace and write outputs, returning the process exit code.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<i32, String> {
    let trace = trace_with_config(cfg)?;
    let paths = OutputPaths::in_dir(out_dir);
    write_trace(cfg, &trace, &paths).map_err(|e| format!("cannot write outputs: {e}"))?;
    if trace.termination.is_stop_rule() {
        Ok(EXIT_COMPLETED)
    } else {
        eprintln!("trace terminated early: {}", trace.termination.reason());
        Ok(EXIT_EARLY_TERMINATION)
    }
}
