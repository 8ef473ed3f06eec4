//! Numerical continuation of one-parameter solution curves `F(u, lambda) = 0`.
//!
//! The crate implements the standard Moore-Penrose predictor-corrector method
//! (see [`stepper`]) together with a more robust driver (see [`robust`]) that
//! combines deflated branch scanning, angle and distance safeguards, tangent
//! sign monitoring and dedicated procedures for vertical and horizontal
//! turning points. A set of scalar benchmark problems with known solution
//! curves lives in [`problems`]; 1-D quadratic finite-element discretizations
//! of the Bratu problem and a manufactured-solution problem live in [`fem1d`].

pub mod bordered;
pub mod deflation;
pub mod fem1d;
pub mod problems;
pub mod robust;
pub mod stepper;
pub mod trace;

mod error;

pub use error::{Error, Result};
pub use problems::{PointX, Problem, Tangent};
pub use trace::{CurvePoint, EventKind, StopRule, Termination, Trace, TraceEvent, TraceRecord};
