//! Trace data shared by the standard and improved drivers.

use crate::problems::{PointX, Tangent};

/// A converged point on the solution curve together with its unit tangent.
#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub point: PointX,
    pub tangent: Tangent,
}

/// One accepted point of a trace.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub point: PointX,
    pub tangent: Tangent,
    /// Prediction step length used to reach this point (0 for the start
    /// point and for points produced by a turning-point procedure).
    pub h: f64,
    /// Corrector (or Newton) iterations spent on this point.
    pub iterations: usize,
}

/// Diagnostic event attached to a trace.
#[derive(Debug, Clone)]
pub struct TraceEvent {
    /// Index of the accepted point the event refers to. Rejection events
    /// carry the index of the last accepted point at the time of the
    /// rejection; splice events carry the index of the first spliced point.
    pub at_index: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    StepRejectedAngle { cos: f64, c_min: f64 },
    StepRejectedDistance { du: f64, dlambda: f64 },
    StepRejectedSign { v_lambda_prev: f64, v_lambda_new: f64 },
    VerticalTpApplied { lambda_from: f64, lambda_to: f64 },
    HorizontalTpApplied { splice_gap: f64 },
    BifurcationPassed { separation: f64 },
    BranchScan { solutions: usize, delta: Option<f64>, trend: &'static str, skipped: bool },
    HExhausted,
    /// Consecutive accepted tangents with negative inner product
    /// (standard mode only; the improved driver rejects these).
    DirectionReversal { dot: f64 },
}

impl EventKind {
    /// Stable identifier used in event files.
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::StepRejectedAngle { .. } => "step_rejected_angle",
            EventKind::StepRejectedDistance { .. } => "step_rejected_distance",
            EventKind::StepRejectedSign { .. } => "step_rejected_sign",
            EventKind::VerticalTpApplied { .. } => "vertical_tp_applied",
            EventKind::HorizontalTpApplied { .. } => "horizontal_tp_applied",
            EventKind::BifurcationPassed { .. } => "bifurcation_passed",
            EventKind::BranchScan { .. } => "branch_scan",
            EventKind::HExhausted => "h_exhausted",
            EventKind::DirectionReversal { .. } => "direction_reversal",
        }
    }
}

/// Why a trace stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    /// Stop rule: maximum number of points reached.
    MaxPoints,
    /// Stop rule: lambda left the configured window.
    LambdaOutOfRange,
    /// Step length pinned at `h_min` and no acceptable point exists.
    HExhausted,
    /// A turning-point procedure was required but failed.
    TurningPointFailed(String),
}

impl Termination {
    /// Stop rules end a run normally; everything else is an early abort.
    pub fn is_stop_rule(&self) -> bool {
        matches!(self, Termination::MaxPoints | Termination::LambdaOutOfRange)
    }

    pub fn reason(&self) -> String {
        match self {
            Termination::MaxPoints => "max points reached".into(),
            Termination::LambdaOutOfRange => "lambda left the configured window".into(),
            Termination::HExhausted => "h exhausted at h_min".into(),
            Termination::TurningPointFailed(why) => format!("turning point method failed: {why}"),
        }
    }
}

/// Termination conditions checked after every accepted point.
#[derive(Debug, Clone)]
pub struct StopRule {
    pub max_points: usize,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule { max_points: 10_000, lambda_min: None, lambda_max: None }
    }
}

impl StopRule {
    pub fn lambda_out_of_range(&self, lambda: f64) -> bool {
        self.lambda_min.is_some_and(|lo| lambda < lo)
            || self.lambda_max.is_some_and(|hi| lambda > hi)
    }
}

/// Ordered converged points plus the event log of one continuation run.
#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub events: Vec<TraceEvent>,
    pub termination: Termination,
}

impl Trace {
    pub fn new(start: &CurvePoint) -> Self {
        Trace {
            records: vec![TraceRecord {
                point: start.point.clone(),
                tangent: start.tangent.clone(),
                h: 0.0,
                iterations: 0,
            }],
            events: Vec::new(),
            termination: Termination::MaxPoints,
        }
    }

    pub fn push_event(&mut self, kind: EventKind) {
        self.events.push(TraceEvent { at_index: self.records.len() - 1, kind });
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("trace holds at least the start point")
    }

    pub fn count_events(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.kind.name() == name).count()
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in &self.records {
            lo = lo.min(r.point.lambda);
            hi = hi.max(r.point.lambda);
        }
        (lo, hi)
    }
}
