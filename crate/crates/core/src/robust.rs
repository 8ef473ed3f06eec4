//! The improved continuation driver: distance/angle/tangent-sign safeguards,
//! regime classification from deflation scans, and the vertical and
//! horizontal turning-point procedures.
//!
//! Every accepted step passes the safeguard checks; rejections shrink the
//! step length from the last converged point. Once the step length is
//! exhausted (or the corrector stalls at `h_min`), the next move is chosen
//! from the most recent branch scan: a single branch, far branches or
//! separating branches select the vertical method (a Newton step at a nudged
//! lambda plus a de-verticalized secant tangent); close, approaching
//! branches select the horizontal method (march the principal and the
//! detected secondary branch toward each other, splice the secondary in
//! reversed order, and continue along it away from the fold).

use rand::Rng;

use crate::bordered::nullspace_tangent;
use crate::deflation::{scan_branches, BranchScan, DeflationParams, Trend};
use crate::problems::{PointX, Problem, Tangent};
use crate::stepper::{adapt_h, mp_correct, newton_fixed_lambda, predict, StepControl, StepOutcome};
use crate::trace::{CurvePoint, EventKind, StopRule, Termination, Trace, TraceRecord};
use crate::{Error, Result};

/// Thresholds of the safeguard checks and the turning-point procedures.
#[derive(Debug, Clone)]
pub struct SafeguardParams {
    /// Cosine floor for consecutive tangents.
    pub c_min: f64,
    /// Largest accepted ||u_new - u_old||.
    pub delta_max_u: f64,
    /// Largest accepted |lambda_new - lambda_old|.
    pub delta_max_lambda: f64,
    /// Branch-proximity threshold of the horizontal regime.
    pub delta_crit: f64,
    /// Base increment; the vertical method's lambda nudge defaults to ten
    /// times this value.
    pub eps_lambda: f64,
    /// De-verticalization added to the secant tangent's lambda component.
    pub eps_lambda_star: f64,
    /// Lambda offset of the vertical method's Newton step.
    pub delta_lambda: f64,
    /// Branch-coincidence tolerance of the horizontal method.
    pub eps_diff: f64,
}

impl SafeguardParams {
    pub fn new(delta_max_lambda: f64, delta_max_u: f64, delta_crit: f64) -> Self {
        let eps_lambda = 1e-5;
        SafeguardParams {
            c_min: 0.95,
            delta_max_u,
            delta_max_lambda,
            delta_crit,
            eps_lambda,
            eps_lambda_star: 0.2,
            delta_lambda: 10.0 * eps_lambda,
            eps_diff: 1e-7,
        }
    }

    /// Guideline derivation from the spans of the difficult region:
    /// lambda span / 10, u span / 5 and u span / 4.
    pub fn from_difficult_region(u_span: f64, lambda_span: f64) -> Self {
        SafeguardParams::new(lambda_span / 10.0, u_span / 5.0, u_span / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.c_min > 0.0 && self.c_min < 1.0) {
            bad.push("c_min must lie in (0, 1)".to_string());
        }
        if self.delta_crit <= self.delta_max_u {
            bad.push(format!(
                "delta_crit ({}) must exceed delta_max_u ({}); guideline: u span / 4 vs u span / 5",
                self.delta_crit, self.delta_max_u
            ));
        }
        for (name, v) in [
            ("delta_max_u", self.delta_max_u),
            ("delta_max_lambda", self.delta_max_lambda),
            ("eps_lambda", self.eps_lambda),
            ("eps_lambda_star", self.eps_lambda_star),
            ("delta_lambda", self.delta_lambda),
            ("eps_diff", self.eps_diff),
        ] {
            if v <= 0.0 {
                bad.push(format!("{name} must be positive"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad.join("; ")))
        }
    }
}

/// Critical-point regime inferred from branch scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeKind {
    /// No scan information yet.
    Normal,
    /// Single branch, far branches, or separating branches.
    Vertical,
    /// A second branch closer than `delta_crit` and approaching.
    Horizontal,
}

#[derive(Debug, Clone)]
pub struct Regime {
    pub kind: RegimeKind,
    /// The scan that justified the classification.
    pub basis: Option<BranchScan>,
}

impl Regime {
    fn normal() -> Self {
        Regime { kind: RegimeKind::Normal, basis: None }
    }
}

/// Classifies a scan: horizontal only when a nearby branch exists inside
/// `delta_crit` and the distance is shrinking; everything else with scan
/// information is vertical.
pub fn classify_regime(scan: &BranchScan, sg: &SafeguardParams) -> RegimeKind {
    if scan.solutions.is_empty() {
        return RegimeKind::Normal;
    }
    match scan.delta {
        Some(delta) if delta < sg.delta_crit && scan.trend == Trend::Decreasing => {
            RegimeKind::Horizontal
        }
        _ => RegimeKind::Vertical,
    }
}

/// Reason a candidate point was rejected, in the order the criteria are
/// checked.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    DistanceU { du: f64, limit: f64 },
    DistanceLambda { dlambda: f64, limit: f64 },
    Sign { v_lambda_prev: f64, v_lambda_new: f64 },
    Angle { cos: f64, limit: f64 },
}

impl Rejection {
    fn event(&self) -> EventKind {
        match *self {
            Rejection::DistanceU { du, .. } => {
                EventKind::StepRejectedDistance { du, dlambda: 0.0 }
            }
            Rejection::DistanceLambda { dlambda, .. } => {
                EventKind::StepRejectedDistance { du: 0.0, dlambda }
            }
            Rejection::Sign { v_lambda_prev, v_lambda_new } => {
                EventKind::StepRejectedSign { v_lambda_prev, v_lambda_new }
            }
            Rejection::Angle { cos, limit } => EventKind::StepRejectedAngle { cos, c_min: limit },
        }
    }
}

/// Applies the safeguard criteria to a candidate step, returning the first
/// violated criterion: u distance, lambda distance, tangent-lambda sign
/// (only when `sign_active`), tangent angle (only when `angle_active`).
pub fn check_safeguards(
    prev: &CurvePoint,
    cand: &CurvePoint,
    sg: &SafeguardParams,
    angle_active: bool,
    sign_active: bool,
) -> Option<Rejection> {
    let du = (&cand.point.u - &prev.point.u).norm();
    if du > sg.delta_max_u {
        return Some(Rejection::DistanceU { du, limit: sg.delta_max_u });
    }
    let dlambda = (cand.point.lambda - prev.point.lambda).abs();
    if dlambda > sg.delta_max_lambda {
        return Some(Rejection::DistanceLambda { dlambda, limit: sg.delta_max_lambda });
    }
    if sign_active && cand.tangent.v_lambda * prev.tangent.v_lambda < 0.0 {
        return Some(Rejection::Sign {
            v_lambda_prev: prev.tangent.v_lambda,
            v_lambda_new: cand.tangent.v_lambda,
        });
    }
    if angle_active {
        let cos = cand.tangent.dot(&prev.tangent);
        if cos < sg.c_min {
            return Some(Rejection::Angle { cos, limit: sg.c_min });
        }
    }
    None
}

/// Vertical turning point method.
///
/// From the blocked point, Newton-solve at lambda nudged by `delta_lambda`
/// in the direction of travel, approximate the tangent at the new point by
/// the secant, and tilt its lambda component by `eps_lambda_star` so the
/// resumed march cannot start vertical. A Newton failure is retried once
/// with half the nudge.
pub fn vertical_turning_point(
    p: &dyn Problem,
    x_i: &CurvePoint,
    sg: &SafeguardParams,
    tol_f: f64,
    newton_max_iters: usize,
) -> Result<(CurvePoint, usize)> {
    let sign = if x_i.tangent.v_lambda >= 0.0 { 1.0 } else { -1.0 };
    let mut last_err = Error::NewtonDidNotConverge { iterations: newton_max_iters };
    for nudge in [sg.delta_lambda, 0.5 * sg.delta_lambda] {
        let lambda_target = x_i.point.lambda + sign * nudge;
        match newton_fixed_lambda(p, &x_i.point.u, lambda_target, tol_f, newton_max_iters) {
            Ok((z_u, iters)) => {
                let w = Tangent::new(&z_u - &x_i.point.u, lambda_target - x_i.point.lambda)
                    .normalized();
                let tilted = Tangent::new(
                    w.v_u.clone(),
                    w.v_lambda + sign * sg.eps_lambda_star,
                )
                .normalized();
                let z = CurvePoint { point: PointX::new(z_u, lambda_target), tangent: tilted };
                return Ok((z, iters));
            }
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// Outcome of the horizontal turning point method.
#[derive(Debug, Clone)]
pub enum HorizontalOutcome {
    /// Branches met (or froze); the reversed secondary segment was appended
    /// and stepping resumes from its end, heading away from the fold.
    Spliced { resume: CurvePoint, splice_gap: f64, splice_start: usize },
    /// Branch separation grew past `2 delta_crit`: a bifurcation point was
    /// passed, the secondary branch is discarded and stepping resumes from
    /// the principal head.
    BifurcationPassed { resume: CurvePoint, separation: f64 },
}

struct BranchState {
    cur: CurvePoint,
    ctl: StepControl,
    alive: bool,
}

enum Advance {
    Advanced(TraceRecord),
    Frozen,
}

/// One guarded Moore-Penrose advance of a branch. Distance and angle
/// violations shrink the branch step and retry; a corrector failure or a
/// still-violating candidate at `h_min` freezes the branch, as does a
/// tangent-lambda sign flip of an otherwise acceptable candidate.
fn advance_branch(
    p: &dyn Problem,
    branch: &mut BranchState,
    sg: &SafeguardParams,
    events: &mut Vec<EventKind>,
) -> Advance {
    loop {
        let pred = predict(&branch.cur.point, &branch.cur.tangent, branch.ctl.h);
        match mp_correct(p, &pred, &branch.cur.tangent, &branch.ctl) {
            StepOutcome::Converged { point, tangent, iterations } => {
                let cand = CurvePoint { point, tangent };
                if let Some(rej) = check_safeguards(&branch.cur, &cand, sg, true, false) {
                    events.push(rej.event());
                    if branch.ctl.h <= branch.ctl.h_min {
                        branch.alive = false;
                        return Advance::Frozen;
                    }
                    branch.ctl.h = (branch.ctl.h * branch.ctl.h_dec).max(branch.ctl.h_min);
                    continue;
                }
                if cand.tangent.v_lambda * branch.cur.tangent.v_lambda <= 0.0 {
                    // Crossed the fold: keep the last good point as the
                    // branch's final point.
                    branch.alive = false;
                    return Advance::Frozen;
                }
                let record = TraceRecord {
                    point: cand.point.clone(),
                    tangent: cand.tangent.clone(),
                    h: branch.ctl.h,
                    iterations,
                };
                branch.ctl = adapt_h(&branch.ctl, iterations, true);
                branch.cur = cand;
                return Advance::Advanced(record);
            }
            outcome => {
                if branch.ctl.h <= branch.ctl.h_min {
                    branch.alive = false;
                    return Advance::Frozen;
                }
                branch.ctl = adapt_h(&branch.ctl, outcome.iterations(), false);
            }
        }
    }
}

/// Horizontal turning point method.
///
/// `scan` must hold a secondary solution within `delta_crit` of the current
/// point `x_i` (at the same lambda). The principal branch keeps appending to
/// `trace`; the secondary branch accumulates separately and is spliced in
/// reversed order with travel-direction tangents once the branches coincide
/// within `eps_diff` or both freeze at the fold.
pub fn horizontal_turning_point<R: Rng + ?Sized>(
    p: &dyn Problem,
    x_i: &CurvePoint,
    scan: &BranchScan,
    trace: &mut Trace,
    ctl: &StepControl,
    sg: &SafeguardParams,
    stop: &StopRule,
    rng: &mut R,
) -> Result<HorizontalOutcome> {
    let current = scan
        .solutions
        .first()
        .ok_or_else(|| Error::InvalidConfig("horizontal method needs a scan with solutions".into()))?;
    let y_u = scan.solutions[1..]
        .iter()
        .min_by(|a, b| (*a - current).norm().total_cmp(&(*b - current).norm()))
        .ok_or_else(|| Error::InvalidConfig("horizontal method needs a secondary solution".into()))?
        .clone();
    let y_point = PointX::new(y_u, scan.lambda);

    // Step 1: secondary tangent, oriented so the secondary marches toward
    // the fold (same lambda direction as the principal).
    let a = p.jacobian(&y_point.u, y_point.lambda)?;
    let mut w = nullspace_tangent(&a, None, rng)?;
    if w.v_lambda * x_i.tangent.v_lambda < 0.0 {
        w = w.negated();
    }
    let w_start = w.clone();

    let mut principal =
        BranchState { cur: x_i.clone(), ctl: ctl.clone(), alive: true };
    let mut secondary = BranchState {
        cur: CurvePoint { point: y_point.clone(), tangent: w },
        ctl: ctl.clone(),
        alive: true,
    };

    let mut secondary_records: Vec<TraceRecord> = vec![TraceRecord {
        point: y_point,
        tangent: w_start.clone(),
        h: 0.0,
        iterations: 0,
    }];
    let mut pending_events: Vec<EventKind> = Vec::new();

    // Step 2: alternate advances, principal first.
    while principal.cur.point.dist(&secondary.cur.point) > sg.eps_diff
        && (principal.alive || secondary.alive)
    {
        if trace.records.len() + secondary_records.len() >= stop.max_points {
            break;
        }
        if principal.alive {
            if stop.lambda_out_of_range(principal.cur.point.lambda) {
                principal.alive = false;
            } else {
                match advance_branch(p, &mut principal, sg, &mut pending_events) {
                    Advance::Advanced(rec) => {
                        for kind in pending_events.drain(..) {
                            trace.push_event(kind);
                        }
                        trace.records.push(rec);
                    }
                    Advance::Frozen => {
                        for kind in pending_events.drain(..) {
                            trace.push_event(kind);
                        }
                    }
                }
            }
        }
        if secondary.alive {
            if stop.lambda_out_of_range(secondary.cur.point.lambda) {
                secondary.alive = false;
            } else {
                match advance_branch(p, &mut secondary, sg, &mut pending_events) {
                    Advance::Advanced(rec) => {
                        for kind in pending_events.drain(..) {
                            trace.push_event(kind);
                        }
                        secondary_records.push(rec);
                    }
                    Advance::Frozen => {
                        for kind in pending_events.drain(..) {
                            trace.push_event(kind);
                        }
                    }
                }
            }
        }
        let separation = (&principal.cur.point.u - &secondary.cur.point.u).norm();
        if separation >= 2.0 * sg.delta_crit {
            // Passed over a bifurcation point: drop the secondary branch and
            // keep following the principal one.
            return Ok(HorizontalOutcome::BifurcationPassed {
                resume: principal.cur,
                separation,
            });
        }
    }

    // Step 3: flip the secondary points onto the main branch. Tangents are
    // negated so every stored tangent points along the direction of travel
    // of the merged curve; the resumed tangent is -w at the detection point.
    let splice_gap = principal.cur.point.dist(&secondary.cur.point);
    secondary_records.reverse();
    for rec in &mut secondary_records {
        rec.tangent = rec.tangent.negated();
        rec.h = 0.0;
    }
    let resume = CurvePoint {
        point: secondary_records.last().expect("secondary holds its start point").point.clone(),
        tangent: w_start.negated(),
    };
    let splice_start = trace.records.len();
    trace.records.extend(secondary_records);
    Ok(HorizontalOutcome::Spliced { resume, splice_gap, splice_start })
}

/// The improved driver: standard Moore-Penrose stepping with periodic
/// branch scans, safeguard checks with step reduction, and the two
/// turning-point procedures on step-length exhaustion or stall.
pub fn trace_improved<R: Rng + ?Sized>(
    p: &dyn Problem,
    start: &CurvePoint,
    ctl0: &StepControl,
    sg: &SafeguardParams,
    defl: &DeflationParams,
    stop: &StopRule,
    rng: &mut R,
) -> Trace {
    /// Consecutive corrector failures at `h_min` that count as a stall.
    const STALL_FAILURES: usize = 3;

    let mut trace = Trace::new(start);
    let mut ctl = ctl0.clone();
    let mut cur = start.clone();
    let mut regime = Regime::normal();
    let mut last_scan: Option<BranchScan> = None;
    let mut accepted_since_scan = 0usize;
    let mut angle_off_steps = 0usize;
    let mut hmin_failures = 0usize;

    macro_rules! run_scan {
        () => {{
            let scan = scan_branches(p, &cur, last_scan.as_ref(), defl, ctl.tol_f);
            trace.push_event(EventKind::BranchScan {
                solutions: scan.solutions.len(),
                delta: scan.delta,
                trend: scan.trend.name(),
                skipped: scan.solutions.is_empty(),
            });
            let kind = classify_regime(&scan, sg);
            last_scan = Some(scan.clone());
            accepted_since_scan = 0;
            regime = Regime { kind, basis: Some(scan) };
        }};
    }

    loop {
        if trace.records.len() >= stop.max_points {
            trace.termination = Termination::MaxPoints;
            return trace;
        }
        if stop.lambda_out_of_range(cur.point.lambda) {
            trace.termination = Termination::LambdaOutOfRange;
            return trace;
        }

        // Once a scan has sighted another branch within twice the critical
        // distance, rescan every accepted step: a severe fold or cusp can
        // otherwise be crossed entirely between two periodic scans, and the
        // horizontal method needs the branches classified while the current
        // point is still clearly on its own side.
        let near_branch = last_scan
            .as_ref()
            .and_then(|s| s.delta)
            .is_some_and(|d| d < 2.0 * sg.delta_crit);
        let effective_period = if near_branch { 1 } else { defl.scan_period };
        if accepted_since_scan >= effective_period {
            run_scan!();
            if regime.kind == RegimeKind::Horizontal {
                match dispatch_horizontal(
                    p, &cur, &regime, &mut trace, &ctl, sg, defl, stop, rng,
                ) {
                    Ok(resume) => {
                        cur = resume;
                        regime = Regime::normal();
                        last_scan = None;
                        accepted_since_scan = 0;
                        hmin_failures = 0;
                        angle_off_steps = 0;
                    }
                    Err(termination) => {
                        trace.termination = termination;
                        return trace;
                    }
                }
                continue;
            }
        }

        let pred = predict(&cur.point, &cur.tangent, ctl.h);
        match mp_correct(p, &pred, &cur.tangent, &ctl) {
            StepOutcome::Converged { point, tangent, iterations } => {
                hmin_failures = 0;
                let cand = CurvePoint { point, tangent };
                let sign_active = regime.kind == RegimeKind::Vertical;
                let angle_active = angle_off_steps == 0;
                match check_safeguards(&cur, &cand, sg, angle_active, sign_active) {
                    None => {
                        trace.records.push(TraceRecord {
                            point: cand.point.clone(),
                            tangent: cand.tangent.clone(),
                            h: ctl.h,
                            iterations,
                        });
                        ctl = adapt_h(&ctl, iterations, true);
                        angle_off_steps = angle_off_steps.saturating_sub(1);
                        accepted_since_scan += 1;
                        cur = cand;
                    }
                    Some(rej) => {
                        trace.push_event(rej.event());
                        if ctl.h <= ctl.h_min {
                            match dispatch_turning_point(
                                p,
                                &mut cur,
                                &mut regime,
                                &mut last_scan,
                                &mut trace,
                                &mut ctl,
                                sg,
                                defl,
                                stop,
                                rng,
                                &mut angle_off_steps,
                                &mut accepted_since_scan,
                            ) {
                                Ok(()) => {
                                    hmin_failures = 0;
                                }
                                Err(termination) => {
                                    trace.termination = termination;
                                    return trace;
                                }
                            }
                        } else {
                            ctl.h = (ctl.h * ctl.h_dec).max(ctl.h_min);
                        }
                    }
                }
            }
            outcome => {
                if ctl.h <= ctl.h_min {
                    hmin_failures += 1;
                    if hmin_failures >= STALL_FAILURES {
                        match dispatch_turning_point(
                            p,
                            &mut cur,
                            &mut regime,
                            &mut last_scan,
                            &mut trace,
                            &mut ctl,
                            sg,
                            defl,
                            stop,
                            rng,
                            &mut angle_off_steps,
                            &mut accepted_since_scan,
                        ) {
                            Ok(()) => {
                                hmin_failures = 0;
                            }
                            Err(termination) => {
                                trace.termination = termination;
                                return trace;
                            }
                        }
                    }
                } else {
                    ctl = adapt_h(&ctl, outcome.iterations(), false);
                }
            }
        }
    }
}

/// Runs the horizontal method from the driver and folds its outcome into
/// the trace; returns the resume point.
#[allow(clippy::too_many_arguments)]
fn dispatch_horizontal<R: Rng + ?Sized>(
    p: &dyn Problem,
    cur: &CurvePoint,
    regime: &Regime,
    trace: &mut Trace,
    ctl: &StepControl,
    sg: &SafeguardParams,
    defl: &DeflationParams,
    stop: &StopRule,
    rng: &mut R,
) -> std::result::Result<CurvePoint, Termination> {
    let scan = regime.basis.as_ref().expect("horizontal regime always has a scan");
    match horizontal_turning_point(p, cur, scan, trace, ctl, sg, stop, rng) {
        Ok(HorizontalOutcome::Spliced { resume, splice_gap, splice_start }) => {
            trace.events.push(crate::trace::TraceEvent {
                at_index: splice_start,
                kind: EventKind::HorizontalTpApplied { splice_gap },
            });
            Ok(resume)
        }
        Ok(HorizontalOutcome::BifurcationPassed { resume, separation }) => {
            trace.push_event(EventKind::BifurcationPassed { separation });
            Ok(resume)
        }
        Err(_) => {
            // Secondary tangent unavailable: fall back to the vertical
            // method from the principal point.
            match vertical_turning_point(p, cur, sg, ctl.tol_f, defl.newton_max_iters) {
                Ok((z, iters)) => {
                    trace.records.push(TraceRecord {
                        point: z.point.clone(),
                        tangent: z.tangent.clone(),
                        h: 0.0,
                        iterations: iters,
                    });
                    trace.push_event(EventKind::VerticalTpApplied {
                        lambda_from: cur.point.lambda,
                        lambda_to: z.point.lambda,
                    });
                    Ok(z)
                }
                Err(e) => {
                    trace.push_event(EventKind::HExhausted);
                    Err(Termination::TurningPointFailed(e.to_string()))
                }
            }
        }
    }
}

/// Dispatches on step-length exhaustion or stall: refresh the scan at the
/// blocked point, then apply the method the classification selects.
#[allow(clippy::too_many_arguments)]
fn dispatch_turning_point<R: Rng + ?Sized>(
    p: &dyn Problem,
    cur: &mut CurvePoint,
    regime: &mut Regime,
    last_scan: &mut Option<BranchScan>,
    trace: &mut Trace,
    ctl: &mut StepControl,
    sg: &SafeguardParams,
    defl: &DeflationParams,
    stop: &StopRule,
    rng: &mut R,
    angle_off_steps: &mut usize,
    accepted_since_scan: &mut usize,
) -> std::result::Result<(), Termination> {
    let scan = scan_branches(p, cur, last_scan.as_ref(), defl, ctl.tol_f);
    trace.push_event(EventKind::BranchScan {
        solutions: scan.solutions.len(),
        delta: scan.delta,
        trend: scan.trend.name(),
        skipped: scan.solutions.is_empty(),
    });
    let kind = classify_regime(&scan, sg);
    *last_scan = Some(scan.clone());
    *accepted_since_scan = 0;
    *regime = Regime { kind, basis: Some(scan) };

    if kind == RegimeKind::Horizontal {
        let resume = dispatch_horizontal(p, cur, regime, trace, ctl, sg, defl, stop, rng)?;
        *cur = resume;
        *regime = Regime::normal();
        *last_scan = None;
        *accepted_since_scan = 0;
        *angle_off_steps = 0;
        return Ok(());
    }

    match vertical_turning_point(p, cur, sg, ctl.tol_f, defl.newton_max_iters) {
        Ok((z, iters)) => {
            trace.records.push(TraceRecord {
                point: z.point.clone(),
                tangent: z.tangent.clone(),
                h: 0.0,
                iterations: iters,
            });
            trace.push_event(EventKind::VerticalTpApplied {
                lambda_from: cur.point.lambda,
                lambda_to: z.point.lambda,
            });
            *cur = z;
            // Angle control stays off for exactly the first accepted step.
            *angle_off_steps = 1;
            *accepted_since_scan += 1;
            Ok(())
        }
        Err(e) => {
            trace.push_event(EventKind::HExhausted);
            Err(Termination::TurningPointFailed(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::AnalyticProblem;
    use crate::stepper::initial_tangent;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec1(u: f64) -> DVector<f64> {
        DVector::from_element(1, u)
    }

    fn cp(u: f64, lambda: f64, vu: f64, vl: f64) -> CurvePoint {
        CurvePoint {
            point: PointX::new(vec1(u), lambda),
            tangent: Tangent::new(vec1(vu), vl).normalized(),
        }
    }

    fn sg_reference() -> SafeguardParams {
        SafeguardParams::new(30.0, 1.6, 2.0)
    }

    #[test]
    fn safeguards_accept_slack_step() {
        let sg = SafeguardParams::new(30.0, 1.6, 2.0);
        let prev = cp(0.0, 0.0, 0.1, 0.995);
        let cand = cp(0.0, 0.05, 0.11, 0.994);
        assert_eq!(check_safeguards(&prev, &cand, &sg, true, true), None);
    }

    #[test]
    fn safeguards_reject_angle() {
        let sg = sg_reference();
        let prev = cp(0.0, 0.0, 0.0, 1.0);
        // cos with previous tangent = 0.90
        let angle = 0.90f64.acos();
        let cand = cp(0.0, 0.05, angle.sin(), angle.cos());
        match check_safeguards(&prev, &cand, &sg, true, true) {
            Some(Rejection::Angle { cos, .. }) => assert_relative_eq!(cos, 0.90, epsilon = 1e-12),
            other => panic!("expected angle rejection, got {other:?}"),
        }
    }

    #[test]
    fn safeguards_reject_sign_flip_only_when_active() {
        let sg = sg_reference();
        let prev = cp(0.0, 0.0, 0.1, 0.9);
        let cand = cp(0.0, 0.05, 0.1, -0.9);
        assert!(matches!(
            check_safeguards(&prev, &cand, &sg, false, true),
            Some(Rejection::Sign { .. })
        ));
        // Sign check inactive outside the vertical regime; the angle check
        // still catches the reversal here.
        assert!(matches!(
            check_safeguards(&prev, &cand, &sg, true, false),
            Some(Rejection::Angle { .. })
        ));
        assert_eq!(check_safeguards(&prev, &cand, &sg, false, false), None);
    }

    #[test]
    fn safeguards_order_distance_first() {
        let sg = sg_reference();
        let prev = cp(0.0, 0.0, 0.0, 1.0);
        // Violates both the u distance and the angle: the u distance wins.
        let cand = cp(5.0, 0.05, 1.0, 0.0);
        assert!(matches!(
            check_safeguards(&prev, &cand, &sg, true, true),
            Some(Rejection::DistanceU { .. })
        ));
    }

    #[test]
    fn vertical_tp_nudges_lambda_in_travel_direction() {
        let p = AnalyticProblem::from_id("fc").unwrap();
        let sg = sg_reference();
        // Start corner of the F_c curve: tangent straight up in lambda.
        let x = cp(50.0, 0.0, 0.0, 1.0);
        let (z, _) = vertical_turning_point(&p, &x, &sg, 1e-10, 30).unwrap();
        assert_relative_eq!(z.point.lambda, sg.delta_lambda, epsilon = 1e-15);
        let f = p.residual(&z.point.u, z.point.lambda).unwrap();
        assert!(f.norm() <= 1e-10);
        // Tilted tangent is never lambda-vertical.
        let floor = sg.eps_lambda_star / (1.0 + sg.eps_lambda_star);
        assert!(z.tangent.v_lambda >= floor - 1e-12, "v_lambda = {}", z.tangent.v_lambda);

        // Downward travel flips the nudge.
        let x_down = cp(50.0, 0.0, 0.0, -1.0);
        let (z_down, _) = vertical_turning_point(&p, &x_down, &sg, 1e-10, 30).unwrap();
        assert_relative_eq!(z_down.point.lambda, -sg.delta_lambda, epsilon = 1e-15);
        assert!(z_down.tangent.v_lambda <= -floor + 1e-12);
    }

    #[test]
    fn vertical_tp_retries_with_half_nudge() {
        // Just below the F_a fold: the full nudge overshoots lambda = 300
        // (no solution), the halved nudge stays below it and succeeds.
        let p = AnalyticProblem::from_id("fa").unwrap();
        let mut sg = sg_reference();
        sg.delta_lambda = 1e-4;
        let lambda_i: f64 = 300.0 - 0.75e-4;
        let u_i = ((100.0 - lambda_i / 3.0) / lambda_i.powi(3)).sqrt();
        let x = cp(u_i, lambda_i, -1e-3, 1.0);
        let (z, _) = vertical_turning_point(&p, &x, &sg, 1e-10, 40).unwrap();
        assert_relative_eq!(z.point.lambda, lambda_i + 0.5e-4, epsilon = 1e-12);
        assert!(p.residual(&z.point.u, z.point.lambda).unwrap().norm() <= 1e-10);
    }

    #[test]
    fn vertical_tp_fails_cleanly_when_no_solution_exists() {
        // F_a just below the fold, travelling upward: lambda + nudge has no
        // solution, and neither does the halved nudge.
        let p = AnalyticProblem::from_id("fa").unwrap();
        let mut sg = sg_reference();
        sg.delta_lambda = 1.0;
        let u = ((100.0 - 299.9999 / 3.0) / 299.9999f64.powi(3)).sqrt();
        let x = cp(u, 299.9999, -1e-6, 1.0);
        assert!(vertical_turning_point(&p, &x, &sg, 1e-10, 30).is_err());
    }

    /// Two crossing straight lines, as a product problem: the curve
    /// u = lambda (principal) and u = -lambda (secondary) intersect at the
    /// origin, a true bifurcation point.
    struct CrossingLines;
    impl Problem for CrossingLines {
        fn dim_u(&self) -> usize {
            1
        }
        fn label(&self) -> &str {
            "crossing_lines"
        }
        fn residual(&self, u: &DVector<f64>, lambda: f64) -> crate::Result<DVector<f64>> {
            Ok(vec1((u[0] - lambda) * (u[0] + lambda)))
        }
        fn jacobian(&self, u: &DVector<f64>, lambda: f64) -> crate::Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(1, 2, &[2.0 * u[0], -2.0 * lambda]))
        }
    }

    #[test]
    fn crossing_lines_escape_keeps_principal_branch() {
        let p = CrossingLines;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let start_lambda = -3.0;
        let x = PointX::new(vec1(start_lambda), start_lambda);
        let mut tangent = initial_tangent(&p, &x, 1.0, &mut rng).unwrap();
        if tangent.v_u[0] < 0.0 {
            tangent = tangent.negated();
        }
        let start = CurvePoint { point: x, tangent };
        let ctl = StepControl::reference(0.2);
        let sg = SafeguardParams::new(0.5, 0.5, 1.25);
        // Scan every accepted step: the toy's horizontal window around the
        // crossing is only a couple of steps wide.
        let defl = DeflationParams { scan_period: 1, ..DeflationParams::default() };
        let stop = StopRule { max_points: 400, lambda_min: Some(-4.0), lambda_max: Some(3.0) };
        let trace = trace_improved(&p, &start, &ctl, &sg, &defl, &stop, &mut rng);

        assert!(trace.count_events("bifurcation_passed") >= 1, "events: {:?}", trace.events);
        assert_eq!(trace.count_events("horizontal_tp_applied"), 0);
        // Every point of the whole trace stays on the principal line.
        for r in &trace.records {
            assert!(
                (r.point.u[0] - r.point.lambda).abs() <= 1e-6,
                "left the principal line at ({}, {})",
                r.point.u[0],
                r.point.lambda
            );
        }
        // And the trace actually crossed to the other side.
        assert!(trace.records.iter().any(|r| r.point.lambda > 1.0));
        assert!(trace.termination.is_stop_rule());
    }

    #[test]
    fn fa_improved_passes_the_fold_and_returns() {
        let p = AnalyticProblem::from_id("fa").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u0 = ((100.0 - 10.0 / 3.0) / 10.0f64.powi(3)).sqrt();
        let x = PointX::new(vec1(u0), 10.0);
        let tangent = initial_tangent(&p, &x, 1.0, &mut rng).unwrap();
        let start = CurvePoint { point: x, tangent };
        let ctl = StepControl::reference(0.5);
        let sg = sg_reference();
        let defl = DeflationParams::default();
        let stop = StopRule { max_points: 10_000, lambda_min: Some(2.0), lambda_max: Some(310.0) };
        let trace = trace_improved(&p, &start, &ctl, &sg, &defl, &stop, &mut rng);

        assert!(trace.termination.is_stop_rule(), "termination {:?}", trace.termination);
        assert!(trace.count_events("horizontal_tp_applied") >= 1);
        let max_lambda = trace.lambda_range().1;
        assert!(
            (299.99..=300.0).contains(&max_lambda),
            "max lambda along trace = {max_lambda}"
        );
        assert!(trace.records.iter().any(|r| r.point.u[0] > 0.01));
        assert!(trace.records.iter().any(|r| r.point.u[0] < -0.01));
        // No backtracking: u is strictly decreasing along the whole trace.
        for pair in trace.records.windows(2) {
            assert!(
                pair[1].point.u[0] < pair[0].point.u[0],
                "u not strictly decreasing: {} -> {}",
                pair[0].point.u[0],
                pair[1].point.u[0]
            );
        }
        // Residuals re-checked independently.
        for r in &trace.records {
            let f = p.residual(&r.point.u, r.point.lambda).unwrap();
            assert!(f.norm() <= 1e-7);
        }
    }
}
