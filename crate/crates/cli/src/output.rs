//! Trace output: points file, events file and run summary. All floats use
//! Rust's shortest round-trip formatting, so reruns with the same
//! configuration and seed are byte-identical and parsing reproduces the
//! in-memory values exactly.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use pathtrace_core::{EventKind, Trace};

use crate::config::{event_counts, RunConfig};

pub struct OutputPaths {
    pub points: PathBuf,
    pub events: PathBuf,
    pub summary: PathBuf,
    pub fields: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        OutputPaths {
            points: dir.join("points.csv"),
            events: dir.join("events.csv"),
            summary: dir.join("summary.json"),
            fields: dir.join("fields.csv"),
        }
    }
}

/// Curve diagnostic written to the points file: the scalar unknown itself,
/// or the midpoint nodal value for FEM problems.
fn diagnostic(u: &nalgebra::DVector<f64>) -> (&'static str, f64) {
    if u.len() == 1 {
        ("u", u[0])
    } else {
        ("u_mid", u[u.len() / 2])
    }
}

fn payload_of(kind: &EventKind) -> String {
    match kind {
        EventKind::StepRejectedAngle { cos, c_min } => format!("cos={cos};c_min={c_min}"),
        EventKind::StepRejectedDistance { du, dlambda } => format!("du={du};dlambda={dlambda}"),
        EventKind::StepRejectedSign { v_lambda_prev, v_lambda_new } => {
            format!("v_lambda_prev={v_lambda_prev};v_lambda_new={v_lambda_new}")
        }
        EventKind::VerticalTpApplied { lambda_from, lambda_to } => {
            format!("lambda_from={lambda_from};lambda_to={lambda_to}")
        }
        EventKind::HorizontalTpApplied { splice_gap } => format!("splice_gap={splice_gap}"),
        EventKind::BifurcationPassed { separation } => format!("separation={separation}"),
        EventKind::BranchScan { solutions, delta, trend, skipped } => {
            let delta = match delta {
                Some(d) => format!("{d}"),
                None => "none".to_string(),
            };
            format!("solutions={solutions};delta={delta};trend={trend};skipped={skipped}")
        }
        EventKind::HExhausted => String::new(),
        EventKind::DirectionReversal { dot } => format!("dot={dot}"),
    }
}

pub fn render_points(trace: &Trace) -> String {
    let mut out = String::new();
    let (diag_name, _) = diagnostic(&trace.records[0].point.u);
    let _ = writeln!(out, "index,lambda,{diag_name},v_lambda,h,iters");
    for (i, r) in trace.records.iter().enumerate() {
        let (_, d) = diagnostic(&r.point.u);
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{}",
            r.point.lambda, d, r.tangent.v_lambda, r.h, r.iterations
        );
    }
    out
}

pub fn render_events(trace: &Trace) -> String {
    let mut out = String::from("index,kind,payload\n");
    for e in &trace.events {
        let _ = writeln!(out, "{},{},{}", e.at_index, e.kind.name(), payload_of(&e.kind));
    }
    out
}

pub fn render_summary(cfg: &RunConfig, trace: &Trace) -> String {
    let (lambda_min, lambda_max) = trace.lambda_range();
    let mut map = serde_json::Map::new();
    map.insert("problem".into(), cfg.problem.clone().into());
    map.insert("mode".into(), cfg.mode.name().into());
    map.insert("points".into(), trace.records.len().into());
    map.insert("termination".into(), trace.termination.reason().into());
    map.insert("completed".into(), trace.termination.is_stop_rule().into());
    map.insert("lambda_min".into(), lambda_min.into());
    map.insert("lambda_max".into(), lambda_max.into());
    let counts: serde_json::Map<String, serde_json::Value> = event_counts(trace)
        .into_iter()
        .map(|(k, v)| (k, serde_json::Value::from(v)))
        .collect();
    map.insert("event_counts".into(), counts.into());
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(map))
        .expect("summary is valid JSON");
    text.push('\n');
    text
}

fn render_fields(trace: &Trace, every: usize) -> String {
    let n = trace.records[0].point.u.len();
    let mut out = String::from("index,lambda");
    for j in 0..n {
        let _ = write!(out, ",u{j}");
    }
    out.push('\n');
    for (i, r) in trace.records.iter().enumerate() {
        if i % every != 0 && i + 1 != trace.records.len() {
            continue;
        }
        let _ = write!(out, "{i},{}", r.point.lambda);
        for v in r.point.u.iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Writes the points, events and summary files (and, when configured for a
/// FEM problem, the sampled full-field file).
pub fn write_trace(cfg: &RunConfig, trace: &Trace, paths: &OutputPaths) -> io::Result<()> {
    if let Some(dir) = paths.points.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&paths.points, render_points(trace))?;
    fs::write(&paths.events, render_events(trace))?;
    fs::write(&paths.summary, render_summary(cfg, trace))?;
    if let Some(every) = cfg.field_every {
        if trace.records[0].point.u.len() > 1 && every > 0 {
            fs::write(&paths.fields, render_fields(trace, every))?;
        }
    }
    Ok(())
}

/// Parses a points file back into `(lambda, diag, v_lambda, h, iters)` rows.
pub fn parse_points(text: &str) -> Vec<(f64, f64, f64, f64, usize)> {
    text.lines()
        .skip(1)
        .map(|line| {
            let mut it = line.split(',');
            let _idx: usize = it.next().unwrap().parse().unwrap();
            let lambda: f64 = it.next().unwrap().parse().unwrap();
            let diag: f64 = it.next().unwrap().parse().unwrap();
            let v_lambda: f64 = it.next().unwrap().parse().unwrap();
            let h: f64 = it.next().unwrap().parse().unwrap();
            let iters: usize = it.next().unwrap().parse().unwrap();
            (lambda, diag, v_lambda, h, iters)
        })
        .collect()
}
