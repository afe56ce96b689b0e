//! Run directories: per-leg trajectory CSVs, the run summary, and the
//! aggregated report recomputed from the CSVs.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tubenav::exact::{to_f64, Rational};
use tubenav::navigator::{TailStats, TransitionResult, TubeStats};
use tubenav::scenario::DIM;

/// Slack on the tube radii for integration error.
pub const TUBE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub leg: usize,
    /// `leg` until the duration has elapsed, `tail` afterwards.
    pub phase: String,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub x_nom: f64,
    pub y_nom: f64,
    pub vx_nom: f64,
    pub vy_nom: f64,
    pub ux: f64,
    pub uy: f64,
    pub ux_nom: f64,
    pub uy_nom: f64,
    pub dx: f64,
    pub dy: f64,
    pub pos_dev: f64,
    pub vel_dev: f64,
    pub r_e: f64,
    pub r_v: f64,
    pub v_max: f64,
    pub u_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegRecord {
    pub source: String,
    pub dest: String,
    pub start_time: f64,
    pub duration: Rational,
    pub feasible: bool,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
    pub tube: TubeStats,
    pub tail: TailStats,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub disturbance: String,
    pub verdict: String,
    pub accepted: bool,
    pub complete: bool,
    pub abort: Option<String>,
    pub planned_run: Vec<(String, Rational)>,
    pub realized_run: Vec<(Option<String>, Rational)>,
    pub r_e: f64,
    pub r_v: f64,
    pub legs: Vec<LegRecord>,
}

pub fn leg_rows(
    leg: usize,
    r: &TransitionResult<DIM>,
    r_e: f64,
    r_v: f64,
    v_max: f64,
    u_max: f64,
) -> Vec<TrajectoryRow> {
    let duration = to_f64(&r.duration);
    r.log
        .iter()
        .map(|row| TrajectoryRow {
            t: r.start_time + row.t,
            leg,
            phase: if row.t <= duration + 1e-9 { "leg" } else { "tail" }.into(),
            x: row.pos[0],
            y: row.pos[1],
            vx: row.vel[0],
            vy: row.vel[1],
            x_nom: row.nominal_pos[0],
            y_nom: row.nominal_pos[1],
            vx_nom: row.nominal_vel[0],
            vy_nom: row.nominal_vel[1],
            ux: row.u[0],
            uy: row.u[1],
            ux_nom: row.u_nominal[0],
            uy_nom: row.u_nominal[1],
            dx: row.d[0],
            dy: row.d[1],
            pos_dev: (row.pos - row.nominal_pos).norm(),
            vel_dev: (row.vel - row.nominal_vel).norm(),
            r_e,
            r_v,
            v_max,
            u_max,
        })
        .collect()
}

pub fn write_rows(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegCheck {
    pub source: String,
    pub dest: String,
    pub samples: usize,
    pub max_position_deviation: f64,
    pub max_velocity_deviation: f64,
    pub tube_violations: usize,
    /// Recomputed values agree with the stored run summary.
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub verdict: String,
    pub makespan: Rational,
    pub legs: Vec<LegCheck>,
    pub tube_violations: usize,
    pub consistent: bool,
}

/// Recomputes tube containment from the CSVs, checks it against the run
/// summary and writes `report.json` and a single plot-ready `trajectory.csv`.
pub fn report(dir: &Path) -> Result<Report> {
    let path = dir.join("run.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let summary: RunSummary = serde_json::from_str(&text).context("parsing run.json")?;
    let mut all = Vec::new();
    let mut legs = Vec::new();
    for leg in &summary.legs {
        let rows = read_rows(&dir.join(&leg.file))?;
        if rows.is_empty() {
            bail!("{} has no rows", leg.file);
        }
        let max_p = rows.iter().map(|r| r.pos_dev).fold(0.0, f64::max);
        let max_v = rows.iter().map(|r| r.vel_dev).fold(0.0, f64::max);
        let violations = rows
            .iter()
            .filter(|r| r.pos_dev > r.r_e + TUBE_SLACK || r.vel_dev > r.r_v + TUBE_SLACK)
            .count();
        let consistent = violations == leg.tube.violations
            && (max_p - leg.tube.max_position_deviation).abs() <= 1e-9
            && (max_v - leg.tube.max_velocity_deviation).abs() <= 1e-9;
        legs.push(LegCheck {
            source: leg.source.clone(),
            dest: leg.dest.clone(),
            samples: rows.len(),
            max_position_deviation: max_p,
            max_velocity_deviation: max_v,
            tube_violations: violations,
            consistent,
        });
        all.extend(rows.into_iter().filter(|r| r.phase == "leg"));
    }
    write_rows(&dir.join("trajectory.csv"), &all)?;
    let report = Report {
        verdict: summary.verdict.clone(),
        makespan: summary.realized_run.last().map(|(_, t)| *t).unwrap_or_default(),
        tube_violations: legs.iter().map(|l| l.tube_violations).sum(),
        consistent: legs.iter().all(|l| l.consistent),
        legs,
    };
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}
