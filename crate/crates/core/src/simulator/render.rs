use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::assignment::AssignmentPlan;
use crate::control::TransportPlan;
use crate::divergence::axes_from_cov;
use crate::gmm::Mixture;
use crate::linalg::Vec2;
use crate::{Error, Result};

use super::pipeline::{RunReport, TraceRow};
use super::Arena;

const CANVAS: f64 = 640.0;
const MARGIN: f64 = 20.0;
const HEATMAP_CELLS: usize = 64;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Maps arena coordinates to SVG pixels, y pointing up.
struct View {
    lo: Vec2,
    hi: Vec2,
    scale: f64,
}

impl View {
    fn new(arena: &Arena) -> Self {
        let (lo, hi) = (arena.lo(), arena.hi());
        let span = (hi - lo).max();
        View {
            lo,
            hi,
            scale: (CANVAS - 2.0 * MARGIN) / span,
        }
    }

    fn px(&self, p: &Vec2) -> (f64, f64) {
        (
            MARGIN + (p.x - self.lo.x) * self.scale,
            CANVAS - MARGIN - (p.y - self.lo.y) * self.scale,
        )
    }

    fn header(&self, out: &mut String, run_id: &str, seed: u64) {
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
        );
        let _ = writeln!(out, "<!-- run {run_id} seed {seed} -->");
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let (x0, y0) = self.px(&Vec2::new(self.lo.x, self.hi.y));
        let (x1, y1) = self.px(&Vec2::new(self.hi.x, self.lo.y));
        let _ = writeln!(
            out,
            r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#888" stroke-dasharray="4 3"/>"##,
            x1 - x0,
            y1 - y0
        );
    }
}

/// Targets plus the 3-sigma ellipses of one agent's components, stroke width
/// growing with the component weight.
pub fn render_estimate_svg(report: &RunReport, agent: usize) -> Result<String> {
    let view = View::new(&report.arena);
    let mut out = String::new();
    view.header(&mut out, &report.run_id, report.seed);
    for p in report.targets.points() {
        let (x, y) = view.px(p);
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.6" fill="black"/>"#);
    }
    for c in report.estimates[agent].components() {
        let axes = axes_from_cov(&c.cov)?;
        let (x, y) = view.px(&c.mean);
        let rx = 3.0 * axes.sigma_major.sqrt() * view.scale;
        let ry = 3.0 * axes.sigma_minor.sqrt() * view.scale;
        let _ = writeln!(
            out,
            r##"<ellipse cx="{x:.2}" cy="{y:.2}" rx="{rx:.2}" ry="{ry:.2}" transform="rotate({:.3} {x:.2} {y:.2})" fill="none" stroke="#c0392b" stroke-width="{:.2}"/>"##,
            -axes.theta.to_degrees(),
            0.5 + 12.0 * c.weight
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Heatmap of the final collective QoS with start points, paths and final
/// poses of the agents.
pub fn render_qos_svg(report: &RunReport) -> Result<String> {
    let view = View::new(&report.arena);
    let qos = report.final_qos()?;
    let mut out = String::new();
    view.header(&mut out, &report.run_id, report.seed);

    let span = view.hi - view.lo;
    let cell = span / HEATMAP_CELLS as f64;
    let mut density = Vec::with_capacity(HEATMAP_CELLS * HEATMAP_CELLS);
    for r in 0..HEATMAP_CELLS {
        for c in 0..HEATMAP_CELLS {
            let centre = view.lo + Vec2::new((c as f64 + 0.5) * cell.x, (r as f64 + 0.5) * cell.y);
            density.push(qos.pdf(&centre)?);
        }
    }
    let peak = density.iter().copied().fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    for r in 0..HEATMAP_CELLS {
        for c in 0..HEATMAP_CELLS {
            let level = density[r * HEATMAP_CELLS + c] / peak;
            if level < 0.01 {
                continue;
            }
            let corner = view.lo + Vec2::new(c as f64 * cell.x, (r + 1) as f64 * cell.y);
            let (x, y) = view.px(&corner);
            let shade = |full: f64| (255.0 - level * (255.0 - full)).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="rgb({},{},{})"/>"#,
                cell.x * view.scale,
                cell.y * view.scale,
                shade(30.0),
                shade(90.0),
                shade(200.0)
            );
        }
    }

    for (i, plan) in report.transports.iter().enumerate() {
        let stride = (plan.trajectory.samples.len() / 200).max(1);
        let mut points = String::new();
        for s in plan.trajectory.samples.iter().step_by(stride).chain(std::iter::once(plan.trajectory.last())) {
            let (x, y) = view.px(&s.state.position);
            let _ = write!(points, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#555" stroke-width="1"/>"##,
            points.trim_end()
        );
        let (sx, sy) = view.px(&report.initial[i].position);
        let _ = writeln!(
            out,
            r##"<circle cx="{sx:.2}" cy="{sy:.2}" r="4" fill="none" stroke="#555" stroke-width="1.5"/>"##
        );
        let pose = &report.final_poses[i];
        let (fx, fy) = view.px(&pose.position);
        let tip = pose.position + Vec2::new(pose.heading.cos(), pose.heading.sin()) * (12.0 / view.scale);
        let (tx, ty) = view.px(&tip);
        let _ = writeln!(out, r##"<circle cx="{fx:.2}" cy="{fy:.2}" r="5" fill="#e67e22" stroke="black"/>"##);
        let _ = writeln!(
            out,
            r##"<line x1="{fx:.2}" y1="{fy:.2}" x2="{tx:.2}" y2="{ty:.2}" stroke="black" stroke-width="2"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" font-family="sans-serif">{}</text>"#,
            fx + 7.0,
            fy - 7.0,
            i
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// `costs.csv`: one row per agent, one column per region.
pub fn write_costs_csv(path: &Path, costs: &[Vec<f64>]) -> Result<PathBuf> {
    let mut out = String::new();
    for row in costs {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write(path, out)
}

/// `plan.json`: `{"agent": region}`.
pub fn write_plan(path: &Path, plan: &AssignmentPlan) -> Result<PathBuf> {
    write(path, serde_json::to_string_pretty(&plan.to_map())? + "\n")
}

/// `gmm_agent<i>.json` for every agent, tagged with the run.
pub fn write_estimates(dir: &Path, run_id: &str, seed: u64, estimates: &[Mixture]) -> Result<Vec<PathBuf>> {
    estimates
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut value = serde_json::to_value(m)?;
            if let Some(obj) = value.as_object_mut() {
                obj.insert("run_id".into(), run_id.into());
                obj.insert("seed".into(), seed.into());
                obj.insert("agent".into(), i.into());
            }
            write(&dir.join(format!("gmm_agent{i}.json")), serde_json::to_string_pretty(&value)? + "\n")
        })
        .collect()
}

/// `trajectories.csv`: `agent,t,x,y,heading,speed,u1,u2`.
pub fn write_trajectories_csv(path: &Path, plans: &[TransportPlan]) -> Result<PathBuf> {
    let mut out = String::from("agent,t,x,y,heading,speed,u1,u2\n");
    for (i, plan) in plans.iter().enumerate() {
        for s in &plan.trajectory.samples {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{}",
                s.t, s.state.position.x, s.state.position.y, s.state.heading, s.state.speed, s.input[0], s.input[1]
            );
        }
    }
    write(path, out)
}

/// Consensus trace: `iteration,component,stream,round,node,y0,y1,...`.
pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<PathBuf> {
    let mut out = String::from("iteration,component,stream,round,node,y\n");
    for r in rows {
        let ys: Vec<String> = r.y.iter().map(f64::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration,
            r.component,
            r.stream,
            r.round,
            r.node,
            ys.join(";")
        );
    }
    write(path, out)
}

/// Writes every artifact of a run into `dir`, creating it if needed.
pub fn write_artifacts(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![
        write(&dir.join("metrics.json"), serde_json::to_string_pretty(&report.metrics)? + "\n")?,
        write_plan(&dir.join("plan.json"), &report.plan)?,
        write_costs_csv(&dir.join("costs.csv"), &report.costs)?,
        write_trajectories_csv(&dir.join("trajectories.csv"), &report.transports)?,
        write(&dir.join("estimate.svg"), render_estimate_svg(report, 0)?)?,
        write(&dir.join("qos.svg"), render_qos_svg(report)?)?,
    ];
    files.extend(write_estimates(dir, &report.run_id, report.seed, &report.estimates)?);
    if !report.trace.is_empty() {
        files.push(write_trace_csv(&dir.join("trace.csv"), &report.trace)?);
    }
    Ok(files)
}
