use std::fmt::Write;

use super::{Frame, SimLog};
use crate::safety::OccupancyGrid2D;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per macro-step.
pub fn log_csv(log: &SimLog) -> String {
    let mut out = String::from(
        "step,time,b_low,b_high,beta,u1_min_start,u2_min_start,u1_max_start,u2_max_start,\
         u1_min_end,u2_min_end,u1_max_end,u2_max_end,v_start,tube_cells,detection,hit_time,\
         acceleration,reason,ego_x,ego_y,ego_theta,ego_v,human_x,human_y,human_theta,human_v,\
         dist_to_line,separation,containment_checked,containment_violations\n",
    );
    for r in &log.steps {
        let e = &r.endpoints;
        let reason = serde_json::to_value(r.command.reason).expect("serializes");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.time,
            opt(r.belief.map(|b| b[0])),
            opt(r.belief.map(|b| b[1])),
            r.beta,
            e.u_min_start[0],
            e.u_min_start[1],
            e.u_max_start[0],
            e.u_max_start[1],
            e.u_min_end[0],
            e.u_min_end[1],
            e.u_max_end[0],
            e.u_max_end[1],
            r.key.v_start,
            r.tube_cells,
            r.detection,
            opt(r.hit_time),
            r.command.acceleration,
            reason.as_str().unwrap_or_default(),
            r.ego.x,
            r.ego.y,
            r.ego.theta,
            r.ego.v,
            r.human.x,
            r.human.y,
            r.human.theta,
            r.human.v,
            r.dist_to_line,
            r.separation,
            r.containment_checked,
            r.containment_violations,
        );
    }
    out
}

/// `step,time,b_low,b_high,beta`; belief columns are empty when confidence is off.
pub fn belief_csv(log: &SimLog) -> String {
    let mut out = String::from("step,time,b_low,b_high,beta\n");
    for r in &log.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.step,
            r.time,
            opt(r.belief.map(|b| b[0])),
            opt(r.belief.map(|b| b[1])),
            r.beta
        );
    }
    out
}

/// World-to-picture mapping: y up, 8 px per metre, fitted around `bounds`.
struct View {
    min: [f64; 2],
    max: [f64; 2],
    scale: f64,
}

impl View {
    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        ((p[0] - self.min[0]) * self.scale, (self.max[1] - p[1]) * self.scale)
    }

    fn size(&self) -> (f64, f64) {
        (
            (self.max[0] - self.min[0]) * self.scale,
            (self.max[1] - self.min[1]) * self.scale,
        )
    }
}

fn cells(out: &mut String, view: &View, g: &OccupancyGrid2D, fill: &str) {
    let w = g.cell * view.scale;
    for (i, j) in g.occupied() {
        let c = g.center(i, j);
        let (x, y) = view.px([c[0] - 0.5 * g.cell, c[1] + 0.5 * g.cell]);
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{w:.2}" fill="{fill}"/>"#
        );
    }
}

fn svg_open(out: &mut String, view: &View) {
    let (w, h) = view.size();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

/// Occupancy grid alone, e.g. a tube's position footprint.
pub fn occupancy_svg(g: &OccupancyGrid2D) -> String {
    let view = View {
        min: g.origin.map(|o| o - 0.5 * g.cell),
        max: [
            g.origin[0] + (g.nx as f64 - 0.5) * g.cell,
            g.origin[1] + (g.ny as f64 - 0.5) * g.cell,
        ],
        scale: 8.0,
    };
    let mut out = String::new();
    svg_open(&mut out, &view);
    cells(&mut out, &view, g, "#3a6ea5");
    out.push_str("</svg>\n");
    out
}

/// One simulation step: collision set, tube footprint, both agents, the
/// ego's nominal path and the stop line.
pub fn frame_svg(frame: &Frame<'_>) -> String {
    let r = frame.record;
    let c = &frame.collision_set.grid;
    let mut min = [r.ego.x.min(r.human.x), r.ego.y.min(r.human.y)];
    let mut max = [r.ego.x.max(r.human.x), r.ego.y.max(r.human.y)];
    if c.nx > 0 && c.ny > 0 {
        min = [min[0].min(c.origin[0]), min[1].min(c.origin[1])];
        max = [
            max[0].max(c.origin[0] + c.nx as f64 * c.cell),
            max[1].max(c.origin[1] + c.ny as f64 * c.cell),
        ];
    }
    let view = View {
        min: [min[0] - 10.0, min[1] - 10.0],
        max: [max[0] + 10.0, max[1] + 10.0],
        scale: 8.0,
    };
    let mut out = String::new();
    svg_open(&mut out, &view);
    cells(&mut out, &view, c, "#f4c7c3");
    cells(&mut out, &view, frame.footprint, "#d9534f");

    let (s, co) = frame.lane.heading.sin_cos();
    let line_at = [
        frame.lane.origin[0] + frame.stop_line * co,
        frame.lane.origin[1] + frame.stop_line * s,
    ];
    let a = view.px([line_at[0] - 4.0 * s, line_at[1] + 4.0 * co]);
    let b = view.px([line_at[0] + 4.0 * s, line_at[1] - 4.0 * co]);
    let _ = writeln!(
        out,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="3"/>"#,
        a.0, a.1, b.0, b.1
    );

    let pts: Vec<String> = frame
        .nominal
        .states
        .iter()
        .map(|s| {
            let (x, y) = view.px([s.x, s.y]);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{}" stroke-dasharray="4 3"/>"#,
        pts.join(" "),
        if r.detection { "#d9534f" } else { "#5cb85c" }
    );
    for (agent, fill) in [(&r.ego, "#337ab7"), (&r.human, "#f0ad4e")] {
        let (x, y) = view.px([agent.x, agent.y]);
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="6" fill="{fill}"/>"#);
    }
    let _ = writeln!(
        out,
        r#"<text x="8" y="18" font-family="monospace" font-size="14">t={:.1}s beta={:.3} {:?} a={:.2}</text>"#,
        r.time, r.beta, r.command.reason, r.command.acceleration
    );
    out.push_str("</svg>\n");
    out
}
