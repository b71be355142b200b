//! File exports: labeled CSV tables, JSON sidecars, and a minimal static
//! SVG line plot for the sweep curves.
//!
//! Floats are written in exponent form (`{:e}`), which is deterministic, so
//! identical inputs produce byte-identical files.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::gain::GainMatrices;
use crate::network::GridCase;
use crate::opt::{OptSolution, SweepPoint};
use crate::sim::Trajectory;

fn fmt(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:e}")
    }
}

/// Channel labels for the gain table: outputs are `y:bus<id>` and
/// `z:<from>-<to>`, inputs `u:bus<id>` and `v:<from>-<to>`.
pub fn gains_csv(g: &GainMatrices, case: &GridCase) -> String {
    let m = case.num_gens();
    let mut line_labels = Vec::with_capacity(case.num_lines());
    for line in case.lines() {
        line_labels.push(format!(
            "{}-{}",
            case.buses()[line.from].id,
            case.buses()[line.to].id
        ));
    }
    let mut s = String::from("output");
    for bus in case.buses() {
        let _ = write!(s, ",u:bus{}", bus.id);
    }
    for label in &line_labels {
        let _ = write!(s, ",v:{label}");
    }
    s.push('\n');
    for i in 0..m {
        let _ = write!(s, "y:bus{}", case.buses()[i].id);
        for j in 0..g.inputs() {
            let _ = write!(s, ",{}", fmt(g.yu[(i, j)]));
        }
        for j in 0..g.lines() {
            let _ = write!(s, ",{}", fmt(g.yv[(i, j)]));
        }
        s.push('\n');
    }
    for (i, label) in line_labels.iter().enumerate() {
        let _ = write!(s, "z:{label}");
        for j in 0..g.inputs() {
            let _ = write!(s, ",{}", fmt(g.zu[(i, j)]));
        }
        for j in 0..g.lines() {
            let _ = write!(s, ",{}", fmt(g.zv[(i, j)]));
        }
        s.push('\n');
    }
    s
}

/// JSON sidecar of a gain run (the CSV stays byte-deterministic; timing
/// lives here).
pub fn gains_sidecar(
    g: &GainMatrices,
    case: &GridCase,
    rel_tol: f64,
    wall_seconds: f64,
) -> serde_json::Value {
    serde_json::json!({
        "tail_bound": g.tail_bound,
        "rel_tol": rel_tol,
        "wall_seconds": wall_seconds,
        "gens": case.num_gens(),
        "loads": case.num_loads(),
        "lines": case.num_lines(),
    })
}

/// Certified sweep curve: `zbar,mu,binding_row,margin`.
pub fn sweep_csv(curve: &[SweepPoint]) -> String {
    let mut s = String::from("zbar,mu,binding_row,margin\n");
    for p in curve {
        let row = p
            .binding_row
            .map(|r| r.to_string())
            .unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", fmt(p.zbar), fmt(p.mu), row, fmt(p.margin));
    }
    s
}

/// Certified frequency curve: `zbar,ybar`.
pub fn sweep_y_csv(curve: &[SweepPoint]) -> String {
    let mut s = String::from("zbar,ybar\n");
    for p in curve {
        let _ = writeln!(s, "{},{}", fmt(p.zbar), fmt(p.y_bound));
    }
    s
}

/// Empirical overlay points: `zbar,value`.
pub fn overlay_csv(header: &str, points: &[(f64, f64)]) -> String {
    let mut s = format!("zbar,{header}\n");
    for &(z, v) in points {
        let _ = writeln!(s, "{},{}", fmt(z), fmt(v));
    }
    s
}

/// Trajectory table: `t,y1..ym,z1..zl`.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let m = traj.peak_y.len();
    let l = traj.peak_z.len();
    let mut s = String::from("t");
    for i in 0..m {
        let _ = write!(s, ",y{}", i + 1);
    }
    for i in 0..l {
        let _ = write!(s, ",z{}", i + 1);
    }
    s.push('\n');
    for (k, &t) in traj.t.iter().enumerate() {
        let _ = write!(s, "{}", fmt(t));
        for i in 0..m {
            let _ = write!(s, ",{}", fmt(traj.y[k][i]));
        }
        for i in 0..l {
            let _ = write!(s, ",{}", fmt(traj.z[k][i]));
        }
        s.push('\n');
    }
    s
}

pub fn peaks_json(traj: &Trajectory) -> serde_json::Value {
    let py: Vec<f64> = traj.peak_y.iter().copied().collect();
    let pz: Vec<f64> = traj.peak_z.iter().copied().collect();
    serde_json::json!({ "peak_y": py, "peak_z": pz })
}

pub fn solution_json(sol: &OptSolution) -> serde_json::Value {
    let u: Vec<f64> = sol.ubar_star.iter().copied().collect();
    let z: Vec<f64> = sol.zbar_star.iter().copied().collect();
    serde_json::json!({
        "mu_star": sol.mu_star,
        "ubar_star": u,
        "zbar_star": z,
        "certificate": sol.certificate,
        "stats": {
            "iterations": sol.stats.iterations,
            "starts": sol.stats.starts,
            "min_margin": sol.stats.min_margin,
        },
    })
}

/// Per-bus maximum-disturbance table: `bus,kind,mu`.
pub fn per_bus_csv(case: &GridCase, bounds: &DVector<f64>) -> String {
    let mut s = String::from("bus,kind,mu\n");
    for (k, bus) in case.buses().iter().enumerate() {
        let kind = if bus.is_generator() {
            "gen"
        } else if bus.is_infinite() {
            "inf"
        } else {
            "load"
        };
        let mu = bounds[k];
        let text = if mu.is_finite() { fmt(mu) } else { "unbounded".to_string() };
        let _ = writeln!(s, "{},{kind},{text}", bus.id);
    }
    s
}

/// Debug dump of the Lur'e matrices, row-major, one section per matrix,
/// with a header row labeling the state blocks.
pub fn lure_matrices_csv(sys: &crate::lure::LureSystem) -> String {
    let d = &sys.dims;
    let mut cols = Vec::new();
    for k in 0..d.gens {
        cols.push(format!("x1_{k}"));
    }
    for k in 0..d.gens {
        cols.push(format!("x2_{k}"));
    }
    for k in 0..d.dyn_loads {
        cols.push(format!("x3_{k}"));
    }
    for k in 0..d.governors {
        cols.push(format!("x4_{k}"));
    }
    let mut s = String::new();
    let mut dump = |name: &str, m: &nalgebra::DMatrix<f64>, with_header: bool| {
        let _ = writeln!(s, "# {name} ({}x{})", m.nrows(), m.ncols());
        if with_header {
            let _ = writeln!(s, "{}", cols.join(","));
        }
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| fmt(m[(i, j)])).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
    };
    dump("A", &sys.a, true);
    dump("B_v", &sys.b_v, false);
    dump("B_u", &sys.b_u, false);
    dump("C_y", &sys.c_y, true);
    dump("C_z", &sys.c_z, true);
    s
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

pub struct PlotSeries<'a> {
    pub label: &'a str,
    pub points: &'a [(f64, f64)],
    pub color: &'a str,
    pub dashed: bool,
}

/// Minimal fixed-size line plot; enough for the sweep figures.
pub fn svg_plot(title: &str, xlabel: &str, ylabel: &str, series: &[PlotSeries]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const ML: f64 = 70.0; // left margin
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 55.0;

    let finite = |v: f64| v.is_finite();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for s in series {
        for &(x, y) in s.points {
            if finite(x) && finite(y) {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    if x0 >= x1 {
        x1 = x0 + 1.0;
    }
    if y0 >= y1 {
        y1 = y0 + 1.0;
    }
    y0 = y0.min(0.0);
    let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{tx}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>
"#,
        tx = W / 2.0,
    );
    // Axes and ticks.
    let _ = write!(
        svg,
        r#"<line x1="{ml}" y1="{hb}" x2="{wr}" y2="{hb}" stroke="black"/>
<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{hb}" stroke="black"/>
"#,
        ml = ML,
        mt = MT,
        hb = H - MB,
        wr = W - MR,
    );
    for k in 0..=5 {
        let xv = x0 + (x1 - x0) * k as f64 / 5.0;
        let yv = y0 + (y1 - y0) * k as f64 / 5.0;
        let _ = write!(
            svg,
            r#"<line x1="{x}" y1="{hb}" x2="{x}" y2="{hb2}" stroke="black"/>
<text x="{x}" y="{ty}" text-anchor="middle" font-family="sans-serif" font-size="11">{xv:.3}</text>
<line x1="{ml}" y1="{y}" x2="{ml2}" y2="{y}" stroke="black"/>
<text x="{tx}" y="{y2}" text-anchor="end" font-family="sans-serif" font-size="11">{yv:.3}</text>
"#,
            x = px(xv),
            hb = H - MB,
            hb2 = H - MB + 5.0,
            ty = H - MB + 18.0,
            ml = ML,
            ml2 = ML - 5.0,
            y = py(yv),
            tx = ML - 8.0,
            y2 = py(yv) + 4.0,
        );
    }
    let _ = write!(
        svg,
        r#"<text x="{cx}" y="{by}" text-anchor="middle" font-family="sans-serif" font-size="13">{xlabel}</text>
<text x="16" y="{cy}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {cy})">{ylabel}</text>
"#,
        cx = (ML + W - MR) / 2.0,
        by = H - 12.0,
        cy = (MT + H - MB) / 2.0,
    );

    for (si, s) in series.iter().enumerate() {
        let mut path = String::new();
        let mut pen_up = true;
        for &(x, y) in s.points {
            if !(finite(x) && finite(y)) {
                pen_up = true;
                continue;
            }
            let cmd = if pen_up { 'M' } else { 'L' };
            let _ = write!(path, "{cmd}{:.2} {:.2} ", px(x), py(y));
            pen_up = false;
        }
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = write!(
            svg,
            r#"<path d="{path}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>
<text x="{lx}" y="{ly}" font-family="sans-serif" font-size="12" fill="{color}">{label}</text>
"#,
            color = s.color,
            label = s.label,
            lx = ML + 12.0,
            ly = MT + 16.0 + 16.0 * si as f64,
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{solve_equilibrium, GridCase};

    #[test]
    fn gains_csv_layout() {
        let case = GridCase::smib(1.0, 1.2, 0.2, 0.8).unwrap();
        let eq = solve_equilibrium(&case).unwrap();
        let sys = crate::lure::build_lure(&case, &eq).unwrap();
        let g = crate::gain::linear_gains(&sys, 1e-4).unwrap();
        let csv = gains_csv(&g, &case);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "output,u:bus1,u:bus2,v:1-2");
        assert!(lines.next().unwrap().starts_with("y:bus1,"));
        assert!(lines.next().unwrap().starts_with("z:1-2,"));
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn lure_dump_sections() {
        let case = GridCase::smib(1.0, 1.2, 0.2, 0.8).unwrap();
        let eq = solve_equilibrium(&case).unwrap();
        let sys = crate::lure::build_lure(&case, &eq).unwrap();
        let dump = lure_matrices_csv(&sys);
        for name in ["# A (2x2)", "# B_v (2x1)", "# B_u (2x2)", "# C_y (1x2)", "# C_z (1x2)"] {
            assert!(dump.contains(name), "missing section {name}");
        }
        assert!(dump.contains("x1_0,x2_0"));
    }

    #[test]
    fn svg_contains_series() {
        let pts = vec![(0.0, 0.0), (1.0, 0.5), (2.0, 0.2)];
        let svg = svg_plot(
            "certified bound",
            "zbar (rad)",
            "mu (pu)",
            &[PlotSeries {
                label: "certified",
                points: &pts,
                color: "#1f77b4",
                dashed: false,
            }],
        );
        assert!(svg.contains("<path"));
        assert!(svg.contains("certified"));
        assert!(svg.starts_with("<svg"));
    }
}
