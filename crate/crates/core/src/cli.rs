//! Command-line front end: `gains | certify | maxdist | sweep | simulate`.
//!
//! Exit codes: 0 success (and certified, for `certify`), 1 not certified,
//! 2 input error, 3 numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Deserialize;

use crate::cert::check_cico;
use crate::error::{Error, ErrorClass, Result};
use crate::gain::{linear_gains, GainMatrices};
use crate::lure::{build_lure, LureSystem};
use crate::network::{parse_grid, solve_equilibrium, CaseFormat, Equilibrium, GridCase};
use crate::opt::{max_disturbance, sweep_zbar, DirectionMode, OptProblem};
use crate::report;
use crate::sim::{
    empirical_upper_bound, simulate, Disturbance, DisturbanceShape, PeakLimit, ScenarioFamily,
    SimSettings, Trajectory,
};

#[derive(Parser)]
#[command(
    name = "gridcert",
    about = "Certified disturbance bounds for power grids: gains, small-gain certificates, convex maximization, and validating simulation",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the element-wise L-infinity gain matrices of the linear block.
    Gains(GainsArgs),
    /// Check a user-supplied (ubar, zbar, ybar) certificate.
    Certify(CertifyArgs),
    /// Maximize the admissible disturbance magnitude.
    Maxdist(MaxdistArgs),
    /// Certified mu(zbar) curve with an empirical overlay.
    Sweep(SweepArgs),
    /// Nonlinear time-domain simulation of a scenario file.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Grid case file (JSON schema, see README).
    #[arg(long)]
    case: PathBuf,
    /// Output directory for report files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized scenario components.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tolerance overrides, NAME=VAL with NAME in
    /// {gain-rel, sim-rtol, sim-atol, bisect}.
    #[arg(long = "tol", value_name = "NAME=VAL")]
    tol: Vec<String>,
    /// Generator frequency limit in Hz; repeat for per-generator values,
    /// give once to broadcast; omit to disable.
    #[arg(long)]
    ybar: Vec<f64>,
}

#[derive(Args)]
struct GainsArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Disturbance bound per bus: a bare value broadcasts, `BUS=VAL`
    /// overrides one bus. Repeatable.
    #[arg(long, required = true)]
    ubar: Vec<String>,
    /// Line-angle bound per line: a bare value broadcasts, `LINE=VAL`
    /// (0-based line index) overrides one line. Repeatable.
    #[arg(long, required = true)]
    zbar: Vec<String>,
}

#[derive(Args)]
struct MaxdistArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Disturbance direction as `BUS=WEIGHT,...`; omit for a uniform
    /// direction over all buses.
    #[arg(long, conflicts_with = "per_bus")]
    direction: Option<String>,
    /// Solve one problem per bus (direction = that bus alone) and emit the
    /// per-bus table.
    #[arg(long)]
    per_bus: bool,
    /// Direction handling: `coupled` scales ubar along the direction;
    /// `free` lets every bus magnitude vary and maximizes the weighted sum.
    #[arg(long, default_value = "coupled")]
    mode: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Uniform zbar grid START:STOP:STEP (rad).
    #[arg(long, value_name = "START:STOP:STEP")]
    zbar_grid: String,
    /// Disturbance direction as `BUS=WEIGHT,...`; omit for uniform.
    #[arg(long)]
    direction: Option<String>,
    /// Skip the simulation-based empirical overlay.
    #[arg(long)]
    skip_empirical: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Scenario file (JSON: horizon, per-bus pattern, shape).
    #[arg(long)]
    scenario: PathBuf,
}

/// Parsed tolerance overrides with their defaults.
struct Tolerances {
    gain_rel: f64,
    sim_rtol: f64,
    sim_atol: f64,
    bisect: f64,
}

impl Tolerances {
    fn from_args(tokens: &[String]) -> Result<Self> {
        let mut t = Tolerances {
            gain_rel: 1e-6,
            sim_rtol: 1e-8,
            sim_atol: 1e-10,
            bisect: 1e-3,
        };
        for tok in tokens {
            let (name, val) = tok.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("--tol expects NAME=VAL, got `{tok}`"))
            })?;
            let val: f64 = val
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("--tol {name}: bad value `{val}`")))?;
            match name {
                "gain-rel" => t.gain_rel = val,
                "sim-rtol" => t.sim_rtol = val,
                "sim-atol" => t.sim_atol = val,
                "bisect" => t.bisect = val,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown tolerance `{other}` (expect gain-rel, sim-rtol, sim-atol, bisect)"
                    )))
                }
            }
        }
        Ok(t)
    }

    fn sim_settings(&self) -> SimSettings {
        let mut s = SimSettings::default();
        s.ode.rtol = self.sim_rtol;
        s.ode.atol = self.sim_atol;
        s
    }
}

/// The shared front half of every command: case, equilibrium, Lur'e form.
struct Pipeline {
    case: GridCase,
    eq: Equilibrium,
    sys: LureSystem,
    tol: Tolerances,
}

impl Pipeline {
    fn load(common: &CommonArgs) -> Result<Self> {
        let tol = Tolerances::from_args(&common.tol)?;
        let case = parse_grid(&common.case, CaseFormat::Json)?;
        let eq = solve_equilibrium(&case)?;
        if eq.slack_adjustment.abs() > crate::network::BALANCE_TOL {
            eprintln!(
                "note: schedule imbalance of {:.6} pu absorbed by the slack generator (bus {})",
                -eq.slack_adjustment,
                case.buses()[0].id
            );
        }
        let sys = build_lure(&case, &eq)?;
        Ok(Pipeline {
            case,
            eq,
            sys,
            tol,
        })
    }

    fn gains(&self) -> Result<(GainMatrices, f64)> {
        let start = Instant::now();
        let g = linear_gains(&self.sys, self.tol.gain_rel)?;
        Ok((g, start.elapsed().as_secs_f64()))
    }

    fn ybar(&self, args: &CommonArgs) -> Result<DVector<f64>> {
        let m = self.case.num_gens();
        match args.ybar.len() {
            0 => Ok(DVector::from_element(m, f64::INFINITY)),
            1 => Ok(DVector::from_element(m, args.ybar[0])),
            n if n == m => Ok(DVector::from_vec(args.ybar.clone())),
            n => Err(Error::InvalidConfig(format!(
                "--ybar given {n} times; expected once (broadcast) or {m} (per generator)"
            ))),
        }
    }

    fn direction(&self, spec: Option<&str>) -> Result<DVector<f64>> {
        let n = self.case.buses().len();
        match spec {
            None => Ok(DVector::from_element(n, 1.0)),
            Some(spec) => {
                let mut c = DVector::zeros(n);
                for part in spec.split(',') {
                    let (bus, w) = part.trim().split_once('=').ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "--direction expects BUS=WEIGHT,... got `{part}`"
                        ))
                    })?;
                    let bus: usize = bus.trim().parse().map_err(|_| {
                        Error::InvalidConfig(format!("--direction: bad bus id `{bus}`"))
                    })?;
                    let w: f64 = w.trim().parse().map_err(|_| {
                        Error::InvalidConfig(format!("--direction: bad weight `{w}`"))
                    })?;
                    let idx = self.case.bus_index(bus).ok_or_else(|| {
                        Error::InvalidConfig(format!("--direction: no bus with id {bus}"))
                    })?;
                    c[idx] = w;
                }
                Ok(c)
            }
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| Error::Io { path, source })
}

/// Parses repeatable `VAL` / `KEY=VAL` bound tokens into a vector.
fn parse_bound_tokens(
    tokens: &[String],
    len: usize,
    key_of: impl Fn(&str) -> Result<usize>,
    what: &str,
) -> Result<DVector<f64>> {
    let mut v = DVector::zeros(len);
    for tok in tokens {
        match tok.split_once('=') {
            None => {
                let val: f64 = tok.parse().map_err(|_| {
                    Error::InvalidConfig(format!("--{what}: bad value `{tok}`"))
                })?;
                v.fill(val);
            }
            Some((key, val)) => {
                let idx = key_of(key.trim())?;
                let val: f64 = val.parse().map_err(|_| {
                    Error::InvalidConfig(format!("--{what}: bad value `{val}`"))
                })?;
                v[idx] = val;
            }
        }
    }
    Ok(v)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    horizon: f64,
    /// Bus id -> amplitude (pu); omitted buses are zero.
    pattern: BTreeMap<String, f64>,
    shape: DisturbanceShape,
    #[serde(default)]
    output_dt: Option<f64>,
}

/// Runs the CLI; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Numerical => 3,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gains(args) => cmd_gains(args),
        Command::Certify(args) => cmd_certify(args),
        Command::Maxdist(args) => cmd_maxdist(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn cmd_gains(args: GainsArgs) -> Result<i32> {
    let p = Pipeline::load(&args.common)?;
    let (g, wall) = p.gains()?;
    write_file(&args.common.out, "gains.csv", &report::gains_csv(&g, &p.case))?;
    write_file(
        &args.common.out,
        "gains.json",
        &serde_json::to_string_pretty(&report::gains_sidecar(&g, &p.case, p.tol.gain_rel, wall))
            .unwrap(),
    )?;
    println!(
        "gains: {} outputs x {} inputs, tail bound {:.3e}, computed in {:.2} s",
        p.case.num_gens() + p.case.num_lines(),
        p.case.buses().len() + p.case.num_lines(),
        g.tail_bound,
        wall
    );
    if p.case.num_gens() == 1 && p.case.num_lines() == 1 {
        println!(
            "  y,u = {:.4}  y,v = {:.4}  z,u = {:.4}  z,v = {:.4}",
            g.yu[(0, 0)],
            g.yv[(0, 0)],
            g.zu[(0, 0)],
            g.zv[(0, 0)]
        );
    }
    Ok(0)
}

fn cmd_certify(args: CertifyArgs) -> Result<i32> {
    let p = Pipeline::load(&args.common)?;
    let nbus = p.case.buses().len();
    let ubar = parse_bound_tokens(
        &args.ubar,
        nbus,
        |key| {
            let id: usize = key
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("--ubar: bad bus id `{key}`")))?;
            p.case
                .bus_index(id)
                .ok_or_else(|| Error::InvalidConfig(format!("--ubar: no bus with id {id}")))
        },
        "ubar",
    )?;
    let lines = p.case.num_lines();
    let zbar = parse_bound_tokens(
        &args.zbar,
        lines,
        |key| {
            let idx: usize = key
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("--zbar: bad line index `{key}`")))?;
            if idx < lines {
                Ok(idx)
            } else {
                Err(Error::InvalidConfig(format!(
                    "--zbar: line index {idx} out of range (0..{lines})"
                )))
            }
        },
        "zbar",
    )?;
    let ybar = p.ybar(&args.common)?;
    let (g, _) = p.gains()?;
    let cert = check_cico(&g, &p.eq.phi_star, &ubar, &zbar, &ybar)?;
    write_file(
        &args.common.out,
        "certificate.json",
        &serde_json::to_string_pretty(&cert).unwrap(),
    )?;
    println!(
        "bibo: {}  cibo: {}  cico: {}  rho = {:.6}",
        cert.bibo_ok, cert.cibo_ok, cert.cico_ok, cert.spectral_radius
    );
    Ok(if cert.cico_ok { 0 } else { 1 })
}

fn parse_mode(s: &str) -> Result<DirectionMode> {
    match s {
        "coupled" => Ok(DirectionMode::Coupled),
        "free" => Ok(DirectionMode::Free),
        other => Err(Error::InvalidConfig(format!(
            "--mode must be `coupled` or `free`, got `{other}`"
        ))),
    }
}

fn cmd_maxdist(args: MaxdistArgs) -> Result<i32> {
    let p = Pipeline::load(&args.common)?;
    let mode = parse_mode(&args.mode)?;
    let ybar = p.ybar(&args.common)?;
    let (g, _) = p.gains()?;

    if args.per_bus {
        let nbus = p.case.buses().len();
        let mut bounds = DVector::zeros(nbus);
        for k in 0..nbus {
            // A bus whose gain columns vanish (an infinite bus) absorbs any
            // disturbance: the bound there is unbounded.
            let col_gain = g.zu.column(k).amax().max(g.yu.column(k).amax());
            if col_gain == 0.0 {
                bounds[k] = f64::INFINITY;
                continue;
            }
            let mut c = DVector::zeros(nbus);
            c[k] = 1.0;
            let problem = OptProblem {
                gains: g.clone(),
                phi_star: p.eq.phi_star.clone(),
                direction: c,
                ybar: ybar.clone(),
            };
            bounds[k] = max_disturbance(&problem, mode)?.mu_star;
        }
        write_file(&args.common.out, "per_bus.csv", &report::per_bus_csv(&p.case, &bounds))?;
        println!("bus  kind  mu");
        for (k, bus) in p.case.buses().iter().enumerate() {
            let kind = if bus.is_generator() { "gen " } else { "load" };
            println!("{:>3}  {kind}  {:.6}", bus.id, bounds[k]);
        }
        return Ok(0);
    }

    let problem = OptProblem {
        gains: g,
        phi_star: p.eq.phi_star.clone(),
        direction: p.direction(args.direction.as_deref())?,
        ybar,
    };
    let sol = max_disturbance(&problem, mode)?;
    write_file(
        &args.common.out,
        "solution.json",
        &serde_json::to_string_pretty(&report::solution_json(&sol)).unwrap(),
    )?;
    println!(
        "mu* = {:.6} (min margin {:.3e}, {} iterations)",
        sol.mu_star, sol.stats.min_margin, sol.stats.iterations
    );
    Ok(0)
}

fn parse_grid_spec(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(format!(
            "--zbar-grid expects START:STOP:STEP, got `{spec}`"
        )));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::InvalidConfig(format!("--zbar-grid: bad number `{s}`")))
    };
    let (start, stop, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
    if step <= 0.0 || stop < start {
        return Err(Error::InvalidConfig(
            "--zbar-grid needs step > 0 and stop >= start".into(),
        ));
    }
    let mut grid = Vec::new();
    let mut v = start;
    while v <= stop + 1e-12 {
        grid.push(v);
        v += step;
    }
    if grid.is_empty() {
        return Err(Error::InvalidConfig("--zbar-grid produced no points".into()));
    }
    Ok(grid)
}

fn cmd_sweep(args: SweepArgs) -> Result<i32> {
    let p = Pipeline::load(&args.common)?;
    let grid = parse_grid_spec(&args.zbar_grid)?;
    let ybar = p.ybar(&args.common)?;
    let (g, _) = p.gains()?;
    let direction = p.direction(args.direction.as_deref())?;
    let problem = OptProblem {
        gains: g,
        phi_star: p.eq.phi_star.clone(),
        direction,
        ybar,
    };
    let curve = sweep_zbar(&problem, &grid, true)?;
    write_file(&args.common.out, "sweep_mu.csv", &report::sweep_csv(&curve))?;
    write_file(&args.common.out, "sweep_y.csv", &report::sweep_y_csv(&curve))?;

    let cert_pts: Vec<(f64, f64)> = curve.iter().map(|pt| (pt.zbar, pt.mu)).collect();
    let y_pts: Vec<(f64, f64)> = curve.iter().map(|pt| (pt.zbar, pt.y_bound)).collect();

    let mut overlay: Vec<(f64, f64)> = Vec::new();
    let mut y_overlay: Vec<(f64, f64)> = Vec::new();
    let mut gap_stats = serde_json::json!({ "skipped": true });
    if !args.skip_empirical {
        let chat = &problem.direction / problem.direction.norm();
        let family = ScenarioFamily {
            shapes: vec![DisturbanceShape::Step { start: 0.0 }],
            horizon: 60.0,
            settings: p.tol.sim_settings(),
        };
        // Subsample the grid: each overlay point costs a bisection run.
        let stride = (curve.len() / 16).max(1);
        let mut max_gap: f64 = 0.0;
        let mut gap_at_peak = f64::NAN;
        let peak_idx = curve
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.mu.partial_cmp(&b.1.mu).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut indices: Vec<usize> = (0..curve.len()).step_by(stride).collect();
        if !indices.contains(&peak_idx) {
            indices.push(peak_idx);
            indices.sort_unstable();
        }
        // mu is the weighted objective c' ubar; magnitudes along the unit
        // direction are mu / |c|.
        let cnorm = problem.direction.norm();
        for &i in &indices {
            let pt = &curve[i];
            if pt.zbar <= 0.0 {
                continue;
            }
            let limit = PeakLimit::Z(DVector::from_element(problem.lines(), pt.zbar));
            let emp_s =
                empirical_upper_bound(&p.case, &p.eq, &chat, &limit, &family, p.tol.bisect)?;
            let emp = emp_s * cnorm;
            overlay.push((pt.zbar, emp));
            if pt.mu > 0.0 {
                let gap = (emp - pt.mu) / pt.mu;
                max_gap = max_gap.max(gap);
                if i == peak_idx {
                    gap_at_peak = gap;
                }
                // Realized frequency peak at the certified magnitude.
                let d = Disturbance::step(&chat * (pt.mu / cnorm));
                let traj = simulate(&p.case, &p.eq, &d, family.horizon, &family.settings)?;
                y_overlay.push((pt.zbar, traj.peak_y.amax()));
            }
        }
        gap_stats = serde_json::json!({
            "max_rel_gap": max_gap,
            "rel_gap_at_peak": gap_at_peak,
            "overlay_points": overlay.len(),
        });
        write_file(
            &args.common.out,
            "empirical_mu.csv",
            &report::overlay_csv("mu_empirical", &overlay),
        )?;
        write_file(
            &args.common.out,
            "empirical_y.csv",
            &report::overlay_csv("y_peak_simulated", &y_overlay),
        )?;
    }
    write_file(
        &args.common.out,
        "gap.json",
        &serde_json::to_string_pretty(&gap_stats).unwrap(),
    )?;

    let mut mu_series = vec![report::PlotSeries {
        label: "certified bound",
        points: &cert_pts,
        color: "#1f77b4",
        dashed: false,
    }];
    if !overlay.is_empty() {
        mu_series.push(report::PlotSeries {
            label: "empirical upper bound (step)",
            points: &overlay,
            color: "#ff7f0e",
            dashed: true,
        });
    }
    write_file(
        &args.common.out,
        "sweep_mu.svg",
        &report::svg_plot(
            "maximum disturbance magnitude vs sector bound",
            "zbar (rad)",
            "mu (pu)",
            &mu_series,
        ),
    )?;
    let mut y_series = vec![report::PlotSeries {
        label: "certified frequency bound",
        points: &y_pts,
        color: "#1f77b4",
        dashed: false,
    }];
    if !y_overlay.is_empty() {
        y_series.push(report::PlotSeries {
            label: "simulated peak (step)",
            points: &y_overlay,
            color: "#ff7f0e",
            dashed: true,
        });
    }
    write_file(
        &args.common.out,
        "sweep_y.svg",
        &report::svg_plot(
            "maximum frequency deviation vs sector bound",
            "zbar (rad)",
            "y (Hz)",
            &y_series,
        ),
    )?;

    let best = curve
        .iter()
        .max_by(|a, b| a.mu.partial_cmp(&b.mu).unwrap())
        .unwrap();
    println!(
        "sweep: {} points, peak mu = {:.6} at zbar = {:.3}",
        curve.len(),
        best.mu,
        best.zbar
    );
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let p = Pipeline::load(&args.common)?;
    let text = std::fs::read_to_string(&args.scenario).map_err(|source| Error::Io {
        path: args.scenario.clone(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let scenario: ScenarioFile =
        serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;

    let nbus = p.case.buses().len();
    let mut pattern = DVector::zeros(nbus);
    for (key, &amp) in &scenario.pattern {
        let id: usize = key
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("scenario pattern: bad bus id `{key}`")))?;
        let idx = p
            .case
            .bus_index(id)
            .ok_or_else(|| Error::InvalidConfig(format!("scenario pattern: no bus with id {id}")))?;
        pattern[idx] = amp;
    }
    let mut shape = scenario.shape.clone();
    if let DisturbanceShape::FilteredNoise { seed, .. } = &mut shape {
        if args.common.seed != 0 {
            *seed = args.common.seed;
        }
    }
    let d = Disturbance { pattern, shape };
    let mut settings = p.tol.sim_settings();
    settings.output_dt = scenario.output_dt;
    let traj: Trajectory = simulate(&p.case, &p.eq, &d, scenario.horizon, &settings)?;
    write_file(&args.common.out, "trajectory.csv", &report::trajectory_csv(&traj))?;
    write_file(
        &args.common.out,
        "peaks.json",
        &serde_json::to_string_pretty(&report::peaks_json(&traj)).unwrap(),
    )?;
    println!(
        "simulated {:.1} s: peak |y| = {:.6} Hz, peak |z| = {:.6} rad",
        scenario.horizon,
        traj.peak_y.amax(),
        traj.peak_z.amax()
    );
    Ok(0)
}
