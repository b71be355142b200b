//! Trade-off curve mu(zbar): how much disturbance is certifiable as a
//! function of the allowed line-angle deviation, with the simulation-based
//! upper bound overlaid. Writes CSV and SVG files under `out/`.
//!
//! ```bash
//! cargo run --release -p gridcert --example sweep_curve
//! ```

use gridcert::gain::linear_gains;
use gridcert::lure::build_lure;
use gridcert::network::{solve_equilibrium, GridCase};
use gridcert::opt::{sweep_zbar, OptProblem};
use gridcert::report;
use gridcert::sim::{
    empirical_upper_bound, DisturbanceShape, PeakLimit, ScenarioFamily, SimSettings,
};
use nalgebra::DVector;

fn main() -> Result<(), gridcert::Error> {
    let case = GridCase::smib(1.0, 1.2, 0.2, 0.8)?;
    let eq = solve_equilibrium(&case)?;
    let sys = build_lure(&case, &eq)?;
    let gains = linear_gains(&sys, 1e-6)?;
    let mut direction = DVector::zeros(2);
    direction[0] = 1.0;
    let problem = OptProblem {
        gains,
        phi_star: eq.phi_star.clone(),
        direction,
        ybar: DVector::from_element(1, f64::INFINITY),
    };

    let grid: Vec<f64> = (1..=287).map(|k| k as f64 * 0.01).collect();
    let curve = sweep_zbar(&problem, &grid, true)?;
    let peak = curve
        .iter()
        .max_by(|a, b| a.mu.partial_cmp(&b.mu).unwrap())
        .unwrap();
    let zero = curve.iter().find(|p| p.zbar > peak.zbar && p.mu == 0.0);
    println!(
        "certified curve: peak mu = {:.4} pu at zbar = {:.2} rad; drops to zero at {:.2} rad",
        peak.mu,
        peak.zbar,
        zero.map(|p| p.zbar).unwrap_or(f64::NAN)
    );

    // Empirical overlay: step disturbances, bisected per zbar limit.
    let family = ScenarioFamily {
        shapes: vec![DisturbanceShape::Step { start: 0.0 }],
        horizon: 60.0,
        settings: SimSettings::default(),
    };
    let chat = &problem.direction / problem.direction.norm();
    let mut overlay = Vec::new();
    for pt in curve.iter().step_by(16) {
        let limit = PeakLimit::Z(DVector::from_element(1, pt.zbar));
        let emp = empirical_upper_bound(&case, &eq, &chat, &limit, &family, 1e-3)?;
        overlay.push((pt.zbar, emp));
    }
    let gap_at_peak = overlay
        .iter()
        .min_by(|a, b| {
            (a.0 - peak.zbar)
                .abs()
                .partial_cmp(&(b.0 - peak.zbar).abs())
                .unwrap()
        })
        .map(|&(_, e)| (e - peak.mu) / peak.mu)
        .unwrap();
    println!("empirical step bound near the peak is {:.1}% above the certificate", gap_at_peak * 100.0);

    std::fs::create_dir_all("out").unwrap();
    let cert_pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.zbar, p.mu)).collect();
    std::fs::write("out/sweep_mu.csv", report::sweep_csv(&curve)).unwrap();
    std::fs::write(
        "out/sweep_mu.svg",
        report::svg_plot(
            "maximum disturbance magnitude vs sector bound",
            "zbar (rad)",
            "mu (pu)",
            &[
                report::PlotSeries {
                    label: "certified bound",
                    points: &cert_pts,
                    color: "#1f77b4",
                    dashed: false,
                },
                report::PlotSeries {
                    label: "empirical upper bound (step)",
                    points: &overlay,
                    color: "#ff7f0e",
                    dashed: true,
                },
            ],
        ),
    )
    .unwrap();
    println!("wrote out/sweep_mu.csv and out/sweep_mu.svg");
    Ok(())
}
