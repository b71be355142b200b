//! Check a disturbance certificate: given per-bus magnitudes ubar, a
//! line-angle budget zbar, and frequency limits ybar, decide whether every
//! disturbance with |u| <= ubar keeps |z| <= zbar and |y| <= ybar.
//!
//! ```bash
//! cargo run --release -p gridcert --example certify
//! ```

use std::path::PathBuf;

use gridcert::cert::{check_bibo, check_cico, mmatrix_checks};
use gridcert::gain::{linear_gains, SectorGain};
use gridcert::lure::build_lure;
use gridcert::network::{parse_grid, solve_equilibrium, CaseFormat};
use nalgebra::DVector;

fn main() -> Result<(), gridcert::Error> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("cases/three_bus.json");
    let case = parse_grid(&path, CaseFormat::Json)?;
    let eq = solve_equilibrium(&case)?;
    let sys = build_lure(&case, &eq)?;
    let g = linear_gains(&sys, 1e-6)?;

    let ubar = DVector::from_vec(vec![0.05, 0.05, 0.10]); // pu per bus
    let zbar = DVector::from_element(case.num_lines(), 0.6); // rad per line
    let ybar = DVector::from_element(case.num_gens(), 0.5); // Hz per generator

    // The loop matrix gamma_zv * gamma_psi(zbar) drives everything; its
    // M-matrix facts are worth seeing once.
    let psi = SectorGain::corollary(&eq.phi_star, &zbar)?;
    let report = mmatrix_checks(&(&g.zv * psi.as_diagonal()));
    println!(
        "loop spectral radius {:.4}, inverse-positive: {}",
        report.rho, report.inverse_positive
    );
    let bibo = check_bibo(&g, &psi);
    if let Some(gh) = &bibo.closed_loop_gain {
        println!("closed-loop gain gamma_H (max entry) = {:.4} Hz/pu", gh.amax());
    }

    let cert = check_cico(&g, &eq.phi_star, &ubar, &zbar, &ybar)?;
    println!(
        "bibo {} / cibo {} / cico {}",
        cert.bibo_ok, cert.cibo_ok, cert.cico_ok
    );
    println!("z margins (rad): {:?}", cert.margins.z);
    println!("y margins (Hz):  {:?}", cert.margins.y);
    println!("\ncertificate JSON:\n{}", serde_json::to_string_pretty(&cert).unwrap());
    Ok(())
}
