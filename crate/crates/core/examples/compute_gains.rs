//! Compute the element-wise L-infinity gain matrices of the linear block.
//!
//! ```bash
//! cargo run --release -p gridcert --example compute_gains
//! ```

use std::path::PathBuf;
use std::time::Instant;

use gridcert::gain::linear_gains;
use gridcert::lure::build_lure;
use gridcert::network::{parse_grid, solve_equilibrium, CaseFormat, GridCase};

fn main() -> Result<(), gridcert::Error> {
    // The single-machine system has a dedicated constructor; the four gains
    // are scalars and easy to eyeball.
    let smib = GridCase::smib(1.0, 1.2, 0.2, 0.8)?;
    let eq = solve_equilibrium(&smib)?;
    let sys = build_lure(&smib, &eq)?;
    let g = linear_gains(&sys, 1e-6)?;
    println!("single machine / infinite bus (M=1, D=1.2, p=0.2, phi=0.8):");
    println!("  gamma_yu = {:.4} Hz/pu", g.yu[(0, 0)]);
    println!("  gamma_yv = {:.4} Hz/pu", g.yv[(0, 0)]);
    println!("  gamma_zu = {:.4} rad/pu", g.zu[(0, 0)]);
    println!("  gamma_zv = {:.4} rad/rad", g.zv[(0, 0)]);
    println!("  truncation tail bound {:.2e}", g.tail_bound);

    // A meshed case: every (output, input) channel gets its own gain.
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("cases/nine_bus.json");
    let case = parse_grid(&path, CaseFormat::Json)?;
    let eq = solve_equilibrium(&case)?;
    let sys = build_lure(&case, &eq)?;
    let start = Instant::now();
    let g = linear_gains(&sys, 1e-6)?;
    println!(
        "\nnine-bus case: {} x {} gain entries in {:.2} s",
        case.num_gens() + case.num_lines(),
        case.buses().len() + case.num_lines(),
        start.elapsed().as_secs_f64()
    );
    println!(
        "  largest frequency gain  max gamma_yu = {:.4} Hz/pu",
        g.yu.amax()
    );
    println!(
        "  largest line-angle gain max gamma_zu = {:.4} rad/pu",
        g.zu.amax()
    );
    Ok(())
}
