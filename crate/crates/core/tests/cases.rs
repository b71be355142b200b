//! The shipped example cases must parse, solve, and be certifiable material:
//! equilibrium inside the sector, small-signal stable, residuals at spec.

use std::path::PathBuf;

use gridcert::lure::build_lure;
use gridcert::network::{parse_grid, solve_equilibrium, CaseFormat, GridCase};

fn case(name: &str) -> GridCase {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("cases")
        .join(name);
    parse_grid(&path, CaseFormat::Json).unwrap()
}

#[test]
fn smib_case() {
    let c = case("smib.json");
    assert_eq!((c.num_gens(), c.num_loads(), c.num_lines()), (1, 1, 1));
    let eq = solve_equilibrium(&c).unwrap();
    assert!((eq.delta_star[0] - (0.25f64).asin()).abs() < 1e-10);
    let sys = build_lure(&c, &eq).unwrap();
    assert_eq!(sys.dims.state_dim(), 2);
}

#[test]
fn three_bus_case() {
    let c = case("three_bus.json");
    assert_eq!((c.num_gens(), c.num_loads(), c.num_lines()), (2, 1, 3));
    let eq = solve_equilibrium(&c).unwrap();
    assert!(eq.residual_norm(&c) <= 1e-10);
    // One governed machine, one without.
    let sys = build_lure(&c, &eq).unwrap();
    assert_eq!(sys.dims.governors, 1);
    assert_eq!(sys.dims.state_dim(), 2 * 2 + 1 + 1);
}

#[test]
fn nine_bus_case() {
    let c = case("nine_bus.json");
    assert_eq!((c.num_gens(), c.num_loads(), c.num_lines()), (3, 6, 9));
    let eq = solve_equilibrium(&c).unwrap();
    assert!(eq.residual_norm(&c) <= 1e-10);
    assert!(eq.phi_star.amax() <= std::f64::consts::FRAC_PI_2);
    build_lure(&c, &eq).unwrap();
}

#[test]
fn ieee39_case() {
    let c = case("ieee39.json");
    assert_eq!((c.num_gens(), c.num_loads(), c.num_lines()), (10, 29, 46));
    // The loads quoted for the tripping scenario buses.
    for (id, want) in [(3, -3.22), (15, -3.20), (27, -2.81)] {
        let idx = c.bus_index(id).unwrap();
        match &c.buses()[idx].dynamics {
            gridcert::network::BusDynamics::Load(l) => {
                assert!((l.p_load - want).abs() < 1e-9, "bus {id}: {}", l.p_load)
            }
            _ => panic!("bus {id} is not a load"),
        }
    }
    let eq = solve_equilibrium(&c).unwrap();
    assert!(eq.residual_norm(&c) <= 1e-10);
    assert!(eq.phi_star.amax() <= std::f64::consts::FRAC_PI_2);
    build_lure(&c, &eq).unwrap();
}

#[test]
fn shuffled_bus_order_agrees_after_reordering() {
    // Same 9-bus case with the bus list shuffled: phi* must agree line by
    // line after the generators-first permutation is applied. The shipped
    // case is slightly imbalanced and shuffling would move the slack to a
    // different generator, so balance it first.
    let text = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("cases")
            .join("nine_bus.json"),
    )
    .unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let pg1 = v["generators"]["1"]["Pg"].as_f64().unwrap();
    v["generators"]["1"]["Pg"] = serde_json::json!(pg1 - 0.046);
    let a = gridcert::network::parse_grid_json(&v.to_string()).unwrap();
    let buses = v["buses"].as_array_mut().unwrap();
    buses.reverse();
    let b = gridcert::network::parse_grid_json(&v.to_string()).unwrap();

    let ea = solve_equilibrium(&a).unwrap();
    let eb = solve_equilibrium(&b).unwrap();
    for (l, line) in a.lines().iter().enumerate() {
        let ids = (a.buses()[line.from].id, a.buses()[line.to].id);
        let lb = b
            .lines()
            .iter()
            .position(|m| {
                (b.buses()[m.from].id, b.buses()[m.to].id) == ids
                    || (b.buses()[m.to].id, b.buses()[m.from].id) == ids
            })
            .unwrap();
        let flip = (b.buses()[b.lines()[lb].from].id, b.buses()[b.lines()[lb].to].id) != ids;
        let want = if flip { -eb.phi_star[lb] } else { eb.phi_star[lb] };
        assert!((ea.phi_star[l] - want).abs() < 1e-9);
    }
}
