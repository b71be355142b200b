//! Small-gain certificates on the Lur'e interconnection.
//!
//! The loop matrix is `Z = gamma_zv * gamma_psi(zbar)`, nonnegative by
//! construction, so `I - Z` is a Z-matrix and the three classical
//! nonsingular-M-matrix conditions are equivalent: `rho(Z) < 1`, inverse
//! nonnegativity of `I - Z`, and existence of `x >= 0` with `(I - Z) x > 0`.
//!
//! Certificates (all with the system started at the equilibrium, x0 = 0):
//! * BIBO on the domain `|z| <= zbar`: `rho(Z) < 1`.
//! * CIBO: `gamma_zu ubar < (I - Z) zbar` row-wise; guarantees
//!   `|z|_inf <= zbar`.
//! * CICO: additionally `gamma_yu ubar + gamma_yv gamma_psi zbar <= ybar`;
//!   guarantees `|y|_inf <= ybar` (ybar in Hz, `+inf` disables a row).
//!
//! Strict inequalities are attested with a fixed margin [`EPS_STRICT`]
//! because floating point cannot witness strictness. The sector gain used
//! here is the closed-form bound, which keeps the downstream optimization
//! convex; the exact supremum is available separately for diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gain::{GainMatrices, SectorGain};

/// Margin that stands in for strict inequality in the certificates.
pub const EPS_STRICT: f64 = 1e-9;

const RHO_TOL: f64 = 1e-12;
const RHO_MAX_ITER: usize = 10_000;

/// Spectral radius of a nonnegative matrix by shifted power iteration with
/// Collatz-Wielandt brackets (the Perron root is real, so a positive shift
/// makes it strictly dominant). Deterministic start vector of ones.
pub fn spectral_radius(z: &DMatrix<f64>) -> f64 {
    assert_eq!(z.nrows(), z.ncols(), "spectral radius needs a square matrix");
    let n = z.nrows();
    if n == 0 {
        return 0.0;
    }
    let max_row: f64 = (0..n)
        .map(|i| z.row(i).iter().map(|v| v.abs()).sum())
        .fold(0.0, f64::max);
    if max_row == 0.0 {
        return 0.0;
    }
    let shift = 0.5 * max_row;
    let b = {
        let mut b = z.clone();
        for i in 0..n {
            b[(i, i)] += shift;
        }
        b
    };
    let mut x = DVector::from_element(n, 1.0);
    for _ in 0..RHO_MAX_ITER {
        let y = &b * &x;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..n {
            let r = y[i] / x[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if hi - lo <= RHO_TOL * hi.max(1.0) {
            return (0.5 * (lo + hi) - shift).max(0.0);
        }
        x = &y / y.amax();
    }
    // The Collatz-Wielandt bracket only closes for irreducible matrices;
    // reducible or defective loop matrices (zero sector gains on some lines
    // produce zero columns) stall it. Fall back to the dense spectrum.
    z.complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max)
}

/// Result of the three equivalent M-matrix conditions on `I - Z`.
#[derive(Debug, Clone)]
pub struct MmatrixReport {
    pub rho: f64,
    /// `(I - Z)^-1 >= 0`, decided by computing and inspecting the inverse.
    pub inverse_positive: bool,
    /// An `x >= 0` with `(I - Z) x > 0` when `rho < 1` (namely
    /// `(I - Z)^-1 1`), absent otherwise.
    pub positive_vector: Option<DVector<f64>>,
}

/// Evaluates the M-matrix conditions for a nonnegative `Z`.
pub fn mmatrix_checks(z: &DMatrix<f64>) -> MmatrixReport {
    let n = z.nrows();
    let rho = spectral_radius(z);
    let i_minus = DMatrix::identity(n, n) - z;
    let inverse = i_minus.clone().lu().try_inverse();
    let inverse_positive = match &inverse {
        Some(inv) => {
            let scale = 1.0 + inv.amax();
            inv.iter().all(|&v| v >= -1e-9 * scale)
        }
        None => false,
    };
    let positive_vector = if rho < 1.0 {
        inverse.as_ref().map(|inv| inv * DVector::from_element(n, 1.0))
    } else {
        None
    };
    MmatrixReport {
        rho,
        inverse_positive,
        positive_vector,
    }
}

/// Outcome of the small-gain (BIBO) test on the domain `|z| <= zbar`.
#[derive(Debug, Clone)]
pub struct BiboReport {
    pub ok: bool,
    pub rho: f64,
    /// Closed-loop gain `gamma_yu + gamma_yv gamma_psi (I - Z)^-1 gamma_zu`
    /// bounding `|y|_inf <= gamma_H |u|_inf`, present when `ok`.
    pub closed_loop_gain: Option<DMatrix<f64>>,
}

/// Small-gain condition `rho(gamma_zv gamma_psi) < 1`.
pub fn check_bibo(g: &GainMatrices, psi: &SectorGain) -> BiboReport {
    let z = &g.zv * psi.as_diagonal();
    let rho = spectral_radius(&z);
    let ok = rho < 1.0;
    let closed_loop_gain = if ok {
        let n = z.nrows();
        (DMatrix::identity(n, n) - &z)
            .lu()
            .try_inverse()
            .map(|inv| &g.yu + &g.yv * psi.as_diagonal() * inv * &g.zu)
    } else {
        None
    };
    BiboReport {
        ok,
        rho,
        closed_loop_gain,
    }
}

fn validate_bounds(
    g: &GainMatrices,
    phi_star: &DVector<f64>,
    ubar: &DVector<f64>,
    zbar: &DVector<f64>,
) -> Result<()> {
    if ubar.len() != g.inputs() {
        return Err(Error::InvalidConfig(format!(
            "ubar has {} entries, the case has {} buses",
            ubar.len(),
            g.inputs()
        )));
    }
    if zbar.len() != g.lines() || phi_star.len() != g.lines() {
        return Err(Error::InvalidConfig(format!(
            "zbar/phi* must have one entry per line ({})",
            g.lines()
        )));
    }
    if let Some(v) = ubar.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidConfig(format!("ubar must be finite and >= 0, got {v}")));
    }
    if let Some(v) = zbar.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidConfig(format!("zbar must be finite and >= 0, got {v}")));
    }
    Ok(())
}

/// Constrained-input bounded-output condition
/// `gamma_zu ubar < (I - gamma_zv gamma_psi(zbar)) zbar`.
///
/// Returns the flag and the row-wise margins (right side minus left side);
/// the condition holds when every margin is at least [`EPS_STRICT`].
pub fn check_cibo(
    g: &GainMatrices,
    phi_star: &DVector<f64>,
    ubar: &DVector<f64>,
    zbar: &DVector<f64>,
) -> Result<(bool, DVector<f64>)> {
    validate_bounds(g, phi_star, ubar, zbar)?;
    let psi = SectorGain::corollary(phi_star, zbar)?;
    let rhs = zbar - &g.zv * psi.diag.component_mul(zbar);
    let lhs = &g.zu * ubar;
    let margins = rhs - lhs;
    let ok = margins.iter().all(|&v| v >= EPS_STRICT);
    Ok((ok, margins))
}

/// Per-row slack of the two certificate inequalities, in the units of each
/// row (rad for `z`, Hz for `y`).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Margins {
    pub z: Vec<f64>,
    #[serde(with = "inf_as_null")]
    pub y: Vec<f64>,
}

/// Full certificate: bounds, flags, spectral radius, and margins.
/// Serializes to JSON with these exact field names.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CertificateResult {
    pub ubar: Vec<f64>,
    pub zbar: Vec<f64>,
    #[serde(with = "inf_as_null")]
    pub ybar: Vec<f64>,
    pub bibo_ok: bool,
    pub cibo_ok: bool,
    pub cico_ok: bool,
    pub spectral_radius: f64,
    pub margins: Margins,
}

/// Constrained-input constrained-output certificate. On success with
/// `cico_ok`, the closed loop from the equilibrium satisfies
/// `|z|_inf <= zbar` and `|y|_inf <= ybar` for every disturbance with
/// `|u|_inf <= ubar`.
///
/// `ybar` entries are in Hz; `+inf` disables the frequency constraint on
/// that generator (the certificate then reduces to CIBO).
pub fn check_cico(
    g: &GainMatrices,
    phi_star: &DVector<f64>,
    ubar: &DVector<f64>,
    zbar: &DVector<f64>,
    ybar: &DVector<f64>,
) -> Result<CertificateResult> {
    validate_bounds(g, phi_star, ubar, zbar)?;
    if ybar.len() != g.gens() {
        return Err(Error::InvalidConfig(format!(
            "ybar must have one entry per generator ({})",
            g.gens()
        )));
    }
    for (i, &v) in ybar.iter().enumerate() {
        if v.is_nan() || v <= 0.0 {
            return Err(Error::InfeasibleYbar { row: i, value: v });
        }
    }

    let psi = SectorGain::corollary(phi_star, zbar)?;
    let loop_matrix = &g.zv * psi.as_diagonal();
    let rho = spectral_radius(&loop_matrix);
    let bibo_ok = rho < 1.0;

    let psi_zbar = psi.diag.component_mul(zbar);
    let margins_z = zbar - &g.zv * &psi_zbar - &g.zu * ubar;
    let cibo_ok = margins_z.iter().all(|&v| v >= EPS_STRICT);

    let y_pred = &g.yu * ubar + &g.yv * &psi_zbar;
    let margins_y = ybar - y_pred;
    let cico_ok = cibo_ok && margins_y.iter().all(|&v| v >= 0.0);

    Ok(CertificateResult {
        ubar: ubar.iter().copied().collect(),
        zbar: zbar.iter().copied().collect(),
        ybar: ybar.iter().copied().collect(),
        bibo_ok,
        cibo_ok,
        cico_ok,
        spectral_radius: rho,
        margins: Margins {
            z: margins_z.iter().copied().collect(),
            y: margins_y.iter().copied().collect(),
        },
    })
}

/// JSON helper: `+inf` entries (disabled constraints) serialize as `null`.
mod inf_as_null {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(
            v.iter()
                .map(|&x| if x.is_infinite() { None } else { Some(x) }),
        )
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Option<f64>>::deserialize(d)?;
        raw.into_iter()
            .map(|x| match x {
                Some(v) if v.is_nan() => Err(D::Error::custom("NaN is not a valid bound")),
                Some(v) => Ok(v),
                None => Ok(f64::INFINITY),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gain::linear_gains;
    use crate::lure::build_lure;
    use crate::network::{solve_equilibrium, GridCase};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smib_gains() -> (GainMatrices, DVector<f64>) {
        let case = GridCase::smib(1.0, 1.2, 0.2, 0.8).unwrap();
        let eq = solve_equilibrium(&case).unwrap();
        let sys = build_lure(&case, &eq).unwrap();
        let g = linear_gains(&sys, 1e-6).unwrap();
        (g, eq.phi_star)
    }

    fn random_nonneg(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| {
            if rng.random_bool(0.3) {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            }
        })
    }

    /// Oracle for rho: dense eigenvalues.
    fn rho_eigen(z: &DMatrix<f64>) -> f64 {
        z.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn spectral_radius_matches_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..12);
            let z = random_nonneg(&mut rng, n);
            let got = spectral_radius(&z);
            let want = rho_eigen(&z);
            assert!(
                (got - want).abs() <= 1e-9 * (1.0 + want),
                "rho {got} vs oracle {want}"
            );
        }
    }

    #[test]
    fn spectral_radius_hard_cases() {
        // Periodic: 2-cycle permutation, rho = 1.
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.5, 0.0]);
        assert_relative_eq!(spectral_radius(&z), 1.0, epsilon = 1e-9);
        // Nilpotent: rho = 0.
        let z = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]);
        assert!(spectral_radius(&z) <= 1e-9);
        // Zero and empty.
        assert_eq!(spectral_radius(&DMatrix::zeros(4, 4)), 0.0);
        assert_eq!(spectral_radius(&DMatrix::zeros(0, 0)), 0.0);
    }

    #[test]
    fn mmatrix_identity_cases() {
        let r = mmatrix_checks(&DMatrix::zeros(3, 3));
        assert_eq!(r.rho, 0.0);
        assert!(r.inverse_positive);
        let x = r.positive_vector.unwrap();
        assert!(x.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let z = DMatrix::from_diagonal(&DVector::from_element(4, 0.5));
        let r = mmatrix_checks(&z);
        assert_relative_eq!(r.rho, 0.5, epsilon = 1e-10);
        assert!(r.inverse_positive);
        let x = r.positive_vector.unwrap();
        assert!(x.iter().all(|&v| (v - 2.0).abs() < 1e-10));
    }

    #[test]
    fn mmatrix_conditions_flip_together() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &target in &[0.99, 1.01] {
            let z0 = random_nonneg(&mut rng, 5) + DMatrix::from_element(5, 5, 0.05);
            let z = &z0 * (target / rho_eigen(&z0));
            let r = mmatrix_checks(&z);
            let below = target < 1.0;
            assert_eq!(r.rho < 1.0, below);
            assert_eq!(r.inverse_positive, below);
            assert_eq!(r.positive_vector.is_some(), below);
            if let Some(x) = r.positive_vector {
                assert!(x.iter().all(|&v| v >= 0.0));
                let check = (DMatrix::identity(5, 5) - &z) * x;
                assert!(check.iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn bibo_without_feedback_returns_open_loop_gain() {
        let (g, phi) = smib_gains();
        let psi = SectorGain::corollary(&phi, &DVector::zeros(1)).unwrap();
        let rep = check_bibo(&g, &psi);
        assert!(rep.ok);
        assert_eq!(rep.rho, 0.0);
        let gh = rep.closed_loop_gain.unwrap();
        assert_relative_eq!(gh[(0, 0)], g.yu[(0, 0)], max_relative = 1e-12);
    }

    #[test]
    fn smib_small_gain_boundary_near_2p4_rad() {
        let (g, phi) = smib_gains();
        let at = |z: f64| {
            let psi = SectorGain::corollary(&phi, &DVector::from_element(1, z)).unwrap();
            check_bibo(&g, &psi)
        };
        assert!(at(1.2).ok);
        assert!(at(1.2).rho < 1.0 - 0.3); // strict margin at 1.2 rad
        assert!(!at(2.55).ok);
        // Boundary bracketed within the study's "about 2.4 rad".
        let mut lo = 1.2;
        let mut hi = 2.55;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if at(mid).ok {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 2.4).abs() < 0.15, "boundary at {lo}");
    }

    #[test]
    fn cibo_reference_points() {
        let (g, phi) = smib_gains();
        // Zero input, small zbar in the small-gain region: certified.
        let (ok, margins) = check_cibo(
            &g,
            &phi,
            &DVector::zeros(2),
            &DVector::from_element(1, 0.5),
        )
        .unwrap();
        assert!(ok);
        assert!(margins[0] > 0.0);

        // ubar slightly above the certified curve at zbar = 1.2: rejected.
        let zbar = DVector::from_element(1, 1.2);
        let psi = SectorGain::corollary(&phi, &zbar).unwrap();
        let mu_max = (1.0 - g.zv[(0, 0)] * psi.diag[0]) * 1.2 / g.zu[(0, 0)];
        let mut ubar = DVector::zeros(2);
        ubar[0] = mu_max * 1.001;
        let (ok, _) = check_cibo(&g, &phi, &ubar, &zbar).unwrap();
        assert!(!ok);
        ubar[0] = mu_max * 0.999;
        let (ok, _) = check_cibo(&g, &phi, &ubar, &zbar).unwrap();
        assert!(ok);

        // Past the small-gain boundary nothing is certifiable, even u = 0.
        let (ok, _) = check_cibo(
            &g,
            &phi,
            &DVector::zeros(2),
            &DVector::from_element(1, 2.55),
        )
        .unwrap();
        assert!(!ok);
    }

    #[test]
    fn cico_reduces_to_cibo_when_ybar_infinite() {
        let (g, phi) = smib_gains();
        let mut ubar = DVector::zeros(2);
        ubar[0] = 0.3;
        let zbar = DVector::from_element(1, 1.2);
        let inf = DVector::from_element(1, f64::INFINITY);
        let cert = check_cico(&g, &phi, &ubar, &zbar, &inf).unwrap();
        let (cibo, _) = check_cibo(&g, &phi, &ubar, &zbar).unwrap();
        assert_eq!(cert.cico_ok, cibo);
        assert!(cert.margins.y[0].is_infinite());
    }

    #[test]
    fn cico_flips_exactly_at_the_frequency_crossing() {
        let (g, phi) = smib_gains();
        let mut ubar = DVector::zeros(2);
        ubar[0] = 0.3;
        let zbar = DVector::from_element(1, 1.0);
        let psi = SectorGain::corollary(&phi, &zbar).unwrap();
        let y_pred = g.yu[(0, 0)] * 0.3 + g.yv[(0, 0)] * psi.diag[0] * 1.0;

        // Bisection oracle on the flip.
        let flips_at = {
            let mut lo = 1e-6;
            let mut hi = 10.0;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let cert = check_cico(
                    &g,
                    &phi,
                    &ubar,
                    &zbar,
                    &DVector::from_element(1, mid),
                )
                .unwrap();
                if cert.cico_ok {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        };
        assert_relative_eq!(flips_at, y_pred, max_relative = 1e-9);

        // Equilibrium case: tiny bounds certify for any positive ybar.
        let cert = check_cico(
            &g,
            &phi,
            &DVector::zeros(2),
            &DVector::from_element(1, 1e-6),
            &DVector::from_element(1, 1e-9),
        )
        .unwrap();
        assert!(cert.cico_ok);
    }

    #[test]
    fn implication_chain_and_monotone_shrinkage() {
        let (g, phi) = smib_gains();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let z = rng.random_range(0.01..2.8);
            let u = rng.random_range(0.0..0.8);
            let mut ubar = DVector::zeros(2);
            ubar[0] = u;
            let zbar = DVector::from_element(1, z);
            let ybar = DVector::from_element(1, rng.random_range(0.05..1.0));
            let cert = check_cico(&g, &phi, &ubar, &zbar, &ybar).unwrap();
            if cert.cico_ok {
                assert!(cert.cibo_ok);
            }
            if cert.cibo_ok {
                assert!(cert.spectral_radius < 1.0, "rho {}", cert.spectral_radius);
                assert!(cert.margins.z.iter().all(|&m| m >= 0.0));
                // Shrinking ubar preserves both flags.
                let s = rng.random_range(0.0..1.0);
                let shrunk = check_cico(&g, &phi, &(&ubar * s), &zbar, &ybar).unwrap();
                assert!(shrunk.cibo_ok);
                if cert.cico_ok {
                    assert!(shrunk.cico_ok);
                }
            }
        }
    }

    #[test]
    fn certificate_serde_roundtrip_with_infinity() {
        let cert = CertificateResult {
            ubar: vec![0.3, 0.0],
            zbar: vec![1.2],
            ybar: vec![f64::INFINITY],
            bibo_ok: true,
            cibo_ok: true,
            cico_ok: true,
            spectral_radius: 0.42,
            margins: Margins {
                z: vec![0.1],
                y: vec![f64::INFINITY],
            },
        };
        let text = serde_json::to_string(&cert).unwrap();
        assert!(text.contains("\"ybar\":[null]"), "{text}");
        let back: CertificateResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cert);
    }
}
