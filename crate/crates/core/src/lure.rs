//! State-space Lur'e representation of the swing dynamics.
//!
//! The nonlinear network model is split into a linear block
//! `dx/dt = A x + B_v v + B_u u` and the decentralized static nonlinearity
//! `v = psi(z) = sin(phi* + z) - sin(phi*) - diag(cos phi*) z`, with outputs
//! `y = C_y x` (generator speeds, rad/s) and `z = C_z x` (line-angle
//! deviations, rad).
//!
//! State ordering: `x = [x1; x2; x3; x4]` with
//! `x1 = delta_G - delta_G*`, `x2 = d/dt delta_G`,
//! `x3 = delta_L - delta_L*` (dynamic load buses only), and
//! `x4 = p - p*` (generators with a governor only).
//!
//! Disturbances at a governed generator enter through the governor state
//! (`1/T`); without a governor they act on the swing equation directly
//! (`1/M`); at a dynamic load through `1/D`. Columns for infinite buses are
//! zero — a fixed-angle bus absorbs any injection.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{BusDynamics, Equilibrium, GridCase};

/// Real parts closer to zero than this are treated as the structural
/// uniform-shift mode rather than instability.
pub const EIG_TOL: f64 = 1e-8;

/// Dimensions and state layout of a [`LureSystem`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LureDims {
    /// m: generator buses.
    pub gens: usize,
    /// n: load buses (dynamic and infinite).
    pub loads: usize,
    /// l: lines.
    pub lines: usize,
    /// Load buses with dynamics (x3 slots).
    pub dyn_loads: usize,
    /// Generators with a governor (x4 slots).
    pub governors: usize,
}

impl LureDims {
    pub fn state_dim(&self) -> usize {
        2 * self.gens + self.dyn_loads + self.governors
    }
    pub fn x2_offset(&self) -> usize {
        self.gens
    }
    pub fn x3_offset(&self) -> usize {
        2 * self.gens
    }
    pub fn x4_offset(&self) -> usize {
        2 * self.gens + self.dyn_loads
    }
    /// Number of disturbance inputs (all buses, gens first).
    pub fn inputs(&self) -> usize {
        self.gens + self.loads
    }
}

/// Linear block of the Lur'e form plus the data needed to evaluate the
/// nonlinearity. Immutable after construction.
#[derive(Debug, Clone)]
pub struct LureSystem {
    pub a: DMatrix<f64>,
    pub b_v: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub c_y: DMatrix<f64>,
    pub c_z: DMatrix<f64>,
    /// Equilibrium line angles phi* = E^T delta* (rad).
    pub phi_star: DVector<f64>,
    pub dims: LureDims,
    /// x3 slot for each load bus (by position among loads), None if infinite.
    pub load_slot: Vec<Option<usize>>,
    /// x4 slot for each generator, None if it has no governor.
    pub gov_slot: Vec<Option<usize>>,
    has_infinite_bus: bool,
}

/// The decentralized nonlinearity of Eq.-form `v = sin(phi*+z) - sin(phi*)
/// - diag(cos phi*) z`, evaluated elementwise. `v(0) = 0` and `dv/dz(0) = 0`.
pub fn nonlinearity(phi_star: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    assert_eq!(phi_star.len(), z.len(), "phi* and z must have equal length");
    DVector::from_iterator(
        z.len(),
        phi_star
            .iter()
            .zip(z.iter())
            .map(|(&p, &zi)| (p + zi).sin() - p.sin() - p.cos() * zi),
    )
}

/// Builds the Lur'e system for a case at its equilibrium.
///
/// Requires `|phi*| <= pi/2` (guaranteed by [`crate::network::solve_equilibrium`]).
/// Fails with [`Error::SmallSignalUnstable`] if any eigenvalue other than the
/// structural uniform-shift mode has real part above `-EIG_TOL`.
pub fn build_lure(case: &GridCase, eq: &Equilibrium) -> Result<LureSystem> {
    let m = case.num_gens();
    let n = case.num_loads();
    let l = case.num_lines();

    let mut load_slot = Vec::with_capacity(n);
    let mut dyn_loads = 0usize;
    for bus in &case.buses()[m..] {
        match bus.dynamics {
            BusDynamics::Load(_) => {
                load_slot.push(Some(dyn_loads));
                dyn_loads += 1;
            }
            BusDynamics::Infinite => load_slot.push(None),
            BusDynamics::Generator(_) => unreachable!("loads come after generators"),
        }
    }
    let mut gov_slot = Vec::with_capacity(m);
    let mut governors = 0usize;
    for k in 0..m {
        if case.gen(k).has_governor() {
            gov_slot.push(Some(governors));
            governors += 1;
        } else {
            gov_slot.push(None);
        }
    }

    let dims = LureDims {
        gens: m,
        loads: n,
        lines: l,
        dyn_loads,
        governors,
    };
    let dim = dims.state_dim();
    let (x2, x3, x4) = (dims.x2_offset(), dims.x3_offset(), dims.x4_offset());

    let e = case.incidence();
    let e_g = e.rows(0, m).into_owned();
    // Incidence rows of the dynamic load buses only; fixed-angle buses do not
    // contribute to z.
    let mut e_ld = DMatrix::zeros(dyn_loads, l);
    for (j, slot) in load_slot.iter().enumerate() {
        if let Some(s) = *slot {
            e_ld.set_row(s, &e.row(m + j));
        }
    }

    let phi = DVector::from_iterator(l, case.lines().iter().map(|line| line.phi));
    let cos_star = DVector::from_iterator(l, eq.phi_star.iter().map(|p| p.cos()));
    // Phi diag(cos phi*) applied column-wise.
    let weight = |mat: &DMatrix<f64>| -> DMatrix<f64> {
        let mut w = mat.clone();
        for (c, mut col) in w.column_iter_mut().enumerate() {
            col *= phi[c] * cos_star[c];
        }
        w
    };
    let e_g_w = weight(&e_g);
    let e_ld_w = weight(&e_ld);

    let m_inv =
        DVector::from_iterator(m, (0..m).map(|k| 1.0 / case.gen(k).inertia));
    let d_ld_inv = {
        let mut v = DVector::zeros(dyn_loads);
        for (j, slot) in load_slot.iter().enumerate() {
            if let Some(s) = *slot {
                if let BusDynamics::Load(lp) = &case.buses()[m + j].dynamics {
                    v[s] = 1.0 / lp.damping;
                }
            }
        }
        v
    };

    let mut a = DMatrix::zeros(dim, dim);
    // x1' = x2
    for k in 0..m {
        a[(k, x2 + k)] = 1.0;
    }
    // x2' = -M^-1 [E_G Phi C* (E_G^T x1 + E_Ld^T x3) + D_G x2] + M^-1 x4
    let a21 = -&e_g_w * e_g.transpose();
    let a23 = -&e_g_w * e_ld.transpose();
    for k in 0..m {
        for j in 0..m {
            a[(x2 + k, j)] = m_inv[k] * a21[(k, j)];
        }
        for j in 0..dyn_loads {
            a[(x2 + k, x3 + j)] = m_inv[k] * a23[(k, j)];
        }
        a[(x2 + k, x2 + k)] = -m_inv[k] * case.gen(k).damping;
        if let Some(s) = gov_slot[k] {
            a[(x2 + k, x4 + s)] = m_inv[k];
        }
    }
    // x3' = -D_L^-1 E_Ld Phi C* (E_G^T x1 + E_Ld^T x3)
    let a31 = -&e_ld_w * e_g.transpose();
    let a33 = -&e_ld_w * e_ld.transpose();
    for s in 0..dyn_loads {
        for j in 0..m {
            a[(x3 + s, j)] = d_ld_inv[s] * a31[(s, j)];
        }
        for j in 0..dyn_loads {
            a[(x3 + s, x3 + j)] = d_ld_inv[s] * a33[(s, j)];
        }
    }
    // x4' = -(RT)^-1 x2 - T^-1 x4
    for k in 0..m {
        if let Some(s) = gov_slot[k] {
            let g = case.gen(k);
            a[(x4 + s, x2 + k)] = -1.0 / (g.droop * g.gov_time_const);
            a[(x4 + s, x4 + s)] = -1.0 / g.gov_time_const;
        }
    }

    let mut b_v = DMatrix::zeros(dim, l);
    for k in 0..m {
        for c in 0..l {
            b_v[(x2 + k, c)] = -m_inv[k] * e_g[(k, c)] * phi[c];
        }
    }
    for s in 0..dyn_loads {
        for c in 0..l {
            b_v[(x3 + s, c)] = -d_ld_inv[s] * e_ld[(s, c)] * phi[c];
        }
    }

    let mut b_u = DMatrix::zeros(dim, m + n);
    for k in 0..m {
        match gov_slot[k] {
            Some(s) => b_u[(x4 + s, k)] = 1.0 / case.gen(k).gov_time_const,
            None => b_u[(x2 + k, k)] = m_inv[k],
        }
    }
    for (j, slot) in load_slot.iter().enumerate() {
        if let Some(s) = *slot {
            b_u[(x3 + s, m + j)] = d_ld_inv[s];
        }
    }

    let mut c_y = DMatrix::zeros(m, dim);
    for k in 0..m {
        c_y[(k, x2 + k)] = 1.0;
    }
    let mut c_z = DMatrix::zeros(l, dim);
    for c in 0..l {
        for k in 0..m {
            c_z[(c, k)] = e_g[(k, c)];
        }
        for s in 0..dyn_loads {
            c_z[(c, x3 + s)] = e_ld[(s, c)];
        }
    }

    let sys = LureSystem {
        a,
        b_v,
        b_u,
        c_y,
        c_z,
        phi_star: eq.phi_star.clone(),
        dims,
        load_slot,
        gov_slot,
        has_infinite_bus: case.has_infinite_bus(),
    };
    sys.check_small_signal_stability()?;
    Ok(sys)
}

impl LureSystem {
    /// Right and left eigenvectors of the structural zero eigenvalue
    /// (uniform angle shift), or `None` when an infinite bus pins the angles
    /// and `A` is Hurwitz.
    ///
    /// The left eigenvector has the closed form
    /// `w = [D_G + R^-1 (governed); M; D_L; T]`, which the tests verify
    /// against `A^T w = 0`.
    pub fn shift_mode(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        if self.has_infinite_bus {
            return None;
        }
        let d = &self.dims;
        let dim = d.state_dim();
        let mut v = DVector::zeros(dim);
        for k in 0..d.gens {
            v[k] = 1.0;
        }
        for s in 0..d.dyn_loads {
            v[d.x3_offset() + s] = 1.0;
        }

        // Recover the parameters from the matrix blocks themselves: the x2'
        // diagonal is -D/M and B_u carries 1/M or 1/T.
        let mut w = DVector::zeros(dim);
        let (x2, x3, x4) = (d.x2_offset(), d.x3_offset(), d.x4_offset());
        for k in 0..d.gens {
            let (m_k, t_k) = match self.gov_slot[k] {
                Some(s) => {
                    // a[(x2+k, x4+s)] = 1/M
                    (1.0 / self.a[(x2 + k, x4 + s)], 1.0 / self.b_u[(x4 + s, k)])
                }
                None => (1.0 / self.b_u[(x2 + k, k)], 0.0),
            };
            let d_k = -self.a[(x2 + k, x2 + k)] * m_k;
            let r_inv = match self.gov_slot[k] {
                Some(s) => -self.a[(x4 + s, x2 + k)] * t_k,
                None => 0.0,
            };
            w[k] = d_k + r_inv;
            w[x2 + k] = m_k;
            if let Some(s) = self.gov_slot[k] {
                w[x4 + s] = t_k;
            }
        }
        for (j, slot) in self.load_slot.iter().enumerate() {
            if let Some(s) = *slot {
                w[x3 + s] = 1.0 / self.b_u[(x3 + s, d.gens + j)];
            }
        }
        Some((v, w))
    }

    fn check_small_signal_stability(&self) -> Result<()> {
        let eigs = self.a.complex_eigenvalues();
        let expected_marginal = usize::from(!self.has_infinite_bus);
        let mut marginal = 0usize;
        let mut worst: Option<(f64, f64)> = None;
        for e in eigs.iter() {
            if e.re >= -EIG_TOL {
                // The structural mode is an exact zero up to roundoff.
                if e.norm() <= EIG_TOL && marginal < expected_marginal {
                    marginal += 1;
                    continue;
                }
                if worst.map(|(re, _)| e.re > re).unwrap_or(true) {
                    worst = Some((e.re, e.im));
                }
            }
        }
        if let Some((re, im)) = worst {
            return Err(Error::SmallSignalUnstable { re, im });
        }
        Ok(())
    }
}
