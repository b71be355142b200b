//! Maximum admissible disturbance magnitude by convex optimization.
//!
//! The problem: maximize `mu <= c^T ubar` over `ubar >= 0`, `zbar >= 0`
//! subject to the certificate inequalities in their sinusoidal form
//!
//! ```text
//! gamma_zu ubar <= (I - gamma_zv diag(cos phi*)) zbar
//!                  - gamma_zv sin|phi*| + gamma_zv sin(|phi*| + zbar)
//! gamma_yu ubar + gamma_yv (diag(cos phi*) zbar - sin(|phi*|+zbar) + sin|phi*|) <= ybar
//! ```
//!
//! which are convex on the box `0 <= zbar_i <= pi - |phi*_i|`. The solver is
//! a two-level scheme: for fixed `zbar` the inner problem in `ubar` is a
//! row-minimum of linear ratios (direction-coupled mode, `ubar = s chat`) or
//! a small linear program (free mode); the outer concave maximization over
//! `zbar` runs projected supergradient ascent from several deterministic
//! starts, followed by a coordinate golden-section polish. Every returned
//! solution re-validates through [`crate::cert::check_cico`].

use nalgebra::{DMatrix, DVector};

use crate::cert::{check_cico, CertificateResult};
use crate::error::{Error, Result};
use crate::gain::GainMatrices;

/// Feasibility guard on the strict inequality rows, comfortably above
/// [`crate::cert::EPS_STRICT`] so re-validation cannot flip on rounding.
const GUARD_Z: f64 = 1e-8;
/// Guard on the non-strict frequency rows.
const GUARD_Y: f64 = 1e-10;

/// Problem data for the maximum-disturbance program.
#[derive(Debug, Clone)]
pub struct OptProblem {
    pub gains: GainMatrices,
    pub phi_star: DVector<f64>,
    /// Disturbance direction c >= 0 (one entry per bus, gens first); fixes
    /// the ratio of the disturbance entering at each bus.
    pub direction: DVector<f64>,
    /// Frequency limits (Hz, per generator); `+inf` disables a row.
    pub ybar: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionMode {
    /// `ubar = mu * c / |c|`: one scalar magnitude along the direction.
    Coupled,
    /// `ubar` free; maximize `c^T ubar` by linear programming.
    Free,
}

#[derive(Debug, Clone)]
pub struct SolverStats {
    pub iterations: usize,
    pub starts: usize,
    /// Smallest finite certificate margin of the returned point.
    pub min_margin: f64,
}

#[derive(Debug, Clone)]
pub struct OptSolution {
    /// Certified objective value `c^T ubar_star`.
    pub mu_star: f64,
    pub ubar_star: DVector<f64>,
    pub zbar_star: DVector<f64>,
    /// Re-validated certificate; always `cico_ok`.
    pub certificate: CertificateResult,
    pub stats: SolverStats,
}

/// One point of the `mu(zbar)` sweep curve.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// Scalar grid value (uniform zbar across lines, or the scale of the
    /// box-proportional pattern).
    pub zbar: f64,
    /// Maximum certified magnitude at this zbar (0 when infeasible).
    pub mu: f64,
    /// Constraint row that limits mu: `Some(i)` is line i for `i < l`,
    /// generator `i - l` otherwise.
    pub binding_row: Option<usize>,
    /// Slack of the runner-up row (how far from a second binding row), or
    /// the worst violation when infeasible.
    pub margin: f64,
    /// Largest predicted frequency bound across generators at this point
    /// (Hz); the certified `ybar(zbar)` curve.
    pub y_bound: f64,
}

impl OptProblem {
    pub fn lines(&self) -> usize {
        self.phi_star.len()
    }
    pub fn gens(&self) -> usize {
        self.ybar.len()
    }

    /// Per-line domain box `0 <= zbar_i <= pi - |phi*_i|`.
    pub fn zbar_box(&self) -> DVector<f64> {
        self.phi_star.map(|p| std::f64::consts::PI - p.abs())
    }

    fn validate(&self) -> Result<()> {
        let g = &self.gains;
        if self.direction.len() != g.inputs() {
            return Err(Error::InvalidConfig(format!(
                "direction has {} entries, the case has {} buses",
                self.direction.len(),
                g.inputs()
            )));
        }
        if self.direction.iter().any(|&v| v < 0.0 || !v.is_finite())
            || self.direction.amax() == 0.0
        {
            return Err(Error::DegenerateDirection);
        }
        if self.ybar.len() != g.gens() {
            return Err(Error::InvalidConfig(format!(
                "ybar must have one entry per generator ({})",
                g.gens()
            )));
        }
        for (i, &v) in self.ybar.iter().enumerate() {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::InfeasibleYbar { row: i, value: v });
            }
        }
        if self.phi_star.len() != g.lines() {
            return Err(Error::InvalidConfig(
                "phi* must have one entry per line".into(),
            ));
        }
        Ok(())
    }
}

/// Convex-form constraint evaluation shared by the inner solvers: right-hand
/// sides `r1(zbar)` (z rows) and `r2(zbar)` (y rows), plus `q(zbar)` with
/// `q_k = gamma_psi,kk(zbar_k) * zbar_k` and its derivative.
struct ConstraintSurface<'a> {
    p: &'a OptProblem,
}

impl ConstraintSurface<'_> {
    fn q(&self, zbar: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            zbar.len(),
            zbar.iter().zip(self.p.phi_star.iter()).map(|(&z, &ps)| {
                let a = ps.abs();
                if z < 1e-7 {
                    // Series of cos(a) z - sin(a+z) + sin(a).
                    z * z / 2.0 * a.sin() + z * z * z / 6.0 * a.cos()
                } else {
                    a.cos() * z - (a + z).sin() + a.sin()
                }
            }),
        )
    }

    fn q_prime(&self, zbar: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            zbar.len(),
            zbar.iter()
                .zip(self.p.phi_star.iter())
                .map(|(&z, &ps)| ps.abs().cos() - (ps.abs() + z).cos()),
        )
    }

    /// (r1, r2): certificate headroom of each row before any disturbance.
    fn headroom(&self, zbar: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let q = self.q(zbar);
        let r1 = zbar - &self.p.gains.zv * &q;
        let r2 = &self.p.ybar - &self.p.gains.yv * &q;
        (r1, r2)
    }
}

/// Inner maximization for fixed `zbar` in direction-coupled mode: the
/// largest `s >= 0` with `s * coef <= headroom - guard` row-wise. Returns
/// `(s, binding_row, runner_up_slack)`; `s = 0` with the violated row when
/// infeasible.
fn inner_coupled(
    surface: &ConstraintSurface,
    coef_z: &DVector<f64>,
    coef_y: &DVector<f64>,
    zbar: &DVector<f64>,
) -> (f64, Option<usize>, f64) {
    let (r1, r2) = surface.headroom(zbar);
    let l = r1.len();
    let mut violation: Option<(usize, f64)> = None;
    let mut bounds: Vec<(usize, f64)> = Vec::new();
    let mut consider = |row: usize, avail: f64, coef: f64| {
        if coef > 1e-300 {
            bounds.push((row, avail / coef));
        } else if avail < 0.0 {
            // Unreachable row already violated: no s >= 0 is feasible.
            let worse = violation.map(|(_, v)| avail < v).unwrap_or(true);
            if worse {
                violation = Some((row, avail));
            }
        }
    };
    for i in 0..l {
        consider(i, r1[i] - GUARD_Z, coef_z[i]);
    }
    for i in 0..coef_y.len() {
        if self_finite(r2[i]) {
            consider(l + i, r2[i] - GUARD_Y, coef_y[i]);
        }
    }
    if let Some((row, avail)) = violation {
        return (0.0, Some(row), avail);
    }
    bounds.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let Some(&(row, bound)) = bounds.first() else {
        // No row constrains s: the direction has no effect at all.
        return (f64::INFINITY, None, f64::INFINITY);
    };
    let s = bound.max(0.0);
    let binding = Some(row);
    let runner_up = bounds
        .get(1)
        .map(|&(_, b)| (b - s).max(0.0) * coef_of(binding, coef_z, coef_y))
        .unwrap_or(f64::INFINITY);
    (s, binding, runner_up)
}

fn coef_of(row: Option<usize>, coef_z: &DVector<f64>, coef_y: &DVector<f64>) -> f64 {
    match row {
        Some(i) if i < coef_z.len() => coef_z[i],
        Some(i) => coef_y[i - coef_z.len()],
        None => 1.0,
    }
}

fn self_finite(v: f64) -> bool {
    v.is_finite()
}

/// Maximizes the admissible disturbance magnitude.
///
/// In `Coupled` mode the whole disturbance scales along `c/|c|`; in `Free`
/// mode each bus magnitude is free and only the objective weighs them.
/// Multi-start concave ascent over `zbar`; the result carries a
/// re-validated CICO certificate (never an uncertified point).
pub fn max_disturbance(p: &OptProblem, mode: DirectionMode) -> Result<OptSolution> {
    p.validate()?;
    let surface = ConstraintSurface { p };
    let hi = p.zbar_box();
    let l = p.lines();
    let chat = &p.direction / p.direction.norm();
    let coef_z = &p.gains.zu * &chat;
    let coef_y = &p.gains.yu * &chat;

    // Objective and supergradient at fixed zbar.
    let mut iterations = 0usize;
    let mut evaluate = |zbar: &DVector<f64>| -> Result<(f64, DVector<f64>, Option<usize>)> {
        iterations += 1;
        match mode {
            DirectionMode::Coupled => {
                let (s, binding, _) = inner_coupled(&surface, &coef_z, &coef_y, zbar);
                if s == 0.0 || !s.is_finite() {
                    return Ok((s, DVector::zeros(l), binding));
                }
                let qp = surface.q_prime(zbar);
                let grad = match binding {
                    Some(i) if i < l => {
                        let mut g = DVector::zeros(l);
                        for k in 0..l {
                            g[k] = (if k == i { 1.0 } else { 0.0 })
                                - p.gains.zv[(i, k)] * qp[k];
                        }
                        g / coef_z[i]
                    }
                    Some(i) => {
                        let i = i - l;
                        let mut g = DVector::zeros(l);
                        for k in 0..l {
                            g[k] = -p.gains.yv[(i, k)] * qp[k];
                        }
                        g / coef_y[i]
                    }
                    None => DVector::zeros(l),
                };
                Ok((s, grad, binding))
            }
            DirectionMode::Free => {
                let (r1, r2) = surface.headroom(zbar);
                let mut b = DVector::zeros(l + p.gens());
                let mut rows = DMatrix::zeros(l + p.gens(), p.gains.inputs());
                for i in 0..l {
                    b[i] = r1[i] - GUARD_Z;
                    rows.row_mut(i).copy_from(&p.gains.zu.row(i));
                }
                for i in 0..p.gens() {
                    let avail = if r2[i].is_finite() { r2[i] - GUARD_Y } else { f64::MAX };
                    b[l + i] = avail;
                    rows.row_mut(l + i).copy_from(&p.gains.yu.row(i));
                }
                if b.iter().any(|&v| v < 0.0) {
                    return Ok((0.0, DVector::zeros(l), None));
                }
                let lp = simplex::maximize(&p.direction, &rows, &b)?;
                let lp = match lp {
                    simplex::LpOutcome::Optimal { value, x, duals } => (value, x, duals),
                    simplex::LpOutcome::Unbounded => {
                        return Err(Error::InvalidConfig(
                            "free-mode objective is unbounded: the weighted buses have zero gain columns (disturbances there never affect the outputs)"
                                .into(),
                        ))
                    }
                };
                let (value, _x, duals) = lp;
                let qp = surface.q_prime(zbar);
                let mut grad = DVector::zeros(l);
                for k in 0..l {
                    let mut g = 0.0;
                    for i in 0..l {
                        if duals[i] != 0.0 {
                            let dr = (if k == i { 1.0 } else { 0.0 })
                                - p.gains.zv[(i, k)] * qp[k];
                            g += duals[i] * dr;
                        }
                    }
                    for i in 0..p.gens() {
                        if duals[l + i] != 0.0 && b[l + i] != f64::MAX {
                            g -= duals[l + i] * p.gains.yv[(i, k)] * qp[k];
                        }
                    }
                    grad[k] = g;
                }
                Ok((value, grad, None))
            }
        }
    };

    // Deterministic multi-start projected supergradient ascent.
    let fractions = [0.05, 0.15, 0.25, 0.35, 0.5, 0.65, 0.8, 0.92];
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut candidates: Vec<(f64, DVector<f64>)> = Vec::new();
    for &frac in &fractions {
        let mut z: DVector<f64> = &hi * frac;
        let mut local_best = (0.0f64, z.clone());
        for it in 0..300 {
            let (f, grad, _) = evaluate(&z)?;
            if !f.is_finite() {
                return Err(Error::InvalidConfig(
                    "direction has no effect on the network (all gain columns zero); the bound is unbounded"
                        .into(),
                ));
            }
            if f > local_best.0 {
                local_best = (f, z.clone());
            }
            if f == 0.0 {
                // Infeasible here: pull back toward the origin.
                z *= 0.6;
                continue;
            }
            let gn = grad.norm();
            if gn < 1e-14 {
                break;
            }
            let step = 0.4 * hi.amax() / (1.0 + it as f64).sqrt();
            z += grad * (step / gn);
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = zk.clamp(0.0, hi[k]);
            }
        }
        candidates.push(local_best.clone());
        if best.as_ref().map(|(f, _)| local_best.0 > *f).unwrap_or(true) {
            best = Some(local_best);
        }
    }
    let (_, mut z_best) = best.ok_or_else(|| Error::InvalidConfig("optimizer found no candidate".into()))?;

    // Coordinate golden-section polish (the objective is quasiconcave along
    // every coordinate within the box).
    let mut f_best = evaluate(&z_best)?.0;
    for _ in 0..4 {
        for k in 0..l {
            let mut lo = 0.0;
            let mut hi_k = hi[k];
            let eval_at = |zk: f64, z: &DVector<f64>, ev: &mut dyn FnMut(&DVector<f64>) -> Result<f64>| -> Result<f64> {
                let mut zc = z.clone();
                zc[k] = zk;
                ev(&zc)
            };
            let mut ev = |z: &DVector<f64>| -> Result<f64> { Ok(evaluate(z)?.0) };
            const INV_PHI: f64 = 0.618_033_988_749_894_9;
            let mut x1 = hi_k - INV_PHI * (hi_k - lo);
            let mut x2 = lo + INV_PHI * (hi_k - lo);
            let mut f1 = eval_at(x1, &z_best, &mut ev)?;
            let mut f2 = eval_at(x2, &z_best, &mut ev)?;
            for _ in 0..60 {
                if hi_k - lo < 1e-10 {
                    break;
                }
                if f1 < f2 {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + INV_PHI * (hi_k - lo);
                    f2 = eval_at(x2, &z_best, &mut ev)?;
                } else {
                    hi_k = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi_k - INV_PHI * (hi_k - lo);
                    f1 = eval_at(x1, &z_best, &mut ev)?;
                }
            }
            let (zk, fk) = if f1 > f2 { (x1, f1) } else { (x2, f2) };
            if fk > f_best {
                f_best = fk;
                z_best[k] = zk;
            }
        }
    }
    candidates.push((f_best, z_best.clone()));

    // Tie-break near-optimal candidates by the certificate's worst margin.
    let f_top = candidates
        .iter()
        .map(|(f, _)| *f)
        .fold(0.0f64, f64::max);
    if f_top <= 0.0 {
        return Err(Error::InvalidConfig(
            "no strictly feasible point found: the small-gain condition fails on the whole zbar box"
                .into(),
        ));
    }
    let mut chosen: Option<(f64, OptSolution)> = None;
    for (f, z) in candidates
        .iter()
        .filter(|(f, _)| *f >= f_top * (1.0 - 1e-9))
    {
        let sol = finish_solution(p, mode, &surface, &coef_z, &coef_y, &chat, z, *f)?;
        let margin = sol.stats.min_margin;
        if chosen.as_ref().map(|(m, _)| margin > *m).unwrap_or(true) {
            chosen = Some((margin, sol));
        }
    }
    let (_, mut sol) = chosen.expect("at least one candidate survives");
    sol.stats.iterations = iterations;
    sol.stats.starts = fractions.len();
    Ok(sol)
}

/// Builds and re-validates the certificate at the chosen `zbar`.
#[allow(clippy::too_many_arguments)]
fn finish_solution(
    p: &OptProblem,
    mode: DirectionMode,
    surface: &ConstraintSurface,
    coef_z: &DVector<f64>,
    coef_y: &DVector<f64>,
    chat: &DVector<f64>,
    zbar: &DVector<f64>,
    _f: f64,
) -> Result<OptSolution> {
    let ubar = match mode {
        DirectionMode::Coupled => {
            let (s, _, _) = inner_coupled(surface, coef_z, coef_y, zbar);
            chat * s
        }
        DirectionMode::Free => {
            let (r1, r2) = surface.headroom(zbar);
            let l = p.lines();
            let mut b = DVector::zeros(l + p.gens());
            let mut rows = DMatrix::zeros(l + p.gens(), p.gains.inputs());
            for i in 0..l {
                b[i] = r1[i] - GUARD_Z;
                rows.row_mut(i).copy_from(&p.gains.zu.row(i));
            }
            for i in 0..p.gens() {
                b[l + i] = if r2[i].is_finite() { r2[i] - GUARD_Y } else { f64::MAX };
                rows.row_mut(l + i).copy_from(&p.gains.yu.row(i));
            }
            match simplex::maximize(&p.direction, &rows, &b)? {
                simplex::LpOutcome::Optimal { x, .. } => x,
                simplex::LpOutcome::Unbounded => {
                    return Err(Error::InvalidConfig("free-mode objective is unbounded".into()))
                }
            }
        }
    };

    // Re-validate; on a rounding edge, shrink slightly and retry.
    let mut scale = 1.0;
    for attempt in 0..6 {
        let u_try = &ubar * scale;
        let cert = check_cico(&p.gains, &p.phi_star, &u_try, zbar, &p.ybar)?;
        if cert.cico_ok {
            let min_margin = cert
                .margins
                .z
                .iter()
                .chain(cert.margins.y.iter())
                .filter(|m| m.is_finite())
                .fold(f64::INFINITY, |a, &b| a.min(b));
            let mu_star = p.direction.dot(&u_try);
            return Ok(OptSolution {
                mu_star,
                ubar_star: u_try,
                zbar_star: zbar.clone(),
                certificate: cert,
                stats: SolverStats {
                    iterations: 0,
                    starts: 0,
                    min_margin,
                },
            });
        }
        scale *= 1.0 - 1e-7 * 10f64.powi(attempt);
    }
    Err(Error::InvalidConfig(
        "optimizer could not certify its own solution (unexpected rounding)".into(),
    ))
}

/// Certified `mu(zbar)` curve over a scalar grid.
///
/// `uniform = true` replicates each grid value across all lines; otherwise
/// the grid value scales the box-proportional pattern
/// `(pi - |phi*|) / max(pi - |phi*|)`. Infeasible points report `mu = 0`.
pub fn sweep_zbar(p: &OptProblem, zbar_grid: &[f64], uniform: bool) -> Result<Vec<SweepPoint>> {
    p.validate()?;
    if zbar_grid.is_empty() {
        return Err(Error::InvalidConfig("zbar grid is empty".into()));
    }
    let hi = p.zbar_box();
    let pattern: DVector<f64> = if uniform {
        DVector::from_element(p.lines(), 1.0)
    } else {
        &hi / hi.amax()
    };
    let max_scale = (0..p.lines())
        .map(|k| hi[k] / pattern[k])
        .fold(f64::INFINITY, f64::min);
    for &s in zbar_grid {
        if !(0.0..=max_scale + 1e-12).contains(&s) {
            return Err(Error::InvalidConfig(format!(
                "grid value {s} leaves the convexity domain (max {max_scale:.6})"
            )));
        }
    }

    let surface = ConstraintSurface { p };
    let chat = &p.direction / p.direction.norm();
    let coef_z = &p.gains.zu * &chat;
    let coef_y = &p.gains.yu * &chat;
    let cnorm = p.direction.norm();

    let mut out = Vec::with_capacity(zbar_grid.len());
    for &s in zbar_grid {
        let zbar = &pattern * s;
        let (smax, binding, margin) = inner_coupled(&surface, &coef_z, &coef_y, &zbar);
        let smax = if smax.is_finite() { smax } else { 0.0 };
        let q = surface.q(&zbar);
        let y_pred = &p.gains.yu * (&chat * smax) + &p.gains.yv * q;
        out.push(SweepPoint {
            zbar: s,
            mu: smax * cnorm,
            binding_row: binding,
            margin,
            y_bound: y_pred.amax(),
        });
    }
    Ok(out)
}

/// Dense-tableau primal simplex with Bland's rule for
/// `max c^T x  s.t.  A x <= b, x >= 0` with `b >= 0`.
mod simplex {
    use super::*;

    pub enum LpOutcome {
        Optimal {
            value: f64,
            x: DVector<f64>,
            /// Dual multipliers of the row constraints.
            duals: DVector<f64>,
        },
        Unbounded,
    }

    pub fn maximize(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LpOutcome> {
        let m = a.nrows();
        let n = a.ncols();
        assert_eq!(c.len(), n);
        assert_eq!(b.len(), m);
        debug_assert!(b.iter().all(|&v| v >= 0.0), "slack basis needs b >= 0");

        // Tableau: [A | I | b], objective row [-c | 0 | 0].
        let mut t = DMatrix::zeros(m + 1, n + m + 1);
        t.view_mut((0, 0), (m, n)).copy_from(a);
        for i in 0..m {
            t[(i, n + i)] = 1.0;
            t[(i, n + m)] = b[i];
        }
        for j in 0..n {
            t[(m, j)] = -c[j];
        }
        let mut basis: Vec<usize> = (n..n + m).collect();

        for _pivot in 0..10_000 {
            // Bland: smallest-index column with a negative reduced cost.
            let Some(enter) = (0..n + m).find(|&j| t[(m, j)] < -1e-11) else {
                break;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let aij = t[(i, enter)];
                if aij > 1e-11 {
                    let ratio = t[(i, n + m)] / aij;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - 1e-15 || (ratio <= lr + 1e-15 && basis[i] < basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((li, _)) = leave else {
                return Ok(LpOutcome::Unbounded);
            };
            // Pivot.
            let piv = t[(li, enter)];
            for j in 0..n + m + 1 {
                t[(li, j)] /= piv;
            }
            for i in 0..m + 1 {
                if i != li {
                    let f = t[(i, enter)];
                    if f != 0.0 {
                        for j in 0..n + m + 1 {
                            t[(i, j)] -= f * t[(li, j)];
                        }
                    }
                }
            }
            basis[li] = enter;
        }

        let mut x = DVector::zeros(n);
        for (i, &bv) in basis.iter().enumerate() {
            if bv < n {
                x[bv] = t[(i, n + m)];
            }
        }
        let duals = DVector::from_iterator(m, (0..m).map(|i| t[(m, n + i)]));
        Ok(LpOutcome::Optimal {
            value: t[(m, n + m)],
            x,
            duals,
        })
    }
}
