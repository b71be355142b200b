//! Element-wise L-infinity induced gains.
//!
//! For the linear block, the gain of channel (i, j) is the L1 norm of its
//! impulse response, `integral |h_ij(tau)| d tau`. Each input column is
//! integrated once with a fixed-step classical Runge-Kutta scheme and the
//! per-output integrals are accumulated with a derivative-corrected
//! trapezoid rule; steps containing a sign change are re-integrated with
//! substeps so the kink of |h| is resolved. The truncated tail is bounded by
//! an exponential envelope fitted to the decaying state norm, and reported
//! in [`GainMatrices::tail_bound`].
//!
//! The structural uniform-shift mode (when present) is deflated from the
//! initial state before integrating; the outputs are blind to it, so this
//! changes nothing except that the state now decays to zero.
//!
//! Frequency outputs are reported in Hz: the `y` rows are scaled by
//! `1/(2 pi)` relative to the rad/s state, and every `ybar` consumed
//! downstream is in Hz as well.
//!
//! For the sector nonlinearity, both the exact supremum of
//! `|(sin(phi*+z)-sin(phi*))/z - cos(phi*)|` over `|z| <= zbar` and the
//! closed-form upper bound used by the certificates are provided.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lure::LureSystem;

const TWO_PI: f64 = std::f64::consts::TAU;

/// The four nonnegative gain blocks of the linear part.
#[derive(Debug, Clone)]
pub struct GainMatrices {
    /// m x (m+n): disturbance -> generator frequency (Hz per pu).
    pub yu: DMatrix<f64>,
    /// m x l: nonlinearity -> generator frequency.
    pub yv: DMatrix<f64>,
    /// l x (m+n): disturbance -> line-angle deviation (rad per pu).
    pub zu: DMatrix<f64>,
    /// l x l: nonlinearity -> line-angle deviation.
    pub zv: DMatrix<f64>,
    /// Certified upper bound on the truncation error of every entry.
    pub tail_bound: f64,
}

impl GainMatrices {
    pub fn gens(&self) -> usize {
        self.yu.nrows()
    }
    pub fn lines(&self) -> usize {
        self.zv.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.yu.ncols()
    }
}

struct ColumnGains {
    /// One integral per output row (y rows first, then z rows).
    integrals: Vec<f64>,
    /// Tail bound on this column's integrals (max over rows).
    tail: f64,
}

/// Fixed-step impulse-response quadrature for one linear system.
struct ImpulseQuadrature<'a> {
    a: &'a DMatrix<f64>,
    c_all: &'a DMatrix<f64>,
    c_row_norms: Vec<f64>,
    step: f64,
    /// Terminate when the state norm falls below `stop_frac` times its peak.
    stop_frac: f64,
    max_time: f64,
    /// Substeps used to resolve a step containing a sign change.
    crossing_substeps: usize,
}

impl<'a> ImpulseQuadrature<'a> {
    fn new(a: &'a DMatrix<f64>, c_all: &'a DMatrix<f64>, step: f64, stop_frac: f64, max_time: f64) -> Self {
        let c_row_norms = (0..c_all.nrows())
            .map(|i| c_all.row(i).norm())
            .collect();
        ImpulseQuadrature {
            a,
            c_all,
            c_row_norms,
            step,
            stop_frac,
            max_time,
            crossing_substeps: 16,
        }
    }

    fn rk4_step(&self, x: &DVector<f64>, k1: &DVector<f64>, h: f64) -> DVector<f64> {
        let k2 = self.a * (x + k1 * (h / 2.0));
        let k3 = self.a * (x + &k2 * (h / 2.0));
        let k4 = self.a * (x + &k3 * h);
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    /// Derivative-corrected trapezoid of |y| over one interval with no
    /// interior sign change.
    fn same_sign_piece(y0: f64, dy0: f64, y1: f64, dy1: f64, h: f64) -> f64 {
        ((y0 + y1) * h / 2.0 + (dy0 - dy1) * h * h / 12.0).abs()
    }

    /// Exact integral of the linear interpolant's absolute value across a
    /// sign change.
    fn crossing_piece(y0: f64, y1: f64, h: f64) -> f64 {
        let denom = y0.abs() + y1.abs();
        if denom == 0.0 {
            0.0
        } else {
            h * (y0 * y0 + y1 * y1) / (2.0 * denom)
        }
    }

    fn column(&self, column: usize, x0: DVector<f64>) -> Result<ColumnGains> {
        let rows = self.c_all.nrows();
        if x0.amax() == 0.0 {
            return Ok(ColumnGains {
                integrals: vec![0.0; rows],
                tail: 0.0,
            });
        }

        let h = self.step;
        let mut acc = vec![0.0; rows];
        let mut x = x0;
        let mut ax = self.a * &x;
        let mut y = self.c_all * &x;
        let mut dy = self.c_all * &ax;

        let mut t = 0.0;
        let mut peak = x.norm();
        // Decimated history of (t, |x|) for the envelope fit.
        let mut hist: Vec<(f64, f64)> = Vec::with_capacity(2048);
        let mut hist_stride = 1usize;
        let mut step_count = 0usize;

        loop {
            let x_next = self.rk4_step(&x, &ax, h);
            let ax_next = self.a * &x_next;
            let y_next = self.c_all * &x_next;
            let dy_next = self.c_all * &ax_next;

            let any_crossing = (0..rows).any(|i| y[i] * y_next[i] < 0.0);
            if !any_crossing {
                for i in 0..rows {
                    acc[i] += Self::same_sign_piece(y[i], dy[i], y_next[i], dy_next[i], h);
                }
            } else {
                let hs = h / self.crossing_substeps as f64;
                let mut xs = x.clone();
                let mut axs = ax.clone();
                let mut ys = y.clone();
                let mut dys = dy.clone();
                for _ in 0..self.crossing_substeps {
                    let xs1 = self.rk4_step(&xs, &axs, hs);
                    let axs1 = self.a * &xs1;
                    let ys1 = self.c_all * &xs1;
                    let dys1 = self.c_all * &axs1;
                    for i in 0..rows {
                        if ys[i] * ys1[i] < 0.0 {
                            acc[i] += Self::crossing_piece(ys[i], ys1[i], hs);
                        } else {
                            acc[i] += Self::same_sign_piece(ys[i], dys[i], ys1[i], dys1[i], hs);
                        }
                    }
                    xs = xs1;
                    axs = axs1;
                    ys = ys1;
                    dys = dys1;
                }
            }

            x = x_next;
            ax = ax_next;
            y = y_next;
            dy = dy_next;
            t += h;
            step_count += 1;

            let norm = x.norm();
            if !norm.is_finite() {
                return Err(Error::NonDecayingImpulse { column });
            }
            peak = peak.max(norm);
            if step_count.is_multiple_of(hist_stride) {
                hist.push((t, norm));
                if hist.len() == 4096 {
                    let kept: Vec<_> = hist.iter().copied().step_by(2).collect();
                    hist = kept;
                    hist_stride *= 2;
                }
            }

            if norm <= self.stop_frac * peak {
                break;
            }
            if t > self.max_time {
                return Err(Error::NonDecayingImpulse { column });
            }
        }

        let tail_state = self.tail_state_integral(&hist, t, column)?;
        let tail = self
            .c_row_norms
            .iter()
            .fold(0.0f64, |m, &c| m.max(c * tail_state));
        Ok(ColumnGains {
            integrals: acc,
            tail,
        })
    }

    /// Bound on `integral_t^inf |x(s)| ds` from an exponential envelope
    /// fitted to the tail of the recorded state-norm history.
    fn tail_state_integral(&self, hist: &[(f64, f64)], t_end: f64, column: usize) -> Result<f64> {
        // Fit over the last stretch of the decay, at least 8 points.
        let window = hist.len().max(16) / 4;
        let start = hist.len().saturating_sub(window.max(8));
        let pts: Vec<(f64, f64)> = hist[start..]
            .iter()
            .filter(|&&(_, n)| n > 0.0)
            .map(|&(t, n)| (t, n.ln()))
            .collect();
        if pts.len() < 4 {
            // Degenerate history: the run terminated almost immediately, so
            // the remaining mass is below resolution anyway.
            return Ok(0.0);
        }
        let n = pts.len() as f64;
        let (st, sl): (f64, f64) = pts.iter().fold((0.0, 0.0), |(a, b), &(t, l)| (a + t, b + l));
        let (stt, stl): (f64, f64) = pts
            .iter()
            .fold((0.0, 0.0), |(a, b), &(t, l)| (a + t * t, b + t * l));
        let denom = n * stt - st * st;
        if denom <= 0.0 {
            return Err(Error::NonDecayingImpulse { column });
        }
        let slope = (n * stl - st * sl) / denom;
        let sigma = -slope;
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(Error::NonDecayingImpulse { column });
        }
        // Anchor the envelope at t_end so it dominates every fitted sample.
        let k_env = pts
            .iter()
            .map(|&(t, l)| (l + sigma * (t - t_end)).exp())
            .fold(0.0f64, f64::max);
        Ok(k_env / sigma)
    }
}

/// Spectral data of the linear block used to pick the step and the horizon.
fn eigen_scales(sys: &LureSystem) -> Result<(f64, f64)> {
    let eigs = sys.a.complex_eigenvalues();
    let lambda_max = eigs.iter().map(|e| e.norm()).fold(0.0f64, f64::max);
    let sigma_min = eigs
        .iter()
        .filter(|e| e.re < -crate::lure::EIG_TOL)
        .map(|e| -e.re)
        .fold(f64::INFINITY, f64::min);
    if !sigma_min.is_finite() || sigma_min <= 0.0 {
        return Err(Error::NonDecayingImpulse { column: 0 });
    }
    Ok((lambda_max, sigma_min))
}

/// Computes the four gain blocks of the linear part of `sys`.
///
/// `rel_tol` controls both the termination of each impulse simulation (state
/// norm relative to its peak) and the intended relative accuracy of the
/// quadrature. Columns are evaluated concurrently; results do not depend on
/// the evaluation order.
pub fn linear_gains(sys: &LureSystem, rel_tol: f64) -> Result<GainMatrices> {
    if !(1e-12..=1e-2).contains(&rel_tol) {
        return Err(Error::InvalidConfig(format!(
            "gain rel_tol must lie in [1e-12, 1e-2], got {rel_tol}"
        )));
    }
    let m = sys.dims.gens;
    let l = sys.dims.lines;
    let inputs = sys.dims.inputs();

    let (lambda_max, sigma_min) = eigen_scales(sys)?;
    let step = (0.2 / lambda_max).min(1e-2);
    let max_time = 3.0 * (-rel_tol.ln() + 8.0) / sigma_min + 100.0 * step;

    // Stack the output rows: y rows in Hz first, then z rows.
    let mut c_all = DMatrix::zeros(m + l, sys.dims.state_dim());
    c_all.rows_mut(0, m).copy_from(&(&sys.c_y / TWO_PI));
    c_all.rows_mut(m, l).copy_from(&sys.c_z);

    let quad = ImpulseQuadrature::new(&sys.a, &c_all, step, rel_tol, max_time);
    let shift = sys.shift_mode();

    let deflate = |b: DVector<f64>| -> DVector<f64> {
        match &shift {
            Some((v0, w0)) => {
                let alpha = w0.dot(&b) / w0.dot(v0);
                b - v0 * alpha
            }
            None => b,
        }
    };

    let columns: Vec<DVector<f64>> = sys
        .b_u
        .column_iter()
        .chain(sys.b_v.column_iter())
        .map(|c| deflate(c.into_owned()))
        .collect();

    let results: Vec<Result<ColumnGains>> = columns
        .into_par_iter()
        .enumerate()
        .map(|(j, x0)| quad.column(j, x0))
        .collect();

    let mut yu = DMatrix::zeros(m, inputs);
    let mut yv = DMatrix::zeros(m, l);
    let mut zu = DMatrix::zeros(l, inputs);
    let mut zv = DMatrix::zeros(l, l);
    let mut tail_bound = 0.0f64;
    for (j, res) in results.into_iter().enumerate() {
        let col = res?;
        tail_bound = tail_bound.max(col.tail);
        for i in 0..m {
            if j < inputs {
                yu[(i, j)] = col.integrals[i];
            } else {
                yv[(i, j - inputs)] = col.integrals[i];
            }
        }
        for i in 0..l {
            if j < inputs {
                zu[(i, j)] = col.integrals[m + i];
            } else {
                zv[(i, j - inputs)] = col.integrals[m + i];
            }
        }
    }

    Ok(GainMatrices {
        yu,
        yv,
        zu,
        zv,
        tail_bound,
    })
}

/// DC gains of every channel (`|G(0)|` entries), mainly a diagnostic: each
/// L1 gain must dominate the matching entry. Solved by least squares so the
/// marginal shift mode (annihilated by the outputs) is harmless.
pub fn dc_gains(sys: &LureSystem) -> DMatrix<f64> {
    let m = sys.dims.gens;
    let l = sys.dims.lines;
    let inputs = sys.dims.inputs();
    let mut c_all = DMatrix::zeros(m + l, sys.dims.state_dim());
    c_all.rows_mut(0, m).copy_from(&(&sys.c_y / TWO_PI));
    c_all.rows_mut(m, l).copy_from(&sys.c_z);

    let shift = sys.shift_mode();
    let svd = sys.a.clone().svd(true, true);
    let mut out = DMatrix::zeros(m + l, inputs + l);
    for (j, b) in sys
        .b_u
        .column_iter()
        .chain(sys.b_v.column_iter())
        .enumerate()
    {
        let mut b = b.into_owned();
        if let Some((v0, w0)) = &shift {
            let alpha = w0.dot(&b) / w0.dot(v0);
            b -= v0 * alpha;
        }
        if let Ok(x) = svd.solve(&b, 1e-10) {
            let dc = -(&c_all * x);
            for i in 0..m + l {
                out[(i, j)] = dc[i].abs();
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Sector gains of the nonlinearity
// ---------------------------------------------------------------------------

/// Diagonal sector gain of the decentralized nonlinearity at a given `zbar`.
#[derive(Debug, Clone)]
pub struct SectorGain {
    /// gamma_psi,ii(zbar_i) >= 0, one entry per line.
    pub diag: DVector<f64>,
    /// The zbar at which it was evaluated (rad).
    pub zbar: DVector<f64>,
}

impl SectorGain {
    /// Closed-form upper bound (the form the certificates and the convex
    /// program use). Requires `|phi*_i| <= pi/2` and `|phi*_i| + zbar_i <= pi`.
    pub fn corollary(phi_star: &DVector<f64>, zbar: &DVector<f64>) -> Result<Self> {
        assert_eq!(phi_star.len(), zbar.len());
        let mut diag = DVector::zeros(zbar.len());
        for i in 0..zbar.len() {
            diag[i] = sector_gain_corollary(phi_star[i], zbar[i]).map_err(|e| match e {
                Error::CorollaryHypothesis { sum, .. } => {
                    Error::CorollaryHypothesis { line: i, sum }
                }
                Error::SectorViolation { phi_star, .. } => {
                    Error::SectorViolation { line: i, phi_star }
                }
                other => other,
            })?;
        }
        Ok(SectorGain {
            diag,
            zbar: zbar.clone(),
        })
    }

    /// Exact supremum per line (diagnostics; not used by the certificates).
    pub fn exact(phi_star: &DVector<f64>, zbar: &DVector<f64>) -> Self {
        assert_eq!(phi_star.len(), zbar.len());
        let diag = DVector::from_iterator(
            zbar.len(),
            phi_star
                .iter()
                .zip(zbar.iter())
                .map(|(&p, &z)| sector_gain_exact(p, z)),
        );
        SectorGain {
            diag,
            zbar: zbar.clone(),
        }
    }

    pub fn as_diagonal(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diag)
    }
}

/// Difference quotient of the nonlinearity, `(sin(a+z)-sin(a))/z - cos(a)`,
/// with the removable singularity at z = 0 handled by series.
fn diff_quotient(a: f64, z: f64) -> f64 {
    if z.abs() < 1e-5 {
        // (cos z - 1)/z and (sin z / z - 1) by series.
        let c = -z / 2.0 + z * z * z / 24.0;
        let s = -z * z / 6.0 + z * z * z * z / 120.0;
        a.sin() * c + a.cos() * s
    } else {
        a.sin() * ((z.cos() - 1.0) / z) + a.cos() * (z.sin() / z - 1.0)
    }
}

/// Exact sector gain: `sup over |z| <= zbar` of the absolute difference
/// quotient, by dense sampling plus golden-section polish of every local
/// maximum. Accurate to about 1e-10 in the returned supremum.
pub fn sector_gain_exact(phi_star_i: f64, zbar_i: f64) -> f64 {
    if zbar_i <= 0.0 {
        return 0.0;
    }
    let g = |z: f64| diff_quotient(phi_star_i, z).abs();
    let n = 4096usize;
    let hz = 2.0 * zbar_i / n as f64;
    let at = |k: usize| -zbar_i + k as f64 * hz;
    let samples: Vec<f64> = (0..=n).map(|k| g(at(k))).collect();

    let mut best = samples[0].max(samples[n]);
    for k in 1..n {
        if samples[k] >= samples[k - 1] && samples[k] >= samples[k + 1] {
            best = best.max(golden_max(&g, at(k - 1), at(k + 1)));
        }
    }
    best
}

/// Golden-section maximization on an interval (assumed unimodal there).
fn golden_max(g: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut g1 = g(x1);
    let mut g2 = g(x2);
    while hi - lo > 1e-13 {
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + INV_PHI * (hi - lo);
            g2 = g(x2);
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - INV_PHI * (hi - lo);
            g1 = g(x1);
        }
    }
    g1.max(g2)
}

/// Closed-form sector-gain bound
/// `cos|phi*| - (sin(|phi*| + zbar) - sin|phi*|)/zbar`.
///
/// Requires `|phi*| <= pi/2` and `|phi*| + zbar <= pi`; always dominates
/// [`sector_gain_exact`] on that domain.
pub fn sector_gain_corollary(phi_star_i: f64, zbar_i: f64) -> Result<f64> {
    let a = phi_star_i.abs();
    const SLACK: f64 = 1e-12;
    if a > std::f64::consts::FRAC_PI_2 + SLACK {
        return Err(Error::SectorViolation {
            line: 0,
            phi_star: phi_star_i,
        });
    }
    if zbar_i < 0.0 {
        return Err(Error::InvalidConfig(format!("zbar must be >= 0, got {zbar_i}")));
    }
    if a + zbar_i > std::f64::consts::PI + SLACK {
        return Err(Error::CorollaryHypothesis {
            line: 0,
            sum: a + zbar_i,
        });
    }
    let v = if zbar_i < 1e-7 {
        // Limit and leading series: gain -> 0 as zbar -> 0.
        zbar_i / 2.0 * a.sin() + zbar_i * zbar_i / 6.0 * a.cos()
    } else {
        a.cos() - ((a + zbar_i).sin() - a.sin()) / zbar_i
    };
    Ok(v.max(0.0))
}
