//! Adaptive embedded Runge-Kutta integration (Dormand-Prince 5(4)).
//!
//! The integrator reports every accepted step to an observer together with
//! the derivatives at both endpoints, so callers get free cubic-Hermite
//! dense output for peak refinement and uniform resampling.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OdeSettings {
    /// Relative tolerance per component.
    pub rtol: f64,
    /// Absolute tolerance per component.
    pub atol: f64,
    /// Upper bound on the step size.
    pub max_step: f64,
}

impl Default for OdeSettings {
    fn default() -> Self {
        OdeSettings {
            rtol: 1e-8,
            atol: 1e-10,
            max_step: f64::INFINITY,
        }
    }
}

/// One accepted step with endpoint derivatives.
pub struct Step<'a> {
    pub t0: f64,
    pub t1: f64,
    pub x0: &'a DVector<f64>,
    pub x1: &'a DVector<f64>,
    pub f0: &'a DVector<f64>,
    pub f1: &'a DVector<f64>,
}

impl Step<'_> {
    pub fn h(&self) -> f64 {
        self.t1 - self.t0
    }

    /// Cubic Hermite interpolant at `theta` in [0, 1].
    pub fn interpolate(&self, theta: f64) -> DVector<f64> {
        let h = self.h();
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        self.x0 * h00 + self.f0 * (h10 * h) + self.x1 * h01 + self.f1 * (h11 * h)
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
/// Difference between the 5th-order solution and the embedded 4th-order one.
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Integrates `dx/dt = f(t, x)` from `t0` to `t1`, invoking `observer` on
/// every accepted step. The observer may abort the run by returning an error.
pub fn integrate<F, O>(
    mut f: F,
    t0: f64,
    t1: f64,
    x0: DVector<f64>,
    settings: &OdeSettings,
    mut observer: O,
) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    O: FnMut(&Step) -> Result<()>,
{
    assert!(t1 > t0, "integration span must be positive");
    let dim = x0.len();
    let span = t1 - t0;

    let mut t = t0;
    let mut x = x0;
    let mut k1 = f(t, &x);

    // Initial step from the local scales; adaptivity corrects it quickly.
    // The floor matters when x0 = 0 under a large forcing term, where the
    // ratio alone would start below the underflow threshold.
    let d0 = x.norm() + settings.atol;
    let d1 = k1.norm() + settings.atol;
    let mut h = (0.01 * d0 / d1).min(span / 10.0).min(settings.max_step);
    if !h.is_finite() || h <= 0.0 {
        h = span / 100.0;
    }
    h = h.max((1e-6 * span.min(1.0)).min(settings.max_step));

    let mut k = vec![DVector::zeros(dim); 7];
    loop {
        if t >= t1 {
            return Ok(x);
        }
        h = h.min(t1 - t).min(settings.max_step);
        if h < 1e-13 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { time: t });
        }

        k[0] = k1.clone();
        for s in 0..6 {
            let mut xs = x.clone();
            for (j, kj) in k.iter().take(s + 1).enumerate() {
                if A[s][j] != 0.0 {
                    xs += kj * (A[s][j] * h);
                }
            }
            k[s + 1] = f(t + C[s] * h, &xs);
        }
        // 5th-order solution: stage weights are the last tableau row, and
        // k[6] was evaluated at it (FSAL).
        let mut x_new = x.clone();
        for (j, kj) in k.iter().take(6).enumerate() {
            if A[5][j] != 0.0 {
                x_new += kj * (A[5][j] * h);
            }
        }
        let mut err_vec = DVector::zeros(dim);
        for (j, kj) in k.iter().enumerate() {
            if E[j] != 0.0 {
                err_vec += kj * (E[j] * h);
            }
        }

        let finite = x_new.iter().all(|v| v.is_finite()) && err_vec.iter().all(|v| v.is_finite());
        let err = if finite {
            let mut acc = 0.0;
            for i in 0..dim {
                let scale = settings.atol + settings.rtol * x[i].abs().max(x_new[i].abs());
                let r = err_vec[i] / scale;
                acc += r * r;
            }
            (acc / dim as f64).sqrt()
        } else {
            f64::INFINITY
        };

        if err <= 1.0 {
            let t_new = t + h;
            let k_last = k[6].clone();
            observer(&Step {
                t0: t,
                t1: t_new,
                x0: &x,
                x1: &x_new,
                f0: &k[0],
                f1: &k_last,
            })?;
            t = t_new;
            x = x_new;
            k1 = k_last;
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
        } else if finite {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        } else {
            h *= 0.25;
        }
    }
}
