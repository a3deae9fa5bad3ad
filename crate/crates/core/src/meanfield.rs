//! Mean-field dynamics: the spectrum of the rate matrix
//!
//! ```text
//!     A = | lambda - a - d_n      b        |
//!         |        a         -(b + d_r)    |
//! ```
//!
//! its exponential `e^{At}` in closed form, and the post-kill first-moment
//! matrix `M(t) = diag(1 - p, 1) e^{At}`.
//!
//! Column `j` of `e^{At}` is the expected population at time `t` started from
//! one bacterium of type `j` (1 = susceptible, 2 = persistent). Everything
//! here is cancellation-aware: the quadratic roots come from sign-aware
//! formulas plus Vieta, exponential differences go through `expm1`, and
//! large-time quantities are available rescaled by `e^{-t x+}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Smallest spectral gap `x+ - x-` for which the closed forms are used.
pub const MIN_SPECTRAL_GAP: f64 = 1e-9;

/// Roots of `x^2 - sum x + prod = 0` given a precomputed nonnegative
/// discriminant. Returns `(larger, smaller)`.
///
/// The larger-magnitude root comes from the sign-aware formula, the other
/// from Vieta, so neither suffers from subtractive cancellation.
pub fn real_roots(sum: f64, prod: f64, disc: f64) -> (f64, f64) {
    let sq = disc.max(0.0).sqrt();
    let big = 0.5 * (sum + sq.copysign(sum));
    if big == 0.0 {
        return (0.0, 0.0);
    }
    let small = prod / big;
    if big >= small {
        (big, small)
    } else {
        (small, big)
    }
}

/// Eigenvalues of `A` and the quantities derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralData {
    pub x_plus: f64,
    pub x_minus: f64,
    /// `x+ + x- = lambda - b - d_r - d_n - a`
    pub trace_sum: f64,
    /// `x+ x- = a d_r - (b + d_r)(lambda - d_n)`
    pub prod: f64,
    /// `x+ - x-`, computed directly as the square root of the discriminant.
    pub gap: f64,
    /// `b + d_r + x+ >= 0`
    pub shift_plus: f64,
    /// `b + d_r + x- <= 0`
    pub shift_minus: f64,
}

/// The characteristic polynomial `h(x) = x^2 + x(b + d_r - lambda + a + d_n) - ((b + d_r)(lambda - d_n) - a d_r)`.
pub fn char_poly_h(params: &ModelParams, x: f64) -> f64 {
    let coeff = params.b() + params.d_r() - params.lambda() + params.a() + params.d_n();
    x * x + x * coeff - params.growth_margin()
}

/// Both (always real) eigenvalues of `A`.
pub fn spectral(params: &ModelParams) -> SpectralData {
    let (a, b) = (params.a(), params.b());
    let c = b + params.d_r();
    let alpha = params.lambda() - a - params.d_n();
    let trace_sum = alpha - c;
    let prod = a * params.d_r() - c * (params.lambda() - params.d_n());
    // disc = (alpha + c)^2 + 4ab, a sum of nonnegative terms.
    let u = alpha + c;
    let disc = u * u + 4.0 * a * b;
    let gap = disc.sqrt();
    let (hi, lo) = real_roots(trace_sum, prod, disc);
    // x- <= min(-c, alpha) and x+ >= max(-c, alpha) hold exactly in real
    // arithmetic; clamp away rounding noise.
    let x_plus = hi.max(alpha.max(-c));
    let x_minus = lo.min(alpha.min(-c));
    // y = c + x solves y^2 - u y - ab = 0.
    let shift_plus = if u >= 0.0 {
        0.5 * (u + gap)
    } else {
        2.0 * a * b / (gap - u)
    };
    let shift_minus = if u <= 0.0 {
        0.5 * (u - gap)
    } else {
        -2.0 * a * b / (gap + u)
    };
    SpectralData {
        x_plus,
        x_minus,
        trace_sum,
        prod,
        gap,
        shift_plus,
        shift_minus,
    }
}

/// `e^{At}` at a given time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowMatrix {
    pub t: f64,
    /// Expected susceptibles from one susceptible.
    pub n_tilde: f64,
    /// Expected persistents from one susceptible.
    pub r_tilde: f64,
    /// Expected susceptibles from one persistent.
    pub n_bar: f64,
    /// Expected persistents from one persistent.
    pub r_bar: f64,
}

impl FlowMatrix {
    pub fn identity() -> Self {
        FlowMatrix {
            t: 0.0,
            n_tilde: 1.0,
            r_tilde: 0.0,
            n_bar: 0.0,
            r_bar: 1.0,
        }
    }

    /// Row-major `[[n_tilde, n_bar], [r_tilde, r_bar]]`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.n_tilde, self.n_bar], [self.r_tilde, self.r_bar]]
    }

    fn scale(self, factor: f64) -> Self {
        FlowMatrix {
            t: self.t,
            n_tilde: self.n_tilde * factor,
            r_tilde: self.r_tilde * factor,
            n_bar: self.n_bar * factor,
            r_bar: self.r_bar * factor,
        }
    }
}

/// Post-kill first-moment matrix `M(t) = diag(1 - p, 1) e^{At}` and its
/// eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentMatrix {
    pub t: f64,
    pub p: f64,
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
    /// `(1 - p) e^{t (x+ + x-)}`
    pub det: f64,
    /// Perron root.
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

impl MomentMatrix {
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.m11, self.m12], [self.m21, self.m22]]
    }

    pub fn trace(&self) -> f64 {
        self.m11 + self.m22
    }
}

/// Parameters together with their spectral data, checked once.
///
/// All closed forms need the growth condition (so that `x+ > x-`) and a gap
/// of at least [`MIN_SPECTRAL_GAP`].
#[derive(Debug, Clone, Copy)]
pub struct MeanField {
    params: ModelParams,
    spec: SpectralData,
}

impl MeanField {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.require_supercritical()?;
        let spec = spectral(params);
        if spec.gap < MIN_SPECTRAL_GAP {
            return Err(Error::SpectralGapTooSmall {
                gap: spec.gap,
                min: MIN_SPECTRAL_GAP,
            });
        }
        Ok(MeanField {
            params: *params,
            spec,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn spectral(&self) -> &SpectralData {
        &self.spec
    }

    /// `e^{At} e^{-t x+}`; bounded for every `t >= 0`.
    pub fn scaled_flow(&self, t: f64) -> FlowMatrix {
        if t == 0.0 {
            return FlowMatrix::identity();
        }
        let s = &self.spec;
        let g = s.gap;
        let decay = (-t * g).exp();
        let rise = -(-t * g).exp_m1();
        FlowMatrix {
            t,
            n_tilde: (s.shift_plus - s.shift_minus * decay) / g,
            r_tilde: self.params.a() * rise / g,
            n_bar: self.params.b() * rise / g,
            r_bar: (s.shift_plus * decay - s.shift_minus) / g,
        }
    }

    pub fn flow(&self, t: f64) -> Result<FlowMatrix> {
        check_time(t)?;
        Ok(self.scaled_flow(t).scale((t * self.spec.x_plus).exp()))
    }

    /// `ln r_bar(t)` without overflow for large `t`.
    pub fn log_r_bar(&self, t: f64) -> f64 {
        self.scaled_flow(t).r_bar.ln() + t * self.spec.x_plus
    }

    /// `diag(1 - p, 1) e^{At} e^{-t x+}` as a row-major matrix.
    pub fn scaled_moment(&self, t: f64) -> [[f64; 2]; 2] {
        let f = self.scaled_flow(t);
        let q = 1.0 - self.params.p();
        [[q * f.n_tilde, q * f.n_bar], [f.r_tilde, f.r_bar]]
    }

    pub fn moment_matrix(&self, t: f64) -> Result<MomentMatrix> {
        let f = self.flow(t)?;
        let p = self.params.p();
        let q = 1.0 - p;
        let (m11, m12, m21, m22) = (q * f.n_tilde, q * f.n_bar, f.r_tilde, f.r_bar);
        let det = q * (t * self.spec.trace_sum).exp();
        // (m11 - m22)^2 + 4 m12 m21 equals trace^2 - 4 det and is never negative.
        let disc = (m11 - m22).powi(2) + 4.0 * m12 * m21;
        let (gamma_plus, gamma_minus) = real_roots(m11 + m22, det, disc);
        Ok(MomentMatrix {
            t,
            p,
            m11,
            m12,
            m21,
            m22,
            det,
            gamma_plus,
            gamma_minus,
        })
    }

    /// `F_{t,p}(x) = x^2 - x ((1 - p) n_tilde(t) + r_bar(t)) + (1 - p) e^{t (x+ + x-)}`.
    pub fn char_poly_f(&self, t: f64, x: f64) -> Result<f64> {
        let f = self.flow(t)?;
        let q = 1.0 - self.params.p();
        let det = q * (t * self.spec.trace_sum).exp();
        Ok(x * x - x * (q * f.n_tilde + f.r_bar) + det)
    }

    /// `F_{t,p}(1) e^{-t x+}` for kill probability `p`.
    ///
    /// Rearranged as
    /// `-expm1(-t x+) expm1(t x-) - p ((b + d_r + x-) expm1(-t g) / g + expm1(t x-))`
    /// with `g = x+ - x-`: no overflow, no O(1) cancellation near `t = 0`,
    /// same sign as `F_{t,p}(1)`. Affine in `p`.
    pub fn scaled_unit_residual(&self, t: f64, p: f64) -> f64 {
        let s = &self.spec;
        let em_minus = (t * s.x_minus).exp_m1();
        let growth = -(-t * s.x_plus).exp_m1() * em_minus;
        let kill = s.shift_minus * (-t * s.gap).exp_m1() / s.gap + em_minus;
        growth - p * kill
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("t", format!("{t} is not a finite nonnegative time")))
    }
}

/// Closed-form `e^{At}`.
pub fn flow(params: &ModelParams, t: f64) -> Result<FlowMatrix> {
    MeanField::new(params)?.flow(t)
}

/// Closed-form post-kill first-moment matrix with its eigenvalues.
pub fn moment_matrix(params: &ModelParams, t: f64) -> Result<MomentMatrix> {
    MeanField::new(params)?.moment_matrix(t)
}

/// Evaluate `F_{t,p}(x)`; `p` is taken from `params`.
pub fn char_poly_f(params: &ModelParams, t: f64, x: f64) -> Result<f64> {
    MeanField::new(params)?.char_poly_f(t, x)
}

/// Classical fourth-order Runge-Kutta integration of the mean-field ODE
/// `d/dt (n, r) = A (n, r)` from `init` over `[0, t]` with `steps` equal
/// steps. Independent of the closed forms; used to cross-check them.
pub fn ode_oracle(params: &ModelParams, t: f64, init: [f64; 2], steps: usize) -> [f64; 2] {
    let a11 = params.lambda() - params.a() - params.d_n();
    let a12 = params.b();
    let a21 = params.a();
    let a22 = -(params.b() + params.d_r());
    let rhs = |y: [f64; 2]| [a11 * y[0] + a12 * y[1], a21 * y[0] + a22 * y[1]];
    let axpy = |y: [f64; 2], k: [f64; 2], h: f64| [y[0] + h * k[0], y[1] + h * k[1]];

    let steps = steps.max(1);
    let h = t / steps as f64;
    let mut y = init;
    for _ in 0..steps {
        let k1 = rhs(y);
        let k2 = rhs(axpy(y, k1, 0.5 * h));
        let k3 = rhs(axpy(y, k2, 0.5 * h));
        let k4 = rhs(axpy(y, k3, h));
        for i in 0..2 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}
