//! Radial bubbles `ΔB + h₀B = λ p B^{p-1} e^{B^p}` and their fine structure.
//!
//! The ODE is integrated in the deficit `z(s) = (p/2) γ^{p-1} (γ - B(μ s))` and in
//! logarithmic time `σ = ln s`, so only `B^p - γ^p ≤ 0` is ever exponentiated.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::ode::{self, Flow, OdeOptions};
use crate::quad::{self, QuadOptions};

const LN_8: f64 = 2.079_441_541_679_835_8;
/// Starting abscissa of the series step, in units of μ.
const S_START: f64 = 1e-4;

/// `ln(1 + r²/μ²)`, safe for very large ratios.
pub fn t_gamma(r: f64, mu: f64) -> f64 {
    let q = r / mu;
    if q > 1e150 {
        2.0 * q.ln()
    } else {
        (q * q).ln_1p()
    }
}

/// `ln λ` from `λ p² γ^{2(p-1)} μ² e^{γ^p} = 8`.
pub fn log_lambda_of(gamma: f64, p: f64, mu: f64) -> f64 {
    LN_8 - 2.0 * p.ln() - 2.0 * (p - 1.0) * gamma.ln() - 2.0 * mu.ln() - gamma.powf(p)
}

/// `(λ, ln λ)`; `λ` may underflow to zero but `ln λ` never does.
pub fn lambda_of(gamma: f64, p: f64, mu: f64) -> (f64, f64) {
    let l = log_lambda_of(gamma, p, mu);
    (l.exp(), l)
}

pub fn mu_of_log(gamma: f64, p: f64, log_lambda: f64) -> f64 {
    (0.5 * (LN_8 - log_lambda - 2.0 * p.ln() - 2.0 * (p - 1.0) * gamma.ln() - gamma.powf(p))).exp()
}

pub fn mu_of(gamma: f64, p: f64, lambda: f64) -> f64 {
    mu_of_log(gamma, p, lambda.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BubbleParams {
    pub gamma: f64,
    pub p: f64,
    pub mu: f64,
    pub lambda: f64,
    pub h0: f64,
    pub rbar: f64,
    pub log_lambda: f64,
}

impl BubbleParams {
    pub fn new(gamma: f64, p: f64, mu: f64, h0: f64, rbar: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid(format!("gamma must be positive, got {gamma}")));
        }
        if !(1.0..=2.0).contains(&p) {
            return Err(invalid(format!("p must lie in [1, 2], got {p}")));
        }
        if !(mu > 0.0 && h0 > 0.0 && rbar > 0.0) {
            return Err(invalid("mu, h0 and rbar must be positive"));
        }
        if mu >= rbar {
            return Err(invalid("analysis radius must exceed mu"));
        }
        let t_bar = t_gamma(rbar, mu);
        if t_bar > p * gamma.powf(p) / 2.0 * (1.0 + 1e-12) {
            return Err(invalid(format!("t(rbar) = {t_bar} exceeds p gamma^p / 2")));
        }
        let (lambda, log_lambda) = lambda_of(gamma, p, mu);
        Ok(Self { gamma, p, mu, lambda, h0, rbar, log_lambda })
    }

    /// A bubble whose scale is small enough for `h₀` to be invisible at the
    /// precision of the energy expansion; `rbar` sits at the positivity limit
    /// `t = p γ^p / 2` and `γ^{4p} rbar² ≪ 1`.
    pub fn concentrated(gamma: f64, p: f64, h0: f64) -> Result<Self> {
        let gp = gamma.powf(p);
        let t_max = p * gp / 2.0;
        let rbar = 1e-3 * gamma.powf(-2.0 * p) / h0.sqrt();
        let log_mu = rbar.ln() - 0.5 * t_max.exp_m1().ln();
        let mu = log_mu.exp();
        let rbar = mu * (t_max * (1.0 - 1e-13)).exp_m1().sqrt();
        Self::new(gamma, p, mu, h0, rbar)
    }

    /// Residual of the defining log identity for `λ`.
    pub fn identity_residual(&self) -> f64 {
        (self.log_lambda + 2.0 * self.p.ln() + 2.0 * (self.p - 1.0) * self.gamma.ln() + 2.0 * self.mu.ln()
            + self.gamma.powf(self.p)
            - LN_8)
            .abs()
    }
}

/// Nonlinearity evaluated from the deficit only.
#[derive(Debug, Clone, Copy)]
struct Kernel {
    gamma: f64,
    p: f64,
    gp: f64,
    log_mu: f64,
    h_coef: f64,
}

#[derive(Debug, Clone, Copy)]
struct Deficit {
    /// `B/γ`, possibly negative past the positivity edge.
    ratio: f64,
    /// `B^p - γ^p` (with `B₊` when `p > 1`).
    d: f64,
    /// `(B₊/γ)^{p-1}`.
    ratio_pm1: f64,
}

impl Kernel {
    fn new(params: &BubbleParams) -> Self {
        let (gamma, p) = (params.gamma, params.p);
        Self {
            gamma,
            p,
            gp: gamma.powf(p),
            log_mu: params.mu.ln(),
            h_coef: 0.5 * p * params.h0 * gamma.powf(p - 1.0),
        }
    }

    fn deficit(&self, z: f64) -> Deficit {
        let x = 2.0 * z / (self.p * self.gp);
        let ratio = 1.0 - x;
        if self.p == 1.0 {
            return Deficit { ratio, d: -self.gp * x, ratio_pm1: 1.0 };
        }
        if x >= 1.0 {
            return Deficit { ratio, d: -self.gp, ratio_pm1: 0.0 };
        }
        let l = (-x).ln_1p();
        Deficit { ratio, d: self.gp * (self.p * l).exp_m1(), ratio_pm1: ((self.p - 1.0) * l).exp() }
    }

    /// `s²(z'' + z'/s)`, i.e. `z_σσ`, as a function of `z` and `σ = ln s`.
    fn z_sigma_sigma(&self, z: f64, sigma: f64) -> f64 {
        let df = self.deficit(z);
        let s2 = (2.0 * sigma).exp();
        let r2 = (2.0 * (self.log_mu + sigma)).exp();
        s2 * 4.0 * df.ratio_pm1 * df.d.exp() - self.h_coef * self.gamma * df.ratio * r2
    }

    /// Series coefficient `c` in `z ≈ c s²/4`.
    fn curvature(&self) -> f64 {
        4.0 - self.h_coef * self.gamma * (2.0 * self.log_mu).exp()
    }

    fn b_of(&self, z: f64) -> f64 {
        self.gamma - 2.0 * z / (self.p * self.gamma.powf(self.p - 1.0))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RadialProfile {
    pub s_grid: Vec<f64>,
    pub z_values: Vec<f64>,
    pub b_values: Vec<f64>,
    pub bprime_values: Vec<f64>,
    pub params: BubbleParams,
}

#[derive(Debug, Clone, Copy)]
pub struct ProfileOptions {
    pub rtol: f64,
    /// Largest step in `ln s`; bounds the spacing of the returned grid.
    pub max_step: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, max_step: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stop {
    AtEnd,
    CoreEdge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ended {
    End,
    DensityMinimum,
    PositivityEdge,
}

struct Run {
    sigma: Vec<f64>,
    z: Vec<f64>,
    v: Vec<f64>,
    ip: f64,
    iw: f64,
    ended: Ended,
    last: [f64; 5],
}

fn integrate_bubble(params: &BubbleParams, sigma_end: f64, stop: Stop, opts: ProfileOptions) -> Result<Run> {
    let k = Kernel::new(params);
    let s0 = S_START.min(sigma_end.exp() * 1e-2);
    let sigma0 = s0.ln();
    let c = k.curvature();
    // state: z, z_σ, ∫ s² e^D dσ, ∫ s² (B/γ)^p e^D dσ
    let y0 = [c * s0 * s0 / 4.0, c * s0 * s0 / 2.0, 0.5 * s0 * s0, 0.5 * s0 * s0];
    let f = |sigma: f64, y: &[f64], d: &mut [f64]| {
        let s2 = (2.0 * sigma).exp();
        let df = k.deficit(y[0]);
        let e = df.d.exp();
        d[0] = y[1];
        d[1] = k.z_sigma_sigma(y[0], sigma);
        d[2] = s2 * e;
        d[3] = s2 * e * df.ratio.max(0.0).powf(k.p);
    };
    let mut run = Run {
        sigma: vec![],
        z: vec![],
        v: vec![],
        ip: 0.0,
        iw: 0.0,
        ended: Ended::End,
        last: [0.0; 5],
    };
    let mut crossing: Option<f64> = None;
    let mut prev: Option<(f64, f64)> = None;
    let ode_opts = OdeOptions { rtol: opts.rtol, atol: 1e-14, h_init: 1e-2, h_max: opts.max_step, ..OdeOptions::default() };
    ode::integrate(f, sigma0, &y0, sigma_end, &ode_opts, |sigma, y| {
        let df = k.deficit(y[0]);
        if df.ratio <= 0.0 && stop == Stop::AtEnd {
            let (ps, pr) = prev.unwrap_or((sigma, df.ratio));
            let w = if pr != df.ratio { pr / (pr - df.ratio) } else { 1.0 };
            crossing = Some(params.mu * (ps + w * (sigma - ps)).exp());
            return Flow::Stop;
        }
        run.sigma.push(sigma);
        run.z.push(y[0]);
        run.v.push(y[1]);
        run.last = [sigma, y[0], y[1], y[2], y[3]];
        prev = Some((sigma, df.ratio));
        if stop == Stop::CoreEdge && sigma > sigma0 {
            let s2 = (2.0 * sigma).exp();
            let slope = 2.0 * s2 / (1.0 + s2) - 2.0 * df.ratio_pm1 * y[1];
            if slope >= 0.0 && k.p > 1.0 {
                run.ended = Ended::DensityMinimum;
                return Flow::Stop;
            }
            if df.ratio < 1e-6 {
                run.ended = Ended::PositivityEdge;
                return Flow::Stop;
            }
        }
        Flow::Continue
    })?;
    if let Some(radius) = crossing {
        return Err(Error::NonPositiveBubble { radius });
    }
    run.ip = run.last[3];
    run.iw = run.last[4];
    Ok(run)
}

/// Integrate the bubble from `s = 0` to `s_max` (in units of μ).
pub fn solve_bubble(params: &BubbleParams, s_max: f64) -> Result<RadialProfile> {
    solve_bubble_with(params, s_max, ProfileOptions::default())
}

pub fn solve_bubble_with(params: &BubbleParams, s_max: f64, opts: ProfileOptions) -> Result<RadialProfile> {
    if !(s_max > 0.0) {
        return Err(invalid("s_max must be positive"));
    }
    if s_max * params.mu > params.rbar * (1.0 + 1e-12) {
        return Err(invalid("s_max * mu exceeds the analysis radius"));
    }
    let run = integrate_bubble(params, s_max.ln(), Stop::AtEnd, opts)?;
    let k = Kernel::new(params);
    let scale = 2.0 / (params.p * params.gamma.powf(params.p - 1.0));
    let mut s_grid = vec![0.0];
    let mut z_values = vec![0.0];
    let mut b_values = vec![params.gamma];
    let mut bprime_values = vec![0.0];
    for i in 0..run.sigma.len() {
        let s = run.sigma[i].exp();
        s_grid.push(s);
        z_values.push(run.z[i]);
        b_values.push(k.b_of(run.z[i]));
        // dB/dr = -scale z'(s) / μ with z'(s) = z_σ / s
        bprime_values.push(-scale * run.v[i] / (s * params.mu));
    }
    Ok(RadialProfile { s_grid, z_values, b_values, bprime_values, params: *params })
}

impl RadialProfile {
    /// `B(r)` by linear interpolation in `s = r/μ`, held constant past the last sample.
    pub fn value_at(&self, r: f64) -> f64 {
        let s = (r / self.params.mu).min(*self.s_grid.last().expect("non-empty profile"));
        let k = self.s_grid.partition_point(|x| *x < s).clamp(1, self.s_grid.len() - 1);
        let (s0, s1) = (self.s_grid[k - 1], self.s_grid[k]);
        let t = (s - s0) / (s1 - s0);
        self.b_values[k - 1] * (1.0 - t) + self.b_values[k] * t
    }

    /// `sup |z(s) - ln(1+s²)|` over grid points with `s ≤ s_cut`.
    pub fn liouville_deviation(&self, s_cut: f64) -> f64 {
        self.s_grid
            .iter()
            .zip(&self.z_values)
            .filter(|(s, _)| **s <= s_cut)
            .map(|(s, z)| (z - (s * s).ln_1p()).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WGamma {
    pub t: Vec<f64>,
    pub w: Vec<f64>,
    /// `sup |w_γ| / (t_γ + 1)`
    pub sup_ratio: f64,
}

/// `w_γ = γ^{p-1}(B - γ) + (2/p) t_γ`, evaluated as `(2/p)(t - z)`.
pub fn w_gamma_extract(profile: &RadialProfile) -> WGamma {
    let p = profile.params.p;
    let t: Vec<f64> = profile.s_grid.iter().map(|s| (s * s).ln_1p()).collect();
    let w: Vec<f64> = t.iter().zip(&profile.z_values).map(|(t, z)| 2.0 / p * (t - z)).collect();
    let sup_ratio = t.iter().zip(&w).map(|(t, w)| w.abs() / (t + 1.0)).fold(0.0, f64::max);
    WGamma { t, w, sup_ratio }
}

/// Leading-order profile `-(2/p - 1)γ + (2/(pγ^{p-1})) ln(1/(λγ^{2(p-1)}(μ²+r²)))`.
pub fn low_order_profile(params: &BubbleParams, r: f64) -> f64 {
    let (g, p) = (params.gamma, params.p);
    let log_mu2_r2 = 2.0 * params.mu.ln() + t_gamma(r, params.mu);
    let l = -params.log_lambda - 2.0 * (p - 1.0) * g.ln() - log_mu2_r2;
    -(2.0 / p - 1.0) * g + 2.0 / (p * g.powf(p - 1.0)) * l
}

/// `T₀(r) = ln(1 + r²)`
pub fn t0(r: f64) -> f64 {
    (r * r).ln_1p()
}

/// `∫₁^{1+r²} ln t/(1-t) dt`, written as `∫₀^{T₀} -v/(1-e^{-v}) dv`.
fn w0_integral(r: f64) -> f64 {
    let top = t0(r);
    if top == 0.0 {
        return 0.0;
    }
    let g = |v: f64| {
        if v < 1e-8 {
            -(1.0 + 0.5 * v)
        } else {
            -v / (-(-v).exp_m1())
        }
    };
    quad::integrate(g, 0.0, top, QuadOptions { abs_tol: 1e-15, rel_tol: 1e-14, max_intervals: 200 }).value
}

/// Closed-form `w₀(r)`; the auxiliary integral is done by adaptive quadrature.
pub fn w0_eval(r: f64) -> f64 {
    let t = t0(r);
    let r2 = r * r;
    -t + 2.0 * r2 / (1.0 + r2) - 0.5 * t * t + (1.0 - r2) / (1.0 + r2) * w0_integral(r)
}

/// `F` from the `w₁` equation, built from `w₀` and `T₀`.
pub fn f_source(p: f64, w0: f64, t: f64) -> f64 {
    let q = p - 1.0;
    2.0 * q * w0 + (p - 2.0) * t * t - 8.0 * q * t * w0 - (8.0 * p - 10.0) / 3.0 * t.powi(3)
        + 4.0 * q * w0 * w0
        + 4.0 * q * t * t * w0
        + q * t.powi(4)
}

/// Closed-form value of `∫ Δw₁` over the plane.
pub fn integral_laplacian_w1_closed(p: f64) -> f64 {
    16.0 * (p - 1.0) / p.powi(3)
        * ((p - 1.0) * (PI.powi(3) / 3.0 + 33.0 * PI / 2.0) + 1.5 * PI * (p - 2.0) - 3.5 * (4.0 * p - 5.0) * PI)
}

#[derive(Debug, Clone, Serialize)]
pub struct W1Solution {
    pub p: f64,
    pub s_grid: Vec<f64>,
    pub w1: Vec<f64>,
    /// `-lim 2π s w₁'(s)`
    pub integral_laplacian: f64,
    /// Far-field coefficient `c` in `w₁ ≈ -c T₀`, measured as `-dw₁/dT₀` at `s_max`.
    pub far_field_constant: f64,
}

/// Integrate `Δw₁ = 4e^{-2T₀}(2w₁ + 4(p-1)/p³ F)` with `w₁(0) = w₁'(0) = 0`.
pub fn solve_w1(p: f64, s_max: f64) -> Result<W1Solution> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(invalid(format!("p must lie in (1, 2], got {p}")));
    }
    if s_max < 1e3 {
        return Err(invalid("s_max must be at least 1e3"));
    }
    let k = 4.0 * (p - 1.0) / p.powi(3);
    let s0: f64 = S_START;
    // state: Q (auxiliary integral of w₀), w₁, s w₁'
    let y0 = [-s0 * s0, 0.0, 0.0];
    let f = |sigma: f64, y: &[f64], d: &mut [f64]| {
        let s2 = (2.0 * sigma).exp();
        let t = s2.ln_1p();
        let w0 = -t + 2.0 * s2 / (1.0 + s2) - 0.5 * t * t + (1.0 - s2) / (1.0 + s2) * y[0];
        let e = 4.0 / ((1.0 + s2) * (1.0 + s2));
        d[0] = -2.0 * t;
        d[1] = y[2];
        d[2] = -s2 * e * (2.0 * y[1] + k * f_source(p, w0, t));
    };
    let mut s_grid = vec![0.0];
    let mut w1 = vec![0.0];
    let opts = OdeOptions { rtol: 1e-12, atol: 1e-14, h_init: 1e-2, h_max: 0.1, ..OdeOptions::default() };
    let (sigma, y) = ode::integrate(f, s0.ln(), &y0, s_max.ln(), &opts, |sigma, y| {
        s_grid.push(sigma.exp());
        w1.push(y[1]);
        Flow::Continue
    })?;
    let s2 = (2.0 * sigma).exp();
    let integral_laplacian = -2.0 * PI * y[2];
    let far_field_constant = -y[2] * (1.0 + s2) / (2.0 * s2);
    Ok(W1Solution { p, s_grid, w1, integral_laplacian, far_field_constant })
}

#[derive(Debug, Clone, Serialize)]
pub struct Moment {
    pub name: &'static str,
    pub value: f64,
    pub error: f64,
    pub target: f64,
}

/// `∫_U^∞ (ln u)^k u^{-m} du` for `m > 1`.
fn log_power_tail(k: u32, m: f64, u: f64) -> f64 {
    let l = u.ln();
    let a = m - 1.0;
    let mut fact_ratio = 1.0; // k!/j!
    let mut sum = 0.0;
    for j in (0..=k).rev() {
        sum += fact_ratio / a.powi((k - j + 1) as i32) * l.powi(j as i32);
        fact_ratio *= j.max(1) as f64;
    }
    u.powf(1.0 - m) * sum
}

/// `ΔT₀` from the radial derivatives of `T₀` (nonnegative Laplacian).
fn laplacian_t0(r: f64) -> f64 {
    let r2 = r * r;
    let d1 = 2.0 * r / (1.0 + r2);
    let d2 = (2.0 - 2.0 * r2) / ((1.0 + r2) * (1.0 + r2));
    if r == 0.0 {
        return -2.0 * d2;
    }
    -(d2 + d1 / r)
}

/// The six plane integrals of `T₀` and `w₀` used by the energy expansion.
///
/// Each is integrated in `v = ln(1 + r²)` up to `r = 10⁴` with adaptive
/// Gauss–Kronrod, and the remainder is added from the algebraic decay.
pub fn moment_integrals() -> Result<Vec<Moment>> {
    moment_integrals_with(1e-10)
}

pub fn moment_integrals_with(rel_tol: f64) -> Result<Vec<Moment>> {
    const S_CUT: f64 = 1e4;
    let u_cut = 1.0 + S_CUT * S_CUT;
    let v_cut = u_cut.ln();
    let c_w0 = w0_eval(S_CUT) + t0(S_CUT);
    // ∫_{R²} f dx = π ∫₀^∞ f(u) u dv,  u = e^v = 1 + r²
    let radius = |v: f64| v.exp_m1().max(0.0).sqrt();
    type Integrand = Box<dyn Fn(f64) -> f64>;
    let entries: Vec<(&'static str, Integrand, f64, f64)> = vec![
        ("int_4exp_m2T0", Box::new(|v: f64| 4.0 * (-v).exp()), 4.0 * log_power_tail(0, 2.0, u_cut), 4.0 * PI),
        (
            "minus_int_lap_T0",
            Box::new(move |v: f64| -laplacian_t0(radius(v)) * v.exp()),
            4.0 * log_power_tail(0, 2.0, u_cut),
            4.0 * PI,
        ),
        (
            "minus_int_T0_lap_T0",
            Box::new(move |v: f64| -v * laplacian_t0(radius(v)) * v.exp()),
            4.0 * log_power_tail(1, 2.0, u_cut),
            4.0 * PI,
        ),
        (
            "minus_half_int_T0sq_lap_T0",
            Box::new(move |v: f64| -0.5 * v * v * laplacian_t0(radius(v)) * v.exp()),
            2.0 * log_power_tail(2, 2.0, u_cut),
            4.0 * PI,
        ),
        (
            "int_w0_lapT0_plus_T0_lap_w0",
            Box::new(move |v: f64| {
                let w0 = w0_eval(radius(v));
                let e = 4.0 * (-2.0 * v).exp();
                let lap_w0 = e * (2.0 * w0 + v * v - v);
                (w0 * laplacian_t0(radius(v)) + v * lap_w0) * v.exp()
            }),
            // integrand ~ 4u⁻²(-w₀ + 2vw₀ + v³ - v²) with w₀ ≈ -v + c
            4.0 * (log_power_tail(3, 2.0, u_cut) - 3.0 * log_power_tail(2, 2.0, u_cut)
                + (1.0 + 2.0 * c_w0) * log_power_tail(1, 2.0, u_cut)
                - c_w0 * log_power_tail(0, 2.0, u_cut)),
            8.0 * PI + 2.0 * PI.powi(3) / 3.0,
        ),
        (
            "int_rational_T0sq",
            Box::new(|v: f64| {
                let u = v.exp();
                (u - 2.0) / (u * u * u) * v * v * u
            }),
            log_power_tail(2, 2.0, u_cut) - 2.0 * log_power_tail(2, 3.0, u_cut),
            1.5 * PI,
        ),
    ];
    let breaks: Vec<f64> = (1..8).map(|i| 2f64.powi(i - 2)).collect();
    let mut out = Vec::with_capacity(entries.len());
    for (name, g, tail, target) in entries {
        let r = quad::integrate_with_breaks(
            &g,
            0.0,
            v_cut,
            &breaks,
            QuadOptions { abs_tol: 0.0, rel_tol: 0.5 * rel_tol, max_intervals: 4000 },
        );
        let value = PI * (r.value + tail);
        let error = PI * r.error;
        if !r.converged || error > 0.5 * rel_tol * value.abs() {
            return Err(Error::QuadratureTolerance { achieved: error / value.abs(), requested: rel_tol });
        }
        out.push(Moment { name, value, error, target });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum AnalysisRadius {
    /// `t(rbar) = √γ`, the radius of the asymptotic statement.
    SqrtGamma,
    /// End of the perturbative core: first minimum of the mass density in `t`,
    /// or the positivity edge closed with its exponential tail.
    #[default]
    CoreEdge,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BubbleEnergy {
    pub gamma: f64,
    pub p: f64,
    pub h0: f64,
    pub mass_weighted: f64,
    pub mass_plain: f64,
    pub product: f64,
    /// `t` at the analysis radius.
    pub t_bar: f64,
    pub radius: AnalysisRadius,
}

pub fn bubble_energy(gamma: f64, p: f64, h0: f64) -> Result<BubbleEnergy> {
    bubble_energy_with(gamma, p, h0, AnalysisRadius::default())
}

/// Masses `(λp²/2)∫B^p e^{B^p}` and `(λp²/2)∫e^{B^p}` over the analysis disk and
/// the product `M_plain^{(2-p)/p} M_weighted^{2(p-1)/p}`.
pub fn bubble_energy_with(gamma: f64, p: f64, h0: f64, radius: AnalysisRadius) -> Result<BubbleEnergy> {
    if gamma < 4.0 {
        return Err(invalid(format!("bubble_energy needs gamma >= 4, got {gamma}")));
    }
    if !(1.0..=2.0).contains(&p) {
        return Err(invalid(format!("p must lie in [1, 2], got {p}")));
    }
    let base = BubbleParams::concentrated(gamma, p, h0)?;
    let opts = ProfileOptions { rtol: 1e-10, max_step: 0.25 };
    let (ip, iw, t_bar) = match radius {
        AnalysisRadius::SqrtGamma => {
            let sbar = gamma.sqrt().exp_m1().sqrt();
            let params = BubbleParams::new(gamma, p, base.mu, h0, base.mu * sbar)?;
            let run = integrate_bubble(&params, sbar.ln(), Stop::AtEnd, opts)?;
            (run.ip, run.iw, gamma.sqrt())
        }
        AnalysisRadius::CoreEdge => {
            let sigma_end = (base.rbar / base.mu).ln();
            let run = integrate_bubble(&base, sigma_end, Stop::CoreEdge, opts)?;
            let [sigma, z, v, ip, iw] = run.last;
            let s2 = (2.0 * sigma).exp();
            let t_bar = s2.ln_1p();
            let mut ip = ip;
            let mut iw = iw;
            if run.ended == Ended::PositivityEdge {
                let k = Kernel::new(&base);
                let df = k.deficit(z);
                let rho_p = 0.5 * (1.0 + s2) * df.d.exp();
                let rate_p = 1.0 - df.ratio_pm1 * v * (1.0 + s2) / s2;
                if rate_p < 0.0 {
                    ip += rho_p / -rate_p;
                }
                if df.ratio > 0.0 {
                    let rate_w = rate_p - v * (1.0 + s2) / (k.gp * df.ratio * s2);
                    if rate_w < 0.0 {
                        iw += rho_p * df.ratio.powf(p) / -rate_w;
                    }
                }
            }
            (ip, iw, t_bar)
        }
    };
    let mass_plain = 8.0 * PI * gamma.powf(2.0 - 2.0 * p) * ip;
    let mass_weighted = 8.0 * PI * gamma.powf(2.0 - p) * iw;
    let product = mass_plain.powf((2.0 - p) / p) * mass_weighted.powf(2.0 * (p - 1.0) / p);
    Ok(BubbleEnergy { gamma, p, h0, mass_weighted, mass_plain, product, t_bar, radius })
}
