//! Critical points of `J_{p,β}` on the flat torus: the functional and its gradient,
//! the multiplier `λ(u)`, descent, Newton–Krylov, continuation in `β`, and blow-up
//! diagnostics.
//!
//! Conventions: `Δ` is the nonnegative Laplacian, `‖u‖²_h = ∫|∇u|² + hu²`, and the
//! Euler–Lagrange equation is `Δu + hu = λ p u^{p-1} e^{u^p}`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kr::{self, Cloud, KrOptions};
use crate::radial::mu_of;
use crate::testfn::Barycenter;
use crate::torus::{torus_distance, Operator, TorusField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Descent stops once the EL residual (L²) drops below this.
    pub min_tol: f64,
    pub max_descent: usize,
    /// Newton stops once the EL residual (L²) drops below this.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub gmres_restart: usize,
    pub gmres_max: usize,
    /// Continuation stops when `max u` exceeds this.
    pub u_ceiling: f64,
    /// Continuation stops when the peak scale `μ` falls below this many cells.
    pub mu_floor_cells: f64,
    /// Smallest continuation step as a fraction of the nominal one.
    pub min_step_fraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            min_tol: 1e-9,
            max_descent: 20_000,
            newton_tol: 1e-12,
            max_newton: 40,
            gmres_restart: 80,
            gmres_max: 800,
            u_ceiling: 8.0,
            mu_floor_cells: 2.0,
            min_step_fraction: 1.0 / 1024.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub p: f64,
    pub beta: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub residual_l2: f64,
    pub u_max: f64,
    pub u_min: f64,
    pub beta_check: f64,
    pub positivity: bool,
    pub j: f64,
    /// `J` after each accepted descent step, or the residual before each Newton step.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub u: TorusField,
    pub report: SolveReport,
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(invalid(format!("exponent p = {p} outside (1, 2]")));
    }
    Ok(())
}

/// Shared operator and the pieces of `J` on one grid.
struct Ctx {
    op: Operator,
    p: f64,
    beta: f64,
}

impl Ctx {
    fn new(template: &TorusField, p: f64, beta: f64) -> Result<Self> {
        check_p(p)?;
        if !(beta > 0.0) {
            return Err(invalid("beta must be positive"));
        }
        Ok(Self { op: Operator::new(template), p, beta })
    }

    fn critical(&self) -> bool {
        self.p == 2.0
    }

    fn powers(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|x| x.max(0.0).powf(self.p)).collect()
    }

    /// `∫(e^{u₊^p} - 1)`
    fn exp_mass(&self, u: &[f64]) -> f64 {
        self.op.integrate(&self.powers(u).iter().map(|x| x.exp_m1()).collect::<Vec<_>>())
    }

    /// `∫ u₊^p e^{u₊^p}`
    fn weighted_mass(&self, u: &[f64]) -> f64 {
        self.op.integrate(&self.powers(u).iter().map(|x| x * x.exp()).collect::<Vec<_>>())
    }

    /// `p u₊^{p-1} e^{u₊^p}`
    fn nonlinearity(&self, u: &[f64]) -> Vec<f64> {
        let p = self.p;
        u.iter().map(|&x| if x > 0.0 { p * x.powf(p - 1.0) * x.powf(p).exp() } else { 0.0 }).collect()
    }

    fn norm2(&self, u: &[f64]) -> f64 {
        self.op.norm2(u)
    }

    fn project(&self, u: &mut [f64]) {
        let s = (self.beta / self.norm2(u)).sqrt();
        u.iter_mut().for_each(|x| *x *= s);
    }

    fn log_lambda(&self, u: &[f64]) -> Result<f64> {
        let mass = self.exp_mass(u);
        if !(mass > 0.0) {
            return Err(Error::EmptyPositivePart);
        }
        let p = self.p;
        if self.critical() {
            return Ok(self.beta.ln() - (2.0 * self.weighted_mass(u)).ln());
        }
        let q = 2.0 * (p - 1.0) / (2.0 - p);
        let x = p * self.norm2(u) / (2.0 * self.beta);
        Ok(self.beta.ln() - (0.5 * p * p).ln() - q * x.ln() - mass.ln())
    }

    /// `L²` density `g` with `d(ln λ)[v] = ∫ g v`.
    fn log_lambda_gradient(&self, u: &[f64]) -> Vec<f64> {
        let p = self.p;
        let nl = self.nonlinearity(u);
        if self.critical() {
            let w = self.weighted_mass(u);
            // d(u^p e^{u^p}) = p u^{p-1} e^{u^p} (1 + u^p) du
            return nl.iter().zip(self.powers(u)).map(|(n, x)| -n * (1.0 + x) / w).collect();
        }
        let q = 2.0 * (p - 1.0) / (2.0 - p);
        let n2 = self.norm2(u);
        let mass = self.exp_mass(u);
        let au = self.op.apply(u);
        au.iter().zip(&nl).map(|(a, n)| -2.0 * q * a / n2 - n / mass).collect()
    }

    fn lambda(&self, u: &[f64]) -> Result<f64> {
        Ok(self.log_lambda(u)?.exp())
    }

    /// `Δu + hu - λ p u₊^{p-1} e^{u₊^p}`
    fn residual(&self, u: &[f64], lambda: f64) -> Vec<f64> {
        let mut r = self.op.apply(u);
        for (ri, ni) in r.iter_mut().zip(self.nonlinearity(u)) {
            *ri -= lambda * ni;
        }
        r
    }

    fn l2(&self, r: &[f64]) -> f64 {
        self.op.integrate(&r.iter().map(|x| x * x).collect::<Vec<_>>()).sqrt()
    }

    fn j(&self, u: &[f64]) -> f64 {
        let mass = self.exp_mass(u);
        if !(mass > 0.0) {
            return f64::INFINITY;
        }
        let p = self.p;
        let n2 = self.norm2(u);
        if self.critical() {
            return if n2 <= self.beta * (1.0 + 1e-9) { -mass.ln() } else { f64::INFINITY };
        }
        let x = p * n2 / (2.0 * self.beta);
        0.5 * (2.0 - p) * x.powf(p / (2.0 - p)) - mass.ln()
    }

    /// `J(v) - J(u)` without cancellation between the two levels.
    fn j_diff(&self, u: &[f64], v: &[f64]) -> f64 {
        let p = self.p;
        // v^p - u^p relative to v - u, so that tiny steps keep their digits.
        let dm: Vec<f64> = u
            .iter()
            .zip(v)
            .map(|(&a, &b)| {
                let (a, b) = (a.max(0.0), b.max(0.0));
                let ap = a.powf(p);
                let dp = if a > 0.0 && b > 0.0 { ap * (p * ((b - a) / a).ln_1p()).exp_m1() } else { b.powf(p) - ap };
                ap.exp() * dp.exp_m1()
            })
            .collect();
        let dm = self.op.integrate(&dm);
        let mu = self.exp_mass(u);
        if !(mu + dm > 0.0) {
            return f64::INFINITY;
        }
        let dlog = (dm / mu).ln_1p();
        if self.critical() {
            return -dlog;
        }
        let s: Vec<f64> = v.iter().zip(u).map(|(a, b)| a - b).collect();
        let n2 = self.norm2(u);
        let dn2 = 2.0 * self.op.inner(u, &s) + self.norm2(&s);
        let k = p / (2.0 - p);
        let xk = (p * n2 / (2.0 * self.beta)).powf(k);
        0.5 * (2.0 - p) * xk * (k * (dn2 / n2).ln_1p()).exp_m1() - dlog
    }

    /// Riesz representative of `J'` in `⟨·,·⟩_h`; tangential to the sphere `‖u‖² = β` when `p = 2`.
    fn grad(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mass = self.exp_mass(u);
        if !(mass > 0.0) {
            return Err(Error::EmptyPositivePart);
        }
        let p = self.p;
        let g = self.op.solve(&self.nonlinearity(u));
        if self.critical() {
            let n2 = self.norm2(u);
            let c = self.op.inner(&g, u) / n2;
            return Ok(g.iter().zip(u).map(|(gi, ui)| (c * ui - gi) / mass).collect());
        }
        let c = p * (p / (2.0 * self.beta)).powf(p / (2.0 - p));
        let scale = c * self.norm2(u).powf(2.0 * (p - 1.0) / (2.0 - p));
        Ok(u.iter().zip(&g).map(|(ui, gi)| scale * ui - gi / mass).collect())
    }

    fn report(&self, u: &[f64], iterations: usize, history: Vec<f64>) -> Result<SolveReport> {
        let lambda = self.lambda(u)?;
        let residual_l2 = self.l2(&self.residual(u, lambda));
        let u_max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let u_min = u.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(SolveReport {
            p: self.p,
            beta: self.beta,
            lambda,
            iterations,
            residual_l2,
            u_max,
            u_min,
            beta_check: beta_from_masses(lambda, self.p, self.exp_mass(u), self.weighted_mass(u)),
            positivity: u_min > 0.0,
            j: self.j(u),
            history,
        })
    }
}

fn beta_from_masses(lambda: f64, p: f64, exp_mass: f64, weighted: f64) -> f64 {
    0.5 * lambda * p * p * exp_mass.powf((2.0 - p) / p) * weighted.powf(2.0 * (p - 1.0) / p)
}

/// `J_{p,β}(u)`, `+∞` when `u₊ ≡ 0`. For `p = 2` this is `-ln ∫(e^{u²} - 1)` on `‖u‖²_h ≤ β`.
pub fn j_functional(u: &TorusField, p: f64, beta: f64) -> Result<f64> {
    Ok(Ctx::new(u, p, beta)?.j(&u.values))
}

/// Riesz representative of `J'_{p,β}(u)` with respect to `⟨·,·⟩_h`.
pub fn j_gradient(u: &TorusField, p: f64, beta: f64) -> Result<TorusField> {
    Ok(u.with_values(Ctx::new(u, p, beta)?.grad(&u.values)?))
}

/// The multiplier tied to `u`; for `p = 2`, `β / (2∫u²e^{u²})`.
pub fn lambda_from_u(u: &TorusField, p: f64, beta: f64) -> Result<f64> {
    Ctx::new(u, p, beta)?.lambda(&u.values)
}

/// `(λp²/2) (∫(e^{u^p} - 1))^{(2-p)/p} (∫u^p e^{u^p})^{2(p-1)/p}`
pub fn beta_of(u: &TorusField, lambda: f64, p: f64) -> Result<f64> {
    let ctx = Ctx::new(u, p, 1.0)?;
    Ok(beta_from_masses(lambda, p, ctx.exp_mass(&u.values), ctx.weighted_mass(&u.values)))
}

/// EL residual field and its L² norm, with `λ = λ(u)`.
pub fn el_residual(u: &TorusField, p: f64, beta: f64) -> Result<(TorusField, f64)> {
    let ctx = Ctx::new(u, p, beta)?;
    let r = ctx.residual(&u.values, ctx.lambda(&u.values)?);
    let n = ctx.l2(&r);
    Ok((u.with_values(r), n))
}

/// Descent on `J` along its `h`-Riesz gradient, Barzilai–Borwein trial steps safeguarded
/// by an Armijo test. Intended for `β < 4π`, where `J` is coercive.
pub fn solve_min(p: f64, beta: f64, init: &TorusField, opts: &SolverOptions) -> Result<Solution> {
    let ctx = Ctx::new(init, p, beta)?;
    let mut u = init.values.clone();
    if ctx.critical() {
        ctx.project(&mut u);
    }
    if !ctx.j(&u).is_finite() {
        return Err(Error::EmptyPositivePart);
    }
    let mut g = ctx.grad(&u)?;
    let mut alpha = 1.0 / ctx.norm2(&g).sqrt().max(1.0);
    let mut history = vec![ctx.j(&u)];
    let mut iterations = 0;
    loop {
        let lambda = ctx.lambda(&u)?;
        if ctx.l2(&ctx.residual(&u, lambda)) < opts.min_tol {
            break;
        }
        if iterations >= opts.max_descent {
            return Err(Error::NonConvergence { iterations });
        }
        iterations += 1;
        let g2 = ctx.norm2(&g);
        let (cand, dj) = loop {
            let mut cand: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a - alpha * b).collect();
            if ctx.critical() {
                ctx.project(&mut cand);
            }
            let dj = ctx.j_diff(&u, &cand);
            if dj <= -1e-4 * alpha * g2 {
                break (cand, dj);
            }
            alpha *= 0.5;
            if alpha * g2.sqrt() < 1e-300 || alpha < 1e-20 {
                return Err(Error::LineSearchStall { value: ctx.j(&u) });
            }
        };
        let g_new = ctx.grad(&cand)?;
        let s: Vec<f64> = cand.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = ctx.op.inner(&s, &y);
        alpha = if sy > 0.0 { ctx.norm2(&s) / sy } else { 2.0 * alpha };
        history.push(history.last().copied().unwrap_or(0.0) + dj);
        u = cand;
        g = g_new;
    }
    let u_min = u.iter().copied().fold(f64::INFINITY, f64::min);
    if !(u_min > 0.0) {
        return Err(Error::NonPositiveSolution { min: u_min });
    }
    let report = ctx.report(&u, iterations, history)?;
    Ok(Solution { u: init.with_values(u), report })
}

/// Restarted GMRES for `op(x) = b`. Returns the solution and the iteration count.
pub fn gmres<F: Fn(&[f64]) -> Vec<f64>>(
    op: F,
    b: &[f64],
    rel_tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((x, 0));
    }
    let target = rel_tol * b_norm;
    let mut total = 0;
    let mut best = f64::INFINITY;
    while total < max_iter {
        let ax = op(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = dot(&r, &r).sqrt();
        best = best.min(beta);
        if beta <= target {
            return Ok((x, total));
        }
        let m = restart.min(max_iter - total);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut hess = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut e = vec![0.0; m + 1];
        e[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            total += 1;
            let mut w = op(&v[k]);
            for (i, vi) in v.iter().enumerate() {
                let hik = dot(&w, vi);
                hess[i][k] = hik;
                w.iter_mut().zip(vi).for_each(|(wj, vj)| *wj -= hik * vj);
            }
            let wn = dot(&w, &w).sqrt();
            hess[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = t;
            }
            let den = hess[k][k].hypot(hess[k + 1][k]);
            if den == 0.0 {
                return Err(Error::KrylovBreakdown { iterations: total });
            }
            cs[k] = hess[k][k] / den;
            sn[k] = hess[k + 1][k] / den;
            hess[k][k] = den;
            hess[k + 1][k] = 0.0;
            e[k + 1] = -sn[k] * e[k];
            e[k] *= cs[k];
            k_used = k + 1;
            if e[k + 1].abs() <= target || wn <= 1e-14 * beta {
                break;
            }
            v.push(w.iter().map(|wj| wj / wn).collect());
        }
        let mut yk = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = ((i + 1)..k_used).map(|j| hess[i][j] * yk[j]).sum();
            yk[i] = (e[i] - s) / hess[i][i];
        }
        for (i, yi) in yk.iter().enumerate() {
            x.iter_mut().zip(&v[i]).for_each(|(xj, vj)| *xj += yi * vj);
        }
    }
    let ax = op(&x);
    let r: f64 = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt();
    if r <= target.max(1e-3 * b_norm) {
        // Loose but usable direction; the outer Newton loop decides.
        return Ok((x, total));
    }
    Err(Error::KrylovBreakdown { iterations: total })
}

/// Newton–Krylov on `u ↦ Δu + hu - λ(u) p u^{p-1} e^{u^p}`, right-preconditioned by
/// `(Δ + h̄)⁻¹` (`h̄` the mean of `h`). `λ(u)` is differentiated exactly: it is a
/// ratio of integrals, so its derivative is a single weighted integral.
pub fn solve_newton(p: f64, beta: f64, init: &TorusField, opts: &SolverOptions) -> Result<Solution> {
    let ctx = Ctx::new(init, p, beta)?;
    let mut u = init.values.clone();
    if ctx.critical() {
        ctx.project(&mut u);
    }
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let lambda = ctx.lambda(&u)?;
        let f = ctx.residual(&u, lambda);
        let f_norm = ctx.l2(&f);
        history.push(f_norm);
        if f_norm < opts.newton_tol {
            break;
        }
        if iterations >= opts.max_newton {
            return Err(Error::MaxIterations { iterations, residual: f_norm });
        }
        iterations += 1;
        let pp = ctx.p;
        let dnl: Vec<f64> = u
            .iter()
            .map(|&x| {
                let x = x.max(0.0);
                let xp = x.powf(pp);
                pp * ((pp - 1.0) * x.powf(pp - 2.0) + pp * x.powf(2.0 * pp - 2.0)) * xp.exp()
            })
            .collect();
        let nl = ctx.nonlinearity(&u);
        let dlog = ctx.log_lambda_gradient(&u);
        let jac = |v: &[f64]| -> Vec<f64> {
            let dlambda = lambda * ctx.op.integrate(&dlog.iter().zip(v).map(|(a, b)| a * b).collect::<Vec<_>>());
            let mut out = ctx.op.apply(v);
            for i in 0..out.len() {
                out[i] -= lambda * dnl[i] * v[i] + dlambda * nl[i];
            }
            out
        };
        let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        let (y, _) = gmres(|y| jac(&ctx.op.precondition(y)), &rhs, 1e-10, opts.gmres_restart, opts.gmres_max)?;
        let du = ctx.op.precondition(&y);
        let mut t = 1.0;
        loop {
            let mut cand: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + t * b).collect();
            if ctx.critical() {
                ctx.project(&mut cand);
            }
            let ok = cand.iter().all(|x| *x > 0.0)
                && ctx.lambda(&cand).map(|l| ctx.l2(&ctx.residual(&cand, l)) < (1.0 - 1e-4 * t) * f_norm).unwrap_or(false);
            if ok {
                u = cand;
                break;
            }
            t *= 0.5;
            if t < 1e-6 {
                return Err(Error::MaxIterations { iterations, residual: f_norm });
            }
        }
    }
    let u_min = u.iter().copied().fold(f64::INFINITY, f64::min);
    if !(u_min > 0.0) {
        return Err(Error::NonPositiveSolution { min: u_min });
    }
    let report = ctx.report(&u, iterations, history)?;
    Ok(Solution { u: init.with_values(u), report })
}

/// Local maximum of a solution and its bubble-scale diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Peak {
    pub position: [f64; 2],
    pub gamma: f64,
    pub mu: f64,
    pub mu_cells: f64,
    /// Radius of the ball used for the local masses.
    pub radius: f64,
    /// `(λp²/2)∫_{ball} u^p e^{u^p}`
    pub local_mass: f64,
    /// `local_mass / (4π γ^{2-p})`
    pub mass_ratio: f64,
    /// Share of `∫(e^{u^p} - 1)` in this peak's nearest-peak region.
    pub weight: f64,
    /// `max_{s≤5} |(p/2)γ^{p-1}(γ - u(x + μs)) - ln(1+s²)|` over sampled rays.
    pub profile_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakTable {
    pub peaks: Vec<Peak>,
    pub beta: f64,
    /// `β - 4π · #peaks`
    pub excess: f64,
    /// `16π(p-1)/p² Σ γᵢ^{-2p}`, the leading blow-up excess.
    pub excess_leading: f64,
    /// KR distance of the normalized density to `Σ weightᵢ δ_{xᵢ}`.
    pub kr_distance: f64,
    pub kr_residual: f64,
}

/// Peak table of `u`: local maxima above `max u / 2`.
pub fn blow_up_diagnostics(u: &TorusField, lambda: f64, p: f64) -> Result<PeakTable> {
    check_p(p)?;
    let n = u.n;
    let l = u.box_len;
    let beta = beta_of(u, lambda, p)?;
    let u_max = u.max();
    let at = |i: i64, j: i64| u.values[(j.rem_euclid(n as i64) as usize) * n + i.rem_euclid(n as i64) as usize];
    let mut found: Vec<(usize, [f64; 2], f64)> = Vec::new();
    if u_max > 0.0 && u_max - u.min() > 1e-9 * u_max.abs() {
        for k in 0..n * n {
            let (i, j) = ((k % n) as i64, (k / n) as i64);
            let v = u.values[k];
            if v <= 0.5 * u_max {
                continue;
            }
            let mut is_max = true;
            'nb: for dj in -1..=1 {
                for di in -1..=1 {
                    if (di, dj) == (0, 0) {
                        continue;
                    }
                    let w = at(i + di, j + dj);
                    // Ties broken by index so plateaus give one peak.
                    let later = (dj, di) > (0, 0);
                    if w > v || (w == v && !later) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                found.push((k, u.node(k), v));
            }
        }
    }
    if found.is_empty() {
        return Ok(PeakTable {
            peaks: Vec::new(),
            beta,
            excess: beta,
            excess_leading: 0.0,
            kr_distance: 0.0,
            kr_residual: 0.0,
        });
    }
    let spectral = crate::torus::Spectral::for_field(u);
    let coeffs = spectral.forward(&u.values);
    let pts: Vec<[f64; 2]> = found.iter().map(|f| f.1).collect();
    let nearest = |x: [f64; 2]| -> usize {
        (0..pts.len())
            .min_by(|&a, &b| torus_distance(x, pts[a], l).total_cmp(&torus_distance(x, pts[b], l)))
            .unwrap_or(0)
    };
    let cell2 = u.cell() * u.cell();
    let exp_total: f64 = u.values.iter().map(|x| x.max(0.0).powf(p).exp_m1()).sum::<f64>() * cell2;
    let mut peaks = Vec::new();
    for (idx, &(_, x, gamma)) in found.iter().enumerate() {
        let sep = pts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != idx)
            .map(|(_, y)| torus_distance(x, *y, l))
            .fold(f64::INFINITY, f64::min);
        let radius = (0.5 * sep).min(0.25 * l);
        let mu = mu_of(gamma, p, lambda);
        let mut local = 0.0;
        let mut weight = 0.0;
        for (k, v) in u.values.iter().enumerate() {
            let y = u.node(k);
            let vp = v.max(0.0).powf(p);
            if torus_distance(x, y, l) < radius {
                local += vp * vp.exp();
            }
            if nearest(y) == idx {
                weight += vp.exp_m1();
            }
        }
        let local_mass = 0.5 * lambda * p * p * local * cell2;
        let mut dev: f64 = 0.0;
        for ray in 0..8 {
            let th = ray as f64 * PI / 4.0;
            for step in 1..=10 {
                let s = 0.5 * step as f64;
                let y = [x[0] + mu * s * th.cos(), x[1] + mu * s * th.sin()];
                let uy = spectral.interpolate(&coeffs, y[0], y[1]);
                let z = 0.5 * p * gamma.powf(p - 1.0) * (gamma - uy);
                dev = dev.max((z - (s * s).ln_1p()).abs());
            }
        }
        peaks.push(Peak {
            position: x,
            gamma,
            mu,
            mu_cells: mu / u.cell(),
            radius,
            local_mass,
            mass_ratio: local_mass / (4.0 * PI * gamma.powf(2.0 - p)),
            weight: weight * cell2 / exp_total,
            profile_deviation: dev,
        });
    }
    let total_w: f64 = peaks.iter().map(|q| q.weight).sum();
    let sigma = Barycenter::new(pts.clone(), peaks.iter().map(|q| q.weight / total_w).collect(), l)?;
    let density = crate::testfn::normalized_density(u, p)?;
    let kr = kr::w1(&Cloud::from_density(&density, 64)?, &Cloud::from_barycenter(&sigma)?, l, KrOptions::default())?;
    let excess_leading =
        16.0 * PI * (p - 1.0) / (p * p) * peaks.iter().map(|q| q.gamma.powf(-2.0 * p)).sum::<f64>();
    Ok(PeakTable {
        excess: beta - 4.0 * PI * peaks.len() as f64,
        peaks,
        beta,
        excess_leading,
        kr_distance: kr.distance,
        kr_residual: kr.residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchPoint {
    pub report: SolveReport,
    pub peaks: PeakTable,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchRecord {
    pub p: f64,
    pub points: Vec<BranchPoint>,
    /// Accepted states, aligned with `points`.
    #[serde(skip)]
    pub states: Vec<TorusField>,
    /// Why the branch ended early, if it did.
    pub stopped: Option<String>,
}

impl BranchRecord {
    pub fn betas(&self) -> Vec<f64> {
        self.points.iter().map(|q| q.report.beta).collect()
    }

    pub fn u_max(&self) -> Vec<f64> {
        self.points.iter().map(|q| q.report.u_max).collect()
    }
}

/// Natural-parameter continuation in `β` from a solution at `beta_start`.
///
/// Each step is predicted by secant extrapolation and corrected by [`solve_newton`];
/// failed steps are halved. `init` is first converged at `beta_start` (by descent
/// when `β < 4π`). Returns the record together with the error that ended the branch
/// early, if any (`BlowUpDetected`, `StepCollapse`).
pub fn continue_branch(
    p: f64,
    beta_start: f64,
    beta_end: f64,
    steps: usize,
    init: &TorusField,
    opts: &SolverOptions,
) -> Result<(BranchRecord, Option<Error>)> {
    if steps == 0 || beta_start == beta_end {
        return Err(invalid("continuation needs steps > 0 and distinct endpoints"));
    }
    let start = if beta_start < 4.0 * PI && p < 2.0 {
        let m = solve_min(p, beta_start, init, opts)?;
        solve_newton(p, beta_start, &m.u, opts)?
    } else {
        solve_newton(p, beta_start, init, opts)?
    };
    let mut record = BranchRecord { p, points: Vec::new(), states: Vec::new(), stopped: None };
    let push = |record: &mut BranchRecord, sol: &Solution| -> Result<()> {
        let peaks = blow_up_diagnostics(&sol.u, sol.report.lambda, p)?;
        record.points.push(BranchPoint { report: sol.report.clone(), peaks });
        record.states.push(sol.u.clone());
        Ok(())
    };
    push(&mut record, &start)?;
    let nominal = (beta_end - beta_start) / steps as f64;
    let mut step = nominal;
    let mut current = start;
    let mut previous: Option<Solution> = None;
    let dir = nominal.signum();
    while dir * (beta_end - current.report.beta) > 1e-12 * beta_end.abs() {
        let beta = if dir * (current.report.beta + step - beta_end) > 0.0 { beta_end } else { current.report.beta + step };
        let predictor = match &previous {
            Some(prev) => {
                let r = (beta - current.report.beta) / (current.report.beta - prev.report.beta);
                let v: Vec<f64> =
                    current.u.values.iter().zip(&prev.u.values).map(|(a, b)| a + r * (a - b)).collect();
                current.u.with_values(v)
            }
            None => current.u.clone(),
        };
        match solve_newton(p, beta, &predictor, opts) {
            Ok(sol) => {
                let mu = mu_of(sol.report.u_max, p, sol.report.lambda);
                let blown = sol.report.u_max > opts.u_ceiling || mu < opts.mu_floor_cells * sol.u.cell();
                push(&mut record, &sol)?;
                if blown {
                    let e = Error::BlowUpDetected { beta, u_max: sol.report.u_max, mu };
                    record.stopped = Some(e.to_string());
                    return Ok((record, Some(e)));
                }
                previous = Some(std::mem::replace(&mut current, sol));
                step = (2.0 * step).clamp(-nominal.abs(), nominal.abs());
            }
            Err(_) => {
                step *= 0.5;
                if step.abs() < opts.min_step_fraction * nominal.abs() {
                    let e = Error::StepCollapse { beta: current.report.beta };
                    record.stopped = Some(e.to_string());
                    return Ok((record, Some(e)));
                }
            }
        }
    }
    Ok((record, None))
}

/// Follows a solution at fixed `β` through the listed exponents (ending, e.g., at `p = 2`).
pub fn sweep_p(beta: f64, ps: &[f64], init: &TorusField, opts: &SolverOptions) -> Result<Vec<Solution>> {
    let mut out: Vec<Solution> = Vec::new();
    for &p in ps {
        let guess = out.last().map(|s| s.u.clone()).unwrap_or_else(|| init.clone());
        let sol = match solve_newton(p, beta, &guess, opts) {
            Ok(s) => s,
            Err(e) if out.is_empty() && beta < 4.0 * PI => {
                let m = solve_min(p, beta, &guess, opts).map_err(|_| e)?;
                solve_newton(p, beta, &m.u, opts)?
            }
            Err(e) => return Err(e),
        };
        out.push(sol);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_closed_forms() {
        let (p, beta, c, h0, l) = (1.5, 2.0 * PI, 0.7, 1.3, 2.0);
        let u = TorusField::constant(16, l, c, h0).unwrap();
        let a = l * l;
        let j = j_functional(&u, p, beta).unwrap();
        let expect = 0.5 * (2.0 - p) * (p * h0 * c * c * a / (2.0 * beta)).powf(p / (2.0 - p))
            - (a * c.powf(p).exp_m1()).ln();
        assert!((j - expect).abs() < 1e-12);
        let lam = lambda_from_u(&u, p, beta).unwrap();
        let back = beta_of(&u, lam, p).unwrap();
        // A constant is not critical in general, so only FormulaLambda is checked here.
        let q = 2.0 * (p - 1.0) / (2.0 - p);
        let lhs = 0.5 * lam * p * p * (p * h0 * c * c * a / (2.0 * beta)).powf(q) * a * c.powf(p).exp_m1();
        assert!((lhs / beta - 1.0).abs() < 1e-12);
        assert!(back > 0.0);
    }

    #[test]
    fn nonpositive_field_is_infinite() {
        let u = TorusField::constant(8, 1.0, -0.5, 1.0).unwrap();
        assert_eq!(j_functional(&u, 1.5, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(j_gradient(&u, 1.5, 1.0).unwrap_err(), Error::EmptyPositivePart);
    }

    #[test]
    fn gmres_solves_small_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let op = |x: &[f64]| (0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum()).collect::<Vec<f64>>();
        let b = [1.0, 2.0, 3.0];
        let (x, _) = gmres(op, &b, 1e-14, 2, 50).unwrap();
        let r = op(&x);
        for i in 0..3 {
            assert!((r[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn j_diff_agrees_with_plain_difference() {
        let u = TorusField::from_fn(16, 2.0, 1.0, |x, y| 1.0 + 0.3 * (PI * x).sin() * (PI * y).cos()).unwrap();
        let v: Vec<f64> = u.values.iter().map(|x| x * 1.01 + 0.02).collect();
        let ctx = Ctx::new(&u, 1.5, 5.0).unwrap();
        let plain = ctx.j(&v) - ctx.j(&u.values);
        assert!((ctx.j_diff(&u.values, &v) - plain).abs() < 1e-12);
    }
}
