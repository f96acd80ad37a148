//! Barycenter test functions on the torus: truncated logarithmic bubbles glued
//! through their exponential densities, with mass-splitting shifts `τ`.
//!
//! The core radius `r` is exponentially small in `γ^p`, far below any grid, so the
//! Dirichlet energy and the exponential mass are evaluated per bubble in the
//! variable `t = ln(1 + d²/r²)`. Supports are disjoint, hence these sums are exact.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::quad::{gauss_legendre, integrate_with_breaks, QuadOptions};
use crate::torus::{torus_distance, Spectral, TorusField};

/// `(2/p)^{1/p}`, the peak height of a bubble in units of `γ`.
pub fn peak_coeff(p: f64) -> f64 {
    (2.0 / p).powf(1.0 / p)
}

/// `ln(e^x - 1)` without overflow.
pub(crate) fn ln_expm1(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Weighted point configuration `Σ tᵢ δ_{xᵢ}` on the torus `[0, L)²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Barycenter {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub box_len: f64,
}

impl Barycenter {
    pub fn new(points: Vec<[f64; 2]>, weights: Vec<f64>, box_len: f64) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(invalid("barycenter needs matching, non-empty points and weights"));
        }
        if !(box_len > 0.0 && box_len.is_finite()) {
            return Err(invalid("box length must be positive"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights sum to {total}, not 1")));
        }
        for q in &points {
            if q.iter().any(|c| !(*c >= 0.0 && *c < box_len)) {
                return Err(invalid(format!("point {q:?} outside [0, {box_len})^2")));
            }
        }
        Ok(Self { points, weights, box_len })
    }

    pub fn single(x: [f64; 2], box_len: f64) -> Result<Self> {
        Self::new(vec![x], vec![1.0], box_len)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest pairwise torus distance (infinite for a single point).
    pub fn min_separation(&self) -> f64 {
        let mut d = f64::INFINITY;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                d = d.min(torus_distance(self.points[i], self.points[j], self.box_len));
            }
        }
        d
    }

    /// Every point shifted by `v`, wrapped back into the box.
    pub fn translated(&self, v: [f64; 2]) -> Self {
        let l = self.box_len;
        let points = self
            .points
            .iter()
            .map(|q| [(q[0] + v[0]).rem_euclid(l), (q[1] + v[1]).rem_euclid(l)])
            .collect();
        Self { points, weights: self.weights.clone(), box_len: l }
    }
}

/// Choice of the core radius `r_γ`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum CoreRadius {
    /// `r = γ⁻¹ e^{-γ^p/2}`: support radius `δ ≈ 1/γ`, exponential mass `e^{(2/p - 1)γ^p}` up to powers of `γ`.
    #[default]
    Consistent,
    /// `r = γ⁻¹ e^{-γ^p}`: support radius `δ ≈ γ⁻¹ e^{-γ^p/2}`.
    Literal,
}

impl CoreRadius {
    pub fn log_r(self, gamma: f64, p: f64) -> f64 {
        match self {
            CoreRadius::Consistent => -gamma.ln() - 0.5 * gamma.powf(p),
            CoreRadius::Literal => -gamma.ln() - gamma.powf(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunctionParams {
    pub gamma: f64,
    pub p: f64,
    pub log_r_gamma: f64,
    pub delta_gamma: f64,
    pub taus: Vec<f64>,
    pub core: CoreRadius,
}

/// `t`-extent of the support of `(φ_γ - τ)₊`.
fn t_support(gamma: f64, p: f64, tau: f64) -> f64 {
    (gamma.powf(p) * (1.0 - tau / (peak_coeff(p) * gamma))).max(0.0)
}

/// `ln ∫₀^{t_τ} e^t (e^{a(t)^p} - 1) dt` with `a(t) = Cγ(1 - t/γ^p) - τ`.
///
/// Multiplying by `π r²` gives the exponential mass of one shifted bubble.
fn log_core_integral(gamma: f64, p: f64, tau: f64) -> Result<f64> {
    let ts = t_support(gamma, p, tau);
    if ts <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let c = peak_coeff(p);
    let gp = gamma.powf(p);
    let a = |t: f64| (c * gamma * (1.0 - t / gp) - tau).max(0.0);
    // t + a^p is convex in t, so the log-integrand peaks at an endpoint.
    let shift = a(0.0).powf(p).max(ts);
    let f = |t: f64| {
        let ap = a(t).powf(p);
        (t + ap - shift).exp() * -(-ap).exp_m1()
    };
    let mut breaks = Vec::new();
    let mut w = 0.5;
    while w < 0.5 * ts {
        breaks.push(w);
        breaks.push(ts - w);
        w *= 2.0;
    }
    let opts = QuadOptions { abs_tol: 0.0, rel_tol: 1e-13, max_intervals: 4000 };
    let res = integrate_with_breaks(f, 0.0, ts, &breaks, opts);
    if !res.converged && res.error > 1e-10 * res.value.abs() {
        return Err(Error::QuadratureTolerance { achieved: res.error / res.value, requested: 1e-13 });
    }
    Ok(shift + res.value.ln())
}

/// Shift `τ` that keeps the fraction `t` of the exponential mass of `φ_γ`.
pub fn tau_solve(t: f64, gamma: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("mass fraction {t} outside [0, 1]")));
    }
    if !(gamma > 0.0) || !(1.0..=2.0).contains(&p) {
        return Err(invalid("tau_solve needs gamma > 0 and p in [1, 2]"));
    }
    let top = peak_coeff(p) * gamma;
    if t == 1.0 {
        return Ok(0.0);
    }
    if t == 0.0 {
        return Ok(top);
    }
    let l0 = log_core_integral(gamma, p, 0.0)?;
    let ratio = |tau: f64| -> Result<f64> { Ok((log_core_integral(gamma, p, tau)? - l0).exp()) };
    // Coarse monotonicity scan; a rise here means the quadrature is wrong.
    let mut prev = 1.0;
    for k in 1..=8 {
        let r = ratio(top * k as f64 / 8.0)?;
        if r > prev * (1.0 + 1e-10) {
            return Err(Error::BracketFailure { target: t });
        }
        prev = r;
    }
    let (mut lo, mut hi) = (0.0, top);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi || hi - lo <= 1e-15 * top {
            break;
        }
        if ratio(mid)? > t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `φ_{γ,σ}` with its per-bubble shifts and exact radial bookkeeping.
#[derive(Debug, Clone, Serialize)]
pub struct TestFunction {
    pub sigma: Barycenter,
    pub params: TestFunctionParams,
    /// `ln` of each bubble's exponential mass `∫(e^{(φ_x - τ)₊^p} - 1)`.
    pub log_masses: Vec<f64>,
}

impl TestFunction {
    pub fn new(sigma: Barycenter, gamma: f64, p: f64, core: CoreRadius) -> Result<Self> {
        if !(gamma > 0.0) || !(1.0..=2.0).contains(&p) {
            return Err(invalid("test function needs gamma > 0 and p in [1, 2]"));
        }
        let log_r = core.log_r(gamma, p);
        let delta = (log_r + 0.5 * ln_expm1(gamma.powf(p))).exp();
        if delta >= 0.5 * sigma.min_separation() || delta >= 0.25 * sigma.box_len {
            return Err(Error::SupportOverlap);
        }
        let taus = sigma
            .weights
            .iter()
            .map(|&t| tau_solve(t, gamma, p))
            .collect::<Result<Vec<_>>>()?;
        let log_masses = taus
            .iter()
            .map(|&tau| Ok(PI.ln() + 2.0 * log_r + log_core_integral(gamma, p, tau)?))
            .collect::<Result<Vec<_>>>()?;
        let params = TestFunctionParams { gamma, p, log_r_gamma: log_r, delta_gamma: delta, taus, core };
        Ok(Self { sigma, params, log_masses })
    }

    /// `(φ_{γ,xᵢ} - τᵢ)₊` at torus distance `d` from `xᵢ`.
    pub fn shifted_bubble(&self, i: usize, d: f64) -> f64 {
        let TestFunctionParams { gamma, p, log_r_gamma, .. } = self.params;
        let q = d / log_r_gamma.exp();
        let t = if q.is_finite() { (q * q).ln_1p() } else { 2.0 * (d.ln() - log_r_gamma) };
        (peak_coeff(p) * gamma * (1.0 - t / gamma.powf(p)) - self.params.taus[i]).max(0.0)
    }

    /// Radius of the support of the `i`-th shifted bubble.
    pub fn support_radius(&self, i: usize) -> f64 {
        let ts = t_support(self.params.gamma, self.params.p, self.params.taus[i]);
        if ts <= 0.0 {
            return 0.0;
        }
        (self.params.log_r_gamma + 0.5 * ln_expm1(ts)).exp()
    }

    /// Pointwise `φ_{γ,σ}(y) = ln^{1/p}(1 + Σ (e^{aᵢ^p} - 1))`.
    pub fn value(&self, y: [f64; 2]) -> f64 {
        let p = self.params.p;
        let exps: Vec<f64> = (0..self.sigma.len())
            .map(|i| self.shifted_bubble(i, torus_distance(y, self.sigma.points[i], self.sigma.box_len)))
            .filter(|a| *a > 0.0)
            .map(|a| a.powf(p))
            .collect();
        if exps.is_empty() {
            return 0.0;
        }
        let m = exps.iter().copied().fold(0.0, f64::max);
        let log_sum = if m < 600.0 {
            exps.iter().map(|e| e.exp_m1()).sum::<f64>().ln_1p()
        } else {
            m + ((-m).exp() + exps.iter().map(|e| (e - m).exp() - (-m).exp()).sum::<f64>()).ln()
        };
        log_sum.powf(1.0 / p)
    }

    /// Nodal samples on the grid of `template`, keeping its weight `h`.
    pub fn sample(&self, template: &TorusField) -> Result<TorusField> {
        if (template.box_len - self.sigma.box_len).abs() > 1e-12 * self.sigma.box_len {
            return Err(invalid("grid and barycenter live on different boxes"));
        }
        if self.params.delta_gamma < 4.0 * template.cell() {
            return Err(Error::UnderResolved { delta: self.params.delta_gamma });
        }
        let values: Vec<f64> =
            crate::par::map(&(0..template.n * template.n).collect::<Vec<_>>(), |&k| self.value(template.node(k)));
        Ok(template.with_values(values))
    }

    pub fn log_mass(&self) -> f64 {
        log_sum_exp(&self.log_masses)
    }

    /// Share of the exponential mass carried by each bubble.
    pub fn bubble_fractions(&self) -> Vec<f64> {
        let total = self.log_mass();
        self.log_masses.iter().map(|l| (l - total).exp()).collect()
    }

    /// `∫|∇φ|²`, exact: `C² γ^{2-2p} 4π (t_τ - 1 + e^{-t_τ})` per bubble.
    pub fn dirichlet(&self) -> f64 {
        let TestFunctionParams { gamma, p, .. } = self.params;
        let c = peak_coeff(p);
        self.params
            .taus
            .iter()
            .map(|&tau| {
                let ts = t_support(gamma, p, tau);
                c * c * gamma.powf(2.0 - 2.0 * p) * 4.0 * PI * (ts + (-ts).exp_m1())
            })
            .sum()
    }

    /// `∫φ²` by radial quadrature (equals the `L²_h` term when `h ≡ 1`).
    pub fn l2_radial(&self) -> f64 {
        let TestFunctionParams { gamma, p, log_r_gamma, .. } = self.params;
        let c = peak_coeff(p);
        let gp = gamma.powf(p);
        self.params
            .taus
            .iter()
            .map(|&tau| {
                let ts = t_support(gamma, p, tau);
                if ts <= 0.0 {
                    return 0.0;
                }
                let f = |t: f64| (t - ts).exp() * (c * gamma * (1.0 - t / gp) - tau).max(0.0).powi(2);
                let breaks: Vec<f64> = (1..40).map(|k| ts - k as f64).filter(|b| *b > 0.0).collect();
                let v = integrate_with_breaks(f, 0.0, ts, &breaks, QuadOptions::rel(1e-12)).value;
                PI * (2.0 * log_r_gamma + ts).exp() * v
            })
            .sum()
    }

    /// Cell-averaged normalized density `(e^{φ^p} - 1)/∫(e^{φ^p} - 1)` on the node-centered
    /// cells of `template`.
    ///
    /// Off-center cells use tensor Gauss–Legendre; the cell containing a bubble center takes
    /// the complement of that bubble's mass, which is known exactly.
    pub fn cell_density(&self, template: &TorusField) -> Result<TorusField> {
        let n = template.n;
        let h = template.cell();
        let (gx, gw) = gauss_legendre(12);
        let fractions = self.bubble_fractions();
        let p = self.params.p;
        let mut mass = vec![0.0; n * n];
        for (i, x) in self.sigma.points.iter().enumerate() {
            if fractions[i] == 0.0 {
                continue;
            }
            let rho = self.support_radius(i);
            let log_norm = self.log_masses[i];
            // Per-bubble density normalized to total mass one.
            let density = |d: f64| {
                let a = self.shifted_bubble(i, d);
                if a <= 0.0 {
                    0.0
                } else {
                    (ln_expm1(a.powf(p)) - log_norm).exp()
                }
            };
            let ci = (x[0] / h).round() as i64;
            let cj = (x[1] / h).round() as i64;
            let reach = (rho / h).ceil() as i64 + 1;
            let mut spill = 0.0;
            for dj in -reach..=reach {
                for di in -reach..=reach {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    // Cell offset from the bubble center, in the covering plane.
                    let ox = (ci + di) as f64 * h - x[0];
                    let oy = (cj + dj) as f64 * h - x[1];
                    let near = (ox.abs() - 0.5 * h).max(0.0).hypot((oy.abs() - 0.5 * h).max(0.0));
                    if near >= rho {
                        continue;
                    }
                    let mut m = 0.0;
                    for (a, wa) in gx.iter().zip(&gw) {
                        for (b, wb) in gx.iter().zip(&gw) {
                            let d = (ox + 0.5 * h * a).hypot(oy + 0.5 * h * b);
                            m += wa * wb * density(d);
                        }
                    }
                    m *= 0.25 * h * h;
                    let gi = (ci + di).rem_euclid(n as i64) as usize;
                    let gj = (cj + dj).rem_euclid(n as i64) as usize;
                    mass[gj * n + gi] += fractions[i] * m;
                    spill += m;
                }
            }
            let center = ci.rem_euclid(n as i64) as usize + n * cj.rem_euclid(n as i64) as usize;
            mass[center] += fractions[i] * (1.0 - spill).max(0.0);
        }
        let total: f64 = mass.iter().sum();
        Ok(template.with_values(mass.iter().map(|m| m / (total * h * h)).collect()))
    }
}

/// Samples `φ_{γ,σ}` (consistent core radius) on the grid of `template`.
pub fn build_phi(sigma: &Barycenter, gamma: f64, p: f64, template: &TorusField) -> Result<TorusField> {
    TestFunction::new(sigma.clone(), gamma, p, CoreRadius::Consistent)?.sample(template)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiEnergies {
    /// Exact `∫|∇φ|²`.
    pub dirichlet: f64,
    /// Spectral `∫|∇φ|²` of the nodal samples. The sub-grid core shows up as a one-node
    /// spike, so this is a resolution diagnostic, not an estimate.
    pub dirichlet_grid: f64,
    /// `∫hφ²`: radial quadrature times `h` for constant `h`, nodal sum otherwise.
    pub l2h: f64,
    pub l2h_grid: f64,
    pub logmass: f64,
    pub j: f64,
    /// `logmass - (2-p)/2 (p‖φ‖²_h/8π)^{p/(2-p)}`, bounded above by the Moser–Trudinger constant.
    pub mt_deficit: f64,
}

/// `logmass` minus the Young-inequality bound `(2-p)/2 (p‖u‖²_h/8π)^{p/(2-p)}`.
pub fn mt_deficit(logmass: f64, norm2: f64, p: f64) -> f64 {
    logmass - 0.5 * (2.0 - p) * (p * norm2 / (8.0 * PI)).powf(p / (2.0 - p))
}

/// Energies of `φ_{γ,σ}` sampled on `field`, with `J_{p,β}`.
pub fn phi_energies(tf: &TestFunction, field: &TorusField, beta: f64) -> Result<PhiEnergies> {
    let p = tf.params.p;
    if !(p > 1.0 && p < 2.0) {
        return Err(invalid("phi_energies needs p in (1, 2)"));
    }
    if !(beta > 0.0) {
        return Err(invalid("beta must be positive"));
    }
    if field.max() <= 0.0 {
        return Err(Error::EmptyPositivePart);
    }
    let sq: Vec<f64> = field.values.iter().zip(&field.h_values).map(|(u, h)| h * u * u).collect();
    let l2h_grid = field.integrate(&sq);
    let l2h = match field.h_constant() {
        Some(h0) => h0 * tf.l2_radial(),
        None => l2h_grid,
    };
    let dirichlet = tf.dirichlet();
    let dirichlet_grid = Spectral::for_field(field).dirichlet(&field.values);
    let logmass = tf.log_mass();
    let norm2 = dirichlet + l2h;
    let j = 0.5 * (2.0 - p) * (p * norm2 / (2.0 * beta)).powf(p / (2.0 - p)) - logmass;
    Ok(PhiEnergies { dirichlet, dirichlet_grid, l2h, l2h_grid, logmass, j, mt_deficit: mt_deficit(logmass, norm2, p) })
}

/// Nodal `(e^{u₊^p} - 1)/∫(e^{u₊^p} - 1)`.
pub fn normalized_density(field: &TorusField, p: f64) -> Result<TorusField> {
    let powers: Vec<f64> = field.values.iter().map(|u| u.max(0.0).powf(p)).collect();
    let m = powers.iter().copied().fold(0.0, f64::max);
    if m <= 0.0 {
        return Err(Error::EmptyPositivePart);
    }
    // e^{-m}(e^{x} - 1) = e^{x-m} - e^{-m}
    let shifted: Vec<f64> = if m < 600.0 {
        powers.iter().map(|x| x.exp_m1()).collect()
    } else {
        powers.iter().map(|x| (x - m).exp() - (-m).exp()).collect()
    };
    let total = field.integrate(&shifted);
    Ok(field.with_values(shifted.iter().map(|v| v / total).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_expm1_matches_direct() {
        for x in [1e-3, 0.5, 3.0, 29.0, 31.0, 50.0] {
            assert!((ln_expm1(x) - x.exp_m1().ln()).abs() < 1e-13 * x.max(1.0));
        }
        assert_eq!(ln_expm1(1000.0), 1000.0);
    }

    #[test]
    fn tau_endpoints() {
        assert_eq!(tau_solve(1.0, 6.0, 1.5).unwrap(), 0.0);
        assert_eq!(tau_solve(0.0, 6.0, 1.5).unwrap(), peak_coeff(1.5) * 6.0);
    }

    #[test]
    fn tau_recovers_fraction() {
        let (g, p) = (6.0, 1.5);
        let tau = tau_solve(0.3, g, p).unwrap();
        let r = (log_core_integral(g, p, tau).unwrap() - log_core_integral(g, p, 0.0).unwrap()).exp();
        assert!((r - 0.3).abs() < 1e-12);
    }

    #[test]
    fn core_integral_matches_plain_quadrature() {
        let (g, p, tau): (f64, f64, f64) = (3.0, 1.5, 0.4);
        let c = peak_coeff(p);
        let gp = g.powf(p);
        let ts = t_support(g, p, tau);
        let f = |t: f64| t.exp() * ((c * g * (1.0 - t / gp) - tau).max(0.0).powf(p).exp_m1());
        let direct = crate::quad::integrate(f, 0.0, ts, QuadOptions::rel(1e-13)).value;
        assert!((log_core_integral(g, p, tau).unwrap() - direct.ln()).abs() < 1e-11);
    }

    #[test]
    fn barycenter_validation() {
        assert!(Barycenter::new(vec![[0.1, 0.1]], vec![0.9], 1.0).is_err());
        assert!(Barycenter::new(vec![[1.1, 0.1]], vec![1.0], 1.0).is_err());
        assert!(Barycenter::new(vec![[0.1, 0.1], [0.5, 0.5]], vec![0.5, 0.5], 1.0).is_ok());
    }

    #[test]
    fn overlap_is_refused() {
        let s = Barycenter::new(vec![[0.1, 0.1], [0.15, 0.1]], vec![0.5, 0.5], 1.0).unwrap();
        assert_eq!(TestFunction::new(s, 6.0, 1.5, CoreRadius::Consistent).unwrap_err(), Error::SupportOverlap);
    }

    #[test]
    fn support_radius_without_shift_is_delta() {
        let s = Barycenter::single([0.5, 0.5], 1.0).unwrap();
        let tf = TestFunction::new(s, 6.0, 1.5, CoreRadius::Consistent).unwrap();
        assert!((tf.support_radius(0) / tf.params.delta_gamma - 1.0).abs() < 1e-12);
        assert!(tf.value([0.5 + 0.99 * tf.params.delta_gamma, 0.5]) > 0.0);
        assert_eq!(tf.value([0.5 + 1.01 * tf.params.delta_gamma, 0.5]), 0.0);
    }
}
