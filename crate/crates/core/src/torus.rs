//! Periodic sample grids on the flat torus `[0, L)²` and their spectral calculus.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::par;

/// `n × n` node samples (row-major, `index = j n + i` for the node `(i L/n, j L/n)`)
/// plus the positive weight `h` of `Δu + hu`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorusField {
    pub n: usize,
    pub box_len: f64,
    pub values: Vec<f64>,
    pub h_values: Vec<f64>,
}

impl TorusField {
    pub fn new(n: usize, box_len: f64, values: Vec<f64>, h_values: Vec<f64>) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(invalid(format!("grid size must be a power of two, got {n}")));
        }
        if !(box_len > 0.0 && box_len.is_finite()) {
            return Err(invalid("box length must be positive"));
        }
        if values.len() != n * n || h_values.len() != n * n {
            return Err(invalid("sample arrays must have n*n entries"));
        }
        if h_values.iter().any(|h| !(*h > 0.0)) {
            return Err(invalid("weight h must be positive everywhere"));
        }
        Ok(Self { n, box_len, values, h_values })
    }

    pub fn constant(n: usize, box_len: f64, value: f64, h0: f64) -> Result<Self> {
        Self::new(n, box_len, vec![value; n * n], vec![h0; n * n])
    }

    pub fn from_fn<F>(n: usize, box_len: f64, h0: f64, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Sync + Send,
    {
        let mut field = Self::constant(n, box_len, 0.0, h0)?;
        let h = box_len / n as f64;
        par::for_chunks_mut(&mut field.values, n, |j, row| {
            for (i, v) in row.iter_mut().enumerate() {
                *v = f(i as f64 * h, j as f64 * h);
            }
        });
        Ok(field)
    }

    /// Same grid and weight, new samples.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.n * self.n);
        Self { n: self.n, box_len: self.box_len, values, h_values: self.h_values.clone() }
    }

    pub fn cell(&self) -> f64 {
        self.box_len / self.n as f64
    }

    pub fn node(&self, index: usize) -> [f64; 2] {
        let h = self.cell();
        [(index % self.n) as f64 * h, (index / self.n) as f64 * h]
    }

    pub fn area(&self) -> f64 {
        self.box_len * self.box_len
    }

    /// Trapezoid (spectrally exact for band-limited data) integral of samples.
    pub fn integrate(&self, samples: &[f64]) -> f64 {
        let c = self.cell();
        samples.iter().sum::<f64>() * c * c
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn h_max(&self) -> f64 {
        self.h_values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// The constant value of `h`, if it is constant.
    pub fn h_constant(&self) -> Option<f64> {
        let h0 = self.h_values[0];
        self.h_values.iter().all(|h| *h == h0).then_some(h0)
    }
}

/// Geodesic distance on the torus of side `box_len`.
pub fn torus_distance(a: [f64; 2], b: [f64; 2], box_len: f64) -> f64 {
    let wrap = |d: f64| {
        let d = d.rem_euclid(box_len);
        d.min(box_len - d)
    };
    wrap(a[0] - b[0]).hypot(wrap(a[1] - b[1]))
}

/// Cached 2D FFT plans and the symbol `|k|²` of the nonnegative Laplacian.
pub struct Spectral {
    pub n: usize,
    pub box_len: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k2: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("n", &self.n).field("box_len", &self.box_len).finish()
    }
}

fn wavenumber(m: usize, n: usize, box_len: f64) -> f64 {
    let m = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
    2.0 * PI * m / box_len
}

fn transpose(data: &mut [Complex64], n: usize) {
    for j in 0..n {
        for i in (j + 1)..n {
            data.swap(j * n + i, i * n + j);
        }
    }
}

impl Spectral {
    pub fn new(n: usize, box_len: f64) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut k2 = vec![0.0; n * n];
        for j in 0..n {
            let ky = wavenumber(j, n, box_len);
            for i in 0..n {
                let kx = wavenumber(i, n, box_len);
                k2[j * n + i] = kx * kx + ky * ky;
            }
        }
        Self { n, box_len, fwd, inv, k2 }
    }

    pub fn for_field(field: &TorusField) -> Self {
        Self::new(field.n, field.box_len)
    }

    fn pass(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        par::for_chunks_mut(data, n, |_, row| plan.process(row));
        transpose(data, n);
        par::for_chunks_mut(data, n, |_, row| plan.process(row));
        transpose(data, n);
    }

    /// Unnormalized forward DFT.
    pub fn forward(&self, u: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.pass(&mut c, &self.fwd);
        c
    }

    /// Inverse of [`Spectral::forward`], real part.
    pub fn inverse(&self, mut c: Vec<Complex64>) -> Vec<f64> {
        self.pass(&mut c, &self.inv);
        let s = 1.0 / (self.n * self.n) as f64;
        c.iter().map(|z| z.re * s).collect()
    }

    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    /// Apply the Fourier multiplier `m(|k|²)`.
    pub fn multiplier<F: Fn(f64) -> f64>(&self, u: &[f64], m: F) -> Vec<f64> {
        let mut c = self.forward(u);
        for (z, k2) in c.iter_mut().zip(&self.k2) {
            *z *= m(*k2);
        }
        self.inverse(c)
    }

    /// Nonnegative Laplacian `-∇²u`.
    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        self.multiplier(u, |k2| k2)
    }

    /// `(Δ + shift)⁻¹ f` for a constant `shift > 0`.
    pub fn inverse_shifted(&self, f: &[f64], shift: f64) -> Vec<f64> {
        self.multiplier(f, |k2| 1.0 / (k2 + shift))
    }

    /// `∫ |∇u|²` via Parseval.
    pub fn dirichlet(&self, u: &[f64]) -> f64 {
        let c = self.forward(u);
        let n = self.n as f64;
        let s: f64 = c.iter().zip(&self.k2).map(|(z, k2)| k2 * z.norm_sqr()).sum();
        s * self.box_len * self.box_len / (n * n * n * n)
    }

    /// Band-limited interpolation at an arbitrary point from forward coefficients.
    pub fn interpolate(&self, coeffs: &[Complex64], x: f64, y: f64) -> f64 {
        let n = self.n;
        let ex: Vec<Complex64> =
            (0..n).map(|i| Complex64::from_polar(1.0, wavenumber(i, n, self.box_len) * x)).collect();
        let mut acc = 0.0;
        for j in 0..n {
            let ey = Complex64::from_polar(1.0, wavenumber(j, n, self.box_len) * y);
            let mut row = Complex64::new(0.0, 0.0);
            for i in 0..n {
                row += coeffs[j * n + i] * ex[i];
            }
            acc += (row * ey).re;
        }
        acc / (n * n) as f64
    }
}

/// `Δ + h` on a fixed grid, with its inverse.
#[derive(Debug)]
pub struct Operator {
    pub spectral: Spectral,
    h: Vec<f64>,
    h_const: Option<f64>,
    h_mean: f64,
    cell2: f64,
}

impl Operator {
    pub fn new(field: &TorusField) -> Self {
        let h_mean = field.h_values.iter().sum::<f64>() / field.h_values.len() as f64;
        Self {
            spectral: Spectral::for_field(field),
            h: field.h_values.clone(),
            h_const: field.h_constant(),
            h_mean,
            cell2: field.cell() * field.cell(),
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.spectral.laplacian(u);
        for ((o, u), h) in out.iter_mut().zip(u).zip(&self.h) {
            *o += h * u;
        }
        out
    }

    /// `(Δ + h)⁻¹ f`: diagonal for constant `h`, preconditioned CG otherwise.
    pub fn solve(&self, f: &[f64]) -> Vec<f64> {
        if let Some(h0) = self.h_const {
            return self.spectral.inverse_shifted(f, h0);
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut x = self.spectral.inverse_shifted(f, self.h_mean);
        let ax = self.apply(&x);
        let mut r: Vec<f64> = f.iter().zip(&ax).map(|(f, a)| f - a).collect();
        let mut z = self.spectral.inverse_shifted(&r, self.h_mean);
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        let f_norm = dot(f, f).sqrt().max(f64::MIN_POSITIVE);
        for _ in 0..500 {
            if dot(&r, &r).sqrt() <= 1e-14 * f_norm {
                break;
            }
            let ad = self.apply(&d);
            let alpha = rz / dot(&d, &ad);
            for i in 0..x.len() {
                x[i] += alpha * d[i];
                r[i] -= alpha * ad[i];
            }
            z = self.spectral.inverse_shifted(&r, self.h_mean);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..d.len() {
                d[i] = z[i] + beta * d[i];
            }
        }
        x
    }

    /// `⟨u, v⟩_h = ∫ ∇u·∇v + h u v`
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let av = self.apply(v);
        u.iter().zip(&av).map(|(a, b)| a * b).sum::<f64>() * self.cell2
    }

    pub fn norm2(&self, u: &[f64]) -> f64 {
        self.inner(u, u)
    }

    pub fn integrate(&self, samples: &[f64]) -> f64 {
        samples.iter().sum::<f64>() * self.cell2
    }

    /// `(Δ + h̄)⁻¹ f` with `h̄` the mean of `h`; equals [`Operator::solve`] for constant `h`.
    pub fn precondition(&self, f: &[f64]) -> Vec<f64> {
        self.spectral.inverse_shifted(f, self.h_const.unwrap_or(self.h_mean))
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }
}
