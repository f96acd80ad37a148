//! Kantorovich–Rubinstein (1-Wasserstein) distance on the torus by log-domain
//! Sinkhorn iterations, extrapolated in the regularization strength.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::par;
use crate::testfn::Barycenter;
use crate::torus::{torus_distance, TorusField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KrOptions {
    /// Regularization strength as a fraction of the box length.
    pub eps_rel: f64,
    /// Marginal L¹ error at which a Sinkhorn stage stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Densities are aggregated to at most `max_side²` support points.
    pub max_side: usize,
}

impl Default for KrOptions {
    fn default() -> Self {
        Self { eps_rel: 2e-3, tol: 1e-10, max_iter: 200_000, max_side: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KrResult {
    /// Linear extrapolation `2 W(ε/2) - W(ε)`, clamped at zero.
    pub distance: f64,
    /// `|W(ε/2) - W(ε)|`.
    pub residual: f64,
    pub w_eps: f64,
    pub w_half: f64,
    pub eps: f64,
    pub iterations: usize,
}

/// Weighted point cloud.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cloud {
    pub points: Vec<[f64; 2]>,
    pub masses: Vec<f64>,
}

impl Cloud {
    pub fn new(points: Vec<[f64; 2]>, masses: Vec<f64>) -> Result<Self> {
        if points.len() != masses.len() || points.is_empty() {
            return Err(invalid("point cloud needs matching, non-empty points and masses"));
        }
        if masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(invalid("masses must be nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("point cloud has no mass"));
        }
        let (points, masses) = points
            .into_iter()
            .zip(masses)
            .filter(|(_, m)| *m > 0.0)
            .map(|(x, m)| (x, m / total))
            .unzip();
        Ok(Self { points, masses })
    }

    pub fn from_barycenter(sigma: &Barycenter) -> Result<Self> {
        Self::new(sigma.points.clone(), sigma.weights.clone())
    }

    /// Cell masses of a density, aggregated into blocks placed at their mass centroids.
    pub fn from_density(density: &TorusField, max_side: usize) -> Result<Self> {
        let n = density.n;
        let l = density.box_len;
        let h = density.cell();
        let block = n.div_ceil(max_side.max(1)).next_power_of_two().min(n);
        let nb = n / block;
        let mut points = Vec::with_capacity(nb * nb);
        let mut masses = Vec::with_capacity(nb * nb);
        for bj in 0..nb {
            for bi in 0..nb {
                let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
                for dj in 0..block {
                    for di in 0..block {
                        let v = density.values[(bj * block + dj) * n + bi * block + di];
                        if v < 0.0 {
                            return Err(invalid("density has negative samples"));
                        }
                        let w = v * h * h;
                        m += w;
                        mx += w * di as f64;
                        my += w * dj as f64;
                    }
                }
                if m > 0.0 {
                    let x = ((bi * block) as f64 + mx / m) * h;
                    let y = ((bj * block) as f64 + my / m) * h;
                    points.push([x.rem_euclid(l), y.rem_euclid(l)]);
                    masses.push(m);
                }
            }
        }
        Self::new(points, masses)
    }
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Transport cost `⟨P_ε, C⟩` of the entropic plan at strength `eps`, starting from an
/// ε-scaling schedule. Returns the cost and the total iteration count.
pub fn sinkhorn_cost(a: &Cloud, b: &Cloud, box_len: f64, eps: f64, tol: f64, max_iter: usize) -> Result<(f64, usize)> {
    let (na, nb) = (a.points.len(), b.points.len());
    let rows: Vec<usize> = (0..na).collect();
    let cost: Vec<Vec<f64>> =
        par::map(&rows, |&i| b.points.iter().map(|y| torus_distance(a.points[i], *y, box_len)).collect());
    let la: Vec<f64> = a.masses.iter().map(|m| m.ln()).collect();
    let lb: Vec<f64> = b.masses.iter().map(|m| m.ln()).collect();
    let mut f = vec![0.0; na];
    let mut g = vec![0.0; nb];
    let mut e = box_len.max(eps);
    let mut total = 0;
    loop {
        e = e.max(eps);
        let mut converged = false;
        // Coarser stages only warm-start the next one.
        let budget = if e <= eps { max_iter } else { (max_iter / 10).max(1) };
        for _ in 0..budget {
            total += 1;
            f = par::map(&rows, |&i| {
                let c = &cost[i];
                -e * log_sum_exp((0..nb).map(|j| (g[j] - c[j]) / e + lb[j]))
            });
            let cols: Vec<usize> = (0..nb).collect();
            g = par::map(&cols, |&j| -e * log_sum_exp((0..na).map(|i| (f[i] - cost[i][j]) / e + la[i])));
            // Columns are now exact; measure the row marginal.
            let err: f64 = rows
                .iter()
                .map(|&i| {
                    let s: f64 = (0..nb).map(|j| ((f[i] + g[j] - cost[i][j]) / e + lb[j]).exp()).sum();
                    (a.masses[i] * s - a.masses[i]).abs()
                })
                .sum();
            if err < tol {
                converged = true;
                break;
            }
        }
        if e <= eps {
            if !converged {
                return Err(Error::NonConvergence { iterations: total });
            }
            break;
        }
        e *= 0.5;
    }
    let value: f64 = par::map(&rows, |&i| {
        (0..nb).map(|j| ((f[i] + g[j] - cost[i][j]) / eps + la[i] + lb[j]).exp() * cost[i][j]).sum::<f64>()
    })
    .iter()
    .sum();
    Ok((value, total))
}

/// Extrapolated 1-Wasserstein distance between two clouds.
pub fn w1(a: &Cloud, b: &Cloud, box_len: f64, opts: KrOptions) -> Result<KrResult> {
    let eps = opts.eps_rel * box_len;
    let (w_eps, i1) = sinkhorn_cost(a, b, box_len, eps, opts.tol, opts.max_iter)?;
    let (w_half, i2) = sinkhorn_cost(a, b, box_len, 0.5 * eps, opts.tol, opts.max_iter)?;
    Ok(KrResult {
        distance: (2.0 * w_half - w_eps).max(0.0),
        residual: (w_half - w_eps).abs(),
        w_eps,
        w_half,
        eps,
        iterations: i1 + i2,
    })
}

/// `dist(density, σ)` with the torus geodesic cost.
pub fn kr_distance(density: &TorusField, sigma: &Barycenter, opts: KrOptions) -> Result<KrResult> {
    if (density.box_len - sigma.box_len).abs() > 1e-12 * sigma.box_len {
        return Err(invalid("density and barycenter live on different boxes"));
    }
    let a = Cloud::from_density(density, opts.max_side)?;
    let b = Cloud::from_barycenter(sigma)?;
    w1(&a, &b, sigma.box_len, opts)
}

/// `Σ_c m_c min_i d(c, xᵢ)`: a lower bound on the distance to `σ`, and the exact
/// distance when each nearest-atom region carries mass `tᵢ`.
pub fn nearest_atom_cost(cloud: &Cloud, sigma: &Barycenter) -> f64 {
    cloud
        .points
        .iter()
        .zip(&cloud.masses)
        .map(|(x, m)| {
            m * sigma.points.iter().map(|y| torus_distance(*x, *y, sigma.box_len)).fold(f64::INFINITY, f64::min)
        })
        .sum()
}
