//! Least-squares extraction of `c0 + c1 γ^{-p} + c2 γ^{-2p}`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};

const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionFit {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Largest relative misfit over the samples.
    pub residual: f64,
    pub gammas: Vec<f64>,
    pub condition: f64,
}

impl ExpansionFit {
    pub fn eval(&self, gamma: f64, p: f64) -> f64 {
        let g = gamma.powf(-p);
        self.c0 + self.c1 * g + self.c2 * g * g
    }
}

pub fn fit_expansion(samples: &[(f64, f64)], p: f64) -> Result<ExpansionFit> {
    if samples.len() < 4 {
        return Err(invalid("expansion fit needs at least 4 samples"));
    }
    let mut gammas: Vec<f64> = samples.iter().map(|s| s.0).collect();
    gammas.sort_by(f64::total_cmp);
    if gammas.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("expansion fit needs distinct gamma values"));
    }
    let m = samples.len();
    let a = DMatrix::from_fn(m, 3, |i, j| samples[i].0.powf(-p * j as f64));
    let b = DVector::from_iterator(m, samples.iter().map(|s| s.1));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::SingularFit { condition });
    }
    let c = svd.solve(&b, 0.0).map_err(|e| invalid(e.to_string()))?;
    let fitted = &a * &c;
    let residual = (0..m).map(|i| ((fitted[i] - b[i]) / b[i]).abs()).fold(0.0, f64::max);
    Ok(ExpansionFit { c0: c[0], c1: c[1], c2: c[2], residual, gammas, condition })
}
