//! Embedded Dormand–Prince 5(4) integrator with adaptive steps.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, h_init: 1e-3, h_min: 1e-14, h_max: f64::INFINITY, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `y' = f(t, y)` from `t0` towards `t_end`.
///
/// `on_step(t, y)` sees the initial point and every accepted step and may stop
/// the integration early. Returns the final time and state.
pub fn integrate<F, O>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
    mut on_step: O,
) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]) -> Flow,
{
    let n = y0.len();
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0.to_vec();
    if on_step(t, &y) == Flow::Stop {
        return Ok((t, y));
    }
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    f(t, &y, &mut k[0]);
    let mut h = opts.h_init.min(opts.h_max).min((t_end - t0).abs()) * dir;
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut steps = 0;
    while (t_end - t) * dir > 0.0 {
        if steps >= opts.max_steps {
            return Err(Error::StepFailure { at: t });
        }
        if (t + h - t_end) * dir > 0.0 {
            h = t_end - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for j in 0..s {
                    acc += h * A[s][j] * k[j][i];
                }
                ytmp[i] = acc;
            }
            f(t + C[s] * h, &ytmp, &mut k[s]);
            if s == 6 {
                ynew.copy_from_slice(&ytmp);
            }
        }
        let mut err = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for s in 0..7 {
                e += E[s] * k[s][i];
            }
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err += (h * e / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            h *= 0.25;
            if h.abs() < opts.h_min {
                return Err(Error::StepFailure { at: t });
            }
            continue;
        }
        if err <= 1.0 {
            t += h;
            std::mem::swap(&mut y, &mut ynew);
            k.swap(0, 6);
            steps += 1;
            if on_step(t, &y) == Flow::Stop {
                return Ok((t, y));
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).abs().min(opts.h_max) * dir;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            if h.abs() < opts.h_min {
                return Err(Error::StepFailure { at: t });
            }
        }
    }
    Ok((t, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let (t, y) = integrate(|_, y, d| d[0] = -y[0], 0.0, &[1.0], 5.0, &OdeOptions::default(), |_, _| Flow::Continue)
            .unwrap();
        assert_eq!(t, 5.0);
        assert!((y[0] - (-5f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_backwards() {
        let (_, y) = integrate(
            |_, y, d| {
                d[0] = y[1];
                d[1] = -y[0];
            },
            0.0,
            &[0.0, 1.0],
            -10.0,
            &OdeOptions::default(),
            |_, _| Flow::Continue,
        )
        .unwrap();
        assert!((y[0] - (-10f64).sin()).abs() < 1e-8);
    }

    #[test]
    fn observer_stops() {
        let (t, _) =
            integrate(|_, _, d| d[0] = 1.0, 0.0, &[0.0], 10.0, &OdeOptions::default(), |_, y| {
                if y[0] > 1.0 { Flow::Stop } else { Flow::Continue }
            })
            .unwrap();
        assert!(t > 1.0 && t < 10.0);
    }
}
