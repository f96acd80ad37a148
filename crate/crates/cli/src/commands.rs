use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use mtlab::fit::fit_expansion;
use mtlab::kr::{kr_distance, KrOptions};
use mtlab::par;
use mtlab::radial::{self, solve_bubble, BubbleParams};
use mtlab::solver::{self, PeakTable, SolverOptions};
use mtlab::testfn::{peak_coeff, phi_energies, Barycenter, TestFunction};
use mtlab::torus::{torus_distance, TorusField};
use mtlab::{Error, Result};

use crate::config::*;
use crate::report::{Cell, Report, Series};

pub fn bubble(cfg: &BubbleConfig) -> Result<Report> {
    let p = cfg.p;
    let out = par::map(&cfg.gammas, |&g| -> Result<_> {
        let params = BubbleParams::concentrated(g, p, cfg.h0)?;
        let prof = solve_bubble(&params, cfg.s_cut)?;
        let energy = radial::bubble_energy_with(g, p, cfg.h0, cfg.radius.into())?;
        Ok((params, prof, energy))
    });
    let mut r = Report::new(
        "bubble",
        vec!["gamma", "p", "gamma_p", "mu", "log_lambda", "liouville_deviation", "product", "product_minus_4pi", "t_bar"],
    );
    let mut profiles = Vec::new();
    for res in out {
        let (params, prof, e) = res?;
        r.push(vec![
            params.gamma.into(),
            p.into(),
            params.gamma.powf(p).into(),
            params.mu.into(),
            params.log_lambda.into(),
            prof.liouville_deviation(cfg.s_cut).into(),
            e.product.into(),
            (e.product - 4.0 * PI).into(),
            e.t_bar.into(),
        ]);
        for (s, z) in prof.s_grid.iter().zip(&prof.z_values) {
            profiles.push(vec![params.gamma.into(), (*s).into(), (*z).into(), (s * s).ln_1p().into()]);
        }
    }
    r.extra.push(("profiles", vec!["gamma", "s", "z", "liouville"], profiles));
    r.plots.push(Series::new("gamma_p", "liouville_deviation").log_y());
    r.plots.push(Series::new("gamma", "product_minus_4pi").log_y());
    Ok(r)
}

pub fn moments(cfg: &MomentsConfig) -> Result<Report> {
    let m = radial::moment_integrals_with(cfg.rel_tol)?;
    let mut r = Report::new("moments", vec!["name", "value", "target", "rel_err", "error_estimate"]);
    let mut worst: f64 = 0.0;
    for x in &m {
        let rel = (x.value - x.target).abs() / x.target.abs();
        worst = worst.max(rel);
        r.push(vec![x.name.into(), x.value.into(), x.target.into(), rel.into(), x.error.into()]);
    }
    r.summary.insert("max_rel_err".into(), json!(worst));
    Ok(r)
}

pub fn w1(cfg: &W1Config) -> Result<Report> {
    let sols = par::map(&cfg.ps, |&p| solve_w1_row(p, cfg.s_max));
    let mut r = Report::new("w1", vec!["p", "integral_laplacian", "closed_form", "rel_err", "far_field_constant"]);
    for s in sols {
        r.push(s?);
    }
    r.plots.push(Series::new("p", "integral_laplacian"));
    Ok(r)
}

fn solve_w1_row(p: f64, s_max: f64) -> Result<Vec<Cell>> {
    let s = radial::solve_w1(p, s_max)?;
    let closed = radial::integral_laplacian_w1_closed(p);
    let rel = if closed == 0.0 { s.integral_laplacian.abs() } else { (s.integral_laplacian - closed).abs() / closed.abs() };
    Ok(vec![p.into(), s.integral_laplacian.into(), closed.into(), rel.into(), s.far_field_constant.into()])
}

pub fn energy_expansion(cfg: &ExpansionConfig) -> Result<Report> {
    let p = cfg.p;
    let products = par::map(&cfg.gammas, |&g| radial::bubble_energy_with(g, p, cfg.h0, cfg.radius.into()));
    let products = products.into_iter().collect::<Result<Vec<_>>>()?;
    let samples: Vec<(f64, f64)> = products.iter().map(|e| (e.gamma, e.product)).collect();
    let fit = fit_expansion(&samples, p)?;
    let c2_target = 16.0 * PI * (p - 1.0) / (p * p);
    let g_min = cfg.gammas[0];
    let mut r = Report::new(
        "energy-expansion",
        vec!["gamma", "p", "product", "product_minus_4pi", "fit", "c0", "c1", "c2", "c0_target", "c2_target"],
    );
    for e in &products {
        r.push(vec![
            e.gamma.into(),
            p.into(),
            e.product.into(),
            (e.product - 4.0 * PI).into(),
            fit.eval(e.gamma, p).into(),
            fit.c0.into(),
            fit.c1.into(),
            fit.c2.into(),
            (4.0 * PI).into(),
            c2_target.into(),
        ]);
    }
    r.summary.insert(
        "fit".into(),
        json!({
            "c0": fit.c0,
            "c1": fit.c1,
            "c2": fit.c2,
            "c0_rel_err": (fit.c0 / (4.0 * PI) - 1.0).abs(),
            "c2_rel_err": if c2_target == 0.0 { fit.c2.abs() } else { (fit.c2 / c2_target - 1.0).abs() },
            "c1_share": fit.c1.abs() / (fit.c2.abs() * g_min.powf(-p)),
            "condition": fit.condition,
            "residual": fit.residual,
        }),
    );
    r.plots.push(Series::new("gamma", "product_minus_4pi").log_y());
    Ok(r)
}

fn barycenters(cfg: &TestFnConfig) -> Result<Vec<Barycenter>> {
    let l = cfg.box_len;
    if let Some(points) = &cfg.points {
        let w = cfg.weights.clone().unwrap_or_else(|| vec![1.0 / points.len() as f64; points.len()]);
        return Ok(vec![Barycenter::new(points.clone(), w, l)?]);
    }
    // Widest support over the sweep sets the minimum atom separation.
    let g_min = cfg.gammas.iter().copied().fold(f64::INFINITY, f64::min);
    let probe = TestFunction::new(Barycenter::single([0.0, 0.0], l)?, g_min, cfg.p, cfg.core.into())?;
    let min_sep = (2.02 * probe.support_radius(0)).max(0.25 * l);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let mut attempts = 0;
        let points = loop {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::InvalidInput(format!("cannot place {} atoms {min_sep} apart", cfg.k)));
            }
            let pts: Vec<[f64; 2]> = (0..cfg.k).map(|_| [rng.gen_range(0.0..l), rng.gen_range(0.0..l)]).collect();
            let ok = (0..pts.len())
                .all(|i| (0..i).all(|j| torus_distance(pts[i], pts[j], l) >= min_sep));
            if ok {
                break pts;
            }
        };
        let raw: Vec<f64> = (0..cfg.k).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        // Exact unit sum despite rounding.
        let rest: f64 = w[1..].iter().sum();
        w[0] = 1.0 - rest;
        out.push(Barycenter::new(points, w, l)?);
    }
    Ok(out)
}

pub fn testfn(cfg: &TestFnConfig) -> Result<Report> {
    let sigmas = barycenters(cfg)?;
    let grid = TorusField::constant(cfg.n, cfg.box_len, 0.0, cfg.h0)?;
    let jobs: Vec<(usize, f64)> =
        (0..sigmas.len()).flat_map(|s| cfg.gammas.iter().map(move |&g| (s, g))).collect();
    let p = cfg.p;
    let rows = par::map(&jobs, |&(s, g)| -> Result<Vec<Cell>> {
        let sigma = &sigmas[s];
        let k = sigma.len() as f64;
        let tf = TestFunction::new(sigma.clone(), g, p, cfg.core.into())?;
        let phi = tf.sample(&grid)?;
        let e = phi_energies(&tf, &phi, cfg.beta)?;
        let c = peak_coeff(p);
        let lead = c * c * 4.0 * PI * k * g.powf(2.0 - p);
        let j_limit = (2.0 - p) / p * ((4.0 * PI * k / cfg.beta).powf(p / (2.0 - p)) - 1.0);
        let mut row: Vec<Cell> = vec![
            s.into(),
            g.into(),
            sigma.len().into(),
            e.dirichlet.into(),
            (e.dirichlet / lead).into(),
            e.l2h.into(),
            e.logmass.into(),
            e.j.into(),
            (e.j / g.powf(p)).into(),
            j_limit.into(),
            e.mt_deficit.into(),
        ];
        if cfg.kr {
            let d = tf.cell_density(&grid)?;
            let kr = kr_distance(&d, sigma, KrOptions::default())?;
            row.push(kr.distance.into());
            row.push(kr.residual.into());
        }
        Ok(row)
    });
    let mut cols = vec![
        "sample", "gamma", "k", "dirichlet", "dirichlet_ratio", "l2h", "logmass", "j", "j_over_gamma_p", "j_limit",
        "mt_deficit",
    ];
    if cfg.kr {
        cols.extend(["kr_distance", "kr_residual"]);
    }
    let mut r = Report::new("testfn", cols);
    for row in rows {
        r.push(row?);
    }
    r.summary.insert(
        "barycenters".into(),
        json!(sigmas.iter().map(|s| json!({ "points": s.points, "weights": s.weights })).collect::<Vec<_>>()),
    );
    r.plots.push(Series::new("gamma", "j_over_gamma_p"));
    if cfg.kr {
        r.plots.push(Series::new("gamma", "kr_distance").log_y());
    }
    Ok(r)
}

/// Grid with its weight `h`, and the initial guess on it.
pub fn setup_field(g: &FieldSetup) -> Result<TorusField> {
    let l = g.box_len;
    let c = 0.5 * l;
    let mut f = TorusField::from_fn(g.n, l, g.h0, |x, y| {
        let r2 = torus_distance([x, y], [c, c], l).powi(2);
        g.init_level + g.init_bump * (-r2 / (g.init_width * g.init_width)).exp()
    })?;
    let k = 2.0 * PI / l;
    f.h_values = (0..g.n * g.n)
        .map(|i| {
            let q = f.node(i);
            g.h0 * (1.0 + g.h_amplitude * (k * q[0]).cos()) * (1.0 + g.h_amplitude * (k * q[1]).cos())
        })
        .collect();
    if g.init_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
        for v in f.values.iter_mut() {
            *v += g.init_noise * rng.gen_range(-1.0..1.0);
        }
    }
    Ok(f)
}

const REPORT_COLUMNS: [&str; 11] = [
    "p", "beta", "lambda", "iterations", "residual_l2", "u_max", "u_min", "beta_check", "positivity", "j",
    "two_lambda_over_h_max",
];

fn report_row(rep: &solver::SolveReport, h_max: f64) -> Vec<Cell> {
    vec![
        rep.p.into(),
        rep.beta.into(),
        rep.lambda.into(),
        rep.iterations.into(),
        rep.residual_l2.into(),
        rep.u_max.into(),
        rep.u_min.into(),
        rep.beta_check.into(),
        usize::from(rep.positivity).into(),
        rep.j.into(),
        (2.0 * rep.lambda / h_max).into(),
    ]
}

pub fn solve(cfg: &SolveConfig) -> Result<Report> {
    let init = setup_field(&cfg.grid)?;
    let opts = SolverOptions {
        min_tol: cfg.min_tol,
        newton_tol: cfg.newton_tol,
        max_descent: cfg.max_descent,
        ..SolverOptions::default()
    };
    let mut r = Report::new("solve", vec!["stage"].into_iter().chain(REPORT_COLUMNS).collect());
    let mut history = Vec::new();
    let mut push = |r: &mut Report, stage: &str, s: &solver::Solution| {
        let mut row: Vec<Cell> = vec![stage.into()];
        row.extend(report_row(&s.report, s.u.h_max()));
        r.push(row);
        for (i, v) in s.report.history.iter().enumerate() {
            history.push(vec![stage.into(), i.into(), (*v).into()]);
        }
    };
    let sol = match cfg.method {
        Method::Min => {
            let m = solver::solve_min(cfg.p, cfg.beta, &init, &opts)?;
            push(&mut r, "min", &m);
            m
        }
        Method::Newton => {
            let s = solver::solve_newton(cfg.p, cfg.beta, &init, &opts)?;
            push(&mut r, "newton", &s);
            s
        }
        Method::MinNewton => {
            let m = solver::solve_min(cfg.p, cfg.beta, &init, &opts)?;
            push(&mut r, "min", &m);
            let s = solver::solve_newton(cfg.p, cfg.beta, &m.u, &opts)?;
            push(&mut r, "newton", &s);
            s
        }
    };
    r.extra.push(("history", vec!["stage", "step", "value"], history));
    if cfg.write_field {
        let rows = (0..sol.u.n * sol.u.n)
            .map(|k| {
                let q = sol.u.node(k);
                vec![(k % sol.u.n).into(), (k / sol.u.n).into(), q[0].into(), q[1].into(), sol.u.values[k].into(), sol.u.h_values[k].into()]
            })
            .collect();
        r.extra.push(("field", vec!["i", "j", "x", "y", "u", "h"], rows));
    }
    r.summary.insert("lambda".into(), json!(sol.report.lambda));
    r.plots.push(Series::new("step", "value"));
    Ok(r)
}

fn peak_columns() -> Vec<&'static str> {
    vec!["x", "y", "gamma", "mu", "mu_cells", "radius", "local_mass", "mass_ratio", "weight", "profile_deviation"]
}

fn peak_rows(t: &PeakTable, lead: &[Cell]) -> Vec<Vec<Cell>> {
    t.peaks
        .iter()
        .map(|q| {
            let mut row = lead.to_vec();
            row.extend([
                q.position[0].into(),
                q.position[1].into(),
                q.gamma.into(),
                q.mu.into(),
                q.mu_cells.into(),
                q.radius.into(),
                q.local_mass.into(),
                q.mass_ratio.into(),
                q.weight.into(),
                q.profile_deviation.into(),
            ]);
            row
        })
        .collect()
}

pub fn continue_branch(cfg: &ContinueConfig) -> Result<Report> {
    let init = setup_field(&cfg.grid)?;
    let opts = SolverOptions {
        newton_tol: cfg.newton_tol,
        u_ceiling: cfg.u_ceiling,
        mu_floor_cells: cfg.mu_floor_cells,
        ..SolverOptions::default()
    };
    if let Some(ps) = &cfg.sweep_p {
        let sols = solver::sweep_p(cfg.beta_start, ps, &init, &opts)?;
        let mut r = Report::new("continue", REPORT_COLUMNS.to_vec());
        for s in &sols {
            r.push(report_row(&s.report, s.u.h_max()));
        }
        r.plots.push(Series::new("p", "u_max"));
        return Ok(r);
    }
    let (rec, stop) = solver::continue_branch(cfg.p, cfg.beta_start, cfg.beta_end, cfg.steps, &init, &opts)?;
    let mut cols: Vec<&'static str> = vec!["beta_over_pi"];
    cols.extend(REPORT_COLUMNS);
    cols.extend(["peaks", "top_gamma", "top_mu_cells", "top_mass_ratio", "excess", "excess_leading", "kr_distance"]);
    let mut r = Report::new("continue", cols);
    let mut peaks = Vec::new();
    for (pt, u) in rec.points.iter().zip(&rec.states) {
        let mut row: Vec<Cell> = vec![(pt.report.beta / PI).into()];
        row.extend(report_row(&pt.report, u.h_max()));
        let top = pt.peaks.peaks.iter().max_by(|a, b| a.gamma.total_cmp(&b.gamma));
        row.push(pt.peaks.peaks.len().into());
        row.push(top.map_or(0.0, |q| q.gamma).into());
        row.push(top.map_or(0.0, |q| q.mu_cells).into());
        row.push(top.map_or(0.0, |q| q.mass_ratio).into());
        row.extend([pt.peaks.excess.into(), pt.peaks.excess_leading.into(), pt.peaks.kr_distance.into()]);
        r.push(row);
        peaks.extend(peak_rows(&pt.peaks, &[pt.report.beta.into()]));
    }
    let mut pc = vec!["beta"];
    pc.extend(peak_columns());
    r.extra.push(("peaks", pc, peaks));
    match stop {
        Some(e @ Error::BlowUpDetected { .. }) => {
            r.summary.insert("stopped".into(), json!({ "kind": e.kind(), "message": e.to_string() }));
        }
        Some(e) => {
            r.summary.insert("stopped".into(), json!({ "kind": e.kind(), "message": e.to_string() }));
            r.failure = Some(e);
        }
        None => {}
    }
    r.plots.push(Series::new("beta_over_pi", "u_max"));
    r.plots.push(Series::new("beta_over_pi", "top_mass_ratio"));
    Ok(r)
}

fn read_field(path: &str, n: usize, box_len: f64) -> std::result::Result<TorusField, String> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| format!("{path}: {e}"))?;
    let headers = rd.headers().map_err(|e| format!("{path}: {e}"))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| format!("{path}: missing column `{name}`"));
    let (ci, cj, cu, ch) = (col("i")?, col("j")?, col("u")?, col("h")?);
    let mut u = vec![f64::NAN; n * n];
    let mut h = vec![f64::NAN; n * n];
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| format!("{path}: {e}"))?;
        let num = |c: usize| -> std::result::Result<f64, String> {
            rec[c].parse::<f64>().map_err(|e| format!("{path}: row {}: {e}", line + 2))
        };
        let (i, j) = (num(ci)? as usize, num(cj)? as usize);
        if i >= n || j >= n {
            return Err(format!("{path}: row {}: index outside an {n}x{n} grid", line + 2));
        }
        u[j * n + i] = num(cu)?;
        h[j * n + i] = num(ch)?;
    }
    if u.iter().chain(&h).any(|x| x.is_nan()) {
        return Err(format!("{path}: does not cover the {n}x{n} grid"));
    }
    TorusField::new(n, box_len, u, h).map_err(|e| e.to_string())
}

pub fn diagnose(cfg: &DiagnoseConfig) -> std::result::Result<Report, crate::CliError> {
    let p = cfg.p;
    let (u, lambda, planted) = match &cfg.field {
        Some(path) => {
            let f = read_field(path, cfg.n, cfg.box_len).map_err(crate::CliError::ConfigParse)?;
            (f, cfg.lambda.expect("validated"), None)
        }
        None => {
            // Largest radius allowed by t(rbar) ≤ pγ^p/2, capped at a quarter box.
            let t_max = 0.5 * p * cfg.gamma.powf(p);
            let rbar = (cfg.mu * (t_max * (1.0 - 1e-12)).exp_m1().sqrt()).min(0.25 * cfg.box_len);
            let b = BubbleParams::new(cfg.gamma, p, cfg.mu, 1.0, rbar)?;
            let prof = solve_bubble(&b, rbar / cfg.mu)?;
            let l = cfg.box_len;
            let f = TorusField::from_fn(cfg.n, l, 1.0, |x, y| prof.value_at(torus_distance([x, y], cfg.center, l)))?;
            (f, b.lambda, Some(b))
        }
    };
    let t = solver::blow_up_diagnostics(&u, lambda, p)?;
    let mut cols = vec!["index"];
    cols.extend(peak_columns());
    let mut r = Report::new("diagnose", cols);
    for (i, row) in peak_rows(&t, &[]).into_iter().enumerate() {
        let mut full: Vec<Cell> = vec![i.into()];
        full.extend(row);
        r.push(full);
    }
    let mut s = json!({
        "beta": t.beta,
        "excess": t.excess,
        "excess_leading": t.excess_leading,
        "kr_distance": t.kr_distance,
        "kr_residual": t.kr_residual,
        "lambda": lambda,
    });
    if let (Some(b), Some(q)) = (planted, t.peaks.first()) {
        s["planted"] = json!({ "gamma": b.gamma, "mu": b.mu, "mu_rel_err": (q.mu / b.mu - 1.0).abs() });
    }
    if let Value::Object(m) = s {
        r.summary = m;
    }
    Ok(r)
}
