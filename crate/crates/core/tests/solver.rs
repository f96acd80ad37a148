use std::f64::consts::PI;

use mtlab::radial::{solve_bubble, BubbleParams};
use mtlab::solver::*;
use mtlab::torus::{torus_distance, Operator, TorusField};
use proptest::prelude::*;

fn bumpy(n: usize, l: f64, amp: f64, c: [f64; 3]) -> TorusField {
    let k = 2.0 * PI / l;
    let mut f = TorusField::from_fn(n, l, 1.0, |x, y| {
        c[0] + c[1] * (k * x).cos() + c[2] * (k * (x - y)).sin()
    })
    .unwrap();
    f.h_values = (0..n * n)
        .map(|i| {
            let q = f.node(i);
            (1.0 + amp * (k * q[0]).cos()) * (1.0 + amp * (k * q[1]).cos())
        })
        .collect();
    f
}

/// Errors of the first-order model `J(u + εv) ≈ J(u) + ε⟨∇J, v⟩_h` at ε and ε/2.
fn taylor_errors(u: &TorusField, v: &[f64], p: f64, beta: f64, eps: f64) -> (f64, f64) {
    let j0 = j_functional(u, p, beta).unwrap();
    let g = j_gradient(u, p, beta).unwrap();
    let slope = Operator::new(u).inner(&g.values, v);
    let err = |e: f64| {
        let w: Vec<f64> = u.values.iter().zip(v).map(|(a, b)| a + e * b).collect();
        (j_functional(&u.with_values(w), p, beta).unwrap() - j0 - e * slope).abs()
    };
    (err(eps), err(0.5 * eps))
}

#[test]
fn gradient_taylor_remainder_is_second_order() {
    for &p in &[1.5, 1.8] {
        let u = bumpy(32, 2.0, 0.4, [1.0, 0.3, 0.2]);
        let v: Vec<f64> = (0..32 * 32).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
        let (e1, e2) = taylor_errors(&u, &v, p, 2.0 * PI, 1e-3);
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.1, "p={p}: order {order}");
    }
}

#[test]
fn minimizer_on_the_flat_torus_is_polished_to_machine_precision() {
    let (p, beta) = (1.5, 2.0 * PI);
    let init = TorusField::from_fn(32, 4.0, 1.0, |x, y| 0.6 + 0.2 * (x * PI / 2.0).sin() * (y * PI / 2.0).cos()).unwrap();
    let m = solve_min(p, beta, &init, &SolverOptions::default()).unwrap();
    assert!(m.report.residual_l2 < 1e-8);
    assert!(m.report.history.windows(2).all(|w| w[1] <= w[0]));
    let s = solve_newton(p, beta, &m.u, &SolverOptions::default()).unwrap();
    assert!(s.report.residual_l2 < 1e-12, "{}", s.report.residual_l2);
    assert!(s.report.positivity);
    assert!((s.report.beta_check - beta).abs() < 1e-10 * beta);
    assert!(2.0 * s.report.lambda <= s.u.h_max());
    let (_, r) = el_residual(&s.u, p, beta).unwrap();
    assert!((r - s.report.residual_l2).abs() < 1e-13);
}

#[test]
fn critical_exponent_keeps_the_norm_constraint() {
    let u = bumpy(16, 2.0, 0.3, [0.8, 0.2, 0.1]);
    let m = solve_min(2.0, 3.0 * PI, &u, &SolverOptions { max_descent: 3000, min_tol: 1e-7, ..SolverOptions::default() })
        .unwrap();
    let n2 = Operator::new(&m.u).norm2(&m.u.values);
    assert!((n2 - 3.0 * PI).abs() < 1e-9 * 3.0 * PI, "{n2}");
}

#[test]
fn planted_bubble_carries_its_quantized_mass() {
    let (g, p, l, n) = (5.0, 1.5, 4.0, 256);
    let b = BubbleParams::new(g, p, 0.05, 1.0, 1.2).unwrap();
    let prof = solve_bubble(&b, b.rbar / b.mu).unwrap();
    let c = [2.0, 2.0];
    let u = TorusField::from_fn(n, l, 1.0, |x, y| prof.value_at(torus_distance([x, y], c, l))).unwrap();
    let t = blow_up_diagnostics(&u, b.lambda, p).unwrap();
    assert_eq!(t.peaks.len(), 1);
    let pk = &t.peaks[0];
    assert!((pk.gamma - g).abs() < 1e-9);
    assert!((pk.mu / b.mu - 1.0).abs() < 1e-9);
    assert!(pk.mass_ratio > 0.9 && pk.mass_ratio < 1.1, "{}", pk.mass_ratio);
    assert!(pk.profile_deviation < 0.2, "{}", pk.profile_deviation);
}

#[test]
fn branch_rejects_degenerate_requests() {
    let u = TorusField::constant(16, 1.0, 0.5, 1.0).unwrap();
    assert!(continue_branch(1.5, 2.0, 2.0, 4, &u, &SolverOptions::default()).is_err());
    assert!(continue_branch(1.5, 2.0, 3.0, 0, &u, &SolverOptions::default()).is_err());
    assert!(solve_min(0.5, 2.0, &u, &SolverOptions::default()).is_err());
}

#[test]
fn short_branch_grows_monotonically() {
    let u = bumpy(32, 4.0, 0.5, [0.6, 0.2, 0.0]);
    let opts = SolverOptions { newton_tol: 1e-10, ..SolverOptions::default() };
    let (rec, stop) = continue_branch(1.5, 2.0 * PI, 3.0 * PI, 5, &u, &opts).unwrap();
    assert!(stop.is_none());
    assert_eq!(rec.points.len(), 6);
    assert!(rec.u_max().windows(2).all(|w| w[1] > w[0]));
    for q in &rec.points {
        assert!((q.report.beta_check - q.report.beta).abs() < 1e-8 * q.report.beta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gradient_matches_directional_derivative(
        c0 in 0.4f64..1.2,
        c1 in -0.3f64..0.3,
        c2 in -0.3f64..0.3,
        amp in 0.0f64..0.8,
        p in 1.2f64..1.95,
        beta in 1.0f64..12.0,
    ) {
        let u = bumpy(16, 2.0, amp, [c0, c1, c2]);
        let v: Vec<f64> = u.values.iter().enumerate().map(|(i, x)| x.sin() * ((i % 5) as f64 - 2.0)).collect();
        let (e1, e2) = taylor_errors(&u, &v, p, beta, 1e-3);
        prop_assume!(e1 > 1e-11);
        let order = (e1 / e2).log2();
        prop_assert!((order - 2.0).abs() < 0.25, "order {}", order);
    }

    #[test]
    fn lambda_scales_with_beta(c0 in 0.3f64..1.5, c1 in -0.2f64..0.2, p in 1.1f64..1.99, beta in 1.0f64..20.0) {
        // λ(u) ∝ β^{1 + 2(p-1)/(2-p)} for p < 2, whatever u is.
        let u = bumpy(16, 1.5, 0.3, [c0, c1, 0.1]);
        let a = lambda_from_u(&u, p, beta).unwrap();
        let b = lambda_from_u(&u, p, 2.0 * beta).unwrap();
        let expo = 1.0 + 2.0 * (p - 1.0) / (2.0 - p);
        prop_assert!(((b / a).log2() - expo).abs() < 1e-10 * expo);
    }
}
