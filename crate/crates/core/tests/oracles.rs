//! Reference values checked against independent computations: closed
//! forms, brute-force quadrature and naive DFTs written out here.

use std::f64::consts::PI;

use fiolab::expr::VarSpace;
use fiolab::grid::GridSpec;
use fiolab::operators::{discretize_fio, ffstar_direct, kernel_eval, relative_l2, sample, BuildConfig};
use fiolab::oscillatory::{regularized_fio_apply, test_function_vars, CutoffSpec, QuadSpec};
use fiolab::pdo_check::{predicted_symbol, theta_inverse, Which};
use fiolab::phases::{special_phase, GeneratingFunction};
use fiolab::symbols::{derivative_symbol, product_symbol, reciprocal_symbol, seminorm_estimate, SymbolField};
use fiolab::weights::{grid_pairs, lambda_weight, verify_tempered, verify_tempered_capped, LambdaConvention, WeightSpec};
use num_complex::Complex64;

fn one_d(src: &str, weight: &str, rho: f64) -> SymbolField {
    SymbolField::parse(src, VarSpace::new(&["x"]), WeightSpec::from_tag(weight, 1).unwrap(), rho).unwrap()
}

fn amp(src: &str) -> SymbolField {
    SymbolField::parse(src, VarSpace::x_theta(1), WeightSpec::constant(1.0, 2), 0.0).unwrap()
}

fn gen(src: &str) -> GeneratingFunction {
    GeneratingFunction::parse(src, 1).unwrap()
}

/// Maximizes a unimodal function on `[lo, hi]`.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let (a, b) = (hi - r * (hi - lo), lo + r * (hi - lo));
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    f(0.5 * (lo + hi))
}

#[test]
fn one_plus_norm_lambda_at_three() {
    let w = lambda_weight(1.0, 1, LambdaConvention::OnePlusNorm);
    assert_eq!(w.eval(&[3.0]), 4.0);
}

#[test]
fn inverse_lambda_constant_is_grid_maximum() {
    let w = lambda_weight(-1.0, 1, LambdaConvention::OnePlusNorm);
    let pairs = grid_pairs(1, 10.0, 81);
    let brute = pairs
        .iter()
        .map(|(x, x1)| {
            let (a, b) = (x[0], x1[0]);
            (1.0 + b.abs()) / (1.0 + a.abs()) / (1.0 + (b - a).abs())
        })
        .fold(0.0f64, f64::max);
    let r = verify_tempered(&w, &pairs, 1.0).unwrap();
    assert!(r.pass);
    assert!(r.c0_estimate <= 1.0 + 1e-12);
    assert!((r.c0_estimate - brute).abs() <= 1e-15);
}

#[test]
fn exponential_weight_ratio_grows() {
    let w = WeightSpec::formula("exp(v)", 1).unwrap();
    let pairs = |r: f64| -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..=40)
            .map(|k| {
                let x = -r + 2.0 * r * k as f64 / 40.0;
                (vec![x], vec![x - 1.0])
            })
            .collect()
    };
    let small = verify_tempered_capped(&w, &pairs(2.0), 1.0, 1e6).unwrap();
    assert!((small.c0_estimate - 1f64.exp() / 2.0).abs() < 1e-12);
    let wide: Vec<_> = (0..=40).map(|k| (vec![k as f64], vec![0.0])).collect();
    let r = verify_tempered_capped(&w, &wide, 1.0, 1e6).unwrap();
    assert!(!r.pass);
    assert!(r.c0_estimate >= 40f64.exp() / 41.0 * (1.0 - 1e-12));
}

#[test]
fn gaussian_derivative_at_one() {
    let a = one_d("exp(-x^2)", "const:1", 0.0);
    let d = a.eval_derivative(&[1.0], &[1]).unwrap().value;
    assert!((d.re + 2.0 / 1f64.exp()).abs() < 1e-14);
    assert!((d.re - (-0.73576)).abs() < 1e-5);
}

#[test]
fn gaussian_first_seminorm() {
    let a = one_d("exp(-x^2)", "const:1", 0.0);
    let oracle = golden_max(|x| 2.0 * x * (-x * x).exp(), 0.0, 3.0);
    assert!((oracle - (2.0 / 1f64.exp()).sqrt()).abs() < 1e-12);
    let c = seminorm_estimate(&a, &[1], &GridSpec::new(1, 8.0, 4096)).unwrap();
    assert!(c <= oracle * (1.0 + 1e-12));
    assert!((c - oracle).abs() < 1e-5, "{c} vs {oracle}");
}

#[test]
fn derivative_of_lambda_squared_has_seminorm_two() {
    let a = one_d("bracket(x)^2", "lambda:p=2", 1.0);
    let d = derivative_symbol(&a, &[1]).unwrap();
    let mut last = 0.0;
    for r in [10.0, 100.0, 1000.0] {
        let c = seminorm_estimate(&d, &[0], &GridSpec::new(1, r, 257)).unwrap();
        let oracle = 2.0 * r / (1.0 + r * r).sqrt();
        assert!((c - oracle).abs() < 1e-12 * oracle, "{c} vs {oracle}");
        assert!(c > last && c < 2.0);
        last = c;
    }
    assert!(2.0 - last < 1e-5);
}

#[test]
fn lambda_product_and_reciprocal_seminorms() {
    let g = GridSpec::new(1, 20.0, 201);
    let l = one_d("bracket(x)", "lambda:p=1", 1.0);
    let ll = product_symbol(&l, &l).unwrap();
    assert!((seminorm_estimate(&ll, &[0], &g).unwrap() - 1.0).abs() < 1e-12);
    let l2 = one_d("bracket(x)^2", "lambda:p=2", 1.0);
    let inv = reciprocal_symbol(&l2, 1.0, 2.0, &g).unwrap();
    assert!((seminorm_estimate(&inv, &[0], &g).unwrap() - 1.0).abs() < 1e-12);
    for x in [-7.0, 0.0, 3.5] {
        let p = [x];
        assert!((l2.eval(&p) * inv.eval(&p) - 1.0).norm() < 1e-14);
    }
}

#[test]
fn omega_membership_arithmetic() {
    let phi = special_phase(&gen("x*theta + theta^2/2"));
    let p = [1.0, 1.05, 0.1];
    let g = phi.grad(&p);
    let d = g[1] * g[1] + g[2] * g[2];
    assert!((d - 0.0025 - 0.01).abs() < 1e-12);
    let grad_theta = 1.0 + 0.1 - 1.05;
    assert!((grad_theta * grad_theta - 0.0025f64).abs() < 1e-15);
}

#[test]
fn identity_kernel_closed_forms() {
    let (s, a) = (gen("x*theta"), amp("exp(-theta^2)"));
    let tg = GridSpec::new(1, 12.0, 2048);
    let k0 = kernel_eval(&s, &a, &[0.7], &[0.7], &tg, 0.0).unwrap();
    let k2 = kernel_eval(&s, &a, &[1.0], &[-1.0], &tg, 0.0).unwrap();
    let c = PI.sqrt() / (2.0 * PI);
    assert!((k0 - c).norm() < 1e-12);
    assert!((k0.re - 0.28209).abs() < 1e-5);
    assert!((k2 - c * (-1.0f64).exp()).norm() < 1e-12);
    assert!((k2.re - 0.10378).abs() < 1e-5);
}

#[test]
fn chirp_matches_naive_dft() {
    let g = GridSpec::new(1, 8.0, 128);
    let f = discretize_fio(&gen("x*theta + theta^2/2"), &amp("1"), &g, &g, &g.dual(), &BuildConfig::spectral()).unwrap();
    let u = sample(&g, |p| Complex64::new((-p[0] * p[0]).exp(), 0.0));
    let (xs, ts) = (g.axis(), g.dual().axis());
    let (h, dt) = (g.spacing(), g.dual().spacing());
    // û(θ) = Σ u(y) e^{-iyθ} h, then v(x) = Σ e^{ixθ + iθ²/2} û(θ) dθ / 2π.
    let hat: Vec<Complex64> = ts
        .iter()
        .map(|&t| xs.iter().zip(&u).map(|(&y, &uy)| uy * Complex64::from_polar(h, -y * t)).sum())
        .collect();
    let v: Vec<Complex64> = xs
        .iter()
        .map(|&x| {
            ts.iter()
                .zip(&hat)
                .map(|(&t, &ht)| ht * Complex64::from_polar(dt / (2.0 * PI), x * t + t * t / 2.0))
                .sum()
        })
        .collect();
    assert!(relative_l2(&f.apply(&u).unwrap(), &v) < 1e-6);
}

#[test]
fn ffstar_entries_match_double_integral() {
    let (s, a) = (gen("x*theta + theta^2/2"), amp("exp(-x^2/4 - theta^2/4)"));
    let xg = GridSpec::new(1, 4.0, 32);
    let tg = GridSpec::new(1, 10.0, 400);
    let op = ffstar_direct(&s, &a, &xg, &tg).unwrap();
    let xs = xg.axis();
    let w = xg.cell_volume();
    for (i, j) in [(0, 0), (3, 7), (10, 11), (16, 16), (5, 17), (28, 20), (12, 20), (20, 12), (8, 9), (25, 30)] {
        let (x, xt) = (xs[i], xs[j]);
        // Fine trapezoid over θ on a wider box.
        let m = 20_000;
        let dt = 24.0 / m as f64;
        let k: Complex64 = (0..=m)
            .map(|q| {
                let t = -12.0 + q as f64 * dt;
                let wt = if q == 0 || q == m { 0.5 } else { 1.0 };
                let ph = (x - xt) * t;
                Complex64::from_polar(wt * dt / (2.0 * PI), ph)
                    * (-(x * x) / 4.0 - t * t / 2.0 - xt * xt / 4.0).exp()
            })
            .sum();
        let got = op.matrix[(i, j)] / w;
        assert!((got - k).norm() <= 1e-5 * k.norm().max(1e-300), "({i},{j}): {got} vs {k}");
    }
}

#[test]
fn multiplier_norm_is_sup_of_amplitude() {
    let g = GridSpec::new(1, 8.0, 256);
    let f = discretize_fio(&gen("x*theta"), &amp("exp(-theta^2)"), &g, &g, &g.dual(), &BuildConfig::spectral()).unwrap();
    let dft_sup = g.dual().axis().iter().map(|t| (-t * t).exp()).fold(0.0f64, f64::max);
    assert!((f.operator_norm(1e-10).unwrap() - dft_sup).abs() < 1e-3);
    assert!((dft_sup - 1.0).abs() < 1e-3);
}

#[test]
fn dilation_predictions() {
    let (s, one) = (gen("2*x*theta"), amp("1"));
    for (x, t) in [(0.0, 0.0), (1.5, -2.0), (-3.0, 4.0)] {
        let (_, v) = predicted_symbol(&s, &one, &[x], &[t], Which::FfStar, 1e-8).unwrap();
        assert_eq!(v, 0.5);
    }
    let chirp = gen("2*x*theta + theta^2/2");
    for xi in [-3.0, 0.5, 7.0] {
        let (theta, _) = theta_inverse(&chirp, &[0.4], &[xi], &[0.0], 1e-8).unwrap();
        assert!((theta[0] - xi / 2.0).abs() < 1e-12);
    }
}

#[test]
fn regularized_value_matches_brute_force() {
    let a = SymbolField::parse("exp(-theta^2)", VarSpace::x_y_theta(1), WeightSpec::constant(1.0, 3), 0.0).unwrap();
    let f = SymbolField::parse("exp(-y^2/2)", test_function_vars(1), WeightSpec::constant(1.0, 1), 0.0).unwrap();
    let phi = special_phase(&gen("x*theta"));
    let x = 0.3;
    let h = 0.01;
    let m = 2400;
    let mut brute = Complex64::new(0.0, 0.0);
    for i in 0..=m {
        let y = -12.0 + i as f64 * h;
        let fy = (-y * y / 2.0).exp();
        for j in 0..=m {
            let t = -12.0 + j as f64 * h;
            brute += Complex64::from_polar(fy * (-t * t).exp(), (x - y) * t);
        }
    }
    brute *= h * h / (2.0 * PI);
    let closed = (-x * x / 6.0).exp() / 3f64.sqrt();
    assert!((brute - closed).norm() < 1e-10);
    let g = regularized_fio_apply(&a, &phi, &f, &[x], &[4.0, 8.0, 16.0], CutoffSpec::gaussian(), &QuadSpec::default()).unwrap();
    let b = regularized_fio_apply(&a, &phi, &f, &[x], &[4.0, 8.0, 16.0], CutoffSpec::bump(), &QuadSpec::default()).unwrap();
    assert!((g.value - brute).norm() < 1e-4, "{} vs {brute}", g.value);
    assert!((b.value - brute).norm() < 1e-4, "{} vs {brute}", b.value);
}
