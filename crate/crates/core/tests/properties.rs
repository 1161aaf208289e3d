use fiolab::config::Config;
use fiolab::expr::VarSpace;
use fiolab::grid::GridSpec;
use fiolab::operators::{discretize_fio, BuildConfig};
use fiolab::pdo_check::{cv_bound_check, cv_seminorm, predicted_symbol, Which};
use fiolab::phases::GeneratingFunction;
use fiolab::symbols::SymbolField;
use fiolab::weights::WeightSpec;
use num_complex::Complex64;
use proptest::prelude::*;

fn amp(src: &str) -> SymbolField {
    SymbolField::parse(src, VarSpace::x_theta(1), WeightSpec::constant(1.0, 2), 0.0).unwrap()
}

fn vector(seed: &[(f64, f64)]) -> Vec<Complex64> {
    seed.iter().map(|&(re, im)| Complex64::new(re, im)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn adjoint_identity_holds(
        b in -1.0f64..1.0,
        c in 0.1f64..2.0,
        kernel in any::<bool>(),
        u in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 32),
        v in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 32),
    ) {
        let s = GeneratingFunction::parse(&format!("x*theta + {b}*theta^2"), 1).unwrap();
        let a = amp(&format!("exp(-{c}*theta^2 - x^2/16)"));
        let g = GridSpec::new(1, 4.0, 32);
        let cfg = if kernel { BuildConfig::kernel(0.1) } else { BuildConfig::spectral() };
        let f = discretize_fio(&s, &a, &g, &g, &g.dual(), &cfg).unwrap();
        let (u, v) = (vector(&u), vector(&v));
        let lhs = f.row_inner(&f.apply(&u).unwrap(), &v);
        let rhs = f.col_inner(&u, &f.adjoint().apply(&v).unwrap());
        prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + lhs.norm()));
    }

    #[test]
    fn singular_values_are_sorted_and_sum_to_frobenius(b in -1.0f64..1.0, c in 0.0f64..1.0) {
        let s = GeneratingFunction::parse(&format!("x*theta + {b}*x^2"), 1).unwrap();
        let a = amp(&format!("bracket(x, theta)^-{c}"));
        let g = GridSpec::new(1, 4.0, 48);
        let f = discretize_fio(&s, &a, &g, &g, &g.dual(), &BuildConfig::spectral()).unwrap();
        let sv = f.singular_values().unwrap();
        prop_assert!(sv.iter().all(|&x| x >= 0.0));
        prop_assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        let sum: f64 = sv.iter().map(|x| x * x).sum();
        let fro = f.frobenius_norm().powi(2);
        prop_assert!((sum - fro).abs() <= 1e-8 * fro);
    }

    #[test]
    fn rescaling_scales_norm_and_keeps_cv_ratio(c in 0.2f64..5.0) {
        let s = GeneratingFunction::parse("x*theta", 1).unwrap();
        let g = GridSpec::new(1, 6.0, 48);
        let a = amp("exp(-theta^2)");
        let ca = amp(&format!("{c}*exp(-theta^2)"));
        let f = discretize_fio(&s, &a, &g, &g, &g.dual(), &BuildConfig::spectral()).unwrap();
        let fc = discretize_fio(&s, &ca, &g, &g, &g.dual(), &BuildConfig::spectral()).unwrap();

        let p = [0.3, -0.7];
        let (_, sigma) = predicted_symbol(&s, &a, &p[..1], &p[1..], Which::FfStar, 1e-8).unwrap();
        let (_, sigma_c) = predicted_symbol(&s, &ca, &p[..1], &p[1..], Which::FfStar, 1e-8).unwrap();
        prop_assert!((sigma_c - c * c * sigma).abs() <= 1e-10 * sigma_c.max(1.0));

        let sg = GridSpec::new(2, 3.0, 16);
        let q = cv_seminorm(&amp("exp(-2*theta^2)"), 2, &sg).unwrap();
        let qc = cv_seminorm(&amp(&format!("{}*exp(-2*theta^2)", c * c)), 2, &sg).unwrap();
        let r = cv_bound_check(&f, &q, 1.0, 1e-12).unwrap();
        let rc = cv_bound_check(&fc, &qc, 1.0, 1e-12).unwrap();
        prop_assert!((rc.norm - c * r.norm).abs() <= 1e-10 * rc.norm);
        prop_assert!((rc.ratio - r.ratio).abs() <= 1e-10);
    }

    #[test]
    fn ffstar_and_fstarf_predictions_share_values(
        k in 0.5f64..3.0,
        q in -1.0f64..1.0,
        x in -4.0f64..4.0,
        t in -4.0f64..4.0,
    ) {
        let s = GeneratingFunction::parse(&format!("{k}*x*theta + {q}*theta^2"), 1).unwrap();
        let a = amp("exp(-x^2/8 - theta^2/8)");
        let (b1, v1) = predicted_symbol(&s, &a, &[x], &[t], Which::FfStar, 1e-8).unwrap();
        let (b2, v2) = predicted_symbol(&s, &a, &[x], &[t], Which::FStarF, 1e-8).unwrap();
        prop_assert!((v1 - v2).abs() <= 1e-15 * v1.max(1e-300));
        prop_assert!((b1[1] - k * t).abs() <= 1e-12 * (1.0 + b1[1].abs()));
        prop_assert!((b2[0] - (k * x + 2.0 * q * t)).abs() <= 1e-12 * (1.0 + b2[0].abs()));
    }

    #[test]
    fn config_canonical_form_round_trips(
        radius in 1u32..64,
        points in 8u32..512,
        extra in "[a-z]{1,8}",
    ) {
        let src = format!("[scenario]\nname = t\n\n[grid.main]\n radius={radius}\n\n# note\npoints =  {points}\n");
        let mut c = Config::parse(&src).unwrap();
        c.apply_override(&format!("grid.main.k_{extra}=1")).unwrap();
        let again = Config::parse(&c.canonical()).unwrap();
        prop_assert_eq!(again.canonical(), c.canonical());
        let g = again.family("grid")["main"];
        prop_assert_eq!(g.parse_req::<u32>("radius").unwrap(), radius);
        prop_assert_eq!(g.parse_req::<u32>("points").unwrap(), points);
    }
}
