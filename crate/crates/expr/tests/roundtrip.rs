use nsgoh_expr::{parse_expr, Expr, Func};
use proptest::prelude::*;

fn names() -> Vec<String> {
    vec!["x1".into(), "x2".into()]
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-5i32..6).prop_map(|k| Expr::Num(k as f64 * 0.5)),
        (0usize..2).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Expr::neg),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::div(a, b)),
            (inner.clone(), 0u8..4).prop_map(|(a, k)| Expr::pow(a, Expr::Num(k as f64))),
            inner.clone().prop_map(|a| Expr::call(Func::Abs, a)),
            inner.prop_map(|a| Expr::call(Func::Sin, a)),
        ]
    })
}

proptest! {
    #[test]
    fn print_parse_is_a_fixed_point(e in arb_expr()) {
        let n = names();
        let printed = e.display(&n).to_string();
        let parsed = parse_expr(&printed, &n).unwrap();
        prop_assert_eq!(parsed.display(&n).to_string(), printed.clone());
        let x = [0.3, -1.7];
        let (a, b) = (e.eval(&x), parsed.eval(&x));
        prop_assert!(a == b || (a.is_nan() && b.is_nan()), "{} vs {}", a, b);
    }

    #[test]
    fn derivative_of_polynomials_matches_differences(
        c in proptest::collection::vec(-3i32..4, 1..6), x in -1.5f64..1.5
    ) {
        let coeffs: Vec<f64> = c.iter().map(|k| *k as f64).collect();
        let e = Expr::from_poly(&coeffs, 0);
        let d = e.derivative(0).eval(&[x]);
        let exact: f64 = coeffs.iter().enumerate().skip(1)
            .map(|(k, v)| k as f64 * v * x.powi(k as i32 - 1)).sum();
        prop_assert!((d - exact).abs() < 1e-9 * (1.0 + exact.abs()));
    }
}
