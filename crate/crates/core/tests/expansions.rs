use nalgebra::DVector;
use nsgoh_core::asymptotic::product::lc3_window_coefficients;
use nsgoh_core::asymptotic::*;
use nsgoh_core::geometry::PiecewiseField;
use nsgoh_core::poly::{area, build_goh_family, tilde_p};
use nsgoh_core::poly::rational::rat_to_f64;
use nsgoh_core::system::*;
use nsgoh_core::variation::*;
use nsgoh_expr::parse_expr;

fn sm(n: usize, s: &[&str]) -> PiecewiseField {
    let nm: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
    PiecewiseField::smooth(n, s.iter().map(|e| parse_expr(e, &nm).unwrap()).collect()).unwrap()
}

fn scalar_process(n: usize, x0: Vec<f64>, t: f64) -> Process {
    assert_eq!(x0.len(), n);
    Process { x0: DVector::from_vec(x0), u: Control::constant(&[0.0], t) }
}

#[test]
fn planar_step2_direction_is_minus_d2() {
    let sys = ControlAffineSystem::new(sm(2, &["0", "x1"]), vec![sm(2, &["1", "0"])], ControlBox::symmetric(1, 1.0)).unwrap();
    let gen = VariationGenerator::new(VariationKind::Lc2 { i: 1 }, 1.0, 0.5, 1).unwrap();
    let rep = verify_lc2_expansion(&sys, &scalar_process(2, vec![0.0, 0.0], 2.0), &gen, &ExpansionConfig::default()).unwrap();
    assert_eq!(rep.predicted_direction, vec![0.0, -1.0]);
    assert!(rep.line_angles_deg.iter().all(|a| *a < 3.0));
    assert!(rep.sign_matches);
    // hand value: alpha * int t dP/dt, with the lifted direction -d2
    assert!((rep.fitted_constant - rep.predicted_constant).abs() < 1e-6 * rep.predicted_constant.abs());
}

#[test]
fn constant_drift_gives_no_step2_term() {
    let sys = ControlAffineSystem::new(sm(2, &["1", "2"]), vec![sm(2, &["1", "0"])], ControlBox::symmetric(1, 1.0)).unwrap();
    let gen = VariationGenerator::new(VariationKind::Lc2 { i: 1 }, 1.0, 0.5, 1).unwrap();
    let rep = verify_lc2_expansion(&sys, &scalar_process(2, vec![0.0, 0.0], 2.0), &gen, &ExpansionConfig::default()).unwrap();
    assert!(DVector::from_vec(rep.fitted_leading).norm() <= 1e-6 + 10.0 * 1e-12);
}

#[test]
fn smooth_step3_branch_direction() {
    let sys = ControlAffineSystem::new(sm(3, &["0", "x1^2", "1"]), vec![sm(3, &["1", "0", "0"])], ControlBox::symmetric(1, 1.0)).unwrap();
    let gen = VariationGenerator::new(VariationKind::Lc3, 1.0, 0.5, 1).unwrap();
    let rep = verify_lc3_expansion(&sys, &scalar_process(3, vec![0.0, 0.0, -2.0], 2.0), &gen, &ExpansionConfig::default()).unwrap();
    assert_eq!(rep.predicted_direction, vec![0.0, -2.0, 0.0]);
    assert!(rep.line_angles_deg.iter().all(|a| *a < 3.0));
    let p = tilde_p();
    let sq = rat_to_f64(&p.inner(&p));
    assert!((rep.fitted_constant + 0.5 * 0.25 * sq).abs() < 1e-6 * sq);
}

#[test]
fn linear_drift_gives_no_step3_term() {
    let sys = ControlAffineSystem::new(sm(3, &["x2", "x3", "1"]), vec![sm(3, &["1", "0", "0"])], ControlBox::symmetric(1, 1.0)).unwrap();
    let gen = VariationGenerator::new(VariationKind::Lc3, 1.0, 0.5, 1).unwrap();
    let rep = verify_lc3_expansion(&sys, &scalar_process(3, vec![0.0, 0.0, 0.0], 2.0), &gen, &ExpansionConfig::default()).unwrap();
    assert!(DVector::from_vec(rep.fitted_leading).norm() <= 1e-6 + 10.0 * 1e-12);
}

#[test]
fn step3_window_has_only_the_square_coefficient() {
    let gen = VariationGenerator::new(VariationKind::Lc3, 1.0, 0.5, 1).unwrap();
    let base = Control::constant(&[0.0], 2.0);
    for eps in [1e-3, 1e-4] {
        let c = lc3_window_coefficients(&base, &gen, eps).unwrap();
        assert!(c.a01.abs() < 1e-14 && c.a001.abs() < 1e-14);
        assert!((c.a110 - c.predicted_a110).abs() < 1e-12 * (1.0 + c.predicted_a110.abs()));
        assert!(c.a110 > 0.0);
    }
}

#[test]
fn goh_identities_with_a_moving_base() {
    let gen = VariationGenerator::new(VariationKind::Goh { j: 1, i: 2 }, 1.0, 0.5, 2).unwrap();
    let nm = vec!["t".to_string()];
    let ramp = |s: &str| Channel::expr(parse_expr(s, &nm).unwrap(), 0.0, 2.0);
    let piece = ControlPiece { start: 0.0, end: 2.0, channels: vec![ramp("0.1 + 0.3*t"), ramp("-0.2 + 0.1*t")] };
    let base = Control::new(2, vec![piece]).unwrap();
    let eps: Vec<f64> = (0..6).map(|k| 10f64.powf(-2.0 - 0.5 * k as f64)).collect();
    let rep = coefficient_identities(&base, &gen, &eps).unwrap();
    for r in &rep.rows {
        assert!(r.quadrature_gap < 1e-9, "{r:?}");
        assert!(r.a0.abs() < 1e-12 && r.ah < 1e-12 && r.a0k < 1e-12);
    }
    assert!(rep.remainder_fit.meets(1.3), "{:?}", rep.remainder_fit);
    let fam = build_goh_family(2, 1, 2, 12).unwrap();
    let ar = rat_to_f64(&area(fam.poly(1), fam.poly(2)));
    assert!((rep.rows[0].predicted[0] - 0.25 * eps[0] * ar).abs() < 1e-15);
}
