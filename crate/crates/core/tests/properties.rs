use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use raysense_core::beam::{self, BeamState, BoundaryChart};
use raysense_core::caustics::{self, ZSample};
use raysense_core::flow;
use raysense_core::linearize;
use raysense_core::xray::{self, TestFunction};
use raysense_core::{Domain, PhasePoint, Tolerance, VelocityField};

fn lens() -> VelocityField {
    VelocityField::gaussian_lens(Domain::unit_ball(3), 0.3, 0.5).unwrap()
}

fn tight() -> Tolerance {
    Tolerance { atol: 1e-12, rtol: 1e-11, ..Tolerance::default() }
}

fn unit() -> impl Strategy<Value = DVector<f64>> {
    prop::array::uniform3(-1.0..1.0f64)
        .prop_filter("not too short", |v| v.iter().map(|a| a * a).sum::<f64>() > 0.04)
        .prop_map(|v| DVector::from_vec(v.to_vec()).normalize())
}

fn point_in(r: f64) -> impl Strategy<Value = DVector<f64>> {
    (unit(), 0.0..r).prop_map(|(u, s)| u * s)
}

/// Boundary point together with a direction making angle at least ~18 degrees with the tangent plane.
fn entering() -> impl Strategy<Value = PhasePoint> {
    (unit(), unit()).prop_filter_map("not entering", |(nu, v)| {
        (v.dot(&nu) < -0.3).then(|| PhasePoint::new(nu, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn field_is_one_in_the_collar(u in unit(), s in 0.8..1.0f64) {
        let f = lens();
        let x = u * s;
        let j = f.eval(&x);
        prop_assert_eq!(j.v, 1.0);
        prop_assert_eq!(j.grad.amax(), 0.0);
    }

    #[test]
    fn b_is_minus_grad_log_c(x in point_in(0.95)) {
        let f = lens();
        let j = f.eval(&x);
        let res = f.eval_b(&x) * j.v + &j.grad;
        prop_assert!(res.amax() < 1e-12);
    }

    #[test]
    fn flow_forms_agree_on_cosphere(x in point_in(0.9), v in unit()) {
        let f = lens();
        let p = PhasePoint::new(x, v).normalized(&f);
        let a = flow::hamiltonian_rhs(&f, &p);
        let b = flow::reduced_rhs(&f, &p);
        prop_assert!(a.distance(&b) < 1e-12);
    }

    #[test]
    fn flow_semigroup(x in point_in(0.7), v in unit(), s in 0.0..1.0f64, t in 0.0..1.0f64) {
        let f = lens();
        let tol = Tolerance::default();
        let p = PhasePoint::new(x, v).normalized(&f);
        let whole = flow::integrate(&f, &p, s + t, &tol).unwrap().end();
        let mid = flow::integrate(&f, &p, t, &tol).unwrap().end();
        let split = flow::integrate(&f, &mid, s, &tol).unwrap().end();
        prop_assert!(whole.distance(&split) < 1e-7);
    }

    #[test]
    fn constant_field_chords(p in entering()) {
        let f = VelocityField::constant(Domain::unit_ball(3));
        let rec = flow::scattering_relation(&f, &p, &Tolerance::default(), 10.0).unwrap();
        let l = -2.0 * p.x.dot(&p.xi);
        prop_assert!((rec.l - l).abs() < 1e-8);
        prop_assert!((&rec.exit.x - (&p.x + &p.xi * l)).amax() < 1e-8);
        prop_assert!((&rec.exit.xi - &p.xi).amax() < 1e-8);
    }

    #[test]
    fn weight_is_unimodular(p in entering(), t in 0.2..3.0f64) {
        let f = lens();
        let p = p.normalized(&f);
        let u = linearize::integrate_weight(&f, &p, t, &tight()).unwrap().upsilon_end();
        prop_assert!((u.determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fundamental_pair_inverts(p in entering(), t in 0.2..3.0f64) {
        let f = lens();
        let pair = linearize::fundamental_pair(&f, &p.normalized(&f), t, &tight()).unwrap();
        prop_assert!(pair.product_defect() < 1e-7);
    }

    #[test]
    fn transform_is_linear(p in entering(), a in -3.0..3.0f64) {
        let f = lens();
        let tol = tight();
        let p = p.normalized(&f);
        let g1 = TestFunction::bump(&[0.2, 0.0, 0.1], 0.35, &[1.0, 0.0, -0.5, 0.2, 0.3, 0.0]);
        let g2 = TestFunction::bump(&[-0.1, 0.3, 0.0], 0.3, &[0.0, 0.7, 0.1, -0.4, 0.0, 0.9]);
        let (TestFunction::Bumps { bumps: b1 }, TestFunction::Bumps { bumps: b2 }) = (&g1, &g2) else { unreachable!() };
        let mut scaled = b2[0].clone();
        scaled.value.iter_mut().for_each(|v| *v *= a);
        let sum = TestFunction::Bumps { bumps: vec![b1[0].clone(), scaled] };
        let lhs = xray::transform(&f, &sum, &p, &tol).unwrap();
        let rhs = xray::transform(&f, &g1, &p, &tol).unwrap() + xray::transform(&f, &g2, &p, &tol).unwrap() * a;
        prop_assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn dphi_at_zero_is_scaled_identity(x in point_in(0.9)) {
        let f = lens();
        let j = caustics::dphi(&f, &x, &DVector::zeros(3), &caustics::tight_tolerance()).unwrap();
        prop_assert!((j.dphi - DMatrix::identity(3, 3) * f.c(&x)).amax() < 1e-8);
        prop_assert!((j.det - f.c(&x).powi(3)).abs() < 1e-8);
    }

    #[test]
    fn beam_imaginary_part_stays_positive(p in entering()) {
        let f = lens();
        let p = p.normalized(&f);
        let s0 = BeamState::initial(p.x.clone(), p.xi.clone(), 0.0);
        let path = beam::propagate_beam(&f, &s0, 0.0, 4.2, &tight()).unwrap();
        prop_assert!(path.im_floor > 0.0);
        prop_assert!(path.symmetry_drift < 1e-10);
    }

    #[test]
    fn reflection_is_an_involution(p in entering()) {
        let f = lens();
        let p = p.normalized(&f);
        let bb = beam::incident_beam(&f, &p, 0.2, 0.1, &tight()).unwrap();
        let chart: &BoundaryChart = &bb.chart;
        let once = beam::reflect_state(&f, &bb.hit, chart).unwrap();
        let twice = beam::reflect_state(&f, &once, chart).unwrap();
        let j0 = beam::jet_of_state(&f, &bb.hit, chart).unwrap();
        let j2 = beam::jet_of_state(&f, &twice, chart).unwrap();
        prop_assert!((&twice.xi - &bb.hit.xi).amax() < 1e-8);
        prop_assert!((&j2.mhat - &j0.mhat).map(|z| z.norm()).max() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn coverage_gap_never_grows(dirs in prop::collection::vec(unit(), 1..12), extra in unit()) {
        let grid = raysense_core::quad::spiral_directions(3, 200).unwrap();
        let sample = |theta: &DVector<f64>| ZSample { theta: theta.clone(), roots: vec![], folds: vec![], admissible: true };
        let mut z: Vec<ZSample> = dirs.iter().map(sample).collect();
        let before = caustics::coverage_gap(&grid, &z);
        z.push(sample(&extra));
        prop_assert!(caustics::coverage_gap(&grid, &z) <= before);
    }

    #[test]
    fn loglog_fit_recovers_exponents(p in -3.0..3.0f64, k in 0.1..10.0f64) {
        let xs = raysense_core::stats::geomspace(1e-2, 1.0, 6);
        let ys: Vec<f64> = xs.iter().map(|x| k * x.powf(p)).collect();
        let fit = raysense_core::stats::loglog_fit(&xs, &ys);
        prop_assert!((fit.slope - p).abs() < 1e-10);
    }
}
