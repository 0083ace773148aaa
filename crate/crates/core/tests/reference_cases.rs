//! Worked examples with closed-form answers, plus regression values recorded
//! from runs of the library (marked "recorded").

use nalgebra::{DMatrix, DVector};

use raysense_core::beam::{self, BeamState, BoundConstants, BoundaryChart, C64};
use raysense_core::caustics::{self, CensusConfig, ExpMap, FoldThresholds};
use raysense_core::field::check_admissibility;
use raysense_core::flow;
use raysense_core::linearize;
use raysense_core::stats;
use raysense_core::xray::{self, CutoffAlpha, TestFunction};
use raysense_core::{Domain, PhasePoint, Potential, Tolerance, VelocityField};

fn v(a: &[f64]) -> DVector<f64> {
    DVector::from_vec(a.to_vec())
}

fn pp(x: &[f64], xi: &[f64]) -> PhasePoint {
    PhasePoint::new(v(x), v(xi))
}

fn constant() -> VelocityField {
    VelocityField::constant(Domain::unit_ball(3))
}

fn lens() -> VelocityField {
    VelocityField::gaussian_lens(Domain::unit_ball(3), 0.3, 0.5).unwrap()
}

fn focusing() -> VelocityField {
    VelocityField::gaussian_lens(Domain::unit_ball(3), 0.5, 0.4).unwrap()
}

fn tight() -> Tolerance {
    Tolerance { atol: 1e-12, rtol: 1e-11, ..Tolerance::default() }
}

#[test]
fn field_values() {
    let j = constant().eval(&v(&[0.3, 0.0, 0.0]));
    assert_eq!(j.v, 1.0);
    assert_eq!(j.grad.amax(), 0.0);
    assert_eq!(j.hess.amax(), 0.0);
    assert!((lens().c(&v(&[0.0, 0.0, 0.0])) - 0.7).abs() < 1e-15);
    let x = v(&[0.1, 0.0, 0.0]);
    let j = lens().eval(&x);
    assert!((lens().eval_b(&x) + &j.grad / j.v).amax() < 1e-15);
    assert_eq!(constant().eval_b(&x).amax(), 0.0);
    assert_eq!(constant().eval_db(&x).amax(), 0.0);
}

#[test]
fn admissibility_reports() {
    assert!(check_admissibility(&constant(), 2.5, 200, 1).unwrap().nontrapping);
    assert!(!check_admissibility(&constant(), 1.5, 200, 1).unwrap().nontrapping);
    let r = check_admissibility(&lens(), 6.0, 200, 1).unwrap();
    assert!(r.epsilon_star > 0.0 && r.support_ok && r.c_bounds_ok);
    // recorded; the envelope band around r = 0.75 carries closed rays
    assert!((r.epsilon_star - 0.6168594694913485).abs() < 1e-6, "{r:?}");
    assert!((r.epsilon_one - 1.3437609552716077).abs() < 1e-6, "{r:?}");
    assert!(!r.nontrapping);
}

#[test]
fn hamiltonian_vector_field() {
    let d = flow::hamiltonian_rhs(&constant(), &pp(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]));
    assert_eq!(d.x, v(&[1.0, 0.0, 0.0]));
    assert_eq!(d.xi.amax(), 0.0);
    let d = flow::hamiltonian_rhs(&lens(), &pp(&[0.2, 0.1, 0.0], &[0.0, 0.0, 0.0]));
    assert_eq!(d.x.amax(), 0.0);
    assert_eq!(d.xi.amax(), 0.0);
    let f = lens();
    let x = v(&[0.1, 0.0, 0.0]);
    let xi = v(&[0.0, 1.0, 0.0]);
    let j = f.eval(&x);
    let d = flow::hamiltonian_rhs(&f, &PhasePoint::new(x, xi.clone()));
    assert!((&d.x - &xi * (j.v * j.v)).amax() < 1e-15);
    assert!((&d.xi + &j.grad * j.v).amax() < 1e-15);
    let d = flow::reduced_rhs(&constant(), &pp(&[0.0, 0.0, 0.0], &[0.0, 1.0, 0.0]));
    assert_eq!(d.x, v(&[0.0, 1.0, 0.0]));
}

#[test]
fn straight_ray_and_reversibility() {
    let tol = Tolerance::default();
    let tr = flow::integrate(&constant(), &pp(&[-1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]), 2.0, &tol).unwrap();
    for k in 0..=20 {
        let t = 0.1 * k as f64;
        let p = tr.state_at(t);
        assert!((&p.x - v(&[-1.0 + t, 0.0, 0.0])).amax() < 1e-12);
        assert!((&p.xi - v(&[1.0, 0.0, 0.0])).amax() < 1e-14);
    }
    let f = lens();
    let p0 = pp(&[0.3, -0.2, 0.1], &[0.2, 1.0, -0.4]).normalized(&f);
    let there = flow::integrate(&f, &p0, 1.7, &tol).unwrap().end();
    let back = flow::integrate(&f, &there, -1.7, &tol).unwrap().end();
    assert!(back.distance(&p0) < 1e-7);
}

#[test]
fn chord_examples() {
    let tol = Tolerance::default();
    let s = 0.5f64.sqrt();
    let rec = flow::scattering_relation(&constant(), &pp(&[-1.0, 0.0, 0.0], &[s, s, 0.0]), &tol, 10.0).unwrap();
    assert!((rec.l - 2f64.sqrt()).abs() < 1e-9);
    assert!((&rec.exit.x - v(&[0.0, 1.0, 0.0])).amax() < 1e-9);
    assert!((&rec.exit.xi - v(&[s, s, 0.0])).amax() < 1e-12);
}

#[test]
fn lens_fan_leaves_transversally() {
    let f = lens();
    let tol = Tolerance::default();
    let fan = xray::FanGrid::new(&f.domain, 10, 10).unwrap();
    assert!(fan.nodes.len() >= 100);
    for n in fan.nodes.iter().take(100) {
        let rec = flow::scattering_relation(&f, &n.p0, &tol, 10.0).unwrap();
        let nu = f.domain.normal(&rec.exit.x);
        assert!(rec.exit.xi.dot(&nu) > 0.0);
        assert!((rec.exit.x.norm() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn backtrace_examples() {
    let tol = Tolerance::default();
    let b = flow::backtrace(&constant(), &pp(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]), &tol, 10.0).unwrap();
    assert!((b.l_minus + 1.0).abs() < 1e-9);
    assert!((&b.tau.x - v(&[-1.0, 0.0, 0.0])).amax() < 1e-9);
    let p = pp(&[-1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
    let b = flow::backtrace(&constant(), &p, &tol, 10.0).unwrap();
    assert_eq!(b.l_minus, 0.0);
    assert_eq!(b.tau, p);
    // the forward flow from tau passes through p
    let f = lens();
    let p = pp(&[0.1, 0.3, -0.2], &[1.0, -0.3, 0.2]).normalized(&f);
    let b = flow::backtrace(&f, &p, &tol, 10.0).unwrap();
    let again = flow::integrate(&f, &b.tau, -b.l_minus, &tol).unwrap().end();
    assert!(again.distance(&p) < 1e-7);
}

#[test]
fn constant_field_system_matrix() {
    let a = linearize::system_matrix(&constant(), &pp(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]));
    let upper = a.view((0, 3), (3, 3)).into_owned();
    assert!((upper - DMatrix::from_diagonal(&v(&[-1.0, 1.0, 1.0]))).amax() < 1e-15);
    assert_eq!(a.view((3, 0), (3, 3)).amax(), 0.0);
    assert!((&a * &a).amax() < 1e-15);
}

#[test]
fn constant_field_weight_at_two() {
    let p = pp(&[-1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
    let u = linearize::integrate_weight(&constant(), &p, 2.0, &tight()).unwrap().upsilon_end();
    let mut expected = DMatrix::identity(6, 6);
    let block = DMatrix::from_diagonal(&v(&[-1.0, 1.0, 1.0])) * -2.0;
    expected.view_mut((0, 3), (3, 3)).copy_from(&block);
    assert!((u - expected).amax() < 1e-8);
    let u0 = linearize::integrate_weight(&constant(), &p, 0.0, &tight()).unwrap().upsilon_end();
    assert_eq!(u0, DMatrix::identity(6, 6));
    let w = linearize::weight_at(&constant(), &pp(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]), &tight(), 10.0).unwrap();
    let a = linearize::system_matrix(&constant(), &p);
    assert!((w - (DMatrix::identity(6, 6) - a)).amax() < 1e-8);
}

#[test]
fn weight_at_flowed_points_matches_the_path() {
    let f = lens();
    let tol = tight();
    let p0 = pp(&[-1.0, 0.0, 0.0], &[0.95, 0.3, 0.1]).normalized(&f);
    let path = linearize::integrate_weight(&f, &p0, 1.0, &tol).unwrap();
    for s in [0.3, 0.7] {
        let w = linearize::weight_at(&f, &path.state_at(s), &tol, 10.0).unwrap();
        assert!((w - path.upsilon_at(s)).amax() < 1e-6);
    }
}

#[test]
fn first_variation_matches_forward_difference() {
    let f = lens();
    let tol = tight();
    let p0 = pp(&[-1.0, 0.0, 0.0], &[0.95, 0.3, 0.1]).normalized(&f);
    let pot = Potential::Bump { center: vec![0.0, 0.1, 0.0], radius: 0.5, amplitude: 1.0 };
    let db = linearize::potential_delta_b(&pot);
    let lin = linearize::delta_flow(&f, &p0, 2.5, &db, &tol).unwrap();
    let eps = 1e-4;
    let base = flow::integrate(&f, &p0, 2.5, &tol).unwrap().end();
    let moved = flow::integrate(&f.perturbed(pot.clone(), eps).unwrap(), &p0, 2.5, &tol).unwrap().end();
    let fd = (DVector::from_vec(moved.to_state()) - DVector::from_vec(base.to_state())) / eps;
    assert!((&fd - &lin).norm() / lin.norm() < 1e-2);
    let zero = |_: &[f64], out: &mut [f64]| out.iter_mut().for_each(|o| *o = 0.0);
    assert_eq!(linearize::delta_flow(&f, &p0, 2.5, &zero, &tol).unwrap().amax(), 0.0);
}

#[test]
fn constant_background_remainder_is_quadratic() {
    let pot = Potential::Ramp { center: vec![0.0, 0.0, 0.0], radius: 0.8, v: vec![0.0, 1.0, 0.0] };
    let p0 = pp(&[-1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
    let eps = [10f64.powf(-2.5), 1e-2, 10f64.powf(-1.5), 1e-1];
    let rep = linearize::remainder_probe(&constant(), &p0, 1.5, &pot, &eps, &tight()).unwrap();
    assert!((1.9..=2.1).contains(&rep.fit.slope), "{:?}", rep.fit);
}

#[test]
fn cutoff_variants_of_the_transform() {
    let f = lens();
    let tol = tight();
    let g = TestFunction::bump(&[0.1, 0.0, 0.0], 0.4, &[1.0, 0.0, 0.0, 0.0, 0.5, 0.0]);
    let p0 = pp(&[-1.0, 0.0, 0.0], &[1.0, 0.1, 0.0]).normalized(&f);
    let full = xray::transform(&f, &g, &p0, &tol).unwrap();
    assert!(full.amax() > 1e-3);
    let one = xray::transform_alpha(&f, &g, &CutoffAlpha::One, &p0, &tol).unwrap();
    assert_eq!(full, one);
    let far = CutoffAlpha::Box { center: vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0], half_width: vec![f64::INFINITY, f64::INFINITY, 0.1, f64::INFINITY, f64::INFINITY, f64::INFINITY] };
    assert_eq!(xray::transform_alpha(&f, &g, &far, &p0, &tol).unwrap().amax(), 0.0);
    let zero = TestFunction::Bumps { bumps: vec![] };
    assert_eq!(xray::transform(&f, &zero, &p0, &tol).unwrap().amax(), 0.0);
}

#[test]
fn straight_beam_on_and_off_the_ray() {
    let c = constant();
    let s0 = BeamState::initial(v(&[-0.5, 0.0, 0.0]), v(&[1.0, 0.0, 0.0]), 0.0);
    let path = beam::propagate_beam(&c, &s0, 0.0, 1.0, &tight()).unwrap();
    let lambda: f64 = 100.0;
    let t = 0.6;
    let s = path.state_at(t).unwrap();
    let on = beam::eval_beam(&path, t, &s.x, lambda).unwrap();
    assert!((on - s.a * lambda.powf(0.75)).norm() < 1e-10 * on.norm());
    // log|g| is linear in r^2 with slope -lambda Im m / 2
    let im_m = 1.0 / (1.0 + t * t);
    let rs: Vec<f64> = (1..6).map(|k| 0.02 * k as f64).collect();
    let logs: Vec<f64> =
        rs.iter().map(|r| beam::eval_beam(&path, t, &(&s.x + v(&[0.0, *r, 0.0])), lambda).unwrap().norm().ln()).collect();
    let r2: Vec<f64> = rs.iter().map(|r| r * r).collect();
    let fit = stats::line_fit(&r2, &logs);
    assert!((fit.slope / (-lambda * im_m / 2.0) - 1.0).abs() < 0.05, "{fit:?}");
}

#[test]
fn lens_beam_floor_recorded() {
    let f = lens();
    let p0 = PhasePoint::new(v(&[-1.0, 0.0, 0.0]), v(&[0.995, 0.0998, 0.0]).normalize());
    let s0 = BeamState::initial(p0.x.clone(), p0.xi.clone(), 0.0);
    let path = beam::propagate_beam(&f, &s0, 0.0, 4.0, &tight()).unwrap();
    assert!(path.im_floor > 0.0);
    assert!((path.im_floor - 0.11072995264451585).abs() < 1e-6, "{}", path.im_floor);
    let same = beam::propagate_beam(&f, &s0, 0.0, 0.0, &tight()).unwrap();
    assert_eq!(same.state_at(0.0).unwrap().m, s0.m);
}

#[test]
fn normal_incidence_mirror() {
    let c = constant();
    let s = BeamState::initial(v(&[1.0, 0.0, 0.0]), v(&[1.0, 0.0, 0.0]), 0.0);
    let chart = BoundaryChart::new(&c.domain, &s.x).unwrap();
    let r = beam::reflect_state(&c, &s, &chart).unwrap();
    assert!((&r.xi - v(&[-1.0, 0.0, 0.0])).amax() < 1e-15);
    assert!((r.xi.norm() - s.xi.norm()).abs() < 1e-12);
    assert!((r.a + s.a).norm() < 1e-15);
    assert!(beam::min_eig_im(&r.m) > 0.0);
    let jet = beam::jet_of_state(&c, &s, &chart).unwrap();
    assert!(jet.gradient.rows(1, 2).iter().all(|g: &C64| g.norm() < 1e-12));
}

#[test]
fn overlap_oracle_standard_gaussian() {
    let id = DMatrix::identity(3, 3);
    let z = DMatrix::zeros(3, 3);
    let k = BoundConstants { big_c: 1.0, c3: 0.5 };
    for lambda in [1.0, 10.0, 100.0] {
        let b = beam::gaussian_bound_oracle(&id, &id, &z, &z, &DVector::zeros(3), &DVector::zeros(3), lambda, &k).unwrap();
        let exact = (std::f64::consts::PI / (2.0 * lambda)).powf(1.5);
        assert!((b.lhs - exact).abs() < 1e-12 * exact);
    }
}

#[test]
fn lagrangian_map_examples() {
    let tol = caustics::tight_tolerance();
    let x = v(&[0.1, -0.2, 0.3]);
    let xi = v(&[0.3, 0.1, -0.2]);
    assert!((caustics::phi(&constant(), &x, &xi, &tol).unwrap() - (&x + &xi)).amax() < 1e-12);
    assert!((caustics::phi(&lens(), &x, &DVector::zeros(3), &tol).unwrap() - &x).amax() < 1e-15);
    let j = caustics::dphi(&constant(), &x, &xi, &tol).unwrap();
    assert!((j.dphi - DMatrix::identity(3, 3)).amax() < 1e-12);
    // phi(x, t theta) is the time-t flow from the unit covector theta
    let f = lens();
    let theta = v(&[0.6, 0.8, 0.0]) / f.c(&x);
    for t in [0.5, 1.5] {
        let a = caustics::phi(&f, &x, &(&theta * t), &tol).unwrap();
        let b = flow::integrate(&f, &PhasePoint::new(x.clone(), theta.clone()), t, &tol).unwrap().end().x;
        assert!((a - b).amax() < 1e-9);
    }
}

#[test]
fn census_examples() {
    let tol = Tolerance::default();
    let x = v(&[-0.6, 0.05, 0.0]);
    let dir = v(&[1.0, 0.0, 0.0]);
    assert!(caustics::ray_census(&constant(), &x, &dir, &CensusConfig::default(), &tol).unwrap().is_empty());
    let f = focusing();
    let roots = caustics::ray_census(&f, &x, &dir, &CensusConfig::default(), &tol).unwrap();
    assert_eq!(roots.len(), 2);
    // recorded root locations
    assert!((roots[0].t - 1.978045983710017).abs() < 1e-6);
    assert!((roots[1].t - 1.9832695099187048).abs() < 1e-6);
    for r in &roots {
        assert!(r.sign_change && r.det.abs() < 1e-9);
    }
    let short = CensusConfig { t_max: 1.9, ..CensusConfig::default() };
    assert!(caustics::ray_census(&f, &x, &dir, &short, &tol).unwrap().is_empty());
}

#[test]
fn fold_roots_are_generic() {
    let f = focusing();
    let x = v(&[-0.6, 0.05, 0.0]);
    let tol = Tolerance::default();
    let map = ExpMap { field: &f, x: x.clone(), tol: caustics::tight_tolerance() };
    let mut n_fold = 0;
    for dir in [[1.0, 0.1, 0.0], [1.0, 0.2, 0.1], [1.0, -0.15, 0.05]] {
        for r in caustics::ray_census(&f, &x, &v(&dir), &CensusConfig::default(), &tol).unwrap() {
            let rec = caustics::classify_fold(&map, &map.eta_of(&r.xi), &FoldThresholds::default()).unwrap();
            if rec.is_fold {
                n_fold += 1;
                assert!(rec.transversality > 0.1 && rec.rank_gap > 1e3, "{rec:?}");
            }
        }
    }
    assert!(n_fold > 0);
}
