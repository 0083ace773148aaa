//! The acceptance criteria as runnable checks. Each one returns a pass flag and a
//! one-line summary of the measured quantities; runtime limits are part of the
//! pass condition.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use raysense_core::beam::{self, BeamState, OverlapFamily, ResidualGrid};
use raysense_core::caustics::{self, CensusConfig, CompletenessConfig, ExpMap, FoldThresholds};
use raysense_core::flow;
use raysense_core::linearize;
use raysense_core::quad;
use raysense_core::sensitivity::{self, SensitivityConfig};
use raysense_core::stats;
use raysense_core::xray::{self, CutoffAlpha, NormalConfig, TestFunction, VectorBump};
use raysense_core::{Domain, PhasePoint, Potential, Tolerance, VelocityField};

/// Criteria whose asymptotic regime is not reached inside the prescribed parameter window.
pub const DESK_SCALE_LIMITS: &[usize] = &[10];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ball3() -> Domain {
    Domain::unit_ball(3)
}

fn lens() -> VelocityField {
    VelocityField::gaussian_lens(ball3(), 0.3, 0.5).unwrap()
}

fn constant() -> VelocityField {
    VelocityField::constant(ball3())
}

fn tight() -> Tolerance {
    Tolerance { atol: 1e-12, rtol: 1e-11, ..Tolerance::default() }
}

fn unit_vector<R: Rng>(rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let n: f64 = v.norm();
        if n > 0.1 && n < 1.0 {
            return v / n;
        }
    }
}

/// Random boundary point with a random strictly entering unit direction.
fn random_entering<R: Rng>(rng: &mut R, field: &VelocityField) -> PhasePoint {
    let nu = unit_vector(rng);
    let mut v = unit_vector(rng);
    if v.dot(&nu) > -0.05 {
        v -= &nu * (v.dot(&nu) + rng.gen_range(0.05..1.0));
        v = v.normalize();
    }
    PhasePoint::new(nu, v).normalized(field)
}

fn chord_oracle() -> Outcome {
    let f = constant();
    let tol = Tolerance::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut err: f64 = 0.0;
    for _ in 0..1000 {
        let p0 = random_entering(&mut rng, &f);
        let rec = flow::scattering_relation(&f, &p0, &tol, 10.0).unwrap();
        let l = -2.0 * p0.x.dot(&p0.xi);
        err = err.max((rec.l - l).abs());
        err = err.max((&rec.exit.x - (&p0.x + &p0.xi * l)).amax());
        err = err.max((&rec.exit.xi - &p0.xi).amax());
    }
    outcome(err < 1e-8, format!("max error {err:.2e} over 1000 covectors"))
}

fn conservation() -> Outcome {
    let f = lens();
    let tol = tight();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut dh, mut dc): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let x = unit_vector(&mut rng) * rng.gen_range(0.0..0.9);
        let p0 = PhasePoint::new(x, unit_vector(&mut rng)).normalized(&f);
        let h0 = flow::hamiltonian(&f, &p0);
        let traj = flow::integrate(&f, &p0, 4.0, &tol).unwrap();
        let n = traj.n_steps();
        for k in 0..=4 * n {
            let p = traj.state_at(4.0 * k as f64 / (4 * n) as f64);
            dh = dh.max(((flow::hamiltonian(&f, &p) - h0) / h0).abs());
            dc = dc.max((p.cnorm(&f) - 1.0).abs());
        }
    }
    outcome(dh < 1e-8 && dc < 1e-8, format!("hamiltonian drift {dh:.2e}, cosphere drift {dc:.2e}"))
}

fn linearization_order() -> Outcome {
    let f = lens();
    let p0 = flow::entering_line(&f, &[1.0, 0.1, 0.05], &[0.0, 0.15, 0.0]).unwrap();
    let pot = Potential::Bump { center: vec![0.1, 0.05, 0.0], radius: 0.4, amplitude: 1.0 };
    let eps = stats::geomspace(10f64.powf(-2.5), 0.1, 5);
    let rep = linearize::remainder_probe(&f, &p0, 3.0, &pot, &eps, &tight()).unwrap();
    let s = rep.fit.slope;
    outcome((1.9..=2.1).contains(&s), format!("remainder slope {s:.4} (r2 {:.5})", rep.fit.r2))
}

fn weight_closed_form() -> Outcome {
    let c = constant();
    let tol = tight();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut err: f64 = 0.0;
    for _ in 0..10 {
        let p0 = random_entering(&mut rng, &c);
        let a = linearize::system_matrix(&c, &p0);
        let path = linearize::integrate_weight(&c, &p0, 2.0, &tol).unwrap();
        for k in 0..=40 {
            let t = 2.0 * k as f64 / 40.0;
            let exact = DMatrix::identity(6, 6) - &a * t;
            err = err.max((path.upsilon_at(t) - exact).amax());
        }
    }
    let f = lens();
    let mut det_drift: f64 = 0.0;
    for _ in 0..10 {
        let p0 = random_entering(&mut rng, &f);
        let path = linearize::integrate_weight(&f, &p0, 4.0, &tol).unwrap();
        for k in 0..=40 {
            det_drift = det_drift.max((path.upsilon_at(4.0 * k as f64 / 40.0).determinant() - 1.0).abs());
        }
    }
    outcome(err < 1e-8 && det_drift < 1e-6, format!("closed-form error {err:.2e}, det drift {det_drift:.2e}"))
}

/// `int_0^l (I - s A) f(x0 + s xi0) ds` by Gauss–Legendre on the chord piece inside the bump ball.
fn straight_line_oracle(p0: &PhasePoint, a: &DMatrix<f64>, b: &VectorBump) -> DVector<f64> {
    let c = DVector::from_vec(b.center.clone());
    let w = &p0.x - &c;
    let (bq, cq) = (w.dot(&p0.xi), w.norm_squared() - b.radius * b.radius);
    let disc = bq * bq - cq;
    let mut out = DVector::zeros(6);
    if disc <= 0.0 {
        return out;
    }
    let (s0, s1) = (-bq - disc.sqrt(), -bq + disc.sqrt());
    let v = DVector::from_vec(b.value.clone());
    for (s, ws) in quad::gauss_legendre_on(12, s0.max(0.0), s1) {
        let q = (&p0.x + &p0.xi * s - &c).norm_squared() / (b.radius * b.radius);
        let amp = (1.0 - q).powi(b.power);
        out += (DMatrix::identity(6, 6) - a * s) * &v * (amp * ws);
    }
    out
}

fn xray_linearity() -> Outcome {
    let f = lens();
    let c = constant();
    let tol = tight();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bf = VectorBump { center: vec![0.2, -0.1, 0.1], radius: 0.3, value: vec![0.3, -0.2, 0.5, 1.0, 0.4, -0.7], power: 4 };
    let bg = VectorBump { center: vec![-0.3, 0.2, 0.0], radius: 0.25, value: vec![-0.1, 0.6, 0.2, 0.0, 0.9, 0.3], power: 4 };
    let tf = TestFunction::Bumps { bumps: vec![bf.clone()] };
    let tg = TestFunction::Bumps { bumps: vec![bg.clone()] };
    let mut combo = bg.clone();
    combo.value.iter_mut().for_each(|v| *v *= -2.5);
    let tfg = TestFunction::Bumps { bumps: vec![bf.clone(), combo] };
    let mut lin: f64 = 0.0;
    for _ in 0..20 {
        let p0 = random_entering(&mut rng, &f);
        let a = xray::transform(&f, &tf, &p0, &tol).unwrap();
        let b = xray::transform(&f, &tg, &p0, &tol).unwrap();
        let ab = xray::transform(&f, &tfg, &p0, &tol).unwrap();
        lin = lin.max((ab - (a - b * 2.5)).amax());
    }
    let mut miss: f64 = 0.0;
    let mut n_miss = 0;
    let mut oracle: f64 = 0.0;
    let bc = DVector::from_vec(bf.center.clone());
    for _ in 0..200 {
        let p0 = random_entering(&mut rng, &c);
        let w = &p0.x - &bc;
        let dist = (&w - &p0.xi * w.dot(&p0.xi)).norm();
        let v = xray::transform(&c, &tf, &p0, &tol).unwrap();
        if dist > bf.radius {
            miss = miss.max(v.amax());
            n_miss += 1;
        }
        let a = linearize::system_matrix(&c, &p0);
        oracle = oracle.max((v - straight_line_oracle(&p0, &a, &bf)).amax());
    }
    outcome(
        lin < 1e-10 && miss < 1e-10 && oracle < 1e-6,
        format!("linearity {lin:.2e}, missing rays {miss:.2e} ({n_miss}), line oracle {oracle:.2e}"),
    )
}

fn normal_symmetry() -> Outcome {
    let f = lens();
    let cfg = NormalConfig::default();
    let pairs = [
        (
            TestFunction::bump(&[0.35, 0.1, 0.0], 0.2, &[0.0, 0.0, 0.0, 1.0, 0.3, -0.2]),
            TestFunction::bump(&[-0.35, 0.0, 0.15], 0.2, &[0.0, 0.0, 0.0, 0.2, -0.5, 1.0]),
        ),
        (
            TestFunction::bump(&[0.0, 0.4, -0.1], 0.2, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.5]),
            TestFunction::bump(&[0.1, -0.3, 0.3], 0.2, &[0.0, 0.0, 0.0, -0.4, 0.8, 0.2]),
        ),
    ];
    let mut gap: f64 = 0.0;
    let mut part: f64 = 0.0;
    for (a, b) in &pairs {
        let r = xray::symmetry_check(&f, a, b, 5, &cfg).unwrap();
        gap = gap.max(r.relative_gap);
        part = part.max(r.partition_gap);
    }
    outcome(gap < 1e-3 && part < 1e-10, format!("max relative gap {gap:.2e}, partition gap {part:.2e}"))
}

fn symbol_ellipticity() -> Outcome {
    let tol = Tolerance::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut min_eig = f64::INFINITY;
    for f in [constant(), lens()] {
        for _ in 0..20 {
            let x = unit_vector(&mut rng) * rng.gen_range(0.0..0.7);
            let xi = unit_vector(&mut rng) / f.c(&x);
            let r = xray::symbol_n1(&f, &x, &xi, &CutoffAlpha::One, 16, &tol).unwrap();
            min_eig = min_eig.min(r.min_eig);
        }
    }
    outcome(min_eig > 0.0, format!("smallest symbol eigenvalue {min_eig:.3e} over 40 points"))
}

fn beam_riccati() -> Outcome {
    let c = constant();
    let tol = tight();
    let lambda: f64 = 200.0;
    let s0 = BeamState::initial(DVector::from_vec(vec![-0.5, 0.1, 0.0]), DVector::from_vec(vec![1.0, 0.0, 0.0]), 0.0);
    let path = beam::propagate_beam(&c, &s0, 0.0, 2.0, &tol).unwrap();
    let (mut em, mut ea): (f64, f64) = (0.0, 0.0);
    for k in 0..=40 {
        let t = 2.0 * k as f64 / 40.0;
        let s = path.state_at(t).unwrap();
        let m = beam::C64::new(t, 1.0) / (1.0 + t * t);
        em = em.max((s.m[(1, 1)] - m).norm()).max((s.m[(2, 2)] - m).norm());
        em = em.max((s.m[(0, 0)] - beam::C64::new(0.0, 1.0)).norm());
        em = em.max(s.m[(0, 1)].norm()).max(s.m[(1, 2)].norm());
        let g = beam::eval_beam(&path, t, &s.x, lambda).unwrap().norm();
        let exact = lambda.powf(0.75) / (1.0 + t * t).sqrt();
        ea = ea.max((g - exact).abs() / exact);
    }
    // positivity along lens beams over [0, T + eps1]
    let f = lens();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut floor = f64::INFINITY;
    for _ in 0..10 {
        let p0 = random_entering(&mut rng, &f);
        let s0 = BeamState::initial(p0.x.clone(), p0.xi.clone(), 0.0);
        let path = beam::propagate_beam(&f, &s0, 0.0, 4.2, &tol).unwrap();
        floor = floor.min(path.im_floor);
    }
    outcome(em < 1e-8 && ea < 1e-8 && floor > 0.0, format!("Riccati error {em:.2e}, amplitude error {ea:.2e}, Im M floor {floor:.3}"))
}

fn reflection_jets() -> Outcome {
    let f = lens();
    let tol = tight();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut jet_gap, mut double_gap): (f64, f64) = (0.0, 0.0);
    let mut im_min = f64::INFINITY;
    for _ in 0..8 {
        let p0 = random_entering(&mut rng, &f);
        let bb = beam::incident_beam(&f, &p0, 0.2, 0.1, &tol).unwrap();
        let jet = beam::jet_of_state(&f, &bb.hit, &bb.chart).unwrap();
        let refl = beam::reflect_state(&f, &bb.hit, &bb.chart).unwrap();
        let jr = beam::jet_of_state(&f, &refl, &bb.chart).unwrap();
        jet_gap = jet_gap.max((jr.value - jet.value).norm());
        jet_gap = jet_gap.max((&jr.gradient - &jet.gradient).map(|v| v.norm()).max());
        jet_gap = jet_gap.max((&jr.mhat - &jet.mhat).map(|v| v.norm()).max());
        im_min = im_min.min(beam::min_eig_im(&jet.mhat)).min(beam::min_eig_im(&refl.m));
        let back = beam::reflect_state(&f, &refl, &bb.chart).unwrap();
        let jb = beam::jet_of_state(&f, &back, &bb.chart).unwrap();
        double_gap = double_gap.max((&back.xi - &bb.hit.xi).amax());
        double_gap = double_gap.max((&jb.mhat - &jet.mhat).map(|v| v.norm()).max());
    }
    outcome(
        jet_gap < 1e-8 && double_gap < 1e-8 && im_min > 0.0,
        format!("jet gap {jet_gap:.2e}, double reflection {double_gap:.2e}, min Im eig {im_min:.3}"),
    )
}

fn beam_residual() -> Outcome {
    let tol = tight();
    let lambdas = [50.0, 100.0, 200.0, 400.0, 800.0];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, f) in [("constant", constant()), ("lens", lens())] {
        let p0 = flow::entering_line(&f, &[1.0, 0.2, 0.1], &[0.0, 0.0, 0.0]).unwrap();
        let bb = beam::incident_beam(&f, &p0, 0.2, 0.1, &tol).unwrap();
        let grid = ResidualGrid { t_start: 0.0, t_end: bb.t1 + 0.1, n_times: 16, ..ResidualGrid::default() };
        let scan = beam::residual_scan(&f, &bb.path, &lambdas, &grid).unwrap();
        pass &= scan.fit.slope <= 0.6;
        parts.push(format!("{name} slope {:.3}", scan.fit.slope));
        if name == "lens" {
            // diagnostic only: away from the envelope transition band the asymptotic rate shows
            let inner = ResidualGrid { t_start: 0.7, t_end: 0.9, n_times: 3, ..ResidualGrid::default() };
            let diag = beam::residual_scan(&f, &bb.path, &[100.0, 200.0, 400.0, 800.0], &inner).unwrap();
            parts.push(format!("lens interior slope {:.3} (diagnostic)", diag.fit.slope));
        }
    }
    outcome(pass, parts.join(", "))
}

fn interaction_decay() -> Outcome {
    let f = lens();
    let p0 = flow::entering_line(&f, &[1.0, 0.2, 0.1], &[0.0, 0.2, -0.1]).unwrap();
    let pot = Potential::Bump { center: vec![0.1, 0.1, 0.0], radius: 0.4, amplitude: 1.0 };
    let series =
        beam::interaction_sweep(&f, &p0, &pot, &[0.05, 0.1, 0.2], &[100.0, 200.0, 400.0, 800.0], 0.2, &tight()).unwrap();
    let mut pass = true;
    let mut prev: Option<(f64, f64)> = None;
    for s in &series {
        pass &= s.fit.r2 > 0.99 && s.fit.slope < 0.0;
        if let Some((dz, slope)) = prev {
            pass &= s.delta_z > dz && s.fit.slope < slope;
        }
        prev = Some((s.delta_z, s.fit.slope));
    }
    let sweep = beam::gaussian_bound_sweep(&OverlapFamily::default(), 200, 1000, 11).unwrap();
    pass &= sweep.n_violations == 0;
    let desc: Vec<String> =
        series.iter().map(|s| format!("|dz| {:.1e} slope {:.2e} r2 {:.4}", s.delta_z, s.fit.slope, s.fit.r2)).collect();
    outcome(pass, format!("{}; bound violations {}/1000 (max ratio {:.2e})", desc.join(", "), sweep.n_violations, sweep.max_ratio))
}

fn jacobian() -> Outcome {
    let f = lens();
    let tol = caustics::tight_tolerance();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut rel: f64 = 0.0;
    let x = DVector::from_vec(vec![-0.2, 0.1, 0.15]);
    for _ in 0..100 {
        let xi = unit_vector(&mut rng) * rng.gen_range(0.2..1.5);
        let v = caustics::dphi(&f, &x, &xi, &tol).unwrap().dphi;
        let fd = caustics::dphi_fd(&f, &x, &xi, 1e-5, &tol).unwrap();
        rel = rel.max((&v - &fd).norm() / v.norm());
    }
    let mut zero: f64 = 0.0;
    for _ in 0..10 {
        let y = unit_vector(&mut rng) * rng.gen_range(0.0..0.8);
        let j = caustics::dphi(&f, &y, &DVector::zeros(3), &tol).unwrap().dphi;
        zero = zero.max((j - DMatrix::identity(3, 3) * f.c(&y)).amax());
    }
    outcome(rel < 1e-5 && zero < 1e-8, format!("variational vs differences {rel:.2e}, dphi(x, 0) error {zero:.2e}"))
}

fn fold_classification() -> Outcome {
    let th = FoldThresholds::default();
    let fold = caustics::classify_fold(&caustics::FoldNormalForm { dim: 3 }, &DVector::zeros(3), &th).unwrap();
    let cusp = caustics::classify_fold(&caustics::CuspNormalForm { dim: 3 }, &DVector::zeros(3), &th).unwrap();
    let f = VelocityField::gaussian_lens(ball3(), 0.5, 0.4).unwrap();
    let x = DVector::from_vec(vec![-0.6, 0.05, 0.0]);
    let tol = Tolerance::default();
    let map = ExpMap { field: &f, x: x.clone(), tol: caustics::tight_tolerance() };
    let mut n_fold = 0;
    let mut worst_det: f64 = 0.0;
    let mut ok = true;
    for dir in [[1.0, 0.0, 0.0], [1.0, 0.1, 0.0], [1.0, 0.2, 0.1], [1.0, -0.15, 0.05]] {
        let dir = DVector::from_vec(dir.to_vec());
        for r in caustics::ray_census(&f, &x, &dir, &CensusConfig::default(), &tol).unwrap() {
            let rec = caustics::classify_fold(&map, &map.eta_of(&r.xi), &th).unwrap();
            if rec.is_fold {
                n_fold += 1;
                worst_det = worst_det.max(r.det.abs());
                ok &= r.det.abs() < 1e-9 && r.sign_change && rec.transversality > 0.0;
            }
        }
    }
    outcome(
        fold.is_fold && !cusp.is_fold && n_fold > 0 && ok,
        format!("normal forms fold={} cusp={}; {n_fold} lens fold roots, max |det| {worst_det:.1e}", fold.is_fold, cusp.is_fold),
    )
}

fn completeness() -> Outcome {
    let tol = Tolerance::default();
    let cfg = CompletenessConfig { n_xi: 150, census: CensusConfig { n_steps: 200, ..CensusConfig::default() }, seed: 3, ..Default::default() };
    let c = constant();
    let cc = caustics::complete_set_search(&c, &DVector::from_vec(vec![0.2, -0.1, 0.3]), &cfg, &tol).unwrap();
    let f = lens();
    let x = DVector::from_vec(vec![0.5, 0.3, 0.2]);
    let a = caustics::complete_set_search(&f, &x, &cfg, &tol).unwrap();
    let b = caustics::complete_set_search(&f, &x, &cfg, &tol).unwrap();
    let same = serde_json::to_vec(&a).unwrap() == serde_json::to_vec(&b).unwrap();
    outcome(
        cc.passes && cc.coverage_gap < 1e-2 && same,
        format!("constant gap {:.2e}; lens gap {:.2e} passes={} reproducible={same}", cc.coverage_gap, a.coverage_gap, a.passes),
    )
}

fn sensitivity_chain() -> Outcome {
    let f = lens();
    let pot = Potential::Bump { center: vec![0.1, 0.0, 0.1], radius: 0.4, amplitude: 1.0 };
    let rep = sensitivity::sensitivity_chain(&f, &pot, &SensitivityConfig::default()).unwrap();
    let s = rep.remainder_fit.slope;
    outcome(
        (1.85..=2.15).contains(&s),
        format!("remainder slope {s:.3} (r2 {:.4}); raw transform slope {:.3}", rep.remainder_fit.r2, rep.transform_fit.slope),
    )
}

type Check = fn() -> Outcome;

/// `(id, name, runtime limit, check)` for every criterion.
fn table() -> Vec<(usize, &'static str, Duration, Check)> {
    vec![
        (1, "chord oracle", Duration::from_secs(10), chord_oracle),
        (2, "conservation and cosphere", Duration::from_secs(30), conservation),
        (3, "linearization order", Duration::from_secs(60), linearization_order),
        (4, "weight closed form", Duration::MAX, weight_closed_form),
        (5, "x-ray linearity and support", Duration::MAX, xray_linearity),
        (6, "normal operator symmetry", Duration::from_secs(300), normal_symmetry),
        (7, "symbol ellipticity", Duration::MAX, symbol_ellipticity),
        (8, "beam riccati closed form", Duration::MAX, beam_riccati),
        (9, "reflection jets", Duration::MAX, reflection_jets),
        (10, "beam residual scaling", Duration::from_secs(300), beam_residual),
        (11, "interaction decay", Duration::MAX, interaction_decay),
        (12, "jacobian consistency", Duration::MAX, jacobian),
        (13, "fold classification", Duration::MAX, fold_classification),
        (14, "completeness certificate", Duration::MAX, completeness),
        (15, "sensitivity chain", Duration::from_secs(300), sensitivity_chain),
    ]
}

pub const N_CRITERIA: usize = 15;

#[derive(Clone, Debug, Serialize)]
pub struct CriterionReport {
    pub id: usize,
    pub name: String,
    pub pass: bool,
    /// Listed in `DESK_SCALE_LIMITS`.
    pub known_limit: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        format!("criterion {:2} {:<28} {tag}  {} [{:.1} s]", self.id, self.name, self.detail, self.seconds)
    }

    pub fn unexpected_failure(&self) -> bool {
        !self.pass && !self.known_limit
    }
}

/// Runs the selected criteria (all when `only` is empty) in order, calling
/// `on_done` after each one.
pub fn run_criteria(only: &[usize], mut on_done: impl FnMut(&CriterionReport)) -> Vec<CriterionReport> {
    let mut out = Vec::new();
    for (id, name, limit, check) in table() {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(check));
        let dt = t0.elapsed();
        let (pass, detail) = match res {
            Ok(o) => (o.pass && dt <= limit, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let rep = CriterionReport {
            id,
            name: name.to_string(),
            pass,
            known_limit: DESK_SCALE_LIMITS.contains(&id),
            detail,
            seconds: dt.as_secs_f64(),
        };
        on_done(&rep);
        out.push(rep);
    }
    out
}
