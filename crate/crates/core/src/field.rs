//! Sound-speed models on a ball and their admissibility checks.
//!
//! Every built-in field equals 1 outside the inner ball of radius
//! `R - epsilon0`, so rays are straight lines near the boundary.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flow::{self, PhasePoint};
use crate::ode::Tolerance;
use crate::smooth;

/// Ball `|x - center| < radius` with a collar of width `epsilon0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub dim: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    pub epsilon0: f64,
}

impl Domain {
    pub fn unit_ball(dim: usize) -> Self {
        Domain { dim, center: vec![0.0; dim], radius: 1.0, epsilon0: 0.2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return invalid(format!("dimension must be at least 2, got {}", self.dim));
        }
        if self.center.len() != self.dim {
            return invalid("domain center has wrong length");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return invalid("domain radius must be positive");
        }
        if !(self.epsilon0 > 0.0 && self.epsilon0 < self.radius) {
            return invalid("epsilon0 must lie in (0, R)");
        }
        Ok(())
    }

    pub fn center_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.center)
    }

    pub fn inner_radius(&self) -> f64 {
        self.radius - self.epsilon0
    }

    pub fn radial_distance(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt()
    }

    /// Outward unit normal at the radial projection of `x`.
    pub fn normal(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - self.center_vec()).normalize()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.radial_distance(x) < self.radius
    }

    pub fn in_inner(&self, x: &[f64]) -> bool {
        self.radial_distance(x) < self.inner_radius()
    }
}

/// One Gaussian slow-down: contributes `depth * exp(-|x - center|^2 / (2 width^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lens {
    pub center: Vec<f64>,
    pub depth: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    Constant,
    /// `c = 1 - env(x) * sum_k depth_k * gauss_k(x)`.
    GaussianLensSum { lenses: Vec<Lens> },
    /// `c = 1 + env(x) * sum_k coeffs[k] * |x - center|^(2k)`.
    RadialPolynomial { coeffs: Vec<f64> },
}

/// Smooth potential `psi` used to perturb a field as `c * exp(eps * psi / 2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    /// `amplitude * exp(1 - 1 / (1 - |x - center|^2 / radius^2))` inside the ball.
    Bump { center: Vec<f64>, radius: f64, amplitude: f64 },
    /// `-2 <v, x - center> * env(|x - center| / radius)`; its `-grad/2` equals `v`
    /// on the inner 90% of the ball.
    Ramp { center: Vec<f64>, radius: f64, v: Vec<f64> },
}

/// Value, gradient and Hessian of a scalar function at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarJet {
    pub v: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Potential {
    pub fn support(&self) -> (&[f64], f64) {
        match self {
            Potential::Bump { center, radius, .. } | Potential::Ramp { center, radius, .. } => (center, *radius),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let (c, r) = self.support();
        if c.len() != dim || !(r > 0.0) {
            return invalid("potential center/radius malformed");
        }
        if let Potential::Ramp { v, .. } = self {
            if v.len() != dim {
                return invalid("ramp direction has wrong length");
            }
        }
        Ok(())
    }

    /// Writes gradient and row-major Hessian; returns the value.
    pub fn eval_into(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let d = x.len();
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        match self {
            Potential::Bump { center, radius, amplitude } => {
                let r2 = radius * radius;
                let q: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() / r2;
                if q >= 1.0 {
                    return 0.0;
                }
                let om = 1.0 - q;
                let b = (1.0 - 1.0 / om).exp();
                let b1 = -b / (om * om);
                let b2 = b * (1.0 / om.powi(4) - 2.0 / om.powi(3));
                for i in 0..d {
                    let gi = 2.0 * (x[i] - center[i]) / r2;
                    grad[i] = amplitude * b1 * gi;
                    for j in 0..d {
                        let gj = 2.0 * (x[j] - center[j]) / r2;
                        let mut h = b2 * gi * gj;
                        if i == j {
                            h += b1 * 2.0 / r2;
                        }
                        hess[i * d + j] = amplitude * h;
                    }
                }
                amplitude * b
            }
            Potential::Ramp { center, radius, v } => {
                let dist = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
                let p = smooth::plateau(dist / radius, 0.9);
                if p.v == 0.0 {
                    return 0.0;
                }
                let lin: f64 = -2.0 * v.iter().zip(x.iter().zip(center)).map(|(vi, (a, c))| vi * (a - c)).sum::<f64>();
                let mut gp = vec![0.0; d];
                let mut hp = vec![0.0; d * d];
                radial_profile_derivs(x, center, *radius, p, &mut gp, &mut hp);
                for i in 0..d {
                    grad[i] = -2.0 * v[i] * p.v + lin * gp[i];
                    for j in 0..d {
                        hess[i * d + j] = -2.0 * v[i] * gp[j] - 2.0 * v[j] * gp[i] + lin * hp[i * d + j];
                    }
                }
                lin * p.v
            }
        }
    }

    pub fn jet(&self, x: &DVector<f64>) -> ScalarJet {
        let d = x.len();
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        let v = self.eval_into(x.as_slice(), &mut g, &mut h);
        ScalarJet { v, grad: DVector::from_vec(g), hess: DMatrix::from_row_slice(d, d, &h) }
    }
}

/// Derivatives of `x -> prof(|x - c| / scale)` given the profile jet at that radius.
fn radial_profile_derivs(x: &[f64], c: &[f64], scale: f64, prof: smooth::Jet1, grad: &mut [f64], hess: &mut [f64]) {
    let d = x.len();
    if prof.d1 == 0.0 && prof.d2 == 0.0 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        return;
    }
    let dist = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    for i in 0..d {
        let ni = (x[i] - c[i]) / dist;
        grad[i] = prof.d1 * ni / scale;
        for j in 0..d {
            let nj = (x[j] - c[j]) / dist;
            let delta = if i == j { 1.0 } else { 0.0 };
            hess[i * d + j] = prof.d2 * ni * nj / (scale * scale) + prof.d1 * (delta - ni * nj) / (scale * dist);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub potential: Potential,
    pub eps: f64,
}

/// Sound speed `c(x)` with analytic gradient and Hessian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub domain: Domain,
    pub kind: FieldKind,
    /// Bound on `c`, `1/c` used by the admissibility check.
    pub m0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
}

const ENVELOPE_PLATEAU: f64 = 0.9;

impl VelocityField {
    pub fn new(domain: Domain, kind: FieldKind, m0: f64) -> Result<Self> {
        let f = VelocityField { domain, kind, m0, perturbation: None };
        f.validate()?;
        Ok(f)
    }

    pub fn constant(domain: Domain) -> Self {
        VelocityField { domain, kind: FieldKind::Constant, m0: 2.0, perturbation: None }
    }

    /// Single lens at the domain center.
    pub fn gaussian_lens(domain: Domain, depth: f64, width: f64) -> Result<Self> {
        let center = domain.center.clone();
        VelocityField::new(domain, FieldKind::GaussianLensSum { lenses: vec![Lens { center, depth, width }] }, 4.0)
    }

    pub fn radial_polynomial(domain: Domain, coeffs: Vec<f64>) -> Result<Self> {
        VelocityField::new(domain, FieldKind::RadialPolynomial { coeffs }, 4.0)
    }

    /// `c * exp(eps * psi / 2)`, i.e. `c^2` scaled by `exp(eps * psi)`.
    pub fn perturbed(&self, potential: Potential, eps: f64) -> Result<Self> {
        if self.perturbation.is_some() {
            return invalid("field is already perturbed");
        }
        potential.validate(self.domain.dim)?;
        let (pc, pr) = potential.support();
        if self.domain.radial_distance(pc) + pr > self.domain.inner_radius() + 1e-12 {
            return invalid("perturbation support must lie inside the inner ball");
        }
        let mut f = self.clone();
        f.perturbation = Some(Perturbation { potential, eps });
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let d = self.domain.dim;
        if !(self.m0 >= 1.0) {
            return invalid("M0 must be at least 1");
        }
        match &self.kind {
            FieldKind::Constant => {}
            FieldKind::GaussianLensSum { lenses } => {
                let mut total = 0.0;
                for l in lenses {
                    if l.center.len() != d {
                        return invalid("lens center has wrong length");
                    }
                    if !(l.width > 0.0) || !(l.depth >= 0.0) {
                        return invalid("lens depth must be >= 0 and width > 0");
                    }
                    total += l.depth;
                }
                if total >= 1.0 {
                    return invalid("total lens depth must be below 1 to keep c positive");
                }
            }
            FieldKind::RadialPolynomial { coeffs } => {
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return invalid("non-finite polynomial coefficient");
                }
                // c must stay positive on the inner ball
                let ri = self.domain.inner_radius();
                for k in 0..=400 {
                    let r = ri * k as f64 / 400.0;
                    let p: f64 = coeffs.iter().enumerate().map(|(j, a)| a * r.powi(2 * j as i32)).sum();
                    let env = smooth::plateau(r / ri, ENVELOPE_PLATEAU).v;
                    if 1.0 + env * p <= 0.0 {
                        return invalid("radial polynomial makes c non-positive");
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes `grad c` and the row-major Hessian of `c`; returns `c`.
    pub fn eval_into(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let c = self.base_eval_into(x, grad, hess);
        match &self.perturbation {
            None => c,
            Some(p) => {
                let d = x.len();
                let mut gp = vec![0.0; d];
                let mut hp = vec![0.0; d * d];
                let psi = p.potential.eval_into(x, &mut gp, &mut hp);
                if psi == 0.0 && gp.iter().all(|v| *v == 0.0) {
                    return c;
                }
                let k = 0.5 * p.eps;
                let w = (k * psi).exp();
                let gw: Vec<f64> = gp.iter().map(|g| w * k * g).collect();
                for i in 0..d {
                    for j in 0..d {
                        let hw = w * (k * hp[i * d + j] + k * k * gp[i] * gp[j]);
                        hess[i * d + j] = w * hess[i * d + j] + grad[i] * gw[j] + gw[i] * grad[j] + c * hw;
                    }
                }
                for i in 0..d {
                    grad[i] = w * grad[i] + c * gw[i];
                }
                c * w
            }
        }
    }

    fn base_eval_into(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let d = x.len();
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        if matches!(self.kind, FieldKind::Constant) {
            return 1.0;
        }
        let ri = self.domain.inner_radius();
        let center = &self.domain.center;
        let dist = self.domain.radial_distance(x);
        let env = smooth::plateau(dist / ri, ENVELOPE_PLATEAU);
        if env.v == 0.0 && env.d1 == 0.0 {
            return 1.0;
        }
        let mut ge = vec![0.0; d];
        let mut he = vec![0.0; d * d];
        radial_profile_derivs(x, center, ri, env, &mut ge, &mut he);

        // s = profile inside the envelope, c = 1 + sign * env * s
        let mut s = 0.0;
        let mut gs = vec![0.0; d];
        let mut hs = vec![0.0; d * d];
        let sign;
        match &self.kind {
            FieldKind::Constant => unreachable!(),
            FieldKind::GaussianLensSum { lenses } => {
                sign = -1.0;
                for l in lenses {
                    let s2 = l.width * l.width;
                    let q: f64 = x.iter().zip(&l.center).map(|(a, c)| (a - c) * (a - c)).sum();
                    let g = l.depth * (-0.5 * q / s2).exp();
                    s += g;
                    for i in 0..d {
                        let ui = x[i] - l.center[i];
                        gs[i] -= g * ui / s2;
                        for j in 0..d {
                            let uj = x[j] - l.center[j];
                            let delta = if i == j { 1.0 } else { 0.0 };
                            hs[i * d + j] += g * (ui * uj / (s2 * s2) - delta / s2);
                        }
                    }
                }
            }
            FieldKind::RadialPolynomial { coeffs } => {
                sign = 1.0;
                let q = dist * dist;
                let (mut p, mut p1, mut p2) = (0.0, 0.0, 0.0);
                for (k, a) in coeffs.iter().enumerate() {
                    let kf = k as f64;
                    p += a * q.powi(k as i32);
                    if k >= 1 {
                        p1 += a * kf * q.powi(k as i32 - 1);
                    }
                    if k >= 2 {
                        p2 += a * kf * (kf - 1.0) * q.powi(k as i32 - 2);
                    }
                }
                s = p;
                for i in 0..d {
                    let ui = x[i] - center[i];
                    gs[i] = 2.0 * p1 * ui;
                    for j in 0..d {
                        let uj = x[j] - center[j];
                        let delta = if i == j { 1.0 } else { 0.0 };
                        hs[i * d + j] = 4.0 * p2 * ui * uj + 2.0 * p1 * delta;
                    }
                }
            }
        }
        for i in 0..d {
            grad[i] = sign * (s * ge[i] + env.v * gs[i]);
            for j in 0..d {
                hess[i * d + j] =
                    sign * (s * he[i * d + j] + ge[i] * gs[j] + gs[i] * ge[j] + env.v * hs[i * d + j]);
            }
        }
        1.0 + sign * env.v * s
    }

    pub fn c(&self, x: &DVector<f64>) -> f64 {
        let d = x.len();
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        self.eval_into(x.as_slice(), &mut g, &mut h)
    }

    pub fn eval(&self, x: &DVector<f64>) -> ScalarJet {
        let d = x.len();
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        let v = self.eval_into(x.as_slice(), &mut g, &mut h);
        ScalarJet { v, grad: DVector::from_vec(g), hess: DMatrix::from_row_slice(d, d, &h) }
    }

    /// `b = -grad c / c`.
    pub fn eval_b(&self, x: &DVector<f64>) -> DVector<f64> {
        let j = self.eval(x);
        -j.grad / j.v
    }

    /// `db = (grad c grad c^T - c Hess c) / c^2`.
    pub fn eval_db(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let j = self.eval(x);
        (&j.grad * j.grad.transpose() - &j.hess * j.v) / (j.v * j.v)
    }

    /// Largest `|grad c|` over a radial/angular sample of the inner ball.
    pub fn max_gradient(&self) -> f64 {
        let samples = admissibility_points(&self.domain, 4000, 17);
        samples.iter().map(|x| self.eval(x).grad.norm()).fold(0.0, f64::max)
    }
}

fn admissibility_points(domain: &Domain, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = domain.center_vec();
    (0..n)
        .map(|_| {
            let dir = random_unit(&mut rng, domain.dim);
            let r = domain.radius * rng.gen::<f64>().powf(1.0 / domain.dim as f64);
            &c + dir * r
        })
        .collect()
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| {
            // Box–Muller
            let u1: f64 = rng.gen::<f64>().max(1e-300);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub nontrapping: bool,
    pub max_exit_time: f64,
    /// Smallest `-<xi0, nu>` and `<xi1, nu>` over boundary rays reaching the inner ball.
    pub epsilon_star: f64,
    /// Shortest travel time among those rays.
    pub epsilon_one: f64,
    pub c_bounds_ok: bool,
    pub c_min: f64,
    pub c_max: f64,
    pub max_grad: f64,
    pub max_hess: f64,
    pub support_ok: bool,
    pub n_samples: usize,
}

/// Sampled check of the standing assumptions on `field`.
///
/// Interior covectors are flowed for time `t` and must leave; boundary rays
/// give the transversality margin and minimal travel time.
pub fn check_admissibility(field: &VelocityField, t: f64, n_samples: usize, seed: u64) -> Result<AdmissibilityReport> {
    field.validate()?;
    let dom = &field.domain;
    let d = dom.dim;
    let tol = Tolerance::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = dom.center_vec();

    // bounds on c and its derivatives
    let pts = admissibility_points(dom, n_samples.max(10_000), seed ^ 0x5eed);
    let (mut cmin, mut cmax, mut gmax, mut hmax) = (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64);
    for x in &pts {
        let j = field.eval(x);
        cmin = cmin.min(j.v);
        cmax = cmax.max(j.v);
        gmax = gmax.max(j.grad.norm());
        hmax = hmax.max(j.hess.norm());
    }
    let c_bounds_ok = cmin >= 1.0 / field.m0 && cmax <= field.m0;

    // c == 1 exactly in the collar and outside
    let mut support_ok = true;
    for _ in 0..2000 {
        let dir = random_unit(&mut rng, d);
        let r = dom.inner_radius() + rng.gen::<f64>() * (dom.epsilon0 + 0.5 * dom.radius);
        let x = &center + dir * r;
        let j = field.eval(&x);
        if j.v != 1.0 || j.grad.iter().any(|g| *g != 0.0) {
            support_ok = false;
            break;
        }
    }

    // interior covectors must leave within t; include near-diameters
    let mut starts: Vec<PhasePoint> = Vec::new();
    for k in 0..d {
        for s in [-1.0, 1.0] {
            let mut e = DVector::zeros(d);
            e[k] = s;
            let x = &center + &e * (0.999 * dom.radius);
            starts.push(PhasePoint::new(x, -e));
        }
    }
    for _ in 0..n_samples {
        let dir = random_unit(&mut rng, d);
        let r = dom.radius * rng.gen::<f64>().powf(1.0 / d as f64) * 0.999;
        let x = &center + random_unit(&mut rng, d) * r;
        let cx = field.c(&x);
        starts.push(PhasePoint::new(x, dir / cx));
    }
    let mut nontrapping = true;
    let mut max_exit: f64 = 0.0;
    for p in &starts {
        match flow::exit_time(field, p, t, &tol)? {
            Some(te) => max_exit = max_exit.max(te),
            None => {
                nontrapping = false;
                max_exit = f64::INFINITY;
            }
        }
    }

    // boundary rays
    let mut eps_star = f64::INFINITY;
    let mut eps_one = f64::INFINITY;
    let n_bdry = (n_samples / 4).max(64);
    for _ in 0..n_bdry {
        let nu = random_unit(&mut rng, d);
        let x0 = &center + &nu * dom.radius;
        // inward directions biased toward the normal so that most reach the inner ball
        let mut v = random_unit(&mut rng, d);
        if v.dot(&nu) > 0.0 {
            v = -v;
        }
        if v.dot(&nu) > -1e-3 {
            continue;
        }
        let p0 = PhasePoint::new(x0, v);
        let rec = match flow::scattering_relation(field, &p0, &tol, 1e3 * dom.radius) {
            Ok(r) => r,
            Err(Error::Trapped { .. }) => {
                nontrapping = false;
                continue;
            }
            Err(Error::Grazing { .. }) => continue,
            Err(e) => return Err(e),
        };
        if rec.entered_inner {
            let nu1 = dom.normal(&rec.exit.x);
            eps_star = eps_star.min(-p0.xi.dot(&nu)).min(rec.exit.xi.dot(&nu1));
            eps_one = eps_one.min(rec.l);
        }
    }

    Ok(AdmissibilityReport {
        nontrapping,
        max_exit_time: max_exit,
        epsilon_star: eps_star,
        epsilon_one: eps_one,
        c_bounds_ok,
        c_min: cmin,
        c_max: cmax,
        max_grad: gmax,
        max_hess: hmax,
        support_ok,
        n_samples: starts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(field: &VelocityField, x: &DVector<f64>) {
        let d = x.len();
        let j = field.eval(x);
        let h = 2e-6;
        for k in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (field.c(&xp) - field.c(&xm)) / (2.0 * h);
            assert!((fd - j.grad[k]).abs() < 1e-7, "grad {k}: {fd} vs {} at {x:?} for {:?}", j.grad[k], field.kind);
            let gp = field.eval(&xp).grad;
            let gm = field.eval(&xm).grad;
            for i in 0..d {
                let fdh = (gp[i] - gm[i]) / (2.0 * h);
                assert!((fdh - j.hess[(i, k)]).abs() < 2e-5 * (1.0 + fdh.abs()), "hess {i}{k}");
            }
        }
    }

    #[test]
    fn lens_center_value() {
        let f = VelocityField::gaussian_lens(Domain::unit_ball(3), 0.3, 0.5).unwrap();
        let c0 = f.c(&DVector::zeros(3));
        assert!((c0 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_differences() {
        let dom = Domain::unit_ball(3);
        let lens = VelocityField::new(
            dom.clone(),
            FieldKind::GaussianLensSum {
                lenses: vec![
                    Lens { center: vec![0.1, 0.0, -0.2], depth: 0.3, width: 0.3 },
                    Lens { center: vec![-0.3, 0.2, 0.1], depth: 0.2, width: 0.25 },
                ],
            },
            4.0,
        )
        .unwrap();
        let poly = VelocityField::radial_polynomial(dom.clone(), vec![0.1, -0.3, 0.2]).unwrap();
        let pert = lens
            .perturbed(Potential::Bump { center: vec![0.2, 0.1, 0.0], radius: 0.3, amplitude: 0.7 }, 0.4)
            .unwrap();
        let ramp = poly
            .perturbed(Potential::Ramp { center: vec![0.0, -0.1, 0.1], radius: 0.4, v: vec![0.3, -0.2, 0.5] }, 0.3)
            .unwrap();
        let pts = [
            vec![0.05, 0.1, -0.2],
            vec![0.3, -0.4, 0.5],
            vec![0.7, 0.1, 0.1],
            vec![-0.2, 0.35, 0.25],
            vec![0.0, -0.45, 0.2],
        ];
        for p in pts {
            let x = DVector::from_vec(p);
            for f in [&lens, &poly, &pert, &ramp] {
                fd_check(f, &x);
            }
        }
    }

    #[test]
    fn equals_one_outside_inner_ball() {
        let f = VelocityField::gaussian_lens(Domain::unit_ball(3), 0.5, 0.4).unwrap();
        for r in [0.8, 0.85, 1.0, 1.7] {
            let x = DVector::from_vec(vec![r * 0.6, -r * 0.8, 0.0]);
            let j = f.eval(&x);
            assert_eq!(j.v, 1.0);
            assert!(j.grad.iter().all(|g| *g == 0.0));
        }
    }

    #[test]
    fn b_and_db_are_consistent() {
        let f = VelocityField::gaussian_lens(Domain::unit_ball(3), 0.4, 0.35).unwrap();
        let x = DVector::from_vec(vec![0.2, -0.1, 0.3]);
        let db = f.eval_db(&x);
        let h = 1e-6;
        for k in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let col = (f.eval_b(&xp) - f.eval_b(&xm)) / (2.0 * h);
            for i in 0..3 {
                assert!((col[i] - db[(i, k)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut dom = Domain::unit_ball(3);
        dom.epsilon0 = 1.5;
        assert!(VelocityField::gaussian_lens(dom, 0.3, 0.5).is_err());
        assert!(VelocityField::gaussian_lens(Domain::unit_ball(3), 1.2, 0.5).is_err());
        assert!(VelocityField::radial_polynomial(Domain::unit_ball(2), vec![-2.0]).is_err());
    }

    #[test]
    fn constant_field_admissibility() {
        let f = VelocityField::constant(Domain::unit_ball(3));
        let rep = check_admissibility(&f, 2.5, 300, 3).unwrap();
        assert!(rep.nontrapping);
        assert!(rep.c_bounds_ok && rep.support_ok);
        // diameter-like chords need almost time 2
        let short = check_admissibility(&f, 1.5, 300, 3).unwrap();
        assert!(!short.nontrapping);
    }
}
