//! Weighted X-ray transform along the ray flow, its normal operator, and the
//! principal symbol of the near-diagonal part.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{Domain, Potential, VelocityField};
use crate::flow::{self, PhasePoint, SphereEvent, Trajectory};
use crate::linearize::{self, WeightPath, WeightSystem};
use crate::ode::{self, Tolerance};
use crate::quad::{self, SphereRule};
use crate::smooth;

/// Compactly supported bump `value * (1 - |x - center|^2 / radius^2)^power`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorBump {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Vector in `R^{2d}`.
    pub value: Vec<f64>,
    #[serde(default = "default_power")]
    pub power: i32,
}

fn default_power() -> i32 {
    4
}

/// Vector-valued test function `f: Omega -> R^{2d}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Bumps { bumps: Vec<VectorBump> },
    /// `(0, b_other - b_base)`, i.e. `(0, grad(ln c^2 - ln c_other^2) / 2)`.
    FieldPair { base: Box<VelocityField>, other: Box<VelocityField> },
}

impl TestFunction {
    pub fn bump(center: &[f64], radius: f64, value: &[f64]) -> Self {
        TestFunction::Bumps {
            bumps: vec![VectorBump { center: center.to_vec(), radius, value: value.to_vec(), power: default_power() }],
        }
    }

    /// The pair `(c, c exp(eps psi / 2))`.
    pub fn perturbation_pair(field: &VelocityField, potential: Potential, eps: f64) -> Result<Self> {
        let other = field.perturbed(potential, eps)?;
        Ok(TestFunction::FieldPair { base: Box::new(field.clone()), other: Box::new(other) })
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        match self {
            TestFunction::Bumps { bumps } => {
                for b in bumps {
                    if b.center.len() != domain.dim || b.value.len() != 2 * domain.dim {
                        return invalid("bump center/value has wrong length");
                    }
                    if !(b.radius > 0.0) || b.power < 1 {
                        return invalid("bump radius must be positive and power at least 1");
                    }
                    if domain.radial_distance(&b.center) + b.radius > domain.inner_radius() + 1e-12 {
                        return invalid("bump support must lie inside the inner ball");
                    }
                }
            }
            TestFunction::FieldPair { base, other } => {
                if base.domain != *domain || other.domain != *domain {
                    return invalid("field pair lives on a different domain");
                }
            }
        }
        Ok(())
    }

    /// Only the `xi`-block is non-zero.
    pub fn is_xi_block_only(&self) -> bool {
        match self {
            TestFunction::Bumps { bumps } => {
                bumps.iter().all(|b| b.value[..b.center.len()].iter().all(|v| *v == 0.0))
            }
            TestFunction::FieldPair { .. } => true,
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            TestFunction::Bumps { bumps } => {
                for b in bumps {
                    let q: f64 =
                        x.iter().zip(&b.center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() / (b.radius * b.radius);
                    if q < 1.0 {
                        let w = (1.0 - q).powi(b.power);
                        for (o, v) in out.iter_mut().zip(&b.value) {
                            *o += w * v;
                        }
                    }
                }
            }
            TestFunction::FieldPair { base, other } => {
                let d = x.len();
                let mut g0 = [0.0; 8];
                let mut g1 = [0.0; 8];
                let mut h = [0.0; 64];
                let c0 = base.eval_into(x, &mut g0[..d], &mut h[..d * d]);
                let c1 = other.eval_into(x, &mut g1[..d], &mut h[..d * d]);
                for i in 0..d {
                    out[d + i] = g0[i] / c0 - g1[i] / c1;
                }
            }
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(2 * x.len());
        self.eval_into(x.as_slice(), out.as_mut_slice());
        out
    }

    /// Balls covering the support.
    pub fn support_balls(&self) -> Vec<(Vec<f64>, f64)> {
        match self {
            TestFunction::Bumps { bumps } => bumps.iter().map(|b| (b.center.clone(), b.radius)).collect(),
            TestFunction::FieldPair { base, other } => {
                if let (None, Some(p)) = (&base.perturbation, &other.perturbation) {
                    let mut stripped = (**other).clone();
                    stripped.perturbation = None;
                    if stripped == **base {
                        let (c, r) = p.potential.support();
                        return vec![(c.to_vec(), r)];
                    }
                }
                vec![(base.domain.center.clone(), base.domain.inner_radius())]
            }
        }
    }

    /// Smallest support radius; used to cap integrator steps.
    pub fn feature_scale(&self) -> f64 {
        self.support_balls().iter().map(|b| b.1).fold(f64::INFINITY, f64::min)
    }

    /// Sampled `sup |f| + sup |Df|`.
    pub fn c1_norm(&self, domain: &Domain) -> f64 {
        let d = domain.dim;
        let mut sup0: f64 = 0.0;
        let mut sup1: f64 = 0.0;
        let h = 1e-6;
        for (c, r) in self.support_balls() {
            for dir in quad::spiral_directions(d, 64).unwrap_or_default().iter() {
                for k in 0..8 {
                    let rho = r * (k as f64 + 0.5) / 8.0;
                    let x = DVector::from_column_slice(&c) + dir * rho;
                    let v = self.eval(&x);
                    sup0 = sup0.max(v.norm());
                    let mut jac = DMatrix::zeros(2 * d, d);
                    for j in 0..d {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[j] += h;
                        xm[j] -= h;
                        jac.set_column(j, &((self.eval(&xp) - self.eval(&xm)) / (2.0 * h)));
                    }
                    sup1 = sup1.max(jac.norm());
                }
            }
        }
        sup0 + sup1
    }
}

/// Smooth cutoff on entering boundary covectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutoffAlpha {
    #[default]
    One,
    /// Product of plateau bumps in the embedding coordinates `(x0, xi0)` of `R^{2d}`.
    /// Axes with an infinite half width are unconstrained.
    Box { center: Vec<f64>, half_width: Vec<f64> },
}

impl CutoffAlpha {
    pub fn eval(&self, p0: &PhasePoint) -> f64 {
        match self {
            CutoffAlpha::One => 1.0,
            CutoffAlpha::Box { center, half_width } => {
                let z: Vec<f64> = p0.x.iter().chain(p0.xi.iter()).copied().collect();
                let mut v = 1.0;
                for i in 0..z.len() {
                    if half_width[i].is_finite() {
                        v *= smooth::plateau((z[i] - center[i]).abs() / half_width[i], 0.5).v;
                    }
                }
                v
            }
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if let CutoffAlpha::Box { center, half_width } = self {
            if center.len() != 2 * dim || half_width.len() != 2 * dim {
                return invalid("alpha box needs 2d coordinates");
            }
            if half_width.iter().any(|h| !(*h > 0.0)) {
                return invalid("alpha box half widths must be positive");
            }
        }
        Ok(())
    }
}

/// Quadrature node on the entering boundary set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanNode {
    pub p0: PhasePoint,
    /// Area element times `|<xi0, nu>|` times direction measure.
    pub weight: f64,
}

/// Product grid over boundary points and incoming directions (d = 2 or 3).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanGrid {
    pub nodes: Vec<FanNode>,
}

impl FanGrid {
    /// `n_boundary` controls the boundary rule, `n_dir` the incidence-angle rule.
    pub fn new(domain: &Domain, n_boundary: usize, n_dir: usize) -> Result<Self> {
        let d = domain.dim;
        let c = domain.center_vec();
        let bdry = SphereRule::new(d, n_boundary)?;
        let area_scale = domain.radius.powi(d as i32 - 1);
        let mut nodes = Vec::new();
        let (gx, gw) = quad::gauss_legendre(n_dir.max(1));
        for (nu, wb) in bdry.nodes.iter().zip(&bdry.weights) {
            let x0 = &c + nu * domain.radius;
            let tang = quad::orthonormal_complement(nu);
            match d {
                2 => {
                    // incidence angle beta in (-pi/2, pi/2)
                    for (xb, wbeta) in gx.iter().zip(&gw) {
                        let beta = 0.5 * std::f64::consts::PI * xb;
                        let v = -nu * beta.cos() + &tang[0] * beta.sin();
                        let w = wb * area_scale * wbeta * 0.5 * std::f64::consts::PI * beta.cos();
                        nodes.push(FanNode { p0: PhasePoint::new(x0.clone(), v), weight: w });
                    }
                }
                3 => {
                    // beta in (0, pi/2) with azimuth phi; measure cos(beta) sin(beta) dbeta dphi
                    let n_phi = 2 * n_dir.max(1);
                    for (xb, wbeta) in gx.iter().zip(&gw) {
                        let beta = 0.25 * std::f64::consts::PI * (xb + 1.0);
                        for k in 0..n_phi {
                            let phi = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n_phi as f64;
                            let v = -nu * beta.cos() + (&tang[0] * phi.cos() + &tang[1] * phi.sin()) * beta.sin();
                            let w = wb
                                * area_scale
                                * wbeta
                                * 0.25
                                * std::f64::consts::PI
                                * beta.cos()
                                * beta.sin()
                                * 2.0
                                * std::f64::consts::PI
                                / n_phi as f64;
                            nodes.push(FanNode { p0: PhasePoint::new(x0.clone(), v), weight: w });
                        }
                    }
                }
                _ => return Err(Error::Dimension(d)),
            }
        }
        Ok(FanGrid { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn source_of(f: &TestFunction) -> impl Fn(&[f64], &mut [f64]) + Sync + '_ {
    move |x: &[f64], out: &mut [f64]| f.eval_into(x, out)
}

/// `int_0^{l(p0)} Upsilon(s; p0) f(x(s)) ds` for an entering unit covector.
pub fn transform(field: &VelocityField, f: &TestFunction, p0: &PhasePoint, tol: &Tolerance) -> Result<DVector<f64>> {
    flow::check_entering(field, p0)?;
    f.validate(&field.domain)?;
    let src = source_of(f);
    let sys = WeightSystem { field, source: Some(&src) };
    let m = 2 * field.dim();
    let mut y0 = p0.to_state();
    for i in 0..m {
        for j in 0..m {
            y0.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    y0.extend(std::iter::repeat(0.0).take(m));
    // the support must not fall between two stages
    let tol = tol.with_max_step(tol.max_step.min(0.25 * f.feature_scale()));
    let ev = SphereEvent::boundary(&field.domain);
    let t_max = 1e3 * field.domain.radius;
    let (_sol, hit) = ode::solve_until(&sys, 0.0, &y0, t_max, &tol, &ev)?;
    let hit = hit.ok_or(Error::Trapped { t_max })?;
    Ok(DVector::from_column_slice(&hit.y[m + m * m..]))
}

/// `alpha(p0) * transform(p0)`.
pub fn transform_alpha(
    field: &VelocityField,
    f: &TestFunction,
    alpha: &CutoffAlpha,
    p0: &PhasePoint,
    tol: &Tolerance,
) -> Result<DVector<f64>> {
    alpha.validate(field.dim())?;
    let a = alpha.eval(p0);
    if a == 0.0 {
        flow::check_entering(field, p0)?;
        return Ok(DVector::zeros(2 * field.dim()));
    }
    Ok(transform(field, f, p0, tol)? * a)
}

/// Transform at every fan node.
pub fn transform_fan(
    field: &VelocityField,
    f: &TestFunction,
    alpha: &CutoffAlpha,
    fan: &FanGrid,
    tol: &Tolerance,
) -> Result<Vec<DVector<f64>>> {
    fan.nodes.par_iter().map(|n| transform_alpha(field, f, alpha, &n.p0, tol)).collect()
}

const T_MAX_FACTOR: f64 = 1e3;

fn t_max(field: &VelocityField) -> f64 {
    T_MAX_FACTOR * field.domain.radius
}

#[cfg(test)]
fn flip_blocks(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    // R M R with R = diag(I, -I)
    let mut out = m.clone();
    for i in 0..2 * d {
        for j in 0..2 * d {
            if (i < d) != (j < d) {
                out[(i, j)] = -out[(i, j)];
            }
        }
    }
    out
}

/// Kernel weight `W(x, xi)` (optionally with the `alpha` cutoff) by direct flows.
///
/// Terms whose endpoint `pi H^{+-1}` leaves the domain are dropped, matching
/// the convention that `f` vanishes there.
pub fn weight_w(
    field: &VelocityField,
    x: &DVector<f64>,
    xi: &DVector<f64>,
    alpha: Option<&CutoffAlpha>,
    tol: &Tolerance,
) -> Result<DMatrix<f64>> {
    let d = field.dim();
    let p = PhasePoint::new(x.clone(), xi.clone());
    let r = p.cnorm(field);
    if !(r > 0.0) {
        return invalid("weight W needs a non-zero covector");
    }
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    for sign in [1.0, -1.0] {
        let q = PhasePoint::new(x.clone(), xi * sign);
        let qb = q.normalized(field);
        let moved = flow::integrate(field, &q, sign, tol)?.end();
        if !field.domain.contains(moved.x.as_slice()) {
            continue;
        }
        let phi0 = linearize::weight_at(field, &qb, tol, t_max(field))?;
        let phi1 = linearize::weight_at(field, &moved.normalized(field), tol, t_max(field))?;
        let mut term = phi0.transpose() * phi1;
        if let Some(a) = alpha {
            let bt = flow::backtrace(field, &qb, tol, t_max(field))?;
            term *= a.eval(&bt.tau).powi(2);
        }
        out += term;
    }
    Ok(out * r.powi(1 - d as i32))
}

/// Quadrature settings for the normal operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalConfig {
    /// Angular resolution (points on a circle, or polar nodes on `S^2`).
    pub n_angular: usize,
    /// Gauss–Legendre nodes per radial sub-interval.
    pub n_radial: usize,
    /// Radial cap `T` on `|xi|`.
    pub t_cap: f64,
    /// Split radius; `None` picks `0.4 / max(1, max |grad c|)`.
    pub eps2: Option<f64>,
    pub tol: Tolerance,
    pub alpha: CutoffAlpha,
}

impl Default for NormalConfig {
    fn default() -> Self {
        NormalConfig {
            n_angular: 16,
            n_radial: 12,
            t_cap: 4.0,
            eps2: None,
            tol: Tolerance { atol: 1e-9, rtol: 1e-8, ..Tolerance::default() },
            alpha: CutoffAlpha::One,
        }
    }
}

pub fn default_eps2(field: &VelocityField) -> f64 {
    0.4 / field.max_gradient().max(1.0)
}

/// Near (`chi`-weighted) and far parts of the normal operator at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalSplit {
    pub n1: DVector<f64>,
    pub n2: DVector<f64>,
    /// Accumulated without the split.
    pub n: DVector<f64>,
}

impl NormalSplit {
    pub fn total(&self) -> DVector<f64> {
        self.n.clone()
    }
}

/// Intervals of `[0, len]` where the trajectory is inside one of the balls.
fn support_intervals(traj: &Trajectory, len: f64, balls: &[(Vec<f64>, f64)]) -> Vec<(f64, f64)> {
    let d = traj.dim;
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut buf = vec![0.0; traj.sol.dim()];
    for (c, r) in balls {
        let mut h = |s: f64| {
            traj.sol.eval_into(s, &mut buf);
            buf[..d].iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() - r
        };
        let n = ((len / (0.125 * r)).ceil() as usize).max(32);
        let ds = len / n as f64;
        let mut prev_s = 0.0;
        let mut prev = h(0.0);
        let mut open = if prev < 0.0 { Some(0.0) } else { None };
        for k in 1..=n {
            let s = ds * k as f64;
            let v = h(s);
            if (prev < 0.0) != (v < 0.0) {
                let (mut lo, mut hi) = (prev_s, s);
                let lo_inside = prev < 0.0;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if (h(mid) < 0.0) == lo_inside {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let root = 0.5 * (lo + hi);
                if lo_inside {
                    out.push((open.take().unwrap_or(0.0), root));
                } else {
                    open = Some(root);
                }
            }
            prev = v;
            prev_s = s;
        }
        if let Some(s0) = open {
            out.push((s0, len));
        }
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for iv in out {
        match merged.last_mut() {
            Some(last) if iv.0 <= last.1 => last.1 = last.1.max(iv.1),
            _ => merged.push(iv),
        }
    }
    merged
}

struct LineData {
    weight: WeightPath,
    a: f64,
    len: f64,
    ua: DMatrix<f64>,
    kmat: DMatrix<f64>,
    alpha_fwd: f64,
    alpha_rev: f64,
}

/// Normal operator parts at several points for several test functions at once.
///
/// Result is indexed `[point][function]`.
pub fn normal_split_many(
    field: &VelocityField,
    fs: &[TestFunction],
    points: &[DVector<f64>],
    cfg: &NormalConfig,
) -> Result<Vec<Vec<NormalSplit>>> {
    let d = field.dim();
    if d > 3 {
        return Err(Error::Dimension(d));
    }
    for f in fs {
        f.validate(&field.domain)?;
    }
    cfg.alpha.validate(d)?;
    let eps2 = cfg.eps2.unwrap_or_else(|| default_eps2(field));
    if !(eps2 > 0.0) {
        return invalid("eps2 must be positive");
    }
    let rule = SphereRule::new(d, cfg.n_angular)?;
    let balls: Vec<(Vec<f64>, f64)> = fs.iter().flat_map(|f| f.support_balls()).collect();
    points
        .par_iter()
        .map(|x| normal_at_point(field, fs, x, cfg, eps2, &rule, &balls))
        .collect()
}

fn normal_at_point(
    field: &VelocityField,
    fs: &[TestFunction],
    x: &DVector<f64>,
    cfg: &NormalConfig,
    eps2: f64,
    rule: &SphereRule,
    balls: &[(Vec<f64>, f64)],
) -> Result<Vec<NormalSplit>> {
    let d = field.dim();
    let m = 2 * d;
    if !field.domain.contains(x.as_slice()) {
        return invalid("evaluation point must lie inside the domain");
    }
    let mut acc: Vec<NormalSplit> =
        fs.iter().map(|_| NormalSplit { n1: DVector::zeros(m), n2: DVector::zeros(m), n: DVector::zeros(m) }).collect();
    let cx = field.c(x);
    let tmax = t_max(field);
    let (gx, gw) = quad::gauss_legendre(cfg.n_radial);
    let mut fval = DVector::zeros(m);
    let graded;
    let rule = match graded_rule(x, balls, cfg.n_angular)? {
        Some(r) => {
            graded = r;
            &graded
        }
        None => rule,
    };
    for i in 0..rule.len() {
        let j = rule.antipode[i];
        if j < i {
            continue;
        }
        let theta = PhasePoint::new(x.clone(), &rule.nodes[i] / cx);
        let bt = flow::backtrace(field, &theta, &cfg.tol, tmax)?;
        let (traj, rec) = flow::scattering_trajectory(field, &bt.tau, &cfg.tol, tmax)?;
        let a = -bt.l_minus;
        let len = rec.l;
        let ivs = support_intervals(&traj, len, balls);
        if ivs.is_empty() {
            continue;
        }
        let line = {
            let weight = linearize::integrate_weight(field, &bt.tau, len, &cfg.tol)?;
            let ul = weight.upsilon_end();
            let ul_inv = ul.clone().try_inverse().ok_or_else(|| Error::Singular("chord weight".into()))?;
            let kmat = ul_inv.transpose() * &ul_inv;
            let ua = weight.upsilon_at(a);
            let alpha_fwd = cfg.alpha.eval(&bt.tau);
            let alpha_rev = cfg.alpha.eval(&rec.exit.flipped());
            LineData { weight, a, len, ua, kmat, alpha_fwd, alpha_rev }
        };
        let w_node = rule.weights[i];
        debug_assert!((rule.weights[j] - w_node).abs() < 1e-12);

        let mut breaks = vec![line.a];
        for r in [eps2, 2.0 * eps2, cfg.t_cap] {
            breaks.push(line.a + r);
            breaks.push(line.a - r);
        }
        let lo_cap = (line.a - cfg.t_cap).max(0.0);
        let hi_cap = (line.a + cfg.t_cap).min(line.len);
        let mut y = vec![0.0; line.weight.sol.dim()];
        for &(s0, s1) in &ivs {
            let (s0, s1) = (s0.max(lo_cap), s1.min(hi_cap));
            if s1 <= s0 {
                continue;
            }
            let mut cuts = vec![s0];
            cuts.extend(breaks.iter().copied().filter(|b| *b > s0 && *b < s1));
            cuts.push(s1);
            cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
            for w in cuts.windows(2) {
                let half = 0.5 * (w[1] - w[0]);
                let mid = 0.5 * (w[1] + w[0]);
                for (xg, wg) in gx.iter().zip(&gw) {
                    let s = mid + half * xg;
                    let ws = w_node * half * wg;
                    line.weight.sol.eval_into(s, &mut y);
                    let us = line.weight.upsilon_from(&y);
                    let sigma = s - line.a;
                    let chi = smooth::chi(sigma.abs(), eps2);
                    let (a1, a2) = if sigma >= 0.0 {
                        (line.alpha_fwd, line.alpha_rev)
                    } else {
                        (line.alpha_rev, line.alpha_fwd)
                    };
                    let (a1, a2) = (a1 * a1, a2 * a2);
                    for (k, f) in fs.iter().enumerate() {
                        f.eval_into(&y[..d], fval.as_mut_slice());
                        if fval.iter().all(|v| *v == 0.0) {
                            continue;
                        }
                        let u = &us * &fval;
                        let mut rf = fval.clone();
                        rf.rows_mut(d, d).neg_mut();
                        let v = &line.kmat * (&us * rf);
                        let mut t2 = line.ua.transpose() * v;
                        t2.rows_mut(d, d).neg_mut();
                        let term = line.ua.transpose() * u * a1 + t2 * a2;
                        acc[k].n1 += &term * (ws * chi);
                        acc[k].n2 += &term * (ws * (1.0 - chi));
                        acc[k].n += &term * ws;
                    }
                }
            }
        }
    }
    Ok(acc)
}

/// Angular rule refined around a single support ball seen from outside.
fn graded_rule(x: &DVector<f64>, balls: &[(Vec<f64>, f64)], n: usize) -> Result<Option<SphereRule>> {
    if balls.len() != 1 {
        return Ok(None);
    }
    let (c, r) = &balls[0];
    let to_c = DVector::from_column_slice(c) - x;
    let dist = to_c.norm();
    if dist <= 1.25 * r {
        return Ok(None);
    }
    let cap = ((r / dist).asin() * 1.5 + 0.1).min(1.2);
    SphereRule::graded(&to_c, cap, n.div_ceil(2), n.div_ceil(3)).map(Some)
}

/// `N f` at each point.
pub fn normal_apply(
    field: &VelocityField,
    f: &TestFunction,
    points: &[DVector<f64>],
    cfg: &NormalConfig,
) -> Result<Vec<DVector<f64>>> {
    let parts = normal_split_many(field, std::slice::from_ref(f), points, cfg)?;
    Ok(parts.into_iter().map(|mut v| v.remove(0).total()).collect())
}

/// `(N1 f, N2 f)` at each point.
pub fn normal_split(
    field: &VelocityField,
    f: &TestFunction,
    points: &[DVector<f64>],
    cfg: &NormalConfig,
) -> Result<Vec<NormalSplit>> {
    let parts = normal_split_many(field, std::slice::from_ref(f), points, cfg)?;
    Ok(parts.into_iter().map(|mut v| v.remove(0)).collect())
}

/// Tensor quadrature on a ball: `n` radial Gauss nodes times an `n x n` angular
/// product (Gauss in `cos`, trapezoid in azimuth) for d = 3, `n x n` for d = 2.
pub fn ball_rule(center: &[f64], radius: f64, n: usize) -> Result<Vec<(DVector<f64>, f64)>> {
    let d = center.len();
    let c = DVector::from_column_slice(center);
    let radial = quad::gauss_legendre_on(n, 0.0, radius);
    let mut out = Vec::new();
    match d {
        2 => {
            for (rho, wr) in &radial {
                for k in 0..n {
                    let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
                    let dir = DVector::from_vec(vec![a.cos(), a.sin()]);
                    out.push((&c + dir * *rho, wr * rho * 2.0 * std::f64::consts::PI / n as f64));
                }
            }
        }
        3 => {
            let (cz, wz) = quad::gauss_legendre(n);
            for (rho, wr) in &radial {
                for (z, w_z) in cz.iter().zip(&wz) {
                    let sz = (1.0 - z * z).sqrt();
                    for k in 0..n {
                        let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
                        let dir = DVector::from_vec(vec![sz * a.cos(), sz * a.sin(), *z]);
                        out.push((
                            &c + dir * *rho,
                            wr * rho * rho * w_z * 2.0 * std::f64::consts::PI / n as f64,
                        ));
                    }
                }
            }
        }
        _ => return Err(Error::Dimension(d)),
    }
    Ok(out)
}

/// Inner-product symmetry of the normal operator for one pair of bump functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub nf_g: f64,
    pub f_ng: f64,
    pub relative_gap: f64,
    /// `max |N1 + N2 - N|` over all evaluated points.
    pub partition_gap: f64,
}

/// Compares `<N f, g>` with `<f, N g>` using `ball_rule(n_grid)` on each support
/// ball and the volume form `c^{-d} dx`.
pub fn symmetry_check(
    field: &VelocityField,
    f: &TestFunction,
    g: &TestFunction,
    n_grid: usize,
    cfg: &NormalConfig,
) -> Result<SymmetryReport> {
    let d = field.dim();
    let rule_on = |tf: &TestFunction| -> Result<Vec<(DVector<f64>, f64)>> {
        let mut pts = Vec::new();
        for (c, r) in tf.support_balls() {
            pts.extend(ball_rule(&c, r, n_grid)?);
        }
        Ok(pts)
    };
    let gpts = rule_on(g)?;
    let fpts = rule_on(f)?;
    let xs_g: Vec<DVector<f64>> = gpts.iter().map(|p| p.0.clone()).collect();
    let xs_f: Vec<DVector<f64>> = fpts.iter().map(|p| p.0.clone()).collect();
    let at_g = normal_split_many(field, std::slice::from_ref(f), &xs_g, cfg)?;
    let at_f = normal_split_many(field, std::slice::from_ref(g), &xs_f, cfg)?;
    let vol = |x: &DVector<f64>| field.c(x).powi(-(d as i32));
    let mut nf_g = 0.0;
    let mut partition_gap: f64 = 0.0;
    for ((x, w), parts) in gpts.iter().zip(&at_g) {
        let n = parts[0].total();
        nf_g += w * vol(x) * n.dot(&g.eval(x));
        partition_gap = partition_gap.max((&parts[0].n1 + &parts[0].n2 - &n).amax());
    }
    let mut f_ng = 0.0;
    for ((x, w), parts) in fpts.iter().zip(&at_f) {
        f_ng += w * vol(x) * parts[0].total().dot(&f.eval(x));
    }
    let scale = nf_g.abs().max(f_ng.abs());
    let relative_gap = if scale > 0.0 { (nf_g - f_ng).abs() / scale } else { 0.0 };
    Ok(SymmetryReport { nf_g, f_ng, relative_gap, partition_gap })
}

/// Principal symbol of the near-diagonal part at `(x, xi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolRecord {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub min_eig: f64,
    pub symmetric_positive_definite: bool,
    /// The cutoff vanishes on every sampled direction orthogonal to `xi`.
    pub support_empty: bool,
}

/// `2 pi c(x)^2 int_{theta perp xi} |alpha#|^2 Phi^T Phi` over an explicit frame of `xi^perp`.
pub fn symbol_n1(
    field: &VelocityField,
    x: &DVector<f64>,
    xi: &DVector<f64>,
    alpha: &CutoffAlpha,
    n_nodes: usize,
    tol: &Tolerance,
) -> Result<SymbolRecord> {
    let d = field.dim();
    if xi.norm() == 0.0 {
        return invalid("symbol needs a non-zero covector");
    }
    let frame = quad::orthonormal_complement(xi);
    let sub = SphereRule::new(d - 1, n_nodes)?;
    let cx = field.c(x);
    let m = 2 * d;
    let mut acc = DMatrix::zeros(m, m);
    let mut any = false;
    for (u, w) in sub.nodes.iter().zip(&sub.weights) {
        let mut omega = DVector::zeros(d);
        for (k, b) in frame.iter().enumerate() {
            omega += b * u[k];
        }
        let theta = PhasePoint::new(x.clone(), omega / cx);
        let bt = flow::backtrace(field, &theta, tol, t_max(field))?;
        let a = alpha.eval(&bt.tau);
        if a == 0.0 {
            continue;
        }
        any = true;
        let phi = if bt.l_minus == 0.0 {
            DMatrix::identity(m, m)
        } else {
            linearize::integrate_weight(field, &bt.tau, -bt.l_minus, tol)?.upsilon_end()
        };
        acc += phi.transpose() * phi * (w * a * a);
    }
    acc *= 2.0 * std::f64::consts::PI * cx * cx;
    let sym = (&acc + acc.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min_eig = ev[0];
    let asym = (&acc - acc.transpose()).amax();
    Ok(SymbolRecord {
        matrix: sym,
        eigenvalues: ev,
        min_eig,
        symmetric_positive_definite: any && min_eig > 0.0 && asym <= 1e-12 * acc.amax().max(1.0),
        support_empty: !any,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Domain;

    fn lens() -> VelocityField {
        VelocityField::gaussian_lens(Domain::unit_ball(3), 0.3, 0.5).unwrap()
    }

    #[test]
    fn fan_weights_integrate_santalo_measure() {
        // total measure of entering directions: area(S^2) * pi for the unit ball
        let fan = FanGrid::new(&Domain::unit_ball(3), 6, 6).unwrap();
        let total: f64 = fan.nodes.iter().map(|n| n.weight).sum();
        let expect = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
        assert!((total - expect).abs() < 1e-7 * expect, "{total}");
        let fan2 = FanGrid::new(&Domain::unit_ball(2), 8, 8).unwrap();
        let total2: f64 = fan2.nodes.iter().map(|n| n.weight).sum();
        assert!((total2 - 4.0 * std::f64::consts::PI).abs() < 1e-7, "{total2}");
    }

    #[test]
    fn alpha_box_range() {
        let a = CutoffAlpha::Box { center: vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0], half_width: vec![0.5; 6] };
        let inside = PhasePoint::from_slices(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]);
        let outside = PhasePoint::from_slices(&[-1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
        assert_eq!(a.eval(&inside), 1.0);
        assert_eq!(a.eval(&outside), 0.0);
    }

    #[test]
    fn reversal_identity_matches_direct_weights() {
        // W from the single-line formula equals the direct definition
        let f = lens();
        let tol = Tolerance::default();
        let x = DVector::from_vec(vec![0.1, -0.2, 0.15]);
        let omega = DVector::from_vec(vec![0.3, 0.8, -0.2]).normalize();
        let r = 0.45;
        let xi = &omega / f.c(&x) * r;
        let direct = weight_w(&f, &x, &xi, None, &tol).unwrap();

        let theta = PhasePoint::new(x.clone(), &omega / f.c(&x));
        let bt = flow::backtrace(&f, &theta, &tol, 100.0).unwrap();
        let rec = flow::scattering_relation(&f, &bt.tau, &tol, 100.0).unwrap();
        let path = linearize::integrate_weight(&f, &bt.tau, rec.l, &tol).unwrap();
        let a = -bt.l_minus;
        let ul_inv = path.upsilon_end().try_inverse().unwrap();
        let k = ul_inv.transpose() * &ul_inv;
        let ua = path.upsilon_at(a);
        let us = path.upsilon_at(a + r);
        let t1 = ua.transpose() * &us;
        let t2 = flip_blocks(&(ua.transpose() * k * us), 3);
        let via_line = (t1 + t2) * r.powi(-2);
        assert!((direct - via_line).amax() < 1e-6);
    }

    #[test]
    fn symbol_is_positive_definite() {
        let f = lens();
        let x = DVector::from_vec(vec![0.2, 0.1, -0.3]);
        let xi = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        let s = symbol_n1(&f, &x, &xi, &CutoffAlpha::One, 12, &Tolerance::default()).unwrap();
        assert!(s.symmetric_positive_definite && s.min_eig > 0.0);
    }

    #[test]
    fn empty_alpha_support_is_flagged() {
        let f = lens();
        let alpha = CutoffAlpha::Box { center: vec![5.0; 6], half_width: vec![0.1; 6] };
        let x = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let s = symbol_n1(&f, &x, &DVector::from_vec(vec![1.0, 0.0, 0.0]), &alpha, 8, &Tolerance::default()).unwrap();
        assert!(s.support_empty && !s.symmetric_positive_definite);
    }
}
