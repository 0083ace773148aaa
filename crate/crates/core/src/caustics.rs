//! The Lagrangian map `phi(x, xi) = pi H^1(x, xi)`, its Jacobian, caustic
//! census along rays, fold classification and complete-set search.
//!
//! Jacobians are taken with respect to the metric-normalized covector
//! `eta = c(x) xi`, so that `dphi(x, 0) = c(x) I`.

use nalgebra::{DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::VelocityField;
use crate::flow::{self, PhasePoint};
use crate::ode::{self, DenseSolution, OdeSystem, Tolerance};
use crate::quad;

/// Hamiltonian flow with the `2d x d` block `d(x, xi)(t) / d xi(0)`.
pub struct VariationalSystem<'a> {
    pub field: &'a VelocityField,
}

impl OdeSystem for VariationalSystem<'_> {
    fn dim(&self) -> usize {
        let d = self.field.dim();
        2 * d + 2 * d * d
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.field.dim();
        let m = 2 * d;
        let (x, xi) = (&y[..d], &y[d..m]);
        let mut g = [0.0; 8];
        let mut h = [0.0; 64];
        let c = self.field.eval_into(x, &mut g[..d], &mut h[..d * d]);
        let c2 = c * c;
        let xi2: f64 = xi.iter().map(|v| v * v).sum();
        for i in 0..d {
            dy[i] = c2 * xi[i];
            dy[d + i] = -c * g[i] * xi2;
        }
        // Y' = J Y, Y stored row-major as 2d rows of d columns
        let yv = &y[m..];
        let dyv = &mut dy[m..];
        for col in 0..d {
            let gx: f64 = (0..d).map(|k| g[k] * yv[k * d + col]).sum();
            let xiv: f64 = (0..d).map(|k| xi[k] * yv[(d + k) * d + col]).sum();
            let gdx: f64 = gx;
            for i in 0..d {
                let hx: f64 = (0..d).map(|k| h[i * d + k] * yv[k * d + col]).sum();
                dyv[i * d + col] = 2.0 * c * xi[i] * gx + c2 * yv[(d + i) * d + col];
                dyv[(d + i) * d + col] = -xi2 * (g[i] * gdx + c * hx) - 2.0 * c * g[i] * xiv;
            }
        }
    }
}

fn variational_state(x: &[f64], xi: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut y = Vec::with_capacity(2 * d + 2 * d * d);
    y.extend_from_slice(x);
    y.extend_from_slice(xi);
    y.extend(std::iter::repeat(0.0).take(d * d));
    for i in 0..d {
        for j in 0..d {
            y.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    y
}

fn position_block(y: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, &y[2 * d..2 * d + d * d])
}

/// Tolerance used for Jacobians that feed root polishing and classification.
pub fn tight_tolerance() -> Tolerance {
    Tolerance { atol: 1e-13, rtol: 1e-12, ..Tolerance::default() }
}

/// `pi H^1(x, xi)`.
pub fn phi(field: &VelocityField, x: &DVector<f64>, xi: &DVector<f64>, tol: &Tolerance) -> Result<DVector<f64>> {
    let p = PhasePoint::new(x.clone(), xi.clone());
    Ok(flow::integrate(field, &p, 1.0, tol)?.end().x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianRecord {
    pub xi: DVector<f64>,
    pub dphi: DMatrix<f64>,
    pub det: f64,
    pub sigma_min: f64,
}

impl JacobianRecord {
    fn new(xi: DVector<f64>, dphi: DMatrix<f64>) -> Self {
        let det = dphi.determinant();
        let sigma_min = dphi.singular_values().min();
        JacobianRecord { xi, dphi, det, sigma_min }
    }
}

/// Jacobian of `phi(x, .)` at the covector `xi`, with respect to `eta = c(x) xi`.
pub fn dphi(field: &VelocityField, x: &DVector<f64>, xi: &DVector<f64>, tol: &Tolerance) -> Result<JacobianRecord> {
    let d = field.dim();
    if x.len() != d || xi.len() != d {
        return Err(Error::Dimension(x.len()));
    }
    let y0 = variational_state(x.as_slice(), xi.as_slice());
    let sol = ode::solve(&VariationalSystem { field }, 0.0, &y0, 1.0, tol)?;
    let j = position_block(sol.y_end(), d) / field.c(x);
    Ok(JacobianRecord::new(xi.clone(), j))
}

/// Central-difference Jacobian of `phi(x, eta / c(x))` in `eta`.
pub fn dphi_fd(field: &VelocityField, x: &DVector<f64>, xi: &DVector<f64>, h: f64, tol: &Tolerance) -> Result<DMatrix<f64>> {
    let d = field.dim();
    let c = field.c(x);
    let mut j = DMatrix::zeros(d, d);
    for k in 0..d {
        let mut xp = xi.clone();
        let mut xm = xi.clone();
        xp[k] += h / c;
        xm[k] -= h / c;
        let col = (phi(field, x, &xp, tol)? - phi(field, x, &xm, tol)?) / (2.0 * h);
        j.set_column(k, &col);
    }
    Ok(j)
}

/// A map `eta -> phi(eta)` with a Jacobian; lets the classifier run on synthetic normal forms.
pub trait LagrangianMap: Sync {
    fn dim(&self) -> usize;
    fn jacobian(&self, eta: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// `phi(x, .)` of a velocity field at a fixed base point.
pub struct ExpMap<'a> {
    pub field: &'a VelocityField,
    pub x: DVector<f64>,
    pub tol: Tolerance,
}

impl ExpMap<'_> {
    pub fn eta_of(&self, xi: &DVector<f64>) -> DVector<f64> {
        xi * self.field.c(&self.x)
    }
}

impl LagrangianMap for ExpMap<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn jacobian(&self, eta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let xi = eta / self.field.c(&self.x);
        Ok(dphi(self.field, &self.x, &xi, &self.tol)?.dphi)
    }
}

/// `(xi_1^2, xi_2, ..., xi_d)`.
pub struct FoldNormalForm {
    pub dim: usize,
}

impl LagrangianMap for FoldNormalForm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jacobian(&self, eta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::identity(self.dim, self.dim);
        j[(0, 0)] = 2.0 * eta[0];
        Ok(j)
    }
}

/// `(xi_1^3 + xi_2 xi_1, xi_2, ..., xi_d)`.
pub struct CuspNormalForm {
    pub dim: usize,
}

impl LagrangianMap for CuspNormalForm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jacobian(&self, eta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::identity(self.dim, self.dim);
        j[(0, 0)] = 3.0 * eta[0] * eta[0] + eta[1];
        j[(0, 1)] = eta[0];
        Ok(j)
    }
}

/// Sign-change bracket (or near-double root) of `t -> det dphi(x, t theta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusRoot {
    pub t: f64,
    /// Covector `t theta` with `theta` on the unit cosphere.
    pub xi: DVector<f64>,
    pub det: f64,
    pub bracket: (f64, f64),
    pub sign_change: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusConfig {
    pub t_max: f64,
    pub n_steps: usize,
    /// `|det|` below which a bracket without sign change is flagged.
    pub double_root_tol: f64,
}

impl Default for CensusConfig {
    fn default() -> Self {
        CensusConfig { t_max: 2.5, n_steps: 400, double_root_tol: 1e-8 }
    }
}

fn det_from_dense(sol: &DenseSolution, t: f64, c: f64, d: usize, buf: &mut [f64]) -> f64 {
    sol.eval_into(t, buf);
    (position_block(buf, d) / (t * c)).determinant()
}

/// Scans `det dphi(x, t theta)` for `t` in `[-t_max, t_max]`; `direction` is a
/// Euclidean direction, normalized onto the cosphere internally.
pub fn ray_census(
    field: &VelocityField,
    x: &DVector<f64>,
    direction: &DVector<f64>,
    cfg: &CensusConfig,
    tol: &Tolerance,
) -> Result<Vec<CensusRoot>> {
    let d = field.dim();
    if !(cfg.t_max > 0.0) || cfg.n_steps < 2 {
        return invalid("census needs t_max > 0 and at least two steps");
    }
    let c = field.c(x);
    let theta = direction.normalize() / c;
    let y0 = variational_state(x.as_slice(), theta.as_slice());
    let sys = VariationalSystem { field };
    let polish_tol = tight_tolerance();
    let mut out = Vec::new();
    for sign in [-1.0, 1.0] {
        let sol = ode::solve(&sys, 0.0, &y0, sign * cfg.t_max, tol)?;
        let mut buf = vec![0.0; sys.dim()];
        let n = cfg.n_steps;
        let ts: Vec<f64> = (1..=n).map(|k| sign * cfg.t_max * k as f64 / n as f64).collect();
        let dets: Vec<f64> = ts.iter().map(|&t| det_from_dense(&sol, t, c, d, &mut buf)).collect();
        // det(t) -> c^d as t -> 0, so the scan starts from a positive value
        let mut prev_t = 0.0;
        let mut prev = c.powi(d as i32);
        for k in 0..n {
            let (t, v) = (ts[k], dets[k]);
            if (prev > 0.0) != (v > 0.0) {
                let root = polish_root(field, x, &theta, prev_t, t, &polish_tol)?;
                out.push(root);
            } else if k + 1 < n && v.abs() < cfg.double_root_tol && v.abs() <= prev.abs() && v.abs() <= dets[k + 1].abs() {
                out.push(CensusRoot { t, xi: &theta * t, det: v, bracket: (prev_t, ts[k + 1]), sign_change: false });
            }
            prev_t = t;
            prev = v;
        }
    }
    out.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    Ok(out)
}

fn direct_det(field: &VelocityField, x: &DVector<f64>, theta: &DVector<f64>, t: f64, tol: &Tolerance) -> Result<f64> {
    Ok(dphi(field, x, &(theta * t), tol)?.det)
}

/// Bisection with secant acceleration (Illinois variant) on directly integrated determinants.
fn polish_root(
    field: &VelocityField,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    t0: f64,
    t1: f64,
    tol: &Tolerance,
) -> Result<CensusRoot> {
    let (mut a, mut b) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
    let mut fa = if a == 0.0 { field.c(x).powi(field.dim() as i32) } else { direct_det(field, x, theta, a, tol)? };
    let mut fb = direct_det(field, x, theta, b, tol)?;
    let bracket = (a, b);
    if (fa > 0.0) == (fb > 0.0) {
        // the dense scan saw a sign change the direct evaluation does not confirm
        let (t, v) = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
        return Ok(CensusRoot { t, xi: theta * t, det: v, bracket, sign_change: false });
    }
    let mut side = 0;
    let (mut t, mut v) = (a, fa);
    for _ in 0..200 {
        t = (a * fb - b * fa) / (fb - fa);
        if !(t > a && t < b) {
            t = 0.5 * (a + b);
        }
        v = direct_det(field, x, theta, t, tol)?;
        if v == 0.0 || (b - a) < 1e-14 * b.abs().max(1.0) || v.abs() < 1e-13 {
            break;
        }
        if (v > 0.0) == (fb > 0.0) {
            b = t;
            fb = v;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = t;
            fa = v;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Ok(CensusRoot { t, xi: theta * t, det: v, bracket, sign_change: true })
}

/// Acceptance knobs for the fold test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldThresholds {
    pub sigma_small: f64,
    pub sigma_large: f64,
    pub transversality: f64,
    /// Central-difference step for the determinant gradient.
    pub grad_step: f64,
    /// Central-difference step for second differentials in the graph condition.
    pub graph_step: f64,
}

impl Default for FoldThresholds {
    fn default() -> Self {
        FoldThresholds { sigma_small: 1e-6, sigma_large: 1e-3, transversality: 0.1, grad_step: 1e-5, graph_step: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    /// Root in the map's own coordinates (`eta` for the exponential map).
    pub xi_star: DVector<f64>,
    pub det: f64,
    pub singular_values: Vec<f64>,
    pub kernel: DVector<f64>,
    pub det_gradient: DVector<f64>,
    pub transversality: f64,
    /// `sigma_{d-1} / sigma_d`.
    pub rank_gap: f64,
    pub graph_condition_rank: usize,
    pub corank_one: bool,
    pub is_fold: bool,
    /// Fold and full-rank graph condition.
    pub graph_condition: bool,
}

/// Fold test at a root of `det`.
pub fn classify_fold(map: &dyn LagrangianMap, eta: &DVector<f64>, th: &FoldThresholds) -> Result<FoldRecord> {
    let d = map.dim();
    let j = map.jacobian(eta)?;
    let det = j.determinant();
    let svd = SVD::new(j.clone(), true, true);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Singular("svd".into()))?;
    let kernel: DVector<f64> = v_t.row(order[d - 1]).transpose();
    let (s_last, s_prev) = (sv[d - 1], if d >= 2 { sv[d - 2] } else { f64::INFINITY });
    let rank_gap = if s_last > 0.0 { s_prev / s_last } else { f64::INFINITY };
    let corank_one = s_last < th.sigma_small && s_prev > th.sigma_large;

    let h = th.grad_step;
    let mut grad = DVector::zeros(d);
    for k in 0..d {
        let mut p = eta.clone();
        let mut m = eta.clone();
        p[k] += h;
        m[k] -= h;
        grad[k] = (map.jacobian(&p)?.determinant() - map.jacobian(&m)?.determinant()) / (2.0 * h);
    }
    let gn = grad.norm();
    let transversality = if gn > 0.0 { grad.dot(&kernel).abs() / gn } else { 0.0 };
    let is_fold = corank_one && transversality > th.transversality;

    // d^2 phi(N, v) for v spanning the tangent of {det = 0}
    let tangent = if gn > 0.0 { quad::orthonormal_complement(&grad) } else { Vec::new() };
    let mut graph = DMatrix::zeros(d, tangent.len());
    let hg = th.graph_step;
    for (k, v) in tangent.iter().enumerate() {
        let jp = map.jacobian(&(eta + v * hg))?;
        let jm = map.jacobian(&(eta - v * hg))?;
        graph.set_column(k, &((jp - jm) * &kernel / (2.0 * hg)));
    }
    let graph_condition_rank = if tangent.is_empty() {
        0
    } else {
        let gs = graph.singular_values();
        let top = gs.max();
        gs.iter().filter(|s| **s > 1e-6 * top.max(1.0)).count()
    };
    let graph_condition = is_fold && graph_condition_rank == d - 1;
    Ok(FoldRecord {
        xi_star: eta.clone(),
        det,
        singular_values: sv,
        kernel,
        det_gradient: grad,
        transversality,
        rank_gap,
        graph_condition_rank,
        corank_one,
        is_fold,
        graph_condition,
    })
}

/// Census along one direction together with the classification of each root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZSample {
    /// Euclidean unit direction; the cosphere covector is `theta / c(x)`.
    pub theta: DVector<f64>,
    pub roots: Vec<CensusRoot>,
    pub folds: Vec<FoldRecord>,
    pub admissible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletenessConfig {
    pub n_theta: usize,
    pub n_xi: usize,
    /// Coverage tolerance on `|<xi, theta>|`.
    pub cover_tol: f64,
    pub census: CensusConfig,
    pub fold: FoldThresholds,
    /// Require the graph condition at every fold (otherwise the fold test alone).
    pub require_graph_condition: bool,
    pub seed: u64,
}

impl Default for CompletenessConfig {
    fn default() -> Self {
        CompletenessConfig {
            n_theta: 64,
            n_xi: 400,
            cover_tol: 1e-2,
            census: CensusConfig::default(),
            fold: FoldThresholds::default(),
            require_graph_condition: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletenessCertificate {
    pub x: DVector<f64>,
    /// Kept directions; `Z` is this set together with the antipodes.
    pub z_samples: Vec<ZSample>,
    pub symmetrized: bool,
    pub coverage_gap: f64,
    /// Grid directions with no admissible orthogonal ray.
    pub uncovered: Vec<DVector<f64>>,
    pub n_rejected: usize,
    pub uses_folds: bool,
    pub passes: bool,
}

/// Census and classification for one direction. With `stop_early` the
/// classification ends at the first inadmissible root.
pub fn z_sample(
    field: &VelocityField,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    cfg: &CompletenessConfig,
    tol: &Tolerance,
    stop_early: bool,
) -> Result<ZSample> {
    let roots = ray_census(field, x, theta, &cfg.census, tol)?;
    let map = ExpMap { field, x: x.clone(), tol: tight_tolerance() };
    let mut folds = Vec::with_capacity(roots.len());
    let mut admissible = true;
    for r in &roots {
        if !r.sign_change {
            admissible = false;
            if stop_early {
                break;
            }
            continue;
        }
        let rec = classify_fold(&map, &map.eta_of(&r.xi), &cfg.fold)?;
        let ok = if cfg.require_graph_condition { rec.graph_condition } else { rec.is_fold };
        admissible &= ok;
        folds.push(rec);
        if stop_early && !admissible {
            break;
        }
    }
    Ok(ZSample { theta: theta.normalize(), roots, folds, admissible })
}

fn fibonacci_sphere(d: usize, n: usize) -> Result<Vec<DVector<f64>>> {
    quad::spiral_directions(d, n)
}

/// Greedy constructive search for a complete set of admissible rays through `x`.
pub fn complete_set_search(
    field: &VelocityField,
    x: &DVector<f64>,
    cfg: &CompletenessConfig,
    tol: &Tolerance,
) -> Result<CompletenessCertificate> {
    let d = field.dim();
    if cfg.n_theta < 2 * d {
        return invalid("n_theta must be at least 2d");
    }
    if !field.domain.contains(x.as_slice()) {
        return invalid("base point must lie in the domain");
    }
    let grid = fibonacci_sphere(d, cfg.n_xi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut kept: Vec<ZSample> = Vec::new();
    let mut uncovered = Vec::new();
    let mut n_rejected = 0;
    let batch = rayon::current_num_threads().max(1);
    for xi in &grid {
        if kept.iter().any(|z| z.theta.dot(xi).abs() < cfg.cover_tol) {
            continue;
        }
        let frame = quad::orthonormal_complement(xi);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let stride = coprime_stride(cfg.n_theta);
        let candidates: Vec<DVector<f64>> = (0..cfg.n_theta)
            .map(|i| {
                // spread consecutive trials over the circle
                let k = (i * stride) % cfg.n_theta;
                if d == 2 {
                    let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                    &frame[0] * s
                } else {
                    let a = phase + std::f64::consts::PI * k as f64 / cfg.n_theta as f64;
                    &frame[0] * a.cos() + &frame[1] * a.sin()
                }
            })
            .collect();
        let mut found = None;
        'outer: for chunk in candidates.chunks(batch) {
            let samples: Vec<ZSample> =
                chunk.par_iter().map(|th| z_sample(field, x, th, cfg, tol, true)).collect::<Result<_>>()?;
            for s in samples {
                if s.admissible {
                    found = Some(s);
                    break 'outer;
                }
                n_rejected += 1;
            }
            if d == 2 {
                break;
            }
        }
        match found {
            Some(s) => kept.push(s),
            None => uncovered.push(xi.clone()),
        }
    }
    let coverage_gap = coverage_gap(&grid, &kept);
    let uses_folds = kept.iter().any(|z| !z.folds.is_empty());
    let passes = uncovered.is_empty() && coverage_gap < cfg.cover_tol;
    Ok(CompletenessCertificate {
        x: x.clone(),
        z_samples: kept,
        symmetrized: true,
        coverage_gap,
        uncovered,
        n_rejected,
        uses_folds,
        passes,
    })
}

fn coprime_stride(n: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    let mut s = ((n as f64) * 0.618).round().max(1.0) as usize;
    while gcd(s, n) != 1 {
        s += 1;
    }
    s
}

/// `max_xi min_theta |<xi, theta>|`; antipodes give the same value.
pub fn coverage_gap(grid: &[DVector<f64>], z: &[ZSample]) -> f64 {
    grid.iter()
        .map(|xi| z.iter().map(|s| s.theta.dot(xi).abs()).fold(1.0, f64::min))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Domain;

    fn lens() -> VelocityField {
        VelocityField::gaussian_lens(Domain::unit_ball(3), 0.3, 0.5).unwrap()
    }

    #[test]
    fn dphi_at_zero_is_c_identity() {
        let f = lens();
        let x = DVector::from_vec(vec![0.1, 0.2, -0.1]);
        let r = dphi(&f, &x, &DVector::zeros(3), &Tolerance::default()).unwrap();
        let c = f.c(&x);
        assert!((r.dphi - DMatrix::identity(3, 3) * c).amax() < 1e-12);
        assert!((r.det - c.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn dphi_matches_finite_differences() {
        let f = lens();
        let tol = tight_tolerance();
        let x = DVector::from_vec(vec![-0.3, 0.1, 0.2]);
        let xi = DVector::from_vec(vec![1.1, -0.4, 0.3]);
        let a = dphi(&f, &x, &xi, &tol).unwrap().dphi;
        let b = dphi_fd(&f, &x, &xi, 1e-5, &tol).unwrap();
        assert!((&a - &b).amax() / a.amax() < 1e-7);
    }

    #[test]
    fn homogeneity_of_phi() {
        let f = lens();
        let tol = tight_tolerance();
        let x = DVector::from_vec(vec![0.2, -0.1, 0.0]);
        let theta = DVector::from_vec(vec![0.6, 0.8, 0.0]) / f.c(&x);
        for t in [0.5, 1.5] {
            let a = phi(&f, &x, &(&theta * t), &tol).unwrap();
            let b = flow::integrate(&f, &PhasePoint::new(x.clone(), theta.clone()), t, &tol).unwrap().end().x;
            assert!((a - b).amax() < 1e-10);
        }
    }

    #[test]
    fn constant_field_has_no_caustics() {
        let f = VelocityField::constant(Domain::unit_ball(3));
        let x = DVector::from_vec(vec![0.1, 0.0, 0.0]);
        let r = dphi(&f, &x, &DVector::from_vec(vec![0.3, 0.5, -0.2]), &Tolerance::default()).unwrap();
        assert!((r.dphi - DMatrix::identity(3, 3)).amax() < 1e-12);
        let census =
            ray_census(&f, &x, &DVector::from_vec(vec![0.0, 1.0, 0.0]), &CensusConfig::default(), &Tolerance::default())
                .unwrap();
        assert!(census.is_empty());
    }

    #[test]
    fn normal_forms() {
        let th = FoldThresholds::default();
        let fold = classify_fold(&FoldNormalForm { dim: 3 }, &DVector::zeros(3), &th).unwrap();
        assert!(fold.is_fold && fold.corank_one);
        assert!((fold.transversality - 1.0).abs() < 1e-12);
        let cusp = classify_fold(&CuspNormalForm { dim: 3 }, &DVector::zeros(3), &th).unwrap();
        assert!(cusp.corank_one && !cusp.is_fold);
        assert!(cusp.transversality < 1e-9);
    }
}
