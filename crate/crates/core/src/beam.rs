//! Gaussian beams for the degree-one Hamiltonian `G(x, xi) = c(x)|xi|`:
//! propagation, evaluation, wave-operator residuals, boundary jets,
//! reflection, frozen beams and their interaction integrals.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{Domain, Potential, VelocityField};
use crate::flow::{self, PhasePoint, SphereEvent};
use crate::ode::{self, DenseSolution, OdeSystem, Tolerance};
use crate::quad;
use crate::stats::{self, LineFit};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

const I: C64 = Complex { re: 0.0, im: 1.0 };

fn cmat(re: &DMatrix<f64>) -> CMatrix {
    re.map(|v| Complex::new(v, 0.0))
}

fn cvec(re: &DVector<f64>) -> DVector<C64> {
    re.map(|v| Complex::new(v, 0.0))
}

/// Smallest eigenvalue of the (symmetrized) imaginary part.
pub fn min_eig_im(m: &CMatrix) -> f64 {
    let im = m.map(|v| v.im);
    let sym = (&im + im.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamState {
    pub x: DVector<f64>,
    pub xi: DVector<f64>,
    pub m: CMatrix,
    /// Amplitude normalized to `a(0) = 1`; the beam carries the factor `lambda^{d/4}`.
    pub a: C64,
    pub t: f64,
}

impl BeamState {
    /// `M = i I`, `a = 1`.
    pub fn initial(x: DVector<f64>, xi: DVector<f64>, t: f64) -> Self {
        let d = x.len();
        BeamState { x, xi, m: CMatrix::identity(d, d) * I, a: Complex::new(1.0, 0.0), t }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    fn pack(&self) -> Vec<f64> {
        let d = self.dim();
        let mut y = Vec::with_capacity(2 * d + 2 * d * d + 2);
        y.extend(self.x.iter());
        y.extend(self.xi.iter());
        for i in 0..d {
            for j in 0..d {
                y.push(self.m[(i, j)].re);
            }
        }
        for i in 0..d {
            for j in 0..d {
                y.push(self.m[(i, j)].im);
            }
        }
        y.push(self.a.re);
        y.push(self.a.im);
        y
    }

    fn unpack(y: &[f64], d: usize, t: f64) -> Self {
        let x = DVector::from_column_slice(&y[..d]);
        let xi = DVector::from_column_slice(&y[d..2 * d]);
        let off = 2 * d;
        let m = CMatrix::from_fn(d, d, |i, j| Complex::new(y[off + i * d + j], y[off + d * d + i * d + j]));
        let a = Complex::new(y[off + 2 * d * d], y[off + 2 * d * d + 1]);
        BeamState { x, xi, m, a, t }
    }
}

/// Derivatives of `G` at `(x, xi)`.
struct GJet {
    g: f64,
    c: f64,
    gx: DVector<f64>,
    gxi: DVector<f64>,
    gxx: DMatrix<f64>,
    /// `d^2 G / dx_i dxi_j`.
    gxxi: DMatrix<f64>,
    gxixi: DMatrix<f64>,
}

fn g_jet(field: &VelocityField, x: &DVector<f64>, xi: &DVector<f64>) -> GJet {
    let d = x.len();
    let jet = field.eval(x);
    let r = xi.norm();
    let n = xi / r;
    let c = jet.v;
    GJet {
        g: c * r,
        c,
        gx: &jet.grad * r,
        gxi: &n * c,
        gxx: &jet.hess * r,
        gxxi: &jet.grad * n.transpose(),
        gxixi: (DMatrix::identity(d, d) - &n * n.transpose()) * (c / r),
    }
}

/// Time derivative of a beam state.
pub fn beam_rhs(field: &VelocityField, s: &BeamState) -> Result<BeamState> {
    if s.xi.norm() == 0.0 {
        return invalid("beam covector must be non-zero");
    }
    let j = g_jet(field, &s.x, &s.xi);
    let gxx = cmat(&j.gxx);
    let b = cmat(&j.gxxi);
    let gpp = cmat(&j.gxixi);
    let mdot = -(&gxx) - &b * &s.m - &s.m * b.transpose() - &s.m * &gpp * &s.m;
    let gxi_c = cvec(&j.gxi);
    let tr = s.m.trace();
    let quad = (gxi_c.transpose() * &s.m * &gxi_c)[(0, 0)];
    let adot = -s.a / (2.0 * j.g) * (tr * j.c * j.c - j.gx.dot(&j.gxi) - quad);
    Ok(BeamState { x: j.gxi.clone(), xi: -&j.gx, m: mdot, a: adot, t: 1.0 })
}

struct BeamSystem<'a> {
    field: &'a VelocityField,
}

impl OdeSystem for BeamSystem<'_> {
    fn dim(&self) -> usize {
        let d = self.field.dim();
        2 * d + 2 * d * d + 2
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.field.dim();
        let s = BeamState::unpack(y, d, t);
        match beam_rhs(self.field, &s) {
            Ok(ds) => dy.copy_from_slice(&ds.pack()),
            Err(_) => dy.iter_mut().for_each(|v| *v = f64::NAN),
        }
    }

    fn project(&self, y: &mut [f64]) -> f64 {
        let d = self.field.dim();
        let off = 2 * d;
        let mut drift: f64 = 0.0;
        for part in 0..2 {
            let base = off + part * d * d;
            for i in 0..d {
                for j in (i + 1)..d {
                    let (a, b) = (y[base + i * d + j], y[base + j * d + i]);
                    drift = drift.max((a - b).abs());
                    let m = 0.5 * (a + b);
                    y[base + i * d + j] = m;
                    y[base + j * d + i] = m;
                }
            }
        }
        drift
    }
}

/// Dense beam path, possibly made of a backward and a forward segment from a common start.
#[derive(Clone, Debug)]
pub struct BeamPath {
    pub dim: usize,
    segments: Vec<DenseSolution>,
    /// Smallest `min eig Im M` and largest `|M|` over accepted steps.
    pub im_floor: f64,
    pub m_ceiling: f64,
    /// Largest symmetrization correction applied.
    pub symmetry_drift: f64,
}

impl BeamPath {
    pub fn t_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.segments {
            lo = lo.min(s.t_start().min(s.t_end()));
            hi = hi.max(s.t_start().max(s.t_end()));
        }
        (lo, hi)
    }

    fn segment(&self, t: f64) -> Option<&DenseSolution> {
        self.segments.iter().find(|s| s.contains(t))
    }

    pub fn state_at(&self, t: f64) -> Result<BeamState> {
        let seg = self.segment(t).ok_or_else(|| Error::Invalid(format!("t = {t} outside the beam path")))?;
        Ok(BeamState::unpack(&seg.eval(t), self.dim, t))
    }

    pub fn step_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.segments.iter().flat_map(|s| s.step_times()).collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup();
        ts
    }
}

fn check_positive(s: &BeamState) -> Result<()> {
    let e = min_eig_im(&s.m);
    if !(e > 0.0) {
        return Err(Error::Integrator { t: s.t, reason: format!("Im M lost positivity (min eig {e:e})") });
    }
    Ok(())
}

fn scan_segment(sol: &DenseSolution, d: usize, path: &mut BeamPath) -> Result<()> {
    for t in sol.step_times() {
        let s = BeamState::unpack(&sol.eval(t), d, t);
        check_positive(&s)?;
        path.im_floor = path.im_floor.min(min_eig_im(&s.m));
        path.m_ceiling = path.m_ceiling.max(s.m.norm());
    }
    path.symmetry_drift = path.symmetry_drift.max(sol.max_projection);
    Ok(())
}

/// Integrates the beam system from `s0` over `[s0.t + t_back, s0.t + t_fwd]`
/// (`t_back <= 0 <= t_fwd`).
pub fn propagate_beam(
    field: &VelocityField,
    s0: &BeamState,
    t_back: f64,
    t_fwd: f64,
    tol: &Tolerance,
) -> Result<BeamPath> {
    let d = field.dim();
    if s0.dim() != d {
        return Err(Error::Dimension(s0.dim()));
    }
    if t_back > 0.0 || t_fwd < 0.0 {
        return invalid("beam span must contain its start time");
    }
    check_positive(s0)?;
    let sys = BeamSystem { field };
    let y0 = s0.pack();
    let mut path = BeamPath { dim: d, segments: Vec::new(), im_floor: f64::INFINITY, m_ceiling: 0.0, symmetry_drift: 0.0 };
    for span in [t_fwd, t_back] {
        if span == 0.0 && !path.segments.is_empty() {
            continue;
        }
        let sol = ode::solve(&sys, s0.t, &y0, s0.t + span, tol)?;
        scan_segment(&sol, d, &mut path)?;
        path.segments.push(sol);
    }
    Ok(path)
}

/// `lambda^{d/4} a(t) exp(i lambda tau(t, x))`.
pub fn eval_beam(path: &BeamPath, t: f64, x: &DVector<f64>, lambda: f64) -> Result<C64> {
    let s = path.state_at(t)?;
    Ok(eval_state(&s, x, lambda))
}

fn eval_state(s: &BeamState, x: &DVector<f64>, lambda: f64) -> C64 {
    let d = s.dim();
    let dx = cvec(&(x - &s.x));
    let tau = cvec(&s.xi).dot(&dx) + (dx.transpose() * &s.m * &dx)[(0, 0)] * 0.5;
    s.a * lambda.powf(d as f64 / 4.0) * (I * lambda * tau).exp()
}

/// `d/dt` of the beam vector field along itself by a central difference.
fn second_derivative(field: &VelocityField, s: &BeamState, ds: &BeamState) -> Result<BeamState> {
    let d = s.dim();
    let y = s.pack();
    let f = ds.pack();
    let scale = f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let h = 1e-4 / scale;
    let yp: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a + h * b).collect();
    let ym: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a - h * b).collect();
    let fp = beam_rhs(field, &BeamState::unpack(&yp, d, s.t))?.pack();
    let fm = beam_rhs(field, &BeamState::unpack(&ym, d, s.t))?.pack();
    let dd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    Ok(BeamState::unpack(&dd, d, s.t))
}

/// Time derivatives of the beam state up to second order, for closed-form ansatz derivatives.
struct BeamDerivs {
    s: BeamState,
    d1: BeamState,
    d2: BeamState,
}

fn beam_derivs(field: &VelocityField, path: &BeamPath, t: f64) -> Result<BeamDerivs> {
    let s = path.state_at(t)?;
    let d1 = beam_rhs(field, &s)?;
    let d2 = second_derivative(field, &s, &d1)?;
    Ok(BeamDerivs { s, d1, d2 })
}

/// `(c^-2 d_tt - Laplacian) g` at `(t, x)` from exact derivatives of the ansatz.
fn wave_residual(field: &VelocityField, bd: &BeamDerivs, x: &DVector<f64>, lambda: f64) -> C64 {
    let d = x.len();
    let BeamDerivs { s, d1, d2 } = bd;
    let norm = lambda.powf(d as f64 / 4.0);
    let (a, ad, add) = (s.a * norm, d1.a * norm, d2.a * norm);
    let dx = cvec(&(x - &s.x));
    let xi = cvec(&s.xi);
    let (xd, xdd) = (cvec(&d1.x), cvec(&d2.x));
    let (xid, xidd) = (cvec(&d1.xi), cvec(&d2.xi));
    let m = &s.m;
    let q = |v: &DVector<C64>, mm: &CMatrix, w: &DVector<C64>| (v.transpose() * mm * w)[(0, 0)];
    let tau = xi.dot(&dx) + q(&dx, m, &dx) * 0.5;
    let grad = &xi + m * &dx;
    let tau_t = xid.dot(&dx) - xi.dot(&xd) + q(&dx, &d1.m, &dx) * 0.5 - q(&xd, m, &dx);
    let tau_tt = xidd.dot(&dx) - xid.dot(&xd) * 2.0 - xi.dot(&xdd) + q(&dx, &d2.m, &dx) * 0.5
        - q(&xd, &d1.m, &dx) * 2.0
        - q(&xdd, m, &dx)
        + q(&xd, m, &xd);
    let c = field.c(x);
    let l = Complex::new(lambda, 0.0);
    let dtt = add + I * l * tau_t * ad * 2.0 + I * l * tau_tt * a - l * l * tau_t * tau_t * a;
    let lap = (I * l * m.trace() - l * l * grad.dot(&grad)) * a;
    (dtt / (c * c) - lap) * (I * l * tau).exp()
}

/// Space-time grid around a beam for residual scans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub n_times: usize,
    pub n_per_axis: usize,
    /// Box half-width along each eigenvector of `Im M`, in units of `1 / sqrt(lambda mu)`.
    pub radius_factor: f64,
}

impl Default for ResidualGrid {
    fn default() -> Self {
        ResidualGrid { t_start: 0.0, t_end: 2.0, n_times: 12, n_per_axis: 24, radius_factor: 6.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub lambda: f64,
    /// `max_t ||P g(t, .)||_{L^2}`.
    pub residual: f64,
    /// `max_t ||g(t, .)||_{L^2}`.
    pub beam_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualScan {
    pub records: Vec<ResidualRecord>,
    pub fit: LineFit,
}

/// Box around `center` aligned with the eigenframe of `Im M`, half-width
/// `factor / sqrt(lambda mu_k)` along each eigenvector.
fn beam_box(center: &DVector<f64>, m: &CMatrix, lambda: f64, factor: f64, n: usize) -> (Vec<DVector<f64>>, f64) {
    let d = center.len();
    let im = m.map(|v| v.im);
    let eig = SymmetricEigen::new((&im + im.transpose()) * 0.5);
    let steps: Vec<f64> = eig.eigenvalues.iter().map(|&mu| 2.0 * factor / (lambda * mu).sqrt() / n as f64).collect();
    let total = n.pow(d as u32);
    let pts = (0..total)
        .map(|mut idx| {
            let mut p = center.clone();
            for k in 0..d {
                let i = idx % n;
                idx /= n;
                let u = steps[k] * (i as f64 + 0.5 - 0.5 * n as f64);
                p += eig.eigenvectors.column(k) * u;
            }
            p
        })
        .collect();
    (pts, steps.iter().product())
}

/// Per-lambda residual norms of the wave operator applied to the beam, and their log-log slope.
pub fn residual_scan(field: &VelocityField, path: &BeamPath, lambdas: &[f64], grid: &ResidualGrid) -> Result<ResidualScan> {
    if lambdas.len() < 2 || grid.n_times == 0 || grid.n_per_axis < 2 {
        return invalid("residual scan needs two lambdas and a non-trivial grid");
    }
    let times: Vec<f64> = (0..grid.n_times)
        .map(|k| {
            if grid.n_times == 1 {
                grid.t_start
            } else {
                grid.t_start + (grid.t_end - grid.t_start) * k as f64 / (grid.n_times - 1) as f64
            }
        })
        .collect();
    let derivs: Vec<BeamDerivs> = times.iter().map(|&t| beam_derivs(field, path, t)).collect::<Result<_>>()?;
    let records: Vec<ResidualRecord> = lambdas
        .par_iter()
        .map(|&lambda| {
            let mut res: f64 = 0.0;
            let mut nrm: f64 = 0.0;
            for bd in &derivs {
                let (pts, w) = beam_box(&bd.s.x, &bd.s.m, lambda, grid.radius_factor, grid.n_per_axis);
                let mut r2 = 0.0;
                let mut g2 = 0.0;
                for p in &pts {
                    r2 += wave_residual(field, bd, p, lambda).norm_sqr() * w;
                    g2 += eval_state(&bd.s, p, lambda).norm_sqr() * w;
                }
                res = res.max(r2.sqrt());
                nrm = nrm.max(g2.sqrt());
            }
            ResidualRecord { lambda, residual: res, beam_norm: nrm }
        })
        .collect();
    let xs: Vec<f64> = records.iter().map(|r| r.lambda).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.residual).collect();
    let fit = stats::loglog_fit(&xs, &ys);
    Ok(ResidualScan { records, fit })
}

/// Orthographic chart `F(y) = center + U y + sqrt(R^2 - |y|^2) n` of the sphere near `x1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryChart {
    pub base: DVector<f64>,
    pub center: DVector<f64>,
    pub radius: f64,
    pub normal: DVector<f64>,
    /// Tangent basis, `d x (d - 1)`.
    pub tangent: DMatrix<f64>,
}

impl BoundaryChart {
    pub fn new(domain: &Domain, x1: &DVector<f64>) -> Result<Self> {
        let c = domain.center_vec();
        let r = (x1 - &c).norm();
        if (r - domain.radius).abs() > 1e-8 * domain.radius.max(1.0) {
            return Err(Error::NotOnBoundary(format!("chart base at radius {r}")));
        }
        let n = (x1 - &c) / r;
        let basis = quad::orthonormal_complement(&n);
        let tangent = DMatrix::from_columns(&basis);
        Ok(BoundaryChart { base: x1.clone(), center: c, radius: domain.radius, normal: n, tangent })
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    fn height(&self, y: &DVector<f64>) -> f64 {
        (self.radius * self.radius - y.norm_squared()).sqrt()
    }

    pub fn f(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.tangent * y + &self.normal * self.height(y)
    }

    /// Columns `dF/dy_k`.
    pub fn df(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let h = self.height(y);
        let mut j = self.tangent.clone();
        for k in 0..y.len() {
            let col = j.column(k) - &self.normal * (y[k] / h);
            j.set_column(k, &col);
        }
        j
    }

    /// `sum_k v_k d^2 F_k / dy dy` for a vector `v`.
    pub fn d2f_dot(&self, y: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let h = self.height(y);
        let nv = self.normal.dot(v);
        let k = y.len();
        // d^2 h / dy_i dy_j = -delta_ij / h - y_i y_j / h^3
        DMatrix::from_fn(k, k, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            nv * (-delta / h - y[i] * y[j] / (h * h * h))
        })
    }

    /// Chart coordinates of a point on the sphere (upper hemisphere about `normal`).
    pub fn inverse(&self, x: &DVector<f64>) -> DVector<f64> {
        self.tangent.transpose() * (x - &self.center)
    }
}

/// First and second `(t, y)`-derivatives of `tau(t, F(y))` at `(t1, y1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryJet {
    pub t1: f64,
    pub y1: DVector<f64>,
    pub value: C64,
    pub gradient: DVector<C64>,
    pub mhat: CMatrix,
}

/// Ray data at a state: `x'`, `xi'`, `x''`.
fn ray_rates(field: &VelocityField, x: &DVector<f64>, xi: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let j = g_jet(field, x, xi);
    let xd = j.gxi.clone();
    let xid = -&j.gx;
    let gxix = j.gxxi.transpose();
    let xdd = gxix * &xd + &j.gxixi * &xid;
    (xd, xid, xdd)
}

/// Jet of `tau_hat` for a beam state sitting at `x(t1) = F(y1)`.
fn jet_from_state(field: &VelocityField, s: &BeamState, chart: &BoundaryChart, y1: &DVector<f64>) -> BoundaryJet {
    let d = s.dim();
    let (xd, xid, xdd) = ray_rates(field, &s.x, &s.xi);
    let df = chart.df(y1);
    let dfc = cmat(&df);
    let m = &s.m;
    let mut grad = DVector::zeros(d);
    grad[0] = Complex::new(-s.xi.dot(&xd), 0.0);
    let gy = df.transpose() * &s.xi;
    for k in 0..d - 1 {
        grad[k + 1] = Complex::new(gy[k], 0.0);
    }
    let xdc = cvec(&xd);
    let mut mhat = CMatrix::zeros(d, d);
    let tt = (xdc.transpose() * m * &xdc)[(0, 0)] - 2.0 * xid.dot(&xd) - s.xi.dot(&xdd);
    mhat[(0, 0)] = tt;
    let ty = dfc.transpose() * (cvec(&xid) - m * &xdc);
    let yy = dfc.transpose() * m * &dfc + cmat(&chart.d2f_dot(y1, &s.xi));
    for k in 0..d - 1 {
        mhat[(0, k + 1)] = ty[k];
        mhat[(k + 1, 0)] = ty[k];
        for l in 0..d - 1 {
            mhat[(k + 1, l + 1)] = yy[(k, l)];
        }
    }
    let value = eval_phase(s, &chart.f(y1));
    BoundaryJet { t1: s.t, y1: y1.clone(), value, gradient: grad, mhat }
}

fn eval_phase(s: &BeamState, x: &DVector<f64>) -> C64 {
    let dx = cvec(&(x - &s.x));
    cvec(&s.xi).dot(&dx) + (dx.transpose() * &s.m * &dx)[(0, 0)] * 0.5
}

const MIN_INCIDENCE: f64 = 1e-6;

fn incidence(chart: &BoundaryChart, s: &BeamState) -> f64 {
    let nu = &s.x - &chart.center;
    s.xi.dot(&nu) / (nu.norm() * s.xi.norm())
}

/// `tau_hat` jet at `t1`, where the beam's ray must lie on the chart's sphere.
pub fn boundary_jet(field: &VelocityField, path: &BeamPath, chart: &BoundaryChart, t1: f64) -> Result<BoundaryJet> {
    let s = path.state_at(t1)?;
    jet_of_state(field, &s, chart)
}

pub fn jet_of_state(field: &VelocityField, s: &BeamState, chart: &BoundaryChart) -> Result<BoundaryJet> {
    let r = (&s.x - &chart.center).norm();
    if (r - chart.radius).abs() > 1e-8 {
        return Err(Error::NotOnBoundary(format!("beam ray at radius {r} at t = {}", s.t)));
    }
    if incidence(chart, s).abs() < MIN_INCIDENCE {
        return Err(Error::Grazing { rate: incidence(chart, s) });
    }
    let y1 = chart.inverse(&s.x);
    Ok(jet_from_state(field, s, chart, &y1))
}

/// Initial state of the reflected beam from the incident state at the hit.
pub fn reflect_state(field: &VelocityField, s: &BeamState, chart: &BoundaryChart) -> Result<BeamState> {
    let d = s.dim();
    let jet = jet_of_state(field, s, chart)?;
    let nu = (&s.x - &chart.center).normalize();
    let xi_r = &s.xi - &nu * (2.0 * s.xi.dot(&nu));
    let mut refl = BeamState { x: s.x.clone(), xi: xi_r, m: CMatrix::zeros(d, d), a: -s.a, t: s.t };
    // tau_hat^- Hessian = V^T M^- V + K^-, with V = [-x', dF]
    let base = jet_from_state(field, &refl, chart, &jet.y1);
    let (xd, _, _) = ray_rates(field, &refl.x, &refl.xi);
    let df = chart.df(&jet.y1);
    let mut v = DMatrix::zeros(d, d);
    v.set_column(0, &(-&xd));
    for k in 0..d - 1 {
        v.set_column(k + 1, &df.column(k));
    }
    let v_inv = v.try_inverse().ok_or_else(|| Error::Singular("reflection jet system".into()))?;
    let v_inv_c = cmat(&v_inv);
    let mut mr = v_inv_c.transpose() * (&jet.mhat - &base.mhat) * &v_inv_c;
    mr = (&mr + mr.transpose()) * Complex::new(0.5, 0.0);
    refl.m = mr;
    let e = min_eig_im(&refl.m);
    if !(e > 0.0) {
        return Err(Error::Integrator { t: s.t, reason: format!("reflected Im M not positive (min eig {e:e})") });
    }
    Ok(refl)
}

/// Incident beam entering at `p0` (an entering unit covector), started `eps1 / 4` before entry,
/// with the time `t1` at which it reaches the boundary again.
#[derive(Clone, Debug)]
pub struct BoundaryBeam {
    pub path: BeamPath,
    pub t1: f64,
    pub hit: BeamState,
    pub chart: BoundaryChart,
}

pub fn incident_beam(
    field: &VelocityField,
    p0: &PhasePoint,
    eps1: f64,
    window: f64,
    tol: &Tolerance,
) -> Result<BoundaryBeam> {
    flow::check_entering(field, p0)?;
    let back = flow::integrate(field, p0, -0.25 * eps1, tol)?.end();
    let s0 = BeamState::initial(back.x.clone(), back.xi.clone(), 0.0);
    let sys = BeamSystem { field };
    let ev = SphereEvent::boundary(&field.domain);
    let t_limit = 1e3 * field.domain.radius;
    let (_sol, hit) = ode::solve_until(&sys, 0.0, &s0.pack(), t_limit, tol, &ev)?;
    let hit = hit.ok_or(Error::Trapped { t_max: t_limit })?;
    let t1 = hit.t;
    let path = propagate_beam(field, &s0, 0.0, t1 + window, tol)?;
    let hit_state = path.state_at(t1)?;
    let chart = BoundaryChart::new(&field.domain, &snap(&field.domain, &hit_state.x))?;
    Ok(BoundaryBeam { path, t1, hit: hit_state, chart })
}

fn snap(domain: &Domain, x: &DVector<f64>) -> DVector<f64> {
    let c = domain.center_vec();
    &c + (x - &c) * (domain.radius / (x - &c).norm())
}

/// Reflected beam path over `[t1 - window, t1 + window]`.
pub fn reflect_beam(field: &VelocityField, bb: &BoundaryBeam, window: f64, tol: &Tolerance) -> Result<(BeamState, BeamPath)> {
    let s = reflect_state(field, &bb.hit, &bb.chart)?;
    let path = propagate_beam(field, &s, -window, window, tol)?;
    Ok((s, path))
}

/// Frozen-amplitude beam `A exp(i lambda (p . z + z^T Mhat z / 2))`, `z = (t - t1, y - y1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenBeam {
    /// Amplitude at `lambda = 1`; scaled by `lambda^{d/4}`.
    pub amplitude: C64,
    pub t1: f64,
    pub y1: DVector<f64>,
    pub gradient: DVector<f64>,
    pub mhat: CMatrix,
}

impl FrozenBeam {
    pub fn from_jet(amplitude: C64, jet: &BoundaryJet) -> Self {
        FrozenBeam {
            amplitude,
            t1: jet.t1,
            y1: jet.y1.clone(),
            gradient: jet.gradient.map(|v| v.re),
            mhat: jet.mhat.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    fn offset(&self) -> DVector<f64> {
        let d = self.dim();
        let mut z = DVector::zeros(d);
        z[0] = self.t1;
        for k in 0..d - 1 {
            z[k + 1] = self.y1[k];
        }
        z
    }

    pub fn eval(&self, t: f64, y: &DVector<f64>, lambda: f64) -> C64 {
        let d = self.dim();
        let mut z = DVector::zeros(d);
        z[0] = t - self.t1;
        for k in 0..d - 1 {
            z[k + 1] = y[k] - self.y1[k];
        }
        let zc = cvec(&z);
        let phase = cvec(&self.gradient).dot(&zc) + (zc.transpose() * &self.mhat * &zc)[(0, 0)] * 0.5;
        self.amplitude * lambda.powf(d as f64 / 4.0) * (I * lambda * phase).exp()
    }

    /// `(p, q, r)` with `phase(w) = w^T q w / 2 + p . w + r` in absolute coordinates `w = (t, y)`.
    fn absolute_phase(&self) -> (DVector<C64>, CMatrix, C64) {
        let z0 = cvec(&self.offset());
        let q = self.mhat.clone();
        let p = cvec(&self.gradient) - &q * &z0;
        let r = -cvec(&self.gradient).dot(&z0) + (z0.transpose() * &q * &z0)[(0, 0)] * 0.5;
        (p, q, r)
    }
}

/// `int exp(-w^T Q w / 2 + b . w + c) dw` over `R^n` for complex symmetric `Q` with `Re Q > 0`.
pub fn complex_gaussian_integral(q: &CMatrix, b: &DVector<C64>, c: C64) -> Result<C64> {
    let n = q.nrows();
    let re = q.map(|v| v.re);
    let re_min = SymmetricEigen::new((&re + re.transpose()) * 0.5).eigenvalues.min();
    if !(re_min > 0.0) {
        return invalid("combined real part is not positive definite");
    }
    let qinv = q.clone().try_inverse().ok_or_else(|| Error::Singular("gaussian form".into()))?;
    let eig = Schur::new(q.clone()).eigenvalues().ok_or_else(|| Error::Singular("gaussian eigenvalues".into()))?;
    // principal branch of each eigenvalue root; valid since all have positive real part
    let mut det_inv_sqrt = Complex::new(1.0, 0.0);
    for e in eig.iter() {
        det_inv_sqrt /= e.sqrt();
    }
    let expo = (b.transpose() * &qinv * b)[(0, 0)] * 0.5 + c;
    Ok(det_inv_sqrt * (2.0 * std::f64::consts::PI).powf(n as f64 / 2.0) * expo.exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub value: C64,
    /// Upper bound on the part of the integral outside the window.
    pub truncation_bound: f64,
}

/// Time-and-chart window `|t - t1| <= half_time`, `|y| <= half_y` of a reference beam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_center: f64,
    pub half_time: f64,
    pub half_y: f64,
}

/// `<B, A> = int A conj(B) dt dy` over `R^d`, with a bound on the mass outside `window`.
pub fn interaction(a: &FrozenBeam, b: &FrozenBeam, lambda: f64, window: &Window) -> Result<InteractionRecord> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::Dimension(b.dim()));
    }
    let (pa, qa, ra) = a.absolute_phase();
    let (pb, qb, rb) = b.absolute_phase();
    let l = Complex::new(lambda, 0.0);
    // exponent i lambda (phi_a - conj phi_b)
    let q = -(qa - qb.map(|v| v.conj())) * I * l;
    let bvec = (pa - pb.map(|v| v.conj())) * I * l;
    let c = (ra - rb.conj()) * I * l;
    let amp = a.amplitude * b.amplitude.conj() * lambda.powf(d as f64 / 2.0);
    let value = amp * complex_gaussian_integral(&q, &bvec, c)?;

    // |integrand| = |amp| exp(-w^T P w / 2 + beta . w + gamma)
    let p = q.map(|v| v.re);
    let p = (&p + p.transpose()) * 0.5;
    let beta = bvec.map(|v| v.re);
    let mu = SymmetricEigen::new(p.clone()).eigenvalues.min();
    let wstar = p.clone().try_inverse().ok_or_else(|| Error::Singular("window form".into()))? * &beta;
    let peak = amp.norm() * (0.5 * beta.dot(&wstar) + c.re).exp();
    let mut rho = window.half_time - (wstar[0] - window.t_center).abs();
    for k in 1..d {
        rho = rho.min(window.half_y - wstar[k].abs());
    }
    let full = peak * (2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) / p.determinant().sqrt();
    let truncation_bound = if rho <= 0.0 { full } else { full * chi2_tail(d, mu * rho * rho) };
    Ok(InteractionRecord { value, truncation_bound })
}

/// Chernoff bound on `P(chi^2_k >= x)`.
fn chi2_tail(k: usize, x: f64) -> f64 {
    let k = k as f64;
    if x <= k {
        return 1.0;
    }
    let r = x / k;
    (r * (1.0 - r).exp()).powf(k / 2.0)
}

/// `|delta z| = |t1 - t1~|^2 + |dy|^2 + |tangential covector difference|^2` between two frozen beams.
pub fn delta_z(a: &FrozenBeam, b: &FrozenBeam) -> f64 {
    let dt = a.t1 - b.t1;
    let dy = &a.y1 - &b.y1;
    let dp = a.gradient.rows(1, a.dim() - 1) - b.gradient.rows(1, b.dim() - 1);
    dt * dt + dy.norm_squared() + dp.norm_squared()
}

/// `(lhs, rhs)` for the two-Gaussian overlap bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBound {
    pub lhs: f64,
    pub rhs: f64,
    /// Exponent form `E` with `Re(exponent) = -lambda (dx, dxi)^T E (dx, dxi)`.
    pub min_exponent_eig: f64,
}

/// Constants of the bound `C lambda^{-d/2} exp(-c3 lambda (|dx|^2 + |dxi|^2))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub big_c: f64,
    pub c3: f64,
}

fn overlap_form(
    m1: &DMatrix<f64>,
    m2: &DMatrix<f64>,
    n1: &DMatrix<f64>,
    n2: &DMatrix<f64>,
    dx: &DVector<f64>,
    dxi: &DVector<f64>,
    lambda: f64,
) -> (CMatrix, DVector<C64>, C64) {
    let a1 = cmat(m1) + cmat(n1) * I;
    let a2 = cmat(m2) + cmat(n2) * I;
    let l = Complex::new(lambda, 0.0);
    let q = (&a1 + &a2) * (l * 2.0);
    let dxc = cvec(dx);
    let b = &a2 * &dxc * (l * 2.0) + cvec(dxi) * (I * l);
    let c = -(dxc.transpose() * &a2 * &dxc)[(0, 0)] * l;
    (q, b, c)
}

fn check_spd(m: &DMatrix<f64>) -> Result<()> {
    let e = SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min();
    if !(e > 0.0) || (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return invalid("overlap matrices must be symmetric positive definite");
    }
    Ok(())
}

/// `|int exp(i lambda <dxi, x> - lambda x^T (M1 + i N1) x - lambda (x - dx)^T (M2 + i N2) (x - dx)) dx|`
/// in closed form, and the bound with the given constants.
#[allow(clippy::too_many_arguments)]
pub fn gaussian_bound_oracle(
    m1: &DMatrix<f64>,
    m2: &DMatrix<f64>,
    n1: &DMatrix<f64>,
    n2: &DMatrix<f64>,
    dx: &DVector<f64>,
    dxi: &DVector<f64>,
    lambda: f64,
    constants: &BoundConstants,
) -> Result<GaussianBound> {
    check_spd(m1)?;
    check_spd(m2)?;
    let d = m1.nrows();
    let (q, b, c) = overlap_form(m1, m2, n1, n2, dx, dxi, lambda);
    let lhs = complex_gaussian_integral(&q, &b, c)?.norm();
    let s = dx.norm_squared() + dxi.norm_squared();
    let rhs = constants.big_c * lambda.powf(-(d as f64) / 2.0) * (-constants.c3 * lambda * s).exp();
    let min_exponent_eig = exponent_form_min_eig(m1, m2, n1, n2)?;
    Ok(GaussianBound { lhs, rhs, min_exponent_eig })
}

/// Smallest eigenvalue of the real quadratic form `E` in `(dx, dxi)`.
pub fn exponent_form_min_eig(m1: &DMatrix<f64>, m2: &DMatrix<f64>, n1: &DMatrix<f64>, n2: &DMatrix<f64>) -> Result<f64> {
    let d = m1.nrows();
    let n = 2 * d;
    let eval = |z: &DVector<f64>| -> Result<f64> {
        let dx = z.rows(0, d).into_owned();
        let dxi = z.rows(d, d).into_owned();
        let (q, b, c) = overlap_form(m1, m2, n1, n2, &dx, &dxi, 1.0);
        let qinv = q.try_inverse().ok_or_else(|| Error::Singular("overlap form".into()))?;
        Ok(-((b.transpose() * qinv * &b)[(0, 0)] * 0.5 + c).re)
    };
    let basis = |i: usize| {
        let mut z = DVector::zeros(n);
        z[i] = 1.0;
        z
    };
    let mut e = DMatrix::zeros(n, n);
    let diag: Vec<f64> = (0..n).map(|i| eval(&basis(i))).collect::<Result<_>>()?;
    for i in 0..n {
        e[(i, i)] = diag[i];
        for j in (i + 1)..n {
            let v = (eval(&(basis(i) + basis(j)))? - diag[i] - diag[j]) * 0.5;
            e[(i, j)] = v;
            e[(j, i)] = v;
        }
    }
    Ok(SymmetricEigen::new(e).eigenvalues.min())
}

/// `C = pi^{d/2} (2 c0)^{-d/2}`, which dominates the prefactor for any family with `M > c0`,
/// and `c3` as half the smallest exponent-form eigenvalue over `samples`.
pub fn fit_bound_constants(c0: f64, d: usize, min_exponent_eigs: &[f64]) -> BoundConstants {
    let big_c = std::f64::consts::PI.powf(d as f64 / 2.0) * (2.0 * c0).powf(-(d as f64) / 2.0);
    let c3 = 0.5 * min_exponent_eigs.iter().copied().fold(f64::INFINITY, f64::min);
    BoundConstants { big_c, c3 }
}

/// Matrix family for the overlap bound: `c0 < M < c1`, `|N| <= c2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapFamily {
    pub dim: usize,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Largest `|dx|`, `|dxi|` component and the lambda range.
    pub shift: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for OverlapFamily {
    fn default() -> Self {
        OverlapFamily { dim: 3, c0: 0.5, c1: 2.0, c2: 1.0, shift: 0.5, lambda_min: 10.0, lambda_max: 400.0 }
    }
}

struct OverlapSample {
    m1: DMatrix<f64>,
    m2: DMatrix<f64>,
    n1: DMatrix<f64>,
    n2: DMatrix<f64>,
    dx: DVector<f64>,
    dxi: DVector<f64>,
    lambda: f64,
}

fn random_orthogonal<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

fn random_symmetric<R: Rng>(d: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let q = random_orthogonal(d, rng);
    let diag = DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| rng.gen_range(lo..hi)));
    let m = &q * diag * q.transpose();
    (&m + m.transpose()) * 0.5
}

impl OverlapFamily {
    fn sample<R: Rng>(&self, rng: &mut R) -> OverlapSample {
        let d = self.dim;
        let shift = |rng: &mut R| DVector::from_fn(d, |_, _| rng.gen_range(-self.shift..self.shift));
        OverlapSample {
            m1: random_symmetric(d, self.c0, self.c1, rng),
            m2: random_symmetric(d, self.c0, self.c1, rng),
            n1: random_symmetric(d, -self.c2, self.c2, rng),
            n2: random_symmetric(d, -self.c2, self.c2, rng),
            dx: shift(rng),
            dxi: shift(rng),
            lambda: rng.gen_range(self.lambda_min..self.lambda_max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSweep {
    pub constants: BoundConstants,
    pub n_fit: usize,
    pub n_samples: usize,
    pub n_violations: usize,
    /// Largest `lhs / rhs` seen.
    pub max_ratio: f64,
}

/// Fits the bound constants on `n_fit` draws, then checks `lhs <= rhs` on `n_samples` fresh draws.
pub fn gaussian_bound_sweep(family: &OverlapFamily, n_fit: usize, n_samples: usize, seed: u64) -> Result<BoundSweep> {
    if !(family.c0 > 0.0 && family.c1 > family.c0 && family.c2 >= 0.0) || n_fit == 0 {
        return invalid("overlap family needs 0 < c0 < c1, c2 >= 0 and a fitting set");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eigs = Vec::with_capacity(n_fit);
    for _ in 0..n_fit {
        let s = family.sample(&mut rng);
        eigs.push(exponent_form_min_eig(&s.m1, &s.m2, &s.n1, &s.n2)?);
    }
    let constants = fit_bound_constants(family.c0, family.dim, &eigs);
    let mut n_violations = 0;
    let mut max_ratio: f64 = 0.0;
    for _ in 0..n_samples {
        let s = family.sample(&mut rng);
        let r = gaussian_bound_oracle(&s.m1, &s.m2, &s.n1, &s.n2, &s.dx, &s.dxi, s.lambda, &constants)?;
        if r.lhs > r.rhs {
            n_violations += 1;
        }
        max_ratio = max_ratio.max(r.lhs / r.rhs);
    }
    Ok(BoundSweep { constants, n_fit, n_samples, n_violations, max_ratio })
}

/// Interaction of the frozen beam of `c` with that of `c exp(eps psi / 2)` from the same entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionSeries {
    pub eps: f64,
    pub delta_z: f64,
    pub lambdas: Vec<f64>,
    pub log_abs: Vec<f64>,
    pub truncation_bounds: Vec<f64>,
    /// `log |<.,.>|` against lambda.
    pub fit: LineFit,
}

#[allow(clippy::too_many_arguments)]
pub fn interaction_sweep(
    field: &VelocityField,
    p0: &PhasePoint,
    potential: &Potential,
    eps: &[f64],
    lambdas: &[f64],
    eps1: f64,
    tol: &Tolerance,
) -> Result<Vec<InteractionSeries>> {
    if lambdas.len() < 2 {
        return invalid("interaction sweep needs two lambdas");
    }
    let bb = incident_beam(field, p0, eps1, 0.5 * eps1, tol)?;
    let base = FrozenBeam::from_jet(bb.hit.a, &jet_of_state(field, &bb.hit, &bb.chart)?);
    let window = Window { t_center: bb.t1, half_time: 0.5 * eps1, half_y: 0.5 * bb.chart.radius };
    eps.iter()
        .map(|&e| {
            let other = field.perturbed(potential.clone(), e)?;
            let ob = incident_beam(&other, p0, eps1, 0.5 * eps1, tol)?;
            let moved = FrozenBeam::from_jet(ob.hit.a, &jet_of_state(&other, &ob.hit, &bb.chart)?);
            let recs: Vec<InteractionRecord> =
                lambdas.iter().map(|&l| interaction(&base, &moved, l, &window)).collect::<Result<_>>()?;
            let log_abs: Vec<f64> = recs.iter().map(|r| r.value.norm().ln()).collect();
            Ok(InteractionSeries {
                eps: e,
                delta_z: delta_z(&base, &moved),
                lambdas: lambdas.to_vec(),
                fit: stats::line_fit(lambdas, &log_abs),
                log_abs,
                truncation_bounds: recs.iter().map(|r| r.truncation_bound).collect(),
            })
        })
        .collect()
}

/// Window statistics on the boundary: auxiliary-beam closeness and Neumann approximation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryWindowRecord {
    pub lambda: f64,
    pub beam_norm: f64,
    /// `||g_hat - g_hat_*|| / ||g_hat||`.
    pub frozen_gap: f64,
    /// `||d_nu (g + g^-) - 2 i lambda <xi1, nu> g||`.
    pub neumann_residual: f64,
    /// `||2 i lambda <xi1, nu> g||`.
    pub neumann_main: f64,
    /// `||g + g^-||`.
    pub dirichlet_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryWindowScan {
    pub records: Vec<BoundaryWindowRecord>,
    pub frozen_fit: LineFit,
    pub neumann_fit: LineFit,
    pub main_fit: LineFit,
}

fn normal_derivative(s: &BeamState, x: &DVector<f64>, nu: &DVector<f64>, lambda: f64) -> C64 {
    let dx = cvec(&(x - &s.x));
    let grad = cvec(&s.xi) + &s.m * dx;
    eval_state(s, x, lambda) * I * lambda * grad.dot(&cvec(nu))
}

/// Scans `(t, y)` boxes around the hit for each lambda; `n` points per axis.
pub fn boundary_window_scan(
    field: &VelocityField,
    bb: &BoundaryBeam,
    reflected: &BeamPath,
    lambdas: &[f64],
    n: usize,
    radius_factor: f64,
) -> Result<BoundaryWindowScan> {
    let d = field.dim();
    let jet = jet_of_state(field, &bb.hit, &bb.chart)?;
    let frozen = FrozenBeam::from_jet(bb.hit.a, &jet);
    let mu = min_eig_im(&jet.mhat);
    let xi1_nu = bb.hit.xi.dot(&bb.chart.normal);
    let (lo, hi) = bb.path.t_range();
    let (rlo, rhi) = reflected.t_range();
    let records: Vec<BoundaryWindowRecord> = lambdas
        .par_iter()
        .map(|&lambda| -> Result<BoundaryWindowRecord> {
            let half = radius_factor / (lambda * mu).sqrt();
            let ht = half.min(bb.t1 - lo).min(hi - bb.t1).min(bb.t1 - rlo).min(rhi - bb.t1);
            let hy = half.min(0.5 * bb.chart.radius);
            let h_t = 2.0 * ht / n as f64;
            let h_y = 2.0 * hy / n as f64;
            let w = h_t * h_y.powi(d as i32 - 1);
            let mut acc = [0.0f64; 5];
            for it in 0..n {
                let t = bb.t1 - ht + h_t * (it as f64 + 0.5);
                let s = bb.path.state_at(t)?;
                let sr = reflected.state_at(t)?;
                for iy in 0..n.pow(d as u32 - 1) {
                    let mut y = DVector::zeros(d - 1);
                    let mut idx = iy;
                    for k in 0..d - 1 {
                        y[k] = jet.y1[k] - hy + h_y * ((idx % n) as f64 + 0.5);
                        idx /= n;
                    }
                    let x = bb.chart.f(&y);
                    let nu = (&x - &bb.chart.center) / bb.chart.radius;
                    let g = eval_state(&s, &x, lambda);
                    let gr = eval_state(&sr, &x, lambda);
                    let gs = frozen.eval(t, &y, lambda);
                    let dn = normal_derivative(&s, &x, &nu, lambda) + normal_derivative(&sr, &x, &nu, lambda);
                    let main = g * I * (2.0 * lambda * xi1_nu);
                    acc[0] += g.norm_sqr() * w;
                    acc[1] += (g - gs).norm_sqr() * w;
                    acc[2] += (dn - main).norm_sqr() * w;
                    acc[3] += main.norm_sqr() * w;
                    acc[4] += (g + gr).norm_sqr() * w;
                }
            }
            let beam_norm = acc[0].sqrt();
            Ok(BoundaryWindowRecord {
                lambda,
                beam_norm,
                frozen_gap: acc[1].sqrt() / beam_norm,
                neumann_residual: acc[2].sqrt(),
                neumann_main: acc[3].sqrt(),
                dirichlet_sum: acc[4].sqrt(),
            })
        })
        .collect::<Result<_>>()?;
    let ls: Vec<f64> = records.iter().map(|r| r.lambda).collect();
    let fit = |f: &dyn Fn(&BoundaryWindowRecord) -> f64| stats::loglog_fit(&ls, &records.iter().map(f).collect::<Vec<_>>());
    Ok(BoundaryWindowScan {
        frozen_fit: fit(&|r| r.frozen_gap),
        neumann_fit: fit(&|r| r.neumann_residual),
        main_fit: fit(&|r| r.neumann_main),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_riccati_closed_form() {
        let f = VelocityField::constant(Domain::unit_ball(3));
        let s0 = BeamState::initial(DVector::from_vec(vec![0.0, 0.0, 0.0]), DVector::from_vec(vec![1.0, 0.0, 0.0]), 0.0);
        let tol = Tolerance { atol: 1e-12, rtol: 1e-11, ..Tolerance::default() };
        let path = propagate_beam(&f, &s0, 0.0, 2.0, &tol).unwrap();
        for t in [0.3, 1.0, 2.0] {
            let s = path.state_at(t).unwrap();
            let m = Complex::new(t, 1.0) / (1.0 + t * t);
            assert!((s.m[(1, 1)] - m).norm() < 1e-8);
            assert!((s.m[(2, 2)] - m).norm() < 1e-8);
            assert!((s.m[(0, 0)] - I).norm() < 1e-8);
            assert!((s.a.norm() - (1.0 + t * t).powf(-0.5)).abs() < 1e-8);
        }
    }

    #[test]
    fn gaussian_integral_standard_case() {
        let d = 3;
        let id = DMatrix::identity(d, d);
        let z = DMatrix::zeros(d, d);
        let k = BoundConstants { big_c: 1.0, c3: 0.0 };
        let lambda = 7.0;
        let r = gaussian_bound_oracle(&id, &id, &z, &z, &DVector::zeros(d), &DVector::zeros(d), lambda, &k).unwrap();
        let expect = (std::f64::consts::PI / (2.0 * lambda)).powf(1.5);
        assert!((r.lhs - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn bound_dominates_random_overlaps() {
        let sweep = gaussian_bound_sweep(&OverlapFamily::default(), 200, 300, 7).unwrap();
        assert_eq!(sweep.n_violations, 0, "{sweep:?}");
        assert!(sweep.constants.c3 > 0.0);
    }

    #[test]
    fn chart_derivatives() {
        let dom = Domain::unit_ball(3);
        let x1 = DVector::from_vec(vec![0.6, 0.0, 0.8]);
        let ch = BoundaryChart::new(&dom, &x1).unwrap();
        assert!((ch.f(&DVector::zeros(2)) - &x1).norm() < 1e-15);
        let y = DVector::from_vec(vec![0.1, -0.2]);
        let h = 1e-6;
        let df = ch.df(&y);
        for k in 0..2 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += h;
            ym[k] -= h;
            let fd = (ch.f(&yp) - ch.f(&ym)) / (2.0 * h);
            assert!((fd - df.column(k)).norm() < 1e-8);
        }
        assert!((ch.inverse(&ch.f(&y)) - y).norm() < 1e-14);
    }
}

