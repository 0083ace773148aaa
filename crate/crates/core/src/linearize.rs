//! Linearization of the reduced flow: the matrix `A`, the weight `Upsilon`
//! solving `Upsilon' = -Upsilon A`, and the first variation of the flow under
//! a perturbation of `b`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{Potential, VelocityField};
use crate::flow::{self, PhasePoint};
use crate::ode::{self, DenseSolution, OdeSystem, Tolerance};
use crate::stats::{self, LineFit};

/// `A = [[0, (I |xi|^2 - 2 xi xi^T) / |xi|^4], [db(x), 0]]`.
pub fn system_matrix(field: &VelocityField, p: &PhasePoint) -> DMatrix<f64> {
    let d = p.dim();
    let mut pm = vec![0.0; d * d];
    let mut qm = vec![0.0; d * d];
    a_blocks(field, p.x.as_slice(), p.xi.as_slice(), &mut pm, &mut qm);
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            a[(i, d + j)] = pm[i * d + j];
            a[(d + i, j)] = qm[i * d + j];
        }
    }
    a
}

/// Fills the upper-right (`pm`) and lower-left (`qm`) blocks of `A`; returns `(c, xi^2)`.
pub(crate) fn a_blocks(field: &VelocityField, x: &[f64], xi: &[f64], pm: &mut [f64], qm: &mut [f64]) -> (f64, f64) {
    let d = x.len();
    let mut g = [0.0; 8];
    let gs = &mut g[..d];
    let c = field.eval_into(x, gs, qm);
    // qm holds Hess c here
    let c2 = c * c;
    for i in 0..d {
        for j in 0..d {
            qm[i * d + j] = (gs[i] * gs[j] - c * qm[i * d + j]) / c2;
        }
    }
    let xi2: f64 = xi.iter().map(|v| v * v).sum();
    let xi4 = xi2 * xi2;
    for i in 0..d {
        for j in 0..d {
            let delta = if i == j { xi2 } else { 0.0 };
            pm[i * d + j] = (delta - 2.0 * xi[i] * xi[j]) / xi4;
        }
    }
    (c, xi2)
}

/// Vector source `g(x)` in `R^{2d}` accumulated as `J' = Upsilon g(x)`.
pub type Source<'a> = &'a (dyn Fn(&[f64], &mut [f64]) + Sync);

/// Hamiltonian flow, `Upsilon' = -Upsilon A`, and optionally `J' = Upsilon g(x)`.
pub struct WeightSystem<'a> {
    pub field: &'a VelocityField,
    pub source: Option<Source<'a>>,
}

impl WeightSystem<'_> {
    fn m(&self) -> usize {
        2 * self.field.dim()
    }
}

impl OdeSystem for WeightSystem<'_> {
    fn dim(&self) -> usize {
        let m = self.m();
        m + m * m + if self.source.is_some() { m } else { 0 }
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.field.dim();
        let m = 2 * d;
        let mut pbuf = [0.0; 64];
        let mut qbuf = [0.0; 64];
        let (pm, qm) = (&mut pbuf[..d * d], &mut qbuf[..d * d]);
        let x = &y[..d];
        let xi = &y[d..m];
        let mut g = [0.0; 8];
        let mut hbuf = [0.0; 64];
        let c = self.field.eval_into(x, &mut g[..d], &mut hbuf[..d * d]);
        let c2 = c * c;
        for i in 0..d {
            for j in 0..d {
                qm[i * d + j] = (g[i] * g[j] - c * hbuf[i * d + j]) / c2;
            }
        }
        let xi2: f64 = xi.iter().map(|v| v * v).sum();
        let xi4 = xi2 * xi2;
        for i in 0..d {
            for j in 0..d {
                let delta = if i == j { xi2 } else { 0.0 };
                pm[i * d + j] = (delta - 2.0 * xi[i] * xi[j]) / xi4;
            }
        }
        for i in 0..d {
            dy[i] = c2 * xi[i];
            dy[d + i] = -c * g[i] * xi2;
        }
        let u = &y[m..m + m * m];
        let du = &mut dy[m..m + m * m];
        // (U A)[:, :d] = U[:, d:] Q ; (U A)[:, d:] = U[:, :d] P
        for r in 0..m {
            let row = &u[r * m..(r + 1) * m];
            for j in 0..d {
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for k in 0..d {
                    s1 += row[d + k] * qm[k * d + j];
                    s2 += row[k] * pm[k * d + j];
                }
                du[r * m + j] = -s1;
                du[r * m + d + j] = -s2;
            }
        }
        if let Some(src) = self.source {
            let mut gv = [0.0; 16];
            src(x, &mut gv[..m]);
            let off = m + m * m;
            for r in 0..m {
                let row = &u[r * m..(r + 1) * m];
                dy[off + r] = (0..m).map(|k| row[k] * gv[k]).sum();
            }
        }
    }
}

fn identity_state(p0: &PhasePoint, with_source: bool) -> Vec<f64> {
    let m = 2 * p0.dim();
    let mut y = p0.to_state();
    for i in 0..m {
        for j in 0..m {
            y.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    if with_source {
        y.extend(std::iter::repeat(0.0).take(m));
    }
    y
}

/// Flow with co-integrated weight (and source integral, when present).
#[derive(Clone, Debug)]
pub struct WeightPath {
    pub dim: usize,
    pub sol: DenseSolution,
}

impl WeightPath {
    fn m(&self) -> usize {
        2 * self.dim
    }

    pub fn state_at(&self, s: f64) -> PhasePoint {
        PhasePoint::from_state(&self.sol.eval(s), self.dim)
    }

    pub fn upsilon_at(&self, s: f64) -> DMatrix<f64> {
        let y = self.sol.eval(s);
        self.upsilon_from(&y)
    }

    pub fn upsilon_from(&self, y: &[f64]) -> DMatrix<f64> {
        let m = self.m();
        DMatrix::from_row_slice(m, m, &y[m..m + m * m])
    }

    pub fn upsilon_end(&self) -> DMatrix<f64> {
        self.upsilon_from(self.sol.y_end())
    }

    /// Accumulated source integral at the end of the path.
    pub fn integral_end(&self) -> Option<DVector<f64>> {
        let m = self.m();
        let y = self.sol.y_end();
        if y.len() == m + m * m + m {
            Some(DVector::from_column_slice(&y[m + m * m..]))
        } else {
            None
        }
    }

    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }
}

/// `Upsilon(s; p0)` for `s` in `[0, t_end]`.
pub fn integrate_weight(field: &VelocityField, p0: &PhasePoint, t_end: f64, tol: &Tolerance) -> Result<WeightPath> {
    check(field, p0)?;
    let sys = WeightSystem { field, source: None };
    let sol = ode::solve(&sys, 0.0, &identity_state(p0, false), t_end, tol)?;
    Ok(WeightPath { dim: field.dim(), sol })
}

/// Same as [`integrate_weight`] with the running integral `int Upsilon g(x(s)) ds`.
pub fn integrate_weight_with_source(
    field: &VelocityField,
    p0: &PhasePoint,
    t_end: f64,
    source: Source<'_>,
    tol: &Tolerance,
) -> Result<WeightPath> {
    check(field, p0)?;
    let sys = WeightSystem { field, source: Some(source) };
    let sol = ode::solve(&sys, 0.0, &identity_state(p0, true), t_end, tol)?;
    Ok(WeightPath { dim: field.dim(), sol })
}

fn check(field: &VelocityField, p0: &PhasePoint) -> Result<()> {
    if p0.dim() != field.dim() {
        return invalid("phase point dimension does not match the field");
    }
    if field.dim() > 8 {
        return Err(Error::Dimension(field.dim()));
    }
    Ok(())
}

/// Weight along the full chord through an entering covector.
pub fn integrate_chord_weight(field: &VelocityField, tau: &PhasePoint, tol: &Tolerance, t_max: f64) -> Result<WeightPath> {
    let rec = flow::scattering_relation(field, tau, tol, t_max)?;
    integrate_weight(field, tau, rec.l, tol)
}

/// `Phi(p) = Upsilon(-l_minus(p); tau(p))`.
pub fn weight_at(field: &VelocityField, p: &PhasePoint, tol: &Tolerance, t_max: f64) -> Result<DMatrix<f64>> {
    let bt = flow::backtrace(field, p, tol, t_max)?;
    if bt.l_minus == 0.0 {
        return Ok(DMatrix::identity(2 * field.dim(), 2 * field.dim()));
    }
    let path = integrate_weight(field, &bt.tau, -bt.l_minus, tol)?;
    Ok(path.upsilon_end())
}

/// `Phi' = -Phi A`, `Psi' = A Psi` from the identity, along the flow from `p0`.
pub struct PairSystem<'a> {
    pub field: &'a VelocityField,
}

impl OdeSystem for PairSystem<'_> {
    fn dim(&self) -> usize {
        let m = 2 * self.field.dim();
        m + 2 * m * m
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.field.dim();
        let m = 2 * d;
        let ws = WeightSystem { field: self.field, source: None };
        ws.rhs(t, &y[..m + m * m], &mut dy[..m + m * m]);
        let mut pm = [0.0; 64];
        let mut qm = [0.0; 64];
        a_blocks(self.field, &y[..d], &y[d..m], &mut pm[..d * d], &mut qm[..d * d]);
        let psi = &y[m + m * m..];
        let dpsi = &mut dy[m + m * m..];
        // (A Psi)[:d, :] = P Psi[d:, :] ; (A Psi)[d:, :] = Q Psi[:d, :]
        for i in 0..d {
            for col in 0..m {
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for k in 0..d {
                    s1 += pm[i * d + k] * psi[(d + k) * m + col];
                    s2 += qm[i * d + k] * psi[k * m + col];
                }
                dpsi[i * m + col] = s1;
                dpsi[(d + i) * m + col] = s2;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct FundamentalPair {
    pub phi: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl FundamentalPair {
    /// `|Phi Psi - I|_max`.
    pub fn product_defect(&self) -> f64 {
        let m = self.phi.nrows();
        (&self.phi * &self.psi - DMatrix::<f64>::identity(m, m)).amax()
    }
}

pub fn fundamental_pair(field: &VelocityField, p0: &PhasePoint, t_end: f64, tol: &Tolerance) -> Result<FundamentalPair> {
    check(field, p0)?;
    let m = 2 * field.dim();
    let mut y0 = identity_state(p0, false);
    y0.extend(identity_state(p0, false)[m..].iter().copied());
    let sol = ode::solve(&PairSystem { field }, 0.0, &y0, t_end, tol)?;
    let y = sol.y_end();
    Ok(FundamentalPair {
        phi: DMatrix::from_row_slice(m, m, &y[m..m + m * m]),
        psi: DMatrix::from_row_slice(m, m, &y[m + m * m..]),
    })
}

/// `delta b = -grad(psi) / 2` for the perturbation `c -> c exp(eps psi / 2)`.
pub fn potential_delta_b(potential: &Potential) -> impl Fn(&[f64], &mut [f64]) + Sync + '_ {
    move |x: &[f64], out: &mut [f64]| {
        let d = x.len();
        let mut g = [0.0; 8];
        let mut h = [0.0; 64];
        potential.eval_into(x, &mut g[..d], &mut h[..d * d]);
        for i in 0..d {
            out[i] = 0.0;
            out[d + i] = -0.5 * g[i];
        }
    }
}

/// First variation `Upsilon(T)^{-1} int_0^T Upsilon(s) (0, delta_b(x(s))) ds`.
///
/// `delta_b` writes the full `2d` source `(0, delta b(x))`.
pub fn delta_flow(
    field: &VelocityField,
    p0: &PhasePoint,
    t_end: f64,
    delta_b: Source<'_>,
    tol: &Tolerance,
) -> Result<DVector<f64>> {
    let path = integrate_weight_with_source(field, p0, t_end, delta_b, tol)?;
    let u = path.upsilon_end();
    let j = path.integral_end().expect("source path carries its integral");
    u.lu().solve(&j).ok_or_else(|| Error::Singular("weight matrix at the final time".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    pub eps: Vec<f64>,
    pub norms: Vec<f64>,
    pub fit: LineFit,
    pub delta_flow: Vec<f64>,
}

/// Measures `|H_{c_eps}^T(p0) - H_c^T(p0) - eps * delta_flow|` over `eps`.
pub fn remainder_probe(
    field: &VelocityField,
    p0: &PhasePoint,
    t_end: f64,
    potential: &Potential,
    eps: &[f64],
    tol: &Tolerance,
) -> Result<RemainderReport> {
    if eps.len() < 2 || eps.iter().any(|e| !(*e > 0.0)) {
        return invalid("remainder probe needs at least two positive eps values");
    }
    let db = potential_delta_b(potential);
    let lin = delta_flow(field, p0, t_end, &db, tol)?;
    let base = flow::integrate(field, p0, t_end, tol)?.end();
    let mut norms = Vec::with_capacity(eps.len());
    for &e in eps {
        let pert = field.perturbed(potential.clone(), e)?;
        let moved = flow::integrate(&pert, p0, t_end, tol)?.end();
        let mut diff = DVector::from_vec(moved.to_state()) - DVector::from_vec(base.to_state());
        diff -= &lin * e;
        norms.push(diff.norm());
    }
    let fit = stats::loglog_fit(eps, &norms);
    Ok(RemainderReport { eps: eps.to_vec(), norms, fit, delta_flow: lin.iter().copied().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Domain;

    fn lens() -> VelocityField {
        VelocityField::gaussian_lens(Domain::unit_ball(3), 0.3, 0.5).unwrap()
    }

    fn entering(theta: f64, tilt: f64) -> PhasePoint {
        let x = DVector::from_vec(vec![theta.cos(), 0.0, theta.sin()]);
        let t = DVector::from_vec(vec![-theta.sin(), 0.0, theta.cos()]);
        let xi = -&x * tilt.cos() + t * tilt.sin();
        PhasePoint::new(x, xi)
    }

    #[test]
    fn matrix_has_zero_trace_and_matches_jacobian() {
        let f = lens();
        let p = PhasePoint::from_slices(&[0.1, -0.2, 0.3], &[0.4, 0.5, -0.6]);
        let a = system_matrix(&f, &p);
        assert!(a.trace().abs() < 1e-14);
        let h = 1e-6;
        for k in 0..6 {
            let mut yp = p.to_state();
            let mut ym = p.to_state();
            yp[k] += h;
            ym[k] -= h;
            let fp = flow::reduced_rhs(&f, &PhasePoint::from_state(&yp, 3)).to_state();
            let fm = flow::reduced_rhs(&f, &PhasePoint::from_state(&ym, 3)).to_state();
            for i in 0..6 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - a[(i, k)]).abs() < 1e-6, "A[{i},{k}]");
            }
        }
    }

    #[test]
    fn cocycle_property() {
        let f = lens();
        let tol = Tolerance::default();
        let p0 = entering(0.4, 0.3);
        let (s, t) = (0.6, 0.5);
        let path = integrate_weight(&f, &p0, s + t, &tol).unwrap();
        let ps = path.state_at(s);
        let us = path.upsilon_at(s);
        let from_s = integrate_weight(&f, &ps, t, &tol).unwrap().upsilon_end();
        let err = (&path.upsilon_end() - us * from_s).amax();
        assert!(err < 1e-7, "cocycle defect {err}");
    }

    #[test]
    fn pair_product_is_identity() {
        let f = lens();
        let pair = fundamental_pair(&f, &entering(1.1, -0.2), 1.6, &Tolerance::default()).unwrap();
        assert!(pair.product_defect() < 1e-7);
    }

    #[test]
    fn weight_at_boundary_is_identity() {
        let f = lens();
        let p0 = entering(0.2, 0.1);
        let w = weight_at(&f, &p0, &Tolerance::default(), 10.0).unwrap();
        assert_eq!(w, DMatrix::identity(6, 6));
    }

    #[test]
    fn weight_at_follows_the_chord() {
        let f = lens();
        let tol = Tolerance::default();
        let p0 = entering(0.9, 0.25);
        let path = integrate_weight(&f, &p0, 0.8, &tol).unwrap();
        let w = weight_at(&f, &path.state_at(0.8), &tol, 10.0).unwrap();
        assert!((w - path.upsilon_end()).amax() < 1e-7);
    }
}
