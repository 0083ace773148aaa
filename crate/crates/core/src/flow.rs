//! Bicharacteristic flow of `H = c^2 |xi|^2 / 2` and the boundary maps built on it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{Domain, VelocityField};
use crate::ode::{self, DenseSolution, Event, OdeSystem, Tolerance};

/// Point of the cotangent bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: DVector<f64>,
    pub xi: DVector<f64>,
}

impl PhasePoint {
    pub fn new(x: DVector<f64>, xi: DVector<f64>) -> Self {
        PhasePoint { x, xi }
    }

    pub fn from_slices(x: &[f64], xi: &[f64]) -> Self {
        PhasePoint { x: DVector::from_column_slice(x), xi: DVector::from_column_slice(xi) }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn to_state(&self) -> Vec<f64> {
        self.x.iter().chain(self.xi.iter()).copied().collect()
    }

    pub fn from_state(y: &[f64], d: usize) -> Self {
        PhasePoint::from_slices(&y[..d], &y[d..2 * d])
    }

    /// `c(x) |xi|`.
    pub fn cnorm(&self, field: &VelocityField) -> f64 {
        field.c(&self.x) * self.xi.norm()
    }

    /// Rescale `xi` onto the unit cosphere.
    pub fn normalized(&self, field: &VelocityField) -> Self {
        let n = self.cnorm(field);
        PhasePoint { x: self.x.clone(), xi: &self.xi / n }
    }

    pub fn flipped(&self) -> Self {
        PhasePoint { x: self.x.clone(), xi: -&self.xi }
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        ((&self.x - &other.x).norm_squared() + (&self.xi - &other.xi).norm_squared()).sqrt()
    }
}

pub fn hamiltonian(field: &VelocityField, p: &PhasePoint) -> f64 {
    let c = field.c(&p.x);
    0.5 * c * c * p.xi.norm_squared()
}

/// `x' = c^2 xi`, `xi' = -c grad c |xi|^2`.
pub struct HamiltonianSystem<'a> {
    pub field: &'a VelocityField,
}

impl OdeSystem for HamiltonianSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.field.dim()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.field.dim();
        let mut g = [0.0; 8];
        let mut hbuf = [0.0; 64];
        let gs = if d <= 8 { &mut g[..d] } else { unreachable_dim(d) };
        let c = self.field.eval_into(&y[..d], gs, &mut hbuf[..d * d]);
        let xi2: f64 = y[d..2 * d].iter().map(|v| v * v).sum();
        for i in 0..d {
            dy[i] = c * c * y[d + i];
            dy[d + i] = -c * gs[i] * xi2;
        }
    }
}

/// `x' = xi / |xi|^2`, `xi' = b(x)`; agrees with the Hamiltonian form on the cosphere.
pub struct ReducedSystem<'a> {
    pub field: &'a VelocityField,
}

impl OdeSystem for ReducedSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.field.dim()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.field.dim();
        let mut g = [0.0; 8];
        let mut hbuf = [0.0; 64];
        let gs = if d <= 8 { &mut g[..d] } else { unreachable_dim(d) };
        let c = self.field.eval_into(&y[..d], gs, &mut hbuf[..d * d]);
        let xi2: f64 = y[d..2 * d].iter().map(|v| v * v).sum();
        for i in 0..d {
            dy[i] = y[d + i] / xi2;
            dy[d + i] = -gs[i] / c;
        }
    }
}

pub(crate) fn unreachable_dim(d: usize) -> ! {
    panic!("dimension {d} exceeds the supported maximum of 8")
}

pub fn hamiltonian_rhs(field: &VelocityField, p: &PhasePoint) -> PhasePoint {
    let d = p.dim();
    let mut dy = vec![0.0; 2 * d];
    HamiltonianSystem { field }.rhs(0.0, &p.to_state(), &mut dy);
    PhasePoint::from_state(&dy, d)
}

pub fn reduced_rhs(field: &VelocityField, p: &PhasePoint) -> PhasePoint {
    let d = p.dim();
    let mut dy = vec![0.0; 2 * d];
    ReducedSystem { field }.rhs(0.0, &p.to_state(), &mut dy);
    PhasePoint::from_state(&dy, d)
}

/// `|x - center| - R` on the first `dim` state components.
pub struct SphereEvent<'a> {
    pub domain: &'a Domain,
    pub radius: f64,
}

impl<'a> SphereEvent<'a> {
    pub fn boundary(domain: &'a Domain) -> Self {
        SphereEvent { domain, radius: domain.radius }
    }
}

impl Event for SphereEvent<'_> {
    fn value(&self, y: &[f64]) -> f64 {
        self.domain.radial_distance(&y[..self.domain.dim]) - self.radius
    }

    fn rate(&self, y: &[f64], dy: &[f64]) -> f64 {
        let d = self.domain.dim;
        let r = self.domain.radial_distance(&y[..d]);
        (0..d).map(|i| (y[i] - self.domain.center[i]) * dy[i]).sum::<f64>() / r
    }
}

/// Dense flow solution; the first `2d` state components are `(x, xi)`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dim: usize,
    pub sol: DenseSolution,
}

impl Trajectory {
    pub fn t_start(&self) -> f64 {
        self.sol.t_start()
    }

    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn state_at(&self, t: f64) -> PhasePoint {
        let y = self.sol.eval(t);
        PhasePoint::from_state(&y, self.dim)
    }

    pub fn end(&self) -> PhasePoint {
        PhasePoint::from_state(self.sol.y_end(), self.dim)
    }

    pub fn n_steps(&self) -> usize {
        self.sol.n_steps()
    }

    /// Approximate minimum of `|x(t) - center|` using samples inside every step.
    pub fn min_radius(&self, domain: &Domain) -> f64 {
        let ts = self.sol.step_times();
        let mut best = f64::INFINITY;
        let mut buf = vec![0.0; self.sol.dim()];
        for w in ts.windows(2) {
            for k in 0..=4 {
                let t = w[0] + (w[1] - w[0]) * k as f64 / 4.0;
                self.sol.eval_into(t, &mut buf);
                best = best.min(domain.radial_distance(&buf[..self.dim]));
            }
        }
        best
    }
}

/// Hamiltonian-form flow from `p0` over `[0, t_end]` (negative `t_end` runs backward).
pub fn integrate(field: &VelocityField, p0: &PhasePoint, t_end: f64, tol: &Tolerance) -> Result<Trajectory> {
    check_dim(field, p0)?;
    let sol = ode::solve(&HamiltonianSystem { field }, 0.0, &p0.to_state(), t_end, tol)?;
    Ok(Trajectory { dim: field.dim(), sol })
}

/// Reduced-form flow; only meaningful on the unit cosphere.
pub fn integrate_reduced(field: &VelocityField, p0: &PhasePoint, t_end: f64, tol: &Tolerance) -> Result<Trajectory> {
    check_dim(field, p0)?;
    let sol = ode::solve(&ReducedSystem { field }, 0.0, &p0.to_state(), t_end, tol)?;
    Ok(Trajectory { dim: field.dim(), sol })
}

fn check_dim(field: &VelocityField, p: &PhasePoint) -> Result<()> {
    if p.x.len() != field.dim() || p.xi.len() != field.dim() {
        return invalid("phase point dimension does not match the field");
    }
    if field.dim() > 8 {
        return Err(Error::Dimension(field.dim()));
    }
    Ok(())
}

/// Transversality floor for accepting a boundary crossing.
pub const MIN_CROSSING_RATE: f64 = 1e-6;
const ON_BOUNDARY: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatteringRecord {
    pub entry: PhasePoint,
    pub l: f64,
    pub exit: PhasePoint,
    pub entered_inner: bool,
}

/// Checks that `p0` is an entering unit covector on the boundary.
pub fn check_entering(field: &VelocityField, p0: &PhasePoint) -> Result<()> {
    check_dim(field, p0)?;
    let dom = &field.domain;
    let r = dom.radial_distance(p0.x.as_slice());
    if (r - dom.radius).abs() > ON_BOUNDARY * dom.radius.max(1.0) {
        return Err(Error::NotOnBoundary(format!("|x - center| = {r}, R = {}", dom.radius)));
    }
    let nu = dom.normal(&p0.x);
    if p0.xi.dot(&nu) >= 0.0 {
        return Err(Error::NotOnBoundary("covector is not entering".into()));
    }
    let cn = p0.cnorm(field);
    if (cn - 1.0).abs() > 1e-9 {
        return Err(Error::NotOnBoundary(format!("covector is not on the unit cosphere (|xi| = {cn})")));
    }
    Ok(())
}

/// Entering unit covector of the straight line with the given direction whose
/// closest approach to the domain center is `offset` (its component along the
/// direction is dropped).
pub fn entering_line(field: &VelocityField, direction: &[f64], offset: &[f64]) -> Result<PhasePoint> {
    let dom = &field.domain;
    if direction.len() != dom.dim || offset.len() != dom.dim {
        return invalid("direction and offset must have the domain dimension");
    }
    let d = DVector::from_column_slice(direction);
    if !(d.norm() > 0.0) {
        return invalid("direction must be non-zero");
    }
    let d = d.normalize();
    let s = DVector::from_column_slice(offset);
    let s = &s - &d * d.dot(&s);
    let disc = dom.radius * dom.radius - s.norm_squared();
    if !(disc > 0.0) {
        return invalid("line misses the domain");
    }
    let p = PhasePoint::new(dom.center_vec() + s - &d * disc.sqrt(), d);
    Ok(p.normalized(field))
}

/// Forward flow from an entering boundary covector to its exit.
pub fn scattering_trajectory(
    field: &VelocityField,
    p0: &PhasePoint,
    tol: &Tolerance,
    t_max: f64,
) -> Result<(Trajectory, ScatteringRecord)> {
    check_entering(field, p0)?;
    let ev = SphereEvent::boundary(&field.domain);
    let (sol, hit) = ode::solve_until(&HamiltonianSystem { field }, 0.0, &p0.to_state(), t_max, tol, &ev)?;
    let hit = hit.ok_or(Error::Trapped { t_max })?;
    if hit.rate.abs() <= MIN_CROSSING_RATE {
        return Err(Error::Grazing { rate: hit.rate });
    }
    let traj = Trajectory { dim: field.dim(), sol };
    let entered_inner = traj.min_radius(&field.domain) < field.domain.inner_radius();
    let exit = PhasePoint::from_state(&hit.y, field.dim());
    let rec = ScatteringRecord { entry: p0.clone(), l: hit.t, exit, entered_inner };
    Ok((traj, rec))
}

pub fn scattering_relation(
    field: &VelocityField,
    p0: &PhasePoint,
    tol: &Tolerance,
    t_max: f64,
) -> Result<ScatteringRecord> {
    scattering_trajectory(field, p0, tol, t_max).map(|(_, r)| r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Backtrace {
    /// Non-positive time to the entry point.
    pub l_minus: f64,
    pub tau: PhasePoint,
}

/// Follows the ray through `p` backward to where it entered the domain.
pub fn backtrace(field: &VelocityField, p: &PhasePoint, tol: &Tolerance, t_max: f64) -> Result<Backtrace> {
    check_dim(field, p)?;
    let dom = &field.domain;
    let r = dom.radial_distance(p.x.as_slice());
    if r > dom.radius * (1.0 + ON_BOUNDARY) {
        return invalid("backtrace needs a point in the closed domain");
    }
    let nu = dom.normal(&p.x);
    if r >= dom.radius * (1.0 - ON_BOUNDARY) && p.xi.dot(&nu) < 0.0 {
        return Ok(Backtrace { l_minus: 0.0, tau: p.clone() });
    }
    let ev = SphereEvent::boundary(dom);
    let (_sol, hit) = ode::solve_until(&HamiltonianSystem { field }, 0.0, &p.to_state(), -t_max, tol, &ev)?;
    let hit = hit.ok_or(Error::Trapped { t_max })?;
    if hit.rate.abs() <= MIN_CROSSING_RATE {
        return Err(Error::Grazing { rate: hit.rate });
    }
    // snap onto the boundary and the unit cosphere to absorb integration drift
    let mut tau = PhasePoint::from_state(&hit.y, field.dim());
    let c = dom.center_vec();
    tau.x = &c + (&tau.x - &c) * (dom.radius / dom.radial_distance(tau.x.as_slice()));
    let tau = tau.normalized(field);
    Ok(Backtrace { l_minus: hit.t, tau })
}

/// Time for the ray through `p` to leave the domain, or `None` if it stays beyond `t_max`.
pub fn exit_time(field: &VelocityField, p: &PhasePoint, t_max: f64, tol: &Tolerance) -> Result<Option<f64>> {
    check_dim(field, p)?;
    let ev = SphereEvent::boundary(&field.domain);
    let (_sol, hit) = ode::solve_until(&HamiltonianSystem { field }, 0.0, &p.to_state(), t_max, tol, &ev)?;
    Ok(hit.map(|h| h.t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Domain;

    fn lens() -> VelocityField {
        VelocityField::gaussian_lens(Domain::unit_ball(3), 0.3, 0.5).unwrap()
    }

    fn entering(theta: f64, tilt: f64) -> PhasePoint {
        let x = DVector::from_vec(vec![theta.cos(), theta.sin(), 0.0]);
        let nu = x.clone();
        let t = DVector::from_vec(vec![-theta.sin(), theta.cos(), 0.0]);
        let xi = -nu * tilt.cos() + t * tilt.sin();
        PhasePoint::new(x, xi)
    }

    #[test]
    fn forms_agree_on_cosphere() {
        let f = lens();
        let p = PhasePoint::from_slices(&[0.1, 0.2, -0.1], &[0.3, -0.5, 0.8]).normalized(&f);
        let a = hamiltonian_rhs(&f, &p);
        let b = reduced_rhs(&f, &p);
        assert!(a.distance(&b) < 1e-13);
    }

    #[test]
    fn scattering_of_diameter() {
        let f = VelocityField::constant(Domain::unit_ball(3));
        let rec = scattering_relation(&f, &entering(0.3, 0.0), &Tolerance::default(), 10.0).unwrap();
        assert!((rec.l - 2.0).abs() < 1e-10);
        assert!(rec.entered_inner);
    }

    #[test]
    fn backtrace_returns_entry() {
        let f = lens();
        let p0 = entering(0.7, 0.4);
        let traj = integrate(&f, &p0, 0.9, &Tolerance::default()).unwrap();
        let bt = backtrace(&f, &traj.end(), &Tolerance::default(), 10.0).unwrap();
        assert!((bt.l_minus + 0.9).abs() < 1e-8);
        assert!(bt.tau.distance(&p0) < 1e-8);
    }

    #[test]
    fn rejects_outgoing_start() {
        let f = lens();
        let p = entering(0.1, 0.2).flipped();
        assert!(matches!(scattering_relation(&f, &p, &Tolerance::default(), 10.0), Err(Error::NotOnBoundary(_))));
    }

    #[test]
    fn grazing_ray_is_reported() {
        let f = VelocityField::constant(Domain::unit_ball(3));
        let p = entering(0.0, std::f64::consts::FRAC_PI_2 - 1e-9);
        let res = scattering_relation(&f, &p, &Tolerance::default(), 10.0);
        assert!(matches!(res, Err(Error::Grazing { .. })), "{res:?}");
    }

    #[test]
    fn entering_line_hits_the_sphere() {
        let f = lens();
        let p = entering_line(&f, &[1.0, 0.2, 0.1], &[0.0, 0.2, -0.1]).unwrap();
        check_entering(&f, &p).unwrap();
        let s = p.x.clone() - &p.xi * p.x.dot(&p.xi) / p.xi.norm_squared();
        assert!(s.norm() < 0.23);
        assert!(entering_line(&f, &[1.0, 0.0, 0.0], &[0.0, 1.5, 0.0]).is_err());
    }
}
