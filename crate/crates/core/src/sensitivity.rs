//! Sensitivity chain for a perturbation `c -> c exp(eps psi / 2)`: compare the
//! X-ray transform of the log-gradient difference with the change in the flow
//! read off from the two scattering relations.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{Potential, VelocityField};
use crate::flow::{self, PhasePoint};
use crate::linearize;
use crate::ode::Tolerance;
use crate::stats::{self, LineFit};
use crate::xray::{self, FanGrid, TestFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfig {
    pub eps: Vec<f64>,
    /// Flow time; must exceed every exit time in the fan.
    pub t_end: f64,
    pub n_boundary: usize,
    pub n_dir: usize,
    pub tol: Tolerance,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            eps: vec![0.0125, 0.025, 0.05, 0.1],
            t_end: 4.0,
            n_boundary: 4,
            n_dir: 3,
            tol: Tolerance { atol: 1e-12, rtol: 1e-11, ..Tolerance::default() },
        }
    }
}

/// Values at one fan node for one `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSensitivity {
    pub transform_norm: f64,
    /// `|Upsilon(T) (H_other^T - H^T)|`.
    pub flow_change_norm: f64,
    /// `|I f - Upsilon(T) (H_other^T - H^T)|`, the quadratic remainder.
    pub remainder_norm: f64,
    pub travel_time_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSensitivity {
    pub eps: f64,
    pub max_transform: f64,
    pub max_remainder: f64,
    pub max_flow_change: f64,
    pub nodes: Vec<NodeSensitivity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub sweep: Vec<EpsSensitivity>,
    /// Slope of the max-fan remainder against `eps`.
    pub remainder_fit: LineFit,
    /// Slope of the max-fan transform itself.
    pub transform_fit: LineFit,
}

/// `H^T` from the scattering relation: past the exit the ray is a straight line.
fn flow_at(field: &VelocityField, p0: &PhasePoint, t_end: f64, tol: &Tolerance) -> Result<(DVector<f64>, f64)> {
    let rec = flow::scattering_relation(field, p0, tol, t_end)?;
    if rec.l > t_end {
        return Err(Error::Trapped { t_max: t_end });
    }
    let x = &rec.exit.x + &rec.exit.xi * (t_end - rec.l);
    let mut y = x.as_slice().to_vec();
    y.extend(rec.exit.xi.iter());
    Ok((DVector::from_vec(y), rec.l))
}

fn node_sensitivity(
    field: &VelocityField,
    other: &VelocityField,
    f: &TestFunction,
    p0: &PhasePoint,
    cfg: &SensitivityConfig,
) -> Result<NodeSensitivity> {
    let i_f = xray::transform(field, f, p0, &cfg.tol)?;
    let (h0, l0) = flow_at(field, p0, cfg.t_end, &cfg.tol)?;
    let (h1, l1) = flow_at(other, p0, cfg.t_end, &cfg.tol)?;
    let u = linearize::integrate_weight(field, p0, cfg.t_end, &cfg.tol)?.upsilon_end();
    let change = u * (h1 - h0);
    Ok(NodeSensitivity {
        transform_norm: i_f.norm(),
        flow_change_norm: change.norm(),
        remainder_norm: (&i_f - &change).norm(),
        travel_time_change: l1 - l0,
    })
}

/// Runs the chain over the fan for every `eps` and fits the scaling of the maxima.
pub fn sensitivity_chain(field: &VelocityField, potential: &Potential, cfg: &SensitivityConfig) -> Result<SensitivityReport> {
    if cfg.eps.len() < 2 || cfg.eps.iter().any(|e| !(*e > 0.0)) {
        return invalid("sensitivity chain needs at least two positive eps values");
    }
    if !(cfg.t_end > 0.0) {
        return invalid("t_end must be positive");
    }
    let fan = FanGrid::new(&field.domain, cfg.n_boundary, cfg.n_dir)?;
    let mut sweep = Vec::with_capacity(cfg.eps.len());
    for &eps in &cfg.eps {
        let f = TestFunction::perturbation_pair(field, potential.clone(), eps)?;
        let other = field.perturbed(potential.clone(), eps)?;
        let nodes: Vec<NodeSensitivity> = fan
            .nodes
            .par_iter()
            .map(|n| node_sensitivity(field, &other, &f, &n.p0, cfg))
            .collect::<Result<_>>()?;
        let max = |g: fn(&NodeSensitivity) -> f64| nodes.iter().map(g).fold(0.0, f64::max);
        sweep.push(EpsSensitivity {
            eps,
            max_transform: max(|n| n.transform_norm),
            max_remainder: max(|n| n.remainder_norm),
            max_flow_change: max(|n| n.flow_change_norm),
            nodes,
        });
    }
    let eps: Vec<f64> = sweep.iter().map(|s| s.eps).collect();
    let rem: Vec<f64> = sweep.iter().map(|s| s.max_remainder).collect();
    let tr: Vec<f64> = sweep.iter().map(|s| s.max_transform).collect();
    Ok(SensitivityReport { remainder_fit: stats::loglog_fit(&eps, &rem), transform_fit: stats::loglog_fit(&eps, &tr), sweep })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Domain;

    #[test]
    fn remainder_is_quadratic_on_a_small_fan() {
        let lens = VelocityField::gaussian_lens(Domain::unit_ball(3), 0.3, 0.5).unwrap();
        let pot = Potential::Bump { center: vec![0.1, 0.0, 0.1], radius: 0.4, amplitude: 1.0 };
        let cfg = SensitivityConfig { n_boundary: 2, n_dir: 2, ..Default::default() };
        let rep = sensitivity_chain(&lens, &pot, &cfg).unwrap();
        assert!((rep.remainder_fit.slope - 2.0).abs() < 0.15, "{:?}", rep.remainder_fit);
        assert!((rep.transform_fit.slope - 1.0).abs() < 0.1, "{:?}", rep.transform_fit);
    }
}
