//! Experiment configuration (TOML). Every section has defaults, so an empty file
//! is a valid config for any experiment; unknown keys are rejected.

use serde::{Deserialize, Serialize};

use raysense_core::caustics::{CensusConfig, CompletenessConfig};
use raysense_core::xray::{NormalConfig, VectorBump};
use raysense_core::{Domain, FieldKind, Lens, Potential, Tolerance, VelocityField};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional; must match the subcommand when given.
    pub experiment: Option<String>,
    pub seed: u64,
    pub domain: DomainSection,
    pub field: FieldSection,
    pub tolerances: ToleranceSection,
    pub scatter: ScatterSection,
    pub linearize: LinearizeSection,
    pub xray: XraySection,
    pub beam: BeamSection,
    pub caustics: CausticsSection,
    pub sensitivity_chain: SensitivitySection,
    pub selftest: SelftestSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSection {
    pub dim: usize,
    pub radius: f64,
    pub epsilon0: f64,
    /// Defaults to the origin.
    pub center: Option<Vec<f64>>,
}

impl Default for DomainSection {
    fn default() -> Self {
        DomainSection { dim: 3, radius: 1.0, epsilon0: 0.2, center: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSection {
    Constant,
    /// One lens at the domain center.
    GaussianLens {
        alpha: f64,
        sigma: f64,
        #[serde(default)]
        m0: Option<f64>,
    },
    GaussianLensSum {
        lenses: Vec<Lens>,
        #[serde(default)]
        m0: Option<f64>,
    },
    RadialPolynomial {
        coeffs: Vec<f64>,
        #[serde(default)]
        m0: Option<f64>,
    },
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection::GaussianLens { alpha: 0.3, sigma: 0.5, m0: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceSection {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        ToleranceSection { atol: 1e-12, rtol: 1e-11, max_steps: Tolerance::default().max_steps }
    }
}

/// A straight line through the domain: the entering covector of the line with
/// this direction passing at `offset` from the center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RayLine {
    pub direction: Vec<f64>,
    pub offset: Vec<f64>,
}

impl Default for RayLine {
    fn default() -> Self {
        RayLine { direction: vec![1.0, 0.2, 0.1], offset: vec![0.0, 0.2, -0.1] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterSection {
    /// Boundary points of the entering fan.
    pub n_boundary: usize,
    /// Directions per boundary point.
    pub n_dir: usize,
    pub t_max: f64,
}

impl Default for ScatterSection {
    fn default() -> Self {
        ScatterSection { n_boundary: 8, n_dir: 6, t_max: 20.0 }
    }
}

fn default_potential() -> Potential {
    Potential::Bump { center: vec![0.1, 0.05, 0.0], radius: 0.4, amplitude: 1.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizeSection {
    pub ray: RayLine,
    pub t_end: f64,
    pub eps: Vec<f64>,
    pub potential: Potential,
}

impl Default for LinearizeSection {
    fn default() -> Self {
        LinearizeSection {
            ray: RayLine { direction: vec![1.0, 0.1, 0.05], offset: vec![0.0, 0.15, 0.0] },
            t_end: 3.0,
            eps: vec![0.1, 10f64.powf(-1.5), 0.01, 10f64.powf(-2.5)],
            potential: default_potential(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XraySection {
    pub bumps: Vec<VectorBump>,
    pub n_boundary: usize,
    pub n_dir: usize,
    /// Random `(x, xi)` samples for the symbol spectra.
    pub symbol_points: usize,
    pub symbol_nodes: usize,
    /// Symbol samples are drawn from the ball of this radius about the center.
    pub symbol_radius: f64,
    /// Points where `N f` is evaluated (split into `N1`, `N2`); may be empty.
    pub normal_points: Vec<Vec<f64>>,
    /// Quadrature for `N f`; its `alpha` is also the cutoff used for the fan transform.
    pub normal: NormalConfig,
}

impl Default for XraySection {
    fn default() -> Self {
        XraySection {
            bumps: vec![VectorBump {
                center: vec![0.2, -0.1, 0.1],
                radius: 0.3,
                value: vec![0.3, -0.2, 0.5, 1.0, 0.4, -0.7],
                power: 4,
            }],
            n_boundary: 8,
            n_dir: 6,
            symbol_points: 20,
            symbol_nodes: 16,
            symbol_radius: 0.7,
            normal_points: vec![],
            normal: NormalConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamMode {
    Propagate,
    Reflect,
    Residual,
    Interact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamSection {
    pub mode: BeamMode,
    pub ray: RayLine,
    /// Propagation length for `propagate`.
    pub t_end: f64,
    /// Boundary time window `eps1` around the exit.
    pub eps1: f64,
    /// Extra time integrated past the hit.
    pub window: f64,
    pub lambdas: Vec<f64>,
    /// Residual grid: time samples, points per axis, box half-width in beam widths.
    pub n_times: usize,
    pub n_per_axis: usize,
    pub radius_factor: f64,
    /// `eps` values of the perturbed beams for `interact`.
    pub interact_eps: Vec<f64>,
    pub potential: Potential,
}

impl Default for BeamSection {
    fn default() -> Self {
        BeamSection {
            mode: BeamMode::Propagate,
            ray: RayLine::default(),
            t_end: 4.2,
            eps1: 0.2,
            window: 0.1,
            lambdas: vec![50.0, 100.0, 200.0, 400.0, 800.0],
            n_times: 12,
            n_per_axis: 24,
            radius_factor: 6.0,
            interact_eps: vec![0.05, 0.1, 0.2],
            potential: Potential::Bump { center: vec![0.1, 0.1, 0.0], radius: 0.4, amplitude: 1.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausticsSection {
    pub x: Vec<f64>,
    /// Euclidean directions for the ray census.
    pub directions: Vec<Vec<f64>>,
    pub census: CensusConfig,
    pub completeness: bool,
    pub n_theta: usize,
    pub n_xi: usize,
    pub cover_tol: f64,
    pub require_graph_condition: bool,
}

impl Default for CausticsSection {
    fn default() -> Self {
        let c = CompletenessConfig::default();
        CausticsSection {
            x: vec![0.5, 0.3, 0.2],
            directions: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            census: CensusConfig::default(),
            completeness: true,
            n_theta: c.n_theta,
            n_xi: 150,
            cover_tol: c.cover_tol,
            require_graph_condition: c.require_graph_condition,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySection {
    pub eps: Vec<f64>,
    pub t_end: f64,
    pub n_boundary: usize,
    pub n_dir: usize,
    pub potential: Potential,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        let c = raysense_core::sensitivity::SensitivityConfig::default();
        SensitivitySection {
            eps: c.eps,
            t_end: c.t_end,
            n_boundary: c.n_boundary,
            n_dir: c.n_dir,
            potential: Potential::Bump { center: vec![0.1, 0.0, 0.1], radius: 0.4, amplitude: 1.0 },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelftestSection {
    /// Criterion numbers to run; empty runs all.
    pub only: Vec<usize>,
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        bad(format!("{name} must be positive and finite"))
    }
}

fn len_is(name: &str, v: &[f64], d: usize) -> Result<(), ConfigError> {
    if v.len() != d || v.iter().any(|a| !a.is_finite()) {
        return bad(format!("{name} must have {d} finite entries"));
    }
    Ok(())
}

fn positive_list(name: &str, v: &[f64], min_len: usize) -> Result<(), ConfigError> {
    if v.len() < min_len {
        return bad(format!("{name} needs at least {min_len} values"));
    }
    for x in v {
        positive(name, *x)?;
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn domain(&self) -> Result<Domain, ConfigError> {
        let d = &self.domain;
        let dom = Domain {
            dim: d.dim,
            center: d.center.clone().unwrap_or_else(|| vec![0.0; d.dim]),
            radius: d.radius,
            epsilon0: d.epsilon0,
        };
        dom.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(dom)
    }

    pub fn velocity_field(&self) -> Result<VelocityField, ConfigError> {
        let dom = self.domain()?;
        let built = match &self.field {
            FieldSection::Constant => Ok(VelocityField::constant(dom)),
            FieldSection::GaussianLens { alpha, sigma, m0 } => {
                let center = dom.center.clone();
                let lenses = vec![Lens { center, depth: *alpha, width: *sigma }];
                VelocityField::new(dom, FieldKind::GaussianLensSum { lenses }, m0.unwrap_or(4.0))
            }
            FieldSection::GaussianLensSum { lenses, m0 } => {
                VelocityField::new(dom, FieldKind::GaussianLensSum { lenses: lenses.clone() }, m0.unwrap_or(4.0))
            }
            FieldSection::RadialPolynomial { coeffs, m0 } => {
                VelocityField::new(dom, FieldKind::RadialPolynomial { coeffs: coeffs.clone() }, m0.unwrap_or(4.0))
            }
        };
        built.map_err(|e| ConfigError(e.to_string()))
    }

    pub fn tolerance(&self) -> Result<Tolerance, ConfigError> {
        let t = &self.tolerances;
        positive("tolerances.atol", t.atol)?;
        positive("tolerances.rtol", t.rtol)?;
        if t.max_steps == 0 {
            return bad("tolerances.max_steps must be positive");
        }
        Ok(Tolerance { atol: t.atol, rtol: t.rtol, max_steps: t.max_steps, ..Tolerance::default() })
    }

    /// Checks everything the named experiment will read, before any work is done.
    pub fn validate_for(&self, experiment: &str) -> Result<(), ConfigError> {
        if let Some(e) = &self.experiment {
            if e != experiment {
                return bad(format!("config is for experiment '{e}', not '{experiment}'"));
            }
        }
        let field = self.velocity_field()?;
        self.tolerance()?;
        let d = field.dim();
        let check_ray = |name: &str, r: &RayLine| -> Result<(), ConfigError> {
            len_is(&format!("{name}.direction"), &r.direction, d)?;
            len_is(&format!("{name}.offset"), &r.offset, d)?;
            raysense_core::flow::entering_line(&field, &r.direction, &r.offset)
                .map(|_| ())
                .map_err(|e| ConfigError(format!("{name}: {e}")))
        };
        let check_potential = |name: &str, p: &Potential| -> Result<(), ConfigError> {
            field.perturbed(p.clone(), 0.0).map(|_| ()).map_err(|e| ConfigError(format!("{name}: {e}")))
        };
        match experiment {
            "scatter" => {
                let s = &self.scatter;
                if s.n_boundary == 0 || s.n_dir == 0 {
                    return bad("scatter.n_boundary and scatter.n_dir must be positive");
                }
                positive("scatter.t_max", s.t_max)?;
            }
            "linearize" => {
                let s = &self.linearize;
                check_ray("linearize.ray", &s.ray)?;
                positive("linearize.t_end", s.t_end)?;
                positive_list("linearize.eps", &s.eps, 2)?;
                check_potential("linearize.potential", &s.potential)?;
            }
            "xray" => {
                let s = &self.xray;
                if s.n_boundary == 0 || s.n_dir == 0 || s.symbol_nodes == 0 {
                    return bad("xray.n_boundary, xray.n_dir and xray.symbol_nodes must be positive");
                }
                positive("xray.symbol_radius", s.symbol_radius)?;
                if s.symbol_radius > field.domain.radius {
                    return bad("xray.symbol_radius exceeds the domain radius");
                }
                let f = raysense_core::xray::TestFunction::Bumps { bumps: s.bumps.clone() };
                f.validate(&field.domain).map_err(|e| ConfigError(format!("xray.bumps: {e}")))?;
                s.normal.alpha.validate(d).map_err(|e| ConfigError(format!("xray.alpha: {e}")))?;
                for p in &s.normal_points {
                    len_is("xray.normal_points", p, d)?;
                    if !field.domain.contains(p) {
                        return bad("xray.normal_points must lie in the domain");
                    }
                }
                if s.normal.n_angular == 0 || s.normal.n_radial == 0 {
                    return bad("xray.normal resolutions must be positive");
                }
                positive("xray.normal.t_cap", s.normal.t_cap)?;
            }
            "beam" => {
                let s = &self.beam;
                check_ray("beam.ray", &s.ray)?;
                positive("beam.t_end", s.t_end)?;
                positive("beam.eps1", s.eps1)?;
                positive("beam.window", s.window)?;
                positive_list("beam.lambdas", &s.lambdas, 2)?;
                positive("beam.radius_factor", s.radius_factor)?;
                if s.n_times < 2 || s.n_per_axis < 2 {
                    return bad("beam.n_times and beam.n_per_axis must be at least 2");
                }
                if s.mode == BeamMode::Interact {
                    positive_list("beam.interact_eps", &s.interact_eps, 1)?;
                    check_potential("beam.potential", &s.potential)?;
                }
            }
            "caustics" => {
                let s = &self.caustics;
                len_is("caustics.x", &s.x, d)?;
                if !field.domain.contains(&s.x) {
                    return bad("caustics.x must lie in the domain");
                }
                for dir in &s.directions {
                    len_is("caustics.directions", dir, d)?;
                    if dir.iter().all(|a| *a == 0.0) {
                        return bad("caustics.directions must be non-zero");
                    }
                }
                positive("caustics.census.t_max", s.census.t_max)?;
                if s.census.n_steps < 2 {
                    return bad("caustics.census.n_steps must be at least 2");
                }
                if s.completeness && (s.n_theta < 2 * d || s.n_xi == 0) {
                    return bad("caustics.n_theta must be at least 2d and n_xi positive");
                }
                positive("caustics.cover_tol", s.cover_tol)?;
            }
            "sensitivity-chain" => {
                let s = &self.sensitivity_chain;
                positive_list("sensitivity_chain.eps", &s.eps, 2)?;
                positive("sensitivity_chain.t_end", s.t_end)?;
                if s.n_boundary == 0 || s.n_dir == 0 {
                    return bad("sensitivity_chain.n_boundary and n_dir must be positive");
                }
                check_potential("sensitivity_chain.potential", &s.potential)?;
            }
            "selftest" => {
                if let Some(k) = self.selftest.only.iter().find(|k| **k == 0 || **k > crate::criteria::N_CRITERIA) {
                    return bad(format!("selftest.only: no criterion {k}"));
                }
            }
            other => return bad(format!("unknown experiment '{other}'")),
        }
        Ok(())
    }
}
