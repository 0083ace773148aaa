//! One function per subcommand. Each computes everything in memory and returns
//! the artifacts to write; nothing here touches the filesystem.

use anyhow::{Context, Result};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use raysense_core::beam::{self, BeamState, ResidualGrid};
use raysense_core::caustics::{self, CompletenessConfig};
use raysense_core::field::check_admissibility;
use raysense_core::flow;
use raysense_core::linearize;
use raysense_core::sensitivity::{self, SensitivityConfig};
use raysense_core::xray::{self, FanGrid, TestFunction};
use raysense_core::{PhasePoint, Tolerance, VelocityField};

use crate::config::{BeamMode, ExperimentConfig};
use crate::criteria;
use crate::output::{num, nums, Output, Table};

pub fn run(name: &str, cfg: &ExperimentConfig) -> Result<Vec<Output>> {
    cfg.validate_for(name)?;
    let field = cfg.velocity_field()?;
    let tol = cfg.tolerance()?;
    match name {
        "scatter" => scatter(cfg, &field, &tol),
        "linearize" => linearize(cfg, &field, &tol),
        "xray" => xray(cfg, &field, &tol),
        "beam" => beam(cfg, &field, &tol),
        "caustics" => caustics(cfg, &field, &tol),
        "sensitivity-chain" => sensitivity_chain(cfg, &field, &tol),
        "selftest" => selftest(cfg),
        other => anyhow::bail!("unknown experiment '{other}'"),
    }
}

fn fan(field: &VelocityField, n_boundary: usize, n_dir: usize) -> Result<FanGrid> {
    FanGrid::new(&field.domain, n_boundary, n_dir).context("building the entering fan")
}

fn scatter(cfg: &ExperimentConfig, field: &VelocityField, tol: &Tolerance) -> Result<Vec<Output>> {
    let s = &cfg.scatter;
    let d = field.dim();
    let grid = fan(field, s.n_boundary, s.n_dir)?;
    let records = grid
        .nodes
        .par_iter()
        .map(|n| flow::scattering_relation(field, &n.p0, tol, s.t_max))
        .collect::<raysense_core::Result<Vec<_>>>()
        .context("scattering relation")?;
    let mut t = Table::with_vectors(&["node"], &[("x0", d), ("xi0", d)], &["l"]);
    t.header.extend((0..d).map(|i| format!("x1_{i}")));
    t.header.extend((0..d).map(|i| format!("xi1_{i}")));
    t.header.push("entered_inner".into());
    for (i, r) in records.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(nums(r.entry.x.iter()));
        row.extend(nums(r.entry.xi.iter()));
        row.push(num(r.l));
        row.extend(nums(r.exit.x.iter()));
        row.extend(nums(r.exit.xi.iter()));
        row.push(r.entered_inner.to_string());
        t.push(row);
    }
    let admissibility = check_admissibility(field, s.t_max, 200, cfg.seed).context("admissibility check")?;
    #[derive(Serialize)]
    struct Summary<'a> {
        n_rays: usize,
        max_travel_time: f64,
        n_entered_inner: usize,
        admissibility: &'a raysense_core::field::AdmissibilityReport,
    }
    let summary = Summary {
        n_rays: records.len(),
        max_travel_time: records.iter().map(|r| r.l).fold(0.0, f64::max),
        n_entered_inner: records.iter().filter(|r| r.entered_inner).count(),
        admissibility: &admissibility,
    };
    Ok(vec![Output::csv("scattering.csv", t), Output::json("summary.json", summary)?])
}

fn linearize(cfg: &ExperimentConfig, field: &VelocityField, tol: &Tolerance) -> Result<Vec<Output>> {
    let s = &cfg.linearize;
    let p0 = flow::entering_line(field, &s.ray.direction, &s.ray.offset)?;
    let report = linearize::remainder_probe(field, &p0, s.t_end, &s.potential, &s.eps, tol).context("remainder probe")?;
    let pair = linearize::fundamental_pair(field, &p0, s.t_end, tol).context("fundamental pair")?;
    let upsilon = linearize::integrate_weight(field, &p0, s.t_end, tol)?.upsilon_end();
    let mut t = Table::new(&["eps", "remainder_norm"]);
    for (e, n) in report.eps.iter().zip(&report.norms) {
        t.push(vec![num(*e), num(*n)]);
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        p0: &'a PhasePoint,
        t_end: f64,
        remainder: &'a linearize::RemainderReport,
        weight_determinant: f64,
        pair_product_defect: f64,
    }
    let summary = Summary {
        p0: &p0,
        t_end: s.t_end,
        remainder: &report,
        weight_determinant: upsilon.determinant(),
        pair_product_defect: pair.product_defect(),
    };
    Ok(vec![Output::csv("remainder.csv", t), Output::json("summary.json", summary)?])
}

fn xray(cfg: &ExperimentConfig, field: &VelocityField, tol: &Tolerance) -> Result<Vec<Output>> {
    let s = &cfg.xray;
    let d = field.dim();
    let f = TestFunction::Bumps { bumps: s.bumps.clone() };
    let alpha = &s.normal.alpha;
    let grid = fan(field, s.n_boundary, s.n_dir)?;
    let values = xray::transform_fan(field, &f, alpha, &grid, tol).context("fan transform")?;
    let mut tt = Table::with_vectors(&["node"], &[("x0", d), ("xi0", d)], &["weight"]);
    tt.header.extend((0..2 * d).map(|i| format!("if_{i}")));
    for (i, (n, v)) in grid.nodes.iter().zip(&values).enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(nums(n.p0.x.iter()));
        row.extend(nums(n.p0.xi.iter()));
        row.push(num(n.weight));
        row.extend(nums(v.iter()));
        tt.push(row);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let center = field.domain.center_vec();
    let samples: Vec<(DVector<f64>, DVector<f64>)> = (0..s.symbol_points)
        .map(|_| {
            let u = unit(&mut rng, d);
            let r = s.symbol_radius * rng.gen::<f64>().powf(1.0 / d as f64);
            (&center + u * r, unit(&mut rng, d))
        })
        .collect();
    let symbols = samples
        .par_iter()
        .map(|(x, xi)| xray::symbol_n1(field, x, xi, alpha, s.symbol_nodes, tol))
        .collect::<Vec<_>>();
    // A sample whose back-traced rays do not leave (trapping) is recorded, not fatal.
    let mut st = Table::with_vectors(&["sample"], &[("x", d), ("xi", d)], &["min_eig", "spd", "support_empty", "status"]);
    for (i, ((x, xi), r)) in samples.iter().zip(&symbols).enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(nums(x.iter()));
        row.extend(nums(xi.iter()));
        match r {
            Ok(r) => row.extend([
                num(r.min_eig),
                r.symmetric_positive_definite.to_string(),
                r.support_empty.to_string(),
                "ok".to_string(),
            ]),
            Err(e) => row.extend([num(f64::NAN), "false".into(), "false".into(), e.to_string()]),
        }
        st.push(row);
    }
    let symbols: Vec<_> = symbols.into_iter().filter_map(|r| r.ok()).collect();
    let mut outs = vec![Output::csv("transform.csv", tt), Output::csv("symbol.csv", st)];

    if !s.normal_points.is_empty() {
        let pts: Vec<DVector<f64>> = s.normal_points.iter().map(|p| DVector::from_vec(p.clone())).collect();
        let splits = xray::normal_split_many(field, std::slice::from_ref(&f), &pts, &s.normal).context("normal operator")?;
        let mut nt = Table::with_vectors(&["point"], &[("x", d), ("n1", 2 * d), ("n2", 2 * d)], &[]);
        for (i, (x, sp)) in pts.iter().zip(&splits[0]).enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(nums(x.iter()));
            row.extend(nums(sp.n1.iter()));
            row.extend(nums(sp.n2.iter()));
            nt.push(row);
        }
        outs.push(Output::csv("normal.csv", nt));
    }
    #[derive(Serialize)]
    struct Summary {
        n_nodes: usize,
        max_transform_norm: f64,
        n_symbol_samples: usize,
        n_symbol_failed: usize,
        n_symbol_spd: usize,
        min_symbol_eig: f64,
    }
    let summary = Summary {
        n_nodes: grid.len(),
        max_transform_norm: values.iter().map(|v| v.norm()).fold(0.0, f64::max),
        n_symbol_samples: s.symbol_points,
        n_symbol_failed: s.symbol_points - symbols.len(),
        n_symbol_spd: symbols.iter().filter(|r| r.symmetric_positive_definite).count(),
        min_symbol_eig: symbols.iter().filter(|r| !r.support_empty).map(|r| r.min_eig).fold(f64::INFINITY, f64::min),
    };
    outs.push(Output::json("summary.json", summary)?);
    Ok(outs)
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn beam(cfg: &ExperimentConfig, field: &VelocityField, tol: &Tolerance) -> Result<Vec<Output>> {
    let s = &cfg.beam;
    let d = field.dim();
    let p0 = flow::entering_line(field, &s.ray.direction, &s.ray.offset)?;
    match s.mode {
        BeamMode::Propagate | BeamMode::Residual => {
            let s0 = BeamState::initial(p0.x.clone(), p0.xi.clone(), 0.0);
            let path = beam::propagate_beam(field, &s0, 0.0, s.t_end, tol).context("beam propagation")?;
            #[derive(Serialize)]
            struct PathSummary {
                t_end: f64,
                im_floor: f64,
                m_ceiling: f64,
                symmetry_drift: f64,
            }
            let summary =
                PathSummary { t_end: s.t_end, im_floor: path.im_floor, m_ceiling: path.m_ceiling, symmetry_drift: path.symmetry_drift };
            if s.mode == BeamMode::Propagate {
                let mut t = Table::with_vectors(&["t"], &[("x", d), ("xi", d)], &["min_eig_im_m", "amp_re", "amp_im"]);
                for k in 0..=s.n_times {
                    let tk = s.t_end * k as f64 / s.n_times as f64;
                    let st = path.state_at(tk)?;
                    let mut row = vec![num(tk)];
                    row.extend(nums(st.x.iter()));
                    row.extend(nums(st.xi.iter()));
                    row.extend([num(beam::min_eig_im(&st.m)), num(st.a.re), num(st.a.im)]);
                    t.push(row);
                }
                return Ok(vec![Output::csv("beam_path.csv", t), Output::json("summary.json", summary)?]);
            }
            let grid = ResidualGrid {
                t_start: 0.0,
                t_end: s.t_end,
                n_times: s.n_times,
                n_per_axis: s.n_per_axis,
                radius_factor: s.radius_factor,
            };
            let scan = beam::residual_scan(field, &path, &s.lambdas, &grid).context("residual scan")?;
            let mut t = Table::new(&["lambda", "residual", "beam_norm"]);
            for r in &scan.records {
                t.push(vec![num(r.lambda), num(r.residual), num(r.beam_norm)]);
            }
            #[derive(Serialize)]
            struct Summary {
                path: PathSummary,
                fit: raysense_core::stats::LineFit,
            }
            Ok(vec![Output::csv("residual.csv", t), Output::json("summary.json", Summary { path: summary, fit: scan.fit })?])
        }
        BeamMode::Reflect => {
            let bb = beam::incident_beam(field, &p0, s.eps1, s.window, tol).context("incident beam")?;
            let (_, reflected) = beam::reflect_beam(field, &bb, s.window, tol).context("reflection")?;
            let scan = beam::boundary_window_scan(field, &bb, &reflected, &s.lambdas, s.n_per_axis, s.radius_factor)
                .context("boundary window scan")?;
            let mut t =
                Table::new(&["lambda", "beam_norm", "frozen_gap", "neumann_residual", "neumann_main", "dirichlet_sum"]);
            for r in &scan.records {
                t.push(
                    [r.lambda, r.beam_norm, r.frozen_gap, r.neumann_residual, r.neumann_main, r.dirichlet_sum]
                        .iter()
                        .map(|x| num(*x))
                        .collect(),
                );
            }
            #[derive(Serialize)]
            struct Summary<'a> {
                t_hit: f64,
                x_hit: &'a DVector<f64>,
                xi_hit: &'a DVector<f64>,
                scan: &'a beam::BoundaryWindowScan,
            }
            let summary = Summary { t_hit: bb.t1, x_hit: &bb.hit.x, xi_hit: &bb.hit.xi, scan: &scan };
            Ok(vec![Output::csv("boundary_window.csv", t), Output::json("summary.json", summary)?])
        }
        BeamMode::Interact => {
            let series = beam::interaction_sweep(field, &p0, &s.potential, &s.interact_eps, &s.lambdas, s.eps1, tol)
                .context("interaction sweep")?;
            let mut t = Table::new(&["eps", "delta_z", "lambda", "log_abs", "truncation_bound"]);
            for sr in &series {
                for ((l, v), b) in sr.lambdas.iter().zip(&sr.log_abs).zip(&sr.truncation_bounds) {
                    t.push(vec![num(sr.eps), num(sr.delta_z), num(*l), num(*v), num(*b)]);
                }
            }
            Ok(vec![Output::csv("interaction.csv", t), Output::json("summary.json", &series)?])
        }
    }
}

fn caustics(cfg: &ExperimentConfig, field: &VelocityField, tol: &Tolerance) -> Result<Vec<Output>> {
    let s = &cfg.caustics;
    let d = field.dim();
    let x = DVector::from_vec(s.x.clone());
    let censuses = s
        .directions
        .par_iter()
        .map(|dir| caustics::ray_census(field, &x, &DVector::from_vec(dir.clone()), &s.census, tol))
        .collect::<raysense_core::Result<Vec<_>>>()
        .context("ray census")?;
    let mut t = Table::with_vectors(&["direction", "t"], &[("xi", d)], &["det", "bracket_lo", "bracket_hi", "sign_change"]);
    for (i, roots) in censuses.iter().enumerate() {
        for r in roots {
            let mut row = vec![i.to_string(), num(r.t)];
            row.extend(nums(r.xi.iter()));
            row.extend([num(r.det), num(r.bracket.0), num(r.bracket.1), r.sign_change.to_string()]);
            t.push(row);
        }
    }
    let mut outs = vec![Output::csv("census.csv", t)];
    if s.completeness {
        let cc = CompletenessConfig {
            n_theta: s.n_theta,
            n_xi: s.n_xi,
            cover_tol: s.cover_tol,
            census: s.census.clone(),
            require_graph_condition: s.require_graph_condition,
            seed: cfg.seed,
            ..CompletenessConfig::default()
        };
        let cert = caustics::complete_set_search(field, &x, &cc, tol).context("complete set search")?;
        outs.push(Output::json("completeness.json", &cert)?);
    }
    Ok(outs)
}

fn sensitivity_chain(cfg: &ExperimentConfig, field: &VelocityField, tol: &Tolerance) -> Result<Vec<Output>> {
    let s = &cfg.sensitivity_chain;
    let sc = SensitivityConfig { eps: s.eps.clone(), t_end: s.t_end, n_boundary: s.n_boundary, n_dir: s.n_dir, tol: *tol };
    let report = sensitivity::sensitivity_chain(field, &s.potential, &sc).context("sensitivity chain")?;
    let mut t = Table::new(&["eps", "node", "transform_norm", "flow_change_norm", "remainder_norm", "travel_time_change"]);
    for e in &report.sweep {
        for (i, n) in e.nodes.iter().enumerate() {
            t.push(vec![
                num(e.eps),
                i.to_string(),
                num(n.transform_norm),
                num(n.flow_change_norm),
                num(n.remainder_norm),
                num(n.travel_time_change),
            ]);
        }
    }
    #[derive(Serialize)]
    struct Summary {
        eps: Vec<f64>,
        max_transform: Vec<f64>,
        max_remainder: Vec<f64>,
        remainder_fit: raysense_core::stats::LineFit,
        transform_fit: raysense_core::stats::LineFit,
    }
    let summary = Summary {
        eps: report.sweep.iter().map(|e| e.eps).collect(),
        max_transform: report.sweep.iter().map(|e| e.max_transform).collect(),
        max_remainder: report.sweep.iter().map(|e| e.max_remainder).collect(),
        remainder_fit: report.remainder_fit,
        transform_fit: report.transform_fit,
    };
    Ok(vec![Output::csv("sensitivity.csv", t), Output::json("summary.json", summary)?])
}

fn selftest(cfg: &ExperimentConfig) -> Result<Vec<Output>> {
    let reports = criteria::run_criteria(&cfg.selftest.only, |r| eprintln!("{}", r.line()));
    let mut t = Table::new(&["id", "name", "pass", "known_limit", "seconds", "detail"]);
    for r in &reports {
        t.push(vec![
            r.id.to_string(),
            r.name.to_string(),
            r.pass.to_string(),
            r.known_limit.to_string(),
            format!("{:.1}", r.seconds),
            r.detail.clone(),
        ]);
    }
    Ok(vec![Output::csv("criteria.csv", t), Output::json("criteria.json", &reports)?])
}
