//! The experiment families behind the CLI: single-point potential studies,
//! electrode-current tables, bias sweeps, efficiency comparisons, random
//! media, and field exports. Every experiment is a pure function of
//! (config, seed); outputs carry the config hash so results are traceable.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, ProviderKind, VrConfig};
use crate::estimators::{
    estimate_currents, CurrentEstimate, EstimateError, GROUPS_PER_BLOCK,
};
use crate::geometry::Point;
use crate::medium::{BoundaryCondition, ForwardModel};
use crate::reference::{solve_cem, solve_idealized, CoreCondition, FourierSolution, SolveError};
use crate::stats::RunningMoments;
use crate::streams::{derive, StreamKey};
use crate::vr::{estimate_currents_vr, ControlVariateProvider};
use crate::walk::{simulate, ScoreKind, WalkParams};

/// The single point probed by the potential experiment.
pub const PROBE_POINT: Point = Point { x: 0.99361, y: 0.11286 };

/// Electrode whose current the tables report (E3, centered at (1, 0)).
pub const REPORTED_ELECTRODE: usize = 3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("experiment: {0}")]
    Unsupported(String),
}

/// A rectangular result table with provenance metadata.
///
/// The wall time is kept out of the serialized form so that the CSV is a
/// pure function of (config, seed).
#[derive(Debug, Clone)]
pub struct OutputTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub metadata: Vec<(String, String)>,
    pub wall_time: f64,
}

impl OutputTable {
    fn new(config: &ExperimentConfig, experiment: &str, columns: &[&str]) -> Self {
        OutputTable {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            metadata: vec![
                ("experiment".into(), experiment.into()),
                ("config_hash".into(), format!("{:016x}", config.hash())),
                ("seed".into(), config.seed.to_string()),
                ("version".into(), env!("CARGO_PKG_VERSION").into()),
            ],
            wall_time: 0.0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.metadata {
            let _ = writeln!(out, "# {key} = {value}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Least-squares slope of log(y) against log(x).
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.abs().ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Monte Carlo estimate of the potential at a fixed interior point.
pub fn mc_potential(
    model: &ForwardModel,
    start: &Point,
    params: &WalkParams,
    n: usize,
    seed: u64,
) -> RunningMoments {
    let kind = match model.bc {
        BoundaryCondition::IdealizedRobin { .. } => ScoreKind::IdealizedPotential,
        BoundaryCondition::Cem { .. } => ScoreKind::U0,
    };
    let random_medium = model.conductivity.is_random();
    let mean_medium = model.mean_medium();
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(GROUPS_PER_BLOCK)
        .map(|lo| (lo, n.min(lo + GROUPS_PER_BLOCK)))
        .collect();
    let partial: Vec<RunningMoments> = blocks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut moments = RunningMoments::new();
            for group in lo..hi {
                let mut stream = derive(StreamKey::trajectory(seed, group as u64));
                let realization = if random_medium {
                    model.sample_medium(&mut stream)
                } else {
                    mean_medium.clone()
                };
                let out = simulate(start, model, &realization, params, kind, &mut stream);
                moments.push(out.score_sum);
            }
            moments
        })
        .collect();
    partial.into_iter().fold(RunningMoments::new(), |acc, m| acc.merge(m))
}

fn idealized_core(model: &ForwardModel) -> CoreCondition {
    // The idealized benchmark grounds its perfectly conducting core.
    if model.geometry.inclusion().is_some() {
        CoreCondition::FixedValue(0.0)
    } else {
        CoreCondition::None
    }
}

fn cem_core(model: &ForwardModel) -> CoreCondition {
    if model.geometry.inclusion().is_some() {
        CoreCondition::Isolated
    } else {
        CoreCondition::None
    }
}

fn reference_currents(model: &ForwardModel) -> Result<(FourierSolution, f64), ExperimentError> {
    let real = model.mean_medium();
    let (solution, currents) = solve_cem(model, &real, cem_core(model), 128, 2048)?;
    Ok((solution, currents.j[REPORTED_ELECTRODE - 1]))
}

fn build_provider(
    vr: &VrConfig,
    model: &ForwardModel,
) -> Result<ControlVariateProvider, ExperimentError> {
    let companion = model.without_inclusion();
    match vr.provider {
        ProviderKind::Analytic => Err(ExperimentError::Unsupported(
            "the analytic provider applies to idealized Robin problems only; \
             use the reference or nested_walk provider for electrode currents"
                .into(),
        )),
        ProviderKind::Reference => {
            let real = companion.mean_medium();
            let (solution, _) =
                solve_cem(&companion, &real, CoreCondition::None, vr.reference_modes, 2048)?;
            Ok(ControlVariateProvider::Reference { solution })
        }
        ProviderKind::NestedWalk => Ok(ControlVariateProvider::NestedWalk {
            k: vr.k,
            sampler: vr.sampler.to_sampler(),
        }),
    }
}

fn sigma_of(estimate: &CurrentEstimate, electrode: usize) -> f64 {
    let (_, var, n) = estimate.per_electrode[electrode - 1];
    (var / n as f64).sqrt()
}

/// Potential at the probe point over the configured h sweep.
pub fn run_potential(config: &ExperimentConfig) -> Result<OutputTable, ExperimentError> {
    let started = Instant::now();
    let model = config.build_model(config.inclusion_radii()[0])?;
    let real = model.mean_medium();
    let reference = match model.bc {
        BoundaryCondition::IdealizedRobin { .. } => {
            solve_idealized(&model, &real, idealized_core(&model))?.evaluate(&PROBE_POINT)
        }
        BoundaryCondition::Cem { .. } => {
            solve_cem(&model, &real, cem_core(&model), 128, 2048)?.0.evaluate(&PROBE_POINT)
        }
    };
    let mut table =
        OutputTable::new(config, "potential", &["h", "estimate", "std_error", "bias_vs_reference", "eoc", "n"]);
    let n = config.plan().total();
    let mut previous: Option<(f64, f64)> = None;
    for h in config.walk.h.values() {
        let params = config.walk_params(h);
        let moments = mc_potential(&model, &PROBE_POINT, &params, n, config.seed);
        let bias = moments.mean() - reference;
        let eoc = match previous {
            Some((ph, pb)) => (bias.abs() / pb).ln() / (h / ph).ln(),
            None => f64::NAN,
        };
        previous = Some((h, bias.abs()));
        table.rows.push(vec![h, moments.mean(), moments.std_error(), bias, eoc, n as f64]);
    }
    table.metadata.push(("reference".into(), format!("{reference}")));
    table.wall_time = started.elapsed().as_secs_f64();
    Ok(table)
}

/// Electrode-current table over the configured inclusion radii.
pub fn run_currents(config: &ExperimentConfig) -> Result<OutputTable, ExperimentError> {
    let started = Instant::now();
    let h = config.walk.h.values()[0];
    let params = config.walk_params(h);
    let plan = config.plan();
    let with_vr = config.vr.is_some() && config.scene.inclusion_radius.is_some();
    let columns: &[&str] = if with_vr {
        &["r", "j_ref", "j_direct", "sigma_direct", "j_vr", "sigma_vr", "c_hat", "charge_residual"]
    } else {
        &["r", "j_ref", "j_direct", "sigma_direct", "c_hat", "charge_residual"]
    };
    let mut table = OutputTable::new(config, "currents", columns);
    for radius in config.inclusion_radii() {
        let model = config.build_model(radius)?;
        let (_, j_ref) = reference_currents(&model)?;
        let direct = estimate_currents(&model, &params, &plan, config.seed)?;
        let mut row = vec![
            radius.unwrap_or(0.0),
            j_ref,
            direct.j[REPORTED_ELECTRODE - 1],
            sigma_of(&direct, REPORTED_ELECTRODE),
        ];
        if with_vr {
            let provider = build_provider(config.vr.as_ref().unwrap(), &model)?;
            let vr = estimate_currents_vr(&model, &params, &plan, &provider, config.seed)?;
            row.push(vr.j[REPORTED_ELECTRODE - 1]);
            row.push(sigma_of(&vr, REPORTED_ELECTRODE));
        }
        row.push(direct.c_hat);
        row.push(direct.charge_residual);
        table.rows.push(row);
    }
    table.wall_time = started.elapsed().as_secs_f64();
    Ok(table)
}

/// Bias against the semi-analytic reference over the h sweep, with the
/// fitted order of convergence in the metadata.
pub fn run_bias_study(config: &ExperimentConfig) -> Result<OutputTable, ExperimentError> {
    let started = Instant::now();
    let model = config.build_model(config.inclusion_radii()[0])?;
    let (_, j_ref) = reference_currents(&model)?;
    let plan = config.plan();
    let mut table = OutputTable::new(config, "bias", &["h", "bias", "log_h", "log_bias"]);
    let mut points = Vec::new();
    for h in config.walk.h.values() {
        let params = config.walk_params(h);
        let estimate = estimate_currents(&model, &params, &plan, config.seed)?;
        let bias = estimate.j[REPORTED_ELECTRODE - 1] - j_ref;
        points.push((h, bias));
        table.rows.push(vec![h, bias, h.ln(), bias.abs().ln()]);
    }
    let eoc = fit_loglog_slope(&points);
    table.metadata.push(("eoc".into(), format!("{eoc}")));
    table.metadata.push(("j_ref".into(), format!("{j_ref}")));
    table.wall_time = started.elapsed().as_secs_f64();
    Ok(table)
}

/// Efficiency C = sample variance x wall time for the direct estimator, the
/// reference-provider control variate, and nested-walk variants.
pub fn run_efficiency(config: &ExperimentConfig) -> Result<OutputTable, ExperimentError> {
    let started = Instant::now();
    let vr = config.vr.clone().ok_or_else(|| {
        ExperimentError::Unsupported("efficiency comparison needs a [vr] section".into())
    })?;
    let ks = if vr.ks.is_empty() { vec![vr.k] } else { vr.ks.clone() };
    let h = config.walk.h.values()[0];
    let params = config.walk_params(h);
    let plan = config.plan();

    let mut columns = vec!["r".to_string(), "c_direct".to_string(), "c_reference".to_string()];
    for k in &ks {
        columns.push(format!("c_rw_{k}"));
        columns.push(format!("c_uw_{k}"));
    }
    let mut table = OutputTable::new(config, "efficiency", &[]);
    table.columns = columns;

    let cost = |estimate: &CurrentEstimate| {
        estimate.per_electrode[REPORTED_ELECTRODE - 1].1 * estimate.wall_time
    };
    for radius in config.inclusion_radii() {
        let model = config.build_model(radius)?;
        let mut row = vec![radius.unwrap_or(0.0)];
        row.push(cost(&estimate_currents(&model, &params, &plan, config.seed)?));
        let companion = model.without_inclusion();
        let real = companion.mean_medium();
        let (solution, _) =
            solve_cem(&companion, &real, CoreCondition::None, vr.reference_modes, 2048)?;
        let reference = ControlVariateProvider::Reference { solution };
        row.push(cost(&estimate_currents_vr(&model, &params, &plan, &reference, config.seed)?));
        for &k in &ks {
            for sampler in [crate::walk::Sampler::Centered, crate::walk::Sampler::Uncentered] {
                let provider = ControlVariateProvider::NestedWalk { k, sampler };
                row.push(cost(&estimate_currents_vr(
                    &model,
                    &params,
                    &plan,
                    &provider,
                    config.seed,
                )?));
            }
        }
        table.rows.push(row);
    }
    table.wall_time = started.elapsed().as_secs_f64();
    Ok(table)
}

/// Random-medium currents with and without the nested-walk control variate.
pub fn run_random_medium(config: &ExperimentConfig) -> Result<OutputTable, ExperimentError> {
    let started = Instant::now();
    if !config.conductivity().is_random() {
        return Err(ExperimentError::Unsupported(
            "random-medium experiment needs interval-valued medium parameters".into(),
        ));
    }
    let h = config.walk.h.values()[0];
    let params = config.walk_params(h);
    let plan = config.plan();
    let with_vr = config.vr.is_some() && config.scene.inclusion_radius.is_some();
    let columns: &[&str] = if with_vr {
        &["r", "e_j3", "sigma_direct", "c_direct", "e_j3_vr", "sigma_vr", "c_vr"]
    } else {
        &["r", "e_j3", "sigma_direct", "c_direct"]
    };
    let mut table = OutputTable::new(config, "random_medium", columns);
    for radius in config.inclusion_radii() {
        let model = config.build_model(radius)?;
        let direct = estimate_currents(&model, &params, &plan, config.seed)?;
        let mut row = vec![
            radius.unwrap_or(0.0),
            direct.j[REPORTED_ELECTRODE - 1],
            sigma_of(&direct, REPORTED_ELECTRODE),
            direct.per_electrode[REPORTED_ELECTRODE - 1].1 * direct.wall_time,
        ];
        if with_vr {
            let provider = build_provider(config.vr.as_ref().unwrap(), &model)?;
            let vr = estimate_currents_vr(&model, &params, &plan, &provider, config.seed)?;
            row.push(vr.j[REPORTED_ELECTRODE - 1]);
            row.push(sigma_of(&vr, REPORTED_ELECTRODE));
            row.push(vr.per_electrode[REPORTED_ELECTRODE - 1].1 * vr.wall_time);
        }
        table.rows.push(row);
    }
    table.wall_time = started.elapsed().as_secs_f64();
    Ok(table)
}

/// Polar-grid potential and boundary current density from the reference
/// solve; boundary density is only defined on the r = 1 rows.
pub fn run_field_export(config: &ExperimentConfig) -> Result<OutputTable, ExperimentError> {
    let started = Instant::now();
    let model = config.build_model(config.inclusion_radii()[0])?;
    let real = model.mean_medium();
    let solution = match model.bc {
        BoundaryCondition::IdealizedRobin { .. } => {
            solve_idealized(&model, &real, idealized_core(&model))?
        }
        BoundaryCondition::Cem { .. } => solve_cem(&model, &real, cem_core(&model), 128, 2048)?.0,
    };
    let mut table =
        OutputTable::new(config, "field", &["r", "theta", "potential", "boundary_density"]);
    let angles = 256usize;
    for i in 0..=20 {
        let r = i as f64 / 20.0;
        for j in 0..angles {
            let theta = j as f64 * std::f64::consts::TAU / angles as f64;
            let p = Point::new(r * theta.cos(), r * theta.sin());
            let density = if i == 20 {
                solution.boundary_current_density(theta)
            } else {
                f64::NAN
            };
            table.rows.push(vec![r, theta, solution.evaluate(&p), density]);
        }
    }
    table.wall_time = started.elapsed().as_secs_f64();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_slope_recovers_a_planted_power_law() {
        let points: Vec<(f64, f64)> =
            [0.04f64, 0.08, 0.12, 0.16, 0.2].iter().map(|&h| (h, 3.1 * h.powf(1.7))).collect();
        assert!((fit_loglog_slope(&points) - 1.7).abs() < 1e-12);
    }

    fn idealized_config(h_list: &str) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            r#"
seed = 5
[scene]
inclusion_radius = 0.3
[bc]
kind = "idealized_robin"
z = 0.5
phi = [{{ k = 4, cos = 1.0 }}]
[walk]
h = {h_list}
[plan]
m2 = 20000
"#
        ))
        .unwrap()
    }

    #[test]
    fn potential_experiment_reproduces_the_idealized_value() {
        let table = run_potential(&idealized_config("0.05")).unwrap();
        assert_eq!(table.rows.len(), 1);
        let row = &table.rows[0];
        let (estimate, se, bias) = (row[1], row[2], row[3]);
        // 0.2998 with the O(h^2) walk bias and the Monte Carlo band.
        assert!((estimate - 0.2998).abs() < 3.0 * se + 0.01, "{estimate} +- {se}");
        assert!(bias.abs() < 3.0 * se + 0.01);
    }

    #[test]
    fn csv_output_is_stable_and_annotated() {
        let config = idealized_config("[0.1, 0.2]");
        let a = run_potential(&config).unwrap();
        let b = run_potential(&config).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let csv = a.to_csv();
        assert!(csv.starts_with("# experiment = potential\n"));
        assert!(csv.contains("\nh,estimate,"));
        assert_eq!(csv.lines().count(), 5 + 1 + 2); // metadata + header + rows
    }

    #[test]
    fn currents_experiment_matches_its_reference_within_noise() {
        let config = ExperimentConfig::parse(
            r#"
seed = 9
[scene]
inclusion_radius = 0.3
[bc]
kind = "cem"
z = 0.1
pattern = "alternating"
[walk]
h = 0.01
[plan]
m2 = 2000
[vr]
provider = "reference"
"#,
        )
        .unwrap();
        let table = run_currents(&config).unwrap();
        let row = &table.rows[0];
        let (j_ref, j_direct, sigma, j_vr, sigma_vr) = (row[1], row[2], row[3], row[4], row[5]);
        assert!((j_direct - j_ref).abs() < 3.0 * sigma + 0.1, "{j_direct} vs {j_ref}");
        // The conditional-sampling variance at this radius is far below the
        // O(h) discretization bias (~0.02 at h=0.01), so the allowance is a
        // bias budget, not a noise band.
        assert!((j_vr - j_ref).abs() < 3.0 * sigma_vr + 0.03, "{j_vr} vs {j_ref}");
        assert!(sigma_vr < sigma);
    }

    #[test]
    fn field_export_is_consistent_with_the_electrode_currents() {
        let config = ExperimentConfig::parse(
            r#"
seed = 2
[scene]
[bc]
kind = "cem"
z = 0.1
pattern = "alternating"
[walk]
h = 0.05
[plan]
m2 = 10
"#,
        )
        .unwrap();
        let table = run_field_export(&config).unwrap();
        let boundary: Vec<&Vec<f64>> =
            table.rows.iter().filter(|row| row[0] == 1.0).collect();
        assert_eq!(boundary.len(), 256);
        // Trapezoid integral of the density over E3's arc vs the solved J3.
        let model = config.build_model(None).unwrap();
        let real = model.mean_medium();
        let (solution, currents) = solve_cem(&model, &real, CoreCondition::None, 128, 2048).unwrap();
        let m = 4000;
        let mut integral = 0.0;
        for i in 0..=m {
            let theta = -0.05 + 0.1 * i as f64 / m as f64;
            let w = if i == 0 || i == m { 0.5 } else { 1.0 };
            integral += w * solution.boundary_current_density(theta) * 0.1 / m as f64;
        }
        let j3 = integral / 0.1;
        // The density has inverse-square-root edge singularities, so the
        // K = 128 truncation misses part of the near-edge mass; the solved
        // currents come from the mean-trace identity and do not.
        assert!((j3 - currents.j[2]).abs() < 0.1 * currents.j[2].abs(), "{j3} vs {}", currents.j[2]);
        // Gaps carry no flux; edges spike above the electrode center.
        // The no-flux gap condition holds weakly: the truncated density is
        // small there compared to the electrode-scale density (~5).
        let gap = solution.boundary_current_density(0.4);
        assert!(gap.abs() < 0.05, "{gap}");
        // The density diverges at the electrode edges; the truncated series
        // smooths the spike but still peaks well above the center value.
        let center = solution.boundary_current_density(0.0).abs();
        let edge = (0..30)
            .map(|i| solution.boundary_current_density(0.02 + 0.001 * i as f64).abs())
            .fold(0.0f64, f64::max);
        assert!(edge > 1.15 * center, "edge {edge} vs center {center}");
    }
}
