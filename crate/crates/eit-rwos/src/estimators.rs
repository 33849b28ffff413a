//! Electrode-current estimation: the u0/u1 decomposition, the inclusion
//! constant c, double randomization over electrode starting points, and
//! assembly of the current vector.
//!
//! One direct chain serves both components: its boundary scores give the
//! grounded-inclusion part and its terminal tells whether the inclusion was
//! reached, so the per-path scores arrive as correlated pairs.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::medium::{BoundaryCondition, ForwardModel};
use crate::stats::{PairedMoments, RunningMoments};
use crate::streams::{derive, StreamKey};
use crate::walk::{simulate, ScoreKind, Terminal, WalkParams};

/// Trajectory budget split: `m2` starting points per electrode, `m1` chains
/// per starting point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DoubleRandomizationPlan {
    pub m1: usize,
    pub m2: usize,
}

impl DoubleRandomizationPlan {
    pub fn new(m1: usize, m2: usize) -> Self {
        assert!(m1 >= 1 && m2 >= 1);
        DoubleRandomizationPlan { m1, m2 }
    }

    /// Default split: one chain per starting point.
    pub fn budget(total: usize) -> Self {
        DoubleRandomizationPlan { m1: 1, m2: total }
    }

    pub fn total(&self) -> usize {
        self.m1 * self.m2
    }
}

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("estimator requires a CEM boundary condition")]
    NotCem,
    #[error("{censored} of {total} trajectories censored at the step cap; results would be biased")]
    ExcessCensoring { censored: u64, total: u64 },
    #[error("inclusion term degenerate: sum of xi_1 means {denom:.3e} is within 3 sigma ({sigma:.3e}) of zero; use the no-inclusion path (c = 0)")]
    DegenerateInclusion { denom: f64, sigma: f64 },
    #[error("variance reduction requires an inclusion in the geometry")]
    MissingInclusion,
    #[error("deterministic control-variate providers cannot follow a random medium; use a nested-walk provider")]
    RandomMediumProvider,
}

/// Moments of the per-trajectory score eta for one electrode and component.
#[derive(Debug, Clone)]
pub struct XiEstimate {
    pub electrode: usize,
    pub kind: ScoreKind,
    pub moments: RunningMoments,
}

/// Assembled electrode currents.
#[derive(Debug, Clone)]
pub struct CurrentEstimate {
    pub j: Vec<f64>,
    pub c_hat: f64,
    /// Sum of the assembled currents; zero in expectation, reported as-is.
    pub charge_residual: f64,
    /// Per-electrode (mean, variance, n) of the per-trajectory current
    /// sample U_l/z - (eta_0 + c eta_1)/|E|.
    pub per_electrode: Vec<(f64, f64, u64)>,
    /// Raw paired (eta_0, eta_1) moments per electrode.
    pub pairs: Vec<PairedMoments>,
    pub wall_time: f64,
}

/// Groups evaluated per parallel work item. Fixed so that the reduction
/// order, and therefore every output bit, is independent of the worker
/// count.
pub(crate) const GROUPS_PER_BLOCK: usize = 1024;

pub(crate) fn path_id(electrode: usize, group: usize) -> u64 {
    ((electrode as u64) << 40) | group as u64
}

/// Run the trajectory ensemble of one electrode and accumulate paired
/// scores (eta_0, eta_1) plus the censoring count.
fn run_electrode(
    l: usize,
    model: &ForwardModel,
    params: &WalkParams,
    plan: &DoubleRandomizationPlan,
    seed: u64,
) -> Result<PairedMoments, EstimateError> {
    let (layout, z) = match &model.bc {
        BoundaryCondition::Cem { layout, z, .. } => (layout, *z),
        _ => return Err(EstimateError::NotCem),
    };
    let weight = layout.arc_length() / z;
    let random_medium = model.conductivity.is_random();
    let mean_medium = model.mean_medium();

    let blocks: Vec<(usize, usize)> = (0..plan.m2)
        .step_by(GROUPS_PER_BLOCK)
        .map(|lo| (lo, plan.m2.min(lo + GROUPS_PER_BLOCK)))
        .collect();
    let partial: Vec<(PairedMoments, u64)> = blocks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut pair = PairedMoments::new();
            let mut censored = 0u64;
            for group in lo..hi {
                let key = StreamKey::trajectory(seed, path_id(l, group));
                let mut group_stream = derive(key);
                let x0 = layout.sample_on_electrode(l, &mut group_stream);
                let mut nested;
                for rep in 0..plan.m1 {
                    // With one chain per start point the group stream keeps
                    // driving the walk; split ensembles get nested streams.
                    let stream = if plan.m1 == 1 {
                        &mut group_stream
                    } else {
                        nested = derive(key.nested(rep as u64));
                        &mut nested
                    };
                    let realization = if random_medium {
                        model.sample_medium(stream)
                    } else {
                        mean_medium.clone()
                    };
                    let out =
                        simulate(&x0, model, &realization, params, ScoreKind::U0, stream);
                    let hit = match out.terminal {
                        Terminal::HitInclusion(_) => 1.0,
                        Terminal::AbsorbedAtElectrode { .. } => 0.0,
                        Terminal::Censored => {
                            censored += 1;
                            continue;
                        }
                    };
                    pair.push(weight * out.score_sum, weight * hit);
                }
            }
            (pair, censored)
        })
        .collect();

    let mut pair = PairedMoments::new();
    let mut censored = 0u64;
    for (p, c) in partial {
        pair = pair.merge(p);
        censored += c;
    }
    let total = plan.total() as u64;
    if censored as f64 > 1e-6 * total as f64 {
        return Err(EstimateError::ExcessCensoring { censored, total });
    }
    Ok(pair)
}

/// Moments of the per-trajectory score for one electrode and score kind.
pub fn estimate_xi(
    l: usize,
    kind: ScoreKind,
    model: &ForwardModel,
    params: &WalkParams,
    plan: &DoubleRandomizationPlan,
    seed: u64,
) -> Result<XiEstimate, EstimateError> {
    let pair = run_electrode(l, model, params, plan, seed)?;
    let moments = match kind {
        ScoreKind::U0 => pair.combined(0.0),
        ScoreKind::U1 => {
            RunningMoments::from_parts(pair.n(), pair.means().1, pair.variances().1)
        }
        _ => panic!("estimate_xi takes U0 or U1"),
    };
    Ok(XiEstimate { electrode: l, kind, moments })
}

/// The inclusion constant from the charge-conservation constraint:
/// c = sum_l (|E| U_l / z - xi_0) / sum_l xi_1.
pub fn estimate_c(
    xi0: &[XiEstimate],
    xi1: &[XiEstimate],
    model: &ForwardModel,
) -> Result<f64, EstimateError> {
    let (layout, pattern, z) = match &model.bc {
        BoundaryCondition::Cem { layout, pattern, z } => (layout, pattern, *z),
        _ => return Err(EstimateError::NotCem),
    };
    let e = layout.arc_length();
    let mut num = 0.0;
    let mut denom = 0.0;
    let mut denom_var = 0.0;
    for (x0, x1) in xi0.iter().zip(xi1) {
        num += e * pattern.voltage(x0.electrode) / z - x0.moments.mean();
        denom += x1.moments.mean();
        denom_var += x1.moments.std_error().powi(2);
    }
    let sigma = denom_var.sqrt();
    if denom.abs() < 3.0 * sigma {
        return Err(EstimateError::DegenerateInclusion { denom, sigma });
    }
    Ok(num / denom)
}

/// Direct Monte Carlo electrode currents.
pub fn estimate_currents(
    model: &ForwardModel,
    params: &WalkParams,
    plan: &DoubleRandomizationPlan,
    seed: u64,
) -> Result<CurrentEstimate, EstimateError> {
    let started = Instant::now();
    let (layout, _, _) = cem_parts(model)?;
    let count = layout.count();
    let pairs: Vec<PairedMoments> = (1..=count)
        .map(|l| run_electrode(l, model, params, plan, seed))
        .collect::<Result<_, _>>()?;
    assemble(model, pairs, started.elapsed().as_secs_f64())
}

pub(crate) fn cem_parts(
    model: &ForwardModel,
) -> Result<(&crate::medium::ElectrodeLayout, &crate::medium::VoltagePattern, f64), EstimateError> {
    match &model.bc {
        BoundaryCondition::Cem { layout, pattern, z } => Ok((layout, pattern, *z)),
        _ => Err(EstimateError::NotCem),
    }
}

/// Shared assembly: from per-electrode (eta_0, eta_1) pairs to currents.
pub(crate) fn assemble(
    model: &ForwardModel,
    pairs: Vec<PairedMoments>,
    wall_time: f64,
) -> Result<CurrentEstimate, EstimateError> {
    let (layout, pattern, z) = cem_parts(model)?;
    let e = layout.arc_length();
    let has_inclusion = model.geometry.inclusion().is_some();

    let c_hat = if has_inclusion {
        let mut num = 0.0;
        let mut denom = 0.0;
        let mut denom_var = 0.0;
        for (i, pair) in pairs.iter().enumerate() {
            let (m0, m1) = pair.means();
            num += e * pattern.voltage(i + 1) / z - m0;
            denom += m1;
            denom_var += pair.variances().1 / pair.n() as f64;
        }
        let sigma = denom_var.sqrt();
        if denom.abs() < 3.0 * sigma {
            return Err(EstimateError::DegenerateInclusion { denom, sigma });
        }
        num / denom
    } else {
        0.0
    };

    let mut j = Vec::with_capacity(pairs.len());
    let mut per_electrode = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let combined = pair.combined(c_hat);
        let mean = pattern.voltage(i + 1) / z - combined.mean() / e;
        j.push(mean);
        per_electrode.push((mean, combined.variance() / (e * e), combined.n()));
    }
    let charge_residual = j.iter().sum();
    Ok(CurrentEstimate { j, c_hat, charge_residual, per_electrode, pairs, wall_time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SceneGeometry;
    use crate::medium::{ConductivityField, ElectrodeLayout, VoltagePattern};
    use crate::reference::{solve_cem, CoreCondition};

    fn model(inclusion: Option<f64>, pattern: VoltagePattern) -> ForwardModel {
        let geometry = SceneGeometry::concentric(1.0, inclusion, None, 1e-6).unwrap();
        ForwardModel::new(
            geometry,
            ConductivityField::uniform_unit(),
            BoundaryCondition::Cem { layout: ElectrodeLayout::default_eight(), pattern, z: 0.1 },
        )
        .unwrap()
    }

    #[test]
    fn u1_without_inclusion_is_exactly_zero() {
        let m = model(None, VoltagePattern::alternating(8));
        let params = WalkParams::new(0.05);
        let xi = estimate_xi(3, ScoreKind::U1, &m, &params, &DoubleRandomizationPlan::budget(500), 1)
            .unwrap();
        assert_eq!(xi.moments.mean(), 0.0);
        assert_eq!(xi.moments.variance(), 0.0);
    }

    #[test]
    fn opposite_electrodes_agree_under_symmetry() {
        // Alternating pattern on the 8-fold-symmetric scene: E3 and E7 are
        // related by a half turn.
        let m = model(Some(0.3), VoltagePattern::alternating(8));
        let params = WalkParams::new(0.05);
        let plan = DoubleRandomizationPlan::budget(4000);
        let a = estimate_xi(3, ScoreKind::U0, &m, &params, &plan, 2).unwrap();
        let b = estimate_xi(7, ScoreKind::U0, &m, &params, &plan, 3).unwrap();
        let se = (a.moments.std_error().powi(2) + b.moments.std_error().powi(2)).sqrt();
        assert!((a.moments.mean() - b.moments.mean()).abs() < 3.0 * se);
    }

    #[test]
    fn scores_are_linear_in_the_pattern() {
        let single = VoltagePattern::alternating(8);
        let double = VoltagePattern::new(single.values().iter().map(|v| 2.0 * v).collect())
            .unwrap();
        let params = WalkParams::new(0.05);
        let plan = DoubleRandomizationPlan::budget(300);
        let a = estimate_xi(3, ScoreKind::U0, &model(Some(0.3), single), &params, &plan, 4)
            .unwrap();
        let b = estimate_xi(3, ScoreKind::U0, &model(Some(0.3), double), &params, &plan, 4)
            .unwrap();
        // Identical streams, identical chains; only the boundary data g
        // doubles, and doubling is exact in floating point.
        assert_eq!(b.moments.mean(), 2.0 * a.moments.mean());
    }

    #[test]
    fn pooled_and_split_plans_agree() {
        let m = model(Some(0.3), VoltagePattern::alternating(8));
        let params = WalkParams::new(0.05);
        let a = estimate_xi(3, ScoreKind::U0, &m, &params, &DoubleRandomizationPlan::new(1, 2000), 5)
            .unwrap();
        let b = estimate_xi(3, ScoreKind::U0, &m, &params, &DoubleRandomizationPlan::new(4, 500), 6)
            .unwrap();
        let se = (a.moments.std_error().powi(2) + b.moments.std_error().powi(2)).sqrt();
        assert!((a.moments.mean() - b.moments.mean()).abs() < 3.0 * se);
    }

    #[test]
    fn synthetic_c_matches_the_reference_constant() {
        // Replace the sampled xi by exact integrals from the reference
        // solver: the charge-conservation ratio must reproduce the isolated
        // core constant.
        let m = model(Some(0.3), VoltagePattern::alternating(8));
        let real = m.mean_medium();
        let (_, reference) = solve_cem(&m, &real, CoreCondition::Isolated, 128, 2048).unwrap();

        let grounded = solve_cem(&m, &real, CoreCondition::FixedValue(0.0), 128, 2048)
            .unwrap()
            .0;
        let m1 = model(Some(0.3), VoltagePattern::new(vec![0.0; 8]).unwrap());
        let lifted = solve_cem(&m1, &real, CoreCondition::FixedValue(1.0), 128, 2048)
            .unwrap()
            .0;

        let e = 0.1;
        let z = 0.1;
        let xi = |sol: &crate::reference::FourierSolution, l: usize, kind| XiEstimate {
            electrode: l,
            kind,
            moments: RunningMoments::from_parts(1_000_000, e / z * sol.electrode_mean_value(l), 0.0),
        };
        let xi0: Vec<XiEstimate> = (1..=8).map(|l| xi(&grounded, l, ScoreKind::U0)).collect();
        let xi1: Vec<XiEstimate> = (1..=8).map(|l| xi(&lifted, l, ScoreKind::U1)).collect();
        let c = estimate_c(&xi0, &xi1, &m).unwrap();
        assert!((c - reference.c).abs() < 1e-8, "c = {c}, reference {}", reference.c);
    }

    #[test]
    fn currents_conserve_charge_and_c_vanishes_by_symmetry() {
        let m = model(Some(0.3), VoltagePattern::alternating(8));
        let params = WalkParams::new(0.05);
        let est = estimate_currents(&m, &params, &DoubleRandomizationPlan::budget(4000), 7)
            .unwrap();
        assert_eq!(est.j.len(), 8);
        // Propagated standard error of the charge residual.
        let se: f64 = est
            .per_electrode
            .iter()
            .map(|&(_, var, n)| var / n as f64)
            .sum::<f64>()
            .sqrt();
        assert!(est.charge_residual.abs() <= 3.0 * se, "{} vs {se}", est.charge_residual);
        // The centered inclusion with the alternating pattern forces c = 0.
        assert!(est.c_hat.abs() < 0.1, "c = {}", est.c_hat);
        assert!(est.j.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn degenerate_inclusion_term_is_reported() {
        let m = model(Some(0.3), VoltagePattern::alternating(8));
        let zero = |l| XiEstimate {
            electrode: l,
            kind: ScoreKind::U1,
            moments: RunningMoments::from_parts(1000, 0.0, 1.0),
        };
        let xi0: Vec<XiEstimate> = (1..=8)
            .map(|l| XiEstimate {
                electrode: l,
                kind: ScoreKind::U0,
                moments: RunningMoments::from_parts(1000, 0.0, 1.0),
            })
            .collect();
        let xi1: Vec<XiEstimate> = (1..=8).map(zero).collect();
        assert!(matches!(
            estimate_c(&xi0, &xi1, &m),
            Err(EstimateError::DegenerateInclusion { .. })
        ));
    }
}
