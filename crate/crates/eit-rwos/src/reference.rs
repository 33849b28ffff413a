//! Semi-analytic solver for concentric scenes: per-mode radial transfer,
//! Dirichlet-to-Neumann assembly at the outer boundary, and a least-squares
//! CEM solve in a truncated trigonometric basis.
//!
//! Supplies reference electrode currents, control variates and test oracles.

use std::f64::consts::TAU;

use thiserror::Error;

use crate::geometry::Point;
use crate::medium::{BoundaryCondition, ForwardModel, MediumRealization};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("normal equations not positive definite (pivot {pivot:.3e} at row {row}); increase the collocation size Q or reduce K")]
    IllConditioned { row: usize, pivot: f64 },
    #[error("solver requires a {0} boundary condition")]
    WrongBoundaryCondition(&'static str),
}

/// Condition imposed on the inclusion boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoreCondition {
    /// No inclusion present.
    None,
    /// Perfectly conducting inclusion: constant potential (solved for) and
    /// zero net flux.
    Isolated,
    /// Auxiliary problems: prescribed constant potential on the inclusion.
    FixedValue(f64),
}

/// One annular layer, innermost first.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    r_inner: f64,
    r_outer: f64,
    kappa: f64,
}

/// Radial factor of one Fourier mode: per layer, coefficients (a, b) of
/// a r^k + b r^-k (k >= 1) or a + b ln r (k = 0), normalized to value 1 at
/// the outer boundary.
#[derive(Debug, Clone)]
struct ModeProfile {
    k: usize,
    per_layer: Vec<(f64, f64)>,
    /// d/dr at r = outer radius (after normalization).
    deriv_at_boundary: f64,
}

fn layers_for(model: &ForwardModel, realization: &MediumRealization) -> (Vec<Layer>, f64) {
    let core_radius = model.geometry.inclusion().map_or(0.0, |c| c.radius);
    let outer_r = model.geometry.outer().radius;
    let mut layers = Vec::new();
    match realization.interface_radius {
        Some(ri) => {
            layers.push(Layer { r_inner: core_radius, r_outer: ri, kappa: realization.kappa_inner });
            layers.push(Layer { r_inner: ri, r_outer: outer_r, kappa: realization.kappa_outer });
        }
        None => {
            layers.push(Layer { r_inner: core_radius, r_outer: outer_r, kappa: realization.kappa_outer });
        }
    }
    (layers, outer_r)
}

/// Build the radial profile of mode `k` given the inner condition, and
/// normalize so the boundary trace is 1.
fn mode_profile(k: usize, layers: &[Layer], core: CoreCondition) -> ModeProfile {
    let rho = layers[0].r_inner;
    let has_core = rho > 0.0 && core != CoreCondition::None;
    // Seed coefficients in the innermost layer.
    let (mut a, mut b) = if k == 0 {
        match (has_core, core) {
            // Zero net flux (or regularity at the origin) kills the ln branch.
            (false, _) | (true, CoreCondition::Isolated) => (1.0, 0.0),
            // Vanish at the core: ln(r / rho).
            (true, CoreCondition::FixedValue(_)) => (-rho.ln(), 1.0),
            _ => unreachable!(),
        }
    } else if has_core {
        // Angular variation vanishes at the core radius.
        (1.0, -rho.powi(2 * k as i32))
    } else {
        (1.0, 0.0)
    };

    let mut per_layer = vec![(a, b)];
    for w in layers.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let r = lo.r_outer;
        if k == 0 {
            // Continuity of value and of kappa * b / r.
            let b2 = lo.kappa * b / hi.kappa;
            let a2 = a + (b - b2) * r.ln();
            a = a2;
            b = b2;
        } else {
            let rk = r.powi(k as i32);
            let v = a * rk + b / rk;
            let wv = lo.kappa / hi.kappa * (a * rk - b / rk);
            a = (v + wv) / (2.0 * rk);
            b = (v - wv) * rk / 2.0;
        }
        per_layer.push((a, b));
    }

    let r1 = layers.last().unwrap().r_outer;
    let (value, deriv) = if k == 0 {
        (a + b * r1.ln(), b / r1)
    } else {
        let rk = r1.powi(k as i32);
        let kf = k as f64;
        (a * rk + b / rk, kf * (a * rk / r1 - b / (rk * r1)))
    };
    assert!(value != 0.0, "degenerate mode {k}");
    for c in &mut per_layer {
        c.0 /= value;
        c.1 /= value;
    }
    ModeProfile { k, per_layer, deriv_at_boundary: deriv / value }
}

/// Logarithmic derivative of mode `k` at the outer boundary:
/// d_r(mode) = lambda_k * (mode value) at r = outer.
pub fn mode_dtn(
    k: usize,
    model: &ForwardModel,
    realization: &MediumRealization,
    core: CoreCondition,
) -> f64 {
    let (layers, _) = layers_for(model, realization);
    mode_profile(k, &layers, core).deriv_at_boundary
}

/// Reference electrode currents from a CEM solve.
#[derive(Debug, Clone)]
pub struct ReferenceCurrents {
    pub j: Vec<f64>,
    pub c: f64,
    /// sup-norm boundary-condition violation away from electrode edges.
    pub bc_residual: f64,
}

/// Semi-analytic solution: truncated Fourier coefficients per layer plus the
/// inclusion constant; evaluable anywhere in the closed disk.
#[derive(Debug, Clone)]
pub struct FourierSolution {
    layers: Vec<Layer>,
    core: CoreCondition,
    /// Constant potential of the core region (0 when no core).
    core_value: f64,
    /// (profile, cos coefficient, sin coefficient) per retained mode.
    modes: Vec<(ModeProfile, f64, f64)>,
    z: f64,
    kappa_boundary: f64,
    bc: BoundaryCondition,
}

impl FourierSolution {
    /// Potential at `p`. Inside the core the potential is the core constant.
    pub fn evaluate(&self, p: &Point) -> f64 {
        let r = p.norm();
        let rho = self.layers[0].r_inner;
        if rho > 0.0 && r <= rho {
            return self.core_value;
        }
        let theta = p.angle();
        let layer = self
            .layers
            .iter()
            .position(|l| r <= l.r_outer)
            .unwrap_or(self.layers.len() - 1);
        let mut acc = match self.core {
            CoreCondition::FixedValue(c0) => c0,
            _ => 0.0,
        };
        for (profile, ac, bs) in &self.modes {
            let (a, b) = profile.per_layer[layer];
            let radial = if profile.k == 0 {
                // b = 0 when the domain reaches the origin; avoid 0 * ln 0.
                if b == 0.0 { a } else { a + b * r.ln() }
            } else {
                let rk = r.powi(profile.k as i32);
                a * rk + b / rk
            };
            let kf = profile.k as f64;
            acc += radial * (ac * (kf * theta).cos() + bs * (kf * theta).sin());
        }
        acc
    }

    /// Radial flux kappa * d_r u at the outer boundary, per angle.
    pub fn boundary_current_density(&self, theta: f64) -> f64 {
        let mut acc = 0.0;
        for (profile, ac, bs) in &self.modes {
            let kf = profile.k as f64;
            acc += profile.deriv_at_boundary
                * (ac * (kf * theta).cos() + bs * (kf * theta).sin());
        }
        self.kappa_boundary * acc
    }

    /// Boundary trace u(1, theta).
    pub fn boundary_value(&self, theta: f64) -> f64 {
        let base = match self.core {
            CoreCondition::FixedValue(c0) => c0,
            _ => 0.0,
        };
        base + self
            .modes
            .iter()
            .map(|(p, ac, bs)| {
                let kf = p.k as f64;
                ac * (kf * theta).cos() + bs * (kf * theta).sin()
            })
            .sum::<f64>()
    }

    pub fn core_value(&self) -> f64 {
        self.core_value
    }

    pub fn contact_impedance(&self) -> f64 {
        self.z
    }

    pub fn boundary_condition(&self) -> &BoundaryCondition {
        &self.bc
    }

    /// Mean of kappa d_r u over each electrode arc.
    ///
    /// On an electrode the Robin condition gives kappa d_r u = (U_l - u)/z
    /// exactly, so the current follows from the mean boundary trace; this
    /// avoids the slowly converging differentiated series.
    pub fn electrode_currents(&self) -> Vec<f64> {
        let (layout, pattern) = match &self.bc {
            BoundaryCondition::Cem { layout, pattern, .. } => (layout, pattern),
            BoundaryCondition::IdealizedRobin { .. } => return Vec::new(),
        };
        (1..=layout.count())
            .map(|l| (pattern.voltage(l) - self.electrode_mean_value(l)) / self.z)
            .collect()
    }

    /// Mean of the boundary trace over electrode `l` (closed form).
    pub fn electrode_mean_value(&self, l: usize) -> f64 {
        let layout = match &self.bc {
            BoundaryCondition::Cem { layout, .. } => layout,
            _ => panic!("electrode averages need a CEM boundary condition"),
        };
        let e = layout.arc_length();
        let center = layout.center_angle(l);
        let hw = e / 2.0;
        let mut acc = match self.core {
            CoreCondition::FixedValue(c0) => c0 * 2.0 * hw,
            _ => 0.0,
        };
        for (profile, ac, bs) in &self.modes {
            let k = profile.k;
            let (ic, is) = if k == 0 {
                (2.0 * hw, 0.0)
            } else {
                let kf = k as f64;
                (
                    2.0 * (kf * center).cos() * (kf * hw).sin() / kf,
                    2.0 * (kf * center).sin() * (kf * hw).sin() / kf,
                )
            };
            acc += ac * ic + bs * is;
        }
        acc / e
    }
}

/// Diagonal per-mode solve for the idealized Robin condition
/// z kappa d_r u + u = phi at the outer boundary.
pub fn solve_idealized(
    model: &ForwardModel,
    realization: &MediumRealization,
    core: CoreCondition,
) -> Result<FourierSolution, SolveError> {
    let (phi, z) = match &model.bc {
        BoundaryCondition::IdealizedRobin { phi, z } => (phi, *z),
        _ => return Err(SolveError::WrongBoundaryCondition("idealized Robin")),
    };
    let (layers, _) = layers_for(model, realization);
    let kap = realization.kappa_at_boundary();
    let mut modes = Vec::new();
    let mut c0_shift = 0.0;
    if let CoreCondition::FixedValue(c0) = core {
        c0_shift = c0;
    }
    for &(k, a, b) in &phi.terms {
        let profile = mode_profile(k, &layers, core);
        let denom = 1.0 + z * kap * profile.deriv_at_boundary;
        // With a fixed core value the shift c0 enters the boundary data.
        let (mut ac, mut bs) = (a / denom, b / denom);
        if k == 0 {
            ac = (a - c0_shift) / denom;
            bs = 0.0;
        }
        modes.push((profile, ac, bs));
    }
    let core_value = match core {
        CoreCondition::FixedValue(c0) => c0,
        CoreCondition::Isolated => modes
            .iter()
            .find(|(p, _, _)| p.k == 0)
            .map(|(_, ac, _)| *ac)
            .unwrap_or(0.0),
        CoreCondition::None => 0.0,
    };
    Ok(FourierSolution {
        layers,
        core,
        core_value,
        modes,
        z,
        kappa_boundary: kap,
        bc: model.bc.clone(),
    })
}

/// Variational CEM solve in the truncated trigonometric basis.
///
/// Weak form of div(kappa grad u) = 0 with z kappa d_r u + u = U_l on the
/// electrodes and kappa d_r u = 0 elsewhere: for every test function v,
/// int_D kappa grad u . grad v + (1/z) int_E u v = (1/z) sum_l U_l int_El v.
/// With radial profiles that already satisfy the interior equation and the
/// core condition, the stiffness term is diagonal (pi kappa lambda_k per
/// trig mode) and the electrode mass matrix has closed-form entries.
/// `q` sizes the residual-check grid only.
pub fn solve_cem(
    model: &ForwardModel,
    realization: &MediumRealization,
    core: CoreCondition,
    k_max: usize,
    q: usize,
) -> Result<(FourierSolution, ReferenceCurrents), SolveError> {
    let (layout, pattern, z) = match &model.bc {
        BoundaryCondition::Cem { layout, pattern, z } => (layout, pattern, *z),
        _ => return Err(SolveError::WrongBoundaryCondition("CEM")),
    };
    let (layers, _) = layers_for(model, realization);
    let kap = realization.kappa_at_boundary();
    let c0_shift = match core {
        CoreCondition::FixedValue(c0) => c0,
        _ => 0.0,
    };

    // Basis: j=0 -> constant mode; j=2k-1 -> cos k; j=2k -> sin k.
    let n = 2 * k_max + 1;
    let profiles: Vec<ModeProfile> =
        (0..=k_max).map(|k| mode_profile(k, &layers, core)).collect();

    // Electrode-union integrals of cos(m theta) and sin(m theta), m <= 2K.
    let hw = layout.arc_length() / 2.0;
    let mut ic = vec![0.0f64; 2 * k_max + 1];
    let mut is = vec![0.0f64; 2 * k_max + 1];
    // Per-electrode integrals for the right-hand side and currents.
    let centers: Vec<f64> = (1..=layout.count()).map(|l| layout.center_angle(l)).collect();
    for m in 0..=2 * k_max {
        if m == 0 {
            ic[0] = 2.0 * hw * centers.len() as f64;
        } else {
            let mf = m as f64;
            for &c in &centers {
                ic[m] += 2.0 * (mf * c).cos() * (mf * hw).sin() / mf;
                is[m] += 2.0 * (mf * c).sin() * (mf * hw).sin() / mf;
            }
        }
    }
    let icd = |m: i64| if m >= 0 { ic[m as usize] } else { ic[(-m) as usize] };
    let isd = |m: i64| if m >= 0 { is[m as usize] } else { -is[(-m) as usize] };

    // (mode index, cos?) for basis column j.
    let basis_mode =
        |j: usize| -> (i64, bool) { if j == 0 { (0, true) } else { (((j + 1) / 2) as i64, j % 2 == 1) } };

    let mut a = vec![0.0f64; n * n];
    let mut b = vec![0.0f64; n];
    for j in 0..n {
        let (k, k_cos) = basis_mode(j);
        // Stiffness: boundary pairing kappa lambda_k of matching trig modes.
        let lam = profiles[k as usize].deriv_at_boundary;
        let weight = if k == 0 { TAU } else { TAU / 2.0 };
        a[j * n + j] += kap * lam * weight;
        for jj in j..n {
            let (m, m_cos) = basis_mode(jj);
            let mass = match (k_cos, m_cos) {
                (true, true) => 0.5 * (icd(k - m) + icd(k + m)),
                (false, false) => 0.5 * (icd(k - m) - icd(k + m)),
                (true, false) => 0.5 * (isd(k + m) + isd(m - k)),
                (false, true) => 0.5 * (isd(k + m) + isd(k - m)),
            };
            a[j * n + jj] += mass / z;
            if jj != j {
                a[jj * n + j] = a[j * n + jj];
            }
        }
        // Load: per-electrode voltages against the basis trace.
        let kf = k as f64;
        for (l, &c) in centers.iter().enumerate() {
            let u_l = pattern.voltage(l + 1) - c0_shift;
            let arc = if k == 0 {
                2.0 * hw
            } else if k_cos {
                2.0 * (kf * c).cos() * (kf * hw).sin() / kf
            } else {
                2.0 * (kf * c).sin() * (kf * hw).sin() / kf
            };
            b[j] += u_l * arc / z;
        }
    }
    let coef = cholesky_solve(n, &mut a, &b)?;

    let mut modes: Vec<(ModeProfile, f64, f64)> = Vec::with_capacity(k_max + 1);
    for (k, profile) in profiles.into_iter().enumerate() {
        let ac = if k == 0 { coef[0] } else { coef[2 * k - 1] };
        let bs = if k == 0 { 0.0 } else { coef[2 * k] };
        modes.push((profile, ac, bs));
    }
    let core_value = match core {
        CoreCondition::FixedValue(c0) => c0,
        CoreCondition::Isolated => modes[0].1,
        CoreCondition::None => 0.0,
    };
    let solution = FourierSolution {
        layers,
        core,
        core_value,
        modes,
        z,
        kappa_boundary: kap,
        bc: model.bc.clone(),
    };

    let j = solution.electrode_currents();
    let bc_residual = boundary_residual(&solution, model, 8 * q, k_max);
    let c = solution.core_value;
    Ok((solution, ReferenceCurrents { j, c, bc_residual }))
}

/// Sup-norm of the boundary-condition violation on a fine angular grid,
/// excluding arcs of width 10/K around electrode edges.
fn boundary_residual(sol: &FourierSolution, model: &ForwardModel, grid: usize, k_max: usize) -> f64 {
    let exclusion = 10.0 / k_max as f64;
    let edges: Vec<f64> = match &model.bc {
        BoundaryCondition::Cem { layout, .. } => (1..=layout.count())
            .flat_map(|l| {
                let c = layout.center_angle(l);
                let hw = layout.arc_length() / 2.0;
                [c - hw, c + hw]
            })
            .collect(),
        _ => Vec::new(),
    };
    let mut sup: f64 = 0.0;
    for i in 0..grid {
        let theta = TAU * (i as f64 + 0.5) / grid as f64;
        let near_edge = edges.iter().any(|&e| {
            let mut d = (theta - e) % TAU;
            if d > std::f64::consts::PI {
                d -= TAU;
            }
            if d < -std::f64::consts::PI {
                d += TAU;
            }
            d.abs() < exclusion
        });
        if near_edge {
            continue;
        }
        let (f, g) = model.bc.boundary_fg(theta);
        let r = sol.z * sol.boundary_current_density(theta) + f * sol.boundary_value(theta) - g;
        sup = sup.max(r.abs());
    }
    sup
}

/// Coefficient export: one row per retained mode and layer, with the angular
/// amplitudes folded in: (k, layer, cos amplitude * (a, b), sin * (a, b)).
pub fn coefficient_rows(sol: &FourierSolution) -> Vec<(usize, usize, [f64; 4])> {
    let mut rows = Vec::new();
    for (profile, ac, bs) in &sol.modes {
        for (layer, &(a, b)) in profile.per_layer.iter().enumerate() {
            rows.push((profile.k, layer, [a * ac, b * ac, a * bs, b * bs]));
        }
    }
    rows
}

/// Solve the symmetric positive definite system via Cholesky.
fn cholesky_solve(n: usize, a: &mut [f64], b: &[f64]) -> Result<Vec<f64>, SolveError> {
    // In-place lower Cholesky factor.
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(SolveError::IllConditioned { row: i, pivot: s });
                }
                a[i * n + i] = s.sqrt();
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= a[i * n + k] * x[k];
        }
        x[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= a[k * n + i] * x[k];
        }
        x[i] /= a[i * n + i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SceneGeometry;
    use crate::medium::{
        BoundaryCondition, ConductivityField, ElectrodeLayout, ForwardModel, FourierData,
        VoltagePattern,
    };
    use std::f64::consts::{FRAC_PI_2, PI};

    fn idealized(phi: FourierData, z: f64, inclusion: Option<f64>, layered: bool) -> ForwardModel {
        let geometry = SceneGeometry::concentric(
            1.0,
            inclusion,
            if layered { Some(0.9) } else { None },
            1e-6,
        )
        .unwrap();
        let cond = if layered {
            ConductivityField::layered_benchmark()
        } else {
            ConductivityField::uniform_unit()
        };
        ForwardModel::new(geometry, cond, BoundaryCondition::IdealizedRobin { phi, z }).unwrap()
    }

    fn cem(z: f64, inclusion: Option<f64>, layered: bool) -> ForwardModel {
        let geometry = SceneGeometry::concentric(
            1.0,
            inclusion,
            if layered { Some(0.9) } else { None },
            1e-6,
        )
        .unwrap();
        let cond = if layered {
            ConductivityField::layered_benchmark()
        } else {
            ConductivityField::uniform_unit()
        };
        ForwardModel::new(
            geometry,
            cond,
            BoundaryCondition::Cem {
                layout: ElectrodeLayout::default_eight(),
                pattern: VoltagePattern::alternating(8),
                z,
            },
        )
        .unwrap()
    }

    #[test]
    fn dtn_of_uniform_disk_is_the_mode_number() {
        let model = idealized(FourierData { terms: vec![] }, 0.1, None, false);
        let real = model.mean_medium();
        assert!(mode_dtn(0, &model, &real, CoreCondition::None).abs() < 1e-14);
        for k in 1..=5 {
            let lam = mode_dtn(k, &model, &real, CoreCondition::None);
            assert!((lam - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn dtn_with_core_matches_the_two_branch_solve() {
        let rho: f64 = 0.3;
        let model = idealized(FourierData { terms: vec![] }, 0.1, Some(rho), false);
        let real = model.mean_medium();
        for k in 1..=6usize {
            let lam = mode_dtn(k, &model, &real, CoreCondition::Isolated);
            let r2k = rho.powi(2 * k as i32);
            let expect = k as f64 * (1.0 + r2k) / (1.0 - r2k);
            assert!((lam - expect).abs() < 1e-12);
        }
        // Grounded core, k = 0: u = ln(r/rho), so lambda_0 = -1/ln(rho).
        let lam0 = mode_dtn(0, &model, &real, CoreCondition::FixedValue(0.0));
        assert!((lam0 + 1.0 / rho.ln()).abs() < 1e-12);
    }

    #[test]
    fn dtn_of_the_layered_disk() {
        // Two layers, no core: propagate (1, 0) through the interface by hand.
        let model = idealized(FourierData { terms: vec![] }, 0.1, None, true);
        let real = model.mean_medium();
        let (mu, r) = (1.0 / 1.5, 0.9);
        let a2 = (1.0 + mu) / 2.0;
        let b2 = (1.0 - mu) * r * r / 2.0;
        let expect = (a2 - b2) / (a2 + b2);
        let lam = mode_dtn(1, &model, &real, CoreCondition::None);
        assert!((lam - expect).abs() < 1e-12);
    }

    #[test]
    fn idealized_point_values() {
        // phi = cos 4 theta with an isolated core at rho = 0.3; closed form
        // u = (r^4 - rho^8 r^-4) cos(4 theta) / (1 - rho^8 + 4 z (1 + rho^8)).
        let rho: f64 = 0.3;
        let p = Point::new(0.99361, 0.11286);
        for (z, pinned) in [(0.5, 0.2998), (0.1, 0.6424)] {
            let model = idealized(
                FourierData { terms: vec![(4, 1.0, 0.0)] },
                z,
                Some(rho),
                false,
            );
            let real = model.mean_medium();
            let sol = solve_idealized(&model, &real, CoreCondition::Isolated).unwrap();
            let r = p.norm();
            let theta = p.angle();
            let denom = 1.0 - rho.powi(8) + 4.0 * z * (1.0 + rho.powi(8));
            let closed =
                (r.powi(4) - rho.powi(8) / r.powi(4)) * (4.0 * theta).cos() / denom;
            let u = sol.evaluate(&p);
            assert!((u - closed).abs() < 1e-12);
            assert!((u - pinned).abs() < 1e-4, "z={z}: {u}");
        }
    }

    #[test]
    fn idealized_closed_form_at_random_points() {
        let rho: f64 = 0.3;
        let z = 0.5;
        let model = idealized(FourierData { terms: vec![(4, 1.0, 0.0)] }, z, Some(rho), false);
        let real = model.mean_medium();
        let sol = solve_idealized(&model, &real, CoreCondition::Isolated).unwrap();
        let denom = 1.0 - rho.powi(8) + 4.0 * z * (1.0 + rho.powi(8));
        let mut rng = crate::streams::derive(crate::streams::StreamKey::trajectory(42, 0));
        let mut checked = 0;
        while checked < 20 {
            let x = rng.uniform_in(-1.0, 1.0);
            let y = rng.uniform_in(-1.0, 1.0);
            let p = Point::new(x, y);
            let r = p.norm();
            if r <= rho || r >= 1.0 {
                continue;
            }
            let closed = (r.powi(4) - rho.powi(8) / r.powi(4)) * (4.0 * p.angle()).cos() / denom;
            assert!((sol.evaluate(&p) - closed).abs() < 1e-10);
            checked += 1;
        }
    }

    #[test]
    fn layered_radial_oracle() {
        // phi = 1, z = 0.5, grounded core rho = 0.3, interface 0.9,
        // kappa = 1 inside / 1.5 outside: piecewise a + b ln r.
        let model = idealized(FourierData { terms: vec![(0, 1.0, 0.0)] }, 0.5, Some(0.3), true);
        let real = model.mean_medium();
        let sol = solve_idealized(&model, &real, CoreCondition::FixedValue(0.0)).unwrap();
        let u = sol.evaluate(&Point::new(0.6, 0.0));
        assert!((u - 0.4153).abs() < 1e-4, "u(0.6,0) = {u}");
        // Robin residual of the radial solution at the boundary.
        let res = 0.5 * sol.boundary_current_density(0.3)
            + sol.boundary_value(0.3)
            - 1.0;
        assert!(res.abs() < 1e-12);
    }

    #[test]
    fn constant_data_gives_constant_solution() {
        let model = idealized(FourierData { terms: vec![(0, 0.7, 0.0)] }, 0.2, None, false);
        let real = model.mean_medium();
        let sol = solve_idealized(&model, &real, CoreCondition::None).unwrap();
        for p in [Point::new(0.0, 0.0), Point::new(0.5, 0.3), Point::new(-0.9, 0.1)] {
            assert!((sol.evaluate(&p) - 0.7).abs() < 1e-14);
        }
    }

    #[test]
    fn core_trace_is_the_core_constant() {
        let model = cem(0.1, Some(0.3), false);
        let real = model.mean_medium();
        let (sol, cur) = solve_cem(&model, &real, CoreCondition::Isolated, 96, 1536).unwrap();
        for i in 0..100 {
            let theta = 2.0 * PI * i as f64 / 100.0;
            let p = Point::new(0.3 * theta.cos(), 0.3 * theta.sin());
            assert!((sol.evaluate(&p) - cur.c).abs() < 1e-8);
        }
    }

    #[test]
    fn cem_conserves_charge_and_quarter_turn_symmetry() {
        for inclusion in [None, Some(0.3), Some(0.9)] {
            let model = cem(0.1, inclusion, false);
            let real = model.mean_medium();
            let core = if inclusion.is_some() {
                CoreCondition::Isolated
            } else {
                CoreCondition::None
            };
            let (_, cur) = solve_cem(&model, &real, core, 128, 2048).unwrap();
            let total: f64 = cur.j.iter().sum();
            assert!(total.abs() < 1e-8, "sum J = {total:e}");
            // The alternating pattern is invariant under rotation by two
            // electrode spacings.
            for l in 0..8 {
                assert!((cur.j[l] - cur.j[(l + 2) % 8]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn cem_residual_decreases_with_truncation() {
        let model = cem(0.1, Some(0.3), false);
        let real = model.mean_medium();
        let (_, lo) = solve_cem(&model, &real, CoreCondition::Isolated, 32, 512).unwrap();
        let (_, hi) = solve_cem(&model, &real, CoreCondition::Isolated, 128, 2048).unwrap();
        assert!(hi.bc_residual < lo.bc_residual);
        // The current density blows up at the electrode edges; since the
        // exclusion window shrinks like 1/K, the sup-residual plateaus at the
        // percent level rather than vanishing.
        let (_, fine) = solve_cem(&model, &real, CoreCondition::Isolated, 256, 4096).unwrap();
        assert!(fine.bc_residual < 5e-2, "residual {:e}", fine.bc_residual);
    }

    #[test]
    fn cem_solution_is_harmonic_in_the_bulk()  {
        let model = cem(0.1, Some(0.3), false);
        let real = model.mean_medium();
        let (sol, _) = solve_cem(&model, &real, CoreCondition::Isolated, 96, 1536).unwrap();
        let mut rng = crate::streams::derive(crate::streams::StreamKey::trajectory(43, 0));
        let d = 1e-4;
        let mut checked = 0;
        while checked < 100 {
            let x = rng.uniform_in(-1.0, 1.0);
            let y = rng.uniform_in(-1.0, 1.0);
            let p = Point::new(x, y);
            let r = p.norm();
            if r < 0.35 || r > 0.9 {
                continue;
            }
            let lap = (sol.evaluate(&Point::new(x + d, y))
                + sol.evaluate(&Point::new(x - d, y))
                + sol.evaluate(&Point::new(x, y + d))
                + sol.evaluate(&Point::new(x, y - d))
                - 4.0 * sol.evaluate(&p))
                / (d * d);
            assert!(lap.abs() < 1e-4, "Laplacian {lap:e} at ({x}, {y})");
            checked += 1;
        }
    }

    #[test]
    fn transmission_conditions_hold_at_the_interface() {
        let model = cem(0.1, Some(0.3), true);
        let real = model.mean_medium();
        let (sol, _) = solve_cem(&model, &real, CoreCondition::Isolated, 96, 1536).unwrap();
        let d = 1e-6;
        for i in 0..100 {
            let theta = 2.0 * PI * i as f64 / 100.0;
            let at = |r: f64| sol.evaluate(&Point::new(r * theta.cos(), r * theta.sin()));
            // Value continuity.
            assert!((at(0.9 - 1e-12) - at(0.9 + 1e-12)).abs() < 1e-10);
            // Flux continuity: kappa d_r u matches across the interface.
            let flux_in = 1.0 * (at(0.9) - at(0.9 - d)) / d;
            let flux_out = 1.5 * (at(0.9 + d) - at(0.9)) / d;
            assert!((flux_in - flux_out).abs() < 1e-4);
        }
    }

    #[test]
    fn wrong_boundary_condition_is_rejected() {
        let m_cem = cem(0.1, None, false);
        let real = m_cem.mean_medium();
        assert!(matches!(
            solve_idealized(&m_cem, &real, CoreCondition::None),
            Err(SolveError::WrongBoundaryCondition(_))
        ));
        let m_rob = idealized(FourierData { terms: vec![] }, 0.1, None, false);
        assert!(matches!(
            solve_cem(&m_rob, &m_rob.mean_medium(), CoreCondition::None, 16, 256),
            Err(SolveError::WrongBoundaryCondition(_))
        ));
    }

    #[test]
    fn electrode_three_faces_east() {
        // Sanity of the layout convention used throughout: E3 is centered at
        // angle 0, i.e. at the point (1, 0).
        let layout = ElectrodeLayout::default_eight();
        assert!((layout.center_angle(3) - 0.0).abs() < 1e-12);
        assert!((layout.center_angle(1) - FRAC_PI_2).abs() < 1e-12);
    }
}
