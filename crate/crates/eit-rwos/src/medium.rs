//! Conductivity fields, electrode layout, voltage patterns, boundary data
//! (f, g) and the bundled forward model.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, TAU};

use thiserror::Error;

use crate::geometry::{GeometryError, Point, SceneGeometry};
use crate::streams::Stream;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("voltage pattern must sum to zero, got {0}")]
    UngroundedPattern(f64),
    #[error("electrode arcs overlap")]
    OverlappingElectrodes,
    #[error("contact impedance must be positive, got {0}")]
    NonPositiveImpedance(f64),
    #[error("conductivity support must be strictly positive")]
    NonPositiveConductivity,
    #[error("interval endpoints out of order: [{0}, {1}]")]
    IntervalOutOfOrder(f64, f64),
    #[error("pattern length {0} does not match electrode count {1}")]
    PatternLength(usize, usize),
    #[error("conductivity field declares an interface but the geometry has none (or vice versa)")]
    InterfaceMismatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Electrode arcs on the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeLayout {
    /// (center angle, half width), one per electrode, in radians.
    arcs: Vec<(f64, f64)>,
    arc_length: f64,
}

fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % TAU;
    if t > std::f64::consts::PI {
        t -= TAU;
    } else if t <= -std::f64::consts::PI {
        t += TAU;
    }
    t
}

impl ElectrodeLayout {
    /// Equal-width electrodes. `E1` is centered at `first_center`, numbering
    /// proceeds clockwise.
    pub fn equal_width(count: usize, first_center: f64, half_width: f64) -> Result<Self, ModelError> {
        assert!(count >= 1 && half_width > 0.0);
        let spacing = TAU / count as f64;
        if 2.0 * half_width >= spacing {
            return Err(ModelError::OverlappingElectrodes);
        }
        let arcs = (0..count)
            .map(|l| (wrap_angle(first_center - l as f64 * spacing), half_width))
            .collect();
        Ok(ElectrodeLayout { arcs, arc_length: 2.0 * half_width })
    }

    /// The default layout: 8 electrodes of arc length 0.1, numbered clockwise
    /// from the top so that E3 is centered at (1, 0).
    pub fn default_eight() -> Self {
        ElectrodeLayout::equal_width(8, FRAC_PI_2, 0.05).unwrap()
    }

    pub fn count(&self) -> usize {
        self.arcs.len()
    }

    /// Arc length |E| of each (equal-width) electrode.
    pub fn arc_length(&self) -> f64 {
        self.arc_length
    }

    pub fn center_angle(&self, l: usize) -> f64 {
        self.arcs[l - 1].0
    }

    /// 1-based index of the electrode whose (closed) arc contains `theta`.
    pub fn electrode_index(&self, theta: f64) -> Option<usize> {
        for (i, &(center, hw)) in self.arcs.iter().enumerate() {
            if wrap_angle(theta - center).abs() <= hw {
                return Some(i + 1);
            }
        }
        None
    }

    /// Uniform point on electrode `l` (1-based).
    pub fn sample_on_electrode(&self, l: usize, rng: &mut Stream) -> Point {
        let (center, hw) = self.arcs[l - 1];
        let theta = center + rng.uniform_in(-hw, hw);
        Point::new(theta.cos(), theta.sin())
    }
}

/// Electrode voltages with the ground fixed so they sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltagePattern {
    values: Vec<f64>,
}

impl VoltagePattern {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        let sum: f64 = values.iter().sum();
        if sum.abs() > 1e-12 {
            return Err(ModelError::UngroundedPattern(sum));
        }
        Ok(VoltagePattern { values })
    }

    /// The alternating pattern U_j = (-1)^j used in the benchmark scenes.
    pub fn alternating(count: usize) -> Self {
        assert!(count % 2 == 0, "alternating pattern needs an even electrode count");
        VoltagePattern::new((1..=count).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect())
            .unwrap()
    }

    pub fn voltage(&self, l: usize) -> f64 {
        self.values[l - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, factor: f64) -> VoltagePattern {
        VoltagePattern { values: self.values.iter().map(|u| u * factor).collect() }
    }
}

/// Truncated Fourier data phi(theta) = sum a_k cos k theta + b_k sin k theta.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierData {
    /// (k, a_k, b_k)
    pub terms: Vec<(usize, f64, f64)>,
}

impl FourierData {
    pub fn cosine(k: usize, amplitude: f64) -> Self {
        FourierData { terms: vec![(k, amplitude, 0.0)] }
    }

    pub fn constant(a0: f64) -> Self {
        FourierData { terms: vec![(0, a0, 0.0)] }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(k, a, b)| a * (k as f64 * theta).cos() + b * (k as f64 * theta).sin())
            .sum()
    }
}

/// Boundary condition z nu.kappa grad u + f u = g on the outer circle.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryCondition {
    /// f = 1 everywhere, g = phi(theta): measurements on the whole boundary.
    IdealizedRobin { phi: FourierData, z: f64 },
    /// Complete electrode model: f the electrode indicator, g the voltages.
    Cem { layout: ElectrodeLayout, pattern: VoltagePattern, z: f64 },
}

impl BoundaryCondition {
    pub fn contact_impedance(&self) -> f64 {
        match self {
            BoundaryCondition::IdealizedRobin { z, .. } | BoundaryCondition::Cem { z, .. } => *z,
        }
    }

    /// Electrode index (1-based) under `theta`, if any.
    pub fn electrode_at(&self, theta: f64) -> Option<usize> {
        match self {
            BoundaryCondition::IdealizedRobin { .. } => None,
            BoundaryCondition::Cem { layout, .. } => layout.electrode_index(theta),
        }
    }

    /// Boundary data (f, g) at polar angle `theta`.
    pub fn boundary_fg(&self, theta: f64) -> (f64, f64) {
        match self {
            BoundaryCondition::IdealizedRobin { phi, .. } => (1.0, phi.eval(theta)),
            BoundaryCondition::Cem { layout, pattern, .. } => match layout.electrode_index(theta) {
                Some(l) => (1.0, pattern.voltage(l)),
                None => (0.0, 0.0),
            },
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let z = self.contact_impedance();
        if !(z > 0.0) {
            return Err(ModelError::NonPositiveImpedance(z));
        }
        if let BoundaryCondition::Cem { layout, pattern, .. } = self {
            if pattern.values().len() != layout.count() {
                return Err(ModelError::PatternLength(pattern.values().len(), layout.count()));
            }
        }
        Ok(())
    }
}

/// A scalar parameter that is either fixed or uniformly distributed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Param {
    Fixed(f64),
    Uniform(f64, f64),
}

impl Param {
    pub fn sample(&self, rng: &mut Stream) -> f64 {
        match *self {
            Param::Fixed(v) => v,
            Param::Uniform(lo, hi) => rng.uniform_in(lo, hi),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Param::Fixed(v) => v,
            Param::Uniform(lo, hi) => 0.5 * (lo + hi),
        }
    }

    pub fn min(&self) -> f64 {
        match *self {
            Param::Fixed(v) => v,
            Param::Uniform(lo, _) => lo,
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, Param::Uniform(..))
    }

    fn validate_positive(&self) -> Result<(), ModelError> {
        match *self {
            Param::Fixed(v) if v > 0.0 => Ok(()),
            Param::Uniform(lo, hi) if lo > hi => Err(ModelError::IntervalOutOfOrder(lo, hi)),
            Param::Uniform(lo, _) if lo > 0.0 => Ok(()),
            _ => Err(ModelError::NonPositiveConductivity),
        }
    }
}

/// Piecewise constant (possibly random) conductivity on the concentric scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField {
    /// Conductivity outside the interface (equals the whole background when
    /// there is no interface).
    pub outer: Param,
    /// Conductivity between interface and inclusion.
    pub inner: Param,
    /// Interface radius; present iff the geometry has an interface.
    pub interface_radius: Option<Param>,
}

impl ConductivityField {
    pub fn uniform_unit() -> Self {
        ConductivityField { outer: Param::Fixed(1.0), inner: Param::Fixed(1.0), interface_radius: None }
    }

    /// The deterministic layered benchmark: outer 1.5, inner 1, R = 0.9.
    pub fn layered_benchmark() -> Self {
        ConductivityField {
            outer: Param::Fixed(1.5),
            inner: Param::Fixed(1.0),
            interface_radius: Some(Param::Fixed(0.9)),
        }
    }

    /// The random benchmark: outer conductivity uniform in [1.3, 1.7],
    /// inner uniform in [0.8, 1.2], interface radius uniform in [0.89, 0.91].
    pub fn random_benchmark() -> Self {
        ConductivityField {
            outer: Param::Uniform(1.3, 1.7),
            inner: Param::Uniform(0.8, 1.2),
            interface_radius: Some(Param::Uniform(0.89, 0.91)),
        }
    }

    pub fn is_random(&self) -> bool {
        self.outer.is_random()
            || self.inner.is_random()
            || self.interface_radius.map_or(false, |p| p.is_random())
    }
}

/// One draw of the medium parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediumRealization {
    pub kappa_outer: f64,
    pub kappa_inner: f64,
    pub interface_radius: Option<f64>,
}

impl MediumRealization {
    /// Conductivity in the outermost layer (the one touching the boundary).
    pub fn kappa_at_boundary(&self) -> f64 {
        self.kappa_outer
    }
}

/// Geometry + conductivity + boundary condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    pub geometry: SceneGeometry,
    pub conductivity: ConductivityField,
    pub bc: BoundaryCondition,
}

impl ForwardModel {
    pub fn new(
        geometry: SceneGeometry,
        conductivity: ConductivityField,
        bc: BoundaryCondition,
    ) -> Result<Self, ModelError> {
        bc.validate()?;
        conductivity.outer.validate_positive()?;
        conductivity.inner.validate_positive()?;
        if conductivity.interface_radius.is_some() != geometry.interface().is_some() {
            return Err(ModelError::InterfaceMismatch);
        }
        if let Some(r) = conductivity.interface_radius {
            r.validate_positive()?;
            // every realization must keep the epsilon-layers disjoint
            let probe = SceneGeometry::new(
                *geometry.outer(),
                geometry.inclusion().copied(),
                Some(crate::geometry::Circle::new(geometry.center(), r.min())?),
                geometry.eps(),
            )?;
            let _ = probe;
        }
        Ok(ForwardModel { geometry, conductivity, bc })
    }

    /// Draw medium parameters; deterministic fields pass through unchanged.
    pub fn sample_medium(&self, rng: &mut Stream) -> MediumRealization {
        MediumRealization {
            kappa_outer: self.conductivity.outer.sample(rng),
            kappa_inner: self.conductivity.inner.sample(rng),
            interface_radius: self.conductivity.interface_radius.map(|p| p.sample(rng)),
        }
    }

    pub fn mean_medium(&self) -> MediumRealization {
        MediumRealization {
            kappa_outer: self.conductivity.outer.mean(),
            kappa_inner: self.conductivity.inner.mean(),
            interface_radius: self.conductivity.interface_radius.map(|p| p.mean()),
        }
    }

    /// Scene with the interface circle moved to the realized radius.
    pub fn scene_for(&self, realization: &MediumRealization) -> SceneGeometry {
        match realization.interface_radius {
            None => self.geometry.clone(),
            Some(r) => SceneGeometry::new(
                *self.geometry.outer(),
                self.geometry.inclusion().copied(),
                Some(crate::geometry::Circle::new(self.geometry.center(), r).unwrap()),
                self.geometry.eps(),
            )
            .expect("realized interface radius validated at construction"),
        }
    }

    /// Companion model without the inclusion (control-variate problem).
    pub fn without_inclusion(&self) -> ForwardModel {
        ForwardModel {
            geometry: self.geometry.without_inclusion(),
            conductivity: self.conductivity.clone(),
            bc: self.bc.clone(),
        }
    }
}

///// Default clockwise electrode numbering helper: center angle of E_l.
pub fn default_center_angle(l: usize) -> f64 {
    wrap_angle(FRAC_PI_2 - (l as f64 - 1.0) * FRAC_PI_4)
}
