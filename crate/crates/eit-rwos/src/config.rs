//! Experiment configuration: a TOML schema mirroring the model layers, with
//! validated conversion into the library types. Every experiment is a pure
//! function of (config, seed), so configs are the unit of reproducibility.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::DoubleRandomizationPlan;
use crate::geometry::SceneGeometry;
use crate::medium::{
    BoundaryCondition, ConductivityField, ElectrodeLayout, ForwardModel, FourierData, Param,
    VoltagePattern,
};
use crate::walk::{InterfaceScheme, Sampler, WalkParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] crate::medium::ModelError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// A scalar that is either fixed or a uniform interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamConfig {
    Fixed(f64),
    Interval([f64; 2]),
}

impl ParamConfig {
    pub fn to_param(self) -> Param {
        match self {
            ParamConfig::Fixed(v) => Param::Fixed(v),
            ParamConfig::Interval([lo, hi]) => Param::Uniform(lo, hi),
        }
    }
}

/// One value or a sweep list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(vs) => vs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Inclusion radius, or a sweep list; omit for no inclusion.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inclusion_radius: Option<OneOrMany>,
    /// Scene layer width epsilon.
    #[serde(default = "default_scene_eps")]
    pub eps: f64,
}

fn default_scene_eps() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    /// Conductivity outside the interface (background when none).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_outer: Option<ParamConfig>,
    /// Conductivity between interface and inclusion.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_inner: Option<ParamConfig>,
    /// Interface radius; its mean positions the interface circle.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interface_radius: Option<ParamConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiTerm {
    pub k: usize,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Electrode voltages: the named alternating pattern or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatternConfig {
    Named(String),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BcConfig {
    IdealizedRobin {
        z: f64,
        phi: Vec<PhiTerm>,
    },
    Cem {
        z: f64,
        #[serde(default = "default_electrodes")]
        electrodes: usize,
        pattern: PatternConfig,
    },
}

fn default_electrodes() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerConfig {
    #[default]
    Centered,
    Uncentered,
}

impl SamplerConfig {
    pub fn to_sampler(self) -> Sampler {
        match self {
            SamplerConfig::Centered => Sampler::Centered,
            SamplerConfig::Uncentered => Sampler::Uncentered,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    EqualFlux,
    #[default]
    EqualStep,
    SqrtScaled,
}

impl SchemeConfig {
    pub fn to_scheme(self) -> InterfaceScheme {
        match self {
            SchemeConfig::EqualFlux => InterfaceScheme::EqualFlux,
            SchemeConfig::EqualStep => InterfaceScheme::EqualStep,
            SchemeConfig::SqrtScaled => InterfaceScheme::SqrtScaled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkConfig {
    /// Step size, or a sweep list for bias studies.
    pub h: OneOrMany,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    /// Walk layer width; defaults to min(1e-6, h^3).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default = "default_m1")]
    pub m1: usize,
    pub m2: usize,
}

fn default_m1() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Analytic,
    Reference,
    NestedWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VrConfig {
    pub provider: ProviderKind,
    /// Nested ensemble size for the nested-walk provider.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Nested ensemble sizes compared by the efficiency experiment.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ks: Vec<usize>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    /// Mode truncation of the precomputed reference solution.
    #[serde(default = "default_reference_modes")]
    pub reference_modes: usize,
}

fn default_k() -> usize {
    10
}

fn default_reference_modes() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    #[serde(default)]
    pub workers: usize,
    pub scene: SceneConfig,
    #[serde(default)]
    pub medium: MediumConfig,
    pub bc: BcConfig,
    pub walk: WalkConfig,
    pub plan: PlanConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vr: Option<VrConfig>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization is infallible")
    }

    fn validate(&self) -> Result<(), ConfigError> {
        for h in self.walk.h.values() {
            if !(h > 0.0) {
                return Err(ConfigError::Invalid(format!("walk.h must be positive, got {h}")));
            }
        }
        if self.plan.m1 < 1 || self.plan.m2 < 1 {
            return Err(ConfigError::Invalid("plan.m1 and plan.m2 must be at least 1".into()));
        }
        if let Some(vr) = &self.vr {
            if vr.k < 1 {
                return Err(ConfigError::Invalid("vr.k must be at least 1".into()));
            }
        }
        // Model invariants (positivity, disjoint layers, pattern length) are
        // checked by building the model for every swept inclusion radius.
        for r in self.inclusion_radii() {
            self.build_model(r)?;
        }
        Ok(())
    }

    /// The swept inclusion radii; `[None]` when no inclusion is configured.
    pub fn inclusion_radii(&self) -> Vec<Option<f64>> {
        match &self.scene.inclusion_radius {
            None => vec![None],
            Some(one_or_many) => one_or_many.values().into_iter().map(Some).collect(),
        }
    }

    pub fn conductivity(&self) -> ConductivityField {
        ConductivityField {
            outer: self.medium.kappa_outer.map_or(Param::Fixed(1.0), ParamConfig::to_param),
            inner: self.medium.kappa_inner.map_or(Param::Fixed(1.0), ParamConfig::to_param),
            interface_radius: self.medium.interface_radius.map(ParamConfig::to_param),
        }
    }

    pub fn build_model(&self, inclusion_radius: Option<f64>) -> Result<ForwardModel, ConfigError> {
        let conductivity = self.conductivity();
        let interface = conductivity.interface_radius.map(|p| p.mean());
        let geometry =
            SceneGeometry::concentric(1.0, inclusion_radius, interface, self.scene.eps)?;
        let bc = match &self.bc {
            BcConfig::IdealizedRobin { z, phi } => {
                let mut data = FourierData { terms: Vec::new() };
                for t in phi {
                    data.terms.push((t.k, t.cos, t.sin));
                }
                BoundaryCondition::IdealizedRobin { phi: data, z: *z }
            }
            BcConfig::Cem { z, electrodes, pattern } => {
                let layout = if *electrodes == 8 {
                    ElectrodeLayout::default_eight()
                } else {
                    return Err(ConfigError::Invalid(format!(
                        "only the default 8-electrode layout is supported, got {electrodes}"
                    )));
                };
                let pattern = match pattern {
                    PatternConfig::Named(name) if name == "alternating" => {
                        VoltagePattern::alternating(*electrodes)
                    }
                    PatternConfig::Named(name) => {
                        return Err(ConfigError::Invalid(format!(
                            "unknown pattern name {name:?}; use \"alternating\" or explicit values"
                        )))
                    }
                    PatternConfig::Values(values) => VoltagePattern::new(values.clone())?,
                };
                BoundaryCondition::Cem { layout, pattern, z: *z }
            }
        };
        Ok(ForwardModel::new(geometry, conductivity, bc)?)
    }

    pub fn walk_params(&self, h: f64) -> WalkParams {
        let mut params = WalkParams::new(h)
            .with_sampler(self.walk.sampler.to_sampler())
            .with_scheme(self.walk.scheme.to_scheme());
        if let Some(eps) = self.walk.eps {
            params = params.with_eps(eps);
        }
        if let Some(max_steps) = self.walk.max_steps {
            params.max_steps = max_steps;
        }
        params
    }

    pub fn plan(&self) -> DoubleRandomizationPlan {
        DoubleRandomizationPlan::new(self.plan.m1, self.plan.m2)
    }

    /// FNV-1a hash of the canonical serialization; stamped into outputs.
    pub fn hash(&self) -> u64 {
        let mut state: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.to_toml().bytes() {
            state ^= byte as u64;
            state = state.wrapping_mul(0x0000_0100_0000_01b3);
        }
        state
    }
}
