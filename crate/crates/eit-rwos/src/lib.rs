//! Monte Carlo forward solver for 2-D electrical impedance tomography on the
//! unit disk: a partially reflecting walk-on-spheres estimator for the
//! voltage-to-current map of the complete electrode model, with variance
//! reduction by conditional sampling and a semi-analytic reference solver.

pub mod geometry;
pub mod medium;
pub mod reference;
pub mod stats;
pub mod estimators;
pub mod vr;
pub mod config;
pub mod experiments;
pub mod streams;
pub mod walk;
