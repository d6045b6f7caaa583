//! Concrete problem families.

pub mod meanvar;
pub mod multilevel_linear;
pub mod reference;
pub mod synthetic;

pub use meanvar::{generate_instance, InstanceFile, MeanVarInstance, MeanVarOracle};
pub use multilevel_linear::{make_multilevel_linear, LinearLevels, LinearLevelsConfig};
pub use reference::{DenseQuadraticL1, ReferenceSolution};
pub use synthetic::SmoothNonlinear;
