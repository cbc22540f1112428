//! Generative design pipeline for pneumatic-network (Pneu-net) soft actuators.
//!
//! The crate covers the whole numeric side of the workflow:
//!
//! * [`design_space`]: the 16-parameter actuator description, bounds and
//!   synthetic dataset construction.
//! * [`preprocess`]: standardization / one-hot encoding and the repairing decoder.
//! * [`gmm`]: full-covariance Gaussian mixture fitted by expectation-maximization.
//! * [`embedding`]: exact t-SNE and a nearest-neighbour inverse map.
//! * [`metrics`]: nearest-datapoint novelty and convex-hull diversity.
//! * [`geometry`]: feasibility checks, CSG script and STL preview export.
//! * [`kinematics`]: piecewise-constant-curvature backbone model and mode classifier.
//! * [`workdir`]: on-disk artifact formats shared by the CLI and the HTTP API.

pub mod design_space;
pub mod embedding;
pub mod error;
pub mod geometry;
pub mod gmm;
pub mod kinematics;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod util;
pub mod workdir;

pub use design_space::{
    derive_dependents, validate_design, DesignDataset, DesignParams, DesignRecord, Mode,
    ParameterBounds, Provenance,
};
pub use error::{Error, Result};
pub use matrix::FeatureMatrix;
