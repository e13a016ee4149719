//! Hyperbolic embeddings for temporal knowledge-graph completion.
//!
//! Entities live in a Poincaré ball whose curvature is learned per relation
//! (`RelationOnly`, the AttH model) or per relation × timestamp
//! (`RelationTime`, Hercules). Queries rotate and reflect the subject with
//! Givens isometries, mix both with tangent-space attention, translate by the
//! relation, and score candidates by negative squared geodesic distance plus
//! entity biases.
//!
//! Modules, bottom-up: [`geometry`], [`params`], [`model`], [`diff`],
//! [`data`], [`training`], [`evaluation`], [`analysis`].

pub mod analysis;
pub mod data;
pub mod diff;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod geometry;
pub mod model;
pub mod params;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use exec::Execution;
pub use params::{CurvatureSpec, ModelParams, VocabSizes};
