//! Continual-learning benchmark harness for graph data.
//!
//! A [`scenario::Scenario`] turns a labelled graph dataset into a sequence of
//! tasks with sealed test answers; a [`protocol::Loader`] hands tasks to a
//! trainer one at a time, collects its answers and builds an
//! [`evaluator::Report`]. [`methods`] provides the event-driven trainer with
//! a GCN backbone and the reference continual-learning methods.
//!
//! Numerical code is generic over [`Scalar`] (`f64` or `f32`); the aliases
//! below fix the common instantiations.

pub mod error;
pub mod evaluator;
pub mod graph;
pub mod io;
pub mod methods;
pub mod model;
pub mod protocol;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Graph64 = graph::Graph<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type Scenario64 = scenario::Scenario<f64>;
pub type Scenario32 = scenario::Scenario<f32>;
pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;
pub type Loader64 = protocol::Loader<f64>;
pub type Loader32 = protocol::Loader<f32>;
