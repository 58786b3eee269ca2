//! Basic metrics, the performance matrix and the derived continual-learning
//! metrics (AP, AF, INT, FWT).

mod matrix;
mod metrics;
mod report;

pub use matrix::{af, ap, fwt, intransigence, PerformanceMatrix};
pub use metrics::{accuracy, auroc, hits_at_k, BasicMetric};
pub use report::{Final, Report};
