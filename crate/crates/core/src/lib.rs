//! Interactive change detection with learned virtual-exemplar displays.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`, which is what the session
//! service and the experiment runner use.

pub mod active_loop;
pub mod classifier;
pub mod dataset;
pub mod display;
pub mod error;
pub mod evaluation;
pub mod optimizer;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use dataset::{Label, SampleId, Split};
pub use display::{Display, DisplayOrigin, Strategy};
pub use evaluation::MetricRecord;
pub use optimizer::{Gates, Variant};

pub type Sample = dataset::Sample<f64>;
pub type Pool = dataset::Pool<f64>;
pub type ClassifierModel = classifier::ClassifierModel<f64>;
pub type TrainConfig = classifier::TrainConfig<f64>;
pub type MembershipMatrix = optimizer::MembershipMatrix<f64>;
pub type ExemplarSet = optimizer::ExemplarSet<f64>;
pub type OptimizerConfig = optimizer::OptimizerConfig<f64>;
pub type SolveResult = optimizer::SolveResult<f64>;
pub type SessionConfig = active_loop::SessionConfig<f64>;
pub type SessionState = active_loop::SessionState<f64>;

pub type Pool32 = dataset::Pool<f32>;
pub type ClassifierModel32 = classifier::ClassifierModel<f32>;
pub type OptimizerConfig32 = optimizer::OptimizerConfig<f32>;
pub type SessionState32 = active_loop::SessionState<f32>;
