//! Fibred (label-conditional) optimal transport and structured continuity equations.
//!
//! A fibred probability measure lives on `Ω × ℝᵈ` with a fixed label marginal
//! `π` on `Ω = [0,1]`; only the space variable is ever transported. This crate
//! provides:
//!
//! - finite-support fibred measures, their moments, marginals and
//!   conditional expectations ([`measures`]),
//! - exact Wasserstein and fibred Wasserstein distances plus a
//!   Kantorovich–Rubinstein dual evaluator ([`transport`]),
//! - a vector-field catalogue for nonexchangeable mean-field models
//!   (graphon / Kuramoto / Michaelis–Menten / leader–follower / linear)
//!   with declared growth metadata ([`fields`]),
//! - canonical equipartitions, field averaging and i.i.d. initial sampling
//!   ([`discretize`]),
//! - particle-system integrators, the delayed Euler scheme and the flow
//!   fixed-point ([`dynamics`]),
//! - a-priori bounds, stability envelopes and convergence-rate fitting
//!   ([`analysis`]),
//! - JSON/CSV serialisation of the above ([`io`]).
//!
//! All numerics are generic over the scalar type through [`Scalar`];
//! concrete `f64` aliases are exported at the crate root.

pub mod analysis;
pub mod discretize;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod io;
pub mod measures;
pub mod scalar;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` aliases for the main domain types.
pub type LabelMarginal64 = measures::LabelMarginal<f64>;
pub type Cell64 = measures::Cell<f64>;
pub type Fibre64 = measures::Fibre<f64>;
pub type FibredMeasure64 = measures::FibredMeasure<f64>;
pub type DiscreteMeasure64 = measures::DiscreteMeasure<f64>;
pub type Partition64 = discretize::Partition<f64>;
pub type VectorField64 = fields::VectorField<f64>;
pub type TimeGrid64 = dynamics::TimeGrid<f64>;
pub type TrajectoryEnsemble64 = dynamics::TrajectoryEnsemble<f64>;
pub type MeasureCurve64 = dynamics::MeasureCurve<f64>;
