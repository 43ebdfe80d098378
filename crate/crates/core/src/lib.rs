//! Identification toolkit for single-input single-output Box–Jenkins models.
//!
//! The crate provides the full pipeline used by the accompanying command-line
//! tool: polynomial arithmetic and stability tests ([`poly`]), causal
//! filtering ([`filter`]), model containers and samplers ([`model`]), seeded
//! signal generation ([`sim`]), high-order equation-error prefitting with
//! order selection ([`arx`]), the three-stage sequential least-squares
//! estimator ([`sd`]), Gauss–Newton refinement of the prediction-error loss
//! ([`pem`]), accuracy metrics ([`metrics`]), and the Monte Carlo experiment
//! harness ([`experiment`]).

pub mod arx;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod lsq;
pub mod metrics;
pub mod model;
pub mod pem;
pub mod poly;
pub mod sd;
pub mod sim;

pub use dataset::{Dataset, Regime};
pub use error::{Error, Result};
pub use model::{BjModel, ModelOrders, ThetaVector};
pub use poly::{Polynomial, RationalFilter};
