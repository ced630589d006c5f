//! Adversarial sample detection from the trajectories inputs follow through
//! the blocks of a residual classifier.

pub mod attacks;
pub mod autodiff;
pub mod cli;
pub mod detect;
pub mod error;
pub mod evalharness;
pub mod model;
pub mod scalar;
pub mod textfmt;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Net = model::ResidualNet<f64>;
pub type Trajectory64 = model::Trajectory<f64>;
pub type Dataset64 = evalharness::Dataset<f64>;
pub type AttackResult64 = attacks::AttackResult<f64>;
pub type TrainReport64 = trainer::TrainReport<f64>;
