//! Bitrate-constrained reinforcement learning with a learned latent prior.

pub mod agent;
pub mod bounds;
pub mod config;
pub mod distrib;
pub mod envs;
pub mod evalharness;
pub mod hrl;
pub mod numgraph;
pub mod scalar;

pub use scalar::Real;

pub type Tensor = numgraph::Tensor<f64>;
pub type Graph = numgraph::Graph<f64>;
pub type ParamStore = numgraph::ParamStore<f64>;
pub type DiagGaussian = distrib::DiagGaussian<f64>;
