//! Geostatistical seismic inversion with multi-scale uncertainty
//! quantification.
//!
//! Local uncertainty comes from stochastic sequential simulation inside the
//! global stochastic inversion loop ([`gsi`]); large-scale uncertainty about
//! variogram ranges and the impedance mixture model is sampled by a particle
//! swarm ([`pso`]) and turned into a posterior by Voronoi-cell Gibbs
//! resampling ([`nab`]).

pub mod dss;
pub mod forward;
pub mod metaspace;
pub mod nab;
pub mod pso;
pub mod error;
pub mod grid;
pub mod gsi;
pub mod kriging;
pub mod linalg;
pub mod rng;
pub mod synthetic;
pub mod variogram;

pub use error::{Error, Result};
