//! Statistical forward model and Bayesian inversion for a single-material
//! Compton imager.
//!
//! The crate is organised bottom-up:
//!
//! - [`physics`]: Compton kinematics, Klein–Nishina deposits, attenuation data.
//! - [`geometry`]: sensor boxes, ray traversal, in-material path lengths.
//! - [`forward`]: stage densities of the two-interaction event likelihood.
//! - [`simulate`]: Monte Carlo transport, noise and outlier injection.
//! - [`energy_em`]: EM estimate of source energy, resolution and event kinds.
//! - [`localize`]: Metropolis-within-Gibbs sampler for source directions.
//! - [`analysis`]: back-projection, spherical statistics, coverage, de-entangling.
//! - [`pipeline`]: configuration, manifests and the command implementations.
//!
//! Units are MeV and mm everywhere.

pub mod analysis;
pub mod energy_em;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod localize;
pub mod physics;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod sphere;
pub mod stats;

pub use error::{Error, Result};
