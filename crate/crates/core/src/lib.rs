//! Gradient-free source seeking for robot swarms.
//!
//! A swarm spread around its centroid can steer towards the maximum of an
//! unknown positive scalar field using nothing but field-strength readings at
//! the robot positions. The library computes that sampled ascending direction,
//! its first-order model, certificates that the direction ascends throughout a
//! region, predictions of how the direction reacts to affine morphs of the
//! formation, and ships a deterministic single-integrator simulator with
//! actuator noise, robot deaths and shape morphing.
//!
//! The pieces map onto four modules:
//!
//! * [`field`] — analytic scalar fields with gradients, Hessians and
//!   per-region derivative bounds.
//! * [`deployment`] — robot offsets around the centroid: generators for
//!   regular polygons/polyhedra, affine morphs and density sampling.
//! * [`ascent`] — the sampled direction, its first-order model, ascent
//!   certificates and morphing predictions.
//! * [`sim`] — the seeded swarm simulator and trajectory logging.

pub mod ascent;
pub mod deployment;
mod error;
pub mod field;
pub mod geometry;
pub mod sim;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
