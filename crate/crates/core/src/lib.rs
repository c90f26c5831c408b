//! pairlab: a numerical laboratory for transmitting images encoded in
//! photon-pair correlations through complex media.
//!
//! The crate builds discrete two-photon states (object-encoded, guide,
//! difference-encoded and separable mixed ensembles), propagates them through
//! synthetic scattering operators with the bilinear law `S * Psi * S^t`,
//! projects coincidence statistics onto sum/difference correlation images,
//! synthesizes and processes time-tagged detection events, measures
//! transmission matrices interferometrically, and runs the partitioning
//! wavefront-shaping optimizer that discovers transformations transparent to
//! entangled pairs while opaque to classical light.

pub mod biphoton;
pub mod correlate;
pub mod media;
pub mod propagate;
pub mod shapeopt;
pub mod tmatrix;
pub mod error;
pub mod events;
pub mod io;
pub mod lattice;

pub use error::{Error, Result};
