//! Functional maps over learnable spectral bases.
//!
//! The crate covers the whole correspondence pipeline between two triangle meshes:
//!
//! * [`mesh`]: loading, cotangent/mass operators, edge-graph geodesics.
//! * [`spectral`]: truncated generalized eigensystems and spectral filtering.
//! * [`basis`]: the inhibited basis `Psi = Phi exp(-T)` and its closed-form pseudoinverse.
//! * [`descriptors`]: heat and wave kernel signatures, learnable linear feature transform.
//! * [`fmap`]: functional maps by least squares or by spectral projection, map energies.
//! * [`pointwise`]: soft and hard pointwise maps, nearest-neighbour recovery, G-ZoomOut,
//!   the multi-resolution spectral loss.
//! * [`learn`]: unsupervised optimization of the inhibition filter and feature transform.
//! * [`eval`]: geodesic error, PCK curves, synthetic pairs and the end-to-end pipeline.

pub mod basis;
pub mod descriptors;
pub mod error;
pub mod eval;
pub mod fmap;
pub mod learn;
pub mod mesh;
pub mod pointwise;
pub mod spectral;

pub use basis::{make_basis, shared_filter_pair, InhibitionFilter, LearnableBasis};
pub use descriptors::{FeatureKind, FeatureSet, FeatureTransform};
pub use error::{Error, Result};
pub use fmap::{Direction, FunctionalMap};
pub use mesh::{Operators, TriMesh};
pub use pointwise::PointwiseMap;
pub use spectral::{SpectralFilter, Spectrum};
