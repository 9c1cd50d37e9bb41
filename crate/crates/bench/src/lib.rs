//! Fixtures shared by the criterion benches.

use std::sync::Arc;

use basisfm::descriptors::{default_hks_times, hks, xyz};
use basisfm::eval::{make_synthetic_pair, Deformation, SyntheticPair};
use basisfm::learn::{ShapeData, TrainPair};
use basisfm::mesh::{build_operators, shapes};
use basisfm::spectral::{eigendecompose, Spectrum};
use basisfm::{make_basis, FeatureSet, InhibitionFilter, LearnableBasis};

/// Noisy permuted icosphere pair at the given subdivision level.
pub fn sphere_pair(subdivisions: usize) -> SyntheticPair {
    let base = shapes::icosphere(subdivisions).expect("icosphere");
    make_synthetic_pair(&base, Deformation::NoisyPermutation { sigma: 0.01 }, 0).expect("pair")
}

pub struct Prepared {
    pub spectrum: Arc<Spectrum>,
    pub features: FeatureSet,
    pub basis: LearnableBasis,
}

/// Spectra, 16 HKS plus XYZ features, and identity-filter bases for both shapes of `pair`.
pub fn prepare(pair: &SyntheticPair, k: usize) -> (Prepared, Prepared) {
    let spec = |m| Arc::new(eigendecompose(&build_operators(m).expect("operators"), k).expect("spectrum"));
    let (sx, sy) = (spec(&pair.x), spec(&pair.y));
    let times = default_hks_times(&sx, 16).expect("times");
    let feat = |s: &Spectrum, m| hks(s, &times).and_then(|h| h.concat(&xyz(m)?)).expect("features");
    let side = |s: Arc<Spectrum>, m| Prepared {
        features: feat(&s, m),
        basis: make_basis(s.clone(), &InhibitionFilter::identity(k)).expect("basis"),
        spectrum: s,
    };
    (side(sx, &pair.x), side(sy, &pair.y))
}

pub fn train_pair(x: &Prepared, y: &Prepared) -> TrainPair {
    TrainPair {
        x: Arc::new(ShapeData { spectrum: x.spectrum.clone(), features: x.features.clone() }),
        y: Arc::new(ShapeData { spectrum: y.spectrum.clone(), features: y.features.clone() }),
    }
}
