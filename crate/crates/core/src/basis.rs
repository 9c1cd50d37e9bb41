//! The learnable basis `Psi = Phi G`, `G = exp(-T)`, and its pseudoinverse `Psi^+ = G^-1 Phi^T M`.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::Spectrum;

/// Smallest gain whose reciprocal is still safely representable.
pub const MIN_GAIN: f64 = 1e-300;

/// Per-index diffusion parameters `T`; the gains are `exp(-T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InhibitionFilter {
    t: Vec<f64>,
}

impl InhibitionFilter {
    /// `T = 0`, the identity inhibition.
    pub fn identity(k: usize) -> Self {
        InhibitionFilter { t: vec![0.0; k] }
    }

    pub fn new(t: Vec<f64>) -> Result<Self> {
        if let Some(i) = t.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "diffusion parameter t[{i}] = {} must be finite and >= 0",
                t[i]
            )));
        }
        Ok(InhibitionFilter { t })
    }

    /// Builds a filter from arbitrary values, clamping negatives to zero.
    pub fn projected(mut t: Vec<f64>) -> Result<Self> {
        for v in t.iter_mut() {
            *v = v.max(0.0);
        }
        Self::new(t)
    }

    pub fn k(&self) -> usize {
        self.t.len()
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn gains(&self) -> Vec<f64> {
        self.t.iter().map(|t| (-t).exp()).collect()
    }

    /// SHA-256 of the little-endian parameter bytes.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in &self.t {
            h.update(t.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self, spectrum_hash: &str) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FilterFile {
            k: self.k(),
            t: self.t.clone(),
            spectrum_hash: spectrum_hash.to_string(),
        })?)
    }

    /// Parses a filter file, returning the filter and the hash of the spectrum it was trained on.
    pub fn from_json(text: &str) -> Result<(Self, String)> {
        let file: FilterFile = serde_json::from_str(text)?;
        if file.t.len() != file.k {
            return Err(Error::DimensionMismatch(format!(
                "filter declares k = {} but has {} values",
                file.k,
                file.t.len()
            )));
        }
        Ok((Self::new(file.t)?, file.spectrum_hash))
    }
}

#[derive(Serialize, Deserialize)]
struct FilterFile {
    k: usize,
    t: Vec<f64>,
    spectrum_hash: String,
}

/// `Psi = Phi diag(g)` over a shared spectrum. Immutable; rebuild after every filter change.
#[derive(Debug, Clone)]
pub struct LearnableBasis {
    spectrum: Arc<Spectrum>,
    gains: Vec<f64>,
    psi: DMatrix<f64>,
    pinv: OnceLock<DMatrix<f64>>,
}

pub fn make_basis(spectrum: Arc<Spectrum>, filter: &InhibitionFilter) -> Result<LearnableBasis> {
    if filter.k() != spectrum.k() {
        return Err(Error::DimensionMismatch(format!(
            "filter has {} entries, spectrum has k = {}",
            filter.k(),
            spectrum.k()
        )));
    }
    let gains = filter.gains();
    if let Some(i) = gains.iter().position(|&g| g < MIN_GAIN) {
        return Err(Error::GainUnderflow(i));
    }
    let mut psi = spectrum.phi().clone();
    for (j, g) in gains.iter().enumerate() {
        psi.column_mut(j).scale_mut(*g);
    }
    Ok(LearnableBasis { spectrum, gains, psi, pinv: OnceLock::new() })
}

/// Bases for both shapes of a pair from one shared filter.
pub fn shared_filter_pair(
    spec_x: Arc<Spectrum>,
    spec_y: Arc<Spectrum>,
    filter: &InhibitionFilter,
) -> Result<(LearnableBasis, LearnableBasis)> {
    Ok((make_basis(spec_x, filter)?, make_basis(spec_y, filter)?))
}

impl LearnableBasis {
    pub fn spectrum(&self) -> &Arc<Spectrum> {
        &self.spectrum
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.spectrum.eigenvalues()
    }

    pub fn k(&self) -> usize {
        self.gains.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.psi.nrows()
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// First `k` columns of `Psi`.
    pub fn psi_k(&self, k: usize) -> Result<DMatrixView<'_, f64>> {
        self.check_k(k)?;
        Ok(self.psi.columns(0, k))
    }

    pub fn pinv(&self) -> &DMatrix<f64> {
        self.pinv.get_or_init(|| {
            let phi = self.spectrum.phi();
            let mass = self.spectrum.mass();
            DMatrix::from_fn(self.k(), self.vertex_count(), |i, v| phi[(v, i)] * mass[v] / self.gains[i])
        })
    }

    /// First `k` rows of `Psi^+`, the pseudoinverse of [`psi_k`](Self::psi_k).
    pub fn pinv_k(&self, k: usize) -> Result<DMatrixView<'_, f64>> {
        self.check_k(k)?;
        Ok(self.pinv().rows(0, k))
    }

    /// Same spectrum under a different filter.
    pub fn with_filter(&self, filter: &InhibitionFilter) -> Result<LearnableBasis> {
        make_basis(self.spectrum.clone(), filter)
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.k() {
            return Err(Error::InvalidRange(format!("truncation {k} outside 1..={}", self.k())));
        }
        Ok(())
    }
}
