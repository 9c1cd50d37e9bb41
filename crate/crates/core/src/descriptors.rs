//! Per-vertex spectral descriptors and a linear feature transform.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::spectral::Spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Hks,
    Wks,
    Xyz,
    Transformed,
    /// Supplied by the caller.
    Provided,
}

/// A `|V| x d` descriptor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    values: DMatrix<f64>,
    kind: FeatureKind,
}

impl FeatureSet {
    pub fn new(values: DMatrix<f64>, kind: FeatureKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
        Ok(FeatureSet { values, kind })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn vertex_count(&self) -> usize {
        self.values.nrows()
    }

    /// Side-by-side concatenation of two feature sets on the same mesh.
    pub fn concat(&self, other: &FeatureSet) -> Result<FeatureSet> {
        if self.vertex_count() != other.vertex_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} vs {} vertices",
                self.vertex_count(),
                other.vertex_count()
            )));
        }
        let (n, a, b) = (self.vertex_count(), self.dim(), other.dim());
        let values =
            DMatrix::from_fn(n, a + b, |i, j| if j < a { self.values[(i, j)] } else { other.values[(i, j - a)] });
        let kind = if self.kind == other.kind { self.kind } else { FeatureKind::Provided };
        Ok(FeatureSet { values, kind })
    }

    /// First column whose spread is zero relative to its magnitude.
    pub fn dead_channel(&self) -> Option<usize> {
        let n = self.vertex_count() as f64;
        (0..self.dim()).find(|&j| {
            let col = self.values.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let scale = col.amax();
            scale == 0.0 || var.sqrt() <= 1e-12 * scale
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        writeln!(out, "vertex,{}", header.join(","))?;
        for (i, row) in self.values.row_iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{i},{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn normalize_columns(values: &mut DMatrix<f64>, mass: &[f64]) {
    for mut col in values.column_iter_mut() {
        let norm = col.iter().zip(mass).map(|(v, m)| v * v * m).sum::<f64>().sqrt();
        if norm > 0.0 {
            col /= norm;
        }
    }
}

/// Heat kernel signature `sum_i exp(-t lambda_i) phi_i(v)^2`, one column per time,
/// each column normalized in the mass-weighted L2 norm.
pub fn hks(spec: &Spectrum, times: &[f64]) -> Result<FeatureSet> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("hks needs at least one time".into()));
    }
    if times.iter().any(|t| !(*t > 0.0)) || times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("hks times must be positive and ascending".into()));
    }
    let phi = spec.phi();
    let lambda = spec.eigenvalues();
    let mut values = DMatrix::zeros(spec.vertex_count(), times.len());
    for (c, &t) in times.iter().enumerate() {
        // relative to the smallest eigenvalue, so huge times keep the lowest mode
        let w: Vec<f64> = lambda.iter().map(|l| (-t * (l - lambda[0])).exp()).collect();
        for v in 0..spec.vertex_count() {
            values[(v, c)] = (0..spec.k()).map(|i| w[i] * phi[(v, i)] * phi[(v, i)]).sum();
        }
    }
    normalize_columns(&mut values, spec.mass());
    FeatureSet::new(values, FeatureKind::Hks)
}

/// `count` log-spaced times over `[4 ln 10 / lambda_{k-1}, 4 ln 10 / lambda_1]`.
pub fn default_hks_times(spec: &Spectrum, count: usize) -> Result<Vec<f64>> {
    let lambda = spec.eigenvalues();
    if spec.k() < 3 || !(lambda[1] > 0.0) || count == 0 {
        return Err(Error::InvalidArgument("default hks times need k >= 3, lambda_1 > 0, count > 0".into()));
    }
    let lo = (4.0 * 10f64.ln() / lambda[spec.k() - 1]).ln();
    let hi = (4.0 * 10f64.ln() / lambda[1]).ln();
    if count == 1 {
        return Ok(vec![lo.exp()]);
    }
    Ok((0..count).map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp()).collect())
}

/// Wave kernel signature over log-eigenvalue `energies` with Gaussian bands of width `sigma`.
/// The zero mode is skipped; band weights are normalized, so each entry is a convex
/// combination of `phi_i(v)^2`.
pub fn wks(spec: &Spectrum, energies: &[f64], sigma: f64) -> Result<FeatureSet> {
    if energies.is_empty() {
        return Err(Error::InvalidArgument("wks needs at least one energy".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("wks sigma must be positive, got {sigma}")));
    }
    let phi = spec.phi();
    let modes: Vec<usize> = (0..spec.k()).filter(|&i| spec.eigenvalues()[i] > 0.0).collect();
    if modes.is_empty() {
        return Err(Error::InvalidArgument("wks needs a nonzero eigenvalue".into()));
    }
    let log_l: Vec<f64> = modes.iter().map(|&i| spec.eigenvalues()[i].ln()).collect();
    let mut values = DMatrix::zeros(spec.vertex_count(), energies.len());
    for (c, &e) in energies.iter().enumerate() {
        let expo: Vec<f64> = log_l.iter().map(|l| -(e - l) * (e - l) / (2.0 * sigma * sigma)).collect();
        let top = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = expo.iter().map(|x| (x - top).exp()).collect();
        let total: f64 = w.iter().sum();
        for v in 0..spec.vertex_count() {
            values[(v, c)] = modes.iter().zip(&w).map(|(&i, w)| w * phi[(v, i)] * phi[(v, i)]).sum::<f64>() / total;
        }
    }
    normalize_columns(&mut values, spec.mass());
    FeatureSet::new(values, FeatureKind::Wks)
}

/// `count` energies evenly spaced over `[ln lambda_1, ln lambda_{k-1}]` and the band width
/// conventionally used with them (seven times the spacing).
pub fn default_wks_energies(spec: &Spectrum, count: usize) -> Result<(Vec<f64>, f64)> {
    let lambda = spec.eigenvalues();
    if spec.k() < 3 || !(lambda[1] > 0.0) || count < 2 {
        return Err(Error::InvalidArgument("default wks energies need k >= 3, lambda_1 > 0, count >= 2".into()));
    }
    let lo = lambda[1].ln();
    let hi = lambda[spec.k() - 1].ln();
    let delta = (hi - lo) / (count - 1) as f64;
    Ok(((0..count).map(|i| lo + delta * i as f64).collect(), 7.0 * delta))
}

/// Centered vertex coordinates.
pub fn xyz(mesh: &TriMesh) -> Result<FeatureSet> {
    let n = mesh.vertex_count();
    let mut values = DMatrix::from_fn(n, 3, |i, j| mesh.vertices()[i][j]);
    for mut col in values.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    FeatureSet::new(values, FeatureKind::Xyz)
}

/// Linear map `d -> d'` applied to descriptor rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    #[serde(with = "matrix_serde")]
    a: DMatrix<f64>,
}

impl FeatureTransform {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature transform has non-finite entries".into()));
        }
        Ok(FeatureTransform { a })
    }

    /// `d x d_out` identity, zero-padded when the shapes differ.
    pub fn identity(d: usize, d_out: usize) -> Self {
        FeatureTransform { a: DMatrix::identity(d, d_out) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn input_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: FeatureTransform = serde_json::from_str(text)?;
        Self::new(t.a)
    }
}

/// `values * A`. Fails on a column-count mismatch or when a resulting channel is dead.
pub fn apply_transform(features: &FeatureSet, transform: &FeatureTransform) -> Result<FeatureSet> {
    if features.dim() != transform.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "features have {} channels, transform expects {}",
            features.dim(),
            transform.input_dim()
        )));
    }
    let out = FeatureSet::new(features.values() * transform.matrix(), FeatureKind::Transformed)?;
    if let Some(j) = out.dead_channel() {
        return Err(Error::DeadChannel(j));
    }
    Ok(out)
}

mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Rows {
        rows: usize,
        cols: usize,
        data: Vec<Vec<f64>>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        Rows { rows: m.nrows(), cols: m.ncols(), data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Rows::deserialize(d)?;
        if r.data.len() != r.rows || r.data.iter().any(|row| row.len() != r.cols) {
            return Err(serde::de::Error::custom("matrix rows do not match declared shape"));
        }
        Ok(DMatrix::from_fn(r.rows, r.cols, |i, j| r.data[i][j]))
    }
}
