//! Pointwise maps: softmax correspondences, nearest-neighbour recovery, G-ZoomOut and the
//! multi-resolution spectral loss.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::LearnableBasis;
use crate::descriptors::FeatureSet;
use crate::error::{Error, Result};
use crate::fmap::{check_map, fmap_project, FunctionalMap};

/// Row-sum tolerance for soft maps.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Correspondence from Y-vertices (rows) to X-vertices (columns).
#[derive(Debug, Clone, PartialEq)]
pub enum PointwiseMap {
    /// `indices[y]` is the X-vertex matched to `y`.
    Hard { indices: Vec<usize>, n_x: usize },
    /// Row-stochastic `|V_Y| x |V_X|` matrix.
    Soft(DMatrix<f64>),
}

impl PointwiseMap {
    pub fn hard(indices: Vec<usize>, n_x: usize) -> Result<Self> {
        if let Some((y, &x)) = indices.iter().enumerate().find(|(_, &x)| x >= n_x) {
            return Err(Error::InvalidArgument(format!("vertex {y} maps to {x}, outside 0..{n_x}")));
        }
        Ok(PointwiseMap::Hard { indices, n_x })
    }

    pub fn identity(n: usize) -> Self {
        PointwiseMap::Hard { indices: (0..n).collect(), n_x: n }
    }

    pub fn soft(matrix: DMatrix<f64>) -> Result<Self> {
        for (y, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidArgument(format!("soft map row {y} has negative or non-finite entries")));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!("soft map row {y} sums to {sum}")));
            }
        }
        Ok(PointwiseMap::Soft(matrix))
    }

    pub fn n_y(&self) -> usize {
        match self {
            PointwiseMap::Hard { indices, .. } => indices.len(),
            PointwiseMap::Soft(m) => m.nrows(),
        }
    }

    pub fn n_x(&self) -> usize {
        match self {
            PointwiseMap::Hard { n_x, .. } => *n_x,
            PointwiseMap::Soft(m) => m.ncols(),
        }
    }

    pub fn indices(&self) -> Option<&[usize]> {
        match self {
            PointwiseMap::Hard { indices, .. } => Some(indices),
            PointwiseMap::Soft(_) => None,
        }
    }

    /// Hard maps unchanged; soft maps take the arg-max of each row (lowest index on ties).
    pub fn to_hard(&self) -> PointwiseMap {
        match self {
            PointwiseMap::Hard { .. } => self.clone(),
            PointwiseMap::Soft(m) => {
                let indices = m
                    .row_iter()
                    .map(|row| {
                        let mut best = 0;
                        for (j, v) in row.iter().enumerate() {
                            if *v > row[best] {
                                best = j;
                            }
                        }
                        best
                    })
                    .collect();
                PointwiseMap::Hard { indices, n_x: m.ncols() }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            PointwiseMap::Hard { indices, n_x } => {
                let mut m = DMatrix::zeros(indices.len(), *n_x);
                for (y, &x) in indices.iter().enumerate() {
                    m[(y, x)] = 1.0;
                }
                m
            }
            PointwiseMap::Soft(m) => m.clone(),
        }
    }

    /// `Pi S` for a signal `S` on X.
    pub fn pull_back(&self, signal: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if signal.nrows() != self.n_x() {
            return Err(Error::DimensionMismatch(format!(
                "signal has {} rows, map expects {}",
                signal.nrows(),
                self.n_x()
            )));
        }
        Ok(match self {
            PointwiseMap::Hard { indices, .. } => {
                DMatrix::from_fn(indices.len(), signal.ncols(), |y, j| signal[(indices[y], j)])
            }
            PointwiseMap::Soft(m) => m * signal,
        })
    }
}

/// Row-wise softmax, each row shifted by its maximum before exponentiation.
pub(crate) fn softmax_rows(mut logits: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in logits.row_iter_mut() {
        let top = row.max();
        row.apply(|v| *v = (*v - top).exp());
        let sum = row.sum();
        row /= sum;
    }
    logits
}

/// `softmax(F_Y F_X^T / alpha)` row by row.
pub fn soft_map(features_x: &FeatureSet, features_y: &FeatureSet, alpha: f64) -> Result<PointwiseMap> {
    if features_x.dim() != features_y.dim() {
        return Err(Error::DimensionMismatch(format!("feature dims {} vs {}", features_x.dim(), features_y.dim())));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("softmax temperature must be positive, got {alpha}")));
    }
    let logits = features_y.values() * features_x.values().transpose() / alpha;
    let pi = softmax_rows(logits);
    if pi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("soft map has non-finite entries".into()));
    }
    Ok(PointwiseMap::Soft(pi))
}

fn row_major(m: &DMatrixView<'_, f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for row in m.row_iter() {
        out.extend(row.iter());
    }
    out
}

/// Exact Euclidean nearest neighbour in `emb_x` for every row of `emb_y`;
/// ties go to the lowest X index.
pub fn nn_map<'a, 'b>(
    emb_y: impl Into<DMatrixView<'a, f64>>,
    emb_x: impl Into<DMatrixView<'b, f64>>,
) -> Result<PointwiseMap> {
    let (emb_y, emb_x) = (emb_y.into(), emb_x.into());
    let d = emb_x.ncols();
    if emb_y.ncols() != d {
        return Err(Error::DimensionMismatch(format!("embedding widths {} vs {d}", emb_y.ncols())));
    }
    if emb_x.nrows() == 0 {
        return Err(Error::InvalidArgument("nearest neighbour search over an empty set".into()));
    }
    let (ys, xs) = (row_major(&emb_y), row_major(&emb_x));
    let indices = ys
        .par_chunks(d.max(1))
        .take(emb_y.nrows())
        .map(|q| {
            let mut best = (f64::INFINITY, 0);
            for (i, p) in xs.chunks(d.max(1)).take(emb_x.nrows()).enumerate() {
                let dist: f64 = q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, i);
                }
            }
            best.1
        })
        .collect();
    Ok(PointwiseMap::Hard { indices, n_x: emb_x.nrows() })
}

/// Nearest neighbours between `Psi_Y` and `Psi_X C^T` at the truncation of `c`.
pub fn recover_map(c: &FunctionalMap, basis_x: &LearnableBasis, basis_y: &LearnableBasis) -> Result<PointwiseMap> {
    let k = c.k();
    let aligned = basis_x.psi_k(k)? * c.matrix().transpose();
    nn_map(basis_y.psi_k(k)?, &aligned)
}

/// Truncation orders `k_init, k_init + step, ...`, always ending at `k_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub k_init: usize,
    pub k_end: usize,
    pub step: usize,
}

impl Schedule {
    pub fn new(k_init: usize, k_end: usize, step: usize) -> Self {
        Schedule { k_init, k_end, step }
    }

    /// Checks `1 <= k_init <= k_end <= k_max` and `step >= 1`.
    pub fn validate(&self, k_max: usize) -> Result<()> {
        if self.step == 0 || self.k_init == 0 || self.k_init > self.k_end || self.k_end > k_max {
            return Err(Error::InvalidRange(format!(
                "schedule {}..={} step {} incompatible with k = {k_max}",
                self.k_init, self.k_end, self.step
            )));
        }
        Ok(())
    }

    pub fn ks(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (self.k_init..=self.k_end).step_by(self.step.max(1)).collect();
        if out.last() != Some(&self.k_end) {
            out.push(self.k_end);
        }
        out
    }
}

/// `||Psi_Y,k - Pi Psi_X,k C^T||_F^2`.
pub fn zoomout_energy(
    pi: &PointwiseMap,
    c: &FunctionalMap,
    basis_x: &LearnableBasis,
    basis_y: &LearnableBasis,
) -> Result<f64> {
    check_map(pi, basis_x, basis_y)?;
    let k = c.k();
    let moved = pi.pull_back(&(basis_x.psi_k(k)? * c.matrix().transpose()))?;
    Ok((basis_y.psi_k(k)? - moved).norm_squared())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoomOutStep {
    pub k: usize,
    /// Energy of the map produced at this step against the functional map it was recovered from.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoomOut {
    pub map: PointwiseMap,
    pub trace: Vec<ZoomOutStep>,
}

/// Alternates projection `C = Psi_Y^+ Pi Psi_X` and recovery `Pi = NN(Psi_Y, Psi_X C^T)` while
/// the truncation grows along `schedule`. Each projection uses the map of the previous step.
pub fn g_zoomout(
    pi_init: &PointwiseMap,
    basis_x: &LearnableBasis,
    basis_y: &LearnableBasis,
    schedule: Schedule,
) -> Result<ZoomOut> {
    schedule.validate(basis_x.k().min(basis_y.k()))?;
    check_map(pi_init, basis_x, basis_y)?;
    let mut map = pi_init.clone();
    let mut trace = Vec::new();
    for k in schedule.ks() {
        let c = fmap_project(&map, basis_x, basis_y, k)?;
        map = recover_map(&c, basis_x, basis_y)?;
        trace.push(ZoomOutStep { k, energy: zoomout_energy(&map, &c, basis_x, basis_y)? });
    }
    Ok(ZoomOut { map, trace })
}

/// Sum over the schedule of `||Psi_Y,k - Pi Psi_X,k C_k^T||^2` with `C_k` the projection of `Pi`.
pub fn mrs_loss(
    pi: &PointwiseMap,
    basis_x: &LearnableBasis,
    basis_y: &LearnableBasis,
    schedule: Schedule,
) -> Result<f64> {
    schedule.validate(basis_x.k().min(basis_y.k()))?;
    check_map(pi, basis_x, basis_y)?;
    let moved = pi.pull_back(&basis_x.psi_k(schedule.k_end)?.into_owned())?;
    let mut total = 0.0;
    for k in schedule.ks() {
        let h = moved.columns(0, k);
        let c = basis_y.pinv_k(k)? * h;
        total += (basis_y.psi_k(k)? - h * c.transpose()).norm_squared();
    }
    Ok(total)
}

/// Splits `||X||_M^2` into the part captured by the basis, `||G Psi^+ X||_F^2`, and the
/// residual `||(I - Psi Psi^+) X||_M^2`. Returns `(total, captured, residual)`.
pub fn subspace_split(basis: &LearnableBasis, signal: &DMatrix<f64>) -> Result<(f64, f64, f64)> {
    if signal.nrows() != basis.vertex_count() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} rows, basis {}",
            signal.nrows(),
            basis.vertex_count()
        )));
    }
    let mass = basis.spectrum().mass();
    let m_norm = |x: &DMatrix<f64>| -> f64 { x.row_iter().zip(mass).map(|(r, m)| m * r.norm_squared()).sum() };
    let coeffs = basis.pinv() * signal;
    let mut weighted = coeffs.clone();
    for (i, g) in basis.gains().iter().enumerate() {
        weighted.row_mut(i).scale_mut(*g);
    }
    let residual = signal - basis.psi() * coeffs;
    Ok((m_norm(signal), weighted.norm_squared(), m_norm(&residual)))
}

/// One index per line, 0-based unless `one_based`.
pub fn write_indices<W: Write>(map: &PointwiseMap, mut out: W, one_based: bool) -> Result<()> {
    let indices =
        map.indices().ok_or_else(|| Error::InvalidArgument("only hard maps serialize as index lists".into()))?;
    let offset = usize::from(one_based);
    for i in indices {
        writeln!(out, "{}", i + offset)?;
    }
    Ok(())
}

pub fn read_indices(text: &str, n_x: usize, one_based: bool) -> Result<PointwiseMap> {
    let mut indices = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: usize =
            line.parse().map_err(|_| Error::Parse(format!("line {}: expected an index, got {line:?}", line_no + 1)))?;
        let v = if one_based {
            v.checked_sub(1).ok_or_else(|| Error::Parse(format!("line {}: index 0 in a 1-based file", line_no + 1)))?
        } else {
            v
        };
        indices.push(v);
    }
    PointwiseMap::hard(indices, n_x).map_err(|e| Error::Parse(e.to_string()))
}

/// `PMAP1` container for soft maps: magic, `u64` rows, `u64` cols, row-major f64.
pub fn encode_soft(map: &PointwiseMap) -> Result<Vec<u8>> {
    let PointwiseMap::Soft(m) = map else {
        return Err(Error::InvalidArgument("PMAP1 stores soft maps".into()));
    };
    let mut out = Vec::with_capacity(21 + 8 * m.len());
    out.extend_from_slice(b"PMAP1");
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for row in m.row_iter() {
        for v in row.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_soft(bytes: &[u8]) -> Result<PointwiseMap> {
    if bytes.len() < 21 || &bytes[..5] != b"PMAP1" {
        return Err(Error::Format("missing PMAP1 header".into()));
    }
    let rows = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    let body = &bytes[21..];
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(8)) != Some(body.len()) {
        return Err(Error::Format(format!("PMAP1 body has {} bytes for {rows}x{cols}", body.len())));
    }
    let m = DMatrix::from_fn(rows, cols, |i, j| {
        let at = 8 * (i * cols + j);
        f64::from_le_bytes(body[at..at + 8].try_into().unwrap())
    });
    PointwiseMap::soft(m)
}

pub fn write_soft(map: &PointwiseMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_soft(map)?)?;
    Ok(())
}

pub fn read_soft(path: impl AsRef<Path>) -> Result<PointwiseMap> {
    decode_soft(&fs::read(path)?)
}
