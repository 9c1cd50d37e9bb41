//! Functional maps in the learnable basis, by least squares or by spectral projection.
//!
//! Convention: a pointwise map `Pi` has one row per Y-vertex and one column per X-vertex,
//! and `C` carries X-coefficients to Y-coefficients, `C = Psi_Y^+ Pi Psi_X`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::basis::LearnableBasis;
use crate::descriptors::FeatureSet;
use crate::error::{Error, Result};
use crate::pointwise::PointwiseMap;

/// Rows of the least-squares system above this condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    XToY,
    YToX,
}

impl Direction {
    fn tag(self) -> u8 {
        match self {
            Direction::XToY => 0,
            Direction::YToX => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMap {
    c: DMatrix<f64>,
    direction: Direction,
}

impl FunctionalMap {
    pub fn new(c: DMatrix<f64>, direction: Direction) -> Result<Self> {
        if !c.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "functional map must be square, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("functional map has non-finite entries".into()));
        }
        Ok(FunctionalMap { c, direction })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn k(&self) -> usize {
        self.c.nrows()
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.c
    }
}

/// Least-squares functional map at truncation `k`:
///
/// `min_C ||C Psi_X^+ F_X - Psi_Y^+ F_Y||^2 + lambda ||C Lambda_X - Lambda_Y C||^2`.
///
/// The commutativity term is diagonal per row of `C`, so row `i` solves
/// `(A A^T + lambda D_i) c_i = A b_i` with `A = Psi_X^+ F_X`, `b_i` the `i`-th row of
/// `Psi_Y^+ F_Y` and `D_i = diag((Lambda_X[j] - Lambda_Y[i])^2)`.
pub fn fmap_solve(
    features_x: &FeatureSet,
    features_y: &FeatureSet,
    basis_x: &LearnableBasis,
    basis_y: &LearnableBasis,
    k: usize,
    lambda: f64,
) -> Result<FunctionalMap> {
    if features_x.dim() != features_y.dim() {
        return Err(Error::DimensionMismatch(format!("feature dims {} vs {}", features_x.dim(), features_y.dim())));
    }
    if features_x.vertex_count() != basis_x.vertex_count() || features_y.vertex_count() != basis_y.vertex_count() {
        return Err(Error::DimensionMismatch("features and bases cover different vertex sets".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("regularization weight must be >= 0, got {lambda}")));
    }
    let a = basis_x.pinv_k(k)? * features_x.values();
    let b = basis_y.pinv_k(k)? * features_y.values();
    let gram = &a * a.transpose();
    let rhs = &a * b.transpose();
    let (lx, ly) = (&basis_x.eigenvalues()[..k], &basis_y.eigenvalues()[..k]);

    let rows: Vec<Result<DVector<f64>>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut sys = gram.clone();
            for j in 0..k {
                sys[(j, j)] += lambda * (lx[j] - ly[i]).powi(2);
            }
            let eig = SymmetricEigen::new(sys);
            let (lo, hi) =
                eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
            let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            if !(condition <= MAX_CONDITION) {
                return Err(Error::SingularSystem { row: i, condition });
            }
            let coeff = eig.eigenvectors.tr_mul(&rhs.column(i));
            let scaled = coeff.component_div(&eig.eigenvalues);
            Ok(&eig.eigenvectors * scaled)
        })
        .collect();
    let mut c = DMatrix::zeros(k, k);
    for (i, row) in rows.into_iter().enumerate() {
        c.row_mut(i).copy_from(&row?.transpose());
    }
    FunctionalMap::new(c, Direction::XToY)
}

/// `Psi_Y^+ Pi Psi_X` at truncation `k`.
pub fn fmap_project(
    pi: &PointwiseMap,
    basis_x: &LearnableBasis,
    basis_y: &LearnableBasis,
    k: usize,
) -> Result<FunctionalMap> {
    check_map(pi, basis_x, basis_y)?;
    let moved = pi.pull_back(&basis_x.psi_k(k)?.into_owned())?;
    FunctionalMap::new(basis_y.pinv_k(k)? * moved, Direction::XToY)
}

pub(crate) fn check_map(pi: &PointwiseMap, basis_x: &LearnableBasis, basis_y: &LearnableBasis) -> Result<()> {
    if pi.n_x() != basis_x.vertex_count() || pi.n_y() != basis_y.vertex_count() {
        return Err(Error::DimensionMismatch(format!(
            "map is {}x{}, bases have {} (Y) and {} (X) vertices",
            pi.n_y(),
            pi.n_x(),
            basis_y.vertex_count(),
            basis_x.vertex_count()
        )));
    }
    Ok(())
}

/// `||C_xy C_yx - I||_F^2`
pub fn energy_bijectivity(c_xy: &FunctionalMap, c_yx: &FunctionalMap) -> Result<f64> {
    if c_xy.k() != c_yx.k() {
        return Err(Error::DimensionMismatch(format!("truncations {} and {}", c_xy.k(), c_yx.k())));
    }
    let p = c_xy.matrix() * c_yx.matrix();
    Ok((p - DMatrix::identity(c_xy.k(), c_xy.k())).norm_squared())
}

/// `||C C^T - I||_F^2`
pub fn energy_orthogonality(c: &FunctionalMap) -> f64 {
    (c.matrix() * c.matrix().transpose() - DMatrix::identity(c.k(), c.k())).norm_squared()
}

/// `||C - Psi_Y^+ Pi Psi_X||_F^2`
pub fn energy_coupling(
    c: &FunctionalMap,
    pi: &PointwiseMap,
    basis_x: &LearnableBasis,
    basis_y: &LearnableBasis,
) -> Result<f64> {
    let p = fmap_project(pi, basis_x, basis_y, c.k())?;
    Ok((c.matrix() - p.matrix()).norm_squared())
}

/// `FMAP1` container: magic, direction byte, `u64` k, then `k*k` little-endian f64 row-major.
pub fn encode(map: &FunctionalMap) -> Vec<u8> {
    let k = map.k();
    let mut out = Vec::with_capacity(14 + 8 * k * k);
    out.extend_from_slice(b"FMAP1");
    out.push(map.direction.tag());
    out.extend_from_slice(&(k as u64).to_le_bytes());
    for i in 0..k {
        for j in 0..k {
            out.extend_from_slice(&map.c[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<FunctionalMap> {
    if bytes.len() < 14 || &bytes[..5] != b"FMAP1" {
        return Err(Error::Format("missing FMAP1 header".into()));
    }
    let direction = match bytes[5] {
        0 => Direction::XToY,
        1 => Direction::YToX,
        d => return Err(Error::Format(format!("unknown direction tag {d}"))),
    };
    let k = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let body = &bytes[14..];
    if k.checked_mul(k).and_then(|n| n.checked_mul(8)) != Some(body.len()) {
        return Err(Error::Format(format!("FMAP1 body has {} bytes for k = {k}", body.len())));
    }
    let c = DMatrix::from_fn(k, k, |i, j| {
        let at = 8 * (i * k + j);
        f64::from_le_bytes(body[at..at + 8].try_into().unwrap())
    });
    FunctionalMap::new(c, direction)
}

pub fn write_fmap(map: &FunctionalMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(map))?;
    Ok(())
}

pub fn read_fmap(path: impl AsRef<Path>) -> Result<FunctionalMap> {
    decode(&fs::read(path)?)
}
