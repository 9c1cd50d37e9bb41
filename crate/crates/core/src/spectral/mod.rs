//! Laplacian eigensystems and spectral filtering.

pub mod cache;
mod eigen;
pub mod factor;

pub use eigen::EigenOptions;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::Operators;

/// The first `k` M-orthonormal generalized eigenpairs of a mesh, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    phi: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    mass: Vec<f64>,
    tolerance: f64,
    mesh_hash: String,
}

impl Spectrum {
    pub fn from_parts(
        phi: DMatrix<f64>,
        eigenvalues: Vec<f64>,
        mass: Vec<f64>,
        tolerance: f64,
        mesh_hash: String,
    ) -> Result<Self> {
        if phi.ncols() != eigenvalues.len() || phi.nrows() != mass.len() {
            return Err(Error::DimensionMismatch(format!(
                "phi is {}x{}, {} eigenvalues, {} mass entries",
                phi.nrows(),
                phi.ncols(),
                eigenvalues.len(),
                mass.len()
            )));
        }
        Ok(Spectrum { phi, eigenvalues, mass, tolerance, mesh_hash })
    }

    /// Eigenfunctions as columns, `|V| x k`.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.phi.nrows()
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn mesh_hash(&self) -> &str {
        &self.mesh_hash
    }

    pub fn with_mesh_hash(mut self, hash: impl Into<String>) -> Self {
        self.mesh_hash = hash.into();
        self
    }

    /// First `k` pairs.
    pub fn truncated(&self, k: usize) -> Result<Spectrum> {
        if k == 0 || k > self.k() {
            return Err(Error::InvalidRange(format!("truncation {k} outside 1..={}", self.k())));
        }
        Ok(Spectrum {
            phi: self.phi.columns(0, k).into_owned(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            mass: self.mass.clone(),
            tolerance: self.tolerance,
            mesh_hash: self.mesh_hash.clone(),
        })
    }

    /// `M * signal` for a `|V| x d` signal.
    pub fn mass_times(&self, signal: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(signal.nrows(), signal.ncols(), |i, j| self.mass[i] * signal[(i, j)])
    }

    /// Spectral coefficients `Phi^T M signal`.
    pub fn project(&self, signal: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(signal)?;
        Ok(self.phi.tr_mul(&self.mass_times(signal)))
    }

    /// `Phi^T M`, the pseudoinverse of `Phi`.
    pub fn pinv(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k(), self.vertex_count(), |i, v| self.phi[(v, i)] * self.mass[v])
    }

    fn check_rows(&self, signal: &DMatrix<f64>) -> Result<()> {
        if signal.nrows() != self.vertex_count() {
            return Err(Error::DimensionMismatch(format!(
                "signal has {} rows, mesh has {} vertices",
                signal.nrows(),
                self.vertex_count()
            )));
        }
        Ok(())
    }
}

pub fn eigendecompose(ops: &Operators, k: usize) -> Result<Spectrum> {
    eigendecompose_with(ops, k, &EigenOptions::default())
}

/// The `k` smallest generalized eigenpairs of `(stiffness, mass)`. Each eigenfunction is
/// signed so its entry of largest magnitude is positive.
pub fn eigendecompose_with(ops: &Operators, k: usize, opts: &EigenOptions) -> Result<Spectrum> {
    let result = eigen::solve(ops, k, opts)?;
    let mut phi = result.eigenvectors;
    for mut col in phi.column_iter_mut() {
        let mut best = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    let lmax = result.eigenvalues[k - 1].abs();
    let mut eigenvalues = result.eigenvalues;
    for l in eigenvalues.iter_mut() {
        if *l < 0.0 {
            if *l < -1e-9 * lmax.max(1.0) {
                return Err(Error::Numerical(format!("negative eigenvalue {l:e}")));
            }
            *l = 0.0;
        }
    }
    Spectrum::from_parts(phi, eigenvalues, ops.mass.clone(), opts.tolerance, String::new())
}

/// Polynomial families for [`SpectralFilter::Polynomial`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolynomialBasis {
    /// `p_j(l) = l^j`
    Monomial,
    /// `p_j(l) = T_j(2 l / lambda_max - 1)`
    Chebyshev { lambda_max: f64 },
}

/// A frequency response `f(lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectralFilter {
    Polynomial { coefficients: Vec<f64>, basis: PolynomialBasis },
    HeatExponential(f64),
    DiagonalGain(Vec<f64>),
}

impl SpectralFilter {
    /// `f` evaluated at every eigenvalue.
    pub fn response(&self, eigenvalues: &[f64]) -> Result<Vec<f64>> {
        match self {
            SpectralFilter::Polynomial { coefficients, basis } => Ok(eigenvalues
                .iter()
                .map(|&l| match *basis {
                    PolynomialBasis::Monomial => coefficients.iter().rev().fold(0.0, |acc, c| acc * l + c),
                    PolynomialBasis::Chebyshev { lambda_max } => chebyshev(coefficients, 2.0 * l / lambda_max - 1.0),
                })
                .collect()),
            SpectralFilter::HeatExponential(t) => {
                if !(*t >= 0.0) {
                    return Err(Error::InvalidArgument(format!("diffusion time must be >= 0, got {t}")));
                }
                Ok(eigenvalues.iter().map(|l| (-t * l).exp()).collect())
            }
            SpectralFilter::DiagonalGain(g) => {
                if g.len() != eigenvalues.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} gains for {} eigenvalues",
                        g.len(),
                        eigenvalues.len()
                    )));
                }
                Ok(g.clone())
            }
        }
    }
}

fn chebyshev(coefficients: &[f64], x: f64) -> f64 {
    let (mut t0, mut t1) = (1.0, x);
    let mut acc = 0.0;
    for (j, c) in coefficients.iter().enumerate() {
        let tj = match j {
            0 => 1.0,
            1 => x,
            _ => {
                let t2 = 2.0 * x * t1 - t0;
                t0 = t1;
                t1 = t2;
                t2
            }
        };
        acc += c * tj;
    }
    acc
}

/// `Phi diag(f(Lambda)) Phi^T M signal`.
pub fn spectral_convolve(spec: &Spectrum, filter: &SpectralFilter, signal: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gains = filter.response(spec.eigenvalues())?;
    let mut coeffs = spec.project(signal)?;
    for (i, g) in gains.iter().enumerate() {
        coeffs.row_mut(i).scale_mut(*g);
    }
    Ok(spec.phi() * coeffs)
}

/// Heat diffusion for time `t`, i.e. convolution with `exp(-t lambda)`.
pub fn heat_diffuse(spec: &Spectrum, t: f64, signal: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spectral_convolve(spec, &SpectralFilter::HeatExponential(t), signal)
}
