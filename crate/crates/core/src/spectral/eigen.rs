//! Truncated generalized eigensolver for `K x = lambda M x` with `K` the cotangent
//! stiffness and `M` the lumped (diagonal) mass.
//!
//! Shift-invert block Krylov iteration: the basis is grown with blocks of
//! `(K - sigma M)^{-1} M V`, kept M-orthonormal by two passes of classical Gram-Schmidt,
//! and the original pencil is projected onto it (Rayleigh-Ritz) after every block.
//! The constant function spans the kernel of `K` on a connected mesh and is seeded as
//! the first basis vector, so the factorization never has to resolve it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::factor::SkylineCholesky;
use crate::error::{Error, Result};
use crate::mesh::{CsrMatrix, Operators};

#[derive(Debug, Clone, PartialEq)]
pub struct EigenOptions {
    /// Relative residual `||K x - l M x||_{M^-1} / l_max` every wanted pair must reach.
    pub tolerance: f64,
    pub block_size: usize,
    /// Shift as a fraction of `trace(K) / trace(M)`; negative so the factorized matrix is definite.
    pub relative_shift: f64,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { tolerance: 1e-10, block_size: 8, relative_shift: -1e-8, seed: 0x5eed }
    }
}

pub(crate) struct EigenResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

fn structural_components(k: &CsrMatrix) -> usize {
    let n = k.dim();
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = count;
        stack.push(s);
        while let Some(u) = stack.pop() {
            for (v, _) in k.row(u) {
                if label[v] == usize::MAX {
                    label[v] = count;
                    stack.push(v);
                }
            }
        }
        count += 1;
    }
    count
}

struct Basis<'a> {
    mass: &'a [f64],
    q: Vec<DVector<f64>>,
    kq: Vec<DVector<f64>>,
}

impl Basis<'_> {
    fn m_dot(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.iter().zip(b.iter()).zip(self.mass).map(|((x, y), m)| x * y * m).sum()
    }

    /// M-orthogonalizes `w` against the basis and appends it unless it is numerically dependent.
    fn push(&mut self, mut w: DVector<f64>, stiffness: &CsrMatrix) -> bool {
        let start = self.m_dot(&w, &w).sqrt();
        if start == 0.0 || !start.is_finite() {
            return false;
        }
        for _ in 0..2 {
            let coeffs: Vec<f64> = self.q.iter().map(|q| self.m_dot(q, &w)).collect();
            for (q, c) in self.q.iter().zip(coeffs) {
                w.axpy(-c, q, 1.0);
            }
        }
        let norm = self.m_dot(&w, &w).sqrt();
        if norm <= 1e-10 * start {
            return false;
        }
        w /= norm;
        let mut kw = DVector::zeros(w.len());
        stiffness.mul_vec(w.as_slice(), kw.as_mut_slice());
        self.q.push(w);
        self.kq.push(kw);
        true
    }
}

pub(crate) fn solve(ops: &Operators, k: usize, opts: &EigenOptions) -> Result<EigenResult> {
    let stiffness = &ops.stiffness;
    let mass = &ops.mass;
    let n = stiffness.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 0 < k <= |V|, got k = {k}, |V| = {n}")));
    }
    let components = structural_components(stiffness);
    if components > 1 {
        return Err(Error::FirstEigenvalue(components));
    }
    let total_mass: f64 = mass.iter().sum();
    let scale = stiffness.trace() / total_mass;
    let sigma = opts.relative_shift * scale;
    let shift: Vec<f64> = mass.iter().map(|m| -sigma * m).collect();
    let chol = SkylineCholesky::factor(stiffness, &shift)?;

    let mut basis = Basis { mass, q: Vec::new(), kq: Vec::new() };
    basis.push(DVector::from_element(n, 1.0), stiffness);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let block = opts.block_size.max(1);
    let mut last: Vec<DVector<f64>> = Vec::new();
    let fresh = |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
    for _ in 0..block {
        let v = fresh(&mut rng);
        if basis.push(v, stiffness) {
            last.push(basis.q.last().unwrap().clone());
        }
    }

    loop {
        let m = basis.q.len();
        if m > k || m >= n {
            if let Some(result) = rayleigh_ritz(&basis, stiffness, k, opts.tolerance, m >= n)? {
                return Ok(result);
            }
        }
        if m >= n {
            return Err(Error::Convergence(format!(
                "basis spans the whole space ({n}) but residuals exceed {:e}",
                opts.tolerance
            )));
        }
        let mut next = Vec::with_capacity(block);
        for v in &last {
            let mut w: Vec<f64> = v.iter().zip(mass).map(|(x, m)| x * m).collect();
            chol.solve_in_place(&mut w);
            if basis.push(DVector::from_vec(w), stiffness) {
                next.push(basis.q.last().unwrap().clone());
            }
            if basis.q.len() >= n {
                break;
            }
        }
        // invariant subspace found early: restart the block from random directions
        while next.len() < block.min(n - basis.q.len()) && basis.q.len() < n {
            if basis.push(fresh(&mut rng), stiffness) {
                next.push(basis.q.last().unwrap().clone());
            }
        }
        last = next;
    }
}

fn rayleigh_ritz(
    basis: &Basis,
    stiffness: &CsrMatrix,
    k: usize,
    tol: f64,
    complete: bool,
) -> Result<Option<EigenResult>> {
    let n = stiffness.dim();
    let m = basis.q.len();
    let q = DMatrix::from_columns(&basis.q);
    let kq = DMatrix::from_columns(&basis.kq);
    let h = q.transpose() * &kq;
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let wanted = &order[..k];
    let theta: Vec<f64> = wanted.iter().map(|&i| eig.eigenvalues[i]).collect();
    let y = DMatrix::from_fn(m, k, |r, c| eig.eigenvectors[(r, wanted[c])]);
    let x = &q * &y;
    let kx = &kq * &y;
    // next Ritz value keeps the scale meaningful when only the zero mode is wanted
    let next = order.get(k).map_or(0.0, |&i| eig.eigenvalues[i].abs());
    let lmax = theta[k - 1].abs().max(next).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for j in 0..k {
        let mut r2 = 0.0;
        for i in 0..n {
            let r = kx[(i, j)] - theta[j] * basis.mass[i] * x[(i, j)];
            r2 += r * r / basis.mass[i];
        }
        worst = worst.max(r2.sqrt() / lmax);
    }
    if !worst.is_finite() {
        return Err(Error::Numerical("non-finite Ritz residual".into()));
    }
    if worst > tol && !complete {
        return Ok(None);
    }
    if worst > tol {
        return Err(Error::Convergence(format!("residual {worst:e} above tolerance {tol:e}")));
    }
    Ok(Some(EigenResult { eigenvalues: theta, eigenvectors: x }))
}
