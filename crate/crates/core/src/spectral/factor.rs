//! Envelope (skyline) Cholesky factorization with reverse Cuthill-McKee ordering.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::mesh::CsrMatrix;

/// Cholesky factor `P A P^T = L L^T` of a sparse symmetric positive definite matrix,
/// stored row-wise over each row's envelope.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    /// `perm[new] = old`
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    /// Factors `a + diag(shift)`.
    pub fn factor(a: &CsrMatrix, shift: &[f64]) -> Result<Self> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first = vec![0; n];
        for (i, &old) in perm.iter().enumerate() {
            first[i] = a.row(old).map(|(j, _)| iperm[j]).filter(|&j| j <= i).min().unwrap_or(i).min(i);
        }
        let mut offset = vec![0; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; offset[n]];
        for (i, &old) in perm.iter().enumerate() {
            for (j_old, v) in a.row(old) {
                let j = iperm[j_old];
                if j <= i {
                    data[offset[i] + j - first[i]] += v;
                }
            }
            data[offset[i] + i - first[i]] += shift[old];
        }

        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let row_i = &data[offset[i] + lo - fi..offset[i] + j - fi];
                let row_j = &data[offset[j] + lo - fj..offset[j] + j - fj];
                let s: f64 = row_i.iter().zip(row_j).map(|(x, y)| x * y).sum();
                let ljj = data[offset[j] + j - fj];
                let idx = offset[i] + j - fi;
                data[idx] = (data[idx] - s) / ljj;
            }
            let row = &data[offset[i]..offset[i] + i - fi];
            let d = data[offset[i] + i - fi] - row.iter().map(|x| x * x).sum::<f64>();
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Numerical(format!("matrix is not positive definite at pivot {i}")));
            }
            data[offset[i] + i - fi] = d.sqrt();
        }
        Ok(SkylineCholesky { perm, first, offset, data })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i] + i - fi];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / self.data[self.offset[i] + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let xi = y[i] / self.data[self.offset[i] + i - fi];
            y[i] = xi;
            let row = &self.data[self.offset[i]..self.offset[i] + i - fi];
            for (yp, l) in y[fi..i].iter_mut().zip(row) {
                *yp -= l * xi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }
}

/// Bandwidth-reducing ordering; returns `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j != i).collect()).collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| (degree[v], v)).unwrap();
        let start = pseudo_peripheral(&adj, &degree, seed);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            next.sort_by_key(|&v| (degree[v], v));
            for v in next {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adj: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut level = vec![usize::MAX; adj.len()];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    level
}

fn pseudo_peripheral(adj: &[Vec<usize>], degree: &[usize], seed: usize) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let level = bfs_levels(adj, node);
        let far = level.iter().copied().filter(|&l| l != usize::MAX).max().unwrap_or(0);
        if far <= ecc && node != seed {
            break;
        }
        ecc = far;
        node = (0..adj.len()).filter(|&v| level[v] == far).min_by_key(|&v| (degree[v], v)).unwrap();
    }
    node
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_operators, shapes};
    use nalgebra::DVector;

    #[test]
    fn solves_shifted_laplacian() {
        let mesh = shapes::icosphere(2).unwrap();
        let ops = build_operators(&mesh).unwrap();
        let shift: Vec<f64> = ops.mass.iter().map(|m| 0.3 * m).collect();
        let chol = SkylineCholesky::factor(&ops.stiffness, &shift).unwrap();
        let n = mesh.vertex_count();
        let b: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let mut x = b.clone();
        chol.solve_in_place(&mut x);
        let mut dense = ops.stiffness.to_dense();
        for i in 0..n {
            dense[(i, i)] += shift[i];
        }
        let r = &dense * DVector::from_vec(x) - DVector::from_vec(b);
        assert!(r.amax() < 1e-10);
    }

    #[test]
    fn rcm_is_a_permutation_and_shrinks_envelope() {
        let mesh = shapes::grid(12, 12, 1.0, 1.0).unwrap();
        let ops = build_operators(&mesh).unwrap();
        let mut p = reverse_cuthill_mckee(&ops.stiffness);
        let chol = SkylineCholesky::factor(&ops.stiffness, &ops.mass).unwrap();
        p.sort_unstable();
        assert_eq!(p, (0..mesh.vertex_count()).collect::<Vec<_>>());
        // a dense lower triangle would be n(n+1)/2
        let n = mesh.vertex_count();
        assert!(chol.envelope_size() < n * (n + 1) / 8);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mesh = shapes::icosphere(1).unwrap();
        let ops = build_operators(&mesh).unwrap();
        let shift: Vec<f64> = ops.mass.iter().map(|m| -m).collect();
        assert!(matches!(SkylineCholesky::factor(&ops.stiffness, &shift), Err(Error::Numerical(_))));
    }
}
