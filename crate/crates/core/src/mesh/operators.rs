use super::{cross, dot, norm, sub, TriMesh};
use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles an `n x n` matrix from triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(p) => self.values[span.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OperatorOptions {
    /// Clamp negative edge weights (from obtuse angles) to zero.
    pub clamp_negative_weights: bool,
}

/// Cotangent stiffness and lumped mass of a triangle mesh.
#[derive(Debug, Clone)]
pub struct Operators {
    pub stiffness: CsrMatrix,
    pub mass: Vec<f64>,
    pub total_area: f64,
}

pub fn build_operators(mesh: &TriMesh) -> Result<Operators> {
    build_operators_with(mesh, OperatorOptions::default())
}

/// Stiffness entry `(i, j)` is `-(cot a + cot b) / 2` over the triangles sharing edge `ij`;
/// diagonals make every row sum to zero. `mass[i]` is a third of the area around `i`.
pub fn build_operators_with(mesh: &TriMesh, options: OperatorOptions) -> Result<Operators> {
    let n = mesh.vertex_count();
    let verts = mesh.vertices();
    let mut weights: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.face_count() * 3);
    let mut mass = vec![0.0; n];
    let mut total_area = 0.0;
    for (fi, f) in mesh.faces().iter().enumerate() {
        let area = mesh.face_area(fi);
        total_area += area;
        for &v in f {
            mass[v] += area / 3.0;
        }
        for corner in 0..3 {
            let o = f[corner];
            let (a, b) = (f[(corner + 1) % 3], f[(corner + 2) % 3]);
            let (e1, e2) = (sub(verts[a], verts[o]), sub(verts[b], verts[o]));
            let cot = dot(e1, e2) / norm(cross(e1, e2));
            if !cot.is_finite() {
                return Err(Error::Numerical(format!("non-finite cotangent in face {fi}")));
            }
            weights.push((a.min(b), a.max(b), 0.5 * cot));
        }
    }
    // sum per edge first so clamping applies to the combined weight
    let summed = CsrMatrix::from_triplets(n, weights);
    let mut triplets = Vec::with_capacity(summed.nnz() * 4);
    for i in 0..n {
        for (j, mut w) in summed.row(i) {
            if options.clamp_negative_weights {
                w = w.max(0.0);
            }
            triplets.push((i, j, -w));
            triplets.push((j, i, -w));
            triplets.push((i, i, w));
            triplets.push((j, j, w));
        }
    }
    Ok(Operators { stiffness: CsrMatrix::from_triplets(n, triplets), mass, total_area })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    #[test]
    fn right_triangle_weights() {
        let m = TriMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let ops = build_operators(&m).unwrap();
        let k = &ops.stiffness;
        // legs are opposite the 45 degree corners, the hypotenuse is opposite the right angle
        assert!((k.get(0, 1) + 0.5).abs() < 1e-15);
        assert!((k.get(0, 2) + 0.5).abs() < 1e-15);
        assert!(k.get(1, 2).abs() < 1e-15);
        for i in 0..3 {
            assert!((ops.mass[i] - 1.0 / 6.0).abs() < 1e-15);
        }
        assert!((ops.total_area - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_zero_and_symmetric() {
        let m = shapes::icosphere(2).unwrap();
        let ops = build_operators(&m).unwrap();
        let k = &ops.stiffness;
        let tol = 1e-9 * k.max_abs();
        let ones = vec![1.0; m.vertex_count()];
        let mut out = vec![0.0; m.vertex_count()];
        k.mul_vec(&ones, &mut out);
        assert!(out.iter().all(|v| v.abs() < tol));
        for i in 0..k.dim() {
            for (j, v) in k.row(i) {
                assert!((v - k.get(j, i)).abs() < tol);
            }
        }
        let mass_sum: f64 = ops.mass.iter().sum();
        assert!((mass_sum - m.total_area()).abs() < 1e-9 * m.total_area());
        assert!(ops.mass.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn unit_square_area() {
        let ops = build_operators(&shapes::grid(1, 1, 1.0, 1.0).unwrap()).unwrap();
        assert!((ops.total_area - 1.0).abs() < 1e-15);
    }

    #[test]
    fn obtuse_weights_kept_unless_clamped() {
        // flat obtuse triangle: the long edge sees a 150 degree angle
        let a = 150f64.to_radians();
        let m = TriMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [a.cos(), a.sin(), 0.0]], vec![[0, 1, 2]]).unwrap();
        let raw = build_operators(&m).unwrap();
        assert!(raw.stiffness.get(1, 2) > 0.0);
        let clamped = build_operators_with(&m, OperatorOptions { clamp_negative_weights: true }).unwrap();
        assert_eq!(clamped.stiffness.get(1, 2), 0.0);
        let ones = [1.0; 3];
        let mut out = [0.0; 3];
        clamped.stiffness.mul_vec(&ones, &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-14));
    }
}
