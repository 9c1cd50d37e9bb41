//! Triangle meshes, their discrete operators and graph geodesics.

mod geodesic;
mod io;
mod operators;
pub mod shapes;

pub use geodesic::{geodesic_from, geodesic_matrix};
pub use io::{load_mesh, read_mesh, write_off, MeshFormat};
pub use operators::{build_operators, build_operators_with, CsrMatrix, OperatorOptions, Operators};

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Relative area threshold (times squared bounding-box diagonal) below which a face is degenerate.
pub const DEGENERATE_AREA_TOL: f64 = 1e-12;

/// A validated, edge-manifold triangle mesh. Vertex order is significant: correspondences
/// are expressed as indices into it.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!("face {fi} references vertex {bad} but mesh has {n} vertices")));
            }
        }
        let mesh = TriMesh { vertices, faces };
        mesh.check_faces()?;
        mesh.check_manifold()?;
        Ok(mesh)
    }

    fn check_faces(&self) -> Result<()> {
        let diag = self.bbox_diagonal();
        let tol = DEGENERATE_AREA_TOL * diag * diag;
        for (fi, f) in self.faces.iter().enumerate() {
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] || self.face_area(fi) <= tol {
                return Err(Error::DegenerateFace(fi));
            }
        }
        Ok(())
    }

    fn check_manifold(&self) -> Result<()> {
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for e in 0..3 {
                *counts.entry(edge_key(f[e], f[(e + 1) % 3])).or_default() += 1;
            }
        }
        // report the smallest offending edge so the error is stable
        if let Some((&(a, b), &count)) = counts.iter().filter(|(_, &c)| c > 2).min_by_key(|(k, _)| **k) {
            return Err(Error::NonManifold { a, b, count });
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * norm(cross(sub(q, p), sub(r, p)))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bbox_diagonal(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for d in 0..3 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        norm(sub(hi, lo))
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<_> =
            self.faces.iter().flat_map(|f| (0..3).map(move |e| edge_key(f[e], f[(e + 1) % 3]))).collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Vertex adjacency lists with Euclidean edge lengths.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            let len = norm(sub(self.vertices[a], self.vertices[b]));
            adj[a].push((b, len));
            adj[b].push((a, len));
        }
        adj
    }

    /// Number of connected components of the vertex graph. Isolated vertices count.
    pub fn connected_components(&self) -> usize {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (a, b) in self.edges() {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        (0..n).filter(|&v| find(&mut parent, v) == v).count()
    }

    /// Uniformly rescales about the origin so the total surface area is one.
    pub fn normalized(&self) -> TriMesh {
        let scale = 1.0 / self.total_area().sqrt();
        self.scaled(scale)
    }

    pub fn scaled(&self, scale: f64) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| [v[0] * scale, v[1] * scale, v[2] * scale]).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Same connectivity with new positions; re-validated.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<TriMesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        TriMesh::new(vertices, self.faces.clone())
    }

    /// SHA-256 over vertex coordinates and face indices, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.vertices.len() as u64).to_le_bytes());
        hasher.update((self.faces.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in v {
                hasher.update(c.to_le_bytes());
            }
        }
        for f in &self.faces {
            for &i in f {
                hasher.update((i as u64).to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> TriMesh {
        TriMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn minimal_mesh() {
        let m = tri();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.face_count(), 1);
        assert!((m.total_area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_index() {
        let err = TriMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 9]]);
        assert!(matches!(err, Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn degenerate_faces() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(matches!(TriMesh::new(v.clone(), vec![[0, 1, 2]]), Err(Error::DegenerateFace(0))));
        assert!(matches!(TriMesh::new(v, vec![[0, 1, 3], [0, 0, 3]]), Err(Error::DegenerateFace(1))));
    }

    #[test]
    fn three_faces_on_an_edge() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        let err = TriMesh::new(v, vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]]);
        assert!(matches!(err, Err(Error::NonManifold { a: 0, b: 1, count: 3 })));
    }

    #[test]
    fn normalization_gives_unit_area() {
        let m = shapes::icosphere(1).unwrap().scaled(3.7).normalized();
        assert!((m.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn components() {
        assert_eq!(tri().connected_components(), 1);
        let v =
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 0.0, 0.0], [6.0, 0.0, 0.0], [5.0, 1.0, 0.0]];
        let m = TriMesh::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        assert_eq!(m.connected_components(), 2);
    }

    #[test]
    fn hash_depends_on_geometry() {
        let a = tri();
        let b = a.scaled(2.0);
        assert_eq!(a.content_hash(), tri().content_hash());
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
