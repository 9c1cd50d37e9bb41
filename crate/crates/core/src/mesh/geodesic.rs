use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::TriMesh;
use crate::error::{Error, Result};

#[derive(PartialEq)]
struct Node {
    dist: f64,
    vertex: usize,
}

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties by vertex index
        other.dist.total_cmp(&self.dist).then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Node { dist: 0.0, vertex: source });
    while let Some(Node { dist: d, vertex: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Node { dist: nd, vertex: v });
            }
        }
    }
    dist
}

/// Edge-graph geodesic distances from one vertex.
pub fn geodesic_from(mesh: &TriMesh, source: usize) -> Result<Vec<f64>> {
    let m = geodesic_matrix(mesh, &[source])?;
    Ok(m.row(0).iter().copied().collect())
}

/// Row `s` holds Dijkstra distances over the edge graph (Euclidean edge lengths)
/// from `sources[s]` to every vertex.
pub fn geodesic_matrix(mesh: &TriMesh, sources: &[usize]) -> Result<DMatrix<f64>> {
    let n = mesh.vertex_count();
    if sources.is_empty() {
        return Err(Error::InvalidArgument("no geodesic sources".into()));
    }
    if let Some(&bad) = sources.iter().find(|&&s| s >= n) {
        return Err(Error::InvalidArgument(format!("source {bad} out of range for {n} vertices")));
    }
    let adj = mesh.adjacency();
    let rows: Vec<Vec<f64>> = sources.par_iter().map(|&s| dijkstra(&adj, s)).collect();
    let mut out = DMatrix::zeros(sources.len(), n);
    for (r, row) in rows.iter().enumerate() {
        if let Some(v) = row.iter().position(|d| !d.is_finite()) {
            return Err(Error::DisconnectedMesh(v));
        }
        for (c, &d) in row.iter().enumerate() {
            out[(r, c)] = d;
        }
    }
    Ok(out)
}
