//! Exact symmetric kNN graph and its uniform binary affinities.

use std::io::Write;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{invalid, Result};

/// Default neighbor count.
pub const DEFAULT_K: usize = 15;

/// Undirected kNN graph: `{i, j}` is an edge when either endpoint is among
/// the other's `k` nearest neighbors. Every edge carries affinity `1/|edges|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    /// Sorted, deduplicated `(i, j)` with `i < j`.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbor lists per node.
    adjacency: Vec<Vec<usize>>,
    k: usize,
}

impl NeighborGraph {
    /// Builds a graph from arbitrary undirected pairs (self-pairs rejected).
    pub fn from_edges(n: usize, k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges = Vec::new();
        for (a, b) in pairs {
            if a == b {
                return Err(invalid(format!("self-edge on node {a}")));
            }
            if a >= n || b >= n {
                return Err(invalid(format!("edge ({a}, {b}) out of range for {n} nodes")));
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in adjacency.iter_mut() {
            adj.sort_unstable();
        }
        Ok(Self { edges, adjacency, k })
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.n() && self.adjacency[i].binary_search(&j).is_ok()
    }

    /// Binary affinity `p_ij = 1{ij ∈ P} / |P|`.
    pub fn affinity(&self, i: usize, j: usize) -> Result<f64> {
        if i == j {
            return Err(invalid("affinity is undefined for i == j"));
        }
        if i >= self.n() || j >= self.n() {
            return Err(invalid(format!("index out of range for {} nodes", self.n())));
        }
        Ok(if self.contains(i, j) {
            1.0 / self.edges.len() as f64
        } else {
            0.0
        })
    }

    /// One `i,j` line per edge, `i < j`, ascending lexicographic order.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, j) in &self.edges {
            writeln!(w, "{i},{j}")?;
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest other samples of `i`, by distance then ascending index.
pub fn nearest_neighbors(data: &Dataset, i: usize, k: usize) -> Vec<usize> {
    let xi = data.point(i);
    let mut cand: Vec<(f64, usize)> = (0..data.len())
        .filter(|&j| j != i)
        .map(|j| (sq_dist(xi, data.point(j)), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Exact brute-force kNN graph with union symmetrization.
pub fn knn_graph(data: &Dataset, k: usize) -> Result<NeighborGraph> {
    let n = data.len();
    if k < 1 || k + 1 > n {
        return Err(invalid(format!("k = {k} out of range 1..={}", n.saturating_sub(1))));
    }
    let lists: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| nearest_neighbors(data, i, k))
        .collect();
    let pairs = lists
        .iter()
        .enumerate()
        .flat_map(|(i, nn)| nn.iter().map(move |&j| (i, j)));
    NeighborGraph::from_edges(n, k, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;

    fn line(xs: &[f64]) -> Dataset {
        Dataset::new(xs.to_vec(), 1, None, None).unwrap()
    }

    #[test]
    fn collinear_example() {
        let g = knn_graph(&line(&[0.0, 1.0, 10.0]), 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.n_edges(), 2);
    }

    #[test]
    fn full_k_gives_complete_graph() {
        let ds = make_blobs(4, 2, 3, 2.0, 1).unwrap();
        let g = knn_graph(&ds, ds.len() - 1).unwrap();
        assert_eq!(g.n_edges(), 8 * 7 / 2);
    }

    #[test]
    fn duplicates_pair_up() {
        let g = knn_graph(&line(&[5.0, 0.0, 5.0, 0.0]), 1).unwrap();
        assert!(g.contains(0, 2));
        assert!(g.contains(1, 3));
        assert_eq!(g.n_edges(), 2);
    }

    #[test]
    fn ties_break_by_smaller_index() {
        // sample 1 is equidistant from 0 and 2
        let nn = nearest_neighbors(&line(&[0.0, 1.0, 2.0]), 1, 1);
        assert_eq!(nn, vec![0]);
    }

    #[test]
    fn k_out_of_range() {
        let ds = line(&[0.0, 1.0, 2.0]);
        assert!(knn_graph(&ds, 0).is_err());
        assert!(knn_graph(&ds, 3).is_err());
    }

    #[test]
    fn affinity_values() {
        let g = NeighborGraph::from_edges(5, 1, [(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        assert_eq!(g.affinity(1, 0).unwrap(), 0.25);
        assert_eq!(g.affinity(0, 4).unwrap(), 0.0);
        assert!(g.affinity(2, 2).is_err());
        let total: f64 = (0..5)
            .flat_map(|i| (0..5).map(move |j| (i, j)))
            .filter(|(i, j)| i < j)
            .map(|(i, j)| g.affinity(i, j).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degree_at_least_k() {
        let ds = make_blobs(30, 3, 5, 3.0, 2).unwrap();
        let g = knn_graph(&ds, 7).unwrap();
        assert!((0..g.n()).all(|i| g.degree(i) >= 7));
    }

    #[test]
    fn edge_list_format() {
        let g = knn_graph(&line(&[0.0, 1.0, 10.0]), 1).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0,1\n1,2\n");
    }

    #[test]
    fn permutation_equivariance() {
        let ds = make_blobs(15, 2, 4, 3.0, 5).unwrap();
        let n = ds.len();
        // continuous data: no distance ties, so tie-breaking cannot interfere
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let mut pts = vec![0.0; ds.points().len()];
        for (old, &new) in perm.iter().enumerate() {
            pts[new * ds.dim()..(new + 1) * ds.dim()].copy_from_slice(ds.point(old));
        }
        let permuted = Dataset::new(pts, ds.dim(), None, None).unwrap();
        let g = knn_graph(&ds, 4).unwrap();
        let gp = knn_graph(&permuted, 4).unwrap();
        let mapped = NeighborGraph::from_edges(n, 4, g.edges().iter().map(|&(a, b)| (perm[a], perm[b]))).unwrap();
        assert_eq!(mapped.edges(), gp.edges());
    }
}
