//! Agent communication graphs.
//!
//! Graphs are simple, undirected and connected. Agents are indexed from zero
//! internally; config files and [`Graph::from_one_based`] use the 1-based
//! convention.
//!
//! [`spectral_decomposition`] produces the orthonormal basis `Q = [r, R]` of
//! the Laplacian with `r = 1/sqrt(n) * 1` pinned as the first column, and the
//! Laplacian square root `S = Q diag(sqrt(lambda)) Q^T`.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Relative threshold below which a Laplacian eigenvalue counts as zero.
pub const NULL_EIGENVALUE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    label: String,
}

impl Graph {
    /// Builds a graph from zero-based edges and validates it.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::with_label(n, edges, format!("edges(n={n}, m={})", edges.len()))
    }

    /// Builds a graph from 1-based edges, the convention used in config files.
    pub fn from_one_based(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut zero_based = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            for index in [i, j] {
                if index == 0 || index > n {
                    return Err(Error::IndexOutOfRange { index, n });
                }
            }
            zero_based.push((i - 1, j - 1));
        }
        Self::new(n, &zero_based)
    }

    fn with_label(n: usize, edges: &[(usize, usize)], label: String) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("graph needs at least one agent".into()));
        }
        let mut seen = BTreeSet::new();
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            for index in [i, j] {
                if index >= n {
                    return Err(Error::IndexOutOfRange { index, n });
                }
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            let key = (i.min(j), i.max(j));
            if !seen.insert(key) {
                return Err(Error::DuplicateEdge(key.0, key.1));
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let graph = Graph {
            n,
            edges: seen.into_iter().collect(),
            neighbors,
            label,
        };
        let components = graph.component_count();
        if components != 1 {
            return Err(Error::DisconnectedGraph { components });
        }
        Ok(graph)
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    /// Edges as zero-based `(i, j)` pairs with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.neighbors[agent]
    }

    pub fn degree(&self, agent: usize) -> usize {
        self.neighbors[agent].len()
    }

    /// Short human-readable descriptor recorded in run metadata.
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency();
        for i in 0..self.n {
            l[(i, i)] = self.degree(i) as f64;
        }
        l
    }

    /// Writes `(L ⊗ I_d) x` into `out` for a stacked vector `x` of `n` blocks of size `d`.
    pub fn apply_laplacian(&self, x: &[f64], d: usize, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n * d);
        debug_assert_eq!(out.len(), self.n * d);
        for i in 0..self.n {
            let xi = &x[i * d..(i + 1) * d];
            let oi = &mut out[i * d..(i + 1) * d];
            oi.fill(0.0);
            for &j in &self.neighbors[i] {
                let xj = &x[j * d..(j + 1) * d];
                for k in 0..d {
                    oi[k] += xi[k] - xj[k];
                }
            }
        }
    }

    pub fn component_count(&self) -> usize {
        let mut visited = vec![false; self.n];
        let mut components = 0;
        for start in 0..self.n {
            if visited[start] {
                continue;
            }
            components += 1;
            visited[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in &self.neighbors[v] {
                    if !visited[w] {
                        visited[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        components
    }
}

/// Ring where agent `i` talks to `i - 1` and `i + 1` (mod `n`).
pub fn cycle_graph(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("cycle needs n >= 2, got {n}")));
    }
    let edges: Vec<_> = if n == 2 {
        vec![(0, 1)]
    } else {
        (0..n).map(|i| (i, (i + 1) % n)).collect()
    };
    Graph::with_label(n, &edges, format!("cycle({n})"))
}

pub fn complete_graph(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("complete graph needs n >= 2, got {n}")));
    }
    let edges: Vec<_> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    Graph::with_label(n, &edges, format!("complete({n})"))
}

/// Uniform random spanning tree (Aldous-Broder walk on `K_n`) plus every other
/// pair independently with probability `edge_probability`.
pub fn random_connected_graph(n: usize, edge_probability: f64, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("random graph needs n >= 2, got {n}")));
    }
    if !(edge_probability > 0.0 && edge_probability <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "edge probability must lie in (0, 1], got {edge_probability}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = BTreeSet::new();
    let mut visited = vec![false; n];
    let mut current = rng.random_range(0..n);
    visited[current] = true;
    let mut remaining = n - 1;
    while remaining > 0 {
        let mut next = rng.random_range(0..n - 1);
        if next >= current {
            next += 1;
        }
        if !visited[next] {
            visited[next] = true;
            remaining -= 1;
            edges.insert((current.min(next), current.max(next)));
        }
        current = next;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < edge_probability {
                edges.insert((i, j));
            }
        }
    }
    let edges: Vec<_> = edges.into_iter().collect();
    Graph::with_label(n, &edges, format!("random(n={n}, p={edge_probability}, seed={seed})"))
}

/// Standard Kronecker product `a ⊗ I_d`.
pub fn kron_identity(a: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    let mut out = DMatrix::zeros(rows * d, cols * d);
    for i in 0..rows {
        for j in 0..cols {
            let v = a[(i, j)];
            if v != 0.0 {
                for k in 0..d {
                    out[(i * d + k, j * d + k)] = v;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    pub laplacian: DMatrix<f64>,
    /// Ascending; `eigenvalues[0] == 0`.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal, first column exactly `1/sqrt(n) * 1`.
    pub q: DMatrix<f64>,
    pub sqrt_laplacian: DMatrix<f64>,
}

impl SpectralData {
    pub fn agent_count(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The consensus direction `r = 1/sqrt(n) * 1`.
    pub fn consensus_direction(&self) -> DVector<f64> {
        self.q.column(0).into_owned()
    }

    /// `R`: columns `2..n` of `Q`, an `n x (n-1)` basis of the disagreement subspace.
    pub fn disagreement_basis(&self) -> DMatrix<f64> {
        let n = self.agent_count();
        self.q.columns(1, n - 1).into_owned()
    }

    /// Algebraic connectivity (second-smallest eigenvalue), `None` for a single agent.
    pub fn algebraic_connectivity(&self) -> Option<f64> {
        self.eigenvalues.get(1).copied()
    }
}

pub fn spectral_decomposition(graph: &Graph) -> Result<SpectralData> {
    let n = graph.agent_count();
    let laplacian = graph.laplacian();
    let eigen = SymmetricEigen::try_new(laplacian.clone(), f64::EPSILON, 1000 * n.max(1))
        .ok_or_else(|| Error::EigensolverFailure("symmetric Laplacian eigensolve".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));
    let mut eigenvalues: Vec<f64> = order.iter().map(|&k| eigen.eigenvalues[k]).collect();

    let scale = eigenvalues.last().copied().unwrap_or(0.0).abs().max(1.0);
    let nulls = eigenvalues
        .iter()
        .filter(|v| v.abs() < NULL_EIGENVALUE_TOLERANCE * scale)
        .count();
    if nulls > 1 {
        return Err(Error::DisconnectedGraph { components: nulls });
    }
    eigenvalues[0] = 0.0;

    let mut q = DMatrix::zeros(n, n);
    q.column_mut(0).fill(1.0 / (n as f64).sqrt());
    for (slot, &k) in order.iter().enumerate().skip(1) {
        let mut v = eigen.eigenvectors.column(k).into_owned();
        // Two passes of modified Gram-Schmidt against the accepted columns.
        for _ in 0..2 {
            for prev in 0..slot {
                let basis = q.column(prev);
                let proj = basis.dot(&v);
                v.axpy(-proj, &basis, 1.0);
            }
        }
        let norm = v.norm();
        if norm < 1e-8 {
            return Err(Error::EigensolverFailure(
                "eigenvector collapsed during orthonormalization".into(),
            ));
        }
        v /= norm;
        canonicalize_sign(&mut v);
        q.set_column(slot, &v);
    }

    let roots = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        eigenvalues.iter().map(|v| v.max(0.0).sqrt()),
    ));
    let mut sqrt_laplacian = &q * roots * q.transpose();
    // Symmetrize away rounding.
    sqrt_laplacian = (&sqrt_laplacian + sqrt_laplacian.transpose()) * 0.5;

    Ok(SpectralData {
        laplacian,
        eigenvalues,
        q,
        sqrt_laplacian,
    })
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn canonicalize_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}
