//! Undirected communication graph, formation specification and rigidity checks.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::potentials::PotentialParams;

/// Singular values below this fraction of the largest count as zero in the rigidity rank test.
pub const RIGIDITY_RANK_TOL: f64 = 1e-9;

/// Connected undirected graph on `n` nodes, 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    // (neighbor, edge index) pairs, sorted by neighbor
    incident: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    /// Builds a graph from unordered pairs. Pairs are normalized to `i < j` and sorted.
    pub fn new(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!(
                "need at least 2 agents, got {n}"
            )));
        }
        let mut edges = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) out of range for {n} agents"
                )));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at agent {a}")));
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidGraph(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }

        let mut incident = vec![Vec::new(); n];
        for (k, &(i, j)) in edges.iter().enumerate() {
            incident[i].push((j, k));
            incident[j].push((i, k));
        }
        for list in &mut incident {
            list.sort_unstable();
        }
        let neighbors: Vec<Vec<usize>> = incident
            .iter()
            .map(|l| l.iter().map(|&(j, _)| j).collect())
            .collect();

        let g = Graph {
            n,
            edges,
            neighbors,
            incident,
        };
        if !g.is_connected() {
            return Err(Error::InvalidGraph("graph is not connected".into()));
        }
        Ok(g)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let pairs: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Graph::new(n, &pairs)
    }

    pub fn path(n: usize) -> Result<Self> {
        let pairs: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(n, &pairs)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edges as sorted `(i, j)` pairs with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Neighbors of `i` together with the index of the connecting edge.
    pub fn incident(&self, i: usize) -> &[(usize, usize)] {
        &self.incident[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn are_adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Whether `j` is `i` itself or one of its neighbors.
    pub fn in_closed_neighborhood(&self, i: usize, j: usize) -> bool {
        i == j || self.are_adjacent(i, j)
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).ok()
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

    /// The matrix `(L kron I_N) + blockdiag(N_i)` driving the centroid estimator error,
    /// where `N = n * dim` and `N_i` selects the `dim`-block of agent `i`.
    pub fn estimator_matrix(&self, dim: usize) -> DMatrix<f64> {
        let big = self.n * dim;
        let size = self.n * big;
        let lap = self.laplacian();
        let mut m = DMatrix::zeros(size, size);
        for a in 0..self.n {
            for b in 0..self.n {
                let w = lap[(a, b)];
                if w != 0.0 {
                    for k in 0..big {
                        m[(a * big + k, b * big + k)] = w;
                    }
                }
            }
            for c in 0..dim {
                let k = a * big + a * dim + c;
                m[(k, k)] += 1.0;
            }
        }
        m
    }

    /// Spectral radius of the inverse of [`Graph::estimator_matrix`].
    ///
    /// The matrix is symmetric positive definite, so this is one over its smallest eigenvalue.
    pub fn topological_constant(&self, dim: usize) -> f64 {
        let m = self.estimator_matrix(dim);
        let eig = m.symmetric_eigen();
        1.0 / eig.eigenvalues.min()
    }
}

/// Graph plus per-edge desired distance and potential parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationSpec {
    graph: Graph,
    dim: usize,
    // aligned with graph.edges(); desired distance lives in PotentialParams::d
    params: Vec<PotentialParams>,
}

impl FormationSpec {
    pub fn new(graph: Graph, dim: usize, params: Vec<PotentialParams>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if params.len() != graph.num_edges() {
            return Err(Error::InvalidGraph(format!(
                "{} edges but {} potential parameter sets",
                graph.num_edges(),
                params.len()
            )));
        }
        for p in &params {
            p.validate()?;
        }
        Ok(FormationSpec { graph, dim, params })
    }

    /// Same parameters on every edge except the desired distance.
    pub fn uniform(
        graph: Graph,
        dim: usize,
        distances: &[f64],
        template: PotentialParams,
    ) -> Result<Self> {
        let params = distances
            .iter()
            .map(|&d| PotentialParams { d, ..template })
            .collect();
        FormationSpec::new(graph, dim, params)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Size of the stacked position vector.
    pub fn big_n(&self) -> usize {
        self.graph.n() * self.dim
    }

    pub fn params(&self) -> &[PotentialParams] {
        &self.params
    }

    pub fn edge_params(&self, edge: usize) -> &PotentialParams {
        &self.params[edge]
    }

    pub fn desired_distance(&self, edge: usize) -> f64 {
        self.params[edge].d
    }

    pub fn rigidity_matrix(&self, positions: &DVector<f64>) -> DMatrix<f64> {
        let m = self.dim;
        let mut r = DMatrix::zeros(self.graph.num_edges(), self.big_n());
        for (k, &(i, j)) in self.graph.edges().iter().enumerate() {
            for c in 0..m {
                let diff = positions[i * m + c] - positions[j * m + c];
                r[(k, i * m + c)] = diff;
                r[(k, j * m + c)] = -diff;
            }
        }
        r
    }

    pub fn rigidity_rank(&self, positions: &DVector<f64>) -> usize {
        let r = self.rigidity_matrix(positions);
        let sv = r.singular_values();
        let max = sv.max();
        if max == 0.0 {
            return 0;
        }
        sv.iter().filter(|&&s| s > RIGIDITY_RANK_TOL * max).count()
    }

    /// Rank test against `nM - M(M+1)/2`. For `n <= M` the target is `n(n-1)/2`.
    pub fn is_infinitesimally_rigid(&self, positions: &DVector<f64>) -> Result<bool> {
        let m = self.dim;
        if m < 2 {
            return Err(Error::UnsupportedDimension(m));
        }
        let n = self.n();
        let target = if n > m {
            n * m - m * (m + 1) / 2
        } else {
            n * (n - 1) / 2
        };
        Ok(self.rigidity_rank(positions) == target)
    }
}
