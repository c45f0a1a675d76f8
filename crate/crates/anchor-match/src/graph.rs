//! Weighted undirected graphs, their Laplacians, and heat kernels.
//!
//! A [`WeightedGraph`] stores a simple graph with strictly positive edge
//! weights. Its Laplacian L = D - A is symmetric positive semidefinite, so it
//! admits an orthonormal eigendecomposition, wrapped by
//! [`SpectralDecomposition`]. The heat kernel at diffusion time t is
//! K_t = sum_k exp(-t lambda_k) phi_k phi_k^T; it is the basic similarity
//! object everything downstream consumes.

use nalgebra::DMatrix;
use thiserror::Error;

/// Relative tolerance for eigendecomposition residuals and orthonormality.
pub const SPECTRAL_TOL: f64 = 1e-9;

/// Relative gap below which two adjacent eigenvalues are treated as one
/// degenerate cluster (eigenvectors within a cluster are basis-dependent).
pub const DEGENERACY_GAP_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({i}, {j}) out of range for a graph on {n} nodes")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },
    #[error("edge ({i}, {j}) has non-positive weight {weight}")]
    NonPositiveWeight { i: usize, j: usize, weight: f64 },
    #[error("self-loop at node {i}")]
    SelfLoop { i: usize },
    #[error("eigensolver did not reach residual tolerance {tol:e}")]
    ConvergenceFailure { tol: f64 },
    #[error("negative diffusion time {t}")]
    NegativeTime { t: f64 },
    #[error("spectrum has no nonzero eigenvalue")]
    AllZeroSpectrum,
    #[error("permutation is not a bijection on {n} nodes")]
    InvalidPermutation { n: usize },
}

/// Undirected edge with canonical orientation `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Simple undirected graph with strictly positive edge weights.
///
/// Edges are stored sorted by (i, j) with i < j, so two graphs built from the
/// same edge set compare equal regardless of input order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<Edge>,
}

impl WeightedGraph {
    /// Validates and builds a graph on `n` nodes.
    ///
    /// Rejects out-of-range endpoints, self-loops, non-positive weights, and
    /// duplicate unordered pairs.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, GraphError> {
        let mut canonical: Vec<Edge> = Vec::new();
        for (i, j, weight) in edges {
            if i >= n || j >= n {
                return Err(GraphError::IndexOutOfRange { i, j, n });
            }
            if i == j {
                return Err(GraphError::SelfLoop { i });
            }
            if !(weight > 0.0) {
                return Err(GraphError::NonPositiveWeight { i, j, weight });
            }
            let (i, j) = (i.min(j), i.max(j));
            canonical.push(Edge { i, j, weight });
        }
        canonical.sort_by_key(|e| (e.i, e.j));
        for pair in canonical.windows(2) {
            if pair[0].i == pair[1].i && pair[0].j == pair[1].j {
                return Err(GraphError::DuplicateEdge {
                    i: pair[0].i,
                    j: pair[0].j,
                });
            }
        }
        Ok(Self { n, edges: canonical })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Weight of edge (i, j), or 0 when the pair is not adjacent.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let (i, j) = (i.min(j), i.max(j));
        match self.edges.binary_search_by_key(&(i, j), |e| (e.i, e.j)) {
            Ok(pos) => self.edges[pos].weight,
            Err(_) => 0.0,
        }
    }

    /// Dense symmetric adjacency matrix with zero diagonal.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            a[(e.i, e.j)] = e.weight;
            a[(e.j, e.i)] = e.weight;
        }
        a
    }

    /// Graph Laplacian L = D - A where D is the diagonal of weighted degrees.
    ///
    /// Every row sums to zero and x^T L x = sum_{(i,j)} w_ij (x_i - x_j)^2,
    /// so L is positive semidefinite.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            l[(e.i, e.j)] = -e.weight;
            l[(e.j, e.i)] = -e.weight;
            l[(e.i, e.i)] += e.weight;
            l[(e.j, e.j)] += e.weight;
        }
        l
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// Relabels node u as perm[u]; perm must be a bijection on 0..n.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GraphError> {
        if perm.len() != self.n {
            return Err(GraphError::InvalidPermutation { n: self.n });
        }
        let mut seen = vec![false; self.n];
        for &p in perm {
            if p >= self.n || seen[p] {
                return Err(GraphError::InvalidPermutation { n: self.n });
            }
            seen[p] = true;
        }
        let edges = self
            .edges
            .iter()
            .map(|e| (perm[e.i], perm[e.j], e.weight))
            .collect::<Vec<_>>();
        Self::new(self.n, edges)
    }
}

/// Orthonormal eigendecomposition of a symmetric matrix, eigenvalues
/// ascending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    /// Column k is the eigenvector for eigenvalues[k]. Signs are fixed so the
    /// entry of largest magnitude is positive.
    eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    /// Decomposes a symmetric matrix and verifies the result: each residual
    /// ||M phi - lambda phi|| must stay below `tol * max(1, |lambda_max|)`,
    /// and the eigenvector matrix must be orthonormal to the same tolerance.
    pub fn compute(matrix: &DMatrix<f64>, tol: f64) -> Result<Self, GraphError> {
        assert_eq!(matrix.nrows(), matrix.ncols(), "matrix must be square");
        let n = matrix.nrows();
        if n == 0 {
            return Ok(Self {
                eigenvalues: Vec::new(),
                eigenvectors: DMatrix::zeros(0, 0),
            });
        }
        let sym = (matrix + matrix.transpose()) * 0.5;
        let eig = sym
            .clone()
            .try_symmetric_eigen(f64::EPSILON, 10_000)
            .ok_or(GraphError::ConvergenceFailure { tol })?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());

        let mut eigenvalues = Vec::with_capacity(n);
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            eigenvalues.push(eig.eigenvalues[src]);
            let mut col = eig.eigenvectors.column(src).clone_owned();
            let mut lead = 0;
            for r in 1..n {
                if col[r].abs() > col[lead].abs() {
                    lead = r;
                }
            }
            if col[lead] < 0.0 {
                col.neg_mut();
            }
            eigenvectors.set_column(dst, &col);
        }

        let scale = eigenvalues
            .iter()
            .fold(1.0_f64, |acc, &v| acc.max(v.abs()));
        for k in 0..n {
            let phi = eigenvectors.column(k);
            let residual = (&sym * phi - phi * eigenvalues[k]).norm();
            if residual > tol * scale {
                return Err(GraphError::ConvergenceFailure { tol });
            }
        }
        let gram = eigenvectors.transpose() * &eigenvectors;
        let identity = DMatrix::<f64>::identity(n, n);
        if (gram - identity).amax() > tol * scale {
            return Err(GraphError::ConvergenceFailure { tol });
        }

        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    /// Convenience wrapper: decomposition of the graph Laplacian at the
    /// default tolerance.
    pub fn of_graph(graph: &WeightedGraph) -> Result<Self, GraphError> {
        Self::compute(&graph.laplacian(), SPECTRAL_TOL)
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Maximal runs of adjacent eigenvalues whose gaps fall below
    /// `rel_tol * max(1, lambda_max)`. Single eigenvalues form their own runs.
    pub fn degenerate_clusters(&self, rel_tol: f64) -> Vec<std::ops::Range<usize>> {
        let n = self.eigenvalues.len();
        let scale = self
            .eigenvalues
            .iter()
            .fold(1.0_f64, |acc, &v| acc.max(v.abs()));
        let mut clusters = Vec::new();
        let mut start = 0;
        for k in 1..n {
            if self.eigenvalues[k] - self.eigenvalues[k - 1] >= rel_tol * scale {
                clusters.push(start..k);
                start = k;
            }
        }
        if n > 0 {
            clusters.push(start..n);
        }
        clusters
    }

    /// True when any adjacent pair of eigenvalues is closer than
    /// `DEGENERACY_GAP_TOL` relative to the spectral radius.
    pub fn has_near_degenerate_pair(&self) -> bool {
        self.degenerate_clusters(DEGENERACY_GAP_TOL)
            .iter()
            .any(|c| c.len() > 1)
    }

    /// Heat kernel K_t = sum_k exp(-t lambda_k) phi_k phi_k^T.
    pub fn heat_kernel(&self, t: f64) -> Result<KernelMatrix, GraphError> {
        if t < 0.0 {
            return Err(GraphError::NegativeTime { t });
        }
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for k in 0..n {
            let w = (-t * self.eigenvalues[k]).exp();
            scaled.column_mut(k).scale_mut(w);
        }
        let mut values = scaled * self.eigenvectors.transpose();
        let sym = (&values + values.transpose()) * 0.5;
        values = sym;
        Ok(KernelMatrix { t, values })
    }

    /// Reciprocal of the mean nonzero eigenvalue; the scale at which heat has
    /// diffused across a typical edge but not yet mixed completely.
    pub fn default_diffusion_time(&self) -> Result<f64, GraphError> {
        let scale = self
            .eigenvalues
            .iter()
            .fold(1.0_f64, |acc, &v| acc.max(v.abs()));
        let threshold = 1e-9 * scale;
        let nonzero: Vec<f64> = self
            .eigenvalues
            .iter()
            .copied()
            .filter(|&v| v > threshold)
            .collect();
        if nonzero.is_empty() {
            return Err(GraphError::AllZeroSpectrum);
        }
        let mean = nonzero.iter().sum::<f64>() / nonzero.len() as f64;
        Ok(1.0 / mean)
    }
}

/// Dense heat kernel evaluated at one diffusion time.
///
/// Symmetric, positive semidefinite, every row sums to 1, and the diagonal is
/// strictly positive.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    t: f64,
    values: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn value(&self, u: usize, v: usize) -> f64 {
        self.values[(u, v)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Shared default diffusion time for a pair of graphs: reciprocal of the mean
/// nonzero eigenvalue pooled over both spectra. Reduces to the single-graph
/// default when the spectra agree.
pub fn pair_diffusion_time(
    a: &SpectralDecomposition,
    b: &SpectralDecomposition,
) -> Result<f64, GraphError> {
    let scale = a
        .eigenvalues()
        .iter()
        .chain(b.eigenvalues())
        .fold(1.0_f64, |acc, &v| acc.max(v.abs()));
    let threshold = 1e-9 * scale;
    let nonzero: Vec<f64> = a
        .eigenvalues()
        .iter()
        .chain(b.eigenvalues())
        .copied()
        .filter(|&v| v > threshold)
        .collect();
    if nonzero.is_empty() {
        return Err(GraphError::AllZeroSpectrum);
    }
    Ok(nonzero.len() as f64 / nonzero.iter().sum::<f64>())
}
