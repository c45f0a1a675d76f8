//! Node descriptors and distances derived from Laplacian spectra.
//!
//! Every node u gets a spectral feature theta_u whose k-th entry is the
//! squared eigenvector coordinate phi_k(u)^2. Two nodes from different graphs
//! are compared through the stacked pair feature w = [theta_u; theta_v] and a
//! positive semidefinite proximity B via d_B = sqrt(w^T B w). Classic heat
//! and wave kernel signatures plus anchor heat profiles round out the
//! first-order distances consumed by the matcher.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{SpectralDecomposition, DEGENERACY_GAP_TOL};

/// Largest admissible negative eigenvalue when validating a proximity matrix,
/// relative to its spectral radius.
pub const PSD_TOL: f64 = 1e-8;

/// Quadratic forms in [-1e-10, 0) are rounding noise and clamp to zero;
/// anything lower is rejected as a genuinely indefinite proximity.
pub const QUADRATIC_FORM_FLOOR: f64 = -1e-10;

/// Eigenvalues below this floor are excluded from wave kernel signatures
/// (their logarithm is meaningless).
pub const WKS_EIGENVALUE_FLOOR: f64 = 1e-10;

/// Number of evaluation energies in the default wave-kernel grid.
pub const WKS_GRID_SIZE: usize = 20;

#[derive(Debug, Error)]
pub enum SignatureError {
    #[error("requested {k} spectral coordinates, admissible range is 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("negative signature time {t}")]
    NegativeTime { t: f64 },
    #[error("signature evaluation grid is empty")]
    EmptyTimes,
    #[error("spectral bandwidth {sigma} must be positive")]
    NonPositiveSigma { sigma: f64 },
    #[error("feature has dimension {got}, proximity expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("quadratic form {value:e} below the negativity floor")]
    NegativeQuadraticForm { value: f64 },
    #[error("proximity matrix is not symmetric")]
    NotSymmetric,
    #[error("proximity matrix has eigenvalue {min:e} beyond the PSD tolerance")]
    NotPositiveSemidefinite { min: f64 },
    #[error("anchor node list is empty")]
    EmptyAnchors,
    #[error("node index {index} out of range for {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },
    #[error("node index {index} listed twice")]
    DuplicateNode { index: usize },
}

/// Per-node spectral features; row u holds theta_u, one entry per retained
/// eigenpair.
///
/// Entries are squared eigenvector coordinates, so they are invariant to
/// eigenvector sign. Within a near-degenerate eigenvalue cluster individual
/// eigenvectors are only defined up to rotation; those entries are replaced
/// by the cluster's eigenprojector diagonal spread evenly across the cluster,
/// which is basis-independent and reduces to phi_k(u)^2 for simple spectra.
#[derive(Debug, Clone)]
pub struct NodeFeatures {
    theta: DMatrix<f64>,
}

impl NodeFeatures {
    /// Features from the `k` smallest eigenpairs, 1 <= k <= n.
    pub fn compute(spec: &SpectralDecomposition, k: usize) -> Result<Self, SignatureError> {
        let n = spec.len();
        if k == 0 || k > n {
            return Err(SignatureError::KOutOfRange { k, n });
        }
        let phi = spec.eigenvectors();
        let mut theta = DMatrix::zeros(n, k);
        for cluster in spec.degenerate_clusters(DEGENERACY_GAP_TOL) {
            if cluster.start >= k {
                break;
            }
            let size = cluster.len() as f64;
            for u in 0..n {
                let mass: f64 = cluster.clone().map(|c| phi[(u, c)] * phi[(u, c)]).sum();
                for col in cluster.clone().take_while(|&c| c < k) {
                    theta[(u, col)] = mass / size;
                }
            }
        }
        Ok(Self { theta })
    }

    pub fn node_count(&self) -> usize {
        self.theta.nrows()
    }

    pub fn k(&self) -> usize {
        self.theta.ncols()
    }

    /// theta_u as an owned vector.
    pub fn feature(&self, u: usize) -> DVector<f64> {
        self.theta.row(u).transpose()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.theta
    }
}

/// Stacked pair feature w = [theta_u; theta_v] of length K + K'.
pub fn pair_feature(theta_u: &DVector<f64>, theta_v: &DVector<f64>) -> DVector<f64> {
    let mut w = DVector::zeros(theta_u.len() + theta_v.len());
    w.rows_mut(0, theta_u.len()).copy_from(theta_u);
    w.rows_mut(theta_u.len(), theta_v.len()).copy_from(theta_v);
    w
}

/// Symmetric positive semidefinite matrix defining the learned proximity
/// d_B(w) = sqrt(w^T B w).
#[derive(Debug, Clone)]
pub struct ProximityMatrix {
    b: DMatrix<f64>,
}

impl ProximityMatrix {
    /// Validates symmetry and positive semidefiniteness (smallest eigenvalue
    /// no lower than -PSD_TOL relative to the spectral radius).
    pub fn new(b: DMatrix<f64>) -> Result<Self, SignatureError> {
        assert_eq!(b.nrows(), b.ncols(), "proximity matrix must be square");
        let scale = b.amax().max(1.0);
        for r in 0..b.nrows() {
            for c in (r + 1)..b.ncols() {
                if (b[(r, c)] - b[(c, r)]).abs() > 1e-9 * scale {
                    return Err(SignatureError::NotSymmetric);
                }
            }
        }
        if b.nrows() > 0 {
            let eig = b.symmetric_eigenvalues();
            let min = eig.min();
            if min < -PSD_TOL * scale {
                return Err(SignatureError::NotPositiveSemidefinite { min });
            }
        }
        Ok(Self { b })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            b: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            b: DMatrix::identity(dim, dim),
        }
    }

    /// The block matrix [[I, -I], [-I, I]] of size 2k x 2k, for which
    /// d_B([x; y]) = ||x - y||.
    pub fn block_identity(k: usize) -> Self {
        let mut b = DMatrix::zeros(2 * k, 2 * k);
        for i in 0..k {
            b[(i, i)] = 1.0;
            b[(k + i, k + i)] = 1.0;
            b[(i, k + i)] = -1.0;
            b[(k + i, i)] = -1.0;
        }
        Self { b }
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// w^T B w with rounding noise clamped to zero; rejects values below
    /// `QUADRATIC_FORM_FLOOR`.
    pub fn squared_form(&self, w: &DVector<f64>) -> Result<f64, SignatureError> {
        if w.len() != self.dim() {
            return Err(SignatureError::DimensionMismatch {
                got: w.len(),
                expected: self.dim(),
            });
        }
        let q = (w.transpose() * &self.b * w)[(0, 0)];
        if q < QUADRATIC_FORM_FLOOR {
            return Err(SignatureError::NegativeQuadraticForm { value: q });
        }
        Ok(q.max(0.0))
    }

    /// d_B(w) = sqrt(w^T B w).
    pub fn distance(&self, w: &DVector<f64>) -> Result<f64, SignatureError> {
        Ok(self.squared_form(w)?.sqrt())
    }
}

/// Heat kernel signature: row u holds k_t(u, u) for each requested time, the
/// diagonal of the heat kernel as a function of t.
pub fn heat_kernel_signature(
    spec: &SpectralDecomposition,
    times: &[f64],
) -> Result<DMatrix<f64>, SignatureError> {
    if times.is_empty() {
        return Err(SignatureError::EmptyTimes);
    }
    if let Some(&t) = times.iter().find(|&&t| t < 0.0) {
        return Err(SignatureError::NegativeTime { t });
    }
    let n = spec.len();
    let phi = spec.eigenvectors();
    let mut sig = DMatrix::zeros(n, times.len());
    for (col, &t) in times.iter().enumerate() {
        for u in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += (-t * spec.eigenvalues()[k]).exp() * phi[(u, k)] * phi[(u, k)];
            }
            sig[(u, col)] = acc;
        }
    }
    Ok(sig)
}

/// Wave kernel signature evaluated at log-energy points `energies` with
/// bandwidth `sigma`; eigenvalues below `WKS_EIGENVALUE_FLOOR` are skipped.
pub fn wave_kernel_signature(
    spec: &SpectralDecomposition,
    energies: &[f64],
    sigma: f64,
) -> Result<DMatrix<f64>, SignatureError> {
    if energies.is_empty() {
        return Err(SignatureError::EmptyTimes);
    }
    if !(sigma > 0.0) {
        return Err(SignatureError::NonPositiveSigma { sigma });
    }
    let n = spec.len();
    let phi = spec.eigenvectors();
    let mut sig = DMatrix::zeros(n, energies.len());
    for (col, &e) in energies.iter().enumerate() {
        for k in 0..n {
            let lambda = spec.eigenvalues()[k];
            if lambda < WKS_EIGENVALUE_FLOOR {
                continue;
            }
            let d = e - lambda.ln();
            let h = (-d * d / (2.0 * sigma * sigma)).exp();
            for u in 0..n {
                sig[(u, col)] += h * phi[(u, k)] * phi[(u, k)];
            }
        }
    }
    Ok(sig)
}

/// Default wave-kernel evaluation grid for a pooled set of eigenvalues:
/// `WKS_GRID_SIZE` energies spanning [ln lambda_min+, ln lambda_max] with
/// bandwidth seven times the grid spacing. Returns None when no eigenvalue
/// clears the floor.
pub fn wks_default_grid(eigenvalues: &[f64]) -> Option<(Vec<f64>, f64)> {
    let admissible: Vec<f64> = eigenvalues
        .iter()
        .copied()
        .filter(|&l| l >= WKS_EIGENVALUE_FLOOR)
        .collect();
    let min = admissible.iter().copied().fold(f64::INFINITY, f64::min);
    let max = admissible.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if admissible.is_empty() {
        return None;
    }
    let (lo, hi) = (min.ln(), max.ln());
    if hi - lo < 1e-12 {
        return Some((vec![lo; WKS_GRID_SIZE], 1.0));
    }
    let step = (hi - lo) / (WKS_GRID_SIZE - 1) as f64;
    let energies = (0..WKS_GRID_SIZE).map(|i| lo + step * i as f64).collect();
    Some((energies, 7.0 * step))
}

/// Total heat received from a set of anchor nodes at diffusion time t.
#[derive(Debug, Clone)]
pub struct AnchorHeatProfile {
    t: f64,
    values: Vec<f64>,
}

impl AnchorHeatProfile {
    /// values[v] = sum over anchors u of k_t(u, v).
    pub fn compute(
        spec: &SpectralDecomposition,
        anchor_nodes: &[usize],
        t: f64,
    ) -> Result<Self, SignatureError> {
        if anchor_nodes.is_empty() {
            return Err(SignatureError::EmptyAnchors);
        }
        if t < 0.0 {
            return Err(SignatureError::NegativeTime { t });
        }
        let n = spec.len();
        let mut seen = vec![false; n];
        for &u in anchor_nodes {
            if u >= n {
                return Err(SignatureError::NodeOutOfRange { index: u, n });
            }
            if seen[u] {
                return Err(SignatureError::DuplicateNode { index: u });
            }
            seen[u] = true;
        }
        let phi = spec.eigenvectors();
        let mut values = vec![0.0; n];
        for k in 0..n {
            let mass: f64 = anchor_nodes.iter().map(|&u| phi[(u, k)]).sum();
            let w = (-t * spec.eigenvalues()[k]).exp() * mass;
            for (v, value) in values.iter_mut().enumerate() {
                *value += w * phi[(v, k)];
            }
        }
        Ok(Self { t, values })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, v: usize) -> f64 {
        self.values[v]
    }
}

/// Combined first-order distance c_B * d_B + c_ap * |profile difference|.
pub fn first_order_distance(
    d_b: f64,
    profile_i: f64,
    profile_a: f64,
    c_b: f64,
    c_ap: f64,
) -> f64 {
    debug_assert!(c_b >= 0.0 && c_ap >= 0.0, "weights must be nonnegative");
    c_b * d_b + c_ap * (profile_i - profile_a).abs()
}
