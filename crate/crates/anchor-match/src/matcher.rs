//! Compatibility-matrix construction and assignment solvers.
//!
//! Non-anchor nodes of the two graphs index a (p*q) x (p*q) matrix W whose
//! off-diagonal entries compare pairwise structure (heat-kernel entries, or
//! raw adjacency weights for the baseline variant) and whose diagonal holds
//! per-pair first-order evidence (wave-kernel signatures, anchor heat
//! profiles, a learned proximity, or their weighted combination). Distances
//! become affinities through exp(-d^2 / sigma^2), so the assignment problem
//! is a maximization solved by reweighted random walks, with spectral and
//! brute-force alternatives behind the same interface.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{pair_diffusion_time, GraphError, SpectralDecomposition, WeightedGraph};
use crate::learn::{learn_proximity, AnchorSet, LearnConfig, LearnError};
use crate::signatures::{
    first_order_distance, pair_feature, wave_kernel_signature, wks_default_grid,
    AnchorHeatProfile, NodeFeatures, ProximityMatrix, SignatureError,
};

/// Brute-force enumeration guard: factorial blowup past this side length.
pub const BRUTE_FORCE_LIMIT: usize = 8;
/// Power-iteration exit residual for the spectral solver.
pub const SPECTRAL_RESIDUAL: f64 = 1e-8;
const SPECTRAL_MAX_ITERS: usize = 10_000;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("pair distance undefined for conflicting indices (i={i}, j={j}, a={a}, b={b})")]
    ConflictingPair { i: usize, j: usize, a: usize, b: usize },
    #[error("variant {variant} needs a proximity matrix")]
    MissingProximityMatrix { variant: Variant },
    #[error("variant {variant} needs anchor nodes")]
    MissingAnchors { variant: Variant },
    #[error("compatibility matrix is all zeros")]
    ZeroMatrix,
    #[error("brute force refused: min side {side} exceeds {limit}")]
    TooLarge { side: usize, limit: usize },
    #[error("power iteration did not reach residual {residual:e} in {iters} iterations")]
    ConvergenceFailure { residual: f64, iters: usize },
    #[error("invalid solver parameter: {0}")]
    InvalidParams(&'static str),
    #[error("unknown variant {0:?}; expected one of i, ii, iii, iv, v, vi")]
    UnknownVariant(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
}

/// The six compatibility schemes, identified on the wire by lowercase roman
/// numerals i..vi.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    /// i: raw adjacency-weight differences, no first-order term.
    Adjacency,
    /// ii: heat-kernel entry differences, no first-order term.
    HeatKernel,
    /// iii: heat kernel plus wave-kernel-signature diagonal.
    HeatWithWks,
    /// iv: heat kernel plus anchor-heat-profile diagonal.
    HeatWithProfile,
    /// v: heat kernel plus learned-proximity diagonal.
    HeatWithProximity,
    /// vi: heat kernel plus weighted proximity and profile diagonal.
    #[default]
    HeatWithProximityAndProfile,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Adjacency,
        Variant::HeatKernel,
        Variant::HeatWithWks,
        Variant::HeatWithProfile,
        Variant::HeatWithProximity,
        Variant::HeatWithProximityAndProfile,
    ];

    pub fn requires_proximity(self) -> bool {
        matches!(
            self,
            Variant::HeatWithProximity | Variant::HeatWithProximityAndProfile
        )
    }

    pub fn requires_anchors(self) -> bool {
        matches!(
            self,
            Variant::HeatWithProfile | Variant::HeatWithProximityAndProfile
        )
    }

    pub fn has_first_order(self) -> bool {
        !matches!(self, Variant::Adjacency | Variant::HeatKernel)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id = match self {
            Variant::Adjacency => "i",
            Variant::HeatKernel => "ii",
            Variant::HeatWithWks => "iii",
            Variant::HeatWithProfile => "iv",
            Variant::HeatWithProximity => "v",
            Variant::HeatWithProximityAndProfile => "vi",
        };
        f.write_str(id)
    }
}

impl FromStr for Variant {
    type Err = MatchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" => Ok(Variant::Adjacency),
            "ii" => Ok(Variant::HeatKernel),
            "iii" => Ok(Variant::HeatWithWks),
            "iv" => Ok(Variant::HeatWithProfile),
            "v" => Ok(Variant::HeatWithProximity),
            "vi" => Ok(Variant::HeatWithProximityAndProfile),
            other => Err(MatchError::UnknownVariant(other.to_string())),
        }
    }
}

/// Random-walk solver knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    /// Walk weight in (0,1); 1 - alpha goes to the reweighting jump.
    pub alpha: f64,
    /// Inflation exponent for the reweighting step.
    pub beta: f64,
    pub sinkhorn_iters: usize,
    pub conv_tol: f64,
    pub max_iters: usize,
    /// Affinity bandwidth; None self-tunes to the median nonzero distance,
    /// separately for the pairwise and first-order populations.
    pub affinity_sigma: Option<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 30.0,
            sinkhorn_iters: 10,
            conv_tol: 1e-6,
            max_iters: 300,
            affinity_sigma: None,
        }
    }
}

impl SolverParams {
    fn validate(&self) -> Result<(), MatchError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MatchError::InvalidParams("alpha must lie in (0, 1)"));
        }
        if !(self.beta > 0.0) {
            return Err(MatchError::InvalidParams("beta must be positive"));
        }
        if !(self.conv_tol > 0.0) {
            return Err(MatchError::InvalidParams("conv_tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(MatchError::InvalidParams("max_iters must be at least 1"));
        }
        if let Some(sigma) = self.affinity_sigma {
            if !(sigma > 0.0) {
                return Err(MatchError::InvalidParams("affinity_sigma must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    #[default]
    Rrwm,
    Spectral,
    BruteForce,
}

/// Full pipeline configuration.
#[derive(Debug, Clone)]
pub struct MatchConfig {
    pub variant: Variant,
    pub solver: SolverKind,
    pub params: SolverParams,
    /// Weight on the learned-proximity distance in the combined diagonal.
    pub c_b: f64,
    /// Weight on the anchor-profile distance in the combined diagonal.
    pub c_ap: f64,
    /// Eigenpairs per node feature; defaults to min(|V|, |V'|).
    pub k: Option<usize>,
    /// Diffusion time; defaults to the pooled pair default.
    pub diffusion_time: Option<f64>,
    pub learn: LearnConfig,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            variant: Variant::HeatWithProximityAndProfile,
            solver: SolverKind::Rrwm,
            params: SolverParams::default(),
            c_b: 8.0,
            c_ap: 3.0,
            k: None,
            diffusion_time: None,
            learn: LearnConfig::default(),
        }
    }
}

/// Compatibility matrix over non-anchor node pairs; local pair (r, s) sits at
/// row r*q + s.
#[derive(Debug, Clone)]
pub struct CompatibilityMatrix {
    w: DMatrix<f64>,
    rows_g: Vec<usize>,
    cols_h: Vec<usize>,
}

impl CompatibilityMatrix {
    pub fn p(&self) -> usize {
        self.rows_g.len()
    }

    pub fn q(&self) -> usize {
        self.cols_h.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Original node ids of the candidate pair behind matrix row `e`.
    pub fn node_pair(&self, e: usize) -> (usize, usize) {
        let q = self.q();
        (self.rows_g[e / q], self.cols_h[e % q])
    }

    /// Builds an assignment from local (row, col) pairs: indicator objective
    /// z^T W z, pairs mapped back to original node ids and sorted by source.
    pub fn assignment_from_local(&self, local: &[(usize, usize)]) -> Assignment {
        let q = self.q();
        let mut objective = 0.0;
        for &(r, s) in local {
            for &(r2, s2) in local {
                objective += self.w[(r * q + s, r2 * q + s2)];
            }
        }
        let mut pairs: Vec<(usize, usize)> = local
            .iter()
            .map(|&(r, s)| (self.rows_g[r], self.cols_h[s]))
            .collect();
        pairs.sort_unstable();
        Assignment { pairs, objective }
    }
}

/// One-to-one partial map between non-anchor nodes, by original node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub objective: f64,
}

impl Assignment {
    pub fn empty() -> Self {
        Self {
            pairs: Vec::new(),
            objective: 0.0,
        }
    }

    pub fn is_one_to_one(&self) -> bool {
        let mut sources: Vec<usize> = self.pairs.iter().map(|&(i, _)| i).collect();
        let mut targets: Vec<usize> = self.pairs.iter().map(|&(_, a)| a).collect();
        sources.sort_unstable();
        targets.sort_unstable();
        sources.windows(2).all(|w| w[0] != w[1]) && targets.windows(2).all(|w| w[0] != w[1])
    }

    /// Target matched to source `i`, if any.
    pub fn target_of(&self, i: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(x, _)| x == i).map(|&(_, a)| a)
    }
}

/// |k_t(i,j) - k'_t(a,b)|, the pairwise structural distance.
pub fn second_order_distance(
    k: &crate::graph::KernelMatrix,
    k_prime: &crate::graph::KernelMatrix,
    i: usize,
    j: usize,
    a: usize,
    b: usize,
) -> Result<f64, MatchError> {
    if i == j || a == b {
        return Err(MatchError::ConflictingPair { i, j, a, b });
    }
    Ok((k.value(i, j) - k_prime.value(a, b)).abs())
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let k = values.len();
    Some(if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    })
}

fn affinity(d: f64, sigma: f64) -> f64 {
    (-(d * d) / (sigma * sigma)).exp()
}

/// Builds W for `variant`. Anchor nodes (when given) are excluded from the
/// candidate domain; variants needing anchor profiles or a learned proximity
/// reject their absence. Distances map to affinities with a bandwidth that
/// self-tunes to the median nonzero distance of each population (pairwise
/// and first-order separately) unless params.affinity_sigma overrides both.
pub fn build_compatibility(
    g: &WeightedGraph,
    h: &WeightedGraph,
    anchors: Option<&AnchorSet>,
    variant: Variant,
    proximity: Option<&ProximityMatrix>,
    config: &MatchConfig,
) -> Result<CompatibilityMatrix, MatchError> {
    let (n, m) = (g.node_count(), h.node_count());
    if let Some(a) = anchors {
        a.validate_for(n, m)?;
    }
    if variant.requires_anchors() && anchors.is_none() {
        return Err(MatchError::MissingAnchors { variant });
    }
    if variant.requires_proximity() && proximity.is_none() {
        return Err(MatchError::MissingProximityMatrix { variant });
    }
    if let Some(sigma) = config.params.affinity_sigma {
        if !(sigma > 0.0) {
            return Err(MatchError::InvalidParams("affinity_sigma must be positive"));
        }
    }

    let rows_g: Vec<usize> = (0..n)
        .filter(|&i| anchors.is_none_or(|a| !a.contains_first(i)))
        .collect();
    let cols_h: Vec<usize> = (0..m)
        .filter(|&a_| anchors.is_none_or(|a| !a.contains_second(a_)))
        .collect();
    let (p, q) = (rows_g.len(), cols_h.len());
    let size = p * q;
    let mut w = DMatrix::zeros(size, size);

    // Pairwise structural distances, stored raw in the upper triangle.
    enum PairSource {
        Weights(DMatrix<f64>, DMatrix<f64>),
        Kernels(crate::graph::KernelMatrix, crate::graph::KernelMatrix),
    }
    let needs_spectra = variant != Variant::Adjacency || variant.has_first_order();
    let spectra = if needs_spectra {
        Some((
            SpectralDecomposition::of_graph(g)?,
            SpectralDecomposition::of_graph(h)?,
        ))
    } else {
        None
    };
    let source = match variant {
        Variant::Adjacency => PairSource::Weights(g.adjacency(), h.adjacency()),
        _ => {
            let (sg, sh) = spectra.as_ref().expect("spectra computed for kernel variants");
            let t = match config.diffusion_time {
                Some(t) => t,
                None => pair_diffusion_time(sg, sh)?,
            };
            PairSource::Kernels(sg.heat_kernel(t)?, sh.heat_kernel(t)?)
        }
    };

    let mut pair_population = Vec::new();
    for e in 0..size {
        let (i, a) = (rows_g[e / q], cols_h[e % q]);
        for f in (e + 1)..size {
            let (j, b) = (rows_g[f / q], cols_h[f % q]);
            if i == j || a == b {
                continue;
            }
            let d = match &source {
                PairSource::Weights(ag, ah) => (ag[(i, j)] - ah[(a, b)]).abs(),
                PairSource::Kernels(kg, kh) => second_order_distance(kg, kh, i, j, a, b)?,
            };
            if d > 0.0 {
                pair_population.push(d);
            }
            w[(e, f)] = d;
        }
    }

    // First-order distances per candidate pair.
    let diag: Option<Vec<f64>> = if variant.has_first_order() {
        let (sg, sh) = spectra.as_ref().expect("spectra computed for first-order variants");
        let mut d1 = vec![0.0; size];
        match variant {
            Variant::HeatWithWks => {
                let mut pooled = sg.eigenvalues().to_vec();
                pooled.extend_from_slice(sh.eigenvalues());
                if let Some((energies, sigma)) = wks_default_grid(&pooled) {
                    let wks_g = wave_kernel_signature(sg, &energies, sigma)?;
                    let wks_h = wave_kernel_signature(sh, &energies, sigma)?;
                    for (e, v) in d1.iter_mut().enumerate() {
                        let (i, a) = (rows_g[e / q], cols_h[e % q]);
                        *v = (wks_g.row(i) - wks_h.row(a)).norm();
                    }
                }
            }
            Variant::HeatWithProfile | Variant::HeatWithProximity
            | Variant::HeatWithProximityAndProfile => {
                let (c_b, c_ap) = match variant {
                    Variant::HeatWithProfile => (0.0, 1.0),
                    Variant::HeatWithProximity => (1.0, 0.0),
                    _ => (config.c_b, config.c_ap),
                };
                let profiles = if c_ap != 0.0 {
                    let set = anchors.expect("anchor requirement checked above");
                    let t = match &source {
                        PairSource::Kernels(kg, _) => kg.t(),
                        PairSource::Weights(..) => unreachable!("kernel variants only"),
                    };
                    Some((
                        AnchorHeatProfile::compute(sg, &set.first_nodes(), t)?,
                        AnchorHeatProfile::compute(sh, &set.second_nodes(), t)?,
                    ))
                } else {
                    None
                };
                let features = if c_b != 0.0 {
                    let b = proximity.expect("proximity requirement checked above");
                    if b.dim() % 2 != 0 {
                        return Err(MatchError::InvalidParams(
                            "proximity dimension must be even (stacked pair features)",
                        ));
                    }
                    let k = b.dim() / 2;
                    Some((
                        NodeFeatures::compute(sg, k)?,
                        NodeFeatures::compute(sh, k)?,
                        b,
                    ))
                } else {
                    None
                };
                for (e, v) in d1.iter_mut().enumerate() {
                    let (i, a) = (rows_g[e / q], cols_h[e % q]);
                    let d_b = match &features {
                        Some((tg, th, b)) => {
                            b.distance(&pair_feature(&tg.feature(i), &th.feature(a)))?
                        }
                        None => 0.0,
                    };
                    let (pi, pa) = match &profiles {
                        Some((pg, ph)) => (pg.value(i), ph.value(a)),
                        None => (0.0, 0.0),
                    };
                    *v = first_order_distance(d_b, pi, pa, c_b, c_ap);
                }
            }
            Variant::Adjacency | Variant::HeatKernel => unreachable!("no first-order term"),
        }
        Some(d1)
    } else {
        None
    };

    // Distances to affinities; conflicts stay zero.
    let sigma_pair = config
        .params
        .affinity_sigma
        .or_else(|| median(&mut pair_population))
        .unwrap_or(1.0);
    for e in 0..size {
        let (i, a) = (rows_g[e / q], cols_h[e % q]);
        for f in (e + 1)..size {
            let (j, b) = (rows_g[f / q], cols_h[f % q]);
            let value = if i == j || a == b {
                0.0
            } else {
                affinity(w[(e, f)], sigma_pair)
            };
            w[(e, f)] = value;
            w[(f, e)] = value;
        }
    }
    if let Some(d1) = diag {
        let mut population: Vec<f64> = d1.iter().copied().filter(|&d| d > 0.0).collect();
        let sigma_first = config
            .params
            .affinity_sigma
            .or_else(|| median(&mut population))
            .unwrap_or(1.0);
        for (e, &d) in d1.iter().enumerate() {
            w[(e, e)] = affinity(d, sigma_first);
        }
    }

    Ok(CompatibilityMatrix { w, rows_g, cols_h })
}

/// Reweighted random-walk scores: x alternates between a walk step on
/// W / d_max and a Sinkhorn-reweighted jump, l1-normalized each iteration,
/// until the l1 change drops below conv_tol or max_iters is hit.
pub fn rrwm_solve(
    w: &CompatibilityMatrix,
    params: &SolverParams,
) -> Result<DVector<f64>, MatchError> {
    params.validate()?;
    let (p, q) = (w.p(), w.q());
    let size = p * q;
    if size == 0 {
        return Ok(DVector::zeros(0));
    }
    let mat = w.matrix();
    if mat.amax() == 0.0 {
        return Err(MatchError::ZeroMatrix);
    }
    let d_max = (0..size)
        .map(|r| mat.row(r).sum())
        .fold(f64::NEG_INFINITY, f64::max);
    let p_mat = mat / d_max;

    let mut x = DVector::from_element(size, 1.0 / size as f64);
    for _ in 0..params.max_iters {
        let walked = p_mat.tr_mul(&x);
        // Reweighting inflates the walked distribution, not the previous
        // iterate: the jump target tracks where the walk just moved mass.
        let max_walked = walked.max();
        let mut y = DMatrix::zeros(p, q);
        for r in 0..p {
            for s in 0..q {
                y[(r, s)] = if max_walked > 0.0 {
                    (params.beta * walked[r * q + s] / max_walked).exp()
                } else {
                    1.0
                };
            }
        }
        for _ in 0..params.sinkhorn_iters {
            for r in 0..p {
                let sum: f64 = y.row(r).sum();
                if sum > 0.0 {
                    for s in 0..q {
                        y[(r, s)] /= sum;
                    }
                }
            }
            for s in 0..q {
                let sum: f64 = y.column(s).sum();
                if sum > 0.0 {
                    for r in 0..p {
                        y[(r, s)] /= sum;
                    }
                }
            }
        }
        let mut jump = DVector::zeros(size);
        for r in 0..p {
            for s in 0..q {
                jump[r * q + s] = y[(r, s)];
            }
        }
        let jump_sum = jump.sum();
        if jump_sum > 0.0 {
            jump /= jump_sum;
        }
        let mut next = walked * params.alpha + jump * (1.0 - params.alpha);
        let next_sum = next.sum();
        if next_sum > 0.0 {
            next /= next_sum;
        }
        let delta = (&next - &x).abs().sum();
        x = next;
        if delta < params.conv_tol {
            break;
        }
    }
    Ok(x)
}

/// Greedy rounding: repeatedly take the largest remaining score, fix that
/// pair, and eliminate its row and column; ties go to the lowest linear
/// index. Returns exactly min(p, q) local (row, col) pairs, sorted.
pub fn discretize(x: &DVector<f64>, p: usize, q: usize) -> Vec<(usize, usize)> {
    assert_eq!(x.len(), p * q, "score vector must have p*q entries");
    debug_assert!(x.iter().all(|&v| v >= 0.0), "scores must be nonnegative");
    let mut row_used = vec![false; p];
    let mut col_used = vec![false; q];
    let mut picked = Vec::with_capacity(p.min(q));
    for _ in 0..p.min(q) {
        let mut best: Option<(f64, usize)> = None;
        for e in 0..p * q {
            let (r, s) = (e / q, e % q);
            if row_used[r] || col_used[s] {
                continue;
            }
            if best.is_none_or(|(v, _)| x[e] > v) {
                best = Some((x[e], e));
            }
        }
        let Some((_, e)) = best else { break };
        let (r, s) = (e / q, e % q);
        row_used[r] = true;
        col_used[s] = true;
        picked.push((r, s));
    }
    picked.sort_unstable();
    picked
}

/// Exact IQP optimum by enumeration of injective maps over the smaller side.
/// Ties keep the first map in enumeration order (ascending source, ascending
/// target).
pub fn brute_force_solve(w: &CompatibilityMatrix) -> Result<Assignment, MatchError> {
    let (p, q) = (w.p(), w.q());
    let k = p.min(q);
    if k > BRUTE_FORCE_LIMIT {
        return Err(MatchError::TooLarge {
            side: k,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if k == 0 {
        return Ok(Assignment::empty());
    }
    let rows_smaller = p <= q;
    let (small, large) = if rows_smaller { (p, q) } else { (q, p) };
    let mat = w.matrix();
    let index = |s: usize, l: usize| -> usize {
        if rows_smaller {
            s * q + l
        } else {
            l * q + s
        }
    };

    struct Search<'a> {
        mat: &'a DMatrix<f64>,
        small: usize,
        large: usize,
        used: Vec<bool>,
        chosen: Vec<usize>,
        best_objective: f64,
        best: Vec<usize>,
    }
    impl Search<'_> {
        fn run(&mut self, depth: usize, objective: f64, index: &dyn Fn(usize, usize) -> usize) {
            if depth == self.small {
                if objective > self.best_objective {
                    self.best_objective = objective;
                    self.best = self.chosen.clone();
                }
                return;
            }
            for l in 0..self.large {
                if self.used[l] {
                    continue;
                }
                let e = index(depth, l);
                let mut gain = self.mat[(e, e)];
                for (d, &prev) in self.chosen.iter().enumerate() {
                    gain += 2.0 * self.mat[(e, index(d, prev))];
                }
                self.used[l] = true;
                self.chosen.push(l);
                self.run(depth + 1, objective + gain, index);
                self.chosen.pop();
                self.used[l] = false;
            }
        }
    }

    let mut search = Search {
        mat,
        small,
        large,
        used: vec![false; large],
        chosen: Vec::with_capacity(small),
        best_objective: f64::NEG_INFINITY,
        best: Vec::new(),
    };
    search.run(0, 0.0, &index);

    let local: Vec<(usize, usize)> = search
        .best
        .iter()
        .enumerate()
        .map(|(s, &l)| if rows_smaller { (s, l) } else { (l, s) })
        .collect();
    Ok(w.assignment_from_local(&local))
}

/// Principal-eigenvector scores by power iteration from a uniform start;
/// exits once the eigenpair residual drops to `SPECTRAL_RESIDUAL`.
fn spectral_scores(w: &CompatibilityMatrix) -> Result<DVector<f64>, MatchError> {
    let size = w.p() * w.q();
    if size == 0 {
        return Ok(DVector::zeros(0));
    }
    let mat = w.matrix();
    let mut v = DVector::from_element(size, 1.0 / (size as f64).sqrt());
    for _ in 0..SPECTRAL_MAX_ITERS {
        let wv = mat * &v;
        let lambda = v.dot(&wv);
        if (&wv - &v * lambda).norm() <= SPECTRAL_RESIDUAL {
            return Ok(v.map(|t| t.max(0.0)));
        }
        let norm = wv.norm();
        v = wv / norm;
    }
    Err(MatchError::ConvergenceFailure {
        residual: SPECTRAL_RESIDUAL,
        iters: SPECTRAL_MAX_ITERS,
    })
}

pub fn spectral_solve(w: &CompatibilityMatrix) -> Result<Assignment, MatchError> {
    let x = spectral_scores(w)?;
    let local = discretize(&x, w.p(), w.q());
    Ok(w.assignment_from_local(&local))
}

/// Solves a prepared compatibility matrix with the chosen solver.
pub fn solve_compatibility(
    w: &CompatibilityMatrix,
    solver: SolverKind,
    params: &SolverParams,
) -> Result<Assignment, MatchError> {
    match solver {
        SolverKind::Rrwm => {
            let x = rrwm_solve(w, params)?;
            let local = discretize(&x, w.p(), w.q());
            Ok(w.assignment_from_local(&local))
        }
        SolverKind::Spectral => spectral_solve(w),
        SolverKind::BruteForce => brute_force_solve(w),
    }
}

/// Outcome of a full pipeline run; the learned proximity is returned for
/// variants that produce one.
#[derive(Debug)]
pub struct MatchOutcome {
    pub assignment: Assignment,
    pub proximity: Option<ProximityMatrix>,
    pub learn_converged: Option<bool>,
}

/// Full pipeline: spectra, learned proximity when the variant calls for it,
/// compatibility matrix over non-anchor nodes, solve, discretize.
pub fn match_graphs(
    g: &WeightedGraph,
    h: &WeightedGraph,
    anchors: &AnchorSet,
    config: &MatchConfig,
) -> Result<MatchOutcome, MatchError> {
    anchors.validate_for(g.node_count(), h.node_count())?;
    let p = g.node_count() - anchors.len();
    let q = h.node_count() - anchors.len();
    if p == 0 || q == 0 {
        return Ok(MatchOutcome {
            assignment: Assignment::empty(),
            proximity: None,
            learn_converged: None,
        });
    }

    let (proximity, learn_converged) = if config.variant.requires_proximity() {
        let spec_g = SpectralDecomposition::of_graph(g)?;
        let spec_h = SpectralDecomposition::of_graph(h)?;
        let mut learn_config = config.learn.clone();
        if learn_config.k.is_none() {
            learn_config.k = config.k;
        }
        if learn_config.diffusion_time.is_none() {
            learn_config.diffusion_time = config.diffusion_time;
        }
        let result = learn_proximity(&spec_g, &spec_h, anchors, &learn_config)?;
        (Some(result.proximity), Some(result.converged))
    } else {
        (None, None)
    };

    let w = build_compatibility(g, h, Some(anchors), config.variant, proximity.as_ref(), config)?;
    let assignment = solve_compatibility(&w, config.solver, &config.params)?;
    Ok(MatchOutcome {
        assignment,
        proximity,
        learn_converged,
    })
}
