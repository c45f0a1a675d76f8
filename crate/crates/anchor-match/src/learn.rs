//! Max-margin learning of the node proximity from anchor correspondences.
//!
//! Every anchor pair (i, a) yields one margin constraint per competitor: the
//! squared proximity of the wrong pairing must exceed that of the true
//! pairing by 1, with slack rescaled by a loss weight derived from the heat
//! kernel. The regularized problem
//!
//!   min 1/2 ||B||_F^2 + (C/n) sum_m xi_m
//!   s.t. d_B^2(far) - d_B^2(near) >= 1 - xi_m / loss,  B PSD,  xi >= 0
//!
//! is solved by column generation: each round adds the most violated
//! constraint per anchor, solves the restricted QP, and projects B back onto
//! the PSD cone. The restricted QP itself is solved in the dual (one
//! multiplier per working constraint, a budget of C/n per anchor) and
//! certified by the primal-dual gap; the PSD constraint is handled only by
//! the projection step.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{pair_diffusion_time, GraphError, KernelMatrix, SpectralDecomposition};
use crate::signatures::{pair_feature, NodeFeatures, ProximityMatrix, SignatureError};

/// Additive floor keeping loss weights strictly positive.
pub const LOSS_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("anchor set is empty")]
    EmptyAnchorSet,
    #[error("node {index} appears in more than one anchor pair")]
    DuplicateAnchor { index: usize },
    #[error("anchor pair ({i}, {a}) out of range for graphs on {n} and {m} nodes")]
    AnchorOutOfRange { i: usize, a: usize, n: usize, m: usize },
    #[error("node index {index} out of range for {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },
    #[error("loss weight requested for a node paired with itself ({x})")]
    SameNode { x: usize },
    #[error("restricted QP missed tolerance {tol:e} after {iters} gradient steps")]
    QpNumericalFailure { tol: f64, iters: usize },
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Known node correspondences: pairs (i in G, a in G'), no node reused on
/// either side, at least one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pairs: Vec<(usize, usize)>,
}

impl AnchorSet {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, LearnError> {
        let pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
        if pairs.is_empty() {
            return Err(LearnError::EmptyAnchorSet);
        }
        for (pos, &(i, a)) in pairs.iter().enumerate() {
            for &(i2, a2) in &pairs[..pos] {
                if i == i2 {
                    return Err(LearnError::DuplicateAnchor { index: i });
                }
                if a == a2 {
                    return Err(LearnError::DuplicateAnchor { index: a });
                }
            }
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Always false: construction rejects empty sets.
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Anchor nodes on the first-graph side, in pair order.
    pub fn first_nodes(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(i, _)| i).collect()
    }

    /// Anchor nodes on the second-graph side, in pair order.
    pub fn second_nodes(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(_, a)| a).collect()
    }

    pub fn contains_first(&self, i: usize) -> bool {
        self.pairs.iter().any(|&(x, _)| x == i)
    }

    pub fn contains_second(&self, a: usize) -> bool {
        self.pairs.iter().any(|&(_, x)| x == a)
    }

    /// Checks every pair against the node counts of the two graphs.
    pub fn validate_for(&self, n: usize, m: usize) -> Result<(), LearnError> {
        for &(i, a) in &self.pairs {
            if i >= n || a >= m {
                return Err(LearnError::AnchorOutOfRange { i, a, n, m });
            }
        }
        Ok(())
    }
}

/// How the slack of a violated constraint is weighted by the heat kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Squared heat-kernel distance between the competitor and the anchor:
    /// confusing two nodes far apart in diffusion costs more.
    #[default]
    HeatDistance,
    /// Raw kernel value between the competitor and the anchor.
    RawKernel,
}

/// Loss weight for pairing node x where y was correct, both in one graph.
pub fn rescale_loss(
    kernel: &KernelMatrix,
    x: usize,
    y: usize,
    mode: LossMode,
) -> Result<f64, LearnError> {
    let n = kernel.n();
    if x >= n {
        return Err(LearnError::NodeOutOfRange { index: x, n });
    }
    if y >= n {
        return Err(LearnError::NodeOutOfRange { index: y, n });
    }
    if x == y {
        return Err(LearnError::SameNode { x });
    }
    let value = match mode {
        LossMode::HeatDistance => {
            kernel.value(x, x) + kernel.value(y, y) - 2.0 * kernel.value(x, y)
        }
        LossMode::RawKernel => kernel.value(x, y),
    };
    Ok(value + LOSS_EPSILON)
}

/// Which graph the competitor node comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompetitorSide {
    /// Wrong partner b in G' for the anchor's first node.
    SecondGraph,
    /// Wrong node j in G paired with the anchor's second node.
    FirstGraph,
}

/// One margin constraint: psi^T vec(B) >= 1 - xi_m / loss.
#[derive(Debug, Clone)]
pub struct MarginConstraint {
    pub anchor_index: usize,
    pub side: CompetitorSide,
    pub competitor: usize,
    /// vec(w_far w_far^T - w_near w_near^T), row-major, length dim^2.
    pub psi: DVector<f64>,
    pub loss: f64,
    w_far: DVector<f64>,
    w_near: DVector<f64>,
}

impl MarginConstraint {
    /// Builds the constraint that `w_far` must sit farther from the anchor
    /// than `w_near` by a loss-rescaled margin.
    pub fn new(
        anchor_index: usize,
        side: CompetitorSide,
        competitor: usize,
        w_far: DVector<f64>,
        w_near: DVector<f64>,
        loss: f64,
    ) -> Self {
        let dim = w_far.len();
        let outer = &w_far * w_far.transpose() - &w_near * w_near.transpose();
        let mut psi = DVector::zeros(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                psi[r * dim + c] = outer[(r, c)];
            }
        }
        Self {
            anchor_index,
            side,
            competitor,
            psi,
            loss,
            w_far,
            w_near,
        }
    }

    /// psi^T vec(B) = w_far^T B w_far - w_near^T B w_near.
    pub fn margin(&self, b: &DMatrix<f64>) -> f64 {
        let far = (self.w_far.transpose() * b * &self.w_far)[(0, 0)];
        let near = (self.w_near.transpose() * b * &self.w_near)[(0, 0)];
        far - near
    }

    /// psi_c . psi_d, evaluated through the rank-two structure.
    fn gram_with(&self, other: &Self) -> f64 {
        let ff = self.w_far.dot(&other.w_far);
        let fn_ = self.w_far.dot(&other.w_near);
        let nf = self.w_near.dot(&other.w_far);
        let nn = self.w_near.dot(&other.w_near);
        ff * ff - fn_ * fn_ - nf * nf + nn * nn
    }

    fn same_target(&self, side: CompetitorSide, competitor: usize) -> bool {
        self.side == side && self.competitor == competitor
    }
}

#[derive(Debug, Clone)]
pub struct LearnConfig {
    /// Regularization constant C; each anchor's dual budget is C / n.
    pub c_reg: f64,
    /// A constraint must be violated by more than this to enter the working
    /// set.
    pub cg_tol: f64,
    pub max_cg_iters: usize,
    /// Relative primal-dual gap at which a restricted QP counts as solved.
    pub qp_tol: f64,
    pub loss_mode: LossMode,
    /// Start constraint selection from [[I, -I], [-I, I]] instead of zero.
    pub warm_start_block: bool,
    /// Number of eigenpairs per node feature; defaults to min(|V|, |V'|).
    pub k: Option<usize>,
    /// Diffusion time; defaults to the pooled pair default.
    pub diffusion_time: Option<f64>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            c_reg: 10.0,
            cg_tol: 1e-4,
            max_cg_iters: 100,
            qp_tol: 1e-6,
            loss_mode: LossMode::default(),
            warm_start_block: false,
            k: None,
            diffusion_time: None,
        }
    }
}

#[derive(Debug)]
pub struct LearnResult {
    pub proximity: ProximityMatrix,
    /// One slack per anchor, consistent with the returned proximity.
    pub slacks: Vec<f64>,
    pub active_constraints: Vec<MarginConstraint>,
    /// True when a full scan found no violation above cg_tol.
    pub converged: bool,
    pub iterations: usize,
    /// Restricted-QP primal objective after each round, before projection.
    pub qp_objectives: Vec<f64>,
}

/// Features and loss weights shared by every round of column generation.
#[derive(Debug)]
pub struct LearnProblem {
    features_g: Vec<DVector<f64>>,
    features_h: Vec<DVector<f64>>,
    dim: usize,
    anchors: Vec<(usize, usize)>,
    /// losses_second[m][b] = loss weight of competitor b in G' for anchor m.
    losses_second: Vec<Vec<f64>>,
    /// losses_first[m][j] = loss weight of competitor j in G for anchor m.
    losses_first: Vec<Vec<f64>>,
    diffusion_time: f64,
}

impl LearnProblem {
    pub fn assemble(
        spec_g: &SpectralDecomposition,
        spec_h: &SpectralDecomposition,
        anchors: &AnchorSet,
        config: &LearnConfig,
    ) -> Result<Self, LearnError> {
        let (n, m) = (spec_g.len(), spec_h.len());
        anchors.validate_for(n, m)?;
        let k = config.k.unwrap_or_else(|| n.min(m));
        let t = match config.diffusion_time {
            Some(t) => t,
            None => pair_diffusion_time(spec_g, spec_h)?,
        };
        let theta_g = NodeFeatures::compute(spec_g, k)?;
        let theta_h = NodeFeatures::compute(spec_h, k)?;
        let kernel_g = spec_g.heat_kernel(t)?;
        let kernel_h = spec_h.heat_kernel(t)?;

        let mut losses_second = Vec::with_capacity(anchors.len());
        let mut losses_first = Vec::with_capacity(anchors.len());
        for &(i, a) in anchors.pairs() {
            let mut second = vec![0.0; m];
            for b in 0..m {
                if b != a {
                    second[b] = rescale_loss(&kernel_h, b, a, config.loss_mode)?;
                }
            }
            let mut first = vec![0.0; n];
            for j in 0..n {
                if j != i {
                    first[j] = rescale_loss(&kernel_g, j, i, config.loss_mode)?;
                }
            }
            losses_second.push(second);
            losses_first.push(first);
        }

        Ok(Self {
            features_g: (0..n).map(|u| theta_g.feature(u)).collect(),
            features_h: (0..m).map(|u| theta_h.feature(u)).collect(),
            dim: 2 * k,
            anchors: anchors.pairs().to_vec(),
            losses_second,
            losses_first,
            diffusion_time: t,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    pub fn diffusion_time(&self) -> f64 {
        self.diffusion_time
    }

    /// Stacked feature [theta_i; theta'_a].
    pub fn pair(&self, i: usize, a: usize) -> DVector<f64> {
        pair_feature(&self.features_g[i], &self.features_h[a])
    }

    /// Most violated constraint of anchor `m` under (B, xi_m), if one exceeds
    /// cg_tol. Competitors in G' are scanned before competitors in G, each in
    /// ascending node order, and only a strictly larger violation displaces
    /// the incumbent, so ties resolve to the lowest competitor index on the
    /// second-graph side. Constraints already in the working set are skipped:
    /// slacks recomputed from the working set leave them non-violated by
    /// construction, so anything residual there is solver noise.
    pub fn most_violated(
        &self,
        b: &DMatrix<f64>,
        xi_m: f64,
        m: usize,
        cg_tol: f64,
        working: &[MarginConstraint],
    ) -> Option<MarginConstraint> {
        let (i, a) = self.anchors[m];
        let near = self.pair(i, a);
        let near_q = (near.transpose() * b * &near)[(0, 0)];
        let in_working = |side: CompetitorSide, competitor: usize| {
            working
                .iter()
                .any(|c| c.anchor_index == m && c.same_target(side, competitor))
        };
        let mut best: Option<(f64, CompetitorSide, usize)> = None;

        let mut consider = |side: CompetitorSide, competitor: usize, far: &DVector<f64>, loss: f64| {
            let far_q = (far.transpose() * b * far)[(0, 0)];
            let violation = 1.0 - xi_m / loss - (far_q - near_q);
            if violation > best.map_or(cg_tol, |(v, _, _)| v) {
                best = Some((violation, side, competitor));
            }
        };

        for (bb, loss) in self.losses_second[m].iter().enumerate() {
            if bb == a || in_working(CompetitorSide::SecondGraph, bb) {
                continue;
            }
            let far = self.pair(i, bb);
            consider(CompetitorSide::SecondGraph, bb, &far, *loss);
        }
        for (j, loss) in self.losses_first[m].iter().enumerate() {
            if j == i || in_working(CompetitorSide::FirstGraph, j) {
                continue;
            }
            let far = self.pair(j, a);
            consider(CompetitorSide::FirstGraph, j, &far, *loss);
        }

        let (_, side, competitor) = best?;
        let (far, loss) = match side {
            CompetitorSide::SecondGraph => (self.pair(i, competitor), self.losses_second[m][competitor]),
            CompetitorSide::FirstGraph => (self.pair(competitor, a), self.losses_first[m][competitor]),
        };
        Some(MarginConstraint::new(m, side, competitor, far, near, loss))
    }
}

/// Solution of one restricted QP.
#[derive(Debug, Clone)]
pub struct QpSolution {
    /// B = sum_c alpha_c (w_far w_far^T - w_near w_near^T); symmetric but not
    /// necessarily PSD.
    pub b: DMatrix<f64>,
    /// Optimal slacks given B.
    pub slacks: Vec<f64>,
    pub alphas: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

/// Euclidean projection onto {alpha >= 0, sum alpha_c / loss_c <= budget}
/// for the coordinates listed in `idxs`.
fn project_anchor_block(alpha: &mut [f64], idxs: &[usize], inv_loss: &[f64], budget: f64) {
    let mut spent = 0.0;
    for &c in idxs {
        if alpha[c] < 0.0 {
            alpha[c] = 0.0;
        }
        spent += alpha[c] * inv_loss[c];
    }
    if spent <= budget {
        return;
    }
    let mut hi = 0.0f64;
    for &c in idxs {
        hi = hi.max(alpha[c] / inv_loss[c]);
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let nu = 0.5 * (lo + hi);
        let mut used = 0.0;
        for &c in idxs {
            used += inv_loss[c] * (alpha[c] - nu * inv_loss[c]).max(0.0);
        }
        if used > budget {
            lo = nu;
        } else {
            hi = nu;
        }
    }
    let nu = 0.5 * (lo + hi);
    for &c in idxs {
        alpha[c] = (alpha[c] - nu * inv_loss[c]).max(0.0);
    }
}

/// Optimal slacks for given margins: xi_m = max(0, max_c loss_c (1 - margin_c))
/// over the working constraints of anchor m.
fn slacks_from_margins(
    margins: &[f64],
    constraints: &[MarginConstraint],
    n_anchors: usize,
) -> Vec<f64> {
    let mut xi = vec![0.0; n_anchors];
    for (c, constraint) in constraints.iter().enumerate() {
        let need = constraint.loss * (1.0 - margins[c]);
        let m = constraint.anchor_index;
        if need > xi[m] {
            xi[m] = need;
        }
    }
    xi
}

/// Solves the restricted primal
///   min 1/2 ||B||_F^2 + (C/n) sum xi_m,  margin_c >= 1 - xi_m / loss_c
/// through its dual (maximize sum alpha - 1/2 alpha^T G alpha subject to
/// alpha >= 0 and a per-anchor budget sum_c alpha_c / loss_c <= C/n), using
/// accelerated projected gradient steps. The primal-dual gap certifies the
/// result: the returned objectives satisfy primal - dual <= qp_tol * max(1, primal).
pub fn solve_restricted_qp(
    constraints: &[MarginConstraint],
    n_anchors: usize,
    c_reg: f64,
    qp_tol: f64,
    dim: usize,
    warm_alphas: Option<&[f64]>,
) -> Result<QpSolution, LearnError> {
    let m = constraints.len();
    let budget = c_reg / n_anchors as f64;
    if m == 0 {
        return Ok(QpSolution {
            b: DMatrix::zeros(dim, dim),
            slacks: vec![0.0; n_anchors],
            alphas: Vec::new(),
            primal_objective: 0.0,
            dual_objective: 0.0,
        });
    }

    let mut gram = DMatrix::zeros(m, m);
    for c in 0..m {
        for d in c..m {
            let v = constraints[c].gram_with(&constraints[d]);
            gram[(c, d)] = v;
            gram[(d, c)] = v;
        }
    }
    let inv_loss: Vec<f64> = constraints.iter().map(|c| 1.0 / c.loss).collect();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_anchors];
    for (c, constraint) in constraints.iter().enumerate() {
        groups[constraint.anchor_index].push(c);
    }

    // Gershgorin upper bound on the Gram spectral radius fixes the step size.
    let lipschitz = (0..m)
        .map(|r| (0..m).map(|c| gram[(r, c)].abs()).sum::<f64>())
        .fold(0.0f64, f64::max);

    let mut alpha = DVector::zeros(m);
    if let Some(warm) = warm_alphas {
        for (dst, &src) in alpha.iter_mut().zip(warm.iter()) {
            *dst = src;
        }
    }
    let project = |v: &mut DVector<f64>| {
        for g in &groups {
            if !g.is_empty() {
                project_anchor_block(v.as_mut_slice(), g, &inv_loss, budget);
            }
        }
    };
    project(&mut alpha);

    let evaluate = |alpha: &DVector<f64>| -> (f64, f64, Vec<f64>) {
        let margins = &gram * alpha;
        let quad = alpha.dot(&margins);
        let xi = slacks_from_margins(margins.as_slice(), constraints, n_anchors);
        let primal = 0.5 * quad + budget * xi.iter().sum::<f64>();
        let dual = alpha.sum() - 0.5 * quad;
        (primal, dual, xi)
    };

    if lipschitz == 0.0 {
        // All psi vanish; B = 0 regardless of alpha.
        let (primal, dual, xi) = evaluate(&alpha);
        return Ok(QpSolution {
            b: DMatrix::zeros(dim, dim),
            slacks: xi,
            alphas: vec![0.0; m],
            primal_objective: primal,
            dual_objective: dual,
        });
    }

    let step = 1.0 / lipschitz;
    let max_steps = 400_000;
    let mut momentum = alpha.clone();
    let mut t_acc = 1.0f64;
    let mut prev_dual = f64::NEG_INFINITY;
    let mut done = false;
    let mut steps = 0;
    while steps < max_steps {
        for _ in 0..25 {
            steps += 1;
            let grad = &gram * &momentum - DVector::from_element(m, 1.0);
            let mut next = &momentum - grad * step;
            project(&mut next);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_acc * t_acc).sqrt());
            let mut carry = &next + (&next - &alpha) * ((t_acc - 1.0) / t_next);
            project(&mut carry);
            alpha = next;
            momentum = carry;
            t_acc = t_next;
        }
        let (primal, dual, _) = evaluate(&alpha);
        if primal - dual <= qp_tol * primal.abs().max(1.0) {
            done = true;
            break;
        }
        if dual < prev_dual {
            // Momentum overshot; restart acceleration from the current point.
            momentum = alpha.clone();
            t_acc = 1.0;
        }
        prev_dual = dual;
    }
    if !done {
        return Err(LearnError::QpNumericalFailure {
            tol: qp_tol,
            iters: max_steps,
        });
    }

    let (primal, dual, xi) = evaluate(&alpha);
    let mut b = DMatrix::zeros(dim, dim);
    for (c, constraint) in constraints.iter().enumerate() {
        let a = alpha[c];
        if a != 0.0 {
            b += (&constraint.w_far * constraint.w_far.transpose()
                - &constraint.w_near * constraint.w_near.transpose())
                * a;
        }
    }
    let sym = (&b + b.transpose()) * 0.5;
    Ok(QpSolution {
        b: sym,
        slacks: xi,
        alphas: alpha.as_slice().to_vec(),
        primal_objective: primal,
        dual_objective: dual,
    })
}

/// Nearest (Frobenius) positive semidefinite matrix: eigendecompose, clamp
/// negative eigenvalues to zero, reconstruct.
pub fn psd_project(m: &DMatrix<f64>) -> Result<DMatrix<f64>, LearnError> {
    assert_eq!(m.nrows(), m.ncols(), "projection input must be square");
    let scale = m.amax().max(1.0);
    for r in 0..m.nrows() {
        for c in (r + 1)..m.ncols() {
            if (m[(r, c)] - m[(c, r)]).abs() > 1e-9 * scale {
                return Err(SignatureError::NotSymmetric.into());
            }
        }
    }
    let sym = (m + m.transpose()) * 0.5;
    let spec = SpectralDecomposition::compute(&sym, 1e-9)
        .map_err(LearnError::Graph)?;
    let n = m.nrows();
    let mut scaled = spec.eigenvectors().clone();
    for k in 0..n {
        let clamped = spec.eigenvalues()[k].max(0.0);
        scaled.column_mut(k).scale_mut(clamped);
    }
    let rebuilt = &scaled * spec.eigenvectors().transpose();
    Ok((&rebuilt + rebuilt.transpose()) * 0.5)
}

/// Column-generation driver. Scans all constraints per anchor, adds the most
/// violated one, solves the restricted QP, projects onto the PSD cone, and
/// recomputes slacks against the projected matrix; stops when a scan finds no
/// violation above cg_tol.
pub fn learn_proximity(
    spec_g: &SpectralDecomposition,
    spec_h: &SpectralDecomposition,
    anchors: &AnchorSet,
    config: &LearnConfig,
) -> Result<LearnResult, LearnError> {
    let problem = LearnProblem::assemble(spec_g, spec_h, anchors, config)?;
    let dim = problem.dim();
    let n_anchors = problem.anchor_count();

    let mut b = if config.warm_start_block {
        ProximityMatrix::block_identity(dim / 2).matrix().clone()
    } else {
        DMatrix::zeros(dim, dim)
    };
    let mut xi = vec![0.0; n_anchors];
    let mut working: Vec<MarginConstraint> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut qp_objectives = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for round in 0..config.max_cg_iters {
        let mut added = false;
        for m in 0..n_anchors {
            if let Some(c) = problem.most_violated(&b, xi[m], m, config.cg_tol, &working) {
                working.push(c);
                alphas.push(0.0);
                added = true;
            }
        }
        if !added {
            converged = true;
            break;
        }
        iterations = round + 1;

        let solution = solve_restricted_qp(
            &working,
            n_anchors,
            config.c_reg,
            config.qp_tol,
            dim,
            Some(&alphas),
        )?;
        qp_objectives.push(solution.primal_objective);
        alphas = solution.alphas.clone();

        b = psd_project(&solution.b)?;
        let margins: Vec<f64> = working.iter().map(|c| c.margin(&b)).collect();
        xi = slacks_from_margins(&margins, &working, n_anchors);
    }

    Ok(LearnResult {
        proximity: ProximityMatrix::new(b)?,
        slacks: xi,
        active_constraints: working,
        converged,
        iterations,
        qp_objectives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightedGraph;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn path2_kernel(t: f64) -> KernelMatrix {
        let g = WeightedGraph::new(2, [(0, 1, 1.0)]).unwrap();
        SpectralDecomposition::of_graph(&g)
            .unwrap()
            .heat_kernel(t)
            .unwrap()
    }

    fn random_connected(n: usize, rho: f64, rng: &mut ChaCha8Rng) -> WeightedGraph {
        loop {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < rho {
                        edges.push((i, j, rng.random::<f64>().max(1e-6)));
                    }
                }
            }
            let g = WeightedGraph::new(n, edges).unwrap();
            if g.is_connected() {
                return g;
            }
        }
    }

    fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let v = DVector::from_fn(dim, |_, _| rng.random::<f64>());
        let n = v.norm();
        v / n
    }

    fn toy_constraint(
        anchor: usize,
        rng: &mut ChaCha8Rng,
        dim: usize,
        loss: f64,
    ) -> MarginConstraint {
        MarginConstraint::new(
            anchor,
            CompetitorSide::SecondGraph,
            0,
            random_unit(dim, rng),
            random_unit(dim, rng),
            loss,
        )
    }

    #[test]
    fn anchor_set_rejects_empty_and_duplicates() {
        assert!(matches!(
            AnchorSet::new([]),
            Err(LearnError::EmptyAnchorSet)
        ));
        assert!(matches!(
            AnchorSet::new([(0, 1), (0, 2)]),
            Err(LearnError::DuplicateAnchor { index: 0 })
        ));
        assert!(matches!(
            AnchorSet::new([(0, 1), (2, 1)]),
            Err(LearnError::DuplicateAnchor { index: 1 })
        ));
        let ok = AnchorSet::new([(0, 1), (2, 3)]).unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(ok.first_nodes(), vec![0, 2]);
        assert_eq!(ok.second_nodes(), vec![1, 3]);
    }

    #[test]
    fn rescale_loss_matches_closed_forms_on_unit_edge() {
        let kernel = path2_kernel(1.0);
        let heat = rescale_loss(&kernel, 0, 1, LossMode::HeatDistance).unwrap();
        // k(0,0)+k(1,1)-2k(0,1) = 2 exp(-2t) at t = 1.
        assert_abs_diff_eq!(heat, 2.0 * (-2.0f64).exp() + LOSS_EPSILON, epsilon = 1e-12);
        let raw = rescale_loss(&kernel, 0, 1, LossMode::RawKernel).unwrap();
        assert_abs_diff_eq!(
            raw,
            0.5 * (1.0 - (-2.0f64).exp()) + LOSS_EPSILON,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rescale_loss_validates_nodes() {
        let kernel = path2_kernel(0.5);
        assert!(matches!(
            rescale_loss(&kernel, 1, 1, LossMode::HeatDistance),
            Err(LearnError::SameNode { x: 1 })
        ));
        assert!(matches!(
            rescale_loss(&kernel, 2, 0, LossMode::HeatDistance),
            Err(LearnError::NodeOutOfRange { index: 2, n: 2 })
        ));
    }

    #[test]
    fn loss_is_always_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let g = random_connected(8, 0.5, &mut rng);
            let spec = SpectralDecomposition::of_graph(&g).unwrap();
            let kernel = spec.heat_kernel(0.7).unwrap();
            for x in 0..8 {
                for y in 0..8 {
                    if x == y {
                        continue;
                    }
                    for mode in [LossMode::HeatDistance, LossMode::RawKernel] {
                        let l = rescale_loss(&kernel, x, y, mode).unwrap();
                        assert!(l > 0.0, "loss {l} not positive");
                    }
                }
            }
        }
    }

    #[test]
    fn psd_projection_clamps_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = psd_project(&m).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(p[(1, 1)], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(p[(0, 1)], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn psd_projection_of_exchange_matrix_is_half_ones() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let p = psd_project(&m).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert_abs_diff_eq!(p[(r, c)], 0.5, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn psd_projection_fixes_psd_input_and_rejects_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let p = psd_project(&m).unwrap();
        assert!((p - &m).amax() < 1e-10);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(matches!(
            psd_project(&asym),
            Err(LearnError::Signature(SignatureError::NotSymmetric))
        ));
    }

    #[test]
    fn psd_projection_beats_random_psd_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let dim = 4;
            let raw = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let m = (&raw + raw.transpose()) * 0.5;
            let p = psd_project(&m).unwrap();
            let base = (&m - &p).norm();
            for _ in 0..10 {
                let nudge = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() * 0.4 - 0.2);
                let candidate = psd_project(&(&p + (&nudge + nudge.transpose()) * 0.5)).unwrap();
                let dist = (&m - &candidate).norm();
                assert!(
                    base <= dist + 1e-9,
                    "projection ({base}) farther than candidate ({dist})"
                );
            }
        }
    }

    #[test]
    fn empty_working_set_solves_to_zero() {
        let solution = solve_restricted_qp(&[], 2, 10.0, 1e-6, 4, None).unwrap();
        assert_eq!(solution.b, DMatrix::zeros(4, 4));
        assert_eq!(solution.slacks, vec![0.0, 0.0]);
        assert_eq!(solution.primal_objective, 0.0);
    }

    #[test]
    fn single_constraint_hard_margin_normalizes_psi() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = toy_constraint(0, &mut rng, 3, 1.0);
        let psi_norm_sq = c.gram_with(&c);
        let solution = solve_restricted_qp(
            std::slice::from_ref(&c),
            1,
            1e8,
            1e-9,
            3,
            None,
        )
        .unwrap();
        // Hard margin: alpha = 1 / ||psi||^2, margin exactly 1, slack 0.
        assert_abs_diff_eq!(solution.alphas[0], 1.0 / psi_norm_sq, epsilon = 1e-6);
        assert_abs_diff_eq!(c.margin(&solution.b), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(solution.slacks[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn dual_budget_holds_per_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..10 {
            let n_anchors = 1 + (trial % 3);
            let m = 2 + (trial % 4);
            let constraints: Vec<MarginConstraint> = (0..m)
                .map(|c| {
                    let loss = 0.5 + rng.random::<f64>();
                    toy_constraint(c % n_anchors, &mut rng, 4, loss)
                })
                .collect();
            let c_reg = 2.0;
            let solution =
                solve_restricted_qp(&constraints, n_anchors, c_reg, 1e-7, 4, None).unwrap();
            let budget = c_reg / n_anchors as f64;
            for anchor in 0..n_anchors {
                let spent: f64 = constraints
                    .iter()
                    .zip(&solution.alphas)
                    .filter(|(c, _)| c.anchor_index == anchor)
                    .map(|(c, &a)| a / c.loss)
                    .sum();
                assert!(
                    spent <= budget + 1e-7,
                    "anchor {anchor} spends {spent} of budget {budget}"
                );
            }
            assert!(
                solution.primal_objective - solution.dual_objective
                    <= 1e-7 * solution.primal_objective.abs().max(1.0),
                "gap not certified"
            );
        }
    }

    #[test]
    fn loss_scaling_leaves_hard_margin_solution_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let constraints: Vec<MarginConstraint> = (0..4)
            .map(|c| {
                let loss = 0.5 + rng.random::<f64>();
                toy_constraint(c % 2, &mut rng, 3, loss)
            })
            .collect();
        let scaled: Vec<MarginConstraint> = constraints
            .iter()
            .map(|c| {
                let mut c2 = c.clone();
                c2.loss *= 17.0;
                c2
            })
            .collect();
        let a = solve_restricted_qp(&constraints, 2, 1e9, 1e-8, 3, None).unwrap();
        let b = solve_restricted_qp(&scaled, 2, 1e9, 1e-8, 3, None).unwrap();
        assert!(
            (&a.b - &b.b).amax() < 1e-5,
            "hard-margin solution moved by {}",
            (&a.b - &b.b).amax()
        );
    }

    /// Independent reference solver: enumerate candidate active sets of the
    /// primal KKT conditions and keep the best verified stationary point.
    fn qp_kkt_oracle(
        constraints: &[MarginConstraint],
        n_anchors: usize,
        c_reg: f64,
        dim: usize,
    ) -> f64 {
        let d2 = dim * dim;
        let nv = d2 + n_anchors;
        let m = constraints.len();
        let rows = m + n_anchors;
        let budget = c_reg / n_anchors as f64;

        // Constraint matrix A z >= rhs over z = (vec B, xi).
        let mut a = DMatrix::zeros(rows, nv);
        let mut rhs = DVector::zeros(rows);
        for (r, c) in constraints.iter().enumerate() {
            for k in 0..d2 {
                a[(r, k)] = c.psi[k];
            }
            a[(r, d2 + c.anchor_index)] = 1.0 / c.loss;
            rhs[r] = 1.0;
        }
        for mm in 0..n_anchors {
            a[(m + mm, d2 + mm)] = 1.0;
        }

        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << rows) {
            let active: Vec<usize> = (0..rows).filter(|r| mask & (1 << r) != 0).collect();
            let na = active.len();
            let size = nv + na;
            let mut kkt = DMatrix::zeros(size, size);
            let mut rhs_kkt = DVector::zeros(size);
            for k in 0..d2 {
                kkt[(k, k)] = 1.0;
            }
            for (s, &r) in active.iter().enumerate() {
                for v in 0..nv {
                    kkt[(nv + s, v)] = a[(r, v)];
                    kkt[(v, nv + s)] = -a[(r, v)];
                }
                rhs_kkt[nv + s] = rhs[r];
            }
            for mm in 0..n_anchors {
                rhs_kkt[d2 + mm] = -budget;
            }
            let svd = kkt.clone().svd(true, true);
            let Ok(z) = svd.solve(&rhs_kkt, 1e-10) else {
                continue;
            };
            if (kkt * &z - &rhs_kkt).amax() > 1e-7 {
                continue;
            }
            let lambda_ok = (0..na).all(|s| z[nv + s] >= -1e-8);
            if !lambda_ok {
                continue;
            }
            let point = z.rows(0, nv).clone_owned();
            let feasible = (0..rows).all(|r| {
                let lhs: f64 = (0..nv).map(|v| a[(r, v)] * point[v]).sum();
                lhs >= rhs[r] - 1e-8
            });
            if !feasible {
                continue;
            }
            let norm_sq: f64 = (0..d2).map(|k| point[k] * point[k]).sum();
            let slack_sum: f64 = (0..n_anchors).map(|mm| point[d2 + mm]).sum();
            let objective = 0.5 * norm_sq + budget * slack_sum;
            if objective < best {
                best = objective;
            }
        }
        best
    }

    #[test]
    fn restricted_qp_matches_kkt_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..8 {
            let n_anchors = 1 + trial % 2;
            let m = 1 + trial % 4;
            let dim = 2;
            let constraints: Vec<MarginConstraint> = (0..m)
                .map(|c| {
                    let loss = 0.5 + rng.random::<f64>();
                    toy_constraint(c % n_anchors, &mut rng, dim, loss)
                })
                .collect();
            let c_reg = 10.0;
            let solution =
                solve_restricted_qp(&constraints, n_anchors, c_reg, 1e-8, dim, None).unwrap();
            let reference = qp_kkt_oracle(&constraints, n_anchors, c_reg, dim);
            assert!(
                (solution.primal_objective - reference).abs() <= 1e-5,
                "trial {trial}: solver {} vs oracle {}",
                solution.primal_objective,
                reference
            );
        }
    }

    fn identical_pair_specs(
        n: usize,
        seed: u64,
    ) -> (SpectralDecomposition, SpectralDecomposition) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_connected(n, 0.7, &mut rng);
        let a = SpectralDecomposition::of_graph(&g).unwrap();
        let b = SpectralDecomposition::of_graph(&g).unwrap();
        (a, b)
    }

    #[test]
    fn zero_rounds_returns_zero_matrix_unconverged() {
        let (sg, sh) = identical_pair_specs(6, 13);
        let anchors = AnchorSet::new([(0, 0), (3, 3)]).unwrap();
        let config = LearnConfig {
            max_cg_iters: 0,
            ..LearnConfig::default()
        };
        let result = learn_proximity(&sg, &sh, &anchors, &config).unwrap();
        assert!(!result.converged);
        assert_eq!(result.iterations, 0);
        assert_eq!(result.proximity.matrix().amax(), 0.0);
        assert!(result.active_constraints.is_empty());
    }

    #[test]
    fn separable_instance_converges_with_no_remaining_violation() {
        for seed in [17, 19, 23] {
            let (sg, sh) = identical_pair_specs(7, seed);
            let anchors = AnchorSet::new([(0, 0), (4, 4)]).unwrap();
            let config = LearnConfig::default();
            let result = learn_proximity(&sg, &sh, &anchors, &config).unwrap();
            assert!(result.converged, "seed {seed} did not converge");

            // Exhaustive check over every constraint, both sides.
            let problem = LearnProblem::assemble(&sg, &sh, &anchors, &config).unwrap();
            let b = result.proximity.matrix();
            let tol = config.cg_tol + config.qp_tol;
            for (m, &(i, a)) in anchors.pairs().iter().enumerate() {
                let near = problem.pair(i, a);
                let near_q = (near.transpose() * b * &near)[(0, 0)];
                for bb in 0..sh.len() {
                    if bb == a {
                        continue;
                    }
                    let far = problem.pair(i, bb);
                    let far_q = (far.transpose() * b * &far)[(0, 0)];
                    let violation =
                        1.0 - result.slacks[m] / problem.losses_second[m][bb] - (far_q - near_q);
                    assert!(violation <= tol, "seed {seed}: residual violation {violation}");
                }
                for j in 0..sg.len() {
                    if j == i {
                        continue;
                    }
                    let far = problem.pair(j, a);
                    let far_q = (far.transpose() * b * &far)[(0, 0)];
                    let violation =
                        1.0 - result.slacks[m] / problem.losses_first[m][j] - (far_q - near_q);
                    assert!(violation <= tol, "seed {seed}: residual violation {violation}");
                }
            }

            // PSD within the advertised tolerance.
            let min_eig = result.proximity.matrix().symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-8, "seed {seed}: min eigenvalue {min_eig}");
        }
    }

    #[test]
    fn qp_objectives_are_nondecreasing_across_rounds() {
        let (sg, sh) = identical_pair_specs(8, 29);
        let anchors = AnchorSet::new([(1, 1), (5, 5)]).unwrap();
        let config = LearnConfig::default();
        let result = learn_proximity(&sg, &sh, &anchors, &config).unwrap();
        assert!(result.qp_objectives.len() >= 2, "expected multiple rounds");
        for w in result.qp_objectives.windows(2) {
            let slack = 2.0 * config.qp_tol * w[0].abs().max(1.0);
            assert!(
                w[1] >= w[0] - slack,
                "objective decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn learning_is_deterministic() {
        let (sg, sh) = identical_pair_specs(7, 31);
        let anchors = AnchorSet::new([(0, 0), (2, 2)]).unwrap();
        let config = LearnConfig::default();
        let a = learn_proximity(&sg, &sh, &anchors, &config).unwrap();
        let b = learn_proximity(&sg, &sh, &anchors, &config).unwrap();
        assert_eq!(a.proximity.matrix(), b.proximity.matrix());
        assert_eq!(a.slacks, b.slacks);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn learned_proximity_separates_anchor_from_competitors() {
        let (sg, sh) = identical_pair_specs(8, 37);
        let anchors = AnchorSet::new([(0, 0), (5, 5)]).unwrap();
        let config = LearnConfig::default();
        let result = learn_proximity(&sg, &sh, &anchors, &config).unwrap();
        assert!(result.converged);
        let problem = LearnProblem::assemble(&sg, &sh, &anchors, &config).unwrap();
        let b = result.proximity.matrix();
        for (m, &(i, a)) in anchors.pairs().iter().enumerate() {
            if result.slacks[m] > 0.5 {
                continue;
            }
            let near = problem.pair(i, a);
            let near_q = (near.transpose() * b * &near)[(0, 0)];
            for bb in 0..sh.len() {
                if bb == a {
                    continue;
                }
                let far = problem.pair(i, bb);
                let far_q = (far.transpose() * b * &far)[(0, 0)];
                assert!(
                    far_q > near_q,
                    "competitor {bb} not separated: far {far_q} vs near {near_q}"
                );
            }
        }
    }

    #[test]
    fn anchor_validation_covers_out_of_range_pairs() {
        let (sg, sh) = identical_pair_specs(5, 41);
        let anchors = AnchorSet::new([(0, 9)]).unwrap();
        let err = learn_proximity(&sg, &sh, &anchors, &LearnConfig::default()).unwrap_err();
        assert!(matches!(err, LearnError::AnchorOutOfRange { .. }));
    }
}
