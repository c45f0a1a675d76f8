//! Synthetic benchmark harness: random perturbed graph pairs, point-set
//! ingestion, accuracy metrics, and parameter sweeps across compatibility
//! variants.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{GraphError, WeightedGraph};
use crate::learn::{AnchorSet, LearnError};
use crate::matcher::{match_graphs, Assignment, MatchConfig, MatchError, Variant};

/// Smallest admissible edge weight after perturbation.
const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark spec: {0}")]
    InvalidSpec(&'static str),
    #[error("requested {count} anchors but only {n_in} inliers exist")]
    TooManyAnchors { count: usize, n_in: usize },
    #[error("points {i} and {j} coincide")]
    DuplicatePoints { i: usize, j: usize },
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

/// Parameters of one random matching instance: a pair of graphs sharing an
/// inlier subgraph, with per-graph outliers and Gaussian weight noise on the
/// shared edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_in: usize,
    pub n_out1: usize,
    pub n_out2: usize,
    /// Edge density in (0, 1].
    pub rho: f64,
    /// Std of the additive Gaussian noise on shared edge weights.
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.n_in < 2 {
            return Err(BenchError::InvalidSpec("need at least two inliers"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(BenchError::InvalidSpec("density must lie in (0, 1]"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(BenchError::InvalidSpec("noise std must be finite and >= 0"));
        }
        Ok(())
    }
}

/// True correspondence of a generated pair. Inliers map bijectively; outlier
/// nodes have no partner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    /// (node in first graph, node in second graph), one entry per inlier.
    pub inlier_map: Vec<(usize, usize)>,
    pub outliers_g: Vec<usize>,
    pub outliers_h: Vec<usize>,
}

/// Samples a matching instance: Bernoulli(rho) edges with Uniform[0,1]
/// weights on the shared inlier block, independent outlier edges per graph,
/// Gaussian-perturbed weights and a uniformly random node relabeling on the
/// second graph. Weights are clamped to a positive floor.
pub fn generate_pair(
    spec: &SyntheticSpec,
) -> Result<(WeightedGraph, WeightedGraph, GroundTruth), BenchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_in = spec.n_in;
    let n1 = n_in + spec.n_out1;
    let n2 = n_in + spec.n_out2;

    let mut shared = Vec::new();
    for i in 0..n_in {
        for j in (i + 1)..n_in {
            if rng.random::<f64>() < spec.rho {
                let w = rng.random::<f64>().max(WEIGHT_FLOOR);
                shared.push((i, j, w));
            }
        }
    }

    let mut edges_g = shared.clone();
    for i in 0..n1 {
        for j in (i + 1)..n1 {
            if j < n_in {
                continue;
            }
            if rng.random::<f64>() < spec.rho {
                edges_g.push((i, j, rng.random::<f64>().max(WEIGHT_FLOOR)));
            }
        }
    }

    let mut edges_h: Vec<(usize, usize, f64)> = shared
        .iter()
        .map(|&(i, j, w)| {
            let z: f64 = rng.sample(StandardNormal);
            (i, j, (w + spec.sigma * z).max(WEIGHT_FLOOR))
        })
        .collect();
    for i in 0..n2 {
        for j in (i + 1)..n2 {
            if j < n_in {
                continue;
            }
            if rng.random::<f64>() < spec.rho {
                edges_h.push((i, j, rng.random::<f64>().max(WEIGHT_FLOOR)));
            }
        }
    }

    let mut perm: Vec<usize> = (0..n2).collect();
    perm.shuffle(&mut rng);
    let permuted: Vec<(usize, usize, f64)> = edges_h
        .into_iter()
        .map(|(i, j, w)| (perm[i], perm[j], w))
        .collect();

    let g = WeightedGraph::new(n1, edges_g)?;
    let h = WeightedGraph::new(n2, permuted)?;
    let gt = GroundTruth {
        inlier_map: (0..n_in).map(|i| (i, perm[i])).collect(),
        outliers_g: (n_in..n1).collect(),
        outliers_h: perm[n_in..n2].to_vec(),
    };
    Ok((g, h, gt))
}

/// Uniform random sample of `count` inlier correspondences.
pub fn select_anchors(gt: &GroundTruth, count: usize, seed: u64) -> Result<AnchorSet, BenchError> {
    let n_in = gt.inlier_map.len();
    if count > n_in {
        return Err(BenchError::TooManyAnchors { count, n_in });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n_in).collect();
    idx.shuffle(&mut rng);
    let pairs = idx[..count].iter().map(|&i| gt.inlier_map[i]);
    Ok(AnchorSet::new(pairs)?)
}

/// Fraction of non-anchor inliers assigned to their true partner. Outliers
/// never count as correct. An instance with no non-anchor inliers scores 1.
pub fn accuracy(assign: &Assignment, gt: &GroundTruth, anchors: &AnchorSet) -> f64 {
    let scored: Vec<&(usize, usize)> = gt
        .inlier_map
        .iter()
        .filter(|&&(i, _)| !anchors.contains_first(i))
        .collect();
    if scored.is_empty() {
        return 1.0;
    }
    let correct = scored
        .iter()
        .filter(|&&&(i, a)| assign.target_of(i) == Some(a))
        .count();
    correct as f64 / scored.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    /// Noise std sweep at fixed density.
    Deformation,
    /// Per-graph outlier count sweep, noiseless.
    Outliers,
    /// Density sweep under heavy noise.
    Density,
    /// Anchor count sweep on point-sequence pairs.
    Anchors,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SweepAxis::Deformation => "deformation",
            SweepAxis::Outliers => "outliers",
            SweepAxis::Density => "density",
            SweepAxis::Anchors => "anchors",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "deformation" => Ok(SweepAxis::Deformation),
            "outliers" => Ok(SweepAxis::Outliers),
            "density" => Ok(SweepAxis::Density),
            "anchors" => Ok(SweepAxis::Anchors),
            _ => Err(BenchError::InvalidSpec(
                "axis must be deformation, outliers, density, or anchors",
            )),
        }
    }
}

/// Full description of one experiment sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    /// Axis values; integer-valued for outlier and anchor counts.
    pub values: Vec<f64>,
    pub trials: usize,
    pub variants: Vec<Variant>,
    /// Anchor count on non-anchor axes.
    pub anchor_count: usize,
    pub n_in: usize,
    pub n_out1: usize,
    pub n_out2: usize,
    /// Density on non-density axes.
    pub rho: f64,
    /// Noise std on non-deformation axes (the density axis overrides this
    /// with heavy noise, see `for_axis`).
    pub sigma: f64,
    /// Coordinate noise of generated point sequences (anchors axis).
    pub point_noise: f64,
    /// Total rotation of generated point sequences, radians (anchors axis).
    pub point_rotation: f64,
    pub base_seed: u64,
    pub config: MatchConfig,
}

impl SweepSpec {
    /// Default grid for an axis. Grids cover the usual presentation ranges;
    /// sigma is fixed at 0.5 for the density axis.
    pub fn for_axis(axis: SweepAxis) -> Self {
        let values = match axis {
            SweepAxis::Deformation => (0..=10).map(|i| i as f64 * 0.05).collect(),
            SweepAxis::Outliers => (0..=10).map(|i| i as f64).collect(),
            SweepAxis::Density => (3..=10).map(|i| i as f64 * 0.1).collect(),
            SweepAxis::Anchors => vec![2.0, 5.0, 10.0],
        };
        let variants = match axis {
            SweepAxis::Anchors => vec![Variant::HeatWithProximity],
            _ => Variant::ALL.to_vec(),
        };
        SweepSpec {
            axis,
            values,
            trials: 50,
            variants,
            anchor_count: 2,
            n_in: 20,
            n_out1: 0,
            n_out2: 0,
            rho: 0.5,
            sigma: match axis {
                SweepAxis::Density => 0.5,
                _ => 0.0,
            },
            point_noise: 0.02,
            point_rotation: 0.6,
            base_seed: 0,
            config: MatchConfig::default(),
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.trials == 0 {
            return Err(BenchError::InvalidSpec("need at least one trial"));
        }
        if self.values.is_empty() {
            return Err(BenchError::InvalidSpec("need at least one axis value"));
        }
        if self.variants.is_empty() {
            return Err(BenchError::InvalidSpec("need at least one variant"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Failed,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunStatus::Ok => "ok",
            RunStatus::Failed => "failed",
        })
    }
}

/// One sweep cell: a variant run on one generated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub variant: Variant,
    pub axis: SweepAxis,
    pub value: f64,
    pub trial: usize,
    pub accuracy: f64,
    pub time_ms: f64,
    pub seed: u64,
    pub status: RunStatus,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Instance seed for (value index, trial), shared across variants so every
/// variant sees the same data.
fn derive_seed(base: u64, value_idx: usize, trial: usize) -> u64 {
    splitmix(base ^ splitmix(value_idx as u64 ^ splitmix(trial as u64)))
}

struct Instance {
    g: WeightedGraph,
    h: WeightedGraph,
    gt: GroundTruth,
    anchors: AnchorSet,
}

fn graph_instance(
    spec: &SweepSpec,
    value: f64,
    seed: u64,
    anchor_count: usize,
) -> Result<Instance, BenchError> {
    let mut synth = SyntheticSpec {
        n_in: spec.n_in,
        n_out1: spec.n_out1,
        n_out2: spec.n_out2,
        rho: spec.rho,
        sigma: spec.sigma,
        seed,
    };
    match spec.axis {
        SweepAxis::Deformation => synth.sigma = value,
        SweepAxis::Outliers => {
            let count = value.round().max(0.0) as usize;
            synth.n_out1 = count;
            synth.n_out2 = count;
        }
        SweepAxis::Density => synth.rho = value,
        SweepAxis::Anchors => unreachable!("anchors axis uses point instances"),
    }
    let (g, h, gt) = generate_pair(&synth)?;
    let anchors = select_anchors(&gt, anchor_count, splitmix(seed))?;
    Ok(Instance { g, h, gt, anchors })
}

fn point_instance(spec: &SweepSpec, seed: u64, anchor_count: usize) -> Result<Instance, BenchError> {
    let frames = synthetic_point_sequence(
        spec.n_in,
        2,
        spec.point_rotation,
        spec.point_noise,
        seed,
    )?;
    let g = points_to_graph(&frames[0])?;
    let h0 = points_to_graph(&frames[1])?;

    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x517c_c1b7_2722_0a95));
    let mut perm: Vec<usize> = (0..spec.n_in).collect();
    perm.shuffle(&mut rng);
    let h = h0.permuted(&perm)?;
    let gt = GroundTruth {
        inlier_map: (0..spec.n_in).map(|i| (i, perm[i])).collect(),
        outliers_g: Vec::new(),
        outliers_h: Vec::new(),
    };
    let anchors = select_anchors(&gt, anchor_count, splitmix(seed))?;
    Ok(Instance { g, h, gt, anchors })
}

/// Runs the full sweep grid in parallel. Failed cells become records with
/// `Failed` status and zero accuracy rather than aborting the sweep. Records
/// come back sorted by (variant, value, trial) and are deterministic apart
/// from wall time.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<ResultRecord>, BenchError> {
    spec.validate()?;
    let cells: Vec<(usize, usize, usize)> = (0..spec.variants.len())
        .flat_map(|v| {
            (0..spec.values.len())
                .flat_map(move |i| (0..spec.trials).map(move |t| (v, i, t)))
        })
        .collect();

    // Indexed parallel collect preserves cell order, so records come back in
    // (variant, value, trial) nested order without a sort.
    let records: Vec<ResultRecord> = cells
        .par_iter()
        .map(|&(variant_idx, value_idx, trial)| {
            let variant = spec.variants[variant_idx];
            let value = spec.values[value_idx];
            let seed = derive_seed(spec.base_seed, value_idx, trial);
            let start = Instant::now();
            let anchor_count = match spec.axis {
                SweepAxis::Anchors => value.round().max(0.0) as usize,
                _ => spec.anchor_count,
            };
            let outcome = (|| -> Result<f64, BenchError> {
                let inst = match spec.axis {
                    SweepAxis::Anchors => point_instance(spec, seed, anchor_count)?,
                    _ => graph_instance(spec, value, seed, anchor_count)?,
                };
                let config = MatchConfig {
                    variant,
                    ..spec.config.clone()
                };
                let result = match_graphs(&inst.g, &inst.h, &inst.anchors, &config)?;
                Ok(accuracy(&result.assignment, &inst.gt, &inst.anchors))
            })();
            let time_ms = start.elapsed().as_secs_f64() * 1e3;
            let (accuracy, status) = match outcome {
                Ok(acc) => (acc, RunStatus::Ok),
                Err(_) => (0.0, RunStatus::Failed),
            };
            ResultRecord {
                variant,
                axis: spec.axis,
                value,
                trial,
                accuracy,
                time_ms,
                seed,
                status,
            }
        })
        .collect();

    Ok(records)
}

/// Complete graph on a 2D point set with Euclidean distances as weights.
pub fn points_to_graph(points: &[(f64, f64)]) -> Result<WeightedGraph, BenchError> {
    if points.len() < 2 {
        return Err(BenchError::InvalidSpec("need at least two points"));
    }
    let mut edges = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let dx = points[i].0 - points[j].0;
            let dy = points[i].1 - points[j].1;
            let d = (dx * dx + dy * dy).sqrt();
            if d == 0.0 {
                return Err(BenchError::DuplicatePoints { i, j });
            }
            edges.push((i, j, d));
        }
    }
    Ok(WeightedGraph::new(points.len(), edges)?)
}

/// Random base cloud in the unit square, rotated about its centroid and
/// translated a little more each frame, with additive coordinate noise.
/// Correspondence across frames is by point index.
pub fn synthetic_point_sequence(
    n_points: usize,
    n_frames: usize,
    rotation_range: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<Vec<(f64, f64)>>, BenchError> {
    if n_points < 3 {
        return Err(BenchError::InvalidSpec("need at least three points"));
    }
    if n_frames == 0 {
        return Err(BenchError::InvalidSpec("need at least one frame"));
    }
    if !(noise_std >= 0.0) || !rotation_range.is_finite() {
        return Err(BenchError::InvalidSpec(
            "noise std must be >= 0 and rotation finite",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<(f64, f64)> = (0..n_points)
        .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
        .collect();
    let cx = base.iter().map(|p| p.0).sum::<f64>() / n_points as f64;
    let cy = base.iter().map(|p| p.1).sum::<f64>() / n_points as f64;

    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let progress = if n_frames == 1 {
            0.0
        } else {
            f as f64 / (n_frames - 1) as f64
        };
        let angle = progress * rotation_range;
        let (sin, cos) = angle.sin_cos();
        let tx = progress * rotation_range * 0.25;
        let ty = progress * rotation_range * -0.1;
        let frame: Vec<(f64, f64)> = base
            .iter()
            .map(|&(x, y)| {
                let (dx, dy) = (x - cx, y - cy);
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                (
                    cx + cos * dx - sin * dy + tx + noise_std * nx,
                    cy + sin * dx + cos * dy + ty + noise_std * ny,
                )
            })
            .collect();
        frames.push(frame);
    }
    Ok(frames)
}
