//! Matching of weighted graphs guided by a small set of known node
//! correspondences (anchors).
//!
//! The pipeline has three stages. [`graph`] builds Laplacians and heat
//! kernels from weighted graphs. [`signatures`] turns spectra into node
//! descriptors and distances, including a proximity learned from anchors by
//! the max-margin solver in [`learn`]. [`matcher`] assembles pairwise
//! compatibilities from those distances and extracts a one-to-one assignment
//! with a reweighted random-walk solver. [`bench`] generates synthetic
//! matching problems and sweeps accuracy across noise, outlier, density, and
//! anchor-count axes; [`io`] covers the file formats used by the CLI.

pub mod bench;
pub mod graph;
pub mod io;
pub mod learn;
pub mod matcher;
pub mod signatures;

pub use bench::{
    accuracy, generate_pair, points_to_graph, run_sweep, select_anchors,
    synthetic_point_sequence, BenchError, GroundTruth, ResultRecord, RunStatus, SweepAxis,
    SweepSpec, SyntheticSpec,
};
pub use graph::{GraphError, KernelMatrix, SpectralDecomposition, WeightedGraph};
pub use io::{IoError, PointFrame, PointSequence};
pub use learn::{
    learn_proximity, AnchorSet, LearnConfig, LearnError, LearnResult, LossMode,
};
pub use matcher::{
    build_compatibility, match_graphs, Assignment, CompatibilityMatrix, MatchConfig,
    MatchError, MatchOutcome, SolverKind, SolverParams, Variant,
};
pub use signatures::{NodeFeatures, ProximityMatrix, SignatureError};



