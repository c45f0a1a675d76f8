//! File formats shared with the command line: JSON for graphs, anchors,
//! proximity matrices, and assignments; CSV for point sequences and sweep
//! results.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::ResultRecord;
use crate::graph::{GraphError, WeightedGraph};
use crate::learn::{AnchorSet, LearnError};
use crate::matcher::Assignment;
use crate::signatures::{ProximityMatrix, SignatureError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: parse error: {detail}")]
    Parse { path: String, detail: String },
    #[error("{path}: invalid graph: {source}")]
    Graph {
        path: String,
        source: GraphError,
    },
    #[error("{path}: invalid anchors: {source}")]
    Anchors {
        path: String,
        source: LearnError,
    },
    #[error("{path}: invalid proximity matrix: {source}")]
    Matrix {
        path: String,
        source: SignatureError,
    },
    #[error("{path}: frame {frame} is missing point {point}")]
    InconsistentPointSets { path: String, frame: u64, point: u64 },
}

fn read_file(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, detail: impl ToString) -> IoError {
    IoError::Parse {
        path: path.display().to_string(),
        detail: detail.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

/// Reads a graph from `{"n": ..., "edges": [[i, j, w], ...]}`.
pub fn parse_graph_json(path: impl AsRef<Path>) -> Result<WeightedGraph, IoError> {
    let path = path.as_ref();
    let raw: GraphJson =
        serde_json::from_str(&read_file(path)?).map_err(|e| parse_err(path, e))?;
    WeightedGraph::new(raw.n, raw.edges).map_err(|source| IoError::Graph {
        path: path.display().to_string(),
        source,
    })
}

pub fn graph_to_json(g: &WeightedGraph) -> String {
    let raw = GraphJson {
        n: g.node_count(),
        edges: g.edges().iter().map(|e| (e.i, e.j, e.weight)).collect(),
    };
    serde_json::to_string_pretty(&raw).expect("graph serialization cannot fail")
}

pub fn write_graph_json(path: impl AsRef<Path>, g: &WeightedGraph) -> Result<(), IoError> {
    write_file(path.as_ref(), &graph_to_json(g))
}

/// Reads anchors from an array of `[i, a]` pairs.
pub fn parse_anchors_json(path: impl AsRef<Path>) -> Result<AnchorSet, IoError> {
    let path = path.as_ref();
    let raw: Vec<(usize, usize)> =
        serde_json::from_str(&read_file(path)?).map_err(|e| parse_err(path, e))?;
    AnchorSet::new(raw).map_err(|source| IoError::Anchors {
        path: path.display().to_string(),
        source,
    })
}

pub fn anchors_to_json(anchors: &AnchorSet) -> String {
    serde_json::to_string_pretty(anchors.pairs()).expect("anchor serialization cannot fail")
}

pub fn write_anchors_json(path: impl AsRef<Path>, anchors: &AnchorSet) -> Result<(), IoError> {
    write_file(path.as_ref(), &anchors_to_json(anchors))
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    dim: usize,
    values: Vec<f64>,
}

/// Reads a proximity matrix from `{"dim": d, "values": [row-major d*d]}`.
pub fn parse_proximity_json(path: impl AsRef<Path>) -> Result<ProximityMatrix, IoError> {
    let path = path.as_ref();
    let raw: MatrixJson =
        serde_json::from_str(&read_file(path)?).map_err(|e| parse_err(path, e))?;
    if raw.values.len() != raw.dim * raw.dim {
        return Err(parse_err(
            path,
            format!(
                "expected {} values for dim {}, found {}",
                raw.dim * raw.dim,
                raw.dim,
                raw.values.len()
            ),
        ));
    }
    let b = DMatrix::from_row_slice(raw.dim, raw.dim, &raw.values);
    ProximityMatrix::new(b).map_err(|source| IoError::Matrix {
        path: path.display().to_string(),
        source,
    })
}

pub fn proximity_to_json(b: &ProximityMatrix) -> String {
    let m = b.matrix();
    let raw = MatrixJson {
        dim: b.dim(),
        values: (0..b.dim())
            .flat_map(|r| (0..b.dim()).map(move |c| m[(r, c)]))
            .collect(),
    };
    serde_json::to_string_pretty(&raw).expect("matrix serialization cannot fail")
}

pub fn write_proximity_json(path: impl AsRef<Path>, b: &ProximityMatrix) -> Result<(), IoError> {
    write_file(path.as_ref(), &proximity_to_json(b))
}

#[derive(Serialize, Deserialize)]
struct AssignmentJson {
    pairs: Vec<(usize, usize)>,
    objective: f64,
}

pub fn assignment_to_json(a: &Assignment) -> String {
    let raw = AssignmentJson {
        pairs: a.pairs.clone(),
        objective: a.objective,
    };
    serde_json::to_string_pretty(&raw).expect("assignment serialization cannot fail")
}

pub fn parse_assignment_json(path: impl AsRef<Path>) -> Result<Assignment, IoError> {
    let path = path.as_ref();
    let raw: AssignmentJson =
        serde_json::from_str(&read_file(path)?).map_err(|e| parse_err(path, e))?;
    Ok(Assignment {
        pairs: raw.pairs,
        objective: raw.objective,
    })
}

pub fn write_assignment_json(path: impl AsRef<Path>, a: &Assignment) -> Result<(), IoError> {
    write_file(path.as_ref(), &assignment_to_json(a))
}

/// One frame of a landmark sequence; `points[k]` belongs to `point_ids[k]`
/// of the owning [`PointSequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct PointFrame {
    pub id: u64,
    pub points: Vec<(f64, f64)>,
}

/// Landmark positions keyed by point id, consistent across frames, so
/// correspondence between any two frames is positional.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSequence {
    /// Sorted, identical for every frame.
    pub point_ids: Vec<u64>,
    /// Sorted by frame id.
    pub frames: Vec<PointFrame>,
}

impl PointSequence {
    pub fn frame(&self, id: u64) -> Option<&PointFrame> {
        self.frames.iter().find(|f| f.id == id)
    }
}

#[derive(Deserialize)]
struct PointRow {
    frame: u64,
    point: u64,
    x: f64,
    y: f64,
}

const POINTS_HEADER: [&str; 4] = ["frame", "point", "x", "y"];

/// Reads a `frame,point,x,y` CSV into per-frame point sets. Every frame must
/// carry the same point ids.
pub fn parse_points_csv(path: impl AsRef<Path>) -> Result<PointSequence, IoError> {
    let path = path.as_ref();
    let text = read_file(path)?;
    if text.trim().is_empty() {
        return Err(parse_err(path, "empty file"));
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(path, e))?;
    let fields: Vec<&str> = headers.iter().map(str::trim).collect();
    if fields != POINTS_HEADER {
        return Err(parse_err(
            path,
            format!("header must be `frame,point,x,y`, found `{}`", fields.join(",")),
        ));
    }

    let mut frames: Vec<(u64, Vec<(u64, f64, f64)>)> = Vec::new();
    for row in reader.deserialize::<PointRow>() {
        let row = row.map_err(|e| parse_err(path, e))?;
        let idx = match frames.iter().position(|(id, _)| *id == row.frame) {
            Some(i) => i,
            None => {
                frames.push((row.frame, Vec::new()));
                frames.len() - 1
            }
        };
        let frame = &mut frames[idx].1;
        if frame.iter().any(|&(p, ..)| p == row.point) {
            return Err(parse_err(
                path,
                format!("frame {} lists point {} twice", row.frame, row.point),
            ));
        }
        frame.push((row.point, row.x, row.y));
    }
    if frames.is_empty() {
        return Err(parse_err(path, "no data rows"));
    }

    frames.sort_by_key(|(id, _)| *id);
    for (_, rows) in &mut frames {
        rows.sort_by_key(|&(p, ..)| p);
    }

    let point_ids: Vec<u64> = frames
        .iter()
        .map(|(_, rows)| rows.iter().map(|&(p, ..)| p).collect::<Vec<_>>())
        .max_by_key(Vec::len)
        .expect("at least one frame")
        .clone();
    for (frame_id, rows) in &frames {
        for id in &point_ids {
            if !rows.iter().any(|&(p, ..)| p == *id) {
                return Err(IoError::InconsistentPointSets {
                    path: path.display().to_string(),
                    frame: *frame_id,
                    point: *id,
                });
            }
        }
    }

    Ok(PointSequence {
        point_ids,
        frames: frames
            .into_iter()
            .map(|(id, rows)| PointFrame {
                id,
                points: rows.into_iter().map(|(_, x, y)| (x, y)).collect(),
            })
            .collect(),
    })
}

pub fn write_points_csv(path: impl AsRef<Path>, seq: &PointSequence) -> Result<(), IoError> {
    let mut text = String::from("frame,point,x,y\n");
    for frame in &seq.frames {
        for (id, (x, y)) in seq.point_ids.iter().zip(&frame.points) {
            text.push_str(&format!("{},{},{},{}\n", frame.id, id, x, y));
        }
    }
    write_file(path.as_ref(), &text)
}

/// Writes sweep records as `variant,axis,value,trial,accuracy,time_ms,seed,status`.
pub fn write_results_csv<W: std::io::Write>(
    mut out: W,
    records: &[ResultRecord],
) -> std::io::Result<()> {
    writeln!(out, "variant,axis,value,trial,accuracy,time_ms,seed,status")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.variant, r.axis, r.value, r.trial, r.accuracy, r.time_ms, r.seed, r.status
        )?;
    }
    Ok(())
}

pub fn write_results_csv_path(
    path: impl AsRef<Path>,
    records: &[ResultRecord],
) -> Result<(), IoError> {
    let mut buf = Vec::new();
    write_results_csv(&mut buf, records).expect("writing to memory cannot fail");
    write_file(
        path.as_ref(),
        std::str::from_utf8(&buf).expect("csv output is utf-8"),
    )
}
