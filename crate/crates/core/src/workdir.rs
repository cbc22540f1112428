//! On-disk artifact formats shared by the command line and the HTTP API.
//!
//! A work directory holds the conventional file names below; every writer is
//! atomic (temporary file plus rename) and every format has a matching reader.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::design_space::{read_designs_csv, DesignParams, DesignRecord, Mode, ParameterBounds};
use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::kinematics::Trajectory;
use crate::matrix::FeatureMatrix;
use crate::metrics::HullReport;
use crate::util;

pub const BOUNDS_FILE: &str = "bounds.json";
pub const DATA_FILE: &str = "data.csv";
pub const SCHEMA_FILE: &str = "schema.json";
pub const MODEL_FILE: &str = "model.json";
pub const FIT_FILE: &str = "fit.json";
pub const GENERATED_FILE: &str = "gen.csv";
pub const EMBEDDING_FILE: &str = "embedding.csv";
pub const EMBEDDING_SIDECAR_FILE: &str = "embedding.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const HULLS_FILE: &str = "hulls.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Column holding the decoder's repair distance in generated-design files.
pub const REPAIR_COLUMN: &str = "repair_distance";

/// A directory of pipeline artifacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workdir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Path of an artifact that must already exist.
    pub fn require(&self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(p))
        }
    }

    /// Bounds stored in the work directory, or the defaults when absent.
    pub fn bounds(&self) -> Result<ParameterBounds> {
        let p = self.path(BOUNDS_FILE);
        if p.is_file() {
            ParameterBounds::load(&p)
        } else {
            Ok(ParameterBounds::default())
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    util::write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = util::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// One row of an embedding file: the source row it embeds and its coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub row_id: usize,
    pub dim1: f64,
    pub dim2: f64,
    pub mode_label: Mode,
}

pub fn write_embedding_csv(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["row_id", "dim1", "dim2", "mode_label"])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
    util::write_atomic(path, &bytes)
}

pub fn read_embedding_csv(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let text = util::read_to_string(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<EmbeddingRow> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if rows.iter().any(|r| !(r.dim1.is_finite() && r.dim2.is_finite())) {
        return Err(Error::Data(format!("{}: non-finite coordinates", path.display())));
    }
    Ok(rows)
}

/// Coordinates of embedding rows as an `n x 2` matrix.
pub fn embedding_coords(rows: &[EmbeddingRow]) -> FeatureMatrix {
    let data = rows.iter().flat_map(|r| [r.dim1, r.dim2]).collect();
    FeatureMatrix::from_row_major(rows.len(), 2, data).expect("two columns per row")
}

/// Configuration and diagnostics echoed next to an embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub config: EmbeddingConfig,
    pub kl_divergence: f64,
    pub kl_trace: Vec<(usize, f64)>,
    pub calibration_warnings: usize,
    /// Rows in the source dataset.
    pub source_rows: usize,
    /// Rows embedded (a seeded subsample when smaller than `source_rows`).
    pub embedded_rows: usize,
    pub data_sha256: String,
}

/// Generated designs with their decoder repair distance.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFile {
    pub rows: Vec<DesignRecord>,
    pub repair_distance: Vec<f64>,
}

pub fn write_generated_csv(path: &Path, file: &GeneratedFile) -> Result<()> {
    let bytes = crate::design_space::designs_to_csv(
        &file.rows,
        Some((REPAIR_COLUMN, &file.repair_distance)),
    )?;
    util::write_atomic(path, &bytes)
}

pub fn read_generated_csv(path: &Path) -> Result<GeneratedFile> {
    let rows = read_designs_csv(path)?;
    let text = util::read_to_string(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let col = r
        .headers()?
        .iter()
        .position(|h| h == REPAIR_COLUMN)
        .ok_or_else(|| Error::Data(format!("{}: missing column `{REPAIR_COLUMN}`", path.display())))?;
    let repair_distance = r
        .records()
        .map(|rec| {
            let rec = rec?;
            rec.get(col)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("{}: bad `{REPAIR_COLUMN}` value", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedFile {
        rows,
        repair_distance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub pressure: f64,
    pub point: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub fn trajectory_rows(trajectories: &[Trajectory]) -> Vec<TrajectoryRow> {
    trajectories
        .iter()
        .flat_map(|t| {
            t.points.iter().enumerate().map(move |(i, p)| TrajectoryRow {
                pressure: t.pressure,
                point: i,
                x: p[0],
                y: p[1],
                z: p[2],
            })
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
    util::write_atomic(path, &bytes)
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = util::read_to_string(path)?;
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Trajectory polylines as `pressure, point, x, y, z` rows.
pub fn write_trajectory_csv(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    write_rows(path, &trajectory_rows(trajectories), &["pressure", "point", "x", "y", "z"])
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    read_rows(path)
}

/// One vertex of a hull polygon in a hull CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullVertexRow {
    pub set: String,
    pub vertex: usize,
    pub x: f64,
    pub y: f64,
}

/// Hull polygons as `set, vertex, x, y` rows in counter-clockwise order.
pub fn write_hull_csv(path: &Path, hulls: &[(&str, &HullReport)]) -> Result<()> {
    let rows: Vec<HullVertexRow> = hulls
        .iter()
        .flat_map(|(name, h)| {
            h.vertices.iter().enumerate().map(move |(i, v)| HullVertexRow {
                set: name.to_string(),
                vertex: i,
                x: v[0],
                y: v[1],
            })
        })
        .collect();
    write_rows(path, &rows, &["set", "vertex", "x", "y"])
}

pub fn read_hull_csv(path: &Path) -> Result<Vec<HullVertexRow>> {
    read_rows(path)
}

/// Resolves a design reference: `reference:bending|twisting|mixed` for the
/// built-in reference designs, or `FILE.csv:INDEX` for a row of a design file
/// (relative paths resolve against `base`).
pub fn resolve_design_ref(reference: &str, base: &Path) -> Result<DesignParams> {
    let (head, tail) = reference
        .rsplit_once(':')
        .ok_or_else(|| Error::Config(format!("design reference `{reference}` must look like FILE.csv:INDEX or reference:MODE")))?;
    if head == "reference" {
        let mode = Mode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(tail))
            .ok_or_else(|| Error::Config(format!("unknown reference design `{tail}`")))?;
        return Ok(DesignParams::reference(mode));
    }
    let index: usize = tail
        .parse()
        .map_err(|_| Error::Config(format!("row index `{tail}` is not a non-negative integer")))?;
    let path = base.join(head);
    if !path.is_file() {
        return Err(Error::MissingArtifact(path));
    }
    let rows = read_designs_csv(&path)?;
    rows.get(index)
        .map(|r| r.params)
        .ok_or_else(|| Error::Data(format!("{} has {} rows; index {index} out of range", path.display(), rows.len())))
}
