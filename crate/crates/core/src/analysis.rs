//! Curvature tables, their differences, and 2-D embedding export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::evaluation::csv_field;
use crate::geometry::exp0;
use crate::model::{check_ids, curvature, softplus};
use crate::params::{CurvatureSpec, ModelParams};

/// Learned curvature over forward relations: one value per relation, or a
/// relation × timestamp table (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureTable {
    pub rows: usize,
    /// 1 for relation-only curvature.
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CurvatureTable {
    pub fn get(&self, p: usize, t: usize) -> f64 {
        self.values[p * self.cols + if self.cols == 1 { 0 } else { t }]
    }

    pub fn is_vector(&self) -> bool {
        self.cols == 1
    }

    /// CSV with a header of timestamp labels (or `curvature` for a vector).
    pub fn to_csv(
        &self,
        row_label: impl Fn(usize) -> String,
        col_label: impl Fn(usize) -> String,
    ) -> String {
        let mut out = String::from("relation");
        if self.is_vector() {
            out.push_str(",curvature");
        } else {
            for t in 0..self.cols {
                let _ = write!(out, ",{}", csv_field(&col_label(t)));
            }
        }
        out.push('\n');
        for p in 0..self.rows {
            out.push_str(&csv_field(&row_label(p)));
            for v in &self.values[p * self.cols..(p + 1) * self.cols] {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Curvature `c_{p,t}` for every forward relation. Inverse-relation rows are
/// omitted. The object-dependent variant has no such table.
pub fn curvature_matrix(params: &ModelParams, spec: CurvatureSpec) -> Result<CurvatureTable> {
    params.validate(spec)?;
    if spec.is_object_dependent() {
        return Err(Error::Config(format!(
            "curvature of `{spec}` depends on the entity pair and has no relation × time table"
        )));
    }
    let rows = params.sizes.relations;
    if !spec.uses_time_curvature() {
        let values = params.rel_curv[..rows]
            .iter()
            .map(|&m| softplus(m))
            .collect();
        return Ok(CurvatureTable {
            rows,
            cols: 1,
            values,
        });
    }
    let tau = params.time_curv.as_deref().expect("validated");
    let cols = params.sizes.timestamps;
    let mut values = Vec::with_capacity(rows * cols);
    for &mu in &params.rel_curv[..rows] {
        values.extend(tau.iter().map(|&t| softplus(mu * t)));
    }
    Ok(CurvatureTable { rows, cols, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureDelta {
    /// `|a − b|`, broadcast to the larger shape.
    pub delta: CurvatureTable,
    /// Share of entries with `|Δ| < threshold`.
    pub fraction_below: f64,
    pub threshold: f64,
}

/// Elementwise `|a − b|`. A relation vector broadcasts across the timestamps of a table
/// with the same number of relations.
pub fn curvature_delta(
    a: &CurvatureTable,
    b: &CurvatureTable,
    threshold: f64,
) -> Result<CurvatureDelta> {
    if a.rows != b.rows || (a.cols != b.cols && !a.is_vector() && !b.is_vector()) {
        return Err(Error::InvalidArgument(format!(
            "curvature shapes differ: {}×{} vs {}×{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "threshold must be non-negative, got {threshold}"
        )));
    }
    let (rows, cols) = (a.rows, a.cols.max(b.cols));
    let mut values = Vec::with_capacity(rows * cols);
    for p in 0..rows {
        for t in 0..cols {
            values.push((a.get(p, t) - b.get(p, t)).abs());
        }
    }
    let below = values.iter().filter(|d| **d < threshold).count();
    let fraction_below = if values.is_empty() {
        0.0
    } else {
        below as f64 / values.len() as f64
    };
    Ok(CurvatureDelta {
        delta: CurvatureTable { rows, cols, values },
        fraction_below,
        threshold,
    })
}

/// Writes `entity,x,y` rows: each entity mapped onto the ball of curvature
/// `c(p, t)`. Returns the number of rows.
pub fn export_embeddings_2d(
    params: &ModelParams,
    spec: CurvatureSpec,
    vocab: &Vocabulary,
    p: usize,
    t: usize,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let path = path.as_ref();
    let csv = embeddings_2d_csv(params, spec, vocab, p, t)?;
    fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
    Ok(params.sizes.entities)
}

/// CSV text written by [`export_embeddings_2d`].
pub fn embeddings_2d_csv(
    params: &ModelParams,
    spec: CurvatureSpec,
    vocab: &Vocabulary,
    p: usize,
    t: usize,
) -> Result<String> {
    if params.dim != 2 {
        return Err(Error::InvalidArgument(format!(
            "2-D export needs a model trained with --dim 2, got dim = {}",
            params.dim
        )));
    }
    if spec.is_object_dependent() {
        return Err(Error::Config(format!(
            "curvature of `{spec}` is not defined by (p, t) alone"
        )));
    }
    if vocab.entities.len() != params.sizes.entities {
        return Err(Error::InvalidArgument(
            "vocabulary does not match the model".into(),
        ));
    }
    check_ids(params, 0, p, 0, t)?;
    let c = curvature(params, spec, p, t, 0, 0)?;
    let mut out = String::from("entity,x,y\n");
    for (e, name) in vocab.entities.names().iter().enumerate() {
        let ball = exp0(params.entity(e), c)?;
        let xy = ball.coords();
        let _ = writeln!(out, "{},{},{}", csv_field(name), xy[0], xy[1]);
    }
    Ok(out)
}
