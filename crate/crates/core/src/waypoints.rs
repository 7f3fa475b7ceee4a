//! The user x tower waypoints matrix: per-user fractions of within-trip
//! events observed at each tower.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::geo::TowerRegistry;
use crate::ingest::UserDay;
use crate::sparse::CsrMatrix;
use crate::trips::EventClass;

/// Maximum tolerated deviation of a row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointsMatrix {
    rows: Vec<String>,
    cols: Vec<String>,
    matrix: CsrMatrix,
}

impl Deref for WaypointsMatrix {
    type Target = CsrMatrix;
    fn deref(&self) -> &CsrMatrix {
        &self.matrix
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    rows: Vec<String>,
    cols: Vec<String>,
}

impl WaypointsMatrix {
    /// Wraps a matrix after checking the row-stochastic invariants.
    pub fn new(rows: Vec<String>, cols: Vec<String>, matrix: CsrMatrix) -> Result<Self> {
        if rows.len() != matrix.nrows() || cols.len() != matrix.ncols() {
            return input("index lengths do not match matrix shape");
        }
        if matrix.triplets().any(|(_, _, v)| !(v > 0.0 && v <= 1.0 + ROW_SUM_TOL)) {
            return input("waypoint entries must lie in (0, 1]");
        }
        let w = WaypointsMatrix { rows, cols, matrix };
        let dev = w.row_sum_deviation();
        if dev > ROW_SUM_TOL {
            return input(format!("rows must sum to one (max deviation {dev:e})"));
        }
        Ok(w)
    }

    /// Row-normalizes non-negative counts; all-zero rows are dropped.
    pub fn from_counts(rows: Vec<String>, cols: Vec<String>, counts: &[(usize, usize, f64)]) -> Result<Self> {
        let raw = CsrMatrix::from_triplets(rows.len(), cols.len(), counts)?;
        if !raw.is_nonnegative() {
            return input("counts must be non-negative");
        }
        let mut kept_rows = Vec::new();
        let mut triplets = Vec::with_capacity(raw.nnz());
        for (i, user) in rows.into_iter().enumerate() {
            let (c, v) = raw.row(i);
            let total: f64 = v.iter().sum();
            if total <= 0.0 {
                continue;
            }
            let r = kept_rows.len();
            triplets.extend(c.iter().zip(v).map(|(&j, &x)| (r, j, x / total)));
            kept_rows.push(user);
        }
        let matrix = CsrMatrix::from_triplets(kept_rows.len(), cols.len(), &triplets)?;
        WaypointsMatrix::new(kept_rows, cols, matrix)
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[String] {
        &self.cols
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn row_sum_deviation(&self) -> f64 {
        (0..self.matrix.nrows())
            .map(|i| (self.matrix.row(i).1.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `row col value` lines (0-based) in canonical order.
    pub fn write_triplets<W: Write>(&self, mut writer: W) -> Result<()> {
        for (i, j, v) in self.matrix.triplets() {
            writeln!(writer, "{i} {j} {v:?}")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn write_sidecar<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, &Sidecar { rows: self.rows.clone(), cols: self.cols.clone() })?;
        Ok(())
    }

    pub fn read<R1: Read, R2: Read>(triplets: R1, sidecar: R2) -> Result<Self> {
        let side: Sidecar = serde_json::from_reader(sidecar)?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(triplets).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("triplet line {}: `{line}`", n + 1));
            let mut parts = line.split_whitespace();
            let r: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let c: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let v: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if parts.next().is_some() {
                return Err(bad());
            }
            entries.push((r, c, v));
        }
        let matrix = CsrMatrix::from_triplets(side.rows.len(), side.cols.len(), &entries)
            .map_err(|e| Error::Format(e.to_string()))?;
        WaypointsMatrix::new(side.rows, side.cols, matrix).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Aggregates within-trip events per user into row-normalized tower
/// fractions. Columns are the usable towers of the registry in registry
/// order; rows are users with at least one within-trip event, sorted by id.
pub fn build_waypoints<'a>(
    days: impl IntoIterator<Item = (&'a UserDay, &'a [EventClass])>,
    registry: &TowerRegistry,
) -> Result<WaypointsMatrix> {
    let cols: Vec<String> = registry.usable().map(|t| t.id.clone()).collect();
    let col_of: BTreeMap<&str, usize> = cols.iter().enumerate().map(|(j, id)| (id.as_str(), j)).collect();
    let mut counts: BTreeMap<&str, BTreeMap<usize, u64>> = BTreeMap::new();
    for (day, classes) in days {
        if classes.len() != day.events.len() {
            return input(format!("class count mismatch for {} on {}", day.user_id, day.date));
        }
        for (e, c) in day.events.iter().zip(classes) {
            if *c != EventClass::WithinTrip {
                continue;
            }
            let j = *col_of
                .get(e.tower_id.as_str())
                .ok_or_else(|| Error::Input(format!("within-trip event at non-column tower {}", e.tower_id)))?;
            *counts.entry(day.user_id.as_str()).or_default().entry(j).or_default() += 1;
        }
    }
    let rows: Vec<String> = counts.keys().map(|u| (*u).to_owned()).collect();
    let triplets: Vec<(usize, usize, f64)> = counts
        .values()
        .enumerate()
        .flat_map(|(i, row)| row.iter().map(move |(&j, &n)| (i, j, n as f64)))
        .collect();
    WaypointsMatrix::from_counts(rows, cols, &triplets)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixStats {
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    pub density: f64,
    pub row_sum_max_abs_deviation: f64,
}

pub fn matrix_stats(w: &WaypointsMatrix) -> MatrixStats {
    let cells = w.nrows() * w.ncols();
    MatrixStats {
        rows: w.nrows(),
        cols: w.ncols(),
        nnz: w.nnz(),
        density: if cells == 0 { 0.0 } else { w.nnz() as f64 / cells as f64 },
        row_sum_max_abs_deviation: w.row_sum_deviation(),
    }
}
