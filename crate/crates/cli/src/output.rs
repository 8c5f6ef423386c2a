//! Artifact files. Every JSON file carries a `provenance` block and every CSV
//! starts with a versioned comment line naming its schema, the seed, the grid
//! and the model digest. Nothing time- or host-dependent is written, so equal
//! inputs give byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use asymrisk::GridSummary;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;

pub const CSV_VERSION: &str = "v1";

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub grid: Option<GridSummary>,
    pub model: Option<ModelProvenance>,
    /// Fully resolved options, defaults included.
    pub config: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelProvenance {
    pub label: String,
    pub sha256: String,
    /// The model file verbatim, so every artifact can be regenerated from it.
    pub source: String,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config: Value) -> Self {
        Self {
            tool: "asymrisk",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            grid: None,
            model: None,
            config,
        }
    }

    fn csv_comment(&self, schema: &str) -> String {
        let grid = self
            .grid
            .map(|g| format!(" horizon={} steps={}", g.horizon, g.steps))
            .unwrap_or_default();
        let model = self.model.as_ref().map(|m| format!(" model_sha256={}", m.sha256)).unwrap_or_default();
        format!("# asymrisk-csv {CSV_VERSION} {schema} seed={}{grid}{model}\n", self.seed)
    }
}

/// Writes the artifacts of one run into a directory.
#[derive(Debug, Clone)]
pub struct ArtifactWriter {
    dir: PathBuf,
    pub provenance: Provenance,
}

impl ArtifactWriter {
    pub fn create(dir: &Path, provenance: Provenance) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), provenance })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_json(&self, name: &str, result: &impl Serialize) -> Result<PathBuf, CliError> {
        let doc = json!({ "provenance": &self.provenance, "result": result });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn write_csv<I, R>(&self, name: &str, schema: &str, header: &[String], rows: I) -> Result<PathBuf, CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let body = w.into_inner().map_err(|e| CliError::Config(format!("csv buffer: {e}")))?;
        let mut out = self.provenance.csv_comment(schema).into_bytes();
        out.extend_from_slice(&body);
        let path = self.dir.join(name);
        fs::write(&path, out).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Column names `prefix_i_j` for a row-major `rows × cols` matrix.
pub fn matrix_columns(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| format!("{prefix}_{}_{}", i + 1, j + 1)))
        .collect()
}

pub fn vector_columns(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{}", i + 1)).collect()
}

/// Row-major entries of a matrix.
pub fn matrix_entries(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

pub fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Shortest round-trip formatting.
pub fn num(x: f64) -> String {
    format!("{x}")
}
