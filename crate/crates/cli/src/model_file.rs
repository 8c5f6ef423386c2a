//! TOML model files.
//!
//! A file holds a grid (`horizon`, `steps`) and exactly one of an `[lq]` or a
//! `[factor]` section with time-constant coefficients. Matrices are written
//! as arrays of rows. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use asymrisk::linalg::dvec;
use asymrisk::{FactorMarketModelF64, GammaMatrix, LqModelF64, ScalarPath, TimeGridF64};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: Option<String>,
    pub horizon: f64,
    pub steps: usize,
    pub lq: Option<LqSection>,
    pub factor: Option<FactorSection>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LqSection {
    pub a: Rows,
    pub b: Rows,
    pub sigma: Rows,
    pub m: Rows,
    pub n: Rows,
    pub h: Rows,
    pub gamma: Rows,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSection {
    /// Mean-return intercept per asset.
    pub a: Vec<f64>,
    /// Factor drift intercept.
    pub b: Vec<f64>,
    pub loading: Rows,
    pub mean_reversion: Rows,
    pub lambda: Rows,
    pub sigma: Rows,
    pub rate: f64,
    pub gamma: Rows,
    pub x0: Vec<f64>,
}

/// A parsed model file together with its source text and digest.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub label: String,
    pub source: String,
    pub sha256: String,
    pub file: ModelFile,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl LoadedModel {
    pub fn parse(label: &str, source: &str) -> Result<Self, CliError> {
        let file: ModelFile = toml::from_str(source).map_err(|e| CliError::ModelFile {
            path: label.to_string(),
            message: e.to_string(),
        })?;
        let bad = |message: String| CliError::ModelFile { path: label.to_string(), message };
        match (&file.lq, &file.factor) {
            (Some(_), Some(_)) => return Err(bad("both [lq] and [factor] sections present".into())),
            (None, None) => return Err(bad("missing [lq] or [factor] section".into())),
            _ => {}
        }
        Ok(Self {
            label: label.to_string(),
            sha256: sha256_hex(source.as_bytes()),
            source: source.to_string(),
            file,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let source = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&path.display().to_string(), &source)
    }

    fn err(&self, message: impl Into<String>) -> CliError {
        CliError::ModelFile { path: self.label.clone(), message: message.into() }
    }

    pub fn grid(&self, steps: Option<usize>, horizon: Option<f64>) -> Result<TimeGridF64, CliError> {
        TimeGridF64::new(horizon.unwrap_or(self.file.horizon), steps.unwrap_or(self.file.steps))
            .map_err(|e| self.err(format!("grid: {e}")))
    }

    fn matrix(&self, field: &str, rows: &Rows) -> Result<DMatrix<f64>, CliError> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || ncols == 0 {
            return Err(self.err(format!("field `{field}`: empty matrix")));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(self.err(format!(
                    "field `{field}`: row {} has {} entries, expected {ncols}",
                    r + 1,
                    row.len()
                )));
            }
        }
        Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
    }

    pub fn lq_model(&self, steps: Option<usize>, horizon: Option<f64>) -> Result<LqModelF64, CliError> {
        let s = self.file.lq.as_ref().ok_or_else(|| self.err("this command needs an [lq] section"))?;
        Ok(LqModelF64::constant(
            self.grid(steps, horizon)?,
            self.matrix("lq.a", &s.a)?,
            self.matrix("lq.b", &s.b)?,
            self.matrix("lq.sigma", &s.sigma)?,
            self.matrix("lq.m", &s.m)?,
            self.matrix("lq.n", &s.n)?,
            self.matrix("lq.h", &s.h)?,
            GammaMatrix::unchecked(self.matrix("lq.gamma", &s.gamma)?),
            dvec(&s.x0),
        ))
    }

    pub fn factor_model(&self, steps: Option<usize>, horizon: Option<f64>) -> Result<FactorMarketModelF64, CliError> {
        let s = self
            .file
            .factor
            .as_ref()
            .ok_or_else(|| self.err("this command needs a [factor] section"))?;
        let grid = self.grid(steps, horizon)?;
        Ok(FactorMarketModelF64 {
            a: dvec(&s.a),
            b: dvec(&s.b),
            loading: self.matrix("factor.loading", &s.loading)?,
            mean_reversion: self.matrix("factor.mean_reversion", &s.mean_reversion)?,
            lambda: self.matrix("factor.lambda", &s.lambda)?,
            sigma: self.matrix("factor.sigma", &s.sigma)?,
            rate: ScalarPath::constant(grid, s.rate),
            gamma: GammaMatrix::unchecked(self.matrix("factor.gamma", &s.gamma)?),
            x0: dvec(&s.x0),
            grid,
        })
    }
}

/// Models shipped with the tool; the acceptance suite runs on these.
pub mod bundled {
    pub const SCALAR_LQ: &str = include_str!("../models/scalar_lq.toml");
    pub const FLAT_MARKET: &str = include_str!("../models/flat_market.toml");
    pub const MIXED_MARKET: &str = include_str!("../models/mixed_market.toml");
    pub const ESCAPE_LQ: &str = include_str!("../models/escape_lq.toml");
}
