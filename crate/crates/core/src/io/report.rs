//! JSON result report of one registration run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, ParseErrorKind, Result};
use crate::geometry::RigidTransform;
use crate::metrics::EvalResult;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timings {
    pub coarse: f64,
    pub fine: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub c1: usize,
    pub k_opt: usize,
    pub c2: usize,
    pub c3: usize,
    pub planes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub re_deg: f64,
    pub te_cm: f64,
    pub success: bool,
}

impl From<&EvalResult> for EvalRecord {
    fn from(e: &EvalResult) -> Self {
        Self {
            re_deg: e.re_deg,
            te_cm: e.te_cm(),
            success: e.success,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultReport {
    pub transform_coarse: [f64; 16],
    pub transform_fine: [f64; 16],
    pub timings_ms: Timings,
    pub counts: Counts,
    pub eval: Option<EvalRecord>,
    pub status: Vec<String>,
}

impl ResultReport {
    /// Tolerance used when turning the stored matrices back into poses.
    pub const RIGIDITY_TOL: f64 = 1e-6;

    pub fn coarse(&self) -> Result<RigidTransform> {
        RigidTransform::from_row_major(&self.transform_coarse, Self::RIGIDITY_TOL)
    }

    pub fn fine(&self) -> Result<RigidTransform> {
        RigidTransform::from_row_major(&self.transform_fine, Self::RIGIDITY_TOL)
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(path: &Path, text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            location: Location::Line(e.line()),
            kind: ParseErrorKind::Json(e.to_string()),
        })?;
        report.coarse()?;
        report.fine()?;
        Ok(report)
    }
}

pub fn write_report(path: impl AsRef<Path>, report: &ResultReport) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ResultReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ResultReport::from_json(path, &text)
}
