//! JSON form of a problem triple.
//!
//! ```json
//! { "schema": "bdflow.triple/1", "a": [[2.0]], "b": [0.5], "c": 1.0,
//!   "h": { "kind": "zero" } }
//! ```
//!
//! `h.kind` is `zero`, `affine` (`s0`, `linear`: one matrix per coordinate
//! of (x, z)) or `saturated` (`s0`, `s1`, `w`). Matrices are row-major
//! nested arrays of size n = dim x + 1 for h and dim x for A.

use std::path::Path;

use bdflow_core::{Perturbation, ProblemTriple};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const TRIPLE_SCHEMA: &str = "bdflow.triple/1";

#[derive(Debug, thiserror::Error)]
pub enum TripleFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema {0:?}, expected {TRIPLE_SCHEMA:?}")]
    Schema(String),
    #[error("matrix rows have different lengths")]
    Ragged,
    #[error(transparent)]
    Model(#[from] bdflow_core::model::ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HSpec {
    Zero,
    Affine { s0: Vec<Vec<f64>>, linear: Vec<Vec<Vec<f64>>> },
    Saturated { s0: Vec<Vec<f64>>, s1: Vec<Vec<f64>>, w: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleSpec {
    pub schema: String,
    #[serde(default)]
    pub name: Option<String>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "zero_h")]
    pub h: HSpec,
}

fn one() -> f64 {
    1.0
}

fn zero_h() -> HSpec {
    HSpec::Zero
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, TripleFileError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(TripleFileError::Ragged);
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl TripleSpec {
    pub fn from_json(text: &str) -> Result<Self, TripleFileError> {
        let spec: TripleSpec = serde_json::from_str(text)?;
        if spec.schema != TRIPLE_SCHEMA {
            return Err(TripleFileError::Schema(spec.schema));
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, TripleFileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| TripleFileError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn build(&self) -> Result<ProblemTriple, TripleFileError> {
        let h = match &self.h {
            HSpec::Zero => Perturbation::Zero,
            HSpec::Affine { s0, linear } => Perturbation::Affine {
                s0: matrix(s0)?,
                linear: linear.iter().map(|m| matrix(m)).collect::<Result<_, _>>()?,
            },
            HSpec::Saturated { s0, s1, w } => Perturbation::Saturated { s0: matrix(s0)?, s1: matrix(s1)?, w: matrix(w)? },
        };
        Ok(ProblemTriple::new(matrix(&self.a)?, DVector::from_vec(self.b.clone()), self.c, h)?)
    }

    /// Inverse of [`build`](Self::build) for the closed h families.
    pub fn from_triple(t: &ProblemTriple, name: Option<String>) -> Option<Self> {
        let h = match t.h() {
            Perturbation::Zero => HSpec::Zero,
            Perturbation::Affine { s0, linear } => HSpec::Affine { s0: rows(s0), linear: linear.iter().map(rows).collect() },
            Perturbation::Saturated { s0, s1, w } => HSpec::Saturated { s0: rows(s0), s1: rows(s1), w: rows(w) },
            Perturbation::Custom(_) => return None,
        };
        Some(TripleSpec {
            schema: TRIPLE_SCHEMA.to_string(),
            name,
            a: rows(t.a()),
            b: t.b().iter().copied().collect(),
            c: t.c_scale(),
            h,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_file() {
        let s = TripleSpec::from_json(r#"{"schema":"bdflow.triple/1","a":[[2.0]],"b":[0.5]}"#).unwrap();
        let t = s.build().unwrap();
        assert_eq!(t.n(), 2);
        assert_eq!(t.slow_rate(), 0.75);
        assert!(t.h().is_zero());
    }

    #[test]
    fn rejects_other_schema_and_ragged() {
        assert!(matches!(
            TripleSpec::from_json(r#"{"schema":"x","a":[[2.0]],"b":[0.5]}"#),
            Err(TripleFileError::Schema(_))
        ));
        let s = TripleSpec::from_json(r#"{"schema":"bdflow.triple/1","a":[[2.0, 1.0],[1.0]],"b":[0.5, 0.1]}"#).unwrap();
        assert!(matches!(s.build(), Err(TripleFileError::Ragged)));
    }

    #[test]
    fn round_trip_affine() {
        let text = r#"{"schema":"bdflow.triple/1","a":[[2.0]],"b":[0.5],
            "h":{"kind":"affine","s0":[[0.1,0],[0,0.1]],"linear":[[[0,0],[0,0]],[[0.05,0],[0,0]]]}}"#;
        let s = TripleSpec::from_json(text).unwrap();
        let t = s.build().unwrap();
        let back = TripleSpec::from_triple(&t, None).unwrap();
        assert_eq!(back, s);
    }
}
