//! Machine-readable reports. Every document carries [`SCHEMA_VERSION`].

use crate::error::{Error, Result};
use crate::moduli::{tangent_report, GradientTree, TransversalityReport};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub schema_version: u32,
    pub command: String,
    pub data: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &str, data: T) -> Self {
        Report { schema_version: SCHEMA_VERSION, command: command.into(), data }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorBody {
    pub module: String,
    pub message: String,
}

/// Structured record of a failed command.
#[derive(Clone, Debug, Serialize)]
pub struct ErrorRecord {
    pub schema_version: u32,
    pub command: String,
    pub error: ErrorBody,
}

impl ErrorRecord {
    pub fn new(command: &str, module: &str, message: String) -> Self {
        ErrorRecord {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            error: ErrorBody { module: module.into(), message },
        }
    }

    pub fn from_error(command: &str, e: &Error) -> Self {
        Self::new(command, e.module(), e.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("records serialize") + "\n"
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolutionSummary {
    pub vertex_positions: Vec<Vec<f64>>,
    pub lengths: Vec<f64>,
    pub residual_norm: f64,
    pub matching_error: f64,
    pub unstable_defect: f64,
    pub transversality: TransversalityReport,
}

impl SolutionSummary {
    pub fn of(g: &GradientTree) -> Result<Self> {
        let (matching_error, unstable_defect) = g.invariant_errors()?;
        Ok(SolutionSummary {
            vertex_positions: g.vertex_positions.clone(),
            lengths: g.lengths.clone(),
            residual_norm: g.residual_norm,
            matching_error,
            unstable_defect,
            transversality: tangent_report(g)?,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub name: String,
    pub tree: String,
    pub floer_mode: bool,
    pub external_points: Vec<Vec<f64>>,
    pub external_indices: Vec<usize>,
    pub expected_dimension: isize,
    pub solutions: Vec<SolutionSummary>,
}
