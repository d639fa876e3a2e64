//! JSON documents emitted by the CLI. Every document carries
//! `"schema_version": 1`; floats are written in shortest round-trip form so
//! parsing a document back yields bit-identical values.

use fspda_core::{Kernel, MonteCarloReport, OracleCheckReport, StopReason};
use serde::{Deserialize, Serialize};

use crate::scenario::Scenario;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub input: InputSummary,
    pub selection: SelectionSummary,
    pub model: ModelSummary,
    pub inference: InferenceSummary,
    pub effects: Vec<EffectRow>,
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub treated: String,
    pub treatment_at: String,
    pub excluded: Vec<String>,
    pub n_controls: usize,
    pub n_pre: usize,
    pub n_post: usize,
    pub intercept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub steps: Vec<StepSummary>,
    pub stop_reason: StopReason,
    pub requested_r_max: usize,
    pub effective_r_max: usize,
    pub bic_constant: f64,
    /// Modified BIC for paths of length 1, 2, ...
    pub bic_objective: Vec<Option<f64>>,
    pub r_hat: usize,
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub label: String,
    pub r_squared: f64,
    pub sigma2_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub intercept: Option<f64>,
    pub units: Vec<UnitCoefficient>,
    pub r_squared: f64,
    pub sigma2_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitCoefficient {
    pub label: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSummary {
    pub ate: f64,
    pub lrv: f64,
    pub lag: usize,
    pub kernel: Kernel,
    pub z_stat: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub reject_05: bool,
}

/// One post-treatment period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub period: String,
    pub actual: f64,
    pub counterfactual: f64,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Smallest eigenvalue of `(1/T1)·Y'Y` over the selected controls.
    pub gram_min_eigenvalue: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool_version: String,
    pub generated_at_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Meta {
    pub fn now() -> Self {
        let generated_at_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            generated_at_unix,
            wall_time_seconds: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDocument {
    pub schema_version: u32,
    pub scenario: Scenario,
    /// One report per treatment process, in scenario order.
    pub reports: Vec<MonteCarloReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDocument {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub report: OracleCheckReport,
    pub gap_summary: GapSummary,
    pub min_frequency: f64,
    /// `report.frequency ≥ min_frequency`.
    pub holds: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mean: f64,
}

impl GapSummary {
    pub fn from_gaps(gaps: &[f64]) -> Self {
        if gaps.is_empty() {
            return Self {
                min: f64::NAN,
                median: f64::NAN,
                max: f64::NAN,
                mean: f64::NAN,
            };
        }
        let mut sorted = gaps.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            min: sorted[0],
            median,
            max: sorted[n - 1],
            mean: sorted.iter().sum::<f64>() / n as f64,
        }
    }
}
