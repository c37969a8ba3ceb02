//! Run reports and their JSON and CSV forms.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::EstimandReport;
use crate::estimators::PositivityReport;
use crate::scenario::{EstimandRequest, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
    Both,
}

impl OutputFormat {
    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceBlock {
    pub engine: String,
    pub engine_version: String,
    /// Seed the run used, after any override.
    pub seed: u64,
    pub scenario_digest: String,
    pub spec_digest: String,
    pub enumeration_eligible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorEntry {
    fn from(e: &Error) -> Self {
        ErrorEntry {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub index: usize,
    pub request: EstimandRequest,
    /// Seed owned by this request.
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EstimandReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positivity: Option<PositivityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario: String,
    pub provenance: ProvenanceBlock,
    pub results: Vec<RunResult>,
}

impl RunReport {
    pub fn has_errors(&self) -> bool {
        self.results.iter().any(|r| r.status == RunStatus::Error)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: RunReport = serde_json::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported report schema_version {}",
                report.schema_version
            )));
        }
        Ok(report)
    }
}

const CSV_HEADER: [&str; 11] = [
    "scenario",
    "seed",
    "index",
    "request",
    "estimand",
    "method",
    "status",
    "value",
    "mc_se",
    "denom_arm1",
    "denom_arm0",
];

/// One row per request; positivity requests have no value.
pub fn write_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &report.results {
        let num = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let rep = r.report.as_ref();
        let status = match r.status {
            RunStatus::Ok => "ok".to_string(),
            RunStatus::Error => r
                .error
                .as_ref()
                .map_or("error".into(), |e| format!("error:{}", e.kind)),
        };
        w.write_record([
            report.scenario.clone(),
            report.provenance.seed.to_string(),
            r.index.to_string(),
            r.request.label().to_string(),
            rep.map(|x| x.estimand.as_str().to_string())
                .unwrap_or_default(),
            rep.map(|x| {
                serde_json::to_value(x.method)
                    .expect("method")
                    .as_str()
                    .unwrap_or("")
                    .to_string()
            })
            .unwrap_or_default(),
            status,
            num(rep.map(|x| x.value)),
            num(rep.map(|x| x.mc_se)),
            num(rep.map(|x| x.arm1.denominator)),
            num(rep.map(|x| x.arm0.denominator)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write `<dir>/<scenario>.report.json` and/or `<dir>/<scenario>.summary.csv`.
pub fn emit_report(report: &RunReport, format: OutputFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if format.json() {
        let path = dir.join(format!("{}.report.json", report.scenario));
        std::fs::write(&path, report.to_json())?;
        written.push(path);
    }
    if format.csv() {
        let path = dir.join(format!("{}.summary.csv", report.scenario));
        let file = std::fs::File::create(&path)?;
        write_csv(report, std::io::BufWriter::new(file))?;
        written.push(path);
    }
    Ok(written)
}
