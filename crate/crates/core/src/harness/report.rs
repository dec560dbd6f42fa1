//! Run reports and output files.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::stats::TestReport;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    #[serde(flatten)]
    pub report: TestReport,
    /// Advisory checks are reported but do not affect the summary.
    pub mandatory: bool,
}

impl Check {
    pub fn mandatory(report: TestReport) -> Self {
        Self { report, mandatory: true }
    }

    pub fn advisory(report: TestReport) -> Self {
        Self { report, mandatory: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub replicas_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub pass: bool,
    /// Experiment-specific numbers (step statistics, estimates).
    pub summary: Value,
    pub timing: Timing,
    pub checksum: String,
}

impl RunReport {
    pub fn new(config: ExperimentConfig, checks: Vec<Check>, summary: Value, timing: Timing) -> Self {
        let pass = checks.iter().all(|c| !c.mandatory || c.report.pass);
        let mut r = Self { config, checks, pass, summary, timing, checksum: String::new() };
        r.checksum = r.compute_checksum();
        r
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.report.name == name)
    }

    /// SHA-256 of the sorted-key JSON without the timing and checksum fields.
    pub fn compute_checksum(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Value::Object(map) = &mut v {
            map.remove("timing");
            map.remove("checksum");
        }
        let digest = Sha256::digest(serde_json::to_string(&v).expect("value serializes").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Pretty JSON with keys in sorted order.
    pub fn to_json(&self) -> String {
        // `serde_json::Value` keeps object keys in a sorted map.
        let v = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&v).expect("value serializes") + "\n"
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json())?;
        Ok(())
    }
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}
