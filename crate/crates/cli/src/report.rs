//! Check records, campaign reports and the run manifest.

use serde::Serialize;
use serde_json::Value;

/// Version of every JSON document written by the runner.
pub fn report_schema_version() -> &'static str {
    "1"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Accumulates the checks of one campaign.
#[derive(Debug, Default, Clone)]
pub struct Checks(pub Vec<CheckResult>);

impl Checks {
    pub fn push(&mut self, check: &str, status: Status, value: Option<f64>, threshold: Option<f64>, reason: Option<String>) {
        self.0.push(CheckResult { check: check.to_string(), status, value, threshold, reason });
    }

    /// Pass iff `value ≤ threshold`.
    pub fn at_most(&mut self, check: &str, value: f64, threshold: f64) {
        let status = if value <= threshold { Status::Pass } else { Status::Fail };
        self.push(check, status, Some(value), Some(threshold), None);
    }

    /// Pass iff `value ≥ threshold`.
    pub fn at_least(&mut self, check: &str, value: f64, threshold: f64) {
        let status = if value >= threshold { Status::Pass } else { Status::Fail };
        self.push(check, status, Some(value), Some(threshold), None);
    }

    pub fn flag(&mut self, check: &str, ok: bool, reason: Option<String>) {
        self.push(check, if ok { Status::Pass } else { Status::Fail }, None, None, reason);
    }

    pub fn skip(&mut self, check: &str, reason: impl Into<String>) {
        self.push(check, Status::Skipped, None, None, Some(reason.into()));
    }

    pub fn inconclusive(&mut self, check: &str, reason: impl Into<String>) {
        self.push(check, Status::Inconclusive, None, None, Some(reason.into()));
    }

    pub fn fail(&mut self, check: &str, reason: impl Into<String>) {
        self.push(check, Status::Fail, None, None, Some(reason.into()));
    }
}

/// Data file written next to the JSON report.
#[derive(Debug, Clone, PartialEq)]
pub struct DataFile {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignReport {
    pub schema_version: &'static str,
    pub campaign: String,
    pub problem: String,
    pub notes: Vec<String>,
    pub checks: Vec<CheckResult>,
    pub data: Value,
    #[serde(skip)]
    pub files: Vec<DataFile>,
}

impl CampaignReport {
    pub fn status(&self) -> Status {
        overall(self.checks.iter().map(|c| c.status))
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.check == name)
    }
}

/// Fail beats inconclusive beats pass; skipped checks do not count.
pub fn overall(statuses: impl IntoIterator<Item = Status>) -> Status {
    let mut out = Status::Pass;
    for s in statuses {
        match s {
            Status::Fail => return Status::Fail,
            Status::Inconclusive => out = Status::Inconclusive,
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub campaign: String,
    pub check: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: &'static str,
    pub problem: String,
    pub reports: Vec<String>,
    pub data_files: Vec<String>,
    pub checks: Vec<ManifestEntry>,
    pub status: Status,
    pub exit_code: i32,
}

pub fn exit_code(status: Status) -> i32 {
    match status {
        Status::Pass | Status::Skipped => 0,
        Status::Fail => 1,
        Status::Inconclusive => 2,
    }
}

impl Manifest {
    pub fn build(problem: &str, reports: &[CampaignReport]) -> Self {
        let checks: Vec<ManifestEntry> = reports
            .iter()
            .flat_map(|r| {
                r.checks.iter().map(|c| ManifestEntry {
                    campaign: r.campaign.clone(),
                    check: c.check.clone(),
                    status: c.status,
                    reason: c.reason.clone(),
                })
            })
            .collect();
        let status = overall(checks.iter().map(|c| c.status));
        Manifest {
            schema_version: report_schema_version(),
            problem: problem.to_string(),
            reports: reports.iter().map(|r| format!("{}.json", r.campaign)).collect(),
            data_files: reports.iter().flat_map(|r| r.files.iter().map(|f| f.name.clone())).collect(),
            checks,
            status,
            exit_code: exit_code(status),
        }
    }
}
