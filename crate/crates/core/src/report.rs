//! Verification reports shared by every check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    /// The hypotheses of the statement could not be confirmed; not a failure.
    HypothesisFailed,
}

/// One checked inequality or identity: passes iff `slack = rhs − lhs ≥ −tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub tolerance: f64,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basepoint: Option<usize>,
    /// Extra numbers worth keeping next to the verdict (constants, hypotheses).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

pub type InequalityReport = Report;
pub type VerificationReport = Report;

impl Report {
    /// Check `lhs ≤ rhs` up to `tolerance`.
    pub fn upper(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let slack = rhs - lhs;
        let status = if slack >= -tolerance {
            Status::Pass
        } else {
            Status::Fail
        };
        Self {
            name: name.into(),
            lhs,
            rhs,
            slack,
            tolerance,
            status,
            s: None,
            basepoint: None,
            details: BTreeMap::new(),
        }
    }

    /// Check `|lhs − rhs| ≤ tolerance`; the slack is `−|lhs − rhs|`.
    pub fn equal(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let gap = (lhs - rhs).abs();
        let mut r = Self::upper(name, lhs, rhs, tolerance);
        r.slack = -gap;
        r.status = if gap <= tolerance && gap.is_finite() {
            Status::Pass
        } else {
            Status::Fail
        };
        r
    }

    /// A check whose hypotheses were not met; carries the would-be numbers.
    pub fn hypothesis_failed(mut self, reason_key: &str, value: f64) -> Self {
        self.status = Status::HypothesisFailed;
        self.details.insert(reason_key.to_string(), value);
        self
    }

    pub fn at(mut self, s: f64) -> Self {
        self.s = Some(s);
        self
    }

    pub fn based_at(mut self, node: usize) -> Self {
        self.basepoint = Some(node);
        self
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Reports as CSV with columns `check,s,LHS,RHS,slack,tolerance,status`.
pub fn to_csv(reports: &[Report]) -> String {
    let mut out = String::from("check,s,LHS,RHS,slack,tolerance,status\n");
    for r in reports {
        let status = match r.status {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::HypothesisFailed => "hypothesis-failed",
        };
        out.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e},{}\n",
            r.name,
            r.s.map(|s| format!("{s:e}")).unwrap_or_default(),
            r.lhs,
            r.rhs,
            r.slack,
            r.tolerance,
            status
        ));
    }
    out
}

pub fn all_passed(reports: &[Report]) -> bool {
    reports.iter().all(Report::passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_follows_slack() {
        assert_eq!(Report::upper("a", 1.0, 1.0, 0.0).status, Status::Pass);
        assert_eq!(Report::upper("a", 1.1, 1.0, 0.05).status, Status::Fail);
        assert_eq!(Report::upper("a", 1.01, 1.0, 0.05).status, Status::Pass);
        assert_eq!(Report::equal("b", 1.0, 1.2, 0.1).status, Status::Fail);
        assert!(Report::upper("a", 2.0, 1.0, 0.0).hypothesis_failed("c", 3.0).passed());
    }

    #[test]
    fn csv_has_one_row_per_report() {
        let rs = vec![Report::upper("x", 0.0, 1.0, 0.0).at(-1.0), Report::equal("y", 1.0, 1.0, 0.0)];
        let csv = to_csv(&rs);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("x,-1e0,"));
    }
}
