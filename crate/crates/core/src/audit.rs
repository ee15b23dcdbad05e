//! Pass/fail records produced by every auditor in the crate.
//!
//! The meaning of `margin` depends on the check: equality checks store the
//! measured discrepancy, inequality checks store the slack (`rhs - lhs`,
//! negative when violated).

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub check: String,
    pub params: Value,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, check: impl Into<String>, params: Value, margin: f64, pass: bool) {
        self.checks.push(AuditCheck {
            check: check.into(),
            params,
            margin,
            pass,
        });
    }

    pub fn extend(&mut self, other: AuditReport) {
        self.checks.extend(other.checks);
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn find(&self, check: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.check == check)
    }

    pub fn len(&self) -> usize {
        self.checks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checks.is_empty()
    }
}
