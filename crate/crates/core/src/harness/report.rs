//! Run reports and their on-disk form.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::histories::fmt_num;

/// One invariant row: a measured value against its acceptance bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: format!("<= {}", fmt_num(limit)),
            passed: value <= limit,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: format!(">= {}", fmt_num(limit)),
            passed: value >= limit,
        }
    }

    pub fn within(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: format!("{} +- {}", fmt_num(target), fmt_num(tolerance)),
            passed: (value - target).abs() <= tolerance,
        }
    }

    pub fn holds(name: impl Into<String>, value: f64, passed: bool, bound: &str) -> Self {
        Self {
            name: name.into(),
            value,
            bound: bound.into(),
            passed,
        }
    }

    pub fn status(&self) -> &'static str {
        if self.passed {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    /// Materialized config text.
    pub config_text: String,
    /// `(file name, contents)` of every data table, in emission order.
    pub tables: Vec<(String, String)>,
    pub checks: Vec<Check>,
    /// Not written to disk, so emitted files stay byte-stable.
    pub wall_clock: Duration,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&str> {
        self.tables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_str())
    }

    pub fn invariants_csv(&self) -> String {
        let mut out = String::from("check,value,bound,status\n");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                c.name,
                fmt_num(c.value),
                c.bound,
                c.status()
            );
        }
        out
    }

    pub fn text_summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment {}", self.name);
        let _ = writeln!(out, "config_hash {}", self.config_hash);
        let _ = writeln!(out, "seed {}", self.seed);
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{} {}: {} {}",
                c.status(),
                c.name,
                fmt_num(c.value),
                c.bound
            );
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(
            out,
            "{} of {} checks passed",
            self.checks.len() - failed,
            self.checks.len()
        );
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Data tables, the invariant table and the materialized config.
    Csv,
    TextSummary,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| Error::Output {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes the report into `dir`, creating it if needed.
pub fn emit_report(report: &RunReport, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Output {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            for (name, contents) in &report.tables {
                written.push(write_file(dir, name, contents)?);
            }
            written.push(write_file(dir, "invariants.csv", &report.invariants_csv())?);
            written.push(write_file(
                dir,
                "config.materialized.cfg",
                &report.config_text,
            )?);
        }
        ReportFormat::TextSummary => {
            written.push(write_file(dir, "summary.txt", &report.text_summary())?);
        }
    }
    Ok(written)
}
