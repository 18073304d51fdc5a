//! Deterministic artifact emission: fixed float formatting keeps CSV and
//! JSON outputs byte-identical for identical config and seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Fixed-width scientific notation used in every CSV cell.
pub fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// One named assertion of a scenario run.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    pub fn le(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.to_string(), pass: value <= threshold, value, threshold }
    }

    pub fn flag(name: &str, pass: bool) -> Self {
        Self { name: name.to_string(), pass, value: if pass { 0.0 } else { 1.0 }, threshold: 0.0 }
    }
}

/// Summary written to results.json.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    /// Semantic labels of the properties this run exercises.
    pub verifies: Vec<String>,
    pub results: serde_json::Map<String, serde_json::Value>,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub artifacts: Vec<String>,
}

impl Summary {
    pub fn new(scenario: &str, seed: u64, verifies: &[&str]) -> Self {
        Self {
            scenario: scenario.to_string(),
            seed,
            verifies: verifies.iter().map(|s| s.to_string()).collect(),
            results: serde_json::Map::new(),
            checks: Vec::new(),
            pass: true,
            artifacts: Vec::new(),
        }
    }

    pub fn record(&mut self, key: &str, value: impl Serialize) {
        self.results.insert(
            key.to_string(),
            serde_json::to_value(value).expect("serializable result"),
        );
    }

    pub fn check(&mut self, check: Check) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    pub fn write(&mut self, out_dir: &Path) -> std::io::Result<PathBuf> {
        fs::create_dir_all(out_dir)?;
        let path = out_dir.join("results.json");
        self.artifacts.push(path.display().to_string());
        let text = serde_json::to_string_pretty(self).expect("serializable summary");
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

/// Writes a CSV with the given header and pre-formatted rows.
pub fn write_csv(
    out_dir: &Path,
    name: &str,
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> std::io::Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(&path, text)?;
    Ok(path)
}
