use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub name: String,
    /// The property under test.
    pub anchor: String,
    pub samples: usize,
    pub statistic: f64,
    pub tolerance: f64,
    pub two_sided: bool,
    pub pass: bool,
    /// Reported but not part of the overall verdict.
    pub advisory: bool,
    pub details: Map<String, Value>,
    /// Wall-clock seconds; kept out of the JSON so reports are reproducible.
    #[serde(skip)]
    pub runtime: f64,
}

impl TestRecord {
    /// One-sided test: passes iff `statistic ≤ tolerance`.
    pub fn one_sided(name: &str, anchor: &str, samples: usize, statistic: f64, tolerance: f64) -> Self {
        TestRecord {
            name: name.into(),
            anchor: anchor.into(),
            samples,
            statistic,
            tolerance,
            two_sided: false,
            pass: statistic <= tolerance,
            advisory: false,
            details: Map::new(),
            runtime: 0.0,
        }
    }

    /// Two-sided test: passes iff `|statistic| ≤ tolerance`.
    pub fn two_sided(name: &str, anchor: &str, samples: usize, statistic: f64, tolerance: f64) -> Self {
        TestRecord {
            two_sided: true,
            pass: statistic.abs() <= tolerance,
            ..Self::one_sided(name, anchor, samples, statistic, tolerance)
        }
    }

    pub fn advisory(mut self) -> Self {
        self.advisory = true;
        self
    }

    pub fn detail(mut self, key: &str, value: impl Serialize) -> Self {
        self.details
            .insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }

    /// Fail the record regardless of its statistic.
    pub fn require(mut self, ok: bool) -> Self {
        self.pass &= ok;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: u32,
    pub tests: Vec<TestRecord>,
}

impl Default for VerificationReport {
    fn default() -> Self {
        VerificationReport {
            schema_version: SCHEMA_VERSION,
            tests: Vec::new(),
        }
    }
}

impl VerificationReport {
    pub fn push(&mut self, record: TestRecord) {
        self.tests.push(record);
    }

    pub fn passed(&self) -> bool {
        self.tests.iter().all(|t| t.pass || t.advisory)
    }

    pub fn get(&self, name: &str) -> Option<&TestRecord> {
        self.tests.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let width = self.tests.iter().map(|t| t.name.len()).max().unwrap_or(4).max(4);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>13}  {:>13}  {:>7}  {:>9}",
            "test", "samples", "statistic", "tolerance", "result", "time [s]"
        );
        for t in &self.tests {
            let verdict = match (t.pass, t.advisory) {
                (true, false) => "pass",
                (false, false) => "FAIL",
                (true, true) => "ok*",
                (false, true) => "warn*",
            };
            let stat = if t.two_sided { format!("|{:.4e}|", t.statistic) } else { format!("{:.4e}", t.statistic) };
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>13}  {:>13.4e}  {:>7}  {:>9.3}",
                t.name, t.samples, stat, t.tolerance, verdict, t.runtime
            );
        }
        if self.tests.iter().any(|t| t.advisory) {
            out.push_str("* advisory, not part of the verdict\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        assert!(TestRecord::one_sided("a", "", 1, 0.5, 0.5).pass);
        assert!(!TestRecord::one_sided("a", "", 1, 0.6, 0.5).pass);
        assert!(TestRecord::two_sided("a", "", 1, -0.4, 0.5).pass);
        assert!(!TestRecord::two_sided("a", "", 1, -0.6, 0.5).pass);
        assert!(!TestRecord::one_sided("a", "", 1, 0.1, 0.5).require(false).pass);
    }

    #[test]
    fn runtime_stays_out_of_json() {
        let mut r = VerificationReport::default();
        let mut rec = TestRecord::one_sided("x", "y", 3, 1.0, 2.0).detail("k", [1, 2]);
        rec.runtime = 12.5;
        r.push(rec);
        r.push(TestRecord::one_sided("adv", "", 1, 3.0, 2.0).advisory());
        assert!(r.passed());
        let json = r.to_json();
        assert!(!json.contains("runtime"));
        let back: VerificationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.tests[0].details["k"], serde_json::json!([1, 2]));
        assert!(r.table().contains("warn*"));
    }
}
