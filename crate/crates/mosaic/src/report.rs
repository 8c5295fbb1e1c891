//! Verdicts produced by the staged verification flow.

use std::collections::BTreeMap;

/// The four pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Requirement,
    OpCheck,
    DcSweep,
    Function,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Requirement => "requirement",
            Stage::OpCheck => "op_check",
            Stage::DcSweep => "dc_sweep",
            Stage::Function => "function",
        };
        f.write_str(s)
    }
}

/// Feedback text is capped so repair prompts stay bounded.
pub const MAX_FEEDBACK_CHARS: usize = 2000;

/// One pipeline stage's verdict: pass/fail, feedback text with one finding
/// per line, and any numeric measurements taken along the way.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub passed: bool,
    pub feedback: String,
    pub measurements: BTreeMap<String, f64>,
}

impl StageReport {
    pub fn passed(stage: Stage) -> Self {
        StageReport {
            stage,
            passed: true,
            feedback: String::new(),
            measurements: BTreeMap::new(),
        }
    }

    pub fn failed(stage: Stage, findings: Vec<String>) -> Self {
        debug_assert!(!findings.is_empty());
        let mut feedback = findings.join("\n");
        if feedback.len() > MAX_FEEDBACK_CHARS {
            let mut cut = MAX_FEEDBACK_CHARS - '…'.len_utf8();
            while !feedback.is_char_boundary(cut) {
                cut -= 1;
            }
            feedback.truncate(cut);
            feedback.push('…');
        }
        StageReport {
            stage,
            passed: false,
            feedback,
            measurements: BTreeMap::new(),
        }
    }

    pub fn with_measurement(mut self, name: &str, value: f64) -> Self {
        self.measurements.insert(name.to_string(), value);
        self
    }
}

/// The full record of one verification run: stages execute in fixed order
/// and stop at the first failure.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VerificationOutcome {
    pub task_id: u32,
    pub stages: Vec<StageReport>,
    pub final_pass: bool,
    /// Input sources whose DC bias the sweep stage replaced, and the value.
    pub bias_substitutions: BTreeMap<String, f64>,
}

impl VerificationOutcome {
    /// The first failing stage, if any.
    pub fn first_failure(&self) -> Option<&StageReport> {
        self.stages.iter().find(|s| !s.passed)
    }
}
