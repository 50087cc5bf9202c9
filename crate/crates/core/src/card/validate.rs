//! Rule-based submission checks run before any metric is computed.

use serde::Serialize;
use serde_json::{json, Value};

use super::{Phase, WorkloadCard};
use crate::trace::{label_windows, Dialect, NormalizedTrace, StepKind};

pub const MIN_TRAIN_STEPS: usize = 5;
pub const MIN_PREFILL_STEPS: usize = 1;
pub const MIN_DECODE_STEPS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub rule: String,
    pub severity: Severity,
    pub message: String,
    pub observed: Value,
    pub required: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub relaxed: bool,
    /// Every rule evaluated, whether or not it produced a finding.
    pub checked: Vec<String>,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn error_count(&self) -> usize {
        self.findings.iter().filter(|f| f.severity == Severity::Error).count()
    }

    pub fn warning_count(&self) -> usize {
        self.findings.iter().filter(|f| f.severity == Severity::Warning).count()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ValidationOptions {
    /// Downgrade step-count rules to warnings (desk-scale fixtures).
    pub relaxed: bool,
}

struct Builder {
    relaxed: bool,
    checked: Vec<String>,
    findings: Vec<Finding>,
}

impl Builder {
    fn check(&mut self, rule: &str) {
        self.checked.push(rule.to_string());
    }

    fn add(&mut self, rule: &str, severity: Severity, message: String, observed: Value, required: Value) {
        self.findings.push(Finding {
            rule: rule.to_string(),
            severity,
            message,
            observed,
            required,
        });
    }

    fn step_rule(&mut self, rule: &str, what: &str, observed: usize, required: usize) {
        self.check(rule);
        if observed < required {
            let severity = if self.relaxed { Severity::Warning } else { Severity::Error };
            let suffix = if self.relaxed { " (relaxed)" } else { "" };
            self.add(
                rule,
                severity,
                format!("observed {observed} {what} < {required} required{suffix}"),
                json!(observed),
                json!(required),
            );
        }
    }
}

/// Checks a card against the trace it describes.
///
/// Schema validity is established by parsing; this adds step-count minimums,
/// declared-source coverage, recorded iteration count and environment completeness.
pub fn validate_submission(card: &WorkloadCard, trace: &NormalizedTrace, opts: ValidationOptions) -> ValidationReport {
    let mut b = Builder {
        relaxed: opts.relaxed,
        checked: vec!["schema".to_string()],
        findings: Vec::new(),
    };

    let count = |kind: StepKind| -> usize {
        trace
            .ranks
            .iter()
            .map(|r| {
                label_windows(&r.steps, card.phase(), card.first_step_is_prefill())
                    .iter()
                    .filter(|w| w.kind == kind)
                    .count()
            })
            .min()
            .unwrap_or(0)
    };

    let steady = match card.phase() {
        Phase::Training => {
            let n = count(StepKind::TrainStep);
            b.step_rule("min-iterations", "training iterations", n, MIN_TRAIN_STEPS);
            n
        }
        Phase::Inference => {
            let prefill = count(StepKind::Prefill);
            let decode = count(StepKind::DecodeStep);
            b.step_rule("min-prefill", "prefill passes", prefill, MIN_PREFILL_STEPS);
            b.step_rule("min-decode-steps", "decode steps", decode, MIN_DECODE_STEPS);
            decode
        }
    };

    b.check("source-mismatch");
    let declared = card.metric_source.as_ref().and_then(|m| m.traces.clone()).unwrap_or_default();
    if !declared.iter().any(|t| covers(t, trace.dialect)) {
        b.add(
            "source-mismatch",
            Severity::Warning,
            format!("metric_source.traces does not declare the loaded {} trace", trace.dialect),
            json!(declared),
            json!(trace.dialect.to_string()),
        );
    }

    b.check("iteration-count");
    match card.workload.model.iteration {
        Some(n) if n as usize != steady => b.add(
            "iteration-count",
            Severity::Warning,
            format!("card records {n} iterations but the trace holds {steady} steady-state steps"),
            json!(steady),
            json!(n),
        ),
        Some(_) => {}
        None => b.add(
            "iteration-count",
            Severity::Warning,
            "workload.model.iteration is not recorded".into(),
            json!(steady),
            Value::Null,
        ),
    }

    b.check("environment");
    let me = card.model_executor.as_ref();
    let fw = me.and_then(|m| m.framework.as_ref());
    let lib = me.and_then(|m| m.communication_library.as_ref());
    let env_fields = [
        ("Model-executor.framework.name", fw.and_then(|f| f.name.as_ref())),
        ("Model-executor.framework.version", fw.and_then(|f| f.version.as_ref())),
        ("Model-executor.communication_library.name", lib.and_then(|l| l.name.as_ref())),
        ("Model-executor.communication_library.version", lib.and_then(|l| l.version.as_ref())),
        ("workload.hardware.driver_version", card.workload.hardware.driver_version.as_ref()),
    ];
    for (path, value) in env_fields {
        if value.is_none_or(|v| v.trim().is_empty()) {
            b.add(
                "environment",
                Severity::Warning,
                format!("`{path}` is not reported"),
                Value::Null,
                json!(path),
            );
        }
    }

    let passed = !b.findings.iter().any(|f| f.severity == Severity::Error);
    ValidationReport {
        passed,
        relaxed: opts.relaxed,
        checked: b.checked,
        findings: b.findings,
    }
}

/// Whether a declared `metric_source.traces` entry covers a dialect.
fn covers(declared: &str, dialect: Dialect) -> bool {
    match declared.trim().to_ascii_lowercase().as_str() {
        "json" | "chrome" | "chrome_trace" => true,
        "kineto" | "torch" | "pytorch" | "torch_json" => dialect == Dialect::KinetoGpu,
        "xla" | "xprof" | "jax" | "tpu" => dialect == Dialect::XlaTpu,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::card::parse_card;
    use crate::trace::{StepWindow, TimelineFragment};

    fn card(extra: &str, phase: &str) -> WorkloadCard {
        let yaml = format!(
            r#"
workload:
  model: {{phase: {phase}, model_family: m, iteration: 5}}
  data: {{batch_size: 1, seq_len: 8}}
  hardware:
    xpu_spec: {{model: nvidia_a100, total_count: 1}}
    driver_version: cuda_12.4
Model-executor:
  framework: {{name: torchtitan, version: "0.2"}}
  communication_library: {{name: NCCL, version: 2.21.5}}
metric_source:
  traces: [json]
{extra}"#
        );
        parse_card(&yaml).unwrap()
    }

    fn trace(steps: usize) -> NormalizedTrace {
        let mut f = TimelineFragment::default();
        for i in 0..steps {
            f.steps.push(StepWindow {
                index: i,
                t_start: i as i64 * 100,
                t_end: i as i64 * 100 + 90,
                kind: StepKind::TrainStep,
                raw_number: None,
            });
        }
        NormalizedTrace::from_fragments(Dialect::KinetoGpu, vec![("r0".into(), f)])
    }

    #[test]
    fn three_training_steps_fail() {
        let r = validate_submission(&card("", "training"), &trace(3), ValidationOptions::default());
        assert!(!r.passed);
        let f = r.findings.iter().find(|f| f.rule == "min-iterations").unwrap();
        assert_eq!(f.severity, Severity::Error);
        assert_eq!(f.observed, json!(3));
        assert_eq!(f.required, json!(5));
    }

    #[test]
    fn five_training_steps_pass_cleanly() {
        let r = validate_submission(&card("", "training"), &trace(5), ValidationOptions::default());
        assert!(r.passed);
        assert!(r.findings.is_empty(), "{:?}", r.findings);
    }

    #[test]
    fn relaxed_downgrades_step_rule() {
        let r = validate_submission(&card("", "training"), &trace(3), ValidationOptions { relaxed: true });
        assert!(r.passed);
        assert!(r.relaxed);
        let f = r.findings.iter().find(|f| f.rule == "min-iterations").unwrap();
        assert_eq!(f.severity, Severity::Warning);
    }

    #[test]
    fn inference_prefill_plus_128_decode_passes() {
        let c = card("", "inference").clone();
        let r = validate_submission(&c, &trace(129), ValidationOptions::default());
        assert!(r.findings.iter().all(|f| !f.rule.starts_with("min-")));
        let r = validate_submission(&c, &trace(128), ValidationOptions::default());
        assert!(r.findings.iter().any(|f| f.rule == "min-decode-steps" && f.severity == Severity::Error));
    }

    #[test]
    fn nsys_only_source_warns_for_json_trace() {
        let yaml = card("", "training").to_yaml().replace("- json", "- nsys");
        let c = parse_card(&yaml).unwrap();
        let r = validate_submission(&c, &trace(5), ValidationOptions::default());
        let f = r.findings.iter().find(|f| f.rule == "source-mismatch").unwrap();
        assert_eq!(f.severity, Severity::Warning);
        assert!(r.passed);
    }

    #[test]
    fn missing_environment_warns() {
        let mut c = card("", "training");
        c.model_executor = None;
        let r = validate_submission(&c, &trace(5), ValidationOptions::default());
        assert_eq!(r.findings.iter().filter(|f| f.rule == "environment").count(), 4);
        assert!(r.passed);
    }

    #[test]
    fn iteration_mismatch_warns() {
        let r = validate_submission(&card("", "training"), &trace(6), ValidationOptions::default());
        assert!(r.findings.iter().any(|f| f.rule == "iteration-count"));
    }

    #[test]
    fn errors_never_increase_as_steps_are_added() {
        let c = card("", "training");
        let mut last = usize::MAX;
        for n in 0..8 {
            let e = validate_submission(&c, &trace(n), ValidationOptions::default()).error_count();
            assert!(e <= last);
            last = e;
        }
    }
}
