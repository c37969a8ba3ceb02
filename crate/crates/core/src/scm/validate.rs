use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scm::layout::{Domain, Layout, Role, Schema};
use crate::scm::spec::{Law, ScmSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ViolationKind {
    HorizonZero,
    HorizonMismatch { expected: usize, found: usize },
    DuplicateName { name: String },
    UnknownParent { parent: String },
    ParentOrder { parent: String },
    ForbiddenParent { parent: String, reason: String },
    ProbabilityOutOfRange { index: usize, value: f64 },
    NonFinite { what: String },
    TableSize { expected: usize, found: usize },
    NonDiscreteTableParent { parent: String },
    BaselineOnlyLaw,
    CategoricalSum { sum: f64 },
    EmptyRange { lo: f64, hi: f64 },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ViolationKind::*;
        match self {
            HorizonZero => write!(f, "horizon must be ≥ 1"),
            HorizonMismatch { expected, found } => {
                write!(f, "expected {expected} per-time entries, found {found}")
            }
            DuplicateName { name } => write!(f, "duplicate node name {name:?}"),
            UnknownParent { parent } => write!(f, "unknown parent {parent:?}"),
            ParentOrder { parent } => write!(f, "parent {parent:?} does not precede this node"),
            ForbiddenParent { parent, reason } => {
                write!(f, "parent {parent:?} not allowed: {reason}")
            }
            ProbabilityOutOfRange { index, value } => {
                write!(f, "probability {value} at index {index} outside [0, 1]")
            }
            NonFinite { what } => write!(f, "non-finite {what}"),
            TableSize { expected, found } => {
                write!(f, "table needs {expected} cells, found {found}")
            }
            NonDiscreteTableParent { parent } => {
                write!(f, "table parent {parent:?} is continuous")
            }
            BaselineOnlyLaw => write!(
                f,
                "categorical and uniform laws are only allowed for baseline covariates"
            ),
            CategoricalSum { sum } => write!(f, "categorical probabilities sum to {sum}"),
            EmptyRange { lo, hi } => write!(f, "uniform range [{lo}, {hi}] is empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Path inside the model document, e.g. `birth[1]`.
    pub location: String,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, location: &str, kind: ViolationKind) {
        self.violations.push(Violation {
            location: location.to_string(),
            kind,
        });
    }

    /// Prefix every location, e.g. with the enclosing document path.
    pub fn prefixed(mut self, prefix: &str) -> Self {
        for v in &mut self.violations {
            v.location = format!("{prefix}.{}", v.location);
        }
        self
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Check a model for everything that would make it unsimulable.
pub fn validate_scm(spec: &ScmSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    if spec.horizon == 0 {
        report.push("horizon", ViolationKind::HorizonZero);
        return report;
    }
    let tau = spec.horizon;
    for (field, len) in [
        ("death", spec.death.len()),
        ("birth", spec.birth.len()),
        ("infant_survival", spec.infant_survival.len()),
    ] {
        if len != tau {
            report.push(
                field,
                ViolationKind::HorizonMismatch {
                    expected: tau,
                    found: len,
                },
            );
        }
    }
    if !spec.covariates.is_empty() && spec.covariates.len() != tau {
        report.push(
            "covariates",
            ViolationKind::HorizonMismatch {
                expected: tau,
                found: spec.covariates.len(),
            },
        );
    }

    let layout = match Layout::new(&Schema::from_spec(spec)) {
        Ok(l) => l,
        Err(e) => {
            report.push(
                "names",
                ViolationKind::DuplicateName {
                    name: e.to_string(),
                },
            );
            return report;
        }
    };

    for (i, b) in spec.baseline.iter().enumerate() {
        check_law(
            &mut report,
            &layout,
            &format!("baseline[{i}]"),
            layout.baseline.start + i,
            &b.law,
            spec,
        );
    }
    check_law(
        &mut report,
        &layout,
        "exposure",
        layout.exposure,
        &spec.exposure,
        spec,
    );
    for t in 1..=tau.min(spec.covariates.len()) {
        let slice = layout.slice(t);
        for (i, c) in spec.covariates[t - 1].iter().enumerate() {
            let loc = format!("covariates[{}][{i}]", t - 1);
            check_law(
                &mut report,
                &layout,
                &loc,
                slice.covariates.start + i,
                &c.law,
                spec,
            );
        }
    }
    for t in 1..=tau {
        let slice = layout.slice(t).clone();
        if let Some(l) = spec.death.get(t - 1) {
            check_law(
                &mut report,
                &layout,
                &format!("death[{}]", t - 1),
                slice.death,
                l,
                spec,
            );
        }
        if let Some(l) = spec.birth.get(t - 1) {
            check_law(
                &mut report,
                &layout,
                &format!("birth[{}]", t - 1),
                slice.birth,
                l,
                spec,
            );
        }
        if let Some(l) = spec.infant_survival.get(t - 1) {
            check_law(
                &mut report,
                &layout,
                &format!("infant_survival[{}]", t - 1),
                slice.infant,
                l,
                spec,
            );
        }
    }
    check_law(
        &mut report,
        &layout,
        "infant_hiv_free",
        layout.hiv_free,
        &spec.infant_hiv_free,
        spec,
    );
    report
}

fn check_law(
    report: &mut ValidationReport,
    layout: &Layout,
    loc: &str,
    child: usize,
    law: &Law,
    spec: &ScmSpec,
) {
    let role = layout.nodes[child].role;
    let mut parents_ok = true;
    for parent in law.parents() {
        let Some(p) = layout.get(parent) else {
            report.push(
                loc,
                ViolationKind::UnknownParent {
                    parent: parent.to_string(),
                },
            );
            parents_ok = false;
            continue;
        };
        if p >= child {
            report.push(
                loc,
                ViolationKind::ParentOrder {
                    parent: parent.to_string(),
                },
            );
            parents_ok = false;
            continue;
        }
        let prole = layout.nodes[p].role;
        let reason = match role {
            Role::Exposure if prole != Role::Baseline => {
                Some("exposure may depend on baseline covariates only")
            }
            Role::Death | Role::Birth if matches!(prole, Role::InfantAlive | Role::HivFree) => {
                Some("mediators depend on (A, covariate history, mediator history) only")
            }
            _ => None,
        };
        if let Some(reason) = reason {
            report.push(
                loc,
                ViolationKind::ForbiddenParent {
                    parent: parent.to_string(),
                    reason: reason.to_string(),
                },
            );
            parents_ok = false;
        }
    }

    match law {
        Law::Constant { p } => check_prob(report, loc, 0, *p),
        Law::Logistic { intercept, coef } => {
            if !intercept.is_finite() {
                report.push(
                    loc,
                    ViolationKind::NonFinite {
                        what: "intercept".into(),
                    },
                );
            }
            for (k, v) in coef {
                if !v.is_finite() {
                    report.push(
                        loc,
                        ViolationKind::NonFinite {
                            what: format!("coefficient for {k}"),
                        },
                    );
                }
            }
            if parents_ok && intercept.is_finite() && coef.values().all(|v| v.is_finite()) {
                let (lo, hi) = logistic_bounds(layout, spec, *intercept, coef);
                if !(lo >= 0.0 && hi <= 1.0) {
                    report.push(
                        loc,
                        ViolationKind::ProbabilityOutOfRange {
                            index: 0,
                            value: hi,
                        },
                    );
                }
            }
        }
        Law::Table { parents, p } => {
            for (i, q) in p.iter().enumerate() {
                check_prob(report, loc, i, *q);
            }
            if parents_ok {
                let mut expected = 1usize;
                for parent in parents {
                    let node = layout.get(parent).expect("checked above");
                    match layout.nodes[node].domain.radix() {
                        Some(r) => expected = expected.saturating_mul(r),
                        None => report.push(
                            loc,
                            ViolationKind::NonDiscreteTableParent {
                                parent: parent.clone(),
                            },
                        ),
                    }
                }
                if expected != p.len() {
                    report.push(
                        loc,
                        ViolationKind::TableSize {
                            expected,
                            found: p.len(),
                        },
                    );
                }
            }
        }
        Law::Categorical { probs } => {
            if role != Role::Baseline {
                report.push(loc, ViolationKind::BaselineOnlyLaw);
            }
            for (i, q) in probs.iter().enumerate() {
                check_prob(report, loc, i, *q);
            }
            let sum: f64 = probs.iter().sum();
            if probs.is_empty() || (sum - 1.0).abs() > 1e-9 {
                report.push(loc, ViolationKind::CategoricalSum { sum });
            }
        }
        Law::Uniform { lo, hi } => {
            if role != Role::Baseline {
                report.push(loc, ViolationKind::BaselineOnlyLaw);
            }
            if !lo.is_finite() || !hi.is_finite() {
                report.push(
                    loc,
                    ViolationKind::NonFinite {
                        what: "uniform bound".into(),
                    },
                );
            } else if lo >= hi {
                report.push(loc, ViolationKind::EmptyRange { lo: *lo, hi: *hi });
            }
        }
    }
}

fn check_prob(report: &mut ValidationReport, loc: &str, index: usize, value: f64) {
    if !(0.0..=1.0).contains(&value) {
        report.push(loc, ViolationKind::ProbabilityOutOfRange { index, value });
    }
}

/// Range of a logistic law's output over all admissible parent values.
fn logistic_bounds(
    layout: &Layout,
    spec: &ScmSpec,
    intercept: f64,
    coef: &std::collections::BTreeMap<String, f64>,
) -> (f64, f64) {
    let (mut lo, mut hi) = (intercept, intercept);
    for (name, c) in coef {
        let node = layout.get(name).expect("parents resolved");
        let (vlo, vhi) = match layout.nodes[node].domain {
            Domain::Binary | Domain::Tristate => (0.0, 1.0),
            Domain::Categorical(k) => (0.0, (k.max(1) - 1) as f64),
            Domain::Continuous => spec
                .baseline
                .get(node - layout.baseline.start)
                .and_then(|b| match b.law {
                    Law::Uniform { lo, hi } => Some((lo, hi)),
                    _ => None,
                })
                .unwrap_or((f64::NEG_INFINITY, f64::INFINITY)),
        };
        let (a, b) = (c * vlo, c * vhi);
        lo += a.min(b);
        hi += a.max(b);
    }
    (sigmoid(lo), sigmoid(hi))
}

pub(crate) use crate::numeric::sigmoid;
