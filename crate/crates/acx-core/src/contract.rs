//! Method-data contracts: the checklist of what an estimator requires of the
//! data, with stop/flag/branch consequences per requirement.
//!
//! Builtin contracts ship for 2x2 and staggered difference-in-differences,
//! propensity score matching, and interrupted time series. Regression
//! discontinuity and instrumental variables are declarable in the method
//! taxonomy but carry no automated requirements; validation rejects contracts
//! that bind diagnostics to them.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::digest::sha256_hex;
use crate::kv::{self, Document, Section};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodKind {
    DiD2x2,
    DiDStaggered,
    Psm,
    Its,
    Rdd,
    Iv,
}

impl MethodKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodKind::DiD2x2 => "did-2x2",
            MethodKind::DiDStaggered => "did-staggered",
            MethodKind::Psm => "psm",
            MethodKind::Its => "its",
            MethodKind::Rdd => "rdd",
            MethodKind::Iv => "iv",
        }
    }

    pub fn parse(s: &str) -> Option<MethodKind> {
        match s {
            "did-2x2" => Some(MethodKind::DiD2x2),
            "did-staggered" => Some(MethodKind::DiDStaggered),
            "psm" => Some(MethodKind::Psm),
            "its" => Some(MethodKind::Its),
            "rdd" => Some(MethodKind::Rdd),
            "iv" => Some(MethodKind::Iv),
            _ => None,
        }
    }

    /// Methods with a builtin requirement list.
    pub fn has_builtin(&self) -> bool {
        !matches!(self, MethodKind::Rdd | MethodKind::Iv)
    }
}

/// What happens when a requirement is not met: Stop blocks the causal label,
/// Flag demands documented sensitivity handling, Branch splices the target
/// method's requirement set into the active checklist.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Stop,
    Flag,
    Branch(MethodKind),
}

/// How a requirement is checked: by a registered diagnostic, or by an
/// analyst attestation the data cannot reveal.
#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    Automatic(String),
    Attested(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Requirement {
    pub id: String,
    pub description: String,
    pub policy: Policy,
    pub binding: Binding,
    /// Plain-language note on why the requirement exists; carried verbatim
    /// through serialization for reviewer traceability.
    pub source: String,
}

/// Numeric cutoffs used by the automatic diagnostics. Defaults are fixed and
/// documented here; a contract file may override any of them in a
/// `[thresholds]` section.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    /// Fewer pre-periods than this stops the analysis.
    pub pre_periods_stop_below: usize,
    /// Fewer pre-periods than this (but at least the stop cutoff) flags:
    /// trends are inspectable but a slope test needs three points per group.
    pub pre_periods_testable: usize,
    pub smd_flag: f64,
    pub pretrend_alpha: f64,
    pub overlap_flag: f64,
    pub overlap_stop: f64,
    pub boundary_flag: f64,
    pub break_alpha: f64,
    /// Post/pre distinct-value density ratio below this flags compression.
    pub compression_ratio: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            pre_periods_stop_below: 2,
            pre_periods_testable: 3,
            smd_flag: 0.1,
            pretrend_alpha: 0.10,
            overlap_flag: 0.02,
            overlap_stop: 0.10,
            boundary_flag: 0.05,
            break_alpha: 0.01,
            compression_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodDataContract {
    pub method: MethodKind,
    pub requirements: Vec<Requirement>,
    pub authored_at: String,
    pub author: String,
    pub thresholds: Thresholds,
}

#[derive(Debug, Error, PartialEq)]
pub enum ContractError {
    #[error("no builtin contract for taxonomy-only method `{0}`")]
    UnsupportedMethod(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("contract violates schema: {0:?}")]
    Schema(Vec<Violation>),
}

impl From<kv::KvError> for ContractError {
    fn from(e: kv::KvError) -> Self {
        match e {
            kv::KvError::Parse { line, msg } => ContractError::Parse { line, msg },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateId(String),
    DanglingBranchTarget { requirement: String, target: String },
    UnknownDiagnostic { requirement: String, diagnostic: String },
    UnknownDiagnosticForMethod { requirement: String, diagnostic: String },
    TaxonomyOnlyMethod(String),
    MissingCoreRequirement { method: String, requirement: String },
    UnknownKey { section: String, key: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "duplicate requirement id `{id}`"),
            Violation::DanglingBranchTarget { requirement, target } => {
                write!(f, "requirement `{requirement}` branches to unknown target `{target}`")
            }
            Violation::UnknownDiagnostic { requirement, diagnostic } => {
                write!(f, "requirement `{requirement}` binds unregistered diagnostic `{diagnostic}`")
            }
            Violation::UnknownDiagnosticForMethod { requirement, diagnostic } => {
                write!(
                    f,
                    "requirement `{requirement}` binds diagnostic `{diagnostic}` not applicable to the contract method"
                )
            }
            Violation::TaxonomyOnlyMethod(m) => {
                write!(f, "method `{m}` is taxonomy-only and cannot carry requirements")
            }
            Violation::MissingCoreRequirement { method, requirement } => {
                write!(f, "method `{method}` contract is missing core requirement `{requirement}`")
            }
            Violation::UnknownKey { section, key } => {
                write!(f, "unknown key `{key}` in section [{section}]")
            }
        }
    }
}

/// Registry of automatic diagnostics and the methods they apply to.
pub const DIAGNOSTICS: &[(&str, &[MethodKind])] = &[
    ("pre-periods", &[MethodKind::DiD2x2, MethodKind::DiDStaggered, MethodKind::Its]),
    ("parallel-trends", &[MethodKind::DiD2x2, MethodKind::DiDStaggered]),
    (
        "balance",
        &[MethodKind::DiD2x2, MethodKind::DiDStaggered, MethodKind::Psm],
    ),
    (
        "outcome-integrity",
        &[MethodKind::DiD2x2, MethodKind::DiDStaggered, MethodKind::Psm, MethodKind::Its],
    ),
    ("overlap", &[MethodKind::Psm]),
    ("group-sources", &[MethodKind::DiD2x2, MethodKind::DiDStaggered]),
    ("staggering", &[MethodKind::DiD2x2, MethodKind::DiDStaggered]),
];

pub fn diagnostic_methods(id: &str) -> Option<&'static [MethodKind]> {
    DIAGNOSTICS.iter().find(|(d, _)| *d == id).map(|(_, m)| *m)
}

/// Core requirement ids that must be present in any contract for the method.
pub fn core_requirements(method: MethodKind) -> &'static [&'static str] {
    match method {
        MethodKind::DiD2x2 => {
            &["aggregation-unit", "pre-periods", "group-definition", "pre-trend-inspectable"]
        }
        MethodKind::DiDStaggered => &[
            "aggregation-unit",
            "pre-periods",
            "group-definition",
            "pre-trend-inspectable",
            "het-robust-estimator",
            "control-cohort",
        ],
        MethodKind::Psm => &["observables-selection", "overlap"],
        MethodKind::Its => &["outcome-consistency", "concurrent-interventions"],
        MethodKind::Rdd | MethodKind::Iv => &[],
    }
}

fn req(
    id: &str,
    description: &str,
    policy: Policy,
    binding: Binding,
    source: &str,
) -> Requirement {
    Requirement {
        id: id.into(),
        description: description.into(),
        policy,
        binding,
        source: source.into(),
    }
}

fn did_common_requirements() -> Vec<Requirement> {
    vec![
        req(
            "aggregation-unit",
            "The unit of observation and any upstream aggregation applied to the data are documented.",
            Policy::Flag,
            Binding::Attested(
                "State the unit each row represents and describe every aggregation step applied before the data reached you.".into(),
            ),
            "Aggregation applied upstream can smooth the variation the estimator needs and is invisible in the delivered file.",
        ),
        req(
            "pre-periods",
            "Enough pre-intervention periods exist to inspect, and preferably test, pre-treatment trends.",
            Policy::Stop,
            Binding::Automatic("pre-periods".into()),
            "With fewer than two pre-periods the identifying trend assumption cannot even be inspected; with exactly two it is inspectable but untestable.",
        ),
        req(
            "group-definition",
            "Treatment and control groups are defined comparably and drawn from compatible data sources.",
            Policy::Stop,
            Binding::Automatic("group-sources".into()),
            "A comparison group produced by a different source or under different rules breaks group comparability regardless of what the regression reports.",
        ),
        req(
            "pre-trend-inspectable",
            "Pre-period outcome trends are plotted per group and tested for divergence.",
            Policy::Flag,
            Binding::Automatic("parallel-trends".into()),
            "The group-mean time-series plot makes the identifying trend assumption visible in a way no regression table can.",
        ),
        req(
            "baseline-balance",
            "Baseline characteristics are compared across treatment and control groups.",
            Policy::Flag,
            Binding::Automatic("balance".into()),
            "Large baseline imbalance signals the groups were not comparable to begin with; nominal balance still does not establish construct comparability.",
        ),
        req(
            "outcome-integrity",
            "The outcome variable shows no coding changes, compression artifacts, or floor/ceiling effects.",
            Policy::Stop,
            Binding::Automatic("outcome-integrity".into()),
            "An instrument or coding change at the intervention date produces a level shift that is real arithmetic but measures the change, not the program.",
        ),
        req(
            "provenance",
            "Data provenance is documented: producer, transformations, and available documentation.",
            Policy::Flag,
            Binding::Attested(
                "Record who produced the dataset, what transformations were applied, and whether documentation exists.".into(),
            ),
            "Provenance cannot be inferred from a flat file; it must be declared and reviewed.",
        ),
    ]
}

/// Canonical requirement list for a supported method.
pub fn builtin_contract(method: MethodKind) -> Result<MethodDataContract, ContractError> {
    let requirements = match method {
        MethodKind::DiD2x2 => {
            let mut reqs = did_common_requirements();
            reqs.push(req(
                "staggered-timing",
                "Treatment adoption happens at a single time; staggered timing redirects to the staggered-design requirements.",
                Policy::Branch(MethodKind::DiDStaggered),
                Binding::Automatic("staggering".into()),
                "With variation in treatment timing a single-coefficient two-way fixed effects regression can average cohort comparisons with distorted, even negative, weights.",
            ));
            reqs
        }
        MethodKind::DiDStaggered => {
            let mut reqs = did_common_requirements();
            reqs.push(req(
                "het-robust-estimator",
                "The committed estimator is heterogeneity-robust (group-time effects), not a single-coefficient two-way fixed effects regression.",
                Policy::Stop,
                Binding::Attested(
                    "Confirm the committed estimator reports cohort-by-period effects rather than one pooled coefficient.".into(),
                ),
                "Pooled two-way fixed effects under heterogeneous staggered effects mixes clean and contaminated comparisons.",
            ));
            reqs.push(req(
                "control-cohort",
                "The comparison cohort is declared: never-treated, or not-yet-treated with justification.",
                Policy::Stop,
                Binding::Attested(
                    "Declare whether controls are never-treated units or not-yet-treated cohorts, and why.".into(),
                ),
                "Using already-treated units as controls contaminates the comparison.",
            ));
            reqs
        }
        MethodKind::Psm => vec![
            req(
                "matching-variables",
                "The variables available for matching and their definitions in each source population are documented.",
                Policy::Flag,
                Binding::Attested(
                    "List every matching variable and how it is defined in each population being compared.".into(),
                ),
                "Matching on variables whose definitions differ across populations balances labels, not constructs.",
            ),
            req(
                "observables-selection",
                "Selection into treatment plausibly operates on observed variables.",
                Policy::Stop,
                Binding::Attested(
                    "Justify why selection into treatment is driven by the observed matching variables.".into(),
                ),
                "If selection operates on unobservables, matching on observables cannot recover a causal contrast.",
            ),
            req(
                "construct-comparability",
                "Matching variables measure the same underlying construct in both groups.",
                Policy::Stop,
                Binding::Attested(
                    "Confirm each matching variable measures the same thing in both groups (titles, tenure definitions, and codes harmonized).".into(),
                ),
                "Small standardized differences on nominal variables mean nothing when the constructs those variables represent differ.",
            ),
            req(
                "baseline-balance",
                "Baseline characteristics are compared across treatment and control groups.",
                Policy::Flag,
                Binding::Automatic("balance".into()),
                "Balance diagnostics are necessary but not sufficient; they cannot detect construct mismatch.",
            ),
            req(
                "overlap",
                "Propensity overlap exists across treatment and control groups.",
                Policy::Stop,
                Binding::Automatic("overlap".into()),
                "Treated units outside the control propensity support have no empirical counterfactual.",
            ),
        ],
        MethodKind::Its => vec![
            req(
                "outcome-consistency",
                "The outcome measure is consistent across pre and post periods (no instrument or coding change).",
                Policy::Stop,
                Binding::Automatic("outcome-integrity".into()),
                "A measurement instrument change at the interruption produces a level shift that measures the change itself.",
            ),
            req(
                "concurrent-interventions",
                "No concurrent interventions plausibly confound the level shift.",
                Policy::Stop,
                Binding::Attested(
                    "Identify any other program, policy, or measurement change that took effect near the interruption.".into(),
                ),
                "An interrupted series attributes the whole discontinuity to the named intervention.",
            ),
            req(
                "series-length",
                "Enough periods exist on each side of the interruption to fit segment trends.",
                Policy::Stop,
                Binding::Automatic("pre-periods".into()),
                "Segmented regression needs at least three points per segment to separate level from trend.",
            ),
        ],
        MethodKind::Rdd | MethodKind::Iv => {
            return Err(ContractError::UnsupportedMethod(method.as_str().into()))
        }
    };
    Ok(MethodDataContract {
        method,
        requirements,
        authored_at: "1970-01-01T00:00:00Z".into(),
        author: "builtin".into(),
        thresholds: Thresholds::default(),
    })
}

/// Returns every schema violation; an empty list means the contract is valid.
pub fn validate_contract(c: &MethodDataContract) -> Vec<Violation> {
    let mut violations = Vec::new();

    if !c.method.has_builtin() && !c.requirements.is_empty() {
        violations.push(Violation::TaxonomyOnlyMethod(c.method.as_str().into()));
    }

    let mut seen = BTreeSet::new();
    for r in &c.requirements {
        if !seen.insert(r.id.clone()) {
            violations.push(Violation::DuplicateId(r.id.clone()));
        }
        if let Policy::Branch(target) = &r.policy {
            if !target.has_builtin() {
                violations.push(Violation::DanglingBranchTarget {
                    requirement: r.id.clone(),
                    target: target.as_str().into(),
                });
            }
        }
        if let Binding::Automatic(diag) = &r.binding {
            match diagnostic_methods(diag) {
                None => violations.push(Violation::UnknownDiagnostic {
                    requirement: r.id.clone(),
                    diagnostic: diag.clone(),
                }),
                Some(methods) => {
                    if !methods.contains(&c.method) {
                        violations.push(Violation::UnknownDiagnosticForMethod {
                            requirement: r.id.clone(),
                            diagnostic: diag.clone(),
                        });
                    }
                }
            }
        }
    }

    if c.method.has_builtin() {
        for id in core_requirements(c.method) {
            if !c.requirements.iter().any(|r| r.id == *id) {
                violations.push(Violation::MissingCoreRequirement {
                    method: c.method.as_str().into(),
                    requirement: (*id).into(),
                });
            }
        }
    }
    violations
}

const CONTRACT_KEYS: &[&str] = &["method", "authored_at", "author"];
const REQUIREMENT_KEYS: &[&str] = &["description", "policy", "binding", "source"];
const THRESHOLD_KEYS: &[&str] = &[
    "pre_periods_stop_below",
    "pre_periods_testable",
    "smd_flag",
    "pretrend_alpha",
    "overlap_flag",
    "overlap_stop",
    "boundary_flag",
    "break_alpha",
    "compression_ratio",
];

fn policy_to_str(p: &Policy) -> String {
    match p {
        Policy::Stop => "stop".into(),
        Policy::Flag => "flag".into(),
        Policy::Branch(t) => format!("branch:{}", t.as_str()),
    }
}

fn parse_policy(s: &str, line_hint: &str) -> Result<Policy, ContractError> {
    if s == "stop" {
        return Ok(Policy::Stop);
    }
    if s == "flag" {
        return Ok(Policy::Flag);
    }
    if let Some(target) = s.strip_prefix("branch:") {
        let kind = MethodKind::parse(target).ok_or_else(|| ContractError::Parse {
            line: 0,
            msg: format!("unknown branch target `{target}` in {line_hint}"),
        })?;
        return Ok(Policy::Branch(kind));
    }
    Err(ContractError::Parse {
        line: 0,
        msg: format!("unknown policy word `{s}` in {line_hint} (expected stop|flag|branch:<method>)"),
    })
}

fn binding_to_str(b: &Binding) -> String {
    match b {
        Binding::Automatic(d) => format!("auto:{d}"),
        Binding::Attested(p) => format!("attest:{p}"),
    }
}

fn parse_binding(s: &str, line_hint: &str) -> Result<Binding, ContractError> {
    if let Some(d) = s.strip_prefix("auto:") {
        return Ok(Binding::Automatic(d.into()));
    }
    if let Some(p) = s.strip_prefix("attest:") {
        return Ok(Binding::Attested(p.into()));
    }
    Err(ContractError::Parse {
        line: 0,
        msg: format!("unknown binding `{s}` in {line_hint} (expected auto:<diagnostic>|attest:<prompt>)"),
    })
}

/// Serialize a contract in its canonical `.acx` form: fixed key order,
/// requirements in list order, thresholds written out explicitly.
pub fn serialize_contract(c: &MethodDataContract) -> String {
    let mut doc = Document::default();
    let mut head = Section::new("contract");
    head.push("method", c.method.as_str());
    head.push("authored_at", c.authored_at.clone());
    head.push("author", c.author.clone());
    doc.push(head);

    let t = &c.thresholds;
    let mut th = Section::new("thresholds");
    th.push("pre_periods_stop_below", t.pre_periods_stop_below.to_string());
    th.push("pre_periods_testable", t.pre_periods_testable.to_string());
    th.push("smd_flag", kv::fmt_f64(t.smd_flag));
    th.push("pretrend_alpha", kv::fmt_f64(t.pretrend_alpha));
    th.push("overlap_flag", kv::fmt_f64(t.overlap_flag));
    th.push("overlap_stop", kv::fmt_f64(t.overlap_stop));
    th.push("boundary_flag", kv::fmt_f64(t.boundary_flag));
    th.push("break_alpha", kv::fmt_f64(t.break_alpha));
    th.push("compression_ratio", kv::fmt_f64(t.compression_ratio));
    doc.push(th);

    for r in &c.requirements {
        let mut s = Section::new(format!("requirement.{}", r.id));
        s.push("description", r.description.clone());
        s.push("policy", policy_to_str(&r.policy));
        s.push("binding", binding_to_str(&r.binding));
        s.push("source", r.source.clone());
        doc.push(s);
    }
    kv::serialize(&doc)
}

/// SHA-256 digest of the canonical contract serialization.
pub fn contract_digest(c: &MethodDataContract) -> String {
    sha256_hex(serialize_contract(c).as_bytes())
}

/// Parses a `.acx` contract file in strict mode: unknown keys are schema
/// violations, closed vocabularies are enforced, and the result is validated.
pub fn parse_contract_file(input: &str) -> Result<MethodDataContract, ContractError> {
    let doc = kv::parse(input)?;
    let mut violations = Vec::new();

    let head = doc.section("contract").ok_or(ContractError::Parse {
        line: 0,
        msg: "missing [contract] section".into(),
    })?;
    for key in head.unknown_keys(CONTRACT_KEYS) {
        violations.push(Violation::UnknownKey { section: "contract".into(), key });
    }
    let method_str = head.require("method")?;
    let method = MethodKind::parse(method_str).ok_or_else(|| ContractError::Parse {
        line: 0,
        msg: format!("unknown method `{method_str}`"),
    })?;
    let authored_at = head.get("authored_at").unwrap_or("1970-01-01T00:00:00Z").to_string();
    let author = head.get("author").unwrap_or("unknown").to_string();

    let mut thresholds = Thresholds::default();
    if let Some(th) = doc.section("thresholds") {
        for key in th.unknown_keys(THRESHOLD_KEYS) {
            violations.push(Violation::UnknownKey { section: "thresholds".into(), key });
        }
        let get_f64 = |k: &str, default: f64| -> Result<f64, ContractError> {
            match th.get(k) {
                Some(v) => v.parse::<f64>().map_err(|_| ContractError::Parse {
                    line: 0,
                    msg: format!("threshold `{k}` is not a number: `{v}`"),
                }),
                None => Ok(default),
            }
        };
        let get_usize = |k: &str, default: usize| -> Result<usize, ContractError> {
            match th.get(k) {
                Some(v) => v.parse::<usize>().map_err(|_| ContractError::Parse {
                    line: 0,
                    msg: format!("threshold `{k}` is not an integer: `{v}`"),
                }),
                None => Ok(default),
            }
        };
        let d = Thresholds::default();
        thresholds = Thresholds {
            pre_periods_stop_below: get_usize("pre_periods_stop_below", d.pre_periods_stop_below)?,
            pre_periods_testable: get_usize("pre_periods_testable", d.pre_periods_testable)?,
            smd_flag: get_f64("smd_flag", d.smd_flag)?,
            pretrend_alpha: get_f64("pretrend_alpha", d.pretrend_alpha)?,
            overlap_flag: get_f64("overlap_flag", d.overlap_flag)?,
            overlap_stop: get_f64("overlap_stop", d.overlap_stop)?,
            boundary_flag: get_f64("boundary_flag", d.boundary_flag)?,
            break_alpha: get_f64("break_alpha", d.break_alpha)?,
            compression_ratio: get_f64("compression_ratio", d.compression_ratio)?,
        };
    }

    let mut requirements = Vec::new();
    for section in doc.sections_with_prefix("requirement.") {
        let id = section.name.trim_start_matches("requirement.").to_string();
        for key in section.unknown_keys(REQUIREMENT_KEYS) {
            violations.push(Violation::UnknownKey { section: section.name.clone(), key });
        }
        let hint = format!("[{}]", section.name);
        let policy = parse_policy(section.require("policy")?, &hint)?;
        let binding = parse_binding(section.require("binding")?, &hint)?;
        requirements.push(Requirement {
            id,
            description: section.get("description").unwrap_or_default().to_string(),
            policy,
            binding,
            source: section.get("source").unwrap_or_default().to_string(),
        });
    }

    for section in &doc.sections {
        let known = section.name == "contract"
            || section.name == "thresholds"
            || section.name.starts_with("requirement.");
        if !known {
            violations.push(Violation::UnknownKey {
                section: section.name.clone(),
                key: "(section)".into(),
            });
        }
    }

    let contract = MethodDataContract { method, requirements, authored_at, author, thresholds };
    violations.extend(validate_contract(&contract));
    if !violations.is_empty() {
        return Err(ContractError::Schema(violations));
    }
    Ok(contract)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid() {
        for method in [
            MethodKind::DiD2x2,
            MethodKind::DiDStaggered,
            MethodKind::Psm,
            MethodKind::Its,
        ] {
            let c = builtin_contract(method).unwrap();
            assert!(validate_contract(&c).is_empty(), "{method:?} builtin invalid");
        }
    }

    #[test]
    fn builtin_did_2x2_core_items() {
        let c = builtin_contract(MethodKind::DiD2x2).unwrap();
        for id in ["aggregation-unit", "pre-periods", "group-definition", "pre-trend-inspectable"] {
            assert!(c.requirements.iter().any(|r| r.id == id), "missing {id}");
        }
        let stag = c.requirements.iter().find(|r| r.id == "staggered-timing").unwrap();
        assert_eq!(stag.policy, Policy::Branch(MethodKind::DiDStaggered));
    }

    #[test]
    fn builtin_staggered_adds_items() {
        let c = builtin_contract(MethodKind::DiDStaggered).unwrap();
        assert!(c.requirements.iter().any(|r| r.id == "het-robust-estimator"));
        assert!(c.requirements.iter().any(|r| r.id == "control-cohort"));
    }

    #[test]
    fn builtin_its_has_outcome_consistency() {
        let c = builtin_contract(MethodKind::Its).unwrap();
        assert!(c.requirements.iter().any(|r| r.id == "outcome-consistency"));
        assert!(c.requirements.iter().any(|r| r.id == "concurrent-interventions"));
    }

    #[test]
    fn rdd_and_iv_unsupported() {
        assert_eq!(
            builtin_contract(MethodKind::Rdd),
            Err(ContractError::UnsupportedMethod("rdd".into()))
        );
        assert_eq!(
            builtin_contract(MethodKind::Iv),
            Err(ContractError::UnsupportedMethod("iv".into()))
        );
    }

    #[test]
    fn duplicate_ids_reported() {
        let mut c = builtin_contract(MethodKind::DiD2x2).unwrap();
        let dup = c.requirements[1].clone();
        c.requirements.push(dup);
        let v = validate_contract(&c);
        assert!(v.iter().any(|v| matches!(v, Violation::DuplicateId(id) if id == "pre-periods")));
    }

    #[test]
    fn overlap_under_did_rejected() {
        let mut c = builtin_contract(MethodKind::DiD2x2).unwrap();
        c.requirements.push(req(
            "overlap",
            "overlap",
            Policy::Stop,
            Binding::Automatic("overlap".into()),
            "",
        ));
        let v = validate_contract(&c);
        assert!(v.iter().any(|v| matches!(
            v,
            Violation::UnknownDiagnosticForMethod { diagnostic, .. } if diagnostic == "overlap"
        )));
    }

    #[test]
    fn builtin_bindings_all_resolve() {
        // Every automatic binding in every builtin names a registered
        // diagnostic applicable to the method.
        for method in [
            MethodKind::DiD2x2,
            MethodKind::DiDStaggered,
            MethodKind::Psm,
            MethodKind::Its,
        ] {
            let c = builtin_contract(method).unwrap();
            for r in &c.requirements {
                if let Binding::Automatic(d) = &r.binding {
                    let methods = diagnostic_methods(d)
                        .unwrap_or_else(|| panic!("diagnostic `{d}` not registered"));
                    assert!(methods.contains(&method), "`{d}` not valid for {method:?}");
                }
            }
        }
    }

    #[test]
    fn round_trip_builtin() {
        let c = builtin_contract(MethodKind::DiD2x2).unwrap();
        let text = serialize_contract(&c);
        let parsed = parse_contract_file(&text).unwrap();
        assert_eq!(parsed, c);
        // Serialization of the parsed value is byte-identical (normal form).
        assert_eq!(serialize_contract(&parsed), text);
    }

    #[test]
    fn unknown_policy_word_rejected() {
        let c = builtin_contract(MethodKind::DiD2x2).unwrap();
        let text = serialize_contract(&c).replace("policy = stop", "policy = halt");
        match parse_contract_file(&text) {
            Err(ContractError::Parse { msg, .. }) => assert!(msg.contains("halt")),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn branch_target_resolves_against_builtins() {
        let c = builtin_contract(MethodKind::DiD2x2).unwrap();
        let text = serialize_contract(&c);
        let parsed = parse_contract_file(&text).unwrap();
        let branch = parsed
            .requirements
            .iter()
            .find_map(|r| match &r.policy {
                Policy::Branch(t) => Some(*t),
                _ => None,
            })
            .unwrap();
        assert!(builtin_contract(branch).is_ok());
    }

    #[test]
    fn unknown_key_is_schema_error() {
        let c = builtin_contract(MethodKind::DiD2x2).unwrap();
        let text = serialize_contract(&c) + "\n[contract2]\nbogus = 1\n";
        match parse_contract_file(&text) {
            Err(ContractError::Schema(v)) => {
                assert!(v.iter().any(|v| matches!(v, Violation::UnknownKey { .. })));
            }
            other => panic!("expected SchemaError, got {other:?}"),
        }
    }

    #[test]
    fn threshold_override_applies() {
        let c = builtin_contract(MethodKind::DiD2x2).unwrap();
        let text = serialize_contract(&c).replace("smd_flag = 0.1", "smd_flag = 0.25");
        let parsed = parse_contract_file(&text).unwrap();
        assert_eq!(parsed.thresholds.smd_flag, 0.25);
    }
}
