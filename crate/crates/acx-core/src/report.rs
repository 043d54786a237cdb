//! Final reporting: the label gate and the report artifacts.
//!
//! The causal label is a conjunction — the audit gate must be open, a
//! pre-commitment must be locked, the lock must precede every confirmatory
//! estimate, the reported specification must equal the locked primary, and a
//! declared conflict of interest must carry an independent reviewer's
//! sign-off. Fail any conjunct and the analysis is labeled descriptive, with
//! the refusal and its reasons printed in the report body rather than
//! silently downgraded.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::audit::{AuditReport, FindingStatus, Gate};
use crate::commitment::{
    self, Overall, PreCommitment, ScrutinyLevel, Verdict,
};
use crate::estimators::EstimateResult;
use crate::kv::{self, fmt_f64, Document, Section};
use crate::ledger::{EntryKind, Ledger, LedgerError, MultiplicityReport, Taint};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("report input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Causal,
    Descriptive,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Causal => "causal",
            Label::Descriptive => "descriptive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateConjunct {
    pub id: &'static str,
    pub satisfied: bool,
    /// Present exactly when the conjunct fails.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision {
    pub label: Label,
    pub conjuncts: Vec<GateConjunct>,
}

impl GateDecision {
    pub fn reasons(&self) -> Vec<&str> {
        self.conjuncts
            .iter()
            .filter_map(|c| c.reason.as_deref())
            .collect()
    }
}

fn sorted_pairs(pairs: &[(String, String)]) -> Vec<(String, String)> {
    let mut p = pairs.to_vec();
    p.sort();
    p
}

/// Decides the label. `reported_spec` is the canonical key/value spec of the
/// estimate the narrative puts forward; `None` means no estimate is being
/// reported as the finding.
pub fn gate_label(
    audit: &AuditReport,
    commitment: Option<&PreCommitment>,
    ledger: &Ledger,
    reported_spec: Option<&[(String, String)]>,
) -> GateDecision {
    let mut conjuncts = Vec::new();
    let mut push = |id: &'static str, satisfied: bool, reason: String| {
        conjuncts.push(GateConjunct {
            id,
            satisfied,
            reason: if satisfied { None } else { Some(reason) },
        });
    };

    // 1. Audit gate open.
    let stops: Vec<&str> = audit
        .findings
        .iter()
        .filter(|f| {
            f.status == FindingStatus::Stop || f.status == FindingStatus::Unverifiable
        })
        .map(|f| f.requirement_id.as_str())
        .collect();
    push(
        "audit-gate-open",
        audit.gate == Gate::Open,
        format!(
            "the data audit blocked the gate (findings: {})",
            if stops.is_empty() { "see audit".to_string() } else { stops.join(", ") }
        ),
    );

    // 2. A pre-commitment is locked in the ledger.
    let lock_entry = ledger.entries.iter().find(|e| e.kind == EntryKind::Lock);
    push(
        "precommitment-locked",
        commitment.is_some() && lock_entry.is_some(),
        "no pre-commitment statement was locked before estimation".to_string(),
    );

    // 3. The lock precedes every confirmatory estimate, and at least one
    //    confirmatory estimate exists to report. Vacuously satisfied with no
    //    lock — that failure already belongs to conjunct 2.
    let confirmatory: Vec<_> = ledger
        .entries
        .iter()
        .filter(|e| e.kind == EntryKind::Estimate && e.taint == Taint::Confirmatory)
        .collect();
    let lock_precedes = match lock_entry {
        Some(lock) => {
            !confirmatory.is_empty() && confirmatory.iter().all(|e| e.index > lock.index)
        }
        None => true,
    };
    push(
        "lock-precedes-estimates",
        lock_precedes,
        "no confirmatory estimate follows the lock (exploratory runs cannot carry a causal claim)"
            .to_string(),
    );

    // 4. The reported specification equals the locked primary. Vacuous
    //    without a commitment (conjunct 2's failure); failed when a
    //    commitment exists but nothing — or something else — is reported.
    let spec_matches = match (commitment, reported_spec) {
        (Some(c), Some(spec)) => sorted_pairs(&c.primary_spec) == sorted_pairs(spec),
        (Some(_), None) => false,
        (None, _) => true,
    };
    push(
        "reported-spec-matches-lock",
        spec_matches,
        "the reported specification is not the locked primary specification".to_string(),
    );

    // 5. Conflict-of-interest scrutiny: a declared stake demands an
    //    independent reviewer's sign-off. Vacuous without a commitment.
    let coi_ok = match commitment {
        Some(c) => c.scrutiny() == ScrutinyLevel::Standard || c.review.is_some(),
        None => true,
    };
    push(
        "coi-scrutiny-satisfied",
        coi_ok,
        "a declared stake in the result requires an independent reviewer's sign-off".to_string(),
    );

    // A committed downgrade always yields a descriptive label.
    let downgraded = commitment.is_some_and(|c| c.downgrade_to_descriptive);
    let label = if conjuncts.iter().all(|c| c.satisfied) && !downgraded {
        Label::Causal
    } else {
        Label::Descriptive
    };
    GateDecision { label, conjuncts }
}

/// Names the recognized failure modes the artifacts exhibit.
pub fn tag_failure_modes(
    audit: &AuditReport,
    multiplicity: &MultiplicityReport,
    decision: &GateDecision,
) -> Vec<&'static str> {
    let mut tags = Vec::new();
    if audit
        .findings
        .iter()
        .any(|f| matches!(f.status, FindingStatus::Stop | FindingStatus::Flag))
    {
        tags.push("method-data-mismatch");
    }
    if multiplicity.selection_flag {
        tags.push("invisible-forking");
    }
    // Polished output without a passed gate is exactly the laundering risk:
    // the report prints the refusal in the headline instead of lending the
    // numbers its formatting authority.
    if decision.label == Label::Descriptive {
        tags.push("confidence-laundering-guard");
    }
    tags
}

#[derive(Debug, Clone)]
pub struct ReportInputs<'a> {
    pub audit: &'a AuditReport,
    pub commitment: Option<&'a PreCommitment>,
    pub ledger: &'a Ledger,
    pub reported: Option<&'a EstimateResult>,
    /// Realized metrics the falsification criteria are evaluated against.
    pub metrics: &'a BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct BuiltReport {
    pub markdown: String,
    pub record: String,
    pub decision: GateDecision,
    pub verdict: Option<Verdict>,
    pub multiplicity: MultiplicityReport,
    pub tags: Vec<&'static str>,
}

fn fmt_taint(t: Taint) -> &'static str {
    match t {
        Taint::Confirmatory => "confirmatory",
        Taint::Exploratory => "exploratory",
    }
}

/// Builds the deterministic report pair: human-readable Markdown and the
/// machine-readable record. Identical inputs produce identical bytes.
pub fn build_report(inputs: &ReportInputs) -> Result<BuiltReport, ReportError> {
    let reported_pairs = inputs.reported.map(|r| r.spec.canonical_pairs());
    let decision = gate_label(
        inputs.audit,
        inputs.commitment,
        inputs.ledger,
        reported_pairs.as_deref(),
    );
    let multiplicity = crate::ledger::multiplicity(inputs.ledger)?;
    let tags = tag_failure_modes(inputs.audit, &multiplicity, &decision);
    let verdict = inputs.commitment.map(|c| commitment::evaluate(c, inputs.metrics));

    let mut md = String::new();
    md.push_str("# Analysis report\n\n");
    match decision.label {
        Label::Causal => md.push_str("**Label: causal.** All gate conditions hold.\n\n"),
        Label::Descriptive => {
            md.push_str("**Label: descriptive — the causal label was refused.**\n\n");
            for reason in decision.reasons() {
                md.push_str(&format!("- {reason}\n"));
            }
            md.push('\n');
        }
    }
    if !tags.is_empty() {
        md.push_str(&format!("Failure modes present: {}.\n\n", tags.join(", ")));
    }

    md.push_str("## Gate conditions\n\n");
    for c in &decision.conjuncts {
        md.push_str(&format!(
            "- `{}`: {}\n",
            c.id,
            if c.satisfied { "satisfied" } else { "FAILED" }
        ));
    }
    md.push('\n');

    md.push_str("## Audit findings\n\n");
    md.push_str(&format!("Gate: **{}**.\n\n", inputs.audit.gate.as_str()));
    md.push_str("| requirement | status | note |\n|---|---|---|\n");
    for f in &inputs.audit.findings {
        md.push_str(&format!(
            "| {} | {} | {} |\n",
            f.requirement_id,
            f.status.as_str(),
            f.narrative.replace('|', "\\|")
        ));
    }
    md.push('\n');

    if let Some(r) = inputs.reported {
        md.push_str("## Reported estimate\n\n");
        md.push_str(&format!(
            "Effect {} (SE {}), 95% CI [{}, {}], p = {}; {} units, {} observations.\n\n",
            fmt_f64(r.effect),
            fmt_f64(r.se),
            fmt_f64(r.ci95.0),
            fmt_f64(r.ci95.1),
            fmt_f64(r.p_value),
            r.n_units,
            r.n_obs
        ));
        if let Some(path) = &r.per_period_effects {
            md.push_str("| period | effect | se |\n|---|---|---|\n");
            for (t, (e, se)) in path {
                md.push_str(&format!("| {t} | {} | {} |\n", fmt_f64(*e), fmt_f64(*se)));
            }
            md.push('\n');
        }
    } else {
        md.push_str("## Reported estimate\n\nNo estimate is reported as a finding.\n\n");
    }

    if let (Some(c), Some(verdict)) = (inputs.commitment, verdict.as_ref()) {
        md.push_str("## Pre-committed falsification criteria\n\n");
        md.push_str(&format!("Overall: **{}**.\n\n", verdict.overall.as_str()));
        for (name, eval) in &verdict.per_criterion {
            md.push_str(&format!(
                "- `{name}`: {}",
                if eval.triggered { "TRIGGERED" } else { "not triggered" }
            ));
            if !eval.missing.is_empty() {
                md.push_str(&format!(
                    " (missing metrics treated as triggering: {})",
                    eval.missing.join(", ")
                ));
            }
            if !eval.inputs.is_empty() {
                let shown: Vec<String> =
                    eval.inputs.iter().map(|(k, v)| format!("{k} = {}", fmt_f64(*v))).collect();
                md.push_str(&format!(" — {}", shown.join(", ")));
            }
            md.push('\n');
        }
        md.push('\n');

        md.push_str("## Reporting commitments\n\n");
        if c.reporting.is_empty() {
            md.push_str("(none declared)\n");
        }
        for item in &c.reporting {
            md.push_str(&format!("> {item}\n"));
        }
        md.push('\n');

        md.push_str("## Conflict of interest\n\n");
        md.push_str(&format!(
            "Declared stake: {}. Scrutiny level: {}. {}\n\n",
            if c.coi.has_stake { "yes" } else { "no" },
            c.scrutiny().as_str(),
            c.coi.narrative
        ));
        if let Some(review) = &c.review {
            md.push_str(&format!(
                "Reviewer sign-off: {} — {}\n\n",
                review.reviewer, review.statement
            ));
        }
    }

    md.push_str("## Specification history\n\n");
    if multiplicity.total_specs <= 1 && multiplicity.distinct_specs <= 1 {
        md.push_str("1 specification attempted.\n\n");
    } else {
        md.push_str(&format!(
            "{} estimation runs over {} distinct specifications ({} exploratory, {} confirmatory). Selection flag: **{}**.\n\n",
            multiplicity.total_specs,
            multiplicity.distinct_specs,
            multiplicity.exploratory,
            multiplicity.confirmatory,
            if multiplicity.selection_flag { "raised" } else { "not raised" }
        ));
    }
    if !multiplicity.chronology.is_empty() {
        md.push_str("| ledger index | spec fingerprint | taint | p |\n|---|---|---|---|\n");
        for row in &multiplicity.chronology {
            md.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                row.index,
                &row.fingerprint[..12],
                fmt_taint(row.taint),
                row.p_value.map(fmt_f64).unwrap_or_else(|| "—".into())
            ));
        }
        md.push('\n');
    }

    md.push_str("---\n");
    md.push_str(
        "All confidence intervals are 95%, effect ± 1.96 × SE, with cluster-robust \
         standard errors unless the method notes otherwise. Digests are SHA-256 over \
         canonical serializations.\n",
    );

    // Machine-readable record.
    let mut doc = Document::default();
    let mut head = Section::new("report");
    head.push("audit_digest", crate::audit::report_digest(inputs.audit));
    head.push("audit_gate", inputs.audit.gate.as_str());
    head.push("label", decision.label.as_str());
    if let Some(c) = inputs.commitment {
        head.push("lock_digest", commitment::lock_digest(c));
        head.push("scrutiny", c.scrutiny().as_str());
    }
    if !tags.is_empty() {
        head.push("tags", tags.join(";"));
    }
    doc.push(head);

    for c in &decision.conjuncts {
        let mut sec = Section::new(format!("gate.{}", c.id));
        sec.push("satisfied", if c.satisfied { "true" } else { "false" });
        if let Some(reason) = &c.reason {
            sec.push("reason", reason.clone());
        }
        doc.push(sec);
    }

    let mut mult = Section::new("multiplicity");
    mult.push("confirmatory", multiplicity.confirmatory.to_string());
    mult.push("distinct_specs", multiplicity.distinct_specs.to_string());
    mult.push("exploratory", multiplicity.exploratory.to_string());
    mult.push(
        "selection_flag",
        if multiplicity.selection_flag { "true" } else { "false" },
    );
    mult.push("total_specs", multiplicity.total_specs.to_string());
    doc.push(mult);

    if let Some(r) = inputs.reported {
        let mut sec = Section::new("result");
        sec.push("ci_high", fmt_f64(r.ci95.1));
        sec.push("ci_low", fmt_f64(r.ci95.0));
        sec.push("effect", fmt_f64(r.effect));
        sec.push("n_obs", r.n_obs.to_string());
        sec.push("n_units", r.n_units.to_string());
        sec.push("p", fmt_f64(r.p_value));
        sec.push("se", fmt_f64(r.se));
        sec.push("spec_fingerprint", r.spec.fingerprint());
        doc.push(sec);
    }

    if let Some(verdict) = verdict.as_ref() {
        let mut sec = Section::new("verdict");
        sec.push("overall", verdict.overall.as_str());
        doc.push(sec);
        for (name, eval) in &verdict.per_criterion {
            let mut vc = Section::new(format!("verdict.{name}"));
            vc.push("triggered", if eval.triggered { "true" } else { "false" });
            if !eval.missing.is_empty() {
                vc.push("missing", eval.missing.join(";"));
            }
            for (k, v) in &eval.inputs {
                vc.push(format!("input.{k}"), fmt_f64(*v));
            }
            doc.push(vc);
        }
    }

    let record = kv::serialize(&doc);
    Ok(BuiltReport { markdown: md, record, decision, verdict, multiplicity, tags })
}

/// Returns the label alone when the verdict matters more than the prose; the
/// criteria verdict can downgrade trust but never upgrades the label.
pub fn effective_claim(decision: &GateDecision, verdict: Option<&Verdict>) -> &'static str {
    match (decision.label, verdict.map(|v| v.overall)) {
        (Label::Causal, Some(Overall::TrustworthyAsCommitted) | None) => {
            "causal, trustworthy as committed"
        }
        (Label::Causal, Some(Overall::DistrustTriggered)) => {
            "causal label withheld: a pre-committed distrust criterion triggered"
        }
        (Label::Descriptive, _) => "descriptive only",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{run_audit, AttestationAnswer, Attestations};
    use crate::commitment::{ConflictDisclosure, Criterion, PreCommitment, Review};
    use crate::contract::builtin_contract;
    use crate::criteria;
    use crate::estimators::{did_2x2, EstimatorKind, SpecDescriptor};
    use crate::ledger::{estimate_payload, open, NewEntry};
    use crate::synthgen::{generate, scenario};
    use tempfile::tempdir;

    struct Fixture {
        audit: AuditReport,
        commitment: PreCommitment,
        result: EstimateResult,
        dir: tempfile::TempDir,
        path: std::path::PathBuf,
    }

    fn clean_fixture() -> Fixture {
        let spec = scenario("clean-2x2").unwrap();
        let (panel, _) = generate(&spec).unwrap();
        let contract = builtin_contract(spec.method).unwrap();
        let mut answers = Attestations::new();
        answers.insert("aggregation-unit".into(), AttestationAnswer::Affirmed);
        answers.insert("provenance".into(), AttestationAnswer::Affirmed);
        let audit = run_audit(&panel, &contract, &answers, None).unwrap();

        let est_spec = SpecDescriptor::new(EstimatorKind::DiD2x2);
        let result = did_2x2(&panel, &est_spec).unwrap();
        let commitment = PreCommitment {
            primary_spec: est_spec.canonical_pairs(),
            criteria: vec![Criterion {
                name: "pretrend".into(),
                expr: criteria::parse("pretrend.p < threshold.alpha").unwrap(),
            }],
            thresholds: BTreeMap::from([("alpha".to_string(), 0.10)]),
            reporting: vec!["Report every attempted specification.".into()],
            coi: ConflictDisclosure { has_stake: false, narrative: "No stake.".into() },
            audit_digest: crate::audit::report_digest(&audit),
            review: None,
            downgrade_to_descriptive: false,
        };
        let dir = tempdir().unwrap();
        let path = dir.path().join("runs.acxl");
        Fixture { audit, commitment, result, dir, path }
    }

    fn lock_and_estimate(f: &Fixture) {
        let lock =
            crate::commitment::lock(&f.path, &f.commitment, "2026-08-24T09:00:00Z").unwrap();
        crate::ledger::append(
            &f.path,
            NewEntry {
                kind: EntryKind::Estimate,
                timestamp: "2026-08-24T09:10:00Z".into(),
                taint: Taint::Confirmatory,
                lock_ref: Some(lock.digest),
                payload: estimate_payload(
                    &f.result.spec.canonical_pairs(),
                    f.result.effect,
                    f.result.se,
                    f.result.p_value,
                ),
            },
        )
        .unwrap();
    }

    fn metrics_for(audit: &AuditReport) -> BTreeMap<String, f64> {
        let mut m = crate::audit::metrics(audit);
        m.insert("threshold.alpha".into(), 0.10);
        m
    }

    #[test]
    fn all_conditions_met_labels_causal() {
        let f = clean_fixture();
        lock_and_estimate(&f);
        let ledger = open(&f.path).unwrap();
        let metrics = metrics_for(&f.audit);
        let built = build_report(&ReportInputs {
            audit: &f.audit,
            commitment: Some(&f.commitment),
            ledger: &ledger,
            reported: Some(&f.result),
            metrics: &metrics,
        })
        .unwrap();
        assert_eq!(built.decision.label, Label::Causal);
        assert!(built.decision.conjuncts.iter().all(|c| c.satisfied));
        assert_eq!(
            built.verdict.as_ref().unwrap().overall,
            Overall::TrustworthyAsCommitted
        );
        assert!(built.tags.is_empty());
        assert!(built.markdown.contains("Label: causal"));
        assert!(built.markdown.contains("1 specification attempted"));
        assert!(built.markdown.contains("Report every attempted specification."));
        drop(f.dir);
    }

    #[test]
    fn blocked_audit_fails_only_that_conjunct() {
        let spec = scenario("health-plan-2.1").unwrap();
        let (panel, _) = generate(&spec).unwrap();
        let contract = builtin_contract(spec.method).unwrap();
        let mut answers = Attestations::new();
        answers.insert("aggregation-unit".into(), AttestationAnswer::Affirmed);
        answers.insert("provenance".into(), AttestationAnswer::Affirmed);
        let audit = run_audit(&panel, &contract, &answers, None).unwrap();

        let mut f = clean_fixture();
        f.audit = audit;
        f.commitment.audit_digest = crate::audit::report_digest(&f.audit);
        lock_and_estimate(&f);
        let ledger = open(&f.path).unwrap();
        let decision = gate_label(
            &f.audit,
            Some(&f.commitment),
            &ledger,
            Some(&f.result.spec.canonical_pairs()),
        );
        assert_eq!(decision.label, Label::Descriptive);
        let failed: Vec<&str> = decision
            .conjuncts
            .iter()
            .filter(|c| !c.satisfied)
            .map(|c| c.id)
            .collect();
        assert_eq!(failed, vec!["audit-gate-open"]);
        drop(f.dir);
    }

    #[test]
    fn missing_lock_fails_only_lock_conjunct() {
        let f = clean_fixture();
        // Only an exploratory estimate, no lock.
        crate::ledger::append(
            &f.path,
            NewEntry {
                kind: EntryKind::Estimate,
                timestamp: "2026-08-24T09:00:00Z".into(),
                taint: Taint::Exploratory,
                lock_ref: None,
                payload: estimate_payload(
                    &f.result.spec.canonical_pairs(),
                    f.result.effect,
                    f.result.se,
                    f.result.p_value,
                ),
            },
        )
        .unwrap();
        let ledger = open(&f.path).unwrap();
        let decision = gate_label(
            &f.audit,
            None,
            &ledger,
            Some(&f.result.spec.canonical_pairs()),
        );
        assert_eq!(decision.label, Label::Descriptive);
        let failed: Vec<&str> = decision
            .conjuncts
            .iter()
            .filter(|c| !c.satisfied)
            .map(|c| c.id)
            .collect();
        // With no commitment at all, only the lock conjunct fails; the
        // downstream conjuncts are vacuous because they are conditions on
        // the (absent) commitment.
        assert_eq!(failed, vec!["precommitment-locked"]);
        drop(f.dir);
    }

    #[test]
    fn spec_drift_fails_match_conjunct() {
        let f = clean_fixture();
        lock_and_estimate(&f);
        let ledger = open(&f.path).unwrap();
        let mut drifted = SpecDescriptor::new(EstimatorKind::DiD2x2);
        drifted.sample_filter = "plan == paid".into();
        let decision = gate_label(
            &f.audit,
            Some(&f.commitment),
            &ledger,
            Some(&drifted.canonical_pairs()),
        );
        let failed: Vec<&str> = decision
            .conjuncts
            .iter()
            .filter(|c| !c.satisfied)
            .map(|c| c.id)
            .collect();
        assert_eq!(failed, vec!["reported-spec-matches-lock"]);
        assert_eq!(decision.label, Label::Descriptive);
        drop(f.dir);
    }

    #[test]
    fn stake_without_review_fails_coi_conjunct() {
        let mut f = clean_fixture();
        f.commitment.coi.has_stake = true;
        lock_and_estimate(&f);
        let ledger = open(&f.path).unwrap();
        let decision = gate_label(
            &f.audit,
            Some(&f.commitment),
            &ledger,
            Some(&f.result.spec.canonical_pairs()),
        );
        let failed: Vec<&str> = decision
            .conjuncts
            .iter()
            .filter(|c| !c.satisfied)
            .map(|c| c.id)
            .collect();
        assert_eq!(failed, vec!["coi-scrutiny-satisfied"]);

        // A reviewer sign-off restores the label.
        f.commitment.review = Some(Review {
            reviewer: "independent-methods-board".into(),
            statement: "Reviewed the lock and audit; no objection.".into(),
        });
        let decision = gate_label(
            &f.audit,
            Some(&f.commitment),
            &ledger,
            Some(&f.result.spec.canonical_pairs()),
        );
        assert_eq!(decision.label, Label::Causal);
        drop(f.dir);
    }

    #[test]
    fn forking_history_is_fully_disclosed_and_tagged() {
        let f = clean_fixture();
        // Three exploratory specs before any lock, the last one "wins".
        for (i, filter) in ["", "plan == paid", "plan == paid and channel != affiliate"]
            .iter()
            .enumerate()
        {
            let mut s = SpecDescriptor::new(EstimatorKind::DiD2x2);
            if !filter.is_empty() {
                s.sample_filter = (*filter).into();
            }
            crate::ledger::append(
                &f.path,
                NewEntry {
                    kind: EntryKind::Estimate,
                    timestamp: format!("2026-08-24T08:0{i}:00Z"),
                    taint: Taint::Exploratory,
                    lock_ref: None,
                    payload: estimate_payload(&s.canonical_pairs(), 1.0, 0.5, 0.04),
                },
            )
            .unwrap();
        }
        let ledger = open(&f.path).unwrap();
        let metrics = metrics_for(&f.audit);
        let built = build_report(&ReportInputs {
            audit: &f.audit,
            commitment: None,
            ledger: &ledger,
            reported: Some(&f.result),
            metrics: &metrics,
        })
        .unwrap();
        assert_eq!(built.multiplicity.total_specs, 3);
        assert_eq!(built.multiplicity.distinct_specs, 3);
        assert!(built.multiplicity.selection_flag);
        assert!(built.tags.contains(&"invisible-forking"));
        assert!(built.tags.contains(&"confidence-laundering-guard"));
        assert!(built.markdown.contains("3 estimation runs over 3 distinct specifications"));
        // Every run appears in the chronology table.
        assert_eq!(built.markdown.matches("| exploratory |").count(), 3);
        drop(f.dir);
    }

    #[test]
    fn downgrade_commitment_never_labels_causal() {
        let mut f = clean_fixture();
        f.commitment.downgrade_to_descriptive = true;
        lock_and_estimate(&f);
        let ledger = open(&f.path).unwrap();
        let decision = gate_label(
            &f.audit,
            Some(&f.commitment),
            &ledger,
            Some(&f.result.spec.canonical_pairs()),
        );
        assert_eq!(decision.label, Label::Descriptive);
        drop(f.dir);
    }

    #[test]
    fn report_is_byte_deterministic() {
        let f = clean_fixture();
        lock_and_estimate(&f);
        let ledger = open(&f.path).unwrap();
        let metrics = metrics_for(&f.audit);
        let inputs = ReportInputs {
            audit: &f.audit,
            commitment: Some(&f.commitment),
            ledger: &ledger,
            reported: Some(&f.result),
            metrics: &metrics,
        };
        let a = build_report(&inputs).unwrap();
        let b = build_report(&inputs).unwrap();
        assert_eq!(a.markdown, b.markdown);
        assert_eq!(a.record, b.record);
        drop(f.dir);
    }
}
