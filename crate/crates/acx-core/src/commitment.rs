//! Pre-commitment statements: the primary specification, falsification
//! criteria, reporting commitments, and conflict disclosure an analyst locks
//! before running the confirmatory estimate.
//!
//! A statement is serialized in canonical form, digested with SHA-256, and
//! appended to the fork ledger as a Lock entry. The ledger then refuses any
//! confirmatory estimate whose specification differs from the locked one,
//! and the final report compares outcomes against the locked criteria —
//! never the other way around.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::audit::{AuditReport, Gate};
use crate::criteria::{self, CriteriaError, Expr};
use crate::digest::sha256_hex;
use crate::kv::{self, Document, Section};
use crate::ledger::{self, EntryKind, ForkLedgerEntry, LedgerError, NewEntry, Taint};

#[derive(Debug, Error)]
pub enum CommitmentError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("criterion `{name}`: {source}")]
    Criterion {
        name: String,
        #[source]
        source: CriteriaError,
    },
    #[error("the audit gate is blocked; lock requires `downgrade = descriptive`")]
    GateBlocked,
    #[error("commitment audit_digest does not match the audit report")]
    AuditDigestMismatch,
    #[error("a commitment must declare at least one falsification criterion")]
    NoCriteria,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictDisclosure {
    /// Whether the analyst (or their team) has a stake in the answer.
    pub has_stake: bool,
    pub narrative: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScrutinyLevel {
    Standard,
    Elevated,
}

impl ScrutinyLevel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScrutinyLevel::Standard => "standard",
            ScrutinyLevel::Elevated => "elevated",
        }
    }
}

/// Independent-reviewer countersignature; required for the causal label when
/// scrutiny is elevated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Review {
    pub reviewer: String,
    pub statement: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub name: String,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreCommitment {
    /// Canonical key/value pairs of the primary specification
    /// (see `SpecDescriptor::canonical_pairs`), kept sorted.
    pub primary_spec: Vec<(String, String)>,
    /// Falsification criteria; when any triggers, the verdict is distrust.
    pub criteria: Vec<Criterion>,
    /// Named constants the criteria reference as `threshold.<name>`; locking
    /// them here keeps the cutoffs out of post-hoc reach.
    pub thresholds: BTreeMap<String, f64>,
    /// Verbatim reporting commitments, reproduced in the final report.
    pub reporting: Vec<String>,
    pub coi: ConflictDisclosure,
    /// Digest of the audit report this commitment was written against.
    pub audit_digest: String,
    pub review: Option<Review>,
    /// Set when the analyst accepts a descriptive-only label because the
    /// audit gate was blocked.
    pub downgrade_to_descriptive: bool,
}

impl PreCommitment {
    pub fn scrutiny(&self) -> ScrutinyLevel {
        if self.coi.has_stake {
            ScrutinyLevel::Elevated
        } else {
            ScrutinyLevel::Standard
        }
    }
}

/// Structural validation, independent of any audit.
pub fn validate(c: &PreCommitment) -> Result<(), CommitmentError> {
    if c.criteria.is_empty() {
        return Err(CommitmentError::NoCriteria);
    }
    for criterion in &c.criteria {
        criteria::validate_namespace(&criterion.expr).map_err(|e| {
            CommitmentError::Criterion { name: criterion.name.clone(), source: e }
        })?;
    }
    Ok(())
}

/// Validation against the audit the commitment claims to follow.
pub fn validate_against_audit(
    c: &PreCommitment,
    audit: &AuditReport,
) -> Result<(), CommitmentError> {
    validate(c)?;
    if c.audit_digest != crate::audit::report_digest(audit) {
        return Err(CommitmentError::AuditDigestMismatch);
    }
    if audit.gate == Gate::Blocked && !c.downgrade_to_descriptive {
        return Err(CommitmentError::GateBlocked);
    }
    Ok(())
}

// --- serialization ------------------------------------------------------------

pub fn serialize_commitment(c: &PreCommitment) -> String {
    let mut doc = Document::default();

    let mut coi = Section::new("coi");
    coi.push("has_stake", if c.coi.has_stake { "true" } else { "false" });
    coi.push("narrative", c.coi.narrative.clone());
    doc.push(coi);

    for criterion in &c.criteria {
        let mut sec = Section::new(format!("criterion.{}", criterion.name));
        sec.push("expr", criteria::print(&criterion.expr));
        doc.push(sec);
    }

    let mut meta = Section::new("meta");
    meta.push("audit_digest", c.audit_digest.clone());
    if c.downgrade_to_descriptive {
        meta.push("downgrade", "descriptive");
    }
    doc.push(meta);

    let mut spec = Section::new("primary_spec");
    let mut pairs = c.primary_spec.clone();
    pairs.sort();
    for (k, v) in pairs {
        spec.push(k, v);
    }
    doc.push(spec);

    if !c.thresholds.is_empty() {
        let mut thresholds = Section::new("thresholds");
        for (k, v) in &c.thresholds {
            thresholds.push(k.clone(), kv::fmt_f64(*v));
        }
        doc.push(thresholds);
    }

    let mut reporting = Section::new("reporting");
    for (i, item) in c.reporting.iter().enumerate() {
        // Zero-padded keys keep order stable under canonical key sorting.
        reporting.push(format!("item.{:03}", i + 1), item.clone());
    }
    doc.push(reporting);

    if let Some(review) = &c.review {
        let mut sec = Section::new("review");
        sec.push("reviewer", review.reviewer.clone());
        sec.push("statement", review.statement.clone());
        doc.push(sec);
    }

    kv::canonical(&doc)
}

pub fn parse_commitment(text: &str) -> Result<PreCommitment, CommitmentError> {
    let doc = kv::parse(text).map_err(|e| CommitmentError::Parse(e.to_string()))?;

    let coi_sec = doc
        .section("coi")
        .ok_or_else(|| CommitmentError::Parse("missing [coi] section".into()))?;
    let has_stake = match coi_sec.get("has_stake") {
        Some("true") => true,
        Some("false") => false,
        other => {
            return Err(CommitmentError::Parse(format!(
                "coi.has_stake must be true/false, got {other:?}"
            )))
        }
    };
    let coi = ConflictDisclosure {
        has_stake,
        narrative: coi_sec
            .get("narrative")
            .ok_or_else(|| CommitmentError::Parse("missing coi.narrative".into()))?
            .to_string(),
    };

    let mut criteria_list = Vec::new();
    for sec in doc.sections_with_prefix("criterion.") {
        let name = sec.name.trim_start_matches("criterion.").to_string();
        let text = sec
            .get("expr")
            .ok_or_else(|| CommitmentError::Parse(format!("criterion.{name} lacks expr")))?;
        let expr = criteria::parse(text)
            .map_err(|e| CommitmentError::Criterion { name: name.clone(), source: e })?;
        criteria_list.push(Criterion { name, expr });
    }

    let meta = doc
        .section("meta")
        .ok_or_else(|| CommitmentError::Parse("missing [meta] section".into()))?;
    let audit_digest = meta
        .get("audit_digest")
        .ok_or_else(|| CommitmentError::Parse("missing meta.audit_digest".into()))?
        .to_string();
    let downgrade_to_descriptive = match meta.get("downgrade") {
        None => false,
        Some("descriptive") => true,
        Some(other) => {
            return Err(CommitmentError::Parse(format!(
                "meta.downgrade must be `descriptive`, got `{other}`"
            )))
        }
    };

    let spec_sec = doc
        .section("primary_spec")
        .ok_or_else(|| CommitmentError::Parse("missing [primary_spec] section".into()))?;
    let mut primary_spec = spec_sec.entries.clone();
    primary_spec.sort();

    let mut thresholds = BTreeMap::new();
    if let Some(sec) = doc.section("thresholds") {
        for (k, v) in &sec.entries {
            let x = v.parse::<f64>().map_err(|_| {
                CommitmentError::Parse(format!("thresholds.{k} is not a number: `{v}`"))
            })?;
            thresholds.insert(k.clone(), x);
        }
    }

    let reporting = doc
        .section("reporting")
        .map(|s| {
            let mut items = s.entries.clone();
            items.sort();
            items.into_iter().map(|(_, v)| v).collect::<Vec<_>>()
        })
        .unwrap_or_default();

    let review = doc.section("review").map(|s| -> Result<Review, CommitmentError> {
        Ok(Review {
            reviewer: s
                .get("reviewer")
                .ok_or_else(|| CommitmentError::Parse("missing review.reviewer".into()))?
                .to_string(),
            statement: s
                .get("statement")
                .ok_or_else(|| CommitmentError::Parse("missing review.statement".into()))?
                .to_string(),
        })
    });
    let review = match review {
        Some(r) => Some(r?),
        None => None,
    };

    let c = PreCommitment {
        primary_spec,
        criteria: criteria_list,
        thresholds,
        reporting,
        coi,
        audit_digest,
        review,
        downgrade_to_descriptive,
    };
    validate(&c)?;
    Ok(c)
}

/// SHA-256 of the canonical serialization; this is what the Lock entry and
/// every later artifact reference.
pub fn lock_digest(c: &PreCommitment) -> String {
    sha256_hex(serialize_commitment(c).as_bytes())
}

/// Appends a Lock entry holding the full canonical statement to the ledger.
/// The returned entry's digest is the `lock_ref` confirmatory estimates must
/// carry.
pub fn lock(
    ledger_path: &Path,
    c: &PreCommitment,
    timestamp: &str,
) -> Result<ForkLedgerEntry, CommitmentError> {
    validate(c)?;
    let entry = ledger::append(
        ledger_path,
        NewEntry {
            kind: EntryKind::Lock,
            timestamp: timestamp.to_string(),
            taint: Taint::Confirmatory,
            lock_ref: None,
            payload: serialize_commitment(c),
        },
    )?;
    Ok(entry)
}

// --- evaluation ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overall {
    TrustworthyAsCommitted,
    DistrustTriggered,
}

impl Overall {
    pub fn as_str(&self) -> &'static str {
        match self {
            Overall::TrustworthyAsCommitted => "trustworthy-as-committed",
            Overall::DistrustTriggered => "distrust-triggered",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub per_criterion: Vec<(String, criteria::Evaluation)>,
    pub overall: Overall,
}

/// Evaluates every locked criterion against the realized metrics. A missing
/// metric counts as triggered: what cannot be checked cannot exonerate. The
/// locked `[thresholds]` constants are injected as `threshold.<name>` and
/// override any same-named metric, so the cutoffs in force are always the
/// committed ones.
pub fn evaluate(c: &PreCommitment, metrics: &BTreeMap<String, f64>) -> Verdict {
    let mut merged = metrics.clone();
    for (k, v) in &c.thresholds {
        merged.insert(format!("threshold.{k}"), *v);
    }
    let per_criterion: Vec<(String, criteria::Evaluation)> = c
        .criteria
        .iter()
        .map(|cr| (cr.name.clone(), criteria::evaluate(&cr.expr, &merged)))
        .collect();
    let overall = if per_criterion.iter().any(|(_, e)| e.triggered) {
        Overall::DistrustTriggered
    } else {
        Overall::TrustworthyAsCommitted
    };
    Verdict { per_criterion, overall }
}
