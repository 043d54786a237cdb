//! Tamper-evident, append-only fork ledger.
//!
//! Every specification attempted — confirmatory or exploratory — is recorded
//! as one line of an `.acxl` file. Each line carries the digest of its
//! predecessor's full serialized form, so any edit, reorder, or truncation
//! breaks the chain. Entry 0 chains from the fixed genesis constant, which is
//! also the literal first line of the file.
//!
//! Line format (tab-separated `key=value` fields, fixed order):
//! `index=.. kind=.. timestamp=.. taint=.. [lock_ref=..] payload_digest=..
//!  payload=.. prev_digest=.. digest=..`
//! with the payload percent-escaped so it stays on one line. The trailing
//! `digest` is the SHA-256 of everything before it on the line.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::digest::sha256_hex;
use crate::kv;

pub const GENESIS: &str = "acxl-genesis-v1";

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("another writer holds the ledger lock at {0}")]
    ConcurrentWriter(PathBuf),
    #[error("ledger chain mismatch: cannot append to unverified ledger (broken at entry {0})")]
    ChainMismatch(usize),
    #[error("malformed ledger line {0}: {1}")]
    Malformed(usize, String),
    #[error("confirmatory estimate requires lock_ref to an existing Lock entry")]
    MissingLockRef,
    #[error("confirmatory estimate spec does not match the locked primary spec")]
    SpecMismatch,
    #[error("payload is not parseable key/value text: {0}")]
    Payload(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Lock,
    Estimate,
    Audit,
    Note,
}

impl EntryKind {
    fn as_str(&self) -> &'static str {
        match self {
            EntryKind::Lock => "lock",
            EntryKind::Estimate => "estimate",
            EntryKind::Audit => "audit",
            EntryKind::Note => "note",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "lock" => Some(EntryKind::Lock),
            "estimate" => Some(EntryKind::Estimate),
            "audit" => Some(EntryKind::Audit),
            "note" => Some(EntryKind::Note),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Taint {
    Confirmatory,
    Exploratory,
}

impl Taint {
    fn as_str(&self) -> &'static str {
        match self {
            Taint::Confirmatory => "confirmatory",
            Taint::Exploratory => "exploratory",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "confirmatory" => Some(Taint::Confirmatory),
            "exploratory" => Some(Taint::Exploratory),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForkLedgerEntry {
    pub index: u64,
    pub kind: EntryKind,
    pub timestamp: String,
    pub taint: Taint,
    /// Digest of the Lock entry a confirmatory estimate commits to.
    pub lock_ref: Option<String>,
    pub payload_digest: String,
    pub payload: String,
    pub prev_digest: String,
    /// Digest of this entry's own serialized form (the trailing field).
    pub digest: String,
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '%' => out.push_str("%25"),
            '\t' => out.push_str("%09"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape(text: &str) -> Result<String, String> {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            if i + 3 > bytes.len() {
                return Err("truncated escape".into());
            }
            let hex = &text[i + 1..i + 3];
            let v = u8::from_str_radix(hex, 16).map_err(|_| format!("bad escape %{hex}"))?;
            out.push(v as char);
            i += 3;
        } else {
            out.push(bytes[i] as char);
            i += 1;
        }
    }
    Ok(out)
}

fn entry_core(entry: &ForkLedgerEntry) -> String {
    let mut parts = vec![
        format!("index={}", entry.index),
        format!("kind={}", entry.kind.as_str()),
        format!("timestamp={}", entry.timestamp),
        format!("taint={}", entry.taint.as_str()),
    ];
    if let Some(r) = &entry.lock_ref {
        parts.push(format!("lock_ref={r}"));
    }
    parts.push(format!("payload_digest={}", entry.payload_digest));
    parts.push(format!("payload={}", escape(&entry.payload)));
    parts.push(format!("prev_digest={}", entry.prev_digest));
    parts.join("\t")
}

fn serialize_entry(entry: &ForkLedgerEntry) -> String {
    format!("{}\tdigest={}", entry_core(entry), entry.digest)
}

fn parse_entry(line: &str, line_no: usize) -> Result<ForkLedgerEntry, LedgerError> {
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for part in line.split('\t') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| LedgerError::Malformed(line_no, format!("field `{part}` has no `=`")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| -> Result<&str, LedgerError> {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| LedgerError::Malformed(line_no, format!("missing field `{k}`")))
    };
    let index: u64 = get("index")?
        .parse()
        .map_err(|_| LedgerError::Malformed(line_no, "bad index".into()))?;
    let kind = EntryKind::parse(get("kind")?)
        .ok_or_else(|| LedgerError::Malformed(line_no, "bad kind".into()))?;
    let taint = Taint::parse(get("taint")?)
        .ok_or_else(|| LedgerError::Malformed(line_no, "bad taint".into()))?;
    let payload = unescape(get("payload")?)
        .map_err(|e| LedgerError::Malformed(line_no, format!("payload: {e}")))?;
    Ok(ForkLedgerEntry {
        index,
        kind,
        timestamp: get("timestamp")?.to_string(),
        taint,
        lock_ref: fields.get("lock_ref").map(|s| s.to_string()),
        payload_digest: get("payload_digest")?.to_string(),
        payload,
        prev_digest: get("prev_digest")?.to_string(),
        digest: get("digest")?.to_string(),
    })
}

/// Outcome of a chain verification pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyOutcome {
    Ok,
    /// Index (0-based entry index) of the first entry at which the chain is
    /// broken.
    BrokenAt(usize),
}

/// Parsed ledger plus its raw lines (needed for chain digests).
#[derive(Debug, Clone)]
pub struct Ledger {
    pub entries: Vec<ForkLedgerEntry>,
    lines: Vec<String>,
}

impl Ledger {
    pub fn tip_digest(&self) -> String {
        match self.lines.last() {
            Some(line) => sha256_hex(line.as_bytes()),
            None => sha256_hex(GENESIS.as_bytes()),
        }
    }
}

/// Recomputes the digest chain over the raw file bytes. Breakage is a result,
/// not an error: any malformed, re-ordered, edited, or truncated entry is
/// reported as the first broken index.
pub fn verify_bytes(bytes: &[u8]) -> VerifyOutcome {
    let text = match std::str::from_utf8(bytes) {
        Ok(t) => t,
        Err(_) => return VerifyOutcome::BrokenAt(0),
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first == GENESIS => {}
        _ => return VerifyOutcome::BrokenAt(0),
    }
    let mut prev_line_digest = sha256_hex(GENESIS.as_bytes());
    let mut tip: Option<(usize, ForkLedgerEntry)> = None;
    for (i, line) in lines.enumerate() {
        // The chain link hashes the predecessor's full line, stored digest
        // included, so any interior mutation is reported at the successor.
        let entry = match parse_entry(line, i) {
            Ok(e) => e,
            Err(_) => return VerifyOutcome::BrokenAt(i),
        };
        if entry.index != i as u64 || entry.prev_digest != prev_line_digest {
            return VerifyOutcome::BrokenAt(i);
        }
        prev_line_digest = sha256_hex(line.as_bytes());
        tip = Some((i, entry));
    }
    // The tip has no successor, so its own stored digests are recomputed here;
    // this is what catches tampering with or truncation of the last entry.
    if let Some((i, entry)) = tip {
        if entry.payload_digest != sha256_hex(entry.payload.as_bytes())
            || entry.digest != sha256_hex(entry_core(&entry).as_bytes())
        {
            return VerifyOutcome::BrokenAt(i);
        }
    }
    VerifyOutcome::Ok
}

/// Reads and verifies a ledger file, creating an empty one (genesis line
/// only) if it does not exist.
pub fn open(path: &Path) -> Result<Ledger, LedgerError> {
    if !path.exists() {
        fs::write(path, format!("{GENESIS}\n"))?;
    }
    let bytes = fs::read(path)?;
    match verify_bytes(&bytes) {
        VerifyOutcome::Ok => {}
        VerifyOutcome::BrokenAt(i) => return Err(LedgerError::ChainMismatch(i)),
    }
    let text = String::from_utf8(bytes).expect("verified ledger is utf-8");
    let mut entries = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in text.lines().skip(1).enumerate() {
        entries.push(parse_entry(line, i)?);
        lines.push(line.to_string());
    }
    Ok(Ledger { entries, lines })
}

/// Advisory single-writer lock, released on drop.
pub struct WriterLock {
    path: PathBuf,
}

impl WriterLock {
    pub fn acquire(ledger_path: &Path) -> Result<Self, LedgerError> {
        let mut os = ledger_path.as_os_str().to_os_string();
        os.push(".lock");
        let path = PathBuf::from(os);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WriterLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(LedgerError::ConcurrentWriter(path))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// What to append; the chain fields are computed inside `append`.
#[derive(Debug, Clone)]
pub struct NewEntry {
    pub kind: EntryKind,
    pub timestamp: String,
    pub taint: Taint,
    pub lock_ref: Option<String>,
    pub payload: String,
}

fn section_pairs(doc: &kv::Document, name: &str) -> Option<Vec<(String, String)>> {
    doc.section(name).map(|s| {
        let mut pairs = s.entries.clone();
        pairs.sort();
        pairs
    })
}

/// Appends one entry, enforcing the single-writer contract, chain integrity,
/// and — for confirmatory estimates — lock-before-estimate with a matching
/// primary spec. The file is rewritten via a temp file and rename so a crash
/// never leaves a half-written tip.
pub fn append(path: &Path, new: NewEntry) -> Result<ForkLedgerEntry, LedgerError> {
    let _lock = WriterLock::acquire(path)?;
    let ledger = open(path)?;

    if new.kind == EntryKind::Estimate && new.taint == Taint::Confirmatory {
        let lock_ref = new.lock_ref.as_deref().ok_or(LedgerError::MissingLockRef)?;
        let lock_entry = ledger
            .entries
            .iter()
            .find(|e| e.kind == EntryKind::Lock && e.digest == lock_ref)
            .ok_or(LedgerError::MissingLockRef)?;
        let lock_doc = kv::parse(&lock_entry.payload)
            .map_err(|e| LedgerError::Payload(e.to_string()))?;
        let est_doc =
            kv::parse(&new.payload).map_err(|e| LedgerError::Payload(e.to_string()))?;
        let primary = section_pairs(&lock_doc, "primary_spec")
            .ok_or_else(|| LedgerError::Payload("lock payload lacks [primary_spec]".into()))?;
        let spec = section_pairs(&est_doc, "spec")
            .ok_or_else(|| LedgerError::Payload("estimate payload lacks [spec]".into()))?;
        if primary != spec {
            return Err(LedgerError::SpecMismatch);
        }
    }

    let mut entry = ForkLedgerEntry {
        index: ledger.entries.len() as u64,
        kind: new.kind,
        timestamp: new.timestamp,
        taint: new.taint,
        lock_ref: new.lock_ref,
        payload_digest: sha256_hex(new.payload.as_bytes()),
        payload: new.payload,
        prev_digest: ledger.tip_digest(),
        digest: String::new(),
    };
    entry.digest = sha256_hex(entry_core(&entry).as_bytes());
    let line = serialize_entry(&entry);

    let mut contents = format!("{GENESIS}\n");
    for l in &ledger.lines {
        contents.push_str(l);
        contents.push('\n');
    }
    contents.push_str(&line);
    contents.push('\n');

    let mut tmp_os = path.as_os_str().to_os_string();
    tmp_os.push(".tmp");
    let tmp = PathBuf::from(tmp_os);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(entry)
}

// --- multiplicity ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ChronologyRow {
    pub index: u64,
    pub fingerprint: String,
    pub taint: Taint,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicityReport {
    pub total_specs: usize,
    pub distinct_specs: usize,
    pub confirmatory: usize,
    pub exploratory: usize,
    pub selection_flag: bool,
    pub chronology: Vec<ChronologyRow>,
}

fn spec_fingerprint_of(pairs: &[(String, String)]) -> String {
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    sha256_hex(text.as_bytes())
}

/// Summarizes every estimation in insertion order: spec counts, taint counts,
/// and the selection flag. No filtering path exists — every Estimate entry
/// appears in the chronology regardless of taint or outcome.
pub fn multiplicity(ledger: &Ledger) -> Result<MultiplicityReport, LedgerError> {
    let mut chronology = Vec::new();
    let mut distinct = std::collections::BTreeSet::new();
    let mut confirmatory = 0usize;
    let mut exploratory = 0usize;
    // Locked primary fingerprint and the index of the lock entry, if any.
    let mut locked_primary: Option<(String, u64)> = None;
    let mut exploratory_before_lock: Vec<(String, u64)> = Vec::new();

    for entry in &ledger.entries {
        match entry.kind {
            EntryKind::Lock => {
                if locked_primary.is_none() {
                    let doc = kv::parse(&entry.payload)
                        .map_err(|e| LedgerError::Payload(e.to_string()))?;
                    if let Some(pairs) = section_pairs(&doc, "primary_spec") {
                        locked_primary = Some((spec_fingerprint_of(&pairs), entry.index));
                    }
                }
            }
            EntryKind::Estimate => {
                let doc = kv::parse(&entry.payload)
                    .map_err(|e| LedgerError::Payload(e.to_string()))?;
                let pairs = section_pairs(&doc, "spec")
                    .ok_or_else(|| LedgerError::Payload("estimate payload lacks [spec]".into()))?;
                let fingerprint = spec_fingerprint_of(&pairs);
                let p_value = doc
                    .section("result")
                    .and_then(|s| s.get("p"))
                    .and_then(|v| v.parse().ok());
                match entry.taint {
                    Taint::Confirmatory => confirmatory += 1,
                    Taint::Exploratory => {
                        exploratory += 1;
                        exploratory_before_lock.push((fingerprint.clone(), entry.index));
                    }
                }
                distinct.insert(fingerprint.clone());
                chronology.push(ChronologyRow {
                    index: entry.index,
                    fingerprint,
                    taint: entry.taint,
                    p_value,
                });
            }
            _ => {}
        }
    }

    let reported_not_primary = match (&locked_primary, chronology.last()) {
        (Some((primary, _)), Some(last)) => last.fingerprint != *primary,
        (None, Some(_)) => true,
        _ => false,
    };
    let explored_then_locked = match &locked_primary {
        Some((primary, lock_index)) => exploratory_before_lock
            .iter()
            .any(|(fp, idx)| fp == primary && *idx < *lock_index),
        None => false,
    };
    let selection_flag =
        (distinct.len() > 1 && reported_not_primary) || explored_then_locked;

    Ok(MultiplicityReport {
        total_specs: chronology.len(),
        distinct_specs: distinct.len(),
        confirmatory,
        exploratory,
        selection_flag,
        chronology,
    })
}

/// Builds the canonical payload text for an Estimate entry.
pub fn estimate_payload(
    spec_pairs: &[(String, String)],
    effect: f64,
    se: f64,
    p: f64,
) -> String {
    let mut doc = kv::Document::default();
    let mut spec = kv::Section::new("spec");
    let mut pairs = spec_pairs.to_vec();
    pairs.sort();
    for (k, v) in pairs {
        spec.push(k, v);
    }
    doc.push(spec);
    let mut result = kv::Section::new("result");
    result.push("effect", kv::fmt_f64(effect));
    result.push("p", kv::fmt_f64(p));
    result.push("se", kv::fmt_f64(se));
    doc.push(result);
    kv::canonical(&doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn est(spec: &[(&str, &str)], p: f64) -> String {
        let pairs: Vec<(String, String)> =
            spec.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        estimate_payload(&pairs, 1.0, 0.5, p)
    }

    fn append_est(path: &Path, spec: &[(&str, &str)], p: f64, taint: Taint) {
        append(
            path,
            NewEntry {
                kind: EntryKind::Estimate,
                timestamp: "2026-01-01T00:00:00Z".into(),
                taint,
                lock_ref: None,
                payload: est(spec, p),
            },
        )
        .unwrap();
    }

    #[test]
    fn chain_construction_and_verify() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.acxl");
        for i in 0..4 {
            append_est(&path, &[("method", "did-2x2"), ("window", "full")], 0.1 * i as f64, Taint::Exploratory);
        }
        let ledger = open(&path).unwrap();
        assert_eq!(ledger.entries.len(), 4);
        for (i, e) in ledger.entries.iter().enumerate() {
            assert_eq!(e.index, i as u64);
        }
        assert_eq!(verify_bytes(&fs::read(&path).unwrap()), VerifyOutcome::Ok);
    }

    #[test]
    fn rewrite_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.acxl");
        for _ in 0..4 {
            append_est(&path, &[("method", "did-2x2")], 0.04, Taint::Exploratory);
        }
        let text = fs::read_to_string(&path).unwrap();
        // Rewrite the recorded p-value inside entry 2 (file line 3, after the
        // genesis line). The break surfaces at entry 3, whose prev_digest no
        // longer matches.
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        assert!(lines[3].contains("p = 0.04"));
        lines[3] = lines[3].replace("p = 0.04", "p = 0.01");
        assert_ne!(lines.join("\n"), text.trim_end());
        let tampered = lines.join("\n") + "\n";
        match verify_bytes(tampered.as_bytes()) {
            VerifyOutcome::BrokenAt(i) => assert_eq!(i, 3),
            other => panic!("expected break, got {other:?}"),
        }
    }

    #[test]
    fn truncation_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.acxl");
        for _ in 0..3 {
            append_est(&path, &[("method", "its")], 0.2, Taint::Exploratory);
        }
        let text = fs::read_to_string(&path).unwrap();
        let truncated = &text[..text.len() - 10];
        match verify_bytes(truncated.as_bytes()) {
            VerifyOutcome::BrokenAt(i) => assert_eq!(i, 2),
            other => panic!("expected break at last entry, got {other:?}"),
        }
    }

    #[test]
    fn prefix_property() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.acxl");
        for i in 0..6 {
            append_est(&path, &[("method", "did-2x2"), ("i", &i.to_string())], 0.5, Taint::Exploratory);
        }
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        for k in 1..=lines.len() {
            let prefix = lines[..k].join("\n") + "\n";
            assert_eq!(
                verify_bytes(prefix.as_bytes()),
                VerifyOutcome::Ok,
                "prefix of {k} lines should verify"
            );
        }
    }

    #[test]
    fn concurrent_writer_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.acxl");
        let _held = WriterLock::acquire(&path).unwrap();
        let result = append(
            &path,
            NewEntry {
                kind: EntryKind::Note,
                timestamp: "2026-01-01T00:00:00Z".into(),
                taint: Taint::Exploratory,
                lock_ref: None,
                payload: "note = blocked".into(),
            },
        );
        assert!(matches!(result, Err(LedgerError::ConcurrentWriter(_))));
    }

    #[test]
    fn confirmatory_requires_matching_lock() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.acxl");
        let lock_payload = "[primary_spec]\nmethod = did-2x2\nwindow = full\n";
        let lock = append(
            &path,
            NewEntry {
                kind: EntryKind::Lock,
                timestamp: "2026-01-01T00:00:00Z".into(),
                taint: Taint::Confirmatory,
                lock_ref: None,
                payload: lock_payload.into(),
            },
        )
        .unwrap();

        // No lock_ref at all.
        let bad = append(
            &path,
            NewEntry {
                kind: EntryKind::Estimate,
                timestamp: "2026-01-01T00:00:01Z".into(),
                taint: Taint::Confirmatory,
                lock_ref: None,
                payload: est(&[("method", "did-2x2"), ("window", "full")], 0.02),
            },
        );
        assert!(matches!(bad, Err(LedgerError::MissingLockRef)));

        // Wrong spec.
        let bad = append(
            &path,
            NewEntry {
                kind: EntryKind::Estimate,
                timestamp: "2026-01-01T00:00:01Z".into(),
                taint: Taint::Confirmatory,
                lock_ref: Some(lock.digest.clone()),
                payload: est(&[("method", "did-2x2"), ("window", "6mo")], 0.02),
            },
        );
        assert!(matches!(bad, Err(LedgerError::SpecMismatch)));

        // Matching spec goes through.
        append(
            &path,
            NewEntry {
                kind: EntryKind::Estimate,
                timestamp: "2026-01-01T00:00:01Z".into(),
                taint: Taint::Confirmatory,
                lock_ref: Some(lock.digest),
                payload: est(&[("method", "did-2x2"), ("window", "full")], 0.02),
            },
        )
        .unwrap();
    }

    #[test]
    fn multiplicity_progressive_forking() {
        // Four progressively narrowed specifications, descending p-values,
        // no lock: all four disclosed, selection flagged.
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.acxl");
        let specs: [(&[(&str, &str)], f64); 4] = [
            (&[("method", "did-2x2"), ("sample", "itt")], 0.12),
            (&[("method", "did-2x2"), ("sample", "paid")], 0.06),
            (&[("method", "did-2x2"), ("sample", "paid-no-affiliate")], 0.02),
            (&[("method", "did-2x2"), ("sample", "paid-no-affiliate"), ("window", "6mo")], 0.001),
        ];
        for (spec, p) in specs {
            append_est(&path, spec, p, Taint::Exploratory);
        }
        let report = multiplicity(&open(&path).unwrap()).unwrap();
        assert_eq!(report.total_specs, 4);
        assert_eq!(report.distinct_specs, 4);
        assert!(report.selection_flag);
        let ps: Vec<f64> = report.chronology.iter().map(|r| r.p_value.unwrap()).collect();
        assert_eq!(ps, vec![0.12, 0.06, 0.02, 0.001]);
    }

    #[test]
    fn single_spec_not_flagged_and_rerun_dedups() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.acxl");
        let lock_payload = "[primary_spec]\nmethod = its\nwindow = full\n";
        let lock = append(
            &path,
            NewEntry {
                kind: EntryKind::Lock,
                timestamp: "2026-01-01T00:00:00Z".into(),
                taint: Taint::Confirmatory,
                lock_ref: None,
                payload: lock_payload.into(),
            },
        )
        .unwrap();
        for _ in 0..2 {
            append(
                &path,
                NewEntry {
                    kind: EntryKind::Estimate,
                    timestamp: "2026-01-01T00:00:01Z".into(),
                    taint: Taint::Confirmatory,
                    lock_ref: Some(lock.digest.clone()),
                    payload: est(&[("method", "its"), ("window", "full")], 0.03),
                },
            )
            .unwrap();
        }
        let report = multiplicity(&open(&path).unwrap()).unwrap();
        assert_eq!(report.total_specs, 2);
        assert_eq!(report.distinct_specs, 1);
        assert!(!report.selection_flag);
    }

    #[test]
    fn exploring_the_primary_before_locking_is_flagged() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.acxl");
        append_est(&path, &[("method", "its"), ("window", "full")], 0.04, Taint::Exploratory);
        let lock = append(
            &path,
            NewEntry {
                kind: EntryKind::Lock,
                timestamp: "2026-01-01T00:00:01Z".into(),
                taint: Taint::Confirmatory,
                lock_ref: None,
                payload: "[primary_spec]\nmethod = its\nwindow = full\n".into(),
            },
        )
        .unwrap();
        append(
            &path,
            NewEntry {
                kind: EntryKind::Estimate,
                timestamp: "2026-01-01T00:00:02Z".into(),
                taint: Taint::Confirmatory,
                lock_ref: Some(lock.digest),
                payload: est(&[("method", "its"), ("window", "full")], 0.04),
            },
        )
        .unwrap();
        let report = multiplicity(&open(&path).unwrap()).unwrap();
        assert_eq!(report.distinct_specs, 1);
        assert!(report.selection_flag, "peeking at the primary before locking must be flagged");
    }

    #[test]
    fn fuzz_single_byte_mutations_all_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.acxl");
        for i in 0..5 {
            append_est(&path, &[("method", "did-2x2"), ("i", &i.to_string())], 0.3, Taint::Exploratory);
        }
        let original = fs::read(&path).unwrap();
        assert_eq!(verify_bytes(&original), VerifyOutcome::Ok);

        let mut rng = crate::rng::Xoshiro256::seeded(99);
        let mut detected = 0;
        let cases = 1000;
        for _ in 0..cases {
            let mut mutated = original.clone();
            let pos = rng.next_below(mutated.len() as u64) as usize;
            // flip is never zero, so every case really changes a byte.
            let flip = (rng.next_below(255) + 1) as u8;
            mutated[pos] ^= flip;
            if verify_bytes(&mutated) != VerifyOutcome::Ok {
                detected += 1;
            }
        }
        assert_eq!(detected, cases, "every single-byte mutation must be detected");
    }
}
