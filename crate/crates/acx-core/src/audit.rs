//! The audit engine: runs every automatic diagnostic bound by the contract,
//! collects attestation answers for the requirements the data cannot reveal,
//! splices in branch-target requirements, and classifies each requirement as
//! Pass, Flag, Stop, Branch, or Unverifiable.
//!
//! The gate is deliberately blunt: one Stop — or one Stop-policy requirement
//! that cannot be verified — blocks the causal label.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::contract::{
    builtin_contract, Binding, MethodDataContract, MethodKind, Policy, Requirement, Thresholds,
};
use crate::digest::sha256_hex;
use crate::estimators::{twfe_event_study, EstimatorKind, SpecDescriptor};
use crate::kv::{self, fmt_f64, Document, Section};
use crate::numerics::{
    cluster_robust_cov, least_squares, logistic_fit, t_two_sided_p, wald_test, NumericsError,
};
use crate::panel::{Adoption, CovValue, CovariateKind, Panel};
use crate::svg;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("missing attestation answers for: {}", .0.join(", "))]
    MissingAttestation(Vec<String>),
    #[error("panel is unusable for this contract: {0}")]
    Panel(String),
    #[error("io error writing plots: {0}")]
    Io(#[from] std::io::Error),
    #[error("attestation file: {0}")]
    Attestations(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FindingStatus {
    Pass,
    Flag,
    Branch,
    Unverifiable,
    Stop,
}

impl FindingStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FindingStatus::Pass => "pass",
            FindingStatus::Flag => "flag",
            FindingStatus::Branch => "branch",
            FindingStatus::Unverifiable => "unverifiable",
            FindingStatus::Stop => "stop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditFinding {
    pub requirement_id: String,
    pub status: FindingStatus,
    /// Named scalar metrics, keyed by their published metric-namespace name
    /// so falsification criteria can reference them directly.
    pub evidence: BTreeMap<String, f64>,
    pub plot_refs: Vec<String>,
    pub narrative: String,
    /// Required when status is Unverifiable.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Open,
    Blocked,
}

impl Gate {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gate::Open => "open",
            Gate::Blocked => "blocked",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub findings: Vec<AuditFinding>,
    pub gate: Gate,
    pub contract_digest: String,
    pub panel_digest: String,
    pub method: MethodKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttestationAnswer {
    Affirmed,
    Violated,
    Declined,
}

pub type Attestations = BTreeMap<String, AttestationAnswer>;

pub fn parse_attestations(text: &str) -> Result<Attestations, AuditError> {
    let doc = kv::parse(text).map_err(|e| AuditError::Attestations(e.to_string()))?;
    let section = doc
        .section("attestations")
        .ok_or_else(|| AuditError::Attestations("missing [attestations] section".into()))?;
    let mut out = BTreeMap::new();
    for (k, v) in &section.entries {
        let answer = match v.as_str() {
            "affirmed" => AttestationAnswer::Affirmed,
            "violated" => AttestationAnswer::Violated,
            "declined" => AttestationAnswer::Declined,
            other => {
                return Err(AuditError::Attestations(format!(
                    "answer for `{k}` must be affirmed/violated/declined, got `{other}`"
                )))
            }
        };
        out.insert(k.clone(), answer);
    }
    Ok(out)
}

// --- shared helpers ---------------------------------------------------------

fn earliest_adoption(panel: &Panel) -> Option<i64> {
    panel
        .rows
        .iter()
        .filter_map(|r| match r.adoption {
            Adoption::At(t) => Some(t),
            Adoption::Never => None,
        })
        .min()
}

/// Severity cap: a diagnostic can never escalate past its requirement's
/// policy (a Flag-policy requirement reports at most Flag).
fn cap(status: FindingStatus, policy: &Policy) -> FindingStatus {
    match (status, policy) {
        (FindingStatus::Stop, Policy::Flag) => FindingStatus::Flag,
        (s, _) => s,
    }
}

struct DiagOutcome {
    status: FindingStatus,
    evidence: BTreeMap<String, f64>,
    plot_refs: Vec<String>,
    narrative: String,
    reason: Option<String>,
}

impl DiagOutcome {
    fn new(status: FindingStatus, narrative: impl Into<String>) -> Self {
        DiagOutcome {
            status,
            evidence: BTreeMap::new(),
            plot_refs: Vec::new(),
            narrative: narrative.into(),
            reason: None,
        }
    }

    fn unverifiable(reason: &str, narrative: impl Into<String>) -> Self {
        let mut d = DiagOutcome::new(FindingStatus::Unverifiable, narrative);
        d.reason = Some(reason.to_string());
        d
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.evidence.insert(key.into(), value);
        self
    }
}

// --- diagnostics -------------------------------------------------------------

fn diag_pre_periods(
    panel: &Panel,
    thresholds: &Thresholds,
    method: MethodKind,
) -> DiagOutcome {
    let Some(t0) = earliest_adoption(panel) else {
        return DiagOutcome::unverifiable(
            "no-adoption-declared",
            "No unit declares an adoption period, so pre-period counting is impossible.",
        );
    };
    let pre = panel.periods.iter().filter(|&&t| t < t0).count();
    let post = panel.periods.len() - pre;
    let (status, narrative) = if method == MethodKind::Its {
        // Segmented regression needs three points per segment.
        if pre < 3 || post < 3 {
            (
                FindingStatus::Stop,
                format!("{pre} pre / {post} post periods: segmented trends need three points per side."),
            )
        } else {
            (FindingStatus::Pass, format!("{pre} pre and {post} post periods."))
        }
    } else if pre < thresholds.pre_periods_stop_below {
        (
            FindingStatus::Stop,
            format!("Only {pre} pre-intervention period(s): the trend assumption cannot even be inspected."),
        )
    } else if pre < thresholds.pre_periods_testable {
        (
            FindingStatus::Flag,
            format!("{pre} pre-intervention periods: trends are inspectable but a divergence test is impossible."),
        )
    } else {
        (FindingStatus::Pass, format!("{pre} pre-intervention periods available."))
    };
    DiagOutcome::new(status, narrative)
        .with("audit.pre_periods", pre as f64)
        .with("audit.post_periods", post as f64)
}

/// Group-mean series per period for plotting and the trend test.
fn group_means(panel: &Panel) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let mut treated: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    let mut control: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for r in &panel.rows {
        let bucket = if r.adoption != Adoption::Never { &mut treated } else { &mut control };
        bucket.entry(r.time).or_default().push(r.outcome);
    }
    let collapse = |m: BTreeMap<i64, Vec<f64>>| {
        m.into_iter()
            .map(|(t, v)| (t as f64, v.iter().sum::<f64>() / v.len() as f64))
            .collect::<Vec<_>>()
    };
    (collapse(treated), collapse(control))
}

fn diag_parallel_trends(
    panel: &Panel,
    thresholds: &Thresholds,
    plot_dir: Option<&Path>,
) -> Result<DiagOutcome, AuditError> {
    let Some(t0) = earliest_adoption(panel) else {
        return Ok(DiagOutcome::unverifiable(
            "no-adoption-declared",
            "No adoption period declared; trends cannot be compared.",
        ));
    };

    // The mandatory visual goes out regardless of testability.
    let mut plot_refs = Vec::new();
    if let Some(dir) = plot_dir {
        let (treated, control) = group_means(panel);
        let chart = svg::line_chart(
            "Group-mean outcome by period",
            "period",
            "outcome",
            &[
                svg::Series { name: "treated".into(), points: treated },
                svg::Series { name: "control".into(), points: control },
            ],
            Some(t0 as f64),
        );
        std::fs::write(dir.join("trends.svg"), chart)?;
        plot_refs.push("trends.svg".into());
    }

    let pre_periods: BTreeSet<i64> =
        panel.periods.iter().copied().filter(|&t| t < t0).collect();
    if pre_periods.len() < 3 {
        let mut d = DiagOutcome::unverifiable(
            "too-few-pre-periods",
            format!(
                "Only {} pre-period(s): the slope-difference test needs three.",
                pre_periods.len()
            ),
        );
        d.plot_refs = plot_refs;
        return Ok(d);
    }

    let outcome = match pretrend_slope_test(panel) {
        Ok((slope_diff, p)) => {
            {
                    let status = if p < thresholds.pretrend_alpha {
                        FindingStatus::Flag
                    } else {
                        FindingStatus::Pass
                    };
                    let mut d = DiagOutcome::new(
                        status,
                        format!(
                            "Pre-period slope difference {} (p = {}).",
                            fmt_f64(slope_diff),
                            fmt_f64(p)
                        ),
                    )
                    .with("pretrend.slope_diff", slope_diff)
                    .with("pretrend.p", p);
                    // Secondary channel: joint test on event-study leads when
                    // at least four pre-periods make two leads estimable.
                    if pre_periods.len() >= 4 {
                        if let Ok(es) = twfe_event_study(
                            panel,
                            &SpecDescriptor::new(EstimatorKind::TwfeEventStudy),
                        ) {
                            if let Some(p_leads) = es.joint_leads_p {
                                d = d.with("pretrend.joint_leads_p", p_leads);
                                if p_leads < thresholds.pretrend_alpha {
                                    d.status = FindingStatus::Flag;
                                }
                            }
                        }
                    }
                    d
            }
        }
        Err(e) => DiagOutcome::unverifiable(
            "pretrend-test-failed",
            format!("Slope-equality test failed: {e}"),
        ),
    };
    let mut outcome = outcome;
    outcome.plot_refs = plot_refs;
    Ok(outcome)
}

/// The pre-trend slope-equality test: on pre-adoption rows, fits
/// `y = a + b·t + c·treated + d·treated·t` with unit-clustered errors and
/// tests `d = 0`. Returns `(slope_diff, p)`.
pub fn pretrend_slope_test(panel: &Panel) -> Result<(f64, f64), NumericsError> {
    let t0 = earliest_adoption(panel)
        .ok_or(NumericsError::TooFewRows { rows: 0, cols: 4 })?;
    let rows: Vec<_> = panel.rows.iter().filter(|r| r.time < t0).collect();
    let n = rows.len();
    let mut design = DMatrix::zeros(n, 4);
    let mut y = DVector::zeros(n);
    let mut units: Vec<&str> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let treated = if r.adoption != Adoption::Never { 1.0 } else { 0.0 };
        design[(i, 0)] = 1.0;
        design[(i, 1)] = r.time as f64;
        design[(i, 2)] = treated;
        design[(i, 3)] = treated * r.time as f64;
        y[i] = r.outcome;
        units.push(&r.unit_id);
    }
    let unit_set: Vec<&str> = {
        let s: BTreeSet<&str> = units.iter().copied().collect();
        s.into_iter().collect()
    };
    let codes: Vec<u64> = units
        .iter()
        .map(|u| unit_set.iter().position(|x| x == u).unwrap() as u64)
        .collect();
    let mut fit = least_squares(&design, &y)?;
    fit.covariance = cluster_robust_cov(&fit, &design, &codes)?;
    // With few clusters the chi-square reference over-rejects; the t
    // reference with G-1 degrees of freedom keeps the test near nominal size.
    let se = fit.standard_errors()[3];
    let slope_diff = fit.coefficients[3];
    let p = t_two_sided_p(slope_diff / se, (unit_set.len() - 1) as f64);
    Ok((slope_diff, p))
}

fn smd(treated: &[f64], control: &[f64]) -> Option<f64> {
    if treated.is_empty() || control.is_empty() {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| {
        if v.len() < 2 {
            0.0
        } else {
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
        }
    };
    let (mt, mc) = (mean(treated), mean(control));
    let pooled = ((var(treated, mt) + var(control, mc)) / 2.0).sqrt();
    if pooled == 0.0 {
        return if mt == mc { Some(0.0) } else { None };
    }
    Some((mt - mc) / pooled)
}

fn diag_balance(panel: &Panel, thresholds: &Thresholds) -> DiagOutcome {
    let Some(t0) = earliest_adoption(panel) else {
        return DiagOutcome::unverifiable(
            "no-adoption-declared",
            "No adoption period declared; baseline rows cannot be isolated.",
        );
    };
    if panel.schema.covariates.is_empty() {
        return DiagOutcome::new(
            FindingStatus::Pass,
            "No covariates declared; nothing to balance-check (this is not evidence of comparability).",
        );
    }

    // Baseline = pre-adoption rows.
    let baseline: Vec<_> = panel.rows.iter().filter(|r| r.time < t0).collect();
    let mut evidence = BTreeMap::new();
    let mut max_abs: f64 = 0.0;
    let mut zero_variance = Vec::new();
    for decl in &panel.schema.covariates {
        // Numeric covariates directly; categorical levels dichotomized.
        let variants: Vec<(String, Box<dyn Fn(&CovValue) -> f64>)> = match decl.kind {
            CovariateKind::Numeric => vec![(
                decl.name.clone(),
                Box::new(|v: &CovValue| match v {
                    CovValue::Numeric(x) => *x,
                    CovValue::Categorical(_) => f64::NAN,
                }),
            )],
            CovariateKind::Categorical => decl
                .levels
                .iter()
                .map(|level| {
                    let level = level.clone();
                    let name = format!("{}.{level}", decl.name);
                    let f: Box<dyn Fn(&CovValue) -> f64> = Box::new(move |v: &CovValue| {
                        match v {
                            CovValue::Categorical(s) if *s == level => 1.0,
                            _ => 0.0,
                        }
                    });
                    (name, f)
                })
                .collect(),
        };
        for (name, extract) in variants {
            let mut treated = Vec::new();
            let mut control = Vec::new();
            for r in &baseline {
                if let Some(v) = r.covariates.get(&decl.name) {
                    let x = extract(v);
                    if x.is_nan() {
                        continue;
                    }
                    if r.adoption != Adoption::Never {
                        treated.push(x);
                    } else {
                        control.push(x);
                    }
                }
            }
            match smd(&treated, &control) {
                Some(s) => {
                    max_abs = max_abs.max(s.abs());
                    evidence.insert(format!("smd.{name}"), s);
                }
                None => zero_variance.push(name),
            }
        }
    }
    evidence.insert("smd.max_abs".into(), max_abs);

    if !zero_variance.is_empty() {
        let mut d = DiagOutcome::unverifiable(
            "zero-variance-covariate",
            format!(
                "Covariate(s) with zero variance but differing means: {}.",
                zero_variance.join(", ")
            ),
        );
        d.evidence = evidence;
        return d;
    }
    let status =
        if max_abs > thresholds.smd_flag { FindingStatus::Flag } else { FindingStatus::Pass };
    let mut d = DiagOutcome::new(
        status,
        format!(
            "Largest |SMD| = {}. Nominal balance does not establish that the underlying constructs are comparable.",
            fmt_f64(max_abs)
        ),
    );
    d.evidence = evidence;
    d
}

fn diag_outcome_integrity(panel: &Panel, thresholds: &Thresholds) -> DiagOutcome {
    let Some(t0) = earliest_adoption(panel) else {
        return DiagOutcome::unverifiable(
            "no-adoption-declared",
            "No adoption period declared; pre/post comparison impossible.",
        );
    };
    let mut evidence = BTreeMap::new();
    let mut status = FindingStatus::Pass;
    let mut notes = Vec::new();

    // (a) Structural break in the CONTROL group's mean at the intervention:
    // an instrument or coding change moves untreated units too.
    let control: Vec<_> =
        panel.rows.iter().filter(|r| r.adoption == Adoption::Never).collect();
    if control.len() >= 6 {
        let n = control.len();
        let mut design = DMatrix::zeros(n, 3);
        let mut y = DVector::zeros(n);
        let mut units = Vec::new();
        for (i, r) in control.iter().enumerate() {
            design[(i, 0)] = 1.0;
            design[(i, 1)] = r.time as f64;
            design[(i, 2)] = if r.time >= t0 { 1.0 } else { 0.0 };
            y[i] = r.outcome;
            units.push(r.unit_id.as_str());
        }
        let unit_set: Vec<&str> = {
            let s: BTreeSet<&str> = units.iter().copied().collect();
            s.into_iter().collect()
        };
        let codes: Vec<u64> = units
            .iter()
            .map(|u| unit_set.iter().position(|x| x == u).unwrap() as u64)
            .collect();
        if let Ok(mut fit) = least_squares(&design, &y) {
            let cov = if unit_set.len() >= 2 {
                cluster_robust_cov(&fit, &design, &codes).ok()
            } else {
                None
            };
            if let Some(cov) = cov {
                fit.covariance = cov;
            }
            if let Ok((_, p)) = wald_test(&fit, &[2]) {
                evidence.insert("break.p".into(), p);
                evidence.insert("break.shift".into(), fit.coefficients[2]);
                if p < thresholds.break_alpha {
                    status = FindingStatus::Stop;
                    notes.push(format!(
                        "control-group level shift of {} at the intervention date (p = {}): the outcome instrument itself appears to have changed",
                        fmt_f64(fit.coefficients[2]),
                        fmt_f64(p)
                    ));
                }
            }
        }
    }

    // (b) Floor/ceiling: mass at the observed extremes.
    let n_total = panel.rows.len();
    let min = panel.rows.iter().map(|r| r.outcome).fold(f64::INFINITY, f64::min);
    let max = panel.rows.iter().map(|r| r.outcome).fold(f64::NEG_INFINITY, f64::max);
    let boundary =
        panel.rows.iter().filter(|r| r.outcome == min || r.outcome == max).count();
    let boundary_share = boundary as f64 / n_total as f64;
    evidence.insert("boundary.share".into(), boundary_share);
    if boundary_share > thresholds.boundary_flag {
        status = status.max(FindingStatus::Flag);
        notes.push(format!(
            "{}% of observations sit at the outcome boundary",
            fmt_f64((boundary_share * 100.0 * 10.0).round() / 10.0)
        ));
    }

    // (c) Support comparison: distinct-value density pre vs post.
    let distinct_density = |pred: &dyn Fn(i64) -> bool| -> Option<f64> {
        let vals: Vec<u64> = panel
            .rows
            .iter()
            .filter(|r| pred(r.time))
            .map(|r| r.outcome.to_bits())
            .collect();
        if vals.is_empty() {
            return None;
        }
        let distinct: BTreeSet<u64> = vals.iter().copied().collect();
        Some(distinct.len() as f64 / vals.len() as f64)
    };
    if let (Some(pre), Some(post)) =
        (distinct_density(&|t| t < t0), distinct_density(&|t| t >= t0))
    {
        let ratio = post / pre;
        evidence.insert("audit.compression_ratio".into(), ratio);
        if ratio < thresholds.compression_ratio {
            status = status.max(FindingStatus::Flag);
            notes.push(format!(
                "distinct-value density drops to {} of its pre-period level after the intervention, consistent with a compression or coarsening artifact",
                fmt_f64(ratio)
            ));
        }
    }

    let narrative = if notes.is_empty() {
        "No break, boundary mass, or compression artifact detected in the outcome.".to_string()
    } else {
        let mut s = notes.join("; ");
        s.push('.');
        s
    };
    let mut d = DiagOutcome::new(status, narrative);
    d.evidence = evidence;
    d
}

fn diag_overlap(
    panel: &Panel,
    thresholds: &Thresholds,
    plot_dir: Option<&Path>,
) -> Result<DiagOutcome, AuditError> {
    let Some(t0) = earliest_adoption(panel) else {
        return Ok(DiagOutcome::unverifiable(
            "no-adoption-declared",
            "No adoption period declared; treatment indicator undefined.",
        ));
    };
    // One baseline row per unit: the earliest pre-adoption observation.
    let mut baseline: BTreeMap<&str, &crate::panel::Observation> = BTreeMap::new();
    for r in &panel.rows {
        if r.time < t0 {
            baseline.entry(&r.unit_id).or_insert(r);
        }
    }
    let numeric_covs: Vec<&str> = panel
        .schema
        .covariates
        .iter()
        .filter(|c| c.kind == CovariateKind::Numeric)
        .map(|c| c.name.as_str())
        .collect();
    if numeric_covs.is_empty() {
        return Ok(DiagOutcome::unverifiable(
            "no-numeric-covariates",
            "No numeric covariates declared; a propensity model cannot be fit.",
        ));
    }

    let rows: Vec<_> = baseline.values().collect();
    let n = rows.len();
    let k = 1 + numeric_covs.len();
    let mut design = DMatrix::zeros(n, k);
    let mut labels = DVector::zeros(n);
    for (i, r) in rows.iter().enumerate() {
        design[(i, 0)] = 1.0;
        for (j, c) in numeric_covs.iter().enumerate() {
            design[(i, j + 1)] = match r.covariates.get(*c) {
                Some(CovValue::Numeric(v)) => *v,
                _ => 0.0,
            };
        }
        labels[i] = if r.adoption != Adoption::Never { 1.0 } else { 0.0 };
    }
    let fit = match logistic_fit(&design, &labels) {
        Ok(f) => f,
        Err(e @ (NumericsError::Separation | NumericsError::NoVariation)) => {
            return Ok(DiagOutcome::unverifiable(
                "propensity-model-degenerate",
                format!("Propensity model could not be fit: {e}."),
            ))
        }
        Err(e) => {
            return Ok(DiagOutcome::unverifiable(
                "propensity-fit-failed",
                format!("Propensity model failed: {e}."),
            ))
        }
    };

    let score = |i: usize| -> f64 {
        let mut eta = 0.0;
        for j in 0..k {
            eta += design[(i, j)] * fit.coefficients[j];
        }
        1.0 / (1.0 + (-eta).exp())
    };
    let mut treated_ps = Vec::new();
    let mut control_ps = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if r.adoption != Adoption::Never {
            treated_ps.push(score(i));
        } else {
            control_ps.push(score(i));
        }
    }
    if treated_ps.is_empty() || control_ps.is_empty() {
        return Ok(DiagOutcome::unverifiable(
            "one-sided-sample",
            "Baseline sample lacks one of the groups.",
        ));
    }
    let c_min = control_ps.iter().copied().fold(f64::INFINITY, f64::min);
    let c_max = control_ps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let off = treated_ps.iter().filter(|p| **p < c_min || **p > c_max).count();
    let off_share = off as f64 / treated_ps.len() as f64;

    let mut plot_refs = Vec::new();
    if let Some(dir) = plot_dir {
        let chart = svg::histogram_overlay(
            "Propensity score overlap",
            "fitted propensity",
            &[("treated".to_string(), treated_ps.clone()), ("control".to_string(), control_ps)],
            20,
        );
        std::fs::write(dir.join("overlap.svg"), chart)?;
        plot_refs.push("overlap.svg".into());
    }

    let status = if off_share > thresholds.overlap_stop {
        FindingStatus::Stop
    } else if off_share > thresholds.overlap_flag {
        FindingStatus::Flag
    } else {
        FindingStatus::Pass
    };
    let mut d = DiagOutcome::new(
        status,
        format!(
            "{}% of treated units have fitted propensities outside the control range.",
            fmt_f64((off_share * 1000.0).round() / 10.0)
        ),
    )
    .with("overlap.off_support_share", off_share);
    d.plot_refs = plot_refs;
    Ok(d)
}

fn diag_staggering(panel: &Panel) -> DiagOutcome {
    let cohorts: BTreeSet<i64> = panel
        .rows
        .iter()
        .filter_map(|r| match r.adoption {
            Adoption::At(t) => Some(t),
            Adoption::Never => None,
        })
        .collect();
    let count = cohorts.len();
    let d = if count > 1 {
        DiagOutcome::new(
            FindingStatus::Branch,
            format!(
                "Adoption is staggered across {count} cohorts; the staggered-design requirements apply."
            ),
        )
    } else {
        DiagOutcome::new(FindingStatus::Pass, "Single adoption time.".to_string())
    };
    d.with("audit.cohort_count", count as f64)
}

fn diag_group_sources(panel: &Panel) -> DiagOutcome {
    let mix = &panel.provenance.source_mix;
    match (mix.get("treated"), mix.get("control")) {
        (Some(t), Some(c)) => {
            let ts: BTreeSet<&String> = t.iter().collect();
            let cs: BTreeSet<&String> = c.iter().collect();
            if ts == cs {
                DiagOutcome::new(
                    FindingStatus::Pass,
                    "Treated and control rows come from the same declared sources.".to_string(),
                )
                .with("audit.source_sets_differ", 0.0)
            } else {
                DiagOutcome::new(
                    FindingStatus::Stop,
                    format!(
                        "Treated rows come from {{{}}} but control rows from {{{}}}: the groups are drawn from different data-generating pipelines.",
                        t.join(", "),
                        c.join(", ")
                    ),
                )
                .with("audit.source_sets_differ", 1.0)
            }
        }
        _ => DiagOutcome::unverifiable(
            "source-mix-undeclared",
            "Provenance does not declare per-group sources; comparability cannot be checked.",
        ),
    }
}

// --- orchestration -----------------------------------------------------------

fn run_diagnostic(
    id: &str,
    panel: &Panel,
    thresholds: &Thresholds,
    method: MethodKind,
    plot_dir: Option<&Path>,
) -> Result<DiagOutcome, AuditError> {
    match id {
        "pre-periods" => Ok(diag_pre_periods(panel, thresholds, method)),
        "parallel-trends" => diag_parallel_trends(panel, thresholds, plot_dir),
        "balance" => Ok(diag_balance(panel, thresholds)),
        "outcome-integrity" => Ok(diag_outcome_integrity(panel, thresholds)),
        "overlap" => diag_overlap(panel, thresholds, plot_dir),
        "staggering" => Ok(diag_staggering(panel)),
        "group-sources" => Ok(diag_group_sources(panel)),
        other => Ok(DiagOutcome::unverifiable(
            "unknown-diagnostic",
            format!("No diagnostic registered under `{other}`."),
        )),
    }
}

/// Runs every requirement of the contract, splicing in branch targets, and
/// classifies the findings. Deterministic given (panel, contract, answers);
/// plots are written before return when `plot_dir` is given.
pub fn run_audit(
    panel: &Panel,
    contract: &MethodDataContract,
    attestations: &Attestations,
    plot_dir: Option<&Path>,
) -> Result<AuditReport, AuditError> {
    if let Some(dir) = plot_dir {
        std::fs::create_dir_all(dir)?;
    }

    // Every attested requirement of the original contract must be answered up
    // front (spliced-in requirements may instead surface as Unverifiable).
    let missing: Vec<String> = contract
        .requirements
        .iter()
        .filter(|r| matches!(r.binding, Binding::Attested(_)))
        .filter(|r| !attestations.contains_key(&r.id))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(AuditError::MissingAttestation(missing));
    }

    let mut queue: Vec<(Requirement, bool)> =
        contract.requirements.iter().cloned().map(|r| (r, false)).collect();
    let mut seen: BTreeSet<String> = queue.iter().map(|(r, _)| r.id.clone()).collect();
    let mut findings = Vec::new();
    let mut i = 0;
    while i < queue.len() {
        let (req, spliced) = queue[i].clone();
        i += 1;
        let outcome = match &req.binding {
            Binding::Automatic(diag) => {
                let mut o = run_diagnostic(
                    diag,
                    panel,
                    &contract.thresholds,
                    contract.method,
                    plot_dir,
                )?;
                o.status = cap(o.status, &req.policy);
                o
            }
            Binding::Attested(prompt) => match attestations.get(&req.id) {
                Some(AttestationAnswer::Affirmed) => DiagOutcome::new(
                    FindingStatus::Pass,
                    format!("Attested: {}", req.description),
                ),
                Some(AttestationAnswer::Violated) => {
                    let status = match req.policy {
                        Policy::Stop => FindingStatus::Stop,
                        Policy::Flag => FindingStatus::Flag,
                        Policy::Branch(_) => FindingStatus::Branch,
                    };
                    DiagOutcome::new(
                        status,
                        format!("Attested as violated: {}", req.description),
                    )
                }
                Some(AttestationAnswer::Declined) => DiagOutcome::unverifiable(
                    "attestation-declined",
                    format!("The analyst declined to attest: {prompt}"),
                ),
                None if spliced => DiagOutcome::unverifiable(
                    "unanswered-after-branch",
                    format!(
                        "Requirement spliced in by a branch has no attestation answer: {prompt}"
                    ),
                ),
                None => unreachable!("pre-checked above"),
            },
        };

        // Branch splicing: pull in the target method's requirements (dedup by
        // id) so the active checklist grows to match the actual design.
        if outcome.status == FindingStatus::Branch {
            if let Policy::Branch(target) = &req.policy {
                if let Ok(target_contract) = builtin_contract(*target) {
                    for extra in target_contract.requirements {
                        if seen.insert(extra.id.clone()) {
                            queue.push((extra, true));
                        }
                    }
                }
            }
        }

        findings.push(AuditFinding {
            requirement_id: req.id.clone(),
            status: outcome.status,
            evidence: outcome.evidence,
            plot_refs: outcome.plot_refs,
            narrative: outcome.narrative,
            reason: outcome.reason,
        });
    }

    // Order-normalize so output never depends on scheduling.
    findings.sort_by(|a, b| a.requirement_id.cmp(&b.requirement_id));

    // Gate: blocked iff any Stop, or any Stop-policy requirement that could
    // not be verified.
    let policy_of = |id: &str| -> Option<Policy> {
        queue
            .iter()
            .find(|(r, _)| r.id == id)
            .map(|(r, _)| r.policy.clone())
    };
    let blocked = findings.iter().any(|f| {
        f.status == FindingStatus::Stop
            || (f.status == FindingStatus::Unverifiable
                && matches!(policy_of(&f.requirement_id), Some(Policy::Stop)))
    });

    Ok(AuditReport {
        findings,
        gate: if blocked { Gate::Blocked } else { Gate::Open },
        contract_digest: crate::contract::contract_digest(contract),
        panel_digest: crate::panel::panel_digest(panel),
        method: contract.method,
    })
}

// --- serialization ------------------------------------------------------------

pub fn serialize_report(report: &AuditReport) -> String {
    let mut doc = Document::default();
    let mut head = Section::new("audit");
    head.push("contract_digest", report.contract_digest.clone());
    head.push("gate", report.gate.as_str());
    head.push("method", report.method.as_str());
    head.push("panel_digest", report.panel_digest.clone());
    doc.push(head);
    for f in &report.findings {
        let mut sec = Section::new(format!("finding.{}", f.requirement_id));
        sec.push("status", f.status.as_str());
        sec.push("narrative", f.narrative.clone());
        if let Some(reason) = &f.reason {
            sec.push("reason", reason.clone());
        }
        if !f.plot_refs.is_empty() {
            sec.push("plot_refs", f.plot_refs.join(";"));
        }
        for (k, v) in &f.evidence {
            sec.push(format!("evidence.{k}"), fmt_f64(*v));
        }
        doc.push(sec);
    }
    kv::serialize(&doc)
}

pub fn parse_report(text: &str) -> Result<AuditReport, AuditError> {
    let doc = kv::parse(text).map_err(|e| AuditError::Attestations(e.to_string()))?;
    let head = doc
        .section("audit")
        .ok_or_else(|| AuditError::Attestations("missing [audit] section".into()))?;
    let gate = match head.get("gate") {
        Some("open") => Gate::Open,
        Some("blocked") => Gate::Blocked,
        other => {
            return Err(AuditError::Attestations(format!("bad gate value {other:?}")))
        }
    };
    let method = head
        .get("method")
        .and_then(MethodKind::parse)
        .ok_or_else(|| AuditError::Attestations("bad or missing method".into()))?;
    let mut findings = Vec::new();
    for sec in doc.sections_with_prefix("finding.") {
        let id = sec.name.trim_start_matches("finding.").to_string();
        let status = match sec.get("status") {
            Some("pass") => FindingStatus::Pass,
            Some("flag") => FindingStatus::Flag,
            Some("branch") => FindingStatus::Branch,
            Some("unverifiable") => FindingStatus::Unverifiable,
            Some("stop") => FindingStatus::Stop,
            other => {
                return Err(AuditError::Attestations(format!(
                    "bad status {other:?} for finding {id}"
                )))
            }
        };
        let mut evidence = BTreeMap::new();
        for (k, v) in &sec.entries {
            if let Some(metric) = k.strip_prefix("evidence.") {
                if let Ok(x) = v.parse::<f64>() {
                    evidence.insert(metric.to_string(), x);
                }
            }
        }
        findings.push(AuditFinding {
            requirement_id: id,
            status,
            evidence,
            plot_refs: sec
                .get("plot_refs")
                .map(|v| v.split(';').map(String::from).collect())
                .unwrap_or_default(),
            narrative: sec.get("narrative").unwrap_or("").to_string(),
            reason: sec.get("reason").map(String::from),
        });
    }
    Ok(AuditReport {
        findings,
        gate,
        contract_digest: head.get("contract_digest").unwrap_or("").to_string(),
        panel_digest: head.get("panel_digest").unwrap_or("").to_string(),
        method,
    })
}

/// Digest binding downstream artifacts to this exact report.
pub fn report_digest(report: &AuditReport) -> String {
    sha256_hex(serialize_report(report).as_bytes())
}

/// All audit evidence as a flat metric map for criteria evaluation.
pub fn metrics(report: &AuditReport) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for f in &report.findings {
        for (k, v) in &f.evidence {
            out.insert(k.clone(), *v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, scenario};

    fn audit_scenario(name: &str) -> (AuditReport, crate::synthgen::GroundTruth) {
        let spec = scenario(name).unwrap();
        let (panel, truth) = generate(&spec).unwrap();
        let contract = builtin_contract(spec.method).unwrap();
        let answers: Attestations = spec
            .attestations
            .iter()
            .map(|(k, v)| {
                let a = match v.as_str() {
                    "affirmed" => AttestationAnswer::Affirmed,
                    "violated" => AttestationAnswer::Violated,
                    _ => AttestationAnswer::Declined,
                };
                (k.clone(), a)
            })
            .collect();
        let report = run_audit(&panel, &contract, &answers, None).unwrap();
        (report, truth)
    }

    fn finding<'a>(report: &'a AuditReport, id: &str) -> &'a AuditFinding {
        report
            .findings
            .iter()
            .find(|f| f.requirement_id == id)
            .unwrap_or_else(|| panic!("no finding {id}"))
    }

    #[test]
    fn clean_scenario_gate_open() {
        let (report, _) = audit_scenario("clean-2x2");
        for f in &report.findings {
            assert!(
                matches!(f.status, FindingStatus::Pass),
                "{} was {:?}: {}",
                f.requirement_id,
                f.status,
                f.narrative
            );
        }
        assert_eq!(report.gate, Gate::Open);
    }

    #[test]
    fn health_plan_blocked_with_expected_findings() {
        let (report, _) = audit_scenario("health-plan-2.1");
        assert_eq!(finding(&report, "group-definition").status, FindingStatus::Stop);
        assert_eq!(finding(&report, "pre-periods").status, FindingStatus::Flag);
        // Two pre-periods: the trend test is unverifiable, not silently skipped.
        let pt = finding(&report, "pre-trend-inspectable");
        assert_eq!(pt.status, FindingStatus::Unverifiable);
        assert_eq!(pt.reason.as_deref(), Some("too-few-pre-periods"));
        assert_eq!(report.gate, Gate::Blocked);
    }

    #[test]
    fn education_control_break_stops() {
        let (report, _) = audit_scenario("education-its-2.2");
        let f = finding(&report, "outcome-consistency");
        assert_eq!(f.status, FindingStatus::Stop);
        assert!(f.evidence["break.p"] < 0.01, "break p = {}", f.evidence["break.p"]);
        assert_eq!(report.gate, Gate::Blocked);
    }

    #[test]
    fn pay_equity_balance_passes_but_construct_stops() {
        let (report, _) = audit_scenario("pay-equity-2.1");
        assert_eq!(finding(&report, "baseline-balance").status, FindingStatus::Pass);
        assert_eq!(finding(&report, "construct-comparability").status, FindingStatus::Stop);
        assert_eq!(report.gate, Gate::Blocked);
    }

    #[test]
    fn support_failure_overlap_stops() {
        let (report, _) = audit_scenario("support-failure");
        let f = finding(&report, "overlap");
        assert_eq!(f.status, FindingStatus::Stop);
        assert!(f.evidence["overlap.off_support_share"] > 0.10);
    }

    #[test]
    fn diverging_pretrends_flagged() {
        let (report, _) = audit_scenario("diverging-pretrends");
        let f = finding(&report, "pre-trend-inspectable");
        assert_eq!(f.status, FindingStatus::Flag);
        assert!(f.evidence["pretrend.p"] < 0.10);
        // Flag-policy failure alone never blocks.
        assert_eq!(report.gate, Gate::Open);
    }

    #[test]
    fn staggered_under_2x2_contract_branches() {
        let spec = scenario("staggered-het").unwrap();
        let (panel, _) = generate(&spec).unwrap();
        let contract = builtin_contract(MethodKind::DiD2x2).unwrap();
        let mut answers = Attestations::new();
        answers.insert("aggregation-unit".into(), AttestationAnswer::Affirmed);
        answers.insert("provenance".into(), AttestationAnswer::Affirmed);
        let report = run_audit(&panel, &contract, &answers, None).unwrap();
        assert_eq!(finding(&report, "staggered-timing").status, FindingStatus::Branch);
        // Spliced-in staggered requirements appear; unanswered attested ones
        // are unverifiable, and their Stop policy blocks the gate.
        let het = finding(&report, "het-robust-estimator");
        assert_eq!(het.status, FindingStatus::Unverifiable);
        assert_eq!(het.reason.as_deref(), Some("unanswered-after-branch"));
        assert_eq!(report.gate, Gate::Blocked);
    }

    #[test]
    fn negative_control_stays_silent() {
        let (report, truth) = audit_scenario("aggregation-mismatch");
        assert!(!truth.detectable);
        assert_eq!(report.gate, Gate::Open);
    }

    #[test]
    fn compression_flagged() {
        let (report, _) = audit_scenario("compression");
        let f = finding(&report, "outcome-integrity");
        assert_eq!(f.status, FindingStatus::Flag, "{}", f.narrative);
        assert!(f.evidence["audit.compression_ratio"] < 0.5);
    }

    #[test]
    fn missing_attestation_is_hard_error() {
        let spec = scenario("clean-2x2").unwrap();
        let (panel, _) = generate(&spec).unwrap();
        let contract = builtin_contract(MethodKind::DiD2x2).unwrap();
        match run_audit(&panel, &contract, &Attestations::new(), None) {
            Err(AuditError::MissingAttestation(ids)) => {
                assert!(ids.contains(&"aggregation-unit".to_string()));
                assert!(ids.contains(&"provenance".to_string()));
            }
            other => panic!("expected MissingAttestation, got {other:?}"),
        }
    }

    #[test]
    fn report_round_trips_and_is_deterministic() {
        let (report, _) = audit_scenario("health-plan-2.1");
        let text = serialize_report(&report);
        let (again, _) = audit_scenario("health-plan-2.1");
        assert_eq!(text, serialize_report(&again));
        let parsed = parse_report(&text).unwrap();
        assert_eq!(parsed.gate, report.gate);
        assert_eq!(parsed.findings.len(), report.findings.len());
        for (a, b) in parsed.findings.iter().zip(&report.findings) {
            assert_eq!(a.requirement_id, b.requirement_id);
            assert_eq!(a.status, b.status);
        }
    }

    #[test]
    fn plots_are_emitted_and_match_recomputed_series() {
        use tempfile::tempdir;
        let dir = tempdir().unwrap();
        let spec = scenario("clean-2x2").unwrap();
        let (panel, _) = generate(&spec).unwrap();
        let contract = builtin_contract(MethodKind::DiD2x2).unwrap();
        let mut answers = Attestations::new();
        answers.insert("aggregation-unit".into(), AttestationAnswer::Affirmed);
        answers.insert("provenance".into(), AttestationAnswer::Affirmed);
        let report = run_audit(&panel, &contract, &answers, Some(dir.path())).unwrap();
        let f = finding(&report, "pre-trend-inspectable");
        assert_eq!(f.plot_refs, vec!["trends.svg".to_string()]);
        let svg_text = std::fs::read_to_string(dir.path().join("trends.svg")).unwrap();
        // The plotted series must equal the directly recomputed group means.
        let (treated, _) = group_means(&panel);
        let rebuilt = svg::line_chart(
            "Group-mean outcome by period",
            "period",
            "outcome",
            &[
                svg::Series { name: "treated".into(), points: treated },
                svg::Series {
                    name: "control".into(),
                    points: group_means(&panel).1,
                },
            ],
            Some(4.0),
        );
        assert_eq!(svg_text, rebuilt);
    }

    #[test]
    fn smd_affine_invariance_and_hand_value() {
        // means 1 vs 0, sds 1 and 1 → SMD 1.0
        let t: Vec<f64> = vec![0.0, 1.0, 2.0];
        let c: Vec<f64> = vec![-1.0, 0.0, 1.0];
        let s = smd(&t, &c).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        // Positive affine transform leaves SMD unchanged; sign flip negates.
        let t2: Vec<f64> = t.iter().map(|x| 3.0 * x + 7.0).collect();
        let c2: Vec<f64> = c.iter().map(|x| 3.0 * x + 7.0).collect();
        assert!((smd(&t2, &c2).unwrap() - s).abs() < 1e-12);
        let t3: Vec<f64> = t.iter().map(|x| -x).collect();
        let c3: Vec<f64> = c.iter().map(|x| -x).collect();
        assert!((smd(&t3, &c3).unwrap() + s).abs() < 1e-12);
    }

    #[test]
    fn gate_monotonicity() {
        // Adding a Stop finding can never unblock; removing a Pass never
        // unblocks anything either.
        let (mut report, _) = audit_scenario("health-plan-2.1");
        assert_eq!(report.gate, Gate::Blocked);
        report.findings.push(AuditFinding {
            requirement_id: "extra".into(),
            status: FindingStatus::Stop,
            evidence: BTreeMap::new(),
            plot_refs: vec![],
            narrative: "synthetic extra stop".into(),
            reason: None,
        });
        let blocked = report.findings.iter().any(|f| f.status == FindingStatus::Stop);
        assert!(blocked);
    }
}
