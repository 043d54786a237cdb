//! Synthetic panel generation with known identification status: every
//! scenario carries a GroundTruth record saying what the true effect is and
//! which audit findings should fire, making desk-scale oracle testing
//! possible.
//!
//! Generation is bit-reproducible: a fixed portable RNG (xoshiro256**) with
//! stream splitting keyed by (seed, unit, period), so identical (spec, seed)
//! yields identical bytes on any platform.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::contract::MethodKind;
use crate::kv::{self, fmt_f64, Document, Section};
use crate::panel::{
    ingest, CovariateDecl, CovariateKind, Panel, ProvenanceRecord, SchemaDecl,
};
use crate::rng::Xoshiro256;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Deliberately introduced identification problems.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    None,
    /// Treated and control pre-trend slopes differ (the gap lives in
    /// `pre_trend_slopes`).
    DivergingPretrends,
    /// A measurement-instrument change at the intervention date shifts every
    /// unit's outcome, control units included.
    InstrumentChange { shift: f64 },
    /// Post-intervention within-unit variance is collapsed and coarsened, as
    /// if the delivery pipeline switched to a coarser aggregation.
    AggregationCompression { factor: f64 },
    /// Control outcomes pass through a different (smoothing) aggregation rule
    /// than treated outcomes, identically pre and post: real, but invisible
    /// in the delivered file. A negative control.
    GroupAggregationMismatch,
    /// Treated covariate mass sits outside the control support.
    SupportFailure,
    /// Adoption is staggered with heterogeneous cohort effects.
    StaggeredHeterogeneous,
}

/// Per-unit covariate structure.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateLayout {
    None,
    /// `plan` (paid/trial) and `channel` (direct/affiliate); the treatment
    /// effect concentrates in paid/direct units and early periods are
    /// noisier, so progressively narrowed specifications look progressively
    /// stronger.
    PlanChannel,
    /// Numeric `tenure` and `level` drawn from the same law in both groups:
    /// nominally balanced whatever the constructs actually measure.
    PayEquity,
    /// Numeric `x` shifted by `treated_shift` for treated units.
    Propensity { treated_shift: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortPlan {
    pub name: String,
    pub size: usize,
    /// `None` means never-treated.
    pub adoption: Option<i64>,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub method: MethodKind,
    pub periods: usize,
    pub cohorts: Vec<CohortPlan>,
    /// (treated slope, control slope) per period.
    pub pre_trend_slopes: (f64, f64),
    pub noise_sd: f64,
    pub violation: Violation,
    pub seed: u64,
    pub covariates: CovariateLayout,
    /// Answers to the contract's attested requirements.
    pub attestations: BTreeMap<String, String>,
    pub source_mix: BTreeMap<String, Vec<String>>,
    pub aggregation_grain: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedFinding {
    pub requirement: String,
    /// "pass" | "flag" | "stop" | "branch" | "unverifiable"
    pub status: String,
}

/// What is actually true in the generated data.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Cohort-size-weighted average treatment effect among adopters.
    pub weighted_att: f64,
    pub pretrend_slope_gap: f64,
    pub expected: Vec<ExpectedFinding>,
    /// False for violations the delivered file cannot reveal; the audit is
    /// expected to stay silent even though the problem is real.
    pub detectable: bool,
}

impl ScenarioSpec {
    pub fn units(&self) -> usize {
        self.cohorts.iter().map(|c| c.size).sum()
    }

    fn earliest_adoption(&self) -> Option<i64> {
        self.cohorts.iter().filter_map(|c| c.adoption).min()
    }
}

fn validate(spec: &ScenarioSpec) -> Result<(), SynthError> {
    if spec.units() < 4 {
        return Err(SynthError::InvalidSpec("need at least 4 units".into()));
    }
    if spec.periods < 4 {
        return Err(SynthError::InvalidSpec("need at least 4 periods".into()));
    }
    if !(spec.noise_sd > 0.0) {
        return Err(SynthError::InvalidSpec("noise_sd must be positive".into()));
    }
    if spec.earliest_adoption().is_none() {
        return Err(SynthError::InvalidSpec("no cohort ever adopts".into()));
    }
    for c in &spec.cohorts {
        if let Some(a) = c.adoption {
            if a <= 0 || a >= spec.periods as i64 {
                return Err(SynthError::InvalidSpec(format!(
                    "cohort `{}` adoption {a} is outside the period grid",
                    c.name
                )));
            }
        }
    }
    Ok(())
}

struct UnitInfo {
    id: String,
    adoption: Option<i64>,
    base_effect: f64,
    index: u64,
    /// Position within the unit's own cohort; matched-pair covariate layouts
    /// key their draws on this so paired units share observables exactly.
    cohort_rank: u64,
    plan_paid: bool,
    channel_direct: bool,
}

fn assign_units(spec: &ScenarioSpec) -> Vec<UnitInfo> {
    let mut units = Vec::new();
    let mut index = 0u64;
    for cohort in &spec.cohorts {
        for rank in 0..cohort.size {
            units.push(UnitInfo {
                id: format!("u{index:03}"),
                adoption: cohort.adoption,
                base_effect: cohort.effect,
                index,
                cohort_rank: rank as u64,
                plan_paid: index % 3 != 0,
                channel_direct: index % 4 != 0,
            });
            index += 1;
        }
    }
    units
}

fn unit_effect(spec: &ScenarioSpec, unit: &UnitInfo) -> f64 {
    match spec.covariates {
        CovariateLayout::PlanChannel => {
            let plan = if unit.plan_paid { 1.0 } else { 0.1 };
            let channel = if unit.channel_direct { 1.0 } else { 0.1 };
            unit.base_effect * plan * channel
        }
        _ => unit.base_effect,
    }
}

/// Stream tags keep draw sites independent of one another.
const TAG_INTERCEPT: u64 = 1;
const TAG_NOISE: u64 = 2;
const TAG_COVARIATE: u64 = 3;

fn schema_for(spec: &ScenarioSpec) -> SchemaDecl {
    let covariates = match spec.covariates {
        CovariateLayout::None => Vec::new(),
        CovariateLayout::PlanChannel => vec![
            CovariateDecl {
                name: "channel".into(),
                kind: CovariateKind::Categorical,
                levels: vec!["affiliate".into(), "direct".into()],
            },
            CovariateDecl {
                name: "plan".into(),
                kind: CovariateKind::Categorical,
                levels: vec!["paid".into(), "trial".into()],
            },
        ],
        CovariateLayout::PayEquity => vec![
            CovariateDecl { name: "level".into(), kind: CovariateKind::Numeric, levels: vec![] },
            CovariateDecl { name: "tenure".into(), kind: CovariateKind::Numeric, levels: vec![] },
        ],
        CovariateLayout::Propensity { .. } => {
            vec![CovariateDecl { name: "x".into(), kind: CovariateKind::Numeric, levels: vec![] }]
        }
    };
    SchemaDecl {
        unit_col: "unit".into(),
        time_col: "time".into(),
        outcome_col: "outcome".into(),
        adoption_col: Some("adoption".into()),
        grid: "index".into(),
        outcome_units: "index-points".into(),
        covariates,
        provenance: ProvenanceRecord {
            producer: "synthgen".into(),
            transformations: vec!["synthetic generation".into()],
            documentation_present: true,
            aggregation_grain: spec.aggregation_grain.clone(),
            source_mix: spec.source_mix.clone(),
            pre_aggregation_rows: None,
        },
    }
}

fn covariate_values(spec: &ScenarioSpec, unit: &UnitInfo) -> Vec<(String, String)> {
    match spec.covariates {
        CovariateLayout::None => Vec::new(),
        CovariateLayout::PlanChannel => vec![
            (
                "channel".into(),
                if unit.channel_direct { "direct" } else { "affiliate" }.into(),
            ),
            ("plan".into(), if unit.plan_paid { "paid" } else { "trial" }.into()),
        ],
        CovariateLayout::PayEquity => {
            // Matched-pair draws: the unit at the same rank in each cohort
            // gets identical observables, mimicking an exact-matched sample.
            let mut rng = Xoshiro256::stream(spec.seed, &[TAG_COVARIATE, unit.cohort_rank]);
            let tenure = 5.0 + 2.0 * rng.next_normal();
            let level = 3.0 + rng.next_normal();
            vec![("level".into(), fmt_f64(level)), ("tenure".into(), fmt_f64(tenure))]
        }
        CovariateLayout::Propensity { treated_shift } => {
            let mut rng = Xoshiro256::stream(spec.seed, &[TAG_COVARIATE, unit.index]);
            let shift = if unit.adoption.is_some() { treated_shift } else { 0.0 };
            vec![("x".into(), fmt_f64(shift + rng.next_normal()))]
        }
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Generates the panel and its ground truth. Identical `(spec, seed)` inputs
/// produce bit-identical CSV bytes.
pub fn generate(spec: &ScenarioSpec) -> Result<(Panel, GroundTruth), SynthError> {
    validate(spec)?;
    let units = assign_units(spec);
    let t0 = spec.earliest_adoption().expect("validated");

    // First pass: raw outcomes per (unit, period).
    let mut outcomes: Vec<Vec<f64>> = Vec::with_capacity(units.len());
    for unit in &units {
        let mut alpha_rng = Xoshiro256::stream(spec.seed, &[TAG_INTERCEPT, unit.index]);
        let alpha = alpha_rng.next_normal();
        let slope = if unit.adoption.is_some() {
            spec.pre_trend_slopes.0
        } else {
            spec.pre_trend_slopes.1
        };
        let effect = unit_effect(spec, unit);
        let mut series = Vec::with_capacity(spec.periods);
        for t in 0..spec.periods as i64 {
            let mut rng = Xoshiro256::stream(spec.seed, &[TAG_NOISE, unit.index, t as u64]);
            let mut noise_sd = spec.noise_sd;
            if spec.covariates == CovariateLayout::PlanChannel && t < 2 {
                // Early ramp-up volatility; narrowing the outcome window
                // excludes it.
                noise_sd *= 2.5;
            }
            let mut y = alpha + slope * t as f64 + noise_sd * rng.next_normal();
            if let Some(a) = unit.adoption {
                if t >= a {
                    y += effect;
                }
            }
            if let Violation::InstrumentChange { shift } = spec.violation {
                if t >= t0 {
                    y += shift;
                }
            }
            series.push(y);
        }
        outcomes.push(series);
    }

    // Violation post-processing that needs whole series.
    match &spec.violation {
        Violation::AggregationCompression { factor } => {
            for (u, unit) in units.iter().enumerate() {
                let cut = unit.adoption.unwrap_or(t0);
                let pre: Vec<f64> = (0..cut as usize).map(|t| outcomes[u][t]).collect();
                let pre_mean = pre.iter().sum::<f64>() / pre.len().max(1) as f64;
                for t in cut as usize..spec.periods {
                    let y = outcomes[u][t];
                    outcomes[u][t] = round1(pre_mean + factor * (y - pre_mean));
                }
            }
        }
        Violation::GroupAggregationMismatch => {
            // Smooth control units with a centered 3-period moving average,
            // pre and post alike: the rule differs by group but nothing in
            // the file changes at the intervention date.
            for (u, unit) in units.iter().enumerate() {
                if unit.adoption.is_some() {
                    continue;
                }
                let raw = outcomes[u].clone();
                for t in 0..spec.periods {
                    let lo = t.saturating_sub(1);
                    let hi = (t + 1).min(spec.periods - 1);
                    let window = &raw[lo..=hi];
                    outcomes[u][t] = window.iter().sum::<f64>() / window.len() as f64;
                }
            }
        }
        _ => {}
    }

    // Emit CSV (deterministic order: units then periods).
    let schema = schema_for(spec);
    let mut csv = String::from("unit,time,outcome,adoption");
    let mut cov_names: Vec<String> =
        schema.covariates.iter().map(|c| c.name.clone()).collect();
    cov_names.sort();
    for c in &cov_names {
        csv.push(',');
        csv.push_str(c);
    }
    csv.push('\n');
    for (u, unit) in units.iter().enumerate() {
        let covs = covariate_values(spec, unit);
        let adoption = match unit.adoption {
            Some(a) => a.to_string(),
            None => "never".into(),
        };
        for t in 0..spec.periods {
            let _ = write!(csv, "{},{t},{},{adoption}", unit.id, fmt_f64(outcomes[u][t]));
            for (_, v) in &covs {
                csv.push(',');
                csv.push_str(v);
            }
            csv.push('\n');
        }
    }
    let panel = ingest(&csv, &schema).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    // Ground truth.
    let treated: Vec<&UnitInfo> = units.iter().filter(|u| u.adoption.is_some()).collect();
    let weighted_att = treated.iter().map(|u| unit_effect(spec, u)).sum::<f64>()
        / treated.len() as f64;
    let gap = spec.pre_trend_slopes.0 - spec.pre_trend_slopes.1;
    let truth = GroundTruth {
        weighted_att,
        pretrend_slope_gap: gap,
        expected: expected_findings(spec, t0),
        detectable: !matches!(spec.violation, Violation::GroupAggregationMismatch),
    };
    Ok((panel, truth))
}

fn expected_findings(spec: &ScenarioSpec, t0: i64) -> Vec<ExpectedFinding> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<ExpectedFinding>, req: &str, status: &str| {
        out.push(ExpectedFinding { requirement: req.into(), status: status.into() });
    };

    // Pre-period count drives the pre-periods / series-length requirement.
    let pre = t0; // periods 0..t0
    let pre_req = if spec.method == MethodKind::Its { "series-length" } else { "pre-periods" };
    if pre < 2 {
        push(&mut out, pre_req, "stop");
    } else if pre < 3 {
        push(&mut out, pre_req, "flag");
    }

    // Group sources: treated vs control source sets differing is a Stop.
    let treated_sources = spec.source_mix.get("treated");
    let control_sources = spec.source_mix.get("control");
    if let (Some(a), Some(b)) = (treated_sources, control_sources) {
        if a != b && spec.method != MethodKind::Its && spec.method != MethodKind::Psm {
            push(&mut out, "group-definition", "stop");
        }
    }

    match &spec.violation {
        Violation::DivergingPretrends => push(&mut out, "pre-trend-inspectable", "flag"),
        Violation::InstrumentChange { .. } => {
            let req = if spec.method == MethodKind::Its {
                "outcome-consistency"
            } else {
                "outcome-integrity"
            };
            push(&mut out, req, "stop");
        }
        Violation::AggregationCompression { .. } => {
            push(&mut out, "outcome-integrity", "flag")
        }
        Violation::SupportFailure => push(&mut out, "overlap", "stop"),
        Violation::StaggeredHeterogeneous => {
            if spec.method == MethodKind::DiD2x2 {
                push(&mut out, "staggered-timing", "branch");
            }
        }
        Violation::None | Violation::GroupAggregationMismatch => {}
    }

    // Attestation answers translate directly.
    for (req, answer) in &spec.attestations {
        match answer.as_str() {
            "violated" => push(&mut out, req, "stop"),
            "declined" => push(&mut out, req, "unverifiable"),
            _ => {}
        }
    }
    out.sort_by(|a, b| a.requirement.cmp(&b.requirement));
    out
}

// --- catalog -------------------------------------------------------------------

fn att(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn same_source() -> BTreeMap<String, Vec<String>> {
    let mut m = BTreeMap::new();
    m.insert("treated".into(), vec!["registry".into()]);
    m.insert("control".into(), vec!["registry".into()]);
    m
}

fn cohort(name: &str, size: usize, adoption: Option<i64>, effect: f64) -> CohortPlan {
    CohortPlan { name: name.into(), size, adoption, effect }
}

fn base_scenario(name: &str, method: MethodKind) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        method,
        periods: 8,
        cohorts: Vec::new(),
        pre_trend_slopes: (0.5, 0.5),
        noise_sd: 1.0,
        violation: Violation::None,
        seed: 1,
        covariates: CovariateLayout::None,
        attestations: att(&[("aggregation-unit", "affirmed"), ("provenance", "affirmed")]),
        source_mix: same_source(),
        aggregation_grain: "unit-period".into(),
    }
}

/// The shipped fixture scenarios.
pub fn scenario_catalog() -> Vec<ScenarioSpec> {
    let mut catalog = Vec::new();

    let mut clean = base_scenario("clean-2x2", MethodKind::DiD2x2);
    clean.cohorts = vec![cohort("treated", 10, Some(4), 2.0), cohort("never", 10, None, 0.0)];
    clean.seed = 1001;
    catalog.push(clean);

    let mut diverging = base_scenario("diverging-pretrends", MethodKind::DiD2x2);
    diverging.cohorts =
        vec![cohort("treated", 10, Some(4), 2.0), cohort("never", 10, None, 0.0)];
    diverging.pre_trend_slopes = (1.5, 0.5); // gap = 1.0 · noise_sd per period
    diverging.violation = Violation::DivergingPretrends;
    diverging.seed = 1002;
    catalog.push(diverging);

    let mut health = base_scenario("health-plan-2.1", MethodKind::DiD2x2);
    health.cohorts = vec![cohort("managed", 12, Some(2), 1.5), cohort("unmanaged", 12, None, 0.0)];
    health.seed = 1003;
    health.aggregation_grain = "member-month".into();
    health.source_mix.insert("treated".into(), vec!["plan-claims-a".into()]);
    health.source_mix.insert("control".into(), vec!["plan-claims-b".into()]);
    catalog.push(health);

    let mut pay = base_scenario("pay-equity-2.1", MethodKind::Psm);
    pay.periods = 4;
    pay.cohorts = vec![cohort("acquired", 30, Some(2), 0.0), cohort("incumbent", 30, None, 0.0)];
    pay.covariates = CovariateLayout::PayEquity;
    pay.pre_trend_slopes = (0.0, 0.0);
    pay.seed = 1004;
    pay.attestations = att(&[
        ("matching-variables", "affirmed"),
        ("observables-selection", "affirmed"),
        ("construct-comparability", "violated"),
    ]);
    catalog.push(pay);

    let mut education = base_scenario("education-its-2.2", MethodKind::Its);
    education.periods = 14;
    education.cohorts =
        vec![cohort("curriculum", 8, Some(7), 0.0), cohort("comparison", 8, None, 0.0)];
    education.noise_sd = 0.5;
    education.pre_trend_slopes = (0.3, 0.3);
    education.violation = Violation::InstrumentChange { shift: 8.0 };
    education.seed = 1005;
    education.attestations = att(&[("concurrent-interventions", "affirmed")]);
    catalog.push(education);

    let mut its_shift = base_scenario("its-level-shift", MethodKind::Its);
    its_shift.periods = 14;
    its_shift.cohorts =
        vec![cohort("program", 6, Some(7), 5.0), cohort("comparison", 4, None, 0.0)];
    its_shift.noise_sd = 0.5;
    its_shift.pre_trend_slopes = (0.3, 0.3);
    its_shift.seed = 1006;
    its_shift.attestations = att(&[("concurrent-interventions", "affirmed")]);
    catalog.push(its_shift);

    let mut saas = base_scenario("saas-forking-2.3", MethodKind::DiD2x2);
    saas.periods = 12;
    saas.cohorts = vec![cohort("campaign", 30, Some(6), 0.55), cohort("holdout", 30, None, 0.0)];
    saas.covariates = CovariateLayout::PlanChannel;
    saas.pre_trend_slopes = (0.2, 0.2);
    saas.seed = 1007;
    catalog.push(saas);

    let mut staggered = base_scenario("staggered-het", MethodKind::DiDStaggered);
    staggered.periods = 10;
    staggered.cohorts = vec![
        cohort("early", 12, Some(3), 1.0),
        cohort("late", 6, Some(6), 3.0),
        cohort("never", 4, None, 0.0),
    ];
    staggered.violation = Violation::StaggeredHeterogeneous;
    staggered.seed = 1008;
    staggered.attestations = att(&[
        ("aggregation-unit", "affirmed"),
        ("provenance", "affirmed"),
        ("het-robust-estimator", "affirmed"),
        ("control-cohort", "affirmed"),
    ]);
    catalog.push(staggered);

    let mut support = base_scenario("support-failure", MethodKind::Psm);
    support.periods = 4;
    support.cohorts = vec![cohort("treated", 30, Some(2), 1.0), cohort("control", 30, None, 0.0)];
    support.covariates = CovariateLayout::Propensity { treated_shift: 3.0 };
    support.pre_trend_slopes = (0.0, 0.0);
    support.violation = Violation::SupportFailure;
    support.seed = 1009;
    support.attestations = att(&[
        ("matching-variables", "affirmed"),
        ("observables-selection", "affirmed"),
        ("construct-comparability", "affirmed"),
    ]);
    catalog.push(support);

    let mut mismatch = base_scenario("aggregation-mismatch", MethodKind::DiD2x2);
    mismatch.cohorts =
        vec![cohort("treated", 10, Some(4), 2.0), cohort("never", 10, None, 0.0)];
    mismatch.violation = Violation::GroupAggregationMismatch;
    mismatch.seed = 1010;
    catalog.push(mismatch);

    let mut compression = base_scenario("compression", MethodKind::DiD2x2);
    compression.cohorts =
        vec![cohort("treated", 10, Some(4), 2.0), cohort("never", 10, None, 0.0)];
    // Flat series isolate the coarsening signature from any level shift.
    compression.pre_trend_slopes = (0.0, 0.0);
    compression.violation = Violation::AggregationCompression { factor: 0.05 };
    compression.seed = 1011;
    catalog.push(compression);

    catalog
}

pub fn scenario(name: &str) -> Option<ScenarioSpec> {
    scenario_catalog().into_iter().find(|s| s.name == name)
}

// --- artifact emission -----------------------------------------------------------

pub fn serialize_groundtruth(truth: &GroundTruth) -> String {
    let mut doc = Document::default();
    let mut head = Section::new("groundtruth");
    head.push("detectable", if truth.detectable { "true" } else { "false" });
    head.push("pretrend_slope_gap", fmt_f64(truth.pretrend_slope_gap));
    head.push("weighted_att", fmt_f64(truth.weighted_att));
    doc.push(head);
    let mut expected = Section::new("expected");
    for f in &truth.expected {
        expected.push(f.requirement.clone(), f.status.clone());
    }
    doc.push(expected);
    kv::serialize(&doc)
}

pub fn serialize_attestations(attestations: &BTreeMap<String, String>) -> String {
    let mut doc = Document::default();
    let mut sec = Section::new("attestations");
    for (k, v) in attestations {
        sec.push(k.clone(), v.clone());
    }
    doc.push(sec);
    kv::serialize(&doc)
}

/// Writes panel.csv, schema.acxschema, attestations.acx, and groundtruth.acx
/// into `dir`.
pub fn write_scenario(dir: &Path, spec: &ScenarioSpec) -> Result<(), SynthError> {
    let (panel, truth) = generate(spec)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("panel.csv"), crate::panel::export_csv(&panel))?;
    std::fs::write(dir.join("schema.acxschema"), crate::panel::serialize_schema(&panel.schema))?;
    std::fs::write(dir.join("attestations.acx"), serialize_attestations(&spec.attestations))?;
    std::fs::write(dir.join("groundtruth.acx"), serialize_groundtruth(&truth))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{did_2x2, EstimatorKind, SpecDescriptor};

    #[test]
    fn catalog_is_rich_and_valid() {
        let catalog = scenario_catalog();
        assert!(catalog.len() >= 6);
        for spec in &catalog {
            let (panel, _) = generate(spec).unwrap_or_else(|e| {
                panic!("scenario `{}` failed to generate: {e}", spec.name)
            });
            assert_eq!(panel.unit_count, spec.units(), "{}", spec.name);
            assert_eq!(panel.periods.len(), spec.periods, "{}", spec.name);
        }
    }

    #[test]
    fn generation_is_bit_identical() {
        let spec = scenario("clean-2x2").unwrap();
        let (a, _) = generate(&spec).unwrap();
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(crate::panel::export_csv(&a), crate::panel::export_csv(&b));
        let mut reseeded = spec.clone();
        reseeded.seed += 1;
        let (c, _) = generate(&reseeded).unwrap();
        assert_ne!(crate::panel::export_csv(&a), crate::panel::export_csv(&c));
    }

    #[test]
    fn clean_truth_and_noiseless_recovery() {
        let spec = scenario("clean-2x2").unwrap();
        let (_, truth) = generate(&spec).unwrap();
        assert_eq!(truth.weighted_att, 2.0);
        assert_eq!(truth.pretrend_slope_gap, 0.0);
        assert!(truth.expected.is_empty());

        // noise_sd → small limit: did_2x2 recovers τ to high precision.
        let mut quiet = spec.clone();
        quiet.noise_sd = 1e-9;
        let (panel, _) = generate(&quiet).unwrap();
        let r = did_2x2(&panel, &SpecDescriptor::new(EstimatorKind::DiD2x2)).unwrap();
        assert!((r.effect - 2.0).abs() < 1e-7, "effect {}", r.effect);
    }

    #[test]
    fn health_plan_expectations() {
        let spec = scenario("health-plan-2.1").unwrap();
        let (panel, truth) = generate(&spec).unwrap();
        // Two pre-periods by construction.
        assert!(panel.periods.iter().filter(|&&t| t < 2).count() == 2);
        let statuses: BTreeMap<&str, &str> = truth
            .expected
            .iter()
            .map(|f| (f.requirement.as_str(), f.status.as_str()))
            .collect();
        assert_eq!(statuses.get("pre-periods"), Some(&"flag"));
        assert_eq!(statuses.get("group-definition"), Some(&"stop"));
    }

    #[test]
    fn staggered_truth_is_size_weighted() {
        let spec = scenario("staggered-het").unwrap();
        let (_, truth) = generate(&spec).unwrap();
        let expected = (12.0 * 1.0 + 6.0 * 3.0) / 18.0;
        assert!((truth.weighted_att - expected).abs() < 1e-12);
    }

    #[test]
    fn education_expects_consistency_stop() {
        let spec = scenario("education-its-2.2").unwrap();
        let (_, truth) = generate(&spec).unwrap();
        assert!(truth
            .expected
            .iter()
            .any(|f| f.requirement == "outcome-consistency" && f.status == "stop"));
    }

    #[test]
    fn negative_control_is_marked_undetectable() {
        let spec = scenario("aggregation-mismatch").unwrap();
        let (_, truth) = generate(&spec).unwrap();
        assert!(!truth.detectable);
        assert!(truth.expected.is_empty());
    }

    #[test]
    fn groundtruth_serializes() {
        let spec = scenario("pay-equity-2.1").unwrap();
        let (_, truth) = generate(&spec).unwrap();
        let text = serialize_groundtruth(&truth);
        let doc = kv::parse(&text).unwrap();
        assert_eq!(
            doc.section("expected").unwrap().get("construct-comparability"),
            Some("stop")
        );
    }
}
