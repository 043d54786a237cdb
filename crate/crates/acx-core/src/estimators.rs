//! Causal estimators over validated panels: 2×2 difference-in-differences,
//! two-way fixed-effects event study, group-time ATT for staggered adoption,
//! and segmented interrupted time series.
//!
//! Estimators are pure: they never consult the audit gate. Gating is enforced
//! one layer up so the numerics stay independently testable.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::kv;
use crate::numerics::{
    self, cluster_robust_cov, least_squares, normal_two_sided_p, NumericsError,
};
use crate::panel::{group_partition, Adoption, CovValue, Observation, Panel};
use crate::rng::Xoshiro256;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("empty cell: {0}")]
    EmptyCell(String),
    #[error("too few periods on one side of the interruption")]
    TooFewPeriods,
    #[error("no control units available")]
    NoControlUnits,
    #[error("cohort at period {0} has fewer than 2 units")]
    CohortTooSmall(i64),
    #[error("expected a single adoption time, found {0} cohorts")]
    MultipleCohorts(usize),
    #[error("panel error: {0}")]
    Panel(String),
    #[error("bad sample filter: {0}")]
    BadFilter(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    DiD2x2,
    TwfeEventStudy,
    GroupTimeAtt,
    ItsSegmented,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::DiD2x2 => "did-2x2",
            EstimatorKind::TwfeEventStudy => "twfe-event-study",
            EstimatorKind::GroupTimeAtt => "group-time-att",
            EstimatorKind::ItsSegmented => "its-segmented",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "did-2x2" => Some(EstimatorKind::DiD2x2),
            "twfe-event-study" => Some(EstimatorKind::TwfeEventStudy),
            "group-time-att" => Some(EstimatorKind::GroupTimeAtt),
            "its-segmented" => Some(EstimatorKind::ItsSegmented),
            _ => None,
        }
    }
}

/// A fully pinned-down specification. Its canonical text is what gets locked,
/// fingerprinted, and compared across the ledger, so two descriptors with the
/// same semantics serialize identically: filter clauses sorted, covariate
/// names sorted, whitespace collapsed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecDescriptor {
    pub estimator: EstimatorKind,
    /// Conjunction of `covariate == level` / `covariate != level` clauses;
    /// empty means the full sample.
    pub sample_filter: String,
    /// Inclusive period range; `None` means every observed period.
    pub outcome_window: Option<(i64, i64)>,
    pub covariates: Vec<String>,
    pub control_definition: String,
}

fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl SpecDescriptor {
    pub fn new(estimator: EstimatorKind) -> Self {
        SpecDescriptor {
            estimator,
            sample_filter: String::new(),
            outcome_window: None,
            covariates: Vec::new(),
            control_definition: "never-treated".into(),
        }
    }

    /// Canonical key/value pairs, sorted by key. This is the exact content
    /// locked under `[primary_spec]` and recorded under `[spec]` in ledger
    /// estimate entries.
    pub fn canonical_pairs(&self) -> Vec<(String, String)> {
        let mut clauses: Vec<String> = if self.sample_filter.trim().is_empty() {
            Vec::new()
        } else {
            self.sample_filter
                .split(" and ")
                .map(normalize_text)
                .filter(|c| !c.is_empty())
                .collect()
        };
        clauses.sort();
        let mut covs = self.covariates.clone();
        covs.sort();
        let window = match self.outcome_window {
            Some((lo, hi)) => format!("{lo}..{hi}"),
            None => "full".into(),
        };
        vec![
            ("control".into(), normalize_text(&self.control_definition)),
            ("covariates".into(), if covs.is_empty() { "(none)".into() } else { covs.join(";") }),
            ("estimator".into(), self.estimator.name().into()),
            (
                "sample_filter".into(),
                if clauses.is_empty() { "(all)".into() } else { clauses.join(" and ") },
            ),
            ("window".into(), window),
        ]
    }

    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.canonical_pairs() {
            out.push_str(&k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(self.canonical_text().as_bytes())
    }

    /// Rebuilds a descriptor from its canonical pairs; the round trip
    /// `from_pairs(canonical_pairs())` is the identity on canonical specs.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, EstimatorError> {
        let get = |key: &str| -> Option<&str> {
            pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
        };
        let estimator = get("estimator")
            .and_then(EstimatorKind::parse)
            .ok_or_else(|| EstimatorError::BadFilter("bad or missing estimator key".into()))?;
        let sample_filter = match get("sample_filter") {
            None | Some("(all)") => String::new(),
            Some(f) => f.to_string(),
        };
        let outcome_window = match get("window") {
            None | Some("full") => None,
            Some(w) => {
                let (lo, hi) = w
                    .split_once("..")
                    .ok_or_else(|| EstimatorError::BadFilter(format!("bad window `{w}`")))?;
                let lo = lo.parse::<i64>().map_err(|_| {
                    EstimatorError::BadFilter(format!("bad window bound `{lo}`"))
                })?;
                let hi = hi.parse::<i64>().map_err(|_| {
                    EstimatorError::BadFilter(format!("bad window bound `{hi}`"))
                })?;
                Some((lo, hi))
            }
        };
        let covariates = match get("covariates") {
            None | Some("(none)") => Vec::new(),
            Some(c) => c.split(';').map(String::from).collect(),
        };
        let control_definition =
            get("control").unwrap_or("never-treated").to_string();
        Ok(SpecDescriptor {
            estimator,
            sample_filter,
            outcome_window,
            covariates,
            control_definition,
        })
    }
}

/// Dispatches to the estimator the specification names. `seed` feeds only the
/// group-time ATT bootstrap; the other estimators are seed-free.
pub fn run(
    panel: &Panel,
    spec: &SpecDescriptor,
    seed: u64,
) -> Result<EstimateResult, EstimatorError> {
    match spec.estimator {
        EstimatorKind::DiD2x2 => did_2x2(panel, spec),
        EstimatorKind::TwfeEventStudy => twfe_event_study(panel, spec).map(|r| r.estimate),
        EstimatorKind::GroupTimeAtt => group_time_att(panel, spec, seed).map(|r| r.estimate),
        EstimatorKind::ItsSegmented => its_segmented(panel, spec).map(|r| r.estimate),
    }
}

/// Serializes a result to the key/value format: `[spec]` holds the canonical
/// pairs, `[result]` the headline numbers, `[path]` the per-period effects.
pub fn serialize_result(result: &EstimateResult) -> String {
    let mut doc = kv::Document::default();
    let mut spec = kv::Section::new("spec");
    for (k, v) in result.spec.canonical_pairs() {
        spec.push(k, v);
    }
    doc.push(spec);
    let mut res = kv::Section::new("result");
    res.push("ci_high", kv::fmt_f64(result.ci95.1));
    res.push("ci_low", kv::fmt_f64(result.ci95.0));
    res.push("effect", kv::fmt_f64(result.effect));
    res.push("n_obs", result.n_obs.to_string());
    res.push("n_units", result.n_units.to_string());
    res.push("p", kv::fmt_f64(result.p_value));
    res.push("se", kv::fmt_f64(result.se));
    doc.push(res);
    if let Some(path) = &result.per_period_effects {
        let mut sec = kv::Section::new("path");
        for (t, (e, se)) in path {
            sec.push(format!("effect.{t}"), kv::fmt_f64(*e));
            sec.push(format!("se.{t}"), kv::fmt_f64(*se));
        }
        doc.push(sec);
    }
    kv::canonical(&doc)
}

pub fn parse_result(text: &str) -> Result<EstimateResult, EstimatorError> {
    let doc = kv::parse(text)
        .map_err(|e| EstimatorError::BadFilter(format!("result file: {e}")))?;
    let spec_sec = doc
        .section("spec")
        .ok_or_else(|| EstimatorError::BadFilter("result file lacks [spec]".into()))?;
    let spec = SpecDescriptor::from_pairs(&spec_sec.entries)?;
    let res = doc
        .section("result")
        .ok_or_else(|| EstimatorError::BadFilter("result file lacks [result]".into()))?;
    let num = |key: &str| -> Result<f64, EstimatorError> {
        res.get(key)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| EstimatorError::BadFilter(format!("result.{key} missing or bad")))
    };
    let per_period_effects = doc.section("path").map(|sec| {
        let mut path: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
        for (k, v) in &sec.entries {
            if let Some(t) = k.strip_prefix("effect.").and_then(|t| t.parse::<i64>().ok()) {
                if let Ok(x) = v.parse::<f64>() {
                    path.entry(t).or_insert((0.0, 0.0)).0 = x;
                }
            }
            if let Some(t) = k.strip_prefix("se.").and_then(|t| t.parse::<i64>().ok()) {
                if let Ok(x) = v.parse::<f64>() {
                    path.entry(t).or_insert((0.0, 0.0)).1 = x;
                }
            }
        }
        path
    });
    Ok(EstimateResult {
        spec,
        effect: num("effect")?,
        se: num("se")?,
        ci95: (num("ci_low")?, num("ci_high")?),
        p_value: num("p")?,
        per_period_effects,
        n_units: res.get("n_units").and_then(|v| v.parse().ok()).unwrap_or(0),
        n_obs: res.get("n_obs").and_then(|v| v.parse().ok()).unwrap_or(0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub spec: SpecDescriptor,
    pub effect: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub p_value: f64,
    /// Per-period effects: event time → (effect, se) for the event study,
    /// calendar period → (ATT, se placeholder) for group-time ATT.
    pub per_period_effects: Option<BTreeMap<i64, (f64, f64)>>,
    pub n_units: usize,
    pub n_obs: usize,
}

fn finish(
    spec: &SpecDescriptor,
    effect: f64,
    se: f64,
    per_period: Option<BTreeMap<i64, (f64, f64)>>,
    n_units: usize,
    n_obs: usize,
) -> EstimateResult {
    let z = if se > 0.0 { effect / se } else { f64::INFINITY };
    EstimateResult {
        spec: spec.clone(),
        effect,
        se,
        ci95: (effect - 1.96 * se, effect + 1.96 * se),
        p_value: if se > 0.0 { normal_two_sided_p(z) } else { 0.0 },
        per_period_effects: per_period,
        n_units,
        n_obs,
    }
}

// --- sample selection --------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum FilterClause {
    Eq(String, String),
    Ne(String, String),
}

fn parse_filter(filter: &str) -> Result<Vec<FilterClause>, EstimatorError> {
    let text = filter.trim();
    if text.is_empty() || text == "(all)" {
        return Ok(Vec::new());
    }
    let mut clauses = Vec::new();
    for raw in text.split(" and ") {
        let clause = normalize_text(raw);
        let (op_pos, op_len, ne) = if let Some(p) = clause.find("!=") {
            (p, 2, true)
        } else if let Some(p) = clause.find("==") {
            (p, 2, false)
        } else {
            return Err(EstimatorError::BadFilter(format!(
                "clause `{clause}` has no `==` or `!=`"
            )));
        };
        let name = clause[..op_pos].trim().to_string();
        let value = clause[op_pos + op_len..].trim().to_string();
        if name.is_empty() || value.is_empty() {
            return Err(EstimatorError::BadFilter(format!("clause `{clause}` is incomplete")));
        }
        clauses.push(if ne { FilterClause::Ne(name, value) } else { FilterClause::Eq(name, value) });
    }
    Ok(clauses)
}

fn cov_matches(row: &Observation, name: &str, value: &str) -> bool {
    match row.covariates.get(name) {
        Some(CovValue::Categorical(v)) => v == value,
        Some(CovValue::Numeric(v)) => value.parse::<f64>().map(|x| x == *v).unwrap_or(false),
        None => false,
    }
}

/// Rows passing the specification's sample filter and outcome window.
pub fn select_rows<'a>(
    panel: &'a Panel,
    spec: &SpecDescriptor,
) -> Result<Vec<&'a Observation>, EstimatorError> {
    let clauses = parse_filter(&spec.sample_filter)?;
    Ok(panel
        .rows
        .iter()
        .filter(|r| {
            if let Some((lo, hi)) = spec.outcome_window {
                if r.time < lo || r.time > hi {
                    return false;
                }
            }
            clauses.iter().all(|c| match c {
                FilterClause::Eq(n, v) => cov_matches(r, n, v),
                FilterClause::Ne(n, v) => !cov_matches(r, n, v),
            })
        })
        .collect())
}

fn unit_ids(rows: &[&Observation]) -> Vec<String> {
    let set: BTreeSet<&str> = rows.iter().map(|r| r.unit_id.as_str()).collect();
    set.into_iter().map(String::from).collect()
}

fn cluster_codes(rows: &[&Observation]) -> Vec<u64> {
    let units = unit_ids(rows);
    let index: BTreeMap<&str, u64> = units
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i as u64))
        .collect();
    rows.iter().map(|r| index[r.unit_id.as_str()]).collect()
}

fn single_adoption_time(rows: &[&Observation]) -> Result<i64, EstimatorError> {
    let times: BTreeSet<i64> = rows
        .iter()
        .filter_map(|r| match r.adoption {
            Adoption::At(t) => Some(t),
            Adoption::Never => None,
        })
        .collect();
    match times.len() {
        1 => Ok(*times.iter().next().unwrap()),
        n => Err(EstimatorError::MultipleCohorts(n)),
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

// --- 2x2 difference-in-differences --------------------------------------------

/// Interaction-regression DiD with unit-clustered standard errors. In the
/// saturated no-covariate case the point estimate equals the four-means
/// arithmetic `(ȳ_T,post − ȳ_T,pre) − (ȳ_C,post − ȳ_C,pre)` exactly.
pub fn did_2x2(panel: &Panel, spec: &SpecDescriptor) -> Result<EstimateResult, EstimatorError> {
    let rows = select_rows(panel, spec)?;
    let t0 = single_adoption_time(&rows)?;

    for (treated, post, label) in [
        (true, false, "treated-pre"),
        (true, true, "treated-post"),
        (false, false, "control-pre"),
        (false, true, "control-post"),
    ] {
        let any = rows.iter().any(|r| {
            (r.adoption != Adoption::Never) == treated && (r.time >= t0) == post
        });
        if !any {
            return Err(EstimatorError::EmptyCell(label.into()));
        }
    }

    let n = rows.len();
    let mut design = DMatrix::zeros(n, 4);
    let mut y = DVector::zeros(n);
    for (i, r) in rows.iter().enumerate() {
        let treated = if r.adoption != Adoption::Never { 1.0 } else { 0.0 };
        let post = if r.time >= t0 { 1.0 } else { 0.0 };
        design[(i, 0)] = 1.0;
        design[(i, 1)] = treated;
        design[(i, 2)] = post;
        design[(i, 3)] = treated * post;
        y[i] = r.outcome;
    }
    let mut fit = least_squares(&design, &y)?;
    let clusters = cluster_codes(&rows);
    fit.covariance = cluster_robust_cov(&fit, &design, &clusters)?;
    let effect = fit.coefficients[3];
    let se = fit.covariance[(3, 3)].max(0.0).sqrt();
    Ok(finish(spec, effect, se, None, unit_ids(&rows).len(), n))
}

// --- TWFE event study ----------------------------------------------------------

/// Two-way within transformation: iterated unit/time demeaning to numerical
/// convergence, which for this projection agrees with explicit unit and time
/// dummies to machine precision.
fn two_way_demean(
    values: &mut [f64],
    units: &[usize],
    times: &[usize],
    n_units: usize,
    n_times: usize,
) {
    for _ in 0..10_000 {
        let mut unit_sum = vec![0.0; n_units];
        let mut unit_count = vec![0usize; n_units];
        for (i, &u) in units.iter().enumerate() {
            unit_sum[u] += values[i];
            unit_count[u] += 1;
        }
        for (i, &u) in units.iter().enumerate() {
            values[i] -= unit_sum[u] / unit_count[u] as f64;
        }
        let mut time_sum = vec![0.0; n_times];
        let mut time_count = vec![0usize; n_times];
        for (i, &t) in times.iter().enumerate() {
            time_sum[t] += values[i];
            time_count[t] += 1;
        }
        let mut max_shift: f64 = 0.0;
        for (i, &t) in times.iter().enumerate() {
            let shift = time_sum[t] / time_count[t] as f64;
            values[i] -= shift;
            max_shift = max_shift.max(shift.abs());
        }
        if max_shift < 1e-13 {
            break;
        }
    }
}

#[derive(Debug, Clone)]
pub struct EventStudyResult {
    pub estimate: EstimateResult,
    /// Joint Wald p-value over all lead coefficients (event time ≤ −2),
    /// present when at least two leads are estimable.
    pub joint_leads_p: Option<f64>,
}

/// TWFE event study: unit and time fixed effects via within-demeaning,
/// lead/lag indicators relative to adoption with event time −1 as the
/// reference, and unit-clustered standard errors. The headline effect is the
/// average of the post-adoption (lag) coefficients.
pub fn twfe_event_study(
    panel: &Panel,
    spec: &SpecDescriptor,
) -> Result<EventStudyResult, EstimatorError> {
    let rows = select_rows(panel, spec)?;
    if rows.is_empty() {
        return Err(EstimatorError::EmptyCell("selected sample".into()));
    }
    let units = unit_ids(&rows);
    let unit_index: BTreeMap<&str, usize> =
        units.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let times: Vec<i64> = rows.iter().map(|r| r.time).collect::<BTreeSet<_>>().into_iter().collect();
    let time_index: BTreeMap<i64, usize> =
        times.iter().enumerate().map(|(i, t)| (*t, i)).collect();

    // Event-time dummies observed in the treated sample, reference −1 dropped.
    let mut event_times: BTreeSet<i64> = BTreeSet::new();
    for r in &rows {
        if let Adoption::At(a) = r.adoption {
            event_times.insert(r.time - a);
        }
    }
    event_times.remove(&-1);
    let event_times: Vec<i64> = event_times.into_iter().collect();
    if event_times.is_empty() {
        return Err(EstimatorError::EmptyCell("no treated observations".into()));
    }

    let n = rows.len();
    let k = event_times.len();
    let row_units: Vec<usize> = rows.iter().map(|r| unit_index[r.unit_id.as_str()]).collect();
    let row_times: Vec<usize> = rows.iter().map(|r| time_index[&r.time]).collect();

    let mut y: Vec<f64> = rows.iter().map(|r| r.outcome).collect();
    two_way_demean(&mut y, &row_units, &row_times, units.len(), times.len());

    let mut design = DMatrix::zeros(n, k);
    for (j, &e) in event_times.iter().enumerate() {
        let mut col: Vec<f64> = rows
            .iter()
            .map(|r| match r.adoption {
                Adoption::At(a) if r.time - a == e => 1.0,
                _ => 0.0,
            })
            .collect();
        two_way_demean(&mut col, &row_units, &row_times, units.len(), times.len());
        for i in 0..n {
            design[(i, j)] = col[i];
        }
    }

    let y = DVector::from_vec(y);
    let mut fit = least_squares(&design, &y)?;
    let clusters = cluster_codes(&rows);
    fit.covariance = cluster_robust_cov(&fit, &design, &clusters)?;

    let mut per_period = BTreeMap::new();
    for (j, &e) in event_times.iter().enumerate() {
        per_period.insert(e, (fit.coefficients[j], fit.covariance[(j, j)].max(0.0).sqrt()));
    }

    // Headline: average of lag (event time ≥ 0) coefficients, with the
    // delta-method variance of the average.
    let lags: Vec<usize> = event_times
        .iter()
        .enumerate()
        .filter(|(_, e)| **e >= 0)
        .map(|(j, _)| j)
        .collect();
    if lags.is_empty() {
        return Err(EstimatorError::EmptyCell("no post-adoption periods".into()));
    }
    let m = lags.len() as f64;
    let effect = lags.iter().map(|&j| fit.coefficients[j]).sum::<f64>() / m;
    let mut var = 0.0;
    for &a in &lags {
        for &b in &lags {
            var += fit.covariance[(a, b)];
        }
    }
    let se = (var / (m * m)).max(0.0).sqrt();

    let leads: Vec<usize> = event_times
        .iter()
        .enumerate()
        .filter(|(_, e)| **e <= -2)
        .map(|(j, _)| j)
        .collect();
    let joint_leads_p = if leads.len() >= 2 {
        numerics::wald_test(&fit, &leads).ok().map(|(_, p)| p)
    } else {
        None
    };

    let estimate = finish(spec, effect, se, Some(per_period), units.len(), n);
    Ok(EventStudyResult { estimate, joint_leads_p })
}

/// Single-coefficient TWFE: unit and time fixed effects plus one pooled
/// `1[t ≥ adoption]` dummy. Kept deliberately available because it is the
/// estimator whose distorted cohort weighting the staggered-design
/// requirements exist to block; tests use it to demonstrate the hazard.
pub fn twfe_static(
    panel: &Panel,
    spec: &SpecDescriptor,
) -> Result<EstimateResult, EstimatorError> {
    let rows = select_rows(panel, spec)?;
    if rows.is_empty() {
        return Err(EstimatorError::EmptyCell("selected sample".into()));
    }
    let units = unit_ids(&rows);
    let unit_index: BTreeMap<&str, usize> =
        units.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let times: Vec<i64> =
        rows.iter().map(|r| r.time).collect::<BTreeSet<_>>().into_iter().collect();
    let time_index: BTreeMap<i64, usize> =
        times.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let row_units: Vec<usize> = rows.iter().map(|r| unit_index[r.unit_id.as_str()]).collect();
    let row_times: Vec<usize> = rows.iter().map(|r| time_index[&r.time]).collect();

    let mut y: Vec<f64> = rows.iter().map(|r| r.outcome).collect();
    let mut d: Vec<f64> = rows
        .iter()
        .map(|r| match r.adoption {
            Adoption::At(a) if r.time >= a => 1.0,
            _ => 0.0,
        })
        .collect();
    two_way_demean(&mut y, &row_units, &row_times, units.len(), times.len());
    two_way_demean(&mut d, &row_units, &row_times, units.len(), times.len());

    let n = rows.len();
    let design = DMatrix::from_iterator(n, 1, d.into_iter());
    let y = DVector::from_vec(y);
    let mut fit = least_squares(&design, &y)?;
    let clusters = cluster_codes(&rows);
    fit.covariance = cluster_robust_cov(&fit, &design, &clusters)?;
    let effect = fit.coefficients[0];
    let se = fit.covariance[(0, 0)].max(0.0).sqrt();
    Ok(finish(spec, effect, se, None, units.len(), n))
}

// --- group-time ATT --------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GroupTimeResult {
    pub estimate: EstimateResult,
    /// ATT(g,t) point estimates for each cohort g and post period t ≥ g.
    pub att_gt: BTreeMap<(i64, i64), f64>,
}

struct GtFrame {
    /// (cohort, unit) → outcome by period.
    outcomes: BTreeMap<String, BTreeMap<i64, f64>>,
    adoption: BTreeMap<String, Adoption>,
    periods: Vec<i64>,
}

fn build_frame(rows: &[&Observation]) -> GtFrame {
    let mut outcomes: BTreeMap<String, BTreeMap<i64, f64>> = BTreeMap::new();
    let mut adoption = BTreeMap::new();
    let mut periods = BTreeSet::new();
    for r in rows {
        outcomes
            .entry(r.unit_id.clone())
            .or_default()
            .insert(r.time, r.outcome);
        adoption.insert(r.unit_id.clone(), r.adoption);
        periods.insert(r.time);
    }
    GtFrame { outcomes, adoption, periods: periods.into_iter().collect() }
}

/// Point estimate over a set of unit ids (possibly with repeats from
/// bootstrap resampling). Returns the overall effect and the ATT(g,t) map.
fn gt_point(
    frame: &GtFrame,
    units: &[&str],
    not_yet_treated: bool,
) -> Option<(f64, BTreeMap<(i64, i64), f64>)> {
    let mut cohorts: BTreeMap<i64, Vec<&str>> = BTreeMap::new();
    let mut never: Vec<&str> = Vec::new();
    for &u in units {
        match frame.adoption.get(u)? {
            Adoption::Never => never.push(u),
            Adoption::At(g) => cohorts.entry(*g).or_default().push(u),
        }
    }
    if cohorts.is_empty() {
        return None;
    }

    let group_mean = |ids: &[&str], t: i64| -> Option<f64> {
        let vals: Vec<f64> = ids
            .iter()
            .filter_map(|u| frame.outcomes.get(*u).and_then(|m| m.get(&t)).copied())
            .collect();
        mean(&vals)
    };

    let mut att_gt = BTreeMap::new();
    let mut cohort_avg: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (&g, members) in &cohorts {
        let base = g - 1;
        if !frame.periods.contains(&base) {
            return None;
        }
        let mut cell_effects = Vec::new();
        for &t in frame.periods.iter().filter(|&&t| t >= g) {
            // Controls: never-treated, plus not-yet-treated at t when declared.
            let mut controls: Vec<&str> = never.clone();
            if not_yet_treated {
                for (&g2, members2) in &cohorts {
                    if g2 > t {
                        controls.extend(members2.iter().copied());
                    }
                }
            }
            if controls.is_empty() {
                return None;
            }
            let treated_t = group_mean(members, t)?;
            let treated_base = group_mean(members, base)?;
            let control_t = group_mean(&controls, t)?;
            let control_base = group_mean(&controls, base)?;
            let att = (treated_t - treated_base) - (control_t - control_base);
            att_gt.insert((g, t), att);
            cell_effects.push(att);
        }
        if cell_effects.is_empty() {
            return None;
        }
        let avg = cell_effects.iter().sum::<f64>() / cell_effects.len() as f64;
        cohort_avg.insert(g, (avg, members.len()));
    }

    // Overall effect: cohort-size-weighted average of per-cohort mean ATT.
    let total: usize = cohort_avg.values().map(|(_, n)| n).sum();
    let overall = cohort_avg
        .values()
        .map(|(avg, n)| avg * *n as f64)
        .sum::<f64>()
        / total as f64;
    Some((overall, att_gt))
}

/// Unconditional group-time ATT with never-treated (or, when the specification's
/// control definition says `not-yet-treated`, not-yet-treated) controls.
/// Standard errors come from a seeded 199-draw unit-level bootstrap so results
/// are reproducible from the ledger.
pub fn group_time_att(
    panel: &Panel,
    spec: &SpecDescriptor,
    seed: u64,
) -> Result<GroupTimeResult, EstimatorError> {
    let rows = select_rows(panel, spec)?;
    group_partition(panel).map_err(|e| EstimatorError::Panel(e.to_string()))?;
    let frame = build_frame(&rows);
    let not_yet = spec.control_definition.contains("not-yet-treated");

    let never_count = frame
        .adoption
        .values()
        .filter(|a| **a == Adoption::Never)
        .count();
    if never_count == 0 && !not_yet {
        return Err(EstimatorError::NoControlUnits);
    }
    let mut cohort_sizes: BTreeMap<i64, usize> = BTreeMap::new();
    for a in frame.adoption.values() {
        if let Adoption::At(g) = a {
            *cohort_sizes.entry(*g).or_default() += 1;
        }
    }
    for (&g, &n) in &cohort_sizes {
        if n < 2 {
            return Err(EstimatorError::CohortTooSmall(g));
        }
    }

    let units: Vec<&str> = frame.outcomes.keys().map(String::as_str).collect();
    let (effect, att_gt) = gt_point(&frame, &units, not_yet)
        .ok_or_else(|| EstimatorError::EmptyCell("group-time cell".into()))?;

    // Nonparametric unit bootstrap, 199 draws, per-draw seed derived from
    // (seed, draw index) so execution order never matters.
    const DRAWS: usize = 199;
    let mut boots = Vec::with_capacity(DRAWS);
    for b in 0..DRAWS {
        let mut rng = Xoshiro256::stream(seed, &[0x6774_6274, b as u64]);
        let resample: Vec<&str> = (0..units.len())
            .map(|_| units[rng.next_below(units.len() as u64) as usize])
            .collect();
        if let Some((est, _)) = gt_point(&frame, &resample, not_yet) {
            boots.push(est);
        }
    }
    let se = if boots.len() >= 2 {
        let m = boots.iter().sum::<f64>() / boots.len() as f64;
        (boots.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (boots.len() - 1) as f64).sqrt()
    } else {
        f64::NAN
    };

    let mut per_period: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for (&(_, t), &att) in &att_gt {
        // Multiple cohorts can share a calendar period; report the mean.
        let entry = per_period.entry(t).or_insert((0.0, 0.0));
        entry.0 += att;
        entry.1 += 1.0;
    }
    let per_period: BTreeMap<i64, (f64, f64)> =
        per_period.into_iter().map(|(t, (s, c))| (t, (s / c, f64::NAN))).collect();

    let n_obs = rows.len();
    let estimate = finish(spec, effect, se, Some(per_period), units.len(), n_obs);
    Ok(GroupTimeResult { estimate, att_gt })
}

// --- segmented interrupted time series ------------------------------------------

#[derive(Debug, Clone)]
pub struct ItsResult {
    /// Headline estimate: the level shift at the interruption.
    pub estimate: EstimateResult,
    pub level_shift: (f64, f64),
    pub trend_change: (f64, f64),
}

/// Newey-West HAC covariance for a time-ordered OLS fit with Bartlett weights
/// and lag truncation `L`.
fn newey_west(
    design: &DMatrix<f64>,
    residuals: &DVector<f64>,
    lag: usize,
) -> Result<DMatrix<f64>, NumericsError> {
    let (n, k) = (design.nrows(), design.ncols());
    let mut s = DMatrix::zeros(k, k);
    for t in 0..n {
        let xt = design.row(t).transpose() * residuals[t];
        s += &xt * xt.transpose();
    }
    for l in 1..=lag.min(n.saturating_sub(1)) {
        let w = 1.0 - l as f64 / (lag + 1) as f64;
        let mut gamma = DMatrix::zeros(k, k);
        for t in l..n {
            let xt = design.row(t).transpose() * residuals[t];
            let xl = design.row(t - l).transpose() * residuals[t - l];
            gamma += &xt * xl.transpose();
        }
        s += (&gamma + gamma.transpose()) * w;
    }
    let xtx = design.transpose() * design;
    let xtx_inv = xtx
        .clone()
        .try_inverse()
        .ok_or(NumericsError::RankDeficient(vec![]))?;
    Ok(&xtx_inv * s * &xtx_inv)
}

/// Segmented regression on the group-mean series:
/// `y_t = b0 + b1·t + b2·post_t + b3·(t − t0)·post_t`, with
/// autocorrelation-robust (Newey-West) standard errors at lag ⌊T^{1/3}⌋.
pub fn its_segmented(
    panel: &Panel,
    spec: &SpecDescriptor,
) -> Result<ItsResult, EstimatorError> {
    let rows = select_rows(panel, spec)?;
    let t0 = single_adoption_time(&rows)?;

    // Collapse to the period-mean series over treated units (all adopting
    // units form the interrupted series; a separate control series is the
    // audit engine's concern).
    let mut by_period: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        if r.adoption != Adoption::Never {
            by_period.entry(r.time).or_default().push(r.outcome);
        }
    }
    let series: Vec<(i64, f64)> = by_period
        .iter()
        .map(|(t, v)| (*t, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let pre = series.iter().filter(|(t, _)| *t < t0).count();
    let post = series.len() - pre;
    if pre < 3 || post < 3 {
        return Err(EstimatorError::TooFewPeriods);
    }

    let n = series.len();
    let mut design = DMatrix::zeros(n, 4);
    let mut y = DVector::zeros(n);
    for (i, (t, v)) in series.iter().enumerate() {
        let post = if *t >= t0 { 1.0 } else { 0.0 };
        design[(i, 0)] = 1.0;
        design[(i, 1)] = *t as f64;
        design[(i, 2)] = post;
        design[(i, 3)] = (*t - t0) as f64 * post;
        y[i] = *v;
    }
    let fit = least_squares(&design, &y)?;
    let lag = (n as f64).powf(1.0 / 3.0).floor() as usize;
    let cov = newey_west(&design, &fit.residuals, lag)?;

    let level = (fit.coefficients[2], cov[(2, 2)].max(0.0).sqrt());
    let trend = (fit.coefficients[3], cov[(3, 3)].max(0.0).sqrt());
    let units = unit_ids(&rows).len();
    let estimate = finish(spec, level.0, level.1, None, units, n);
    Ok(ItsResult { estimate, level_shift: level, trend_change: trend })
}
