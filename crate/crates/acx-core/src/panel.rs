//! Panel ingestion: CSV plus a schema declaration become a validated
//! long-format panel, or a complete list of row-level violations. Nothing is
//! silently dropped or imputed; rows with missing outcomes are rejected and
//! counted.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::digest::sha256_hex;
use crate::kv::{self, Document, Section};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Adoption {
    Never,
    At(i64),
}

impl Adoption {
    pub fn to_field(self) -> String {
        match self {
            Adoption::Never => "never".into(),
            Adoption::At(t) => t.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovValue {
    Numeric(f64),
    Categorical(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub unit_id: String,
    pub time: i64,
    pub outcome: f64,
    pub adoption: Adoption,
    pub covariates: BTreeMap<String, CovValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProvenanceRecord {
    pub producer: String,
    /// Ordered, attested transformation steps. An empty list means the
    /// analyst explicitly declared "no transformations"; the schema parser
    /// rejects files where the declaration is absent.
    pub transformations: Vec<String>,
    pub documentation_present: bool,
    pub aggregation_grain: String,
    /// Source identifiers per group name (e.g. treated/control).
    pub source_mix: BTreeMap<String, Vec<String>>,
    pub pre_aggregation_rows: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateDecl {
    pub name: String,
    pub kind: CovariateKind,
    pub levels: Vec<String>,
}

/// Column roles and calendar grid declared alongside the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaDecl {
    pub unit_col: String,
    pub time_col: String,
    pub outcome_col: String,
    pub adoption_col: Option<String>,
    /// Declared calendar grid ("index", "month", "quarter", "year"); time
    /// values are integer indices on this grid, never raw dates.
    pub grid: String,
    pub outcome_units: String,
    pub covariates: Vec<CovariateDecl>,
    pub provenance: ProvenanceRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub rows: Vec<Observation>,
    pub unit_count: usize,
    pub periods: Vec<i64>,
    pub provenance: ProvenanceRecord,
    pub schema: SchemaDecl,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowViolation {
    DuplicateUnitTime { rows: (usize, usize), unit: String, time: i64 },
    MissingOutcome { row: usize },
    NonFiniteOutcome { row: usize },
    OffGridTime { row: usize, value: String },
    BadAdoption { row: usize, value: String },
    UnknownCategoricalLevel { row: usize, covariate: String, value: String },
    BadNumericCovariate { row: usize, covariate: String, value: String },
    InconsistentAdoption { unit: String },
}

impl std::fmt::Display for RowViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowViolation::DuplicateUnitTime { rows, unit, time } => write!(
                f,
                "duplicate (unit, time) pair ({unit}, {time}) at rows {} and {}",
                rows.0, rows.1
            ),
            RowViolation::MissingOutcome { row } => write!(f, "missing outcome at row {row}"),
            RowViolation::NonFiniteOutcome { row } => {
                write!(f, "non-finite outcome at row {row}")
            }
            RowViolation::OffGridTime { row, value } => {
                write!(f, "time `{value}` at row {row} is not an integer grid index")
            }
            RowViolation::BadAdoption { row, value } => {
                write!(f, "adoption `{value}` at row {row} is neither a grid index nor `never`")
            }
            RowViolation::UnknownCategoricalLevel { row, covariate, value } => write!(
                f,
                "covariate `{covariate}` value `{value}` at row {row} is not in the declared dictionary"
            ),
            RowViolation::BadNumericCovariate { row, covariate, value } => {
                write!(f, "covariate `{covariate}` value `{value}` at row {row} is not numeric")
            }
            RowViolation::InconsistentAdoption { unit } => {
                write!(f, "unit `{unit}` declares different adoption times across rows")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{} row-level violation(s); first: {}", .0.len(), .0[0])]
    Violations(Vec<RowViolation>),
    #[error("adoption column not declared in schema")]
    AdoptionMissing,
    #[error("no control units: every unit adopts treatment")]
    NoControlUnits,
}

const SCHEMA_KEYS: &[&str] =
    &["unit", "time", "outcome", "adoption", "grid", "outcome_units"];
const PROVENANCE_FIXED_KEYS: &[&str] = &[
    "producer",
    "transformations",
    "documentation_present",
    "aggregation_grain",
    "pre_aggregation_rows",
];

/// Parses a `.acxschema` declaration.
pub fn parse_schema(input: &str) -> Result<SchemaDecl, PanelError> {
    let doc = kv::parse(input).map_err(|e| PanelError::Schema(e.to_string()))?;
    let schema = doc
        .section("schema")
        .ok_or_else(|| PanelError::Schema("missing [schema] section".into()))?;
    for key in schema.unknown_keys(SCHEMA_KEYS) {
        return Err(PanelError::Schema(format!("unknown key `{key}` in [schema]")));
    }
    let require = |k: &str| -> Result<String, PanelError> {
        schema
            .get(k)
            .map(str::to_string)
            .ok_or_else(|| PanelError::Schema(format!("[schema] missing key `{k}`")))
    };

    let mut covariates = Vec::new();
    for section in doc.sections_with_prefix("covariate.") {
        let name = section.name.trim_start_matches("covariate.").to_string();
        for key in section.unknown_keys(&["kind", "levels"]) {
            return Err(PanelError::Schema(format!(
                "unknown key `{key}` in [{}]",
                section.name
            )));
        }
        let kind = match section.get("kind") {
            Some("numeric") => CovariateKind::Numeric,
            Some("categorical") => CovariateKind::Categorical,
            other => {
                return Err(PanelError::Schema(format!(
                    "covariate `{name}` has invalid kind {other:?}"
                )))
            }
        };
        let levels: Vec<String> = section
            .get("levels")
            .map(|v| v.split(';').map(|s| s.trim().to_string()).collect())
            .unwrap_or_default();
        if kind == CovariateKind::Categorical && levels.is_empty() {
            return Err(PanelError::Schema(format!(
                "categorical covariate `{name}` must declare its levels"
            )));
        }
        covariates.push(CovariateDecl { name, kind, levels });
    }

    let prov = doc
        .section("provenance")
        .ok_or_else(|| PanelError::Schema("missing [provenance] section".into()))?;
    for key in prov.unknown_keys(PROVENANCE_FIXED_KEYS) {
        if !key.starts_with("source_mix.") {
            return Err(PanelError::Schema(format!("unknown key `{key}` in [provenance]")));
        }
    }
    let transformations_raw = prov.get("transformations").ok_or_else(|| {
        PanelError::Schema(
            "provenance must declare `transformations` explicitly (use `(none)` for an empty list)"
                .into(),
        )
    })?;
    let transformations: Vec<String> = if transformations_raw == "(none)" {
        Vec::new()
    } else {
        transformations_raw.split(';').map(|s| s.trim().to_string()).collect()
    };
    let mut source_mix = BTreeMap::new();
    for (k, v) in &prov.entries {
        if let Some(group) = k.strip_prefix("source_mix.") {
            source_mix.insert(
                group.to_string(),
                v.split(';').map(|s| s.trim().to_string()).collect(),
            );
        }
    }
    let provenance = ProvenanceRecord {
        producer: prov.get("producer").unwrap_or("undeclared").to_string(),
        transformations,
        documentation_present: prov.get("documentation_present") == Some("true"),
        aggregation_grain: prov.get("aggregation_grain").unwrap_or("undeclared").to_string(),
        source_mix,
        pre_aggregation_rows: prov
            .get("pre_aggregation_rows")
            .map(|v| {
                v.parse::<u64>().map_err(|_| {
                    PanelError::Schema(format!("pre_aggregation_rows is not an integer: `{v}`"))
                })
            })
            .transpose()?,
    };

    Ok(SchemaDecl {
        unit_col: require("unit")?,
        time_col: require("time")?,
        outcome_col: require("outcome")?,
        adoption_col: schema.get("adoption").map(str::to_string),
        grid: require("grid")?,
        outcome_units: schema.get("outcome_units").unwrap_or("unspecified").to_string(),
        covariates,
        provenance,
    })
}

pub fn serialize_schema(s: &SchemaDecl) -> String {
    let mut doc = Document::default();
    let mut head = Section::new("schema");
    head.push("unit", s.unit_col.clone());
    head.push("time", s.time_col.clone());
    head.push("outcome", s.outcome_col.clone());
    if let Some(a) = &s.adoption_col {
        head.push("adoption", a.clone());
    }
    head.push("grid", s.grid.clone());
    head.push("outcome_units", s.outcome_units.clone());
    doc.push(head);
    for c in &s.covariates {
        let mut sec = Section::new(format!("covariate.{}", c.name));
        sec.push(
            "kind",
            match c.kind {
                CovariateKind::Numeric => "numeric",
                CovariateKind::Categorical => "categorical",
            },
        );
        if !c.levels.is_empty() {
            sec.push("levels", c.levels.join(";"));
        }
        doc.push(sec);
    }
    let p = &s.provenance;
    let mut prov = Section::new("provenance");
    prov.push("producer", p.producer.clone());
    prov.push(
        "transformations",
        if p.transformations.is_empty() {
            "(none)".to_string()
        } else {
            p.transformations.join(";")
        },
    );
    prov.push("documentation_present", if p.documentation_present { "true" } else { "false" });
    prov.push("aggregation_grain", p.aggregation_grain.clone());
    for (group, sources) in &p.source_mix {
        prov.push(format!("source_mix.{group}"), sources.join(";"));
    }
    if let Some(n) = p.pre_aggregation_rows {
        prov.push("pre_aggregation_rows", n.to_string());
    }
    doc.push(prov);
    kv::serialize(&doc)
}

/// Ingest CSV bytes against a schema declaration. Either every row is valid
/// and a `Panel` comes back, or the complete violation list does.
pub fn ingest(csv_text: &str, schema: &SchemaDecl) -> Result<Panel, PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(csv_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| PanelError::Csv(e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize, PanelError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
    };
    let unit_idx = col(&schema.unit_col)?;
    let time_idx = col(&schema.time_col)?;
    let outcome_idx = col(&schema.outcome_col)?;
    let adoption_idx = match &schema.adoption_col {
        Some(c) => Some(col(c)?),
        None => None,
    };
    let cov_idx: Vec<(usize, &CovariateDecl)> = schema
        .covariates
        .iter()
        .map(|c| col(&c.name).map(|i| (i, c)))
        .collect::<Result<_, _>>()?;

    let mut violations = Vec::new();
    let mut rows = Vec::new();
    let mut seen: HashMap<(String, i64), usize> = HashMap::new();
    let mut unit_adoption: HashMap<String, Adoption> = HashMap::new();
    let mut inconsistent: BTreeSet<String> = BTreeSet::new();

    for (i, record) in reader.records().enumerate() {
        let row_no = i + 2; // 1-based, after the header row
        let record = record.map_err(|e| PanelError::Csv(e.to_string()))?;
        let unit_id = record.get(unit_idx).unwrap_or("").to_string();

        let time_raw = record.get(time_idx).unwrap_or("");
        let time: i64 = match time_raw.trim().parse() {
            Ok(t) => t,
            Err(_) => {
                violations.push(RowViolation::OffGridTime {
                    row: row_no,
                    value: time_raw.to_string(),
                });
                continue;
            }
        };

        let outcome_raw = record.get(outcome_idx).unwrap_or("").trim();
        if outcome_raw.is_empty() {
            violations.push(RowViolation::MissingOutcome { row: row_no });
            continue;
        }
        let outcome: f64 = match outcome_raw.parse() {
            Ok(v) => v,
            Err(_) => {
                violations.push(RowViolation::NonFiniteOutcome { row: row_no });
                continue;
            }
        };
        if !outcome.is_finite() {
            violations.push(RowViolation::NonFiniteOutcome { row: row_no });
            continue;
        }

        let adoption = match adoption_idx {
            None => Adoption::Never,
            Some(idx) => {
                let raw = record.get(idx).unwrap_or("").trim();
                if raw == "never" {
                    Adoption::Never
                } else {
                    match raw.parse::<i64>() {
                        Ok(t) => Adoption::At(t),
                        Err(_) => {
                            violations.push(RowViolation::BadAdoption {
                                row: row_no,
                                value: raw.to_string(),
                            });
                            continue;
                        }
                    }
                }
            }
        };

        let mut covariates = BTreeMap::new();
        let mut cov_ok = true;
        for (idx, decl) in &cov_idx {
            let raw = record.get(*idx).unwrap_or("").trim();
            match decl.kind {
                CovariateKind::Numeric => match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => {
                        covariates.insert(decl.name.clone(), CovValue::Numeric(v));
                    }
                    _ => {
                        violations.push(RowViolation::BadNumericCovariate {
                            row: row_no,
                            covariate: decl.name.clone(),
                            value: raw.to_string(),
                        });
                        cov_ok = false;
                    }
                },
                CovariateKind::Categorical => {
                    if decl.levels.iter().any(|l| l == raw) {
                        covariates.insert(decl.name.clone(), CovValue::Categorical(raw.into()));
                    } else {
                        violations.push(RowViolation::UnknownCategoricalLevel {
                            row: row_no,
                            covariate: decl.name.clone(),
                            value: raw.to_string(),
                        });
                        cov_ok = false;
                    }
                }
            }
        }
        if !cov_ok {
            continue;
        }

        if let Some(prev) = seen.insert((unit_id.clone(), time), row_no) {
            violations.push(RowViolation::DuplicateUnitTime {
                rows: (prev, row_no),
                unit: unit_id.clone(),
                time,
            });
            continue;
        }
        match unit_adoption.get(&unit_id) {
            Some(a) if *a != adoption => {
                inconsistent.insert(unit_id.clone());
            }
            _ => {
                unit_adoption.insert(unit_id.clone(), adoption);
            }
        }
        rows.push(Observation { unit_id, time, outcome, adoption, covariates });
    }

    for unit in inconsistent {
        violations.push(RowViolation::InconsistentAdoption { unit });
    }
    if !violations.is_empty() {
        return Err(PanelError::Violations(violations));
    }

    // Adoption must lie on the observed grid (or be `never`).
    let periods: BTreeSet<i64> = rows.iter().map(|r| r.time).collect();
    let unit_count = rows
        .iter()
        .map(|r| r.unit_id.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    rows.sort_by(|a, b| (a.unit_id.as_str(), a.time).cmp(&(b.unit_id.as_str(), b.time)));

    Ok(Panel {
        unit_count,
        periods: periods.into_iter().collect(),
        provenance: schema.provenance.clone(),
        schema: schema.clone(),
        rows,
    })
}

/// Normalized CSV export: fixed column order, rows sorted by (unit, time).
/// `export(ingest(x))` is row-wise equal to the normalized input.
pub fn export_csv(panel: &Panel) -> String {
    let mut cov_names: Vec<&str> =
        panel.schema.covariates.iter().map(|c| c.name.as_str()).collect();
    cov_names.sort_unstable();

    let mut out = String::new();
    out.push_str(&panel.schema.unit_col);
    out.push(',');
    out.push_str(&panel.schema.time_col);
    out.push(',');
    out.push_str(&panel.schema.outcome_col);
    if panel.schema.adoption_col.is_some() {
        out.push(',');
        out.push_str(panel.schema.adoption_col.as_deref().unwrap());
    }
    for c in &cov_names {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');

    for row in &panel.rows {
        out.push_str(&row.unit_id);
        out.push(',');
        out.push_str(&row.time.to_string());
        out.push(',');
        out.push_str(&kv::fmt_f64(row.outcome));
        if panel.schema.adoption_col.is_some() {
            out.push(',');
            out.push_str(&row.adoption.to_field());
        }
        for c in &cov_names {
            out.push(',');
            match row.covariates.get(*c) {
                Some(CovValue::Numeric(v)) => out.push_str(&kv::fmt_f64(*v)),
                Some(CovValue::Categorical(s)) => out.push_str(s),
                None => {}
            }
        }
        out.push('\n');
    }
    out
}

/// Digest binding a panel to its exact normalized content and schema.
pub fn panel_digest(panel: &Panel) -> String {
    let mut bytes = export_csv(panel).into_bytes();
    bytes.extend_from_slice(serialize_schema(&panel.schema).as_bytes());
    sha256_hex(&bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub treated: Vec<String>,
    pub control: Vec<String>,
    /// Adoption cohorts: adoption period -> unit ids.
    pub cohorts: BTreeMap<i64, Vec<String>>,
}

/// Splits units into treated (adoption != never), control (never-adopters),
/// and adoption cohorts keyed by adoption period.
pub fn group_partition(panel: &Panel) -> Result<Partition, PanelError> {
    if panel.schema.adoption_col.is_none() {
        return Err(PanelError::AdoptionMissing);
    }
    let mut unit_adoption: BTreeMap<&str, Adoption> = BTreeMap::new();
    for row in &panel.rows {
        unit_adoption.insert(&row.unit_id, row.adoption);
    }
    let mut treated = Vec::new();
    let mut control = Vec::new();
    let mut cohorts: BTreeMap<i64, Vec<String>> = BTreeMap::new();
    for (unit, adoption) in unit_adoption {
        match adoption {
            Adoption::Never => control.push(unit.to_string()),
            Adoption::At(t) => {
                treated.push(unit.to_string());
                cohorts.entry(t).or_default().push(unit.to_string());
            }
        }
    }
    if control.is_empty() {
        return Err(PanelError::NoControlUnits);
    }
    Ok(Partition { treated, control, cohorts })
}

/// Test-only style schema used widely by unit tests and the generator.
pub fn minimal_schema(adoption: bool) -> SchemaDecl {
    SchemaDecl {
        unit_col: "unit".into(),
        time_col: "time".into(),
        outcome_col: "outcome".into(),
        adoption_col: if adoption { Some("adoption".into()) } else { None },
        grid: "index".into(),
        outcome_units: "unspecified".into(),
        covariates: Vec::new(),
        provenance: ProvenanceRecord {
            producer: "test".into(),
            transformations: Vec::new(),
            documentation_present: true,
            aggregation_grain: "unit-period".into(),
            source_mix: BTreeMap::new(),
            pre_aggregation_rows: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_panel_ingests() {
        let schema = minimal_schema(false);
        let csv = "unit,time,outcome\nu1,0,1.0\nu1,1,2.0\nu2,0,3.0\nu2,1,4.0\n";
        let panel = ingest(csv, &schema).unwrap();
        assert_eq!(panel.unit_count, 2);
        assert_eq!(panel.periods, vec![0, 1]);
        assert_eq!(panel.rows.len(), 4);
    }

    #[test]
    fn duplicate_unit_time_rejected() {
        let schema = minimal_schema(false);
        let csv = "unit,time,outcome\nu1,3,1.0\nu1,3,2.0\n";
        match ingest(csv, &schema) {
            Err(PanelError::Violations(v)) => {
                assert!(matches!(v[0], RowViolation::DuplicateUnitTime { time: 3, .. }));
            }
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_and_missing_outcomes_rejected() {
        let schema = minimal_schema(false);
        let csv = "unit,time,outcome\nu1,0,NaN\nu1,1,\nu1,2,inf\n";
        match ingest(csv, &schema) {
            Err(PanelError::Violations(v)) => {
                assert_eq!(v.len(), 3);
                assert!(matches!(v[0], RowViolation::NonFiniteOutcome { .. }));
                assert!(matches!(v[1], RowViolation::MissingOutcome { .. }));
            }
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn off_grid_time_rejected() {
        let schema = minimal_schema(false);
        let csv = "unit,time,outcome\nu1,2024-01,1.0\n";
        match ingest(csv, &schema) {
            Err(PanelError::Violations(v)) => {
                assert!(matches!(v[0], RowViolation::OffGridTime { .. }));
            }
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_hard_error() {
        let schema = minimal_schema(false);
        let csv = "unit,time\nu1,0\n";
        match ingest(csv, &schema) {
            Err(PanelError::MissingColumn(c)) => assert_eq!(c, "outcome"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn partition_basic() {
        let schema = minimal_schema(true);
        let mut csv = String::from("unit,time,outcome,adoption\n");
        for (u, a) in [("u1", "never"), ("u2", "5"), ("u3", "5"), ("u4", "7")] {
            for t in 0..2 {
                csv.push_str(&format!("{u},{t},1.0,{a}\n"));
            }
        }
        let panel = ingest(&csv, &schema).unwrap();
        let p = group_partition(&panel).unwrap();
        assert_eq!(p.control, vec!["u1"]);
        assert_eq!(p.cohorts[&5].len(), 2);
        assert_eq!(p.cohorts[&7].len(), 1);
        // Exhaustive: treated + control cover all units, cohorts partition treated.
        assert_eq!(p.treated.len() + p.control.len(), panel.unit_count);
        let cohort_total: usize = p.cohorts.values().map(Vec::len).sum();
        assert_eq!(cohort_total, p.treated.len());
    }

    #[test]
    fn all_adopters_is_no_control() {
        let schema = minimal_schema(true);
        let csv = "unit,time,outcome,adoption\nu1,0,1.0,5\nu2,0,1.0,5\n";
        let panel = ingest(csv, &schema).unwrap();
        match group_partition(&panel) {
            Err(PanelError::NoControlUnits) => {}
            other => panic!("expected NoControlUnits, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_adoption_rejected() {
        let schema = minimal_schema(true);
        let csv = "unit,time,outcome,adoption\nu1,0,1.0,5\nu1,1,1.0,never\n";
        match ingest(csv, &schema) {
            Err(PanelError::Violations(v)) => {
                assert!(v.iter().any(|v| matches!(v, RowViolation::InconsistentAdoption { .. })));
            }
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn export_round_trip() {
        let schema = minimal_schema(true);
        let csv = "unit,time,outcome,adoption\nu2,1,4.5,never\nu1,0,1.25,3\nu1,1,2,3\nu2,0,3,never\n";
        let panel = ingest(csv, &schema).unwrap();
        let exported = export_csv(&panel);
        let reparsed = ingest(&exported, &schema).unwrap();
        assert_eq!(reparsed, panel);
        assert_eq!(export_csv(&reparsed), exported);
    }

    #[test]
    fn schema_round_trip() {
        let text = "\
[schema]
unit = unit
time = time
outcome = outcome
adoption = adoption
grid = month
outcome_units = dollars

[covariate.age]
kind = numeric

[covariate.region]
kind = categorical
levels = north;south

[provenance]
producer = vendor
transformations = aggregated to member-month
documentation_present = false
aggregation_grain = member-month
source_mix.treated = planA
source_mix.control = planB
";
        let schema = parse_schema(text).unwrap();
        assert_eq!(schema.provenance.transformations.len(), 1);
        assert_eq!(schema.provenance.source_mix["treated"], vec!["planA"]);
        let reparsed = parse_schema(&serialize_schema(&schema)).unwrap();
        assert_eq!(reparsed, schema);
    }

    #[test]
    fn transformations_must_be_declared() {
        let text = "\
[schema]
unit = u
time = t
outcome = y
grid = index

[provenance]
producer = vendor
documentation_present = true
aggregation_grain = unit-period
";
        match parse_schema(text) {
            Err(PanelError::Schema(msg)) => assert!(msg.contains("transformations")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_categorical_level_rejected() {
        let mut schema = minimal_schema(false);
        schema.covariates.push(CovariateDecl {
            name: "region".into(),
            kind: CovariateKind::Categorical,
            levels: vec!["north".into(), "south".into()],
        });
        let csv = "unit,time,outcome,region\nu1,0,1.0,east\n";
        match ingest(csv, &schema) {
            Err(PanelError::Violations(v)) => {
                assert!(matches!(v[0], RowViolation::UnknownCategoricalLevel { .. }));
            }
            other => panic!("expected violations, got {other:?}"),
        }
    }
}
