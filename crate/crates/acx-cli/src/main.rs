//! `acx` — the analysis-contract gate CLI.
//!
//! Exit codes: 0 success, 2 gate blocked (a refusal, not an error),
//! 3 validation error, 4 tamper detected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use acx_core::audit::{self, AuditReport};
use acx_core::commitment::{self, CommitmentError, Overall, PreCommitment};
use acx_core::contract::{
    builtin_contract, parse_contract_file, serialize_contract, validate_contract, MethodKind,
};
use acx_core::estimators::{self, EstimateResult, EstimatorKind, SpecDescriptor};
use acx_core::kv::fmt_f64;
use acx_core::ledger::{self, EntryKind, LedgerError, NewEntry, Taint, VerifyOutcome};
use acx_core::panel::{ingest, parse_schema, Panel};
use acx_core::report::{self, ReportInputs};
use acx_core::synthgen;

const EXIT_OK: u8 = 0;
const EXIT_BLOCKED: u8 = 2;
const EXIT_INVALID: u8 = 3;
const EXIT_TAMPER: u8 = 4;

#[derive(Parser)]
#[command(name = "acx", version, about = "Analysis-contract gate for panel-data causal analyses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Method-data contracts.
    Contract {
        #[command(subcommand)]
        command: ContractCommand,
    },
    /// Data audits against a contract.
    Audit {
        #[command(subcommand)]
        command: AuditCommand,
    },
    /// Pre-commitment statements.
    Commit {
        #[command(subcommand)]
        command: CommitCommand,
    },
    /// Estimation runs, recorded in the fork ledger.
    Estimate {
        #[command(subcommand)]
        command: EstimateCommand,
    },
    /// Evaluate locked falsification criteria against realized metrics.
    Evaluate(EvaluateArgs),
    /// Final report generation.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
    /// Fork-ledger inspection.
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
    /// Synthetic fixture generation.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
}

#[derive(Subcommand)]
enum ContractCommand {
    /// Write the built-in contract for a method.
    Init {
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a contract file.
    Validate { file: PathBuf },
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Run every contract requirement against a panel.
    Run {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        contract: PathBuf,
        /// Attestation answers file ([attestations] section).
        #[arg(long)]
        attestations: Option<PathBuf>,
        /// Output directory for audit.acxr and plots/.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CommitCommand {
    /// Validate a statement against the audit and append a Lock entry.
    Lock {
        #[arg(long)]
        commitment: PathBuf,
        #[arg(long)]
        audit: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
    },
    /// Check that a statement is locked in the ledger, unchanged.
    Verify {
        #[arg(long)]
        commitment: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
    },
}

#[derive(Subcommand)]
enum EstimateCommand {
    /// Run an estimator and record the attempt in the ledger.
    Run(EstimateRunArgs),
}

#[derive(Args)]
struct EstimateRunArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    estimator: String,
    /// Conjunction of `covariate == level` / `covariate != level` clauses.
    #[arg(long, default_value = "")]
    sample_filter: String,
    /// Inclusive period window `lo..hi`.
    #[arg(long)]
    window: Option<String>,
    #[arg(long, default_value = "never-treated")]
    control: String,
    #[arg(long)]
    ledger: PathBuf,
    /// Record the run as exploratory (always permitted, tainted).
    #[arg(long, conflicts_with = "confirmatory")]
    exploratory: bool,
    /// Record the run as confirmatory (requires a prior lock).
    #[arg(long)]
    confirmatory: bool,
    /// Lock entry digest; defaults to the first Lock in the ledger.
    #[arg(long)]
    lock_ref: Option<String>,
    /// Bootstrap seed; overridden by ACX_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the full result record here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    commitment: PathBuf,
    #[arg(long)]
    audit: PathBuf,
    /// Result record from `estimate run --out`.
    #[arg(long)]
    result: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Build report.md and report.acxr from the verified artifacts.
    Build {
        #[arg(long)]
        audit: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        commitment: Option<PathBuf>,
        /// Result record for the estimate the narrative reports.
        #[arg(long)]
        result: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Verify the hash chain.
    Verify { file: PathBuf },
    /// Print the multiplicity disclosure.
    Multiplicity { file: PathBuf },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Write a named scenario's panel, schema, attestations, and ground truth.
    Generate {
        #[arg(long)]
        scenario: String,
        /// Overrides the scenario's default seed; ACX_SEED takes precedence.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure with a chosen exit code; printed to stderr.
struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        fail(EXIT_INVALID, format!("io error: {e}"))
    }
}

impl From<LedgerError> for Failure {
    fn from(e: LedgerError) -> Self {
        let code = match e {
            LedgerError::ChainMismatch { .. } => EXIT_TAMPER,
            LedgerError::MissingLockRef | LedgerError::SpecMismatch => EXIT_BLOCKED,
            _ => EXIT_INVALID,
        };
        fail(code, format!("ledger: {e}"))
    }
}

impl From<CommitmentError> for Failure {
    fn from(e: CommitmentError) -> Self {
        match e {
            CommitmentError::GateBlocked => fail(EXIT_BLOCKED, e.to_string()),
            CommitmentError::Ledger(le) => le.into(),
            other => fail(EXIT_INVALID, other.to_string()),
        }
    }
}

fn timestamp() -> String {
    if let Ok(t) = std::env::var("ACX_TIMESTAMP") {
        return t;
    }
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn env_seed() -> Option<u64> {
    std::env::var("ACX_SEED").ok().and_then(|v| v.parse().ok())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| fail(EXIT_INVALID, format!("cannot read {}: {e}", path.display())))
}

fn load_panel(panel_path: &Path, schema_path: &Path) -> Result<Panel, Failure> {
    let schema = parse_schema(&read(schema_path)?)
        .map_err(|e| fail(EXIT_INVALID, format!("schema: {e}")))?;
    ingest(&read(panel_path)?, &schema)
        .map_err(|e| fail(EXIT_INVALID, format!("panel: {e}")))
}

fn load_audit(path: &Path) -> Result<AuditReport, Failure> {
    audit::parse_report(&read(path)?)
        .map_err(|e| fail(EXIT_INVALID, format!("audit report: {e}")))
}

fn load_commitment(path: &Path) -> Result<PreCommitment, Failure> {
    commitment::parse_commitment(&read(path)?)
        .map_err(|e| fail(EXIT_INVALID, format!("commitment: {e}")))
}

fn load_result(path: &Path) -> Result<EstimateResult, Failure> {
    estimators::parse_result(&read(path)?)
        .map_err(|e| fail(EXIT_INVALID, format!("result record: {e}")))
}

/// Metrics visible to falsification criteria: audit evidence plus the
/// reported estimate's headline numbers.
fn assemble_metrics(
    audit_report: &AuditReport,
    result: Option<&EstimateResult>,
) -> BTreeMap<String, f64> {
    let mut metrics = audit::metrics(audit_report);
    if let Some(r) = result {
        metrics.insert("effect.att".into(), r.effect);
        metrics.insert("se.att".into(), r.se);
        metrics.insert("p.att".into(), r.p_value);
        metrics.insert("ci.low".into(), r.ci95.0);
        metrics.insert("ci.high".into(), r.ci95.1);
    }
    metrics
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Contract { command } => match command {
            ContractCommand::Init { method, out } => {
                let kind = MethodKind::parse(&method)
                    .ok_or_else(|| fail(EXIT_INVALID, format!("unknown method `{method}`")))?;
                let contract = builtin_contract(kind)
                    .map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
                fs::write(&out, serialize_contract(&contract))?;
                println!("wrote {} ({} requirements)", out.display(), contract.requirements.len());
                Ok(EXIT_OK)
            }
            ContractCommand::Validate { file } => {
                let contract = parse_contract_file(&read(&file)?)
                    .map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
                let violations = validate_contract(&contract);
                if violations.is_empty() {
                    println!("contract ok: {} requirements", contract.requirements.len());
                    Ok(EXIT_OK)
                } else {
                    for v in &violations {
                        eprintln!("violation: {v}");
                    }
                    Ok(EXIT_INVALID)
                }
            }
        },

        Command::Audit { command } => match command {
            AuditCommand::Run { panel, schema, contract, attestations, out } => {
                let panel = load_panel(&panel, &schema)?;
                let contract = parse_contract_file(&read(&contract)?)
                    .map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
                let answers = match attestations {
                    Some(path) => audit::parse_attestations(&read(&path)?)
                        .map_err(|e| fail(EXIT_INVALID, e.to_string()))?,
                    None => Default::default(),
                };
                fs::create_dir_all(out.join("plots"))?;
                let report =
                    audit::run_audit(&panel, &contract, &answers, Some(&out.join("plots")))
                        .map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
                fs::write(out.join("audit.acxr"), audit::serialize_report(&report))?;
                for f in &report.findings {
                    println!("{:<28} {}", f.requirement_id, f.status.as_str());
                }
                println!("gate: {}", report.gate.as_str());
                Ok(match report.gate {
                    acx_core::audit::Gate::Open => EXIT_OK,
                    acx_core::audit::Gate::Blocked => EXIT_BLOCKED,
                })
            }
        },

        Command::Commit { command } => match command {
            CommitCommand::Lock { commitment: cpath, audit: apath, ledger: lpath } => {
                let c = load_commitment(&cpath)?;
                let audit_report = load_audit(&apath)?;
                commitment::validate_against_audit(&c, &audit_report)?;
                let entry = commitment::lock(&lpath, &c, &timestamp())?;
                println!("locked: entry {} digest {}", entry.index, entry.digest);
                println!("statement digest: {}", commitment::lock_digest(&c));
                Ok(EXIT_OK)
            }
            CommitCommand::Verify { commitment: cpath, ledger: lpath } => {
                let c = load_commitment(&cpath)?;
                let ledger = ledger::open(&lpath)?;
                let text = commitment::serialize_commitment(&c);
                match ledger
                    .entries
                    .iter()
                    .find(|e| e.kind == EntryKind::Lock && e.payload == text)
                {
                    Some(e) => {
                        println!("locked at entry {} ({})", e.index, e.timestamp);
                        Ok(EXIT_OK)
                    }
                    None => {
                        eprintln!("statement is not locked in this ledger");
                        Ok(EXIT_INVALID)
                    }
                }
            }
        },

        Command::Estimate { command } => match command {
            EstimateCommand::Run(args) => {
                if !args.exploratory && !args.confirmatory {
                    return Err(fail(
                        EXIT_INVALID,
                        "choose --exploratory or --confirmatory",
                    ));
                }
                let panel = load_panel(&args.panel, &args.schema)?;
                let estimator = EstimatorKind::parse(&args.estimator).ok_or_else(|| {
                    fail(EXIT_INVALID, format!("unknown estimator `{}`", args.estimator))
                })?;
                let mut spec = SpecDescriptor::new(estimator);
                spec.sample_filter = args.sample_filter.clone();
                spec.control_definition = args.control.clone();
                if let Some(w) = &args.window {
                    let (lo, hi) = w
                        .split_once("..")
                        .ok_or_else(|| fail(EXIT_INVALID, format!("bad window `{w}`")))?;
                    let lo = lo.parse().map_err(|_| fail(EXIT_INVALID, "bad window bound"))?;
                    let hi = hi.parse().map_err(|_| fail(EXIT_INVALID, "bad window bound"))?;
                    spec.outcome_window = Some((lo, hi));
                }
                let seed = args.seed.or_else(env_seed).unwrap_or(1);

                let taint =
                    if args.confirmatory { Taint::Confirmatory } else { Taint::Exploratory };
                let lock_ref = if args.confirmatory {
                    match args.lock_ref.clone() {
                        Some(d) => Some(d),
                        None => {
                            let ledger = ledger::open(&args.ledger)?;
                            let lock = ledger
                                .entries
                                .iter()
                                .find(|e| e.kind == EntryKind::Lock)
                                .ok_or_else(|| {
                                    fail(
                                        EXIT_BLOCKED,
                                        "confirmatory run refused: no pre-commitment is locked",
                                    )
                                })?;
                            Some(lock.digest.clone())
                        }
                    }
                } else {
                    None
                };

                let result = estimators::run(&panel, &spec, seed)
                    .map_err(|e| fail(EXIT_INVALID, format!("estimator: {e}")))?;
                let entry = ledger::append(
                    &args.ledger,
                    NewEntry {
                        kind: EntryKind::Estimate,
                        timestamp: timestamp(),
                        taint,
                        lock_ref,
                        payload: ledger::estimate_payload(
                            &spec.canonical_pairs(),
                            result.effect,
                            result.se,
                            result.p_value,
                        ),
                    },
                )?;
                println!(
                    "effect {} (se {}), 95% CI [{}, {}], p = {}",
                    fmt_f64(result.effect),
                    fmt_f64(result.se),
                    fmt_f64(result.ci95.0),
                    fmt_f64(result.ci95.1),
                    fmt_f64(result.p_value)
                );
                println!("recorded as entry {} ({:?})", entry.index, taint);
                if let Some(out) = args.out {
                    fs::write(&out, estimators::serialize_result(&result))?;
                }
                Ok(EXIT_OK)
            }
        },

        Command::Evaluate(args) => {
            let c = load_commitment(&args.commitment)?;
            let audit_report = load_audit(&args.audit)?;
            let result = args.result.as_deref().map(load_result).transpose()?;
            let metrics = assemble_metrics(&audit_report, result.as_ref());
            let verdict = commitment::evaluate(&c, &metrics);
            for (name, eval) in &verdict.per_criterion {
                println!(
                    "{name}: {}",
                    if eval.triggered { "TRIGGERED" } else { "not triggered" }
                );
            }
            println!("overall: {}", verdict.overall.as_str());
            Ok(match verdict.overall {
                Overall::TrustworthyAsCommitted => EXIT_OK,
                Overall::DistrustTriggered => EXIT_BLOCKED,
            })
        }

        Command::Report { command } => match command {
            ReportCommand::Build { audit: apath, ledger: lpath, commitment: cpath, result, out } => {
                let audit_report = load_audit(&apath)?;
                let ledger = ledger::open(&lpath)?;
                let c = cpath.as_deref().map(load_commitment).transpose()?;
                let reported = result.as_deref().map(load_result).transpose()?;
                let metrics = assemble_metrics(&audit_report, reported.as_ref());
                let built = report::build_report(&ReportInputs {
                    audit: &audit_report,
                    commitment: c.as_ref(),
                    ledger: &ledger,
                    reported: reported.as_ref(),
                    metrics: &metrics,
                })
                .map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
                fs::create_dir_all(&out)?;
                fs::write(out.join("report.md"), &built.markdown)?;
                fs::write(out.join("report.acxr"), &built.record)?;
                println!("label: {}", built.decision.label.as_str());
                for reason in built.decision.reasons() {
                    println!("reason: {reason}");
                }
                Ok(EXIT_OK)
            }
        },

        Command::Ledger { command } => match command {
            LedgerCommand::Verify { file } => {
                let bytes = fs::read(&file)
                    .map_err(|e| fail(EXIT_INVALID, format!("cannot read {}: {e}", file.display())))?;
                match ledger::verify_bytes(&bytes) {
                    VerifyOutcome::Ok => {
                        println!("ledger ok");
                        Ok(EXIT_OK)
                    }
                    VerifyOutcome::BrokenAt(index) => {
                        eprintln!("TAMPER: chain broken at entry {index}");
                        Ok(EXIT_TAMPER)
                    }
                }
            }
            LedgerCommand::Multiplicity { file } => {
                let ledger = ledger::open(&file)?;
                let m = ledger::multiplicity(&ledger)?;
                println!(
                    "{} runs, {} distinct specs ({} exploratory, {} confirmatory)",
                    m.total_specs, m.distinct_specs, m.exploratory, m.confirmatory
                );
                println!("selection flag: {}", m.selection_flag);
                for row in &m.chronology {
                    println!(
                        "  entry {:>3}  {}  {:?}  p={}",
                        row.index,
                        &row.fingerprint[..12],
                        row.taint,
                        row.p_value.map(fmt_f64).unwrap_or_else(|| "-".into())
                    );
                }
                Ok(EXIT_OK)
            }
        },

        Command::Synth { command } => match command {
            SynthCommand::Generate { scenario, seed, out } => {
                let mut spec = synthgen::scenario(&scenario).ok_or_else(|| {
                    fail(EXIT_INVALID, format!("unknown scenario `{scenario}`"))
                })?;
                if let Some(s) = seed.or_else(env_seed) {
                    spec.seed = s;
                }
                fs::create_dir_all(&out)?;
                synthgen::write_scenario(&out, &spec)
                    .map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
                println!("wrote scenario `{}` (seed {}) to {}", spec.name, spec.seed, out.display());
                Ok(EXIT_OK)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
