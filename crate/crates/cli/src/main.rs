mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sdeg_core::adversary::{builtin, load_adversary, scenario_names, AdversaryError};
use sdeg_core::engine::{
    read_jsonl, run, write_jsonl, EngineError, Event, EventBody, RunSpec, Snapshot, TraceReadError,
};
use sdeg_core::verifier::{self, check_snapshots, run_audits, AuditReport, Verdict};

use config::{parse_audits, AdversarySource, ConfigError, EngineConfig, FileConfig};

const EXIT_CONFIG: u8 = 1;
const EXIT_SCHEDULE: u8 = 2;
const EXIT_AUDIT: u8 = 3;
const EXIT_TRAP: u8 = 4;

/// Simulate the priority-tree construction and audit its traces.
#[derive(Debug, Parser)]
#[command(name = "sdeg", version)]
struct Cli {
    /// TOML file with run settings. Flags and SDEG_* variables take precedence.
    #[arg(long, global = true, env = "SDEG_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the construction against an adversary.
    Run(RunArgs),
    /// Audit a recorded trace.
    Audit {
        trace: PathBuf,
        #[command(flatten)]
        audit: AuditArgs,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Rebuild state from a trace and compare it with the recorded snapshots.
    Replay {
        trace: PathBuf,
        /// Snapshot file; defaults to `<trace>.snapshots.jsonl` when present.
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// Built-in adversaries.
    Scenarios {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Debug, Subcommand)]
enum ScenarioAction {
    List,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// theorem2 or corollary3.
    #[arg(long, env = "SDEG_MODE")]
    mode: Option<String>,
    /// Number of stages to run.
    #[arg(long, env = "SDEG_STAGES")]
    stages: Option<u64>,
    /// Interleaving of requirements, e.g. `SR` or `SSR`.
    #[arg(long, env = "SDEG_ORDERING")]
    ordering: Option<String>,
    /// Built-in adversary (see `scenarios list`).
    #[arg(long, env = "SDEG_SCENARIO", conflicts_with = "adversary")]
    scenario: Option<String>,
    /// Adversary file in JSON.
    #[arg(long, env = "SDEG_ADVERSARY")]
    adversary: Option<PathBuf>,
    /// Seed for the `random` scenario.
    #[arg(long, env = "SDEG_SEED")]
    seed: Option<u64>,
    /// Write the event trace here, one JSON record per line.
    #[arg(long, env = "SDEG_TRACE")]
    trace: Option<PathBuf>,
    /// Write a snapshot every this many stages to `<trace>.snapshots.jsonl`.
    #[arg(long, env = "SDEG_SNAPSHOT_EVERY")]
    snapshot_every: Option<u64>,
    #[command(flatten)]
    audit: AuditArgs,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Report audit results without letting them set the exit code.
    #[arg(long)]
    report_only: bool,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Audits to run: `all` or names separated by commas.
    #[arg(long, env = "SDEG_AUDIT", value_delimiter = ',')]
    audit: Option<Vec<String>>,
    /// Final window of stages for limit audits.
    #[arg(long, env = "SDEG_WINDOW")]
    window: Option<u64>,
    /// Heads checked by the quiescence audit are below this.
    #[arg(long, env = "SDEG_ZBOUND")]
    zbound: Option<u64>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<AdversaryError> for Failure {
    fn from(e: AdversaryError) -> Self {
        let code = match e {
            AdversaryError::UnknownScenario(_) | AdversaryError::MissingSeed => EXIT_CONFIG,
            AdversaryError::Parse(_) | AdversaryError::Duplicate(_) | AdversaryError::Validation { .. } => {
                EXIT_SCHEDULE
            }
        };
        Failure::new(code, e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = if matches!(e, EngineError::Trap { .. }) { EXIT_TRAP } else { EXIT_SCHEDULE };
        Failure::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Run(args) => run_command(args, file),
        Command::Audit { trace, audit, json } => audit_command(&trace, audit, file, json),
        Command::Replay { trace, snapshots } => replay_command(&trace, snapshots),
        Command::Scenarios { action: ScenarioAction::List } => {
            for name in scenario_names() {
                println!("{name:<20} {}", scenario_blurb(name));
            }
            Ok(0)
        }
    }
}

fn scenario_blurb(name: &str) -> &'static str {
    match name {
        "empty" => "no axioms; every R-node waits forever",
        "diag1" => "realizes the first witness once, forcing a single diagonalization",
        "setup1" => "ties the first witness to a Gamma marker, forcing a setup",
        "setup-then-release" => "setup1, then clears the setup witness so it is extracted",
        "random" => "seeded random adversary (needs --seed)",
        _ => "",
    }
}

fn run_command(args: RunArgs, mut file: FileConfig) -> Result<u8, Failure> {
    if args.scenario.is_some() || args.adversary.is_some() {
        file.scenario = None;
        file.adversary = None;
        file.seed = None;
    }
    let flags = FileConfig {
        mode: args.mode,
        stages: args.stages,
        ordering: args.ordering,
        scenario: args.scenario,
        adversary: args.adversary,
        seed: args.seed,
        trace: args.trace,
        snapshot_every: args.snapshot_every,
        audit: args.audit.audit,
        window: args.audit.window,
        zbound: args.audit.zbound,
    };
    let cfg = EngineConfig::resolve(flags.or(file))?;

    let (label, adversary) = match &cfg.adversary {
        AdversarySource::Builtin(name) => (name.clone(), builtin(name, &cfg.ordering, cfg.seed, cfg.stages)?),
        AdversarySource::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())))?;
            (path.display().to_string(), load_adversary(&text, &cfg.ordering)?)
        }
    };
    let label = match cfg.seed {
        Some(seed) => format!("{label}#{seed}"),
        None => label,
    };
    let spec = RunSpec {
        mode: cfg.mode,
        stages: cfg.stages,
        ordering: cfg.ordering.clone(),
        adversary,
        label: label.clone(),
        snapshot_every: cfg.snapshot_every,
    };
    let out = run(spec)?;

    let mut written = serde_json::Map::new();
    if let Some(path) = &cfg.trace {
        write_lines(path, |w| write_jsonl(w, &out.events))?;
        written.insert("trace".into(), json!(path));
        if cfg.snapshot_every.is_some() {
            let snap_path = snapshots_path(path);
            write_lines(&snap_path, |mut w| {
                for s in &out.snapshots {
                    serde_json::to_writer(&mut w, s)?;
                    w.write_all(b"\n")?;
                }
                Ok(())
            })?;
            written.insert("snapshots".into(), json!(snap_path));
        }
    }

    let reports = run_audits(&cfg.audits, &out.events, &cfg.audit_options);
    let summary = summarize(&out.events);
    if args.json {
        let doc = json!({
            "run": { "scenario": label, "mode": cfg.mode.to_string(), "stages": cfg.stages,
                     "ordering": cfg.ordering.pattern(), "summary": summary, "files": written },
            "audits": reports,
        });
        println!("{}", serde_json::to_string_pretty(&doc).expect("report serializes"));
    } else {
        println!("run {label}: mode {}, {} stages, ordering {}", cfg.mode, cfg.stages, cfg.ordering.pattern());
        print_summary(&summary);
        for (what, path) in &written {
            println!("{what}: {}", path.as_str().unwrap_or_default());
        }
        print_audits(&reports);
    }
    Ok(if !args.report_only && any_failed(&reports) { EXIT_AUDIT } else { 0 })
}

fn audit_command(trace: &Path, args: AuditArgs, file: FileConfig, json: bool) -> Result<u8, Failure> {
    let events = load_trace(trace)?;
    let mode = verifier::trace_mode(&events)
        .ok_or_else(|| Failure::new(EXIT_AUDIT, format!("{}: no run_started record", trace.display())))?;
    let names = args.audit.or(file.audit).unwrap_or_else(|| vec!["all".into()]);
    let kinds = parse_audits(&names, mode).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let defaults = verifier::AuditOptions::default();
    let opts = verifier::AuditOptions {
        window: args.window.or(file.window).unwrap_or(defaults.window),
        zbound: args.zbound.or(file.zbound).unwrap_or(defaults.zbound),
    };
    let reports = run_audits(&kinds, &events, &opts);
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({ "trace": trace, "audits": reports })).expect("report serializes")
        );
    } else {
        println!("trace {}: {} events, mode {mode}", trace.display(), events.len());
        print_audits(&reports);
    }
    Ok(if any_failed(&reports) { EXIT_AUDIT } else { 0 })
}

fn replay_command(trace: &Path, snapshots: Option<PathBuf>) -> Result<u8, Failure> {
    let events = load_trace(trace)?;
    let mismatch = |e: verifier::ReplayError| Failure::new(EXIT_AUDIT, format!("replay failed: {e}"));
    let state = verifier::replay(&events).map_err(mismatch)?;
    let default_path = snapshots_path(trace);
    let snap_path = snapshots.or_else(|| default_path.exists().then_some(default_path));
    let mut checked = 0;
    if let Some(path) = snap_path {
        let snaps = load_snapshots(&path)?;
        check_snapshots(&events, &snaps).map_err(mismatch)?;
        checked = snaps.len();
    }
    let snap = state.snapshot();
    println!("replay ok: {} events, {} stages, final snapshot matches", events.len(), snap.stage);
    println!("A extracted: {:?}", snap.a_extracted);
    println!("D extracted: {:?}, re-entered: {:?}", snap.d_extracted, snap.d_reentered);
    println!("defined markers: {}, live witnesses: {}", snap.markers.len(), snap.witnesses.len());
    if checked > 0 {
        println!("intermediate snapshots checked: {checked}");
    }
    Ok(0)
}

fn snapshots_path(trace: &Path) -> PathBuf {
    let mut s = OsString::from(trace.as_os_str());
    s.push(".snapshots.jsonl");
    PathBuf::from(s)
}

fn write_lines(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::new(EXIT_CONFIG, format!("cannot write {}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    body(&mut w).and_then(|_| w.flush()).map_err(io)
}

fn load_trace(path: &Path) -> Result<Vec<Event>, Failure> {
    let f = File::open(path).map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())))?;
    read_jsonl(BufReader::new(f)).map_err(|e| match e {
        TraceReadError::Parse { .. } => Failure::new(EXIT_AUDIT, format!("{}: corrupt trace, {e}", path.display())),
        other => Failure::new(EXIT_CONFIG, format!("cannot read {}: {other}", path.display())),
    })
}

fn load_snapshots(path: &Path) -> Result<Vec<Snapshot>, Failure> {
    let f = File::open(path).map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let snap = serde_json::from_str(&line)
            .map_err(|e| Failure::new(EXIT_AUDIT, format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(snap);
    }
    Ok(out)
}

fn summarize(events: &[Event]) -> serde_json::Value {
    let mut cases: BTreeMap<&str, u64> = BTreeMap::new();
    let (mut a_changes, mut d_out, mut d_in, mut markers) = (0, 0, 0, 0);
    let mut final_f = String::from("root");
    for e in events {
        match &e.body {
            EventBody::OutcomeTaken { case, .. } if case != "root" => *cases.entry(case).or_default() += 1,
            EventBody::ExtractA { .. } => a_changes += 1,
            EventBody::ExtractD { .. } => d_out += 1,
            EventBody::EnumD { .. } => d_in += 1,
            EventBody::MarkerDefined { .. } => markers += 1,
            EventBody::StageEnd { f } => final_f = f.to_string(),
            _ => {}
        }
    }
    json!({
        "events": events.len(),
        "a_extractions": a_changes,
        "d_extractions": d_out,
        "d_enumerations": d_in,
        "markers_defined": markers,
        "cases": cases,
        "final_f": final_f,
    })
}

fn print_summary(s: &serde_json::Value) {
    println!(
        "events {}, A extractions {}, D extractions {}, D re-enumerations {}, markers defined {}",
        s["events"], s["a_extractions"], s["d_extractions"], s["d_enumerations"], s["markers_defined"]
    );
    println!("cases:");
    for (case, n) in s["cases"].as_object().into_iter().flatten() {
        println!("  {case:<10} {n}");
    }
    println!("final f: {}", s["final_f"].as_str().unwrap_or_default());
}

fn print_audits(reports: &[AuditReport]) {
    if reports.is_empty() {
        return;
    }
    println!("audits:");
    for r in reports {
        println!("  {r}");
    }
}

fn any_failed(reports: &[AuditReport]) -> bool {
    reports.iter().any(|r| r.verdict == Verdict::Fail)
}
