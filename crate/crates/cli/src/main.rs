//! `osmec` operator command line.
//!
//! Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 I/O error.

mod session;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use osmec::bus::{Message, Method};
use osmec::mano::{client, InstanceId, InstantiationMode, Template, TemplateError, MANO};
use osmec::nf::cpcf::ProtocolKind;
use osmec::nf::{self, NfError, CPCF};
use osmec::sim::log::LogParseError;
use osmec::sim::report::ExportError;
use osmec::sim::{export_report, run_scenario, ConfigError, EventLog, ExportFormat, MetricsReport, RunError, Scenario, Submission};

use session::{advance, Entry, Recorded, Session};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ConfigError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Rejected(#[from] NfError),
    #[error(transparent)]
    Log(#[from] LogParseError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("session journal line {line}: {msg}")]
    Journal { line: usize, msg: String },
    #[error("{0}")]
    Usage(String),
}

const CONFIG_CODES: [&str; 4] = ["UnknownServiceClass", "UnrecognizedProtocol", "MalformedMessage", "BadRequest"];

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Scenario(e) if e.is_io() => 3,
            CliError::Scenario(_) | CliError::Template(_) | CliError::Log(_) | CliError::Journal { .. } | CliError::Usage(_) => 2,
            CliError::Rejected(e) if e.code().is_some_and(|c| CONFIG_CODES.contains(&c)) => 2,
            CliError::Rejected(_) | CliError::Run(_) => 1,
            CliError::Io { .. } | CliError::Export(_) => 3,
        }
    }
}

pub fn parse_protocol(s: &str) -> Result<ProtocolKind, String> {
    match s {
        "http" => Ok(ProtocolKind::Http),
        "legacy" => Ok(ProtocolKind::Legacy),
        other => Err(format!("unrecognized protocol {other:?} (expected http or legacy)")),
    }
}

#[derive(Parser)]
#[command(name = "osmec", version, about = "Edge control plane simulator")]
struct Cli {
    /// Journal file that keeps a live system across invocations.
    #[arg(long, global = true)]
    session: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write events.log plus metric CSVs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only write this format; both are written by default.
        #[arg(long)]
        format: Option<ExportFormat>,
    },
    /// Submit one service request and run it to completion.
    Request {
        service_class: String,
        service_name: String,
        /// Service input as JSON.
        #[arg(default_value = "{}")]
        input: String,
        #[arg(long, default_value = "http", value_parser = parse_protocol)]
        protocol: ProtocolKind,
        #[arg(long, default_value = "parallel")]
        mode: InstantiationMode,
        /// Stop after this many simulated seconds instead of draining the agenda.
        #[arg(long)]
        until: Option<f64>,
    },
    /// Release the memory an instance still holds.
    ReleaseMemory { instance_id: u64 },
    /// Show templates, an instance or a node.
    Inspect {
        #[command(subcommand)]
        what: Inspect,
    },
    /// Check a template file.
    Validate { template: PathBuf },
    /// Recompute metrics from an events.log.
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
    },
}

#[derive(Subcommand)]
enum Inspect {
    Templates,
    Instance { id: u64 },
    Node { id: u64 },
    /// The session's event log.
    Events,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OSMEC_LOG_LEVEL", "error")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    let session = cli.session.as_deref();
    match cli.command {
        Command::Run { scenario, out, format } => cmd_run(&scenario, &out, seed, format),
        Command::Request { service_class, service_name, input, protocol, mode, until } => {
            let input: Value = serde_json::from_str(&input).map_err(|e| CliError::Usage(format!("input is not JSON: {e}")))?;
            let mut s = Session::open(session, seed.unwrap_or(0))?;
            let sub = Submission {
                request_id: s.next_request_id(),
                service_class,
                service_name,
                input,
                mode,
                protocol,
                origin: "cli".into(),
            };
            cmd_request(&mut s, &sub, until)
        }
        Command::ReleaseMemory { instance_id } => {
            let mut s = Session::open(session, seed.unwrap_or(0))?;
            cmd_release_memory(&mut s, instance_id)
        }
        Command::Inspect { what } => {
            let mut s = Session::open(session, seed.unwrap_or(0))?;
            cmd_inspect(&mut s, &what)
        }
        Command::Validate { template } => cmd_validate(&template),
        Command::Export { log, out, format } => cmd_export(&log, &out, format),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write_exports(report: &MetricsReport, out: &Path, formats: &[ExportFormat]) -> Result<(), CliError> {
    for f in formats {
        for p in export_report(report, out, *f)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn cmd_run(path: &Path, out: &Path, seed: Option<u64>, format: Option<ExportFormat>) -> Result<(), CliError> {
    let mut scenario = Scenario::load(path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let outcome = run_scenario(&scenario)?;
    for f in &outcome.failures {
        log::warn!("{f}");
    }
    std::fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;
    let log_path = out.join("events.log");
    std::fs::write(&log_path, outcome.log().to_text()).map_err(|source| CliError::Io { path: log_path.clone(), source })?;
    println!("wrote {}", log_path.display());
    let formats = match format {
        Some(f) => vec![f],
        None => vec![ExportFormat::Csv, ExportFormat::HistogramCsv],
    };
    write_exports(&outcome.report, out, &formats)?;
    let r = &outcome.report;
    println!("completed={} failed={} rejected={} log_hash={}", r.completed, r.failed, r.rejected, r.log_hash);
    Ok(())
}

fn print_instance(v: &Value) {
    let id = &v["instance_id"];
    let state = v["state"].as_str().unwrap_or("?");
    println!("instance {id}: {state}");
    if !v["result"].is_null() {
        println!("result: {}", v["result"]);
    }
}

fn cmd_request(s: &mut Session, sub: &Submission, until: Option<f64>) -> Result<(), CliError> {
    let accepted: Value = nf::call_json(&mut s.system.bus, CPCF, sub.ingest_message())?;
    advance(&mut s.system, until);
    s.append(&Entry::Request { submission: Recorded::from_submission(sub), until })?;
    let id = accepted["instance_id"].as_u64().ok_or_else(|| CliError::Usage("reply lacks instance_id".into()))?;
    print_instance(&client::instance(&mut s.system.bus, InstanceId(id))?);
    Ok(())
}

fn cmd_release_memory(s: &mut Session, id: u64) -> Result<(), CliError> {
    let outcome = client::release_memory(&mut s.system.bus, InstanceId(id), "cli")?;
    if outcome.noop {
        println!("instance {id}: already released");
        return Ok(());
    }
    advance(&mut s.system, None);
    s.append(&Entry::Release { instance: id })?;
    println!("instance {id}: {}", outcome.state);
    Ok(())
}

fn cmd_inspect(s: &mut Session, what: &Inspect) -> Result<(), CliError> {
    let bus = &mut s.system.bus;
    match what {
        Inspect::Templates => {
            for t in client::templates(bus)? {
                let apps: Vec<&str> = t.apps().map(|a| a.nf_id.as_str()).collect();
                println!("{}\t{}\t{}", t.template_id, t.app_class, apps.join(","));
            }
        }
        Inspect::Instance { id } => {
            let v = client::instance(bus, InstanceId(*id))?;
            println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
        }
        Inspect::Node { id } => {
            let m = Message::request(Method::Get, format!("/ebi/mano/nodes/{id}")).map_err(NfError::from)?;
            let v: Value = nf::call_json(bus, MANO, m)?;
            println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
        }
        Inspect::Events => print!("{}", bus.log().to_text()),
    }
    Ok(())
}

fn cmd_validate(path: &Path) -> Result<(), CliError> {
    let t = Template::from_json(&read(path)?)?;
    t.validate()?;
    println!("{}: ok", t.template_id);
    Ok(())
}

fn cmd_export(log_path: &Path, out: &Path, format: ExportFormat) -> Result<(), CliError> {
    let log = EventLog::parse_text(&read(log_path)?)?;
    std::fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;
    write_exports(&MetricsReport::from_log(&log), out, &[format])
}
