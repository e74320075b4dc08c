//! Append-only command journal. A live system is rebuilt on every
//! invocation by replaying the journal on a freshly booted instance.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use osmec::mano::{client, InstanceId, InstantiationMode};
use osmec::sim::{Scenario, Submission, System};
use osmec::SimTime;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entry {
    Boot { seed: u64 },
    Request { submission: Recorded, until: Option<f64> },
    Release { instance: u64 },
}

/// Serializable form of a [`Submission`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Recorded {
    pub request_id: u64,
    pub service_class: String,
    pub service_name: String,
    pub input: serde_json::Value,
    pub mode: String,
    pub protocol: String,
}

impl Recorded {
    pub fn from_submission(s: &Submission) -> Self {
        Recorded {
            request_id: s.request_id,
            service_class: s.service_class.clone(),
            service_name: s.service_name.clone(),
            input: s.input.clone(),
            mode: s.mode.to_string(),
            protocol: s.protocol.as_str().to_string(),
        }
    }

    fn to_submission(&self) -> Result<Submission, String> {
        Ok(Submission {
            request_id: self.request_id,
            service_class: self.service_class.clone(),
            service_name: self.service_name.clone(),
            input: self.input.clone(),
            mode: self.mode.parse::<InstantiationMode>().map_err(|e| e.to_string())?,
            protocol: crate::parse_protocol(&self.protocol)?,
            origin: "cli".into(),
        })
    }
}

pub struct Session {
    pub system: System,
    path: Option<PathBuf>,
    next_request: u64,
}

/// Runs the agenda for `secs` of simulated time, or to exhaustion.
pub fn advance(system: &mut System, secs: Option<f64>) {
    let until = secs.map(|s| system.bus.now() + SimTime::from_secs_f64(s));
    for f in system.run(until) {
        log::warn!("{f}");
    }
}

impl Session {
    pub fn open(path: Option<&Path>, seed: u64) -> Result<Session, CliError> {
        let entries = match path {
            Some(p) if p.exists() => read_journal(p)?,
            _ => Vec::new(),
        };
        let seed = match entries.first() {
            Some(Entry::Boot { seed }) => *seed,
            _ => seed,
        };
        let scenario = Scenario { seed, ..Scenario::default() };
        let system = System::boot(&scenario).map_err(CliError::Run)?;
        let mut session = Session { system, path: path.map(Path::to_path_buf), next_request: 1 };
        if entries.is_empty() {
            session.append(&Entry::Boot { seed })?;
        }
        for (i, e) in entries.iter().enumerate() {
            session.replay(e).map_err(|msg| CliError::Journal { line: i + 1, msg })?;
        }
        Ok(session)
    }

    fn replay(&mut self, e: &Entry) -> Result<(), String> {
        match e {
            Entry::Boot { .. } => {}
            Entry::Request { submission, until } => {
                let sub = submission.to_submission()?;
                self.system.submit(&sub).map_err(|e| e.to_string())?;
                advance(&mut self.system, *until);
                self.next_request = self.next_request.max(sub.request_id + 1);
            }
            Entry::Release { instance } => {
                client::release_memory(&mut self.system.bus, InstanceId(*instance), "cli").map_err(|e| e.to_string())?;
                advance(&mut self.system, None);
            }
        }
        Ok(())
    }

    pub fn next_request_id(&self) -> u64 {
        self.next_request
    }

    pub fn append(&mut self, e: &Entry) -> Result<(), CliError> {
        if let Entry::Request { submission, .. } = e {
            self.next_request = submission.request_id + 1;
        }
        let Some(path) = &self.path else { return Ok(()) };
        let io = |source| CliError::Io { path: path.clone(), source };
        let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        let line = serde_json::to_string(e).expect("journal entries serialize");
        writeln!(f, "{line}").map_err(io)
    }
}

fn read_journal(path: &Path) -> Result<Vec<Entry>, CliError> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    let f = File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|e| CliError::Journal { line: i + 1, msg: e.to_string() })?;
        out.push(e);
    }
    Ok(out)
}
