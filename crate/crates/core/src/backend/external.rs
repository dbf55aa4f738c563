//! Line-delimited JSON over a child process's standard streams.
//!
//! The child writes one handshake line, `{"capabilities": {...}}`, and then
//! answers each request line with exactly one response line:
//!
//! ```text
//! > {"op":"execute","with":{...},"without":{...},"runs":10,"mode":"normal"}
//! < {"runs_with":[...],"runs_without":[...]}
//! > {"op":"probe","spec":{...},"init":{...}}
//! < {"fault":null}
//! ```
//!
//! Either response may instead carry `{"error": "..."}`.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Capabilities, ExecMode, ExecutionBackend, FaultOutcome, MeasurementResult, Signal};
use crate::catalog::{InitPolicy, InstructionSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::testcase::{TestCase, TestCasePair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub capabilities: Capabilities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteRequest {
    pub with: TestCase,
    pub without: TestCase,
    pub runs: usize,
    pub mode: ExecMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRequest {
    pub spec: InstructionSpec,
    pub init: InitPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Execute(ExecuteRequest),
    Probe(ProbeRequest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteResponse {
    pub runs_with: Vec<i64>,
    pub runs_without: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResponse {
    pub fault: Option<Signal>,
}

#[derive(Deserialize)]
struct ErrorResponse {
    error: String,
}

struct Pipes {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A backend implemented by a child process.
///
/// Requests are serialized through one pipe pair, so concurrent callers
/// queue. Noise comes from the child; the generator passed to `execute` is
/// not consumed.
pub struct ExternalBackend {
    program: PathBuf,
    child: Child,
    pipes: Mutex<Pipes>,
    caps: Capabilities,
}

impl std::fmt::Debug for ExternalBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalBackend")
            .field("program", &self.program)
            .field("caps", &self.caps)
            .finish()
    }
}

impl ExternalBackend {
    pub fn spawn(program: impl Into<PathBuf>, args: &[String]) -> Result<Self> {
        let program = program.into();
        let mut child = Command::new(&program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(&program, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut pipes = Pipes { stdin, stdout };
        let line = read_line(&mut pipes)?;
        let hs: Handshake =
            serde_json::from_str(&line).map_err(|e| Error::Backend(format!("bad handshake {line:?}: {e}")))?;
        Ok(ExternalBackend {
            program,
            child,
            pipes: Mutex::new(pipes),
            caps: hs.capabilities,
        })
    }

    fn round_trip<T: for<'de> Deserialize<'de>>(&self, req: &Request) -> Result<T> {
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        let mut pipes = self.pipes.lock().map_err(|_| Error::Backend("poisoned pipe".into()))?;
        pipes
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| pipes.stdin.flush())
            .map_err(|e| Error::Backend(format!("write to backend: {e}")))?;
        let reply = read_line(&mut pipes)?;
        if let Ok(err) = serde_json::from_str::<ErrorResponse>(&reply) {
            return Err(Error::Backend(err.error));
        }
        serde_json::from_str(&reply).map_err(|e| Error::Backend(format!("bad response {reply:?}: {e}")))
    }
}

fn read_line(pipes: &mut Pipes) -> Result<String> {
    let mut line = String::new();
    let n = pipes
        .stdout
        .read_line(&mut line)
        .map_err(|e| Error::Backend(format!("read from backend: {e}")))?;
    if n == 0 {
        return Err(Error::Backend("backend closed its output".into()));
    }
    Ok(line.trim_end().to_string())
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl ExecutionBackend for ExternalBackend {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn probe_fault(&self, spec: &InstructionSpec, init: &InitPolicy) -> Result<FaultOutcome> {
        if !self.caps.fault_probe {
            return Err(Error::Capability("single-instruction fault probing".into()));
        }
        let resp: ProbeResponse = self.round_trip(&Request::Probe(ProbeRequest {
            spec: spec.clone(),
            init: init.clone(),
        }))?;
        Ok(resp.fault.map_or(FaultOutcome::Ok, FaultOutcome::Fault))
    }

    fn execute(&self, pair: &TestCasePair, runs: usize, mode: ExecMode, _rng: &mut Rng) -> Result<MeasurementResult> {
        if runs == 0 {
            return Err(Error::Argument("at least one run per side".into()));
        }
        if mode == ExecMode::Transient && !self.caps.transient {
            return Err(Error::Capability("transient execution".into()));
        }
        let resp: ExecuteResponse = self.round_trip(&Request::Execute(ExecuteRequest {
            with: pair.with_trigger.clone(),
            without: pair.without_trigger.clone(),
            runs,
            mode,
        }))?;
        if resp.runs_with.len() != runs || resp.runs_without.len() != runs {
            return Err(Error::Backend(format!(
                "asked for {runs} runs per side, got {} and {}",
                resp.runs_with.len(),
                resp.runs_without.len()
            )));
        }
        Ok(MeasurementResult::from_runs(resp.runs_with, resp.runs_without))
    }
}
