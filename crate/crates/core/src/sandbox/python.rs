use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Sandbox, SandboxError, SyntaxCheck};
use crate::taxonomy::ExecutionResult;

/// Source of the harness script run by the interpreter.
pub const HARNESS_SOURCE: &str = include_str!("harness.py");

pub const PROTOCOL_VERSION: u64 = 1;

/// Deadline for replies that carry no subject timeout (banner, syntax check).
const CONTROL_DEADLINE: Duration = Duration::from_secs(30);

struct Harness {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<String>,
}

impl Drop for Harness {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Long-lived Python harness process, restarted after a timeout or crash.
pub struct PythonSandbox {
    interpreter: String,
    harness: Option<Harness>,
    restarts: u64,
}

impl PythonSandbox {
    /// Uses `$DIFFORACLE_PYTHON` or `python3`.
    pub fn new() -> Self {
        let interpreter = std::env::var("DIFFORACLE_PYTHON").unwrap_or_else(|_| "python3".to_string());
        Self::with_interpreter(interpreter)
    }

    pub fn with_interpreter(interpreter: impl Into<String>) -> Self {
        PythonSandbox { interpreter: interpreter.into(), harness: None, restarts: 0 }
    }

    /// Number of times the harness was killed and respawned.
    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    /// Starts the harness now instead of on first use.
    pub fn start(&mut self) -> Result<(), SandboxError> {
        if self.harness.is_none() {
            self.harness = Some(self.spawn()?);
        }
        Ok(())
    }

    fn spawn(&self) -> Result<Harness, SandboxError> {
        let spawn_err = |source| SandboxError::Spawn { interpreter: self.interpreter.clone(), source };
        let mut child = Command::new(&self.interpreter)
            .args(["-u", "-c", HARNESS_SOURCE])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(spawn_err)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, replies) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let harness = Harness { child, stdin, replies };
        let banner = match harness.replies.recv_timeout(CONTROL_DEADLINE) {
            Ok(line) => line,
            Err(_) => return Err(SandboxError::HarnessCrash("no startup banner".into())),
        };
        let banner: Value =
            serde_json::from_str(&banner).map_err(|e| SandboxError::Protocol(format!("bad banner `{banner}`: {e}")))?;
        if banner != json!({"ready": true, "proto": PROTOCOL_VERSION}) {
            return Err(SandboxError::Protocol(format!("unexpected banner {banner}")));
        }
        Ok(harness)
    }

    /// Sends one command and waits for its reply. `Ok(None)` means the
    /// deadline passed; the harness has then been killed.
    fn round_trip(&mut self, cmd: &Value, deadline: Duration) -> Result<Option<Value>, SandboxError> {
        self.start()?;
        let harness = self.harness.as_mut().expect("started");
        let mut line = serde_json::to_string(cmd).expect("command serializes");
        line.push('\n');
        if let Err(e) = harness.stdin.write_all(line.as_bytes()).and_then(|_| harness.stdin.flush()) {
            self.harness = None;
            return Err(SandboxError::HarnessCrash(format!("write failed: {e}")));
        }
        match harness.replies.recv_timeout(deadline) {
            Ok(reply) => serde_json::from_str(&reply)
                .map(Some)
                .map_err(|e| SandboxError::Protocol(format!("bad reply `{reply}`: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                self.harness = None;
                self.restarts += 1;
                Ok(None)
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.harness = None;
                Err(SandboxError::HarnessCrash("stdout closed".into()))
            }
        }
    }
}

impl Default for PythonSandbox {
    fn default() -> Self {
        Self::new()
    }
}

fn protocol_error(reply: &Value) -> Option<SandboxError> {
    reply.get("error").map(|e| SandboxError::Protocol(e.as_str().unwrap_or_default().to_string()))
}

impl Sandbox for PythonSandbox {
    fn syntax_check(&mut self, source: &str, entry_point: &str) -> Result<SyntaxCheck, SandboxError> {
        let cmd = json!({"op": "syntax_check", "source": source, "entry_point": entry_point});
        let reply = self
            .round_trip(&cmd, CONTROL_DEADLINE)?
            .ok_or_else(|| SandboxError::HarnessCrash("syntax check did not answer".into()))?;
        if let Some(e) = protocol_error(&reply) {
            return Err(e);
        }
        serde_json::from_value(reply).map_err(|e| SandboxError::Protocol(e.to_string()))
    }

    fn execute(
        &mut self,
        source: &str,
        entry_point: &str,
        args: &[Value],
        timeout_ms: u64,
    ) -> Result<ExecutionResult, SandboxError> {
        let cmd = json!({
            "op": "execute",
            "source": source,
            "entry_point": entry_point,
            "args": args,
            "timeout_ms": timeout_ms,
        });
        let started = Instant::now();
        match self.round_trip(&cmd, Duration::from_millis(timeout_ms))? {
            Some(reply) => {
                if let Some(e) = protocol_error(&reply) {
                    return Err(e);
                }
                serde_json::from_value(reply).map_err(|e| SandboxError::Protocol(e.to_string()))
            }
            None => Ok(ExecutionResult::timeout(started.elapsed().as_millis() as u64)),
        }
    }
}
