//! Model runners: replay of recorded predictions, or an external process
//! speaking the [`protocol`](crate::protocol).

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use cascade_core::{Confidence, Prediction, PredictionRecord};
use serde::{Deserialize, Serialize};

use crate::protocol::{ProtocolError, Request, Response};

pub const DEFAULT_STARTUP_TIMEOUT_SECS: f64 = 30.0;
pub const DEFAULT_RESPONSE_TIMEOUT_SECS: f64 = 120.0;

fn default_startup() -> f64 {
    DEFAULT_STARTUP_TIMEOUT_SECS
}

fn default_response() -> f64 {
    DEFAULT_RESPONSE_TIMEOUT_SECS
}

/// How to obtain a stage's predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunnerSpec {
    Replay {
        records: PathBuf,
    },
    Subprocess {
        command: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        working_dir: Option<PathBuf>,
        #[serde(default = "default_startup")]
        startup_timeout_secs: f64,
        #[serde(default = "default_response")]
        response_timeout_secs: f64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("failed to start runner `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("runner did not answer within {0:?}")]
    Timeout(Duration),
    #[error("runner exited unexpectedly ({0})")]
    Exited(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("runner announced model `{found}`, stage expects `{expected}`")]
    NameMismatch { expected: String, found: String },
    #[error("runner answered for unexpected sample `{0}`")]
    UnexpectedSample(String),
    #[error("no recorded prediction for sample `{0}`")]
    UnknownSample(String),
    #[error("confidence {0} outside [0, 1]")]
    BadConfidence(f64),
    #[error("runner io: {0}")]
    Io(#[from] io::Error),
}

/// One request for a prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub sample_id: String,
    pub payload: String,
}

impl Sample {
    pub fn new(sample_id: impl Into<String>) -> Self {
        let sample_id = sample_id.into();
        Self {
            payload: sample_id.clone(),
            sample_id,
        }
    }
}

pub trait Runner {
    /// Returns the model name the runner announces.
    fn handshake(&mut self) -> Result<String, RunnerError>;

    /// Predicts every sample of `batch`. The result follows `batch` order
    /// whatever order the runner answered in.
    fn predict(&mut self, batch: &[Sample]) -> Result<Vec<Prediction>, (usize, RunnerError)>;

    fn shutdown(&mut self) -> Result<(), RunnerError>;
}

/// Answers from a record file.
pub struct ReplayRunner {
    name: String,
    table: HashMap<String, Prediction>,
}

impl ReplayRunner {
    pub fn new(name: impl Into<String>, records: &[PredictionRecord]) -> Self {
        let table = records
            .iter()
            .map(|r| {
                (
                    r.sample_id.clone(),
                    Prediction {
                        label: r.predicted_label,
                        confidence: r.confidence,
                    },
                )
            })
            .collect();
        Self {
            name: name.into(),
            table,
        }
    }
}

impl Runner for ReplayRunner {
    fn handshake(&mut self) -> Result<String, RunnerError> {
        Ok(self.name.clone())
    }

    fn predict(&mut self, batch: &[Sample]) -> Result<Vec<Prediction>, (usize, RunnerError)> {
        batch
            .iter()
            .enumerate()
            .map(|(i, s)| {
                self.table
                    .get(&s.sample_id)
                    .copied()
                    .ok_or_else(|| (i, RunnerError::UnknownSample(s.sample_id.clone())))
            })
            .collect()
    }

    fn shutdown(&mut self) -> Result<(), RunnerError> {
        Ok(())
    }
}

enum Line {
    Text(String),
    Eof,
    Failed(io::Error),
}

/// An external process speaking the line protocol on stdin/stdout.
///
/// A reader thread drains stdout into a channel, so requests can be
/// pipelined without the two pipes deadlocking.
pub struct SubprocessRunner {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    lines: Receiver<Line>,
    startup_timeout: Duration,
    response_timeout: Duration,
}

fn secs(s: f64) -> Duration {
    Duration::try_from_secs_f64(s.max(0.0)).unwrap_or(Duration::MAX)
}

impl SubprocessRunner {
    pub fn spawn(
        command: &[String],
        working_dir: Option<&Path>,
        startup_timeout_secs: f64,
        response_timeout_secs: f64,
    ) -> Result<Self, RunnerError> {
        let (program, args) = command.split_first().ok_or_else(|| RunnerError::Spawn {
            command: String::new(),
            source: io::Error::new(io::ErrorKind::InvalidInput, "empty command"),
        })?;
        let mut cmd = Command::new(program);
        cmd.args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        if let Some(dir) = working_dir {
            cmd.current_dir(dir);
        }
        let mut child = cmd.spawn().map_err(|source| RunnerError::Spawn {
            command: command.join(" "),
            source,
        })?;
        let stdin = child.stdin.take().map(BufWriter::new);
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut buf = String::new();
                let msg = match reader.read_line(&mut buf) {
                    Ok(0) => Line::Eof,
                    Ok(_) => Line::Text(buf),
                    Err(e) => Line::Failed(e),
                };
                let done = !matches!(msg, Line::Text(_));
                if tx.send(msg).is_err() || done {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
            startup_timeout: secs(startup_timeout_secs),
            response_timeout: secs(response_timeout_secs),
        })
    }

    fn send(&mut self, req: &Request) -> Result<(), RunnerError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| RunnerError::Exited("stdin already closed".into()))?;
        writeln!(stdin, "{req}").map_err(|e| self.write_error(e))
    }

    fn flush(&mut self) -> Result<(), RunnerError> {
        match self.stdin.as_mut().map(Write::flush) {
            Some(Err(e)) => Err(self.write_error(e)),
            _ => Ok(()),
        }
    }

    fn write_error(&mut self, e: io::Error) -> RunnerError {
        if e.kind() == io::ErrorKind::BrokenPipe {
            RunnerError::Exited(self.exit_description())
        } else {
            RunnerError::Io(e)
        }
    }

    fn exit_description(&mut self) -> String {
        // Give a dying process a moment to be reaped.
        let deadline = Instant::now() + Duration::from_millis(200);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return describe(status),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => return "stdout closed".into(),
            }
        }
    }

    fn recv(&mut self, timeout: Duration) -> Result<Response, RunnerError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Line::Text(t)) => Ok(Response::parse(&t)?),
            Ok(Line::Failed(e)) => Err(RunnerError::Io(e)),
            Ok(Line::Eof) | Err(RecvTimeoutError::Disconnected) => {
                Err(RunnerError::Exited(self.exit_description()))
            }
            Err(RecvTimeoutError::Timeout) => Err(RunnerError::Timeout(timeout)),
        }
    }
}

fn describe(status: ExitStatus) -> String {
    match status.code() {
        Some(c) => format!("exit status {c}"),
        None => "killed by signal".into(),
    }
}

impl Runner for SubprocessRunner {
    fn handshake(&mut self) -> Result<String, RunnerError> {
        self.send(&Request::Hello)?;
        self.flush()?;
        match self.recv(self.startup_timeout)? {
            Response::Model(name) => Ok(name),
            Response::Result { .. } => Err(RunnerError::Protocol(ProtocolError {
                line: "RESULT ...".into(),
                reason: "expected MODEL in reply to HELLO",
            })),
        }
    }

    fn predict(&mut self, batch: &[Sample]) -> Result<Vec<Prediction>, (usize, RunnerError)> {
        for (i, s) in batch.iter().enumerate() {
            let req = Request::Predict {
                sample_id: s.sample_id.clone(),
                payload: s.payload.clone(),
            };
            self.send(&req).map_err(|e| (i, e))?;
        }
        self.flush().map_err(|e| (0, e))?;

        let index: HashMap<&str, usize> = batch
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sample_id.as_str(), i))
            .collect();
        let mut out: Vec<Option<Prediction>> = vec![None; batch.len()];
        let mut pending: HashSet<usize> = (0..batch.len()).collect();
        // Lowest outstanding index, for error reports.
        let first_pending = |p: &HashSet<usize>| p.iter().copied().min().unwrap_or(0);
        while !pending.is_empty() {
            let resp = self
                .recv(self.response_timeout)
                .map_err(|e| (first_pending(&pending), e))?;
            let (sample_id, label, confidence) = match resp {
                Response::Result {
                    sample_id,
                    label,
                    confidence,
                } => (sample_id, label, confidence),
                Response::Model(_) => {
                    return Err((
                        first_pending(&pending),
                        RunnerError::Protocol(ProtocolError {
                            line: "MODEL ...".into(),
                            reason: "unexpected MODEL while predicting",
                        }),
                    ))
                }
            };
            let i = match index.get(sample_id.as_str()) {
                Some(&i) if pending.remove(&i) => i,
                _ => {
                    return Err((
                        first_pending(&pending),
                        RunnerError::UnexpectedSample(sample_id),
                    ))
                }
            };
            let confidence = Confidence::new(confidence)
                .map_err(|_| (i, RunnerError::BadConfidence(confidence)))?;
            out[i] = Some(Prediction { label, confidence });
        }
        Ok(out.into_iter().map(|p| p.expect("all answered")).collect())
    }

    fn shutdown(&mut self) -> Result<(), RunnerError> {
        if self.stdin.is_some() {
            // A runner that already left is fine at this point.
            let _ = self.send(&Request::Bye).and_then(|_| self.flush());
            self.stdin = None;
        }
        let deadline = Instant::now() + self.startup_timeout;
        loop {
            if let Some(status) = self.child.try_wait()? {
                return if status.success() {
                    Ok(())
                } else {
                    Err(RunnerError::Exited(describe(status)))
                };
            }
            if Instant::now() >= deadline {
                self.child.kill()?;
                self.child.wait()?;
                return Err(RunnerError::Timeout(self.startup_timeout));
            }
            thread::sleep(Duration::from_millis(5));
        }
    }
}

impl Drop for SubprocessRunner {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// Serves recorded predictions over the runner protocol until `BYE` or end
/// of input. Used to drive the executor end to end without a real model.
pub fn serve_records<R: BufRead, W: Write>(
    name: &str,
    records: &[PredictionRecord],
    input: R,
    mut output: W,
) -> Result<(), RunnerError> {
    let table: HashMap<&str, &PredictionRecord> =
        records.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    for line in input.lines() {
        let line = line?;
        match Request::parse(&line)? {
            Request::Hello => writeln!(output, "{}", Response::Model(name.into()))?,
            Request::Predict { sample_id, .. } => {
                let r = table
                    .get(sample_id.as_str())
                    .ok_or_else(|| RunnerError::UnknownSample(sample_id.clone()))?;
                let resp = Response::Result {
                    sample_id,
                    label: r.predicted_label,
                    confidence: r.confidence.get(),
                };
                writeln!(output, "{resp}")?;
            }
            Request::Bye => {
                output.flush()?;
                return Ok(());
            }
        }
        output.flush()?;
    }
    Ok(())
}
