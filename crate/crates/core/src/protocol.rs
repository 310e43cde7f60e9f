//! Newline-delimited JSON protocol spoken with external scorers and
//! questioners, over child-process stdio or a TCP socket.
//!
//! ```text
//! -> {"type":"hello","vocab_hash":"…"}
//! <- {"type":"hello","vocab_hash":"…"}            (or an error record: refusal)
//! -> {"type":"score","id":1,"question":"…","prefix":["…"],"candidates":["…"]}
//! <- {"type":"scores","id":1,"logprobs":[…]}       (parallel to candidates)
//! -> {"type":"ask","id":2,"database":"…","tables":[{"name":"…","columns":["…"]}]}
//! <- {"type":"question","id":2,"text":"…"}
//! ```
//!
//! One request is in flight per connection.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("malformed record: {0}")]
    Json(#[from] serde_json::Error),
    #[error("peer closed the connection")]
    Closed,
    #[error("handshake refused: {0}")]
    Refused(String),
    #[error("peer reported: {0}")]
    Remote(String),
    #[error("response out of sync: {0}")]
    Desync(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        vocab_hash: String,
    },
    Score {
        id: u64,
        question: String,
        prefix: Vec<String>,
        candidates: Vec<String>,
    },
    Scores {
        id: u64,
        logprobs: Vec<f64>,
    },
    Ask {
        id: u64,
        database: String,
        tables: Vec<TableSpec>,
    },
    Question {
        id: u64,
        text: String,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
}

/// Client end of a connection.
pub struct Channel {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    next_id: u64,
    line: String,
}

impl Channel {
    pub fn new(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self {
            reader: Box::new(reader),
            writer: Box::new(writer),
            child: None,
            next_id: 1,
            line: String::new(),
        }
    }

    pub fn connect_tcp(addr: &str) -> Result<Self, ProtocolError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self::new(reader, BufWriter::new(stream)))
    }

    /// Spawns `program args…` and talks to it over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, ProtocolError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut ch = Self::new(BufReader::new(stdout), BufWriter::new(stdin));
        ch.child = Some(child);
        Ok(ch)
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        serde_json::to_writer(&mut self.writer, msg)?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn receive(&mut self) -> Result<Message, ProtocolError> {
        self.line.clear();
        if self.reader.read_line(&mut self.line)? == 0 {
            return Err(ProtocolError::Closed);
        }
        Ok(serde_json::from_str(self.line.trim_end())?)
    }

    pub fn handshake(&mut self, vocab_hash: &str) -> Result<(), ProtocolError> {
        self.send(&Message::Hello {
            vocab_hash: vocab_hash.to_string(),
        })?;
        match self.receive()? {
            Message::Hello { vocab_hash: h } if h == vocab_hash => Ok(()),
            Message::Hello { vocab_hash: h } => Err(ProtocolError::Refused(format!("peer vocabulary {h}"))),
            Message::Error { message, .. } => Err(ProtocolError::Refused(message)),
            other => Err(ProtocolError::Desync(format!("expected hello, got {other:?}"))),
        }
    }

    pub fn score(&mut self, question: &str, prefix: Vec<String>, candidates: Vec<String>) -> Result<Vec<f64>, ProtocolError> {
        let id = self.next_id();
        let n = candidates.len();
        self.send(&Message::Score {
            id,
            question: question.to_string(),
            prefix,
            candidates,
        })?;
        match self.receive()? {
            Message::Scores { id: got, logprobs } if got == id && logprobs.len() == n => Ok(logprobs),
            Message::Scores { id: got, logprobs } => Err(ProtocolError::Desync(format!(
                "request {id} with {n} candidates answered by {got} with {}",
                logprobs.len()
            ))),
            Message::Error { message, .. } => Err(ProtocolError::Remote(message)),
            other => Err(ProtocolError::Desync(format!("expected scores, got {other:?}"))),
        }
    }

    pub fn ask(&mut self, database: &str, tables: Vec<TableSpec>) -> Result<String, ProtocolError> {
        let id = self.next_id();
        self.send(&Message::Ask {
            id,
            database: database.to_string(),
            tables,
        })?;
        match self.receive()? {
            Message::Question { id: got, text } if got == id => Ok(text),
            Message::Error { message, .. } => Err(ProtocolError::Remote(message)),
            other => Err(ProtocolError::Desync(format!("expected question {id}, got {other:?}"))),
        }
    }
}

impl Drop for Channel {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Behaviour of the built-in conformance stub.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StubMode {
    /// Equal log-probability for every candidate.
    #[default]
    Uniform,
    /// Candidates whose text occurs in the question get proportionally more mass.
    Echo,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct StubStats {
    pub requests: u64,
    pub errors: u64,
}

fn stub_logprobs(mode: StubMode, question: &str, candidates: &[String]) -> Vec<f64> {
    let weights: Vec<f64> = match mode {
        StubMode::Uniform => vec![1.0; candidates.len()],
        StubMode::Echo => {
            let q = question.to_lowercase();
            candidates
                .iter()
                .map(|c| 1.0 + if c.len() > 1 { q.matches(c.as_str()).count() as f64 } else { 0.0 })
                .collect()
        }
    };
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / total).ln()).collect()
}

/// Serves the protocol until the reader reaches end of input. Malformed
/// requests produce error records; the loop keeps going.
pub fn serve_stub(
    reader: impl BufRead,
    mut writer: impl Write,
    mode: StubMode,
    vocab_hash: Option<&str>,
) -> io::Result<StubStats> {
    let mut stats = StubStats::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.requests += 1;
        let reply = match serde_json::from_str::<Message>(&line) {
            Ok(Message::Hello { vocab_hash: h }) => match vocab_hash {
                Some(expected) if expected != h => Message::Error {
                    id: None,
                    message: format!("vocab_hash mismatch: expected {expected}, got {h}"),
                },
                _ => Message::Hello { vocab_hash: h },
            },
            Ok(Message::Score { id, question, candidates, .. }) if !candidates.is_empty() => Message::Scores {
                id,
                logprobs: stub_logprobs(mode, &question, &candidates),
            },
            Ok(Message::Score { id, .. }) => Message::Error {
                id: Some(id),
                message: "empty candidate list".into(),
            },
            Ok(Message::Ask { id, database, tables }) => {
                let names: Vec<&str> = tables.iter().map(|t| t.name.as_str()).collect();
                Message::Question {
                    id,
                    text: format!("What do the {} tables of {database} contain?", names.join(" and ")),
                }
            }
            Ok(other) => Message::Error {
                id: None,
                message: format!("unexpected record {other:?}"),
            },
            Err(e) => Message::Error {
                id: None,
                message: format!("malformed request: {e}"),
            },
        };
        if matches!(reply, Message::Error { .. }) {
            stats.errors += 1;
        }
        serde_json::to_writer(&mut writer, &reply)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(stats)
}
