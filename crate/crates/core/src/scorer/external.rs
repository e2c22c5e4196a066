//! Client for scorers served over a newline-delimited JSON byte stream.
//!
//! Each call opens a TCP connection, writes one request line and reads one reply line:
//!
//! ```text
//! -> {"condition":["[ORG]","EU","[/ORG]"],"prefix":["The"],"top_k":null}
//! <- {"tokens":["EU","said",...],"logprobs":[-0.4,-2.1,...],"truncated":false}
//! ```
//!
//! A reply of the form `{"error":"..."}` is surfaced as [`ScoreError::ServerError`].
//! Connections are independent, so concurrent callers never share a timeout.

use std::collections::HashSet;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ScoreError, ScoreRequest, ScoreResponse, Scorer, EOS};

/// Full-distribution replies must satisfy `|logsumexp| <= 1e-4`; remote models
/// aggregate subword scores and cannot match local precision.
pub const REMOTE_NORMALIZATION_TOLERANCE: f64 = 1e-4;

const MAX_REPLY_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endpoint {
    raw: String,
    addr: SocketAddr,
}

impl Endpoint {
    /// Accepts `host:port` or `tcp://host:port`.
    pub fn parse(spec: &str) -> Result<Self, ScoreError> {
        let hostport = spec.strip_prefix("tcp://").unwrap_or(spec).trim_end_matches('/');
        let unreachable = |message: String| ScoreError::Unreachable {
            endpoint: spec.to_owned(),
            message,
        };
        let addr = hostport
            .to_socket_addrs()
            .map_err(|e| unreachable(e.to_string()))?
            .next()
            .ok_or_else(|| unreachable("address resolved to nothing".into()))?;
        Ok(Endpoint {
            raw: spec.to_owned(),
            addr,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    condition: &'a [String],
    prefix: &'a [String],
    top_k: Option<usize>,
}

#[derive(Deserialize)]
struct WireResponse {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
    truncated: bool,
}

#[derive(Debug, Clone)]
pub struct ExternalScorer {
    endpoint: Endpoint,
    timeout: Duration,
    top_k: Option<usize>,
}

impl ExternalScorer {
    pub fn new(endpoint: Endpoint, timeout: Duration) -> Self {
        ExternalScorer {
            endpoint,
            timeout,
            top_k: None,
        }
    }

    /// Ask the server for only the `k` best tokens per step.
    pub fn with_top_k(mut self, k: usize) -> Self {
        self.top_k = Some(k);
        self
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Sends an empty request to check the server is up and speaks the protocol.
    pub fn probe(&self) -> Result<(), ScoreError> {
        self.score(&ScoreRequest::default()).map(|_| ())
    }

    fn exchange(&self, line: &str) -> io::Result<String> {
        let mut stream = TcpStream::connect_timeout(&self.endpoint.addr, self.timeout)?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        stream.set_nodelay(true)?;
        stream.write_all(line.as_bytes())?;
        stream.write_all(b"\n")?;
        stream.flush()?;

        let mut reply = String::new();
        BufReader::new(stream.take(MAX_REPLY_BYTES)).read_line(&mut reply)?;
        Ok(reply)
    }

    fn map_io(&self, err: io::Error, request: &ScoreRequest) -> ScoreError {
        let context = format!("{} at {}", request.context(), self.endpoint.raw);
        match err.kind() {
            io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => ScoreError::Timeout { context },
            io::ErrorKind::ConnectionRefused
            | io::ErrorKind::AddrNotAvailable
            | io::ErrorKind::NotConnected => ScoreError::Unreachable {
                endpoint: self.endpoint.raw.clone(),
                message: err.to_string(),
            },
            _ => ScoreError::ServerError {
                context,
                message: err.to_string(),
            },
        }
    }
}

/// Decodes and checks one reply line against the protocol.
pub(crate) fn parse_reply(line: &str, context: &str) -> Result<ScoreResponse, ScoreError> {
    let protocol = |message: String| ScoreError::ProtocolError {
        context: context.to_owned(),
        message,
    };
    let line = line.trim_end_matches(['\n', '\r']);
    if line.is_empty() {
        return Err(protocol("empty reply".into()));
    }
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| protocol(format!("malformed JSON: {e}")))?;
    if let Some(error) = value.get("error") {
        return Err(ScoreError::ServerError {
            context: context.to_owned(),
            message: error.as_str().map(str::to_owned).unwrap_or_else(|| error.to_string()),
        });
    }
    let reply: WireResponse =
        serde_json::from_value(value).map_err(|e| protocol(format!("bad reply shape: {e}")))?;

    if reply.tokens.len() != reply.logprobs.len() {
        return Err(protocol(format!(
            "{} tokens but {} logprobs",
            reply.tokens.len(),
            reply.logprobs.len()
        )));
    }
    if reply.tokens.is_empty() {
        return Err(protocol("reply has no tokens".into()));
    }
    if reply.logprobs.iter().any(|lp| lp.is_nan() || *lp > 0.0) {
        return Err(protocol("log-probabilities must be <= 0".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = reply.tokens.iter().find(|t| !seen.insert(t.as_str())) {
        return Err(ScoreError::VocabMismatch(format!("token `{dup}` repeated in reply")));
    }
    let response = ScoreResponse::new(reply.tokens, reply.logprobs, reply.truncated);
    if !response.truncated {
        if response.logprob(EOS).is_none() {
            return Err(ScoreError::VocabMismatch(format!(
                "full distribution lacks the end token `{EOS}`"
            )));
        }
        let mass = response.logsumexp();
        if mass.abs() > REMOTE_NORMALIZATION_TOLERANCE {
            return Err(protocol(format!("full distribution sums to exp({mass})")));
        }
    }
    Ok(response)
}

impl Scorer for ExternalScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        request.check()?;
        let line = serde_json::to_string(&WireRequest {
            condition: &request.condition,
            prefix: &request.prefix,
            top_k: self.top_k,
        })
        .expect("requests always serialize");
        let reply = self.exchange(&line).map_err(|e| self.map_io(e, request))?;
        let context = format!("{} at {}", request.context(), self.endpoint.raw);
        parse_reply(&reply, &context)
    }
}
