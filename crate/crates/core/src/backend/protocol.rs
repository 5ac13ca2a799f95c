//! Line-delimited JSON protocol for backends running in another process.
//!
//! The backend writes a handshake line first:
//!
//! ```text
//! {"protocol": 1, "capabilities": ["classify", "attention", "mask_fill"]}
//! ```
//!
//! then answers one request per line, echoing the request id:
//!
//! ```text
//! -> {"id": 3, "op": "classify", "code": "x = 1", "language": "python"}
//! <- {"id": 3, "ok": true, "probabilities": [0.9, 0.1]}
//! -> {"id": 4, "op": "attention", "code": "x = 1", "language": "python"}
//! <- {"id": 4, "ok": true, "weights": [[0.5, 0.2, 0.3]], "token_spans": [[0, 1], [2, 3], [4, 5]]}
//! -> {"id": 5, "op": "mask_fill", "code": "__MASK__ = 1", "language": "python"}
//! <- {"id": 5, "ok": true, "identifier": "count"}
//! -> {"id": 6, "op": "explain", "code": "x = 1", "language": "python"}
//! <- {"id": 6, "ok": false, "error": "unsupported"}
//! ```
//!
//! `weights` are `[layer][backend token]`, already averaged over heads;
//! `token_spans` are byte ranges of the backend tokens in `code`.

use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{AttentionMap, BackendError, Classifier, Concurrency, MaskPredictor, Prediction};
use crate::code::{is_legal_identifier, CodeSnippet, Language, MaskedSnippet};

pub const PROTOCOL_VERSION: u32 = 1;

pub const OP_CLASSIFY: &str = "classify";
pub const OP_ATTENTION: &str = "attention";
pub const OP_MASK_FILL: &str = "mask_fill";

pub const ERR_UNSUPPORTED: &str = "unsupported";
pub const ERR_NO_CANDIDATE: &str = "no-candidate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: u32,
    pub capabilities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: String,
    pub code: String,
    pub language: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_spans: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identifier: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    fn failure(id: u64, error: impl Into<String>) -> Self {
        Response { id, ok: false, error: Some(error.into()), ..Response::default() }
    }
}

struct Channel {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
}

/// Client side of the protocol over any reader/writer pair.
///
/// Requests are serialized behind a lock; callers should treat the backend
/// as [`Concurrency::SerializeRequired`].
pub struct ProtocolClient {
    channel: Mutex<Channel>,
    capabilities: Vec<String>,
}

fn transport(err: impl std::fmt::Display) -> BackendError {
    BackendError::Transport(err.to_string())
}

fn read_line(reader: &mut dyn BufRead) -> Result<String, BackendError> {
    let mut line = String::new();
    let n = reader.read_line(&mut line).map_err(transport)?;
    if n == 0 {
        return Err(BackendError::Transport("backend closed its output".into()));
    }
    Ok(line)
}

impl ProtocolClient {
    /// Reads and checks the handshake.
    pub fn connect(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Result<Self, BackendError> {
        let mut reader: Box<dyn BufRead + Send> = Box::new(reader);
        let line = read_line(&mut reader)?;
        let handshake: Handshake =
            serde_json::from_str(&line).map_err(|e| BackendError::Protocol(format!("bad handshake: {e}")))?;
        if handshake.protocol != PROTOCOL_VERSION {
            return Err(BackendError::Protocol(format!("unsupported protocol version {}", handshake.protocol)));
        }
        Ok(ProtocolClient {
            channel: Mutex::new(Channel { reader, writer: Box::new(writer), next_id: 1 }),
            capabilities: handshake.capabilities,
        })
    }

    pub fn capabilities(&self) -> &[String] {
        &self.capabilities
    }

    pub fn supports(&self, op: &str) -> bool {
        self.capabilities.iter().any(|c| c == op)
    }

    /// Sends one request and returns the successful response.
    pub fn call(&self, op: &str, code: &str, language: Language) -> Result<Response, BackendError> {
        let mut channel = self.channel.lock().map_err(|_| transport("channel lock poisoned"))?;
        let id = channel.next_id;
        channel.next_id += 1;
        let request = Request { id, op: op.to_string(), code: code.to_string(), language: language.to_string() };
        let mut line = serde_json::to_string(&request).map_err(transport)?;
        line.push('\n');
        channel.writer.write_all(line.as_bytes()).map_err(transport)?;
        channel.writer.flush().map_err(transport)?;

        let reply = read_line(&mut channel.reader)?;
        let response: Response =
            serde_json::from_str(&reply).map_err(|e| BackendError::Protocol(format!("malformed response: {e}")))?;
        if response.id != id {
            return Err(BackendError::Protocol(format!("response id {} does not echo request id {id}", response.id)));
        }
        if !response.ok {
            let error = response.error.unwrap_or_default();
            return Err(match error.as_str() {
                ERR_UNSUPPORTED => BackendError::Unsupported(op.to_string()),
                ERR_NO_CANDIDATE => BackendError::NoCandidate,
                _ => BackendError::Transport(format!("backend reported: {error}")),
            });
        }
        Ok(response)
    }
}

impl Classifier for ProtocolClient {
    fn classify(&self, snippet: &CodeSnippet) -> Result<Prediction, BackendError> {
        let response = self.call(OP_CLASSIFY, snippet.source(), snippet.language())?;
        let probabilities = response
            .probabilities
            .ok_or_else(|| BackendError::Protocol("classify response lacks probabilities".into()))?;
        Prediction::new(probabilities)
    }

    fn attention_weights(&self, snippet: &CodeSnippet) -> Result<AttentionMap, BackendError> {
        if !self.supports(OP_ATTENTION) {
            return Err(BackendError::Unsupported(OP_ATTENTION.into()));
        }
        let response = self.call(OP_ATTENTION, snippet.source(), snippet.language())?;
        let weights =
            response.weights.ok_or_else(|| BackendError::Protocol("attention response lacks weights".into()))?;
        match response.token_spans {
            Some(spans) => {
                let spans: Vec<_> = spans.iter().map(|[s, e]| *s..*e).collect();
                AttentionMap::from_subtokens(weights, &spans, snippet.tokens())
            }
            None => AttentionMap::new(weights, snippet.tokens().len()),
        }
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::SerializeRequired
    }
}

impl MaskPredictor for ProtocolClient {
    fn mask_fill(&self, masked: &MaskedSnippet) -> Result<String, BackendError> {
        if !self.supports(OP_MASK_FILL) {
            return Err(BackendError::Unsupported(OP_MASK_FILL.into()));
        }
        let language = masked.masked().language();
        let response = self.call(OP_MASK_FILL, masked.source(), language)?;
        let name =
            response.identifier.ok_or_else(|| BackendError::Protocol("mask_fill response lacks identifier".into()))?;
        if !is_legal_identifier(&name, language) {
            return Err(BackendError::Protocol(format!("`{name}` is not a legal identifier")));
        }
        Ok(name)
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::SerializeRequired
    }
}

/// A backend child process speaking the protocol on its stdin/stdout.
pub struct ExternalBackend {
    child: Mutex<Child>,
    client: ProtocolClient,
}

impl ExternalBackend {
    /// Runs `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self, BackendError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Transport(format!("cannot start `{command}`: {e}")))?;
        let stdin: ChildStdin = child.stdin.take().expect("stdin is piped");
        let stdout: ChildStdout = child.stdout.take().expect("stdout is piped");
        let client = ProtocolClient::connect(BufReader::new(stdout), stdin)?;
        Ok(ExternalBackend { child: Mutex::new(child), client })
    }

    pub fn client(&self) -> &ProtocolClient {
        &self.client
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Classifier for ExternalBackend {
    fn classify(&self, snippet: &CodeSnippet) -> Result<Prediction, BackendError> {
        self.client.classify(snippet)
    }

    fn attention_weights(&self, snippet: &CodeSnippet) -> Result<AttentionMap, BackendError> {
        self.client.attention_weights(snippet)
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::SerializeRequired
    }
}

impl MaskPredictor for ExternalBackend {
    fn mask_fill(&self, masked: &MaskedSnippet) -> Result<String, BackendError> {
        self.client.mask_fill(masked)
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::SerializeRequired
    }
}

/// Serves `classifier` and `predictor` over the protocol until `reader`
/// reaches end of input.
pub fn serve(
    reader: impl BufRead,
    mut writer: impl Write,
    classifier: Option<&dyn Classifier>,
    predictor: Option<&dyn MaskPredictor>,
) -> io::Result<()> {
    let mut capabilities = Vec::new();
    if classifier.is_some() {
        capabilities.extend([OP_CLASSIFY.to_string(), OP_ATTENTION.to_string()]);
    }
    if predictor.is_some() {
        capabilities.push(OP_MASK_FILL.to_string());
    }
    let handshake = Handshake { protocol: PROTOCOL_VERSION, capabilities };
    writeln!(writer, "{}", serde_json::to_string(&handshake)?)?;
    writer.flush()?;

    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(request) => answer(&request, classifier, predictor),
            Err(e) => Response::failure(0, format!("malformed request: {e}")),
        };
        writeln!(writer, "{}", serde_json::to_string(&response)?)?;
        writer.flush()?;
    }
    Ok(())
}

fn error_code(err: &BackendError) -> String {
    match err {
        BackendError::Unsupported(_) => ERR_UNSUPPORTED.to_string(),
        BackendError::NoCandidate => ERR_NO_CANDIDATE.to_string(),
        other => other.to_string(),
    }
}

fn answer(request: &Request, classifier: Option<&dyn Classifier>, predictor: Option<&dyn MaskPredictor>) -> Response {
    let id = request.id;
    let language: Language = match request.language.parse() {
        Ok(l) => l,
        Err(e) => return Response::failure(id, format!("{e}")),
    };
    let outcome: Result<Response, BackendError> = match (request.op.as_str(), classifier, predictor) {
        (OP_CLASSIFY, Some(model), _) => parse(&request.code, language).and_then(|s| {
            let p = model.classify(&s)?;
            Ok(Response { id, ok: true, probabilities: Some(p.probabilities().to_vec()), ..Response::default() })
        }),
        (OP_ATTENTION, Some(model), _) => parse(&request.code, language).and_then(|s| {
            let map = model.attention_weights(&s)?;
            let spans = s.tokens().iter().map(|t| [t.span.start, t.span.end]).collect();
            Ok(Response {
                id,
                ok: true,
                weights: Some(map.weights().to_vec()),
                token_spans: Some(spans),
                ..Response::default()
            })
        }),
        (OP_MASK_FILL, _, Some(model)) => MaskedSnippet::from_masked_source(request.code.clone(), language)
            .map_err(|e| BackendError::Structure(e.to_string()))
            .and_then(|m| {
                let name = model.mask_fill(&m)?;
                Ok(Response { id, ok: true, identifier: Some(name), ..Response::default() })
            }),
        _ => Err(BackendError::Unsupported(request.op.clone())),
    };
    outcome.unwrap_or_else(|err| Response::failure(id, error_code(&err)))
}

fn parse(code: &str, language: Language) -> Result<CodeSnippet, BackendError> {
    CodeSnippet::parse(code, language).map_err(|e| BackendError::Structure(e.to_string()))
}
