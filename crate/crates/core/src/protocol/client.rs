use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;

use super::mock::{MockBackend, MockConfig};
use super::{
    codes, join_words, AttentionTensor, AttnPayload, BackendDescriptor, DescribePayload,
    MaskScoreResponse, PieceScore, ProtocolError, Request, Response, ScorePayload,
    TokenAlignment, TokenizePayload,
};

/// Carries one request and returns its response. One request in flight at a
/// time; connections are not shared between workers.
pub trait Transport: Send {
    fn exchange(&mut self, request: &Request) -> Result<Response, ProtocolError>;

    fn address(&self) -> String;
}

/// Line-delimited JSON over a child process's stdin/stdout.
pub struct ChildProcessTransport {
    command_line: String,
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
}

impl ChildProcessTransport {
    pub fn spawn(command_line: &str) -> Result<Self, ProtocolError> {
        let argv = shlex::split(command_line)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| ProtocolError::BadSpec(format!("cmd:{command_line}")))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ProtocolError::Transport(format!("cannot launch {:?}: {e}", argv[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(ChildProcessTransport {
            command_line: command_line.to_string(),
            child,
            stdin: Some(BufWriter::new(stdin)),
            stdout: BufReader::new(stdout),
        })
    }
}

impl Transport for ChildProcessTransport {
    fn exchange(&mut self, request: &Request) -> Result<Response, ProtocolError> {
        let io = |e: std::io::Error| ProtocolError::Transport(e.to_string());
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| ProtocolError::Transport("backend stdin closed".into()))?;
        serde_json::to_writer(&mut *stdin, request)
            .map_err(|e| ProtocolError::Transport(e.to_string()))?;
        stdin.write_all(b"\n").map_err(io)?;
        stdin.flush().map_err(io)?;

        let mut line = String::new();
        if self.stdout.read_line(&mut line).map_err(io)? == 0 {
            return Err(ProtocolError::Transport("backend closed its output".into()));
        }
        serde_json::from_str(&line).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    fn address(&self) -> String {
        format!("cmd:{}", self.command_line)
    }
}

impl Drop for ChildProcessTransport {
    fn drop(&mut self) {
        // closing stdin asks the backend to exit
        self.stdin.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// The same message bodies sent as HTTP POST requests.
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: &str) -> Self {
        HttpTransport {
            url: url.to_string(),
            agent: ureq::Agent::new_with_defaults(),
        }
    }
}

impl Transport for HttpTransport {
    fn exchange(&mut self, request: &Request) -> Result<Response, ProtocolError> {
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(request)
            .map_err(|e| ProtocolError::Transport(e.to_string()))?;
        response
            .body_mut()
            .read_json::<Response>()
            .map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    fn address(&self) -> String {
        format!("http:{}", self.url)
    }
}

impl Transport for MockBackend {
    fn exchange(&mut self, request: &Request) -> Result<Response, ProtocolError> {
        Ok(self.handle(request))
    }

    fn address(&self) -> String {
        format!("mock:{}", self.config().mode)
    }
}

/// Where to find a backend: `cmd:<command line>`, `http:<url>` or
/// `mock:<mode>` (in-process mock).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Command(String),
    Http(String),
    Mock(String),
}

impl FromStr for BackendSpec {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(cmd) = s.strip_prefix("cmd:") {
            if cmd.trim().is_empty() {
                return Err(ProtocolError::BadSpec(s.to_string()));
            }
            Ok(BackendSpec::Command(cmd.to_string()))
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(BackendSpec::Http(s.to_string()))
        } else if let Some(url) = s.strip_prefix("http:") {
            Ok(BackendSpec::Http(url.to_string()))
        } else if let Some(mode) = s.strip_prefix("mock:") {
            Ok(BackendSpec::Mock(mode.to_string()))
        } else {
            Err(ProtocolError::BadSpec(s.to_string()))
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Command(c) => write!(f, "cmd:{c}"),
            BackendSpec::Http(u) => write!(f, "http:{u}"),
            BackendSpec::Mock(m) => write!(f, "mock:{m}"),
        }
    }
}

impl BackendSpec {
    pub fn connect(&self) -> Result<BackendClient, ProtocolError> {
        let transport: Box<dyn Transport> = match self {
            BackendSpec::Command(cmd) => Box::new(ChildProcessTransport::spawn(cmd)?),
            BackendSpec::Http(url) => Box::new(HttpTransport::new(url)),
            BackendSpec::Mock(mode) => {
                let mode = mode.parse().map_err(ProtocolError::BadSpec)?;
                Box::new(MockBackend::new(MockConfig {
                    mode,
                    ..MockConfig::default()
                }))
            }
        };
        BackendClient::new(transport)
    }
}

/// Typed, validating client over a [`Transport`].
pub struct BackendClient {
    transport: Box<dyn Transport>,
    descriptor: BackendDescriptor,
    next_id: u64,
}

impl BackendClient {
    /// Wraps a transport and fetches the backend descriptor.
    pub fn new(transport: Box<dyn Transport>) -> Result<Self, ProtocolError> {
        let address = transport.address();
        let mut client = BackendClient {
            transport,
            descriptor: BackendDescriptor {
                name: String::new(),
                max_input_pieces: 0,
                layers: 0,
                heads: 0,
                mask_piece: String::new(),
                address: address.clone(),
                packing: None,
            },
            next_id: 0,
        };
        let id = client.fresh_id();
        let d: DescribePayload = client.call(Request::Describe { id })?;
        client.descriptor = BackendDescriptor {
            name: d.name,
            max_input_pieces: d.max_input_pieces,
            layers: d.layers,
            heads: d.heads,
            mask_piece: d.mask_piece,
            address,
            packing: d.packing,
        };
        Ok(client)
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn fresh_id(&mut self) -> String {
        self.next_id += 1;
        self.next_id.to_string()
    }

    fn call<T: DeserializeOwned>(&mut self, request: Request) -> Result<T, ProtocolError> {
        let response = self.transport.exchange(&request)?;
        if response.id != request.id() {
            return Err(ProtocolError::Malformed(format!(
                "response id {:?} does not match request id {:?}",
                response.id,
                request.id()
            )));
        }
        if !response.ok {
            let err = response.error.unwrap_or_else(|| super::WireError {
                code: codes::INTERNAL.into(),
                message: "failure without error body".into(),
            });
            if err.code == codes::OVERFLOW {
                return Err(ProtocolError::Overflow {
                    pieces: None,
                    max: self.descriptor.max_input_pieces,
                });
            }
            return Err(ProtocolError::Backend {
                code: err.code,
                message: err.message,
            });
        }
        let payload = response
            .payload
            .ok_or_else(|| ProtocolError::Malformed("success without payload".into()))?;
        serde_json::from_value(payload).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    fn check_length(&self, pieces: usize) -> Result<(), ProtocolError> {
        let max = self.descriptor.max_input_pieces;
        if pieces > max {
            Err(ProtocolError::Overflow {
                pieces: Some(pieces),
                max,
            })
        } else {
            Ok(())
        }
    }

    /// Tokenizes `words` (joined by single spaces).
    pub fn tokenize<S: AsRef<str>>(&mut self, words: &[S]) -> Result<TokenAlignment, ProtocolError> {
        let (text, spans) = join_words(words);
        let id = self.fresh_id();
        let payload: TokenizePayload = self.call(Request::Tokenize {
            id,
            text,
            words: spans,
        })?;
        self.check_length(payload.pieces.len())?;
        TokenAlignment::from_wire(payload.pieces, words.len())
    }

    /// Tokenizes free text, taking whitespace-separated words.
    pub fn tokenize_text(&mut self, text: &str) -> Result<TokenAlignment, ProtocolError> {
        let words: Vec<&str> = text.split_whitespace().collect();
        self.tokenize(&words)
    }

    pub fn attentions<S: AsRef<str>>(
        &mut self,
        words: &[S],
    ) -> Result<(TokenAlignment, AttentionTensor), ProtocolError> {
        let (text, spans) = join_words(words);
        let id = self.fresh_id();
        let payload: AttnPayload = self.call(Request::Attn {
            id,
            text,
            words: spans,
        })?;
        self.check_length(payload.pieces.len())?;
        let d = &self.descriptor;
        if payload.layers != d.layers
            || payload.heads != d.heads
            || payload.seq_len != payload.pieces.len()
        {
            return Err(ProtocolError::Malformed(format!(
                "attention shape {}x{}x{} does not match backend {}x{} over {} pieces",
                payload.layers,
                payload.heads,
                payload.seq_len,
                d.layers,
                d.heads,
                payload.pieces.len()
            )));
        }
        let alignment = TokenAlignment::from_wire(payload.pieces, words.len())?;
        let tensor =
            AttentionTensor::new(payload.layers, payload.heads, payload.seq_len, payload.weights)?;
        Ok((alignment, tensor))
    }

    /// Scores `queries[k]` at `mask_slots[k]` in one joint forward pass.
    pub fn mask_scores(
        &mut self,
        pieces: &[String],
        mask_slots: &[usize],
        queries: &[Vec<String>],
    ) -> Result<MaskScoreResponse, ProtocolError> {
        if mask_slots.is_empty() {
            return Err(ProtocolError::ZeroMaskSlots);
        }
        if queries.len() != mask_slots.len() {
            return Err(ProtocolError::Malformed(format!(
                "{} query lists for {} mask slots",
                queries.len(),
                mask_slots.len()
            )));
        }
        self.check_length(pieces.len())?;
        let id = self.fresh_id();
        let payload: ScorePayload = self.call(Request::Score {
            id,
            pieces: pieces.to_vec(),
            mask_slots: mask_slots.to_vec(),
            queries: queries.to_vec(),
        })?;
        if payload.scores.len() != mask_slots.len() {
            return Err(ProtocolError::Malformed(format!(
                "{} score lists for {} mask slots",
                payload.scores.len(),
                mask_slots.len()
            )));
        }
        let mut slots = Vec::with_capacity(payload.scores.len());
        for (slot, (entries, asked)) in payload.scores.into_iter().zip(queries).enumerate() {
            if entries.len() != asked.len()
                || entries.iter().zip(asked).any(|(e, q)| &e.piece != q)
            {
                return Err(ProtocolError::Malformed(format!(
                    "slot {slot} scores do not match the queried pieces"
                )));
            }
            let mut out = Vec::with_capacity(entries.len());
            for e in entries {
                let logprob = match (e.logprob, e.error.as_deref()) {
                    (Some(lp), None) if lp <= 0.0 => Some(lp),
                    (Some(lp), None) => {
                        return Err(ProtocolError::Malformed(format!(
                            "log-probability {lp} for {:?} is positive",
                            e.piece
                        )))
                    }
                    (None, Some(_)) => None,
                    _ => {
                        return Err(ProtocolError::Malformed(format!(
                            "score entry for {:?} needs exactly one of logprob/error",
                            e.piece
                        )))
                    }
                };
                out.push(PieceScore {
                    piece: e.piece,
                    logprob,
                });
            }
            slots.push(out);
        }
        Ok(MaskScoreResponse { slots })
    }
}

/// Runs `work` over `items` on `jobs` workers, each holding its own
/// connection from `connect`. Output order matches input order.
pub fn run_pool<T, R, C, W>(items: &[T], jobs: usize, connect: C, work: W) -> Result<Vec<R>, ProtocolError>
where
    T: Sync,
    R: Send,
    C: Fn() -> Result<BackendClient, ProtocolError> + Sync,
    W: Fn(&mut BackendClient, &T) -> R + Sync,
{
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let jobs = jobs.clamp(1, items.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let first_error: Mutex<Option<ProtocolError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| {
                let mut client = match connect() {
                    Ok(c) => c,
                    Err(e) => {
                        first_error.lock().unwrap().get_or_insert(e);
                        return;
                    }
                };
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= items.len() {
                        break;
                    }
                    let r = work(&mut client, &items[i]);
                    results.lock().unwrap()[i] = Some(r);
                }
            });
        }
    });

    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect())
}
