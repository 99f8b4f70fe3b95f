//! Language-model backend protocol.
//!
//! Requests and responses are single-line JSON objects. The canonical
//! transport is a child process speaking the protocol on stdin/stdout; an
//! HTTP binding carries the same bodies via POST.
//!
//! ```text
//! {"op": "describe", "id": "1"}
//! {"op": "tokenize", "id": "2", "text": "playing chess", "words": [[0, 7], [8, 13]]}
//! {"op": "attn",     "id": "3", "text": ..., "words": ...}
//! {"op": "score",    "id": "4", "pieces": [...], "mask_slots": [3], "queries": [["firms", "police"]]}
//!
//! {"id": "2", "ok": true, "payload": {...}}
//! {"id": "2", "ok": false, "error": {"code": "overflow", "message": "..."}}
//! ```
//!
//! `words` holds `[start, end)` character offsets of the caller's words in
//! `text`; the backend reports which word each piece belongs to.

mod client;
mod mock;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use client::{
    run_pool, BackendClient, BackendSpec, ChildProcessTransport, HttpTransport, Transport,
};
pub use mock::{MockBackend, MockConfig, MockMode, MOCK_MASK, MOCK_SUFFIXES, UNIFORM_LOGPROB};

/// Allowed deviation of an attention row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

pub mod codes {
    pub const OVERFLOW: &str = "overflow";
    pub const BAD_REQUEST: &str = "bad_request";
    pub const UNSUPPORTED: &str = "unsupported";
    pub const INTERNAL: &str = "internal";
    /// Per-piece marker in score payloads.
    pub const OOV: &str = "oov";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Describe {
        id: String,
    },
    Tokenize {
        id: String,
        text: String,
        words: Vec<[usize; 2]>,
    },
    Attn {
        id: String,
        text: String,
        words: Vec<[usize; 2]>,
    },
    Score {
        id: String,
        pieces: Vec<String>,
        mask_slots: Vec<usize>,
        queries: Vec<Vec<String>>,
    },
}

impl Request {
    pub fn id(&self) -> &str {
        match self {
            Request::Describe { id }
            | Request::Tokenize { id, .. }
            | Request::Attn { id, .. }
            | Request::Score { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl Response {
    pub fn success<T: Serialize>(id: &str, payload: &T) -> Self {
        match serde_json::to_value(payload) {
            Ok(value) => Response {
                id: id.to_string(),
                ok: true,
                payload: Some(value),
                error: None,
            },
            Err(e) => Response::failure(id, codes::INTERNAL, e.to_string()),
        }
    }

    pub fn failure(id: &str, code: &str, message: impl Into<String>) -> Self {
        Response {
            id: id.to_string(),
            ok: false,
            payload: None,
            error: Some(WireError {
                code: code.to_string(),
                message: message.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribePayload {
    pub name: String,
    pub max_input_pieces: usize,
    pub layers: usize,
    pub heads: usize,
    pub mask_piece: String,
    /// Free-form description of how multi-sentence input is packed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packing: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WirePiece {
    pub text: String,
    pub special: bool,
    pub word: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizePayload {
    pub pieces: Vec<WirePiece>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnPayload {
    pub pieces: Vec<WirePiece>,
    pub layers: usize,
    pub heads: usize,
    pub seq_len: usize,
    /// Row-major `[layer][head][query][key]`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireScore {
    pub piece: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePayload {
    /// One list per mask slot, in the order of the request's queries.
    pub scores: Vec<Vec<WireScore>>,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("input exceeds backend maximum of {max} pieces{}", pieces.map(|p| format!(" (got {p})")).unwrap_or_default())]
    Overflow { pieces: Option<usize>, max: usize },
    #[error("backend error [{code}]: {message}")]
    Backend { code: String, message: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("score request has no mask slots")]
    ZeroMaskSlots,
    #[error("invalid attention tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("invalid token alignment: {0}")]
    Alignment(String),
    #[error("invalid backend descriptor {0:?}")]
    BadSpec(String),
}

/// Static properties of a backend, reported by `describe`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub max_input_pieces: usize,
    pub layers: usize,
    pub heads: usize,
    pub mask_piece: String,
    pub address: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packing: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Piece {
    pub text: String,
    pub is_special: bool,
}

/// Bidirectional map between caller words and model pieces.
///
/// Every non-special piece belongs to exactly one word, every word owns a
/// non-empty contiguous run of pieces, and specials belong to no word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenAlignment {
    pieces: Vec<Piece>,
    word_of_piece: Vec<Option<usize>>,
    pieces_of_word: Vec<Range<usize>>,
}

impl TokenAlignment {
    pub fn from_wire(pieces: Vec<WirePiece>, n_words: usize) -> Result<Self, ProtocolError> {
        let mut ranges: Vec<Option<Range<usize>>> = vec![None; n_words];
        let mut word_of_piece = Vec::with_capacity(pieces.len());
        let mut last_word: Option<usize> = None;
        for (i, p) in pieces.iter().enumerate() {
            match (p.special, p.word) {
                (true, None) => word_of_piece.push(None),
                (true, Some(_)) => {
                    return Err(ProtocolError::Alignment(format!(
                        "special piece {i} ({:?}) maps to a word",
                        p.text
                    )))
                }
                (false, None) => {
                    return Err(ProtocolError::Alignment(format!(
                        "piece {i} ({:?}) maps to no word",
                        p.text
                    )))
                }
                (false, Some(w)) => {
                    let Some(slot) = ranges.get_mut(w) else {
                        return Err(ProtocolError::Alignment(format!(
                            "piece {i} maps to word {w} of {n_words}"
                        )));
                    };
                    match slot {
                        None => *slot = Some(i..i + 1),
                        Some(r) if r.end == i && last_word == Some(w) => r.end = i + 1,
                        Some(_) => {
                            return Err(ProtocolError::Alignment(format!(
                                "pieces of word {w} are not contiguous"
                            )))
                        }
                    }
                    if let Some(prev) = last_word {
                        if w < prev {
                            return Err(ProtocolError::Alignment(format!(
                                "piece {i} goes back from word {prev} to word {w}"
                            )));
                        }
                    }
                    word_of_piece.push(Some(w));
                }
            }
            last_word = p.word.or(last_word);
        }
        let pieces_of_word = ranges
            .into_iter()
            .enumerate()
            .map(|(w, r)| r.ok_or_else(|| ProtocolError::Alignment(format!("word {w} has no pieces"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TokenAlignment {
            pieces: pieces
                .into_iter()
                .map(|p| Piece {
                    text: p.text,
                    is_special: p.special,
                })
                .collect(),
            word_of_piece,
            pieces_of_word,
        })
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn piece_texts(&self) -> Vec<String> {
        self.pieces.iter().map(|p| p.text.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn n_words(&self) -> usize {
        self.pieces_of_word.len()
    }

    pub fn word_of_piece(&self, piece: usize) -> Option<usize> {
        self.word_of_piece[piece]
    }

    pub fn pieces_of_word(&self, word: usize) -> Range<usize> {
        self.pieces_of_word[word].clone()
    }

    pub fn is_special(&self, piece: usize) -> bool {
        self.pieces[piece].is_special
    }

    /// Texts of the non-special pieces, in order.
    pub fn word_pieces(&self) -> Vec<String> {
        self.pieces
            .iter()
            .filter(|p| !p.is_special)
            .map(|p| p.text.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("expected {expected} weights for shape {layers}x{heads}x{seq_len}x{seq_len}, got {got}")]
    Shape {
        layers: usize,
        heads: usize,
        seq_len: usize,
        expected: usize,
        got: usize,
    },
    #[error("weight {value} at layer {layer} head {head} row {row} col {col} outside [0, 1]")]
    Range {
        layer: usize,
        head: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("row {row} of layer {layer} head {head} sums to {sum}")]
    RowSum {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },
}

/// Attention weights, `layers x heads x seq_len x seq_len`, row-stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    layers: usize,
    heads: usize,
    seq_len: usize,
    weights: Vec<f64>,
}

impl AttentionTensor {
    /// Validates shape, entry range and row sums. Never renormalizes.
    pub fn new(
        layers: usize,
        heads: usize,
        seq_len: usize,
        weights: Vec<f64>,
    ) -> Result<Self, TensorError> {
        let tensor = Self::from_raw_unchecked(layers, heads, seq_len, weights)?;
        tensor.validate()?;
        Ok(tensor)
    }

    /// Checks the shape only. Used for deliberately non-stochastic tensors.
    pub fn from_raw_unchecked(
        layers: usize,
        heads: usize,
        seq_len: usize,
        weights: Vec<f64>,
    ) -> Result<Self, TensorError> {
        let expected = layers * heads * seq_len * seq_len;
        if weights.len() != expected {
            return Err(TensorError::Shape {
                layers,
                heads,
                seq_len,
                expected,
                got: weights.len(),
            });
        }
        Ok(AttentionTensor {
            layers,
            heads,
            seq_len,
            weights,
        })
    }

    pub fn uniform(layers: usize, heads: usize, seq_len: usize) -> Self {
        let w = 1.0 / seq_len as f64;
        AttentionTensor {
            layers,
            heads,
            seq_len,
            weights: vec![w; layers * heads * seq_len * seq_len],
        }
    }

    /// Every row puts all of its mass on column `column`.
    pub fn onehot(layers: usize, heads: usize, seq_len: usize, column: usize) -> Self {
        assert!(column < seq_len, "onehot column out of range");
        let mut weights = vec![0.0; layers * heads * seq_len * seq_len];
        for row in weights.chunks_mut(seq_len) {
            row[column] = 1.0;
        }
        AttentionTensor {
            layers,
            heads,
            seq_len,
            weights,
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let t = self.seq_len;
        for (r, row) in self.weights.chunks(t.max(1)).enumerate() {
            let (layer, head, row_idx) = (r / (self.heads * t), (r / t) % self.heads, r % t);
            for (col, &value) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(TensorError::Range {
                        layer,
                        head,
                        row: row_idx,
                        col,
                        value,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(TensorError::RowSum {
                    layer,
                    head,
                    row: row_idx,
                    sum,
                });
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Attention row of query position `query` (0-based layer and head).
    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f64] {
        let t = self.seq_len;
        let start = ((layer * self.heads + head) * t + query) * t;
        &self.weights[start..start + t]
    }

    pub fn weight(&self, layer: usize, head: usize, query: usize, key: usize) -> f64 {
        self.row(layer, head, query)[key]
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceScore {
    pub piece: String,
    /// `None` when the piece is outside the backend vocabulary.
    pub logprob: Option<f64>,
}

/// Natural-log probabilities per mask slot, in query order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskScoreResponse {
    pub slots: Vec<Vec<PieceScore>>,
}

impl MaskScoreResponse {
    /// `Some(None)` for an out-of-vocabulary piece; `None` if not queried.
    pub fn get(&self, slot: usize, piece: &str) -> Option<Option<f64>> {
        self.slots
            .get(slot)?
            .iter()
            .find(|s| s.piece == piece)
            .map(|s| s.logprob)
    }
}

/// Joins `words` with single spaces and returns the text with each word's
/// `[start, end)` character span.
pub fn join_words<S: AsRef<str>>(words: &[S]) -> (String, Vec<[usize; 2]>) {
    let mut text = String::new();
    let mut spans = Vec::with_capacity(words.len());
    let mut offset = 0;
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            text.push(' ');
            offset += 1;
        }
        let w = w.as_ref();
        let len = w.chars().count();
        text.push_str(w);
        spans.push([offset, offset + len]);
        offset += len;
    }
    (text, spans)
}
