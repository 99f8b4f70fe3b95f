//! Deterministic in-process backend for tests and desk-scale runs.
//!
//! Tokenization splits each word on a fixed suffix table (`playing` becomes
//! `play ##ing`) and wraps the sequence in `[CLS]` / `[SEP]`. Attention and
//! scoring follow the configured [`MockMode`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{
    codes, AttnPayload, DescribePayload, Request, Response, ScorePayload, TokenizePayload,
    WirePiece, WireScore,
};

pub const MOCK_SUFFIXES: &[&str] = &["ing", "ed", "ly", "ness", "ment"];
pub const MOCK_MASK: &str = "[MASK]";
const CLS: &str = "[CLS]";
const SEP: &str = "[SEP]";

/// Log-probability every piece receives in `uniform` and `onehot` modes:
/// ln(1/30522), a uniform distribution over a BERT-sized vocabulary.
pub const UNIFORM_LOGPROB: f64 = -10.326_203_014_050_82;

/// Log-probability of every piece other than the target in `delta` mode.
pub const DELTA_MISS_LOGPROB: f64 = -30.0;

#[derive(Debug, Clone, PartialEq)]
pub enum MockMode {
    /// Every attention entry is `1/T`; every piece scores `UNIFORM_LOGPROB`.
    Uniform,
    /// Every attention row is one-hot at column `k`; scores as `Uniform`.
    OneHot(usize),
    /// The named piece scores 0.0, all others -30.0; uniform attention.
    Delta(String),
    /// Scores looked up in the table (missing pieces are out of vocabulary);
    /// uniform attention.
    Table(BTreeMap<String, f64>),
    /// Seeded pseudo-random attention rows and scores, a pure function of
    /// the seed and the request.
    Random(u64),
    /// Uniform attention rows multiplied by the factor. Produces invalid
    /// tensors unless the factor is 1; exists to exercise client validation.
    Scaled(f64),
}

impl fmt::Display for MockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockMode::Uniform => f.write_str("uniform"),
            MockMode::OneHot(k) => write!(f, "onehot:{k}"),
            MockMode::Delta(w) => write!(f, "delta:{w}"),
            MockMode::Table(t) => write!(
                f,
                "table:{}",
                serde_json::to_string(t).unwrap_or_else(|_| "{}".into())
            ),
            MockMode::Random(seed) => write!(f, "random:{seed}"),
            MockMode::Scaled(x) => write!(f, "scaled:{x}"),
        }
    }
}

impl FromStr for MockMode {
    type Err = String;

    /// `uniform`, `onehot:K`, `delta:WORD`, `table:PATH` or `table:{json}`,
    /// `random:SEED`, `scaled:FACTOR`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let bad = |what: &str| format!("invalid mock mode {s:?}: {what}");
        match kind {
            "uniform" => Ok(MockMode::Uniform),
            "onehot" => arg
                .parse()
                .map(MockMode::OneHot)
                .map_err(|_| bad("expected onehot:<column>")),
            "delta" if !arg.is_empty() => Ok(MockMode::Delta(arg.to_string())),
            "delta" => Err(bad("expected delta:<piece>")),
            "table" => {
                let json = if arg.trim_start().starts_with('{') {
                    arg.to_string()
                } else {
                    std::fs::read_to_string(arg).map_err(|e| bad(&e.to_string()))?
                };
                let table: BTreeMap<String, f64> =
                    serde_json::from_str(&json).map_err(|e| bad(&e.to_string()))?;
                if table.values().any(|&v| v > 0.0 || !v.is_finite()) {
                    return Err(bad("table log-probabilities must be finite and <= 0"));
                }
                Ok(MockMode::Table(table))
            }
            "random" => arg
                .parse()
                .map(MockMode::Random)
                .map_err(|_| bad("expected random:<seed>")),
            "scaled" => arg
                .parse()
                .map(MockMode::Scaled)
                .map_err(|_| bad("expected scaled:<factor>")),
            _ => Err(bad("unknown mode")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockConfig {
    pub mode: MockMode,
    pub layers: usize,
    pub heads: usize,
    pub max_input_pieces: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            mode: MockMode::Uniform,
            layers: 12,
            heads: 12,
            max_input_pieces: 512,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    config: MockConfig,
}

/// FNV-1a, used as a portable deterministic hash.
struct Fnv(u64);

impl Fnv {
    fn new(seed: u64) -> Self {
        let mut h = Fnv(0xcbf2_9ce4_8422_2325);
        h.write(&seed.to_le_bytes());
        h
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn write_str(&mut self, s: &str) {
        self.write(s.as_bytes());
        self.write(&[0xff]);
    }

    fn write_usize(&mut self, x: usize) {
        self.write(&(x as u64).to_le_bytes());
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        MockBackend { config }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    /// Pieces for one word under the suffix table.
    pub fn word_pieces(word: &str) -> Vec<String> {
        for suffix in MOCK_SUFFIXES {
            if let Some(stem) = word.strip_suffix(suffix) {
                if stem.chars().count() >= 3 {
                    return vec![stem.to_string(), format!("##{suffix}")];
                }
            }
        }
        vec![word.to_string()]
    }

    fn tokenize(&self, text: &str, words: &[[usize; 2]]) -> Result<Vec<WirePiece>, String> {
        let chars: Vec<char> = text.chars().collect();
        let mut pieces = vec![WirePiece {
            text: CLS.into(),
            special: true,
            word: None,
        }];
        let mut prev_end = 0;
        for (w, &[start, end]) in words.iter().enumerate() {
            if start >= end || end > chars.len() || start < prev_end {
                return Err(format!("word span {w} [{start}, {end}) is invalid"));
            }
            prev_end = end;
            let word: String = chars[start..end].iter().collect();
            for piece in Self::word_pieces(&word) {
                pieces.push(WirePiece {
                    text: piece,
                    special: false,
                    word: Some(w),
                });
            }
        }
        pieces.push(WirePiece {
            text: SEP.into(),
            special: true,
            word: None,
        });
        Ok(pieces)
    }

    fn attention(&self, pieces: &[WirePiece]) -> Result<Vec<f64>, String> {
        let (l, h, t) = (self.config.layers, self.config.heads, pieces.len());
        let n = l * h * t * t;
        match &self.config.mode {
            MockMode::OneHot(k) => {
                if *k >= t {
                    return Err(format!("onehot column {k} outside sequence of {t} pieces"));
                }
                let mut w = vec![0.0; n];
                for row in w.chunks_mut(t) {
                    row[*k] = 1.0;
                }
                Ok(w)
            }
            MockMode::Random(seed) => {
                let column_keys: Vec<u64> = pieces
                    .iter()
                    .enumerate()
                    .map(|(j, p)| {
                        let mut f = Fnv::new(0);
                        f.write_usize(j);
                        f.write_str(&p.text);
                        f.0
                    })
                    .collect();
                let mut w = Vec::with_capacity(n);
                for layer in 0..l {
                    for head in 0..h {
                        for (i, piece) in pieces.iter().enumerate() {
                            let mut f = Fnv::new(*seed);
                            for x in [layer, head, i] {
                                f.write_usize(x);
                            }
                            f.write_str(&piece.text);
                            let row: Vec<f64> = column_keys
                                .iter()
                                .map(|&k| 1.0 + (splitmix64(f.0 ^ k) % 1000) as f64 / 100.0)
                                .collect();
                            let sum: f64 = row.iter().sum();
                            w.extend(row.into_iter().map(|x| x / sum));
                        }
                    }
                }
                Ok(w)
            }
            MockMode::Scaled(factor) => Ok(vec![factor / t as f64; n]),
            _ => Ok(vec![1.0 / t as f64; n]),
        }
    }

    fn score(&self, pieces: &[String], slot: usize, piece: &str) -> Option<f64> {
        match &self.config.mode {
            MockMode::Delta(target) => Some(if piece == target {
                0.0
            } else {
                DELTA_MISS_LOGPROB
            }),
            MockMode::Table(table) => table.get(piece).copied(),
            MockMode::Random(seed) => {
                let mut f = Fnv::new(*seed);
                for p in pieces {
                    f.write_str(p);
                }
                f.write_usize(slot);
                f.write_str(piece);
                Some(-(((f.0 % 20_000) + 1) as f64) / 1000.0)
            }
            _ => Some(UNIFORM_LOGPROB),
        }
    }

    pub fn handle(&self, request: &Request) -> Response {
        let id = request.id();
        let max = self.config.max_input_pieces;
        let overflow = |n: usize| {
            Response::failure(
                id,
                codes::OVERFLOW,
                format!("{n} pieces exceed the maximum of {max}"),
            )
        };
        match request {
            Request::Describe { .. } => Response::success(
                id,
                &DescribePayload {
                    name: format!("mock-{}", self.config.mode),
                    max_input_pieces: max,
                    layers: self.config.layers,
                    heads: self.config.heads,
                    mask_piece: MOCK_MASK.into(),
                    packing: Some("[CLS] words [SEP]; no separator between sentences".into()),
                },
            ),
            Request::Tokenize { text, words, .. } => match self.tokenize(text, words) {
                Ok(pieces) if pieces.len() > max => overflow(pieces.len()),
                Ok(pieces) => Response::success(id, &TokenizePayload { pieces }),
                Err(e) => Response::failure(id, codes::BAD_REQUEST, e),
            },
            Request::Attn { text, words, .. } => {
                let pieces = match self.tokenize(text, words) {
                    Ok(p) if p.len() > max => return overflow(p.len()),
                    Ok(p) => p,
                    Err(e) => return Response::failure(id, codes::BAD_REQUEST, e),
                };
                match self.attention(&pieces) {
                    Ok(weights) => Response::success(
                        id,
                        &AttnPayload {
                            layers: self.config.layers,
                            heads: self.config.heads,
                            seq_len: pieces.len(),
                            pieces,
                            weights,
                        },
                    ),
                    Err(e) => Response::failure(id, codes::BAD_REQUEST, e),
                }
            }
            Request::Score {
                pieces,
                mask_slots,
                queries,
                ..
            } => {
                if pieces.len() > max {
                    return overflow(pieces.len());
                }
                if mask_slots.is_empty() {
                    return Response::failure(id, codes::BAD_REQUEST, "no mask slots");
                }
                if mask_slots.len() != queries.len() {
                    return Response::failure(id, codes::BAD_REQUEST, "one query list per slot");
                }
                if let Some(&s) = mask_slots
                    .iter()
                    .find(|&&s| pieces.get(s).map(String::as_str) != Some(MOCK_MASK))
                {
                    return Response::failure(
                        id,
                        codes::BAD_REQUEST,
                        format!("position {s} is not a mask piece"),
                    );
                }
                let scores = queries
                    .iter()
                    .enumerate()
                    .map(|(slot, asked)| {
                        asked
                            .iter()
                            .map(|piece| match self.score(pieces, slot, piece) {
                                Some(lp) => WireScore {
                                    piece: piece.clone(),
                                    logprob: Some(lp),
                                    error: None,
                                },
                                None => WireScore {
                                    piece: piece.clone(),
                                    logprob: None,
                                    error: Some(codes::OOV.into()),
                                },
                            })
                            .collect()
                    })
                    .collect();
                Response::success(id, &ScorePayload { scores })
            }
        }
    }
}
