//! Attention-based bridging signals and prominent-head antecedent selection.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    bucket_for, build_candidates, window_sentences, CandidateError, CandidateScope, Document,
    DistanceBucketScheme, InstanceRef, Mention,
};
use crate::protocol::{AttentionTensor, BackendClient, ProtocolError, TokenAlignment};
use crate::records::{PredictionRecord, ScoreEntry};

/// Longest anaphor-antecedent sentence distance probed with full-span input.
pub const MAX_FULL_SPAN_DISTANCE: usize = 10;

pub const DIFFICULT_BELOW: f64 = 0.1;
pub const EASY_ABOVE: f64 = 0.7;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("w2 is zero for layer {layer} head {head}: signal undefined")]
    Undefined { layer: usize, head: usize },
    #[error("layer {layer} head {head} outside {layers}x{heads} tensor")]
    HeadOutOfRange {
        layer: usize,
        head: usize,
        layers: usize,
        heads: usize,
    },
    #[error("word {0} is outside the alignment")]
    WordOutOfRange(usize),
    #[error("alignment has {alignment} pieces but tensor has {tensor}")]
    LengthMismatch { alignment: usize, tensor: usize },
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InputMode {
    /// Antecedent sentence plus anaphor sentence.
    PairOnly,
    /// Every sentence from the antecedent's through the anaphor's.
    FullSpan,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::PairOnly => "pair",
            InputMode::FullSpan => "full",
        }
    }
}

impl FromStr for InputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pair" => Ok(InputMode::PairOnly),
            "full" => Ok(InputMode::FullSpan),
            _ => Err(format!("unknown input mode {s:?} (expected pair or full)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    AnaphorToAntecedent,
    AntecedentToAnaphor,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::AnaphorToAntecedent, Direction::AntecedentToAnaphor];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::AnaphorToAntecedent => "ana2ante",
            Direction::AntecedentToAnaphor => "ante2ana",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ana2ante" => Ok(Direction::AnaphorToAntecedent),
            "ante2ana" => Ok(Direction::AntecedentToAnaphor),
            _ => Err(format!("unknown direction {s:?}")),
        }
    }
}

/// Probe input: words of the selected sentences joined in document order,
/// with the positions of the two head words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeInput {
    pub words: Vec<String>,
    pub sentences: Vec<usize>,
    pub anaphor_head: usize,
    pub antecedent_head: usize,
}

/// Concatenation of whole sentences with a word-offset map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSpan {
    pub words: Vec<String>,
    pub sentences: Vec<usize>,
    offsets: Vec<usize>,
}

impl SentenceSpan {
    /// `sentences` must be sorted and free of duplicates.
    pub fn new(doc: &Document, sentences: &[usize]) -> Self {
        let mut words = Vec::new();
        let mut offsets = Vec::with_capacity(sentences.len());
        for &s in sentences {
            offsets.push(words.len());
            words.extend(doc.sentences[s].words().map(str::to_string));
        }
        SentenceSpan {
            words,
            sentences: sentences.to_vec(),
            offsets,
        }
    }

    /// Position of a sentence-local token in the concatenation.
    pub fn locate(&self, sentence: usize, token: usize) -> Option<usize> {
        let i = self.sentences.binary_search(&sentence).ok()?;
        Some(self.offsets[i] + token)
    }

    pub fn head_position(&self, doc: &Document, mention: &Mention) -> Option<usize> {
        self.locate(mention.sentence, doc.head_of(mention))
    }
}

/// Sentences fed to the model for `inst` under `mode`.
pub fn input_sentences(inst: &InstanceRef<'_>, mode: InputMode) -> Vec<usize> {
    let ana = inst.anaphor().sentence;
    let ante = inst.nearest_antecedent().sentence;
    match mode {
        InputMode::PairOnly if ante == ana => vec![ana],
        InputMode::PairOnly => vec![ante, ana],
        InputMode::FullSpan => (ante..=ana).collect(),
    }
}

pub fn build_input(inst: &InstanceRef<'_>, mode: InputMode) -> ProbeInput {
    let doc = inst.doc;
    let span = SentenceSpan::new(doc, &input_sentences(inst, mode));
    let anaphor_head = span
        .head_position(doc, inst.anaphor())
        .expect("anaphor sentence is part of the input");
    let antecedent_head = span
        .head_position(doc, inst.nearest_antecedent())
        .expect("antecedent sentence is part of the input");
    ProbeInput {
        words: span.words,
        sentences: span.sentences,
        anaphor_head,
        antecedent_head,
    }
}

/// Why an instance produced no signal records.
pub fn exclusion_reason(inst: &InstanceRef<'_>, mode: InputMode) -> Option<String> {
    let distance = inst.instance.sentence_distance;
    (mode == InputMode::FullSpan && distance > MAX_FULL_SPAN_DISTANCE).then(|| {
        format!("excluded: sentence distance {distance} exceeds {MAX_FULL_SPAN_DISTANCE}")
    })
}

/// What counts as "sentence length" when normalizing the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Denominator {
    /// Non-special pieces.
    Pieces,
    /// Words (pieces grouped by alignment).
    Words,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalDefinition {
    pub denominator: Denominator,
    /// Whether the target's own weight contributes to w2.
    pub include_target: bool,
}

impl Default for SignalDefinition {
    fn default() -> Self {
        SignalDefinition {
            denominator: Denominator::Pieces,
            include_target: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadSignal {
    pub w1: f64,
    pub w2: f64,
    pub ratio: f64,
}

// Running mean: exact for constant sequences, so uniform rows give ratio 1.
fn running_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    for (i, v) in values.into_iter().enumerate() {
        mean += (v - mean) / (i + 1) as f64;
    }
    mean
}

fn check_args(
    attn: &AttentionTensor,
    align: &TokenAlignment,
    words: [usize; 2],
    layer: usize,
    head: usize,
) -> Result<(), SignalError> {
    if layer >= attn.layers() || head >= attn.heads() {
        return Err(SignalError::HeadOutOfRange {
            layer,
            head,
            layers: attn.layers(),
            heads: attn.heads(),
        });
    }
    if align.len() != attn.seq_len() {
        return Err(SignalError::LengthMismatch {
            alignment: align.len(),
            tensor: attn.seq_len(),
        });
    }
    if let Some(&w) = words.iter().find(|&&w| w >= align.n_words()) {
        return Err(SignalError::WordOutOfRange(w));
    }
    Ok(())
}

/// Mean attention row of the source word's pieces.
fn source_row(attn: &AttentionTensor, align: &TokenAlignment, from: usize, layer: usize, head: usize) -> Vec<f64> {
    let src = align.pieces_of_word(from);
    (0..attn.seq_len())
        .map(|j| running_mean(src.clone().map(|i| attn.weight(layer, head, i, j))))
        .collect()
}

fn target_weight(row: &[f64], align: &TokenAlignment, to: usize) -> f64 {
    running_mean(align.pieces_of_word(to).map(|j| row[j]))
}

/// Bridging signal from word `from` to word `to` at a 0-based layer/head,
/// under the default definition.
pub fn compute_signal(
    attn: &AttentionTensor,
    align: &TokenAlignment,
    from: usize,
    to: usize,
    layer: usize,
    head: usize,
) -> Result<HeadSignal, SignalError> {
    compute_signal_with(attn, align, from, to, layer, head, SignalDefinition::default())
}

pub fn compute_signal_with(
    attn: &AttentionTensor,
    align: &TokenAlignment,
    from: usize,
    to: usize,
    layer: usize,
    head: usize,
    def: SignalDefinition,
) -> Result<HeadSignal, SignalError> {
    check_args(attn, align, [from, to], layer, head)?;
    let row = source_row(attn, align, from, layer, head);
    let w1 = target_weight(&row, align, to);
    let target = align.pieces_of_word(to);
    let counted = (0..row.len())
        .filter(|&j| !align.is_special(j) && (def.include_target || !target.contains(&j)));
    let w2 = match def.denominator {
        Denominator::Pieces => running_mean(counted.map(|j| row[j])),
        Denominator::Words => {
            let total: f64 = counted.map(|j| row[j]).sum();
            let words = align.n_words() - usize::from(!def.include_target);
            if words == 0 {
                0.0
            } else {
                total / words as f64
            }
        }
    };
    if w2 <= 0.0 {
        return Err(SignalError::Undefined { layer, head });
    }
    Ok(HeadSignal {
        w1,
        w2,
        ratio: w1 / w2,
    })
}

/// One signal measurement. Layer and head are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub instance_id: String,
    pub direction: Direction,
    pub layer: usize,
    pub head: usize,
    pub w1: f64,
    pub w2: f64,
    pub ratio: f64,
    pub bucket: String,
    pub mode: InputMode,
}

/// Signals for every layer and head in both directions.
pub fn instance_signals(
    attn: &AttentionTensor,
    align: &TokenAlignment,
    input: &ProbeInput,
    instance_id: &str,
    bucket: &str,
    mode: InputMode,
    def: SignalDefinition,
) -> Result<Vec<SignalRecord>, SignalError> {
    let mut out = Vec::with_capacity(2 * attn.layers() * attn.heads());
    for direction in Direction::BOTH {
        let (from, to) = match direction {
            Direction::AnaphorToAntecedent => (input.anaphor_head, input.antecedent_head),
            Direction::AntecedentToAnaphor => (input.antecedent_head, input.anaphor_head),
        };
        for layer in 0..attn.layers() {
            for head in 0..attn.heads() {
                let s = compute_signal_with(attn, align, from, to, layer, head, def)?;
                out.push(SignalRecord {
                    instance_id: instance_id.to_string(),
                    direction,
                    layer: layer + 1,
                    head: head + 1,
                    w1: s.w1,
                    w2: s.w2,
                    ratio: s.ratio,
                    bucket: bucket.to_string(),
                    mode,
                });
            }
        }
    }
    Ok(out)
}

/// Outcome of probing one instance.
#[derive(Debug)]
pub enum ProbeOutcome {
    Signals(Vec<SignalRecord>),
    Excluded(String),
}

pub fn probe_instance(
    client: &mut BackendClient,
    inst: &InstanceRef<'_>,
    mode: InputMode,
    def: SignalDefinition,
) -> Result<ProbeOutcome, SignalError> {
    if let Some(reason) = exclusion_reason(inst, mode) {
        return Ok(ProbeOutcome::Excluded(reason));
    }
    let input = build_input(inst, mode);
    let (align, attn) = match client.attentions(&input.words) {
        Ok(pair) => pair,
        Err(ProtocolError::Overflow { .. }) => {
            return Ok(ProbeOutcome::Excluded("excluded: input size".into()))
        }
        Err(e) => return Err(e.into()),
    };
    let bucket = bucket_for(
        inst.instance.sentence_distance,
        inst.instance.salient,
        DistanceBucketScheme::Attention,
    );
    instance_signals(&attn, &align, &input, &inst.id(), bucket, mode, def).map(ProbeOutcome::Signals)
}

/// Layer x head grid with possibly absent cells, indexed 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub layers: usize,
    pub heads: usize,
    cells: Vec<Option<f64>>,
}

impl HeatMap {
    pub fn empty(layers: usize, heads: usize) -> Self {
        HeatMap {
            layers,
            heads,
            cells: vec![None; layers * heads],
        }
    }

    pub fn get(&self, layer: usize, head: usize) -> Option<f64> {
        self.cells[(layer - 1) * self.heads + head - 1]
    }

    pub fn set(&mut self, layer: usize, head: usize, value: Option<f64>) {
        self.cells[(layer - 1) * self.heads + head - 1] = value;
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(Option::is_none)
    }
}

/// Mean ratio per cell over records with the given direction and bucket
/// (`None` matches every bucket). Records outside the grid are ignored.
pub fn signal_matrix<'a>(
    records: impl IntoIterator<Item = &'a SignalRecord>,
    direction: Direction,
    bucket: Option<&str>,
    layers: usize,
    heads: usize,
) -> HeatMap {
    let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for r in records {
        if r.direction != direction || bucket.is_some_and(|b| b != r.bucket) {
            continue;
        }
        if !(1..=layers).contains(&r.layer) || !(1..=heads).contains(&r.head) {
            continue;
        }
        let cell = sums.entry((r.layer, r.head)).or_insert((0.0, 0));
        cell.0 += r.ratio;
        cell.1 += 1;
    }
    let mut map = HeatMap::empty(layers, heads);
    for ((l, h), (sum, n)) in sums {
        map.set(l, h, Some(sum / n as f64));
    }
    map
}

/// A set of 1-based `(layer, head)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSet(pub Vec<(usize, usize)>);

impl HeadSet {
    pub fn validate(&self, layers: usize, heads: usize) -> Result<(), SignalError> {
        for &(l, h) in &self.0 {
            if !(1..=layers).contains(&l) || !(1..=heads).contains(&h) {
                return Err(SignalError::HeadOutOfRange {
                    layer: l,
                    head: h,
                    layers,
                    heads,
                });
            }
        }
        Ok(())
    }
}

impl Default for HeadSet {
    fn default() -> Self {
        HeadSet(vec![(5, 1), (9, 12), (11, 3), (12, 2), (12, 3), (12, 4)])
    }
}

impl fmt::Display for HeadSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(l, h)| format!("{l}:{h}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Parses `5:1,9:12,12:2-4`.
impl FromStr for HeadSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid head set {s:?} (expected e.g. 5:1,12:2-4)");
        let num = |t: &str| t.trim().parse::<usize>().ok().filter(|&n| n > 0);
        let mut heads = Vec::new();
        for part in s.split(',') {
            let (layer, range) = part.split_once(':').ok_or_else(bad)?;
            let layer = num(layer).ok_or_else(bad)?;
            let (lo, hi) = match range.split_once('-') {
                Some((a, b)) => (num(a).ok_or_else(bad)?, num(b).ok_or_else(bad)?),
                None => {
                    let h = num(range).ok_or_else(bad)?;
                    (h, h)
                }
            };
            if lo > hi {
                return Err(bad());
            }
            heads.extend((lo..=hi).map(|h| (layer, h)));
        }
        Ok(HeadSet(heads))
    }
}

/// Candidate scores from summed w1 over `heads`; returns the index into
/// `candidates` of the winner (ties go to the later candidate) and all scores.
///
/// `candidates` holds head-word positions in document order.
pub fn prominent_head_select(
    attn: &AttentionTensor,
    align: &TokenAlignment,
    anaphor_head: usize,
    candidates: &[usize],
    heads: &HeadSet,
) -> Result<(usize, Vec<f64>), SignalError> {
    if candidates.is_empty() {
        return Err(CandidateError::Empty("no candidates to select from".into()).into());
    }
    heads.validate(attn.layers(), attn.heads())?;
    let rows = heads
        .0
        .iter()
        .map(|&(l, h)| {
            check_args(attn, align, [anaphor_head, anaphor_head], l - 1, h - 1)?;
            Ok(source_row(attn, align, anaphor_head, l - 1, h - 1))
        })
        .collect::<Result<Vec<_>, SignalError>>()?;
    let mut scores = Vec::with_capacity(candidates.len());
    for &c in candidates {
        if c >= align.n_words() {
            return Err(SignalError::WordOutOfRange(c));
        }
        scores.push(rows.iter().map(|row| target_weight(row, align, c)).sum::<f64>());
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s >= scores[best] {
            best = i;
        }
    }
    Ok((best, scores))
}

/// Selects an antecedent for `inst` from the salient/nearby window with the
/// summed attention of `heads`. Input is the window's sentences.
pub fn select_by_heads(
    client: &mut BackendClient,
    inst: &InstanceRef<'_>,
    heads: &HeadSet,
    seed: u64,
) -> Result<PredictionRecord, SignalError> {
    let doc = inst.doc;
    let anaphor = inst.anaphor();
    let candidates = build_candidates(doc, inst.instance.anaphor, CandidateScope::SalientNearby)?;
    let span = SentenceSpan::new(doc, &window_sentences(anaphor.sentence));
    let positions: Vec<usize> = candidates
        .iter()
        .map(|&c| span.head_position(doc, doc.mention(c)).expect("candidate lies in the window"))
        .collect();
    let anaphor_head = span
        .head_position(doc, anaphor)
        .expect("anaphor lies in the window");
    let (align, attn) = client.attentions(&span.words)?;
    let (best, scores) = prominent_head_select(&attn, &align, anaphor_head, &positions, heads)?;
    let predicted = candidates[best];
    Ok(PredictionRecord {
        anaphor_id: inst.id(),
        scope: "more".into(),
        candidate_scope: CandidateScope::SalientNearby.as_str().into(),
        of_variant: None,
        perturbed: false,
        seed,
        predicted: doc.mention(predicted).id.clone(),
        gold: inst.gold_ids(),
        correct: inst.is_gold(predicted),
        scores: candidates
            .iter()
            .zip(&positions)
            .zip(&scores)
            .map(|((&c, &p), &s)| ScoreEntry {
                mention: doc.mention(c).id.clone(),
                k: align.pieces_of_word(p).len(),
                score: Some(s),
            })
            .collect(),
        method: "heads".into(),
        strategy: None,
        distance: inst.instance.sentence_distance,
        salient: inst.instance.salient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Difficult,
    Neither,
}

pub fn classify_ratio(ratio: f64) -> Difficulty {
    if ratio > EASY_ABOVE {
        Difficulty::Easy
    } else if ratio < DIFFICULT_BELOW {
        Difficulty::Difficult
    } else {
        Difficulty::Neither
    }
}

pub fn classify_difficulty(record: &SignalRecord) -> Difficulty {
    classify_ratio(record.ratio)
}

pub const SIGNAL_COLUMNS: [&str; 9] = [
    "instance_id",
    "direction",
    "layer",
    "head",
    "w1",
    "w2",
    "ratio",
    "bucket",
    "mode",
];

/// Writes records as CSV. Floats use the shortest representation that
/// reads back exactly, so heatmaps re-rendered from the file match.
pub fn write_signals_csv<W: Write>(writer: W, records: &[SignalRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SIGNAL_COLUMNS)?;
    for r in records {
        w.write_record([
            r.instance_id.as_str(),
            r.direction.as_str(),
            &r.layer.to_string(),
            &r.head.to_string(),
            &r.w1.to_string(),
            &r.w2.to_string(),
            &r.ratio.to_string(),
            &r.bucket,
            r.mode.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records written by [`write_signals_csv`].
pub fn read_signals_csv<R: std::io::Read>(reader: R) -> Result<Vec<SignalRecord>, String> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().ne(SIGNAL_COLUMNS) {
        return Err(format!("unexpected signals header {:?}", header.iter().collect::<Vec<_>>()));
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| e.to_string())?;
        let line = i + 2;
        let field = |k: usize| row.get(k).unwrap_or("");
        let num = |k: usize| {
            field(k)
                .parse::<f64>()
                .map_err(|e| format!("line {line}: {}: {e}", SIGNAL_COLUMNS[k]))
        };
        let int = |k: usize| {
            field(k)
                .parse::<usize>()
                .map_err(|e| format!("line {line}: {}: {e}", SIGNAL_COLUMNS[k]))
        };
        out.push(SignalRecord {
            instance_id: field(0).to_string(),
            direction: field(1).parse().map_err(|e| format!("line {line}: {e}"))?,
            layer: int(2)?,
            head: int(3)?,
            w1: num(4)?,
            w2: num(5)?,
            ratio: num(6)?,
            bucket: field(7).to_string(),
            mode: field(8).parse().map_err(|e| format!("line {line}: {e}"))?,
        });
    }
    Ok(out)
}
