//! Of-Cloze antecedent selection: insert `of [MASK]` after the anaphor's head
//! word and rank candidates by their masked-token log-probability.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_candidates, CandidateError, CandidateScope, ContextScope, Document, InstanceRef};
use crate::protocol::{BackendClient, ProtocolError};
use crate::records::{PredictionRecord, ScoreEntry};

/// Seed used when none is configured.
pub const DEFAULT_SEED: u64 = 13;

#[derive(Debug, Error)]
pub enum ClozeError {
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("no candidate of anaphor {0} could be scored")]
    NoFiniteScore(String),
    #[error("mask word {word} did not tokenize to the single piece {mask:?}")]
    MaskTokenization { word: usize, mask: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OfVariant {
    WithOf,
    WithoutOf,
}

impl OfVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            OfVariant::WithOf => "with",
            OfVariant::WithoutOf => "without",
        }
    }
}

impl fmt::Display for OfVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OfVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with" => Ok(OfVariant::WithOf),
            "without" => Ok(OfVariant::WithoutOf),
            _ => Err(format!("unknown of variant {s:?} (expected with or without)")),
        }
    }
}

/// Which surface of a candidate is placed in the mask slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoringStrategy {
    HeadWord,
    FullPhrase,
    /// A single mask scored against the first piece of the head word.
    FirstPieceOnly,
}

impl ScoringStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoringStrategy::HeadWord => "head",
            ScoringStrategy::FullPhrase => "phrase",
            ScoringStrategy::FirstPieceOnly => "first-piece",
        }
    }
}

impl fmt::Display for ScoringStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoringStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "head" => Ok(ScoringStrategy::HeadWord),
            "phrase" => Ok(ScoringStrategy::FullPhrase),
            "first-piece" => Ok(ScoringStrategy::FirstPieceOnly),
            _ => Err(format!(
                "unknown scoring strategy {s:?} (expected head, phrase or first-piece)"
            )),
        }
    }
}

/// A cloze context before mask insertion.
///
/// `words` never contains the inserted material; it is added by
/// [`ClozeQuery::render`] right after `head_position`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClozeQuery {
    pub words: Vec<String>,
    pub head_position: usize,
    pub of_variant: OfVariant,
    pub anaphor_span: Range<usize>,
    /// Sorted, disjoint word ranges kept in place by perturbation.
    pub protected: Vec<Range<usize>>,
    pub scope: ContextScope,
    /// Seed of the shuffle applied, if any.
    pub perturbation: Option<u64>,
}

impl ClozeQuery {
    /// Index of the first inserted word in the rendered sequence.
    pub fn insertion_index(&self) -> usize {
        self.head_position + 1
    }

    /// Rendered positions of the `k` mask words.
    pub fn mask_positions(&self, k: usize) -> Range<usize> {
        let start = self.insertion_index() + usize::from(self.of_variant == OfVariant::WithOf);
        start..start + k
    }

    pub fn render(&self, k: usize, mask: &str) -> Vec<String> {
        let at = self.insertion_index();
        let mut out = Vec::with_capacity(self.words.len() + k + 1);
        out.extend_from_slice(&self.words[..at]);
        if self.of_variant == OfVariant::WithOf {
            out.push("of".to_string());
        }
        out.extend(std::iter::repeat(mask.to_string()).take(k));
        out.extend_from_slice(&self.words[at..]);
        out
    }

    pub fn render_text(&self, k: usize, mask: &str) -> String {
        self.render(k, mask).join(" ")
    }
}

fn merge_ranges(mut ranges: Vec<Range<usize>>) -> Vec<Range<usize>> {
    ranges.sort_by_key(|r| (r.start, r.end));
    let mut out: Vec<Range<usize>> = Vec::with_capacity(ranges.len());
    for r in ranges {
        match out.last_mut() {
            Some(last) if r.start < last.end => last.end = last.end.max(r.end),
            _ => out.push(r),
        }
    }
    out
}

/// Context for `inst` under `scope`. Protected spans are the anaphor and every
/// gold antecedent that falls inside the rendered context.
pub fn build_cloze_context(inst: &InstanceRef<'_>, scope: ContextScope, of_variant: OfVariant) -> ClozeQuery {
    let doc = inst.doc;
    let ana = inst.anaphor();
    let head = doc.head_of(ana);
    if scope == ContextScope::AnaphorOnly {
        let words: Vec<String> = doc.mention_words(ana).into_iter().map(str::to_string).collect();
        let span = 0..words.len();
        let mut protected = vec![span.clone()];
        protected.extend(
            inst.gold()
                .filter(|g| ana.contains(g))
                .map(|g| g.first - ana.first..g.last + 1 - ana.first),
        );
        return ClozeQuery {
            words,
            head_position: head - ana.first,
            of_variant,
            anaphor_span: span,
            protected: merge_ranges(protected),
            scope,
            perturbation: None,
        };
    }
    let sentences = scope.sentences(ana.sentence, inst.nearest_antecedent().sentence);
    let mut words = Vec::new();
    let mut offsets = HashMap::new();
    for &s in &sentences {
        offsets.insert(s, words.len());
        words.extend(doc.sentences[s].words().map(str::to_string));
    }
    let range = |m: &crate::corpus::Mention| {
        let off = offsets[&m.sentence];
        off + m.first..off + m.last + 1
    };
    let anaphor_span = range(ana);
    let mut protected = vec![anaphor_span.clone()];
    protected.extend(inst.gold().filter(|g| offsets.contains_key(&g.sentence)).map(range));
    ClozeQuery {
        words,
        head_position: offsets[&ana.sentence] + head,
        of_variant,
        anaphor_span,
        protected: merge_ranges(protected),
        scope,
        perturbation: None,
    }
}

/// Seeded Fisher-Yates shuffle of the words outside the protected spans.
/// Protected words keep their positions, so the head word and the inserted
/// material stay adjacent.
pub fn perturb_context(query: &ClozeQuery, seed: u64) -> ClozeQuery {
    let free: Vec<usize> = (0..query.words.len())
        .filter(|i| !query.protected.iter().any(|r| r.contains(i)))
        .collect();
    let mut values: Vec<String> = free.iter().map(|&i| query.words[i].clone()).collect();
    fisher_yates(&mut values, seed);
    let mut out = query.clone();
    for (&i, w) in free.iter().zip(values) {
        out.words[i] = w;
    }
    out.perturbation = Some(seed);
    out
}

/// In-place shuffle driven by ChaCha8 seeded from `seed`.
pub fn fisher_yates<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Score of one candidate. `score` is negative infinity when some piece is
/// outside the backend vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    /// Index into the document's mentions.
    pub mention: usize,
    /// Rank in document order; later mentions win ties.
    pub order: usize,
    pub pieces: Vec<String>,
    pub score: f64,
    pub oov: bool,
}

impl CandidateScore {
    pub fn k(&self) -> usize {
        self.pieces.len()
    }
}

pub fn candidate_surface<'d>(doc: &'d Document, mention: usize, strategy: ScoringStrategy) -> Vec<&'d str> {
    let m = doc.mention(mention);
    match strategy {
        ScoringStrategy::HeadWord | ScoringStrategy::FirstPieceOnly => vec![doc.head_word(m)],
        ScoringStrategy::FullPhrase => doc.mention_words(m),
    }
}

/// Scores every candidate with one joint mask-filling call per distinct
/// piece count.
pub fn score_candidates(
    client: &mut BackendClient,
    query: &ClozeQuery,
    doc: &Document,
    candidates: &[usize],
    strategy: ScoringStrategy,
) -> Result<Vec<CandidateScore>, ClozeError> {
    if candidates.is_empty() {
        return Err(CandidateError::Empty("no candidates to score".into()).into());
    }
    let rank: HashMap<usize, usize> = doc
        .mentions_in_order()
        .iter()
        .enumerate()
        .map(|(r, &m)| (m, r))
        .collect();
    let mut piece_cache: HashMap<Vec<&str>, Vec<String>> = HashMap::new();
    let mut scored = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let surface = candidate_surface(doc, c, strategy);
        let pieces = match piece_cache.get(&surface) {
            Some(p) => p.clone(),
            None => {
                let p = client.tokenize(&surface)?.word_pieces();
                piece_cache.insert(surface, p.clone());
                p
            }
        };
        let pieces = match strategy {
            ScoringStrategy::FirstPieceOnly => pieces.into_iter().take(1).collect(),
            _ => pieces,
        };
        scored.push(CandidateScore {
            mention: c,
            order: rank[&c],
            pieces,
            score: f64::NEG_INFINITY,
            oov: false,
        });
    }

    let mut by_k: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in scored.iter().enumerate() {
        by_k.entry(s.k()).or_default().push(i);
    }
    let mask = client.descriptor().mask_piece.clone();
    for (k, members) in by_k {
        let rendered = query.render(k, &mask);
        let align = client.tokenize(&rendered)?;
        let mut slots = Vec::with_capacity(k);
        for word in query.mask_positions(k) {
            let r = align.pieces_of_word(word);
            if r.len() != 1 || align.pieces()[r.start].text != mask {
                return Err(ClozeError::MaskTokenization { word, mask });
            }
            slots.push(r.start);
        }
        let mut queries: Vec<Vec<String>> = vec![Vec::new(); k];
        for &i in &members {
            for (slot, piece) in scored[i].pieces.iter().enumerate() {
                if !queries[slot].contains(piece) {
                    queries[slot].push(piece.clone());
                }
            }
        }
        let response = client.mask_scores(&align.piece_texts(), &slots, &queries)?;
        for &i in &members {
            let s = &mut scored[i];
            let mut total = 0.0;
            for (slot, piece) in s.pieces.iter().enumerate() {
                match response.get(slot, piece).flatten() {
                    Some(lp) => total += lp,
                    None => s.oov = true,
                }
            }
            s.score = if s.oov { f64::NEG_INFINITY } else { total / k as f64 };
        }
    }
    Ok(scored)
}

/// Index of the best finite score; exact ties go to the latest candidate in
/// document order.
pub fn predict_antecedent(scores: &[CandidateScore]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.score.is_finite())
        .max_by(|(_, a), (_, b)| a.score.total_cmp(&b.score).then(a.order.cmp(&b.order)))
        .map(|(i, _)| i)
}

/// Settings for one cloze run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClozeConfig {
    pub context_scope: ContextScope,
    pub candidate_scope: CandidateScope,
    pub of_variant: OfVariant,
    pub perturb: bool,
    pub seed: u64,
    pub strategy: ScoringStrategy,
}

impl Default for ClozeConfig {
    fn default() -> Self {
        ClozeConfig {
            context_scope: ContextScope::MoreContext,
            candidate_scope: CandidateScope::SalientNearby,
            of_variant: OfVariant::WithOf,
            perturb: false,
            seed: DEFAULT_SEED,
            strategy: ScoringStrategy::HeadWord,
        }
    }
}

/// Builds, scores and resolves one instance.
pub fn resolve_instance(
    client: &mut BackendClient,
    inst: &InstanceRef<'_>,
    config: &ClozeConfig,
) -> Result<PredictionRecord, ClozeError> {
    let doc = inst.doc;
    let candidates = build_candidates(doc, inst.instance.anaphor, config.candidate_scope)?;
    let mut query = build_cloze_context(inst, config.context_scope, config.of_variant);
    if config.perturb {
        query = perturb_context(&query, config.seed);
    }
    let scores = score_candidates(client, &query, doc, &candidates, config.strategy)?;
    let best = predict_antecedent(&scores).ok_or_else(|| ClozeError::NoFiniteScore(inst.id()))?;
    let predicted = scores[best].mention;
    Ok(PredictionRecord {
        anaphor_id: inst.id(),
        scope: config.context_scope.as_str().into(),
        candidate_scope: config.candidate_scope.as_str().into(),
        of_variant: Some(config.of_variant.as_str().into()),
        perturbed: config.perturb,
        seed: config.seed,
        predicted: doc.mention(predicted).id.clone(),
        gold: inst.gold_ids(),
        correct: inst.is_gold(predicted),
        scores: scores
            .iter()
            .map(|s| ScoreEntry {
                mention: doc.mention(s.mention).id.clone(),
                k: s.k(),
                score: s.score.is_finite().then_some(s.score),
            })
            .collect(),
        method: "cloze".into(),
        strategy: Some(config.strategy.as_str().into()),
        distance: inst.instance.sentence_distance,
        salient: inst.instance.salient,
    })
}
