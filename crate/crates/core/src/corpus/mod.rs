//! Bridging-annotated corpus: data model, loading, validation and queries.
//!
//! A corpus file is UTF-8 with one JSON document record per line:
//!
//! ```text
//! {"id": ..., "sentences": [{"text": ..., "tokens": [{"text", "char_start", "char_end"}]}],
//!  "mentions": [{"id", "sentence", "first", "last", "head", "is_np"}],
//!  "bridging": [{"anaphor": ..., "antecedents": [...]}]}
//! ```
//!
//! Character offsets count Unicode scalar values, not bytes. `head` may be
//! omitted or `null`, in which case [`semantic_head`] falls back to a
//! surface heuristic.

mod head;
pub mod standoff;

use std::cmp::Reverse;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use head::{fallback_head, semantic_head};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid document {doc:?} (line {line}): {message}")]
    Validation {
        doc: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    /// Builds a sentence whose text is the tokens joined by single spaces.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let mut text = String::new();
        let mut tokens = Vec::with_capacity(words.len());
        let mut offset = 0;
        for (i, word) in words.iter().enumerate() {
            let word = word.as_ref();
            if i > 0 {
                text.push(' ');
                offset += 1;
            }
            let len = word.chars().count();
            text.push_str(word);
            tokens.push(Token {
                text: word.to_string(),
                char_start: offset,
                char_end: offset + len,
            });
            offset += len;
        }
        Sentence { text, tokens }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }
}

/// An annotated mention. `first`, `last` and `head` index tokens of
/// `sentence`; the span is inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub id: String,
    pub sentence: usize,
    pub first: usize,
    pub last: usize,
    #[serde(default)]
    pub head: Option<usize>,
    pub is_np: bool,
}

impl Mention {
    /// Start position in document order.
    pub fn start(&self) -> (usize, usize) {
        (self.sentence, self.first)
    }

    /// True when `self` starts strictly before `other`.
    pub fn precedes(&self, other: &Mention) -> bool {
        self.start() < other.start()
    }

    pub fn contains(&self, other: &Mention) -> bool {
        self.sentence == other.sentence && self.first <= other.first && other.last <= self.last
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgingLink {
    pub anaphor: String,
    pub antecedents: Vec<String>,
}

/// A validated bridging link, with mention references resolved to indices
/// into [`Document::mentions`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgingInstance {
    pub anaphor: usize,
    pub gold_antecedents: Vec<usize>,
    /// Anaphor sentence minus the sentence of the nearest gold antecedent.
    pub sentence_distance: usize,
    /// Some gold antecedent lies in the first sentence of the document.
    pub salient: bool,
    /// The gold antecedent used for distance and input construction.
    pub nearest_antecedent: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
    pub mentions: Vec<Mention>,
    pub bridging: Vec<BridgingLink>,
    #[serde(skip)]
    instances: Vec<BridgingInstance>,
    #[serde(skip)]
    by_id: HashMap<String, usize>,
    /// Mention indices in document order.
    #[serde(skip)]
    order: Vec<usize>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        sentences: Vec<Sentence>,
        mentions: Vec<Mention>,
        bridging: Vec<BridgingLink>,
    ) -> Result<Self, String> {
        let mut doc = Document {
            id: id.into(),
            sentences,
            mentions,
            bridging,
            instances: Vec::new(),
            by_id: HashMap::new(),
            order: Vec::new(),
        };
        doc.index()?;
        Ok(doc)
    }

    /// Checks every invariant and builds the derived indices.
    fn index(&mut self) -> Result<(), String> {
        for (si, sentence) in self.sentences.iter().enumerate() {
            let text_len = sentence.text.chars().count();
            let mut prev_end = 0;
            for (ti, tok) in sentence.tokens.iter().enumerate() {
                if tok.char_start >= tok.char_end {
                    return Err(format!("sentence {si} token {ti}: empty character span"));
                }
                if ti > 0 && tok.char_start < prev_end {
                    return Err(format!("sentence {si} token {ti}: overlaps previous token"));
                }
                if tok.char_end > text_len {
                    return Err(format!("sentence {si} token {ti}: span exceeds sentence text"));
                }
                prev_end = tok.char_end;
            }
        }

        self.by_id.clear();
        for (i, m) in self.mentions.iter().enumerate() {
            if self.by_id.insert(m.id.clone(), i).is_some() {
                return Err(format!("duplicate mention id {:?}", m.id));
            }
            let Some(sentence) = self.sentences.get(m.sentence) else {
                return Err(format!("mention {:?}: sentence {} out of range", m.id, m.sentence));
            };
            if m.first > m.last || m.last >= sentence.tokens.len() {
                return Err(format!(
                    "mention {:?}: token span [{}, {}] invalid for sentence of {} tokens",
                    m.id,
                    m.first,
                    m.last,
                    sentence.tokens.len()
                ));
            }
            if let Some(h) = m.head {
                if h < m.first || h > m.last {
                    return Err(format!("mention {:?}: head {h} outside span", m.id));
                }
            }
        }

        let mut order: Vec<usize> = (0..self.mentions.len()).collect();
        order.sort_by_key(|&i| {
            let m = &self.mentions[i];
            (m.sentence, m.first, Reverse(m.last), i)
        });
        self.order = order;

        let mut instances = Vec::with_capacity(self.bridging.len());
        let mut seen = HashSet::new();
        for link in &self.bridging {
            let anaphor = self.resolve(&link.anaphor)?;
            if !seen.insert(anaphor) {
                return Err(format!("anaphor {:?} linked more than once", link.anaphor));
            }
            if link.antecedents.is_empty() {
                return Err(format!("anaphor {:?} has no antecedents", link.anaphor));
            }
            let ana = &self.mentions[anaphor];
            let mut gold = Vec::with_capacity(link.antecedents.len());
            for ante_id in &link.antecedents {
                let ante = self.resolve(ante_id)?;
                if !self.mentions[ante].precedes(ana) {
                    return Err(format!(
                        "antecedent {ante_id:?} does not precede anaphor {:?}",
                        link.anaphor
                    ));
                }
                gold.push(ante);
            }
            // Nearest: smallest sentence distance, then latest position.
            let nearest = *gold
                .iter()
                .max_by_key(|&&g| self.mentions[g].start())
                .expect("non-empty");
            let sentence_distance = ana.sentence - self.mentions[nearest].sentence;
            let salient = gold.iter().any(|&g| self.mentions[g].sentence == 0);
            instances.push(BridgingInstance {
                anaphor,
                gold_antecedents: gold,
                sentence_distance,
                salient,
                nearest_antecedent: nearest,
            });
        }
        self.instances = instances;
        Ok(())
    }

    fn resolve(&self, id: &str) -> Result<usize, String> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| format!("dangling mention reference {id:?}"))
    }

    pub fn mention_index(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn mention(&self, index: usize) -> &Mention {
        &self.mentions[index]
    }

    pub fn instances(&self) -> &[BridgingInstance] {
        &self.instances
    }

    /// Mention indices sorted by document position (outer mentions before
    /// nested ones sharing a start token).
    pub fn mentions_in_order(&self) -> &[usize] {
        &self.order
    }

    pub fn sentence_of(&self, mention: &Mention) -> &Sentence {
        &self.sentences[mention.sentence]
    }

    /// Surface words of a mention span.
    pub fn mention_words(&self, mention: &Mention) -> Vec<&str> {
        self.sentence_of(mention).tokens[mention.first..=mention.last]
            .iter()
            .map(|t| t.text.as_str())
            .collect()
    }

    pub fn mention_text(&self, mention: &Mention) -> String {
        self.mention_words(mention).join(" ")
    }

    /// Token index (within its sentence) of the mention's semantic head.
    pub fn head_of(&self, mention: &Mention) -> usize {
        semantic_head(mention, &self.sentence_of(mention).tokens)
    }

    pub fn head_word(&self, mention: &Mention) -> &str {
        &self.sentence_of(mention).tokens[self.head_of(mention)].text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CorpusCounts {
    pub documents: usize,
    pub mentions: usize,
    pub instances: usize,
}

/// A validated, immutable collection of documents.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
}

/// Borrowed view of one bridging instance together with its document.
#[derive(Debug, Clone, Copy)]
pub struct InstanceRef<'a> {
    pub doc: &'a Document,
    pub instance: &'a BridgingInstance,
}

impl<'a> InstanceRef<'a> {
    pub fn anaphor(&self) -> &'a Mention {
        &self.doc.mentions[self.instance.anaphor]
    }

    pub fn nearest_antecedent(&self) -> &'a Mention {
        &self.doc.mentions[self.instance.nearest_antecedent]
    }

    pub fn gold(&self) -> impl Iterator<Item = &'a Mention> + 'a {
        let doc = self.doc;
        self.instance
            .gold_antecedents
            .iter()
            .map(move |&g| &doc.mentions[g])
    }

    pub fn gold_ids(&self) -> Vec<String> {
        self.gold().map(|m| m.id.clone()).collect()
    }

    /// Corpus-wide identifier: `<document id>:<anaphor mention id>`.
    pub fn id(&self) -> String {
        format!("{}:{}", self.doc.id, self.anaphor().id)
    }

    pub fn is_gold(&self, mention_index: usize) -> bool {
        self.instance.gold_antecedents.contains(&mention_index)
    }
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        Corpus { documents }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn counts(&self) -> CorpusCounts {
        CorpusCounts {
            documents: self.documents.len(),
            mentions: self.documents.iter().map(|d| d.mentions.len()).sum(),
            instances: self.documents.iter().map(|d| d.instances.len()).sum(),
        }
    }

    /// All instances in corpus order (document order, then link order).
    pub fn instances(&self) -> impl Iterator<Item = InstanceRef<'_>> {
        self.documents.iter().flat_map(|doc| {
            doc.instances
                .iter()
                .map(move |instance| InstanceRef { doc, instance })
        })
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut documents = Vec::new();
        let mut ids = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| CorpusError::Schema {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut doc: Document =
                serde_json::from_str(&line).map_err(|e| CorpusError::Schema {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let invalid = |message: String, doc: &Document| CorpusError::Validation {
                doc: doc.id.clone(),
                line: line_no,
                message,
            };
            if let Err(message) = doc.index() {
                return Err(invalid(message, &doc));
            }
            if !ids.insert(doc.id.clone()) {
                return Err(invalid("duplicate document id".into(), &doc));
            }
            documents.push(doc);
        }
        Ok(Corpus { documents })
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for doc in &self.documents {
            serde_json::to_writer(&mut writer, doc)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        self.write_to(BufWriter::new(file)).map_err(io_err)
    }
}

/// Loads and validates a line-delimited corpus file.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Corpus::from_reader(BufReader::new(file))
}

/// Which earlier mentions are eligible antecedents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateScope {
    /// First sentence, the two sentences before the anaphor, and the
    /// anaphor's own sentence.
    SalientNearby,
    AllPrevious,
}

impl CandidateScope {
    pub fn as_str(self) -> &'static str {
        match self {
            CandidateScope::SalientNearby => "salient",
            CandidateScope::AllPrevious => "all",
        }
    }
}

impl fmt::Display for CandidateScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CandidateScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "salient" | "salient-nearby" => Ok(CandidateScope::SalientNearby),
            "all" | "all-previous" => Ok(CandidateScope::AllPrevious),
            _ => Err(format!("unknown candidate scope {s:?} (expected salient|all)")),
        }
    }
}

/// How much text accompanies a cloze query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextScope {
    AnaphorOnly,
    AnaphorSentence,
    /// Anaphor sentence plus the sentence of the nearest gold antecedent.
    AnteAnaSentence,
    /// First sentence, two preceding sentences, anaphor sentence.
    MoreContext,
}

impl ContextScope {
    pub const ALL: [ContextScope; 4] = [
        ContextScope::AnaphorOnly,
        ContextScope::AnaphorSentence,
        ContextScope::AnteAnaSentence,
        ContextScope::MoreContext,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContextScope::AnaphorOnly => "anaphor",
            ContextScope::AnaphorSentence => "sentence",
            ContextScope::AnteAnaSentence => "ante-ana",
            ContextScope::MoreContext => "more",
        }
    }

    /// Sentence indices rendered for this scope, ascending and distinct.
    /// For `AnaphorOnly` this is the anaphor sentence, of which only the
    /// anaphor span is used.
    pub fn sentences(self, anaphor_sentence: usize, antecedent_sentence: usize) -> Vec<usize> {
        let mut out = match self {
            ContextScope::AnaphorOnly | ContextScope::AnaphorSentence => vec![anaphor_sentence],
            ContextScope::AnteAnaSentence => vec![antecedent_sentence, anaphor_sentence],
            ContextScope::MoreContext => window_sentences(anaphor_sentence),
        };
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl fmt::Display for ContextScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "anaphor" | "anaphor-only" => Ok(ContextScope::AnaphorOnly),
            "sentence" | "anaphor-sentence" => Ok(ContextScope::AnaphorSentence),
            "ante-ana" | "ante-ana-sentence" => Ok(ContextScope::AnteAnaSentence),
            "more" | "more-context" => Ok(ContextScope::MoreContext),
            _ => Err(format!(
                "unknown context scope {s:?} (expected anaphor|sentence|ante-ana|more)"
            )),
        }
    }
}

/// The document's first sentence, the two sentences before `sentence`, and
/// `sentence` itself.
pub fn window_sentences(sentence: usize) -> Vec<usize> {
    let mut out = vec![0];
    out.extend(sentence.saturating_sub(2)..=sentence);
    out.sort_unstable();
    out.dedup();
    out
}

fn in_window(anaphor_sentence: usize, sentence: usize) -> bool {
    sentence == 0 || (sentence <= anaphor_sentence && anaphor_sentence - sentence <= 2)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CandidateError {
    #[error("anaphor {0:?} has no preceding candidate mentions")]
    Empty(String),
}

/// Candidate antecedents for `anaphor` (an index into `doc.mentions`), in
/// document order. The anaphor and mentions nested in it are never
/// candidates, since they do not start strictly before it.
pub fn build_candidates(
    doc: &Document,
    anaphor: usize,
    scope: CandidateScope,
) -> Result<Vec<usize>, CandidateError> {
    let ana = &doc.mentions[anaphor];
    let out: Vec<usize> = doc
        .mentions_in_order()
        .iter()
        .copied()
        .filter(|&i| {
            let m = &doc.mentions[i];
            i != anaphor
                && m.precedes(ana)
                && !ana.contains(m)
                && match scope {
                    CandidateScope::AllPrevious => true,
                    CandidateScope::SalientNearby => in_window(ana.sentence, m.sentence),
                }
        })
        .collect();
    if out.is_empty() {
        Err(CandidateError::Empty(ana.id.clone()))
    } else {
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstanceFilter {
    /// Some gold antecedent is a noun phrase.
    NpAntecedents,
    /// Some gold antecedent lies in the first sentence, the two preceding
    /// sentences, or the anaphor sentence.
    InWindow,
    /// Some gold antecedent lies inside the context rendered for the scope.
    AntecedentInContext(ContextScope),
    Not(Box<InstanceFilter>),
}

impl InstanceFilter {
    pub fn matches(&self, inst: &InstanceRef<'_>) -> bool {
        let ana = inst.anaphor();
        match self {
            InstanceFilter::NpAntecedents => inst.gold().any(|g| g.is_np),
            InstanceFilter::InWindow => inst.gold().any(|g| in_window(ana.sentence, g.sentence)),
            InstanceFilter::AntecedentInContext(ContextScope::AnaphorOnly) => {
                inst.gold().any(|g| ana.contains(g))
            }
            InstanceFilter::AntecedentInContext(scope) => {
                let sentences =
                    scope.sentences(ana.sentence, inst.nearest_antecedent().sentence);
                inst.gold().any(|g| sentences.contains(&g.sentence))
            }
            InstanceFilter::Not(inner) => !inner.matches(inst),
        }
    }
}

/// Instances satisfying every filter, in corpus order.
pub fn filter_instances<'a>(corpus: &'a Corpus, filters: &[InstanceFilter]) -> Vec<InstanceRef<'a>> {
    corpus
        .instances()
        .filter(|inst| filters.iter().all(|f| f.matches(inst)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistanceBucketScheme {
    /// 0, 1, 2, 3-5, 6-10, and `>10` for excluded pairs.
    Attention,
    /// salient (takes precedence), 0, 1, 2, >2.
    Cloze,
}

pub const ATTENTION_BUCKETS: [&str; 5] = ["0", "1", "2", "3-5", "6-10"];
pub const ATTENTION_EXCLUDED_BUCKET: &str = ">10";
pub const CLOZE_BUCKETS: [&str; 5] = ["salient", "0", "1", "2", ">2"];

pub fn distance_bucket(instance: &BridgingInstance, scheme: DistanceBucketScheme) -> &'static str {
    bucket_for(instance.sentence_distance, instance.salient, scheme)
}

pub fn bucket_for(distance: usize, salient: bool, scheme: DistanceBucketScheme) -> &'static str {
    match scheme {
        DistanceBucketScheme::Cloze => match (salient, distance) {
            (true, _) => "salient",
            (false, 0) => "0",
            (false, 1) => "1",
            (false, 2) => "2",
            (false, _) => ">2",
        },
        DistanceBucketScheme::Attention => match distance {
            0 => "0",
            1 => "1",
            2 => "2",
            3..=5 => "3-5",
            6..=10 => "6-10",
            _ => ATTENTION_EXCLUDED_BUCKET,
        },
    }
}
