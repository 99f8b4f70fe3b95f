//! Semantic-head lookup for mentions.
//!
//! Annotated heads win. Without one, the head is the rightmost token before
//! the first post-modifier boundary (a preposition, a relative pronoun or a
//! comma). Coordinated phrases use the head of their first conjunct.

use super::{Mention, Token};

const COORDINATORS: &[&str] = &["and", "or", "but", "nor", "&"];

const PREPOSITIONS: &[&str] = &[
    "about", "above", "across", "after", "against", "along", "amid", "among", "around", "at",
    "before", "behind", "below", "beneath", "beside", "between", "beyond", "by", "concerning",
    "despite", "down", "during", "except", "for", "from", "in", "including", "inside", "into",
    "like", "near", "of", "off", "on", "onto", "out", "outside", "over", "per", "regarding",
    "since", "than", "through", "throughout", "to", "toward", "towards", "under", "until", "up",
    "upon", "versus", "via", "with", "within", "without",
];

const RELATIVIZERS: &[&str] = &["who", "whom", "whose", "which", "that", "where", "when"];

fn is_one_of(word: &str, list: &[&str]) -> bool {
    list.iter().any(|w| w.eq_ignore_ascii_case(word))
}

fn is_punctuation(word: &str) -> bool {
    word == "'s" || word == "'" || word.chars().all(|c| !c.is_alphanumeric())
}

fn is_boundary(word: &str) -> bool {
    word == "," || is_one_of(word, PREPOSITIONS) || is_one_of(word, RELATIVIZERS)
}

/// Head position within `words` (a mention span) by the surface heuristic.
pub fn fallback_head<S: AsRef<str>>(words: &[S]) -> usize {
    if words.is_empty() {
        return 0;
    }
    let word = |i: usize| words[i].as_ref();

    let mut end = (1..words.len())
        .find(|&i| is_one_of(word(i), COORDINATORS))
        .unwrap_or(words.len());
    if let Some(b) = (1..end).find(|&i| is_boundary(word(i))) {
        end = b;
    }
    (0..end)
        .rev()
        .find(|&i| !is_punctuation(word(i)))
        .unwrap_or(0)
}

/// Token index (within the sentence) of the mention's semantic head.
/// Always inside `[mention.first, mention.last]`.
pub fn semantic_head(mention: &Mention, sentence: &[Token]) -> usize {
    if let Some(h) = mention.head {
        return h;
    }
    let span: Vec<&str> = sentence[mention.first..=mention.last]
        .iter()
        .map(|t| t.text.as_str())
        .collect();
    mention.first + fallback_head(&span)
}
