//! Conversion from MMAX2-style standoff annotation to the corpus format.
//!
//! Expected layout of the source directory:
//!
//! ```text
//! words/<doc>.xml                       <word id="word_1">The</word> ...
//! markables/<doc>_sentence_level.xml    <markable id="s1" span="word_1..word_9"/> ...
//! markables/<doc>_entity_level.xml      <markable id="m1" span="word_2..word_3"
//!                                                 head="word_3" np="true"
//!                                                 bridged_from="m0;m5"/> ...
//! links/<doc>_bridging.xml              <link anaphor="m4" antecedents="m1;m2"/> ...
//! ```
//!
//! `head`, `np` and `bridged_from` are optional. A span may list several
//! fragments separated by commas; the converter covers them with one range.
//! Bridging links come from the `links/` layer and from `bridged_from`
//! attributes, merged per anaphor. The per-document links file may be absent,
//! but the three layer directories must exist.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use super::{BridgingLink, Corpus, Document, Mention, Sentence};

#[derive(Debug, Error)]
pub enum ConvertError {
    #[error("missing annotation layer: {0}")]
    MissingLayer(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed XML in {path}: {message}")]
    Xml { path: PathBuf, message: String },
    #[error("converted document {doc:?} failed validation: {message}")]
    Invalid { doc: String, message: String },
}

/// One item dropped or adjusted during conversion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversionNote {
    pub document: String,
    pub item: String,
    pub reason: String,
}

impl fmt::Display for ConversionNote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.document, self.item, self.reason)
    }
}

#[derive(Debug)]
pub struct Conversion {
    pub corpus: Corpus,
    pub log: Vec<ConversionNote>,
}

struct XmlElement {
    name: String,
    attrs: HashMap<String, String>,
    text: String,
}

fn read_file(path: &Path) -> Result<String, ConvertError> {
    fs::read_to_string(path).map_err(|source| ConvertError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn attributes(tag: &BytesStart<'_>, path: &Path) -> Result<HashMap<String, String>, ConvertError> {
    let mut out = HashMap::new();
    for attr in tag.attributes() {
        let attr = attr.map_err(|e| ConvertError::Xml {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let key = String::from_utf8_lossy(attr.key.local_name().as_ref()).into_owned();
        let value = attr
            .unescape_value()
            .map_err(|e| ConvertError::Xml {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

/// Flat list of elements named `wanted`, with their attributes and text.
fn parse_elements(path: &Path, wanted: &str) -> Result<Vec<XmlElement>, ConvertError> {
    let xml = read_file(path)?;
    let mut reader = Reader::from_str(&xml);
    let xml_err = |e: quick_xml::Error| ConvertError::Xml {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut out = Vec::new();
    let mut open: Option<XmlElement> = None;
    loop {
        match reader.read_event().map_err(xml_err)? {
            Event::Start(tag) if tag.local_name().as_ref() == wanted.as_bytes() => {
                open = Some(XmlElement {
                    name: wanted.to_string(),
                    attrs: attributes(&tag, path)?,
                    text: String::new(),
                });
            }
            Event::Empty(tag) if tag.local_name().as_ref() == wanted.as_bytes() => {
                out.push(XmlElement {
                    name: wanted.to_string(),
                    attrs: attributes(&tag, path)?,
                    text: String::new(),
                });
            }
            Event::Text(text) => {
                if let Some(el) = open.as_mut() {
                    let text = text.unescape().map_err(xml_err)?;
                    el.text.push_str(&text);
                }
            }
            Event::CData(data) => {
                if let Some(el) = open.as_mut() {
                    el.text.push_str(&String::from_utf8_lossy(&data));
                }
            }
            Event::End(tag) if tag.local_name().as_ref() == wanted.as_bytes() => {
                if let Some(el) = open.take() {
                    out.push(el);
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    debug_assert!(out.iter().all(|e| e.name == wanted));
    Ok(out)
}

/// Resolves an MMAX span (`word_3..word_7,word_9`) to a covering range of
/// word positions. Returns `None` when a word id is unknown.
fn resolve_span(span: &str, word_pos: &HashMap<String, usize>) -> Option<(usize, usize, bool)> {
    let mut lo = usize::MAX;
    let mut hi = 0;
    let mut fragments = 0;
    for fragment in span.split(',').map(str::trim).filter(|f| !f.is_empty()) {
        fragments += 1;
        let (a, b) = fragment.split_once("..").unwrap_or((fragment, fragment));
        let a = *word_pos.get(a.trim())?;
        let b = *word_pos.get(b.trim())?;
        lo = lo.min(a.min(b));
        hi = hi.max(a.max(b));
    }
    (fragments > 0).then_some((lo, hi, fragments > 1))
}

fn split_ids(value: &str) -> impl Iterator<Item = &str> {
    value
        .split([';', ',', ' '])
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

fn parse_bool(value: &str) -> bool {
    !matches!(value.trim().to_ascii_lowercase().as_str(), "false" | "no" | "0")
}

/// Converts every document found under `source_dir/words/`.
pub fn convert_standoff(source_dir: &Path) -> Result<Conversion, ConvertError> {
    let words_dir = source_dir.join("words");
    let markables_dir = source_dir.join("markables");
    let links_dir = source_dir.join("links");
    for dir in [&words_dir, &markables_dir, &links_dir] {
        if !dir.is_dir() {
            return Err(ConvertError::MissingLayer(dir.clone()));
        }
    }

    let mut doc_names = Vec::new();
    let entries = fs::read_dir(&words_dir).map_err(|source| ConvertError::Io {
        path: words_dir.clone(),
        source,
    })?;
    for entry in entries {
        let path = entry
            .map_err(|source| ConvertError::Io {
                path: words_dir.clone(),
                source,
            })?
            .path();
        if path.extension().is_some_and(|e| e == "xml") {
            if let Some(stem) = path.file_stem() {
                doc_names.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    doc_names.sort();

    let mut documents = Vec::with_capacity(doc_names.len());
    let mut log = Vec::new();
    for name in doc_names {
        documents.push(convert_document(source_dir, &name, &mut log)?);
    }
    Ok(Conversion {
        corpus: Corpus::new(documents),
        log,
    })
}

fn convert_document(
    source_dir: &Path,
    name: &str,
    log: &mut Vec<ConversionNote>,
) -> Result<Document, ConvertError> {
    let mut note = |item: &str, reason: String| {
        log.push(ConversionNote {
            document: name.to_string(),
            item: item.to_string(),
            reason,
        })
    };

    let words_path = source_dir.join("words").join(format!("{name}.xml"));
    let sentence_path = source_dir
        .join("markables")
        .join(format!("{name}_sentence_level.xml"));
    let entity_path = source_dir
        .join("markables")
        .join(format!("{name}_entity_level.xml"));
    let links_path = source_dir.join("links").join(format!("{name}_bridging.xml"));
    for path in [&sentence_path, &entity_path] {
        if !path.is_file() {
            return Err(ConvertError::MissingLayer(path.clone()));
        }
    }

    let words = parse_elements(&words_path, "word")?;
    let mut word_pos = HashMap::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        match w.attrs.get("id") {
            Some(id) => {
                word_pos.insert(id.clone(), i);
            }
            None => note(&format!("word #{i}"), "word without id".into()),
        }
    }

    // Sentence spans, in word order; each word maps to (sentence, token).
    let mut spans = Vec::new();
    for el in parse_elements(&sentence_path, "markable")? {
        let id = el.attrs.get("id").cloned().unwrap_or_default();
        match el.attrs.get("span").and_then(|s| resolve_span(s, &word_pos)) {
            Some((lo, hi, _)) => spans.push((lo, hi, id)),
            None => note(&id, "sentence span does not resolve".into()),
        }
    }
    spans.sort();
    let mut location: Vec<Option<(usize, usize)>> = vec![None; words.len()];
    let mut sentences = Vec::new();
    for (lo, hi, id) in spans {
        if (lo..=hi).any(|i| location[i].is_some()) {
            note(&id, "sentence overlaps an earlier sentence".into());
            continue;
        }
        let s = sentences.len();
        for (t, i) in (lo..=hi).enumerate() {
            location[i] = Some((s, t));
        }
        let tokens: Vec<&str> = words[lo..=hi].iter().map(|w| w.text.trim()).collect();
        sentences.push(Sentence::from_words(&tokens));
    }
    for (i, loc) in location.iter().enumerate() {
        if loc.is_none() {
            let id = words[i].attrs.get("id").map_or("?", String::as_str);
            note(id, "word outside every sentence".into());
        }
    }

    let mut mentions = Vec::new();
    let mut attr_links: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for el in parse_elements(&entity_path, "markable")? {
        let Some(id) = el.attrs.get("id").cloned() else {
            note("?", "markable without id".into());
            continue;
        };
        let Some((lo, hi, discontinuous)) =
            el.attrs.get("span").and_then(|s| resolve_span(s, &word_pos))
        else {
            note(&id, "mention span does not resolve".into());
            continue;
        };
        let (Some((s_lo, first)), Some((s_hi, last))) = (location[lo], location[hi]) else {
            note(&id, "mention span outside sentences".into());
            continue;
        };
        if s_lo != s_hi {
            note(&id, "mention crosses a sentence boundary".into());
            continue;
        }
        if discontinuous {
            note(&id, "discontinuous span covered by one range".into());
        }
        let head = match el.attrs.get("head") {
            None => None,
            Some(h) => match word_pos.get(h).and_then(|&p| location[p]) {
                Some((s, t)) if s == s_lo && (first..=last).contains(&t) => Some(t),
                _ => {
                    note(&id, format!("head {h:?} outside mention; using fallback"));
                    None
                }
            },
        };
        let is_np = el
            .attrs
            .get("np")
            .or_else(|| el.attrs.get("is_np"))
            .is_none_or(|v| parse_bool(v));
        if let Some(from) = el.attrs.get("bridged_from") {
            attr_links
                .entry(id.clone())
                .or_default()
                .extend(split_ids(from).map(String::from));
        }
        mentions.push(Mention {
            id,
            sentence: s_lo,
            first,
            last,
            head,
            is_np,
        });
    }

    let mut links = attr_links;
    if links_path.is_file() {
        for el in parse_elements(&links_path, "link")? {
            let (Some(ana), Some(antes)) = (el.attrs.get("anaphor"), el.attrs.get("antecedents"))
            else {
                note("link", "link without anaphor or antecedents".into());
                continue;
            };
            links
                .entry(ana.clone())
                .or_default()
                .extend(split_ids(antes).map(String::from));
        }
    }

    let index: HashMap<&str, &Mention> = mentions.iter().map(|m| (m.id.as_str(), m)).collect();
    let mut bridging = Vec::new();
    for (anaphor, antecedents) in links {
        let Some(ana) = index.get(anaphor.as_str()) else {
            note(&anaphor, "bridging anaphor is not a known mention".into());
            continue;
        };
        let mut kept: Vec<String> = Vec::new();
        for ante in antecedents {
            if kept.contains(&ante) {
                continue;
            }
            match index.get(ante.as_str()) {
                None => note(&anaphor, format!("antecedent {ante:?} is not a known mention")),
                Some(m) if !m.precedes(ana) => {
                    note(&anaphor, format!("antecedent {ante:?} does not precede the anaphor"))
                }
                Some(_) => kept.push(ante),
            }
        }
        if kept.is_empty() {
            note(&anaphor, "no usable antecedent; link dropped".into());
            continue;
        }
        bridging.push(BridgingLink {
            anaphor,
            antecedents: kept,
        });
    }
    // Links in anaphor document order.
    bridging.sort_by_key(|l| index[l.anaphor.as_str()].start());

    Document::new(name, sentences, mentions, bridging).map_err(|message| ConvertError::Invalid {
        doc: name.to_string(),
        message,
    })
}
