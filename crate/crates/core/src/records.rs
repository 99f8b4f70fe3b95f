//! Line-delimited output records shared by the probes and the evaluator.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub mention: String,
    pub k: usize,
    /// `null` when the candidate could not be scored (out of vocabulary).
    pub score: Option<f64>,
}

/// One antecedent prediction, as written to `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// `<document id>:<anaphor mention id>`.
    pub anaphor_id: String,
    /// Context scope (`anaphor`, `sentence`, `ante-ana`, `more`).
    pub scope: String,
    pub candidate_scope: String,
    /// `with`, `without`, or `null` for attention-head selection.
    pub of_variant: Option<String>,
    pub perturbed: bool,
    pub seed: u64,
    pub predicted: String,
    pub gold: Vec<String>,
    pub correct: bool,
    pub scores: Vec<ScoreEntry>,
    /// `cloze` or `heads`.
    pub method: String,
    /// Candidate surface strategy for cloze scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    pub distance: usize,
    pub salient: bool,
}

/// An instance that produced no prediction or signal, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub instance_id: String,
    pub reason: String,
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RecordError> {
    let io = |source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordError> {
    let file = File::open(path).map_err(|source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| RecordError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
