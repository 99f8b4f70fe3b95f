//! Accuracy, breakdown tables, and deterministic report/heatmap rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::HeatMap;
use crate::corpus::{bucket_for, ContextScope, DistanceBucketScheme, ATTENTION_BUCKETS, ATTENTION_EXCLUDED_BUCKET, CLOZE_BUCKETS};
use crate::records::PredictionRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("cannot normalize: {used} instances used but only {total} in total")]
    Denominator { used: usize, total: usize },
    #[error("prediction {instance} has no {key} value")]
    MissingKey { instance: String, key: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Count and correct count of one group of predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub key: String,
    pub n: usize,
    pub correct: usize,
}

impl Cell {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        }
    }
}

/// Overall accuracy over `predictions`.
pub fn accuracy(predictions: &[PredictionRecord]) -> Result<Cell, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(Cell {
        key: "all".into(),
        n: predictions.len(),
        correct: predictions.iter().filter(|p| p.correct).count(),
    })
}

/// Accuracy with the correct count held fixed and the denominator widened
/// from `n_used` to `n_total`.
pub fn normalize_accuracy(accuracy: f64, n_used: usize, n_total: usize) -> Result<f64, EvalError> {
    if n_used > n_total || n_total == 0 {
        return Err(EvalError::Denominator {
            used: n_used,
            total: n_total,
        });
    }
    Ok(accuracy * n_used as f64 / n_total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BreakdownKey {
    ClozeDistance,
    AttentionDistance,
    ContextScope,
    CandidateScope,
    OfVariant,
    Method,
}

impl BreakdownKey {
    pub const ALL: [BreakdownKey; 6] = [
        BreakdownKey::ClozeDistance,
        BreakdownKey::AttentionDistance,
        BreakdownKey::ContextScope,
        BreakdownKey::CandidateScope,
        BreakdownKey::OfVariant,
        BreakdownKey::Method,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BreakdownKey::ClozeDistance => "cloze-distance",
            BreakdownKey::AttentionDistance => "attention-distance",
            BreakdownKey::ContextScope => "context",
            BreakdownKey::CandidateScope => "candidates",
            BreakdownKey::OfVariant => "of",
            BreakdownKey::Method => "method",
        }
    }

    fn value(self, p: &PredictionRecord) -> Result<String, EvalError> {
        Ok(match self {
            BreakdownKey::ClozeDistance => {
                bucket_for(p.distance, p.salient, DistanceBucketScheme::Cloze).into()
            }
            BreakdownKey::AttentionDistance => {
                bucket_for(p.distance, p.salient, DistanceBucketScheme::Attention).into()
            }
            BreakdownKey::ContextScope => p.scope.clone(),
            BreakdownKey::CandidateScope => p.candidate_scope.clone(),
            BreakdownKey::OfVariant => p.of_variant.clone().ok_or_else(|| EvalError::MissingKey {
                instance: p.anaphor_id.clone(),
                key: self.as_str(),
            })?,
            BreakdownKey::Method => p.method.clone(),
        })
    }

    /// Fixed display order for known values; others sort after, by name.
    fn rank(self, value: &str) -> usize {
        let known: Vec<&str> = match self {
            BreakdownKey::ClozeDistance => CLOZE_BUCKETS.to_vec(),
            BreakdownKey::AttentionDistance => {
                let mut v = ATTENTION_BUCKETS.to_vec();
                v.push(ATTENTION_EXCLUDED_BUCKET);
                v
            }
            BreakdownKey::ContextScope => ContextScope::ALL.iter().map(|s| s.as_str()).collect(),
            BreakdownKey::CandidateScope => vec!["salient", "all"],
            BreakdownKey::OfVariant => vec!["with", "without"],
            BreakdownKey::Method => vec!["cloze", "heads"],
        };
        known.iter().position(|k| *k == value).unwrap_or(known.len())
    }
}

impl FromStr for BreakdownKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BreakdownKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = BreakdownKey::ALL.iter().map(|k| k.as_str()).collect();
                format!("unknown breakdown {s:?} (expected one of {})", names.join(", "))
            })
    }
}

/// Partition of `predictions` by `key`, non-empty cells only.
pub fn breakdown(predictions: &[PredictionRecord], key: BreakdownKey) -> Result<Vec<Cell>, EvalError> {
    let mut groups: BTreeMap<(usize, String), (usize, usize)> = BTreeMap::new();
    for p in predictions {
        let value = key.value(p)?;
        let g = groups.entry((key.rank(&value), value)).or_default();
        g.0 += 1;
        g.1 += usize::from(p.correct);
    }
    Ok(groups
        .into_iter()
        .map(|((_, value), (n, correct))| Cell {
            key: value,
            n,
            correct,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_instances: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    /// Instances that produced no prediction; never in the denominator.
    pub n_skipped: usize,
    /// Accuracy over used plus skipped instances.
    pub normalized_accuracy: f64,
    pub breakdowns: BTreeMap<String, Vec<Cell>>,
    pub metadata: serde_json::Value,
}

pub fn evaluate(
    predictions: &[PredictionRecord],
    n_skipped: usize,
    keys: &[BreakdownKey],
    metadata: serde_json::Value,
) -> Result<EvalReport, EvalError> {
    let overall = accuracy(predictions)?;
    let mut breakdowns = BTreeMap::new();
    for &key in keys {
        breakdowns.insert(key.as_str().to_string(), breakdown(predictions, key)?);
    }
    let acc = overall.accuracy();
    Ok(EvalReport {
        n_instances: overall.n,
        n_correct: overall.correct,
        accuracy: acc,
        n_skipped,
        normalized_accuracy: normalize_accuracy(acc, overall.n, overall.n + n_skipped)?,
        breakdowns,
        metadata,
    })
}

/// Rows of the report: overall, normalized, skipped, then each breakdown cell
/// as `<breakdown>:<value>`. Accuracy is `None` for the skipped row.
fn report_rows(report: &EvalReport) -> Vec<(String, usize, Option<usize>, Option<f64>)> {
    let mut rows = vec![
        ("all".to_string(), report.n_instances, Some(report.n_correct), Some(report.accuracy)),
        (
            "all+skipped".to_string(),
            report.n_instances + report.n_skipped,
            Some(report.n_correct),
            Some(report.normalized_accuracy),
        ),
        ("skipped".to_string(), report.n_skipped, None, None),
    ];
    for (name, cells) in &report.breakdowns {
        for c in cells {
            rows.push((format!("{name}:{}", c.key), c.n, Some(c.correct), Some(c.accuracy())));
        }
    }
    rows
}

pub const REPORT_COLUMNS: [&str; 4] = ["key", "n", "correct", "accuracy_pct"];

/// CSV report with percentages at 4 decimals.
pub fn write_report_csv<W: Write>(writer: W, report: &EvalReport) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_COLUMNS)?;
    for (key, n, correct, acc) in report_rows(report) {
        w.write_record([
            key,
            n.to_string(),
            correct.map(|c| c.to_string()).unwrap_or_default(),
            acc.map(|a| format!("{:.4}", 100.0 * a)).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned plain-text table with percentages at 2 decimals.
pub fn render_text_table(report: &EvalReport) -> String {
    let rows: Vec<[String; 4]> = report_rows(report)
        .into_iter()
        .map(|(key, n, correct, acc)| {
            [
                key,
                n.to_string(),
                correct.map(|c| c.to_string()).unwrap_or_else(|| "-".into()),
                acc.map(|a| format!("{:.2}", 100.0 * a)).unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    let header = ["key", "n", "correct", "accuracy %"];
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: [&str; 4]| {
        let _ = writeln!(
            out,
            "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3]
        );
    };
    line(header);
    for r in &rows {
        line([&r[0], &r[1], &r[2], &r[3]]);
    }
    out
}

/// Heatmap CSV: header `layer\head,1..H`, one row per layer, empty fields for
/// absent cells.
pub fn write_heatmap_csv<W: Write>(writer: W, map: &HeatMap) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["layer\\head".to_string()];
    header.extend((1..=map.heads).map(|h| h.to_string()));
    w.write_record(&header)?;
    for l in 1..=map.layers {
        let mut row = vec![l.to_string()];
        row.extend((1..=map.heads).map(|h| map.get(l, h).map(|v| format!("{v:.4}")).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a heatmap written by [`write_heatmap_csv`].
pub fn read_heatmap_csv<R: std::io::Read>(reader: R) -> Result<HeatMap, String> {
    let mut r = csv::Reader::from_reader(reader);
    let heads = r.headers().map_err(|e| e.to_string())?.len().saturating_sub(1);
    let rows: Vec<csv::StringRecord> = r.records().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mut map = HeatMap::empty(rows.len(), heads);
    for (l, row) in rows.iter().enumerate() {
        for h in 1..=heads {
            let field = row.get(h).unwrap_or("");
            if !field.is_empty() {
                let v = field.parse::<f64>().map_err(|e| format!("row {}: {e}", l + 1))?;
                map.set(l + 1, h, Some(v));
            }
        }
    }
    Ok(map)
}

const CELL: usize = 28;
const MARGIN: usize = 48;

fn shade(t: f64) -> String {
    // white (low) to dark blue (high)
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

/// SVG rendering: heads on the x axis, layers on the y axis (layer 1 on top).
/// Absent cells are hatched grey.
pub fn render_heatmap_svg(map: &HeatMap, title: &str) -> String {
    let values: Vec<f64> = (1..=map.layers)
        .flat_map(|l| (1..=map.heads).filter_map(move |h| map.get(l, h)))
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = MARGIN + map.heads * CELL + 8;
    let height = MARGIN + map.layers * CELL + 24;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="14" font-size="12">{}</text>"#, escape(title));
    for h in 1..=map.heads {
        let x = MARGIN + (h - 1) * CELL + CELL / 2;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{h}</text>"#, MARGIN - 6);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">head</text>"#,
        MARGIN + map.heads * CELL / 2,
        MARGIN - 20
    );
    for l in 1..=map.layers {
        let y = MARGIN + (l - 1) * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{l}</text>"#,
            MARGIN - 6,
            y + CELL / 2 + 4
        );
        for h in 1..=map.heads {
            let x = MARGIN + (h - 1) * CELL;
            match map.get(l, h) {
                Some(v) => {
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}"><title>{l}:{h} {v:.4}</title></rect>"#,
                        shade(t)
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#dddddd"><title>{l}:{h} absent</title></rect>"##
                    );
                }
            }
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">layer</text>"#,
        MARGIN + map.layers * CELL / 2,
        MARGIN + map.layers * CELL / 2
    );
    if !values.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN}" y="{}">min {lo:.4}  max {hi:.4}</text>"#,
            MARGIN + map.layers * CELL + 16
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::ScoreEntry;

    pub(crate) fn pred(id: &str, correct: bool, distance: usize, salient: bool) -> PredictionRecord {
        PredictionRecord {
            anaphor_id: id.into(),
            scope: "more".into(),
            candidate_scope: "all".into(),
            of_variant: Some("with".into()),
            perturbed: false,
            seed: 13,
            predicted: "m0".into(),
            gold: vec!["m0".into()],
            correct,
            scores: vec![ScoreEntry {
                mention: "m0".into(),
                k: 1,
                score: Some(-1.0),
            }],
            method: "cloze".into(),
            strategy: Some("head".into()),
            distance,
            salient,
        }
    }

    #[test]
    fn accuracy_counts() {
        let p = [pred("a", true, 0, false), pred("b", false, 1, false), pred("c", true, 3, true)];
        let a = accuracy(&p).unwrap();
        assert_eq!((a.n, a.correct), (3, 2));
        assert!((a.accuracy() - 0.6667).abs() < 1e-4);
        assert!(matches!(accuracy(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn normalization() {
        let n = normalize_accuracy(0.2990, 622, 663).unwrap();
        assert!((n - 0.2805).abs() < 1e-4);
        assert_eq!(normalize_accuracy(0.5, 10, 20).unwrap(), 0.25);
        assert_eq!(normalize_accuracy(0.37, 9, 9).unwrap(), 0.37);
        assert!(normalize_accuracy(0.5, 21, 20).is_err());
    }

    #[test]
    fn breakdown_orders_and_partitions() {
        let p = [
            pred("a", true, 4, false),
            pred("b", false, 1, false),
            pred("c", true, 3, true),
            pred("d", true, 1, false),
        ];
        let cells = breakdown(&p, BreakdownKey::ClozeDistance).unwrap();
        let keys: Vec<&str> = cells.iter().map(|c| c.key.as_str()).collect();
        assert_eq!(keys, ["salient", "1", ">2"]);
        assert_eq!(cells.iter().map(|c| c.n).sum::<usize>(), 4);
        let att = breakdown(&p, BreakdownKey::AttentionDistance).unwrap();
        let keys: Vec<&str> = att.iter().map(|c| c.key.as_str()).collect();
        assert_eq!(keys, ["1", "3-5"]);
        let mut heads = pred("e", true, 0, false);
        heads.of_variant = None;
        assert!(matches!(
            breakdown(&[heads], BreakdownKey::OfVariant),
            Err(EvalError::MissingKey { .. })
        ));
    }

    #[test]
    fn report_renderings() {
        let p = [pred("a", true, 0, false), pred("b", false, 0, true)];
        let r = evaluate(&p, 2, &[BreakdownKey::ClozeDistance], serde_json::Value::Null).unwrap();
        let mut csv_out = Vec::new();
        write_report_csv(&mut csv_out, &r).unwrap();
        assert_eq!(
            String::from_utf8(csv_out).unwrap(),
            "key,n,correct,accuracy_pct\n\
             all,2,1,50.0000\n\
             all+skipped,4,1,25.0000\n\
             skipped,2,,\n\
             cloze-distance:salient,1,0,0.0000\n\
             cloze-distance:0,1,1,100.0000\n"
        );
        let text = render_text_table(&r);
        assert!(text.contains("all+skipped"));
        assert!(text.contains("25.00"));
    }

    #[test]
    fn heatmap_csv_layout() {
        let mut m = HeatMap::empty(2, 3);
        m.set(1, 2, Some(2.0));
        m.set(2, 3, Some(0.123456));
        let mut out = Vec::new();
        write_heatmap_csv(&mut out, &m).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "layer\\head,1,2,3\n1,,2.0000,\n2,,,0.1235\n");
        let back = read_heatmap_csv(text.as_bytes()).unwrap();
        assert_eq!(back.get(1, 2), Some(2.0));
        assert_eq!(back.get(1, 1), None);
        let svg = render_heatmap_svg(&m, "ana2ante <all>");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("&lt;all&gt;"));
        assert_eq!(svg, render_heatmap_svg(&m, "ana2ante <all>"));
    }

    #[test]
    fn zero_matrix_csv() {
        let mut m = HeatMap::empty(12, 12);
        for l in 1..=12 {
            for h in 1..=12 {
                m.set(l, h, Some(0.0));
            }
        }
        let mut out = Vec::new();
        write_heatmap_csv(&mut out, &m).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(lines.len(), 12);
        assert!(lines.iter().all(|l| l.split(',').skip(1).filter(|f| *f == "0.0000").count() == 12));
    }
}
