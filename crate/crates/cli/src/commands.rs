use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use bridgeprobe::attention::{
    self, read_signals_csv, signal_matrix, write_signals_csv, Direction, HeadSet, InputMode,
    ProbeOutcome, SignalDefinition, SignalError, SignalRecord,
};
use bridgeprobe::cloze::{resolve_instance, ClozeConfig, ClozeError};
use bridgeprobe::corpus::standoff::convert_standoff;
use bridgeprobe::corpus::{
    filter_instances, load_corpus, CandidateScope, Corpus, InstanceFilter, InstanceRef,
    ATTENTION_BUCKETS, ATTENTION_EXCLUDED_BUCKET,
};
use bridgeprobe::eval::{
    evaluate, render_heatmap_svg, render_text_table, write_heatmap_csv, write_report_csv,
    BreakdownKey, EvalReport,
};
use bridgeprobe::protocol::{run_pool, BackendDescriptor, BackendSpec, ProtocolError};
use bridgeprobe::records::{read_jsonl, write_jsonl, PredictionRecord, SkipRecord};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::Subset;

const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const PREDICTIONS: &str = "predictions.jsonl";
pub const SKIPPED: &str = "skipped.jsonl";
pub const SIGNALS: &str = "signals.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const MANIFEST: &str = "manifest.json";

const DEFAULT_BREAKDOWNS: [BreakdownKey; 4] = [
    BreakdownKey::ClozeDistance,
    BreakdownKey::AttentionDistance,
    BreakdownKey::ContextScope,
    BreakdownKey::CandidateScope,
];

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    write_file(path, text)
}

fn filters(subset: Subset, auto: Subset) -> (Subset, Vec<InstanceFilter>) {
    let subset = if subset == Subset::Auto { auto } else { subset };
    let list = match subset {
        Subset::All | Subset::Auto => vec![],
        Subset::Np => vec![InstanceFilter::NpAntecedents],
        Subset::Window => vec![InstanceFilter::NpAntecedents, InstanceFilter::InWindow],
    };
    (subset, list)
}

fn subset_name(subset: Subset) -> &'static str {
    match subset {
        Subset::Auto => "auto",
        Subset::All => "all",
        Subset::Np => "np",
        Subset::Window => "window",
    }
}

fn corpus_json(path: &Path, corpus: &Corpus) -> Value {
    let c = corpus.counts();
    json!({
        "path": path.display().to_string(),
        "documents": c.documents,
        "mentions": c.mentions,
        "instances": c.instances,
    })
}

fn backend_json(spec: &BackendSpec, d: &BackendDescriptor) -> Value {
    json!({
        "spec": spec.to_string(),
        "name": d.name,
        "max_input_pieces": d.max_input_pieces,
        "layers": d.layers,
        "heads": d.heads,
        "mask_piece": d.mask_piece,
        "packing": d.packing,
    })
}

fn describe(spec: &BackendSpec) -> Result<BackendDescriptor, CliError> {
    Ok(spec.connect()?.descriptor().clone())
}

fn skip(inst: &InstanceRef<'_>, reason: impl Into<String>) -> SkipRecord {
    SkipRecord {
        instance_id: inst.id(),
        reason: reason.into(),
    }
}

fn fatal(inst: &InstanceRef<'_>, e: impl std::fmt::Display) -> CliError {
    CliError::new("backend", format!("{}: {e}", inst.id()))
}

pub fn convert(input: &Path, output: &Path, log: Option<&Path>) -> Result<(), CliError> {
    let conversion = convert_standoff(input)?;
    conversion.corpus.save(output)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = output.as_os_str().to_owned();
        p.push(".log");
        PathBuf::from(p)
    });
    let mut text = String::new();
    for note in &conversion.log {
        text.push_str(&note.to_string());
        text.push('\n');
    }
    write_file(&log_path, text)?;
    let c = conversion.corpus.counts();
    println!(
        "{}",
        json!({
            "documents": c.documents,
            "mentions": c.mentions,
            "instances": c.instances,
            "log_entries": conversion.log.len(),
            "log": log_path.display().to_string(),
        })
    );
    Ok(())
}

pub struct AttentionRun {
    pub corpus: PathBuf,
    pub backend: BackendSpec,
    pub out: PathBuf,
    pub jobs: usize,
    pub subset: Subset,
    pub mode: InputMode,
    pub heads: Option<HeadSet>,
    pub definition: SignalDefinition,
    pub seed: u64,
    pub svg: bool,
}

fn bucket_slug(bucket: &str) -> String {
    bucket.replace('>', "gt")
}

/// Writes one heatmap per direction for every bucket and for all buckets
/// together; returns the file names.
fn write_heatmaps(
    dir: &Path,
    records: &[SignalRecord],
    layers: usize,
    heads: usize,
    svg: bool,
) -> Result<Vec<String>, CliError> {
    let mut buckets: Vec<Option<&str>> = vec![None];
    buckets.extend(ATTENTION_BUCKETS.iter().map(|b| Some(*b)));
    if records.iter().any(|r| r.bucket == ATTENTION_EXCLUDED_BUCKET) {
        buckets.push(Some(ATTENTION_EXCLUDED_BUCKET));
    }
    let mut written = Vec::new();
    for direction in Direction::BOTH {
        for &bucket in &buckets {
            let map = signal_matrix(records, direction, bucket, layers, heads);
            let stem = format!("heatmap_{}_{}", direction.as_str(), bucket.map_or("all".into(), bucket_slug));
            let csv_name = format!("{stem}.csv");
            let path = dir.join(&csv_name);
            let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
            write_heatmap_csv(BufWriter::new(file), &map)?;
            written.push(csv_name);
            if svg {
                let title = format!("{} bucket {}", direction.as_str(), bucket.unwrap_or("all"));
                let svg_name = format!("{stem}.svg");
                write_file(&dir.join(&svg_name), render_heatmap_svg(&map, &title))?;
                written.push(svg_name);
            }
        }
    }
    Ok(written)
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<(), CliError> {
    let path = dir.join(REPORT_CSV);
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_report_csv(BufWriter::new(file), report)?;
    write_file(&dir.join(REPORT_TXT), render_text_table(report))
}

pub fn attention(run: AttentionRun) -> Result<(), CliError> {
    let corpus = load_corpus(&run.corpus)?;
    let descriptor = describe(&run.backend)?;
    if let Some(heads) = &run.heads {
        heads
            .validate(descriptor.layers, descriptor.heads)
            .map_err(|e| CliError::usage(format!("--select-heads: {e}")))?;
    }
    create_dir(&run.out)?;
    let (subset, list) = filters(run.subset, Subset::Np);
    let selected = filter_instances(&corpus, &list);
    let connect = || run.backend.connect();

    let outcomes = run_pool(&selected, run.jobs, connect, |client, inst| {
        attention::probe_instance(client, inst, run.mode, run.definition)
    })?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (inst, outcome) in selected.iter().zip(outcomes) {
        match outcome {
            Ok(ProbeOutcome::Signals(r)) => records.extend(r),
            Ok(ProbeOutcome::Excluded(reason)) => skipped.push(skip(inst, reason)),
            Err(e @ SignalError::Undefined { .. }) => skipped.push(skip(inst, e.to_string())),
            Err(e) => return Err(fatal(inst, e)),
        }
    }
    let signal_skips = skipped.len();
    let signals_path = run.out.join(SIGNALS);
    let file = fs::File::create(&signals_path).map_err(|e| CliError::io(&signals_path, e))?;
    write_signals_csv(BufWriter::new(file), &records).map_err(|e| CliError::io(&signals_path, e.into()))?;
    let mut outputs = vec![SIGNALS.to_string(), SKIPPED.to_string(), MANIFEST.to_string()];
    outputs.extend(write_heatmaps(&run.out, &records, descriptor.layers, descriptor.heads, run.svg)?);

    let mut selection = Value::Null;
    if let Some(heads) = &run.heads {
        let (head_subset, list) = filters(run.subset, Subset::Window);
        let candidates = filter_instances(&corpus, &list);
        let results = run_pool(&candidates, run.jobs, connect, |client, inst| {
            attention::select_by_heads(client, inst, heads, run.seed)
        })?;
        let mut predictions = Vec::new();
        let mut head_skips = 0;
        for (inst, result) in candidates.iter().zip(results) {
            match result {
                Ok(p) => predictions.push(p),
                Err(SignalError::Candidates(e)) => {
                    head_skips += 1;
                    skipped.push(skip(inst, format!("heads: {e}")));
                }
                Err(SignalError::Protocol(ProtocolError::Overflow { .. })) => {
                    head_skips += 1;
                    skipped.push(skip(inst, "heads: excluded: input size"));
                }
                Err(e) => return Err(fatal(inst, e)),
            }
        }
        write_jsonl(&run.out.join(PREDICTIONS), &predictions)?;
        outputs.push(PREDICTIONS.into());
        if !predictions.is_empty() {
            let report = evaluate(&predictions, head_skips, &DEFAULT_BREAKDOWNS, Value::Null)?;
            write_report(&run.out, &report)?;
            outputs.extend([REPORT_CSV.to_string(), REPORT_TXT.to_string()]);
        }
        selection = json!({
            "heads": heads.to_string(),
            "subset": subset_name(head_subset),
            "selected": candidates.len(),
            "predictions": predictions.len(),
            "skipped": head_skips,
            "seed": run.seed,
        });
    }
    write_jsonl(&run.out.join(SKIPPED), &skipped)?;
    outputs.sort();

    let manifest = json!({
        "tool": "bridgeprobe",
        "version": VERSION,
        "command": "attention",
        "corpus": corpus_json(&run.corpus, &corpus),
        "backend": backend_json(&run.backend, &descriptor),
        "config": {
            "mode": run.mode.as_str(),
            "subset": subset_name(subset),
            "jobs": run.jobs,
            "signal": {
                "w2_denominator": run.definition.denominator,
                "w2_includes_target": run.definition.include_target,
                "target_weight": "mean over target pieces",
                "source_weight": "mean over source pieces",
            },
        },
        "counts": {
            "selected": selected.len(),
            "excluded": signal_skips,
            "records": records.len(),
        },
        "head_selection": selection,
        "outputs": outputs,
    });
    write_json(&run.out.join(MANIFEST), &manifest)?;
    println!("{}", json!({ "out": run.out.display().to_string(), "records": records.len(), "skipped": skipped.len() }));
    Ok(())
}

pub struct ClozeRun {
    pub corpus: PathBuf,
    pub backend: BackendSpec,
    pub out: PathBuf,
    pub jobs: usize,
    pub subset: Subset,
    pub config: ClozeConfig,
}

pub fn cloze(run: ClozeRun) -> Result<(), CliError> {
    let corpus = load_corpus(&run.corpus)?;
    let descriptor = describe(&run.backend)?;
    create_dir(&run.out)?;
    let auto = match run.config.candidate_scope {
        CandidateScope::SalientNearby => Subset::Window,
        CandidateScope::AllPrevious => Subset::Np,
    };
    let (subset, list) = filters(run.subset, auto);
    let selected = filter_instances(&corpus, &list);
    let results = run_pool(&selected, run.jobs, || run.backend.connect(), |client, inst| {
        resolve_instance(client, inst, &run.config)
    })?;
    let mut predictions = Vec::new();
    let mut skipped = Vec::new();
    for (inst, result) in selected.iter().zip(results) {
        match result {
            Ok(p) => predictions.push(p),
            Err(e @ (ClozeError::Candidates(_) | ClozeError::NoFiniteScore(_))) => {
                skipped.push(skip(inst, e.to_string()))
            }
            Err(ClozeError::Protocol(ProtocolError::Overflow { .. })) => {
                skipped.push(skip(inst, "excluded: input size"))
            }
            Err(e) => return Err(fatal(inst, e)),
        }
    }
    write_jsonl(&run.out.join(PREDICTIONS), &predictions)?;
    write_jsonl(&run.out.join(SKIPPED), &skipped)?;
    let mut outputs = vec![PREDICTIONS.to_string(), SKIPPED.to_string(), MANIFEST.to_string()];
    if !predictions.is_empty() {
        let report = evaluate(&predictions, skipped.len(), &DEFAULT_BREAKDOWNS, Value::Null)?;
        write_report(&run.out, &report)?;
        outputs.extend([REPORT_CSV.to_string(), REPORT_TXT.to_string()]);
    }
    outputs.sort();
    let c = &run.config;
    let manifest = json!({
        "tool": "bridgeprobe",
        "version": VERSION,
        "command": "cloze",
        "corpus": corpus_json(&run.corpus, &corpus),
        "backend": backend_json(&run.backend, &descriptor),
        "config": {
            "context_scope": c.context_scope.as_str(),
            "candidate_scope": c.candidate_scope.as_str(),
            "of": c.of_variant.as_str(),
            "perturb": c.perturb,
            "seed": c.seed,
            "strategy": c.strategy.as_str(),
            "subset": subset_name(subset),
            "jobs": run.jobs,
            "joint_mask_scoring": true,
            "score": "mean log-probability over candidate pieces",
        },
        "counts": {
            "selected": selected.len(),
            "predictions": predictions.len(),
            "skipped": skipped.len(),
        },
        "outputs": outputs,
    });
    write_json(&run.out.join(MANIFEST), &manifest)?;
    println!(
        "{}",
        json!({ "out": run.out.display().to_string(), "predictions": predictions.len(), "skipped": skipped.len() })
    );
    Ok(())
}

fn read_predictions(preds: &Path, skipped: Option<&Path>) -> Result<(Vec<PredictionRecord>, usize, Option<PathBuf>), CliError> {
    let predictions: Vec<PredictionRecord> = read_jsonl(preds)?;
    let skipped_path = match skipped {
        Some(p) => Some(p.to_path_buf()),
        None => preds
            .parent()
            .map(|d| d.join(SKIPPED))
            .filter(|p| p.is_file()),
    };
    let n_skipped = match &skipped_path {
        Some(p) => read_jsonl::<SkipRecord>(p)?.len(),
        None => 0,
    };
    Ok((predictions, n_skipped, skipped_path))
}

pub fn eval(preds: &Path, skipped: Option<&Path>, keys: &[BreakdownKey], out: Option<&Path>) -> Result<(), CliError> {
    let (predictions, n_skipped, skipped_path) = read_predictions(preds, skipped)?;
    let report = evaluate(&predictions, n_skipped, keys, Value::Null)?;
    print!("{}", render_text_table(&report));
    if let Some(dir) = out {
        create_dir(dir)?;
        write_report(dir, &report)?;
        let manifest = json!({
            "tool": "bridgeprobe",
            "version": VERSION,
            "command": "eval",
            "predictions": preds.display().to_string(),
            "skipped": skipped_path.map(|p| p.display().to_string()),
            "breakdowns": keys.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
            "counts": {
                "predictions": report.n_instances,
                "correct": report.n_correct,
                "skipped": report.n_skipped,
            },
            "outputs": [MANIFEST, REPORT_CSV, REPORT_TXT],
        });
        write_json(&dir.join(MANIFEST), &manifest)?;
    }
    Ok(())
}

pub fn report(signals: Option<&Path>, preds: Option<&Path>, out: &Path, svg: bool) -> Result<(), CliError> {
    create_dir(out)?;
    let mut outputs = vec![MANIFEST.to_string()];
    let mut inputs = serde_json::Map::new();
    if let Some(path) = signals {
        let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let records = read_signals_csv(file).map_err(|e| CliError::new("signals", format!("{}: {e}", path.display())))?;
        let layers = records.iter().map(|r| r.layer).max().unwrap_or(0);
        let heads = records.iter().map(|r| r.head).max().unwrap_or(0);
        outputs.extend(write_heatmaps(out, &records, layers, heads, svg)?);
        inputs.insert("signals".into(), json!(path.display().to_string()));
    }
    if let Some(path) = preds {
        let (predictions, n_skipped, _) = read_predictions(path, None)?;
        let report = evaluate(&predictions, n_skipped, &DEFAULT_BREAKDOWNS, Value::Null)?;
        write_report(out, &report)?;
        print!("{}", render_text_table(&report));
        outputs.extend([REPORT_CSV.to_string(), REPORT_TXT.to_string()]);
        inputs.insert("predictions".into(), json!(path.display().to_string()));
    }
    outputs.sort();
    let manifest = json!({
        "tool": "bridgeprobe",
        "version": VERSION,
        "command": "report",
        "inputs": inputs,
        "svg": svg,
        "outputs": outputs,
    });
    write_json(&out.join(MANIFEST), &manifest)
}
