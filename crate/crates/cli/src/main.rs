//! `bridgeprobe`: convert corpora, run the attention and cloze probes,
//! evaluate predictions and render reports.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use bridgeprobe::attention::{HeadSet, InputMode};
use bridgeprobe::cloze::{OfVariant, ScoringStrategy, DEFAULT_SEED};
use bridgeprobe::corpus::{CandidateScope, ContextScope};
use bridgeprobe::eval::BreakdownKey;
use bridgeprobe::protocol::BackendSpec;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "bridgeprobe", version, about = "Probe masked language models for bridging inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a standoff-annotated corpus directory to the corpus format.
    Convert(ConvertArgs),
    /// Compute per-head bridging signals, optionally selecting antecedents
    /// with prominent heads.
    Attention(AttentionArgs),
    /// Resolve anaphors with the of-cloze test.
    Cloze(ClozeArgs),
    /// Score a predictions file.
    Eval(EvalArgs),
    /// Render heatmaps and report tables from earlier outputs.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConvertArgs {
    /// Source directory with words/, markables/ and links/.
    #[arg(long)]
    input: PathBuf,
    /// Corpus file to write.
    #[arg(long)]
    output: PathBuf,
    /// Where to write the conversion log (default: <output>.log).
    #[arg(long)]
    log: Option<PathBuf>,
}

/// Which instances a probe runs on.
#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    /// `window` for salient/nearby candidates and head selection, `np` otherwise.
    Auto,
    All,
    /// Some gold antecedent is a noun phrase.
    Np,
    /// `np`, and some gold antecedent lies in the salient/nearby window.
    Window,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// cmd:<command line> | http:<url> | mock:<mode>
    #[arg(long, env = "BRIDGEPROBE_BACKEND")]
    backend: BackendSpec,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker count; each worker holds its own backend connection.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    #[arg(long, value_enum, default_value_t = Subset::Auto)]
    subset: Subset,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Pair,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum W2Denominator {
    Pieces,
    Words,
}

#[derive(Args)]
struct AttentionArgs {
    #[command(flatten)]
    probe: ProbeArgs,
    #[arg(long, value_enum, default_value_t = Mode::Pair)]
    mode: Mode,
    /// Also select antecedents by summed attention of these heads
    /// (default 5:1,9:12,11:3,12:2-4).
    #[arg(long = "select-heads", num_args = 0..=1, default_missing_value = "5:1,9:12,11:3,12:2-4")]
    select_heads: Option<HeadSet>,
    /// What the signal normalizer counts.
    #[arg(long = "w2-denominator", value_enum, default_value_t = W2Denominator::Pieces)]
    w2_denominator: W2Denominator,
    /// Leave the target's own attention out of the normalizer.
    #[arg(long = "w2-exclude-target")]
    w2_exclude_target: bool,
    /// Seed recorded in head-selection predictions.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Also write SVG heatmaps.
    #[arg(long)]
    svg: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Of {
    With,
    Without,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Head,
    Phrase,
    FirstPiece,
}

#[derive(Args)]
struct ClozeArgs {
    #[command(flatten)]
    probe: ProbeArgs,
    #[arg(long = "context-scope", default_value = "more")]
    context_scope: ContextScope,
    #[arg(long = "candidate-scope", default_value = "salient")]
    candidate_scope: CandidateScope,
    #[arg(long, value_enum, default_value_t = Of::With)]
    of: Of,
    /// Shuffle context words outside the anaphor and antecedents.
    #[arg(long)]
    perturb: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Strategy::Head)]
    strategy: Strategy,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    preds: PathBuf,
    /// Skip records to account for (default: skipped.jsonl beside --preds, if present).
    #[arg(long)]
    skipped: Option<PathBuf>,
    /// Comma-separated breakdowns.
    #[arg(long, value_delimiter = ',', default_value = "cloze-distance,attention-distance,context,candidates")]
    breakdown: Vec<BreakdownKey>,
    /// Write report.csv, report.txt and manifest.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Signals CSV from `attention`.
    #[arg(long)]
    signals: Option<PathBuf>,
    /// Predictions from `cloze` or `attention --select-heads`.
    #[arg(long)]
    preds: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

impl Mode {
    fn input_mode(self) -> InputMode {
        match self {
            Mode::Pair => InputMode::PairOnly,
            Mode::Full => InputMode::FullSpan,
        }
    }
}

impl Of {
    fn variant(self) -> OfVariant {
        match self {
            Of::With => OfVariant::WithOf,
            Of::Without => OfVariant::WithoutOf,
        }
    }
}

impl Strategy {
    fn strategy(self) -> ScoringStrategy {
        match self {
            Strategy::Head => ScoringStrategy::HeadWord,
            Strategy::Phrase => ScoringStrategy::FullPhrase,
            Strategy::FirstPiece => ScoringStrategy::FirstPieceOnly,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Convert(a) => commands::convert(&a.input, &a.output, a.log.as_deref()),
        Command::Attention(a) => commands::attention(commands::AttentionRun {
            corpus: a.probe.corpus,
            backend: a.probe.backend,
            out: a.probe.out,
            jobs: a.probe.jobs as usize,
            subset: a.probe.subset,
            mode: a.mode.input_mode(),
            heads: a.select_heads,
            definition: bridgeprobe::attention::SignalDefinition {
                denominator: match a.w2_denominator {
                    W2Denominator::Pieces => bridgeprobe::attention::Denominator::Pieces,
                    W2Denominator::Words => bridgeprobe::attention::Denominator::Words,
                },
                include_target: !a.w2_exclude_target,
            },
            seed: a.seed,
            svg: a.svg,
        }),
        Command::Cloze(a) => {
            if a.perturb && matches!(a.of, Of::Without) {
                return Err(CliError::usage("--perturb keeps the \"of\" indicator; it requires --of with"));
            }
            commands::cloze(commands::ClozeRun {
                corpus: a.probe.corpus,
                backend: a.probe.backend,
                out: a.probe.out,
                jobs: a.probe.jobs as usize,
                subset: a.probe.subset,
                config: bridgeprobe::cloze::ClozeConfig {
                    context_scope: a.context_scope,
                    candidate_scope: a.candidate_scope,
                    of_variant: a.of.variant(),
                    perturb: a.perturb,
                    seed: a.seed,
                    strategy: a.strategy.strategy(),
                },
            })
        }
        Command::Eval(a) => commands::eval(&a.preds, a.skipped.as_deref(), &a.breakdown, a.out.as_deref()),
        Command::Report(a) => {
            if a.signals.is_none() && a.preds.is_none() {
                return Err(CliError::usage("report needs --signals and/or --preds"));
            }
            commands::report(a.signals.as_deref(), a.preds.as_deref(), &a.out, a.svg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            CliError::usage(e.to_string().trim()).report();
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(e.exit_code())
        }
    }
}
