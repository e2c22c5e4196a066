use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use ner_augment::corpus::TaskKind;
use ner_augment::decoder::DecodeMode;
use ner_augment::entity_ops::AugOp;
use ner_augment::pipeline::{self, CorpusFormat, PipelineConfig, ScorerChoice, DEFAULT_TIMEOUT_MS};

/// Augment an NER corpus by perturbing entity lists and generating matching text.
#[derive(Debug, Parser)]
#[command(name = "augment", version)]
struct Args {
    /// Input corpus.
    #[arg(long)]
    input: PathBuf,
    /// Input (and output) format: bio or spans.
    #[arg(long, default_value = "spans")]
    format: CorpusFormat,
    /// flat, nested or disc.
    #[arg(long, default_value = "flat", value_parser = parse_task)]
    task: TaskKind,
    /// Comma-separated ops: none, add, delete, replace, swap, all.
    #[arg(long, default_value = "all", value_delimiter = ',')]
    ops: Vec<AugOp>,
    /// Augmented drafts attempted per source sentence.
    #[arg(long, default_value_t = 3)]
    multiple: usize,
    #[arg(long, default_value_t = 3)]
    beam_width: usize,
    /// Rank penalty weight for diverse beam search.
    #[arg(long, default_value_t = 10.0)]
    gamma: f64,
    #[arg(long, default_value_t = 512)]
    max_len: usize,
    /// greedy, beam or diverse.
    #[arg(long, default_value = "diverse", value_parser = parse_mode)]
    decode: DecodeMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// ngram:ORDER or external:HOST:PORT (optionally tcp://HOST:PORT).
    #[arg(long, default_value = "ngram:3")]
    scorer: String,
    /// Per-request timeout for external scorers.
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_MS)]
    timeout_ms: u64,
    /// Worker threads (bounds in-flight external requests).
    #[arg(long)]
    threads: Option<usize>,
    /// Output corpus. With --sweep-gamma, one file per value is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the JSON run report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Comma-separated gamma values; runs once per value with the same seed.
    #[arg(long, value_delimiter = ',')]
    sweep_gamma: Option<Vec<f64>>,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    match s {
        "flat" => Ok(TaskKind::Flat),
        "nested" => Ok(TaskKind::Nested),
        "disc" | "discontinuous" => Ok(TaskKind::Discontinuous),
        other => Err(format!("unknown task `{other}` (expected flat, nested or disc)")),
    }
}

fn parse_mode(s: &str) -> Result<DecodeMode, String> {
    match s {
        "greedy" => Ok(DecodeMode::Greedy),
        "beam" => Ok(DecodeMode::Beam),
        "diverse" => Ok(DecodeMode::DiverseBeam),
        other => Err(format!("unknown decode mode `{other}`")),
    }
}

fn execute(args: Args) -> Result<(), Box<dyn std::error::Error>> {
    let scorer = ScorerChoice::parse(&args.scorer, args.timeout_ms)?;
    let config = PipelineConfig {
        input: args.input,
        format: args.format,
        task: args.task,
        ops: args.ops,
        multiple: args.multiple,
        beam_width: args.beam_width,
        gamma: args.gamma,
        max_len: args.max_len,
        mode: args.decode,
        seed: args.seed,
        scorer,
        output: args.out,
        threads: args.threads,
    };

    let json = match args.sweep_gamma {
        Some(gammas) => {
            let sweep = pipeline::sweep_gamma(&config, &gammas)?;
            for run in &sweep.runs {
                let t = run.report.totals;
                eprintln!(
                    "gamma {}: {} marked, {} rejected, {} skipped ({:.2?})",
                    run.gamma, t.marked, t.rejected_mismatch, t.skipped_no_candidate, run.report.wall_time
                );
            }
            sweep.to_json()
        }
        None => {
            let report = pipeline::run(&config)?;
            for r in &report.per_op {
                eprintln!(
                    "{:>8}: {} attempts, {} marked, {} rejected, {} skipped",
                    r.op, r.stats.attempts, r.stats.marked, r.stats.rejected_mismatch, r.stats.skipped_no_candidate
                );
            }
            eprintln!(
                "wrote {} sentences ({} original) in {:.2?}",
                report.output_sentences, report.input_sentences, report.wall_time
            );
            report.to_json()
        }
    };
    match args.report {
        Some(path) => std::fs::write(&path, json).map_err(|e| format!("{}: {e}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
