//! End-to-end augmentation runs.
//!
//! For every source sentence with at least one entity, `multiple` drafts are derived by
//! cycling through the configured ops, each draft is decoded into up to `B` texts, and
//! the best text that can be marked with the draft's entities is kept. The output file
//! holds the original corpus followed by the augmented sentences grouped by op.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, AnnotatedSentence, CorpusError, TaskKind};
use crate::decoder::{self, DecodeConfig, DecodeMode};
use crate::entity_ops::{self, AugOp, EntityListDraft, EntityPool};
use crate::marker::{self, MarkOutcome};
use crate::scorer::{self, Endpoint, ExternalScorer, Scorer};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error("input sentence {sentence} is not valid for {kind:?} NER: {violation}")]
    InvalidInput {
        sentence: usize,
        kind: TaskKind,
        violation: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scorer(#[from] scorer::ScoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Bio,
    Spans,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bio" => Ok(CorpusFormat::Bio),
            "spans" => Ok(CorpusFormat::Spans),
            other => Err(format!("unknown format `{other}` (expected bio or spans)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerChoice {
    Ngram { order: usize },
    External { endpoint: String, timeout_ms: u64 },
}

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

impl ScorerChoice {
    /// Parses `ngram:ORDER` or `external:URL`.
    pub fn parse(spec: &str, timeout_ms: u64) -> Result<Self, String> {
        match spec.split_once(':') {
            Some(("ngram", order)) => order
                .parse()
                .map(|order| ScorerChoice::Ngram { order })
                .map_err(|_| format!("bad n-gram order in `{spec}`")),
            Some(("external", endpoint)) if !endpoint.is_empty() => Ok(ScorerChoice::External {
                endpoint: endpoint.to_owned(),
                timeout_ms,
            }),
            _ => Err(format!("unknown scorer `{spec}` (expected ngram:ORDER or external:URL)")),
        }
    }
}

impl fmt::Display for ScorerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerChoice::Ngram { order } => write!(f, "ngram:{order}"),
            ScorerChoice::External { endpoint, .. } => write!(f, "external:{endpoint}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub format: CorpusFormat,
    pub task: TaskKind,
    pub ops: Vec<AugOp>,
    pub multiple: usize,
    pub beam_width: usize,
    pub gamma: f64,
    pub max_len: usize,
    pub mode: DecodeMode,
    pub seed: u64,
    pub scorer: ScorerChoice,
    pub output: PathBuf,
    /// Worker threads; also bounds in-flight external requests. Never affects output.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            input: input.into(),
            format: CorpusFormat::Spans,
            task: TaskKind::Flat,
            ops: vec![AugOp::All],
            multiple: 3,
            beam_width: decoder::DEFAULT_BEAM_WIDTH,
            gamma: decoder::DEFAULT_GAMMA,
            max_len: decoder::DEFAULT_MAX_LEN,
            mode: DecodeMode::DiverseBeam,
            seed: 0,
            scorer: ScorerChoice::Ngram {
                order: scorer::DEFAULT_ORDER,
            },
            output: output.into(),
            threads: None,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam_width: self.beam_width,
            gamma: self.gamma,
            max_len: self.max_len,
            mode: self.mode,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.multiple == 0 {
            return Err(PipelineError::Config("multiple must be at least 1".into()));
        }
        if self.ops.is_empty() {
            return Err(PipelineError::Config("at least one op is required".into()));
        }
        if self.format == CorpusFormat::Bio && self.task != TaskKind::Flat {
            return Err(PipelineError::Config(
                "the BIO format only carries flat entities".into(),
            ));
        }
        if let ScorerChoice::Ngram { order: 0 } = self.scorer {
            return Err(PipelineError::Config("n-gram order must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(PipelineError::Config("threads must be at least 1".into()));
        }
        self.decode_config()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Concrete op for each replica slot, `All` expanded round-robin.
    pub fn op_cycle(&self) -> Vec<AugOp> {
        self.ops.iter().flat_map(|op| op.expand()).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpStats {
    /// Replica slots assigned to the op.
    pub attempts: usize,
    /// The op produced no draft (no pool candidate, or too few entities).
    pub skipped_no_candidate: usize,
    /// The draft's condition could not be serialized.
    pub invalid_condition: usize,
    pub drafts: usize,
    pub scorer_failures: usize,
    pub decoded: usize,
    pub marked: usize,
    pub rejected_mismatch: usize,
    /// Emitted sentences where an entity mention occurred more than once.
    pub multi_occurrence: usize,
}

impl OpStats {
    fn add(&mut self, other: &OpStats) {
        self.attempts += other.attempts;
        self.skipped_no_candidate += other.skipped_no_candidate;
        self.invalid_condition += other.invalid_condition;
        self.drafts += other.drafts;
        self.scorer_failures += other.scorer_failures;
        self.decoded += other.decoded;
        self.marked += other.marked;
        self.rejected_mismatch += other.rejected_mismatch;
        self.multi_occurrence += other.multi_occurrence;
    }

    /// Every attempt is accounted for exactly once.
    pub fn is_consistent(&self) -> bool {
        self.attempts == self.skipped_no_candidate + self.invalid_condition + self.drafts
            && self.drafts == self.decoded + self.scorer_failures
            && self.decoded == self.marked + self.rejected_mismatch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub op: AugOp,
    pub stats: OpStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub seed: u64,
    pub input_sentences: usize,
    pub output_sentences: usize,
    pub per_op: Vec<OpReport>,
    pub totals: OpStats,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunReport {
    pub fn is_consistent(&self) -> bool {
        let mut sum = OpStats::default();
        for r in &self.per_op {
            if !r.stats.is_consistent() {
                return false;
            }
            sum.add(&r.stats);
        }
        sum == self.totals
            && self.totals.is_consistent()
            && self.output_sentences == self.input_sentences + self.totals.marked
    }

    pub fn to_json(&self) -> String {
        let mut json = serde_json::to_string(self).expect("reports always serialize");
        json.push('\n');
        json
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRun {
    pub gamma: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub runs: Vec<GammaRun>,
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        let mut json = serde_json::to_string(self).expect("reports always serialize");
        json.push('\n');
        json
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one (sentence, op, replica) job, independent of scheduling.
pub fn job_seed(global: u64, sentence: usize, op: AugOp, replica: usize) -> u64 {
    [sentence as u64, op as u64, replica as u64]
        .into_iter()
        .fold(splitmix64(global), |acc, v| splitmix64(acc ^ v))
}

pub fn read_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<AnnotatedSentence>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_owned(),
        source,
    })?;
    let parsed = match format {
        CorpusFormat::Bio => corpus::parse_bio(&text),
        CorpusFormat::Spans => corpus::parse_spans(&text),
    };
    parsed.map_err(|source| PipelineError::Corpus {
        path: path.to_owned(),
        source,
    })
}

pub fn write_corpus(
    path: &Path,
    format: CorpusFormat,
    sentences: &[AnnotatedSentence],
) -> Result<(), PipelineError> {
    let text = match format {
        CorpusFormat::Bio => corpus::emit_bio(sentences).map_err(|source| PipelineError::Corpus {
            path: path.to_owned(),
            source,
        })?,
        CorpusFormat::Spans => corpus::emit_spans(sentences),
    };
    fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Entity-to-text training pairs from a corpus; sentences whose mentions look like tags are skipped.
pub fn training_pairs(sentences: &[AnnotatedSentence]) -> Vec<(entity_ops::ConditionSequence, Vec<String>)> {
    sentences
        .iter()
        .filter_map(|s| {
            entity_ops::serialize_condition(&EntityListDraft::from_sentence(s))
                .ok()
                .map(|c| (c, s.tokens.clone()))
        })
        .collect()
}

fn build_scorer(
    config: &PipelineConfig,
    sentences: &[AnnotatedSentence],
) -> Result<Box<dyn Scorer>, PipelineError> {
    match &config.scorer {
        ScorerChoice::Ngram { order } => {
            Ok(Box::new(scorer::train_ngram(&training_pairs(sentences), *order)?))
        }
        ScorerChoice::External {
            endpoint,
            timeout_ms,
        } => {
            let client = ExternalScorer::new(
                Endpoint::parse(endpoint)?,
                Duration::from_millis(*timeout_ms),
            );
            client.probe()?;
            Ok(Box::new(client))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    sentence: usize,
    replica: usize,
    op: AugOp,
}

enum JobResult {
    Skipped,
    InvalidCondition,
    ScorerFailure,
    Rejected,
    Marked {
        sentence: AnnotatedSentence,
        multi_occurrence: usize,
    },
}

struct Context<'a> {
    sentences: &'a [AnnotatedSentence],
    pool: &'a EntityPool,
    scorer: &'a dyn Scorer,
    decode: DecodeConfig,
    task: TaskKind,
    seed: u64,
}

impl Context<'_> {
    fn process(&self, job: Job) -> JobResult {
        let source = EntityListDraft::from_sentence(&self.sentences[job.sentence]);
        let mut rng = ChaCha8Rng::seed_from_u64(job_seed(self.seed, job.sentence, job.op, job.replica));
        let Ok(draft) = entity_ops::apply(job.op, &source, self.pool, &mut rng) else {
            return JobResult::Skipped;
        };
        let Ok(condition) = entity_ops::serialize_condition(&draft) else {
            return JobResult::InvalidCondition;
        };
        let Ok(hypotheses) = decoder::decode(self.scorer, &condition, &self.decode) else {
            return JobResult::ScorerFailure;
        };
        hypotheses
            .iter()
            .filter(|h| h.finished)
            .find_map(|h| match marker::mark(&h.tokens, &draft, self.task) {
                MarkOutcome::Marked {
                    sentence,
                    multi_occurrence,
                } => Some(JobResult::Marked {
                    sentence,
                    multi_occurrence,
                }),
                MarkOutcome::Rejected(_) => None,
            })
            .unwrap_or(JobResult::Rejected)
    }
}

/// Runs the configured augmentation and writes the augmented corpus to `config.output`.
pub fn run(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let started = Instant::now();

    let sentences = read_corpus(&config.input, config.format)?;
    for (i, sentence) in sentences.iter().enumerate() {
        if let Some(v) = corpus::validate(sentence, config.task).first() {
            return Err(PipelineError::InvalidInput {
                sentence: i,
                kind: config.task,
                violation: v.to_string(),
            });
        }
    }
    let pool = entity_ops::build_pool(&sentences);
    let scorer = build_scorer(config, &sentences)?;

    let cycle = config.op_cycle();
    let jobs: Vec<Job> = sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.entities.is_empty())
        .flat_map(|(sentence, _)| {
            let cycle = &cycle;
            (0..config.multiple).map(move |replica| Job {
                sentence,
                replica,
                op: cycle[replica % cycle.len()],
            })
        })
        .collect();

    let ctx = Context {
        sentences: &sentences,
        pool: &pool,
        scorer: scorer.as_ref(),
        decode: config.decode_config(),
        task: config.task,
        seed: config.seed,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = config.threads {
        builder = builder.num_threads(threads);
    }
    let workers = builder
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<JobResult> = workers.install(|| jobs.par_iter().map(|&job| ctx.process(job)).collect());

    let mut order: Vec<AugOp> = Vec::new();
    for op in &cycle {
        if !order.contains(op) {
            order.push(*op);
        }
    }
    let mut per_op: Vec<OpReport> = order
        .iter()
        .map(|&op| OpReport {
            op,
            stats: OpStats::default(),
        })
        .collect();
    let mut grouped: Vec<Vec<AnnotatedSentence>> = vec![Vec::new(); order.len()];

    for (job, result) in jobs.iter().zip(results) {
        let slot = order.iter().position(|&op| op == job.op).expect("op in cycle");
        let stats = &mut per_op[slot].stats;
        stats.attempts += 1;
        match result {
            JobResult::Skipped => stats.skipped_no_candidate += 1,
            JobResult::InvalidCondition => stats.invalid_condition += 1,
            JobResult::ScorerFailure => {
                stats.drafts += 1;
                stats.scorer_failures += 1;
            }
            JobResult::Rejected => {
                stats.drafts += 1;
                stats.decoded += 1;
                stats.rejected_mismatch += 1;
            }
            JobResult::Marked {
                sentence,
                multi_occurrence,
            } => {
                stats.drafts += 1;
                stats.decoded += 1;
                stats.marked += 1;
                stats.multi_occurrence += usize::from(multi_occurrence > 0);
                grouped[slot].push(sentence);
            }
        }
    }

    let mut output = sentences.clone();
    output.extend(grouped.into_iter().flatten());
    write_corpus(&config.output, config.format, &output)?;

    let mut totals = OpStats::default();
    for r in &per_op {
        totals.add(&r.stats);
    }
    Ok(RunReport {
        config: config.clone(),
        seed: config.seed,
        input_sentences: sentences.len(),
        output_sentences: output.len(),
        per_op,
        totals,
        wall_time: started.elapsed(),
    })
}

/// `out.jsonl` with γ = 10 becomes `out.gamma-10.jsonl`.
pub fn gamma_output_path(output: &Path, gamma: f64) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match output.extension() {
        Some(ext) => format!("{stem}.gamma-{gamma}.{}", ext.to_string_lossy()),
        None => format!("{stem}.gamma-{gamma}"),
    };
    output.with_file_name(name)
}

/// One full run per γ with the same seed; outputs go to [`gamma_output_path`].
pub fn sweep_gamma(config: &PipelineConfig, gammas: &[f64]) -> Result<SweepReport, PipelineError> {
    if gammas.is_empty() {
        return Err(PipelineError::Config("gamma sweep needs at least one value".into()));
    }
    let runs = gammas
        .iter()
        .map(|&gamma| {
            let mut cfg = config.clone();
            cfg.gamma = gamma;
            cfg.output = gamma_output_path(&config.output, gamma);
            run(&cfg).map(|report| GammaRun { gamma, report })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport { runs })
}
