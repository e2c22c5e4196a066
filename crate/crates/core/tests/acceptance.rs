//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero if any fail.
//!
//! Run with `cargo test -p ner-augment --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{farmer_scorer, fixture, words, RandomScorer};
use ner_augment::corpus::{
    emit_bio, emit_spans, parse_bio, parse_spans, validate, AnnotatedSentence, TaskKind,
};
use ner_augment::decoder::{decode, oracle_decode, DecodeConfig, Hypothesis};
use ner_augment::entity_ops::{
    apply, build_pool, serialize_condition, swap_positions, AugOp, ConditionSequence, DraftItem,
    EntityListDraft, EntityPool,
};
use ner_augment::marker::{mark, MarkOutcome};
use ner_augment::pipeline::{self, CorpusFormat, PipelineConfig};
use ner_augment::scorer::{
    perplexity, train_ngram, ScoreRequest, Scorer, UniformScorer, DEFAULT_ORDER, EOS,
};

/// Score agreement between the decoder and the oracle.
const SCORE_TOL: f64 = 1e-9;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const SWEEP_BUDGET: Duration = Duration::from_secs(120);
const OP_APPLICATIONS: usize = 10_000;
const FUZZED_SENTENCES: usize = 100;
const SWEEP_GAMMAS: [f64; 6] = [1.0, 5.0, 10.0, 25.0, 50.0, 100.0];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn same_hypotheses(a: &[Hypothesis], b: &[Hypothesis], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.tokens == y.tokens
                && x.finished == y.finished
                && (x.raw_score - y.raw_score).abs() <= tol
                && (x.adj_score - y.adj_score).abs() <= tol
        })
}

/// Sum of log-probabilities along a hypothesis path, queried afresh.
fn path_score<S: Scorer>(scorer: &S, cond: &ConditionSequence, h: &Hypothesis) -> f64 {
    let mut total = 0.0;
    let mut targets: Vec<&str> = h.tokens.iter().map(String::as_str).collect();
    if h.finished {
        targets.push(EOS);
    }
    for (i, target) in targets.iter().enumerate() {
        let r = scorer.score(&ScoreRequest::new(cond, &h.tokens[..i])).unwrap();
        total += r.logprob(target).unwrap();
    }
    total
}

fn toy_corpus() -> Vec<AnnotatedSentence> {
    parse_bio(&fs::read_to_string(fixture("toy20.bio")).unwrap()).unwrap()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut cases = 0;
    for size in 2..=6usize {
        for horizon in 1..=4usize {
            for width in 1..=size {
                for (g, gamma) in [0.0, 0.5, 1.0, 10.0].into_iter().enumerate() {
                    let seed = (size * 1000 + horizon * 100 + width * 10 + g) as u64;
                    let scorer = RandomScorer::new(size, seed, seed.is_multiple_of(2));
                    let cond = ConditionSequence::new(words("[T] x [/T]"));
                    let cfg = DecodeConfig::diverse(width, gamma, horizon);
                    let got = decode(&scorer, &cond, &cfg).map_err(|e| e.to_string())?;
                    let want = oracle_decode(&scorer, &cond, &cfg, horizon).map_err(|e| e.to_string())?;
                    ensure(same_hypotheses(&got, &want, SCORE_TOL), || {
                        format!("|V|={size} T={horizon} B={width} γ={gamma}: {got:?} vs oracle {want:?}")
                    })?;
                    for h in &got {
                        let raw = path_score(&scorer, &cond, h);
                        ensure((raw - h.raw_score).abs() <= SCORE_TOL, || {
                            format!("raw score drift on {:?}: {} vs {raw}", h.tokens, h.raw_score)
                        })?;
                    }
                    cases += 1;
                }
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(cases >= 200, || format!("only {cases} cases"))?;
    ensure(elapsed < ORACLE_BUDGET, || format!("took {elapsed:.2?}"))?;
    Ok(format!("{cases} scorers agree with the oracle in {elapsed:.2?}"))
}

fn degeneracies_on<S: Scorer>(name: &str, scorer: &S, conds: &[ConditionSequence], max_len: usize) -> Result<usize, String> {
    let mut checks = 0;
    for cond in conds {
        for width in 1..=4 {
            let beam = decode(scorer, cond, &DecodeConfig::beam(width, max_len)).map_err(|e| e.to_string())?;
            let diverse = decode(scorer, cond, &DecodeConfig::diverse(width, 0.0, max_len)).map_err(|e| e.to_string())?;
            ensure(same_hypotheses(&beam, &diverse, 0.0), || {
                format!("{name}: γ=0 differs from beam at B={width}")
            })?;
            checks += 1;
        }
        let beam1 = decode(scorer, cond, &DecodeConfig::beam(1, max_len)).map_err(|e| e.to_string())?;
        let greedy = decode(scorer, cond, &DecodeConfig::greedy(max_len)).map_err(|e| e.to_string())?;
        ensure(same_hypotheses(&beam1, &greedy, 0.0), || {
            format!("{name}: B=1 differs from greedy: {beam1:?} vs {greedy:?}")
        })?;
        checks += 1;
    }
    Ok(checks)
}

fn criterion_2() -> Outcome {
    let empty = [ConditionSequence::default()];
    let mut checks = degeneracies_on("farmer", &farmer_scorer(), &empty, 6)?;
    for seed in 0..20 {
        let scorer = RandomScorer::new(2 + seed as usize % 5, seed, seed % 3 == 0);
        checks += degeneracies_on("random", &scorer, &empty, 5)?;
    }

    let corpus = toy_corpus();
    let model = train_ngram(&pipeline::training_pairs(&corpus), DEFAULT_ORDER).map_err(|e| e.to_string())?;
    let conds: Vec<ConditionSequence> = corpus
        .iter()
        .filter_map(|s| serialize_condition(&EntityListDraft::from_sentence(s)).ok())
        .take(8)
        .collect();
    checks += degeneracies_on("ngram", &model, &conds, 40)?;
    Ok(format!("{checks} exact equalities (farmer, random, n-gram)"))
}

fn criterion_3() -> Outcome {
    let scorer = farmer_scorer();
    let cond = ConditionSequence::default();
    let texts = |cfg: DecodeConfig| -> Result<Vec<String>, String> {
        let mut out: Vec<String> = decode(&scorer, &cond, &cfg)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|h| h.tokens.join(" "))
            .collect();
        out.sort();
        Ok(out)
    };
    let beam = texts(DecodeConfig::beam(2, 6))?;
    let diverse = texts(DecodeConfig::diverse(2, 1.0, 6))?;
    ensure(beam == ["British farmer", "British market"], || format!("beam gave {beam:?}"))?;
    ensure(diverse == ["British farmer", "German farmer"], || format!("diverse gave {diverse:?}"))?;
    Ok(format!("beam {beam:?}, diverse {diverse:?}"))
}

fn random_draft(pool: &EntityPool, rng: &mut ChaCha8Rng) -> EntityListDraft {
    let types: Vec<_> = pool.types().cloned().collect();
    let len = rng.gen_range(0..=5);
    let mut items: Vec<DraftItem> = Vec::new();
    for _ in 0..len {
        let etype = types.choose(rng).unwrap().clone();
        let surface = pool.get(&etype).choose(rng).unwrap().clone();
        if items.iter().all(|i| i.surface != surface) {
            items.push(DraftItem::new(surface, etype));
        }
    }
    EntityListDraft::new(items)
}

fn check_op(op: AugOp, before: &EntityListDraft, after: &EntityListDraft, pool: &EntityPool) -> Result<(), String> {
    let b = &before.items;
    let a = &after.items;
    let fail = |what: &str| Err(format!("{op}: {what}\n  before {b:?}\n  after  {a:?}"));
    let from_pool = |item: &DraftItem| pool.get(&item.etype).contains(&item.surface);
    match op {
        AugOp::None => {
            if a != b {
                return fail("draft changed");
            }
        }
        AugOp::Add => {
            if a.len() != b.len() + 1 {
                return fail("length not +1");
            }
            let Some(at) = (0..a.len()).find(|&i| i >= b.len() || a[i] != b[i]) else {
                return fail("no insertion");
            };
            if at == 0 || a[at].etype != b[at - 1].etype || a[at + 1..] != b[at..] {
                return fail("not inserted after a same-type entity with order kept");
            }
            if !from_pool(&a[at]) || b.iter().any(|i| i.surface == a[at].surface) {
                return fail("inserted mention not a fresh pool entry");
            }
        }
        AugOp::Delete => {
            if a.len() + 1 != b.len() {
                return fail("length not -1");
            }
            if !(0..b.len()).any(|k| {
                let mut rest = b.clone();
                rest.remove(k);
                rest == *a
            }) {
                return fail("not a single removal with order kept");
            }
        }
        AugOp::Replace => {
            let diff: Vec<usize> = (0..b.len()).filter(|&i| a.get(i) != b.get(i)).collect();
            if a.len() != b.len() || diff.len() != 1 {
                return fail("must change exactly one position");
            }
            let i = diff[0];
            if a[i].etype != b[i].etype || !from_pool(&a[i]) || b.iter().any(|x| x.surface == a[i].surface) {
                return fail("replacement not a fresh same-type pool entry");
            }
        }
        AugOp::Swap => {
            let diff: Vec<usize> = (0..b.len()).filter(|&i| a.get(i) != b.get(i)).collect();
            if a.len() != b.len() || diff.len() != 2 || a[diff[0]] != b[diff[1]] || a[diff[1]] != b[diff[0]] {
                return fail("not an exchange of two positions");
            }
        }
        AugOp::All => unreachable!(),
    }
    Ok(())
}

fn criterion_4() -> Outcome {
    const OPS: [AugOp; 5] = [AugOp::None, AugOp::Add, AugOp::Delete, AugOp::Replace, AugOp::Swap];
    let pool = build_pool(&toy_corpus());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut applied = 0;
    let mut refused = 0;
    let mut swaps = 0;
    for n in 0..OP_APPLICATIONS {
        let op = OPS[n % OPS.len()];
        let draft = random_draft(&pool, &mut rng);
        match apply(op, &draft, &pool, &mut rng) {
            Ok(after) => {
                check_op(op, &draft, &after, &pool)?;
                applied += 1;
            }
            Err(_) => refused += 1,
        }
        if draft.len() >= 2 {
            let i = rng.gen_range(0..draft.len());
            let j = (i + rng.gen_range(1..draft.len())) % draft.len();
            let twice = swap_positions(&swap_positions(&draft, i, j).unwrap(), i, j).unwrap();
            ensure(twice == draft, || format!("swap∘swap({i},{j}) is not the identity"))?;
            swaps += 1;
        }
    }
    Ok(format!(
        "{applied} applied + {refused} refused, 0 violations; {swaps} swap∘swap identities"
    ))
}

fn criterion_5() -> Outcome {
    let gold = parse_spans(&fs::read_to_string(fixture("marking_gold.jsonl")).unwrap()).map_err(|e| e.to_string())?;
    let kinds = [
        TaskKind::Flat,
        TaskKind::Nested,
        TaskKind::Discontinuous,
        TaskKind::Discontinuous,
        TaskKind::Discontinuous,
    ];
    ensure(gold.len() == kinds.len(), || format!("{} gold lines", gold.len()))?;
    for (n, (sentence, kind)) in gold.iter().zip(kinds).enumerate() {
        let draft = EntityListDraft::from_sentence(sentence);
        match mark(&sentence.tokens, &draft, kind) {
            MarkOutcome::Marked { sentence: marked, .. } => {
                ensure(marked == *sentence, || format!("line {}: {:?}", n + 1, marked.entities))?;
            }
            MarkOutcome::Rejected(reason) => return Err(format!("line {}: rejected ({reason})", n + 1)),
        }
    }

    // the generated text dropped one of the conditioning entities
    let draft = EntityListDraft::from_sentence(&gold[0]);
    let noisy = words("EU rejects German call to boycott lamb .");
    ensure(!mark(&noisy, &draft, TaskKind::Flat).is_marked(), || "mismatch accepted".into())?;
    Ok(format!("{} gold sentences reproduced, mismatch rejected", gold.len()))
}

fn fuzz_sentence(rng: &mut ChaCha8Rng, kind: TaskKind) -> AnnotatedSentence {
    const VOCAB: [&str; 8] = ["alpha", "beta", "gamma", "de", "E", "f-g", "\"q\"", "ü"];
    const TYPES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];
    let n = rng.gen_range(1..=12);
    let mut sentence = AnnotatedSentence::new(
        (0..n).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect(),
        Vec::new(),
    );
    match kind {
        TaskKind::Flat => {
            let mut i = 0;
            while i < n {
                if rng.gen_bool(0.3) {
                    let end = rng.gen_range(i..n.min(i + 3));
                    sentence = sentence.with_entity(&[(i, end)], TYPES.choose(rng).unwrap());
                    i = end + 1;
                } else {
                    i += 1;
                }
            }
        }
        _ => {
            let mut seen = Vec::new();
            for _ in 0..rng.gen_range(0..4) {
                let mut spans = Vec::new();
                let mut start = rng.gen_range(0..n);
                while start < n && spans.len() < 3 {
                    let end = rng.gen_range(start..n);
                    spans.push((start, end));
                    start = end + 1 + rng.gen_range(0..3);
                    if rng.gen_bool(0.5) {
                        break;
                    }
                }
                let etype = *TYPES.choose(rng).unwrap();
                if !seen.contains(&(spans.clone(), etype)) {
                    seen.push((spans.clone(), etype));
                    sentence = sentence.with_entity(&spans, etype);
                }
            }
        }
    }
    sentence
}

fn criterion_6() -> Outcome {
    let bio = fs::read_to_string(fixture("toy20.bio")).unwrap();
    let parsed = parse_bio(&bio).map_err(|e| e.to_string())?;
    ensure(emit_bio(&parsed).map_err(|e| e.to_string())? == bio, || "toy20.bio not byte-identical".into())?;

    let spans = fs::read_to_string(fixture("marking_gold.jsonl")).unwrap();
    let parsed = parse_spans(&spans).map_err(|e| e.to_string())?;
    ensure(emit_spans(&parsed) == spans, || "marking_gold.jsonl not byte-identical".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let flat: Vec<_> = (0..FUZZED_SENTENCES).map(|_| fuzz_sentence(&mut rng, TaskKind::Flat)).collect();
    let disc: Vec<_> = (0..FUZZED_SENTENCES)
        .map(|_| fuzz_sentence(&mut rng, TaskKind::Discontinuous))
        .collect();
    for s in flat.iter().chain(&disc) {
        let kind = if s.entities.iter().any(|e| e.is_multi_span()) {
            TaskKind::Discontinuous
        } else {
            TaskKind::Nested
        };
        ensure(validate(s, kind).is_empty(), || format!("fuzzer produced invalid {s:?}"))?;
    }
    let back = parse_bio(&emit_bio(&flat).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(back == flat, || "fuzzed BIO roundtrip lost information".into())?;
    let back = parse_spans(&emit_spans(&disc)).map_err(|e| e.to_string())?;
    ensure(back == disc, || "fuzzed span roundtrip lost information".into())?;
    Ok(format!("fixtures byte-identical, {FUZZED_SENTENCES} BIO + {FUZZED_SENTENCES} span sentences lossless"))
}

fn criterion_7() -> Outcome {
    let uniform = UniformScorer::new(["a", "b", "c", EOS]);
    let ppl = perplexity(&uniform, &ConditionSequence::default(), &words("a b c a b")).map_err(|e| e.to_string())?;
    ensure(ppl == 4.0, || format!("uniform perplexity {ppl:?}"))?;

    // Bigram over "[T] a [/T] <sep> <s> a b </s>": Pr(a|<s>) = 1/1.325,
    // Pr(b|a) = 0.5/1.3, Pr(</s>|b) = 1/1.35.
    let cond = ConditionSequence::new(words("[T] a [/T]"));
    let model = train_ngram(&[(cond.clone(), words("a b"))], 2).map_err(|e| e.to_string())?;
    let expected = (-((1.0f64 / 1.325).ln() + (0.5f64 / 1.3).ln() + (1.0f64 / 1.35).ln()) / 3.0).exp();
    let got = perplexity(&model, &cond, &words("a b")).map_err(|e| e.to_string())?;
    ensure((got - expected).abs() <= 1e-9, || format!("bigram toy {got} vs {expected}"))?;
    Ok(format!("uniform = {ppl}, bigram toy = {got:.12}"))
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("augmented.bio");
    let mut config = PipelineConfig::new(fixture("toy20.bio"), &out);
    config.format = CorpusFormat::Bio;

    let run_once = || -> Result<(String, String), String> {
        let report = pipeline::run(&config).map_err(|e| e.to_string())?;
        ensure(report.is_consistent(), || format!("inconsistent report {report:?}"))?;
        ensure(report.input_sentences == 20, || format!("{} input sentences", report.input_sentences))?;
        ensure(report.totals.marked <= 3 * 20, || format!("{} augmented sentences", report.totals.marked))?;
        Ok((fs::read_to_string(&out).map_err(|e| e.to_string())?, report.to_json()))
    };
    let first = run_once()?;
    let second = run_once()?;
    ensure(first == second, || "two runs with the same seed differ".into())?;
    let marked: serde_json::Value = serde_json::from_str(&first.1).unwrap();
    let marked = marked["totals"]["marked"].clone();

    let started = Instant::now();
    let sweep = pipeline::sweep_gamma(&config, &SWEEP_GAMMAS).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(sweep.runs.len() == SWEEP_GAMMAS.len(), || "missing sweep runs".into())?;
    ensure(sweep.runs.iter().all(|r| r.report.is_consistent()), || "inconsistent sweep report".into())?;
    ensure(elapsed < SWEEP_BUDGET, || format!("sweep took {elapsed:.2?}"))?;
    let per_gamma: BTreeMap<String, usize> = sweep
        .runs
        .iter()
        .map(|r| (format!("{}", r.gamma), r.report.totals.marked))
        .collect();
    Ok(format!("{marked} augmented, deterministic; sweep {per_gamma:?} in {elapsed:.2?}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("decoder matches oracle", criterion_1),
        ("degenerate configurations", criterion_2),
        ("beam vs diverse worked example", criterion_3),
        ("entity op invariants", criterion_4),
        ("marking reproduces gold spans", criterion_5),
        ("format roundtrips", criterion_6),
        ("perplexity", criterion_7),
        ("end-to-end toy run", criterion_8),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", n + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
