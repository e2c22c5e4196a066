#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ner_augment::scorer::{logsumexp, ScoreError, ScoreRequest, ScoreResponse, Scorer, EOS};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

/// Deterministic pseudo-random next-token distributions, a function of (seed, prefix).
///
/// With `coarse` set, logits are integers in [-2, 2] so sibling ties are common.
pub struct RandomScorer {
    pub vocab: Vec<String>,
    pub seed: u64,
    pub coarse: bool,
}

impl RandomScorer {
    /// `size` tokens in total, the last one being the end token.
    pub fn new(size: usize, seed: u64, coarse: bool) -> Self {
        assert!(size >= 2);
        let mut vocab: Vec<String> = (0..size - 1).map(|i| format!("w{i}")).collect();
        vocab.push(EOS.to_owned());
        RandomScorer { vocab, seed, coarse }
    }
}

impl Scorer for RandomScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        let mut hasher = DefaultHasher::new();
        self.seed.hash(&mut hasher);
        request.condition.hash(&mut hasher);
        request.prefix.hash(&mut hasher);
        let mut rng = ChaCha8Rng::seed_from_u64(hasher.finish());
        let logits: Vec<f64> = self
            .vocab
            .iter()
            .map(|_| {
                if self.coarse {
                    rng.gen_range(-2i32..=2) as f64
                } else {
                    rng.gen_range(-3.0..3.0)
                }
            })
            .collect();
        let lse = logsumexp(&logits);
        Ok(ScoreResponse::new(
            self.vocab.clone(),
            logits.iter().map(|l| l - lse).collect(),
            false,
        ))
    }
}

/// Fixed distributions keyed by the space-joined prefix.
pub struct TableScorer {
    pub vocab: Vec<String>,
    pub table: HashMap<String, Vec<f64>>,
    pub fallback: Vec<f64>,
}

impl Scorer for TableScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        let probs = self
            .table
            .get(&request.prefix.join(" "))
            .unwrap_or(&self.fallback);
        Ok(ScoreResponse::new(
            self.vocab.clone(),
            probs.iter().map(|p| p.ln()).collect(),
            false,
        ))
    }
}

/// The British/German farmer/market construction.
///
/// Step 1 prefers British (0.6) over German (0.3). British continues with farmer 0.5 /
/// market 0.4, German with farmer 0.6 / market 0.3. Afterwards the end token has 0.96.
/// Greedy gives "British farmer"; plain beam B=2 keeps {British farmer, British market};
/// the rank penalty at γ=1 swaps British market (ln .24 − 2) for German farmer (ln .18 − 1).
pub fn farmer_scorer() -> TableScorer {
    let mut table = HashMap::new();
    table.insert(String::new(), vec![0.6, 0.3, 0.04, 0.04, 0.02]);
    table.insert("British".into(), vec![0.03, 0.03, 0.5, 0.4, 0.04]);
    table.insert("German".into(), vec![0.03, 0.03, 0.6, 0.3, 0.04]);
    TableScorer {
        vocab: ["British", "German", "farmer", "market", EOS]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        table,
        fallback: vec![0.01, 0.01, 0.01, 0.01, 0.96],
    }
}

/// Line-oriented mock scorer server. `reply` maps each request line to one reply line;
/// returning `None` closes the connection without answering.
pub struct MockServer {
    pub addr: String,
    pub requests: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start<F>(reply: F) -> MockServer
    where
        F: Fn(&serde_json::Value) -> Option<String> + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().unwrap().to_string();
        let requests = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&requests);
        let reply = Arc::new(reply);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let reply = Arc::clone(&reply);
                let counter = Arc::clone(&counter);
                thread::spawn(move || serve_one(stream, reply.as_ref(), &counter));
            }
        });
        MockServer { addr, requests }
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

fn serve_one<F>(stream: TcpStream, reply: &F, counter: &AtomicUsize)
where
    F: Fn(&serde_json::Value) -> Option<String>,
{
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    counter.fetch_add(1, Ordering::SeqCst);
    let request: serde_json::Value = serde_json::from_str(&line).unwrap_or(serde_json::Value::Null);
    if let Some(answer) = reply(&request) {
        let mut stream = stream;
        let _ = stream.write_all(answer.as_bytes());
        let _ = stream.write_all(b"\n");
    }
}

pub fn full_reply(tokens: &[&str], logprobs: &[f64]) -> String {
    serde_json::json!({"tokens": tokens, "logprobs": logprobs, "truncated": false}).to_string()
}

/// Reply that puts almost all mass on the next surface token of the condition, then the
/// end token: the generated text is exactly the entity mentions in order.
pub fn copy_condition_reply(request: &serde_json::Value) -> Option<String> {
    let strings = |key: &str| -> Vec<String> {
        request[key]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_owned)).collect())
            .unwrap_or_default()
    };
    let condition = strings("condition");
    let prefix = strings("prefix");
    let surface: Vec<String> = condition
        .into_iter()
        .filter(|t| !(t.starts_with('[') && t.ends_with(']')))
        .collect();
    let next = surface.get(prefix.len()).cloned().unwrap_or_else(|| EOS.to_owned());

    let mut tokens: Vec<String> = vec![EOS.to_owned(), "<unk>".to_owned()];
    if next != EOS {
        tokens.push(next.clone());
    }
    let logprobs: Vec<f64> = tokens
        .iter()
        .map(|t| if *t == next { 0.98f64.ln() } else { (0.02f64 / (tokens.len() - 1) as f64).ln() })
        .collect();
    let lse = logsumexp(&logprobs);
    let logprobs: Vec<f64> = logprobs.iter().map(|l| l - lse).collect();
    Some(serde_json::json!({"tokens": tokens, "logprobs": logprobs, "truncated": false}).to_string())
}
