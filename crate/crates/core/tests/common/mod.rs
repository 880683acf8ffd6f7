//! Test support: a scripted fake chat-completion server and reference
//! implementations that share no code with the library.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use eka::corpus::{Corpus, EntitySchema, EntityType, Tag, TaggedSentence, Token};
use eka::llm::{MockBackend, MockScenario};
use eka::rng::SplitMix64;
use serde_json::{json, Value};

// ---------------------------------------------------------------------------
// Fake server

pub type Handler = Arc<dyn Fn(&Value) -> (u16, String) + Send + Sync>;

struct State {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    script: Mutex<VecDeque<(u16, String)>>,
    handler: Option<Handler>,
    delay: Duration,
    stop: AtomicBool,
}

/// HTTP/1.1 server on an ephemeral localhost port. Answers from the script
/// first, then from the handler, then with 500.
pub struct FakeServer {
    pub url: String,
    addr: std::net::SocketAddr,
    state: Arc<State>,
}

pub fn chat_body(content: &str) -> String {
    json!({
        "id": "chatcmpl-test",
        "object": "chat.completion",
        "created": 1_700_000_000u64,
        "model": "fake",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }],
        "usage": {"prompt_tokens": 1, "completion_tokens": 1, "total_tokens": 2}
    })
    .to_string()
}

/// Answers every prompt with the built-in mock scenario (sample 0).
pub fn mock_handler(seed: u64) -> Handler {
    let mock = MockBackend::new(MockScenario::eka_default(), seed).unwrap();
    Arc::new(move |body: &Value| {
        let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
        match mock.respond(prompt, 0) {
            Ok(text) => (200, chat_body(&text)),
            Err(e) => (400, json!({"error": e.to_string()}).to_string()),
        }
    })
}

impl FakeServer {
    pub fn scripted(script: Vec<(u16, String)>) -> Self {
        Self::start(script, None, Duration::ZERO)
    }

    pub fn with_handler(handler: Handler, delay: Duration) -> Self {
        Self::start(Vec::new(), Some(handler), delay)
    }

    fn start(script: Vec<(u16, String)>, handler: Option<Handler>, delay: Duration) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let state = Arc::new(State {
            requests: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            script: Mutex::new(script.into()),
            handler,
            delay,
            stop: AtomicBool::new(false),
        });
        let st = Arc::clone(&state);
        thread::spawn(move || {
            for stream in listener.incoming() {
                if st.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let st = Arc::clone(&st);
                thread::spawn(move || serve(stream, &st));
            }
        });
        Self {
            url: format!("http://{addr}/v1"),
            addr,
            state,
        }
    }

    pub fn requests(&self) -> usize {
        self.state.requests.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.state.peak.load(Ordering::SeqCst)
    }
}

impl Drop for FakeServer {
    fn drop(&mut self) {
        self.state.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

fn serve(stream: TcpStream, st: &State) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    st.requests.fetch_add(1, Ordering::SeqCst);
    let now = st.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    st.peak.fetch_max(now, Ordering::SeqCst);

    let scripted = st.script.lock().unwrap().pop_front();
    let (status, payload) = match scripted {
        Some(r) => r,
        None => match &st.handler {
            Some(h) => {
                let v: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                h(&v)
            }
            None => (500, "{\"error\":\"script exhausted\"}".to_string()),
        },
    };
    if !st.delay.is_zero() {
        thread::sleep(st.delay);
    }
    st.in_flight.fetch_sub(1, Ordering::SeqCst);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} Status\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = stream.flush();
}

// ---------------------------------------------------------------------------
// Reference: k-shot sampling

pub struct ReplayOutcome {
    pub chosen: Vec<usize>,
    pub counters: Vec<usize>,
    pub satisfied: bool,
}

/// Literal replay of the greedy k-shot loop. `mentions[i]` lists the type of
/// every mention in sentence `i`; `order` is the visiting order.
pub fn replay_kshot(
    mentions: &[Vec<String>],
    types: &[String],
    order: &[usize],
    k: usize,
    alpha: f64,
) -> ReplayOutcome {
    let mut counters = vec![0usize; types.len()];
    let mut chosen = Vec::new();
    for &i in order {
        let mut delta = vec![0usize; types.len()];
        for m in &mentions[i] {
            for (c, t) in types.iter().enumerate() {
                if t == m {
                    delta[c] += 1;
                }
            }
        }
        let mut fits = true;
        for c in 0..types.len() {
            if (counters[c] + delta[c]) as f64 > alpha * k as f64 {
                fits = false;
            }
        }
        if fits {
            chosen.push(i);
            for c in 0..types.len() {
                counters[c] += delta[c];
            }
        }
        let mut done = true;
        for c in 0..types.len() {
            if counters[c] < k {
                done = false;
            }
        }
        if done {
            break;
        }
    }
    let satisfied = counters.iter().all(|&c| c >= k);
    ReplayOutcome {
        chosen,
        counters,
        satisfied,
    }
}

// ---------------------------------------------------------------------------
// Reference: span scoring

/// Every `(start, end, type)` window that is a maximal B-X I-X* run.
pub fn naive_spans(tags: &[String]) -> Vec<(usize, usize, String)> {
    let n = tags.len();
    let mut out = Vec::new();
    for start in 0..n {
        for end in start + 1..=n {
            let Some(ty) = tags[start].strip_prefix("B-") else {
                continue;
            };
            let inside = format!("I-{ty}");
            let body_ok = tags[start + 1..end].iter().all(|t| *t == inside);
            let closed = end == n || tags[end] != inside;
            if body_ok && closed {
                out.push((start, end, ty.to_string()));
            }
        }
    }
    out
}

/// Per-type (tp, fp, fn) by comparing every gold span with every
/// predicted span.
pub fn naive_counts(gold: &[Vec<String>], pred: &[Vec<String>]) -> BTreeMap<String, (u64, u64, u64)> {
    let mut out: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let gs = naive_spans(g);
        let ps = naive_spans(p);
        for s in &gs {
            let e = out.entry(s.2.clone()).or_default();
            if ps.contains(s) {
                e.0 += 1;
            } else {
                e.2 += 1;
            }
        }
        for s in &ps {
            let e = out.entry(s.2.clone()).or_default();
            if !gs.contains(s) {
                e.1 += 1;
            }
        }
    }
    out
}

/// (precision, recall, f1) with F1 written as 2tp / (2tp + fp + fn).
pub fn naive_prf(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if tp == 0 { 0.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
    (p, r, f)
}

pub fn tag_strings(s: &TaggedSentence) -> Vec<String> {
    s.tags().map(|t| t.to_string()).collect()
}

// ---------------------------------------------------------------------------
// Reference: surface scan

fn padded_words(text: &str) -> String {
    let words: Vec<String> = text
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .collect();
    format!(" {} ", words.join(" "))
}

/// Whether `surface` occurs in `text` as whole words, ignoring case and
/// punctuation at word edges.
pub fn text_mentions(text: &str, surface: &str) -> bool {
    let needle = padded_words(surface);
    !needle.trim().is_empty() && padded_words(text).contains(&needle)
}

fn words(text: &str) -> Vec<String> {
    padded_words(text).split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect()
}

fn windows_of(hay: &[String], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| hay[i..i + needle.len()] == *needle)
        .collect()
}

/// Pooled surfaces (other than `target`) with an occurrence in `text` that
/// does not lie entirely inside an occurrence of `target`.
pub fn foreign_mentions<'a>(text: &str, target: &str, pool: &'a [String]) -> Vec<&'a str> {
    let hay = words(text);
    let t = words(target);
    let target_at = windows_of(&hay, &t);
    pool.iter()
        .map(String::as_str)
        .filter(|s| words(s) != t)
        .filter(|s| {
            let w = words(s);
            windows_of(&hay, &w)
                .into_iter()
                .any(|i| !target_at.iter().any(|&j| j <= i && i + w.len() <= j + t.len()))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Random data

pub fn type_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("T{i}")).collect()
}

pub fn schema_of(names: &[String]) -> EntitySchema {
    EntitySchema::new(
        names
            .iter()
            .enumerate()
            .map(|(i, n)| EntityType::new(n.clone(), i % 2 == 0))
            .collect(),
    )
    .unwrap()
}

const WORDS: &[&str] = &[
    "fever", "COVID-19", "Paxlovid", "#vaxxed", "@cdcgov", "déjà", "vu", "😷", "is", "the", "a", "of",
    "booster", "Ünïcode", "x", "tl;dr", "2nd", "dose", "ok", "!!",
];

/// A valid BIO sentence of 1..=max_len tokens; each position starts a span
/// with probability `density`.
pub fn random_sentence(rng: &mut SplitMix64, types: &[String], max_len: usize, density: f64) -> TaggedSentence {
    let len = 1 + rng.below(max_len);
    let mut tokens = Vec::with_capacity(len);
    let mut i = 0;
    while i < len {
        let word = WORDS[rng.below(WORDS.len())];
        let start_span = !types.is_empty() && (rng.next_u64() as f64 / u64::MAX as f64) < density;
        if start_span {
            let ty = &types[rng.below(types.len())];
            let span_len = (1 + rng.below(3)).min(len - i);
            tokens.push(Token::new(word, Tag::Begin(ty.clone())));
            for _ in 1..span_len {
                tokens.push(Token::new(WORDS[rng.below(WORDS.len())], Tag::Inside(ty.clone())));
            }
            i += span_len;
        } else {
            tokens.push(Token::outside(word));
            i += 1;
        }
    }
    TaggedSentence::new(tokens).unwrap()
}

pub fn random_corpus(
    rng: &mut SplitMix64,
    types: &[String],
    sentences: usize,
    max_len: usize,
    density: f64,
) -> Corpus {
    let s = (0..sentences)
        .map(|_| random_sentence(rng, types, max_len, density))
        .collect();
    Corpus::new(schema_of(types), s).unwrap()
}

/// Same tokens with independently re-drawn tags.
pub fn retag(rng: &mut SplitMix64, s: &TaggedSentence, types: &[String], density: f64) -> TaggedSentence {
    let fresh = random_sentence(rng, types, s.len(), density);
    let mut tags: Vec<Tag> = fresh.tags().cloned().collect();
    tags.resize(s.len(), Tag::Outside);
    // A truncated or padded tag list stays valid BIO: padding is O and
    // truncation only cuts a run short.
    TaggedSentence::new(
        s.surfaces()
            .zip(tags)
            .map(|(w, t)| Token::new(w, t))
            .collect(),
    )
    .unwrap()
}

pub fn mention_types(s: &TaggedSentence) -> Vec<String> {
    s.tags()
        .filter_map(|t| match t {
            Tag::Begin(ty) => Some(ty.clone()),
            _ => None,
        })
        .collect()
}

pub fn toy_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy")
}
