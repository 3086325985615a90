//! Chat-completion client: digest-keyed persistent cache, bounded
//! retries with exponential backoff, rate limiting, and a deterministic
//! mock backend for offline runs and tests.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// One scoring request. `iteration_index` participates in identity, so
/// the same texts at different iterations are distinct requests.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    pub iteration_index: u32,
    /// None means the endpoint's own default; the value used is recorded
    /// with every response either way.
    pub sampling_temperature: Option<f64>,
}

impl CompletionRequest {
    /// Collision-resistant cache key over every identity component.
    /// Fields are length-prefixed so boundaries cannot be confused.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for text in [&self.model_id, &self.system_text, &self.user_text] {
            h.update((text.len() as u64).to_le_bytes());
            h.update(text.as_bytes());
        }
        h.update(self.iteration_index.to_le_bytes());
        match self.sampling_temperature {
            Some(t) => {
                h.update([1u8]);
                h.update(t.to_le_bytes());
            }
            None => h.update([0u8]),
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Cache,
    Mock,
}

#[derive(Debug, Clone)]
pub struct CompletionResponse {
    pub request_digest: String,
    pub report_text: String,
    pub backend: BackendKind,
    pub latency_ms: f64,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("retriable failure after {attempts} attempts: {message}")]
    RetriesExhausted { attempts: u32, message: String },
    #[error("fatal endpoint rejection: {0}")]
    Fatal(String),
    #[error("empty completion for request {0}")]
    EmptyResponse(String),
    #[error("cache error: {0}")]
    Cache(String),
}

/// Transport-level outcome a backend reports; the client decides retry
/// policy from `retriable`.
#[derive(Debug)]
pub struct BackendError {
    pub retriable: bool,
    pub message: String,
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError>;
}

// ---------------------------------------------------------------------------
// Persistent cache

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub digest: String,
    pub model_id: String,
    pub iteration_index: u32,
    pub sampling_temperature: Option<f64>,
    pub report_text: String,
    pub timestamp: u64,
}

/// Append-only response cache: one line-delimited JSON record per
/// response in `<dir>/cache.jsonl`, indexed in memory by digest.
pub struct ResponseCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, CacheRecord>>,
    file: Mutex<std::fs::File>,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self, LlmError> {
        std::fs::create_dir_all(dir).map_err(|e| LlmError::Cache(e.to_string()))?;
        let path = dir.join("cache.jsonl");
        let mut entries = HashMap::new();
        if path.exists() {
            let f = std::fs::File::open(&path).map_err(|e| LlmError::Cache(e.to_string()))?;
            for line in std::io::BufReader::new(f).lines() {
                let line = line.map_err(|e| LlmError::Cache(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line)
                    .map_err(|e| LlmError::Cache(format!("corrupt cache line: {e}")))?;
                entries.insert(rec.digest.clone(), rec);
            }
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| LlmError::Cache(e.to_string()))?;
        Ok(Self {
            path,
            entries: Mutex::new(entries),
            file: Mutex::new(file),
        })
    }

    pub fn get(&self, digest: &str) -> Option<CacheRecord> {
        self.entries.lock().unwrap().get(digest).cloned()
    }

    pub fn put(&self, rec: CacheRecord) -> Result<(), LlmError> {
        let line = serde_json::to_string(&rec).map_err(|e| LlmError::Cache(e.to_string()))?;
        {
            let mut f = self.file.lock().unwrap();
            writeln!(f, "{line}").map_err(|e| LlmError::Cache(e.to_string()))?;
            f.flush().map_err(|e| LlmError::Cache(e.to_string()))?;
        }
        self.entries.lock().unwrap().insert(rec.digest.clone(), rec);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

// ---------------------------------------------------------------------------
// Admission control

/// Counting semaphore bounding in-flight backend calls plus a minimum
/// spacing between request starts derived from a requests-per-minute cap.
struct Admission {
    permits: Mutex<usize>,
    available: Condvar,
    min_interval: Duration,
    next_allowed: Mutex<Instant>,
}

impl Admission {
    fn new(max_in_flight: usize, requests_per_minute: Option<u32>) -> Self {
        let min_interval = match requests_per_minute {
            Some(rpm) if rpm > 0 => Duration::from_secs_f64(60.0 / rpm as f64),
            _ => Duration::ZERO,
        };
        Self {
            permits: Mutex::new(max_in_flight.max(1)),
            available: Condvar::new(),
            min_interval,
            next_allowed: Mutex::new(Instant::now()),
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        drop(permits);
        if self.min_interval > Duration::ZERO {
            let wait = {
                let mut next = self.next_allowed.lock().unwrap();
                let now = Instant::now();
                let start = (*next).max(now);
                *next = start + self.min_interval;
                start.saturating_duration_since(now)
            };
            if wait > Duration::ZERO {
                std::thread::sleep(wait);
            }
        }
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.available.notify_one();
    }
}

// ---------------------------------------------------------------------------
// Client

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
        }
    }
}

/// Cache-fronted completion client, safe for concurrent use.
pub struct Client {
    backend: Box<dyn Backend>,
    cache: ResponseCache,
    retry: RetryPolicy,
    admission: Admission,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Client {
    pub fn new(
        backend: Box<dyn Backend>,
        cache: ResponseCache,
        retry: RetryPolicy,
        max_in_flight: usize,
        requests_per_minute: Option<u32>,
    ) -> Self {
        Self {
            backend,
            cache,
            retry,
            admission: Admission::new(max_in_flight, requests_per_minute),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    /// Calls made through to the backend (live or mock) so far.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let digest = req.digest();
        if let Some(rec) = self.cache.get(&digest) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(CompletionResponse {
                request_digest: digest,
                report_text: rec.report_text,
                backend: BackendKind::Cache,
                latency_ms: 0.0,
            });
        }

        self.admission.acquire();
        let result = self.call_with_retries(req, &digest);
        self.admission.release();
        let (report_text, latency_ms) = result?;

        self.cache.put(CacheRecord {
            digest: digest.clone(),
            model_id: req.model_id.clone(),
            iteration_index: req.iteration_index,
            sampling_temperature: req.sampling_temperature,
            report_text: report_text.clone(),
            timestamp: SystemTime::now()
                .duration_since(SystemTime::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })?;

        Ok(CompletionResponse {
            request_digest: digest,
            report_text,
            backend: self.backend.kind(),
            latency_ms,
        })
    }

    fn call_with_retries(
        &self,
        req: &CompletionRequest,
        digest: &str,
    ) -> Result<(String, f64), LlmError> {
        let mut last_message = String::new();
        let mut empty_retried = false;
        let mut attempt = 0;
        while attempt < self.retry.max_attempts {
            attempt += 1;
            let started = Instant::now();
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match self.backend.complete(req) {
                Ok(text) if text.is_empty() => {
                    // Empty completions get exactly one retry.
                    if empty_retried {
                        return Err(LlmError::EmptyResponse(digest.to_string()));
                    }
                    empty_retried = true;
                    last_message = "empty completion".into();
                }
                Ok(text) => {
                    return Ok((text, started.elapsed().as_secs_f64() * 1000.0));
                }
                Err(e) if e.retriable => last_message = e.message,
                Err(e) => return Err(LlmError::Fatal(e.message)),
            }
            if attempt < self.retry.max_attempts {
                let backoff = self.retry.base_delay.as_secs_f64() * 2f64.powi(attempt as i32 - 1);
                let jitter = rand::thread_rng().gen_range(0.0..0.25) * backoff;
                std::thread::sleep(Duration::from_secs_f64(backoff + jitter));
            }
        }
        Err(LlmError::RetriesExhausted {
            attempts: attempt,
            message: last_message,
        })
    }
}

// ---------------------------------------------------------------------------
// Live HTTP backend (chat-completion schema)

pub struct HttpBackend {
    endpoint_url: String,
    api_key: String,
    http: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(endpoint_url: String, api_key: String) -> Self {
        Self {
            endpoint_url,
            api_key,
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("http client"),
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: Option<String>,
}

impl Backend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &req.model_id,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &req.system_text,
                },
                ChatMessage {
                    role: "user",
                    content: &req.user_text,
                },
            ],
            temperature: req.sampling_temperature,
        };
        let resp = self
            .http
            .post(&self.endpoint_url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError {
                retriable: true,
                message: format!("transport: {e}"),
            })?;
        let status = resp.status();
        if !status.is_success() {
            let retriable = status.as_u16() == 429 || status.is_server_error();
            let text = resp.text().unwrap_or_default();
            return Err(BackendError {
                retriable,
                message: format!("endpoint returned {status}: {text}"),
            });
        }
        let parsed: ChatResponse = resp.json().map_err(|e| BackendError {
            retriable: false,
            message: format!("malformed completion payload: {e}"),
        })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(content)
    }
}

// ---------------------------------------------------------------------------
// Deterministic mock backend

/// Target score distribution for the mock: per-case overrides keyed by
/// the title line of the user prompt, with a global fallback.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockConfig {
    pub seed: u64,
    pub default_mean: f64,
    pub default_spread: f64,
    /// Round drawn scores to halves instead of integers.
    pub half_grid: bool,
    #[serde(default)]
    pub per_title: HashMap<String, MockTarget>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MockTarget {
    pub mean: f64,
    pub spread: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            default_mean: 3.0,
            default_spread: 0.5,
            half_grid: true,
            per_title: HashMap::new(),
        }
    }
}

pub struct MockBackend {
    config: MockConfig,
}

const USER_PROMPT_PREFIX: &str = "Score the following impact case study: ";

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        Self { config }
    }

    fn title_of(user_text: &str) -> &str {
        let rest = user_text.strip_prefix(USER_PROMPT_PREFIX).unwrap_or(user_text);
        rest.lines().next().unwrap_or("")
    }

    fn rng_for(&self, req: &CompletionRequest) -> ChaCha12Rng {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        h.update(req.digest().as_bytes());
        let out = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&out);
        ChaCha12Rng::from_seed(seed)
    }

    /// The score this backend embeds for a request: a draw from the
    /// configured distribution, clamped to [1,4] and rounded to the grid.
    /// Pure in (seed, request digest), so reruns reproduce it.
    pub fn planted_score(&self, req: &CompletionRequest) -> f64 {
        let target = self
            .config
            .per_title
            .get(Self::title_of(&req.user_text))
            .copied()
            .unwrap_or(MockTarget {
                mean: self.config.default_mean,
                spread: self.config.default_spread,
            });
        let mut rng = self.rng_for(req);
        let raw = if target.spread > 0.0 {
            Normal::new(target.mean, target.spread).unwrap().sample(&mut rng)
        } else {
            target.mean
        };
        let clamped = raw.clamp(1.0, 4.0);
        if self.config.half_grid {
            (clamped * 2.0).round() / 2.0
        } else {
            clamped.round()
        }
    }

    fn render_report(&self, req: &CompletionRequest, score: f64) -> String {
        let mut rng = self.rng_for(req);
        // Burn the draw the score came from so styling choices differ
        // between requests that share a planted score.
        let _: f64 = rng.gen();
        let score_text = if score.fract() == 0.0 {
            format!("{}", score as i64)
        } else {
            format!("{score:.1}")
        };
        let title = Self::title_of(&req.user_text);
        let openings = [
            format!("The case study \"{title}\" presents a coherent narrative of benefits beyond academia."),
            format!("\"{title}\" describes changes to practice with identifiable beneficiaries."),
            format!("This submission, \"{title}\", sets out an evidence-backed account of impact."),
        ];
        let reasons = [
            "The reach extends across several constituencies, though the evidence of depth is uneven.",
            "The significance is well documented, while the breadth of beneficiaries is more limited.",
            "Corroboration is credible but the narrative stops short of demonstrating transformative change.",
        ];
        let mut out = String::new();
        out.push_str(&openings[rng.gen_range(0..openings.len())]);
        out.push('\n');
        if rng.gen_bool(0.5) {
            // Rubric echo: restates a scale level, which the parser must
            // not mistake for a verdict.
            out.push_str("4*: Outstanding impacts in terms of their reach and significance.\n");
        }
        out.push_str(reasons[rng.gen_range(0..reasons.len())]);
        out.push('\n');
        match rng.gen_range(0..3) {
            0 => out.push_str(&format!("Hence the {score_text}* rating is appropriate.")),
            1 => out.push_str(&format!(
                "Weighing reach against significance, this justifies a score of {score_text}*."
            )),
            _ => out.push_str(&format!("Score: {score_text}*")),
        }
        out.push('\n');
        out
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let score = self.planted_score(req);
        Ok(self.render_report(req, score))
    }
}
