//! Prompt dispatch to scoring providers.
//!
//! Providers are pluggable: a remote chat-completion endpoint, a seeded mock,
//! a replay cache recorded from an earlier remote run, and (for the
//! five-class path) an external probability file that is loaded rather than
//! queried.
//!
//! [`score_batch`] runs up to `max_concurrency` requests at once and always
//! returns one response per prompt in input order. Transient failures are
//! retried with jittered exponential backoff; once retries are exhausted the
//! prompt gets a failure record. An authentication failure aborts the batch.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use crate::error::{Error, Result};
use crate::ingest;
use crate::promptkit::PromptBundle;
use crate::respparse::{format_canonical, SentimentRecord, Status};

/// Mean per-prompt cost observed for the original scoring runs, in USD.
pub const DEFAULT_COST_PER_REQUEST: f64 = 0.01;
/// Midpoint of the 15-20% share of bare "NA" answers.
pub const DEFAULT_NA_FRACTION: f64 = 0.175;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteChat,
    Mock,
    Replay,
    ExternalFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint_url: Option<String>,
    pub api_key_env: Option<String>,
    pub model_id: String,
    pub max_concurrency: usize,
    pub retry_limit: u32,
    pub request_timeout_secs: f64,
    /// First backoff delay; doubles on each retry.
    pub retry_base_ms: u64,
    pub cost_per_request: f64,
    /// Share of bare "NA" answers from the mock provider.
    pub na_fraction: f64,
    /// Seed for the mock provider's canned table and hashing.
    pub seed: u64,
    /// Replay cache location: read by `replay`, written by `remote_chat`.
    pub cache_path: Option<PathBuf>,
    /// Five-class probability file for `external_file`.
    pub external_path: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            endpoint_url: None,
            api_key_env: None,
            model_id: crate::promptkit::DEFAULT_MODEL_ID.to_string(),
            max_concurrency: 4,
            retry_limit: 3,
            request_timeout_secs: 60.0,
            retry_base_ms: 1000,
            cost_per_request: DEFAULT_COST_PER_REQUEST,
            na_fraction: DEFAULT_NA_FRACTION,
            seed: 0,
            cache_path: None,
            external_path: None,
        }
    }
}

impl ProviderConfig {
    pub fn mock() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency == 0 {
            return Err(Error::Config("max_concurrency must be at least 1".into()));
        }
        if self.cost_per_request.is_nan() || self.cost_per_request < 0.0 {
            return Err(Error::Config("cost_per_request must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.na_fraction) {
            return Err(Error::Config("na_fraction must lie in [0, 1]".into()));
        }
        match self.kind {
            ProviderKind::RemoteChat if self.endpoint_url.is_none() || self.api_key_env.is_none() => {
                Err(Error::Config(
                    "remote_chat provider requires endpoint_url and api_key_env".into(),
                ))
            }
            ProviderKind::Replay if self.cache_path.is_none() => {
                Err(Error::Config("replay provider requires cache_path".into()))
            }
            ProviderKind::ExternalFile if self.external_path.is_none() => {
                Err(Error::Config("external_file provider requires external_path".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub message_id: String,
    /// Provider output; `None` marks a failed request.
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub latency_ms: f64,
    pub cost_estimate: f64,
    pub attempt_count: u32,
}

impl RawResponse {
    pub fn failure(message_id: &str, error: impl Into<String>, attempts: u32) -> Self {
        RawResponse {
            message_id: message_id.to_string(),
            text: None,
            error: Some(error.into()),
            latency_ms: 0.0,
            cost_estimate: 0.0,
            attempt_count: attempts,
        }
    }

    pub fn is_failure(&self) -> bool {
        self.text.is_none()
    }
}

/// Why a single provider call failed.
#[derive(Debug, Clone, PartialEq)]
pub enum CallError {
    /// Network trouble, timeouts, rate limiting, server errors: worth retrying.
    Transient(String),
    /// Bad credentials: stop the whole batch.
    Auth(String),
    /// The request itself cannot succeed (cache miss, client error).
    Permanent(String),
}

pub trait Provider: Sync {
    fn complete(&self, bundle: &PromptBundle) -> std::result::Result<String, CallError>;

    /// Called once after a batch with the successful (bundle, text) pairs.
    fn record(&self, _pairs: &[(&PromptBundle, &str)]) -> Result<()> {
        Ok(())
    }
}

/// Running spend. Costs are held in integer nano-dollars so the total does
/// not depend on the order concurrent requests finish in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub requests: u64,
    pub total_nano_usd: u64,
}

impl CostLedger {
    pub fn add(&mut self, usd: f64) {
        self.requests += 1;
        self.total_nano_usd += (usd * 1e9).round() as u64;
    }

    pub fn total_usd(&self) -> f64 {
        self.total_nano_usd as f64 / 1e9
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub responses: Vec<RawResponse>,
    pub ledger: CostLedger,
}

#[derive(Debug, Clone, Copy)]
pub struct DispatchOptions {
    pub max_concurrency: usize,
    pub retry_limit: u32,
    pub retry_base: Duration,
    pub cost_per_request: f64,
}

impl From<&ProviderConfig> for DispatchOptions {
    fn from(cfg: &ProviderConfig) -> Self {
        DispatchOptions {
            max_concurrency: cfg.max_concurrency.max(1),
            retry_limit: cfg.retry_limit,
            retry_base: Duration::from_millis(cfg.retry_base_ms),
            cost_per_request: cfg.cost_per_request,
        }
    }
}

/// Build the provider described by `cfg` and score every bundle with it.
pub fn score_batch(bundles: &[PromptBundle], cfg: &ProviderConfig) -> Result<BatchOutput> {
    cfg.validate()?;
    let provider = build_provider(cfg)?;
    score_with(bundles, provider.as_ref(), DispatchOptions::from(cfg))
}

pub fn build_provider(cfg: &ProviderConfig) -> Result<Box<dyn Provider>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::Mock => Box::new(MockProvider::new(cfg.seed, cfg.na_fraction)),
        ProviderKind::Replay => Box::new(ReplayProvider::load(cfg.cache_path.as_ref().unwrap())?),
        ProviderKind::RemoteChat => Box::new(RemoteChatProvider::from_config(cfg)?),
        ProviderKind::ExternalFile => {
            return Err(Error::Config(
                "external_file provider is loaded with load_external_sentiments, not queried".into(),
            ))
        }
    })
}

fn call_with_retry(
    provider: &dyn Provider,
    bundle: &PromptBundle,
    opts: &DispatchOptions,
    abort: &AtomicBool,
    jitter: &mut ChaCha8Rng,
) -> std::result::Result<RawResponse, String> {
    let started = Instant::now();
    let mut attempt = 0;
    loop {
        attempt += 1;
        match provider.complete(bundle) {
            Ok(text) if !text.trim().is_empty() => {
                return Ok(RawResponse {
                    message_id: bundle.message_id.clone(),
                    text: Some(text),
                    error: None,
                    latency_ms: started.elapsed().as_secs_f64() * 1e3,
                    cost_estimate: opts.cost_per_request,
                    attempt_count: attempt,
                })
            }
            Ok(_) => {
                return Ok(RawResponse::failure(&bundle.message_id, "empty response", attempt));
            }
            Err(CallError::Auth(e)) => return Err(e),
            Err(CallError::Permanent(e)) => {
                return Ok(RawResponse::failure(&bundle.message_id, e, attempt));
            }
            Err(CallError::Transient(e)) => {
                if attempt > opts.retry_limit || abort.load(Ordering::Relaxed) {
                    return Ok(RawResponse::failure(&bundle.message_id, e, attempt));
                }
                let backoff = opts.retry_base.as_secs_f64() * 2f64.powi(attempt as i32 - 1);
                let delay = backoff * jitter.random_range(0.5..1.5);
                debug!(id = %bundle.message_id, attempt, delay, "transient provider error: {e}");
                std::thread::sleep(Duration::from_secs_f64(delay));
            }
        }
    }
}

/// Score `bundles` with an already-built provider.
pub fn score_with(
    bundles: &[PromptBundle],
    provider: &dyn Provider,
    opts: DispatchOptions,
) -> Result<BatchOutput> {
    let workers = opts.max_concurrency.max(1).min(bundles.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let auth_error: Mutex<Option<String>> = Mutex::new(None);
    let ledger = Mutex::new(CostLedger::default());
    let (tx, rx) = mpsc::channel::<(usize, RawResponse)>();

    let mut slots: Vec<Option<RawResponse>> = vec![None; bundles.len()];
    std::thread::scope(|scope| {
        for w in 0..workers {
            let tx = tx.clone();
            let (next, abort, auth_error, ledger) = (&next, &abort, &auth_error, &ledger);
            scope.spawn(move || {
                let mut jitter = ChaCha8Rng::seed_from_u64(w as u64);
                loop {
                    if abort.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(bundle) = bundles.get(i) else { break };
                    match call_with_retry(provider, bundle, &opts, abort, &mut jitter) {
                        Ok(resp) => {
                            if !resp.is_failure() {
                                ledger.lock().unwrap().add(resp.cost_estimate);
                            }
                            if tx.send((i, resp)).is_err() {
                                break;
                            }
                        }
                        Err(e) => {
                            abort.store(true, Ordering::Relaxed);
                            auth_error.lock().unwrap().get_or_insert(e);
                            break;
                        }
                    }
                }
            });
        }
        drop(tx);
        // the only writer to the output sequence
        for (i, resp) in rx {
            slots[i] = Some(resp);
        }
    });

    if let Some(e) = auth_error.into_inner().unwrap() {
        return Err(Error::ProviderAuth(e));
    }
    let responses: Vec<RawResponse> = slots
        .into_iter()
        .map(|r| r.expect("every bundle answered"))
        .collect();
    let pairs: Vec<(&PromptBundle, &str)> = bundles
        .iter()
        .zip(&responses)
        .filter_map(|(b, r)| r.text.as_deref().map(|t| (b, t)))
        .collect();
    provider.record(&pairs)?;
    Ok(BatchOutput {
        responses,
        ledger: ledger.into_inner().unwrap(),
    })
}

/// A well-formed answer from the mock's canned table.
#[derive(Debug, Clone, PartialEq)]
pub struct CannedResponse {
    pub sentiment: [f64; 5],
    pub advantage: [f64; 2],
    pub relation: [f64; 3],
}

impl CannedResponse {
    pub fn sentiment_class(&self) -> u8 {
        let rec = SentimentRecord::sentiment_only("", self.sentiment);
        crate::respparse::classify_sentiment(&rec).expect("parsed record")
    }

    pub fn render(&self, company: &str) -> String {
        let rec = SentimentRecord {
            message_id: String::new(),
            status: Status::Parsed,
            sentiment: Some(self.sentiment),
            advantage: Some(self.advantage),
            relation: Some(self.relation),
        };
        format_canonical(&rec, company).expect("complete record")
    }
}

const MOCK_TABLE_LEN: usize = 256;

/// Deterministic stand-in for a chat model.
///
/// The fenced message is hashed together with the seed; the hash decides
/// whether the answer is "NA" and otherwise which canned answer is returned.
#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
    na_fraction: f64,
    table: Vec<CannedResponse>,
}

/// Split `units` twentieths across `n` slots at random.
fn twentieths<R: Rng>(rng: &mut R, n: usize, units: u32, cap: u32) -> Vec<u32> {
    let mut out = vec![0u32; n];
    let mut left = units;
    while left > 0 {
        let i = rng.random_range(0..n);
        if out[i] < cap {
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

fn canned_table(seed: u64) -> Vec<CannedResponse> {
    const ADVANTAGE_UNITS: [u32; 9] = [2, 4, 6, 8, 10, 12, 14, 16, 18];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f_636b_7461_626c);
    (0..MOCK_TABLE_LEN)
        .map(|_| {
            let class = rng.random_range(0..5);
            let top = rng.random_range(8..=16u32);
            let rest = twentieths(&mut rng, 4, 20 - top, top - 1);
            let mut units = [0u32; 5];
            let mut others = rest.into_iter();
            for (i, u) in units.iter_mut().enumerate() {
                *u = if i == class { top } else { others.next().unwrap() };
            }
            // roughly a fifth of answers leave advantage undecided at 0.5
            let adv = if rng.random_bool(0.2) {
                10
            } else {
                loop {
                    let a = ADVANTAGE_UNITS[rng.random_range(0..ADVANTAGE_UNITS.len())];
                    if a != 10 {
                        break a;
                    }
                }
            };
            let rel = twentieths(&mut rng, 3, 20, 20);
            CannedResponse {
                sentiment: units.map(|u| u as f64 / 20.0),
                advantage: [adv as f64 / 20.0, (20 - adv) as f64 / 20.0],
                relation: [rel[0] as f64 / 20.0, rel[1] as f64 / 20.0, rel[2] as f64 / 20.0],
            }
        })
        .collect()
}

impl MockProvider {
    pub fn new(seed: u64, na_fraction: f64) -> Self {
        MockProvider {
            seed,
            na_fraction,
            table: canned_table(seed),
        }
    }

    pub fn table(&self) -> &[CannedResponse] {
        &self.table
    }

    /// The canned answer for a cleaned message body, or `None` for "NA".
    pub fn canned_for(&self, body: &str) -> Option<&CannedResponse> {
        let digest = Sha256::new()
            .chain_update(self.seed.to_le_bytes())
            .chain_update(body.as_bytes())
            .finalize();
        let word = |k: usize| u64::from_le_bytes(digest[8 * k..8 * k + 8].try_into().unwrap());
        let u = (word(0) >> 11) as f64 / (1u64 << 53) as f64;
        if u < self.na_fraction {
            return None;
        }
        Some(&self.table[(word(1) % self.table.len() as u64) as usize])
    }

    pub fn answer(&self, body: &str, company: &str) -> String {
        match self.canned_for(body) {
            Some(c) => c.render(company),
            None => "NA".to_string(),
        }
    }
}

/// Company name from the prompt's relation list (`'Mostly Apple'`).
fn company_from_prompt(bundle: &PromptBundle) -> &str {
    bundle
        .user_text
        .split("'Mostly ")
        .nth(1)
        .and_then(|rest| rest.split('\'').next())
        .unwrap_or("company")
}

impl Provider for MockProvider {
    fn complete(&self, bundle: &PromptBundle) -> std::result::Result<String, CallError> {
        let body = bundle
            .fenced_message()
            .ok_or_else(|| CallError::Permanent("prompt has no fenced message".into()))?;
        Ok(self.answer(body, company_from_prompt(bundle)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl From<&PromptBundle> for ChatRequest {
    fn from(b: &PromptBundle) -> Self {
        ChatRequest {
            model: b.model_id.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: b.system_text.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: b.user_text.clone(),
                },
            ],
            temperature: b.temperature,
        }
    }
}

/// One line of the replay cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub message_id: String,
    pub request: ChatRequest,
    pub response_text: String,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayProvider {
    entries: HashMap<String, String>,
}

impl ReplayProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let entries: Vec<CacheEntry> = ingest::read_jsonl_records(path)?;
        Ok(Self::from_entries(entries))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = CacheEntry>) -> Self {
        ReplayProvider {
            entries: entries
                .into_iter()
                .map(|e| (e.message_id, e.response_text))
                .collect(),
        }
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, bundle: &PromptBundle) -> std::result::Result<String, CallError> {
        self.entries
            .get(&bundle.message_id)
            .cloned()
            .ok_or_else(|| CallError::Permanent(format!("no cached response for `{}`", bundle.message_id)))
    }
}

pub struct RemoteChatProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    cache_path: Option<PathBuf>,
}

impl RemoteChatProvider {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self> {
        let var = cfg.api_key_env.as_deref().unwrap_or_default();
        let api_key = std::env::var(var)
            .map_err(|_| Error::ProviderAuth(format!("environment variable `{var}` is not set")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout_secs))
            .build()
            .map_err(|e| Error::Provider(e.to_string()))?;
        Ok(RemoteChatProvider {
            client,
            endpoint: cfg.endpoint_url.clone().unwrap_or_default(),
            api_key,
            cache_path: cfg.cache_path.clone(),
        })
    }
}

impl Provider for RemoteChatProvider {
    fn complete(&self, bundle: &PromptBundle) -> std::result::Result<String, CallError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&ChatRequest::from(bundle))
            .send()
            .map_err(|e| CallError::Transient(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(CallError::Auth(format!("endpoint returned {status}")));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(CallError::Transient(format!("endpoint returned {status}")));
        }
        if !status.is_success() {
            return Err(CallError::Permanent(format!("endpoint returned {status}")));
        }
        let body: serde_json::Value = resp
            .json()
            .map_err(|e| CallError::Transient(format!("malformed response body: {e}")))?;
        body.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| CallError::Permanent("response has no choices[0].message.content".into()))
    }

    fn record(&self, pairs: &[(&PromptBundle, &str)]) -> Result<()> {
        let Some(path) = &self.cache_path else { return Ok(()) };
        let entries: Vec<CacheEntry> = pairs
            .iter()
            .map(|(b, t)| CacheEntry {
                message_id: b.message_id.clone(),
                request: ChatRequest::from(*b),
                response_text: t.to_string(),
            })
            .collect();
        ingest::write_jsonl(path, &entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSentimentRow {
    pub message_id: String,
    pub probs: [f64; 5],
}

#[derive(Deserialize)]
struct ExternalCsvRow {
    message_id: String,
    p1: f64,
    p2: f64,
    p3: f64,
    p4: f64,
    p5: f64,
}

/// Load `message_id,p1,p2,p3,p4,p5` rows and normalize each to sum to one.
pub fn load_external_sentiments(path: &Path) -> Result<Vec<ExternalSentimentRow>> {
    let rows: Vec<ExternalCsvRow> = ingest::read_csv_records(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let probs = [r.p1, r.p2, r.p3, r.p4, r.p5];
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::parse(path, i + 1, "probabilities must be finite and nonnegative"));
            }
            let sum: f64 = probs.iter().sum();
            if sum <= 0.0 {
                return Err(Error::parse(path, i + 1, "probabilities sum to zero"));
            }
            Ok(ExternalSentimentRow {
                message_id: r.message_id,
                probs: probs.map(|p| p / sum),
            })
        })
        .collect()
}

pub fn write_external_sentiments(path: &Path, rows: &[ExternalSentimentRow]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        message_id: &'a str,
        p1: f64,
        p2: f64,
        p3: f64,
        p4: f64,
        p5: f64,
    }
    let rows: Vec<Row> = rows
        .iter()
        .map(|r| Row {
            message_id: &r.message_id,
            p1: r.probs[0],
            p2: r.probs[1],
            p3: r.probs[2],
            p4: r.probs[3],
            p5: r.probs[4],
        })
        .collect();
    ingest::write_csv(path, &rows)
}

/// Ids in `rows` that are not in `known`. Such rows are kept; callers log them.
pub fn unresolved_ids<'a>(rows: &'a [ExternalSentimentRow], known: &HashSet<&str>) -> Vec<&'a str> {
    let missing: Vec<&str> = rows
        .iter()
        .map(|r| r.message_id.as_str())
        .filter(|id| !known.contains(id))
        .collect();
    if !missing.is_empty() {
        warn!(count = missing.len(), "external sentiment rows reference unknown message ids");
    }
    missing
}

pub fn external_to_records(rows: &[ExternalSentimentRow]) -> Vec<SentimentRecord> {
    rows.iter()
        .map(|r| SentimentRecord::sentiment_only(r.message_id.clone(), r.probs))
        .collect()
}
