//! Querying a chat-with-image endpoint over evaluation pairs.

mod cache;
mod prompts;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::endpoint::{complete_with_retry, ChatRequest, Endpoint, HttpEndpoint, RetryPolicy};
use crate::error::{EndpointError, Error, Result};
use crate::jsonl;
use crate::metrics::ResponsePair;
use crate::pairgen::EvalPair;

pub use cache::{cache_key, cache_key_for_file, CacheEntry, ResponseCache};
pub use prompts::{cognitive_template, prompt_for, Profile, Task, OCR_PROMPT};

pub const API_KEY_ENV: &str = "CPKIT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub max_parallel: usize,
    pub timeout_secs: u64,
    pub profile: Profile,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "gpt-4o".into(),
            api_key_env: API_KEY_ENV.into(),
            max_parallel: 4,
            timeout_secs: 60,
            profile: Profile::Closed,
        }
    }
}

impl EndpointConfig {
    /// Sampling temperature sent with every request. Fixed.
    pub const fn temperature(&self) -> f64 {
        0.0
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.base_url.trim().is_empty() {
            return Err("base_url is empty".into());
        }
        if self.model_name.trim().is_empty() {
            return Err("model name is empty".into());
        }
        if self.max_parallel == 0 {
            return Err("max_parallel must be at least 1".into());
        }
        if self.timeout_secs == 0 {
            return Err("timeout must be at least 1 second".into());
        }
        Ok(())
    }

    /// HTTP client for this config. The key is read from the environment;
    /// an unset variable sends no authorization header.
    pub fn connect(&self) -> Result<HttpEndpoint> {
        let key = std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(HttpEndpoint::new(
            &self.base_url,
            self.model_name.clone(),
            key,
            Duration::from_secs(self.timeout_secs),
        )?)
    }
}

/// One prompt/image round trip for one pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub pair_id: String,
    pub task: Task,
    pub prompt: String,
    pub image: PathBuf,
    pub response: String,
    pub latency_ms: u64,
    pub cached: bool,
    pub attempts: u32,
}

impl Exchange {
    /// Unanswered exchange for `pair`. The image must be the pair's plain
    /// image for the cognitive task and its boxed image for the perceptual
    /// task.
    pub fn new(pair: &EvalPair, task: Task, prompt: String, image: PathBuf) -> Result<Self> {
        let (expected, label) = match task {
            Task::Cognitive => (&pair.plain_image, "plain"),
            Task::Perceptual => (&pair.boxed_image, "boxed"),
        };
        if !image.ends_with(expected) {
            return Err(Error::ImageTaskMismatch {
                task: task.as_str(),
                expected: label,
            });
        }
        Ok(Self {
            pair_id: pair.pair_id.clone(),
            task,
            prompt,
            image,
            response: String::new(),
            latency_ms: 0,
            cached: false,
            attempts: 0,
        })
    }

    /// The exchange a run issues for `pair` under `profile`.
    pub fn for_pair(pair: &EvalPair, task: Task, profile: Profile, manifest_dir: &Path) -> Self {
        let (question, image) = match task {
            Task::Cognitive => (&pair.cognitive_query, pair.plain_image_path(manifest_dir)),
            Task::Perceptual => (&pair.perceptual_query, pair.boxed_image_path(manifest_dir)),
        };
        let prompt = prompt_for(pair.dataset, task, question, profile);
        Self::new(pair, task, prompt, image).expect("image chosen by task")
    }
}

/// Sends the exchange's prompt and image, consulting `cache` first.
/// Transient failures are retried per `retry`.
pub fn ask(
    endpoint: &dyn Endpoint,
    cache: Option<&ResponseCache>,
    retry: &RetryPolicy,
    mut exchange: Exchange,
) -> Result<Exchange> {
    let image = std::fs::read(&exchange.image)
        .map_err(|_| Error::MissingImage(exchange.image.clone()))?;
    let key = cache_key(endpoint.model_name(), &exchange.prompt, &image);
    if let Some(hit) = cache.and_then(|c| c.get(&key)) {
        exchange.response = hit;
        exchange.cached = true;
        return Ok(exchange);
    }
    let started = Instant::now();
    let request = ChatRequest::new(exchange.prompt.clone()).with_image(image);
    let (text, attempts) = complete_with_retry(endpoint, &request, retry)?;
    exchange.latency_ms = started.elapsed().as_millis() as u64;
    exchange.attempts = attempts;
    exchange.response = text.trim().to_string();
    if attempts > 1 {
        info!(
            "{} {} answered after {attempts} attempts",
            exchange.pair_id, exchange.task
        );
    }
    if let Some(c) = cache {
        c.put(&key, &exchange.response, endpoint.model_name())?;
    }
    Ok(exchange)
}

/// Per-dataset patterns pulling the answer out of a cognitive response. The
/// first capture group is kept when the pattern matches.
#[derive(Debug, Clone, Default)]
pub struct AnswerExtractors {
    table: HashMap<Dataset, Regex>,
}

impl AnswerExtractors {
    pub fn new() -> Self {
        Self::default()
    }

    /// Strips a leading "Answer:" echoed back from the prompt.
    pub fn standard() -> Self {
        let re = Regex::new(r"(?is)^\s*answer\s*:\s*(.*?)\s*$").unwrap();
        Self {
            table: Dataset::ALL.iter().map(|d| (*d, re.clone())).collect(),
        }
    }

    pub fn set(&mut self, dataset: Dataset, pattern: &str) -> std::result::Result<(), regex::Error> {
        self.table.insert(dataset, Regex::new(pattern)?);
        Ok(())
    }

    pub fn apply(&self, dataset: Dataset, response: &str) -> String {
        let Some(re) = self.table.get(&dataset) else {
            return response.to_string();
        };
        match re.captures(response).and_then(|c| c.get(1)) {
            Some(m) => m.as_str().trim().to_string(),
            None => response.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// One line of the response manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub pair_id: String,
    pub cognitive_response: String,
    pub perceptual_response: String,
    pub status: Status,
}

impl ResponseRecord {
    pub fn failed(pair_id: &str) -> Self {
        Self {
            pair_id: pair_id.to_string(),
            cognitive_response: String::new(),
            perceptual_response: String::new(),
            status: Status::Failed,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn pair(&self) -> ResponsePair {
        ResponsePair::new(
            &self.pair_id,
            &self.cognitive_response,
            &self.perceptual_response,
        )
    }
}

pub fn read_responses(path: &Path) -> Result<Vec<ResponseRecord>> {
    jsonl::read(path)
}

pub fn write_responses(path: &Path, records: &[ResponseRecord]) -> Result<()> {
    jsonl::write(path, records)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub max_parallel: usize,
    pub profile: Profile,
    pub retry: RetryPolicy,
    pub extractors: AnswerExtractors,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_parallel: 4,
            profile: Profile::Closed,
            retry: RetryPolicy::default(),
            extractors: AnswerExtractors::standard(),
        }
    }
}

#[derive(Debug, Default)]
pub struct RunOutcome {
    /// One record per input pair, in input order.
    pub records: Vec<ResponseRecord>,
    /// Successful exchanges, cognitive before perceptual, in input order.
    pub exchanges: Vec<Exchange>,
    pub failures: Vec<(String, Error)>,
    pub cache_hits: usize,
}

impl RunOutcome {
    pub fn n_failed(&self) -> usize {
        self.failures.len()
    }
}

/// Asks both queries of every pair with at most `max_parallel` pairs in
/// flight. A failing pair is recorded as failed and the run carries on,
/// except that an authentication failure stops new requests.
pub fn run_pairs(
    endpoint: &dyn Endpoint,
    pairs: &[EvalPair],
    manifest_dir: &Path,
    cache: Option<&ResponseCache>,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let workers = opts.max_parallel.max(1).min(pairs.len());
    let next = AtomicUsize::new(0);
    let auth_failed = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<Result<[Exchange; 2]>>>> =
        pairs.iter().map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(pair) = pairs.get(i) else { break };
                let result = if auth_failed.load(Ordering::SeqCst) {
                    Err(Error::Endpoint(EndpointError::AuthFailure(
                        "skipped after an earlier authentication failure".into(),
                    )))
                } else {
                    ask_pair(endpoint, pair, manifest_dir, cache, opts)
                };
                if let Err(Error::Endpoint(EndpointError::AuthFailure(_))) = &result {
                    auth_failed.store(true, Ordering::SeqCst);
                }
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });

    let mut outcome = RunOutcome::default();
    for (pair, slot) in pairs.iter().zip(slots) {
        match slot.into_inner().unwrap().expect("every pair visited") {
            Ok([cog, per]) => {
                outcome.cache_hits += cog.cached as usize + per.cached as usize;
                outcome.records.push(ResponseRecord {
                    pair_id: pair.pair_id.clone(),
                    cognitive_response: opts.extractors.apply(pair.dataset, &cog.response),
                    perceptual_response: per.response.clone(),
                    status: Status::Ok,
                });
                outcome.exchanges.extend([cog, per]);
            }
            Err(err) => {
                warn!("pair `{}` failed: {err}", pair.pair_id);
                outcome.records.push(ResponseRecord::failed(&pair.pair_id));
                outcome.failures.push((pair.pair_id.clone(), err));
            }
        }
    }
    info!(
        "{} pairs answered, {} failed, {} cache hits",
        pairs.len() - outcome.n_failed(),
        outcome.n_failed(),
        outcome.cache_hits
    );
    Ok(outcome)
}

fn ask_pair(
    endpoint: &dyn Endpoint,
    pair: &EvalPair,
    manifest_dir: &Path,
    cache: Option<&ResponseCache>,
    opts: &RunOptions,
) -> Result<[Exchange; 2]> {
    debug!("asking pair `{}`", pair.pair_id);
    let cog = Exchange::for_pair(pair, Task::Cognitive, opts.profile, manifest_dir);
    let cog = ask(endpoint, cache, &opts.retry, cog)?;
    let per = Exchange::for_pair(pair, Task::Perceptual, opts.profile, manifest_dir);
    let per = ask(endpoint, cache, &opts.retry, per)?;
    Ok([cog, per])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BoundingBox;
    use crate::endpoint::FnEndpoint;
    use crate::pairgen::{Locator, PERCEPTUAL_QUESTION};

    fn pair(dir: &Path, id: &str) -> EvalPair {
        std::fs::write(dir.join("plain.png"), b"plain").unwrap();
        std::fs::write(dir.join(format!("{id}.png")), format!("boxed {id}")).unwrap();
        EvalPair {
            pair_id: id.into(),
            record_id: "r".into(),
            dataset: Dataset::Docvqa,
            cognitive_query: format!("question {id}"),
            perceptual_query: PERCEPTUAL_QUESTION.into(),
            ground_truth: "Doral".into(),
            bbox: BoundingBox::new(0, 0, 5, 5).unwrap(),
            box_text: "Doral".into(),
            plain_image: "plain.png".into(),
            boxed_image: format!("{id}.png").into(),
            locator: Locator::Exact,
        }
    }

    #[test]
    fn exchange_images_follow_task() {
        let dir = tempfile::tempdir().unwrap();
        let p = pair(dir.path(), "a");
        let cog = Exchange::for_pair(&p, Task::Cognitive, Profile::Sft, dir.path());
        assert_eq!(cog.image, dir.path().join("plain.png"));
        assert_eq!(cog.prompt, "question a");
        let per = Exchange::for_pair(&p, Task::Perceptual, Profile::Sft, dir.path());
        assert_eq!(per.image, dir.path().join("a.png"));
        assert!(matches!(
            Exchange::new(&p, Task::Perceptual, "x".into(), dir.path().join("plain.png")),
            Err(Error::ImageTaskMismatch { task: "perceptual", expected: "boxed" })
        ));
        assert!(Exchange::new(&p, Task::Cognitive, "x".into(), dir.path().join("a.png")).is_err());
    }

    #[test]
    fn ask_trims_and_caches() {
        let dir = tempfile::tempdir().unwrap();
        let p = pair(dir.path(), "a");
        let cache = ResponseCache::open(&dir.path().join("cache.jsonl")).unwrap();
        let ep = FnEndpoint::new("m", |_: &ChatRequest| Ok("  OK \n".to_string()));
        let ex = Exchange::for_pair(&p, Task::Cognitive, Profile::Closed, dir.path());
        let first = ask(&ep, Some(&cache), &RetryPolicy::no_delay(), ex.clone()).unwrap();
        assert_eq!(first.response, "OK");
        assert!(!first.cached);
        assert_eq!(first.attempts, 1);
        let second = ask(&ep, Some(&cache), &RetryPolicy::no_delay(), ex).unwrap();
        assert!(second.cached);
        assert_eq!(second.response, "OK");
        assert_eq!(ep.calls(), 1);
    }

    #[test]
    fn ask_reports_retries() {
        let dir = tempfile::tempdir().unwrap();
        let p = pair(dir.path(), "a");
        let n = AtomicUsize::new(0);
        let ep = FnEndpoint::new("m", |_: &ChatRequest| {
            if n.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(EndpointError::Transient("503".into()))
            } else {
                Ok("fine".to_string())
            }
        });
        let ex = Exchange::for_pair(&p, Task::Cognitive, Profile::Closed, dir.path());
        let ex = ask(&ep, None, &RetryPolicy::no_delay(), ex).unwrap();
        assert_eq!((ex.response.as_str(), ex.attempts), ("fine", 3));
    }

    #[test]
    fn extractor_strips_answer_prefix() {
        let x = AnswerExtractors::standard();
        assert_eq!(x.apply(Dataset::Docvqa, "Answer: Doral"), "Doral");
        assert_eq!(x.apply(Dataset::Docvqa, "Doral"), "Doral");
        let mut custom = AnswerExtractors::new();
        custom.set(Dataset::Chartqa, r"is (\d+)").unwrap();
        assert_eq!(custom.apply(Dataset::Chartqa, "The value is 42."), "42");
        assert_eq!(custom.apply(Dataset::Docvqa, "The value is 42."), "The value is 42.");
    }

    #[test]
    fn run_keeps_order_and_isolates_failures() {
        let dir = tempfile::tempdir().unwrap();
        let pairs: Vec<_> = (0..12).map(|i| pair(dir.path(), &format!("p{i}"))).collect();
        let ep = FnEndpoint::new("m", |req: &ChatRequest| {
            if req.prompt.contains("question p5") {
                return Err(EndpointError::Failure("bad request".into()));
            }
            // vary latency so completion order differs from input order
            let n = req.prompt.len() % 3;
            std::thread::sleep(Duration::from_millis(n as u64));
            Ok(req.prompt.lines().find(|l| l.starts_with("Question:")).unwrap_or("box").to_string())
        });
        let opts = RunOptions {
            max_parallel: 4,
            retry: RetryPolicy::no_delay(),
            ..Default::default()
        };
        let out = run_pairs(&ep, &pairs, dir.path(), None, &opts).unwrap();
        let ids: Vec<_> = out.records.iter().map(|r| r.pair_id.as_str()).collect();
        let expected: Vec<String> = (0..12).map(|i| format!("p{i}")).collect();
        assert_eq!(ids, expected);
        assert_eq!(out.n_failed(), 1);
        assert_eq!(out.records[5].status, Status::Failed);
        assert_eq!(out.records[3].cognitive_response, "Question: question p3");
        assert_eq!(out.records[3].perceptual_response, "box");
    }

    #[test]
    fn auth_failure_stops_requests() {
        let dir = tempfile::tempdir().unwrap();
        let pairs: Vec<_> = (0..20).map(|i| pair(dir.path(), &format!("p{i}"))).collect();
        let ep = FnEndpoint::new("m", |_: &ChatRequest| {
            Err(EndpointError::AuthFailure("401".into()))
        });
        let opts = RunOptions {
            max_parallel: 1,
            ..Default::default()
        };
        let out = run_pairs(&ep, &pairs, dir.path(), None, &opts).unwrap();
        assert_eq!(out.n_failed(), 20);
        assert_eq!(ep.calls(), 1);
    }

    #[test]
    fn empty_run_rejected() {
        let ep = FnEndpoint::new("m", |_: &ChatRequest| Ok(String::new()));
        assert!(matches!(
            run_pairs(&ep, &[], Path::new("."), None, &RunOptions::default()),
            Err(Error::EmptyInput)
        ));
    }
}
