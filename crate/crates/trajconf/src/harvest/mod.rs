//! Collects real trajectories from an OpenAI-compatible endpoint.
//!
//! Every question is sampled `traces_per_question` times. Each completion's
//! per-token top-k log-probabilities become a confidence trajectory, and the
//! record (with the raw log-probabilities, so confidences can be re-derived)
//! is appended to the output JSONL. Runs resume: trace ids already present
//! in the output are not requested again.

mod client;
mod extract;

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use trajconf_core::dataset::normalize_answer;
use trajconf_core::trajectory::{build_trajectory, TopKRecord};

pub use client::{parse_response, Api, Client, Completion, RequestError, RequestParams};
pub use extract::{extract_answer, last_boxed, DEFAULT_ANSWER_PATTERN};

use crate::error::{Error, IoContext, Result};
use crate::ingest::TraceLine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestConfig {
    /// Base URL up to and including the API version, e.g. `http://host/v1`.
    pub endpoint: String,
    pub model: String,
    pub questions: PathBuf,
    pub traces_per_question: usize,
    pub top_k: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub concurrency: usize,
    pub output: PathBuf,
    pub api: Api,
    pub answer_pattern: String,
    /// Attempts after the first failure.
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_s: u64,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
}

impl HarvestConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("traces-per-question", self.traces_per_question),
            ("top-k", self.top_k),
            ("concurrency", self.concurrency),
            ("max-tokens", self.max_tokens),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("--{name} must be at least 1")));
            }
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("--temperature must be non-negative".into()));
        }
        Regex::new(&self.answer_pattern)
            .map_err(|e| Error::Config(format!("--answer-pattern: {e}")))?;
        Ok(())
    }
}

/// One line of the questions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub prompt: String,
    pub ground_truth: String,
}

pub fn read_questions(path: &Path) -> Result<Vec<Question>> {
    let file = File::open(path).at(path)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(q.question_id.clone()) {
            return Err(Error::Integrity(format!(
                "{}:{}: duplicate question_id `{}`",
                path.display(),
                i + 1,
                q.question_id
            )));
        }
        out.push(q);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkippedTrace {
    pub trace_id: String,
    pub reason: String,
}

/// Progress snapshot, rewritten atomically after every record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub written: usize,
    pub skipped: Vec<SkippedTrace>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HarvestSummary {
    /// Records written by this run.
    pub written: usize,
    /// Records already present from an earlier run.
    pub resumed: usize,
    pub skipped: Vec<SkippedTrace>,
    pub warnings: Vec<String>,
}

pub fn progress_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".progress.json");
    PathBuf::from(s)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

/// Trace ids already in `output`. A torn final line (from an interrupted
/// write) is cut off so appending can continue cleanly.
fn completed_ids(output: &Path) -> Result<HashSet<String>> {
    let mut done = HashSet::new();
    if !output.exists() {
        return Ok(done);
    }
    let text = fs::read_to_string(output).at(output)?;
    let mut good_len = 0;
    let mut offset = 0;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, raw) in lines.iter().enumerate() {
        offset += raw.len();
        let complete = raw.ends_with('\n');
        match serde_json::from_str::<TraceLine>(raw.trim_end()) {
            Ok(line) if complete => {
                done.insert(line.trace_id);
                good_len = offset;
            }
            _ if raw.trim().is_empty() => good_len = offset,
            _ if i + 1 == lines.len() => {
                log::warn!("{}: dropping torn final line", output.display());
            }
            _ => {
                return Err(Error::Integrity(format!(
                    "{}:{}: unreadable record in existing output",
                    output.display(),
                    i + 1
                )))
            }
        }
    }
    if good_len < text.len() {
        let f = OpenOptions::new().write(true).open(output).at(output)?;
        f.set_len(good_len as u64).at(output)?;
    }
    Ok(done)
}

enum Outcome {
    Record(Box<TraceLine>),
    Skipped(SkippedTrace),
    Fatal(String),
}

struct Job<'a> {
    question: &'a Question,
    trace_id: String,
}

/// Turns a completion into a record; `Err` carries a skip reason.
pub fn build_record(
    question: &Question,
    trace_id: &str,
    completion: &Completion,
    pattern: &Regex,
) -> std::result::Result<TraceLine, String> {
    let tops: Vec<Vec<f64>> = completion
        .top_logprobs
        .iter()
        .filter(|t| !t.is_empty())
        .cloned()
        .collect();
    if tops.is_empty() {
        return Err("completion has no tokens with log-probabilities".into());
    }
    let records = tops
        .iter()
        .map(|t| TopKRecord::from_logprobs(t))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format!("bad log-probabilities: {e}"))?;
    let traj = build_trajectory(&records).map_err(|e| e.to_string())?;
    let k = tops.iter().map(Vec::len).min().unwrap_or(0);
    let answer = extract_answer(&completion.text, pattern).unwrap_or_default();
    let label = normalize_answer(&answer) == normalize_answer(&question.ground_truth);
    Ok(TraceLine {
        trace_id: trace_id.to_owned(),
        question_id: question.question_id.clone(),
        answer,
        ground_truth: Some(question.ground_truth.clone()),
        label: Some(label as u8),
        confidence: Some(traj.into_values()),
        topk_logprobs: Some(tops),
        k: Some(k),
    })
}

fn request_with_retries(
    client: &Client,
    params: &RequestParams,
    config: &HarvestConfig,
) -> std::result::Result<Completion, RequestError> {
    let mut attempt = 0;
    loop {
        match client.complete(params) {
            Err(RequestError::Transient(msg)) if attempt < config.retries => {
                let wait = config.backoff_ms.saturating_mul(1 << attempt.min(16));
                log::debug!("transient failure ({msg}); retrying in {wait} ms");
                thread::sleep(Duration::from_millis(wait));
                attempt += 1;
            }
            other => return other,
        }
    }
}

pub fn harvest(config: &HarvestConfig) -> Result<HarvestSummary> {
    config.validate()?;
    let pattern = Regex::new(&config.answer_pattern).expect("validated");
    let questions = read_questions(&config.questions)?;
    let done = completed_ids(&config.output)?;
    let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
    let client = Client::new(
        &config.endpoint,
        config.api,
        api_key,
        Duration::from_secs(config.timeout_s.max(1)),
    );

    let width = config.traces_per_question.saturating_sub(1).to_string().len().max(3);
    let jobs: Vec<Job> = questions
        .iter()
        .flat_map(|q| {
            (0..config.traces_per_question).map(move |k| Job {
                question: q,
                trace_id: format!("{}-t{k:0width$}", q.question_id),
            })
        })
        .filter(|j| !done.contains(&j.trace_id))
        .collect();
    let mut summary = HarvestSummary {
        resumed: done.len(),
        ..Default::default()
    };
    if jobs.is_empty() {
        return Ok(summary);
    }

    let mut out = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&config.output)
        .at(&config.output)?;
    let progress_file = progress_path(&config.output);
    let mut progress = Progress::default();

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Outcome>();
    let mut fatal = None;
    let mut downgrade_warned = false;

    thread::scope(|s| -> Result<()> {
        for _ in 0..config.concurrency.min(jobs.len()) {
            let tx = tx.clone();
            let (jobs, next, stop, client, pattern) = (&jobs, &next, &stop, &client, &pattern);
            s.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let params = RequestParams {
                    model: &config.model,
                    prompt: &job.question.prompt,
                    top_k: config.top_k,
                    temperature: config.temperature,
                    max_tokens: config.max_tokens,
                };
                let outcome = match request_with_retries(client, &params, config) {
                    Ok(c) => match build_record(job.question, &job.trace_id, &c, pattern) {
                        Ok(line) => Outcome::Record(Box::new(line)),
                        Err(reason) => Outcome::Skipped(SkippedTrace {
                            trace_id: job.trace_id.clone(),
                            reason,
                        }),
                    },
                    Err(RequestError::Fatal(m)) => Outcome::Fatal(m),
                    Err(RequestError::Transient(m) | RequestError::Rejected(m)) => {
                        Outcome::Skipped(SkippedTrace {
                            trace_id: job.trace_id.clone(),
                            reason: m,
                        })
                    }
                };
                if tx.send(outcome).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for outcome in rx {
            match outcome {
                Outcome::Record(line) => {
                    if let Some(k) = line.k {
                        if k < config.top_k && !downgrade_warned {
                            let w = format!(
                                "endpoint returned top-{k} alternatives where top-{} was requested; \
                                 confidences use the returned k, recorded per trace",
                                config.top_k
                            );
                            log::warn!("{w}");
                            summary.warnings.push(w);
                            downgrade_warned = true;
                        }
                    }
                    let text = serde_json::to_string(&*line).expect("trace lines serialize");
                    writeln!(out, "{text}").at(&config.output)?;
                    out.flush().at(&config.output)?;
                    summary.written += 1;
                    progress.written = done.len() + summary.written;
                }
                Outcome::Skipped(sk) => {
                    log::warn!("skipping trace `{}`: {}", sk.trace_id, sk.reason);
                    summary.skipped.push(sk.clone());
                    progress.skipped.push(sk);
                }
                Outcome::Fatal(m) => {
                    stop.store(true, Ordering::Relaxed);
                    fatal.get_or_insert(m);
                    continue;
                }
            }
            let json = serde_json::to_vec_pretty(&progress).expect("progress serializes");
            write_atomic(&progress_file, &json)?;
        }
        Ok(())
    })?;

    if let Some(m) = fatal {
        return Err(Error::Config(m));
    }
    Ok(summary)
}
