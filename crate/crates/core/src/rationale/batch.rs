//! Resumable batch runner.
//!
//! The journal is newline-delimited JSON `{essay_id, status, attempts}`,
//! appended after every completion and compacted to one line per essay when
//! the batch ends. Parsed records live next to it in
//! `<journal>.records.jsonl`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{build_prompt, PromptConfig, RationaleError, RationaleRecord};
use crate::corpus::EssayRecord;

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

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
}

/// A chat-completion endpoint returning the assistant's text.
pub trait ChatProvider: Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JournalStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub essay_id: u32,
    pub status: JournalStatus,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptions {
    /// Provider calls per essay per run.
    pub max_attempts: u32,
    /// Backoff before retry `k` (0-based) is `base · 2^k` plus up to half of
    /// that again as jitter.
    pub backoff_base: Duration,
    pub concurrency: usize,
    pub jitter_seed: u64,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self { max_attempts: 5, backoff_base: Duration::from_secs(1), concurrency: 4, jitter_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    /// Completed records in essay input order.
    pub records: Vec<RationaleRecord>,
    pub failed: Vec<u32>,
    pub provider_calls: usize,
    pub journal: Vec<JournalEntry>,
}

pub fn records_path(journal: &Path) -> PathBuf {
    let mut s = journal.as_os_str().to_owned();
    s.push(".records.jsonl");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RationaleError + '_ {
    move |source| RationaleError::Io { path: path.display().to_string(), source }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, RationaleError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let content = std::fs::read_to_string(path).map_err(io_err(path))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map(|v| (i + 1, v)).map_err(|e| RationaleError::CorruptJournal {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

struct PriorState {
    entries: BTreeMap<u32, JournalEntry>,
    records: HashMap<u32, RationaleRecord>,
}

fn load_prior(journal: &Path) -> Result<PriorState, RationaleError> {
    let mut entries = BTreeMap::new();
    for (_, e) in read_jsonl::<JournalEntry>(journal)? {
        // later lines supersede earlier ones for the same essay
        entries.insert(e.essay_id, e);
    }
    let rec_path = records_path(journal);
    let mut records = HashMap::new();
    for (_, r) in read_jsonl::<RationaleRecord>(&rec_path)? {
        records.insert(r.essay_id, r);
    }
    for e in entries.values() {
        if e.status == JournalStatus::Done && !records.contains_key(&e.essay_id) {
            return Err(RationaleError::CorruptJournal {
                path: journal.display().to_string(),
                line: 0,
                message: format!("essay {} is done but has no record", e.essay_id),
            });
        }
    }
    Ok(PriorState { entries, records })
}

fn append_line<T: Serialize>(w: &mut BufWriter<File>, value: &T, path: &Path) -> Result<(), RationaleError> {
    let line = serde_json::to_string(value).expect("serializable");
    writeln!(w, "{line}").and_then(|_| w.flush()).map_err(io_err(path))
}

fn backoff(options: &BatchOptions, retry: u32, rng: &mut ChaCha8Rng) -> Duration {
    let base = options.backoff_base.saturating_mul(1u32 << retry.min(16));
    let jitter = rng.random_range(0.0..0.5);
    base + base.mul_f64(jitter)
}

enum Completion {
    Done { essay_id: u32, attempts: u32, record: Box<RationaleRecord> },
    Failed { essay_id: u32, attempts: u32, reason: String },
}

/// Generates one rationale per essay, resuming from `journal_path`.
///
/// Essays already marked done are skipped. Provider errors are retried with
/// exponential backoff up to `max_attempts`; unparseable responses are
/// journaled as failed without retry. A corrupt journal aborts before any
/// provider call.
pub fn run_batch(
    essays: &[EssayRecord],
    config: &PromptConfig,
    provider: &dyn ChatProvider,
    journal_path: &Path,
    options: &BatchOptions,
) -> Result<BatchOutcome, RationaleError> {
    config.validate()?;
    let prior = load_prior(journal_path)?;
    let rec_path = records_path(journal_path);

    let mut entries = prior.entries;
    let mut records = prior.records;

    let mut journal = BufWriter::new(
        OpenOptions::new().create(true).append(true).open(journal_path).map_err(io_err(journal_path))?,
    );
    let mut record_file =
        BufWriter::new(OpenOptions::new().create(true).append(true).open(&rec_path).map_err(io_err(&rec_path))?);

    let mut todo = Vec::new();
    for essay in essays {
        let entry = entries.entry(essay.essay_id).or_insert_with(|| JournalEntry {
            essay_id: essay.essay_id,
            status: JournalStatus::Pending,
            attempts: 0,
        });
        if entry.status != JournalStatus::Done {
            if entry.attempts == 0 {
                append_line(&mut journal, entry, journal_path)?;
            }
            todo.push((essay, entry.attempts));
        }
    }

    let calls = AtomicUsize::new(0);
    let queue = Mutex::new(todo.into_iter());
    let (tx, rx) = mpsc::channel::<Completion>();
    let workers = options.concurrency.max(1);

    std::thread::scope(|scope| -> Result<(), RationaleError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let queue = &queue;
            let calls = &calls;
            scope.spawn(move || loop {
                let next = queue.lock().expect("queue lock").next();
                let Some((essay, prior_attempts)) = next else { break };
                let done = process_essay(essay, prior_attempts, config, provider, options, calls);
                if tx.send(done).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for completion in rx {
            match completion {
                Completion::Done { essay_id, attempts, record } => {
                    append_line(&mut record_file, &record, &rec_path)?;
                    let entry = JournalEntry { essay_id, status: JournalStatus::Done, attempts };
                    append_line(&mut journal, &entry, journal_path)?;
                    entries.insert(essay_id, entry);
                    records.insert(essay_id, *record);
                }
                Completion::Failed { essay_id, attempts, reason } => {
                    let entry = JournalEntry { essay_id, status: JournalStatus::Failed, attempts };
                    append_line(&mut journal, &entry, journal_path)?;
                    entries.insert(essay_id, entry);
                    eprintln!("essay {essay_id} failed after {attempts} attempts: {reason}");
                }
            }
        }
        Ok(())
    })?;
    drop(journal);
    drop(record_file);

    // compact both files into input order
    let mut out_records = Vec::new();
    let mut failed = Vec::new();
    let mut compact = Vec::new();
    for essay in essays {
        let entry = entries[&essay.essay_id].clone();
        match entry.status {
            JournalStatus::Done => out_records.push(records[&essay.essay_id].clone()),
            _ => failed.push(essay.essay_id),
        }
        compact.push(entry);
    }
    write_jsonl(journal_path, &compact)?;
    let kept: Vec<&RationaleRecord> = essays.iter().filter_map(|e| records.get(&e.essay_id)).collect();
    write_jsonl(&rec_path, &kept)?;

    Ok(BatchOutcome { records: out_records, failed, provider_calls: calls.into_inner(), journal: compact })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RationaleError> {
    let mut body = String::new();
    for item in items {
        body.push_str(&serde_json::to_string(item).expect("serializable"));
        body.push('\n');
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, body).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn process_essay(
    essay: &EssayRecord,
    prior_attempts: u32,
    config: &PromptConfig,
    provider: &dyn ChatProvider,
    options: &BatchOptions,
    calls: &AtomicUsize,
) -> Completion {
    let essay_id = essay.essay_id;
    let prompt = match build_prompt(essay, config) {
        Ok(p) => p,
        Err(e) => return Completion::Failed { essay_id, attempts: prior_attempts, reason: e.to_string() },
    };
    let request = ChatRequest {
        model: config.generator_id.clone(),
        messages: vec![ChatMessage { role: "user".into(), content: prompt }],
        temperature: config.temperature,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.jitter_seed ^ u64::from(essay_id).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut attempts = prior_attempts;
    let mut last_error = String::new();
    for retry in 0..options.max_attempts.max(1) {
        if retry > 0 {
            std::thread::sleep(backoff(options, retry - 1, &mut rng));
        }
        attempts += 1;
        calls.fetch_add(1, Ordering::Relaxed);
        match provider.complete(&request) {
            Ok(text) => {
                return match RationaleRecord::from_response(essay_id, &config.generator_id, &text) {
                    Ok(record) => Completion::Done { essay_id, attempts, record: Box::new(record) },
                    Err(e) => Completion::Failed { essay_id, attempts, reason: e.to_string() },
                };
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Completion::Failed { essay_id, attempts, reason: last_error }
}
