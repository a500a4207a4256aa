//! LLM scoring-rationale generation: prompt assembly, response parsing and
//! resumable batch execution against a chat-completion provider.

mod batch;
#[cfg(feature = "http")]
mod http;
mod parse;
mod prompt;

pub use batch::{
    run_batch, BatchOptions, BatchOutcome, ChatMessage, ChatProvider, ChatRequest, JournalEntry, JournalStatus,
    ProviderError,
};
#[cfg(feature = "http")]
pub use http::{HttpProvider, ProviderConfig};
pub use parse::parse_response;
pub use prompt::{
    build_prompt, default_temperature, PromptConfig, PROMPT6_RUBRIC, PROMPT6_SCORING_NOTES, PROMPT6_WRITING_PROMPT,
    ROLE_LINE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, LengthStats};

/// Consumer-model context limit the over-limit flag is measured against.
pub const TOKEN_LIMIT: usize = 512;

#[derive(Debug, Error)]
pub enum RationaleError {
    #[error("essay {0} has empty text")]
    EmptyEssay(u32),
    #[error("invalid prompt configuration: {0}")]
    Config(String),
    #[error("unparseable response ({reason}): {raw:?}")]
    Parse { reason: String, raw: String },
    #[error("journal {path} line {line}: {message}")]
    CorruptJournal { path: String, line: usize, message: String },
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no rationale records")]
    NoRecords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleRecord {
    pub essay_id: u32,
    pub generator_id: String,
    pub parsed_score: u8,
    pub rationale_text: String,
    pub word_count: usize,
    pub estimated_tokens: usize,
    pub over_limit: bool,
    pub raw_response: String,
}

/// `ceil(words × 1.35)` in integer arithmetic.
pub fn estimate_tokens(word_count: usize) -> usize {
    (word_count * 135).div_ceil(100)
}

impl RationaleRecord {
    pub fn from_response(essay_id: u32, generator_id: &str, raw: &str) -> Result<Self, RationaleError> {
        let (score, rationale) = parse_response(raw)?;
        let word_count = corpus::word_count(&rationale);
        let estimated_tokens = estimate_tokens(word_count);
        Ok(Self {
            essay_id,
            generator_id: generator_id.to_string(),
            parsed_score: score,
            rationale_text: rationale,
            word_count,
            estimated_tokens,
            over_limit: estimated_tokens > TOKEN_LIMIT,
            raw_response: raw.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RationaleStats {
    pub words: LengthStats,
    pub over_limit: usize,
}

pub fn rationale_stats(records: &[RationaleRecord]) -> Result<RationaleStats, RationaleError> {
    let words = corpus::length_stats_of(records.iter().map(|r| r.word_count)).map_err(|_| RationaleError::NoRecords)?;
    Ok(RationaleStats { words, over_limit: records.iter().filter(|r| r.over_limit).count() })
}

pub const RECORDS_HEADER: &str = "essay_id,generator_id,score,word_count,over_limit,rationale";

/// Comma-separated records with the rationale always quoted.
pub fn records_to_csv(records: &[RationaleRecord]) -> String {
    let mut out = String::from(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},\"{}\"\n",
            r.essay_id,
            r.generator_id,
            r.parsed_score,
            r.word_count,
            r.over_limit,
            r.rationale_text.replace('"', "\"\"")
        ));
    }
    out
}
