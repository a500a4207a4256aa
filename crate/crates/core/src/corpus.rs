//! Essay corpus ingestion, resolution scores, seeded splits and summary
//! statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCORE_LEVELS: usize = 5;

const REQUIRED_COLUMNS: [&str; 5] = ["essay_id", "essay_set", "essay", "rater1_domain1", "rater2_domain1"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("header is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("no essays for prompt {0}")]
    EmptyAfterFilter(i64),
    #[error("corpus is empty")]
    Empty,
    #[error("duplicate essay_id {0}")]
    DuplicateId(u32),
    #[error("split needs at least 3 essays, got {0}")]
    TooSmall(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("split manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EssayRecord {
    pub essay_id: u32,
    pub prompt_id: i64,
    pub text: String,
    pub rater1_score: u8,
    pub rater2_score: u8,
    pub resolution_score: u8,
}

impl EssayRecord {
    /// Builds a record whose resolution score is the higher rating.
    pub fn new(essay_id: u32, prompt_id: i64, text: impl Into<String>, rater1: u8, rater2: u8) -> Self {
        Self {
            essay_id,
            prompt_id,
            text: text.into(),
            rater1_score: rater1,
            rater2_score: rater2,
            resolution_score: rater1.max(rater2),
        }
    }

    pub fn word_count(&self) -> usize {
        word_count(&self.text)
    }
}

/// Maximal runs of non-whitespace.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn parse_score(field: &str, name: &str, line: usize) -> Result<u8, CorpusError> {
    let value: i64 = field.trim().parse().map_err(|_| CorpusError::Malformed {
        line,
        message: format!("{name} `{}` is not an integer", field.trim()),
    })?;
    if !(0..SCORE_LEVELS as i64).contains(&value) {
        return Err(CorpusError::Malformed { line, message: format!("{name} {value} outside 0-4") });
    }
    Ok(value as u8)
}

/// Reads a tab-separated ASAP-style file and keeps rows of one prompt.
///
/// Bytes that are not valid UTF-8 are replaced with U+FFFD.
pub fn load_corpus(path: &Path, prompt_filter: i64) -> Result<Vec<EssayRecord>, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    parse_corpus(&String::from_utf8_lossy(&bytes), prompt_filter)
}

pub fn parse_corpus(content: &str, prompt_filter: i64) -> Result<Vec<EssayRecord>, CorpusError> {
    let mut lines = content.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.split('\t').map(str::trim).collect(),
        None => return Err(CorpusError::Empty),
    };
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = header.iter().position(|h| *h == name).ok_or(CorpusError::MissingColumn(name))?;
    }
    let [c_id, c_set, c_text, c_r1, c_r2] = cols;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != header.len() {
            return Err(CorpusError::Malformed {
                line,
                message: format!("expected {} columns, found {}", header.len(), fields.len()),
            });
        }
        let set: i64 = fields[c_set].trim().parse().map_err(|_| CorpusError::Malformed {
            line,
            message: format!("essay_set `{}` is not an integer", fields[c_set].trim()),
        })?;
        if set != prompt_filter {
            continue;
        }
        let essay_id: u32 = fields[c_id].trim().parse().map_err(|_| CorpusError::Malformed {
            line,
            message: format!("essay_id `{}` is not an integer", fields[c_id].trim()),
        })?;
        let r1 = parse_score(fields[c_r1], "rater1_domain1", line)?;
        let r2 = parse_score(fields[c_r2], "rater2_domain1", line)?;
        let text = fields[c_text].trim();
        if text.is_empty() {
            return Err(CorpusError::Malformed { line, message: "essay text is empty".into() });
        }
        if !seen.insert(essay_id) {
            return Err(CorpusError::DuplicateId(essay_id));
        }
        records.push(EssayRecord::new(essay_id, set, text, r1, r2));
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyAfterFilter(prompt_filter));
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[serde(rename = "val")]
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "train" => Some(Split::Train),
            "val" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub assignment: BTreeMap<u32, Split>,
}

impl SplitAssignment {
    /// Essay ids in a split, ascending.
    pub fn ids(&self, split: Split) -> Vec<u32> {
        self.assignment.iter().filter(|(_, s)| **s == split).map(|(id, _)| *id).collect()
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.assignment.values().filter(|v| **v == s).count();
        (count(Split::Train), count(Split::Validation), count(Split::Test))
    }

    /// `essay_id,split` with a header, one row per essay in id order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("essay_id,split\n");
        for (id, split) in &self.assignment {
            out.push_str(&format!("{id},{split}\n"));
        }
        out
    }

    pub fn from_csv(content: &str, seed: u64) -> Result<Self, CorpusError> {
        let mut assignment = BTreeMap::new();
        for (idx, line) in content.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || (idx == 0 && line.trim() == "essay_id,split") {
                continue;
            }
            let bad = |message: String| CorpusError::Manifest { line: line_no, message };
            let (id, split) = line.split_once(',').ok_or_else(|| bad("expected `essay_id,split`".into()))?;
            let id: u32 = id.trim().parse().map_err(|_| bad(format!("bad essay_id `{id}`")))?;
            let split = Split::parse(split).ok_or_else(|| bad(format!("unknown split `{split}`")))?;
            if assignment.insert(id, split).is_some() {
                return Err(bad(format!("essay_id {id} listed twice")));
            }
        }
        Ok(Self { seed, assignment })
    }
}

/// Split sizes: validation and test are floored, train takes the remainder.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize, usize) {
    // the epsilon absorbs representation error such as 10 × 0.1
    let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let val = floor(ratios[1]);
    let test = floor(ratios[2]);
    (n - val - test, val, test)
}

/// Seeded uniform shuffle of the id-sorted corpus, then contiguous slices
/// train, validation, test.
pub fn split(corpus: &[EssayRecord], seed: u64, ratios: [f64; 3]) -> Result<SplitAssignment, CorpusError> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }
    if corpus.len() < 3 {
        return Err(CorpusError::TooSmall(corpus.len()));
    }
    let mut ids: Vec<u32> = corpus.iter().map(|r| r.essay_id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CorpusError::DuplicateId(w[0]));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, val, _) = split_sizes(ids.len(), ratios);
    let assignment = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let s = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Validation
            } else {
                Split::Test
            };
            (id, s)
        })
        .collect();
    Ok(SplitAssignment { seed, assignment })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub counts: [usize; SCORE_LEVELS],
}

impl ScoreHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn percents(&self) -> [f64; SCORE_LEVELS] {
        let total = self.total().max(1) as f64;
        self.counts.map(|c| 100.0 * c as f64 / total)
    }

    /// Score, count and percent rows.
    pub fn to_table(&self) -> String {
        let mut out = String::from("Score\tN\tPercent\n");
        for (score, (count, pct)) in self.counts.iter().zip(self.percents()).enumerate() {
            out.push_str(&format!("{score}\t{count}\t{pct:.1}\n"));
        }
        out.push_str(&format!("Total\t{}\t100.0\n", self.total()));
        out
    }
}

pub fn score_distribution(corpus: &[EssayRecord]) -> ScoreHistogram {
    let mut counts = [0usize; SCORE_LEVELS];
    for r in corpus {
        counts[r.resolution_score as usize] += 1;
    }
    ScoreHistogram { counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

impl fmt::Display for LengthStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "min {} / max {} / mean {:.1} words", self.min, self.max, self.mean)
    }
}

pub fn length_stats_of(counts: impl IntoIterator<Item = usize>) -> Result<LengthStats, CorpusError> {
    let (mut min, mut max, mut sum, mut n) = (usize::MAX, 0, 0usize, 0usize);
    for c in counts {
        min = min.min(c);
        max = max.max(c);
        sum += c;
        n += 1;
    }
    if n == 0 {
        return Err(CorpusError::Empty);
    }
    Ok(LengthStats { min, max, mean: sum as f64 / n as f64 })
}

pub fn length_stats(corpus: &[EssayRecord]) -> Result<LengthStats, CorpusError> {
    length_stats_of(corpus.iter().map(EssayRecord::word_count))
}

/// Essay ids and resolution scores for one split, ids ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSplit {
    pub split: Split,
    pub ids: Vec<u32>,
    pub scores: Vec<u8>,
}

impl LabeledSplit {
    pub fn from_corpus(corpus: &[EssayRecord], assignment: &SplitAssignment, split: Split) -> Result<Self, CorpusError> {
        let by_id: BTreeMap<u32, u8> = corpus.iter().map(|r| (r.essay_id, r.resolution_score)).collect();
        let ids = assignment.ids(split);
        let scores = ids
            .iter()
            .map(|id| {
                by_id.get(id).copied().ok_or(CorpusError::Manifest {
                    line: 0,
                    message: format!("essay_id {id} in split manifest is not in the corpus"),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { split, ids, scores })
    }
}
