//! Command orchestration: ingest, rationales, evaluate, ensemble, report.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/split.csv                          essay_id,split
//! <out>/corpus_summary.txt
//! <out>/rationales/<generator>.csv         parsed rationales
//! <out>/tables/<caption>.csv               one result table each
//! <out>/ensemble/<caption>/<strategy>.csv  essay_id,blend,final
//! <out>/ensemble/<caption>/<strategy>.audit.json
//! <out>/report.md, <out>/report.json
//! ```

mod commands;
mod io;
mod report;

pub use commands::{cmd_ensemble, cmd_evaluate, cmd_ingest, cmd_report, IngestSummary};
#[cfg(feature = "http")]
pub use commands::{cmd_rationales, RationaleJob, RationaleSummary};
pub use io::{load_member_manifest, load_member_predictions, read_ensemble_output, MemberEntry};
pub use report::{ReportTable, TableKind, CAPTIONS};

use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::ensemble::{EnsembleError, EnsembleParams};
use crate::metrics::MetricError;
use crate::rationale::RationaleError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Rationale(#[from] RationaleError),
    #[error("{path}: {message}")]
    Data { path: String, message: String },
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("provider: {0}")]
    Provider(String),
}

impl HarnessError {
    /// 1 usage, 2 data, 3 provider.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Ensemble(EnsembleError::BadParameter(_)) => 1,
            HarnessError::Provider(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn data(path: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Data { path: path.into(), message: message.into() }
    }

    pub fn io(path: &std::path::Path) -> impl Fn(std::io::Error) -> Self + '_ {
        move |source| HarnessError::Io { path: path.display().to_string(), source }
    }
}

/// Settings shared by all commands.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub prompt: i64,
    pub seed: u64,
    pub ratios: [f64; 3],
    /// Split manifest; defaults to `<out>/split.csv`.
    pub manifest: Option<PathBuf>,
    /// Member manifest `model_id,source_tag,path`.
    pub members: Option<PathBuf>,
    pub out: PathBuf,
    pub ensemble: EnsembleParams,
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            corpus: corpus.into(),
            prompt: 6,
            seed: 42,
            ratios: [0.7, 0.1, 0.2],
            manifest: None,
            members: None,
            out: out.into(),
            ensemble: EnsembleParams::default(),
        }
    }

    pub fn split_manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.out.join("split.csv"))
    }

    pub fn members_path(&self) -> Result<&PathBuf, HarnessError> {
        self.members.as_ref().ok_or_else(|| HarnessError::Usage("--members is required".into()))
    }

    pub(crate) fn ensure_out(&self) -> Result<(), HarnessError> {
        std::fs::create_dir_all(&self.out).map_err(HarnessError::io(&self.out))
    }
}
