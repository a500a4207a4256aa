use std::path::Path;

use serde::Serialize;

use super::io::{self, require_coverage};
use super::report::{self, ReportTable, TableKind};
use super::{load_member_manifest, load_member_predictions, HarnessError, RunConfig};
use crate::corpus::{self, EssayRecord, LabeledSplit, LengthStats, ScoreHistogram, Split, SplitAssignment};
use crate::ensemble::{self, EnsembleOutput, MemberFilter, PredictionSet, SourceTag, Strategy};
use crate::metrics::EvalReport;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub essays: usize,
    pub histogram: ScoreHistogram,
    pub lengths: LengthStats,
    pub split_sizes: (usize, usize, usize),
}

impl IngestSummary {
    pub fn render(&self, prompt: i64) -> String {
        let (tr, va, te) = self.split_sizes;
        format!(
            "Prompt {prompt}: {} essays\n\n{}\nEssay length: {}\nSplit: train {tr} / val {va} / test {te}\n",
            self.essays,
            self.histogram.to_table(),
            self.lengths,
        )
    }
}

fn load_corpus(config: &RunConfig) -> Result<Vec<EssayRecord>, HarnessError> {
    Ok(corpus::load_corpus(&config.corpus, config.prompt)?)
}

fn load_split(config: &RunConfig, corpus: &[EssayRecord]) -> Result<SplitAssignment, HarnessError> {
    let path = config.split_manifest_path();
    let text = std::fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
    let split = SplitAssignment::from_csv(&text, config.seed)?;
    let known: std::collections::HashSet<u32> = corpus.iter().map(|e| e.essay_id).collect();
    if let Some(id) = split.assignment.keys().find(|id| !known.contains(id)) {
        return Err(HarnessError::data(path.display().to_string(), format!("essay_id {id} is not in the corpus")));
    }
    Ok(split)
}

/// Reads the corpus, writes the split manifest and a distribution summary.
pub fn cmd_ingest(config: &RunConfig) -> Result<IngestSummary, HarnessError> {
    let essays = load_corpus(config)?;
    let split = corpus::split(&essays, seed::derive(config.seed, "split"), config.ratios)?;
    config.ensure_out()?;
    io::write(&config.split_manifest_path(), &split.to_csv())?;
    let summary = IngestSummary {
        essays: essays.len(),
        histogram: corpus::score_distribution(&essays),
        lengths: corpus::length_stats(&essays)?,
        split_sizes: split.sizes(),
    };
    io::write(&config.out.join("corpus_summary.txt"), &summary.render(config.prompt))?;
    Ok(summary)
}

fn load_members(config: &RunConfig) -> Result<Vec<(PredictionSet, std::path::PathBuf)>, HarnessError> {
    load_member_manifest(config.members_path()?)?
        .into_iter()
        .map(|entry| load_member_predictions(&entry).map(|set| (set, entry.path)))
        .collect()
}

/// Scores every member on the test split; one table per source.
pub fn cmd_evaluate(config: &RunConfig) -> Result<Vec<ReportTable>, HarnessError> {
    let essays = load_corpus(config)?;
    let split = load_split(config, &essays)?;
    let test = LabeledSplit::from_corpus(&essays, &split, Split::Test)?;
    let members = load_members(config)?;
    let truth: Vec<usize> = test.scores.iter().map(|&s| s as usize).collect();

    let mut tables = Vec::new();
    for source in SourceTag::ALL {
        let mut rows = Vec::new();
        for (set, path) in members.iter().filter(|(m, _)| m.source == source) {
            let preds = require_coverage(set, &test.ids, path)?;
            let finals = preds.iter().map(|&p| ensemble::finalize(p).map(usize::from)).collect::<Result<Vec<_>, _>>()?;
            rows.push(EvalReport::evaluate(&set.model_id, source.as_str(), &truth, &finals, Some(&preds))?);
        }
        let table = ReportTable::new(TableKind::Members(source), rows);
        config.ensure_out()?;
        table.write(&config.out)?;
        tables.push(table);
    }
    Ok(tables)
}

#[derive(Serialize)]
struct MemberStat<'a> {
    member: String,
    val_qwk: f64,
    val_spearman: f64,
    val_pearson: f64,
    #[serde(skip)]
    _set: &'a PredictionSet,
}

#[derive(Serialize)]
struct AuditFile<'a> {
    caption: &'a str,
    strategy: &'a str,
    cv_seed: u64,
    members: Vec<MemberStat<'a>>,
    audit: &'a ensemble::EnsembleAudit,
}

type StrategyResult = (Strategy, Result<EnsembleOutput, String>);

fn strategy_paths(out: &Path, filter: MemberFilter, strategy: Strategy) -> (std::path::PathBuf, std::path::PathBuf) {
    let dir = out.join("ensemble").join(filter.caption());
    (dir.join(format!("{}.csv", strategy.slug())), dir.join(format!("{}.audit.json", strategy.slug())))
}

/// Fits every strategy on the validation split for each member filter and
/// reports on the test split.
///
/// Fitting sees validation truth only. Test truth is loaded after every
/// blend has been written.
pub fn cmd_ensemble(config: &RunConfig) -> Result<Vec<ReportTable>, HarnessError> {
    config.ensemble.validate()?;
    let essays = load_corpus(config)?;
    let split = load_split(config, &essays)?;
    let val = LabeledSplit::from_corpus(&essays, &split, Split::Validation)?;
    let test_ids = split.ids(Split::Test);

    let mut members = Vec::new();
    for (set, path) in load_members(config)? {
        require_coverage(&set, &val.ids, &path)?;
        require_coverage(&set, &test_ids, &path)?;
        members.push(set.with_validation_stats(&val.ids, &val.scores)?);
    }

    let cv_seed = seed::derive(config.seed, "stacking-cv");
    let mut fitted: Vec<(MemberFilter, Vec<StrategyResult>)> = Vec::new();
    for filter in MemberFilter::ALL {
        let subset: Vec<PredictionSet> = members.iter().filter(|m| filter.admits(m.source)).cloned().collect();
        if subset.is_empty() {
            return Err(HarnessError::Usage(format!("no members for filter {}", filter.caption())));
        }
        let mut outputs = Vec::new();
        for strategy in Strategy::ALL {
            let result = ensemble::run_strategy(strategy, &subset, &val.ids, &val.scores, &test_ids, &config.ensemble, cv_seed);
            let (csv_path, audit_path) = strategy_paths(&config.out, filter, strategy);
            match &result {
                Ok(output) => {
                    io::write(&csv_path, &io::ensemble_output_csv(&output.essay_ids, &output.blend, &output.finals))?;
                    let mut stats: Vec<MemberStat> = subset
                        .iter()
                        .map(|m| MemberStat {
                            member: m.key().to_string(),
                            val_qwk: m.val_qwk,
                            val_spearman: m.val_spearman,
                            val_pearson: m.val_pearson,
                            _set: m,
                        })
                        .collect();
                    stats.sort_by(|a, b| a.member.cmp(&b.member));
                    let audit = AuditFile {
                        caption: filter.caption(),
                        strategy: strategy.label(),
                        cv_seed,
                        members: stats,
                        audit: &output.audit,
                    };
                    io::write(&audit_path, &(serde_json::to_string_pretty(&audit).expect("serializable") + "\n"))?;
                }
                Err(e) => {
                    let _ = std::fs::remove_file(&csv_path);
                    io::write(&audit_path, &(serde_json::json!({ "strategy": strategy.label(), "error": e.to_string() }).to_string() + "\n"))?;
                }
            }
            outputs.push((strategy, result.map_err(|e| e.to_string())));
        }
        fitted.push((filter, outputs));
    }

    // metric time
    let test = LabeledSplit::from_corpus(&essays, &split, Split::Test)?;
    let truth: Vec<usize> = test.scores.iter().map(|&s| s as usize).collect();
    let mut tables = Vec::new();
    for (filter, outputs) in fitted {
        let rows = outputs
            .into_iter()
            .map(|(strategy, result)| match result {
                Ok(out) => {
                    debug_assert_eq!(out.essay_ids, test.ids);
                    let finals: Vec<usize> = out.finals.iter().map(|&f| f as usize).collect();
                    EvalReport::evaluate(strategy.label(), filter.caption(), &truth, &finals, Some(&out.blend))
                }
                Err(_) => Ok(EvalReport::not_run(strategy.label(), filter.caption())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let table = ReportTable::new(TableKind::Ensemble(filter), rows);
        table.write(&config.out)?;
        tables.push(table);
    }
    Ok(tables)
}

/// Writes `report.md` and `report.json` from the stored tables.
pub fn cmd_report(config: &RunConfig) -> Result<(String, String), HarnessError> {
    config.ensure_out()?;
    let (md, json) = report::render(&config.out)?;
    io::write(&config.out.join("report.md"), &md)?;
    io::write(&config.out.join("report.json"), &json)?;
    Ok((md, json))
}

#[cfg(feature = "http")]
pub use self::rationales::{cmd_rationales, RationaleJob, RationaleSummary};

#[cfg(feature = "http")]
mod rationales {
    use std::path::PathBuf;

    use serde::{Deserialize, Serialize};

    use super::*;
    use crate::metrics;
    use crate::rationale::{self, BatchOutcome, ChatProvider, PromptConfig, ProviderConfig, RationaleStats};

    /// JSON job description for the `rationales` command. Prompt fields
    /// override the generator's Prompt 6 preset; an empty `scoring_notes`
    /// removes the notes.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct RationaleJob {
        pub generator_id: String,
        #[serde(default)]
        pub temperature: Option<f64>,
        #[serde(default)]
        pub passage: Option<String>,
        #[serde(default)]
        pub passage_file: Option<PathBuf>,
        #[serde(default)]
        pub writing_prompt: Option<String>,
        #[serde(default)]
        pub rubric_text: Option<String>,
        #[serde(default)]
        pub scoring_notes: Option<String>,
        #[serde(default)]
        pub succinctness_addendum: Option<bool>,
        #[serde(default)]
        pub limit: Option<usize>,
        #[serde(default)]
        pub provider: ProviderConfig,
    }

    impl RationaleJob {
        /// Relative `passage_file` paths resolve against `base`.
        pub fn prompt_config(&self, base: &Path) -> Result<PromptConfig, HarnessError> {
            let passage = match (&self.passage, &self.passage_file) {
                (Some(p), _) => p.clone(),
                (None, Some(file)) => {
                    let path = base.join(file);
                    std::fs::read_to_string(&path).map_err(HarnessError::io(&path))?
                }
                (None, None) => return Err(HarnessError::Usage("job needs `passage` or `passage_file`".into())),
            };
            let mut c = PromptConfig::prompt6(&self.generator_id, passage);
            if let Some(t) = self.temperature {
                c.temperature = t;
            }
            if let Some(w) = &self.writing_prompt {
                c.writing_prompt = w.clone();
            }
            if let Some(r) = &self.rubric_text {
                c.rubric_text = r.clone();
            }
            if let Some(n) = &self.scoring_notes {
                c.scoring_notes = (!n.trim().is_empty()).then(|| n.clone());
            }
            if let Some(a) = self.succinctness_addendum {
                c.succinctness_addendum = a;
            }
            c.validate()?;
            Ok(c)
        }
    }

    #[derive(Debug, Clone, PartialEq, Serialize)]
    pub struct RationaleSummary {
        pub generator_id: String,
        pub records: usize,
        pub failed: usize,
        pub provider_calls: usize,
        pub stats: Option<RationaleStats>,
        /// QWK of the generator's own scores against resolution scores.
        pub direct_qwk_all: Option<f64>,
        pub direct_qwk_test: Option<f64>,
    }

    fn direct_qwk(records: &[rationale::RationaleRecord], essays: &[EssayRecord], ids: Option<&[u32]>) -> Option<f64> {
        let truth: std::collections::HashMap<u32, u8> = essays.iter().map(|e| (e.essay_id, e.resolution_score)).collect();
        let (t, p): (Vec<usize>, Vec<usize>) = records
            .iter()
            .filter(|r| ids.is_none_or(|ids| ids.binary_search(&r.essay_id).is_ok()))
            .filter_map(|r| truth.get(&r.essay_id).map(|&t| (t as usize, r.parsed_score as usize)))
            .unzip();
        metrics::qwk(&t, &p, 5).ok()
    }

    /// Runs the rationale batch over the corpus and writes
    /// `<out>/rationales/<generator>.csv`, its journal and a summary.
    pub fn cmd_rationales(
        config: &RunConfig,
        job: &RationaleJob,
        job_dir: &Path,
        provider: &dyn ChatProvider,
    ) -> Result<(RationaleSummary, BatchOutcome), HarnessError> {
        let prompt = job.prompt_config(job_dir)?;
        let mut essays = load_corpus(config)?;
        if let Some(limit) = job.limit {
            essays.truncate(limit);
        }
        let dir = config.out.join("rationales");
        std::fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
        let stem = job.generator_id.replace(['/', '\\', ' '], "_");
        let journal = dir.join(format!("{stem}.journal.jsonl"));
        let options = job.provider.batch_options(seed::derive(config.seed, "backoff"));
        let outcome = rationale::run_batch(&essays, &prompt, provider, &journal, &options)?;
        io::write(&dir.join(format!("{stem}.csv")), &rationale::records_to_csv(&outcome.records))?;

        let test_ids = std::fs::read_to_string(config.split_manifest_path())
            .ok()
            .and_then(|t| SplitAssignment::from_csv(&t, config.seed).ok())
            .map(|s| s.ids(Split::Test));
        let summary = RationaleSummary {
            generator_id: job.generator_id.clone(),
            records: outcome.records.len(),
            failed: outcome.failed.len(),
            provider_calls: outcome.provider_calls,
            stats: rationale::rationale_stats(&outcome.records).ok(),
            direct_qwk_all: direct_qwk(&outcome.records, &essays, None),
            direct_qwk_test: test_ids.as_deref().and_then(|ids| direct_qwk(&outcome.records, &essays, Some(ids))),
        };
        io::write(
            &dir.join(format!("{stem}.summary.json")),
            &(serde_json::to_string_pretty(&summary).expect("serializable") + "\n"),
        )?;
        Ok((summary, outcome))
    }
}
