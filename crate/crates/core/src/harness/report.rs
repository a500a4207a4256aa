use std::path::Path;

use serde::Serialize;

use super::{io, HarnessError};
use crate::ensemble::{MemberFilter, SourceTag};
use crate::metrics::{sort_reports, EvalReport, REPORT_HEADER};

/// The seven result tables, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TableKind {
    Members(SourceTag),
    Ensemble(MemberFilter),
}

pub const CAPTIONS: [&str; 7] = ["essay", "rationale-A", "rationale-B", "ens-essay", "ens-essay+B", "ens-essay+A", "ens-all"];

impl TableKind {
    pub const ALL: [TableKind; 7] = [
        TableKind::Members(SourceTag::Essay),
        TableKind::Members(SourceTag::RationaleA),
        TableKind::Members(SourceTag::RationaleB),
        TableKind::Ensemble(MemberFilter::EssayOnly),
        TableKind::Ensemble(MemberFilter::EssayPlusB),
        TableKind::Ensemble(MemberFilter::EssayPlusA),
        TableKind::Ensemble(MemberFilter::All),
    ];

    pub fn caption(self) -> &'static str {
        match self {
            TableKind::Members(s) => s.as_str(),
            TableKind::Ensemble(f) => f.caption(),
        }
    }

    pub fn title(self) -> String {
        match self {
            TableKind::Members(SourceTag::Essay) => "Model Performance for Essay-Based Models".into(),
            TableKind::Members(s) => format!("Model Performance for Rationale-Based Models ({s})"),
            TableKind::Ensemble(MemberFilter::EssayOnly) => "Model Performance for Ensemble Models with Essays only".into(),
            TableKind::Ensemble(MemberFilter::EssayPlusA) => {
                "Model Performance for Ensemble Models with Essays and Rationales (rationale-A)".into()
            }
            TableKind::Ensemble(MemberFilter::EssayPlusB) => {
                "Model Performance for Ensemble Models with Essays and Rationales (rationale-B)".into()
            }
            TableKind::Ensemble(MemberFilter::All) => "Model Performance for Ensemble Models with Essays and both Rationales".into(),
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.caption())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub kind: TableKind,
    pub rows: Vec<EvalReport>,
}

impl ReportTable {
    /// Rows are sorted by QWK descending.
    pub fn new(kind: TableKind, mut rows: Vec<EvalReport>) -> Self {
        sort_reports(&mut rows);
        Self { kind, rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv_row());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), HarnessError> {
        io::write(&out_dir.join("tables").join(self.kind.file_name()), &self.to_csv())
    }
}

fn markdown_table(csv: &str) -> String {
    let mut lines = csv.lines();
    lines.next();
    let mut out = String::from(
        "| # | Model | QWK | Spearman Correlation | F1_score_0 | F1_score_1 | F1_score_2 | F1_score_3 | F1_score_4 |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let mut cells = vec![(i + 1).to_string(), fields[0].to_string()];
        cells.extend(fields.iter().skip(2).map(|s| s.to_string()));
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    out
}

#[derive(Serialize)]
struct JsonTable<'a> {
    caption: &'a str,
    title: String,
    status: &'a str,
    header: Vec<&'a str>,
    rows: Vec<Vec<&'a str>>,
}

/// Builds `report.md` and `report.json` from whatever tables exist under
/// `<out>/tables`. Missing tables get a "not run" placeholder.
pub(crate) fn render(out_dir: &Path) -> Result<(String, String), HarnessError> {
    let mut contents = Vec::new();
    for kind in TableKind::ALL {
        let path = out_dir.join("tables").join(kind.file_name());
        let body = if path.exists() { Some(std::fs::read_to_string(&path).map_err(HarnessError::io(&path))?) } else { None };
        contents.push((kind, body));
    }

    let mut md = String::from("# Essay scoring results\n\n");
    md.push_str("QWK is computed on integer scores; Spearman correlation on continuous predictions. ");
    md.push_str("`NA` marks an undefined metric (constant predictions).\n");
    let mut tables = Vec::new();
    for (i, (kind, body)) in contents.iter().enumerate() {
        md.push_str(&format!("\n## Table {}. {} (`{}`)\n\n", i + 1, kind.title(), kind.caption()));
        match body {
            Some(csv) => md.push_str(&markdown_table(csv)),
            None => md.push_str("_not run_\n"),
        }
        let (status, header, rows) = match body {
            Some(csv) => {
                let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
                let header = lines.next().map(|h| h.split(',').collect()).unwrap_or_default();
                ("ok", header, lines.map(|l| l.split(',').collect()).collect())
            }
            None => ("not run", Vec::new(), Vec::new()),
        };
        tables.push(JsonTable { caption: kind.caption(), title: kind.title(), status, header, rows });
    }
    let json = serde_json::to_string_pretty(&serde_json::json!({ "tables": tables })).expect("serializable");
    Ok((md, json + "\n"))
}
