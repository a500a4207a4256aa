use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::HarnessError;
use crate::ensemble::{PredictionSet, SourceTag};

/// One row of the member manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberEntry {
    pub model_id: String,
    pub source: SourceTag,
    /// Resolved against the manifest's directory.
    pub path: PathBuf,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, HarnessError> {
    let file = std::fs::File::open(path).map_err(HarnessError::io(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn expect_header(reader: &mut csv::Reader<std::fs::File>, path: &Path, expected: &[&str]) -> Result<(), HarnessError> {
    let header = reader.headers().map_err(|e| HarnessError::data(path.display().to_string(), e.to_string()))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(HarnessError::data(
            path.display().to_string(),
            format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// Reads `model_id,source_tag,path`.
pub fn load_member_manifest(path: &Path) -> Result<Vec<MemberEntry>, HarnessError> {
    let shown = path.display().to_string();
    let mut reader = csv_reader(path)?;
    expect_header(&mut reader, path, &["model_id", "source_tag", "path"])?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries: Vec<MemberEntry> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| HarnessError::data(&shown, format!("line {line}: {e}")))?;
        if row.len() != 3 {
            return Err(HarnessError::data(&shown, format!("line {line}: expected 3 fields")));
        }
        let source = SourceTag::parse(&row[1])
            .ok_or_else(|| HarnessError::data(&shown, format!("line {line}: unknown source_tag `{}`", &row[1])))?;
        let entry = MemberEntry { model_id: row[0].to_string(), source, path: base.join(&row[2]) };
        if entries.iter().any(|e| e.model_id == entry.model_id && e.source == entry.source) {
            return Err(HarnessError::data(&shown, format!("line {line}: duplicate member {}", entry.model_id)));
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(HarnessError::data(&shown, "no members listed"));
    }
    Ok(entries)
}

/// Reads `essay_id,prediction` into a clipped [`PredictionSet`].
pub fn load_member_predictions(entry: &MemberEntry) -> Result<PredictionSet, HarnessError> {
    let path = &entry.path;
    let shown = path.display().to_string();
    let mut reader = csv_reader(path)?;
    expect_header(&mut reader, path, &["essay_id", "prediction"])?;
    let mut preds = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| HarnessError::data(&shown, format!("line {line}: {e}")))?;
        let id: u32 = row
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| HarnessError::data(&shown, format!("line {line}: bad essay_id")))?;
        let value: f64 = row
            .get(1)
            .and_then(|v| v.parse().ok())
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| HarnessError::data(&shown, format!("line {line}: bad prediction")))?;
        if preds.insert(id, value).is_some() {
            return Err(HarnessError::data(&shown, format!("line {line}: essay_id {id} repeated")));
        }
    }
    Ok(PredictionSet::new(entry.model_id.clone(), entry.source, preds)?)
}

/// Checks coverage of `ids`, listing every missing essay in the error.
pub(crate) fn require_coverage(set: &PredictionSet, ids: &[u32], path: &Path) -> Result<Vec<f64>, HarnessError> {
    set.values_for(ids).map_err(|e| HarnessError::data(path.display().to_string(), e.to_string()))
}

/// Shortest round-trip formatting keeps stored blends bit-exact.
pub(crate) fn ensemble_output_csv(ids: &[u32], blend: &[f64], finals: &[u8]) -> String {
    let mut out = String::from("essay_id,blend,final\n");
    for ((id, b), f) in ids.iter().zip(blend).zip(finals) {
        out.push_str(&format!("{id},{b:?},{f}\n"));
    }
    out
}

/// Reads back `essay_id,blend,final`.
/// Essay ids, continuous blends and final scores, row-aligned.
pub type StoredOutput = (Vec<u32>, Vec<f64>, Vec<u8>);

pub fn read_ensemble_output(path: &Path) -> Result<StoredOutput, HarnessError> {
    let shown = path.display().to_string();
    let mut reader = csv_reader(path)?;
    expect_header(&mut reader, path, &["essay_id", "blend", "final"])?;
    let (mut ids, mut blend, mut finals) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| HarnessError::data(&shown, e.to_string()))?;
        let bad = || HarnessError::data(&shown, format!("line {}: malformed row", i + 2));
        ids.push(row.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?);
        blend.push(row.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?);
        finals.push(row.get(2).and_then(|v| v.parse().ok()).ok_or_else(bad)?);
    }
    Ok((ids, blend, finals))
}

pub(crate) fn write(path: &Path, body: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    }
    std::fs::write(path, body).map_err(HarnessError::io(path))
}
