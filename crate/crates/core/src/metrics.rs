//! Agreement and classification metrics for ordinal essay scores.
//!
//! Quadratic-weighted kappa is the headline metric. The binary kappa in
//! [`binary_kappa`] is kept as a literal two-by-two formula and is used for
//! per-class diagnostics. Counts-based arithmetic is carried out in integers
//! and divided once at the end, so values that are equal as rationals
//! compare equal as `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no items to score")]
    Empty,
    #[error("length mismatch: {truth} truth labels vs {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {label} at position {index} outside 0..{k}")]
    LabelOutOfRange { label: i64, index: usize, k: usize },
    #[error("number of classes must be at least 2, got {0}")]
    TooFewClasses(usize),
    #[error("kappa undefined: expected disagreement is zero")]
    UndefinedKappa,
    #[error("correlation undefined: {0} sequence is constant")]
    UndefinedCorrelation(&'static str),
}

/// K×K counts, rows are truth and columns are prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// Builds a matrix from row-major counts.
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self, MetricError> {
        if k < 2 {
            return Err(MetricError::TooFewClasses(k));
        }
        if counts.len() != k * k {
            return Err(MetricError::LengthMismatch {
                truth: k * k,
                pred: counts.len(),
            });
        }
        Ok(Self { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.k).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.k).all(|t| (0..self.k).all(|p| t == p || self.get(t, p) == 0))
    }

    /// One-vs-rest binarization for `class`.
    pub fn binarize(&self, class: usize) -> BinaryCounts {
        let tp = self.get(class, class);
        let fp = self.col_sum(class) - tp;
        let fn_ = self.row_sum(class) - tp;
        let tn = self.total() - tp - fp - fn_;
        BinaryCounts { tp, fp, tn, fn_ }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl BinaryCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_labels(labels: &[usize], k: usize) -> Result<(), MetricError> {
    match labels.iter().position(|&l| l >= k) {
        Some(index) => Err(MetricError::LabelOutOfRange {
            label: labels[index] as i64,
            index,
            k,
        }),
        None => Ok(()),
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix, MetricError> {
    if k < 2 {
        return Err(MetricError::TooFewClasses(k));
    }
    if truth.len() != pred.len() {
        return Err(MetricError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    check_labels(truth, k)?;
    check_labels(pred, k)?;
    let mut counts = vec![0u64; k * k];
    for (&t, &p) in truth.iter().zip(pred) {
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

/// Quadratic-weighted kappa over `k` ordinal classes.
pub fn qwk(truth: &[usize], pred: &[usize], k: usize) -> Result<f64, MetricError> {
    qwk_from_confusion(&confusion(truth, pred, k)?)
}

/// `1 - Σ w·O / Σ w·E` with `w_ij = (i-j)²/(k-1)²` and `E` from the marginals.
///
/// Both sums are scaled by `n·(k-1)²` so they are exact integers.
pub fn qwk_from_confusion(cm: &ConfusionMatrix) -> Result<f64, MetricError> {
    let k = cm.k();
    let n = cm.total() as u128;
    if n == 0 {
        return Err(MetricError::Empty);
    }
    let rows: Vec<u128> = (0..k).map(|i| cm.row_sum(i) as u128).collect();
    let cols: Vec<u128> = (0..k).map(|j| cm.col_sum(j) as u128).collect();
    let mut observed: u128 = 0;
    let mut expected: u128 = 0;
    for (i, &row) in rows.iter().enumerate() {
        for (j, &col) in cols.iter().enumerate() {
            let w = (i.abs_diff(j) * i.abs_diff(j)) as u128;
            observed += w * cm.get(i, j) as u128 * n;
            expected += w * row * col;
        }
    }
    if expected == 0 {
        return Err(MetricError::UndefinedKappa);
    }
    Ok((expected as i128 - observed as i128) as f64 / expected as f64)
}

/// The two-by-two kappa written in terms of TP/FP/TN/FN.
pub fn binary_kappa(c: BinaryCounts) -> Result<f64, MetricError> {
    let (tp, fp, tn, fn_) = (c.tp as i128, c.fp as i128, c.tn as i128, c.fn_ as i128);
    let numerator = 2 * (tp * tn - fn_ * fp);
    let denominator = (tp + fp) * (fp + tn) + (tp + fn_) * (fn_ + tn);
    if denominator == 0 {
        return Err(MetricError::UndefinedKappa);
    }
    Ok(numerator as f64 / denominator as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio_or_zero(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 for each class, one-vs-rest. A 0/0 resolves to 0.
pub fn per_class_prf(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..cm.k())
        .map(|class| {
            let b = cm.binarize(class);
            ClassScores {
                precision: ratio_or_zero(b.tp, b.tp + b.fp),
                recall: ratio_or_zero(b.tp, b.tp + b.fn_),
                f1: ratio_or_zero(2 * b.tp, 2 * b.tp + b.fp + b.fn_),
            }
        })
        .collect()
}

/// Average ranks, 1-based; tied values share the mean of their block.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            truth: x.len(),
            pred: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MetricError::Empty);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricError::UndefinedCorrelation("first"));
    }
    if syy == 0.0 {
        return Err(MetricError::UndefinedCorrelation("second"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            truth: x.len(),
            pred: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MetricError::Empty);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Which values Spearman was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpearmanBasis {
    Continuous,
    Integer,
}

/// One row of a results table. Undefined metrics are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub source: String,
    pub qwk: Option<f64>,
    pub spearman: Option<f64>,
    pub f1_per_class: Vec<f64>,
    pub spearman_basis: SpearmanBasis,
}

pub const REPORT_HEADER: &str = "model_id,source,qwk,spearman,f1_0,f1_1,f1_2,f1_3,f1_4";

fn fixed4(v: Option<f64>) -> String {
    match v {
        // -0.0000 would otherwise leak out of tiny negative values
        Some(x) if x.abs() < 0.00005 => "0.0000".to_string(),
        Some(x) => format!("{x:.4}"),
        None => "NA".to_string(),
    }
}

impl EvalReport {
    /// Evaluates integer scores against truth on the 0..=4 scale, with
    /// Spearman computed on `continuous` when given.
    pub fn evaluate(
        model_id: &str,
        source: &str,
        truth: &[usize],
        finals: &[usize],
        continuous: Option<&[f64]>,
    ) -> Result<Self, MetricError> {
        let cm = confusion(truth, finals, 5)?;
        let qwk = match qwk_from_confusion(&cm) {
            Ok(v) => Some(v),
            Err(MetricError::UndefinedKappa) => None,
            Err(e) => return Err(e),
        };
        let truth_f: Vec<f64> = truth.iter().map(|&t| t as f64).collect();
        let (basis, pred_f): (SpearmanBasis, Vec<f64>) = match continuous {
            Some(c) => (SpearmanBasis::Continuous, c.to_vec()),
            None => (SpearmanBasis::Integer, finals.iter().map(|&p| p as f64).collect()),
        };
        let spearman = match spearman(&truth_f, &pred_f) {
            Ok(v) => Some(v),
            Err(MetricError::UndefinedCorrelation(_)) | Err(MetricError::Empty) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            model_id: model_id.to_string(),
            source: source.to_string(),
            qwk,
            spearman,
            f1_per_class: per_class_prf(&cm).iter().map(|s| s.f1).collect(),
            spearman_basis: basis,
        })
    }

    /// True when any headline metric is undefined.
    pub fn is_flagged(&self) -> bool {
        self.qwk.is_none() || self.spearman.is_none()
    }

    /// `model_id,source,qwk,spearman,f1_0..f1_4`, 4-decimal fixed point.
    pub fn to_csv_row(&self) -> String {
        let mut fields = vec![
            self.model_id.clone(),
            self.source.clone(),
            fixed4(self.qwk),
            fixed4(self.spearman),
        ];
        if self.f1_per_class.is_empty() {
            fields.extend(std::iter::repeat_n("NA".to_string(), 5));
        } else {
            fields.extend(self.f1_per_class.iter().map(|&f| fixed4(Some(f))));
        }
        fields.join(",")
    }

    /// Placeholder row for a strategy that failed to produce a blend.
    pub fn not_run(model_id: &str, source: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            source: source.to_string(),
            qwk: None,
            spearman: None,
            f1_per_class: Vec::new(),
            spearman_basis: SpearmanBasis::Continuous,
        }
    }
}

/// Sorts by QWK descending; undefined QWK sinks to the bottom, ties by id.
pub fn sort_reports(rows: &mut [EvalReport]) {
    rows.sort_by(|a, b| match (a.qwk, b.qwk) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.model_id.cmp(&b.model_id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.model_id.cmp(&b.model_id),
    });
}
