//! Ensemble strategies over member prediction sets.
//!
//! Every strategy consumes [`PredictionSet`]s whose validation statistics
//! were computed on the validation split only, produces a continuous blend
//! per essay, and finalizes it to an integer score on the 0..=4 scale.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, MetricError};
use crate::numerics::{self, CvSelection, DesignMatrix, NumericsError, RidgeModel};

pub const MAX_SCORE: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("no members to combine")]
    NoMembers,
    #[error("member {model} has no prediction for essays {missing:?}")]
    MissingPredictions { model: String, missing: Vec<u32> },
    #[error("non-finite prediction for essay {essay_id} in member {model}")]
    NonFinitePrediction { model: String, essay_id: u32 },
    #[error("no member has validation QWK above the elite threshold {0}")]
    NoElite(f64),
    #[error("weights are all zero or sum to a non-positive total")]
    DegenerateWeights,
    #[error("stacking model was fitted on members {expected:?} but got {got:?}")]
    MemberOrderMismatch { expected: Vec<String>, got: Vec<String> },
    #[error("blend is not finite")]
    NonFiniteBlend,
    #[error("invalid ensemble parameter: {0}")]
    BadParameter(String),
    #[error("validation truth has {truth} entries for {ids} essays")]
    TruthLength { truth: usize, ids: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Which text a member model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SourceTag {
    #[serde(rename = "essay")]
    Essay,
    #[serde(rename = "rationale-A")]
    RationaleA,
    #[serde(rename = "rationale-B")]
    RationaleB,
}

impl SourceTag {
    pub const ALL: [SourceTag; 3] = [SourceTag::Essay, SourceTag::RationaleA, SourceTag::RationaleB];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Essay => "essay",
            SourceTag::RationaleA => "rationale-A",
            SourceTag::RationaleB => "rationale-B",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `(source, model_id)`; its ordering is the stacking column order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MemberKey {
    pub source: SourceTag,
    pub model_id: String,
}

impl MemberKey {
    pub fn new(source: SourceTag, model_id: impl Into<String>) -> Self {
        Self { source, model_id: model_id.into() }
    }
}

impl fmt::Display for MemberKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.source, self.model_id)
    }
}

/// One member model's continuous predictions plus its validation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model_id: String,
    pub source: SourceTag,
    pub predictions: BTreeMap<u32, f64>,
    pub val_qwk: f64,
    pub val_spearman: f64,
    pub val_pearson: f64,
}

impl PredictionSet {
    /// Validates finiteness and clips every prediction into [0, 4]. The
    /// validation statistics start at zero; see [`PredictionSet::with_validation_stats`].
    pub fn new(
        model_id: impl Into<String>,
        source: SourceTag,
        predictions: BTreeMap<u32, f64>,
    ) -> Result<Self, EnsembleError> {
        let model_id = model_id.into();
        let mut clipped = predictions;
        for (&essay_id, value) in clipped.iter_mut() {
            if !value.is_finite() {
                return Err(EnsembleError::NonFinitePrediction { model: model_id, essay_id });
            }
            *value = value.clamp(0.0, MAX_SCORE);
        }
        Ok(Self {
            model_id,
            source,
            predictions: clipped,
            val_qwk: 0.0,
            val_spearman: 0.0,
            val_pearson: 0.0,
        })
    }

    pub fn key(&self) -> MemberKey {
        MemberKey::new(self.source, self.model_id.clone())
    }

    pub fn values_for(&self, ids: &[u32]) -> Result<Vec<f64>, EnsembleError> {
        let mut missing = Vec::new();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            match self.predictions.get(id) {
                Some(&v) => out.push(v),
                None => missing.push(*id),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(EnsembleError::MissingPredictions { model: self.model_id.clone(), missing })
        }
    }

    /// Fills `val_qwk` (rounded predictions), `val_spearman` and
    /// `val_pearson` (continuous predictions) from validation truth.
    /// Undefined statistics are stored as 0.
    pub fn with_validation_stats(mut self, val_ids: &[u32], val_truth: &[u8]) -> Result<Self, EnsembleError> {
        if val_ids.len() != val_truth.len() {
            return Err(EnsembleError::TruthLength { truth: val_truth.len(), ids: val_ids.len() });
        }
        let preds = self.values_for(val_ids)?;
        let finals = preds.iter().map(|&p| finalize(p).map(usize::from)).collect::<Result<Vec<_>, _>>()?;
        let truth: Vec<usize> = val_truth.iter().map(|&t| t as usize).collect();
        let truth_f: Vec<f64> = val_truth.iter().map(|&t| f64::from(t)).collect();
        self.val_qwk = defined_or_zero(metrics::qwk(&truth, &finals, 5))?;
        self.val_spearman = defined_or_zero(metrics::spearman(&preds, &truth_f))?;
        self.val_pearson = defined_or_zero(metrics::pearson(&preds, &truth_f))?;
        Ok(self)
    }
}

fn defined_or_zero(r: Result<f64, MetricError>) -> Result<f64, EnsembleError> {
    match r {
        Ok(v) => Ok(v),
        Err(MetricError::UndefinedKappa) | Err(MetricError::UndefinedCorrelation(_)) => Ok(0.0),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    QwkOptimized,
    Elite,
    WeightedMedian,
    ConfidenceWeighted,
    Tiered,
    Stacking,
    CorrelationOptimized,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::QwkOptimized,
        Strategy::Elite,
        Strategy::WeightedMedian,
        Strategy::ConfidenceWeighted,
        Strategy::Tiered,
        Strategy::Stacking,
        Strategy::CorrelationOptimized,
    ];

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::QwkOptimized => "QWK Optimized Ensemble",
            Strategy::Elite => "Elite Ensemble",
            Strategy::WeightedMedian => "Weighted Median",
            Strategy::ConfidenceWeighted => "Confidence Weighted",
            Strategy::Tiered => "Tiered Ensemble",
            Strategy::Stacking => "Stacking Ensemble",
            Strategy::CorrelationOptimized => "Correlation Optimized",
        }
    }

    /// File-name friendly identifier.
    pub fn slug(self) -> &'static str {
        match self {
            Strategy::QwkOptimized => "qwk_optimized",
            Strategy::Elite => "elite",
            Strategy::WeightedMedian => "weighted_median",
            Strategy::ConfidenceWeighted => "confidence_weighted",
            Strategy::Tiered => "tiered",
            Strategy::Stacking => "stacking",
            Strategy::CorrelationOptimized => "correlation_optimized",
        }
    }
}

/// Member subsets the ensemble tables are built over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MemberFilter {
    EssayOnly,
    EssayPlusA,
    EssayPlusB,
    All,
}

impl MemberFilter {
    pub const ALL: [MemberFilter; 4] =
        [MemberFilter::EssayOnly, MemberFilter::EssayPlusA, MemberFilter::EssayPlusB, MemberFilter::All];

    pub fn sources(self) -> &'static [SourceTag] {
        match self {
            MemberFilter::EssayOnly => &[SourceTag::Essay],
            MemberFilter::EssayPlusA => &[SourceTag::Essay, SourceTag::RationaleA],
            MemberFilter::EssayPlusB => &[SourceTag::Essay, SourceTag::RationaleB],
            MemberFilter::All => &SourceTag::ALL,
        }
    }

    pub fn caption(self) -> &'static str {
        match self {
            MemberFilter::EssayOnly => "ens-essay",
            MemberFilter::EssayPlusA => "ens-essay+A",
            MemberFilter::EssayPlusB => "ens-essay+B",
            MemberFilter::All => "ens-all",
        }
    }

    pub fn admits(self, source: SourceTag) -> bool {
        self.sources().contains(&source)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    #[default]
    Spearman,
    Pearson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliteAnchor {
    pub source: SourceTag,
    pub model_id: String,
    pub weight: f64,
}

/// Strategy parameters. Deserializing a partial JSON object overrides only
/// the fields it names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleParams {
    pub elite_threshold: f64,
    pub elite_anchors: Vec<EliteAnchor>,
    pub confidence_threshold: f64,
    pub tier_low: f64,
    pub tier_high: f64,
    pub tier_delta: f64,
    pub alpha_grid: Vec<f64>,
    pub k_folds: usize,
    pub correlation: CorrelationKind,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            elite_threshold: 0.8,
            elite_anchors: vec![
                EliteAnchor { source: SourceTag::Essay, model_id: "electra-large".into(), weight: 0.35 },
                EliteAnchor { source: SourceTag::Essay, model_id: "deberta-v3-large".into(), weight: 0.25 },
            ],
            confidence_threshold: 0.6,
            tier_low: 1.0,
            tier_high: 3.0,
            tier_delta: 0.1,
            alpha_grid: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            k_folds: 5,
            correlation: CorrelationKind::Spearman,
        }
    }
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |msg: String| Err(EnsembleError::BadParameter(msg));
        if !(self.elite_threshold > 0.0 && self.elite_threshold < 1.0) {
            return bad(format!("elite_threshold {} not in (0, 1)", self.elite_threshold));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return bad(format!("confidence_threshold {} not in [0, 1]", self.confidence_threshold));
        }
        for (name, v) in [("tier_low", self.tier_low), ("tier_high", self.tier_high)] {
            if !(0.0..=MAX_SCORE).contains(&v) {
                return bad(format!("{name} {v} not in [0, 4]"));
            }
        }
        if self.tier_low > self.tier_high {
            return bad("tier_low exceeds tier_high".into());
        }
        if !(self.tier_delta >= 0.0 && self.tier_delta.is_finite()) {
            return bad(format!("tier_delta {} must be >= 0", self.tier_delta));
        }
        if self.elite_anchors.iter().any(|a| a.weight.is_nan() || a.weight <= 0.0) {
            return bad("anchor weights must be positive".into());
        }
        if self.elite_anchors.iter().map(|a| a.weight).sum::<f64>() > 1.0 + 1e-12 {
            return bad("anchor weights sum above 1".into());
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("alpha_grid must be non-empty and non-negative".into());
        }
        if self.k_folds < 2 {
            return bad("k_folds must be at least 2".into());
        }
        Ok(())
    }
}

/// Clip to [0, 4], then round half up.
pub fn finalize(blend: f64) -> Result<u8, EnsembleError> {
    if !blend.is_finite() {
        return Err(EnsembleError::NonFiniteBlend);
    }
    let x = blend.clamp(0.0, MAX_SCORE);
    let floor = x.floor();
    let rounded = if x - floor >= 0.5 { floor + 1.0 } else { floor };
    Ok(rounded as u8)
}

/// Round half up without clipping, used for confidence.
fn round_half_up(x: f64) -> f64 {
    let floor = x.floor();
    if x - floor >= 0.5 {
        floor + 1.0
    } else {
        floor
    }
}

/// Audit record of how a blend was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleAudit {
    pub strategy: Strategy,
    pub member_order: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge: Option<RidgeModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvSelection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<EnsembleParams>,
}

impl EnsembleAudit {
    fn new(strategy: Strategy, members: &[&PredictionSet]) -> Self {
        Self {
            strategy,
            member_order: members.iter().map(|m| m.key().to_string()).collect(),
            weights: None,
            ridge: None,
            cv: None,
            params: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutput {
    pub essay_ids: Vec<u32>,
    pub blend: Vec<f64>,
    pub finals: Vec<u8>,
    pub audit: EnsembleAudit,
}

impl EnsembleOutput {
    fn from_blend(essay_ids: &[u32], blend: Vec<f64>, audit: EnsembleAudit) -> Result<Self, EnsembleError> {
        let finals = blend.iter().map(|&b| finalize(b)).collect::<Result<_, _>>()?;
        Ok(Self { essay_ids: essay_ids.to_vec(), blend, finals, audit })
    }
}

/// Members sorted into the canonical `(source, model_id)` order.
fn ordered(members: &[PredictionSet]) -> Result<Vec<&PredictionSet>, EnsembleError> {
    if members.is_empty() {
        return Err(EnsembleError::NoMembers);
    }
    let mut refs: Vec<&PredictionSet> = members.iter().collect();
    refs.sort_by_key(|m| m.key());
    Ok(refs)
}

/// `preds[member][essay]`
fn prediction_matrix(members: &[&PredictionSet], ids: &[u32]) -> Result<Vec<Vec<f64>>, EnsembleError> {
    members.iter().map(|m| m.values_for(ids)).collect()
}

fn weighted_average(
    members: &[&PredictionSet],
    ids: &[u32],
    weights: &[f64],
) -> Result<Vec<f64>, EnsembleError> {
    let preds = prediction_matrix(members, ids)?;
    Ok((0..ids.len())
        .map(|e| preds.iter().zip(weights).map(|(p, w)| w * p[e]).sum())
        .collect())
}

fn normalize(raw: &[f64]) -> Result<Vec<f64>, EnsembleError> {
    let total: f64 = raw.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(EnsembleError::DegenerateWeights);
    }
    Ok(raw.iter().map(|w| w / total).collect())
}

/// `exp(5 · (qwk − 0.8))`
pub fn qwk_weight(qwk: f64) -> f64 {
    (5.0 * (qwk - 0.8)).exp()
}

/// Normalized QWK-exponential weights, in the given member order.
pub fn member_weights_qwk(members: &[&PredictionSet]) -> Result<Vec<f64>, EnsembleError> {
    if members.is_empty() {
        return Err(EnsembleError::NoMembers);
    }
    normalize(&members.iter().map(|m| qwk_weight(m.val_qwk)).collect::<Vec<_>>())
}

pub fn blend_qwk_optimized(members: &[PredictionSet], ids: &[u32]) -> Result<EnsembleOutput, EnsembleError> {
    let members = ordered(members)?;
    let weights = member_weights_qwk(&members)?;
    let blend = weighted_average(&members, ids, &weights)?;
    let mut audit = EnsembleAudit::new(Strategy::QwkOptimized, &members);
    audit.weights = Some(weights);
    EnsembleOutput::from_blend(ids, blend, audit)
}

/// Elite weights over the members above `elite_threshold`, returned as
/// `(index into members, weight)`.
///
/// Anchors that made the cut keep their fixed weights. The remaining mass is
/// shared by the other elites by linear rank on validation QWK (rank `r` of
/// `R` gets mass proportional to `R − r + 1`). Without other elites the
/// anchor weights are renormalized to sum to 1.
pub fn elite_weights(
    members: &[&PredictionSet],
    params: &EnsembleParams,
) -> Result<Vec<(usize, f64)>, EnsembleError> {
    let elites: Vec<usize> = (0..members.len())
        .filter(|&i| members[i].val_qwk > params.elite_threshold)
        .collect();
    if elites.is_empty() {
        return Err(EnsembleError::NoElite(params.elite_threshold));
    }
    let anchor_weight = |m: &PredictionSet| {
        params
            .elite_anchors
            .iter()
            .find(|a| a.source == m.source && a.model_id == m.model_id)
            .map(|a| a.weight)
    };
    let mut anchors = Vec::new();
    let mut others = Vec::new();
    for &i in &elites {
        match anchor_weight(members[i]) {
            Some(w) => anchors.push((i, w)),
            None => others.push(i),
        }
    }
    let anchor_mass: f64 = anchors.iter().map(|a| a.1).sum();

    if others.is_empty() {
        return Ok(anchors.into_iter().map(|(i, w)| (i, w / anchor_mass)).collect());
    }
    // best first; ties keep canonical member order
    others.sort_by(|&a, &b| members[b].val_qwk.total_cmp(&members[a].val_qwk).then(a.cmp(&b)));
    let residual = 1.0 - anchor_mass;
    let r_count = others.len() as f64;
    let rank_total = r_count * (r_count + 1.0) / 2.0;
    let mut weights = anchors;
    for (rank0, &i) in others.iter().enumerate() {
        weights.push((i, residual * (r_count - rank0 as f64) / rank_total));
    }
    weights.sort_by_key(|w| w.0);
    Ok(weights)
}

fn elite_blend(
    members: &[&PredictionSet],
    ids: &[u32],
    params: &EnsembleParams,
) -> Result<(Vec<f64>, Vec<f64>), EnsembleError> {
    let sparse = elite_weights(members, params)?;
    let mut dense = vec![0.0; members.len()];
    for (i, w) in sparse {
        dense[i] = w;
    }
    let blend = weighted_average(members, ids, &dense)?;
    Ok((blend, dense))
}

pub fn blend_elite(
    members: &[PredictionSet],
    ids: &[u32],
    params: &EnsembleParams,
) -> Result<EnsembleOutput, EnsembleError> {
    params.validate()?;
    let members = ordered(members)?;
    let (blend, weights) = elite_blend(&members, ids, params)?;
    let mut audit = EnsembleAudit::new(Strategy::Elite, &members);
    audit.weights = Some(weights);
    EnsembleOutput::from_blend(ids, blend, audit)
}

pub fn blend_weighted_median(members: &[PredictionSet], ids: &[u32]) -> Result<EnsembleOutput, EnsembleError> {
    let members = ordered(members)?;
    let weights = member_weights_qwk(&members)?;
    let preds = prediction_matrix(&members, ids)?;
    let mut column = vec![0.0; members.len()];
    let blend = (0..ids.len())
        .map(|e| {
            for (slot, p) in column.iter_mut().zip(&preds) {
                *slot = p[e];
            }
            numerics::weighted_median(&column, &weights)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut audit = EnsembleAudit::new(Strategy::WeightedMedian, &members);
    audit.weights = Some(weights);
    EnsembleOutput::from_blend(ids, blend, audit)
}

/// `1 − |p − round(p)|`
pub fn confidence(prediction: f64) -> f64 {
    1.0 - (prediction - round_half_up(prediction)).abs()
}

/// Per essay: members whose confidence exceeds the threshold contribute with
/// weight confidence². When none does, every member contributes that way.
pub fn blend_confidence_weighted(
    members: &[PredictionSet],
    ids: &[u32],
    params: &EnsembleParams,
) -> Result<EnsembleOutput, EnsembleError> {
    params.validate()?;
    let members = ordered(members)?;
    let preds = prediction_matrix(&members, ids)?;
    let blend = (0..ids.len())
        .map(|e| confidence_blend(preds.iter().map(|p| p[e]), params.confidence_threshold))
        .collect();
    let mut audit = EnsembleAudit::new(Strategy::ConfidenceWeighted, &members);
    audit.params = Some(params.clone());
    EnsembleOutput::from_blend(ids, blend, audit)
}

/// Confidence-squared weighted mean of one essay's member predictions.
pub fn confidence_blend(preds: impl Iterator<Item = f64> + Clone, threshold: f64) -> f64 {
    let accumulate = |filter: bool| {
        let (mut num, mut den) = (0.0, 0.0);
        for p in preds.clone() {
            let c = confidence(p);
            if !filter || c > threshold {
                num += c * c * p;
                den += c * c;
            }
        }
        (num, den)
    };
    let (num, den) = match accumulate(true) {
        (_, 0.0) => accumulate(false),
        passed => passed,
    };
    num / den
}

/// Outward push at the extremes, then clip.
pub fn tier_adjust(base: f64, params: &EnsembleParams) -> f64 {
    let adjusted = if base < params.tier_low {
        base - params.tier_delta
    } else if base > params.tier_high {
        base + params.tier_delta
    } else {
        base
    };
    adjusted.clamp(0.0, MAX_SCORE)
}

pub fn blend_tiered(
    members: &[PredictionSet],
    ids: &[u32],
    params: &EnsembleParams,
) -> Result<EnsembleOutput, EnsembleError> {
    params.validate()?;
    let members = ordered(members)?;
    let (base, weights) = elite_blend(&members, ids, params)?;
    let blend = base.iter().map(|&b| tier_adjust(b, params)).collect();
    let mut audit = EnsembleAudit::new(Strategy::Tiered, &members);
    audit.weights = Some(weights);
    audit.params = Some(params.clone());
    EnsembleOutput::from_blend(ids, blend, audit)
}

/// Ridge meta-learner over member predictions, columns in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingModel {
    pub member_order: Vec<MemberKey>,
    pub ridge: RidgeModel,
    pub cv: CvSelection,
}

fn design(members: &[&PredictionSet], ids: &[u32]) -> Result<DesignMatrix, EnsembleError> {
    let preds = prediction_matrix(members, ids)?;
    let mut values = Vec::with_capacity(ids.len() * members.len());
    for e in 0..ids.len() {
        values.extend(preds.iter().map(|p| p[e]));
    }
    Ok(DesignMatrix::new(ids.len(), members.len(), values)?)
}

/// Selects alpha by k-fold CV on the validation essays, then refits on all of
/// them. `cv_seed` drives the fold shuffle.
pub fn stacking_fit(
    members: &[PredictionSet],
    val_ids: &[u32],
    val_truth: &[u8],
    params: &EnsembleParams,
    cv_seed: u64,
) -> Result<StackingModel, EnsembleError> {
    params.validate()?;
    if val_ids.len() != val_truth.len() {
        return Err(EnsembleError::TruthLength { truth: val_truth.len(), ids: val_ids.len() });
    }
    let members = ordered(members)?;
    let x = design(&members, val_ids)?;
    let y: Vec<f64> = val_truth.iter().map(|&t| f64::from(t)).collect();
    let cv = numerics::cv_select_alpha(&x, &y, &params.alpha_grid, params.k_folds, cv_seed)?;
    let ridge = numerics::ridge_fit(&x, &y, cv.best_alpha)?;
    Ok(StackingModel { member_order: members.iter().map(|m| m.key()).collect(), ridge, cv })
}

pub fn stacking_predict(
    model: &StackingModel,
    members: &[PredictionSet],
    ids: &[u32],
) -> Result<EnsembleOutput, EnsembleError> {
    let members = ordered(members)?;
    let keys: Vec<MemberKey> = members.iter().map(|m| m.key()).collect();
    if keys != model.member_order {
        return Err(EnsembleError::MemberOrderMismatch {
            expected: model.member_order.iter().map(ToString::to_string).collect(),
            got: keys.iter().map(ToString::to_string).collect(),
        });
    }
    let x = design(&members, ids)?;
    let blend = model
        .ridge
        .predict(&x)?
        .into_iter()
        .map(|b| if b.is_finite() { b.clamp(0.0, MAX_SCORE) } else { b })
        .collect();
    let mut audit = EnsembleAudit::new(Strategy::Stacking, &members);
    audit.weights = Some(model.ridge.weights.clone());
    audit.ridge = Some(model.ridge.clone());
    audit.cv = Some(model.cv.clone());
    EnsembleOutput::from_blend(ids, blend, audit)
}

/// `qwk³ · (1 + correlation)`, with negative QWK treated as 0.
pub fn correlation_weight(qwk: f64, correlation: f64) -> f64 {
    qwk.max(0.0).powi(3) * (1.0 + correlation)
}

pub fn blend_correlation_optimized(
    members: &[PredictionSet],
    ids: &[u32],
    params: &EnsembleParams,
) -> Result<EnsembleOutput, EnsembleError> {
    let members = ordered(members)?;
    let raw: Vec<f64> = members
        .iter()
        .map(|m| {
            let corr = match params.correlation {
                CorrelationKind::Spearman => m.val_spearman,
                CorrelationKind::Pearson => m.val_pearson,
            };
            correlation_weight(m.val_qwk, corr)
        })
        .collect();
    let weights = normalize(&raw)?;
    let blend = weighted_average(&members, ids, &weights)?;
    let mut audit = EnsembleAudit::new(Strategy::CorrelationOptimized, &members);
    audit.weights = Some(weights);
    EnsembleOutput::from_blend(ids, blend, audit)
}

/// Runs one strategy. Validation truth is used by stacking only; the other
/// strategies rely on the members' validation statistics.
pub fn run_strategy(
    strategy: Strategy,
    members: &[PredictionSet],
    val_ids: &[u32],
    val_truth: &[u8],
    eval_ids: &[u32],
    params: &EnsembleParams,
    cv_seed: u64,
) -> Result<EnsembleOutput, EnsembleError> {
    match strategy {
        Strategy::QwkOptimized => blend_qwk_optimized(members, eval_ids),
        Strategy::Elite => blend_elite(members, eval_ids, params),
        Strategy::WeightedMedian => blend_weighted_median(members, eval_ids),
        Strategy::ConfidenceWeighted => blend_confidence_weighted(members, eval_ids, params),
        Strategy::Tiered => blend_tiered(members, eval_ids, params),
        Strategy::Stacking => {
            let model = stacking_fit(members, val_ids, val_truth, params, cv_seed)?;
            stacking_predict(&model, members, eval_ids)
        }
        Strategy::CorrelationOptimized => blend_correlation_optimized(members, eval_ids, params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member(id: &str, source: SourceTag, qwk: f64, preds: &[f64]) -> PredictionSet {
        let map = preds.iter().enumerate().map(|(i, &p)| (i as u32, p)).collect();
        let mut m = PredictionSet::new(id, source, map).unwrap();
        m.val_qwk = qwk;
        m.val_spearman = qwk;
        m.val_pearson = qwk;
        m
    }

    fn ids(n: usize) -> Vec<u32> {
        (0..n as u32).collect()
    }

    #[test]
    fn finalize_examples() {
        assert_eq!(finalize(2.5).unwrap(), 3);
        assert_eq!(finalize(-0.3).unwrap(), 0);
        assert_eq!(finalize(3.49).unwrap(), 3);
        assert_eq!(finalize(4.6).unwrap(), 4);
        assert_eq!(finalize(0.49999999999999994).unwrap(), 0);
        assert_eq!(finalize(f64::NAN), Err(EnsembleError::NonFiniteBlend));
    }

    #[test]
    fn qwk_weight_examples() {
        assert_eq!(qwk_weight(0.8), 1.0);
        assert!((qwk_weight(0.8495) - 1.2808).abs() < 1e-4);
        let a = member("a", SourceTag::Essay, 0.83, &[1.0]);
        let b = member("b", SourceTag::Essay, 0.83, &[1.0]);
        assert_eq!(member_weights_qwk(&[&a, &b]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn qwk_optimized_blends() {
        let a = member("a", SourceTag::Essay, 0.8, &[2.0, 3.0]);
        let b = member("b", SourceTag::Essay, 0.8, &[2.0, 1.0]);
        let out = blend_qwk_optimized(&[a, b], &ids(2)).unwrap();
        assert_eq!(out.blend, vec![2.0, 2.0]);
        assert_eq!(out.finals, vec![2, 2]);

        let a = member("a", SourceTag::Essay, 0.8495, &[3.0]);
        let b = member("b", SourceTag::Essay, 0.8, &[1.0]);
        let out = blend_qwk_optimized(&[a, b], &ids(1)).unwrap();
        let w = qwk_weight(0.8495);
        let expected = (w * 3.0 + 1.0) / (w + 1.0);
        assert!((out.blend[0] - expected).abs() < 1e-12);
        assert!((out.blend[0] - 2.123).abs() < 1e-3);
        assert_eq!(out.finals, vec![2]);
    }

    #[test]
    fn elite_only_anchors_renormalize() {
        let e = member("electra-large", SourceTag::Essay, 0.85, &[3.0]);
        let d = member("deberta-v3-large", SourceTag::Essay, 0.84, &[3.0]);
        let weak = member("bert-base", SourceTag::Essay, 0.79, &[0.0]);
        let out = blend_elite(&[e, d, weak], &ids(1), &EnsembleParams::default()).unwrap();
        // canonical order: bert-base, deberta-v3-large, electra-large
        let w = out.audit.weights.unwrap();
        assert_eq!(w[0], 0.0);
        assert!((w[1] - 0.25 / 0.60).abs() < 1e-12);
        assert!((w[2] - 0.35 / 0.60).abs() < 1e-12);
        assert_eq!(out.finals, vec![3]);
    }

    #[test]
    fn elite_rank_rule_over_residual() {
        let members = [
            member("electra-large", SourceTag::Essay, 0.85, &[1.0]),
            member("deberta-v3-large", SourceTag::Essay, 0.84, &[1.0]),
            member("x", SourceTag::Essay, 0.82, &[1.0]),
            member("y", SourceTag::RationaleA, 0.82, &[1.0]),
        ];
        let refs = ordered(&members).unwrap();
        let w: BTreeMap<String, f64> = elite_weights(&refs, &EnsembleParams::default())
            .unwrap()
            .into_iter()
            .map(|(i, w)| (refs[i].model_id.clone(), w))
            .collect();
        assert_eq!(w["electra-large"], 0.35);
        assert_eq!(w["deberta-v3-large"], 0.25);
        assert!((w["x"] - 0.40 * 2.0 / 3.0).abs() < 1e-12);
        assert!((w["y"] - 0.40 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn elite_requires_an_elite() {
        let m = member("a", SourceTag::Essay, 0.8, &[1.0]);
        assert_eq!(
            blend_elite(&[m], &ids(1), &EnsembleParams::default()),
            Err(EnsembleError::NoElite(0.8))
        );
    }

    #[test]
    fn weighted_median_examples() {
        let mk = |q, p| member(&format!("m{p}{q}"), SourceTag::Essay, q, &[p]);
        let out = blend_weighted_median(&[mk(0.8, 1.0), mk(0.8, 2.0), mk(0.8, 3.0)], &ids(1)).unwrap();
        assert_eq!(out.blend, vec![2.0]);
        // raw weights 0.1, 0.1, 0.8 via exp(5(q−0.8)) = 8 for the third
        let q_dominant = 0.8 + (8.0f64).ln() / 5.0;
        let out = blend_weighted_median(
            &[
                member("a", SourceTag::Essay, 0.8, &[1.0]),
                member("b", SourceTag::Essay, 0.8, &[1.0]),
                member("c", SourceTag::Essay, q_dominant, &[4.0]),
            ],
            &ids(1),
        )
        .unwrap();
        assert_eq!(out.blend, vec![4.0]);
        let single = blend_weighted_median(&[mk(0.5, 2.7)], &ids(1)).unwrap();
        assert_eq!(single.blend, vec![2.7]);
    }

    #[test]
    fn confidence_examples() {
        assert!((confidence(2.8) - 0.8).abs() < 1e-15);
        assert_eq!(confidence(3.0), 1.0);
        let out = blend_confidence_weighted(
            &[member("a", SourceTag::Essay, 0.8, &[2.9]), member("b", SourceTag::Essay, 0.8, &[2.5])],
            &ids(1),
            &EnsembleParams::default(),
        )
        .unwrap();
        assert!((out.blend[0] - 2.9).abs() < 1e-12);
        assert_eq!(out.finals, vec![3]);
    }

    #[test]
    fn confidence_fallback_uses_everyone() {
        // both at confidence 0.5, below 0.6
        let b = confidence_blend([1.5, 2.5].into_iter(), 0.6);
        assert!((b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tier_adjust_examples() {
        let p = EnsembleParams::default();
        assert_eq!(tier_adjust(2.0, &p), 2.0);
        let low = tier_adjust(0.6, &p);
        assert!((low - 0.5).abs() < 1e-12);
        assert_eq!(finalize(low).unwrap(), 1);
        assert_eq!(tier_adjust(3.9, &p), 4.0);
        assert_eq!(tier_adjust(0.05, &p), 0.0);
    }

    #[test]
    fn tiered_uses_elite_base() {
        let members = [
            member("electra-large", SourceTag::Essay, 0.85, &[0.6, 2.0, 3.9]),
            member("deberta-v3-large", SourceTag::Essay, 0.84, &[0.6, 2.0, 3.9]),
        ];
        let out = blend_tiered(&members, &ids(3), &EnsembleParams::default()).unwrap();
        assert!((out.blend[0] - 0.5).abs() < 1e-12);
        assert!((out.blend[1] - 2.0).abs() < 1e-12);
        assert_eq!(out.blend[2], 4.0);
        assert_eq!(out.finals, vec![1, 2, 4]);
    }

    fn truth(n: usize) -> Vec<u8> {
        (0..n).map(|i| [0u8, 1, 2, 3, 3, 4, 2, 3][i % 8]).collect()
    }

    #[test]
    fn stacking_perfect_member_is_near_identity() {
        let t = truth(40);
        let preds: Vec<f64> = t.iter().map(|&v| f64::from(v)).collect();
        let m = member("a", SourceTag::Essay, 1.0, &preds);
        let params = EnsembleParams { alpha_grid: vec![0.01], ..Default::default() };
        let model = stacking_fit(std::slice::from_ref(&m), &ids(40), &t, &params, 7).unwrap();
        assert!((model.ridge.weights[0] - 1.0).abs() < 0.02);
        assert!(model.ridge.intercept.abs() < 0.02);

        let probe = member("a", SourceTag::Essay, 1.0, &[3.2]);
        let out = stacking_predict(&model, &[probe], &ids(1)).unwrap();
        assert!((out.blend[0] - 3.2).abs() < 0.05);
        assert_eq!(out.finals, vec![3]);
    }

    #[test]
    fn stacking_signs_with_anti_member() {
        let t = truth(40);
        let good: Vec<f64> = t.iter().map(|&v| f64::from(v)).collect();
        let anti: Vec<f64> = t.iter().map(|&v| 4.0 - f64::from(v)).collect();
        let members = [member("good", SourceTag::Essay, 1.0, &good), member("anti", SourceTag::RationaleA, -1.0, &anti)];
        let model = stacking_fit(&members, &ids(40), &t, &EnsembleParams::default(), 3).unwrap();
        // columns: essay:good, rationale-A:anti
        assert!(model.ridge.weights[0] > 0.0);
        assert!(model.ridge.weights[1] < 0.0);
    }

    #[test]
    fn stacking_constant_members_fall_back_to_mean() {
        let t = truth(40);
        let members = [member("a", SourceTag::Essay, 0.0, &[2.0; 40]), member("b", SourceTag::Essay, 0.0, &[1.0; 40])];
        let model = stacking_fit(&members, &ids(40), &t, &EnsembleParams::default(), 3).unwrap();
        assert!(model.ridge.weights.iter().all(|w| w.abs() < 1e-12));
        let mean = t.iter().map(|&v| f64::from(v)).sum::<f64>() / 40.0;
        assert!((model.ridge.intercept - mean).abs() < 1e-12);

        let zero_grid = EnsembleParams { alpha_grid: vec![0.0], ..Default::default() };
        assert!(matches!(
            stacking_fit(&members, &ids(40), &t, &zero_grid, 3),
            Err(EnsembleError::Numerics(NumericsError::Singular))
        ));
    }

    #[test]
    fn stacking_predict_clips_and_checks_order() {
        let model = StackingModel {
            member_order: vec![MemberKey::new(SourceTag::Essay, "a")],
            ridge: RidgeModel { weights: vec![0.0], intercept: 2.7, alpha: 1.0 },
            cv: CvSelection { best_alpha: 1.0, errors: vec![(1.0, 0.0)] },
        };
        let a = member("a", SourceTag::Essay, 0.8, &[0.0, 4.0]);
        let out = stacking_predict(&model, std::slice::from_ref(&a), &ids(2)).unwrap();
        assert_eq!(out.finals, vec![3, 3]);

        let high = StackingModel {
            ridge: RidgeModel { weights: vec![1.0], intercept: 0.6, alpha: 1.0 },
            ..model.clone()
        };
        let out = stacking_predict(&high, &[a], &ids(2)).unwrap();
        assert_eq!(out.blend[1], 4.0);
        assert_eq!(out.finals[1], 4);

        let other = member("b", SourceTag::Essay, 0.8, &[1.0, 1.0]);
        assert!(matches!(
            stacking_predict(&model, &[other], &ids(2)),
            Err(EnsembleError::MemberOrderMismatch { .. })
        ));
    }

    #[test]
    fn correlation_weight_examples() {
        assert!((correlation_weight(0.8, 0.8) - 0.9216).abs() < 1e-15);
        assert_eq!(correlation_weight(0.9, -1.0), 0.0);
        let mut a = member("a", SourceTag::Essay, 0.8, &[1.3, 2.2]);
        a.val_spearman = -1.0;
        assert_eq!(
            blend_correlation_optimized(&[a], &ids(2), &EnsembleParams::default()),
            Err(EnsembleError::DegenerateWeights)
        );
        let a = member("a", SourceTag::Essay, 0.8, &[1.3, 2.2]);
        let b = member("b", SourceTag::Essay, 0.8, &[1.3, 2.2]);
        let both = blend_correlation_optimized(&[a.clone(), b], &ids(2), &EnsembleParams::default()).unwrap();
        let alone = blend_correlation_optimized(&[a], &ids(2), &EnsembleParams::default()).unwrap();
        assert_eq!(both.blend, alone.blend);
    }

    #[test]
    fn missing_predictions_are_reported() {
        let a = member("a", SourceTag::Essay, 0.8, &[1.0]);
        assert_eq!(
            blend_qwk_optimized(&[a], &[0, 5, 6]),
            Err(EnsembleError::MissingPredictions { model: "a".into(), missing: vec![5, 6] })
        );
    }

    #[test]
    fn prediction_set_clips_and_rejects_nan() {
        let m = member("a", SourceTag::Essay, 0.8, &[-0.5, 4.7, 2.0]);
        assert_eq!(m.values_for(&ids(3)).unwrap(), vec![0.0, 4.0, 2.0]);
        let bad: BTreeMap<u32, f64> = [(1, f64::NAN)].into_iter().collect();
        assert!(PredictionSet::new("x", SourceTag::Essay, bad).is_err());
    }

    #[test]
    fn params_validation_and_partial_json() {
        let p: EnsembleParams = serde_json::from_str(r#"{"tier_delta": 0.2}"#).unwrap();
        assert_eq!(p.tier_delta, 0.2);
        assert_eq!(p.confidence_threshold, 0.6);
        assert!(serde_json::from_str::<EnsembleParams>(r#"{"bogus": 1}"#).is_err());
        let bad = EnsembleParams { elite_threshold: 1.2, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = EnsembleParams { tier_delta: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn validation_stats() {
        let t = truth(16);
        let preds: Vec<f64> = t.iter().map(|&v| f64::from(v)).collect();
        let m = member("a", SourceTag::Essay, 0.0, &preds).with_validation_stats(&ids(16), &t).unwrap();
        assert_eq!(m.val_qwk, 1.0);
        assert!((m.val_spearman - 1.0).abs() < 1e-12);
        let flat = member("c", SourceTag::Essay, 0.0, &[2.0; 16]).with_validation_stats(&ids(16), &t).unwrap();
        assert_eq!(flat.val_spearman, 0.0);
    }
}
