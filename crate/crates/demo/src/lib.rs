//! Browser bindings for three interactive views: rater agreement, a
//! single-essay blend explorer, and the confidence and tier curves.
//!
//! Every export takes plain strings or numbers and returns a JSON string. On
//! bad input the JSON is `{"error": "..."}`, so the page never has to catch.

use std::collections::BTreeMap;

use aes_core::ensemble::{
    self, confidence, tier_adjust, EnsembleParams, PredictionSet, SourceTag, Strategy,
};
use aes_core::metrics::{self, confusion, per_class_prf};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const K: usize = 5;

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn parse_labels(text: &str, what: &str) -> Result<Vec<usize>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<usize>() {
            Ok(v) if v < K => Ok(v),
            _ => Err(format!("{what}: `{t}` is not a score 0-4")),
        })
        .collect()
}

/// QWK, confusion matrix and per-class scores for two label lists.
pub fn agreement_value(truth: &str, pred: &str) -> Result<Value, String> {
    let truth = parse_labels(truth, "truth")?;
    let pred = parse_labels(pred, "prediction")?;
    let cm = confusion(&truth, &pred, K).map_err(|e| e.to_string())?;
    let qwk = metrics::qwk_from_confusion(&cm).ok();
    let classes: Vec<Value> = per_class_prf(&cm)
        .iter()
        .map(|s| json!({ "precision": s.precision, "recall": s.recall, "f1": s.f1 }))
        .collect();
    let exact = (0..K).map(|i| cm.get(i, i)).sum::<u64>() as f64 / cm.total() as f64;
    Ok(json!({
        "n": cm.total(),
        "qwk": qwk,
        "exact_agreement": exact,
        "confusion": cm.rows(),
        "classes": classes,
    }))
}

#[wasm_bindgen]
pub fn agreement(truth: &str, pred: &str) -> String {
    respond(agreement_value(truth, pred))
}

/// Member lines: `model_id qwk prediction`. All members are treated as
/// essay-based, so the default anchors apply to `electra-large` and
/// `deberta-v3-large`.
fn parse_members(text: &str) -> Result<Vec<PredictionSet>, String> {
    let mut members = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        let [id, qwk, pred] = fields[..] else {
            return Err(format!("line {}: expected `model_id qwk prediction`", i + 1));
        };
        let num = |s: &str, name: &str| {
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(format!("line {}: bad {name} `{s}`", i + 1))
        };
        let mut m = PredictionSet::new(id, SourceTag::Essay, BTreeMap::from([(0, num(pred, "prediction")?)]))
            .map_err(|e| e.to_string())?;
        m.val_qwk = num(qwk, "qwk")?;
        // a single essay has no correlation to offer; assume it tracks QWK
        m.val_spearman = m.val_qwk;
        m.val_pearson = m.val_qwk;
        if members.iter().any(|o: &PredictionSet| o.model_id == m.model_id) {
            return Err(format!("line {}: duplicate model `{id}`", i + 1));
        }
        members.push(m);
    }
    if members.is_empty() {
        return Err("enter at least one member".into());
    }
    Ok(members)
}

/// Blends one essay under every strategy that needs no training data.
pub fn blend_value(members: &str, params_json: &str) -> Result<Value, String> {
    let members = parse_members(members)?;
    let params: EnsembleParams = if params_json.trim().is_empty() {
        EnsembleParams::default()
    } else {
        serde_json::from_str(params_json).map_err(|e| format!("parameters: {e}"))?
    };
    params.validate().map_err(|e| e.to_string())?;
    let rows: Vec<Value> = Strategy::ALL
        .iter()
        .filter(|s| **s != Strategy::Stacking)
        .map(|&s| match ensemble::run_strategy(s, &members, &[], &[], &[0], &params, 0) {
            Ok(out) => json!({
                "strategy": s.label(),
                "blend": out.blend[0],
                "final": out.finals[0],
                "members": out.audit.member_order,
                "weights": out.audit.weights,
            }),
            Err(e) => json!({ "strategy": s.label(), "error": e.to_string() }),
        })
        .collect();
    Ok(json!({ "strategies": rows }))
}

#[wasm_bindgen]
pub fn blend(members: &str, params_json: &str) -> String {
    respond(blend_value(members, params_json))
}

/// Samples confidence, tier adjustment and final score across [0, 4].
pub fn curves_value(tier_low: f64, tier_high: f64, tier_delta: f64, samples: usize) -> Result<Value, String> {
    let params = EnsembleParams { tier_low, tier_high, tier_delta, ..EnsembleParams::default() };
    params.validate().map_err(|e| e.to_string())?;
    let samples = samples.clamp(2, 2001);
    let points: Vec<Value> = (0..samples)
        .map(|i| {
            let p = 4.0 * i as f64 / (samples - 1) as f64;
            json!({
                "p": p,
                "confidence": confidence(p),
                "tiered": tier_adjust(p, &params),
                "final": ensemble::finalize(p).ok(),
            })
        })
        .collect();
    Ok(json!({ "points": points, "confidence_threshold": params.confidence_threshold }))
}

#[wasm_bindgen]
pub fn curves(tier_low: f64, tier_high: f64, tier_delta: f64, samples: usize) -> String {
    respond(curves_value(tier_low, tier_high, tier_delta, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agreement_reports_perfect_match() {
        let v = agreement_value("0 1 2 3 4", "0,1,2,3,4").unwrap();
        assert_eq!(v["qwk"], 1.0);
        assert_eq!(v["exact_agreement"], 1.0);
        assert_eq!(v["confusion"][3][3], 1);
    }

    #[test]
    fn agreement_rejects_bad_input() {
        assert!(agreement_value("0 1 7", "0 1 2").unwrap_err().contains("`7`"));
        assert!(agreement_value("0 1", "0").is_err());
        assert!(agreement("x", "1").contains("error"));
    }

    #[test]
    fn blend_covers_six_strategies() {
        let v = blend_value("electra-large 0.85 2.6\ndeberta-v3-large 0.84 3.1\nbert-base 0.82 2.9", "").unwrap();
        let rows = v["strategies"].as_array().unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.get("error").is_none()));
        let elite = rows.iter().find(|r| r["strategy"] == "Elite Ensemble").unwrap();
        let w: Vec<f64> = serde_json::from_value(elite["weights"].clone()).unwrap();
        assert_eq!(w.iter().filter(|&&x| x == 0.35 || x == 0.25).count(), 2);
    }

    #[test]
    fn blend_without_elites_reports_per_strategy_error() {
        let v = blend_value("a 0.7 2.0", "").unwrap();
        let rows = v["strategies"].as_array().unwrap();
        assert!(rows.iter().any(|r| r.get("error").is_some()));
        assert!(rows.iter().any(|r| r["strategy"] == "QWK Optimized Ensemble" && r["final"] == 2));
    }

    #[test]
    fn curves_span_the_scale() {
        let v = curves_value(1.0, 3.0, 0.1, 41).unwrap();
        let pts = v["points"].as_array().unwrap();
        assert_eq!(pts.len(), 41);
        assert_eq!(pts[0]["tiered"], 0.0);
        assert_eq!(pts[40]["final"], 4);
        assert!(curves_value(3.0, 1.0, 0.1, 10).is_err());
    }
}
