//! Synthetic corpora and member predictions for end-to-end runs without the
//! real dataset or trained models.
//!
//! Truth follows the Prompt 6 score distribution exactly. Each member
//! predicts a shrunken, biased copy of the truth plus noise whose spread grows
//! toward the ends of the scale.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::EssayRecord;
use crate::ensemble::{MemberKey, SourceTag};
use crate::seed;

/// Prompt 6 resolution-score counts for scores 0..=4.
pub const PROMPT6_COUNTS: [usize; 5] = [44, 167, 405, 817, 367];

pub const MODEL_FAMILIES: [&str; 7] = [
    "bert-base",
    "deberta-base",
    "deberta-v3-large",
    "distilbert-base",
    "electra-large",
    "roberta-base",
    "roberta-large",
];

const VOCAB: [&str; 24] = [
    "the", "mast", "dirigible", "building", "wind", "builders", "dock", "obstacle", "empire", "state", "hydrogen",
    "law", "frame", "steel", "airship", "top", "engineers", "stress", "because", "they", "could", "not", "safely",
    "moor",
];

/// Shuffled truth scores with exactly `PROMPT6_COUNTS`.
pub fn truth_scores(seed: u64) -> Vec<u8> {
    let mut scores: Vec<u8> = PROMPT6_COUNTS
        .iter()
        .enumerate()
        .flat_map(|(s, &n)| std::iter::repeat_n(s as u8, n))
        .collect();
    scores.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(seed, "synth-truth")));
    scores
}

/// 1,800 prompt-6 essays with synthetic text and rater pairs whose maximum is
/// the truth score. Essay ids start at 10001.
pub fn corpus(seed: u64) -> Vec<EssayRecord> {
    let truth = truth_scores(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "synth-text"));
    let length = Normal::new(150.0, 60.0).expect("valid normal");
    truth
        .iter()
        .enumerate()
        .map(|(i, &score)| {
            let words = (length.sample(&mut rng) as i64).clamp(3, 454) as usize;
            let text: Vec<&str> = (0..words).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
            let other = if score > 0 && rng.random_bool(0.4) { score - 1 } else { score };
            let (r1, r2) = if rng.random_bool(0.5) { (score, other) } else { (other, score) };
            EssayRecord::new(10_001 + i as u32, 6, text.join(" "), r1, r2)
        })
        .collect()
}

/// Noise settings for one source.
#[derive(Debug, Clone, Copy)]
pub struct NoiseProfile {
    pub base_sd: f64,
    pub sd_spread: f64,
}

pub fn noise_profile(source: SourceTag) -> NoiseProfile {
    match source {
        SourceTag::Essay => NoiseProfile { base_sd: 0.34, sd_spread: 0.12 },
        SourceTag::RationaleA => NoiseProfile { base_sd: 0.42, sd_spread: 0.12 },
        SourceTag::RationaleB => NoiseProfile { base_sd: 0.46, sd_spread: 0.12 },
    }
}

/// Standard deviation of the per-essay error every member shares, so that
/// ensembles cannot average noise away completely.
pub const SHARED_SD: f64 = 0.28;

/// Seven members per source, 21 in all, predicting every essay in `corpus`.
pub fn members(corpus: &[EssayRecord], seed: u64) -> Vec<(MemberKey, BTreeMap<u32, f64>)> {
    let mut shared_rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "synth-shared"));
    let shared_noise = Normal::new(0.0, SHARED_SD).expect("valid normal");
    let shared: Vec<f64> = corpus.iter().map(|_| shared_noise.sample(&mut shared_rng)).collect();
    let mut out = Vec::new();
    for source in SourceTag::ALL {
        let profile = noise_profile(source);
        for (m, family) in MODEL_FAMILIES.iter().enumerate() {
            let key = MemberKey::new(source, *family);
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &format!("synth-member-{key}")));
            let sd = profile.base_sd + profile.sd_spread * (m as f64 / 6.0) + rng.random_range(-0.03..0.03);
            let shrink = rng.random_range(0.80..0.95);
            let bias = rng.random_range(-0.15..0.15);
            let unit = Normal::new(0.0, 1.0).expect("valid normal");
            let preds = corpus
                .iter()
                .zip(&shared)
                .map(|(e, &common)| {
                    let t = f64::from(e.resolution_score);
                    let spread = sd * (0.75 + 0.25 * (t - 2.0).abs());
                    let p = 2.6 + shrink * (t - 2.6) + bias + common + spread * unit.sample(&mut rng);
                    (e.essay_id, p.clamp(0.0, 4.0))
                })
                .collect();
            out.push((key, preds));
        }
    }
    out
}

/// Paths written by [`write_run`].
#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub corpus: PathBuf,
    pub members: PathBuf,
}

/// Writes `corpus.tsv`, one member file per model under `members/` at 4
/// decimals, and `members/manifest.csv`.
pub fn write_run(dir: &Path, seed: u64) -> std::io::Result<SyntheticRun> {
    std::fs::create_dir_all(dir.join("members"))?;
    let essays = corpus(seed);
    let mut tsv = String::from("essay_id\tessay_set\tessay\trater1_domain1\trater2_domain1\tdomain1_score\n");
    for e in &essays {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.essay_id, e.prompt_id, e.text, e.rater1_score, e.rater2_score, e.resolution_score
        ));
    }
    let corpus_path = dir.join("corpus.tsv");
    std::fs::write(&corpus_path, tsv)?;

    let mut manifest = String::from("model_id,source_tag,path\n");
    for (key, preds) in members(&essays, seed) {
        let file = format!("{}__{}.csv", key.source, key.model_id);
        let mut body = String::from("essay_id,prediction\n");
        for (id, p) in preds {
            body.push_str(&format!("{id},{p:.4}\n"));
        }
        std::fs::write(dir.join("members").join(&file), body)?;
        manifest.push_str(&format!("{},{},{}\n", key.model_id, key.source, file));
    }
    let manifest_path = dir.join("members").join("manifest.csv");
    std::fs::write(&manifest_path, manifest)?;
    Ok(SyntheticRun { corpus: corpus_path, members: manifest_path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::score_distribution;

    #[test]
    fn truth_matches_distribution() {
        let c = corpus(3);
        assert_eq!(c.len(), 1800);
        assert_eq!(score_distribution(&c).counts, PROMPT6_COUNTS);
        assert!(c.iter().all(|e| e.resolution_score == e.rater1_score.max(e.rater2_score)));
    }

    #[test]
    fn members_are_deterministic_and_bounded() {
        let c = corpus(5);
        let a = members(&c, 5);
        assert_eq!(a.len(), 21);
        assert_eq!(a, members(&c, 5));
        assert!(a.iter().all(|(_, p)| p.len() == 1800 && p.values().all(|v| (0.0..=4.0).contains(v))));
    }
}
