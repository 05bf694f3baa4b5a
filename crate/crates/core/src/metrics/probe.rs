//! Generation-based probes: key-information completion, metadata-prompted
//! generation, and the paired-benchmark answer-memorization check.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ContextKeyPair, Corpus};
use crate::ngram::{NgramModel, SamplingStrategy};
use crate::similarity::{similarity_tokens, SimilarityConfig};

/// Greedy-completes the left context for `|key|` tokens and compares with the key.
pub fn keyinfo_score(model: &NgramModel, pair: &ContextKeyPair, sim: &SimilarityConfig) -> Result<f64> {
    let left = pair.left_context();
    if left.is_empty() {
        return Err(Error::NotApplicable(
            "hole at position 0 leaves no left context to complete from".into(),
        ));
    }
    let output = model.greedy_decode(left, pair.key.len());
    Ok(similarity_tokens(&output, &pair.key, sim))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetadataHit {
    pub max_similarity: f64,
    pub instance_id: String,
}

/// Best similarity between `x` and any |x|-token window of `generation`.
fn best_window(generation: &[String], x: &[String], sim: &SimilarityConfig) -> f64 {
    if generation.len() <= x.len() {
        return similarity_tokens(generation, x, sim);
    }
    generation
        .windows(x.len())
        .map(|w| similarity_tokens(w, x, sim))
        .fold(0.0, f64::max)
}

/// Samples `n_samples` continuations of a metadata prompt; sample `i` uses
/// seed `gen.seed + i`.
pub fn metadata_generations(
    model: &NgramModel,
    metadata_prompt: &[String],
    gen: &SamplingStrategy,
    n_samples: usize,
    max_len: usize,
) -> Result<Vec<Vec<String>>> {
    if n_samples < 1 {
        return Err(Error::Parameter("n_samples must be >= 1".into()));
    }
    gen.validate()?;
    (0..n_samples as u64)
        .map(|i| model.sample_decode(metadata_prompt, &gen.with_seed(gen.seed.wrapping_add(i)), max_len))
        .collect()
}

/// How closely any of `generations` reproduces `x`; the per-instance score.
pub fn metadata_similarity(generations: &[Vec<String>], x: &[String], sim: &SimilarityConfig) -> f64 {
    generations
        .iter()
        .map(|g| best_window(g, x, sim))
        .fold(0.0, f64::max)
}

/// Reports the dataset instance most closely reproduced by any sampled
/// continuation of a metadata prompt. Ties keep the earliest instance.
pub fn metadata_probe(
    model: &NgramModel,
    metadata_prompt: &[String],
    dataset: &Corpus,
    gen: &SamplingStrategy,
    n_samples: usize,
    max_len: usize,
    sim: &SimilarityConfig,
) -> Result<MetadataHit> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("metadata probe needs a non-empty dataset".into()));
    }
    let generations = metadata_generations(model, metadata_prompt, gen, n_samples, max_len)?;
    let mut best: Option<(f64, &str)> = None;
    for x in dataset.iter().filter(|x| !x.is_empty()) {
        let score = metadata_similarity(&generations, &x.tokens, sim);
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, &x.id));
        }
    }
    let (max_similarity, id) = best.ok_or_else(|| {
        Error::EmptyDataset("every dataset instance is empty".into())
    })?;
    Ok(MetadataHit {
        max_similarity,
        instance_id: id.to_owned(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnswerMemVerdict {
    pub flagged: bool,
    pub delta: f64,
}

/// Flags when performance on the original benchmark beats the paired,
/// rewritten benchmark by more than `margin`.
pub fn answer_mem_delta(eval_original: f64, eval_paired: f64, margin: f64) -> Result<AnswerMemVerdict> {
    for (name, v) in [("eval_D", eval_original), ("eval_D'", eval_paired)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Parameter(format!("{name} must be in [0, 1], got {v}")));
        }
    }
    if !(margin >= 0.0) {
        return Err(Error::Parameter(format!("margin must be >= 0, got {margin}")));
    }
    let delta = eval_original - eval_paired;
    Ok(AnswerMemVerdict {
        flagged: delta > margin,
        delta,
    })
}
