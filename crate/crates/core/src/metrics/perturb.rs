//! Surface perturbations that turn an instance into a similar, unseen one.
//!
//! All edits happen on the raw text and the result is re-tokenized, so the
//! perturbed instance always satisfies the tokenizer invariant.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tokenize, Instance, TokenizerConfig};
use crate::ngram::LogProbRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Doubles a random subset of the separators between words.
    Whitespace,
    /// Flips the case of every letter.
    CaseChange,
    RandomDeletion { rate: f64 },
    /// Replaces non-whitespace characters with random lowercase letters.
    CharNoise { rate: f64 },
    SentenceShuffle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    #[serde(flatten)]
    pub kind: PerturbationKind,
    pub seed: u64,
}

impl Perturbation {
    pub fn new(kind: PerturbationKind, seed: u64) -> Result<Self> {
        let p = Perturbation { kind, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PerturbationKind::RandomDeletion { rate } | PerturbationKind::CharNoise { rate }
                if !(0.0..1.0).contains(&rate) =>
            {
                Err(Error::Parameter(format!("perturbation rate must be in [0, 1), got {rate}")))
            }
            _ => Ok(()),
        }
    }
}

fn is_terminal(word: &str) -> bool {
    matches!(word.chars().last(), Some('.' | '!' | '?'))
}

/// Groups words into sentences ending at a word with terminal punctuation.
/// Trailing words without a terminator form a final fragment.
pub fn split_sentences(text: &str) -> Vec<Vec<&str>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for w in text.split_whitespace() {
        cur.push(w);
        if is_terminal(w) {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn flip_case(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_lowercase() {
            out.extend(c.to_uppercase());
        } else if c.is_uppercase() {
            out.extend(c.to_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

/// Deterministic under `(instance, perturbation)`; id, domain and split are kept.
pub fn perturb(instance: &Instance, perturbation: &Perturbation, tokenizer: &TokenizerConfig) -> Result<Instance> {
    perturbation.validate()?;
    instance.require_tokens()?;
    let mut rng = ChaCha8Rng::seed_from_u64(perturbation.seed);
    let text = match perturbation.kind {
        PerturbationKind::Whitespace => {
            let words: Vec<&str> = instance.text.split_whitespace().collect();
            let mut out = String::with_capacity(instance.text.len() * 2);
            for (i, w) in words.iter().enumerate() {
                if i > 0 {
                    out.push_str(if rng.random_bool(0.5) { "  " } else { " " });
                }
                out.push_str(w);
            }
            out
        }
        PerturbationKind::CaseChange => flip_case(&instance.text),
        PerturbationKind::RandomDeletion { rate } => {
            let words: Vec<&str> = instance.text.split_whitespace().collect();
            let kept: Vec<&str> = words
                .iter()
                .copied()
                .filter(|_| rng.random::<f64>() >= rate)
                .collect();
            if kept.len() == words.len() {
                return Ok(instance.clone());
            }
            kept.join(" ")
        }
        PerturbationKind::CharNoise { rate } => instance
            .text
            .chars()
            .map(|c| {
                if !c.is_whitespace() && rng.random::<f64>() < rate {
                    rng.random_range(b'a'..=b'z') as char
                } else {
                    c
                }
            })
            .collect(),
        PerturbationKind::SentenceShuffle => {
            let mut sentences = split_sentences(&instance.text);
            // An unterminated fragment stays last so re-splitting yields the same sentences.
            let tail = match sentences.last() {
                Some(s) if !is_terminal(s[s.len() - 1]) => sentences.pop(),
                _ => None,
            };
            if sentences.len() < 2 {
                return Err(Error::NotApplicable(format!(
                    "sentence shuffle needs at least 2 terminated sentences, `{}` has {}",
                    instance.id,
                    sentences.len()
                )));
            }
            let original = sentences.clone();
            sentences.shuffle(&mut rng);
            if sentences == original {
                sentences.rotate_left(1);
            }
            sentences.extend(tail);
            sentences.iter().map(|s| s.join(" ")).collect::<Vec<_>>().join(" ")
        }
    };
    let tokens = tokenize(&text, tokenizer);
    Ok(Instance {
        id: instance.id.clone(),
        domain: instance.domain.clone(),
        split: instance.split,
        text,
        tokens,
    })
}

/// Mean token log-probability of `x` minus that of its perturbation.
pub fn perturb_delta(original: &LogProbRecord, perturbed: &LogProbRecord) -> Result<f64> {
    for r in [original, perturbed] {
        if r.is_empty() {
            return Err(Error::EmptyInstance { id: r.instance_id.clone() });
        }
    }
    let mean = |r: &LogProbRecord| r.total_logprob() / r.len() as f64;
    Ok(mean(original) - mean(perturbed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Split;
    use proptest::prelude::*;

    fn inst(text: &str) -> Instance {
        Instance::new("x", "d", Split::Train, text, &TokenizerConfig::default())
    }

    fn run(x: &Instance, kind: PerturbationKind, seed: u64) -> Result<Instance> {
        perturb(x, &Perturbation::new(kind, seed)?, &TokenizerConfig::default())
    }

    #[test]
    fn deletion_rate_zero_is_identity() {
        let x = inst("a  b\tc d");
        assert_eq!(run(&x, PerturbationKind::RandomDeletion { rate: 0.0 }, 3).unwrap(), x);
        assert_eq!(run(&x, PerturbationKind::CharNoise { rate: 0.0 }, 3).unwrap(), x);
    }

    #[test]
    fn case_flip() {
        let x = inst("AbC");
        assert_eq!(run(&x, PerturbationKind::CaseChange, 0).unwrap().text, "aBc");
    }

    #[test]
    fn whitespace_keeps_tokens() {
        let x = inst("one two three four five six seven");
        let y = run(&x, PerturbationKind::Whitespace, 7).unwrap();
        assert_eq!(y.tokens, x.tokens);
        assert_ne!(y.text, x.text);
    }

    #[test]
    fn shuffle_preserves_sentence_multiset() {
        let x = inst("The cat sat. A dog ran! Who knows? fin");
        let y = run(&x, PerturbationKind::SentenceShuffle, 11).unwrap();
        let mut a: Vec<Vec<&str>> = split_sentences(&x.text);
        let mut b: Vec<Vec<&str>> = split_sentences(&y.text);
        assert_ne!(a, b);
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(y.len(), x.len());
        assert!(y.text.ends_with("fin"));
    }

    #[test]
    fn shuffle_needs_two_sentences() {
        let x = inst("only one sentence here.");
        assert!(matches!(run(&x, PerturbationKind::SentenceShuffle, 0), Err(Error::NotApplicable(_))));
        let x = inst("one sentence. and a fragment");
        assert!(matches!(run(&x, PerturbationKind::SentenceShuffle, 0), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn rejects_bad_rates_and_empty_instances() {
        assert!(Perturbation::new(PerturbationKind::RandomDeletion { rate: 1.0 }, 0).is_err());
        assert!(Perturbation::new(PerturbationKind::CharNoise { rate: -0.1 }, 0).is_err());
        assert!(matches!(run(&inst(""), PerturbationKind::CaseChange, 0), Err(Error::EmptyInstance { .. })));
    }

    #[test]
    fn deletion_count_is_binomial() {
        // mean removed over many seeds ≈ n·r, variance ≈ n·r·(1-r)
        let words: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
        let x = inst(&words.join(" "));
        let rate = 0.3;
        let trials = 2000;
        let removed: Vec<f64> = (0..trials)
            .map(|s| (x.len() - run(&x, PerturbationKind::RandomDeletion { rate }, s).unwrap().len()) as f64)
            .collect();
        let mean = removed.iter().sum::<f64>() / trials as f64;
        let var = removed.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let n = x.len() as f64;
        let se = (n * rate * (1.0 - rate) / trials as f64).sqrt();
        assert!((mean - n * rate).abs() < 4.0 * se, "mean {mean}");
        assert!((var / (n * rate * (1.0 - rate)) - 1.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn delta_examples() {
        let r = |lps: &[f64]| LogProbRecord {
            instance_id: "r".into(),
            tokens: vec!["t".into(); lps.len()],
            token_logprobs: lps.to_vec(),
            topk: None,
            truncated: false,
        };
        let a = r(&[-1.0, -2.0]);
        let b = r(&[-3.0, -3.0, -3.0]);
        assert_eq!(perturb_delta(&a, &a).unwrap(), 0.0);
        assert_eq!(perturb_delta(&a, &b).unwrap(), 1.5);
        assert_eq!(perturb_delta(&b, &a).unwrap(), -1.5);
        assert!(perturb_delta(&a, &r(&[])).is_err());
    }

    proptest! {
        #[test]
        fn pure_function_of_seed(words in prop::collection::vec("[A-Za-z]{1,5}[.!?]?", 2..30), seed in any::<u64>(), rate in 0.0f64..0.9) {
            let x = inst(&words.join(" "));
            for kind in [
                PerturbationKind::Whitespace,
                PerturbationKind::CaseChange,
                PerturbationKind::RandomDeletion { rate },
                PerturbationKind::CharNoise { rate },
            ] {
                let a = run(&x, kind, seed).unwrap();
                prop_assert_eq!(&a, &run(&x, kind, seed).unwrap());
                prop_assert_eq!(a.tokens.clone(), tokenize(&a.text, &TokenizerConfig::default()));
            }
        }

        #[test]
        fn deletion_keeps_a_subsequence(words in prop::collection::vec("[a-z]{1,4}", 1..40), seed in any::<u64>(), rate in 0.0f64..0.99) {
            let x = inst(&words.join(" "));
            let y = run(&x, PerturbationKind::RandomDeletion { rate }, seed).unwrap();
            let mut it = x.tokens.iter();
            for t in &y.tokens {
                prop_assert!(it.any(|s| s == t));
            }
        }
    }
}
