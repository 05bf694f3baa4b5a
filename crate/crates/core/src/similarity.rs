//! Instance-to-instance similarity and the existential corpus scan.
//!
//! A training corpus contaminates `x` when some training instance is close
//! enough to `x` under the configured similarity. [`portrait`] offers the
//! same question answered approximately from a Bloom sketch.

pub mod portrait;

use std::borrow::Cow;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContaminationLabel, Corpus, Instance};

pub use portrait::{build_portrait, query_portrait, PortraitHit, PortraitIndex};

pub const DEFAULT_JACCARD_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimilarityKind {
    Exact,
    TokenJaccard { width: usize, threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    #[serde(flatten)]
    pub kind: SimilarityKind,
    #[serde(default)]
    pub case_fold: bool,
}

impl SimilarityConfig {
    pub fn exact() -> Self {
        SimilarityConfig {
            kind: SimilarityKind::Exact,
            case_fold: false,
        }
    }

    pub fn jaccard(width: usize, threshold: f64) -> Result<Self> {
        let cfg = SimilarityConfig {
            kind: SimilarityKind::TokenJaccard { width, threshold },
            case_fold: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_case_fold(mut self, on: bool) -> Self {
        self.case_fold = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let SimilarityKind::TokenJaccard { width, threshold } = self.kind {
            if width < 1 {
                return Err(Error::Parameter("jaccard width must be >= 1".into()));
            }
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(Error::Parameter(format!(
                    "jaccard threshold must be in (0, 1], got {threshold}"
                )));
            }
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        match self.kind {
            SimilarityKind::Exact => 1.0,
            SimilarityKind::TokenJaccard { threshold, .. } => threshold,
        }
    }
}

fn folded<'a>(tokens: &'a [String], case_fold: bool) -> Cow<'a, [String]> {
    if case_fold {
        Cow::Owned(tokens.iter().map(|t| t.to_lowercase()).collect())
    } else {
        Cow::Borrowed(tokens)
    }
}

fn gram_set(tokens: &[String], width: usize) -> HashSet<&[String]> {
    if tokens.len() < width {
        return HashSet::new();
    }
    tokens.windows(width).collect()
}

fn jaccard_sets(a: &HashSet<&[String]>, b: &HashSet<&[String]>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = if a.len() <= b.len() {
        a.iter().filter(|g| b.contains(*g)).count()
    } else {
        b.iter().filter(|g| a.contains(*g)).count()
    };
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Similarity in [0, 1] between two token sequences.
pub fn similarity_tokens(a: &[String], b: &[String], config: &SimilarityConfig) -> f64 {
    let a = folded(a, config.case_fold);
    let b = folded(b, config.case_fold);
    match config.kind {
        SimilarityKind::Exact => {
            if a == b {
                1.0
            } else {
                0.0
            }
        }
        SimilarityKind::TokenJaccard { width, .. } => {
            jaccard_sets(&gram_set(&a, width), &gram_set(&b, width))
        }
    }
}

pub fn similarity(x: &Instance, other: &Instance, config: &SimilarityConfig) -> f64 {
    similarity_tokens(&x.tokens, &other.tokens, config)
}

/// The binary indicator `b(x, x')`: 1 iff similarity reaches the threshold.
pub fn b_indicator(x: &Instance, other: &Instance, config: &SimilarityConfig) -> u8 {
    u8::from(similarity(x, other, config) >= config.threshold())
}

/// Labels `x` seen iff some training instance triggers [`b_indicator`].
pub fn scan_contamination(
    training: &Corpus,
    x: &Instance,
    config: &SimilarityConfig,
) -> Result<ContaminationLabel> {
    if training.is_empty() {
        return Err(Error::EmptyDataset("training corpus is empty".into()));
    }
    config.validate()?;
    let query = folded(&x.tokens, config.case_fold);
    let hit = match config.kind {
        SimilarityKind::Exact => training
            .instances()
            .par_iter()
            .any(|t| *folded(&t.tokens, config.case_fold) == *query),
        SimilarityKind::TokenJaccard { width, threshold } => {
            let qset = gram_set(&query, width);
            training.instances().par_iter().any(|t| {
                let toks = folded(&t.tokens, config.case_fold);
                let tset = gram_set(&toks, width);
                // |A∩B|/|A∪B| <= min/max; skip pairs that cannot reach θ.
                let (lo, hi) = if qset.len() <= tset.len() {
                    (qset.len(), tset.len())
                } else {
                    (tset.len(), qset.len())
                };
                if hi > 0 && (lo as f64) < threshold * hi as f64 {
                    return false;
                }
                jaccard_sets(&qset, &tset) >= threshold
            })
        }
    };
    Ok(if hit {
        ContaminationLabel::Seen
    } else {
        ContaminationLabel::Unseen
    })
}
