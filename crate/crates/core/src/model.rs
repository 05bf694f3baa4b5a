//! Instances, corpora, and the contamination labels attached to them.
//!
//! Everything here is immutable once built. Tokens are produced by a
//! whitespace tokenizer unless an external model supplied its own token
//! stream, in which case that stream is stored verbatim.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placeholder for the masked key inside a [`ContextKeyPair`].
///
/// It contains a space, so the whitespace tokenizer can never produce it.
pub const HOLE: &str = "<< hole >>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenizerConfig {
    #[serde(default)]
    pub lowercase: bool,
}

/// Splits on whitespace runs; optionally case-folds.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            if config.lowercase {
                t.to_lowercase()
            } else {
                t.to_owned()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    #[default]
    Unknown,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub domain: String,
    pub split: Split,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Instance {
    pub fn new(
        id: impl Into<String>,
        domain: impl Into<String>,
        split: Split,
        text: impl Into<String>,
        tokenizer: &TokenizerConfig,
    ) -> Self {
        let text = text.into();
        let tokens = tokenize(&text, tokenizer);
        Instance {
            id: id.into(),
            domain: domain.into(),
            split,
            text,
            tokens,
        }
    }

    /// Builds an instance whose tokens come from an external tokenizer.
    pub fn with_tokens(
        id: impl Into<String>,
        domain: impl Into<String>,
        split: Split,
        text: impl Into<String>,
        tokens: Vec<String>,
    ) -> Self {
        Instance {
            id: id.into(),
            domain: domain.into(),
            split,
            text: text.into(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn require_tokens(&self) -> Result<()> {
        if self.tokens.is_empty() {
            Err(Error::EmptyInstance {
                id: self.id.clone(),
            })
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixSuffixPair {
    pub prefix: Vec<String>,
    pub suffix: Vec<String>,
}

impl PrefixSuffixPair {
    pub fn concat(&self) -> Vec<String> {
        self.prefix.iter().chain(&self.suffix).cloned().collect()
    }
}

/// Requires `1 <= prefix_len < instance.len()` so both halves are non-empty.
pub fn split_pair(instance: &Instance, prefix_len: usize) -> Result<PrefixSuffixPair> {
    let n = instance.len();
    if prefix_len < 1 {
        return Err(Error::range(
            format!("prefix_len {prefix_len}"),
            "lower bound prefix_len >= 1",
        ));
    }
    if prefix_len >= n {
        return Err(Error::range(
            format!("prefix_len {prefix_len}"),
            format!("upper bound prefix_len < token count {n} (suffix would be empty)"),
        ));
    }
    Ok(PrefixSuffixPair {
        prefix: instance.tokens[..prefix_len].to_vec(),
        suffix: instance.tokens[prefix_len..].to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextKeyPair {
    /// Source tokens with the key replaced by a single [`HOLE`].
    pub context: Vec<String>,
    pub key: Vec<String>,
    pub key_span: Span,
}

impl ContextKeyPair {
    /// Tokens to the left of the hole.
    pub fn left_context(&self) -> &[String] {
        &self.context[..self.key_span.start]
    }

    pub fn reconstruct(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.context.len() + self.key.len());
        for tok in &self.context {
            if tok == HOLE {
                out.extend(self.key.iter().cloned());
            } else {
                out.push(tok.clone());
            }
        }
        out
    }
}

pub fn mask_key(instance: &Instance, span: Span) -> Result<ContextKeyPair> {
    let n = instance.len();
    if span.len < 1 {
        return Err(Error::range(
            format!("span length {}", span.len),
            "span length >= 1",
        ));
    }
    if span.start >= n || span.start + span.len > n {
        return Err(Error::range(
            format!("span ({}, {})", span.start, span.len),
            format!("start + length <= token count {n}"),
        ));
    }
    let end = span.start + span.len;
    let mut context = Vec::with_capacity(n - span.len + 1);
    context.extend_from_slice(&instance.tokens[..span.start]);
    context.push(HOLE.to_owned());
    context.extend_from_slice(&instance.tokens[end..]);
    Ok(ContextKeyPair {
        context,
        key: instance.tokens[span.start..end].to_vec(),
        key_span: span,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContaminationLabel {
    Seen,
    Unseen,
}

impl ContaminationLabel {
    pub fn is_seen(self) -> bool {
        self == ContaminationLabel::Seen
    }
}

impl fmt::Display for ContaminationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContaminationLabel::Seen => "seen",
            ContaminationLabel::Unseen => "unseen",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    instances: Vec<Instance>,
    domain_index: BTreeMap<String, Vec<String>>,
}

impl Corpus {
    /// Fails on empty or duplicate ids.
    pub fn new(instances: Vec<Instance>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(instances.len());
        let mut domain_index: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for inst in &instances {
            if inst.id.is_empty() {
                return Err(Error::Config("instance id must be non-empty".into()));
            }
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::Config(format!("duplicate instance id `{}`", inst.id)));
            }
            domain_index
                .entry(inst.domain.clone())
                .or_default()
                .push(inst.id.clone());
        }
        Ok(Corpus {
            instances,
            domain_index,
        })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<Instance> {
        self.instances
    }

    pub fn domain_index(&self) -> &BTreeMap<String, Vec<String>> {
        &self.domain_index
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.domain_index.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Instance> {
        self.instances.iter()
    }

    /// Sub-corpus of the instances matching `pred`, order preserved.
    pub fn filter(&self, pred: impl Fn(&Instance) -> bool) -> Corpus {
        let kept = self.instances.iter().filter(|i| pred(i)).cloned().collect();
        // ids were unique in self, so they remain unique.
        Corpus::new(kept).expect("subset of a valid corpus")
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Instance;
    type IntoIter = std::slice::Iter<'a, Instance>;

    fn into_iter(self) -> Self::IntoIter {
        self.instances.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictKind {
    Clean,
    Partial,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetVerdict {
    pub value: VerdictKind,
    pub seen_count: usize,
    pub total: usize,
}

pub fn dataset_verdict(labels: &[ContaminationLabel]) -> Result<DatasetVerdict> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset("no labels to aggregate".into()));
    }
    let total = labels.len();
    let seen_count = labels.iter().filter(|l| l.is_seen()).count();
    let value = if seen_count == 0 {
        VerdictKind::Clean
    } else if seen_count == total {
        VerdictKind::Full
    } else {
        VerdictKind::Partial
    };
    Ok(DatasetVerdict {
        value,
        seen_count,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(tokens: &[&str]) -> Instance {
        Instance::new("x", "d", Split::Train, tokens.join(" "), &TokenizerConfig::default())
    }

    #[test]
    fn tokenize_examples() {
        let cfg = TokenizerConfig::default();
        assert_eq!(tokenize("a  b\tc", &cfg), vec!["a", "b", "c"]);
        assert!(tokenize("", &cfg).is_empty());
        let lower = TokenizerConfig { lowercase: true };
        assert_eq!(tokenize("Hello World", &lower), vec!["hello", "world"]);
        assert_eq!(tokenize("Hello World", &cfg), vec!["Hello", "World"]);
    }

    #[test]
    fn split_pair_examples() {
        let p = split_pair(&inst(&["a", "b", "c", "d"]), 2).unwrap();
        assert_eq!(p.prefix, vec!["a", "b"]);
        assert_eq!(p.suffix, vec!["c", "d"]);
        let p = split_pair(&inst(&["a", "b"]), 1).unwrap();
        assert_eq!((p.prefix.len(), p.suffix.len()), (1, 1));
        let err = split_pair(&inst(&["a"]), 1).unwrap_err();
        assert!(err.to_string().contains("suffix would be empty"), "{err}");
        let err = split_pair(&inst(&["a", "b"]), 0).unwrap_err();
        assert!(err.to_string().contains(">= 1"), "{err}");
    }

    #[test]
    fn mask_key_examples() {
        let p = mask_key(&inst(&["born", "in", "1985"]), Span { start: 2, len: 1 }).unwrap();
        assert_eq!(p.context, vec!["born", "in", HOLE]);
        assert_eq!(p.key, vec!["1985"]);
        assert_eq!(p.left_context(), ["born", "in"]);

        let p = mask_key(&inst(&["a", "b", "c"]), Span { start: 0, len: 3 }).unwrap();
        assert_eq!(p.context, vec![HOLE]);
        assert_eq!(p.key, vec!["a", "b", "c"]);

        assert!(matches!(
            mask_key(&inst(&["a"]), Span { start: 1, len: 1 }),
            Err(Error::Range { .. })
        ));
        assert!(mask_key(&inst(&["a"]), Span { start: 0, len: 0 }).is_err());
    }

    #[test]
    fn hole_is_never_a_token() {
        let cfg = TokenizerConfig::default();
        assert!(!tokenize(&format!("x {HOLE} y"), &cfg).contains(&HOLE.to_string()));
    }

    #[test]
    fn verdict_examples() {
        use ContaminationLabel::*;
        assert_eq!(dataset_verdict(&[Seen, Seen]).unwrap().value, VerdictKind::Full);
        assert_eq!(dataset_verdict(&[Seen, Unseen]).unwrap().value, VerdictKind::Partial);
        assert_eq!(dataset_verdict(&[Unseen, Unseen]).unwrap().value, VerdictKind::Clean);
        assert!(matches!(dataset_verdict(&[]), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn verdict_exhaustive_up_to_ten() {
        use ContaminationLabel::*;
        for len in 1..=10usize {
            for mask in 0u32..(1 << len) {
                let labels: Vec<_> = (0..len)
                    .map(|i| if mask & (1 << i) != 0 { Seen } else { Unseen })
                    .collect();
                let v = dataset_verdict(&labels).unwrap();
                let all = labels.iter().all(|l| *l == Seen);
                let none = labels.iter().all(|l| *l == Unseen);
                assert_eq!(v.value == VerdictKind::Full, all);
                assert_eq!(v.value == VerdictKind::Clean, none);
                assert_eq!(v.seen_count, mask.count_ones() as usize);
                assert_eq!(v.total, len);
            }
        }
    }

    #[test]
    fn corpus_rejects_duplicates_and_indexes_domains() {
        let cfg = TokenizerConfig::default();
        let a = Instance::new("1", "x", Split::Train, "a", &cfg);
        let b = Instance::new("2", "y", Split::Test, "b", &cfg);
        let c = Instance::new("3", "x", Split::Test, "c", &cfg);
        let corpus = Corpus::new(vec![a.clone(), b, c]).unwrap();
        assert_eq!(corpus.domain_index()["x"], vec!["1", "3"]);
        let total: usize = corpus.domain_index().values().map(Vec::len).sum();
        assert_eq!(total, corpus.len());
        assert!(Corpus::new(vec![a.clone(), a]).is_err());
    }

    proptest! {
        #[test]
        fn tokenize_is_deterministic_and_idempotent(text in "[a-zA-Z \t\n]{0,40}", lower: bool) {
            let cfg = TokenizerConfig { lowercase: lower };
            let once = tokenize(&text, &cfg);
            prop_assert_eq!(&once, &tokenize(&text, &cfg));
            prop_assert_eq!(&once, &tokenize(&once.join(" "), &cfg));
        }

        #[test]
        fn split_then_concat_is_identity(tokens in prop::collection::vec("[a-z]{1,4}", 2..20), cut in 1usize..19) {
            let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
            let x = inst(&refs);
            let cut = 1 + (cut - 1) % (x.len() - 1);
            let pair = split_pair(&x, cut).unwrap();
            prop_assert_eq!(pair.prefix.len(), cut);
            prop_assert_eq!(pair.concat(), x.tokens);
        }

        #[test]
        fn mask_then_substitute_is_identity(tokens in prop::collection::vec("[a-z]{1,4}", 1..20), a in 0usize..20, b in 1usize..20) {
            let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
            let x = inst(&refs);
            let start = a % x.len();
            let len = 1 + (b - 1) % (x.len() - start);
            let pair = mask_key(&x, Span { start, len }).unwrap();
            prop_assert_eq!(pair.reconstruct(), x.tokens);
        }
    }
}
