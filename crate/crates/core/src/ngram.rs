//! Add-α smoothed n-gram causal language model.
//!
//! The model is the stand-in for both the model under test and the reference
//! model. Token ids are assigned in lexicographic order of the token strings,
//! so every "lexicographic tie-break" below is a tie-break on id.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Corpus, Instance};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Top-k width stored in records by default; covers "Mem 25" / "Entropy 25".
pub const DEFAULT_K_RECORD: usize = 25;

const MODEL_FORMAT: &str = "contamkit-ngram";
const MODEL_VERSION: u32 = 1;

type TokenId = u32;

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    /// Successor counts sorted by token id.
    by_id: Vec<(TokenId, u64)>,
    /// Successor ids sorted by count descending, then id ascending.
    ranked: Vec<TokenId>,
}

impl ContextCounts {
    fn count(&self, tok: TokenId) -> u64 {
        match self.by_id.binary_search_by_key(&tok, |&(t, _)| t) {
            Ok(i) => self.by_id[i].1,
            Err(_) => 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    alpha: f64,
    exposure_multiplier: u64,
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    bos: TokenId,
    eos: TokenId,
    unk: TokenId,
    contexts: HashMap<Box<[TokenId]>, ContextCounts>,
}

/// Accumulates counts from one or more corpora, each at its own exposure.
#[derive(Debug, Clone)]
pub struct NgramTrainer {
    order: usize,
    alpha: f64,
    max_multiplier: u64,
    names: Vec<String>,
    interner: HashMap<String, TokenId>,
    counts: HashMap<Box<[TokenId]>, HashMap<TokenId, u64>>,
    instances: usize,
}

impl NgramTrainer {
    pub fn new(order: usize, alpha: f64) -> Result<Self> {
        if order < 1 {
            return Err(Error::Training(format!("order must be >= 1, got {order}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Training(format!("alpha must be > 0, got {alpha}")));
        }
        let mut trainer = NgramTrainer {
            order,
            alpha,
            max_multiplier: 1,
            names: Vec::new(),
            interner: HashMap::new(),
            counts: HashMap::new(),
            instances: 0,
        };
        for s in [BOS, EOS, UNK] {
            trainer.intern_raw(s);
        }
        Ok(trainer)
    }

    fn intern_raw(&mut self, tok: &str) -> TokenId {
        if let Some(&id) = self.interner.get(tok) {
            return id;
        }
        let id = self.names.len() as TokenId;
        self.names.push(tok.to_owned());
        self.interner.insert(tok.to_owned(), id);
        id
    }

    /// Literal sentinel strings in the data are counted as `<unk>`.
    fn intern(&mut self, tok: &str) -> TokenId {
        if tok == BOS || tok == EOS {
            return self.interner[UNK];
        }
        self.intern_raw(tok)
    }

    pub fn add_tokens<S: AsRef<str>>(&mut self, tokens: &[S], multiplier: u64) -> Result<()> {
        if multiplier < 1 {
            return Err(Error::Training("exposure multiplier must be >= 1".into()));
        }
        self.max_multiplier = self.max_multiplier.max(multiplier);
        let bos = self.interner[BOS];
        let eos = self.interner[EOS];
        let ctx_len = self.order - 1;
        let mut padded = Vec::with_capacity(ctx_len + tokens.len() + 1);
        padded.resize(ctx_len, bos);
        for t in tokens {
            let id = self.intern(t.as_ref());
            padded.push(id);
        }
        padded.push(eos);
        for i in ctx_len..padded.len() {
            let ctx = &padded[i - ctx_len..i];
            let next = padded[i];
            match self.counts.get_mut(ctx) {
                Some(m) => *m.entry(next).or_insert(0) += multiplier,
                None => {
                    let mut m = HashMap::new();
                    m.insert(next, multiplier);
                    self.counts.insert(ctx.into(), m);
                }
            }
        }
        self.instances += 1;
        Ok(())
    }

    pub fn add_corpus(&mut self, corpus: &Corpus, multiplier: u64) -> Result<()> {
        for inst in corpus {
            self.add_tokens(&inst.tokens, multiplier)?;
        }
        Ok(())
    }

    pub fn add_instances<'a>(
        &mut self,
        instances: impl IntoIterator<Item = &'a Instance>,
        multiplier: u64,
    ) -> Result<()> {
        for inst in instances {
            self.add_tokens(&inst.tokens, multiplier)?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<NgramModel> {
        if self.instances == 0 {
            return Err(Error::Training("cannot train on an empty corpus".into()));
        }
        let mut sorted: Vec<(String, TokenId)> = self.interner.into_iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let mut remap = vec![0 as TokenId; self.names.len()];
        let mut vocab = Vec::with_capacity(sorted.len());
        for (new_id, (name, old_id)) in sorted.into_iter().enumerate() {
            remap[old_id as usize] = new_id as TokenId;
            vocab.push(name);
        }
        let contexts = self
            .counts
            .into_iter()
            .map(|(ctx, next)| {
                let ctx: Box<[TokenId]> = ctx.iter().map(|&t| remap[t as usize]).collect();
                let pairs = next.into_iter().map(|(t, c)| (remap[t as usize], c));
                (ctx, build_context(pairs))
            })
            .collect();
        Ok(NgramModel::assemble(
            self.order,
            self.alpha,
            self.max_multiplier,
            vocab,
            contexts,
        ))
    }
}

fn build_context(pairs: impl IntoIterator<Item = (TokenId, u64)>) -> ContextCounts {
    let mut by_id: Vec<(TokenId, u64)> = pairs.into_iter().collect();
    by_id.sort_unstable_by_key(|&(t, _)| t);
    let total = by_id.iter().map(|&(_, c)| c).sum();
    let mut ranked: Vec<(TokenId, u64)> = by_id.clone();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ContextCounts {
        total,
        by_id,
        ranked: ranked.into_iter().map(|(t, _)| t).collect(),
    }
}

/// Trains on every instance of `corpus`, each counted `exposure_multiplier` times.
pub fn train(
    corpus: &Corpus,
    order: usize,
    alpha: f64,
    exposure_multiplier: u64,
) -> Result<NgramModel> {
    if corpus.is_empty() {
        return Err(Error::Training("cannot train on an empty corpus".into()));
    }
    let mut trainer = NgramTrainer::new(order, alpha)?;
    trainer.add_corpus(corpus, exposure_multiplier)?;
    trainer.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProb {
    #[serde(rename = "t")]
    pub token: String,
    #[serde(rename = "lp")]
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenProb {
    pub token: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopKDistribution {
    pub entries: Vec<TokenProb>,
    /// Set when the requested k exceeded the vocabulary size.
    pub clamped: bool,
}

/// Per-token log-probabilities of one instance under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbRecord {
    pub instance_id: String,
    pub tokens: Vec<String>,
    #[serde(rename = "logprobs")]
    pub token_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<Vec<Vec<TokenLogProb>>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl LogProbRecord {
    pub fn len(&self) -> usize {
        self.token_logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_logprobs.is_empty()
    }

    pub fn total_logprob(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }

    /// Width of the stored top-k lists, or `None` when the record has none.
    pub fn k_record(&self) -> Option<usize> {
        self.topk
            .as_ref()
            .map(|lists| lists.first().map_or(0, Vec::len))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingKind {
    Greedy,
    TopK { k: usize },
    TopP { p: f64 },
    Temperature { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingStrategy {
    #[serde(flatten)]
    pub kind: SamplingKind,
    pub seed: u64,
}

impl SamplingStrategy {
    pub fn new(kind: SamplingKind, seed: u64) -> Result<Self> {
        let s = SamplingStrategy { kind, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SamplingKind::Greedy => Ok(()),
            SamplingKind::TopK { k } if k >= 1 => Ok(()),
            SamplingKind::TopP { p } if p > 0.0 && p <= 1.0 => Ok(()),
            SamplingKind::Temperature { t } if t > 0.0 && t.is_finite() => Ok(()),
            other => Err(Error::Parameter(format!("invalid sampling strategy {other:?}"))),
        }
    }

    /// Same strategy with a seed derived from this one; used for repeated draws.
    pub fn with_seed(&self, seed: u64) -> Self {
        SamplingStrategy {
            kind: self.kind,
            seed,
        }
    }
}

impl NgramModel {
    fn assemble(
        order: usize,
        alpha: f64,
        exposure_multiplier: u64,
        vocab: Vec<String>,
        contexts: HashMap<Box<[TokenId]>, ContextCounts>,
    ) -> Self {
        let index: HashMap<String, TokenId> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        NgramModel {
            order,
            alpha,
            exposure_multiplier,
            bos: index[BOS],
            eos: index[EOS],
            unk: index[UNK],
            vocab,
            index,
            contexts,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Largest multiplier applied to any training source.
    pub fn exposure_multiplier(&self) -> u64 {
        self.exposure_multiplier
    }

    /// Vocabulary in id order (lexicographic), sentinels included.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Raw n-gram count stored for `token` after `context` (last n-1 tokens used).
    pub fn count(&self, context: &[String], token: &str) -> u64 {
        let key = self.context_key(&self.ids(context));
        let tok = self.id(token);
        self.contexts.get(key.as_slice()).map_or(0, |c| c.count(tok))
    }

    fn id(&self, token: &str) -> TokenId {
        if token == BOS || token == EOS {
            return self.unk;
        }
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    fn ids(&self, tokens: &[String]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Last n-1 ids of the BOS-padded history.
    fn context_key(&self, history: &[TokenId]) -> Vec<TokenId> {
        let width = self.order - 1;
        let mut key = Vec::with_capacity(width);
        let have = history.len().min(width);
        key.extend(std::iter::repeat_n(self.bos, width - have));
        key.extend_from_slice(&history[history.len() - have..]);
        key
    }

    fn lookup(&self, key: &[TokenId]) -> Option<&ContextCounts> {
        self.contexts.get(key)
    }

    fn logprob_ids(&self, key: &[TokenId], tok: TokenId) -> f64 {
        let (c, total) = match self.lookup(key) {
            Some(ctx) => (ctx.count(tok), ctx.total),
            None => (0, 0),
        };
        self.smoothed_ln(c, total)
    }

    fn smoothed_ln(&self, count: u64, total: u64) -> f64 {
        let v = self.vocab.len() as f64;
        ((count as f64 + self.alpha) / (total as f64 + self.alpha * v)).ln()
    }

    /// ln P(token | context); unknown tokens score as `<unk>`.
    pub fn token_logprob(&self, context: &[String], token: &str) -> f64 {
        let key = self.context_key(&self.ids(context));
        self.logprob_ids(&key, self.id(token))
    }

    /// Ids of the k most probable successors, id order among equal counts.
    fn topk_ids(&self, key: &[TokenId], k: usize) -> Vec<TokenId> {
        let k = k.min(self.vocab.len());
        let mut out = Vec::with_capacity(k);
        let ctx = self.lookup(key);
        if let Some(ctx) = ctx {
            out.extend(ctx.ranked.iter().take(k).copied());
        }
        let mut next_free: TokenId = 0;
        while out.len() < k {
            let observed = ctx.is_some_and(|c| c.count(next_free) > 0);
            if !observed {
                out.push(next_free);
            }
            next_free += 1;
        }
        out
    }

    fn argmax(&self, key: &[TokenId]) -> TokenId {
        match self.lookup(key).and_then(|c| c.ranked.first()) {
            Some(&t) => t,
            // Every token is at the add-α floor; lowest id wins.
            None => 0,
        }
    }

    pub fn topk_next(&self, context: &[String], k: usize) -> Result<TopKDistribution> {
        if k < 1 {
            return Err(Error::Parameter("k must be >= 1".into()));
        }
        let key = self.context_key(&self.ids(context));
        let clamped = k > self.vocab.len();
        let entries = self
            .topk_ids(&key, k)
            .into_iter()
            .map(|t| TokenProb {
                token: self.vocab[t as usize].clone(),
                prob: self.logprob_ids(&key, t).exp(),
            })
            .collect();
        Ok(TopKDistribution { entries, clamped })
    }

    pub fn sequence_logprobs(&self, instance: &Instance) -> Result<LogProbRecord> {
        self.sequence_logprobs_k(instance, DEFAULT_K_RECORD)
    }

    /// Like [`Self::sequence_logprobs`] with an explicit top-k width (0 = no top-k).
    pub fn sequence_logprobs_k(&self, instance: &Instance, k_record: usize) -> Result<LogProbRecord> {
        self.score_tokens(&instance.id, &instance.tokens, k_record)
    }

    pub fn score_tokens(
        &self,
        instance_id: &str,
        tokens: &[String],
        k_record: usize,
    ) -> Result<LogProbRecord> {
        if tokens.is_empty() {
            return Err(Error::EmptyInstance {
                id: instance_id.to_owned(),
            });
        }
        let width = self.order - 1;
        let mut padded = vec![self.bos; width];
        padded.extend(tokens.iter().map(|t| self.id(t)));
        let mut token_logprobs = Vec::with_capacity(tokens.len());
        let mut topk = (k_record > 0).then(|| Vec::with_capacity(tokens.len()));
        for i in width..padded.len() {
            let key = &padded[i - width..i];
            token_logprobs.push(self.logprob_ids(key, padded[i]));
            if let Some(lists) = topk.as_mut() {
                let list = self
                    .topk_ids(key, k_record)
                    .into_iter()
                    .map(|t| TokenLogProb {
                        token: self.vocab[t as usize].clone(),
                        logprob: self.logprob_ids(key, t),
                    })
                    .collect();
                lists.push(list);
            }
        }
        Ok(LogProbRecord {
            instance_id: instance_id.to_owned(),
            tokens: tokens.to_vec(),
            token_logprobs,
            topk,
            truncated: false,
        })
    }

    pub fn greedy_decode(&self, prefix: &[String], max_len: usize) -> Vec<String> {
        self.decode(prefix, max_len, |model, key, _| model.argmax(key), &mut ())
    }

    pub fn sample_decode(
        &self,
        prefix: &[String],
        strategy: &SamplingStrategy,
        max_len: usize,
    ) -> Result<Vec<String>> {
        strategy.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(strategy.seed);
        let kind = strategy.kind;
        Ok(self.decode(
            prefix,
            max_len,
            |model, key, rng| model.sample_next(key, kind, rng),
            &mut rng,
        ))
    }

    fn decode<S>(
        &self,
        prefix: &[String],
        max_len: usize,
        mut pick: impl FnMut(&Self, &[TokenId], &mut S) -> TokenId,
        state: &mut S,
    ) -> Vec<String> {
        let mut history = self.ids(prefix);
        let mut out = Vec::new();
        while out.len() < max_len {
            let key = self.context_key(&history);
            let next = pick(self, &key, state);
            if next == self.eos {
                break;
            }
            history.push(next);
            out.push(self.vocab[next as usize].clone());
        }
        out
    }

    /// Full conditional distribution over the vocabulary, indexed by id.
    fn distribution(&self, key: &[TokenId]) -> Vec<f64> {
        let (total, ctx) = match self.lookup(key) {
            Some(c) => (c.total, Some(c)),
            None => (0, None),
        };
        let floor = self.smoothed_ln(0, total).exp();
        let mut probs = vec![floor; self.vocab.len()];
        if let Some(ctx) = ctx {
            for &(t, c) in &ctx.by_id {
                probs[t as usize] = self.smoothed_ln(c, total).exp();
            }
        }
        probs
    }

    fn sample_next(&self, key: &[TokenId], kind: SamplingKind, rng: &mut ChaCha8Rng) -> TokenId {
        match kind {
            SamplingKind::Greedy => self.argmax(key),
            SamplingKind::TopK { k } => {
                let ids = self.topk_ids(key, k);
                let weights: Vec<f64> = ids.iter().map(|&t| self.logprob_ids(key, t).exp()).collect();
                ids[draw(&weights, rng)]
            }
            SamplingKind::TopP { p } => {
                let probs = self.distribution(key);
                let mut order: Vec<TokenId> = (0..probs.len() as TokenId).collect();
                order.sort_by(|&a, &b| {
                    probs[b as usize]
                        .total_cmp(&probs[a as usize])
                        .then(a.cmp(&b))
                });
                let mut cum = 0.0;
                let mut cut = order.len();
                for (i, &t) in order.iter().enumerate() {
                    cum += probs[t as usize];
                    if cum >= p {
                        cut = i + 1;
                        break;
                    }
                }
                let nucleus = &order[..cut];
                let weights: Vec<f64> = nucleus.iter().map(|&t| probs[t as usize]).collect();
                nucleus[draw(&weights, rng)]
            }
            SamplingKind::Temperature { t } => {
                let logits: Vec<f64> = self.distribution(key).iter().map(|p| p.ln() / t).collect();
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                draw(&weights, rng) as TokenId
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &self.to_dump()).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let dump: ModelDump = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::from_dump(dump)
    }

    fn to_dump(&self) -> ModelDump {
        let mut counts: Vec<(Vec<TokenId>, TokenId, u64)> = self
            .contexts
            .iter()
            .flat_map(|(ctx, cc)| cc.by_id.iter().map(move |&(t, c)| (ctx.to_vec(), t, c)))
            .collect();
        counts.sort_unstable();
        ModelDump {
            format: MODEL_FORMAT.to_owned(),
            version: MODEL_VERSION,
            order: self.order,
            alpha: self.alpha,
            exposure_multiplier: self.exposure_multiplier,
            vocab: self.vocab.clone(),
            counts,
        }
    }

    fn from_dump(dump: ModelDump) -> Result<Self> {
        if dump.format != MODEL_FORMAT {
            return Err(Error::Format(format!("not a model file (format `{}`)", dump.format)));
        }
        if dump.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "model version {} unsupported (expected {MODEL_VERSION})",
                dump.version
            )));
        }
        if dump.order < 1 || !(dump.alpha > 0.0) {
            return Err(Error::Format("invalid order or alpha".into()));
        }
        let sorted = dump.vocab.windows(2).all(|w| w[0] < w[1]);
        let sentinels = [BOS, EOS, UNK].iter().all(|s| dump.vocab.iter().any(|v| v == s));
        if !sorted || !sentinels {
            return Err(Error::Format("vocabulary must be sorted, unique, and contain sentinels".into()));
        }
        let v = dump.vocab.len() as TokenId;
        let mut grouped: HashMap<Box<[TokenId]>, Vec<(TokenId, u64)>> = HashMap::new();
        for (ctx, tok, c) in dump.counts {
            if ctx.len() != dump.order - 1 || tok >= v || ctx.iter().any(|&t| t >= v) || c == 0 {
                return Err(Error::Format("malformed count entry".into()));
            }
            grouped.entry(ctx.into()).or_default().push((tok, c));
        }
        let contexts = grouped
            .into_iter()
            .map(|(k, pairs)| (k, build_context(pairs)))
            .collect();
        Ok(Self::assemble(
            dump.order,
            dump.alpha,
            dump.exposure_multiplier,
            dump.vocab,
            contexts,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDump {
    format: String,
    version: u32,
    order: usize,
    alpha: f64,
    exposure_multiplier: u64,
    vocab: Vec<String>,
    /// (context ids, next id, count), sorted.
    counts: Vec<(Vec<TokenId>, TokenId, u64)>,
}

/// Inverse-CDF draw from unnormalized weights.
fn draw(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    for (i, w) in weights.iter().enumerate() {
        cum += w;
        if u < cum {
            return i;
        }
    }
    weights.len() - 1
}
