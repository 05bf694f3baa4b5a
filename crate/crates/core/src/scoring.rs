//! Runs a metric list over a labeled corpus and produces score rows.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ScoreRow;
use crate::metrics::{
    entropy_k, keyinfo_score, mem_k, metadata_generations, metadata_similarity, min_p_token, perturb,
    perturb_delta, ppl_k_skip, ref_lm_ratio, zlib_ratio, MetricFamily, MetricId, Perturbation,
};
use crate::model::{mask_key, ContaminationLabel, Corpus, Instance, Span, Split, TokenizerConfig};
use crate::ngram::{LogProbRecord, NgramModel, SamplingStrategy};
use crate::similarity::SimilarityConfig;

/// Where per-token log-probabilities come from.
#[derive(Debug, Clone, Copy)]
pub enum LogProbSource<'a> {
    Model(&'a NgramModel),
    /// Precomputed records keyed by instance id.
    Records(&'a HashMap<String, LogProbRecord>),
}

impl<'a> LogProbSource<'a> {
    fn model(&self) -> Option<&'a NgramModel> {
        match self {
            LogProbSource::Model(m) => Some(m),
            LogProbSource::Records(_) => None,
        }
    }

    fn record(&self, id: &str, tokens: &[String], k_record: usize) -> Result<LogProbRecord> {
        match self {
            LogProbSource::Model(m) => m.score_tokens(id, tokens, k_record),
            LogProbSource::Records(map) => map
                .get(id)
                .cloned()
                .ok_or_else(|| Error::Alignment(format!("no log-probability record for instance `{id}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataConfig {
    /// Prompt tokens naming the dataset, e.g. its name and split.
    pub prompt: Vec<String>,
    pub sampling: SamplingStrategy,
    pub n_samples: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringConfig {
    pub metrics: Vec<MetricId>,
    /// Leading tokens PPL ignores.
    pub ppl_skip: usize,
    /// Key info masks the last `key_len` tokens (at most all but one).
    pub key_len: usize,
    /// Similarity for Key info and Metadata probe.
    pub similarity: SimilarityConfig,
    pub perturbation: Option<Perturbation>,
    pub metadata: Option<MetadataConfig>,
    pub tokenizer: TokenizerConfig,
}

pub const DEFAULT_KEY_LEN: usize = 5;

impl ScoringConfig {
    pub fn new(metrics: Vec<MetricId>) -> Self {
        ScoringConfig {
            metrics,
            ppl_skip: 0,
            key_len: DEFAULT_KEY_LEN,
            similarity: SimilarityConfig::jaccard(1, crate::similarity::DEFAULT_JACCARD_THRESHOLD)
                .expect("valid default"),
            perturbation: None,
            metadata: None,
            tokenizer: TokenizerConfig::default(),
        }
    }

    /// Widest top-k any requested metric reads.
    pub fn k_record(&self) -> usize {
        self.metrics
            .iter()
            .filter(|m| m.family.needs_topk())
            .map(MetricId::k)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScoringInputs<'a> {
    pub source: LogProbSource<'a>,
    /// M′ for Ref LM ratio.
    pub reference: Option<LogProbSource<'a>>,
    /// Records of perturbed instances (same ids) when `source` is not a model.
    pub perturbed: Option<&'a HashMap<String, LogProbRecord>>,
}

/// Train instances are seen; test and validation instances are unseen.
pub fn label_from_split(x: &Instance) -> Result<ContaminationLabel> {
    match x.split {
        Split::Train => Ok(ContaminationLabel::Seen),
        Split::Test | Split::Validation => Ok(ContaminationLabel::Unseen),
        Split::Unknown => Err(Error::Config(format!(
            "instance `{}` has no split, so it cannot be labeled seen or unseen",
            x.id
        ))),
    }
}

fn require<T>(what: Option<T>, metric: MetricId, needs: &str) -> Result<T> {
    what.ok_or_else(|| Error::NotApplicable(format!("{metric} needs {needs}")))
}

fn check_capabilities(cfg: &ScoringConfig, inputs: &ScoringInputs) -> Result<()> {
    for &m in &cfg.metrics {
        m.validate()?;
        let model = inputs.source.model();
        match m.family {
            MetricFamily::RefLmRatio => {
                require(inputs.reference, m, "a reference model or reference records")?;
            }
            MetricFamily::PerturbDelta => {
                require(cfg.perturbation, m, "a perturbation")?;
                if model.is_none() && inputs.perturbed.is_none() {
                    return Err(Error::NotApplicable(format!(
                        "{m} needs a model or records of the perturbed instances"
                    )));
                }
            }
            MetricFamily::Keyinfo => {
                require(model, m, "a model to generate from")?;
            }
            MetricFamily::MetadataProbe => {
                require(model, m, "a model to generate from")?;
                require(cfg.metadata.as_ref(), m, "a metadata prompt")?;
            }
            _ => {}
        }
    }
    Ok(())
}

struct InstanceContext<'a> {
    x: &'a Instance,
    record: LogProbRecord,
    generations: Option<&'a [Vec<String>]>,
}

fn score_one(
    m: MetricId,
    ctx: &InstanceContext,
    cfg: &ScoringConfig,
    inputs: &ScoringInputs,
) -> Result<(f64, Vec<String>)> {
    let r = &ctx.record;
    let mut flags = Vec::new();
    if r.truncated {
        flags.push("record_truncated".to_owned());
    }
    let value = match m.family {
        MetricFamily::PplK => {
            let v = ppl_k_skip(r, m.k(), cfg.ppl_skip)?;
            if v.truncated {
                flags.push("truncated".to_owned());
            }
            v.value
        }
        MetricFamily::MinPToken => min_p_token(r, m.parameter.expect("validated"))?,
        MetricFamily::MemK => mem_k(r, m.k())?,
        MetricFamily::EntropyK => entropy_k(r, m.k())?,
        MetricFamily::RefLmRatio => {
            let reference = inputs.reference.expect("checked").record(&r.instance_id, &r.tokens, 0)?;
            ref_lm_ratio(r, &reference)?
        }
        MetricFamily::ZlibRatio => zlib_ratio(r, &ctx.x.text)?,
        MetricFamily::PerturbDelta => {
            let p = cfg.perturbation.expect("checked");
            let perturbed = match (inputs.perturbed, inputs.source.model()) {
                (Some(map), _) => LogProbSource::Records(map).record(&ctx.x.id, &[], 0)?,
                (None, Some(model)) => {
                    let y = perturb(ctx.x, &p, &cfg.tokenizer)?;
                    model.score_tokens(&y.id, &y.tokens, 0)?
                }
                (None, None) => unreachable!("checked"),
            };
            perturb_delta(r, &perturbed)?
        }
        MetricFamily::Keyinfo => {
            let model = inputs.source.model().expect("checked");
            let n = ctx.x.len();
            if n < 2 {
                return Err(Error::NotApplicable(format!(
                    "Key info needs at least 2 tokens, `{}` has {n}",
                    ctx.x.id
                )));
            }
            let len = cfg.key_len.clamp(1, n - 1);
            let pair = mask_key(ctx.x, Span { start: n - len, len })?;
            keyinfo_score(model, &pair, &cfg.similarity)?
        }
        MetricFamily::MetadataProbe => {
            metadata_similarity(ctx.generations.expect("checked"), &ctx.x.tokens, &cfg.similarity)
        }
    };
    Ok((value, flags))
}

/// One row per (instance, metric), ordered by instance id and then metric.
/// The first failing instance in that order determines the error.
pub fn score_corpus(corpus: &Corpus, cfg: &ScoringConfig, inputs: &ScoringInputs) -> Result<Vec<ScoreRow>> {
    if cfg.metrics.is_empty() {
        return Err(Error::Parameter("no metrics requested".into()));
    }
    check_capabilities(cfg, inputs)?;
    let generations = match (&cfg.metadata, inputs.source.model()) {
        (Some(md), Some(model)) if cfg.metrics.iter().any(|m| m.family == MetricFamily::MetadataProbe) => {
            Some(metadata_generations(model, &md.prompt, &md.sampling, md.n_samples, md.max_len)?)
        }
        _ => None,
    };
    let mut metrics = cfg.metrics.clone();
    metrics.sort_by_key(MetricId::sort_key);
    metrics.dedup_by_key(|m| m.to_string());
    let k_record = cfg.k_record();
    let mut order: Vec<&Instance> = corpus.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let per_instance: Vec<Result<Vec<ScoreRow>>> = order
        .par_iter()
        .map(|x| {
            let label = label_from_split(x)?;
            let record = inputs.source.record(&x.id, &x.tokens, k_record)?;
            let ctx = InstanceContext { x, record, generations: generations.as_deref() };
            metrics
                .iter()
                .map(|&m| {
                    let (value, flags) = score_one(m, &ctx, cfg, inputs)?;
                    Ok(ScoreRow {
                        instance_id: x.id.clone(),
                        label,
                        metric: m,
                        parameter: m.parameter,
                        value,
                        flags,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(order.len() * metrics.len());
    for r in per_instance {
        rows.extend(r?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auc;
    use crate::ingest::score_vectors;
    use crate::metrics::PerturbationKind;
    use crate::ngram::{NgramTrainer, SamplingKind};

    fn inst(id: &str, split: Split, text: &str) -> Instance {
        Instance::new(id, "d", split, text, &TokenizerConfig::default())
    }

    fn toy() -> (Corpus, NgramModel) {
        let member = inst("m", Split::Train, "the quick brown fox jumps over the lazy dog today.");
        let held = inst("h", Split::Test, "a slow red hen walks under the busy bridge tonight.");
        let filler = inst("f", Split::Train, "the dog and the hen sat under a tree.");
        let mut tr = NgramTrainer::new(3, 0.1).unwrap();
        tr.add_instances([&member], 50).unwrap();
        tr.add_instances([&filler], 1).unwrap();
        (Corpus::new(vec![member, held]).unwrap(), tr.finish().unwrap())
    }

    fn all_metrics() -> Vec<MetricId> {
        let mut v = vec![
            MetricId::ppl(50),
            MetricId::min_p(20.0),
            MetricId::mem(1),
            MetricId::entropy(5),
        ];
        for f in [
            MetricFamily::RefLmRatio,
            MetricFamily::ZlibRatio,
            MetricFamily::PerturbDelta,
            MetricFamily::Keyinfo,
            MetricFamily::MetadataProbe,
        ] {
            v.push(MetricId::plain(f));
        }
        v
    }

    fn full_config() -> ScoringConfig {
        let mut cfg = ScoringConfig::new(all_metrics());
        cfg.key_len = 3;
        cfg.perturbation = Some(Perturbation::new(PerturbationKind::RandomDeletion { rate: 0.3 }, 5).unwrap());
        cfg.metadata = Some(MetadataConfig {
            prompt: vec!["the".into()],
            sampling: SamplingStrategy::new(SamplingKind::TopK { k: 2 }, 3).unwrap(),
            n_samples: 4,
            max_len: 12,
        });
        cfg
    }

    fn reference_model() -> NgramModel {
        let mut tr = NgramTrainer::new(3, 0.1).unwrap();
        let tokens = crate::model::tokenize("the dog and the hen sat under a tree.", &TokenizerConfig::default());
        tr.add_tokens(&tokens, 1).unwrap();
        tr.finish().unwrap()
    }

    #[test]
    fn every_metric_points_the_declared_way_on_a_memorized_instance() {
        let (corpus, model) = toy();
        let reference = reference_model();
        let inputs = ScoringInputs {
            source: LogProbSource::Model(&model),
            reference: Some(LogProbSource::Model(&reference)),
            perturbed: None,
        };
        let rows = score_corpus(&corpus, &full_config(), &inputs).unwrap();
        assert_eq!(rows.len(), 2 * all_metrics().len());
        for v in score_vectors(&rows).unwrap() {
            assert_eq!(auc(&v).unwrap().auc, 1.0, "{} points the wrong way: {:?}", v.metric, v.entries);
        }
    }

    #[test]
    fn rows_are_ordered_and_deterministic() {
        let (corpus, model) = toy();
        let cfg = ScoringConfig::new(vec![MetricId::mem(1), MetricId::ppl(50)]);
        let inputs = ScoringInputs { source: LogProbSource::Model(&model), reference: None, perturbed: None };
        let rows = score_corpus(&corpus, &cfg, &inputs).unwrap();
        let keys: Vec<(String, String)> = rows.iter().map(|r| (r.instance_id.clone(), r.metric.to_string())).collect();
        assert_eq!(
            keys,
            [("h", "PPL_50"), ("h", "Mem 1"), ("m", "PPL_50"), ("m", "Mem 1")]
                .map(|(a, b)| (a.to_owned(), b.to_owned()))
        );
        assert_eq!(rows, score_corpus(&corpus, &cfg, &inputs).unwrap());
        assert!(rows[0].flags.contains(&"truncated".to_owned()));
    }

    #[test]
    fn records_match_model_scoring() {
        let (corpus, model) = toy();
        let cfg = ScoringConfig::new(vec![MetricId::ppl(5), MetricId::mem(2), MetricId::entropy(3)]);
        let records: HashMap<String, LogProbRecord> = corpus
            .iter()
            .map(|x| (x.id.clone(), model.sequence_logprobs(x).unwrap()))
            .collect();
        let a = score_corpus(&corpus, &cfg, &ScoringInputs { source: LogProbSource::Model(&model), reference: None, perturbed: None }).unwrap();
        let b = score_corpus(&corpus, &cfg, &ScoringInputs { source: LogProbSource::Records(&records), reference: None, perturbed: None }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn capability_errors() {
        let (corpus, model) = toy();
        let mut records: HashMap<String, LogProbRecord> = corpus
            .iter()
            .map(|x| (x.id.clone(), model.sequence_logprobs_k(x, 0).unwrap()))
            .collect();
        let rec = ScoringInputs { source: LogProbSource::Records(&records), reference: None, perturbed: None };
        let err = score_corpus(&corpus, &ScoringConfig::new(vec![MetricId::mem(5)]), &rec).unwrap_err();
        assert!(err.to_string().contains("top-k"), "{err}");
        for f in [MetricFamily::Keyinfo, MetricFamily::RefLmRatio, MetricFamily::PerturbDelta] {
            let cfg = ScoringConfig::new(vec![MetricId::plain(f)]);
            assert!(matches!(score_corpus(&corpus, &cfg, &rec), Err(Error::NotApplicable(_))), "{f:?}");
        }
        records.remove("h");
        let rec = ScoringInputs { source: LogProbSource::Records(&records), reference: None, perturbed: None };
        let cfg = ScoringConfig::new(vec![MetricId::ppl(5)]);
        assert!(matches!(score_corpus(&corpus, &cfg, &rec), Err(Error::Alignment(_))));
    }

    #[test]
    fn unknown_split_cannot_be_labeled() {
        let (_, model) = toy();
        let corpus = Corpus::new(vec![inst("u", Split::Unknown, "a b c")]).unwrap();
        let cfg = ScoringConfig::new(vec![MetricId::ppl(5)]);
        let inputs = ScoringInputs { source: LogProbSource::Model(&model), reference: None, perturbed: None };
        assert!(matches!(score_corpus(&corpus, &cfg, &inputs), Err(Error::Config(_))));
    }

    #[test]
    fn k_record_is_the_widest_request() {
        let cfg = ScoringConfig::new(vec![MetricId::mem(5), MetricId::entropy(25), MetricId::ppl(200)]);
        assert_eq!(cfg.k_record(), 25);
        assert_eq!(ScoringConfig::new(vec![MetricId::ppl(5)]).k_record(), 0);
    }
}
