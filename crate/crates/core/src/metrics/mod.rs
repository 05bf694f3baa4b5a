//! Per-instance contamination scores.
//!
//! Record-based metrics (PPL, Min p% token, Mem k, Entropy k and the two
//! ratio scores) need only [`LogProbRecord`]s and therefore work on records
//! exported from any model. Perturbation and generation probes live in
//! [`perturb`] and [`probe`].

pub mod perturb;
pub mod probe;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use flate2::write::ZlibEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ContaminationLabel;
use crate::ngram::LogProbRecord;

pub use perturb::{perturb, perturb_delta, PerturbationKind, Perturbation};
pub use probe::{
    answer_mem_delta, keyinfo_score, metadata_generations, metadata_probe, metadata_similarity,
    AnswerMemVerdict, MetadataHit,
};

/// zlib level used by [`zlib_ratio`]; same as Python's `zlib.compress` default.
pub const ZLIB_LEVEL: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFamily {
    PplK,
    MinPToken,
    MemK,
    EntropyK,
    RefLmRatio,
    ZlibRatio,
    PerturbDelta,
    Keyinfo,
    MetadataProbe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherMeansSeen,
    LowerMeansSeen,
}

impl Orientation {
    pub fn flipped(self) -> Self {
        match self {
            Orientation::HigherMeansSeen => Orientation::LowerMeansSeen,
            Orientation::LowerMeansSeen => Orientation::HigherMeansSeen,
        }
    }
}

impl MetricFamily {
    pub fn orientation(self) -> Orientation {
        match self {
            MetricFamily::PplK | MetricFamily::EntropyK => Orientation::LowerMeansSeen,
            _ => Orientation::HigherMeansSeen,
        }
    }

    /// Grouping rank used when laying out report tables.
    pub fn group_rank(self) -> u8 {
        match self {
            MetricFamily::PplK => 0,
            MetricFamily::MinPToken => 1,
            MetricFamily::MemK => 2,
            MetricFamily::EntropyK => 3,
            MetricFamily::RefLmRatio => 4,
            MetricFamily::ZlibRatio => 5,
            MetricFamily::PerturbDelta => 6,
            MetricFamily::Keyinfo => 7,
            MetricFamily::MetadataProbe => 8,
        }
    }

    pub fn needs_topk(self) -> bool {
        matches!(self, MetricFamily::MemK | MetricFamily::EntropyK)
    }
}

/// A metric family plus its parameter (k for PPL/Mem/Entropy, p for Min p%).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricId {
    pub family: MetricFamily,
    pub parameter: Option<f64>,
}

impl MetricId {
    pub fn new(family: MetricFamily, parameter: Option<f64>) -> Result<Self> {
        let id = MetricId { family, parameter };
        id.validate()?;
        Ok(id)
    }

    pub fn ppl(k: usize) -> Self {
        MetricId { family: MetricFamily::PplK, parameter: Some(k as f64) }
    }

    pub fn min_p(p: f64) -> Self {
        MetricId { family: MetricFamily::MinPToken, parameter: Some(p) }
    }

    pub fn mem(k: usize) -> Self {
        MetricId { family: MetricFamily::MemK, parameter: Some(k as f64) }
    }

    pub fn entropy(k: usize) -> Self {
        MetricId { family: MetricFamily::EntropyK, parameter: Some(k as f64) }
    }

    pub fn plain(family: MetricFamily) -> Self {
        MetricId { family, parameter: None }
    }

    pub fn orientation(&self) -> Orientation {
        self.family.orientation()
    }

    /// The integer parameter k; panics on families without one.
    pub fn k(&self) -> usize {
        self.parameter.expect("metric has no k parameter") as usize
    }

    pub fn validate(&self) -> Result<()> {
        use MetricFamily::*;
        match (self.family, self.parameter) {
            (PplK | MemK | EntropyK, Some(k)) if k >= 1.0 && k.fract() == 0.0 => Ok(()),
            (MinPToken, Some(p)) if p > 0.0 && p <= 100.0 => Ok(()),
            (RefLmRatio | ZlibRatio | PerturbDelta | Keyinfo | MetadataProbe, None) => Ok(()),
            _ => Err(Error::Parameter(format!(
                "invalid parameter {:?} for metric family {:?}",
                self.parameter, self.family
            ))),
        }
    }

    /// Sort key: family group first, then parameter ascending.
    pub fn sort_key(&self) -> (u8, u64) {
        (self.family.group_rank(), self.parameter.map_or(0, |p| (p * 1000.0) as u64))
    }
}

/// Valid metric name patterns, for error messages.
pub const METRIC_NAME_HELP: &str = "PPL_<k>, Min <p>% token, Mem <k>, Entropy <k>, \
Ref LM ratio, Zlib ratio, Perturb delta, Key info, Metadata probe";

fn fmt_param(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("{}", p as i64)
    } else {
        format!("{p}")
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.parameter.map(fmt_param).unwrap_or_default();
        match self.family {
            MetricFamily::PplK => write!(f, "PPL_{p}"),
            MetricFamily::MinPToken => write!(f, "Min {p}% token"),
            MetricFamily::MemK => write!(f, "Mem {p}"),
            MetricFamily::EntropyK => write!(f, "Entropy {p}"),
            MetricFamily::RefLmRatio => f.write_str("Ref LM ratio"),
            MetricFamily::ZlibRatio => f.write_str("Zlib ratio"),
            MetricFamily::PerturbDelta => f.write_str("Perturb delta"),
            MetricFamily::Keyinfo => f.write_str("Key info"),
            MetricFamily::MetadataProbe => f.write_str("Metadata probe"),
        }
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let unknown = || Error::Parameter(format!("unknown metric `{s}`; valid names: {METRIC_NAME_HELP}"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| unknown());
        let id = if let Some(k) = s.strip_prefix("PPL_") {
            MetricId { family: MetricFamily::PplK, parameter: Some(num(k)?) }
        } else if let Some(rest) = s.strip_prefix("Min ") {
            let p = rest.strip_suffix("% token").ok_or_else(unknown)?;
            MetricId { family: MetricFamily::MinPToken, parameter: Some(num(p)?) }
        } else if let Some(k) = s.strip_prefix("Mem ") {
            MetricId { family: MetricFamily::MemK, parameter: Some(num(k)?) }
        } else if let Some(k) = s.strip_prefix("Entropy ") {
            MetricId { family: MetricFamily::EntropyK, parameter: Some(num(k)?) }
        } else {
            let family = match s {
                "Ref LM ratio" => MetricFamily::RefLmRatio,
                "Zlib ratio" => MetricFamily::ZlibRatio,
                "Perturb delta" => MetricFamily::PerturbDelta,
                "Key info" => MetricFamily::Keyinfo,
                "Metadata probe" => MetricFamily::MetadataProbe,
                _ => return Err(unknown()),
            };
            MetricId::plain(family)
        };
        id.validate().map_err(|_| unknown())?;
        Ok(id)
    }
}

/// Parses a comma-separated metric list such as `"PPL_50,Min 5% token"`.
pub fn parse_metric_list(s: &str) -> Result<Vec<MetricId>> {
    s.split(',')
        .filter(|part| !part.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Serde adapter storing a [`MetricId`] as its display name.
pub mod metric_name {
    use super::MetricId;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(id: &MetricId, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(id)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<MetricId, D::Error> {
        let name = String::deserialize(d)?;
        name.parse().map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub instance_id: String,
    pub label: ContaminationLabel,
    pub value: f64,
}

/// Scores of one metric over labeled instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub metric: MetricId,
    pub orientation: Orientation,
    pub entries: Vec<ScoreEntry>,
}

impl ScoreVector {
    pub fn new(metric: MetricId, entries: Vec<ScoreEntry>) -> Result<Self> {
        Self::with_orientation(metric, metric.orientation(), entries)
    }

    pub fn with_orientation(
        metric: MetricId,
        orientation: Orientation,
        entries: Vec<ScoreEntry>,
    ) -> Result<Self> {
        if let Some(bad) = entries.iter().find(|e| !e.value.is_finite()) {
            return Err(Error::Parameter(format!(
                "non-finite {metric} score {} for `{}`",
                bad.value, bad.instance_id
            )));
        }
        Ok(ScoreVector { metric, orientation, entries })
    }

    /// Builds a vector from bare seen/unseen values (ids are synthesized).
    pub fn from_values(metric: MetricId, orientation: Orientation, seen: &[f64], unseen: &[f64]) -> Result<Self> {
        let entries = seen
            .iter()
            .map(|&v| (ContaminationLabel::Seen, v))
            .chain(unseen.iter().map(|&v| (ContaminationLabel::Unseen, v)))
            .enumerate()
            .map(|(i, (label, value))| ScoreEntry { instance_id: format!("#{i}"), label, value })
            .collect();
        Self::with_orientation(metric, orientation, entries)
    }

    pub fn values(&self, label: ContaminationLabel) -> Vec<f64> {
        self.entries.iter().filter(|e| e.label == label).map(|e| e.value).collect()
    }

    pub fn seen(&self) -> Vec<f64> {
        self.values(ContaminationLabel::Seen)
    }

    pub fn unseen(&self) -> Vec<f64> {
        self.values(ContaminationLabel::Unseen)
    }

    pub fn with_labels_swapped(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.label = match e.label {
                ContaminationLabel::Seen => ContaminationLabel::Unseen,
                ContaminationLabel::Unseen => ContaminationLabel::Seen,
            };
        }
        out
    }
}

/// A score together with the flags a report should carry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    /// The instance was shorter than the requested window.
    pub truncated: bool,
}

fn require_nonempty(record: &LogProbRecord) -> Result<()> {
    if record.is_empty() {
        Err(Error::EmptyInstance { id: record.instance_id.clone() })
    } else {
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Perplexity (base e) over the first `k` tokens.
pub fn ppl_k(record: &LogProbRecord, k: usize) -> Result<MetricValue> {
    ppl_k_skip(record, k, 0)
}

/// Perplexity over tokens `skip .. skip + k`; `skip` drops a leading prompt.
pub fn ppl_k_skip(record: &LogProbRecord, k: usize, skip: usize) -> Result<MetricValue> {
    require_nonempty(record)?;
    if k < 1 {
        return Err(Error::Parameter("PPL window k must be >= 1".into()));
    }
    if skip >= record.len() {
        return Err(Error::Parameter(format!(
            "cannot skip {skip} of {} tokens in `{}`",
            record.len(),
            record.instance_id
        )));
    }
    let avail = &record.token_logprobs[skip..];
    let n = k.min(avail.len());
    let value = (-mean(&avail[..n])).exp();
    Ok(MetricValue { value, truncated: avail.len() < k })
}

/// Number of least-likely tokens averaged for `p` percent of `n` tokens.
pub fn min_p_count(p: f64, n: usize) -> usize {
    let x = p * n as f64 / 100.0;
    let nearest = x.round();
    let m = if (x - nearest).abs() < 1e-9 { nearest } else { x.ceil() };
    (m as usize).clamp(1, n)
}

/// Mean log-probability of the `p`% least likely tokens.
pub fn min_p_token(record: &LogProbRecord, p: f64) -> Result<f64> {
    require_nonempty(record)?;
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Parameter(format!("Min p% requires 0 < p <= 100, got {p}")));
    }
    let n = record.len();
    let m = min_p_count(p, n);
    if m == n {
        return Ok(mean(&record.token_logprobs));
    }
    let mut sorted = record.token_logprobs.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(mean(&sorted[..m]))
}

fn topk_lists(record: &LogProbRecord, k: usize) -> Result<&[Vec<crate::ngram::TokenLogProb>]> {
    require_nonempty(record)?;
    if k < 1 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    let lists = record.topk.as_deref().ok_or_else(|| {
        Error::Parameter(format!(
            "record `{}` carries no top-k distributions; Mem/Entropy metrics need them",
            record.instance_id
        ))
    })?;
    let k_record = lists.iter().map(Vec::len).min().unwrap_or(0);
    if k > k_record {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds stored top-k length k_record = {k_record} in `{}`",
            record.instance_id
        )));
    }
    if lists.len() != record.len() {
        return Err(Error::Alignment(format!(
            "record `{}` has {} tokens but {} top-k lists",
            record.instance_id,
            record.len(),
            lists.len()
        )));
    }
    Ok(lists)
}

/// Fraction of positions whose actual token is among that position's top k.
pub fn mem_k(record: &LogProbRecord, k: usize) -> Result<f64> {
    let lists = topk_lists(record, k)?;
    let hits = lists
        .iter()
        .zip(&record.tokens)
        .filter(|(list, tok)| list[..k].iter().any(|e| &e.token == *tok))
        .count();
    Ok(hits as f64 / record.len() as f64)
}

/// Mean over positions of `-Σ P_i ln P_i` over the raw (unrenormalized) top-k.
pub fn entropy_k(record: &LogProbRecord, k: usize) -> Result<f64> {
    let lists = topk_lists(record, k)?;
    let per_position: Vec<f64> = lists
        .iter()
        .map(|list| {
            list[..k]
                .iter()
                .map(|e| {
                    let p = e.logprob.exp();
                    -p * e.logprob
                })
                .sum()
        })
        .collect();
    Ok(mean(&per_position))
}

fn check_aligned(a: &LogProbRecord, b: &LogProbRecord) -> Result<()> {
    if a.instance_id != b.instance_id || a.len() != b.len() {
        return Err(Error::Alignment(format!(
            "records `{}` ({} tokens) and `{}` ({} tokens) do not describe the same instance",
            a.instance_id,
            a.len(),
            b.instance_id,
            b.len()
        )));
    }
    Ok(())
}

/// ln P_M(x) − ln P_M'(x).
pub fn ref_lm_ratio(record: &LogProbRecord, reference: &LogProbRecord) -> Result<f64> {
    check_aligned(record, reference)?;
    require_nonempty(record)?;
    Ok(record.total_logprob() - reference.total_logprob())
}

/// Byte length of the zlib stream for `text` at [`ZLIB_LEVEL`].
pub fn zlib_len(text: &str) -> usize {
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::new(ZLIB_LEVEL));
    enc.write_all(text.as_bytes()).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail").len()
}

/// ln P_M(x) divided by the zlib-compressed byte length of the raw text.
pub fn zlib_ratio(record: &LogProbRecord, raw_text: &str) -> Result<f64> {
    require_nonempty(record)?;
    if raw_text.is_empty() {
        return Err(Error::EmptyInstance { id: record.instance_id.clone() });
    }
    Ok(record.total_logprob() / zlib_len(raw_text) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::TokenLogProb;
    use proptest::prelude::*;

    fn rec(lps: &[f64]) -> LogProbRecord {
        LogProbRecord {
            instance_id: "r".into(),
            tokens: (0..lps.len()).map(|i| format!("t{i}")).collect(),
            token_logprobs: lps.to_vec(),
            topk: None,
            truncated: false,
        }
    }

    fn with_topk(tokens: &[&str], lists: Vec<Vec<(&str, f64)>>) -> LogProbRecord {
        LogProbRecord {
            instance_id: "r".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            token_logprobs: vec![-1.0; tokens.len()],
            topk: Some(
                lists
                    .into_iter()
                    .map(|l| l.into_iter().map(|(t, p)| TokenLogProb { token: t.into(), logprob: p.ln() }).collect())
                    .collect(),
            ),
            truncated: false,
        }
    }

    #[test]
    fn metric_names_round_trip() {
        for name in [
            "PPL_50", "PPL_200", "Min 5% token", "Min 25% token", "Mem 5", "Mem 1", "Entropy 25",
            "Ref LM ratio", "Zlib ratio", "Perturb delta", "Key info", "Metadata probe", "Min 2.5% token",
        ] {
            let id: MetricId = name.parse().unwrap();
            assert_eq!(id.to_string(), name);
        }
        let list = parse_metric_list("PPL_50,Min 5% token,Mem 5,Entropy 25").unwrap();
        assert_eq!(list.len(), 4);
        let err = "Perplexity 9".parse::<MetricId>().unwrap_err().to_string();
        assert!(err.contains("PPL_<k>"), "{err}");
        assert!("PPL_0".parse::<MetricId>().is_err());
        assert!("Min 0% token".parse::<MetricId>().is_err());
        assert!("Min 101% token".parse::<MetricId>().is_err());
        assert!("Mem 2.5".parse::<MetricId>().is_err());
    }

    #[test]
    fn orientations() {
        assert_eq!(MetricId::ppl(5).orientation(), Orientation::LowerMeansSeen);
        assert_eq!(MetricId::entropy(5).orientation(), Orientation::LowerMeansSeen);
        assert_eq!(MetricId::min_p(5.0).orientation(), Orientation::HigherMeansSeen);
        assert_eq!(MetricId::mem(5).orientation(), Orientation::HigherMeansSeen);
        for f in [MetricFamily::RefLmRatio, MetricFamily::ZlibRatio, MetricFamily::PerturbDelta, MetricFamily::Keyinfo, MetricFamily::MetadataProbe] {
            assert_eq!(f.orientation(), Orientation::HigherMeansSeen);
        }
    }

    #[test]
    fn ppl_examples() {
        let half = 0.5f64.ln();
        for k in [1, 3, 50] {
            assert!((ppl_k(&rec(&[half; 3]), k).unwrap().value - 2.0).abs() < 1e-12);
        }
        let short = ppl_k(&rec(&[0.25f64.ln()]), 200).unwrap();
        assert!((short.value - 4.0).abs() < 1e-12);
        assert!(short.truncated);
        // 1 / sqrt(0.5 * 0.125) = 4
        let v = ppl_k(&rec(&[0.5f64.ln(), 0.125f64.ln()]), 2).unwrap();
        assert!((v.value - 4.0).abs() < 1e-12);
        assert!(!v.truncated);
        assert!(matches!(ppl_k(&rec(&[]), 5), Err(Error::EmptyInstance { .. })));
    }

    #[test]
    fn ppl_skip_prefix() {
        let r = rec(&[0.01f64.ln(), 0.5f64.ln(), 0.5f64.ln()]);
        assert!((ppl_k_skip(&r, 2, 1).unwrap().value - 2.0).abs() < 1e-12);
        assert!(ppl_k_skip(&r, 2, 3).is_err());
    }

    #[test]
    fn min_p_examples() {
        let r = rec(&[0.1f64.ln(), 0.2f64.ln(), 0.4f64.ln(), 0.8f64.ln()]);
        assert_eq!(min_p_token(&r, 25.0).unwrap(), 0.1f64.ln());
        assert_eq!(min_p_token(&r, 50.0).unwrap(), (0.1f64.ln() + 0.2f64.ln()) / 2.0);
        let c = rec(&[-0.7; 9]);
        for p in [1.0, 5.0, 33.3, 100.0] {
            assert!((min_p_token(&c, p).unwrap() + 0.7).abs() < 1e-15);
        }
        assert_eq!(min_p_count(15.0, 20), 3);
        assert_eq!(min_p_count(5.0, 10), 1);
        assert_eq!(min_p_count(1.0, 3), 1);
        assert!(min_p_token(&r, 0.0).is_err());
        assert!(matches!(min_p_token(&rec(&[]), 5.0), Err(Error::EmptyInstance { .. })));
    }

    #[test]
    fn mem_examples() {
        let r = with_topk(
            &["a", "b", "c", "d"],
            vec![
                vec![("a", 0.5), ("x", 0.3)],
                vec![("x", 0.5), ("b", 0.3)],
                vec![("c", 0.5), ("x", 0.3)],
                vec![("x", 0.5), ("y", 0.3)],
            ],
        );
        assert_eq!(mem_k(&r, 2).unwrap(), 0.75);
        assert_eq!(mem_k(&r, 1).unwrap(), 0.5);
        let three_of_four = with_topk(
            &["a", "b", "c", "d"],
            vec![vec![("a", 0.9)], vec![("b", 0.9)], vec![("c", 0.9)], vec![("x", 0.9)]],
        );
        assert_eq!(mem_k(&three_of_four, 1).unwrap(), 0.75);
        let err = mem_k(&r, 3).unwrap_err().to_string();
        assert!(err.contains("k_record = 2"), "{err}");
        assert!(mem_k(&rec(&[-1.0]), 1).is_err());
    }

    #[test]
    fn entropy_examples() {
        let r = with_topk(&["a", "b"], vec![vec![("a", 0.5), ("b", 0.5)]; 2]);
        assert!((entropy_k(&r, 2).unwrap() - 2f64.ln()).abs() < 1e-15);
        let r = with_topk(&["a"], vec![vec![("a", 0.5), ("b", 0.25)]]);
        let hand = -0.5 * 0.5f64.ln() - 0.25 * 0.25f64.ln();
        assert!((entropy_k(&r, 2).unwrap() - hand).abs() < 1e-15);
        assert!((hand - std::f64::consts::LN_2).abs() < 1e-15);
        let certain = with_topk(&["a"], vec![vec![("a", 1.0), ("b", 1e-300)]]);
        assert!(entropy_k(&certain, 2).unwrap().abs() < 1e-12);
        assert!(entropy_k(&r, 3).is_err());
    }

    #[test]
    fn ratio_examples() {
        let a = rec(&[-1.0, -2.0]);
        let mut b = rec(&[-3.0, -3.0]);
        assert_eq!(ref_lm_ratio(&a, &a).unwrap(), 0.0);
        assert_eq!(ref_lm_ratio(&a, &b).unwrap(), 3.0);
        assert_eq!(ref_lm_ratio(&b, &a).unwrap(), -3.0);
        b.instance_id = "other".into();
        assert!(matches!(ref_lm_ratio(&a, &b), Err(Error::Alignment(_))));
        assert!(ref_lm_ratio(&a, &rec(&[-1.0])).is_err());
    }

    #[test]
    fn zlib_examples() {
        let r = rec(&[-1.0, -2.0, -3.0]);
        let text = "alpha beta gamma";
        let s = zlib_ratio(&r, text).unwrap();
        assert_eq!(s, zlib_ratio(&r, text).unwrap());
        let doubled = rec(&[-2.0, -4.0, -6.0]);
        assert_eq!(zlib_ratio(&doubled, text).unwrap(), 2.0 * s);
        assert!(zlib_ratio(&r, "").is_err());
        assert!(zlib_ratio(&rec(&[]), "x").is_err());
    }

    /// Repetitive text compresses far better, so the same log-probability
    /// sum is divided by a much smaller denominator.
    #[test]
    fn zlib_denominator_tracks_compressibility() {
        let repetitive = vec!["a"; 64].join(" ");
        let varied: String = (0..64).map(|i| format!("{}", (b'a' + (i * 7 % 26) as u8) as char)).collect::<Vec<_>>().join(" ");
        assert_eq!(repetitive.len(), varied.len());
        let (lr, lv) = (zlib_len(&repetitive), zlib_len(&varied));
        assert!(lr < lv, "{lr} vs {lv}");
        let r = rec(&[-1.0; 64]);
        let sr = zlib_ratio(&r, &repetitive).unwrap();
        let sv = zlib_ratio(&r, &varied).unwrap();
        assert_eq!(sr, -64.0 / lr as f64);
        assert_eq!(sv, -64.0 / lv as f64);
        assert!(sr < sv);
    }

    #[test]
    fn score_vector_rejects_non_finite() {
        let e = ScoreEntry { instance_id: "a".into(), label: ContaminationLabel::Seen, value: f64::NAN };
        assert!(ScoreVector::new(MetricId::ppl(5), vec![e]).is_err());
    }

    fn arb_record() -> impl Strategy<Value = LogProbRecord> {
        prop::collection::vec(-12.0f64..0.0, 1..40).prop_map(|v| rec(&v))
    }

    proptest! {
        #[test]
        fn ppl_depends_only_on_multiset(mut lps in prop::collection::vec(-8.0f64..0.0, 1..30), seed in any::<u64>()) {
            let base = ppl_k(&rec(&lps), lps.len()).unwrap().value;
            let n = lps.len();
            lps.rotate_left((seed as usize) % n);
            let mut r = rec(&lps);
            r.tokens = (0..n).map(|i| format!("other{i}")).collect();
            let again = ppl_k(&r, n).unwrap().value;
            prop_assert!((base - again).abs() <= 1e-12 * base);
        }

        #[test]
        fn min_p_monotone_in_p(r in arb_record(), a in 1.0f64..100.0, b in 1.0f64..100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(min_p_token(&r, lo).unwrap() <= min_p_token(&r, hi).unwrap() + 1e-12);
        }

        #[test]
        fn min_p_full_is_plain_mean(r in arb_record()) {
            prop_assert_eq!(min_p_token(&r, 100.0).unwrap(), r.total_logprob() / r.len() as f64);
        }
    }
}
