//! JSONL readers and writers, and the seen/unseen split sampler.
//!
//! Paths ending in `.gz` are read and written as gzip.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{metric_name, MetricId, Orientation, ScoreEntry, ScoreVector};
use crate::model::{ContaminationLabel, Corpus, Instance, Split, TokenizerConfig};
use crate::ngram::LogProbRecord;

/// Domain given to instances whose line has no `domain` field.
pub const DEFAULT_DOMAIN: &str = "default";

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub fn open_reader(path: &Path) -> Result<Box<dyn BufRead>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let inner: Box<dyn Read> = if is_gzip(path) {
        Box::new(MultiGzDecoder::new(f))
    } else {
        Box::new(f)
    };
    Ok(Box::new(BufReader::new(inner)))
}

/// Writes `lines` (one JSON document each) to `path`, gzip if the name ends in `.gz`.
fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = Result<S>>,
    S: AsRef<str>,
{
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w: Box<dyn Write> = if is_gzip(path) {
        Box::new(GzEncoder::new(BufWriter::new(f), Compression::default()))
    } else {
        Box::new(BufWriter::new(f))
    };
    for line in lines {
        let line = line?;
        w.write_all(line.as_ref().as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// A line that lenient loading dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub items: T,
    pub skipped: Vec<Skipped>,
    /// Non-blank lines read.
    pub lines: usize,
}

/// Calls `parse` on every non-blank line; in lenient mode failures are
/// collected rather than returned.
fn for_each_line(
    path: &Path,
    lenient: bool,
    mut parse: impl FnMut(usize, &str) -> Result<()>,
) -> Result<(Vec<Skipped>, usize)> {
    let reader = open_reader(path)?;
    let mut skipped = Vec::new();
    let mut count = 0;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        count += 1;
        match parse(lineno, &line) {
            Ok(()) => {}
            Err(e) if lenient && !e.is_io() => {
                log::warn!("{}: skipping line {lineno}: {e}", path.display());
                skipped.push(Skipped { line: lineno, message: e.to_string() });
            }
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        log::warn!("{} contains no records", path.display());
    }
    Ok((skipped, count))
}

fn parse_err(line: usize, e: impl std::fmt::Display) -> Error {
    Error::Parse { line, message: e.to_string() }
}

#[derive(Deserialize)]
struct InstanceLine {
    id: String,
    #[serde(default)]
    domain: Option<String>,
    #[serde(default)]
    split: Split,
    text: String,
}

#[derive(Serialize)]
struct InstanceLineOut<'a> {
    id: &'a str,
    domain: &'a str,
    split: Split,
    text: &'a str,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LoadOptions {
    pub tokenizer: TokenizerConfig,
    /// Skip malformed lines (reporting them) instead of failing.
    pub lenient: bool,
}

/// Reads an instance JSONL file: fields `id`, `text`, optional `domain` and
/// `split`; unknown keys are ignored.
pub fn load_corpus(path: &Path, opts: &LoadOptions) -> Result<Loaded<Corpus>> {
    let mut instances = Vec::new();
    let mut ids = HashSet::new();
    let (skipped, lines) = for_each_line(path, opts.lenient, |lineno, line| {
        let raw: InstanceLine = serde_json::from_str(line).map_err(|e| parse_err(lineno, e))?;
        if raw.id.is_empty() {
            return Err(parse_err(lineno, "field `id` must be non-empty"));
        }
        if !ids.insert(raw.id.clone()) {
            return Err(parse_err(lineno, format!("duplicate id `{}`", raw.id)));
        }
        let domain = raw.domain.unwrap_or_else(|| DEFAULT_DOMAIN.to_owned());
        instances.push(Instance::new(raw.id, domain, raw.split, raw.text, &opts.tokenizer));
        Ok(())
    })?;
    Ok(Loaded { items: Corpus::new(instances)?, skipped, lines })
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_lines(
        path,
        corpus.iter().map(|x| {
            serde_json::to_string(&InstanceLineOut {
                id: &x.id,
                domain: &x.domain,
                split: x.split,
                text: &x.text,
            })
            .map_err(|e| Error::Format(e.to_string()))
        }),
    )
}

/// Checks the invariants exported records must satisfy.
///
/// Every logprob is finite and ≤ 0, token and logprob counts agree, and when
/// top-k lists are present there is one per position, all of one length, each
/// non-increasing in logprob.
pub fn validate_record(r: &LogProbRecord) -> Result<()> {
    let bad = |position: usize, message: String| Error::Validation {
        record: r.instance_id.clone(),
        position,
        message,
    };
    if r.tokens.len() != r.token_logprobs.len() {
        return Err(bad(
            r.tokens.len().min(r.token_logprobs.len()),
            format!("{} tokens but {} logprobs", r.tokens.len(), r.token_logprobs.len()),
        ));
    }
    for (i, &lp) in r.token_logprobs.iter().enumerate() {
        if !(lp <= 0.0) || lp.is_infinite() {
            return Err(bad(i, format!("logprob {lp} is not a finite value <= 0")));
        }
    }
    let Some(lists) = &r.topk else { return Ok(()) };
    if lists.len() != r.tokens.len() {
        return Err(bad(
            lists.len().min(r.tokens.len()),
            format!("{} tokens but {} top-k lists", r.tokens.len(), lists.len()),
        ));
    }
    let width = lists.first().map_or(0, Vec::len);
    for (i, list) in lists.iter().enumerate() {
        if list.len() != width {
            return Err(bad(i, format!("top-k list has {} entries, expected {width}", list.len())));
        }
        for (j, e) in list.iter().enumerate() {
            if !(e.logprob <= 0.0) || e.logprob.is_infinite() {
                return Err(bad(i, format!("top-k entry {j} has logprob {}", e.logprob)));
            }
            if j > 0 && e.logprob > list[j - 1].logprob {
                return Err(bad(
                    i,
                    format!("top-k entry {j} ({}) is above entry {} ({})", e.logprob, j - 1, list[j - 1].logprob),
                ));
            }
        }
    }
    Ok(())
}

/// Reads and validates LogProbRecord JSONL; instance ids must be unique.
pub fn load_logprob_records(path: &Path, lenient: bool) -> Result<Loaded<Vec<LogProbRecord>>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    let (skipped, lines) = for_each_line(path, lenient, |lineno, line| {
        let r: LogProbRecord = serde_json::from_str(line).map_err(|e| parse_err(lineno, e))?;
        validate_record(&r)?;
        if !ids.insert(r.instance_id.clone()) {
            return Err(parse_err(lineno, format!("duplicate instance_id `{}`", r.instance_id)));
        }
        records.push(r);
        Ok(())
    })?;
    Ok(Loaded { items: records, skipped, lines })
}

pub fn write_logprob_records(path: &Path, records: &[LogProbRecord]) -> Result<()> {
    write_lines(
        path,
        records
            .iter()
            .map(|r| serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))),
    )
}

/// One line of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub instance_id: String,
    pub label: ContaminationLabel,
    #[serde(with = "metric_name")]
    pub metric: MetricId,
    pub parameter: Option<f64>,
    pub value: f64,
    #[serde(default)]
    pub flags: Vec<String>,
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    write_lines(
        path,
        rows.iter()
            .map(|r| serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))),
    )
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut rows = Vec::new();
    for_each_line(path, false, |lineno, line| {
        let row: ScoreRow = serde_json::from_str(line).map_err(|e| parse_err(lineno, e))?;
        if !row.value.is_finite() {
            return Err(parse_err(lineno, format!("non-finite value {}", row.value)));
        }
        rows.push(row);
        Ok(())
    })?;
    Ok(rows)
}

/// Groups score rows into one vector per metric, in report order.
pub fn score_vectors(rows: &[ScoreRow]) -> Result<Vec<ScoreVector>> {
    let mut by_metric: BTreeMap<String, (MetricId, Vec<ScoreEntry>)> = BTreeMap::new();
    for r in rows {
        by_metric
            .entry(r.metric.to_string())
            .or_insert_with(|| (r.metric, Vec::new()))
            .1
            .push(ScoreEntry { instance_id: r.instance_id.clone(), label: r.label, value: r.value });
    }
    let mut out = by_metric
        .into_values()
        .map(|(m, entries)| ScoreVector::new(m, entries))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|v| v.metric.sort_key());
    Ok(out)
}

/// Score vector for one metric with a caller-chosen orientation.
pub fn score_vector_for(rows: &[ScoreRow], metric: MetricId, orientation: Orientation) -> Result<ScoreVector> {
    let entries = rows
        .iter()
        .filter(|r| r.metric == metric)
        .map(|r| ScoreEntry { instance_id: r.instance_id.clone(), label: r.label, value: r.value })
        .collect();
    ScoreVector::with_orientation(metric, orientation, entries)
}

/// SplitMix64; tiny, portable, and trivial to reimplement for cross-checks.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Integer in `0..n` by multiply-shift, `(x · n) >> 64`.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

/// Recorded in run metadata so other implementations can reproduce samples.
pub const SAMPLING_ALGORITHM: &str = "splitmix64-fisher-yates-v1";

/// Picks `k` of `0..n` without replacement: a partial Fisher–Yates shuffle
/// driven by `rng`, returned in ascending order.
pub fn sample_indices(rng: &mut SplitMix64, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.below((n - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitFallback {
    UseValidationIfNoTest,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub min_split: usize,
    pub seed: u64,
    pub fallback: SplitFallback,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            n_seen: 1000,
            n_unseen: 1000,
            min_split: 100,
            seed: 0,
            fallback: SplitFallback::UseValidationIfNoTest,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.min_split > self.n_seen || self.min_split > self.n_unseen {
            return Err(Error::Config(format!(
                "min_split {} exceeds a target ({} seen, {} unseen)",
                self.min_split, self.n_seen, self.n_unseen
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSample {
    pub seen: Corpus,
    pub unseen: Corpus,
    /// Split the unseen half was drawn from.
    pub unseen_source: Split,
    pub algorithm: &'static str,
    /// Always false: no deduplication happens before sampling.
    pub deduplicated: bool,
}

fn draw(pool: Vec<&Instance>, target: usize, rng: &mut SplitMix64) -> Result<Corpus> {
    let picked = sample_indices(rng, pool.len(), target);
    Corpus::new(picked.into_iter().map(|i| pool[i].clone()).collect())
}

/// Seen instances come from the train split, unseen ones from test (or
/// validation when there is no test split and the plan allows it). A pool
/// smaller than its target is taken whole; one below `min_split` is an error.
/// The seen draw consumes the generator first, then the unseen draw.
pub fn sample_splits(corpus: &Corpus, plan: &SplitPlan) -> Result<SplitSample> {
    plan.validate()?;
    let pool = |s: Split| corpus.iter().filter(|x| x.split == s).collect::<Vec<_>>();
    let train = pool(Split::Train);
    let mut unseen_source = Split::Test;
    let mut unseen = pool(Split::Test);
    if unseen.is_empty() {
        match plan.fallback {
            SplitFallback::UseValidationIfNoTest => {
                unseen_source = Split::Validation;
                unseen = pool(Split::Validation);
            }
            SplitFallback::Fail => {
                return Err(Error::Protocol("corpus has no test split and fallback is `fail`".into()));
            }
        }
    }
    for (name, p) in [("train", &train), (&*unseen_source.to_string(), &unseen)] {
        if p.len() < plan.min_split {
            return Err(Error::Protocol(format!(
                "{name} split has {} instances, fewer than the minimum {}",
                p.len(),
                plan.min_split
            )));
        }
    }
    let mut rng = SplitMix64::new(plan.seed);
    Ok(SplitSample {
        seen: draw(train, plan.n_seen, &mut rng)?,
        unseen: draw(unseen, plan.n_unseen, &mut rng)?,
        unseen_source,
        algorithm: SAMPLING_ALGORITHM,
        deduplicated: false,
    })
}
