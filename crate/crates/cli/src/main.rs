//! `contamkit`: train, score, evaluate, index, perturb, report.
//!
//! Exit codes: 0 success, 2 usage, 3 validation or protocol, 4 I/O.
//! Verbosity comes from `RUST_LOG` only.

mod config;
mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use contamkit::eval::{auc, cross_domain_matrix, summary_table, AucResult, PplStats};
use contamkit::ingest::{
    load_corpus, load_logprob_records, load_scores, score_vector_for, score_vectors, write_corpus, write_scores,
    LoadOptions, ScoreRow,
};
use contamkit::metrics::{perturb, MetricFamily, MetricId, Perturbation, PerturbationKind};
use contamkit::model::{tokenize, Corpus, TokenizerConfig};
use contamkit::ngram::{train, LogProbRecord, NgramModel, SamplingKind, SamplingStrategy};
use contamkit::scenario::{run_scenario, ScenarioConfig};
use contamkit::scoring::{score_corpus, LogProbSource, MetadataConfig, ScoringConfig, ScoringInputs};
use contamkit::similarity::{build_portrait, query_portrait, PortraitIndex, SimilarityConfig, DEFAULT_JACCARD_THRESHOLD};

use manifest::{digest_tree, now, sha256_file, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Invalid(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Invalid(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<contamkit::Error> for CliError {
    fn from(e: contamkit::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Invalid(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "contamkit", version, about = "Data contamination detection toolkit")]
struct Cli {
    /// Key-value file of default flags (`order = 3`); command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an add-alpha n-gram model on a corpus.
    Train(TrainArgs),
    /// Score every instance of a corpus with the requested metrics.
    Score(ScoreArgs),
    /// AUC of each metric in a score file.
    Auc(AucArgs),
    /// Cross-domain AUC matrix from per-domain score files.
    CrossDomain(CrossDomainArgs),
    /// Summary table from several `auc` output directories.
    Report(ReportArgs),
    /// Build or query a w-gram membership index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Write a perturbed copy of a corpus.
    Perturb(PerturbArgs),
    /// Run canned scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
}

#[derive(Debug, Args, Serialize)]
struct CorpusArgs {
    /// Instance JSONL (`.gz` allowed).
    #[arg(long)]
    corpus: PathBuf,
    /// Case-fold tokens.
    #[arg(long)]
    lowercase: bool,
    /// Skip malformed lines instead of failing.
    #[arg(long)]
    lenient: bool,
}

impl CorpusArgs {
    fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig { lowercase: self.lowercase }
    }

    fn load(&self) -> CliResult<Corpus> {
        let opts = LoadOptions { tokenizer: self.tokenizer(), lenient: self.lenient };
        let loaded = load_corpus(&self.corpus, &opts)?;
        for s in &loaded.skipped {
            log::warn!("{}: skipped line {}: {}", self.corpus.display(), s.line, s.message);
        }
        log::info!("{}: {} instances", self.corpus.display(), loaded.items.len());
        Ok(loaded.items)
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Times each instance is counted.
    #[arg(long, default_value_t = 1)]
    exposure: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[group(id = "source", required = true, multiple = false)]
struct SourceArgs {
    /// Model file from `train`.
    #[arg(long, group = "source")]
    model: Option<PathBuf>,
    /// Log-probability records JSONL from an external model.
    #[arg(long, group = "source")]
    records: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ScoreArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    /// Comma-separated metric names, e.g. "PPL_50,Min 5% token,Mem 5,Entropy 25".
    #[arg(long, value_parser = parse_metrics)]
    metrics: MetricList,
    /// Reference model for Ref LM ratio.
    #[arg(long, conflicts_with = "reference_records")]
    reference: Option<PathBuf>,
    /// Reference log-probability records for Ref LM ratio.
    #[arg(long)]
    reference_records: Option<PathBuf>,
    /// Records of perturbed instances for Perturb delta with --records.
    #[arg(long)]
    perturbed_records: Option<PathBuf>,
    /// Perturbation for Perturb delta with --model: KIND or KIND:RATE.
    #[arg(long, value_parser = parse_perturbation_kind)]
    perturb: Option<PerturbationKind>,
    #[arg(long, default_value_t = 0)]
    perturb_seed: u64,
    /// Prompt for Metadata probe, whitespace separated (e.g. "mydata test").
    #[arg(long)]
    metadata_prompt: Option<String>,
    /// Decoding for Metadata probe: greedy, top_k:K, top_p:P or temperature:T.
    #[arg(long, value_parser = parse_sampling_kind, default_value = "greedy")]
    sampling: SamplingKind,
    #[arg(long, default_value_t = 0)]
    sampling_seed: u64,
    #[arg(long, default_value_t = 10)]
    metadata_samples: usize,
    #[arg(long, default_value_t = 50)]
    metadata_max_len: usize,
    /// Tokens masked at the end of each instance for Key info.
    #[arg(long, default_value_t = contamkit::scoring::DEFAULT_KEY_LEN)]
    key_len: usize,
    /// Leading tokens PPL ignores.
    #[arg(long, default_value_t = 0)]
    ppl_skip: usize,
    /// n-gram width of the Jaccard similarity used by Key info and Metadata probe.
    #[arg(long, default_value_t = 1)]
    similarity_width: usize,
    #[arg(long, default_value_t = DEFAULT_JACCARD_THRESHOLD)]
    similarity_threshold: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
struct MetricList(#[serde(serialize_with = "names")] Vec<MetricId>);

fn names<S: serde::Serializer>(v: &[MetricId], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|m| m.to_string()))
}

fn parse_metrics(s: &str) -> std::result::Result<MetricList, String> {
    let v = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.parse::<MetricId>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err("no metric given".into());
    }
    Ok(MetricList(v))
}

fn split_param(s: &str) -> (&str, Option<&str>) {
    match s.split_once(':') {
        Some((k, v)) => (k.trim(), Some(v.trim())),
        None => (s.trim(), None),
    }
}

fn parse_perturbation_kind(s: &str) -> std::result::Result<PerturbationKind, String> {
    let (kind, rate) = split_param(s);
    let rate = || -> std::result::Result<f64, String> {
        rate.ok_or_else(|| format!("`{kind}` needs a rate, e.g. {kind}:0.1"))?
            .parse()
            .map_err(|_| format!("bad rate in `{s}`"))
    };
    Ok(match kind {
        "whitespace" => PerturbationKind::Whitespace,
        "case_change" => PerturbationKind::CaseChange,
        "sentence_shuffle" => PerturbationKind::SentenceShuffle,
        "random_deletion" => PerturbationKind::RandomDeletion { rate: rate()? },
        "char_noise" => PerturbationKind::CharNoise { rate: rate()? },
        _ => {
            return Err(format!(
                "unknown perturbation `{kind}`; valid: whitespace, case_change, random_deletion:RATE, \
                 char_noise:RATE, sentence_shuffle"
            ))
        }
    })
}

fn parse_sampling_kind(s: &str) -> std::result::Result<SamplingKind, String> {
    let (kind, v) = split_param(s);
    let need = || v.ok_or_else(|| format!("`{kind}` needs a value, e.g. {kind}:10"));
    let bad = |_: std::num::ParseIntError| format!("bad value in `{s}`");
    let badf = |_: std::num::ParseFloatError| format!("bad value in `{s}`");
    Ok(match kind {
        "greedy" => SamplingKind::Greedy,
        "top_k" => SamplingKind::TopK { k: need()?.parse().map_err(bad)? },
        "top_p" => SamplingKind::TopP { p: need()?.parse().map_err(badf)? },
        "temperature" => SamplingKind::Temperature { t: need()?.parse().map_err(badf)? },
        _ => return Err(format!("unknown sampling `{kind}`; valid: greedy, top_k:K, top_p:P, temperature:T")),
    })
}

#[derive(Debug, Args, Serialize)]
struct AucArgs {
    /// Score JSONL from `score`.
    #[arg(long)]
    scores: PathBuf,
    /// Column name in the printed table; defaults to the file stem.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct CrossDomainArgs {
    /// Directory holding `<domain>.jsonl` score files or `<domain>/scores.jsonl`.
    #[arg(long)]
    scores_by_domain: PathBuf,
    #[arg(long, value_parser = parse_metric)]
    #[serde(serialize_with = "name")]
    metric: MetricId,
    #[arg(long)]
    out: PathBuf,
}

fn name<S: serde::Serializer>(m: &MetricId, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(m)
}

fn parse_metric(s: &str) -> std::result::Result<MetricId, String> {
    s.parse().map_err(|e: contamkit::Error| e.to_string())
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// Directory of `auc` output directories; each becomes a column.
    #[arg(long)]
    auc_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum IndexCommand {
    /// Insert every w-gram of a training corpus.
    Build(IndexBuildArgs),
    /// Hit fraction and verdict for each instance of a corpus.
    Query(IndexQueryArgs),
}

#[derive(Debug, Args, Serialize)]
struct IndexBuildArgs {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    /// Gram width.
    #[arg(long, default_value_t = contamkit::similarity::portrait::DEFAULT_GRAM_WIDTH)]
    w: usize,
    /// Target false-positive rate.
    #[arg(long, default_value_t = 0.01)]
    fpr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct IndexQueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    /// Hit fraction at or above which an instance is called seen.
    #[arg(long, default_value_t = contamkit::similarity::portrait::DEFAULT_HIT_THRESHOLD)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PerturbArgs {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    /// whitespace, case_change, random_deletion, char_noise or sentence_shuffle.
    #[arg(long)]
    kind: String,
    /// Rate for random_deletion and char_noise.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum ScenarioCommand {
    /// Run one scenario file and check its expectations.
    Run(ScenarioRunArgs),
}

#[derive(Debug, Args, Serialize)]
struct ScenarioRunArgs {
    /// Scenario TOML, e.g. scenarios/pretraining.toml.
    config_file: PathBuf,
    /// Override the seeds listed in the file (comma-separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory for report.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Collects what a command read and wrote, then writes the manifest.
struct Run {
    command: &'static str,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    started_at: String,
    out: PathBuf,
}

impl Run {
    fn start(command: &'static str, args: &impl Serialize, cfg_file: Option<&Path>, out: &Path) -> CliResult<Self> {
        let mut config = serde_json::to_value(args).map_err(|e| CliError::Invalid(e.to_string()))?;
        if let (Some(p), serde_json::Value::Object(m)) = (cfg_file, &mut config) {
            m.insert("config".into(), p.display().to_string().into());
        }
        fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        let mut run = Run {
            command,
            config,
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started_at: now(),
            out: out.to_owned(),
        };
        if let Some(p) = cfg_file {
            run.input(p)?;
        }
        Ok(run)
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        if path.is_dir() {
            digest_tree(path, &mut self.inputs)
        } else {
            self.inputs.insert(path.display().to_string(), sha256_file(path)?);
            Ok(())
        }
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_owned());
        self.out.join(name)
    }

    fn finish(self) -> CliResult<()> {
        RunManifest {
            command: self.command.to_owned(),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            toolkit_version: env!("CARGO_PKG_VERSION").to_owned(),
            started_at: self.started_at,
            finished_at: now(),
        }
        .write(&self.out)
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Invalid(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn cmd_train(a: &TrainArgs, cfg: Option<&Path>) -> CliResult<()> {
    let mut run = Run::start("train", a, cfg, &a.out)?;
    run.input(&a.corpus.corpus)?;
    let corpus = a.corpus.load()?;
    let model = train(&corpus, a.order, a.alpha, a.exposure)?;
    log::info!("trained order-{} model, vocabulary {}", model.order(), model.vocab_size());
    model.save(&run.output("model.json"))?;
    run.finish()
}

fn load_records(path: &Path) -> CliResult<HashMap<String, LogProbRecord>> {
    let loaded = load_logprob_records(path, false)?;
    let mut map = HashMap::with_capacity(loaded.items.len());
    for r in loaded.items {
        let id = r.instance_id.clone();
        if map.insert(id.clone(), r).is_some() {
            return Err(CliError::Invalid(format!("{}: duplicate record for `{id}`", path.display())));
        }
    }
    Ok(map)
}

fn cmd_score(a: &ScoreArgs, cfg: Option<&Path>) -> CliResult<()> {
    let mut run = Run::start("score", a, cfg, &a.out)?;
    run.seeds = vec![a.perturb_seed, a.sampling_seed];
    for p in [&a.source.model, &a.source.records, &a.reference, &a.reference_records, &a.perturbed_records]
        .into_iter()
        .flatten()
    {
        run.input(p)?;
    }
    run.input(&a.corpus.corpus)?;
    let corpus = a.corpus.load()?;

    let mut sc = ScoringConfig::new(a.metrics.0.clone());
    sc.tokenizer = a.corpus.tokenizer();
    sc.key_len = a.key_len;
    sc.ppl_skip = a.ppl_skip;
    sc.similarity = SimilarityConfig::jaccard(a.similarity_width, a.similarity_threshold)?;
    sc.perturbation = a.perturb.map(|k| Perturbation::new(k, a.perturb_seed)).transpose()?;
    sc.metadata = match &a.metadata_prompt {
        Some(p) => Some(MetadataConfig {
            prompt: tokenize(p, &sc.tokenizer),
            sampling: SamplingStrategy::new(a.sampling, a.sampling_seed)?,
            n_samples: a.metadata_samples,
            max_len: a.metadata_max_len,
        }),
        None => None,
    };

    let model = a.source.model.as_deref().map(NgramModel::load).transpose()?;
    let records = a.source.records.as_deref().map(load_records).transpose()?;
    let ref_model = a.reference.as_deref().map(NgramModel::load).transpose()?;
    let ref_records = a.reference_records.as_deref().map(load_records).transpose()?;
    let perturbed = a.perturbed_records.as_deref().map(load_records).transpose()?;
    let source = match (&model, &records) {
        (Some(m), _) => LogProbSource::Model(m),
        (_, Some(r)) => LogProbSource::Records(r),
        _ => unreachable!("clap requires one source"),
    };
    let reference = match (&ref_model, &ref_records) {
        (Some(m), _) => Some(LogProbSource::Model(m)),
        (_, Some(r)) => Some(LogProbSource::Records(r)),
        _ => None,
    };
    let inputs = ScoringInputs { source, reference, perturbed: perturbed.as_ref() };
    let rows = score_corpus(&corpus, &sc, &inputs)?;
    log::info!("{} score rows", rows.len());
    write_scores(&run.output("scores.jsonl"), &rows)?;
    run.finish()
}

fn load_nonempty_scores(path: &Path) -> CliResult<Vec<ScoreRow>> {
    let rows = load_scores(path)?;
    if rows.is_empty() {
        return Err(contamkit::Error::Degenerate(format!("{}: no scores", path.display())).into());
    }
    Ok(rows)
}

fn ppl_stats(rows: &[ScoreRow]) -> CliResult<Option<PplStats>> {
    let vectors = score_vectors(rows)?;
    match vectors.iter().find(|v| v.metric.family == MetricFamily::PplK) {
        Some(v) => Ok(Some(PplStats::from_scores(v)?)),
        None => Ok(None),
    }
}

fn cmd_auc(a: &AucArgs, cfg: Option<&Path>) -> CliResult<()> {
    let mut run = Run::start("auc", a, cfg, &a.out)?;
    run.input(&a.scores)?;
    let rows = load_nonempty_scores(&a.scores)?;
    let results = score_vectors(&rows)?.iter().map(auc).collect::<contamkit::Result<Vec<_>>>()?;
    let ppl = ppl_stats(&rows)?;
    let column = a.name.clone().unwrap_or_else(|| stem(&a.scores));
    let mut ppl_map = BTreeMap::new();
    if let Some(p) = ppl {
        ppl_map.insert(column.clone(), p);
        write_json(&run.output("ppl.json"), &p)?;
    }
    let table = summary_table(&[(column, results.clone())], &ppl_map);
    write_json(&run.output("auc.json"), &results)?;
    write_text(&run.output("auc.txt"), &table.to_text())?;
    print!("{}", table.to_text());
    run.finish()
}

fn stem(p: &Path) -> String {
    let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_suffix(".gz").unwrap_or(&name);
    name.split_once('.').map_or(name, |(s, _)| s).to_owned()
}

fn sorted_entries(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

/// `(domain, score file)` pairs found in a directory.
fn domain_score_files(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for p in sorted_entries(dir)? {
        let file_name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if p.is_dir() && p.join("scores.jsonl").is_file() {
            out.push((file_name, p.join("scores.jsonl")));
        } else if p.is_file() && (file_name.ends_with(".jsonl") || file_name.ends_with(".jsonl.gz")) {
            out.push((stem(&p), p));
        }
    }
    Ok(out)
}

fn cmd_cross_domain(a: &CrossDomainArgs, cfg: Option<&Path>) -> CliResult<()> {
    let mut run = Run::start("cross-domain", a, cfg, &a.out)?;
    let files = domain_score_files(&a.scores_by_domain)?;
    let mut by_domain = BTreeMap::new();
    let mut seen_ppl = BTreeMap::new();
    for (domain, path) in &files {
        run.input(path)?;
        let rows = load_nonempty_scores(path)?;
        let v = score_vector_for(&rows, a.metric, a.metric.orientation())?;
        if a.metric.family != MetricFamily::PplK {
            let stats = ppl_stats(&rows)?.ok_or_else(|| {
                CliError::Invalid(format!(
                    "{}: no PPL scores to order domains by; score a PPL_<k> metric alongside {}",
                    path.display(),
                    a.metric
                ))
            })?;
            seen_ppl.insert(domain.clone(), stats.seen_mean);
        }
        by_domain.insert(domain.clone(), v);
    }
    let key = (a.metric.family != MetricFamily::PplK).then_some(&seen_ppl);
    let matrix = cross_domain_matrix(&by_domain, key)?;
    write_json(&run.output("matrix.json"), &matrix)?;
    write_json(&run.output("heatmap.json"), &matrix.heatmap())?;
    write_text(&run.output("matrix.csv"), &matrix.to_csv()?)?;
    write_text(&run.output("matrix.txt"), &matrix.to_text())?;
    print!("{}", matrix.to_text());
    run.finish()
}

fn cmd_report(a: &ReportArgs, cfg: Option<&Path>) -> CliResult<()> {
    let mut run = Run::start("report", a, cfg, &a.out)?;
    let mut columns = Vec::new();
    let mut ppl = BTreeMap::new();
    for p in sorted_entries(&a.auc_dir)? {
        let auc_file = p.join("auc.json");
        if !auc_file.is_file() || p == a.out {
            continue;
        }
        let column = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        run.input(&auc_file)?;
        let results: Vec<AucResult> = read_json(&auc_file)?;
        let ppl_file = p.join("ppl.json");
        if ppl_file.is_file() {
            run.input(&ppl_file)?;
            ppl.insert(column.clone(), read_json::<PplStats>(&ppl_file)?);
        }
        columns.push((column, results));
    }
    if columns.is_empty() {
        return Err(CliError::Invalid(format!(
            "{}: no subdirectory with an auc.json",
            a.auc_dir.display()
        )));
    }
    let table = summary_table(&columns, &ppl);
    write_json(&run.output("summary.json"), &table)?;
    write_text(&run.output("summary.csv"), &table.to_csv()?)?;
    write_text(&run.output("summary.txt"), &table.to_text())?;
    print!("{}", table.to_text());
    run.finish()
}

fn cmd_index_build(a: &IndexBuildArgs, cfg: Option<&Path>) -> CliResult<()> {
    let mut run = Run::start("index build", a, cfg, &a.out)?;
    run.input(&a.corpus.corpus)?;
    let corpus = a.corpus.load()?;
    let index = build_portrait(&corpus, a.w, a.fpr)?;
    log::info!("{} grams in {} bits, {} hashes", index.n_inserted(), index.bit_len(), index.hash_count());
    index.save(&run.output("index.bin"))?;
    run.finish()
}

#[derive(Serialize)]
struct HitLine<'a> {
    instance_id: &'a str,
    hit_fraction: f64,
    label: contamkit::model::ContaminationLabel,
}

fn cmd_index_query(a: &IndexQueryArgs, cfg: Option<&Path>) -> CliResult<()> {
    let mut run = Run::start("index query", a, cfg, &a.out)?;
    run.input(&a.index)?;
    run.input(&a.corpus.corpus)?;
    let index = PortraitIndex::load(&a.index)?;
    let corpus = a.corpus.load()?;
    let mut text = String::new();
    for x in &corpus {
        let hit = query_portrait(&index, x, a.tau)?;
        let line = HitLine { instance_id: &x.id, hit_fraction: hit.hit_fraction, label: hit.label };
        text.push_str(&serde_json::to_string(&line).map_err(|e| CliError::Invalid(e.to_string()))?);
        text.push('\n');
    }
    write_text(&run.output("hits.jsonl"), &text)?;
    run.finish()
}

fn cmd_perturb(a: &PerturbArgs, cfg: Option<&Path>) -> CliResult<()> {
    let spec = match a.rate {
        Some(r) => format!("{}:{r}", a.kind),
        None => a.kind.clone(),
    };
    let kind = parse_perturbation_kind(&spec).map_err(CliError::Usage)?;
    let mut run = Run::start("perturb", a, cfg, &a.out)?;
    run.seeds = vec![a.seed];
    run.input(&a.corpus.corpus)?;
    let corpus = a.corpus.load()?;
    let p = Perturbation::new(kind, a.seed)?;
    let tok = a.corpus.tokenizer();
    let out = corpus
        .iter()
        .map(|x| perturb(x, &p, &tok))
        .collect::<contamkit::Result<Vec<_>>>()?;
    write_corpus(&run.output("corpus.jsonl"), &Corpus::new(out)?)?;
    run.finish()
}

fn cmd_scenario_run(a: &ScenarioRunArgs, cfg: Option<&Path>) -> CliResult<()> {
    let mut sc = ScenarioConfig::load(&a.config_file)?;
    if let Some(s) = &a.seeds {
        sc.seeds = s.clone();
    }
    let mut run = match &a.out {
        Some(out) => {
            let mut r = Run::start("scenario run", a, cfg, out)?;
            r.seeds = sc.seeds.clone();
            r.input(&a.config_file)?;
            Some(r)
        }
        None => None,
    };
    let report = run_scenario(&sc)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(r) = run.as_mut() {
        write_json(&r.output("report.json"), &report)?;
        write_text(&r.output("report.txt"), &text)?;
    }
    if let Some(r) = run {
        r.finish()?;
    }
    if report.passed {
        return Ok(());
    }
    let failed: Vec<String> = report
        .failures()
        .map(|f| format!("{} {}: observed {:.4}, band {}", f.metric, f.target, f.observed, f.band()))
        .collect();
    Err(CliError::Invalid(format!(
        "scenario {} failed {} assertion(s):\n  {}",
        report.name,
        failed.len(),
        failed.join("\n  ")
    )))
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let cfg = cli.config.as_deref();
    match &cli.command {
        Command::Train(a) => cmd_train(a, cfg),
        Command::Score(a) => cmd_score(a, cfg),
        Command::Auc(a) => cmd_auc(a, cfg),
        Command::CrossDomain(a) => cmd_cross_domain(a, cfg),
        Command::Report(a) => cmd_report(a, cfg),
        Command::Index(IndexCommand::Build(a)) => cmd_index_build(a, cfg),
        Command::Index(IndexCommand::Query(a)) => cmd_index_query(a, cfg),
        Command::Perturb(a) => cmd_perturb(a, cfg),
        Command::Scenario(ScenarioCommand::Run(a)) => cmd_scenario_run(a, cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("contamkit: {e}");
            return ExitCode::from(e.code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("contamkit: {e}");
            ExitCode::from(e.code())
        }
    }
}
