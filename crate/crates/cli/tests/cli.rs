use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_contamkit"));
    c.env_remove("RUST_LOG");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn contamkit")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Two domains, half train and half test each; domain `b` uses fewer word types.
fn write_corpus(dir: &Path) -> PathBuf {
    let mut lines = String::new();
    for (d, types) in [("a", 40u64), ("b", 12)] {
        for i in 0..24u64 {
            let split = if i < 12 { "train" } else { "test" };
            let words: Vec<String> = (0..12).map(|j| format!("w{}", (i * 7 + j * 3 + j * j * i) % types)).collect();
            lines.push_str(&format!(
                "{{\"id\":\"{d}{i:02}\",\"domain\":\"{d}\",\"split\":\"{split}\",\"text\":\"{} .\"}}\n",
                words.join(" ")
            ));
        }
    }
    let p = dir.join("corpus.jsonl");
    fs::write(&p, lines).unwrap();
    p
}

fn train_lines(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(dir.join("corpus.jsonl")).unwrap();
    let train: String = text.lines().filter(|l| l.contains("\"train\"")).map(|l| format!("{l}\n")).collect();
    let p = dir.join("train.jsonl");
    fs::write(&p, train).unwrap();
    p
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    train_lines(dir.path());
    let o = run(dir.path(), &["train", "--corpus", "train.jsonl", "--order", "2", "--exposure", "3", "--out", "m"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

#[test]
fn train_writes_model_and_manifest_and_is_reproducible() {
    let dir = setup();
    let d = dir.path();
    assert!(d.join("m/model.json").is_file());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("m/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["order"], 2);
    assert_eq!(manifest["inputs"]["train.jsonl"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["toolkit_version"], env!("CARGO_PKG_VERSION"));

    let o = run(d, &["train", "--corpus", "train.jsonl", "--order", "2", "--exposure", "3", "--out", "m2"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(d.join("m/model.json")).unwrap(), fs::read(d.join("m2/model.json")).unwrap());
    let entries = fs::read_dir(d.join("m")).unwrap().count();
    assert_eq!(entries, 2);
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--out", "m"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--corpus"));
}

#[test]
fn score_lines_per_instance_and_metric() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("three.jsonl"), fs::read_to_string(d.join("corpus.jsonl")).unwrap().lines().take(3).map(|l| format!("{l}\n")).collect::<String>()).unwrap();
    let o = run(d, &["score", "--model", "m/model.json", "--corpus", "three.jsonl", "--metrics", "PPL_50,Mem 5", "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(d.join("s/scores.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 6);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["metric"], "PPL_50");
    assert_eq!(first["label"], "seen");

    let again = run(d, &["score", "--model", "m/model.json", "--corpus", "three.jsonl", "--metrics", "PPL_50,Mem 5", "--out", "s2"]);
    assert_eq!(code(&again), 0);
    assert_eq!(text, fs::read_to_string(d.join("s2/scores.jsonl")).unwrap());
}

#[test]
fn score_usage_errors() {
    let dir = setup();
    let d = dir.path();
    let o = run(d, &["score", "--model", "m/model.json", "--records", "r.jsonl", "--corpus", "corpus.jsonl", "--metrics", "PPL_50", "--out", "s"]);
    assert_eq!(code(&o), 2);
    let o = run(d, &["score", "--model", "m/model.json", "--corpus", "corpus.jsonl", "--metrics", "PPL_50,Mem five", "--out", "s"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("Min <p>% token") && err.contains("Metadata probe"), "{err}");
    let o = run(d, &["score", "--corpus", "corpus.jsonl", "--metrics", "PPL_50", "--out", "s"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn records_without_topk_cannot_score_mem() {
    let dir = setup();
    let d = dir.path();
    let mut recs = String::new();
    for l in fs::read_to_string(d.join("corpus.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        let toks: Vec<&str> = v["text"].as_str().unwrap().split_whitespace().collect();
        let r = serde_json::json!({"instance_id": v["id"], "tokens": toks, "logprobs": vec![-1.5; toks.len()]});
        recs.push_str(&format!("{r}\n"));
    }
    fs::write(d.join("rec.jsonl"), recs).unwrap();
    let ok = run(d, &["score", "--records", "rec.jsonl", "--corpus", "corpus.jsonl", "--metrics", "PPL_50,Zlib ratio", "--out", "ok"]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let o = run(d, &["score", "--records", "rec.jsonl", "--corpus", "corpus.jsonl", "--metrics", "Mem 5", "--out", "s"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("top-k"), "{}", stderr(&o));
}

#[test]
fn auc_report_and_cross_domain() {
    let dir = setup();
    let d = dir.path();
    let o = run(d, &["score", "--model", "m/model.json", "--corpus", "corpus.jsonl", "--metrics", "PPL_50", "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(d, &["auc", "--scores", "s/scores.jsonl", "--out", "runs/ngram"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let results: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("runs/ngram/auc.json")).unwrap()).unwrap();
    assert_eq!(results.as_array().unwrap().len(), 1);
    assert!(d.join("runs/ngram/ppl.json").is_file());

    let o = run(d, &["report", "--auc-dir", "runs", "--out", "table"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(d.join("table/summary.txt")).unwrap();
    assert!(table.contains("ngram") && table.contains("PPL_50") && table.contains("Average AUC"), "{table}");

    // Four domains from the two real ones, split by id parity.
    let scores = fs::read_to_string(d.join("s/scores.jsonl")).unwrap();
    fs::create_dir(d.join("bd")).unwrap();
    for dom in ["a", "b"] {
        for parity in 0..2 {
            let lines: String = scores
                .lines()
                .filter(|l| {
                    let v: serde_json::Value = serde_json::from_str(l).unwrap();
                    let id = v["instance_id"].as_str().unwrap();
                    id.starts_with(dom) && id[1..].parse::<u32>().unwrap() % 2 == parity
                })
                .map(|l| format!("{l}\n"))
                .collect();
            fs::write(d.join(format!("bd/{dom}{parity}.jsonl")), lines).unwrap();
        }
    }
    let o = run(d, &["cross-domain", "--scores-by-domain", "bd", "--metric", "PPL_50", "--out", "cd"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("cd/matrix.json")).unwrap()).unwrap();
    assert_eq!(m["domains"].as_array().unwrap().len(), 4);
    assert_eq!(m["cells"].as_array().unwrap().len(), 16);
    assert_eq!(fs::read_to_string(d.join("cd/matrix.csv")).unwrap().lines().count(), 5);
}

#[test]
fn empty_scores_are_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("e.jsonl"), "").unwrap();
    let o = run(dir.path(), &["auc", "--scores", "e.jsonl", "--out", "a"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("degenerate"), "{}", stderr(&o));
}

#[test]
fn missing_input_is_io() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["auc", "--scores", "nope.jsonl", "--out", "a"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn index_build_then_query_hits_everything() {
    let dir = setup();
    let d = dir.path();
    let o = run(d, &["index", "build", "--corpus", "train.jsonl", "--w", "4", "--fpr", "0.001", "--out", "ix"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(d, &["index", "query", "--index", "ix/index.bin", "--corpus", "train.jsonl", "--out", "q"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let hits = fs::read_to_string(d.join("q/hits.jsonl")).unwrap();
    assert_eq!(hits.lines().count(), 24);
    for l in hits.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["hit_fraction"], 1.0);
        assert_eq!(v["label"], "seen");
    }
    let o = run(d, &["index", "build", "--corpus", "train.jsonl", "--w", "40", "--out", "wide"]);
    assert_eq!(code(&o), 0);
    let o = run(d, &["index", "query", "--index", "wide/index.bin", "--corpus", "train.jsonl", "--out", "q2"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("not applicable"), "{}", stderr(&o));
}

#[test]
fn perturb_rate_zero_is_identity() {
    let dir = setup();
    let d = dir.path();
    let o = run(d, &["perturb", "--corpus", "corpus.jsonl", "--kind", "random_deletion", "--rate", "0", "--seed", "7", "--out", "p"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let parse = |p: &Path| -> Vec<serde_json::Value> {
        fs::read_to_string(p).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    };
    assert_eq!(parse(&d.join("corpus.jsonl")), parse(&d.join("p/corpus.jsonl")));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("p/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"], serde_json::json!([7]));

    let o = run(d, &["perturb", "--corpus", "corpus.jsonl", "--kind", "char_noise", "--out", "p2"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_file_supplies_flags() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("train.conf"), "# same as setup\ncorpus = train.jsonl\norder = 2\nexposure = 3\n").unwrap();
    let o = run(d, &["train", "--config", "train.conf", "--out", "mc"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(d.join("m/model.json")).unwrap(), fs::read(d.join("mc/model.json")).unwrap());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("mc/manifest.json")).unwrap()).unwrap();
    assert!(m["inputs"].as_object().unwrap().contains_key("train.conf"));

    fs::write(d.join("bad.conf"), "colour = red\n").unwrap();
    let o = run(d, &["train", "--config", "bad.conf", "--corpus", "train.jsonl", "--out", "mb"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn scenario_failure_exits_nonzero_with_band() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = r#"
name = "tiny"
seeds = [1]
metrics = ["PPL_10"]

[generator]
vocab_size = 300
min_len = 8
max_len = 12

[[generator.domains]]
name = "only"
zipf_exponent = 1.0
n_train = 120
n_test = 120

[model]
order = 3
alpha = 0.5
exposure = 20

[split]
n_seen = 100
n_unseen = 100

[[expect]]
scope = "within"
metric = "PPL_10"
max = 0.6
"#;
    fs::write(d.join("tiny.toml"), cfg).unwrap();
    let o = run(d, &["scenario", "run", "tiny.toml", "--out", "r"]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("PPL_10 only: observed") && err.contains("[-inf, 0.6]"), "{err}");
    assert!(d.join("r/report.json").is_file() && d.join("r/manifest.json").is_file());

    fs::write(d.join("ok.toml"), cfg.replace("max = 0.6", "min = 0.9")).unwrap();
    let o = run(d, &["scenario", "run", "ok.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("scenario passed"));
}
