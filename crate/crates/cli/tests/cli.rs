use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use mtse::config::RunConfig;
use mtse::corpus::load_parallel_tsv;
use mtse::encoder::PoolingStrategy;
use mtse::eval::{encode_corpus, nearest_neighbors};
use mtse::numcore::params::ParamSet;
use mtse::trainer::{load_model, Trainer};

const CONFIG: &str = r#"{
  "model": {"emb_dim": 6, "H_enc": 6, "H_dec": 6, "nli_hidden": 6},
  "train": {"batch": 4, "updates": 25, "seed": 11},
  "tasks": [
    {"name": "fr", "source": {"type": "cipher", "config": {"n": 120}}},
    {"name": "parse", "source": {"type": "parse", "config": {"n": 120}}},
    {"name": "nli", "source": {"type": "nli", "config": {"n": 120}}}
  ],
  "eval": {"folds": 3}
}"#;

fn mtse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtse")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok_json(out: Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    dir
}

fn train(dir: &Path, out: &str) -> Value {
    ok_json(mtse(dir, &["train", "--config", "cfg.json", "--out", out]))
}

#[test]
fn gen_data_is_deterministic_and_complete() {
    let dir = setup();
    let a = ok_json(mtse(dir.path(), &["gen-data", "--config", "cfg.json", "--out", "a"]));
    ok_json(mtse(dir.path(), &["gen-data", "--config", "cfg.json", "--out", "b"]));
    let files: Vec<&str> = a["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    let mut listed: Vec<String> = files.iter().map(|s| s.to_string()).collect();
    listed.push("manifest.json".into());
    listed.sort();
    let mut on_disk: Vec<String> = fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    for f in &on_disk {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    // the written cipher data reloads into the generated dataset
    let cfg = RunConfig::load(dir.path().join("cfg.json")).unwrap();
    let generated = &cfg.task_data().unwrap()[0];
    let reloaded = load_parallel_tsv(dir.path().join("a/fr.train.tsv")).unwrap().dataset;
    assert_eq!(reloaded.examples, generated.train.examples);
}

#[test]
fn zero_updates_leave_the_initialization() {
    let dir = setup();
    let cfg = CONFIG.replace(r#""updates": 25"#, r#""updates": 0"#);
    fs::write(dir.path().join("cfg.json"), &cfg).unwrap();
    let report = train(dir.path(), "run");
    assert_eq!(report["updates"], 0);
    let saved = load_model(&dir.path().join("run/checkpoint.bin")).unwrap();
    let rc = RunConfig::from_json(&cfg).unwrap();
    let p = rc.prepare().unwrap();
    let fresh = Trainer::init(rc.model.clone(), p.vocab, p.heads, p.tasks, rc.train.clone()).unwrap();
    for ((na, a), (nb, b)) in saved.params.tensors().into_iter().zip(fresh.model.params.tensors()) {
        assert_eq!(na, nb);
        assert_eq!(a.data(), b.data(), "{na}");
    }
}

#[test]
fn repeated_training_is_byte_identical() {
    let dir = setup();
    let a = train(dir.path(), "a");
    train(dir.path(), "b");
    for f in ["checkpoint.bin", "loss.tsv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    assert_eq!(a["seed"], 11);
    assert_eq!(a["config_hash"].as_str().unwrap().len(), 64);
    let log = fs::read_to_string(dir.path().join("a/loss.tsv")).unwrap();
    assert_eq!(log.lines().count(), 25);
}

#[test]
fn seed_flag_changes_the_hash_and_the_run() {
    let dir = setup();
    let a = train(dir.path(), "a");
    let b = ok_json(mtse(dir.path(), &["train", "--config", "cfg.json", "--out", "b", "--seed", "12"]));
    assert_eq!(b["seed"], 12);
    assert_ne!(a["config_hash"], b["config_hash"]);
    assert_ne!(fs::read(dir.path().join("a/loss.tsv")).unwrap(), fs::read(dir.path().join("b/loss.tsv")).unwrap());
}

#[test]
fn encode_and_nn_match_in_process_results() {
    let dir = setup();
    train(dir.path(), "run");
    let sentences = [
        "w1 w2 w3", "w3 w2 w1", "w4 w5", "w1 w1 w2", "w9 w8 w7 w6", "w2", "w5 w5 w5", "w6 w1", "w7 w3 w2", "w8 w8",
    ];
    fs::write(dir.path().join("c.txt"), sentences.join("\n") + "\n").unwrap();
    ok_json(mtse(dir.path(), &["encode", "c.txt", "--checkpoint", "run/checkpoint.bin", "--out", "c.rep", "--pooling", "max"]));
    let nn = ok_json(mtse(dir.path(), &["nn", "c.txt", "w1 w2 w3", "-k", "4", "--checkpoint", "run/checkpoint.bin", "--pooling", "max"]));

    let model = load_model(&dir.path().join("run/checkpoint.bin")).unwrap();
    let sents: Vec<Vec<String>> = sentences.iter().map(|s| s.split(' ').map(String::from).collect()).collect();
    let reps = encode_corpus(&model, &sents, PoolingStrategy::Max, 3).unwrap();
    let file = mtse::eval::RepresentationMatrix::load(dir.path().join("c.rep")).unwrap();
    assert_eq!(file.values, reps.values);
    assert_eq!(file.pooling, "max");

    let want = nearest_neighbors(reps.row(0), &reps.values, 4).unwrap();
    let got = nn["neighbors"].as_array().unwrap();
    assert_eq!(got.len(), 4);
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g["index"].as_u64().unwrap() as usize, w.index);
        assert!((g["cosine"].as_f64().unwrap() - w.cosine).abs() < 1e-15);
    }
    assert!(got.iter().all(|g| g["index"] != 0));
}

#[test]
fn sts_report_matches_a_two_pass_pearson() {
    let dir = setup();
    train(dir.path(), "run");
    let pairs = [("w1 w2", "w1 w2", 5.0), ("w1 w2", "w9 w8", 1.0), ("w3 w4", "w3 w5", 3.0), ("w6", "w7 w8", 2.0), ("w2 w3", "w3 w2", 4.0)];
    let text: String = pairs.iter().map(|(a, b, s)| format!("{a}\t{b}\t{s}\n")).collect();
    fs::write(dir.path().join("sts.tsv"), text).unwrap();
    let r = ok_json(mtse(dir.path(), &["eval", "sts", "sts.tsv", "--checkpoint", "run/checkpoint.bin"]));

    let model = load_model(&dir.path().join("run/checkpoint.bin")).unwrap();
    let tok = |s: &str| -> Vec<String> { s.split(' ').map(String::from).collect() };
    let u = model.represent(&pairs.iter().map(|p| tok(p.0)).collect::<Vec<_>>(), PoolingStrategy::Last).unwrap();
    let v = model.represent(&pairs.iter().map(|p| tok(p.1)).collect::<Vec<_>>(), PoolingStrategy::Last).unwrap();
    let cos: Vec<f64> = (0..5)
        .map(|i| {
            let (a, b) = (u.row(i), v.row(i));
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        })
        .collect();
    let gold: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (mc, mg) = (mean(&cos), mean(&gold));
    let cov: f64 = cos.iter().zip(&gold).map(|(c, g)| (c - mc) * (g - mg)).sum();
    let sc: f64 = cos.iter().map(|c| (c - mc).powi(2)).sum::<f64>().sqrt();
    let sg: f64 = gold.iter().map(|g| (g - mg).powi(2)).sum::<f64>().sqrt();
    assert!((r["pearson"].as_f64().unwrap() - cov / (sc * sg)).abs() < 1e-12);
}

#[test]
fn expand_vocab_writes_a_table() {
    let dir = setup();
    train(dir.path(), "run");
    let model = load_model(&dir.path().join("run/checkpoint.bin")).unwrap();
    let words = model.source_vocab.words().to_vec();
    let mut text = String::new();
    for (i, w) in words.iter().chain(["novel1".to_string(), "novel2".to_string()].iter()).enumerate() {
        text.push_str(&format!("{w} {} {}\n", (i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()));
    }
    fs::write(dir.path().join("pre.txt"), text).unwrap();
    let r = ok_json(mtse(dir.path(), &["expand-vocab", "pre.txt", "--checkpoint", "run/checkpoint.bin", "--out", "big.txt", "--save-model", "big.bin"]));
    assert_eq!(r["summary"]["added"], 2);
    assert_eq!(r["summary"]["vocab_size"], words.len() + 2);
    let big = load_model(&dir.path().join("big.bin")).unwrap();
    assert!(big.source_vocab.get("novel2").is_some());
}

#[test]
fn probe_and_grad_check_reports() {
    let dir = setup();
    ok_json(mtse(dir.path(), &["gen-data", "--config", "cfg.json", "--out", "data"]));
    train(dir.path(), "run");
    let r = ok_json(mtse(
        dir.path(),
        &[
            "probe",
            "passive",
            "data/parse.heldout.tsv",
            "--meta",
            "data/parse.heldout.meta.jsonl",
            "--checkpoint",
            "run/checkpoint.bin",
        ],
    ));
    assert_eq!(r["task"], "passive");
    assert!(r["baseline"].as_f64().unwrap() >= 0.5);
    let out = mtse(dir.path(), &["probe", "tense", "data/parse.heldout.tsv", "--checkpoint", "run/checkpoint.bin"]);
    assert!(!out.status.success());
    let g = ok_json(mtse(dir.path(), &["grad-check", "--config", "cfg.json"]));
    assert_eq!(g["passed"], true);
}

#[test]
fn errors_are_one_line_with_a_category() {
    let dir = setup();
    let out = mtse(dir.path(), &["encode", "missing.txt", "--checkpoint", "nope.bin", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[io]:"), "{err}");

    fs::write(dir.path().join("bad.json"), r#"{"model": {"width": 3}}"#).unwrap();
    let out = mtse(dir.path(), &["train", "--config", "bad.json", "--out", "r"]);
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[parse]:"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = setup();
    assert_eq!(mtse(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(mtse(dir.path(), &["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(mtse(dir.path(), &["encode", "x", "--pooling", "mean"]).status.code(), Some(2));
}

#[test]
fn help_lists_every_flag() {
    let dir = setup();
    let help = String::from_utf8(mtse(dir.path(), &["--help"]).stdout).unwrap();
    for flag in ["--config", "--seed", "--out", "--checkpoint", "--pooling"] {
        assert!(help.contains(flag), "{flag}");
    }
    for cmd in ["gen-data", "train", "encode", "eval", "probe", "nn", "expand-vocab", "grad-check"] {
        assert!(help.contains(cmd), "{cmd}");
    }
}
