use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use mtse::config::RunConfig;
use mtse::corpus::{load_parallel_tsv, Examples, Sentence};
use mtse::encoder::PoolingStrategy;
use mtse::eval::{
    build_probe, cosine_sts, encode_corpus, expand_vocab, logreg_cv_eval, mlp_pair_eval,
    nearest_neighbors, run_probe, select_pooling, Lexicon, ProbeClassifier, ProbeKind, WordTable,
};
use mtse::model::Head;
use mtse::trainer::{format_loss_log, grad_check_model, load_model, save_model, Trainer};
use mtse::{Error, Result};

#[derive(Parser)]
#[command(name = "mtse", version, about = "Multi-task sentence encoders and frozen-representation evaluation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Model checkpoint to read (or resume training from).
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Pooling strategy; overrides the configured one.
    #[arg(long, global = true, value_enum)]
    pooling: Option<PoolingArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Last,
    Max,
    Auto,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured tasks as TSV files plus a manifest into --out.
    GenData,
    /// Train on the configured tasks; writes checkpoint.bin and loss.tsv into --out.
    Train,
    /// Encode one sentence per line of INPUT into a representation file at --out.
    Encode {
        input: PathBuf,
    },
    /// Evaluate frozen representations.
    Eval {
        #[command(subcommand)]
        bench: Bench,
    },
    /// Run a probing task on sentences (first tab-separated column of DATA).
    Probe {
        #[arg(value_enum)]
        kind: ProbeArg,
        data: PathBuf,
        /// Syntax metadata (JSON lines) aligned with DATA; passive, tense and tss need it.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Nearest neighbours of QUERY among the sentences of CORPUS.
    Nn {
        corpus: PathBuf,
        query: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
    /// Map a pretrained word-vector table into the encoder embedding space; writes the table to --out.
    ExpandVocab {
        pretrained: PathBuf,
        /// Ridge strength.
        #[arg(long, default_value_t = 1e-6)]
        lambda: f64,
        /// Also write a checkpoint with the expanded vocabulary.
        #[arg(long, value_name = "PATH")]
        save_model: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on one small batch per task.
    GradCheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 2)]
        batch: usize,
    },
}

#[derive(Subcommand)]
enum Bench {
    /// Sentence classification: TRAIN and TEST hold `label<TAB>sentence` lines.
    Transfer { train: PathBuf, test: PathBuf },
    /// Relatedness: `sentence<TAB>sentence<TAB>score` lines, scored by cosine.
    Sts { data: PathBuf },
    /// Pair classification: `premise<TAB>hypothesis<TAB>label` lines, scored by an MLP.
    Pair { data: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeArg {
    Length,
    Content,
    Order,
    Passive,
    Tense,
    Tss,
}

impl From<ProbeArg> for ProbeKind {
    fn from(p: ProbeArg) -> Self {
        match p {
            ProbeArg::Length => ProbeKind::Length,
            ProbeArg::Content => ProbeKind::Content,
            ProbeArg::Order => ProbeKind::Order,
            ProbeArg::Passive => ProbeKind::Passive,
            ProbeArg::Tense => ProbeKind::Tense,
            ProbeArg::Tss => ProbeKind::Tss,
        }
    }
}

struct Ctx {
    config: RunConfig,
    hash: String,
    global: Global,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.config.train.seed
    }

    fn report(&self, command: &str, body: impl Serialize) -> Value {
        let mut v = json!({ "command": command, "config_hash": self.hash, "seed": self.seed() });
        if let (Value::Object(map), Value::Object(extra)) = (&mut v, serde_json::to_value(body).expect("report serializes")) {
            map.extend(extra);
        }
        v
    }

    fn out(&self) -> Result<&Path> {
        self.global.out.as_deref().ok_or_else(|| Error::Input("--out is required".into()))
    }

    fn model(&self) -> Result<mtse::model::Model> {
        let p = self.global.checkpoint.as_deref().ok_or_else(|| Error::Input("--checkpoint is required".into()))?;
        load_model(p)
    }

    fn pooling(&self) -> Result<Option<PoolingStrategy>> {
        let tag = match self.global.pooling {
            Some(PoolingArg::Last) => "last",
            Some(PoolingArg::Max) => "max",
            Some(PoolingArg::Auto) => "auto",
            None => self.config.eval.pooling.as_str(),
        };
        if tag == "auto" {
            Ok(None)
        } else {
            tag.parse().map(Some)
        }
    }

    fn fixed_pooling(&self, what: &str) -> Result<PoolingStrategy> {
        self.pooling()?
            .ok_or_else(|| Error::Config(format!("{what} needs --pooling last or max; auto requires labelled training data")))
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

fn tokens(s: &str) -> Sentence {
    s.split_whitespace().map(String::from).collect()
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.into(), line, msg: msg.into() }
}

/// First tab-separated column of every non-blank line.
fn first_column(path: &Path) -> Result<Vec<Sentence>> {
    Ok(read_lines(path)?
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| tokens(l.split('\t').next().unwrap_or("")))
        .collect())
}

/// `label<TAB>sentence` lines; labels map to ids in sorted order.
fn labelled(path: &Path, names: &mut BTreeMap<String, usize>, grow: bool) -> Result<(Vec<Sentence>, Vec<usize>)> {
    let mut rows = Vec::new();
    for (k, l) in read_lines(path)?.iter().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let (label, text) = l.split_once('\t').ok_or_else(|| parse_err(path, k + 1, "expected label<TAB>sentence"))?;
        rows.push((k + 1, label.trim().to_string(), tokens(text)));
    }
    if grow {
        for (_, label, _) in &rows {
            names.entry(label.clone()).or_insert(0);
        }
        for (i, v) in names.values_mut().enumerate() {
            *v = i;
        }
    }
    let mut sents = Vec::new();
    let mut ids = Vec::new();
    for (line, label, s) in rows {
        let id = *names.get(&label).ok_or_else(|| parse_err(path, line, format!("label '{label}' not seen in training")))?;
        sents.push(s);
        ids.push(id);
    }
    Ok((sents, ids))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn cmd_gen_data(ctx: &Ctx) -> Result<Value> {
    let out = ctx.out()?;
    let manifest = ctx.config.write_data(out)?;
    Ok(ctx.report("gen-data", json!({ "out": out, "files": manifest.files() })))
}

fn cmd_train(ctx: &Ctx) -> Result<Value> {
    let out = ctx.out()?;
    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.into(), source: e })?;
    let prepared = ctx.config.prepare()?;
    let mut trainer = match &ctx.global.checkpoint {
        Some(p) => {
            let mut t = Trainer::resume(p, prepared.tasks)?;
            t.config.total_updates = ctx.config.train.total_updates;
            t
        }
        None => Trainer::init(ctx.config.model.clone(), prepared.vocab, prepared.heads, prepared.tasks, ctx.config.train.clone())?,
    };
    let ckpt = out.join("checkpoint.bin");
    let result = trainer.run(Some(&ckpt));
    write_file(&out.join("loss.tsv"), format_loss_log(trainer.log()).as_bytes())?;
    result?;
    trainer.save(&ckpt)?;
    let heldout = mtse::eval::heldout_metrics(&trainer.model, &prepared.data)?;
    Ok(ctx.report(
        "train",
        json!({ "updates": trainer.update(), "checkpoint": ckpt, "loss_log": out.join("loss.tsv"), "heldout": heldout }),
    ))
}

fn cmd_encode(ctx: &Ctx, input: &Path) -> Result<Value> {
    let model = ctx.model()?;
    let pooling = ctx.fixed_pooling("encode")?;
    let sents = first_column(input)?;
    let reps = encode_corpus(&model, &sents, pooling, ctx.config.eval.batch)?;
    let out = ctx.out()?;
    reps.save(out)?;
    Ok(ctx.report("encode", json!({ "out": out, "n": reps.n(), "d": reps.d(), "pooling": reps.pooling, "model_id": reps.model_id })))
}

fn encode_auto(ctx: &Ctx, model: &mtse::model::Model, sents: &[Sentence], labels: &[usize]) -> Result<(PoolingStrategy, Value)> {
    match ctx.pooling()? {
        Some(p) => Ok((p, Value::Null)),
        None => {
            let choice = select_pooling(model, sents, labels, &ctx.config.eval.logreg(ctx.seed()))?;
            let p = choice.chosen.parse()?;
            Ok((p, serde_json::to_value(choice).expect("serializes")))
        }
    }
}

fn cmd_eval(ctx: &Ctx, bench: &Bench) -> Result<Value> {
    let model = ctx.model()?;
    let batch = ctx.config.eval.batch;
    match bench {
        Bench::Transfer { train, test } => {
            let mut names = BTreeMap::new();
            let (tr_s, tr_y) = labelled(train, &mut names, true)?;
            let (te_s, te_y) = labelled(test, &mut names, false)?;
            let (pooling, selection) = encode_auto(ctx, &model, &tr_s, &tr_y)?;
            let tr = encode_corpus(&model, &tr_s, pooling, batch)?;
            let te = encode_corpus(&model, &te_s, pooling, batch)?;
            let r = logreg_cv_eval(&tr.values, &tr_y, &te.values, &te_y, &ctx.config.eval.logreg(ctx.seed()))?;
            Ok(ctx.report(
                "eval-transfer",
                json!({ "task": train.file_stem().map(|s| s.to_string_lossy()), "accuracy": r.test_accuracy,
                        "pooling": pooling.to_string(), "pooling_selection": selection, "result": r,
                        "labels": names.keys().collect::<Vec<_>>() }),
            ))
        }
        Bench::Sts { data } => {
            let (mut a, mut b, mut gold) = (Vec::new(), Vec::new(), Vec::new());
            for (k, l) in read_lines(data)?.iter().enumerate() {
                if l.trim().is_empty() {
                    continue;
                }
                let cols: Vec<&str> = l.split('\t').collect();
                if cols.len() != 3 {
                    return Err(parse_err(data, k + 1, format!("expected 3 columns, found {}", cols.len())));
                }
                let score: f64 = cols[2].trim().parse().map_err(|_| parse_err(data, k + 1, format!("'{}' is not a score", cols[2])))?;
                a.push(tokens(cols[0]));
                b.push(tokens(cols[1]));
                gold.push(score);
            }
            let pooling = ctx.fixed_pooling("eval sts")?;
            let u = encode_corpus(&model, &a, pooling, batch)?;
            let v = encode_corpus(&model, &b, pooling, batch)?;
            let r = cosine_sts(&u.values, &v.values, &gold)?;
            Ok(ctx.report("eval-sts", json!({ "task": data.file_stem().map(|s| s.to_string_lossy()), "pearson": r.pearson, "pooling": pooling.to_string(), "result": r })))
        }
        Bench::Pair { data } => {
            let ds = load_parallel_tsv(data)?.dataset;
            let Examples::Pairs(pairs) = &ds.examples else {
                return Err(Error::Input("pair evaluation needs premise<TAB>hypothesis<TAB>label lines".into()));
            };
            let p: Vec<Sentence> = pairs.iter().map(|e| e.premise.clone()).collect();
            let h: Vec<Sentence> = pairs.iter().map(|e| e.hypothesis.clone()).collect();
            let labels: Vec<usize> = pairs.iter().map(|e| e.label).collect();
            let pooling = ctx.fixed_pooling("eval pair")?;
            let u = encode_corpus(&model, &p, pooling, batch)?;
            let v = encode_corpus(&model, &h, pooling, batch)?;
            let r = mlp_pair_eval(&u.values, &v.values, &labels, &ctx.config.eval.mlp(ctx.seed()))?;
            Ok(ctx.report("eval-pair", json!({ "task": ds.name, "accuracy": r.test_accuracy, "pooling": pooling.to_string(), "result": r })))
        }
    }
}

fn cmd_probe(ctx: &Ctx, kind: ProbeKind, data: &Path, meta: Option<&Path>) -> Result<Value> {
    let model = ctx.model()?;
    let pooling = ctx.fixed_pooling("probe")?;
    let sents = first_column(data)?;
    let meta = meta.map(mtse::corpus::io::load_meta).transpose()?;
    let reps = encode_corpus(&model, &sents, pooling, ctx.config.eval.batch)?;
    let ds = build_probe(kind, &sents, &reps, meta.as_deref(), Some(Lexicon::from_model(&model)), ctx.seed())?;
    let classifier = match ProbeClassifier::default_for(kind) {
        ProbeClassifier::Logreg(_) => ProbeClassifier::Logreg(ctx.config.eval.logreg(ctx.seed())),
        ProbeClassifier::Mlp(_) => ProbeClassifier::Mlp(ctx.config.eval.mlp(ctx.seed())),
    };
    let r = run_probe(&ds, &classifier, ctx.seed())?;
    Ok(ctx.report("probe", json!({ "task": kind.to_string(), "accuracy": r.accuracy, "baseline": r.baseline, "pooling": pooling.to_string(), "result": r })))
}

fn cmd_nn(ctx: &Ctx, corpus: &Path, query: &str, k: usize) -> Result<Value> {
    let model = ctx.model()?;
    let pooling = ctx.fixed_pooling("nn")?;
    let sents = first_column(corpus)?;
    let reps = encode_corpus(&model, &sents, pooling, ctx.config.eval.batch)?;
    let q = encode_corpus(&model, &[tokens(query)], pooling, 1)?;
    let hits = nearest_neighbors(q.row(0), &reps.values, k)?;
    let listing: Vec<Value> = hits
        .iter()
        .map(|h| json!({ "index": h.index, "cosine": h.cosine, "sentence": sents[h.index].join(" ") }))
        .collect();
    Ok(ctx.report("nn", json!({ "query": query, "k": k, "pooling": pooling.to_string(), "neighbors": listing })))
}

fn cmd_expand(ctx: &Ctx, pretrained: &Path, lambda: f64, save: Option<&Path>) -> Result<Value> {
    let model = ctx.model()?;
    let table = WordTable::read(pretrained)?;
    let ex = expand_vocab(&table, &WordTable::from_model(&model), lambda)?;
    let out = ctx.out()?;
    ex.table.write(out)?;
    if let Some(p) = save {
        save_model(&mtse::eval::expanded_model(&model, &ex)?, p)?;
    }
    Ok(ctx.report("expand-vocab", json!({ "out": out, "lambda": lambda, "summary": ex.summary() })))
}

fn cmd_grad_check(ctx: &Ctx, eps: f64, tol: f64, batch: usize) -> Result<(Value, bool)> {
    let prepared = ctx.config.prepare()?;
    let encoded: Vec<_> = prepared.tasks.iter().map(|t| t.data.clone()).collect();
    let trainer = Trainer::init(ctx.config.model.clone(), prepared.vocab, prepared.heads, prepared.tasks, ctx.config.train.clone())?;
    let model = &trainer.model;
    let mut batches = Vec::new();
    for (i, task) in encoded.iter().enumerate() {
        let n = task.len().min(batch.max(1));
        let idx: Vec<usize> = (0..n).collect();
        let head: Head = model.head(i);
        batches.push((head, task.batch(&idx)?));
    }
    let report = grad_check_model(model, &batches, eps, tol)?;
    let passed = report.passed;
    Ok((ctx.report("grad-check", json!({ "passed": passed, "max_error": report.max_error(), "failures": report.failures(), "report": report })), passed))
}

fn load_config(global: &Global) -> Result<RunConfig> {
    let mut config = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.train.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(Value, bool)> {
    let config = load_config(&cli.global)?;
    let hash = hex::encode(Sha256::digest(config.canonical_json().as_bytes()));
    let ctx = Ctx { config, hash, global: cli.global };
    let ok = |v: Value| Ok((v, true));
    match &cli.command {
        Command::GenData => ok(cmd_gen_data(&ctx)?),
        Command::Train => ok(cmd_train(&ctx)?),
        Command::Encode { input } => ok(cmd_encode(&ctx, input)?),
        Command::Eval { bench } => ok(cmd_eval(&ctx, bench)?),
        Command::Probe { kind, data, meta } => ok(cmd_probe(&ctx, (*kind).into(), data, meta.as_deref())?),
        Command::Nn { corpus, query, k } => ok(cmd_nn(&ctx, corpus, query, *k)?),
        Command::ExpandVocab { pretrained, lambda, save_model } => ok(cmd_expand(&ctx, pretrained, *lambda, save_model.as_deref())?),
        Command::GradCheck { eps, tol, batch } => cmd_grad_check(&ctx, *eps, *tol, *batch),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format(|buf, record| writeln!(buf, "# {} {}", record.level(), record.args()))
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok((report, passed)) => {
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            // a closed pipe downstream is not an error of ours
            let _ = writeln!(std::io::stdout(), "{text}");
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
