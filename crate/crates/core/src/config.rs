//! Run configuration: model widths, training schedule, task sources and
//! evaluation settings in one strict JSON document.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::io::{load_meta, load_parallel_tsv, write_meta, write_parallel_tsv};
use crate::corpus::synth::{gen_books, gen_cipher_task, gen_nli, BooksConfig, CipherConfig, NliConfig};
use crate::corpus::{build_vocab, gen_pcfg_parsing, EncodedTask, Grammar, Manifest, ManifestTask, PcfgConfig};
use crate::corpus::{TaskDataset, TaskKind, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{LogRegConfig, MlpClassifierConfig};
use crate::model::{ModelConfig, TaskHead};
use crate::trainer::{TrainConfig, TrainTask};

/// Which side of a book corpus a skip-thought task predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Next,
    Previous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type", deny_unknown_fields)]
pub enum TaskSource {
    Cipher {
        #[serde(default)]
        config: CipherConfig,
    },
    /// Skip-thought. Every books task shares one generated corpus.
    Books {
        direction: Direction,
        #[serde(default)]
        config: BooksConfig,
    },
    Nli {
        #[serde(default)]
        config: NliConfig,
    },
    Parse {
        #[serde(default)]
        config: PcfgConfig,
        /// Defaults to the built-in toy English grammar.
        #[serde(default)]
        grammar: Option<Grammar>,
    },
    /// Pre-existing TSV files; paths are relative to the config file.
    Files {
        train: PathBuf,
        #[serde(default)]
        heldout: Option<PathBuf>,
        #[serde(default)]
        meta: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    #[serde(default)]
    pub kind: Option<TaskKind>,
    #[serde(default = "one")]
    pub weight: f64,
    pub source: TaskSource,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Fraction of each synthetic task held out from training.
    pub heldout_fraction: f64,
    pub max_vocab: usize,
    pub min_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { heldout_fraction: 0.1, max_vocab: 20_000, min_count: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// `last`, `max` or `auto` (chosen by cross-validation).
    pub pooling: String,
    pub folds: usize,
    pub l2_grid: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub mlp: MlpClassifierConfig,
    pub batch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let lr = LogRegConfig::default();
        EvalConfig {
            pooling: "last".into(),
            folds: lr.folds,
            l2_grid: lr.l2_grid,
            max_iter: lr.max_iter,
            tol: lr.tol,
            mlp: MlpClassifierConfig::default(),
            batch: 64,
        }
    }
}

impl EvalConfig {
    pub fn logreg(&self, seed: u64) -> LogRegConfig {
        LogRegConfig {
            folds: self.folds,
            l2_grid: self.l2_grid.clone(),
            max_iter: self.max_iter,
            tol: self.tol,
            seed,
        }
    }

    pub fn mlp(&self, seed: u64) -> MlpClassifierConfig {
        MlpClassifierConfig { seed, ..self.mlp.clone() }
    }
}

/// Whole-run configuration. Defaults are desk-scale; the full-scale preset
/// uses batch 48, lr 0.002, 512-dim embeddings, 1500 encoder and 2048
/// decoder units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub tasks: Vec<TaskConfig>,
    pub eval: EvalConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            tasks: default_tasks(),
            eval: EvalConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Two ciphers, next and previous sentence, parsing and NLI.
pub fn default_tasks() -> Vec<TaskConfig> {
    let task = |name: &str, source| TaskConfig { name: name.into(), kind: None, weight: 1.0, source };
    vec![
        task("fr", TaskSource::Cipher { config: CipherConfig::default() }),
        task(
            "de",
            TaskSource::Cipher { config: CipherConfig { reverse: true, target_prefix: "d".into(), ..Default::default() } },
        ),
        task("stn", TaskSource::Books { direction: Direction::Next, config: BooksConfig::default() }),
        task("stp", TaskSource::Books { direction: Direction::Previous, config: BooksConfig::default() }),
        task("parse", TaskSource::Parse { config: PcfgConfig::default(), grammar: None }),
        task("nli", TaskSource::Nli { config: NliConfig::default() }),
    ]
}

/// Full-scale widths and batch size, for reference.
pub fn full_scale() -> RunConfig {
    RunConfig {
        model: ModelConfig { emb_dim: 512, h_enc: 1500, h_dec: 2048, ..Default::default() },
        train: TrainConfig { batch_size: 48, ..Default::default() },
        ..Default::default()
    }
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// One task's training and held-out data.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub name: String,
    pub weight: f64,
    pub train: TaskDataset,
    pub heldout: Option<TaskDataset>,
}

/// Vocabularies and heads ready for [`crate::trainer::Trainer::init`].
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub heads: Vec<TaskHead>,
    pub tasks: Vec<TrainTask>,
    pub data: Vec<TaskData>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        cfg.base_dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON of every setting, defaults filled in.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one task is required".into()));
        }
        let mut names = BTreeSet::new();
        for t in &self.tasks {
            if t.name.is_empty() || t.name.contains(['/', '\t', ' ']) {
                return Err(Error::Config(format!("invalid task name '{}'", t.name)));
            }
            if !names.insert(t.name.as_str()) {
                return Err(Error::Config(format!("duplicate task name '{}'", t.name)));
            }
            if !(t.weight > 0.0 && t.weight.is_finite()) {
                return Err(Error::Config(format!("task '{}' needs a positive weight", t.name)));
            }
        }
        if !(0.0..1.0).contains(&self.data.heldout_fraction) {
            return Err(Error::Config("heldout_fraction must lie in [0, 1)".into()));
        }
        if !["last", "max", "auto"].contains(&self.eval.pooling.as_str()) {
            return Err(Error::Config(format!("unknown pooling '{}'", self.eval.pooling)));
        }
        if self.eval.folds < 2 || self.eval.l2_grid.is_empty() {
            return Err(Error::Config("eval needs at least 2 folds and one l2 value".into()));
        }
        Ok(())
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Generates or loads every task, then splits off held-out data.
    pub fn task_data(&self) -> Result<Vec<TaskData>> {
        let seed = self.train.seed;
        let frac = self.data.heldout_fraction;
        let split = |ds: TaskDataset| {
            if frac > 0.0 {
                let (a, b) = ds.split_tail(frac);
                (a, Some(b))
            } else {
                (ds, None)
            }
        };
        let mut out = Vec::with_capacity(self.tasks.len());
        for t in &self.tasks {
            let task_seed = seed ^ fnv(&t.name);
            let (mut train, mut heldout) = match &t.source {
                TaskSource::Cipher { config } => split(gen_cipher_task(task_seed, &t.name, config)?.0),
                TaskSource::Books { direction, config } => {
                    let (stn, stp) = gen_books(seed ^ fnv("books"), config)?;
                    split(if *direction == Direction::Next { stn } else { stp })
                }
                TaskSource::Nli { config } => split(gen_nli(task_seed, config)?),
                TaskSource::Parse { config, grammar } => {
                    let g = grammar.clone().unwrap_or_else(Grammar::toy_english);
                    split(gen_pcfg_parsing(task_seed, &g, config)?)
                }
                TaskSource::Files { train, heldout, meta } => {
                    let tr = load_parallel_tsv(self.path(train))?.dataset;
                    let mut ho = heldout.as_ref().map(|p| load_parallel_tsv(self.path(p))).transpose()?.map(|l| l.dataset);
                    if let (Some(m), Some(h)) = (meta, ho.as_mut()) {
                        h.meta = Some(load_meta(self.path(m))?);
                        h.validate()?;
                    }
                    (tr, ho)
                }
            };
            train.name = t.name.clone();
            if let Some(h) = heldout.as_mut() {
                h.name = t.name.clone();
            }
            if let Some(kind) = t.kind {
                if kind != train.kind() {
                    return Err(Error::Config(format!("task '{}' is declared {kind:?} but its data is not", t.name)));
                }
            }
            if train.is_empty() {
                return Err(Error::Input(format!("task '{}' has no training examples", t.name)));
            }
            out.push(TaskData { name: t.name.clone(), weight: t.weight, train, heldout });
        }
        Ok(out)
    }

    /// Builds vocabularies from the training splits and encodes every task.
    pub fn prepare(&self) -> Result<Prepared> {
        let data = self.task_data()?;
        let src_lines: Vec<String> = data
            .iter()
            .flat_map(|d| d.train.source_sentences().into_iter().map(|s| s.join(" ")))
            .collect();
        let vocab = build_vocab(&src_lines, self.data.max_vocab, self.data.min_count)?;
        let mut heads = Vec::with_capacity(data.len());
        let mut tasks = Vec::with_capacity(data.len());
        for d in &data {
            let target_vocab = match d.train.kind() {
                TaskKind::Seq2seq => Some(build_vocab(
                    d.train.target_sentences().iter().map(|s| s.join(" ")),
                    self.data.max_vocab,
                    self.data.min_count,
                )?),
                TaskKind::PairClassification => None,
            };
            tasks.push(TrainTask {
                data: EncodedTask::encode(&d.train, &vocab, target_vocab.as_ref())?,
                weight: d.weight,
            });
            heads.push(TaskHead { name: d.name.clone(), kind: d.train.kind(), target_vocab });
        }
        Ok(Prepared { vocab, heads, tasks, data })
    }

    /// Writes every task as TSV plus held-out metadata and a manifest.
    pub fn write_data(&self, dir: &Path) -> Result<Manifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest { seed: self.train.seed, tasks: Vec::new() };
        for d in self.task_data()? {
            let train = format!("{}.train.tsv", d.name);
            write_parallel_tsv(&d.train, dir.join(&train))?;
            let (mut heldout, mut meta) = (None, None);
            if let Some(h) = &d.heldout {
                let name = format!("{}.heldout.tsv", d.name);
                write_parallel_tsv(h, dir.join(&name))?;
                heldout = Some(name);
                if let Some(m) = &h.meta {
                    let name = format!("{}.heldout.meta.jsonl", d.name);
                    write_meta(m, dir.join(&name))?;
                    meta = Some(name);
                }
            }
            manifest.tasks.push(ManifestTask { name: d.name, kind: d.train.kind(), weight: d.weight, train, heldout, meta });
        }
        manifest.save(dir.join(Manifest::FILE_NAME))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"model": {"emb_dim": 8, "depth": 2}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"trian": {}}"#).is_err());
    }

    #[test]
    fn missing_keys_take_defaults() {
        let c = RunConfig::from_json(r#"{"model": {"H_enc": 12}, "train": {"batch": 4}}"#).unwrap();
        assert_eq!(c.model.h_enc, 12);
        assert_eq!(c.model.emb_dim, ModelConfig::default().emb_dim);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.tasks.len(), 6);
        assert_eq!(c.eval.folds, 10);
    }

    #[test]
    fn full_scale_preset() {
        let f = full_scale();
        assert_eq!((f.model.emb_dim, f.model.h_enc, f.model.h_dec, f.train.batch_size), (512, 1500, 2048, 48));
        assert_eq!(f.train.lr, 0.002);
    }

    #[test]
    fn books_tasks_share_a_corpus() {
        let small = BooksConfig { n_books: 4, sentences_per_book: 5, ..Default::default() };
        let cfg = RunConfig {
            tasks: vec![
                TaskConfig { name: "a".into(), kind: None, weight: 1.0, source: TaskSource::Books { direction: Direction::Next, config: small.clone() } },
                TaskConfig { name: "b".into(), kind: None, weight: 1.0, source: TaskSource::Books { direction: Direction::Previous, config: small } },
            ],
            ..Default::default()
        };
        let d = cfg.task_data().unwrap();
        let (crate::corpus::Examples::Seq2seq(next), crate::corpus::Examples::Seq2seq(prev)) = (&d[0].train.examples, &d[1].train.examples) else {
            panic!("books tasks are seq2seq");
        };
        // each next-sentence pair appears reversed in the previous-sentence task
        assert_eq!(next.len(), prev.len());
        for (s, t) in next {
            assert!(prev.iter().any(|(a, b)| a == t && b == s));
        }
    }

    #[test]
    fn write_data_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            tasks: vec![
                TaskConfig {
                    name: "fr".into(),
                    kind: Some(TaskKind::Seq2seq),
                    weight: 2.0,
                    source: TaskSource::Cipher { config: CipherConfig { n: 50, ..Default::default() } },
                },
                TaskConfig {
                    name: "parse".into(),
                    kind: None,
                    weight: 1.0,
                    source: TaskSource::Parse { config: PcfgConfig { n: 40, ..Default::default() }, grammar: None },
                },
            ],
            ..Default::default()
        };
        let m = cfg.write_data(dir.path()).unwrap();
        assert_eq!(m.files().len(), 5);
        let reloaded = RunConfig {
            tasks: vec![TaskConfig {
                name: "fr".into(),
                kind: None,
                weight: 1.0,
                source: TaskSource::Files { train: "fr.train.tsv".into(), heldout: Some("fr.heldout.tsv".into()), meta: None },
            }],
            base_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        let a = &cfg.task_data().unwrap()[0];
        let b = &reloaded.task_data().unwrap()[0];
        assert_eq!((&a.train, &a.heldout), (&b.train, &b.heldout));
    }
}
