//! Multi-task training loop, checkpoints and the model-wide gradient check.

pub mod checkpoint;
pub mod gradcheck;
pub mod schedule;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::batch::{EncodedTask, TaskBatch};
use crate::corpus::dataset::TaskKind;
use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{batch_loss_grad, Model, ModelConfig, ModelParams, TaskHead};
use crate::numcore::params::ParamSet;
use crate::numcore::{adam_step, AdamConfig, AdamState, Rng};
use checkpoint::Record;

pub use gradcheck::{grad_check_model, GradCheckReport};
pub use schedule::{is_nli_update, normalize_weights, sample_task};

/// Training hyperparameters. Full-scale values: batch 48, lr 0.002.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    #[serde(rename = "batch")]
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    #[serde(rename = "updates")]
    pub total_updates: u64,
    /// One pair-classification update follows every `nli_every` seq2seq
    /// updates.
    pub nli_every: u64,
    #[serde(rename = "clip")]
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Save a checkpoint every this many updates (0 disables).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            batch_size: 16,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            total_updates: 1000,
            nli_every: 10,
            grad_clip_norm: 5.0,
            seed: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.nli_every == 0 {
            return Err(Error::Config("nli_every must be >= 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("clip must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config("lr must be non-negative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// A task's training data and its relative sampling weight.
#[derive(Clone, Debug)]
pub struct TrainTask {
    pub data: EncodedTask,
    pub weight: f64,
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub update: u64,
    pub task: String,
    pub loss: f64,
}

/// TSV `update<TAB>task<TAB>loss`, losses in shortest round-trip form.
pub fn format_loss_log(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        writeln!(out, "{}\t{}\t{}", r.update, r.task, r.loss).expect("writing to a String");
    }
    out
}

/// Position in a task's shuffled epoch.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
struct Stream {
    order: Vec<usize>,
    cursor: usize,
}

/// Scales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<P: ParamSet>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Owns the model, optimizer state and the run's generator.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    adam: AdamState<ModelParams>,
    rng: Rng,
    tasks: Vec<EncodedTask>,
    streams: Vec<Stream>,
    /// Seq2seq task indices and their probabilities.
    seq2seq: Vec<usize>,
    alpha: Vec<f64>,
    nli: Option<usize>,
    update: u64,
    log: Vec<LogRecord>,
}

impl Trainer {
    /// Initializes a model from `config.seed` and continues the same
    /// generator for training.
    pub fn init(
        model_config: ModelConfig,
        source_vocab: Vocabulary,
        heads: Vec<TaskHead>,
        tasks: Vec<TrainTask>,
        config: TrainConfig,
    ) -> Result<Self> {
        let mut rng = Rng::new(config.seed);
        let model = Model::new(model_config, source_vocab, heads, &mut rng)?;
        Trainer::new(model, tasks, config, rng)
    }

    /// `tasks` are matched to the model's tasks by name.
    pub fn new(model: Model, tasks: Vec<TrainTask>, config: TrainConfig, rng: Rng) -> Result<Self> {
        config.validate()?;
        if tasks.len() != model.tasks.len() {
            return Err(Error::Config(format!(
                "{} datasets for {} model tasks",
                tasks.len(),
                model.tasks.len()
            )));
        }
        let mut ordered = Vec::with_capacity(tasks.len());
        let mut weights = Vec::new();
        let mut seq2seq = Vec::new();
        let mut nli = None;
        for (i, head) in model.tasks.iter().enumerate() {
            let t = tasks
                .iter()
                .find(|t| t.data.name == head.name)
                .ok_or_else(|| Error::Config(format!("no dataset for task '{}'", head.name)))?;
            if t.data.is_empty() {
                return Err(Error::DegenerateTask(format!("task '{}' has no examples", head.name)));
            }
            match head.kind {
                TaskKind::Seq2seq => {
                    seq2seq.push(i);
                    weights.push(t.weight);
                }
                TaskKind::PairClassification => nli = Some(i),
            }
            ordered.push(t.data.clone());
        }
        let alpha = normalize_weights(&weights)?;
        let adam = AdamState::new(&model.params);
        Ok(Trainer {
            streams: vec![Stream::default(); ordered.len()],
            tasks: ordered,
            model,
            config,
            adam,
            rng,
            seq2seq,
            alpha,
            nli,
            update: 0,
            log: Vec::new(),
        })
    }

    pub fn update(&self) -> u64 {
        self.update
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam.t
    }

    /// Seq2seq sampling probabilities, in model task order.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    fn next_task(&mut self, u: u64) -> Result<usize> {
        if let Some(n) = self.nli {
            if is_nli_update(u, self.config.nli_every) {
                return Ok(n);
            }
        }
        Ok(self.seq2seq[sample_task(&self.alpha, &mut self.rng)?])
    }

    fn next_batch(&mut self, task: usize) -> Result<TaskBatch> {
        let s = &mut self.streams[task];
        if s.cursor >= s.order.len() {
            s.order = self.rng.permutation(self.tasks[task].len());
            s.cursor = 0;
        }
        let end = (s.cursor + self.config.batch_size).min(s.order.len());
        let idx = s.order[s.cursor..end].to_vec();
        s.cursor = end;
        self.tasks[task].batch(&idx)
    }

    /// One optimizer update on one task's next minibatch.
    pub fn step(&mut self) -> Result<LogRecord> {
        let u = self.update + 1;
        let task = self.next_task(u)?;
        let batch = self.next_batch(task)?;
        let head = self.model.head(task);
        let mut grads = self.model.params.zeros_like();
        let name = self.model.tasks[task].name.clone();
        let loss = match batch_loss_grad(&self.model.params, head, &batch, true, &mut self.rng, &mut grads) {
            Ok(l) => l,
            Err(e @ Error::NonFinite { .. }) => {
                log::error!("update {u} ({name}): {e}; stopping");
                self.log.push(LogRecord { update: u, task: name, loss: f64::NAN });
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        clip_global_norm(&mut grads, self.config.grad_clip_norm);
        adam_step(&mut self.model.params, &grads, &mut self.adam, &self.config.adam());
        self.update = u;
        let rec = LogRecord { update: u, task: name, loss };
        self.log.push(rec.clone());
        Ok(rec)
    }

    /// Runs until `config.total_updates`, saving to `checkpoint` every
    /// `checkpoint_every` updates and at the end when a path is given.
    pub fn run(&mut self, checkpoint: Option<&Path>) -> Result<()> {
        while self.update < self.config.total_updates {
            let rec = self.step()?;
            if rec.update % 500 == 0 {
                log::info!("update {} {} loss {:.4}", rec.update, rec.task, rec.loss);
            }
            if let Some(path) = checkpoint {
                let every = self.config.checkpoint_every;
                if every > 0 && self.update.is_multiple_of(every) {
                    self.save(path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            self.save(path)?;
        }
        Ok(())
    }

    /// Saves model, optimizer state, generator state and epoch positions.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut records = param_records(&self.model.params);
        for (name, t) in self.adam.m.tensors() {
            records.push(Record::new(format!("adam.m/{name}"), t.shape().to_vec(), t.data().to_vec()));
        }
        for (name, t) in self.adam.v.tensors() {
            records.push(Record::new(format!("adam.v/{name}"), t.shape().to_vec(), t.data().to_vec()));
        }
        records.push(Record::vector("adam.t", vec![self.adam.t as f64]));
        let halves = self
            .rng
            .state()
            .iter()
            .flat_map(|w| [(w & 0xffff_ffff) as f64, (w >> 32) as f64])
            .collect();
        records.push(Record::vector("rng/state", halves));
        for (task, s) in self.model.tasks.iter().zip(&self.streams) {
            records.push(Record::vector(
                format!("stream/{}/order", task.name),
                s.order.iter().map(|&i| i as f64).collect(),
            ));
            records.push(Record::vector(format!("stream/{}/cursor", task.name), vec![s.cursor as f64]));
        }
        let meta = Meta::of(&self.model, Some(&self.config), self.update);
        let bytes = checkpoint::encode(&meta.to_json(), &records)?;
        checkpoint::write_atomic(path, &bytes)
    }

    /// Restores a trainer saved by [`Trainer::save`]; `tasks` must be the
    /// datasets the run was started with.
    pub fn resume(path: &Path, tasks: Vec<TrainTask>) -> Result<Self> {
        let (meta, mut records) = load_records(path)?;
        let config = meta
            .train
            .clone()
            .ok_or_else(|| Error::Format("checkpoint holds no training state".into()))?;
        let model = model_from(&meta, &mut records)?;
        let mut take = |name: &str| -> Result<Record> {
            let i = records
                .iter()
                .position(|r| r.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing record {name}")))?;
            Ok(records.swap_remove(i))
        };
        let mut adam = AdamState::new(&model.params);
        for (prefix, target) in [("adam.m", &mut adam.m), ("adam.v", &mut adam.v)] {
            for (name, t) in target.tensors_mut() {
                fill_tensor(t, take(&format!("{prefix}/{name}"))?)?;
            }
        }
        adam.t = take("adam.t")?.values.first().copied().unwrap_or(0.0) as u64;
        let halves = take("rng/state")?.values;
        if halves.len() != 8 {
            return Err(Error::Format("rng state needs 8 words".into()));
        }
        let mut state = [0u64; 4];
        for (k, w) in state.iter_mut().enumerate() {
            *w = halves[2 * k] as u64 | ((halves[2 * k + 1] as u64) << 32);
        }
        if state.iter().all(|&w| w == 0) {
            return Err(Error::Format("rng state is all zero".into()));
        }
        let mut streams = Vec::new();
        for task in &model.tasks {
            let order = take(&format!("stream/{}/order", task.name))?.values;
            let cursor = take(&format!("stream/{}/cursor", task.name))?.values;
            streams.push(Stream {
                order: order.iter().map(|&v| v as usize).collect(),
                cursor: cursor.first().copied().unwrap_or(0.0) as usize,
            });
        }
        if let Some(r) = records.first() {
            return Err(Error::Format(format!("unexpected record {}", r.name)));
        }
        let mut trainer = Trainer::new(model, tasks, config, Rng::from_state(state))?;
        for (s, t) in streams.iter().zip(&trainer.tasks) {
            if !s.order.is_empty() && s.order.len() != t.len() {
                return Err(Error::Input(format!(
                    "dataset '{}' has {} examples but the checkpoint epoch has {}",
                    t.name,
                    t.len(),
                    s.order.len()
                )));
            }
        }
        trainer.streams = streams;
        trainer.adam = adam;
        trainer.update = meta.update;
        Ok(trainer)
    }
}

/// Checkpoint header: everything needed to rebuild the parameter shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    model: ModelConfig,
    #[serde(default)]
    train: Option<TrainConfig>,
    source_vocab: Vocabulary,
    tasks: Vec<TaskHead>,
    update: u64,
}

impl Meta {
    fn of(model: &Model, train: Option<&TrainConfig>, update: u64) -> Self {
        Meta {
            model: model.config.clone(),
            train: train.cloned(),
            source_vocab: model.source_vocab.clone(),
            tasks: model.tasks.clone(),
            update,
        }
    }

    fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("meta serializes")
    }
}

fn param_records(params: &ModelParams) -> Vec<Record> {
    params
        .tensors()
        .into_iter()
        .map(|(name, t)| Record::new(format!("param/{name}"), t.shape().to_vec(), t.data().to_vec()))
        .collect()
}

fn fill_tensor(t: &mut crate::numcore::Tensor, r: Record) -> Result<()> {
    if r.dims != t.shape() {
        return Err(Error::Format(format!(
            "record {} has shape {:?}, expected {:?}",
            r.name,
            r.dims,
            t.shape()
        )));
    }
    t.data_mut().copy_from_slice(&r.values);
    Ok(())
}

fn load_records(path: &Path) -> Result<(Meta, Vec<Record>)> {
    let (meta, records) = checkpoint::read(path)?;
    let meta: Meta =
        serde_json::from_slice(&meta).map_err(|e| Error::Format(format!("checkpoint meta: {e}")))?;
    Ok((meta, records))
}

/// Rebuilds the model and consumes its `param/` records.
fn model_from(meta: &Meta, records: &mut Vec<Record>) -> Result<Model> {
    let mut model = Model::new(
        meta.model.clone(),
        meta.source_vocab.clone(),
        meta.tasks.clone(),
        &mut Rng::new(0),
    )?;
    let mut by_name: std::collections::HashMap<String, Record> = std::collections::HashMap::new();
    records.retain(|r| {
        if let Some(name) = r.name.strip_prefix("param/") {
            by_name.insert(name.to_string(), r.clone());
            false
        } else {
            true
        }
    });
    for (name, t) in model.params.tensors_mut() {
        let r = by_name
            .remove(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing parameter {name}")))?;
        fill_tensor(t, r)?;
    }
    if let Some(extra) = by_name.keys().min() {
        return Err(Error::Format(format!("unexpected parameter {extra}")));
    }
    Ok(model)
}

/// Saves parameters only (no optimizer or stream state).
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let bytes = checkpoint::encode(&Meta::of(model, None, 0).to_json(), &param_records(&model.params))?;
    checkpoint::write_atomic(path, &bytes)
}

/// Loads the model from any checkpoint, ignoring training state.
pub fn load_model(path: &Path) -> Result<Model> {
    let (meta, mut records) = load_records(path)?;
    model_from(&meta, &mut records)
}
