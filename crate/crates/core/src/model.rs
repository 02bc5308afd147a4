//! The multi-task model: one shared encoder, a conditional decoder per
//! seq2seq task and an optional pair-classification head.

use serde::{Deserialize, Serialize};

use crate::corpus::batch::TaskBatch;
use crate::corpus::dataset::{Sentence, TaskKind};
use crate::corpus::vocab::Vocabulary;
use crate::decoder::{decoder_backward, decoder_forward, greedy_decode, CondGruParams};
use crate::encoder::{encode_batch, encoder_backward, encoder_forward, pool, BiEncoderParams, PoolingStrategy, SentenceBatch, StateLayout};
use crate::error::{Error, Result};
use crate::nli_head::{nli_loss, nli_loss_grad, MlpParams, NLI_LABELS};
use crate::numcore::params::{prefixed, prefixed_mut, ParamSet};
use crate::numcore::{Rng, Tensor};

/// Model widths. Full-scale values: 512-dim embeddings and 1500/2048 hidden
/// units; the defaults are desk-scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub emb_dim: usize,
    #[serde(alias = "H_enc")]
    pub h_enc: usize,
    #[serde(alias = "H_dec")]
    pub h_dec: usize,
    /// Stacked bidirectional encoder layers.
    pub layers: usize,
    /// Hidden width of the pair-classification MLP (0 for a linear head).
    pub nli_hidden: usize,
    /// Dropout rate on the head's input features.
    pub nli_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            emb_dim: 32,
            h_enc: 64,
            h_dec: 64,
            layers: 1,
            nli_hidden: 64,
            nli_dropout: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.h_enc == 0 || self.h_dec == 0 || self.layers == 0 {
            return Err(Error::Config("model widths and layer count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.nli_dropout) {
            return Err(Error::Config("nli_dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: BiEncoderParams,
    /// Decoders in task order, keyed by task name.
    pub decoders: Vec<(String, CondGruParams)>,
    pub nli: Option<MlpParams>,
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefixed("encoder", self.encoder.tensors());
        for (name, d) in &self.decoders {
            out.extend(prefixed(&format!("decoder.{name}"), d.tensors()));
        }
        if let Some(h) = &self.nli {
            out.extend(prefixed("nli", h.tensors()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = prefixed_mut("encoder", self.encoder.tensors_mut());
        for (name, d) in &mut self.decoders {
            out.extend(prefixed_mut(&format!("decoder.{name}"), d.tensors_mut()));
        }
        if let Some(h) = &mut self.nli {
            out.extend(prefixed_mut("nli", h.tensors_mut()));
        }
        out
    }
}

/// What a task trains: a decoder over its own target vocabulary, or the
/// shared pair-classification head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskHead {
    pub name: String,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_vocab: Option<Vocabulary>,
}

/// Index of the parameters a batch is routed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Decoder(usize),
    Nli,
}

/// Parameters plus everything needed to interpret them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub source_vocab: Vocabulary,
    pub tasks: Vec<TaskHead>,
    pub params: ModelParams,
}

impl Model {
    /// Fresh parameters for the given tasks. At most one pair-classification
    /// task is allowed; it gets a three-way head.
    pub fn new(config: ModelConfig, source_vocab: Vocabulary, tasks: Vec<TaskHead>, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut seen = std::collections::HashSet::new();
        for t in &tasks {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::Config(format!("duplicate task name '{}'", t.name)));
            }
            match (t.kind, &t.target_vocab) {
                (TaskKind::Seq2seq, None) => {
                    return Err(Error::Config(format!("seq2seq task '{}' has no target vocabulary", t.name)))
                }
                (TaskKind::PairClassification, Some(_)) => {
                    return Err(Error::Config(format!("pair task '{}' cannot have a target vocabulary", t.name)))
                }
                _ => {}
            }
        }
        if tasks.iter().filter(|t| t.kind == TaskKind::PairClassification).count() > 1 {
            return Err(Error::Config("at most one pair-classification task is supported".into()));
        }
        let encoder = BiEncoderParams::new(source_vocab.len(), config.emb_dim, config.h_enc, config.layers, rng);
        let repr = encoder.repr_dim();
        let mut decoders = Vec::new();
        let mut nli = None;
        for t in &tasks {
            match &t.target_vocab {
                Some(v) => decoders.push((
                    t.name.clone(),
                    CondGruParams::new(v.len(), config.emb_dim, config.h_dec, repr, rng)?,
                )),
                None => {
                    let classes = NLI_LABELS.len();
                    let (dims, dropout) = if config.nli_hidden == 0 {
                        (vec![4 * repr, classes], vec![config.nli_dropout])
                    } else {
                        (vec![4 * repr, config.nli_hidden, classes], vec![config.nli_dropout, 0.0])
                    };
                    nli = Some(MlpParams::new(&dims, dropout, rng)?);
                }
            }
        }
        Ok(Model {
            config,
            source_vocab,
            tasks,
            params: ModelParams { encoder, decoders, nli },
        })
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    /// Where batches of task `index` go.
    pub fn head(&self, index: usize) -> Head {
        match self.tasks[index].kind {
            TaskKind::PairClassification => Head::Nli,
            TaskKind::Seq2seq => Head::Decoder(
                self.tasks[..index].iter().filter(|t| t.kind == TaskKind::Seq2seq).count(),
            ),
        }
    }

    pub fn repr_dim(&self) -> usize {
        self.params.encoder.repr_dim()
    }

    /// Token ids of whitespace-tokenized sentences; unknown words map to unk.
    pub fn encode_ids(&self, sentences: &[Sentence]) -> Result<Vec<Vec<u32>>> {
        sentences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.is_empty() {
                    Err(Error::Input(format!("sentence {i} is empty")))
                } else {
                    Ok(self.source_vocab.encode(s))
                }
            })
            .collect()
    }

    /// Pooled representations (`n×2H`) of a batch of sentences.
    pub fn represent(&self, sentences: &[Sentence], pooling: PoolingStrategy) -> Result<Tensor> {
        let ids = self.encode_ids(sentences)?;
        represent_ids(&self.params.encoder, &ids, pooling)
    }

    /// Greedy output of a seq2seq task's decoder, as target tokens.
    pub fn translate(&self, task: &str, sentences: &[Sentence], max_len: usize) -> Result<Vec<Sentence>> {
        let index = self.task_index(task).ok_or_else(|| Error::Input(format!("unknown task '{task}'")))?;
        let Head::Decoder(d) = self.head(index) else {
            return Err(Error::Input(format!("task '{task}' has no decoder")));
        };
        let vocab = self.tasks[index].target_vocab.as_ref().expect("seq2seq tasks have a vocabulary");
        let h_x = self.represent(sentences, PoolingStrategy::Last)?;
        let out = greedy_decode(&h_x, &self.params.decoders[d].1, max_len)?;
        Ok(out.iter().map(|ids| vocab.decode(ids)).collect())
    }
}

/// Pooled encoder states for id sequences.
pub fn represent_ids(encoder: &BiEncoderParams, ids: &[Vec<u32>], pooling: PoolingStrategy) -> Result<Tensor> {
    let batch = SentenceBatch::from_rows(ids)?;
    batch.check_vocab(encoder.vocab_size(), "source")?;
    let enc = encode_batch(&batch, encoder)?;
    match pooling {
        PoolingStrategy::Last => Ok(enc.h_x),
        PoolingStrategy::Max => pool(&enc.concat_states(), batch.lengths(), pooling, StateLayout::Bidirectional),
    }
}

fn check_head(params: &ModelParams, head: Head, batch: &TaskBatch) -> Result<()> {
    match (head, batch) {
        (Head::Decoder(d), TaskBatch::Seq2seq { source, target }) => {
            if d >= params.decoders.len() {
                return Err(Error::Config(format!("no decoder {d}")));
            }
            source.check_vocab(params.encoder.vocab_size(), "source")?;
            target.check_vocab(params.decoders[d].1.vocab_size(), "target")
        }
        (Head::Nli, TaskBatch::Pairs { premise, hypothesis, .. }) => {
            if params.nli.is_none() {
                return Err(Error::Config("model has no pair-classification head".into()));
            }
            premise.check_vocab(params.encoder.vocab_size(), "premise")?;
            hypothesis.check_vocab(params.encoder.vocab_size(), "hypothesis")
        }
        _ => Err(Error::Input("batch kind does not match its head".into())),
    }
}

/// Training loss of one batch. `train` enables head dropout drawn from `rng`.
pub fn batch_loss(params: &ModelParams, head: Head, batch: &TaskBatch, train: bool, rng: &mut Rng) -> Result<f64> {
    check_head(params, head, batch)?;
    let loss = match (head, batch) {
        (Head::Decoder(d), TaskBatch::Seq2seq { source, target }) => {
            let h_x = encoder_forward(&params.encoder, source)?.h_x();
            decoder_forward(&h_x, target, &params.decoders[d].1)?.loss
        }
        (Head::Nli, TaskBatch::Pairs { premise, hypothesis, labels }) => nli_loss(
            premise,
            hypothesis,
            labels,
            &params.encoder,
            params.nli.as_ref().expect("checked"),
            train,
            rng,
        )?,
        _ => unreachable!("checked"),
    };
    finite(loss, head)
}

fn finite(loss: f64, head: Head) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite {
            op: match head {
                Head::Decoder(d) => format!("decoder {d} loss"),
                Head::Nli => "nli loss".into(),
            },
        })
    }
}

/// [`batch_loss`] plus its gradient, accumulated into `grads`.
pub fn batch_loss_grad(
    params: &ModelParams,
    head: Head,
    batch: &TaskBatch,
    train: bool,
    rng: &mut Rng,
    grads: &mut ModelParams,
) -> Result<f64> {
    check_head(params, head, batch)?;
    let loss = match (head, batch) {
        (Head::Decoder(d), TaskBatch::Seq2seq { source, target }) => {
            let trace = encoder_forward(&params.encoder, source)?;
            let h_x = trace.h_x();
            let dec = &params.decoders[d].1;
            let dtrace = decoder_forward(&h_x, target, dec)?;
            let dh_x = decoder_backward(&h_x, dec, &dtrace, &mut grads.decoders[d].1);
            encoder_backward(&params.encoder, &trace, &dh_x, &mut grads.encoder);
            dtrace.loss
        }
        (Head::Nli, TaskBatch::Pairs { premise, hypothesis, labels }) => nli_loss_grad(
            premise,
            hypothesis,
            labels,
            &params.encoder,
            params.nli.as_ref().expect("checked"),
            train,
            rng,
            &mut grads.encoder,
            grads.nli.as_mut().expect("gradient mirrors parameters"),
        )?,
        _ => unreachable!("checked"),
    };
    finite(loss, head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::batch::EncodedTask;
    use crate::corpus::synth::{gen_cipher_task, gen_nli, CipherConfig, NliConfig};
    use crate::corpus::vocab::build_vocab;
    use crate::numcore::params::{finite_diff_grad, max_relative_errors, Objective};

    fn tiny() -> (Model, Vec<TaskBatch>) {
        let (fr, _) = gen_cipher_task(1, "fr", &CipherConfig { vocab_size: 12, n: 4, min_len: 2, max_len: 4, ..Default::default() }).unwrap();
        let nli = gen_nli(2, &NliConfig { n: 3, vocab_size: 12, min_len: 3, max_len: 4 }).unwrap();
        let src: Vec<String> = fr.source_sentences().into_iter().chain(nli.source_sentences()).map(|s| s.join(" ")).collect();
        let sv = build_vocab(&src, 100, 1).unwrap();
        let tv = build_vocab(fr.target_sentences().iter().map(|s| s.join(" ")), 100, 1).unwrap();
        let cfg = ModelConfig { emb_dim: 3, h_enc: 2, h_dec: 3, layers: 1, nli_hidden: 4, nli_dropout: 0.25 };
        let heads = vec![
            TaskHead { name: "fr".into(), kind: TaskKind::Seq2seq, target_vocab: Some(tv.clone()) },
            TaskHead { name: "nli".into(), kind: TaskKind::PairClassification, target_vocab: None },
        ];
        let model = Model::new(cfg, sv.clone(), heads, &mut Rng::new(5)).unwrap();
        let b1 = EncodedTask::encode(&fr, &sv, Some(&tv)).unwrap().batch(&[0, 1]).unwrap();
        let b2 = EncodedTask::encode(&nli, &sv, None).unwrap().batch(&[0, 1, 2]).unwrap();
        (model, vec![b1, b2])
    }

    struct Sum<'a> {
        heads: Vec<Head>,
        batches: &'a [TaskBatch],
    }

    impl Objective<ModelParams> for Sum<'_> {
        fn loss(&self, p: &ModelParams) -> Result<f64> {
            let mut total = 0.0;
            for (h, b) in self.heads.iter().zip(self.batches) {
                total += batch_loss(p, *h, b, true, &mut Rng::new(3))?;
            }
            Ok(total)
        }
        fn loss_and_grad(&self, p: &ModelParams) -> Result<(f64, ModelParams)> {
            let mut g = p.zeros_like();
            let mut total = 0.0;
            for (h, b) in self.heads.iter().zip(self.batches) {
                total += batch_loss_grad(p, *h, b, true, &mut Rng::new(3), &mut g)?;
            }
            Ok((total, g))
        }
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        let (model, batches) = tiny();
        let obj = Sum { heads: vec![model.head(0), model.head(1)], batches: &batches };
        let (_, g) = obj.loss_and_grad(&model.params).unwrap();
        let f = finite_diff_grad(&obj, &model.params, 1e-5).unwrap();
        for (name, err) in max_relative_errors(&g, &f) {
            assert!(err < 1e-6, "{name}: {err}");
        }
    }

    #[test]
    fn heads_route_by_kind() {
        let (model, batches) = tiny();
        assert_eq!(model.head(0), Head::Decoder(0));
        assert_eq!(model.head(1), Head::Nli);
        let mut rng = Rng::new(0);
        assert!(batch_loss(&model.params, Head::Nli, &batches[0], false, &mut rng).is_err());
        let names: Vec<String> = model.params.tensors().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"encoder.l0.fwd.w_r".to_string()));
        assert!(names.contains(&"decoder.fr.cell.u_d".to_string()));
        assert!(names.contains(&"nli.l1.b".to_string()));
    }

    #[test]
    fn task_validation() {
        let v = Vocabulary::with_words(["a"]).unwrap();
        let dup = vec![
            TaskHead { name: "x".into(), kind: TaskKind::Seq2seq, target_vocab: Some(v.clone()) },
            TaskHead { name: "x".into(), kind: TaskKind::Seq2seq, target_vocab: Some(v.clone()) },
        ];
        assert!(Model::new(ModelConfig::default(), v.clone(), dup, &mut Rng::new(0)).is_err());
        let missing = vec![TaskHead { name: "x".into(), kind: TaskKind::Seq2seq, target_vocab: None }];
        assert!(Model::new(ModelConfig::default(), v, missing, &mut Rng::new(0)).is_err());
    }
}
