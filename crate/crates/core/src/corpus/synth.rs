//! Seeded synthetic corpora standing in for the translation, skip-thought
//! and NLI task families.

use serde::{Deserialize, Serialize};

use crate::corpus::dataset::{PairExample, Sentence, TaskDataset};
use crate::corpus::vocab::SPECIAL_TOKENS;
use crate::error::{Error, Result};
use crate::nli_head::{CONTRADICTION, ENTAILMENT, NEUTRAL};
use crate::numcore::Rng;

/// Content words `w0 .. w{k-1}` for a vocabulary of `vocab_size` tokens
/// including the four reserved ones.
pub fn lexicon(vocab_size: usize) -> Vec<String> {
    content_words("w", vocab_size)
}

fn content_words(prefix: &str, vocab_size: usize) -> Vec<String> {
    (0..vocab_size.saturating_sub(SPECIAL_TOKENS.len()))
        .map(|i| format!("{prefix}{i}"))
        .collect()
}

fn check_lengths(min_len: usize, max_len: usize) -> Result<()> {
    if min_len == 0 || min_len > max_len {
        return Err(Error::Config(format!(
            "sentence length range {min_len}..={max_len} is invalid"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CipherConfig {
    /// Vocabulary size on each side, reserved tokens included.
    pub vocab_size: usize,
    pub n: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub reverse: bool,
    /// Prefix of target-side tokens; keeps the target vocabulary disjoint.
    pub target_prefix: String,
}

impl Default for CipherConfig {
    fn default() -> Self {
        CipherConfig {
            vocab_size: 64,
            n: 5000,
            min_len: 3,
            max_len: 10,
            reverse: false,
            target_prefix: "f".into(),
        }
    }
}

/// The substitution table of a cipher task: source word index to target word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cipher {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub reverse: bool,
}

impl Cipher {
    pub fn apply(&self, sentence: &[String]) -> Option<Sentence> {
        let mut out = Vec::with_capacity(sentence.len());
        for tok in sentence {
            let i = self.source.iter().position(|s| s == tok)?;
            out.push(self.target[i].clone());
        }
        if self.reverse {
            out.reverse();
        }
        Some(out)
    }
}

/// Uniform source sentences mapped through a seeded bijection into a
/// disjoint target vocabulary, optionally reversed.
pub fn gen_cipher_task(seed: u64, name: &str, cfg: &CipherConfig) -> Result<(TaskDataset, Cipher)> {
    if cfg.vocab_size < 5 {
        return Err(Error::Config(format!("cipher vocab_size must be >= 5, got {}", cfg.vocab_size)));
    }
    check_lengths(cfg.min_len, cfg.max_len)?;
    let mut rng = Rng::new(seed);
    let source = lexicon(cfg.vocab_size);
    let k = source.len();
    let targets = content_words(&cfg.target_prefix, cfg.vocab_size);
    let pi = rng.permutation(k);
    let cipher = Cipher {
        target: pi.iter().map(|&j| targets[j].clone()).collect(),
        source,
        reverse: cfg.reverse,
    };
    let mut pairs = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let len = rng.range_inclusive(cfg.min_len, cfg.max_len);
        let src: Sentence = (0..len).map(|_| cipher.source[rng.below(k)].clone()).collect();
        let tgt = cipher.apply(&src).expect("generated tokens are in the lexicon");
        pairs.push((src, tgt));
    }
    Ok((TaskDataset::seq2seq(name, pairs)?, cipher))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BooksConfig {
    pub n_books: usize,
    pub sentences_per_book: usize,
    pub vocab_size: usize,
    pub n_topics: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability the next sentence keeps the current topic.
    pub topic_stay: f64,
    /// Probability a word is followed by its preferred successor.
    pub successor_prob: f64,
}

impl Default for BooksConfig {
    fn default() -> Self {
        BooksConfig {
            n_books: 250,
            sentences_per_book: 21,
            vocab_size: 64,
            n_topics: 10,
            min_len: 3,
            max_len: 10,
            topic_stay: 0.9,
            successor_prob: 0.85,
        }
    }
}

/// Topic-structured sentence source shared by the books and NLI generators.
#[derive(Clone, Debug)]
struct TopicModel {
    words: Vec<String>,
    topics: Vec<Vec<usize>>,
    successor: Vec<usize>,
}

impl TopicModel {
    fn new(cfg: &BooksConfig, rng: &mut Rng) -> Result<Self> {
        let words = lexicon(cfg.vocab_size);
        if cfg.n_topics == 0 || words.len() < cfg.n_topics {
            return Err(Error::Config(format!(
                "{} topics need at least as many content words (have {})",
                cfg.n_topics,
                words.len()
            )));
        }
        let per = words.len() / cfg.n_topics;
        let topics: Vec<Vec<usize>> = (0..cfg.n_topics)
            .map(|t| {
                let end = if t + 1 == cfg.n_topics { words.len() } else { (t + 1) * per };
                (t * per..end).collect()
            })
            .collect();
        let mut successor = vec![0; words.len()];
        for topic in &topics {
            let order = rng.permutation(topic.len());
            for (i, &o) in order.iter().enumerate() {
                successor[topic[o]] = topic[order[(i + 1) % order.len()]];
            }
        }
        Ok(TopicModel { words, topics, successor })
    }

    fn sentence(&self, topic: usize, cfg: &BooksConfig, rng: &mut Rng) -> Sentence {
        let pool = &self.topics[topic];
        let len = rng.range_inclusive(cfg.min_len, cfg.max_len);
        let mut w = pool[rng.below(pool.len())];
        let mut out = Vec::with_capacity(len);
        out.push(self.words[w].clone());
        for _ in 1..len {
            w = if rng.bernoulli(cfg.successor_prob) {
                self.successor[w]
            } else {
                pool[rng.below(pool.len())]
            };
            out.push(self.words[w].clone());
        }
        out
    }
}

/// Books of topic-coherent sentences, returned as (next-sentence,
/// previous-sentence) datasets. Pairs never cross a book boundary.
pub fn gen_books(seed: u64, cfg: &BooksConfig) -> Result<(TaskDataset, TaskDataset)> {
    if cfg.sentences_per_book < 2 {
        return Err(Error::Config("sentences_per_book must be >= 2".into()));
    }
    check_lengths(cfg.min_len, cfg.max_len)?;
    let mut rng = Rng::new(seed);
    let model = TopicModel::new(cfg, &mut rng)?;
    let mut next = Vec::new();
    for _ in 0..cfg.n_books {
        let mut topic = rng.below(cfg.n_topics);
        let mut book = Vec::with_capacity(cfg.sentences_per_book);
        for _ in 0..cfg.sentences_per_book {
            book.push(model.sentence(topic, cfg, &mut rng));
            if !rng.bernoulli(cfg.topic_stay) {
                topic = rng.below(cfg.n_topics);
            }
        }
        next.extend(book.windows(2).map(|w| (w[0].clone(), w[1].clone())));
    }
    let prev = next.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
    Ok((TaskDataset::seq2seq("stn", next)?, TaskDataset::seq2seq("stp", prev)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NliConfig {
    pub n: usize,
    pub vocab_size: usize,
    /// Premise length range; entailed hypotheses are proper spans, so
    /// `min_len` must be at least 3.
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for NliConfig {
    fn default() -> Self {
        NliConfig {
            n: 5000,
            vocab_size: 64,
            min_len: 3,
            max_len: 10,
        }
    }
}

/// Antonym of the content word with lexicon index `i`: words pair up as
/// `w{2k}` / `w{2k+1}`. An unpaired last word has none.
pub fn antonym_index(i: usize, lexicon_len: usize) -> Option<usize> {
    let j = i ^ 1;
    (j < lexicon_len).then_some(j)
}

/// Three-way pairs over uniform sentences: entailment is a proper
/// contiguous span of the premise, contradiction swaps one word for its
/// antonym, neutral pairs the premise with an independent sentence.
pub fn gen_nli(seed: u64, cfg: &NliConfig) -> Result<TaskDataset> {
    if cfg.min_len < 3 || cfg.min_len > cfg.max_len {
        return Err(Error::Config(format!(
            "nli length range {}..={} is invalid (min 3)",
            cfg.min_len, cfg.max_len
        )));
    }
    let words = lexicon(cfg.vocab_size);
    if words.len() < 2 {
        return Err(Error::Config("nli vocabulary needs at least one antonym pair".into()));
    }
    let mut rng = Rng::new(seed);
    let k = cfg.n / 3;
    let mut labels: Vec<usize> = [ENTAILMENT, CONTRADICTION]
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, k))
        .chain(std::iter::repeat_n(NEUTRAL, cfg.n - 2 * k))
        .collect();
    rng.shuffle(&mut labels);
    let sample = |rng: &mut Rng| -> Vec<usize> {
        let len = rng.range_inclusive(cfg.min_len, cfg.max_len);
        (0..len).map(|_| rng.below(words.len())).collect()
    };
    let to_words = |ids: &[usize]| -> Sentence { ids.iter().map(|&i| words[i].clone()).collect() };
    let mut out = Vec::with_capacity(cfg.n);
    for label in labels {
        let mut premise = sample(&mut rng);
        let hypothesis = match label {
            ENTAILMENT => {
                let span = rng.range_inclusive(2, premise.len() - 1);
                let start = rng.below(premise.len() - span + 1);
                premise[start..start + span].to_vec()
            }
            CONTRADICTION => {
                let mut candidates: Vec<usize> = (0..premise.len())
                    .filter(|&p| antonym_index(premise[p], words.len()).is_some())
                    .collect();
                while candidates.is_empty() {
                    premise = sample(&mut rng);
                    candidates = (0..premise.len())
                        .filter(|&p| antonym_index(premise[p], words.len()).is_some())
                        .collect();
                }
                let pos = candidates[rng.below(candidates.len())];
                let mut h = premise.clone();
                h[pos] = antonym_index(h[pos], words.len()).expect("filtered above");
                h
            }
            _ => sample(&mut rng),
        };
        out.push(PairExample {
            premise: to_words(&premise),
            hypothesis: to_words(&hypothesis),
            label,
        });
    }
    TaskDataset::pairs("nli", out, 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dataset::Examples;
    use std::collections::{HashMap, HashSet};

    fn s(x: &str) -> Sentence {
        x.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn cipher_maps_and_reverses() {
        let c = Cipher {
            source: vec!["a".into(), "b".into()],
            target: vec!["A".into(), "B".into()],
            reverse: false,
        };
        assert_eq!(c.apply(&s("a b")).unwrap(), s("A B"));
        let r = Cipher { reverse: true, ..c };
        assert_eq!(r.apply(&s("a b")).unwrap(), s("B A"));
    }

    #[test]
    fn cipher_dataset_is_consistent_and_deterministic() {
        let cfg = CipherConfig { n: 200, reverse: true, ..Default::default() };
        let (ds, cipher) = gen_cipher_task(7, "de", &cfg).unwrap();
        let (again, _) = gen_cipher_task(7, "de", &cfg).unwrap();
        assert_eq!(ds, again);
        let Examples::Seq2seq(pairs) = &ds.examples else { panic!() };
        let targets: HashSet<&String> = cipher.target.iter().collect();
        assert_eq!(targets.len(), 60, "bijection");
        for (src, tgt) in pairs {
            assert!((3..=10).contains(&src.len()));
            assert_eq!(&cipher.apply(src).unwrap(), tgt);
            assert!(tgt.iter().all(|t| t.starts_with('f')));
        }
    }

    #[test]
    fn cipher_token_frequencies_are_uniform() {
        let cfg = CipherConfig { n: 100_000, ..Default::default() };
        let (ds, _) = gen_cipher_task(11, "fr", &cfg).unwrap();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut total = 0usize;
        for src in ds.source_sentences() {
            for t in src {
                *counts.entry(t).or_default() += 1;
                total += 1;
            }
        }
        let k = counts.len() as f64;
        assert_eq!(k, 60.0);
        let expected = total as f64 / k;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square with k-1 degrees of freedom: mean k-1, sd sqrt(2(k-1))
        let dof = k - 1.0;
        assert!((chi2 - dof).abs() < 3.0 * (2.0 * dof).sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn books_boundaries_and_swap() {
        let cfg = BooksConfig { n_books: 1, sentences_per_book: 2, ..Default::default() };
        let (stn, stp) = gen_books(3, &cfg).unwrap();
        assert_eq!((stn.len(), stp.len()), (1, 1));

        let cfg = BooksConfig { n_books: 5, sentences_per_book: 4, ..Default::default() };
        let (stn, stp) = gen_books(3, &cfg).unwrap();
        assert_eq!(stn.len(), 15);
        let (Examples::Seq2seq(a), Examples::Seq2seq(b)) = (&stn.examples, &stp.examples) else {
            panic!()
        };
        for (x, y) in a.iter().zip(b) {
            assert_eq!((&x.0, &x.1), (&y.1, &y.0));
        }
        // within a book, the target of pair j is the source of pair j+1
        for book in a.chunks(3) {
            for w in book.windows(2) {
                assert_eq!(w[0].1, w[1].0);
            }
        }
    }

    #[test]
    fn adjacent_sentences_overlap_more_than_random_ones() {
        let cfg = BooksConfig { n_books: 100, sentences_per_book: 11, ..Default::default() };
        let (stn, _) = gen_books(5, &cfg).unwrap();
        let Examples::Seq2seq(pairs) = &stn.examples else { panic!() };
        let overlap = |a: &Sentence, b: &Sentence| {
            let sa: HashSet<&String> = a.iter().collect();
            let sb: HashSet<&String> = b.iter().collect();
            sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64
        };
        let pairs = &pairs[..1000];
        let adjacent: f64 = pairs.iter().map(|(a, b)| overlap(a, b)).sum::<f64>() / 1000.0;
        let mut rng = Rng::new(9);
        let random: f64 = (0..1000)
            .map(|_| overlap(&pairs[rng.below(1000)].0, &pairs[rng.below(1000)].1))
            .sum::<f64>()
            / 1000.0;
        assert!(adjacent > random, "adjacent {adjacent} random {random}");
    }

    #[test]
    fn nli_rules_hold_and_classes_balance() {
        let cfg = NliConfig { n: 1000, ..Default::default() };
        let ds = gen_nli(4, &cfg).unwrap();
        assert_eq!(ds, gen_nli(4, &cfg).unwrap());
        let Examples::Pairs(pairs) = &ds.examples else { panic!() };
        let mut counts = [0usize; 3];
        let words = lexicon(64);
        let idx = |w: &String| words.iter().position(|x| x == w).unwrap();
        for p in pairs {
            counts[p.label] += 1;
            match p.label {
                ENTAILMENT => {
                    assert!(p.hypothesis.len() >= 2 && p.hypothesis.len() < p.premise.len());
                    assert!(p.premise.windows(p.hypothesis.len()).any(|w| w == p.hypothesis.as_slice()));
                }
                CONTRADICTION => {
                    let diffs: Vec<usize> =
                        (0..p.premise.len()).filter(|&i| p.premise[i] != p.hypothesis[i]).collect();
                    assert_eq!(diffs.len(), 1);
                    let i = diffs[0];
                    assert_eq!(idx(&p.hypothesis[i]), idx(&p.premise[i]) ^ 1);
                }
                _ => {}
            }
        }
        assert_eq!(counts, [333, 333, 334]);
    }

    #[test]
    fn antonym_table_is_an_involution() {
        for i in 0..60 {
            let j = antonym_index(i, 60).unwrap();
            assert_ne!(i, j);
            assert_eq!(antonym_index(j, 60), Some(i));
        }
        assert_eq!(antonym_index(60, 61), None);
    }
}
