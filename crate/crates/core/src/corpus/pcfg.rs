//! Probabilistic context-free grammars, linearized parse trees and the
//! parsing corpus with syntactic metadata for probes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::dataset::{Sentence, TaskDataset};
use crate::error::{Error, Result};
use crate::numcore::Rng;

pub const OPEN: &str = "(";
pub const CLOSE: &str = ")";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symbol {
    /// A literal word.
    Word(String),
    /// A word drawn uniformly from a lexical class; appears as a bare leaf.
    Class(usize),
    /// A nonterminal that becomes a bracketed node.
    Nt(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    Passive,
    Past,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub lhs: String,
    pub rhs: Vec<Symbol>,
    pub weight: f64,
    #[serde(default)]
    pub markers: Vec<Marker>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GrammarSpec", into = "GrammarSpec")]
pub struct Grammar {
    start: String,
    rules: Vec<Rule>,
    classes: Vec<Vec<String>>,
    by_lhs: HashMap<String, Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarSpec {
    start: String,
    rules: Vec<Rule>,
    classes: Vec<Vec<String>>,
}

impl TryFrom<GrammarSpec> for Grammar {
    type Error = Error;
    fn try_from(g: GrammarSpec) -> Result<Self> {
        Grammar::new(g.start, g.rules, g.classes)
    }
}

impl From<Grammar> for GrammarSpec {
    fn from(g: Grammar) -> Self {
        GrammarSpec { start: g.start, rules: g.rules, classes: g.classes }
    }
}

fn rule(lhs: &str, rhs: &[Symbol], weight: f64, markers: &[Marker]) -> Rule {
    Rule {
        lhs: lhs.into(),
        rhs: rhs.to_vec(),
        weight,
        markers: markers.to_vec(),
    }
}

impl Grammar {
    pub fn new(start: String, rules: Vec<Rule>, classes: Vec<Vec<String>>) -> Result<Self> {
        let mut by_lhs: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in rules.iter().enumerate() {
            if !(r.weight > 0.0 && r.weight.is_finite()) {
                return Err(Error::Config(format!("rule {i} ({}) needs a positive weight", r.lhs)));
            }
            if r.rhs.is_empty() {
                return Err(Error::Config(format!("rule {i} ({}) has an empty right side", r.lhs)));
            }
            by_lhs.entry(r.lhs.clone()).or_default().push(i);
        }
        for (i, r) in rules.iter().enumerate() {
            for s in &r.rhs {
                match s {
                    Symbol::Nt(nt) if !by_lhs.contains_key(nt) => {
                        return Err(Error::Config(format!("rule {i} uses {nt}, which has no rules")))
                    }
                    Symbol::Class(c) if classes.get(*c).is_none_or(Vec::is_empty) => {
                        return Err(Error::Config(format!("rule {i} uses missing or empty class {c}")))
                    }
                    Symbol::Word(w) | Symbol::Nt(w) if w == OPEN || w == CLOSE => {
                        return Err(Error::Config("brackets are reserved".into()))
                    }
                    _ => {}
                }
            }
        }
        if !by_lhs.contains_key(&start) {
            return Err(Error::Config(format!("start symbol {start} has no rules")));
        }
        Ok(Grammar { start, rules, classes, by_lhs })
    }

    /// A small English-like grammar with active/passive voice, past/present
    /// tense and five top-level sentence shapes.
    pub fn toy_english() -> Self {
        use Symbol::{Class as C, Nt, Word as W};
        let nt = |s: &str| Nt(s.into());
        let w = |s: &str| W(s.into());
        let classes: Vec<Vec<String>> = [
            &["the", "a", "every", "some"][..],
            &["dog", "cat", "bird", "man", "woman", "child", "teacher", "farmer"],
            &["big", "small", "old", "young", "red"],
            &["chased", "saw", "helped", "found", "liked"],
            &["chases", "sees", "helps", "finds", "likes"],
            &["chased", "seen", "helped", "found", "liked"],
            &["slept", "laughed", "ran"],
            &["sleeps", "laughs", "runs"],
            &["in", "near", "under", "with"],
            &["today", "quickly", "often"],
        ]
        .iter()
        .map(|c| c.iter().map(|s| s.to_string()).collect())
        .collect();
        let (det, n, adj, tv_past, tv_pres, part, iv_past, iv_pres, p, adv) =
            (C(0), C(1), C(2), C(3), C(4), C(5), C(6), C(7), C(8), C(9));
        use Marker::{Passive, Past};
        let rules = vec![
            rule("S", &[nt("NP"), nt("VP")], 3.0, &[]),
            rule("S", &[nt("NP"), nt("VP"), nt("PP")], 2.0, &[]),
            rule("S", &[nt("PP"), nt("NP"), nt("VP")], 1.0, &[]),
            rule("S", &[nt("ADVP"), nt("NP"), nt("VP")], 1.0, &[]),
            rule("S", &[nt("NP"), nt("VP"), nt("ADVP")], 1.0, &[]),
            rule("NP", &[det.clone(), n.clone()], 3.0, &[]),
            rule("NP", &[det, adj, n], 1.5, &[]),
            rule("NP", &[nt("NP"), nt("PP")], 0.5, &[]),
            rule("PP", &[p, nt("NP")], 1.0, &[]),
            rule("ADVP", &[adv], 1.0, &[]),
            rule("VP", &[tv_pres, nt("NP")], 2.0, &[]),
            rule("VP", &[tv_past, nt("NP")], 2.0, &[Past]),
            rule("VP", &[iv_pres], 1.0, &[]),
            rule("VP", &[iv_past], 1.0, &[Past]),
            rule("VP", &[w("is"), part.clone(), w("by"), nt("NP")], 1.5, &[Passive]),
            rule("VP", &[w("was"), part, w("by"), nt("NP")], 1.5, &[Passive, Past]),
        ];
        Grammar::new("S".into(), rules, classes).expect("built-in grammar is valid")
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Number of top-level sentence shapes (rules for the start symbol).
    pub fn tss_classes(&self) -> usize {
        self.by_lhs[&self.start].len()
    }

    fn pick(&self, lhs: &str, rng: &mut Rng) -> usize {
        let ids = &self.by_lhs[lhs];
        let weights: Vec<f64> = ids.iter().map(|&i| self.rules[i].weight).collect();
        ids[rng.categorical(&weights)]
    }

    /// One derivation, or `None` when it exceeds `max_depth`.
    fn derive(&self, rng: &mut Rng, max_depth: usize) -> Option<(ParseTree, Derivation)> {
        let top = self.pick(&self.start, rng);
        let tss = self.by_lhs[&self.start].iter().position(|&i| i == top).expect("start rule");
        let mut d = Derivation { passive: false, past: false, tss };
        let tree = self.expand(top, 1, max_depth, rng, &mut d)?;
        Some((tree, d))
    }

    fn expand(&self, rule_id: usize, depth: usize, max_depth: usize, rng: &mut Rng, d: &mut Derivation) -> Option<ParseTree> {
        if depth > max_depth {
            return None;
        }
        let r = &self.rules[rule_id];
        for m in &r.markers {
            match m {
                Marker::Passive => d.passive = true,
                Marker::Past => d.past = true,
            }
        }
        let mut children = Vec::with_capacity(r.rhs.len());
        for s in &r.rhs {
            children.push(match s {
                Symbol::Word(w) => ParseTree::Leaf(w.clone()),
                Symbol::Class(c) => {
                    let words = &self.classes[*c];
                    ParseTree::Leaf(words[rng.below(words.len())].clone())
                }
                Symbol::Nt(nt) => {
                    let next = self.pick(nt, rng);
                    self.expand(next, depth + 1, max_depth, rng, d)?
                }
            });
        }
        Some(ParseTree::Node { label: r.lhs.clone(), children })
    }
}

struct Derivation {
    passive: bool,
    past: bool,
    tss: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseTree {
    Leaf(String),
    Node { label: String, children: Vec<ParseTree> },
}

impl ParseTree {
    /// Bracketed token sequence, e.g. `( S ( NP the dog ) ( VP barked ) )`.
    pub fn linearize(&self) -> Sentence {
        let mut out = Vec::new();
        self.linearize_into(&mut out);
        out
    }

    fn linearize_into(&self, out: &mut Sentence) {
        match self {
            ParseTree::Leaf(w) => out.push(w.clone()),
            ParseTree::Node { label, children } => {
                out.push(OPEN.into());
                out.push(label.clone());
                for c in children {
                    c.linearize_into(out);
                }
                out.push(CLOSE.into());
            }
        }
    }

    /// Leaf words left to right.
    pub fn yield_words(&self) -> Sentence {
        match self {
            ParseTree::Leaf(w) => vec![w.clone()],
            ParseTree::Node { children, .. } => children.iter().flat_map(|c| c.yield_words()).collect(),
        }
    }
}

/// Parses a linearized tree. The whole sequence must be exactly one
/// bracketed node; every node needs a label and at least one child.
pub fn delinearize<S: AsRef<str>>(tokens: &[S]) -> Result<ParseTree> {
    let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let mut pos = 0;
    let tree = parse_node(&toks, &mut pos)?;
    if pos != toks.len() {
        return Err(Error::Input(format!("trailing tokens after position {pos}")));
    }
    Ok(tree)
}

fn parse_node(toks: &[&str], pos: &mut usize) -> Result<ParseTree> {
    let bad = |msg: &str, at: usize| Error::Input(format!("malformed parse at token {at}: {msg}"));
    if toks.get(*pos) != Some(&OPEN) {
        return Err(bad("expected '('", *pos));
    }
    *pos += 1;
    let label = match toks.get(*pos) {
        Some(&t) if t != OPEN && t != CLOSE => t.to_string(),
        _ => return Err(bad("expected a label", *pos)),
    };
    *pos += 1;
    let mut children = Vec::new();
    loop {
        match toks.get(*pos) {
            None => return Err(bad("unclosed bracket", *pos)),
            Some(&CLOSE) => {
                *pos += 1;
                break;
            }
            Some(&OPEN) => children.push(parse_node(toks, pos)?),
            Some(&w) => {
                children.push(ParseTree::Leaf(w.to_string()));
                *pos += 1;
            }
        }
    }
    if children.is_empty() {
        return Err(bad("empty node", *pos));
    }
    Ok(ParseTree::Node { label, children })
}

/// Per-sentence labels for the syntactic probes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxMeta {
    pub length: usize,
    pub passive: bool,
    pub past: bool,
    /// Index of the top-level rule among the start symbol's rules.
    pub tss: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcfgConfig {
    pub n: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub max_depth: usize,
    /// Attempts per sentence before giving up.
    pub max_attempts: usize,
}

impl Default for PcfgConfig {
    fn default() -> Self {
        PcfgConfig {
            n: 5000,
            min_len: 3,
            max_len: 12,
            max_depth: 6,
            max_attempts: 10_000,
        }
    }
}

/// Sentences paired with their linearized parses. Derivations that are too
/// deep or fall outside the length range are redrawn.
pub fn gen_pcfg_parsing(seed: u64, grammar: &Grammar, cfg: &PcfgConfig) -> Result<TaskDataset> {
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::Config(format!("length range {}..={} is invalid", cfg.min_len, cfg.max_len)));
    }
    let mut rng = Rng::new(seed);
    let mut pairs = Vec::with_capacity(cfg.n);
    let mut meta = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let mut found = None;
        for _ in 0..cfg.max_attempts {
            if let Some((tree, d)) = grammar.derive(&mut rng, cfg.max_depth) {
                let words = tree.yield_words();
                if (cfg.min_len..=cfg.max_len).contains(&words.len()) {
                    found = Some((tree, words, d));
                    break;
                }
            }
        }
        let (tree, words, d) = found.ok_or_else(|| {
            Error::Config(format!("no derivation within bounds after {} attempts", cfg.max_attempts))
        })?;
        meta.push(SyntaxMeta { length: words.len(), passive: d.passive, past: d.past, tss: d.tss });
        pairs.push((words, tree.linearize()));
    }
    let mut ds = TaskDataset::seq2seq("parse", pairs)?;
    ds.meta = Some(meta);
    Ok(ds)
}
