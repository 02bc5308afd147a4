//! Vocabularies, datasets, batching, file formats and synthetic corpora.

pub mod batch;
pub mod dataset;
pub mod io;
pub mod pcfg;
pub mod synth;
pub mod vocab;

pub use batch::{batchify, EncodedExamples, EncodedTask, TaskBatch};
pub use dataset::{Examples, PairExample, Sentence, TaskDataset, TaskKind};
pub use io::{load_lines, load_parallel_tsv, write_parallel_tsv, LoadedLines, LoadedTsv, Manifest, ManifestTask};
pub use pcfg::{delinearize, gen_pcfg_parsing, Grammar, ParseTree, PcfgConfig, SyntaxMeta};
pub use synth::{gen_books, gen_cipher_task, gen_nli, BooksConfig, Cipher, CipherConfig, NliConfig};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, PAD, UNK};
