//! Plain-text and TSV corpus files and the dataset manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::dataset::{Examples, PairExample, Sentence, TaskDataset, TaskKind};
use crate::corpus::pcfg::SyntaxMeta;
use crate::error::{Error, Result};
use crate::nli_head::NLI_LABELS;

/// Reads a UTF-8 file and normalizes CRLF line endings to LF.
pub fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.into(),
        line: 0,
        msg: format!("invalid UTF-8: {e}"),
    })?;
    Ok(text.replace("\r\n", "\n"))
}

fn tokenize(s: &str) -> Sentence {
    s.split_whitespace().map(String::from).collect()
}

/// Tokenized non-blank lines of a file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadedLines {
    pub sentences: Vec<Sentence>,
    pub blank_lines: usize,
}

pub fn load_lines(path: impl AsRef<Path>) -> Result<LoadedLines> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut out = LoadedLines { sentences: Vec::new(), blank_lines: 0 };
    for line in text.lines() {
        let toks = tokenize(line);
        if toks.is_empty() {
            out.blank_lines += 1;
        } else {
            out.sentences.push(toks);
        }
    }
    if out.blank_lines > 0 {
        log::warn!("{}: skipped {} blank line(s)", path.display(), out.blank_lines);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadedTsv {
    pub dataset: TaskDataset,
    pub blank_lines: usize,
}

/// Loads `source<TAB>target` rows, or `premise<TAB>hypothesis<TAB>label`
/// rows for NLI files. The column count of the first row fixes the kind;
/// the dataset is named after the file stem.
pub fn load_parallel_tsv(path: impl AsRef<Path>) -> Result<LoadedTsv> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into());
    let err = |line: usize, msg: String| Error::Parse { path: path.into(), line, msg };
    let mut pairs = Vec::new();
    let mut nli = Vec::new();
    let mut columns = None;
    let mut blank_lines = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            blank_lines += 1;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let expected = *columns.get_or_insert(fields.len());
        if fields.len() != expected || !(2..=3).contains(&fields.len()) {
            return Err(err(
                lineno,
                format!("expected {} tab-separated fields, found {}", expected.clamp(2, 3), fields.len()),
            ));
        }
        let a = tokenize(fields[0]);
        let b = tokenize(fields[1]);
        if a.is_empty() || b.is_empty() {
            return Err(err(lineno, "empty sentence field".into()));
        }
        if expected == 2 {
            pairs.push((a, b));
        } else {
            let label = NLI_LABELS
                .iter()
                .position(|l| *l == fields[2].trim())
                .ok_or_else(|| err(lineno, format!("unknown label '{}'", fields[2].trim())))?;
            nli.push(PairExample { premise: a, hypothesis: b, label });
        }
    }
    if blank_lines > 0 {
        log::warn!("{}: skipped {} blank line(s)", path.display(), blank_lines);
    }
    let dataset = match columns {
        Some(3) => TaskDataset::pairs(name, nli, NLI_LABELS.len())?,
        _ => TaskDataset::seq2seq(name, pairs)?,
    };
    Ok(LoadedTsv { dataset, blank_lines })
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes a dataset in the format read by [`load_parallel_tsv`].
pub fn write_parallel_tsv(ds: &TaskDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    match &ds.examples {
        Examples::Seq2seq(e) => {
            for (s, t) in e {
                out.push_str(&format!("{}\t{}\n", s.join(" "), t.join(" ")));
            }
        }
        Examples::Pairs(e) => {
            for p in e {
                let label = NLI_LABELS.get(p.label).ok_or_else(|| {
                    Error::Input(format!("label {} has no name in the NLI file format", p.label))
                })?;
                out.push_str(&format!("{}\t{}\t{}\n", p.premise.join(" "), p.hypothesis.join(" "), label));
            }
        }
    }
    create(path)?.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_lines<S: AsRef<[String]>>(sentences: &[S], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.as_ref().join(" "));
        out.push('\n');
    }
    create(path)?.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// One JSON object per line.
pub fn write_meta(meta: &[SyntaxMeta], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for m in meta {
        out.push_str(&serde_json::to_string(m).expect("plain struct serializes"));
        out.push('\n');
    }
    create(path)?.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_meta(path: impl AsRef<Path>) -> Result<Vec<SyntaxMeta>> {
    let path = path.as_ref();
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Index of a generated data directory. Paths are relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub tasks: Vec<ManifestTask>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestTask {
    pub name: String,
    pub kind: TaskKind,
    pub weight: f64,
    pub train: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout: Option<String>,
    /// Syntactic metadata for the held-out split (parsing tasks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<String>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    /// Every file the manifest references, in task order.
    pub fn files(&self) -> Vec<&str> {
        self.tasks
            .iter()
            .flat_map(|t| std::iter::once(t.train.as_str()).chain(t.heldout.as_deref()).chain(t.meta.as_deref()))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self).expect("manifest serializes");
        json.push('\n');
        create(path)?.write_all(json.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Resolves a manifest-relative path.
    pub fn resolve(manifest_path: &Path, file: &str) -> PathBuf {
        manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    fn toks(s: &str) -> Sentence {
        tokenize(s)
    }

    #[test]
    fn tsv_pair_and_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "fr.tsv", b"a b\tc d\n\ne\tf\n");
        let loaded = load_parallel_tsv(&p).unwrap();
        assert_eq!(loaded.blank_lines, 1);
        assert_eq!(loaded.dataset.name, "fr");
        let Examples::Seq2seq(e) = &loaded.dataset.examples else { panic!() };
        assert_eq!(e[0], (toks("a b"), toks("c d")));
        assert_eq!(e.len(), 2);
    }

    #[test]
    fn crlf_is_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let lf = write(dir.path(), "lf.tsv", b"a b\tc d\ne\tf\n");
        let crlf = write(dir.path(), "crlf.tsv", b"a b\tc d\r\ne\tf\r\n");
        let a = load_parallel_tsv(&lf).unwrap().dataset;
        let b = load_parallel_tsv(&crlf).unwrap().dataset;
        assert_eq!(a.examples, b.examples);
        let lines = load_lines(write(dir.path(), "l.txt", b"x y\r\n\r\nz\r\n")).unwrap();
        assert_eq!(lines.sentences, vec![toks("x y"), toks("z")]);
        assert_eq!(lines.blank_lines, 1);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.tsv", b"a\tb\nc d\n");
        match load_parallel_tsv(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "nli.tsv", b"a b\tb\tentailment\na\tc\tmaybe\n");
        match load_parallel_tsv(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "bin.txt", &[0xff, 0xfe, b'\n']);
        assert!(matches!(load_lines(&p), Err(Error::Parse { .. })));
        assert!(matches!(load_lines(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn nli_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = TaskDataset::pairs(
            "nli",
            vec![
                PairExample { premise: toks("a b c"), hypothesis: toks("b c"), label: 0 },
                PairExample { premise: toks("a b"), hypothesis: toks("x"), label: 2 },
            ],
            3,
        )
        .unwrap();
        let p = dir.path().join("nli.tsv");
        write_parallel_tsv(&ds, &p).unwrap();
        assert_eq!(load_parallel_tsv(&p).unwrap().dataset, ds);
    }

    #[test]
    fn manifest_round_trip_and_strictness() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            seed: 3,
            tasks: vec![ManifestTask {
                name: "parse".into(),
                kind: TaskKind::Seq2seq,
                weight: 1.0,
                train: "parse.train.tsv".into(),
                heldout: Some("parse.heldout.tsv".into()),
                meta: Some("parse.heldout.meta.jsonl".into()),
            }],
        };
        let p = dir.path().join(Manifest::FILE_NAME);
        m.save(&p).unwrap();
        assert_eq!(Manifest::load(&p).unwrap(), m);
        assert_eq!(m.files().len(), 3);
        fs::write(&p, br#"{"seed":1,"tasks":[],"extra":0}"#).unwrap();
        assert!(Manifest::load(&p).is_err());
    }
}
