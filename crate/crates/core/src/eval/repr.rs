use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::dataset::Sentence;
use crate::encoder::PoolingStrategy;
use crate::error::{Error, Result};
use crate::model::{represent_ids, Model};
use crate::numcore::params::ParamSet;
use crate::numcore::Tensor;

/// Frozen sentence representations, one row per sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationMatrix {
    /// `n×d`.
    pub values: Tensor,
    /// Pooling tag, e.g. `last`, `max` or `last+max` after concatenation.
    pub pooling: String,
    pub model_id: String,
    /// Corpus index of each row.
    pub rows: Vec<usize>,
}

impl RepresentationMatrix {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    /// Header line then `n·d` little-endian f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("MTSE-REP v1 n={} d={} pooling={}\n", self.n(), self.d(), self.pooling).into_bytes();
        for v in self.values.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("representation file has no header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::Format("representation header is not UTF-8".into()))?;
        let mut parts = header.split(' ');
        if parts.next() != Some("MTSE-REP") || parts.next() != Some("v1") {
            return Err(Error::Format(format!("unrecognized representation header '{header}'")));
        }
        let (mut n, mut d, mut pooling) = (None, None, None);
        for p in parts {
            match p.split_once('=') {
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                Some(("d", v)) => d = v.parse::<usize>().ok(),
                Some(("pooling", v)) => pooling = Some(v.to_string()),
                _ => return Err(Error::Format(format!("unexpected header field '{p}'"))),
            }
        }
        let (n, d, pooling) = match (n, d, pooling) {
            (Some(n), Some(d), Some(p)) if n > 0 && d > 0 => (n, d, p),
            _ => return Err(Error::Format(format!("incomplete representation header '{header}'"))),
        };
        let body = &bytes[nl + 1..];
        if body.len() != n * d * 8 {
            return Err(Error::Format(format!(
                "expected {} value bytes for n={n} d={d}, found {}",
                n * d * 8,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(RepresentationMatrix {
            values: Tensor::new(vec![n, d], data)?,
            pooling,
            model_id: String::new(),
            rows: (0..n).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// FNV-1a over every parameter's name and bit pattern.
pub fn model_fingerprint(model: &Model) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for (name, t) in model.params.tensors() {
        eat(name.as_bytes());
        for v in t.data() {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    format!("{h:016x}")
}

/// Encodes `sentences` with the frozen encoder, `batch_size` rows at a
/// time. Rows are independent, so the result does not depend on the batch
/// size.
pub fn encode_corpus(
    model: &Model,
    sentences: &[Sentence],
    pooling: PoolingStrategy,
    batch_size: usize,
) -> Result<RepresentationMatrix> {
    if sentences.is_empty() {
        return Err(Error::Input("cannot encode an empty corpus".into()));
    }
    let ids = model.encode_ids(sentences)?;
    let d = model.repr_dim();
    let mut data = Vec::with_capacity(ids.len() * d);
    for chunk in ids.chunks(batch_size.max(1)) {
        data.extend_from_slice(represent_ids(&model.params.encoder, chunk, pooling)?.data());
    }
    Ok(RepresentationMatrix {
        values: Tensor::new(vec![ids.len(), d], data)?,
        pooling: pooling.to_string(),
        model_id: model_fingerprint(model),
        rows: (0..ids.len()).collect(),
    })
}

/// Column-wise concatenation in argument order.
pub fn concat_representations(reps: &[&RepresentationMatrix]) -> Result<RepresentationMatrix> {
    let first = reps.first().ok_or_else(|| Error::Input("nothing to concatenate".into()))?;
    if let Some(bad) = reps.iter().find(|r| r.rows != first.rows) {
        return Err(Error::Input(format!(
            "row mismatch: {} rows vs {} rows or different sentence order",
            first.n(),
            bad.n()
        )));
    }
    let d: usize = reps.iter().map(|r| r.d()).sum();
    let mut data = Vec::with_capacity(first.n() * d);
    for i in 0..first.n() {
        for r in reps {
            data.extend_from_slice(r.row(i));
        }
    }
    let join = |f: &dyn Fn(&RepresentationMatrix) -> &str| reps.iter().map(|r| f(r)).collect::<Vec<_>>().join("+");
    Ok(RepresentationMatrix {
        values: Tensor::new(vec![first.n(), d], data)?,
        pooling: join(&|r| r.pooling.as_str()),
        model_id: join(&|r| r.model_id.as_str()),
        rows: first.rows.clone(),
    })
}
