//! Word embeddings, unigram statistics and SIF sentence vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Smoothing constant of the SIF weight `a / (a + p(w))`.
pub const SIF_A: f64 = 0.001;

/// Norms below this are treated as zero by [`cosine`].
pub const ZERO_NORM: f64 = 1e-12;

/// Token → vector table. Tokens missing from the table embed as the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
        }
        Ok(EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        })
    }

    /// Inserts unless the token is already present. Returns whether it was inserted.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let token = token.into();
        if self.vectors.contains_key(&token) {
            return Ok(false);
        }
        self.vectors.insert(token, vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Entries sorted by token, for deterministic serialization.
    pub fn sorted_entries(&self) -> Vec<(&str, &[f64])> {
        let mut v: Vec<_> = self
            .vectors
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_slice()))
            .collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }
}

/// Reads a text embedding table: `token f1 ... fd` per line, no header.
pub fn read_embeddings<R: BufRead>(reader: R, dim: usize) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(dim)?;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        let vector = values
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: format!("invalid number {v:?}"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        table.insert(token, vector)?;
    }
    Ok(table)
}

pub fn load_embeddings(path: impl AsRef<Path>, dim: usize) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), dim)
}

/// Writes the table in the format read by [`read_embeddings`], sorted by token.
pub fn write_embeddings_to<W: Write>(table: &EmbeddingTable, mut out: W) -> std::io::Result<()> {
    for (token, vector) in table.sorted_entries() {
        write!(out, "{token}")?;
        for x in vector {
            write!(out, " {x}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

pub fn write_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings_to(table, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Maximum-likelihood unigram probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramStats {
    probs: HashMap<String, f64>,
    total: u64,
}

impl UnigramStats {
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a String>) -> Self {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut total = 0u64;
        for t in tokens {
            *counts.entry(t.clone()).or_default() += 1;
            total += 1;
        }
        let probs = counts
            .into_iter()
            .map(|(t, c)| (t, c as f64 / total as f64))
            .collect();
        UnigramStats { probs, total }
    }

    /// Probability of `token`; zero when unseen.
    pub fn prob(&self, token: &str) -> f64 {
        self.probs.get(token).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.probs.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// p(w) over all context, response and next tokens of the training split.
pub fn unigram_probs(train: &Corpus) -> UnigramStats {
    UnigramStats::from_tokens(train.all_tokens())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVector {
    pub values: Vec<f64>,
    pub tokens: usize,
}

impl SentenceVector {
    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn is_zero(&self) -> bool {
        self.norm() < ZERO_NORM
    }
}

/// `v(s) = 1/|s| * sum_w a/(a + p(w)) e(w)` with `a = 0.001`.
pub fn sif_vector(
    tokens: &[String],
    table: &EmbeddingTable,
    stats: &UnigramStats,
) -> Result<SentenceVector> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("SIF vector of an empty sentence".into()));
    }
    let mut values = vec![0.0; table.dim()];
    for t in tokens {
        if let Some(e) = table.get(t) {
            let weight = SIF_A / (SIF_A + stats.prob(t));
            for (acc, x) in values.iter_mut().zip(e) {
                *acc += weight * x;
            }
        }
    }
    let n = tokens.len() as f64;
    values.iter_mut().for_each(|x| *x /= n);
    Ok(SentenceVector {
        values,
        tokens: tokens.len(),
    })
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of raw slices; 0 if either norm is below [`ZERO_NORM`].
pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Ok(0.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine(a: &SentenceVector, b: &SentenceVector) -> Result<f64> {
    cosine_slices(&a.values, &b.values)
}
