//! Dialogue samples, corpora, tokenization, vocabulary and JSONL I/O.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Tokens = Vec<String>;

/// Characters split off as standalone tokens.
const DETACHED: [char; 7] = ['.', ',', '!', '?', ';', ':', '\''];

/// Lowercases `text`, splits on whitespace and detaches punctuation.
///
/// ```
/// assert_eq!(dfilter::corpus::tokenize("Hello, world!"), ["hello", ",", "world", "!"]);
/// ```
pub fn tokenize(text: &str) -> Tokens {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let mut current = String::new();
        for ch in lower.chars() {
            if DETACHED.contains(&ch) {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(ch.to_string());
            } else {
                current.push(ch);
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// One context–response pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub context: Vec<Tokens>,
    pub response: Tokens,
    pub next: Option<Tokens>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: &str| Error::Sample {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.context.is_empty() {
            return Err(fail("empty context"));
        }
        if self.context.iter().any(|u| u.is_empty()) {
            return Err(fail("empty context utterance"));
        }
        if self.response.is_empty() {
            return Err(fail("empty response"));
        }
        if matches!(&self.next, Some(n) if n.is_empty()) {
            return Err(fail("empty next utterance"));
        }
        Ok(())
    }
}

/// Concatenation of all context utterances in order.
pub fn flatten_context(sample: &Sample) -> Tokens {
    sample.context.iter().flatten().cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    role: Role,
    samples: Vec<Sample>,
}

impl Corpus {
    /// Builds a corpus, checking that every sample is well formed and ids are unique.
    pub fn new(role: Role, samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Corpus { role, samples })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    /// Samples whose id is in `keep`, in corpus order.
    pub fn subset(&self, keep: &HashSet<&str>) -> Corpus {
        Corpus {
            role: self.role,
            samples: self
                .samples
                .iter()
                .filter(|s| keep.contains(s.id.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Every token of every context, response and next utterance.
    pub fn all_tokens(&self) -> impl Iterator<Item = &String> {
        self.samples.iter().flat_map(|s| {
            s.context
                .iter()
                .flatten()
                .chain(s.response.iter())
                .chain(s.next.iter().flatten())
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: Option<String>,
    context: Option<Vec<String>>,
    response: Option<String>,
    #[serde(default)]
    next: Option<String>,
}

fn parse_record(line: &str, line_no: usize) -> Result<Sample> {
    let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let id = record.id.ok_or_else(|| Error::Parse {
        line: line_no,
        message: "missing field `id`".into(),
    })?;
    let missing = |field: &str| Error::Sample {
        id: id.clone(),
        message: format!("missing field `{field}`"),
    };
    let context = record.context.ok_or_else(|| missing("context"))?;
    let response = record.response.ok_or_else(|| missing("response"))?;
    let sample = Sample {
        context: context.iter().map(|u| tokenize(u)).collect(),
        response: tokenize(&response),
        next: record.next.as_deref().map(tokenize),
        id,
    };
    sample.validate()?;
    Ok(sample)
}

/// Parses JSONL corpus text. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R, role: Role) -> Result<Corpus> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_record(&line, i + 1)?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::DuplicateId(sample.id));
        }
        samples.push(sample);
    }
    Ok(Corpus { role, samples })
}

pub fn load_corpus(path: impl AsRef<Path>, role: Role) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), role).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn to_record(s: &Sample) -> Record {
    Record {
        id: Some(s.id.clone()),
        context: Some(s.context.iter().map(|u| u.join(" ")).collect()),
        response: Some(s.response.join(" ")),
        next: s.next.as_ref().map(|n| n.join(" ")),
    }
}

pub fn write_corpus_to<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for s in &corpus.samples {
        serde_json::to_writer(&mut out, &to_record(s))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Writes the corpus as JSONL; utterances are stored as space-joined tokens.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus_to(corpus, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const RESERVED: usize = 3;

/// Token/index tables with reserved BOS, EOS and UNK at indices 0, 1, 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(token, count)` pairs, keeping counts
    /// `>= min_count`, ordered by descending count then token.
    pub fn from_counts<'a>(
        counts: impl IntoIterator<Item = (&'a str, u64)>,
        min_count: u64,
    ) -> Self {
        let mut kept: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && ![BOS, EOS, UNK].contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens: Vec<String> = vec![BOS.into(), EOS.into(), UNK.into()];
        let mut counts = vec![0u64; RESERVED];
        for (t, c) in kept {
            tokens.push(t.to_string());
            counts.push(c);
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            index,
            counts,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of `token`, or UNK.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// SHA-256 over the index→token table, hex encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

/// Counts every context, response and next token in `corpus`.
pub fn build_vocab(corpus: &Corpus, min_count: u64) -> Vocabulary {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for t in corpus.all_tokens() {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    Vocabulary::from_counts(counts, min_count.max(1))
}
