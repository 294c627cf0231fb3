//! Sequence log-probability backends used by Coherence and Fluency, external
//! score tables, and the 5th-percentile normalization.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{flatten_context, Corpus, Sample, Vocabulary, BOS_ID, EOS_ID};
use crate::error::{Error, Result};

/// Default interpolation weights for trigram, bigram and unigram terms.
pub const DEFAULT_LAMBDAS: [f64; 3] = [0.6, 0.3, 0.1];

/// Interpolated trigram model with an add-one unigram floor.
///
/// Counts are collected over `context ++ BOS ++ response ++ EOS` for every
/// training sample. A history whose count is zero falls back to the next lower
/// order, so every conditional distribution sums to one.
#[derive(Debug, Clone)]
pub struct NgramLm {
    vocab: Vocabulary,
    lambdas: [f64; 3],
    unigram: Vec<u64>,
    total: u64,
    bigram: HashMap<(u32, u32), u64>,
    bigram_hist: HashMap<u32, u64>,
    trigram: HashMap<(u32, u32, u32), u64>,
    trigram_hist: HashMap<(u32, u32), u64>,
}

impl NgramLm {
    pub fn train(train: &Corpus, vocab: &Vocabulary) -> Self {
        Self::train_with_weights(train, vocab, DEFAULT_LAMBDAS)
            .expect("default weights are valid")
    }

    /// Weights must be non-negative and sum to one. A zero unigram weight
    /// removes the floor, so unseen events get probability zero.
    pub fn train_with_weights(train: &Corpus, vocab: &Vocabulary, lambdas: [f64; 3]) -> Result<Self> {
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0))
            || (lambdas.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(format!(
                "interpolation weights {lambdas:?} must be non-negative and sum to 1"
            )));
        }
        let mut lm = NgramLm {
            vocab: vocab.clone(),
            lambdas,
            unigram: vec![0; vocab.len()],
            total: 0,
            bigram: HashMap::new(),
            bigram_hist: HashMap::new(),
            trigram: HashMap::new(),
            trigram_hist: HashMap::new(),
        };
        for s in train.samples() {
            let mut seq = vocab.encode(&flatten_context(s));
            seq.push(BOS_ID);
            seq.extend(vocab.encode(&s.response));
            seq.push(EOS_ID);
            lm.add_sequence(&seq);
        }
        Ok(lm)
    }

    fn add_sequence(&mut self, seq: &[u32]) {
        for (i, &w) in seq.iter().enumerate() {
            self.unigram[w as usize] += 1;
            self.total += 1;
            if i >= 1 {
                let v = seq[i - 1];
                *self.bigram.entry((v, w)).or_default() += 1;
                *self.bigram_hist.entry(v).or_default() += 1;
            }
            if i >= 2 {
                let (u, v) = (seq[i - 2], seq[i - 1]);
                *self.trigram.entry((u, v, w)).or_default() += 1;
                *self.trigram_hist.entry((u, v)).or_default() += 1;
            }
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn lambdas(&self) -> [f64; 3] {
        self.lambdas
    }

    fn p1(&self, w: u32) -> f64 {
        (self.unigram[w as usize] + 1) as f64 / (self.total + self.vocab.len() as u64) as f64
    }

    fn p2(&self, v: u32, w: u32) -> f64 {
        match self.bigram_hist.get(&v) {
            Some(&h) if h > 0 => self.bigram.get(&(v, w)).copied().unwrap_or(0) as f64 / h as f64,
            _ => self.p1(w),
        }
    }

    fn p3(&self, u: u32, v: u32, w: u32) -> f64 {
        match self.trigram_hist.get(&(u, v)) {
            Some(&h) if h > 0 => {
                self.trigram.get(&(u, v, w)).copied().unwrap_or(0) as f64 / h as f64
            }
            _ => self.p2(v, w),
        }
    }

    /// `P(w | u v)` for token ids.
    pub fn prob(&self, u: u32, v: u32, w: u32) -> f64 {
        let [l3, l2, l1] = self.lambdas;
        l3 * self.p3(u, v, w) + l2 * self.p2(v, w) + l1 * self.p1(w)
    }

    /// Mean natural-log probability of `target`, each token conditioned on
    /// `history ++ target[..t]`. Missing history positions are padded with BOS.
    pub fn logprob(&self, target: &[String], history: &[String]) -> Result<f64> {
        if target.is_empty() {
            return Err(Error::InvalidArgument("empty target sequence".into()));
        }
        let mut ctx: Vec<u32> = vec![BOS_ID, BOS_ID];
        ctx.extend(self.vocab.encode(history));
        let mut sum = 0.0;
        for w in self.vocab.encode(target) {
            let n = ctx.len();
            sum += self.prob(ctx[n - 2], ctx[n - 1], w).ln();
            ctx.push(w);
        }
        Ok(sum / target.len() as f64)
    }
}

/// Free-function form of [`NgramLm::logprob`].
pub fn lm_logprob(lm: &NgramLm, target: &[String], history: &[String]) -> Result<f64> {
    lm.logprob(target, history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    LmConditional,
    LmUnconditional,
    NliContra,
}

/// Externally computed per-sample scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    kind: ScoreKind,
    scores: HashMap<String, f64>,
}

impl ScoreTable {
    pub fn new(kind: ScoreKind, rows: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut scores = HashMap::new();
        for (id, value) in rows {
            check_score(kind, &id, value)?;
            if scores.insert(id.clone(), value).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(ScoreTable { kind, scores })
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<f64> {
        self.scores
            .get(id)
            .copied()
            .ok_or_else(|| Error::MissingId(id.to_string()))
    }
}

fn check_score(kind: ScoreKind, id: &str, value: f64) -> Result<()> {
    let bad = |why: &str| Error::Sample {
        id: id.to_string(),
        message: format!("score {value} {why}"),
    };
    if !value.is_finite() {
        return Err(bad("is not finite"));
    }
    match kind {
        ScoreKind::NliContra if !(0.0..=1.0).contains(&value) => Err(bad("outside [0, 1]")),
        ScoreKind::LmConditional | ScoreKind::LmUnconditional if value > 0.0 => {
            Err(bad("is a positive log-probability"))
        }
        _ => Ok(()),
    }
}

/// Reads `sample_id<TAB>score` rows, no header.
pub fn read_score_table<R: BufRead>(reader: R, kind: ScoreKind) -> Result<ScoreTable> {
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, value) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected two tab-separated columns".into(),
        })?;
        let value: f64 = value.trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid score {value:?}"),
        })?;
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        rows.push((id.to_string(), value));
    }
    ScoreTable::new(kind, rows)
}

pub fn load_score_table(path: impl AsRef<Path>, kind: ScoreKind) -> Result<ScoreTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_score_table(BufReader::new(file), kind)
}

/// Lower bound (C5 or F5) used to normalize log-probabilities into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileBound {
    pub value: f64,
    pub count: usize,
}

pub const MIN_PERCENTILE_SAMPLES: usize = 20;

/// Nearest-rank percentile: the `ceil(pct/100 * N)`-th smallest score.
pub fn percentile_bound(scores: &[f64], pct: u32) -> Result<PercentileBound> {
    if scores.len() < MIN_PERCENTILE_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "percentile bound needs at least {MIN_PERCENTILE_SAMPLES} scores, got {}",
            scores.len()
        )));
    }
    if pct > 100 || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("invalid percentile input".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (pct as usize * n).div_ceil(100).max(1);
    let value = sorted[rank - 1];
    if value >= -1e-9 {
        return Err(Error::DegenerateBound(value));
    }
    Ok(PercentileBound { value, count: n })
}

/// `-(max(bound, p) - bound) / bound`.
pub fn normalized_lm_score(p: f64, bound: PercentileBound) -> f64 {
    let c = bound.value;
    -(p.max(c) - c) / c
}

/// Source of P(r|c) and P(r) scores.
#[derive(Debug, Clone)]
pub enum LmBackend {
    Ngram(NgramLm),
    External {
        conditional: ScoreTable,
        unconditional: ScoreTable,
    },
}

impl LmBackend {
    /// Mean log-probability of the response given the flattened context.
    pub fn conditional(&self, s: &Sample) -> Result<f64> {
        match self {
            LmBackend::Ngram(lm) => {
                let mut history = flatten_context(s);
                history.push(crate::corpus::BOS.to_string());
                lm.logprob(&s.response, &history)
            }
            LmBackend::External { conditional, .. } => conditional.get(&s.id),
        }
    }

    /// Mean log-probability of the response with no context.
    pub fn unconditional(&self, s: &Sample) -> Result<f64> {
        match self {
            LmBackend::Ngram(lm) => lm.logprob(&s.response, &[crate::corpus::BOS.to_string()]),
            LmBackend::External { unconditional, .. } => unconditional.get(&s.id),
        }
    }
}
