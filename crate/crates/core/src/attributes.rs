//! The seven dialogue attributes, their assembly into the standardized
//! attribute vector, and Kendall rank correlation between attributes.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{flatten_context, Corpus, Sample};
use crate::embed::{cosine, sif_vector, unigram_probs, EmbeddingTable, UnigramStats};
use crate::error::{Error, Result};
use crate::seqscore::{normalized_lm_score, percentile_bound, LmBackend, PercentileBound, ScoreTable};

pub const N_ATTRIBUTES: usize = 7;

/// Attribute order inside every attribute and weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Specificity,
    Repetitiveness,
    Relatedness,
    Continuity,
    Coherence,
    Fluency,
    Consistency,
}

impl Attribute {
    pub const ALL: [Attribute; N_ATTRIBUTES] = [
        Attribute::Specificity,
        Attribute::Repetitiveness,
        Attribute::Relatedness,
        Attribute::Continuity,
        Attribute::Coherence,
        Attribute::Fluency,
        Attribute::Consistency,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Attribute::Specificity => "spec",
            Attribute::Repetitiveness => "rept",
            Attribute::Relatedness => "rel",
            Attribute::Continuity => "cont",
            Attribute::Coherence => "coh",
            Attribute::Fluency => "flu",
            Attribute::Consistency => "cons",
        }
    }

    pub fn from_index(i: usize) -> Option<Attribute> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Inverse document frequency over training responses.
#[derive(Debug, Clone)]
pub struct IdfTable {
    idf: HashMap<String, f64>,
    idf_min: f64,
    idf_max: f64,
    responses: usize,
}

impl IdfTable {
    /// `IDF(w) = ln(N_r / N_rw)` where `N_rw` counts responses containing `w`.
    pub fn from_responses<'a>(responses: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut doc_freq: HashMap<&str, usize> = HashMap::new();
        let mut n = 0usize;
        for r in responses {
            n += 1;
            let unique: HashSet<&str> = r.iter().map(String::as_str).collect();
            for w in unique {
                *doc_freq.entry(w).or_default() += 1;
            }
        }
        let idf: HashMap<String, f64> = doc_freq
            .into_iter()
            .map(|(w, df)| (w.to_string(), (n as f64 / df as f64).ln()))
            .collect();
        let idf_min = idf.values().copied().fold(f64::INFINITY, f64::min);
        let idf_max = idf.values().copied().fold(f64::NEG_INFINITY, f64::max);
        IdfTable {
            idf,
            idf_min,
            idf_max,
            responses: n,
        }
    }

    pub fn from_corpus(train: &Corpus) -> Self {
        Self::from_responses(train.samples().iter().map(|s| s.response.as_slice()))
    }

    /// IDF of `w`; words never seen in a response score `idf_max`.
    pub fn idf(&self, w: &str) -> f64 {
        self.idf.get(w).copied().unwrap_or(self.idf_max)
    }

    pub fn idf_min(&self) -> f64 {
        self.idf_min
    }

    pub fn idf_max(&self) -> f64 {
        self.idf_max
    }

    pub fn responses(&self) -> usize {
        self.responses
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.idf_max - self.idf_min).is_finite() || self.idf_max - self.idf_min <= 0.0
    }
}

/// Mean normalized IDF of the response words.
pub fn specificity(response: &[String], idf: &IdfTable) -> Result<f64> {
    if response.is_empty() {
        return Err(Error::InvalidArgument("empty response".into()));
    }
    if idf.is_degenerate() {
        return Err(Error::DegenerateIdf);
    }
    let range = idf.idf_max - idf.idf_min;
    let total: f64 = response
        .iter()
        .map(|w| (idf.idf(w) - idf.idf_min) / range)
        .sum();
    Ok(total / response.len() as f64)
}

/// Fraction of positions whose token already occurred earlier in the response.
pub fn repetitiveness(response: &[String]) -> Result<f64> {
    if response.is_empty() {
        return Err(Error::InvalidArgument("empty response".into()));
    }
    let mut seen = HashSet::with_capacity(response.len());
    let repeats = response.iter().filter(|w| !seen.insert(w.as_str())).count();
    Ok(repeats as f64 / response.len() as f64)
}

fn sif_cosine(
    a: &[String],
    b: &[String],
    table: &EmbeddingTable,
    stats: &UnigramStats,
) -> Result<(f64, bool)> {
    let va = sif_vector(a, table, stats)?;
    let vb = sif_vector(b, table, stats)?;
    Ok((cosine(&va, &vb)?, va.is_zero() || vb.is_zero()))
}

pub fn relatedness(s: &Sample, table: &EmbeddingTable, stats: &UnigramStats) -> Result<f64> {
    sif_cosine(&flatten_context(s), &s.response, table, stats).map(|(c, _)| c)
}

/// Errors when the sample has no next utterance.
pub fn continuity(s: &Sample, table: &EmbeddingTable, stats: &UnigramStats) -> Result<f64> {
    let next = s.next.as_ref().ok_or_else(|| Error::Sample {
        id: s.id.clone(),
        message: "no next utterance for continuity".into(),
    })?;
    sif_cosine(&s.response, next, table, stats).map(|(c, _)| c)
}

pub fn coherence(s: &Sample, lm: &LmBackend, c5: PercentileBound) -> Result<f64> {
    Ok(normalized_lm_score(lm.conditional(s)?, c5))
}

pub fn fluency(s: &Sample, lm: &LmBackend, f5: PercentileBound) -> Result<f64> {
    Ok(normalized_lm_score(lm.unconditional(s)?, f5))
}

/// Where the contradiction probability comes from.
#[derive(Debug, Clone)]
pub enum ConsistencySource {
    Table(ScoreTable),
    /// Every sample scores 1.0.
    Pinned,
}

/// `1 - P(contradiction | c, r)`.
pub fn consistency(s: &Sample, source: &ConsistencySource) -> Result<f64> {
    match source {
        ConsistencySource::Table(t) => Ok(1.0 - t.get(&s.id)?),
        ConsistencySource::Pinned => Ok(1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawAttributes {
    pub spec: f64,
    pub rept: f64,
    pub rel: f64,
    pub cont: f64,
    pub coh: f64,
    pub flu: f64,
    pub cons: f64,
}

impl RawAttributes {
    pub fn to_array(&self) -> [f64; N_ATTRIBUTES] {
        [self.spec, self.rept, self.rel, self.cont, self.coh, self.flu, self.cons]
    }

    pub fn get(&self, a: Attribute) -> f64 {
        self.to_array()[a.index()]
    }
}

/// Standardized attributes of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeVector {
    pub id: String,
    pub values: [f64; N_ATTRIBUTES],
}

/// Per-attribute training mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: [f64; N_ATTRIBUTES],
    pub std: [f64; N_ATTRIBUTES],
}

pub const DEGENERATE_STD: f64 = 1e-12;

impl StandardizationStats {
    pub fn fit(rows: &[RawAttributes]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("standardization over zero samples".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; N_ATTRIBUTES];
        let mut std = [0.0; N_ATTRIBUTES];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r.to_array()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for r in rows {
            for ((s, x), m) in std.iter_mut().zip(r.to_array()).zip(mean) {
                *s += (x - m) * (x - m);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        Ok(StandardizationStats { mean, std })
    }

    pub fn is_degenerate(&self, a: Attribute) -> bool {
        self.std[a.index()] < DEGENERATE_STD
    }

    pub fn apply(&self, raw: &RawAttributes) -> [f64; N_ATTRIBUTES] {
        let mut out = raw.to_array();
        for (i, x) in out.iter_mut().enumerate() {
            *x = if self.std[i] < DEGENERATE_STD {
                0.0
            } else {
                (*x - self.mean[i]) / self.std[i]
            };
        }
        out
    }
}

/// Everything needed to score samples, built from the training split.
#[derive(Debug, Clone)]
pub struct Backends {
    pub idf: IdfTable,
    pub embeddings: EmbeddingTable,
    pub unigram: UnigramStats,
    pub lm: LmBackend,
    pub coherence_bound: PercentileBound,
    pub fluency_bound: PercentileBound,
    pub consistency: ConsistencySource,
    /// Score a missing next utterance as continuity 0 instead of failing.
    pub neutral_next: bool,
}

impl Backends {
    /// Computes IDF, unigram statistics and both percentile bounds over `train`.
    pub fn build(
        train: &Corpus,
        embeddings: EmbeddingTable,
        lm: LmBackend,
        consistency: ConsistencySource,
        neutral_next: bool,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("empty training corpus".into()));
        }
        let mut cond = Vec::with_capacity(train.len());
        let mut uncond = Vec::with_capacity(train.len());
        for s in train.samples() {
            cond.push(lm.conditional(s).map_err(|e| e.for_sample(&s.id))?);
            uncond.push(lm.unconditional(s).map_err(|e| e.for_sample(&s.id))?);
        }
        Ok(Backends {
            idf: IdfTable::from_corpus(train),
            unigram: unigram_probs(train),
            coherence_bound: percentile_bound(&cond, 5)?,
            fluency_bound: percentile_bound(&uncond, 5)?,
            embeddings,
            lm,
            consistency,
            neutral_next,
        })
    }

    /// Raw attributes of one sample plus any flags raised while scoring it.
    pub fn raw_attributes(&self, s: &Sample) -> Result<(RawAttributes, Vec<String>)> {
        let mut flags = Vec::new();
        let (rel, rel_zero) =
            sif_cosine(&flatten_context(s), &s.response, &self.embeddings, &self.unigram)?;
        if rel_zero {
            flags.push("zero_norm_rel".to_string());
        }
        let cont = match &s.next {
            Some(next) => {
                let (c, zero) = sif_cosine(&s.response, next, &self.embeddings, &self.unigram)?;
                if zero {
                    flags.push("zero_norm_cont".to_string());
                }
                c
            }
            None if self.neutral_next => {
                flags.push("neutral_next".to_string());
                0.0
            }
            None => return Err(continuity(s, &self.embeddings, &self.unigram).unwrap_err()),
        };
        if matches!(self.consistency, ConsistencySource::Pinned) {
            flags.push("pinned_cons".to_string());
        }
        let raw = RawAttributes {
            spec: specificity(&s.response, &self.idf)?,
            rept: repetitiveness(&s.response)?,
            rel,
            cont,
            coh: coherence(s, &self.lm, self.coherence_bound)?,
            flu: fluency(s, &self.lm, self.fluency_bound)?,
            cons: consistency(s, &self.consistency)?,
        };
        Ok((raw, flags))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiRow {
    pub raw: RawAttributes,
    pub phi: AttributeVector,
    pub flags: Vec<String>,
}

/// Attribute vectors for a corpus, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable {
    pub rows: Vec<PhiRow>,
    pub stats: StandardizationStats,
}

impl PhiTable {
    pub fn vectors(&self) -> impl Iterator<Item = &AttributeVector> {
        self.rows.iter().map(|r| &r.phi)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Raw values of one attribute across the corpus.
    pub fn raw_column(&self, a: Attribute) -> Vec<f64> {
        self.rows.iter().map(|r| r.raw.get(a)).collect()
    }

    pub fn degenerate(&self) -> Vec<Attribute> {
        Attribute::ALL
            .into_iter()
            .filter(|a| self.stats.is_degenerate(*a))
            .collect()
    }

    /// TSV: id, seven raw columns, seven standardized columns, flags.
    pub fn write_report<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = vec!["id".to_string()];
        header.extend(Attribute::ALL.iter().map(|a| format!("{a}_raw")));
        header.extend(Attribute::ALL.iter().map(|a| format!("{a}_std")));
        header.push("flags".into());
        writeln!(out, "{}", header.join("\t"))?;
        for row in &self.rows {
            write!(out, "{}", row.phi.id)?;
            for x in row.raw.to_array() {
                write!(out, "\t{x}")?;
            }
            for x in row.phi.values {
                write!(out, "\t{x}")?;
            }
            let flags = if row.flags.is_empty() {
                "-".to_string()
            } else {
                row.flags.join(";")
            };
            writeln!(out, "\t{flags}")?;
        }
        out.flush()
    }
}

/// Scores every sample, then standardizes with `stats` or, if absent, with
/// statistics fitted on this corpus. Degenerate attributes become 0 and are
/// flagged on every row.
pub fn compute_phi(
    corpus: &Corpus,
    backends: &Backends,
    stats: Option<&StandardizationStats>,
) -> Result<PhiTable> {
    let mut raws = Vec::with_capacity(corpus.len());
    let mut flags = Vec::with_capacity(corpus.len());
    for s in corpus.samples() {
        let (raw, f) = backends.raw_attributes(s).map_err(|e| e.for_sample(&s.id))?;
        raws.push(raw);
        flags.push(f);
    }
    let stats = match stats {
        Some(s) => *s,
        None => StandardizationStats::fit(&raws)?,
    };
    let degenerate: Vec<String> = Attribute::ALL
        .iter()
        .filter(|a| stats.is_degenerate(**a))
        .map(|a| format!("degenerate_{a}"))
        .collect();
    let rows = corpus
        .samples()
        .iter()
        .zip(raws)
        .zip(flags)
        .map(|((s, raw), mut f)| {
            f.extend(degenerate.iter().cloned());
            PhiRow {
                phi: AttributeVector {
                    id: s.id.clone(),
                    values: stats.apply(&raw),
                },
                raw,
                flags: f,
            }
        })
        .collect();
    Ok(PhiTable { rows, stats })
}

/// Kendall tau-b with tie corrections, by pair enumeration.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("kendall tau needs at least 2 values".into()));
    }
    let n = a.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_a, mut ties_b) = (0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            let da = a[i].partial_cmp(&a[j]).ok_or(Error::UndefinedCorrelation)?;
            let db = b[i].partial_cmp(&b[j]).ok_or(Error::UndefinedCorrelation)?;
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {
                    ties_a += 1;
                    ties_b += 1;
                }
                (Equal, _) => ties_a += 1,
                (_, Equal) => ties_b += 1,
                (x, y) if x == y => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = (((pairs - ties_a) * (pairs - ties_b)) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((concordant - discordant) as f64 / denom)
}
