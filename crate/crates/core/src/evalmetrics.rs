//! Generation metrics (BLEU, distinct/intra n-grams, n-gram entropy, word
//! embedding similarities, SIF coherence) and the two weight-search objectives.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{flatten_context, Corpus, Tokens, Vocabulary};
use crate::embed::{cosine_slices, sif_vector, EmbeddingTable, UnigramStats};
use crate::error::{Error, Result};
use crate::ncm::{perplexity, EncodedSample, ModelParams};

/// Default greedy decoding length.
pub const MAX_DECODE_LEN: usize = 20;

fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = &[String]> {
    tokens.windows(n.max(1)).filter(move |_| n > 0)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in ngrams(tokens, n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Corpus BLEU-4: clipped n-gram precisions pooled over all pairs, the
/// unigram precision unsmoothed and orders 2–4 add-one smoothed, geometric
/// mean, brevity penalty.
pub fn bleu(candidates: &[Tokens], references: &[Tokens]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Dimension {
            expected: references.len(),
            got: candidates.len(),
        });
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("BLEU of an empty corpus".into()));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=4 {
            let ref_counts = ngram_counts(r, n);
            for (g, count) in ngram_counts(c, n) {
                matches[n - 1] += count.min(ref_counts.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..4 {
        log_sum += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * (log_sum / 4.0).exp())
}

fn check_order(n: usize, responses: &[Tokens]) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-gram order must be >= 1".into()));
    }
    if responses.is_empty() {
        return Err(Error::InvalidArgument("no responses".into()));
    }
    if responses.iter().all(|r| r.len() < n) {
        return Err(Error::NoNgrams(n));
    }
    Ok(())
}

/// Distinct n-grams over total n-grams, pooled over all responses.
pub fn dist_n(responses: &[Tokens], n: usize) -> Result<f64> {
    check_order(n, responses)?;
    let mut distinct: HashMap<&[String], ()> = HashMap::new();
    let mut total = 0usize;
    for r in responses {
        for g in ngrams(r, n) {
            distinct.insert(g, ());
            total += 1;
        }
    }
    Ok(distinct.len() as f64 / total as f64)
}

/// Per-response distinct ratio, averaged over responses with at least one n-gram.
pub fn intra_n(responses: &[Tokens], n: usize) -> Result<f64> {
    check_order(n, responses)?;
    let ratios: Vec<f64> = responses
        .iter()
        .filter(|r| r.len() >= n)
        .map(|r| {
            let counts = ngram_counts(r, n);
            counts.len() as f64 / (r.len() - n + 1) as f64
        })
        .collect();
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Natural-log entropy of the pooled n-gram distribution.
pub fn ent_n(responses: &[Tokens], n: usize) -> Result<f64> {
    check_order(n, responses)?;
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    for r in responses {
        for g in ngrams(r, n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    let total: usize = counts.values().sum();
    let mut sorted: Vec<usize> = counts.into_values().collect();
    sorted.sort_unstable();
    Ok(sorted.iter().fold(0.0, |acc, &c| {
        let p = c as f64 / total as f64;
        acc - p * p.ln()
    }))
}

fn in_table<'a>(tokens: &'a [String], table: &'a EmbeddingTable) -> Vec<&'a [f64]> {
    tokens.iter().filter_map(|t| table.get(t)).collect()
}

fn mean_vector(vectors: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for v in vectors {
        out.iter_mut().zip(v.iter()).for_each(|(a, x)| *a += x);
    }
    if !vectors.is_empty() {
        out.iter_mut().for_each(|x| *x /= vectors.len() as f64);
    }
    out
}

/// Cosine of mean word vectors. Out-of-table words are skipped.
pub fn emb_average(candidate: &[String], reference: &[String], table: &EmbeddingTable) -> Result<f64> {
    let d = table.dim();
    cosine_slices(
        &mean_vector(&in_table(candidate, table), d),
        &mean_vector(&in_table(reference, table), d),
    )
}

fn greedy_direction(from: &[&[f64]], to: &[&[f64]]) -> Result<f64> {
    let mut total = 0.0;
    for a in from {
        let mut best = f64::NEG_INFINITY;
        for b in to {
            best = best.max(cosine_slices(a, b)?);
        }
        total += best;
    }
    Ok(total / from.len() as f64)
}

/// Mean of the two directed greedy-matching scores; 0 if either side has no
/// in-table words.
pub fn emb_greedy(candidate: &[String], reference: &[String], table: &EmbeddingTable) -> Result<f64> {
    let (c, r) = (in_table(candidate, table), in_table(reference, table));
    if c.is_empty() || r.is_empty() {
        return Ok(0.0);
    }
    Ok((greedy_direction(&c, &r)? + greedy_direction(&r, &c)?) / 2.0)
}

fn extrema_vector(vectors: &[&[f64]], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            let max = vectors.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
            let min = vectors.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
            if vectors.is_empty() {
                0.0
            } else if max > min.abs() {
                max
            } else {
                min
            }
        })
        .collect()
}

/// Cosine of per-dimension extreme values (largest magnitude, sign kept).
pub fn emb_extrema(candidate: &[String], reference: &[String], table: &EmbeddingTable) -> Result<f64> {
    let d = table.dim();
    cosine_slices(
        &extrema_vector(&in_table(candidate, table), d),
        &extrema_vector(&in_table(reference, table), d),
    )
}

/// SIF cosine between a context and a generated response.
pub fn coherence_metric(
    context: &[String],
    generated: &[String],
    table: &EmbeddingTable,
    stats: &UnigramStats,
) -> Result<f64> {
    let c = sif_vector(context, table, stats)?;
    let g = sif_vector(generated, table, stats)?;
    cosine_slices(&c.values, &g.values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub dist: [f64; 3],
    pub intra: [f64; 3],
    pub ent: [f64; 2],
    pub average: f64,
    pub greedy: f64,
    pub extrema: f64,
    pub coherence: f64,
    /// Number of evaluated (generated, reference) pairs.
    pub pairs: usize,
    /// Generated responses that were empty (immediate EOS).
    pub empty_responses: usize,
}

impl MetricReport {
    pub const NAMES: [&'static str; 13] = [
        "bleu", "dist1", "dist2", "dist3", "intra1", "intra2", "intra3", "ent1", "ent2", "average",
        "greedy", "extrema", "coherence",
    ];

    pub fn values(&self) -> [f64; 13] {
        [
            self.bleu,
            self.dist[0],
            self.dist[1],
            self.dist[2],
            self.intra[0],
            self.intra[1],
            self.intra[2],
            self.ent[0],
            self.ent[1],
            self.average,
            self.greedy,
            self.extrema,
            self.coherence,
        ]
    }

    /// Plain sum of the 13 metric values.
    pub fn sum(&self) -> f64 {
        self.values().iter().sum()
    }

    /// Computes every metric over aligned contexts, generated responses and
    /// references. N-gram metrics with no n-gram of the order score 0; an
    /// empty generated response scores 0 on the per-pair metrics.
    pub fn compute(
        contexts: &[Tokens],
        generated: &[Tokens],
        references: &[Tokens],
        table: &EmbeddingTable,
        stats: &UnigramStats,
    ) -> Result<Self> {
        if contexts.len() != generated.len() {
            return Err(Error::Dimension {
                expected: contexts.len(),
                got: generated.len(),
            });
        }
        let zero_if_none = |r: Result<f64>| match r {
            Err(Error::NoNgrams(_)) => Ok(0.0),
            other => other,
        };
        let pairs = generated.len();
        let mut per_pair = [0.0f64; 4];
        let mut empty = 0;
        for ((c, g), r) in contexts.iter().zip(generated).zip(references) {
            if g.is_empty() {
                empty += 1;
                continue;
            }
            per_pair[0] += emb_average(g, r, table)?;
            per_pair[1] += emb_greedy(g, r, table)?;
            per_pair[2] += emb_extrema(g, r, table)?;
            per_pair[3] += coherence_metric(c, g, table, stats)?;
        }
        let mean = |x: f64| if pairs == 0 { 0.0 } else { x / pairs as f64 };
        Ok(MetricReport {
            bleu: bleu(generated, references)?,
            dist: [
                zero_if_none(dist_n(generated, 1))?,
                zero_if_none(dist_n(generated, 2))?,
                zero_if_none(dist_n(generated, 3))?,
            ],
            intra: [
                zero_if_none(intra_n(generated, 1))?,
                zero_if_none(intra_n(generated, 2))?,
                zero_if_none(intra_n(generated, 3))?,
            ],
            ent: [zero_if_none(ent_n(generated, 1))?, zero_if_none(ent_n(generated, 2))?],
            average: mean(per_pair[0]),
            greedy: mean(per_pair[1]),
            extrema: mean(per_pair[2]),
            coherence: mean(per_pair[3]),
            pairs,
            empty_responses: empty,
        })
    }

    /// TSV with one `metric<TAB>value` row per metric, then optional
    /// perplexity and objective rows.
    pub fn write_tsv<W: Write>(
        &self,
        mut out: W,
        perplexity: Option<f64>,
        objective: Option<(ObjectiveKind, f64)>,
    ) -> std::io::Result<()> {
        writeln!(out, "# bleu=corpus-bleu4 smoothing=add-one-n>=2 ent_log=natural pairs={} empty={}", self.pairs, self.empty_responses)?;
        writeln!(out, "metric\tvalue")?;
        for (name, v) in Self::NAMES.iter().zip(self.values()) {
            writeln!(out, "{name}\t{v}")?;
        }
        if let Some(p) = perplexity {
            writeln!(out, "ppl\t{p}")?;
        }
        if let Some((kind, j)) = objective {
            writeln!(out, "J[{kind}]\t{j}")?;
        }
        out.flush()
    }
}

/// Objective minimized by the weight search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Validation perplexity.
    PlusPpl,
    /// Negated sum of the 13 generation metrics.
    NegMetricSum,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::PlusPpl => "plus_ppl",
            ObjectiveKind::NegMetricSum => "neg_metric_sum",
        })
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus_ppl" | "+ppl" | "ppl" => Ok(ObjectiveKind::PlusPpl),
            "neg_metric_sum" | "-metric" | "metric" => Ok(ObjectiveKind::NegMetricSum),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

/// Validation split plus the resources needed to score generations on it.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub corpus: Corpus,
    pub encoded: Vec<EncodedSample>,
    pub contexts: Vec<Tokens>,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub unigram: UnigramStats,
    pub max_len: usize,
}

impl EvalSet {
    pub fn new(
        corpus: Corpus,
        vocab: Vocabulary,
        embeddings: EmbeddingTable,
        unigram: UnigramStats,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("empty validation corpus".into()));
        }
        let encoded = corpus.samples().iter().map(|s| EncodedSample::new(s, &vocab)).collect();
        let contexts = corpus.samples().iter().map(flatten_context).collect();
        Ok(EvalSet {
            corpus,
            encoded,
            contexts,
            vocab,
            embeddings,
            unigram,
            max_len: MAX_DECODE_LEN,
        })
    }

    /// Greedy generations for every validation context.
    pub fn generate(&self, theta: &ModelParams) -> Vec<Tokens> {
        self.encoded
            .iter()
            .map(|s| {
                theta
                    .greedy_decode(&s.context, self.max_len)
                    .into_iter()
                    .map(|t| self.vocab.token(t).to_string())
                    .collect()
            })
            .collect()
    }

    pub fn report(&self, theta: &ModelParams) -> Result<MetricReport> {
        let generated = self.generate(theta);
        let references: Vec<Tokens> = self.corpus.samples().iter().map(|s| s.response.clone()).collect();
        MetricReport::compute(&self.contexts, &generated, &references, &self.embeddings, &self.unigram)
    }

    pub fn perplexity(&self, theta: &ModelParams) -> Result<f64> {
        perplexity(theta, &self.encoded)
    }
}

/// `J` for the given model: validation perplexity, or the negated metric sum
/// over greedy generations.
pub fn evaluate_objective(kind: ObjectiveKind, theta: &ModelParams, validation: &EvalSet) -> Result<f64> {
    match kind {
        ObjectiveKind::PlusPpl => validation.perplexity(theta),
        ObjectiveKind::NegMetricSum => Ok(-validation.report(theta)?.sum()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Tokens {
        s.split_whitespace().map(String::from).collect()
    }

    fn table2() -> EmbeddingTable {
        let mut table = EmbeddingTable::new(2).unwrap();
        table.insert("e1", vec![1.0, 0.0]).unwrap();
        table.insert("e2", vec![0.0, 1.0]).unwrap();
        table
    }

    #[test]
    fn bleu_hand_oracle() {
        let got = bleu(&[t("a b c d")], &[t("a b c e")]).unwrap();
        let p = [3.0 / 4.0, (2.0 + 1.0) / (3.0 + 1.0), (1.0 + 1.0) / (2.0 + 1.0), (0.0 + 1.0) / (1.0 + 1.0)];
        let expected = (p.iter().map(|x: &f64| x.ln()).sum::<f64>() / 4.0).exp();
        assert!((got - expected).abs() < 1e-9);
        assert!((expected - (0.75f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25)).abs() < 1e-12);
    }

    #[test]
    fn bleu_identity_zero_and_mismatch() {
        let refs = [t("the cat sat on the mat"), t("hello there friend ok")];
        assert!((bleu(&refs, &refs).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bleu(&[t("x y z w")], &[t("a b c d")]).unwrap(), 0.0);
        assert!(bleu(&[t("a")], &[]).is_err());
    }

    #[test]
    fn bleu_brevity_penalty_and_clipping() {
        // "the the the" vs "the cat": unigram matches clip to 1.
        let b = bleu(&[t("the the the")], &[t("the cat")]).unwrap();
        let p = [1.0f64 / 3.0, 1.0 / 3.0, 1.0 / 2.0, 1.0];
        assert!((b - (p.iter().map(|x| x.ln()).sum::<f64>() / 4.0).exp()).abs() < 1e-12);
        // Shorter candidate is penalized.
        let short = bleu(&[t("a b")], &[t("a b c d")]).unwrap();
        let p = [1.0f64, 2.0 / 2.0, 1.0, 1.0];
        let expected = (1.0f64 - 2.0).exp() * (p.iter().map(|x| x.ln()).sum::<f64>() / 4.0).exp();
        assert!((short - expected).abs() < 1e-12);
    }

    #[test]
    fn distinct_intra_entropy_hand_counts() {
        assert_eq!(dist_n(&[t("a b"), t("a b")], 1).unwrap(), 0.5);
        let same = vec![t("x"); 7];
        assert!((dist_n(&same, 1).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(dist_n(&[t("a b c"), t("d e")], 2).unwrap(), 1.0);
        assert!((intra_n(&[t("x x x"), t("a b")], 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(intra_n(&[t("a a b")], 1).unwrap(), 2.0 / 3.0);
        // A response too short for the order is skipped.
        assert_eq!(intra_n(&[t("a"), t("b c")], 2).unwrap(), 1.0);
        assert!(matches!(dist_n(&[t("a"), t("b")], 2), Err(Error::NoNgrams(2))));

        assert_eq!(ent_n(&[t("a a a")], 1).unwrap(), 0.0);
        assert!((ent_n(&[t("a b")], 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        let e = ent_n(&[t("a a"), t("b c")], 1).unwrap();
        assert!((e - (4f64.ln() - 0.5 * 2f64.ln())).abs() < 1e-12);
        assert!((e - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn embedding_metrics_hand_vectors() {
        let table = table2();
        let (c, r) = (t("e1 e2"), t("e1"));
        let h = 1.0 / 2f64.sqrt();
        assert!((emb_average(&c, &r, &table).unwrap() - h).abs() < 1e-12);
        assert!((emb_greedy(&c, &r, &table).unwrap() - 0.75).abs() < 1e-12);
        assert!((emb_extrema(&c, &r, &table).unwrap() - h).abs() < 1e-12);

        for f in [emb_average, emb_greedy, emb_extrema] {
            assert!((f(&c, &c, &table).unwrap() - 1.0).abs() < 1e-12);
            assert_eq!(f(&t("e1"), &t("e2"), &table).unwrap(), 0.0);
            assert_eq!(f(&t("zzz"), &t("e2"), &table).unwrap(), 0.0);
        }
    }

    #[test]
    fn extrema_keeps_sign_of_largest_magnitude() {
        let mut table = EmbeddingTable::new(2).unwrap();
        table.insert("p", vec![0.5, 0.1]).unwrap();
        table.insert("n", vec![-0.9, 0.2]).unwrap();
        let v = extrema_vector(&in_table(&t("p n"), &table), 2);
        assert_eq!(v, vec![-0.9, 0.2]);
    }

    #[test]
    fn coherence_metric_rules() {
        let table = table2();
        let stats = UnigramStats::from_tokens(t("e1 e2 e2").iter());
        assert!((coherence_metric(&t("e1 e2"), &t("e1 e2"), &table, &stats).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(coherence_metric(&t("e1"), &t("qq rr"), &table, &stats).unwrap(), 0.0);
    }

    #[test]
    fn report_sum_and_objective_parsing() {
        let table = table2();
        let stats = UnigramStats::from_tokens(t("e1 e2").iter());
        let ctx = [t("e1 e2"), t("e2")];
        let refs = [t("e1"), t("e2 e1")];
        let gen = [t("e1"), Vec::new()];
        let r = MetricReport::compute(&ctx, &gen, &refs, &table, &stats).unwrap();
        assert_eq!(r.empty_responses, 1);
        assert_eq!(r.dist[1], 0.0);
        assert!((r.greedy - 0.5).abs() < 1e-12);
        assert!((r.sum() - r.values().iter().sum::<f64>()).abs() < 1e-15);

        let mut better = r.clone();
        better.bleu += 0.1;
        assert!(-better.sum() < -r.sum());

        assert_eq!("+ppl".parse::<ObjectiveKind>().unwrap(), ObjectiveKind::PlusPpl);
        assert_eq!("-metric".parse::<ObjectiveKind>().unwrap(), ObjectiveKind::NegMetricSum);
        assert!("x".parse::<ObjectiveKind>().unwrap_err().is_config());

        let mut buf = Vec::new();
        r.write_tsv(&mut buf, Some(3.0), Some((ObjectiveKind::NegMetricSum, -r.sum()))).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2 + 13 + 2);
        assert!(text.contains("\nbleu\t"));
    }

    use proptest::prelude::*;

    fn responses() -> impl Strategy<Value = Vec<Tokens>> {
        prop::collection::vec(prop::collection::vec(0u8..6, 0..8), 1..10).prop_map(|rs| {
            rs.into_iter()
                .map(|r| r.into_iter().map(|w| format!("w{w}")).collect())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn ngram_metrics_are_bounded(rs in responses(), n in 1usize..4) {
            let total: usize = rs.iter().map(|r| r.len().saturating_sub(n - 1)).sum();
            prop_assume!(total > 0);
            let d = dist_n(&rs, n).unwrap();
            prop_assert!(d >= 1.0 / total as f64 - 1e-15 && d <= 1.0);
            let i = intra_n(&rs, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&i));
            prop_assert!(ent_n(&rs, n).unwrap() >= 0.0);
            let b = bleu(&rs, &rs).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&b));
        }
    }
}
