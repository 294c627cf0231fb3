//! The quality measure `S = w·φ`, bottom-n% filtering, the random base
//! partition and diff sets against it.

use std::collections::BTreeSet;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attributes::{AttributeVector, N_ATTRIBUTES};
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Attribute weights, ordered as [`crate::attributes::Attribute::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub [f64; N_ATTRIBUTES]);

impl WeightVector {
    pub fn from_slice(w: &[f64]) -> Result<Self> {
        let arr: [f64; N_ATTRIBUTES] = w.try_into().map_err(|_| Error::Dimension {
            expected: N_ATTRIBUTES,
            got: w.len(),
        })?;
        if arr.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        Ok(WeightVector(arr))
    }

    pub fn one_hot(index: usize) -> Result<Self> {
        if index >= N_ATTRIBUTES {
            return Err(Error::InvalidArgument(format!(
                "attribute index {index} outside 0..{N_ATTRIBUTES}"
            )));
        }
        let mut w = [0.0; N_ATTRIBUTES];
        w[index] = 1.0;
        Ok(WeightVector(w))
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        WeightVector(self.0.map(|x| x * alpha))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub id: String,
    pub score: f64,
}

/// `S = w·φ` per sample, in input order.
pub fn score_samples<'a>(
    phi: impl IntoIterator<Item = &'a AttributeVector>,
    w: &WeightVector,
) -> Vec<ScoredSample> {
    phi.into_iter()
        .map(|v| ScoredSample {
            id: v.id.clone(),
            score: v.values.iter().zip(w.0).map(|(x, w)| x * w).sum(),
        })
        .collect()
}

/// Like [`score_samples`] for raw rows of any width.
pub fn score_rows(rows: &[(String, Vec<f64>)], w: &[f64]) -> Result<Vec<ScoredSample>> {
    rows.iter()
        .map(|(id, phi)| {
            if phi.len() != w.len() {
                return Err(Error::Dimension {
                    expected: w.len(),
                    got: phi.len(),
                });
            }
            Ok(ScoredSample {
                id: id.clone(),
                score: phi.iter().zip(w).map(|(x, w)| x * w).sum(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Random { seed: u64 },
    Weighted(WeightVector),
}

/// Split of a corpus into maintained and removed ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub maintained: BTreeSet<String>,
    pub removed: BTreeSet<String>,
    pub ratio: f64,
    pub provenance: Provenance,
}

impl FilterState {
    pub fn len(&self) -> usize {
        self.maintained.len() + self.removed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_kept(&self, id: &str) -> bool {
        self.maintained.contains(id)
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio.is_finite() && ratio > 0.0 && ratio < 100.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "filter ratio {ratio}% must lie strictly between 0 and 100"
        )))
    }
}

/// `ceil(ratio% * n)`, robust to the representation error of `ratio`.
pub fn removed_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) / 100.0 - 1e-9).ceil().max(0.0) as usize
}

/// Sorts by descending score (ties by ascending id) and removes the bottom
/// `ceil(ratio% * N)` samples.
pub fn rank_and_filter(scores: &[ScoredSample], ratio: f64) -> Result<FilterState> {
    check_ratio(ratio)?;
    if let Some(bad) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Sample {
            id: bad.id.clone(),
            message: "non-finite measure score".into(),
        });
    }
    let mut order: Vec<&ScoredSample> = scores.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    let keep = order.len() - removed_count(ratio, order.len());
    Ok(FilterState {
        maintained: order[..keep].iter().map(|s| s.id.clone()).collect(),
        removed: order[keep..].iter().map(|s| s.id.clone()).collect(),
        ratio,
        provenance: Provenance::Random { seed: 0 },
    })
}

/// Scores, ranks and filters in one step, tagging the weights used.
pub fn filter_by_weights<'a>(
    phi: impl IntoIterator<Item = &'a AttributeVector>,
    w: &WeightVector,
    ratio: f64,
) -> Result<(Vec<ScoredSample>, FilterState)> {
    let scores = score_samples(phi, w);
    let mut state = rank_and_filter(&scores, ratio)?;
    state.provenance = Provenance::Weighted(*w);
    Ok((scores, state))
}

/// Removes a uniformly random subset of `ceil(ratio% * N)` samples.
pub fn random_partition(corpus: &Corpus, ratio: f64, seed: u64) -> Result<FilterState> {
    check_ratio(ratio)?;
    let n = corpus.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: BTreeSet<usize> = rand::seq::index::sample(&mut rng, n, removed_count(ratio, n))
        .into_iter()
        .collect();
    let mut state = FilterState {
        maintained: BTreeSet::new(),
        removed: BTreeSet::new(),
        ratio,
        provenance: Provenance::Random { seed },
    };
    for (i, id) in corpus.ids().enumerate() {
        if picked.contains(&i) {
            state.removed.insert(id.to_string());
        } else {
            state.maintained.insert(id.to_string());
        }
    }
    Ok(state)
}

/// Samples newly maintained and newly removed relative to a base partition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiffSets {
    pub newly_maintained: BTreeSet<String>,
    pub newly_removed: BTreeSet<String>,
}

impl DiffSets {
    pub fn is_empty(&self) -> bool {
        self.newly_maintained.is_empty() && self.newly_removed.is_empty()
    }
}

/// `M̂ = M_t \ M_0`, `R̂ = R_t \ R_0`. Both partitions must cover the same ids.
pub fn diff_sets(current: &FilterState, base: &FilterState) -> Result<DiffSets> {
    let same_universe = current.len() == base.len()
        && current
            .maintained
            .iter()
            .chain(&current.removed)
            .all(|id| base.maintained.contains(id) || base.removed.contains(id));
    if !same_universe {
        return Err(Error::InvalidArgument(
            "diff sets of partitions over different corpora".into(),
        ));
    }
    Ok(DiffSets {
        newly_maintained: current.maintained.difference(&base.maintained).cloned().collect(),
        newly_removed: current.removed.difference(&base.removed).cloned().collect(),
    })
}

/// TSV: id, S, kept (1/0) in score order as given.
pub fn write_filter_report<W: Write>(
    scores: &[ScoredSample],
    state: &FilterState,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "id\tS\tkept")?;
    for s in scores {
        writeln!(out, "{}\t{}\t{}", s.id, s.score, u8::from(state.is_kept(&s.id)))?;
    }
    out.flush()
}
