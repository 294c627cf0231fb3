//! Synthetic topic-structured dialogue corpora with labeled noise.
//!
//! Each topic owns a disjoint word pool. Clean samples draw context, response
//! and next utterance from one topic, mixed with shared function words.
//! Noisy samples replace the response with one from another topic
//! (`shuffle`), with a fixed generic reply (`generic`), or with a clean
//! response whose tokens are mostly overwritten by one repeated word
//! (`repeat`). The generator also emits an embedding table in which every
//! topic word points along its topic's direction.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Role, Sample, Tokens};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::util::standard_normal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub samples: usize,
    /// Total distinct words: topic pools, function words and generic words.
    pub vocab_size: usize,
    pub topics: usize,
    pub function_words: usize,
    pub generic_words: usize,
    pub rho_shuffle: f64,
    pub rho_generic: f64,
    pub rho_repeat: f64,
    /// Chance that a token is a function word instead of a topic word.
    pub function_rate: f64,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            samples: 1000,
            vocab_size: 300,
            topics: 8,
            function_words: 20,
            generic_words: 8,
            rho_shuffle: 0.2,
            rho_generic: 0.0,
            rho_repeat: 0.0,
            function_rate: 0.3,
            embedding_dim: 32,
            seed: 0,
        }
    }
}

const MIN_POOL: usize = 5;
const GENERIC_POOL: usize = 4;

impl SynthSpec {
    fn topic_pool(&self) -> usize {
        self.vocab_size
            .saturating_sub(self.function_words + self.generic_words)
            / self.topics.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [self.rho_shuffle, self.rho_generic, self.rho_repeat];
        if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Config("noise fractions must be >= 0".into()));
        }
        if fractions.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config("noise fractions sum to more than 1".into()));
        }
        if self.samples == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("sample count and embedding dimension must be >= 1".into()));
        }
        if self.rho_shuffle > 0.0 && self.topics < 2 {
            return Err(Error::Config("shuffle noise needs at least two topics".into()));
        }
        if self.topics == 0 || self.topic_pool() < MIN_POOL {
            return Err(Error::Config(format!(
                "vocabulary of {} cannot give {} topics at least {MIN_POOL} words each",
                self.vocab_size, self.topics
            )));
        }
        if self.function_words == 0 || self.generic_words == 0 {
            return Err(Error::Config("function and generic word counts must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.function_rate) {
            return Err(Error::Config("function_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Exact noisy-sample counts per class.
    pub fn noise_counts(&self) -> [usize; 3] {
        let count = |rho: f64| (rho * self.samples as f64).round() as usize;
        [count(self.rho_shuffle), count(self.rho_generic), count(self.rho_repeat)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseClass {
    Clean,
    Shuffle,
    Generic,
    Repeat,
}

impl fmt::Display for NoiseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseClass::Clean => "clean",
            NoiseClass::Shuffle => "shuffle",
            NoiseClass::Generic => "generic",
            NoiseClass::Repeat => "repeat",
        })
    }
}

/// Word pools, topic geometry and the generic reply pool of one seed.
#[derive(Debug, Clone)]
struct World {
    topics: Vec<Vec<String>>,
    function: Vec<String>,
    generic: Vec<Tokens>,
    zipf: WeightedIndex<f64>,
    function_rate: f64,
    embeddings: EmbeddingTable,
}

impl World {
    fn new(spec: &SynthSpec) -> Result<Self> {
        let pool = spec.topic_pool();
        let topics: Vec<Vec<String>> = (0..spec.topics)
            .map(|t| (0..pool).map(|j| format!("t{t}w{j}")).collect())
            .collect();
        let function: Vec<String> = (0..spec.function_words).map(|j| format!("fn{j}")).collect();
        let generic_words: Vec<String> = (0..spec.generic_words).map(|j| format!("gen{j}")).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(0);
        let generic = (0..GENERIC_POOL)
            .map(|_| {
                let len = rng.gen_range(3..=6);
                (0..len)
                    .map(|_| generic_words[rng.gen_range(0..generic_words.len())].clone())
                    .collect()
            })
            .collect();

        let d = spec.embedding_dim;
        let mut gaussian = |scale: f64| -> Vec<f64> {
            (0..d).map(|_| scale * standard_normal(&mut rng)).collect()
        };
        let mut embeddings = EmbeddingTable::new(d)?;
        let noise = 0.5 / (d as f64).sqrt();
        for words in &topics {
            let mut direction = gaussian(1.0);
            let n = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
            direction.iter_mut().for_each(|x| *x /= n);
            for w in words {
                let v = direction.iter().zip(gaussian(noise)).map(|(a, b)| a + b).collect();
                embeddings.insert(w.as_str(), v)?;
            }
        }
        for w in function.iter().chain(&generic_words) {
            embeddings.insert(w.as_str(), gaussian(noise))?;
        }

        let weights: Vec<f64> = (1..=pool).map(|r| 1.0 / r as f64).collect();
        let zipf = WeightedIndex::new(weights)
            .map_err(|e| Error::Config(format!("word distribution: {e}")))?;
        Ok(World {
            topics,
            function,
            generic,
            zipf,
            function_rate: spec.function_rate,
            embeddings,
        })
    }

    fn utterance<R: Rng>(&self, rng: &mut R, topic: usize, len: usize) -> Tokens {
        (0..len)
            .map(|_| {
                if rng.gen_bool(self.function_rate) {
                    self.function[rng.gen_range(0..self.function.len())].clone()
                } else {
                    self.topics[topic][self.zipf.sample(rng)].clone()
                }
            })
            .collect()
    }

    fn clean_sample<R: Rng>(&self, rng: &mut R, id: String) -> (Sample, usize) {
        let topic = rng.gen_range(0..self.topics.len());
        let turns = rng.gen_range(1..=2);
        let context = (0..turns)
            .map(|_| {
                let len = rng.gen_range(5..=9);
                self.utterance(rng, topic, len)
            })
            .collect();
        let len = rng.gen_range(4..=8);
        let response = self.utterance(rng, topic, len);
        let len = rng.gen_range(5..=9);
        let next = Some(self.utterance(rng, topic, len));
        (
            Sample {
                id,
                context,
                response,
                next,
            },
            topic,
        )
    }
}

/// A generated corpus with its hidden labels and embedding table.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub labels: Vec<(String, NoiseClass)>,
    pub embeddings: EmbeddingTable,
}

impl SynthCorpus {
    pub fn ids_of(&self, class: NoiseClass) -> impl Iterator<Item = &str> {
        self.labels
            .iter()
            .filter(move |(_, c)| *c == class)
            .map(|(id, _)| id.as_str())
    }
}

/// Generates `spec.samples` training samples with exactly
/// [`SynthSpec::noise_counts`] noisy samples per class.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let world = World::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);

    let [n_shuffle, n_generic, n_repeat] = spec.noise_counts();
    let mut classes = vec![NoiseClass::Clean; spec.samples];
    let noisy = sample(&mut rng, spec.samples, n_shuffle + n_generic + n_repeat);
    for (k, i) in noisy.into_iter().enumerate() {
        classes[i] = if k < n_shuffle {
            NoiseClass::Shuffle
        } else if k < n_shuffle + n_generic {
            NoiseClass::Generic
        } else {
            NoiseClass::Repeat
        };
    }

    let mut samples = Vec::with_capacity(spec.samples);
    let mut labels = Vec::with_capacity(spec.samples);
    for (i, class) in classes.into_iter().enumerate() {
        let id = format!("s{:05}", i + 1);
        let (mut s, topic) = world.clean_sample(&mut rng, id.clone());
        match class {
            NoiseClass::Clean => {}
            NoiseClass::Shuffle => {
                let other = (topic + rng.gen_range(1..world.topics.len())) % world.topics.len();
                let len = s.response.len();
                s.response = world.utterance(&mut rng, other, len);
            }
            NoiseClass::Generic => {
                s.response = world.generic[rng.gen_range(0..world.generic.len())].clone();
            }
            NoiseClass::Repeat => {
                let word = s.response[0].clone();
                for (j, tok) in s.response.iter_mut().enumerate().skip(1) {
                    if j == 1 || rng.gen_bool(0.75) {
                        *tok = word.clone();
                    }
                }
            }
        }
        samples.push(s);
        labels.push((id, class));
    }
    Ok(SynthCorpus {
        corpus: Corpus::new(Role::Train, samples)?,
        labels,
        embeddings: world.embeddings,
    })
}

/// A clean validation split over the same topics and words as
/// [`generate`] with the same spec, using an independent sample stream.
pub fn generate_validation(spec: &SynthSpec, n: usize) -> Result<Corpus> {
    spec.validate()?;
    let world = World::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2);
    let samples = (0..n)
        .map(|i| world.clean_sample(&mut rng, format!("v{:05}", i + 1)).0)
        .collect();
    Corpus::new(Role::Validation, samples)
}

/// `id<TAB>noise_class` with a header row.
pub fn write_labels_to<W: Write>(labels: &[(String, NoiseClass)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "id\tnoise_class")?;
    for (id, class) in labels {
        writeln!(out, "{id}\t{class}")?;
    }
    out.flush()
}

pub fn write_labels(labels: &[(String, NoiseClass)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_labels_to(labels, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}
