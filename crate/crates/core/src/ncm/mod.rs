//! A small conditional response model trained with per-sample likelihood
//! updates, plus the diff-set MLE/negative-training pass that replaces full
//! retraining during the weight search.
//!
//! At response step `t` the model encodes the flattened context as the mean
//! of its token embeddings `h_c` and the response prefix `BOS r_<t` as the
//! mean of its embeddings `h_t`, then predicts `softmax(W [h_c; h_t] + b)`.
//! All gradients are derived by hand.

mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{flatten_context, Corpus, Sample, Vocabulary, BOS_ID, EOS_ID, RESERVED};
use crate::error::{Error, Result};
use crate::util::standard_normal;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

/// A sample mapped to vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub id: String,
    pub context: Vec<u32>,
    pub response: Vec<u32>,
}

impl EncodedSample {
    pub fn new(sample: &Sample, vocab: &Vocabulary) -> Self {
        EncodedSample {
            id: sample.id.clone(),
            context: vocab.encode(&flatten_context(sample)),
            response: vocab.encode(&sample.response),
        }
    }

    /// Predicted positions: every response token plus EOS.
    pub fn steps(&self) -> usize {
        self.response.len() + 1
    }
}

pub fn encode_corpus(corpus: &Corpus, vocab: &Vocabulary) -> Vec<EncodedSample> {
    corpus.samples().iter().map(|s| EncodedSample::new(s, vocab)).collect()
}

/// Flat parameter (or gradient) storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    /// `|V| x d` token embeddings.
    pub emb: Vec<f64>,
    /// `|V| x 2d`; columns `0..d` act on the context, `d..2d` on the prefix.
    pub out_w: Vec<f64>,
    /// `|V|` output bias.
    pub out_b: Vec<f64>,
}

impl Tensors {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        Tensors {
            emb: vec![0.0; vocab_size * dim],
            out_w: vec![0.0; vocab_size * 2 * dim],
            out_b: vec![0.0; vocab_size],
        }
    }

    fn parts(&self) -> [&[f64]; 3] {
        [&self.emb, &self.out_w, &self.out_b]
    }

    pub fn norm(&self) -> f64 {
        self.parts()
            .iter()
            .flat_map(|p| p.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Tensors, scale: f64) {
        for (a, b) in [
            (&mut self.emb, &other.emb),
            (&mut self.out_w, &other.out_w),
            (&mut self.out_b, &other.out_b),
        ] {
            for (x, g) in a.iter_mut().zip(b) {
                *x += scale * g;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dim: usize,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub seed: u64,
    pub tensors: Tensors,
}

/// Standard deviation of the Gaussian initialization.
pub const INIT_SCALE: f64 = 0.1;

impl ModelParams {
    /// Gaussian-initialized embeddings and output weights, zero bias.
    pub fn init(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Tensors::zeros(vocab.len(), dim);
        for x in tensors.emb.iter_mut().chain(tensors.out_w.iter_mut()) {
            *x = INIT_SCALE * standard_normal(&mut rng);
        }
        ModelParams {
            dim,
            vocab_size: vocab.len(),
            vocab_hash: vocab.hash(),
            seed,
            tensors,
        }
    }

    /// All-zero parameters: every token gets probability `1/|V|`.
    pub fn uniform(vocab: &Vocabulary, dim: usize) -> Self {
        ModelParams {
            dim,
            vocab_size: vocab.len(),
            vocab_hash: vocab.hash(),
            seed: 0,
            tensors: Tensors::zeros(vocab.len(), dim),
        }
    }

    fn check(&self, s: &EncodedSample) -> Result<()> {
        if s.response.is_empty() {
            return Err(Error::Sample {
                id: s.id.clone(),
                message: "empty response".into(),
            });
        }
        if let Some(&bad) = s
            .context
            .iter()
            .chain(&s.response)
            .find(|&&t| t as usize >= self.vocab_size)
        {
            return Err(Error::Sample {
                id: s.id.clone(),
                message: format!("token index {bad} outside vocabulary"),
            });
        }
        Ok(())
    }

    fn emb_row(&self, t: u32) -> &[f64] {
        let d = self.dim;
        &self.tensors.emb[t as usize * d..(t as usize + 1) * d]
    }

    fn mean_embedding(&self, tokens: &[u32]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim];
        for &t in tokens {
            for (a, e) in h.iter_mut().zip(self.emb_row(t)) {
                *a += e;
            }
        }
        if !tokens.is_empty() {
            let n = tokens.len() as f64;
            h.iter_mut().for_each(|x| *x /= n);
        }
        h
    }

    /// `W_c h_c + b`, constant across the steps of one sample.
    fn context_logits(&self, h_c: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..self.vocab_size)
            .map(|v| {
                let row = &self.tensors.out_w[v * 2 * d..v * 2 * d + d];
                self.tensors.out_b[v] + dot(row, h_c)
            })
            .collect()
    }

    /// Logits for one step given the precomputed context part.
    fn step_logits(&self, base: &[f64], h_t: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (v, z) in out.iter_mut().enumerate() {
            let row = &self.tensors.out_w[v * 2 * d + d..(v + 1) * 2 * d];
            *z = base[v] + dot(row, h_t);
        }
    }

    /// Natural-log probability of each response token and the final EOS.
    pub fn forward_logprob(&self, s: &EncodedSample) -> Result<Vec<f64>> {
        Ok(self.step_terms(s)?.into_iter().map(|(shift, total)| shift - total.ln()).collect())
    }

    /// Per step, the target logit minus the max logit and the sum of
    /// `exp(z - max)`, so that `p = exp(shift) / total`.
    fn step_terms(&self, s: &EncodedSample) -> Result<Vec<(f64, f64)>> {
        self.check(s)?;
        let d = self.dim;
        let base = self.context_logits(&self.mean_embedding(&s.context));
        let mut sum = self.emb_row(BOS_ID).to_vec();
        let mut h_t = vec![0.0; d];
        let mut z = vec![0.0; self.vocab_size];
        let mut out = Vec::with_capacity(s.steps());
        for (t, &target) in s.response.iter().chain([EOS_ID].iter()).enumerate() {
            let n = (t + 1) as f64;
            h_t.iter_mut().zip(&sum).for_each(|(h, s)| *h = s / n);
            self.step_logits(&base, &h_t, &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            out.push((z[target as usize] - max, z.iter().map(|x| (x - max).exp()).sum::<f64>()));
            if t < s.response.len() {
                sum.iter_mut()
                    .zip(self.emb_row(target))
                    .for_each(|(a, e)| *a += e);
            }
        }
        Ok(out)
    }

    /// Mean per-token log-likelihood of the sample.
    pub fn loglik(&self, s: &EncodedSample) -> Result<f64> {
        let lp = self.forward_logprob(s)?;
        Ok(lp.iter().sum::<f64>() / lp.len() as f64)
    }

    /// Gradient of the mean per-token log-likelihood, and that log-likelihood.
    pub fn grad(&self, s: &EncodedSample) -> Result<(Tensors, f64)> {
        self.check(s)?;
        let d = self.dim;
        let vocab = self.vocab_size;
        let steps = s.steps();
        let inv_steps = 1.0 / steps as f64;
        let mut g = Tensors::zeros(vocab, d);

        let h_c = self.mean_embedding(&s.context);
        let base = self.context_logits(&h_c);
        // history[t] is the token entering the prefix mean at step t.
        let history: Vec<u32> = [BOS_ID].iter().chain(&s.response).copied().collect();
        let targets: Vec<u32> = s.response.iter().chain([EOS_ID].iter()).copied().collect();

        let mut sum = vec![0.0; d];
        let mut h_t = vec![0.0; d];
        let mut z = vec![0.0; vocab];
        let mut g_sum = vec![0.0; vocab];
        // dL/dh_t / (t + 1), later spread back over the prefix tokens.
        let mut prefix_grad = vec![vec![0.0; d]; steps];
        let mut loglik = 0.0;

        for t in 0..steps {
            sum.iter_mut()
                .zip(self.emb_row(history[t]))
                .for_each(|(a, e)| *a += e);
            let n = (t + 1) as f64;
            h_t.iter_mut().zip(&sum).for_each(|(h, s)| *h = s / n);
            self.step_logits(&base, &h_t, &mut z);
            let lse = log_sum_exp(&z);
            let target = targets[t] as usize;
            loglik += z[target] - lse;

            let dh = &mut prefix_grad[t];
            for v in 0..vocab {
                let p = (z[v] - lse).exp();
                let gv = ((v == target) as u8 as f64 - p) * inv_steps;
                g_sum[v] += gv;
                g.out_b[v] += gv;
                let w_row = &self.tensors.out_w[v * 2 * d + d..(v + 1) * 2 * d];
                let gw_row = &mut g.out_w[v * 2 * d + d..(v + 1) * 2 * d];
                for k in 0..d {
                    gw_row[k] += gv * h_t[k];
                    dh[k] += gv * w_row[k];
                }
            }
            dh.iter_mut().for_each(|x| *x /= n);
        }

        // Context half of W and the context embeddings.
        let mut dh_c = vec![0.0; d];
        for v in 0..vocab {
            let w_row = &self.tensors.out_w[v * 2 * d..v * 2 * d + d];
            let gw_row = &mut g.out_w[v * 2 * d..v * 2 * d + d];
            for k in 0..d {
                gw_row[k] += g_sum[v] * h_c[k];
                dh_c[k] += g_sum[v] * w_row[k];
            }
        }
        let ctx_scale = 1.0 / s.context.len().max(1) as f64;
        for &c in &s.context {
            let row = &mut g.emb[c as usize * d..(c as usize + 1) * d];
            row.iter_mut().zip(&dh_c).for_each(|(r, x)| *r += x * ctx_scale);
        }

        // history[j] contributes to every step t >= j.
        let mut acc = vec![0.0; d];
        for t in (0..steps).rev() {
            acc.iter_mut().zip(&prefix_grad[t]).for_each(|(a, x)| *a += x);
            let tok = history[t] as usize;
            let row = &mut g.emb[tok * d..(tok + 1) * d];
            row.iter_mut().zip(&acc).for_each(|(r, x)| *r += x);
        }
        Ok((g, loglik * inv_steps))
    }

    /// Greedy decoding. Returns generated tokens without EOS.
    pub fn greedy_decode(&self, context: &[u32], max_len: usize) -> Vec<u32> {
        let d = self.dim;
        let base = self.context_logits(&self.mean_embedding(context));
        let mut sum = self.emb_row(BOS_ID).to_vec();
        let mut h_t = vec![0.0; d];
        let mut z = vec![0.0; self.vocab_size];
        let mut out = Vec::new();
        while out.len() < max_len {
            let n = (out.len() + 1) as f64;
            h_t.iter_mut().zip(&sum).for_each(|(h, s)| *h = s / n);
            self.step_logits(&base, &h_t, &mut z);
            let Some(best) = (RESERVED..self.vocab_size)
                .reduce(|a, b| if z[b] > z[a] { b } else { a })
            else {
                break;
            };
            if z[EOS_ID as usize] > z[best] {
                break;
            }
            out.push(best as u32);
            sum.iter_mut()
                .zip(self.emb_row(best as u32))
                .for_each(|(a, e)| *a += e);
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Per-token log-probabilities (free-function form).
pub fn forward_logprob(theta: &ModelParams, s: &EncodedSample) -> Result<Vec<f64>> {
    theta.forward_logprob(s)
}

pub fn grad(theta: &ModelParams, s: &EncodedSample) -> Result<Tensors> {
    theta.grad(s).map(|(g, _)| g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Gradient norm cap for negative-training steps.
    pub neg_clip: f64,
    pub epochs: usize,
    /// Stop after this many epochs without validation perplexity improvement; 0 disables.
    pub patience: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            neg_clip: 1.0,
            epochs: 10,
            patience: 3,
            dim: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.neg_clip > 0.0) {
            return Err(Error::Config("neg_clip must be positive".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("model dimension must be >= 1".into()));
        }
        Ok(())
    }
}

/// `θ += α ∇ log P(y|x)`. Returns the sample log-likelihood before the step.
pub fn mle_step(theta: &mut ModelParams, s: &EncodedSample, lr: f64) -> Result<f64> {
    let (g, ll) = theta.grad(s)?;
    if !g.is_finite() {
        return Err(Error::Numerical(format!("non-finite gradient on sample {}", s.id)));
    }
    theta.tensors.add_scaled(&g, lr);
    Ok(ll)
}

/// `θ -= α ∇ log P(y|x)` with the gradient rescaled to norm at most `clip`.
pub fn neg_step(theta: &mut ModelParams, s: &EncodedSample, lr: f64, clip: f64) -> Result<f64> {
    let (g, ll) = theta.grad(s)?;
    if !g.is_finite() {
        return Err(Error::Numerical(format!("non-finite gradient on sample {}", s.id)));
    }
    let norm = g.norm();
    let scale = if norm > clip { clip / norm } else { 1.0 };
    theta.tensors.add_scaled(&g, -lr * scale);
    Ok(ll)
}

/// One MLE pass over the newly maintained samples followed by one clipped
/// negative pass over the newly removed samples, each in the given order.
pub fn diff_mle_neg<'a>(
    theta: &mut ModelParams,
    newly_maintained: impl IntoIterator<Item = &'a EncodedSample>,
    newly_removed: impl IntoIterator<Item = &'a EncodedSample>,
    config: &TrainConfig,
) -> Result<()> {
    for s in newly_maintained {
        mle_step(theta, s, config.learning_rate).map_err(|e| e.for_sample(&s.id))?;
    }
    for s in newly_removed {
        neg_step(theta, s, config.learning_rate, config.neg_clip).map_err(|e| e.for_sample(&s.id))?;
    }
    Ok(())
}

/// `exp` of the mean NLL over all predicted tokens, EOS included.
pub fn perplexity<'a>(theta: &ModelParams, samples: impl IntoIterator<Item = &'a EncodedSample>) -> Result<f64> {
    // Geometric mean of inverse token probabilities, taken relative to the
    // first token's inverse probability computed without a log round trip.
    let mut reference: Option<(f64, f64)> = None;
    let (mut excess, mut count) = (0.0, 0usize);
    for s in samples {
        for (shift, total) in theta.step_terms(s)? {
            let nll = total.ln() - shift;
            let (ref_nll, _) = *reference.get_or_insert((nll, total * (-shift).exp()));
            excess += nll - ref_nll;
            count += 1;
        }
    }
    let Some((ref_nll, ref_inv)) = reference else {
        return Err(Error::InvalidArgument("perplexity of an empty corpus".into()));
    };
    let mean_excess = excess / count as f64;
    if ref_inv.is_finite() {
        Ok(ref_inv * mean_excess.exp())
    } else {
        Ok((ref_nll + mean_excess).exp())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean per-sample NLL seen during each epoch's pass.
    pub epoch_nll: Vec<f64>,
    /// Validation perplexity after each epoch, when a validation set was given.
    pub valid_ppl: Vec<f64>,
    /// Epoch whose parameters were returned (0 = initial).
    pub best_epoch: usize,
}

/// Epochs of per-sample MLE in seeded shuffled order. With a validation set
/// and nonzero patience, returns the parameters of the best validation epoch.
pub fn train_full(
    theta0: &ModelParams,
    train: &[EncodedSample],
    config: &TrainConfig,
    validation: Option<&[EncodedSample]>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training on an empty corpus".into()));
    }
    let mut theta = theta0.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut outcome = TrainOutcome {
        params: theta0.clone(),
        epoch_nll: Vec::new(),
        valid_ppl: Vec::new(),
        best_epoch: 0,
    };
    let early_stop = validation.filter(|v| !v.is_empty() && config.patience > 0);
    let mut best_ppl = match early_stop {
        Some(v) => perplexity(&theta, v)?,
        None => f64::INFINITY,
    };
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut nll = 0.0;
        for &i in &order {
            nll -= mle_step(&mut theta, &train[i], config.learning_rate)?;
        }
        let nll = nll / train.len() as f64;
        if !nll.is_finite() {
            return Err(Error::Numerical(format!("training diverged in epoch {epoch}")));
        }
        outcome.epoch_nll.push(nll);
        match early_stop {
            Some(v) => {
                let ppl = perplexity(&theta, v)?;
                outcome.valid_ppl.push(ppl);
                if ppl < best_ppl {
                    best_ppl = ppl;
                    outcome.best_epoch = epoch;
                    outcome.params = theta.clone();
                } else if epoch - outcome.best_epoch >= config.patience {
                    break;
                }
            }
            None => {
                outcome.best_epoch = epoch;
            }
        }
    }
    if early_stop.is_none() {
        outcome.params = theta;
    }
    Ok(outcome)
}
