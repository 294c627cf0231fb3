//! Browser bindings: a one-dimensional GP/EI explorer, an attribute scorer
//! and a weight explorer over a synthetic corpus with known noise labels.

use std::collections::HashMap;

use wasm_bindgen::prelude::*;

use dfilter::attributes::{compute_phi, Backends, ConsistencySource, PhiTable, N_ATTRIBUTES};
use dfilter::bayesopt::{ei_from_moments, gp_fit, gp_posterior, GpConfig, Observation};
use dfilter::corpus::{build_vocab, tokenize, Sample};
use dfilter::measure::{filter_by_weights, WeightVector};
use dfilter::seqscore::{LmBackend, NgramLm};
use dfilter::synthgen::{generate, NoiseClass, SynthSpec};

fn js(e: dfilter::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Posterior of a GP fitted to `(xs, ys)` on `[-1, 1]`, sampled at `grid`
/// evenly spaced points. Returns `[x.., mean.., std.., ei..]`.
pub fn gp_curve(xs: &[f64], ys: &[f64], length_scale: f64, grid: usize) -> dfilter::Result<Vec<f64>> {
    if xs.len() != ys.len() || xs.is_empty() || grid < 2 {
        return Err(dfilter::Error::InvalidArgument(
            "need matching, non-empty xs and ys and at least two grid points".into(),
        ));
    }
    let config = GpConfig {
        length_scale,
        domain: vec![(-1.0, 1.0)],
        ..GpConfig::default()
    };
    config.validate()?;
    let observations: Vec<Observation> = xs
        .iter()
        .zip(ys)
        .enumerate()
        .map(|(t, (&x, &y))| Observation { x: vec![x], y, t })
        .collect();
    let model = gp_fit(&observations, &config)?;
    let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = vec![0.0; 4 * grid];
    for i in 0..grid {
        let x = -1.0 + 2.0 * i as f64 / (grid - 1) as f64;
        let (mean, var) = gp_posterior(&model, &[x]);
        let std = var.max(0.0).sqrt();
        out[i] = x;
        out[grid + i] = mean;
        out[2 * grid + i] = std;
        out[3 * grid + i] = ei_from_moments(mean, std, best);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = gpCurve)]
pub fn gp_curve_js(xs: &[f64], ys: &[f64], length_scale: f64, grid: usize) -> Result<Vec<f64>, JsError> {
    gp_curve(xs, ys, length_scale, grid).map_err(js)
}

const CLASSES: [NoiseClass; 4] = [
    NoiseClass::Clean,
    NoiseClass::Shuffle,
    NoiseClass::Generic,
    NoiseClass::Repeat,
];

/// A generated corpus scored once; filtering then only re-ranks.
#[wasm_bindgen]
pub struct World {
    samples: Vec<Sample>,
    labels: HashMap<String, NoiseClass>,
    backends: Backends,
    phi: PhiTable,
}

impl World {
    pub fn build(spec: &SynthSpec) -> dfilter::Result<World> {
        let synth = generate(spec)?;
        let vocab = build_vocab(&synth.corpus, 1);
        let lm = LmBackend::Ngram(NgramLm::train(&synth.corpus, &vocab));
        let backends = Backends::build(&synth.corpus, synth.embeddings, lm, ConsistencySource::Pinned, true)?;
        let phi = compute_phi(&synth.corpus, &backends, None)?;
        Ok(World {
            samples: synth.corpus.samples().to_vec(),
            labels: synth.labels.into_iter().collect(),
            backends,
            phi,
        })
    }

    /// Raw then standardized attributes of a typed context and response.
    pub fn score_pair(&self, context: &str, response: &str) -> dfilter::Result<Vec<f64>> {
        let sample = Sample {
            id: "input".into(),
            context: vec![tokenize(context)],
            response: tokenize(response),
            next: None,
        };
        sample.validate()?;
        let (raw, _) = self.backends.raw_attributes(&sample)?;
        let mut out = raw.to_array().to_vec();
        out.extend(self.phi.stats.apply(&raw));
        Ok(out)
    }

    /// Share of each noise class removed at `weights`, in the order clean,
    /// shuffle, generic, repeat. Absent classes report 0.
    pub fn removed_share(&self, weights: &[f64], ratio: f64) -> dfilter::Result<Vec<f64>> {
        let w = WeightVector::from_slice(weights)?;
        let (_, state) = filter_by_weights(self.phi.vectors(), &w, ratio)?;
        let mut total = [0usize; 4];
        let mut removed = [0usize; 4];
        for (id, class) in &self.labels {
            let k = CLASSES.iter().position(|c| c == class).expect("known class");
            total[k] += 1;
            removed[k] += usize::from(!state.is_kept(id));
        }
        Ok((0..4)
            .map(|k| if total[k] == 0 { 0.0 } else { removed[k] as f64 / total[k] as f64 })
            .collect())
    }
}

#[wasm_bindgen]
impl World {
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u64,
        samples: usize,
        rho_shuffle: f64,
        rho_generic: f64,
        rho_repeat: f64,
    ) -> Result<World, JsError> {
        let spec = SynthSpec {
            seed,
            samples,
            rho_shuffle,
            rho_generic,
            rho_repeat,
            ..SynthSpec::default()
        };
        World::build(&spec).map_err(js)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Context of sample `i`, its turns joined by " / ".
    pub fn context(&self, i: usize) -> String {
        self.samples.get(i).map_or_else(String::new, |s| {
            s.context.iter().map(|u| u.join(" ")).collect::<Vec<_>>().join(" / ")
        })
    }

    pub fn response(&self, i: usize) -> String {
        self.samples.get(i).map_or_else(String::new, |s| s.response.join(" "))
    }

    pub fn label(&self, i: usize) -> String {
        self.samples
            .get(i)
            .and_then(|s| self.labels.get(&s.id))
            .map_or_else(String::new, |c| format!("{c:?}").to_lowercase())
    }

    #[wasm_bindgen(js_name = attributeCount)]
    pub fn attribute_count() -> usize {
        N_ATTRIBUTES
    }

    #[wasm_bindgen(js_name = scorePair)]
    pub fn score_pair_js(&self, context: &str, response: &str) -> Result<Vec<f64>, JsError> {
        self.score_pair(context, response).map_err(js)
    }

    #[wasm_bindgen(js_name = removedShare)]
    pub fn removed_share_js(&self, weights: &[f64], ratio: f64) -> Result<Vec<f64>, JsError> {
        self.removed_share(weights, ratio).map_err(js)
    }
}
