use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gp::{expected_improvement, GpConfig, GpModel, Observation};
use crate::error::{Error, Result};
use crate::util::standard_normal;

/// Draws `config.candidates` points and returns the one with the largest
/// expected improvement over the best observation. The first
/// `(1 - local_fraction) * m` candidates are uniform over the box; the rest are
/// Gaussian perturbations of the best observations, clipped to the box.
/// Ties keep the earliest candidate.
pub fn propose<R: Rng>(model: &GpModel, config: &GpConfig, rng: &mut R) -> Vec<f64> {
    let m = config.candidates.max(1);
    let n_local = ((m as f64) * config.local_fraction).floor() as usize;
    let n_local = if m == 1 { 0 } else { n_local.min(m - 1) };
    let y_best = model.best().y;

    let mut ranked: Vec<&Observation> = model.observations().iter().collect();
    ranked.sort_by(|a, b| a.y.total_cmp(&b.y));
    let centers = &ranked[..ranked.len().min(3)];
    const SCALES: [f64; 3] = [0.2, 0.05, 0.01];

    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..m {
        let x: Vec<f64> = if i < m - n_local {
            config.domain.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect()
        } else {
            let k = i - (m - n_local);
            let center = &centers[k % centers.len()].x;
            let scale = SCALES[(k / centers.len()) % SCALES.len()];
            center
                .iter()
                .zip(&config.domain)
                .map(|(&c, &(lo, hi))| (c + scale * (hi - lo) * standard_normal(rng)).clamp(lo, hi))
                .collect()
        };
        let ei = expected_improvement(model, &x, y_best);
        if best.as_ref().map_or(true, |(b, _)| ei > *b) {
            best = Some((ei, x));
        }
    }
    best.expect("at least one candidate").1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub best_y: f64,
    /// The black box failed and `y` is a penalty value.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeTrace {
    pub records: Vec<TraceRecord>,
}

impl OptimizeTrace {
    pub fn best(&self) -> Option<&TraceRecord> {
        self.records
            .iter()
            .filter(|r| !r.failed)
            .min_by(|a, b| a.y.total_cmp(&b.y).then(a.t.cmp(&b.t)))
            .or_else(|| self.records.first())
    }

    pub fn failed(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.failed)
    }

    /// CSV with header `t,w1..wd,J,bestJ`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dim = self.records.first().map_or(0, |r| r.x.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=dim).map(|i| format!("w{i}")));
        header.push("J".into());
        header.push("bestJ".into());
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            write!(out, "{}", r.t)?;
            for x in &r.x {
                write!(out, ",{x}")?;
            }
            writeln!(out, ",{},{}", r.y, r.best_y)?;
        }
        out.flush()
    }
}

/// What to do when the black box returns an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FailurePolicy {
    Abort,
    /// Record `worst observed + penalty` and continue.
    Penalize(f64),
}

/// Black-box failure carrying the trace collected so far.
#[derive(Debug, thiserror::Error)]
#[error("black box failed at evaluation {t}: {source}")]
pub struct Aborted {
    pub t: usize,
    pub trace: OptimizeTrace,
    #[source]
    pub source: Error,
}

fn standardized(observations: &[Observation]) -> Vec<Observation> {
    let n = observations.len() as f64;
    let mean = observations.iter().map(|o| o.y).sum::<f64>() / n;
    let var = observations.iter().map(|o| (o.y - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
    observations
        .iter()
        .map(|o| Observation {
            y: (o.y - mean) / std,
            ..o.clone()
        })
        .collect()
}

/// Minimizes `blackbox` over the configured box: an initial uniform design,
/// then `iterations` rounds of fit → propose → evaluate. The GP is fitted to
/// standardized objective values.
pub fn optimize<F>(
    mut blackbox: F,
    config: &GpConfig,
    iterations: usize,
    seed: u64,
    on_failure: FailurePolicy,
) -> Result<OptimizeTrace, Aborted>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let abort = |t, trace, source| Aborted { t, trace, source };
    if let Err(e) = config.validate() {
        return Err(abort(0, OptimizeTrace { records: vec![] }, e));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = OptimizeTrace { records: Vec::new() };
    let mut observations: Vec<Observation> = Vec::new();
    let total = config.initial_design + iterations;

    for t in 1..=total {
        let x: Vec<f64> = if t <= config.initial_design {
            config.domain.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect()
        } else {
            let model = match GpModel::fit(&standardized(&observations), config) {
                Ok(m) => m,
                Err(e) => return Err(abort(t, trace, e)),
            };
            propose(&model, config, &mut rng)
        };
        let (y, failed) = match blackbox(&x) {
            Ok(y) if y.is_finite() => (y, false),
            outcome => {
                let err = match outcome {
                    Err(e) => e,
                    Ok(y) => Error::Numerical(format!("black box returned {y}")),
                };
                match on_failure {
                    FailurePolicy::Abort => return Err(abort(t, trace, err)),
                    FailurePolicy::Penalize(p) => {
                        let worst = observations
                            .iter()
                            .map(|o| o.y)
                            .fold(f64::NEG_INFINITY, f64::max);
                        (if worst.is_finite() { worst + p } else { p }, true)
                    }
                }
            }
        };
        let best_y = trace
            .records
            .iter()
            .filter(|r| !r.failed)
            .map(|r| r.y)
            .chain((!failed).then_some(y))
            .fold(f64::INFINITY, f64::min);
        observations.push(Observation { x: x.clone(), y, t });
        trace.records.push(TraceRecord {
            t,
            x,
            y,
            best_y,
            failed,
        });
    }
    Ok(trace)
}
