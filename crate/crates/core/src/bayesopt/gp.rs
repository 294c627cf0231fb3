//! Gaussian-process surrogate with a squared-exponential kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated point of the black box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
    /// Per-coordinate `(lower, upper)` bounds of the search box.
    pub domain: Vec<(f64, f64)>,
    /// Monte Carlo candidates per proposal.
    pub candidates: usize,
    pub initial_design: usize,
    /// Fraction of candidates drawn around the incumbents instead of uniformly.
    pub local_fraction: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            signal_variance: 1.0,
            length_scale: 1.0,
            noise_variance: 1e-4,
            domain: vec![(-1.0, 1.0); crate::attributes::N_ATTRIBUTES],
            candidates: 1000,
            initial_design: 5,
            local_fraction: 0.5,
        }
    }
}

impl GpConfig {
    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.signal_variance, self.length_scale, self.noise_variance];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("GP variances and length scale must be positive".into()));
        }
        if self.domain.is_empty() || self.domain.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("domain bounds must satisfy lower < upper".into()));
        }
        if self.candidates == 0 || self.initial_design == 0 {
            return Err(Error::Config("candidate count and initial design must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.local_fraction) {
            return Err(Error::Config("local_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_variance * (-sq / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// Lower-triangular Cholesky factor, row-major `n x n`.
#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub(crate) fn factor(a: &[f64], n: usize) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(Cholesky { n, l })
    }

    /// Solves `L z = b`.
    pub(crate) fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z = b.to_vec();
        for i in 0..n {
            let mut sum = z[i];
            for k in 0..i {
                sum -= self.l[i * n + k] * z[k];
            }
            z[i] = sum / self.l[i * n + i];
        }
        z
    }

    /// Solves `L^T x = z`.
    pub(crate) fn backward(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = z.to_vec();
        for i in (0..n).rev() {
            let mut sum = x[i];
            for k in (i + 1)..n {
                sum -= self.l[k * n + i] * x[k];
            }
            x[i] = sum / self.l[i * n + i];
        }
        x
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }
}

/// Largest jitter added to the diagonal before factorization gives up.
pub const MAX_JITTER: f64 = 1e-6;

/// Fitted GP: observations plus the factorization of `K + σ²I`.
#[derive(Debug, Clone)]
pub struct GpModel {
    config: GpConfig,
    observations: Vec<Observation>,
    chol: Cholesky,
    alpha: Vec<f64>,
    jitter: f64,
}

impl GpModel {
    pub fn fit(observations: &[Observation], config: &GpConfig) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidArgument("GP fit needs at least one observation".into()));
        }
        let n = observations.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = config.kernel(&observations[i].x, &observations[j].x);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let mut jitter = 0.0;
        let chol = loop {
            let mut a = k.clone();
            for i in 0..n {
                a[i * n + i] += config.noise_variance + jitter;
            }
            if let Some(c) = Cholesky::factor(&a, n) {
                break c;
            }
            jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
            if jitter > MAX_JITTER {
                return Err(Error::Factorization(MAX_JITTER));
            }
        };
        let y: Vec<f64> = observations.iter().map(|o| o.y).collect();
        let alpha = chol.solve(&y);
        Ok(GpModel {
            config: config.clone(),
            observations: observations.to_vec(),
            chol,
            alpha,
            jitter,
        })
    }

    pub fn config(&self) -> &GpConfig {
        &self.config
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Diagonal jitter that was needed on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and variance (clamped at zero) at `x`.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let k_star: Vec<f64> = self
            .observations
            .iter()
            .map(|o| self.config.kernel(&o.x, x))
            .collect();
        let mean = k_star.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = self.chol.forward(&k_star);
        let var = self.config.kernel(x, x) - v.iter().map(|z| z * z).sum::<f64>();
        (mean, var.max(0.0))
    }

    /// Lowest observed value.
    pub fn best(&self) -> &Observation {
        self.observations
            .iter()
            .min_by(|a, b| a.y.total_cmp(&b.y))
            .expect("model has observations")
    }
}

pub fn gp_fit(observations: &[Observation], config: &GpConfig) -> Result<GpModel> {
    GpModel::fit(observations, config)
}

pub fn gp_posterior(model: &GpModel, x: &[f64]) -> (f64, f64) {
    model.posterior(x)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `y_best` for a Gaussian with the given moments.
pub fn ei_from_moments(mean: f64, std: f64, y_best: f64) -> f64 {
    let gain = y_best - mean;
    if std < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / std;
    (gain * normal_cdf(z) + std * normal_pdf(z)).max(0.0)
}

/// Expected improvement (minimization) at `x`.
pub fn expected_improvement(model: &GpModel, x: &[f64], y_best: f64) -> f64 {
    let (mean, var) = model.posterior(x);
    ei_from_moments(mean, var.sqrt(), y_best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(x: &[f64], y: f64) -> Observation {
        Observation {
            x: x.to_vec(),
            y,
            t: 0,
        }
    }

    fn config(dim: usize) -> GpConfig {
        GpConfig {
            domain: vec![(-1.0, 1.0); dim],
            ..GpConfig::default()
        }
    }

    #[test]
    fn interpolates_single_point() {
        let cfg = GpConfig {
            noise_variance: 1e-10,
            ..config(2)
        };
        let m = gp_fit(&[obs(&[0.2, 0.1], 3.0)], &cfg).unwrap();
        let (mean, var) = gp_posterior(&m, &[0.2, 0.1]);
        assert!((mean - 3.0).abs() < 1e-6);
        assert!(var < 1e-8);
    }

    #[test]
    fn errors_and_duplicates() {
        assert!(gp_fit(&[], &config(1)).is_err());
        let m = gp_fit(&[obs(&[0.5], 1.0), obs(&[0.5], 1.2)], &config(1)).unwrap();
        let (mean, _) = m.posterior(&[0.5]);
        assert!((mean - 1.1).abs() < 1e-3);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let m = gp_fit(&[obs(&[0.0, 0.0], 2.0), obs(&[0.1, 0.0], 1.0)], &config(2)).unwrap();
        let (mean, var) = m.posterior(&[50.0, 50.0]);
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expected_improvement_cases() {
        assert_eq!(ei_from_moments(1.0, 0.0, 1.0), 0.0);
        assert_eq!(ei_from_moments(0.0, 0.0, 1.0), 1.0);
        let at_zero = ei_from_moments(2.0, 1.0, 2.0);
        assert!((at_zero - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn validate_config() {
        assert!(GpConfig::default().validate().is_ok());
        let bad = GpConfig {
            length_scale: 0.0,
            ..GpConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = GpConfig {
            domain: vec![(1.0, 1.0)],
            ..GpConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
