use rand::Rng;
use rand_distr::StandardNormal;

use super::{Denoiser, DenoiserInput, LatentImage};
use crate::error::{Error, Result};

/// Mixture of isotropic Gaussians over flattened images.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussianMixture {
    /// `variances[k]` is the per-coordinate variance of component `k`; zero
    /// gives a point mass.
    pub fn new(means: Vec<Vec<f64>>, variances: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let k = means.len();
        if k == 0 || variances.len() != k || weights.len() != k {
            return Err(Error::InvalidParameter(format!(
                "mixture needs matching counts, got {k} means, {} variances, {} weights",
                variances.len(),
                weights.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim || m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("mixture means must share a nonzero dimension".into()));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("mixture variances must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights must be non-negative and sum to 1, got {total}"
            )));
        }
        Ok(Self { means, variances, weights })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let sd = self.variances[k].sqrt();
        self.means[k].iter().map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Mean of the mixture.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (m, w) in self.means.iter().zip(&self.weights) {
            for (o, v) in out.iter_mut().zip(m) {
                *o += w * v;
            }
        }
        out
    }

    /// Covariance of the mixture, row major `dim × dim`.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mean = self.mean();
        let mut cov = vec![vec![0.0; d]; d];
        for ((m, w), var) in self.means.iter().zip(&self.weights).zip(&self.variances) {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += w * (m[i] - mean[i]) * (m[j] - mean[j]);
                }
                cov[i][i] += w * var;
            }
        }
        cov
    }

    /// `E[x0 | x_t]` when `x_t = √ᾱ·x0 + √(1 − ᾱ)·ε`.
    pub fn posterior_mean(&self, x_t: &[f64], alpha_bar: f64) -> Vec<f64> {
        let signal = alpha_bar.sqrt();
        let d = self.dim() as f64;
        // Marginal of x_t given component k is N(√ᾱ·μ_k, v_k·I).
        let stats: Vec<(f64, f64)> = self
            .means
            .iter()
            .zip(&self.variances)
            .zip(&self.weights)
            .map(|((mu, var), w)| {
                let v = alpha_bar * var + (1.0 - alpha_bar);
                let sq: f64 = x_t.iter().zip(mu).map(|(x, m)| (x - signal * m).powi(2)).sum();
                let log_r = w.ln() - 0.5 * d * v.ln() - sq / (2.0 * v);
                (log_r, v)
            })
            .collect();
        let top = stats.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = stats.iter().map(|s| (s.0 - top).exp()).collect();
        let total: f64 = unnorm.iter().sum();

        let mut out = vec![0.0; x_t.len()];
        for (k, mu) in self.means.iter().enumerate() {
            let r = unnorm[k] / total;
            if r == 0.0 {
                continue;
            }
            let gain = signal * self.variances[k] / stats[k].1;
            for ((o, x), m) in out.iter_mut().zip(x_t).zip(mu) {
                *o += r * (m + gain * (x - signal * m));
            }
        }
        out
    }
}

/// Optimal noise predictor for data drawn from a [`GaussianMixture`]: the
/// noise implied by the exact posterior mean.
#[derive(Debug, Clone)]
pub struct GmmDenoiser {
    mixture: GaussianMixture,
}

impl GmmDenoiser {
    pub fn new(mixture: GaussianMixture) -> Self {
        Self { mixture }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }
}

impl Denoiser for GmmDenoiser {
    fn predict_noise(&self, input: &DenoiserInput<'_>) -> Result<LatentImage> {
        let x = input.noisy;
        if x.len() != self.mixture.dim() {
            return Err(Error::ShapeMismatch(format!(
                "mixture has dimension {}, image has {} values",
                self.mixture.dim(),
                x.len()
            )));
        }
        let a = input.alpha_bar;
        if a >= 1.0 {
            return Ok(LatentImage::zeros(x.width(), x.height(), x.channels()));
        }
        let post = self.mixture.posterior_mean(x.as_slice(), a);
        let (signal, sigma) = (a.sqrt(), (1.0 - a).sqrt());
        let eps = x.as_slice().iter().zip(&post).map(|(v, m)| (v - signal * m) / sigma).collect();
        LatentImage::from_vec(x.width(), x.height(), x.channels(), eps)
    }
}
