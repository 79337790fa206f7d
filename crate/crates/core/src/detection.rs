//! Residue detectors, empirical ROC over time and false-alarm decay rates.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::infoflow::GaussianDist;
use crate::linalg::{self, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    ChiSquared,
    NeymanPearson,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::ChiSquared => "chi_squared",
            DetectorKind::NeymanPearson => "neyman_pearson",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    Fixed(f64),
    /// Pick the threshold so that the detection rate is at least `1 - δ`.
    BetaTarget { delta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    /// Residues summed by the chi-squared statistic.
    pub window: usize,
    pub threshold: ThresholdPolicy,
}

impl DetectorSpec {
    pub fn neyman_pearson(delta: f64) -> Self {
        DetectorSpec {
            kind: DetectorKind::NeymanPearson,
            window: 1,
            threshold: ThresholdPolicy::BetaTarget { delta },
        }
    }

    pub fn chi_squared(window: usize, delta: f64) -> Self {
        DetectorSpec {
            kind: DetectorKind::ChiSquared,
            window,
            threshold: ThresholdPolicy::BetaTarget { delta },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidScenario("detector window must be positive".into()));
        }
        match self.threshold {
            ThresholdPolicy::BetaTarget { delta } if !(delta > 0.0 && delta < 1.0) => {
                Err(Error::InvalidScenario("detector delta must lie in (0, 1)".into()))
            }
            ThresholdPolicy::Fixed(t) if !t.is_finite() => {
                Err(Error::InvalidScenario("detector threshold must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Empirical operating point at time `k`.
///
/// `alpha` is the false-alarm rate `Pr(decide H1 | H0)` and `beta` the
/// detection rate `Pr(decide H1 | H1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocRecord {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub threshold: f64,
}

/// `Σ ‖z_k‖²` over the window; chi-squared with `m · len` degrees of
/// freedom under normal operation.
pub fn chi_squared_stat(window: &[Vector]) -> f64 {
    window.iter().map(|z| z.norm_squared()).sum()
}

/// Sliding-window chi-squared statistic at every step.
pub fn chi_squared_series(z_seq: &[Vector], window: usize) -> Vec<f64> {
    let sq: Vec<f64> = z_seq.iter().map(|z| z.norm_squared()).collect();
    let mut out = Vec::with_capacity(sq.len());
    let mut acc = 0.0;
    for k in 0..sq.len() {
        acc += sq[k];
        if k >= window {
            acc -= sq[k - window];
        }
        // recompute occasionally to avoid drift in long runs
        if k % 1024 == 1023 {
            let lo = (k + 1).saturating_sub(window);
            acc = sq[lo..=k].iter().sum();
        }
        out.push(acc);
    }
    out
}

/// Per-step Gaussian log-likelihood ratio against `N(0, I)`, with the
/// attack density prepared once.
#[derive(Debug, Clone)]
pub struct StepLikelihood {
    mean: Vector,
    cov_inv: Matrix,
    logdet: f64,
}

impl StepLikelihood {
    pub fn new(attack: &GaussianDist) -> Result<Self> {
        Ok(StepLikelihood {
            mean: attack.mean.clone(),
            cov_inv: linalg::inverse_pd(&attack.cov)?,
            logdet: linalg::logdet_pd(&attack.cov)?,
        })
    }

    /// `log p₁(z) - log p₀(z)`.
    pub fn llr(&self, z: &Vector) -> f64 {
        let d = z - &self.mean;
        let q1 = (d.transpose() * &self.cov_inv * &d)[(0, 0)];
        0.5 * (z.norm_squared() - q1 - self.logdet)
    }
}

/// Cumulative log-likelihood ratio `Σ_k [log p₁(z_k) - log p₀(z_k)]` with
/// independent steps and a standard normal null.
pub fn np_llr(z_seq: &[Vector], attack: &[GaussianDist]) -> Result<f64> {
    Ok(np_llr_series(z_seq, attack)?.last().copied().unwrap_or(0.0))
}

/// Running cumulative log-likelihood ratio.
pub fn np_llr_series(z_seq: &[Vector], attack: &[GaussianDist]) -> Result<Vec<f64>> {
    if attack.len() < z_seq.len() {
        return Err(Error::HorizonMismatch {
            expected: z_seq.len(),
            found: attack.len(),
        });
    }
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(z_seq.len());
    for (z, dist) in z_seq.iter().zip(attack) {
        acc += StepLikelihood::new(dist)?.llr(z);
        out.push(acc);
    }
    Ok(out)
}

/// Operating points per step from detector statistics of the null and
/// attacked ensembles (`stats[trial][k]`). Larger statistics favour H1.
pub fn estimate_roc(h0: &[Vec<f64>], h1: &[Vec<f64>], spec: &DetectorSpec) -> Result<Vec<RocRecord>> {
    spec.validate()?;
    if h0.is_empty() || h1.is_empty() {
        return Err(Error::TooFewTrials { trials: 0, delta: 0.0 });
    }
    let horizon = h0[0].len();
    for t in h0.iter().chain(h1) {
        if t.len() != horizon {
            return Err(Error::HorizonMismatch {
                expected: horizon,
                found: t.len(),
            });
        }
    }
    if let ThresholdPolicy::BetaTarget { delta } = spec.threshold {
        if (h1.len() as f64) * delta < 5.0 {
            return Err(Error::TooFewTrials { trials: h1.len(), delta });
        }
    }
    let mut out = Vec::with_capacity(horizon);
    let mut col1 = Vec::with_capacity(h1.len());
    for k in 0..horizon {
        col1.clear();
        col1.extend(h1.iter().map(|t| t[k]));
        let threshold = match spec.threshold {
            ThresholdPolicy::Fixed(t) => t,
            ThresholdPolicy::BetaTarget { delta } => {
                col1.sort_by(f64::total_cmp);
                let idx = libm::floor(delta * col1.len() as f64) as usize;
                col1[idx.min(col1.len() - 1)]
            }
        };
        let beta = col1.iter().filter(|&&s| s >= threshold).count() as f64 / h1.len() as f64;
        let alpha = h0.iter().filter(|t| t[k] >= threshold).count() as f64 / h0.len() as f64;
        out.push(RocRecord {
            k,
            alpha,
            beta,
            threshold,
        });
    }
    Ok(out)
}

/// Least-squares slope of `-log α_k` against `k + 1` over `k ≥ k_min`.
/// Zero rates are censored at `1 / (2 · trials)`.
pub fn decay_rate(alphas: &[f64], k_min: usize, trials: usize) -> Result<f64> {
    let floor = 1.0 / (2.0 * trials.max(1) as f64);
    let pts: Vec<(f64, f64)> = alphas
        .iter()
        .enumerate()
        .skip(k_min)
        .map(|(k, &a)| ((k + 1) as f64, -libm::log(if a > 0.0 { a } else { floor })))
        .collect();
    if pts.len() < 10 {
        return Err(Error::TooFewPoints {
            required: 10,
            found: pts.len(),
        });
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let mx = linalg::mean(&xs);
    let my = linalg::mean(&ys);
    let sxy: Vec<f64> = pts.iter().map(|(x, y)| (x - mx) * (y - my)).collect();
    let sxx: Vec<f64> = xs.iter().map(|x| (x - mx) * (x - mx)).collect();
    Ok(linalg::pairwise_sum(&sxy) / linalg::pairwise_sum(&sxx))
}

/// [`decay_rate`] over the prefix before the first censored (zero) rate.
pub fn decay_rate_uncensored(alphas: &[f64], k_min: usize, trials: usize) -> Result<f64> {
    let end = alphas.iter().position(|&a| a <= 0.0).unwrap_or(alphas.len());
    decay_rate(&alphas[..end], k_min, trials)
}
