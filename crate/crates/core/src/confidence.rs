//! Two-hypothesis model-confidence filter.
//!
//! The belief is a distribution over `{β_low, β_high = 1}`. Each observed
//! human control is scored under `N(μ, Σ/β)` for both hypotheses and the
//! belief is updated by Bayes' rule; an ε-static transition then mixes the
//! posterior back toward the uniform prior so that the filter never locks in.
//! The effective β is the belief-weighted average of the two hypotheses.

use serde::{Deserialize, Serialize};

use crate::dynamics::ControlInput;
use crate::error::{Error, Result};
use crate::prediction::Cov2;

pub const DEFAULT_BETA_LOW: f64 = 0.2;
pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBelief {
    pub beta_low: f64,
    pub beta_high: f64,
    pub b_low: f64,
    pub b_high: f64,
    pub epsilon: f64,
}

impl ConfidenceBelief {
    /// Uniform prior over the two hypotheses.
    pub fn new(beta_low: f64, epsilon: f64) -> Result<Self> {
        let b = Self {
            beta_low,
            beta_high: 1.0,
            b_low: 0.5,
            b_high: 0.5,
            epsilon,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_probabilities(self, b_low: f64) -> Result<Self> {
        let b = Self {
            b_low,
            b_high: 1.0 - b_low,
            ..self
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_low > 0.0 && self.beta_low < self.beta_high) || self.beta_high != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_low < beta_high = 1, got ({}, {})",
                self.beta_low, self.beta_high
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !in_unit(self.b_low) || !in_unit(self.b_high) || (self.b_low + self.b_high - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "belief ({}, {}) is not a probability vector",
                self.b_low, self.b_high
            )));
        }
        Ok(())
    }

    /// Posterior after observing `u_obs` under the prediction `N(mu, sigma)`.
    pub fn bayes_update(&self, u_obs: &ControlInput, mu: &[f64; 2], sigma: &Cov2) -> Result<Self> {
        let ll_low = log_likelihood(u_obs, mu, sigma, self.beta_low)?;
        let ll_high = log_likelihood(u_obs, mu, sigma, self.beta_high)?;
        let lp_low = ll_low + self.b_low.ln();
        let lp_high = ll_high + self.b_high.ln();
        if !lp_low.is_finite() && !lp_high.is_finite() {
            log::warn!("degenerate observation {u_obs:?}: both hypotheses have zero likelihood; keeping prior");
            return Ok(*self);
        }
        // Logistic form of the two-term log-sum-exp.
        let b_high = if lp_high >= lp_low {
            1.0 / (1.0 + (lp_low - lp_high).exp())
        } else {
            let r = (lp_high - lp_low).exp();
            r / (1.0 + r)
        };
        Ok(Self {
            b_low: 1.0 - b_high,
            b_high,
            ..*self
        })
    }

    /// Mix the belief with the uniform initial prior at rate ε.
    pub fn epsilon_static(&self) -> Self {
        let mix = |b: f64| (1.0 - self.epsilon) * b + self.epsilon * 0.5;
        Self {
            b_low: mix(self.b_low),
            b_high: mix(self.b_high),
            ..*self
        }
    }

    /// Belief-weighted confidence, always within `[beta_low, beta_high]`.
    pub fn effective_beta(&self) -> f64 {
        (self.beta_low * self.b_low + self.beta_high * self.b_high).clamp(self.beta_low, self.beta_high)
    }
}

/// Bivariate normal density of `u_obs` under `N(mu, sigma / beta)`.
pub fn likelihood(u_obs: &ControlInput, mu: &[f64; 2], sigma: &Cov2, beta: f64) -> Result<f64> {
    log_likelihood(u_obs, mu, sigma, beta).map(f64::exp)
}

pub fn log_likelihood(u_obs: &ControlInput, mu: &[f64; 2], sigma: &Cov2, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let det = sigma.det();
    if !(det > 1e-300) || !(det > 1e-14 * sigma.xx * sigma.yy) {
        return Err(Error::Numerical(format!(
            "prediction covariance is singular (det = {det:e}); cannot evaluate the likelihood"
        )));
    }
    let r = [u_obs.u1 - mu[0], u_obs.u2 - mu[1]];
    // rᵀ Σ⁻¹ r with the closed-form 2×2 inverse.
    let maha = (sigma.yy * r[0] * r[0] - 2.0 * sigma.xy * r[0] * r[1] + sigma.xx * r[1] * r[1]) / det;
    // log N = −log(2π) − ½ log det(Σ/β) − ½ β rᵀΣ⁻¹r, with det(Σ/β) = det Σ / β².
    Ok(-(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() + beta.ln() - 0.5 * beta * maha)
}
