use crate::error::{Error, Result};

/// Inverse logit, evaluated without overflow for large |x|.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("logit needs p in (0, 1), got {p}")));
    }
    Ok((p / (1.0 - p)).ln())
}

/// Bernoulli variance function `μ(1 − μ)`.
pub fn variance_fn(mu: f64) -> f64 {
    mu * (1.0 - mu)
}

/// Conditional mean and variance-function value of one response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub mu: f64,
    pub nu: f64,
}

impl LinkState {
    pub fn from_eta(eta: f64) -> Self {
        let mu = expit(eta);
        Self { mu, nu: variance_fn(mu) }
    }
}
