//! Exact computations over the full configuration space `{0,1}^m`.
//!
//! Configurations are indexed by a binary counter with the first response as
//! the least significant bit. Everything here costs `O(2^m)` or more and is
//! refused above [`ENUMERATION_CAP`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gee::{two_sided_p, CoefRow};
use crate::model::{expit, logit, n_pairs, pair_index, BinaryPanel, QebdParams};
use crate::rng::{rng_for, SimRng};

/// Largest `m` accepted by enumeration-based routines.
pub const ENUMERATION_CAP: usize = 20;

fn check_cap(m: usize) -> Result<()> {
    if m > ENUMERATION_CAP {
        Err(Error::TooLarge { m, cap: ENUMERATION_CAP })
    } else {
        Ok(())
    }
}

/// Log-weights `yᵀβ + ½yᵀΘy` of every configuration and their log-sum-exp.
#[derive(Debug, Clone)]
pub struct ConfigTable {
    m: usize,
    log_weights: Vec<f64>,
    log_normalizer: f64,
}

impl ConfigTable {
    pub fn build(params: &QebdParams) -> Result<Self> {
        let m = params.m();
        check_cap(m)?;
        let beta = params.beta();
        let theta = params.theta();
        let size = 1usize << m;
        let mut log_weights = vec![0.0; size];
        // lw(c) = lw(c without its top bit h) + β_h + Σ_{a<h, a ∈ c} θ_ah
        for c in 1..size {
            let h = usize::BITS as usize - 1 - c.leading_zeros() as usize;
            let rest = c & !(1 << h);
            let mut lw = log_weights[rest] + beta[h];
            let mut bits = rest;
            while bits != 0 {
                let a = bits.trailing_zeros() as usize;
                lw += theta[pair_index(m, a, h)];
                bits &= bits - 1;
            }
            log_weights[c] = lw;
        }
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = log_weights.iter().map(|lw| (lw - max).exp()).sum();
        Ok(Self { m, log_weights, log_normalizer: max + sum.ln() })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn config(&self, c: usize) -> Vec<u8> {
        (0..self.m).map(|j| ((c >> j) & 1) as u8).collect()
    }

    pub fn log_weight(&self, c: usize) -> f64 {
        self.log_weights[c]
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn probability(&self, c: usize) -> f64 {
        (self.log_weights[c] - self.log_normalizer).exp()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_weights
            .iter()
            .map(|lw| (lw - self.log_normalizer).exp())
            .collect()
    }
}

/// The normalizing constant Λ.
pub fn log_normalizer(params: &QebdParams) -> Result<f64> {
    Ok(ConfigTable::build(params)?.log_normalizer())
}

fn config_index(y: &[u8]) -> Result<usize> {
    y.iter().enumerate().try_fold(0usize, |acc, (j, &v)| match v {
        0 | 1 => Ok(acc | ((v as usize) << j)),
        other => Err(Error::Domain(format!(
            "entry {} of the configuration is {other}, expected 0 or 1",
            j + 1
        ))),
    })
}

pub fn pmf(y: &[u8], params: &QebdParams) -> Result<f64> {
    if y.len() != params.m() {
        return Err(Error::Dimension(format!(
            "configuration has {} entries, model has {}",
            y.len(),
            params.m()
        )));
    }
    let c = config_index(y)?;
    Ok(ConfigTable::build(params)?.probability(c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// `E[Y_j]`.
    pub mean: DVector<f64>,
    /// `Cov[Y]`.
    pub cov: DMatrix<f64>,
    /// `E[Y_i Y_j]`; the diagonal holds `E[Y_j]`.
    pub pair_means: DMatrix<f64>,
}

pub fn exact_moments(params: &QebdParams) -> Result<Moments> {
    let table = ConfigTable::build(params)?;
    let m = table.m();
    let mut pair_means = DMatrix::zeros(m, m);
    for c in 0..table.len() {
        let p = table.probability(c);
        for a in 0..m {
            if c >> a & 1 == 0 {
                continue;
            }
            for b in a..m {
                if c >> b & 1 == 1 {
                    pair_means[(a, b)] += p;
                }
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            pair_means[(a, b)] = pair_means[(b, a)];
        }
    }
    let mean = pair_means.diagonal();
    let mut cov: DMatrix<f64> = &pair_means - &mean * mean.transpose();
    for j in 0..m {
        cov[(j, j)] = mean[j] * (1.0 - mean[j]);
    }
    Ok(Moments { mean, cov, pair_means })
}

/// Indices of the nonzero entries of the sufficient statistic
/// `s(y) = (y, {y_a y_b}_{a<b})`, which is itself a 0/1 vector.
fn active_statistics(m: usize, c: usize, out: &mut Vec<usize>) {
    out.clear();
    for a in 0..m {
        if c >> a & 1 == 1 {
            out.push(a);
        }
    }
    let n_main = out.len();
    for i in 0..n_main {
        for k in i + 1..n_main {
            out.push(m + pair_index(m, out[i], out[k]));
        }
    }
}

/// Mean and covariance of the sufficient statistic under `params`; these
/// are the gradient and Hessian of Λ.
pub fn sufficient_stat_moments(params: &QebdParams) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let table = ConfigTable::build(params)?;
    let m = table.m();
    let d = m + n_pairs(m);
    let mut mean = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    let mut active = Vec::with_capacity(d);
    for c in 0..table.len() {
        let p = table.probability(c);
        active_statistics(m, c, &mut active);
        for (i, &u) in active.iter().enumerate() {
            mean[u] += p;
            for &v in &active[i..] {
                second[(u.min(v), u.max(v))] += p;
            }
        }
    }
    for u in 0..d {
        for v in 0..u {
            second[(u, v)] = second[(v, u)];
        }
    }
    let cov = second - &mean * mean.transpose();
    Ok((mean, cov))
}

/// Draws `n` i.i.d. configurations by inverting the cumulative pmf.
pub fn exact_sampler(params: &QebdParams, n: usize, seed: u64) -> Result<BinaryPanel> {
    let mut rng = rng_for(seed, 0);
    exact_sample_with(params, n, &mut rng)
}

pub(crate) fn exact_sample_with(params: &QebdParams, n: usize, rng: &mut SimRng) -> Result<BinaryPanel> {
    if n == 0 {
        return Err(Error::Dimension("sample size must be at least 1".into()));
    }
    let table = ConfigTable::build(params)?;
    let m = table.m();
    let mut cdf = table.probabilities();
    let mut acc = 0.0;
    for p in cdf.iter_mut() {
        acc += *p;
        *p = acc;
    }
    let total = acc;
    let mut y = Vec::with_capacity(n * m);
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * total;
        let c = cdf.partition_point(|&f| f <= u).min(cdf.len() - 1);
        y.extend((0..m).map(|j| ((c >> j) & 1) as u8));
    }
    BinaryPanel::new(m, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct GibbsOptions {
    /// Full sweeps discarded before the first draw.
    pub burn_in: usize,
    /// Sweeps between consecutive draws.
    pub thin: usize,
}

impl Default for GibbsOptions {
    /// Heuristic defaults; long enough for the moderate dependence seen in
    /// practice, not a convergence guarantee.
    fn default() -> Self {
        Self { burn_in: 1000, thin: 10 }
    }
}

/// Systematic-scan Gibbs chain over `{0,1}^m` with conditionals
/// `logit Pr(Y_j = 1 | rest) = β_j + Σ_s Θ_js y_s`.
pub(crate) struct GibbsChain<'a> {
    beta: &'a [f64],
    theta: &'a DMatrix<f64>,
    state: Vec<u8>,
    field: Vec<f64>,
}

impl<'a> GibbsChain<'a> {
    pub(crate) fn new(beta: &'a [f64], theta: &'a DMatrix<f64>) -> Self {
        let m = beta.len();
        Self { beta, theta, state: vec![0; m], field: vec![0.0; m] }
    }

    pub(crate) fn sweep(&mut self, rng: &mut SimRng) {
        let m = self.beta.len();
        for j in 0..m {
            let p = expit(self.beta[j] + self.field[j]);
            let new = u8::from(rng.gen::<f64>() < p);
            if new != self.state[j] {
                let sign = if new == 1 { 1.0 } else { -1.0 };
                let col = self.theta.column(j);
                for (f, t) in self.field.iter_mut().zip(col.iter()) {
                    *f += sign * t;
                }
                self.state[j] = new;
            }
        }
    }

    pub(crate) fn state(&self) -> &[u8] {
        &self.state
    }
}

pub fn gibbs_sampler(params: &QebdParams, n: usize, opts: GibbsOptions, seed: u64) -> Result<BinaryPanel> {
    let mut rng = rng_for(seed, 0);
    gibbs_sample_with(params.beta(), &params.theta_matrix(), n, opts, &mut rng)
}

pub(crate) fn gibbs_sample_with(
    beta: &[f64],
    theta: &DMatrix<f64>,
    n: usize,
    opts: GibbsOptions,
    rng: &mut SimRng,
) -> Result<BinaryPanel> {
    if n == 0 {
        return Err(Error::Dimension("sample size must be at least 1".into()));
    }
    if opts.thin == 0 {
        return Err(Error::Domain("thin must be at least 1".into()));
    }
    if theta.shape() != (beta.len(), beta.len()) {
        return Err(Error::Dimension("interaction matrix does not match main effects".into()));
    }
    let mut chain = GibbsChain::new(beta, theta);
    for _ in 0..opts.burn_in {
        chain.sweep(rng);
    }
    let mut y = Vec::with_capacity(n * beta.len());
    for _ in 0..n {
        for _ in 0..opts.thin {
            chain.sweep(rng);
        }
        y.extend_from_slice(chain.state());
    }
    BinaryPanel::new(beta.len(), y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    pub max_iter: usize,
    /// Convergence when the sup-norm of the total score drops below this.
    pub tol: f64,
    /// Any |parameter| above this flags divergence.
    pub divergence_threshold: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-8, divergence_threshold: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub estimates: QebdParams,
    /// Inverse observed information, ordered as `(β, θ)`.
    pub covariance: DMatrix<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    pub score_norm: f64,
}

impl MleFit {
    pub fn std_errors(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Wald table in `(β, θ)` order, labelled by `names`.
    pub fn coefficients(&self, names: &[String]) -> Vec<CoefRow> {
        names
            .iter()
            .zip(self.estimates.to_psi())
            .zip(self.std_errors())
            .map(|((name, estimate), se)| {
                let z = estimate / se;
                CoefRow { name: name.clone(), estimate, std_error: se, z, p_value: two_sided_p(z) }
            })
            .collect()
    }
}

/// Marginal logits clamped away from 0 and 1, with no interactions.
pub fn default_init(panel: &BinaryPanel) -> QebdParams {
    let n = panel.n() as f64;
    let lo = 1.0 / (2.0 * n);
    let beta = panel
        .column_means()
        .into_iter()
        .map(|p| logit(p.clamp(lo, 1.0 - lo).clamp(1e-12, 1.0 - 1e-12)).expect("clamped"))
        .collect();
    QebdParams::independent(beta).expect("finite")
}

fn mean_sufficient_stat(panel: &BinaryPanel) -> DVector<f64> {
    let m = panel.m();
    let mut s = DVector::zeros(m + n_pairs(m));
    let mut active = Vec::new();
    for k in 0..panel.n() {
        active_statistics(m, panel.pattern(k), &mut active);
        for &u in &active {
            s[u] += 1.0;
        }
    }
    s / panel.n() as f64
}

/// Newton–Raphson on the exact log-likelihood with step halving.
pub fn mle_fit(panel: &BinaryPanel, init: Option<&QebdParams>, opts: MleOptions) -> Result<MleFit> {
    let m = panel.m();
    check_cap(m)?;
    let n = panel.n() as f64;
    let s_bar = mean_sufficient_stat(panel);
    let mut params = match init {
        Some(p) if p.m() == m => p.clone(),
        Some(p) => {
            return Err(Error::Dimension(format!("initial values for m = {}, panel has m = {m}", p.m())));
        }
        None => default_init(panel),
    };
    let loglik_of = |psi: &DVector<f64>, lambda: f64| n * (s_bar.dot(psi) - lambda);

    let mut psi = DVector::from_vec(params.to_psi());
    let (mut mean_s, mut cov_s) = sufficient_stat_moments(&params)?;
    let mut loglik = loglik_of(&psi, log_normalizer(&params)?);
    let mut iterations = 0;
    let mut converged = false;
    let mut diverged = false;
    let mut score = (&s_bar - &mean_s) * n;

    while iterations < opts.max_iter {
        if score.amax() < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let info = &cov_s * n;
        let step = info
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&score))
            .ok_or_else(|| Error::RankDeficient("information matrix is not positive definite".into()))?;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=30 {
            let trial = &psi + &step * scale;
            let trial_params = QebdParams::from_psi(m, trial.as_slice())?;
            let ll = loglik_of(&trial, log_normalizer(&trial_params)?);
            if ll >= loglik - 1e-12 * loglik.abs().max(1.0) {
                accepted = Some((trial, trial_params, ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((trial, trial_params, ll)) = accepted else {
            break;
        };
        psi = trial;
        params = trial_params;
        loglik = ll;
        if psi.amax() > opts.divergence_threshold {
            diverged = true;
            break;
        }
        (mean_s, cov_s) = sufficient_stat_moments(&params)?;
        score = (&s_bar - &mean_s) * n;
    }
    if !converged && !diverged && score.amax() < opts.tol {
        converged = true;
    }

    let info = &cov_s * n;
    let d = info.nrows();
    let covariance = match info.try_inverse() {
        Some(c) => (&c + c.transpose()) * 0.5,
        None if diverged => DMatrix::from_element(d, d, f64::NAN),
        None => return Err(Error::RankDeficient("observed information is singular".into())),
    };
    Ok(MleFit {
        estimates: params,
        covariance,
        loglik,
        iterations,
        converged: converged && !diverged,
        diverged,
        score_norm: score.amax(),
    })
}

/// `C_j = E{ y⁰_[j] (Y − μ)ᵀ ν_j }` where `μ_s` are the node conditional
/// means and `ν_j = μ_j(1 − μ_j)`, computed by enumeration.
pub fn conditional_residual_moment(params: &QebdParams, j: usize) -> Result<DMatrix<f64>> {
    let m = params.m();
    if j >= m {
        return Err(Error::Dimension(format!("node {j} out of range for m = {m}")));
    }
    let table = ConfigTable::build(params)?;
    let theta = params.theta_matrix();
    let beta = params.beta();
    let mut c_j = DMatrix::zeros(m, m);
    for c in 0..table.len() {
        let p = table.probability(c);
        let y = DVector::from_iterator(m, (0..m).map(|s| ((c >> s) & 1) as f64));
        let eta = &theta * &y;
        let mu = DVector::from_iterator(m, (0..m).map(|s| expit(beta[s] + eta[s])));
        let nu_j = mu[j] * (1.0 - mu[j]);
        let mut y0 = y.clone();
        y0[j] = 0.0;
        c_j += (y0 * (&y - &mu).transpose()) * (p * nu_j);
    }
    Ok(c_j)
}
