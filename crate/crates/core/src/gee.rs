//! Pooled GLM (GGLM) and GEE fitting on a stacked design.
//!
//! Both estimators run through the same Fisher-scoring routine. GGLM and
//! GEE under independence therefore solve identical score equations.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::StackedDesign;
use crate::error::{Error, Result};
use crate::model::{expit, CorrelationKind, PsiVector, WorkingCorrelation};

/// Fraction of the ρ validity bound that moment estimates are clamped to.
const RHO_CLAMP: f64 = 0.99;
const GROWTH_LIMIT: usize = 5;
const MU_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub divergence_threshold: f64,
    /// Starting ψ; GGLM starts at zero and GEE at the GGLM solution.
    pub init: Option<Vec<f64>>,
    pub record_trace: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-8, divergence_threshold: 30.0, init: None, record_trace: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub psi: Vec<f64>,
    pub rho: Option<f64>,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeeFit {
    pub estimates: PsiVector,
    /// `B̂⁻¹`, the model-based covariance.
    pub naive_cov: DMatrix<f64>,
    /// `B̂⁻¹M̂B̂⁻¹`; absent for GGLM.
    pub robust_cov: Option<DMatrix<f64>>,
    pub corr: CorrelationKind,
    pub rho_hat: Option<f64>,
    /// Mean squared Pearson residual.
    pub scale_hat: f64,
    /// Filled for GEE fits under independence.
    pub qic: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    pub trace: Vec<TraceEntry>,
}

/// One row of the coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

pub(crate) fn two_sided_p(z: f64) -> f64 {
    if !z.is_finite() {
        return f64::NAN;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * normal.sf(z.abs())
}

fn diag_sqrt(m: &DMatrix<f64>) -> Vec<f64> {
    m.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
}

impl GeeFit {
    pub fn is_gglm(&self) -> bool {
        self.robust_cov.is_none()
    }

    pub fn naive_std_errors(&self) -> Vec<f64> {
        diag_sqrt(&self.naive_cov)
    }

    pub fn robust_std_errors(&self) -> Option<Vec<f64>> {
        self.robust_cov.as_ref().map(diag_sqrt)
    }

    /// Robust SEs when available, naive otherwise.
    pub fn std_errors(&self) -> Vec<f64> {
        self.robust_std_errors().unwrap_or_else(|| self.naive_std_errors())
    }

    /// Two-sided Wald p-values for `ψ_i = 0` using [`GeeFit::std_errors`].
    pub fn p_values(&self) -> Vec<f64> {
        self.coefficients().into_iter().map(|r| r.p_value).collect()
    }

    pub fn coefficients(&self) -> Vec<CoefRow> {
        self.estimates
            .iter()
            .zip(self.std_errors())
            .map(|((name, estimate), se)| {
                let z = estimate / se;
                CoefRow { name: name.to_string(), estimate, std_error: se, z, p_value: two_sided_p(z) }
            })
            .collect()
    }

    pub fn report(&self) -> GeeReport {
        GeeReport {
            estimator: if self.is_gglm() { "gglm".into() } else { format!("gee-{}", self.corr) },
            coefficients: self.coefficients(),
            naive_cov: rows_of(&self.naive_cov),
            robust_cov: self.robust_cov.as_ref().map(rows_of),
            rho_hat: self.rho_hat,
            scale_hat: self.scale_hat,
            qic: self.qic,
            iterations: self.iterations,
            converged: self.converged,
            diverged: self.diverged,
            trace: (!self.trace.is_empty()).then(|| self.trace.clone()),
        }
    }
}

/// Serializable view of a [`GeeFit`].
#[derive(Debug, Clone, Serialize)]
pub struct GeeReport {
    pub estimator: String,
    pub coefficients: Vec<CoefRow>,
    pub naive_cov: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robust_cov: Option<Vec<Vec<f64>>>,
    pub rho_hat: Option<f64>,
    pub scale_hat: f64,
    pub qic: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEntry>>,
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn symmetrize(c: DMatrix<f64>) -> DMatrix<f64> {
    (&c + c.transpose()) * 0.5
}

fn fitted_means(design: &StackedDesign, psi: &[f64]) -> Vec<f64> {
    (0..design.n_rows()).map(|i| expit(design.linear_predictor(i, psi))).collect()
}

fn pearson(y: f64, mu: f64) -> f64 {
    let s = (mu * (1.0 - mu)).sqrt();
    if s > 0.0 {
        (y - mu) / s
    } else {
        0.0
    }
}

/// Moment estimate of ρ from Pearson residuals, clamped inside the bound.
fn estimate_rho(design: &StackedDesign, mu: &[f64], kind: CorrelationKind) -> Option<f64> {
    let (lo, hi) = kind.rho_bounds(design.m())?;
    let n = design.n_clusters();
    let m = design.m();
    let d = design.n_cols() as f64;
    let r: Vec<f64> = (0..design.n_rows()).map(|i| pearson(design.response(i), mu[i])).collect();
    let df = r.len() as f64 - d;
    let phi = r.iter().map(|v| v * v).sum::<f64>() / df;
    let (num, pairs) = match kind {
        CorrelationKind::Exchangeable => {
            let mut num = 0.0;
            for k in 0..n {
                let rk = &r[design.cluster_rows(k)];
                let total: f64 = rk.iter().sum();
                let squares: f64 = rk.iter().map(|v| v * v).sum();
                num += 0.5 * (total * total - squares);
            }
            (num, (n * m * (m - 1) / 2) as f64)
        }
        CorrelationKind::Ar1 => {
            let mut num = 0.0;
            for k in 0..n {
                let rk = &r[design.cluster_rows(k)];
                num += rk.windows(2).map(|w| w[0] * w[1]).sum::<f64>();
            }
            (num, (n * m.saturating_sub(1)) as f64)
        }
        CorrelationKind::Independence => unreachable!(),
    };
    let denom = phi * (pairs - d);
    let rho = if denom > 0.0 && denom.is_finite() { num / denom } else { 0.0 };
    Some(rho.clamp(RHO_CLAMP * lo, RHO_CLAMP * hi))
}

fn inverse_correlation(kind: CorrelationKind, rho: Option<f64>, m: usize) -> Result<Option<DMatrix<f64>>> {
    if kind == CorrelationKind::Independence {
        return Ok(None);
    }
    let r = WorkingCorrelation { kind, rho }.materialize(m)?;
    if let Some(chol) = r.clone().cholesky() {
        return Ok(Some(chol.inverse()));
    }
    let ridged = r + DMatrix::identity(m, m) * 1e-8;
    ridged
        .cholesky()
        .map(|c| Some(c.inverse()))
        .ok_or_else(|| Error::RankDeficient(format!("working correlation singular at rho = {rho:?}")))
}

/// Bread `Σ_k D_kᵀV_k⁻¹D_k`, total score and per-cluster scores.
struct Accumulated {
    bread: DMatrix<f64>,
    score: DVector<f64>,
    cluster_scores: Vec<DVector<f64>>,
}

fn accumulate(
    design: &StackedDesign,
    mu: &[f64],
    rinv: Option<&DMatrix<f64>>,
    keep_clusters: bool,
) -> Accumulated {
    let d = design.n_cols();
    let m = design.m();
    let mut bread = DMatrix::zeros(d, d);
    let mut score = DVector::zeros(d);
    let mut cluster_scores = Vec::new();
    let mut zt = DMatrix::zeros(m, d);
    let mut resid = DVector::zeros(m);
    for k in 0..design.n_clusters() {
        let rows = design.cluster_rows(k);
        let mut uk = DVector::zeros(d);
        match rinv {
            None => {
                for i in rows {
                    let z = design.row(i);
                    let nu = mu[i] * (1.0 - mu[i]);
                    let e = design.response(i) - mu[i];
                    for a in 0..d {
                        uk[a] += z[a] * e;
                        if z[a] != 0.0 {
                            let wa = nu * z[a];
                            for b in a..d {
                                bread[(a, b)] += wa * z[b];
                            }
                        }
                    }
                }
            }
            Some(rinv) => {
                for (j, i) in rows.enumerate() {
                    let s = (mu[i] * (1.0 - mu[i])).sqrt();
                    resid[j] = pearson(design.response(i), mu[i]);
                    for (a, z) in design.row(i).iter().enumerate() {
                        zt[(j, a)] = s * z;
                    }
                }
                let q = rinv * &resid;
                uk.gemv_tr(1.0, &zt, &q, 0.0);
                let rz = rinv * &zt;
                bread.gemm_tr(1.0, &zt, &rz, 1.0);
            }
        }
        score += &uk;
        if keep_clusters {
            cluster_scores.push(uk);
        }
    }
    if rinv.is_none() {
        bread.fill_lower_triangle_with_upper_triangle();
    }
    Accumulated { bread, score, cluster_scores }
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    a.clone().lu().solve(b)
}

fn invert(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    match a.clone().cholesky() {
        Some(c) => Some(c.inverse()),
        None => a.clone().try_inverse(),
    }
}

struct ScoringResult {
    psi: Vec<f64>,
    rho: Option<f64>,
    iterations: usize,
    converged: bool,
    diverged: bool,
    trace: Vec<TraceEntry>,
}

fn scoring(design: &StackedDesign, kind: CorrelationKind, opts: &FitOptions, init: Vec<f64>) -> Result<ScoringResult> {
    let mut psi = init;
    let mut rho = None;
    let mut trace = Vec::new();
    let mut last_step = f64::INFINITY;
    let mut growth = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut diverged = false;
    while iterations < opts.max_iter {
        let mu = fitted_means(design, &psi);
        rho = estimate_rho(design, &mu, kind);
        let rinv = inverse_correlation(kind, rho, design.m())?;
        let acc = accumulate(design, &mu, rinv.as_ref(), false);
        let delta = match solve_spd(&acc.bread, &acc.score) {
            Some(delta) if delta.iter().all(|v| v.is_finite()) => delta,
            _ if iterations == 0 => {
                return Err(Error::RankDeficient("weighted cross-product of the design is singular".into()));
            }
            _ => {
                diverged = true;
                break;
            }
        };
        iterations += 1;
        for (p, dp) in psi.iter_mut().zip(delta.iter()) {
            *p += dp;
        }
        let max_step = delta.amax();
        let step = delta.norm();
        if opts.record_trace {
            trace.push(TraceEntry { iteration: iterations, psi: psi.clone(), rho, step: max_step });
        }
        if psi.iter().any(|p| !p.is_finite() || p.abs() > opts.divergence_threshold) {
            diverged = true;
            break;
        }
        if max_step < opts.tol {
            converged = true;
            break;
        }
        growth = if step > last_step { growth + 1 } else { 0 };
        if growth >= GROWTH_LIMIT {
            diverged = true;
            break;
        }
        last_step = step;
    }
    Ok(ScoringResult { psi, rho, iterations, converged, diverged, trace })
}

fn check_init(design: &StackedDesign, init: &[f64]) -> Result<()> {
    if init.len() != design.n_cols() {
        return Err(Error::Dimension(format!(
            "initial value has {} entries, design has {} columns",
            init.len(),
            design.n_cols()
        )));
    }
    Ok(())
}

fn check_design(design: &StackedDesign) -> Result<()> {
    if design.n_rows() == 0 {
        return Err(Error::Dimension("design has no rows".into()));
    }
    if let Some(c) = (0..design.n_cols()).find(|&c| (0..design.n_rows()).all(|i| design.row(i)[c] == 0.0)) {
        return Err(Error::RankDeficient(format!("column '{}' is identically zero", design.layout().name(c))));
    }
    Ok(())
}

fn scale_of(design: &StackedDesign, mu: &[f64]) -> f64 {
    let ss: f64 = (0..design.n_rows()).map(|i| pearson(design.response(i), mu[i]).powi(2)).sum();
    ss / design.n_rows() as f64
}

fn nan_matrix(d: usize) -> DMatrix<f64> {
    DMatrix::from_element(d, d, f64::NAN)
}

/// Pooled logistic regression on all stacked rows, ignoring clustering.
pub fn fit_gglm(design: &StackedDesign, opts: &FitOptions) -> Result<GeeFit> {
    check_design(design)?;
    let init = opts.init.clone().unwrap_or_else(|| vec![0.0; design.n_cols()]);
    check_init(design, &init)?;
    let res = scoring(design, CorrelationKind::Independence, opts, init)?;
    let mu = fitted_means(design, &res.psi);
    let acc = accumulate(design, &mu, None, false);
    let d = design.n_cols();
    let naive_cov = match invert(&acc.bread) {
        Some(c) => symmetrize(c),
        None if res.diverged || !res.converged => nan_matrix(d),
        None => return Err(Error::RankDeficient("Fisher information is singular".into())),
    };
    Ok(GeeFit {
        estimates: PsiVector::new(design.layout().clone(), res.psi)?,
        naive_cov,
        robust_cov: None,
        corr: CorrelationKind::Independence,
        rho_hat: None,
        scale_hat: scale_of(design, &mu),
        qic: None,
        iterations: res.iterations,
        converged: res.converged,
        diverged: res.diverged,
        trace: res.trace,
    })
}

/// GEE fit under the given working correlation with moment-estimated ρ.
pub fn fit_gee(design: &StackedDesign, kind: CorrelationKind, opts: &FitOptions) -> Result<GeeFit> {
    check_design(design)?;
    let init = match (&opts.init, kind) {
        (Some(init), _) => init.clone(),
        (None, CorrelationKind::Independence) => vec![0.0; design.n_cols()],
        (None, _) => {
            let start = FitOptions { init: None, record_trace: false, ..opts.clone() };
            let pooled = fit_gglm(design, &start)?;
            if pooled.diverged {
                vec![0.0; design.n_cols()]
            } else {
                pooled.estimates.values().to_vec()
            }
        }
    };
    check_init(design, &init)?;
    let res = scoring(design, kind, opts, init)?;
    let mu = fitted_means(design, &res.psi);
    let rho_hat = estimate_rho(design, &mu, kind).or(res.rho);
    let (naive_cov, robust_cov) = match sandwich_covariance(design, &res.psi, kind, rho_hat) {
        Ok(pair) => pair,
        Err(_) if res.diverged || !res.converged => {
            let d = design.n_cols();
            (nan_matrix(d), nan_matrix(d))
        }
        Err(e) => return Err(e),
    };
    let mut fit = GeeFit {
        estimates: PsiVector::new(design.layout().clone(), res.psi)?,
        naive_cov,
        robust_cov: Some(robust_cov),
        corr: kind,
        rho_hat,
        scale_hat: scale_of(design, &mu),
        qic: None,
        iterations: res.iterations,
        converged: res.converged,
        diverged: res.diverged,
        trace: res.trace,
    };
    if kind == CorrelationKind::Independence && !fit.diverged {
        fit.qic = Some(quasi_likelihood(&fit, design)?.qic);
    }
    Ok(fit)
}

/// Naive `B̂⁻¹` and robust `B̂⁻¹M̂B̂⁻¹` covariances at `psi`.
pub fn sandwich_covariance(
    design: &StackedDesign,
    psi: &[f64],
    kind: CorrelationKind,
    rho: Option<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_init(design, psi)?;
    if psi.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("psi has non-finite entries".into()));
    }
    let mu = fitted_means(design, psi);
    let rinv = inverse_correlation(kind, rho, design.m())?;
    let acc = accumulate(design, &mu, rinv.as_ref(), true);
    let d = design.n_cols();
    let mut meat = DMatrix::zeros(d, d);
    for u in &acc.cluster_scores {
        meat.ger(1.0, u, u, 1.0);
    }
    let binv = invert(&acc.bread).ok_or_else(|| Error::RankDeficient("bread matrix is singular".into()))?;
    let binv = symmetrize(binv);
    let robust = symmetrize(&binv * meat * &binv);
    Ok((binv, robust))
}

/// Pieces of the quasi-likelihood information criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiLik {
    /// `Σ y log μ̂ + (1 − y) log(1 − μ̂)`.
    pub value: f64,
    /// `B̂(ψ̂; I_m)`.
    pub omega_hat: DMatrix<f64>,
    pub j_hat: DMatrix<f64>,
    /// `trace(Ω̂Ĵ)` divided by the Pearson scale.
    pub penalty: f64,
    pub qic: f64,
}

/// Quasi-likelihood and QIC of an independence GEE fit.
pub fn quasi_likelihood(fit: &GeeFit, design: &StackedDesign) -> Result<QuasiLik> {
    if fit.corr != CorrelationKind::Independence {
        return Err(Error::Config(format!(
            "QIC is defined for independence fits only, got {}",
            fit.corr
        )));
    }
    let j_hat = fit
        .robust_cov
        .clone()
        .ok_or_else(|| Error::Config("QIC needs a robust covariance (GEE fit)".into()))?;
    let psi = fit.estimates.values();
    let mu = fitted_means(design, psi);
    let value: f64 = (0..design.n_rows())
        .map(|i| {
            let m = mu[i].clamp(MU_CLAMP, 1.0 - MU_CLAMP);
            let y = design.response(i);
            y * m.ln() + (1.0 - y) * (1.0 - m).ln()
        })
        .sum();
    let omega_hat = accumulate(design, &mu, None, false).bread;
    let penalty = (&omega_hat * &j_hat).trace() / fit.scale_hat;
    Ok(QuasiLik { value, omega_hat, j_hat, penalty, qic: -2.0 * value + 2.0 * penalty })
}

pub fn qic(fit: &GeeFit, design: &StackedDesign) -> Result<f64> {
    quasi_likelihood(fit, design).map(|q| q.qic)
}

fn scores_at(design: &StackedDesign, mu: &[f64], corr: &WorkingCorrelation) -> Result<Vec<DVector<f64>>> {
    let rinv = match corr.kind {
        CorrelationKind::Independence => None,
        _ => inverse_correlation(corr.kind, corr.rho, design.m())?,
    };
    Ok(accumulate(design, mu, rinv.as_ref(), true).cluster_scores)
}

/// Per-cluster estimating functions `W̃_k A_k V_k⁻¹(Y_k − μ_k)` at a fixed
/// ψ and fixed working correlation.
pub fn estimating_function_contributions(
    design: &StackedDesign,
    psi: &[f64],
    corr: &WorkingCorrelation,
) -> Result<Vec<DVector<f64>>> {
    check_init(design, psi)?;
    scores_at(design, &fitted_means(design, psi), corr)
}

/// The summed estimating function `φ(ψ; R_ρ)`.
pub fn estimating_function_value(
    design: &StackedDesign,
    psi: &[f64],
    corr: &WorkingCorrelation,
) -> Result<DVector<f64>> {
    let parts = estimating_function_contributions(design, psi, corr)?;
    Ok(parts.into_iter().fold(DVector::zeros(design.n_cols()), |acc, u| acc + u))
}

/// As [`estimating_function_value`], with fitted means supplied directly.
pub fn estimating_function_with_means(
    design: &StackedDesign,
    mu: &[f64],
    corr: &WorkingCorrelation,
) -> Result<DVector<f64>> {
    if mu.len() != design.n_rows() {
        return Err(Error::Dimension(format!("{} means for {} rows", mu.len(), design.n_rows())));
    }
    let parts = scores_at(design, mu, corr)?;
    Ok(parts.into_iter().fold(DVector::zeros(design.n_cols()), |acc, u| acc + u))
}
