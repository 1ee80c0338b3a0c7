//! Data generators and the Monte Carlo replication engine.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{expand, StackedDesign};
use crate::error::{Error, Result};
use crate::exact::{exact_sample_with, gibbs_sample_with, mle_fit, GibbsOptions, MleOptions, ENUMERATION_CAP};
use crate::gee::{fit_gee, fit_gglm, FitOptions};
use crate::model::{
    expit, pairs, BinaryPanel, CorrelationKind, Covariates, Family, InteractionKernel, KernelFn, ModelSpec,
    QebdParams,
};
use crate::rng::{rng_for, SimRng, RNG_ALGORITHM};

/// First observation time of the transition-model scenario.
pub const MARKOV_START_TIME: usize = 7;

/// Gibbs settings for the QELR generators.
pub const QELR_GIBBS: GibbsOptions = GibbsOptions { burn_in: 2000, thin: 20 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Mle,
    Gglm,
    GeeInd,
    GeeExc,
    GeeAr1,
}

impl Estimator {
    pub const ALL: [Estimator; 5] =
        [Estimator::Mle, Estimator::Gglm, Estimator::GeeInd, Estimator::GeeExc, Estimator::GeeAr1];

    pub fn key(self) -> &'static str {
        match self {
            Estimator::Mle => "mle",
            Estimator::Gglm => "gglm",
            Estimator::GeeInd => "gee-ind",
            Estimator::GeeExc => "gee-exc",
            Estimator::GeeAr1 => "gee-ar1",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Mle => "MLE",
            Estimator::Gglm => "GGLM",
            Estimator::GeeInd => "GEE-IND",
            Estimator::GeeExc => "GEE-EXC",
            Estimator::GeeAr1 => "GEE-AR1",
        }
    }

    pub fn correlation(self) -> Option<CorrelationKind> {
        match self {
            Estimator::GeeInd => Some(CorrelationKind::Independence),
            Estimator::GeeExc => Some(CorrelationKind::Exchangeable),
            Estimator::GeeAr1 => Some(CorrelationKind::Ar1),
            Estimator::Mle | Estimator::Gglm => None,
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        Estimator::ALL
            .into_iter()
            .find(|e| e.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}' (expected mle, gglm, gee-ind, gee-exc or gee-ar1)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReDenominator {
    /// Mean standard error of the reference estimator.
    MleSe,
    /// Sample standard deviation of the reference estimator's estimates.
    EmpSd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    #[default]
    Exact,
    Gibbs,
}

/// True parameter values. QEBD uses `beta` and `theta`; the regression
/// families use `beta` for covariate effects and `gamma` for interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma: Vec<f64>,
}

impl Truth {
    /// Truth in design-column order.
    pub fn psi(&self) -> Vec<f64> {
        let tail = if self.theta.is_empty() { &self.gamma } else { &self.theta };
        self.beta.iter().chain(tail).copied().collect()
    }
}

fn default_name() -> String {
    "scenario".into()
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub family: Family,
    pub truth: Truth,
    pub n: usize,
    /// Cluster size; occasions for the transition model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub re_denominator: ReDenominator,
    /// Estimator whose SE or spread is the R.E. denominator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Estimator>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gibbs: Option<GibbsOptions>,
}

const CONFIG_KEYS: [&str; 13] = [
    "name",
    "family",
    "truth",
    "n",
    "m",
    "replicates",
    "seed",
    "estimators",
    "re_denominator",
    "reference",
    "alpha",
    "sampler",
    "gibbs",
];

impl ScenarioConfig {
    /// Parses and validates a JSON scenario; unknown keys are all reported.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config("scenario must be a JSON object".into()))?;
        let unknown: Vec<&str> = obj.keys().map(String::as_str).filter(|k| !CONFIG_KEYS.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        if let Some(truth) = obj.get("truth").and_then(|t| t.as_object()) {
            let bad: Vec<&str> = truth
                .keys()
                .map(String::as_str)
                .filter(|k| !["beta", "theta", "gamma"].contains(k))
                .collect();
            if !bad.is_empty() {
                return Err(Error::Config(format!("unknown config keys: truth.{}", bad.join(", truth."))));
            }
        }
        let cfg: ScenarioConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid scenario: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Cluster size after family defaults.
    pub fn cluster_size(&self) -> usize {
        match self.family {
            Family::Qebd => self.m.unwrap_or(self.truth.beta.len()),
            Family::Markov => self.m.unwrap_or(4),
            Family::QelrCi | Family::QelrLinear => self.m.unwrap_or(15),
        }
    }

    pub fn reference_estimator(&self) -> Estimator {
        self.reference.unwrap_or_else(|| {
            if self.estimators.contains(&Estimator::Mle) {
                Estimator::Mle
            } else {
                self.estimators[0]
            }
        })
    }

    pub fn gibbs_options(&self) -> GibbsOptions {
        self.gibbs.unwrap_or(match self.family {
            Family::QelrCi | Family::QelrLinear => QELR_GIBBS,
            _ => GibbsOptions::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if let Some(g) = self.gibbs {
            if g.thin == 0 {
                return bad("gibbs.thin must be at least 1".into());
            }
        }
        let m = self.cluster_size();
        let t = &self.truth;
        match self.family {
            Family::Qebd => {
                if m < 2 || t.beta.len() != m || t.theta.len() != m * (m - 1) / 2 || !t.gamma.is_empty() {
                    return bad(format!("qebd truth needs {m} beta and {} theta values", m * m.saturating_sub(1) / 2));
                }
            }
            Family::Markov => {
                if t.beta.len() != 3 || t.gamma.is_empty() || !t.theta.is_empty() {
                    return bad("markov truth needs beta = (intercept, smoking, time) and at least one gamma".into());
                }
                if m <= t.gamma.len() {
                    return bad(format!("markov scenario with {} lags needs more than {} occasions", t.gamma.len(), m));
                }
            }
            Family::QelrCi | Family::QelrLinear => {
                if t.beta.is_empty() || !t.theta.is_empty() {
                    return bad("qelr truth needs beta (intercept first) and gamma".into());
                }
                let want_ci = self.family == Family::QelrCi;
                if (want_ci && t.gamma.len() != 1) || (!want_ci && t.gamma.is_empty()) {
                    return bad(format!("{} truth has {} gamma values", self.family, t.gamma.len()));
                }
                if m < 2 {
                    return bad("qelr needs m >= 2".into());
                }
            }
        }
        if self.estimators.contains(&Estimator::Mle) {
            match self.family {
                Family::Markov => {}
                Family::Qebd if m <= ENUMERATION_CAP => {}
                _ => {
                    return bad(format!(
                        "mle is available for qebd with m <= {ENUMERATION_CAP} and for markov, not {} with m = {m}",
                        self.family
                    ))
                }
            }
        }
        let reference = self.reference_estimator();
        if !self.estimators.contains(&reference) {
            return bad(format!("reference estimator {} is not among the estimators", reference.key()));
        }
        Ok(())
    }
}

/// The bundled scenarios: `table1`, `table2`, `table3-ci`, `table3-linear`.
pub fn bundled_config(name: &str) -> Option<ScenarioConfig> {
    let text = match name {
        "table1" => include_str!("../configs/table1.json"),
        "table2" => include_str!("../configs/table2.json"),
        "table3-ci" => include_str!("../configs/table3-ci.json"),
        "table3-linear" => include_str!("../configs/table3-linear.json"),
        _ => return None,
    };
    Some(ScenarioConfig::from_json(text).expect("bundled config is valid"))
}

pub const BUNDLED_CONFIGS: [&str; 4] = ["table1", "table2", "table3-ci", "table3-linear"];

// ---------------------------------------------------------------- generators

/// Transition-model data: `logit Pr(Y_t = 1 | past) = β0 + β1 S + β2 t +
/// Σ_s γ_s y_{t−s}` for `t = 7, 8, …`, pre-sample responses read as 0 and
/// `S ~ Bernoulli(1/2)` per subject.
pub fn gen_markov(beta: &[f64], gamma: &[f64], n: usize, occasions: usize, seed: u64) -> Result<(BinaryPanel, Covariates)> {
    markov_with(beta, gamma, n, occasions, &mut rng_for(seed, 0))
}

fn markov_with(
    beta: &[f64],
    gamma: &[f64],
    n: usize,
    occasions: usize,
    rng: &mut SimRng,
) -> Result<(BinaryPanel, Covariates)> {
    if beta.len() != 3 {
        return Err(Error::Dimension(format!("markov needs 3 beta values, got {}", beta.len())));
    }
    let mut y = Vec::with_capacity(n * occasions);
    let mut x = Vec::with_capacity(n * occasions * 3);
    for _ in 0..n {
        let s = f64::from(u8::from(rng.gen::<bool>()));
        let start = y.len();
        for t in 0..occasions {
            let time = (MARKOV_START_TIME + t) as f64;
            let lagged: f64 = gamma
                .iter()
                .enumerate()
                .filter(|(s, _)| t > *s)
                .map(|(s, g)| g * f64::from(y[start + t - s - 1]))
                .sum();
            let eta = beta[0] + beta[1] * s + beta[2] * time + lagged;
            y.push(u8::from(rng.gen::<f64>() < expit(eta)));
            x.extend_from_slice(&[1.0, s, time]);
        }
    }
    let names = ["intercept", "smoking", "time"].map(String::from).to_vec();
    Ok((BinaryPanel::new(occasions, y)?, Covariates::new(n, occasions, names, x)?))
}

/// QEBD data by exact inversion or by Gibbs sampling.
pub fn gen_qebd(truth: &QebdParams, n: usize, seed: u64, method: SamplerKind, gibbs: GibbsOptions) -> Result<BinaryPanel> {
    qebd_with(truth, n, method, gibbs, &mut rng_for(seed, 0))
}

fn qebd_with(truth: &QebdParams, n: usize, method: SamplerKind, gibbs: GibbsOptions, rng: &mut SimRng) -> Result<BinaryPanel> {
    match method {
        SamplerKind::Exact => exact_sample_with(truth, n, rng),
        SamplerKind::Gibbs => gibbs_sample_with(truth.beta(), &truth.theta_matrix(), n, gibbs, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QelrFamily {
    Ci,
    Linear,
}

/// One simulated QELR data set with its observed covariates and kernels.
#[derive(Debug, Clone)]
pub struct QelrData {
    pub panel: BinaryPanel,
    pub covariates: Covariates,
    /// Empty for the common-interaction family.
    pub kernels: Vec<InteractionKernel>,
    /// Node characteristics `u^ℓ` behind each kernel.
    pub characteristics: Vec<Vec<u32>>,
}

impl QelrData {
    pub fn spec(&self) -> ModelSpec {
        if self.kernels.is_empty() {
            ModelSpec::QelrCi { main: self.covariates.clone() }
        } else {
            ModelSpec::QelrLinear { main: self.covariates.clone(), kernels: self.kernels.clone() }
        }
    }
}

/// QELR data: `x_kj` has an intercept followed by `len(beta) − 1`
/// independent standard normals per cluster and node; for the linear family
/// each kernel is the equality indicator of node characteristics drawn
/// uniformly from {1, 2, 3}. Each cluster is drawn by its own Gibbs chain.
pub fn gen_qelr(
    beta: &[f64],
    gamma: &[f64],
    n: usize,
    m: usize,
    seed: u64,
    family: QelrFamily,
    gibbs: GibbsOptions,
) -> Result<QelrData> {
    qelr_with(beta, gamma, n, m, family, gibbs, &mut rng_for(seed, 0))
}

fn qelr_with(
    beta: &[f64],
    gamma: &[f64],
    n: usize,
    m: usize,
    family: QelrFamily,
    gibbs: GibbsOptions,
    rng: &mut SimRng,
) -> Result<QelrData> {
    if beta.is_empty() {
        return Err(Error::Dimension("qelr needs an intercept".into()));
    }
    let (kernels, characteristics, theta) = match family {
        QelrFamily::Ci => {
            if gamma.len() != 1 {
                return Err(Error::Dimension("common interaction takes one gamma".into()));
            }
            let theta = DMatrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { gamma[0] });
            (Vec::new(), Vec::new(), theta)
        }
        QelrFamily::Linear => {
            if gamma.is_empty() {
                return Err(Error::Dimension("linear interaction needs at least one gamma".into()));
            }
            let mut kernels = Vec::with_capacity(gamma.len());
            let mut chars = Vec::with_capacity(gamma.len());
            let mut theta = DMatrix::zeros(m, m);
            for (l, g) in gamma.iter().enumerate() {
                let u: Vec<u32> = (0..m).map(|_| rng.gen_range(1..=3)).collect();
                let uf: Vec<f64> = u.iter().map(|&v| f64::from(v)).collect();
                let kernel = InteractionKernel::from_characteristics(format!("gamma{}", l + 1), &uf, KernelFn::EqualityIndicator)?;
                theta += kernel.weights() * *g;
                kernels.push(kernel);
                chars.push(u);
            }
            (kernels, chars, theta)
        }
    };
    let p = beta.len();
    let mut names = vec!["intercept".to_string()];
    names.extend((1..p).map(|i| format!("x{i}")));
    let mut x = Vec::with_capacity(n * m * p);
    let mut y = Vec::with_capacity(n * m);
    let mut node_beta = vec![0.0; m];
    for _ in 0..n {
        for b in node_beta.iter_mut() {
            x.push(1.0);
            let mut eta = beta[0];
            for coef in &beta[1..] {
                let v: f64 = rng.sample(StandardNormal);
                x.push(v);
                eta += coef * v;
            }
            *b = eta;
        }
        let draw = gibbs_sample_with(&node_beta, &theta, 1, gibbs, rng)?;
        y.extend_from_slice(draw.row(0));
    }
    Ok(QelrData {
        panel: BinaryPanel::new(m, y)?,
        covariates: Covariates::new(n, m, names, x)?,
        kernels,
        characteristics,
    })
}

/// One generated data set with the node characteristics behind any kernels.
#[derive(Debug, Clone)]
pub struct Generated {
    pub spec: ModelSpec,
    pub panel: BinaryPanel,
    /// `(kernel name, u)` per kernel of the linear QELR family.
    pub characteristics: Vec<(String, Vec<u32>)>,
}

/// Generates one data set of a scenario from replicate stream `replicate`.
pub fn generate(cfg: &ScenarioConfig, replicate: u64) -> Result<(ModelSpec, BinaryPanel)> {
    generate_full(cfg, replicate).map(|g| (g.spec, g.panel))
}

pub fn generate_full(cfg: &ScenarioConfig, replicate: u64) -> Result<Generated> {
    let mut rng = rng_for(cfg.seed, replicate);
    let m = cfg.cluster_size();
    let t = &cfg.truth;
    match cfg.family {
        Family::Qebd => {
            let truth = QebdParams::new(t.beta.clone(), t.theta.clone())?;
            let panel = qebd_with(&truth, cfg.n, cfg.sampler, cfg.gibbs_options(), &mut rng)?;
            Ok(Generated { spec: ModelSpec::Qebd { pairs: pairs(m) }, panel, characteristics: Vec::new() })
        }
        Family::Markov => {
            let (panel, x) = markov_with(&t.beta, &t.gamma, cfg.n, m, &mut rng)?;
            let spec = ModelSpec::Markov { main: x, lags: (1..=t.gamma.len()).collect() };
            Ok(Generated { spec, panel, characteristics: Vec::new() })
        }
        Family::QelrCi | Family::QelrLinear => {
            let fam = if cfg.family == Family::QelrCi { QelrFamily::Ci } else { QelrFamily::Linear };
            let data = qelr_with(&t.beta, &t.gamma, cfg.n, m, fam, cfg.gibbs_options(), &mut rng)?;
            let characteristics = data
                .kernels
                .iter()
                .map(|k| k.name().to_string())
                .zip(data.characteristics.iter().cloned())
                .collect();
            Ok(Generated { spec: data.spec(), panel: data.panel, characteristics })
        }
    }
}

// ---------------------------------------------------------------- replication

/// Estimates and standard errors of one converged fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// Fits `estimator` to a generated data set; `None` marks divergence or
/// non-convergence.
pub fn fit_estimator(estimator: Estimator, design: &StackedDesign, panel: &BinaryPanel, family: Family) -> Option<FitRecord> {
    let opts = FitOptions::default();
    let record = match (estimator, family) {
        (Estimator::Mle, Family::Qebd) => {
            let fit = mle_fit(panel, None, MleOptions::default()).ok()?;
            if !fit.converged {
                return None;
            }
            FitRecord { std_errors: fit.std_errors(), estimates: fit.estimates.to_psi() }
        }
        (Estimator::Mle | Estimator::Gglm, _) => {
            let fit = fit_gglm(design, &opts).ok()?;
            if !fit.converged {
                return None;
            }
            FitRecord { std_errors: fit.std_errors(), estimates: fit.estimates.values().to_vec() }
        }
        (_, _) => {
            let kind = estimator.correlation().expect("gee estimator");
            let fit = fit_gee(design, kind, &opts).ok()?;
            if !fit.converged {
                return None;
            }
            FitRecord { std_errors: fit.std_errors(), estimates: fit.estimates.values().to_vec() }
        }
    };
    let finite = record.estimates.iter().chain(&record.std_errors).all(|v| v.is_finite());
    finite.then_some(record)
}

struct ReplicateOutcome {
    fits: Vec<Option<FitRecord>>,
    seconds: Vec<f64>,
}

fn run_replicate(cfg: &ScenarioConfig, replicate: u64) -> Result<ReplicateOutcome> {
    let (spec, panel) = generate(cfg, replicate)?;
    let design = expand(&spec, &panel)?;
    let mut fits = Vec::with_capacity(cfg.estimators.len());
    let mut seconds = Vec::with_capacity(cfg.estimators.len());
    for &est in &cfg.estimators {
        let start = Instant::now();
        fits.push(fit_estimator(est, &design, &panel, cfg.family));
        seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(ReplicateOutcome { fits, seconds })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub parameter: String,
    pub truth: f64,
    pub estimator: Estimator,
    /// Replicates that converged.
    pub used: usize,
    pub bias: Option<f64>,
    pub mean_se: Option<f64>,
    pub emp_sd: Option<f64>,
    pub re: Option<f64>,
    pub pw: Option<f64>,
    pub divergence_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationReport {
    pub name: String,
    pub family: Family,
    pub n: usize,
    pub m: usize,
    pub replicates: usize,
    pub seed: u64,
    pub rng: String,
    pub estimators: Vec<Estimator>,
    pub re_denominator: ReDenominator,
    pub reference: Estimator,
    pub alpha: f64,
    pub parameters: Vec<String>,
    pub truth: Vec<f64>,
    pub rows: Vec<MetricRow>,
    pub notes: Vec<String>,
    /// Mean wall-clock seconds per fit; not part of the serialized report.
    #[serde(skip)]
    pub mean_seconds: Vec<(Estimator, f64)>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let mu = mean(v)?;
    Some((v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

impl ReplicationReport {
    pub fn row(&self, parameter: &str, estimator: Estimator) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.parameter == parameter && r.estimator == estimator)
    }

    pub fn divergence_rate(&self, estimator: Estimator) -> Option<f64> {
        self.rows.iter().find(|r| r.estimator == estimator).map(|r| r.divergence_rate)
    }

    /// One line per (parameter, estimator); full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,truth,estimator,used,bias,mean_se,emp_sd,re,pw,divergence_rate\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.parameter,
                r.truth,
                r.estimator.key(),
                r.used,
                opt(r.bias),
                opt(r.mean_se),
                opt(r.emp_sd),
                opt(r.re),
                opt(r.pw),
                r.divergence_rate
            );
        }
        out
    }

    /// Aligned table with one line per parameter and a column group per
    /// estimator.
    pub fn to_table(&self) -> String {
        let denom = match self.re_denominator {
            ReDenominator::MleSe => format!("{} S.E.", self.reference.label()),
            ReDenominator::EmpSd => format!("Emp.S.D. ({})", self.reference.label()),
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}: family={} n={} m={} replicates={} seed={}; R.E. denominator: {denom}",
            self.name, self.family, self.n, self.m, self.replicates, self.seed
        );
        let mut header = format!("{:<12} {:>8} {:>9}", "parameter", "truth", "ref");
        for e in &self.estimators {
            let _ = write!(header, " | {:^31}", e.label());
        }
        let _ = writeln!(out, "{header}");
        let mut sub = format!("{:<12} {:>8} {:>9}", "", "", "");
        for _ in &self.estimators {
            let _ = write!(sub, " | {:>7} {:>7} {:>7} {:>7}", "bias", "s.e.", "r.e.", "pw");
        }
        let _ = writeln!(out, "{sub}");
        for (p, name) in self.parameters.iter().enumerate() {
            let reference = self.row(name, self.reference).and_then(|r| match self.re_denominator {
                ReDenominator::MleSe => r.mean_se,
                ReDenominator::EmpSd => r.emp_sd,
            });
            let mut line = format!("{:<12} {:>8.3} {:>9}", name, self.truth[p], fmt_opt(reference));
            for &e in &self.estimators {
                let r = self.row(name, e).expect("row per parameter and estimator");
                let _ = write!(
                    line,
                    " | {:>7} {:>7} {:>7} {:>7}",
                    fmt_opt(r.bias),
                    fmt_opt(r.mean_se),
                    fmt_opt(r.re),
                    fmt_opt(r.pw)
                );
            }
            let _ = writeln!(out, "{line}");
        }
        let mut div = format!("{:<12} {:>8} {:>9}", "divergence", "", "");
        for &e in &self.estimators {
            let _ = write!(div, " | {:>31}", fmt_opt(self.divergence_rate(e)));
        }
        let _ = writeln!(out, "{div}");
        for note in &self.notes {
            let _ = writeln!(out, "note: {note}");
        }
        out
    }

    pub fn timing_table(&self) -> String {
        let mut out = String::from("estimator  mean_seconds\n");
        for (e, s) in &self.mean_seconds {
            let _ = writeln!(out, "{:<9}  {s:.6}", e.label());
        }
        out
    }
}

/// Runs a scenario. Replicate `r` draws from stream `r` of the scenario
/// seed, so results do not depend on `workers` (0 = all cores).
pub fn run_replications(cfg: &ScenarioConfig, workers: usize) -> Result<ReplicationReport> {
    cfg.validate()?;
    if cfg.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<ReplicateOutcome> = pool.install(|| {
        (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|r| run_replicate(cfg, r))
            .collect::<Result<_>>()
    })?;

    let (spec, panel) = generate(cfg, 0)?;
    let layout = expand(&spec, &panel)?.layout().clone();
    let parameters = layout.names().to_vec();
    let truth = cfg.truth.psi();
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - cfg.alpha / 2.0);
    let reps = cfg.replicates as f64;

    let mut rows = Vec::with_capacity(parameters.len() * cfg.estimators.len());
    for (p, name) in parameters.iter().enumerate() {
        let mut group = Vec::with_capacity(cfg.estimators.len());
        for e in 0..cfg.estimators.len() {
            let used: Vec<&FitRecord> = outcomes.iter().filter_map(|o| o.fits[e].as_ref()).collect();
            let est: Vec<f64> = used.iter().map(|f| f.estimates[p]).collect();
            let se: Vec<f64> = used.iter().map(|f| f.std_errors[p]).collect();
            let rejections = used.iter().filter(|f| (f.estimates[p] / f.std_errors[p]).abs() > z).count();
            group.push(MetricRow {
                parameter: name.clone(),
                truth: truth[p],
                estimator: cfg.estimators[e],
                used: used.len(),
                bias: mean(&est).map(|b| b - truth[p]),
                mean_se: mean(&se),
                emp_sd: sample_sd(&est),
                re: None,
                pw: (!used.is_empty()).then(|| rejections as f64 / used.len() as f64),
                divergence_rate: (reps - used.len() as f64) / reps,
            });
        }
        let reference = cfg.reference_estimator();
        let denom = group.iter().find(|r| r.estimator == reference).and_then(|r| match cfg.re_denominator {
            ReDenominator::MleSe => r.mean_se,
            ReDenominator::EmpSd => r.emp_sd,
        });
        for r in &mut group {
            r.re = match (r.mean_se, denom) {
                (Some(se), Some(d)) if d > 0.0 => Some(se / d),
                _ => None,
            };
        }
        rows.extend(group);
    }

    let mut notes = Vec::new();
    if cfg.family == Family::Markov {
        notes.push("smoking indicator drawn Bernoulli(1/2) per subject, redrawn every replicate".into());
        if cfg.estimators.contains(&Estimator::Mle) {
            notes.push("transition-model MLE equals the pooled logistic fit of the stacked rows".into());
        }
    }
    if matches!(cfg.family, Family::QelrCi | Family::QelrLinear) {
        let g = cfg.gibbs_options();
        notes.push(format!(
            "covariates x_kj ~ N(0,1) per cluster and node; responses by Gibbs (burn-in {}, thin {})",
            g.burn_in, g.thin
        ));
    }

    let mean_seconds = cfg
        .estimators
        .iter()
        .enumerate()
        .map(|(e, &est)| (est, outcomes.iter().map(|o| o.seconds[e]).sum::<f64>() / reps))
        .collect();

    Ok(ReplicationReport {
        name: cfg.name.clone(),
        family: cfg.family,
        n: cfg.n,
        m: cfg.cluster_size(),
        replicates: cfg.replicates,
        seed: cfg.seed,
        rng: RNG_ALGORITHM.to_string(),
        estimators: cfg.estimators.clone(),
        re_denominator: cfg.re_denominator,
        reference: cfg.reference_estimator(),
        alpha: cfg.alpha,
        parameters,
        truth,
        rows,
        notes,
        mean_seconds,
    })
}

// ---------------------------------------------------------------- timing

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub m: usize,
    pub n: usize,
    pub fits: usize,
    pub mle_seconds: f64,
    pub gee_ind_seconds: f64,
    pub ratio: f64,
}

/// The `table2` scenario truth at `m = 5`; for other `m`, evenly spaced main
/// effects in [−1.5, 1.5] with θ = −0.4 on adjacent pairs and 0.6 two apart.
pub fn bench_truth(m: usize) -> QebdParams {
    let beta: Vec<f64> = (0..m)
        .map(|j| if m == 1 { 0.0 } else { -1.5 + 3.0 * j as f64 / (m - 1) as f64 })
        .collect();
    let theta = if m == 5 {
        vec![-0.4, 1.2, 0.0, 0.0, -0.4, 0.0, 0.0, 0.0, 0.0, -0.4]
    } else {
        pairs(m)
            .into_iter()
            .map(|(a, b)| match b - a {
                1 => -0.4,
                2 => 0.6,
                _ => 0.0,
            })
            .collect()
    };
    QebdParams::new(beta, theta).expect("valid truth")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Median wall-clock seconds of the exact MLE and of GEE-IND (design
/// expansion included) over `fits` simulated data sets per `m`.
pub fn bench_timing(m_list: &[usize], n: usize, fits: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if fits == 0 {
        return Err(Error::Config("bench needs at least one fit per m".into()));
    }
    let mut rows = Vec::with_capacity(m_list.len());
    for &m in m_list {
        if !(2..=ENUMERATION_CAP).contains(&m) {
            return Err(Error::Config(format!("bench m must lie in 2..={ENUMERATION_CAP}, got {m}")));
        }
        let truth = bench_truth(m);
        let mut mle_t = Vec::with_capacity(fits);
        let mut gee_t = Vec::with_capacity(fits);
        for r in 0..fits {
            let panel = exact_sample_with(&truth, n, &mut rng_for(seed, (m * 1000 + r) as u64))?;
            let start = Instant::now();
            let mle = mle_fit(&panel, None, MleOptions::default());
            mle_t.push(start.elapsed().as_secs_f64());
            let start = Instant::now();
            let gee = expand(&ModelSpec::qebd_full(m), &panel)
                .and_then(|d| fit_gee(&d, CorrelationKind::Independence, &FitOptions::default()));
            gee_t.push(start.elapsed().as_secs_f64());
            std::hint::black_box((mle.is_ok(), gee.is_ok()));
        }
        let (mle_seconds, gee_ind_seconds) = (median(mle_t), median(gee_t));
        rows.push(BenchRow { m, n, fits, mle_seconds, gee_ind_seconds, ratio: mle_seconds / gee_ind_seconds });
    }
    Ok(rows)
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut out = format!("{:>4} {:>6} {:>5} {:>12} {:>12} {:>10}\n", "m", "n", "fits", "MLE (s)", "GEE-IND (s)", "ratio");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>4} {:>6} {:>5} {:>12.6} {:>12.6} {:>10.2}",
            r.m, r.n, r.fits, r.mle_seconds, r.gee_ind_seconds, r.ratio
        );
    }
    out
}
