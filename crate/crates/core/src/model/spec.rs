use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::params::pairs;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Qebd,
    QelrCi,
    QelrLinear,
    Markov,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Family::Qebd => "qebd",
            Family::QelrCi => "qelr-ci",
            Family::QelrLinear => "qelr-linear",
            Family::Markov => "markov",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qebd" => Ok(Family::Qebd),
            "qelr-ci" => Ok(Family::QelrCi),
            "qelr-linear" => Ok(Family::QelrLinear),
            "markov" => Ok(Family::Markov),
            other => Err(Error::Config(format!(
                "unknown model family '{other}' (expected qebd, qelr-ci, qelr-linear or markov)"
            ))),
        }
    }
}

/// Per-cluster, per-node covariate rows `x_kj`, stored as an `n·m × p`
/// row-major block.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    n: usize,
    m: usize,
    names: Vec<String>,
    values: Vec<f64>,
}

impl Covariates {
    pub fn new(n: usize, m: usize, names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * m * names.len() {
            return Err(Error::Dimension(format!(
                "{} covariate values for {n} clusters x {m} nodes x {} covariates",
                values.len(),
                names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("covariates must be finite".into()));
        }
        Ok(Self { n, m, names, values })
    }

    /// One indicator column per node: node-specific intercepts β_j.
    pub fn node_indicators(n: usize, node_names: &[String]) -> Self {
        let m = node_names.len();
        let mut values = vec![0.0; n * m * m];
        for k in 0..n {
            for j in 0..m {
                values[(k * m + j) * m + j] = 1.0;
            }
        }
        Self { n, m, names: node_names.to_vec(), values }
    }

    /// Repeats node-level rows (`m × p`) for every cluster.
    pub fn from_node_rows(n: usize, names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("node covariate rows must all have p entries".into()));
        }
        let block: Vec<f64> = rows.concat();
        let values = (0..n).flat_map(|_| block.iter().copied()).collect();
        Self::new(n, rows.len(), names, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, k: usize, j: usize) -> &[f64] {
        let p = self.p();
        let start = (k * self.m + j) * p;
        &self.values[start..start + p]
    }

    /// Prepends a column of ones named `name`.
    pub fn with_intercept(&self, name: &str) -> Self {
        let p = self.p();
        let mut values = Vec::with_capacity(self.n * self.m * (p + 1));
        for r in 0..self.n * self.m {
            values.push(1.0);
            values.extend_from_slice(&self.values[r * p..(r + 1) * p]);
        }
        let mut names = vec![name.to_string()];
        names.extend(self.names.iter().cloned());
        Self { n: self.n, m: self.m, names, values }
    }

    /// Keeps the listed clusters, in order.
    pub fn select_clusters(&self, clusters: &[usize]) -> Self {
        let width = self.m * self.p();
        let values = clusters
            .iter()
            .flat_map(|&k| self.values[k * width..(k + 1) * width].iter().copied())
            .collect();
        Self { n: clusters.len(), m: self.m, names: self.names.clone(), values }
    }
}

/// How node characteristics `u_i, u_j` are turned into an interaction weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFn {
    /// `w = 1` when `u_i = u_j`, else 0 (a similarity).
    EqualityIndicator,
    /// `w = 0` when `u_i = u_j`, else 1 (the discrete metric).
    DiscreteMetric,
    /// `w = |u_i − u_j|`.
    AbsoluteDifference,
}

impl FromStr for KernelFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equality" | "equality-indicator" => Ok(KernelFn::EqualityIndicator),
            "discrete-metric" => Ok(KernelFn::DiscreteMetric),
            "abs-diff" | "absolute-difference" => Ok(KernelFn::AbsoluteDifference),
            other => Err(Error::Config(format!("unknown kernel function '{other}'"))),
        }
    }
}

/// Symmetric nonnegative pairwise weights `w_ij` for one interaction
/// characteristic. The diagonal is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionKernel {
    name: String,
    weights: DMatrix<f64>,
}

impl InteractionKernel {
    /// Fails with a compatibility error unless `weights` is square,
    /// symmetric and nonnegative off the diagonal.
    pub fn new(name: impl Into<String>, weights: DMatrix<f64>) -> Result<Self> {
        let name = name.into();
        let m = weights.nrows();
        if weights.ncols() != m {
            return Err(Error::Dimension(format!("kernel '{name}' is not square")));
        }
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::Compatibility(format!(
                        "kernel '{name}' has weight {w} at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                if w != weights[(j, i)] {
                    return Err(Error::Compatibility(format!(
                        "kernel '{name}' is asymmetric at ({}, {}); the conditionals would not define a joint distribution",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { name, weights })
    }

    pub fn from_characteristics(name: impl Into<String>, u: &[f64], f: KernelFn) -> Result<Self> {
        let m = u.len();
        let weights = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                return 0.0;
            }
            match f {
                KernelFn::EqualityIndicator => f64::from(u[i] == u[j]),
                KernelFn::DiscreteMetric => f64::from(u[i] != u[j]),
                KernelFn::AbsoluteDifference => (u[i] - u[j]).abs(),
            }
        });
        Self::new(name, weights)
    }

    pub fn constant(name: impl Into<String>, m: usize, value: f64) -> Result<Self> {
        Self::new(name, DMatrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { value }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn m(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.weights[(i, j)]
        }
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }
}

/// Which conditional mean model is fitted, with its observed constants.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// Node-specific main effects and the listed pairwise interactions.
    Qebd { pairs: Vec<(usize, usize)> },
    /// Covariate main effects plus one common interaction γ·(Σ_s y_s − y_j).
    QelrCi { main: Covariates },
    /// Covariate main effects plus one γ_ℓ per kernel.
    QelrLinear { main: Covariates, kernels: Vec<InteractionKernel> },
    /// Transition model with the listed lags (1-based).
    Markov { main: Covariates, lags: Vec<usize> },
}

impl ModelSpec {
    pub fn qebd_full(m: usize) -> Self {
        ModelSpec::Qebd { pairs: pairs(m) }
    }

    pub fn markov(main: Covariates, order: usize) -> Self {
        ModelSpec::Markov { main, lags: (1..=order).collect() }
    }

    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Qebd { .. } => Family::Qebd,
            ModelSpec::QelrCi { .. } => Family::QelrCi,
            ModelSpec::QelrLinear { .. } => Family::QelrLinear,
            ModelSpec::Markov { .. } => Family::Markov,
        }
    }

    /// Names of the interaction (γ-block) terms, which are the only
    /// candidates for elimination.
    pub fn interaction_terms(&self, node_names: &[String]) -> Vec<String> {
        match self {
            ModelSpec::Qebd { pairs } => pairs
                .iter()
                .map(|&(a, b)| pair_name(node_names, a, b))
                .collect(),
            ModelSpec::QelrCi { .. } => vec![COMMON_INTERACTION.to_string()],
            ModelSpec::QelrLinear { kernels, .. } => {
                kernels.iter().map(|k| k.name().to_string()).collect()
            }
            ModelSpec::Markov { lags, .. } => lags.iter().map(|s| lag_name(*s)).collect(),
        }
    }

    /// The same model without interaction term `term`.
    pub fn drop_term(&self, node_names: &[String], term: &str) -> Result<ModelSpec> {
        let missing = || Error::Config(format!("model has no interaction term '{term}'"));
        match self {
            ModelSpec::Qebd { pairs } => {
                let pos = pairs
                    .iter()
                    .position(|&(a, b)| pair_name(node_names, a, b) == term)
                    .ok_or_else(missing)?;
                let mut pairs = pairs.clone();
                pairs.remove(pos);
                Ok(ModelSpec::Qebd { pairs })
            }
            ModelSpec::QelrCi { main } if term == COMMON_INTERACTION => {
                Ok(ModelSpec::QelrLinear { main: main.clone(), kernels: Vec::new() })
            }
            ModelSpec::QelrCi { .. } => Err(missing()),
            ModelSpec::QelrLinear { main, kernels } => {
                let pos = kernels.iter().position(|k| k.name() == term).ok_or_else(missing)?;
                let mut kernels = kernels.clone();
                kernels.remove(pos);
                Ok(ModelSpec::QelrLinear { main: main.clone(), kernels })
            }
            ModelSpec::Markov { main, lags } => {
                let pos = lags.iter().position(|&s| lag_name(s) == term).ok_or_else(missing)?;
                let mut lags = lags.clone();
                lags.remove(pos);
                Ok(ModelSpec::Markov { main: main.clone(), lags })
            }
        }
    }
}

pub(crate) const COMMON_INTERACTION: &str = "gamma";

pub(crate) fn pair_name(node_names: &[String], a: usize, b: usize) -> String {
    format!("{}-{}", node_names[a], node_names[b])
}

pub(crate) fn lag_name(s: usize) -> String {
    format!("lag{s}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asymmetric_kernel_is_incompatible() {
        let mut w = DMatrix::from_element(3, 3, 1.0);
        w[(0, 2)] = 2.0;
        let err = InteractionKernel::new("w", w).unwrap_err();
        assert!(matches!(err, Error::Compatibility(_)));
        let neg = DMatrix::from_element(2, 2, -1.0);
        assert!(matches!(InteractionKernel::new("w", neg), Err(Error::Compatibility(_))));
    }

    #[test]
    fn characteristic_kernels() {
        let u = [1.0, 2.0, 1.0];
        let eq = InteractionKernel::from_characteristics("e", &u, KernelFn::EqualityIndicator).unwrap();
        let dm = InteractionKernel::from_characteristics("d", &u, KernelFn::DiscreteMetric).unwrap();
        assert_eq!(eq.weight(0, 2), 1.0);
        assert_eq!(eq.weight(0, 1), 0.0);
        assert_eq!(dm.weight(0, 2), 0.0);
        assert_eq!(dm.weight(1, 2), 1.0);
        assert_eq!(eq.weight(1, 1), 0.0);
    }

    #[test]
    fn drop_terms() {
        let names: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let full = ModelSpec::qebd_full(3);
        assert_eq!(full.interaction_terms(&names), vec!["A-B", "A-C", "B-C"]);
        let reduced = full.drop_term(&names, "A-C").unwrap();
        assert_eq!(reduced.interaction_terms(&names), vec!["A-B", "B-C"]);
        assert!(reduced.drop_term(&names, "A-C").is_err());

        let ci = ModelSpec::QelrCi { main: Covariates::node_indicators(2, &names) };
        let marginal = ci.drop_term(&names, "gamma").unwrap();
        assert!(marginal.interaction_terms(&names).is_empty());
    }

    #[test]
    fn covariate_helpers() {
        let names: Vec<String> = vec!["x".into()];
        let cov = Covariates::from_node_rows(2, names, &[vec![0.5], vec![1.5]]).unwrap();
        let with = cov.with_intercept("one");
        assert_eq!(with.row(1, 1), &[1.0, 1.5]);
        assert_eq!(with.names(), &["one".to_string(), "x".to_string()]);
        let sub = with.select_clusters(&[1]);
        assert_eq!(sub.n(), 1);
        assert_eq!(sub.row(0, 0), &[1.0, 0.5]);
    }
}
