//! Stacked node-wise logistic designs.
//!
//! Every family reduces to one logistic row per (cluster `k`, node `j`):
//! response `y_kj` and predictor `z_kj = (x_kj, W_kj y⁰_k[j])`. Both the
//! pooled GLM and the GEE fits consume this representation.

use std::io::Write;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::spec::{lag_name, pair_name, COMMON_INTERACTION};
use crate::model::{pairs, BinaryPanel, Covariates, InteractionKernel, ModelSpec, ParamLayout};

#[derive(Debug, Clone, PartialEq)]
pub struct StackedDesign {
    n_clusters: usize,
    m: usize,
    n_cols: usize,
    y: Vec<f64>,
    z: Vec<f64>,
    layout: ParamLayout,
}

impl StackedDesign {
    fn new(panel: &BinaryPanel, layout: ParamLayout, z: Vec<f64>) -> Self {
        let n_cols = layout.len();
        debug_assert_eq!(z.len(), panel.n() * panel.m() * n_cols);
        Self {
            n_clusters: panel.n(),
            m: panel.m(),
            n_cols,
            y: panel.as_slice().iter().map(|&v| f64::from(v)).collect(),
            z,
            layout,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Rows per cluster.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn response(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Row range of cluster `k`; rows are ordered by node within a cluster.
    pub fn cluster_rows(&self, k: usize) -> Range<usize> {
        k * self.m..(k + 1) * self.m
    }

    pub fn linear_predictor(&self, i: usize, psi: &[f64]) -> f64 {
        self.row(i).iter().zip(psi).map(|(z, p)| z * p).sum()
    }

    /// Long-format CSV: `cluster,node,y,z_1,…,z_{p+q}` with 1-based ids.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("cluster,node,y");
        for c in 1..=self.n_cols {
            header.push_str(&format!(",z_{c}"));
        }
        writeln!(out, "{header}")?;
        for i in 0..self.n_rows() {
            let mut line = format!("{},{},{}", i / self.m + 1, i % self.m + 1, self.y[i]);
            for v in self.row(i) {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn check_covariates(panel: &BinaryPanel, main: &Covariates) -> Result<()> {
    if main.n() != panel.n() || main.m() != panel.m() {
        return Err(Error::Dimension(format!(
            "covariates cover {} clusters x {} nodes, panel has {} x {}",
            main.n(),
            main.m(),
            panel.n(),
            panel.m()
        )));
    }
    Ok(())
}

/// Full QEBD expansion: one-hot main effects and every pairwise interaction.
pub fn expand_qebd(panel: &BinaryPanel) -> Result<StackedDesign> {
    expand_qebd_pairs(panel, &pairs(panel.m()))
}

/// QEBD expansion restricted to the listed interaction pairs. The column of
/// θ_ab is `y_kb` in row `(k, a)`, `y_ka` in row `(k, b)` and 0 elsewhere.
pub fn expand_qebd_pairs(panel: &BinaryPanel, active: &[(usize, usize)]) -> Result<StackedDesign> {
    let m = panel.m();
    if m < 2 {
        return Err(Error::Dimension(format!("QEBD needs m >= 2, got {m}")));
    }
    if let Some(&(a, b)) = active.iter().find(|&&(a, b)| a >= b || b >= m) {
        return Err(Error::Dimension(format!("invalid interaction pair ({a}, {b})")));
    }
    let names = panel.node_names();
    let layout = ParamLayout::new(
        names.to_vec(),
        active.iter().map(|&(a, b)| pair_name(names, a, b)).collect(),
    )?;
    let d = layout.len();
    let mut z = vec![0.0; panel.n() * m * d];
    for k in 0..panel.n() {
        let y = panel.row(k);
        for j in 0..m {
            let row = &mut z[(k * m + j) * d..(k * m + j + 1) * d];
            row[j] = 1.0;
            for (c, &(a, b)) in active.iter().enumerate() {
                if j == a {
                    row[m + c] = f64::from(y[b]);
                } else if j == b {
                    row[m + c] = f64::from(y[a]);
                }
            }
        }
    }
    Ok(StackedDesign::new(panel, layout, z))
}

/// Covariate main effects plus the common interaction `Σ_s y_ks − y_kj`.
pub fn expand_qelr_ci(panel: &BinaryPanel, main: &Covariates) -> Result<StackedDesign> {
    check_covariates(panel, main)?;
    let layout = ParamLayout::new(main.names().to_vec(), vec![COMMON_INTERACTION.to_string()])?;
    let d = layout.len();
    let m = panel.m();
    let mut z = Vec::with_capacity(panel.n() * m * d);
    for k in 0..panel.n() {
        let y = panel.row(k);
        let total: u32 = y.iter().map(|&v| u32::from(v)).sum();
        for (j, &yj) in y.iter().enumerate() {
            z.extend_from_slice(main.row(k, j));
            z.push(f64::from(total - u32::from(yj)));
        }
    }
    Ok(StackedDesign::new(panel, layout, z))
}

/// Covariate main effects plus one column `Σ_{i≠j} w^ℓ_ij y_ki` per kernel.
pub fn expand_qelr_linear(
    panel: &BinaryPanel,
    main: &Covariates,
    kernels: &[InteractionKernel],
) -> Result<StackedDesign> {
    check_covariates(panel, main)?;
    let m = panel.m();
    if let Some(k) = kernels.iter().find(|k| k.m() != m) {
        return Err(Error::Dimension(format!(
            "kernel '{}' is {}x{}, panel has m = {m}",
            k.name(),
            k.m(),
            k.m()
        )));
    }
    // revalidate: symmetry is what makes the conditionals compatible
    let kernels: Vec<InteractionKernel> = kernels
        .iter()
        .map(|k| InteractionKernel::new(k.name(), k.weights().clone()))
        .collect::<Result<_>>()?;
    let layout = ParamLayout::new(
        main.names().to_vec(),
        kernels.iter().map(|k| k.name().to_string()).collect(),
    )?;
    let d = layout.len();
    let mut z = Vec::with_capacity(panel.n() * m * d);
    for k in 0..panel.n() {
        let y = panel.row(k);
        for j in 0..m {
            z.extend_from_slice(main.row(k, j));
            for kernel in &kernels {
                let v: f64 = (0..m)
                    .filter(|&i| i != j)
                    .map(|i| kernel.weight(i, j) * f64::from(y[i]))
                    .sum();
                z.push(v);
            }
        }
    }
    Ok(StackedDesign::new(panel, layout, z))
}

/// Transition-model expansion: covariates plus lagged responses, with
/// pre-sample lags filled by 0.
pub fn expand_markov(panel: &BinaryPanel, main: &Covariates, lags: &[usize]) -> Result<StackedDesign> {
    check_covariates(panel, main)?;
    if lags.contains(&0) {
        return Err(Error::Domain("lags are 1-based".into()));
    }
    let layout = ParamLayout::new(
        main.names().to_vec(),
        lags.iter().map(|&s| lag_name(s)).collect(),
    )?;
    let d = layout.len();
    let m = panel.m();
    let mut z = Vec::with_capacity(panel.n() * m * d);
    for k in 0..panel.n() {
        let y = panel.row(k);
        for t in 0..m {
            z.extend_from_slice(main.row(k, t));
            for &s in lags {
                z.push(if t >= s { f64::from(y[t - s]) } else { 0.0 });
            }
        }
    }
    Ok(StackedDesign::new(panel, layout, z))
}

/// Expands `panel` according to `spec`.
pub fn expand(spec: &ModelSpec, panel: &BinaryPanel) -> Result<StackedDesign> {
    match spec {
        ModelSpec::Qebd { pairs } => expand_qebd_pairs(panel, pairs),
        ModelSpec::QelrCi { main } => expand_qelr_ci(panel, main),
        ModelSpec::QelrLinear { main, kernels } => expand_qelr_linear(panel, main, kernels),
        ModelSpec::Markov { main, lags } => expand_markov(panel, main, lags),
    }
}
