//! QIC backward elimination over interaction terms.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::design::expand;
use crate::error::{Error, Result};
use crate::gee::{fit_gee, FitOptions, GeeFit, GeeReport};
use crate::model::{BinaryPanel, CorrelationKind, ModelSpec};

/// QIC differences below this are ties.
const QIC_TIE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOptions {
    pub fit: FitOptions,
    /// Start candidate refits from the current estimates.
    pub warm_start: bool,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self { fit: FitOptions::default(), warm_start: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EliminationStep {
    pub dropped: String,
    pub qic_before: f64,
    pub qic_after: f64,
}

#[derive(Debug, Clone)]
pub struct EliminationTrace {
    pub steps: Vec<EliminationStep>,
    pub initial_qic: f64,
    pub final_spec: ModelSpec,
    pub final_terms: Vec<String>,
    pub final_fit: GeeFit,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EliminationReport {
    pub initial_qic: f64,
    pub steps: Vec<EliminationStep>,
    pub final_terms: Vec<String>,
    pub final_fit: GeeReport,
    pub warnings: Vec<String>,
}

impl EliminationTrace {
    pub fn final_qic(&self) -> f64 {
        self.steps.last().map_or(self.initial_qic, |s| s.qic_after)
    }

    pub fn dropped(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.dropped.as_str()).collect()
    }

    pub fn report(&self) -> EliminationReport {
        EliminationReport {
            initial_qic: self.initial_qic,
            steps: self.steps.clone(),
            final_terms: self.final_terms.clone(),
            final_fit: self.final_fit.report(),
            warnings: self.warnings.clone(),
        }
    }

    /// Human-readable step table.
    pub fn step_table(&self) -> String {
        let width = self.steps.iter().map(|s| s.dropped.len()).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = writeln!(out, "{:>4}  {:<width$}  {:>12}  {:>12}", "step", "dropped", "QIC before", "QIC after");
        let _ = writeln!(out, "{:>4}  {:<width$}  {:>12}  {:>12.3}", 0, "(full)", "", self.initial_qic);
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>4}  {:<width$}  {:>12.3}  {:>12.3}",
                i + 1,
                s.dropped,
                s.qic_before,
                s.qic_after
            );
        }
        out
    }
}

struct Candidate {
    term: String,
    spec: ModelSpec,
    fit: GeeFit,
    qic: f64,
    p_value: f64,
}

fn warm_init(current: &GeeFit, names: &[String]) -> Option<Vec<f64>> {
    names.iter().map(|n| current.estimates.get(n)).collect()
}

fn fit_independence(spec: &ModelSpec, panel: &BinaryPanel, opts: &FitOptions) -> Result<(GeeFit, f64)> {
    let design = expand(spec, panel)?;
    let fit = fit_gee(&design, CorrelationKind::Independence, opts)?;
    if fit.diverged || !fit.converged {
        return Err(Error::Domain(format!(
            "fit did not converge after {} iterations",
            fit.iterations
        )));
    }
    let qic = fit.qic.ok_or_else(|| Error::Domain("QIC unavailable".into()))?;
    Ok((fit, qic))
}

/// Greedy backward elimination: at every step all single-term deletions
/// among unprotected interaction terms are refitted under independence and
/// the one with the lowest QIC is accepted if it improves on the current
/// model. Ties within 1e-9 go to the term with the larger robust p-value.
pub fn backward_eliminate(
    spec: &ModelSpec,
    panel: &BinaryPanel,
    protect: &HashSet<String>,
    opts: &SelectionOptions,
) -> Result<EliminationTrace> {
    let names = panel.node_names();
    let (mut fit, initial_qic) = fit_independence(spec, panel, &opts.fit)?;
    let mut spec = spec.clone();
    let mut qic = initial_qic;
    let mut steps = Vec::new();
    let mut warnings = Vec::new();
    loop {
        let candidates: Vec<String> = spec
            .interaction_terms(names)
            .into_iter()
            .filter(|t| !protect.contains(t))
            .collect();
        if candidates.is_empty() {
            break;
        }
        let p_values = fit.p_values();
        let outcomes: Vec<(String, Result<Candidate>)> = candidates
            .par_iter()
            .map(|term| {
                let attempt = || -> Result<Candidate> {
                    let reduced = spec.drop_term(names, term)?;
                    let mut fit_opts = opts.fit.clone();
                    if opts.warm_start {
                        let layout_names = expand(&reduced, panel)?.layout().names().to_vec();
                        fit_opts.init = warm_init(&fit, &layout_names);
                    }
                    let (cand_fit, cand_qic) = fit_independence(&reduced, panel, &fit_opts)?;
                    let idx = fit.estimates.layout().index_of(term).expect("term is in the current model");
                    Ok(Candidate { term: term.clone(), spec: reduced, fit: cand_fit, qic: cand_qic, p_value: p_values[idx] })
                };
                (term.clone(), attempt())
            })
            .collect();
        let mut best: Option<Candidate> = None;
        for (term, outcome) in outcomes {
            match outcome {
                Ok(c) => {
                    let better = match &best {
                        None => true,
                        Some(b) if c.qic < b.qic - QIC_TIE => true,
                        Some(b) => (c.qic - b.qic).abs() <= QIC_TIE && c.p_value > b.p_value,
                    };
                    if better {
                        best = Some(c);
                    }
                }
                Err(e) => warnings.push(format!("skipped dropping '{term}': {e}")),
            }
        }
        match best {
            Some(c) if c.qic < qic => {
                steps.push(EliminationStep { dropped: c.term, qic_before: qic, qic_after: c.qic });
                qic = c.qic;
                spec = c.spec;
                fit = c.fit;
            }
            _ => break,
        }
    }
    Ok(EliminationTrace {
        steps,
        initial_qic,
        final_terms: spec.interaction_terms(names),
        final_spec: spec,
        final_fit: fit,
        warnings,
    })
}
