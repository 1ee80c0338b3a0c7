use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationKind {
    Independence,
    Exchangeable,
    Ar1,
}

impl CorrelationKind {
    /// Open interval of admissible ρ for a cluster of size `m`, or `None`
    /// when the structure has no parameter.
    pub fn rho_bounds(self, m: usize) -> Option<(f64, f64)> {
        match self {
            CorrelationKind::Independence => None,
            CorrelationKind::Exchangeable if m > 1 => Some((-1.0 / (m as f64 - 1.0), 1.0)),
            CorrelationKind::Exchangeable | CorrelationKind::Ar1 => Some((-1.0, 1.0)),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CorrelationKind::Independence => "ind",
            CorrelationKind::Exchangeable => "exc",
            CorrelationKind::Ar1 => "ar1",
        }
    }
}

impl fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CorrelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ind" | "independence" => Ok(CorrelationKind::Independence),
            "exc" | "exchangeable" => Ok(CorrelationKind::Exchangeable),
            "ar1" => Ok(CorrelationKind::Ar1),
            other => Err(Error::Config(format!(
                "unknown working correlation '{other}' (expected ind, exc or ar1)"
            ))),
        }
    }
}

/// A working correlation structure together with its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkingCorrelation {
    pub kind: CorrelationKind,
    pub rho: Option<f64>,
}

impl WorkingCorrelation {
    pub fn independence() -> Self {
        Self { kind: CorrelationKind::Independence, rho: None }
    }

    pub fn exchangeable(rho: f64) -> Self {
        Self { kind: CorrelationKind::Exchangeable, rho: Some(rho) }
    }

    pub fn ar1(rho: f64) -> Self {
        Self { kind: CorrelationKind::Ar1, rho: Some(rho) }
    }

    /// Builds `R_ρ` for clusters of size `m`.
    pub fn materialize(&self, m: usize) -> Result<DMatrix<f64>> {
        let rho = match (self.kind, self.rho) {
            (CorrelationKind::Independence, _) => return Ok(DMatrix::identity(m, m)),
            (_, None) => {
                return Err(Error::Domain(format!("{} correlation needs rho", self.kind)));
            }
            (_, Some(r)) => r,
        };
        let (lo, hi) = self.kind.rho_bounds(m).expect("parameterised kind");
        if !(rho > lo && rho < hi) {
            return Err(Error::Domain(format!(
                "rho = {rho} outside ({lo}, {hi}) for {} correlation with m = {m}",
                self.kind
            )));
        }
        Ok(DMatrix::from_fn(m, m, |s, t| match self.kind {
            _ if s == t => 1.0,
            CorrelationKind::Exchangeable => rho,
            _ => rho.powi(s.abs_diff(t) as i32),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independence_is_identity() {
        let r = WorkingCorrelation::independence().materialize(3).unwrap();
        assert_eq!(r, DMatrix::identity(3, 3));
    }

    #[test]
    fn exchangeable_and_ar1_entries() {
        let r = WorkingCorrelation::exchangeable(0.3).materialize(3).unwrap();
        for s in 0..3 {
            for t in 0..3 {
                assert_eq!(r[(s, t)], if s == t { 1.0 } else { 0.3 });
            }
        }
        let r = WorkingCorrelation::ar1(0.5).materialize(3).unwrap();
        assert_eq!(r.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn out_of_bound_rho_names_the_bound() {
        let err = WorkingCorrelation::exchangeable(-0.5).materialize(4).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("-0.333"), "{msg}");
        assert!(WorkingCorrelation::ar1(1.0).materialize(3).is_err());
    }

    #[test]
    fn in_bound_structures_are_positive_definite() {
        for m in 2..9 {
            let (lo, _) = CorrelationKind::Exchangeable.rho_bounds(m).unwrap();
            for &frac in &[0.99, 0.5, 0.0, -0.5, -0.99] {
                for corr in [
                    WorkingCorrelation::exchangeable(if frac < 0.0 { -frac * lo } else { frac }),
                    WorkingCorrelation::ar1(frac),
                ] {
                    let r = corr.materialize(m).unwrap();
                    let eig = r.symmetric_eigenvalues();
                    assert!(eig.iter().all(|&e| e > 1e-10), "{corr:?} m={m}: {eig}");
                    assert_eq!(r, r.transpose());
                }
            }
        }
    }
}
