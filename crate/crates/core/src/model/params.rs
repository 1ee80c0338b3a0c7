use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Number of unordered pairs among `m` nodes.
pub fn n_pairs(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// Position of the pair `(a, b)`, `a < b`, in the packed interaction vector
/// `(θ12, θ13, …, θ1m, θ23, …, θ(m-1)m)`. Indices are zero based.
pub fn pair_index(m: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < m);
    a * m - a * (a + 1) / 2 + (b - a - 1)
}

/// All pairs in packing order.
pub fn pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m)
        .flat_map(|a| (a + 1..m).map(move |b| (a, b)))
        .collect()
}

/// Unpacks θ into the symmetric zero-diagonal interaction matrix Θ.
pub fn theta_to_matrix(theta: &[f64], m: usize) -> Result<DMatrix<f64>> {
    if theta.len() != n_pairs(m) {
        return Err(Error::Dimension(format!(
            "theta has {} entries, m = {m} needs {}",
            theta.len(),
            n_pairs(m)
        )));
    }
    let mut out = DMatrix::zeros(m, m);
    for ((a, b), &t) in pairs(m).into_iter().zip(theta) {
        out[(a, b)] = t;
        out[(b, a)] = t;
    }
    Ok(out)
}

/// Packs the upper triangle of a symmetric zero-diagonal matrix.
pub fn matrix_to_theta(mat: &DMatrix<f64>) -> Result<Vec<f64>> {
    let m = mat.nrows();
    if mat.ncols() != m {
        return Err(Error::Dimension(format!(
            "interaction matrix is {}x{}, expected square",
            m,
            mat.ncols()
        )));
    }
    for a in 0..m {
        if mat[(a, a)] != 0.0 {
            return Err(Error::Domain(format!("diagonal entry {} is nonzero", a + 1)));
        }
        for b in a + 1..m {
            if mat[(a, b)] != mat[(b, a)] {
                return Err(Error::Domain(format!(
                    "interaction matrix is not symmetric at ({}, {})",
                    a + 1,
                    b + 1
                )));
            }
        }
    }
    Ok(pairs(m).into_iter().map(|(a, b)| mat[(a, b)]).collect())
}

/// Column-major vectorization.
pub fn vec_column_major(mat: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra stores column-major already
    DVector::from_column_slice(mat.as_slice())
}

/// The `m(m-1)/2 × m²` matrix `G` with rows `e_a ⊗ e_b + e_b ⊗ e_a`, so that
/// `vec(Θ) = Gᵀθ` under column-major vectorization.
pub fn build_g_matrix(m: usize) -> Result<DMatrix<f64>> {
    if m < 2 {
        return Err(Error::Dimension(format!("G needs m >= 2, got {m}")));
    }
    let mut g = DMatrix::zeros(n_pairs(m), m * m);
    for (row, (a, b)) in pairs(m).into_iter().enumerate() {
        // e_a ⊗ e_b has its one at position a*m + b
        g[(row, a * m + b)] = 1.0;
        g[(row, b * m + a)] = 1.0;
    }
    Ok(g)
}

/// Main effects β and packed interactions θ of a quadratic exponential
/// binary distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QebdParams {
    beta: Vec<f64>,
    theta: Vec<f64>,
}

impl QebdParams {
    pub fn new(beta: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        let m = beta.len();
        if m == 0 {
            return Err(Error::Dimension("at least one main effect is required".into()));
        }
        if theta.len() != n_pairs(m) {
            return Err(Error::Dimension(format!(
                "theta has {} entries, m = {m} needs {}",
                theta.len(),
                n_pairs(m)
            )));
        }
        if beta.iter().chain(&theta).any(|v| !v.is_finite()) {
            return Err(Error::Domain("parameters must be finite".into()));
        }
        Ok(Self { beta, theta })
    }

    pub fn independent(beta: Vec<f64>) -> Result<Self> {
        let q = n_pairs(beta.len());
        Self::new(beta, vec![0.0; q])
    }

    /// Splits a stacked `(β, θ)` vector.
    pub fn from_psi(m: usize, psi: &[f64]) -> Result<Self> {
        if psi.len() != m + n_pairs(m) {
            return Err(Error::Dimension(format!(
                "psi has {} entries, m = {m} needs {}",
                psi.len(),
                m + n_pairs(m)
            )));
        }
        Self::new(psi[..m].to_vec(), psi[m..].to_vec())
    }

    pub fn m(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_matrix(&self) -> DMatrix<f64> {
        theta_to_matrix(&self.theta, self.m()).expect("length checked on construction")
    }

    pub fn to_psi(&self) -> Vec<f64> {
        self.beta.iter().chain(&self.theta).copied().collect()
    }

    pub fn dim(&self) -> usize {
        self.beta.len() + self.theta.len()
    }
}

/// Names of the regression parameters ψ = (β, γ) and the split point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamLayout {
    names: Vec<String>,
    n_beta: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl ParamLayout {
    pub fn new(beta_names: Vec<String>, gamma_names: Vec<String>) -> Result<Self> {
        let n_beta = beta_names.len();
        let names: Vec<String> = beta_names.into_iter().chain(gamma_names).collect();
        if names.is_empty() {
            return Err(Error::Dimension("model has no parameters".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Domain(format!("duplicate parameter name '{name}'")));
            }
        }
        Ok(Self { names, n_beta, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn n_beta(&self) -> usize {
        self.n_beta
    }

    pub fn n_gamma(&self) -> usize {
        self.names.len() - self.n_beta
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn is_gamma(&self, i: usize) -> bool {
        i >= self.n_beta
    }
}

/// ψ = (β, γ) with named coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiVector {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl PsiVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn beta(&self) -> &[f64] {
        &self.values[..self.layout.n_beta()]
    }

    pub fn gamma(&self) -> &[f64] {
        &self.values[self.layout.n_beta()..]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.layout.index_of(name).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.layout
            .names()
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_node_matrix() {
        let t = theta_to_matrix(&[0.7], 2).unwrap();
        assert_eq!(t, DMatrix::from_row_slice(2, 2, &[0.0, 0.7, 0.7, 0.0]));
        assert_eq!(theta_to_matrix(&[0.0; 3], 3).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn length_mismatch_is_a_dimension_error() {
        assert!(matches!(theta_to_matrix(&[1.0, 2.0], 3), Err(Error::Dimension(_))));
        assert!(matches!(build_g_matrix(1), Err(Error::Dimension(_))));
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let mut t = theta_to_matrix(&[1.0, 2.0, 3.0], 3).unwrap();
        t[(2, 0)] = 0.5;
        assert!(matrix_to_theta(&t).is_err());
    }

    #[test]
    fn small_g_matrices() {
        let g2 = build_g_matrix(2).unwrap();
        assert_eq!(g2.shape(), (1, 4));
        assert_eq!(g2.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 1.0, 0.0]);

        let g3 = build_g_matrix(3).unwrap();
        assert_eq!(g3.shape(), (3, 9));
        // θ13 is the second packed entry; (1,3) and (3,1) sit at column-major
        // positions 6 and 2.
        let row: Vec<f64> = g3.row(1).iter().copied().collect();
        let ones: Vec<usize> = (0..9).filter(|&i| row[i] == 1.0).collect();
        assert_eq!(ones, vec![2, 6]);
    }

    #[test]
    fn pair_index_matches_enumeration() {
        for m in 2..9 {
            for (i, (a, b)) in pairs(m).into_iter().enumerate() {
                assert_eq!(pair_index(m, a, b), i);
            }
        }
    }

    #[test]
    fn layout_rejects_duplicates() {
        let err = ParamLayout::new(vec!["a".into()], vec!["a".into()]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn layout_is_a_bijection() {
        let layout = ParamLayout::new(
            vec!["b1".into(), "b2".into()],
            vec!["g1".into(), "g2".into(), "g3".into()],
        )
        .unwrap();
        for i in 0..layout.len() {
            assert_eq!(layout.index_of(layout.name(i)), Some(i));
        }
        assert_eq!(layout.n_gamma(), 3);
        assert!(layout.is_gamma(2) && !layout.is_gamma(1));
    }

    proptest! {
        #[test]
        fn g_transpose_theta_is_vec_theta(m in 2usize..=8, seed in any::<u64>()) {
            let q = n_pairs(m);
            let theta: Vec<f64> = (0..q)
                .map(|i| ((seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 11) as f64) / (1u64 << 53) as f64 - 0.5)
                .collect();
            let g = build_g_matrix(m).unwrap();
            let lhs = g.transpose() * DVector::from_column_slice(&theta);
            // brute-force column-major vectorization
            let mat = theta_to_matrix(&theta, m).unwrap();
            let mut rhs = Vec::with_capacity(m * m);
            for col in 0..m {
                for row in 0..m {
                    rhs.push(mat[(row, col)]);
                }
            }
            prop_assert_eq!(lhs.as_slice(), rhs.as_slice());
            for r in 0..q {
                let row = g.row(r);
                prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 2);
                prop_assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), m * m - 2);
            }
        }

        #[test]
        fn theta_round_trip(theta in proptest::collection::vec(-5.0f64..5.0, 15)) {
            let mat = theta_to_matrix(&theta, 6).unwrap();
            prop_assert_eq!(matrix_to_theta(&mat).unwrap(), theta.clone());
            prop_assert_eq!(theta_to_matrix(&matrix_to_theta(&mat).unwrap(), 6).unwrap(), mat);
        }
    }
}
