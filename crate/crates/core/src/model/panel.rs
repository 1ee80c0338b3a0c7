use crate::error::{Error, Result};

/// `n` independent clusters of `m` binary responses, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryPanel {
    n: usize,
    m: usize,
    y: Vec<u8>,
    node_names: Vec<String>,
}

impl BinaryPanel {
    pub fn new(m: usize, y: Vec<u8>) -> Result<Self> {
        if m == 0 {
            return Err(Error::Dimension("panel needs at least one response per cluster".into()));
        }
        if y.is_empty() || !y.len().is_multiple_of(m) {
            return Err(Error::Dimension(format!(
                "{} responses cannot be split into clusters of size {m}",
                y.len()
            )));
        }
        if let Some(pos) = y.iter().position(|&v| v > 1) {
            return Err(Error::Domain(format!(
                "response {} of cluster {} is {}, expected 0 or 1",
                pos % m + 1,
                pos / m + 1,
                y[pos]
            )));
        }
        let n = y.len() / m;
        let node_names = (1..=m).map(|j| format!("Y{j}")).collect();
        Ok(Self { n, m, y, node_names })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let m = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().position(|r| r.len() != m) {
            return Err(Error::Dimension(format!(
                "cluster {} has {} responses, expected {m} (balanced panels only)",
                bad + 1,
                rows[bad].len()
            )));
        }
        Self::new(m, rows.concat())
    }

    /// Expands a frequency table over configurations (binary-counter order,
    /// first response least significant) into a panel.
    pub fn from_pattern_counts(m: usize, counts: &[usize]) -> Result<Self> {
        if m == 0 || m >= usize::BITS as usize || counts.len() != 1 << m {
            return Err(Error::Dimension(format!(
                "expected 2^{m} pattern counts, got {}",
                counts.len()
            )));
        }
        let mut y = Vec::with_capacity(counts.iter().sum::<usize>() * m);
        for (pattern, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                y.extend((0..m).map(|j| ((pattern >> j) & 1) as u8));
            }
        }
        Self::new(m, y)
    }

    pub fn with_node_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.m {
            return Err(Error::Dimension(format!(
                "{} node names for {} responses",
                names.len(),
                self.m
            )));
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::Domain("node names must be unique".into()));
        }
        self.node_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn row(&self, k: usize) -> &[u8] {
        &self.y[k * self.m..(k + 1) * self.m]
    }

    pub fn get(&self, k: usize, j: usize) -> u8 {
        self.y[k * self.m + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.y.chunks_exact(self.m)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.y
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.m];
        for row in self.rows() {
            for (s, &v) in sums.iter_mut().zip(row) {
                *s += f64::from(v);
            }
        }
        sums.iter().map(|s| s / self.n as f64).collect()
    }

    /// Configuration index of cluster `k` (first response least significant).
    pub fn pattern(&self, k: usize) -> usize {
        self.row(k)
            .iter()
            .enumerate()
            .fold(0, |acc, (j, &v)| acc | ((v as usize) << j))
    }
}
