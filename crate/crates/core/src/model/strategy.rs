use crate::error::{Error, Result};

/// Row-sum tolerance for report strategies.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A randomized report rule on a finite grid: entry `(i, j)` is the probability
/// that true type `i` reports type `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    n: usize,
    matrix: Vec<f64>,
}

impl Strategy {
    pub fn identity(n: usize) -> Self {
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            matrix[i * n + i] = 1.0;
        }
        Self { n, matrix }
    }

    /// Deterministic report map `i ↦ map[i]`.
    pub fn deterministic(map: &[usize]) -> Result<Self> {
        let n = map.len();
        let mut matrix = vec![0.0; n * n];
        for (i, &j) in map.iter().enumerate() {
            if j >= n {
                return Err(Error::Invalid(format!("report {j} out of range for {n} types")));
            }
            matrix[i * n + j] = 1.0;
        }
        Ok(Self { n, matrix })
    }

    pub fn from_matrix(n: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != n * n {
            return Err(Error::DimensionMismatch {
                context: "strategy matrix",
                expected: n * n,
                found: matrix.len(),
            });
        }
        if let Some(x) = matrix.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Invalid(format!("strategy entries must lie in [0, 1], found {x}")));
        }
        for (i, row) in matrix.chunks_exact(n.max(1)).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Invalid(format!("strategy row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self { n, matrix })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.n..(i + 1) * self.n]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn is_truthful(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i) == 1.0)
    }

    /// Rows with more than one report in their support.
    pub fn fractional_rows(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.row(i).iter().filter(|&&x| x > 0.0).count() > 1)
            .collect()
    }

    /// Nonzero `(true type, report, probability)` triples in index order.
    pub fn triples(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for (j, &x) in self.row(i).iter().enumerate() {
                if x > 0.0 {
                    out.push((i, j, x));
                }
            }
        }
        out
    }

    /// `λ·self + (1−λ)·other`.
    pub fn mix(&self, other: &Strategy, lambda: f64) -> Result<Self> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                context: "strategy mix",
                expected: self.n,
                found: other.n,
            });
        }
        let matrix = self
            .matrix
            .iter()
            .zip(&other.matrix)
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        Ok(Self { n: self.n, matrix })
    }

    /// The strategy expressed on a reordered grid where new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut matrix = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                matrix[a * n + b] = self.get(perm[a], perm[b]);
            }
        }
        Self { n, matrix }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_truthful() {
        let s = Strategy::identity(3);
        assert!(s.is_truthful());
        assert!(s.fractional_rows().is_empty());
        assert_eq!(s.triples(), vec![(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]);
    }

    #[test]
    fn rows_must_be_stochastic() {
        assert!(Strategy::from_matrix(2, vec![0.5, 0.4, 0.0, 1.0]).is_err());
        assert!(Strategy::from_matrix(2, vec![1.5, -0.5, 0.0, 1.0]).is_err());
        let s = Strategy::from_matrix(2, vec![0.25, 0.75, 0.0, 1.0]).unwrap();
        assert_eq!(s.fractional_rows(), vec![0]);
    }

    #[test]
    fn mixing_and_permuting() {
        let a = Strategy::identity(2);
        let b = Strategy::deterministic(&[1, 1]).unwrap();
        let m = a.mix(&b, 0.25).unwrap();
        assert_eq!(m.row(0), &[0.25, 0.75]);
        let p = m.permuted(&[1, 0]);
        assert_eq!(p.row(1), &[0.75, 0.25]);
        assert_eq!(p.row(0), &[1.0, 0.0]);
    }
}
