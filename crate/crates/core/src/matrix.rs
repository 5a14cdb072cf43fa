use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Dense `n × n` matrix of `f64`, row-major.
///
/// Serializes as nested rows (`[[0, 0.9], [0.2, 0]]`) so configuration files
/// stay readable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Self {
            n,
            data: vec![value; n * n],
        }
    }

    /// Fills every off-diagonal entry with `value`; the diagonal stays zero.
    pub fn off_diagonal(n: usize, value: f64) -> Self {
        let mut m = Self::zeros(n);
        for (i, j) in edges(n) {
            m[(i, j)] = value;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, Error> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Off-diagonal entries in row-major order (length `n² − n`).
    pub fn off_diagonal_values(&self) -> Vec<f64> {
        edges(self.n).map(|e| self[e]).collect()
    }

    pub fn set_off_diagonal_values(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.n * self.n - self.n);
        for (e, &v) in edges(self.n).zip(values) {
            self[e] = v;
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.data[i * self.n..(i + 1) * self.n].iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.n, other.n, "matrix size mismatch");
        Self {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Mean over off-diagonal entries; 0 when there are none.
    pub fn off_diagonal_mean(&self) -> f64 {
        let count = self.n * self.n - self.n;
        if count == 0 {
            return 0.0;
        }
        edges(self.n).map(|e| self[e]).sum::<f64>() / count as f64
    }
}

/// Iterates the directed off-diagonal edges `(i, j)`, `i ≠ j`, row-major.
pub fn edges(n: usize) -> impl Iterator<Item = (usize, usize)> + Clone {
    (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

impl TryFrom<Vec<Vec<f64>>> for SquareMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Error> {
        Self::from_rows(rows)
    }
}

impl From<SquareMatrix> for Vec<Vec<f64>> {
    fn from(m: SquareMatrix) -> Self {
        m.rows()
    }
}
