//! Matrices whose entries are jets. Used for metrics, their inverses, and
//! the lambda field.

use num::One;

use crate::error::{Error, Result};
use crate::jet::{Jet, Rat};
use crate::ratmat::RatMatrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetMatrix {
    rows: usize,
    cols: usize,
    dim: usize,
    order: usize,
    entries: Vec<Jet>,
}

impl JetMatrix {
    pub fn zeros(rows: usize, cols: usize, dim: usize, order: usize) -> Self {
        Self {
            rows,
            cols,
            dim,
            order,
            entries: vec![Jet::zero(dim, order); rows * cols],
        }
    }

    pub fn identity(n: usize, dim: usize, order: usize) -> Self {
        let mut m = Self::zeros(n, n, dim, order);
        for i in 0..n {
            *m.get_mut(i, i) = Jet::one(dim, order);
        }
        m
    }

    /// Builds from entry jets (row major). All entries must share dimension;
    /// orders are normalized to the smallest entry order.
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<Jet>) -> Self {
        assert_eq!(entries.len(), rows * cols);
        let dim = entries[0].dim();
        assert!(entries.iter().all(|e| e.dim() == dim));
        let order = entries.iter().map(Jet::order).min().unwrap();
        let entries = entries.iter().map(|e| e.truncated(order)).collect();
        Self {
            rows,
            cols,
            dim,
            order,
            entries,
        }
    }

    /// Lifts a rational matrix to a constant jet matrix.
    pub fn from_rat(m: &RatMatrix, dim: usize, order: usize) -> Self {
        let entries = (0..m.nrows())
            .flat_map(|i| {
                (0..m.ncols()).map(move |j| Jet::constant(dim, order, m[(i, j)].clone()))
            })
            .collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            dim,
            order,
            entries,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, i: usize, j: usize) -> &Jet {
        &self.entries[i * self.cols + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut Jet {
        &mut self.entries[i * self.cols + j]
    }

    /// Matrix of the constant terms.
    pub fn at_origin(&self) -> RatMatrix {
        let mut m = RatMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = self.get(i, j).constant_term();
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zeros(self.cols, self.rows, self.dim, self.order);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *m.get_mut(j, i) = self.get(i, j).clone();
            }
        }
        m
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.add(b))
            .collect();
        Self::from_entries(self.rows, self.cols, entries)
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.sub(b))
            .collect();
        Self::from_entries(self.rows, self.cols, entries)
    }

    pub fn scale(&self, factor: &Rat) -> Self {
        let entries = self.entries.iter().map(|e| e.scale(factor)).collect();
        Self::from_entries(self.rows, self.cols, entries)
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "jet matrix product shape mismatch");
        let order = self.order.min(other.order);
        let mut m = Self::zeros(self.rows, other.cols, self.dim, order);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = Jet::zero(self.dim, order);
                for k in 0..self.cols {
                    acc = acc.add(&self.get(i, k).mul(other.get(k, j)));
                }
                *m.get_mut(i, j) = acc;
            }
        }
        m
    }

    pub fn mul_jet_vec(&self, v: &[Jet]) -> Vec<Jet> {
        assert_eq!(self.cols, v.len());
        let order = v.iter().map(Jet::order).min().unwrap().min(self.order);
        (0..self.rows)
            .map(|i| {
                let mut acc = Jet::zero(self.dim, order);
                for k in 0..self.cols {
                    acc = acc.add(&self.get(i, k).mul(&v[k]));
                }
                acc
            })
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Truncated-series inverse. Writes `M = M0 (I + N)` with `N` vanishing
    /// at the origin, so `M^{-1} = (I - N + N^2 - ...) M0^{-1}` to the
    /// truncation order. Requires the constant-term matrix to be invertible.
    pub fn inverse(&self) -> Result<Self> {
        assert_eq!(self.rows, self.cols, "only square jet matrices invert");
        let m0 = self.at_origin();
        let m0_inv = m0
            .inverse()
            .ok_or_else(|| Error::Jet("matrix constant term is singular".into()))?;
        let m0_inv_jet = Self::from_rat(&m0_inv, self.dim, self.order);
        // N = M0^{-1} M - I
        let n_mat = m0_inv_jet
            .mul(self)
            .sub(&Self::identity(self.rows, self.dim, self.order));
        let mut series = Self::identity(self.rows, self.dim, self.order);
        let mut power = Self::identity(self.rows, self.dim, self.order);
        for k in 1..=self.order {
            power = power.mul(&n_mat);
            let term = if k % 2 == 1 {
                power.scale(&-Rat::one())
            } else {
                power.clone()
            };
            series = series.add(&term);
        }
        Ok(series.mul(&m0_inv_jet))
    }

    pub fn entries(&self) -> &[Jet] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::rat;

    fn diag_metric(order: usize) -> JetMatrix {
        // diag(1 + q2^2, 1 + q1^2)
        let q1 = Jet::variable(2, order, 0);
        let q2 = Jet::variable(2, order, 1);
        let mut m = JetMatrix::zeros(2, 2, 2, order);
        *m.get_mut(0, 0) = Jet::one(2, order).add(&q2.mul(&q2));
        *m.get_mut(1, 1) = Jet::one(2, order).add(&q1.mul(&q1));
        m
    }

    #[test]
    fn inverse_of_diag_metric() {
        let g = diag_metric(4);
        let inv = g.inverse().unwrap();
        let prod = g.mul(&inv);
        assert!(prod
            .sub(&JetMatrix::identity(2, 2, 4))
            .entries()
            .iter()
            .all(Jet::is_zero));
        // geometric series in the (0,0) slot
        assert_eq!(inv.get(0, 0).coeff(&[0, 2]), rat(-1));
        assert_eq!(inv.get(0, 0).coeff(&[0, 4]), rat(1));
    }

    #[test]
    fn singular_constant_term_rejected() {
        let mut m = JetMatrix::zeros(2, 2, 2, 3);
        *m.get_mut(0, 0) = Jet::variable(2, 3, 0);
        *m.get_mut(1, 1) = Jet::one(2, 3);
        assert!(m.inverse().is_err());
    }
}
