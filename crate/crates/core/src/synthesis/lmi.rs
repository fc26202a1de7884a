//! Affine matrix expressions over a flat decision vector, used to assemble the
//! observer-design LMIs.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::sdp::LmiBlock;

/// M(x) = M0 + sum_i x_i M_i with dense coefficients.
#[derive(Debug, Clone)]
pub struct Affine {
    pub constant: DMatrix<f64>,
    pub terms: BTreeMap<usize, DMatrix<f64>>,
}

impl Affine {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self { constant: m, terms: BTreeMap::new() }
    }

    pub fn zeros(r: usize, c: usize) -> Self {
        Self::constant(DMatrix::zeros(r, c))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    /// Symmetric n x n variable occupying n(n+1)/2 slots from `offset`, upper triangle row-major.
    pub fn symmetric(offset: usize, n: usize) -> Self {
        let mut terms = BTreeMap::new();
        let mut k = offset;
        for i in 0..n {
            for j in i..n {
                let mut e = DMatrix::zeros(n, n);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                terms.insert(k, e);
                k += 1;
            }
        }
        Self { constant: DMatrix::zeros(n, n), terms }
    }

    /// Full r x c variable occupying r*c slots from `offset`, row-major.
    pub fn full(offset: usize, r: usize, c: usize) -> Self {
        let mut terms = BTreeMap::new();
        for i in 0..r {
            for j in 0..c {
                let mut e = DMatrix::zeros(r, c);
                e[(i, j)] = 1.0;
                terms.insert(offset + i * c + j, e);
            }
        }
        Self { constant: DMatrix::zeros(r, c), terms }
    }

    /// Scalar variable times the n x n identity.
    pub fn scalar_identity(index: usize, n: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(index, DMatrix::identity(n, n));
        Self { constant: DMatrix::zeros(n, n), terms }
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self { constant: f(&self.constant), terms: self.terms.iter().map(|(k, m)| (*k, f(m))).collect() }
    }

    /// lhs * self
    pub fn lmul(&self, lhs: &DMatrix<f64>) -> Self {
        self.map(|m| lhs * m)
    }

    /// self * rhs
    pub fn rmul(&self, rhs: &DMatrix<f64>) -> Self {
        self.map(|m| m * rhs)
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|m| m * s)
    }

    pub fn add(&self, other: &Affine) -> Self {
        assert_eq!(self.shape(), other.shape(), "affine shapes differ");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (k, m) in &other.terms {
            out.terms.entry(*k).and_modify(|e| *e += m).or_insert_with(|| m.clone());
        }
        out
    }

    pub fn sub(&self, other: &Affine) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn add_constant(&self, m: &DMatrix<f64>) -> Self {
        let mut out = self.clone();
        out.constant += m;
        out
    }

    pub fn trace(&self) -> Self {
        self.map(|m| DMatrix::from_element(1, 1, m.trace()))
    }

    /// Assembles a block matrix from rows of equally tall blocks.
    pub fn blocks(rows: &[Vec<&Affine>]) -> Self {
        let heights: Vec<usize> = rows.iter().map(|r| r[0].shape().0).collect();
        let widths: Vec<usize> = rows[0].iter().map(|b| b.shape().1).collect();
        let (h, w) = (heights.iter().sum(), widths.iter().sum());
        let mut out = Affine::zeros(h, w);
        let mut r0 = 0;
        for (bi, row) in rows.iter().enumerate() {
            let mut c0 = 0;
            for (bj, blk) in row.iter().enumerate() {
                assert_eq!(blk.shape(), (heights[bi], widths[bj]), "block ({bi},{bj}) has the wrong shape");
                out.constant.view_mut((r0, c0), blk.shape()).copy_from(&blk.constant);
                for (k, m) in &blk.terms {
                    let e = out.terms.entry(*k).or_insert_with(|| DMatrix::zeros(h, w));
                    e.view_mut((r0, c0), m.shape()).copy_from(m);
                }
                c0 += widths[bj];
            }
            r0 += heights[bi];
        }
        out
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (k, t) in &self.terms {
            m += t * x[*k];
        }
        m
    }

    /// Symmetrized block constraint self >= 0.
    pub fn into_block(self, name: &str, shiftable: bool) -> LmiBlock {
        let sym = |m: &DMatrix<f64>| (m + m.transpose()) * 0.5;
        LmiBlock {
            name: name.to_string(),
            constant: sym(&self.constant),
            terms: self.terms.iter().filter(|(_, m)| m.iter().any(|v| *v != 0.0)).map(|(k, m)| (*k, sym(m))).collect(),
            shiftable,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_slot_count_and_eval() {
        let p = Affine::symmetric(0, 3);
        assert_eq!(p.terms.len(), 6);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let m = p.eval(&x);
        assert_eq!(m, DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]));
    }

    #[test]
    fn block_assembly_matches_eval() {
        let a = Affine::full(0, 2, 1);
        let b = Affine::constant(DMatrix::identity(2, 2));
        let at = a.transpose();
        let one = Affine::constant(DMatrix::from_element(1, 1, 5.0));
        let m = Affine::blocks(&[vec![&one, &at], vec![&a, &b]]);
        let x = DVector::from_vec(vec![7.0, 8.0]);
        let e = m.eval(&x);
        assert_eq!(e, DMatrix::from_row_slice(3, 3, &[5.0, 7.0, 8.0, 7.0, 1.0, 0.0, 8.0, 0.0, 1.0]));
    }
}
