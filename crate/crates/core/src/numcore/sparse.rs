use super::{NumError, Tensor2};

/// Compressed sparse row matrix used for neighbor aggregation, readout and
/// row scattering.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, weight)` lists.
    pub fn from_row_lists(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self, NumError> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for (r, entries) in rows.iter().enumerate() {
            for &(c, w) in entries {
                if c >= cols {
                    return Err(NumError::ShapeMismatch {
                        op: "sparse",
                        detail: format!("row {r} references column {c} of {cols}"),
                    });
                }
                col_idx.push(c);
                values.push(w);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `self * x`
    pub fn mul_dense(&self, x: &Tensor2) -> Result<Tensor2, NumError> {
        if x.rows() != self.cols {
            return Err(NumError::ShapeMismatch {
                op: "sparse_mix",
                detail: format!("sparse {}x{} times {:?}", self.rows, self.cols, x.shape()),
            });
        }
        let width = x.cols();
        let mut out = Tensor2::zeros(self.rows, width);
        for r in 0..self.rows {
            let dst = out.row_mut(r);
            for (c, w) in self.row_entries(r) {
                for (d, &s) in dst.iter_mut().zip(x.row(c)) {
                    *d += w * s;
                }
            }
        }
        Ok(out)
    }

    /// `acc += selfᵀ * g`
    pub fn accumulate_transpose_mul(&self, g: &Tensor2, acc: &mut Tensor2) {
        debug_assert_eq!(g.rows(), self.rows);
        debug_assert_eq!(acc.rows(), self.cols);
        for r in 0..self.rows {
            let src = g.row(r);
            for (c, w) in self.row_entries(r) {
                for (d, &s) in acc.row_mut(c).iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_matches_dense() {
        let s = SparseMatrix::from_row_lists(3, vec![vec![(0, 1.0), (2, 0.5)], vec![], vec![(1, -2.0)]])
            .unwrap();
        let x = Tensor2::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let dense = Tensor2::from_rows(&[[1.0, 0.0, 0.5], [0.0, 0.0, 0.0], [0.0, -2.0, 0.0]]).unwrap();
        assert_eq!(s.mul_dense(&x).unwrap(), dense.matmul(&x).unwrap());
        let mut acc = Tensor2::zeros(3, 2);
        s.accumulate_transpose_mul(&x, &mut acc);
        assert_eq!(acc, dense.transpose().matmul(&x).unwrap());
    }

    #[test]
    fn rejects_out_of_range_column() {
        assert!(SparseMatrix::from_row_lists(2, vec![vec![(2, 1.0)]]).is_err());
    }
}
