use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Fixed CSR sparsity pattern of a square or rectangular matrix.
///
/// Entries are ordered row-major; the value vector of any matrix using this
/// pattern is aligned with `col_idx`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsePattern {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsePattern {
    /// Builds a pattern from (row, col) pairs. Duplicates are merged.
    pub fn from_entries(
        n_rows: usize,
        n_cols: usize,
        entries: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n_rows];
        for (i, j) in entries {
            if i >= n_rows || j >= n_cols {
                return Err(invalid(format!(
                    "entry ({i}, {j}) outside {n_rows}x{n_cols}"
                )));
            }
            rows[i].push(j);
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut cols in rows {
            cols.sort_unstable();
            cols.dedup();
            col_idx.extend(cols);
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// Iterates `(entry, row, col)` in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |e| (e, i, self.col_idx[e]))
        })
    }

    /// Storage index of entry (i, j), if present.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|p| self.row_ptr[i] + p)
    }

    /// Expands aligned values into a dense row-major matrix.
    pub fn to_dense(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * self.n_cols];
        for (e, i, j) in self.entries() {
            out[i * self.n_cols + j] = values[e];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merges_duplicates_and_sorts() {
        let p = SparsePattern::from_entries(3, 3, [(0, 2), (0, 0), (2, 1), (0, 2)]).unwrap();
        assert_eq!(p.nnz(), 3);
        assert_eq!(p.row_ptr(), &[0, 2, 2, 3]);
        assert_eq!(p.col_idx(), &[0, 2, 1]);
        assert_eq!(p.find(0, 2), Some(1));
        assert_eq!(p.find(1, 1), None);
    }

    #[test]
    fn out_of_range_entry_rejected() {
        assert!(SparsePattern::from_entries(2, 2, [(2, 0)]).is_err());
    }
}
