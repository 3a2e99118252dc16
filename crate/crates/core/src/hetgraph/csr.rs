//! Row-compressed boolean adjacency.

use std::collections::HashSet;

/// Sparse boolean matrix in compressed sparse row layout.
///
/// Rows are source ids, column indices are destination ids. A `Csr` built
/// through [`Csr::from_pairs`] always has sorted, deduplicated rows;
/// [`Csr::from_raw_parts`] skips that normalisation so that malformed
/// structures can be represented and caught by validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl Csr {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        Csr {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
        }
    }

    /// Builds a normalised matrix from `(row, col)` pairs.
    ///
    /// Returns the matrix and the number of duplicate pairs that were dropped.
    /// Pairs must already be in range; the loader checks bounds before calling.
    pub fn from_pairs(n_rows: usize, n_cols: usize, pairs: &[(usize, usize)]) -> (Self, usize) {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c) in pairs {
            debug_assert!(r < n_rows && c < n_cols);
            counts[r + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0usize; pairs.len()];
        for &(r, c) in pairs {
            cols[fill[r]] = c;
            fill[r] += 1;
        }

        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::with_capacity(pairs.len());
        indptr.push(0);
        let mut dups = 0;
        for r in 0..n_rows {
            let row = &mut cols[counts[r]..counts[r + 1]];
            row.sort_unstable();
            let before = indices.len();
            for &c in row.iter() {
                if indices.len() > before && indices[indices.len() - 1] == c {
                    dups += 1;
                } else {
                    indices.push(c);
                }
            }
            indptr.push(indices.len());
        }
        (
            Csr {
                n_rows,
                n_cols,
                indptr,
                indices,
            },
            dups,
        )
    }

    /// Wraps raw arrays without sorting or deduplicating rows.
    pub fn from_raw_parts(n_rows: usize, n_cols: usize, indptr: Vec<usize>, indices: Vec<usize>) -> Self {
        assert_eq!(indptr.len(), n_rows + 1, "indptr must have n_rows + 1 entries");
        assert_eq!(*indptr.last().unwrap(), indices.len());
        Csr {
            n_rows,
            n_cols,
            indptr,
            indices,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[usize] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    #[inline]
    pub fn degree(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r < self.n_rows && self.row(r).binary_search(&c).is_ok()
    }

    /// All stored pairs in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row(r).iter().map(move |&c| (r, c)))
    }

    pub fn transpose(&self) -> Csr {
        let pairs: Vec<(usize, usize)> = self.pairs().map(|(r, c)| (c, r)).collect();
        Csr::from_pairs(self.n_cols, self.n_rows, &pairs).0
    }

    /// Boolean product: `(r, c)` is set iff some `k` has `(r, k)` here and
    /// `(k, c)` in `other`.
    pub fn bool_compose(&self, other: &Csr) -> Csr {
        assert_eq!(self.n_cols, other.n_rows, "inner dimensions differ");
        let mut marker = vec![usize::MAX; other.n_cols];
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for r in 0..self.n_rows {
            let start = indices.len();
            for &k in self.row(r) {
                for &c in other.row(k) {
                    if marker[c] != r {
                        marker[c] = r;
                        indices.push(c);
                    }
                }
            }
            indices[start..].sort_unstable();
            indptr.push(indices.len());
        }
        Csr {
            n_rows: self.n_rows,
            n_cols: other.n_cols,
            indptr,
            indices,
        }
    }

    /// Copy of this matrix without the given pairs.
    pub fn without(&self, removed: &HashSet<(usize, usize)>) -> Csr {
        if removed.is_empty() {
            return self.clone();
        }
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        let mut indices = Vec::with_capacity(self.nnz());
        indptr.push(0);
        for r in 0..self.n_rows {
            indices.extend(self.row(r).iter().copied().filter(|&c| !removed.contains(&(r, c))));
            indptr.push(indices.len());
        }
        Csr {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            indptr,
            indices,
        }
    }

    /// Relabels rows and columns: entry `(r, c)` moves to `(row_perm[r], col_perm[c])`.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> Csr {
        let pairs: Vec<(usize, usize)> = self.pairs().map(|(r, c)| (row_perm[r], col_perm[c])).collect();
        Csr::from_pairs(self.n_rows, self.n_cols, &pairs).0
    }
}
