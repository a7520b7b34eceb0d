//! Sparse linear maps between weighted coordinate spaces.
//!
//! Each space carries a diagonal inner-product weight, so the Hilbert
//! adjoint of `A` is `W_in⁻¹ Aᵀ W_out` rather than the plain transpose.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};

/// CSR matrix with row-major accumulation order.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearOp {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    in_weights: Vec<f64>,
    out_weights: Vec<f64>,
}

pub fn weighted_dot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), w)| w * x * y).sum()
}

pub fn weighted_norm(a: &[f64], w: &[f64]) -> f64 {
    weighted_dot(a, a, w).sqrt()
}

impl LinearOp {
    /// Duplicates are summed; entries are kept in (row, col) order.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
        in_weights: Vec<f64>,
        out_weights: Vec<f64>,
    ) -> Result<Self> {
        if in_weights.len() != cols || out_weights.len() != rows {
            return shape_err(format!(
                "{rows}x{cols} operator with {} input and {} output weights",
                in_weights.len(),
                out_weights.len()
            ));
        }
        if in_weights.iter().chain(&out_weights).any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Invalid("weights must be strictly positive".into()));
        }
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i >= rows || j >= cols {
                return shape_err(format!("entry ({i},{j}) outside {rows}x{cols}"));
            }
            if !v.is_finite() {
                return Err(Error::Domain(format!("non-finite entry at ({i},{j})")));
            }
            sorted.push((i, j, v));
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { rows, cols, row_ptr, col_idx, values, in_weights, out_weights })
    }

    pub fn identity(weights: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t, weights.clone(), weights)
    }

    pub fn zero(in_weights: Vec<f64>, out_weights: Vec<f64>) -> Result<Self> {
        Self::from_triplets(out_weights.len(), in_weights.len(), &[], in_weights, out_weights)
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

    pub fn in_weights(&self) -> &[f64] {
        &self.in_weights
    }

    pub fn out_weights(&self) -> &[f64] {
        &self.out_weights
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (i, self.col_idx[p], self.values[p]))
        })
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return shape_err(format!("operator has {} columns, vector has {}", self.cols, v.len()));
        }
        let mut out = vec![0.0; self.rows];
        self.apply_add(1.0, v, &mut out);
        Ok(out)
    }

    /// `out += scale · A v`. Lengths are the caller's responsibility.
    pub fn apply_add(&self, scale: f64, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * v[self.col_idx[p]];
            }
            *o += scale * acc;
        }
    }

    /// Hilbert adjoint `W_in⁻¹ Aᵀ W_out` with input and output spaces swapped.
    pub fn adjoint(&self) -> LinearOp {
        let t: Vec<_> = self
            .triplets()
            .map(|(i, j, v)| (j, i, v * self.out_weights[i] / self.in_weights[j]))
            .collect();
        Self::from_triplets(self.cols, self.rows, &t, self.out_weights.clone(), self.in_weights.clone())
            .expect("adjoint of a valid operator is valid")
    }

    /// Plain transpose that ignores the weights. Only the adjoint is
    /// correct; this exists to build negative controls.
    pub fn unweighted_transpose(&self) -> LinearOp {
        let t: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.cols, self.rows, &t, self.out_weights.clone(), self.in_weights.clone())
            .expect("transpose of a valid operator is valid")
    }

    pub fn scaled(&self, s: f64) -> LinearOp {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &LinearOp) -> Result<LinearOp> {
        if inner.rows != self.cols {
            return shape_err(format!(
                "cannot compose {}x{} after {}x{}",
                self.rows, self.cols, inner.rows, inner.cols
            ));
        }
        let mut t = Vec::new();
        let mut acc = vec![0.0; inner.cols];
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..self.rows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let k = self.col_idx[p];
                for q in inner.row_ptr[k]..inner.row_ptr[k + 1] {
                    let j = inner.col_idx[q];
                    if acc[j] == 0.0 {
                        touched.push(j);
                    }
                    acc[j] += self.values[p] * inner.values[q];
                }
            }
            touched.sort_unstable();
            touched.dedup();
            for &j in &touched {
                if acc[j] != 0.0 {
                    t.push((i, j, acc[j]));
                }
                acc[j] = 0.0;
            }
            touched.clear();
        }
        Self::from_triplets(self.rows, inner.cols, &t, inner.in_weights.clone(), self.out_weights.clone())
    }

    /// Columns `start..start + len` as an operator of their own.
    pub fn column_block(&self, start: usize, len: usize) -> Result<LinearOp> {
        if start + len > self.cols {
            return shape_err("column block out of range");
        }
        let t: Vec<_> = self
            .triplets()
            .filter(|&(_, j, _)| j >= start && j < start + len)
            .map(|(i, j, v)| (i, j - start, v))
            .collect();
        Self::from_triplets(
            self.rows,
            len,
            &t,
            self.in_weights[start..start + len].to_vec(),
            self.out_weights.clone(),
        )
    }

    /// Rows `start..start + len` as an operator of their own.
    pub fn row_block(&self, start: usize, len: usize) -> Result<LinearOp> {
        if start + len > self.rows {
            return shape_err("row block out of range");
        }
        let t: Vec<_> = self
            .triplets()
            .filter(|&(i, _, _)| i >= start && i < start + len)
            .map(|(i, j, v)| (i - start, j, v))
            .collect();
        Self::from_triplets(
            len,
            self.cols,
            &t,
            self.in_weights.clone(),
            self.out_weights[start..start + len].to_vec(),
        )
    }

    /// Places scaled operators into a block matrix. `row_spaces` and
    /// `col_spaces` hold the weights of each block row/column; each entry
    /// of `blocks` is `(block_row, block_col, op, scale)`.
    pub fn assemble(
        row_spaces: &[&[f64]],
        col_spaces: &[&[f64]],
        blocks: &[(usize, usize, &LinearOp, f64)],
    ) -> Result<LinearOp> {
        let offsets = |spaces: &[&[f64]]| {
            let mut acc = vec![0usize];
            for s in spaces {
                acc.push(acc.last().unwrap() + s.len());
            }
            acc
        };
        let ro = offsets(row_spaces);
        let co = offsets(col_spaces);
        let mut t = Vec::new();
        for &(bi, bj, op, scale) in blocks {
            if bi >= row_spaces.len() || bj >= col_spaces.len() {
                return shape_err(format!("block ({bi},{bj}) outside the block grid"));
            }
            if op.rows != row_spaces[bi].len() || op.cols != col_spaces[bj].len() {
                return shape_err(format!(
                    "block ({bi},{bj}) is {}x{}, slot is {}x{}",
                    op.rows,
                    op.cols,
                    row_spaces[bi].len(),
                    col_spaces[bj].len()
                ));
            }
            t.extend(op.triplets().map(|(i, j, v)| (ro[bi] + i, co[bj] + j, scale * v)));
        }
        let out_w: Vec<f64> = row_spaces.concat();
        let in_w: Vec<f64> = col_spaces.concat();
        Self::from_triplets(*ro.last().unwrap(), *co.last().unwrap(), &t, in_w, out_w)
    }

    /// Wraps a dense matrix acting between unit-weight Euclidean spaces.
    pub fn from_dense(m: &DMatrix<f64>) -> LinearOp {
        Self::from_dense_weighted(m, vec![1.0; m.ncols()], vec![1.0; m.nrows()])
            .expect("dense matrix with unit weights")
    }

    pub fn from_dense_weighted(
        m: &DMatrix<f64>,
        in_weights: Vec<f64>,
        out_weights: Vec<f64>,
    ) -> Result<LinearOp> {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t, in_weights, out_weights)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// MatrixMarket-style dump: `rows cols nnz`, then one `i j value` per
    /// line (zero-based).
    pub fn write_triplets<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }
}
