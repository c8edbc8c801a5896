//! Dense kernels for the small local subproblems of variable elimination.
//!
//! Everything here is sized for a handful of variables at a time: the sparsity
//! of the full problem lives in the factor graph, so the matrices that reach
//! this module are small and dense.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Relative threshold below which a pivot counts as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self {
            rows,
            cols,
            data: data.to_vec(),
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn column_vector(v: &[f64]) -> Self {
        Self::from_row_slice(v.len(), 1, v)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = rhs.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        self.add(&rhs.scaled(-1.0))
    }

    /// Copies the column range `[start, start + width)`.
    pub fn columns(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    /// Copies the row range `[start, start + height)`.
    pub fn row_range(&self, start: usize, height: usize) -> Matrix {
        Matrix {
            rows: height,
            cols: self.cols,
            data: self.data[start * self.cols..(start + height) * self.cols].to_vec(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_upper_triangular(&self) -> bool {
        (0..self.rows).all(|i| (0..i.min(self.cols)).all(|j| self[(i, j)] == 0.0))
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    /// `row[dst] -= factor * row[src]`
    fn axpy_rows(&mut self, dst: usize, src: usize, factor: f64) {
        if factor == 0.0 {
            return;
        }
        let cols = self.cols;
        let (d, s) = if dst < src {
            let (lo, hi) = self.data.split_at_mut(src * cols);
            (&mut lo[dst * cols..(dst + 1) * cols], &hi[..cols])
        } else {
            let (lo, hi) = self.data.split_at_mut(dst * cols);
            (&mut hi[..cols], &lo[src * cols..(src + 1) * cols])
        };
        for (x, &y) in d.iter_mut().zip(s) {
            *x -= factor * y;
        }
    }

    fn negate_row(&mut self, i: usize) {
        for v in self.row_mut(i) {
            *v = -*v;
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v}")?;
            }
        }
        write!(f, "]")
    }
}

/// Weight attached to one row of a least-squares system.
///
/// Finite weights multiply the squared residual. `Constraint` rows carry an
/// infinite weight and must hold exactly; they never appear as a numeric
/// infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowWeight {
    Finite(f64),
    Constraint,
}

impl RowWeight {
    pub fn is_constraint(&self) -> bool {
        matches!(self, RowWeight::Constraint)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RowWeight::Finite(w) if !(w >= 0.0 && w.is_finite()) => Err(Error::DimensionMismatch(
                format!("finite row weight must be a nonnegative number, got {w}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Householder QR of a tall or wide matrix.
#[derive(Debug, Clone)]
pub struct QrFactorization {
    r: Matrix,
    // One reflector per reduced column: (start row, v, beta), applied in order.
    reflectors: Vec<(usize, Vec<f64>, f64)>,
    // Row sign flips applied after the reflectors so that diag(R) >= 0.
    signs: Vec<f64>,
    rows: usize,
}

impl QrFactorization {
    /// Upper-trapezoidal factor with `min(rows, cols)` rows.
    pub fn r(&self) -> &Matrix {
        &self.r
    }

    /// Applies `Q^T` to a right-hand side of length `rows`.
    pub fn apply_qt(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.rows, "rhs length must equal row count");
        let mut out = b.to_vec();
        for (start, v, beta) in &self.reflectors {
            let dot: f64 = v.iter().zip(&out[*start..]).map(|(a, b)| a * b).sum();
            let s = beta * dot;
            for (o, vi) in out[*start..].iter_mut().zip(v) {
                *o -= s * vi;
            }
        }
        for (o, s) in out.iter_mut().zip(&self.signs) {
            *o *= s;
        }
        out
    }
}

/// Householder QR factorization with nonnegative diagonal.
///
/// `||A x - b||^2 = ||R x - c[..k]||^2 + ||c[k..]||^2` with `c = apply_qt(b)`
/// and `k = min(rows, cols)`.
pub fn qr_factorize(a: &Matrix) -> QrFactorization {
    let mut work = a.clone();
    let k = a.rows.min(a.cols);
    let mut reflectors = Vec::with_capacity(k);
    for col in 0..k {
        if let Some((v, beta)) = householder_column(&mut work, col, col) {
            reflectors.push((col, v, beta));
        }
    }
    let mut signs = vec![1.0; a.rows];
    for (i, s) in signs.iter_mut().enumerate().take(k) {
        if work[(i, i)] < 0.0 {
            *s = -1.0;
            work.negate_row(i);
        }
    }
    QrFactorization {
        r: work.row_range(0, k),
        reflectors,
        signs,
        rows: a.rows,
    }
}

/// Reduces `m[pivot_row.., col]` to a multiple of `e_1`, applying the reflector
/// to every column at or right of `col`. Entries below the pivot are set to
/// exactly zero. Returns the reflector, or `None` when the column is already
/// zero below the pivot row.
fn householder_column(m: &mut Matrix, pivot_row: usize, col: usize) -> Option<(Vec<f64>, f64)> {
    let rows = m.rows;
    if pivot_row >= rows {
        return None;
    }
    // Work with the column scaled by its largest entry so tiny columns
    // cannot underflow the norm and overflow beta.
    let scale = (pivot_row..rows).fold(0.0f64, |a, i| a.max(m[(i, col)].abs()));
    if scale == 0.0 {
        return None;
    }
    let mut v: Vec<f64> = (pivot_row..rows).map(|i| m[(i, col)] / scale).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let alpha = if v[0] >= 0.0 { -norm } else { norm };
    v[0] -= alpha;
    let alpha = alpha * scale;
    let vtv: f64 = v.iter().map(|x| x * x).sum();
    if vtv == 0.0 {
        return None;
    }
    let beta = 2.0 / vtv;
    for j in col + 1..m.cols {
        let dot: f64 = v
            .iter()
            .enumerate()
            .map(|(r, vi)| vi * m[(pivot_row + r, j)])
            .sum();
        let s = beta * dot;
        if s != 0.0 {
            for (r, vi) in v.iter().enumerate() {
                m[(pivot_row + r, j)] -= s * vi;
            }
        }
    }
    m[(pivot_row, col)] = alpha;
    for i in pivot_row + 1..rows {
        m[(i, col)] = 0.0;
    }
    Some((v, beta))
}

/// Triangularizes the leading `ncols` columns of `m` in place, carrying every
/// remaining column (separators, right-hand side) along. Diagonal entries are
/// made nonnegative.
fn triangularize(m: &mut Matrix, ncols: usize) {
    let k = ncols.min(m.rows);
    for col in 0..k {
        householder_column(m, col, col);
        if m[(col, col)] < 0.0 {
            m.negate_row(col);
        }
    }
}

/// Output of eliminating the frontal columns from a local system
/// `[frontal | separator | rhs]`.
#[derive(Debug, Clone)]
pub struct EliminationResult {
    /// `frontal x (frontal + separator + 1)`, upper triangular on the frontal block.
    pub conditional_rows: Matrix,
    pub conditional_weights: Vec<RowWeight>,
    /// `rows x (separator + 1)`; the frontal columns are removed.
    pub marginal_rows: Matrix,
    pub marginal_weights: Vec<RowWeight>,
    /// Squared residual of finite rows that no longer depend on any variable.
    pub constant_cost: f64,
}

impl EliminationResult {
    pub fn is_constrained(&self) -> bool {
        self.conditional_weights.iter().any(|w| w.is_constraint())
    }
}

/// Eliminates the first `frontal_cols` columns of `a` (layout
/// `[frontal | separator | rhs]`) from a mix of finite and constraint rows.
///
/// Constraint rows are reduced first by Gauss-Jordan elimination with row
/// pivoting over the frontal block; the finite rows then have the constrained
/// frontal directions substituted out and are orthogonalized with Householder
/// reflections. This is the zero-covariance limit of weighted MGS without
/// ever forming a numeric infinity.
pub fn constrained_eliminate(
    a: &Matrix,
    weights: &[RowWeight],
    frontal_cols: usize,
) -> Result<EliminationResult> {
    if weights.len() != a.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} rows",
            weights.len(),
            a.rows()
        )));
    }
    if a.cols() < frontal_cols + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} columns cannot hold {frontal_cols} frontal columns and a rhs",
            a.cols()
        )));
    }
    let width = a.cols();
    let sep_cols = width - frontal_cols - 1;

    let mut cons_rows = Vec::new();
    let mut fin_rows = Vec::new();
    for (i, w) in weights.iter().enumerate() {
        w.validate()?;
        match *w {
            RowWeight::Constraint => cons_rows.push(i),
            RowWeight::Finite(_) => fin_rows.push(i),
        }
    }

    let mut cons = Matrix::zeros(cons_rows.len(), width);
    for (dst, &src) in cons_rows.iter().enumerate() {
        cons.row_mut(dst).copy_from_slice(a.row(src));
    }
    let mut fin = Matrix::zeros(fin_rows.len(), width);
    for (dst, &src) in fin_rows.iter().enumerate() {
        let s = match weights[src] {
            RowWeight::Finite(w) => w.sqrt(),
            RowWeight::Constraint => unreachable!(),
        };
        for (o, v) in fin.row_mut(dst).iter_mut().zip(a.row(src)) {
            *o = v * s;
        }
    }

    let scale = a.max_abs().max(fin.max_abs());
    let col_max: Vec<f64> = (0..frontal_cols)
        .map(|j| {
            let c = (0..cons.rows()).fold(0.0f64, |m, i| m.max(cons[(i, j)].abs()));
            (0..fin.rows()).fold(c, |m, i| m.max(fin[(i, j)].abs()))
        })
        .collect();

    // Gauss-Jordan over the frontal block of the constraint rows.
    let mut pivot_of_col: Vec<Option<usize>> = vec![None; frontal_cols];
    let mut next_free_row = 0;
    for c in 0..frontal_cols {
        let best = (next_free_row..cons.rows())
            .map(|r| (r, cons[(r, c)].abs()))
            .fold(None, |acc: Option<(usize, f64)>, (r, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((r, v)),
            });
        match best {
            Some((r, v)) if v > 0.0 && v >= PIVOT_TOLERANCE * col_max[c] => {
                cons.swap_rows(next_free_row, r);
                let p = next_free_row;
                if cons[(p, c)] < 0.0 {
                    cons.negate_row(p);
                }
                let piv = cons[(p, c)];
                for other in 0..cons.rows() {
                    if other != p {
                        let f = cons[(other, c)] / piv;
                        cons.axpy_rows(other, p, f);
                        cons[(other, c)] = 0.0;
                    }
                }
                pivot_of_col[c] = Some(p);
                next_free_row += 1;
            }
            _ => {
                for r in next_free_row..cons.rows() {
                    cons[(r, c)] = 0.0;
                }
            }
        }
    }

    // Substitute constrained frontal directions out of the finite rows.
    for (c, p) in pivot_of_col.iter().enumerate() {
        if let Some(p) = *p {
            let piv = cons[(p, c)];
            let prow = cons.row(p).to_vec();
            for i in 0..fin.rows() {
                let f = fin[(i, c)] / piv;
                if f != 0.0 {
                    for (x, y) in fin.row_mut(i).iter_mut().zip(&prow) {
                        *x -= f * y;
                    }
                    fin[(i, c)] = 0.0;
                }
            }
        }
    }

    // Finite rows over [free frontal | separator | rhs].
    let free_cols: Vec<usize> = (0..frontal_cols)
        .filter(|&c| pivot_of_col[c].is_none())
        .collect();
    let nfree = free_cols.len();
    let mut local = Matrix::zeros(fin.rows(), nfree + sep_cols + 1);
    for i in 0..fin.rows() {
        let src = fin.row(i);
        let dst = local.row_mut(i);
        for (k, &c) in free_cols.iter().enumerate() {
            dst[k] = src[c];
        }
        dst[nfree..].copy_from_slice(&src[frontal_cols..]);
    }
    if nfree > 0 || local.rows() > sep_cols {
        triangularize(&mut local, nfree + sep_cols);
    }
    for (k, &c) in free_cols.iter().enumerate() {
        if k >= local.rows() || local[(k, k)] <= PIVOT_TOLERANCE * col_max[c] {
            return Err(Error::RankDeficient { column: c });
        }
    }

    // Conditional: one row per frontal column, ordered by column.
    let mut conditional_rows = Matrix::zeros(frontal_cols, width);
    let mut conditional_weights = Vec::with_capacity(frontal_cols);
    let mut free_k = 0;
    for c in 0..frontal_cols {
        match pivot_of_col[c] {
            Some(p) => {
                conditional_rows.row_mut(c).copy_from_slice(cons.row(p));
                conditional_weights.push(RowWeight::Constraint);
            }
            None => {
                let src = local.row(free_k);
                let dst = conditional_rows.row_mut(c);
                for (k, &fc) in free_cols.iter().enumerate() {
                    dst[fc] = src[k];
                }
                dst[frontal_cols..].copy_from_slice(&src[nfree..]);
                conditional_weights.push(RowWeight::Finite(1.0));
                free_k += 1;
            }
        }
    }

    let zero_tol = PIVOT_TOLERANCE * scale;
    let mut marginal_data: Vec<f64> = Vec::new();
    let mut marginal_weights = Vec::new();

    // Leftover constraint rows must hold on the separator.
    let leftover = cons.rows() - next_free_row;
    if leftover > 0 {
        let mut rest = Matrix::zeros(leftover, sep_cols + 1);
        for r in 0..leftover {
            rest.row_mut(r)
                .copy_from_slice(&cons.row(next_free_row + r)[frontal_cols..]);
        }
        triangularize(&mut rest, sep_cols);
        for r in 0..rest.rows() {
            let row = rest.row(r);
            let sep_max = row[..sep_cols].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if sep_max <= zero_tol {
                let residual = row[sep_cols].abs();
                if residual > 1e-9 * scale.max(1.0) {
                    return Err(Error::InfeasibleConstraint { residual });
                }
            } else {
                marginal_data.extend_from_slice(row);
                marginal_weights.push(RowWeight::Constraint);
            }
        }
    }

    let mut constant_cost = 0.0;
    for r in nfree..local.rows() {
        let row = &local.row(r)[nfree..];
        let sep_max = row[..sep_cols].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if sep_max <= zero_tol {
            constant_cost += row[sep_cols] * row[sep_cols];
        } else {
            marginal_data.extend_from_slice(row);
            marginal_weights.push(RowWeight::Finite(1.0));
        }
    }

    Ok(EliminationResult {
        conditional_rows,
        conditional_weights,
        marginal_rows: Matrix::from_row_slice(marginal_weights.len(), sep_cols + 1, &marginal_data),
        marginal_weights,
        constant_cost,
    })
}

/// Back-substitution for an upper-triangular `r`.
pub fn solve_triangular(r: &Matrix, d: &[f64]) -> Result<Vec<f64>> {
    let n = r.rows();
    if r.cols() != n || d.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "triangular solve with {}x{} matrix and rhs of length {}",
            r.rows(),
            r.cols(),
            d.len()
        )));
    }
    let mut y = d.to_vec();
    for i in (0..n).rev() {
        let diag = r[(i, i)];
        if diag == 0.0 {
            return Err(Error::SingularDiagonal { index: i });
        }
        let row = r.row(i);
        let mut acc = y[i];
        for j in i + 1..n {
            acc -= row[j] * y[j];
        }
        y[i] = acc / diag;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gram(a: &Matrix) -> Matrix {
        a.transpose().matmul(a)
    }

    #[test]
    fn qr_of_single_column() {
        let a = Matrix::from_rows(&[&[3.0], &[4.0]]);
        let qr = qr_factorize(&a);
        assert_eq!(qr.r().rows(), 1);
        assert_abs_diff_eq!(qr.r()[(0, 0)], 5.0, epsilon = 1e-14);
    }

    #[test]
    fn qr_of_identity() {
        let qr = qr_factorize(&Matrix::identity(2));
        assert_eq!(qr.r(), &Matrix::identity(2));
    }

    #[test]
    fn qr_matches_cholesky_of_normal_equations() {
        let a = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]]);
        // A^T A = [[2, 1], [1, 2]]; Cholesky: R = [[sqrt2, 1/sqrt2], [0, sqrt(3/2)]]
        let s2 = 2f64.sqrt();
        let expected = Matrix::from_rows(&[&[s2, 1.0 / s2], &[0.0, 1.5f64.sqrt()]]);
        let qr = qr_factorize(&a);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(qr.r()[(i, j)], expected[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn qr_preserves_residual_norm() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 7.0]]);
        let b = [1.0, -1.0, 2.0];
        let qr = qr_factorize(&a);
        let c = qr.apply_qt(&b);
        let x = [0.3, -0.7];
        let lhs: f64 = a
            .mul_vec(&x)
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q).powi(2))
            .sum();
        let rx = qr.r().mul_vec(&x);
        let rhs: f64 = rx.iter().zip(&c).map(|(p, q)| (p - q).powi(2)).sum::<f64>() + c[2] * c[2];
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn triangular_solves() {
        assert_eq!(
            solve_triangular(&Matrix::identity(2), &[1.0, 2.0]).unwrap(),
            vec![1.0, 2.0]
        );
        let r = Matrix::from_rows(&[&[2.0, 1.0], &[0.0, 4.0]]);
        assert_eq!(solve_triangular(&r, &[4.0, 8.0]).unwrap(), vec![1.0, 2.0]);
        let r = Matrix::from_rows(&[&[5.0]]);
        assert_eq!(solve_triangular(&r, &[10.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn triangular_solve_rejects_zero_diagonal() {
        let r = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(
            solve_triangular(&r, &[1.0, 1.0]),
            Err(Error::SingularDiagonal { index: 1 })
        );
    }

    #[test]
    fn scalar_constraint_substitution() {
        // frontal x, separator s: 2x = 0 (finite), x - 3s = 0 (constraint)
        let a = Matrix::from_rows(&[&[2.0, 0.0, 0.0], &[1.0, -3.0, 0.0]]);
        let res = constrained_eliminate(&a, &[RowWeight::Finite(1.0), RowWeight::Constraint], 1)
            .unwrap();
        assert_eq!(res.conditional_rows, Matrix::from_rows(&[&[1.0, -3.0, 0.0]]));
        assert_eq!(res.conditional_weights, vec![RowWeight::Constraint]);
        assert_eq!(res.marginal_rows, Matrix::from_rows(&[&[6.0, 0.0]]));
        assert_eq!(res.marginal_weights, vec![RowWeight::Finite(1.0)]);
    }

    #[test]
    fn identity_without_constraints() {
        let a = Matrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let res = constrained_eliminate(&a, &[RowWeight::Finite(1.0); 2], 2).unwrap();
        assert_eq!(res.conditional_rows, a);
        assert_eq!(res.marginal_rows.rows(), 0);
        assert!(!res.is_constrained());
    }

    #[test]
    fn cart_elimination_pattern() {
        // [Q^1/2, 0 | 0] finite and [I, -A | 0] constraint over a 2-dim frontal.
        let q = 10f64.sqrt();
        let blocks = [0.3, -1.2, 0.5, 2.0, 0.7, -0.4];
        let mut rows = vec![
            vec![q, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, q, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        rows.push(vec![1.0, 0.0, -blocks[0], -blocks[1], -blocks[2], 0.0, 0.0]);
        rows.push(vec![0.0, 1.0, -blocks[3], -blocks[4], -blocks[5], 0.0, 0.0]);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let a = Matrix::from_rows(&refs);
        let w = [
            RowWeight::Finite(1.0),
            RowWeight::Finite(1.0),
            RowWeight::Constraint,
            RowWeight::Constraint,
        ];
        let res = constrained_eliminate(&a, &w, 2).unwrap();
        assert_eq!(res.conditional_rows, a.row_range(2, 2));
        assert_eq!(res.conditional_weights, vec![RowWeight::Constraint; 2]);
        let expected = Matrix::from_rows(&[
            &[q * blocks[0], q * blocks[1], q * blocks[2], 0.0, 0.0],
            &[q * blocks[3], q * blocks[4], q * blocks[5], 0.0, 0.0],
        ]);
        assert_eq!(res.marginal_rows.rows(), 2);
        for i in 0..2 {
            for j in 0..5 {
                assert_abs_diff_eq!(res.marginal_rows[(i, j)], expected[(i, j)], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn inconsistent_constraints_are_reported() {
        // x = 1 and x = 2 with nothing else to absorb the difference.
        let a = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 2.0]]);
        let err = constrained_eliminate(&a, &[RowWeight::Constraint; 2], 1).unwrap_err();
        assert!(matches!(err, Error::InfeasibleConstraint { .. }));
    }

    #[test]
    fn rank_deficient_frontal_is_reported() {
        let a = Matrix::from_rows(&[&[1.0, 1.0, 0.0], &[2.0, 2.0, 0.0]]);
        let err = constrained_eliminate(&a, &[RowWeight::Finite(1.0); 2], 2).unwrap_err();
        assert_eq!(err, Error::RankDeficient { column: 1 });
    }

    #[test]
    fn partially_constrained_frontal() {
        // Frontal (x, y), separator s. Constraint: y = s. Finite: x - 1, y, s - 2.
        let a = Matrix::from_rows(&[
            &[0.0, 1.0, -1.0, 0.0],
            &[1.0, 0.0, 0.0, 1.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 2.0],
        ]);
        let w = [
            RowWeight::Constraint,
            RowWeight::Finite(1.0),
            RowWeight::Finite(1.0),
            RowWeight::Finite(1.0),
        ];
        let res = constrained_eliminate(&a, &w, 2).unwrap();
        assert!(res.conditional_rows.columns(0, 2).is_upper_triangular());
        assert_eq!(res.conditional_weights[0], RowWeight::Finite(1.0));
        assert_eq!(res.conditional_weights[1], RowWeight::Constraint);
        // Marginal on s: s^2 + (s-2)^2 minimized at s = 1.
        let m = &res.marginal_rows;
        let (mut h, mut g) = (0.0, 0.0);
        for i in 0..m.rows() {
            h += m[(i, 0)] * m[(i, 0)];
            g += m[(i, 0)] * m[(i, 1)];
        }
        assert_abs_diff_eq!(g / h, 1.0, epsilon = 1e-12);
    }

    fn matrix_strategy(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
        (1..=max_cols)
            .prop_flat_map(move |c| (Just(c), c..=max_rows.max(c)))
            .prop_flat_map(|(c, r)| {
                proptest::collection::vec(-1.0f64..1.0, r * c)
                    .prop_map(move |d| Matrix::from_row_slice(r, c, &d))
            })
    }

    proptest! {
        #[test]
        fn qr_reproduces_gram_matrix(a in matrix_strategy(10, 8)) {
            let qr = qr_factorize(&a);
            let g = gram(&a);
            let diff = gram(qr.r()).sub(&g).frobenius_norm();
            prop_assert!(diff <= 1e-10 * g.frobenius_norm().max(1e-300));
            prop_assert!(qr.r().is_upper_triangular());
            for i in 0..qr.r().rows() {
                prop_assert!(qr.r()[(i, i)] >= 0.0);
            }
        }

        #[test]
        fn unconstrained_elimination_agrees_with_qr(
            a in matrix_strategy(9, 6),
            b in proptest::collection::vec(-1.0f64..1.0, 9),
            frontal in 1usize..4,
        ) {
            prop_assume!(frontal <= a.cols());
            let rows = a.rows();
            let mut aug = Matrix::zeros(rows, a.cols() + 1);
            for i in 0..rows {
                aug.row_mut(i)[..a.cols()].copy_from_slice(a.row(i));
                aug[(i, a.cols())] = b[i];
            }
            let qr = qr_factorize(&a.columns(0, frontal));
            prop_assume!((0..frontal).all(|i| qr.r()[(i, i)] > 1e-6));
            let res = constrained_eliminate(&aug, &vec![RowWeight::Finite(1.0); rows], frontal).unwrap();
            // Same triangular factor on the frontal block as plain QR.
            for i in 0..frontal {
                for j in 0..frontal {
                    prop_assert!((res.conditional_rows[(i, j)] - qr.r()[(i, j)]).abs() < 1e-10);
                }
            }
            // And the separator/rhs blocks equal Q^T applied to them.
            for j in frontal..aug.cols() {
                let qt = qr.apply_qt(&aug.column(j));
                for i in 0..frontal {
                    prop_assert!((res.conditional_rows[(i, j)] - qt[i]).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn triangular_solve_inverts_multiplication(
            n in 1usize..8,
            seed in proptest::collection::vec(-1.0f64..1.0, 64),
            y in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let mut r = Matrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    r[(i, j)] = seed[i * 8 + j];
                }
                r[(i, i)] = 1.0 + seed[i * 8 + i].abs();
            }
            let y = &y[..n];
            let d = r.mul_vec(y);
            let got = solve_triangular(&r, &d).unwrap();
            for (g, e) in got.iter().zip(y) {
                prop_assert!((g - e).abs() <= 1e-10 * e.abs().max(1.0));
            }
        }
    }
}
