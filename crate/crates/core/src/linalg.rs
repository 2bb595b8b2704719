//! Dense row-major matrices and the symmetric factorizations the DPP code needs.
//!
//! Everything here is plain `Vec<f64>` arithmetic. Matrices in this crate are
//! small (a few structures per training instance, or `n x d` activation
//! blocks), so cache-friendly loops beat pulling in a BLAS.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter levels tried, in order, when a PSD factorization fails.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Mat::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * other`
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * other`
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * otherᵀ`
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        Mat::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|a| *a = v);
    }

    /// Arithmetic mean of the rows.
    pub fn mean_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }

    /// Columns `start..start + width` as a new matrix.
    pub fn col_block(&self, start: usize, width: usize) -> Mat {
        Mat::from_fn(self.rows, width, |i, j| self[(i, start + j)])
    }

    pub fn set_col_block(&mut self, start: usize, block: &Mat) {
        assert_eq!(block.rows, self.rows);
        for i in 0..self.rows {
            self.row_mut(i)[start..start + block.cols].copy_from_slice(block.row(i));
        }
    }

    /// Rows selected by `idx`, in order.
    pub fn gather_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self[idx[r]] += block[r]` for every row `r`.
    pub fn scatter_add_rows(&mut self, idx: &[usize], block: &Mat) {
        assert_eq!(idx.len(), block.rows);
        for (r, &i) in idx.iter().enumerate() {
            for (a, b) in self.row_mut(i).iter_mut().zip(block.row(r)) {
                *a += b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A square matrix checked for symmetry at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Mat);

impl SymMatrix {
    pub const SYMMETRY_TOL: f64 = 1e-12;

    pub fn new(m: Mat) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::ShapeMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        for i in 0..m.rows() {
            for j in 0..i {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                let scale = a.abs().max(b.abs()).max(1.0);
                if (a - b).abs() > Self::SYMMETRY_TOL * scale {
                    return Err(Error::ShapeMismatch(format!(
                        "entries ({i},{j}) and ({j},{i}) differ: {a} vs {b}"
                    )));
                }
            }
        }
        Ok(SymMatrix(m))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Mat::identity(n))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    /// Principal submatrix on `idx`.
    pub fn principal(&self, idx: &IndexSet) -> SymMatrix {
        let ix = idx.as_slice();
        SymMatrix(Mat::from_fn(ix.len(), ix.len(), |i, j| self.0[(ix[i], ix[j])]))
    }

    /// `self + diag(d)`.
    pub fn add_diag(&self, d: &[f64]) -> SymMatrix {
        assert_eq!(d.len(), self.dim());
        let mut m = self.0.clone();
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] += v;
        }
        SymMatrix(m)
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, ij: (usize, usize)) -> &f64 {
        &self.0[ij]
    }
}

/// Strictly increasing list of ground-set indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    /// Sorts and deduplicates.
    pub fn new(mut v: Vec<usize>) -> Self {
        v.sort_unstable();
        v.dedup();
        IndexSet(v)
    }

    pub fn range(start: usize, end: usize) -> Self {
        IndexSet((start..end).collect())
    }

    /// Members of `0..n` whose bit is set in `mask`.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        IndexSet((0..n).filter(|i| mask >> i & 1 == 1).collect())
    }

    #[inline]
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        IndexSet::new(v)
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= dim => Err(Error::IndexOutOfRange { index: last, dim }),
            _ => Ok(()),
        }
    }

    pub fn check_disjoint(&self, other: &IndexSet) -> Result<()> {
        match self.0.iter().find(|i| other.contains(**i)) {
            Some(&i) => Err(Error::OverlappingSets(i)),
            None => Ok(()),
        }
    }
}

/// Lower-triangular Cholesky factor of `m + jitter * I`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    lower: Mat,
    jitter: f64,
}

impl Cholesky {
    /// Plain factorization, no jitter. `None` if a pivot is not strictly positive.
    pub fn factor_exact(m: &Mat) -> Option<Cholesky> {
        Self::try_factor(m, 0.0)
    }

    /// Factorizes with the first jitter on [`JITTER_LADDER`] that succeeds.
    pub fn factor(m: &SymMatrix) -> Result<Cholesky> {
        for &jitter in &JITTER_LADDER {
            if let Some(c) = Self::try_factor(m.as_mat(), jitter) {
                return Ok(c);
            }
        }
        Err(Error::NotPsd {
            jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
        })
    }

    fn try_factor(m: &Mat, jitter: f64) -> Option<Cholesky> {
        let n = m.rows();
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)] + jitter;
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(Cholesky { lower: l, jitter })
    }

    #[inline]
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> &Mat {
        &self.lower
    }

    pub fn logdet(&self) -> f64 {
        (0..self.lower.rows())
            .map(|i| self.lower[(i, i)].ln())
            .sum::<f64>()
            * 2.0
    }

    /// Solves `(m + jitter I) x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let l = &self.lower;
        let n = l.rows();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[(i, k)] * b[k];
            }
            b[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= l[(k, i)] * b[k];
            }
            b[i] = s / l[(i, i)];
        }
    }

    /// Inverse of the factored (jittered) matrix.
    pub fn inverse(&self) -> Mat {
        let n = self.lower.rows();
        let mut inv = Mat::zeros(n, n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // symmetrize away round-off
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

/// `log det(m)` through a jittered Cholesky factorization. The empty matrix has
/// determinant 1.
pub fn logdet_psd(m: &SymMatrix) -> Result<f64> {
    Ok(Cholesky::factor(m)?.logdet())
}

/// Determinant by Gaussian elimination with partial pivoting. Works for any
/// square matrix; used as the reference route independent of Cholesky.
pub fn det_lu(m: &Mat) -> f64 {
    assert_eq!(m.rows(), m.cols(), "det of non-square matrix");
    let n = m.rows();
    let mut a = m.clone();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        if a[(pivot, col)] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..n {
                let tmp = a[(col, j)];
                a[(col, j)] = a[(pivot, j)];
                a[(pivot, j)] = tmp;
            }
            det = -det;
        }
        let p = a[(col, col)];
        det *= p;
        for i in col + 1..n {
            let factor = a[(i, col)] / p;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[(i, j)] -= factor * a[(col, j)];
            }
        }
    }
    det
}
