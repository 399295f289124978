//! Dense double-precision matrix primitives and the two factorizations the
//! rest of the crate is built on: symmetric eigendecomposition by cyclic
//! Jacobi rotations and thin SVD of tall matrices via the Gram matrix.
//!
//! Everything here targets small, dense problems (a few thousand rows, a few
//! dozen columns). All functions are pure and safe to call concurrently.

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries. Fails when the length does not
    /// match `rows * cols` or any entry is non-finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("matrix entries must be finite".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("ragged rows"));
        }
        Matrix::from_vec(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the given rows (in order) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, p, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for k in 0..p {
                let a_ik = a_row[k];
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for j in 0..n {
                    out_row[j] += a_ik * b_row[j];
                }
            }
        }
        out
    }

    /// `self^T * other`, without materializing the transpose.
    pub fn tr_mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, other.rows,
            "tr_mul shape mismatch: {}x{} vs {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, p, n) = (self.cols, self.rows, other.cols);
        let mut out = Matrix::zeros(m, n);
        for k in 0..p {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for i in 0..m {
                let a_ki = a_row[i];
                if a_ki == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for j in 0..n {
                    out_row[j] += a_ki * b_row[j];
                }
            }
        }
        out
    }

    /// `self * other^T`, computed as row-by-row dot products.
    pub fn mul_tr(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.cols,
            "mul_tr shape mismatch: {}x{} vs {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, n) = (self.rows, other.rows);
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (j, val) in out_row.iter_mut().enumerate() {
                let b_row = other.row(j);
                *val = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        out
    }

    /// Gram matrix `self^T * self`.
    pub fn gram(&self) -> Matrix {
        self.tr_mul(self)
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn col_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        means.iter_mut().for_each(|m| *m *= inv);
        means
    }

    /// Subtracts the given per-column offsets from every row.
    pub fn sub_col_offsets(&self, offsets: &[f64]) -> Matrix {
        assert_eq!(offsets.len(), self.cols);
        let mut out = self.clone();
        for i in 0..out.rows {
            for (v, o) in out.row_mut(i).iter_mut().zip(offsets) {
                *v -= o;
            }
        }
        out
    }

    /// Column-centered copy together with the subtracted means.
    pub fn center_cols(&self) -> (Matrix, Vec<f64>) {
        let means = self.col_means();
        (self.sub_col_offsets(&means), means)
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Concatenates matrices side by side; all must share the row count.
    pub fn hstack(parts: &[&Matrix]) -> Matrix {
        let rows = parts[0].rows;
        assert!(parts.iter().all(|p| p.rows == rows));
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            let out_row = out.row_mut(i);
            for p in parts {
                out_row[offset..offset + p.cols].copy_from_slice(p.row(i));
                offset += p.cols;
            }
        }
        out
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    /// Keeps the first `k` columns.
    pub fn truncate_cols(&self, k: usize) -> Matrix {
        assert!(k <= self.cols);
        let mut out = Matrix::zeros(self.rows, k);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[..k]);
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Thin SVD of an M x F matrix with M >= F: `a = u * diag(s) * v^T`.
///
/// `u` is M x F and `v` is F x F, both with orthonormal columns; singular
/// values are sorted descending. Zero singular values are retained and the
/// corresponding columns of `u` are completed to an orthonormal set.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl ThinSvd {
    /// Indices of singular values treated as numerically zero
    /// (below 1e-12 times the largest).
    pub fn rank_deficient_cols(&self) -> Vec<usize> {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        let tol = 1e-12 * smax;
        self.singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s <= tol)
            .map(|(i, _)| i)
            .collect()
    }
}

const JACOBI_OFF_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;

fn off_diag_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns of an orthogonal matrix. Each eigenvector is sign-normalized so
/// its maximum-magnitude entry is positive.
pub fn sym_eig(s: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = s.rows();
    if s.cols() != n {
        return Err(Error::invalid(format!(
            "sym_eig needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if !s.is_finite() {
        return Err(Error::NonFinite("sym_eig input".into()));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (s[(i, j)] - s[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::invalid(format!(
                    "sym_eig input asymmetric at ({i},{j}): {} vs {}",
                    s[(i, j)],
                    s[(j, i)]
                )));
            }
        }
    }

    let mut a = s.clone();
    // Symmetrize exactly so rotations keep the matrix symmetric.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    // Once the off-diagonal mass reaches the floating-point floor of the
    // input scale, further sweeps cannot make progress.
    let float_floor = f64::EPSILON * a.frob_norm() * n as f64;

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let off = off_diag_norm(&a);
        if off <= JACOBI_OFF_TOL || off <= float_floor {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s_rot = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s_rot * akq;
                    a[(k, q)] = s_rot * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s_rot * aqk;
                    a[(q, k)] = s_rot * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s_rot * vkq;
                    v[(k, q)] = s_rot * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut column = v.col(src);
        sign_normalize(&mut column);
        vectors.set_col(dst, &column);
    }
    Ok((eigenvalues, vectors))
}

/// Flips a vector so its maximum-magnitude entry is positive.
pub(crate) fn sign_normalize(column: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in column.iter().enumerate() {
        if v.abs() > column[best].abs() {
            best = i;
        }
    }
    if column[best] < 0.0 {
        column.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Thin SVD of a tall matrix (rows >= cols) via eigendecomposition of the
/// small Gram matrix `a^T a`.
///
/// Columns of `u` belonging to singular values below `1e-12 * max(s)` are
/// completed to an orthonormal basis by Gram-Schmidt against the existing
/// columns, so `u` always has `cols` orthonormal columns even for
/// rank-deficient input.
pub fn thin_svd(a: &Matrix) -> Result<ThinSvd> {
    let (m, f) = (a.rows(), a.cols());
    if m < f {
        return Err(Error::invalid(format!(
            "thin_svd needs rows >= cols, got {m}x{f}"
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("thin_svd input".into()));
    }

    let gram = a.gram();
    let (eigenvalues, v) = sym_eig(&gram)?;
    let singular_values: Vec<f64> = eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let smax = singular_values.first().copied().unwrap_or(0.0);
    let rank_tol = 1e-12 * smax;

    let av = a.matmul(&v);
    let mut u = Matrix::zeros(m, f);
    let mut needs_completion = Vec::new();
    for j in 0..f {
        let s = singular_values[j];
        if s > rank_tol && s > 0.0 {
            let inv = 1.0 / s;
            for i in 0..m {
                u[(i, j)] = av[(i, j)] * inv;
            }
        } else {
            needs_completion.push(j);
        }
    }
    // Polish the computed columns: small singular values lose orthogonality
    // through the Gram route.
    let computed: Vec<usize> = (0..f).filter(|j| !needs_completion.contains(j)).collect();
    gram_schmidt_columns(&mut u, &computed, &[]);
    complete_orthonormal(&mut u, &computed, &needs_completion);

    Ok(ThinSvd {
        u,
        singular_values,
        v,
    })
}

/// Orthonormalizes `targets` columns of `u` in order against `fixed` columns
/// and each other (two Gram-Schmidt passes).
fn gram_schmidt_columns(u: &mut Matrix, targets: &[usize], fixed: &[usize]) {
    let m = u.rows();
    let mut done: Vec<usize> = fixed.to_vec();
    for &j in targets {
        let mut col = u.col(j);
        for _pass in 0..2 {
            for &k in &done {
                let mut dot = 0.0;
                for i in 0..m {
                    dot += u[(i, k)] * col[i];
                }
                for (i, c) in col.iter_mut().enumerate() {
                    *c -= dot * u[(i, k)];
                }
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.iter_mut().for_each(|v| *v /= norm);
        }
        u.set_col(j, &col);
        done.push(j);
    }
}

/// Fills the listed columns of `u` with unit vectors orthonormal to the
/// already-populated ones, drawing candidates from the standard basis.
fn complete_orthonormal(u: &mut Matrix, existing: &[usize], empty: &[usize]) {
    let m = u.rows();
    let mut done: Vec<usize> = existing.to_vec();
    let mut candidate = 0usize;
    for &j in empty {
        loop {
            assert!(candidate < m, "ran out of basis candidates");
            let mut col = vec![0.0; m];
            col[candidate] = 1.0;
            candidate += 1;
            for _pass in 0..2 {
                for &k in &done {
                    let mut dot = 0.0;
                    for i in 0..m {
                        dot += u[(i, k)] * col[i];
                    }
                    for (i, c) in col.iter_mut().enumerate() {
                        *c -= dot * u[(i, k)];
                    }
                }
            }
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.5 {
                col.iter_mut().for_each(|v| *v /= norm);
                sign_normalize(&mut col);
                u.set_col(j, &col);
                done.push(j);
                break;
            }
        }
    }
}
