//! Closed-form linear baselines: two-view CCA, MAX-VAR generalized CCA, and
//! canonical-angle correlation measures used for evaluation.
//!
//! All covariances are sample covariances (`X^T X / M` after column
//! centering) and the optional ridge is applied at that scale. The shared
//! target `g` follows the repo-wide scaling `g^T g = M * I_F` with centered
//! columns.

use crate::error::{Error, Result};
use crate::numerics::{sign_normalize, sym_eig, thin_svd, Matrix};

/// Result of a linear CCA / MAX-VAR fit.
#[derive(Debug, Clone)]
pub struct LinearProjections {
    /// Per-view projection matrices, `D_k x F`.
    pub q: Vec<Matrix>,
    /// Shared-target realizations, `M x F`, centered with `g^T g = M I`.
    pub g: Matrix,
    /// Canonical correlations in `[0, 1]`, descending. Populated for the
    /// two-view case, empty otherwise.
    pub canonical_correlations: Vec<f64>,
    /// Column means of each training view; subtracted before projecting.
    pub view_means: Vec<Vec<f64>>,
    /// Per-sample value of the MAX-VAR objective at the fitted solution.
    pub objective_residual: f64,
}

impl LinearProjections {
    /// Projects (new) samples of view `k`, subtracting the training means.
    pub fn embed_view(&self, k: usize, x: &Matrix) -> Matrix {
        x.sub_col_offsets(&self.view_means[k]).matmul(&self.q[k])
    }

    /// Mean of the per-view projections, the default downstream embedding.
    pub fn embed_average(&self, views: &[Matrix]) -> Matrix {
        assert_eq!(views.len(), self.q.len());
        let mut sum = self.embed_view(0, &views[0]);
        for k in 1..views.len() {
            sum.add_assign(&self.embed_view(k, &views[k]));
        }
        sum.scale(1.0 / views.len() as f64)
    }
}

/// Canonical cosines between the column spaces of two embedding matrices.
#[derive(Debug, Clone)]
pub struct CanonicalCorrs {
    /// Cosines of the canonical angles, descending, in `[0, 1]`.
    pub cosines: Vec<f64>,
    /// Set when a rank-deficient input forced the 1e-10 ridge fallback.
    pub ridge_fallback: bool,
}

fn sample_covariance(centered: &Matrix) -> Matrix {
    centered.gram().scale(1.0 / centered.rows() as f64)
}

fn trace(m: &Matrix) -> f64 {
    (0..m.rows()).map(|i| m[(i, i)]).sum()
}

/// Default ridge: `1e-8 * trace(cov) / D`.
pub fn default_ridge(cov: &Matrix) -> f64 {
    1e-8 * trace(cov) / cov.rows() as f64
}

const SINGULAR_REL_TOL: f64 = 1e-12;

/// Inverse square root of a symmetric PSD matrix, with `ridge` added to the
/// diagonal first. Errors when the matrix is numerically singular and no
/// ridge was supplied.
fn inv_sqrt_psd(cov: &Matrix, ridge: f64, context: &str) -> Result<Matrix> {
    let n = cov.rows();
    let mut ridged = cov.clone();
    for i in 0..n {
        ridged[(i, i)] += ridge;
    }
    let (eig, v) = sym_eig(&ridged)?;
    let lambda_max = eig.first().copied().unwrap_or(0.0).max(0.0);
    let mut inv_roots = Vec::with_capacity(n);
    for &l in &eig {
        if l <= SINGULAR_REL_TOL * lambda_max || l <= 0.0 {
            return Err(Error::IllConditioned(format!(
                "{context}: covariance is numerically singular (eigenvalue {l:.3e}); \
                 supply a ridge"
            )));
        }
        inv_roots.push(1.0 / l.sqrt());
    }
    // v * diag(1/sqrt(l)) * v^T
    let mut scaled = v.clone();
    for i in 0..n {
        for j in 0..n {
            scaled[(i, j)] *= inv_roots[j];
        }
    }
    Ok(scaled.mul_tr(&v))
}

/// Procrustes-style shared target from already-centered per-view projections:
/// `sqrt(M) * U V^T` of the centered sum.
fn shared_target_from_projections(projections: &[Matrix]) -> Result<Matrix> {
    let mut sum = projections[0].clone();
    for p in &projections[1..] {
        sum.add_assign(p);
    }
    let (centered, _) = sum.center_cols();
    let svd = thin_svd(&centered)?;
    let m = centered.rows() as f64;
    Ok(svd.u.matmul(&svd.v.transpose()).scale(m.sqrt()))
}

/// Two-view canonical correlation analysis.
///
/// Views are column-centered internally. Returns the top-`f` canonical
/// correlations (singular values of the whitened cross-covariance, clamped
/// to `[0, 1]`) and projections giving unit per-view sample covariance.
/// `ridge = None` uses [`default_ridge`].
pub fn cca_two_view(
    x1: &Matrix,
    x2: &Matrix,
    f: usize,
    ridge: Option<f64>,
) -> Result<LinearProjections> {
    if x1.rows() != x2.rows() {
        return Err(Error::invalid("views must have the same number of rows"));
    }
    let m = x1.rows();
    let (d1, d2) = (x1.cols(), x2.cols());
    if f > d1.min(d2) {
        return Err(Error::invalid(format!(
            "f = {f} exceeds min view dimension {}",
            d1.min(d2)
        )));
    }
    if m <= f {
        return Err(Error::invalid(format!(
            "need more samples than f ({m} <= {f})"
        )));
    }

    let (c1, mean1) = x1.center_cols();
    let (c2, mean2) = x2.center_cols();
    let cov11 = sample_covariance(&c1);
    let cov22 = sample_covariance(&c2);
    let cov12 = c1.tr_mul(&c2).scale(1.0 / m as f64);

    let w1 = inv_sqrt_psd(&cov11, ridge.unwrap_or_else(|| default_ridge(&cov11)), "view 1")?;
    let w2 = inv_sqrt_psd(&cov22, ridge.unwrap_or_else(|| default_ridge(&cov22)), "view 2")?;
    let t = w1.matmul(&cov12).matmul(&w2);

    let (left, right, mut sigma) = if d1 >= d2 {
        let svd = thin_svd(&t)?;
        (svd.u, svd.v, svd.singular_values)
    } else {
        let svd = thin_svd(&t.transpose())?;
        (svd.v, svd.u, svd.singular_values)
    };
    sigma.truncate(f);
    let correlations: Vec<f64> = sigma.iter().map(|s| s.clamp(0.0, 1.0)).collect();

    let q1 = w1.matmul(&left.truncate_cols(f));
    let q2 = w2.matmul(&right.truncate_cols(f));
    let z1 = c1.matmul(&q1);
    let z2 = c2.matmul(&q2);
    let g = shared_target_from_projections(&[z1.clone(), z2.clone()])?;
    let residual = (z1.sub(&g).frob_norm().powi(2) + z2.sub(&g).frob_norm().powi(2)) / m as f64;

    Ok(LinearProjections {
        q: vec![q1, q2],
        g,
        canonical_correlations: correlations,
        view_means: vec![mean1, mean2],
        objective_residual: residual,
    })
}

/// MAX-VAR generalized CCA for `K >= 2` views.
///
/// The shared target is `sqrt(M)` times the top-`f` eigenvectors of the sum
/// of the per-view (ridged) projection operators; `q[k]` is the
/// least-squares map from the centered view onto it. For `K = 2` the implied
/// canonical correlations (top eigenvalues minus one) are also reported.
pub fn maxvar_gcca(views: &[Matrix], f: usize, ridge: Option<f64>) -> Result<LinearProjections> {
    if views.len() < 2 {
        return Err(Error::invalid("maxvar_gcca needs at least two views"));
    }
    let m = views[0].rows();
    if views.iter().any(|v| v.rows() != m) {
        return Err(Error::invalid("views must share the row count"));
    }
    if m <= f {
        return Err(Error::invalid(format!(
            "need more samples than f ({m} <= {f})"
        )));
    }
    let total_dim: usize = views.iter().map(|v| v.cols()).sum();
    if f > total_dim {
        return Err(Error::invalid(format!(
            "f = {f} exceeds total view dimension {total_dim}"
        )));
    }

    let mut centered = Vec::with_capacity(views.len());
    let mut means = Vec::with_capacity(views.len());
    let mut whiteners = Vec::with_capacity(views.len());
    for (k, view) in views.iter().enumerate() {
        let (c, mean) = view.center_cols();
        let cov = sample_covariance(&c);
        let w = inv_sqrt_psd(
            &cov,
            ridge.unwrap_or_else(|| default_ridge(&cov)),
            &format!("view {k}"),
        )?;
        centered.push(c);
        means.push(mean);
        whiteners.push(w);
    }

    // The sum of projection operators has rank <= total_dim, so its top
    // eigenpairs come from the small Gram matrix of the stacked whitened
    // views B = [X_1 W_1, ..., X_K W_K] / sqrt(M).
    let whitened: Vec<Matrix> = centered
        .iter()
        .zip(&whiteners)
        .map(|(c, w)| c.matmul(w).scale(1.0 / (m as f64).sqrt()))
        .collect();
    let stacked = Matrix::hstack(&whitened.iter().collect::<Vec<_>>());
    let (eig, vectors) = sym_eig(&stacked.gram())?;

    let lambda_max = eig.first().copied().unwrap_or(0.0);
    if eig.len() < f || eig[f - 1] <= SINGULAR_REL_TOL * lambda_max.max(1.0) {
        return Err(Error::IllConditioned(format!(
            "stacked views have numerical rank below f = {f}"
        )));
    }
    let bv = stacked.matmul(&vectors.truncate_cols(f));
    let mut g = Matrix::zeros(m, f);
    for j in 0..f {
        let scale = (m as f64).sqrt() / eig[j].sqrt();
        let mut col: Vec<f64> = (0..m).map(|i| bv[(i, j)] * scale).collect();
        sign_normalize(&mut col);
        g.set_col(j, &col);
    }

    // Least-squares maps from each centered view onto g.
    let mut q = Vec::with_capacity(views.len());
    let mut residual = 0.0;
    for (c, w) in centered.iter().zip(&whiteners) {
        let qk = w.matmul(w).matmul(&c.tr_mul(&g)).scale(1.0 / m as f64);
        residual += c.matmul(&qk).sub(&g).frob_norm().powi(2) / m as f64;
        q.push(qk);
    }

    let canonical_correlations = if views.len() == 2 {
        eig.iter()
            .take(f)
            .map(|&l| (l - 1.0).clamp(0.0, 1.0))
            .collect()
    } else {
        Vec::new()
    };

    Ok(LinearProjections {
        q,
        g,
        canonical_correlations,
        view_means: means,
        objective_residual: residual,
    })
}

/// Cosines of the canonical angles between the column spaces of `z1` and
/// `z2` (after column centering).
///
/// Invariant to right-multiplication of either input by an invertible
/// matrix. Rank-deficient inputs fall back to a 1e-10 ridge and set the
/// flag instead of failing.
pub fn canonical_corrs(z1: &Matrix, z2: &Matrix) -> Result<CanonicalCorrs> {
    if z1.rows() != z2.rows() {
        return Err(Error::invalid("embeddings must have the same number of rows"));
    }
    let m = z1.rows();
    let f = z1.cols().max(z2.cols());
    if m <= f {
        return Err(Error::invalid(format!(
            "need more samples than dimensions ({m} <= {f})"
        )));
    }

    let (c1, _) = z1.center_cols();
    let (c2, _) = z2.center_cols();
    let cov11 = sample_covariance(&c1);
    let cov22 = sample_covariance(&c2);
    let cov12 = c1.tr_mul(&c2).scale(1.0 / m as f64);

    const FALLBACK_RIDGE: f64 = 1e-10;
    let mut ridge_fallback = false;
    let mut whiten = |cov: &Matrix, name: &str| -> Result<Matrix> {
        match inv_sqrt_psd(cov, 0.0, name) {
            Ok(w) => Ok(w),
            Err(Error::IllConditioned(_)) => {
                ridge_fallback = true;
                inv_sqrt_psd(cov, FALLBACK_RIDGE, name)
            }
            Err(e) => Err(e),
        }
    };
    let w1 = whiten(&cov11, "left embedding")?;
    let w2 = whiten(&cov22, "right embedding")?;

    let t = w1.matmul(&cov12).matmul(&w2);
    let svd = if t.rows() >= t.cols() {
        thin_svd(&t)?
    } else {
        thin_svd(&t.transpose())?
    };
    let cosines = svd
        .singular_values
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    Ok(CanonicalCorrs {
        cosines,
        ridge_fallback,
    })
}

/// Mean over all view pairs of the mean canonical cosine; the cross-view
/// correlation score reported by the experiment harness.
pub fn total_corr_coef(embeddings: &[Matrix]) -> Result<f64> {
    if embeddings.len() < 2 {
        return Err(Error::invalid(
            "total_corr_coef needs at least two embeddings",
        ));
    }
    let mut acc = 0.0;
    let mut pairs = 0.0;
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            let cc = canonical_corrs(&embeddings[i], &embeddings[j])?;
            let mean = cc.cosines.iter().sum::<f64>() / cc.cosines.len() as f64;
            acc += mean;
            pairs += 1.0;
        }
    }
    Ok(acc / pairs)
}
