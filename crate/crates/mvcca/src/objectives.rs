//! Differentiable loss terms and their composition into the deep training
//! objectives.
//!
//! Three building blocks over a batch of B samples:
//!
//! * agreement `r`: squared distance between each view's encoding and the
//!   shared target,
//! * self-reconstruction `l`: each view reconstructed from its own encoding
//!   (autoencoder style), relative to the view's normalizer,
//! * cross-reconstruction `q`: each view reconstructed from every *other*
//!   view's encoding, self-terms excluded, averaged over the K-1 sources.
//!
//! Reconstruction errors are divided by per-view normalizers (training-set
//! mean squared row norms) so they read as relative MSE and the trade-off
//! weight compares like against like across methods. The agreement term is
//! not normalized: encodings and target live in the unit-covariance space.
//! All values are batch means, and every gradient is returned with respect
//! to the network *outputs* involved, so callers chain them through
//! backpropagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Deep objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeepMethod {
    /// Agreement term only.
    Dgcca,
    /// Agreement plus per-view self-reconstruction.
    Dccae,
    /// Agreement plus cross-reconstruction.
    Proposed,
}

impl DeepMethod {
    pub fn uses_decoders(&self) -> bool {
        !matches!(self, DeepMethod::Dgcca)
    }

    pub fn name(&self) -> &'static str {
        match self {
            DeepMethod::Dgcca => "dgcca",
            DeepMethod::Dccae => "dccae",
            DeepMethod::Proposed => "proposed",
        }
    }
}

/// Objective configuration: method, trade-off weight, per-view normalizers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub method: DeepMethod,
    pub lambda: f64,
    /// Training-set mean squared row norm of each view, frozen across
    /// splits.
    pub normalizers: Vec<f64>,
}

impl ObjectiveSpec {
    pub fn new(method: DeepMethod, lambda: f64, normalizers: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
        }
        if normalizers.iter().any(|&n| !(n > 0.0)) {
            return Err(Error::invalid("normalizers must be positive"));
        }
        Ok(ObjectiveSpec {
            method,
            lambda,
            normalizers,
        })
    }
}

/// Agreement term value and gradients w.r.t. each encoding.
#[derive(Debug, Clone)]
pub struct RTerm {
    pub value: f64,
    pub encoding_grads: Vec<Matrix>,
}

/// Self-reconstruction term value and gradients w.r.t. each reconstruction.
#[derive(Debug, Clone)]
pub struct LTerm {
    pub value: f64,
    pub reconstruction_grads: Vec<Matrix>,
}

/// Cross-reconstruction term value and gradients w.r.t. each reconstruction
/// `[target view k][source view j]`; the diagonal stays `None` by
/// construction.
#[derive(Debug, Clone)]
pub struct QTerm {
    pub value: f64,
    pub reconstruction_grads: Vec<Vec<Option<Matrix>>>,
}

/// `(1/B) * sum_k ||f_k - g||_F^2` with gradients `(2/B)(f_k - g)`.
pub fn r_term(encodings: &[Matrix], g_batch: &Matrix) -> Result<RTerm> {
    if encodings.is_empty() {
        return Err(Error::invalid("r_term needs at least one encoding"));
    }
    let b = g_batch.rows();
    for e in encodings {
        if e.rows() != b || e.cols() != g_batch.cols() {
            return Err(Error::invalid(format!(
                "encoding shape {}x{} does not match target {}x{}",
                e.rows(),
                e.cols(),
                b,
                g_batch.cols()
            )));
        }
    }
    let inv_b = 1.0 / b as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(encodings.len());
    for e in encodings {
        let diff = e.sub(g_batch);
        value += diff.frob_norm().powi(2) * inv_b;
        grads.push(diff.scale(2.0 * inv_b));
    }
    Ok(RTerm {
        value,
        encoding_grads: grads,
    })
}

/// `(1/B) * sum_k ||x_k - w_k(f_k(x_k))||_F^2 / n_k`.
pub fn l_term(
    views: &[Matrix],
    reconstructions: &[Matrix],
    normalizers: &[f64],
) -> Result<LTerm> {
    if views.len() != reconstructions.len() || views.len() != normalizers.len() {
        return Err(Error::invalid("l_term inputs must have one entry per view"));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(views.len());
    for ((x, recon), &n) in views.iter().zip(reconstructions).zip(normalizers) {
        if x.rows() != recon.rows() || x.cols() != recon.cols() {
            return Err(Error::invalid(format!(
                "reconstruction shape {}x{} does not match view {}x{}",
                recon.rows(),
                recon.cols(),
                x.rows(),
                x.cols()
            )));
        }
        let inv = 1.0 / (x.rows() as f64 * n);
        let diff = recon.sub(x);
        value += diff.frob_norm().powi(2) * inv;
        grads.push(diff.scale(2.0 * inv));
    }
    Ok(LTerm {
        value,
        reconstruction_grads: grads,
    })
}

/// `(1/(B(K-1))) * sum_k sum_{j != k} ||w_k(f_j(x_j)) - x_k||_F^2 / n_k`.
///
/// `cross_reconstructions[k][j]` holds decoder k applied to view j's
/// encoding; the diagonal must be `None` (a view never reconstructs itself).
pub fn q_term(
    views: &[Matrix],
    cross_reconstructions: &[Vec<Option<Matrix>>],
    normalizers: &[f64],
) -> Result<QTerm> {
    let k_views = views.len();
    if k_views < 2 {
        return Err(Error::invalid("q_term needs at least two views"));
    }
    if cross_reconstructions.len() != k_views || normalizers.len() != k_views {
        return Err(Error::invalid("q_term inputs must have one entry per view"));
    }
    let scale = 1.0 / (k_views as f64 - 1.0);
    let mut value = 0.0;
    let mut grads: Vec<Vec<Option<Matrix>>> = Vec::with_capacity(k_views);
    for (k, row) in cross_reconstructions.iter().enumerate() {
        if row.len() != k_views {
            return Err(Error::invalid("cross_reconstructions must be K x K"));
        }
        let x = &views[k];
        let inv = scale / (x.rows() as f64 * normalizers[k]);
        let mut grad_row: Vec<Option<Matrix>> = Vec::with_capacity(k_views);
        for (j, recon) in row.iter().enumerate() {
            match recon {
                Some(_) if j == k => {
                    return Err(Error::invalid(
                        "q_term must not contain self-reconstruction terms",
                    ));
                }
                Some(recon) => {
                    if recon.rows() != x.rows() || recon.cols() != x.cols() {
                        return Err(Error::invalid(format!(
                            "cross reconstruction ({k},{j}) shape mismatch"
                        )));
                    }
                    let diff = recon.sub(x);
                    value += diff.frob_norm().powi(2) * inv;
                    grad_row.push(Some(diff.scale(2.0 * inv)));
                }
                None => {
                    if j != k {
                        return Err(Error::invalid(format!(
                            "missing cross reconstruction ({k},{j})"
                        )));
                    }
                    grad_row.push(None);
                }
            }
        }
        grads.push(grad_row);
    }
    Ok(QTerm {
        value,
        reconstruction_grads: grads,
    })
}

/// Fully composed loss: the method-weighted total plus gradients w.r.t.
/// every encoder and decoder output involved.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub r_value: f64,
    pub l_value: f64,
    pub q_value: f64,
    pub total: f64,
    /// Gradient of the total w.r.t. each encoding (the direct agreement
    /// path only; reconstruction paths flow through the decoder grads).
    pub encoding_grads: Vec<Matrix>,
    /// Gradient of the total w.r.t. decoder outputs, `[target k][source j]`.
    /// Self-reconstruction methods populate the diagonal; the
    /// cross-reconstruction method populates everything else.
    pub reconstruction_grads: Vec<Vec<Option<Matrix>>>,
}

/// Combines the terms for the configured method:
///
/// * dgcca: `r` (lambda ignored)
/// * dccae: `(1 - lambda) r + lambda l`
/// * proposed: `(1 - lambda) r + lambda q`
pub fn compose(
    spec: &ObjectiveSpec,
    r: &RTerm,
    l: Option<&LTerm>,
    q: Option<&QTerm>,
) -> Result<LossBreakdown> {
    let k_views = r.encoding_grads.len();
    let lambda = spec.lambda;
    let none_row = || (0..k_views).map(|_| None).collect::<Vec<Option<Matrix>>>();

    let breakdown = match spec.method {
        DeepMethod::Dgcca => LossBreakdown {
            r_value: r.value,
            l_value: 0.0,
            q_value: 0.0,
            total: r.value,
            encoding_grads: r.encoding_grads.clone(),
            reconstruction_grads: (0..k_views).map(|_| none_row()).collect(),
        },
        DeepMethod::Dccae => {
            let l = l.ok_or_else(|| Error::invalid("dccae composition needs the l term"))?;
            if l.reconstruction_grads.len() != k_views {
                return Err(Error::invalid("l term view count mismatch"));
            }
            let mut recon: Vec<Vec<Option<Matrix>>> =
                (0..k_views).map(|_| none_row()).collect();
            for (k, g) in l.reconstruction_grads.iter().enumerate() {
                recon[k][k] = Some(g.scale(lambda));
            }
            LossBreakdown {
                r_value: r.value,
                l_value: l.value,
                q_value: 0.0,
                total: (1.0 - lambda) * r.value + lambda * l.value,
                encoding_grads: r
                    .encoding_grads
                    .iter()
                    .map(|g| g.scale(1.0 - lambda))
                    .collect(),
                reconstruction_grads: recon,
            }
        }
        DeepMethod::Proposed => {
            let q = q.ok_or_else(|| Error::invalid("proposed composition needs the q term"))?;
            if q.reconstruction_grads.len() != k_views {
                return Err(Error::invalid("q term view count mismatch"));
            }
            let recon = q
                .reconstruction_grads
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|g| g.as_ref().map(|g| g.scale(lambda)))
                        .collect()
                })
                .collect();
            LossBreakdown {
                r_value: r.value,
                l_value: 0.0,
                q_value: q.value,
                total: (1.0 - lambda) * r.value + lambda * q.value,
                encoding_grads: r
                    .encoding_grads
                    .iter()
                    .map(|g| g.scale(1.0 - lambda))
                    .collect(),
                reconstruction_grads: recon,
            }
        }
    };
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite("composed objective".into()));
    }
    Ok(breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn r_term_zero_when_encodings_match_target() {
        let g = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap();
        let r = r_term(&[g.clone(), g.clone()], &g).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.encoding_grads.iter().all(|m| m.max_abs() == 0.0));
    }

    #[test]
    fn r_term_single_sample_closed_form() {
        let g = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let f = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let r = r_term(&[f], &g).unwrap();
        assert!((r.value - 1.0).abs() < 1e-15);
        assert!((r.encoding_grads[0][(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(r.encoding_grads[0][(0, 1)], 0.0);
    }

    #[test]
    fn r_term_gradient_matches_finite_differences() {
        let mut rg = rng(1);
        let g = random(&mut rg, 3, 2);
        let encodings = vec![random(&mut rg, 3, 2), random(&mut rg, 3, 2)];
        let r = r_term(&encodings, &g).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            for i in 0..3 {
                for j in 0..2 {
                    let mut plus = encodings.clone();
                    plus[k][(i, j)] += h;
                    let mut minus = encodings.clone();
                    minus[k][(i, j)] -= h;
                    let fd = (r_term(&plus, &g).unwrap().value
                        - r_term(&minus, &g).unwrap().value)
                        / (2.0 * h);
                    assert!(
                        (fd - r.encoding_grads[k][(i, j)]).abs() < 1e-6,
                        "fd {fd} vs analytic {}",
                        r.encoding_grads[k][(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn l_term_perfect_reconstruction_is_zero() {
        let v = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let l = l_term(&[v.clone()], &[v], &[2.5]).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn l_term_zero_reconstruction_equals_view_count() {
        // when normalizers are the views' own mean squared row norms, a zero
        // decoder scores exactly 1 per view
        let mut rg = rng(2);
        let views = vec![random(&mut rg, 4, 3), random(&mut rg, 4, 5)];
        let normalizers: Vec<f64> = views
            .iter()
            .map(|v| v.data().iter().map(|x| x * x).sum::<f64>() / v.rows() as f64)
            .collect();
        let zeros: Vec<Matrix> = views
            .iter()
            .map(|v| Matrix::zeros(v.rows(), v.cols()))
            .collect();
        let l = l_term(&views, &zeros, &normalizers).unwrap();
        assert!((l.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn l_term_gradient_matches_finite_differences() {
        let mut rg = rng(3);
        let views = vec![random(&mut rg, 3, 2)];
        let recons = vec![random(&mut rg, 3, 2)];
        let n = vec![0.7];
        let l = l_term(&views, &recons, &n).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..2 {
                let mut plus = recons.clone();
                plus[0][(i, j)] += h;
                let mut minus = recons.clone();
                minus[0][(i, j)] -= h;
                let fd = (l_term(&views, &plus, &n).unwrap().value
                    - l_term(&views, &minus, &n).unwrap().value)
                    / (2.0 * h);
                assert!((fd - l.reconstruction_grads[0][(i, j)]).abs() < 1e-6);
            }
        }
    }

    fn cross_table(views: &[Matrix], mut make: impl FnMut(usize, usize) -> Matrix) -> Vec<Vec<Option<Matrix>>> {
        let k = views.len();
        (0..k)
            .map(|target| {
                (0..k)
                    .map(|source| {
                        if source == target {
                            None
                        } else {
                            Some(make(target, source))
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn q_term_perfect_cross_reconstruction_is_zero() {
        let mut rg = rng(4);
        let views = vec![random(&mut rg, 3, 2), random(&mut rg, 3, 2)];
        let recons = cross_table(&views, |target, _| views[target].clone());
        let q = q_term(&views, &recons, &[1.0, 1.0]).unwrap();
        assert_eq!(q.value, 0.0);
    }

    #[test]
    fn q_term_zero_decoders_matches_zero_decoder_l_term() {
        // K = 2: each view is reconstructed exactly once, so the q and l
        // values coincide for all-zero decoder outputs
        let mut rg = rng(5);
        let views = vec![random(&mut rg, 4, 3), random(&mut rg, 4, 2)];
        let n = vec![0.9, 1.7];
        let zeros_q = cross_table(&views, |target, _| {
            Matrix::zeros(views[target].rows(), views[target].cols())
        });
        let zeros_l: Vec<Matrix> = views
            .iter()
            .map(|v| Matrix::zeros(v.rows(), v.cols()))
            .collect();
        let q = q_term(&views, &zeros_q, &n).unwrap();
        let l = l_term(&views, &zeros_l, &n).unwrap();
        assert!((q.value - l.value).abs() < 1e-12);
    }

    #[test]
    fn q_term_matches_naive_double_loop_and_finite_differences() {
        let mut rg = rng(6);
        let k = 3;
        let views: Vec<Matrix> = (0..k).map(|_| random(&mut rg, 3, 2)).collect();
        let n = vec![0.8, 1.1, 1.9];
        let recons = cross_table(&views, |_, _| random(&mut rg, 3, 2));
        let q = q_term(&views, &recons, &n).unwrap();

        // naive recomputation
        let mut expect = 0.0;
        for target in 0..k {
            for source in 0..k {
                if source == target {
                    continue;
                }
                let recon = recons[target][source].as_ref().unwrap();
                let mut sq = 0.0;
                for i in 0..3 {
                    for j in 0..2 {
                        let d = recon[(i, j)] - views[target][(i, j)];
                        sq += d * d;
                    }
                }
                expect += sq / (n[target] * 3.0);
            }
        }
        expect /= (k - 1) as f64;
        assert!((q.value - expect).abs() < 1e-12);

        // finite differences on one reconstruction entry per pair
        let h = 1e-6;
        for target in 0..k {
            for source in 0..k {
                if source == target {
                    continue;
                }
                let mut plus = recons.clone();
                plus[target][source].as_mut().unwrap()[(1, 1)] += h;
                let mut minus = recons.clone();
                minus[target][source].as_mut().unwrap()[(1, 1)] -= h;
                let fd = (q_term(&views, &plus, &n).unwrap().value
                    - q_term(&views, &minus, &n).unwrap().value)
                    / (2.0 * h);
                let analytic = q.reconstruction_grads[target][source].as_ref().unwrap()[(1, 1)];
                assert!((fd - analytic).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn q_term_rejects_single_view_and_self_terms() {
        let v = Matrix::zeros(2, 2);
        assert!(matches!(
            q_term(&[v.clone()], &[vec![None]], &[1.0]),
            Err(Error::InvalidInput(_))
        ));
        let views = vec![v.clone(), v.clone()];
        let mut recons = cross_table(&views, |_, _| Matrix::zeros(2, 2));
        recons[0][0] = Some(Matrix::zeros(2, 2));
        assert!(matches!(
            q_term(&views, &recons, &[1.0, 1.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn q_term_diagonal_is_structurally_absent() {
        let mut rg = rng(7);
        let views = vec![random(&mut rg, 3, 2), random(&mut rg, 3, 2)];
        let recons = cross_table(&views, |_, _| random(&mut rg, 3, 2));
        let q = q_term(&views, &recons, &[1.0, 1.0]).unwrap();
        for k in 0..2 {
            assert!(q.reconstruction_grads[k][k].is_none());
        }
    }

    fn toy_terms(rg: &mut ChaCha8Rng) -> (RTerm, LTerm, QTerm, Vec<f64>) {
        let g = random(rg, 3, 2);
        let encodings = vec![random(rg, 3, 2), random(rg, 3, 2)];
        let views = vec![random(rg, 3, 4), random(rg, 3, 4)];
        let n = vec![1.3, 0.6];
        let r = r_term(&encodings, &g).unwrap();
        let l = l_term(
            &views,
            &[random(rg, 3, 4), random(rg, 3, 4)],
            &n,
        )
        .unwrap();
        let recons = cross_table(&views, |_, _| random(rg, 3, 4));
        let q = q_term(&views, &recons, &n).unwrap();
        (r, l, q, n)
    }

    #[test]
    fn compose_lambda_zero_reduces_to_agreement() {
        let mut rg = rng(8);
        let (r, _, q, n) = toy_terms(&mut rg);
        let spec = ObjectiveSpec::new(DeepMethod::Proposed, 0.0, n).unwrap();
        let out = compose(&spec, &r, None, Some(&q)).unwrap();
        assert_eq!(out.total, r.value);
    }

    #[test]
    fn compose_lambda_one_is_pure_cross_reconstruction() {
        let mut rg = rng(9);
        let (r, _, q, n) = toy_terms(&mut rg);
        let spec = ObjectiveSpec::new(DeepMethod::Proposed, 1.0, n).unwrap();
        let out = compose(&spec, &r, None, Some(&q)).unwrap();
        assert_eq!(out.total, q.value);
    }

    #[test]
    fn compose_dccae_arithmetic() {
        let r = RTerm {
            value: 0.4,
            encoding_grads: vec![Matrix::zeros(1, 1)],
        };
        let l = LTerm {
            value: 0.2,
            reconstruction_grads: vec![Matrix::zeros(1, 1)],
        };
        let spec = ObjectiveSpec::new(DeepMethod::Dccae, 0.5, vec![1.0]).unwrap();
        let out = compose(&spec, &r, Some(&l), None).unwrap();
        assert!((out.total - 0.3).abs() < 1e-15);
    }

    #[test]
    fn compose_dgcca_ignores_lambda() {
        let mut rg = rng(10);
        let (r, _, _, n) = toy_terms(&mut rg);
        let a = compose(
            &ObjectiveSpec::new(DeepMethod::Dgcca, 0.1, n.clone()).unwrap(),
            &r,
            None,
            None,
        )
        .unwrap();
        let b = compose(
            &ObjectiveSpec::new(DeepMethod::Dgcca, 0.9, n).unwrap(),
            &r,
            None,
            None,
        )
        .unwrap();
        assert_eq!(a.total, b.total);
        assert_eq!(a.total, r.value);
    }

    #[test]
    fn compose_totals_are_convex_combinations() {
        let mut rg = rng(11);
        let (r, l, q, n) = toy_terms(&mut rg);
        for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let dccae = compose(
                &ObjectiveSpec::new(DeepMethod::Dccae, lambda, n.clone()).unwrap(),
                &r,
                Some(&l),
                None,
            )
            .unwrap();
            assert!(dccae.total >= 0.0);
            assert!(
                (dccae.total - ((1.0 - lambda) * r.value + lambda * l.value)).abs() < 1e-12
            );
            let prop = compose(
                &ObjectiveSpec::new(DeepMethod::Proposed, lambda, n.clone()).unwrap(),
                &r,
                None,
                Some(&q),
            )
            .unwrap();
            assert!(prop.total >= 0.0);
            assert!((prop.total - ((1.0 - lambda) * r.value + lambda * q.value)).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_spec_validates() {
        assert!(ObjectiveSpec::new(DeepMethod::Dgcca, 1.5, vec![1.0]).is_err());
        assert!(ObjectiveSpec::new(DeepMethod::Dgcca, 0.5, vec![0.0]).is_err());
    }
}
