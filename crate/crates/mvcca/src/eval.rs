//! Downstream evaluation of learned embeddings: K-means clustering scored by
//! Hungarian-matched accuracy, NMI, and ARI, plus linear-SVM and
//! K-nearest-neighbor classification.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::trainer::TrainedModel;
use crate::numerics::Matrix;

/// One trained model's downstream scores, all clamped into `[0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub lambda: f64,
    pub seed: u64,
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub cla_acc: f64,
    pub corr_coef: f64,
    /// Reporting caveats, e.g. a negative ARI floored to zero.
    pub flags: Vec<String>,
}

impl MetricsRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: &str,
        lambda: f64,
        seed: u64,
        acc: f64,
        nmi: ClusterScore,
        ari: ClusterScore,
        cla_acc: f64,
        corr_coef: f64,
    ) -> Self {
        let mut flags = Vec::new();
        if nmi.flagged {
            flags.push("nmi-degenerate-truth".to_string());
        }
        if ari.value < 0.0 {
            flags.push("ari-floored".to_string());
        }
        MetricsRecord {
            method: method.to_string(),
            lambda,
            seed,
            acc: acc.clamp(0.0, 1.0),
            nmi: nmi.value.clamp(0.0, 1.0),
            ari: ari.value.clamp(0.0, 1.0),
            cla_acc: cla_acc.clamp(0.0, 1.0),
            corr_coef: corr_coef.clamp(0.0, 1.0),
            flags,
        }
    }
}

/// A clustering score plus a degenerate-input flag.
#[derive(Debug, Clone, Copy)]
pub struct ClusterScore {
    pub value: f64,
    pub flagged: bool,
}

/// Mean of the per-view encodings of a trained model: the default
/// downstream embedding. Raw views pass through the model's fitted
/// standardization first.
pub fn embed(model: &TrainedModel, views: &[Matrix]) -> Result<Matrix> {
    model.embed_average(views)
}

/// Embedding of a single view, for protocols that evaluate one view alone.
pub fn embed_single(model: &TrainedModel, views: &[Matrix], k: usize) -> Result<Matrix> {
    if k >= views.len() {
        return Err(Error::invalid(format!("no view {k}")));
    }
    model.encode_view(k, &views[k])
}

/// Plain mean of per-view encodings without any preprocessing; the building
/// block behind [`embed`].
pub fn average_encodings(encoders: &[Mlp], views: &[Matrix]) -> Result<Matrix> {
    if encoders.is_empty() || encoders.len() != views.len() {
        return Err(Error::invalid("need one encoder per view"));
    }
    let mut sum = encoders[0].apply(&views[0])?;
    for (enc, view) in encoders.iter().zip(views).skip(1) {
        sum.add_assign(&enc.apply(view)?);
    }
    Ok(sum.scale(1.0 / encoders.len() as f64))
}

/// K-means labels and the within-cluster sum of squares they achieve.
#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub labels: Vec<usize>,
    pub objective: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs by
/// within-cluster sum of squares. Empty clusters are re-seeded from the
/// point farthest from its assigned centroid.
pub fn kmeans(x: &Matrix, k: usize, restarts: usize, rng: &mut ChaCha8Rng) -> Result<KmeansResult> {
    let m = x.rows();
    if k == 0 || restarts == 0 {
        return Err(Error::invalid("k and restarts must be positive"));
    }
    let mut distinct: Vec<&[f64]> = (0..m).map(|i| x.row(i)).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} distinct rows",
            distinct.len()
        )));
    }

    let mut best: Option<KmeansResult> = None;
    for _restart in 0..restarts {
        let result = lloyd_once(x, k, rng);
        if best.as_ref().is_none_or(|b| result.objective < b.objective) {
            best = Some(result);
        }
    }
    Ok(best.unwrap())
}

fn lloyd_once(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> KmeansResult {
    let m = x.rows();
    let d = x.cols();

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(x.row(rng.random_range(0..m)).to_vec());
    let mut min_dist: Vec<f64> = (0..m)
        .map(|i| squared_distance(x.row(i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = min_dist.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..m)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = m - 1;
            for (i, &dist) in min_dist.iter().enumerate() {
                target -= dist;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(x.row(next).to_vec());
        for i in 0..m {
            let dist = squared_distance(x.row(i), centroids.last().unwrap());
            if dist < min_dist[i] {
                min_dist[i] = dist;
            }
        }
    }

    let mut labels = vec![0usize; m];
    let mut previous_objective = f64::INFINITY;
    for _iter in 0..300 {
        // assignment
        let mut changed = false;
        let mut objective = 0.0;
        for i in 0..m {
            let mut best_c = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let dist = squared_distance(x.row(i), centroid);
                if dist < best_d {
                    best_d = dist;
                    best_c = c;
                }
            }
            if labels[i] != best_c {
                changed = true;
                labels[i] = best_c;
            }
            objective += best_d;
        }

        // update, re-seeding empty clusters from the farthest point
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for i in 0..m {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] == 0 {
                let farthest = (0..m)
                    .max_by(|&a, &b| {
                        let da = squared_distance(x.row(a), &centroids[labels[a]]);
                        let db = squared_distance(x.row(b), &centroids[labels[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids[c] = x.row(farthest).to_vec();
                reseeded = true;
            } else {
                for (j, s) in sums[c].iter().enumerate() {
                    centroids[c][j] = s / counts[c] as f64;
                }
            }
        }

        // Lloyd steps never increase the objective unless a reseed moved a
        // centroid
        if !reseeded {
            assert!(
                objective <= previous_objective + 1e-9,
                "k-means objective rose: {previous_objective} -> {objective}"
            );
        }
        previous_objective = objective;
        if !changed && !reseeded {
            break;
        }
    }

    // final objective under the final centroids
    let mut objective = 0.0;
    for i in 0..m {
        objective += squared_distance(x.row(i), &centroids[labels[i]]);
    }
    KmeansResult { labels, objective }
}

/// Minimum-cost assignment for a square cost matrix (Hungarian algorithm
/// with potentials, O(n^3)). Returns `assignment[row] = column`.
fn hungarian_min_cost(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-indexed potentials; p[j] = row matched to column j
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Fraction of samples correctly matched under the best one-to-one mapping
/// between predicted clusters and true labels (maximum bipartite matching
/// over the k x k confusion matrix).
pub fn clustering_accuracy(pred: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::invalid("prediction and truth lengths differ"));
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty labelings"));
    }
    if pred.iter().chain(truth).any(|&l| l >= k) {
        return Err(Error::invalid(format!("label out of range [0, {k})")));
    }
    let mut confusion = vec![vec![0i64; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[p][t] += 1;
    }
    let max_count = pred.len() as i64;
    let cost: Vec<Vec<i64>> = confusion
        .iter()
        .map(|row| row.iter().map(|&c| max_count - c).collect())
        .collect();
    let assignment = hungarian_min_cost(&cost);
    let matched: i64 = assignment
        .iter()
        .enumerate()
        .map(|(p, &t)| confusion[p][t])
        .sum();
    Ok(matched as f64 / pred.len() as f64)
}

fn contingency(pred: &[usize], truth: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let kp = pred.iter().max().map_or(0, |&m| m + 1);
    let kt = truth.iter().max().map_or(0, |&m| m + 1);
    let mut table = vec![vec![0.0; kt]; kp];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1.0;
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..kt).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    (table, row_sums, col_sums)
}

/// Normalized mutual information, normalized by the arithmetic mean of the
/// two entropies. A single-class truth is defined as 0 and flagged.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<ClusterScore> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::invalid("labelings must be nonempty and equal length"));
    }
    let n = pred.len() as f64;
    let (table, row_sums, col_sums) = contingency(pred, truth);
    let entropy = |sums: &[f64]| -> f64 {
        sums.iter()
            .filter(|&&s| s > 0.0)
            .map(|&s| {
                let p = s / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_pred = entropy(&row_sums);
    let h_truth = entropy(&col_sums);
    if h_truth == 0.0 {
        return Ok(ClusterScore {
            value: 0.0,
            flagged: true,
        });
    }
    if h_pred == 0.0 {
        return Ok(ClusterScore {
            value: 0.0,
            flagged: false,
        });
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            if count > 0.0 {
                let pij = count / n;
                mi += pij * (n * count / (row_sums[i] * col_sums[j])).ln();
            }
        }
    }
    Ok(ClusterScore {
        value: (2.0 * mi / (h_pred + h_truth)).clamp(0.0, 1.0),
        flagged: false,
    })
}

/// Adjusted Rand index under the permutation-model expectation. The raw
/// value lives in `[-1, 1]`; negative values are flagged so reporting can
/// floor them.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<ClusterScore> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::invalid("labelings must be nonempty and equal length"));
    }
    let n = pred.len() as f64;
    let (table, row_sums, col_sums) = contingency(pred, truth);
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let sum_ij: f64 = table
        .iter()
        .flat_map(|row| row.iter())
        .map(|&c| choose2(c))
        .sum();
    let sum_a: f64 = row_sums.iter().map(|&s| choose2(s)).sum();
    let sum_b: f64 = col_sums.iter().map(|&s| choose2(s)).sum();
    let expected = sum_a * sum_b / choose2(n);
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-12 {
        // both partitions are trivial; agreement is exact
        return Ok(ClusterScore {
            value: 1.0,
            flagged: false,
        });
    }
    let value = (sum_ij - expected) / (max_index - expected);
    Ok(ClusterScore {
        value,
        flagged: value < 0.0,
    })
}

/// One-vs-rest linear SVM trained by deterministic full-batch subgradient
/// descent on the hinge + L2 objective; returns test accuracy.
///
/// `c` is the usual soft-margin trade-off (the L2 term is weighted
/// `1 / (c * n)`).
pub fn linear_svm(
    train_x: &Matrix,
    train_y: &[usize],
    test_x: &Matrix,
    test_y: &[usize],
    c: f64,
) -> Result<f64> {
    if train_x.rows() != train_y.len() || test_x.rows() != test_y.len() {
        return Err(Error::invalid("feature/label row mismatch"));
    }
    if train_x.cols() != test_x.cols() {
        return Err(Error::invalid("train/test dimension mismatch"));
    }
    if !(c > 0.0) {
        return Err(Error::invalid("c must be positive"));
    }
    let n_classes = train_y.iter().max().map_or(0, |&m| m + 1).max(2);
    let mut present = vec![false; n_classes];
    for &y in train_y {
        present[y] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid("need at least two classes in train"));
    }
    if let Some(missing) = test_y.iter().find(|&&y| y >= n_classes || !present[y]) {
        return Err(Error::invalid(format!(
            "test class {missing} absent from train"
        )));
    }

    let n = train_x.rows();
    let d = train_x.cols();
    let reg = 1.0 / (c * n as f64);
    let steps = 2000;
    let radius = 1.0 / reg.sqrt();

    // Full-batch projected subgradient with 1/(reg t) steps and tail
    // averaging; the bias rides along as an extra (regularized) coordinate.
    let mut weights = vec![vec![0.0f64; d + 1]; n_classes];
    for class in 0..n_classes {
        if !present[class] {
            continue;
        }
        let mut w = vec![0.0f64; d + 1];
        let mut averaged = vec![0.0f64; d + 1];
        let mut averaged_count = 0.0;
        for t in 0..steps {
            // subgradient of reg/2 ||w||^2 + (1/n) sum hinge
            let mut grad = vec![0.0f64; d + 1];
            for i in 0..n {
                let y = if train_y[i] == class { 1.0 } else { -1.0 };
                let row = train_x.row(i);
                let margin = y * (dot(&w[..d], row) + w[d]);
                if margin < 1.0 {
                    for (g, &xv) in grad.iter_mut().zip(row) {
                        *g -= y * xv;
                    }
                    grad[d] -= y;
                }
            }
            let inv_n = 1.0 / n as f64;
            let step = 1.0 / (reg * (t + 1) as f64);
            for (wv, g) in w.iter_mut().zip(&grad) {
                *wv -= step * (reg * *wv + g * inv_n);
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let shrink = radius / norm;
                w.iter_mut().for_each(|v| *v *= shrink);
            }
            if t >= steps / 2 {
                for (a, &wv) in averaged.iter_mut().zip(&w) {
                    *a += wv;
                }
                averaged_count += 1.0;
            }
        }
        averaged.iter_mut().for_each(|v| *v /= averaged_count);
        weights[class] = averaged;
    }

    let mut correct = 0usize;
    for i in 0..test_x.rows() {
        let row = test_x.row(i);
        let mut best_class = 0;
        let mut best_score = f64::NEG_INFINITY;
        for class in 0..n_classes {
            if !present[class] {
                continue;
            }
            let score = dot(&weights[class][..d], row) + weights[class][d];
            if score > best_score {
                best_score = score;
                best_class = class;
            }
        }
        if best_class == test_y[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_x.rows() as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// K-nearest-neighbor predictions by Euclidean majority vote. Vote ties go
/// to the label of the single nearest neighbor; distance ties break by
/// sample index.
pub fn knn_predict(
    train_x: &Matrix,
    train_y: &[usize],
    test_x: &Matrix,
    k: usize,
) -> Result<Vec<usize>> {
    if train_x.rows() == 0 || train_x.rows() != train_y.len() {
        return Err(Error::invalid("train set must be nonempty and aligned"));
    }
    if train_x.cols() != test_x.cols() {
        return Err(Error::invalid("train/test dimension mismatch"));
    }
    let k = k.min(train_x.rows());
    let n_classes = train_y.iter().max().map_or(0, |&m| m + 1);
    let mut predictions = Vec::with_capacity(test_x.rows());
    for i in 0..test_x.rows() {
        let mut dists: Vec<(f64, usize)> = (0..train_x.rows())
            .map(|j| (squared_distance(test_x.row(i), train_x.row(j)), j))
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let neighbors = &dists[..k];
        let mut votes = vec![0usize; n_classes];
        for &(_, j) in neighbors {
            votes[train_y[j]] += 1;
        }
        let top = *votes.iter().max().unwrap();
        let tied = votes.iter().filter(|&&v| v == top).count();
        let label = if tied > 1 {
            train_y[neighbors[0].1]
        } else {
            votes.iter().position(|&v| v == top).unwrap()
        };
        predictions.push(label);
    }
    Ok(predictions)
}

/// Test accuracy of [`knn_predict`].
pub fn knn(
    train_x: &Matrix,
    train_y: &[usize],
    test_x: &Matrix,
    test_y: &[usize],
    k: usize,
) -> Result<f64> {
    let predictions = knn_predict(train_x, train_y, test_x, k)?;
    if predictions.len() != test_y.len() {
        return Err(Error::invalid("test labels misaligned"));
    }
    let correct = predictions
        .iter()
        .zip(test_y)
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / test_y.len() as f64)
}
