//! Alternating training: a closed-form orthogonal-Procrustes update of the
//! shared target followed by one epoch of minibatch AdamW updates of all
//! encoders and decoders, with validation-based early stopping.
//!
//! Each outer iteration first rebuilds the shared target G from the current
//! encodings (the update runs before the first epoch too, so G never needs
//! a separate random initialization), then sweeps one full epoch of
//! disjoint shuffled batches. After the epoch the composite objective is
//! evaluated on the training split against the current G and on the
//! validation split against a validation-local target; the best validation
//! snapshot is the returned model.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiviewDataset;
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::nn::{adamw_step, init_mlp, AdamState, Gradients, InitScheme, Mlp, MlpSpec};
use crate::numerics::{sign_normalize, thin_svd, Matrix};
use crate::objectives::{compose, l_term, q_term, r_term, DeepMethod, LossBreakdown, ObjectiveSpec};

/// Realizations of the shared factor, aligned to the rows they were
/// computed from. Columns are centered and `g^T g = M * I_F`.
#[derive(Debug, Clone)]
pub struct SharedTarget {
    pub g: Matrix,
    /// Set when the summed encodings were rank deficient and some columns
    /// had to be completed orthonormally.
    pub degenerate: bool,
}

impl SharedTarget {
    /// Largest deviation of `g^T g / M` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.g.rows() as f64;
        let gtg = self.g.gram().scale(1.0 / m);
        let mut worst = 0.0f64;
        for i in 0..gtg.rows() {
            for j in 0..gtg.cols() {
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gtg[(i, j)] - expect).abs());
            }
        }
        worst
    }

    pub fn max_column_mean(&self) -> f64 {
        self.g
            .col_means()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Solves the orthogonal Procrustes problem for the summed encodings:
/// centers `Y = sum_k f_k`, takes its thin SVD `U S V^T`, and returns
/// `G = sqrt(M) * U V^T`.
///
/// When the centered sum is rank deficient the completed columns of `U` are
/// re-orthogonalized against the all-ones direction as well, so G stays
/// centered; the result carries a degenerate-target flag.
pub fn update_shared_target(encodings: &[Matrix]) -> Result<SharedTarget> {
    if encodings.is_empty() {
        return Err(Error::invalid("update_shared_target needs encodings"));
    }
    let m = encodings[0].rows();
    let f = encodings[0].cols();
    if encodings.iter().any(|e| e.rows() != m || e.cols() != f) {
        return Err(Error::invalid("encodings must share their shape"));
    }
    if m <= f {
        return Err(Error::invalid(format!(
            "need more samples than latent dimensions ({m} <= {f})"
        )));
    }

    let mut sum = encodings[0].clone();
    for e in &encodings[1..] {
        sum.add_assign(e);
    }
    let (centered, _) = sum.center_cols();
    let svd = thin_svd(&centered)?;
    let deficient = svd.rank_deficient_cols();
    let degenerate = !deficient.is_empty();

    let mut u = svd.u;
    if degenerate {
        // Completed columns are orthonormal but not centered; project out
        // the mean and re-orthogonalize. Centering preserves orthogonality
        // to the data-derived columns, which are centered already.
        recenter_columns(&mut u, &deficient);
    }

    let g = u.matmul(&svd.v.transpose()).scale((m as f64).sqrt());
    Ok(SharedTarget { g, degenerate })
}

fn recenter_columns(u: &mut Matrix, columns: &[usize]) {
    let m = u.rows();
    let done: Vec<usize> = (0..u.cols()).filter(|j| !columns.contains(j)).collect();
    let mut fixed = done;
    for &j in columns {
        let mut col = u.col(j);
        let mean = col.iter().sum::<f64>() / m as f64;
        col.iter_mut().for_each(|v| *v -= mean);
        for _pass in 0..2 {
            for &k in &fixed {
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
        if norm > 1e-8 {
            col.iter_mut().for_each(|v| *v /= norm);
        }
        sign_normalize(&mut col);
        u.set_col(j, &col);
        fixed.push(j);
    }
}

/// Per-view column standardization fitted on the training split and applied
/// to every split before the networks see the data. Random generator
/// networks can push raw view entries to magnitudes where 40 epochs of
/// Adam-scale steps cannot rescale them, so the trainer owns this
/// preprocessing and the trained model re-applies it when embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewStandardizer {
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

impl ViewStandardizer {
    pub fn fit(views: &[Matrix]) -> Self {
        let mut means = Vec::with_capacity(views.len());
        let mut stds = Vec::with_capacity(views.len());
        for view in views {
            let m = view.rows() as f64;
            let mean = view.col_means();
            let mut std = vec![0.0; view.cols()];
            for i in 0..view.rows() {
                for (j, s) in std.iter_mut().enumerate() {
                    let d = view[(i, j)] - mean[j];
                    *s += d * d;
                }
            }
            for s in std.iter_mut() {
                *s = (*s / m).sqrt();
                if *s < 1e-12 {
                    *s = 1.0;
                }
            }
            means.push(mean);
            stds.push(std);
        }
        ViewStandardizer { means, stds }
    }

    /// Identity transform (used when standardization is disabled).
    pub fn identity(views: &[Matrix]) -> Self {
        ViewStandardizer {
            means: views.iter().map(|v| vec![0.0; v.cols()]).collect(),
            stds: views.iter().map(|v| vec![1.0; v.cols()]).collect(),
        }
    }

    pub fn apply(&self, k: usize, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.means[k][j]) / self.stds[k][j];
            }
        }
        out
    }

    pub fn apply_all(&self, views: &[Matrix]) -> Vec<Matrix> {
        views
            .iter()
            .enumerate()
            .map(|(k, v)| self.apply(k, v))
            .collect()
    }
}

/// How the validation objective obtains its shared target, given that
/// validation rows are unaligned with the training rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationTarget {
    /// Recompute a feasible Procrustes target from the validation
    /// encodings (default).
    SplitProcrustes,
    /// Use the rowwise mean of the validation encodings as an
    /// unconstrained stand-in target.
    EncodingMean,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: DeepMethod,
    pub lambda: f64,
    pub outer_iterations: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Shared-factor dimension F.
    pub latent_dim: usize,
    /// Hidden widths of every encoder and decoder.
    pub hidden_widths: Vec<usize>,
    /// ReLU after the last hidden layer too (see `MlpSpec`). Off by
    /// default: with three hidden layers, only the first two transitions
    /// are activated.
    pub activate_last_hidden: bool,
    /// Z-score each view by training statistics before training.
    pub standardize_inputs: bool,
    pub validation_target: ValidationTarget,
}

impl TrainConfig {
    pub fn new(method: DeepMethod, lambda: f64, seed: u64) -> Self {
        TrainConfig {
            method,
            lambda,
            outer_iterations: 40,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            batch_size: 100,
            seed,
            latent_dim: 4,
            hidden_widths: vec![32, 32, 32],
            activate_last_hidden: false,
            standardize_inputs: true,
            validation_target: ValidationTarget::SplitProcrustes,
        }
    }
}

/// One outer iteration's objective values. `aux` is the reconstruction part
/// of the composite objective (self- or cross-, per method; 0 for the
/// agreement-only method).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_objective: f64,
    pub train_r: f64,
    pub train_aux: f64,
    pub val_objective: f64,
    pub val_r: f64,
    pub val_aux: f64,
    pub seconds: f64,
}

/// Early-stopped model plus its training history.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub encoders: Vec<Mlp>,
    /// Empty for methods without decoders.
    pub decoders: Vec<Mlp>,
    pub standardizer: ViewStandardizer,
    pub best_validation_objective: f64,
    pub best_iteration: usize,
    pub history: Vec<IterationRecord>,
    pub normalizers: Vec<f64>,
    pub config: TrainConfig,
}

impl TrainedModel {
    /// Encoding of one (raw) view through the fitted standardization.
    pub fn encode_view(&self, k: usize, x: &Matrix) -> Result<Matrix> {
        self.encoders[k].apply(&self.standardizer.apply(k, x))
    }

    /// Mean of the per-view encodings of raw views.
    pub fn embed_average(&self, views: &[Matrix]) -> Result<Matrix> {
        if views.len() != self.encoders.len() {
            return Err(Error::invalid("need one view per encoder"));
        }
        let mut sum = self.encode_view(0, &views[0])?;
        for k in 1..views.len() {
            sum.add_assign(&self.encode_view(k, &views[k])?);
        }
        Ok(sum.scale(1.0 / views.len() as f64))
    }

    /// Persists the model into a directory: one checkpoint per network
    /// (`encoder_k.mlp`, `decoder_k.mlp`), the standardizer and config as
    /// JSON, a `summary.json` with normalizers and history, and the run
    /// log CSV.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, enc) in self.encoders.iter().enumerate() {
            enc.save(std::fs::File::create(dir.join(format!("encoder_{k}.mlp")))?)?;
        }
        for (k, dec) in self.decoders.iter().enumerate() {
            dec.save(std::fs::File::create(dir.join(format!("decoder_{k}.mlp")))?)?;
        }
        std::fs::write(
            dir.join("standardizer.json"),
            serde_json::to_string_pretty(&self.standardizer)
                .map_err(|e| Error::ContractViolation(e.to_string()))?,
        )?;
        std::fs::write(
            dir.join("config.json"),
            serde_json::to_string_pretty(&self.config)
                .map_err(|e| Error::ContractViolation(e.to_string()))?,
        )?;
        let summary = ModelSummary {
            n_views: self.encoders.len(),
            n_decoders: self.decoders.len(),
            best_validation_objective: self.best_validation_objective,
            best_iteration: self.best_iteration,
            normalizers: self.normalizers.clone(),
            history: self.history.clone(),
        };
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)
                .map_err(|e| Error::ContractViolation(e.to_string()))?,
        )?;
        let mut log = std::fs::File::create(dir.join("run_log.csv"))?;
        self.write_run_log(&mut log)?;
        Ok(())
    }

    /// Loads a model previously written by [`TrainedModel::save`].
    pub fn load(dir: &std::path::Path) -> Result<TrainedModel> {
        let summary: ModelSummary =
            serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json"))?)
                .map_err(|e| Error::Format(e.to_string()))?;
        let standardizer: ViewStandardizer =
            serde_json::from_str(&std::fs::read_to_string(dir.join("standardizer.json"))?)
                .map_err(|e| Error::Format(e.to_string()))?;
        let config: TrainConfig =
            serde_json::from_str(&std::fs::read_to_string(dir.join("config.json"))?)
                .map_err(|e| Error::Format(e.to_string()))?;
        let mut encoders = Vec::with_capacity(summary.n_views);
        for k in 0..summary.n_views {
            encoders.push(Mlp::load(std::fs::File::open(
                dir.join(format!("encoder_{k}.mlp")),
            )?)?);
        }
        let mut decoders = Vec::with_capacity(summary.n_decoders);
        for k in 0..summary.n_decoders {
            decoders.push(Mlp::load(std::fs::File::open(
                dir.join(format!("decoder_{k}.mlp")),
            )?)?);
        }
        Ok(TrainedModel {
            encoders,
            decoders,
            standardizer,
            best_validation_objective: summary.best_validation_objective,
            best_iteration: summary.best_iteration,
            history: summary.history,
            normalizers: summary.normalizers,
            config,
        })
    }

    /// Writes the per-iteration run log as CSV:
    /// `iteration,split,objective,r,l_or_q,seconds`.
    pub fn write_run_log(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "iteration,split,objective,r,l_or_q,seconds")?;
        for rec in &self.history {
            writeln!(
                w,
                "{},train,{:.6},{:.6},{:.6},{:.3}",
                rec.iteration, rec.train_objective, rec.train_r, rec.train_aux, rec.seconds
            )?;
            writeln!(
                w,
                "{},val,{:.6},{:.6},{:.6},{:.3}",
                rec.iteration, rec.val_objective, rec.val_r, rec.val_aux, rec.seconds
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelSummary {
    n_views: usize,
    n_decoders: usize,
    best_validation_objective: f64,
    best_iteration: usize,
    normalizers: Vec<f64>,
    history: Vec<IterationRecord>,
}

/// Forward pass of every encoder over full views.
pub fn encode_views(encoders: &[Mlp], views: &[Matrix]) -> Result<Vec<Matrix>> {
    encoders
        .iter()
        .zip(views)
        .map(|(enc, view)| enc.apply(view))
        .collect()
}

/// Decoder outputs arranged `[target view k][source view j]` for the
/// configured method: the diagonal for self-reconstruction, the off-diagonal
/// for cross-reconstruction, nothing for the agreement-only method.
fn decode_views(
    decoders: &[Mlp],
    encodings: &[Matrix],
    method: DeepMethod,
) -> Result<Vec<Vec<Option<Matrix>>>> {
    let k_views = encodings.len();
    let mut out: Vec<Vec<Option<Matrix>>> = (0..k_views)
        .map(|_| (0..k_views).map(|_| None).collect())
        .collect();
    match method {
        DeepMethod::Dgcca => {}
        DeepMethod::Dccae => {
            for k in 0..k_views {
                out[k][k] = Some(decoders[k].apply(&encodings[k])?);
            }
        }
        DeepMethod::Proposed => {
            for k in 0..k_views {
                for j in 0..k_views {
                    if j != k {
                        out[k][j] = Some(decoders[k].apply(&encodings[j])?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Composite objective of the current networks on one split, against the
/// given shared target. Used for monitoring; no gradients.
pub fn evaluate_objective(
    encoders: &[Mlp],
    decoders: &[Mlp],
    views: &[Matrix],
    g: &Matrix,
    spec: &ObjectiveSpec,
) -> Result<LossBreakdown> {
    let encodings = encode_views(encoders, views)?;
    let r = r_term(&encodings, g)?;
    match spec.method {
        DeepMethod::Dgcca => compose(spec, &r, None, None),
        DeepMethod::Dccae => {
            let recons = decode_views(decoders, &encodings, spec.method)?;
            let diag: Vec<Matrix> = recons
                .into_iter()
                .enumerate()
                .map(|(k, mut row)| row[k].take().unwrap())
                .collect();
            let l = l_term(views, &diag, &spec.normalizers)?;
            compose(spec, &r, Some(&l), None)
        }
        DeepMethod::Proposed => {
            let recons = decode_views(decoders, &encodings, spec.method)?;
            let q = q_term(views, &recons, &spec.normalizers)?;
            compose(spec, &r, None, Some(&q))
        }
    }
}

/// One batch of forward/backward for all networks. Returns the loss
/// breakdown plus per-encoder and per-decoder parameter gradients, with a
/// fixed accumulation order so training is deterministic.
pub fn batch_gradients(
    encoders: &[Mlp],
    decoders: &[Mlp],
    batch_views: &[Matrix],
    g_batch: &Matrix,
    spec: &ObjectiveSpec,
) -> Result<(LossBreakdown, Vec<Gradients>, Vec<Gradients>)> {
    let k_views = encoders.len();
    let mut encodings = Vec::with_capacity(k_views);
    let mut enc_tapes = Vec::with_capacity(k_views);
    for (enc, view) in encoders.iter().zip(batch_views) {
        let (y, tape) = enc.forward(view)?;
        encodings.push(y);
        enc_tapes.push(tape);
    }

    let r = r_term(&encodings, g_batch)?;
    let mut dec_tapes: Vec<Vec<Option<crate::nn::Tape>>> = (0..decoders.len())
        .map(|_| (0..k_views).map(|_| None).collect())
        .collect();
    let breakdown = match spec.method {
        DeepMethod::Dgcca => compose(spec, &r, None, None)?,
        DeepMethod::Dccae => {
            let mut diag = Vec::with_capacity(k_views);
            for k in 0..k_views {
                let (y, tape) = decoders[k].forward(&encodings[k])?;
                diag.push(y);
                dec_tapes[k][k] = Some(tape);
            }
            let l = l_term(batch_views, &diag, &spec.normalizers)?;
            compose(spec, &r, Some(&l), None)?
        }
        DeepMethod::Proposed => {
            let mut recons: Vec<Vec<Option<Matrix>>> = (0..k_views)
                .map(|_| (0..k_views).map(|_| None).collect())
                .collect();
            for k in 0..k_views {
                for j in 0..k_views {
                    if j != k {
                        let (y, tape) = decoders[k].forward(&encodings[j])?;
                        recons[k][j] = Some(y);
                        dec_tapes[k][j] = Some(tape);
                    }
                }
            }
            let q = q_term(batch_views, &recons, &spec.normalizers)?;
            compose(spec, &r, None, Some(&q))?
        }
    };

    // Decoder backward passes; their input gradients feed the source
    // encodings.
    let mut dec_grads: Vec<Gradients> = decoders.iter().map(Gradients::zeros_like).collect();
    let mut enc_out_grads: Vec<Matrix> = breakdown.encoding_grads.clone();
    for k in 0..decoders.len() {
        for j in 0..k_views {
            if let Some(grad) = &breakdown.reconstruction_grads[k][j] {
                let tape = dec_tapes[k][j].as_ref().expect("tape exists for gradient");
                let (grads, grad_input) = decoders[k].backward(tape, grad)?;
                dec_grads[k].add_assign(&grads);
                enc_out_grads[j].add_assign(&grad_input);
            }
        }
    }

    let mut enc_grads = Vec::with_capacity(k_views);
    for (k, enc) in encoders.iter().enumerate() {
        let (grads, _) = enc.backward(&enc_tapes[k], &enc_out_grads[k])?;
        enc_grads.push(grads);
    }
    Ok((breakdown, enc_grads, dec_grads))
}

fn validation_target(encodings: &[Matrix], mode: ValidationTarget) -> Result<Matrix> {
    match mode {
        ValidationTarget::SplitProcrustes => Ok(update_shared_target(encodings)?.g),
        ValidationTarget::EncodingMean => {
            let mut sum = encodings[0].clone();
            for e in &encodings[1..] {
                sum.add_assign(e);
            }
            Ok(sum.scale(1.0 / encodings.len() as f64))
        }
    }
}

fn validation_objective(
    encoders: &[Mlp],
    decoders: &[Mlp],
    views: &[Matrix],
    spec: &ObjectiveSpec,
    mode: ValidationTarget,
) -> Result<LossBreakdown> {
    let encodings = encode_views(encoders, views)?;
    let g = validation_target(&encodings, mode)?;
    evaluate_objective(encoders, decoders, views, &g, spec)
}

/// Runs the alternating algorithm for `config.outer_iterations` iterations
/// and returns the snapshot with the lowest validation objective.
pub fn train(
    train_data: &MultiviewDataset,
    val_data: &MultiviewDataset,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    let k_views = train_data.n_views();
    let m = train_data.n_samples();
    if val_data.n_views() != k_views {
        return Err(Error::invalid("train and validation view counts differ"));
    }
    if val_data.n_samples() == 0 {
        return Err(Error::invalid("validation split must be nonempty"));
    }
    if config.batch_size == 0 || config.batch_size > m {
        return Err(Error::invalid(format!(
            "batch_size {} must be in 1..={m}",
            config.batch_size
        )));
    }
    if config.method == DeepMethod::Proposed && k_views < 2 {
        return Err(Error::invalid("cross-reconstruction needs at least two views"));
    }

    let standardizer = if config.standardize_inputs {
        ViewStandardizer::fit(train_data.views())
    } else {
        ViewStandardizer::identity(train_data.views())
    };
    let train_views = standardizer.apply_all(train_data.views());
    let val_views = standardizer.apply_all(val_data.views());

    // Independent parameter streams per network role, so method variants
    // with and without decoders share encoder initializations bit for bit.
    let mut encoders = Vec::with_capacity(k_views);
    let mut decoders = Vec::new();
    for k in 0..k_views {
        let d_k = train_data.view(k).cols();
        let mut widths = vec![d_k];
        widths.extend_from_slice(&config.hidden_widths);
        widths.push(config.latent_dim);
        let mut spec = MlpSpec::new(widths)?;
        spec.activate_last_hidden = config.activate_last_hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x100 + k as u64));
        encoders.push(init_mlp(&spec, &mut rng, InitScheme::HeUniform));
    }
    if config.method.uses_decoders() {
        for k in 0..k_views {
            let d_k = train_data.view(k).cols();
            let mut widths = vec![config.latent_dim];
            widths.extend_from_slice(&config.hidden_widths);
            widths.push(d_k);
            let mut spec = MlpSpec::new(widths)?;
            spec.activate_last_hidden = config.activate_last_hidden;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x200 + k as u64));
            decoders.push(init_mlp(&spec, &mut rng, InitScheme::HeUniform));
        }
    }

    let normalizers: Vec<f64> = train_views
        .iter()
        .map(|v| v.data().iter().map(|x| x * x).sum::<f64>() / v.rows() as f64)
        .collect();
    let spec = ObjectiveSpec::new(config.method, config.lambda, normalizers.clone())?;
    let mut enc_states: Vec<AdamState> = encoders
        .iter()
        .map(|e| AdamState::new(e, config.learning_rate, config.weight_decay))
        .collect();
    let mut dec_states: Vec<AdamState> = decoders
        .iter()
        .map(|d| AdamState::new(d, config.learning_rate, config.weight_decay))
        .collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x300));

    let mut history = Vec::with_capacity(config.outer_iterations);
    let mut best_objective = f64::INFINITY;
    let mut best_iteration = 0;
    let mut best_snapshot = (encoders.clone(), decoders.clone());

    for iteration in 0..config.outer_iterations {
        let started = Instant::now();

        let encodings = encode_views(&encoders, &train_views)?;
        let shared = update_shared_target(&encodings)?;
        debug_assert!(shared.g.is_finite());
        let defect = shared.orthonormality_defect();
        if defect > 1e-8 {
            return Err(Error::ContractViolation(format!(
                "shared target lost orthonormality at iteration {iteration}: {defect:.3e}"
            )));
        }
        let col_mean = shared.max_column_mean();
        if col_mean > 1e-10 {
            return Err(Error::ContractViolation(format!(
                "shared target lost centering at iteration {iteration}: {col_mean:.3e}"
            )));
        }

        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut shuffle_rng);
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let batch_views: Vec<Matrix> = train_views
                .iter()
                .map(|v| v.select_rows(batch))
                .collect();
            let g_batch = shared.g.select_rows(batch);
            let (breakdown, enc_grads, dec_grads) =
                batch_gradients(&encoders, &decoders, &batch_views, &g_batch, &spec).map_err(
                    |e| match e {
                        Error::NonFinite(msg) => Error::NonFinite(format!(
                            "iteration {iteration}, batch {batch_index}: {msg}"
                        )),
                        other => other,
                    },
                )?;
            if !breakdown.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective diverged at iteration {iteration}, batch {batch_index}"
                )));
            }
            for (enc, (grads, state)) in encoders
                .iter_mut()
                .zip(enc_grads.iter().zip(enc_states.iter_mut()))
            {
                adamw_step(enc, grads, state)?;
            }
            for (dec, (grads, state)) in decoders
                .iter_mut()
                .zip(dec_grads.iter().zip(dec_states.iter_mut()))
            {
                adamw_step(dec, grads, state)?;
            }
        }

        let train_break =
            evaluate_objective(&encoders, &decoders, &train_views, &shared.g, &spec)?;
        let val_break = validation_objective(
            &encoders,
            &decoders,
            &val_views,
            &spec,
            config.validation_target,
        )?;
        let seconds = started.elapsed().as_secs_f64();

        if val_break.total < best_objective {
            best_objective = val_break.total;
            best_iteration = iteration;
            best_snapshot = (encoders.clone(), decoders.clone());
        }
        let aux = |b: &LossBreakdown| match config.method {
            DeepMethod::Dgcca => 0.0,
            DeepMethod::Dccae => b.l_value,
            DeepMethod::Proposed => b.q_value,
        };
        history.push(IterationRecord {
            iteration,
            train_objective: train_break.total,
            train_r: train_break.r_value,
            train_aux: aux(&train_break),
            val_objective: val_break.total,
            val_r: val_break.r_value,
            val_aux: aux(&val_break),
            seconds,
        });
    }

    Ok(TrainedModel {
        encoders: best_snapshot.0,
        decoders: best_snapshot.1,
        standardizer,
        best_validation_objective: best_objective,
        best_iteration,
        history,
        normalizers,
        config: config.clone(),
    })
}

/// Dominant-term operation count of one outer iteration:
/// `M F^2` for the shared-target SVD plus `|B| * sum_k d_k` for one
/// stochastic update of all networks.
pub fn per_iteration_cost(m: usize, f: usize, batch: usize, param_counts: &[usize]) -> u64 {
    let svd = m as u64 * (f as u64).pow(2);
    let sgd = batch as u64 * param_counts.iter().map(|&d| d as u64).sum::<u64>();
    svd + sgd
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        })
    }

    /// Random feasible candidate: centered with h^T h = M I.
    fn random_feasible(rng: &mut ChaCha8Rng, m: usize, f: usize) -> Matrix {
        let raw = gaussian(rng, m, f);
        let (centered, _) = raw.center_cols();
        let svd = thin_svd(&centered).unwrap();
        svd.u.matmul(&svd.v.transpose()).scale((m as f64).sqrt())
    }

    #[test]
    fn shared_target_fixed_point() {
        // an input that already satisfies the constraints is returned as is
        let mut r = rng(1);
        let y = random_feasible(&mut r, 30, 3);
        let shared = update_shared_target(&[y.clone()]).unwrap();
        let diff = shared.g.sub(&y).max_abs();
        assert!(diff < 1e-8, "fixed point drift {diff}");
    }

    #[test]
    fn shared_target_hand_computed_vector() {
        // y = (1, 2, 3): centered (-1, 0, 1), norm sqrt(2),
        // g = sqrt(3) * (-1, 0, 1) / sqrt(2)
        let y = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let shared = update_shared_target(&[y]).unwrap();
        let scale = (3.0f64 / 2.0).sqrt();
        let expect = [-scale, 0.0, scale];
        for i in 0..3 {
            assert!(
                (shared.g[(i, 0)] - expect[i]).abs() < 1e-12,
                "entry {i}: {} vs {}",
                shared.g[(i, 0)],
                expect[i]
            );
        }
    }

    #[test]
    fn shared_target_beats_random_feasible_candidates() {
        let mut r = rng(2);
        let encodings = vec![gaussian(&mut r, 50, 3), gaussian(&mut r, 50, 3)];
        let shared = update_shared_target(&encodings).unwrap();
        let mut y = encodings[0].clone();
        y.add_assign(&encodings[1]);
        let (y_bar, _) = y.center_cols();
        let trace_of = |g: &Matrix| -> f64 {
            let gty = g.tr_mul(&y_bar);
            (0..gty.rows()).map(|i| gty[(i, i)]).sum()
        };
        let best = trace_of(&shared.g);
        for _ in 0..1000 {
            let candidate = random_feasible(&mut r, 50, 3);
            assert!(trace_of(&candidate) <= best + 1e-9);
        }
    }

    #[test]
    fn shared_target_first_order_optimality() {
        // G^T Y_bar must be symmetric PSD at the optimum
        let mut r = rng(3);
        for _ in 0..20 {
            let encodings = vec![gaussian(&mut r, 25, 3)];
            let shared = update_shared_target(&encodings).unwrap();
            let (y_bar, _) = encodings[0].center_cols();
            let gty = shared.g.tr_mul(&y_bar);
            for i in 0..3 {
                for j in 0..3 {
                    assert!(
                        (gty[(i, j)] - gty[(j, i)]).abs() < 1e-8,
                        "asymmetry at ({i},{j})"
                    );
                }
            }
            let (eig, _) = crate::numerics::sym_eig(&gty.add(&gty.transpose()).scale(0.5)).unwrap();
            assert!(eig.iter().all(|&l| l >= -1e-10), "negative eigenvalue {eig:?}");
        }
    }

    #[test]
    fn shared_target_constraints_and_degenerate_completion() {
        // rank-1 encodings with F = 2: one column must be completed
        let mut r = rng(4);
        let base = gaussian(&mut r, 40, 1);
        let rank1 = Matrix::from_fn(40, 2, |i, j| base[(i, 0)] * (j as f64 + 1.0));
        let shared = update_shared_target(&[rank1]).unwrap();
        assert!(shared.degenerate);
        assert!(shared.orthonormality_defect() <= 1e-8);
        assert!(shared.max_column_mean() <= 1e-10);
    }

    fn linear_dataset(seed: u64, m: usize) -> (MultiviewDataset, MultiviewDataset) {
        // noiseless linear views of a shared factor
        let mut r = rng(seed);
        let f = 3;
        let g = random_feasible(&mut r, m + m / 2, f);
        let mix1 = gaussian(&mut r, f, 6);
        let mix2 = gaussian(&mut r, f, 5);
        let x1 = g.matmul(&mix1);
        let x2 = g.matmul(&mix2);
        let train_rows: Vec<usize> = (0..m).collect();
        let val_rows: Vec<usize> = (m..m + m / 2).collect();
        let train = MultiviewDataset::new(
            vec![x1.select_rows(&train_rows), x2.select_rows(&train_rows)],
            None,
        )
        .unwrap();
        let val = MultiviewDataset::new(
            vec![x1.select_rows(&val_rows), x2.select_rows(&val_rows)],
            None,
        )
        .unwrap();
        (train, val)
    }

    #[test]
    fn dgcca_objective_decreases_on_easy_linear_data() {
        let (train_data, val_data) = linear_dataset(5, 120);
        let mut config = TrainConfig::new(DeepMethod::Dgcca, 0.5, 7);
        config.outer_iterations = 6;
        config.batch_size = 40;
        config.latent_dim = 3;
        config.hidden_widths = vec![16, 16];
        let model = train(&train_data, &val_data, &config).unwrap();
        for pair in model.history.windows(2).take(5) {
            assert!(
                pair[1].train_objective <= pair[0].train_objective + 1e-6,
                "objective rose: {} -> {}",
                pair[0].train_objective,
                pair[1].train_objective
            );
        }
    }

    #[test]
    fn proposed_with_lambda_zero_matches_dgcca_encoders() {
        let (train_data, val_data) = linear_dataset(6, 90);
        let mut base = TrainConfig::new(DeepMethod::Dgcca, 0.0, 11);
        base.outer_iterations = 3;
        base.batch_size = 30;
        base.latent_dim = 3;
        base.hidden_widths = vec![8, 8];
        let dgcca_model = train(&train_data, &val_data, &base).unwrap();

        let mut prop = base.clone();
        prop.method = DeepMethod::Proposed;
        prop.lambda = 0.0;
        let prop_model = train(&train_data, &val_data, &prop).unwrap();

        for (a, b) in dgcca_model.encoders.iter().zip(&prop_model.encoders) {
            assert!(a.params_equal(b), "encoder trajectories diverged");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (train_data, val_data) = linear_dataset(7, 60);
        let mut config = TrainConfig::new(DeepMethod::Proposed, 0.4, 13);
        config.outer_iterations = 3;
        config.batch_size = 20;
        config.latent_dim = 2;
        config.hidden_widths = vec![8];
        let a = train(&train_data, &val_data, &config).unwrap();
        let b = train(&train_data, &val_data, &config).unwrap();
        for (x, y) in a.encoders.iter().zip(&b.encoders) {
            assert!(x.params_equal(y));
        }
        for (x, y) in a.decoders.iter().zip(&b.decoders) {
            assert!(x.params_equal(y));
        }
        assert_eq!(a.best_validation_objective, b.best_validation_objective);
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.train_objective, rb.train_objective);
            assert_eq!(ra.val_objective, rb.val_objective);
        }
    }

    #[test]
    fn early_stopping_keeps_the_best_snapshot() {
        let (train_data, val_data) = linear_dataset(8, 80);
        let mut config = TrainConfig::new(DeepMethod::Dccae, 0.3, 17);
        config.outer_iterations = 5;
        config.batch_size = 20;
        config.latent_dim = 2;
        config.hidden_widths = vec![8, 8];
        let model = train(&train_data, &val_data, &config).unwrap();
        let min_val = model
            .history
            .iter()
            .map(|r| r.val_objective)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(model.best_validation_objective, min_val);
        assert!(
            model.best_validation_objective
                <= model.history.last().unwrap().val_objective
        );
        assert_eq!(model.history.len(), config.outer_iterations);
    }

    #[test]
    fn saved_model_round_trips_and_logs() {
        let (train_data, val_data) = linear_dataset(21, 60);
        let mut config = TrainConfig::new(DeepMethod::Proposed, 0.5, 3);
        config.outer_iterations = 2;
        config.batch_size = 20;
        config.latent_dim = 2;
        config.hidden_widths = vec![6];
        let model = train(&train_data, &val_data, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let loaded = TrainedModel::load(dir.path()).unwrap();
        for (a, b) in model.encoders.iter().zip(&loaded.encoders) {
            assert!(a.params_equal(b));
        }
        for (a, b) in model.decoders.iter().zip(&loaded.decoders) {
            assert!(a.params_equal(b));
        }
        assert_eq!(
            model.best_validation_objective,
            loaded.best_validation_objective
        );
        assert_eq!(model.standardizer.means, loaded.standardizer.means);
        // identical embeddings through the loaded model
        let a = model.embed_average(train_data.views()).unwrap();
        let b = loaded.embed_average(train_data.views()).unwrap();
        assert_eq!(a.data(), b.data());

        let log = std::fs::read_to_string(dir.path().join("run_log.csv")).unwrap();
        let mut lines = log.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iteration,split,objective,r,l_or_q,seconds"
        );
        // two rows (train, val) per outer iteration
        assert_eq!(lines.count(), 2 * config.outer_iterations);
    }

    #[test]
    fn train_rejects_oversized_batch() {
        let (train_data, val_data) = linear_dataset(9, 30);
        let mut config = TrainConfig::new(DeepMethod::Dgcca, 0.5, 1);
        config.batch_size = 31;
        assert!(matches!(
            train(&train_data, &val_data, &config),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        // full composite objective through encoders and decoders, every
        // method, tiny widths
        use crate::nn::{init_mlp, InitScheme, MlpSpec};
        let mut r = rng(42);
        for (method, lambda) in [
            (DeepMethod::Dgcca, 0.5),
            (DeepMethod::Dccae, 0.6),
            (DeepMethod::Proposed, 0.7),
        ] {
            let b = 4;
            let f = 2;
            let view_dims = [3usize, 4, 5];
            let views: Vec<Matrix> = view_dims.iter().map(|&d| gaussian(&mut r, b, d)).collect();
            let g_batch = gaussian(&mut r, b, f);
            let normalizers = vec![1.3, 0.8, 2.1];
            let spec = ObjectiveSpec::new(method, lambda, normalizers).unwrap();

            let mut encoders = Vec::new();
            let mut decoders = Vec::new();
            for &d in &view_dims {
                let enc_spec = MlpSpec::new(vec![d, 4, f]).unwrap();
                let mut net_rng = rng(r.random::<u64>());
                encoders.push(init_mlp(&enc_spec, &mut net_rng, InitScheme::HeUniform));
                if method.uses_decoders() {
                    let dec_spec = MlpSpec::new(vec![f, 4, d]).unwrap();
                    decoders.push(init_mlp(&dec_spec, &mut net_rng, InitScheme::HeUniform));
                }
            }

            let (_, enc_grads, dec_grads) =
                batch_gradients(&encoders, &decoders, &views, &g_batch, &spec).unwrap();
            let loss = |encs: &[Mlp], decs: &[Mlp]| -> f64 {
                evaluate_objective(encs, decs, &views, &g_batch, &spec)
                    .unwrap()
                    .total
            };
            let h = 1e-6;
            let mut checked = 0usize;
            for is_encoder in [true, false] {
                let nets = if is_encoder { &encoders } else { &decoders };
                let grads = if is_encoder { &enc_grads } else { &dec_grads };
                for idx in 0..nets.len() {
                    for l in 0..nets[idx].spec().n_layers() {
                        for i in 0..nets[idx].weights()[l].rows() {
                            for j in 0..nets[idx].weights()[l].cols() {
                                let mut enc_p = encoders.clone();
                                let mut dec_p = decoders.clone();
                                let target = if is_encoder {
                                    &mut enc_p[idx]
                                } else {
                                    &mut dec_p[idx]
                                };
                                let base = target.weights()[l][(i, j)];
                                target.weights_mut()[l][(i, j)] = base + h;
                                let up = loss(&enc_p, &dec_p);
                                let target = if is_encoder {
                                    &mut enc_p[idx]
                                } else {
                                    &mut dec_p[idx]
                                };
                                target.weights_mut()[l][(i, j)] = base - h;
                                let down = loss(&enc_p, &dec_p);
                                let fd = (up - down) / (2.0 * h);
                                let analytic = grads[idx].weights[l][(i, j)];
                                let denom = analytic.abs().max(fd.abs()).max(1e-4);
                                assert!(
                                    (analytic - fd).abs() / denom <= 1e-4,
                                    "{method:?} {} {idx} layer {l} ({i},{j}): \
                                     analytic {analytic} vs fd {fd}",
                                    if is_encoder { "encoder" } else { "decoder" }
                                );
                                checked += 1;
                            }
                        }
                    }
                }
            }
            assert!(checked >= 50, "checked only {checked} parameters");
        }
    }

    #[test]
    fn per_iteration_cost_formula() {
        let d_total: usize = 2 * (64 * 32 + 32 + 32 * 32 + 32 + 32 * 32 + 32 + 32 * 4 + 4);
        let cost = per_iteration_cost(3000, 4, 100, &[d_total]);
        assert_eq!(cost, 3000 * 16 + 100 * d_total as u64);
        // doubling F quadruples the SVD-path estimate
        let svd_only = |f: usize| per_iteration_cost(3000, f, 0, &[]);
        assert_eq!(svd_only(8), 4 * svd_only(4));
    }

    #[test]
    fn shared_target_update_time_scales_with_f_squared() {
        // the measured cost of the G update should track the M F^2 estimate
        // within a factor of two
        let mut r = rng(10);
        let m = 60_000;
        let narrow = vec![gaussian(&mut r, m, 4)];
        let wide = vec![gaussian(&mut r, m, 8)];
        let time_it = |enc: &[Matrix]| {
            let mut best = f64::INFINITY;
            for _ in 0..3 {
                let t = Instant::now();
                std::hint::black_box(update_shared_target(enc).unwrap());
                best = best.min(t.elapsed().as_secs_f64());
            }
            best
        };
        // warm up allocators
        time_it(&narrow);
        let t_narrow = time_it(&narrow);
        let t_wide = time_it(&wide);
        let ratio = t_wide / t_narrow;
        // predicted ratio 4, accepted within a factor 2
        assert!(
            (2.0..8.0).contains(&ratio),
            "timing ratio {ratio} outside [2, 8] (narrow {t_narrow}s, wide {t_wide}s)"
        );
    }
}
