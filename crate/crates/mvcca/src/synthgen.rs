//! Synthetic multiview benchmark generator.
//!
//! A categorical latent `Z` picks a class; the shared factor is its one-hot
//! encoding. Each view also gets a private vector drawn from a zero-mean
//! Gaussian mixture whose component is selected by the same `Z`, so the
//! privates are conditionally independent given the shared factor but
//! unconditionally dependent through it. Latents are concatenated and pushed
//! through one fixed random-weight ReLU network per view. The private power
//! is calibrated against the shared power before the networks apply.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiviewDataset;
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::nn::{init_mlp, InitScheme, Mlp, MlpSpec};
use crate::numerics::Matrix;

/// Configuration of the synthetic benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Class probabilities of the categorical latent; must sum to 1.
    pub class_probabilities: Vec<f64>,
    /// Shared-factor dimension = alphabet size (one-hot encoding).
    pub latent_dim: usize,
    /// Private-vector dimension per view.
    pub private_dims: Vec<usize>,
    pub n_views: usize,
    /// Observed dimension per view.
    pub view_dims: Vec<usize>,
    /// Hidden widths of the generator networks.
    pub generator_hidden: Vec<usize>,
    /// ReLU after the generators' last hidden layer too; disable for the
    /// literal two-activation reading of a three-hidden-layer generator.
    pub generator_activate_last_hidden: bool,
    /// Shared-to-private power ratio in dB; `+inf` disables the privates.
    pub power_ratio_db: f64,
    /// Scale of per-(view, class) mean offsets of the private mixture
    /// components. Zero keeps the components zero-mean.
    pub component_mean_scale: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            class_probabilities: vec![0.1, 0.2, 0.3, 0.4],
            latent_dim: 4,
            private_dims: vec![4, 4],
            n_views: 2,
            view_dims: vec![64, 64],
            generator_hidden: vec![32, 32, 32],
            generator_activate_last_hidden: true,
            power_ratio_db: -18.0,
            component_mean_scale: 0.0,
            train_size: 3000,
            val_size: 1500,
            test_size: 1500,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.class_probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "class probabilities sum to {sum}, expected 1"
            )));
        }
        if self.class_probabilities.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid("class probabilities must be non-negative"));
        }
        if self.latent_dim != self.class_probabilities.len() {
            return Err(Error::invalid(
                "latent_dim must equal the number of classes (one-hot encoding)",
            ));
        }
        if self.private_dims.len() != self.n_views || self.view_dims.len() != self.n_views {
            return Err(Error::invalid(
                "private_dims and view_dims need one entry per view",
            ));
        }
        if self.n_views == 0
            || self.latent_dim == 0
            || self.private_dims.iter().any(|&d| d == 0)
            || self.view_dims.iter().any(|&d| d == 0)
        {
            return Err(Error::invalid("all dimensions must be positive"));
        }
        if self.train_size == 0 || self.val_size == 0 || self.test_size == 0 {
            return Err(Error::invalid("all split sizes must be positive"));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.train_size + self.val_size + self.test_size
    }
}

/// Row-aligned views with labels and the ground-truth latents retained for
/// diagnostics.
#[derive(Debug, Clone)]
pub struct LabeledMultiviewDataset {
    pub views: Vec<Matrix>,
    pub labels: Vec<usize>,
    pub latent_g: Matrix,
    pub latent_c: Vec<Matrix>,
}

impl LabeledMultiviewDataset {
    pub fn to_dataset(&self) -> Result<MultiviewDataset> {
        MultiviewDataset::new(self.views.clone(), Some(self.labels.clone()))
    }
}

/// The three generated splits plus the fixed generator networks that
/// produced all of them.
#[derive(Debug, Clone)]
pub struct SynthSplits {
    pub train: LabeledMultiviewDataset,
    pub val: LabeledMultiviewDataset,
    pub test: LabeledMultiviewDataset,
    pub generators: Vec<Mlp>,
    pub config: SynthConfig,
}

/// Per-(view, class) mixture component: `c = mixing * xi + sqrt(0.1) * eta
/// + mean` with `xi`, `eta` standard normal, giving covariance
/// `mixing mixing^T + 0.1 I` by construction.
struct MixtureComponent {
    mixing: Matrix,
    mean: Vec<f64>,
}

fn draw_components(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<MixtureComponent>> {
    let n_classes = config.class_probabilities.len();
    let mut per_view = Vec::with_capacity(config.n_views);
    for k in 0..config.n_views {
        let l = config.private_dims[k];
        let mut components = Vec::with_capacity(n_classes);
        for _class in 0..n_classes {
            let mixing = Matrix::from_fn(l, l, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mean = (0..l)
                .map(|_| config.component_mean_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            components.push(MixtureComponent { mixing, mean });
        }
        per_view.push(components);
    }
    per_view
}

/// Draws labels, the one-hot shared factor, and the per-view private
/// vectors for `n` samples.
pub fn sample_latents(
    config: &SynthConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Matrix, Vec<Matrix>)> {
    config.validate()?;
    let components = draw_components(config, rng);

    let mut cumulative = Vec::with_capacity(config.class_probabilities.len());
    let mut acc = 0.0;
    for &p in &config.class_probabilities {
        acc += p;
        cumulative.push(acc);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random_range(0.0..1.0);
        let label = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(cumulative.len() - 1);
        labels.push(label);
    }

    let mut g = Matrix::zeros(n, config.latent_dim);
    for (i, &label) in labels.iter().enumerate() {
        g[(i, label)] = 1.0;
    }

    let mut privates = Vec::with_capacity(config.n_views);
    for k in 0..config.n_views {
        let l = config.private_dims[k];
        let mut c = Matrix::zeros(n, l);
        for (i, &label) in labels.iter().enumerate() {
            let component = &components[k][label];
            let xi: Vec<f64> = (0..l)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let eta: Vec<f64> = (0..l)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            for row_idx in 0..l {
                let mut v = component.mean[row_idx] + 0.1f64.sqrt() * eta[row_idx];
                for (col_idx, x) in xi.iter().enumerate() {
                    v += component.mixing[(row_idx, col_idx)] * x;
                }
                c[(i, row_idx)] = v;
            }
        }
        privates.push(c);
    }
    Ok((labels, g, privates))
}

fn mean_squared_row_norm(m: &Matrix) -> f64 {
    m.data().iter().map(|v| v * v).sum::<f64>() / m.rows() as f64
}

/// Rescales the private vectors so the empirical shared-to-private power
/// ratio equals `ratio_db` for every view. The shared factor is untouched.
/// `+inf` zeroes the privates entirely.
pub fn apply_power_ratio(g: &Matrix, c: &[Matrix], ratio_db: f64) -> Result<Vec<Matrix>> {
    if ratio_db == f64::INFINITY {
        return Ok(c
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect());
    }
    let p_g = mean_squared_row_norm(g);
    if p_g <= 0.0 {
        return Err(Error::invalid("shared factor has zero power"));
    }
    let ratio = 10f64.powf(ratio_db / 10.0);
    let mut scaled = Vec::with_capacity(c.len());
    for m in c {
        let p_c = mean_squared_row_norm(m);
        if p_c <= 0.0 {
            return Err(Error::invalid("private component has zero power"));
        }
        let factor = (p_g / (ratio * p_c)).sqrt();
        scaled.push(m.scale(factor));
    }
    Ok(scaled)
}

fn slice_dataset(
    views: &[Matrix],
    labels: &[usize],
    g: &Matrix,
    c: &[Matrix],
    range: std::ops::Range<usize>,
) -> LabeledMultiviewDataset {
    let rows: Vec<usize> = range.clone().collect();
    LabeledMultiviewDataset {
        views: views.iter().map(|v| v.select_rows(&rows)).collect(),
        labels: labels[range].to_vec(),
        latent_g: g.select_rows(&rows),
        latent_c: c.iter().map(|m| m.select_rows(&rows)).collect(),
    }
}

/// Generates the three splits. All randomness derives from `config.seed`;
/// one generator network per view is drawn once and shared by every split,
/// and the power calibration is measured over the concatenated splits.
pub fn generate(config: &SynthConfig) -> Result<SynthSplits> {
    config.validate()?;
    let total = config.total_samples();
    let mut latent_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x51));
    let (labels, g, raw_c) = sample_latents(config, total, &mut latent_rng)?;
    let c = apply_power_ratio(&g, &raw_c, config.power_ratio_db)?;

    let mut generators = Vec::with_capacity(config.n_views);
    let mut views = Vec::with_capacity(config.n_views);
    for k in 0..config.n_views {
        let mut widths = vec![config.latent_dim + config.private_dims[k]];
        widths.extend_from_slice(&config.generator_hidden);
        widths.push(config.view_dims[k]);
        let mut spec = MlpSpec::new(widths)?;
        spec.activate_last_hidden = config.generator_activate_last_hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x60 + k as u64));
        let generator = init_mlp(&spec, &mut rng, InitScheme::StandardNormal);
        let input = Matrix::hstack(&[&g, &c[k]]);
        views.push(generator.apply(&input)?);
        generators.push(generator);
    }

    let t = config.train_size;
    let v = config.val_size;
    Ok(SynthSplits {
        train: slice_dataset(&views, &labels, &g, &c, 0..t),
        val: slice_dataset(&views, &labels, &g, &c, t..t + v),
        test: slice_dataset(&views, &labels, &g, &c, t + v..total),
        generators,
        config: config.clone(),
    })
}

const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// Writes one CSV per view per split plus a labels CSV per split and a
/// manifest recording the config (including the seed).
///
/// View CSVs have a `dim_0..dim_{D-1}` header; values use shortest
/// round-trip formatting so reading them back reproduces the exact floats.
pub fn export_splits(splits: &SynthSplits, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, split) in SPLIT_NAMES
        .iter()
        .zip([&splits.train, &splits.val, &splits.test])
    {
        for (k, view) in split.views.iter().enumerate() {
            let mut file = fs::File::create(dir.join(format!("view_{k}_{name}.csv")))?;
            let header: Vec<String> = (0..view.cols()).map(|j| format!("dim_{j}")).collect();
            writeln!(file, "{}", header.join(","))?;
            for i in 0..view.rows() {
                let row: Vec<String> = view.row(i).iter().map(|v| format!("{v}")).collect();
                writeln!(file, "{}", row.join(","))?;
            }
        }
        let mut file = fs::File::create(dir.join(format!("labels_{name}.csv")))?;
        writeln!(file, "label")?;
        for label in &split.labels {
            writeln!(file, "{label}")?;
        }
    }
    let manifest = serde_json::to_string_pretty(&splits.config)
        .map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("dataset_manifest.json"), manifest)?;
    Ok(())
}

/// Reads the manifest written by [`export_splits`].
pub fn load_manifest(dir: &Path) -> Result<SynthConfig> {
    let text = fs::read_to_string(dir.join("dataset_manifest.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
}

/// Loads one exported split (`"train"`, `"val"`, or `"test"`).
pub fn load_split(dir: &Path, split: &str) -> Result<MultiviewDataset> {
    let config = load_manifest(dir)?;
    let mut views = Vec::with_capacity(config.n_views);
    for k in 0..config.n_views {
        views.push(read_view_csv(&dir.join(format!("view_{k}_{split}.csv")))?);
    }
    let labels = read_labels_csv(&dir.join(format!("labels_{split}.csv")))?;
    MultiviewDataset::new(views, Some(labels))
}

fn read_view_csv(path: &Path) -> Result<Matrix> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))??;
    let cols = header.split(',').count();
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if row.len() != cols {
            return Err(Error::Format(format!(
                "{}: ragged row with {} fields, expected {cols}",
                path.display(),
                row.len()
            )));
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

fn read_labels_csv(path: &Path) -> Result<Vec<usize>> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    lines.next(); // header
    let mut labels = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        labels.push(
            line.parse::<usize>()
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?,
        );
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_config() -> SynthConfig {
        SynthConfig {
            train_size: 200,
            val_size: 100,
            test_size: 100,
            view_dims: vec![16, 16],
            generator_hidden: vec![8, 8, 8],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn degenerate_probabilities_give_constant_label() {
        let config = SynthConfig {
            class_probabilities: vec![1.0, 0.0, 0.0, 0.0],
            ..small_config()
        };
        let (labels, g, _) = sample_latents(&config, 500, &mut rng(1)).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
        for i in 0..500 {
            assert_eq!(g[(i, 0)], 1.0);
            assert_eq!(g[(i, 1)], 0.0);
        }
    }

    #[test]
    fn empirical_class_frequencies_match() {
        let config = small_config();
        let n = 10_000;
        let (labels, _, _) = sample_latents(&config, n, &mut rng(2)).unwrap();
        for (class, &expected) in config.class_probabilities.iter().enumerate() {
            let freq = labels.iter().filter(|&&l| l == class).count() as f64 / n as f64;
            assert!(
                (freq - expected).abs() < 0.02,
                "class {class}: {freq} vs {expected}"
            );
        }
    }

    #[test]
    fn privates_conditionally_independent_given_label() {
        // conditional cross-correlation between the two views' privates,
        // class by class, stays at the Monte-Carlo noise floor
        let config = small_config();
        let n = 50_000;
        let (labels, _, c) = sample_latents(&config, n, &mut rng(3)).unwrap();
        for class in 0..4 {
            let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            let nz = rows.len();
            assert!(nz > 1000);
            let a = c[0].select_rows(&rows);
            let b = c[1].select_rows(&rows);
            let (ca, _) = a.center_cols();
            let (cb, _) = b.center_cols();
            let cross = ca.tr_mul(&cb).scale(1.0 / nz as f64);
            let var = |m: &Matrix, j: usize| {
                (0..m.rows()).map(|i| m[(i, j)] * m[(i, j)]).sum::<f64>() / m.rows() as f64
            };
            let bound = 5.0 / (nz as f64).sqrt();
            for i in 0..cross.rows() {
                for j in 0..cross.cols() {
                    let corr = cross[(i, j)] / (var(&ca, i) * var(&cb, j)).sqrt();
                    assert!(
                        corr.abs() < bound,
                        "class {class} corr[{i}{j}] = {corr} vs bound {bound}"
                    );
                }
            }
        }
    }

    #[test]
    fn privates_unconditionally_dependent_with_offset_means() {
        // nonzero component means make the mixture means carry the label,
        // so the privates correlate across views unconditionally
        let config = SynthConfig {
            component_mean_scale: 2.0,
            ..small_config()
        };
        let n = 20_000;
        let (_, _, c) = sample_latents(&config, n, &mut rng(4)).unwrap();
        let (ca, _) = c[0].center_cols();
        let (cb, _) = c[1].center_cols();
        let cross = ca.tr_mul(&cb).scale(1.0 / n as f64);
        let var = |m: &Matrix, j: usize| {
            (0..m.rows()).map(|i| m[(i, j)] * m[(i, j)]).sum::<f64>() / m.rows() as f64
        };
        let mut strongest = 0.0f64;
        for i in 0..cross.rows() {
            for j in 0..cross.cols() {
                let corr = cross[(i, j)] / (var(&ca, i) * var(&cb, j)).sqrt();
                strongest = strongest.max(corr.abs());
            }
        }
        let noise_floor = 5.0 / (n as f64).sqrt();
        assert!(
            strongest > 3.0 * noise_floor,
            "strongest unconditional correlation {strongest} vs floor {noise_floor}"
        );
    }

    #[test]
    fn power_ratio_zero_db_on_equal_power_is_identity() {
        // unit-power g (one-hot) and unit-power c rows
        let g = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let c = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let scaled = apply_power_ratio(&g, &[c.clone()], 0.0).unwrap();
        let drift = scaled[0].sub(&c).max_abs();
        assert!(drift < 1e-12);
    }

    #[test]
    fn power_ratio_minus_18_db_calibrates_within_tenth_db() {
        let config = small_config();
        let (_, g, c) = sample_latents(&config, 2000, &mut rng(5)).unwrap();
        let scaled = apply_power_ratio(&g, &c, -18.0).unwrap();
        for view in &scaled {
            let measured =
                10.0 * (mean_squared_row_norm(&g) / mean_squared_row_norm(view)).log10();
            assert!(
                (measured - (-18.0)).abs() < 0.1,
                "measured ratio {measured} dB"
            );
        }
    }

    #[test]
    fn power_ratio_infinite_disables_privates() {
        let g = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let c = Matrix::from_rows(&[vec![3.0, -2.0]]).unwrap();
        let scaled = apply_power_ratio(&g, &[c], f64::INFINITY).unwrap();
        assert_eq!(scaled[0].max_abs(), 0.0);
    }

    #[test]
    fn power_ratio_rejects_zero_power() {
        let g = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let zero = Matrix::zeros(1, 2);
        assert!(matches!(
            apply_power_ratio(&g, &[zero], 0.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn generate_is_deterministic() {
        let config = small_config();
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.train.labels, b.train.labels);
        for (x, y) in a.train.views.iter().zip(&b.train.views) {
            assert_eq!(x.data(), y.data());
        }
        for (x, y) in a.test.views.iter().zip(&b.test.views) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn default_config_shapes() {
        let config = SynthConfig::default();
        let splits = generate(&config).unwrap();
        assert_eq!(splits.train.views[0].rows(), 3000);
        assert_eq!(splits.train.views[0].cols(), 64);
        assert_eq!(splits.val.views[1].rows(), 1500);
        assert_eq!(splits.test.views[0].rows(), 1500);
        assert_eq!(splits.test.views[0].cols(), 64);
    }

    #[test]
    fn one_generator_per_view_serves_every_split() {
        let config = small_config();
        let splits = generate(&config).unwrap();
        for (k, generator) in splits.generators.iter().enumerate() {
            for split in [&splits.train, &splits.val, &splits.test] {
                let input = Matrix::hstack(&[&split.latent_g, &split.latent_c[k]]);
                let regenerated = generator.apply(&input).unwrap();
                assert_eq!(regenerated.data(), split.views[k].data());
            }
        }
    }

    #[test]
    fn disabled_privates_make_views_label_deterministic() {
        let config = SynthConfig {
            power_ratio_db: f64::INFINITY,
            ..small_config()
        };
        let splits = generate(&config).unwrap();
        let view = &splits.train.views[0];
        let labels = &splits.train.labels;
        let mut reference: [Option<usize>; 4] = [None; 4];
        for i in 0..view.rows() {
            match reference[labels[i]] {
                None => reference[labels[i]] = Some(i),
                Some(j) => assert_eq!(view.row(i), view.row(j), "rows {i} and {j} differ"),
            }
        }
    }

    #[test]
    fn export_and_load_round_trip() {
        let config = small_config();
        let splits = generate(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_splits(&splits, dir.path()).unwrap();
        let loaded = load_split(dir.path(), "train").unwrap();
        assert_eq!(loaded.n_views(), 2);
        assert_eq!(loaded.n_samples(), config.train_size);
        assert_eq!(loaded.labels().unwrap(), splits.train.labels.as_slice());
        for (a, b) in loaded.views().iter().zip(&splits.train.views) {
            assert_eq!(a.data(), b.data());
        }
        let manifest = load_manifest(dir.path()).unwrap();
        assert_eq!(manifest.seed, config.seed);
        assert_eq!(manifest.train_size, config.train_size);
    }

    #[test]
    fn config_validation_catches_bad_probabilities() {
        let config = SynthConfig {
            class_probabilities: vec![0.5, 0.4],
            latent_dim: 2,
            ..small_config()
        };
        assert!(config.validate().is_err());
    }
}
