//! Experiment sweep harness: generate the synthetic benchmark once, train
//! every (method, lambda, seed) cell, evaluate downstream metrics, and write
//! diff-able CSV artifacts plus a manifest that reproduces the run bit for
//! bit.
//!
//! Cells run on a rayon worker pool; each cell is internally deterministic
//! and records are sorted before writing, so the artifacts do not depend on
//! scheduling.

use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiviewDataset;
use crate::error::{Error, Result};
use crate::eval::{self, MetricsRecord};
use crate::linear_cca::{canonical_corrs, cca_two_view, maxvar_gcca, LinearProjections};
use crate::mix_seed;
use crate::numerics::Matrix;
use crate::objectives::DeepMethod;
use crate::synthgen::{self, SynthConfig, SynthSplits};
use crate::trainer::{self, TrainConfig};

/// Every estimator the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LinearCca,
    Maxvar,
    Dgcca,
    Dccae,
    Proposed,
}

pub const ALL_METHODS: [Method; 5] = [
    Method::LinearCca,
    Method::Maxvar,
    Method::Dgcca,
    Method::Dccae,
    Method::Proposed,
];

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::LinearCca => "linear-cca",
            Method::Maxvar => "maxvar",
            Method::Dgcca => "dgcca",
            Method::Dccae => "dccae",
            Method::Proposed => "proposed",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        ALL_METHODS
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown method '{name}'")))
    }

    pub fn deep(&self) -> Option<DeepMethod> {
        match self {
            Method::LinearCca | Method::Maxvar => None,
            Method::Dgcca => Some(DeepMethod::Dgcca),
            Method::Dccae => Some(DeepMethod::Dccae),
            Method::Proposed => Some(DeepMethod::Proposed),
        }
    }

    /// Whether the objective actually depends on the trade-off weight.
    /// Methods that do not are swept once, keyed to lambda = 0.5.
    pub fn lambda_dependent(&self) -> bool {
        matches!(self, Method::Dccae | Method::Proposed)
    }

    fn index(&self) -> usize {
        ALL_METHODS.iter().position(|m| m == self).unwrap()
    }
}

/// Lambda slot used for methods without a trade-off weight.
pub const LAMBDA_INDEPENDENT_SLOT: f64 = 0.5;

/// Full sweep configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    /// Training defaults; each cell overrides method, lambda, and seed.
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub lambdas: Vec<f64>,
    pub seeds_per_cell: usize,
    /// Ridge for the linear baselines; `None` picks the scale-aware default.
    pub ridge: Option<f64>,
    pub svm_c: f64,
    pub kmeans_restarts: usize,
}

impl ExperimentConfig {
    pub fn new(synth: SynthConfig, train: TrainConfig) -> Self {
        ExperimentConfig {
            synth,
            train,
            methods: ALL_METHODS.to_vec(),
            lambdas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            seeds_per_cell: 10,
            ridge: None,
            svm_c: 1.0,
            kmeans_restarts: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.methods.is_empty() {
            return Err(Error::invalid("methods must be nonempty"));
        }
        if self.lambdas.is_empty() {
            return Err(Error::invalid("lambdas must be nonempty"));
        }
        if self.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::invalid("lambdas must lie in [0, 1]"));
        }
        if self.seeds_per_cell == 0 {
            return Err(Error::invalid("seeds_per_cell must be positive"));
        }
        Ok(())
    }
}

/// One planned (method, lambda, repetition) cell with its resolved seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedCell {
    pub method: Method,
    pub lambda: f64,
    pub rep: usize,
    pub train_seed: u64,
    pub eval_seed: u64,
}

/// The reproducibility record: config plus every resolved cell seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub cells: Vec<ResolvedCell>,
}

/// A cell that failed, with the error it produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub lambda: f64,
    pub rep: usize,
    pub message: String,
}

/// Records, failures, and the file set a sweep produced.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<MetricsRecord>,
    pub failures: Vec<CellFailure>,
    pub manifest: Manifest,
    pub records_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub corr_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Expands the config into the cell list with deterministic per-cell seeds.
pub fn plan_cells(config: &ExperimentConfig) -> Vec<ResolvedCell> {
    let mut cells = Vec::new();
    for method in &config.methods {
        let lambdas: Vec<f64> = if method.lambda_dependent() {
            config.lambdas.clone()
        } else {
            vec![LAMBDA_INDEPENDENT_SLOT]
        };
        for (lambda_index, &lambda) in lambdas.iter().enumerate() {
            for rep in 0..config.seeds_per_cell {
                let s = mix_seed(config.train.seed, method.index() as u64);
                let s = mix_seed(s, lambda_index as u64);
                let train_seed = mix_seed(s, rep as u64);
                let eval_seed = mix_seed(train_seed, 0xE7A1);
                cells.push(ResolvedCell {
                    method: *method,
                    lambda,
                    rep,
                    train_seed,
                    eval_seed,
                });
            }
        }
    }
    cells
}

fn linear_fit(
    method: Method,
    train: &MultiviewDataset,
    latent_dim: usize,
    ridge: Option<f64>,
) -> Result<LinearProjections> {
    match method {
        Method::LinearCca => {
            if train.n_views() != 2 {
                return Err(Error::invalid("linear-cca needs exactly two views"));
            }
            cca_two_view(train.view(0), train.view(1), latent_dim, ridge)
        }
        Method::Maxvar => maxvar_gcca(train.views(), latent_dim, ridge),
        _ => unreachable!("linear_fit called for a deep method"),
    }
}

/// Trains and evaluates one cell against the shared dataset.
pub fn evaluate_cell(
    splits: &SynthSplits,
    cell: &ResolvedCell,
    config: &ExperimentConfig,
) -> Result<MetricsRecord> {
    let train_ds = splits.train.to_dataset()?;
    let val_ds = splits.val.to_dataset()?;
    let test_ds = splits.test.to_dataset()?;

    // per-view test embeddings (for the correlation score) and averaged
    // embeddings (for clustering and classification)
    let (test_views_embedded, train_avg, test_avg) = match cell.method.deep() {
        None => {
            let fit = linear_fit(cell.method, &train_ds, config.train.latent_dim, config.ridge)?;
            let per_view: Vec<Matrix> = (0..test_ds.n_views())
                .map(|k| fit.embed_view(k, test_ds.view(k)))
                .collect();
            (
                per_view,
                fit.embed_average(train_ds.views()),
                fit.embed_average(test_ds.views()),
            )
        }
        Some(deep) => {
            let mut train_config = config.train.clone();
            train_config.method = deep;
            train_config.lambda = cell.lambda;
            train_config.seed = cell.train_seed;
            let model = trainer::train(&train_ds, &val_ds, &train_config)?;
            let per_view: Vec<Matrix> = (0..test_ds.n_views())
                .map(|k| model.encode_view(k, test_ds.view(k)))
                .collect::<Result<_>>()?;
            (
                per_view,
                eval::embed(&model, train_ds.views())?,
                eval::embed(&model, test_ds.views())?,
            )
        }
    };

    let corr_coef = if test_views_embedded.len() >= 2 {
        crate::linear_cca::total_corr_coef(&test_views_embedded)?
    } else {
        let cc = canonical_corrs(&test_views_embedded[0], &test_views_embedded[0])?;
        cc.cosines.iter().sum::<f64>() / cc.cosines.len() as f64
    };

    let test_labels = test_ds
        .labels()
        .ok_or_else(|| Error::invalid("test split needs labels"))?;
    let train_labels = train_ds
        .labels()
        .ok_or_else(|| Error::invalid("train split needs labels"))?;
    let n_classes = test_ds
        .n_classes()
        .expect("labels present");

    let mut kmeans_rng = ChaCha8Rng::seed_from_u64(cell.eval_seed);
    let clusters = eval::kmeans(&test_avg, n_classes, config.kmeans_restarts, &mut kmeans_rng)?;
    let acc = eval::clustering_accuracy(&clusters.labels, test_labels, n_classes)?;
    let nmi = eval::nmi(&clusters.labels, test_labels)?;
    let ari = eval::ari(&clusters.labels, test_labels)?;
    let cla_acc = eval::linear_svm(&train_avg, train_labels, &test_avg, test_labels, config.svm_c)?;

    Ok(MetricsRecord::new(
        cell.method.name(),
        cell.lambda,
        cell.train_seed,
        acc,
        nmi,
        ari,
        cla_acc,
        corr_coef,
    ))
}

fn sort_key(record: &MetricsRecord) -> (usize, u64, u64) {
    let method_index = ALL_METHODS
        .iter()
        .position(|m| m.name() == record.method)
        .unwrap_or(usize::MAX);
    (method_index, record.lambda.to_bits(), record.seed)
}

/// Runs every planned cell (in parallel), writes the artifact files, and
/// returns the outcome. Individual cell failures are recorded and skipped.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let splits = synthgen::generate(&config.synth)?;
    let cells = plan_cells(config);
    let manifest = Manifest {
        config: config.clone(),
        cells: cells.clone(),
    };
    run_cells(&splits, manifest, out_dir)
}

/// Re-runs a sweep exactly as recorded: same config, same resolved seeds.
pub fn run_experiment_from_manifest(
    manifest_path: &Path,
    out_dir: &Path,
) -> Result<ExperimentOutcome> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    manifest.config.validate()?;
    fs::create_dir_all(out_dir)?;
    let splits = synthgen::generate(&manifest.config.synth)?;
    run_cells(&splits, manifest, out_dir)
}

fn run_cells(
    splits: &SynthSplits,
    manifest: Manifest,
    out_dir: &Path,
) -> Result<ExperimentOutcome> {
    let config = &manifest.config;
    let outcomes: Vec<std::result::Result<MetricsRecord, CellFailure>> = manifest
        .cells
        .par_iter()
        .map(|cell| {
            evaluate_cell(splits, cell, config).map_err(|e| CellFailure {
                method: cell.method,
                lambda: cell.lambda,
                rep: cell.rep,
                message: e.to_string(),
            })
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    records.sort_by_key(sort_key);

    let records_path = out_dir.join("records.csv");
    write_records_csv(&records, &records_path)?;
    let aggregate_path = out_dir.join("aggregate.csv");
    write_aggregate_csv(&records, &aggregate_path)?;
    let corr_path = out_dir.join("corr_coef.csv");
    write_corr_csv(&records, &corr_path)?;
    let manifest_path = out_dir.join("manifest.json");
    let manifest_json =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&manifest_path, manifest_json)?;
    if !failures.is_empty() {
        let mut file = fs::File::create(out_dir.join("failures.csv"))?;
        writeln!(file, "method,lambda,rep,message")?;
        for f in &failures {
            writeln!(
                file,
                "{},{:.6},{},{}",
                f.method.name(),
                f.lambda,
                f.rep,
                f.message.replace(',', ";")
            )?;
        }
    }

    Ok(ExperimentOutcome {
        records,
        failures,
        manifest,
        records_path,
        aggregate_path,
        corr_path,
        manifest_path,
    })
}

fn write_records_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "method,lambda,seed,acc,nmi,ari,cla_acc,corr_coef")?;
    for r in records {
        writeln!(
            file,
            "{},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.method, r.lambda, r.seed, r.acc, r.nmi, r.ari, r.cla_acc, r.corr_coef
        )?;
    }
    Ok(())
}

/// Mean and population standard deviation per (method, lambda) group, one
/// row per metric. Groups appear in record order.
pub fn aggregate(records: &[MetricsRecord]) -> Vec<(String, f64, String, f64, f64)> {
    let mut groups: Vec<(String, f64, Vec<&MetricsRecord>)> = Vec::new();
    for r in records {
        match groups
            .iter_mut()
            .find(|(m, l, _)| *m == r.method && *l == r.lambda)
        {
            Some((_, _, members)) => members.push(r),
            None => groups.push((r.method.clone(), r.lambda, vec![r])),
        }
    }
    let mut rows = Vec::new();
    for (method, lambda, members) in &groups {
        let metrics: [(&str, fn(&MetricsRecord) -> f64); 5] = [
            ("acc", |r| r.acc),
            ("nmi", |r| r.nmi),
            ("ari", |r| r.ari),
            ("cla_acc", |r| r.cla_acc),
            ("corr_coef", |r| r.corr_coef),
        ];
        for (name, get) in metrics {
            let values: Vec<f64> = members.iter().map(|r| get(r)).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / values.len() as f64;
            rows.push((method.clone(), *lambda, name.to_string(), mean, var.sqrt()));
        }
    }
    rows
}

fn write_aggregate_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "method,lambda,metric,mean,std")?;
    for (method, lambda, metric, mean, std) in aggregate(records) {
        writeln!(file, "{method},{lambda:.6},{metric},{mean:.6},{std:.6}")?;
    }
    Ok(())
}

fn write_corr_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "method,lambda,corr_coef_mean,corr_coef_std")?;
    for (method, lambda, metric, mean, std) in aggregate(records) {
        if metric == "corr_coef" {
            writeln!(file, "{method},{lambda:.6},{mean:.6},{std:.6}")?;
        }
    }
    Ok(())
}

/// Writes an `M x F` embedding with labels as CSV, header
/// `dim_0..dim_{F-1},label`. Floats use shortest round-trip formatting.
pub fn export_embeddings(embeddings: &Matrix, labels: &[usize], path: &Path) -> Result<()> {
    if labels.len() != embeddings.rows() {
        return Err(Error::invalid("labels must align with embedding rows"));
    }
    let mut file = fs::File::create(path)?;
    let header: Vec<String> = (0..embeddings.cols()).map(|j| format!("dim_{j}")).collect();
    writeln!(file, "{},label", header.join(","))?;
    for i in 0..embeddings.rows() {
        let row: Vec<String> = embeddings.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(file, "{},{}", row.join(","), labels[i])?;
    }
    Ok(())
}

/// Convenience for the metrics of a single method on a preloaded dataset
/// triple, outside a sweep (used by the CLI's evaluate subcommand).
#[allow(clippy::too_many_arguments)]
pub fn evaluate_embeddings(
    method: &str,
    lambda: f64,
    seed: u64,
    train_avg: &Matrix,
    train_labels: &[usize],
    test_avg: &Matrix,
    test_labels: &[usize],
    test_views_embedded: &[Matrix],
    svm_c: f64,
    kmeans_restarts: usize,
    eval_seed: u64,
) -> Result<MetricsRecord> {
    let n_classes = test_labels.iter().max().map_or(0, |&m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
    let clusters = eval::kmeans(test_avg, n_classes, kmeans_restarts, &mut rng)?;
    let acc = eval::clustering_accuracy(&clusters.labels, test_labels, n_classes)?;
    let nmi = eval::nmi(&clusters.labels, test_labels)?;
    let ari = eval::ari(&clusters.labels, test_labels)?;
    let cla_acc = eval::linear_svm(train_avg, train_labels, test_avg, test_labels, svm_c)?;
    let corr_coef = if test_views_embedded.len() >= 2 {
        crate::linear_cca::total_corr_coef(test_views_embedded)?
    } else {
        1.0
    };
    Ok(MetricsRecord::new(
        method, lambda, seed, acc, nmi, ari, cla_acc, corr_coef,
    ))
}

/// Validates a metrics record outside the harness (used in tests).
pub fn metrics_in_range(record: &MetricsRecord) -> bool {
    [
        record.acc,
        record.nmi,
        record.ari,
        record.cla_acc,
        record.corr_coef,
    ]
    .iter()
    .all(|v| (0.0..=1.0).contains(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let synth = SynthConfig {
            train_size: 150,
            val_size: 60,
            test_size: 60,
            view_dims: vec![12, 12],
            generator_hidden: vec![8, 8, 8],
            ..SynthConfig::default()
        };
        let mut train = TrainConfig::new(DeepMethod::Proposed, 0.5, 42);
        train.outer_iterations = 4;
        train.batch_size = 30;
        train.hidden_widths = vec![8, 8];
        let mut config = ExperimentConfig::new(synth, train);
        config.seeds_per_cell = 1;
        config
    }

    #[test]
    fn single_linear_cell_gives_one_row_with_zero_std() {
        let mut config = tiny_config();
        config.methods = vec![Method::Maxvar];
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_experiment(&config, dir.path()).unwrap();
        assert!(outcome.failures.is_empty());
        assert_eq!(outcome.records.len(), 1);
        assert_eq!(outcome.records[0].method, "maxvar");
        assert_eq!(outcome.records[0].lambda, LAMBDA_INDEPENDENT_SLOT);
        let rows = aggregate(&outcome.records);
        assert!(rows.iter().all(|(_, _, _, _, std)| *std == 0.0));
        assert!(metrics_in_range(&outcome.records[0]));
    }

    #[test]
    fn lambda_independent_methods_emit_once() {
        let mut config = tiny_config();
        config.methods = vec![Method::Maxvar, Method::Dgcca, Method::Proposed];
        config.lambdas = vec![0.1, 0.9];
        let cells = plan_cells(&config);
        let maxvar = cells.iter().filter(|c| c.method == Method::Maxvar).count();
        let dgcca = cells.iter().filter(|c| c.method == Method::Dgcca).count();
        let proposed = cells
            .iter()
            .filter(|c| c.method == Method::Proposed)
            .count();
        assert_eq!(maxvar, 1);
        assert_eq!(dgcca, 1);
        assert_eq!(proposed, 2);
    }

    #[test]
    fn sweep_has_one_row_per_method_lambda_cell() {
        // table shape: lambda-dependent methods fill every lambda column,
        // the rest appear once
        let mut config = tiny_config();
        config.methods = vec![Method::Maxvar, Method::Dccae];
        config.lambdas = vec![0.1, 0.5, 0.9];
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_experiment(&config, dir.path()).unwrap();
        assert!(outcome.failures.is_empty());
        assert_eq!(outcome.records.len(), 1 + 3);
        let dccae_lambdas: Vec<f64> = outcome
            .records
            .iter()
            .filter(|r| r.method == "dccae")
            .map(|r| r.lambda)
            .collect();
        assert_eq!(dccae_lambdas, vec![0.1, 0.5, 0.9]);
    }

    #[test]
    fn rerun_from_manifest_is_byte_identical() {
        let mut config = tiny_config();
        config.methods = vec![Method::LinearCca, Method::Proposed];
        config.lambdas = vec![0.3];
        let dir_a = tempfile::tempdir().unwrap();
        let outcome_a = run_experiment(&config, dir_a.path()).unwrap();
        assert!(outcome_a.failures.is_empty());

        let dir_b = tempfile::tempdir().unwrap();
        let outcome_b =
            run_experiment_from_manifest(&outcome_a.manifest_path, dir_b.path()).unwrap();
        assert!(outcome_b.failures.is_empty());

        for (a, b) in [
            (&outcome_a.records_path, &outcome_b.records_path),
            (&outcome_a.aggregate_path, &outcome_b.aggregate_path),
            (&outcome_a.corr_path, &outcome_b.corr_path),
            (&outcome_a.manifest_path, &outcome_b.manifest_path),
        ] {
            let bytes_a = fs::read(a).unwrap();
            let bytes_b = fs::read(b).unwrap();
            assert_eq!(bytes_a, bytes_b, "{} differs across reruns", a.display());
        }
    }

    #[test]
    fn aggregate_recomputation_matches_file() {
        let mut config = tiny_config();
        config.methods = vec![Method::Maxvar, Method::Dgcca];
        config.seeds_per_cell = 2;
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_experiment(&config, dir.path()).unwrap();
        let text = fs::read_to_string(&outcome.aggregate_path).unwrap();
        let mut expected = String::from("method,lambda,metric,mean,std\n");
        for (method, lambda, metric, mean, std) in aggregate(&outcome.records) {
            expected.push_str(&format!(
                "{method},{lambda:.6},{metric},{mean:.6},{std:.6}\n"
            ));
        }
        assert_eq!(text, expected);
    }

    #[test]
    fn failed_cells_are_recorded_and_skipped() {
        let mut config = tiny_config();
        // linear-cca on three views cannot run; maxvar can
        config.synth.n_views = 3;
        config.synth.view_dims = vec![12, 12, 12];
        config.synth.private_dims = vec![4, 4, 4];
        config.methods = vec![Method::LinearCca, Method::Maxvar];
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_experiment(&config, dir.path()).unwrap();
        assert_eq!(outcome.failures.len(), 1);
        assert_eq!(outcome.failures[0].method, Method::LinearCca);
        assert_eq!(outcome.records.len(), 1);
        assert!(dir.path().join("failures.csv").exists());
    }

    #[test]
    fn export_embeddings_format() {
        let emb = Matrix::from_rows(&[vec![0.25, -1.5], vec![3.0, 0.125], vec![1.0, 2.0]])
            .unwrap();
        let labels = vec![0, 1, 3];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.csv");
        export_embeddings(&emb, &labels, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "dim_0,dim_1,label");
        assert_eq!(lines[1], "0.25,-1.5,0");
        assert_eq!(lines[3], "1,2,3");

        // round trip at full precision
        for (i, line) in lines.iter().skip(1).enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            for j in 0..2 {
                assert_eq!(fields[j].parse::<f64>().unwrap(), emb[(i, j)]);
            }
        }
    }

    #[test]
    fn method_parse_round_trip() {
        for method in ALL_METHODS {
            assert_eq!(Method::parse(method.name()).unwrap(), method);
        }
        assert!(Method::parse("nonsense").is_err());
    }
}
