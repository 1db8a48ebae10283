//! Experiment loop, orchestration and reporting.
//!
//! One run is a (strategy, seed) pair. Each round trains on the current
//! labelled set, records test accuracy, then acquires `budget` pool
//! instances whose labels are revealed from the dataset. The seed drives
//! every random choice through named child streams (`split`, `init/{r}`,
//! `train/{r}`, `acquire/{r}`), none of which mention the strategy, so all
//! strategies under one seed start from the same split and weights.

mod compare;
mod io;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use compare::{build_comparison_matrix, t_score, victory_score, ComparisonMatrix, WIN_THRESHOLD};
pub use io::{read_matrix_csv, read_results_csv, sort_results, write_matrix_csv, write_results_csv};

use crate::acquisition::{AcquisitionConfig, SelectionContext, Strategy};
use crate::data::{self, make_initial_split, subsample_indices, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{MlpSpec, ModelParams, ModelSnapshot, TrainConfig};
use crate::numkernel::RngStream;

/// Where the data comes from. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Synthetic Gaussian blobs; train and test are drawn from the same clusters.
    Blobs {
        num_classes: usize,
        per_class_train: usize,
        per_class_test: usize,
        dim: usize,
        spread: f64,
        center_scale: f64,
        #[serde(default)]
        seed: u64,
    },
    /// IDX image/label files (optionally gzip-compressed).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Uniform subsample of the training file, drawn with `subsample_seed`.
        #[serde(default)]
        train_size: Option<usize>,
        #[serde(default)]
        test_size: Option<usize>,
        #[serde(default)]
        subsample_seed: u64,
    },
    /// One CSV file, split into train and test by `test_fraction`.
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        split_seed: u64,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dims: Vec<usize>,
    #[serde(default = "one")]
    pub classifier_depth: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Fresh weights every round.
    #[default]
    Random,
    /// Keep training the previous round's weights.
    Continue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetSource,
    /// Size of the random initial labelled set.
    pub initial_labelled: usize,
    pub model: ModelSection,
    /// Defaults to the tabular learning rate for CSV data.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    /// Per-strategy replacement for `acquisition`.
    #[serde(default)]
    pub acquisition_overrides: BTreeMap<Strategy, AcquisitionConfig>,
    pub rounds: usize,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub init_mode: InitMode,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write selection wall time into results.csv (makes it non-reproducible).
    #[serde(default)]
    pub record_timings: bool,
}

fn default_name() -> String {
    "experiment".into()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.strategies.is_empty() {
            return bad("strategies must not be empty");
        }
        if self.initial_labelled == 0 {
            return bad("initial_labelled must be at least 1");
        }
        self.effective_train().validate()?;
        self.acquisition.validate()?;
        self.acquisition_overrides.values().try_for_each(AcquisitionConfig::validate)?;
        if let DatasetSource::Csv { test_fraction, .. } = self.dataset {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return bad("test_fraction must be in (0, 1)");
            }
        }
        Ok(())
    }

    pub fn effective_train(&self) -> TrainConfig {
        match (&self.train, &self.dataset) {
            (Some(t), _) => t.clone(),
            (None, DatasetSource::Csv { .. }) => TrainConfig::tabular(),
            (None, _) => TrainConfig::default(),
        }
    }

    pub fn acquisition_for(&self, strategy: Strategy) -> &AcquisitionConfig {
        self.acquisition_overrides.get(&strategy).unwrap_or(&self.acquisition)
    }

    /// SHA-256 of the canonical TOML form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let text = toml::to_string(&c).expect("config serialises");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Training pool (initial labelled set plus unlabelled pool) and test set.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn prepare_data(source: &DatasetSource, base_dir: &Path) -> Result<PreparedData> {
    match source {
        &DatasetSource::Blobs { num_classes, per_class_train, per_class_test, dim, spread, center_scale, seed } => {
            if per_class_test == 0 {
                return Err(Error::InvalidConfig("per_class_test must be at least 1".into()));
            }
            let per = per_class_train + per_class_test;
            let all = data::gen_gaussian_blobs(num_classes, per, dim, spread, center_scale, seed)?;
            let (mut tr, mut te) = (Vec::new(), Vec::new());
            for i in 0..all.len() {
                if i % per < per_class_train { tr.push(i) } else { te.push(i) }
            }
            Ok(PreparedData { train: all.subset(&tr)?, test: all.subset(&te)? })
        }
        DatasetSource::Idx { train_images, train_labels, test_images, test_labels, train_size, test_size, subsample_seed } => {
            let mut train =
                data::load_idx_dataset(&resolve(base_dir, train_images), &resolve(base_dir, train_labels), "idx-train")?;
            let mut test =
                data::load_idx_dataset(&resolve(base_dir, test_images), &resolve(base_dir, test_labels), "idx-test")?;
            let k = train.num_classes.max(test.num_classes);
            train.num_classes = k;
            test.num_classes = k;
            let root = RngStream::new(*subsample_seed);
            if let Some(n) = *train_size {
                train = train.subset(&subsample_indices(train.len(), n, root.split("train").seed())?)?;
            }
            if let Some(n) = *test_size {
                test = test.subset(&subsample_indices(test.len(), n, root.split("test").seed())?)?;
            }
            if train.dim() != test.dim() {
                return Err(Error::InvalidDimension(format!(
                    "train images have {} pixels, test images {}",
                    train.dim(),
                    test.dim()
                )));
            }
            Ok(PreparedData { train, test })
        }
        DatasetSource::Csv { path, label_column, test_fraction, split_seed } => {
            let all = data::load_csv_tabular(&resolve(base_dir, path), label_column)?;
            let n_test = ((all.len() as f64) * test_fraction).round() as usize;
            if n_test == 0 || n_test >= all.len() {
                return Err(Error::InvalidSplit(format!("test fraction {test_fraction} leaves an empty side")));
            }
            let test_idx = subsample_indices(all.len(), n_test, *split_seed)?;
            let mut is_test = vec![false; all.len()];
            test_idx.iter().for_each(|&i| is_test[i] = true);
            let train_idx: Vec<usize> = (0..all.len()).filter(|&i| !is_test[i]).collect();
            Ok(PreparedData { train: all.subset(&train_idx)?, test: all.subset(&test_idx)? })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Labels used to train this round's model.
    pub labelled_count: usize,
    pub test_accuracy: f64,
    pub acq_seconds: Option<f64>,
    pub candidate_count: Option<usize>,
    /// Training-set rows acquired at the end of the round.
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config_hash: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
}

impl RunResult {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_accuracy)
    }
}

/// One active learning run.
pub fn run_experiment(
    config: &ExperimentConfig,
    data: &PreparedData,
    strategy: Strategy,
    seed: u64,
) -> Result<RunResult> {
    config.validate()?;
    let train_cfg = config.effective_train();
    let acq_cfg = config.acquisition_for(strategy);
    let ds = &data.train;
    let spec = MlpSpec::new(ds.dim(), config.model.hidden_dims.clone(), ds.num_classes)
        .with_classifier_depth(config.model.classifier_depth);
    spec.validate()?;
    // fail before any training if some round would run out of pool
    if let Some(start_pool) = ds.len().checked_sub(config.initial_labelled) {
        if config.rounds * config.budget > start_pool {
            let round = start_pool / config.budget;
            let remaining = start_pool - round * config.budget;
            return Err(Error::PoolExhausted { round, budget: config.budget, remaining });
        }
    }

    let root = RngStream::new(seed);
    let split = make_initial_split(
        ds.len(),
        SplitSpec { initial_labelled: config.initial_labelled, seed: root.split("split").seed() },
    )?;
    let mut labelled = split.labelled;
    let mut pool = split.unlabelled;
    let mut is_labelled = vec![false; ds.len()];
    labelled.iter().for_each(|&i| is_labelled[i] = true);

    let mut params = ModelParams::init(&spec, &mut root.split("init/0"))?;
    let mut records = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        if config.init_mode == InitMode::Random && round > 0 {
            params = ModelParams::init(&spec, &mut root.split(&format!("init/{round}")))?;
        }
        let x = ds.features.select_rows(&labelled);
        let y: Vec<usize> = labelled.iter().map(|&i| ds.labels[i]).collect();
        params = params.train(&x, &y, &train_cfg, &mut root.split(&format!("train/{round}")))?;
        let test_accuracy = params.eval_accuracy(&data.test.features, &data.test.labels)?;

        let snapshot = ModelSnapshot::new(params);
        let pool_x = ds.features.select_rows(&pool);
        let ctx = SelectionContext { snapshot: &snapshot, pool_inputs: &pool_x, labelled_inputs: &x, labelled_labels: &y };
        let started = Instant::now();
        let sel = strategy.select(&ctx, config.budget, acq_cfg, &mut root.split(&format!("acquire/{round}")))?;
        let elapsed = started.elapsed().as_secs_f64();
        params = snapshot.into_params();

        let selected: Vec<usize> = sel.indices.iter().map(|&i| pool[i]).collect();
        for &i in &selected {
            if is_labelled[i] {
                return Err(Error::InvalidSample(format!("{strategy} selected row {i} twice")));
            }
            is_labelled[i] = true;
        }
        records.push(RoundRecord {
            round,
            labelled_count: labelled.len(),
            test_accuracy,
            acq_seconds: config.record_timings.then_some(elapsed),
            candidate_count: sel.candidate_count,
            selected: selected.clone(),
        });
        labelled.extend(selected);
        labelled.sort_unstable();
        pool.retain(|&i| !is_labelled[i]);
    }
    Ok(RunResult { config_hash: config.hash(), strategy, seed, records })
}

/// Every (strategy, seed) pair of the config on up to `threads` workers
/// (0 means the rayon default). Results come back in file order.
pub fn run_all(
    config: &ExperimentConfig,
    data: &PreparedData,
    strategies: &[Strategy],
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<RunResult>> {
    let pairs: Vec<(Strategy, u64)> = strategies.iter().flat_map(|&s| seeds.iter().map(move |&x| (s, x))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let mut results = pool.install(|| {
        pairs.par_iter().map(|&(s, seed)| run_experiment(config, data, s, seed)).collect::<Result<Vec<_>>>()
    })?;
    sort_results(&mut results);
    Ok(results)
}

/// results.csv and matrix.csv under `dir`. The matrix needs at least two
/// seeds; with one seed only results.csv is written.
pub fn write_outputs(results: &[RunResult], dir: &Path) -> Result<Option<ComparisonMatrix>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_results_csv(results, &dir.join("results.csv"))?;
    let seeds: std::collections::BTreeSet<u64> = results.iter().map(|r| r.seed).collect();
    if seeds.len() < 2 {
        return Ok(None);
    }
    let matrix = build_comparison_matrix(std::slice::from_ref(&results.to_vec()))?;
    write_matrix_csv(&matrix, &dir.join("matrix.csv"))?;
    Ok(Some(matrix))
}
