//! Experiment runner comparing missing-value treatments across MCAR
//! missingness levels.
//!
//! Two scenarios are supported. In `deployment_only` the density and the
//! model are fit once on the clean training set and only test features are
//! masked. In `learn_and_deploy` each trial masks the training set as well,
//! and the density, model, and baselines are re-fit on the masked copy.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    discretize, inject_mcar, load_csv, BinningSpec, Dataset, FeatureSchema, PartialAssignment, Row,
    SchemaHints,
};
use crate::density::{em_fit, EmConfig, MixtureDensity};
use crate::dump::parse_dump;
use crate::error::{Error, Result};
use crate::expectation::expected_prediction_forest;
use crate::fitting::refit_bagging;
use crate::trees::{induce_tree, Branch, ForestModel, InduceConfig, MissingPolicy, Node, TreeModel};

// ---------------------------------------------------------------------------
// Baselines and metrics
// ---------------------------------------------------------------------------

/// Per-feature lower median of observed category indices.
pub fn median_impute_fit(train: &Dataset) -> Result<Vec<u32>> {
    (0..train.schema().len())
        .map(|f| {
            let mut vals: Vec<u32> = train.rows().iter().filter_map(|r| r.assignment.get(f)).collect();
            if vals.is_empty() {
                return Err(Error::ColumnFullyMissing(train.schema().features()[f].name.clone()));
            }
            vals.sort_unstable();
            Ok(vals[(vals.len() - 1) / 2])
        })
        .collect()
}

/// Fills missing slots with `fills`; observed slots are left alone.
pub fn impute(x: &PartialAssignment, fills: &[u32]) -> PartialAssignment {
    PartialAssignment(
        x.values()
            .iter()
            .zip(fills)
            .map(|(v, &fill)| Some(v.unwrap_or(fill)))
            .collect(),
    )
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("rmse of zero predictions".into()));
    }
    let sse: f64 = predictions.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_features: usize,
    pub cardinality: u32,
    pub components: usize,
    /// Probability mass each component puts on its preferred category.
    pub peak: f64,
    /// Depth of the random tree that generates the targets.
    pub planted_depth: usize,
    /// Leaf values of the planted tree are uniform on `[-scale, scale]`.
    pub scale: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_features: 8,
            cardinality: 4,
            components: 3,
            peak: 0.8,
            planted_depth: 4,
            scale: 2.0,
            n_train: 1000,
            n_test: 500,
            noise: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub density: MixtureDensity,
    /// Tree whose output, plus Gaussian noise, is the target.
    pub planted: TreeModel,
    pub train: Dataset,
    pub test: Dataset,
}

/// Samples features from a random well-separated mixture and targets from
/// a random planted tree plus Gaussian noise.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SynthData> {
    if cfg.n_features == 0 || cfg.cardinality < 2 || cfg.components == 0 {
        return Err(Error::Config("synthetic data needs features, cardinality >= 2 and components".into()));
    }
    if !(0.0..=1.0).contains(&cfg.peak) {
        return Err(Error::Config("peak must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let card = cfg.cardinality;
    let cards = vec![card; cfg.n_features];
    let rest = (1.0 - cfg.peak) / (card - 1) as f64;
    let tables: Vec<Vec<Vec<f64>>> = (0..cfg.components)
        .map(|_| {
            (0..cfg.n_features)
                .map(|_| {
                    let preferred = rng.random_range(0..card);
                    let row: Vec<f64> = (0..card).map(|v| if v == preferred { cfg.peak } else { rest }).collect();
                    let s: f64 = row.iter().sum();
                    row.into_iter().map(|p| p / s).collect()
                })
                .collect()
        })
        .collect();
    let raw: Vec<f64> = (0..cfg.components).map(|_| 0.5 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let density = MixtureDensity::new(cards.clone(), weights, tables)?;

    let mut nodes = Vec::new();
    plant(&mut rng, &cards, cfg.planted_depth, cfg.scale, &mut nodes);
    let planted = TreeModel::new(cards.clone(), nodes)?;

    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let schema = FeatureSchema::with_cardinalities(&cards, "y")?;
    let mut draw = |n: usize| -> Result<Dataset> {
        let rows = (0..n)
            .map(|_| {
                let x = PartialAssignment::complete(&density.sample(&mut rng));
                let signal = planted.evaluate(&x, MissingPolicy::Error)?;
                Ok(Row {
                    assignment: x,
                    target: Some(signal + noise.sample(&mut rng)),
                })
            })
            .collect::<Result<Vec<Row>>>()?;
        Dataset::new(schema.clone(), rows)
    };
    let train = draw(cfg.n_train)?;
    let test = draw(cfg.n_test)?;
    Ok(SynthData {
        density,
        planted,
        train,
        test,
    })
}

/// Grows a full random tree with binary category splits.
fn plant(rng: &mut ChaCha8Rng, cards: &[u32], depth: usize, scale: f64, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if depth == 0 {
        nodes.push(Node::Leaf {
            theta: scale * (2.0 * rng.random::<f64>() - 1.0),
        });
        return id;
    }
    nodes.push(Node::Leaf { theta: 0.0 });
    let feature = rng.random_range(0..cards.len());
    let mut cats: Vec<u32> = (0..cards[feature]).collect();
    cats.shuffle(rng);
    let cut = rng.random_range(1..cats.len());
    let (mut left, mut right) = (cats[..cut].to_vec(), cats[cut..].to_vec());
    left.sort_unstable();
    right.sort_unstable();
    let c0 = plant(rng, cards, depth - 1, scale, nodes);
    let c1 = plant(rng, cards, depth - 1, scale, nodes);
    nodes[id] = Node::Split {
        feature,
        branches: vec![
            Branch { categories: left, child: c0 },
            Branch { categories: right, child: c1 },
        ],
        default_branch: None,
    };
    id
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DefaultBranch,
    MedianImpute,
    ExpectedPrediction,
    ExplossExpectedPrediction,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DefaultBranch => "default_branch",
            Method::MedianImpute => "median_impute",
            Method::ExpectedPrediction => "expected_prediction",
            Method::ExplossExpectedPrediction => "exploss_expected_prediction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    DeploymentOnly,
    LearnAndDeploy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        #[serde(flatten)]
        config: SynthConfig,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        target: String,
        #[serde(default)]
        categorical: Vec<String>,
        #[serde(default = "default_max_bins")]
        max_bins: usize,
    },
}

fn default_max_bins() -> usize {
    crate::data::MAX_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    Induce {
        #[serde(default = "default_depth")]
        max_depth: usize,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
        /// Trees are bagged on bootstrap samples when more than one.
        #[serde(default = "default_trees")]
        n_trees: usize,
    },
    Dump {
        path: Option<PathBuf>,
        /// Binning sidecar used to map dump thresholds.
        #[serde(default)]
        binning: Option<PathBuf>,
    },
}

fn default_depth() -> usize {
    5
}
fn default_min_leaf() -> usize {
    5
}
fn default_trees() -> usize {
    1
}

impl Default for ModelSource {
    fn default() -> Self {
        ModelSource::Induce {
            max_depth: default_depth(),
            min_leaf: default_min_leaf(),
            n_trees: default_trees(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensitySettings {
    /// Fixed component count; when absent `k_grid` is swept by held-out
    /// log-likelihood.
    pub components: Option<usize>,
    pub k_grid: Vec<usize>,
    pub iterations: usize,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for DensitySettings {
    fn default() -> Self {
        Self {
            components: None,
            k_grid: vec![1, 2, 4, 8, 16],
            iterations: 50,
            epsilon: 1e-3,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
    #[serde(default = "default_pis")]
    pub pis: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub density: DensitySettings,
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_scenario() -> Scenario {
    Scenario::DeploymentOnly
}
fn default_pis() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}
fn default_trials() -> usize {
    10
}
fn default_methods() -> Vec<Method> {
    vec![
        Method::DefaultBranch,
        Method::MedianImpute,
        Method::ExpectedPrediction,
        Method::ExplossExpectedPrediction,
    ]
}
fn default_lambda() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn synthetic(scenario: Scenario) -> Self {
        Self {
            data: DataSource::Synthetic {
                config: SynthConfig::default(),
            },
            scenario,
            pis: default_pis(),
            trials: default_trials(),
            seed: 0,
            density: DensitySettings::default(),
            model: ModelSource::default(),
            methods: default_methods(),
            lambda: default_lambda(),
            output: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if let Some(p) = self.pis.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("missingness level {p} outside [0, 1]")));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if self.density.components == Some(0) || (self.density.components.is_none() && self.density.k_grid.is_empty()) {
            return Err(Error::Config("density needs a component count or a non-empty k_grid".into()));
        }
        match &self.model {
            ModelSource::Dump { path: None, .. } => {
                Err(Error::Config("model source `dump` requires a dump path".into()))
            }
            ModelSource::Induce { n_trees: 0, .. } => Err(Error::Config("n_trees must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub method: Method,
    pub pi: f64,
    pub trial: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub pi: f64,
    pub mean: f64,
    /// Sample standard deviation across trials (0 for a single trial).
    pub std: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub scenario: Scenario,
    pub model_hash: String,
    pub density_hash: String,
    pub failed_trials: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub trials: Vec<TrialResult>,
    pub summary: Vec<SummaryRow>,
    pub metadata: ReportMetadata,
}

impl RunReport {
    pub fn summary_for(&self, method: Method, pi: f64) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == method && s.pi == pi)
    }
}

fn summarize(trials: &[TrialResult], methods: &[Method], pis: &[f64]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &method in methods {
        for &pi in pis {
            let vals: Vec<f64> = trials
                .iter()
                .filter(|t| t.method == method && t.pi == pi)
                .map(|t| t.rmse)
                .collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            out.push(SummaryRow {
                method,
                pi,
                mean,
                std,
                trials: vals.len(),
            });
        }
    }
    out
}

/// Writes `trials.csv`, `summary.csv`, and `metadata.json` into `dir`.
pub fn emit_report(r: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let trials_path = dir.join("trials.csv");
    let mut w = csv::Writer::from_path(&trials_path)?;
    w.write_record(["method", "pi", "trial", "rmse"])?;
    for t in &r.trials {
        w.write_record([
            t.method.name().to_string(),
            t.pi.to_string(),
            t.trial.to_string(),
            t.rmse.to_string(),
        ])?;
    }
    w.flush()?;

    let summary_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record(["method", "pi", "mean", "std", "trials"])?;
    for s in &r.summary {
        w.write_record([
            s.method.name().to_string(),
            s.pi.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.trials.to_string(),
        ])?;
    }
    w.flush()?;

    let meta_path = dir.join("metadata.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&r.metadata)?)?;
    Ok(vec![trials_path, summary_path, meta_path])
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

/// Derives an independent seed for `(stream, level, trial)` from `base`.
pub fn derive_seed(base: u64, stream: u64, level: usize, trial: usize) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (level as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (trial as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_TEST_MASK: u64 = 1;
const STREAM_TRAIN_MASK: u64 = 2;
const STREAM_DENSITY: u64 = 3;
const STREAM_BOOTSTRAP: u64 = 4;
const STREAM_DATA: u64 = 5;

/// Fits a density with a fixed K, or picks K from `k_grid` by held-out
/// log-likelihood on a seeded 80/20 split and refits on all rows.
pub fn fit_density(ds: &Dataset, settings: &DensitySettings, seed: u64) -> Result<MixtureDensity> {
    let em = |k: usize, data: &Dataset| {
        em_fit(
            data,
            &EmConfig {
                components: k,
                iterations: settings.iterations,
                seed,
                epsilon: settings.epsilon,
                tolerance: settings.tolerance,
            },
        )
    };
    let k = match settings.components {
        Some(k) => k,
        None => select_components(ds, settings, seed)?,
    };
    Ok(em(k, ds)?.density)
}

fn select_components(ds: &Dataset, settings: &DensitySettings, seed: u64) -> Result<usize> {
    if settings.k_grid.len() == 1 || ds.len() < 5 {
        return Ok(settings.k_grid[0]);
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED));
    let cut = ds.len() * 4 / 5;
    let (fit_part, held_out) = (ds.subset(&idx[..cut]), ds.subset(&idx[cut..]));
    let mut best = (f64::NEG_INFINITY, settings.k_grid[0]);
    for &k in &settings.k_grid {
        let d = em_fit(
            &fit_part,
            &EmConfig {
                components: k,
                iterations: settings.iterations,
                seed,
                epsilon: settings.epsilon,
                tolerance: settings.tolerance,
            },
        )?
        .density;
        let ll = d.log_likelihood(&held_out)?;
        if ll > best.0 {
            best = (ll, k);
        }
    }
    log::debug!("selected K = {} (held-out log-likelihood {})", best.1, best.0);
    Ok(best.1)
}

struct Model {
    forest: ForestModel,
    /// Training rows each tree was induced on, for per-tree refits.
    tree_data: Vec<Dataset>,
}

fn obtain_model(cfg: &ExperimentConfig, train: &Dataset, binning: Option<&BinningSpec>, seed: u64) -> Result<Model> {
    match &cfg.model {
        ModelSource::Induce {
            max_depth,
            min_leaf,
            n_trees,
        } => {
            let ic = InduceConfig {
                max_depth: *max_depth,
                min_leaf: *min_leaf,
                lambda: cfg.lambda,
            };
            let labelled = train.labelled();
            if *n_trees == 1 {
                let tree = induce_tree(&labelled, &ic)?;
                return Ok(Model {
                    forest: ForestModel::single(tree),
                    tree_data: vec![labelled],
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut trees = Vec::with_capacity(*n_trees);
            let mut tree_data = Vec::with_capacity(*n_trees);
            for _ in 0..*n_trees {
                let idx: Vec<usize> = (0..labelled.len()).map(|_| rng.random_range(0..labelled.len())).collect();
                let sample = labelled.subset(&idx);
                trees.push(induce_tree(&sample, &ic)?);
                tree_data.push(sample);
            }
            let w = 1.0 / *n_trees as f64;
            Ok(Model {
                forest: ForestModel::new(trees, vec![w; *n_trees])?,
                tree_data,
            })
        }
        ModelSource::Dump { path, .. } => {
            let path = path.as_ref().ok_or_else(|| Error::Config("dump path missing".into()))?;
            let parsed = parse_dump(&fs::read_to_string(path)?, train.schema(), binning)?;
            let n = parsed.forest.trees().len();
            let labelled = train.labelled();
            Ok(Model {
                forest: parsed.forest,
                tree_data: vec![labelled; n],
            })
        }
    }
}

struct Prepared {
    train: Dataset,
    test: Dataset,
    binning: Option<BinningSpec>,
}

fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared> {
    match &cfg.data {
        DataSource::Synthetic { config } => {
            let synth = generate_synthetic(config, derive_seed(cfg.seed, STREAM_DATA, 0, 0))?;
            Ok(Prepared {
                train: synth.train,
                test: synth.test,
                binning: None,
            })
        }
        DataSource::Csv {
            train,
            test,
            target,
            categorical,
            max_bins,
        } => {
            let hints = SchemaHints {
                target: target.clone(),
                categorical: categorical.clone(),
            };
            let (train_ds, spec) = discretize(&load_csv(train, &hints)?, *max_bins)?;
            let spec = match &cfg.model {
                ModelSource::Dump {
                    binning: Some(path), ..
                } => BinningSpec::from_json(&fs::read_to_string(path)?)?,
                _ => spec,
            };
            let train_ds = if spec.schema()? == *train_ds.schema() {
                train_ds
            } else {
                spec.apply(&load_csv(train, &hints)?)?
            };
            let test_ds = spec.apply(&load_csv(test, &hints)?)?;
            Ok(Prepared {
                train: train_ds,
                test: test_ds.labelled(),
                binning: Some(spec),
            })
        }
    }
}

fn hash_hex(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

struct Fitted {
    density: MixtureDensity,
    model: Model,
    fills: Vec<u32>,
    refit: Option<ForestModel>,
}

fn fit_all(cfg: &ExperimentConfig, train: &Dataset, binning: Option<&BinningSpec>, level: usize, trial: usize) -> Result<Fitted> {
    let density = fit_density(train, &cfg.density, derive_seed(cfg.seed, STREAM_DENSITY, level, trial))?;
    let model = obtain_model(cfg, train, binning, derive_seed(cfg.seed, STREAM_BOOTSTRAP, level, trial))?;
    let fills = median_impute_fit(train)?;
    let refit = if cfg.methods.contains(&Method::ExplossExpectedPrediction) {
        let n = model.forest.trees().len();
        let densities = vec![density.clone(); n];
        Some(refit_bagging(&model.forest, &densities, &model.tree_data, cfg.lambda)?.0)
    } else {
        None
    };
    Ok(Fitted {
        density,
        model,
        fills,
        refit,
    })
}

fn predict(method: Method, fitted: &Fitted, x: &PartialAssignment) -> Result<f64> {
    let forest = &fitted.model.forest;
    match method {
        Method::DefaultBranch => forest.evaluate(x, MissingPolicy::DefaultBranch),
        Method::MedianImpute => forest.evaluate(&impute(x, &fitted.fills), MissingPolicy::Error),
        Method::ExpectedPrediction => expected_prediction_forest(forest, &fitted.density, x),
        Method::ExplossExpectedPrediction => {
            let refit = fitted.refit.as_ref().expect("refit prepared for this method");
            expected_prediction_forest(refit, &fitted.density, x)
        }
    }
}

fn run_trial(
    cfg: &ExperimentConfig,
    data: &Prepared,
    shared: Option<&Fitted>,
    level: usize,
    trial: usize,
    hashes: &mut (Vec<String>, Vec<String>),
) -> Result<Vec<TrialResult>> {
    let pi = cfg.pis[level];
    let test = inject_mcar(&data.test, pi, derive_seed(cfg.seed, STREAM_TEST_MASK, level, trial))?;
    let owned;
    let fitted = match shared {
        Some(f) => f,
        None => {
            let train = inject_mcar(&data.train, pi, derive_seed(cfg.seed, STREAM_TRAIN_MASK, level, trial))?;
            owned = fit_all(cfg, &train, data.binning.as_ref(), level, trial)?;
            hashes.0.push(owned.model.forest.to_json()?);
            hashes.1.push(owned.density.to_json()?);
            &owned
        }
    };
    let targets: Vec<f64> = test.rows().iter().map(|r| r.target.expect("test rows are labelled")).collect();
    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let preds = test
            .rows()
            .iter()
            .map(|r| predict(method, fitted, &r.assignment))
            .collect::<Result<Vec<f64>>>()?;
        out.push(TrialResult {
            method,
            pi,
            trial,
            rmse: rmse(&preds, &targets)?,
        });
    }
    Ok(out)
}

/// Runs every (level, trial) pair and aggregates RMSE per method and level.
/// Results are ordered by (method, level, trial) and depend only on the
/// config, including its seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let data = Prepared {
        test: data.test.labelled(),
        ..data
    };
    if data.test.is_empty() {
        return Err(Error::InvalidArgument("test set has no labelled rows".into()));
    }
    let shared = match cfg.scenario {
        Scenario::DeploymentOnly => Some(fit_all(cfg, &data.train, data.binning.as_ref(), 0, 0)?),
        Scenario::LearnAndDeploy => None,
    };
    let mut hashes = (Vec::new(), Vec::new());
    if let Some(f) = &shared {
        hashes.0.push(f.model.forest.to_json()?);
        hashes.1.push(f.density.to_json()?);
    }
    let mut results = Vec::new();
    let mut failed = Vec::new();
    for level in 0..cfg.pis.len() {
        for trial in 0..cfg.trials {
            match run_trial(cfg, &data, shared.as_ref(), level, trial, &mut hashes) {
                Ok(r) => results.extend(r),
                Err(e) => {
                    log::warn!("pi={} trial={trial} aborted: {e}", cfg.pis[level]);
                    failed.push(format!("pi={} trial={trial}: {e}", cfg.pis[level]));
                }
            }
        }
    }
    let order = |m: Method| cfg.methods.iter().position(|&x| x == m).unwrap_or(usize::MAX);
    results.sort_by(|a, b| {
        order(a.method)
            .cmp(&order(b.method))
            .then(a.pi.total_cmp(&b.pi))
            .then(a.trial.cmp(&b.trial))
    });
    let summary = summarize(&results, &cfg.methods, &cfg.pis);
    let report = RunReport {
        trials: results,
        summary,
        metadata: ReportMetadata {
            seed: cfg.seed,
            scenario: cfg.scenario,
            model_hash: hash_hex(&hashes.0),
            density_hash: hash_hex(&hashes.1),
            failed_trials: failed,
        },
    };
    if let Some(dir) = &cfg.output {
        emit_report(&report, dir)?;
    }
    Ok(report)
}
