use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use exptree::data::{load_csv, load_dataset_csv, save_csv};
use exptree::dump::parse_dump;
use exptree::fitting::{refit_boost_tree, refit_tree_mse};
use exptree::harness::{emit_report, generate_synthetic, impute, median_impute_fit, rmse, SynthConfig};
use exptree::{
    discretize, em_fit, expected_prediction_forest, induce_tree, refit_forest_joint, run_experiment, BinningSpec,
    Dataset, EmConfig, Error, ExperimentConfig, FeatureSchema, ForestModel, InduceConfig, MissingPolicy,
    MixtureDensity, Result, SchemaHints,
};

#[derive(Parser)]
#[command(name = "exptree", version, about = "Expected predictions and expected-loss refits for trees under missing features")]
struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic train/test pair from a random mixture.
    GenSynth(GenSynthArgs),
    /// Bin a raw CSV into category indices and write the binning.
    Discretize(DiscretizeArgs),
    /// Fit a mixture density with EM.
    FitDensity(FitDensityArgs),
    /// Grow a regression tree on a categorical dataset.
    Induce(InduceArgs),
    /// Refit leaf values by minimizing expected squared error.
    Refit(RefitArgs),
    /// Predict on a dataset with missing values.
    Predict(PredictArgs),
    /// Run a missingness sweep described by a TOML config.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Categorical CSV (category indices, empty cell = missing).
    #[arg(long)]
    data: PathBuf,
    /// Schema sidecar: a feature schema or a binning spec (JSON).
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    features: usize,
    #[arg(long, default_value_t = 4)]
    cardinality: u32,
    #[arg(long, default_value_t = 3)]
    components: usize,
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
}

#[derive(Args)]
struct DiscretizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    target: String,
    /// Comma-separated columns to treat as categorical.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    #[arg(long, default_value_t = exptree::data::MAX_BINS)]
    max_bins: usize,
    /// Existing binning to apply instead of fitting a new one.
    #[arg(long)]
    binning: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the binning spec when one is fitted.
    #[arg(long)]
    binning_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitDensityArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 4)]
    components: usize,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InduceArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 5)]
    max_depth: usize,
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefitMode {
    /// Each tree on its own, as for bagging.
    PerTree,
    /// All leaves of the forest at once.
    Joint,
    /// Trees in order, each against the sum of the ones before it.
    Boost,
}

#[derive(Args)]
struct ModelArgs {
    /// Model JSON or tree dump JSON.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    density: PathBuf,
}

#[derive(Args)]
struct RefitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value_t = RefitMode::PerTree)]
    mode: RefitMode,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON report with per-leaf changes and losses.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictMethod {
    Expected,
    DefaultBranch,
    MedianImpute,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model JSON or tree dump JSON.
    #[arg(long)]
    model: PathBuf,
    /// Needed by `expected`.
    #[arg(long)]
    density: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PredictMethod::Expected)]
    method: PredictMethod,
    /// Training CSV used to estimate medians for `median-impute`.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Output CSV with one prediction per row; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the output directory from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

enum Sidecar {
    Schema(FeatureSchema),
    Binning(BinningSpec),
}

impl Sidecar {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        if let Ok(schema) = serde_json::from_str::<FeatureSchema>(&text) {
            return Ok(Sidecar::Schema(schema));
        }
        Ok(Sidecar::Binning(BinningSpec::from_json(&text)?))
    }

    fn schema(&self) -> Result<FeatureSchema> {
        match self {
            Sidecar::Schema(s) => Ok(s.clone()),
            Sidecar::Binning(b) => b.schema(),
        }
    }

    fn binning(&self) -> Option<&BinningSpec> {
        match self {
            Sidecar::Binning(b) => Some(b),
            Sidecar::Schema(_) => None,
        }
    }
}

fn load_data(args: &DataArgs) -> Result<(Dataset, Sidecar)> {
    let sidecar = Sidecar::load(&args.schema)?;
    let ds = load_dataset_csv(&args.data, &sidecar.schema()?)?;
    Ok((ds, sidecar))
}

/// Reads either a saved model or a tree dump.
fn load_model(path: &Path, sidecar: &Sidecar) -> Result<ForestModel> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(exptree::trees::MODEL_FORMAT) => ForestModel::from_json(&text),
        _ => {
            let parsed = parse_dump(&text, &sidecar.schema()?, sidecar.binning())?;
            if parsed.excluded_leaves > 0 {
                log::info!("{} leaves are reachable only through missing values", parsed.excluded_leaves);
            }
            Ok(parsed.forest)
        }
    }
}

fn load_density(path: &Path) -> Result<MixtureDensity> {
    MixtureDensity::from_json(&fs::read_to_string(path)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    Ok(fs::write(path, serde_json::to_string_pretty(value)?)?)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::GenSynth(a) => {
            let cfg = SynthConfig {
                n_features: a.features,
                cardinality: a.cardinality,
                components: a.components,
                n_train: a.n_train,
                n_test: a.n_test,
                noise: a.noise,
                ..SynthConfig::default()
            };
            let synth = generate_synthetic(&cfg, seed)?;
            fs::create_dir_all(&a.out_dir)?;
            save_csv(&synth.train, a.out_dir.join("train.csv"))?;
            save_csv(&synth.test, a.out_dir.join("test.csv"))?;
            write_json(&a.out_dir.join("schema.json"), synth.train.schema())?;
            fs::write(a.out_dir.join("density.json"), synth.density.to_json()?)?;
        }
        Command::Discretize(a) => {
            let hints = SchemaHints {
                target: a.target,
                categorical: a.categorical,
            };
            let raw = load_csv(&a.input, &hints)?;
            let ds = match &a.binning {
                Some(path) => BinningSpec::from_json(&fs::read_to_string(path)?)?.apply(&raw)?,
                None => {
                    let (ds, spec) = discretize(&raw, a.max_bins)?;
                    if let Some(out) = &a.binning_out {
                        fs::write(out, spec.to_json()?)?;
                    }
                    ds
                }
            };
            save_csv(&ds, &a.out)?;
        }
        Command::FitDensity(a) => {
            let (ds, _) = load_data(&a.data)?;
            let fit = em_fit(
                &ds,
                &EmConfig {
                    components: a.components,
                    iterations: a.iterations,
                    seed,
                    epsilon: a.epsilon,
                    tolerance: a.tolerance,
                },
            )?;
            log::info!(
                "EM ran {} iterations, final log-likelihood {}",
                fit.iterations,
                fit.log_likelihoods.last().copied().unwrap_or(f64::NAN)
            );
            fs::write(&a.out, fit.density.to_json()?)?;
        }
        Command::Induce(a) => {
            let (ds, _) = load_data(&a.data)?;
            let tree = induce_tree(
                &ds,
                &InduceConfig {
                    max_depth: a.max_depth,
                    min_leaf: a.min_leaf,
                    lambda: a.lambda,
                },
            )?;
            ForestModel::single(tree).save(&a.out)?;
        }
        Command::Refit(a) => {
            let (ds, sidecar) = load_data(&a.data)?;
            let forest = load_model(&a.model.model, &sidecar)?;
            let density = load_density(&a.model.density)?;
            let (refit, report) = match a.mode {
                RefitMode::PerTree => {
                    let mut trees = Vec::new();
                    let mut reports = Vec::new();
                    for t in forest.trees() {
                        let (t, r) = refit_tree_mse(t, &density, &ds, a.lambda)?;
                        trees.push(t);
                        reports.push(r);
                    }
                    (ForestModel::new(trees, forest.omegas().to_vec())?, json!({ "trees": reports }))
                }
                RefitMode::Joint => {
                    let (f, sol) = refit_forest_joint(&forest, &density, &ds, a.lambda)?;
                    (f, json!({ "lambda": sol.lambda, "fallback": sol.fallback }))
                }
                RefitMode::Boost => {
                    if a.lambda != 0.0 {
                        log::warn!("boost refit ignores --lambda");
                    }
                    let mut trees: Vec<exptree::TreeModel> = Vec::new();
                    let mut reports = Vec::new();
                    for t in forest.trees() {
                        let fixed = if trees.is_empty() {
                            None
                        } else {
                            Some(ForestModel::new(trees.clone(), vec![1.0; trees.len()])?)
                        };
                        let (t, r) = refit_boost_tree(fixed.as_ref(), t, &density, &ds)?;
                        trees.push(t);
                        reports.push(r);
                    }
                    let n = trees.len();
                    (ForestModel::new(trees, vec![1.0; n])?, json!({ "trees": reports }))
                }
            };
            refit.save(&a.out)?;
            if let Some(path) = &a.report {
                write_json(path, &report)?;
            }
        }
        Command::Predict(a) => {
            let (ds, sidecar) = load_data(&a.data)?;
            let forest = load_model(&a.model, &sidecar)?;
            let preds: Vec<f64> = match a.method {
                PredictMethod::Expected => {
                    let path = a
                        .density
                        .as_ref()
                        .ok_or_else(|| Error::InvalidArgument("--density is required for `expected`".into()))?;
                    let density = load_density(path)?;
                    ds.rows()
                        .iter()
                        .map(|r| expected_prediction_forest(&forest, &density, &r.assignment))
                        .collect::<Result<_>>()?
                }
                PredictMethod::DefaultBranch => ds
                    .rows()
                    .iter()
                    .map(|r| forest.evaluate(&r.assignment, MissingPolicy::DefaultBranch))
                    .collect::<Result<_>>()?,
                PredictMethod::MedianImpute => {
                    let path = a
                        .train
                        .as_ref()
                        .ok_or_else(|| Error::InvalidArgument("--train is required for `median-impute`".into()))?;
                    let fills = median_impute_fit(&load_dataset_csv(path, ds.schema())?)?;
                    ds.rows()
                        .iter()
                        .map(|r| forest.evaluate(&impute(&r.assignment, &fills), MissingPolicy::Error))
                        .collect::<Result<_>>()?
                }
            };
            let mut out = String::from("prediction\n");
            for p in &preds {
                out.push_str(&format!("{p}\n"));
            }
            match &a.out {
                Some(path) => fs::write(path, out)?,
                None => print!("{out}"),
            }
            let (labelled, _) = ds.with_targets();
            if labelled.len() == ds.len() && !ds.is_empty() {
                let targets: Vec<f64> = ds.rows().iter().filter_map(|r| r.target).collect();
                eprintln!("rmse {}", rmse(&preds, &targets)?);
            }
        }
        Command::Experiment(a) => {
            let mut cfg = ExperimentConfig::load(&a.config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let out_dir = a.out_dir.or(cfg.output.take());
            let report = run_experiment(&cfg)?;
            match out_dir {
                Some(dir) => {
                    emit_report(&report, dir)?;
                }
                None => print!("{}", serde_json::to_string_pretty(&report.summary)?),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
