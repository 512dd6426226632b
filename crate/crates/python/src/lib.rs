//! Python bindings. Evidence is passed as a list with `None` for missing
//! features; datasets, densities, and forests are opaque handles.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::exptree as core;
use core::data::{FeatureSchema, PartialAssignment, Row};
use core::trees::MissingPolicy;

fn err(e: core::Error) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.kind()))
}

/// A categorical dataset; features are category indices, `None` is missing.
#[pyclass(name = "Dataset", module = "exptree")]
struct PyDataset {
    inner: core::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (cardinalities, rows, targets=None))]
    fn new(cardinalities: Vec<u32>, rows: Vec<Vec<Option<u32>>>, targets: Option<Vec<Option<f64>>>) -> PyResult<Self> {
        let schema = FeatureSchema::with_cardinalities(&cardinalities, "y").map_err(err)?;
        let targets = targets.unwrap_or_else(|| vec![None; rows.len()]);
        if targets.len() != rows.len() {
            return Err(PyValueError::new_err("rows and targets differ in length"));
        }
        let rows = rows
            .into_iter()
            .zip(targets)
            .map(|(x, target)| Row {
                assignment: PartialAssignment::new(x),
                target,
            })
            .collect();
        Ok(Self {
            inner: core::Dataset::new(schema, rows).map_err(err)?,
        })
    }

    /// Reads a categorical CSV with a schema JSON sidecar.
    #[staticmethod]
    fn from_csv(path: &str, schema_path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(schema_path).map_err(|e| err(e.into()))?;
        let schema = match serde_json::from_str::<FeatureSchema>(&text) {
            Ok(s) => s,
            Err(_) => core::BinningSpec::from_json(&text).and_then(|b| b.schema()).map_err(err)?,
        };
        Ok(Self {
            inner: core::data::load_dataset_csv(path, &schema).map_err(err)?,
        })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        core::data::save_csv(&self.inner, path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn cardinalities(&self) -> Vec<u32> {
        self.inner.schema().cardinalities()
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<Option<u32>>> {
        self.inner.rows().iter().map(|r| r.assignment.values().to_vec()).collect()
    }

    #[getter]
    fn targets(&self) -> Vec<Option<f64>> {
        self.inner.targets()
    }

    fn missing_fraction(&self) -> f64 {
        self.inner.missing_fraction()
    }

    /// Copy with every feature slot masked independently with probability `pi`.
    fn inject_mcar(&self, pi: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: core::inject_mcar(&self.inner, pi, seed).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Dataset(rows={}, features={})", self.inner.len(), self.inner.schema().len())
    }
}

/// Mixture of fully factorized categorical distributions.
#[pyclass(name = "MixtureDensity", module = "exptree")]
struct PyDensity {
    inner: core::MixtureDensity,
}

#[pymethods]
impl PyDensity {
    #[new]
    fn new(cardinalities: Vec<u32>, weights: Vec<f64>, tables: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        Ok(Self {
            inner: core::MixtureDensity::new(cardinalities, weights, tables).map_err(err)?,
        })
    }

    /// Fits by EM; returns the density and the log-likelihood trace.
    #[staticmethod]
    #[pyo3(signature = (data, components=4, iterations=50, seed=0, epsilon=1e-3, tolerance=1e-6))]
    fn fit(
        data: PyRef<'_, PyDataset>,
        components: usize,
        iterations: usize,
        seed: u64,
        epsilon: f64,
        tolerance: f64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let cfg = core::EmConfig {
            components,
            iterations,
            seed,
            epsilon,
            tolerance,
        };
        let fit = core::em_fit(&data.inner, &cfg).map_err(err)?;
        Ok((Self { inner: fit.density }, fit.log_likelihoods))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: core::MixtureDensity::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn tables(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.tables().to_vec()
    }

    /// Probability of the observed part of `x`.
    fn evidence(&self, x: Vec<Option<u32>>) -> PyResult<f64> {
        self.inner.evidence(&PartialAssignment::new(x)).map_err(err)
    }

    fn log_likelihood(&self, data: PyRef<'_, PyDataset>) -> PyResult<f64> {
        self.inner.log_likelihood(&data.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "MixtureDensity(components={}, features={})",
            self.inner.n_components(),
            self.inner.n_features()
        )
    }
}

/// Weighted sum of decision trees with category-set splits.
#[pyclass(name = "Forest", module = "exptree")]
struct PyForest {
    inner: core::ForestModel,
}

#[pymethods]
impl PyForest {
    /// Grows a single regression tree.
    #[staticmethod]
    #[pyo3(signature = (data, max_depth=5, min_leaf=5, lam=1.0))]
    fn induce(data: PyRef<'_, PyDataset>, max_depth: usize, min_leaf: usize, lam: f64) -> PyResult<Self> {
        let cfg = core::InduceConfig {
            max_depth,
            min_leaf,
            lambda: lam,
        };
        let tree = core::induce_tree(&data.inner, &cfg).map_err(err)?;
        Ok(Self {
            inner: core::ForestModel::single(tree),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: core::ForestModel::from_json(text).map_err(err)?,
        })
    }

    /// Parses a tree dump against the schema of `data`.
    #[staticmethod]
    fn from_dump(text: &str, data: PyRef<'_, PyDataset>) -> PyResult<Self> {
        let parsed = core::parse_dump(text, data.inner.schema(), None).map_err(err)?;
        Ok(Self { inner: parsed.forest })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees().len()
    }

    #[getter]
    fn n_leaves(&self) -> usize {
        self.inner.total_leaves()
    }

    #[getter]
    fn thetas(&self) -> Vec<Vec<f64>> {
        self.inner.trees().iter().map(|t| t.thetas()).collect()
    }

    /// Plain evaluation; missing features follow the default branch.
    fn evaluate(&self, x: Vec<Option<u32>>) -> PyResult<f64> {
        self.inner
            .evaluate(&PartialAssignment::new(x), MissingPolicy::DefaultBranch)
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Forest(trees={}, leaves={})", self.inner.trees().len(), self.inner.total_leaves())
    }
}

#[pyfunction]
fn expected_prediction(forest: PyRef<'_, PyForest>, density: PyRef<'_, PyDensity>, x: Vec<Option<u32>>) -> PyResult<f64> {
    core::expected_prediction_forest(&forest.inner, &density.inner, &PartialAssignment::new(x)).map_err(err)
}

#[pyfunction]
fn expected_squared_prediction(
    forest: PyRef<'_, PyForest>,
    density: PyRef<'_, PyDensity>,
    x: Vec<Option<u32>>,
) -> PyResult<f64> {
    core::expected_squared_prediction_forest(&forest.inner, &density.inner, &PartialAssignment::new(x)).map_err(err)
}

#[pyfunction]
fn expected_mse(forest: PyRef<'_, PyForest>, density: PyRef<'_, PyDensity>, data: PyRef<'_, PyDataset>) -> PyResult<f64> {
    core::expected_mse_forest(&forest.inner, &density.inner, &data.inner).map_err(err)
}

/// Refits leaf values to minimize expected squared error. `mode` is
/// `"per_tree"` or `"joint"`.
#[pyfunction]
#[pyo3(signature = (forest, density, data, lam=0.0, mode="per_tree"))]
fn refit(
    forest: PyRef<'_, PyForest>,
    density: PyRef<'_, PyDensity>,
    data: PyRef<'_, PyDataset>,
    lam: f64,
    mode: &str,
) -> PyResult<PyForest> {
    let inner = match mode {
        "per_tree" => {
            let n = forest.inner.trees().len();
            let densities = vec![density.inner.clone(); n];
            let datasets = vec![data.inner.clone(); n];
            core::refit_bagging(&forest.inner, &densities, &datasets, lam).map_err(err)?.0
        }
        "joint" => core::refit_forest_joint(&forest.inner, &density.inner, &data.inner, lam).map_err(err)?.0,
        other => return Err(PyValueError::new_err(format!("unknown refit mode `{other}`"))),
    };
    Ok(PyForest { inner })
}

/// Runs an experiment from TOML text; returns the summary rows as dicts.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = core::ExperimentConfig::from_toml_str(config).map_err(err)?;
    let report = py.detach(|| core::run_experiment(&cfg)).map_err(err)?;
    report
        .summary
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("method", s.method.name())?;
            d.set_item("pi", s.pi)?;
            d.set_item("mean", s.mean)?;
            d.set_item("std", s.std)?;
            d.set_item("trials", s.trials)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "exptree")]
fn exptree_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyDensity>()?;
    m.add_class::<PyForest>()?;
    m.add_function(wrap_pyfunction!(expected_prediction, m)?)?;
    m.add_function(wrap_pyfunction!(expected_squared_prediction, m)?)?;
    m.add_function(wrap_pyfunction!(expected_mse, m)?)?;
    m.add_function(wrap_pyfunction!(refit, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
