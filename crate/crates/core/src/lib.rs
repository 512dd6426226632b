//! Expected predictions of decision trees and forests under missing
//! features, using a tractable mixture density over discrete inputs, plus
//! leaf refitting that minimizes the expected squared loss.
//!
//! ```
//! use exptree::{expected_prediction, MixtureDensity, PartialAssignment, TreeModel};
//!
//! let tree = TreeModel::stump(vec![2, 2], 0, &[(&[0], 1.0), (&[1], 3.0)]).unwrap();
//! let density = MixtureDensity::uniform(&[2, 2], 1);
//! let x = PartialAssignment::new(vec![None, Some(1)]);
//! let e = expected_prediction(&tree, &density, &x).unwrap();
//! assert!((e - 2.0).abs() < 1e-12);
//! ```

// `!(x >= 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod density;
pub mod dump;
pub mod error;
pub mod expectation;
pub mod fitting;
pub mod harness;
pub mod linalg;
pub mod trees;

pub use data::{
    discretize, inject_mcar, BinningSpec, Dataset, Feature, FeatureSchema, PartialAssignment, RawTable, Row,
    SchemaHints,
};
pub use density::{em_fit, ConstraintSet, EmConfig, EmFit, MixtureDensity};
pub use dump::{parse_dump, ParsedDump};
pub use error::{Error, Result};
pub use expectation::{
    expected_cross_prediction, expected_prediction, expected_prediction_forest, expected_squared_prediction,
    expected_squared_prediction_forest, leaf_posterior, Evidence, LeafPosterior,
};
pub use fitting::{
    build_forest_system, expected_mse, expected_mse_forest, refit_bagging, refit_boost_tree, refit_forest_joint,
    refit_tree_mse, solve_forest_system, ForestSolution, ForestSystem, RefitReport,
};
pub use harness::{run_experiment, ExperimentConfig, Method, RunReport, Scenario};
pub use trees::{induce_tree, ForestModel, InduceConfig, MissingPolicy, Node, TreeModel};
