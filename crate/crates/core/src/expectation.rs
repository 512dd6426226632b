//! Expected predictions of trees and forests under a [`MixtureDensity`].
//!
//! For a tree `f` with leaves `l`, evidence `xo`, and path constraints
//! `path(l)`:
//!
//! ```text
//! E[f | xo]   = sum_l theta_l   * p(path(l), xo) / p(xo)
//! E[f^2 | xo] = sum_l theta_l^2 * p(path(l), xo) / p(xo)
//! E[f g | xo] = sum_l sum_j theta_l theta_j * p(path(l), path(j), xo) / p(xo)
//! ```
//!
//! The squared form is a single sum because distinct leaves of one tree
//! have disjoint paths. All sums run in leaf-id order.

use crate::data::PartialAssignment;
use crate::density::{ConstraintSet, MixtureDensity};
use crate::error::{Error, Result};
use crate::trees::{ForestModel, TreeModel};

/// Evidence constraints and their probability for one input.
#[derive(Debug, Clone)]
pub struct Evidence {
    pub constraints: ConstraintSet,
    pub probability: f64,
}

impl Evidence {
    pub fn new(d: &MixtureDensity, xo: &PartialAssignment) -> Result<Self> {
        let constraints = ConstraintSet::from_assignment(d.cardinalities(), xo)?;
        let probability = d.marginal(&constraints)?;
        if probability <= 0.0 {
            return Err(Error::ZeroProbabilityEvidence);
        }
        Ok(Self {
            constraints,
            probability,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafPosterior {
    /// `p(path(l), xo) / p(xo)` in leaf-id order; 0 for excluded leaves.
    pub weights: Vec<f64>,
    /// Evidence mass not covered by the non-excluded leaves. Exactly 0 for
    /// trees without excluded leaves.
    pub excluded_mass: f64,
}

impl LeafPosterior {
    /// No included leaf is compatible with the evidence.
    pub fn is_degenerate(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }
}

fn check_schema(t: &TreeModel, d: &MixtureDensity) -> Result<()> {
    if t.cardinalities() != d.cardinalities() {
        return Err(Error::DimensionMismatch {
            expected: d.n_features(),
            got: t.cardinalities().len(),
        });
    }
    Ok(())
}

pub fn leaf_posterior(t: &TreeModel, d: &MixtureDensity, xo: &PartialAssignment) -> Result<LeafPosterior> {
    check_schema(t, d)?;
    posterior_given(t, d, &Evidence::new(d, xo)?)
}

/// Like [`leaf_posterior`], but rescales the weights to sum to one when
/// excluded leaves hid part of the evidence mass. `excluded_mass` keeps the
/// pre-rescaling value.
pub fn leaf_posterior_renormalized(
    t: &TreeModel,
    d: &MixtureDensity,
    xo: &PartialAssignment,
) -> Result<LeafPosterior> {
    let mut post = leaf_posterior(t, d, xo)?;
    let total: f64 = post.weights.iter().sum();
    if post.excluded_mass > 0.0 && total > 0.0 {
        post.weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(post)
}

pub(crate) fn posterior_given(t: &TreeModel, d: &MixtureDensity, ev: &Evidence) -> Result<LeafPosterior> {
    let mut weights = Vec::with_capacity(t.n_leaves());
    for leaf in 0..t.n_leaves() {
        if t.is_excluded(leaf) {
            weights.push(0.0);
            continue;
        }
        let joint = d.marginal(&t.leaf_constraints(leaf).intersect(&ev.constraints)?)?;
        weights.push(joint / ev.probability);
    }
    let excluded_mass = if t.excluded_count() == 0 {
        0.0
    } else {
        (1.0 - weights.iter().sum::<f64>()).max(0.0)
    };
    Ok(LeafPosterior {
        weights,
        excluded_mass,
    })
}

fn weighted(thetas: impl Iterator<Item = f64>, weights: &[f64]) -> f64 {
    thetas.zip(weights).map(|(theta, w)| theta * w).sum()
}

pub fn expected_prediction(t: &TreeModel, d: &MixtureDensity, xo: &PartialAssignment) -> Result<f64> {
    let post = leaf_posterior(t, d, xo)?;
    Ok(weighted(t.thetas().into_iter(), &post.weights))
}

pub fn expected_squared_prediction(t: &TreeModel, d: &MixtureDensity, xo: &PartialAssignment) -> Result<f64> {
    let post = leaf_posterior(t, d, xo)?;
    Ok(weighted(t.thetas().into_iter().map(|th| th * th), &post.weights))
}

/// `E[f1 * f2 | xo]` for two trees over the same features.
pub fn expected_cross_prediction(
    t1: &TreeModel,
    t2: &TreeModel,
    d: &MixtureDensity,
    xo: &PartialAssignment,
) -> Result<f64> {
    check_schema(t1, d)?;
    check_schema(t2, d)?;
    cross_given(t1, t2, d, &Evidence::new(d, xo)?)
}

/// Leaf-pair joint weights `p(path(l), path(j), xo) / p(xo)`, row-major
/// over `(leaf of t1, leaf of t2)`.
pub(crate) fn pair_weights(t1: &TreeModel, t2: &TreeModel, d: &MixtureDensity, ev: &Evidence) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(t1.n_leaves() * t2.n_leaves());
    for l in 0..t1.n_leaves() {
        if t1.is_excluded(l) {
            out.extend(std::iter::repeat_n(0.0, t2.n_leaves()));
            continue;
        }
        let cl = t1.leaf_constraints(l).intersect(&ev.constraints)?;
        for j in 0..t2.n_leaves() {
            if t2.is_excluded(j) {
                out.push(0.0);
                continue;
            }
            let joint = d.marginal(&cl.intersect(t2.leaf_constraints(j))?)?;
            out.push(joint / ev.probability);
        }
    }
    Ok(out)
}

pub(crate) fn cross_given(t1: &TreeModel, t2: &TreeModel, d: &MixtureDensity, ev: &Evidence) -> Result<f64> {
    let w = pair_weights(t1, t2, d, ev)?;
    let th1 = t1.thetas();
    let th2 = t2.thetas();
    let n2 = th2.len();
    let mut total = 0.0;
    for (l, a) in th1.iter().enumerate() {
        for (j, b) in th2.iter().enumerate() {
            total += a * b * w[l * n2 + j];
        }
    }
    Ok(total)
}

pub fn expected_prediction_forest(f: &ForestModel, d: &MixtureDensity, xo: &PartialAssignment) -> Result<f64> {
    let mut total = 0.0;
    for (t, w) in f.trees().iter().zip(f.omegas()) {
        total += w * expected_prediction(t, d, xo)?;
    }
    Ok(total)
}

/// `E[F^2 | xo]` for `F = sum_r w_r f_r`, via pairwise tree products.
pub fn expected_squared_prediction_forest(
    f: &ForestModel,
    d: &MixtureDensity,
    xo: &PartialAssignment,
) -> Result<f64> {
    for t in f.trees() {
        check_schema(t, d)?;
    }
    let ev = Evidence::new(d, xo)?;
    let mut total = 0.0;
    for (r, (tr, wr)) in f.trees().iter().zip(f.omegas()).enumerate() {
        for (s, (ts, ws)) in f.trees().iter().zip(f.omegas()).enumerate() {
            let e = if r == s {
                let post = posterior_given(tr, d, &ev)?;
                weighted(tr.thetas().into_iter().map(|th| th * th), &post.weights)
            } else {
                cross_given(tr, ts, d, &ev)?
            };
            total += wr * ws * e;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dump::parse_dump;
    use crate::data::FeatureSchema;
    use crate::trees::MissingPolicy;

    fn split_tree() -> TreeModel {
        TreeModel::stump(vec![2], 0, &[(&[0], 1.0), (&[1], 3.0)]).unwrap()
    }

    fn skewed() -> MixtureDensity {
        MixtureDensity::new(vec![2], vec![1.0], vec![vec![vec![0.75, 0.25]]]).unwrap()
    }

    fn x(v: &[Option<u32>]) -> PartialAssignment {
        PartialAssignment(v.to_vec())
    }

    #[test]
    fn point_evidence_selects_the_routed_leaf() {
        let t = split_tree();
        let post = leaf_posterior(&t, &skewed(), &x(&[Some(1)])).unwrap();
        assert_eq!(post.weights, vec![0.0, 1.0]);
        assert_eq!(post.excluded_mass, 0.0);
        assert_eq!(expected_prediction(&t, &skewed(), &x(&[Some(1)])).unwrap(), 3.0);
    }

    #[test]
    fn empty_evidence_uses_the_prior() {
        let t = split_tree();
        let post = leaf_posterior(&t, &skewed(), &x(&[None])).unwrap();
        assert_eq!(post.weights, vec![0.75, 0.25]);
        // brute force: 0.75 * f(0) + 0.25 * f(1)
        let e = expected_prediction(&t, &skewed(), &x(&[None])).unwrap();
        assert!((e - 1.5).abs() < 1e-15);
        let e2 = expected_squared_prediction(&t, &skewed(), &x(&[None])).unwrap();
        assert!((e2 - 3.0).abs() < 1e-15);
        assert!(e2 >= e * e);
    }

    #[test]
    fn constant_tree() {
        let t = TreeModel::single_leaf(vec![2], 5.0);
        assert_eq!(expected_prediction(&t, &skewed(), &x(&[None])).unwrap(), 5.0);
    }

    #[test]
    fn cross_prediction_cases() {
        let d = MixtureDensity::uniform(&[2, 2], 1);
        let a = TreeModel::stump(vec![2, 2], 0, &[(&[0], 1.0), (&[1], 3.0)]).unwrap();
        let b = TreeModel::stump(vec![2, 2], 1, &[(&[0], 2.0), (&[1], 4.0)]).unwrap();
        let xo = x(&[None, None]);
        let ab = expected_cross_prediction(&a, &b, &d, &xo).unwrap();
        assert!((ab - 6.0).abs() < 1e-15);
        let aa = expected_cross_prediction(&a, &a, &d, &xo).unwrap();
        assert!((aa - expected_squared_prediction(&a, &d, &xo).unwrap()).abs() < 1e-15);
        let c = TreeModel::single_leaf(vec![2, 2], 2.0);
        let cb = expected_cross_prediction(&c, &b, &d, &xo).unwrap();
        assert!((cb - 2.0 * expected_prediction(&b, &d, &xo).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn forest_combination() {
        let d = MixtureDensity::uniform(&[2, 2], 1);
        let a = TreeModel::stump(vec![2, 2], 0, &[(&[0], 1.0), (&[1], 3.0)]).unwrap();
        let b = TreeModel::stump(vec![2, 2], 1, &[(&[0], 2.0), (&[1], 4.0)]).unwrap();
        let xo = x(&[None, None]);
        let f = ForestModel::new(vec![a.clone(), b.clone()], vec![1.0, 1.0]).unwrap();
        assert!((expected_prediction_forest(&f, &d, &xo).unwrap() - 5.0).abs() < 1e-15);
        let g = ForestModel::new(vec![a.clone(), b], vec![2.0, 0.0]).unwrap();
        assert_eq!(
            expected_prediction_forest(&g, &d, &xo).unwrap(),
            2.0 * expected_prediction(&a, &d, &xo).unwrap()
        );
        // E[(a+b)^2] = E[a^2] + 2 E[a]E[b] + E[b^2] = 5 + 12 + 10
        let sq = expected_squared_prediction_forest(&f, &d, &xo).unwrap();
        assert!((sq - 27.0).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_evidence_is_an_error() {
        let d = MixtureDensity::new(vec![2], vec![1.0], vec![vec![vec![1.0, 0.0]]]).unwrap();
        assert!(matches!(
            expected_prediction(&split_tree(), &d, &x(&[Some(1)])),
            Err(Error::ZeroProbabilityEvidence)
        ));
    }

    #[test]
    fn excluded_leaves_are_skipped() {
        let schema = FeatureSchema::with_cardinalities(&[4], "y").unwrap();
        let text = r#"{"format":"exptree-dump/1","trees":[{"root":{
            "nodeid":0,"split":"x0","threshold":2,"yes":1,"no":2,"missing":1,
            "children":[
              {"nodeid":1,"split":"x0","threshold":3,"yes":3,"no":4,"missing":4,
               "children":[{"nodeid":3,"leaf":0.5},{"nodeid":4,"leaf":100.0}]},
              {"nodeid":2,"leaf":2.0}]}}]}"#;
        let t = parse_dump(text, &schema, None).unwrap().forest.trees()[0].clone();
        let d = MixtureDensity::uniform(&[4], 1);
        let post = leaf_posterior(&t, &d, &x(&[None])).unwrap();
        assert_eq!(post.weights[1], 0.0);
        assert!(post.excluded_mass.abs() < 1e-12);
        assert!((post.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // the default-branch route reaches the excluded leaf; the expectation does not
        assert_eq!(t.evaluate(&x(&[None]), MissingPolicy::DefaultBranch).unwrap(), 100.0);
        assert!((expected_prediction(&t, &d, &x(&[None])).unwrap() - 1.25).abs() < 1e-12);
    }
}
