//! Closed-form leaf refits that minimize expected squared error.
//!
//! With `w_l(x) = p(path(l), xo) / p(xo)` for each training row, the single
//! tree optimum under an L2 penalty `lambda * ||theta||^2` is
//!
//! ```text
//! theta_l = sum_rows y * w_l  /  (lambda + sum_rows w_l)
//! ```
//!
//! Joint forest refits solve `(M + lambda I) theta = B` over all leaves of
//! all trees, and boosted refits subtract the fixed forest's expected
//! contribution from each row's numerator.

use serde::Serialize;

use crate::data::Dataset;
use crate::density::MixtureDensity;
use crate::error::{Error, Result};
use crate::expectation::{pair_weights, posterior_given, Evidence};
use crate::linalg::cholesky_solve;
use crate::trees::{ForestModel, TreeModel};

/// Default cap on total leaves for the joint forest system.
pub const MAX_SYSTEM_LEAVES: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafRefit {
    pub leaf: usize,
    pub old_theta: f64,
    pub new_theta: f64,
    pub denom: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefitReport {
    pub leaves: Vec<LeafRefit>,
    pub expected_loss_before: f64,
    pub expected_loss_after: f64,
    pub skipped_leaves: Vec<usize>,
    pub dropped_rows: usize,
}

fn labelled_rows(ds: &Dataset) -> Result<Vec<(usize, f64)>> {
    let rows: Vec<(usize, f64)> = ds
        .rows()
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.target.map(|y| (i, y)))
        .collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows with a target".into()));
    }
    Ok(rows)
}

fn row_evidence(d: &MixtureDensity, ds: &Dataset, row: usize) -> Result<Evidence> {
    Evidence::new(d, &ds.rows()[row].assignment).map_err(|e| match e {
        Error::ZeroProbabilityEvidence => Error::ZeroProbabilityRow(row),
        other => other,
    })
}

fn require_targets(ds: &Dataset) -> Result<Vec<f64>> {
    ds.rows()
        .iter()
        .enumerate()
        .map(|(i, r)| r.target.ok_or(Error::MissingTarget(i)))
        .collect()
}

fn check_model(cards: &[u32], d: &MixtureDensity, ds: &Dataset) -> Result<()> {
    if cards != d.cardinalities() || ds.schema().cardinalities() != cards {
        return Err(Error::DimensionMismatch {
            expected: d.n_features(),
            got: cards.len(),
        });
    }
    Ok(())
}

/// Mean over rows of `y^2 - 2 y E[f] + E[f^2]`.
pub fn expected_mse(t: &TreeModel, d: &MixtureDensity, ds: &Dataset) -> Result<f64> {
    check_model(t.cardinalities(), d, ds)?;
    let ys = require_targets(ds)?;
    if ys.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let thetas = t.thetas();
    let mut total = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let post = posterior_given(t, d, &row_evidence(d, ds, i)?)?;
        let (mut e1, mut e2) = (0.0, 0.0);
        for (th, w) in thetas.iter().zip(&post.weights) {
            e1 += th * w;
            e2 += th * th * w;
        }
        total += y * y - 2.0 * y * e1 + e2;
    }
    Ok(total / ys.len() as f64)
}

/// Forest version of [`expected_mse`]; `E[F^2]` expands into pairwise
/// tree products.
pub fn expected_mse_forest(f: &ForestModel, d: &MixtureDensity, ds: &Dataset) -> Result<f64> {
    check_model(f.cardinalities(), d, ds)?;
    let ys = require_targets(ds)?;
    if ys.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let thetas: Vec<Vec<f64>> = f.trees().iter().map(TreeModel::thetas).collect();
    let mut total = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let ev = row_evidence(d, ds, i)?;
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        for (r, (tr, wr)) in f.trees().iter().zip(f.omegas()).enumerate() {
            let post = posterior_given(tr, d, &ev)?;
            let (mut a, mut sq) = (0.0, 0.0);
            for (th, w) in thetas[r].iter().zip(&post.weights) {
                a += th * w;
                sq += th * th * w;
            }
            e1 += wr * a;
            e2 += wr * wr * sq;
            for (s, (ts, ws)) in f.trees().iter().zip(f.omegas()).enumerate().skip(r + 1) {
                let pw = pair_weights(tr, ts, d, &ev)?;
                let n2 = thetas[s].len();
                let mut cross = 0.0;
                for (l, a) in thetas[r].iter().enumerate() {
                    for (j, b) in thetas[s].iter().enumerate() {
                        cross += a * b * pw[l * n2 + j];
                    }
                }
                e2 += 2.0 * wr * ws * cross;
            }
        }
        total += y * y - 2.0 * y * e1 + e2;
    }
    Ok(total / ys.len() as f64)
}

/// Closed-form expected-MSE refit of one tree's leaf values.
///
/// Rows without a target are dropped. Leaves with `lambda + denom == 0`
/// keep their old value and are listed in `skipped_leaves`. The reported
/// losses are unpenalized expected MSE on the labelled rows.
pub fn refit_tree_mse(
    t: &TreeModel,
    d: &MixtureDensity,
    ds: &Dataset,
    lambda: f64,
) -> Result<(TreeModel, RefitReport)> {
    refit_with_offset(None, t, d, ds, lambda)
}

/// Leaf values of `t_new` minimizing the expected MSE of `fixed + t_new`,
/// with the fixed forest's parameters held constant. `None` stands for the
/// zero forest.
pub fn refit_boost_tree(
    fixed: Option<&ForestModel>,
    t_new: &TreeModel,
    d: &MixtureDensity,
    ds: &Dataset,
) -> Result<(TreeModel, RefitReport)> {
    refit_with_offset(fixed, t_new, d, ds, 0.0)
}

fn refit_with_offset(
    fixed: Option<&ForestModel>,
    t: &TreeModel,
    d: &MixtureDensity,
    ds: &Dataset,
    lambda: f64,
) -> Result<(TreeModel, RefitReport)> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    check_model(t.cardinalities(), d, ds)?;
    if let Some(f) = fixed {
        check_model(f.cardinalities(), d, ds)?;
    }
    let rows = labelled_rows(ds)?;
    let dropped_rows = ds.len() - rows.len();
    if dropped_rows > 0 {
        log::warn!("refit: dropped {dropped_rows} rows with a missing target");
    }
    let kept = ds.subset(&rows.iter().map(|&(i, _)| i).collect::<Vec<_>>());

    let n_leaves = t.n_leaves();
    let fixed_thetas: Vec<Vec<f64>> = fixed
        .map(|f| f.trees().iter().map(TreeModel::thetas).collect())
        .unwrap_or_default();
    let mut num = vec![0.0; n_leaves];
    let mut den = vec![0.0; n_leaves];
    for (k, &(_, y)) in rows.iter().enumerate() {
        let ev = row_evidence(d, &kept, k)?;
        let post = posterior_given(t, d, &ev)?;
        let mut offset = vec![0.0; n_leaves];
        if let Some(f) = fixed {
            for ((tr, wr), th) in f.trees().iter().zip(f.omegas()).zip(&fixed_thetas) {
                let pw = pair_weights(t, tr, d, &ev)?;
                let n2 = th.len();
                for (l, o) in offset.iter_mut().enumerate() {
                    for (j, theta_j) in th.iter().enumerate() {
                        *o += wr * theta_j * pw[l * n2 + j];
                    }
                }
            }
        }
        for l in 0..n_leaves {
            num[l] += y * post.weights[l] - offset[l];
            den[l] += post.weights[l];
        }
    }

    let old = t.thetas();
    let mut new = old.clone();
    let mut leaves = Vec::with_capacity(n_leaves);
    let mut skipped = Vec::new();
    for l in 0..n_leaves {
        let denom = lambda + den[l];
        if denom == 0.0 {
            skipped.push(l);
        } else {
            new[l] = num[l] / denom;
        }
        leaves.push(LeafRefit {
            leaf: l,
            old_theta: old[l],
            new_theta: new[l],
            denom: den[l],
        });
    }
    let refit = t.with_thetas(&new)?;
    let loss = |tree: &TreeModel| -> Result<f64> {
        match fixed {
            None => expected_mse(tree, d, &kept),
            Some(f) => {
                let mut trees = f.trees().to_vec();
                let mut omegas = f.omegas().to_vec();
                trees.push(tree.clone());
                omegas.push(1.0);
                expected_mse_forest(&ForestModel::new(trees, omegas)?, d, &kept)
            }
        }
    };
    let report = RefitReport {
        leaves,
        expected_loss_before: loss(t)?,
        expected_loss_after: loss(&refit)?,
        skipped_leaves: skipped,
        dropped_rows,
    };
    Ok((refit, report))
}

/// Refits every tree independently against its own density and data, as
/// for bagged ensembles. Tree weights are kept.
pub fn refit_bagging(
    f: &ForestModel,
    densities: &[MixtureDensity],
    datasets: &[Dataset],
    lambda: f64,
) -> Result<(ForestModel, Vec<RefitReport>)> {
    let n = f.trees().len();
    if densities.len() != n || datasets.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: densities.len().min(datasets.len()),
        });
    }
    let mut trees = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);
    for ((t, d), ds) in f.trees().iter().zip(densities).zip(datasets) {
        let (refit, report) = refit_tree_mse(t, d, ds, lambda)?;
        trees.push(refit);
        reports.push(report);
    }
    Ok((ForestModel::new(trees, f.omegas().to_vec())?, reports))
}

/// The joint normal equations over all leaves of a forest. Tree weights are
/// absorbed into the leaf values (taken as 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestSystem {
    pub size: usize,
    /// Row-major `size x size`.
    pub m: Vec<f64>,
    pub b: Vec<f64>,
    /// Global leaf index -> (tree, leaf).
    pub index: Vec<(usize, usize)>,
}

impl ForestSystem {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.size + j]
    }
}

pub fn build_forest_system(f: &ForestModel, d: &MixtureDensity, ds: &Dataset) -> Result<ForestSystem> {
    build_forest_system_limited(f, d, ds, MAX_SYSTEM_LEAVES)
}

pub fn build_forest_system_limited(
    f: &ForestModel,
    d: &MixtureDensity,
    ds: &Dataset,
    max_leaves: usize,
) -> Result<ForestSystem> {
    let size = f.total_leaves();
    if size > max_leaves {
        return Err(Error::ForestTooLarge {
            leaves: size,
            limit: max_leaves,
        });
    }
    check_model(f.cardinalities(), d, ds)?;
    let ys = require_targets(ds)?;
    let mut offsets = Vec::with_capacity(f.trees().len());
    let mut index = Vec::with_capacity(size);
    for (r, t) in f.trees().iter().enumerate() {
        offsets.push(index.len());
        index.extend((0..t.n_leaves()).map(|l| (r, l)));
    }
    let mut m = vec![0.0; size * size];
    let mut b = vec![0.0; size];
    for (i, y) in ys.iter().enumerate() {
        let ev = row_evidence(d, ds, i)?;
        for (r, tr) in f.trees().iter().enumerate() {
            let post = posterior_given(tr, d, &ev)?;
            for (l, w) in post.weights.iter().enumerate() {
                let g = offsets[r] + l;
                m[g * size + g] += w;
                b[g] += y * w;
            }
            for (s, ts) in f.trees().iter().enumerate().skip(r + 1) {
                let pw = pair_weights(tr, ts, d, &ev)?;
                let n2 = ts.n_leaves();
                for l in 0..tr.n_leaves() {
                    for j in 0..n2 {
                        m[(offsets[r] + l) * size + offsets[s] + j] += pw[l * n2 + j];
                    }
                }
            }
        }
    }
    for i in 0..size {
        for j in 0..i {
            m[i * size + j] = m[j * size + i];
        }
    }
    Ok(ForestSystem { size, m, b, index })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestSolution {
    pub thetas: Vec<f64>,
    /// Ridge actually applied; differs from the request when M was singular.
    pub lambda: f64,
    pub fallback: bool,
}

/// Solves `(M + lambda I) theta = B`. With `lambda == 0` and a singular
/// `M`, retries with `1e-8 * trace(M) / size` and flags the fallback.
pub fn solve_forest_system(sys: &ForestSystem, lambda: f64) -> Result<ForestSolution> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    if sys.m.iter().chain(&sys.b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = sys.size;
    let ridged = |lam: f64| {
        let mut a = sys.m.clone();
        for i in 0..n {
            a[i * n + i] += lam;
        }
        a
    };
    if let Some(thetas) = cholesky_solve(&ridged(lambda), n, &sys.b) {
        return Ok(ForestSolution {
            thetas,
            lambda,
            fallback: false,
        });
    }
    let trace: f64 = (0..n).map(|i| sys.get(i, i)).sum();
    let mut lam = if trace > 0.0 { 1e-8 * trace / n as f64 } else { 1e-8 };
    lam = lam.max(lambda);
    loop {
        if let Some(thetas) = cholesky_solve(&ridged(lam), n, &sys.b) {
            log::warn!("forest system singular; solved with ridge {lam:e}");
            return Ok(ForestSolution {
                thetas,
                lambda: lam,
                fallback: true,
            });
        }
        lam *= 10.0;
        if !lam.is_finite() {
            return Err(Error::NonFinite);
        }
    }
}

/// Joint refit of all leaves of a forest. The returned forest has unit
/// tree weights.
pub fn refit_forest_joint(
    f: &ForestModel,
    d: &MixtureDensity,
    ds: &Dataset,
    lambda: f64,
) -> Result<(ForestModel, ForestSolution)> {
    let (kept, dropped) = ds.with_targets();
    if dropped > 0 {
        log::warn!("joint refit: dropped {dropped} rows with a missing target");
    }
    let sys = build_forest_system(f, d, &kept)?;
    let sol = solve_forest_system(&sys, lambda)?;
    let mut trees = Vec::with_capacity(f.trees().len());
    let mut start = 0;
    for t in f.trees() {
        trees.push(t.with_thetas(&sol.thetas[start..start + t.n_leaves()])?);
        start += t.n_leaves();
    }
    let n = trees.len();
    Ok((ForestModel::new(trees, vec![1.0; n])?, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSchema, PartialAssignment, Row};

    fn split_tree() -> TreeModel {
        TreeModel::stump(vec![2], 0, &[(&[0], 1.0), (&[1], 3.0)]).unwrap()
    }

    fn ds(rows: Vec<(Vec<Option<u32>>, Option<f64>)>, cards: &[u32]) -> Dataset {
        let schema = FeatureSchema::with_cardinalities(cards, "y").unwrap();
        Dataset::new(
            schema,
            rows.into_iter()
                .map(|(a, y)| Row {
                    assignment: PartialAssignment(a),
                    target: y,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn expected_mse_single_row() {
        let d = MixtureDensity::new(vec![2], vec![1.0], vec![vec![vec![0.75, 0.25]]]).unwrap();
        let data = ds(vec![(vec![None], Some(2.0))], &[2]);
        // 4 - 2*2*1.5 + 3.0
        assert!((expected_mse(&split_tree(), &d, &data).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn perfect_constant_fit() {
        let d = MixtureDensity::uniform(&[2], 1);
        let data = ds(vec![(vec![None], Some(4.0)), (vec![Some(1)], Some(4.0))], &[2]);
        let t = TreeModel::single_leaf(vec![2], 4.0);
        assert_eq!(expected_mse(&t, &d, &data).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_refit() {
        let d = MixtureDensity::uniform(&[2], 1);
        let data = ds(vec![(vec![None], Some(0.0)), (vec![Some(1)], Some(4.0))], &[2]);
        let (t, report) = refit_tree_mse(&split_tree(), &d, &data, 0.0).unwrap();
        assert!((t.theta(1) - 8.0 / 3.0).abs() < 1e-14);
        assert_eq!(t.theta(0), 0.0);
        assert!(report.expected_loss_after <= report.expected_loss_before + 1e-9);
        assert!(report.skipped_leaves.is_empty());
    }

    #[test]
    fn heavy_ridge_shrinks_to_zero() {
        let d = MixtureDensity::uniform(&[2], 1);
        let data = ds(vec![(vec![None], Some(5.0)), (vec![Some(1)], Some(4.0))], &[2]);
        let (t, _) = refit_tree_mse(&split_tree(), &d, &data, 1e12).unwrap();
        assert!(t.thetas().iter().all(|th| th.abs() < 1e-10));
    }

    #[test]
    fn unreached_leaf_is_skipped() {
        let d = MixtureDensity::uniform(&[2], 1);
        let data = ds(vec![(vec![Some(1)], Some(4.0))], &[2]);
        let (t, report) = refit_tree_mse(&split_tree(), &d, &data, 0.0).unwrap();
        assert_eq!(report.skipped_leaves, vec![0]);
        assert_eq!(t.theta(0), 1.0);
        assert_eq!(t.theta(1), 4.0);
    }

    #[test]
    fn missing_targets_are_dropped() {
        let d = MixtureDensity::uniform(&[2], 1);
        let data = ds(vec![(vec![Some(1)], Some(4.0)), (vec![Some(0)], None)], &[2]);
        let (_, report) = refit_tree_mse(&split_tree(), &d, &data, 0.0).unwrap();
        assert_eq!(report.dropped_rows, 1);
        assert!(matches!(expected_mse(&split_tree(), &d, &data), Err(Error::MissingTarget(1))));
    }

    #[test]
    fn constant_trees_make_a_rank_deficient_system() {
        let d = MixtureDensity::uniform(&[2], 1);
        let data = ds(
            vec![(vec![None], Some(1.0)), (vec![Some(0)], Some(2.0)), (vec![Some(1)], Some(6.0))],
            &[2],
        );
        let f = ForestModel::new(
            vec![TreeModel::single_leaf(vec![2], 0.0), TreeModel::single_leaf(vec![2], 0.0)],
            vec![1.0, 1.0],
        )
        .unwrap();
        let sys = build_forest_system(&f, &d, &data).unwrap();
        assert!(sys.m.iter().all(|&v| (v - 3.0).abs() < 1e-12));
        assert!(sys.b.iter().all(|&v| (v - 9.0).abs() < 1e-12));

        // (3 + lam) t1 + 3 t2 = 9 and symmetric => t1 = t2 = 9 / (6 + lam)
        let lam = 1e-6;
        let sol = solve_forest_system(&sys, lam).unwrap();
        assert!(!sol.fallback);
        for th in &sol.thetas {
            assert!((th - 9.0 / (6.0 + lam)).abs() < 1e-9);
            assert!((th - 1.5).abs() < 1e-5);
        }

        let sol0 = solve_forest_system(&sys, 0.0).unwrap();
        assert!(sol0.fallback);
        assert!((sol0.lambda - 1e-8 * 3.0).abs() < 1e-20);
        assert!((sol0.thetas[0] + sol0.thetas[1] - 3.0).abs() < 1e-6);

        let huge = solve_forest_system(&sys, 1e15).unwrap();
        assert!(huge.thetas.iter().all(|t| t.abs() < 1e-12));
    }

    #[test]
    fn size_guard() {
        let d = MixtureDensity::uniform(&[2], 1);
        let data = ds(vec![(vec![Some(0)], Some(1.0))], &[2]);
        let f = ForestModel::new(vec![split_tree(), split_tree()], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            build_forest_system_limited(&f, &d, &data, 3),
            Err(Error::ForestTooLarge { leaves: 4, limit: 3 })
        ));
    }

    #[test]
    fn non_finite_system_is_rejected() {
        let sys = ForestSystem {
            size: 1,
            m: vec![f64::NAN],
            b: vec![1.0],
            index: vec![(0, 0)],
        };
        assert!(matches!(solve_forest_system(&sys, 0.0), Err(Error::NonFinite)));
    }
}
