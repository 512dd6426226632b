//! Decision trees over categorical features, and weighted forests.
//!
//! Every decision node partitions its feature's categories into disjoint
//! branch sets that together cover the whole domain. A branch set may be
//! empty, in which case its subtree is only reachable through the node's
//! default branch when the feature is missing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PartialAssignment};
use crate::density::ConstraintSet;
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub categories: Vec<u32>,
    pub child: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        branches: Vec<Branch>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default_branch: Option<usize>,
    },
    Leaf {
        theta: f64,
    },
}

/// What [`TreeModel::evaluate`] does when a split feature is missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    Error,
    /// Follow the node's default branch, or branch 0 when it has none.
    DefaultBranch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    cardinalities: Vec<u32>,
    nodes: Vec<Node>,
    /// Leaf id -> node id, in depth-first branch order.
    leaves: Vec<NodeId>,
    leaf_of_node: Vec<Option<usize>>,
    constraints: Vec<ConstraintSet>,
    /// Leaves whose path constraints are unsatisfiable by complete data.
    excluded: Vec<bool>,
}

impl TreeModel {
    /// Builds and validates a tree rooted at node 0.
    pub fn new(cardinalities: Vec<u32>, nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::MalformedTree("tree has no nodes".into()));
        }
        let mut visited = vec![false; nodes.len()];
        let mut leaves = Vec::new();
        let mut constraints = Vec::new();
        // Depth-first, branch order. Each stack entry carries its path constraints.
        let mut stack = vec![(0usize, ConstraintSet::unconstrained(&cardinalities))];
        while let Some((id, path)) = stack.pop() {
            let node = nodes
                .get(id)
                .ok_or_else(|| Error::MalformedTree(format!("child {id} does not exist")))?;
            if std::mem::replace(&mut visited[id], true) {
                return Err(Error::MalformedTree(format!(
                    "node {id} is reachable by more than one path"
                )));
            }
            match node {
                Node::Leaf { theta } => {
                    if !theta.is_finite() {
                        return Err(Error::MalformedTree(format!("leaf {id} has non-finite value")));
                    }
                    leaves.push(id);
                    constraints.push(path);
                }
                Node::Split {
                    feature,
                    branches,
                    default_branch,
                } => {
                    let card = *cardinalities.get(*feature).ok_or_else(|| {
                        Error::MalformedTree(format!("node {id} splits on unknown feature {feature}"))
                    })?;
                    if branches.is_empty() {
                        return Err(Error::MalformedTree(format!("node {id} has no branches")));
                    }
                    if let Some(d) = default_branch {
                        if *d >= branches.len() {
                            return Err(Error::MalformedTree(format!(
                                "node {id} default branch {d} out of range"
                            )));
                        }
                    }
                    let mut seen = vec![false; card as usize];
                    for b in branches {
                        for &v in &b.categories {
                            if v >= card {
                                return Err(Error::MalformedTree(format!(
                                    "node {id}: category {v} out of range"
                                )));
                            }
                            if std::mem::replace(&mut seen[v as usize], true) {
                                return Err(Error::MalformedTree(format!(
                                    "node {id}: category {v} in more than one branch"
                                )));
                            }
                        }
                    }
                    if !seen.iter().all(|&s| s) {
                        return Err(Error::MalformedTree(format!(
                            "node {id}: branches do not cover every category"
                        )));
                    }
                    for b in branches.iter().rev() {
                        let mut c = path.clone();
                        c.restrict(*feature, &b.categories);
                        stack.push((b.child, c));
                    }
                }
            }
        }
        if let Some(orphan) = visited.iter().position(|v| !v) {
            return Err(Error::MalformedTree(format!("node {orphan} is not reachable from the root")));
        }
        let excluded = constraints.iter().map(ConstraintSet::is_contradictory).collect();
        let mut leaf_of_node = vec![None; nodes.len()];
        for (leaf, &node) in leaves.iter().enumerate() {
            leaf_of_node[node] = Some(leaf);
        }
        Ok(Self {
            cardinalities,
            nodes,
            leaves,
            leaf_of_node,
            constraints,
            excluded,
        })
    }

    pub fn single_leaf(cardinalities: Vec<u32>, theta: f64) -> Self {
        Self::new(cardinalities, vec![Node::Leaf { theta }]).expect("single leaf is valid")
    }

    /// One split on `feature`, one leaf per category group.
    pub fn stump(cardinalities: Vec<u32>, feature: usize, groups: &[(&[u32], f64)]) -> Result<Self> {
        let mut nodes = vec![Node::Leaf { theta: 0.0 }];
        let mut branches = Vec::new();
        for (cats, theta) in groups {
            branches.push(Branch {
                categories: cats.to_vec(),
                child: nodes.len(),
            });
            nodes.push(Node::Leaf { theta: *theta });
        }
        nodes[0] = Node::Split {
            feature,
            branches,
            default_branch: None,
        };
        Self::new(cardinalities, nodes)
    }

    pub fn cardinalities(&self) -> &[u32] {
        &self.cardinalities
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_node(&self, leaf: usize) -> NodeId {
        self.leaves[leaf]
    }

    pub fn theta(&self, leaf: usize) -> f64 {
        match self.nodes[self.leaves[leaf]] {
            Node::Leaf { theta } => theta,
            Node::Split { .. } => unreachable!("leaf table points at a split"),
        }
    }

    pub fn thetas(&self) -> Vec<f64> {
        (0..self.n_leaves()).map(|l| self.theta(l)).collect()
    }

    /// Same structure with new leaf values, in leaf-id order.
    pub fn with_thetas(&self, thetas: &[f64]) -> Result<Self> {
        if thetas.len() != self.n_leaves() {
            return Err(Error::DimensionMismatch {
                expected: self.n_leaves(),
                got: thetas.len(),
            });
        }
        let mut t = self.clone();
        for (&node, &theta) in self.leaves.iter().zip(thetas) {
            t.nodes[node] = Node::Leaf { theta };
        }
        Ok(t)
    }

    /// Path constraints of `leaf`: per-feature intersection of the branch
    /// sets along its root path.
    pub fn leaf_constraints(&self, leaf: usize) -> &ConstraintSet {
        &self.constraints[leaf]
    }

    pub fn is_excluded(&self, leaf: usize) -> bool {
        self.excluded[leaf]
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], id: NodeId) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { branches, .. } => {
                    1 + branches.iter().map(|b| go(nodes, b.child)).max().unwrap_or(0)
                }
            }
        }
        go(&self.nodes, 0)
    }

    /// Leaf reached by routing `x` from the root.
    pub fn route(&self, x: &PartialAssignment, policy: MissingPolicy) -> Result<usize> {
        if x.len() != self.cardinalities.len() {
            return Err(Error::DimensionMismatch {
                expected: self.cardinalities.len(),
                got: x.len(),
            });
        }
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { .. } => {
                    return Ok(self.leaf_of_node[id].expect("every leaf node is indexed"))
                }
                Node::Split {
                    feature,
                    branches,
                    default_branch,
                } => {
                    let b = match x.get(*feature) {
                        Some(v) => branches
                            .iter()
                            .position(|b| b.categories.contains(&v))
                            .ok_or_else(|| {
                                Error::MalformedTree(format!("value {v} matches no branch at node {id}"))
                            })?,
                        None => match policy {
                            MissingPolicy::Error => {
                                return Err(Error::MissingFeature(format!("#{feature}")))
                            }
                            MissingPolicy::DefaultBranch => default_branch.unwrap_or(0),
                        },
                    };
                    id = branches[b].child;
                }
            }
        }
    }

    pub fn evaluate(&self, x: &PartialAssignment, policy: MissingPolicy) -> Result<f64> {
        Ok(self.theta(self.route(x, policy)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<TreeModel>,
    omegas: Vec<f64>,
}

impl ForestModel {
    pub fn new(trees: Vec<TreeModel>, omegas: Vec<f64>) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidArgument("forest needs at least one tree".into()));
        }
        if trees.len() != omegas.len() {
            return Err(Error::DimensionMismatch {
                expected: trees.len(),
                got: omegas.len(),
            });
        }
        if trees.iter().any(|t| t.cardinalities != trees[0].cardinalities) {
            return Err(Error::InvalidArgument("trees disagree on the feature schema".into()));
        }
        if omegas.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("non-finite tree weight".into()));
        }
        Ok(Self { trees, omegas })
    }

    pub fn single(tree: TreeModel) -> Self {
        Self {
            trees: vec![tree],
            omegas: vec![1.0],
        }
    }

    pub fn trees(&self) -> &[TreeModel] {
        &self.trees
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn cardinalities(&self) -> &[u32] {
        self.trees[0].cardinalities()
    }

    pub fn total_leaves(&self) -> usize {
        self.trees.iter().map(TreeModel::n_leaves).sum()
    }

    pub fn excluded_count(&self) -> usize {
        self.trees.iter().map(TreeModel::excluded_count).sum()
    }

    pub fn evaluate(&self, x: &PartialAssignment, policy: MissingPolicy) -> Result<f64> {
        let mut total = 0.0;
        for (t, w) in self.trees.iter().zip(&self.omegas) {
            total += w * t.evaluate(x, policy)?;
        }
        Ok(total)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            cardinalities: self.cardinalities().to_vec(),
            trees: self
                .trees
                .iter()
                .zip(&self.omegas)
                .map(|(t, &weight)| TreeFile {
                    weight,
                    nodes: t
                        .nodes
                        .iter()
                        .enumerate()
                        .map(|(id, node)| NodeFile { id, node: node.clone() })
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unsupported model format `{}`",
                file.format
            )));
        }
        let mut trees = Vec::new();
        let mut omegas = Vec::new();
        for tf in file.trees {
            let mut nodes: Vec<Option<Node>> = vec![None; tf.nodes.len()];
            for nf in tf.nodes {
                let slot = nodes.get_mut(nf.id).ok_or_else(|| {
                    Error::MalformedTree(format!("node id {} out of range", nf.id))
                })?;
                if slot.replace(nf.node).is_some() {
                    return Err(Error::MalformedTree(format!("duplicate node id {}", nf.id)));
                }
            }
            let nodes = nodes.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| {
                Error::MalformedTree("node ids must be dense from 0".into())
            })?;
            trees.push(TreeModel::new(file.cardinalities.clone(), nodes)?);
            omegas.push(tf.weight);
        }
        Self::new(trees, omegas)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }
}

pub const MODEL_FORMAT: &str = "exptree-model/1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    cardinalities: Vec<u32>,
    trees: Vec<TreeFile>,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    weight: f64,
    nodes: Vec<NodeFile>,
}

#[derive(Serialize, Deserialize)]
struct NodeFile {
    id: NodeId,
    #[serde(flatten)]
    node: Node,
}

// ---------------------------------------------------------------------------
// Greedy induction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InduceConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// L2 shrinkage on leaf values: a leaf predicts `sum / (n + lambda)`.
    pub lambda: f64,
}

impl Default for InduceConfig {
    fn default() -> Self {
        Self {
            max_depth: 5,
            min_leaf: 5,
            lambda: 1.0,
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Stats {
    n: f64,
    sum: f64,
    sumsq: f64,
}

impl Stats {
    fn add(&mut self, y: f64) {
        self.n += 1.0;
        self.sum += y;
        self.sumsq += y * y;
    }

    fn merge(self, o: Stats) -> Stats {
        Stats {
            n: self.n + o.n,
            sum: self.sum + o.sum,
            sumsq: self.sumsq + o.sumsq,
        }
    }

    /// Squared error left after fitting the shrunk leaf value.
    fn sse(&self, lambda: f64) -> f64 {
        if self.n + lambda == 0.0 {
            0.0
        } else {
            (self.sumsq - self.sum * self.sum / (self.n + lambda)).max(0.0)
        }
    }
}

struct Candidate {
    gain: f64,
    feature: usize,
    /// Branch sets, ordered by smallest category.
    sets: [Vec<u32>; 2],
}

/// Greedy binary-partition regression tree.
///
/// For each feature, categories observed at the node are sorted by mean
/// target and every prefix is scored by SSE reduction over the rows that
/// observe the feature. Categories absent at the node join the second
/// group. Ties go to the lower feature id, then the lexicographically
/// smaller first branch set. Rows missing the chosen feature follow the
/// branch that yields the lower SSE, which becomes the node's default.
pub fn induce_tree(ds: &Dataset, cfg: &InduceConfig) -> Result<TreeModel> {
    let rows: Vec<(&PartialAssignment, f64)> = ds
        .rows()
        .iter()
        .filter_map(|r| r.target.map(|y| (&r.assignment, y)))
        .collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("cannot induce a tree from an empty dataset".into()));
    }
    let cards = ds.schema().cardinalities();
    let mut nodes = Vec::new();
    let idx: Vec<usize> = (0..rows.len()).collect();
    grow(&rows, &cards, idx, 0, cfg, &mut nodes);
    TreeModel::new(cards, nodes)
}

fn grow(
    rows: &[(&PartialAssignment, f64)],
    cards: &[u32],
    idx: Vec<usize>,
    depth: usize,
    cfg: &InduceConfig,
    nodes: &mut Vec<Node>,
) -> NodeId {
    let id = nodes.len();
    let mut all = Stats::default();
    for &i in &idx {
        all.add(rows[i].1);
    }
    nodes.push(Node::Leaf {
        theta: all.sum / (all.n + cfg.lambda),
    });
    let min_leaf = cfg.min_leaf.max(1) as f64;
    if depth >= cfg.max_depth || all.n < 2.0 * min_leaf || all.sse(0.0) <= 1e-12 * (1.0 + all.sumsq) {
        return id;
    }
    let Some(best) = best_split(rows, cards, &idx, min_leaf, cfg.lambda) else {
        return id;
    };

    let f = best.feature;
    let mut parts: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut missing = Vec::new();
    for &i in &idx {
        match rows[i].0.get(f) {
            Some(v) => parts[if best.sets[0].contains(&v) { 0 } else { 1 }].push(i),
            None => missing.push(i),
        }
    }
    let lambda = cfg.lambda;
    let default_branch = if missing.is_empty() {
        None
    } else {
        let stats = |ix: &[usize]| {
            let mut s = Stats::default();
            for &i in ix {
                s.add(rows[i].1);
            }
            s
        };
        let (s0, s1, sm) = (stats(&parts[0]), stats(&parts[1]), stats(&missing));
        let to0 = s0.merge(sm).sse(lambda) + s1.sse(lambda);
        let to1 = s0.sse(lambda) + s1.merge(sm).sse(lambda);
        let d = if to1 < to0 { 1 } else { 0 };
        parts[d].extend(missing);
        parts[d].sort_unstable();
        Some(d)
    };

    let [p0, p1] = parts;
    let [c0, c1] = best.sets;
    let child0 = grow(rows, cards, p0, depth + 1, cfg, nodes);
    let child1 = grow(rows, cards, p1, depth + 1, cfg, nodes);
    nodes[id] = Node::Split {
        feature: f,
        branches: vec![
            Branch {
                categories: c0,
                child: child0,
            },
            Branch {
                categories: c1,
                child: child1,
            },
        ],
        default_branch,
    };
    id
}

fn best_split(
    rows: &[(&PartialAssignment, f64)],
    cards: &[u32],
    idx: &[usize],
    min_leaf: f64,
    lambda: f64,
) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for (f, &card) in cards.iter().enumerate() {
        let mut per_cat = vec![Stats::default(); card as usize];
        for &i in idx {
            if let Some(v) = rows[i].0.get(f) {
                per_cat[v as usize].add(rows[i].1);
            }
        }
        let mut seen: Vec<u32> = (0..card).filter(|&v| per_cat[v as usize].n > 0.0).collect();
        if seen.len() < 2 {
            continue;
        }
        let mean = |v: u32| per_cat[v as usize].sum / per_cat[v as usize].n;
        seen.sort_by(|&a, &b| mean(a).total_cmp(&mean(b)).then(a.cmp(&b)));
        let total = seen.iter().fold(Stats::default(), |s, &v| s.merge(per_cat[v as usize]));
        let mut left = Stats::default();
        for cut in 1..seen.len() {
            left = left.merge(per_cat[seen[cut - 1] as usize]);
            let right = Stats {
                n: total.n - left.n,
                sum: total.sum - left.sum,
                sumsq: total.sumsq - left.sumsq,
            };
            if left.n < min_leaf || right.n < min_leaf {
                continue;
            }
            let gain = total.sse(lambda) - left.sse(lambda) - right.sse(lambda);
            if gain <= 1e-12 * (1.0 + total.sumsq) {
                continue;
            }
            let mut a: Vec<u32> = seen[..cut].to_vec();
            a.sort_unstable();
            let b: Vec<u32> = (0..card).filter(|v| !a.contains(v)).collect();
            let sets = if a[0] < b[0] { [a, b] } else { [b, a] };
            let cand = Candidate { gain, feature: f, sets };
            let better = match &best {
                None => true,
                Some(cur) => {
                    let tol = 1e-12 * cur.gain.abs().max(1.0);
                    if cand.gain > cur.gain + tol {
                        true
                    } else if cand.gain < cur.gain - tol {
                        false
                    } else {
                        (cand.feature, &cand.sets[0]) < (cur.feature, &cur.sets[0])
                    }
                }
            };
            if better {
                best = Some(cand);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSchema, Row};

    fn split_tree() -> TreeModel {
        TreeModel::stump(vec![2], 0, &[(&[0], 1.0), (&[1], 3.0)]).unwrap()
    }

    fn x(v: &[Option<u32>]) -> PartialAssignment {
        PartialAssignment(v.to_vec())
    }

    #[test]
    fn single_leaf_evaluates_to_theta() {
        let t = TreeModel::single_leaf(vec![3, 3], 5.0);
        assert_eq!(t.evaluate(&x(&[None, Some(2)]), MissingPolicy::Error).unwrap(), 5.0);
        let c = t.leaf_constraints(0);
        assert!((0..2).all(|f| !c.is_constrained(f)));
    }

    #[test]
    fn routing_and_default_branch() {
        let t = split_tree();
        assert_eq!(t.evaluate(&x(&[Some(1)]), MissingPolicy::Error).unwrap(), 3.0);
        assert_eq!(t.evaluate(&x(&[None]), MissingPolicy::DefaultBranch).unwrap(), 1.0);
        assert!(matches!(
            t.evaluate(&x(&[None]), MissingPolicy::Error),
            Err(Error::MissingFeature(_))
        ));
    }

    #[test]
    fn path_constraints_read_off_the_path() {
        // X0 in {1} then X1 in {0, 2}
        let nodes = vec![
            Node::Split {
                feature: 0,
                branches: vec![
                    Branch { categories: vec![0], child: 1 },
                    Branch { categories: vec![1], child: 2 },
                ],
                default_branch: None,
            },
            Node::Leaf { theta: 0.0 },
            Node::Split {
                feature: 1,
                branches: vec![
                    Branch { categories: vec![0, 2], child: 3 },
                    Branch { categories: vec![1], child: 4 },
                ],
                default_branch: None,
            },
            Node::Leaf { theta: 1.0 },
            Node::Leaf { theta: 2.0 },
        ];
        let t = TreeModel::new(vec![2, 3], nodes).unwrap();
        assert_eq!(t.n_leaves(), 3);
        let c = t.leaf_constraints(1);
        assert_eq!(c.allowed_values(0), vec![1]);
        assert_eq!(c.allowed_values(1), vec![0, 2]);
    }

    #[test]
    fn repeated_feature_intersects() {
        let nodes = vec![
            Node::Split {
                feature: 0,
                branches: vec![
                    Branch { categories: vec![0, 1], child: 1 },
                    Branch { categories: vec![2], child: 4 },
                ],
                default_branch: None,
            },
            Node::Split {
                feature: 0,
                branches: vec![
                    Branch { categories: vec![0], child: 2 },
                    Branch { categories: vec![1, 2], child: 3 },
                ],
                default_branch: None,
            },
            Node::Leaf { theta: 0.0 },
            Node::Leaf { theta: 1.0 },
            Node::Leaf { theta: 2.0 },
        ];
        let t = TreeModel::new(vec![3], nodes).unwrap();
        assert_eq!(t.leaf_constraints(1).allowed_values(0), vec![1]);
        assert!(!t.is_excluded(1));
    }

    #[test]
    fn malformed_trees_are_rejected() {
        let overlap = vec![
            Node::Split {
                feature: 0,
                branches: vec![
                    Branch { categories: vec![0, 1], child: 1 },
                    Branch { categories: vec![1], child: 2 },
                ],
                default_branch: None,
            },
            Node::Leaf { theta: 0.0 },
            Node::Leaf { theta: 0.0 },
        ];
        assert!(TreeModel::new(vec![2], overlap).is_err());
        assert!(TreeModel::stump(vec![3], 0, &[(&[0], 1.0), (&[1], 2.0)]).is_err());
        let shared = vec![
            Node::Split {
                feature: 0,
                branches: vec![
                    Branch { categories: vec![0], child: 1 },
                    Branch { categories: vec![1], child: 1 },
                ],
                default_branch: None,
            },
            Node::Leaf { theta: 0.0 },
        ];
        assert!(TreeModel::new(vec![2], shared).is_err());
    }

    #[test]
    fn forest_evaluation() {
        let t = split_tree();
        let xi = x(&[Some(0)]);
        let one = ForestModel::single(t.clone());
        assert_eq!(one.evaluate(&xi, MissingPolicy::Error).unwrap(), 1.0);
        let twice = ForestModel::new(vec![t.clone(), t.clone()], vec![0.5, 0.5]).unwrap();
        assert_eq!(twice.evaluate(&xi, MissingPolicy::Error).unwrap(), 1.0);
        let sum = ForestModel::new(
            vec![TreeModel::single_leaf(vec![2], 1.0), TreeModel::single_leaf(vec![2], 3.0)],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert_eq!(sum.evaluate(&xi, MissingPolicy::Error).unwrap(), 4.0);
    }

    #[test]
    fn model_json_round_trip() {
        let f = ForestModel::new(vec![split_tree(), TreeModel::single_leaf(vec![2], 2.5)], vec![1.0, 0.5])
            .unwrap();
        let text = f.to_json().unwrap();
        assert!(text.contains(MODEL_FORMAT));
        assert_eq!(ForestModel::from_json(&text).unwrap(), f);
    }

    fn dataset(cards: &[u32], rows: Vec<(Vec<Option<u32>>, f64)>) -> Dataset {
        let schema = FeatureSchema::with_cardinalities(cards, "y").unwrap();
        Dataset::new(
            schema,
            rows.into_iter()
                .map(|(a, y)| Row {
                    assignment: PartialAssignment(a),
                    target: Some(y),
                })
                .collect(),
        )
        .unwrap()
    }

    fn unshrunk() -> InduceConfig {
        InduceConfig {
            lambda: 0.0,
            ..InduceConfig::default()
        }
    }

    #[test]
    fn constant_target_gives_single_leaf() {
        let ds = dataset(&[3, 2], (0..30).map(|i| (vec![Some(i % 3), Some(i % 2)], 7.0)).collect());
        let t = induce_tree(&ds, &unshrunk()).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.theta(0), 7.0);
        let shrunk = induce_tree(&ds, &InduceConfig::default()).unwrap();
        assert_eq!(shrunk.theta(0), 210.0 / 31.0);
    }

    #[test]
    fn depth_zero_gives_global_mean() {
        let ds = dataset(&[2], (0..10).map(|i| (vec![Some(i % 2)], i as f64)).collect());
        let t = induce_tree(&ds, &InduceConfig { max_depth: 0, min_leaf: 1, lambda: 0.0 }).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.theta(0), 4.5);
    }

    #[test]
    fn binary_target_copy_splits_once() {
        let ds = dataset(&[2], (0..100).map(|i| (vec![Some(i % 2)], (i % 2) as f64)).collect());
        let t = induce_tree(&ds, &unshrunk()).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(t.thetas(), vec![0.0, 1.0]);
        assert_eq!(t.leaf_constraints(0).allowed_values(0), vec![0]);
    }

    #[test]
    fn missing_rows_pick_a_default() {
        let mut rows: Vec<(Vec<Option<u32>>, f64)> =
            (0..40).map(|i| (vec![Some(i % 2)], (i % 2) as f64 * 10.0)).collect();
        rows.extend((0..10).map(|_| (vec![None], 10.0)));
        let t = induce_tree(&dataset(&[2], rows), &InduceConfig::default()).unwrap();
        match &t.nodes()[0] {
            Node::Split { default_branch, .. } => assert_eq!(*default_branch, Some(1)),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(induce_tree(&dataset(&[2], vec![]), &InduceConfig::default()).is_err());
    }
}
