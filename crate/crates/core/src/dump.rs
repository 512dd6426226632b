//! Ingestion of externally trained boosted trees.
//!
//! Dump format `exptree-dump/1`:
//!
//! ```json
//! {
//!   "format": "exptree-dump/1",
//!   "trees": [
//!     {
//!       "weight": 1.0,
//!       "root": {
//!         "nodeid": 0, "split": "age", "threshold": 42.5,
//!         "yes": 1, "no": 2, "missing": 1,
//!         "children": [
//!           { "nodeid": 1, "leaf": -0.3 },
//!           { "nodeid": 2, "leaf": 0.8 }
//!         ]
//!       }
//!     }
//!   ]
//! }
//! ```
//!
//! A tree is either a nested `root` or a flat `nodes` list (root first).
//! A split node names its feature and carries either a `threshold`
//! (`yes` when the value is below it) or a `categories` list (`yes` when the
//! value is listed). `missing` is optional and becomes the node's default
//! branch. `weight` defaults to 1.
//!
//! Thresholds on binned continuous features are mapped through the
//! [`BinningSpec`]: `yes` receives the bins strictly below the threshold's
//! bin. Without a binning entry the threshold is read in category-index
//! space. Leaves whose path is unsatisfiable by complete data can only be
//! reached through default branches; they are kept in the tree but flagged
//! as excluded, and the expectation routines skip them.

use std::collections::{BTreeMap, HashSet};

use serde::Deserialize;

use crate::data::{BinningSpec, ColumnEncoding, FeatureSchema};
use crate::error::{Error, Result};
use crate::trees::{Branch, ForestModel, Node, TreeModel};

pub const DUMP_FORMAT: &str = "exptree-dump/1";

#[derive(Debug, Clone, Deserialize)]
struct DumpFile {
    format: String,
    trees: Vec<DumpTree>,
}

#[derive(Debug, Clone, Deserialize)]
struct DumpTree {
    #[serde(default = "one")]
    weight: f64,
    root: Option<DumpNode>,
    nodes: Option<Vec<DumpNode>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
struct DumpNode {
    nodeid: i64,
    split: Option<String>,
    threshold: Option<f64>,
    categories: Option<Vec<u32>>,
    yes: Option<i64>,
    no: Option<i64>,
    missing: Option<i64>,
    leaf: Option<f64>,
    #[serde(default)]
    children: Vec<DumpNode>,
}

#[derive(Debug, Clone)]
pub struct ParsedDump {
    pub forest: ForestModel,
    /// Leaves reachable only through missing values, over all trees.
    pub excluded_leaves: usize,
}

pub fn parse_dump(text: &str, schema: &FeatureSchema, binning: Option<&BinningSpec>) -> Result<ParsedDump> {
    let file: DumpFile = serde_json::from_str(text)?;
    if file.format != DUMP_FORMAT {
        return Err(Error::Dump(format!("unsupported dump format `{}`", file.format)));
    }
    if file.trees.is_empty() {
        return Err(Error::Dump("dump contains no trees".into()));
    }
    let mut trees = Vec::with_capacity(file.trees.len());
    let mut omegas = Vec::with_capacity(file.trees.len());
    for (i, t) in file.trees.into_iter().enumerate() {
        let mut table = BTreeMap::new();
        let root = match (t.root, t.nodes) {
            (Some(root), None) => {
                let id = root.nodeid;
                flatten(root, &mut table)?;
                id
            }
            (None, Some(nodes)) => {
                let first = nodes
                    .first()
                    .ok_or_else(|| Error::Dump(format!("tree {i} has no nodes")))?
                    .nodeid;
                for n in nodes {
                    flatten(n, &mut table)?;
                }
                first
            }
            _ => return Err(Error::Dump(format!("tree {i} needs exactly one of `root` or `nodes`"))),
        };
        let mut builder = Builder {
            table: &table,
            schema,
            binning,
            nodes: Vec::new(),
            on_path: HashSet::new(),
            done: HashSet::new(),
        };
        builder.build(root)?;
        trees.push(TreeModel::new(schema.cardinalities(), builder.nodes)?);
        omegas.push(t.weight);
    }
    let forest = ForestModel::new(trees, omegas)?;
    let excluded_leaves = forest.excluded_count();
    if excluded_leaves > 0 {
        log::info!("{excluded_leaves} dump leaves are reachable only through missing values");
    }
    Ok(ParsedDump {
        forest,
        excluded_leaves,
    })
}

fn flatten(mut node: DumpNode, table: &mut BTreeMap<i64, DumpNode>) -> Result<()> {
    let children = std::mem::take(&mut node.children);
    if table.insert(node.nodeid, node.clone()).is_some() {
        return Err(Error::Dump(format!("duplicate node id {}", node.nodeid)));
    }
    for c in children {
        flatten(c, table)?;
    }
    Ok(())
}

struct Builder<'a> {
    table: &'a BTreeMap<i64, DumpNode>,
    schema: &'a FeatureSchema,
    binning: Option<&'a BinningSpec>,
    nodes: Vec<Node>,
    on_path: HashSet<i64>,
    done: HashSet<i64>,
}

impl Builder<'_> {
    fn build(&mut self, id: i64) -> Result<usize> {
        if self.on_path.contains(&id) {
            return Err(Error::CyclicTree(id));
        }
        if self.done.contains(&id) {
            return Err(Error::Dump(format!("node {id} has more than one parent")));
        }
        let node = self
            .table
            .get(&id)
            .ok_or_else(|| Error::Dump(format!("reference to unknown node {id}")))?;
        let slot = self.nodes.len();
        if let Some(theta) = node.leaf {
            self.nodes.push(Node::Leaf { theta });
            self.done.insert(id);
            return Ok(slot);
        }
        let name = node
            .split
            .as_ref()
            .ok_or_else(|| Error::Dump(format!("node {id} is neither a leaf nor a split")))?;
        let feature = self
            .schema
            .index_of(name)
            .ok_or_else(|| Error::UnknownFeature(name.clone()))?;
        let (yes, no) = match (node.yes, node.no) {
            (Some(y), Some(n)) => (y, n),
            _ => return Err(Error::Dump(format!("split node {id} needs `yes` and `no`"))),
        };
        let card = self.schema.features()[feature].cardinality;
        let yes_set = match (node.threshold, &node.categories) {
            (Some(t), None) => self.threshold_set(feature, t)?,
            (None, Some(cats)) => {
                if let Some(&bad) = cats.iter().find(|&&c| c >= card) {
                    return Err(Error::Dump(format!(
                        "node {id}: category {bad} out of range for `{name}`"
                    )));
                }
                let mut c = cats.clone();
                c.sort_unstable();
                c.dedup();
                c
            }
            _ => {
                return Err(Error::Dump(format!(
                    "split node {id} needs exactly one of `threshold` or `categories`"
                )))
            }
        };
        let no_set: Vec<u32> = (0..card).filter(|v| !yes_set.contains(v)).collect();
        let default_branch = match node.missing {
            None => None,
            Some(m) if m == yes => Some(0),
            Some(m) if m == no => Some(1),
            Some(m) => {
                return Err(Error::Dump(format!(
                    "node {id}: missing child {m} is neither `yes` nor `no`"
                )))
            }
        };

        self.nodes.push(Node::Leaf { theta: 0.0 });
        self.on_path.insert(id);
        let yes_child = self.build(yes)?;
        let no_child = self.build(no)?;
        self.on_path.remove(&id);
        self.done.insert(id);
        self.nodes[slot] = Node::Split {
            feature,
            branches: vec![
                Branch {
                    categories: yes_set,
                    child: yes_child,
                },
                Branch {
                    categories: no_set,
                    child: no_child,
                },
            ],
            default_branch,
        };
        Ok(slot)
    }

    /// Categories sent to `yes` by a `value < threshold` test.
    fn threshold_set(&self, feature: usize, t: f64) -> Result<Vec<u32>> {
        let f = &self.schema.features()[feature];
        let out_of_range = || Error::ThresholdOutOfRange {
            feature: f.name.clone(),
            threshold: t,
        };
        if !t.is_finite() {
            return Err(out_of_range());
        }
        let binned = self
            .binning
            .and_then(|b| b.column(&f.name))
            .and_then(|c| match &c.encoding {
                ColumnEncoding::Continuous { cuts, min, max } => Some((cuts, *min, *max)),
                ColumnEncoding::Categorical { .. } => None,
            });
        match binned {
            Some((cuts, min, max)) => {
                if t < min || t > max {
                    return Err(out_of_range());
                }
                let bin = cuts.partition_point(|&c| c < t) as u32;
                Ok((0..bin).collect())
            }
            None => {
                if t < 0.0 || t > f.cardinality as f64 {
                    return Err(out_of_range());
                }
                Ok((0..f.cardinality).filter(|&v| (v as f64) < t).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnBinning;
    use crate::trees::MissingPolicy;
    use crate::data::PartialAssignment;

    fn schema() -> FeatureSchema {
        FeatureSchema::with_cardinalities(&[2, 4], "y").unwrap()
    }

    const ONE_SPLIT: &str = r#"{
        "format": "exptree-dump/1",
        "trees": [{ "root": {
            "nodeid": 0, "split": "x0", "categories": [0], "yes": 1, "no": 2, "missing": 1,
            "children": [ {"nodeid": 1, "leaf": 1.0}, {"nodeid": 2, "leaf": 3.0} ]
        }}]
    }"#;

    #[test]
    fn minimal_dump() {
        let p = parse_dump(ONE_SPLIT, &schema(), None).unwrap();
        assert_eq!(p.forest.trees().len(), 1);
        let t = &p.forest.trees()[0];
        assert_eq!(t.n_leaves(), 2);
        assert_eq!(p.excluded_leaves, 0);
        match &t.nodes()[0] {
            Node::Split { default_branch, .. } => assert_eq!(*default_branch, Some(0)),
            _ => panic!("root should split"),
        }
        let x = PartialAssignment(vec![Some(1), None]);
        assert_eq!(t.evaluate(&x, MissingPolicy::Error).unwrap(), 3.0);
    }

    #[test]
    fn flat_nodes_and_index_thresholds() {
        let text = r#"{
            "format": "exptree-dump/1",
            "trees": [{ "weight": 0.5, "nodes": [
                {"nodeid": 0, "split": "x1", "threshold": 2.0, "yes": 1, "no": 2},
                {"nodeid": 1, "leaf": -1.0},
                {"nodeid": 2, "leaf": 1.0}
            ]}]
        }"#;
        let p = parse_dump(text, &schema(), None).unwrap();
        let t = &p.forest.trees()[0];
        assert_eq!(t.leaf_constraints(0).allowed_values(1), vec![0, 1]);
        assert_eq!(t.leaf_constraints(1).allowed_values(1), vec![2, 3]);
        assert_eq!(p.forest.omegas(), &[0.5]);
    }

    #[test]
    fn missing_only_leaf_is_excluded() {
        // x1 < 2 (yes), then x1 < 3 with missing -> no: the `no` leaf needs
        // x1 in {0,1} and x1 in {3}, so only a missing value reaches it.
        let text = r#"{
            "format": "exptree-dump/1",
            "trees": [{ "root": {
                "nodeid": 0, "split": "x1", "threshold": 2, "yes": 1, "no": 2, "missing": 1,
                "children": [
                    {"nodeid": 1, "split": "x1", "threshold": 3, "yes": 3, "no": 4, "missing": 4,
                     "children": [ {"nodeid": 3, "leaf": 0.5}, {"nodeid": 4, "leaf": 9.0} ]},
                    {"nodeid": 2, "leaf": 2.0}
                ]
            }}]
        }"#;
        let p = parse_dump(text, &schema(), None).unwrap();
        assert_eq!(p.excluded_leaves, 1);
        let t = &p.forest.trees()[0];
        assert!(t.is_excluded(1));
        assert!(!t.is_excluded(0) && !t.is_excluded(2));
    }

    #[test]
    fn binned_thresholds_map_to_bins() {
        let binning = BinningSpec {
            target_name: "y".into(),
            columns: vec![
                ColumnBinning {
                    name: "x0".into(),
                    encoding: ColumnEncoding::Categorical { levels: vec!["a".into(), "b".into()] },
                },
                ColumnBinning {
                    name: "x1".into(),
                    encoding: ColumnEncoding::Continuous { cuts: vec![1.0, 2.0, 3.0], min: 0.0, max: 4.0 },
                },
            ],
        };
        let dump = |t: f64| {
            format!(
                r#"{{"format":"exptree-dump/1","trees":[{{"nodes":[
                {{"nodeid":0,"split":"x1","threshold":{t},"yes":1,"no":2}},
                {{"nodeid":1,"leaf":0}},{{"nodeid":2,"leaf":1}}]}}]}}"#
            )
        };
        let p = parse_dump(&dump(2.5), &schema(), Some(&binning)).unwrap();
        // 2.5 lies in bin 2 = (2, 3]; yes gets bins 0 and 1.
        assert_eq!(p.forest.trees()[0].leaf_constraints(0).allowed_values(1), vec![0, 1]);
        assert!(matches!(
            parse_dump(&dump(7.0), &schema(), Some(&binning)),
            Err(Error::ThresholdOutOfRange { .. })
        ));
    }

    #[test]
    fn unknown_feature_and_cycles() {
        let unknown = ONE_SPLIT.replace("\"x0\"", "\"nope\"");
        assert!(matches!(parse_dump(&unknown, &schema(), None), Err(Error::UnknownFeature(_))));

        let cyclic = r#"{"format":"exptree-dump/1","trees":[{"nodes":[
            {"nodeid":0,"split":"x0","categories":[0],"yes":1,"no":0},
            {"nodeid":1,"leaf":0}]}]}"#;
        assert!(matches!(parse_dump(cyclic, &schema(), None), Err(Error::CyclicTree(0))));
    }
}
