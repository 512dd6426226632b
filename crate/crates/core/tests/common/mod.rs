//! Shared test support: random instance generators and a brute-force
//! oracle that enumerates every completion of the missing features.
//!
//! The oracle only reads raw mixture parameters and raw tree nodes, so it
//! shares no inference code with the library.

#![allow(dead_code)]

use exptree::data::{Dataset, FeatureSchema, PartialAssignment, Row};
use exptree::trees::{Branch, Node, TreeModel};
use exptree::MixtureDensity;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

/// Every complete assignment, first feature varying slowest.
pub fn all_states(cards: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for &c in cards {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..c).map(move |v| {
                    let mut x = prefix.clone();
                    x.push(v);
                    x
                })
            })
            .collect();
    }
    out
}

pub fn completions(cards: &[u32], xo: &PartialAssignment) -> Vec<Vec<u32>> {
    all_states(cards)
        .into_iter()
        .filter(|x| xo.values().iter().zip(x).all(|(o, v)| o.is_none_or(|o| o == *v)))
        .collect()
}

/// Point probability of a complete assignment under the mixture.
pub fn point_prob(d: &MixtureDensity, x: &[u32]) -> f64 {
    d.weights()
        .iter()
        .zip(d.tables())
        .map(|(w, comp)| w * x.iter().enumerate().map(|(f, &v)| comp[f][v as usize]).product::<f64>())
        .sum()
}

/// Output of a tree on a complete input, found by walking the raw nodes.
pub fn walk(t: &TreeModel, x: &[u32]) -> f64 {
    let mut id = 0;
    loop {
        match &t.nodes()[id] {
            Node::Leaf { theta } => return *theta,
            Node::Split { feature, branches, .. } => {
                id = branches
                    .iter()
                    .find(|b| b.categories.contains(&x[*feature]))
                    .expect("branches cover every category")
                    .child;
            }
        }
    }
}

/// `E[g(X) | xo]` by enumeration; `None` when `p(xo) = 0`.
pub fn expect<G: Fn(&[u32]) -> f64>(d: &MixtureDensity, xo: &PartialAssignment, g: G) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for x in completions(d.cardinalities(), xo) {
        let p = point_prob(d, &x);
        num += p * g(&x);
        den += p;
    }
    (den > 0.0).then(|| num / den)
}

/// Mean over labelled rows of `E[(g(X) - y)^2 | xo]`.
pub fn expected_mse_oracle<G: Fn(&[u32]) -> f64>(d: &MixtureDensity, ds: &Dataset, g: G) -> f64 {
    let rows: Vec<&Row> = ds.rows().iter().filter(|r| r.target.is_some()).collect();
    let total: f64 = rows
        .iter()
        .map(|r| {
            let y = r.target.unwrap();
            expect(d, &r.assignment, |x| (g(x) - y).powi(2)).expect("positive evidence")
        })
        .sum();
    total / rows.len() as f64
}

// ---------------------------------------------------------------------------
// Random instances
// ---------------------------------------------------------------------------

/// Cardinality vectors with at most `max_states` joint states.
pub fn random_cards(rng: &mut ChaCha8Rng, max_states: u32) -> Vec<u32> {
    loop {
        let n = rng.random_range(1..=3);
        let cards: Vec<u32> = (0..n).map(|_| rng.random_range(2..=4)).collect();
        if cards.iter().product::<u32>() <= max_states {
            return cards;
        }
    }
}

/// Random mixture. With `zeros`, table entries are occasionally exactly 0.
pub fn random_density(rng: &mut ChaCha8Rng, cards: &[u32], max_k: usize, zeros: bool) -> MixtureDensity {
    let k = rng.random_range(1..=max_k);
    let normalize = |v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|p| p / s).collect::<Vec<f64>>()
    };
    let weights = normalize((0..k).map(|_| 0.05 + rng.random::<f64>()).collect());
    let tables = (0..k)
        .map(|_| {
            cards
                .iter()
                .map(|&c| {
                    let mut row: Vec<f64> = (0..c).map(|_| 0.05 + rng.random::<f64>()).collect();
                    if zeros && rng.random_bool(0.15) {
                        let v = rng.random_range(0..c) as usize;
                        row[v] = 0.0;
                    }
                    normalize(row)
                })
                .collect()
        })
        .collect();
    MixtureDensity::new(cards.to_vec(), weights, tables).unwrap()
}

/// Random tree of depth at most `max_depth`. Splits have two or three
/// branches; with `empty_branches` a branch set is sometimes empty, which
/// produces leaves reachable only through missing values.
pub fn random_tree(rng: &mut ChaCha8Rng, cards: &[u32], max_depth: usize, empty_branches: bool) -> TreeModel {
    let mut nodes = Vec::new();
    grow(rng, cards, max_depth, empty_branches, &mut nodes);
    TreeModel::new(cards.to_vec(), nodes).unwrap()
}

fn grow(rng: &mut ChaCha8Rng, cards: &[u32], depth: usize, empty: bool, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    let theta = rng.random_range(-5.0..5.0);
    if depth == 0 || rng.random_bool(0.25) {
        nodes.push(Node::Leaf { theta });
        return id;
    }
    nodes.push(Node::Leaf { theta: 0.0 });
    let feature = rng.random_range(0..cards.len());
    let card = cards[feature];
    let n_branches = if card >= 3 && rng.random_bool(0.3) { 3 } else { 2 };
    let mut sets: Vec<Vec<u32>> = vec![Vec::new(); n_branches];
    let mut cats: Vec<u32> = (0..card).collect();
    cats.shuffle(rng);
    let allow_empty = empty && rng.random_bool(0.2);
    for (i, &v) in cats.iter().enumerate() {
        // the first categories seed each branch unless an empty one is wanted
        let b = if i < n_branches && !allow_empty { i } else { rng.random_range(0..n_branches) };
        sets[b].push(v);
    }
    for s in &mut sets {
        s.sort_unstable();
    }
    let children: Vec<usize> = (0..n_branches).map(|_| grow(rng, cards, depth - 1, empty, nodes)).collect();
    nodes[id] = Node::Split {
        feature,
        branches: sets
            .into_iter()
            .zip(children)
            .map(|(categories, child)| Branch { categories, child })
            .collect(),
        default_branch: Some(rng.random_range(0..n_branches)),
    };
    id
}

/// Each feature missing with probability `p_missing`, otherwise uniform.
pub fn random_evidence(rng: &mut ChaCha8Rng, cards: &[u32], p_missing: f64) -> PartialAssignment {
    PartialAssignment::new(
        cards
            .iter()
            .map(|&c| (!rng.random_bool(p_missing)).then(|| rng.random_range(0..c)))
            .collect(),
    )
}

pub fn random_dataset(rng: &mut ChaCha8Rng, cards: &[u32], n: usize, p_missing: f64) -> Dataset {
    let schema = FeatureSchema::with_cardinalities(cards, "y").unwrap();
    let rows = (0..n)
        .map(|_| Row {
            assignment: random_evidence(rng, cards, p_missing),
            target: Some(rng.random_range(-3.0..3.0)),
        })
        .collect();
    Dataset::new(schema, rows).unwrap()
}

pub fn complete_dataset(rng: &mut ChaCha8Rng, cards: &[u32], n: usize) -> Dataset {
    random_dataset(rng, cards, n, 0.0)
}
