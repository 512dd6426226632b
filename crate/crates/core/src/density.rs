//! Mixture of fully-factorized categorical distributions.
//!
//! Marginals of product-form events (a set of allowed values per feature)
//! are exact and cost `O(K * F * cardinality)`:
//!
//! ```text
//! p(c) = sum_k w_k * prod_f sum_{v in allowed(f)} table[k][f][v]
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PartialAssignment};
use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

/// Per-feature allowed value sets. `None` means unconstrained.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConstraintSet {
    cardinalities: Vec<u32>,
    allowed: Vec<Option<Vec<bool>>>,
}

impl ConstraintSet {
    pub fn unconstrained(cardinalities: &[u32]) -> Self {
        Self {
            cardinalities: cardinalities.to_vec(),
            allowed: vec![None; cardinalities.len()],
        }
    }

    /// Pins every observed feature of `xo` to its value.
    pub fn from_assignment(cardinalities: &[u32], xo: &PartialAssignment) -> Result<Self> {
        if xo.len() != cardinalities.len() {
            return Err(Error::DimensionMismatch {
                expected: cardinalities.len(),
                got: xo.len(),
            });
        }
        let mut c = Self::unconstrained(cardinalities);
        for (f, v) in xo.values().iter().enumerate() {
            if let Some(v) = *v {
                if v >= cardinalities[f] {
                    return Err(Error::ValueOutOfRange {
                        feature: format!("#{f}"),
                        value: v,
                        cardinality: cardinalities[f],
                    });
                }
                c.restrict(f, &[v]);
            }
        }
        Ok(c)
    }

    pub fn cardinalities(&self) -> &[u32] {
        &self.cardinalities
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    /// Intersects feature `f`'s allowed set with `values`.
    pub fn restrict(&mut self, f: usize, values: &[u32]) {
        let card = self.cardinalities[f] as usize;
        let mut mask = vec![false; card];
        for &v in values {
            if (v as usize) < card {
                mask[v as usize] = true;
            }
        }
        self.allowed[f] = Some(match self.allowed[f].take() {
            None => mask,
            Some(prev) => prev.iter().zip(&mask).map(|(&a, &b)| a && b).collect(),
        });
    }

    pub fn is_constrained(&self, f: usize) -> bool {
        self.allowed[f].is_some()
    }

    pub fn allows(&self, f: usize, v: u32) -> bool {
        match &self.allowed[f] {
            None => v < self.cardinalities[f],
            Some(mask) => mask.get(v as usize).copied().unwrap_or(false),
        }
    }

    /// Sorted allowed values of feature `f`.
    pub fn allowed_values(&self, f: usize) -> Vec<u32> {
        (0..self.cardinalities[f]).filter(|&v| self.allows(f, v)).collect()
    }

    pub fn is_contradictory(&self) -> bool {
        self.allowed
            .iter()
            .any(|a| matches!(a, Some(mask) if !mask.iter().any(|&b| b)))
    }

    /// Whether a complete assignment satisfies every constraint.
    pub fn contains(&self, x: &[u32]) -> bool {
        x.len() == self.len() && x.iter().enumerate().all(|(f, &v)| self.allows(f, v))
    }

    /// `self` is a per-feature subset of `other`.
    pub fn is_subset_of(&self, other: &ConstraintSet) -> bool {
        (0..self.len()).all(|f| {
            (0..self.cardinalities[f]).all(|v| !self.allows(f, v) || other.allows(f, v))
        })
    }

    pub fn intersect(&self, other: &ConstraintSet) -> Result<ConstraintSet> {
        if self.cardinalities != other.cardinalities {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        let allowed = self
            .allowed
            .iter()
            .zip(&other.allowed)
            .map(|(a, b)| match (a, b) {
                (None, None) => None,
                (Some(m), None) | (None, Some(m)) => Some(m.clone()),
                (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(&x, &y)| x && y).collect()),
            })
            .collect();
        Ok(ConstraintSet {
            cardinalities: self.cardinalities.clone(),
            allowed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDensity {
    cardinalities: Vec<u32>,
    weights: Vec<f64>,
    /// `tables[k][f][v]` = p(X_f = v | component k).
    tables: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct DensityFile {
    format: String,
    #[serde(flatten)]
    density: MixtureDensity,
}

pub const DENSITY_FORMAT: &str = "exptree-density/1";

impl MixtureDensity {
    pub fn new(cardinalities: Vec<u32>, weights: Vec<f64>, tables: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let d = Self {
            cardinalities,
            weights,
            tables,
        };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.weights.is_empty() {
            return bad("mixture needs at least one component".into());
        }
        if self.tables.len() != self.weights.len() {
            return bad("one table set per component required".into());
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return bad("mixture weights must be nonnegative".into());
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return bad(format!("mixture weights sum to {total}"));
        }
        for (k, comp) in self.tables.iter().enumerate() {
            if comp.len() != self.cardinalities.len() {
                return bad(format!("component {k} has {} feature tables", comp.len()));
            }
            for (f, row) in comp.iter().enumerate() {
                if row.len() != self.cardinalities[f] as usize {
                    return bad(format!("component {k} feature {f}: wrong table length"));
                }
                if row.iter().any(|&p| !(p >= 0.0)) {
                    return bad(format!("component {k} feature {f}: negative entry"));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > SUM_TOLERANCE {
                    return bad(format!("component {k} feature {f}: table sums to {s}"));
                }
            }
        }
        Ok(())
    }

    /// Every component uniform over every feature.
    pub fn uniform(cardinalities: &[u32], k: usize) -> Self {
        let comp: Vec<Vec<f64>> = cardinalities
            .iter()
            .map(|&c| vec![1.0 / c as f64; c as usize])
            .collect();
        Self {
            cardinalities: cardinalities.to_vec(),
            weights: vec![1.0 / k as f64; k],
            tables: vec![comp; k],
        }
    }

    pub fn cardinalities(&self) -> &[u32] {
        &self.cardinalities
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn n_features(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tables(&self) -> &[Vec<Vec<f64>>] {
        &self.tables
    }

    pub fn marginal(&self, c: &ConstraintSet) -> Result<f64> {
        if c.cardinalities() != self.cardinalities.as_slice() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: c.len(),
            });
        }
        if c.is_contradictory() {
            return Ok(0.0);
        }
        let constrained: Vec<(usize, &Vec<bool>)> = c
            .allowed
            .iter()
            .enumerate()
            .filter_map(|(f, a)| a.as_ref().map(|m| (f, m)))
            .collect();
        if constrained.is_empty() {
            return Ok(1.0);
        }
        let mut total = 0.0;
        for (w, comp) in self.weights.iter().zip(&self.tables) {
            let mut prod = *w;
            for &(f, mask) in &constrained {
                let s: f64 = comp[f]
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(p, _)| p)
                    .sum();
                prod *= s;
            }
            total += prod;
        }
        Ok(total.clamp(0.0, 1.0))
    }

    /// p(event | given).
    pub fn conditional(&self, event: &ConstraintSet, given: &ConstraintSet) -> Result<f64> {
        let denom = self.marginal(given)?;
        if denom <= 0.0 {
            return Err(Error::ZeroProbabilityEvidence);
        }
        let num = self.marginal(&event.intersect(given)?)?;
        Ok((num / denom).min(1.0))
    }

    /// Probability of the observed part of `xo`.
    pub fn evidence(&self, xo: &PartialAssignment) -> Result<f64> {
        self.marginal(&ConstraintSet::from_assignment(&self.cardinalities, xo)?)
    }

    /// Per-component log joint of the observed slots, `log w_k + sum log p`.
    fn component_log_joint(&self, xo: &PartialAssignment, out: &mut [f64]) {
        for (k, (w, comp)) in self.weights.iter().zip(&self.tables).enumerate() {
            let mut lp = w.ln();
            for (f, v) in xo.values().iter().enumerate() {
                if let Some(v) = *v {
                    lp += comp[f][v as usize].ln();
                }
            }
            out[k] = lp;
        }
    }

    /// Observed-data log-likelihood of `ds`.
    pub fn log_likelihood(&self, ds: &Dataset) -> Result<f64> {
        if ds.schema().cardinalities() != self.cardinalities {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: ds.schema().len(),
            });
        }
        let mut buf = vec![0.0; self.n_components()];
        let mut ll = 0.0;
        for r in ds.rows() {
            self.component_log_joint(&r.assignment, &mut buf);
            ll += log_sum_exp(&buf);
        }
        Ok(ll)
    }

    /// Draws one complete assignment.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u32> {
        let k = sample_index(&self.weights, rng);
        self.tables[k]
            .iter()
            .map(|row| sample_index(row, rng) as u32)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DensityFile {
            format: DENSITY_FORMAT.into(),
            density: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DensityFile = serde_json::from_str(text)?;
        if file.format != DENSITY_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unsupported density format `{}`",
                file.format
            )));
        }
        file.density.validate()?;
        Ok(file.density)
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub components: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Pseudo-count added to every category of every table.
    pub epsilon: f64,
    /// Relative log-likelihood change below which EM stops early.
    pub tolerance: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            components: 4,
            iterations: 50,
            seed: 0,
            epsilon: 1e-3,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub density: MixtureDensity,
    /// Observed-data log-likelihood after initialization and after every
    /// M-step, in order.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
}

/// Fits a mixture by EM, marginalizing missing slots out of the E-step.
///
/// Starts from random responsibilities drawn from `seed`; with
/// `iterations == 0` the smoothed initial model is returned.
pub fn em_fit(ds: &Dataset, cfg: &EmConfig) -> Result<EmFit> {
    let k = cfg.components;
    if k == 0 {
        return Err(Error::InvalidArgument("component count must be at least 1".into()));
    }
    if ds.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a density on an empty dataset".into()));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::InvalidArgument("smoothing epsilon must be positive".into()));
    }
    if k > ds.len() {
        log::warn!("{k} components for {} rows", ds.len());
    }
    let cards = ds.schema().cardinalities();
    let n = ds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut resp = vec![0.0; n * k];
    for row in resp.chunks_mut(k) {
        let mut s = 0.0;
        for r in row.iter_mut() {
            *r = 0.5 + rng.random::<f64>();
            s += *r;
        }
        row.iter_mut().for_each(|r| *r /= s);
    }

    let mut density = m_step(ds, &cards, &resp, k, cfg.epsilon);
    let mut lls = vec![density.log_likelihood(ds)?];
    let mut iterations = 0;
    let mut buf = vec![0.0; k];
    for _ in 0..cfg.iterations {
        for (r, row) in ds.rows().iter().zip(resp.chunks_mut(k)) {
            density.component_log_joint(&r.assignment, &mut buf);
            let lse = log_sum_exp(&buf);
            for (dst, lp) in row.iter_mut().zip(&buf) {
                *dst = (lp - lse).exp();
            }
        }
        density = m_step(ds, &cards, &resp, k, cfg.epsilon);
        iterations += 1;
        let ll = density.log_likelihood(ds)?;
        let prev = *lls.last().unwrap();
        lls.push(ll);
        if (ll - prev).abs() <= cfg.tolerance * prev.abs() {
            break;
        }
    }
    Ok(EmFit {
        density,
        log_likelihoods: lls,
        iterations,
    })
}

fn m_step(ds: &Dataset, cards: &[u32], resp: &[f64], k: usize, eps: f64) -> MixtureDensity {
    let n = ds.len();
    let mut counts: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| cards.iter().map(|&c| vec![0.0; c as usize]).collect())
        .collect();
    let mut mass = vec![0.0; k];
    for (r, row) in ds.rows().iter().zip(resp.chunks(k)) {
        for (j, &q) in row.iter().enumerate() {
            mass[j] += q;
            for (f, v) in r.assignment.values().iter().enumerate() {
                if let Some(v) = *v {
                    counts[j][f][v as usize] += q;
                }
            }
        }
    }
    let weights: Vec<f64> = mass.iter().map(|m| m / n as f64).collect();
    let tables = counts
        .into_iter()
        .map(|comp| {
            comp.into_iter()
                .map(|row| {
                    let total: f64 = row.iter().sum::<f64>() + eps * row.len() as f64;
                    row.into_iter().map(|c| (c + eps) / total).collect()
                })
                .collect()
        })
        .collect();
    let wsum: f64 = weights.iter().sum();
    MixtureDensity {
        cardinalities: cards.to_vec(),
        weights: weights.iter().map(|w| w / wsum).collect(),
        tables,
    }
}
