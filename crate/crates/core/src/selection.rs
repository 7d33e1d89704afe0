//! Edge ranking from fitted posteriors and the evaluation harnesses: ROC
//! against a known network and split-half reproducibility of the top edges.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{predictor_node, upper_pairs, AdjacencyMatrix, DataMatrix};
use crate::vb::NetworkPosterior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// |posterior mean| / posterior sd of the regression coefficient.
    PosteriorZ,
    /// Externally supplied scores (e.g. read back from an edge list).
    External,
}

/// p×p non-negative edge evidence with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScoreMatrix {
    scores: DMatrix<f64>,
    symmetrized: bool,
    kind: ScoreKind,
}

impl EdgeScoreMatrix {
    pub fn new(scores: DMatrix<f64>, symmetrized: bool, kind: ScoreKind) -> Result<Self> {
        if !scores.is_square() {
            return Err(Error::Dimension("score matrix must be square".into()));
        }
        let p = scores.nrows();
        for i in 0..p {
            if scores[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument(format!("nonzero diagonal score at {i}")));
            }
            for j in 0..p {
                let v = scores[(i, j)];
                if !(v >= 0.0) {
                    return Err(Error::InvalidArgument(format!("score ({i}, {j}) = {v} is not >= 0")));
                }
                if symmetrized && v != scores[(j, i)] {
                    return Err(Error::InvalidArgument(format!("asymmetric score at ({i}, {j})")));
                }
            }
        }
        Ok(EdgeScoreMatrix {
            scores,
            symmetrized,
            kind,
        })
    }

    /// Symmetric scores from undirected pairs; missing pairs score 0.
    pub fn from_pairs(p: usize, pairs: &[((usize, usize), f64)]) -> Result<Self> {
        let mut scores = DMatrix::zeros(p, p);
        for &((i, j), v) in pairs {
            if i >= p || j >= p || i == j {
                return Err(Error::InvalidArgument(format!("invalid pair ({i}, {j})")));
            }
            scores[(i, j)] = v;
            scores[(j, i)] = v;
        }
        Self::new(scores, true, ScoreKind::External)
    }

    pub fn p(&self) -> usize {
        self.scores.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn is_symmetrized(&self) -> bool {
        self.symmetrized
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    /// Undirected pairs ordered by descending score, ties in lexicographic
    /// pair order.
    pub fn ranked_pairs(&self) -> Vec<((usize, usize), f64)> {
        let mut pairs: Vec<_> = upper_pairs(self.p())
            .map(|(i, j)| ((i, j), self.scores[(i, j)]))
            .collect();
        // stable sort keeps the lexicographic order among ties
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
        pairs
    }

    fn require_symmetrized(&self) -> Result<()> {
        if self.symmetrized {
            Ok(())
        } else {
            Err(Error::InvalidArgument("operation needs symmetrized scores".into()))
        }
    }
}

/// Directed scores z[i, r] = |β*_{i,r}| / sd(β_{i,r}).
pub fn edge_scores(network: &NetworkPosterior) -> Result<EdgeScoreMatrix> {
    let p = network.p();
    let mut scores = DMatrix::zeros(p, p);
    for (i, eq) in network.equations.iter().enumerate() {
        if eq.beta_mean.len() != p - 1 {
            return Err(Error::Dimension(format!(
                "equation {i} has {} coefficients, expected {}",
                eq.beta_mean.len(),
                p - 1
            )));
        }
        for j in 0..p - 1 {
            let var = eq.beta_cov[(j, j)];
            if !(var > 0.0) {
                return Err(Error::DegeneratePosterior {
                    node: i,
                    predictor: predictor_node(i, j),
                });
            }
            scores[(i, predictor_node(i, j))] = eq.beta_mean[j].abs() / var.sqrt();
        }
    }
    EdgeScoreMatrix::new(scores, false, ScoreKind::PosteriorZ)
}

/// AND rule on continuous scores: an edge is as strong as its weaker direction.
pub fn symmetrize(scores: &EdgeScoreMatrix) -> EdgeScoreMatrix {
    let m = &scores.scores;
    let p = m.nrows();
    let sym = DMatrix::from_fn(p, p, |i, j| m[(i, j)].min(m[(j, i)]));
    EdgeScoreMatrix {
        scores: sym,
        symmetrized: true,
        kind: scores.kind,
    }
}

/// Unordered node pairs, stored as (i, j) with i < j.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeSet(BTreeSet<(usize, usize)>);

impl EdgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, i: usize, j: usize) -> bool {
        self.0.insert((i.min(j), i.max(j)))
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.0.contains(&(i.min(j), i.max(j)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.0.iter()
    }

    pub fn is_subset(&self, other: &EdgeSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromIterator<(usize, usize)> for EdgeSet {
    fn from_iter<T: IntoIterator<Item = (usize, usize)>>(iter: T) -> Self {
        let mut set = EdgeSet::new();
        for (i, j) in iter {
            set.insert(i, j);
        }
        set
    }
}

/// The k highest-scoring pairs; ties broken by lexicographic pair order.
pub fn top_k(scores: &EdgeScoreMatrix, k: usize) -> Result<EdgeSet> {
    scores.require_symmetrized()?;
    let p = scores.p();
    let available = p * (p - 1) / 2;
    if k > available {
        return Err(Error::TooManyEdges { k, available });
    }
    Ok(scores
        .ranked_pairs()
        .into_iter()
        .take(k)
        .map(|(pair, _)| pair)
        .collect())
}

/// |a ∩ b|
pub fn overlap(a: &EdgeSet, b: &EdgeSet) -> usize {
    a.0.intersection(&b.0).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoints {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

impl RocPoints {
    fn from_curve(fpr: Vec<f64>, tpr: Vec<f64>) -> Self {
        let auc = fpr
            .windows(2)
            .zip(tpr.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * 0.5 * (y[0] + y[1]))
            .sum();
        RocPoints { fpr, tpr, auc }
    }

    pub fn len(&self) -> usize {
        self.fpr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fpr.is_empty()
    }

    /// Linear interpolation of TPR at `x`; on a vertical segment the upper
    /// value is used.
    pub fn tpr_at(&self, x: f64) -> f64 {
        let last_le = self.fpr.iter().rposition(|&f| f <= x);
        match last_le {
            None => self.tpr[0],
            Some(idx) if idx + 1 == self.fpr.len() || self.fpr[idx] == x => self.tpr[idx],
            Some(idx) => {
                let (x0, x1) = (self.fpr[idx], self.fpr[idx + 1]);
                let (y0, y1) = (self.tpr[idx], self.tpr[idx + 1]);
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }
}

/// ROC over unordered pairs; pairs with tied scores enter together.
pub fn roc(scores: &EdgeScoreMatrix, truth: &AdjacencyMatrix) -> Result<RocPoints> {
    scores.require_symmetrized()?;
    if scores.p() != truth.p() {
        return Err(Error::Dimension(format!(
            "scores have p = {}, truth has p = {}",
            scores.p(),
            truth.p()
        )));
    }
    let ranked = scores.ranked_pairs();
    let positives = ranked.iter().filter(|((i, j), _)| truth.has_edge(*i, *j)).count();
    let negatives = ranked.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateTruth);
    }
    let (mut fpr, mut tpr) = (vec![0.0], vec![0.0]);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut idx = 0;
    while idx < ranked.len() {
        let threshold = ranked[idx].1;
        while idx < ranked.len() && ranked[idx].1 == threshold {
            let (i, j) = ranked[idx].0;
            if truth.has_edge(i, j) {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        fpr.push(fp as f64 / negatives as f64);
        tpr.push(tp as f64 / positives as f64);
    }
    Ok(RocPoints::from_curve(fpr, tpr))
}

/// Evenly spaced FPR grid with `points` values from 0 to 1.
pub fn fpr_grid(points: usize) -> Vec<f64> {
    let last = (points.max(2) - 1) as f64;
    (0..points.max(2)).map(|i| i as f64 / last).collect()
}

/// Pointwise mean of the replicate curves after interpolation onto `grid`.
pub fn average_roc(per_replicate: &[RocPoints], grid: &[f64]) -> Result<RocPoints> {
    if per_replicate.is_empty() {
        return Err(Error::InvalidArgument("no ROC replicates to average".into()));
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("FPR grid must be non-empty and sorted".into()));
    }
    let reps = per_replicate.len() as f64;
    let mut fpr = grid.to_vec();
    let mut tpr: Vec<f64> = grid
        .iter()
        .map(|&x| per_replicate.iter().map(|r| r.tpr_at(x)).sum::<f64>() / reps)
        .collect();
    if fpr[0] > 0.0 || tpr[0] > 0.0 {
        fpr.insert(0, 0.0);
        tpr.insert(0, 0.0);
    }
    Ok(RocPoints::from_curve(fpr, tpr))
}

/// Row indices of a random split into halves of sizes floor(n/2) and ceil(n/2).
pub fn split_half_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut second = idx.split_off(n / 2);
    idx.sort_unstable();
    second.sort_unstable();
    (idx, second)
}

pub fn split_half(data: &DataMatrix, seed: u64) -> Result<(DataMatrix, DataMatrix)> {
    if data.n() < 2 {
        return Err(Error::InvalidArgument("split needs at least two rows".into()));
    }
    let (a, b) = split_half_indices(data.n(), seed);
    Ok((data.select_rows(&a)?, data.select_rows(&b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub replicate: usize,
    pub k: usize,
    pub overlap: usize,
}

/// Split-half reproducibility: for each replicate the rows are split at
/// random, both halves are scored by `score`, and the top-k edge sets of the
/// two halves are intersected for every k. Replicate r uses split seed
/// `seed + r`.
pub fn split_repro<F>(
    data: &DataMatrix,
    ks: &[usize],
    replicates: usize,
    seed: u64,
    mut score: F,
) -> Result<Vec<OverlapRow>>
where
    F: FnMut(&DataMatrix) -> Result<EdgeScoreMatrix>,
{
    if ks.is_empty() || replicates == 0 {
        return Err(Error::InvalidArgument("need at least one k and one replicate".into()));
    }
    let mut rows = Vec::with_capacity(ks.len() * replicates);
    for replicate in 0..replicates {
        let (a, b) = split_half(data, seed.wrapping_add(replicate as u64))?;
        let (sa, sb) = (score(&a)?, score(&b)?);
        for &k in ks {
            let overlap = overlap(&top_k(&sa, k)?, &top_k(&sb, k)?);
            rows.push(OverlapRow {
                replicate,
                k,
                overlap,
            });
        }
    }
    Ok(rows)
}

/// Mean overlap per k, in the order the k values first appear.
pub fn mean_overlap(rows: &[OverlapRow]) -> Vec<(usize, f64)> {
    let mut ks: Vec<usize> = Vec::new();
    for r in rows {
        if !ks.contains(&r.k) {
            ks.push(r.k);
        }
    }
    ks.into_iter()
        .map(|k| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.k == k).map(|r| r.overlap as f64).collect();
            (k, vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}
