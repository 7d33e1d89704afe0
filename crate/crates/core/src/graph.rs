//! Ground-truth networks: precision matrices for benchmark topologies, GGM
//! sampling, and adjacency utilities (thresholding, prior corruption,
//! complement).

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default threshold separating structural zeros of Ω from rounding noise.
pub const DEFAULT_SUPPORT_TOL: f64 = 1e-10;

/// Symmetric positive-definite precision matrix Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix(DMatrix<f64>);

impl PrecisionMatrix {
    /// Validates symmetry and positive definiteness.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Dimension(format!(
                "precision matrix is {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let p = entries.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                if entries[(i, j)] != entries[(j, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "precision matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if entries.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(
                "Cholesky factorization of the precision matrix failed".into(),
            ));
        }
        Ok(PrecisionMatrix(entries))
    }

    pub fn identity(p: usize) -> Self {
        PrecisionMatrix(DMatrix::identity(p, p))
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Regression coefficient of node `r` in the equation for node `i`:
    /// β_{i,r} = −ω_ir / ω_ii.
    pub fn regression_coefficient(&self, i: usize, r: usize) -> f64 {
        -self.0[(i, r)] / self.0[(i, i)]
    }
}

/// Symmetric binary adjacency matrix with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AdjacencyMatrix {
    p: usize,
    entries: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn empty(p: usize) -> Self {
        AdjacencyMatrix {
            p,
            entries: vec![false; p * p],
        }
    }

    pub fn complete(p: usize) -> Self {
        complement(&Self::empty(p))
    }

    /// Builds an adjacency from undirected pairs; order within a pair is ignored.
    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Self::empty(p);
        for &(i, j) in edges {
            if i >= p || j >= p {
                return Err(Error::Dimension(format!("edge ({i}, {j}) outside p = {p}")));
            }
            if i == j {
                return Err(Error::InvalidArgument(format!("self-loop at node {i}")));
            }
            adj.set(i, j, true);
        }
        Ok(adj)
    }

    /// Builds an adjacency from a dense row-major 0/1 matrix, validating
    /// symmetry and an empty diagonal.
    pub fn from_dense(p: usize, values: &[u8]) -> Result<Self> {
        if values.len() != p * p {
            return Err(Error::Dimension(format!(
                "expected {} entries, got {}",
                p * p,
                values.len()
            )));
        }
        let mut adj = Self::empty(p);
        for i in 0..p {
            for j in 0..p {
                let v = values[i * p + j];
                if v > 1 {
                    return Err(Error::InvalidArgument(format!(
                        "entry ({i}, {j}) = {v} is not 0 or 1"
                    )));
                }
                if i == j && v != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "diagonal entry ({i}, {i}) must be 0"
                    )));
                }
                if v != values[j * p + i] {
                    return Err(Error::InvalidArgument(format!(
                        "asymmetric entry at ({i}, {j})"
                    )));
                }
                adj.entries[i * p + j] = v == 1;
            }
        }
        Ok(adj)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.p + j]
    }

    fn set(&mut self, i: usize, j: usize, present: bool) {
        self.entries[i * self.p + j] = present;
        self.entries[j * self.p + i] = present;
    }

    /// Present edges as (i, j) with i < j, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        upper_pairs(self.p)
            .filter(|&(i, j)| self.has_edge(i, j))
            .collect()
    }

    /// Absent off-diagonal pairs as (i, j) with i < j, in lexicographic order.
    pub fn non_edges(&self) -> Vec<(usize, usize)> {
        upper_pairs(self.p)
            .filter(|&(i, j)| !self.has_edge(i, j))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        upper_pairs(self.p).filter(|&(i, j)| self.has_edge(i, j)).count()
    }

    /// Row `i` with the diagonal element removed, in predictor order.
    pub fn row_without_diagonal(&self, i: usize) -> Vec<bool> {
        (0..self.p)
            .filter(|&r| r != i)
            .map(|r| self.has_edge(i, r))
            .collect()
    }

    pub fn to_dense(&self) -> Vec<u8> {
        self.entries.iter().map(|&b| u8::from(b)).collect()
    }
}

/// All unordered node pairs (i, j), i < j, in lexicographic order.
pub fn upper_pairs(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..p).flat_map(move |i| ((i + 1)..p).map(move |j| (i, j)))
}

/// n×p observation matrix: rows are samples, columns are nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    names: Option<Vec<String>>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 1 || values.ncols() < 2 {
            return Err(Error::Dimension(format!(
                "data matrix must have n >= 1 and p >= 2, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("data contain non-finite values".into()));
        }
        Ok(DataMatrix {
            values,
            names: None,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::Dimension(format!(
                "{} names for {} columns",
                names.len(),
                self.p()
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Node labels: header names when present, 1-based indices otherwise.
    pub fn labels(&self) -> Vec<String> {
        match &self.names {
            Some(names) => names.clone(),
            None => (1..=self.p()).map(|i| i.to_string()).collect(),
        }
    }

    /// Copy with each column centered and scaled to unit sample variance.
    pub fn standardized(&self) -> Result<Self> {
        let n = self.n();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "standardization needs at least two rows".into(),
            ));
        }
        let mut values = self.values.clone();
        for (j, mut col) in values.column_iter_mut().enumerate() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            let var = col.norm_squared() / (n as f64 - 1.0);
            if !(var > 0.0) {
                let label = self
                    .names
                    .as_ref()
                    .map_or_else(|| (j + 1).to_string(), |names| names[j].clone());
                return Err(Error::InvalidArgument(format!(
                    "column {label} is constant and cannot be standardized"
                )));
            }
            col.scale_mut(1.0 / var.sqrt());
        }
        Ok(DataMatrix {
            values,
            names: self.names.clone(),
        })
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let values = self.values.select_rows(rows);
        Ok(DataMatrix {
            values,
            names: self.names.clone(),
        })
    }

    /// Response `Y_i` and design `X_i` (all other columns, original order).
    pub fn equation(&self, i: usize) -> (DVector<f64>, DMatrix<f64>) {
        let y = self.values.column(i).into_owned();
        let x = self.values.clone().remove_column(i);
        (y, x)
    }
}

/// Maps predictor index `j` of equation `i` back to its node.
pub fn predictor_node(i: usize, j: usize) -> usize {
    if j < i {
        j
    } else {
        j + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Topology {
    /// Band of half-width `bandwidth`; off-diagonal |i−j| = d ≤ b gets
    /// strength·(1 − d/(b+1)). Strength defaults to 0.4/b.
    Band {
        bandwidth: usize,
        strength: Option<f64>,
    },
    /// Consecutive blocks of `block_size` nodes with constant off-diagonal `value`.
    Cluster { block_size: usize, value: f64 },
    /// Stars: each hub is followed by `spokes` nodes linked to it with entry `value`.
    Hub { spokes: usize, value: f64 },
}

impl Topology {
    pub fn band(bandwidth: usize) -> Self {
        Topology::Band {
            bandwidth,
            strength: None,
        }
    }

    pub fn cluster(block_size: usize) -> Self {
        Topology::Cluster {
            block_size,
            value: 0.3,
        }
    }

    pub fn hub(spokes: usize) -> Self {
        Topology::Hub {
            spokes,
            value: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub p: usize,
    #[serde(flatten)]
    pub topology: Topology,
}

impl TopologySpec {
    pub fn new(p: usize, topology: Topology) -> Self {
        TopologySpec { p, topology }
    }
}

/// Builds the precision matrix for a benchmark topology.
///
/// All three generators are deterministic; `seed` is accepted so callers can
/// treat generation uniformly with the stochastic steps of a simulation.
pub fn gen_precision(spec: &TopologySpec, _seed: u64) -> Result<PrecisionMatrix> {
    let p = spec.p;
    if p < 2 {
        return Err(Error::InvalidTopology(format!("p = {p}, need at least 2 nodes")));
    }
    let mut omega = DMatrix::<f64>::identity(p, p);
    match spec.topology {
        Topology::Band {
            bandwidth,
            strength,
        } => {
            if bandwidth == 0 || bandwidth >= p {
                return Err(Error::InvalidTopology(format!(
                    "bandwidth {bandwidth} must lie in 1..{p}"
                )));
            }
            let c = strength.unwrap_or(0.4 / bandwidth as f64);
            if !c.is_finite() {
                return Err(Error::InvalidTopology("band strength must be finite".into()));
            }
            let b = bandwidth as f64;
            for i in 0..p {
                for d in 1..=bandwidth.min(p - 1 - i) {
                    let v = c * (1.0 - d as f64 / (b + 1.0));
                    omega[(i, i + d)] = v;
                    omega[(i + d, i)] = v;
                }
            }
        }
        Topology::Cluster { block_size, value } => {
            if block_size < 2 || block_size > p {
                return Err(Error::InvalidTopology(format!(
                    "block size {block_size} must lie in 2..={p}"
                )));
            }
            if !(value.abs() < 1.0 / (block_size as f64 - 1.0)) {
                return Err(Error::InvalidTopology(format!(
                    "cluster value {value} violates |v| < 1/(m-1) for m = {block_size}"
                )));
            }
            for start in (0..p).step_by(block_size) {
                let end = (start + block_size).min(p);
                for i in start..end {
                    for j in start..end {
                        if i != j {
                            omega[(i, j)] = value;
                        }
                    }
                }
            }
        }
        Topology::Hub { spokes, value } => {
            if spokes == 0 || spokes >= p {
                return Err(Error::InvalidTopology(format!(
                    "spokes per hub {spokes} must lie in 1..{p}"
                )));
            }
            // Schur complement of the spoke block: 1 − m·v² > 0.
            if !(spokes as f64 * value * value < 1.0) {
                return Err(Error::InvalidTopology(format!(
                    "hub value {value} violates m·v² < 1 for m = {spokes}"
                )));
            }
            for hub in (0..p).step_by(spokes + 1) {
                for spoke in (hub + 1)..(hub + 1 + spokes).min(p) {
                    omega[(hub, spoke)] = value;
                    omega[(spoke, hub)] = value;
                }
            }
        }
    }
    PrecisionMatrix::new(omega)
}

/// Draws `n` iid rows from N(0, Ω⁻¹).
pub fn sample_ggm(omega: &PrecisionMatrix, n: usize, seed: u64) -> Result<DataMatrix> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let p = omega.p();
    let chol = omega
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("precision matrix".into()))?;
    let lower = chol.l();
    let upper = lower.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = DMatrix::<f64>::zeros(n, p);
    let mut z = DVector::<f64>::zeros(p);
    for row in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        // Lᵀ y = z gives Cov(y) = (L Lᵀ)⁻¹.
        let y = upper
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::NotPositiveDefinite("triangular factor".into()))?;
        values.row_mut(row).copy_from(&y.transpose());
    }
    DataMatrix::new(values)
}

/// Support of Ω: edge (i, j) iff |ω_ij| > tol.
pub fn precision_to_adjacency(omega: &PrecisionMatrix, tol: f64) -> AdjacencyMatrix {
    let p = omega.p();
    let mut adj = AdjacencyMatrix::empty(p);
    for (i, j) in upper_pairs(p) {
        if omega.matrix()[(i, j)].abs() > tol {
            adj.set(i, j, true);
        }
    }
    adj
}

/// Swaps `round(swap_fraction·|E|)` present edges for the same number of
/// absent pairs, both chosen uniformly without replacement.
pub fn perturb_prior(
    truth: &AdjacencyMatrix,
    swap_fraction: f64,
    seed: u64,
) -> Result<AdjacencyMatrix> {
    if !(0.0..=1.0).contains(&swap_fraction) {
        return Err(Error::InvalidArgument(format!(
            "swap fraction {swap_fraction} outside [0, 1]"
        )));
    }
    let present = truth.edges();
    let absent = truth.non_edges();
    let k = (swap_fraction * present.len() as f64).round() as usize;
    if k > absent.len() {
        return Err(Error::InsufficientAbsentPairs {
            needed: k,
            available: absent.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let removed = sample(&mut rng, present.len(), k);
    let added = sample(&mut rng, absent.len(), k);
    let mut out = truth.clone();
    for idx in removed.iter() {
        let (i, j) = present[idx];
        out.set(i, j, false);
    }
    for idx in added.iter() {
        let (i, j) = absent[idx];
        out.set(i, j, true);
    }
    Ok(out)
}

/// Flips every off-diagonal entry.
pub fn complement(adj: &AdjacencyMatrix) -> AdjacencyMatrix {
    let p = adj.p();
    let mut out = AdjacencyMatrix::empty(p);
    for (i, j) in upper_pairs(p) {
        out.set(i, j, !adj.has_edge(i, j));
    }
    out
}
