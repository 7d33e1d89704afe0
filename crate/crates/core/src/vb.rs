//! Mean-field variational Bayes for one regression equation under the
//! two-class normal-gamma prior, and the assembly of all p equations into a
//! network fit.
//!
//! For equation i with response y (n), design X (n×s) and prior row mask m,
//! the factorisation q(β) q(τ²₀) q(τ²₁) q(σ⁻²) has the conjugate updates
//!
//! ```text
//! A      = XᵀX + diag(E τ²_{m_r})
//! Σ*     = [E(σ⁻²) A]⁻¹,     β* = A⁻¹ Xᵀy
//! a*_k   = a_k + s_k/2,      b*_k = b_k + ½ E(σ⁻²) Σ_{m_r=k} E β_r²
//! a*_2   = a_2 + n/2 + s/2,  b*_2 = b_2 + ½ Σ_r E(τ²_{m_r}) E β_r² + ½ E‖y − Xβ‖²
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AdjacencyMatrix, DataMatrix};
use crate::special::{gamma_cross_log_density, gamma_entropy, gamma_expected_log};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Gamma hyperparameters (shape, rate) of the two coefficient-precision
/// classes and of the error precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub a0: f64,
    pub b0: f64,
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            a0: 1.0,
            b0: 1.0,
            a1: 1.0,
            b1: 1.0,
            a2: 0.001,
            b2: 0.001,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a0, self.b0, self.a1, self.b1, self.a2, self.b2];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "hyperparameters must be finite and positive: {self:?}"
            )))
        }
    }

    /// (shape, rate) of the prior for class `k` ∈ {0, 1}.
    pub fn class(&self, k: usize) -> (f64, f64) {
        if k == 0 {
            (self.a0, self.b0)
        } else {
            (self.a1, self.b1)
        }
    }

    pub fn with_class(mut self, k: usize, shape: f64, rate: f64) -> Self {
        if k == 0 {
            self.a0 = shape;
            self.b0 = rate;
        } else {
            self.a1 = shape;
            self.b1 = rate;
        }
        self
    }

    /// Same hyperparameters with the two coefficient classes exchanged.
    pub fn swapped(&self) -> Self {
        Hyperparameters {
            a0: self.a1,
            b0: self.b1,
            a1: self.a0,
            b1: self.b0,
            ..*self
        }
    }

    pub fn prior_mean_tau0(&self) -> f64 {
        self.a0 / self.b0
    }

    pub fn prior_mean_tau1(&self) -> f64 {
        self.a1 / self.b1
    }
}

/// Gamma distribution in (shape, rate) form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFactor {
    pub shape: f64,
    pub rate: f64,
}

impl GammaFactor {
    pub fn new(shape: f64, rate: f64) -> Self {
        GammaFactor { shape, rate }
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn sd(&self) -> f64 {
        self.shape.sqrt() / self.rate
    }

    pub fn expected_log(&self) -> f64 {
        gamma_expected_log(self.shape, self.rate)
    }

    pub fn entropy(&self) -> f64 {
        gamma_entropy(self.shape, self.rate)
    }
}

/// Row i of the prior adjacency with the diagonal removed; `true` marks
/// class 1 (edge present in the prior network).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorRow {
    mask: Vec<bool>,
}

impl PriorRow {
    pub fn new(mask: Vec<bool>) -> Self {
        PriorRow { mask }
    }

    pub fn all(s: usize, present: bool) -> Self {
        PriorRow {
            mask: vec![present; s],
        }
    }

    pub fn from_adjacency(adj: &AdjacencyMatrix, i: usize) -> Self {
        PriorRow {
            mask: adj.row_without_diagonal(i),
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn class_of(&self, r: usize) -> usize {
        usize::from(self.mask[r])
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// (s⁰, s¹): number of predictors in each class.
    pub fn counts(&self) -> (usize, usize) {
        let s1 = self.mask.iter().filter(|&&m| m).count();
        (self.mask.len() - s1, s1)
    }

    pub fn class_size(&self, k: usize) -> usize {
        let (s0, s1) = self.counts();
        if k == 0 {
            s0
        } else {
            s1
        }
    }
}

/// Variational posterior of one regression equation.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationPosterior {
    pub beta_mean: DVector<f64>,
    pub beta_cov: DMatrix<f64>,
    pub tau0: GammaFactor,
    pub tau1: GammaFactor,
    pub sigma_inv: GammaFactor,
    pub elbo: f64,
    /// Lower bound after every sweep.
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl EquationPosterior {
    pub fn tau(&self, k: usize) -> &GammaFactor {
        if k == 0 {
            &self.tau0
        } else {
            &self.tau1
        }
    }

    pub fn beta_sd(&self, r: usize) -> f64 {
        self.beta_cov[(r, r)].sqrt()
    }
}

/// One of the four variational factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Beta,
    Tau0,
    Tau1,
    SigmaInv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbSettings {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Order of the factor updates within a sweep.
    pub order: [Factor; 4],
}

impl Default for VbSettings {
    fn default() -> Self {
        VbSettings {
            max_iter: 200,
            rel_tol: 1e-6,
            order: [Factor::Beta, Factor::Tau0, Factor::Tau1, Factor::SigmaInv],
        }
    }
}

/// Sufficient statistics of one regression equation.
#[derive(Debug, Clone)]
pub struct Equation {
    n: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    y_var: f64,
    prior: PriorRow,
}

impl Equation {
    pub fn new(y: &DVector<f64>, x: &DMatrix<f64>, prior: PriorRow) -> Result<Self> {
        let n = y.len();
        let s = x.ncols();
        if n == 0 || s == 0 {
            return Err(Error::Dimension(format!("equation needs n >= 1 and s >= 1, got n = {n}, s = {s}")));
        }
        if x.nrows() != n {
            return Err(Error::Dimension(format!("X has {} rows, y has {n}", x.nrows())));
        }
        if prior.len() != s {
            return Err(Error::Dimension(format!("prior row has {} entries, X has {s} columns", prior.len())));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entries in y or X".into()));
        }
        let mean = y.mean();
        let ss = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let y_var = if n > 1 { ss / (n as f64 - 1.0) } else { y[0] * y[0] };
        Ok(Equation {
            n,
            xtx: x.tr_mul(x),
            xty: x.tr_mul(y),
            yty: y.norm_squared(),
            y_var: if y_var > 0.0 { y_var } else { 1.0 },
            prior,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.xty.len()
    }

    pub fn prior(&self) -> &PriorRow {
        &self.prior
    }

    pub fn xtx(&self) -> &DMatrix<f64> {
        &self.xtx
    }

    pub fn xty(&self) -> &DVector<f64> {
        &self.xty
    }

    pub fn yty(&self) -> f64 {
        self.yty
    }

    /// Sample variance of y, used for the starting value of E(σ⁻²).
    pub fn y_var(&self) -> f64 {
        self.y_var
    }

    /// Shape of q(τ²_k); data independent.
    pub fn tau_shape(&self, hyper: &Hyperparameters, k: usize) -> f64 {
        hyper.class(k).0 + 0.5 * self.prior.class_size(k) as f64
    }

    /// Shape of q(σ⁻²); data independent.
    pub fn sigma_shape(&self, hyper: &Hyperparameters) -> f64 {
        hyper.a2 + 0.5 * self.n as f64 + 0.5 * self.s() as f64
    }

    /// ‖y − Xb‖² from the precomputed cross products.
    pub fn residual_ss(&self, b: &DVector<f64>) -> f64 {
        let quad = b.dot(&(&self.xtx * b));
        (self.yty - 2.0 * b.dot(&self.xty) + quad).max(0.0)
    }

    /// A = XᵀX + diag(d) together with its Cholesky factor.
    pub(crate) fn factor(&self, d: &DVector<f64>) -> Result<Cholesky<f64, Dyn>> {
        let mut a = self.xtx.clone();
        for (r, dr) in d.iter().enumerate() {
            a[(r, r)] += dr;
        }
        a.cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("XᵀX + D".into()))
    }

    fn penalty(&self, tau_means: [f64; 2]) -> DVector<f64> {
        DVector::from_iterator(
            self.s(),
            (0..self.s()).map(|r| tau_means[self.prior.class_of(r)]),
        )
    }
}

/// Moments of q(β) needed by the other updates: A = XᵀX + D is the
/// unscaled precision, so Σ* = A⁻¹ / E(σ⁻²).
#[derive(Debug, Clone)]
struct BetaFactor {
    mean: DVector<f64>,
    /// diag(A⁻¹)
    inv_diag: DVector<f64>,
    /// L⁻¹ with A = L Lᵀ
    l_inv: DMatrix<f64>,
    logdet_a: f64,
    scale: f64,
    penalty: DVector<f64>,
}

impl BetaFactor {
    fn compute(eq: &Equation, e_sigma_inv: f64, tau_means: [f64; 2]) -> Result<Self> {
        let penalty = eq.penalty(tau_means);
        let chol = eq.factor(&penalty)?;
        let mean = chol.solve(&eq.xty);
        let l = chol.l();
        let s = eq.s();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(s, s))
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factor".into()))?;
        let inv_diag = DVector::from_iterator(s, l_inv.column_iter().map(|c| c.norm_squared()));
        let logdet_a = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(BetaFactor {
            mean,
            inv_diag,
            l_inv,
            logdet_a,
            scale: e_sigma_inv,
            penalty,
        })
    }

    /// E β_r² = β*_r² + Σ*_rr
    fn second_moment(&self, r: usize) -> f64 {
        self.mean[r].powi(2) + self.inv_diag[r] / self.scale
    }

    /// E‖y − Xβ‖² = ‖y − Xβ*‖² + tr(XᵀX Σ*), using tr(XᵀX A⁻¹) = s − Σ d_r A⁻¹_rr.
    fn expected_residual(&self, eq: &Equation) -> f64 {
        let tr = eq.s() as f64 - self.penalty.dot(&self.inv_diag);
        eq.residual_ss(&self.mean) + tr.max(0.0) / self.scale
    }

    fn covariance(&self) -> DMatrix<f64> {
        let mut cov = self.l_inv.tr_mul(&self.l_inv);
        cov /= self.scale;
        cov
    }

    /// log det Σ*
    fn logdet_cov(&self) -> f64 {
        -self.logdet_a - self.mean.len() as f64 * self.scale.ln()
    }
}

/// Sum over predictors of class `k` of E β_r².
fn class_second_moment(eq: &Equation, beta: &BetaFactor, k: usize) -> f64 {
    (0..eq.s())
        .filter(|&r| eq.prior.class_of(r) == k)
        .map(|r| beta.second_moment(r))
        .sum()
}

#[derive(Debug, Clone)]
struct State {
    beta: BetaFactor,
    tau: [GammaFactor; 2],
    sigma_inv: GammaFactor,
}

impl State {
    fn tau_means(&self) -> [f64; 2] {
        [self.tau[0].mean(), self.tau[1].mean()]
    }

    fn update(&mut self, eq: &Equation, hyper: &Hyperparameters, factor: Factor) -> Result<()> {
        match factor {
            Factor::Beta => {
                self.beta = BetaFactor::compute(eq, self.sigma_inv.mean(), self.tau_means())?;
            }
            Factor::Tau0 | Factor::Tau1 => {
                let k = usize::from(factor == Factor::Tau1);
                let (a, b) = hyper.class(k);
                self.tau[k] = if eq.prior.class_size(k) == 0 {
                    GammaFactor::new(a, b)
                } else {
                    let rate = b + 0.5 * self.sigma_inv.mean() * class_second_moment(eq, &self.beta, k);
                    GammaFactor::new(eq.tau_shape(hyper, k), rate)
                };
            }
            Factor::SigmaInv => {
                let tau_means = self.tau_means();
                let weighted: f64 = (0..eq.s())
                    .map(|r| tau_means[eq.prior.class_of(r)] * self.beta.second_moment(r))
                    .sum();
                let rate = hyper.b2 + 0.5 * weighted + 0.5 * self.beta.expected_residual(eq);
                self.sigma_inv = GammaFactor::new(eq.sigma_shape(hyper), rate);
            }
        }
        Ok(())
    }

    fn elbo(&self, eq: &Equation, hyper: &Hyperparameters) -> f64 {
        let beta = &self.beta;
        let second: Vec<f64> = (0..eq.s()).map(|r| beta.second_moment(r)).collect();
        let terms = ElboInputs {
            second_moments: &second,
            expected_residual: beta.expected_residual(eq),
            logdet_cov: beta.logdet_cov(),
            tau: &self.tau,
            sigma_inv: &self.sigma_inv,
        };
        terms.evaluate(eq, hyper)
    }
}

struct ElboInputs<'a> {
    second_moments: &'a [f64],
    expected_residual: f64,
    logdet_cov: f64,
    tau: &'a [GammaFactor; 2],
    sigma_inv: &'a GammaFactor,
}

impl ElboInputs<'_> {
    fn evaluate(&self, eq: &Equation, hyper: &Hyperparameters) -> f64 {
        let n = eq.n() as f64;
        let s = eq.s() as f64;
        let e_lambda = self.sigma_inv.mean();
        let log_lambda = self.sigma_inv.expected_log();

        let loglik = 0.5 * n * (log_lambda - LN_2PI) - 0.5 * e_lambda * self.expected_residual;

        let mut log_prior_beta = 0.5 * s * (log_lambda - LN_2PI);
        for (r, m2) in self.second_moments.iter().enumerate() {
            let tau = &self.tau[eq.prior.class_of(r)];
            log_prior_beta += 0.5 * tau.expected_log() - 0.5 * e_lambda * tau.mean() * m2;
        }

        // An empty class keeps q = prior, so its prior and entropy terms cancel.
        let mut tau_terms = 0.0;
        for k in 0..2 {
            if eq.prior.class_size(k) > 0 {
                let (a, b) = hyper.class(k);
                let q = &self.tau[k];
                tau_terms += gamma_cross_log_density(a, b, q.shape, q.rate) + q.entropy();
            }
        }
        let q = self.sigma_inv;
        let sigma_terms = gamma_cross_log_density(hyper.a2, hyper.b2, q.shape, q.rate) + q.entropy();

        let beta_entropy = 0.5 * s * (1.0 + LN_2PI) + 0.5 * self.logdet_cov;

        loglik + log_prior_beta + tau_terms + sigma_terms + beta_entropy
    }
}

/// Starting point for the coordinate ascent.
#[derive(Debug, Clone, Copy)]
pub enum VbStart<'a> {
    /// E(σ⁻²) = 1/var(y), E(τ²_k) = a_k/b_k.
    Default,
    /// Continue from the τ and σ⁻² factors of an earlier fit of the same equation.
    Warm(&'a EquationPosterior),
}

/// Fits q for one equation from raw data.
pub fn vb_fit_equation(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    prior_row: &PriorRow,
    hyper: &Hyperparameters,
    settings: &VbSettings,
) -> Result<EquationPosterior> {
    let eq = Equation::new(y, x, prior_row.clone())?;
    fit_equation(&eq, hyper, settings, VbStart::Default)
}

/// Coordinate ascent on precomputed sufficient statistics.
pub fn fit_equation(
    eq: &Equation,
    hyper: &Hyperparameters,
    settings: &VbSettings,
    start: VbStart<'_>,
) -> Result<EquationPosterior> {
    hyper.validate()?;
    let sigma_shape = eq.sigma_shape(hyper);
    let (tau, sigma_inv) = match start {
        VbStart::Default => (
            [
                GammaFactor::new(hyper.a0, hyper.b0),
                GammaFactor::new(hyper.a1, hyper.b1),
            ],
            GammaFactor::new(sigma_shape, sigma_shape * eq.y_var),
        ),
        VbStart::Warm(prev) => ([prev.tau0, prev.tau1], prev.sigma_inv),
    };
    let tau = [0, 1].map(|k| {
        if eq.prior.class_size(k) == 0 {
            let (a, b) = hyper.class(k);
            GammaFactor::new(a, b)
        } else {
            tau[k]
        }
    });
    let beta = BetaFactor::compute(eq, sigma_inv.mean(), [tau[0].mean(), tau[1].mean()])?;
    let mut state = State {
        beta,
        tau,
        sigma_inv,
    };

    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 1..=settings.max_iter {
        for &factor in &settings.order {
            state.update(eq, hyper, factor)?;
        }
        let elbo = state.elbo(eq, hyper);
        if !elbo.is_finite() {
            return Err(Error::NonFiniteElbo { iteration });
        }
        let previous = trace.last().copied();
        trace.push(elbo);
        if let Some(prev) = previous {
            if ((elbo - prev) / elbo.abs().max(f64::MIN_POSITIVE)).abs() < settings.rel_tol {
                converged = true;
                break;
            }
        }
    }

    Ok(EquationPosterior {
        beta_mean: state.beta.mean.clone(),
        beta_cov: state.beta.covariance(),
        tau0: state.tau[0],
        tau1: state.tau[1],
        sigma_inv: state.sigma_inv,
        elbo: *trace.last().unwrap_or(&f64::NAN),
        iterations: trace.len(),
        converged,
        elbo_trace: trace,
    })
}

/// Lower bound E_q[log p(y, θ)] − E_q[log q(θ)] for an arbitrary factorised q.
pub fn elbo(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    prior_row: &PriorRow,
    hyper: &Hyperparameters,
    posterior: &EquationPosterior,
) -> Result<f64> {
    let eq = Equation::new(y, x, prior_row.clone())?;
    elbo_of(&eq, hyper, posterior)
}

pub(crate) fn elbo_of(
    eq: &Equation,
    hyper: &Hyperparameters,
    posterior: &EquationPosterior,
) -> Result<f64> {
    let s = eq.s();
    if posterior.beta_mean.len() != s || posterior.beta_cov.shape() != (s, s) {
        return Err(Error::Dimension("posterior does not match equation size".into()));
    }
    let cov = &posterior.beta_cov;
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("posterior covariance".into()))?;
    let logdet_cov = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mean = &posterior.beta_mean;
    let second: Vec<f64> = (0..s).map(|r| mean[r].powi(2) + cov[(r, r)]).collect();
    let trace_term = eq.xtx.component_mul(cov).sum();
    let inputs = ElboInputs {
        second_moments: &second,
        expected_residual: eq.residual_ss(mean) + trace_term,
        logdet_cov,
        tau: &[posterior.tau0, posterior.tau1],
        sigma_inv: &posterior.sigma_inv,
    };
    Ok(inputs.evaluate(eq, hyper))
}

/// Variational posteriors of all p equations.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPosterior {
    pub equations: Vec<EquationPosterior>,
    pub hyper: Hyperparameters,
    pub total_elbo: f64,
}

impl NetworkPosterior {
    pub fn p(&self) -> usize {
        self.equations.len()
    }
}

/// Per-node equations of a data set under a prior network.
pub fn build_equations(data: &DataMatrix, prior: &AdjacencyMatrix) -> Result<Vec<Equation>> {
    if prior.p() != data.p() {
        return Err(Error::Dimension(format!(
            "prior has p = {}, data have p = {}",
            prior.p(),
            data.p()
        )));
    }
    (0..data.p())
        .map(|i| {
            let (y, x) = data.equation(i);
            Equation::new(&y, &x, PriorRow::from_adjacency(prior, i))
        })
        .collect()
}

/// Fits every node's regression on all other nodes.
pub fn fit_network(
    data: &DataMatrix,
    prior: &AdjacencyMatrix,
    hyper: &Hyperparameters,
    settings: &VbSettings,
) -> Result<NetworkPosterior> {
    let equations = build_equations(data, prior)?;
    fit_equations(&equations, hyper, settings, None)
}

/// Fits prebuilt equations, optionally warm-starting from an earlier network fit.
pub fn fit_equations(
    equations: &[Equation],
    hyper: &Hyperparameters,
    settings: &VbSettings,
    warm: Option<&NetworkPosterior>,
) -> Result<NetworkPosterior> {
    let fitted: Vec<EquationPosterior> = equations
        .par_iter()
        .enumerate()
        .map(|(i, eq)| {
            let start = warm.map_or(VbStart::Default, |w| VbStart::Warm(&w.equations[i]));
            fit_equation(eq, hyper, settings, start).map_err(|e| Error::Equation {
                node: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let total_elbo = fitted.iter().map(|e| e.elbo).sum();
    Ok(NetworkPosterior {
        equations: fitted,
        hyper: *hyper,
        total_elbo,
    })
}
