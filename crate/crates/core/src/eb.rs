//! Global empirical Bayes for the coefficient-precision hyperparameters
//! (a0, b0, a1, b1).
//!
//! The part of the summed lower bound that depends on (a_k, b_k) is
//! Σ_i [a_k log b_k − log Γ(a_k) + (a_k − 1) E log τ²_{i,k} − b_k E τ²_{i,k}],
//! a gamma log-likelihood in the averaged sufficient statistics
//! T1 = mean E τ² and T2 = mean E log τ². Each EB step is therefore a gamma
//! maximum-likelihood fit, alternated with VB refits of all equations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AdjacencyMatrix, DataMatrix};
use crate::special::{digamma, trigamma};
use crate::vb::{
    build_equations, fit_equations, Equation, Hyperparameters, NetworkPosterior, VbSettings,
};

pub const MIN_SHAPE: f64 = 1e-3;
pub const MAX_SHAPE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clamp {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub shape: f64,
    pub rate: f64,
    /// Set when the shape estimate hit [`MIN_SHAPE`] or [`MAX_SHAPE`].
    pub clamped: Option<Clamp>,
}

/// Gamma (shape, rate) maximising
/// a·log b − log Γ(a) + (a − 1)·T2 − b·T1.
///
/// The rate profiles out as b = a/T1, leaving log a − ψ(a) = log T1 − T2,
/// which is solved by Newton's method in log a with a bisection fallback.
pub fn gamma_mle(mean_stat: f64, log_mean_stat: f64) -> Result<GammaFit> {
    if !(mean_stat > 0.0 && mean_stat.is_finite() && log_mean_stat.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gamma MLE needs T1 > 0 and finite T2, got ({mean_stat}, {log_mean_stat})"
        )));
    }
    let gap = mean_stat.ln() - log_mean_stat;
    if gap < -1e-10 * (1.0 + log_mean_stat.abs()) {
        return Err(Error::InvalidArgument(format!(
            "log T1 − T2 = {gap} violates Jensen's inequality"
        )));
    }
    // g(a) = log a − ψ(a) is strictly decreasing from +∞ to 0.
    let g = |a: f64| a.ln() - digamma(a);
    let finish = |shape: f64, clamped| GammaFit {
        shape,
        rate: shape / mean_stat,
        clamped,
    };
    if gap <= g(MAX_SHAPE) {
        return Ok(finish(MAX_SHAPE, Some(Clamp::Upper)));
    }
    if gap >= g(MIN_SHAPE) {
        return Ok(finish(MIN_SHAPE, Some(Clamp::Lower)));
    }

    let (mut lo, mut hi) = (MIN_SHAPE.ln(), MAX_SHAPE.ln());
    // Minka's closed-form start.
    let mut a = (3.0 - gap + ((gap - 3.0).powi(2) + 24.0 * gap).sqrt()) / (12.0 * gap);
    let mut t = a.clamp(MIN_SHAPE, MAX_SHAPE).ln();
    for _ in 0..200 {
        a = t.exp();
        let f = g(a) - gap;
        if f > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        // d/dt g(e^t) = a (1/a − ψ'(a)) = 1 − a ψ'(a)
        let slope = 1.0 - a * trigamma(a);
        let mut next = t - f / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() < 1e-14 * t.abs().max(1.0) {
            t = next;
            break;
        }
        t = next;
    }
    Ok(finish(t.exp(), None))
}

/// Averages (T1, T2) of q(τ²_k) over the equations where class k is non-empty.
pub fn class_statistics(
    network: &NetworkPosterior,
    prior: &AdjacencyMatrix,
    k: usize,
) -> Option<(f64, f64)> {
    let mut count = 0usize;
    let (mut t1, mut t2) = (0.0, 0.0);
    for (i, eq) in network.equations.iter().enumerate() {
        let in_class = (0..prior.p())
            .filter(|&r| r != i)
            .any(|r| usize::from(prior.has_edge(i, r)) == k);
        if in_class {
            let tau = eq.tau(k);
            t1 += tau.mean();
            t2 += tau.expected_log();
            count += 1;
        }
    }
    (count > 0).then(|| (t1 / count as f64, t2 / count as f64))
}

/// One EB step: refits (a_k, b_k) for both classes; (a2, b2) are untouched.
pub fn eb_update(
    network: &NetworkPosterior,
    prior: &AdjacencyMatrix,
    current: &Hyperparameters,
) -> Result<Hyperparameters> {
    if network.p() != prior.p() {
        return Err(Error::Dimension(format!(
            "network has {} equations, prior has p = {}",
            network.p(),
            prior.p()
        )));
    }
    let mut next = *current;
    for k in 0..2 {
        if let Some((t1, t2)) = class_statistics(network, prior, k) {
            let fit = gamma_mle(t1, t2)?;
            next = next.with_class(k, fit.shape, fit.rate);
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EbSchedule {
    /// VB to convergence between EB updates.
    FullPass,
    /// A single VB sweep per equation between EB updates.
    Blended,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbSettings {
    pub outer_max: usize,
    pub outer_tol: f64,
    pub vb: VbSettings,
    pub schedule: EbSchedule,
}

impl Default for EbSettings {
    fn default() -> Self {
        EbSettings {
            outer_max: 100,
            outer_tol: 1e-4,
            vb: VbSettings::default(),
            schedule: EbSchedule::FullPass,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbFitResult {
    pub network: NetworkPosterior,
    /// Hyperparameters after each outer iteration, starting with the initial values.
    pub hyper_trace: Vec<Hyperparameters>,
    /// Summed lower bound after each VB phase.
    pub elbo_trace: Vec<f64>,
    pub final_hyper: Hyperparameters,
    pub prior_mean_tau0: f64,
    pub prior_mean_tau1: f64,
    pub ratio: f64,
    pub outer_iterations: usize,
    pub converged: bool,
}

fn max_relative_change(a: &Hyperparameters, b: &Hyperparameters) -> f64 {
    [(a.a0, b.a0), (a.b0, b.b0), (a.a1, b.a1), (a.b1, b.b1)]
        .iter()
        .map(|(x, y)| (x - y).abs() / x.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Alternates VB network fits with EB hyperparameter updates.
///
/// Each VB phase warm-starts from the previous one, so the summed lower bound
/// is non-decreasing over outer iterations. The returned network is fitted at
/// `final_hyper`.
pub fn eb_fit(
    data: &DataMatrix,
    prior: &AdjacencyMatrix,
    init: &Hyperparameters,
    settings: &EbSettings,
) -> Result<EbFitResult> {
    init.validate()?;
    let equations = build_equations(data, prior)?;
    eb_fit_equations(&equations, prior, init, settings)
}

pub fn eb_fit_equations(
    equations: &[Equation],
    prior: &AdjacencyMatrix,
    init: &Hyperparameters,
    settings: &EbSettings,
) -> Result<EbFitResult> {
    let inner = match settings.schedule {
        EbSchedule::FullPass => settings.vb.clone(),
        EbSchedule::Blended => VbSettings {
            max_iter: 1,
            ..settings.vb.clone()
        },
    };
    let mut hyper = *init;
    let mut hyper_trace = vec![hyper];
    let mut elbo_trace = Vec::new();
    let mut network = fit_equations(equations, &hyper, &inner, None)?;
    elbo_trace.push(network.total_elbo);
    let mut converged = false;
    let mut outer_iterations = 0;

    while outer_iterations < settings.outer_max {
        outer_iterations += 1;
        let next = eb_update(&network, prior, &hyper)?;
        let change = max_relative_change(&hyper, &next);
        hyper = next;
        hyper_trace.push(hyper);
        network = fit_equations(equations, &hyper, &inner, Some(&network))?;
        elbo_trace.push(network.total_elbo);
        if change < settings.outer_tol {
            converged = true;
            break;
        }
    }

    if settings.schedule == EbSchedule::Blended {
        network = fit_equations(equations, &hyper, &settings.vb, Some(&network))?;
        elbo_trace.push(network.total_elbo);
    }

    let prior_mean_tau0 = hyper.prior_mean_tau0();
    let prior_mean_tau1 = hyper.prior_mean_tau1();
    Ok(EbFitResult {
        network,
        hyper_trace,
        elbo_trace,
        final_hyper: hyper,
        prior_mean_tau0,
        prior_mean_tau1,
        ratio: prior_mean_tau0 / prior_mean_tau1,
        outer_iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{
        complement, gen_precision, precision_to_adjacency, sample_ggm, PrecisionMatrix, Topology,
        TopologySpec, DEFAULT_SUPPORT_TOL,
    };
    use crate::special::ln_gamma;
    use crate::vb::{EquationPosterior, GammaFactor};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn objective(a: f64, b: f64, t1: f64, t2: f64) -> f64 {
        a * b.ln() - ln_gamma(a) + (a - 1.0) * t2 - b * t1
    }

    #[test]
    fn recovers_gamma_two_two() {
        let t2 = digamma(2.0) - 2f64.ln();
        let fit = gamma_mle(1.0, t2).unwrap();
        assert!((fit.shape - 2.0).abs() < 1e-9, "{fit:?}");
        assert!((fit.rate - 2.0).abs() < 1e-9);
        assert_eq!(fit.clamped, None);

        // brute-force grid around the optimum
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..400 {
            for j in 0..400 {
                let a = 0.5 + i as f64 * 0.01;
                let b = 0.5 + j as f64 * 0.01;
                let v = objective(a, b, 1.0, t2);
                if v > best.0 {
                    best = (v, a, b);
                }
            }
        }
        assert!((best.1 - 2.0).abs() <= 0.01 && (best.2 - 2.0).abs() <= 0.01, "{best:?}");
    }

    #[test]
    fn zero_dispersion_hits_upper_clamp() {
        let fit = gamma_mle(2.0, 2f64.ln()).unwrap();
        assert_eq!(fit.shape, MAX_SHAPE);
        assert_eq!(fit.clamped, Some(Clamp::Upper));
        let fit = gamma_mle(2.0, 2f64.ln() - 1e-9).unwrap();
        assert_eq!(fit.clamped, Some(Clamp::Upper));
    }

    #[test]
    fn huge_dispersion_hits_lower_clamp() {
        let fit = gamma_mle(1.0, -5000.0).unwrap();
        assert_eq!(fit.shape, MIN_SHAPE);
        assert_eq!(fit.clamped, Some(Clamp::Lower));
    }

    #[test]
    fn rejects_invalid_statistics() {
        assert!(gamma_mle(0.0, -1.0).is_err());
        assert!(gamma_mle(1.0, 0.5).is_err());
        assert!(gamma_mle(f64::NAN, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn rate_scaling_equivariance(a in 0.05f64..500.0, c in 0.01f64..100.0) {
            let t1 = 1.7;
            let t2 = digamma(a) - (a / t1).ln();
            let base = gamma_mle(t1, t2).unwrap();
            let scaled = gamma_mle(c * t1, t2 + c.ln()).unwrap();
            prop_assert!((base.shape - scaled.shape).abs() <= 1e-7 * base.shape);
            prop_assert!((base.rate / c - scaled.rate).abs() <= 1e-7 * scaled.rate);
        }

        #[test]
        fn recovers_generating_shape(a in 0.01f64..1e5, b in 1e-3f64..1e3) {
            let fit = gamma_mle(a / b, digamma(a) - b.ln()).unwrap();
            prop_assert!((fit.shape - a).abs() <= 1e-6 * a, "{:?} vs {}", fit, a);
        }
    }

    fn posterior_with_tau(tau0: GammaFactor, tau1: GammaFactor) -> EquationPosterior {
        EquationPosterior {
            beta_mean: DVector::zeros(2),
            beta_cov: DMatrix::identity(2, 2),
            tau0,
            tau1,
            sigma_inv: GammaFactor::new(1.0, 1.0),
            elbo: 0.0,
            elbo_trace: vec![],
            iterations: 1,
            converged: true,
        }
    }

    #[test]
    fn identical_posteriors_give_their_own_mle() {
        let q0 = GammaFactor::new(4.0, 0.5);
        let q1 = GammaFactor::new(1.5, 2.0);
        let network = NetworkPosterior {
            equations: vec![posterior_with_tau(q0, q1); 3],
            hyper: Hyperparameters::default(),
            total_elbo: 0.0,
        };
        // path 0-1-2: every node has one class-0 and one class-1 neighbour... except ends
        let prior = AdjacencyMatrix::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let current = Hyperparameters::default();
        let next = eb_update(&network, &prior, &current).unwrap();
        let f0 = gamma_mle(q0.mean(), q0.expected_log()).unwrap();
        let f1 = gamma_mle(q1.mean(), q1.expected_log()).unwrap();
        assert_eq!((next.a0, next.b0), (f0.shape, f0.rate));
        assert_eq!((next.a1, next.b1), (f1.shape, f1.rate));
        assert_eq!((next.a2, next.b2), (current.a2, current.b2));
    }

    #[test]
    fn empty_class_keeps_hyperparameters() {
        let q = GammaFactor::new(3.0, 1.0);
        let network = NetworkPosterior {
            equations: vec![posterior_with_tau(q, q); 3],
            hyper: Hyperparameters::default(),
            total_elbo: 0.0,
        };
        let current = Hyperparameters {
            a0: 7.0,
            b0: 3.0,
            ..Hyperparameters::default()
        };
        let next = eb_update(&network, &AdjacencyMatrix::complete(3), &current).unwrap();
        assert_eq!((next.a0, next.b0), (7.0, 3.0));
        assert_ne!((next.a1, next.b1), (current.a1, current.b1));
    }

    #[test]
    fn outer_loop_bound_is_monotone() {
        let omega = gen_precision(&TopologySpec::new(15, Topology::band(2)), 0).unwrap();
        let data = sample_ggm(&omega, 30, 2).unwrap().standardized().unwrap();
        let truth = precision_to_adjacency(&omega, DEFAULT_SUPPORT_TOL);
        let res = eb_fit(&data, &truth, &Hyperparameters::default(), &EbSettings::default())
            .unwrap();
        assert_eq!(res.final_hyper, *res.hyper_trace.last().unwrap());
        assert_eq!(res.network.hyper, res.final_hyper);
        for w in res.elbo_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        assert!((res.ratio - res.prior_mean_tau0 / res.prior_mean_tau1).abs() < 1e-12);
        for h in &res.hyper_trace {
            assert_eq!((h.a2, h.b2), (0.001, 0.001));
        }
    }

    #[test]
    fn complement_prior_gives_swapped_estimates() {
        let omega = gen_precision(&TopologySpec::new(12, Topology::band(2)), 0).unwrap();
        let data = sample_ggm(&omega, 25, 5).unwrap().standardized().unwrap();
        let truth = precision_to_adjacency(&omega, DEFAULT_SUPPORT_TOL);
        let init = Hyperparameters::default();
        let a = eb_fit(&data, &truth, &init, &EbSettings::default()).unwrap();
        let b = eb_fit(&data, &complement(&truth), &init, &EbSettings::default()).unwrap();
        assert_eq!(a.final_hyper, b.final_hyper.swapped());
        for (x, y) in a.network.equations.iter().zip(&b.network.equations) {
            assert_eq!(x.beta_mean, y.beta_mean);
        }
    }

    #[test]
    fn blended_schedule_runs() {
        let data = sample_ggm(&PrecisionMatrix::identity(6), 40, 1).unwrap();
        let prior = AdjacencyMatrix::from_edges(6, &[(0, 1), (2, 3)]).unwrap();
        let settings = EbSettings {
            schedule: EbSchedule::Blended,
            ..EbSettings::default()
        };
        let res = eb_fit(&data, &prior, &Hyperparameters::default(), &settings).unwrap();
        assert!(res.ratio.is_finite());
        assert!(res.network.equations.iter().all(|e| e.converged));
    }
}
