//! Gibbs sampler for the exact posterior of one regression equation.
//!
//! The full conditionals share their form with the variational updates, with
//! expectations replaced by the current draws: β is normal with precision
//! σ⁻²(XᵀX + D_τ), and τ²₀, τ²₁, σ⁻² are gamma with the same shapes as their
//! variational factors.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vb::{
    fit_equation, Equation, EquationPosterior, Hyperparameters, PriorRow, VbSettings, VbStart,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GibbsSettings {
    pub n_iter: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for GibbsSettings {
    fn default() -> Self {
        GibbsSettings {
            n_iter: 100_000,
            burnin: 1000,
            thin: 10,
            seed: 0,
        }
    }
}

impl GibbsSettings {
    pub fn kept(&self) -> usize {
        (self.n_iter - self.burnin) / self.thin
    }

    fn validate(&self) -> Result<()> {
        if self.n_iter <= self.burnin || self.thin == 0 {
            return Err(Error::InvalidArgument(format!(
                "need n_iter > burnin and thin >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Retained draws; row t of `beta_draws` is the t-th kept β.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub beta_draws: DMatrix<f64>,
    pub tau0_draws: Vec<f64>,
    pub tau1_draws: Vec<f64>,
    pub sigma_inv_draws: Vec<f64>,
    pub n_iter: usize,
    pub burnin: usize,
    pub thin: usize,
}

impl PosteriorSamples {
    pub fn kept(&self) -> usize {
        self.beta_draws.nrows()
    }

    pub fn beta_summary(&self, r: usize) -> (f64, f64) {
        mean_sd(self.beta_draws.column(r).iter().copied())
    }
}

/// Sample mean and (n − 1)-normalised standard deviation.
pub fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn draw_gamma(rng: &mut ChaCha8Rng, shape: f64, rate: f64) -> Result<f64> {
    let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| {
        Error::InvalidArgument(format!("gamma conditional ({shape}, {rate}): {e}"))
    })?;
    // guard against underflow to exactly zero for tiny shapes
    Ok(dist.sample(rng).max(f64::MIN_POSITIVE))
}

pub fn gibbs_sample_equation(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    prior_row: &PriorRow,
    hyper: &Hyperparameters,
    settings: &GibbsSettings,
) -> Result<PosteriorSamples> {
    let eq = Equation::new(y, x, prior_row.clone())?;
    sample_equation(&eq, hyper, settings)
}

pub fn sample_equation(
    eq: &Equation,
    hyper: &Hyperparameters,
    settings: &GibbsSettings,
) -> Result<PosteriorSamples> {
    hyper.validate()?;
    settings.validate()?;
    let s = eq.s();
    let prior = eq.prior();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    let tau_shape = [eq.tau_shape(hyper, 0), eq.tau_shape(hyper, 1)];
    let sigma_shape = eq.sigma_shape(hyper);
    let mut tau = [hyper.a0 / hyper.b0, hyper.a1 / hyper.b1];
    let mut lambda = 1.0 / eq.y_var();

    let kept = settings.kept();
    let mut beta_draws = DMatrix::zeros(kept, s);
    let mut tau0_draws = Vec::with_capacity(kept);
    let mut tau1_draws = Vec::with_capacity(kept);
    let mut sigma_inv_draws = Vec::with_capacity(kept);
    let mut z = DVector::zeros(s);

    for t in 1..=settings.n_iter {
        let penalty = DVector::from_fn(s, |r, _| tau[prior.class_of(r)]);
        let chol = eq.factor(&penalty)?;
        let mean = chol.solve(eq.xty());
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        // β = mean + L⁻ᵀ z / sqrt(λ) has covariance (λ L Lᵀ)⁻¹
        let noise = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factor".into()))?;
        let beta = mean + noise / lambda.sqrt();

        let mut class_ss = [0.0; 2];
        for r in 0..s {
            class_ss[prior.class_of(r)] += beta[r] * beta[r];
        }
        for k in 0..2 {
            let (a, b) = hyper.class(k);
            tau[k] = if prior.class_size(k) == 0 {
                draw_gamma(&mut rng, a, b)?
            } else {
                draw_gamma(&mut rng, tau_shape[k], b + 0.5 * lambda * class_ss[k])?
            };
        }

        let penalised = tau[0] * class_ss[0] + tau[1] * class_ss[1];
        let rate = hyper.b2 + 0.5 * penalised + 0.5 * eq.residual_ss(&beta);
        lambda = draw_gamma(&mut rng, sigma_shape, rate)?;

        if t > settings.burnin && (t - settings.burnin).is_multiple_of(settings.thin) {
            let row = tau0_draws.len();
            beta_draws.row_mut(row).copy_from(&beta.transpose());
            tau0_draws.push(tau[0]);
            tau1_draws.push(tau[1]);
            sigma_inv_draws.push(lambda);
        }
    }

    Ok(PosteriorSamples {
        beta_draws,
        tau0_draws,
        tau1_draws,
        sigma_inv_draws,
        n_iter: settings.n_iter,
        burnin: settings.burnin,
        thin: settings.thin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentDiscrepancy {
    pub vb_mean: f64,
    pub gibbs_mean: f64,
    pub vb_sd: f64,
    pub gibbs_sd: f64,
    pub abs_mean_diff: f64,
    /// |sd_VB − sd_Gibbs| / sd_Gibbs
    pub rel_sd_diff: f64,
}

impl MomentDiscrepancy {
    fn new(vb: (f64, f64), gibbs: (f64, f64)) -> Self {
        MomentDiscrepancy {
            vb_mean: vb.0,
            gibbs_mean: gibbs.0,
            vb_sd: vb.1,
            gibbs_sd: gibbs.1,
            abs_mean_diff: (vb.0 - gibbs.0).abs(),
            rel_sd_diff: (vb.1 - gibbs.1).abs() / gibbs.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub beta: Vec<MomentDiscrepancy>,
    /// Absent when the class is empty in this equation.
    pub tau0: Option<MomentDiscrepancy>,
    pub tau1: Option<MomentDiscrepancy>,
    pub sigma_inv: MomentDiscrepancy,
    pub max_abs_beta_mean_diff: f64,
    pub max_rel_beta_sd_diff: f64,
    pub kept_draws: usize,
}

/// Both posteriors of one equation.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub vb: EquationPosterior,
    pub samples: PosteriorSamples,
    pub report: DiscrepancyReport,
}

pub fn compare_vb_gibbs(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    prior_row: &PriorRow,
    hyper: &Hyperparameters,
    vb_settings: &VbSettings,
    gibbs_settings: &GibbsSettings,
) -> Result<Comparison> {
    let eq = Equation::new(y, x, prior_row.clone())?;
    compare_equation(&eq, hyper, vb_settings, gibbs_settings)
}

pub fn compare_equation(
    eq: &Equation,
    hyper: &Hyperparameters,
    vb_settings: &VbSettings,
    gibbs_settings: &GibbsSettings,
) -> Result<Comparison> {
    let vb = fit_equation(eq, hyper, vb_settings, VbStart::Default)?;
    let samples = sample_equation(eq, hyper, gibbs_settings)?;
    let beta: Vec<_> = (0..eq.s())
        .map(|r| {
            MomentDiscrepancy::new((vb.beta_mean[r], vb.beta_sd(r)), samples.beta_summary(r))
        })
        .collect();
    let tau_report = |k: usize, draws: &[f64]| {
        (eq.prior().class_size(k) > 0).then(|| {
            let q = vb.tau(k);
            MomentDiscrepancy::new((q.mean(), q.sd()), mean_sd(draws.iter().copied()))
        })
    };
    let report = DiscrepancyReport {
        max_abs_beta_mean_diff: beta.iter().map(|d| d.abs_mean_diff).fold(0.0, f64::max),
        max_rel_beta_sd_diff: beta.iter().map(|d| d.rel_sd_diff).fold(0.0, f64::max),
        tau0: tau_report(0, &samples.tau0_draws),
        tau1: tau_report(1, &samples.tau1_draws),
        sigma_inv: MomentDiscrepancy::new(
            (vb.sigma_inv.mean(), vb.sigma_inv.sd()),
            mean_sd(samples.sigma_inv_draws.iter().copied()),
        ),
        beta,
        kept_draws: samples.kept(),
    };
    Ok(Comparison {
        vb,
        samples,
        report,
    })
}
