//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits non-zero if any criterion fails.
//!
//! The band benchmarks use strength 0.9 (off-diagonals 0.72, 0.54, 0.36,
//! 0.18). The generator default of 0.4/b leaves n = 50 samples with almost
//! no detectable signal.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use semnet::eb::{eb_fit, gamma_mle, EbSettings};
use semnet::gibbs::{compare_equation, GibbsSettings};
use semnet::graph::{
    complement, gen_precision, perturb_prior, precision_to_adjacency, sample_ggm,
    AdjacencyMatrix, PrecisionMatrix, Topology, TopologySpec, DEFAULT_SUPPORT_TOL,
};
use semnet::selection::{edge_scores, roc, split_repro, symmetrize, EdgeScoreMatrix};
use semnet::special::{digamma, ln_gamma};
use semnet::vb::{
    build_equations, fit_equation, fit_network, Equation, Hyperparameters, PriorRow, VbSettings,
    VbStart,
};

const BAND_STRENGTH: f64 = 0.9;
const REPLICATES: u64 = 10;
/// Swap fractions for the perfect, 75%, 50% and 0% priors.
const SWAPS: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

type Outcome = Result<String, String>;

fn band(p: usize, bandwidth: usize) -> PrecisionMatrix {
    let topology = Topology::Band {
        bandwidth,
        strength: Some(BAND_STRENGTH),
    };
    gen_precision(&TopologySpec::new(p, topology), 0).unwrap()
}

fn scores_of(network: &semnet::vb::NetworkPosterior) -> EdgeScoreMatrix {
    symmetrize(&edge_scores(network).unwrap())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_equation(rng: &mut ChaCha8Rng, n: usize, s: usize) -> (Equation, Hyperparameters) {
    let x = DMatrix::from_fn(n, s, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta = DVector::from_fn(s, |_, _| {
        if rng.random_bool(0.2) {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        }
    });
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &x * &beta + noise * rng.random_range(0.3..2.0);
    let mask = (0..s).map(|_| rng.random_bool(0.3)).collect();
    let hyper = Hyperparameters {
        a0: rng.random_range(0.5..5.0),
        b0: rng.random_range(0.5..5.0),
        a1: rng.random_range(0.5..5.0),
        b1: rng.random_range(0.5..5.0),
        a2: 0.001,
        b2: 0.001,
    };
    (Equation::new(&y, &x, PriorRow::new(mask)).unwrap(), hyper)
}

fn random_fits() -> Vec<(Equation, Hyperparameters, semnet::vb::EquationPosterior)> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let settings = VbSettings {
        max_iter: 500,
        rel_tol: 1e-12,
        ..VbSettings::default()
    };
    (0..100)
        .map(|k| {
            let n = [20, 50][k % 2];
            let s = [10, 49][(k / 2) % 2];
            let (eq, hyper) = random_equation(&mut rng, n, s);
            let post = fit_equation(&eq, &hyper, &settings, VbStart::Default).unwrap();
            (eq, hyper, post)
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let fits = random_fits();
    let mut worst = 0.0f64;
    for (_, _, post) in &fits {
        for w in post.elbo_trace.windows(2) {
            let drop = (w[0] - w[1]) / w[0].abs();
            worst = worst.max(drop);
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-8 && elapsed < Duration::from_secs(60),
        format!(
            "largest relative decrease {worst:.2e} over 100 fits, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    for (eq, h, post) in random_fits() {
        let (s0, s1) = eq.prior().counts();
        let expected = [
            (post.tau0.shape, h.a0 + s0 as f64 / 2.0),
            (post.tau1.shape, h.a1 + s1 as f64 / 2.0),
            (
                post.sigma_inv.shape,
                h.a2 + eq.n() as f64 / 2.0 + eq.s() as f64 / 2.0,
            ),
        ];
        for (got, want) in expected {
            worst = worst.max((got - want).abs() / want);
        }
    }
    check(
        worst <= 4.0 * f64::EPSILON,
        format!("largest relative shape error {worst:.1e}"),
    )
}

fn criterion_3(times: &mut Vec<(Duration, Duration)>) -> Outcome {
    let omega = band(50, 4);
    let truth = precision_to_adjacency(&omega, DEFAULT_SUPPORT_TOL);
    let data = sample_ggm(&omega, 50, 3).unwrap().standardized().unwrap();
    let fit = eb_fit(&data, &truth, &Hyperparameters::default(), &EbSettings::default()).unwrap();
    let equations = build_equations(&data, &truth).unwrap();
    let vb_settings = VbSettings::default();
    let gibbs = GibbsSettings {
        seed: 1,
        ..GibbsSettings::default()
    };

    let t = Instant::now();
    let vb = fit_equation(&equations[0], &fit.final_hyper, &vb_settings, VbStart::Default).unwrap();
    let vb_time = t.elapsed();
    let t = Instant::now();
    let cmp = compare_equation(&equations[0], &fit.final_hyper, &vb_settings, &gibbs).unwrap();
    let gibbs_time = t.elapsed().saturating_sub(vb_time);
    times.push((vb_time, gibbs_time));
    assert_eq!(vb.beta_mean, cmp.vb.beta_mean);

    let r = &cmp.report;
    check(
        r.beta.len() == 49 && r.max_abs_beta_mean_diff < 0.02 && r.max_rel_beta_sd_diff < 0.2,
        format!(
            "max |mean diff| {:.4} (< 0.02), max relative sd diff {:.3} (< 0.2), {} kept draws",
            r.max_abs_beta_mean_diff, r.max_rel_beta_sd_diff, r.kept_draws
        ),
    )
}

struct BandStudy {
    /// ratio[rep][prior quality]
    ratios: Vec<[f64; 4]>,
    aucs: Vec<[f64; 4]>,
    baseline_aucs: Vec<f64>,
    slowest_fit: Duration,
}

fn band_study() -> BandStudy {
    let omega = band(100, 4);
    let truth = precision_to_adjacency(&omega, DEFAULT_SUPPORT_TOL);
    let init = Hyperparameters::default();
    let settings = EbSettings::default();
    let mut study = BandStudy {
        ratios: Vec::new(),
        aucs: Vec::new(),
        baseline_aucs: Vec::new(),
        slowest_fit: Duration::ZERO,
    };
    for rep in 0..REPLICATES {
        let data = sample_ggm(&omega, 50, 100 + rep).unwrap().standardized().unwrap();
        let mut ratios = [0.0; 4];
        let mut aucs = [0.0; 4];
        for (q, &swap) in SWAPS.iter().enumerate() {
            let prior = perturb_prior(&truth, swap, 500 + rep).unwrap();
            let t = Instant::now();
            let fit = eb_fit(&data, &prior, &init, &settings).unwrap();
            study.slowest_fit = study.slowest_fit.max(t.elapsed());
            ratios[q] = fit.ratio;
            aucs[q] = roc(&scores_of(&fit.network), &truth).unwrap().auc;
        }
        let baseline = eb_fit(&data, &AdjacencyMatrix::complete(100), &init, &settings).unwrap();
        study
            .baseline_aucs
            .push(roc(&scores_of(&baseline.network), &truth).unwrap().auc);
        study.ratios.push(ratios);
        study.aucs.push(aucs);
    }
    study
}

fn column_means(rows: &[[f64; 4]]) -> [f64; 4] {
    let mut m = [0.0; 4];
    for row in rows {
        for (acc, v) in m.iter_mut().zip(row) {
            *acc += v / rows.len() as f64;
        }
    }
    m
}

fn criterion_4(study: &BandStudy) -> Outcome {
    let r = column_means(&study.ratios);
    check(
        r[0] > r[1] && r[1] > r[2] && r[2] > r[3] && r[0] > 10.0 && (0.5..=2.0).contains(&r[3]),
        format!(
            "mean ratios over {REPLICATES} replicates: perfect {:.2}, 75% {:.2}, 50% {:.2}, 0% {:.2}",
            r[0], r[1], r[2], r[3]
        ),
    )
}

fn criterion_5(study: &BandStudy) -> Outcome {
    let a = column_means(&study.aucs);
    let base = study.baseline_aucs.iter().sum::<f64>() / study.baseline_aucs.len() as f64;
    check(
        a[0] >= base + 0.05 && (a[3] - base).abs() <= 0.05,
        format!(
            "mean AUC: perfect prior {:.3}, 0% prior {:.3}, single-class baseline {:.3}",
            a[0], a[3], base
        ),
    )
}

fn criterion_6() -> Outcome {
    let omega = band(60, 4);
    let truth = precision_to_adjacency(&omega, DEFAULT_SUPPORT_TOL);
    let prior = perturb_prior(&truth, 0.25, 6).unwrap();
    let data = sample_ggm(&omega, 40, 6).unwrap().standardized().unwrap();
    let init = Hyperparameters::default();
    let settings = EbSettings::default();
    let a = eb_fit(&data, &prior, &init, &settings).unwrap();
    let b = eb_fit(&data, &complement(&prior), &init, &settings).unwrap();
    let diff = (scores_of(&a.network).matrix() - scores_of(&b.network).matrix()).amax();
    let swapped = a.final_hyper.swapped() == b.final_hyper;
    check(
        diff <= 1e-10 && swapped,
        format!("max score difference {diff:.1e}, hyperparameters exchanged: {swapped}"),
    )
}

fn gamma_objective(a: f64, b: f64, t1: f64, t2: f64) -> f64 {
    a * b.ln() - ln_gamma(a) + (a - 1.0) * t2 - b * t1
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (lo, hi, m) = (1e-2f64, 1e3f64, 200);
    let step = (hi / lo).ln() / (m - 1) as f64;
    let grid: Vec<f64> = (0..m).map(|k| lo * (k as f64 * step).exp()).collect();
    let mut worst_steps = 0.0f64;
    let mut worst_gap = 0.0f64;
    for _ in 0..20 {
        // statistics of an equal-weight mixture of three gamma posteriors
        let comps: Vec<(f64, f64)> = (0..3)
            .map(|_| {
                let a = 10f64.powf(rng.random_range(-0.5..2.0));
                let b = a / 10f64.powf(rng.random_range(-1.0..1.0));
                (a, b)
            })
            .collect();
        let t1 = comps.iter().map(|(a, b)| a / b).sum::<f64>() / 3.0;
        let t2 = comps.iter().map(|(a, b)| digamma(*a) - b.ln()).sum::<f64>() / 3.0;
        let fit = gamma_mle(t1, t2).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for &a in &grid {
            for &b in &grid {
                let v = gamma_objective(a, b, t1, t2);
                if v > best.0 {
                    best = (v, a, b);
                }
            }
        }
        let steps = ((fit.shape / best.1).ln().abs() / step).max((fit.rate / best.2).ln().abs() / step);
        worst_steps = worst_steps.max(steps);
        worst_gap = worst_gap.max(best.0 - gamma_objective(fit.shape, fit.rate, t1, t2));
    }
    check(
        worst_steps <= 1.0 && worst_gap <= 1e-9,
        format!(
            "largest distance to grid argmax {worst_steps:.2} log-grid steps; grid never beats solver by more than {worst_gap:.1e}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let omega = band(10, 2);
    let truth = precision_to_adjacency(&omega, DEFAULT_SUPPORT_TOL);
    let data = sample_ggm(&omega, 5000, 8).unwrap();
    let network = fit_network(&data, &truth, &Hyperparameters::default(), &VbSettings::default())
        .unwrap();
    let mut worst = 0.0f64;
    for i in 0..10 {
        let post = &network.equations[i];
        for r in 0..10 {
            if r == i {
                continue;
            }
            let idx = if r < i { r } else { r - 1 };
            let target = omega.regression_coefficient(i, r);
            worst = worst.max((post.beta_mean[idx] - target).abs());
        }
    }
    check(
        worst < 0.05,
        format!("max |posterior mean - (-omega_ir/omega_ii)| = {worst:.4}"),
    )
}

fn criterion_9(study: &BandStudy, times: &[(Duration, Duration)]) -> Outcome {
    let (vb, gibbs) = times[0];
    let speedup = gibbs.as_secs_f64() / vb.as_secs_f64();
    check(
        study.slowest_fit < Duration::from_secs(300) && speedup >= 50.0,
        format!(
            "slowest EB fit at p=100, n=50: {:.1}s; VB {:.4}s vs Gibbs {:.2}s ({speedup:.0}x)",
            study.slowest_fit.as_secs_f64(),
            vb.as_secs_f64(),
            gibbs.as_secs_f64()
        ),
    )
}

fn criterion_10() -> Outcome {
    let omega = band(30, 2);
    let data = sample_ggm(&omega, 40, 10).unwrap();
    let prior = AdjacencyMatrix::complete(30);
    let ks = [5, 20, 100];
    let run = || {
        split_repro(&data, &ks, 3, 99, |half| {
            let fit = eb_fit(
                &half.standardized()?,
                &prior,
                &Hyperparameters::default(),
                &EbSettings::default(),
            )?;
            Ok(scores_of(&fit.network))
        })
        .unwrap()
    };
    let (first, second) = (run(), run());
    let bounded = first.iter().all(|r| r.overlap <= r.k);
    check(
        first == second && bounded && first.len() == 9,
        format!(
            "identical tables: {}, all overlaps <= k: {bounded}",
            first == second
        ),
    )
}

fn report(id: usize, name: &str, outcome: std::thread::Result<Outcome>) -> bool {
    let (ok, detail) = match outcome {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(panic) => (
            false,
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()),
        ),
    };
    println!(
        "{} criterion {id:>2} ({name}): {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

fn main() {
    let mut all = true;
    let mut times = Vec::new();
    all &= report(1, "ELBO monotonicity", catch_unwind(criterion_1));
    all &= report(2, "shape identities", catch_unwind(criterion_2));
    all &= report(
        3,
        "VB vs Gibbs",
        catch_unwind(AssertUnwindSafe(|| criterion_3(&mut times))),
    );
    let study = catch_unwind(band_study);
    match &study {
        Ok(study) => {
            all &= report(4, "EB ratio ordering", Ok(criterion_4(study)));
            all &= report(5, "ROC dominance", Ok(criterion_5(study)));
        }
        Err(_) => {
            all &= report(4, "EB ratio ordering", Ok(Err("band study panicked".into())));
            all &= report(5, "ROC dominance", Ok(Err("band study panicked".into())));
        }
    }
    all &= report(6, "complement equivalence", catch_unwind(criterion_6));
    all &= report(7, "gamma MLE oracle", catch_unwind(criterion_7));
    all &= report(8, "SEM/GGM consistency", catch_unwind(criterion_8));
    let perf = match &study {
        Ok(study) if !times.is_empty() => Ok(criterion_9(study, &times)),
        _ => Ok(Err("timings unavailable".into())),
    };
    all &= report(9, "performance", perf);
    all &= report(10, "split-repro harness", catch_unwind(criterion_10));
    if !all {
        std::process::exit(1);
    }
}
