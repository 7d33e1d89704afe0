//! Special functions used by the gamma factors.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Trigamma function ψ'(x) for x > 0.
///
/// Shifts the argument above 12 with the recurrence ψ'(x) = ψ'(x + 1) + 1/x²
/// and finishes with the asymptotic series in 1/x.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x < 1e-6 {
        // ψ'(x) = 1/x² + π²/6 + O(x)
        return 1.0 / (x * x) + std::f64::consts::PI.powi(2) / 6.0;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 12.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let r = 1.0 / z;
    let r2 = r * r;
    let series = r
        + 0.5 * r2
        + r * r2
            * (1.0 / 6.0
                - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * 5.0 / 66.0))));
    acc + series
}

/// E[log X] for X ~ Gamma(shape, rate).
pub fn gamma_expected_log(shape: f64, rate: f64) -> f64 {
    digamma(shape) - rate.ln()
}

/// Differential entropy of Gamma(shape, rate).
pub fn gamma_entropy(shape: f64, rate: f64) -> f64 {
    shape - rate.ln() + ln_gamma(shape) + (1.0 - shape) * digamma(shape)
}

/// E_q[log p(X)] where q = Gamma(q_shape, q_rate) and p = Gamma(shape, rate).
pub fn gamma_cross_log_density(shape: f64, rate: f64, q_shape: f64, q_rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * gamma_expected_log(q_shape, q_rate)
        - rate * q_shape / q_rate
}
