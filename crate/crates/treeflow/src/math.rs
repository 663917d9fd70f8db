//! Scalar math shims. All transcendentals route through `libm` so the same
//! code path runs with and without `std`.

use alloc::vec::Vec;

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

/// Natural log of the gamma function; exact enough for posterior arithmetic
/// (libm's musl port is < 2 ulp over the range used here).
pub fn log_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// log(sum_i exp(v_i)) with a max shift; empty input yields -inf.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &v in values {
        if v > m {
            m = v;
        }
    }
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = 0.0;
    for &v in values {
        acc += exp(v - m);
    }
    m + ln(acc)
}

/// Normalized probabilities from unnormalized log weights (softmax).
pub fn softmax_from_logs(log_weights: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_weights);
    log_weights.iter().map(|&w| exp(w - z)).collect()
}

/// Population mean and standard deviation of a slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, sqrt(var))
}
