//! Log-domain arithmetic and standard densities.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// log Σ exp(x_i), with a fixed pairwise reduction order. Empty or all −∞ gives −∞.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    let shifted: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    m + pairwise_sum(&shifted).ln()
}

/// log of the arithmetic mean of exp(x_i).
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * d * d / var
}

/// Gamma density with shape `k` and rate `b`.
pub fn gamma_log_pdf(x: f64, k: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    k * b.ln() - ln_gamma(k) + (k - 1.0) * x.ln() - b * x
}

pub fn poisson_log_pmf(n: u64, lambda: f64) -> f64 {
    n as f64 * lambda.ln() - lambda - ln_gamma(n as f64 + 1.0)
}

pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Binomial pmf; zero outside `0..=n`.
pub fn binomial_pmf(k: i64, n: u64, p: f64) -> f64 {
    if k < 0 || k as u64 > n {
        return 0.0;
    }
    let k = k as u64;
    let lp = ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln();
    lp.exp()
}

/// Normalise log-weights into probabilities.
pub fn softmax(log_w: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_w);
    log_w.iter().map(|&l| (l - z).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_basic() {
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        let xs: Vec<f64> = (0..100).map(|i| i as f64 * 0.01).collect();
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-13);
    }

    #[test]
    fn densities() {
        assert!((normal_log_pdf(0.0, 0.0, 1.0) + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((gamma_log_pdf(2.0, 1.0, 1.0) + 2.0).abs() < 1e-15);
        assert!((poisson_log_pmf(0, 3.0) + 3.0).abs() < 1e-15);
        assert!((binomial_pmf(1, 2, 0.5) - 0.5).abs() < 1e-13);
        assert_eq!(binomial_pmf(-1, 2, 0.5), 0.0);
        assert_eq!(binomial_pmf(3, 2, 0.5), 0.0);
        assert!((ln_choose(5, 2) - 10f64.ln()).abs() < 1e-12);
    }
}
