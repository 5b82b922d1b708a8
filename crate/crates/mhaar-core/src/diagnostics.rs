//! Chain-quality metrics: integrated autocorrelation time, batch-means
//! intervals, ensemble averages and invariance residuals.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::mh::{Coin, MhOutcome, TransitionMatrix};

/// Sokal window constant: the window is the smallest W with W ≥ c·τ(W).
pub const SOKAL_C: f64 = 6.0;
pub const DEFAULT_BURN_IN: f64 = 0.25;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainMeta {
    pub seed: u64,
    pub kernel: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainTrace {
    pub samples: Vec<f64>,
    pub accept_flags: Vec<bool>,
    pub coins: Vec<Option<u8>>,
    pub meta: ChainMeta,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, value: f64, accepted: bool, coin: Option<Coin>) {
        self.samples.push(value);
        self.accept_flags.push(accepted);
        self.coins.push(coin.map(Coin::as_u8));
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accept_flags.is_empty() {
            return 0.0;
        }
        self.accept_flags.iter().filter(|&&a| a).count() as f64 / self.accept_flags.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.accept_flags.len() != self.samples.len() || self.coins.len() != self.samples.len() {
            return Err(Error::Invalid("trace series have different lengths".into()));
        }
        Ok(())
    }
}

/// Iterate `step` from `(theta, z)` and record f(θ, z) after every step.
pub fn run_chain<P, Z, F, G>(theta: P, z: Z, iterations: usize, mut step: F, record: G) -> Result<ChainTrace>
where
    F: FnMut(&P, &Z) -> Result<MhOutcome<P, Z>>,
    G: Fn(&P, &Z) -> f64,
{
    let mut trace = ChainTrace {
        samples: Vec::with_capacity(iterations),
        accept_flags: Vec::with_capacity(iterations),
        coins: Vec::with_capacity(iterations),
        meta: ChainMeta::default(),
    };
    let (mut theta, mut z) = (theta, z);
    for _ in 0..iterations {
        let out = step(&theta, &z)?;
        theta = out.theta;
        z = out.z;
        trace.push(record(&theta, &z), out.accepted, out.coin);
    }
    Ok(trace)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IacEstimate {
    pub tau: f64,
    pub window: usize,
    /// Constant series, reported as τ = 1.
    pub degenerate: bool,
    /// τ < 1, i.e. net negative autocorrelation.
    pub antithetic: bool,
}

/// Autocovariances γ_0..γ_{n−1} (divisor n) via zero-padded FFT.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf.iter().take(n).map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// τ = 1 + 2 Σ_{k=1}^{W} ρ_k with Sokal's adaptive window, after dropping
/// the first `burn_in_fraction` of the series.
pub fn iac(series: &[f64], burn_in_fraction: f64) -> Result<IacEstimate> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::Invalid("burn-in fraction must lie in [0, 1)".into()));
    }
    let x = &series[(series.len() as f64 * burn_in_fraction) as usize..];
    if x.len() < 100 {
        return Err(Error::Invalid("need at least 100 points after burn-in".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Nan("chain sample"));
    }
    let acov = autocovariance(x);
    if acov[0] <= 0.0 {
        return Ok(IacEstimate { tau: 1.0, window: 0, degenerate: true, antithetic: false });
    }
    let mut tau = 1.0;
    let mut window = 0;
    for k in 1..x.len() {
        tau += 2.0 * acov[k] / acov[0];
        window = k;
        if k as f64 >= SOKAL_C * tau {
            break;
        }
    }
    let min_tau = 1.0 / x.len() as f64;
    Ok(IacEstimate { tau: tau.max(min_tau), window, degenerate: false, antithetic: tau < 1.0 })
}

/// Batch-means estimate of τ pooled over independent chains, with a 95%
/// chi-square interval from the spread of the batch means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchMeansIac {
    pub tau: f64,
    pub lower: f64,
    pub upper: f64,
    pub batches: usize,
    pub batch_size: usize,
}

impl BatchMeansIac {
    pub fn overlaps(&self, other: &BatchMeansIac) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

pub fn batch_means_iac(chains: &[&[f64]], burn_in_fraction: f64, batches_per_chain: usize) -> Result<BatchMeansIac> {
    if chains.is_empty() || batches_per_chain < 2 {
        return Err(Error::Invalid("need chains and at least two batches per chain".into()));
    }
    let kept: Vec<&[f64]> = chains.iter().map(|c| &c[(c.len() as f64 * burn_in_fraction) as usize..]).collect();
    let len = kept.iter().map(|c| c.len()).min().unwrap_or(0);
    let b = len / batches_per_chain;
    if b < 1 {
        return Err(Error::Invalid("chains too short for the requested batches".into()));
    }
    let mut within = 0.0;
    let mut total_var = 0.0;
    let mut df = 0usize;
    let mut count = 0usize;
    for c in &kept {
        let c = &c[..b * batches_per_chain];
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        total_var += c.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        count += c.len() - 1;
        for batch in c.chunks(b) {
            let bm = batch.iter().sum::<f64>() / b as f64;
            within += (bm - mean).powi(2);
        }
        df += batches_per_chain - 1;
    }
    let var = total_var / count as f64;
    if var <= 0.0 {
        return Err(Error::Degenerate("constant chains".into()));
    }
    let bm_var = within / df as f64;
    let tau = b as f64 * bm_var / var;
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::Invalid(e.to_string()))?;
    let k = df as f64;
    Ok(BatchMeansIac {
        tau,
        lower: tau * k / chi.inverse_cdf(0.975),
        upper: tau * k / chi.inverse_cdf(0.025),
        batches: kept.len() * batches_per_chain,
        batch_size: b,
    })
}

/// Mean of per-chain Sokal estimates with its standard error.
pub fn pooled_iac(chains: &[&[f64]], burn_in_fraction: f64) -> Result<(f64, f64)> {
    let taus = chains.iter().map(|c| iac(c, burn_in_fraction).map(|e| e.tau)).collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_se(&taus))
}

/// Sample mean and standard error (n−1 divisor; SE is 0 for one value).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-iteration cross-run mean and standard error of f(sample).
pub fn ensemble_average<F: Fn(f64) -> f64>(runs: &[&[f64]], f: F) -> Result<Vec<(f64, f64)>> {
    if runs.len() < 2 {
        return Err(Error::Invalid("need at least two runs".into()));
    }
    let len = runs[0].len();
    if runs.iter().any(|r| r.len() != len) {
        return Err(Error::Invalid("runs have different lengths".into()));
    }
    Ok((0..len)
        .map(|i| {
            let v: Vec<f64> = runs.iter().map(|r| f(r[i])).collect();
            mean_and_se(&v)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals {
    /// max_j |(πᵀP)_j − π_j|
    pub stationarity: f64,
    /// max_{i,j} |π_i P_ij − π_j P_ji|
    pub balance: f64,
    /// Largest |π_i P_ij − π_j P_ji| in binomial standard errors; 0 for exact matrices.
    pub balance_z: f64,
    /// Largest |(πᵀP)_j − π_j| in standard errors; 0 for exact matrices.
    pub stationarity_z: f64,
}

/// Invariance residuals of a transition matrix against π. For Monte Carlo
/// matrices each entry's variance is p(1−p)/n, with p floored at 1/n so
/// that unseen transitions still carry an error bar.
pub fn stationarity_residual(matrix: &TransitionMatrix, pi: &[f64]) -> Result<Residuals> {
    let n = matrix.n;
    if pi.len() != n {
        return Err(Error::Invalid("distribution and matrix sizes differ".into()));
    }
    let var = |p: f64| -> f64 {
        match matrix.trials {
            Some(t) => {
                let t = t as f64;
                let p = p.max(1.0 / t);
                p * (1.0 - p).max(1.0 / t) / t
            }
            None => 0.0,
        }
    };
    let mut r = Residuals { stationarity: 0.0, balance: 0.0, balance_z: 0.0, stationarity_z: 0.0 };
    for j in 0..n {
        let mut after = 0.0;
        let mut after_var = 0.0;
        for i in 0..n {
            let (pij, pji) = (matrix.get(i, j), matrix.get(j, i));
            after += pi[i] * pij;
            after_var += pi[i] * pi[i] * var(pij);
            let d = (pi[i] * pij - pi[j] * pji).abs();
            r.balance = r.balance.max(d);
            let se = (pi[i] * pi[i] * var(pij) + pi[j] * pi[j] * var(pji)).sqrt();
            if se > 0.0 && i != j {
                r.balance_z = r.balance_z.max(d / se);
            }
        }
        let d = (after - pi[j]).abs();
        r.stationarity = r.stationarity.max(d);
        if after_var > 0.0 {
            r.stationarity_z = r.stationarity_z.max(d / after_var.sqrt());
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::McRng;
    use rand_distr::{Distribution, StandardNormal};

    fn ar1(rho: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = McRng::seeded(seed);
        let s = (1.0 - rho * rho).sqrt();
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = rho * x + s * e;
                x
            })
            .collect()
    }

    #[test]
    fn iid_series_has_unit_iac() {
        let x = ar1(0.0, 100_000, 1);
        let t = iac(&x, 0.0).unwrap();
        assert!((t.tau - 1.0).abs() < 0.1, "{t:?}");
    }

    #[test]
    fn ar1_iac_matches_closed_form() {
        let x = ar1(0.9, 200_000, 2);
        let t = iac(&x, 0.0).unwrap().tau;
        assert!((t / 19.0 - 1.0).abs() < 0.15, "{t}");
        let b = batch_means_iac(&[&x], 0.0, 50).unwrap();
        assert!(b.lower < 19.0 && 19.0 < b.upper, "{b:?}");
    }

    #[test]
    fn alternating_series_is_antithetic() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let t = iac(&x, 0.0).unwrap();
        assert!(t.tau < 1.0 && t.antithetic);
        let c = vec![3.0; 500];
        assert!(iac(&c, 0.0).unwrap().degenerate);
    }

    #[test]
    fn ensemble_of_constants() {
        let (a, b) = (vec![0.0; 5], vec![1.0; 5]);
        let e = ensemble_average(&[&a, &b], |x| x).unwrap();
        assert_eq!(e[0], (0.5, 0.5));
        assert!(ensemble_average(&[&a, &b[..4]], |x| x).is_err());
    }

    #[test]
    fn identity_matrix_is_invariant() {
        let m = TransitionMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], None).unwrap();
        let r = stationarity_residual(&m, &[0.3, 0.7]).unwrap();
        assert_eq!(r.stationarity, 0.0);
        assert_eq!(r.balance, 0.0);
    }
}
