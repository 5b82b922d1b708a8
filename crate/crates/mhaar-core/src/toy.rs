//! Two-state example with a closed-form averaged kernel.
//!
//! π is uniform on {−1, 1}; q flips the sign with probability 1 − α; each
//! auxiliary draw is u ∈ {a, 1/a} with P(u = a) = 1/(1 + a), its ratio is u,
//! and the involution inverts the selected draw.

use crate::error::{Error, Result};
use crate::mh::{AuxiliaryScheme, EnumerableProposal, EnumerableScheme, ProposalKernel};
use crate::num::binomial_pmf;
use crate::rng::McRng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyParams {
    pub a: f64,
    pub alpha: f64,
    pub n: usize,
}

impl ToyParams {
    pub fn new(a: f64, alpha: f64, n: usize) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(0.0..1.0).contains(&alpha) || n == 0 {
            return Err(Error::Invalid(format!("toy parameters out of range: a={a}, alpha={alpha}, n={n}")));
        }
        Ok(ToyParams { a, alpha, n })
    }
}

/// Probability that the averaged kernel moves θ to −θ.
pub fn toy_kernel_prob(p: ToyParams) -> f64 {
    let a = p.a;
    let hold = 1.0 - p.alpha;
    if p.n == 1 {
        return hold * (1.0 / (1.0 + a) * a.min(1.0) + a / (1.0 + a) * (1.0 / a).min(1.0));
    }
    let n = p.n as u64;
    let small = 1.0 / (1.0 + a);
    let mut fwd = 0.0;
    let mut bwd = 0.0;
    for k in 0..=p.n as i64 {
        let frac = k as f64 / p.n as f64;
        let w = frac * a + (1.0 - frac) / a;
        fwd += binomial_pmf(k, n, small) * w.min(1.0);
        let shifted = a / (1.0 + a) * binomial_pmf(k - 1, n - 1, small) + small * binomial_pmf(k, n - 1, small);
        bwd += shifted * (1.0 / w).min(1.0);
    }
    hold / 2.0 * (fwd + bwd)
}

pub fn relaxation_time(p: ToyParams) -> Result<f64> {
    let pr = toy_kernel_prob(p);
    if pr <= 0.0 {
        return Err(Error::Invalid("kernel never moves; relaxation time is infinite".into()));
    }
    Ok(1.0 / (2.0 * pr))
}

/// Relaxation time with N draws relative to a single draw.
pub fn gamma_ratio(a: f64, n: usize) -> Result<f64> {
    let one = relaxation_time(ToyParams::new(a, 0.0, 1)?)?;
    Ok(relaxation_time(ToyParams::new(a, 0.0, n)?)? / one)
}

/// Lower and upper bounds on the ε-mixing time from the relaxation time.
pub fn mixing_time_bounds(eps: f64, t_relax: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 1.0) || !(t_relax > 0.0) {
        return Err(Error::Invalid(format!("need 0 < eps < 1 and positive relaxation time, got {eps}, {t_relax}")));
    }
    Ok((-(t_relax - 1.0) * (2.0 * eps).ln(), -t_relax * (eps / 2.0).ln()))
}

pub fn toy_exact_matrix(p: ToyParams) -> [[f64; 2]; 2] {
    let m = toy_kernel_prob(p);
    [[1.0 - m, m], [m, 1.0 - m]]
}

/// Right spectral gap 2·P(θ, −θ).
pub fn spectral_gap(p: ToyParams) -> f64 {
    2.0 * toy_kernel_prob(p)
}

/// Sign-flip proposal holding with probability α.
#[derive(Clone, Copy, Debug)]
pub struct ToyProposal {
    pub alpha: f64,
}

impl ProposalKernel<f64> for ToyProposal {
    fn sample(&self, theta: &f64, rng: &mut McRng) -> f64 {
        if rng.uniform() < self.alpha {
            *theta
        } else {
            -theta
        }
    }

    fn log_density(&self, from: &f64, to: &f64) -> f64 {
        if from == to {
            self.alpha.ln()
        } else {
            (1.0 - self.alpha).ln()
        }
    }
}

impl EnumerableProposal<f64> for ToyProposal {
    fn support(&self, theta: &f64) -> Vec<(f64, f64)> {
        let mut s = vec![(-theta, 1.0 - self.alpha)];
        if self.alpha > 0.0 {
            s.push((*theta, self.alpha));
        }
        s
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ToyScheme {
    pub a: f64,
}

impl AuxiliaryScheme<f64, ()> for ToyScheme {
    type Aux = f64;

    fn sample_u(&self, _: &f64, _: &f64, _: &(), rng: &mut McRng) -> Result<f64> {
        Ok(if rng.uniform() < 1.0 / (1.0 + self.a) { self.a } else { 1.0 / self.a })
    }

    fn log_ratio(&self, theta: &f64, vartheta: &f64, _: &(), u: &f64) -> f64 {
        if theta == vartheta {
            0.0
        } else {
            u.ln()
        }
    }

    fn phi1(&self, _: &f64, _: &f64, _: &(), _: &f64) {}

    fn phi2(&self, _: &f64, _: &f64, _: &(), u: &f64) -> f64 {
        1.0 / u
    }
}

impl EnumerableScheme<f64, ()> for ToyScheme {
    fn aux_support(&self, _: &f64, _: &f64, _: &()) -> Vec<(f64, f64)> {
        vec![(self.a, 1.0 / (1.0 + self.a)), (1.0 / self.a, self.a / (1.0 + self.a))]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(a: f64, alpha: f64, n: usize) -> ToyParams {
        ToyParams::new(a, alpha, n).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        assert!((toy_kernel_prob(p(2.0, 0.0, 1)) - 2.0 / 3.0).abs() < 1e-15);
        for n in [1, 2, 7, 50] {
            assert!((toy_kernel_prob(p(1.0, 0.0, n)) - 1.0).abs() < 1e-12);
        }
        assert!((relaxation_time(p(1.0, 0.0, 1)).unwrap() - 0.5).abs() < 1e-15);
        assert!((relaxation_time(p(2.0, 0.0, 1)).unwrap() - 0.75).abs() < 1e-15);
        assert!((relaxation_time(p(2.0, 0.5, 1)).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(gamma_ratio(3.0, 1).unwrap(), 1.0);
    }

    #[test]
    fn general_sum_matches_single_draw_form() {
        // The double sum evaluated at N = 1 must agree with the two-term form.
        for a in [0.3, 2.0, 7.5] {
            let small = 1.0 / (1.0 + a);
            let mut fwd = 0.0;
            let mut bwd = 0.0;
            for k in 0..=1i64 {
                let w = k as f64 * a + (1.0 - k as f64) / a;
                fwd += binomial_pmf(k, 1, small) * w.min(1.0);
                let sh = a / (1.0 + a) * binomial_pmf(k - 1, 0, small) + small * binomial_pmf(k, 0, small);
                bwd += sh * (1.0 / w).min(1.0);
            }
            assert!((0.5 * (fwd + bwd) - toy_kernel_prob(p(a, 0.0, 1))).abs() < 1e-14);
        }
    }

    #[test]
    fn mixing_bounds() {
        assert_eq!(mixing_time_bounds(0.5, 3.0).unwrap().0, 0.0);
        let (lo, hi) = mixing_time_bounds(0.25, 1.0).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 8f64.ln()).abs() < 1e-15);
        assert!(mixing_time_bounds(1.0, 1.0).is_err());
    }

    #[test]
    fn invalid_params() {
        assert!(ToyParams::new(0.0, 0.0, 1).is_err());
        assert!(ToyParams::new(1.0, 1.0, 1).is_err());
        assert!(ToyParams::new(1.0, 0.0, 0).is_err());
    }
}
