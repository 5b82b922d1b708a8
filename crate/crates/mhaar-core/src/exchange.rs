//! Exchange algorithm and its N-average on a finite exponential family
//! g_θ(y) = exp(θ·S(y)) whose normalising constant can be enumerated.

use crate::error::{check_nan, Error, Result};
use crate::mh::{accept_decision, log_proposal_ratio, mh_step, AuxiliaryScheme, Coin, EnumerableScheme, MhOutcome, ProposalKernel};
use crate::mhaar::{averaged_log_ratio, sample_proportional};
use crate::num::{log_sum_exp, normal_log_pdf, softmax};
use crate::rng::{indexed_map, McRng};

/// Sufficient statistic of a symbol sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statistic {
    /// Sum of symbol values.
    Sum,
    /// Number of adjacent equal pairs.
    Agreement,
}

impl Statistic {
    pub fn eval(self, y: &[u8]) -> f64 {
        match self {
            Statistic::Sum => y.iter().map(|&v| v as f64).sum(),
            Statistic::Agreement => y.windows(2).filter(|w| w[0] == w[1]).count() as f64,
        }
    }
}

/// Largest support the enumeration accepts.
pub const MAX_SUPPORT: usize = 10_000;

/// Sequences of `length` symbols from `0..alphabet`, lumped by statistic value.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpFamilyModel {
    pub alphabet: usize,
    pub length: usize,
    pub statistic: Statistic,
    /// Distinct statistic values, ascending.
    pub stats: Vec<f64>,
    /// log of the number of sequences with each statistic value.
    pub log_mult: Vec<f64>,
    /// Statistic of the observed sequence.
    pub observed: f64,
    /// Standard deviation of the Gaussian prior on θ.
    pub prior_sd: f64,
}

impl ExpFamilyModel {
    pub fn new(alphabet: usize, length: usize, statistic: Statistic, data: &[u8], prior_sd: f64) -> Result<Self> {
        if alphabet < 2 || length == 0 {
            return Err(Error::Invalid("need an alphabet of at least 2 symbols and positive length".into()));
        }
        let size = (alphabet as f64).powi(length as i32);
        if size > MAX_SUPPORT as f64 {
            return Err(Error::Invalid(format!("support of {size} sequences exceeds {MAX_SUPPORT}")));
        }
        if data.len() != length || data.iter().any(|&v| v as usize >= alphabet) {
            return Err(Error::Invalid("observed sequence does not match the model".into()));
        }
        if !(prior_sd > 0.0) {
            return Err(Error::Invalid("prior sd must be positive".into()));
        }
        let mut counts: Vec<(f64, usize)> = Vec::new();
        let mut seq = vec![0u8; length];
        for _ in 0..size as usize {
            let s = statistic.eval(&seq);
            match counts.iter_mut().find(|(v, _)| *v == s) {
                Some(e) => e.1 += 1,
                None => counts.push((s, 1)),
            }
            for d in seq.iter_mut() {
                *d += 1;
                if (*d as usize) < alphabet {
                    break;
                }
                *d = 0;
            }
        }
        counts.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(ExpFamilyModel {
            alphabet,
            length,
            statistic,
            stats: counts.iter().map(|c| c.0).collect(),
            log_mult: counts.iter().map(|c| (c.1 as f64).ln()).collect(),
            observed: statistic.eval(data),
            prior_sd,
        })
    }

    pub fn log_g(&self, theta: f64, stat: f64) -> f64 {
        theta * stat
    }

    pub fn log_prior(&self, theta: f64) -> f64 {
        normal_log_pdf(theta, 0.0, self.prior_sd * self.prior_sd)
    }

    fn log_weights(&self, theta: f64) -> Vec<f64> {
        self.stats.iter().zip(&self.log_mult).map(|(&s, &m)| m + self.log_g(theta, s)).collect()
    }

    /// log C_θ by enumeration.
    pub fn log_normalizer(&self, theta: f64) -> f64 {
        log_sum_exp(&self.log_weights(theta))
    }

    /// Probability of each lumped support point under ℓ_θ.
    pub fn pmf(&self, theta: f64) -> Vec<f64> {
        softmax(&self.log_weights(theta))
    }

    /// Exact draw from ℓ_θ by inverse CDF; returns a support index.
    pub fn sample_exact(&self, theta: f64, rng: &mut McRng) -> Result<usize> {
        sample_proportional(&self.log_weights(theta), rng)
    }

    /// Unnormalised log posterior log η(θ) + log ℓ_θ(y), exact by enumeration.
    pub fn log_posterior(&self, theta: f64) -> f64 {
        self.log_prior(theta) + self.log_g(theta, self.observed) - self.log_normalizer(theta)
    }
}

/// log of the single-draw exchange ratio, including the proposal.
pub fn exchange_log_ratio<Q: ProposalKernel<f64>>(theta: f64, vartheta: f64, u_stat: f64, model: &ExpFamilyModel, q: &Q) -> Result<f64> {
    let lq = log_proposal_ratio(q, &theta, &vartheta)?;
    check_nan(lq + scheme_ratio(model, theta, vartheta, u_stat), "exchange ratio")
}

fn scheme_ratio(model: &ExpFamilyModel, theta: f64, vartheta: f64, u_stat: f64) -> f64 {
    if theta == vartheta {
        return 0.0;
    }
    model.log_prior(vartheta) - model.log_prior(theta) + model.log_g(vartheta, model.observed) - model.log_g(theta, model.observed)
        + model.log_g(theta, u_stat)
        - model.log_g(vartheta, u_stat)
}

/// The exchange move as an auxiliary scheme: u ∼ ℓ_ϑ, identity involution on u.
#[derive(Clone, Copy, Debug)]
pub struct ExchangeScheme<'a> {
    pub model: &'a ExpFamilyModel,
}

impl AuxiliaryScheme<f64, ()> for ExchangeScheme<'_> {
    type Aux = usize;

    fn sample_u(&self, _: &f64, vartheta: &f64, _: &(), rng: &mut McRng) -> Result<usize> {
        self.model.sample_exact(*vartheta, rng)
    }

    fn log_ratio(&self, theta: &f64, vartheta: &f64, _: &(), u: &usize) -> f64 {
        scheme_ratio(self.model, *theta, *vartheta, self.model.stats[*u])
    }

    fn phi1(&self, _: &f64, _: &f64, _: &(), _: &usize) {}

    fn phi2(&self, _: &f64, _: &f64, _: &(), u: &usize) -> usize {
        *u
    }
}

impl EnumerableScheme<f64, ()> for ExchangeScheme<'_> {
    fn aux_support(&self, _: &f64, vartheta: &f64, _: &()) -> Vec<(usize, f64)> {
        self.model.pmf(*vartheta).into_iter().enumerate().filter(|(_, p)| *p > 0.0).collect()
    }
}

/// Plain exchange algorithm: one auxiliary dataset per proposal.
pub fn exchange_step<Q: ProposalKernel<f64>>(theta: f64, model: &ExpFamilyModel, q: &Q, rng: &mut McRng) -> Result<MhOutcome<f64, ()>> {
    mh_step(&theta, &(), q, &ExchangeScheme { model }, rng)
}

/// Averaged exchange move with N auxiliary datasets and a fair coin.
/// Under coin 2 the first draw comes from ℓ_ϑ and the other N − 1 from ℓ_θ.
pub fn averaged_exchange_step<Q: ProposalKernel<f64>>(
    theta: f64,
    model: &ExpFamilyModel,
    q: &Q,
    n: usize,
    parallel: bool,
    rng: &mut McRng,
) -> Result<MhOutcome<f64, ()>> {
    if n == 0 {
        return Err(Error::Invalid("number of replicates must be at least 1".into()));
    }
    let vartheta = q.sample(&theta, rng);
    let coin = if rng.uniform() < 0.5 { Coin::One } else { Coin::Two };
    let base = rng.split();
    let ratios: Vec<Result<f64>> = indexed_map(n, parallel, |i| {
        let mut r = base.child(i as u64).rng();
        match coin {
            Coin::One => {
                let u = model.sample_exact(vartheta, &mut r)?;
                exchange_log_ratio(theta, vartheta, model.stats[u], model, q)
            }
            Coin::Two => {
                let from = if i == 0 { vartheta } else { theta };
                let u = model.sample_exact(from, &mut r)?;
                exchange_log_ratio(vartheta, theta, model.stats[u], model, q)
            }
        }
    });
    let ratios = ratios.into_iter().collect::<Result<Vec<f64>>>()?;
    let avg = averaged_log_ratio(&ratios, 0.5, 0.5)?;
    let log_acc = match coin {
        Coin::One => avg,
        Coin::Two => -avg,
    };
    if accept_decision(log_acc, rng)? {
        Ok(MhOutcome { theta: vartheta, z: (), accepted: true, log_ratio_used: log_acc, coin: Some(coin), refreshed: false })
    } else {
        Ok(MhOutcome::rejected(&theta, &(), log_acc, Some(coin)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mh::GaussianWalk;

    fn model() -> ExpFamilyModel {
        ExpFamilyModel::new(2, 6, Statistic::Agreement, &[0, 0, 1, 1, 1, 0], 2.0).unwrap()
    }

    #[test]
    fn enumeration_counts() {
        let m = model();
        let total: f64 = m.log_mult.iter().map(|l| l.exp()).sum();
        assert_eq!(total, 64.0);
        assert_eq!(m.observed, 3.0);
        // Binary sequences of length 6 with j agreements: 2·C(5, j).
        assert_eq!(m.stats, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((m.log_mult[2].exp() - 20.0).abs() < 1e-9);
        assert!((m.log_normalizer(0.0) - 64f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ratio_edge_cases() {
        let m = model();
        let q = GaussianWalk { sd: 0.5 };
        assert_eq!(exchange_log_ratio(0.3, 0.3, 2.0, &m, &q).unwrap(), 0.0);
    }

    #[test]
    fn rejects_oversized_support() {
        assert!(ExpFamilyModel::new(4, 7, Statistic::Sum, &[0; 7], 1.0).is_err());
    }
}
