//! Metropolis-Hastings with averaged acceptance ratios over N auxiliary
//! draws, including the weighted-coin generalisation.

use crate::error::{check_nan, Error, Result};
use crate::mh::{
    accept_decision, add_mass, log_proposal_ratio, AuxiliaryScheme, Coin, EnumerableProposal, EnumerableScheme, MhOutcome, ProposalKernel,
};
use crate::num::{log_mean_exp, log_sum_exp};
use crate::rng::{indexed_map, McRng};

/// Probability of choosing each coin. Only ω(θ,ϑ,z,1) is supplied, so the two
/// weights sum to one by construction.
pub trait CoinWeight<P, Z>: Sync {
    fn first(&self, theta: &P, vartheta: &P, z: &Z) -> f64;

    fn weight(&self, theta: &P, vartheta: &P, z: &Z, coin: Coin) -> f64 {
        match coin {
            Coin::One => self.first(theta, vartheta, z),
            Coin::Two => 1.0 - self.first(theta, vartheta, z),
        }
    }

    /// Whether ω reads the latent state. If so, k must be drawn before the
    /// accept/reject decision because the backward weight depends on z′.
    fn latent_dependent(&self) -> bool {
        false
    }
}

/// ω ≡ 1/2.
#[derive(Clone, Copy, Debug, Default)]
pub struct EvenCoin;

impl<P, Z> CoinWeight<P, Z> for EvenCoin {
    fn first(&self, _: &P, _: &P, _: &Z) -> f64 {
        0.5
    }
}

#[derive(Clone, Debug)]
pub struct MhaarConfig<W> {
    pub n_replicates: usize,
    pub coin_weight: W,
    /// Draw k before the accept/reject decision under coin 1 (testing only).
    pub eager_k: bool,
    /// Evaluate the N replicates on the rayon pool.
    pub parallel: bool,
}

impl MhaarConfig<EvenCoin> {
    pub fn new(n_replicates: usize) -> Self {
        MhaarConfig { n_replicates, coin_weight: EvenCoin, eager_k: false, parallel: false }
    }
}

impl<W> MhaarConfig<W> {
    pub fn with_weight<V>(self, coin_weight: V) -> MhaarConfig<V> {
        MhaarConfig { n_replicates: self.n_replicates, coin_weight, eager_k: self.eager_k, parallel: self.parallel }
    }

    fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(Error::Invalid("number of replicates must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioBundle {
    pub log_ratios: Vec<f64>,
    pub log_average: f64,
    pub selected: Option<usize>,
}

/// log[(ω_bwd/ω_fwd) · (1/N) Σ exp(log_ratios)].
pub fn averaged_log_ratio(log_ratios: &[f64], omega_fwd: f64, omega_bwd: f64) -> Result<f64> {
    if log_ratios.is_empty() {
        return Err(Error::Invalid("no ratios to average".into()));
    }
    if log_ratios.iter().any(|x| x.is_nan()) {
        return Err(Error::Nan("averaged ratio"));
    }
    if !(omega_fwd > 0.0 && omega_fwd <= 1.0) || !(0.0..=1.0).contains(&omega_bwd) {
        return Err(Error::Invalid(format!("coin weights out of range: {omega_fwd}, {omega_bwd}")));
    }
    let avg = log_mean_exp(log_ratios);
    if avg == f64::NEG_INFINITY || omega_bwd == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(omega_bwd.ln() - omega_fwd.ln() + avg)
}

/// Draw an index with probability proportional to exp(log_weights).
/// Cumulative scan; the last positive bucket absorbs rounding residue.
pub fn sample_proportional(log_weights: &[f64], rng: &mut McRng) -> Result<usize> {
    if log_weights.iter().any(|x| x.is_nan()) {
        return Err(Error::Nan("categorical weights"));
    }
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::Degenerate("all categorical weights are zero".into()));
    }
    if log_weights.len() == 1 {
        return Ok(0);
    }
    let w: Vec<f64> = log_weights.iter().map(|&l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let target = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &wi) in w.iter().enumerate() {
        if wi > 0.0 {
            last = i;
            acc += wi;
            if target < acc {
                return Ok(i);
            }
        }
    }
    Ok(last)
}

fn coin_first<P, Z, W: CoinWeight<P, Z>>(w: &W, theta: &P, vartheta: &P, z: &Z) -> Result<f64> {
    let p = w.first(theta, vartheta, z);
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid(format!("coin weight {p} outside [0,1]")));
    }
    Ok(p)
}

/// Draw N auxiliary variables under coin 1 and return their log ratios
/// (including the parameter proposal correction).
pub fn forward_ratios<P, Z, S>(
    theta: &P,
    vartheta: &P,
    z: &Z,
    scheme: &S,
    log_q_ratio: f64,
    n: usize,
    parallel: bool,
    rng: &mut McRng,
) -> Result<(Vec<S::Aux>, Vec<f64>)>
where
    P: Sync,
    Z: Sync,
    S: AuxiliaryScheme<P, Z>,
{
    let base = rng.split();
    let draws: Vec<Result<(S::Aux, f64)>> = indexed_map(n, parallel, |i| {
        let mut r = base.child(i as u64).rng();
        let u = scheme.sample_u(theta, vartheta, z, &mut r)?;
        let lr = check_nan(scheme.log_ratio(theta, vartheta, z, &u), "scheme ratio")? + log_q_ratio;
        Ok((u, check_nan(lr, "scheme ratio")?))
    });
    let mut us = Vec::with_capacity(n);
    let mut lrs = Vec::with_capacity(n);
    for d in draws {
        let (u, lr) = d?;
        us.push(u);
        lrs.push(lr);
    }
    Ok((us, lrs))
}

/// One MHAAR transition.
pub fn mhaar_step<P, Z, Q, S, W>(theta: &P, z: &Z, q: &Q, scheme: &S, cfg: &MhaarConfig<W>, rng: &mut McRng) -> Result<MhOutcome<P, Z>>
where
    P: Clone + Sync,
    Z: Clone + Sync,
    Q: ProposalKernel<P>,
    S: AuxiliaryScheme<P, Z>,
    W: CoinWeight<P, Z>,
{
    cfg.validate()?;
    let n = cfg.n_replicates;
    let vartheta = q.sample(theta, rng);
    let lq = log_proposal_ratio(q, theta, &vartheta)?;
    let w1 = coin_first(&cfg.coin_weight, theta, &vartheta, z)?;
    let coin = if rng.uniform() < w1 { Coin::One } else { Coin::Two };

    match coin {
        Coin::One => {
            let (us, lrs) = forward_ratios(theta, &vartheta, z, scheme, lq, n, cfg.parallel, rng)?;
            if lrs.iter().all(|&l| l == f64::NEG_INFINITY) {
                return Ok(MhOutcome::rejected(theta, z, f64::NEG_INFINITY, Some(coin)));
            }
            let eager = cfg.eager_k || cfg.coin_weight.latent_dependent();
            let mut k = if eager { Some(sample_proportional(&lrs, rng)?) } else { None };
            let w_back = match k {
                Some(k) if cfg.coin_weight.latent_dependent() => {
                    let z1 = scheme.phi1(theta, &vartheta, z, &us[k]);
                    1.0 - coin_first(&cfg.coin_weight, &vartheta, theta, &z1)?
                }
                _ => 1.0 - coin_first(&cfg.coin_weight, &vartheta, theta, z)?,
            };
            let log_avg = averaged_log_ratio(&lrs, w1, w_back)?;
            if accept_decision(log_avg, rng)? {
                let k = match k.take() {
                    Some(k) => k,
                    None => sample_proportional(&lrs, rng)?,
                };
                let z1 = scheme.phi1(theta, &vartheta, z, &us[k]);
                Ok(MhOutcome { theta: vartheta, z: z1, accepted: true, log_ratio_used: log_avg, coin: Some(coin), refreshed: false })
            } else {
                Ok(MhOutcome::rejected(theta, z, log_avg, Some(coin)))
            }
        }
        Coin::Two => {
            let k = rng.index(n);
            let base = rng.split();
            let mut rk = base.child(k as u64).rng();
            let uk = scheme.sample_u(theta, &vartheta, z, &mut rk)?;
            let fwd = check_nan(scheme.log_ratio(theta, &vartheta, z, &uk), "scheme ratio")? + lq;
            if fwd == f64::NEG_INFINITY {
                return Ok(MhOutcome::rejected(theta, z, f64::NEG_INFINITY, Some(coin)));
            }
            let z1 = scheme.phi1(theta, &vartheta, z, &uk);
            let w_rev = coin_first(&cfg.coin_weight, &vartheta, theta, &z1)?;
            if w_rev == 0.0 {
                return Ok(MhOutcome::rejected(theta, z, f64::NEG_INFINITY, Some(coin)));
            }
            let w_two = 1.0 - w1;
            let rev: Vec<Result<f64>> = indexed_map(n, cfg.parallel, |i| {
                if i == k {
                    // Image of u^(k) under the involution: its reverse ratio is the
                    // reciprocal of the forward one.
                    return Ok(-fwd);
                }
                let mut r = base.child(i as u64).rng();
                let u = scheme.sample_u(&vartheta, theta, &z1, &mut r)?;
                let lr = check_nan(scheme.log_ratio(&vartheta, theta, &z1, &u), "scheme ratio")? - lq;
                check_nan(lr, "scheme ratio")
            });
            let rev = rev.into_iter().collect::<Result<Vec<f64>>>()?;
            let log_acc = -averaged_log_ratio(&rev, w_rev, w_two)?;
            let log_acc = if log_acc.is_nan() { f64::NEG_INFINITY } else { log_acc };
            if accept_decision(log_acc, rng)? {
                Ok(MhOutcome { theta: vartheta, z: z1, accepted: true, log_ratio_used: log_acc, coin: Some(coin), refreshed: false })
            } else {
                Ok(MhOutcome::rejected(theta, z, log_acc, Some(coin)))
            }
        }
    }
}

/// Call `f` on every N-tuple from a finite support with its product probability.
pub fn for_each_tuple<T, F>(support: &[(T, f64)], len: usize, mut f: F) -> Result<()>
where
    F: FnMut(&[&T], f64) -> Result<()>,
{
    if support.is_empty() {
        return Ok(());
    }
    let mut idx = vec![0usize; len];
    loop {
        let items: Vec<&T> = idx.iter().map(|&i| &support[i].0).collect();
        let p: f64 = idx.iter().map(|&i| support[i].1).product();
        f(&items, p)?;
        let mut pos = 0;
        loop {
            if pos == len {
                return Ok(());
            }
            idx[pos] += 1;
            if idx[pos] < support.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Exact transition row of [`mhaar_step`], by enumerating ϑ, the coin and
/// every N-tuple of auxiliary values.
pub fn mhaar_exact_row<P, Z, Q, S, W>(theta: &P, z: &Z, q: &Q, scheme: &S, cfg: &MhaarConfig<W>) -> Result<Vec<((P, Z), f64)>>
where
    P: Clone + PartialEq,
    Z: Clone + PartialEq,
    Q: EnumerableProposal<P>,
    S: EnumerableScheme<P, Z>,
    W: CoinWeight<P, Z>,
{
    cfg.validate()?;
    let n = cfg.n_replicates;
    let mut row: Vec<((P, Z), f64)> = Vec::new();
    let mut stay = 0.0;
    for (vartheta, qp) in q.support(theta) {
        let lq = log_proposal_ratio(q, theta, &vartheta)?;
        let w1 = coin_first(&cfg.coin_weight, theta, &vartheta, z)?;
        let fwd_support = scheme.aux_support(theta, &vartheta, z);

        if w1 > 0.0 {
            let mass = qp * w1;
            for_each_tuple(&fwd_support, n, |us, p| {
                let lrs: Vec<f64> =
                    us.iter().map(|u| check_nan(scheme.log_ratio(theta, &vartheta, z, u) + lq, "scheme ratio")).collect::<Result<_>>()?;
                let total = log_sum_exp(&lrs);
                if total == f64::NEG_INFINITY {
                    stay += mass * p;
                    return Ok(());
                }
                for (k, u) in us.iter().enumerate() {
                    let pk = (lrs[k] - total).exp();
                    if pk == 0.0 {
                        continue;
                    }
                    let z1 = scheme.phi1(theta, &vartheta, z, u);
                    let back_z = if cfg.coin_weight.latent_dependent() { &z1 } else { z };
                    let w_back = 1.0 - coin_first(&cfg.coin_weight, &vartheta, theta, back_z)?;
                    let acc = averaged_log_ratio(&lrs, w1, w_back)?.min(0.0).exp();
                    add_mass(&mut row, (vartheta.clone(), z1), mass * p * pk * acc);
                    stay += mass * p * pk * (1.0 - acc);
                }
                Ok(())
            })?;
        }

        if w1 < 1.0 {
            // The averaged reverse ratio is symmetric in its arguments, so the
            // position of k among the N slots does not matter.
            let mass = qp * (1.0 - w1);
            for (uk, pk) in &fwd_support {
                let fwd = check_nan(scheme.log_ratio(theta, &vartheta, z, uk) + lq, "scheme ratio")?;
                if fwd == f64::NEG_INFINITY {
                    stay += mass * pk;
                    continue;
                }
                let z1 = scheme.phi1(theta, &vartheta, z, uk);
                let w_rev = coin_first(&cfg.coin_weight, &vartheta, theta, &z1)?;
                if w_rev == 0.0 {
                    stay += mass * pk;
                    continue;
                }
                let rev_support = scheme.aux_support(&vartheta, theta, &z1);
                for_each_tuple(&rev_support, n - 1, |us, p| {
                    let mut lrs = vec![-fwd];
                    for u in us {
                        lrs.push(check_nan(scheme.log_ratio(&vartheta, theta, &z1, u) - lq, "scheme ratio")?);
                    }
                    let acc = (-averaged_log_ratio(&lrs, w_rev, 1.0 - w1)?).min(0.0).exp();
                    add_mass(&mut row, (vartheta.clone(), z1.clone()), mass * pk * p * acc);
                    stay += mass * pk * p * (1.0 - acc);
                    Ok(())
                })?;
            }
        }
    }
    add_mass(&mut row, (theta.clone(), z.clone()), stay);
    Ok(row)
}
