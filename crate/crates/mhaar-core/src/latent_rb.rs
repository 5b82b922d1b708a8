//! Rao-Blackwellised averaged kernels for models with T independent latent
//! coordinates, π(θ, z) ∝ η(θ) ∏_t γ_{t,θ}(z_t).
//!
//! A particle matrix holds M candidates per coordinate with the current z in
//! slot 0. The averaged ratio sums over all M^T paths through the matrix and
//! factorises over rows, so it costs O(MT).

use std::fmt::Debug;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_nan, Error, Result};
use crate::mh::{accept_decision, add_mass, log_proposal_ratio, Coin, EnumerableProposal, MhOutcome, ProposalKernel};
use crate::mhaar::sample_proportional;
use crate::num::{log_sum_exp, normal_log_pdf};
use crate::rng::{indexed_map, McRng};

pub trait ProductLatentModel: Sync {
    type Elem: Clone + Debug + PartialEq + Send + Sync;

    fn horizon(&self) -> usize;
    /// log γ_{t,θ}(z).
    fn log_gamma(&self, t: usize, theta: f64, z: &Self::Elem) -> f64;
    /// Draw from q_{t,θ,ϑ}.
    fn sample_q(&self, t: usize, theta: f64, vartheta: f64, rng: &mut McRng) -> Self::Elem;
    fn log_q(&self, t: usize, theta: f64, vartheta: f64, z: &Self::Elem) -> f64;
    fn log_prior(&self, theta: f64) -> f64;

    fn log_target(&self, theta: f64, z: &[Self::Elem]) -> f64 {
        self.log_prior(theta) + z.iter().enumerate().map(|(t, zt)| self.log_gamma(t, theta, zt)).sum::<f64>()
    }
}

/// Model with a finite alphabet per coordinate, for exact enumeration.
pub trait EnumerableLatentModel: ProductLatentModel {
    fn alphabet(&self, t: usize) -> Vec<Self::Elem>;
}

/// Choice of the bridging density γ_{t,θ,ϑ}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bridge {
    /// γ_{t,θ,ϑ} = γ_{t,θ}.
    Source,
    /// γ_{t,θ,ϑ} = γ_{t,(θ+ϑ)/2}.
    Midpoint,
}

impl Bridge {
    pub fn param(self, theta: f64, vartheta: f64) -> f64 {
        match self {
            Bridge::Source => theta,
            Bridge::Midpoint => 0.5 * (theta + vartheta),
        }
    }
}

/// M candidates for each of T coordinates; slot 0 of every row is the conditioning path.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleMatrix<E> {
    pub rows: Vec<Vec<E>>,
}

/// One slot index per row.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IndexPath(pub Vec<usize>);

impl IndexPath {
    pub fn ones(t: usize) -> Self {
        IndexPath(vec![0; t])
    }
}

impl<E: Clone> ParticleMatrix<E> {
    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn m(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    pub fn path(&self, k: &IndexPath) -> Vec<E> {
        self.rows.iter().zip(&k.0).map(|(r, &i)| r[i].clone()).collect()
    }

    /// Swap slot 0 with slot k_t in every row.
    pub fn swap_path(&self, k: &IndexPath) -> Self {
        let mut rows = self.rows.clone();
        for (r, &i) in rows.iter_mut().zip(&k.0) {
            r.swap(0, i);
        }
        ParticleMatrix { rows }
    }
}

/// Which proposal filled the matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// q_{t,θ,ϑ}
    Forward,
    /// q_{t,ϑ,θ}
    Backward,
}

/// Slot 0 = z; other slots drawn iid from q_{t,θ,ϑ} (forward) or q_{t,ϑ,θ}
/// (backward). Row t uses substream t of a fresh split.
pub fn fill_particles<L: ProductLatentModel>(
    z: &[L::Elem],
    theta: f64,
    vartheta: f64,
    model: &L,
    m: usize,
    direction: Direction,
    parallel: bool,
    rng: &mut McRng,
) -> Result<ParticleMatrix<L::Elem>> {
    if m < 1 || z.len() != model.horizon() {
        return Err(Error::Invalid("need m ≥ 1 and a latent path of length T".into()));
    }
    let (a, b) = match direction {
        Direction::Forward => (theta, vartheta),
        Direction::Backward => (vartheta, theta),
    };
    let base = rng.split();
    let rows = indexed_map(z.len(), parallel, |t| {
        let mut r = base.child(t as u64).rng();
        let mut row = Vec::with_capacity(m);
        row.push(z[t].clone());
        for _ in 1..m {
            row.push(model.sample_q(t, a, b, &mut r));
        }
        row
    });
    Ok(ParticleMatrix { rows })
}

/// Per-slot log weights for a matrix filled by q_{t,a,b}, where the move
/// goes from parameter `a` to parameter `b`.
#[derive(Clone, Debug)]
pub struct RbCache {
    pub a: f64,
    pub b: f64,
    /// log q(b,a)η(b) − log q(a,b)η(a).
    pub log_prefactor: f64,
    /// log γ_{t,a}
    pub src: Vec<Vec<f64>>,
    /// log γ_{t,b}
    pub dst: Vec<Vec<f64>>,
    /// log γ_{t,a,b}
    pub mid: Vec<Vec<f64>>,
    /// log q_{t,a,b}
    pub lq: Vec<Vec<f64>>,
    /// Σ_t [logsumexp(dst − lq) − logsumexp(mid − lq)]
    pub row_term: f64,
}

impl RbCache {
    pub fn new<L, Q>(v: &ParticleMatrix<L::Elem>, a: f64, b: f64, model: &L, q: &Q, bridge: Bridge) -> Result<Self>
    where
        L: ProductLatentModel,
        Q: ProposalKernel<f64>,
    {
        let c = bridge.param(a, b);
        let log_prefactor = check_nan(log_proposal_ratio(q, &a, &b)? + model.log_prior(b) - model.log_prior(a), "latent prefactor")?;
        let eval = |f: &dyn Fn(usize, &L::Elem) -> f64| -> Vec<Vec<f64>> {
            v.rows.iter().enumerate().map(|(t, r)| r.iter().map(|x| f(t, x)).collect()).collect()
        };
        let src = eval(&|t, x| model.log_gamma(t, a, x));
        let dst = eval(&|t, x| model.log_gamma(t, b, x));
        let mid = if c == a { src.clone() } else { eval(&|t, x| model.log_gamma(t, c, x)) };
        let lq = eval(&|t, x| model.log_q(t, a, b, x));
        for block in [&src, &dst, &mid, &lq] {
            if block.iter().flatten().any(|x| x.is_nan()) {
                return Err(Error::Nan("latent weights"));
            }
        }
        let mut row_term = 0.0;
        for t in 0..v.rows.len() {
            let num: Vec<f64> = dst[t].iter().zip(&lq[t]).map(|(g, q)| g - q).collect();
            let den: Vec<f64> = mid[t].iter().zip(&lq[t]).map(|(g, q)| g - q).collect();
            let (n, d) = (log_sum_exp(&num), log_sum_exp(&den));
            if n == f64::NEG_INFINITY {
                row_term = f64::NEG_INFINITY;
                break;
            }
            if d == f64::NEG_INFINITY {
                return Err(Error::Degenerate(format!("bridging weights vanish in row {t}")));
            }
            row_term += n - d;
        }
        Ok(RbCache { a, b, log_prefactor, src, dst, mid, lq, row_term })
    }

    /// log r_{l,v}(a, b): Rao-Blackwellised ratio with path l in the role of the current state.
    pub fn log_ratio(&self, l: &IndexPath) -> f64 {
        if self.row_term == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let path: f64 = l.0.iter().enumerate().map(|(t, &i)| self.mid[t][i] - self.src[t][i]).sum();
        self.log_prefactor + path + self.row_term
    }

    /// log r_{v^(1),v^(k)}(a, b): single-path ratio.
    pub fn log_single_path_ratio(&self, k: &IndexPath) -> f64 {
        let mut s = self.log_prefactor;
        for (t, &i) in k.0.iter().enumerate() {
            s += self.mid[t][0] - self.src[t][0] + self.dst[t][i] - self.mid[t][i];
        }
        s
    }

    fn row_weights(&self, which: Weights, t: usize) -> Vec<f64> {
        let g = match which {
            Weights::Target => &self.dst[t],
            Weights::Bridge => &self.mid[t],
            Weights::Source => &self.src[t],
        };
        g.iter().zip(&self.lq[t]).map(|(g, q)| g - q).collect()
    }

    /// Draw a path with independent per-row categoricals.
    pub fn sample_path(&self, which: Weights, rng: &mut McRng) -> Result<IndexPath> {
        (0..self.lq.len()).map(|t| sample_proportional(&self.row_weights(which, t), rng)).collect::<Result<_>>().map(IndexPath)
    }

    /// log probability of a path under the per-row categoricals.
    pub fn path_log_prob(&self, which: Weights, k: &IndexPath) -> f64 {
        (0..self.lq.len())
            .map(|t| {
                let w = self.row_weights(which, t);
                w[k.0[t]] - log_sum_exp(&w)
            })
            .sum()
    }
}

/// Numerator of the per-row selection weights, always divided by q_{t,a,b}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weights {
    /// γ_{t,b}: the weighted path law of the averaged ratio.
    Target,
    /// γ_{t,a,b}: the single-path selection law.
    Bridge,
    /// γ_{t,a}: refreshment at the source parameter.
    Source,
}

/// log r_{l,v}(θ,ϑ) for a matrix filled forward.
pub fn rb_log_ratio<L, Q>(
    v: &ParticleMatrix<L::Elem>,
    l: &IndexPath,
    theta: f64,
    vartheta: f64,
    model: &L,
    q: &Q,
    bridge: Bridge,
) -> Result<f64>
where
    L: ProductLatentModel,
    Q: ProposalKernel<f64>,
{
    Ok(RbCache::new(v, theta, vartheta, model, q, bridge)?.log_ratio(l))
}

/// Path drawn from the weighted law b^(1): rows ∝ γ_{t,ϑ}/q_{t,θ,ϑ}.
pub fn sample_path_b1<L, Q>(
    v: &ParticleMatrix<L::Elem>,
    theta: f64,
    vartheta: f64,
    model: &L,
    q: &Q,
    bridge: Bridge,
    rng: &mut McRng,
) -> Result<IndexPath>
where
    L: ProductLatentModel,
    Q: ProposalKernel<f64>,
{
    RbCache::new(v, theta, vartheta, model, q, bridge)?.sample_path(Weights::Target, rng)
}

/// Path drawn from b^(2) = b_{ϑ,θ} on a matrix filled backward: rows ∝ γ_{t,ϑ,θ}/q_{t,ϑ,θ}.
pub fn sample_path_b2<L, Q>(
    v: &ParticleMatrix<L::Elem>,
    theta: f64,
    vartheta: f64,
    model: &L,
    q: &Q,
    bridge: Bridge,
    rng: &mut McRng,
) -> Result<IndexPath>
where
    L: ProductLatentModel,
    Q: ProposalKernel<f64>,
{
    RbCache::new(v, vartheta, theta, model, q, bridge)?.sample_path(Weights::Bridge, rng)
}

/// What happens to the latent state after a rejected move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Refresh {
    Off,
    /// Adopt a path drawn ∝ γ_θ/q; only valid with the source bridge.
    Simple,
    /// Second-stage proposal with its own acceptance ratio; any bridge.
    DelayedRejection,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RbConfig {
    pub m: usize,
    pub bridge: Bridge,
    pub refresh: Refresh,
    pub parallel: bool,
}

impl RbConfig {
    pub fn new(m: usize, bridge: Bridge) -> Self {
        RbConfig { m, bridge, refresh: Refresh::Off, parallel: false }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Invalid("need at least one particle per row".into()));
        }
        if self.refresh == Refresh::Simple && self.bridge != Bridge::Source {
            return Err(Error::Invalid("simple refreshment requires the source bridge".into()));
        }
        Ok(())
    }
}

/// Cache in the orientation of the coin: (θ, ϑ) under coin 1, (ϑ, θ) under coin 2.
fn coin_cache<L, Q>(v: &ParticleMatrix<L::Elem>, theta: f64, vartheta: f64, coin: Coin, model: &L, q: &Q, bridge: Bridge) -> Result<RbCache>
where
    L: ProductLatentModel,
    Q: ProposalKernel<f64>,
{
    match coin {
        Coin::One => RbCache::new(v, theta, vartheta, model, q, bridge),
        Coin::Two => RbCache::new(v, vartheta, theta, model, q, bridge),
    }
}

/// Refreshment path law: rows ∝ γ_{t,θ}/q, with q the proposal that filled the matrix.
fn refresh_weights(coin: Coin) -> Weights {
    match coin {
        Coin::One => Weights::Source,
        Coin::Two => Weights::Target,
    }
}

/// Draw a fresh latent path after a rejection when γ_{t,θ,ϑ} = γ_{t,θ}.
pub fn refresh_latent<E: Clone>(v: &ParticleMatrix<E>, cache: &RbCache, coin: Coin, bridge: Bridge, rng: &mut McRng) -> Result<Vec<E>> {
    if bridge != Bridge::Source {
        return Err(Error::Invalid("simple refreshment requires the source bridge".into()));
    }
    let l = cache.sample_path(refresh_weights(coin), rng)?;
    Ok(v.path(&l))
}

/// log of the second-stage acceptance ratio for refreshment path l.
/// Under coin 1 it is log[(1 − min{1, r_{l,v}}) / (1 − min{1, r_{1,v}})].
/// Under coin 2 the first-stage rejection probability is a symmetric
/// function of the rows, so the ratio is 1.
pub fn delayed_rejection_log_ratio(cache: &RbCache, coin: Coin, l: &IndexPath) -> Result<f64> {
    match coin {
        Coin::One => {
            let r1 = cache.log_ratio(&IndexPath::ones(l.0.len()));
            let rl = cache.log_ratio(l);
            if r1 >= 0.0 {
                return Err(Error::Contract("second stage after a first stage that always accepts".into()));
            }
            let num = -(rl.min(0.0)).exp_m1();
            let den = -(r1.min(0.0)).exp_m1();
            check_nan(num.ln() - den.ln(), "delayed rejection ratio")
        }
        Coin::Two => Ok(0.0),
    }
}

/// Second stage after a rejected first stage. Returns the new latent path
/// and whether it was accepted.
pub fn delayed_rejection_general<E: Clone>(
    v: &ParticleMatrix<E>,
    cache: &RbCache,
    coin: Coin,
    stage_one_accepted: bool,
    rng: &mut McRng,
) -> Result<(Vec<E>, bool, f64)> {
    if stage_one_accepted {
        return Err(Error::Contract("delayed rejection called after an accepted move".into()));
    }
    let l = cache.sample_path(refresh_weights(coin), rng)?;
    let lr = delayed_rejection_log_ratio(cache, coin, &l)?;
    if accept_decision(lr, rng)? {
        Ok((v.path(&l), true, lr))
    } else {
        Ok((v.path(&IndexPath::ones(l.0.len())), false, lr))
    }
}

/// One Rao-Blackwellised averaged transition.
pub fn mhaar_rb_step<L, Q>(
    theta: f64,
    z: &[L::Elem],
    model: &L,
    q: &Q,
    cfg: &RbConfig,
    rng: &mut McRng,
) -> Result<MhOutcome<f64, Vec<L::Elem>>>
where
    L: ProductLatentModel,
    Q: ProposalKernel<f64>,
{
    cfg.validate()?;
    let vartheta = q.sample(&theta, rng);
    let coin = if rng.uniform() < 0.5 { Coin::One } else { Coin::Two };
    let direction = match coin {
        Coin::One => Direction::Forward,
        Coin::Two => Direction::Backward,
    };
    let v = fill_particles(z, theta, vartheta, model, cfg.m, direction, cfg.parallel, rng)?;
    let cache = coin_cache(&v, theta, vartheta, coin, model, q, cfg.bridge)?;
    let t = z.len();
    let (log_acc, k) = match coin {
        Coin::One => (cache.log_ratio(&IndexPath::ones(t)), None),
        Coin::Two => {
            let k = cache.sample_path(Weights::Bridge, rng)?;
            (-cache.log_ratio(&k), Some(k))
        }
    };
    let log_acc = check_nan(log_acc, "latent acceptance ratio")?;
    if accept_decision(log_acc, rng)? {
        let k = match k {
            Some(k) => k,
            None => cache.sample_path(Weights::Target, rng)?,
        };
        return Ok(MhOutcome {
            theta: vartheta,
            z: v.path(&k),
            accepted: true,
            log_ratio_used: log_acc,
            coin: Some(coin),
            refreshed: false,
        });
    }
    let mut out = MhOutcome::rejected(&theta, &z.to_vec(), log_acc, Some(coin));
    match cfg.refresh {
        Refresh::Off => {}
        Refresh::Simple => {
            out.z = refresh_latent(&v, &cache, coin, cfg.bridge, rng)?;
            out.refreshed = true;
        }
        Refresh::DelayedRejection => {
            let (path, acc, _) = delayed_rejection_general(&v, &cache, coin, false, rng)?;
            out.z = path;
            out.refreshed = acc;
        }
    }
    Ok(out)
}

/// Single-path baseline: one path drawn ∝ γ_{t,θ,ϑ}/q_{t,θ,ϑ} with the
/// midpoint bridge. Requires q_{t,θ,ϑ} = q_{t,ϑ,θ}.
pub fn ais_mcmc_step<L, Q>(
    theta: f64,
    z: &[L::Elem],
    model: &L,
    q: &Q,
    m: usize,
    parallel: bool,
    rng: &mut McRng,
) -> Result<MhOutcome<f64, Vec<L::Elem>>>
where
    L: ProductLatentModel,
    Q: ProposalKernel<f64>,
{
    if m < 1 {
        return Err(Error::Invalid("need at least one particle per row".into()));
    }
    let vartheta = q.sample(&theta, rng);
    let v = fill_particles(z, theta, vartheta, model, m, Direction::Forward, parallel, rng)?;
    let cache = RbCache::new(&v, theta, vartheta, model, q, Bridge::Midpoint)?;
    let k = cache.sample_path(Weights::Bridge, rng)?;
    let lr = check_nan(cache.log_single_path_ratio(&k), "single-path ratio")?;
    if accept_decision(lr, rng)? {
        Ok(MhOutcome { theta: vartheta, z: v.path(&k), accepted: true, log_ratio_used: lr, coin: None, refreshed: false })
    } else {
        Ok(MhOutcome::rejected(&theta, &z.to_vec(), lr, None))
    }
}

/// Call `f` on every path in ⟦M⟧^T.
pub fn for_each_path<F: FnMut(&IndexPath) -> Result<()>>(t: usize, m: usize, mut f: F) -> Result<()> {
    let mut k = IndexPath(vec![0; t]);
    loop {
        f(&k)?;
        let mut pos = 0;
        loop {
            if pos == t {
                return Ok(());
            }
            k.0[pos] += 1;
            if k.0[pos] < m {
                break;
            }
            k.0[pos] = 0;
            pos += 1;
        }
    }
}

/// Call `f` on every fill of slots 1..M with its probability under q_{t,a,b}.
fn for_each_fill<L, F>(z: &[L::Elem], a: f64, b: f64, model: &L, m: usize, mut f: F) -> Result<()>
where
    L: EnumerableLatentModel,
    F: FnMut(&ParticleMatrix<L::Elem>, f64) -> Result<()>,
{
    let t_len = z.len();
    let alph: Vec<Vec<L::Elem>> = (0..t_len).map(|t| model.alphabet(t)).collect();
    let probs: Vec<Vec<f64>> = (0..t_len).map(|t| alph[t].iter().map(|x| model.log_q(t, a, b, x).exp()).collect()).collect();
    let cells = t_len * (m - 1);
    let mut idx = vec![0usize; cells];
    loop {
        let mut p = 1.0;
        let rows: Vec<Vec<L::Elem>> = (0..t_len)
            .map(|t| {
                let mut r = vec![z[t].clone()];
                for j in 0..m - 1 {
                    let c = idx[t * (m - 1) + j];
                    p *= probs[t][c];
                    r.push(alph[t][c].clone());
                }
                r
            })
            .collect();
        if p > 0.0 {
            f(&ParticleMatrix { rows }, p)?;
        }
        let mut pos = 0;
        loop {
            if pos == cells {
                return Ok(());
            }
            idx[pos] += 1;
            if idx[pos] < alph[pos / (m - 1)].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Exact transition row of [`mhaar_rb_step`] on an enumerable model.
pub fn rb_exact_row<L, Q>(theta: f64, z: &[L::Elem], model: &L, q: &Q, cfg: &RbConfig) -> Result<Vec<((f64, Vec<L::Elem>), f64)>>
where
    L: EnumerableLatentModel,
    Q: EnumerableProposal<f64>,
{
    cfg.validate()?;
    let t_len = z.len();
    let m = cfg.m;
    let mut row = Vec::new();
    for (vartheta, qp) in q.support(&theta) {
        for coin in [Coin::One, Coin::Two] {
            let (a, b) = match coin {
                Coin::One => (theta, vartheta),
                Coin::Two => (vartheta, theta),
            };
            for_each_fill(z, a, b, model, m, |v, pv| {
                let cache = coin_cache(v, theta, vartheta, coin, model, q, cfg.bridge)?;
                let mass = qp * 0.5 * pv;
                let mut reject = 0.0;
                match coin {
                    Coin::One => {
                        let acc = cache.log_ratio(&IndexPath::ones(t_len)).min(0.0).exp();
                        if acc > 0.0 {
                            for_each_path(t_len, m, |k| {
                                let pk = cache.path_log_prob(Weights::Target, k).exp();
                                add_mass(&mut row, (vartheta, v.path(k)), mass * acc * pk);
                                Ok(())
                            })?;
                        }
                        reject = 1.0 - acc;
                    }
                    Coin::Two => {
                        for_each_path(t_len, m, |k| {
                            let pk = cache.path_log_prob(Weights::Bridge, k).exp();
                            let acc = (-cache.log_ratio(k)).min(0.0).exp();
                            add_mass(&mut row, (vartheta, v.path(k)), mass * pk * acc);
                            reject += pk * (1.0 - acc);
                            Ok(())
                        })?;
                    }
                }
                if reject > 0.0 {
                    match cfg.refresh {
                        Refresh::Off => add_mass(&mut row, (theta, z.to_vec()), mass * reject),
                        Refresh::Simple | Refresh::DelayedRejection => {
                            let w = refresh_weights(coin);
                            for_each_path(t_len, m, |l| {
                                let pl = cache.path_log_prob(w, l).exp();
                                let acc2 = if cfg.refresh == Refresh::Simple {
                                    1.0
                                } else {
                                    delayed_rejection_log_ratio(&cache, coin, l)?.min(0.0).exp()
                                };
                                add_mass(&mut row, (theta, v.path(l)), mass * reject * pl * acc2);
                                add_mass(&mut row, (theta, z.to_vec()), mass * reject * pl * (1.0 - acc2));
                                Ok(())
                            })?;
                        }
                    }
                }
                Ok(())
            })?;
        }
    }
    Ok(row)
}

/// Exact transition row of [`ais_mcmc_step`] on an enumerable model.
pub fn ais_exact_row<L, Q>(theta: f64, z: &[L::Elem], model: &L, q: &Q, m: usize) -> Result<Vec<((f64, Vec<L::Elem>), f64)>>
where
    L: EnumerableLatentModel,
    Q: EnumerableProposal<f64>,
{
    let t_len = z.len();
    let mut row = Vec::new();
    for (vartheta, qp) in q.support(&theta) {
        for_each_fill(z, theta, vartheta, model, m, |v, pv| {
            let cache = RbCache::new(v, theta, vartheta, model, q, Bridge::Midpoint)?;
            for_each_path(t_len, m, |k| {
                let pk = cache.path_log_prob(Weights::Bridge, k).exp();
                let acc = cache.log_single_path_ratio(k).min(0.0).exp();
                add_mass(&mut row, (vartheta, v.path(k)), qp * pv * pk * acc);
                add_mass(&mut row, (theta, z.to_vec()), qp * pv * pk * (1.0 - acc));
                Ok(())
            })
        })?;
    }
    Ok(row)
}

/// Finite-alphabet test model: γ_{t,θ}(x) = exp(θ·f_t(x) + c_t(x)) on
/// symbols 0..K, and q_{t,θ,ϑ} ∝ exp((θ+ϑ)/2 · d_t(x)).
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalLatentModel {
    pub features: Vec<Vec<f64>>,
    pub offsets: Vec<Vec<f64>>,
    pub proposal_features: Vec<Vec<f64>>,
    /// log prior on θ for each grid point.
    pub grid: Vec<f64>,
    pub log_prior_grid: Vec<f64>,
}

impl CategoricalLatentModel {
    /// Four-letter instance with T coordinates on a three-point θ grid.
    pub fn desk(t: usize) -> Self {
        let features = (0..t).map(|s| vec![0.0, 1.0 + 0.3 * s as f64, -0.5, 2.0]).collect();
        let offsets = (0..t).map(|s| vec![0.2, -0.4, 0.1 * s as f64, -1.0]).collect();
        let proposal_features = (0..t).map(|s| vec![0.5, -0.2, 0.3 + 0.1 * s as f64, 0.0]).collect();
        CategoricalLatentModel {
            features,
            offsets,
            proposal_features,
            grid: vec![-0.5, 0.25, 1.0],
            log_prior_grid: vec![0.3f64.ln(), 0.5f64.ln(), 0.2f64.ln()],
        }
    }

    fn q_logits(&self, t: usize, c: f64) -> Vec<f64> {
        self.proposal_features[t].iter().map(|d| c * d).collect()
    }
}

impl ProductLatentModel for CategoricalLatentModel {
    type Elem = u8;

    fn horizon(&self) -> usize {
        self.features.len()
    }

    fn log_gamma(&self, t: usize, theta: f64, z: &u8) -> f64 {
        theta * self.features[t][*z as usize] + self.offsets[t][*z as usize]
    }

    fn sample_q(&self, t: usize, theta: f64, vartheta: f64, rng: &mut McRng) -> u8 {
        sample_proportional(&self.q_logits(t, 0.5 * (theta + vartheta)), rng).expect("finite logits") as u8
    }

    fn log_q(&self, t: usize, theta: f64, vartheta: f64, z: &u8) -> f64 {
        let l = self.q_logits(t, 0.5 * (theta + vartheta));
        l[*z as usize] - log_sum_exp(&l)
    }

    fn log_prior(&self, theta: f64) -> f64 {
        self.grid.iter().position(|&g| g == theta).map_or(f64::NEG_INFINITY, |i| self.log_prior_grid[i])
    }
}

impl EnumerableLatentModel for CategoricalLatentModel {
    fn alphabet(&self, t: usize) -> Vec<u8> {
        (0..self.features[t].len() as u8).collect()
    }
}

/// Gaussian random-effects model with a narrow observation kernel:
/// z_t ∼ N(θ, 1), y_t | z_t ∼ N(z_t, ε²). Proposals draw z_t from its prior
/// at the midpoint, q_{t,θ,ϑ} = N((θ+ϑ)/2, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLatentModel {
    pub y: Vec<f64>,
    pub obs_var: f64,
    pub prior_var: f64,
}

impl GaussianLatentModel {
    pub fn new(y: Vec<f64>, obs_var: f64, prior_var: f64) -> Result<Self> {
        if y.is_empty() || !(obs_var > 0.0) || !(prior_var > 0.0) {
            return Err(Error::Invalid("need observations and positive variances".into()));
        }
        Ok(GaussianLatentModel { y, obs_var, prior_var })
    }

    /// Observations drawn from the model at θ*.
    pub fn simulate(theta_star: f64, t: usize, obs_var: f64, prior_var: f64, rng: &mut McRng) -> Result<Self> {
        let y = (0..t)
            .map(|_| {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                theta_star + a + obs_var.sqrt() * b
            })
            .collect();
        Self::new(y, obs_var, prior_var)
    }

    /// Exact log marginal likelihood: y_t ∼ N(θ, 1 + ε²).
    pub fn log_marginal(&self, theta: f64) -> f64 {
        self.y.iter().map(|&y| normal_log_pdf(y, theta, 1.0 + self.obs_var)).sum()
    }
}

impl ProductLatentModel for GaussianLatentModel {
    type Elem = f64;

    fn horizon(&self) -> usize {
        self.y.len()
    }

    fn log_gamma(&self, t: usize, theta: f64, z: &f64) -> f64 {
        normal_log_pdf(*z, theta, 1.0) + normal_log_pdf(self.y[t], *z, self.obs_var)
    }

    fn sample_q(&self, _: usize, theta: f64, vartheta: f64, rng: &mut McRng) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        0.5 * (theta + vartheta) + e
    }

    fn log_q(&self, _: usize, theta: f64, vartheta: f64, z: &f64) -> f64 {
        normal_log_pdf(*z, 0.5 * (theta + vartheta), 1.0)
    }

    fn log_prior(&self, theta: f64) -> f64 {
        normal_log_pdf(theta, 0.0, self.prior_var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mh::GridWalk;

    #[test]
    fn swap_is_involutive() {
        let v = ParticleMatrix { rows: vec![vec![1, 2, 3], vec![4, 5, 6]] };
        let k = IndexPath(vec![2, 1]);
        let s = v.swap_path(&k);
        assert_eq!(s.rows, vec![vec![3, 2, 1], vec![5, 4, 6]]);
        assert_eq!(s.swap_path(&k), v);
        assert_eq!(s.path(&IndexPath::ones(2)), v.path(&k));
    }

    #[test]
    fn single_slot_path_is_current() {
        let model = CategoricalLatentModel::desk(2);
        let q = GridWalk::new(model.grid.clone()).unwrap();
        let mut rng = McRng::seeded(3);
        let v = fill_particles(&[1, 3], 0.25, 1.0, &model, 1, Direction::Forward, false, &mut rng).unwrap();
        let cache = RbCache::new(&v, 0.25, 1.0, &model, &q, Bridge::Midpoint).unwrap();
        assert_eq!(cache.sample_path(Weights::Target, &mut rng).unwrap(), IndexPath::ones(2));
        let one = IndexPath::ones(2);
        assert!((cache.log_ratio(&one) - cache.log_single_path_ratio(&one)).abs() < 1e-12);
    }

    #[test]
    fn simple_refresh_needs_source_bridge() {
        let cfg = RbConfig { m: 2, bridge: Bridge::Midpoint, refresh: Refresh::Simple, parallel: false };
        assert!(cfg.validate().is_err());
    }

    fn stationarity_defect<R>(model: &CategoricalLatentModel, row: R) -> f64
    where
        R: Fn(f64, &[u8]) -> Vec<((f64, Vec<u8>), f64)>,
    {
        let t = model.horizon();
        let mut states = Vec::new();
        for &th in &model.grid {
            for_each_path(t, 4, |k| {
                states.push((th, k.0.iter().map(|&x| x as u8).collect::<Vec<u8>>()));
                Ok(())
            })
            .unwrap();
        }
        let logp: Vec<f64> = states.iter().map(|(th, z)| model.log_target(*th, z)).collect();
        let lz = log_sum_exp(&logp);
        let pi: Vec<f64> = logp.iter().map(|l| (l - lz).exp()).collect();
        let mut after = vec![0.0; states.len()];
        for (i, (th, z)) in states.iter().enumerate() {
            let r = row(*th, z);
            let total: f64 = r.iter().map(|x| x.1).sum();
            assert!((total - 1.0).abs() < 1e-10, "row mass {total}");
            for ((dt, dz), p) in r {
                let j = states.iter().position(|s| s.0 == dt && s.1 == dz).unwrap();
                after[j] += pi[i] * p;
            }
        }
        after.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn exact_rows_leave_target_invariant() {
        let model = CategoricalLatentModel::desk(2);
        let q = GridWalk::new(model.grid.clone()).unwrap();
        for (bridge, refresh) in [
            (Bridge::Source, Refresh::Off),
            (Bridge::Midpoint, Refresh::Off),
            (Bridge::Source, Refresh::Simple),
            (Bridge::Source, Refresh::DelayedRejection),
            (Bridge::Midpoint, Refresh::DelayedRejection),
        ] {
            let cfg = RbConfig { m: 2, bridge, refresh, parallel: false };
            let d = stationarity_defect(&model, |th, z| rb_exact_row(th, z, &model, &q, &cfg).unwrap());
            assert!(d < 1e-12, "{bridge:?} {refresh:?}: {d}");
        }
        let d = stationarity_defect(&model, |th, z| ais_exact_row(th, z, &model, &q, 2).unwrap());
        assert!(d < 1e-12, "ais: {d}");
    }

    #[test]
    fn paths_enumerate() {
        let mut n = 0;
        for_each_path(3, 4, |_| {
            n += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(n, 64);
    }
}
