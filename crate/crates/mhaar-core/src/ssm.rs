//! State-space models: conditional SMC with backward sampling,
//! Metropolis-within-particle-Gibbs, and the averaged kernels that use
//! all M^T paths (sum-product) or N backward-sampled paths.

use std::borrow::Cow;
use std::fmt::Debug;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_nan, Error, Result};
use crate::latent_rb::{for_each_path, IndexPath, ParticleMatrix};
use crate::mh::{accept_decision, add_mass, log_proposal_ratio, Coin, EnumerableProposal, MhOutcome, ProposalKernel};
use crate::mhaar::sample_proportional;
use crate::num::{log_mean_exp, log_sum_exp, normal_log_pdf};
use crate::rng::{indexed_map, McRng};

/// Time slices whose largest log weight falls below this abort the filter.
pub const LOG_WEIGHT_FLOOR: f64 = -708.0;

pub trait StateSpaceModel: Sync {
    type State: Clone + Debug + PartialEq + Send + Sync;

    fn horizon(&self) -> usize;
    fn log_init(&self, theta: f64, x: &Self::State) -> f64;
    fn sample_init(&self, theta: f64, rng: &mut McRng) -> Self::State;
    /// log f_θ(prev, x) for the transition into time t ≥ 1.
    fn log_trans(&self, theta: f64, t: usize, prev: &Self::State, x: &Self::State) -> f64;
    fn sample_trans(&self, theta: f64, t: usize, prev: &Self::State, rng: &mut McRng) -> Self::State;
    /// log g_θ(x, y_t).
    fn log_obs(&self, theta: f64, t: usize, x: &Self::State) -> f64;
    fn log_prior(&self, theta: f64) -> f64;

    /// False when f_θ is the same for every θ, which lets kernels share one
    /// transition matrix.
    fn transition_depends_on_theta(&self) -> bool {
        true
    }

    /// log p_θ(z, y).
    fn log_joint(&self, theta: f64, z: &[Self::State]) -> f64 {
        let mut s = self.log_init(theta, &z[0]) + self.log_obs(theta, 0, &z[0]);
        for t in 1..z.len() {
            s += self.log_trans(theta, t, &z[t - 1], &z[t]) + self.log_obs(theta, t, &z[t]);
        }
        s
    }
}

/// Finite state space, for exact enumeration.
pub trait EnumerableSsm: StateSpaceModel {
    fn alphabet(&self) -> Vec<Self::State>;
}

/// Particles of one conditional SMC sweep at parameter `theta`.
#[derive(Clone, Debug)]
pub struct CsmcOutput<S> {
    pub theta: f64,
    pub particles: ParticleMatrix<S>,
    /// log w_{t,θ}(v_t^(i)).
    pub log_weights: Vec<Vec<f64>>,
    /// Ancestor of each particle at t ≥ 1; empty for t = 0 and for matrices
    /// built directly from particles.
    pub ancestors: Vec<Vec<usize>>,
}

fn check_slice(lw: &[f64], t: usize) -> Result<()> {
    if lw.iter().any(|x| x.is_nan()) {
        return Err(Error::Nan("observation weight"));
    }
    let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max < LOG_WEIGHT_FLOOR {
        return Err(Error::Degenerate(format!("all particle weights below e^{LOG_WEIGHT_FLOOR} at t={t}")));
    }
    Ok(())
}

impl<S: Clone> CsmcOutput<S> {
    pub fn m(&self) -> usize {
        self.particles.m()
    }

    pub fn horizon(&self) -> usize {
        self.particles.horizon()
    }

    /// Wrap a particle matrix and compute its weights at θ.
    pub fn from_particles<L: StateSpaceModel<State = S>>(particles: ParticleMatrix<S>, theta: f64, model: &L) -> Result<Self> {
        let log_weights: Vec<Vec<f64>> =
            particles.rows.iter().enumerate().map(|(t, r)| r.iter().map(|x| model.log_obs(theta, t, x)).collect()).collect();
        for (t, lw) in log_weights.iter().enumerate() {
            check_slice(lw, t)?;
        }
        Ok(CsmcOutput { theta, particles, log_weights, ancestors: Vec::new() })
    }

    /// Same particles with weights at another parameter.
    pub fn reweighted<L: StateSpaceModel<State = S>>(&self, theta: f64, model: &L) -> Result<Cow<'_, Self>> {
        if theta == self.theta {
            return Ok(Cow::Borrowed(self));
        }
        Ok(Cow::Owned(Self::from_particles(self.particles.clone(), theta, model)?))
    }
}

/// Inverse-CDF draw from normalised weights.
fn draw_from_cdf(cdf: &[f64], rng: &mut McRng) -> usize {
    let u = rng.uniform() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn cdf_of(lw: &[f64]) -> Vec<f64> {
    let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    lw.iter()
        .map(|&l| {
            acc += (l - max).exp();
            acc
        })
        .collect()
}

/// Bootstrap conditional particle filter with multinomial resampling; slot 0
/// holds the conditioning path at every time.
pub fn csmc<L: StateSpaceModel>(m: usize, theta: f64, z: &[L::State], model: &L, rng: &mut McRng) -> Result<CsmcOutput<L::State>> {
    let t_len = model.horizon();
    if m < 1 || z.len() != t_len || t_len == 0 {
        return Err(Error::Invalid("need m ≥ 1 and a conditioning path of length T".into()));
    }
    let mut rows: Vec<Vec<L::State>> = Vec::with_capacity(t_len);
    let mut log_weights = Vec::with_capacity(t_len);
    let mut ancestors = vec![Vec::new()];
    let mut first = Vec::with_capacity(m);
    first.push(z[0].clone());
    for _ in 1..m {
        first.push(model.sample_init(theta, rng));
    }
    let lw: Vec<f64> = first.iter().map(|x| model.log_obs(theta, 0, x)).collect();
    check_slice(&lw, 0)?;
    rows.push(first);
    log_weights.push(lw);
    for t in 1..t_len {
        let cdf = cdf_of(&log_weights[t - 1]);
        let prev = &rows[t - 1];
        let mut row = Vec::with_capacity(m);
        let mut anc = Vec::with_capacity(m);
        row.push(z[t].clone());
        anc.push(0);
        for _ in 1..m {
            let a = draw_from_cdf(&cdf, rng);
            row.push(model.sample_trans(theta, t, &prev[a], rng));
            anc.push(a);
        }
        let lw: Vec<f64> = row.iter().map(|x| model.log_obs(theta, t, x)).collect();
        check_slice(&lw, t)?;
        rows.push(row);
        log_weights.push(lw);
        ancestors.push(anc);
    }
    Ok(CsmcOutput { theta, particles: ParticleMatrix { rows }, log_weights, ancestors })
}

/// Backward-sampling weights at time t given the index chosen at t+1.
fn backward_weights<L: StateSpaceModel>(out: &CsmcOutput<L::State>, lw: &[f64], theta: f64, t: usize, next: usize, model: &L) -> Vec<f64> {
    let target = &out.particles.rows[t + 1][next];
    out.particles.rows[t].iter().zip(lw).map(|(x, w)| w + model.log_trans(theta, t + 1, x, target)).collect()
}

/// Draw k ∼ b_θ(·|v).
pub fn backward_sample<L: StateSpaceModel>(out: &CsmcOutput<L::State>, theta: f64, model: &L, rng: &mut McRng) -> Result<IndexPath> {
    let out = out.reweighted(theta, model)?;
    let t_len = out.horizon();
    let mut k = vec![0; t_len];
    k[t_len - 1] = sample_proportional(&out.log_weights[t_len - 1], rng)?;
    for t in (0..t_len - 1).rev() {
        let w = backward_weights(&out, &out.log_weights[t], theta, t, k[t + 1], model);
        k[t] = sample_proportional(&w, rng)?;
    }
    Ok(IndexPath(k))
}

/// log b_θ(k|v).
pub fn backward_log_prob<L: StateSpaceModel>(out: &CsmcOutput<L::State>, theta: f64, k: &IndexPath, model: &L) -> Result<f64> {
    let m = out.m();
    let t_len = out.horizon();
    if k.0.len() != t_len || k.0.iter().any(|&i| i >= m) {
        return Err(Error::Invalid("index path out of range".into()));
    }
    let out = out.reweighted(theta, model)?;
    let last = &out.log_weights[t_len - 1];
    let mut s = last[k.0[t_len - 1]] - log_sum_exp(last);
    for t in 0..t_len - 1 {
        let w = backward_weights(&out, &out.log_weights[t], theta, t, k.0[t + 1], model);
        s += w[k.0[t]] - log_sum_exp(&w);
    }
    Ok(s)
}

/// Transition kernel between two particle slices, log f(v_{t-1}^i, v_t^j)
/// stored row-major with each column rescaled by its maximum.
struct PairKernel {
    m: usize,
    log: Vec<f64>,
    col_max: Vec<f64>,
    scaled: Vec<f64>,
}

impl PairKernel {
    fn new<L: StateSpaceModel>(out: &CsmcOutput<L::State>, theta: f64, t: usize, model: &L) -> Self {
        let prev = &out.particles.rows[t - 1];
        let cur = &out.particles.rows[t];
        let m = prev.len();
        let mut log = Vec::with_capacity(m * m);
        let mut col_max = vec![f64::NEG_INFINITY; m];
        for p in prev {
            for (x, c) in cur.iter().zip(col_max.iter_mut()) {
                let l = model.log_trans(theta, t, p, x);
                log.push(l);
                if l > *c {
                    *c = l;
                }
            }
        }
        let mut scaled = Vec::with_capacity(m * m);
        for row in log.chunks_exact(m) {
            scaled.extend(row.iter().zip(&col_max).map(|(l, c)| if *c == f64::NEG_INFINITY { 0.0 } else { (l - c).exp() }));
        }
        PairKernel { m, log, col_max, scaled }
    }

    /// out_j = logsumexp_i(x_i + log K(i,j)).
    fn log_matvec(&self, x: &[f64]) -> Vec<f64> {
        let m = self.m;
        let xm = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if xm == f64::NEG_INFINITY {
            return vec![f64::NEG_INFINITY; m];
        }
        let ex: Vec<f64> = x.iter().map(|v| (v - xm).exp()).collect();
        let mut acc = vec![0.0; m];
        for (i, e) in ex.iter().enumerate() {
            if *e == 0.0 {
                continue;
            }
            let row = &self.scaled[i * m..(i + 1) * m];
            for (a, k) in acc.iter_mut().zip(row) {
                *a += e * k;
            }
        }
        (0..m)
            .map(|j| {
                if self.col_max[j] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else if acc[j] > 1e-280 {
                    xm + self.col_max[j] + acc[j].ln()
                } else {
                    let terms: Vec<f64> = (0..m).map(|i| x[i] + self.log[i * m + j]).collect();
                    log_sum_exp(&terms)
                }
            })
            .collect()
    }
}

/// Forward messages of Σ_k b_ζ(k|v) p_a(v^k)/p_ζ(v^k), where ζ is the
/// parameter the particles were generated at.
pub struct PathSum {
    /// log Σ_k b_ζ(k|v) p_a(v^k)/p_ζ(v^k).
    pub log_total: f64,
    alpha: Vec<Vec<f64>>,
    kernels: Vec<Option<PairKernel>>,
}

impl PathSum {
    pub fn new<L: StateSpaceModel>(out: &CsmcOutput<L::State>, a: f64, model: &L) -> Result<Self> {
        let zeta = out.theta;
        let t_len = out.horizon();
        let rows = &out.particles.rows;
        let shared = a == zeta || !model.transition_depends_on_theta();
        let mut alpha = Vec::with_capacity(t_len);
        alpha.push(rows[0].iter().map(|x| model.log_init(a, x) - model.log_init(zeta, x) + model.log_obs(a, 0, x)).collect::<Vec<f64>>());
        let mut kernels = vec![None];
        for t in 1..t_len {
            let kz = PairKernel::new(out, zeta, t, model);
            let log_d = kz.log_matvec(&out.log_weights[t - 1]);
            let ka = if shared { kz } else { PairKernel::new(out, a, t, model) };
            let msg = ka.log_matvec(&alpha[t - 1]);
            let next: Vec<f64> = rows[t]
                .iter()
                .enumerate()
                .map(|(j, x)| if msg[j] == f64::NEG_INFINITY { msg[j] } else { model.log_obs(a, t, x) - log_d[j] + msg[j] })
                .collect();
            alpha.push(next);
            kernels.push(Some(ka));
        }
        let log_total = log_sum_exp(&alpha[t_len - 1]) - log_sum_exp(&out.log_weights[t_len - 1]);
        let log_total = check_nan(log_total, "path sum")?;
        Ok(PathSum { log_total, alpha, kernels })
    }

    /// Draw k ∝ b_ζ(k|v) p_a(v^k)/p_ζ(v^k) by backward sampling over the forward messages.
    pub fn sample(&self, rng: &mut McRng) -> Result<IndexPath> {
        let t_len = self.alpha.len();
        let mut k = vec![0; t_len];
        k[t_len - 1] = sample_proportional(&self.alpha[t_len - 1], rng)?;
        for t in (0..t_len - 1).rev() {
            let kern = self.kernels[t + 1].as_ref().expect("kernel for t ≥ 1");
            let j = k[t + 1];
            let w: Vec<f64> = self.alpha[t].iter().enumerate().map(|(i, a)| a + kern.log[i * kern.m + j]).collect();
            k[t] = sample_proportional(&w, rng)?;
        }
        Ok(IndexPath(k))
    }
}

/// log[q(ϑ,θ)η(ϑ) / q(θ,ϑ)η(θ)].
fn log_prefactor<L: StateSpaceModel, Q: ProposalKernel<f64>>(theta: f64, vartheta: f64, model: &L, q: &Q) -> Result<f64> {
    check_nan(log_proposal_ratio(q, &theta, &vartheta)? + model.log_prior(vartheta) - model.log_prior(theta), "prior ratio")
}

/// log r_{z,z'}(θ,ϑ;ζ) = prefactor + log p_ϑ(z') − log p_ζ(z') + log p_ζ(z) − log p_θ(z).
pub fn path_log_ratio<L: StateSpaceModel, Q: ProposalKernel<f64>>(
    z: &[L::State],
    z_new: &[L::State],
    theta: f64,
    vartheta: f64,
    zeta: f64,
    model: &L,
    q: &Q,
) -> Result<f64> {
    let s = log_prefactor(theta, vartheta, model, q)? + model.log_joint(vartheta, z_new) - model.log_joint(zeta, z_new)
        + model.log_joint(zeta, z)
        - model.log_joint(theta, z);
    check_nan(s, "path ratio")
}

/// log r_{l,v}(θ,ϑ;ζ) = log Σ_k r_{v^(l),v^(k)}(θ,ϑ;ζ) b_ζ(k|v), with ζ the
/// parameter of `out`, in O(M²T).
pub fn rb_log_ratio_ssm<L: StateSpaceModel, Q: ProposalKernel<f64>>(
    out: &CsmcOutput<L::State>,
    l: &IndexPath,
    theta: f64,
    vartheta: f64,
    model: &L,
    q: &Q,
) -> Result<f64> {
    let zeta = out.theta;
    let zl = out.particles.path(l);
    let sum = PathSum::new(out, vartheta, model)?;
    let s = log_prefactor(theta, vartheta, model, q)? + model.log_joint(zeta, &zl) - model.log_joint(theta, &zl) + sum.log_total;
    check_nan(s, "averaged path ratio")
}

/// Draw k from b^(1)_{θ,ϑ}(·|v) ∝ r_{v^(1),v^(k)}(θ,ϑ;ζ) b_ζ(k|v).
pub fn ffbs_sample_b1<L: StateSpaceModel>(out: &CsmcOutput<L::State>, vartheta: f64, model: &L, rng: &mut McRng) -> Result<IndexPath> {
    PathSum::new(out, vartheta, model)?.sample(rng)
}

/// Intermediate parameter at which the particle filter runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZetaSchedule {
    /// ζ₁(θ,ϑ) = θ.
    Current,
    /// ζ₁(θ,ϑ) = (θ+ϑ)/2.
    Midpoint,
}

impl ZetaSchedule {
    pub fn zeta1(self, theta: f64, vartheta: f64) -> f64 {
        match self {
            ZetaSchedule::Current => theta,
            ZetaSchedule::Midpoint => 0.5 * (theta + vartheta),
        }
    }

    pub fn zeta2(self, theta: f64, vartheta: f64) -> f64 {
        self.zeta1(vartheta, theta)
    }

    pub fn zeta(self, coin: Coin, theta: f64, vartheta: f64) -> f64 {
        match coin {
            Coin::One => self.zeta1(theta, vartheta),
            Coin::Two => self.zeta2(theta, vartheta),
        }
    }
}

fn draw_coin(rng: &mut McRng) -> Coin {
    if rng.uniform() < 0.5 {
        Coin::One
    } else {
        Coin::Two
    }
}

/// Metropolis-within-particle-Gibbs: z' from cSMC with backward sampling,
/// then an MH move on θ given z'.
pub fn mwpg_step<L, Q>(theta: f64, z: &[L::State], model: &L, q: &Q, m: usize, rng: &mut McRng) -> Result<MhOutcome<f64, Vec<L::State>>>
where
    L: StateSpaceModel,
    Q: ProposalKernel<f64>,
{
    let vartheta = q.sample(&theta, rng);
    let out = csmc(m, theta, z, model, rng)?;
    let k = backward_sample(&out, theta, model, rng)?;
    let z_new = out.particles.path(&k);
    let lr = check_nan(
        log_prefactor(theta, vartheta, model, q)? + model.log_joint(vartheta, &z_new) - model.log_joint(theta, &z_new),
        "particle Gibbs ratio",
    )?;
    let accepted = accept_decision(lr, rng)?;
    Ok(MhOutcome {
        theta: if accepted { vartheta } else { theta },
        z: z_new,
        accepted,
        log_ratio_used: lr,
        coin: None,
        refreshed: !accepted,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RbSsmConfig {
    pub m: usize,
    pub zeta: ZetaSchedule,
    /// Redraw z by backward sampling at θ after a rejection under coin 1.
    pub refresh: bool,
}

/// Acceptance log-ratio of the averaged SSM kernel for a given coin and
/// particle set, plus the proposed path index (drawn under coin 2 only).
fn rb_ssm_log_acceptance<L, Q>(
    out: &CsmcOutput<L::State>,
    theta: f64,
    vartheta: f64,
    coin: Coin,
    model: &L,
    q: &Q,
    rng: &mut McRng,
) -> Result<(f64, Option<PathSum>, Option<IndexPath>)>
where
    L: StateSpaceModel,
    Q: ProposalKernel<f64>,
{
    let zeta = out.theta;
    let pref = log_prefactor(theta, vartheta, model, q)?;
    match coin {
        Coin::One => {
            let z = out.particles.path(&IndexPath::ones(out.horizon()));
            let sum = PathSum::new(out, vartheta, model)?;
            let lr = pref + model.log_joint(zeta, &z) - model.log_joint(theta, &z) + sum.log_total;
            Ok((check_nan(lr, "averaged path ratio")?, Some(sum), None))
        }
        Coin::Two => {
            let k = backward_sample(out, zeta, model, rng)?;
            let zk = out.particles.path(&k);
            let sum = PathSum::new(out, theta, model)?;
            let lr = pref + model.log_joint(vartheta, &zk) - model.log_joint(zeta, &zk) - sum.log_total;
            Ok((check_nan(lr, "averaged path ratio")?, None, Some(k)))
        }
    }
}

/// Averaged kernel using all M^T paths of one cSMC sweep.
pub fn mhaar_rb_ssm_step<L, Q>(
    theta: f64,
    z: &[L::State],
    model: &L,
    q: &Q,
    cfg: &RbSsmConfig,
    rng: &mut McRng,
) -> Result<MhOutcome<f64, Vec<L::State>>>
where
    L: StateSpaceModel,
    Q: ProposalKernel<f64>,
{
    if cfg.refresh && cfg.zeta != ZetaSchedule::Current {
        return Err(Error::Invalid("refreshment needs the particle filter to run at the current parameter".into()));
    }
    let vartheta = q.sample(&theta, rng);
    let coin = draw_coin(rng);
    let zeta = cfg.zeta.zeta(coin, theta, vartheta);
    let out = csmc(cfg.m, zeta, z, model, rng)?;
    let (lr, sum, k) = rb_ssm_log_acceptance(&out, theta, vartheta, coin, model, q, rng)?;
    if accept_decision(lr, rng)? {
        let k = match (k, sum) {
            (Some(k), _) => k,
            (None, Some(sum)) => sum.sample(rng)?,
            (None, None) => unreachable!("coin 1 always carries the path sum"),
        };
        return Ok(MhOutcome {
            theta: vartheta,
            z: out.particles.path(&k),
            accepted: true,
            log_ratio_used: lr,
            coin: Some(coin),
            refreshed: false,
        });
    }
    let mut res = MhOutcome::rejected(&theta, &z.to_vec(), lr, Some(coin));
    if cfg.refresh && coin == Coin::One && zeta == theta {
        let l = backward_sample(&out, theta, model, rng)?;
        res.z = out.particles.path(&l);
        res.refreshed = true;
    }
    Ok(res)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubsampleConfig {
    pub m: usize,
    pub n: usize,
    pub zeta: ZetaSchedule,
    /// Exchange z with a uniformly chosen backward path before the
    /// decision, under coin 1 when ζ = θ.
    pub swap_refresh: bool,
    pub parallel: bool,
}

/// Ratios r_{u0,u_i} for i = 1..N under coin 1, in log scale.
fn subsample_forward<L: StateSpaceModel, Q: ProposalKernel<f64>>(
    paths: &[Vec<L::State>],
    theta: f64,
    vartheta: f64,
    zeta: f64,
    model: &L,
    q: &Q,
) -> Result<Vec<f64>> {
    let pref = log_prefactor(theta, vartheta, model, q)?;
    let base = model.log_joint(zeta, &paths[0]) - model.log_joint(theta, &paths[0]);
    paths[1..]
        .iter()
        .map(|u| check_nan(pref + base + model.log_joint(vartheta, u) - model.log_joint(zeta, u), "subsampled ratio"))
        .collect()
}

/// log of [ (1/N) Σ_{i≠k} r_{u_k,u_i}(ϑ,θ;ζ) ]^{-1}; `paths[0]` is z.
fn subsample_backward<L: StateSpaceModel, Q: ProposalKernel<f64>>(
    paths: &[Vec<L::State>],
    k: usize,
    theta: f64,
    vartheta: f64,
    zeta: f64,
    model: &L,
    q: &Q,
) -> Result<f64> {
    let pref = log_prefactor(vartheta, theta, model, q)?;
    let base = model.log_joint(zeta, &paths[k]) - model.log_joint(vartheta, &paths[k]);
    let terms: Vec<f64> = paths
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .map(|(_, u)| pref + base + model.log_joint(theta, u) - model.log_joint(zeta, u))
        .collect();
    check_nan(-log_mean_exp(&terms), "subsampled ratio")
}

/// Averaged kernel over N backward-sampled paths of one cSMC sweep.
pub fn mhaar_s_ssm_step<L, Q>(
    theta: f64,
    z: &[L::State],
    model: &L,
    q: &Q,
    cfg: &SubsampleConfig,
    rng: &mut McRng,
) -> Result<MhOutcome<f64, Vec<L::State>>>
where
    L: StateSpaceModel,
    Q: ProposalKernel<f64>,
{
    if cfg.n < 1 {
        return Err(Error::Invalid("need at least one backward path".into()));
    }
    let vartheta = q.sample(&theta, rng);
    let coin = draw_coin(rng);
    let zeta = cfg.zeta.zeta(coin, theta, vartheta);
    let out = csmc(cfg.m, zeta, z, model, rng)?;
    let base = rng.split();
    let drawn: Vec<Result<IndexPath>> =
        indexed_map(cfg.n, cfg.parallel, |i| backward_sample(&out, zeta, model, &mut base.child(i as u64).rng()));
    let mut paths = Vec::with_capacity(cfg.n + 1);
    paths.push(z.to_vec());
    for k in drawn {
        paths.push(out.particles.path(&k?));
    }
    match coin {
        Coin::One => {
            let mut refreshed = false;
            if cfg.swap_refresh && zeta == theta {
                let j = 1 + rng.index(cfg.n);
                paths.swap(0, j);
                refreshed = paths[0] != z;
            }
            let lrs = subsample_forward(&paths, theta, vartheta, zeta, model, q)?;
            let lr = check_nan(log_mean_exp(&lrs), "subsampled ratio")?;
            if accept_decision(lr, rng)? {
                let k = 1 + sample_proportional(&lrs, rng)?;
                Ok(MhOutcome {
                    theta: vartheta,
                    z: paths.swap_remove(k),
                    accepted: true,
                    log_ratio_used: lr,
                    coin: Some(coin),
                    refreshed: false,
                })
            } else {
                Ok(MhOutcome { theta, z: paths.swap_remove(0), accepted: false, log_ratio_used: lr, coin: Some(coin), refreshed })
            }
        }
        Coin::Two => {
            let k = 1 + rng.index(cfg.n);
            let lr = subsample_backward(&paths, k, theta, vartheta, zeta, model, q)?;
            if accept_decision(lr, rng)? {
                Ok(MhOutcome {
                    theta: vartheta,
                    z: paths.swap_remove(k),
                    accepted: true,
                    log_ratio_used: lr,
                    coin: Some(coin),
                    refreshed: false,
                })
            } else {
                Ok(MhOutcome::rejected(&theta, &z.to_vec(), lr, Some(coin)))
            }
        }
    }
}

/// Example linear-Gaussian model:
/// Z_1 ∼ N(0, σ_z²), Z_t = φ(Z_{t−1} − (1−a)θ) + (1−a)θ + V_t with
/// V_t ∼ N(0, (1−φ²)σ_z²), and Y_t = Z_t + aθ + W_t with W_t ∼ N(0, σ_y²).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianModel {
    pub phi: f64,
    pub a: f64,
    pub var_z: f64,
    pub var_y: f64,
    pub prior_var: f64,
    pub y: Vec<f64>,
    /// Log normalising constants of the transition and observation densities.
    trans_norm: f64,
    obs_norm: f64,
}

impl LinearGaussianModel {
    pub fn new(phi: f64, a: f64, var_z: f64, var_y: f64, prior_var: f64, y: Vec<f64>) -> Result<Self> {
        let finite = [phi, a, var_z, var_y, prior_var].iter().chain(&y).all(|x| x.is_finite());
        if !finite {
            return Err(Error::Invalid("non-finite model input".into()));
        }
        if !(var_z > 0.0 && var_y > 0.0 && prior_var > 0.0) || phi.abs() >= 1.0 || y.is_empty() {
            return Err(Error::Invalid("need positive variances, |φ| < 1 and at least one observation".into()));
        }
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let trans_norm = -half_log_2pi - 0.5 * ((1.0 - phi * phi) * var_z).ln();
        let obs_norm = -half_log_2pi - 0.5 * var_y.ln();
        Ok(LinearGaussianModel { phi, a, var_z, var_y, prior_var, y, trans_norm, obs_norm })
    }

    fn innovation_var(&self) -> f64 {
        (1.0 - self.phi * self.phi) * self.var_z
    }

    fn trans_mean(&self, theta: f64, prev: f64) -> f64 {
        let c = (1.0 - self.a) * theta;
        self.phi * (prev - c) + c
    }

    /// Simulate (z, y) at θ.
    pub fn simulate(
        phi: f64,
        a: f64,
        var_z: f64,
        var_y: f64,
        prior_var: f64,
        theta: f64,
        t: usize,
        rng: &mut McRng,
    ) -> Result<(Self, Vec<f64>)> {
        let mut m = LinearGaussianModel::new(phi, a, var_z, var_y, prior_var, vec![0.0])?;
        let mut z = Vec::with_capacity(t);
        let mut y = Vec::with_capacity(t);
        for s in 0..t {
            let e: f64 = StandardNormal.sample(rng);
            let zt = if s == 0 { var_z.sqrt() * e } else { m.trans_mean(theta, z[s - 1]) + m.innovation_var().sqrt() * e };
            let w: f64 = StandardNormal.sample(rng);
            y.push(zt + a * theta + var_y.sqrt() * w);
            z.push(zt);
        }
        m.y = y;
        Ok((m, z))
    }

    /// Kalman filter moments (filtered means and variances, predicted means and variances).
    fn filter(&self, theta: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        let t_len = self.y.len();
        let (mut fm, mut fv, mut pm, mut pv) =
            (Vec::with_capacity(t_len), Vec::with_capacity(t_len), Vec::with_capacity(t_len), Vec::with_capacity(t_len));
        let mut ll = 0.0;
        for t in 0..t_len {
            let (m, v) = if t == 0 {
                (0.0, self.var_z)
            } else {
                (self.trans_mean(theta, fm[t - 1]), self.phi * self.phi * fv[t - 1] + self.innovation_var())
            };
            let s = v + self.var_y;
            let resid = self.y[t] - m - self.a * theta;
            ll += normal_log_pdf(resid, 0.0, s);
            let gain = v / s;
            pm.push(m);
            pv.push(v);
            fm.push(m + gain * resid);
            fv.push(v * (1.0 - gain));
        }
        (fm, fv, pm, pv, ll)
    }

    /// Exact log ℓ_θ(y).
    pub fn kalman_loglik(&self, theta: f64) -> Result<f64> {
        if !theta.is_finite() {
            return Err(Error::Invalid("non-finite parameter".into()));
        }
        Ok(self.filter(theta).4)
    }

    /// Exact draw from p_θ(z | y) by forward filtering, backward sampling.
    pub fn sample_posterior_path(&self, theta: f64, rng: &mut McRng) -> Vec<f64> {
        let (fm, fv, pm, pv, _) = self.filter(theta);
        let t_len = self.y.len();
        let mut z = vec![0.0; t_len];
        let e: f64 = StandardNormal.sample(rng);
        z[t_len - 1] = fm[t_len - 1] + fv[t_len - 1].sqrt() * e;
        for t in (0..t_len - 1).rev() {
            let j = fv[t] * self.phi / pv[t + 1];
            let mean = fm[t] + j * (z[t + 1] - pm[t + 1]);
            let var = (fv[t] - j * j * pv[t + 1]).max(0.0);
            let e: f64 = StandardNormal.sample(rng);
            z[t] = mean + var.sqrt() * e;
        }
        z
    }

    /// log r(θ,ϑ) of the marginal chain for a given proposal.
    pub fn exact_log_ratio<Q: ProposalKernel<f64>>(&self, theta: f64, vartheta: f64, q: &Q) -> Result<f64> {
        Ok(log_prefactor(theta, vartheta, self, q)? + self.kalman_loglik(vartheta)? - self.kalman_loglik(theta)?)
    }
}

impl StateSpaceModel for LinearGaussianModel {
    type State = f64;

    fn horizon(&self) -> usize {
        self.y.len()
    }

    fn log_init(&self, _: f64, x: &f64) -> f64 {
        normal_log_pdf(*x, 0.0, self.var_z)
    }

    fn sample_init(&self, _: f64, rng: &mut McRng) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        self.var_z.sqrt() * e
    }

    fn log_trans(&self, theta: f64, _: usize, prev: &f64, x: &f64) -> f64 {
        let d = x - self.trans_mean(theta, *prev);
        self.trans_norm - 0.5 * d * d / self.innovation_var()
    }

    fn sample_trans(&self, theta: f64, _: usize, prev: &f64, rng: &mut McRng) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        self.trans_mean(theta, *prev) + self.innovation_var().sqrt() * e
    }

    fn log_obs(&self, theta: f64, t: usize, x: &f64) -> f64 {
        let d = self.y[t] - x - self.a * theta;
        self.obs_norm - 0.5 * d * d / self.var_y
    }

    fn log_prior(&self, theta: f64) -> f64 {
        normal_log_pdf(theta, 0.0, self.prior_var)
    }

    fn transition_depends_on_theta(&self) -> bool {
        self.a != 1.0
    }
}

/// Three-letter hidden Markov model on a finite θ grid, used for exact checks.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm {
    pub y: Vec<f64>,
    pub grid: Vec<f64>,
    pub log_prior_grid: Vec<f64>,
}

impl DiscreteSsm {
    pub fn desk() -> Self {
        DiscreteSsm { y: vec![0.7, 1.6], grid: vec![-0.5, 0.25, 1.0], log_prior_grid: vec![0.25f64.ln(), 0.45f64.ln(), 0.3f64.ln()] }
    }

    fn init_logits(theta: f64) -> [f64; 3] {
        [0.0, 0.4 * theta, -0.3 + 0.8 * theta]
    }

    fn trans_logits(theta: f64, prev: u8) -> [f64; 3] {
        let stay = 1.2 + 0.3 * theta;
        let mut l = [0.1 * theta, -0.2, 0.3 - 0.4 * theta];
        l[prev as usize] += stay;
        l
    }

    fn log_cat(logits: &[f64; 3], x: u8) -> f64 {
        logits[x as usize] - log_sum_exp(logits)
    }

    fn sample_cat(logits: &[f64; 3], rng: &mut McRng) -> u8 {
        sample_proportional(logits, rng).expect("finite logits") as u8
    }
}

impl StateSpaceModel for DiscreteSsm {
    type State = u8;

    fn horizon(&self) -> usize {
        self.y.len()
    }

    fn log_init(&self, theta: f64, x: &u8) -> f64 {
        Self::log_cat(&Self::init_logits(theta), *x)
    }

    fn sample_init(&self, theta: f64, rng: &mut McRng) -> u8 {
        Self::sample_cat(&Self::init_logits(theta), rng)
    }

    fn log_trans(&self, theta: f64, _: usize, prev: &u8, x: &u8) -> f64 {
        Self::log_cat(&Self::trans_logits(theta, *prev), *x)
    }

    fn sample_trans(&self, theta: f64, _: usize, prev: &u8, rng: &mut McRng) -> u8 {
        Self::sample_cat(&Self::trans_logits(theta, *prev), rng)
    }

    fn log_obs(&self, theta: f64, t: usize, x: &u8) -> f64 {
        let d = self.y[t] - *x as f64 - 0.5 * theta;
        -0.5 * d * d / 0.8
    }

    fn log_prior(&self, theta: f64) -> f64 {
        self.grid.iter().position(|&g| g == theta).map_or(f64::NEG_INFINITY, |i| self.log_prior_grid[i])
    }
}

impl EnumerableSsm for DiscreteSsm {
    fn alphabet(&self) -> Vec<u8> {
        vec![0, 1, 2]
    }
}

/// log Φ_ζ(z, d𝔲): probability that the cSMC at `out.theta` produced the
/// non-conditioning particles, with ancestors summed out.
pub fn csmc_log_density<L: StateSpaceModel>(out: &CsmcOutput<L::State>, model: &L) -> f64 {
    let zeta = out.theta;
    let rows = &out.particles.rows;
    let mut s: f64 = rows[0][1..].iter().map(|x| model.log_init(zeta, x)).sum();
    for t in 1..rows.len() {
        let lw = &out.log_weights[t - 1];
        let norm = log_sum_exp(lw);
        for x in &rows[t][1..] {
            let terms: Vec<f64> = rows[t - 1].iter().zip(lw).map(|(p, w)| w + model.log_trans(zeta, t, p, x)).collect();
            s += log_sum_exp(&terms) - norm;
        }
    }
    s
}

/// Call `f` on every cSMC output at ζ conditioned on z, with its probability.
pub fn for_each_csmc<L, F>(m: usize, zeta: f64, z: &[L::State], model: &L, mut f: F) -> Result<()>
where
    L: EnumerableSsm,
    F: FnMut(&CsmcOutput<L::State>, f64) -> Result<()>,
{
    let t_len = z.len();
    let alph = model.alphabet();
    let free = m - 1;
    let cells = t_len * free;
    let mut idx = vec![0usize; cells];
    loop {
        let rows: Vec<Vec<L::State>> = (0..t_len)
            .map(|t| {
                let mut r = vec![z[t].clone()];
                r.extend((0..free).map(|j| alph[idx[t * free + j]].clone()));
                r
            })
            .collect();
        let out = CsmcOutput::from_particles(ParticleMatrix { rows }, zeta, model)?;
        let p = csmc_log_density(&out, model).exp();
        if p > 0.0 {
            f(&out, p)?;
        }
        let mut pos = 0;
        loop {
            if pos == cells {
                return Ok(());
            }
            idx[pos] += 1;
            if idx[pos] < alph.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

pub type ExactRow<S> = Vec<((f64, Vec<S>), f64)>;

/// Exact transition row of [`mwpg_step`].
pub fn mwpg_exact_row<L, Q>(theta: f64, z: &[L::State], model: &L, q: &Q, m: usize) -> Result<ExactRow<L::State>>
where
    L: EnumerableSsm,
    Q: EnumerableProposal<f64>,
{
    let mut row = Vec::new();
    for (vartheta, qp) in q.support(&theta) {
        for_each_csmc(m, theta, z, model, |out, pv| {
            for_each_path(z.len(), m, |k| {
                let pk = backward_log_prob(out, theta, k, model)?.exp();
                let zk = out.particles.path(k);
                let acc = (log_prefactor(theta, vartheta, model, q)? + model.log_joint(vartheta, &zk) - model.log_joint(theta, &zk))
                    .min(0.0)
                    .exp();
                add_mass(&mut row, (vartheta, zk.clone()), qp * pv * pk * acc);
                add_mass(&mut row, (theta, zk), qp * pv * pk * (1.0 - acc));
                Ok(())
            })
        })?;
    }
    Ok(row)
}

/// Exact transition row of [`mhaar_rb_ssm_step`].
pub fn rb_ssm_exact_row<L, Q>(theta: f64, z: &[L::State], model: &L, q: &Q, cfg: &RbSsmConfig) -> Result<ExactRow<L::State>>
where
    L: EnumerableSsm,
    Q: EnumerableProposal<f64>,
{
    let t_len = z.len();
    let mut row = Vec::new();
    for (vartheta, qp) in q.support(&theta) {
        for coin in [Coin::One, Coin::Two] {
            let zeta = cfg.zeta.zeta(coin, theta, vartheta);
            for_each_csmc(cfg.m, zeta, z, model, |out, pv| {
                let mass = qp * 0.5 * pv;
                let pref = log_prefactor(theta, vartheta, model, q)?;
                let mut reject = 0.0;
                match coin {
                    Coin::One => {
                        let sum = PathSum::new(out, vartheta, model)?;
                        let lr = pref + model.log_joint(zeta, z) - model.log_joint(theta, z) + sum.log_total;
                        let acc = lr.min(0.0).exp();
                        for_each_path(t_len, cfg.m, |k| {
                            let zk = out.particles.path(k);
                            let lrho = backward_log_prob(out, zeta, k, model)? + model.log_joint(vartheta, &zk)
                                - model.log_joint(zeta, &zk)
                                - sum.log_total;
                            add_mass(&mut row, (vartheta, zk), mass * acc * lrho.exp());
                            Ok(())
                        })?;
                        reject = 1.0 - acc;
                    }
                    Coin::Two => {
                        let sum = PathSum::new(out, theta, model)?;
                        for_each_path(t_len, cfg.m, |k| {
                            let zk = out.particles.path(k);
                            let pk = backward_log_prob(out, zeta, k, model)?.exp();
                            let lr = pref + model.log_joint(vartheta, &zk) - model.log_joint(zeta, &zk) - sum.log_total;
                            let acc = lr.min(0.0).exp();
                            add_mass(&mut row, (vartheta, zk), mass * pk * acc);
                            reject += pk * (1.0 - acc);
                            Ok(())
                        })?;
                    }
                }
                if cfg.refresh && coin == Coin::One && zeta == theta {
                    for_each_path(t_len, cfg.m, |l| {
                        let pl = backward_log_prob(out, theta, l, model)?.exp();
                        add_mass(&mut row, (theta, out.particles.path(l)), mass * reject * pl);
                        Ok(())
                    })?;
                } else {
                    add_mass(&mut row, (theta, z.to_vec()), mass * reject);
                }
                Ok(())
            })?;
        }
    }
    Ok(row)
}

/// Exact transition row of [`mhaar_s_ssm_step`].
pub fn subsample_exact_row<L, Q>(theta: f64, z: &[L::State], model: &L, q: &Q, cfg: &SubsampleConfig) -> Result<ExactRow<L::State>>
where
    L: EnumerableSsm,
    Q: EnumerableProposal<f64>,
{
    let t_len = z.len();
    let n = cfg.n;
    let mut row = Vec::new();
    for (vartheta, qp) in q.support(&theta) {
        for coin in [Coin::One, Coin::Two] {
            let zeta = cfg.zeta.zeta(coin, theta, vartheta);
            for_each_csmc(cfg.m, zeta, z, model, |out, pv| {
                let mut all = Vec::new();
                for_each_path(t_len, cfg.m, |k| {
                    all.push((out.particles.path(k), backward_log_prob(out, zeta, k, model)?.exp()));
                    Ok(())
                })?;
                let mut pick = vec![0usize; n];
                loop {
                    let mut mass = qp * 0.5 * pv;
                    let mut paths = vec![z.to_vec()];
                    for &i in &pick {
                        mass *= all[i].1;
                        paths.push(all[i].0.clone());
                    }
                    if mass > 0.0 {
                        match coin {
                            Coin::One => {
                                let swaps: Vec<usize> = if cfg.swap_refresh && zeta == theta { (1..=n).collect() } else { vec![0] };
                                let w = mass / swaps.len() as f64;
                                for j in swaps {
                                    let mut p = paths.clone();
                                    p.swap(0, j);
                                    let lrs = subsample_forward(&p, theta, vartheta, zeta, model, q)?;
                                    let acc = log_mean_exp(&lrs).min(0.0).exp();
                                    let norm = log_sum_exp(&lrs);
                                    for (i, lr) in lrs.iter().enumerate() {
                                        add_mass(&mut row, (vartheta, p[i + 1].clone()), w * acc * (lr - norm).exp());
                                    }
                                    add_mass(&mut row, (theta, p[0].clone()), w * (1.0 - acc));
                                }
                            }
                            Coin::Two => {
                                for k in 1..=n {
                                    let acc = subsample_backward(&paths, k, theta, vartheta, zeta, model, q)?.min(0.0).exp();
                                    let w = mass / n as f64;
                                    add_mass(&mut row, (vartheta, paths[k].clone()), w * acc);
                                    add_mass(&mut row, (theta, z.to_vec()), w * (1.0 - acc));
                                }
                            }
                        }
                    }
                    let mut pos = 0;
                    loop {
                        if pos == n {
                            return Ok(());
                        }
                        pick[pos] += 1;
                        if pick[pos] < all.len() {
                            break;
                        }
                        pick[pos] = 0;
                        pos += 1;
                    }
                }
            })?;
        }
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mh::{GaussianWalk, GridWalk};

    fn enumerate_states(model: &DiscreteSsm) -> Vec<(f64, Vec<u8>)> {
        let mut s = Vec::new();
        for &th in &model.grid {
            for_each_path(model.horizon(), 3, |k| {
                s.push((th, k.0.iter().map(|&x| x as u8).collect()));
                Ok(())
            })
            .unwrap();
        }
        s
    }

    /// (largest |π_i P_ij − π_j P_ji|, largest |πP − π|)
    fn defects<R: Fn(f64, &[u8]) -> ExactRow<u8>>(model: &DiscreteSsm, row: R) -> (f64, f64) {
        let states = enumerate_states(model);
        let logp: Vec<f64> = states.iter().map(|(th, z)| model.log_prior(*th) + model.log_joint(*th, z)).collect();
        let lz = log_sum_exp(&logp);
        let pi: Vec<f64> = logp.iter().map(|l| (l - lz).exp()).collect();
        let n = states.len();
        let mut p = vec![0.0; n * n];
        for (i, (th, z)) in states.iter().enumerate() {
            let r = row(*th, z);
            let total: f64 = r.iter().map(|x| x.1).sum();
            assert!((total - 1.0).abs() < 1e-10, "row mass {total}");
            for ((dt, dz), m) in r {
                let j = states.iter().position(|s| s.0 == dt && s.1 == dz).unwrap();
                p[i * n + j] += m;
            }
        }
        let mut worst: f64 = 0.0;
        let mut stat: f64 = 0.0;
        for j in 0..n {
            let mut after = 0.0;
            for i in 0..n {
                worst = worst.max((pi[i] * p[i * n + j] - pi[j] * p[j * n + i]).abs());
                after += pi[i] * p[i * n + j];
            }
            stat = stat.max((after - pi[j]).abs());
        }
        (worst, stat)
    }

    fn balance_defect<R: Fn(f64, &[u8]) -> ExactRow<u8>>(model: &DiscreteSsm, row: R) -> f64 {
        defects(model, row).0
    }

    #[test]
    fn kernels_are_reversible_on_the_discrete_model() {
        let model = DiscreteSsm::desk();
        let q = GridWalk::new(model.grid.clone()).unwrap();
        let (d, s) = defects(&model, |th, z| mwpg_exact_row(th, z, &model, &q, 2).unwrap());
        assert!(d > 1e-6, "particle Gibbs with MH is not reversible: {d}");
        assert!(s < 1e-12, "particle Gibbs stationarity: {s}");
        let cfg = SubsampleConfig { m: 2, n: 2, zeta: ZetaSchedule::Current, swap_refresh: true, parallel: false };
        let (d, s) = defects(&model, |th, z| subsample_exact_row(th, z, &model, &q, &cfg).unwrap());
        assert!(s < 1e-12, "swap refresh stationarity: {s} (balance {d})");
        for zeta in [ZetaSchedule::Current, ZetaSchedule::Midpoint] {
            let cfg = RbSsmConfig { m: 2, zeta, refresh: false };
            let d = balance_defect(&model, |th, z| rb_ssm_exact_row(th, z, &model, &q, &cfg).unwrap());
            assert!(d < 1e-12, "{zeta:?}: {d}");
            let cfg = SubsampleConfig { m: 2, n: 2, zeta, swap_refresh: false, parallel: false };
            let d = balance_defect(&model, |th, z| subsample_exact_row(th, z, &model, &q, &cfg).unwrap());
            assert!(d < 1e-12, "subsample {zeta:?}: {d}");
        }
        let cfg = RbSsmConfig { m: 2, zeta: ZetaSchedule::Current, refresh: true };
        let d = balance_defect(&model, |th, z| rb_ssm_exact_row(th, z, &model, &q, &cfg).unwrap());
        assert!(d < 1e-12, "refresh: {d}");
    }

    #[test]
    fn path_sum_matches_enumeration() {
        let (model, z) = LinearGaussianModel::simulate(0.9, 0.6, 1.0, 0.5, 100.0, 0.4, 3, &mut McRng::seeded(5)).unwrap();
        let mut rng = McRng::seeded(6);
        let out = csmc(3, 0.3, &z, &model, &mut rng).unwrap();
        let sum = PathSum::new(&out, 0.8, &model).unwrap();
        let mut terms = Vec::new();
        for_each_path(3, 3, |k| {
            let zk = out.particles.path(k);
            terms.push(backward_log_prob(&out, 0.3, k, &model)? + model.log_joint(0.8, &zk) - model.log_joint(0.3, &zk));
            Ok(())
        })
        .unwrap();
        assert!((log_sum_exp(&terms) - sum.log_total).abs() < 1e-10);
        let same = PathSum::new(&out, 0.3, &model).unwrap();
        assert!(same.log_total.abs() < 1e-12);
        let q = GaussianWalk { sd: 0.3 };
        let r = rb_log_ratio_ssm(&out, &IndexPath::ones(3), 0.3, 0.3, &model, &q).unwrap();
        assert!((r).abs() < 1e-12);
    }

    #[test]
    fn kalman_one_step_closed_form() {
        let m = LinearGaussianModel::new(0.9, 0.4, 1.3, 0.2, 10.0, vec![0.7]).unwrap();
        let ll = m.kalman_loglik(0.5).unwrap();
        assert!((ll - normal_log_pdf(0.7, 0.4 * 0.5, 1.5)).abs() < 1e-12);
    }

    #[test]
    fn backward_probs_normalise() {
        let (model, z) = LinearGaussianModel::simulate(0.95, 1.0, 1.0, 0.1, 100.0, 1.0, 3, &mut McRng::seeded(1)).unwrap();
        let out = csmc(3, 1.0, &z, &model, &mut McRng::seeded(2)).unwrap();
        let mut total = 0.0;
        for_each_path(3, 3, |k| {
            total += backward_log_prob(&out, 1.0, k, &model)?.exp();
            Ok(())
        })
        .unwrap();
        assert!((total - 1.0).abs() < 1e-10);
    }
}
