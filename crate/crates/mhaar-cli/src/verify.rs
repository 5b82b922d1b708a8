//! Invariant suite: every kernel on a small enumerable instance, checked
//! for detailed balance (or plain stationarity) against the exact target,
//! both from exact transition rows and from simulated rows.

use std::fmt::Debug;

use mhaar_core::diagnostics::stationarity_residual;
use mhaar_core::exchange::{averaged_exchange_step, ExchangeScheme, ExpFamilyModel, Statistic};
use mhaar_core::latent_rb::{
    ais_exact_row, ais_mcmc_step, delayed_rejection_general, fill_particles, for_each_path, mhaar_rb_step, rb_exact_row, Bridge,
    CategoricalLatentModel, Direction, IndexPath, ProductLatentModel, RbCache, RbConfig, Refresh,
};
use mhaar_core::mh::{build_transition_matrix, mh_exact_row, Coin, GaussianWalk, GridWalk, MhOutcome, Oracle};
use mhaar_core::mhaar::{mhaar_exact_row, mhaar_step, MhaarConfig};
use mhaar_core::num::log_sum_exp;
use mhaar_core::rjmcmc::{
    rmj_step, BirthDeathCoin, BirthDeathScheme, ChangepointModel, ChangepointPrior, HeightLaw, ModelIndexWalk, PositionLaw, TransState,
};
use mhaar_core::ssm::{
    backward_sample, csmc, mhaar_rb_ssm_step, mhaar_s_ssm_step, mwpg_exact_row, mwpg_step, rb_log_ratio_ssm, rb_ssm_exact_row,
    subsample_exact_row, DiscreteSsm, LinearGaussianModel, RbSsmConfig, StateSpaceModel, SubsampleConfig, ZetaSchedule,
};
use mhaar_core::toy::{ToyProposal, ToyScheme};
use mhaar_core::{McRng, Result, StreamKey};

/// Tolerance on exact residuals.
pub const EXACT_TOL: f64 = 1e-10;
/// Tolerance on simulated residuals, in standard errors.
pub const MC_SIGMAS: f64 = 5.0;
/// Default number of simulated transitions per state.
pub const DEFAULT_TRIALS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check { name: name.into(), value, tolerance, pass: value <= tolerance }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {:.3e} (tol {:.1e})", if self.pass { "PASS" } else { "FAIL" }, self.name, self.value, self.tolerance)
    }
}

/// What a kernel is expected to satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Property {
    DetailedBalance,
    Stationarity,
}

/// An enumerated state space with its normalised target.
pub struct Instance<S> {
    pub states: Vec<S>,
    pub pi: Vec<f64>,
}

impl<S> Instance<S> {
    pub fn new(states: Vec<S>, log_target: impl Fn(&S) -> f64) -> Self {
        let lp: Vec<f64> = states.iter().map(&log_target).collect();
        let lz = log_sum_exp(&lp);
        let pi = lp.iter().map(|l| (l - lz).exp()).collect();
        Instance { states, pi }
    }
}

/// Residual of the exact matrix built from `row`.
pub fn exact_check<S, F>(name: &str, inst: &Instance<S>, property: Property, row: F) -> Result<Check>
where
    S: PartialEq + Debug + Sync,
    F: Fn(&S) -> Result<Vec<(S, f64)>> + Sync,
{
    let m = build_transition_matrix(&inst.states, Oracle::Exact(&row), StreamKey::new(0))?;
    let r = stationarity_residual(&m, &inst.pi)?;
    let value = match property {
        Property::DetailedBalance => r.balance.max(r.stationarity),
        Property::Stationarity => r.stationarity,
    };
    Ok(Check::new(format!("exact {name}"), value, EXACT_TOL))
}

/// Largest residual in standard errors of a simulated matrix.
pub fn mc_check<S, F>(name: &str, inst: &Instance<S>, property: Property, trials: usize, key: StreamKey, step: F) -> Result<Check>
where
    S: PartialEq + Debug + Sync,
    F: Fn(&S, &mut McRng) -> Result<S> + Sync,
{
    let m = build_transition_matrix(&inst.states, Oracle::Sampled { step: &step, trials }, key)?;
    let r = stationarity_residual(&m, &inst.pi)?;
    let value = match property {
        Property::DetailedBalance => r.balance_z.max(r.stationarity_z),
        Property::Stationarity => r.stationarity_z,
    };
    Ok(Check::new(format!("simulated {name}"), value, MC_SIGMAS))
}

fn next<P, Z>(o: MhOutcome<P, Z>) -> (P, Z) {
    (o.theta, o.z)
}

// ---- instances ----

pub fn toy_instance() -> Instance<(f64, ())> {
    Instance::new(vec![(-1.0, ()), (1.0, ())], |_| 0.0)
}

pub const EXCHANGE_GRID: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

pub fn exchange_model() -> ExpFamilyModel {
    ExpFamilyModel::new(2, 6, Statistic::Agreement, &[0, 0, 1, 1, 1, 0], 1.0).expect("valid instance")
}

pub fn exchange_instance(model: &ExpFamilyModel) -> Instance<(f64, ())> {
    Instance::new(EXCHANGE_GRID.iter().map(|&t| (t, ())).collect(), |s| model.log_posterior(s.0))
}

pub fn changepoint_model() -> ChangepointModel {
    let prior = ChangepointPrior {
        lambda: 1.5,
        m_max: 3,
        positions: PositionLaw::Grid { cells: 4 },
        heights: HeightLaw::Atoms(vec![(0.5, 0.4), (2.0, 0.6)]),
    };
    ChangepointModel::new(4.0, vec![0.3, 2.5, 3.1, 3.7], prior).expect("valid instance")
}

/// Every state of the discrete change-point model.
pub fn changepoint_instance(model: &ChangepointModel) -> Instance<(usize, TransState)> {
    let (PositionLaw::Grid { cells }, HeightLaw::Atoms(atoms)) = (&model.prior.positions, &model.prior.heights) else {
        panic!("discrete model required");
    };
    let heights: Vec<f64> = atoms.iter().map(|a| a.0).collect();
    let mut states = Vec::new();
    for m in 1..=model.prior.m_max {
        // interior positions: subsets of size m − 1 of 1..cells
        for mask in 0u32..(1 << (cells - 1)) {
            if mask.count_ones() as usize != m - 1 {
                continue;
            }
            let mut s = vec![0.0];
            s.extend((1..*cells).filter(|i| mask & (1 << (i - 1)) != 0).map(|i| model.length * i as f64 / *cells as f64));
            s.push(model.length);
            for code in 0..heights.len().pow(m as u32) {
                let h = (0..m).map(|j| heights[(code / heights.len().pow(j as u32)) % heights.len()]).collect();
                states.push((m, TransState::new(s.clone(), h).expect("valid state")));
            }
        }
    }
    Instance::new(states, |s| model.log_posterior(&s.1).expect("finite posterior"))
}

pub fn latent_instance(model: &CategoricalLatentModel) -> Instance<(f64, Vec<u8>)> {
    let t = model.horizon();
    let mut states = Vec::new();
    for &th in &model.grid {
        for_each_path(t, 4, |k| {
            states.push((th, k.0.iter().map(|&x| x as u8).collect()));
            Ok(())
        })
        .expect("enumeration");
    }
    Instance::new(states, |s| model.log_target(s.0, &s.1))
}

pub fn ssm_instance(model: &DiscreteSsm) -> Instance<(f64, Vec<u8>)> {
    let mut states = Vec::new();
    for &th in &model.grid {
        for_each_path(model.horizon(), 3, |k| {
            states.push((th, k.0.iter().map(|&x| x as u8).collect()));
            Ok(())
        })
        .expect("enumeration");
    }
    Instance::new(states, |s| model.log_prior(s.0) + model.log_joint(s.0, &s.1))
}

// ---- suites ----

pub fn toy_checks(trials: usize) -> Result<Vec<Check>> {
    let inst = toy_instance();
    let mut out = Vec::new();
    for (a, alpha) in [(2.0, 0.0), (5.0, 0.3)] {
        let q = ToyProposal { alpha };
        let scheme = ToyScheme { a };
        for n in [1, 3, 8] {
            let cfg = MhaarConfig::new(n);
            out.push(exact_check(&format!("toy a={a} alpha={alpha} N={n}"), &inst, Property::DetailedBalance, |s| {
                mhaar_exact_row(&s.0, &s.1, &q, &scheme, &cfg)
            })?);
        }
    }
    let q = ToyProposal { alpha: 0.2 };
    let scheme = ToyScheme { a: 3.0 };
    let cfg = MhaarConfig::new(4);
    out.push(mc_check("toy a=3 N=4", &inst, Property::DetailedBalance, trials, StreamKey::new(101), |s, rng| {
        Ok(next(mhaar_step(&s.0, &s.1, &q, &scheme, &cfg, rng)?))
    })?);
    Ok(out)
}

pub fn exchange_checks(trials: usize) -> Result<Vec<Check>> {
    let model = exchange_model();
    let inst = exchange_instance(&model);
    let q = GridWalk::new(EXCHANGE_GRID.to_vec())?;
    let scheme = ExchangeScheme { model: &model };
    let mut out = vec![exact_check("exchange single draw", &inst, Property::DetailedBalance, |s| mh_exact_row(&s.0, &s.1, &q, &scheme))?];
    for n in [1, 2, 3] {
        let cfg = MhaarConfig::new(n);
        out.push(exact_check(&format!("exchange averaged N={n}"), &inst, Property::DetailedBalance, |s| {
            mhaar_exact_row(&s.0, &s.1, &q, &scheme, &cfg)
        })?);
    }
    out.push(mc_check("exchange averaged N=3", &inst, Property::DetailedBalance, trials, StreamKey::new(102), |s, rng| {
        Ok((averaged_exchange_step(s.0, &model, &q, 3, false, rng)?.theta, ()))
    })?);
    Ok(out)
}

pub fn changepoint_checks(trials: usize) -> Result<Vec<Check>> {
    let model = changepoint_model();
    let inst = changepoint_instance(&model);
    let q = ModelIndexWalk { m_max: model.prior.m_max };
    let scheme = BirthDeathScheme::new(&model);
    let mut out = Vec::new();
    for coin in [BirthDeathCoin::Even, BirthDeathCoin::BirthAverages] {
        for n in [1, 2] {
            let cfg = MhaarConfig::new(n).with_weight(coin);
            out.push(exact_check(&format!("birth-death {coin:?} N={n}"), &inst, Property::DetailedBalance, |s| {
                mhaar_exact_row(&s.0, &s.1, &q, &scheme, &cfg)
            })?);
        }
    }
    for (coin, seed) in [(BirthDeathCoin::Even, 103), (BirthDeathCoin::BirthAverages, 104)] {
        out.push(mc_check(
            &format!("birth-death {coin:?} N=3"),
            &inst,
            Property::DetailedBalance,
            trials,
            StreamKey::new(seed),
            |s, rng| Ok(next(rmj_step(&s.1, &model, 3, coin, false, rng)?)),
        )?);
    }
    Ok(out)
}

pub fn latent_checks(trials: usize) -> Result<Vec<Check>> {
    let model = CategoricalLatentModel::desk(2);
    let inst = latent_instance(&model);
    let q = GridWalk::new(model.grid.clone())?;
    let variants = [
        (Bridge::Source, Refresh::Off),
        (Bridge::Midpoint, Refresh::Off),
        (Bridge::Source, Refresh::Simple),
        (Bridge::Source, Refresh::DelayedRejection),
        (Bridge::Midpoint, Refresh::DelayedRejection),
    ];
    let mut out = Vec::new();
    for (bridge, refresh) in variants {
        let cfg = RbConfig { m: 2, bridge, refresh, parallel: false };
        out.push(exact_check(&format!("latent RB {bridge:?} refresh={refresh:?}"), &inst, Property::DetailedBalance, |s| {
            rb_exact_row(s.0, &s.1, &model, &q, &cfg)
        })?);
    }
    out.push(exact_check("latent single-path", &inst, Property::DetailedBalance, |s| ais_exact_row(s.0, &s.1, &model, &q, 2))?);
    for (i, (bridge, refresh)) in [(Bridge::Midpoint, Refresh::DelayedRejection), (Bridge::Source, Refresh::Simple)].into_iter().enumerate()
    {
        let cfg = RbConfig { m: 3, bridge, refresh, parallel: false };
        out.push(mc_check(
            &format!("latent RB M=3 {bridge:?} refresh={refresh:?}"),
            &inst,
            Property::DetailedBalance,
            trials,
            StreamKey::new(105 + i as u64),
            |s, rng| Ok(next(mhaar_rb_step(s.0, &s.1, &model, &q, &cfg, rng)?)),
        )?);
    }
    out.push(mc_check("latent single-path M=3", &inst, Property::DetailedBalance, trials, StreamKey::new(107), |s, rng| {
        Ok(next(ais_mcmc_step(s.0, &s.1, &model, &q, 3, false, rng)?))
    })?);
    Ok(out)
}

pub fn ssm_checks(trials: usize) -> Result<Vec<Check>> {
    let model = DiscreteSsm::desk();
    let inst = ssm_instance(&model);
    let q = GridWalk::new(model.grid.clone())?;
    let mut out = vec![exact_check("particle Gibbs with MH (stationarity)", &inst, Property::Stationarity, |s| {
        mwpg_exact_row(s.0, &s.1, &model, &q, 2)
    })?];
    for zeta in [ZetaSchedule::Current, ZetaSchedule::Midpoint] {
        let cfg = RbSsmConfig { m: 2, zeta, refresh: false };
        out.push(exact_check(&format!("SSM RB zeta={zeta:?}"), &inst, Property::DetailedBalance, |s| {
            rb_ssm_exact_row(s.0, &s.1, &model, &q, &cfg)
        })?);
        let cfg = SubsampleConfig { m: 2, n: 2, zeta, swap_refresh: false, parallel: false };
        out.push(exact_check(&format!("SSM subsample zeta={zeta:?}"), &inst, Property::DetailedBalance, |s| {
            subsample_exact_row(s.0, &s.1, &model, &q, &cfg)
        })?);
    }
    let cfg = RbSsmConfig { m: 2, zeta: ZetaSchedule::Current, refresh: true };
    out.push(exact_check("SSM RB refresh", &inst, Property::DetailedBalance, |s| rb_ssm_exact_row(s.0, &s.1, &model, &q, &cfg))?);
    let cfg = SubsampleConfig { m: 2, n: 2, zeta: ZetaSchedule::Current, swap_refresh: true, parallel: false };
    out.push(exact_check("SSM subsample swap (stationarity)", &inst, Property::Stationarity, |s| {
        subsample_exact_row(s.0, &s.1, &model, &q, &cfg)
    })?);

    let rb = RbSsmConfig { m: 3, zeta: ZetaSchedule::Midpoint, refresh: false };
    out.push(mc_check("SSM RB M=3 zeta=Midpoint", &inst, Property::DetailedBalance, trials, StreamKey::new(108), |s, rng| {
        Ok(next(mhaar_rb_ssm_step(s.0, &s.1, &model, &q, &rb, rng)?))
    })?);
    let rb = RbSsmConfig { m: 3, zeta: ZetaSchedule::Current, refresh: true };
    out.push(mc_check("SSM RB M=3 refresh", &inst, Property::DetailedBalance, trials, StreamKey::new(109), |s, rng| {
        Ok(next(mhaar_rb_ssm_step(s.0, &s.1, &model, &q, &rb, rng)?))
    })?);
    let sub = SubsampleConfig { m: 3, n: 3, zeta: ZetaSchedule::Current, swap_refresh: true, parallel: false };
    out.push(mc_check(
        "SSM subsample M=3 N=3 swap (stationarity)",
        &inst,
        Property::Stationarity,
        trials,
        StreamKey::new(110),
        |s, rng| Ok(next(mhaar_s_ssm_step(s.0, &s.1, &model, &q, &sub, rng)?)),
    )?);
    out.push(mc_check(
        "particle Gibbs with MH M=3 (stationarity)",
        &inst,
        Property::Stationarity,
        trials,
        StreamKey::new(111),
        |s, rng| Ok(next(mwpg_step(s.0, &s.1, &model, &q, 3, rng)?)),
    )?);
    Ok(out)
}

/// Fraction of second-stage proposals accepted after a first-stage
/// rejection, for the latent kernel with the source bridge. The
/// second-stage ratio is identically 1 there, so the fraction must be 1.
pub fn latent_second_stage_rate(attempts: usize, seed: u64) -> Result<(usize, usize)> {
    let model = CategoricalLatentModel::desk(3);
    let q = GridWalk::new(model.grid.clone())?;
    let inst = latent_instance(&model);
    let mut rng = StreamKey::new(seed).rng();
    let (mut tried, mut accepted) = (0, 0);
    while tried < attempts {
        let s = &inst.states[rng.index(inst.states.len())];
        let theta = s.0;
        let vartheta = mhaar_core::mh::ProposalKernel::sample(&q, &theta, &mut rng);
        let coin = if rng.uniform() < 0.5 { Coin::One } else { Coin::Two };
        let (a, b, dir) = match coin {
            Coin::One => (theta, vartheta, Direction::Forward),
            Coin::Two => (vartheta, theta, Direction::Backward),
        };
        let v = fill_particles(&s.1, theta, vartheta, &model, 3, dir, false, &mut rng)?;
        let cache = RbCache::new(&v, a, b, &model, &q, Bridge::Source)?;
        let t = s.1.len();
        let lr = match coin {
            Coin::One => cache.log_ratio(&IndexPath::ones(t)),
            Coin::Two => {
                let k = cache.sample_path(mhaar_core::latent_rb::Weights::Bridge, &mut rng)?;
                -cache.log_ratio(&k)
            }
        };
        if lr >= 0.0 || rng.uniform().ln() < lr {
            continue;
        }
        tried += 1;
        if delayed_rejection_general(&v, &cache, coin, false, &mut rng)?.1 {
            accepted += 1;
        }
    }
    Ok((tried, accepted))
}

/// Same for the state-space kernel with ζ = θ: the second-stage ratio
/// (1 − min{1, r_l}) / (1 − min{1, r_1}) is evaluated for a backward-sampled
/// l and used as an acceptance probability.
pub fn ssm_second_stage_rate(attempts: usize, seed: u64) -> Result<(usize, usize)> {
    let (model, _) = LinearGaussianModel::simulate(0.9, 1.0, 1.0, 0.3, 100.0, 1.0, 8, &mut StreamKey::new(seed).rng())?;
    let q = GaussianWalk { sd: 0.4 };
    let mut rng = StreamKey::new(seed).child(1).rng();
    let (mut tried, mut accepted) = (0, 0);
    let mut theta = 1.0;
    let mut z = model.sample_posterior_path(theta, &mut rng);
    while tried < attempts {
        let vartheta = mhaar_core::mh::ProposalKernel::sample(&q, &theta, &mut rng);
        let out = csmc(4, theta, &z, &model, &mut rng)?;
        let t = model.horizon();
        let r1 = rb_log_ratio_ssm(&out, &IndexPath::ones(t), theta, vartheta, &model, &q)?;
        if r1 >= 0.0 || rng.uniform().ln() < r1 {
            theta = vartheta;
            z = model.sample_posterior_path(theta, &mut rng);
            continue;
        }
        tried += 1;
        let l = backward_sample(&out, theta, &model, &mut rng)?;
        let rl = rb_log_ratio_ssm(&out, &l, theta, vartheta, &model, &q)?;
        let ratio = (-(rl.min(0.0)).exp_m1()) / (-(r1.min(0.0)).exp_m1());
        if rng.uniform() < ratio {
            accepted += 1;
            z = out.particles.path(&l);
        }
    }
    Ok((tried, accepted))
}

/// The full invariant suite.
pub fn run_suite(trials: usize) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    out.extend(toy_checks(trials)?);
    out.extend(exchange_checks(trials)?);
    out.extend(changepoint_checks(trials)?);
    out.extend(latent_checks(trials)?);
    out.extend(ssm_checks(trials)?);
    for (name, (tried, acc)) in [
        ("latent second stage, source bridge", latent_second_stage_rate(2000, 201)?),
        ("SSM second stage, zeta = theta", ssm_second_stage_rate(2000, 202)?),
    ] {
        out.push(Check::new(format!("{name}: {acc}/{tried} accepted"), (tried - acc) as f64, 0.0));
    }
    Ok(out)
}
