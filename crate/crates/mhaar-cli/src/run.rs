//! Experiment execution: builds the model once, then runs `n_runs`
//! independent chains on a worker pool. Run `r` draws from the stream
//! `StreamKey(seed).child(r)`, so outputs do not depend on the pool size.

use std::path::Path;

use mhaar_core::diagnostics::{run_chain, ChainMeta, ChainTrace};
use mhaar_core::exchange::{averaged_exchange_step, ExpFamilyModel, Statistic};
use mhaar_core::latent_rb::{ais_mcmc_step, mhaar_rb_step, Bridge, GaussianLatentModel, RbConfig, Refresh};
use mhaar_core::mh::GaussianWalk;
use mhaar_core::mhaar::{mhaar_step, MhaarConfig};
use mhaar_core::rjmcmc::{
    rmj_step, within_model_sweep, BirthDeathCoin, ChangepointModel, ChangepointPrior, HeightLaw, TransState, WithinModelMoves,
};
use mhaar_core::ssm::{mhaar_rb_ssm_step, mhaar_s_ssm_step, mwpg_step, LinearGaussianModel, RbSsmConfig, SubsampleConfig, ZetaSchedule};
use mhaar_core::toy::{ToyProposal, ToyScheme};
use mhaar_core::{McRng, StreamKey};
use rayon::prelude::*;

use crate::config::*;
use crate::data::{read_dataset, simulate_lgssm, synth_changepoint};
use crate::CliError;

/// Model data shared by all runs of an experiment.
pub enum Prepared {
    Toy,
    Exchange(ExpFamilyModel),
    Changepoint(ChangepointModel),
    Latent(GaussianLatentModel),
    Ssm(LinearGaussianModel),
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    Ok(match cfg.experiment {
        Experiment::Toy => Prepared::Toy,
        Experiment::Exchange => {
            let e = &cfg.exchange;
            let stat = match e.statistic {
                StatisticKind::Sum => Statistic::Sum,
                StatisticKind::Agreement => Statistic::Agreement,
            };
            Prepared::Exchange(ExpFamilyModel::new(e.alphabet, e.data.len(), stat, &e.data, e.prior_sd)?)
        }
        Experiment::Changepoint => {
            let c = &cfg.changepoint;
            let data = match &c.events_file {
                Some(f) => read_dataset(Path::new(f))?,
                None => synth_changepoint(c, c.data_seed)?,
            };
            let prior = ChangepointPrior {
                lambda: c.lambda,
                m_max: c.m_max,
                heights: HeightLaw::Gamma { shape: c.gamma_shape, rate: c.gamma_rate },
                ..ChangepointPrior::default()
            };
            Prepared::Changepoint(ChangepointModel::new(c.length, data.column("event")?, prior)?)
        }
        Experiment::Latent => {
            let l = &cfg.latent;
            let mut rng = StreamKey::new(l.data_seed).rng();
            Prepared::Latent(GaussianLatentModel::simulate(l.theta_star, l.t, l.obs_var, l.prior_var, &mut rng)?)
        }
        Experiment::Ssm => {
            let s = &cfg.ssm;
            let model = match &s.data_file {
                Some(f) => {
                    let y = read_dataset(Path::new(f))?.column("y")?;
                    LinearGaussianModel::new(s.phi, s.a, s.var_z, s.var_y, s.prior_var, y)?
                }
                None => simulate_lgssm(s, &mut StreamKey::new(s.data_seed).rng())?.0,
            };
            Prepared::Ssm(model)
        }
    })
}

/// Short kernel label used in chain metadata.
pub fn kernel_label(cfg: &ExperimentConfig) -> String {
    match cfg.experiment {
        Experiment::Toy => format!("mhaar-toy-n{}", cfg.toy.n),
        Experiment::Exchange => format!("exchange-n{}", cfg.exchange.n),
        Experiment::Changepoint => format!("rmj-n{}", cfg.changepoint.n),
        Experiment::Latent => match cfg.latent.kernel {
            LatentKernel::Rb => format!("rb-m{}", cfg.latent.m),
            LatentKernel::Ais => format!("ais-m{}", cfg.latent.m),
        },
        Experiment::Ssm => match cfg.ssm.kernel {
            SsmKernel::Rb => format!("rb-ssm-m{}", cfg.ssm.m),
            SsmKernel::Subsample => format!("subsample-ssm-m{}-n{}", cfg.ssm.m, cfg.ssm.n),
            SsmKernel::Mwpg => format!("mwpg-m{}", cfg.ssm.m),
        },
    }
}

fn zeta(z: ZetaMode) -> ZetaSchedule {
    match z {
        ZetaMode::Current => ZetaSchedule::Current,
        ZetaMode::Midpoint => ZetaSchedule::Midpoint,
    }
}

/// Run chain `run` of the experiment. The recorded value is θ, or the
/// number of segments for the change-point experiment.
pub fn run_one(cfg: &ExperimentConfig, data: &Prepared, run: usize) -> Result<ChainTrace, CliError> {
    let mut rng: McRng = StreamKey::new(cfg.seed).child(run as u64).rng();
    let len = cfg.chain_length;
    let mut trace = match data {
        Prepared::Toy => {
            let t = &cfg.toy;
            let q = ToyProposal { alpha: t.alpha };
            let scheme = ToyScheme { a: t.a };
            let mc = MhaarConfig::new(t.n);
            run_chain(t.init, (), len, |th, z| mhaar_step(th, z, &q, &scheme, &mc, &mut rng), |th, _| *th)?
        }
        Prepared::Exchange(model) => {
            let e = &cfg.exchange;
            let q = GaussianWalk { sd: e.proposal_sd };
            run_chain(e.init, (), len, |th, _| averaged_exchange_step(*th, model, &q, e.n, e.parallel, &mut rng), |th, _| *th)?
        }
        Prepared::Changepoint(model) => {
            let c = &cfg.changepoint;
            let coin = match c.coin {
                CoinMode::Even => BirthDeathCoin::Even,
                CoinMode::BirthAverages => BirthDeathCoin::BirthAverages,
            };
            let rate = model.events.len().max(1) as f64 / model.length;
            let moves = WithinModelMoves::default();
            let start = TransState::single(model.length, rate)?;
            run_chain(
                1usize,
                start,
                len,
                |_, z| {
                    let mut out = rmj_step(z, model, c.n, coin, c.parallel, &mut rng)?;
                    for _ in 0..c.sweeps {
                        out.z = within_model_sweep(&out.z, model, &moves, &mut rng)?.0;
                    }
                    Ok(out)
                },
                |m, _| *m as f64,
            )?
        }
        Prepared::Latent(model) => {
            let l = &cfg.latent;
            let q = GaussianWalk { sd: l.proposal_sd };
            let bridge = match l.bridge {
                BridgeMode::Source => Bridge::Source,
                BridgeMode::Midpoint => Bridge::Midpoint,
            };
            let refresh = match l.refresh {
                RefreshMode::Off => Refresh::Off,
                RefreshMode::Simple => Refresh::Simple,
                RefreshMode::DelayedRejection => Refresh::DelayedRejection,
            };
            let rc = RbConfig { m: l.m, bridge, refresh, parallel: l.parallel };
            let z0 = model.y.clone();
            run_chain(
                l.init,
                z0,
                len,
                |th, z| match l.kernel {
                    LatentKernel::Rb => mhaar_rb_step(*th, z, model, &q, &rc, &mut rng),
                    LatentKernel::Ais => ais_mcmc_step(*th, z, model, &q, l.m, l.parallel, &mut rng),
                },
                |th, _| *th,
            )?
        }
        Prepared::Ssm(model) => {
            let s = &cfg.ssm;
            let q = GaussianWalk { sd: s.proposal_sd };
            let z0 = model.sample_posterior_path(s.init, &mut rng);
            let rb = RbSsmConfig { m: s.m, zeta: zeta(s.zeta), refresh: s.refresh };
            let sub = SubsampleConfig { m: s.m, n: s.n, zeta: zeta(s.zeta), swap_refresh: s.swap_refresh, parallel: s.parallel };
            run_chain(
                s.init,
                z0,
                len,
                |th, z| match s.kernel {
                    SsmKernel::Rb => mhaar_rb_ssm_step(*th, z, model, &q, &rb, &mut rng),
                    SsmKernel::Subsample => mhaar_s_ssm_step(*th, z, model, &q, &sub, &mut rng),
                    SsmKernel::Mwpg => mwpg_step(*th, z, model, &q, s.m, &mut rng),
                },
                |th, _| *th,
            )?
        }
    };
    trace.meta = ChainMeta { seed: cfg.seed, kernel: kernel_label(cfg), config_hash: cfg.hash() };
    Ok(trace)
}

/// All runs of an experiment on a pool of `cfg.threads` workers.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<ChainTrace>, CliError> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build().map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| (0..cfg.n_runs).into_par_iter().map(|r| run_one(cfg, &data, r)).collect())
}
