//! Acceptance suite. Each test prints one PASS/FAIL line per criterion
//! (and per sub-check), then asserts that every line passed.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use mhaar_cli::artifacts::{summarise, BATCHES_PER_CHAIN};
use mhaar_cli::config::*;
use mhaar_cli::run::run_all;
use mhaar_cli::verify::{self, Check};
use mhaar_core::diagnostics::{batch_means_iac, iac, mean_and_se, BatchMeansIac, ChainTrace};
use mhaar_core::exchange::{averaged_exchange_step, ExchangeScheme};
use mhaar_core::latent_rb::{
    fill_particles, for_each_path, Bridge, CategoricalLatentModel, Direction, GaussianLatentModel, IndexPath, RbCache, Weights,
};
use mhaar_core::mh::{build_transition_matrix, mh_exact_row, GaussianWalk, GridWalk, Oracle, ProposalKernel};
use mhaar_core::mhaar::{mhaar_exact_row, MhaarConfig};
use mhaar_core::num::log_sum_exp;
use mhaar_core::rng::indexed_map;
use mhaar_core::ssm::{backward_log_prob, backward_sample, csmc, rb_log_ratio_ssm, LinearGaussianModel, PathSum, StateSpaceModel};
use mhaar_core::toy::{gamma_ratio, spectral_gap, ToyParams, ToyProposal, ToyScheme};
use mhaar_core::{McRng, StreamKey};

struct Report {
    criterion: &'static str,
    failed: usize,
}

impl Report {
    fn new(criterion: &'static str) -> Self {
        Report { criterion, failed: 0 }
    }

    fn line(&mut self, pass: bool, what: impl AsRef<str>) {
        if !pass {
            self.failed += 1;
        }
        // direct handle write so the line shows even when the harness captures output
        let _ = writeln!(std::io::stderr(), "{} [{}] {}", if pass { "PASS" } else { "FAIL" }, self.criterion, what.as_ref());
    }

    fn check(&mut self, c: &Check) {
        self.line(c.pass, format!("{}: {:.3e} (tol {:.1e})", c.name, c.value, c.tolerance));
    }

    fn finish(self) {
        assert_eq!(self.failed, 0, "criterion {}: {} sub-check(s) failed", self.criterion, self.failed);
    }
}

// ---------------------------------------------------------------- 1, 2

#[test]
fn c01_toy_burn_in_reduction() {
    let mut r = Report::new("1 toy burn-in reduction");
    for (a, target) in [(2.0, 0.65), (5.0, 0.35), (10.0, 0.20)] {
        let g = gamma_ratio(a, 1000).unwrap();
        r.line((g - target).abs() <= 0.05, format!("a={a}: gamma(1000) = {g:.4}, target {target} ± 0.05"));
    }
    r.finish();
}

#[test]
fn c02_spectral_gap_monotone() {
    let mut r = Report::new("2 spectral-gap monotonicity");
    let ns = [1usize, 2, 4, 8, 16, 64];
    for a in [2.0, 5.0, 10.0] {
        let gaps: Vec<f64> = ns.iter().map(|&n| spectral_gap(ToyParams::new(a, 0.0, n).unwrap())).collect();
        let monotone = gaps.windows(2).all(|w| w[1] >= w[0]);
        r.line(monotone, format!("a={a}: gaps over N={ns:?} = {:?}", gaps.iter().map(|g| format!("{g:.5}")).collect::<Vec<_>>()));
        // closed form against the enumerated kernel for the N small enough to enumerate
        let mut worst: f64 = 0.0;
        for &n in &ns[..5] {
            let cfg = MhaarConfig::new(n);
            let row = mhaar_exact_row(&1.0, &(), &ToyProposal { alpha: 0.0 }, &ToyScheme { a }, &cfg).unwrap();
            let flip: f64 = row.iter().filter(|((t, _), _)| *t == -1.0).map(|x| x.1).sum();
            worst = worst.max((2.0 * flip - gaps[ns.iter().position(|&x| x == n).unwrap()]).abs());
        }
        r.line(worst < 1e-10, format!("a={a}: closed form vs enumerated kernel, max diff {worst:.2e} (tol 1e-10)"));
    }
    r.finish();
}

// ---------------------------------------------------------------- 3

#[test]
fn c03_single_draw_reduction() {
    let mut r = Report::new("3 N=1 reduction");
    let model = verify::exchange_model();
    let inst = verify::exchange_instance(&model);
    let q = GridWalk::new(verify::EXCHANGE_GRID.to_vec()).unwrap();
    let scheme = ExchangeScheme { model: &model };
    let cfg = MhaarConfig::new(1);
    let key = StreamKey::new(0);
    let plain = build_transition_matrix(&inst.states, Oracle::Exact(&|s: &(f64, ())| mh_exact_row(&s.0, &s.1, &q, &scheme)), key).unwrap();
    let avg =
        build_transition_matrix(&inst.states, Oracle::Exact(&|s: &(f64, ())| mhaar_exact_row(&s.0, &s.1, &q, &scheme, &cfg)), key).unwrap();
    let diff = plain.p.iter().zip(&avg.p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    r.line(diff <= 1e-12, format!("exact matrices, max entry difference {diff:.2e} (tol 1e-12)"));
    let trials = 100_000;
    let step = |s: &(f64, ()), rng: &mut McRng| Ok((averaged_exchange_step(s.0, &model, &q, 1, false, rng)?.theta, ()));
    let sim = build_transition_matrix(&inst.states, Oracle::Sampled { step: &step, trials }, StreamKey::new(31)).unwrap();
    let mut worst_z: f64 = 0.0;
    for (p, e) in sim.p.iter().zip(&plain.p) {
        let pe = e.max(1.0 / trials as f64);
        let se = (pe * (1.0 - pe).max(1.0 / trials as f64) / trials as f64).sqrt();
        worst_z = worst_z.max((p - e).abs() / se);
    }
    r.line(worst_z <= 5.0, format!("simulated N=1 rows vs exact single-draw rows, max |z| {worst_z:.2} (tol 5)"));
    r.finish();
}

// ---------------------------------------------------------------- 4, 10

fn suite() -> &'static Vec<Check> {
    static SUITE: OnceLock<Vec<Check>> = OnceLock::new();
    SUITE.get_or_init(|| verify::run_suite(verify::DEFAULT_TRIALS).expect("invariant suite runs"))
}

#[test]
fn c04_detailed_balance_everywhere() {
    let mut r = Report::new("4 detailed balance");
    for c in suite() {
        if !c.name.contains("second stage") {
            r.check(c);
        }
    }
    r.finish();
}

#[test]
fn c10_refresh_and_delayed_rejection() {
    let mut r = Report::new("10 refreshment / delayed rejection");
    let keys = ["refresh=Simple", "refresh=DelayedRejection", "SSM RB refresh", "RB M=3 refresh", "swap", "second stage"];
    for c in suite() {
        if keys.iter().any(|k| c.name.contains(k)) {
            r.check(c);
        }
    }
    r.finish();
}

// ---------------------------------------------------------------- 5

#[test]
fn c05_rao_blackwell_identities() {
    let mut r = Report::new("5 Rao-Blackwell identities");
    let mut rng = StreamKey::new(55).rng();
    let mut worst_latent: f64 = 0.0;
    let mut worst_ssm: f64 = 0.0;
    for _ in 0..100 {
        let t = 1 + rng.index(3);
        let m = 1 + rng.index(4);
        // latent product model: closed form against the average of single-path ratios over all M^T paths
        let model = CategoricalLatentModel::desk(t);
        let theta = model.grid[rng.index(3)];
        let q = GridWalk::new(model.grid.clone()).unwrap();
        let vartheta = q.sample(&theta, &mut rng);
        let z: Vec<u8> = (0..t).map(|_| rng.index(4) as u8).collect();
        let bridge = if rng.uniform() < 0.5 { Bridge::Source } else { Bridge::Midpoint };
        let v = fill_particles(&z, theta, vartheta, &model, m, Direction::Forward, false, &mut rng).unwrap();
        let l = IndexPath((0..t).map(|_| rng.index(m)).collect());
        let cache = RbCache::new(&v, theta, vartheta, &model, &q, bridge).unwrap();
        let swapped = RbCache::new(&v.swap_path(&l), theta, vartheta, &model, &q, bridge).unwrap();
        let mut terms = Vec::new();
        for_each_path(t, m, |k| {
            terms.push(swapped.path_log_prob(Weights::Bridge, k) + swapped.log_single_path_ratio(k));
            Ok(())
        })
        .unwrap();
        let closed = cache.log_ratio(&l);
        worst_latent = worst_latent.max(rel_err(closed, log_sum_exp(&terms)));

        // state-space model: sum-product against enumeration of all backward paths
        let (lg, zz) = LinearGaussianModel::simulate(0.9, 1.0, 1.0, 0.2, 100.0, 0.7, t, &mut rng).unwrap();
        let zeta = 0.5 + rng.uniform();
        let a = 0.5 + rng.uniform();
        let b = 0.5 + rng.uniform();
        let out = csmc(m, zeta, &zz, &lg, &mut rng).unwrap();
        let gq = GaussianWalk { sd: 0.5 };
        let l = IndexPath((0..t).map(|_| rng.index(m)).collect());
        let zl = out.particles.path(&l);
        let pref = gq.log_density(&b, &a) - gq.log_density(&a, &b) + lg.log_prior(b) - lg.log_prior(a);
        let mut terms = Vec::new();
        for_each_path(t, m, |k| {
            let zk = out.particles.path(k);
            terms.push(backward_log_prob(&out, zeta, k, &lg)? + lg.log_joint(b, &zk) - lg.log_joint(zeta, &zk));
            Ok(())
        })
        .unwrap();
        let enumerated = pref + lg.log_joint(zeta, &zl) - lg.log_joint(a, &zl) + log_sum_exp(&terms);
        let closed = rb_log_ratio_ssm(&out, &l, a, b, &lg, &gq).unwrap();
        worst_ssm = worst_ssm.max(rel_err(closed, enumerated));
        let direct = PathSum::new(&out, b, &lg).unwrap().log_total;
        worst_ssm = worst_ssm.max(rel_err(direct, log_sum_exp(&terms)));
    }
    r.line(worst_latent < 1e-10, format!("product model, 100 instances: max rel. error {worst_latent:.2e} (tol 1e-10)"));
    r.line(worst_ssm < 1e-10, format!("state-space sum-product, 100 instances: max rel. error {worst_ssm:.2e} (tol 1e-10)"));
    r.finish();
}

/// Relative error of two log-values, measured on the ratio scale.
fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).exp_m1().abs()
    }
}

// ---------------------------------------------------------------- 6

const C6_THETA: f64 = 1.0;
const C6_VARTHETA: f64 = 1.05;

fn c6_model() -> LinearGaussianModel {
    LinearGaussianModel::simulate(0.95, 1.0, 1.0, 0.1, 1e4, 1.0, 20, &mut StreamKey::new(606).rng()).unwrap().0
}

/// Replicates of the forward estimator r_{1,v}(θ,ϑ;ζ) and the reverse
/// estimator 1/r_{k,v}(ϑ,θ;ζ), with z drawn exactly from π_θ.
fn c6_replicates(model: &LinearGaussianModel, zeta: f64, reps: usize, key: StreamKey) -> Vec<(f64, f64)> {
    let q = GaussianWalk { sd: 0.3 };
    let t = model.horizon();
    indexed_map(reps, true, |i| {
        let mut rng = key.child(i as u64).rng();
        let z = model.sample_posterior_path(C6_THETA, &mut rng);
        let out = csmc(5, zeta, &z, model, &mut rng).unwrap();
        let fwd = rb_log_ratio_ssm(&out, &IndexPath::ones(t), C6_THETA, C6_VARTHETA, model, &q).unwrap();
        let k = backward_sample(&out, zeta, model, &mut rng).unwrap();
        let rev = -rb_log_ratio_ssm(&out, &k, C6_VARTHETA, C6_THETA, model, &q).unwrap();
        (fwd.exp(), rev.exp())
    })
}

#[test]
fn c06_unbiasedness_against_kalman() {
    let mut r = Report::new("6 unbiasedness");
    let model = c6_model();
    let q = GaussianWalk { sd: 0.3 };
    let exact = model.exact_log_ratio(C6_THETA, C6_VARTHETA, &q).unwrap().exp();
    for (name, zeta) in [("zeta=theta", C6_THETA), ("zeta=midpoint", 0.5 * (C6_THETA + C6_VARTHETA))] {
        let reps = c6_replicates(&model, zeta, 100_000, StreamKey::new(60));
        for (est, pick) in [("forward r_1", 0usize), ("reverse 1/r_k", 1)] {
            let xs: Vec<f64> = reps.iter().map(|p| if pick == 0 { p.0 } else { p.1 }).collect();
            let (m, se) = mean_and_se(&xs);
            let z = (m - exact) / se;
            r.line(z.abs() <= 3.0, format!("{name}, {est}: mean {m:.5} ± {se:.5} vs Kalman {exact:.5} ({z:+.2} SE)"));
        }
    }
    r.finish();
}

// ---------------------------------------------------------------- 7

struct Estimate {
    label: String,
    tau: f64,
    se: f64,
    bm: BatchMeansIac,
}

fn estimate(label: String, traces: &[ChainTrace]) -> Estimate {
    let taus: Vec<f64> = traces.iter().map(|t| iac(&t.samples, 0.25).unwrap().tau).collect();
    let (tau, se) = mean_and_se(&taus);
    let refs: Vec<&[f64]> = traces.iter().map(|t| t.samples.as_slice()).collect();
    let bm = batch_means_iac(&refs, 0.25, BATCHES_PER_CHAIN).unwrap();
    let e = Estimate { label, tau, se, bm };
    let _ = writeln!(
        std::io::stderr(),
        "  {}: IAC {:.1} ± {:.1} over {} chains, batch means {:.1} [{:.1}, {:.1}], acceptance {:.3}",
        e.label,
        e.tau,
        e.se,
        traces.len(),
        e.bm.tau,
        e.bm.lower,
        e.bm.upper,
        traces.iter().map(|t| t.acceptance_rate()).sum::<f64>() / traces.len() as f64
    );
    e
}

fn ssm_config(kernel: SsmKernel, m: usize, n: usize, runs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Experiment::Ssm);
    cfg.seed = 7000;
    cfg.chain_length = 200_000;
    cfg.n_runs = runs;
    cfg.ssm = SsmConfig { kernel, m, n, ..SsmConfig::default() };
    cfg
}

#[test]
fn c07_ssm_iac_trends() {
    let mut r = Report::new("7 SSM IAC trends");
    let rb: Vec<Estimate> = [(5, 3), (10, 3), (20, 2), (50, 1)]
        .into_iter()
        .map(|(m, runs)| estimate(format!("RB M={m}"), &run_all(&ssm_config(SsmKernel::Rb, m, 1, runs)).unwrap()))
        .collect();
    let strictly = rb.windows(2).all(|w| w[1].tau < w[0].tau);
    r.line(
        strictly,
        format!("(a) RB IAC strictly decreasing over M=5,10,20,50: {:?}", rb.iter().map(|e| e.tau.round()).collect::<Vec<_>>()),
    );
    let apart = !rb[0].bm.overlaps(&rb[3].bm);
    r.line(
        apart,
        format!(
            "(a) RB batch-means 95% CIs M=5 [{:.0}, {:.0}] and M=50 [{:.0}, {:.0}] do not overlap",
            rb[0].bm.lower, rb[0].bm.upper, rb[3].bm.lower, rb[3].bm.upper
        ),
    );
    let mw: Vec<Estimate> =
        [5, 50].into_iter().map(|m| estimate(format!("MwPG M={m}"), &run_all(&ssm_config(SsmKernel::Mwpg, m, 1, 8)).unwrap())).collect();
    let ratio = (mw[0].tau / mw[1].tau).max(mw[1].tau / mw[0].tau);
    r.line(ratio < 2.0, format!("(b) MwPG IAC M=5 {:.0} vs M=50 {:.0}, ratio {ratio:.2} (< 2)", mw[0].tau, mw[1].tau));
    let sub: Vec<Estimate> = [10, 20, 40, 60]
        .into_iter()
        .map(|n| estimate(format!("MHAAR-S M=20 N={n}"), &run_all(&ssm_config(SsmKernel::Subsample, 20, n, 2)).unwrap()))
        .collect();
    let nonincreasing = sub.windows(2).all(|w| w[1].tau <= w[0].tau);
    r.line(
        nonincreasing,
        format!("(c) MHAAR-S IAC non-increasing over N=10,20,40,60: {:?}", sub.iter().map(|e| e.tau.round()).collect::<Vec<_>>()),
    );
    let above = sub.iter().all(|e| e.tau >= rb[2].tau);
    r.line(above, format!("(c) every MHAAR-S IAC ≥ RB IAC at M=20 ({:.0})", rb[2].tau));
    r.finish();
}

// ---------------------------------------------------------------- 8

fn latent_config(kernel: LatentKernel, bridge: BridgeMode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Experiment::Latent);
    cfg.seed = 8000;
    cfg.chain_length = 50_000;
    cfg.n_runs = 4;
    cfg.latent = LatentConfig { kernel, bridge, m: 50, ..LatentConfig::default() };
    cfg
}

#[test]
fn c08_rb_versus_single_path() {
    let mut r = Report::new("8 RB vs single path");
    let rb = estimate("RB M=50 source bridge".into(), &run_all(&latent_config(LatentKernel::Rb, BridgeMode::Source)).unwrap());
    let ais = estimate("single-path M=50".into(), &run_all(&latent_config(LatentKernel::Ais, BridgeMode::Midpoint)).unwrap());
    estimate("RB M=50 midpoint bridge (informational)".into(), &run_all(&latent_config(LatentKernel::Rb, BridgeMode::Midpoint)).unwrap());
    r.line(rb.tau <= 0.5 * ais.tau, format!("IAC RB {:.1} ≤ half of single-path {:.1}", rb.tau, ais.tau));
    r.line(
        !rb.bm.overlaps(&ais.bm),
        format!(
            "batch-means CIs RB [{:.1}, {:.1}] and single-path [{:.1}, {:.1}] do not overlap",
            rb.bm.lower, rb.bm.upper, ais.bm.lower, ais.bm.upper
        ),
    );
    // sanity: the data set is the one the defaults describe
    let l = LatentConfig::default();
    let model = GaussianLatentModel::simulate(l.theta_star, l.t, l.obs_var, l.prior_var, &mut StreamKey::new(l.data_seed).rng()).unwrap();
    assert_eq!(model.y.len(), 10);
    r.finish();
}

// ---------------------------------------------------------------- 9

fn changepoint_config(n: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Experiment::Changepoint);
    cfg.seed = 9000;
    cfg.chain_length = 25_000;
    cfg.n_runs = 4;
    cfg.changepoint.n = n;
    cfg
}

/// Posterior probability of each m with a batch-means standard error.
fn atom_estimates(traces: &[ChainTrace], atoms: &[usize]) -> Vec<(f64, f64)> {
    atoms
        .iter()
        .map(|&m| {
            let ind: Vec<Vec<f64>> = traces.iter().map(|t| t.samples.iter().map(|&v| (v as usize == m) as u8 as f64).collect()).collect();
            let kept: Vec<f64> = ind.iter().flat_map(|c| c[c.len() / 4..].to_vec()).collect();
            let (p, _) = mean_and_se(&kept);
            let refs: Vec<&[f64]> = ind.iter().map(|c| c.as_slice()).collect();
            let se = match batch_means_iac(&refs, 0.25, BATCHES_PER_CHAIN) {
                Ok(bm) => (bm.tau * p * (1.0 - p) / kept.len() as f64).sqrt(),
                Err(_) => 0.0,
            };
            (p, se)
        })
        .collect()
}

#[test]
fn c09_changepoint_invariance_across_n() {
    let mut r = Report::new("9 change-point invariance");
    let one = run_all(&changepoint_config(1)).unwrap();
    let fifty = run_all(&changepoint_config(50)).unwrap();
    let mut atoms: Vec<usize> = one.iter().chain(&fifty).flat_map(|t| t.samples[t.len() / 4..].iter().map(|&v| v as usize)).collect();
    atoms.sort();
    atoms.dedup();
    let a = atom_estimates(&one, &atoms);
    let b = atom_estimates(&fifty, &atoms);
    for (i, m) in atoms.iter().enumerate() {
        let se = (a[i].1.powi(2) + b[i].1.powi(2)).sqrt();
        let d = (a[i].0 - b[i].0).abs();
        r.line(d <= 3.0 * se, format!("P(m={m}): N=1 {:.4} ± {:.4}, N=50 {:.4} ± {:.4}", a[i].0, a[i].1, b[i].0, b[i].1));
    }
    let e1 = estimate("IAC(m) N=1".into(), &one);
    let e50 = estimate("IAC(m) N=50".into(), &fifty);
    r.line(e50.tau <= e1.tau, format!("IAC(m) N=50 {:.1} ≤ N=1 {:.1}", e50.tau, e1.tau));
    let s = summarise(&changepoint_config(50), &fifty);
    assert_eq!(s.runs.len(), 4);
    r.finish();
}

// ---------------------------------------------------------------- 11

fn cli_run(dir: &Path, cfg: &ExperimentConfig, threads: usize) -> Vec<Vec<u8>> {
    let cfg_path = dir.join(format!("{}.toml", cfg.experiment.name()));
    std::fs::write(&cfg_path, cfg.render()).unwrap();
    let out = dir.join(format!("{}-t{threads}", cfg.experiment.name()));
    let status = Command::new(env!("CARGO_BIN_EXE_mhaar"))
        .arg(cfg.experiment.name())
        .arg("--config")
        .arg(&cfg_path)
        .arg("--threads")
        .arg(threads.to_string())
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let mut files = vec![];
    for run in 0..cfg.n_runs {
        files.push(std::fs::read(out.join(format!("chain_{run:03}.csv"))).unwrap());
    }
    files.push(std::fs::read(out.join("summary.json")).unwrap());
    files
}

#[test]
fn c11_determinism_across_threads() {
    let mut r = Report::new("11 determinism");
    let dir = tempfile::tempdir().unwrap();
    let mut configs = Vec::new();
    for kernel in [SsmKernel::Rb, SsmKernel::Subsample, SsmKernel::Mwpg] {
        let mut c = ssm_config(kernel, 5, 8, 3);
        c.chain_length = 300;
        c.ssm.parallel = true;
        configs.push(c);
    }
    let mut c = latent_config(LatentKernel::Rb, BridgeMode::Source);
    c.chain_length = 500;
    c.n_runs = 3;
    c.latent.parallel = true;
    configs.push(c);
    let mut c = changepoint_config(50);
    c.chain_length = 500;
    c.n_runs = 3;
    c.changepoint.parallel = true;
    configs.push(c);
    for cfg in &configs {
        let base = cli_run(dir.path(), cfg, 1);
        for threads in [4, 8] {
            let other = cli_run(dir.path(), cfg, threads);
            r.line(
                base == other,
                format!("CLI {} ({:?}): outputs with --threads 1 and {threads} identical", cfg.experiment.name(), kernel_of(cfg)),
            );
        }
    }
    let model = c6_model();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| c6_replicates(&model, C6_THETA, 2000, StreamKey::new(61)))
    };
    let base: Vec<(u64, u64)> = run(1).iter().map(|p| (p.0.to_bits(), p.1.to_bits())).collect();
    for threads in [4, 8] {
        let other: Vec<(u64, u64)> = run(threads).iter().map(|p| (p.0.to_bits(), p.1.to_bits())).collect();
        r.line(base == other, format!("unbiasedness replicates bit-identical with 1 and {threads} threads"));
    }
    r.finish();
}

fn kernel_of(cfg: &ExperimentConfig) -> String {
    mhaar_cli::run::kernel_label(cfg)
}
