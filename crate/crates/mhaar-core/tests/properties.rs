//! Property tests for the core kernels against independent oracles.

use mhaar_core::diagnostics::{batch_means_iac, iac, mean_and_se};
use mhaar_core::latent_rb::{
    fill_particles, for_each_path, Bridge, CategoricalLatentModel, Direction, GaussianLatentModel, IndexPath, ParticleMatrix,
    ProductLatentModel, RbCache, Weights,
};
use mhaar_core::mh::{GaussianWalk, GridWalk, ProposalKernel};
use mhaar_core::mhaar::{averaged_log_ratio, mhaar_exact_row, sample_proportional, MhaarConfig};
use mhaar_core::num::{log_mean_exp, log_sum_exp};
use mhaar_core::rng::indexed_map;
use mhaar_core::ssm::ZetaSchedule;
use mhaar_core::toy::{spectral_gap, toy_kernel_prob, ToyParams, ToyProposal, ToyScheme};
use mhaar_core::StreamKey;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn toy_closed_form_matches_enumeration(a in 0.2f64..12.0, alpha in 0.0f64..0.9, n in 1usize..7) {
        let p = ToyParams::new(a, alpha, n).unwrap();
        let row = mhaar_exact_row(&1.0, &(), &ToyProposal { alpha }, &ToyScheme { a }, &MhaarConfig::new(n)).unwrap();
        let flip: f64 = row.iter().filter(|((t, _), _)| *t == -1.0).map(|x| x.1).sum();
        let total: f64 = row.iter().map(|x| x.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!((flip - toy_kernel_prob(p)).abs() < 1e-10);
    }

    #[test]
    fn toy_gap_grows_with_draws(a in 1.01f64..50.0, n in 1usize..200) {
        let g1 = spectral_gap(ToyParams::new(a, 0.0, n).unwrap());
        let g2 = spectral_gap(ToyParams::new(a, 0.0, n + 1).unwrap());
        prop_assert!(g2 >= g1 - 1e-12);
        prop_assert!(g2 <= 2.0 + 1e-12);
    }

    #[test]
    fn averaged_ratio_is_log_of_mean(xs in prop::collection::vec(-30.0f64..30.0, 1..20), wf in 0.05f64..1.0, wb in 0.05f64..1.0) {
        let got = averaged_log_ratio(&xs, wf, wb).unwrap();
        let mean = xs.iter().map(|x| x.exp()).sum::<f64>() / xs.len() as f64;
        let want = (wb / wf * mean).ln();
        prop_assert!((got - want).abs() < 1e-10 * want.abs().max(1.0));
        let mut rev = xs.clone();
        rev.reverse();
        prop_assert!((averaged_log_ratio(&rev, wf, wb).unwrap() - got).abs() < 1e-12);
    }

    #[test]
    fn single_ratio_average_is_identity(x in -50.0f64..50.0) {
        prop_assert!((averaged_log_ratio(&[x], 1.0, 1.0).unwrap() - x).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_matches_naive(xs in prop::collection::vec(-20.0f64..20.0, 1..30), shift in -600.0f64..600.0) {
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        prop_assert!((log_sum_exp(&shifted) - shift - naive).abs() < 1e-10);
        prop_assert!((log_mean_exp(&xs) - naive + (xs.len() as f64).ln()).abs() < 1e-10);
    }

    #[test]
    fn swap_path_is_an_involution(t in 1usize..6, m in 1usize..6, seed in any::<u64>()) {
        let mut rng = StreamKey::new(seed).rng();
        let v = ParticleMatrix { rows: (0..t).map(|_| (0..m).map(|_| rng.index(1000)).collect()).collect() };
        let k = IndexPath((0..t).map(|_| rng.index(m)).collect());
        let w = v.swap_path(&k);
        prop_assert_eq!(w.path(&IndexPath::ones(t)), v.path(&k));
        prop_assert_eq!(w.swap_path(&k), v);
    }

    #[test]
    fn zeta_schedules_mirror(theta in -5.0f64..5.0, vartheta in -5.0f64..5.0) {
        for s in [ZetaSchedule::Current, ZetaSchedule::Midpoint] {
            prop_assert_eq!(s.zeta1(theta, vartheta), s.zeta2(vartheta, theta));
        }
    }

    #[test]
    fn indexed_map_is_schedule_free(n in 0usize..200, seed in any::<u64>()) {
        let key = StreamKey::new(seed);
        let f = |i: usize| key.child(i as u64).rng().uniform();
        prop_assert_eq!(indexed_map(n, true, f), indexed_map(n, false, f));
    }

    #[test]
    fn rb_ratio_is_average_of_path_ratios(t in 1usize..4, m in 1usize..4, seed in any::<u64>(), mid in any::<bool>()) {
        // averaging the single-path ratio over the selection law recovers the closed form
        let mut rng = StreamKey::new(seed).rng();
        let model = CategoricalLatentModel::desk(t);
        let q = GridWalk::new(model.grid.clone()).unwrap();
        let theta = model.grid[rng.index(model.grid.len())];
        let vartheta = q.sample(&theta, &mut rng);
        let z: Vec<u8> = (0..t).map(|_| rng.index(4) as u8).collect();
        let bridge = if mid { Bridge::Midpoint } else { Bridge::Source };
        let v = fill_particles(&z, theta, vartheta, &model, m, Direction::Forward, false, &mut rng).unwrap();
        let cache = RbCache::new(&v, theta, vartheta, &model, &q, bridge).unwrap();
        let mut terms = Vec::new();
        for_each_path(t, m, |k| {
            terms.push(cache.path_log_prob(Weights::Bridge, k) + cache.log_single_path_ratio(k));
            Ok(())
        })
        .unwrap();
        let closed = cache.log_ratio(&IndexPath::ones(t));
        prop_assert!((closed - log_sum_exp(&terms)).abs() < 1e-10 * closed.abs().max(1.0));
    }
}

#[test]
fn sampled_indices_follow_weights() {
    let w = [0.1, 0.4, 0.2, 0.3];
    let lw: Vec<f64> = w.iter().map(|x: &f64| x.ln()).collect();
    let mut rng = StreamKey::new(4).rng();
    let n = 200_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[sample_proportional(&lw, &mut rng).unwrap()] += 1;
    }
    // Pearson chi-square with 3 degrees of freedom; 16.27 is the 0.999 quantile
    let chi: f64 = counts.iter().zip(&w).map(|(&c, &p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p)).sum();
    assert!(chi < 16.27, "chi-square {chi}");
}

#[test]
fn latent_rb_estimator_is_unbiased() {
    // z drawn exactly from p_θ(z | y); E[r_{1,v}(θ,ϑ)] must equal the exact marginal ratio
    let mut rng = StreamKey::new(77).rng();
    let model = GaussianLatentModel::simulate(0.5, 3, 1.0, 10.0, &mut rng).unwrap();
    let q = GaussianWalk { sd: 0.5 };
    let (theta, vartheta) = (0.5, 0.9);
    let exact = (model.log_marginal(vartheta) + model.log_prior(vartheta) - model.log_marginal(theta) - model.log_prior(theta)).exp();
    let prec = 1.0 + 1.0 / model.obs_var;
    for bridge in [Bridge::Source, Bridge::Midpoint] {
        let reps = 100_000;
        let draws: Vec<f64> = (0..reps)
            .map(|_| {
                let z: Vec<f64> = model
                    .y
                    .iter()
                    .map(|&y| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        (theta + y / model.obs_var) / prec + e / prec.sqrt()
                    })
                    .collect();
                let v = fill_particles(&z, theta, vartheta, &model, 5, Direction::Forward, false, &mut rng).unwrap();
                RbCache::new(&v, theta, vartheta, &model, &q, bridge).unwrap().log_ratio(&IndexPath::ones(3)).exp()
            })
            .collect();
        let (m, se) = mean_and_se(&draws);
        assert!(((m - exact) / se).abs() < 4.0, "{bridge:?}: mean {m}, exact {exact}, se {se}");
    }
}

#[test]
fn iac_recovers_ar1_value() {
    // AR(1) with coefficient φ has τ = (1 + φ)/(1 − φ)
    let phi: f64 = 0.8;
    let mut rng = StreamKey::new(5).rng();
    let chains: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let mut x = 0.0;
            (0..100_000)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x = phi * x + (1.0 - phi * phi).sqrt() * e;
                    x
                })
                .collect()
        })
        .collect();
    let truth = (1.0 + phi) / (1.0 - phi);
    for c in &chains {
        let est = iac(c, 0.0).unwrap();
        assert!((est.tau - truth).abs() < 0.1 * truth, "Sokal {} vs {truth}", est.tau);
    }
    let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
    let bm = batch_means_iac(&refs, 0.0, 20).unwrap();
    assert!(bm.lower <= truth && truth <= bm.upper, "batch means [{}, {}] vs {truth}", bm.lower, bm.upper);
}
