//! Involution-based Metropolis-Hastings building blocks and the
//! transition-matrix oracle used by the detailed-balance tests.

use std::fmt::Debug;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_nan, Error, Result};
use crate::num::normal_log_pdf;
use crate::rng::{indexed_map, McRng, StreamKey};

/// Which of the two proposal mechanisms generated a move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Coin {
    One,
    Two,
}

impl Coin {
    pub fn as_u8(self) -> u8 {
        match self {
            Coin::One => 1,
            Coin::Two => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhOutcome<P, Z> {
    pub theta: P,
    pub z: Z,
    pub accepted: bool,
    /// Log acceptance ratio the decision was based on.
    pub log_ratio_used: f64,
    pub coin: Option<Coin>,
    /// Set when a rejected move still replaced the latent state.
    pub refreshed: bool,
}

impl<P: Clone, Z: Clone> MhOutcome<P, Z> {
    pub fn rejected(theta: &P, z: &Z, log_ratio_used: f64, coin: Option<Coin>) -> Self {
        MhOutcome { theta: theta.clone(), z: z.clone(), accepted: false, log_ratio_used, coin, refreshed: false }
    }
}

/// Unnormalised joint log-density of (θ, z).
pub trait TargetModel<P, Z>: Sync {
    fn log_density(&self, theta: &P, z: &Z) -> f64;
}

pub trait ProposalKernel<P>: Sync {
    fn sample(&self, theta: &P, rng: &mut McRng) -> P;
    fn log_density(&self, from: &P, to: &P) -> f64;
}

/// Proposal with finite support, for exact transition matrices.
pub trait EnumerableProposal<P>: ProposalKernel<P> {
    fn support(&self, theta: &P) -> Vec<(P, f64)>;
}

/// Auxiliary-variable proposal and its involution.
///
/// `log_ratio` is the log acceptance ratio of the involution excluding the
/// parameter proposal q(θ, ϑ); kernels add `log q(ϑ,θ) − log q(θ,ϑ)`.
pub trait AuxiliaryScheme<P, Z>: Sync {
    type Aux: Clone + Debug + Send + Sync;

    fn sample_u(&self, theta: &P, vartheta: &P, z: &Z, rng: &mut McRng) -> Result<Self::Aux>;
    fn log_ratio(&self, theta: &P, vartheta: &P, z: &Z, u: &Self::Aux) -> f64;
    fn phi1(&self, theta: &P, vartheta: &P, z: &Z, u: &Self::Aux) -> Z;
    fn phi2(&self, theta: &P, vartheta: &P, z: &Z, u: &Self::Aux) -> Self::Aux;
}

/// Scheme whose auxiliary law has finite support.
pub trait EnumerableScheme<P, Z>: AuxiliaryScheme<P, Z> {
    fn aux_support(&self, theta: &P, vartheta: &P, z: &Z) -> Vec<(Self::Aux, f64)>;
}

/// Accept with probability min{1, exp(log_r)}.
pub fn accept_decision(log_r: f64, rng: &mut McRng) -> Result<bool> {
    check_nan(log_r, "acceptance ratio")?;
    if log_r >= 0.0 {
        return Ok(true);
    }
    if log_r == f64::NEG_INFINITY {
        return Ok(false);
    }
    Ok(rng.uniform().ln() < log_r)
}

/// Distance between two values of a state or auxiliary space.
pub trait Gap {
    fn gap(&self, other: &Self) -> f64;
}

impl Gap for f64 {
    fn gap(&self, other: &Self) -> f64 {
        if self == other {
            0.0
        } else {
            (self - other).abs()
        }
    }
}

impl Gap for usize {
    fn gap(&self, other: &Self) -> f64 {
        if self == other {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

impl Gap for u8 {
    fn gap(&self, other: &Self) -> f64 {
        if self == other {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

impl Gap for () {
    fn gap(&self, _: &Self) -> f64 {
        0.0
    }
}

impl<T: Gap> Gap for Vec<T> {
    fn gap(&self, other: &Self) -> f64 {
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        self.iter().zip(other).map(|(a, b)| a.gap(b)).fold(0.0, f64::max)
    }
}

impl<A: Gap, B: Gap> Gap for (A, B) {
    fn gap(&self, other: &Self) -> f64 {
        self.0.gap(&other.0).max(self.1.gap(&other.1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvolutionReport {
    pub samples: usize,
    /// Points where the ratio was finite at both ends.
    pub finite: usize,
    pub max_roundtrip: f64,
    /// max |log r(ξ) + log r(φ(ξ))| over finite points.
    pub max_skew: f64,
}

/// Apply the involution twice at random points and measure how far it is
/// from the identity, and how far the ratio is from satisfying r∘φ = 1/r.
pub fn involution_check<P, Z, S, D>(scheme: &S, samples: usize, mut draw_point: D, rng: &mut McRng) -> Result<InvolutionReport>
where
    P: Gap,
    Z: Gap,
    S: AuxiliaryScheme<P, Z>,
    S::Aux: Gap,
    D: FnMut(&mut McRng) -> (P, P, Z),
{
    let mut rep = InvolutionReport { samples, finite: 0, max_roundtrip: 0.0, max_skew: 0.0 };
    for _ in 0..samples {
        let (theta, vartheta, z) = draw_point(rng);
        let u = scheme.sample_u(&theta, &vartheta, &z, rng)?;
        let z1 = scheme.phi1(&theta, &vartheta, &z, &u);
        let u1 = scheme.phi2(&theta, &vartheta, &z, &u);
        let z2 = scheme.phi1(&vartheta, &theta, &z1, &u1);
        let u2 = scheme.phi2(&vartheta, &theta, &z1, &u1);
        rep.max_roundtrip = rep.max_roundtrip.max(z2.gap(&z)).max(u2.gap(&u));
        let fwd = check_nan(scheme.log_ratio(&theta, &vartheta, &z, &u), "involution check")?;
        let bwd = check_nan(scheme.log_ratio(&vartheta, &theta, &z1, &u1), "involution check")?;
        if fwd.is_finite() && bwd.is_finite() {
            rep.finite += 1;
            rep.max_skew = rep.max_skew.max((fwd + bwd).abs());
        }
    }
    Ok(rep)
}

/// Random walk on a sorted grid: step to a uniformly chosen neighbour,
/// forced inward at the two ends.
#[derive(Clone, Debug)]
pub struct GridWalk {
    pub points: Vec<f64>,
}

impl GridWalk {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("grid needs at least two increasing points".into()));
        }
        Ok(GridWalk { points })
    }

    fn position(&self, x: f64) -> Option<usize> {
        self.points.iter().position(|&p| p == x)
    }

    fn neighbours(&self, i: usize) -> Vec<usize> {
        let last = self.points.len() - 1;
        match i {
            0 => vec![1],
            _ if i == last => vec![last - 1],
            _ => vec![i - 1, i + 1],
        }
    }
}

impl ProposalKernel<f64> for GridWalk {
    fn sample(&self, theta: &f64, rng: &mut McRng) -> f64 {
        let i = self.position(*theta).expect("parameter off the proposal grid");
        let nb = self.neighbours(i);
        self.points[nb[rng.index(nb.len())]]
    }

    fn log_density(&self, from: &f64, to: &f64) -> f64 {
        match (self.position(*from), self.position(*to)) {
            (Some(i), Some(j)) => {
                let nb = self.neighbours(i);
                if nb.contains(&j) {
                    -(nb.len() as f64).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            _ => f64::NEG_INFINITY,
        }
    }
}

impl EnumerableProposal<f64> for GridWalk {
    fn support(&self, theta: &f64) -> Vec<(f64, f64)> {
        let i = self.position(*theta).expect("parameter off the proposal grid");
        let nb = self.neighbours(i);
        let p = 1.0 / nb.len() as f64;
        nb.into_iter().map(|j| (self.points[j], p)).collect()
    }
}

/// Gaussian random walk on the real line.
#[derive(Clone, Copy, Debug)]
pub struct GaussianWalk {
    pub sd: f64,
}

impl ProposalKernel<f64> for GaussianWalk {
    fn sample(&self, theta: &f64, rng: &mut McRng) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        theta + self.sd * e
    }

    fn log_density(&self, from: &f64, to: &f64) -> f64 {
        normal_log_pdf(*to, *from, self.sd * self.sd)
    }
}

/// log q(ϑ,θ) − log q(θ,ϑ).
pub fn log_proposal_ratio<P, Q: ProposalKernel<P>>(q: &Q, theta: &P, vartheta: &P) -> Result<f64> {
    let back = q.log_density(vartheta, theta);
    let fwd = q.log_density(theta, vartheta);
    check_nan(back - fwd, "proposal density")
}

/// Plain involutive MH with a single auxiliary draw (no coin).
pub fn mh_step<P, Z, Q, S>(theta: &P, z: &Z, q: &Q, scheme: &S, rng: &mut McRng) -> Result<MhOutcome<P, Z>>
where
    P: Clone,
    Z: Clone,
    Q: ProposalKernel<P>,
    S: AuxiliaryScheme<P, Z>,
{
    let vartheta = q.sample(theta, rng);
    let u = scheme.sample_u(theta, &vartheta, z, rng)?;
    let lr = check_nan(scheme.log_ratio(theta, &vartheta, z, &u), "scheme ratio")? + log_proposal_ratio(q, theta, &vartheta)?;
    let lr = check_nan(lr, "scheme ratio")?;
    if accept_decision(lr, rng)? {
        let z1 = scheme.phi1(theta, &vartheta, z, &u);
        Ok(MhOutcome { theta: vartheta, z: z1, accepted: true, log_ratio_used: lr, coin: None, refreshed: false })
    } else {
        Ok(MhOutcome::rejected(theta, z, lr, None))
    }
}

/// Exact transition row of [`mh_step`].
pub fn mh_exact_row<P, Z, Q, S>(theta: &P, z: &Z, q: &Q, scheme: &S) -> Result<Vec<((P, Z), f64)>>
where
    P: Clone + PartialEq,
    Z: Clone + PartialEq,
    Q: EnumerableProposal<P>,
    S: EnumerableScheme<P, Z>,
{
    let mut row = Vec::new();
    let mut stay = 0.0;
    for (vartheta, qp) in q.support(theta) {
        let lq = log_proposal_ratio(q, theta, &vartheta)?;
        for (u, up) in scheme.aux_support(theta, &vartheta, z) {
            let lr = check_nan(scheme.log_ratio(theta, &vartheta, z, &u) + lq, "scheme ratio")?;
            let acc = lr.min(0.0).exp();
            if acc > 0.0 {
                let z1 = scheme.phi1(theta, &vartheta, z, &u);
                add_mass(&mut row, (vartheta.clone(), z1), qp * up * acc);
            }
            stay += qp * up * (1.0 - acc);
        }
    }
    add_mass(&mut row, (theta.clone(), z.clone()), stay);
    Ok(row)
}

/// Accumulate probability mass on a destination, merging equal states.
pub fn add_mass<S: PartialEq>(row: &mut Vec<(S, f64)>, dest: S, mass: f64) {
    if mass == 0.0 {
        return;
    }
    if let Some(entry) = row.iter_mut().find(|(s, _)| *s == dest) {
        entry.1 += mass;
    } else {
        row.push((dest, mass));
    }
}

/// Row-stochastic matrix on an enumerated state list.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    pub n: usize,
    /// Row-major entries.
    pub p: Vec<f64>,
    /// Trials per row when estimated by simulation.
    pub trials: Option<usize>,
}

impl TransitionMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.n..(i + 1) * self.n]
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, trials: Option<usize>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Invalid("transition matrix must be square and non-empty".into()));
        }
        Ok(TransitionMatrix { n, p: rows.concat(), trials })
    }
}

pub type ExactRowFn<'a, S> = dyn Fn(&S) -> Result<Vec<(S, f64)>> + Sync + 'a;
pub type StepFn<'a, S> = dyn Fn(&S, &mut McRng) -> Result<S> + Sync + 'a;

/// How a transition matrix is obtained.
pub enum Oracle<'a, S> {
    /// Kernel exposes its exact transition probabilities.
    Exact(&'a ExactRowFn<'a, S>),
    /// Kernel is simulated `trials` times from every state.
    Sampled { step: &'a StepFn<'a, S>, trials: usize },
}

fn index_of<S: PartialEq + Debug>(states: &[S], s: &S) -> Result<usize> {
    states.iter().position(|x| x == s).ok_or_else(|| Error::Contract(format!("kernel left the enumerated state space: {s:?}")))
}

/// Build the transition matrix of a kernel on a finite state list. Monte
/// Carlo rows use the substream `key.child(row)`, so the result does not
/// depend on the number of worker threads.
pub fn build_transition_matrix<S>(states: &[S], oracle: Oracle<'_, S>, key: StreamKey) -> Result<TransitionMatrix>
where
    S: PartialEq + Debug + Sync,
{
    if states.is_empty() {
        return Err(Error::Invalid("empty state list".into()));
    }
    let n = states.len();
    let rows: Vec<Result<Vec<f64>>> = match oracle {
        Oracle::Exact(f) => indexed_map(n, true, |i| {
            let mut row = vec![0.0; n];
            for (s, p) in f(&states[i])? {
                row[index_of(states, &s)?] += p;
            }
            Ok(row)
        }),
        Oracle::Sampled { step, trials } => indexed_map(n, true, |i| {
            let mut rng = key.child(i as u64).rng();
            let mut counts = vec![0usize; n];
            for _ in 0..trials {
                let next = step(&states[i], &mut rng)?;
                counts[index_of(states, &next)?] += 1;
            }
            Ok(counts.into_iter().map(|c| c as f64 / trials as f64).collect())
        }),
    };
    let trials = match oracle {
        Oracle::Exact(_) => None,
        Oracle::Sampled { trials, .. } => Some(trials),
    };
    TransitionMatrix::from_rows(rows.into_iter().collect::<Result<Vec<_>>>()?, trials)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Swap;

    impl AuxiliaryScheme<f64, f64> for Swap {
        type Aux = f64;
        fn sample_u(&self, _: &f64, _: &f64, _: &f64, rng: &mut McRng) -> Result<f64> {
            Ok(rng.uniform())
        }
        fn log_ratio(&self, _: &f64, _: &f64, _: &f64, _: &f64) -> f64 {
            0.0
        }
        fn phi1(&self, _: &f64, _: &f64, _: &f64, u: &f64) -> f64 {
            *u
        }
        fn phi2(&self, _: &f64, _: &f64, z: &f64, _: &f64) -> f64 {
            *z
        }
    }

    #[test]
    fn accept_decision_edges() {
        let mut rng = McRng::seeded(1);
        assert!(accept_decision(0.0, &mut rng).unwrap());
        assert!(accept_decision(5.0, &mut rng).unwrap());
        assert!(!accept_decision(f64::NEG_INFINITY, &mut rng).unwrap());
        assert_eq!(accept_decision(f64::NAN, &mut rng), Err(Error::Nan("acceptance ratio")));
    }

    #[test]
    fn accept_decision_half() {
        let mut rng = McRng::seeded(2);
        let n = 100_000;
        let hits = (0..n).filter(|_| accept_decision(0.5f64.ln(), &mut rng).unwrap()).count();
        let se = (0.25 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn swap_roundtrip() {
        let mut rng = McRng::seeded(3);
        let rep = involution_check(&Swap, 1000, |r: &mut McRng| (0.0, 1.0, r.uniform()), &mut rng).unwrap();
        assert_eq!(rep.max_roundtrip, 0.0);
        assert_eq!(rep.max_skew, 0.0);
    }

    #[test]
    fn cycle_kernel_is_permutation() {
        let states = vec![0usize, 1, 2];
        let step = |s: &usize, _: &mut McRng| Ok((s + 1) % 3);
        let m = build_transition_matrix(&states, Oracle::Sampled { step: &step, trials: 10 }, StreamKey::new(0)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), if j == (i + 1) % 3 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn empty_states_error() {
        let step = |s: &usize, _: &mut McRng| Ok(*s);
        let r = build_transition_matrix::<usize>(&[], Oracle::Sampled { step: &step, trials: 1 }, StreamKey::new(0));
        assert!(r.is_err());
    }

    #[test]
    fn grid_walk_reflects() {
        let g = GridWalk::new(vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(g.support(&-1.0), vec![(0.0, 1.0)]);
        assert_eq!(g.log_density(&0.0, &1.0), -(2f64).ln());
        assert_eq!(g.log_density(&-1.0, &1.0), f64::NEG_INFINITY);
    }
}
