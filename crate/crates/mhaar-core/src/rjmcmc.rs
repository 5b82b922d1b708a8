//! Trans-dimensional averaged moves for a Poisson process with piecewise
//! constant intensity: birth and death of changepoints, averaged over N
//! dimension-matching draws.

use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{check_nan, Error, Result};
use crate::mh::{accept_decision, AuxiliaryScheme, EnumerableProposal, EnumerableScheme, Gap, MhOutcome, ProposalKernel};
use crate::mhaar::{mhaar_step, CoinWeight, MhaarConfig};
use crate::num::{gamma_log_pdf, ln_choose, ln_factorial, poisson_log_pmf};
use crate::rng::McRng;

/// Changepoints `s[0] = 0 < s[1] < … < s[m] = L` and heights `h[0..m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransState {
    pub s: Vec<f64>,
    pub h: Vec<f64>,
}

impl TransState {
    pub fn new(s: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        let st = TransState { s, h };
        st.validate()?;
        Ok(st)
    }

    pub fn single(length: f64, height: f64) -> Result<Self> {
        Self::new(vec![0.0, length], vec![height])
    }

    /// Number of segments.
    pub fn m(&self) -> usize {
        self.h.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.h.len();
        if m == 0 || self.s.len() != m + 1 {
            return Err(Error::Invalid("need m ≥ 1 heights and m + 1 boundaries".into()));
        }
        if self.s[0] != 0.0 || self.s.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid("changepoints must start at 0 and increase strictly".into()));
        }
        if self.h.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::Invalid("heights must be positive".into()));
        }
        Ok(())
    }
}

impl Gap for TransState {
    fn gap(&self, other: &Self) -> f64 {
        self.s.gap(&other.s).max(self.h.gap(&other.h))
    }
}

/// Log-likelihood Σ_j [n_j ln h_j − h_j (s_j − s_{j−1})], where n_j counts
/// events in [s_{j−1}, s_j). The last segment also includes t = L.
pub fn changepoint_loglik(state: &TransState, events: &[f64]) -> Result<f64> {
    state.validate()?;
    let m = state.m();
    let mut ll = 0.0;
    for j in 0..m {
        let lo = events.partition_point(|&t| t < state.s[j]);
        let hi =
            if j + 1 == m { events.partition_point(|&t| t <= state.s[j + 1]) } else { events.partition_point(|&t| t < state.s[j + 1]) };
        let count = (hi - lo) as f64;
        let h = state.h[j];
        ll += count * h.ln() - h * (state.s[j + 1] - state.s[j]);
    }
    Ok(ll)
}

/// Prior law of changepoint positions.
#[derive(Clone, Debug, PartialEq)]
pub enum PositionLaw {
    /// Even-numbered order statistics of 2m − 1 uniforms on [0, L]; births uniform on [0, L].
    Continuous,
    /// Positions restricted to L·i/cells, i = 1..cells−1; uniform over subsets.
    Grid { cells: usize },
}

/// Prior law of segment heights.
#[derive(Clone, Debug, PartialEq)]
pub enum HeightLaw {
    Gamma {
        shape: f64,
        rate: f64,
    },
    /// Finite set of (height, probability).
    Atoms(Vec<(f64, f64)>),
}

impl HeightLaw {
    pub fn log_density(&self, h: f64) -> f64 {
        match self {
            HeightLaw::Gamma { shape, rate } => gamma_log_pdf(h, *shape, *rate),
            HeightLaw::Atoms(a) => a.iter().find(|(v, _)| *v == h).map_or(f64::NEG_INFINITY, |(_, p)| p.ln()),
        }
    }

    pub fn sample(&self, rng: &mut McRng) -> f64 {
        match self {
            HeightLaw::Gamma { shape, rate } => Gamma::new(*shape, 1.0 / rate).expect("validated gamma law").sample(rng),
            HeightLaw::Atoms(a) => {
                let u = rng.uniform();
                let mut acc = 0.0;
                for (v, p) in a {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                a.last().expect("validated atoms").0
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChangepointPrior {
    /// Poisson mean for the number of segments.
    pub lambda: f64,
    pub m_max: usize,
    pub positions: PositionLaw,
    pub heights: HeightLaw,
}

impl Default for ChangepointPrior {
    fn default() -> Self {
        ChangepointPrior { lambda: 3.0, m_max: 20, positions: PositionLaw::Continuous, heights: HeightLaw::Gamma { shape: 1.0, rate: 1.0 } }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChangepointModel {
    pub length: f64,
    pub events: Vec<f64>,
    pub prior: ChangepointPrior,
}

impl ChangepointModel {
    pub fn new(length: f64, mut events: Vec<f64>, prior: ChangepointPrior) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Invalid("observation window must be positive".into()));
        }
        if events.iter().any(|&t| !(0.0..=length).contains(&t)) {
            return Err(Error::Invalid("events must lie in [0, L]".into()));
        }
        if !(prior.lambda > 0.0) || prior.m_max < 2 {
            return Err(Error::Invalid("need λ > 0 and m_max ≥ 2".into()));
        }
        match &prior.positions {
            PositionLaw::Grid { cells } if *cells < 2 || *cells < prior.m_max => {
                return Err(Error::Invalid("grid needs at least m_max cells".into()))
            }
            _ => {}
        }
        match &prior.heights {
            HeightLaw::Gamma { shape, rate } if !(*shape > 0.0 && *rate > 0.0) => {
                return Err(Error::Invalid("gamma height law needs positive shape and rate".into()))
            }
            HeightLaw::Atoms(a)
                if a.is_empty()
                    || a.iter().any(|(v, p)| !(*v > 0.0 && *p > 0.0))
                    || (a.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() > 1e-12 =>
            {
                return Err(Error::Invalid("height atoms need positive values and probabilities summing to 1".into()))
            }
            _ => {}
        }
        events.sort_by(f64::total_cmp);
        Ok(ChangepointModel { length, events, prior })
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.prior.positions, PositionLaw::Grid { .. }) && matches!(self.prior.heights, HeightLaw::Atoms(_))
    }

    fn grid_index(&self, s: f64, cells: usize) -> Option<usize> {
        let i = (s * cells as f64 / self.length).round() as usize;
        (i >= 1 && i < cells && self.grid_point(i, cells) == s).then_some(i)
    }

    fn grid_point(&self, i: usize, cells: usize) -> f64 {
        self.length * i as f64 / cells as f64
    }

    pub fn log_prior(&self, st: &TransState) -> f64 {
        let m = st.m();
        if m < 1 || m > self.prior.m_max || *st.s.last().unwrap() != self.length {
            return f64::NEG_INFINITY;
        }
        let mut lp = poisson_log_pmf(m as u64, self.prior.lambda);
        match &self.prior.positions {
            PositionLaw::Continuous => {
                let k = 2 * m as u64 - 1;
                lp += ln_factorial(k) - k as f64 * self.length.ln();
                lp += st.s.windows(2).map(|w| (w[1] - w[0]).ln()).sum::<f64>();
            }
            PositionLaw::Grid { cells } => {
                if st.s[1..m].iter().any(|&s| self.grid_index(s, *cells).is_none()) {
                    return f64::NEG_INFINITY;
                }
                lp -= ln_choose(*cells as u64 - 1, m as u64 - 1);
            }
        }
        lp + st.h.iter().map(|&h| self.prior.heights.log_density(h)).sum::<f64>()
    }

    pub fn log_posterior(&self, st: &TransState) -> Result<f64> {
        let lp = self.log_prior(st);
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        check_nan(lp + changepoint_loglik(st, &self.events)?, "change-point posterior")
    }

    /// Sample a birth position from the position law.
    fn sample_position(&self, rng: &mut McRng) -> f64 {
        match &self.prior.positions {
            PositionLaw::Continuous => rng.uniform() * self.length,
            PositionLaw::Grid { cells } => self.grid_point(1 + rng.index(cells - 1), *cells),
        }
    }

    fn log_position_density(&self, s: f64) -> f64 {
        match &self.prior.positions {
            PositionLaw::Continuous => {
                if (0.0..=self.length).contains(&s) {
                    -self.length.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            PositionLaw::Grid { cells } => match self.grid_index(s, *cells) {
                Some(_) => -((cells - 1) as f64).ln(),
                None => f64::NEG_INFINITY,
            },
        }
    }
}

/// Dimension-matching variable: a new (position, height) pair for a birth,
/// or the index of the interior changepoint removed by a death.
#[derive(Clone, Debug, PartialEq)]
pub enum BirthDeath {
    Birth { s: f64, h: f64 },
    Death { index: usize },
}

impl Gap for BirthDeath {
    fn gap(&self, other: &Self) -> f64 {
        match (self, other) {
            (BirthDeath::Birth { s, h }, BirthDeath::Birth { s: s2, h: h2 }) => s.gap(s2).max(h.gap(h2)),
            (BirthDeath::Death { index }, BirthDeath::Death { index: i2 }) => index.gap(i2),
            _ => f64::INFINITY,
        }
    }
}

/// Birth inserts s* into segment j, which keeps h_j on its left part and
/// takes h* on its right part. Death of interior changepoint j removes s_j
/// and h_{j+1}. The two maps are mutual inverses with unit Jacobian.
#[derive(Clone, Copy, Debug)]
pub struct BirthDeathScheme<'a> {
    pub model: &'a ChangepointModel,
}

impl<'a> BirthDeathScheme<'a> {
    pub fn new(model: &'a ChangepointModel) -> Self {
        BirthDeathScheme { model }
    }

    /// Draw the dimension-matching variable for a move from m to m′.
    pub fn sample_move(&self, m: usize, m_new: usize, z: &TransState, rng: &mut McRng) -> Result<BirthDeath> {
        if m_new == m + 1 {
            let s = self.model.sample_position(rng);
            let h = self.model.prior.heights.sample(rng);
            Ok(BirthDeath::Birth { s, h })
        } else if m_new + 1 == m {
            if z.m() < 2 {
                return Err(Error::Contract("death needs an interior changepoint".into()));
            }
            Ok(BirthDeath::Death { index: 1 + rng.index(z.m() - 1) })
        } else {
            Err(Error::Invalid(format!("birth-death moves only change m by one ({m} -> {m_new})")))
        }
    }

    /// log density of the dimension-matching variable.
    pub fn log_density(&self, z: &TransState, u: &BirthDeath) -> f64 {
        match u {
            BirthDeath::Birth { s, h } => self.model.log_position_density(*s) + self.model.prior.heights.log_density(*h),
            BirthDeath::Death { index } => {
                if *index >= 1 && *index < z.m() {
                    -((z.m() - 1) as f64).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Apply the move; returns the new state, the reverse variable and the
    /// log-Jacobian. `None` if a birth collides with an existing boundary.
    pub fn map(&self, z: &TransState, u: &BirthDeath) -> Option<(TransState, BirthDeath, f64)> {
        match u {
            BirthDeath::Birth { s, h } => {
                let j = z.s.partition_point(|&x| x < *s);
                if j == 0 || j >= z.s.len() || z.s[j] == *s {
                    return None;
                }
                let mut s_new = z.s.clone();
                s_new.insert(j, *s);
                let mut h_new = z.h.clone();
                h_new.insert(j, *h);
                Some((TransState { s: s_new, h: h_new }, BirthDeath::Death { index: j }, 0.0))
            }
            BirthDeath::Death { index } => {
                let j = *index;
                if j == 0 || j >= z.m() {
                    return None;
                }
                let mut s_new = z.s.clone();
                let s = s_new.remove(j);
                let mut h_new = z.h.clone();
                let h = h_new.remove(j);
                Some((TransState { s: s_new, h: h_new }, BirthDeath::Birth { s, h }, 0.0))
            }
        }
    }

    fn birth_log_ratio(&self, z: &TransState, u: &BirthDeath) -> Result<f64> {
        let Some((z_new, back, log_jac)) = self.map(z, u) else {
            return Ok(f64::NEG_INFINITY);
        };
        let fwd_density = self.log_density(z, u);
        if fwd_density == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let num = self.model.log_posterior(&z_new)?;
        if num == f64::NEG_INFINITY {
            return Ok(num);
        }
        let den = self.model.log_posterior(z)?;
        Ok(num - den + self.log_density(&z_new, &back) - fwd_density + log_jac)
    }

    fn log_ratio_checked(&self, m: usize, m_new: usize, z: &TransState, u: &BirthDeath) -> Result<f64> {
        match u {
            BirthDeath::Birth { .. } if m_new == m + 1 => self.birth_log_ratio(z, u),
            BirthDeath::Death { .. } if m_new + 1 == m => match self.map(z, u) {
                Some((z_new, back, _)) => Ok(-self.birth_log_ratio(&z_new, &back)?),
                None => Ok(f64::NEG_INFINITY),
            },
            _ => Ok(f64::NEG_INFINITY),
        }
    }
}

impl AuxiliaryScheme<usize, TransState> for BirthDeathScheme<'_> {
    type Aux = BirthDeath;

    fn sample_u(&self, theta: &usize, vartheta: &usize, z: &TransState, rng: &mut McRng) -> Result<BirthDeath> {
        self.sample_move(*theta, *vartheta, z, rng)
    }

    fn log_ratio(&self, theta: &usize, vartheta: &usize, z: &TransState, u: &BirthDeath) -> f64 {
        self.log_ratio_checked(*theta, *vartheta, z, u).unwrap_or(f64::NAN)
    }

    fn phi1(&self, _: &usize, _: &usize, z: &TransState, u: &BirthDeath) -> TransState {
        self.map(z, u).map_or_else(|| z.clone(), |r| r.0)
    }

    fn phi2(&self, _: &usize, _: &usize, z: &TransState, u: &BirthDeath) -> BirthDeath {
        self.map(z, u).map_or_else(|| u.clone(), |r| r.1)
    }
}

impl EnumerableScheme<usize, TransState> for BirthDeathScheme<'_> {
    fn aux_support(&self, theta: &usize, vartheta: &usize, z: &TransState) -> Vec<(BirthDeath, f64)> {
        assert!(self.model.is_discrete(), "enumeration needs grid positions and atomic heights");
        let (PositionLaw::Grid { cells }, HeightLaw::Atoms(atoms)) = (&self.model.prior.positions, &self.model.prior.heights) else {
            unreachable!()
        };
        if *vartheta == theta + 1 {
            let ps = 1.0 / (cells - 1) as f64;
            (1..*cells)
                .flat_map(|i| {
                    let s = self.model.grid_point(i, *cells);
                    atoms.iter().map(move |&(h, p)| (BirthDeath::Birth { s, h }, ps * p))
                })
                .collect()
        } else if *vartheta + 1 == *theta && z.m() >= 2 {
            let p = 1.0 / (z.m() - 1) as f64;
            (1..z.m()).map(|index| (BirthDeath::Death { index }, p)).collect()
        } else {
            Vec::new()
        }
    }
}

/// Proposal on the number of segments: ±1 with equal probability,
/// reflected at 1 and m_max.
#[derive(Clone, Copy, Debug)]
pub struct ModelIndexWalk {
    pub m_max: usize,
}

impl ModelIndexWalk {
    fn options(&self, m: usize) -> Vec<usize> {
        if m <= 1 {
            vec![2]
        } else if m >= self.m_max {
            vec![self.m_max - 1]
        } else {
            vec![m - 1, m + 1]
        }
    }
}

impl ProposalKernel<usize> for ModelIndexWalk {
    fn sample(&self, theta: &usize, rng: &mut McRng) -> usize {
        let o = self.options(*theta);
        o[rng.index(o.len())]
    }

    fn log_density(&self, from: &usize, to: &usize) -> f64 {
        let o = self.options(*from);
        if o.contains(to) {
            -(o.len() as f64).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

impl EnumerableProposal<usize> for ModelIndexWalk {
    fn support(&self, theta: &usize) -> Vec<(usize, f64)> {
        let o = self.options(*theta);
        let p = 1.0 / o.len() as f64;
        o.into_iter().map(|m| (m, p)).collect()
    }
}

/// Coin weights for birth-death moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BirthDeathCoin {
    /// ω ≡ 1/2.
    Even,
    /// Births always average over N draws (coin 1), deaths always use coin 2.
    BirthAverages,
}

impl CoinWeight<usize, TransState> for BirthDeathCoin {
    fn first(&self, theta: &usize, vartheta: &usize, _: &TransState) -> f64 {
        match self {
            BirthDeathCoin::Even => 0.5,
            BirthDeathCoin::BirthAverages => {
                if vartheta > theta {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One averaged trans-dimensional move.
pub fn rmj_step(
    state: &TransState,
    model: &ChangepointModel,
    n: usize,
    coin: BirthDeathCoin,
    parallel: bool,
    rng: &mut McRng,
) -> Result<MhOutcome<usize, TransState>> {
    let cfg = MhaarConfig { n_replicates: n, coin_weight: coin, eager_k: false, parallel };
    let q = ModelIndexWalk { m_max: model.prior.m_max };
    mhaar_step(&state.m(), state, &q, &BirthDeathScheme::new(model), &cfg, rng)
}

/// Step sizes of the fixed-dimension updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WithinModelMoves {
    /// Random-walk scale on log heights.
    pub log_height_sd: f64,
    /// Random-walk scale on interior changepoints (continuous positions).
    pub position_sd: f64,
}

impl Default for WithinModelMoves {
    fn default() -> Self {
        WithinModelMoves { log_height_sd: 0.3, position_sd: 2.0 }
    }
}

fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    loop {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            return x;
        }
        if !x.is_finite() || w <= 0.0 {
            return lo;
        }
    }
}

/// Sweep of random-walk MH updates over every height and every interior
/// changepoint, in order. Returns the new state and the number of accepted updates.
pub fn within_model_sweep(
    state: &TransState,
    model: &ChangepointModel,
    moves: &WithinModelMoves,
    rng: &mut McRng,
) -> Result<(TransState, usize)> {
    let mut cur = state.clone();
    let mut cur_lp = model.log_posterior(&cur)?;
    let mut accepted = 0;
    for j in 0..cur.m() {
        let mut prop = cur.clone();
        let log_jac = match &model.prior.heights {
            HeightLaw::Gamma { .. } => {
                let e: f64 = StandardNormal.sample(rng);
                prop.h[j] = cur.h[j] * (moves.log_height_sd * e).exp();
                (prop.h[j] / cur.h[j]).ln()
            }
            HeightLaw::Atoms(a) => {
                if a.len() < 2 {
                    continue;
                }
                let others: Vec<f64> = a.iter().map(|x| x.0).filter(|&v| v != cur.h[j]).collect();
                prop.h[j] = others[rng.index(others.len())];
                0.0
            }
        };
        let lp = model.log_posterior(&prop)?;
        if accept_decision(check_nan(lp - cur_lp + log_jac, "height update")?, rng)? {
            cur = prop;
            cur_lp = lp;
            accepted += 1;
        }
    }
    for j in 1..cur.m() {
        let mut prop = cur.clone();
        match &model.prior.positions {
            PositionLaw::Continuous => {
                let e: f64 = StandardNormal.sample(rng);
                prop.s[j] = reflect(cur.s[j] + moves.position_sd * e, cur.s[j - 1], cur.s[j + 1]);
                if !(prop.s[j] > cur.s[j - 1] && prop.s[j] < cur.s[j + 1]) {
                    continue;
                }
            }
            PositionLaw::Grid { cells } => {
                let i = model.grid_index(cur.s[j], *cells).expect("state on grid");
                let step = if rng.uniform() < 0.5 { i.wrapping_sub(1) } else { i + 1 };
                if step == 0 || step >= *cells {
                    continue;
                }
                prop.s[j] = model.grid_point(step, *cells);
                if !(prop.s[j] > cur.s[j - 1] && prop.s[j] < cur.s[j + 1]) {
                    continue;
                }
            }
        }
        let lp = model.log_posterior(&prop)?;
        if accept_decision(check_nan(lp - cur_lp, "position update")?, rng)? {
            cur = prop;
            cur_lp = lp;
            accepted += 1;
        }
    }
    Ok((cur, accepted))
}

/// Events of a Poisson process with piecewise-constant intensity.
pub fn simulate_events(boundaries: &[f64], heights: &[f64], rng: &mut McRng) -> Result<Vec<f64>> {
    let st = TransState::new(boundaries.to_vec(), heights.to_vec())?;
    let mut events = Vec::new();
    for j in 0..st.m() {
        let (lo, hi) = (st.s[j], st.s[j + 1]);
        let mean = st.h[j] * (hi - lo);
        let n = Poisson::new(mean).map_err(|e| Error::Invalid(e.to_string()))?.sample(rng) as usize;
        for _ in 0..n {
            events.push(lo + rng.uniform() * (hi - lo));
        }
    }
    events.sort_by(f64::total_cmp);
    Ok(events)
}
