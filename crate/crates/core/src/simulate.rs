//! Exact simulation of the two-type chain with binomial mass-killings.
//!
//! Between killings the population evolves as a continuous-time Markov chain
//! (direct-method Gillespie): with `n` susceptible and `r` persistent
//! bacteria the next event comes after an exponential time of total rate
//! `(lambda + a + d_n) n + (b + d_r) r` and is chosen proportionally to its
//! rate. At each killing time every susceptible bacterium dies independently
//! with probability `p`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::EnvFamily;
use crate::error::{Error, Result};
use crate::model::{ModelParams, PopulationState};
use crate::rng::{stream, StreamRng};

/// Default escape population.
pub const DEFAULT_ESCAPE: u64 = 10_000;
/// Default number of survived kill epochs that counts as survival.
pub const DEFAULT_MAX_EPOCHS: u64 = 200;

/// When the antibiotic is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub enum KillSchedule {
    /// Killings at `period, 2 period, ...`.
    Periodic { period: f64 },
    /// Gaps drawn i.i.d. from `family`. The realization is fixed by `seed`
    /// and shared by every trial, so Monte Carlo estimates are conditional on
    /// one environment.
    RandomEnv { family: EnvFamily, seed: u64 },
    /// A finite, strictly increasing list of positive times.
    Explicit { times: Vec<f64> },
}

impl KillSchedule {
    pub fn periodic(period: f64) -> Result<Self> {
        KillSchedule::Periodic { period }.checked()
    }

    pub fn random(family: EnvFamily, seed: u64) -> Self {
        KillSchedule::RandomEnv { family, seed }
    }

    pub fn explicit(times: Vec<f64>) -> Result<Self> {
        KillSchedule::Explicit { times }.checked()
    }

    /// No killings at all.
    pub fn none() -> Self {
        KillSchedule::Explicit { times: Vec::new() }
    }

    fn checked(self) -> Result<Self> {
        match &self {
            KillSchedule::Periodic { period } => {
                if !(period.is_finite() && *period > 0.0) {
                    return Err(Error::invalid("period", format!("{period} must be finite and positive")));
                }
            }
            KillSchedule::Explicit { times } => {
                if times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                    return Err(Error::invalid("times", "kill times must be finite and positive"));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("times", "kill times must be strictly increasing"));
                }
            }
            KillSchedule::RandomEnv { .. } => {}
        }
        Ok(self)
    }

    /// Smallest gap between consecutive killings, if bounded away from 0.
    pub fn min_gap(&self) -> Option<f64> {
        match self {
            KillSchedule::Periodic { period } => Some(*period),
            KillSchedule::RandomEnv { family, .. } => family.min_time(),
            KillSchedule::Explicit { times } => std::iter::once(0.0)
                .chain(times.iter().copied())
                .collect::<Vec<_>>()
                .windows(2)
                .map(|w| w[1] - w[0])
                .reduce(f64::min)
                .or(Some(f64::INFINITY)),
        }
    }

    fn times(&self) -> KillTimes<'_> {
        match self {
            KillSchedule::Periodic { period } => KillTimes::Periodic { period: *period, k: 0 },
            KillSchedule::RandomEnv { family, seed } => KillTimes::Random {
                family,
                rng: stream(*seed, u64::MAX),
                at: 0.0,
            },
            KillSchedule::Explicit { times } => KillTimes::Explicit { times, i: 0 },
        }
    }
}

/// Configuration-file form of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleSpec {
    Periodic { period: f64 },
    Random { family: EnvFamily, seed: u64 },
    Explicit { times: Vec<f64> },
}

impl TryFrom<ScheduleSpec> for KillSchedule {
    type Error = Error;

    fn try_from(s: ScheduleSpec) -> Result<Self> {
        match s {
            ScheduleSpec::Periodic { period } => KillSchedule::periodic(period),
            ScheduleSpec::Random { family, seed } => Ok(KillSchedule::random(family, seed)),
            ScheduleSpec::Explicit { times } => KillSchedule::explicit(times),
        }
    }
}

impl From<KillSchedule> for ScheduleSpec {
    fn from(s: KillSchedule) -> Self {
        match s {
            KillSchedule::Periodic { period } => ScheduleSpec::Periodic { period },
            KillSchedule::RandomEnv { family, seed } => ScheduleSpec::Random { family, seed },
            KillSchedule::Explicit { times } => ScheduleSpec::Explicit { times },
        }
    }
}

enum KillTimes<'a> {
    Periodic { period: f64, k: u64 },
    Random { family: &'a EnvFamily, rng: StreamRng, at: f64 },
    Explicit { times: &'a [f64], i: usize },
}

impl KillTimes<'_> {
    /// Next killing time, or infinity when there is none.
    fn next(&mut self) -> f64 {
        match self {
            KillTimes::Periodic { period, k } => {
                *k += 1;
                *k as f64 * *period
            }
            KillTimes::Random { family, rng, at } => {
                *at += family.sample(rng);
                *at
            }
            KillTimes::Explicit { times, i } => {
                let t = times.get(*i).copied().unwrap_or(f64::INFINITY);
                *i += 1;
                t
            }
        }
    }
}

/// What happened at one row of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Start,
    Birth,
    /// Susceptible becomes persistent.
    Dormancy,
    DeathSusceptible,
    /// Persistent becomes susceptible.
    Awakening,
    DeathPersistent,
    Kill,
    /// No transition has positive rate; the clock jumps to infinity.
    Stall,
}

impl Event {
    pub fn tag(self) -> &'static str {
        match self {
            Event::Start => "start",
            Event::Birth => "birth",
            Event::Dormancy => "dormancy",
            Event::DeathSusceptible => "death_susceptible",
            Event::Awakening => "awakening",
            Event::DeathPersistent => "death_persistent",
            Event::Kill => "kill",
            Event::Stall => "stall",
        }
    }
}

/// Waiting time and next event, or `None` when every rate is zero.
fn next_event<R: Rng + ?Sized>(params: &ModelParams, n: u64, r: u64, rng: &mut R) -> Option<(f64, Event)> {
    let (nf, rf) = (n as f64, r as f64);
    let rates = [
        (params.lambda() * nf, Event::Birth),
        (params.a() * nf, Event::Dormancy),
        (params.d_n() * nf, Event::DeathSusceptible),
        (params.b() * rf, Event::Awakening),
        (params.d_r() * rf, Event::DeathPersistent),
    ];
    let total: f64 = rates.iter().map(|x| x.0).sum();
    if total <= 0.0 {
        return None;
    }
    let wait: f64 = rng.sample::<f64, _>(Exp1) / total;
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = None;
    for &(rate, ev) in &rates {
        if rate > 0.0 {
            acc += rate;
            chosen = Some(ev);
            if u < acc {
                break;
            }
        }
    }
    chosen.map(|ev| (wait, ev))
}

fn apply_event(state: &mut PopulationState, ev: Event) {
    match ev {
        Event::Birth => state.n += 1,
        Event::Dormancy => {
            state.n -= 1;
            state.r += 1;
        }
        Event::DeathSusceptible => state.n -= 1,
        Event::Awakening => {
            state.r -= 1;
            state.n += 1;
        }
        Event::DeathPersistent => state.r -= 1,
        Event::Start | Event::Kill | Event::Stall => {}
    }
}

/// One CTMC transition.
pub fn step<R: Rng + ?Sized>(
    params: &ModelParams,
    state: PopulationState,
    rng: &mut R,
) -> Result<(PopulationState, Event)> {
    if state.is_extinct() {
        return Err(Error::AbsorbedState);
    }
    let mut next = state;
    match next_event(params, state.n, state.r, rng) {
        Some((wait, ev)) => {
            next.t += wait;
            apply_event(&mut next, ev);
            Ok((next, ev))
        }
        None => {
            next.t = f64::INFINITY;
            Ok((next, Event::Stall))
        }
    }
}

/// Binomial thinning of the susceptible population.
pub fn apply_kill<R: Rng + ?Sized>(state: PopulationState, p: f64, rng: &mut R) -> PopulationState {
    let n = if p <= 0.0 || state.n == 0 {
        state.n
    } else if p >= 1.0 {
        0
    } else {
        Binomial::new(state.n, 1.0 - p)
            .expect("survival probability lies in (0, 1)")
            .sample(rng)
    };
    PopulationState { n, ..state }
}

/// When a trajectory stops. Missing keys in a config file take the
/// defaults (`max_epochs` 200, `escape` 10000, no horizon).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRule {
    /// Surviving this many killings counts as survival.
    pub max_epochs: Option<u64>,
    /// Reaching this total population counts as survival.
    pub escape: Option<u64>,
    pub horizon: Option<f64>,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_epochs: Some(DEFAULT_MAX_EPOCHS),
            escape: Some(DEFAULT_ESCAPE),
            horizon: None,
        }
    }
}

impl StopRule {
    fn check(&self) -> Result<()> {
        if self.max_epochs.is_none() && self.escape.is_none() && self.horizon.is_none() {
            return Err(Error::invalid("stop", "set at least one of max_epochs, escape, horizon"));
        }
        if let Some(h) = self.horizon {
            if !(h >= 0.0) {
                return Err(Error::invalid("horizon", "must be nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EscapeReason {
    Population,
    Epochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Ending {
    Extinct { at: f64 },
    Escaped { reason: EscapeReason },
    HorizonReached,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub n: u64,
    pub r: u64,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub ending: Ending,
    pub state: PopulationState,
    pub kills: u64,
    pub events: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<TrajectoryRow>>,
}

/// Simulate one trajectory until extinction, escape or the horizon.
///
/// A killing at `S` is applied after every chain event strictly before `S`;
/// an event landing exactly on `S` goes first.
pub fn run<R: Rng + ?Sized>(
    params: &ModelParams,
    schedule: &KillSchedule,
    init: PopulationState,
    stop: &StopRule,
    record: bool,
    rng: &mut R,
) -> Result<TrajectoryOutcome> {
    stop.check()?;
    let schedule_checked;
    let schedule = match schedule {
        KillSchedule::RandomEnv { .. } => schedule,
        other => {
            schedule_checked = other.clone().checked()?;
            &schedule_checked
        }
    };
    let horizon = stop.horizon.unwrap_or(f64::INFINITY);
    let mut times = schedule.times();
    let mut next_kill = times.next();
    let mut state = init;
    let mut kills = 0;
    let mut events = 0;
    let mut trajectory = record.then(|| {
        vec![TrajectoryRow {
            t: state.t,
            n: state.n,
            r: state.r,
            event: Event::Start,
        }]
    });
    let mut log = |s: &PopulationState, event: Event| {
        if let Some(rows) = trajectory.as_mut() {
            rows.push(TrajectoryRow { t: s.t, n: s.n, r: s.r, event });
        }
    };

    let ending = loop {
        if state.is_extinct() {
            break Ending::Extinct { at: state.t };
        }
        if stop.escape.is_some_and(|m| state.total() >= m) {
            break Ending::Escaped {
                reason: EscapeReason::Population,
            };
        }
        if stop.max_epochs.is_some_and(|k| kills >= k) {
            break Ending::Escaped {
                reason: EscapeReason::Epochs,
            };
        }
        let next = next_event(params, state.n, state.r, rng);
        let t_event = next.map_or(f64::INFINITY, |(w, _)| state.t + w);
        if t_event <= next_kill && t_event <= horizon {
            state.t = t_event;
            let ev = next.expect("finite event time").1;
            apply_event(&mut state, ev);
            events += 1;
            log(&state, ev);
        } else if next_kill <= horizon {
            state.t = next_kill;
            state = apply_kill(state, params.p(), rng);
            kills += 1;
            log(&state, Event::Kill);
            next_kill = times.next();
        } else {
            if horizon.is_finite() {
                state.t = horizon;
            }
            break Ending::HorizonReached;
        }
    };
    Ok(TrajectoryOutcome {
        ending,
        state,
        kills,
        events,
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    /// Fraction of trials that escaped.
    pub p_hat: f64,
    /// Normal-approximation 95% half-width.
    pub ci_halfwidth: f64,
    pub trials: u64,
    pub survived: u64,
    pub extinct: u64,
    /// Trials stopped by the horizon; counted as extinct in `p_hat`.
    pub censored: u64,
    pub escaped_population: u64,
    pub escaped_epochs: u64,
    pub judged_by: StopRule,
}

#[derive(Default)]
struct Tally {
    extinct: u64,
    censored: u64,
    escaped_population: u64,
    escaped_epochs: u64,
}

impl Tally {
    fn of(ending: Ending) -> Self {
        let mut t = Tally::default();
        match ending {
            Ending::Extinct { .. } => t.extinct = 1,
            Ending::HorizonReached => t.censored = 1,
            Ending::Escaped { reason: EscapeReason::Population } => t.escaped_population = 1,
            Ending::Escaped { reason: EscapeReason::Epochs } => t.escaped_epochs = 1,
        }
        t
    }

    fn merge(self, o: Tally) -> Tally {
        Tally {
            extinct: self.extinct + o.extinct,
            censored: self.censored + o.censored,
            escaped_population: self.escaped_population + o.escaped_population,
            escaped_epochs: self.escaped_epochs + o.escaped_epochs,
        }
    }
}

/// Monte Carlo survival probability. Trial `i` uses stream `i` of
/// `master_seed`, so the estimate does not depend on the thread count.
pub fn mc_survival(
    params: &ModelParams,
    schedule: &KillSchedule,
    init: PopulationState,
    trials: u64,
    stop: &StopRule,
    master_seed: u64,
) -> Result<SurvivalEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one trial"));
    }
    stop.check()?;
    let tally = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(master_seed, i);
            run(params, schedule, init, stop, false, &mut rng).map(|o| Tally::of(o.ending))
        })
        .try_reduce(Tally::default, |a, b| Ok(a.merge(b)))?;
    let survived = tally.escaped_population + tally.escaped_epochs;
    let p_hat = survived as f64 / trials as f64;
    Ok(SurvivalEstimate {
        p_hat,
        ci_halfwidth: 1.96 * (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
        trials,
        survived,
        extinct: tally.extinct,
        censored: tally.censored,
        escaped_population: tally.escaped_population,
        escaped_epochs: tally.escaped_epochs,
        judged_by: *stop,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub t: f64,
    /// Empirical `(E N_t, E R_t)`.
    pub mean: [f64; 2],
    pub std_err: [f64; 2],
    pub trials: u64,
}

/// Monte Carlo mean of `(N_t, R_t)` without killings.
pub fn mc_mean(
    params: &ModelParams,
    t: f64,
    init: PopulationState,
    trials: u64,
    master_seed: u64,
) -> Result<MeanEstimate> {
    if trials < 2 {
        return Err(Error::invalid("trials", "need at least two trials"));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid("t", "must be finite and nonnegative"));
    }
    let stop = StopRule {
        max_epochs: None,
        escape: None,
        horizon: Some(t),
    };
    let schedule = KillSchedule::none();
    // Integer moments keep the reduction order-independent.
    let sums = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(master_seed, i);
            let s = run(params, &schedule, init, &stop, false, &mut rng)?.state;
            let (n, r) = (s.n as u128, s.r as u128);
            Ok([n, r, n * n, r * r])
        })
        .try_reduce(|| [0u128; 4], |a, b| Ok([a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]))?;
    let k = trials as f64;
    let stat = |s: u128, s2: u128| {
        let mean = s as f64 / k;
        let var = (s2 as f64 - k * mean * mean) / (k - 1.0);
        (mean, (var.max(0.0) / k).sqrt())
    };
    let (mn, sn) = stat(sums[0], sums[2]);
    let (mr, sr) = stat(sums[1], sums[3]);
    Ok(MeanEstimate {
        t,
        mean: [mn, mr],
        std_err: [sn, sr],
        trials,
    })
}
