//! Uniform random-pair scheduler.
//!
//! Every interaction picks one of the C(n,2) unordered agent pairs uniformly.
//! Parallel time is interactions / n. [`run_accelerated`] samples the run of
//! null interactions before the next non-null one from a geometric law, which
//! gives the same joint law of (final configuration, interaction count) as
//! stepping one pair at a time.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{apply_in_place, Configuration};
use crate::protocol::{Protocol, StateId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("population of {0} agents is too small to interact")]
    PopulationTooSmall(u64),
    #[error("trials must be at least 1")]
    NoTrials,
}

pub type Rng64 = ChaCha8Rng;

/// Seed for trial `trial` of an experiment with base seed `base`.
pub fn trial_seed(base: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(base) ^ trial)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone)]
pub struct StopPredicate {
    name: String,
    f: Arc<dyn Fn(&Configuration) -> bool + Send + Sync>,
}

impl StopPredicate {
    pub fn new(name: impl Into<String>, f: impl Fn(&Configuration) -> bool + Send + Sync + 'static) -> Self {
        StopPredicate { name: name.into(), f: Arc::new(f) }
    }

    /// Holds when every listed state has count zero.
    pub fn all_zero(name: impl Into<String>, states: Vec<StateId>) -> Self {
        StopPredicate::new(name, move |c| states.iter().all(|s| c.get(*s) == 0))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn holds(&self, c: &Configuration) -> bool {
        (self.f)(c)
    }
}

impl fmt::Debug for StopPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StopPredicate({})", self.name)
    }
}

/// When to end a run. Silence always ends a run, whatever the condition.
#[derive(Debug, Clone)]
pub enum StopCondition {
    SilentOnly,
    PredicateHolds(StopPredicate),
    InteractionBudget(u64),
    FirstOf(Vec<StopCondition>),
}

impl StopCondition {
    fn predicate_holds(&self, c: &Configuration) -> bool {
        match self {
            StopCondition::PredicateHolds(p) => p.holds(c),
            StopCondition::FirstOf(v) => v.iter().any(|s| s.predicate_holds(c)),
            _ => false,
        }
    }

    fn budget(&self) -> Option<u64> {
        match self {
            StopCondition::InteractionBudget(b) => Some(*b),
            StopCondition::FirstOf(v) => v.iter().filter_map(|s| s.budget()).min(),
            _ => None,
        }
    }

    pub fn with_budget(self, limit: u64) -> StopCondition {
        StopCondition::FirstOf(vec![self, StopCondition::InteractionBudget(limit)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    StopConditionMet,
    Silent,
    Budget,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::StopConditionMet => "stop_condition",
            StopReason::Silent => "silent",
            StopReason::Budget => "budget",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Number of non-null steps applied before this snapshot.
    pub step: usize,
    pub interactions: u64,
    pub config: Configuration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedPath {
    pub origin: Configuration,
    /// Non-null rules in firing order.
    pub steps: Vec<usize>,
    pub snapshots: Vec<Snapshot>,
    pub stride: u64,
}

impl RecordedPath {
    pub fn sequence(&self) -> crate::config::TransitionSequence {
        crate::config::TransitionSequence::new(self.origin.clone(), self.steps.clone())
    }
}

/// Default snapshot stride: every non-null step up to 10^4 agents, every n steps above.
pub fn default_stride(n: u64) -> u64 {
    if n <= 10_000 {
        1
    } else {
        n
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub final_config: Configuration,
    pub interactions: u64,
    pub n: u64,
    pub stop_reason: StopReason,
    pub recorded_path: Option<RecordedPath>,
}

impl RunResult {
    pub fn parallel_time(&self) -> f64 {
        self.interactions as f64 / self.n as f64
    }
}

fn pair_weight(c: &Configuration, a: StateId, b: StateId) -> u128 {
    if a == b {
        let k = c.get(a) as u128;
        k * k.saturating_sub(1) / 2
    } else {
        c.get(a) as u128 * c.get(b) as u128
    }
}

/// Number of unordered agent pairs whose interaction is non-null.
pub fn eligible_pairs(p: &Protocol, c: &Configuration) -> u128 {
    p.rules().iter().map(|t| pair_weight(c, t.r1, t.r2)).sum()
}

pub fn total_pairs(n: u64) -> u128 {
    let n = n as u128;
    n * n.saturating_sub(1) / 2
}

pub fn is_silent(p: &Protocol, c: &Configuration) -> bool {
    eligible_pairs(p, c) == 0
}

fn agent_state(c: &Configuration, mut idx: u64) -> StateId {
    for (i, k) in c.counts().iter().enumerate() {
        if idx < *k {
            return StateId(i);
        }
        idx -= k;
    }
    unreachable!("agent index beyond population")
}

/// Picks two distinct agents uniformly and returns their states.
pub fn select_pair<R: Rng + ?Sized>(c: &Configuration, rng: &mut R) -> Result<(StateId, StateId), SimError> {
    let n = c.n();
    if n < 2 {
        return Err(SimError::PopulationTooSmall(n));
    }
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    Ok((agent_state(c, i), agent_state(c, j)))
}

/// One interaction in place; returns the rule that fired, `None` if null.
pub fn step_mut<R: Rng + ?Sized>(p: &Protocol, c: &mut Configuration, rng: &mut R) -> Result<Option<usize>, SimError> {
    let (a, b) = select_pair(c, rng)?;
    let r = p.rule_for(a, b);
    if let Some(r) = r {
        apply_in_place(c, p.rule(r)).expect("selected pair is present");
    }
    Ok(r)
}

pub fn step<R: Rng + ?Sized>(p: &Protocol, c: &Configuration, rng: &mut R) -> Result<(Configuration, Option<usize>), SimError> {
    let mut next = c.clone();
    let r = step_mut(p, &mut next, rng)?;
    Ok((next, r))
}

struct Recorder {
    path: RecordedPath,
}

impl Recorder {
    fn new(origin: &Configuration, stride: u64) -> Self {
        let stride = stride.max(1);
        Recorder {
            path: RecordedPath {
                origin: origin.clone(),
                steps: Vec::new(),
                snapshots: vec![Snapshot { step: 0, interactions: 0, config: origin.clone() }],
                stride,
            },
        }
    }

    fn push(&mut self, rule: usize, interactions: u64, c: &Configuration) {
        self.path.steps.push(rule);
        let k = self.path.steps.len();
        if k as u64 % self.path.stride == 0 {
            self.path.snapshots.push(Snapshot { step: k, interactions, config: c.clone() });
        }
    }

    fn finish(mut self, interactions: u64, c: &Configuration) -> RecordedPath {
        let k = self.path.steps.len();
        if self.path.snapshots.last().map(|s| s.step) != Some(k) {
            self.path.snapshots.push(Snapshot { step: k, interactions, config: c.clone() });
        }
        self.path
    }
}

/// Interaction-by-interaction simulation.
pub fn run_until<R: Rng + ?Sized>(
    p: &Protocol,
    c: &Configuration,
    stop: &StopCondition,
    rng: &mut R,
    record: bool,
) -> Result<RunResult, SimError> {
    let stride = if record { Some(default_stride(c.n())) } else { None };
    run_until_strided(p, c, stop, rng, stride)
}

/// As [`run_until`], recording with the given snapshot stride when `Some`.
pub fn run_until_strided<R: Rng + ?Sized>(
    p: &Protocol,
    c: &Configuration,
    stop: &StopCondition,
    rng: &mut R,
    stride: Option<u64>,
) -> Result<RunResult, SimError> {
    if c.n() < 2 {
        return Err(SimError::PopulationTooSmall(c.n()));
    }
    let mut cur = c.clone();
    let mut rec = stride.map(|s| Recorder::new(c, s));
    let budget = stop.budget();
    let mut interactions: u64 = 0;
    let reason = loop {
        if stop.predicate_holds(&cur) {
            break StopReason::StopConditionMet;
        }
        if is_silent(p, &cur) {
            break StopReason::Silent;
        }
        if budget.is_some_and(|b| interactions >= b) {
            break StopReason::Budget;
        }
        let fired = step_mut(p, &mut cur, rng)?;
        interactions += 1;
        if let (Some(r), Some(rec)) = (fired, rec.as_mut()) {
            rec.push(r, interactions, &cur);
        }
    };
    Ok(RunResult {
        recorded_path: rec.map(|r| r.finish(interactions, &cur)),
        final_config: cur,
        interactions,
        n: c.n(),
        stop_reason: reason,
    })
}

/// Simulation that jumps over null interactions.
pub fn run_accelerated<R: Rng + ?Sized>(
    p: &Protocol,
    c: &Configuration,
    stop: &StopCondition,
    rng: &mut R,
) -> Result<RunResult, SimError> {
    let n = c.n();
    if n < 2 {
        return Err(SimError::PopulationTooSmall(n));
    }
    let all = total_pairs(n);
    let mut cur = c.clone();
    let budget = stop.budget();
    let mut interactions: u64 = 0;
    let mut weights = vec![0u128; p.rules().len()];
    let reason = loop {
        if stop.predicate_holds(&cur) {
            break StopReason::StopConditionMet;
        }
        let mut e: u128 = 0;
        for (w, t) in weights.iter_mut().zip(p.rules()) {
            *w = pair_weight(&cur, t.r1, t.r2);
            e += *w;
        }
        if e == 0 {
            break StopReason::Silent;
        }
        if budget.is_some_and(|b| interactions >= b) {
            break StopReason::Budget;
        }
        let skipped = if e == all {
            0
        } else {
            let prob = e as f64 / all as f64;
            Geometric::new(prob).expect("probability in (0,1]").sample(rng)
        };
        let next = interactions.saturating_add(skipped).saturating_add(1);
        if let Some(b) = budget {
            if next > b {
                interactions = b;
                break StopReason::Budget;
            }
        }
        interactions = next;
        let mut u = rng.random_range(0..e);
        let mut chosen = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                chosen = i;
                break;
            }
            u -= w;
        }
        apply_in_place(&mut cur, p.rule(chosen)).expect("weighted rule is applicable");
    };
    Ok(RunResult { final_config: cur, interactions, n, stop_reason: reason, recorded_path: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub interactions: u64,
    pub parallel_time: f64,
    pub stop_reason: StopReason,
    pub final_config: Configuration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub trials: usize,
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub records: Vec<TrialRecord>,
}

/// Runs `trials` independent accelerated runs in parallel.
pub fn estimate_stabilization_time(
    p: &Protocol,
    input: &Configuration,
    stop: &StopCondition,
    trials: usize,
    base_seed: u64,
) -> Result<TimeStats, SimError> {
    if trials == 0 {
        return Err(SimError::NoTrials);
    }
    let records = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(base_seed, t);
            let mut rng = rng_for(seed);
            let r = run_accelerated(p, input, stop, &mut rng)?;
            Ok(TrialRecord {
                trial: t,
                seed,
                interactions: r.interactions,
                parallel_time: r.parallel_time(),
                stop_reason: r.stop_reason,
                final_config: r.final_config,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let times: Vec<f64> = records.iter().map(|r| r.parallel_time).collect();
    let (mean, stddev) = crate::stats::mean_std(&times);
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(TimeStats { trials, mean, stddev, min, max, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halving() -> Protocol {
        Protocol::builder().rule("x", "x", "y", "q").unwrap().build().unwrap()
    }

    fn fast() -> Protocol {
        Protocol::builder()
            .rule("a", "x", "b", "y")
            .unwrap()
            .rule("b", "x", "a", "q")
            .unwrap()
            .build()
            .unwrap()
    }

    #[test]
    fn two_agents_single_pair() {
        let p = halving();
        let c = Configuration::from_named(&p, &[("x", 2)]).unwrap();
        for seed in 0..20 {
            let (next, r) = step(&p, &c, &mut rng_for(seed)).unwrap();
            assert_eq!(r, Some(0));
            assert_eq!(next, Configuration::from_named(&p, &[("y", 1), ("q", 1)]).unwrap());
        }
    }

    #[test]
    fn null_pair() {
        let p = halving();
        let c = Configuration::from_named(&p, &[("y", 1), ("q", 1)]).unwrap();
        let (next, r) = step(&p, &c, &mut rng_for(1)).unwrap();
        assert_eq!(r, None);
        assert_eq!(next, c);
    }

    #[test]
    fn too_small() {
        let p = halving();
        let c = Configuration::from_named(&p, &[("x", 1)]).unwrap();
        assert_eq!(step(&p, &c, &mut rng_for(0)).unwrap_err(), SimError::PopulationTooSmall(1));
        assert!(run_accelerated(&p, &c, &StopCondition::SilentOnly, &mut rng_for(0)).is_err());
    }

    #[test]
    fn silent_detected_before_budget() {
        let p = Protocol::builder().states(&["x", "y"]).unwrap().build().unwrap();
        let c = Configuration::from_named(&p, &[("x", 2)]).unwrap();
        let stop = StopCondition::InteractionBudget(10);
        let r = run_until(&p, &c, &stop, &mut rng_for(3), false).unwrap();
        assert_eq!(r.stop_reason, StopReason::Silent);
        assert_eq!(r.interactions, 0);
        let r = run_accelerated(&p, &c, &stop, &mut rng_for(3)).unwrap();
        assert_eq!(r.stop_reason, StopReason::Silent);
        assert_eq!(r.interactions, 0);
    }

    #[test]
    fn budget_caps_interactions() {
        let p = fast();
        let c = Configuration::from_named(&p, &[("a", 1), ("x", 1000)]).unwrap();
        let stop = StopCondition::SilentOnly.with_budget(500);
        let r = run_accelerated(&p, &c, &stop, &mut rng_for(9)).unwrap();
        assert_eq!(r.stop_reason, StopReason::Budget);
        assert_eq!(r.interactions, 500);
        let r = run_until(&p, &c, &stop, &mut rng_for(9), false).unwrap();
        assert_eq!(r.interactions, 500);
    }

    #[test]
    fn seed_determinism() {
        let p = fast();
        let c = Configuration::from_named(&p, &[("a", 10), ("x", 100), ("q", 200)]).unwrap();
        let s = StopCondition::SilentOnly;
        let a = run_until(&p, &c, &s, &mut rng_for(5), true).unwrap();
        let b = run_until(&p, &c, &s, &mut rng_for(5), true).unwrap();
        assert_eq!(a, b);
        let a = run_accelerated(&p, &c, &s, &mut rng_for(5)).unwrap();
        let b = run_accelerated(&p, &c, &s, &mut rng_for(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn recorded_path_replays() {
        let p = fast();
        let c = Configuration::from_named(&p, &[("a", 3), ("x", 40)]).unwrap();
        let r = run_until(&p, &c, &StopCondition::SilentOnly, &mut rng_for(2), true).unwrap();
        let path = r.recorded_path.as_ref().unwrap();
        assert_eq!(path.sequence().execute(&p).unwrap(), r.final_config);
        assert_eq!(path.snapshots.len(), path.steps.len() + 1);
        for s in &path.snapshots {
            let prefix = &path.steps[..s.step];
            assert_eq!(crate::config::execute_path(&p, &c, prefix).unwrap(), s.config);
        }
    }

    #[test]
    fn single_trial_stats() {
        let p = halving();
        let c = Configuration::from_named(&p, &[("x", 50)]).unwrap();
        let st = estimate_stabilization_time(&p, &c, &StopCondition::SilentOnly, 1, 4).unwrap();
        assert_eq!(st.mean, st.min);
        assert_eq!(st.mean, st.max);
        assert!(estimate_stabilization_time(&p, &c, &StopCondition::SilentOnly, 0, 4).is_err());
    }

    #[test]
    fn predicate_wins_over_silence() {
        let p = halving();
        let c = Configuration::from_named(&p, &[("y", 2)]).unwrap();
        let y = p.state("y").unwrap();
        let stop = StopCondition::PredicateHolds(StopPredicate::new("y>0", move |c| c.get(y) > 0));
        let r = run_accelerated(&p, &c, &stop, &mut rng_for(0)).unwrap();
        assert_eq!(r.stop_reason, StopReason::StopConditionMet);
    }
}
