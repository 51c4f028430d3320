//! Configurations (count vectors) and transition sequences.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Protocol, StateId, Transition};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("count overflow")]
    Overflow,
    #[error("count of state {0} would become negative")]
    Underflow(usize),
    #[error("transition not applicable")]
    NotApplicable,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("step {0} is not applicable")]
    InvalidAt(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    counts: Vec<u64>,
    n: u64,
}

impl Configuration {
    pub fn zeros(k: usize) -> Self {
        Configuration { counts: vec![0; k], n: 0 }
    }

    pub fn from_counts(counts: Vec<u64>) -> Result<Self, ConfigError> {
        let mut n: u64 = 0;
        for c in &counts {
            n = n.checked_add(*c).ok_or(ConfigError::Overflow)?;
        }
        Ok(Configuration { counts, n })
    }

    /// Builds a configuration from `(state name, count)` pairs.
    pub fn from_named(p: &Protocol, pairs: &[(&str, u64)]) -> Result<Self, crate::Error> {
        let mut c = Configuration::zeros(p.num_states());
        for (name, k) in pairs {
            let s = p.state_or_err(name)?;
            c.add(s, *k)?;
        }
        Ok(c)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn into_counts(self) -> Vec<u64> {
        self.counts
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Population size ‖c‖.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn get(&self, s: StateId) -> u64 {
        self.counts[s.0]
    }

    pub fn add(&mut self, s: StateId, k: u64) -> Result<(), ConfigError> {
        let v = self.counts[s.0].checked_add(k).ok_or(ConfigError::Overflow)?;
        self.n = self.n.checked_add(k).ok_or(ConfigError::Overflow)?;
        self.counts[s.0] = v;
        Ok(())
    }

    pub fn sub(&mut self, s: StateId, k: u64) -> Result<(), ConfigError> {
        let v = self.counts[s.0]
            .checked_sub(k)
            .ok_or(ConfigError::Underflow(s.0))?;
        self.counts[s.0] = v;
        self.n -= k;
        Ok(())
    }

    /// Adds a signed amount to one state.
    pub fn shift(&mut self, s: StateId, delta: i64) -> Result<(), ConfigError> {
        if delta >= 0 {
            self.add(s, delta as u64)
        } else {
            self.sub(s, delta.unsigned_abs())
        }
    }

    pub fn checked_add(&self, other: &Configuration) -> Result<Configuration, ConfigError> {
        self.same_dim(other)?;
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.checked_add(*b).ok_or(ConfigError::Overflow))
            .collect::<Result<Vec<_>, _>>()?;
        Configuration::from_counts(counts)
    }

    pub fn checked_sub(&self, other: &Configuration) -> Result<Configuration, ConfigError> {
        self.same_dim(other)?;
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .enumerate()
            .map(|(i, (a, b))| a.checked_sub(*b).ok_or(ConfigError::Underflow(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Configuration::from_counts(counts)
    }

    pub fn scale(&self, k: u64) -> Result<Configuration, ConfigError> {
        let counts = self
            .counts
            .iter()
            .map(|a| a.checked_mul(k).ok_or(ConfigError::Overflow))
            .collect::<Result<Vec<_>, _>>()?;
        Configuration::from_counts(counts)
    }

    /// Pointwise `self ≤ other`.
    pub fn le(&self, other: &Configuration) -> bool {
        self.counts.len() == other.counts.len()
            && self.counts.iter().zip(&other.counts).all(|(a, b)| a <= b)
    }

    /// Copy with every state outside `keep` zeroed.
    pub fn restrict(&self, keep: &[StateId]) -> Configuration {
        let mut counts = vec![0; self.counts.len()];
        for s in keep {
            counts[s.0] = self.counts[s.0];
        }
        let n = counts.iter().sum();
        Configuration { counts, n }
    }

    /// The states with positive count.
    pub fn support(&self) -> impl Iterator<Item = StateId> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(i, _)| StateId(i))
    }

    fn same_dim(&self, other: &Configuration) -> Result<(), ConfigError> {
        if self.counts.len() != other.counts.len() {
            return Err(ConfigError::DimensionMismatch(self.counts.len(), other.counts.len()));
        }
        Ok(())
    }

    pub fn display<'a>(&'a self, p: &'a Protocol) -> NamedConfig<'a> {
        NamedConfig { c: self, p }
    }
}

/// Renders a configuration as `{2·x, 1·q}` using state names.
pub struct NamedConfig<'a> {
    c: &'a Configuration,
    p: &'a Protocol,
}

impl fmt::Display for NamedConfig<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        let mut first = true;
        for s in self.c.support() {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{}·{}", self.c.get(s), self.p.name(s))?;
        }
        f.write_str("}")
    }
}

pub fn is_applicable(c: &Configuration, t: &Transition) -> bool {
    if t.r1 == t.r2 {
        c.get(t.r1) >= 2
    } else {
        c.get(t.r1) >= 1 && c.get(t.r2) >= 1
    }
}

/// In-place application; leaves `c` untouched on error.
pub fn apply_in_place(c: &mut Configuration, t: &Transition) -> Result<(), ConfigError> {
    if !is_applicable(c, t) {
        return Err(ConfigError::NotApplicable);
    }
    c.counts[t.r1.0] -= 1;
    c.counts[t.r2.0] -= 1;
    c.counts[t.p1.0] += 1;
    c.counts[t.p2.0] += 1;
    Ok(())
}

pub fn apply_transition(c: &Configuration, t: &Transition) -> Result<Configuration, ConfigError> {
    let mut out = c.clone();
    apply_in_place(&mut out, t)?;
    Ok(out)
}

/// Executes rule indices of `p` from `c`; fails at the first inapplicable step.
pub fn execute_path(p: &Protocol, c: &Configuration, steps: &[usize]) -> Result<Configuration, ConfigError> {
    let mut cur = c.clone();
    for (i, r) in steps.iter().enumerate() {
        apply_in_place(&mut cur, p.rule(*r)).map_err(|_| ConfigError::InvalidAt(i))?;
    }
    Ok(cur)
}

/// A finite sequence of non-null rules (indices into [`Protocol::rules`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSequence {
    pub origin: Configuration,
    pub steps: Vec<usize>,
}

impl TransitionSequence {
    pub fn new(origin: Configuration, steps: Vec<usize>) -> Self {
        TransitionSequence { origin, steps }
    }

    pub fn execute(&self, p: &Protocol) -> Result<Configuration, ConfigError> {
        execute_path(p, &self.origin, &self.steps)
    }

    pub fn is_valid(&self, p: &Protocol) -> bool {
        self.execute(p).is_ok()
    }

    pub fn labels(&self, p: &Protocol) -> Vec<String> {
        self.steps.iter().map(|r| p.rule_label(*r)).collect()
    }

    /// How many times each rule occurs.
    pub fn rule_counts(&self, num_rules: usize) -> Vec<u64> {
        let mut v = vec![0; num_rules];
        for r in &self.steps {
            v[*r] += 1;
        }
        v
    }
}
