//! Transition-sequence surgery for Δ-ordered protocols.
//!
//! A state set Δ = {d1..dd} is ordered via rules τ1..τd when each
//! τi: di,si -> oi,o'i has si, oi, o'i outside {d1..di}. Given such an
//! ordering, [`Surgery`] builds the integer matrices that predict the effect
//! of adding or removing copies of τ1..τd, and constructs concrete paths:
//! eliminating Δ ([`Surgery::eliminate_delta`]), steering the Δ-counts at the
//! end of a host path ([`Surgery::produce_e`]) and their composition
//! ([`Surgery::push_delta`]).
//!
//! Vectors over Δ are indexed by position in the ordering, vectors over Γ by
//! position in [`Surgery::gamma`] (increasing state index).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{apply_in_place, is_applicable, Configuration, TransitionSequence};
use crate::protocol::{Protocol, StateId};

/// Largest supported |Δ|; matrix entries grow like 2^(2d+2).
pub const MAX_DELTA: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurgeryError {
    #[error("no Δ-ordering exists; stuck with remaining states {0:?}")]
    NotOrderable(Vec<String>),
    #[error("|Δ| = {0} exceeds the supported maximum {MAX_DELTA}")]
    TooLarge(usize),
    #[error("integer overflow in surgery arithmetic")]
    Overflow,
    #[error("vector over Δ has {got} entries, expected {want}")]
    Arity { got: usize, want: usize },
    #[error("host path invalid at step {0}")]
    InvalidHost(usize),
    #[error("host path has {present} copies of {rule}, but {needed} must be removed")]
    InsufficientOccurrences { rule: String, needed: u64, present: u64 },
    #[error("edited path fails at step {index}: state {state} exhausted")]
    InvalidEdit { index: usize, state: String },
    #[error("buffer exceeds x (needs {needed} per state, x has min {available}); composed path fails at step {index}")]
    BufferTooSmall { needed: u64, available: u64, index: usize },
    #[error("executed configuration {executed:?} differs from prediction {predicted:?}")]
    AlgebraMismatch { predicted: Vec<i64>, executed: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<i64>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntMatrix { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1);
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: i64) {
        self.data[r * self.cols + c] = v;
    }

    fn bump(&mut self, r: usize, c: usize, v: i64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[i64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<i64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn checked_add(&self, o: &IntMatrix) -> Result<IntMatrix, SurgeryError> {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        let data = self
            .data
            .iter()
            .zip(&o.data)
            .map(|(a, b)| a.checked_add(*b).ok_or(SurgeryError::Overflow))
            .collect::<Result<_, _>>()?;
        Ok(IntMatrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn checked_sub(&self, o: &IntMatrix) -> Result<IntMatrix, SurgeryError> {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        let data = self
            .data
            .iter()
            .zip(&o.data)
            .map(|(a, b)| a.checked_sub(*b).ok_or(SurgeryError::Overflow))
            .collect::<Result<_, _>>()?;
        Ok(IntMatrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn checked_mul(&self, o: &IntMatrix) -> Result<IntMatrix, SurgeryError> {
        assert_eq!(self.cols, o.rows);
        let mut out = IntMatrix::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for j in 0..o.cols {
                let mut acc: i64 = 0;
                for k in 0..self.cols {
                    let p = self.get(i, k).checked_mul(o.get(k, j)).ok_or(SurgeryError::Overflow)?;
                    acc = acc.checked_add(p).ok_or(SurgeryError::Overflow)?;
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[i64]) -> Result<Vec<i64>, SurgeryError> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                self.row(i).iter().zip(v).try_fold(0i64, |acc, (a, b)| {
                    a.checked_mul(*b)
                        .and_then(|p| acc.checked_add(p))
                        .ok_or(SurgeryError::Overflow)
                })
            })
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> IntMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for r in rows {
            data.extend_from_slice(self.row(*r));
        }
        IntMatrix { rows: rows.len(), cols: self.cols, data }
    }

    /// Largest entry (0 for an empty matrix).
    pub fn max(&self) -> i64 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Largest absolute entry.
    pub fn amax(&self) -> i64 {
        self.data.iter().map(|v| v.abs()).max().unwrap_or(0)
    }

    pub fn is_strictly_lower(&self) -> bool {
        (0..self.rows).all(|i| (i..self.cols).all(|j| self.get(i, j) == 0))
    }

    /// Σ_{i<k} self^i for a square matrix.
    fn neumann(&self, k: usize) -> Result<IntMatrix, SurgeryError> {
        let mut acc = IntMatrix::identity(self.rows);
        let mut pow = IntMatrix::identity(self.rows);
        for _ in 1..k {
            pow = pow.checked_mul(self)?;
            acc = acc.checked_add(&pow)?;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaOrdering {
    pub delta: Vec<StateId>,
    /// Rule index of τi for each di.
    pub witnesses: Vec<usize>,
}

impl DeltaOrdering {
    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn position(&self, s: StateId) -> Option<usize> {
        self.delta.iter().position(|d| *d == s)
    }
}

/// Whether `rule` consumes exactly one `d` while its other input and both
/// outputs avoid `forbidden`.
fn qualifies(p: &Protocol, rule: usize, d: StateId, forbidden: &[StateId]) -> bool {
    let t = p.rule(rule);
    let s = if t.r1 == d {
        t.r2
    } else if t.r2 == d {
        t.r1
    } else {
        return false;
    };
    s != d && ![s, t.p1, t.p2].iter().any(|x| forbidden.contains(x))
}

/// Second input of τ for `d`.
fn second_input(p: &Protocol, rule: usize, d: StateId) -> StateId {
    let t = p.rule(rule);
    if t.r1 == d {
        t.r2
    } else {
        t.r1
    }
}

/// Checks the ordering condition directly, rule by rule.
pub fn is_valid_ordering(p: &Protocol, ord: &DeltaOrdering) -> bool {
    ord.delta.len() == ord.witnesses.len()
        && ord.delta.iter().enumerate().all(|(i, d)| {
            ord.witnesses[i] < p.rules().len() && qualifies(p, ord.witnesses[i], *d, &ord.delta[..=i])
        })
}

/// Finds a Δ-ordering by peeling from the back: the last state may only
/// interact with Γ, and removing a state from the remaining set never makes
/// another state ineligible. Among eligible states the one with the highest
/// index goes last; τi is the first qualifying rule in declaration order.
pub fn find_delta_ordering(p: &Protocol, delta: &[StateId]) -> Result<DeltaOrdering, SurgeryError> {
    let mut remaining: Vec<StateId> = delta.to_vec();
    remaining.sort();
    remaining.dedup();
    let mut rev_states = Vec::new();
    let mut rev_rules = Vec::new();
    while !remaining.is_empty() {
        let pick = remaining.iter().enumerate().rev().find_map(|(pos, d)| {
            (0..p.rules().len())
                .find(|r| qualifies(p, *r, *d, &remaining))
                .map(|r| (pos, r))
        });
        match pick {
            Some((pos, r)) => {
                rev_states.push(remaining.remove(pos));
                rev_rules.push(r);
            }
            None => {
                return Err(SurgeryError::NotOrderable(
                    remaining.iter().map(|s| p.name(*s).to_string()).collect(),
                ))
            }
        }
    }
    rev_states.reverse();
    rev_rules.reverse();
    Ok(DeltaOrdering { delta: rev_states, witnesses: rev_rules })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurgeryMatrices {
    /// Δ-outputs of each τj (d×d, strictly lower triangular).
    pub t1: IntMatrix,
    pub t: IntMatrix,
    /// Second input of each τj (|Λ|×d).
    pub s: IntMatrix,
    /// Γ-outputs of each τj (|Γ|×d).
    pub g: IntMatrix,
    pub c1: IntMatrix,
    pub c2: IntMatrix,
    /// Net Δ-effect of τj beyond consuming dj (d×d).
    pub t1_tilde: IntMatrix,
    pub t_tilde: IntMatrix,
    /// Net Γ-effect of each τj (|Γ|×d).
    pub g_tilde: IntMatrix,
    /// Net effect on every state (|Λ|×d).
    pub g_prime: IntMatrix,
    pub c3: IntMatrix,
    pub c3_prime: IntMatrix,
    pub c4: IntMatrix,
    pub d1: IntMatrix,
    pub d2: IntMatrix,
}

pub fn build_matrices(p: &Protocol, ord: &DeltaOrdering) -> Result<SurgeryMatrices, SurgeryError> {
    let d = ord.len();
    if d > MAX_DELTA {
        return Err(SurgeryError::TooLarge(d));
    }
    let lam = p.num_states();
    let gamma: Vec<StateId> = p.states().filter(|s| ord.position(*s).is_none()).collect();
    let mut t1 = IntMatrix::zeros(d, d);
    let mut t1_tilde = IntMatrix::zeros(d, d);
    let mut s = IntMatrix::zeros(lam, d);
    let mut g = IntMatrix::zeros(gamma.len(), d);
    let mut g_tilde = IntMatrix::zeros(gamma.len(), d);
    let mut g_prime = IntMatrix::zeros(lam, d);
    for (j, (dj, r)) in ord.delta.iter().zip(&ord.witnesses).enumerate() {
        let t = p.rule(*r);
        let sj = second_input(p, *r, *dj);
        s.set(sj.0, j, 1);
        for o in [t.p1, t.p2] {
            if let Some(k) = ord.position(o) {
                t1.bump(k, j, 1);
                t1_tilde.bump(k, j, 1);
            }
        }
        if let Some(k) = ord.position(sj) {
            t1_tilde.bump(k, j, -1);
        }
        for (gi, gs) in gamma.iter().enumerate() {
            g.set(gi, j, t.produces(*gs) as i64);
            g_tilde.set(gi, j, t.net(*gs));
        }
        for st in p.states() {
            g_prime.set(st.0, j, t.net(st));
        }
    }
    let t = t1.neumann(d)?;
    let t_tilde = t1_tilde.neumann(d)?;
    let c1 = g.checked_mul(&t)?;
    let c2 = s.checked_mul(&t)?;
    let c3 = g_tilde.checked_mul(&t_tilde)?;
    let c3_prime = g_prime.checked_mul(&t_tilde)?;
    let delta_rows: Vec<usize> = ord.delta.iter().map(|s| s.0).collect();
    let gamma_rows: Vec<usize> = gamma.iter().map(|s| s.0).collect();
    let c2_delta = c2.select_rows(&delta_rows);
    let c2_gamma = c2.select_rows(&gamma_rows);
    let c4 = c3.checked_mul(&c2_delta)?;
    let base = c1.checked_sub(&c2_gamma)?;
    let d1 = c3.checked_sub(&c4)?.checked_add(&base)?;
    let d2 = base.checked_sub(&c4)?;
    Ok(SurgeryMatrices { t1, t, s, g, c1, c2, t1_tilde, t_tilde, g_tilde, g_prime, c3, c3_prime, c4, d1, d2 })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Validity {
    Valid,
    FirstFailure { index: usize, state: StateId },
}

/// Replays `steps` from `origin`, reporting the first step that would drive
/// a count negative and the state that runs out.
pub fn verify_path_validity(p: &Protocol, origin: &Configuration, steps: &[usize]) -> Validity {
    let mut cur = origin.clone();
    for (i, r) in steps.iter().enumerate() {
        let t = p.rule(*r);
        if !is_applicable(&cur, t) {
            let state = if cur.get(t.r1) == 0 || t.r1 == t.r2 { t.r1 } else { t.r2 };
            return Validity::FirstFailure { index: i, state };
        }
        apply_in_place(&mut cur, t).expect("checked applicable");
    }
    Validity::Valid
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Elimination {
    /// Extra agents e = C2·cΔ.
    pub e: Configuration,
    /// Final configuration C1·cΔ (zero on Δ).
    pub z: Configuration,
    /// Copies of τ1..τd used, T·cΔ.
    pub rule_counts: Vec<u64>,
    /// Path from cΔ + e.
    pub path: TransitionSequence,
}

/// Added and removed copies of τ1..τd, keyed by ordering position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEdit {
    pub additions: Vec<u64>,
    pub removals: Vec<u64>,
    pub buffer: Configuration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProduceE {
    pub edit: PathEdit,
    pub t_tilde: Vec<i64>,
    /// Edited path, starting at buffer + x.
    pub edited: TransitionSequence,
    pub predicted: Vec<i64>,
    pub executed: Configuration,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PushDelta {
    pub c_delta: Vec<u64>,
    pub e: Configuration,
    pub e2_delta: Vec<u64>,
    pub buffer: Configuration,
    /// Composed path from 2x + dΔ.
    pub full: TransitionSequence,
    pub predicted: Vec<i64>,
    pub final_config: Configuration,
    pub b2_statement: u128,
    pub b2_proof: u128,
    pub warnings: Vec<String>,
}

/// Serializable record of one surgery run.
#[derive(Debug, Clone, Serialize)]
pub struct SurgeryTrace {
    pub states: Vec<String>,
    pub delta: Vec<String>,
    pub gamma: Vec<String>,
    pub witnesses: Vec<String>,
    pub matrices: Option<SurgeryMatrices>,
    pub elimination: Option<Elimination>,
    pub produce_e: Option<ProduceE>,
    pub push_delta: Option<PushDelta>,
}

/// A protocol together with a Δ-ordering and its matrices.
#[derive(Debug, Clone)]
pub struct Surgery<'a> {
    pub protocol: &'a Protocol,
    pub ordering: DeltaOrdering,
    pub gamma: Vec<StateId>,
    pub matrices: SurgeryMatrices,
}

fn to_i64(v: &[u64]) -> Result<Vec<i64>, SurgeryError> {
    v.iter().map(|x| i64::try_from(*x).map_err(|_| SurgeryError::Overflow)).collect()
}

fn to_u64(v: &[i64]) -> Vec<u64> {
    v.iter().map(|x| u64::try_from(*x).expect("nonnegative by construction")).collect()
}

impl<'a> Surgery<'a> {
    pub fn new(p: &'a Protocol, delta: &[StateId]) -> Result<Self, SurgeryError> {
        let ordering = find_delta_ordering(p, delta)?;
        Self::with_ordering(p, ordering)
    }

    pub fn with_ordering(p: &'a Protocol, ordering: DeltaOrdering) -> Result<Self, SurgeryError> {
        let matrices = build_matrices(p, &ordering)?;
        let gamma = p.states().filter(|s| ordering.position(*s).is_none()).collect();
        Ok(Surgery { protocol: p, ordering, gamma, matrices })
    }

    pub fn d(&self) -> usize {
        self.ordering.len()
    }

    fn check_arity(&self, v: &[u64]) -> Result<(), SurgeryError> {
        if v.len() != self.d() {
            return Err(SurgeryError::Arity { got: v.len(), want: self.d() });
        }
        Ok(())
    }

    /// Counts over Δ of a full configuration, in ordering order.
    pub fn delta_part(&self, c: &Configuration) -> Vec<u64> {
        self.ordering.delta.iter().map(|s| c.get(*s)).collect()
    }

    pub fn gamma_part(&self, c: &Configuration) -> Vec<u64> {
        self.gamma.iter().map(|s| c.get(*s)).collect()
    }

    /// Full configuration with the given Δ counts and zero elsewhere.
    pub fn from_delta(&self, v: &[u64]) -> Result<Configuration, SurgeryError> {
        let mut c = Configuration::zeros(self.protocol.num_states());
        for (s, k) in self.ordering.delta.iter().zip(v) {
            c.add(*s, *k).map_err(|_| SurgeryError::Overflow)?;
        }
        Ok(c)
    }

    fn add_gamma(&self, full: &mut [i64], v: &[i64]) -> Result<(), SurgeryError> {
        for (s, k) in self.gamma.iter().zip(v) {
            full[s.0] = full[s.0].checked_add(*k).ok_or(SurgeryError::Overflow)?;
        }
        Ok(())
    }

    fn add_delta(&self, full: &mut [i64], v: &[i64]) -> Result<(), SurgeryError> {
        for (s, k) in self.ordering.delta.iter().zip(v) {
            full[s.0] = full[s.0].checked_add(*k).ok_or(SurgeryError::Overflow)?;
        }
        Ok(())
    }

    /// Path from cΔ + e to a configuration without Δ-states: round r fires
    /// (T1^(r-1)·cΔ)(j) copies of τj, for j in ordering order.
    pub fn eliminate_delta(&self, c_delta: &[u64]) -> Result<Elimination, SurgeryError> {
        self.check_arity(c_delta)?;
        let m = &self.matrices;
        let cv = to_i64(c_delta)?;
        let e = Configuration::from_counts(to_u64(&m.c2.mul_vec(&cv)?)).map_err(|_| SurgeryError::Overflow)?;
        let mut z = vec![0i64; self.protocol.num_states()];
        self.add_gamma(&mut z, &m.c1.mul_vec(&cv)?)?;
        let z = Configuration::from_counts(to_u64(&z)).map_err(|_| SurgeryError::Overflow)?;
        let mut steps = Vec::new();
        let mut round = cv.clone();
        for _ in 0..self.d() {
            for (j, k) in round.iter().enumerate() {
                steps.extend(std::iter::repeat_n(self.ordering.witnesses[j], *k as usize));
            }
            round = m.t1.mul_vec(&round)?;
        }
        let rule_counts = to_u64(&m.t.mul_vec(&cv)?);
        let origin = self.from_delta(c_delta)?.checked_add(&e).map_err(|_| SurgeryError::Overflow)?;
        Ok(Elimination { e, z, rule_counts, path: TransitionSequence::new(origin, steps) })
    }

    /// Edits `host` (from x to o) so that it ends with Δ-counts `e_delta`,
    /// running in the context of a buffer p with p(s) = d·2^(d+1)·max(b1, eΔ).
    pub fn produce_e(&self, host: &TransitionSequence, e_delta: &[u64], b1: u64) -> Result<ProduceE, SurgeryError> {
        self.check_arity(e_delta)?;
        let p = self.protocol;
        let d = self.d();
        let m = &self.matrices;
        let o = self.run_host(host)?;
        let o_delta = self.delta_part(&o);
        let mut warnings = Vec::new();
        if o_delta.iter().any(|v| *v > b1) {
            warnings.push(format!("some Δ-count of o exceeds b1 = {b1}: {o_delta:?}"));
        }
        let (c_tilde, t_tilde) = self.t_tilde_for(&o, e_delta)?;
        let emax = e_delta.iter().copied().max().unwrap_or(0);
        let per_state = (d as u64)
            .checked_mul(1u64 << (d + 1))
            .and_then(|v| v.checked_mul(b1.max(emax)))
            .ok_or(SurgeryError::Overflow)?;
        let buffer = Configuration::from_counts(vec![per_state; p.num_states()]).map_err(|_| SurgeryError::Overflow)?;

        let lam = p.num_states() as u128;
        let b2 = lam * b1 as u128 + d as u128 * (1u128 << d) * b1.max(emax) as u128 * lam * lam;
        if d > 0 {
            if host.origin.counts().iter().any(|v| (*v as u128) < b2) {
                warnings.push(format!("x is below b2 = {b2} in some state"));
            }
            if let Ok(rep) = crate::verify::find_bottlenecks(p, host, b2.min(u64::MAX as u128) as u64) {
                if !rep.hits.is_empty() {
                    warnings.push(format!("host has {} b2-bottleneck steps (b2 = {b2})", rep.hits.len()));
                }
            }
        }

        let (additions, removals, steps) = self.edit_host(host, &t_tilde)?;

        let mut predicted = to_i64(buffer.counts())?;
        self.add_gamma(&mut predicted, &to_i64(&self.gamma_part(&o))?)?;
        self.add_gamma(&mut predicted, &m.c3.mul_vec(&c_tilde)?)?;
        self.add_delta(&mut predicted, &to_i64(e_delta)?)?;

        let origin = buffer.checked_add(&host.origin).map_err(|_| SurgeryError::Overflow)?;
        let edited = TransitionSequence::new(origin, steps);
        if let Validity::FirstFailure { index, state } = verify_path_validity(p, &edited.origin, &edited.steps) {
            return Err(SurgeryError::InvalidEdit { index, state: p.name(state).to_string() });
        }
        let executed = edited.execute(p).expect("validated above");
        if to_i64(executed.counts())? != predicted {
            return Err(SurgeryError::AlgebraMismatch { predicted, executed: executed.into_counts() });
        }
        Ok(ProduceE {
            edit: PathEdit { additions, removals, buffer },
            t_tilde,
            edited,
            predicted,
            executed,
            warnings,
        })
    }

    /// The two stated forms of the b2 threshold for given b1 and b = max dΔ.
    pub fn b2_bounds(&self, b1: u64, b: u64, e2_max: u64) -> (u128, u128) {
        let d = self.d() as u128;
        let lam = self.protocol.num_states() as u128;
        let (b1, b, e2) = (b1 as u128, b as u128, e2_max as u128);
        let p2 = |k: u128| 1u128.checked_shl(k as u32).unwrap_or(u128::MAX);
        let sat = |a: u128, x: u128| a.saturating_mul(x);
        let statement = (lam * b1)
            .saturating_add(sat(sat(sat(d, p2(d)), b1.max(sat(sat(d, p2(d + 1)), b1 + b))), lam * lam))
            .max(sat(sat(d * d, p2(2 * d + 2)), b1 + b));
        let proof = (lam * b1)
            .saturating_add(sat(sat(sat(d, p2(d)), b1.max(e2)), lam * lam))
            .max(sat(sat(d * d + 1, p2(2 * d + 1)), b1 + b));
        (statement, proof)
    }

    /// Composes produce-e on one copy of x (the other copy is the buffer),
    /// the host on the second copy, and eliminate-Δ for dΔ + oΔ, from 2x + dΔ.
    pub fn push_delta(
        &self,
        host: &TransitionSequence,
        d_delta: &[u64],
        t_delta: &[u64],
        b1: u64,
    ) -> Result<PushDelta, SurgeryError> {
        self.check_arity(d_delta)?;
        self.check_arity(t_delta)?;
        let p = self.protocol;
        let m = &self.matrices;
        let x = &host.origin;
        let o = self.run_host(host)?;
        let o_delta = self.delta_part(&o);
        let c_delta: Vec<u64> = d_delta
            .iter()
            .zip(&o_delta)
            .map(|(a, b)| a.checked_add(*b).ok_or(SurgeryError::Overflow))
            .collect::<Result<_, _>>()?;
        let elim = self.eliminate_delta(&c_delta)?;
        let e_delta = self.delta_part(&elim.e);
        let e2_delta: Vec<u64> = e_delta.iter().zip(t_delta).map(|(a, b)| a + b).collect();

        let mut warnings = Vec::new();
        // the second copy of x serves as the produce-e buffer
        let (_, t_tilde) = self.t_tilde_for(&o, &e2_delta)?;
        let (_, _, pe) = self.edit_host(host, &t_tilde)?;
        let emax = e2_delta.iter().copied().max().unwrap_or(0);
        let need = (self.d() as u64)
            .checked_mul(1u64 << (self.d() + 1))
            .and_then(|v| v.checked_mul(b1.max(emax)))
            .ok_or(SurgeryError::Overflow)?;
        let buffer = Configuration::from_counts(vec![need; p.num_states()]).map_err(|_| SurgeryError::Overflow)?;
        let x_min = x.counts().iter().copied().min().unwrap_or(0);
        let buffer_ok = self.d() == 0 || x_min >= need;
        if !buffer_ok {
            warnings.push(format!("x (min count {x_min}) is smaller than the buffer ({need} per state)"));
        }
        let bmax = d_delta.iter().copied().max().unwrap_or(0);
        let (b2_statement, b2_proof) = self.b2_bounds(b1, bmax, emax);
        if self.d() > 0 && (x_min as u128) < b2_statement.min(b2_proof) {
            warnings.push(format!("x is below both b2 forms ({b2_statement}, {b2_proof})"));
        }

        let origin = x
            .scale(2)
            .and_then(|c| c.checked_add(&self.from_delta(d_delta).expect("arity checked")))
            .map_err(|_| SurgeryError::Overflow)?;
        let mut steps = pe;
        steps.extend_from_slice(&host.steps);
        steps.extend_from_slice(&elim.path.steps);
        let full = TransitionSequence::new(origin, steps);

        let mut predicted = vec![0i64; p.num_states()];
        let og: Vec<i64> = to_i64(&self.gamma_part(&o))?.iter().map(|v| 2 * v).collect();
        self.add_gamma(&mut predicted, &og)?;
        let od = to_i64(&o_delta)?;
        let dd = to_i64(d_delta)?;
        let td = to_i64(t_delta)?;
        self.add_gamma(&mut predicted, &m.d1.mul_vec(&od)?)?;
        self.add_gamma(&mut predicted, &m.d2.mul_vec(&dd)?)?;
        let c3t: Vec<i64> = m.c3.mul_vec(&td)?.iter().map(|v| -v).collect();
        self.add_gamma(&mut predicted, &c3t)?;
        self.add_delta(&mut predicted, &td)?;

        if let Validity::FirstFailure { index, state } = verify_path_validity(p, &full.origin, &full.steps) {
            if !buffer_ok {
                return Err(SurgeryError::BufferTooSmall { needed: need, available: x_min, index });
            }
            return Err(SurgeryError::InvalidEdit { index, state: p.name(state).to_string() });
        }
        let final_config = full.execute(p).expect("validated above");
        if to_i64(final_config.counts())? != predicted {
            return Err(SurgeryError::AlgebraMismatch { predicted, executed: final_config.into_counts() });
        }
        Ok(PushDelta {
            c_delta,
            e: elim.e,
            e2_delta,
            buffer,
            full,
            predicted,
            final_config,
            b2_statement,
            b2_proof,
            warnings,
        })
    }

    /// Removes the last −t̃(j) copies of τj from `host` and appends t̃(j)
    /// copies for positive entries, in ordering order.
    fn edit_host(&self, host: &TransitionSequence, t_tilde: &[i64]) -> Result<(Vec<u64>, Vec<u64>, Vec<usize>), SurgeryError> {
        let d = self.d();
        let mut additions = vec![0u64; d];
        let mut removals = vec![0u64; d];
        let mut drop = vec![false; host.steps.len()];
        for (j, tj) in t_tilde.iter().enumerate() {
            let rule = self.ordering.witnesses[j];
            if *tj >= 0 {
                additions[j] = *tj as u64;
                continue;
            }
            let need = tj.unsigned_abs();
            removals[j] = need;
            let positions: Vec<usize> = (0..host.steps.len()).filter(|i| host.steps[*i] == rule).collect();
            if (positions.len() as u64) < need {
                return Err(SurgeryError::InsufficientOccurrences {
                    rule: self.protocol.rule_label(rule),
                    needed: need,
                    present: positions.len() as u64,
                });
            }
            for i in &positions[positions.len() - need as usize..] {
                drop[*i] = true;
            }
        }
        let mut steps: Vec<usize> = host
            .steps
            .iter()
            .zip(&drop)
            .filter(|(_, dropped)| !**dropped)
            .map(|(r, _)| *r)
            .collect();
        for (j, k) in additions.iter().enumerate() {
            steps.extend(std::iter::repeat_n(self.ordering.witnesses[j], *k as usize));
        }
        Ok((additions, removals, steps))
    }

    fn run_host(&self, host: &TransitionSequence) -> Result<Configuration, SurgeryError> {
        host.execute(self.protocol).map_err(|e| match e {
            crate::ConfigError::InvalidAt(i) => SurgeryError::InvalidHost(i),
            _ => SurgeryError::InvalidHost(0),
        })
    }

    fn t_tilde_for(&self, o: &Configuration, e_delta: &[u64]) -> Result<(Vec<i64>, Vec<i64>), SurgeryError> {
        let c_tilde: Vec<i64> = to_i64(&self.delta_part(o))?
            .iter()
            .zip(to_i64(e_delta)?)
            .map(|(a, b)| a - b)
            .collect();
        let t_tilde = self.matrices.t_tilde.mul_vec(&c_tilde)?;
        Ok((c_tilde, t_tilde))
    }

    pub fn trace(&self) -> SurgeryTrace {
        let p = self.protocol;
        SurgeryTrace {
            states: p.names().to_vec(),
            delta: self.ordering.delta.iter().map(|s| p.name(*s).to_string()).collect(),
            gamma: self.gamma.iter().map(|s| p.name(*s).to_string()).collect(),
            witnesses: self.ordering.witnesses.iter().map(|r| p.rule_label(*r)).collect(),
            matrices: Some(self.matrices.clone()),
            elimination: None,
            produce_e: None,
            push_delta: None,
        }
    }
}
