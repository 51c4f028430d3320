//! Exhaustive reachability on small populations: `post(c)`, output
//! stability, stable computation / decision checks, and bottleneck scans.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{apply_in_place, is_applicable, Configuration, TransitionSequence};
use crate::protocol::{Protocol, StateId};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("exploration budget exceeded after {} configurations", .0.members.len())]
    BudgetExceeded(Box<ReachSet>),
    #[error("protocol lacks role: {0}")]
    MissingRole(&'static str),
    #[error("input vector has {got} entries, protocol has {want} inputs")]
    InputArity { got: usize, want: usize },
    #[error("path invalid at step {0}")]
    InvalidPath(usize),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_configs: usize,
    pub max_edges: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_configs: 1_000_000, max_edges: 10_000_000 }
    }
}

/// Configurations reachable from `origin`, in BFS order with origin first.
#[derive(Debug, Clone)]
pub struct ReachSet {
    pub origin: Configuration,
    pub members: Vec<Configuration>,
    index: HashMap<Configuration, usize>,
    /// Per member: `(rule, target member)` for every applicable non-null rule.
    pub edges: Vec<Vec<(usize, usize)>>,
    parent: Vec<Option<(usize, usize)>>,
    pub exhaustive: bool,
}

impl ReachSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, c: &Configuration) -> bool {
        self.index.contains_key(c)
    }

    pub fn index_of(&self, c: &Configuration) -> Option<usize> {
        self.index.get(c).copied()
    }

    /// Rules of a BFS-tree path from the origin to member `i`.
    pub fn path_to(&self, mut i: usize) -> Vec<usize> {
        let mut rules = Vec::new();
        while let Some((prev, r)) = self.parent[i] {
            rules.push(r);
            i = prev;
        }
        rules.reverse();
        rules
    }
}

/// Breadth-first closure of `c` under the non-null rules of `p`.
pub fn post(p: &Protocol, c: &Configuration, limits: Limits) -> Result<ReachSet, VerifyError> {
    let mut rs = ReachSet {
        origin: c.clone(),
        members: vec![c.clone()],
        index: HashMap::from([(c.clone(), 0)]),
        edges: Vec::new(),
        parent: vec![None],
        exhaustive: false,
    };
    let mut queue = VecDeque::from([0usize]);
    let mut edge_count = 0usize;
    while let Some(i) = queue.pop_front() {
        let cur = rs.members[i].clone();
        let mut out = Vec::new();
        for (r, t) in p.rules().iter().enumerate() {
            if !is_applicable(&cur, t) {
                continue;
            }
            let mut next = cur.clone();
            apply_in_place(&mut next, t).expect("checked applicable");
            let j = match rs.index.get(&next) {
                Some(j) => *j,
                None => {
                    if rs.members.len() >= limits.max_configs {
                        rs.edges.push(out);
                        return Err(VerifyError::BudgetExceeded(Box::new(rs)));
                    }
                    let j = rs.members.len();
                    rs.members.push(next.clone());
                    rs.index.insert(next, j);
                    rs.parent.push(Some((i, r)));
                    queue.push_back(j);
                    j
                }
            };
            out.push((r, j));
            edge_count += 1;
            if edge_count > limits.max_edges {
                rs.edges.push(out);
                return Err(VerifyError::BudgetExceeded(Box::new(rs)));
            }
        }
        rs.edges.push(out);
    }
    rs.exhaustive = true;
    Ok(rs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputConvention {
    /// Output is the count of the given state.
    FunctionOutput(StateId),
    /// Output is `b` when every agent votes `b`; states in the list vote 1.
    PredicateVote(Vec<StateId>),
}

impl OutputConvention {
    /// `None` when the output is undefined (split or empty vote).
    pub fn output(&self, c: &Configuration) -> Option<u64> {
        match self {
            OutputConvention::FunctionOutput(y) => Some(c.get(*y)),
            OutputConvention::PredicateVote(ones) => {
                let mut vote = None;
                for s in c.support() {
                    let v = ones.contains(&s) as u64;
                    match vote {
                        None => vote = Some(v),
                        Some(w) if w != v => return None,
                        _ => {}
                    }
                }
                vote
            }
        }
    }

    pub fn for_protocol(p: &Protocol) -> Option<OutputConvention> {
        if let Some(v) = &p.roles.voters1 {
            Some(OutputConvention::PredicateVote(v.clone()))
        } else {
            p.roles.output.map(OutputConvention::FunctionOutput)
        }
    }
}

/// Output stability of every member of a closed reach set.
fn stability(rs: &ReachSet, conv: &OutputConvention) -> Vec<bool> {
    let n = rs.members.len();
    let outs: Vec<Option<u64>> = rs.members.iter().map(|c| conv.output(c)).collect();
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut bad = vec![false; n];
    for i in 0..n {
        if outs[i].is_none() {
            bad[i] = true;
        }
        for &(_, j) in &rs.edges[i] {
            rev[j].push(i);
            if outs[j] != outs[i] {
                bad[i] = true;
            }
        }
    }
    // A member is unstable iff it can reach a bad member.
    let mut unstable = bad.clone();
    let mut queue: VecDeque<usize> = (0..n).filter(|i| bad[*i]).collect();
    while let Some(j) = queue.pop_front() {
        for &i in &rev[j] {
            if !unstable[i] {
                unstable[i] = true;
                queue.push_back(i);
            }
        }
    }
    unstable.into_iter().map(|u| !u).collect()
}

/// Memo of output stability, keyed by configuration.
#[derive(Debug, Default)]
pub struct StabilityCache {
    map: HashMap<(Configuration, bool), bool>,
    pub hits: u64,
}

impl StabilityCache {
    fn key(conv: &OutputConvention, c: &Configuration) -> (Configuration, bool) {
        (c.clone(), matches!(conv, OutputConvention::PredicateVote(_)))
    }

    fn absorb(&mut self, rs: &ReachSet, conv: &OutputConvention, st: &[bool]) {
        for (c, s) in rs.members.iter().zip(st) {
            self.map.insert(Self::key(conv, c), *s);
        }
    }

    /// Cached [`is_output_stable`]. Every member of the explored closure is
    /// memoized, since stability depends only on the configuration.
    pub fn is_output_stable(
        &mut self,
        p: &Protocol,
        c: &Configuration,
        conv: &OutputConvention,
        limits: Limits,
    ) -> Result<bool, VerifyError> {
        if let Some(s) = self.map.get(&Self::key(conv, c)) {
            self.hits += 1;
            return Ok(*s);
        }
        let rs = post(p, c, limits)?;
        let st = stability(&rs, conv);
        self.absorb(&rs, conv, &st);
        Ok(st[0])
    }
}

/// True iff every configuration reachable from `c` has the same defined output.
pub fn is_output_stable(
    p: &Protocol,
    c: &Configuration,
    conv: &OutputConvention,
    limits: Limits,
) -> Result<bool, VerifyError> {
    let rs = post(p, c, limits)?;
    Ok(stability(&rs, conv)[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Exact(u64),
    /// Inclusive range of acceptable outputs.
    Interval(u64, u64),
}

impl Expected {
    pub fn accepts(&self, v: u64) -> bool {
        match *self {
            Expected::Exact(x) => v == x,
            Expected::Interval(lo, hi) => lo <= v && v <= hi,
        }
    }
}

/// One initial configuration to certify.
#[derive(Debug, Clone)]
pub struct Case {
    pub input: Vec<u64>,
    pub a: Option<u64>,
    pub initial: Configuration,
    pub expected: Expected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    /// A reachable configuration from which no correct stable one is reachable.
    pub configuration: Vec<u64>,
    pub path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseReport {
    pub input: Vec<u64>,
    pub a: Option<u64>,
    pub n: u64,
    pub expected: Expected,
    pub verdict: Verdict,
    pub explored: usize,
    /// Distinct outputs of the reachable stable configurations.
    pub stable_outputs: Vec<u64>,
    pub witness: Option<Witness>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub cases: Vec<CaseReport>,
}

impl CheckReport {
    /// No failures and nothing inconclusive. Skipped cases do not count against.
    pub fn all_pass(&self) -> bool {
        self.cases
            .iter()
            .all(|c| matches!(c.verdict, Verdict::Pass | Verdict::Skipped))
    }

    pub fn count(&self, v: Verdict) -> usize {
        self.cases.iter().filter(|c| c.verdict == v).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Certifies each case: every reachable configuration can still reach a
/// stable configuration whose output the case accepts.
pub fn check_cases(
    p: &Protocol,
    conv: &OutputConvention,
    cases: &[Case],
    limits: Limits,
    cache: &mut StabilityCache,
) -> CheckReport {
    let mut report = CheckReport::default();
    for case in cases {
        let mut cr = CaseReport {
            input: case.input.clone(),
            a: case.a,
            n: case.initial.n(),
            expected: case.expected,
            verdict: Verdict::Pass,
            explored: 0,
            stable_outputs: Vec::new(),
            witness: None,
            note: None,
        };
        if case.initial.n() == 0 {
            cr.verdict = Verdict::Skipped;
            cr.note = Some("empty population: output undefined".into());
            report.cases.push(cr);
            continue;
        }
        let rs = match post(p, &case.initial, limits) {
            Ok(rs) => rs,
            Err(VerifyError::BudgetExceeded(partial)) => {
                cr.verdict = Verdict::Inconclusive;
                cr.explored = partial.members.len();
                cr.note = Some("exploration budget exceeded".into());
                report.cases.push(cr);
                continue;
            }
            Err(e) => unreachable!("post only fails on budget: {e}"),
        };
        cr.explored = rs.len();
        let st = stability(&rs, conv);
        cache.absorb(&rs, conv, &st);
        let n = rs.len();
        let mut good = vec![false; n];
        let mut outs = Vec::new();
        for i in 0..n {
            if st[i] {
                let o = conv.output(&rs.members[i]).expect("stable implies defined");
                outs.push(o);
                good[i] = case.expected.accepts(o);
            }
        }
        outs.sort_unstable();
        outs.dedup();
        cr.stable_outputs = outs;
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, es) in rs.edges.iter().enumerate() {
            for &(_, j) in es {
                rev[j].push(i);
            }
        }
        let mut reaches = good.clone();
        let mut queue: VecDeque<usize> = (0..n).filter(|i| good[*i]).collect();
        while let Some(j) = queue.pop_front() {
            for &i in &rev[j] {
                if !reaches[i] {
                    reaches[i] = true;
                    queue.push_back(i);
                }
            }
        }
        if let Some(bad) = (0..n).find(|i| !reaches[*i]) {
            cr.verdict = Verdict::Fail;
            cr.witness = Some(Witness {
                configuration: rs.members[bad].counts().to_vec(),
                path: rs.path_to(bad).iter().map(|r| p.rule_label(*r)).collect(),
            });
        }
        report.cases.push(cr);
    }
    report
}

fn input_config(p: &Protocol, m: &[u64]) -> Result<Configuration, VerifyError> {
    let want = p.roles.inputs.len();
    if m.len() != want {
        return Err(VerifyError::InputArity { got: m.len(), want });
    }
    let mut c = Configuration::zeros(p.num_states());
    for (s, k) in p.roles.inputs.iter().zip(m) {
        c.add(*s, *k).map_err(|e| VerifyError::Domain(e.to_string()))?;
    }
    Ok(c)
}

/// Checks that `p` stably computes `f` from the initial configurations
/// `m` on the inputs plus `q0(m)` quiescent agents.
pub fn check_stable_computation(
    p: &Protocol,
    f: &dyn Fn(&[u64]) -> u64,
    inputs: &[Vec<u64>],
    q0: &dyn Fn(&[u64]) -> u64,
    limits: Limits,
) -> Result<CheckReport, VerifyError> {
    let y = p.roles.output.ok_or(VerifyError::MissingRole("output"))?;
    let mut cases = Vec::new();
    for m in inputs {
        let mut c = input_config(p, m)?;
        let q = q0(m);
        if q > 0 {
            let qs = p.roles.quiescent.ok_or(VerifyError::MissingRole("quiescent"))?;
            c.add(qs, q).map_err(|e| VerifyError::Domain(e.to_string()))?;
        }
        cases.push(Case { input: m.clone(), a: None, initial: c, expected: Expected::Exact(f(m)) });
    }
    let conv = OutputConvention::FunctionOutput(y);
    Ok(check_cases(p, &conv, &cases, limits, &mut StabilityCache::default()))
}

/// Checks that `p` stably decides `phi` from configurations of input states only.
pub fn check_stable_decision(
    p: &Protocol,
    phi: &dyn Fn(&[u64]) -> bool,
    inputs: &[Vec<u64>],
    limits: Limits,
) -> Result<CheckReport, VerifyError> {
    let ones = p.roles.voters1.clone().ok_or(VerifyError::MissingRole("voters1"))?;
    let mut cases = Vec::new();
    for m in inputs {
        let c = input_config(p, m)?;
        cases.push(Case { input: m.clone(), a: None, initial: c, expected: Expected::Exact(phi(m) as u64) });
    }
    let conv = OutputConvention::PredicateVote(ones);
    Ok(check_cases(p, &conv, &cases, limits, &mut StabilityCache::default()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BottleneckHit {
    pub step: usize,
    pub rule: usize,
    pub count_r1: u64,
    pub count_r2: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BottleneckReport {
    pub threshold: u64,
    pub hits: Vec<BottleneckHit>,
}

/// Steps whose rule fires while both input counts are at most `b`.
pub fn find_bottlenecks(p: &Protocol, path: &TransitionSequence, b: u64) -> Result<BottleneckReport, VerifyError> {
    let mut cur = path.origin.clone();
    let mut hits = Vec::new();
    for (i, r) in path.steps.iter().enumerate() {
        let t = p.rule(*r);
        let (c1, c2) = (cur.get(t.r1), cur.get(t.r2));
        if c1 <= b && c2 <= b {
            hits.push(BottleneckHit { step: i, rule: *r, count_r1: c1, count_r2: c2 });
        }
        apply_in_place(&mut cur, t).map_err(|_| VerifyError::InvalidPath(i))?;
    }
    Ok(BottleneckReport { threshold: b, hits })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BottleneckNorm {
    /// (1/|Λ|)·sqrt(n / (6 t))
    #[default]
    SixT,
    /// (1/(4|Λ|))·sqrt(n / t)
    QuarterLambda,
}

/// Bottleneck scale b(n) for a population of `n` agents and time bound `t_n`.
pub fn bottleneck_threshold(n: f64, t_n: f64, lam: usize, norm: BottleneckNorm) -> Result<f64, VerifyError> {
    if !(t_n > 0.0) {
        return Err(VerifyError::Domain(format!("time bound must be positive, got {t_n}")));
    }
    if lam == 0 {
        return Err(VerifyError::Domain("state count must be positive".into()));
    }
    let lam = lam as f64;
    Ok(match norm {
        BottleneckNorm::SixT => (n / (6.0 * t_n)).sqrt() / lam,
        BottleneckNorm::QuarterLambda => (n / t_n).sqrt() / (4.0 * lam),
    })
}
