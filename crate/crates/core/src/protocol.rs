//! Protocol definitions: states, the symmetric transition function and role
//! annotations, plus the line-oriented text format.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("pair ({0}, {1}) has two different outputs: {2} and {3}")]
    DuplicateTransition(String, String, String, String),
    #[error("role error: {0}")]
    Role(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("invalid state name `{0}` (allowed: [A-Za-z0-9_]+)")]
    InvalidName(String),
    #[error("state `{0}` declared twice")]
    DuplicateState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

impl StateId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// `r1, r2 -> p1, p2`, kept in the order it was declared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transition {
    pub r1: StateId,
    pub r2: StateId,
    pub p1: StateId,
    pub p2: StateId,
}

fn sorted(a: StateId, b: StateId) -> (StateId, StateId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Transition {
    pub fn new(r1: StateId, r2: StateId, p1: StateId, p2: StateId) -> Self {
        Transition { r1, r2, p1, p2 }
    }

    /// Unordered input pair, smaller index first.
    pub fn key(&self) -> (StateId, StateId) {
        sorted(self.r1, self.r2)
    }

    pub fn outputs(&self) -> (StateId, StateId) {
        sorted(self.p1, self.p2)
    }

    pub fn is_null(&self) -> bool {
        self.key() == self.outputs()
    }

    pub fn consumes(&self, s: StateId) -> u64 {
        (self.r1 == s) as u64 + (self.r2 == s) as u64
    }

    pub fn produces(&self, s: StateId) -> u64 {
        (self.p1 == s) as u64 + (self.p2 == s) as u64
    }

    /// Net change of the count of `s` when this transition fires.
    pub fn net(&self, s: StateId) -> i64 {
        self.produces(s) as i64 - self.consumes(s) as i64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub inputs: Vec<StateId>,
    pub output: Option<StateId>,
    pub quiescent: Option<StateId>,
    pub approx: Option<StateId>,
    pub voters1: Option<Vec<StateId>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Protocol {
    names: Vec<String>,
    index: HashMap<String, StateId>,
    rules: Vec<Transition>,
    lookup: HashMap<(StateId, StateId), usize>,
    pub roles: Roles,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Protocol {
    pub fn builder() -> ProtocolBuilder {
        ProtocolBuilder::default()
    }

    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.names.len()).map(StateId)
    }

    pub fn name(&self, s: StateId) -> &str {
        &self.names[s.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn state(&self, name: &str) -> Option<StateId> {
        self.index.get(name).copied()
    }

    pub fn state_or_err(&self, name: &str) -> Result<StateId, ProtocolError> {
        self.state(name)
            .ok_or_else(|| ProtocolError::UnknownState(name.to_string()))
    }

    /// Non-null rules in declaration order.
    pub fn rules(&self) -> &[Transition] {
        &self.rules
    }

    pub fn rule(&self, i: usize) -> &Transition {
        &self.rules[i]
    }

    /// Index of the non-null rule for an unordered pair, if any.
    pub fn rule_for(&self, a: StateId, b: StateId) -> Option<usize> {
        self.lookup.get(&sorted(a, b)).copied()
    }

    /// δ(a, b). Unlisted pairs are null.
    pub fn delta(&self, a: StateId, b: StateId) -> (StateId, StateId) {
        match self.rule_for(a, b) {
            Some(i) => (self.rules[i].p1, self.rules[i].p2),
            None => (a, b),
        }
    }

    pub fn label(&self, t: &Transition) -> String {
        format!(
            "{},{} -> {},{}",
            self.name(t.r1),
            self.name(t.r2),
            self.name(t.p1),
            self.name(t.p2)
        )
    }

    pub fn rule_label(&self, i: usize) -> String {
        self.label(&self.rules[i])
    }

    /// Serialize to the text format accepted by [`Protocol::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("states:");
        for n in &self.names {
            out.push(' ');
            out.push_str(n);
        }
        out.push('\n');
        let r = &self.roles;
        if !r.inputs.is_empty() {
            out.push_str("inputs:");
            for s in &r.inputs {
                out.push(' ');
                out.push_str(self.name(*s));
            }
            out.push('\n');
        }
        for (key, role) in [("output", r.output), ("quiescent", r.quiescent), ("approx", r.approx)] {
            if let Some(s) = role {
                out.push_str(&format!("{key}: {}\n", self.name(s)));
            }
        }
        if let Some(v) = &r.voters1 {
            out.push_str("voters1:");
            for s in v {
                out.push(' ');
                out.push_str(self.name(*s));
            }
            out.push('\n');
        }
        for t in &self.rules {
            out.push_str(&format!(
                "transition: {} {} -> {} {}\n",
                self.name(t.r1),
                self.name(t.r2),
                self.name(t.p1),
                self.name(t.p2)
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Protocol, ProtocolError> {
        let mut b = ProtocolBuilder::default();
        let mut seen_keys: Vec<&str> = Vec::new();
        let mut declared = false;
        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| ProtocolError::Parse { line: line_no, msg };
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| perr(format!("expected `key: value`, got `{line}`")))?;
            let key = key.trim();
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if key != "transition" {
                if seen_keys.contains(&key) {
                    return Err(perr(format!("`{key}` declared more than once")));
                }
                seen_keys.push(key);
            }
            let lookup = |name: &str, b: &ProtocolBuilder| {
                b.index.get(name).copied().ok_or_else(|| ProtocolError::Parse {
                    line: line_no,
                    msg: format!("undeclared state `{name}`"),
                })
            };
            match key {
                "states" => {
                    if toks.is_empty() {
                        return Err(perr("empty state list".into()));
                    }
                    for t in toks {
                        if b.index.contains_key(t) {
                            return Err(ProtocolError::DuplicateState(t.to_string()));
                        }
                        b.add_state(t)?;
                    }
                    declared = true;
                }
                _ if !declared => {
                    return Err(perr("`states:` must come before anything else".into()));
                }
                "inputs" => {
                    for t in toks {
                        let s = lookup(t, &b)?;
                        b.roles.inputs.push(s);
                    }
                }
                "voters1" => {
                    let mut v = Vec::new();
                    for t in toks {
                        v.push(lookup(t, &b)?);
                    }
                    b.roles.voters1 = Some(v);
                }
                "output" | "quiescent" | "approx" => {
                    if toks.len() != 1 {
                        return Err(perr(format!("`{key}` takes exactly one state")));
                    }
                    let s = Some(lookup(toks[0], &b)?);
                    match key {
                        "output" => b.roles.output = s,
                        "quiescent" => b.roles.quiescent = s,
                        _ => b.roles.approx = s,
                    }
                }
                "transition" => {
                    if toks.len() != 5 || toks[2] != "->" {
                        return Err(perr("expected `transition: r1 r2 -> p1 p2`".into()));
                    }
                    let r1 = lookup(toks[0], &b)?;
                    let r2 = lookup(toks[1], &b)?;
                    let p1 = lookup(toks[3], &b)?;
                    let p2 = lookup(toks[4], &b)?;
                    b.push_rule(Transition::new(r1, r2, p1, p2))?;
                }
                other => return Err(perr(format!("unknown key `{other}`"))),
            }
        }
        if !declared {
            return Err(ProtocolError::Parse { line: 0, msg: "no `states:` line".into() });
        }
        b.build()
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProtocolBuilder {
    names: Vec<String>,
    index: HashMap<String, StateId>,
    rules: Vec<Transition>,
    // every declared pair, null or not, for conflict detection
    declared: HashMap<(StateId, StateId), (StateId, StateId)>,
    pub roles: Roles,
}

impl ProtocolBuilder {
    /// Declares a state (idempotent) and returns its id.
    pub fn add_state(&mut self, name: &str) -> Result<StateId, ProtocolError> {
        if let Some(s) = self.index.get(name) {
            return Ok(*s);
        }
        if !valid_name(name) {
            return Err(ProtocolError::InvalidName(name.to_string()));
        }
        let id = StateId(self.names.len());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn states(mut self, names: &[&str]) -> Result<Self, ProtocolError> {
        for n in names {
            self.add_state(n)?;
        }
        Ok(self)
    }

    fn id(&self, name: &str) -> Result<StateId, ProtocolError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| ProtocolError::UnknownState(name.to_string()))
    }

    fn push_rule(&mut self, t: Transition) -> Result<(), ProtocolError> {
        let key = t.key();
        if let Some(prev) = self.declared.get(&key) {
            if *prev != t.outputs() {
                let n = |s: StateId| self.names[s.0].clone();
                return Err(ProtocolError::DuplicateTransition(
                    n(key.0),
                    n(key.1),
                    format!("{},{}", n(prev.0), n(prev.1)),
                    format!("{},{}", n(t.p1), n(t.p2)),
                ));
            }
            return Ok(());
        }
        self.declared.insert(key, t.outputs());
        if !t.is_null() {
            self.rules.push(t);
        }
        Ok(())
    }

    /// Adds `r1, r2 -> p1, p2`, declaring any new state names on the way.
    pub fn rule(mut self, r1: &str, r2: &str, p1: &str, p2: &str) -> Result<Self, ProtocolError> {
        self.add_rule(r1, r2, p1, p2)?;
        Ok(self)
    }

    pub fn add_rule(&mut self, r1: &str, r2: &str, p1: &str, p2: &str) -> Result<(), ProtocolError> {
        let t = Transition::new(
            self.add_state(r1)?,
            self.add_state(r2)?,
            self.add_state(p1)?,
            self.add_state(p2)?,
        );
        self.push_rule(t)
    }

    pub fn inputs(mut self, names: &[&str]) -> Result<Self, ProtocolError> {
        self.roles.inputs = names.iter().map(|n| self.id(n)).collect::<Result<_, _>>()?;
        Ok(self)
    }

    pub fn output(mut self, name: &str) -> Result<Self, ProtocolError> {
        self.roles.output = Some(self.id(name)?);
        Ok(self)
    }

    pub fn quiescent(mut self, name: &str) -> Result<Self, ProtocolError> {
        self.roles.quiescent = Some(self.id(name)?);
        Ok(self)
    }

    pub fn approx(mut self, name: &str) -> Result<Self, ProtocolError> {
        self.roles.approx = Some(self.id(name)?);
        Ok(self)
    }

    pub fn voters1(mut self, names: &[&str]) -> Result<Self, ProtocolError> {
        self.roles.voters1 = Some(names.iter().map(|n| self.id(n)).collect::<Result<_, _>>()?);
        Ok(self)
    }

    pub fn build(self) -> Result<Protocol, ProtocolError> {
        let r = &self.roles;
        let name = |s: StateId| self.names[s.0].clone();
        for (i, s) in r.inputs.iter().enumerate() {
            if r.inputs[..i].contains(s) {
                return Err(ProtocolError::Role(format!("input `{}` listed twice", name(*s))));
            }
        }
        if let Some(q) = r.quiescent {
            if r.inputs.contains(&q) {
                return Err(ProtocolError::Role(format!("quiescent state `{}` is an input", name(q))));
            }
        }
        if let Some(a) = r.approx {
            if r.inputs.contains(&a) || r.output == Some(a) || r.quiescent == Some(a) {
                return Err(ProtocolError::Role(format!(
                    "approximation state `{}` must differ from inputs, output and quiescent",
                    name(a)
                )));
            }
        }
        let lookup = self
            .rules
            .iter()
            .enumerate()
            .map(|(i, t)| (t.key(), i))
            .collect();
        Ok(Protocol {
            names: self.names,
            index: self.index,
            rules: self.rules,
            lookup,
            roles: self.roles,
        })
    }
}
