//! The builtin protocol zoo and the two linear-function compilers.

use serde::Serialize;
use thiserror::Error;

use crate::config::Configuration;
use crate::linear::{classify_linear, LinearSpec};
use crate::protocol::{Protocol, ProtocolBuilder, ProtocolError, StateId};
use crate::sim::{StopCondition, StopPredicate};
use crate::verify::{Case, Expected, OutputConvention};

pub const BUILTINS: [&str; 7] = ["double", "halve_slow", "halve_fast", "subtract", "majority", "parity", "equality"];

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("unknown builtin `{0}` (known: double, halve_slow, halve_fast, subtract, majority, parity, equality)")]
    UnknownName(String),
    #[error("coefficient {index} is {value}, not a natural number")]
    NonNaturalCoefficient { index: usize, value: String },
    #[error("coefficient {index} is negative ({value})")]
    NegativeCoefficient { index: usize, value: String },
    #[error("expected {want} input counts, got {got}")]
    Arity { got: usize, want: usize },
    #[error("approximation count a = {a} is below the minimum {a0}")]
    ApproxCount { a: u64, a0: u64 },
    #[error("input {0:?} is outside the function's domain")]
    Domain(Vec<u64>),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Double,
    HalveSlow,
    HalveFast,
    Subtract,
    Majority,
    Parity,
    Equality,
    NLinear(Vec<u64>),
    QLinear(LinearSpec),
    /// Loaded from a file: no layout or oracle beyond the declared roles.
    Custom,
}

/// A protocol together with its input layout, stop predicate and oracle.
#[derive(Debug, Clone)]
pub struct ProtocolInstance {
    pub name: String,
    pub protocol: Protocol,
    pub kind: Kind,
    /// Stabilized iff all of these are at count 0; empty means "use silence".
    pub drain: Vec<StateId>,
}

impl ProtocolInstance {
    pub fn custom(name: impl Into<String>, protocol: Protocol) -> Self {
        ProtocolInstance { name: name.into(), protocol, kind: Kind::Custom, drain: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.protocol.roles.inputs.len()
    }

    pub fn is_predicate(&self) -> bool {
        self.protocol.roles.voters1.is_some()
    }

    pub fn is_approximator(&self) -> bool {
        self.protocol.roles.approx.is_some()
    }

    /// Minimum initial a-count for approximators.
    pub fn a0(&self) -> u64 {
        self.is_approximator() as u64
    }

    /// Default quiescent count for input `m`.
    pub fn q0(&self, m: &[u64], a: u64) -> u64 {
        let total: u64 = m.iter().sum();
        match &self.kind {
            Kind::Double => total,
            Kind::Subtract => m[0],
            Kind::NLinear(c) => c.iter().zip(m).map(|(c, m)| c * m).sum::<u64>() + 1,
            Kind::QLinear(spec) => {
                let k = spec.k() as u64;
                let pm: u64 = spec
                    .coeffs
                    .iter()
                    .zip(m)
                    .map(|(c, m)| *c.numer() as u64 * m)
                    .sum();
                2 * (2 * k * a + pm) + total + a
            }
            _ => 0,
        }
    }

    /// Constant `c` with q0(m, a) ≤ c·(‖m‖ + a).
    pub fn q0_constant(&self) -> u64 {
        match &self.kind {
            Kind::Double | Kind::Subtract => 1,
            // +1 is absorbed once ‖m‖ ≥ 1
            Kind::NLinear(c) => c.iter().copied().max().unwrap_or(0) + 1,
            Kind::QLinear(spec) => {
                let k = spec.k() as u64;
                let p = spec.coeffs.iter().map(|c| *c.numer() as u64).max().unwrap_or(0);
                4 * k + 2 * p + 1
            }
            _ => 0,
        }
    }

    /// Valid initial configuration for input `m`, approximation count `a`
    /// and quiescent count `q0(m, a)` unless overridden.
    pub fn initial(&self, m: &[u64], a: Option<u64>, q0: Option<u64>) -> Result<Configuration, crate::Error> {
        let p = &self.protocol;
        if m.len() != self.k() {
            return Err(CompileError::Arity { got: m.len(), want: self.k() }.into());
        }
        let mut c = Configuration::zeros(p.num_states());
        for (s, x) in p.roles.inputs.iter().zip(m) {
            c.add(*s, *x)?;
        }
        let a = match p.roles.approx {
            Some(sa) => {
                let a = a.unwrap_or(0);
                if a < self.a0() {
                    return Err(CompileError::ApproxCount { a, a0: self.a0() }.into());
                }
                c.add(sa, a)?;
                a
            }
            None => 0,
        };
        let q = q0.unwrap_or_else(|| self.q0(m, a));
        if q > 0 {
            let sq = p.roles.quiescent.ok_or(crate::verify::VerifyError::MissingRole("quiescent"))?;
            c.add(sq, q)?;
        }
        Ok(c)
    }

    /// Correct output for `m`, or `None` outside the domain or for `Custom`.
    pub fn expected(&self, m: &[u64], a: u64) -> Option<Expected> {
        let total: u64 = m.iter().sum();
        let e = match &self.kind {
            Kind::Double => Expected::Exact(2 * m[0]),
            Kind::HalveSlow => Expected::Exact(m[0] / 2),
            Kind::HalveFast => Expected::Interval(m[0] / 2, m[0] / 2 + a),
            Kind::Subtract => Expected::Exact(m[0].checked_sub(m[1])?),
            Kind::Majority => Expected::Exact((m[0] >= m[1]) as u64),
            Kind::Parity => Expected::Exact(m[0] % 2),
            Kind::Equality => Expected::Exact((m[0] == m[1]) as u64),
            Kind::NLinear(c) => Expected::Exact(c.iter().zip(m).map(|(c, m)| c * m).sum()),
            Kind::QLinear(spec) => {
                let f = spec.eval(m).ok()? as u64;
                let slack = spec.k() as u64 * a;
                Expected::Interval(f.saturating_sub(slack), f + slack)
            }
            Kind::Custom => return None,
        };
        if self.is_predicate() && total == 0 {
            return None;
        }
        Some(e)
    }

    pub fn convention(&self) -> Option<OutputConvention> {
        OutputConvention::for_protocol(&self.protocol)
    }

    pub fn stabilized(&self) -> Option<StopPredicate> {
        if self.drain.is_empty() {
            return None;
        }
        let names: Vec<&str> = self.drain.iter().map(|s| self.protocol.name(*s)).collect();
        Some(StopPredicate::all_zero(format!("{}=0", names.join("+")), self.drain.clone()))
    }

    /// Stop on the stabilization predicate if there is one, else on silence.
    pub fn stop_condition(&self) -> StopCondition {
        match self.stabilized() {
            Some(pred) => StopCondition::PredicateHolds(pred),
            None => StopCondition::SilentOnly,
        }
    }

    pub fn case(&self, m: &[u64], a: Option<u64>) -> Result<Option<Case>, crate::Error> {
        let initial = self.initial(m, a, None)?;
        let a_count = self.protocol.roles.approx.map(|s| initial.get(s));
        Ok(self.expected(m, a_count.unwrap_or(0)).map(|expected| Case {
            input: m.to_vec(),
            a: a_count,
            initial,
            expected,
        }))
    }

    /// Output value read off a configuration (y-count or unanimous vote).
    pub fn output(&self, c: &Configuration) -> Option<u64> {
        self.convention().and_then(|conv| conv.output(c))
    }
}

fn ids(p: &Protocol, names: &[&str]) -> Vec<StateId> {
    names.iter().map(|n| p.state(n).expect("declared state")).collect()
}

fn instance(name: &str, kind: Kind, p: Protocol, drain: &[&str]) -> ProtocolInstance {
    let drain = ids(&p, drain);
    ProtocolInstance { name: name.to_string(), protocol: p, kind, drain }
}

pub fn builtin(name: &str) -> Result<ProtocolInstance, CompileError> {
    let b = Protocol::builder;
    let inst = match name {
        "double" => {
            let p = b().states(&["x", "q", "y"])?.rule("x", "q", "y", "y")?;
            instance(name, Kind::Double, p.inputs(&["x"])?.output("y")?.quiescent("q")?.build()?, &[])
        }
        "halve_slow" => {
            let p = b().states(&["x", "y", "q"])?.rule("x", "x", "y", "q")?;
            instance(name, Kind::HalveSlow, p.inputs(&["x"])?.output("y")?.quiescent("q")?.build()?, &[])
        }
        "halve_fast" => {
            let p = b()
                .states(&["a", "b", "x", "y", "q"])?
                .rule("a", "x", "b", "y")?
                .rule("b", "x", "a", "q")?
                .inputs(&["x"])?
                .output("y")?
                .quiescent("q")?
                .approx("a")?
                .build()?;
            instance(name, Kind::HalveFast, p, &["x"])
        }
        "subtract" => {
            let p = b()
                .states(&["x1", "x2", "q", "y"])?
                .rule("x1", "q", "y", "q")?
                .rule("x2", "y", "q", "q")?
                .inputs(&["x1", "x2"])?
                .output("y")?
                .quiescent("q")?
                .build()?;
            instance(name, Kind::Subtract, p, &[])
        }
        "majority" => {
            let p = b()
                .states(&["x1", "x2", "q1", "q2"])?
                .rule("x1", "x2", "q1", "q2")?
                .rule("x1", "q2", "x1", "q1")?
                .rule("x2", "q1", "x2", "q2")?
                .rule("q1", "q2", "q1", "q1")?
                .inputs(&["x1", "x2"])?
                .voters1(&["x1", "q1"])?
                .build()?;
            instance(name, Kind::Majority, p, &[])
        }
        "parity" => {
            // x / e: active odd / even token; p0 / p1: passive voters.
            let p = b()
                .states(&["x", "e", "p0", "p1"])?
                .rule("x", "x", "e", "p0")?
                .rule("x", "e", "x", "p1")?
                .rule("e", "e", "e", "p0")?
                .rule("x", "p0", "x", "p1")?
                .rule("e", "p1", "e", "p0")?
                .inputs(&["x"])?
                .voters1(&["x", "p1"])?
                .build()?;
            instance(name, Kind::Parity, p, &[])
        }
        "equality" => {
            let p = b()
                .states(&["x1", "x2", "e", "n"])?
                .rule("x1", "x2", "e", "e")?
                .rule("x1", "e", "x1", "n")?
                .rule("x2", "e", "x2", "n")?
                .rule("e", "n", "e", "e")?
                .inputs(&["x1", "x2"])?
                .voters1(&["e"])?
                .build()?;
            instance(name, Kind::Equality, p, &[])
        }
        _ => return Err(CompileError::UnknownName(name.to_string())),
    };
    Ok(inst)
}

/// Emits `x,q → y,x_p{c-1}; …; x_p2,q → y,y`, i.e. c−2 intermediates.
fn push_chain(
    b: &mut ProtocolBuilder,
    x: &str,
    c: u64,
    y: &str,
    drain: &mut Vec<String>,
) -> Result<(), ProtocolError> {
    drain.push(x.to_string());
    match c {
        0 => b.add_rule(x, "q", "q", "q"),
        1 => b.add_rule(x, "q", y, "q"),
        2 => b.add_rule(x, "q", y, y),
        _ => {
            let mut cur = x.to_string();
            for j in (2..c).rev() {
                let next = format!("{x}_p{j}");
                b.add_rule(&cur, "q", y, &next)?;
                drain.push(next.clone());
                cur = next;
            }
            b.add_rule(&cur, "q", y, y)
        }
    }
}

pub fn compile_nlinear(c: &[u64]) -> Result<ProtocolInstance, CompileError> {
    let mut b = Protocol::builder();
    let xs: Vec<String> = (1..=c.len()).map(|i| format!("x{i}")).collect();
    for x in &xs {
        b.add_state(x)?;
    }
    b.add_state("q")?;
    b.add_state("y")?;
    let mut drain = Vec::new();
    for (x, ci) in xs.iter().zip(c) {
        push_chain(&mut b, x, *ci, "y", &mut drain)?;
    }
    let xr: Vec<&str> = xs.iter().map(String::as_str).collect();
    let p = b.inputs(&xr)?.output("y")?.quiescent("q")?.build()?;
    let dr: Vec<&str> = drain.iter().map(String::as_str).collect();
    let name = format!("nlinear:{}", c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
    Ok(instance(&name, Kind::NLinear(c.to_vec()), p, &dr))
}

/// Like [`compile_nlinear`] but from rational coefficients, rejecting
/// anything outside ℕ.
pub fn compile_nlinear_spec(spec: &LinearSpec) -> Result<ProtocolInstance, CompileError> {
    let mut c = Vec::with_capacity(spec.k());
    for (i, r) in spec.coeffs.iter().enumerate() {
        if !r.is_integer() || *r.numer() < 0 {
            return Err(CompileError::NonNaturalCoefficient { index: i + 1, value: r.to_string() });
        }
        c.push(*r.numer() as u64);
    }
    compile_nlinear(&c)
}

pub fn compile_qlinear_approx(spec: &LinearSpec) -> Result<ProtocolInstance, CompileError> {
    if !classify_linear(spec).nonnegative {
        let (i, r) = spec.coeffs.iter().enumerate().find(|(_, r)| **r < 0.into()).expect("has a negative");
        return Err(CompileError::NegativeCoefficient { index: i + 1, value: r.to_string() });
    }
    let k = spec.k();
    let mut b = Protocol::builder();
    let xs: Vec<String> = (1..=k).map(|i| format!("x{i}")).collect();
    for x in &xs {
        b.add_state(x)?;
    }
    for s in ["q", "y", "a"] {
        b.add_state(s)?;
    }
    let mut drain = Vec::new();

    // multiply group
    for (i, (x, c)) in xs.iter().zip(&spec.coeffs).enumerate() {
        let pi = *c.numer() as u64;
        let yi = format!("y{}", i + 1);
        match pi {
            0 => push_chain(&mut b, x, 0, "y", &mut drain)?,
            _ => {
                push_chain(&mut b, x, pi, &yi, &mut drain)?;
                drain.push(yi);
            }
        }
    }

    // splitting group: leaves a_<b(i)> for i = 1..k, or `a` itself when k = 1
    let cycle_start = |i: usize| if k == 1 { "a".to_string() } else { format!("a{i}_1") };
    if k > 1 {
        let l = usize::BITS - (k - 1).leading_zeros();
        let mut level = vec![String::new()];
        for _ in 0..l {
            let mut next = Vec::with_capacity(level.len() * 2);
            for bits in &level {
                let parent = if bits.is_empty() { "a".to_string() } else { format!("a_{bits}") };
                let (l0, l1) = (format!("{bits}0"), format!("{bits}1"));
                b.add_rule(&parent, "q", &format!("a_{l0}"), &format!("a_{l1}"))?;
                next.push(l0);
                next.push(l1);
            }
            level = next;
        }
        for (i, bits) in level.iter().take(k).enumerate() {
            b.add_rule(&format!("a_{bits}"), "q", &cycle_start(i + 1), "q")?;
        }
    }

    // division group
    for (i, c) in spec.coeffs.iter().enumerate() {
        let (pi, ri) = (*c.numer(), *c.denom());
        if pi == 0 {
            continue;
        }
        let yi = format!("y{}", i + 1);
        if ri == 1 {
            b.add_rule(&yi, "q", "y", "q")?;
            continue;
        }
        let st = |j: i64| if j == 1 { cycle_start(i + 1) } else { format!("a{}_{j}", i + 1) };
        b.add_rule(&st(1), &yi, &st(2), "y")?;
        for j in 2..ri {
            b.add_rule(&st(j), &yi, &st(j + 1), "q")?;
        }
        b.add_rule(&st(ri), &yi, &st(1), "q")?;
    }

    let xr: Vec<&str> = xs.iter().map(String::as_str).collect();
    let p = b.inputs(&xr)?.output("y")?.quiescent("q")?.approx("a")?.build()?;
    let dr: Vec<&str> = drain.iter().map(String::as_str).collect();
    Ok(instance(&format!("qlinear:{spec}"), Kind::QLinear(spec.clone()), p, &dr))
}

/// Resolves `builtin:NAME`, `nlinear:4,1,2` or `qlinear:1/2,3`.
pub fn from_spec_string(s: &str) -> Result<ProtocolInstance, crate::Error> {
    if let Some(name) = s.strip_prefix("builtin:") {
        return Ok(builtin(name)?);
    }
    if let Some(cs) = s.strip_prefix("nlinear:") {
        return Ok(compile_nlinear_spec(&LinearSpec::parse(cs)?)?);
    }
    if let Some(cs) = s.strip_prefix("qlinear:") {
        return Ok(compile_qlinear_approx(&LinearSpec::parse(cs)?)?);
    }
    Ok(builtin(s)?)
}
