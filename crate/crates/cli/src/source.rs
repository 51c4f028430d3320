//! Protocol sources and the `x1=30,x2=20` input grammar.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use popproto::protocols::{self, ProtocolInstance};
use popproto::{Configuration, Protocol};

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct SourceArgs {
    /// Builtin protocol name (double, halve_fast, majority, ...).
    #[arg(long)]
    pub builtin: Option<String>,
    /// Protocol text file.
    #[arg(long)]
    pub protocol: Option<PathBuf>,
    /// Natural coefficients, e.g. `4,1,2`.
    #[arg(long)]
    pub compile_nlinear: Option<String>,
    /// Nonnegative rational coefficients, e.g. `1/2,3`.
    #[arg(long)]
    pub compile_qlinear: Option<String>,
    /// `builtin:NAME`, `nlinear:C` or `qlinear:C`.
    #[arg(long)]
    pub spec: Option<String>,
}

impl SourceArgs {
    /// `oracle` attaches a builtin or compiled instance's layout and
    /// expected outputs to a protocol file.
    pub fn load(&self, oracle: Option<&str>) -> Result<ProtocolInstance> {
        if let Some(path) = &self.protocol {
            return load_file(path, oracle);
        }
        let spec = if let Some(b) = &self.builtin {
            format!("builtin:{b}")
        } else if let Some(c) = &self.compile_nlinear {
            format!("nlinear:{c}")
        } else if let Some(c) = &self.compile_qlinear {
            format!("qlinear:{c}")
        } else {
            self.spec.clone().expect("clap enforces one source")
        };
        Ok(protocols::from_spec_string(&spec)?)
    }
}

pub fn read_protocol(path: &Path) -> Result<Protocol> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Protocol::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_file(path: &Path, oracle: Option<&str>) -> Result<ProtocolInstance> {
    let p = read_protocol(path)?;
    let name = format!("file:{}", path.display());
    let Some(o) = oracle else {
        return Ok(ProtocolInstance::custom(name, p));
    };
    let o = protocols::from_spec_string(o)?;
    if o.k() != p.roles.inputs.len() {
        bail!("oracle {} takes {} inputs, protocol declares {}", o.name, o.k(), p.roles.inputs.len());
    }
    Ok(ProtocolInstance { name, protocol: p, kind: o.kind, drain: Vec::new() })
}

/// Parses `x=1000` or `x1=30,x2=20` against the instance's input states;
/// unnamed inputs are 0. A bare list `30,20` is taken positionally.
pub fn parse_input(inst: &ProtocolInstance, s: &str) -> Result<Vec<u64>> {
    let p = &inst.protocol;
    let inputs = &p.roles.inputs;
    let mut m = vec![0u64; inputs.len()];
    let s = s.trim();
    if s.is_empty() {
        return Ok(m);
    }
    if !s.contains('=') {
        let vals: Vec<u64> = s
            .split(',')
            .map(|v| v.trim().parse::<u64>().with_context(|| format!("bad count `{v}`")))
            .collect::<Result<_>>()?;
        if vals.len() != inputs.len() {
            bail!("{} takes {} input counts, got {}", inst.name, inputs.len(), vals.len());
        }
        return Ok(vals);
    }
    for part in s.split(',') {
        let (name, v) = part.split_once('=').ok_or_else(|| anyhow!("expected `state=count`, got `{part}`"))?;
        let sid = p.state(name.trim()).ok_or_else(|| anyhow!("unknown state `{}`", name.trim()))?;
        let i = inputs
            .iter()
            .position(|x| *x == sid)
            .ok_or_else(|| anyhow!("`{}` is not an input state", name.trim()))?;
        m[i] = v.trim().parse().with_context(|| format!("bad count `{v}`"))?;
    }
    Ok(m)
}

/// Inverse of `parse_input`: every input named, in declared order.
pub fn format_input(inst: &ProtocolInstance, m: &[u64]) -> String {
    let p = &inst.protocol;
    p.roles
        .inputs
        .iter()
        .zip(m)
        .map(|(s, v)| format!("{}={v}", p.name(*s)))
        .collect::<Vec<_>>()
        .join(",")
}

/// Same grammar over all states, for host origins.
pub fn parse_config(p: &Protocol, s: &str) -> Result<Configuration> {
    let mut c = Configuration::zeros(p.num_states());
    for part in s.split(',').filter(|x| !x.trim().is_empty()) {
        let (name, v) = part.split_once('=').ok_or_else(|| anyhow!("expected `state=count`, got `{part}`"))?;
        let sid = p.state(name.trim()).ok_or_else(|| anyhow!("unknown state `{}`", name.trim()))?;
        c.add(sid, v.trim().parse().with_context(|| format!("bad count `{v}`"))?)?;
    }
    Ok(c)
}

/// `0*7,1*16,2` → rule indices, each repeated.
pub fn parse_steps(p: &Protocol, s: &str) -> Result<Vec<usize>> {
    let mut steps = Vec::new();
    for part in s.split(',').filter(|x| !x.trim().is_empty()) {
        let (r, k) = match part.split_once('*') {
            Some((r, k)) => (r, k.trim().parse::<usize>().with_context(|| format!("bad repeat `{k}`"))?),
            None => (part, 1),
        };
        let r: usize = r.trim().parse().with_context(|| format!("bad rule index `{r}`"))?;
        if r >= p.rules().len() {
            bail!("rule index {r} out of range (protocol has {} rules)", p.rules().len());
        }
        steps.extend(std::iter::repeat_n(r, k));
    }
    Ok(steps)
}

pub fn parse_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|v| v.trim().parse::<u64>().with_context(|| format!("bad count `{v}`")))
        .collect()
}
