//! TOML experiment configs: a list of sweeps, each expanded to points.
//!
//! ```toml
//! seed = 7
//! trials = 20
//! output = "scaling.csv"        # optional, --out wins
//!
//! [[sweep]]
//! protocol = "halve_fast"       # builtin, builtin:NAME, nlinear:C, qlinear:C
//! pow2 = { from = 10, to = 20, step = 2 }
//! a_div = 11                    # a = n / 11, m = n − a
//!
//! [[sweep]]
//! file = "protocols/majority.txt"
//! oracle = "majority"
//! inputs = ["x1=30,x2=20"]
//! ```
//!
//! `n` (or `pow2`) counts input plus helper agents, m + a; quiescent agents
//! come on top. `m` is for single-input protocols, `inputs` uses the
//! command-line grammar.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use popproto::protocols::{self, ProtocolInstance};
use popproto::sim::{estimate_stabilization_time, trial_seed};
use serde::Deserialize;

use crate::rows::{rows_for, Row};
use crate::source;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    pub output: Option<PathBuf>,
    pub budget: Option<u64>,
    #[serde(default)]
    pub sweep: Vec<Sweep>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub protocol: Option<String>,
    pub file: Option<PathBuf>,
    pub oracle: Option<String>,
    #[serde(default)]
    pub n: Vec<u64>,
    pub pow2: Option<Pow2>,
    #[serde(default)]
    pub m: Vec<u64>,
    #[serde(default)]
    pub inputs: Vec<String>,
    pub a: Option<u64>,
    pub a_div: Option<u64>,
    pub gamma: Option<f64>,
    pub q0: Option<u64>,
    pub trials: Option<usize>,
    pub budget: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pow2 {
    pub from: u32,
    pub to: u32,
    #[serde(default = "one_u32")]
    pub step: u32,
}

fn one_u32() -> u32 {
    1
}

/// One initial configuration of a sweep.
pub struct Point {
    pub m: Vec<u64>,
    pub a: Option<u64>,
}

impl Sweep {
    /// Protocol files are resolved against `base`, the config's directory.
    pub fn instance(&self, base: &Path) -> Result<ProtocolInstance> {
        match (&self.protocol, &self.file) {
            (Some(s), None) => Ok(protocols::from_spec_string(s)?),
            (None, Some(f)) => {
                let mut inst = source::load_file(&base.join(f), self.oracle.as_deref())?;
                inst.name = format!("file:{}", f.display());
                Ok(inst)
            }
            _ => bail!("a sweep needs exactly one of `protocol` and `file`"),
        }
    }

    fn helper(&self, inst: &ProtocolInstance, n: Option<u64>, m: Option<u64>) -> Result<Option<u64>> {
        if !inst.is_approximator() {
            return Ok(None);
        }
        let a = match (self.a, self.a_div, self.gamma) {
            (Some(a), None, None) => a,
            (None, Some(div), None) => match n {
                Some(n) if div > 0 => n / div,
                _ => bail!("`a_div` needs `n` or `pow2` and a positive divisor"),
            },
            (None, None, Some(g)) => {
                // a = γ·m, or a = n·γ/(1+γ) when only n is known
                let x = match (n, m) {
                    (_, Some(m)) => g * m as f64,
                    (Some(n), None) => n as f64 * g / (1.0 + g),
                    _ => unreachable!(),
                };
                x.round() as u64
            }
            (None, None, None) => inst.a0(),
            _ => bail!("give at most one of `a`, `a_div`, `gamma`"),
        };
        Ok(Some(a))
    }

    pub fn points(&self, inst: &ProtocolInstance) -> Result<Vec<Point>> {
        let mut ns = self.n.clone();
        if let Some(p) = &self.pow2 {
            if p.step == 0 || p.to >= 63 {
                bail!("pow2 needs step ≥ 1 and exponents below 63");
            }
            ns.extend((p.from..=p.to).step_by(p.step as usize).map(|e| 1u64 << e));
        }
        let mut out = Vec::new();
        if !ns.is_empty() || !self.m.is_empty() {
            if inst.k() != 1 {
                bail!("`n` and `m` need a single-input protocol; {} takes {}", inst.name, inst.k());
            }
        }
        for n in ns {
            let a = self.helper(inst, Some(n), None)?;
            let m = n.checked_sub(a.unwrap_or(0)).context("a exceeds n")?;
            out.push(Point { m: vec![m], a });
        }
        for m in &self.m {
            out.push(Point { m: vec![*m], a: self.helper(inst, None, Some(*m))? });
        }
        for s in &self.inputs {
            let m = source::parse_input(inst, s)?;
            let a = self.helper(inst, None, Some(m.iter().sum()))?;
            out.push(Point { m, a });
        }
        Ok(out)
    }
}

/// Runs every point in order; `emit` receives each point's rows as soon as
/// they are ready. Point j of the whole config uses base seed
/// trial_seed(seed, j).
pub fn run(cfg: &ExperimentConfig, base: &Path, mut emit: impl FnMut(&[Row]) -> Result<()>) -> Result<()> {
    let mut j = 0u64;
    for (si, sw) in cfg.sweep.iter().enumerate() {
        let inst = sw.instance(base).with_context(|| format!("sweep {}", si + 1))?;
        let trials = sw.trials.unwrap_or(cfg.trials);
        let mut stop = inst.stop_condition();
        if let Some(b) = sw.budget.or(cfg.budget) {
            stop = stop.with_budget(b);
        }
        for pt in sw.points(&inst).with_context(|| format!("sweep {}", si + 1))? {
            let seed = trial_seed(cfg.seed, j);
            j += 1;
            let c0 = inst.initial(&pt.m, pt.a, sw.q0)?;
            let stats = estimate_stabilization_time(&inst.protocol, &c0, &stop, trials, seed)?;
            let input = source::format_input(&inst, &pt.m);
            emit(&rows_for(&inst, &input, c0.n(), pt.a.unwrap_or(0), seed, &stats))?;
        }
    }
    Ok(())
}
