//! `popproto`: simulate, verify, compile and operate on population protocols.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or I/O error,
//! 3 surgery infeasible.

mod experiment;
mod rows;
mod source;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use popproto::linear::{classify_linear, LinearSpec};
use popproto::sim::estimate_stabilization_time;
use popproto::surgery::{Surgery, SurgeryError};
use popproto::verify::{check_cases, Case, Limits, StabilityCache};
use popproto::TransitionSequence;

use source::SourceArgs;

#[derive(Debug, Parser)]
#[command(
    name = "popproto",
    version,
    long_version = concat!(env!("CARGO_PKG_VERSION"), " (csv schema ", "1", ")"),
    about = "Population protocol toolkit"
)]
struct Cli {
    /// Worker threads for parallel trials (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run independent trials and write one CSV row per trial.
    Simulate(SimulateArgs),
    /// Exhaustively certify small inputs against the oracle.
    Verify(VerifyArgs),
    /// Δ-ordering, matrices and path surgery on a protocol.
    Surgery(SurgeryArgs),
    /// Run every sweep of a TOML experiment config.
    Experiment(ExperimentArgs),
    /// Print the protocol text for a builtin or compiler spec.
    Compile(CompileArgs),
    /// Classify a linear function given by its coefficients.
    Classify {
        /// Coefficients, e.g. `1/2,-3`.
        coeffs: String,
    },
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Oracle for a protocol file (builtin name or compiler spec).
    #[arg(long)]
    oracle: Option<String>,
    /// Input counts in declared order, e.g. `30,20`.
    #[arg(long, conflicts_with = "input")]
    m: Option<String>,
    /// Input counts by name, e.g. `x1=30,x2=20`.
    #[arg(long)]
    input: Option<String>,
    /// Initial count of the approximation helper state.
    #[arg(long)]
    a: Option<u64>,
    /// Override the quiescent count.
    #[arg(long)]
    q0: Option<u64>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop any trial after this many interactions.
    #[arg(long)]
    budget: Option<u64>,
    /// CSV path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    oracle: Option<String>,
    /// Check every input with ‖m‖ up to this.
    #[arg(long, default_value_t = 6)]
    max_total: u64,
    /// Helper counts to try for approximators.
    #[arg(long, default_value = "1")]
    a: String,
    #[arg(long)]
    q0: Option<u64>,
    /// Reachability budget per case.
    #[arg(long)]
    max_configs: Option<usize>,
    /// JSON report path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SurgeryArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Δ as comma-separated state names; empty or `∅` for none.
    #[arg(long, allow_hyphen_values = true)]
    delta: String,
    /// cΔ for eliminate-Δ, in ordering order.
    #[arg(long)]
    eliminate: Option<String>,
    /// Host origin x, e.g. `d1=10,d2=10,g1=10`.
    #[arg(long)]
    host_origin: Option<String>,
    /// Host steps as 0-based rule indices, `i*k` repeats, e.g. `0*7,1*16`.
    #[arg(long, default_value = "")]
    host_steps: String,
    /// eΔ for produce-e on the host.
    #[arg(long)]
    produce_e: Option<String>,
    /// dΔ for push-Δ on the host.
    #[arg(long)]
    push_d: Option<String>,
    /// tΔ for push-Δ (default all zero).
    #[arg(long)]
    push_t: Option<String>,
    /// Bound on the host's final Δ-counts.
    #[arg(long, default_value_t = 3)]
    b1: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    config: PathBuf,
    /// CSV path; overrides `output` in the config (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompileArgs {
    /// `builtin:NAME`, `nlinear:C`, `qlinear:C` or a builtin name.
    spec: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(anyhow::Error),
    Verification,
    Surgery(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Verify(a) => verify(a),
        Cmd::Surgery(a) => surgery(a),
        Cmd::Experiment(a) => run_experiment(a),
        Cmd::Compile(a) => compile(a),
        Cmd::Classify { coeffs } => classify(&coeffs),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Surgery(e)) => {
            eprintln!("surgery infeasible: {e:#}");
            ExitCode::from(3)
        }
    }
}

/// Writes `bytes` to `path` via a sibling temp file and rename, or to stdout.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            let tmp = partial_path(p);
            fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
            fs::rename(&tmp, p).with_context(|| format!("writing {}", p.display()))?;
        }
        None => io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn partial_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let inst = args.source.load(args.oracle.as_deref())?;
    let m = match (&args.m, &args.input) {
        (Some(m), _) => source::parse_input(&inst, m)?,
        (_, Some(s)) => source::parse_input(&inst, s)?,
        _ => return Err(anyhow!("give the input with --m or --input").into()),
    };
    if args.trials == 0 {
        return Err(anyhow!("--trials must be at least 1").into());
    }
    let c0 = inst.initial(&m, args.a, args.q0).map_err(anyhow::Error::from)?;
    let mut stop = inst.stop_condition();
    if let Some(b) = args.budget {
        stop = stop.with_budget(b);
    }
    let stats = estimate_stabilization_time(&inst.protocol, &c0, &stop, args.trials, args.seed).map_err(anyhow::Error::from)?;
    let a = inst.protocol.roles.approx.map(|s| c0.get(s)).unwrap_or(0);
    let rows = rows::rows_for(&inst, &source::format_input(&inst, &m), c0.n(), a, args.seed, &stats);
    let mut sink = rows::Sink::new(Vec::new())?;
    sink.write(&rows)?;
    emit(args.out.as_deref(), &sink.finish()?)?;
    Ok(())
}

/// All vectors in ℕ^k with ‖m‖ ≤ max, lexicographic.
fn grid(k: usize, max: u64) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|v: Vec<u64>| {
                let used: u64 = v.iter().sum();
                (0..=max - used).map(move |x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    out
}

fn verify(args: VerifyArgs) -> Result<(), Failure> {
    let inst = args.source.load(args.oracle.as_deref())?;
    let conv = inst
        .convention()
        .ok_or_else(|| anyhow!("{} declares neither an output state nor voters", inst.name))?;
    let a_values: Vec<Option<u64>> = if inst.is_approximator() {
        source::parse_list(&args.a)?.into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let mut cases = Vec::new();
    for m in grid(inst.k(), args.max_total) {
        for a in &a_values {
            let initial = inst.initial(&m, *a, args.q0).map_err(anyhow::Error::from)?;
            let a_count = inst.protocol.roles.approx.map(|s| initial.get(s));
            if let Some(expected) = inst.expected(&m, a_count.unwrap_or(0)) {
                cases.push(Case { input: m.clone(), a: a_count, initial, expected });
            }
        }
    }
    if cases.is_empty() {
        return Err(anyhow!("no oracle for {}; pass --oracle with a builtin or compiler spec", inst.name).into());
    }
    let mut limits = Limits::default();
    if let Some(mc) = args.max_configs {
        limits.max_configs = mc;
    }
    let rep = check_cases(&inst.protocol, &conv, &cases, limits, &mut StabilityCache::default());
    let mut json = rep.to_json();
    json.push('\n');
    emit(args.out.as_deref(), json.as_bytes())?;
    if rep.all_pass() {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn surgery_failure(e: SurgeryError) -> Failure {
    match e {
        SurgeryError::Arity { .. } | SurgeryError::InvalidHost(_) => Failure::Usage(e.into()),
        other => Failure::Surgery(other.into()),
    }
}

fn surgery(args: SurgeryArgs) -> Result<(), Failure> {
    let inst = args.source.load(None)?;
    let p = &inst.protocol;
    let names: Vec<&str> = args
        .delta
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty() && *s != "∅")
        .collect();
    let delta = names
        .iter()
        .map(|n| p.state(n).ok_or_else(|| anyhow!("unknown state `{n}`")))
        .collect::<Result<Vec<_>>>()?;
    let s = Surgery::new(p, &delta).map_err(surgery_failure)?;
    let mut trace = s.trace();
    if let Some(c) = &args.eliminate {
        trace.elimination = Some(s.eliminate_delta(&source::parse_list(c)?).map_err(surgery_failure)?);
    }
    let host = match &args.host_origin {
        Some(x) => Some(TransitionSequence::new(source::parse_config(p, x)?, source::parse_steps(p, &args.host_steps)?)),
        None => None,
    };
    let need_host = || -> Result<&TransitionSequence> { host.as_ref().ok_or_else(|| anyhow!("this operation needs --host-origin")) };
    if let Some(e) = &args.produce_e {
        let h = need_host()?;
        trace.produce_e = Some(s.produce_e(h, &source::parse_list(e)?, args.b1).map_err(surgery_failure)?);
    }
    if let Some(d) = &args.push_d {
        let h = need_host()?;
        let t = match &args.push_t {
            Some(t) => source::parse_list(t)?,
            None => vec![0; s.d()],
        };
        trace.push_delta = Some(s.push_delta(h, &source::parse_list(d)?, &t, args.b1).map_err(surgery_failure)?);
    }
    let mut json = serde_json::to_string_pretty(&trace).map_err(anyhow::Error::from)?;
    json.push('\n');
    emit(args.out.as_deref(), json.as_bytes())?;
    Ok(())
}

fn run_experiment(args: ExperimentArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let cfg: experiment::ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", args.config.display()))?;
    // relative paths in the config are relative to the config file
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = args.out.clone().or_else(|| cfg.output.as_ref().map(|o| base.join(o)));
    match out {
        Some(path) => {
            let tmp = partial_path(&path);
            let file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
            let mut sink = rows::Sink::new(io::BufWriter::new(file))?;
            let res = experiment::run(&cfg, &base, |rows| sink.write(rows));
            if let Err(e) = res {
                drop(sink);
                let _ = fs::remove_file(&tmp);
                return Err(e.into());
            }
            sink.finish()?.flush().map_err(anyhow::Error::from)?;
            fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        }
        None => {
            // buffer so that a failing sweep leaves no partial CSV on stdout
            let mut sink = rows::Sink::new(Vec::new())?;
            experiment::run(&cfg, &base, |rows| sink.write(rows))?;
            io::stdout().write_all(&sink.finish()?).map_err(anyhow::Error::from)?;
        }
    }
    Ok(())
}

fn compile(args: CompileArgs) -> Result<(), Failure> {
    let inst = popproto::protocols::from_spec_string(&args.spec).map_err(anyhow::Error::from)?;
    let text = format!("# {}\n{}", inst.name, inst.protocol.to_text());
    emit(args.out.as_deref(), text.as_bytes())?;
    Ok(())
}

fn classify(coeffs: &str) -> Result<(), Failure> {
    let spec = LinearSpec::parse(coeffs).map_err(anyhow::Error::from)?;
    let c = classify_linear(&spec);
    let v = serde_json::json!({ "coeffs": spec.to_string(), "class": c.class, "integer": c.integer, "nonnegative": c.nonnegative });
    println!("{}", serde_json::to_string_pretty(&v).map_err(anyhow::Error::from)?);
    Ok(())
}
