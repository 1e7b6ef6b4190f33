//! Command-line experiment driver.
//!
//! Verbs: `run`, `verify`, `poa`, `gen`. Settings resolve as command-line
//! flag, then `--config` file, then built-in default. Exit codes: 0 success,
//! 1 failed check, 2 input error, 3 oracle or simulation did not converge.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::alloc::{iterated_allocation, one_step_profile, AllocError};
use crate::equilibrium::{
    nash_check, pareto_dominance_sample, poa_pos_empirical_with, serial_candidate_equilibria,
    serial_poa, EquilibriumError, PoaOptions, SerialPoAInputs,
};
use crate::io::{self, random_instance, serial_instance, FormatError, GenError, RandomInstanceSpec};
use crate::model::{
    path_minima, payoff_from_rates, welfare_of_rates, ModelError, NetworkInstance, PayoffMode,
    StrategyProfile, Welfare,
};
use crate::oracle::{dual_solve, OracleError, OracleResult};
use crate::simnet::{dump_log, message_audit, run_simulation, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

const DEFAULT_TOL: f64 = 1e-9;
const DEFAULT_MAX_ITER: usize = 100_000;
const DEFAULT_NASH_TOL: f64 = 1e-6;
const DEFAULT_PARETO_TRIALS: usize = 2000;
const DEFAULT_MAX_ROUNDS: usize = 10_000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::NotConverged(_) => EXIT_NOT_CONVERGED,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

macro_rules! input_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.to_string())
            }
        }
    )*};
}
input_error!(FormatError, GenError, ModelError, std::io::Error, csv::Error, toml::de::Error);

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::NotConverged { .. } => CliError::NotConverged(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Parse { .. } => CliError::Input(e.to_string()),
            other => CliError::NotConverged(other.to_string()),
        }
    }
}

impl From<AllocError> for CliError {
    fn from(e: AllocError) -> Self {
        CliError::CheckFailed(e.to_string())
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::Oracle(o) => o.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "capgame", version, about = "Link-capacity allocation game toolkit")]
pub struct Cli {
    /// TOML file with default settings (overridden by flags).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an allocator and write per-iteration CSV data.
    Run(RunArgs),
    /// Check a profile against an instance and print a JSON report.
    Verify(VerifyArgs),
    /// Sweep the serial-topology price of anarchy over chi.
    Poa(PoaArgs),
    /// Write a random instance file.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    OneStep,
    Iterated,
    Simnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Example {
    TwoLink,
    LongPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Nash,
    Pareto,
    /// Every link allocates each of its flows exactly the flow's rate.
    #[value(name = "remark1")]
    Normalization,
    Feasible,
}

/// Where the instance comes from. Without `--instance` or `--example` a
/// random instance is generated.
#[derive(Debug, Clone, Default, Args)]
pub struct SourceArgs {
    #[arg(long, conflicts_with = "example")]
    pub instance: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub example: Option<Example>,
    #[arg(long)]
    pub links: Option<usize>,
    #[arg(long)]
    pub flows: Option<usize>,
    #[arg(long)]
    pub p_route: Option<f64>,
    #[arg(long)]
    pub cap_min: Option<f64>,
    #[arg(long)]
    pub cap_max: Option<f64>,
    #[arg(long)]
    pub randomize_weights: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the instance's gamma.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Overrides the instance's payoff mode.
    #[arg(long)]
    pub payoff_mode: Option<PayoffMode>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_enum)]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Relative duality-gap tolerance of the optimum oracle.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Skip the optimum oracle (the oracle column stays empty).
    #[arg(long)]
    pub no_oracle: bool,
    /// Run this many random instances (seeds `seed..seed+n`) in parallel
    /// and write `summary.csv` only.
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub checks: Vec<Check>,
    /// Relative Nash-gap tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub pareto_trials: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PoaArgs {
    #[arg(long, default_value_t = 2)]
    pub links: usize,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub payoff_mode: Option<PayoffMode>,
    /// Local flow weights (default: all 1).
    #[arg(long, value_delimiter = ',')]
    pub local_weights: Vec<f64>,
    /// Values of chi = long weight / sum of local weights.
    #[arg(long, value_delimiter = ',')]
    pub chi: Vec<f64>,
    /// Add a column from equilibrium enumeration and the optimum oracle.
    #[arg(long)]
    pub enumerate: bool,
    #[arg(long, default_value_t = 6.0)]
    pub cap: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Settings file; every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Config {
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub payoff_mode: Option<PayoffMode>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub max_rounds: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub algorithm: Option<Algorithm>,
    pub links: Option<usize>,
    pub flows: Option<usize>,
    pub p_route: Option<f64>,
    pub cap_min: Option<f64>,
    pub cap_max: Option<f64>,
    pub randomize_weights: Option<bool>,
    pub nash_tol: Option<f64>,
    pub pareto_trials: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Ok(toml::from_str(&text)?)
    }
}

/// Random-generator settings after merging flags, config and defaults.
fn random_spec(src: &SourceArgs, cfg: &Config) -> RandomInstanceSpec {
    let d = RandomInstanceSpec::default();
    RandomInstanceSpec {
        links: src.links.or(cfg.links).unwrap_or(d.links),
        flows: src.flows.or(cfg.flows).unwrap_or(d.flows),
        p_route: src.p_route.or(cfg.p_route).unwrap_or(d.p_route),
        cap_range: (
            src.cap_min.or(cfg.cap_min).unwrap_or(d.cap_range.0),
            src.cap_max.or(cfg.cap_max).unwrap_or(d.cap_range.1),
        ),
        gamma: src.gamma.or(cfg.gamma).unwrap_or(d.gamma),
        payoff_mode: src.payoff_mode.or(cfg.payoff_mode).unwrap_or(d.payoff_mode),
        seed: src.seed.or(cfg.seed).unwrap_or(d.seed),
        randomize_weights: src.randomize_weights || cfg.randomize_weights.unwrap_or(false),
    }
}

/// Loaded instance plus a one-line description for CSV headers.
struct Loaded {
    inst: NetworkInstance,
    label: String,
}

fn load_source(src: &SourceArgs, cfg: &Config) -> Result<Loaded, CliError> {
    let (inst, label) = if let Some(path) = &src.instance {
        (io::load_instance(path)?, format!("file={}", path.display()))
    } else if let Some(ex) = src.example {
        let inst = match ex {
            Example::TwoLink => io::two_link(PayoffMode::Uniform),
            Example::LongPath => io::long_path(),
        };
        (inst, format!("example={}", ex.to_possible_value().expect("named").get_name()))
    } else {
        let spec = random_spec(src, cfg);
        let label = format!(
            "random links={} flows={} p_route={} caps={}..{} seed={}",
            spec.links, spec.flows, spec.p_route, spec.cap_range.0, spec.cap_range.1, spec.seed
        );
        return Ok(Loaded {
            inst: random_instance(&spec)?,
            label,
        });
    };
    let mut inst = inst;
    if let Some(g) = src.gamma.or(cfg.gamma) {
        inst = inst.with_gamma(g)?;
    }
    if let Some(m) = src.payoff_mode.or(cfg.payoff_mode) {
        inst = inst.with_payoff_mode(m);
    }
    Ok(Loaded { inst, label })
}

fn fmt_welfare(w: Welfare) -> String {
    match w {
        Welfare::Finite(v) => v.to_string(),
        Welfare::NegInfinity => "-inf".into(),
    }
}

fn csv_with_header(path: &Path, comment: &str) -> Result<csv::Writer<File>, CliError> {
    let mut file = File::create(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    writeln!(file, "# {comment}")?;
    Ok(csv::Writer::from_writer(file))
}

/// Rates of each recorded iteration plus the final profile.
struct RunResult {
    rate_rows: Vec<Vec<f64>>,
    profile: StrategyProfile,
    extra: Vec<(String, String)>,
}

fn execute(
    inst: &NetworkInstance,
    algorithm: Algorithm,
    max_rounds: usize,
    out_dir: Option<&Path>,
) -> Result<RunResult, CliError> {
    match algorithm {
        Algorithm::OneStep => {
            let s = one_step_profile(inst);
            Ok(RunResult {
                rate_rows: vec![path_minima(inst, &s)],
                profile: s,
                extra: Vec::new(),
            })
        }
        Algorithm::Iterated => {
            let (s, trace) = iterated_allocation(inst)?;
            if let Some(dir) = out_dir {
                io::save_trace(dir.join("trace.toml"), &trace)?;
            }
            Ok(RunResult {
                rate_rows: trace
                    .iterations
                    .iter()
                    .map(|it| path_minima(inst, &it.profile))
                    .collect(),
                profile: s,
                extra: vec![("removal_order".into(), format!("{:?}", trace.removal_order()))],
            })
        }
        Algorithm::Simnet => {
            let out = run_simulation(inst, max_rounds)?;
            let audit = message_audit(inst, &out.log);
            if let Some(dir) = out_dir {
                fs::write(dir.join("messages.log"), dump_log(&out.log))?;
            }
            if !audit.locality_ok {
                return Err(CliError::CheckFailed(format!(
                    "message locality violated by {:?}",
                    audit.offending
                )));
            }
            Ok(RunResult {
                rate_rows: out.rate_history,
                profile: out.profile,
                extra: vec![
                    ("rounds".into(), out.rounds.to_string()),
                    ("messages".into(), out.messages.to_string()),
                ],
            })
        }
    }
}

fn oracle(inst: &NetworkInstance, tol: f64, max_iter: usize, skip: bool) -> Result<Option<OracleResult>, CliError> {
    if skip {
        return Ok(None);
    }
    Ok(Some(dual_solve(inst, tol, max_iter)?))
}

fn cmd_run(args: &RunArgs, cfg: &Config) -> Result<i32, CliError> {
    let algorithm = args.algorithm.or(cfg.algorithm).unwrap_or(Algorithm::Iterated);
    let tol = args.tol.or(cfg.tol).unwrap_or(DEFAULT_TOL);
    let max_iter = args.max_iter.or(cfg.max_iter).unwrap_or(DEFAULT_MAX_ITER);
    let max_rounds = args.max_rounds.or(cfg.max_rounds).unwrap_or(DEFAULT_MAX_ROUNDS);
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;

    if let Some(n) = args.batch {
        return run_batch(args, cfg, n, algorithm, tol, max_iter, max_rounds, &out_dir);
    }

    let loaded = load_source(&args.source, cfg)?;
    let inst = &loaded.inst;
    let started = Instant::now();
    let result = execute(inst, algorithm, max_rounds, Some(&out_dir))?;
    let elapsed = started.elapsed();
    io::save_profile(out_dir.join("profile.toml"), &result.profile)?;

    let opt = oracle(inst, tol, max_iter, args.no_oracle)?;
    let header = format!(
        "capgame run algorithm={} {} gamma={} payoff_mode={} tol={tol:e} max_iter={max_iter}",
        algorithm.to_possible_value().expect("no skipped variants").get_name(),
        loaded.label,
        inst.gamma(),
        inst.payoff_mode(),
    );

    let mut payoffs = csv_with_header(&out_dir.join("payoffs.csv"), &header)?;
    let mut cols = vec!["iteration".to_string()];
    cols.extend((0..inst.num_links()).map(|l| format!("link_{l}")));
    payoffs.write_record(&cols)?;
    let mut utilities = csv_with_header(&out_dir.join("utilities.csv"), &header)?;
    let mut cols = vec!["iteration".to_string()];
    cols.extend((0..inst.num_flows()).map(|r| format!("flow_{r}")));
    utilities.write_record(&cols)?;
    let mut welfare = csv_with_header(&out_dir.join("welfare.csv"), &header)?;
    welfare.write_record(["iteration", "welfare", "oracle"])?;

    let oracle_col = opt.as_ref().map_or(String::new(), |o| o.objective.to_string());
    for (i, rates) in result.rate_rows.iter().enumerate() {
        let it = (i + 1).to_string();
        let mut row = vec![it.clone()];
        row.extend((0..inst.num_links()).map(|l| fmt_welfare(payoff_from_rates(inst, rates, l))));
        payoffs.write_record(&row)?;
        let mut row = vec![it.clone()];
        row.extend((0..inst.num_flows()).map(|r| fmt_welfare(inst.flow_utility(r, rates[r]))));
        utilities.write_record(&row)?;
        welfare.write_record([it, fmt_welfare(welfare_of_rates(inst, rates)), oracle_col.clone()])?;
    }
    payoffs.flush()?;
    utilities.flush()?;
    welfare.flush()?;

    let final_rates = path_minima(inst, &result.profile);
    let final_welfare = welfare_of_rates(inst, &final_rates);
    let mut summary = json!({
        "algorithm": algorithm.to_possible_value().expect("no skipped variants").get_name(),
        "instance": loaded.label,
        "links": inst.num_links(),
        "flows": inst.num_flows(),
        "iterations": result.rate_rows.len(),
        "welfare": fmt_welfare(final_welfare),
        "elapsed_ms": elapsed.as_secs_f64() * 1e3,
        "out_dir": out_dir.display().to_string(),
    });
    for (k, v) in &result.extra {
        summary[k] = Value::String(v.clone());
    }
    if let Some(o) = &opt {
        summary["oracle"] = json!(o.objective);
        summary["oracle_converged"] = json!(o.converged);
        if let Welfare::Finite(w) = final_welfare {
            if o.objective > 0.0 {
                summary["welfare_ratio"] = json!(w / o.objective);
            }
        }
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));

    match opt {
        Some(o) if !o.converged => Err(CliError::NotConverged(format!(
            "oracle stopped after {} iterations with gap {:.3e}",
            o.iterations, o.duality_gap
        ))),
        _ => Ok(EXIT_OK),
    }
}

/// Seed, iterations, welfare and oracle result of one batch member.
type BatchRow = (u64, usize, Welfare, Option<OracleResult>);

#[allow(clippy::too_many_arguments)]
fn run_batch(
    args: &RunArgs,
    cfg: &Config,
    n: usize,
    algorithm: Algorithm,
    tol: f64,
    max_iter: usize,
    max_rounds: usize,
    out_dir: &Path,
) -> Result<i32, CliError> {
    if args.source.instance.is_some() || args.source.example.is_some() {
        return Err(CliError::Input("--batch needs a random instance source".into()));
    }
    let base = random_spec(&args.source, cfg);
    let rows: Vec<Result<BatchRow, CliError>> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let spec = RandomInstanceSpec {
                seed: base.seed + k,
                ..base.clone()
            };
            let inst = random_instance(&spec)?;
            let res = execute(&inst, algorithm, max_rounds, None)?;
            let w = welfare_of_rates(&inst, &path_minima(&inst, &res.profile));
            let opt = oracle(&inst, tol, max_iter, args.no_oracle)?;
            Ok((spec.seed, res.rate_rows.len(), w, opt))
        })
        .collect();

    let header = format!(
        "capgame batch n={n} links={} flows={} p_route={} gamma={} payoff_mode={} seed={} tol={tol:e} max_iter={max_iter}",
        base.links, base.flows, base.p_route, base.gamma, base.payoff_mode, base.seed
    );
    let mut w = csv_with_header(&out_dir.join("summary.csv"), &header)?;
    w.write_record(["seed", "iterations", "welfare", "oracle", "ratio", "converged"])?;
    let mut unconverged = 0;
    for row in rows {
        let (seed, iters, welfare, opt) = row?;
        let (oracle_s, ratio, conv) = match &opt {
            Some(o) => {
                unconverged += usize::from(!o.converged);
                let ratio = match welfare {
                    Welfare::Finite(v) if o.objective > 0.0 => (v / o.objective).to_string(),
                    _ => String::new(),
                };
                (o.objective.to_string(), ratio, o.converged.to_string())
            }
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            seed.to_string(),
            iters.to_string(),
            fmt_welfare(welfare),
            oracle_s,
            ratio,
            conv,
        ])?;
    }
    w.flush()?;
    if unconverged > 0 {
        return Err(CliError::NotConverged(format!(
            "oracle did not converge on {unconverged} of {n} instances"
        )));
    }
    Ok(EXIT_OK)
}

/// Largest `|s_lr - x_r|` over routed pairs, relative to `max(1, x_r)`.
fn normalization_gap(inst: &NetworkInstance, s: &StrategyProfile) -> f64 {
    let rates = path_minima(inst, s);
    (0..inst.num_links())
        .flat_map(|l| inst.flows_on(l).iter().map(move |&r| (l, r)))
        .map(|(l, r)| (s.get(l, r) - rates[r]).abs() / rates[r].max(1.0))
        .fold(0.0, f64::max)
}

fn cmd_verify(args: &VerifyArgs, cfg: &Config) -> Result<i32, CliError> {
    let loaded = load_source(&args.source, cfg)?;
    let inst = &loaded.inst;
    let s = io::load_profile(&args.profile)?;
    s.check_dims(inst)?;
    let tol = args.tol.or(cfg.nash_tol).unwrap_or(DEFAULT_NASH_TOL);
    let trials = args.pareto_trials.or(cfg.pareto_trials).unwrap_or(DEFAULT_PARETO_TRIALS);
    let seed = args.source.seed.or(cfg.seed).unwrap_or(0);
    let checks = if args.checks.is_empty() {
        vec![Check::Feasible, Check::Nash, Check::Normalization, Check::Pareto]
    } else {
        args.checks.clone()
    };

    let feasible = s.validate(inst);
    let mut report = serde_json::Map::new();
    let mut all_pass = true;
    for check in checks {
        let (name, pass, detail) = match check {
            Check::Feasible => (
                "feasible",
                feasible.is_ok(),
                json!({ "error": feasible.as_ref().err().map(|e| e.to_string()) }),
            ),
            Check::Normalization => {
                let gap = normalization_gap(inst, &s);
                ("remark1", gap <= tol, json!({ "max_gap": gap, "tol": tol }))
            }
            Check::Nash => match nash_check(inst, &s, tol) {
                Ok(r) => {
                    let worst = r.worst_link();
                    let gaps: Vec<f64> = r.per_link.iter().map(|g| g.relative_gap).collect();
                    (
                        "nash",
                        r.is_nash,
                        json!({
                            "max_gap": r.max_gap,
                            "worst_link": worst,
                            "per_link_gap": gaps,
                            "tol": tol,
                            "welfare": fmt_welfare(r.welfare),
                        }),
                    )
                }
                Err(e) => ("nash", false, json!({ "error": e.to_string() })),
            },
            Check::Pareto => match pareto_dominance_sample(inst, &s, trials, seed) {
                Ok(p) => (
                    "pareto",
                    !p.dominating_found,
                    json!({
                        "dominating_found": p.dominating_found,
                        "trials": p.trials_run,
                        "seed": seed,
                        "witness": p.witness.map(|w| w.to_rows()),
                    }),
                ),
                Err(e) => ("pareto", false, json!({ "error": e.to_string() })),
            },
        };
        all_pass &= pass;
        let mut entry = json!({ "pass": pass });
        if let (Value::Object(e), Value::Object(d)) = (&mut entry, detail) {
            e.extend(d);
        }
        report.insert(name.into(), entry);
    }
    let out = json!({
        "instance": loaded.label,
        "profile": args.profile.display().to_string(),
        "pass": all_pass,
        "checks": report,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(if all_pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

const DEFAULT_CHI: [f64; 11] = [1e-6, 1e-4, 1e-2, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0];

fn cmd_poa(args: &PoaArgs, cfg: &Config) -> Result<i32, CliError> {
    let gamma = args.gamma.or(cfg.gamma).unwrap_or(0.5);
    let mode = args.payoff_mode.or(cfg.payoff_mode).unwrap_or(PayoffMode::Uniform);
    let locals = if args.local_weights.is_empty() {
        vec![1.0; args.links]
    } else {
        args.local_weights.clone()
    };
    let chis = if args.chi.is_empty() {
        DEFAULT_CHI.to_vec()
    } else {
        args.chi.clone()
    };
    let long_b = match mode {
        PayoffMode::Uniform => 1.0,
        PayoffMode::PathLength => 1.0 / args.links as f64,
    };
    let total: f64 = locals.iter().sum();

    let mut text = Vec::new();
    writeln!(
        text,
        "# capgame poa links={} gamma={gamma} payoff_mode={mode} local_weights={locals:?} cap={}",
        args.links, args.cap
    )?;
    {
        let mut w = csv::Writer::from_writer(&mut text);
        let mut head = vec!["chi", "poa1", "poa2", "poa"];
        if args.enumerate {
            head.push("enumerated");
        }
        w.write_record(&head)?;
        for chi in chis {
            let inputs = SerialPoAInputs {
                links: args.links,
                gamma,
                local_weights: locals.clone(),
                long_weight: chi * total,
                long_b,
            };
            let p = serial_poa(&inputs)?;
            let mut row = vec![chi.to_string(), p.poa1.to_string(), p.poa2.to_string(), p.poa.to_string()];
            if args.enumerate {
                let inst = serial_instance(args.links, args.cap, &locals, inputs.long_weight, gamma, mode)?;
                let eqs = serial_candidate_equilibria(&inst)?;
                let emp = poa_pos_empirical_with(&inst, &eqs, &PoaOptions::default())?;
                row.push(emp.poa_lower_bound.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    match &args.out {
        Some(path) => fs::write(path, &text)?,
        None => std::io::stdout().write_all(&text)?,
    }
    Ok(EXIT_OK)
}

fn cmd_gen(args: &GenArgs, cfg: &Config) -> Result<i32, CliError> {
    let loaded = load_source(&args.source, cfg)?;
    let text = io::instance_to_string(&loaded.inst);
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32, CliError> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Run(a) => cmd_run(a, &cfg),
        Command::Verify(a) => cmd_verify(a, &cfg),
        Command::Poa(a) => cmd_poa(a, &cfg),
        Command::Gen(a) => cmd_gen(a, &cfg),
    }
}

/// Parses `args` (including the program name) and runs them.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("capgame: {e}");
            e.exit_code()
        }
    }
}

/// Installs the logger; verbosity comes from `CAPGAME_LOG`.
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("CAPGAME_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}
