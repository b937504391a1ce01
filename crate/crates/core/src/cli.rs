//! `ivp` command-line front end. Every command prints one JSON document on stdout; errors go
//! to stderr with exit code 2 (validation) or 3 (numerical failure).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::dp::{calibrate_sigma_omega, check_dp, delta_min, DpBudget};
use crate::error::Error;
use crate::generic::{dichotomy_report, generic_node_privacy, generic_privacy_index, GenericSampler, DEFAULT_SAMPLES};
use crate::intrinsic::{
    node_private, node_private_in, privacy_index, privacy_index_bruteforce, privacy_index_bruteforce_in,
    privacy_index_in, whole_vector_private, whole_vector_private_in, Condition, PrivacyVerdict,
};
use crate::obsv::{build_bundle, build_tv_observability, numerical_rank, observability_matrix};
use crate::sim::{empirical_dp_report, mle_attack, simulate, write_batch_csv, write_histogram_csv, EmpiricalDpOptions};
use crate::sysmodel::{load_lti, load_structure, load_system, Configuration, DisclosureSet, LoadedSystem, NoiseModel, WeightDistribution};

/// JSON schemas of the command outputs, by command name.
pub const SCHEMAS: &[(&str, &str)] = &[
    ("audit", include_str!("../schemas/audit.schema.json")),
    ("calibrate", include_str!("../schemas/calibrate.schema.json")),
    ("check-dp", include_str!("../schemas/check_dp.schema.json")),
    ("generic-check", include_str!("../schemas/generic_check.schema.json")),
    ("generic-index", include_str!("../schemas/generic_index.schema.json")),
    ("attack", include_str!("../schemas/attack.schema.json")),
    ("simulate", include_str!("../schemas/simulate.schema.json")),
];

#[derive(Debug, Parser)]
#[command(name = "ivp", version, about = "Initial-value privacy auditing for linear dynamical systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact verdicts: whole-vector privacy, node privacy and the privacy index.
    Audit(AuditArgs),
    /// Smallest measurement-noise scale certifying a DP budget, with a delta_min table.
    Calibrate(CalibrateArgs),
    /// Evaluate the sufficient DP condition for the system's own noise.
    CheckDp(CheckDpArgs),
    /// Generic (structural) privacy of one node.
    GenericCheck(GenericCheckArgs),
    /// Generic network privacy index of a structure.
    GenericIndex(GenericIndexArgs),
    /// GLS eavesdropper attack, optionally with empirical DP histograms.
    Attack(AttackArgs),
    /// Simulate output trajectories to CSV.
    Simulate(SimulateArgs),
    /// Print O_ob, O_T and H_T.
    Obsv(ObsvArgs),
    /// Print the JSON schema of a command's output.
    Schema { name: String },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConditionArg {
    B,
    C,
    CPrime,
    All,
}

impl From<ConditionArg> for Condition {
    fn from(c: ConditionArg) -> Self {
        match c {
            ConditionArg::B => Condition::B,
            ConditionArg::C => Condition::C,
            ConditionArg::CPrime => Condition::CPrime,
            ConditionArg::All => Condition::All,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightsArg {
    /// Uniform on [0, 1].
    Unit,
    /// Uniform on [-1, 1].
    Signed,
}

impl From<WeightsArg> for WeightDistribution {
    fn from(w: WeightsArg) -> Self {
        match w {
            WeightsArg::Unit => WeightDistribution::Unit,
            WeightsArg::Signed => WeightDistribution::Signed,
        }
    }
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// 1-based node labels to test (repeatable).
    #[arg(long)]
    pub node: Vec<usize>,
    /// Public disclosure set as comma-separated 1-based labels.
    #[arg(long, default_value = "")]
    pub public: String,
    #[arg(long, value_enum, default_value = "all")]
    pub condition: ConditionArg,
    /// Also compute the index by exhaustive enumeration up to this level.
    #[arg(long)]
    pub bruteforce: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub d: f64,
    #[arg(long = "N", default_value_t = 1)]
    pub n_traj: usize,
    #[arg(long = "T")]
    pub horizon: usize,
}

impl BudgetArgs {
    fn budget(&self) -> crate::Result<DpBudget> {
        DpBudget::new(self.epsilon, self.delta, self.d, self.n_traj, self.horizon)
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Comma-separated epsilons for the delta_min table (default: the budget's epsilon).
    #[arg(long)]
    pub epsilon_grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct CheckDpArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Use the weaker information-matrix condition.
    #[arg(long)]
    pub refined: bool,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "unit")]
    pub weights: WeightsArg,
}

impl SamplingArgs {
    fn sampler(&self) -> crate::Result<GenericSampler> {
        Ok(GenericSampler::new(self.samples, self.seed)?.with_distribution(self.weights.into()))
    }
}

#[derive(Debug, Args)]
pub struct GenericCheckArgs {
    #[arg(long)]
    pub structure: PathBuf,
    #[arg(long)]
    pub node: usize,
    #[arg(long, default_value = "")]
    pub public: String,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Edge weights (canonical edge order) for an exact verdict to contrast with the generic one.
    #[arg(long, allow_hyphen_values = true)]
    pub special_theta: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenericIndexArgs {
    #[arg(long)]
    pub structure: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// True initial state, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long = "N")]
    pub n_traj: usize,
    #[arg(long = "T", default_value_t = 1)]
    pub horizon: usize,
    #[arg(long)]
    pub seed: u64,
    /// Also compare output histograms of adjacent initial values.
    #[arg(long)]
    pub empirical_dp: bool,
    /// Initial values for the histogram comparison: `a,b;c,d;...`.
    #[arg(long, allow_hyphen_values = true)]
    pub x0_list: Option<String>,
    #[arg(long, default_value_t = 50_000)]
    pub runs: usize,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Adjacency radius the listed initial values must respect.
    #[arg(long)]
    pub d: Option<f64>,
    /// Histogram table output (plot-ready CSV).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Trajectory batch output (CSV, one row per trajectory).
    #[arg(long)]
    pub batch_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long = "N")]
    pub n_traj: usize,
    #[arg(long = "T")]
    pub horizon: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ObsvArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long = "T")]
    pub horizon: Option<usize>,
}

fn parse_list(text: &str, what: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .map_err(|_| anyhow!(Error::invalid(what, format!("cannot parse {s:?} as a number"))))
        })
        .collect()
}

fn parse_vector(text: &str, what: &str) -> anyhow::Result<DVector<f64>> {
    Ok(DVector::from_vec(parse_list(text, what)?))
}

fn parse_public(text: &str, n: usize) -> anyhow::Result<DisclosureSet> {
    let labels = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| anyhow!(Error::invalid("public", format!("{s:?} is not a node label"))))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(DisclosureSet::from_one_based(&labels, n)?)
}

fn node_index(label: usize, n: usize) -> anyhow::Result<usize> {
    if label == 0 || label > n {
        bail!(Error::IndexOutOfRange { index: label, len: n });
    }
    Ok(label - 1)
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!(m.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn cmd_audit(args: &AuditArgs) -> anyhow::Result<Value> {
    let condition: Condition = args.condition.into();
    let loaded = load_system(&args.system)?;
    let (whole, index, brute, obsv, kind) = match &loaded {
        LoadedSystem::Lti(sys) => {
            let brute = args.bruteforce.map(|l| privacy_index_bruteforce(sys, l)).transpose()?;
            (
                whole_vector_private(sys)?,
                privacy_index(sys)?,
                brute,
                observability_matrix(sys.a(), sys.c())?,
                "time-invariant",
            )
        }
        LoadedSystem::TimeVarying(sys) => {
            let o = build_tv_observability(sys, sys.horizon())?;
            let brute = args.bruteforce.map(|l| privacy_index_bruteforce_in(&o, l, None)).transpose()?;
            (whole_vector_private_in(&o, None)?, privacy_index_in(&o, None)?, brute, o, "time-varying")
        }
    };
    let n = obsv.ncols();
    let public = parse_public(&args.public, n)?;
    let nodes = args
        .node
        .iter()
        .map(|&label| -> anyhow::Result<PrivacyVerdict> {
            let i = node_index(label, n)?;
            Ok(match &loaded {
                LoadedSystem::Lti(sys) => node_private(sys, i, &public, condition)?,
                LoadedSystem::TimeVarying(_) => node_private_in(&obsv, i, &public, condition, None)?,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut out = json!({
        "system": kind,
        "n": n,
        "whole_vector_private": whole.private,
        "rank_Oob": numerical_rank(&obsv, None)?,
        "whole_vector": whole,
        "index": index,
        "nodes": nodes,
    });
    if let Some(b) = brute {
        out["index_bruteforce"] = serde_json::to_value(b)?;
    }
    Ok(out)
}

fn cmd_calibrate(args: &CalibrateArgs) -> anyhow::Result<Value> {
    let budget = args.budget.budget()?;
    let sys = load_lti(&args.system)?;
    let grid = match &args.epsilon_grid {
        Some(text) if text.trim().is_empty() => bail!(Error::Domain("epsilon grid is empty".into())),
        Some(text) => parse_list(text, "epsilon_grid")?,
        None => vec![budget.epsilon],
    };
    let cal = calibrate_sigma_omega(&sys, &budget)?;
    // delta_min is evaluated for the calibrated noise when the model is i.i.d., and for the
    // system's own covariance otherwise.
    let reference = match sys.noise() {
        NoiseModel::Iid { sigma_nu, .. } => sys.clone().with_noise(NoiseModel::iid(*sigma_nu, cal.sigma_omega_floor)?),
        NoiseModel::General { .. } => sys.clone(),
    };
    let table = grid
        .iter()
        .map(|&eps| -> anyhow::Result<Value> {
            let value = match delta_min(&reference, eps, budget.d, budget.n_traj, budget.horizon) {
                Ok(v) => json!(v),
                Err(Error::SingularCovariance(_)) => Value::Null,
                Err(e) => return Err(e.into()),
            };
            Ok(json!({ "epsilon": eps, "delta_min": value }))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(json!({
        "sigma_omega_floor": cal.sigma_omega_floor,
        "kappa": cal.kappa,
        "norm_OT": cal.norm_ot,
        "budget": budget,
        "noise_reference": if sys.noise().is_iid() { "calibrated" } else { "system" },
        "delta_min_table": table,
    }))
}

fn cmd_check_dp(args: &CheckDpArgs) -> anyhow::Result<Value> {
    let budget = args.budget.budget()?;
    let sys = load_lti(&args.system)?;
    Ok(serde_json::to_value(check_dp(&sys, &budget, args.refined)?)?)
}

fn cmd_generic_check(args: &GenericCheckArgs) -> anyhow::Result<Value> {
    let structure = load_structure(&args.structure)?;
    let sampler = args.sampling.sampler()?;
    let i = node_index(args.node, structure.n())?;
    let public = parse_public(&args.public, structure.n())?;
    let mut out = match &args.special_theta {
        Some(text) => {
            let theta = Configuration(parse_list(text, "special_theta")?);
            serde_json::to_value(dichotomy_report(&structure, i, &public, &theta, &sampler)?)?
        }
        None => serde_json::to_value(generic_node_privacy(&structure, i, &public, &sampler)?)?,
    };
    out["samples"] = json!(sampler.samples());
    out["seed"] = json!(sampler.seed());
    Ok(out)
}

fn cmd_generic_index(args: &GenericIndexArgs) -> anyhow::Result<Value> {
    let structure = load_structure(&args.structure)?;
    let sampler = args.sampling.sampler()?;
    let report = generic_privacy_index(&structure, &sampler)?;
    let mut out = serde_json::to_value(&report)?;
    out["samples"] = json!(sampler.samples());
    out["seed"] = json!(sampler.seed());
    out["agreement"] = json!(report.estimate.agreement);
    Ok(out)
}

fn write_file(path: &Path, f: impl FnOnce(BufWriter<File>) -> crate::Result<()>) -> anyhow::Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f(BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))
}

fn cmd_attack(args: &AttackArgs) -> anyhow::Result<Value> {
    let sys = load_lti(&args.system)?;
    let x0 = parse_vector(&args.x0, "x0")?;
    let batch = simulate(&sys, &x0, args.n_traj, args.horizon, args.seed)?;
    let result = mle_attack(&sys, &batch)?;
    if let Some(path) = &args.batch_csv {
        write_file(path, |w| write_batch_csv(&batch, w))?;
    }
    let mut out = json!({
        "N": args.n_traj,
        "T": args.horizon,
        "seed": args.seed,
        "attack": result,
    });
    if args.empirical_dp {
        let list = args
            .x0_list
            .as_deref()
            .ok_or_else(|| anyhow!(Error::invalid("x0_list", "required with --empirical-dp")))?;
        let x0_list = list
            .split(';')
            .map(|s| parse_vector(s, "x0_list"))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let opts = EmpiricalDpOptions {
            n_runs: args.runs,
            horizon: args.horizon,
            bins: args.bins,
            delta: args.delta,
            d: args.d,
            seed: args.seed,
        };
        let report = empirical_dp_report(&sys, &x0_list, &opts)?;
        if let Some(path) = &args.csv {
            write_file(path, |w| write_histogram_csv(&report, w))?;
        }
        out["empirical_dp"] = serde_json::to_value(&report)?;
    }
    Ok(out)
}

fn cmd_simulate(args: &SimulateArgs) -> anyhow::Result<Value> {
    let sys = load_lti(&args.system)?;
    let x0 = parse_vector(&args.x0, "x0")?;
    let batch = simulate(&sys, &x0, args.n_traj, args.horizon, args.seed)?;
    write_file(&args.out, |w| write_batch_csv(&batch, w))?;
    Ok(json!({
        "N": batch.n_traj,
        "T": batch.horizon,
        "seed": batch.seed,
        "x0": batch.x0.iter().copied().collect::<Vec<_>>(),
        "columns": batch.y.ncols(),
        "out": args.out.display().to_string(),
    }))
}

fn cmd_obsv(args: &ObsvArgs) -> anyhow::Result<Value> {
    match load_system(&args.system)? {
        LoadedSystem::Lti(sys) => {
            let horizon = args.horizon.unwrap_or(sys.n() - 1);
            let b = build_bundle(&sys, horizon)?;
            Ok(json!({
                "T": horizon,
                "O_ob": matrix_json(&b.o_ob),
                "O_T": matrix_json(&b.o_t),
                "H_T": matrix_json(&b.h_t),
            }))
        }
        LoadedSystem::TimeVarying(sys) => {
            let horizon = args.horizon.unwrap_or(sys.horizon());
            Ok(json!({
                "T": horizon,
                "O_T": matrix_json(&build_tv_observability(&sys, horizon)?),
            }))
        }
    }
}

fn cmd_schema(name: &str) -> anyhow::Result<Value> {
    let text = SCHEMAS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| anyhow!(Error::invalid("name", format!("no schema for {name:?}"))))?;
    Ok(serde_json::from_str(text)?)
}

pub fn execute(cli: &Cli) -> anyhow::Result<Value> {
    match &cli.command {
        Command::Audit(a) => cmd_audit(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::CheckDp(a) => cmd_check_dp(a),
        Command::GenericCheck(a) => cmd_generic_check(a),
        Command::GenericIndex(a) => cmd_generic_index(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Obsv(a) => cmd_obsv(a),
        Command::Schema { name } => cmd_schema(name),
    }
}

/// Exit code for a failed command: the library's classification, 2 for anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map_or(2, Error::exit_code)
}

/// Parses `args`, runs the command and writes its JSON to `out`. Returns the exit code.
pub fn run_from<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    match execute(&cli) {
        Ok(value) => {
            let text = serde_json::to_string_pretty(&value).expect("JSON values serialize");
            let _ = writeln!(out, "{text}");
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Configures the worker pool from `IVP_THREADS`, then runs with the process arguments.
pub fn run() -> i32 {
    if let Ok(v) = std::env::var("IVP_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(threads) if threads > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
            }
            _ => {
                eprintln!("error: IVP_THREADS must be a positive integer, got {v:?}");
                return 2;
            }
        }
    }
    run_from(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
