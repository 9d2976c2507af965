//! Command-line front end: `solve`, `simulate`, `verify` and `oracle`.
//!
//! Every command reads the JSON schemas of `mdmdp::model` and writes one
//! JSON document, to `--output` or stdout. All randomness comes from
//! `--seed` through [`mdmdp::sampling::derive_seed`]: stream 1 draws `D′`,
//! stream 2 fixes derandomized oracles that carry no seed of their own,
//! stream 3 drives `simulate` and stream 4 drives `verify`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use mdmdp::decompose::{
    mechanism_from_report, mechanism_reduced_form, simulate_interim, Decomposition, DEFAULT_DECOMP_TOL,
};
use mdmdp::model::{Instance, Mechanism, MechanismDoc, OracleSpec, RfEntry, TypeEntry};
use mdmdp::oracles::{
    bic_report_exact, border_feasible, brute_force_opt, family_of, measured_alpha, verify_bic_regret, BicReport,
};
use mdmdp::reduced_form::EmpiricalPrior;
use mdmdp::revenue::{solve, SolveConfig, SolveReport, SolveReportDoc};
use mdmdp::sampling::{
    build_dprime, build_dprime_exhaustive, derive_seed, dprime_size_capped, ProfileSampler, DEFAULT_SIZE_CONSTANT,
    EXHAUSTIVE_CAP, STREAM_DERANDOMIZE, STREAM_DPRIME, STREAM_SIMULATE, STREAM_VERIFY,
};
use mdmdp::welfare::{OracleRegistry, WelfareOracle};
use mdmdp::Error;

#[derive(Parser, Debug)]
#[command(
    name = "mdmdp",
    version,
    about = "Revenue-optimal mechanisms from welfare algorithms"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve an instance and write the report and mechanism.
    Solve(SolveArgs),
    /// Simulate a mechanism under the instance prior.
    Simulate(SimulateArgs),
    /// Audit a mechanism: incentives, decomposition and Border's condition.
    Verify(VerifyArgs),
    /// Ground truth for an instance: optimal revenue and measured α.
    Oracle(OracleArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SolveArgs {
    /// Instance JSON file.
    pub instance: PathBuf,
    /// Additive revenue loss allowed; also the per-bidder rebate.
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    /// Root seed for every random choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of sampled profiles in `D′`.
    #[arg(long, conflicts_with = "dprime_exhaustive")]
    pub dprime_count: Option<usize>,
    /// Use the full support of the prior as `D′`.
    #[arg(long)]
    pub dprime_exhaustive: bool,
    /// Margin of the separation oracle's inner problem [default: 1e-9].
    #[arg(long)]
    pub wso_delta: Option<f64>,
    /// Iteration cap of each inner ellipsoid run [default: from dimension].
    #[arg(long)]
    pub wso_iters: Option<usize>,
    /// Bits of the revenue bisection [default: 24].
    #[arg(long)]
    pub search_bits: Option<u32>,
    /// Largest decomposition residual accepted.
    #[arg(long, default_value_t = DEFAULT_DECOMP_TOL)]
    pub decomp_tol: f64,
    /// Output file [default: stdout].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl SolveArgs {
    pub fn new(instance: impl Into<PathBuf>) -> Self {
        SolveArgs {
            instance: instance.into(),
            eps: 0.01,
            seed: 0,
            dprime_count: None,
            dprime_exhaustive: false,
            wso_delta: None,
            wso_iters: None,
            search_bits: None,
            decomp_tol: DEFAULT_DECOMP_TOL,
            output: None,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    /// A mechanism file or the output of `solve`.
    pub mechanism: PathBuf,
    /// Instance JSON file.
    pub instance: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    /// A mechanism file or the output of `solve`.
    pub mechanism: PathBuf,
    /// Instance JSON file.
    pub instance: PathBuf,
    /// Monte Carlo samples per (bidder, report).
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct OracleArgs {
    /// Instance JSON file.
    pub instance: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// How `D′` was built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DprimeDoc {
    Exhaustive { profiles: usize },
    Sampled { count: usize, seed: u64, profiles: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionDoc {
    pub residual: f64,
    pub lambda_sum: f64,
    pub pruned_mass: f64,
    pub atoms: usize,
}

impl From<&Decomposition> for DecompositionDoc {
    fn from(d: &Decomposition) -> Self {
        DecompositionDoc {
            residual: d.residual,
            lambda_sum: d.lambda_sum(),
            pruned_mass: d.pruned_mass,
            atoms: d.atoms.len(),
        }
    }
}

/// The document written by `solve`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub report: SolveReportDoc,
    pub mechanism: MechanismDoc,
    pub decomposition: DecompositionDoc,
    pub dprime: DprimeDoc,
}

/// Everything a solve produced, before serialization.
pub struct SolveOutcome {
    pub instance: Instance,
    pub dprime: EmpiricalPrior,
    pub dprime_doc: DprimeDoc,
    pub oracle: Arc<dyn WelfareOracle>,
    pub report: SolveReport,
    pub mechanism: Mechanism,
    pub decomposition: Decomposition,
}

impl SolveOutcome {
    pub fn to_output(&self) -> SolveOutput {
        SolveOutput {
            report: self.report.to_doc(&self.instance),
            mechanism: self.mechanism.to_doc(&self.instance),
            decomposition: (&self.decomposition).into(),
            dprime: self.dprime_doc.clone(),
        }
    }
}

/// Fills in a derandomization seed from the root seed when the spec has
/// none, recursively through wrappers.
pub fn seed_oracle_spec(spec: &OracleSpec, root: u64) -> OracleSpec {
    let mut spec = spec.clone();
    if spec.kind == "derandomize" && !spec.params.contains_key("seed") {
        spec.params
            .insert("seed".into(), Value::from(derive_seed(root, STREAM_DERANDOMIZE)));
    }
    if let Some(inner) = spec.params.get("inner").cloned() {
        if let Ok(inner) = serde_json::from_value::<OracleSpec>(inner) {
            let seeded = seed_oracle_spec(&inner, root);
            spec.params
                .insert("inner".into(), serde_json::to_value(seeded).expect("spec serializes"));
        }
    }
    spec
}

pub fn resolve_oracle(inst: &Instance) -> mdmdp::Result<Arc<dyn WelfareOracle>> {
    OracleRegistry::with_builtins().resolve(inst.oracle_spec(), inst.num_bidders(), inst.num_items())
}

/// Solver settings for the flags of `args`.
pub fn solve_config(args: &SolveArgs) -> SolveConfig {
    let mut cfg = SolveConfig::default();
    if let Some(d) = args.wso_delta {
        cfg.wso.delta = d;
    }
    cfg.wso.inner_iters = args.wso_iters;
    if let Some(b) = args.search_bits {
        cfg.search_bits = b;
    }
    cfg
}

/// `D′` per the flags: exhaustive when asked, sampled when a count is
/// given, otherwise exhaustive if the support is small enough and sampled
/// at the default size if not.
pub fn dprime_for(inst: &Instance, args: &SolveArgs) -> mdmdp::Result<(EmpiricalPrior, DprimeDoc)> {
    let sampled = |count: usize| -> mdmdp::Result<(EmpiricalPrior, DprimeDoc)> {
        let seed = derive_seed(args.seed, STREAM_DPRIME);
        let d = build_dprime(inst, count, seed)?;
        let profiles = d.len();
        Ok((d, DprimeDoc::Sampled { count, seed, profiles }))
    };
    if args.dprime_exhaustive {
        let d = build_dprime_exhaustive(inst, EXHAUSTIVE_CAP)?;
        let profiles = d.len();
        return Ok((d, DprimeDoc::Exhaustive { profiles }));
    }
    match args.dprime_count {
        Some(count) => sampled(count),
        None if inst.support_size() <= EXHAUSTIVE_CAP => {
            let d = build_dprime_exhaustive(inst, EXHAUSTIVE_CAP)?;
            let profiles = d.len();
            Ok((d, DprimeDoc::Exhaustive { profiles }))
        }
        None => sampled(dprime_size_capped(inst, args.eps, DEFAULT_SIZE_CONSTANT)),
    }
}

/// The full `solve` pipeline on an in-memory instance.
pub fn solve_instance(inst: &Instance, args: &SolveArgs) -> mdmdp::Result<SolveOutcome> {
    solve_instance_with(inst, args, &solve_config(args))
}

/// [`solve_instance`] with explicit solver settings.
pub fn solve_instance_with(inst: &Instance, args: &SolveArgs, cfg: &SolveConfig) -> mdmdp::Result<SolveOutcome> {
    let inst = inst.with_oracle(seed_oracle_spec(inst.oracle_spec(), args.seed));
    let oracle = resolve_oracle(&inst)?;
    let (dprime, dprime_doc) = dprime_for(&inst, args)?;
    let report = solve(&inst, &dprime, oracle.as_ref(), args.eps, cfg)?;
    let (mechanism, decomposition) = mechanism_from_report(&inst, &report, args.decomp_tol)?;
    Ok(SolveOutcome {
        instance: inst,
        dprime,
        dprime_doc,
        oracle,
        report,
        mechanism,
        decomposition,
    })
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_instance(path: &Path) -> anyhow::Result<Instance> {
    Instance::from_json(&read(path)?).with_context(|| format!("parsing instance {}", path.display()))
}

/// Reads a mechanism from a bare mechanism document or from `solve` output.
pub fn load_mechanism(path: &Path, inst: &Instance) -> anyhow::Result<(Mechanism, Option<SolveOutput>)> {
    let raw: Value = serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let (doc, full) = if raw.get("mechanism").is_some() {
        let full: SolveOutput = serde_json::from_value(raw).context("parsing solve output")?;
        (full.mechanism.clone(), Some(full))
    } else {
        (
            serde_json::from_value::<MechanismDoc>(raw).context("parsing mechanism")?,
            None,
        )
    };
    Ok((Mechanism::from_doc(&doc, inst)?, full))
}

fn emit<T: Serialize>(value: &T, output: Option<&Path>) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn cmd_solve(args: &SolveArgs) -> anyhow::Result<()> {
    let inst = load_instance(&args.instance)?;
    let outcome = solve_instance(&inst, args)?;
    log::info!(
        "revenue {:.6} after {} outer iterations",
        outcome.report.revenue,
        outcome.report.stats.outer_iterations
    );
    emit(&outcome.to_output(), args.output.as_deref())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterimEntry {
    pub bidder: usize,
    #[serde(rename = "type")]
    pub type_label: String,
    pub item: usize,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub draws: usize,
    pub revenue: f64,
    pub revenue_stderr: f64,
    pub interim: Vec<InterimEntry>,
}

pub fn simulate_report(mech: &Mechanism, inst: &Instance, draws: usize, seed: u64) -> anyhow::Result<SimulateReport> {
    let inst = inst.with_oracle(mech.oracle.clone());
    let oracle = resolve_oracle(&inst)?;
    let sampler = ProfileSampler::new(&inst)?;
    let mut draw = |rng: &mut ChaCha8Rng| sampler.draw(rng);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SIMULATE));
    let est = simulate_interim(mech, &inst, oracle.as_ref(), &mut draw, draws, &mut rng)?;
    let l = inst.layout();
    let mut interim = Vec::with_capacity(l.dim());
    for i in 0..l.bidders() {
        for t in 0..l.types_of(i) {
            for j in 0..l.items() {
                let k = l.index(i, t, j);
                interim.push(InterimEntry {
                    bidder: i,
                    type_label: inst.type_label(i, t).to_string(),
                    item: j,
                    value: est.pi[k],
                    stderr: est.stderr[k],
                });
            }
        }
    }
    Ok(SimulateReport {
        draws,
        revenue: est.mean_revenue,
        revenue_stderr: est.revenue_stderr,
        interim,
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let inst = load_instance(&args.instance)?;
    let (mech, _) = load_mechanism(&args.mechanism, &inst)?;
    emit(
        &simulate_report(&mech, &inst, args.draws, args.seed)?,
        args.output.as_deref(),
    )
}

fn too_big<T>() -> Check<T> {
    Check::Skipped(format!("support exceeds {EXHAUSTIVE_CAP} profiles"))
}

/// One check of `verify`: a report or the reason it was skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check<T> {
    Done(T),
    Skipped(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub bic_exact: Check<BicReport>,
    pub bic_sampled: BicReport,
    /// Residual recorded by `solve` (only for `solve` output).
    pub decomposition_residual: Check<f64>,
    /// `‖interim rule under the prior − π*‖∞` (only for `solve` output with
    /// an exhaustive `D′`, where the two must agree).
    pub interim_gap: Check<f64>,
    pub border: Check<bool>,
}

pub fn verify_report(
    mech: &Mechanism,
    full: Option<&SolveOutput>,
    inst: &Instance,
    samples: usize,
    seed: u64,
) -> anyhow::Result<VerifyReport> {
    let inst = inst.with_oracle(mech.oracle.clone());
    let oracle = resolve_oracle(&inst)?;
    let exact_prior = if inst.support_size() <= EXHAUSTIVE_CAP {
        Some(EmpiricalPrior::exhaustive(&inst)?)
    } else {
        None
    };
    let bic_exact = match &exact_prior {
        Some(_) => Check::Done(bic_report_exact(mech, &inst, oracle.as_ref())?),
        None => too_big(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_VERIFY));
    let bic_sampled = verify_bic_regret(mech, &inst, oracle.as_ref(), samples, &mut rng)?;
    let interim = match &exact_prior {
        Some(p) => Some(mechanism_reduced_form(mech, oracle.as_ref(), p)?),
        None => None,
    };
    let decomposition_residual = match full {
        Some(f) => Check::Done(f.decomposition.residual),
        None => Check::Skipped("not a solve output".into()),
    };
    let interim_gap = match (full, &interim) {
        (Some(f), Some(pi)) if matches!(f.dprime, DprimeDoc::Exhaustive { .. }) => {
            let star = mdmdp::model::ReducedForm::from_doc(
                &mdmdp::model::ReducedFormDoc {
                    schema_version: mdmdp::model::SCHEMA_VERSION,
                    entries: f.report.pi_star.clone(),
                },
                &inst,
            )?;
            Check::Done(pi.0.iter().zip(&star.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        }
        (Some(_), Some(_)) => Check::Skipped("D′ was sampled".into()),
        (None, _) => Check::Skipped("not a solve output".into()),
        (_, None) => too_big(),
    };
    let border = match (&interim, inst.num_items()) {
        (Some(pi), 1) => Check::Done(border_feasible(pi, &inst, 1e-9)?),
        (_, n) if n > 1 => Check::Skipped("skipped (n>1)".into()),
        _ => too_big(),
    };
    Ok(VerifyReport {
        bic_exact,
        bic_sampled,
        decomposition_residual,
        interim_gap,
        border,
    })
}

pub fn cmd_verify(args: &VerifyArgs) -> anyhow::Result<()> {
    let inst = load_instance(&args.instance)?;
    let (mech, full) = load_mechanism(&args.mechanism, &inst)?;
    emit(
        &verify_report(&mech, full.as_ref(), &inst, args.samples, args.seed)?,
        args.output.as_deref(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub opt_revenue: f64,
    pub alpha_claimed: f64,
    pub alpha_measured: f64,
    pub pi: Vec<RfEntry>,
    pub prices: Vec<TypeEntry>,
}

pub fn oracle_report(inst: &Instance) -> anyhow::Result<OracleReport> {
    let oracle = resolve_oracle(inst)?;
    let family = family_of(oracle.as_ref(), inst)?;
    let opt = brute_force_opt(inst, &family)?;
    let prior = EmpiricalPrior::exhaustive(inst)?;
    Ok(OracleReport {
        opt_revenue: opt.revenue,
        alpha_claimed: oracle.alpha(),
        alpha_measured: measured_alpha(oracle.as_ref(), inst, &prior, &family),
        pi: opt.pi.to_doc(inst).entries,
        prices: opt.prices.entries(inst),
    })
}

pub fn cmd_oracle(args: &OracleArgs) -> anyhow::Result<()> {
    let inst = load_instance(&args.instance)?;
    emit(&oracle_report(&inst)?, args.output.as_deref())
}

/// Exit status for an error: 2 for a failed decomposition, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Decomposition { .. }) => 2,
        _ => 1,
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter("MDMDP_LOG");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
