//! Command-line front end. Every command reads JSON inputs, writes CSV/JSON
//! outputs into a directory and is deterministic in its flags.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::capopt::{self, CapacityObjective, Evaluator, OptimizeConfig};
use crate::dp;
use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig, SampleLabel};
use crate::model::{generate_instance, CapacityPlan, GenerateShape, Instance, Scenario};
use crate::scenario::{self, Proposal, SampleSet, ScenarioFile, Weighting, DEFAULT_SUPPORT_CAP};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "drayage", version, about = "Drayage allocation policies and capacity planning")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic instance.
    GenInstance(GenInstanceArgs),
    /// Sample a batch of scenarios from an instance.
    SampleScenarios(SampleScenariosArgs),
    /// Backward induction for a fixed capacity plan.
    SolvePolicy(SolvePolicyArgs),
    /// Search for the best capacity plan.
    OptimizeCapacity(OptimizeArgs),
    /// Evaluate uniformly sampled integer capacity plans.
    MonteCarlo(MonteCarloArgs),
    /// Regret of a shared plan on in-sample and fresh scenarios.
    Regret(RegretArgs),
}

#[derive(Debug, Args)]
pub struct GenInstanceArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub entries: usize,
    #[arg(long)]
    pub exits: usize,
    /// Number of strategic bids.
    #[arg(long)]
    pub strategic: usize,
    #[arg(long)]
    pub spot: usize,
    #[arg(long)]
    pub horizon: usize,
    /// Number of carriers competing for bids (default: one per bid).
    #[arg(long)]
    pub carriers: Option<usize>,
    /// JSON file with further generator fields.
    #[arg(long)]
    pub shape: Option<PathBuf>,
    #[arg(long, default_value = "instance.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleScenariosArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "scenarios.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicySampleMode {
    /// One realization per period read from `--scenario`.
    Scenario,
    /// The full support with exact probabilities.
    Enumerate,
    /// `--n` i.i.d. draws per period.
    Sample,
}

#[derive(Debug, Args)]
pub struct SolvePolicyArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Scenario file; required in scenario mode and used for the rollout.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "scenario")]
    pub sample_mode: PolicySampleMode,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampling law in sample mode.
    #[arg(long, value_enum, default_value = "uniform")]
    pub proposal: Proposal,
    #[arg(long, value_enum, default_value = "probability")]
    pub weighting: Weighting,
    /// Capacity plan (default: the instance's reference plan).
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizeMode {
    Scenario,
    Saa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Parameterization {
    Full,
    Quadratic,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value = "scenario")]
    pub mode: OptimizeMode,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Sample size in saa mode.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampling law in saa mode.
    #[arg(long, value_enum, default_value = "law")]
    pub proposal: Proposal,
    #[arg(long, value_enum, default_value = "uniform")]
    pub weighting: Weighting,
    /// Starting plan (default: the instance's reference plan).
    #[arg(long)]
    pub start: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub parameterization: Parameterization,
    #[arg(long, default_value_t = 1e-3)]
    pub fd_step: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegretArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub shared_plan: PathBuf,
    #[arg(long)]
    pub in_seed: u64,
    #[arg(long)]
    pub out_seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Number of Q-Q points.
    #[arg(long, default_value_t = 101)]
    pub quantiles: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Maps a library error onto the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Lp(_) | Error::UndefinedPolicyState { .. } => EXIT_SOLVER,
        _ => EXIT_USAGE,
    }
}

/// Parses `args`, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()));
        }
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::GenInstance(a) => gen_instance(a),
        Command::SampleScenarios(a) => sample_scenarios(a),
        Command::SolvePolicy(a) => solve_policy(a),
        Command::OptimizeCapacity(a) => optimize_capacity(a),
        Command::MonteCarlo(a) => monte_carlo(a),
        Command::Regret(a) => regret(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_plan(path: Option<&Path>, instance: &Instance) -> Result<CapacityPlan> {
    let plan = match path {
        Some(p) => serde_json::from_str::<CapacityPlan>(&std::fs::read_to_string(p)?)?,
        None => instance
            .reference_plan
            .clone()
            .ok_or_else(|| Error::InvalidArgument("no plan given and the instance has no reference plan".into()))?,
    };
    plan.check_dims(instance)?;
    Ok(plan)
}

fn load_one_scenario(path: &Path, instance: &Instance) -> Result<Scenario> {
    let sc = scenario::load_scenarios(path)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidArgument("scenario file is empty".into()))?;
    if sc.horizon() != instance.horizon {
        return Err(Error::Dimension(format!(
            "scenario has {} periods, instance has {}",
            sc.horizon(),
            instance.horizon
        )));
    }
    Ok(sc)
}

fn gen_instance(a: GenInstanceArgs) -> Result<()> {
    let mut shape = match &a.shape {
        Some(p) => serde_json::from_str::<GenerateShape>(&std::fs::read_to_string(p)?)?,
        None => GenerateShape::default(),
    };
    shape.n_entries = a.entries;
    shape.n_exits = a.exits;
    shape.n_bids = a.strategic;
    shape.n_carriers = a.carriers.unwrap_or(a.strategic);
    shape.n_spot = a.spot;
    shape.horizon = a.horizon;
    let inst = generate_instance(a.seed, &shape)?;
    std::fs::write(&a.out, inst.to_json())?;
    println!("wrote {} ({} sources)", a.out.display(), inst.n_sources());
    Ok(())
}

fn sample_scenarios(a: SampleScenariosArgs) -> Result<()> {
    let inst = Instance::load(&a.instance)?;
    let scenarios = scenario::sample_scenarios(&inst, a.n, a.seed)?;
    ScenarioFile::new(Some(a.seed), scenarios).save(&a.out)?;
    println!("wrote {} scenarios to {}", a.n, a.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct PolicySummary {
    mode: &'static str,
    initial_state: Vec<i64>,
    value_at_initial: Option<f64>,
    best_initial_state: Vec<i64>,
    best_initial_value: f64,
    reservation_cost: f64,
    /// `reservation_cost - value_at_initial`.
    total_cost_at_initial: Option<f64>,
    total_cost_at_best: f64,
    rollout_total_cost: Option<f64>,
}

fn solve_policy(a: SolvePolicyArgs) -> Result<()> {
    let inst = Instance::load(&a.instance)?;
    let plan = load_plan(a.plan.as_deref(), &inst)?;
    let sc = match &a.scenario {
        Some(p) => Some(load_one_scenario(p, &inst)?),
        None => None,
    };
    let (mode, sample) = match a.sample_mode {
        PolicySampleMode::Scenario => {
            let sc = sc
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("scenario mode needs --scenario".into()))?;
            ("scenario", SampleSet::from_scenario(sc))
        }
        PolicySampleMode::Enumerate => ("enumerate", SampleSet::enumerated(&inst, DEFAULT_SUPPORT_CAP)?),
        PolicySampleMode::Sample => ("sample", scenario::build_sample_set_with(&inst, a.n, a.seed, a.proposal, a.weighting)?),
    };
    let sol = dp::solve_expected(&inst, &sample, &plan)?;
    std::fs::create_dir_all(&a.out)?;
    sol.values.write_csv(create(&a.out.join("values.csv"))?)?;
    sol.policy.write_csv(create(&a.out.join("policy.csv"))?)?;
    if inst.n_entries() == 1 && inst.n_exits() == 1 {
        for t in 0..inst.horizon {
            dp::value_surface(&sol.values, t)?.write_csv(create(&a.out.join(format!("surface_t{}.csv", t + 1)))?)?;
        }
    }
    let reservation = capopt::reservation_cost(&plan, &inst.reservation_rates())?;
    let value_at_initial = sol.value_at(&inst.initial_state);
    let (best_state, best_value) = sol.best_initial();
    let rollout_total_cost = match (&sc, value_at_initial) {
        (Some(sc), Some(_)) => {
            let tr = dp::rollout(&inst, &sol.policy, sc, &plan, &inst.initial_state)?;
            tr.write_csv(create(&a.out.join("trajectory.csv"))?)?;
            Some(tr.total_cost)
        }
        _ => None,
    };
    let summary = PolicySummary {
        mode,
        initial_state: inst.initial_state.components(),
        value_at_initial,
        best_initial_state: best_state.components(),
        best_initial_value: best_value,
        reservation_cost: reservation,
        total_cost_at_initial: value_at_initial.map(|v| reservation - v),
        total_cost_at_best: reservation - best_value,
        rollout_total_cost,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    match summary.total_cost_at_initial {
        Some(c) => println!("total cost at {:?}: {c}", summary.initial_state),
        None => println!("initial state lies off the grid"),
    }
    println!("total cost at best start {:?}: {}", summary.best_initial_state, summary.total_cost_at_best);
    Ok(())
}

#[derive(Debug, Serialize)]
struct OptimizeSummary {
    mode: &'static str,
    parameterization: &'static str,
    start_total_cost: f64,
    best_total_cost: f64,
    improvement_percent: f64,
    raw_objective: f64,
    rounded_objective: f64,
    iterations: usize,
    gradient_evaluations: usize,
    beta: Option<Vec<[f64; 3]>>,
}

fn optimize_capacity(a: OptimizeArgs) -> Result<()> {
    let inst = Instance::load(&a.instance)?;
    let start = load_plan(a.start.as_deref(), &inst)?;
    let config = OptimizeConfig {
        fd_step: a.fd_step,
        tolerance: a.tolerance,
        max_iter: a.max_iter,
        restarts: a.restarts,
        seed: a.seed,
    };
    let (mode, obj) = match a.mode {
        OptimizeMode::Scenario => {
            let p = a
                .scenario
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("scenario mode needs --scenario".into()))?;
            ("scenario", CapacityObjective::new(&inst, Evaluator::ScenarioLp(load_one_scenario(p, &inst)?)))
        }
        OptimizeMode::Saa => ("saa", capopt::saa_objective(&inst, a.n, a.seed, a.proposal, a.weighting)?),
    };
    let (parameterization, result, beta) = match a.parameterization {
        Parameterization::Full => ("full", capopt::optimize_capacity(&obj, &start, &config)?, None),
        Parameterization::Quadratic => {
            let q = capopt::optimize_capacity_quadratic(&obj, &start, &config)?;
            ("quadratic", q.result, Some(q.beta))
        }
    };
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("best_plan.json"), &result.best_plan)?;
    result.write_trace_csv(create(&a.out.join("trace.csv"))?)?;
    let start_total = -result.start_objective;
    let summary = OptimizeSummary {
        mode,
        parameterization,
        start_total_cost: start_total,
        best_total_cost: result.total_cost,
        improvement_percent: if start_total != 0.0 {
            100.0 * (start_total - result.total_cost) / start_total
        } else {
            0.0
        },
        raw_objective: result.raw_objective,
        rounded_objective: result.rounded_objective,
        iterations: result.iterations,
        gradient_evaluations: result.gradient_evaluations,
        beta,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!(
        "total cost {:.2} -> {:.2} ({:.1}% lower)",
        summary.start_total_cost, summary.best_total_cost, summary.improvement_percent
    );
    Ok(())
}

fn monte_carlo(a: MonteCarloArgs) -> Result<()> {
    let inst = Instance::load(&a.instance)?;
    let sc = load_one_scenario(&a.scenario, &inst)?;
    let obj = CapacityObjective::new(&inst, Evaluator::ScenarioLp(sc));
    let r = capopt::monte_carlo_search(&obj, a.m, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    r.write_summary_csv(create(&a.out.join("summary.csv"))?)?;
    r.write_samples_csv(create(&a.out.join("samples.csv"))?)?;
    write_json(&a.out.join("best_plan.json"), &r.best_plan)?;
    println!(
        "{} samples: total cost min {} median {} max {}",
        a.m, r.total_cost.min, r.total_cost.median, r.total_cost.max
    );
    Ok(())
}

fn regret(a: RegretArgs) -> Result<()> {
    let inst = Instance::load(&a.instance)?;
    let shared = load_plan(Some(&a.shared_plan), &inst)?;
    if a.in_seed == a.out_seed {
        return Err(Error::InvalidArgument("in- and out-of-sample seeds must differ".into()));
    }
    let cfg = EvalConfig {
        x_max: None,
        best_initial: true,
    };
    let ins = scenario::sample_scenarios(&inst, a.n, a.in_seed)?;
    let outs = scenario::sample_scenarios(&inst, a.n, a.out_seed)?;
    let in_recs = eval::regret_profile(&inst, &shared, &ins, &cfg)?;
    let out_recs = eval::regret_profile(&inst, &shared, &outs, &cfg)?;
    let report = eval::generalization_report(&in_recs, &out_recs, a.quantiles)?;
    std::fs::create_dir_all(&a.out)?;
    eval::write_regret_csv(
        create(&a.out.join("regret.csv"))?,
        &[(SampleLabel::In, &in_recs), (SampleLabel::Out, &out_recs)],
    )?;
    report.write_csv(create(&a.out.join("qq.csv"))?)?;
    eval::write_summary_csv(
        create(&a.out.join("summary.csv"))?,
        &[("regret_in", &report.in_summary), ("regret_out", &report.out_summary)],
    )?;
    write_json(&a.out.join("report.json"), &report)?;
    println!(
        "median regret in {:.3} out {:.3}; Q-Q spearman {:.4}",
        report.in_summary.median, report.out_summary.median, report.spearman
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn missing_flag_is_usage_error() {
        assert_eq!(main_with_args(["drayage", "gen-instance", "--seed", "1"]), EXIT_USAGE);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidArgument(String::new())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Lp(crate::lp::LpError::Infeasible)), EXIT_SOLVER);
    }
}
