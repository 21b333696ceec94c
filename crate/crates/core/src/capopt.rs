//! Capacity reservation: maximise `V_1(x) - v(x)` over a box of plans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp;
use crate::error::{Error, Result};
use crate::eval::{summarize, Summary};
use crate::model::{CapacityPlan, Instance, Scenario};
use crate::mslp::{self, InitialState};
use crate::optim::{self, LbfgsbConfig, TracePoint};
use crate::scenario::{self, derive_seed, SampleSet};

/// `v(x) = sum_t sum_k v^k_t x^k_t`.
pub fn reservation_cost(plan: &CapacityPlan, rates: &[Vec<f64>]) -> Result<f64> {
    if plan.capacity.len() != rates.len()
        || plan.capacity.iter().zip(rates).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::Dimension("plan and reservation rates differ in shape".into()));
    }
    Ok(plan
        .capacity
        .iter()
        .flatten()
        .zip(rates.iter().flatten())
        .map(|(x, v)| x * v)
        .sum())
}

pub use crate::scenario::{Proposal, Weighting};

pub fn scenario_weights(scenarios: &[Scenario], weighting: Weighting) -> Vec<f64> {
    scenario::weights(&scenarios.iter().map(|s| s.probability).collect::<Vec<_>>(), weighting)
}

/// Estimator of `V_1(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluator {
    /// Negated optimum of one scenario's linear program.
    ScenarioLp(Scenario),
    /// Weighted mean of per-scenario linear programs.
    ExpectedLp { scenarios: Vec<Scenario>, weights: Vec<f64> },
    /// Backward induction against a weighted per-period sample.
    SaaDp(SampleSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityObjective {
    pub instance: Instance,
    pub evaluator: Evaluator,
    pub rates: Vec<Vec<f64>>,
    /// Upper bound per coordinate, flattened source by source.
    pub x_max: Vec<f64>,
    pub initial: InitialState,
}

impl CapacityObjective {
    /// Box `[0, A_max]` on every coordinate and the value taken at the best
    /// initial state.
    pub fn new(instance: &Instance, evaluator: Evaluator) -> Self {
        let dim = instance.n_sources() * instance.horizon;
        Self {
            rates: instance.reservation_rates(),
            x_max: vec![instance.bounds.action_max as f64; dim],
            initial: InitialState::Best,
            instance: instance.clone(),
            evaluator,
        }
    }

    pub fn with_box(mut self, x_max: f64) -> Self {
        self.x_max = vec![x_max; self.x_max.len()];
        self
    }

    pub fn with_initial(mut self, initial: InitialState) -> Self {
        self.initial = initial;
        self
    }

    pub fn dim(&self) -> usize {
        self.x_max.len()
    }

    /// Number of integer plans in the box.
    pub fn grid_size(&self) -> u128 {
        self.x_max.iter().map(|m| m.floor() as u128 + 1).product()
    }

    pub fn n_sources(&self) -> usize {
        self.instance.n_sources()
    }

    pub fn horizon(&self) -> usize {
        self.instance.horizon
    }

    pub fn plan(&self, flat: &[f64]) -> CapacityPlan {
        CapacityPlan::from_flat(flat, self.n_sources(), self.horizon())
    }

    /// Estimate of `V_1(x)`.
    pub fn value(&self, plan: &CapacityPlan) -> Result<f64> {
        let inst = &self.instance;
        match &self.evaluator {
            Evaluator::ScenarioLp(s) => {
                Ok(-mslp::solve_mslp(&mslp::build_mslp(inst, s, plan, &self.initial)?)?.cost)
            }
            Evaluator::ExpectedLp { scenarios, weights } => {
                mslp::expected_value_lp(inst, scenarios, weights, plan, &self.initial)
            }
            Evaluator::SaaDp(sample) => {
                let sol = dp::solve_expected(inst, sample, plan)?;
                match &self.initial {
                    InitialState::Best => Ok(sol.best_initial().1),
                    InitialState::Fixed(s) => sol
                        .value_at(s)
                        .ok_or_else(|| Error::InvalidArgument("initial state lies off the grid".into())),
                }
            }
        }
    }

    /// Total exogenous flow used as the cost-per-TEU denominator.
    pub fn flow(&self) -> f64 {
        match &self.evaluator {
            Evaluator::ScenarioLp(s) => s.total_flow() as f64,
            Evaluator::ExpectedLp { scenarios, weights } => scenarios
                .iter()
                .zip(weights)
                .map(|(s, w)| w * s.total_flow() as f64)
                .sum(),
            Evaluator::SaaDp(sample) => sample
                .realizations
                .iter()
                .zip(&sample.weights)
                .map(|(zs, ws)| zs.iter().zip(ws).map(|(z, w)| w * z.total_flow() as f64).sum::<f64>())
                .sum(),
        }
    }
}

/// `V_1(x) - v(x)`.
pub fn objective(plan: &CapacityPlan, obj: &CapacityObjective) -> Result<f64> {
    plan.check_dims(&obj.instance)?;
    Ok(obj.value(plan)? - reservation_cost(plan, &obj.rates)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    pub fd_step: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    /// Extra uniformly drawn starting plans.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            fd_step: 1e-3,
            tolerance: 1e-6,
            max_iter: 100,
            restarts: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub best_plan: CapacityPlan,
    pub best_objective: f64,
    /// `-best_objective`.
    pub total_cost: f64,
    pub start_objective: f64,
    /// Continuous optimum before rounding and its objective.
    pub raw_plan: CapacityPlan,
    pub raw_objective: f64,
    pub rounded_objective: f64,
    pub iterations: usize,
    pub gradient_evaluations: usize,
    /// Trace of the run that produced the best plan, in objective terms.
    pub trace: Vec<TracePoint>,
}

impl OptimizationResult {
    pub fn write_trace_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,objective,grad_norm")?;
        for p in &self.trace {
            writeln!(out, "{},{},{}", p.iter, p.objective, p.grad_norm)?;
        }
        Ok(())
    }
}

/// Best point, its value, iterations, gradient evaluations and trace.
type BoxOptimum = (Vec<f64>, f64, usize, usize, Vec<TracePoint>);

/// Maximises `f` over `[0, upper]` from `start` and from `restarts` uniform
/// draws, keeping the best.
fn maximize_box<F>(
    f: &F,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    config: &OptimizeConfig,
) -> Result<BoxOptimum>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let neg = |x: &[f64]| f(x).map(|v| -v);
    let grad = |x: &[f64]| optim::central_difference(&neg, x, config.fd_step, lower, upper);
    let lcfg = LbfgsbConfig {
        max_iter: config.max_iter,
        tolerance: config.tolerance,
        ..LbfgsbConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = vec![start.to_vec()];
    for _ in 0..config.restarts {
        starts.push(
            lower
                .iter()
                .zip(upper)
                .map(|(l, u)| if u > l { rng.random_range(*l..=*u) } else { *l })
                .collect(),
        );
    }
    let mut best: Option<(Vec<f64>, f64, Vec<TracePoint>)> = None;
    let mut iterations = 0;
    let mut gradient_evaluations = 0;
    for x0 in &starts {
        let r = optim::minimize(neg, grad, x0, lower, upper, &lcfg)?;
        iterations += r.iterations;
        gradient_evaluations += r.gradient_evaluations;
        let value = -r.fx;
        if best.as_ref().is_none_or(|b| value > b.1) {
            let trace = r
                .trace
                .iter()
                .map(|p| TracePoint {
                    objective: -p.objective,
                    ..*p
                })
                .collect();
            best = Some((r.x, value, trace));
        }
    }
    let (x, v, trace) = best.expect("at least one start");
    Ok((x, v, iterations, gradient_evaluations, trace))
}

fn check_start(obj: &CapacityObjective, start: &CapacityPlan) -> Result<Vec<f64>> {
    start.check_dims(&obj.instance)?;
    let flat = start.flatten();
    if flat.iter().zip(&obj.x_max).any(|(x, m)| *x > *m + 1e-12) {
        return Err(Error::InvalidArgument("start plan lies outside the box".into()));
    }
    Ok(flat)
}

/// Box-constrained quasi-Newton ascent with central finite-difference
/// gradients, restarts and a final rounding check.
pub fn optimize_capacity(
    obj: &CapacityObjective,
    start: &CapacityPlan,
    config: &OptimizeConfig,
) -> Result<OptimizationResult> {
    let x0 = check_start(obj, start)?;
    let lower = vec![0.0; obj.dim()];
    let f = |x: &[f64]| objective(&obj.plan(x), obj);
    let start_objective = f(&x0)?;
    let (x, raw_objective, iterations, gradient_evaluations, trace) =
        maximize_box(&f, &x0, &lower, &obj.x_max, config)?;
    finish(obj, start, start_objective, x, raw_objective, iterations, gradient_evaluations, trace)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    obj: &CapacityObjective,
    start: &CapacityPlan,
    start_objective: f64,
    x: Vec<f64>,
    raw_objective: f64,
    iterations: usize,
    gradient_evaluations: usize,
    trace: Vec<TracePoint>,
) -> Result<OptimizationResult> {
    let raw_plan = obj.plan(&x);
    let rounded: Vec<f64> = x
        .iter()
        .zip(&obj.x_max)
        .map(|(v, m)| v.round().clamp(0.0, *m))
        .collect();
    let rounded_plan = obj.plan(&rounded);
    let rounded_objective = objective(&rounded_plan, obj)?;
    let (mut best_plan, mut best_objective) = if rounded_objective >= raw_objective {
        (rounded_plan, rounded_objective)
    } else {
        (raw_plan.clone(), raw_objective)
    };
    if best_objective < start_objective {
        best_plan = start.clone();
        best_objective = start_objective;
    }
    Ok(OptimizationResult {
        best_plan,
        best_objective,
        total_cost: -best_objective,
        start_objective,
        raw_plan,
        raw_objective,
        rounded_objective,
        iterations,
        gradient_evaluations,
        trace,
    })
}

/// `x^k_t = clamp(b0 + b1 t + b2 t^2, 0, x_max)` for `t = 1..=tau`.
pub fn quadratic_parameterization(beta: &[[f64; 3]], horizon: usize, x_max: f64) -> CapacityPlan {
    CapacityPlan::new(
        beta.iter()
            .map(|b| {
                (1..=horizon)
                    .map(|t| {
                        let t = t as f64;
                        (b[0] + b[1] * t + b[2] * t * t).clamp(0.0, x_max)
                    })
                    .collect()
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticResult {
    pub beta: Vec<[f64; 3]>,
    pub result: OptimizationResult,
}

/// Optimises the `3n` coefficients of [`quadratic_parameterization`]. Each
/// source starts from a constant at the mean of its `start` row.
pub fn optimize_capacity_quadratic(
    obj: &CapacityObjective,
    start: &CapacityPlan,
    config: &OptimizeConfig,
) -> Result<QuadraticResult> {
    check_start(obj, start)?;
    let n = obj.n_sources();
    let tau = obj.horizon() as f64;
    let x_max = obj.x_max.iter().copied().fold(0.0, f64::max);
    let to_beta = |b: &[f64]| -> Vec<[f64; 3]> { b.chunks(3).map(|c| [c[0], c[1], c[2]]).collect() };
    let lower: Vec<f64> = (0..n).flat_map(|_| [-x_max, -x_max, -x_max / tau]).collect();
    let upper: Vec<f64> = (0..n).flat_map(|_| [x_max, x_max, x_max / tau]).collect();
    let b0: Vec<f64> = start
        .capacity
        .iter()
        .flat_map(|row| [row.iter().sum::<f64>() / row.len() as f64, 0.0, 0.0])
        .collect();
    let f = |b: &[f64]| objective(&quadratic_parameterization(&to_beta(b), obj.horizon(), x_max), obj);
    let start_plan = quadratic_parameterization(&to_beta(&b0), obj.horizon(), x_max);
    let start_objective = f(&b0)?;
    let (b, raw_objective, iterations, gradient_evaluations, trace) = maximize_box(&f, &b0, &lower, &upper, config)?;
    let beta = to_beta(&b);
    let plan = quadratic_parameterization(&beta, obj.horizon(), x_max);
    let result = finish(
        obj,
        &start_plan,
        start_objective,
        plan.flatten(),
        raw_objective,
        iterations,
        gradient_evaluations,
        trace,
    )?;
    Ok(QuadraticResult { beta, result })
}

/// Objective on `n` scenarios sampled with `seed`.
pub fn saa_objective(
    instance: &Instance,
    n: usize,
    seed: u64,
    proposal: Proposal,
    weighting: Weighting,
) -> Result<CapacityObjective> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let scenarios = scenario::sample_scenarios_with(instance, n, seed, proposal)?;
    let weights = scenario_weights(&scenarios, weighting);
    Ok(CapacityObjective::new(instance, Evaluator::ExpectedLp { scenarios, weights }))
}

/// [`optimize_capacity`] on the expected linear program over `n` scenarios
/// drawn from the law with equal weights.
pub fn optimize_capacity_saa(
    instance: &Instance,
    n: usize,
    seed: u64,
    start: &CapacityPlan,
    config: &OptimizeConfig,
) -> Result<OptimizationResult> {
    let obj = saa_objective(instance, n, seed, Proposal::Law, Weighting::Uniform)?;
    optimize_capacity(&obj, start, config)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSample {
    pub plan: Vec<f64>,
    pub total_cost: f64,
    pub cost_per_teu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloResult {
    pub best_plan: CapacityPlan,
    pub best_total_cost: f64,
    pub total_cost: Summary,
    pub cost_per_teu: Summary,
    pub samples: Vec<MonteCarloSample>,
}

impl MonteCarloResult {
    pub fn write_samples_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let dim = self.samples.first().map_or(0, |s| s.plan.len());
        let cols: Vec<String> = (0..dim).map(|d| format!("x{d}")).collect();
        writeln!(out, "sample,{},total_cost,cost_per_teu", cols.join(","))?;
        for (n, s) in self.samples.iter().enumerate() {
            let xs: Vec<String> = s.plan.iter().map(ToString::to_string).collect();
            writeln!(out, "{n},{},{},{}", xs.join(","), s.total_cost, s.cost_per_teu)?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "metric,min,q1,median,mean,q3,max")?;
        for (name, s) in [("total_cost", &self.total_cost), ("cost_per_teu", &self.cost_per_teu)] {
            writeln!(out, "{name},{},{},{},{},{},{}", s.min, s.q1, s.median, s.mean, s.q3, s.max)?;
        }
        Ok(())
    }
}

/// Uniform plan on the integer grid `{0..=floor(x_max)}` per coordinate for
/// sample `index`.
pub fn grid_sample(seed: u64, index: u64, x_max: &[f64]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
    x_max
        .iter()
        .map(|m| rng.random_range(0..=m.floor() as u32) as f64)
        .collect()
}

/// Evaluates `count` uniform integer plans; sample `n` uses seed
/// `derive_seed(seed, n)`, so results do not depend on the thread count.
pub fn monte_carlo_search(obj: &CapacityObjective, count: usize, seed: u64) -> Result<MonteCarloResult> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let flow = obj.flow();
    let samples: Vec<MonteCarloSample> = (0..count as u64)
        .into_par_iter()
        .map(|n| {
            let plan = grid_sample(seed, n, &obj.x_max);
            let total_cost = -objective(&obj.plan(&plan), obj)?;
            Ok(MonteCarloSample {
                cost_per_teu: if flow > 0.0 { total_cost / flow } else { f64::NAN },
                plan,
                total_cost,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = samples
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if s.total_cost < samples[b].total_cost { i } else { b });
    let totals: Vec<f64> = samples.iter().map(|s| s.total_cost).collect();
    let per_teu: Vec<f64> = samples.iter().map(|s| s.cost_per_teu).collect();
    Ok(MonteCarloResult {
        best_plan: obj.plan(&samples[best].plan),
        best_total_cost: samples[best].total_cost,
        total_cost: summarize(&totals)?,
        cost_per_teu: summarize(&per_teu)?,
        samples,
    })
}
