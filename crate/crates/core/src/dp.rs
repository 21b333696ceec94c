//! Backward induction over the integer stock grid.
//!
//! `V_{tau+1}(s) = -alpha'(entry, exit+, exit-)` and, for `t = tau..1`,
//! `V_t(s) = max_a sum_l w_l [-C_t(s, a, z_l) - P spill + gamma V_{t+1}(f(s, a, z_l))]`
//! over actions allocatable under every sampled `z_l`. A single scenario is the
//! special case of one sample per period with weight one; the full support
//! with exact probabilities gives the exact expectation.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::alloc::{self, Arc};
use crate::error::{Error, Result};
use crate::lp::LpError;
use crate::model::{CapacityPlan, CostSpec, ExogenousRealization, Instance, Scenario, SystemState};
use crate::scenario::{self, SampleSet};

/// Relative tolerance under which a larger action does not displace a smaller
/// one in the Bellman max.
pub const TIE_TOL: f64 = 1e-9;

/// Dense indexing of the stock grid, entries first, each component's range
/// shifted to start at zero. The first component varies slowest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateGrid {
    n_entries: usize,
    lows: Vec<i64>,
    sizes: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl StateGrid {
    pub fn new(instance: &Instance) -> Result<Self> {
        let b = &instance.bounds;
        let mut lows = vec![0; b.entry_max.len()];
        let mut sizes: Vec<usize> = b.entry_max.iter().map(|m| (*m + 1) as usize).collect();
        lows.extend(b.exit_backorder_max.iter().map(|lo| -lo));
        sizes.extend(
            b.exit_max
                .iter()
                .zip(&b.exit_backorder_max)
                .map(|(hi, lo)| (hi + lo + 1) as usize),
        );
        let len = crate::model::state_space_size(instance)?;
        let len = usize::try_from(len).map_err(|_| Error::Overflow("state space size"))?;
        let mut strides = vec![1usize; sizes.len()];
        for d in (0..sizes.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * sizes[d + 1];
        }
        Ok(Self {
            n_entries: b.entry_max.len(),
            lows,
            sizes,
            strides,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn index(&self, state: &SystemState) -> Option<usize> {
        if state.entry.len() + state.exit.len() != self.sizes.len() {
            return None;
        }
        let mut idx = 0;
        for (d, v) in state.entry.iter().chain(&state.exit).enumerate() {
            let off = v - self.lows[d];
            if off < 0 || off as usize >= self.sizes[d] {
                return None;
            }
            idx += off as usize * self.strides[d];
        }
        Some(idx)
    }

    pub fn state(&self, mut idx: usize) -> SystemState {
        let mut comps = Vec::with_capacity(self.sizes.len());
        for d in 0..self.sizes.len() {
            comps.push((idx / self.strides[d]) as i64 + self.lows[d]);
            idx %= self.strides[d];
        }
        let exit = comps.split_off(self.n_entries);
        SystemState { entry: comps, exit }
    }

    pub fn states(&self) -> impl Iterator<Item = SystemState> + '_ {
        (0..self.len).map(|i| self.state(i))
    }
}

/// `V_t` for `t = 1..=tau+1`, stored 0-based (`values[tau]` is terminal).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub grid: StateGrid,
    pub values: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    /// `V_{t+1}` in 1-based terms for 0-based `t`.
    pub fn value(&self, t: usize, state: &SystemState) -> Option<f64> {
        self.grid.index(state).map(|i| self.values[t][i])
    }

    /// Best state and value in 0-based period `t`; the first grid state wins
    /// ties.
    pub fn argmax(&self, t: usize) -> (SystemState, f64) {
        let (idx, v) = self.values[t]
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) });
        (self.grid.state(idx), v)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("t");
        let grid = &self.grid;
        for d in 0..grid.sizes.len() {
            if d < grid.n_entries {
                header.push_str(if grid.n_entries == 1 { ",entry" } else { "" });
                if grid.n_entries > 1 {
                    header.push_str(&format!(",entry{}", d + 1));
                }
            } else {
                let n_exits = grid.sizes.len() - grid.n_entries;
                header.push_str(if n_exits == 1 { ",exit" } else { "" });
                if n_exits > 1 {
                    header.push_str(&format!(",exit{}", d - grid.n_entries + 1));
                }
            }
        }
        writeln!(out, "{header},value")?;
        for (t, row) in self.values.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                let s = grid.state(i);
                let comps: Vec<String> = s.components().iter().map(ToString::to_string).collect();
                writeln!(out, "{},{},{}", t + 1, comps.join(","), v)?;
            }
        }
        Ok(())
    }
}

/// Optimal action per period and state; `None` where no action is feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub grid: StateGrid,
    pub actions: Vec<Vec<Option<i64>>>,
}

impl PolicyTable {
    pub fn action(&self, t: usize, state: &SystemState) -> Option<i64> {
        self.grid.index(state).and_then(|i| self.actions[t][i])
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n_entries = self.grid.n_entries;
        let n_exits = self.grid.sizes.len() - n_entries;
        let name = |base: &str, n: usize| -> Vec<String> {
            if n == 1 {
                vec![base.to_string()]
            } else {
                (1..=n).map(|k| format!("{base}{k}")).collect()
            }
        };
        let mut cols = name("entry", n_entries);
        cols.extend(name("exit", n_exits));
        writeln!(out, "t,{},action", cols.join(","))?;
        for (t, row) in self.actions.iter().enumerate() {
            for (i, a) in row.iter().enumerate() {
                let s = self.grid.state(i);
                let comps: Vec<String> = s.components().iter().map(ToString::to_string).collect();
                let a = a.map_or_else(String::new, |a| a.to_string());
                writeln!(out, "{},{},{}", t + 1, comps.join(","), a)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution {
    pub values: ValueTable,
    pub policy: PolicyTable,
}

impl DpSolution {
    /// `V_1` at `state`.
    pub fn value_at(&self, state: &SystemState) -> Option<f64> {
        self.values.value(0, state)
    }

    /// `max_s V_1(s)` and its maximiser.
    pub fn best_initial(&self) -> (SystemState, f64) {
        self.values.argmax(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    pub discount: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { discount: 1.0 }
    }
}

/// `-alpha'(entry stocks, exit surpluses, exit backorders)`.
pub fn terminal_value(state: &SystemState, costs: &CostSpec) -> f64 {
    let a = &costs.terminal_slopes;
    let ni = state.entry.len();
    let nj = state.exit.len();
    let mut v = 0.0;
    for (i, s) in state.entry.iter().enumerate() {
        v += a[i] * *s as f64;
    }
    for (j, s) in state.exit.iter().enumerate() {
        v += a[ni + j] * (*s).max(0) as f64 + a[ni + nj + j] * (-(*s).min(0)) as f64;
    }
    -v
}

/// Actions in `0..=A_max` whose allocation problem is feasible.
pub fn feasible_actions(
    instance: &Instance,
    period: usize,
    state: &SystemState,
    realization: &ExogenousRealization,
    caps: &[f64],
) -> Result<Vec<i64>> {
    let mut out = Vec::new();
    for a in 0..=instance.bounds.action_max {
        match alloc::immediate_step(instance, period, state, a, realization, caps) {
            Ok(_) => out.push(a),
            Err(Error::Lp(LpError::Infeasible)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Cached outcome of allocating one action against one realization.
#[derive(Debug, Clone)]
struct Outcome {
    transport: f64,
    lane_moves: Box<[i64]>,
}

/// Per-period data shared by all states.
struct Period<'a> {
    caps: Vec<f64>,
    samples: &'a [ExogenousRealization],
    weights: &'a [f64],
    /// Index of each sample's spot-rate tuple among the distinct tuples.
    spot_ids: Vec<usize>,
    n_spot_ids: usize,
    arcs: Vec<Vec<Arc>>,
}

fn prepare_period<'a>(
    instance: &Instance,
    t: usize,
    samples: &'a [ExogenousRealization],
    weights: &'a [f64],
    plan: &CapacityPlan,
) -> Result<Period<'a>> {
    let mut distinct: Vec<&Vec<Vec<f64>>> = Vec::new();
    let mut spot_ids = Vec::with_capacity(samples.len());
    for z in samples {
        let id = match distinct.iter().position(|d| **d == z.spot_rates) {
            Some(id) => id,
            None => {
                distinct.push(&z.spot_rates);
                distinct.len() - 1
            }
        };
        spot_ids.push(id);
    }
    let arcs = samples
        .iter()
        .map(|z| alloc::arcs(instance, t, z))
        .collect::<Result<Vec<_>>>()?;
    Ok(Period {
        caps: plan.period(t),
        samples,
        weights,
        n_spot_ids: distinct.len(),
        spot_ids,
        arcs,
    })
}

struct Evaluator<'a> {
    instance: &'a Instance,
    cache: HashMap<u128, Option<Outcome>>,
}

impl<'a> Evaluator<'a> {
    fn new(instance: &'a Instance) -> Self {
        Self {
            instance,
            cache: HashMap::new(),
        }
    }

    /// The allocation depends on the state only through the availability and
    /// space it leaves, each of which matters only up to `a`.
    fn key(&self, p: &Period, l: usize, state: &SystemState, a: i64) -> u128 {
        let z = &p.samples[l];
        let b = &self.instance.bounds;
        let radix = (a + 1) as u128;
        let mut key = a as u128;
        for (s, q) in state.entry.iter().zip(&z.inflow) {
            key = key * radix + (s + q).clamp(0, a) as u128;
        }
        for (s, m) in state.exit.iter().zip(&b.exit_max) {
            key = key * radix + (m - s).clamp(0, a) as u128;
        }
        key * p.n_spot_ids as u128 + p.spot_ids[l] as u128
    }

    fn outcome(&mut self, p: &Period, l: usize, state: &SystemState, a: i64) -> Result<Option<&Outcome>> {
        let key = self.key(p, l, state, a);
        if !self.cache.contains_key(&key) {
            let value = self.compute(p, l, state, a)?;
            self.cache.insert(key, value);
        }
        Ok(self.cache[&key].as_ref())
    }

    fn compute(&self, p: &Period, l: usize, state: &SystemState, a: i64) -> Result<Option<Outcome>> {
        let inst = self.instance;
        let z = &p.samples[l];
        let problem = alloc::AllocationProblem {
            total_volume: a as f64,
            arcs: p.arcs[l].clone(),
            source_caps: p.caps.clone(),
            entry_available: state
                .entry
                .iter()
                .zip(&z.inflow)
                .map(|(s, q)| (s + q) as f64)
                .collect(),
            exit_space: state
                .exit
                .iter()
                .zip(&inst.bounds.exit_max)
                .map(|(s, m)| (m - s) as f64)
                .collect(),
        };
        match alloc::solve_allocation(&problem) {
            Ok(allocation) => {
                let lanes = alloc::integer_lane_totals(&allocation, &problem.arcs, inst.network.lanes.len());
                Ok(Some(Outcome {
                    transport: allocation.cost,
                    lane_moves: lanes.into_boxed_slice(),
                }))
            }
            Err(LpError::Infeasible) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

/// Bellman update at one state: best value and smallest maximising action.
fn bellman(
    ev: &mut Evaluator,
    p: &Period,
    grid: &StateGrid,
    next: &[f64],
    state: &SystemState,
    discount: f64,
) -> Result<(f64, Option<i64>)> {
    let inst = ev.instance;
    let holding = alloc::holding_cost(state, &inst.costs);
    let penalty = inst.costs.spill_penalty;
    let mut best = f64::NEG_INFINITY;
    let mut best_a = None;
    'actions: for a in 0..=inst.bounds.action_max {
        let mut total = 0.0;
        for l in 0..p.samples.len() {
            let Some(out) = ev.outcome(p, l, state, a)? else {
                continue 'actions;
            };
            let z = &p.samples[l];
            let immediate = holding + out.transport;
            let (next_state, spill) = alloc::transition_with_spill(inst, state, &out.lane_moves, z);
            let v_next = next[grid.index(&next_state).expect("clamped state lies on the grid")];
            total += p.weights[l] * (discount * v_next - (immediate + penalty * spill as f64));
        }
        if best_a.is_none() || total > best + TIE_TOL * best.abs().max(1.0) {
            best = total;
            best_a = Some(a);
        }
    }
    Ok((best, best_a))
}

fn check_plan(instance: &Instance, plan: &CapacityPlan) -> Result<()> {
    plan.check_dims(instance)
}

/// Backward induction against a weighted sample per period.
pub fn solve_expected_with(
    instance: &Instance,
    sample: &SampleSet,
    plan: &CapacityPlan,
    config: DpConfig,
) -> Result<DpSolution> {
    check_plan(instance, plan)?;
    if sample.horizon() != instance.horizon {
        return Err(Error::Dimension(format!(
            "sample covers {} periods, instance has {}",
            sample.horizon(),
            instance.horizon
        )));
    }
    let grid = StateGrid::new(instance)?;
    let tau = instance.horizon;
    let mut values = vec![Vec::new(); tau + 1];
    let mut actions = vec![Vec::new(); tau];
    values[tau] = grid.states().map(|s| terminal_value(&s, &instance.costs)).collect();
    const CHUNK: usize = 256;
    for t in (0..tau).rev() {
        let period = prepare_period(instance, t, &sample.realizations[t], &sample.weights[t], plan)?;
        let next = &values[t + 1];
        let results: Vec<Result<Vec<_>>> = (0..grid.len())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map_init(
                || Evaluator::new(instance),
                |ev, chunk| {
                    chunk
                        .iter()
                        .map(|&i| bellman(ev, &period, &grid, next, &grid.state(i), config.discount))
                        .collect()
                },
            )
            .collect();
        let mut v_t = Vec::with_capacity(grid.len());
        let mut a_t = Vec::with_capacity(grid.len());
        for chunk in results {
            for (v, a) in chunk? {
                v_t.push(v);
                a_t.push(a);
            }
        }
        values[t] = v_t;
        actions[t] = a_t;
    }
    Ok(DpSolution {
        values: ValueTable {
            grid: grid.clone(),
            values,
        },
        policy: PolicyTable { grid, actions },
    })
}

pub fn solve_expected(instance: &Instance, sample: &SampleSet, plan: &CapacityPlan) -> Result<DpSolution> {
    solve_expected_with(instance, sample, plan, DpConfig::default())
}

/// Backward induction on one scenario.
pub fn solve_scenario(instance: &Instance, scenario: &Scenario, plan: &CapacityPlan) -> Result<DpSolution> {
    if scenario.horizon() != instance.horizon {
        return Err(Error::Dimension(format!(
            "scenario has {} periods, instance has {}",
            scenario.horizon(),
            instance.horizon
        )));
    }
    solve_expected(instance, &SampleSet::from_scenario(scenario), plan)
}

/// Exact expectation DP straight from the support, one state at a time with no
/// caching.
pub fn solve_exact(instance: &Instance, plan: &CapacityPlan, cap: u128) -> Result<DpSolution> {
    check_plan(instance, plan)?;
    let support = scenario::enumerate_support(instance, cap)?;
    let grid = StateGrid::new(instance)?;
    let tau = instance.horizon;
    let penalty = instance.costs.spill_penalty;
    let mut values = vec![Vec::new(); tau + 1];
    let mut actions = vec![Vec::new(); tau];
    values[tau] = grid.states().map(|s| terminal_value(&s, &instance.costs)).collect();
    for t in (0..tau).rev() {
        let caps = plan.period(t);
        let mut v_t = Vec::with_capacity(grid.len());
        let mut a_t = Vec::with_capacity(grid.len());
        for state in grid.states() {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = None;
            'actions: for a in 0..=instance.bounds.action_max {
                let mut total = 0.0;
                for z in &support {
                    let step = match alloc::immediate_step(instance, t, &state, a, z, &caps) {
                        Ok(step) => step,
                        Err(Error::Lp(LpError::Infeasible)) => continue 'actions,
                        Err(e) => return Err(e),
                    };
                    let lanes = alloc::integer_lane_totals(&step.allocation, &step.arcs, instance.network.lanes.len());
                    let (next, spill) = alloc::transition_with_spill(instance, &state, &lanes, z);
                    let v_next = values[t + 1][grid.index(&next).expect("clamped")];
                    total += z.probability * (1.0 * v_next - (step.cost + penalty * spill as f64));
                }
                if best_a.is_none() || total > best + TIE_TOL * best.abs().max(1.0) {
                    best = total;
                    best_a = Some(a);
                }
            }
            v_t.push(best);
            a_t.push(best_a);
        }
        values[t] = v_t;
        actions[t] = a_t;
    }
    Ok(DpSolution {
        values: ValueTable {
            grid: grid.clone(),
            values,
        },
        policy: PolicyTable { grid, actions },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStep {
    pub period: usize,
    pub state: SystemState,
    pub action: i64,
    /// Moves per (source, lane) arc, in instance source order.
    pub moves: Vec<f64>,
    pub holding: f64,
    pub transport: f64,
    pub spill: i64,
    /// Holding plus transport plus spill penalty.
    pub cost: f64,
    pub next_state: SystemState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// `-V_{tau+1}` at the final state.
    pub terminal_cost: f64,
    pub total_cost: f64,
}

impl Trajectory {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,entry,exit,action,holding,transport,spill,cost,next_entry,next_exit")?;
        let join = |v: &[i64]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(";");
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.period,
                join(&s.state.entry),
                join(&s.state.exit),
                s.action,
                s.holding,
                s.transport,
                s.spill,
                s.cost,
                join(&s.next_state.entry),
                join(&s.next_state.exit)
            )?;
        }
        Ok(())
    }
}

/// Runs `policy` against `scenario` from `start`.
pub fn rollout(
    instance: &Instance,
    policy: &PolicyTable,
    scenario: &Scenario,
    plan: &CapacityPlan,
    start: &SystemState,
) -> Result<Trajectory> {
    check_plan(instance, plan)?;
    rollout_from(instance, policy, scenario, plan, start, 0)
}

/// Runs `policy` from 0-based period `from` onward, reading realizations
/// `scenario.realizations[from..]`.
pub fn rollout_from(
    instance: &Instance,
    policy: &PolicyTable,
    scenario: &Scenario,
    plan: &CapacityPlan,
    start: &SystemState,
    from: usize,
) -> Result<Trajectory> {
    let penalty = instance.costs.spill_penalty;
    let mut state = start.clone();
    let mut steps = Vec::new();
    let mut total = 0.0;
    for t in from..instance.horizon {
        let a = policy.action(t, &state).ok_or_else(|| Error::UndefinedPolicyState {
            period: t + 1,
            state: state.components(),
        })?;
        let z = &scenario.realizations[t];
        let step = alloc::immediate_step(instance, t, &state, a, z, &plan.period(t))?;
        let lanes = alloc::integer_lane_totals(&step.allocation, &step.arcs, instance.network.lanes.len());
        let (next, spill) = alloc::transition_with_spill(instance, &state, &lanes, z);
        let cost = step.cost + penalty * spill as f64;
        total += cost;
        steps.push(TrajectoryStep {
            period: t + 1,
            state: state.clone(),
            action: a,
            moves: step.allocation.moves,
            holding: step.holding,
            transport: step.allocation.cost,
            spill,
            cost,
            next_state: next.clone(),
        });
        state = next;
    }
    let terminal_cost = -terminal_value(&state, &instance.costs);
    Ok(Trajectory {
        steps,
        terminal_cost,
        total_cost: total + terminal_cost,
    })
}

/// Dense `entry x exit` values of 0-based period `t` on a single-lane grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    pub period: usize,
    pub entries: Vec<i64>,
    pub exits: Vec<i64>,
    /// Row per entry level, column per exit level.
    pub values: Vec<Vec<f64>>,
}

impl ValueSurface {
    /// Cell with the largest value; the first cell in row-major order wins ties.
    pub fn argmax(&self) -> (i64, i64, f64) {
        let mut best = (self.entries[0], self.exits[0], f64::NEG_INFINITY);
        for (r, row) in self.values.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if *v > best.2 {
                    best = (self.entries[r], self.exits[c], *v);
                }
            }
        }
        best
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,entry,exit,value")?;
        for (r, row) in self.values.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                writeln!(out, "{},{},{},{}", self.period + 1, self.entries[r], self.exits[c], v)?;
            }
        }
        Ok(())
    }
}

pub fn value_surface(values: &ValueTable, t: usize) -> Result<ValueSurface> {
    let g = &values.grid;
    if g.n_entries != 1 || g.sizes.len() != 2 {
        return Err(Error::NotPlanar);
    }
    if t >= values.values.len() {
        return Err(Error::InvalidArgument(format!("period {} is out of range", t + 1)));
    }
    let entries: Vec<i64> = (0..g.sizes[0] as i64).map(|e| e + g.lows[0]).collect();
    let exits: Vec<i64> = (0..g.sizes[1] as i64).map(|x| x + g.lows[1]).collect();
    let rows = entries
        .iter()
        .map(|e| {
            exits
                .iter()
                .map(|x| values.value(t, &SystemState::new(vec![*e], vec![*x])).unwrap())
                .collect()
        })
        .collect();
    Ok(ValueSurface {
        period: t,
        entries,
        exits,
        values: rows,
    })
}
