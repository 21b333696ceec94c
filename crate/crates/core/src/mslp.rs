//! Deterministic-equivalent linear program of one scenario.
//!
//! Moves are continuous and the stock balance is written without clamping.
//! Entry stock above its limit and backorders beyond theirs are carried by
//! nonnegative overflow and shortfall columns charged at the spill penalty,
//! which keeps the program feasible for every plan.
//!
//! Column names: `move[k][i][j][t]` (source id, entry id, exit id, period),
//! `entry[i][t]`, `splus[j][t]`, `sminus[j][t]` for `t = 1..=tau+1`,
//! `overflow[i][t]`, `shortfall[j][t]` and, in the capacity program,
//! `cap[k][t]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::alloc;
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpSolution, RowKind};
use crate::model::{CapacityPlan, Instance, Scenario, SystemState};

const INTEGRAL_TOL: f64 = 1e-7;

/// How the first-period stock enters the program.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Pinned to the given state.
    Fixed(SystemState),
    /// Free within bounds, so the optimum is taken over every start.
    Best,
}

#[derive(Debug, Clone, PartialEq)]
enum Caps<'a> {
    Fixed(&'a CapacityPlan),
    /// Capacities are columns in `[0, x_max]` priced at the reservation rates.
    Variable { x_max: f64 },
}

/// Column of one (source, lane) move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoveColumn {
    pub source: usize,
    pub entry: usize,
    pub exit: usize,
    pub lane: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultistageLp {
    pub lp: LinearProgram,
    pub horizon: usize,
    pub columns: Vec<MoveColumn>,
    /// `[t][c]` column index of move `c` in period `t`.
    moves: Vec<Vec<usize>>,
    /// `[t][i]` for `t = 0..=tau`.
    entry: Vec<Vec<usize>>,
    splus: Vec<Vec<usize>>,
    sminus: Vec<Vec<usize>>,
    overflow: Vec<Vec<usize>>,
    shortfall: Vec<Vec<usize>>,
    /// `[k][t]` capacity columns of the capacity program.
    caps: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MslpState {
    pub entry: Vec<f64>,
    pub exit: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MslpSolution {
    pub cost: f64,
    /// `[t][c]` moves aligned with `MultistageLp::columns`.
    pub moves: Vec<Vec<f64>>,
    /// Stocks for `t = 1..=tau+1`.
    pub states: Vec<MslpState>,
    pub overflow: Vec<Vec<f64>>,
    pub shortfall: Vec<Vec<f64>>,
    /// Whether every move is integral within `1e-7`.
    pub integral: bool,
    /// Capacities chosen by the capacity program.
    pub plan: Option<CapacityPlan>,
}

impl MslpSolution {
    /// Total moves per period.
    pub fn period_totals(&self) -> Vec<f64> {
        self.moves.iter().map(|m| m.iter().sum()).collect()
    }
}

fn build(instance: &Instance, scenario: &Scenario, caps: Caps, init: &InitialState) -> Result<MultistageLp> {
    let tau = instance.horizon;
    if scenario.horizon() != tau {
        return Err(Error::Dimension(format!(
            "scenario has {} periods, instance has {}",
            scenario.horizon(),
            tau
        )));
    }
    if let Caps::Fixed(plan) = caps {
        plan.check_dims(instance)?;
    }
    let net = &instance.network;
    let b = &instance.bounds;
    let c = &instance.costs;
    let (ni, nj) = (instance.n_entries(), instance.n_exits());
    let mut lp = LinearProgram::new();

    let first_arcs = alloc::arcs(instance, 0, &scenario.realizations[0])?;
    let columns: Vec<MoveColumn> = first_arcs
        .iter()
        .map(|a| MoveColumn {
            source: a.source,
            entry: a.entry,
            exit: a.exit,
            lane: a.lane,
        })
        .collect();
    let lanes_of = |k: usize| columns.iter().filter(|c| c.source == k).count();

    let cap_cols = match caps {
        Caps::Variable { x_max } => Some(
            instance
                .sources
                .iter()
                .map(|s| {
                    (0..tau)
                        .map(|t| lp.add_var(format!("cap[{}][{}]", s.id, t + 1), s.reservation_rate[t], 0.0, x_max))
                        .collect()
                })
                .collect::<Vec<Vec<usize>>>(),
        ),
        Caps::Fixed(_) => None,
    };

    let mut moves = Vec::with_capacity(tau);
    for t in 0..tau {
        let arcs = alloc::arcs(instance, t, &scenario.realizations[t])?;
        let row: Vec<usize> = arcs
            .iter()
            .zip(&columns)
            .map(|(a, col)| {
                let upper = match caps {
                    Caps::Fixed(plan) if lanes_of(col.source) == 1 => plan.capacity[col.source][t],
                    _ => f64::INFINITY,
                };
                lp.add_var(
                    format!(
                        "move[{}][{}][{}][{}]",
                        instance.sources[col.source].id,
                        net.entries[col.entry],
                        net.exits[col.exit],
                        t + 1
                    ),
                    a.rate,
                    0.0,
                    upper,
                )
            })
            .collect();
        moves.push(row);
    }

    let (fixed_entry, fixed_exit) = match init {
        InitialState::Fixed(s) => {
            if !s.within(b) {
                return Err(Error::InvalidArgument("initial state lies outside the bounds".into()));
            }
            (Some(&s.entry), Some(&s.exit))
        }
        InitialState::Best => (None, None),
    };
    let mut entry = Vec::with_capacity(tau + 1);
    let mut splus = Vec::with_capacity(tau + 1);
    let mut sminus = Vec::with_capacity(tau + 1);
    for t in 0..=tau {
        let terminal = t == tau;
        entry.push(
            (0..ni)
                .map(|i| {
                    let cost = if terminal { c.terminal_slopes[i] } else { c.entry_holding[i] };
                    let (lo, hi) = match (t, fixed_entry) {
                        (0, Some(e)) => (e[i] as f64, e[i] as f64),
                        _ => (0.0, b.entry_max[i] as f64),
                    };
                    lp.add_var(format!("entry[{}][{}]", net.entries[i], t + 1), cost, lo, hi)
                })
                .collect::<Vec<_>>(),
        );
        splus.push(
            (0..nj)
                .map(|j| {
                    let cost = if terminal { c.terminal_slopes[ni + j] } else { c.exit_holding[j] };
                    let (lo, hi) = match (t, fixed_exit) {
                        (0, Some(x)) => (x[j].max(0) as f64, x[j].max(0) as f64),
                        _ => (0.0, b.exit_max[j] as f64),
                    };
                    lp.add_var(format!("splus[{}][{}]", net.exits[j], t + 1), cost, lo, hi)
                })
                .collect::<Vec<_>>(),
        );
        sminus.push(
            (0..nj)
                .map(|j| {
                    let cost = if terminal { c.terminal_slopes[ni + nj + j] } else { c.exit_backorder[j] };
                    let (lo, hi) = match (t, fixed_exit) {
                        (0, Some(x)) => ((-x[j]).max(0) as f64, (-x[j]).max(0) as f64),
                        _ => (0.0, b.exit_backorder_max[j] as f64),
                    };
                    lp.add_var(format!("sminus[{}][{}]", net.exits[j], t + 1), cost, lo, hi)
                })
                .collect::<Vec<_>>(),
        );
    }
    let p = c.spill_penalty;
    let overflow: Vec<Vec<usize>> = (0..tau)
        .map(|t| {
            (0..ni)
                .map(|i| lp.add_var(format!("overflow[{}][{}]", net.entries[i], t + 1), p, 0.0, f64::INFINITY))
                .collect()
        })
        .collect();
    let shortfall: Vec<Vec<usize>> = (0..tau)
        .map(|t| {
            (0..nj)
                .map(|j| lp.add_var(format!("shortfall[{}][{}]", net.exits[j], t + 1), p, 0.0, f64::INFINITY))
                .collect()
        })
        .collect();

    for t in 0..tau {
        let z = &scenario.realizations[t];
        let period = t + 1;
        for i in 0..ni {
            let out: Vec<(usize, f64)> = columns
                .iter()
                .enumerate()
                .filter(|(_, col)| col.entry == i)
                .map(|(n, _)| (moves[t][n], 1.0))
                .collect();
            let mut row = vec![(entry[t + 1][i], 1.0), (entry[t][i], -1.0), (overflow[t][i], 1.0)];
            row.extend(out.iter().copied());
            lp.add_row(format!("balance_entry[{}][{period}]", net.entries[i]), row, RowKind::Eq, z.inflow[i] as f64);
            let mut avail = out;
            avail.push((entry[t][i], -1.0));
            lp.add_row(format!("avail[{}][{period}]", net.entries[i]), avail, RowKind::Le, z.inflow[i] as f64);
        }
        for j in 0..nj {
            let inn: Vec<(usize, f64)> = columns
                .iter()
                .enumerate()
                .filter(|(_, col)| col.exit == j)
                .map(|(n, _)| (moves[t][n], 1.0))
                .collect();
            let mut row = vec![
                (splus[t + 1][j], 1.0),
                (sminus[t + 1][j], -1.0),
                (splus[t][j], -1.0),
                (sminus[t][j], 1.0),
                (shortfall[t][j], -1.0),
            ];
            row.extend(inn.iter().map(|(v, _)| (*v, -1.0)));
            lp.add_row(format!("balance_exit[{}][{period}]", net.exits[j]), row, RowKind::Eq, -(z.outflow[j] as f64));
            let mut space = inn;
            space.push((splus[t][j], 1.0));
            space.push((sminus[t][j], -1.0));
            lp.add_row(format!("space[{}][{period}]", net.exits[j]), space, RowKind::Le, b.exit_max[j] as f64);
        }
        let all: Vec<(usize, f64)> = moves[t].iter().map(|v| (*v, 1.0)).collect();
        lp.add_row(format!("volume[{period}]"), all, RowKind::Le, b.action_max as f64);
        for (k, src) in instance.sources.iter().enumerate() {
            let mut cols: Vec<(usize, f64)> = columns
                .iter()
                .enumerate()
                .filter(|(_, col)| col.source == k)
                .map(|(n, _)| (moves[t][n], 1.0))
                .collect();
            match (&caps, &cap_cols) {
                (Caps::Variable { .. }, Some(x)) => {
                    cols.push((x[k][t], -1.0));
                    lp.add_row(format!("capacity[{}][{period}]", src.id), cols, RowKind::Le, 0.0);
                }
                (Caps::Fixed(plan), _) if cols.len() > 1 => {
                    lp.add_row(format!("capacity[{}][{period}]", src.id), cols, RowKind::Le, plan.capacity[k][t]);
                }
                _ => {}
            }
        }
    }

    Ok(MultistageLp {
        lp,
        horizon: tau,
        columns,
        moves,
        entry,
        splus,
        sminus,
        overflow,
        shortfall,
        caps: cap_cols,
    })
}

/// Program for a fixed capacity plan.
pub fn build_mslp(
    instance: &Instance,
    scenario: &Scenario,
    plan: &CapacityPlan,
    init: &InitialState,
) -> Result<MultistageLp> {
    build(instance, scenario, Caps::Fixed(plan), init)
}

/// Program with the capacities as priced columns in `[0, x_max]`; its optimum
/// is the best plan for the scenario, reservation included.
pub fn build_capacity_lp(
    instance: &Instance,
    scenario: &Scenario,
    x_max: f64,
    init: &InitialState,
) -> Result<MultistageLp> {
    build(instance, scenario, Caps::Variable { x_max }, init)
}

pub fn solve_mslp(program: &MultistageLp) -> Result<MslpSolution> {
    let sol = program.lp.solve()?;
    Ok(decode(program, &sol))
}

fn decode(p: &MultistageLp, sol: &LpSolution) -> MslpSolution {
    let x = &sol.x;
    let pick = |cols: &Vec<usize>| cols.iter().map(|c| x[*c]).collect::<Vec<f64>>();
    let moves: Vec<Vec<f64>> = p.moves.iter().map(pick).collect();
    let states = (1..=p.horizon)
        .map(|t| MslpState {
            entry: pick(&p.entry[t]),
            exit: p.splus[t]
                .iter()
                .zip(&p.sminus[t])
                .map(|(a, b)| x[*a] - x[*b])
                .collect(),
        })
        .collect();
    let integral = moves.iter().flatten().all(|m| (m - m.round()).abs() <= INTEGRAL_TOL);
    MslpSolution {
        cost: sol.objective,
        integral,
        states,
        overflow: p.overflow.iter().map(pick).collect(),
        shortfall: p.shortfall.iter().map(pick).collect(),
        plan: p.caps.as_ref().map(|caps| CapacityPlan::new(caps.iter().map(pick).collect())),
        moves,
    }
}

impl MultistageLp {
    /// Initial stocks chosen by the solution (period 1).
    pub fn initial_state(&self, sol: &LpSolution) -> MslpState {
        MslpState {
            entry: self.entry[0].iter().map(|c| sol.x[*c]).collect(),
            exit: self.splus[0]
                .iter()
                .zip(&self.sminus[0])
                .map(|(a, b)| sol.x[*a] - sol.x[*b])
                .collect(),
        }
    }

    pub fn to_lp_format(&self) -> String {
        self.lp.to_lp_format()
    }
}

/// Solves and also returns the first-period stock.
pub fn solve_mslp_with_start(program: &MultistageLp) -> Result<(MslpSolution, MslpState)> {
    let sol = program.lp.solve()?;
    Ok((decode(program, &sol), program.initial_state(&sol)))
}

/// Weighted mean of `-cost` over the scenarios (wait-and-see value).
pub fn expected_value_lp(
    instance: &Instance,
    scenarios: &[Scenario],
    weights: &[f64],
    plan: &CapacityPlan,
    init: &InitialState,
) -> Result<f64> {
    if scenarios.len() != weights.len() || scenarios.is_empty() {
        return Err(Error::Dimension("need one weight per scenario and at least one scenario".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("scenario weights sum to {total}, expected 1")));
    }
    let costs: Vec<f64> = scenarios
        .par_iter()
        .map(|s| Ok(solve_mslp(&build_mslp(instance, s, plan, init)?)?.cost))
        .collect::<Result<Vec<f64>>>()?;
    Ok(costs.iter().zip(weights).map(|(c, w)| -c * w).sum())
}
