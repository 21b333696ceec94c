//! Per-period allocation of a move volume across sources and lanes, holding
//! costs and the stock transition.

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpError, RowKind};
use crate::model::{Bounds, CostSpec, ExogenousRealization, Instance, SystemState};

const INTEGRAL_TOL: f64 = 1e-7;

/// One (source, lane) column of the allocation problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub source: usize,
    pub entry: usize,
    pub exit: usize,
    /// Index of the lane in `Network::lanes`.
    pub lane: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    pub total_volume: f64,
    pub arcs: Vec<Arc>,
    pub source_caps: Vec<f64>,
    pub entry_available: Vec<f64>,
    pub exit_space: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// Aligned with `AllocationProblem::arcs`.
    pub moves: Vec<f64>,
    pub cost: f64,
}

impl Allocation {
    /// Moves summed per lane.
    pub fn lane_totals(&self, arcs: &[Arc], n_lanes: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_lanes];
        for (a, m) in arcs.iter().zip(&self.moves) {
            out[a.lane] += m;
        }
        out
    }
}

/// `sum CW_i S_i + sum (CD_j S_j^+ + CB_j S_j^-)` with `S^- = -min(S, 0)`.
pub fn holding_cost(state: &SystemState, costs: &CostSpec) -> f64 {
    let entry: f64 = state
        .entry
        .iter()
        .zip(&costs.entry_holding)
        .map(|(s, c)| c * *s as f64)
        .sum();
    let exit: f64 = state
        .exit
        .iter()
        .zip(costs.exit_holding.iter().zip(&costs.exit_backorder))
        .map(|(s, (cd, cb))| cd * (*s).max(0) as f64 + cb * (-(*s).min(0)) as f64)
        .sum();
    entry + exit
}

fn single_lane(problem: &AllocationProblem) -> bool {
    problem.entry_available.len() == 1 && problem.exit_space.len() == 1
}

/// Minimal-cost split of `total_volume` subject to source capacities, entry
/// availability and exit space.
pub fn solve_allocation(problem: &AllocationProblem) -> Result<Allocation, LpError> {
    let p = problem;
    if p.total_volume < 0.0 {
        return Err(LpError::Infeasible);
    }
    if single_lane(p) {
        return greedy(p);
    }
    solve_allocation_lp(p)
}

/// Cheapest-first fill, exact when every arc shares one entry and one exit.
fn greedy(p: &AllocationProblem) -> Result<Allocation, LpError> {
    let a = p.total_volume;
    if a > p.entry_available[0] + 1e-9 || a > p.exit_space[0] + 1e-9 {
        return Err(LpError::Infeasible);
    }
    let mut order: Vec<usize> = (0..p.arcs.len()).collect();
    order.sort_by(|&x, &y| p.arcs[x].rate.total_cmp(&p.arcs[y].rate).then(x.cmp(&y)));
    let mut left = p.source_caps.clone();
    let mut moves = vec![0.0; p.arcs.len()];
    let mut remaining = a;
    let mut cost = 0.0;
    for k in order {
        if remaining <= 0.0 {
            break;
        }
        let arc = p.arcs[k];
        let m = remaining.min(left[arc.source].max(0.0));
        if m > 0.0 {
            moves[k] = m;
            left[arc.source] -= m;
            remaining -= m;
            cost += arc.rate * m;
        }
    }
    if remaining > 1e-9 {
        return Err(LpError::Infeasible);
    }
    Ok(Allocation { moves, cost })
}

/// The allocation problem as an explicit linear program.
pub fn allocation_lp(p: &AllocationProblem) -> LinearProgram {
    let mut lp = LinearProgram::new();
    for (n, arc) in p.arcs.iter().enumerate() {
        let cap = p.source_caps[arc.source].max(0.0);
        lp.add_var(format!("move[{n}]"), arc.rate, 0.0, cap);
    }
    let all: Vec<(usize, f64)> = (0..p.arcs.len()).map(|n| (n, 1.0)).collect();
    lp.add_row("volume", all, RowKind::Eq, p.total_volume);
    for (k, cap) in p.source_caps.iter().enumerate() {
        let cols: Vec<(usize, f64)> = p
            .arcs
            .iter()
            .enumerate()
            .filter(|(_, a)| a.source == k)
            .map(|(n, _)| (n, 1.0))
            .collect();
        if cols.len() > 1 {
            lp.add_row(format!("cap[{k}]"), cols, RowKind::Le, cap.max(0.0));
        }
    }
    for (i, avail) in p.entry_available.iter().enumerate() {
        let cols: Vec<(usize, f64)> = p
            .arcs
            .iter()
            .enumerate()
            .filter(|(_, a)| a.entry == i)
            .map(|(n, _)| (n, 1.0))
            .collect();
        lp.add_row(format!("avail[{i}]"), cols, RowKind::Le, *avail);
    }
    for (j, space) in p.exit_space.iter().enumerate() {
        let cols: Vec<(usize, f64)> = p
            .arcs
            .iter()
            .enumerate()
            .filter(|(_, a)| a.exit == j)
            .map(|(n, _)| (n, 1.0))
            .collect();
        lp.add_row(format!("space[{j}]"), cols, RowKind::Le, *space);
    }
    lp
}

/// Solves the allocation through the simplex regardless of shape.
pub fn solve_allocation_lp(p: &AllocationProblem) -> Result<Allocation, LpError> {
    if p.total_volume == 0.0 {
        return Ok(Allocation {
            moves: vec![0.0; p.arcs.len()],
            cost: 0.0,
        });
    }
    let sol = allocation_lp(p).solve()?;
    Ok(Allocation {
        cost: sol.objective,
        moves: sol.x,
    })
}

/// Source-lane arcs of an instance with their period-`t` rates. Spot rates
/// come from `realization`.
pub fn arcs(instance: &Instance, period: usize, realization: &ExogenousRealization) -> Result<Vec<Arc>> {
    let net = &instance.network;
    let mut out = Vec::new();
    let mut spot_seen = 0usize;
    for (k, src) in instance.sources.iter().enumerate() {
        let spot_rates = if src.is_spot() {
            let r = realization.spot_rates.get(spot_seen).ok_or_else(|| {
                Error::Dimension(format!("realization lacks spot rates for source {}", src.id))
            })?;
            spot_seen += 1;
            if r.len() != src.lanes.len() {
                return Err(Error::Dimension(format!(
                    "spot source {} needs {} lane rates, got {}",
                    src.id,
                    src.lanes.len(),
                    r.len()
                )));
            }
            Some(r)
        } else {
            None
        };
        for (n, lane) in src.lanes.iter().enumerate() {
            let rate = match (spot_rates, &src.execution_cost) {
                (Some(r), _) => r[n],
                (None, Some(rows)) => rows[n][period],
                (None, None) => {
                    return Err(Error::InvalidInstance(format!(
                        "strategic source {} has no execution cost",
                        src.id
                    )))
                }
            };
            out.push(Arc {
                source: k,
                entry: net.entry_index(lane.0).expect("validated lane"),
                exit: net.exit_index(lane.1).expect("validated lane"),
                lane: net.lane_index(*lane).expect("validated lane"),
                rate,
            });
        }
    }
    Ok(out)
}

/// Allocation problem faced at `state` when moving `action` TEU in period
/// `period` (0-based).
pub fn build_problem(
    instance: &Instance,
    period: usize,
    state: &SystemState,
    action: i64,
    realization: &ExogenousRealization,
    caps: &[f64],
) -> Result<AllocationProblem> {
    if caps.len() != instance.n_sources() {
        return Err(Error::Dimension(format!(
            "expected {} source capacities, got {}",
            instance.n_sources(),
            caps.len()
        )));
    }
    let b = &instance.bounds;
    Ok(AllocationProblem {
        total_volume: action as f64,
        arcs: arcs(instance, period, realization)?,
        source_caps: caps.to_vec(),
        entry_available: state
            .entry
            .iter()
            .zip(&realization.inflow)
            .map(|(s, q)| (s + q) as f64)
            .collect(),
        exit_space: state
            .exit
            .iter()
            .zip(&b.exit_max)
            .map(|(s, m)| (m - s) as f64)
            .collect(),
    })
}

/// Outcome of acting in one period: holding plus transport cost and the
/// allocation that achieves it.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub allocation: Allocation,
    pub arcs: Vec<Arc>,
    pub holding: f64,
    pub cost: f64,
}

/// `h(S) + min transport cost`; `Err(Lp(Infeasible))` when the action cannot
/// be allocated.
pub fn immediate_cost(
    instance: &Instance,
    period: usize,
    state: &SystemState,
    action: i64,
    realization: &ExogenousRealization,
    caps: &[f64],
) -> Result<f64> {
    Ok(immediate_step(instance, period, state, action, realization, caps)?.cost)
}

pub fn immediate_step(
    instance: &Instance,
    period: usize,
    state: &SystemState,
    action: i64,
    realization: &ExogenousRealization,
    caps: &[f64],
) -> Result<Step> {
    let problem = build_problem(instance, period, state, action, realization, caps)?;
    let holding = holding_cost(state, &instance.costs);
    let allocation = solve_allocation(&problem)?;
    Ok(Step {
        cost: holding + allocation.cost,
        holding,
        allocation,
        arcs: problem.arcs,
    })
}

/// Rounds nonnegative reals to integers with the same (integer) sum by the
/// largest-remainder rule; ties go to the lower index.
pub fn round_preserving_sum(values: &[f64]) -> Vec<i64> {
    let total = values.iter().sum::<f64>().round() as i64;
    let mut out: Vec<i64> = values.iter().map(|v| (v + INTEGRAL_TOL).floor() as i64).collect();
    let mut short = total - out.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = values[a] - out[a] as f64;
        let rb = values[b] - out[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(values.len().max(1) * 2) {
        if short <= 0 {
            break;
        }
        out[k] += 1;
        short -= 1;
    }
    out
}

/// Integer moves per lane from an allocation. Integral allocations pass
/// through; fractional ones are rounded by largest remainder, keeping the
/// overall volume.
pub fn integer_lane_totals(allocation: &Allocation, arcs: &[Arc], n_lanes: usize) -> Vec<i64> {
    let totals = allocation.lane_totals(arcs, n_lanes);
    if totals.iter().all(|v| (v - v.round()).abs() <= INTEGRAL_TOL) {
        return totals.iter().map(|v| v.round() as i64).collect();
    }
    round_preserving_sum(&totals)
}

/// Next state with clamping, plus the TEU lost to clamping (entry overflow and
/// backorders beyond the limit).
pub fn transition_with_spill(
    instance: &Instance,
    state: &SystemState,
    lane_moves: &[i64],
    realization: &ExogenousRealization,
) -> (SystemState, i64) {
    let net = &instance.network;
    let b = &instance.bounds;
    let mut shipped = vec![0i64; net.entries.len()];
    let mut received = vec![0i64; net.exits.len()];
    for (lane, m) in net.lanes.iter().zip(lane_moves) {
        shipped[net.entry_index(lane.0).expect("validated lane")] += m;
        received[net.exit_index(lane.1).expect("validated lane")] += m;
    }
    let mut spill = 0;
    let entry = (0..shipped.len())
        .map(|i| {
            let raw = state.entry[i] - shipped[i] + realization.inflow[i];
            spill += (raw - b.entry_max[i]).max(0) + (-raw).max(0);
            raw.clamp(0, b.entry_max[i])
        })
        .collect();
    let exit = (0..received.len())
        .map(|j| {
            let raw = state.exit[j] + received[j] - realization.outflow[j];
            let lo = -b.exit_backorder_max[j];
            spill += (lo - raw).max(0) + (raw - b.exit_max[j]).max(0);
            raw.clamp(lo, b.exit_max[j])
        })
        .collect();
    (SystemState { entry, exit }, spill)
}

/// Clamped stock transition.
pub fn transition(
    instance: &Instance,
    state: &SystemState,
    lane_moves: &[i64],
    realization: &ExogenousRealization,
) -> SystemState {
    transition_with_spill(instance, state, lane_moves, realization).0
}

/// Same as [`transition`] on bare bounds for single-lane use.
pub fn clamp_state(state: &SystemState, bounds: &Bounds) -> SystemState {
    SystemState {
        entry: state
            .entry
            .iter()
            .zip(&bounds.entry_max)
            .map(|(s, m)| (*s).clamp(0, *m))
            .collect(),
        exit: state
            .exit
            .iter()
            .zip(bounds.exit_max.iter().zip(&bounds.exit_backorder_max))
            .map(|(s, (hi, lo))| (*s).clamp(-*lo, *hi))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    fn two_source_problem(a: f64, caps: [f64; 2]) -> AllocationProblem {
        AllocationProblem {
            total_volume: a,
            arcs: vec![
                Arc { source: 0, entry: 0, exit: 0, lane: 0, rate: 14.7 },
                Arc { source: 1, entry: 0, exit: 0, lane: 0, rate: 7.0 },
            ],
            source_caps: caps.to_vec(),
            entry_available: vec![16.0],
            exit_space: vec![10.0],
        }
    }

    fn realization(q: i64, d: i64, w: f64) -> ExogenousRealization {
        ExogenousRealization {
            inflow: vec![q],
            outflow: vec![d],
            spot_rates: vec![vec![w]],
            probability: 1.0,
        }
    }

    #[test]
    fn holding_cost_examples() {
        let c = reference::instance(reference::POLICY_STRATEGIC_RATE).costs;
        assert_eq!(holding_cost(&SystemState::new(vec![0], vec![8]), &c), 96.0);
        assert_eq!(holding_cost(&SystemState::new(vec![0], vec![0]), &c), 0.0);
        assert_eq!(holding_cost(&SystemState::new(vec![2], vec![-3]), &c), 102.0);
    }

    #[test]
    fn allocation_examples() {
        let a = solve_allocation(&two_source_problem(6.0, [4.0, 4.0])).unwrap();
        assert_eq!(a.moves, vec![2.0, 4.0]);
        assert!((a.cost - 57.4).abs() < 1e-9);
        let lp = solve_allocation_lp(&two_source_problem(6.0, [4.0, 4.0])).unwrap();
        assert!((lp.cost - 57.4).abs() < 1e-9);

        let z = solve_allocation(&two_source_problem(0.0, [4.0, 4.0])).unwrap();
        assert_eq!(z.moves, vec![0.0, 0.0]);
        assert_eq!(z.cost, 0.0);

        assert_eq!(
            solve_allocation(&two_source_problem(10.0, [4.0, 4.0])),
            Err(LpError::Infeasible)
        );
        assert_eq!(
            solve_allocation_lp(&two_source_problem(10.0, [4.0, 4.0])),
            Err(LpError::Infeasible)
        );
    }

    #[test]
    fn immediate_cost_examples() {
        let inst = reference::instance(reference::POLICY_STRATEGIC_RATE);
        let s = SystemState::new(vec![0], vec![8]);
        let z = realization(8, 8, 7.0);
        assert_eq!(immediate_cost(&inst, 0, &s, 0, &z, &[4.0, 4.0]).unwrap(), 96.0);
        // Exit space at (0, 8) is only 2, so six moves need a roomier state.
        let roomy = SystemState::new(vec![0], vec![2]);
        let c = immediate_cost(&inst, 0, &roomy, 6, &z, &[4.0, 4.0]).unwrap();
        assert!((c - (24.0 + 57.4)).abs() < 1e-9);
        let mut wide = inst.clone();
        wide.bounds.exit_max = vec![20];
        let c = immediate_cost(&wide, 0, &s, 6, &z, &[4.0, 4.0]).unwrap();
        assert!((c - 153.4).abs() < 1e-9);
        let dry = realization(0, 8, 7.0);
        assert!(matches!(
            immediate_cost(&wide, 0, &s, 6, &dry, &[4.0, 4.0]),
            Err(Error::Lp(LpError::Infeasible))
        ));
    }

    #[test]
    fn transition_examples() {
        let inst = reference::instance(reference::POLICY_STRATEGIC_RATE);
        let s = SystemState::new(vec![0], vec![8]);
        assert_eq!(
            transition(&inst, &s, &[6], &realization(8, 8, 7.0)),
            SystemState::new(vec![2], vec![6])
        );
        let zero = SystemState::zeros(1, 1);
        assert_eq!(transition(&inst, &zero, &[0], &realization(0, 0, 7.0)), zero);
        let full = SystemState::new(vec![10], vec![10]);
        let (next, spill) = transition_with_spill(&inst, &full, &[0], &realization(8, 0, 7.0));
        assert_eq!(next, full);
        assert_eq!(spill, 8);
        let low = SystemState::new(vec![0], vec![-6]);
        let (next, spill) = transition_with_spill(&inst, &low, &[0], &realization(0, 8, 7.0));
        assert_eq!(next, SystemState::new(vec![0], vec![-10]));
        assert_eq!(spill, 4);
    }

    #[test]
    fn largest_remainder_rounding() {
        assert_eq!(round_preserving_sum(&[1.5, 1.5]), vec![2, 1]);
        assert_eq!(round_preserving_sum(&[0.2, 0.3, 2.5]), vec![0, 0, 3]);
        assert_eq!(round_preserving_sum(&[3.0, 0.0]), vec![3, 0]);
    }
}
