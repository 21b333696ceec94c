//! Independent oracles and small-instance builders shared by the integration
//! tests.
#![allow(dead_code)]

use proptest::prelude::*;

use drayage::alloc::{self, AllocationProblem, Arc};
use drayage::dp;
use drayage::lp::{LinearProgram, RowKind};
use drayage::model::{generate_instance, CapacityPlan, DiscreteDist, GenerateShape, Instance, Scenario, SystemState};
use drayage::scenario;

/// Single-lane instance with bounds and move limit at most 3, horizon at most
/// 2 and at most eight exogenous tuples.
pub fn micro_instance(seed: u64, bound: i64, horizon: usize, bids: usize, spot: usize) -> Instance {
    let shape = GenerateShape {
        n_entries: 1,
        n_exits: 1,
        n_bids: bids,
        n_carriers: bids,
        n_spot: spot,
        horizon,
        capacity_levels: bound as u32 + 1,
        storage_max: bound,
        backorder_max: bound,
        action_max: bound,
        spot_support: 2,
        inflow: DiscreteDist::new(vec![0, bound.min(2)], vec![0.5, 0.5]),
        outflow: DiscreteDist::new(vec![0, bound], vec![0.4, 0.6]),
        ..GenerateShape::default()
    };
    let mut inst = generate_instance(seed, &shape).unwrap();
    inst.initial_state = SystemState::new(vec![0], vec![0]);
    inst
}

pub fn integer_plan(inst: &Instance, levels: &[u8]) -> CapacityPlan {
    let max = inst.bounds.action_max as u8;
    let n = inst.n_sources() * inst.horizon;
    let flat: Vec<f64> = (0..n).map(|i| f64::from(levels[i % levels.len()] % (max + 1))).collect();
    CapacityPlan::from_flat(&flat, inst.n_sources(), inst.horizon)
}

pub fn first_scenario(inst: &Instance, seed: u64) -> Scenario {
    scenario::sample_scenarios(inst, 1, seed).unwrap().remove(0)
}

/// Optimal value of a deterministic problem by recursion over every action
/// sequence, evaluated back to front like a Bellman sweep so that the
/// floating-point sums associate identically.
pub fn enumerate_policy_value(
    inst: &Instance,
    sc: &Scenario,
    plan: &CapacityPlan,
    t: usize,
    state: &SystemState,
) -> Option<f64> {
    if t == inst.horizon {
        return Some(dp::terminal_value(state, &inst.costs));
    }
    let z = &sc.realizations[t];
    let penalty = inst.costs.spill_penalty;
    let mut best: Option<f64> = None;
    for a in 0..=inst.bounds.action_max {
        let Ok(step) = alloc::immediate_step(inst, t, state, a, z, &plan.period(t)) else {
            continue;
        };
        let lanes = alloc::integer_lane_totals(&step.allocation, &step.arcs, inst.network.lanes.len());
        let (next, spill) = alloc::transition_with_spill(inst, state, &lanes, z);
        let Some(v_next) = enumerate_policy_value(inst, sc, plan, t + 1, &next) else {
            continue;
        };
        let q = 1.0 * (1.0 * v_next - (step.cost + penalty * spill as f64));
        if best.is_none_or(|b| q > b) {
            best = Some(q);
        }
    }
    best
}

/// Minimum over every integer allocation, or `None` when none exists.
pub fn brute_force_allocation(p: &AllocationProblem) -> Option<f64> {
    let total = p.total_volume.round() as i64;
    let caps: Vec<i64> = p.arcs.iter().map(|a| p.source_caps[a.source].floor() as i64).collect();
    let mut best: Option<f64> = None;
    let mut moves = vec![0i64; p.arcs.len()];
    fn rec(p: &AllocationProblem, caps: &[i64], k: usize, left: i64, moves: &mut Vec<i64>, best: &mut Option<f64>) {
        if k == moves.len() {
            if left != 0 || !feasible(p, moves) {
                return;
            }
            let cost: f64 = p.arcs.iter().zip(moves.iter()).map(|(a, m)| a.rate * *m as f64).sum();
            if best.is_none_or(|b| cost < b) {
                *best = Some(cost);
            }
            return;
        }
        for m in 0..=caps[k].min(left) {
            moves[k] = m;
            rec(p, caps, k + 1, left - m, moves, best);
        }
        moves[k] = 0;
    }
    fn feasible(p: &AllocationProblem, moves: &[i64]) -> bool {
        let mut by_source = vec![0i64; p.source_caps.len()];
        let mut by_entry = vec![0i64; p.entry_available.len()];
        let mut by_exit = vec![0i64; p.exit_space.len()];
        for (a, m) in p.arcs.iter().zip(moves) {
            by_source[a.source] += m;
            by_entry[a.entry] += m;
            by_exit[a.exit] += m;
        }
        let ok = |v: &[i64], cap: &[f64]| v.iter().zip(cap).all(|(x, c)| *x as f64 <= *c + 1e-9);
        ok(&by_source, &p.source_caps) && ok(&by_entry, &p.entry_available) && ok(&by_exit, &p.exit_space)
    }
    rec(p, &caps, 0, total, &mut moves, &mut best);
    best
}

/// Random allocation problem on `entries x exits` lanes with integer data.
pub fn allocation_problem(
    entries: usize,
    exits: usize,
    sources: &[(Vec<usize>, u8)],
    rates: &[u8],
    avail: &[u8],
    space: &[u8],
    volume: u8,
) -> AllocationProblem {
    let mut arcs = Vec::new();
    let mut r = 0;
    for (k, (lanes, _)) in sources.iter().enumerate() {
        for l in lanes {
            let lane = l % (entries * exits);
            if arcs.iter().any(|a: &Arc| a.source == k && a.lane == lane) {
                continue;
            }
            arcs.push(Arc {
                source: k,
                entry: lane / exits,
                exit: lane % exits,
                lane,
                rate: 1.0 + f64::from(rates[r % rates.len()]) * 0.5,
            });
            r += 1;
        }
    }
    AllocationProblem {
        total_volume: f64::from(volume),
        arcs,
        source_caps: sources.iter().map(|(_, c)| f64::from(*c)).collect(),
        entry_available: (0..entries).map(|i| f64::from(avail[i % avail.len()])).collect(),
        exit_space: (0..exits).map(|j| f64::from(space[j % space.len()])).collect(),
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|i, j| a[*i][c].abs().total_cmp(&a[*j][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        let pivot = a[c].clone();
        for r in 0..n {
            if r != c {
                let f = a[r][c] / pivot[c];
                for (x, p) in a[r][c..].iter_mut().zip(&pivot[c..]) {
                    *x -= f * p;
                }
                b[r] -= f * b[c];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Optimum of a bounded LP by enumerating every vertex: each choice of `n`
/// tight constraints among rows and finite bounds.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.n_vars();
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in &lp.rows {
        let mut a = vec![0.0; n];
        for (j, v) in &row.coefs {
            a[*j] += v;
        }
        planes.push((a, row.rhs));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        if lp.lower[j].is_finite() {
            planes.push((e.clone(), lp.lower[j]));
        }
        if lp.upper[j].is_finite() {
            planes.push((e, lp.upper[j]));
        }
    }
    let mut best: Option<f64> = None;
    let m = planes.len();
    let mut pick: Vec<usize> = (0..n).collect();
    if m < n {
        return None;
    }
    loop {
        let a: Vec<Vec<f64>> = pick.iter().map(|i| planes[*i].0.clone()).collect();
        let b: Vec<f64> = pick.iter().map(|i| planes[*i].1).collect();
        if let Some(x) = solve_square(a, b) {
            if lp.max_violation(&x) <= 1e-7 {
                let v = lp.objective_at(&x);
                if best.is_none_or(|b| v < b) {
                    best = Some(v);
                }
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < m - n + i {
                pick[i] += 1;
                for k in i + 1..n {
                    pick[k] = pick[k - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn row_kind(k: u8) -> RowKind {
    match k % 3 {
        0 => RowKind::Le,
        1 => RowKind::Ge,
        _ => RowKind::Eq,
    }
}

/// Seed, bound, horizon, bids and spot sources of a micro instance.
pub fn micro_strategy() -> impl Strategy<Value = (u64, i64, usize, usize, usize)> {
    (any::<u64>(), 1i64..=3, 1usize..=2, 1usize..=2, 0usize..=1)
}

pub fn alloc_strategy() -> impl Strategy<Value = AllocationProblem> {
    (
        1usize..=2,
        1usize..=2,
        prop::collection::vec((prop::collection::vec(0usize..4, 1..=2), 0u8..=4), 1..=3),
        prop::collection::vec(0u8..20, 6),
        prop::collection::vec(0u8..=5, 2),
        prop::collection::vec(0u8..=5, 2),
        0u8..=5,
    )
        .prop_map(|(ni, nj, sources, rates, avail, space, vol)| {
            allocation_problem(ni, nj, &sources, &rates, &avail, &space, vol)
        })
}

pub fn lp_strategy() -> impl Strategy<Value = LinearProgram> {
    (
        1usize..=3,
        prop::collection::vec(-5i8..=5, 3),
        prop::collection::vec((0i8..=3, 1i8..=6), 3),
        prop::collection::vec((prop::collection::vec(-3i8..=3, 3), 0u8..3, -4i8..=12), 0..=3),
    )
        .prop_map(|(n, c, bounds, rows)| {
            let mut lp = LinearProgram::new();
            for j in 0..n {
                let (lo, w) = bounds[j];
                lp.add_var(format!("x{j}"), f64::from(c[j]), f64::from(lo) - 1.0, f64::from(lo + w));
            }
            for (r, (a, kind, rhs)) in rows.into_iter().enumerate() {
                let coefs: Vec<(usize, f64)> = (0..n).map(|j| (j, f64::from(a[j]))).collect();
                lp.add_row(format!("r{r}"), coefs, row_kind(kind), f64::from(rhs));
            }
            lp
        })
}

/// Cost of applying `actions` from the initial state, or `None` when one is
/// infeasible.
pub fn replay_cost(inst: &Instance, sc: &Scenario, plan: &CapacityPlan, actions: &[i64]) -> Option<f64> {
    let mut s = inst.initial_state.clone();
    let mut total = 0.0;
    for (t, a) in actions.iter().enumerate() {
        let z = &sc.realizations[t];
        let step = alloc::immediate_step(inst, t, &s, *a, z, &plan.period(t)).ok()?;
        let lanes = alloc::integer_lane_totals(&step.allocation, &step.arcs, inst.network.lanes.len());
        let (next, spill) = alloc::transition_with_spill(inst, &s, &lanes, z);
        total += step.cost + inst.costs.spill_penalty * spill as f64;
        s = next;
    }
    Some(total - dp::terminal_value(&s, &inst.costs))
}
