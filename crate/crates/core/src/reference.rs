//! The single-lane, four-period reference instance: one entry, one exit, a
//! strategic carrier and a spot market.
//!
//! Two strategic rates are in use. The policy study runs at $14.70/TEU and the
//! capacity study at $2.94/TEU; both ship as separate instance files under
//! `data/`.

use crate::model::{
    Bounds, CapacityPlan, CostSpec, DiscreteDist, ExogenousRealization, Instance, Lane, Network,
    Scenario, Source, SourceKind, SpotRateSpec, SystemState, UncertaintySpec,
};

pub const POLICY_STRATEGIC_RATE: f64 = 14.7;
pub const CAPACITY_STRATEGIC_RATE: f64 = 2.94;
pub const RESERVATION_RATES: [f64; 4] = [8.52, 4.46, 4.25, 9.70];
pub const SPILL_PENALTY: f64 = 55.0;

/// Reference instance with the given fixed strategic rate.
pub fn instance(strategic_rate: f64) -> Instance {
    let lane = Lane(1, 2);
    let tau = 4;
    Instance {
        name: Some(format!("single-lane-w{strategic_rate}")),
        network: Network {
            entries: vec![1],
            exits: vec![2],
            lanes: vec![lane],
        },
        sources: vec![
            Source {
                id: 1,
                kind: SourceKind::Strategic,
                lanes: vec![lane],
                execution_cost: Some(vec![vec![strategic_rate; tau]]),
                reservation_rate: RESERVATION_RATES.to_vec(),
            },
            Source {
                id: 2,
                kind: SourceKind::Spot,
                lanes: vec![lane],
                execution_cost: None,
                reservation_rate: vec![0.0; tau],
            },
        ],
        bounds: Bounds {
            entry_max: vec![10],
            exit_max: vec![10],
            exit_backorder_max: vec![10],
            action_max: 10,
        },
        costs: CostSpec {
            entry_holding: vec![15.0],
            exit_holding: vec![12.0],
            exit_backorder: vec![24.0],
            terminal_slopes: vec![15.0, 12.0, 24.0],
            spill_penalty: SPILL_PENALTY,
        },
        uncertainty: UncertaintySpec {
            inflow: vec![DiscreteDist::new(vec![0, 4, 8], vec![0.4, 0.3, 0.3])],
            outflow: vec![DiscreteDist::new(vec![0, 4, 8], vec![0.25, 0.25, 0.5])],
            spot_rates: vec![SpotRateSpec {
                source: 2,
                dist: DiscreteDist::new(vec![7.0, 22.0], vec![0.4, 0.6]),
                lane_overrides: Vec::new(),
            }],
        },
        horizon: tau,
        initial_state: SystemState::new(vec![0], vec![8]),
        reference_plan: Some(baseline_plan()),
    }
}

/// The scenario used for the single-scenario studies:
/// q = (8, 8, 0, 0), d = (8, 8, 8, 0), spot w = (7, 22, 7, 22).
pub fn scenario() -> Scenario {
    let q = [8, 8, 0, 0];
    let d = [8, 8, 8, 0];
    let w = [7.0, 22.0, 7.0, 22.0];
    let realizations = (0..4)
        .map(|t| ExogenousRealization {
            inflow: vec![q[t]],
            outflow: vec![d[t]],
            spot_rates: vec![vec![w[t]]],
            probability: 1.0,
        })
        .collect();
    Scenario {
        realizations,
        probability: 1.0,
    }
}

/// Baseline capacities: strategic (4, 3, 2, 4), spot (4, 4, 4, 4).
pub fn baseline_plan() -> CapacityPlan {
    CapacityPlan::new(vec![vec![4.0, 3.0, 2.0, 4.0], vec![4.0; 4]])
}

/// Capacities optimal for [`scenario`]: strategic (0, 8, 0, 0), spot (4, 4, 8, 4).
pub fn improved_plan() -> CapacityPlan {
    CapacityPlan::new(vec![vec![0.0, 8.0, 0.0, 0.0], vec![4.0, 4.0, 8.0, 4.0]])
}

/// One-entry one-exit instance with a single strategic source, fixed inflow
/// and outflow per period and the given horizon. Useful as a deterministic
/// toy.
pub fn deterministic_instance(horizon: usize, inflow: &[i64], outflow: &[i64]) -> Instance {
    let lane = Lane(1, 2);
    let mut inst = instance(POLICY_STRATEGIC_RATE);
    inst.name = Some("deterministic".into());
    inst.horizon = horizon;
    inst.sources = vec![Source {
        id: 1,
        kind: SourceKind::Strategic,
        lanes: vec![lane],
        execution_cost: Some(vec![vec![POLICY_STRATEGIC_RATE; horizon]]),
        reservation_rate: vec![1.0; horizon],
    }];
    let single = |v: &[i64]| {
        assert!(v.len() == 1, "deterministic toy has one value per location");
        DiscreteDist::degenerate(v[0])
    };
    inst.uncertainty = UncertaintySpec {
        inflow: vec![single(inflow)],
        outflow: vec![single(outflow)],
        spot_rates: Vec::new(),
    };
    inst.initial_state = SystemState::zeros(1, 1);
    inst
}
