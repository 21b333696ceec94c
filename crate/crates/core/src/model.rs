//! Domain types for the drayage planning problem.
//!
//! An [`Instance`] bundles the transport network (entry and exit locations and
//! the lanes between them), the carrier sources that can execute moves on those
//! lanes, storage bounds, holding costs and the discrete marginal laws of the
//! exogenous inflows, outflows and spot rates. Instances are read from and
//! written to a single JSON document (see `docs/instance-schema.md`).
//!
//! Location ids are 1-based. Entries occupy `1..=|I|` and exits the following
//! `|J|` ids, so the single-lane reference network has entry `1`, exit `2` and
//! lane `(1, 2)`.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the probability mass of a discrete law.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// An origin-destination pair `(entry id, exit id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Lane(pub u32, pub u32);

impl Lane {
    pub fn entry(&self) -> u32 {
        self.0
    }

    pub fn exit(&self) -> u32 {
        self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub entries: Vec<u32>,
    pub exits: Vec<u32>,
    pub lanes: Vec<Lane>,
}

impl Network {
    pub fn entry_index(&self, id: u32) -> Option<usize> {
        self.entries.iter().position(|&e| e == id)
    }

    pub fn exit_index(&self, id: u32) -> Option<usize> {
        self.exits.iter().position(|&e| e == id)
    }

    pub fn lane_index(&self, lane: Lane) -> Option<usize> {
        self.lanes.iter().position(|&l| l == lane)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Strategic,
    Spot,
}

/// A (bid, carrier) pair able to execute moves on a subset of lanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub id: u32,
    pub kind: SourceKind,
    pub lanes: Vec<Lane>,
    /// Fixed $/TEU rate per lane (outer, aligned with `lanes`) and period
    /// (inner). Only strategic sources carry fixed rates; spot rates are drawn
    /// from [`UncertaintySpec::spot_rates`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution_cost: Option<Vec<Vec<f64>>>,
    /// Reservation premium in $/TEU per period.
    pub reservation_rate: Vec<f64>,
}

impl Source {
    pub fn is_spot(&self) -> bool {
        self.kind == SourceKind::Spot
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub entry_max: Vec<i64>,
    pub exit_max: Vec<i64>,
    pub exit_backorder_max: Vec<i64>,
    pub action_max: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub entry_holding: Vec<f64>,
    pub exit_holding: Vec<f64>,
    pub exit_backorder: Vec<f64>,
    /// Slopes applied to (entry stocks, exit surpluses, exit backorders) at the
    /// end of the horizon.
    pub terminal_slopes: Vec<f64>,
    /// $/TEU charged for inflow lost above an entry's storage limit and for
    /// outflow forgiven below an exit's backorder limit.
    #[serde(default)]
    pub spill_penalty: f64,
}

/// A finitely supported law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist<T> {
    pub values: Vec<T>,
    pub probs: Vec<f64>,
}

impl<T: Copy + PartialEq> DiscreteDist<T> {
    pub fn new(values: Vec<T>, probs: Vec<f64>) -> Self {
        Self { values, probs }
    }

    pub fn degenerate(value: T) -> Self {
        Self {
            values: vec![value],
            probs: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Probability of `value`; zero outside the support.
    pub fn prob_of(&self, value: T) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .filter(|(v, _)| **v == value)
            .map(|(_, p)| *p)
            .sum()
    }

    /// Inverse-CDF draw from a uniform variate in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> T {
        let mut acc = 0.0;
        for (v, p) in self.values.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return *v;
            }
        }
        *self.values.last().expect("empty distribution")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneRateOverride {
    pub lane: Lane,
    pub dist: DiscreteDist<f64>,
}

/// Rate law of one spot source. Every lane of the source draws independently
/// from `dist` unless a lane override is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotRateSpec {
    pub source: u32,
    pub dist: DiscreteDist<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lane_overrides: Vec<LaneRateOverride>,
}

impl SpotRateSpec {
    pub fn lane_dist(&self, lane: Lane) -> &DiscreteDist<f64> {
        self.lane_overrides
            .iter()
            .find(|o| o.lane == lane)
            .map(|o| &o.dist)
            .unwrap_or(&self.dist)
    }
}

/// Per-period marginals, identical in every period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpec {
    pub inflow: Vec<DiscreteDist<i64>>,
    pub outflow: Vec<DiscreteDist<i64>>,
    #[serde(default)]
    pub spot_rates: Vec<SpotRateSpec>,
}

/// Stock levels at the start of a period. Exit stock is negative when
/// backordered.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState {
    pub entry: Vec<i64>,
    pub exit: Vec<i64>,
}

impl SystemState {
    pub fn new(entry: Vec<i64>, exit: Vec<i64>) -> Self {
        Self { entry, exit }
    }

    pub fn zeros(n_entries: usize, n_exits: usize) -> Self {
        Self {
            entry: vec![0; n_entries],
            exit: vec![0; n_exits],
        }
    }

    pub fn within(&self, bounds: &Bounds) -> bool {
        self.entry.len() == bounds.entry_max.len()
            && self.exit.len() == bounds.exit_max.len()
            && self
                .entry
                .iter()
                .zip(&bounds.entry_max)
                .all(|(s, m)| (0..=*m).contains(s))
            && self
                .exit
                .iter()
                .zip(bounds.exit_max.iter().zip(&bounds.exit_backorder_max))
                .all(|(s, (hi, lo))| (-*lo..=*hi).contains(s))
    }

    /// Components as `[entries.., exits..]`.
    pub fn components(&self) -> Vec<i64> {
        self.entry.iter().chain(&self.exit).copied().collect()
    }
}

/// One period's draw of the exogenous state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousRealization {
    pub inflow: Vec<i64>,
    pub outflow: Vec<i64>,
    /// Per spot source (in instance order), per lane of that source.
    #[serde(default)]
    pub spot_rates: Vec<Vec<f64>>,
    #[serde(default = "one")]
    pub probability: f64,
}

fn one() -> f64 {
    1.0
}

impl ExogenousRealization {
    /// Total TEU entering and leaving the system in this period.
    pub fn total_flow(&self) -> i64 {
        self.inflow.iter().sum::<i64>() + self.outflow.iter().sum::<i64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub realizations: Vec<ExogenousRealization>,
    #[serde(default = "one")]
    pub probability: f64,
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.realizations.len()
    }

    pub fn total_flow(&self) -> i64 {
        self.realizations.iter().map(|z| z.total_flow()).sum()
    }
}

/// Reserved TEU per source (outer, instance order) and period (inner).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityPlan {
    pub capacity: Vec<Vec<f64>>,
}

impl CapacityPlan {
    pub fn new(capacity: Vec<Vec<f64>>) -> Self {
        Self { capacity }
    }

    pub fn constant(n_sources: usize, horizon: usize, level: f64) -> Self {
        Self {
            capacity: vec![vec![level; horizon]; n_sources],
        }
    }

    pub fn n_sources(&self) -> usize {
        self.capacity.len()
    }

    pub fn horizon(&self) -> usize {
        self.capacity.first().map_or(0, Vec::len)
    }

    /// Capacities of all sources in period `t` (0-based).
    pub fn period(&self, t: usize) -> Vec<f64> {
        self.capacity.iter().map(|row| row[t]).collect()
    }

    /// Row-major flattening, source by source.
    pub fn flatten(&self) -> Vec<f64> {
        self.capacity.iter().flatten().copied().collect()
    }

    pub fn from_flat(values: &[f64], n_sources: usize, horizon: usize) -> Self {
        assert_eq!(values.len(), n_sources * horizon);
        Self {
            capacity: values.chunks(horizon).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn check_dims(&self, instance: &Instance) -> Result<()> {
        if self.capacity.len() != instance.sources.len()
            || self.capacity.iter().any(|r| r.len() != instance.horizon)
        {
            return Err(Error::Dimension(format!(
                "capacity plan must be {} sources x {} periods",
                instance.sources.len(),
                instance.horizon
            )));
        }
        if self.flatten().iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidArgument(
                "capacity plan entries must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub network: Network,
    pub sources: Vec<Source>,
    pub bounds: Bounds,
    pub costs: CostSpec,
    pub uncertainty: UncertaintySpec,
    pub horizon: usize,
    pub initial_state: SystemState,
    /// Capacity plan shipped with the instance (generated instances carry one).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_plan: Option<CapacityPlan>,
}

impl Instance {
    pub fn n_entries(&self) -> usize {
        self.network.entries.len()
    }

    pub fn n_exits(&self) -> usize {
        self.network.exits.len()
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// Indices (into `sources`) of the spot sources, in order.
    pub fn spot_sources(&self) -> Vec<usize> {
        (0..self.sources.len())
            .filter(|&k| self.sources[k].is_spot())
            .collect()
    }

    pub fn spot_spec(&self, source_id: u32) -> Option<&SpotRateSpec> {
        self.uncertainty
            .spot_rates
            .iter()
            .find(|s| s.source == source_id)
    }

    /// Reservation rates as a plan-shaped matrix.
    pub fn reservation_rates(&self) -> Vec<Vec<f64>> {
        self.sources
            .iter()
            .map(|s| s.reservation_rate.clone())
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    /// Fails with every violation joined when the instance is invalid.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = validate_instance(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInstance(
                v.iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; "),
            ))
        }
    }
}

/// A broken invariant, naming the offending field and the rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

struct Checker(Vec<Violation>);

impl Checker {
    fn check(&mut self, ok: bool, field: impl Into<String>, rule: impl Into<String>) -> bool {
        if !ok {
            self.0.push(Violation {
                field: field.into(),
                rule: rule.into(),
            });
        }
        ok
    }

    fn dist<T: Copy>(&mut self, d: &DiscreteDist<T>, field: &str, nonneg: impl Fn(T) -> bool) {
        if !self.check(!d.values.is_empty(), field, "support must be nonempty") {
            return;
        }
        if !self.check(
            d.values.len() == d.probs.len(),
            field,
            "values and probs must have equal length",
        ) {
            return;
        }
        self.check(
            d.values.iter().all(|v| nonneg(*v)),
            field,
            "support values must be finite and nonnegative",
        );
        let ok_probs = d.probs.iter().all(|p| p.is_finite() && *p >= 0.0);
        self.check(ok_probs, field, "probabilities must be nonnegative");
        let total: f64 = d.probs.iter().sum();
        if ok_probs {
            self.check(
                (total - 1.0).abs() <= PROBABILITY_TOLERANCE,
                field,
                format!("probabilities sum to {total}, expected 1"),
            );
        }
    }
}

/// Lists every broken invariant. An empty list means the instance is valid.
pub fn validate_instance(instance: &Instance) -> Vec<Violation> {
    let mut c = Checker(Vec::new());
    let net = &instance.network;
    let (ni, nj) = (net.entries.len(), net.exits.len());
    let tau = instance.horizon;

    c.check(ni > 0, "network.entries", "at least one entry is required");
    c.check(nj > 0, "network.exits", "at least one exit is required");
    let entry_ids: HashSet<_> = net.entries.iter().collect();
    let exit_ids: HashSet<_> = net.exits.iter().collect();
    c.check(entry_ids.len() == ni, "network.entries", "ids must be unique");
    c.check(exit_ids.len() == nj, "network.exits", "ids must be unique");
    c.check(
        entry_ids.is_disjoint(&exit_ids),
        "network",
        "entry and exit ids must be disjoint",
    );
    let mut seen = HashSet::new();
    for (n, lane) in net.lanes.iter().enumerate() {
        let field = format!("network.lanes[{n}]");
        c.check(
            entry_ids.contains(&lane.0) && exit_ids.contains(&lane.1),
            &field,
            "lane must join a declared entry to a declared exit",
        );
        c.check(seen.insert(*lane), &field, "duplicate lane");
    }
    c.check(!net.lanes.is_empty(), "network.lanes", "at least one lane is required");

    c.check(tau >= 1, "horizon", "must be at least 1");

    let mut source_ids = HashSet::new();
    let mut covered = HashSet::new();
    for (k, s) in instance.sources.iter().enumerate() {
        let field = format!("sources[{k}]");
        c.check(source_ids.insert(s.id), &field, "duplicate source id");
        c.check(!s.lanes.is_empty(), format!("{field}.lanes"), "must serve a lane");
        c.check(
            s.lanes.iter().all(|l| net.lanes.contains(l)),
            format!("{field}.lanes"),
            "every lane must belong to the network",
        );
        c.check(
            s.lanes.iter().collect::<HashSet<_>>().len() == s.lanes.len(),
            format!("{field}.lanes"),
            "duplicate lane",
        );
        covered.extend(s.lanes.iter().copied());
        let rr = &s.reservation_rate;
        if c.check(
            rr.len() == tau,
            format!("{field}.reservation_rate"),
            "needs one rate per period",
        ) {
            c.check(
                rr.iter().all(|v| v.is_finite() && *v >= 0.0),
                format!("{field}.reservation_rate"),
                "rates must be nonnegative",
            );
        }
        match s.kind {
            SourceKind::Spot => {
                c.check(
                    rr.iter().all(|v| *v == 0.0),
                    format!("{field}.reservation_rate"),
                    "spot sources carry no reservation premium",
                );
                c.check(
                    instance.spot_spec(s.id).is_some(),
                    field.to_string(),
                    "spot source needs a rate law in uncertainty.spot_rates",
                );
            }
            SourceKind::Strategic => match &s.execution_cost {
                None => {
                    c.check(false, format!("{field}.execution_cost"), "strategic source needs fixed rates");
                }
                Some(rows) => {
                    let shaped = rows.len() == s.lanes.len() && rows.iter().all(|r| r.len() == tau);
                    if c.check(
                        shaped,
                        format!("{field}.execution_cost"),
                        "needs one row per lane with one rate per period",
                    ) {
                        c.check(
                            rows.iter().flatten().all(|v| v.is_finite() && *v >= 0.0),
                            format!("{field}.execution_cost"),
                            "rates must be nonnegative",
                        );
                    }
                }
            },
        }
    }
    c.check(!instance.sources.is_empty(), "sources", "at least one source is required");
    c.check(
        net.lanes.iter().all(|l| covered.contains(l)),
        "sources",
        "source lane sets must cover every lane",
    );

    let b = &instance.bounds;
    let b_ok = c.check(b.entry_max.len() == ni, "bounds.entry_max", "needs one bound per entry")
        & c.check(b.exit_max.len() == nj, "bounds.exit_max", "needs one bound per exit")
        & c.check(
            b.exit_backorder_max.len() == nj,
            "bounds.exit_backorder_max",
            "needs one bound per exit",
        );
    c.check(
        b.entry_max.iter().chain(&b.exit_max).chain(&b.exit_backorder_max).all(|v| *v >= 0)
            && b.action_max >= 0,
        "bounds",
        "bounds must be nonnegative integers",
    );

    let k = &instance.costs;
    c.check(k.entry_holding.len() == ni, "costs.entry_holding", "needs one rate per entry");
    c.check(k.exit_holding.len() == nj, "costs.exit_holding", "needs one rate per exit");
    c.check(k.exit_backorder.len() == nj, "costs.exit_backorder", "needs one rate per exit");
    c.check(
        k.terminal_slopes.len() == ni + 2 * nj,
        "costs.terminal_slopes",
        format!("needs {} slopes (entries, exit surplus, exit backorder)", ni + 2 * nj),
    );
    c.check(
        k.entry_holding
            .iter()
            .chain(&k.exit_holding)
            .chain(&k.exit_backorder)
            .chain(&k.terminal_slopes)
            .chain(std::iter::once(&k.spill_penalty))
            .all(|v| v.is_finite() && *v >= 0.0),
        "costs",
        "rates must be nonnegative",
    );

    let u = &instance.uncertainty;
    if c.check(u.inflow.len() == ni, "uncertainty.inflow", "needs one law per entry") {
        for (i, d) in u.inflow.iter().enumerate() {
            c.dist(d, &format!("uncertainty.inflow[{i}]"), |v| v >= 0);
        }
    }
    if c.check(u.outflow.len() == nj, "uncertainty.outflow", "needs one law per exit") {
        for (j, d) in u.outflow.iter().enumerate() {
            c.dist(d, &format!("uncertainty.outflow[{j}]"), |v| v >= 0);
        }
    }
    for (n, spec) in u.spot_rates.iter().enumerate() {
        let field = format!("uncertainty.spot_rates[{n}]");
        let owner = instance.sources.iter().find(|s| s.id == spec.source);
        c.check(
            owner.is_some_and(Source::is_spot),
            &field,
            "must reference a spot source",
        );
        c.check(
            u.spot_rates.iter().filter(|s| s.source == spec.source).count() == 1,
            &field,
            "one rate law per spot source",
        );
        let finite = |v: f64| v.is_finite() && v >= 0.0;
        c.dist(&spec.dist, &format!("{field}.dist"), finite);
        for (m, o) in spec.lane_overrides.iter().enumerate() {
            c.check(
                owner.is_some_and(|s| s.lanes.contains(&o.lane)),
                format!("{field}.lane_overrides[{m}]"),
                "override lane must be served by the source",
            );
            c.dist(&o.dist, &format!("{field}.lane_overrides[{m}].dist"), finite);
        }
    }

    if b_ok {
        c.check(
            instance.initial_state.within(b),
            "initial_state",
            "must lie within bounds",
        );
    }
    if let Some(plan) = &instance.reference_plan {
        c.check(
            plan.check_dims(instance).is_ok(),
            "reference_plan",
            "must be sources x horizon with nonnegative entries",
        );
    }
    c.0
}

/// Number of grid states: `prod_i (S_i + 1) * prod_j (B_j + S_j + 1)`.
pub fn state_space_size(instance: &Instance) -> Result<u64> {
    let b = &instance.bounds;
    let entries = b.entry_max.iter().map(|m| m + 1);
    let exits = b
        .exit_max
        .iter()
        .zip(&b.exit_backorder_max)
        .map(|(hi, lo)| hi + lo + 1);
    entries.chain(exits).try_fold(1u64, |acc, n| {
        let n = u64::try_from(n).map_err(|_| Error::Overflow("state space size"))?;
        acc.checked_mul(n).ok_or(Error::Overflow("state space size"))
    })
}

/// Per-period support size of the exogenous state.
pub fn exogenous_support_size(instance: &Instance) -> Result<u64> {
    let u = &instance.uncertainty;
    let mut sizes: Vec<usize> = u.inflow.iter().chain(&u.outflow).map(DiscreteDist::len).collect();
    for k in instance.spot_sources() {
        let s = &instance.sources[k];
        let spec = instance
            .spot_spec(s.id)
            .ok_or_else(|| Error::InvalidInstance(format!("spot source {} has no rate law", s.id)))?;
        sizes.extend(s.lanes.iter().map(|l| spec.lane_dist(*l).len()));
    }
    sizes.into_iter().try_fold(1u64, |acc, n| {
        acc.checked_mul(n as u64)
            .ok_or(Error::Overflow("exogenous support size"))
    })
}

/// Number of distinct full-horizon scenarios, `|Z|^tau`.
pub fn scenario_count(instance: &Instance) -> Result<u128> {
    let z = exogenous_support_size(instance)? as u128;
    let tau = u32::try_from(instance.horizon).map_err(|_| Error::Overflow("scenario count"))?;
    z.checked_pow(tau).ok_or(Error::Overflow("scenario count"))
}

/// Parameters of the synthetic instance generator. Fields past
/// `capacity_levels` fix the parts of an instance that the random draw does not
/// touch and default to the single-lane reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateShape {
    pub n_entries: usize,
    pub n_exits: usize,
    pub n_bids: usize,
    pub n_carriers: usize,
    pub n_spot: usize,
    pub horizon: usize,
    pub cost_mean: f64,
    pub cost_sd: f64,
    pub cost_min: f64,
    /// Number of capacity levels per coordinate; plans live on `0..levels`.
    pub capacity_levels: u32,
    pub storage_max: i64,
    pub backorder_max: i64,
    pub action_max: i64,
    pub entry_holding: f64,
    pub exit_holding: f64,
    pub exit_backorder: f64,
    pub spill_penalty: f64,
    pub spot_support: usize,
    /// Reservation premium as a fraction of a truncated-normal draw.
    pub reservation_ratio: f64,
    pub inflow: DiscreteDist<i64>,
    pub outflow: DiscreteDist<i64>,
}

impl Default for GenerateShape {
    fn default() -> Self {
        Self {
            n_entries: 1,
            n_exits: 1,
            n_bids: 1,
            n_carriers: 1,
            n_spot: 1,
            horizon: 4,
            cost_mean: 14.7,
            cost_sd: 5.0,
            cost_min: 2.0,
            capacity_levels: 11,
            storage_max: 10,
            backorder_max: 10,
            action_max: 10,
            entry_holding: 15.0,
            exit_holding: 12.0,
            exit_backorder: 24.0,
            spill_penalty: 55.0,
            spot_support: 2,
            reservation_ratio: 0.5,
            inflow: DiscreteDist::new(vec![0, 4, 8], vec![0.4, 0.3, 0.3]),
            outflow: DiscreteDist::new(vec![0, 4, 8], vec![0.25, 0.25, 0.5]),
        }
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, law: &Normal<f64>, min: f64) -> f64 {
    loop {
        let v = law.sample(rng);
        if v >= min {
            return v;
        }
    }
}

/// Draws a synthetic instance. Pure in `(seed, shape)`.
///
/// Lanes are the full product of entries and exits. Each bid covers a random
/// nonempty subset of lanes and is won by a random carrier; every (bid, winner)
/// pair becomes a strategic source with rates drawn i.i.d. from a normal law
/// truncated below at `cost_min` and held constant over time. Spot sources
/// serve every lane; their rate support holds `spot_support` truncated-normal
/// draws with equal mass. The reference plan gives each strategic source a
/// third of the capacity grid and each spot source two thirds.
pub fn generate_instance(seed: u64, shape: &GenerateShape) -> Result<Instance> {
    let s = shape;
    if s.n_entries == 0 || s.n_exits == 0 {
        return Err(Error::InvalidArgument(
            "shape must have at least one lane (entries and exits > 0)".into(),
        ));
    }
    if s.n_bids == 0 || s.n_carriers == 0 || s.horizon == 0 || s.capacity_levels < 2 {
        return Err(Error::InvalidArgument(
            "bids, carriers, horizon must be positive and capacity_levels >= 2".into(),
        ));
    }
    if !(s.cost_min < s.cost_mean && s.cost_sd > 0.0) {
        return Err(Error::InvalidArgument(
            "need cost_min < cost_mean and cost_sd > 0".into(),
        ));
    }
    if s.spot_support == 0 {
        return Err(Error::InvalidArgument("spot_support must be positive".into()));
    }
    let law = Normal::new(s.cost_mean, s.cost_sd)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let entries: Vec<u32> = (1..=s.n_entries as u32).collect();
    let exits: Vec<u32> = (0..s.n_exits as u32).map(|j| s.n_entries as u32 + 1 + j).collect();
    let lanes: Vec<Lane> = entries
        .iter()
        .flat_map(|&i| exits.iter().map(move |&j| Lane(i, j)))
        .collect();
    let tau = s.horizon;

    let mut sources = Vec::new();
    for b in 0..s.n_bids {
        let mut bid_lanes: Vec<Lane> = lanes.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        if bid_lanes.is_empty() {
            bid_lanes.push(lanes[rng.random_range(0..lanes.len())]);
        }
        // The winner only labels the pair; every (bid, winner) is its own source.
        let _winner = rng.random_range(0..s.n_carriers);
        let execution_cost = bid_lanes
            .iter()
            .map(|_| vec![truncated_normal(&mut rng, &law, s.cost_min); tau])
            .collect();
        let reservation_rate = (0..tau)
            .map(|_| s.reservation_ratio * truncated_normal(&mut rng, &law, s.cost_min))
            .collect();
        sources.push(Source {
            id: b as u32 + 1,
            kind: SourceKind::Strategic,
            lanes: bid_lanes,
            execution_cost: Some(execution_cost),
            reservation_rate,
        });
    }
    // Every lane must be served; spot sources cover the whole network, and
    // without them the first bid is widened.
    if s.n_spot == 0 {
        let covered: HashSet<Lane> = sources.iter().flat_map(|x| x.lanes.iter().copied()).collect();
        for lane in &lanes {
            if !covered.contains(lane) {
                let rate = truncated_normal(&mut rng, &law, s.cost_min);
                let first = &mut sources[0];
                first.lanes.push(*lane);
                first.execution_cost.as_mut().unwrap().push(vec![rate; tau]);
            }
        }
    }
    let mut spot_rates = Vec::new();
    for k in 0..s.n_spot {
        let id = (s.n_bids + k) as u32 + 1;
        let values: Vec<f64> = (0..s.spot_support)
            .map(|_| (truncated_normal(&mut rng, &law, s.cost_min) * 100.0).round() / 100.0)
            .collect();
        let probs = vec![1.0 / s.spot_support as f64; s.spot_support];
        spot_rates.push(SpotRateSpec {
            source: id,
            dist: DiscreteDist::new(values, probs),
            lane_overrides: Vec::new(),
        });
        sources.push(Source {
            id,
            kind: SourceKind::Spot,
            lanes: lanes.clone(),
            execution_cost: None,
            reservation_rate: vec![0.0; tau],
        });
    }

    let x_max = f64::from(s.capacity_levels - 1);
    let strategic_cap = (x_max / 3.0).floor();
    let spot_cap = (2.0 * x_max / 3.0).ceil().max(strategic_cap + 1.0).min(x_max);
    let reference_plan = CapacityPlan::new(
        sources
            .iter()
            .map(|src| {
                let level = if src.is_spot() { spot_cap } else { strategic_cap };
                vec![level; tau]
            })
            .collect(),
    );

    let (ni, nj) = (s.n_entries, s.n_exits);
    let mut terminal = vec![s.entry_holding; ni];
    terminal.extend(vec![s.exit_holding; nj]);
    terminal.extend(vec![s.exit_backorder; nj]);
    let instance = Instance {
        name: Some(format!("generated-seed-{seed}")),
        network: Network { entries, exits, lanes },
        sources,
        bounds: Bounds {
            entry_max: vec![s.storage_max; ni],
            exit_max: vec![s.storage_max; nj],
            exit_backorder_max: vec![s.backorder_max; nj],
            action_max: s.action_max,
        },
        costs: CostSpec {
            entry_holding: vec![s.entry_holding; ni],
            exit_holding: vec![s.exit_holding; nj],
            exit_backorder: vec![s.exit_backorder; nj],
            terminal_slopes: terminal,
            spill_penalty: s.spill_penalty,
        },
        uncertainty: UncertaintySpec {
            inflow: vec![s.inflow.clone(); ni],
            outflow: vec![s.outflow.clone(); nj],
            spot_rates,
        },
        horizon: tau,
        initial_state: SystemState::zeros(ni, nj),
        reference_plan: Some(reference_plan),
    };
    instance.ensure_valid()?;
    Ok(instance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    #[test]
    fn reference_instance_is_valid() {
        let inst = reference::instance(reference::POLICY_STRATEGIC_RATE);
        assert_eq!(validate_instance(&inst), vec![]);
        assert_eq!(inst.network.lanes, vec![Lane(1, 2)]);
        assert_eq!(inst.horizon, 4);
    }

    #[test]
    fn spot_premium_is_one_violation() {
        let mut inst = reference::instance(reference::CAPACITY_STRATEGIC_RATE);
        inst.sources[1].reservation_rate = vec![1.0; 4];
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].field.contains("reservation_rate"));
    }

    #[test]
    fn short_probability_mass_is_one_violation() {
        let mut inst = reference::instance(reference::CAPACITY_STRATEGIC_RATE);
        inst.uncertainty.inflow[0].probs = vec![0.4, 0.3, 0.2];
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].field, "uncertainty.inflow[0]");
    }

    #[test]
    fn lane_to_unknown_exit_is_flagged() {
        let mut inst = reference::instance(reference::CAPACITY_STRATEGIC_RATE);
        inst.network.lanes.push(Lane(1, 7));
        let v = validate_instance(&inst);
        assert!(v.iter().any(|x| x.field == "network.lanes[1]"));
    }

    #[test]
    fn state_space_sizes() {
        let inst = reference::instance(reference::POLICY_STRATEGIC_RATE);
        assert_eq!(state_space_size(&inst).unwrap(), 231);

        let mut big = inst.clone();
        big.bounds = Bounds {
            entry_max: vec![9; 4],
            exit_max: vec![9; 2],
            exit_backorder_max: vec![10; 2],
            action_max: 10,
        };
        assert_eq!(state_space_size(&big).unwrap(), 4_000_000);

        let mut zero = inst.clone();
        zero.bounds = Bounds {
            entry_max: vec![0],
            exit_max: vec![0],
            exit_backorder_max: vec![0],
            action_max: 0,
        };
        assert_eq!(state_space_size(&zero).unwrap(), 1);

        let mut huge = inst;
        huge.bounds.entry_max = vec![i64::MAX / 2; 3];
        assert!(matches!(state_space_size(&huge), Err(Error::Overflow(_))));
    }

    #[test]
    fn support_sizes() {
        let inst = reference::instance(reference::POLICY_STRATEGIC_RATE);
        assert_eq!(exogenous_support_size(&inst).unwrap(), 18);
        assert_eq!(scenario_count(&inst).unwrap(), 104_976);

        let det = reference::deterministic_instance(1, &[0], &[0]);
        assert_eq!(exogenous_support_size(&det).unwrap(), 1);
    }

    #[test]
    fn generator_smallest_shape() {
        let inst = generate_instance(1, &GenerateShape::default()).unwrap();
        assert_eq!(inst.network.lanes.len(), 1);
        assert_eq!(inst.sources.len(), 2);
        assert!(validate_instance(&inst).is_empty());
    }

    #[test]
    fn generator_is_deterministic_and_seed_sensitive() {
        let shape = GenerateShape {
            n_entries: 2,
            n_exits: 2,
            n_bids: 3,
            n_carriers: 2,
            n_spot: 1,
            ..GenerateShape::default()
        };
        let a = generate_instance(1, &shape).unwrap();
        let b = generate_instance(1, &shape).unwrap();
        let c = generate_instance(2, &shape).unwrap();
        assert_eq!(a, b);
        assert_ne!(
            a.sources[0].execution_cost, c.sources[0].execution_cost,
            "different seeds should draw different rates"
        );
        for s in a.sources.iter().filter(|s| !s.is_spot()) {
            for row in s.execution_cost.as_ref().unwrap() {
                assert!(row.iter().all(|w| *w >= shape.cost_min));
                assert!(row.windows(2).all(|p| p[0] == p[1]));
            }
        }
        let plan = a.reference_plan.as_ref().unwrap();
        let spot = a.spot_sources()[0];
        assert!(plan.capacity[spot][0] > plan.capacity[0][0]);
    }

    #[test]
    fn generator_rejects_empty_network() {
        let shape = GenerateShape {
            n_exits: 0,
            ..GenerateShape::default()
        };
        assert!(generate_instance(1, &shape).is_err());
    }

    #[test]
    fn quantile_walks_the_cdf() {
        let d = DiscreteDist::new(vec![0, 4, 8], vec![0.4, 0.3, 0.3]);
        assert_eq!(d.quantile(0.0), 0);
        assert_eq!(d.quantile(0.39), 0);
        assert_eq!(d.quantile(0.41), 4);
        assert_eq!(d.quantile(0.99), 8);
        assert_eq!(d.prob_of(4), 0.3);
        assert_eq!(d.prob_of(5), 0.0);
    }
}
