//! Regret of a shared capacity plan against per-scenario optima, in-sample
//! versus out-of-sample comparison and summary statistics.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capopt::{objective, CapacityObjective, Evaluator};
use crate::error::{Error, Result};
use crate::model::{CapacityPlan, Instance, Scenario};
use crate::mslp::{build_capacity_lp, solve_mslp, InitialState};

/// Environment variable naming the per-scenario optimum cache directory.
pub const CACHE_ENV: &str = "DRAYAGE_CACHE_DIR";

/// Tolerance below zero still accepted as a nonnegative regret.
pub const REGRET_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear interpolation between order statistics of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    Ok(Summary {
        min: v[0],
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        mean: mean.clamp(v[0], v[v.len() - 1]),
        q3: quantile_sorted(&v, 0.75),
        max: v[v.len() - 1],
    })
}

/// Settings shared by every per-scenario optimisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Upper capacity bound; `None` uses the instance's move limit.
    pub x_max: Option<f64>,
    /// Take the value at the best initial state rather than the instance's.
    pub best_initial: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            x_max: None,
            best_initial: true,
        }
    }
}

impl EvalConfig {
    fn x_max(&self, instance: &Instance) -> f64 {
        self.x_max.unwrap_or(instance.bounds.action_max as f64)
    }

    fn initial(&self, instance: &Instance) -> InitialState {
        if self.best_initial {
            InitialState::Best
        } else {
            InitialState::Fixed(instance.initial_state.clone())
        }
    }

    /// Single-scenario objective matching this configuration.
    pub fn objective(&self, instance: &Instance, scenario: &Scenario) -> CapacityObjective {
        CapacityObjective::new(instance, Evaluator::ScenarioLp(scenario.clone()))
            .with_box(self.x_max(instance))
            .with_initial(self.initial(instance))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOptimum {
    pub plan: CapacityPlan,
    pub objective: f64,
}

fn hex_digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn cache_path(dir: &Path, instance: &Instance, scenario: &Scenario, config: &EvalConfig) -> Result<PathBuf> {
    let key = hex_digest(&[
        &instance.to_json(),
        &serde_json::to_string(scenario)?,
        &serde_json::to_string(config)?,
    ]);
    Ok(dir.join(format!("{key}.json")))
}

/// Best plan for one scenario and its objective `V_1(x) - v(x)`.
///
/// With the capacities priced as columns the scenario's program is solved
/// once and its optimum is exact. Results are cached under `$DRAYAGE_CACHE_DIR`
/// when it is set.
pub fn per_scenario_optimum(instance: &Instance, scenario: &Scenario, config: &EvalConfig) -> Result<ScenarioOptimum> {
    let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    per_scenario_optimum_cached(instance, scenario, config, cache.as_deref())
}

pub fn per_scenario_optimum_cached(
    instance: &Instance,
    scenario: &Scenario,
    config: &EvalConfig,
    cache: Option<&Path>,
) -> Result<ScenarioOptimum> {
    let path = match cache {
        Some(dir) => Some(cache_path(dir, instance, scenario, config)?),
        None => None,
    };
    if let Some(p) = &path {
        if let Ok(text) = std::fs::read_to_string(p) {
            if let Ok(hit) = serde_json::from_str::<ScenarioOptimum>(&text) {
                return Ok(hit);
            }
        }
    }
    let program = build_capacity_lp(instance, scenario, config.x_max(instance), &config.initial(instance))?;
    let sol = solve_mslp(&program)?;
    let plan = sol.plan.expect("capacity program carries a plan");
    let opt = ScenarioOptimum {
        plan,
        objective: -sol.cost,
    };
    if let Some(p) = &path {
        std::fs::create_dir_all(p.parent().expect("cache file has a parent"))?;
        let tmp = p.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, serde_json::to_string(&opt)?)?;
        std::fs::rename(&tmp, p)?;
    }
    Ok(opt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleLabel {
    In,
    Out,
}

impl std::fmt::Display for SampleLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SampleLabel::In => "in",
            SampleLabel::Out => "out",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub scenario_id: usize,
    pub optimal: f64,
    pub achieved: f64,
    pub regret: f64,
}

/// One record per scenario, `optimal - achieved` under the shared plan.
pub fn regret_profile(
    instance: &Instance,
    shared_plan: &CapacityPlan,
    scenarios: &[Scenario],
    config: &EvalConfig,
) -> Result<Vec<RegretRecord>> {
    shared_plan.check_dims(instance)?;
    scenarios
        .par_iter()
        .enumerate()
        .map(|(id, s)| {
            let best = per_scenario_optimum(instance, s, config)?;
            let achieved = objective(shared_plan, &config.objective(instance, s))?;
            Ok(RegretRecord {
                scenario_id: id,
                optimal: best.objective,
                achieved,
                regret: best.objective - achieved,
            })
        })
        .collect()
}

pub fn write_regret_csv<W: Write>(mut out: W, sets: &[(SampleLabel, &[RegretRecord])]) -> Result<()> {
    writeln!(out, "scenario_id,optimal,achieved,regret,sample")?;
    for (label, records) in sets {
        for r in *records {
            writeln!(out, "{},{},{},{},{label}", r.scenario_id, r.optimal, r.achieved, r.regret)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralizationReport {
    pub probabilities: Vec<f64>,
    /// `(in-sample quantile, out-of-sample quantile)` at each probability.
    pub pairs: Vec<(f64, f64)>,
    pub spearman: f64,
    pub max_deviation: f64,
    pub median_deviation: f64,
    pub in_summary: Summary,
    pub out_summary: Summary,
}

impl GeneralizationReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "p,in_sample,out_sample")?;
        for (p, (a, b)) in self.probabilities.iter().zip(&self.pairs) {
            writeln!(out, "{p},{a},{b}")?;
        }
        Ok(())
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            r[*k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. Returns 1 when both
/// inputs are constant and 0 when exactly one is.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    match (saa > 0.0, sbb > 0.0) {
        (true, true) => sab / (saa * sbb).sqrt(),
        (false, false) => 1.0,
        _ => 0.0,
    }
}

/// Q-Q comparison of two regret samples at `points` evenly spaced
/// probabilities in `[0, 1]`.
pub fn generalization_report(
    in_sample: &[RegretRecord],
    out_sample: &[RegretRecord],
    points: usize,
) -> Result<GeneralizationReport> {
    if in_sample.is_empty() || out_sample.is_empty() {
        return Err(Error::InvalidArgument("both regret samples must be nonempty".into()));
    }
    let points = points.max(2);
    let sorted = |r: &[RegretRecord]| {
        let mut v: Vec<f64> = r.iter().map(|r| r.regret).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (sorted(in_sample), sorted(out_sample));
    let probabilities: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let pairs: Vec<(f64, f64)> = probabilities
        .iter()
        .map(|p| (quantile_sorted(&a, *p), quantile_sorted(&b, *p)))
        .collect();
    let qa: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let qb: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut dev: Vec<f64> = pairs.iter().map(|(x, y)| (x - y).abs()).collect();
    dev.sort_by(f64::total_cmp);
    Ok(GeneralizationReport {
        spearman: spearman(&qa, &qb),
        max_deviation: dev[dev.len() - 1],
        median_deviation: quantile_sorted(&dev, 0.5),
        in_summary: summarize(&a)?,
        out_summary: summarize(&b)?,
        probabilities,
        pairs,
    })
}

pub fn write_summary_csv<W: Write>(mut out: W, rows: &[(&str, &Summary)]) -> Result<()> {
    writeln!(out, "metric,min,q1,median,mean,q3,max")?;
    for (name, s) in rows {
        writeln!(out, "{name},{},{},{},{},{},{}", s.min, s.q1, s.median, s.mean, s.q3, s.max)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    fn rec(regret: f64) -> RegretRecord {
        RegretRecord {
            scenario_id: 0,
            optimal: regret,
            achieved: 0.0,
            regret,
        }
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!((s.min, s.max, s.median, s.mean), (1.0, 4.0, 2.5, 2.5));
        assert_eq!((s.q1, s.q3), (1.75, 3.25));
        let c = summarize(&[7.0; 5]).unwrap();
        assert!([c.min, c.q1, c.median, c.mean, c.q3, c.max].iter().all(|v| *v == 7.0));
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn report_examples() {
        let a: Vec<RegretRecord> = [0.0, 5.0, 30.0, 100.0].map(rec).to_vec();
        let same = generalization_report(&a, &a, 11).unwrap();
        assert_eq!(same.spearman, 1.0);
        assert_eq!(same.max_deviation, 0.0);
        let zeros = vec![rec(0.0); 4];
        let hundreds = vec![rec(100.0); 3];
        let r = generalization_report(&zeros, &hundreds, 5).unwrap();
        assert_eq!(r.max_deviation, 100.0);
        assert!(generalization_report(&[], &a, 5).is_err());
    }

    #[test]
    fn spearman_handles_ties_and_reversal() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 1.0, 2.0], &[1.0, 1.0, 2.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_scenario_optimum_and_zero_regret() {
        let inst = reference::instance(reference::CAPACITY_STRATEGIC_RATE);
        let sc = reference::scenario();
        let cfg = EvalConfig::default();
        let best = per_scenario_optimum_cached(&inst, &sc, &cfg, None).unwrap();
        assert!((best.objective + 439.2).abs() < 1e-6, "{}", best.objective);
        let recs = regret_profile(&inst, &best.plan, std::slice::from_ref(&sc), &cfg).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].regret.abs() < 1e-6, "{:?}", recs[0]);
        let base = regret_profile(&inst, &reference::baseline_plan(), &[sc], &cfg).unwrap();
        assert!((base[0].regret - (557.22 - 439.2)).abs() < 1e-6);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inst = reference::instance(reference::CAPACITY_STRATEGIC_RATE);
        let sc = reference::scenario();
        let cfg = EvalConfig::default();
        let a = per_scenario_optimum_cached(&inst, &sc, &cfg, Some(dir.path())).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let b = per_scenario_optimum_cached(&inst, &sc, &cfg, Some(dir.path())).unwrap();
        assert_eq!(a, b);
    }
}
