//! Enumeration and sampling of exogenous realizations.
//!
//! Random draws use ChaCha8 seeded through `seed_from_u64`. A realization
//! consumes one `f64` uniform per component, in the order: inflow of every
//! entry, outflow of every exit, then the rate of every lane of every spot
//! source (sources in instance order, lanes in source order). Each uniform is
//! mapped through the component's inverse CDF. Scenarios draw their periods in
//! order from one stream, so scenario `n` of a batch depends on all earlier
//! ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiscreteDist, ExogenousRealization, Instance, Scenario};

/// Default cap on the per-period support size for enumeration.
pub const DEFAULT_SUPPORT_CAP: u128 = 1_000_000;

/// The marginal laws of one period, flattened in draw order.
struct Components<'a> {
    inflow: Vec<&'a DiscreteDist<i64>>,
    outflow: Vec<&'a DiscreteDist<i64>>,
    /// Per spot source, per lane.
    spot: Vec<Vec<&'a DiscreteDist<f64>>>,
}

fn components(instance: &Instance) -> Result<Components<'_>> {
    let u = &instance.uncertainty;
    let mut spot = Vec::new();
    for k in instance.spot_sources() {
        let src = &instance.sources[k];
        let spec = instance
            .spot_spec(src.id)
            .ok_or_else(|| Error::InvalidInstance(format!("spot source {} has no rate law", src.id)))?;
        spot.push(src.lanes.iter().map(|l| spec.lane_dist(*l)).collect());
    }
    Ok(Components {
        inflow: u.inflow.iter().collect(),
        outflow: u.outflow.iter().collect(),
        spot,
    })
}

/// Probability of one period's tuple under the product of marginals; zero
/// when any component lies outside its support.
pub fn realization_probability(z: &ExogenousRealization, instance: &Instance) -> f64 {
    let Ok(c) = components(instance) else {
        return 0.0;
    };
    if z.inflow.len() != c.inflow.len()
        || z.outflow.len() != c.outflow.len()
        || z.spot_rates.len() != c.spot.len()
        || z.spot_rates.iter().zip(&c.spot).any(|(r, d)| r.len() != d.len())
    {
        return 0.0;
    }
    let mut p = 1.0;
    for (v, d) in z.inflow.iter().zip(&c.inflow) {
        p *= d.prob_of(*v);
    }
    for (v, d) in z.outflow.iter().zip(&c.outflow) {
        p *= d.prob_of(*v);
    }
    for (rates, dists) in z.spot_rates.iter().zip(&c.spot) {
        for (v, d) in rates.iter().zip(dists) {
            p *= d.prob_of(*v);
        }
    }
    p
}

/// Product over periods of the per-period tuple probabilities.
pub fn scenario_probability(scenario: &Scenario, instance: &Instance) -> f64 {
    scenario
        .realizations
        .iter()
        .map(|z| realization_probability(z, instance))
        .product()
}

/// Every per-period tuple with its probability, in lexicographic order of
/// (inflows, outflows, spot rates) over the declared supports.
pub fn enumerate_support(instance: &Instance, cap: u128) -> Result<Vec<ExogenousRealization>> {
    let c = components(instance)?;
    let mut radices: Vec<usize> = c.inflow.iter().map(|d| d.len()).collect();
    radices.extend(c.outflow.iter().map(|d| d.len()));
    radices.extend(c.spot.iter().flatten().map(|d| d.len()));
    let size = radices
        .iter()
        .try_fold(1u128, |acc, r| acc.checked_mul(*r as u128))
        .ok_or(Error::Overflow("exogenous support size"))?;
    if size > cap {
        return Err(Error::SupportTooLarge { size, cap });
    }
    let mut out = Vec::with_capacity(size as usize);
    let mut digits = vec![0usize; radices.len()];
    for _ in 0..size {
        let mut prob = 1.0;
        let mut pos = 0;
        let mut inflow = Vec::with_capacity(c.inflow.len());
        for d in &c.inflow {
            prob *= d.probs[digits[pos]];
            inflow.push(d.values[digits[pos]]);
            pos += 1;
        }
        let mut outflow = Vec::with_capacity(c.outflow.len());
        for d in &c.outflow {
            prob *= d.probs[digits[pos]];
            outflow.push(d.values[digits[pos]]);
            pos += 1;
        }
        let mut spot_rates = Vec::with_capacity(c.spot.len());
        for lanes in &c.spot {
            let mut rates = Vec::with_capacity(lanes.len());
            for d in lanes {
                prob *= d.probs[digits[pos]];
                rates.push(d.values[digits[pos]]);
                pos += 1;
            }
            spot_rates.push(rates);
        }
        out.push(ExogenousRealization {
            inflow,
            outflow,
            spot_rates,
            probability: prob,
        });
        for p in (0..digits.len()).rev() {
            digits[p] += 1;
            if digits[p] < radices[p] {
                break;
            }
            digits[p] = 0;
        }
    }
    Ok(out)
}

/// Law each sampled component is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Proposal {
    /// The component's own marginal.
    #[default]
    Law,
    /// Uniform over the component's support.
    Uniform,
}

fn draw<T: Copy + PartialEq>(d: &DiscreteDist<T>, u: f64, proposal: Proposal) -> T {
    match proposal {
        Proposal::Law => d.quantile(u),
        Proposal::Uniform => d.values[((u * d.len() as f64) as usize).min(d.len() - 1)],
    }
}

/// Draws one period's tuple from `rng` in the documented component order.
pub fn sample_realization(instance: &Instance, rng: &mut ChaCha8Rng) -> Result<ExogenousRealization> {
    sample_realization_with(instance, rng, Proposal::Law)
}

pub fn sample_realization_with(
    instance: &Instance,
    rng: &mut ChaCha8Rng,
    proposal: Proposal,
) -> Result<ExogenousRealization> {
    let c = components(instance)?;
    let inflow: Vec<i64> = c.inflow.iter().map(|d| draw(d, rng.random(), proposal)).collect();
    let outflow: Vec<i64> = c.outflow.iter().map(|d| draw(d, rng.random(), proposal)).collect();
    let spot_rates: Vec<Vec<f64>> = c
        .spot
        .iter()
        .map(|lanes| lanes.iter().map(|d| draw(d, rng.random(), proposal)).collect())
        .collect();
    let mut z = ExogenousRealization {
        inflow,
        outflow,
        spot_rates,
        probability: 1.0,
    };
    z.probability = realization_probability(&z, instance);
    Ok(z)
}

/// `count` i.i.d. full-horizon scenarios drawn from the marginals.
pub fn sample_scenarios(instance: &Instance, count: usize, seed: u64) -> Result<Vec<Scenario>> {
    sample_scenarios_with(instance, count, seed, Proposal::Law)
}

pub fn sample_scenarios_with(instance: &Instance, count: usize, seed: u64, proposal: Proposal) -> Result<Vec<Scenario>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let realizations = (0..instance.horizon)
                .map(|_| sample_realization_with(instance, &mut rng, proposal))
                .collect::<Result<Vec<_>>>()?;
            let probability = realizations.iter().map(|z| z.probability).product();
            Ok(Scenario {
                realizations,
                probability,
            })
        })
        .collect()
}

/// Every full-horizon scenario with its probability. Size `|Z|^tau`.
pub fn enumerate_scenarios(instance: &Instance, cap: u128) -> Result<Vec<Scenario>> {
    let support = enumerate_support(instance, cap)?;
    let total = (support.len() as u128)
        .checked_pow(instance.horizon as u32)
        .ok_or(Error::Overflow("scenario count"))?;
    if total > cap {
        return Err(Error::SupportTooLarge { size: total, cap });
    }
    let mut out = Vec::with_capacity(total as usize);
    let mut digits = vec![0usize; instance.horizon];
    for _ in 0..total {
        let realizations: Vec<ExogenousRealization> =
            digits.iter().map(|&k| support[k].clone()).collect();
        let probability = realizations.iter().map(|z| z.probability).product();
        out.push(Scenario {
            realizations,
            probability,
        });
        for p in (0..digits.len()).rev() {
            digits[p] += 1;
            if digits[p] < support.len() {
                break;
            }
            digits[p] = 0;
        }
    }
    Ok(out)
}

/// 64-bit seed for item `index` of a batch seeded with `seed` (SplitMix64).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Iid,
    Enumerated,
    Scenario,
}

/// Per-period realizations with normalized weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub mode: SampleMode,
    pub seed: Option<u64>,
    pub realizations: Vec<Vec<ExogenousRealization>>,
    pub weights: Vec<Vec<f64>>,
}

/// How weights are formed from an i.i.d. sample. Probability weights are
/// consistent under the uniform proposal, uniform weights under the law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `p_l / sum p`, the normalized scenario probabilities.
    #[default]
    Probability,
    /// `1 / N`.
    Uniform,
}

/// Weights for a sample whose members have probabilities `probs`.
pub fn weights(probs: &[f64], weighting: Weighting) -> Vec<f64> {
    let uniform = vec![1.0 / probs.len() as f64; probs.len()];
    let total: f64 = probs.iter().sum();
    match weighting {
        Weighting::Probability if total > 0.0 => probs.iter().map(|p| p / total).collect(),
        _ => uniform,
    }
}

impl SampleSet {
    pub fn horizon(&self) -> usize {
        self.realizations.len()
    }

    /// One realization per period taken from `scenario`, each with weight 1.
    pub fn from_scenario(scenario: &Scenario) -> Self {
        Self {
            mode: SampleMode::Scenario,
            seed: None,
            realizations: scenario.realizations.iter().map(|z| vec![z.clone()]).collect(),
            weights: vec![vec![1.0]; scenario.horizon()],
        }
    }

    /// The full support in every period, weighted by the exact tuple
    /// probabilities.
    pub fn enumerated(instance: &Instance, cap: u128) -> Result<Self> {
        let support = enumerate_support(instance, cap)?;
        let weights: Vec<f64> = support.iter().map(|z| z.probability).collect();
        Ok(Self {
            mode: SampleMode::Enumerated,
            seed: None,
            realizations: vec![support; instance.horizon],
            weights: vec![weights; instance.horizon],
        })
    }
}

/// `n` i.i.d. draws per period, weighted by `p(z) / sum_l p(z_l)`.
/// `n` uniform draws per period over the support, weighted by normalized
/// probability.
pub fn build_sample_set(instance: &Instance, n: usize, seed: u64) -> Result<SampleSet> {
    build_sample_set_with(instance, n, seed, Proposal::Uniform, Weighting::Probability)
}

pub fn build_sample_set_with(
    instance: &Instance,
    n: usize,
    seed: u64,
    proposal: Proposal,
    weighting: Weighting,
) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut realizations = Vec::with_capacity(instance.horizon);
    let mut weights = Vec::with_capacity(instance.horizon);
    for _ in 0..instance.horizon {
        let draws = (0..n)
            .map(|_| sample_realization_with(instance, &mut rng, proposal))
            .collect::<Result<Vec<_>>>()?;
        weights.push(self::weights(&draws.iter().map(|z| z.probability).collect::<Vec<_>>(), weighting));
        realizations.push(draws);
    }
    Ok(SampleSet {
        mode: SampleMode::Iid,
        seed: Some(seed),
        realizations,
        weights,
    })
}

/// On-disk scenario batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub seed: Option<u64>,
    pub count: usize,
    pub scenarios: Vec<Scenario>,
}

impl ScenarioFile {
    pub fn new(seed: Option<u64>, scenarios: Vec<Scenario>) -> Self {
        Self {
            seed,
            count: scenarios.len(),
            scenarios,
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: Self = serde_json::from_str(&text)?;
        if file.count != file.scenarios.len() {
            return Err(Error::InvalidArgument(format!(
                "scenario file declares {} scenarios but holds {}",
                file.count,
                file.scenarios.len()
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Reads either a bare scenario or a scenario batch file.
pub fn load_scenarios(path: impl AsRef<std::path::Path>) -> Result<Vec<Scenario>> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(file) = serde_json::from_str::<ScenarioFile>(&text) {
        return Ok(file.scenarios);
    }
    Ok(vec![serde_json::from_str::<Scenario>(&text)?])
}
