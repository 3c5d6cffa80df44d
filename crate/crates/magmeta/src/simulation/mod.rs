//! Scenario-grid Monte Carlo engine: generates meta-analysis samples under
//! the random-effects model, runs every enabled estimator, test, and
//! interval on each replication, and aggregates bias, coverage, and
//! rejection rates with their Monte Carlo standard errors.
//!
//! Determinism contract: every replication draws from its own stream,
//! seeded by (scenario seed, replication index), and aggregation folds the
//! per-replication records in index order. Results are therefore identical
//! across runs and across worker counts.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dists::sample_scaled_noncentral_t;
use crate::effects::{derive_effect, EffectRecord, StudySummary};
use crate::magnitude::{
    ce_delta2, ce_profile_ci, ce_test, conditional_profile_ci, conditional_test,
    corrected_ci_delta2, naive_ci_delta2, rem_point_estimate, Reference,
};
use crate::pooling::{pool_delta, tau2_kdb, tau2_mp, tau2_ssc, Crit};
use crate::{Error, Result};

const ALPHA: f64 = 0.05;

/// Heterogeneity estimators a scenario can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Mp,
    Ssc,
    Kdb,
}

impl MethodTag {
    fn label(self) -> MethodLabel {
        match self {
            MethodTag::Mp => MethodLabel::Mp,
            MethodTag::Ssc => MethodLabel::Ssc,
            MethodTag::Kdb => MethodLabel::Kdb,
        }
    }
}

/// One cell of the simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub k: usize,
    /// Total sample size of each study; length k.
    pub sizes: Vec<u64>,
    /// Control-arm fraction of each study's total.
    pub f: f64,
    pub delta: f64,
    pub tau2: f64,
    pub reps: u32,
    pub seed: u64,
    pub methods: Vec<MethodTag>,
    /// Bootstrap draws for the sum-of-F test references; 0 disables the
    /// bootstrap variants inside the engine.
    pub bootstrap_b: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::domain("scenario needs at least one study"));
        }
        if self.sizes.len() != self.k {
            return Err(Error::domain(format!(
                "sizes length {} does not match k = {}",
                self.sizes.len(),
                self.k
            )));
        }
        if !(self.f > 0.0 && self.f < 1.0) {
            return Err(Error::domain(format!(
                "control fraction must lie in (0,1), got {}",
                self.f
            )));
        }
        for &n in &self.sizes {
            let (n_t, n_c) = split_arms(n, self.f);
            if n_t < 2 || n_c < 2 {
                return Err(Error::domain(format!(
                    "study size {n} with f = {} leaves an arm below 2",
                    self.f
                )));
            }
        }
        if !self.delta.is_finite() {
            return Err(Error::domain("delta must be finite"));
        }
        if !(self.tau2 >= 0.0) || !self.tau2.is_finite() {
            return Err(Error::domain("tau2 must be nonnegative and finite"));
        }
        if self.reps < 1 {
            return Err(Error::domain("reps must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::domain("at least one tau2 method must be enabled"));
        }
        Ok(())
    }

    /// Compact human-readable description of the size pattern, with the
    /// repeated base compressed: "100" or "24-32-36-40-168x2".
    pub fn n_pattern(&self) -> String {
        if let Some(&first) = self.sizes.first() {
            if self.sizes.iter().all(|&n| n == first) {
                return first.to_string();
            }
        }
        let base_len = (1..=self.sizes.len())
            .find(|&len| {
                self.sizes.len().is_multiple_of(len)
                    && self.sizes.chunks(len).all(|c| c == &self.sizes[..len])
            })
            .unwrap_or(self.sizes.len());
        let base: Vec<String> = self.sizes[..base_len].iter().map(u64::to_string).collect();
        let repeats = self.sizes.len() / base_len;
        if repeats > 1 {
            format!("{}x{repeats}", base.join("-"))
        } else {
            base.join("-")
        }
    }

    /// Stable identifier for output rows.
    pub fn scenario_id(&self) -> String {
        format!(
            "k{}_n{}_d{}_t{}",
            self.k,
            self.n_pattern(),
            self.delta,
            self.tau2
        )
    }
}

/// Control-arm floor split: n_c = floor(f * n), treatment gets the rest.
fn split_arms(n: u64, f: f64) -> (u64, u64) {
    let n_c = (f * n as f64).floor() as u64;
    (n - n_c, n_c)
}

/// Method axis of an aggregated metric. `Ce` rows come from the
/// common-effect procedures run alongside the REM ones on tau2 = 0 cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MethodLabel {
    Mp,
    Ssc,
    Kdb,
    Ce,
}

impl std::fmt::Display for MethodLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MethodLabel::Mp => "mp",
            MethodLabel::Ssc => "ssc",
            MethodLabel::Kdb => "kdb",
            MethodLabel::Ce => "ce",
        })
    }
}

/// Quantity tracked per replication and aggregated over the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    BiasDelta,
    BiasTau2,
    BiasDelta2,
    BiasDelta2Trunc,
    CoverNaiveNormal,
    CoverNaiveT,
    CoverCorrectedNormal,
    CoverCorrectedT,
    CoverConditional,
    CoverProfile,
    RejectRate,
    RejectRateBootstrap,
    Failures,
}

impl Metric {
    fn is_proportion(self) -> bool {
        matches!(
            self,
            Metric::CoverNaiveNormal
                | Metric::CoverNaiveT
                | Metric::CoverCorrectedNormal
                | Metric::CoverCorrectedT
                | Metric::CoverConditional
                | Metric::CoverProfile
                | Metric::RejectRate
                | Metric::RejectRateBootstrap
        )
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::BiasDelta => "bias_delta",
            Metric::BiasTau2 => "bias_tau2",
            Metric::BiasDelta2 => "bias_delta2",
            Metric::BiasDelta2Trunc => "bias_delta2_trunc",
            Metric::CoverNaiveNormal => "cover_naive_normal",
            Metric::CoverNaiveT => "cover_naive_t",
            Metric::CoverCorrectedNormal => "cover_corrected_normal",
            Metric::CoverCorrectedT => "cover_corrected_t",
            Metric::CoverConditional => "cover_conditional",
            Metric::CoverProfile => "cover_profile",
            Metric::RejectRate => "reject_rate",
            Metric::RejectRateBootstrap => "reject_rate_bootstrap",
            Metric::Failures => "failures",
        })
    }
}

/// One aggregated metric of a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricCell {
    pub method: MethodLabel,
    pub metric: Metric,
    pub value: f64,
    pub mc_se: f64,
    /// Replications that contributed to this cell.
    pub n: u32,
}

/// Aggregated outcome of one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub cells: Vec<MetricCell>,
    pub elapsed: Duration,
}

/// One output row: scenario identity, method, metric, value, MC SE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub k: usize,
    pub n_pattern: String,
    pub f: f64,
    pub delta: f64,
    pub tau2: f64,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub mc_se: f64,
    pub reps: u32,
}

// splitmix64: full-avalanche mixer used to derive independent stream seeds
// from (base, index) pairs.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a base seed and an index.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ splitmix64(index.wrapping_add(0x6a09_e667_f3bc_c909)))
}

const DELTAS: [f64; 5] = [0.0, 0.2, 0.5, 1.0, 2.0];
const EQUAL_K: [usize; 6] = [5, 10, 20, 30, 50, 100];
const EQUAL_N: [u64; 4] = [40, 100, 250, 500];
const UNEQUAL_K: [usize; 3] = [5, 10, 30];
const UNEQUAL_PATTERNS: [[u64; 5]; 3] = [
    [24, 32, 36, 40, 168],
    [64, 72, 76, 80, 208],
    [124, 132, 136, 140, 268],
];

fn tau2_grid() -> impl Iterator<Item = f64> {
    (0..=10).map(|i| f64::from(i) / 10.0)
}

/// The full simulation design: equal-size cells crossed over K, n, delta,
/// and tau2, plus the unequal-size patterns repeated to length K.
pub fn default_grid(base_seed: u64, reps: u32, methods: &[MethodTag]) -> Vec<ScenarioConfig> {
    let mut grid = Vec::new();
    let mut idx = 0u64;
    let mut push =
        |k: usize, sizes: Vec<u64>, delta: f64, tau2: f64, grid: &mut Vec<ScenarioConfig>| {
            grid.push(ScenarioConfig {
                k,
                sizes,
                f: 0.5,
                delta,
                tau2,
                reps,
                seed: mix_seed(base_seed, idx),
                methods: methods.to_vec(),
                bootstrap_b: 0,
            });
            idx += 1;
        };
    for &k in &EQUAL_K {
        for &n in &EQUAL_N {
            for &delta in &DELTAS {
                for tau2 in tau2_grid() {
                    push(k, vec![n; k], delta, tau2, &mut grid);
                }
            }
        }
    }
    for &k in &UNEQUAL_K {
        for pattern in &UNEQUAL_PATTERNS {
            for &delta in &DELTAS {
                for tau2 in tau2_grid() {
                    let sizes: Vec<u64> = pattern.iter().copied().cycle().take(k).collect();
                    push(k, sizes, delta, tau2, &mut grid);
                }
            }
        }
    }
    grid
}

/// Small deterministic subset of the design for smoke runs and
/// end-to-end determinism checks.
pub fn smoke_grid(base_seed: u64, reps: u32, methods: &[MethodTag]) -> Vec<ScenarioConfig> {
    let mut grid = Vec::new();
    let mut idx = 0u64;
    for &(k, n, delta, tau2) in &[
        (5usize, 40u64, 0.0f64, 0.0f64),
        (5, 40, 0.5, 0.4),
        (10, 100, 0.0, 0.0),
        (10, 100, 0.5, 0.4),
        (10, 100, 1.0, 1.0),
    ] {
        grid.push(ScenarioConfig {
            k,
            sizes: vec![n; k],
            f: 0.5,
            delta,
            tau2,
            reps,
            seed: mix_seed(base_seed, idx),
            methods: methods.to_vec(),
            bootstrap_b: 0,
        });
        idx += 1;
    }
    grid.push(ScenarioConfig {
        k: 10,
        sizes: UNEQUAL_PATTERNS[0]
            .iter()
            .copied()
            .cycle()
            .take(10)
            .collect(),
        f: 0.5,
        delta: 0.2,
        tau2: 0.2,
        reps,
        seed: mix_seed(base_seed, idx),
        methods: methods.to_vec(),
        bootstrap_b: 0,
    });
    grid
}

/// Draws one meta-analysis sample: true effects from N(delta, tau2), then
/// each d from its scaled noncentral t law, derived into EffectRecords.
pub fn generate_meta_sample<R: rand::Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<Vec<EffectRecord>> {
    config.validate()?;
    let tau = config.tau2.sqrt();
    config
        .sizes
        .iter()
        .map(|&n| {
            let (n_t, n_c) = split_arms(n, config.f);
            let n_eff = (n_t as f64) * (n_c as f64) / (n as f64);
            let z: f64 = StandardNormal.sample(rng);
            let delta_i = config.delta + tau * z;
            let d =
                sample_scaled_noncentral_t(n - 2, n_eff.sqrt() * delta_i, 1.0 / n_eff.sqrt(), rng);
            derive_effect(StudySummary::Precomputed { d, n_t, n_c })
        })
        .collect()
}

// Record of one replication: metric contributions in a fixed construction
// order. Proportions contribute 0/1; failures contribute 1 per error.
type RepRecord = Vec<(MethodLabel, Metric, f64)>;

fn run_one_rep(config: &ScenarioConfig, rep: u32) -> Result<RepRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, u64::from(rep)));
    let effects = generate_meta_sample(config, &mut rng)?;
    let delta2_true = config.delta * config.delta;
    let mut out: RepRecord = Vec::with_capacity(16 * config.methods.len() + 4);

    for &tag in &config.methods {
        let label = tag.label();
        let fail = |out: &mut RepRecord| out.push((label, Metric::Failures, 1.0));
        let tau2 = match tag {
            MethodTag::Mp => tau2_mp(&effects),
            MethodTag::Ssc => tau2_ssc(&effects),
            MethodTag::Kdb => tau2_kdb(&effects),
        };
        let tau2 = match tau2 {
            Ok(t) => t,
            Err(_) => {
                fail(&mut out);
                continue;
            }
        };
        out.push((label, Metric::BiasTau2, tau2.value - config.tau2));

        match rem_point_estimate(&effects, &tau2) {
            Ok(est) => {
                out.push((label, Metric::BiasDelta2, est.delta2 - delta2_true));
                out.push((
                    label,
                    Metric::BiasDelta2Trunc,
                    est.delta2_truncated - delta2_true,
                ));
            }
            Err(_) => fail(&mut out),
        }

        match pool_delta(&effects, &tau2, Crit::Normal, ALPHA) {
            Ok((pooled, signed_ci)) => {
                out.push((label, Metric::BiasDelta, pooled.estimate - config.delta));
                let naive = naive_ci_delta2(&signed_ci);
                out.push((
                    label,
                    Metric::CoverNaiveNormal,
                    f64::from(naive.lower <= delta2_true && delta2_true <= naive.upper),
                ));
                match corrected_ci_delta2(&pooled, ALPHA, Crit::Normal) {
                    Ok(ci) => out.push((
                        label,
                        Metric::CoverCorrectedNormal,
                        f64::from(ci.lower <= delta2_true && delta2_true <= ci.upper),
                    )),
                    Err(_) => fail(&mut out),
                }
                match corrected_ci_delta2(&pooled, ALPHA, Crit::StudentT) {
                    Ok(ci) => out.push((
                        label,
                        Metric::CoverCorrectedT,
                        f64::from(ci.lower <= delta2_true && delta2_true <= ci.upper),
                    )),
                    Err(_) => fail(&mut out),
                }
            }
            Err(_) => fail(&mut out),
        }

        match pool_delta(&effects, &tau2, Crit::StudentT, ALPHA) {
            Ok((_, signed_ci)) => {
                let naive = naive_ci_delta2(&signed_ci);
                out.push((
                    label,
                    Metric::CoverNaiveT,
                    f64::from(naive.lower <= delta2_true && delta2_true <= naive.upper),
                ));
            }
            Err(_) => fail(&mut out),
        }

        match conditional_test(&effects, &tau2, Reference::Chi2K, 0, &mut rng) {
            Ok(res) => out.push((label, Metric::RejectRate, f64::from(res.reject_at_05))),
            Err(_) => fail(&mut out),
        }
        if config.bootstrap_b >= 1000 {
            match conditional_test(
                &effects,
                &tau2,
                Reference::BootstrapSumF,
                config.bootstrap_b,
                &mut rng,
            ) {
                Ok(res) => out.push((
                    label,
                    Metric::RejectRateBootstrap,
                    f64::from(res.reject_at_05),
                )),
                Err(_) => fail(&mut out),
            }
        }
        match conditional_profile_ci(&effects, &tau2, ALPHA) {
            Ok(ci) => out.push((
                label,
                Metric::CoverConditional,
                f64::from(ci.lower <= delta2_true && delta2_true <= ci.upper),
            )),
            Err(_) => fail(&mut out),
        }
    }

    // Common-effect procedures share the data on homogeneous cells.
    if config.tau2 == 0.0 {
        let ce_fail = |out: &mut RepRecord| out.push((MethodLabel::Ce, Metric::Failures, 1.0));
        match ce_delta2(&effects) {
            Ok(est) => out.push((MethodLabel::Ce, Metric::BiasDelta2, est - delta2_true)),
            Err(_) => ce_fail(&mut out),
        }
        match ce_test(&effects, Reference::Chi2K, 0, &mut rng) {
            Ok(res) => out.push((
                MethodLabel::Ce,
                Metric::RejectRate,
                f64::from(res.reject_at_05),
            )),
            Err(_) => ce_fail(&mut out),
        }
        if config.bootstrap_b >= 1000 {
            match ce_test(
                &effects,
                Reference::BootstrapSumF,
                config.bootstrap_b,
                &mut rng,
            ) {
                Ok(res) => out.push((
                    MethodLabel::Ce,
                    Metric::RejectRateBootstrap,
                    f64::from(res.reject_at_05),
                )),
                Err(_) => ce_fail(&mut out),
            }
        }
        match ce_profile_ci(&effects, ALPHA) {
            Ok(ci) => out.push((
                MethodLabel::Ce,
                Metric::CoverProfile,
                f64::from(ci.lower <= delta2_true && delta2_true <= ci.upper),
            )),
            Err(_) => ce_fail(&mut out),
        }
    }
    Ok(out)
}

#[derive(Default, Clone, Copy)]
struct Acc {
    sum: f64,
    sum_sq: f64,
    n: u32,
}

/// Runs all replications of a scenario and aggregates. Replications execute
/// on the ambient rayon pool; the fold runs in replication order, so the
/// result does not depend on the worker count.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult> {
    config.validate()?;
    let start = Instant::now();
    let records: Vec<Result<RepRecord>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_one_rep(config, rep))
        .collect();

    let mut accs: BTreeMap<(MethodLabel, Metric), Acc> = BTreeMap::new();
    for record in records {
        for (method, metric, value) in record? {
            let acc = accs.entry((method, metric)).or_default();
            acc.sum += value;
            acc.sum_sq += value * value;
            acc.n += 1;
        }
    }

    let cells = accs
        .into_iter()
        .map(|((method, metric), acc)| {
            let n = f64::from(acc.n);
            if metric == Metric::Failures {
                return MetricCell {
                    method,
                    metric,
                    value: acc.sum,
                    mc_se: 0.0,
                    n: config.reps,
                };
            }
            let mean = acc.sum / n;
            let mc_se = if metric.is_proportion() {
                (mean * (1.0 - mean) / n).sqrt()
            } else if acc.n > 1 {
                let var = (acc.sum_sq - acc.sum * acc.sum / n) / (n - 1.0);
                (var.max(0.0) / n).sqrt()
            } else {
                0.0
            };
            MetricCell {
                method,
                metric,
                value: mean,
                mc_se,
                n: acc.n,
            }
        })
        .collect();

    Ok(ScenarioResult {
        config: config.clone(),
        cells,
        elapsed: start.elapsed(),
    })
}

/// Flattens results into output rows, one per (scenario, method, metric),
/// preserving scenario order and the cells' stable internal order.
pub fn summarize(results: &[ScenarioResult]) -> Vec<SummaryRow> {
    results
        .iter()
        .flat_map(|res| {
            let config = &res.config;
            res.cells.iter().map(move |cell| SummaryRow {
                scenario_id: config.scenario_id(),
                k: config.k,
                n_pattern: config.n_pattern(),
                f: config.f,
                delta: config.delta,
                tau2: config.tau2,
                method: cell.method.to_string(),
                metric: cell.metric.to_string(),
                value: cell.value,
                mc_se: cell.mc_se,
                reps: cell.n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ScenarioConfig {
        ScenarioConfig {
            k: 5,
            sizes: vec![40; 5],
            f: 0.5,
            delta: 0.0,
            tau2: 0.0,
            reps: 50,
            seed: 7,
            methods: vec![MethodTag::Mp, MethodTag::Ssc],
            bootstrap_b: 0,
        }
    }

    #[test]
    fn grid_counts_match_the_design() {
        let grid = default_grid(1, 100, &[MethodTag::Mp]);
        let equal = grid
            .iter()
            .filter(|c| c.sizes.iter().all(|&n| n == c.sizes[0]))
            .count();
        assert_eq!(grid.len(), 1815);
        assert_eq!(equal, 1320);
        assert_eq!(grid.len() - equal, 495);
        // Every scenario gets a distinct seed and id, and validates.
        let mut seeds: Vec<u64> = grid.iter().map(|c| c.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 1815);
        for c in &grid {
            c.validate().unwrap();
        }
    }

    #[test]
    fn unequal_pattern_repeats_to_study_count() {
        let grid = default_grid(1, 100, &[MethodTag::Mp]);
        let cell = grid
            .iter()
            .find(|c| c.k == 10 && c.sizes[..5] == [24, 32, 36, 40, 168])
            .unwrap();
        assert_eq!(cell.sizes, vec![24, 32, 36, 40, 168, 24, 32, 36, 40, 168]);
        assert_eq!(cell.n_pattern(), "24-32-36-40-168x2");
        let six = grid
            .iter()
            .find(|c| c.k == 30 && c.sizes[..5] == [24, 32, 36, 40, 168])
            .unwrap();
        assert_eq!(six.sizes.len(), 30);
        assert_eq!(six.n_pattern(), "24-32-36-40-168x6");
        let equal = grid.iter().find(|c| c.sizes == vec![100; 20]).unwrap();
        assert_eq!(equal.n_pattern(), "100");
    }

    #[test]
    fn arm_split_puts_remainder_on_treatment() {
        assert_eq!(split_arms(40, 0.5), (20, 20));
        assert_eq!(split_arms(41, 0.5), (21, 20));
        assert_eq!(split_arms(24, 0.25), (18, 6));
    }

    #[test]
    fn homogeneous_cells_have_equal_true_effects() {
        let mut config = base_config();
        config.delta = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let effects = generate_meta_sample(&config, &mut rng).unwrap();
        assert_eq!(effects.len(), 5);
        // tau2 = 0: the noncentrality is delta exactly; the draws differ but
        // every record reflects n = 40.
        for e in &effects {
            assert_eq!(e.m, 38);
            assert_eq!(e.n_eff, 10.0);
        }
    }

    #[test]
    fn generated_squared_effects_center_on_tau2_plus_delta2() {
        let mut config = base_config();
        config.k = 10;
        config.sizes = vec![100; 10];
        config.delta = 0.5;
        config.tau2 = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5111_7e2d);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0.0;
        for _ in 0..10_000 {
            for e in generate_meta_sample(&config, &mut rng).unwrap() {
                sum += e.delta2_hat;
                sum_sq += e.delta2_hat * e.delta2_hat;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let var = (sum_sq - sum * sum / count) / (count - 1.0);
        let se = (var / count).sqrt();
        assert!(
            (mean - 0.55).abs() <= 3.0 * se,
            "mean {mean}, want 0.55, 3se {}",
            3.0 * se
        );
    }

    #[test]
    fn identical_seeds_reproduce_samples_bitwise() {
        let config = base_config();
        let mut rng1 = ChaCha8Rng::seed_from_u64(11);
        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        let a = generate_meta_sample(&config, &mut rng1).unwrap();
        let b = generate_meta_sample(&config, &mut rng2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.d.to_bits(), y.d.to_bits());
        }
    }

    #[test]
    fn scenario_results_are_identical_across_worker_counts() {
        let mut config = base_config();
        config.reps = 200;
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_scenario(&config))
            .unwrap();
        let eight = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| run_scenario(&config))
            .unwrap();
        assert_eq!(single.cells.len(), eight.cells.len());
        for (a, b) in single.cells.iter().zip(&eight.cells) {
            assert_eq!(a.method, b.method);
            assert_eq!(a.metric, b.metric);
            assert_eq!(
                a.value.to_bits(),
                b.value.to_bits(),
                "{:?}/{:?}",
                a.method,
                a.metric
            );
            assert_eq!(a.mc_se.to_bits(), b.mc_se.to_bits());
            assert_eq!(a.n, b.n);
        }
    }

    #[test]
    fn scenario_smoke_run_is_sane() {
        let result = run_scenario(&base_config()).unwrap();
        assert!(!result.cells.is_empty());
        let mut saw_ce = false;
        for cell in &result.cells {
            if cell.metric == Metric::Failures {
                assert_eq!(cell.value, 0.0, "failures for {:?}", cell.method);
                continue;
            }
            if cell.metric.is_proportion() {
                assert!((0.0..=1.0).contains(&cell.value), "{:?} out of range", cell);
            }
            assert!(cell.value.is_finite());
            assert!(cell.mc_se.is_finite());
            saw_ce |= cell.method == MethodLabel::Ce;
        }
        assert!(saw_ce, "tau2 = 0 cell must run common-effect procedures");

        let mut hetero = base_config();
        hetero.tau2 = 0.4;
        let result = run_scenario(&hetero).unwrap();
        assert!(
            result.cells.iter().all(|c| c.method != MethodLabel::Ce),
            "common-effect rows only belong to tau2 = 0 cells"
        );
    }

    #[test]
    fn reported_mc_se_matches_the_proportion_formula() {
        // A coverage proportion near 0.95 at 10,000 reps carries an MC SE
        // of about 0.00218.
        let se = (0.95f64 * 0.05 / 10_000.0).sqrt();
        assert!((se - 0.00218).abs() < 2e-5);
        let mut config = base_config();
        config.reps = 400;
        let result = run_scenario(&config).unwrap();
        for cell in &result.cells {
            if cell.metric.is_proportion() {
                let want = (cell.value * (1.0 - cell.value) / f64::from(cell.n)).sqrt();
                assert!((cell.mc_se - want).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn naive_t_interval_with_size_weights_covers_near_nominal() {
        let config = ScenarioConfig {
            k: 30,
            sizes: vec![100; 30],
            f: 0.5,
            delta: 0.0,
            tau2: 0.4,
            reps: 2000,
            seed: 0x5a5c_c0fe,
            methods: vec![MethodTag::Ssc],
            bootstrap_b: 0,
        };
        let result = run_scenario(&config).unwrap();
        let cover = result
            .cells
            .iter()
            .find(|c| c.method == MethodLabel::Ssc && c.metric == Metric::CoverNaiveT)
            .unwrap();
        assert!(
            (0.935..=0.965).contains(&cover.value),
            "naive SSC_t coverage {} outside [0.935, 0.965]",
            cover.value
        );
    }

    #[test]
    fn conditional_rejection_is_rare_without_heterogeneity() {
        let config = ScenarioConfig {
            k: 20,
            sizes: vec![100; 20],
            f: 0.5,
            delta: 0.0,
            tau2: 0.0,
            reps: 2000,
            seed: 0x77e1_0b2c,
            methods: vec![MethodTag::Mp],
            bootstrap_b: 0,
        };
        let result = run_scenario(&config).unwrap();
        let level = result
            .cells
            .iter()
            .find(|c| c.method == MethodLabel::Mp && c.metric == Metric::RejectRate)
            .unwrap();
        assert!(level.value < 0.01, "conditional level {}", level.value);
    }

    #[test]
    fn summarize_flattens_with_stable_ordering() {
        assert!(summarize(&[]).is_empty());
        let mut config = base_config();
        config.reps = 30;
        let result = run_scenario(&config).unwrap();
        let rows = summarize(std::slice::from_ref(&result));
        assert_eq!(rows.len(), result.cells.len());
        assert_eq!(rows[0].scenario_id, "k5_n40_d0_t0");
        assert_eq!(rows[0].n_pattern, "40");
        // Order matches the cells' BTreeMap order: methods ascending, then
        // metrics ascending.
        for (row, cell) in rows.iter().zip(&result.cells) {
            assert_eq!(row.method, cell.method.to_string());
            assert_eq!(row.metric, cell.metric.to_string());
            assert_eq!(row.value, cell.value);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = base_config();
        config.sizes = vec![40; 4];
        assert!(config.validate().is_err());
        let mut config = base_config();
        config.f = 0.0;
        assert!(config.validate().is_err());
        let mut config = base_config();
        config.f = 0.04;
        assert!(
            config.validate().is_err(),
            "an arm below 2 must be rejected"
        );
        let mut config = base_config();
        config.tau2 = -0.1;
        assert!(config.validate().is_err());
        let mut config = base_config();
        config.methods.clear();
        assert!(config.validate().is_err());
        let mut config = base_config();
        config.reps = 0;
        assert!(config.validate().is_err());
    }
}
