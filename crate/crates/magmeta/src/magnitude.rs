//! Inference for the squared effect: the common-effect estimator, test, and
//! chi-square-profile interval; random-effects point estimates; naive and
//! corrected squared intervals built from signed intervals; the conditional
//! weighted-sum test and its profile interval; and the parametric bootstrap
//! of a sum of F variates.

use rand::Rng;

use crate::dists::{
    chi2_cdf, chi2_sf, normal_cdf, normal_quantile, sample_central_f, solve_chi2_ncp, t_quantile,
};
use crate::effects::{EffectRecord, IntervalEstimate};
use crate::pooling::{Crit, PooledDelta, Tau2Estimate, Tau2Method};
use crate::{Error, Result};

/// Random-effects point estimate of the squared effect, together with its
/// truncated-at-zero companion and the tau^2 method that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnitudeEstimate {
    /// May be negative: the tau^2 estimate is subtracted from an unbiased
    /// but sign-unconstrained estimate.
    pub delta2: f64,
    pub delta2_truncated: f64,
    pub tau2_method: Tau2Method,
}

/// Reference distribution for a magnitude test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// Central chi-square with K degrees of freedom.
    Chi2K,
    /// Parametric bootstrap of the sum of central F(1, m_i) variates.
    BootstrapSumF,
}

impl std::str::FromStr for Reference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chi2_k" => Ok(Reference::Chi2K),
            "bootstrap_sum_f" => Ok(Reference::BootstrapSumF),
            other => Err(Error::domain(format!(
                "unknown reference tag {other:?}; expected \"chi2_k\" or \"bootstrap_sum_f\""
            ))),
        }
    }
}

impl std::fmt::Display for Reference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Reference::Chi2K => "chi2_k",
            Reference::BootstrapSumF => "bootstrap_sum_f",
        })
    }
}

/// Outcome of a test for a zero squared effect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reference: Reference,
    pub reject_at_05: bool,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64, reference: Reference) -> Self {
        TestResult {
            statistic,
            p_value,
            reference,
            reject_at_05: p_value < 0.05,
        }
    }
}

/// Sorted draws from a simulated null distribution. Tail probabilities use
/// the add-one rule, so they are never exactly zero.
#[derive(Debug, Clone)]
pub struct EmpiricalDist {
    draws: Vec<f64>,
}

impl EmpiricalDist {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    pub fn mean(&self) -> f64 {
        self.draws.iter().sum::<f64>() / self.draws.len() as f64
    }

    /// (1 + #{draws >= x}) / (B + 1).
    pub fn tail_probability(&self, x: f64) -> f64 {
        let below = self.draws.partition_point(|&t| t < x);
        let ge = self.draws.len() - below;
        (1.0 + ge as f64) / (self.draws.len() as f64 + 1.0)
    }

    /// Order-statistic quantile: the smallest draw with at least a fraction
    /// q of the sample at or below it.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::domain(format!("quantile level {q} outside [0, 1]")));
        }
        let b = self.draws.len();
        let rank = ((q * b as f64).ceil() as usize).clamp(1, b);
        Ok(self.draws[rank - 1])
    }
}

fn validate_studies(effects: &[EffectRecord]) -> Result<()> {
    if effects.is_empty() {
        return Err(Error::domain("at least one study is required"));
    }
    for (i, e) in effects.iter().enumerate() {
        if !e.d.is_finite() {
            return Err(Error::domain(format!(
                "study {i}: d must be finite, got {}",
                e.d
            )));
        }
        if !(e.n_eff > 0.0) || !e.n_eff.is_finite() {
            return Err(Error::domain(format!(
                "study {i}: n_eff must be positive and finite, got {}",
                e.n_eff
            )));
        }
        if e.m < 1 {
            return Err(Error::domain(format!("study {i}: m must be at least 1")));
        }
    }
    Ok(())
}

/// Common-effect estimate of the squared effect: the n_eff-weighted average
/// of the per-study unbiased estimates, written in one pass.
pub fn ce_delta2(effects: &[EffectRecord]) -> Result<f64> {
    validate_studies(effects)?;
    let s: f64 = effects.iter().map(|e| e.n_eff).sum();
    let weighted: f64 = effects
        .iter()
        .map(|e| {
            let mf = e.m as f64;
            (mf - 2.0) / mf * e.n_eff * e.d * e.d
        })
        .sum();
    Ok((weighted - effects.len() as f64) / s)
}

/// Test of a zero common squared effect from the statistic sum(n_eff d^2),
/// referred to the central chi-square with K degrees of freedom or to a
/// bootstrap of the exact sum-of-F null.
pub fn ce_test<R: Rng + ?Sized>(
    effects: &[EffectRecord],
    reference: Reference,
    bootstrap_b: u64,
    rng: &mut R,
) -> Result<TestResult> {
    validate_studies(effects)?;
    let stat: f64 = effects.iter().map(|e| e.n_eff * e.d * e.d).sum();
    let p = match reference {
        Reference::Chi2K => chi2_sf(stat, effects.len() as u64)?,
        Reference::BootstrapSumF => {
            let dfs: Vec<u64> = effects.iter().map(|e| e.m).collect();
            bootstrap_null(&dfs, bootstrap_b, rng)?.tail_probability(stat)
        }
    };
    Ok(TestResult::new(stat, p, reference))
}

fn bootstrap_null<R: Rng + ?Sized>(dfs: &[u64], b: u64, rng: &mut R) -> Result<EmpiricalDist> {
    if b < 1000 {
        return Err(Error::domain(format!(
            "bootstrap reference needs at least 1000 draws, got {b}"
        )));
    }
    bootstrap_sum_f(dfs, b, rng)
}

/// Profile confidence interval for the common squared effect, from the
/// scaled noncentral chi-square limit of the statistic sum(n_eff d^2).
///
/// Limits whose defining tail equation has no nonnegative solution are set
/// to zero, mirroring the single-study construction.
pub fn ce_profile_ci(effects: &[EffectRecord], alpha: f64) -> Result<IntervalEstimate> {
    validate_studies(effects)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "alpha must lie strictly inside (0, 1), got {alpha}"
        )));
    }
    let k = effects.len() as u64;
    let s: f64 = effects.iter().map(|e| e.n_eff).sum();
    let stat: f64 = effects.iter().map(|e| e.n_eff * e.d * e.d).sum();
    let (lower, upper) = profile_limits_chi2(stat, k, alpha)?;
    Ok(IntervalEstimate {
        lower: lower / s,
        upper: upper / s,
        level: 1.0 - alpha,
        method: "chi2_profile",
    })
}

// Shared boundary logic: noncentrality limits for an observed statistic
// under the noncentral chi-square with k degrees of freedom.
fn profile_limits_chi2(stat: f64, k: u64, alpha: f64) -> Result<(f64, f64)> {
    let one_minus_p = chi2_cdf(stat, k)?;
    let half = alpha / 2.0;
    let upper = if one_minus_p < half {
        0.0
    } else {
        solve_chi2_ncp(stat, k, half)?
    };
    let lower = if one_minus_p < 1.0 - half {
        0.0
    } else {
        solve_chi2_ncp(stat, k, 1.0 - half)?
    };
    Ok((lower, upper))
}

/// Random-effects point estimate: the common-effect estimate of the marginal
/// expectation minus the supplied tau^2, plus its truncated-at-zero version.
pub fn rem_point_estimate(
    effects: &[EffectRecord],
    tau2: &Tau2Estimate,
) -> Result<MagnitudeEstimate> {
    if !(tau2.value >= 0.0) || !tau2.value.is_finite() {
        return Err(Error::domain(format!(
            "tau2 must be nonnegative and finite, got {}",
            tau2.value
        )));
    }
    let delta2 = ce_delta2(effects)? - tau2.value;
    Ok(MagnitudeEstimate {
        delta2,
        delta2_truncated: delta2.max(0.0),
        tau2_method: tau2.method,
    })
}

/// Squares a signed interval for the effect into an interval for the squared
/// effect: same-sign limits square directly (in order), while an interval
/// straddling zero maps to [0, max of the squared limits].
pub fn naive_ci_delta2(signed_ci: &IntervalEstimate) -> IntervalEstimate {
    let (l, u) = (signed_ci.lower, signed_ci.upper);
    assert!(l <= u, "signed interval out of order: ({l}, {u})");
    let (lower, upper) = if l >= 0.0 {
        (l * l, u * u)
    } else if u <= 0.0 {
        (u * u, l * l)
    } else {
        (0.0, (l * l).max(u * u))
    };
    IntervalEstimate {
        lower,
        upper,
        level: signed_ci.level,
        method: "naive",
    }
}

fn check_coverage_args(alpha: f64, beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < alpha && alpha < 1.0) {
        return Err(Error::domain(format!(
            "need 0 < beta < alpha < 1, got alpha={alpha}, beta={beta}"
        )));
    }
    Ok(())
}

// Standard normal quantile of the upper tail, computed from the lower tail
// by symmetry so that tiny tails keep full precision.
fn c_upper(tail: f64) -> Result<f64> {
    Ok(-normal_quantile(tail)?)
}

/// Coverage that a squared same-sign interval gains from the mirror image of
/// the signed interval: G(c_{1-beta} - 2r) - G(c_{alpha-beta} - 2r) with
/// r = delta_over_se and G the standard normal CDF.
pub fn extra_coverage_same_sign(delta_over_se: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_coverage_args(alpha, beta)?;
    let r2 = 2.0 * delta_over_se;
    let hi = normal_cdf(c_upper(beta)? - r2);
    let lo = normal_cdf(normal_quantile(alpha - beta)? - r2);
    Ok(hi - lo)
}

/// Mirror-coverage bound for the straddling case:
/// min(G(c_{alpha-beta}), G(c_{1-beta} - 2r)).
pub fn extra_coverage_straddling(delta_over_se: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_coverage_args(alpha, beta)?;
    let a = normal_cdf(normal_quantile(alpha - beta)?);
    let b = normal_cdf(c_upper(beta)? - 2.0 * delta_over_se);
    Ok(a.min(b))
}

fn crit_quantile(crit: Crit, df: u64, p: f64) -> Result<f64> {
    match crit {
        Crit::Normal => normal_quantile(p),
        Crit::StudentT => t_quantile(p, df),
    }
}

// Tail split for the straddling corrected interval: the beta in (0, alpha)
// at which c_{1-beta} + c_{alpha-beta} equals `target` (= 2 * estimate/se).
// The left side is strictly decreasing in beta, from +inf to -inf, so a root
// always exists; bisection runs on ln(beta) because the root can sit many
// orders of magnitude below alpha.
fn solve_tail_split(target: f64, alpha: f64, crit: Crit, df: u64) -> Result<f64> {
    let resid = |beta: f64| -> Result<f64> {
        let c_hi = -crit_quantile(crit, df, beta)?;
        let c_lo = crit_quantile(crit, df, alpha - beta)?;
        Ok(c_hi + c_lo - target)
    };
    let mut u_lo = 1e-300f64.ln();
    let mut u_hi = (alpha * (1.0 - 1e-9)).ln();
    if resid(u_lo.exp())? <= 0.0 {
        return Ok(u_lo.exp());
    }
    if resid(u_hi.exp())? >= 0.0 {
        return Ok(u_hi.exp());
    }
    let mut u_mid = 0.5 * (u_lo + u_hi);
    for _ in 0..300 {
        u_mid = 0.5 * (u_lo + u_hi);
        let r = resid(u_mid.exp())?;
        if r.abs() <= 1e-12 {
            break;
        }
        if r > 0.0 {
            u_lo = u_mid;
        } else {
            u_hi = u_mid;
        }
        if u_hi - u_lo <= 1e-14 {
            u_mid = 0.5 * (u_lo + u_hi);
            break;
        }
    }
    Ok(u_mid.exp())
}

/// Corrected confidence interval for the squared effect, built from the
/// pooled signed estimate.
///
/// When the symmetric signed interval straddles zero, the tail split is
/// re-solved so that the signed limits are exact mirror images, and the
/// interval [0, L^2] follows. When both limits share a sign, the nominal
/// error rate is inflated until the realized rate, net of the mirror
/// coverage picked up by squaring, matches the requested one.
pub fn corrected_ci_delta2(
    pooled: &PooledDelta,
    alpha: f64,
    crit: Crit,
) -> Result<IntervalEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "alpha must lie strictly inside (0, 1), got {alpha}"
        )));
    }
    let v = pooled.std_err;
    if !(v > 0.0) || !v.is_finite() || !pooled.estimate.is_finite() {
        return Err(Error::domain(
            "pooled estimate and standard error must be finite (std_err positive)",
        ));
    }
    let k = pooled.weights.len() as u64;
    if matches!(crit, Crit::StudentT) && k < 2 {
        return Err(Error::domain("t critical values need at least 2 studies"));
    }
    let df = k.saturating_sub(1).max(1);
    let d_hat = pooled.estimate;
    let level = 1.0 - alpha;
    let c_sym = -crit_quantile(crit, df, alpha / 2.0)?;
    let (l, u) = (d_hat - c_sym * v, d_hat + c_sym * v);
    if l < 0.0 && u > 0.0 {
        let beta = solve_tail_split(2.0 * d_hat / v, alpha, crit, df)?;
        let c_hi = -crit_quantile(crit, df, beta)?;
        let limit = d_hat - c_hi * v;
        return Ok(IntervalEstimate {
            lower: 0.0,
            upper: limit * limit,
            level,
            method: "corrected",
        });
    }
    // Same-sign case. The mirror term is evaluated on the positive side;
    // the construction is symmetric in the sign of the estimate.
    let r = d_hat.abs() / v;
    let gamma = alpha;
    let mut lo_a = gamma;
    let mut hi_a = (4.0 * gamma).min(0.5 * (1.0 + gamma));
    let excess =
        |a: f64| -> Result<f64> { Ok(a - extra_coverage_same_sign(r, a, a / 2.0)? - gamma) };
    // excess is strictly increasing in a; the root gives the inflated rate.
    let mut a_mid = gamma;
    if excess(hi_a)? < 0.0 {
        a_mid = hi_a;
    } else {
        for _ in 0..200 {
            a_mid = 0.5 * (lo_a + hi_a);
            let h = excess(a_mid)?;
            if h.abs() <= 1e-12 {
                break;
            }
            if h < 0.0 {
                lo_a = a_mid;
            } else {
                hi_a = a_mid;
            }
            if hi_a - lo_a <= 1e-15 {
                a_mid = 0.5 * (lo_a + hi_a);
                break;
            }
        }
    }
    let c_adj = -crit_quantile(crit, df, a_mid / 2.0)?;
    let (l2, u2) = (d_hat - c_adj * v, d_hat + c_adj * v);
    let squared = naive_ci_delta2(&IntervalEstimate {
        lower: l2,
        upper: u2,
        level,
        method: "corrected",
    });
    Ok(IntervalEstimate {
        method: "corrected",
        ..squared
    })
}

/// Heterogeneity-adjusted magnitude statistic:
/// sum of n_eff d^2 / (1 + n_eff tau2). At tau2 = 0 this is the
/// common-effect test statistic.
pub fn lambda_statistic(effects: &[EffectRecord], tau2_value: f64) -> Result<f64> {
    validate_studies(effects)?;
    if !(tau2_value >= 0.0) || !tau2_value.is_finite() {
        return Err(Error::domain(format!(
            "tau2 must be nonnegative and finite, got {tau2_value}"
        )));
    }
    Ok(effects
        .iter()
        .map(|e| e.n_eff * e.d * e.d / (1.0 + e.n_eff * tau2_value))
        .sum())
}

/// Conditional (given tau^2) test for a zero squared effect, comparing the
/// adjusted statistic against the chi-square reference or a bootstrap of the
/// central sum-of-F null.
pub fn conditional_test<R: Rng + ?Sized>(
    effects: &[EffectRecord],
    tau2: &Tau2Estimate,
    reference: Reference,
    bootstrap_b: u64,
    rng: &mut R,
) -> Result<TestResult> {
    let stat = lambda_statistic(effects, tau2.value)?;
    let p = match reference {
        Reference::Chi2K => chi2_sf(stat, effects.len() as u64)?,
        Reference::BootstrapSumF => {
            // Under the null of a zero squared effect, each summand of the
            // statistic is a central F(1, m_i) variate whatever tau2 is, so
            // the null draws need no noncentral mixing.
            let dfs: Vec<u64> = effects.iter().map(|e| e.m).collect();
            bootstrap_null(&dfs, bootstrap_b, rng)?.tail_probability(stat)
        }
    };
    Ok(TestResult::new(stat, p, reference))
}

/// Profile interval for the squared effect conditional on tau^2: the
/// adjusted statistic has a noncentral chi-square(K) reference with
/// noncentrality delta^2 * sum of n_eff/(1 + n_eff tau2), inverted at the
/// two tail levels with the usual zero boundary rules.
pub fn conditional_profile_ci(
    effects: &[EffectRecord],
    tau2: &Tau2Estimate,
    alpha: f64,
) -> Result<IntervalEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "alpha must lie strictly inside (0, 1), got {alpha}"
        )));
    }
    let stat = lambda_statistic(effects, tau2.value)?;
    let k = effects.len() as u64;
    let s: f64 = effects
        .iter()
        .map(|e| e.n_eff / (1.0 + e.n_eff * tau2.value))
        .sum();
    let (lower, upper) = profile_limits_chi2(stat, k, alpha)?;
    Ok(IntervalEstimate {
        lower: lower / s,
        upper: upper / s,
        level: 1.0 - alpha,
        method: "conditional_profile",
    })
}

/// Simulates b independent draws of the sum of central F(1, m_i) over the
/// given degrees of freedom and returns them as a queryable distribution.
pub fn bootstrap_sum_f<R: Rng + ?Sized>(dfs: &[u64], b: u64, rng: &mut R) -> Result<EmpiricalDist> {
    if dfs.is_empty() {
        return Err(Error::domain(
            "at least one degrees-of-freedom entry is required",
        ));
    }
    if b < 1 {
        return Err(Error::domain("at least one bootstrap draw is required"));
    }
    for (i, &m) in dfs.iter().enumerate() {
        if m < 1 {
            return Err(Error::domain(format!("dfs[{i}] must be at least 1")));
        }
    }
    let mut draws = Vec::with_capacity(b as usize);
    for _ in 0..b {
        let mut sum = 0.0;
        for &m in dfs {
            sum += sample_central_f(1, m, rng);
        }
        draws.push(sum);
    }
    draws.sort_unstable_by(f64::total_cmp);
    Ok(EmpiricalDist { draws })
}
