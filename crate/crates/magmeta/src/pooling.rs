//! Heterogeneity estimation and pooled inference for the signed effect:
//! generalized Q, the Mandel-Paule and effective-sample-size moment
//! estimators of tau^2, a plugin slot for the corrected-moment estimator,
//! and normal/t confidence intervals for the pooled mean.

use std::sync::RwLock;

use crate::dists::{normal_quantile, t_quantile};
use crate::effects::{EffectRecord, IntervalEstimate};
use crate::{Error, Result};

/// Which moment equation produced a tau^2 estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tau2Method {
    /// Mandel-Paule: Q with inverse-variance weights equated to K - 1.
    Mp,
    /// Corrected-moment estimator, dispatched through the plugin slot.
    Kdb,
    /// Moment equation with fixed effective-sample-size weights.
    Ssc,
}

/// A between-study variance estimate. `truncated` records that the moment
/// solution was negative and was clamped to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tau2Estimate {
    pub value: f64,
    pub method: Tau2Method,
    pub truncated: bool,
}

/// Reference distribution for the pooled-mean critical value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crit {
    Normal,
    /// Student t with K - 1 degrees of freedom.
    StudentT,
}

/// Weighted mean of the per-study g values with its standard error and the
/// weights that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledDelta {
    pub estimate: f64,
    pub std_err: f64,
    pub weights: Vec<f64>,
    pub method: &'static str,
}

/// Correction hook for the plugin-based tau^2 estimator: supplies the
/// expected generalized Q at inverse-variance weights, replacing the
/// large-sample value K - 1.
pub trait KdbCorrection: Send + Sync {
    fn expected_q(&self, effects: &[EffectRecord], tau2: f64) -> f64;
}

static KDB_PLUGIN: RwLock<Option<Box<dyn KdbCorrection>>> = RwLock::new(None);

/// Installs the corrected-moment implementation used by [`tau2_kdb`].
pub fn register_kdb_plugin<C: KdbCorrection + 'static>(plugin: C) {
    *KDB_PLUGIN.write().unwrap() = Some(Box::new(plugin));
}

/// Removes any installed corrected-moment implementation.
pub fn clear_kdb_plugin() {
    *KDB_PLUGIN.write().unwrap() = None;
}

fn validate_effects(effects: &[EffectRecord]) -> Result<()> {
    for (i, e) in effects.iter().enumerate() {
        if !e.g.is_finite() {
            return Err(Error::domain(format!(
                "study {i}: g must be finite, got {}",
                e.g
            )));
        }
        if !(e.var_g > 0.0) || !e.var_g.is_finite() {
            return Err(Error::domain(format!(
                "study {i}: var_g must be positive and finite, got {}",
                e.var_g
            )));
        }
        if !(e.n_eff > 0.0) || !e.n_eff.is_finite() {
            return Err(Error::domain(format!(
                "study {i}: n_eff must be positive and finite, got {}",
                e.n_eff
            )));
        }
    }
    Ok(())
}

fn require_two(effects: &[EffectRecord]) -> Result<()> {
    if effects.len() < 2 {
        return Err(Error::domain(format!(
            "heterogeneity estimation needs at least 2 studies, got {}",
            effects.len()
        )));
    }
    validate_effects(effects)
}

/// Weighted sum of squared deviations of g from the weighted mean. The
/// weights may be arbitrary positive constants.
pub fn generalized_q(effects: &[EffectRecord], weights: &[f64]) -> Result<f64> {
    if effects.len() != weights.len() {
        return Err(Error::domain(format!(
            "{} studies but {} weights",
            effects.len(),
            weights.len()
        )));
    }
    require_two(effects)?;
    for (i, &w) in weights.iter().enumerate() {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::domain(format!(
                "weight {i} must be positive and finite, got {w}"
            )));
        }
    }
    let w_sum: f64 = weights.iter().sum();
    let mean = effects
        .iter()
        .zip(weights)
        .map(|(e, w)| w * e.g)
        .sum::<f64>()
        / w_sum;
    Ok(effects
        .iter()
        .zip(weights)
        .map(|(e, w)| w * (e.g - mean) * (e.g - mean))
        .sum())
}

// Q at inverse-variance weights 1/(var_g + tau2); strictly decreasing in
// tau2 whenever the g values are not all equal.
fn q_inverse_variance(effects: &[EffectRecord], tau2: f64) -> f64 {
    let weights: Vec<f64> = effects.iter().map(|e| 1.0 / (e.var_g + tau2)).collect();
    let w_sum: f64 = weights.iter().sum();
    let mean = effects
        .iter()
        .zip(&weights)
        .map(|(e, w)| w * e.g)
        .sum::<f64>()
        / w_sum;
    effects
        .iter()
        .zip(&weights)
        .map(|(e, w)| w * (e.g - mean) * (e.g - mean))
        .sum()
}

// Solves q_inverse_variance(tau2) = target(tau2) for the unique root, given
// that the difference is positive at zero. Bisection; tolerance 1e-10 in Q
// units.
fn solve_q_moment(
    effects: &[EffectRecord],
    target: &dyn Fn(f64) -> f64,
    what: &str,
) -> Result<f64> {
    let g_bar = effects.iter().map(|e| e.g).sum::<f64>() / effects.len() as f64;
    let mut hi = effects
        .iter()
        .map(|e| (e.g - g_bar) * (e.g - g_bar))
        .fold(0.0f64, f64::max)
        .max(1e-8);
    let mut doublings = 0;
    while q_inverse_variance(effects, hi) - target(hi) > 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::convergence(format!(
                "{what}: moment equation has no finite root"
            )));
        }
    }
    let mut lo = 0.0f64;
    let mut mid = 0.5 * hi;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let diff = q_inverse_variance(effects, mid) - target(mid);
        if diff.abs() <= 1e-10 {
            break;
        }
        if diff > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + hi) {
            mid = 0.5 * (lo + hi);
            break;
        }
    }
    Ok(mid)
}

/// Mandel-Paule estimate: the tau^2 at which the inverse-variance Q equals
/// its large-sample expectation K - 1. Clamped to zero (with the truncation
/// flag set) when even tau^2 = 0 leaves Q below that.
pub fn tau2_mp(effects: &[EffectRecord]) -> Result<Tau2Estimate> {
    require_two(effects)?;
    let k1 = (effects.len() - 1) as f64;
    if q_inverse_variance(effects, 0.0) < k1 {
        return Ok(Tau2Estimate {
            value: 0.0,
            method: Tau2Method::Mp,
            truncated: true,
        });
    }
    let value = solve_q_moment(effects, &|_| k1, "tau2_mp")?;
    Ok(Tau2Estimate {
        value,
        method: Tau2Method::Mp,
        truncated: false,
    })
}

/// Moment estimate with fixed effective-sample-size weights: the generalized
/// Q at w_i = n_eff_i is equated to its expectation, which is linear in
/// tau^2, so the solution is closed-form. Negative solutions truncate to 0.
pub fn tau2_ssc(effects: &[EffectRecord]) -> Result<Tau2Estimate> {
    require_two(effects)?;
    let weights: Vec<f64> = effects.iter().map(|e| e.n_eff).collect();
    let q = generalized_q(effects, &weights)?;
    let w_sum: f64 = weights.iter().sum();
    let w_v: f64 = effects.iter().map(|e| e.n_eff * e.var_g).sum();
    let w2_v: f64 = effects.iter().map(|e| e.n_eff * e.n_eff * e.var_g).sum();
    let w2: f64 = weights.iter().map(|w| w * w).sum();
    let raw = (q - (w_v - w2_v / w_sum)) / (w_sum - w2 / w_sum);
    Ok(Tau2Estimate {
        value: raw.max(0.0),
        method: Tau2Method::Ssc,
        truncated: raw < 0.0,
    })
}

/// Corrected-moment estimate. Dispatches to the registered
/// [`KdbCorrection`]; with none installed, substitutes the Mandel-Paule
/// value (tagged as this method) and logs the substitution.
pub fn tau2_kdb(effects: &[EffectRecord]) -> Result<Tau2Estimate> {
    require_two(effects)?;
    let guard = KDB_PLUGIN.read().unwrap();
    match guard.as_ref() {
        Some(plugin) => {
            if q_inverse_variance(effects, 0.0) < plugin.expected_q(effects, 0.0) {
                return Ok(Tau2Estimate {
                    value: 0.0,
                    method: Tau2Method::Kdb,
                    truncated: true,
                });
            }
            let value = solve_q_moment(effects, &|t| plugin.expected_q(effects, t), "tau2_kdb")?;
            Ok(Tau2Estimate {
                value,
                method: Tau2Method::Kdb,
                truncated: false,
            })
        }
        None => {
            log::warn!(
                "no corrected-moment plugin registered; substituting the Mandel-Paule estimate"
            );
            let mp = tau2_mp(effects)?;
            Ok(Tau2Estimate {
                value: mp.value,
                method: Tau2Method::Kdb,
                truncated: mp.truncated,
            })
        }
    }
}

/// Pools the per-study g values into a single estimate of the signed effect
/// with a two-sided confidence interval.
///
/// The weighting follows the tau^2 method: fixed n_eff weights for the
/// effective-sample-size estimator (with the sandwich standard error, since
/// those weights are constants), inverse-variance weights 1/(var_g + tau^2)
/// otherwise (standard error 1/sqrt(sum of weights)).
pub fn pool_delta(
    effects: &[EffectRecord],
    tau2: &Tau2Estimate,
    crit: Crit,
    alpha: f64,
) -> Result<(PooledDelta, IntervalEstimate)> {
    if effects.is_empty() {
        return Err(Error::domain("no studies to pool"));
    }
    validate_effects(effects)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "alpha must lie strictly inside (0, 1), got {alpha}"
        )));
    }
    if !(tau2.value >= 0.0) || !tau2.value.is_finite() {
        return Err(Error::domain(format!(
            "tau2 must be nonnegative and finite, got {}",
            tau2.value
        )));
    }
    let k = effects.len();
    let (weights, method): (Vec<f64>, &'static str) = match tau2.method {
        Tau2Method::Ssc => (effects.iter().map(|e| e.n_eff).collect(), "ssc"),
        Tau2Method::Mp => (
            effects
                .iter()
                .map(|e| 1.0 / (e.var_g + tau2.value))
                .collect(),
            "mp",
        ),
        Tau2Method::Kdb => (
            effects
                .iter()
                .map(|e| 1.0 / (e.var_g + tau2.value))
                .collect(),
            "kdb",
        ),
    };
    let w_sum: f64 = weights.iter().sum();
    if !(w_sum > 0.0) || !w_sum.is_finite() {
        return Err(Error::domain(format!("degenerate weights: sum {w_sum}")));
    }
    let estimate = effects
        .iter()
        .zip(&weights)
        .map(|(e, w)| w * e.g)
        .sum::<f64>()
        / w_sum;
    let var = match tau2.method {
        Tau2Method::Ssc => {
            effects
                .iter()
                .zip(&weights)
                .map(|(e, w)| w * w * (e.var_g + tau2.value))
                .sum::<f64>()
                / (w_sum * w_sum)
        }
        _ => 1.0 / w_sum,
    };
    let std_err = var.sqrt();
    let (c, crit_tag) = match crit {
        Crit::Normal => (normal_quantile(1.0 - alpha / 2.0)?, "normal"),
        Crit::StudentT => {
            if k < 2 {
                return Err(Error::domain("t critical values need at least 2 studies"));
            }
            (t_quantile(1.0 - alpha / 2.0, (k - 1) as u64)?, "t")
        }
    };
    let interval = IntervalEstimate {
        lower: estimate - c * std_err,
        upper: estimate + c * std_err,
        level: 1.0 - alpha,
        method: crit_tag,
    };
    Ok((
        PooledDelta {
            estimate,
            std_err,
            weights,
            method,
        },
        interval,
    ))
}
