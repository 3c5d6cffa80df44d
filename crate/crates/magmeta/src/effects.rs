//! Per-study effect measures for two-arm comparisons: Cohen's d, Hedges's g,
//! an unbiased estimator of the squared standardized mean difference with its
//! variance, and the exact F-profile confidence interval for a single study.

use crate::dists::{f_cdf, hedges_j, solve_ncp};
use crate::{Error, Result};

/// Input form for one study: either raw arm summaries or a precomputed d.
///
/// Both arms need at least two observations so the pooled variance and the
/// downstream degrees of freedom are defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StudySummary {
    Raw {
        n_t: u64,
        n_c: u64,
        mean_t: f64,
        mean_c: f64,
        sd_t: f64,
        sd_c: f64,
    },
    Precomputed {
        d: f64,
        n_t: u64,
        n_c: u64,
    },
}

/// Normalized per-study quantities. `var_delta2_hat` is absent when m <= 4,
/// where the unbiased variance estimator does not exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectRecord {
    pub d: f64,
    pub g: f64,
    /// Degrees of freedom, n_t + n_c - 2.
    pub m: u64,
    /// Effective sample size n_t * n_c / n.
    pub n_eff: f64,
    /// Unbiased estimate of the squared effect; may be negative.
    pub delta2_hat: f64,
    /// Unbiased estimate of the variance of `delta2_hat`; may be negative.
    pub var_delta2_hat: Option<f64>,
    /// Large-sample variance of g, used for inverse-variance weighting.
    pub var_g: f64,
}

/// A two-sided confidence interval with its nominal level and a tag naming
/// the construction that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalEstimate {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: &'static str,
}

fn check_arms(n_t: u64, n_c: u64) -> Result<()> {
    if n_t < 2 || n_c < 2 {
        return Err(Error::domain(format!(
            "each arm needs at least 2 observations, got n_t={n_t}, n_c={n_c}"
        )));
    }
    Ok(())
}

/// Normalizes a study to an [`EffectRecord`].
///
/// For raw summaries, d is the mean difference over the pooled standard
/// deviation; a precomputed d is taken as is. Records with m <= 4 are still
/// produced, but with the variance estimate absent (and a logged warning),
/// since fourth moments of d do not exist there.
pub fn derive_effect(study: StudySummary) -> Result<EffectRecord> {
    let (d, n_t, n_c) = match study {
        StudySummary::Raw {
            n_t,
            n_c,
            mean_t,
            mean_c,
            sd_t,
            sd_c,
        } => {
            check_arms(n_t, n_c)?;
            if !mean_t.is_finite() || !mean_c.is_finite() {
                return Err(Error::domain("arm means must be finite"));
            }
            if !(sd_t > 0.0) || !(sd_c > 0.0) || !sd_t.is_finite() || !sd_c.is_finite() {
                return Err(Error::domain(format!(
                    "arm standard deviations must be positive and finite, got sd_t={sd_t}, sd_c={sd_c}"
                )));
            }
            let m = (n_t + n_c - 2) as f64;
            let s2_pooled = ((n_t - 1) as f64 * sd_t * sd_t + (n_c - 1) as f64 * sd_c * sd_c) / m;
            ((mean_t - mean_c) / s2_pooled.sqrt(), n_t, n_c)
        }
        StudySummary::Precomputed { d, n_t, n_c } => {
            check_arms(n_t, n_c)?;
            if !d.is_finite() {
                return Err(Error::domain(format!("d must be finite, got {d}")));
            }
            (d, n_t, n_c)
        }
    };
    let m = n_t + n_c - 2;
    let mf = m as f64;
    let n_eff = n_t as f64 * n_c as f64 / (n_t + n_c) as f64;
    let g = hedges_j(m)? * d;
    let delta2_hat = (mf - 2.0) / mf * d * d - 1.0 / n_eff;
    let var_delta2_hat = if m > 4 {
        Some(
            2.0 * (mf - 2.0) / (mf * mf) * d.powi(4) + 4.0 * (mf - 2.0) / (mf * n_eff) * d * d
                - 2.0 / (n_eff * n_eff),
        )
    } else {
        log::warn!("m = {m} <= 4: variance of the squared-effect estimate is undefined; omitted");
        None
    };
    let var_g = 1.0 / n_eff + g * g / (2.0 * mf);
    Ok(EffectRecord {
        d,
        g,
        m,
        n_eff,
        delta2_hat,
        var_delta2_hat,
        var_g,
    })
}

/// Exact sampling variance of the unbiased squared-effect estimator at a
/// known squared effect. Requires m > 4.
pub fn var_delta2_true(delta2: f64, m: u64, n_eff: f64) -> Result<f64> {
    if m <= 4 {
        return Err(Error::domain(format!(
            "variance of the squared-effect estimate requires m > 4, got m={m}"
        )));
    }
    if !(delta2 >= 0.0) || !delta2.is_finite() {
        return Err(Error::domain(format!(
            "delta2 must be nonnegative and finite, got {delta2}"
        )));
    }
    if !(n_eff > 0.0) || !n_eff.is_finite() {
        return Err(Error::domain(format!(
            "n_eff must be positive and finite, got {n_eff}"
        )));
    }
    let mf = m as f64;
    Ok(2.0 / (mf - 4.0)
        * ((mf - 1.0) / (n_eff * n_eff) + 2.0 * (mf - 1.0) * delta2 / n_eff + delta2 * delta2))
}

/// Unbiased estimator of the fourth power of the effect. Requires m > 4.
pub fn delta4_unbiased(d: f64, m: u64, n_eff: f64) -> Result<f64> {
    if m <= 4 {
        return Err(Error::domain(format!(
            "unbiased fourth-power estimate requires m > 4, got m={m}"
        )));
    }
    if !d.is_finite() {
        return Err(Error::domain(format!("d must be finite, got {d}")));
    }
    if !(n_eff > 0.0) || !n_eff.is_finite() {
        return Err(Error::domain(format!(
            "n_eff must be positive and finite, got {n_eff}"
        )));
    }
    let mf = m as f64;
    Ok(
        (mf - 2.0) * (mf - 4.0) / (mf * mf) * d.powi(4) - 6.0 / n_eff * (mf - 2.0) / mf * d * d
            + 3.0 / (n_eff * n_eff),
    )
}

/// Steiger-style profile interval for a single study's squared effect,
/// obtained by inverting the exact noncentral F distribution of n_eff * d^2.
///
/// Returns the interval for the squared effect and its elementwise square
/// root, the interval for the absolute effect. Limits where the observed
/// statistic is too small to exclude zero are set to zero, so d = 0 yields
/// the degenerate interval [0, 0].
pub fn steiger_ci(
    d: f64,
    m: u64,
    n_eff: f64,
    alpha: f64,
) -> Result<(IntervalEstimate, IntervalEstimate)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "alpha must lie strictly inside (0, 1), got {alpha}"
        )));
    }
    if m < 1 {
        return Err(Error::domain("m must be at least 1"));
    }
    if !(n_eff > 0.0) || !n_eff.is_finite() {
        return Err(Error::domain(format!(
            "n_eff must be positive and finite, got {n_eff}"
        )));
    }
    if !d.is_finite() {
        return Err(Error::domain(format!("d must be finite, got {d}")));
    }
    let stat = n_eff * d * d;
    let one_minus_p = f_cdf(stat, 1, m)?;
    let half = alpha / 2.0;
    // The noncentrality CDF is decreasing in lambda^2: the upper limit is the
    // noncentrality whose lower tail at the observed statistic is alpha/2,
    // unless even zero noncentrality leaves less than that below.
    let lambda2_upper = if one_minus_p < half {
        0.0
    } else {
        solve_ncp(stat, 1, m, half)?
    };
    let lambda2_lower = if one_minus_p < 1.0 - half {
        0.0
    } else {
        solve_ncp(stat, 1, m, 1.0 - half)?
    };
    let level = 1.0 - alpha;
    let delta2 = IntervalEstimate {
        lower: lambda2_lower / n_eff,
        upper: lambda2_upper / n_eff,
        level,
        method: "f_profile",
    };
    let abs_delta = IntervalEstimate {
        lower: delta2.lower.sqrt(),
        upper: delta2.upper.sqrt(),
        level,
        method: "f_profile",
    };
    Ok((delta2, abs_delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::{noncentral_f_cdf, sample_scaled_noncentral_t, NoncentralFParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(got: f64, want: f64, tol: f64, what: &str) {
        assert!(
            (got - want).abs() <= tol * (1.0 + want.abs()),
            "{what}: got {got:.17e}, want {want:.17e}, |err| = {:.3e}",
            (got - want).abs()
        );
    }

    fn draw_d(m: u64, n_eff: f64, delta: f64, rng: &mut ChaCha8Rng) -> f64 {
        sample_scaled_noncentral_t(m, n_eff.sqrt() * delta, 1.0 / n_eff.sqrt(), rng)
    }

    #[test]
    fn zero_difference_gives_negative_point_estimate() {
        let rec = derive_effect(StudySummary::Raw {
            n_t: 20,
            n_c: 20,
            mean_t: 1.3,
            mean_c: 1.3,
            sd_t: 0.7,
            sd_c: 0.7,
        })
        .unwrap();
        assert_eq!(rec.d, 0.0);
        assert_eq!(rec.g, 0.0);
        assert_eq!(rec.m, 38);
        assert_close(rec.n_eff, 10.0, 1e-15, "n_eff");
        assert_close(rec.delta2_hat, -0.1, 1e-15, "delta2_hat at d=0");
    }

    #[test]
    fn squared_effect_estimate_matches_hand_value() {
        // m=98, n_eff=25, d^2=0.26.
        let rec = derive_effect(StudySummary::Precomputed {
            d: 0.26f64.sqrt(),
            n_t: 50,
            n_c: 50,
        })
        .unwrap();
        assert_eq!(rec.m, 98);
        assert_close(rec.n_eff, 25.0, 1e-15, "n_eff");
        assert_close(rec.delta2_hat, 0.2146938775510204, 1e-13, "delta2_hat");
    }

    #[test]
    fn raw_summaries_pool_the_arm_variances() {
        let rec = derive_effect(StudySummary::Raw {
            n_t: 20,
            n_c: 25,
            mean_t: 1.0,
            mean_c: 0.5,
            sd_t: 1.2,
            sd_c: 0.8,
        })
        .unwrap();
        // s2_pooled = (19*1.44 + 24*0.64)/43.
        assert_close(rec.d, 0.5016359006082262, 1e-14, "d from raw arms");
        assert_close(rec.g, 0.492826650890535, 1e-13, "g from raw arms");
        assert_close(rec.n_eff, 500.0 / 45.0, 1e-15, "n_eff");
        assert_close(rec.delta2_hat, 0.14993445692883892, 1e-13, "delta2_hat");
    }

    #[test]
    fn g_over_d_equals_small_sample_factor() {
        for &(n_t, n_c) in &[(5u64, 7u64), (10, 10), (20, 35), (150, 80)] {
            let rec = derive_effect(StudySummary::Precomputed { d: 0.83, n_t, n_c }).unwrap();
            let j = crate::dists::hedges_j(rec.m).unwrap();
            assert_close(rec.g / rec.d, j, 1e-15, "g/d");
            assert!(rec.var_g > 0.0);
        }
    }

    #[test]
    fn tiny_df_records_omit_the_variance() {
        let rec = derive_effect(StudySummary::Precomputed {
            d: 1.0,
            n_t: 3,
            n_c: 3,
        })
        .unwrap();
        assert_eq!(rec.m, 4);
        assert!(rec.var_delta2_hat.is_none());
        assert_close(
            rec.delta2_hat,
            0.5 * 1.0 - 1.0 / 1.5,
            1e-15,
            "delta2_hat at m=4",
        );

        let rec = derive_effect(StudySummary::Precomputed {
            d: 1.0,
            n_t: 4,
            n_c: 3,
        })
        .unwrap();
        assert_eq!(rec.m, 5);
        assert!(rec.var_delta2_hat.is_some());
    }

    #[test]
    fn derive_effect_rejects_bad_input() {
        assert!(derive_effect(StudySummary::Precomputed {
            d: 0.5,
            n_t: 1,
            n_c: 9
        })
        .is_err());
        assert!(derive_effect(StudySummary::Precomputed {
            d: f64::NAN,
            n_t: 5,
            n_c: 5
        })
        .is_err());
        assert!(derive_effect(StudySummary::Raw {
            n_t: 5,
            n_c: 5,
            mean_t: 0.0,
            mean_c: 0.0,
            sd_t: 0.0,
            sd_c: 1.0,
        })
        .is_err());
        assert!(derive_effect(StudySummary::Raw {
            n_t: 5,
            n_c: 5,
            mean_t: f64::INFINITY,
            mean_c: 0.0,
            sd_t: 1.0,
            sd_c: 1.0,
        })
        .is_err());
    }

    #[test]
    fn true_variance_closed_forms() {
        // delta = 0 reduction: (2/96)(99/625).
        assert_close(
            var_delta2_true(0.0, 100, 25.0).unwrap(),
            0.0033,
            1e-15,
            "variance at delta=0",
        );
        let want = 2.0 / 94.0 * (97.0 / 625.0 + 2.0 * 97.0 * 0.25 / 25.0 + 0.0625);
        assert_close(
            var_delta2_true(0.25, 98, 25.0).unwrap(),
            want,
            1e-15,
            "variance at delta2=0.25",
        );
        assert!(var_delta2_true(0.25, 4, 25.0).is_err());
        assert!(var_delta2_true(-0.1, 98, 25.0).is_err());
        assert!(var_delta2_true(0.1, 98, 0.0).is_err());
    }

    #[test]
    fn fourth_power_closed_forms() {
        assert_close(
            delta4_unbiased(0.0, 38, 10.0).unwrap(),
            0.03,
            1e-15,
            "fourth power at d=0",
        );
        assert!(delta4_unbiased(1.0, 4, 10.0).is_err());
        assert!(delta4_unbiased(f64::NAN, 38, 10.0).is_err());
    }

    #[test]
    fn plug_in_variance_identity() {
        // Substituting the unbiased second- and fourth-power estimates into
        // the true-variance formula reproduces the plug-in variance estimate
        // algebraically, whatever the value of d.
        let cases = [
            (0.0f64, 10u64, 4.0f64),
            (0.3, 38, 10.0),
            (-1.7, 7, 2.5),
            (2.9, 98, 25.0),
            (0.05, 5, 1.9),
        ];
        for &(d, m, n_eff) in &cases {
            let rec = derive_effect_from(d, m, n_eff);
            let d2 = rec.0;
            let d4 = delta4_unbiased(d, m, n_eff).unwrap();
            let mf = m as f64;
            let plug = 2.0 / (mf - 4.0)
                * ((mf - 1.0) / (n_eff * n_eff) + 2.0 * (mf - 1.0) * d2 / n_eff + d4);
            assert_close(plug, rec.1, 1e-12, &format!("identity at d={d}, m={m}"));
        }
    }

    // (delta2_hat, var_delta2_hat) for arbitrary m and n_eff, bypassing the
    // integer-arms constructor.
    fn derive_effect_from(d: f64, m: u64, n_eff: f64) -> (f64, f64) {
        let mf = m as f64;
        let d2 = (mf - 2.0) / mf * d * d - 1.0 / n_eff;
        let v = 2.0 * (mf - 2.0) / (mf * mf) * d.powi(4) + 4.0 * (mf - 2.0) / (mf * n_eff) * d * d
            - 2.0 / (n_eff * n_eff);
        (d2, v)
    }

    #[test]
    fn squared_effect_estimate_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5f3c_21aa);
        let reps = 1_000_000u64;
        for &(delta, n) in &[
            (0.0f64, 40u64),
            (0.5, 40),
            (2.0, 40),
            (0.0, 250),
            (0.5, 250),
            (2.0, 250),
        ] {
            let n_t = n / 2;
            let m = n - 2;
            let n_eff = n as f64 / 4.0;
            let mut sum = 0.0;
            for _ in 0..reps {
                let d = draw_d(m, n_eff, delta, &mut rng);
                let rec = derive_effect(StudySummary::Precomputed { d, n_t, n_c: n_t }).unwrap();
                sum += rec.delta2_hat;
            }
            let mean = sum / reps as f64;
            let se = (var_delta2_true(delta * delta, m, n_eff).unwrap() / reps as f64).sqrt();
            assert!(
                (mean - delta * delta).abs() <= 3.0 * se,
                "bias at delta={delta}, n={n}: mean {mean}, want {}, 3se {}",
                delta * delta,
                3.0 * se
            );
        }
    }

    #[test]
    fn fourth_power_estimate_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9d41_07c3);
        let reps = 1_000_000u64;
        for &(delta, n) in &[
            (0.0f64, 40u64),
            (0.5, 40),
            (2.0, 40),
            (0.0, 250),
            (0.5, 250),
            (2.0, 250),
        ] {
            let m = n - 2;
            let n_eff = n as f64 / 4.0;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..reps {
                let d = draw_d(m, n_eff, delta, &mut rng);
                let est = delta4_unbiased(d, m, n_eff).unwrap();
                sum += est;
                sum_sq += est * est;
            }
            let mean = sum / reps as f64;
            let var = (sum_sq / reps as f64 - mean * mean).max(0.0);
            let se = (var / reps as f64).sqrt();
            let want = delta.powi(4);
            assert!(
                (mean - want).abs() <= 3.0 * se,
                "bias at delta={delta}, n={n}: mean {mean}, want {want}, 3se {}",
                3.0 * se
            );
        }
    }

    #[test]
    fn plug_in_variance_is_unbiased_for_true_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x77aa_3b19);
        let reps = 1_000_000u64;
        for &(delta, n) in &[(0.5f64, 40u64), (2.0, 250)] {
            let n_t = n / 2;
            let m = n - 2;
            let n_eff = n as f64 / 4.0;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..reps {
                let d = draw_d(m, n_eff, delta, &mut rng);
                let rec = derive_effect(StudySummary::Precomputed { d, n_t, n_c: n_t }).unwrap();
                let v = rec.var_delta2_hat.unwrap();
                sum += v;
                sum_sq += v * v;
            }
            let mean = sum / reps as f64;
            let var = (sum_sq / reps as f64 - mean * mean).max(0.0);
            let se = (var / reps as f64).sqrt();
            let want = var_delta2_true(delta * delta, m, n_eff).unwrap();
            assert!(
                (mean - want).abs() <= 3.0 * se,
                "bias at delta={delta}, n={n}: mean {mean}, want {want}, 3se {}",
                3.0 * se
            );
        }
    }

    #[test]
    fn profile_interval_degenerates_at_zero() {
        let (d2, abs) = steiger_ci(0.0, 38, 10.0, 0.05).unwrap();
        assert_eq!((d2.lower, d2.upper), (0.0, 0.0));
        assert_eq!((abs.lower, abs.upper), (0.0, 0.0));
        assert_eq!(d2.level, 0.95);
        assert_eq!(d2.method, "f_profile");
    }

    #[test]
    fn profile_interval_near_critical_point() {
        // n_eff d^2 = 3.8415 with huge m sits just above the 95th percentile:
        // the lower limit stays pinned at zero while the upper limit solves
        // the alpha/2 tail equation.
        let n_eff = 25.0f64;
        let m = 1_000_000u64;
        let d = (3.8415 / n_eff).sqrt();
        let (d2, abs) = steiger_ci(d, m, n_eff, 0.05).unwrap();
        assert_eq!(d2.lower, 0.0);
        assert!(d2.upper > 0.0);
        let back = noncentral_f_cdf(
            3.8415,
            &NoncentralFParams::new(1, m, n_eff * d2.upper).unwrap(),
        )
        .unwrap();
        assert_close(back, 0.025, 1e-6, "upper limit tail probability");
        assert_close(abs.upper, d2.upper.sqrt(), 1e-15, "sqrt mapping");
    }

    #[test]
    fn profile_interval_round_trips_both_limits() {
        let n_eff = 10.0;
        let m = 38u64;
        let d = 1.4;
        let stat = n_eff * d * d;
        let (d2, _) = steiger_ci(d, m, n_eff, 0.05).unwrap();
        assert!(d2.lower > 0.0 && d2.lower < d2.upper);
        let at_upper = noncentral_f_cdf(
            stat,
            &NoncentralFParams::new(1, m, n_eff * d2.upper).unwrap(),
        )
        .unwrap();
        let at_lower = noncentral_f_cdf(
            stat,
            &NoncentralFParams::new(1, m, n_eff * d2.lower).unwrap(),
        )
        .unwrap();
        assert_close(at_upper, 0.025, 1e-8, "upper tail");
        assert_close(at_lower, 0.975, 1e-8, "lower tail");
    }

    #[test]
    fn profile_limits_are_monotone_in_d() {
        let mut prev = (0.0f64, 0.0f64);
        for i in 0..=20 {
            let d = 0.1 * i as f64;
            let (d2, abs) = steiger_ci(d, 38, 10.0, 0.05).unwrap();
            assert!(
                d2.lower >= prev.0 && d2.upper >= prev.1,
                "limits shrank at d={d}"
            );
            assert_close(abs.lower, d2.lower.sqrt(), 1e-15, "sqrt lower");
            assert_close(abs.upper, d2.upper.sqrt(), 1e-15, "sqrt upper");
            assert!(d2.lower <= d2.upper);
            prev = (d2.lower, d2.upper);
        }
    }

    #[test]
    fn profile_interval_covers_squared_effect() {
        // Exact construction: empirical coverage at nominal 95% stays within
        // three binomial standard errors of 0.95 over 10^4 replications.
        let (m, n_eff, delta) = (38u64, 10.0f64, 0.5f64);
        let mut rng = ChaCha8Rng::seed_from_u64(0x1862_44e0);
        let reps = 10_000;
        let mut covered = 0u32;
        for _ in 0..reps {
            let d = draw_d(m, n_eff, delta, &mut rng);
            let (d2, _) = steiger_ci(d, m, n_eff, 0.05).unwrap();
            if d2.lower <= 0.25 && 0.25 <= d2.upper {
                covered += 1;
            }
        }
        let rate = f64::from(covered) / f64::from(reps);
        assert!(
            (0.94..=0.96).contains(&rate),
            "coverage {rate} outside [0.94, 0.96]"
        );
    }

    #[test]
    fn steiger_ci_rejects_bad_arguments() {
        assert!(steiger_ci(1.0, 38, 10.0, 0.0).is_err());
        assert!(steiger_ci(1.0, 38, 10.0, 1.0).is_err());
        assert!(steiger_ci(1.0, 38, -1.0, 0.05).is_err());
        assert!(steiger_ci(f64::NAN, 38, 10.0, 0.05).is_err());
    }
}
