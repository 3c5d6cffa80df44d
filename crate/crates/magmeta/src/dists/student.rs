//! Student t distribution function and quantile for integer df.

use super::special::{ln_gamma, normal_quantile, reg_inc_beta_xc};
use crate::error::{Error, Result};

/// Student t CDF with nu degrees of freedom.
pub fn t_cdf(t: f64, nu: u64) -> Result<f64> {
    check_df(nu)?;
    if t.is_nan() {
        return Err(Error::domain("t_cdf: t is NaN".to_string()));
    }
    let v = nu as f64;
    // P(|T| > |t|) = I_x(nu/2, 1/2) with x = nu/(nu + t^2); both x and
    // its complement are formed from the exact parts.
    let denom = v + t * t;
    let x = v / denom;
    let xc = t * t / denom;
    let two_tail = reg_inc_beta_xc(x, xc, 0.5 * v, 0.5);
    Ok(if t >= 0.0 {
        1.0 - 0.5 * two_tail
    } else {
        0.5 * two_tail
    })
}

// Upper tail P(T > t) for t >= 0, formed without subtracting from 1 so it
// keeps relative accuracy however deep the tail is.
fn t_sf(t: f64, nu: u64) -> Result<f64> {
    check_df(nu)?;
    let v = nu as f64;
    let denom = v + t * t;
    Ok(0.5 * reg_inc_beta_xc(v / denom, t * t / denom, 0.5 * v, 0.5))
}

fn t_pdf(t: f64, v: f64) -> f64 {
    let ln_norm =
        ln_gamma(0.5 * (v + 1.0)) - ln_gamma(0.5 * v) - 0.5 * (v * std::f64::consts::PI).ln();
    (ln_norm - 0.5 * (v + 1.0) * (t * t / v).ln_1p()).exp()
}

/// Student t quantile.
///
/// Closed forms for nu = 1, 2; otherwise a safeguarded Newton iteration
/// on the CDF from a normal-quantile start.
pub fn t_quantile(p: f64, nu: u64) -> Result<f64> {
    check_df(nu)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "t_quantile: p must lie in (0,1), got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        return Ok(-upper_quantile(p, nu)?);
    }
    upper_quantile(1.0 - p, nu)
}

// t > 0 with P(T > t) = tail, for 0 < tail < 0.5.
fn upper_quantile(tail: f64, nu: u64) -> Result<f64> {
    let v = nu as f64;
    if nu == 1 {
        // Cauchy: sf(t) = 1/2 - atan(t)/pi.
        return Ok((std::f64::consts::PI * (0.5 - tail)).tan());
    }
    if nu == 2 {
        // sf(t) = (1 - t/sqrt(2 + t^2))/2.
        let u = 1.0 - 2.0 * tail;
        return Ok(u * (2.0 / (1.0 - u * u)).sqrt());
    }
    // Bracket: sf is decreasing from 1/2 at t = 0. The seed is the normal
    // quantile of the same upper tail, taken by symmetry so that tails far
    // below machine epsilon survive.
    let mut lo = 0.0f64;
    let mut hi = (-normal_quantile(tail)?).max(1.0);
    let mut doublings = 0;
    while t_sf(hi, nu)? > tail {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 400 {
            return Err(Error::convergence(format!(
                "t_quantile: failed to bracket at tail={tail}, nu={nu}"
            )));
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let sf = t_sf(t, nu)?;
        let err = sf - tail;
        // Stop on the probability residual, not the step size: a small
        // Newton step can still precede a final one-ulp correction. The
        // sf carries full relative accuracy, so the bound is relative.
        if err.abs() <= 1e-13 * tail {
            break;
        }
        if err > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let pdf = t_pdf(t, v);
        let next = t + err / pdf;
        t = if pdf > 0.0 && next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * (1.0 + hi) {
            break;
        }
    }
    Ok(t)
}

fn check_df(nu: u64) -> Result<()> {
    if nu < 1 {
        return Err(Error::domain(
            "t distribution: df must be at least 1".to_string(),
        ));
    }
    Ok(())
}
