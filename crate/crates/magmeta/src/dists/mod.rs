//! Distribution substrate: special functions, central and noncentral
//! CDFs, noncentrality inversion, and the samplers the simulation engine
//! draws from.
//!
//! All degrees of freedom are integers (they arise as n - 2 or study
//! counts); real-valued df are rejected by the type signatures rather
//! than extrapolated.

pub mod noncentral;
pub mod sampling;
pub mod special;
pub mod student;

pub use noncentral::{
    chi2_cdf, chi2_sf, f_cdf, noncentral_chi2_cdf, noncentral_f_cdf, solve_chi2_ncp, solve_ncp,
};
pub use sampling::{sample_central_f, sample_scaled_noncentral_t};
pub use special::{
    erf, erfc, ln_gamma, normal_cdf, normal_pdf, normal_quantile, normal_sf, reg_inc_beta,
    reg_inc_gamma_p, reg_inc_gamma_q,
};
pub use student::{t_cdf, t_quantile};

use crate::error::{Error, Result};

/// Parameters of a noncentral F distribution F_{nu1, nu2}(lambda2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoncentralFParams {
    pub nu1: u64,
    pub nu2: u64,
    /// Noncentrality; for the squared-SMD law of one study this is
    /// n_eff * delta^2, hence the squared name.
    pub lambda2: f64,
}

impl NoncentralFParams {
    pub fn new(nu1: u64, nu2: u64, lambda2: f64) -> Result<Self> {
        let params = NoncentralFParams { nu1, nu2, lambda2 };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu1 < 1 || self.nu2 < 1 {
            return Err(Error::domain(format!(
                "noncentral F: degrees of freedom must be at least 1, got nu1={}, nu2={}",
                self.nu1, self.nu2
            )));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::domain(format!(
                "noncentral F: noncentrality must be finite and nonnegative, got {}",
                self.lambda2
            )));
        }
        Ok(())
    }

    /// E(X) = nu2 (nu1 + lambda2) / (nu1 (nu2 - 2)); requires nu2 > 2.
    pub fn mean(&self) -> Result<f64> {
        self.validate()?;
        if self.nu2 <= 2 {
            return Err(Error::domain(format!(
                "noncentral F mean requires nu2 > 2, got {}",
                self.nu2
            )));
        }
        let nu1 = self.nu1 as f64;
        let nu2 = self.nu2 as f64;
        Ok(nu2 * (nu1 + self.lambda2) / (nu1 * (nu2 - 2.0)))
    }

    /// Var(X); requires nu2 > 4.
    pub fn variance(&self) -> Result<f64> {
        self.validate()?;
        if self.nu2 <= 4 {
            return Err(Error::domain(format!(
                "noncentral F variance requires nu2 > 4, got {}",
                self.nu2
            )));
        }
        let nu1 = self.nu1 as f64;
        let nu2 = self.nu2 as f64;
        let l = self.lambda2;
        let num = (nu1 + l).powi(2) + (nu1 + 2.0 * l) * (nu2 - 2.0);
        Ok(2.0 * (nu2 / nu1).powi(2) * num / ((nu2 - 2.0).powi(2) * (nu2 - 4.0)))
    }
}

/// First two moments of |Y| for Y ~ N(mu, sigma^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldedNormalMoments {
    pub mean_f: f64,
    pub var_f: f64,
}

/// Folded normal moments:
/// mean = 2 sigma phi(mu/sigma) + mu (1 - 2 Phi(-mu/sigma)),
/// var  = mu^2 + sigma^2 - mean^2.
pub fn folded_normal_moments(mu: f64, sigma: f64) -> Result<FoldedNormalMoments> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!(
            "folded_normal_moments: sigma must be positive, got {sigma}"
        )));
    }
    if !mu.is_finite() {
        return Err(Error::domain(format!(
            "folded_normal_moments: mu must be finite, got {mu}"
        )));
    }
    let r = mu / sigma;
    let mean_f = 2.0 * sigma * normal_pdf(r) + mu * (1.0 - 2.0 * normal_cdf(-r));
    let var_f = (mu * mu + sigma * sigma - mean_f * mean_f).max(0.0);
    Ok(FoldedNormalMoments { mean_f, var_f })
}

/// Hedges's small-sample correction J(m) = Gamma(m/2) / (sqrt(m/2) Gamma((m-1)/2)),
/// evaluated in log space so m beyond ~170 cannot overflow.
pub fn hedges_j(m: u64) -> Result<f64> {
    check_hedges_df(m)?;
    let half_m = m as f64 / 2.0;
    Ok((ln_gamma(half_m) - 0.5 * half_m.ln() - ln_gamma(half_m - 0.5)).exp())
}

/// The familiar 1 - 3/(4m - 1) approximation to J(m).
pub fn hedges_j_approx(m: u64) -> Result<f64> {
    check_hedges_df(m)?;
    Ok(1.0 - 3.0 / (4.0 * m as f64 - 1.0))
}

fn check_hedges_df(m: u64) -> Result<()> {
    if m < 2 {
        return Err(Error::domain(format!(
            "hedges_j: m must be at least 2, got {m}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noncentral_f_params_validation() {
        assert!(NoncentralFParams::new(0, 10, 0.0).is_err());
        assert!(NoncentralFParams::new(1, 0, 0.0).is_err());
        assert!(NoncentralFParams::new(1, 10, -0.1).is_err());
        assert!(NoncentralFParams::new(1, 10, f64::INFINITY).is_err());
        assert!(NoncentralFParams::new(1, 10, 3.0).is_ok());
    }

    #[test]
    fn noncentral_f_moments_enforce_df() {
        let p = NoncentralFParams::new(1, 2, 0.0).unwrap();
        assert!(p.mean().is_err());
        let p = NoncentralFParams::new(1, 4, 0.0).unwrap();
        assert!(p.mean().is_ok());
        assert!(p.variance().is_err());
        let p = NoncentralFParams::new(1, 5, 0.0).unwrap();
        assert!(p.variance().is_ok());
    }

    #[test]
    fn noncentral_f_mean_matches_squared_smd_expectation() {
        // E(d^2) = (m/(m-2)) (1/n_eff + delta^2) via d^2 = X/n_eff with
        // X ~ F_{1,m}(n_eff delta^2).
        let (m, n_eff, delta) = (98u64, 25.0, 0.5f64);
        let p = NoncentralFParams::new(1, m, n_eff * delta * delta).unwrap();
        let want = m as f64 / (m as f64 - 2.0) * (1.0 / n_eff + delta * delta);
        let got = p.mean().unwrap() / n_eff;
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn folded_normal_half_normal_case() {
        let fm = folded_normal_moments(0.0, 1.0).unwrap();
        let want_mean = (2.0 / std::f64::consts::PI).sqrt();
        assert!((fm.mean_f - want_mean).abs() < 1e-15, "half-normal mean");
        assert!(
            (fm.var_f - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 1e-15,
            "half-normal variance"
        );
    }

    #[test]
    fn folded_normal_far_from_zero_degenerates_to_identity() {
        let fm = folded_normal_moments(10.0, 1.0).unwrap();
        assert!((fm.mean_f - 10.0).abs() < 1e-20);
        assert!((fm.var_f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn folded_normal_matches_quadrature() {
        // E|y| for y ~ N(1, 4) by direct integration over +/- 60 sd.
        let (mu, sigma) = (1.0f64, 2.0f64);
        let density = |y: f64| normal_pdf((y - mu) / sigma) / sigma;
        let mut sum = 0.0;
        let n = 4_000_000;
        let (a, b) = (mu - 60.0, mu + 60.0);
        let h = (b - a) / n as f64;
        // Simpson weights on a uniform grid.
        for i in 0..=n {
            let y = a + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += w * y.abs() * density(y);
        }
        let oracle_mean = sum * h / 3.0;
        let fm = folded_normal_moments(mu, sigma).unwrap();
        assert!(
            (fm.mean_f - oracle_mean).abs() < 1e-10,
            "folded mean {} vs quadrature {}",
            fm.mean_f,
            oracle_mean
        );
    }

    #[test]
    fn folded_normal_second_moment_identity() {
        for &(mu, sigma) in &[(0.0, 1.0), (0.5, 0.3), (-2.0, 1.7), (4.0, 0.1)] {
            let fm = folded_normal_moments(mu, sigma).unwrap();
            let lhs = fm.var_f + fm.mean_f * fm.mean_f;
            let rhs = mu * mu + sigma * sigma;
            assert!(
                ((lhs - rhs) / rhs).abs() < 1e-13,
                "second moment identity at mu={mu}, sigma={sigma}"
            );
        }
    }

    #[test]
    fn folded_normal_rejects_bad_sigma() {
        assert!(folded_normal_moments(0.0, 0.0).is_err());
        assert!(folded_normal_moments(0.0, -1.0).is_err());
        assert!(folded_normal_moments(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn hedges_j_exact_small_m() {
        // J(10) = Gamma(5)/(sqrt(5) Gamma(4.5)); Gamma(4.5) = 105 sqrt(pi)/16.
        let gamma_4_5 = 105.0 * std::f64::consts::PI.sqrt() / 16.0;
        let want = 24.0 / (5.0f64.sqrt() * gamma_4_5);
        let got = hedges_j(10).unwrap();
        assert!(
            ((got - want) / want).abs() < 1e-13,
            "J(10): got {got}, want {want}"
        );
    }

    #[test]
    fn hedges_j_approximation_quality() {
        assert!((hedges_j_approx(10).unwrap() - (1.0 - 3.0 / 39.0)).abs() < 1e-15);
        for m in (20..2000u64).step_by(37) {
            let exact = hedges_j(m).unwrap();
            let approx = hedges_j_approx(m).unwrap();
            assert!(
                (exact - approx).abs() < 1e-3,
                "J approx far from exact at m={m}: {exact} vs {approx}"
            );
        }
    }

    #[test]
    fn hedges_j_tends_to_one() {
        let j = hedges_j(1_000_000).unwrap();
        assert!(j > 0.99999 && j < 1.0, "J(1e6) = {j}");
    }

    #[test]
    fn hedges_j_rejects_tiny_m() {
        assert!(hedges_j(1).is_err());
        assert!(hedges_j(0).is_err());
        assert!(hedges_j_approx(1).is_err());
        assert!(hedges_j(2).is_ok());
    }
}
