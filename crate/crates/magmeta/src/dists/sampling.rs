//! Random variate construction for the simulation engine and bootstrap.
//!
//! Samplers consume only the random stream handed to them, so callers
//! control reproducibility by controlling streams.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

/// Draw `scale * T` with T ~ noncentral t_m(ncp), built as
/// (Z + ncp) / sqrt(W/m) from Z ~ N(0,1) and W ~ chi2_m.
///
/// With scale = 1/sqrt(n_eff) and ncp = sqrt(n_eff) * delta this is one
/// Cohen's d draw from a two-arm study of effective size n_eff.
pub fn sample_scaled_noncentral_t<R: Rng + ?Sized>(
    m: u64,
    ncp: f64,
    scale: f64,
    rng: &mut R,
) -> f64 {
    assert!(m >= 1, "noncentral t sampler needs m >= 1, got {m}");
    let z: f64 = rng.sample(StandardNormal);
    let w = sample_chi2(m, rng);
    scale * (z + ncp) / (w / m as f64).sqrt()
}

/// Central F_{nu1, nu2} draw; the bootstrap of sums of F consumes these.
pub fn sample_central_f<R: Rng + ?Sized>(nu1: u64, nu2: u64, rng: &mut R) -> f64 {
    assert!(nu1 >= 1 && nu2 >= 1, "F sampler needs positive df");
    let num = sample_chi2(nu1, rng) / nu1 as f64;
    let den = sample_chi2(nu2, rng) / nu2 as f64;
    num / den
}

fn sample_chi2<R: Rng + ?Sized>(k: u64, rng: &mut R) -> f64 {
    ChiSquared::new(k as f64).expect("positive df").sample(rng)
}
